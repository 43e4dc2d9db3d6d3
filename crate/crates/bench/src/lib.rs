//! Criterion benchmarks for the pipe and network solvers live in `benches/`.
