//! File formats: network description, scenario and result tables, metrics.

mod metrics;
mod network_file;
mod tables;

use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::error::{Error, Result};
use crate::fom::BilinearFom;

pub use metrics::{compare_results, compute_metrics, ErrorMetrics, Normalization, SignalMetrics};
pub use network_file::{parse_network, read_network, serialize_network};
pub use tables::{
    parse_results, parse_scenario, read_results, read_scenario, results_table, sensor_columns, ResultsTable, ScenarioFile,
    SourceColumn,
};

const LPM_PER_M3S: f64 = 60_000.0;
const PA_PER_BAR: f64 = 1e5;

pub fn lpm_to_m3s(q: f64) -> f64 {
    q / LPM_PER_M3S
}

pub fn m3s_to_lpm(q: f64) -> f64 {
    q * LPM_PER_M3S
}

pub fn bar_to_pa(h: f64) -> f64 {
    h * PA_PER_BAR
}

pub fn pa_to_bar(h: f64) -> f64 {
    h / PA_PER_BAR
}

/// Writes via a temporary sibling file and a rename, so readers never see a
/// partially written file.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let tmp = dir.join(format!(".{name}.{}.tmp", std::process::id()));
    std::fs::write(&tmp, bytes)?;
    if let Err(e) = std::fs::rename(&tmp, path) {
        let _ = std::fs::remove_file(&tmp);
        return Err(e.into());
    }
    Ok(())
}

/// `results.csv` -> `results.csv.meta.json`
pub fn meta_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".meta.json");
    PathBuf::from(s)
}

/// Writes run metadata (timings, settings) next to an output file.
pub fn write_meta<T: Serialize>(path: &Path, meta: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(meta).map_err(|e| Error::Config(format!("cannot serialize metadata: {e}")))?;
    atomic_write(&meta_path(path), text.as_bytes())
}

#[derive(Serialize)]
struct FomDump<'a> {
    points: usize,
    dz: f64,
    sensor_indices: &'a [usize],
    /// `(row, col, value)`
    a: Vec<(usize, usize, f64)>,
    q: Vec<Vec<(usize, usize, f64)>>,
    b: Vec<(usize, usize, f64)>,
    c: Vec<(usize, usize, f64)>,
}

/// Sparse triplets of every system matrix as JSON.
pub fn fom_to_json(fom: &BilinearFom) -> Result<String> {
    let dump = FomDump {
        points: fom.grid.points,
        dz: fom.grid.dz,
        sensor_indices: &fom.sensor_indices,
        a: fom.a.triplets().collect(),
        q: fom.q.iter().map(|m| m.triplets().collect()).collect(),
        b: fom.b.triplets().collect(),
        c: fom.c.triplets().collect(),
    };
    serde_json::to_string(&dump).map_err(|e| Error::Config(format!("cannot serialize model: {e}")))
}
