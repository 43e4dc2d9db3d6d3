//! Scenario and results tables (CSV with a header row).
//!
//! Scenario columns: `time` (s), `h_up` (bar) or `q_up` (l/min), `T_up`,
//! `T_amb` (degC), then optional `u_v:<link>` and `u_d:<node>` signals in
//! `[0, 1]`. Results columns: `time`, `q:<link>` (l/min), `h:<node>` (bar,
//! unknown-head nodes), `T:<node>` and `Ts:<link>@<z>` (degC), `iterations`,
//! `mass_residual` (m^3/s), `energy_residual` (Pa).

use std::path::Path;

use crate::error::{Error, Result};
use crate::network::topology::{NetworkModel, SourceMode};
use crate::network::{Scenario, StepInputs, StepRecord};

use super::{atomic_write, bar_to_pa, lpm_to_m3s, m3s_to_lpm, pa_to_bar};

/// Relative tolerance on the spacing of the time column.
const GRID_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SourceColumn {
    /// `h_up`, bar
    Head,
    /// `q_up`, l/min
    Flow,
}

impl SourceColumn {
    fn name(self) -> &'static str {
        match self {
            SourceColumn::Head => "h_up",
            SourceColumn::Flow => "q_up",
        }
    }
}

/// A scenario as stored, in file units.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioFile {
    pub source: SourceColumn,
    pub time: Vec<f64>,
    pub source_values: Vec<f64>,
    pub inlet_temperature: Vec<f64>,
    pub ambient_temperature: Vec<f64>,
    /// `(link id, signal)`
    pub valves: Vec<(String, Vec<f64>)>,
    /// `(node id, signal)`
    pub demands: Vec<(String, Vec<f64>)>,
}

fn parse_err(file: &str, line: Option<usize>, message: impl Into<String>) -> Error {
    Error::Parse {
        file: file.to_string(),
        line,
        message: message.into(),
    }
}

fn csv_reader(text: &str) -> csv::Reader<&[u8]> {
    csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes())
}

/// Header plus numeric rows; line numbers in errors count the header as line 1.
fn read_numeric(text: &str, file: &str) -> Result<(Vec<String>, Vec<Vec<f64>>)> {
    let mut rdr = csv_reader(text);
    let header: Vec<String> = rdr
        .headers()
        .map_err(|e| parse_err(file, Some(1), e.to_string()))?
        .iter()
        .map(str::to_string)
        .collect();
    for (i, h) in header.iter().enumerate() {
        if h.is_empty() {
            return Err(parse_err(file, Some(1), format!("column {} has an empty name", i + 1)));
        }
        if header[..i].contains(h) {
            return Err(parse_err(file, Some(1), format!("duplicate column '{h}'")));
        }
    }
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| parse_err(file, e.position().map(|p| p.line() as usize), e.to_string()))?;
        let line = rec.position().map(|p| p.line() as usize);
        let row = rec
            .iter()
            .zip(&header)
            .map(|(field, name)| {
                field
                    .parse::<f64>()
                    .map_err(|_| parse_err(file, line, format!("column '{name}': '{field}' is not a number")))
            })
            .collect::<Result<Vec<f64>>>()?;
        rows.push(row);
    }
    Ok((header, rows))
}

fn write_csv(header: &[String], rows: &[Vec<f64>]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let io = |e: csv::Error| Error::Io(std::io::Error::other(e));
    w.write_record(header).map_err(io)?;
    for row in rows {
        // `Display` of f64 is the shortest string that parses back to the same value
        w.write_record(row.iter().map(|v| v.to_string())).map_err(io)?;
    }
    w.into_inner().map_err(|e| Error::Io(std::io::Error::other(e.to_string())))
}

pub fn parse_scenario(text: &str, file: &str) -> Result<ScenarioFile> {
    let (header, rows) = read_numeric(text, file)?;
    let col = |name: &str| header.iter().position(|h| h == name);
    let require = |name: &str| col(name).ok_or_else(|| parse_err(file, Some(1), format!("missing column '{name}'")));
    let time_c = require("time")?;
    let source = match (col("h_up"), col("q_up")) {
        (Some(_), Some(_)) => return Err(parse_err(file, Some(1), "give either h_up or q_up, not both")),
        (Some(c), None) => (SourceColumn::Head, c),
        (None, Some(c)) => (SourceColumn::Flow, c),
        (None, None) => return Err(parse_err(file, Some(1), "missing source column 'h_up' or 'q_up'")),
    };
    let t_up = require("T_up")?;
    let t_amb = require("T_amb")?;

    let mut valves = Vec::new();
    let mut demands = Vec::new();
    for (c, name) in header.iter().enumerate() {
        if [time_c, source.1, t_up, t_amb].contains(&c) {
            continue;
        }
        if let Some(id) = name.strip_prefix("u_v:") {
            valves.push((id.to_string(), c));
        } else if let Some(id) = name.strip_prefix("u_d:") {
            demands.push((id.to_string(), c));
        } else {
            return Err(parse_err(file, Some(1), format!("unknown column '{name}'")));
        }
    }

    let line = |k: usize| Some(k + 2);
    let column = |c: usize| rows.iter().map(|r| r[c]).collect::<Vec<f64>>();
    let time = column(time_c);
    for (k, r) in rows.iter().enumerate() {
        if let Some(c) = r.iter().position(|v| !v.is_finite()) {
            return Err(parse_err(file, line(k), format!("column '{}' is not finite", header[c])));
        }
        for &(ref id, c) in valves.iter().chain(&demands) {
            if !(0.0..=1.0).contains(&r[c]) {
                return Err(parse_err(file, line(k), format!("signal '{}' for '{id}' = {} outside [0, 1]", header[c], r[c])));
            }
        }
    }
    if time.len() >= 2 {
        let dt = time[1] - time[0];
        for k in 1..time.len() {
            let step = time[k] - time[k - 1];
            if !(step > 0.0) {
                return Err(parse_err(file, line(k), "time must be strictly increasing"));
            }
            if (step - dt).abs() > GRID_TOL * dt {
                return Err(parse_err(file, line(k), format!("time grid is not uniform: step {step} vs {dt}")));
            }
        }
    }

    Ok(ScenarioFile {
        source: source.0,
        source_values: column(source.1),
        inlet_temperature: column(t_up),
        ambient_temperature: column(t_amb),
        valves: valves.into_iter().map(|(id, c)| (id, column(c))).collect(),
        demands: demands.into_iter().map(|(id, c)| (id, column(c))).collect(),
        time,
    })
}

pub fn read_scenario(path: &Path) -> Result<ScenarioFile> {
    parse_scenario(&std::fs::read_to_string(path)?, &path.display().to_string())
}

impl ScenarioFile {
    pub fn len(&self) -> usize {
        self.time.len()
    }

    pub fn is_empty(&self) -> bool {
        self.time.is_empty()
    }

    /// Spacing of the time grid, if there are at least two rows.
    pub fn dt(&self) -> Option<f64> {
        (self.time.len() >= 2).then(|| (self.time[self.time.len() - 1] - self.time[0]) / (self.time.len() - 1) as f64)
    }

    pub fn to_csv(&self) -> Result<Vec<u8>> {
        let mut header: Vec<String> = ["time", self.source.name(), "T_up", "T_amb"].map(String::from).to_vec();
        header.extend(self.valves.iter().map(|(id, _)| format!("u_v:{id}")));
        header.extend(self.demands.iter().map(|(id, _)| format!("u_d:{id}")));
        let rows: Vec<Vec<f64>> = (0..self.len())
            .map(|k| {
                let mut r = vec![self.time[k], self.source_values[k], self.inlet_temperature[k], self.ambient_temperature[k]];
                r.extend(self.valves.iter().map(|(_, s)| s[k]));
                r.extend(self.demands.iter().map(|(_, s)| s[k]));
                r
            })
            .collect();
        write_csv(&header, &rows)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        atomic_write(path, &self.to_csv()?)
    }

    /// Binds the columns to a network, converting to SI units. Signals without
    /// a column keep the value from the network description. `dt` is needed
    /// only for single-row scenarios; otherwise it must match the grid.
    pub fn to_scenario(&self, model: &NetworkModel, dt: Option<f64>) -> Result<Scenario> {
        let d = &model.description;
        let expected = match d.source_mode {
            SourceMode::Head => SourceColumn::Head,
            SourceMode::Flow => SourceColumn::Flow,
        };
        if self.source != expected {
            return Err(Error::Config(format!(
                "scenario gives '{}' but the network source is fed by {}",
                self.source.name(),
                expected.name()
            )));
        }
        let dt = match (self.dt(), dt) {
            (Some(grid), Some(given)) if (grid - given).abs() > GRID_TOL * grid => {
                return Err(Error::Config(format!("time step {given} does not match the scenario grid {grid}")));
            }
            (Some(grid), _) => grid,
            (None, Some(given)) => given,
            (None, None) if self.is_empty() => 1.0,
            (None, None) => return Err(Error::Config("a single-row scenario needs an explicit time step".into())),
        };

        let mut valve_cols = Vec::new();
        for (id, s) in &self.valves {
            let i = model
                .link_index(id)
                .ok_or_else(|| Error::Config(format!("scenario column 'u_v:{id}': no such link")))?;
            if d.links[i].hydraulic.valve.is_none() {
                return Err(Error::Config(format!("scenario column 'u_v:{id}': link has no valve")));
            }
            valve_cols.push((i, s));
        }
        let mut demand_cols = Vec::new();
        for (id, s) in &self.demands {
            let k = d
                .demands
                .iter()
                .position(|p| &p.node == id)
                .ok_or_else(|| Error::Config(format!("scenario column 'u_d:{id}': no demand at that node")))?;
            demand_cols.push((k, s));
        }

        let base_valves: Vec<f64> = d.links.iter().map(|l| l.hydraulic.valve.map_or(1.0, |v| v.opening)).collect();
        let base_demands: Vec<f64> = d.demands.iter().map(|p| p.opening).collect();
        let steps = (0..self.len())
            .map(|k| {
                let mut valve_openings = base_valves.clone();
                for &(i, s) in &valve_cols {
                    valve_openings[i] = s[k];
                }
                let mut demand_openings = base_demands.clone();
                for &(j, s) in &demand_cols {
                    demand_openings[j] = s[k];
                }
                StepInputs {
                    source: match self.source {
                        SourceColumn::Head => bar_to_pa(self.source_values[k]),
                        SourceColumn::Flow => lpm_to_m3s(self.source_values[k]),
                    },
                    inlet_temperature: self.inlet_temperature[k],
                    ambient_temperature: self.ambient_temperature[k],
                    valve_openings,
                    demand_openings,
                }
            })
            .collect();
        Ok(Scenario {
            start_time: self.time.first().copied().unwrap_or(0.0),
            dt,
            steps,
        })
    }
}

/// A results file: named columns, `time` first.
#[derive(Debug, Clone, PartialEq)]
pub struct ResultsTable {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl ResultsTable {
    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let c = self.columns.iter().position(|h| h == name)?;
        Some(self.rows.iter().map(|r| r[c]).collect())
    }

    pub fn to_csv(&self) -> Result<Vec<u8>> {
        write_csv(&self.columns, &self.rows)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        atomic_write(path, &self.to_csv()?)
    }
}

pub fn parse_results(text: &str, file: &str) -> Result<ResultsTable> {
    let (columns, rows) = read_numeric(text, file)?;
    if columns.first().map(String::as_str) != Some("time") {
        return Err(parse_err(file, Some(1), "first column must be 'time'"));
    }
    Ok(ResultsTable { columns, rows })
}

pub fn read_results(path: &Path) -> Result<ResultsTable> {
    parse_results(&std::fs::read_to_string(path)?, &path.display().to_string())
}

/// Names of the sensor outputs of link `i`, outlet last.
pub fn sensor_columns(model: &NetworkModel, i: usize) -> Vec<String> {
    let l = &model.description.links[i];
    let g = &l.hydraulic.geometry.grid;
    let n = crate::fom::SensorLayout::new(l.thermal.sensors.clone())
        .indices(g)
        .map(|v| v.len())
        .unwrap_or(l.thermal.sensors.len() + 1);
    (0..n)
        .map(|k| match l.thermal.sensors.get(k) {
            Some(z) => format!("Ts:{}@{z}", l.id),
            None => format!("Ts:{}@outlet", l.id),
        })
        .collect()
}

pub fn results_table(model: &NetworkModel, records: &[StepRecord]) -> ResultsTable {
    let d = &model.description;
    let mut columns = vec!["time".to_string()];
    columns.extend(d.links.iter().map(|l| format!("q:{}", l.id)));
    columns.extend(model.unknown.iter().map(|&j| format!("h:{}", d.nodes[j].id)));
    columns.extend(d.nodes.iter().map(|n| format!("T:{}", n.id)));
    for i in 0..d.links.len() {
        columns.extend(sensor_columns(model, i));
    }
    columns.extend(["iterations", "mass_residual", "energy_residual"].map(String::from));

    let rows = records
        .iter()
        .map(|r| {
            let mut row = vec![r.time];
            row.extend(r.flows.iter().map(|&q| m3s_to_lpm(q)));
            row.extend(model.unknown.iter().map(|&j| pa_to_bar(r.heads[j])));
            row.extend(&r.node_temperatures);
            for s in &r.sensor_temperatures {
                row.extend(s);
            }
            row.extend([r.iterations as f64, r.mass_residual, r.energy_residual]);
            row
        })
        .collect();
    ResultsTable { columns, rows }
}

#[cfg(test)]
mod tests {
    use super::*;

    const SCENARIO: &str = "time,h_up,T_up,T_amb,u_v:a\n0,1.5,60,20,0\n1,1.5,60,20,0.5\n2,1.5,61.25,20,1\n";

    #[test]
    fn scenario_round_trip() {
        let s = parse_scenario(SCENARIO, "s.csv").unwrap();
        assert_eq!(s.dt(), Some(1.0));
        let text = String::from_utf8(s.to_csv().unwrap()).unwrap();
        assert_eq!(parse_scenario(&text, "s.csv").unwrap(), s);
    }

    #[test]
    fn scenario_diagnostics_carry_line_numbers() {
        let bad = SCENARIO.replace("0.5", "1.5");
        assert!(matches!(parse_scenario(&bad, "s.csv"), Err(Error::Parse { line: Some(3), .. })));
        let bad = SCENARIO.replace("2,1.5", "1,1.5");
        assert!(matches!(parse_scenario(&bad, "s.csv"), Err(Error::Parse { line: Some(4), .. })));
        let bad = SCENARIO.replace("2,1.5", "2.5,1.5");
        assert!(matches!(parse_scenario(&bad, "s.csv"), Err(Error::Parse { line: Some(4), .. })));
        let bad = SCENARIO.replace("61.25", "warm");
        let err = parse_scenario(&bad, "s.csv").unwrap_err().to_string();
        assert!(err.contains("s.csv line 4") && err.contains("T_up"), "{err}");
        let bad = SCENARIO.replace("u_v:a", "colour");
        assert!(parse_scenario(&bad, "s.csv").unwrap_err().to_string().contains("unknown column"));
    }

    #[test]
    fn results_round_trip_preserves_bits() {
        let t = ResultsTable {
            columns: vec!["time".into(), "x".into()],
            rows: vec![vec![0.1, 1.0 / 3.0], vec![0.2, -2.5e-300]],
        };
        let text = String::from_utf8(t.to_csv().unwrap()).unwrap();
        assert_eq!(parse_results(&text, "r").unwrap(), t);
    }
}
