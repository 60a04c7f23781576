//! Output directory handling, CSV/JSON writers and the exit-record tables.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use fwmeta::exit::ExitRecord;
use fwmeta::grid::GridSpec;
use fwmeta::path::TrajectoryPath;
use fwmeta::Field;
use serde::Serialize;

use crate::config::sha256_hex;
use crate::CliError;

/// Collects the files of one run; data files are written immediately, the
/// manifest lists them with their hashes.
pub struct OutputDir {
    pub root: PathBuf,
    csv: bool,
    json: bool,
    written: Vec<(String, String)>,
}

impl OutputDir {
    pub fn create(root: &Path, csv: bool, json: bool) -> Result<Self, CliError> {
        fs::create_dir_all(root).map_err(|e| CliError::Io(format!("{}: {e}", root.display())))?;
        Ok(Self {
            root: root.to_path_buf(),
            csv,
            json,
            written: Vec::new(),
        })
    }

    fn write(&mut self, name: &str, bytes: &[u8]) -> Result<(), CliError> {
        let path = self.root.join(name);
        fs::write(&path, bytes).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        self.written.push((name.to_string(), sha256_hex(bytes)));
        Ok(())
    }

    pub fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<(), CliError> {
        if !self.json {
            return Ok(());
        }
        let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::Io(e.to_string()))?;
        text.push('\n');
        self.write(name, text.as_bytes())
    }

    pub fn csv(&mut self, name: &str, text: &str) -> Result<(), CliError> {
        if !self.csv {
            return Ok(());
        }
        self.write(name, text.as_bytes())
    }

    pub fn files(&self) -> &[(String, String)] {
        &self.written
    }

    /// Writes `manifest.json`; it is the only file holding timestamps.
    pub fn manifest<T: Serialize>(&self, value: &T) -> Result<(), CliError> {
        let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::Io(e.to_string()))?;
        text.push('\n');
        let path = self.root.join("manifest.json");
        fs::write(&path, text).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
    }
}

/// Leading comment line carrying the config hash.
pub fn csv_header(hash: &str, columns: &[&str]) -> String {
    format!("# config_hash={hash}\n{}\n", columns.join(","))
}

pub fn path_csv(hash: &str, path: &TrajectoryPath) -> String {
    let grid = path.first().grid();
    let mut cols = vec!["t".to_string()];
    for c in 0..grid.components {
        for j in 0..grid.points {
            cols.push(format!("u{c}_{j}"));
        }
    }
    let refs: Vec<&str> = cols.iter().map(String::as_str).collect();
    let mut out = csv_header(hash, &refs);
    for (m, s) in path.states.iter().enumerate() {
        let _ = write!(out, "{}", path.time(m));
        for v in s.values() {
            let _ = write!(out, ",{v}");
        }
        out.push('\n');
    }
    out
}

pub fn fields_csv(hash: &str, labels: &[String], fields: &[&Field]) -> String {
    let grid = fields.first().map(|f| *f.grid());
    let mut cols = vec!["label".to_string()];
    if let Some(g) = grid {
        for c in 0..g.components {
            for j in 0..g.points {
                cols.push(format!("u{c}_{j}"));
            }
        }
    }
    let refs: Vec<&str> = cols.iter().map(String::as_str).collect();
    let mut out = csv_header(hash, &refs);
    for (l, f) in labels.iter().zip(fields) {
        out.push_str(l);
        for v in f.values() {
            let _ = write!(out, ",{v}");
        }
        out.push('\n');
    }
    out
}

pub const RECORD_COLUMNS: [&str; 12] = [
    "epsilon",
    "seed",
    "trajectory",
    "tau",
    "steps",
    "nearest_saddle",
    "saddle_distance",
    "blowup",
    "censored",
    "escalated",
    "confirmed_step",
    "shape_row",
];

/// Records table plus the exit-shape and pre-crossing sidecars, rows keyed by
/// `shape_row`.
pub fn records_csv(hash: &str, records: &[ExitRecord]) -> (String, String, String) {
    let mut table = csv_header(hash, &RECORD_COLUMNS);
    let grid = records.first().map(|r| *r.exit_shape.grid());
    let mut cols = vec!["shape_row".to_string()];
    if let Some(g) = grid {
        for c in 0..g.components {
            for j in 0..g.points {
                cols.push(format!("u{c}_{j}"));
            }
        }
    }
    let refs: Vec<&str> = cols.iter().map(String::as_str).collect();
    let mut shapes = csv_header(hash, &refs);
    let mut confirmed = csv_header(hash, &refs);
    for (i, r) in records.iter().enumerate() {
        let _ = writeln!(
            table,
            "{},{},{},{},{},{},{},{},{},{},{},{}",
            r.epsilon,
            r.seed,
            r.trajectory,
            r.tau,
            r.steps,
            r.nearest_saddle,
            r.saddle_distance,
            r.blowup,
            r.censored,
            r.escalated,
            r.confirmed_step,
            i
        );
        for (text, field) in [(&mut shapes, &r.exit_shape), (&mut confirmed, &r.confirmed_state)] {
            let _ = write!(text, "{i}");
            for v in field.values() {
                let _ = write!(text, ",{v}");
            }
            text.push('\n');
        }
    }
    (table, shapes, confirmed)
}

fn data_lines(text: &str) -> impl Iterator<Item = &str> {
    text.lines().filter(|l| !l.starts_with('#')).skip(1).filter(|l| !l.is_empty())
}

/// Hash recorded in a CSV's comment line.
pub fn csv_hash(text: &str) -> Option<String> {
    text.lines()
        .next()
        .and_then(|l| l.strip_prefix("# config_hash="))
        .map(str::to_string)
}

fn bad(what: &str) -> CliError {
    CliError::Io(format!("malformed exit table: {what}"))
}

fn parse_rows(text: &str, grid: GridSpec) -> Result<Vec<Field>, CliError> {
    data_lines(text)
        .map(|line| {
            let values: Vec<f64> = line
                .split(',')
                .skip(1)
                .map(|v| v.parse::<f64>().map_err(|_| bad("shape value")))
                .collect::<Result<_, _>>()?;
            Field::from_values(grid, values).map_err(|_| bad("shape length"))
        })
        .collect()
}

pub fn read_records(table: &str, shapes: &str, confirmed: &str, grid: GridSpec) -> Result<Vec<ExitRecord>, CliError> {
    let shapes = parse_rows(shapes, grid)?;
    let confirmed = parse_rows(confirmed, grid)?;
    data_lines(table)
        .map(|line| {
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != RECORD_COLUMNS.len() {
                return Err(bad("column count"));
            }
            let num = |i: usize| f[i].parse::<f64>().map_err(|_| bad(RECORD_COLUMNS[i]));
            let int = |i: usize| f[i].parse::<u64>().map_err(|_| bad(RECORD_COLUMNS[i]));
            let flag = |i: usize| f[i].parse::<bool>().map_err(|_| bad(RECORD_COLUMNS[i]));
            let row = int(11)? as usize;
            Ok(ExitRecord {
                epsilon: num(0)?,
                seed: int(1)?,
                trajectory: int(2)?,
                tau: num(3)?,
                steps: int(4)?,
                nearest_saddle: f[5].to_string(),
                saddle_distance: num(6)?,
                blowup: flag(7)?,
                censored: flag(8)?,
                escalated: flag(9)?,
                confirmed_step: int(10)?,
                exit_shape: shapes.get(row).cloned().ok_or_else(|| bad("missing shape row"))?,
                confirmed_state: confirmed.get(row).cloned().ok_or_else(|| bad("missing state row"))?,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn records_round_trip() {
        let grid = GridSpec::new(1.0, 3, 1).unwrap();
        let rec = ExitRecord {
            epsilon: 0.1,
            seed: 42,
            trajectory: 3,
            tau: 1.0 / 3.0,
            steps: 333,
            exit_shape: Field::from_values(grid, vec![0.1, -1e-17, 2.5e10]).unwrap(),
            nearest_saddle: "eq0".into(),
            saddle_distance: 0.7,
            blowup: false,
            censored: true,
            escalated: false,
            confirmed_step: 300,
            confirmed_state: Field::from_values(grid, vec![1.0, 2.0, std::f64::consts::PI]).unwrap(),
        };
        let recs = vec![rec.clone(), ExitRecord { trajectory: 4, ..rec }];
        let (t, s, c) = records_csv("abc", &recs);
        assert_eq!(csv_hash(&t).as_deref(), Some("abc"));
        assert_eq!(read_records(&t, &s, &c, grid).unwrap(), recs);
    }
}
