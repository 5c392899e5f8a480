//! CSV tables, the run manifest and the output directory.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use quadmpc::model::{INPUT_NAMES, STATE_NAMES};
use quadmpc::sim::TrajectoryLog;
use serde::Serialize;
use sha2::{Digest, Sha256};

/// Version of the trajectory column layout.
pub const CSV_SCHEMA_VERSION: u32 = 1;

/// 17 significant digits, enough for a lossless round trip.
pub fn num(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn opt_num(v: Option<f64>) -> String {
    v.map(num).unwrap_or_default()
}

pub struct OutDir {
    root: PathBuf,
    files: Vec<String>,
}

impl OutDir {
    pub fn create(root: &Path) -> std::io::Result<Self> {
        fs::create_dir_all(root)?;
        Ok(Self { root: root.to_path_buf(), files: Vec::new() })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn write(&mut self, name: &str, content: &str) -> std::io::Result<()> {
        fs::write(self.root.join(name), content)?;
        self.files.push(name.to_string());
        Ok(())
    }

    pub fn write_table(&mut self, name: &str, header: &[String], rows: &[Vec<String>]) -> std::io::Result<()> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(header)?;
        for r in rows {
            w.write_record(r)?;
        }
        let bytes = w.into_inner().map_err(|e| e.into_error())?;
        self.write(name, &String::from_utf8(bytes).expect("csv output is UTF-8"))
    }

    pub fn files(&self) -> &[String] {
        &self.files
    }
}

pub fn strings<const N: usize>(xs: [&str; N]) -> Vec<String> {
    xs.iter().map(|s| s.to_string()).collect()
}

fn trajectory_header(with_observer: bool) -> Vec<String> {
    let mut h = strings(["k", "t"]);
    h.extend(STATE_NAMES.iter().map(|s| s.to_string()));
    h.extend(INPUT_NAMES.iter().map(|s| s.to_string()));
    h.extend(strings(["status", "solve_ms"]));
    if with_observer {
        h.extend((1..=13).map(|i| format!("xh{i}")));
        h.extend((1..=12).map(|i| format!("xr{i}")));
        h.extend((1..=4).map(|i| format!("ur{i}")));
    }
    h
}

/// Trajectory in the versioned column layout; the observer and target
/// columns appear for output-feedback runs only.
pub fn write_trajectory(out: &mut OutDir, name: &str, log: &TrajectoryLog) -> std::io::Result<()> {
    let with_observer = log.records.first().is_some_and(|r| r.xhat.is_some());
    let rows: Vec<Vec<String>> = log
        .records
        .iter()
        .map(|r| {
            let mut row = vec![r.k.to_string(), num(r.t)];
            row.extend(r.x.iter().map(|v| num(*v)));
            row.extend(r.u.iter().map(|v| num(*v)));
            row.push(r.status.as_str().to_string());
            row.push(num(r.solve_time * 1e3));
            if let Some(xh) = r.xhat.as_ref().filter(|_| with_observer) {
                row.extend(xh.iter().map(|v| num(*v)));
                row.extend(r.x_ref.iter().map(|v| num(*v)));
                row.extend(r.u_ref.iter().map(|v| num(*v)));
            }
            row
        })
        .collect();
    out.write_table(name, &trajectory_header(with_observer), &rows)
}

#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub scenario: Option<String>,
    pub output_dir: String,
    pub files: Vec<String>,
    /// SHA-256 of the scenario file bytes and any command-line overrides.
    pub config_hash: String,
    pub csv_schema: u32,
    pub tool_version: String,
    pub started_unix_s: f64,
    pub wall_clock_s: f64,
    pub summary: serde_json::Value,
}

pub fn config_hash(scenario_bytes: &[u8], overrides: &str) -> String {
    let mut h = Sha256::new();
    h.update(scenario_bytes);
    h.update([0u8]);
    h.update(overrides.as_bytes());
    format!("{:x}", h.finalize())
}

pub fn unix_now() -> f64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs_f64()).unwrap_or(0.0)
}
