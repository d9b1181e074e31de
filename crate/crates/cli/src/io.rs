use std::path::{Path, PathBuf};
use std::time::Instant;

use nalgebra::DMatrix;
use serde::Serialize;

use crate::error::{input, CliError, CliResult};

/// Shortest representation that parses back to the same `f64`.
pub fn fmt_float(v: f64) -> String {
    let a = v.abs();
    if v != 0.0 && v.is_finite() && !(1e-5..1e16).contains(&a) {
        format!("{v:e}")
    } else {
        format!("{v}")
    }
}

/// Reads samples as rows and channels as columns into a `d × N` matrix.
pub fn read_matrix(path: &Path, has_header: bool) -> CliResult<DMatrix<f64>> {
    let shown = path.display();
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(has_header)
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_path(path)
        .map_err(input(&shown))?;
    let mut columns: Vec<Vec<f64>> = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| match e.position() {
            Some(p) => CliError::Input(format!("{shown}: line {}: {e}", p.line())),
            None => CliError::Input(format!("{shown}: {e}")),
        })?;
        let line = record.position().map_or(0, |p| p.line());
        if columns.is_empty() {
            columns = vec![Vec::new(); record.len()];
        }
        for (c, field) in record.iter().enumerate() {
            let v: f64 = field.parse().map_err(|_| {
                CliError::Input(format!(
                    "{shown}: line {line}, column {}: cannot parse {field:?} as a number",
                    c + 1
                ))
            })?;
            if !v.is_finite() {
                return Err(CliError::Input(format!(
                    "{shown}: line {line}, column {}: non-finite value",
                    c + 1
                )));
            }
            columns[c].push(v);
        }
    }
    let n = columns.first().map_or(0, Vec::len);
    if n == 0 {
        return Err(CliError::Input(format!("{shown}: no data rows")));
    }
    Ok(DMatrix::from_fn(columns.len(), n, |i, t| columns[i][t]))
}

/// Collects output paths and writes the run manifest last.
pub struct Outputs {
    dir: PathBuf,
    written: Vec<String>,
    started: Instant,
}

impl Outputs {
    pub fn create(dir: &Path) -> CliResult<Self> {
        std::fs::create_dir_all(dir).map_err(input(format!("cannot create {}", dir.display())))?;
        Ok(Self {
            dir: dir.to_path_buf(),
            written: Vec::new(),
            started: Instant::now(),
        })
    }

    fn target(&mut self, name: &str) -> PathBuf {
        self.written.push(name.to_string());
        self.dir.join(name)
    }

    pub fn json<T: Serialize>(&mut self, name: &str, value: &T) -> CliResult<()> {
        let path = self.target(name);
        let mut text = serde_json::to_string_pretty(value).map_err(input(name))?;
        text.push('\n');
        std::fs::write(&path, text).map_err(input(path.display()))
    }

    pub fn csv<I>(&mut self, name: &str, header: &[&str], rows: I) -> CliResult<()>
    where
        I: IntoIterator<Item = Vec<String>>,
    {
        let path = self.target(name);
        let mut w = csv::Writer::from_path(&path).map_err(input(path.display()))?;
        w.write_record(header).map_err(input(path.display()))?;
        for row in rows {
            w.write_record(&row).map_err(input(path.display()))?;
        }
        w.flush().map_err(input(path.display()))
    }

    pub fn finish(
        self,
        command: &str,
        config: serde_json::Value,
        seeds: Vec<u64>,
        threads: Option<usize>,
    ) -> CliResult<()> {
        let manifest = Manifest {
            command: command.to_string(),
            argv: std::env::args().collect(),
            config,
            tool_version: env!("CARGO_PKG_VERSION"),
            seeds,
            threads,
            outputs: self.written.clone(),
            duration_seconds: self.started.elapsed().as_secs_f64(),
        };
        let path = self.dir.join("manifest.json");
        let mut text = serde_json::to_string_pretty(&manifest).map_err(input("manifest"))?;
        text.push('\n');
        std::fs::write(&path, text).map_err(input(path.display()))
    }
}

/// Everything needed to re-run a command: the resolved configuration and
/// seeds reproduce every listed output exactly.
#[derive(Serialize)]
struct Manifest {
    command: String,
    argv: Vec<String>,
    config: serde_json::Value,
    tool_version: &'static str,
    seeds: Vec<u64>,
    threads: Option<usize>,
    outputs: Vec<String>,
    duration_seconds: f64,
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> CliResult<T> {
    let text = std::fs::read_to_string(path).map_err(input(path.display()))?;
    serde_json::from_str(&text).map_err(input(path.display()))
}
