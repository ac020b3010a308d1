use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub name: String,
    pub value: f64,
}

/// Metric values with the extractor version and seed that produced them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub extractor_version: Option<String>,
    pub seed: u64,
    pub rows: Vec<MetricRow>,
}

impl MetricsReport {
    pub fn new(extractor_version: Option<String>, seed: u64) -> Self {
        Self {
            extractor_version,
            seed,
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, name: impl Into<String>, value: f64) {
        self.rows.push(MetricRow {
            name: name.into(),
            value,
        });
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        self.rows.iter().find(|r| r.name == name).map(|r| r.value)
    }

    /// Tab-separated `metric value extractor seed` rows under a header.
    /// Values use 17 significant digits so equal reports compare equal.
    pub fn to_tsv(&self) -> String {
        let version = self.extractor_version.as_deref().unwrap_or("-");
        let mut out = String::from("metric\tvalue\textractor\tseed\n");
        for r in &self.rows {
            let _ = writeln!(out, "{}\t{:.16e}\t{version}\t{}", r.name, r.value, self.seed);
        }
        out
    }

    pub fn parse_tsv(text: &str, path: &Path) -> Result<Self> {
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, "metric\tvalue\textractor\tseed")) => {}
            _ => return Err(Error::parse(path, 1, "expected a metrics header")),
        }
        let mut report = MetricsReport::new(None, 0);
        for (i, line) in lines {
            let f: Vec<&str> = line.split('\t').collect();
            let [name, value, version, seed] = f[..] else {
                return Err(Error::parse(path, i + 1, "expected 4 tab-separated fields"));
            };
            let value = value.parse().map_err(|_| Error::parse(path, i + 1, format!("bad value {value:?}")))?;
            report.seed = seed.parse().map_err(|_| Error::parse(path, i + 1, format!("bad seed {seed:?}")))?;
            report.extractor_version = (version != "-").then(|| version.to_string());
            report.push(name, value);
        }
        Ok(report)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_tsv()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse_tsv(&text, path)
    }

    /// Errors unless both reports hold the same metric names.
    pub fn same_metrics(&self, other: &Self) -> Result<()> {
        let names = |r: &Self| r.rows.iter().map(|x| x.name.clone()).collect::<Vec<_>>();
        if names(self) != names(other) {
            return Err(invalid!("reports list different metrics"));
        }
        Ok(())
    }
}
