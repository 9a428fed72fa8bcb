//! Long-format result table and its CSV encoding.
//!
//! One record per line with the fixed header
//! `experiment,method,estimator,n_ris,p_jt,trial,user,metric,value`.
//! Per-trial records carry a trial index; summary records (means, medians,
//! CDF points) leave `trial` and `user` empty. CDF points use the metric name
//! `<base>_cdf@<x>` where `x` is the dB abscissa.

use std::cmp::Ordering;
use std::path::Path;

use anyhow::Context;
use serde::{Deserialize, Serialize};

pub const HEADER: [&str; 9] = ["experiment", "method", "estimator", "n_ris", "p_jt", "trial", "user", "metric", "value"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Row {
    pub experiment: String,
    pub method: String,
    pub estimator: String,
    pub n_ris: usize,
    pub p_jt: Option<f64>,
    pub trial: Option<usize>,
    pub user: Option<usize>,
    pub metric: String,
    pub value: f64,
}

impl Row {
    fn sort_key_cmp(&self, other: &Self) -> Ordering {
        let opt = |a: Option<f64>, b: Option<f64>| match (a, b) {
            (None, None) => Ordering::Equal,
            (None, Some(_)) => Ordering::Less,
            (Some(_), None) => Ordering::Greater,
            (Some(x), Some(y)) => x.total_cmp(&y),
        };
        self.experiment
            .cmp(&other.experiment)
            .then_with(|| self.method.cmp(&other.method))
            .then_with(|| self.estimator.cmp(&other.estimator))
            .then_with(|| self.n_ris.cmp(&other.n_ris))
            .then_with(|| opt(self.p_jt, other.p_jt))
            .then_with(|| self.trial.cmp(&other.trial))
            .then_with(|| self.user.cmp(&other.user))
            .then_with(|| self.metric.cmp(&other.metric))
            .then_with(|| self.value.total_cmp(&other.value))
    }

    pub fn is_summary(&self) -> bool {
        self.trial.is_none()
    }
}

/// Selects rows of one curve: a (method, estimator, N_R, p_JT) group.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Selector<'a> {
    pub method: Option<&'a str>,
    pub estimator: Option<&'a str>,
    pub n_ris: Option<usize>,
    pub p_jt: Option<f64>,
}

impl Selector<'_> {
    fn matches(&self, r: &Row) -> bool {
        self.method.is_none_or(|m| m == r.method)
            && self.estimator.is_none_or(|e| e == r.estimator)
            && self.n_ris.is_none_or(|n| n == r.n_ris)
            && self.p_jt.is_none_or(|p| r.p_jt.is_some_and(|q| (p - q).abs() < 1e-12))
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ResultTable {
    pub rows: Vec<Row>,
}

impl ResultTable {
    pub fn new(mut rows: Vec<Row>) -> Self {
        rows.sort_by(Row::sort_key_cmp);
        Self { rows }
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Per-trial values of `metric` in the selected group (user-level rows excluded
    /// unless the metric only exists per user).
    pub fn trial_values(&self, sel: &Selector<'_>, metric: &str) -> Vec<f64> {
        self.rows
            .iter()
            .filter(|r| r.trial.is_some() && r.metric == metric && sel.matches(r))
            .map(|r| r.value)
            .collect()
    }

    /// The single summary value of `metric` in the selected group.
    pub fn summary(&self, sel: &Selector<'_>, metric: &str) -> Option<f64> {
        let mut it = self.rows.iter().filter(|r| r.trial.is_none() && r.metric == metric && sel.matches(r));
        let first = it.next()?;
        if it.next().is_some() {
            return None;
        }
        Some(first.value)
    }

    /// CDF points `(x, F(x))` of `base` in the selected group, ascending in `x`.
    pub fn cdf(&self, sel: &Selector<'_>, base: &str) -> Vec<(f64, f64)> {
        let prefix = format!("{base}_cdf@");
        let mut pts: Vec<(f64, f64)> = self
            .rows
            .iter()
            .filter(|r| r.trial.is_none() && sel.matches(r))
            .filter_map(|r| r.metric.strip_prefix(&prefix).and_then(|x| x.parse().ok()).map(|x| (x, r.value)))
            .collect();
        pts.sort_by(|a, b| a.0.total_cmp(&b.0));
        pts
    }
}

pub fn write_results<W: std::io::Write>(table: &ResultTable, writer: W) -> anyhow::Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(writer);
    w.write_record(HEADER)?;
    for row in &table.rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_results_file(table: &ResultTable, path: &Path) -> anyhow::Result<()> {
    let file = std::fs::File::create(path).with_context(|| format!("creating {}", path.display()))?;
    write_results(table, std::io::BufWriter::new(file)).with_context(|| format!("writing {}", path.display()))
}

pub fn read_results<R: std::io::Read>(reader: R) -> anyhow::Result<ResultTable> {
    let mut r = csv::Reader::from_reader(reader);
    let header: Vec<String> = r.headers()?.iter().map(str::to_owned).collect();
    if header != HEADER {
        anyhow::bail!("unexpected CSV header {:?}; expected {:?}", header, HEADER);
    }
    let rows = r.deserialize().collect::<Result<Vec<Row>, _>>()?;
    Ok(ResultTable { rows })
}

pub fn read_results_file(path: &Path) -> anyhow::Result<ResultTable> {
    let file = std::fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
    read_results(std::io::BufReader::new(file)).with_context(|| format!("reading {}", path.display()))
}
