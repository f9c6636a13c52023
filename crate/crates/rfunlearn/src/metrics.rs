//! Metrics rows (CSV), accuracy logs and run traces (JSON).

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use rfunlearn_core::eval::MetricsReport;
use rfunlearn_core::trainer::EpochLog;
use rfunlearn_core::unlearn::{RunInfo, TraceEntry};
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::formats::{read_bytes, write_atomic};
use crate::workdir::labels_key;

/// One result row per (method, forget target).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub method: String,
    pub forget_labels: String,
    pub ua: f64,
    pub ra: f64,
    pub mia_efficacy: f64,
    pub rte_minutes: f64,
    pub delta_l2: f64,
    pub delta_linf: f64,
    pub converged: bool,
}

impl MetricsRow {
    pub fn new(method: &str, labels: &BTreeSet<u16>, m: &MetricsReport) -> Self {
        Self {
            method: method.into(),
            forget_labels: labels_key(labels),
            ua: m.ua,
            ra: m.ra,
            mia_efficacy: m.mia_efficacy,
            rte_minutes: m.rte_minutes(),
            delta_l2: m.delta_l2,
            delta_linf: m.delta_linf,
            converged: m.converged,
        }
    }
}

fn target_order(a: &str, b: &str) -> Ordering {
    let nums = |s: &str| s.split('+').map(|t| t.parse::<u32>().unwrap_or(u32::MAX)).collect::<Vec<_>>();
    nums(a).cmp(&nums(b)).then_with(|| a.cmp(b))
}

/// Stable sort by method, then numerically by target.
pub fn sort_rows(rows: &mut [MetricsRow]) {
    rows.sort_by(|a, b| a.method.cmp(&b.method).then_with(|| target_order(&a.forget_labels, &b.forget_labels)));
}

pub fn rows_to_csv(rows: &[MetricsRow]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    if rows.is_empty() {
        w.write_record(["method", "forget_labels", "ua", "ra", "mia_efficacy", "rte_minutes", "delta_l2", "delta_linf", "converged"])?;
    }
    for r in rows {
        w.serialize(r)?;
    }
    Ok(w.into_inner().map_err(|e| csv::Error::from(e.into_error()))?)
}

pub fn rows_from_csv(bytes: &[u8]) -> Result<Vec<MetricsRow>> {
    let mut r = csv::Reader::from_reader(bytes);
    Ok(r.deserialize().collect::<std::result::Result<_, _>>()?)
}

pub fn write_rows(path: &Path, rows: &[MetricsRow]) -> Result<()> {
    write_atomic(path, &rows_to_csv(rows)?)
}

pub fn read_rows(path: &Path) -> Result<Vec<MetricsRow>> {
    rows_from_csv(&read_bytes(path)?)
}

#[derive(Serialize)]
struct LogRow {
    epoch: usize,
    train_loss: f64,
    test_acc: f64,
}

pub fn accuracy_log_csv(log: &[EpochLog]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for l in log {
        w.serialize(LogRow { epoch: l.epoch, train_loss: l.train_loss, test_acc: l.test_acc })?;
    }
    Ok(w.into_inner().map_err(|e| csv::Error::from(e.into_error()))?)
}

#[derive(Debug, Clone, Serialize)]
pub struct TraceRecord {
    pub epoch: usize,
    pub objective: Option<f64>,
    pub ua: f64,
    pub worst_ua: f64,
    pub ra: f64,
    pub delta_l2: f64,
    pub delta_linf: f64,
}

impl From<&TraceEntry> for TraceRecord {
    fn from(e: &TraceEntry) -> Self {
        Self {
            epoch: e.epoch,
            objective: e.objective,
            ua: e.ua,
            worst_ua: e.worst_ua,
            ra: e.ra,
            delta_l2: e.delta_l2,
            delta_linf: e.delta_linf,
        }
    }
}

/// Everything known about one run, written next to its metrics row.
#[derive(Debug, Clone, Serialize)]
pub struct RunRecord {
    pub method: String,
    pub forget_labels: Vec<u16>,
    pub model_digest: String,
    pub artifact_digest: Option<String>,
    pub converged: bool,
    pub selected_epoch: Option<usize>,
    pub epochs_run: Option<usize>,
    pub trainable_scalars: Option<usize>,
    pub rte_seconds: f64,
    pub ua: f64,
    pub worst_ua: f64,
    pub ra: f64,
    pub clean_ra: f64,
    pub per_class_acc: BTreeMap<u16, f64>,
    pub mia_efficacy: f64,
    pub delta_l2: f64,
    pub delta_linf: f64,
    pub coefficients: Option<Vec<f32>>,
    pub trace: Vec<TraceRecord>,
}

impl RunRecord {
    pub fn new(method: &str, labels: &BTreeSet<u16>, model_digest: String, m: &MetricsReport) -> Self {
        Self {
            method: method.into(),
            forget_labels: labels.iter().copied().collect(),
            model_digest,
            artifact_digest: None,
            converged: m.converged,
            selected_epoch: None,
            epochs_run: None,
            trainable_scalars: None,
            rte_seconds: m.rte_seconds,
            ua: m.ua,
            worst_ua: m.worst_ua,
            ra: m.ra,
            clean_ra: m.clean_ra,
            per_class_acc: m.per_class_acc.clone(),
            mia_efficacy: m.mia_efficacy,
            delta_l2: m.delta_l2,
            delta_linf: m.delta_linf,
            coefficients: None,
            trace: Vec::new(),
        }
    }

    pub fn with_run(mut self, run: &RunInfo) -> Self {
        self.selected_epoch = Some(run.selected_epoch);
        self.epochs_run = Some(run.epochs_run);
        self.trainable_scalars = Some(run.trainable_scalars);
        self.trace = run.trace.iter().map(TraceRecord::from).collect();
        self
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }
}
