//! The experiment steps behind each command-line verb.

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use log::{info, warn};
use rfunlearn_core::digest::{Digest, Hasher};
use rfunlearn_core::eval::{gradcam, time_block, MetricsReport};
use rfunlearn_core::featurize::{build_dataset, DatasetSplit, Spectrogram};
use rfunlearn_core::rfsim::{make_fleet_with, synth_burst};
use rfunlearn_core::tinynet::ModelParams;
use rfunlearn_core::trainer::{retrain_excluding, train, TrainOutcome};
use rfunlearn_core::unlearn::{
    add_delta, bank_seed, combine, optimize_coefficients, optimize_ffv, ForgetVector, RunInfo, UnlearnConfig,
};

use crate::clock::MonotonicClock;
use crate::config::ExperimentConfig;
use crate::error::{Error, IoContext, Result};
use crate::formats::{
    encode_coefficients, encode_ffv, encode_iq, encode_params, load_coefficients, load_ffv, load_params,
    read_bytes, read_iq, write_atomic, write_pgm, write_spectrograms, CoefficientFile,
};
use crate::manifest::{Manifest, ManifestEntry, SplitSpec};
use crate::metrics::{accuracy_log_csv, read_rows, sort_rows, write_rows, MetricsRow, RunRecord};
use crate::workdir::{labels_key, Workdir};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    SingleV,
    ComV,
}

/// Digest identifying the recordings a configuration generates.
pub fn dataset_id(cfg: &ExperimentConfig) -> Result<Digest> {
    let fleet = make_fleet_with(cfg.fleet_n, cfg.fleet_seed(), &cfg.ranges)?;
    let s = &cfg.signal;
    let mut h = Hasher::new();
    for p in &fleet {
        h.update(&p.device_id.to_le_bytes());
        p.parameter_vector().iter().for_each(|&v| h.update_f64(v));
    }
    for v in [s.sample_rate_hz, s.symbol_rate_hz, s.snr_db] {
        h.update_f64(v);
    }
    for v in [s.burst_len, s.num_channels, s.hop_len, cfg.recordings_per_device] {
        h.update_u64(v as u64);
    }
    h.update_u64(cfg.fleet_seed());
    Ok(h.finish())
}

fn split_spec(cfg: &ExperimentConfig) -> SplitSpec {
    SplitSpec { test_fraction: cfg.test_fraction, seed: cfg.split_seed() }
}

/// Synthesizes the fleet's recordings and writes them with their manifest.
pub fn gen(cfg: &ExperimentConfig, wd: &Workdir) -> Result<Manifest> {
    let id = dataset_id(cfg)?.to_string();
    let path = wd.path(&cfg.manifest);
    let mut manifest = if path.exists() {
        let m = Manifest::load(&path)?;
        if m.dataset_id != id || m.split != split_spec(cfg) {
            return Err(Error::Metadata(format!("{} describes a different dataset", path.display())));
        }
        m
    } else {
        Manifest::new(id, split_spec(cfg))
    };
    let fleet = make_fleet_with(cfg.fleet_n, cfg.fleet_seed(), &cfg.ranges)?;
    let profiles: Vec<_> = fleet
        .iter()
        .map(|p| {
            serde_json::json!({
                "device_id": p.device_id,
                "gain_imbalance": p.gain_imbalance,
                "phase_imbalance": p.phase_imbalance,
                "cfo_hz": p.cfo_hz,
                "phase_noise_std": p.phase_noise_std,
                "nonlin_coeff": p.nonlin_coeff,
                "dc_offset": [p.dc_offset.re, p.dc_offset.im],
            })
        })
        .collect();
    write_atomic(&wd.path("fleet.json"), serde_json::to_string_pretty(&profiles)?.as_bytes())?;
    for p in &fleet {
        for k in 0..cfg.recordings_per_device {
            let seed = cfg.recording_seed(p.device_id, k);
            let rec = synth_burst(p, &cfg.signal, seed)?;
            let file = format!("iq/dev{:03}_{k:05}.iq", p.device_id);
            let bytes = encode_iq(&rec.samples);
            let digest = Digest::of(&bytes);
            let target = wd.path(&file);
            if !(target.exists() && Digest::of(&read_bytes(&target)?) == digest) {
                write_atomic(&target, &bytes)?;
            }
            manifest.push_entry(ManifestEntry {
                file,
                device_id: p.device_id,
                seed,
                sample_rate_hz: rec.sample_rate_hz,
                digest: digest.to_string(),
            })?;
        }
    }
    manifest.save(&path)?;
    info!("generated {} recordings for {} devices", manifest.entries.len(), fleet.len());
    Ok(manifest)
}

fn load_manifest(cfg: &ExperimentConfig, wd: &Workdir) -> Result<Manifest> {
    let path = wd.path(&cfg.manifest);
    if !path.exists() {
        return Err(Error::Missing(format!("{} (run gen first)", path.display())));
    }
    let m = Manifest::load(&path)?;
    if m.split != split_spec(cfg) {
        return Err(Error::Config("split settings differ from the manifest".into()));
    }
    Ok(m)
}

fn cache_key(cfg: &ExperimentConfig, manifest: &Manifest) -> String {
    let f = &cfg.featurize;
    let mut h = Hasher::new();
    h.update(manifest.dataset_id.as_bytes());
    for v in [f.fft_size, f.hop_size, f.out_size, f.window as usize, usize::from(f.log_magnitude)] {
        h.update_u64(v as u64);
    }
    h.update_f64(f.eps);
    h.update_f64(manifest.split.test_fraction);
    h.update_u64(manifest.split.seed);
    h.finish().short(16)
}

/// Featurizes every recording in the manifest and writes the split caches.
pub fn featurize(cfg: &ExperimentConfig, wd: &Workdir) -> Result<DatasetSplit> {
    let mut manifest = load_manifest(cfg, wd)?;
    manifest.verify(wd.root())?;
    let recordings = manifest
        .entries
        .iter()
        .map(|e| read_iq(&wd.path(&e.file), &e.file, &manifest))
        .collect::<Result<Vec<_>>>()?;
    let split = manifest.split;
    let data = build_dataset(&recordings, &cfg.featurize, split.test_fraction, &BTreeSet::new(), split.seed)?;
    let key = cache_key(cfg, &manifest);
    let size = cfg.featurize.out_size;
    for (name, samples) in [("train", &data.train), ("test", &data.test)] {
        let digest = write_spectrograms(&wd.path(&format!("cache/{name}-{key}.rfs")), size, samples)?;
        manifest.record_cache(&format!("{name}-{key}"), &digest)?;
    }
    manifest.save(&wd.path(&cfg.manifest))?;
    info!("featurized {} train and {} test spectrograms", data.train.len(), data.test.len());
    Ok(data)
}

/// The cached split, featurizing first when the caches are missing.
pub fn load_dataset(cfg: &ExperimentConfig, wd: &Workdir) -> Result<DatasetSplit> {
    let manifest = load_manifest(cfg, wd)?;
    let key = cache_key(cfg, &manifest);
    let mut parts = Vec::new();
    for name in ["train", "test"] {
        let path = wd.path(&format!("cache/{name}-{key}.rfs"));
        let Some(want) = manifest.cache_digest(&format!("{name}-{key}"))? else {
            return featurize(cfg, wd);
        };
        if !path.exists() {
            return featurize(cfg, wd);
        }
        let bytes = read_bytes(&path)?;
        if Digest::of(&bytes) != want {
            return Err(Error::Metadata(format!("{} does not match its recorded digest", path.display())));
        }
        parts.push(crate::formats::decode_spectrograms(&bytes)?.1);
    }
    let test = parts.pop().unwrap_or_default();
    let train = parts.pop().unwrap_or_default();
    Ok(DatasetSplit::from_parts(train, test, BTreeSet::new())?)
}

fn save_model(wd: &Workdir, prefix: &str, params: &ModelParams) -> Result<String> {
    let rel = format!("models/{prefix}-{}.rfp", params.digest().short(16));
    write_atomic(&wd.path(&rel), &encode_params(params))?;
    Ok(rel)
}

fn load_model(cfg: &ExperimentConfig, wd: &Workdir) -> Result<ModelParams> {
    let path = wd.require("model", "run train first")?;
    let params = load_params(&path, None)?;
    if params.arch().input_size() != cfg.featurize.out_size {
        return Err(Error::Config("stored model does not match featurize.out_size".into()));
    }
    Ok(params)
}

pub fn train_model(cfg: &ExperimentConfig, wd: &Workdir, arch: Option<&str>) -> Result<TrainOutcome> {
    let data = load_dataset(cfg, wd)?;
    let mut cfg = cfg.clone();
    if let Some(a) = arch {
        cfg.arch = Some(a.to_string());
    }
    let arch = cfg.arch_spec()?;
    let out = train(&data, &arch, &cfg.train_config())?;
    let rel = save_model(wd, "model", &out.params)?;
    wd.set_role("model", &rel)?;
    write_atomic(&wd.path(&format!("logs/train-{}.csv", out.params.digest().short(16))), &accuracy_log_csv(&out.log)?)?;
    info!("model {} test accuracy {:.4}", out.params.digest().short(16), out.test_accuracy);
    if out.test_accuracy < 0.95 {
        warn!("test accuracy {:.4} is below 0.95", out.test_accuracy);
    }
    Ok(out)
}

fn save_run(wd: &Workdir, row: &MetricsRow, record: &RunRecord) -> Result<()> {
    let stem = format!("metrics/{}-{}", row.method, row.forget_labels);
    write_rows(&wd.path(&format!("{stem}.csv")), std::slice::from_ref(row))?;
    write_atomic(&wd.path(&format!("{stem}.json")), record.to_json()?.as_bytes())
}

fn measure(
    params: &ModelParams,
    data: &DatasetSplit,
    forget: &BTreeSet<u16>,
    delta: Option<&[f32]>,
    seconds: f64,
    converged: bool,
) -> Result<MetricsReport> {
    let split = data.retarget(forget)?;
    Ok(MetricsReport::measure(params, delta, &split.retain_set(), &split.forget_set(), &data.test, forget, seconds, converged)?)
}

/// Trains from scratch without `exclude`. Success means the retrained
/// model meets the unlearning thresholds.
pub fn retrain(cfg: &ExperimentConfig, wd: &Workdir, exclude: &BTreeSet<u16>) -> Result<MetricsReport> {
    let data = load_dataset(cfg, wd)?;
    let arch = match wd.role("model")? {
        Some(p) if p.exists() => load_params(&p, None)?.arch().clone(),
        _ => cfg.arch_spec()?,
    };
    let clock = MonotonicClock::new();
    let timed = time_block(&clock, "retrain", || retrain_excluding(&data, exclude, &arch, &cfg.train_config()));
    let out = timed.value?;
    let key = labels_key(exclude);
    let rel = save_model(wd, &format!("retrain-{key}"), &out.params)?;
    wd.set_role(&format!("retrain/{key}"), &rel)?;
    let u = &cfg.unlearn;
    let mut m = measure(&out.params, &data, exclude, None, timed.seconds, false)?;
    m.converged = m.worst_ua <= u.th_ua && m.ra >= u.th_ra;
    let row = MetricsRow::new("retrain", exclude, &m);
    save_run(wd, &row, &RunRecord::new("retrain", exclude, out.params.digest().to_string(), &m))?;
    info!("retrain without {key}: ua {:.4} ra {:.4} in {:.1}s", m.ua, m.ra, timed.seconds);
    Ok(m)
}

fn check_targets(data: &DatasetSplit, forget: &BTreeSet<u16>) -> Result<()> {
    let labels = data.labels();
    match forget.iter().find(|l| !labels.contains(l)) {
        Some(bad) => Err(rfunlearn_core::Error::Label(format!("unknown device id {bad}")).into()),
        None => Ok(()),
    }
}

/// Loads or builds the bank entry of every class.
fn bank(cfg: &ExperimentConfig, wd: &Workdir, params: &ModelParams, data: &DatasetSplit) -> Result<Vec<ForgetVector>> {
    let clock = MonotonicClock::new();
    let mut out = Vec::new();
    for k in data.labels() {
        let want = cfg.unlearn_for(k);
        let role = format!("bank/{k}");
        if let Some(path) = wd.role(&role)?.filter(|p| p.exists()) {
            let fv = load_ffv(&path)?;
            if fv.config == want && fv.forget_labels == BTreeSet::from([k]) && fv.size == params.arch().input_size() {
                out.push(fv);
                continue;
            }
        }
        let r = optimize_ffv(params, data, &BTreeSet::from([k]), &want, bank_seed(cfg.unlearn_seed(), k), &clock)?;
        if !r.run.converged {
            warn!("bank entry for class {k} did not meet the thresholds");
        }
        let rel = format!("bank/ffv-{k}-{}.rff", r.vector.digest().short(16));
        write_atomic(&wd.path(&rel), &encode_ffv(&r.vector))?;
        wd.set_role(&role, &rel)?;
        out.push(r.vector);
    }
    Ok(out)
}

/// Unlearns `forget` and records the result. The returned report's
/// `converged` flag decides the exit status.
pub fn unlearn(cfg: &ExperimentConfig, wd: &Workdir, forget: &BTreeSet<u16>, mode: Mode) -> Result<MetricsReport> {
    let data = load_dataset(cfg, wd)?;
    let params = load_model(cfg, wd)?;
    check_targets(&data, forget)?;
    let before = params.digest();
    let key = labels_key(forget);
    let seed = cfg.unlearn_seed();
    let clock = MonotonicClock::new();
    let done = match mode {
        Mode::SingleV => {
            let ucfg: UnlearnConfig = match forget.iter().next() {
                Some(&k) if forget.len() == 1 => cfg.unlearn_for(k),
                _ => cfg.unlearn,
            };
            let r = optimize_ffv(&params, &data, forget, &ucfg, seed, &clock)?;
            let bytes = encode_ffv(&r.vector);
            let rel = format!("ffv/ffv-{key}-{}.rff", r.vector.digest().short(16));
            write_atomic(&wd.path(&rel), &bytes)?;
            wd.set_role(&format!("ffv/{key}"), &rel)?;
            let method = if forget.len() == 1 { "ffv" } else { "single-v" };
            Finished { method, delta: r.vector.delta, run: r.run, artifact: Digest::of(&bytes), coeffs: None }
        }
        Mode::ComV => {
            if forget.len() < 2 {
                return Err(rfunlearn_core::Error::Mode("com-v needs at least two device ids".into()).into());
            }
            let bank = bank(cfg, wd, &params, &data)?;
            let r = optimize_coefficients(&params, &data, forget, &bank, &cfg.comv, seed, &clock)?;
            let file = CoefficientFile { coeffs: r.state.coeffs.clone(), bank_digests: r.state.bank_digests() };
            let bytes = encode_coefficients(&file)?;
            let rel = format!("coeffs/coef-{key}-{}.rfc", Digest::of(&bytes).short(16));
            write_atomic(&wd.path(&rel), &bytes)?;
            wd.set_role(&format!("coeffs/{key}"), &rel)?;
            Finished { method: "com-v", delta: r.vector.delta, run: r.run, artifact: Digest::of(&bytes), coeffs: Some(file.coeffs) }
        }
    };
    if params.digest() != before {
        return Err(rfunlearn_core::Error::Integrity.into());
    }
    let m = measure(&params, &data, forget, Some(&done.delta), done.run.seconds, done.run.converged)?;
    let mut record = RunRecord::new(done.method, forget, before.to_string(), &m).with_run(&done.run);
    record.artifact_digest = Some(done.artifact.to_string());
    record.coefficients = done.coeffs;
    save_run(wd, &MetricsRow::new(done.method, forget, &m), &record)?;
    info!(
        "{} {key}: converged {} ua {:.4} ra {:.4} mia {:.4} in {:.1}s",
        done.method, m.converged, m.ua, m.ra, m.mia_efficacy, m.rte_seconds
    );
    Ok(m)
}

struct Finished {
    method: &'static str,
    delta: Vec<f32>,
    run: RunInfo,
    artifact: Digest,
    coeffs: Option<Vec<f32>>,
}

/// The combined or single vector stored for `key`, if any.
/// Every stored vector for target `key`, tagged with its method.
fn stored_deltas(wd: &Workdir, key: &str) -> Result<Vec<(String, Vec<f32>)>> {
    let mut out = Vec::new();
    if let Some(p) = wd.role(&format!("ffv/{key}"))?.filter(|p| p.exists()) {
        let fv = load_ffv(&p)?;
        let method = if fv.forget_labels.len() == 1 { "ffv" } else { "single-v" };
        out.push((method.into(), fv.delta));
    }
    if let Some(p) = wd.role(&format!("coeffs/{key}"))?.filter(|p| p.exists()) {
        let file = load_coefficients(&p)?;
        let mut bank = Vec::new();
        for (k, want) in file.bank_digests.iter().enumerate() {
            let path = wd.require(&format!("bank/{k}"), "bank entry")?;
            let fv = load_ffv(&path)?;
            if fv.digest() != *want {
                return Err(Error::Metadata(format!("bank entry {k} changed since the coefficients were fit")));
            }
            bank.push(fv);
        }
        out.push(("com-v".into(), combine(&bank, &file.coeffs)?));
    }
    Ok(out)
}

/// Metrics of the original model for `forget` (δ = 0) and of every stored
/// vector for the same target.
pub fn eval(cfg: &ExperimentConfig, wd: &Workdir, forget: &BTreeSet<u16>) -> Result<Vec<RunRecord>> {
    let data = load_dataset(cfg, wd)?;
    let params = load_model(cfg, wd)?;
    check_targets(&data, forget)?;
    let digest = params.digest().to_string();
    let m = measure(&params, &data, forget, None, 0.0, false)?;
    save_run(wd, &MetricsRow::new("original", forget, &m), &RunRecord::new("original", forget, digest.clone(), &m))?;
    let mut out = vec![RunRecord::new("original", forget, digest.clone(), &m)];
    for (method, delta) in stored_deltas(wd, &labels_key(forget))? {
        let m = measure(&params, &data, forget, Some(&delta), 0.0, false)?;
        out.push(RunRecord::new(&method, forget, digest.clone(), &m));
    }
    Ok(out)
}

pub struct ReportSummary {
    pub rows: usize,
    pub heatmaps: usize,
}

/// Merges every metrics row into `report.csv` and dumps Grad-CAM maps of up
/// to `per_target` forgotten-class test samples for each stored vector.
pub fn report(cfg: &ExperimentConfig, wd: &Workdir, per_target: usize) -> Result<ReportSummary> {
    let dir = wd.path("metrics");
    let mut files: Vec<_> = match fs::read_dir(&dir) {
        Ok(rd) => rd.filter_map(|e| e.ok().map(|e| e.path())).filter(|p| p.extension().is_some_and(|x| x == "csv")).collect(),
        Err(_) => Vec::new(),
    };
    files.sort();
    let mut rows = Vec::new();
    for f in &files {
        rows.extend(read_rows(f)?);
    }
    if rows.is_empty() {
        return Err(Error::Missing(format!("metrics rows under {}", wd.root().display())));
    }
    sort_rows(&mut rows);
    write_rows(&wd.path("report.csv"), &rows)?;
    let mut heatmaps = 0;
    if per_target > 0 {
        let params = load_model(cfg, wd)?;
        let data = load_dataset(cfg, wd)?;
        let keys: BTreeSet<String> = wd
            .index()?
            .keys()
            .filter_map(|r| r.strip_prefix("ffv/").or_else(|| r.strip_prefix("coeffs/")).map(String::from))
            .collect();
        for key in keys {
            let forget = crate::workdir::parse_labels(&key)?;
            let samples: Vec<&Spectrogram> = data.test.iter().filter(|s| forget.contains(&s.label)).take(per_target).collect();
            for (method, delta) in stored_deltas(wd, &key)? {
                for s in &samples {
                    heatmaps += dump_pair(wd, &params, &format!("heatmaps/{method}-{key}"), s, &delta)?;
                }
            }
        }
    }
    info!("report: {} rows, {heatmaps} heatmaps", rows.len());
    Ok(ReportSummary { rows: rows.len(), heatmaps })
}

fn dump_pair(wd: &Workdir, params: &ModelParams, dir: &str, s: &Spectrogram, delta: &[f32]) -> Result<usize> {
    let class = usize::from(s.label);
    let size = s.size;
    let clean = gradcam(params, &s.pixels, class)?;
    let shifted = gradcam(params, &add_delta(&s.pixels, Some(delta))?, class)?;
    write_pgm(&wd.path(&format!("{dir}/s{}-clean.pgm", s.source_seed)), &clean, size, size)?;
    write_pgm(&wd.path(&format!("{dir}/s{}-ffv.pgm", s.source_seed)), &shifted, size, size)?;
    Ok(2)
}

/// Stores the configuration a command ran with.
pub fn record_config(cfg: &ExperimentConfig, wd: &Workdir) -> Result<()> {
    write_atomic(&wd.path("config.resolved"), cfg.render().as_bytes())
}

/// Reads a configuration file, or the defaults when `path` is `None`.
pub fn read_config(path: Option<&Path>) -> Result<ExperimentConfig> {
    match path {
        Some(p) => {
            let text = fs::read_to_string(p).at(p)?;
            ExperimentConfig::parse(&text)
        }
        None => Ok(ExperimentConfig::default()),
    }
}
