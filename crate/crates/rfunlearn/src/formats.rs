//! Binary artifact formats. Every multi-byte value is little-endian; every
//! format except raw IQ starts with an 8-byte magic and a u32 version.

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use num_complex::Complex32;
use rfunlearn_core::digest::Digest;
use rfunlearn_core::featurize::Spectrogram;
use rfunlearn_core::rfsim::IqRecording;
use rfunlearn_core::tinynet::{ArchSpec, ModelParams};
use rfunlearn_core::unlearn::{BatchMode, ForgetVector, UnlearnConfig};

use crate::bin_io::{Reader, Writer};
use crate::error::{Error, IoContext, Result};
use crate::manifest::Manifest;

const VERSION: u32 = 1;
const SPEC_MAGIC: &[u8; 8] = b"RFUSPEC\0";
const PARAM_MAGIC: &[u8; 8] = b"RFUPARAM";
const FFV_MAGIC: &[u8; 8] = b"RFUFFV\0\0";
const COEF_MAGIC: &[u8; 8] = b"RFUCOEF\0";

/// Writes `bytes` via a temporary sibling and a rename, creating parents.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).at(dir)?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    fs::write(&tmp, bytes).at(Path::new(&tmp))?;
    fs::rename(&tmp, path).at(path)
}

pub fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).at(path)
}

/// Interleaved I/Q float32 pairs without a header.
pub fn encode_iq(samples: &[Complex32]) -> Vec<u8> {
    let mut w = Writer(Vec::with_capacity(samples.len() * 8));
    for s in samples {
        w.f32s(&[s.re, s.im]);
    }
    w.0
}

pub fn decode_iq(bytes: &[u8]) -> Result<Vec<Complex32>> {
    if !bytes.len().is_multiple_of(4) {
        return Err(Error::Format(format!("IQ data is {} bytes, not a whole number of floats", bytes.len())));
    }
    if !bytes.len().is_multiple_of(8) {
        return Err(Error::Format(format!("IQ data holds {} floats, an odd count", bytes.len() / 4)));
    }
    Ok(bytes
        .chunks_exact(8)
        .map(|c| {
            let re = f32::from_le_bytes(c[..4].try_into().unwrap());
            let im = f32::from_le_bytes(c[4..].try_into().unwrap());
            Complex32::new(re, im)
        })
        .collect())
}

pub fn write_iq(path: &Path, rec: &IqRecording) -> Result<()> {
    write_atomic(path, &encode_iq(&rec.samples))
}

/// Reads the samples at `path` and attaches the metadata recorded for
/// `file` (relative to the manifest) in `manifest`.
pub fn read_iq(path: &Path, file: &str, manifest: &Manifest) -> Result<IqRecording> {
    let entry = manifest
        .entry(file)
        .ok_or_else(|| Error::Metadata(format!("no manifest entry for {file}")))?;
    let samples = decode_iq(&read_bytes(path)?)?;
    Ok(IqRecording { samples, sample_rate_hz: entry.sample_rate_hz, device_id: entry.device_id, seed: entry.seed })
}

/// Spectrogram cache: size, count, then `(label, source_seed, pixels)` records.
pub fn encode_spectrograms(size: usize, samples: &[Spectrogram]) -> Result<Vec<u8>> {
    let mut w = Writer::with_header(SPEC_MAGIC, VERSION);
    w.u32(size as u32);
    w.u64(samples.len() as u64);
    for s in samples {
        if s.size != size || s.pixels.len() != size * size {
            return Err(Error::Format(format!("spectrogram of size {} in a size-{size} cache", s.size)));
        }
        w.u16(s.label);
        w.u64(s.source_seed);
        w.f32s(&s.pixels);
    }
    Ok(w.0)
}

pub fn decode_spectrograms(bytes: &[u8]) -> Result<(usize, Vec<Spectrogram>)> {
    let mut r = Reader::open(bytes, SPEC_MAGIC, VERSION, "spectrogram cache")?;
    let size = r.u32()? as usize;
    let count = r.u64()?;
    let record = 10 + 4 * size * size;
    if (r.rest().len() as u64) < count.saturating_mul(record as u64) {
        return Err(Error::Format(format!("spectrogram cache: {count} records do not fit")));
    }
    let mut out = Vec::with_capacity(count as usize);
    for _ in 0..count {
        let label = r.u16()?;
        let source_seed = r.u64()?;
        let pixels = r.f32s(size * size)?;
        out.push(Spectrogram { pixels, size, label, source_seed });
    }
    r.finish()?;
    Ok((size, out))
}

pub fn write_spectrograms(path: &Path, size: usize, samples: &[Spectrogram]) -> Result<Digest> {
    let bytes = encode_spectrograms(size, samples)?;
    write_atomic(path, &bytes)?;
    Ok(Digest::of(&bytes))
}

pub fn read_spectrograms(path: &Path) -> Result<(usize, Vec<Spectrogram>)> {
    decode_spectrograms(&read_bytes(path)?)
}

/// Parameter file: architecture encoding, model digest, then every tensor in
/// declaration order.
pub fn encode_params(params: &ModelParams) -> Vec<u8> {
    let arch = params.arch().encode();
    let mut w = Writer::with_header(PARAM_MAGIC, VERSION);
    w.u32(arch.len() as u32);
    w.bytes(&arch);
    w.digest(&params.digest());
    for t in params.tensors() {
        w.f32s(t);
    }
    w.0
}

/// Decodes a parameter file. With `expected` set, a different architecture is
/// a format error.
pub fn decode_params(bytes: &[u8], expected: Option<&ArchSpec>) -> Result<ModelParams> {
    let mut r = Reader::open(bytes, PARAM_MAGIC, VERSION, "parameter file")?;
    let len = r.u32()? as usize;
    let arch_bytes = r.take(len)?;
    let (arch, used) = ArchSpec::decode(arch_bytes).map_err(|e| Error::Format(format!("parameter file: {e}")))?;
    if used != len {
        return Err(Error::Format("parameter file: architecture length mismatch".into()));
    }
    if let Some(want) = expected {
        if *want != arch {
            return Err(Error::Format(format!("parameter file holds {arch}, expected {want}")));
        }
    }
    let digest = r.digest()?;
    let flat = r.f32s(arch.param_count())?;
    r.finish()?;
    let params = ModelParams::from_flat(&arch, &flat)?;
    if params.digest() != digest {
        return Err(Error::Format("parameter file: digest does not match contents".into()));
    }
    Ok(params)
}

pub fn save_params(path: &Path, params: &ModelParams) -> Result<()> {
    write_atomic(path, &encode_params(params))
}

pub fn load_params(path: &Path, expected: Option<&ArchSpec>) -> Result<ModelParams> {
    decode_params(&read_bytes(path)?, expected)
}

fn write_config(w: &mut Writer, c: &UnlearnConfig) {
    for v in [c.alpha, c.beta, c.gamma, c.tau, c.lr, c.th_ua, c.th_ra] {
        w.f64(v);
    }
    for v in [c.batch_size, c.max_epochs, c.eval_every] {
        w.u64(v as u64);
    }
    w.bytes(&[c.batch_mode as u8, u8::from(c.stop_on_threshold)]);
}

fn read_config(r: &mut Reader<'_>) -> Result<UnlearnConfig> {
    let mut f = [0.0; 7];
    for v in &mut f {
        *v = r.f64()?;
    }
    let mut u = [0usize; 3];
    for v in &mut u {
        *v = r.u64()? as usize;
    }
    let flags = r.take(2)?;
    let batch_mode = match flags[0] {
        0 => BatchMode::Shuffled,
        1 => BatchMode::Fixed,
        m => return Err(Error::Format(format!("unknown batch mode {m}"))),
    };
    let stop_on_threshold = match flags[1] {
        0 => false,
        1 => true,
        b => return Err(Error::Format(format!("bad flag byte {b}"))),
    };
    let [alpha, beta, gamma, tau, lr, th_ua, th_ra] = f;
    let [batch_size, max_epochs, eval_every] = u;
    Ok(UnlearnConfig { alpha, beta, gamma, tau, lr, batch_size, max_epochs, th_ua, th_ra, eval_every, batch_mode, stop_on_threshold })
}

/// Forget-vector file: size, target labels, the optimizer configuration and
/// its digest, then the H×H pixels.
pub fn encode_ffv(fv: &ForgetVector) -> Vec<u8> {
    let mut w = Writer::with_header(FFV_MAGIC, VERSION);
    w.u32(fv.size as u32);
    w.u32(fv.forget_labels.len() as u32);
    for &l in &fv.forget_labels {
        w.u16(l);
    }
    write_config(&mut w, &fv.config);
    w.digest(&fv.config_digest());
    w.f32s(&fv.delta);
    w.0
}

pub fn decode_ffv(bytes: &[u8]) -> Result<ForgetVector> {
    let mut r = Reader::open(bytes, FFV_MAGIC, VERSION, "forget vector file")?;
    let size = r.u32()? as usize;
    let n = r.u32()? as usize;
    let mut labels = BTreeSet::new();
    for _ in 0..n {
        if !labels.insert(r.u16()?) {
            return Err(Error::Format("forget vector file: repeated label".into()));
        }
    }
    let config = read_config(&mut r)?;
    if r.digest()? != config.digest() {
        return Err(Error::Format("forget vector file: configuration digest mismatch".into()));
    }
    let delta = r.f32s(size * size)?;
    r.finish()?;
    Ok(ForgetVector::from_delta(delta, size, labels, config)?)
}

pub fn save_ffv(path: &Path, fv: &ForgetVector) -> Result<()> {
    write_atomic(path, &encode_ffv(fv))
}

pub fn load_ffv(path: &Path) -> Result<ForgetVector> {
    decode_ffv(&read_bytes(path)?)
}

/// Coefficients of a combination plus the digests of the bank entries they
/// weight, in bank order.
#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientFile {
    pub coeffs: Vec<f32>,
    pub bank_digests: Vec<Digest>,
}

pub fn encode_coefficients(c: &CoefficientFile) -> Result<Vec<u8>> {
    if c.coeffs.len() != c.bank_digests.len() {
        return Err(Error::Format("one digest per coefficient is required".into()));
    }
    let mut w = Writer::with_header(COEF_MAGIC, VERSION);
    w.u32(c.coeffs.len() as u32);
    w.f32s(&c.coeffs);
    for d in &c.bank_digests {
        w.digest(d);
    }
    Ok(w.0)
}

pub fn decode_coefficients(bytes: &[u8]) -> Result<CoefficientFile> {
    let mut r = Reader::open(bytes, COEF_MAGIC, VERSION, "coefficient file")?;
    let n = r.u32()? as usize;
    if r.rest().len() != n * 36 {
        return Err(Error::Format(format!("coefficient file: expected {} payload bytes, found {}", n * 36, r.rest().len())));
    }
    let coeffs = r.f32s(n)?;
    let bank_digests = (0..n).map(|_| r.digest()).collect::<Result<_>>()?;
    r.finish()?;
    Ok(CoefficientFile { coeffs, bank_digests })
}

pub fn save_coefficients(path: &Path, c: &CoefficientFile) -> Result<()> {
    write_atomic(path, &encode_coefficients(c)?)
}

pub fn load_coefficients(path: &Path) -> Result<CoefficientFile> {
    decode_coefficients(&read_bytes(path)?)
}

/// Portable graymap (binary P5, 8-bit) of values in `[0, 1]`.
pub fn encode_pgm(values: &[f64], width: usize, height: usize) -> Result<Vec<u8>> {
    if values.len() != width * height {
        return Err(Error::Format(format!("{} values for a {width}x{height} image", values.len())));
    }
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    out.extend(values.iter().map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8));
    Ok(out)
}

pub fn write_pgm(path: &Path, values: &[f64], width: usize, height: usize) -> Result<()> {
    write_atomic(path, &encode_pgm(values, width, height)?)
}
