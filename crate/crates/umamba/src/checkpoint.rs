//! Weight files: "UMTS" magic, a textual header (config lines, then one line
//! per parameter with name, shape, and scalar offset), a "data" marker, and
//! the concatenated little-endian 32-bit float payload in header order.
//!
//! Values are stored at single precision, so save -> load -> save reproduces
//! the file byte for byte.

use crate::error::{Error, Result};
use crate::model::{Forecaster, LinearModel, ModelConfig, RepeatLast, UmambaModel};
use crate::params::ParamStore;
use crate::rng::SeedStreams;
use crate::tensor::Tensor;
use std::path::Path;

pub const MAGIC: &[u8] = b"UMTS";
pub const VERSION: u32 = 1;

fn shape_str(shape: &[usize]) -> String {
    shape.iter().map(|d| d.to_string()).collect::<Vec<_>>().join("x")
}

fn parse_shape(s: &str) -> Result<Vec<usize>> {
    s.split('x')
        .map(|d| d.parse::<usize>().map_err(|_| Error::Checkpoint(format!("bad shape field '{s}'"))))
        .collect()
}

/// Serialize header lines and every parameter (store order) to bytes.
pub fn to_bytes(header: &[(String, String)], store: &ParamStore) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.push(b'\n');
    out.extend_from_slice(format!("version {VERSION}\n").as_bytes());
    for (k, v) in header {
        out.extend_from_slice(format!("cfg {k} {v}\n").as_bytes());
    }
    let mut offset = 0usize;
    for (name, t) in store.iter() {
        out.extend_from_slice(format!("param {name} {} {offset}\n", shape_str(t.shape())).as_bytes());
        offset += t.numel();
    }
    out.extend_from_slice(b"data\n");
    for (_, t) in store.iter() {
        for &v in t.data() {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    out
}

/// Parse bytes back into header lines and named tensors (f32 widened to f64).
pub fn from_bytes(bytes: &[u8]) -> Result<(Vec<(String, String)>, Vec<(String, Tensor)>)> {
    let mut pos = 0usize;
    let mut next_line = |bytes: &[u8]| -> Result<String> {
        let start = pos;
        while pos < bytes.len() && bytes[pos] != b'\n' {
            pos += 1;
        }
        if pos >= bytes.len() {
            return Err(Error::Checkpoint("truncated header".into()));
        }
        let line = std::str::from_utf8(&bytes[start..pos])
            .map_err(|_| Error::Checkpoint("non-utf8 header".into()))?
            .to_string();
        pos += 1;
        Ok(line)
    };

    if next_line(bytes)?.as_bytes() != MAGIC {
        return Err(Error::Checkpoint("bad magic, not a weight file".into()));
    }
    let version_line = next_line(bytes)?;
    let version = version_line
        .strip_prefix("version ")
        .and_then(|v| v.parse::<u32>().ok())
        .ok_or_else(|| Error::Checkpoint(format!("bad version line '{version_line}'")))?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }

    let mut header = Vec::new();
    let mut specs: Vec<(String, Vec<usize>, usize)> = Vec::new();
    loop {
        let line = next_line(bytes)?;
        if line == "data" {
            break;
        } else if let Some(rest) = line.strip_prefix("cfg ") {
            let (k, v) = rest
                .split_once(' ')
                .ok_or_else(|| Error::Checkpoint(format!("bad cfg line '{line}'")))?;
            header.push((k.to_string(), v.to_string()));
        } else if let Some(rest) = line.strip_prefix("param ") {
            let fields: Vec<&str> = rest.split(' ').collect();
            if fields.len() != 3 {
                return Err(Error::Checkpoint(format!("bad param line '{line}'")));
            }
            let shape = parse_shape(fields[1])?;
            let offset = fields[2]
                .parse::<usize>()
                .map_err(|_| Error::Checkpoint(format!("bad offset in '{line}'")))?;
            specs.push((fields[0].to_string(), shape, offset));
        } else {
            return Err(Error::Checkpoint(format!("unexpected header line '{line}'")));
        }
    }

    let payload = &bytes[pos..];
    let total: usize = specs.iter().map(|(_, s, _)| s.iter().product::<usize>()).sum();
    if payload.len() != total * 4 {
        return Err(Error::Checkpoint(format!(
            "payload holds {} bytes but the header promises {}",
            payload.len(),
            total * 4
        )));
    }

    let mut running = 0usize;
    let mut out = Vec::with_capacity(specs.len());
    for (name, shape, offset) in specs {
        if offset != running {
            return Err(Error::Checkpoint(format!(
                "parameter {name} declares offset {offset}, expected {running}"
            )));
        }
        let numel: usize = shape.iter().product();
        let mut data = Vec::with_capacity(numel);
        for i in 0..numel {
            let at = (running + i) * 4;
            let v = f32::from_le_bytes(payload[at..at + 4].try_into().unwrap()) as f64;
            if !v.is_finite() {
                return Err(Error::Checkpoint(format!("non-finite value in parameter {name}")));
            }
            data.push(v);
        }
        running += numel;
        out.push((name, Tensor::from_parts(shape, data)));
    }
    Ok((header, out))
}

pub fn save(path: &Path, header: &[(String, String)], store: &ParamStore) -> Result<()> {
    std::fs::write(path, to_bytes(header, store))?;
    Ok(())
}

pub fn load(path: &Path) -> Result<(Vec<(String, String)>, Vec<(String, Tensor)>)> {
    from_bytes(&std::fs::read(path)?)
}

/// Rebuild the forecaster a checkpoint describes and load its weights.
pub fn load_model(path: &Path) -> Result<Box<dyn Forecaster + Send + Sync>> {
    let (header, tensors) = load(path)?;
    let get = |key: &str| -> Result<&str> {
        header
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
            .ok_or_else(|| Error::Checkpoint(format!("missing header key {key}")))
    };
    let dim = |key: &str| -> Result<usize> {
        get(key)?.parse().map_err(|_| Error::Checkpoint(format!("bad header value {key}")))
    };
    // The init rng never shows through: every tensor is overwritten below.
    let mut rng = SeedStreams::new(0).stream(crate::rng::STREAM_INIT);
    let mut model: Box<dyn Forecaster + Send + Sync> = match get("kind")? {
        "umamba" => Box::new(UmambaModel::new(ModelConfig::from_pairs(&header)?, &mut rng)?),
        "linear" => Box::new(LinearModel::new(dim("n_channels")?, dim("lookback")?, dim("horizon")?, &mut rng)),
        "repeat_last" => Box::new(RepeatLast::new(dim("n_channels")?, dim("lookback")?, dim("horizon")?)),
        other => return Err(Error::Checkpoint(format!("unknown model kind {other}"))),
    };
    model.params_mut().load_from(&tensors)?;
    Ok(model)
}
