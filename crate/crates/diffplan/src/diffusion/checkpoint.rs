//! Checkpoint persistence.
//!
//! Layout: a text header (format line, `key=value` metadata, then one
//! `tensor <name> <dims...>` line per tensor) terminated by a single zero
//! byte, followed by every tensor's values concatenated as little-endian
//! 32-bit floats in table order. The header is readable on its own.

use std::io::Read;
use std::path::Path;

use super::net::{DenoiserParams, NetConfig};
use crate::{Error, Result};

pub const CHECKPOINT_FORMAT: &str = "diffplan-checkpoint-v1";

#[derive(Debug, Clone, PartialEq)]
pub struct CheckpointMeta {
    /// Architecture descriptor, e.g. `tconv_unet widths=32,64,128 temb=32 kernel=5 cond=1`.
    pub arch: String,
    pub m: usize,
    pub h: usize,
    pub timesteps: usize,
    pub beta_max: f64,
    pub seed: u64,
    pub steps: usize,
}

/// Parsed header: metadata plus the tensor name/shape table.
#[derive(Debug, Clone)]
pub struct CheckpointHeader {
    pub meta: CheckpointMeta,
    pub tensors: Vec<(String, Vec<usize>)>,
}

impl CheckpointHeader {
    pub fn param_count(&self) -> usize {
        self.tensors.iter().map(|(_, shape)| shape.iter().product::<usize>()).sum()
    }

    fn describe(&self) -> String {
        let mut s = format!(
            "{} m={} h={} T={} beta_max={} tensors={}",
            self.meta.arch,
            self.meta.m,
            self.meta.h,
            self.meta.timesteps,
            self.meta.beta_max,
            self.tensors.len()
        );
        for (name, shape) in &self.tensors {
            s.push_str(&format!(" {name}{shape:?}"));
        }
        s
    }
}

fn header_text(meta: &CheckpointMeta, params: &DenoiserParams) -> String {
    let mut text = String::new();
    text.push_str(CHECKPOINT_FORMAT);
    text.push('\n');
    text.push_str(&format!("arch={}\n", meta.arch));
    text.push_str(&format!("m={}\n", meta.m));
    text.push_str(&format!("h={}\n", meta.h));
    text.push_str(&format!("T={}\n", meta.timesteps));
    text.push_str(&format!("beta_max={}\n", meta.beta_max));
    text.push_str(&format!("seed={}\n", meta.seed));
    text.push_str(&format!("steps={}\n", meta.steps));
    let tensors = params.tensors();
    text.push_str(&format!("tensors={}\n", tensors.len()));
    for t in tensors {
        text.push_str("tensor ");
        text.push_str(&t.name);
        for d in &t.shape {
            text.push_str(&format!(" {d}"));
        }
        text.push('\n');
    }
    text
}

pub fn save_checkpoint(path: &Path, params: &DenoiserParams, meta: &CheckpointMeta) -> Result<()> {
    let mut bytes = header_text(meta, params).into_bytes();
    bytes.push(0);
    for tensor in params.tensors() {
        for &v in &tensor.data {
            bytes.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    std::fs::write(path, bytes)?;
    Ok(())
}

fn parse_header(text: &str) -> Result<CheckpointHeader> {
    let mut lines = text.lines();
    let first = lines.next().unwrap_or_default();
    if first != CHECKPOINT_FORMAT {
        return Err(Error::invalid("checkpoint", format!("bad format line {first:?}")));
    }
    let mut arch = None;
    let mut m = None;
    let mut h = None;
    let mut timesteps = None;
    let mut beta_max = None;
    let mut seed = None;
    let mut steps = None;
    let mut tensor_count = None;
    let mut tensors = Vec::new();
    for line in lines {
        if let Some(rest) = line.strip_prefix("tensor ") {
            let mut parts = rest.split_whitespace();
            let name = parts
                .next()
                .ok_or_else(|| Error::invalid("checkpoint.tensor", "missing name"))?
                .to_string();
            let shape: Vec<usize> = parts
                .map(|p| {
                    p.parse::<usize>()
                        .map_err(|_| Error::invalid("checkpoint.tensor", format!("bad dim {p:?}")))
                })
                .collect::<Result<_>>()?;
            tensors.push((name, shape));
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| Error::invalid("checkpoint", format!("malformed line {line:?}")))?;
        let bad = |k: &str| Error::invalid("checkpoint", format!("bad value for {k}"));
        match key {
            "arch" => arch = Some(value.to_string()),
            "m" => m = Some(value.parse().map_err(|_| bad("m"))?),
            "h" => h = Some(value.parse().map_err(|_| bad("h"))?),
            "T" => timesteps = Some(value.parse().map_err(|_| bad("T"))?),
            "beta_max" => beta_max = Some(value.parse().map_err(|_| bad("beta_max"))?),
            "seed" => seed = Some(value.parse().map_err(|_| bad("seed"))?),
            "steps" => steps = Some(value.parse().map_err(|_| bad("steps"))?),
            "tensors" => tensor_count = Some(value.parse().map_err(|_| bad("tensors"))?),
            _ => return Err(Error::invalid("checkpoint", format!("unknown key {key:?}"))),
        }
    }
    let missing = |k: &str| Error::invalid("checkpoint", format!("missing key {k}"));
    let header = CheckpointHeader {
        meta: CheckpointMeta {
            arch: arch.ok_or_else(|| missing("arch"))?,
            m: m.ok_or_else(|| missing("m"))?,
            h: h.ok_or_else(|| missing("h"))?,
            timesteps: timesteps.ok_or_else(|| missing("T"))?,
            beta_max: beta_max.ok_or_else(|| missing("beta_max"))?,
            seed: seed.ok_or_else(|| missing("seed"))?,
            steps: steps.ok_or_else(|| missing("steps"))?,
        },
        tensors,
    };
    if Some(header.tensors.len()) != tensor_count {
        return Err(Error::invalid(
            "checkpoint.tensors",
            format!("table lists {} tensors, header says {tensor_count:?}", header.tensors.len()),
        ));
    }
    Ok(header)
}

/// Read only the header (metadata and tensor table); the payload is never
/// touched, so this is cheap even for large checkpoints.
pub fn read_checkpoint_header(path: &Path) -> Result<CheckpointHeader> {
    let file = std::fs::File::open(path)?;
    let mut text = Vec::new();
    for byte in file.bytes() {
        let byte = byte?;
        if byte == 0 {
            let text = String::from_utf8(text)
                .map_err(|_| Error::invalid("checkpoint", "header is not UTF-8"))?;
            return parse_header(&text);
        }
        text.push(byte);
        if text.len() > 1 << 20 {
            break;
        }
    }
    Err(Error::invalid("checkpoint", "no header terminator found"))
}

/// The network config implied by a header's arch descriptor.
fn net_config_of(header: &CheckpointHeader) -> Result<NetConfig> {
    // Strip trailing informational fields (e.g. cond=) that NetConfig
    // does not consume.
    let desc: String = header
        .meta
        .arch
        .split_whitespace()
        .filter(|part| !part.starts_with("cond="))
        .collect::<Vec<_>>()
        .join(" ");
    NetConfig::from_descriptor(&desc, header.meta.m, header.meta.h)
}

pub fn load_checkpoint(path: &Path) -> Result<(DenoiserParams, CheckpointMeta)> {
    let bytes = std::fs::read(path)?;
    let zero = bytes
        .iter()
        .position(|&b| b == 0)
        .ok_or_else(|| Error::invalid("checkpoint", "no header terminator found"))?;
    let text = std::str::from_utf8(&bytes[..zero])
        .map_err(|_| Error::invalid("checkpoint", "header is not UTF-8"))?;
    let header = parse_header(text)?;
    let cfg = net_config_of(&header)?;
    // An init with any seed gives the right shapes; the payload overwrites
    // every value.
    let mut params = DenoiserParams::init(cfg, 0)?;

    let expected: Vec<(String, Vec<usize>)> =
        params.tensors().iter().map(|t| (t.name.clone(), t.shape.clone())).collect();
    if expected != header.tensors {
        let expected_header = CheckpointHeader { meta: header.meta.clone(), tensors: expected };
        return Err(Error::CheckpointMismatch {
            expected: expected_header.describe(),
            found: header.describe(),
        });
    }

    let payload = &bytes[zero + 1..];
    let need = header.param_count() * 4;
    if payload.len() != need {
        return Err(Error::invalid(
            "checkpoint",
            format!("payload holds {} bytes, tensor table needs {need} (truncated or padded file)", payload.len()),
        ));
    }
    let mut offset = 0;
    for tensor in params.tensors_mut() {
        for v in tensor.data.iter_mut() {
            let raw: [u8; 4] = payload[offset..offset + 4].try_into().unwrap();
            *v = f32::from_le_bytes(raw) as f64;
            offset += 4;
        }
    }
    Ok((params, header.meta))
}

#[cfg(test)]
mod tests {
    use super::super::net::quantize;
    use super::*;
    use crate::rng::stream;
    use rand::Rng;

    fn sample_params(seed: u64) -> (DenoiserParams, CheckpointMeta) {
        let cfg = NetConfig { m: 2, h: 8, widths: [4, 8, 8], temb: 8, kernel: 3 };
        let mut params = DenoiserParams::init(cfg, seed).unwrap();
        let mut rng = stream(seed, "ckpt_fill", 0, 0);
        for t in params.tensors_mut() {
            for v in t.data.iter_mut() {
                *v = quantize(rng.gen_range(-1.0..1.0));
            }
        }
        let meta = CheckpointMeta {
            arch: format!("{} cond=1", cfg.descriptor()),
            m: 2,
            h: 8,
            timesteps: 16,
            beta_max: 0.02,
            seed,
            steps: 123,
        };
        (params, meta)
    }

    #[test]
    fn round_trip_is_bit_identical() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("net.ckpt");
        let (params, meta) = sample_params(1);
        save_checkpoint(&path, &params, &meta).unwrap();
        let (loaded, loaded_meta) = load_checkpoint(&path).unwrap();
        assert_eq!(loaded_meta, meta);
        for (a, b) in params.tensors().iter().zip(loaded.tensors().iter()) {
            assert_eq!(a.data, b.data, "tensor {}", a.name);
        }
        // Saving the load gives the same bytes.
        let path2 = dir.path().join("net2.ckpt");
        save_checkpoint(&path2, &loaded, &loaded_meta).unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(&path2).unwrap());
    }

    #[test]
    fn truncated_file_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("net.ckpt");
        let (params, meta) = sample_params(2);
        save_checkpoint(&path, &params, &meta).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 9]).unwrap();
        let err = load_checkpoint(&path).unwrap_err();
        assert!(err.to_string().contains("truncated"), "{err}");
    }

    #[test]
    fn header_reads_without_payload_and_counts_parameters() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("net.ckpt");
        let (params, meta) = sample_params(3);
        save_checkpoint(&path, &params, &meta).unwrap();
        let header = read_checkpoint_header(&path).unwrap();
        assert_eq!(header.meta, meta);
        assert_eq!(header.param_count(), params.param_count());
    }

    #[test]
    fn tampered_tensor_table_reports_both_descriptors() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("net.ckpt");
        let (params, meta) = sample_params(4);
        save_checkpoint(&path, &params, &meta).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        // Rename a tensor in the header text.
        let zero = bytes.iter().position(|&b| b == 0).unwrap();
        let text = std::str::from_utf8(&bytes[..zero]).unwrap();
        let tampered = text.replace("tensor enc0.conv1.w", "tensor enc0.sneaky.w");
        let mut out = tampered.into_bytes();
        out.push(0);
        out.extend_from_slice(&bytes[zero + 1..]);
        std::fs::write(&path, out).unwrap();
        match load_checkpoint(&path).unwrap_err() {
            Error::CheckpointMismatch { expected, found } => {
                assert!(expected.contains("enc0.conv1.w"));
                assert!(found.contains("enc0.sneaky.w"));
            }
            other => panic!("unexpected error {other:?}"),
        }
    }
}
