//! Checkpoints: a text manifest (config plus tensor table) followed by the raw
//! little-endian f32 parameter data. Loading restores forward passes bit-exactly.

use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};

use super::{tensor_specs, Model, ModelConfig};

const MAGIC: &str = "lenprobe-checkpoint-v1";

pub fn save_checkpoint(model: &Model, path: &Path) -> Result<()> {
    let cfg = &model.config;
    let mut manifest = String::new();
    manifest.push_str(MAGIC);
    manifest.push('\n');
    manifest.push_str(&format!(
        "config n_layers={} d_model={} n_heads={} d_ffn={} max_context={} vocab_size={} seed={}\n",
        cfg.n_layers, cfg.d_model, cfg.n_heads, cfg.d_ffn, cfg.max_context, cfg.vocab_size, cfg.seed
    ));
    for spec in &model.specs {
        manifest.push_str(&format!(
            "tensor {} {} {} {}\n",
            spec.name, spec.rows, spec.cols, spec.offset
        ));
    }
    manifest.push_str(&format!("data f32le {}\n", model.params.len()));

    let mut file = std::fs::File::create(path)?;
    file.write_all(manifest.as_bytes())?;
    let mut bytes = Vec::with_capacity(model.params.len() * 4);
    for v in &model.params {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    file.write_all(&bytes)?;
    file.flush()?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Model> {
    let raw = std::fs::read(path)?;
    // manifest is everything up to and including the `data` line
    let data_start = find_data_offset(&raw)?;
    let manifest = std::str::from_utf8(&raw[..data_start])
        .map_err(|_| Error::Corruption("checkpoint manifest is not UTF-8".into()))?;
    let mut lines = manifest.lines();
    if lines.next() != Some(MAGIC) {
        return Err(Error::Corruption("not a lenprobe checkpoint".into()));
    }
    let config_line = lines
        .next()
        .ok_or_else(|| Error::Corruption("checkpoint missing config line".into()))?;
    let config = parse_config_line(config_line)?;
    config.validate()?;
    let specs = tensor_specs(&config);

    let mut declared = Vec::new();
    let mut n_floats = None;
    for line in lines {
        if let Some(rest) = line.strip_prefix("tensor ") {
            let parts: Vec<&str> = rest.split(' ').collect();
            if parts.len() != 4 {
                return Err(Error::Corruption(format!("bad tensor line `{line}`")));
            }
            let parse = |s: &str| -> Result<usize> {
                s.parse().map_err(|_| Error::Corruption(format!("bad tensor line `{line}`")))
            };
            declared.push((parts[0].to_string(), parse(parts[1])?, parse(parts[2])?, parse(parts[3])?));
        } else if let Some(rest) = line.strip_prefix("data f32le ") {
            n_floats = Some(
                rest.trim()
                    .parse::<usize>()
                    .map_err(|_| Error::Corruption("bad data line".into()))?,
            );
        }
    }
    let n_floats = n_floats.ok_or_else(|| Error::Corruption("checkpoint missing data line".into()))?;
    let expected: usize = specs.iter().map(|s| s.len()).sum();
    if n_floats != expected {
        return Err(Error::Corruption(format!(
            "checkpoint declares {n_floats} floats, config requires {expected}"
        )));
    }
    if declared.len() != specs.len()
        || declared.iter().zip(specs.iter()).any(|(d, s)| {
            d.0 != s.name || d.1 != s.rows || d.2 != s.cols || d.3 != s.offset
        })
    {
        return Err(Error::Corruption("tensor table does not match configuration".into()));
    }

    let data = &raw[data_start..];
    if data.len() != n_floats * 4 {
        return Err(Error::Corruption(format!(
            "checkpoint data is {} bytes, expected {}",
            data.len(),
            n_floats * 4
        )));
    }
    let mut params = Vec::with_capacity(n_floats);
    for chunk in data.chunks_exact(4) {
        params.push(f32::from_le_bytes([chunk[0], chunk[1], chunk[2], chunk[3]]));
    }
    Model::from_flat(config, params, specs)
}

fn find_data_offset(raw: &[u8]) -> Result<usize> {
    // scan line by line until the data header; binary payload follows it
    let mut pos = 0usize;
    while pos < raw.len() {
        let end = raw[pos..]
            .iter()
            .position(|&b| b == b'\n')
            .map(|i| pos + i)
            .ok_or_else(|| Error::Corruption("truncated checkpoint header".into()))?;
        let line = &raw[pos..end];
        if line.starts_with(b"data f32le ") {
            return Ok(end + 1);
        }
        pos = end + 1;
    }
    Err(Error::Corruption("checkpoint has no data section".into()))
}

fn parse_config_line(line: &str) -> Result<ModelConfig> {
    let rest = line
        .strip_prefix("config ")
        .ok_or_else(|| Error::Corruption("checkpoint missing config line".into()))?;
    let mut cfg = ModelConfig::default();
    for kv in rest.split(' ') {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| Error::Corruption(format!("bad config entry `{kv}`")))?;
        let parse_usize =
            || v.parse::<usize>().map_err(|_| Error::Corruption(format!("bad config entry `{kv}`")));
        match k {
            "n_layers" => cfg.n_layers = parse_usize()?,
            "d_model" => cfg.d_model = parse_usize()?,
            "n_heads" => cfg.n_heads = parse_usize()?,
            "d_ffn" => cfg.d_ffn = parse_usize()?,
            "max_context" => cfg.max_context = parse_usize()?,
            "vocab_size" => cfg.vocab_size = parse_usize()?,
            "seed" => {
                cfg.seed = v
                    .parse::<u64>()
                    .map_err(|_| Error::Corruption(format!("bad config entry `{kv}`")))?
            }
            _ => return Err(Error::Corruption(format!("unknown config key `{k}`"))),
        }
    }
    Ok(cfg)
}
