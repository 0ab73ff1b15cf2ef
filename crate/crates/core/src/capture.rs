//! Activation capture during generation.
//!
//! Each record is one tap vector, labeled with the 1-based generation time
//! step of the token that forward pass produced. Prompt positions contribute
//! nothing; the step that emits EOS does.

use std::io::Read;
use std::path::Path;

use crate::error::{Error, Result};
use crate::hashing::Hasher;
use crate::model::{generate, CaptureRequest, DecodeConfig, Model, TapPoint};
use crate::par::run_indexed;
use crate::rng::Rng;
use crate::vocab::TokenSequence;

#[derive(Debug, Clone, PartialEq)]
pub struct ActivationRecord {
    pub example_id: u32,
    /// 1-based layer index (first layer = 1).
    pub layer: u16,
    pub tap: TapPoint,
    /// 1-based generation step of the token this forward pass produced.
    pub timestep: u32,
    pub vector: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct Provenance {
    pub checkpoint_hash: String,
    pub prompt_kind: String,
    pub decode: String,
}

/// Records grouped by (layer, tap), split 90/10 by example.
#[derive(Debug, Clone, PartialEq)]
pub struct ActivationDataset {
    pub d_model: usize,
    pub layers: Vec<u16>,
    pub taps: Vec<TapPoint>,
    /// Sorted by (layer, tap, example_id, timestep).
    pub records: Vec<ActivationRecord>,
    pub provenance: Provenance,
    pub split_seed: u64,
    pub train_examples: Vec<u32>,
    pub val_examples: Vec<u32>,
}

impl ActivationDataset {
    /// Records of one (layer, tap) cell.
    pub fn cell(&self, layer: u16, tap: TapPoint) -> &[ActivationRecord] {
        let start = self
            .records
            .partition_point(|r| (r.layer, r.tap.index()) < (layer, tap.index()));
        let end = self
            .records
            .partition_point(|r| (r.layer, r.tap.index()) <= (layer, tap.index()));
        &self.records[start..end]
    }

    pub fn records_per_cell(&self) -> usize {
        let cells = self.layers.len() * self.taps.len();
        if cells == 0 {
            0
        } else {
            self.records.len() / cells
        }
    }

    pub fn provenance_matches(&self, checkpoint_hash: &str) -> bool {
        self.provenance.checkpoint_hash == checkpoint_hash
    }
}

/// Generates from every prompt and collects tap activations.
///
/// One record per generated token per requested (layer, tap); the vector is
/// the tap value at the position whose forward pass produced that token.
/// Examples that generate nothing contribute no records.
pub fn collect_states(
    model: &Model,
    prompts: &[(u32, TokenSequence)],
    layers: &[u16],
    taps: &[TapPoint],
    decode: &DecodeConfig,
    split_seed: u64,
    provenance: Provenance,
    threads: usize,
) -> Result<ActivationDataset> {
    for &l in layers {
        if l == 0 || l as usize > model.config.n_layers {
            return Err(Error::Config(format!(
                "layer {l} outside 1..={}",
                model.config.n_layers
            )));
        }
    }
    let request = CaptureRequest { layers: layers.to_vec(), taps: taps.to_vec() };
    let per_prompt: Vec<Result<Vec<ActivationRecord>>> =
        run_indexed(prompts.len(), threads, |i| {
            let (example_id, prompt) = &prompts[i];
            let out = generate(model, prompt, &decode.for_example(*example_id), Some(&request), None)?;
            let mut records = Vec::new();
            for step in &out.steps {
                for (layer, tap, vector) in &step.taps {
                    records.push(ActivationRecord {
                        example_id: *example_id,
                        layer: *layer,
                        tap: *tap,
                        timestep: step.timestep,
                        vector: vector.clone(),
                    });
                }
            }
            Ok(records)
        });

    let mut records = Vec::new();
    for r in per_prompt {
        records.extend(r?);
    }
    records.sort_by_key(|r| (r.layer, r.tap.index(), r.example_id, r.timestep));

    // 90/10 split by example over the examples that produced records
    let mut example_ids: Vec<u32> = records.iter().map(|r| r.example_id).collect();
    example_ids.sort_unstable();
    example_ids.dedup();
    Rng::new(split_seed).shuffle(&mut example_ids);
    let n_train = if example_ids.len() >= 2 {
        (((example_ids.len() as f64) * 0.9).floor() as usize)
            .clamp(1, example_ids.len() - 1)
    } else {
        example_ids.len()
    };
    let (train, val) = example_ids.split_at(n_train);

    let mut layers_sorted = layers.to_vec();
    layers_sorted.sort_unstable();
    let mut taps_sorted = taps.to_vec();
    taps_sorted.sort_by_key(|t| t.index());

    Ok(ActivationDataset {
        d_model: model.config.d_model,
        layers: layers_sorted,
        taps: taps_sorted,
        records,
        provenance,
        split_seed,
        train_examples: train.to_vec(),
        val_examples: val.to_vec(),
    })
}

// ---------------------------------------------------------------------------
// Binary dataset file
// ---------------------------------------------------------------------------
//
// Little-endian layout:
//   magic "LPACTDS1" | version u32 | d_model u32
//   n_layers u32, layer u16 ...
//   n_taps u32, tap u8 ...
//   provenance: 3 × (len u32, utf8 bytes)
//   split_seed u64
//   n_train u32, ids u32... | n_val u32, ids u32...
//   n_records u64
//   records: example_id u32, layer u16, tap u8, timestep u32, vector f32 × d_model
//   checksum u64 (FNV-1a of everything before it)

const MAGIC: &[u8; 8] = b"LPACTDS1";
const VERSION: u32 = 1;

struct ByteWriter {
    buf: Vec<u8>,
}

impl ByteWriter {
    fn new() -> Self {
        Self { buf: Vec::new() }
    }
    fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }
    fn u16(&mut self, v: u16) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn f32(&mut self, v: f32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn str(&mut self, s: &str) {
        self.u32(s.len() as u32);
        self.buf.extend_from_slice(s.as_bytes());
    }
}

struct ByteReader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> ByteReader<'a> {
    fn new(buf: &'a [u8]) -> Self {
        Self { buf, pos: 0 }
    }
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::Corruption("dataset file truncated".into()));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn str(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec())
            .map_err(|_| Error::Corruption("dataset string is not UTF-8".into()))
    }
}

pub fn write_dataset(dataset: &ActivationDataset, path: &Path) -> Result<()> {
    let mut w = ByteWriter::new();
    w.buf.extend_from_slice(MAGIC);
    w.u32(VERSION);
    w.u32(dataset.d_model as u32);
    w.u32(dataset.layers.len() as u32);
    for &l in &dataset.layers {
        w.u16(l);
    }
    w.u32(dataset.taps.len() as u32);
    for &t in &dataset.taps {
        w.u8(t.index() as u8);
    }
    w.str(&dataset.provenance.checkpoint_hash);
    w.str(&dataset.provenance.prompt_kind);
    w.str(&dataset.provenance.decode);
    w.u64(dataset.split_seed);
    w.u32(dataset.train_examples.len() as u32);
    for &id in &dataset.train_examples {
        w.u32(id);
    }
    w.u32(dataset.val_examples.len() as u32);
    for &id in &dataset.val_examples {
        w.u32(id);
    }
    w.u64(dataset.records.len() as u64);
    for r in &dataset.records {
        w.u32(r.example_id);
        w.u16(r.layer);
        w.u8(r.tap.index() as u8);
        w.u32(r.timestep);
        for &v in &r.vector {
            w.f32(v);
        }
    }
    let mut hasher = Hasher::new();
    hasher.update(&w.buf);
    w.u64(hasher.finish());
    std::fs::write(path, &w.buf)?;
    Ok(())
}

pub fn read_dataset(path: &Path) -> Result<ActivationDataset> {
    let mut raw = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut raw)?;
    if raw.len() < 8 + 8 {
        return Err(Error::Corruption("dataset file truncated".into()));
    }
    let (body, tail) = raw.split_at(raw.len() - 8);
    let declared = u64::from_le_bytes(tail.try_into().unwrap());
    let mut hasher = Hasher::new();
    hasher.update(body);
    if hasher.finish() != declared {
        return Err(Error::Corruption("dataset checksum mismatch".into()));
    }

    let mut r = ByteReader::new(body);
    if r.take(8)? != MAGIC {
        return Err(Error::Corruption("not a lenprobe activation dataset".into()));
    }
    if r.u32()? != VERSION {
        return Err(Error::Corruption("unsupported dataset version".into()));
    }
    let d_model = r.u32()? as usize;
    let n_layers = r.u32()? as usize;
    let layers: Vec<u16> = (0..n_layers).map(|_| r.u16()).collect::<Result<_>>()?;
    let n_taps = r.u32()? as usize;
    let taps: Vec<TapPoint> = (0..n_taps)
        .map(|_| {
            let idx = r.u8()? as usize;
            TapPoint::from_index(idx)
                .ok_or_else(|| Error::Corruption(format!("bad tap index {idx}")))
        })
        .collect::<Result<_>>()?;
    let provenance = Provenance {
        checkpoint_hash: r.str()?,
        prompt_kind: r.str()?,
        decode: r.str()?,
    };
    let split_seed = r.u64()?;
    let n_train = r.u32()? as usize;
    let train_examples: Vec<u32> = (0..n_train).map(|_| r.u32()).collect::<Result<_>>()?;
    let n_val = r.u32()? as usize;
    let val_examples: Vec<u32> = (0..n_val).map(|_| r.u32()).collect::<Result<_>>()?;
    let n_records = r.u64()? as usize;
    let mut records = Vec::with_capacity(n_records);
    for _ in 0..n_records {
        let example_id = r.u32()?;
        let layer = r.u16()?;
        let tap_idx = r.u8()? as usize;
        let tap = TapPoint::from_index(tap_idx)
            .ok_or_else(|| Error::Corruption(format!("bad tap index {tap_idx}")))?;
        let timestep = r.u32()?;
        let mut vector = Vec::with_capacity(d_model);
        for _ in 0..d_model {
            vector.push(r.f32()?);
        }
        records.push(ActivationRecord { example_id, layer, tap, timestep, vector });
    }
    if r.pos != body.len() {
        return Err(Error::Corruption("trailing bytes in dataset file".into()));
    }
    Ok(ActivationDataset {
        d_model,
        layers,
        taps,
        records,
        provenance,
        split_seed,
        train_examples,
        val_examples,
    })
}
