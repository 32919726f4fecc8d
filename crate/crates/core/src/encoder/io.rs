//! Weight-file format: a JSON manifest plus a flat binary blob.
//!
//! The manifest lists every tensor (name, shape, bit width, scale, clipping
//! bound where one exists, byte offset, byte length) and the calibrated
//! activation ranges. The blob holds the payloads in manifest order, each
//! starting at a 64-byte-aligned offset: 8-bit tensors as raw `i8` bytes,
//! 32-bit tensors as little-endian `i32` words.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quant::{QParams, QTensor};

use super::{ActivationParams, EncoderDims, EncoderWeights};

const FORMAT_VERSION: u32 = 1;
const ALIGNMENT: usize = 64;

#[derive(Serialize, Deserialize)]
struct Manifest {
    format_version: u32,
    dims: DimsEntry,
    tensors: Vec<TensorEntry>,
    ranges: Vec<RangeEntry>,
}

#[derive(Serialize, Deserialize)]
struct DimsEntry {
    seq: usize,
    hidden: usize,
    heads: usize,
    ffn: usize,
}

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    bits: u8,
    scale: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    alpha: Option<f64>,
    offset: usize,
    byte_len: usize,
}

#[derive(Serialize, Deserialize)]
struct RangeEntry {
    name: String,
    alpha: f64,
}

fn align_up(v: usize) -> usize {
    v.div_ceil(ALIGNMENT) * ALIGNMENT
}

struct BlobWriter {
    bytes: Vec<u8>,
    entries: Vec<TensorEntry>,
}

impl BlobWriter {
    fn new() -> Self {
        Self {
            bytes: Vec::new(),
            entries: Vec::new(),
        }
    }

    fn push_q8(&mut self, name: &str, t: &QTensor) {
        let offset = align_up(self.bytes.len());
        self.bytes.resize(offset, 0);
        self.bytes.extend(t.data().iter().map(|&v| v as i8 as u8));
        self.entries.push(TensorEntry {
            name: name.to_string(),
            shape: t.shape().to_vec(),
            bits: 8,
            scale: t.scale(),
            alpha: Some(t.params().alpha()),
            offset,
            byte_len: t.len(),
        });
    }

    fn push_i32(&mut self, name: &str, data: &[i32], shape: Vec<usize>, scale: f64) {
        let offset = align_up(self.bytes.len());
        self.bytes.resize(offset, 0);
        for &v in data {
            self.bytes.extend_from_slice(&v.to_le_bytes());
        }
        self.entries.push(TensorEntry {
            name: name.to_string(),
            shape,
            bits: 32,
            scale,
            alpha: None,
            offset,
            byte_len: data.len() * 4,
        });
    }
}

/// Writes the manifest (JSON) and payload blob for a quantized layer.
pub fn save_weights(w: &EncoderWeights, manifest_path: &Path, blob_path: &Path) -> Result<()> {
    let mut blob = BlobWriter::new();
    let a = &w.acts;
    let ln_s = super::ln_frac_scale();

    blob.push_q8("wq", &w.wq);
    blob.push_i32("bq", &w.bq, vec![w.dims.hidden], a.x.scale() * w.wq.scale());
    blob.push_q8("wk", &w.wk);
    blob.push_i32("bk", &w.bk, vec![w.dims.hidden], a.x.scale() * w.wk.scale());
    blob.push_q8("wv", &w.wv);
    blob.push_i32("bv", &w.bv, vec![w.dims.hidden], a.x.scale() * w.wv.scale());
    blob.push_q8("wo", &w.wo);
    blob.push_i32(
        "bo",
        &w.bo,
        vec![w.dims.hidden],
        a.ctx.scale() * w.wo.scale(),
    );
    blob.push_q8("w1", &w.w1);
    blob.push_i32("b1", &w.b1, vec![w.dims.ffn], a.y.scale() * w.w1.scale());
    blob.push_q8("w2", &w.w2);
    blob.push_i32(
        "b2",
        &w.b2,
        vec![w.dims.hidden],
        a.gelu_out.scale() * w.w2.scale(),
    );
    blob.push_q8("ln1_gain", &w.ln1_gain);
    blob.push_i32(
        "ln1_bias",
        &w.ln1_bias,
        vec![w.dims.hidden],
        w.ln1_gain.scale() * ln_s,
    );
    blob.push_q8("ln2_gain", &w.ln2_gain);
    blob.push_i32(
        "ln2_bias",
        &w.ln2_bias,
        vec![w.dims.hidden],
        w.ln2_gain.scale() * ln_s,
    );

    let ranges = vec![
        ("x", a.x.alpha()),
        ("q", a.q.alpha()),
        ("k", a.k.alpha()),
        ("v", a.v.alpha()),
        ("ctx", a.ctx.alpha()),
        ("y", a.y.alpha()),
        ("gelu_out", a.gelu_out.alpha()),
        ("out", a.out.alpha()),
        ("res1", a.res1_alpha),
        ("res2", a.res2_alpha),
        ("h1", a.h1_alpha),
    ]
    .into_iter()
    .map(|(name, alpha)| RangeEntry {
        name: name.to_string(),
        alpha,
    })
    .collect();

    let manifest = Manifest {
        format_version: FORMAT_VERSION,
        dims: DimsEntry {
            seq: w.dims.seq,
            hidden: w.dims.hidden,
            heads: w.dims.heads,
            ffn: w.dims.ffn,
        },
        tensors: blob.entries,
        ranges,
    };
    fs::write(manifest_path, serde_json::to_vec_pretty(&manifest)?)?;
    fs::write(blob_path, &blob.bytes)?;
    Ok(())
}

struct BlobReader<'a> {
    manifest: &'a Manifest,
    bytes: Vec<u8>,
}

impl BlobReader<'_> {
    fn entry(&self, name: &str) -> Result<&TensorEntry> {
        self.manifest
            .tensors
            .iter()
            .find(|e| e.name == name)
            .ok_or_else(|| Error::MalformedWeightFile(format!("missing tensor {name:?}")))
    }

    fn payload(&self, e: &TensorEntry) -> Result<&[u8]> {
        if !e.offset.is_multiple_of(ALIGNMENT) {
            return Err(Error::MalformedWeightFile(format!(
                "tensor {:?} offset {} not {ALIGNMENT}-byte aligned",
                e.name, e.offset
            )));
        }
        let elems: usize = e.shape.iter().product();
        let expect = match e.bits {
            8 => elems,
            32 => elems * 4,
            _ => {
                return Err(Error::MalformedWeightFile(format!(
                    "tensor {:?} has unsupported bit width {}",
                    e.name, e.bits
                )))
            }
        };
        if e.byte_len != expect {
            return Err(Error::MalformedWeightFile(format!(
                "tensor {:?} byte length {} does not match shape {:?}",
                e.name, e.byte_len, e.shape
            )));
        }
        self.bytes
            .get(e.offset..e.offset + e.byte_len)
            .ok_or_else(|| Error::MalformedWeightFile(format!("tensor {:?} overruns blob", e.name)))
    }

    fn read_q8(&self, name: &str, shape: &[usize]) -> Result<QTensor> {
        let e = self.entry(name)?;
        if e.bits != 8 || e.shape != shape {
            return Err(Error::MalformedWeightFile(format!(
                "tensor {name:?} expected 8-bit with shape {shape:?}"
            )));
        }
        let alpha = e.alpha.ok_or_else(|| {
            Error::MalformedWeightFile(format!("tensor {name:?} missing clipping bound"))
        })?;
        let params = QParams::from_parts(8, alpha, e.scale)
            .map_err(|err| Error::MalformedWeightFile(format!("tensor {name:?}: {err}")))?;
        let data = self.payload(e)?.iter().map(|&b| b as i8 as i32).collect();
        QTensor::new(data, params, shape.to_vec())
    }

    fn read_i32(&self, name: &str, len: usize, expect_scale: f64) -> Result<Vec<i32>> {
        let e = self.entry(name)?;
        if e.bits != 32 || e.shape != [len] {
            return Err(Error::MalformedWeightFile(format!(
                "tensor {name:?} expected 32-bit with shape [{len}]"
            )));
        }
        if (e.scale - expect_scale).abs() > expect_scale.abs() * 1e-9 {
            return Err(Error::MalformedWeightFile(format!(
                "tensor {name:?} scale {} does not match derived scale {}",
                e.scale, expect_scale
            )));
        }
        let bytes = self.payload(e)?;
        Ok(bytes
            .chunks_exact(4)
            .map(|c| i32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect())
    }
}

fn range(manifest: &Manifest, name: &str) -> Result<f64> {
    let alpha = manifest
        .ranges
        .iter()
        .find(|r| r.name == name)
        .map(|r| r.alpha)
        .ok_or_else(|| Error::MalformedWeightFile(format!("missing range {name:?}")))?;
    if !alpha.is_finite() || alpha <= 0.0 {
        return Err(Error::MalformedWeightFile(format!(
            "range {name:?} has invalid bound {alpha}"
        )));
    }
    Ok(alpha)
}

/// Reads a quantized layer back from its manifest and blob.
pub fn load_weights(manifest_path: &Path, blob_path: &Path) -> Result<EncoderWeights> {
    let manifest: Manifest = serde_json::from_slice(&fs::read(manifest_path)?)?;
    if manifest.format_version != FORMAT_VERSION {
        return Err(Error::MalformedWeightFile(format!(
            "unsupported format version {}",
            manifest.format_version
        )));
    }
    let dims = EncoderDims::new(
        manifest.dims.seq,
        manifest.dims.hidden,
        manifest.dims.heads,
        manifest.dims.ffn,
    )?;
    let reader = BlobReader {
        manifest: &manifest,
        bytes: fs::read(blob_path)?,
    };
    let (h, f) = (dims.hidden, dims.ffn);

    let acts = ActivationParams {
        x: QParams::from_alpha(8, range(&manifest, "x")?)?,
        q: QParams::from_alpha(8, range(&manifest, "q")?)?,
        k: QParams::from_alpha(8, range(&manifest, "k")?)?,
        v: QParams::from_alpha(8, range(&manifest, "v")?)?,
        ctx: QParams::from_alpha(8, range(&manifest, "ctx")?)?,
        y: QParams::from_alpha(8, range(&manifest, "y")?)?,
        gelu_out: QParams::from_alpha(8, range(&manifest, "gelu_out")?)?,
        out: QParams::from_alpha(8, range(&manifest, "out")?)?,
        res1_alpha: range(&manifest, "res1")?,
        res2_alpha: range(&manifest, "res2")?,
        h1_alpha: range(&manifest, "h1")?,
    };

    let wq = reader.read_q8("wq", &[h, h])?;
    let wk = reader.read_q8("wk", &[h, h])?;
    let wv = reader.read_q8("wv", &[h, h])?;
    let wo = reader.read_q8("wo", &[h, h])?;
    let w1 = reader.read_q8("w1", &[h, f])?;
    let w2 = reader.read_q8("w2", &[f, h])?;
    let ln1_gain = reader.read_q8("ln1_gain", &[h])?;
    let ln2_gain = reader.read_q8("ln2_gain", &[h])?;
    let ln_s = super::ln_frac_scale();

    Ok(EncoderWeights {
        bq: reader.read_i32("bq", h, acts.x.scale() * wq.scale())?,
        bk: reader.read_i32("bk", h, acts.x.scale() * wk.scale())?,
        bv: reader.read_i32("bv", h, acts.x.scale() * wv.scale())?,
        bo: reader.read_i32("bo", h, acts.ctx.scale() * wo.scale())?,
        b1: reader.read_i32("b1", f, acts.y.scale() * w1.scale())?,
        b2: reader.read_i32("b2", h, acts.gelu_out.scale() * w2.scale())?,
        ln1_bias: reader.read_i32("ln1_bias", h, ln1_gain.scale() * ln_s)?,
        ln2_bias: reader.read_i32("ln2_bias", h, ln2_gain.scale() * ln_s)?,
        dims,
        wq,
        wk,
        wv,
        wo,
        w1,
        w2,
        ln1_gain,
        ln2_gain,
        acts,
    })
}

#[cfg(test)]
mod tests {
    use super::super::{synth, EncoderWeights, IntEncoderLayer};
    use super::*;

    fn sample_weights() -> EncoderWeights {
        let dims = EncoderDims::new(3, 8, 2, 16).unwrap();
        let fw = synth::random_weights(&dims, 77);
        let calib = synth::random_inputs(&dims, 8, 78);
        EncoderWeights::quantize(&fw, &calib).unwrap()
    }

    #[test]
    fn round_trip_preserves_everything() {
        let w = sample_weights();
        let dir = tempfile::tempdir().unwrap();
        let mpath = dir.path().join("layer.json");
        let bpath = dir.path().join("layer.bin");
        save_weights(&w, &mpath, &bpath).unwrap();
        let loaded = load_weights(&mpath, &bpath).unwrap();
        assert_eq!(w, loaded);
    }

    #[test]
    fn round_trip_forward_is_bit_identical() {
        let w = sample_weights();
        let dir = tempfile::tempdir().unwrap();
        let mpath = dir.path().join("layer.json");
        let bpath = dir.path().join("layer.bin");
        save_weights(&w, &mpath, &bpath).unwrap();
        let loaded = load_weights(&mpath, &bpath).unwrap();

        let x = synth::random_inputs(&w.dims, 1, 5).pop().unwrap();
        let a = IntEncoderLayer::new(w).unwrap();
        let b = IntEncoderLayer::new(loaded).unwrap();
        let xq = a.quantize_input(&x).unwrap();
        assert_eq!(a.forward(&xq).unwrap(), b.forward(&xq).unwrap());
    }

    #[test]
    fn payloads_are_64_byte_aligned() {
        let w = sample_weights();
        let dir = tempfile::tempdir().unwrap();
        let mpath = dir.path().join("layer.json");
        let bpath = dir.path().join("layer.bin");
        save_weights(&w, &mpath, &bpath).unwrap();
        let manifest: Manifest = serde_json::from_slice(&std::fs::read(&mpath).unwrap()).unwrap();
        assert_eq!(manifest.tensors.len(), 16);
        for e in &manifest.tensors {
            assert_eq!(e.offset % 64, 0, "tensor {} misaligned", e.name);
        }
    }

    #[test]
    fn corrupted_manifest_is_rejected() {
        let w = sample_weights();
        let dir = tempfile::tempdir().unwrap();
        let mpath = dir.path().join("layer.json");
        let bpath = dir.path().join("layer.bin");
        save_weights(&w, &mpath, &bpath).unwrap();

        let text = std::fs::read_to_string(&mpath).unwrap();
        // drop one tensor entry
        let broken = text.replacen("\"wq\"", "\"wq_gone\"", 1);
        std::fs::write(&mpath, broken).unwrap();
        assert!(matches!(
            load_weights(&mpath, &bpath),
            Err(Error::MalformedWeightFile(_))
        ));
    }

    #[test]
    fn truncated_blob_is_rejected() {
        let w = sample_weights();
        let dir = tempfile::tempdir().unwrap();
        let mpath = dir.path().join("layer.json");
        let bpath = dir.path().join("layer.bin");
        save_weights(&w, &mpath, &bpath).unwrap();
        let bytes = std::fs::read(&bpath).unwrap();
        std::fs::write(&bpath, &bytes[..bytes.len() / 2]).unwrap();
        assert!(load_weights(&mpath, &bpath).is_err());
    }
}
