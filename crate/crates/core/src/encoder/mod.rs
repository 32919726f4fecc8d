//! A transformer encoder layer executed entirely with integer arithmetic.
//!
//! Dataflow (post-norm, one layer): INT8 matmuls accumulate to INT32; the
//! nonlinear kernels consume those accumulators; requantization brings each
//! result back to INT8 before the next matmul. Residual branches are aligned
//! onto a shared fine-grained fixed-point grid before the integer add, and
//! LayerNorm runs on that grid. Every scale, multiplier, and kernel constant
//! is precompiled from calibration data; `forward` touches no floats.

mod bench;
mod io;
mod matmul;
mod reference;
pub mod synth;

pub use bench::{microbench, BenchRow, MIN_REPS};
pub use io::{load_weights, save_weights};
pub use matmul::int_matmul;
pub use reference::{fp32_reference_layer, RefTrace, ReferenceLayer, REFERENCE_LN_EPS};

use crate::error::{Error, Result};
use crate::nonlinear::{i_layernorm, IGelu, ISoftmax, LayerNormParams, LAYERNORM_FRAC_BITS};
use crate::poly::narrow_i32;
use crate::quant::{dequantize, quantize_shaped, QParams, QTensor, Requantizer};

use matmul::int_matmul_with_params;

/// Residual branches are requantized onto a grid of this many bits before
/// the integer add, keeping LayerNorm statistics precise.
pub const RESIDUAL_GRID_BITS: u32 = 16;

/// Layer geometry: sequence length, hidden size, head count, FFN size.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EncoderDims {
    pub seq: usize,
    pub hidden: usize,
    pub heads: usize,
    pub ffn: usize,
}

impl EncoderDims {
    pub fn new(seq: usize, hidden: usize, heads: usize, ffn: usize) -> Result<Self> {
        if seq == 0 || hidden == 0 || heads == 0 || ffn == 0 {
            return Err(Error::InvalidArgument(
                "encoder dimensions must be positive".into(),
            ));
        }
        if !hidden.is_multiple_of(heads) {
            return Err(Error::InvalidArgument(format!(
                "hidden size {hidden} not divisible by {heads} heads"
            )));
        }
        Ok(Self {
            seq,
            hidden,
            heads,
            ffn,
        })
    }

    pub fn head_dim(&self) -> usize {
        self.hidden / self.heads
    }
}

/// Real-valued layer parameters, row-major `[in, out]` matrices.
#[derive(Debug, Clone, PartialEq)]
pub struct FloatEncoderWeights {
    pub dims: EncoderDims,
    pub wq: Vec<f64>,
    pub wk: Vec<f64>,
    pub wv: Vec<f64>,
    pub wo: Vec<f64>,
    pub bq: Vec<f64>,
    pub bk: Vec<f64>,
    pub bv: Vec<f64>,
    pub bo: Vec<f64>,
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
    pub ln1_gain: Vec<f64>,
    pub ln1_bias: Vec<f64>,
    pub ln2_gain: Vec<f64>,
    pub ln2_bias: Vec<f64>,
}

impl FloatEncoderWeights {
    pub fn zeros(dims: EncoderDims) -> Self {
        let h = dims.hidden;
        let f = dims.ffn;
        Self {
            dims,
            wq: vec![0.0; h * h],
            wk: vec![0.0; h * h],
            wv: vec![0.0; h * h],
            wo: vec![0.0; h * h],
            bq: vec![0.0; h],
            bk: vec![0.0; h],
            bv: vec![0.0; h],
            bo: vec![0.0; h],
            w1: vec![0.0; h * f],
            b1: vec![0.0; f],
            w2: vec![0.0; f * h],
            b2: vec![0.0; h],
            ln1_gain: vec![1.0; h],
            ln1_bias: vec![0.0; h],
            ln2_gain: vec![1.0; h],
            ln2_bias: vec![0.0; h],
        }
    }
}

/// Calibrated parameters for every activation edge of the layer. The 8-bit
/// edges carry full `QParams`; the residual grids and the GELU input range
/// are kept as clipping bounds.
#[derive(Debug, Clone, PartialEq)]
pub struct ActivationParams {
    pub x: QParams,
    pub q: QParams,
    pub k: QParams,
    pub v: QParams,
    pub ctx: QParams,
    pub y: QParams,
    pub gelu_out: QParams,
    pub out: QParams,
    pub res1_alpha: f64,
    pub res2_alpha: f64,
    pub h1_alpha: f64,
}

/// Quantized layer parameters: INT8 weight tensors, INT32 biases at the
/// matching product scales, quantized LayerNorm affine parameters, and one
/// `QParams` per activation edge.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderWeights {
    pub dims: EncoderDims,
    pub wq: QTensor,
    pub wk: QTensor,
    pub wv: QTensor,
    pub wo: QTensor,
    pub w1: QTensor,
    pub w2: QTensor,
    pub bq: Vec<i32>,
    pub bk: Vec<i32>,
    pub bv: Vec<i32>,
    pub bo: Vec<i32>,
    pub b1: Vec<i32>,
    pub b2: Vec<i32>,
    pub ln1_gain: QTensor,
    pub ln1_bias: Vec<i32>,
    pub ln2_gain: QTensor,
    pub ln2_bias: Vec<i32>,
    pub acts: ActivationParams,
}

fn quantize_tensor_maxabs(vals: &[f64], shape: Vec<usize>) -> Result<QTensor> {
    let alpha = vals.iter().fold(0.0f64, |m, &v| m.max(v.abs()));
    let params = QParams::from_alpha(8, alpha)?;
    quantize_shaped(vals, &params, shape)
}

fn quantize_bias(vals: &[f64], scale: f64) -> Vec<i32> {
    crate::purity::record_float_use();
    vals.iter()
        .map(|&v| (v / scale).round().clamp(i32::MIN as f64, i32::MAX as f64) as i32)
        .collect()
}

pub(crate) fn ln_frac_scale() -> f64 {
    (-(LAYERNORM_FRAC_BITS as f64)).exp2()
}

impl EncoderWeights {
    /// Quantizes real weights and calibrates every activation edge by
    /// tracing the FP64 reference over the provided sample inputs.
    pub fn quantize(fw: &FloatEncoderWeights, calib_inputs: &[Vec<f64>]) -> Result<Self> {
        Self::quantize_impl(fw, calib_inputs, None)
    }

    /// Like [`EncoderWeights::quantize`] but pins the input edge to the given
    /// params instead of calibrating it, so a layer can consume another
    /// layer's output tensor directly.
    pub fn quantize_chained(
        fw: &FloatEncoderWeights,
        calib_inputs: &[Vec<f64>],
        input: QParams,
    ) -> Result<Self> {
        Self::quantize_impl(fw, calib_inputs, Some(input))
    }

    fn quantize_impl(
        fw: &FloatEncoderWeights,
        calib_inputs: &[Vec<f64>],
        input: Option<QParams>,
    ) -> Result<Self> {
        if calib_inputs.is_empty() {
            return Err(Error::EmptyInput);
        }
        let dims = fw.dims;
        let h = dims.hidden;
        let f = dims.ffn;

        let wq = quantize_tensor_maxabs(&fw.wq, vec![h, h])?;
        let wk = quantize_tensor_maxabs(&fw.wk, vec![h, h])?;
        let wv = quantize_tensor_maxabs(&fw.wv, vec![h, h])?;
        let wo = quantize_tensor_maxabs(&fw.wo, vec![h, h])?;
        let w1 = quantize_tensor_maxabs(&fw.w1, vec![h, f])?;
        let w2 = quantize_tensor_maxabs(&fw.w2, vec![f, h])?;
        let ln1_gain = quantize_tensor_maxabs(&fw.ln1_gain, vec![h])?;
        let ln2_gain = quantize_tensor_maxabs(&fw.ln2_gain, vec![h])?;

        // Calibration network: the matrices and gains the integer layer will
        // actually use (dequantized), biases still real.
        let mut cal = fw.clone();
        cal.wq = dequantize(&wq);
        cal.wk = dequantize(&wk);
        cal.wv = dequantize(&wv);
        cal.wo = dequantize(&wo);
        cal.w1 = dequantize(&w1);
        cal.w2 = dequantize(&w2);
        cal.ln1_gain = dequantize(&ln1_gain);
        cal.ln2_gain = dequantize(&ln2_gain);
        let ref_layer = ReferenceLayer::from_float(cal);

        let maxabs = |vals: &[f64]| vals.iter().fold(0.0f64, |m, &v| m.max(v.abs()));
        let mut a = [0.0f64; 11];
        for x in calib_inputs {
            let tr = ref_layer.forward_trace(x)?;
            let edges = [
                maxabs(x),
                maxabs(&tr.q_proj),
                maxabs(&tr.k_proj),
                maxabs(&tr.v_proj),
                maxabs(&tr.context),
                maxabs(&tr.attn_out),
                maxabs(&tr.ln1_out),
                maxabs(&tr.ffn1),
                maxabs(&tr.gelu_out),
                maxabs(&tr.ffn2),
                maxabs(&tr.out),
            ];
            for (acc, e) in a.iter_mut().zip(edges) {
                *acc = acc.max(e);
            }
        }
        let [a_x, a_q, a_k, a_v, a_ctx, a_attn, a_y, a_h1, a_gelu, a_ffn2, a_out] = a;

        let x_params = match input {
            Some(p) => {
                if p.bits() != 8 {
                    return Err(Error::BitsMismatch {
                        context: "pinned input edge",
                        expected: 8,
                        actual: p.bits(),
                    });
                }
                p
            }
            None => QParams::from_alpha(8, a_x)?,
        };
        // the x residual branch is bounded by the input edge's clip range
        let a_x = x_params.alpha();

        let acts = ActivationParams {
            x: x_params,
            q: QParams::from_alpha(8, a_q)?,
            k: QParams::from_alpha(8, a_k)?,
            v: QParams::from_alpha(8, a_v)?,
            ctx: QParams::from_alpha(8, a_ctx)?,
            y: QParams::from_alpha(8, a_y)?,
            gelu_out: QParams::from_alpha(8, a_gelu)?,
            out: QParams::from_alpha(8, a_out)?,
            res1_alpha: a_attn.max(a_x),
            res2_alpha: a_ffn2.max(a_y),
            h1_alpha: a_h1,
        };

        let ln_s = ln_frac_scale();
        Ok(Self {
            bq: quantize_bias(&fw.bq, acts.x.scale() * wq.scale()),
            bk: quantize_bias(&fw.bk, acts.x.scale() * wk.scale()),
            bv: quantize_bias(&fw.bv, acts.x.scale() * wv.scale()),
            bo: quantize_bias(&fw.bo, acts.ctx.scale() * wo.scale()),
            b1: quantize_bias(&fw.b1, acts.y.scale() * w1.scale()),
            b2: quantize_bias(&fw.b2, acts.gelu_out.scale() * w2.scale()),
            ln1_bias: quantize_bias(&fw.ln1_bias, ln1_gain.scale() * ln_s),
            ln2_bias: quantize_bias(&fw.ln2_bias, ln2_gain.scale() * ln_s),
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

    /// Dequantizes every parameter back to reals.
    pub fn dequantize_all(&self) -> FloatEncoderWeights {
        crate::purity::record_float_use();
        let deq_bias =
            |b: &[i32], s: f64| -> Vec<f64> { b.iter().map(|&v| v as f64 * s).collect() };
        let ln_s = ln_frac_scale();
        FloatEncoderWeights {
            dims: self.dims,
            wq: dequantize(&self.wq),
            wk: dequantize(&self.wk),
            wv: dequantize(&self.wv),
            wo: dequantize(&self.wo),
            w1: dequantize(&self.w1),
            w2: dequantize(&self.w2),
            bq: deq_bias(&self.bq, self.acts.x.scale() * self.wq.scale()),
            bk: deq_bias(&self.bk, self.acts.x.scale() * self.wk.scale()),
            bv: deq_bias(&self.bv, self.acts.x.scale() * self.wv.scale()),
            bo: deq_bias(&self.bo, self.acts.ctx.scale() * self.wo.scale()),
            b1: deq_bias(&self.b1, self.acts.y.scale() * self.w1.scale()),
            b2: deq_bias(&self.b2, self.acts.gelu_out.scale() * self.w2.scale()),
            ln1_gain: dequantize(&self.ln1_gain),
            ln1_bias: deq_bias(&self.ln1_bias, self.ln1_gain.scale() * ln_s),
            ln2_gain: dequantize(&self.ln2_gain),
            ln2_bias: deq_bias(&self.ln2_bias, self.ln2_gain.scale() * ln_s),
        }
    }
}

/// One step of the executed integer dataflow, for structural checks.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TraceEvent {
    MatMul {
        a: &'static str,
        b: &'static str,
        out: &'static str,
    },
    Requantize {
        from: &'static str,
        from_bits: u8,
        to: &'static str,
        to_bits: u8,
    },
    Kernel {
        name: &'static str,
        from: &'static str,
        to: &'static str,
    },
    Add {
        a: &'static str,
        b: &'static str,
        out: &'static str,
    },
}

fn push(trace: &mut Option<Vec<TraceEvent>>, ev: TraceEvent) {
    if let Some(t) = trace {
        t.push(ev);
    }
}

/// The integer encoder layer: quantized weights plus every precompiled
/// requantizer and kernel. Construction does the float work; `forward` is
/// integer-only.
#[derive(Debug, Clone)]
pub struct IntEncoderLayer {
    w: EncoderWeights,
    p_q_acc: QParams,
    p_k_acc: QParams,
    p_v_acc: QParams,
    rq_q: Requantizer,
    rq_k: Requantizer,
    rq_v: Requantizer,
    softmax: ISoftmax,
    p_scores: QParams,
    p_probs: QParams,
    rq_probs: Requantizer,
    p_ctx_acc: QParams,
    rq_ctx: Requantizer,
    p_attn: QParams,
    rq_attn_res: Requantizer,
    rq_x_res: Requantizer,
    ln: LayerNormParams,
    p_ln_norm: QParams,
    p_ln1_aff: QParams,
    rq_y: Requantizer,
    p_h1: QParams,
    gelu: IGelu,
    p_gelu: QParams,
    rq_gelu: Requantizer,
    p_ffn2: QParams,
    rq_ffn_res: Requantizer,
    rq_y_res: Requantizer,
    p_ln2_aff: QParams,
    rq_out: Requantizer,
}

impl IntEncoderLayer {
    pub fn new(w: EncoderWeights) -> Result<Self> {
        let dims = w.dims;
        let h = dims.hidden;
        let f = dims.ffn;
        for (len, expect, what) in [
            (w.bq.len(), h, "bq"),
            (w.bk.len(), h, "bk"),
            (w.bv.len(), h, "bv"),
            (w.bo.len(), h, "bo"),
            (w.b1.len(), f, "b1"),
            (w.b2.len(), h, "b2"),
            (w.ln1_bias.len(), h, "ln1_bias"),
            (w.ln2_bias.len(), h, "ln2_bias"),
            (w.ln1_gain.len(), h, "ln1_gain"),
            (w.ln2_gain.len(), h, "ln2_gain"),
        ] {
            if len != expect {
                return Err(Error::DimMismatch {
                    context: what,
                    expected: expect,
                    actual: len,
                });
            }
        }

        let a = w.acts.clone();
        let grid = ((1u64 << RESIDUAL_GRID_BITS) - 1) as f64;
        let ln_s = ln_frac_scale();

        let p_q_acc = QParams::from_scale(32, a.x.scale() * w.wq.scale())?;
        let p_k_acc = QParams::from_scale(32, a.x.scale() * w.wk.scale())?;
        let p_v_acc = QParams::from_scale(32, a.x.scale() * w.wv.scale())?;
        let rq_q = Requantizer::new(p_q_acc.scale(), a.q)?;
        let rq_k = Requantizer::new(p_k_acc.scale(), a.k)?;
        let rq_v = Requantizer::new(p_v_acc.scale(), a.v)?;

        // the 1/sqrt(head_dim) attention factor folds into the score scale
        let s_scores = a.q.scale() * a.k.scale();
        let softmax = ISoftmax::new(s_scores / (dims.head_dim() as f64).sqrt())?;
        let p_scores = QParams::from_scale(32, s_scores)?;
        let p_probs = QParams::from_scale(32, softmax.s_out())?;
        let p_probs8 = QParams::from_alpha(8, 1.0)?;
        let rq_probs = Requantizer::new(softmax.s_out(), p_probs8)?;

        let p_ctx_acc = QParams::from_scale(32, p_probs8.scale() * a.v.scale())?;
        let rq_ctx = Requantizer::new(p_ctx_acc.scale(), a.ctx)?;
        let p_attn = QParams::from_scale(32, a.ctx.scale() * w.wo.scale())?;

        let p_res1 = QParams::from_scale(32, a.res1_alpha / grid)?;
        let rq_attn_res = Requantizer::new(p_attn.scale(), p_res1)?;
        let rq_x_res = Requantizer::new(a.x.scale(), p_res1)?;

        let ln = LayerNormParams::new(h);
        let p_ln_norm = QParams::from_scale(32, ln_s)?;
        let p_ln1_aff = QParams::from_scale(32, w.ln1_gain.scale() * ln_s)?;
        let rq_y = Requantizer::new(p_ln1_aff.scale(), a.y)?;

        let p_h1 = QParams::from_scale(32, a.y.scale() * w.w1.scale())?;
        let q_abs_max = (a.h1_alpha / p_h1.scale()).ceil() as i64 * 2;
        let gelu = IGelu::new(p_h1.scale(), q_abs_max.max(1))?;
        // gelu's raw output scale is negative (leading coefficient); codes
        // are negated on the way out so the tensor scale stays positive
        let p_gelu = QParams::from_scale(32, -gelu.s_out())?;
        let rq_gelu = Requantizer::new(p_gelu.scale(), a.gelu_out)?;

        let p_ffn2 = QParams::from_scale(32, a.gelu_out.scale() * w.w2.scale())?;
        let p_res2 = QParams::from_scale(32, a.res2_alpha / grid)?;
        let rq_ffn_res = Requantizer::new(p_ffn2.scale(), p_res2)?;
        let rq_y_res = Requantizer::new(a.y.scale(), p_res2)?;
        let p_ln2_aff = QParams::from_scale(32, w.ln2_gain.scale() * ln_s)?;
        let rq_out = Requantizer::new(p_ln2_aff.scale(), a.out)?;

        Ok(Self {
            w,
            p_q_acc,
            p_k_acc,
            p_v_acc,
            rq_q,
            rq_k,
            rq_v,
            softmax,
            p_scores,
            p_probs,
            rq_probs,
            p_ctx_acc,
            rq_ctx,
            p_attn,
            rq_attn_res,
            rq_x_res,
            ln,
            p_ln_norm,
            p_ln1_aff,
            rq_y,
            p_h1,
            gelu,
            p_gelu,
            rq_gelu,
            p_ffn2,
            rq_ffn_res,
            rq_y_res,
            p_ln2_aff,
            rq_out,
        })
    }

    pub fn weights(&self) -> &EncoderWeights {
        &self.w
    }

    pub fn dims(&self) -> &EncoderDims {
        &self.w.dims
    }

    /// Quantizes a real input onto the layer's calibrated input edge.
    pub fn quantize_input(&self, x: &[f64]) -> Result<QTensor> {
        let d = &self.w.dims;
        quantize_shaped(x, &self.w.acts.x, vec![d.seq, d.hidden])
    }

    pub fn output_params(&self) -> &QParams {
        &self.w.acts.out
    }

    /// Integer-only forward pass. Input must be 8-bit at the calibrated
    /// input scale, shaped `[seq, hidden]`.
    pub fn forward(&self, x: &QTensor) -> Result<QTensor> {
        self.forward_inner(x, &mut None)
    }

    /// Forward pass that also returns the executed dataflow, for structural
    /// checks.
    pub fn forward_traced(&self, x: &QTensor) -> Result<(QTensor, Vec<TraceEvent>)> {
        let mut trace = Some(Vec::new());
        let out = self.forward_inner(x, &mut trace)?;
        Ok((out, trace.unwrap()))
    }

    /// Attention block only: projections, scores, softmax, aggregation, and
    /// output projection. Returns the INT32 output-projection accumulator.
    pub fn self_attention(&self, x: &QTensor) -> Result<QTensor> {
        self.attention_inner(x, &mut None)
    }

    fn check_input(&self, x: &QTensor) -> Result<()> {
        let d = &self.w.dims;
        if x.params().bits() != 8 {
            return Err(Error::BitsMismatch {
                context: "encoder input",
                expected: 8,
                actual: x.params().bits(),
            });
        }
        if x.shape() != [d.seq, d.hidden] {
            return Err(Error::DimMismatch {
                context: "encoder input shape",
                expected: d.seq * d.hidden,
                actual: x.len(),
            });
        }
        let want = self.w.acts.x.scale();
        if (x.scale() - want).abs() > want * 1e-12 {
            return Err(Error::InvalidScale(x.scale()));
        }
        Ok(())
    }

    fn attention_inner(&self, x: &QTensor, trace: &mut Option<Vec<TraceEvent>>) -> Result<QTensor> {
        self.check_input(x)?;
        let d = &self.w.dims;
        let (t, h, heads, hd) = (d.seq, d.hidden, d.heads, d.head_dim());

        let q_acc = int_matmul_with_params(x, &self.w.wq, Some(&self.w.bq), self.p_q_acc)?;
        push(
            trace,
            TraceEvent::MatMul {
                a: "x8",
                b: "wq8",
                out: "q_acc32",
            },
        );
        let k_acc = int_matmul_with_params(x, &self.w.wk, Some(&self.w.bk), self.p_k_acc)?;
        push(
            trace,
            TraceEvent::MatMul {
                a: "x8",
                b: "wk8",
                out: "k_acc32",
            },
        );
        let v_acc = int_matmul_with_params(x, &self.w.wv, Some(&self.w.bv), self.p_v_acc)?;
        push(
            trace,
            TraceEvent::MatMul {
                a: "x8",
                b: "wv8",
                out: "v_acc32",
            },
        );

        let q8 = self.rq_q.apply(&q_acc)?;
        push(
            trace,
            TraceEvent::Requantize {
                from: "q_acc32",
                from_bits: 32,
                to: "q8",
                to_bits: 8,
            },
        );
        let k8 = self.rq_k.apply(&k_acc)?;
        push(
            trace,
            TraceEvent::Requantize {
                from: "k_acc32",
                from_bits: 32,
                to: "k8",
                to_bits: 8,
            },
        );
        let v8 = self.rq_v.apply(&v_acc)?;
        push(
            trace,
            TraceEvent::Requantize {
                from: "v_acc32",
                from_bits: 32,
                to: "v8",
                to_bits: 8,
            },
        );

        let mut ctx_data = vec![0i32; t * h];
        for head in 0..heads {
            let qh = slice_head(&q8, head, hd)?;
            let kh = slice_head(&k8, head, hd)?.transposed()?;
            let scores = int_matmul_with_params(&qh, &kh, None, self.p_scores)?;
            push(
                trace,
                TraceEvent::MatMul {
                    a: "q8",
                    b: "k8",
                    out: "scores32",
                },
            );

            let mut pdata = Vec::with_capacity(t * t);
            for i in 0..t {
                let (row, _) = self.softmax.eval(&scores.data()[i * t..(i + 1) * t])?;
                pdata.extend(row);
            }
            let probs_fp = QTensor::new(pdata, self.p_probs, vec![t, t])?;
            push(
                trace,
                TraceEvent::Kernel {
                    name: "softmax",
                    from: "scores32",
                    to: "probs_fp32",
                },
            );

            let probs8 = self.rq_probs.apply(&probs_fp)?;
            push(
                trace,
                TraceEvent::Requantize {
                    from: "probs_fp32",
                    from_bits: 32,
                    to: "probs8",
                    to_bits: 8,
                },
            );

            let vh = slice_head(&v8, head, hd)?;
            let ctx_h = int_matmul_with_params(&probs8, &vh, None, self.p_ctx_acc)?;
            push(
                trace,
                TraceEvent::MatMul {
                    a: "probs8",
                    b: "v8",
                    out: "ctx_acc32",
                },
            );
            for i in 0..t {
                for c in 0..hd {
                    ctx_data[i * h + head * hd + c] = ctx_h.data()[i * hd + c];
                }
            }
        }
        let ctx_acc = QTensor::new(ctx_data, self.p_ctx_acc, vec![t, h])?;
        let ctx8 = self.rq_ctx.apply(&ctx_acc)?;
        push(
            trace,
            TraceEvent::Requantize {
                from: "ctx_acc32",
                from_bits: 32,
                to: "ctx8",
                to_bits: 8,
            },
        );

        let attn = int_matmul_with_params(&ctx8, &self.w.wo, Some(&self.w.bo), self.p_attn)?;
        push(
            trace,
            TraceEvent::MatMul {
                a: "ctx8",
                b: "wo8",
                out: "attn32",
            },
        );
        Ok(attn)
    }

    fn forward_inner(&self, x: &QTensor, trace: &mut Option<Vec<TraceEvent>>) -> Result<QTensor> {
        let attn = self.attention_inner(x, trace)?;

        let r_a = self.rq_attn_res.apply(&attn)?;
        push(
            trace,
            TraceEvent::Requantize {
                from: "attn32",
                from_bits: 32,
                to: "res1_a32",
                to_bits: 32,
            },
        );
        let r_x = self.rq_x_res.apply(x)?;
        push(
            trace,
            TraceEvent::Requantize {
                from: "x8",
                from_bits: 8,
                to: "res1_x32",
                to_bits: 32,
            },
        );
        let res1 = add_tensors(&r_a, &r_x)?;
        push(
            trace,
            TraceEvent::Add {
                a: "res1_a32",
                b: "res1_x32",
                out: "res1_32",
            },
        );

        let normed1 = self.layernorm_rows(&res1)?;
        push(
            trace,
            TraceEvent::Kernel {
                name: "layernorm",
                from: "res1_32",
                to: "ln1_norm32",
            },
        );
        let aff1 = self.affine(&normed1, &self.w.ln1_gain, &self.w.ln1_bias, self.p_ln1_aff)?;
        push(
            trace,
            TraceEvent::Kernel {
                name: "ln_affine",
                from: "ln1_norm32",
                to: "ln1_aff32",
            },
        );
        let y8 = self.rq_y.apply(&aff1)?;
        push(
            trace,
            TraceEvent::Requantize {
                from: "ln1_aff32",
                from_bits: 32,
                to: "y8",
                to_bits: 8,
            },
        );

        let h1 = int_matmul_with_params(&y8, &self.w.w1, Some(&self.w.b1), self.p_h1)?;
        push(
            trace,
            TraceEvent::MatMul {
                a: "y8",
                b: "w18",
                out: "ffn1_32",
            },
        );

        let gelu_data: Vec<i32> = h1
            .data()
            .iter()
            .map(|&q| narrow_i32(-(self.gelu.eval(q) as i64)))
            .collect();
        let gelu32 = QTensor::new(gelu_data, self.p_gelu, h1.shape().to_vec())?;
        push(
            trace,
            TraceEvent::Kernel {
                name: "gelu",
                from: "ffn1_32",
                to: "gelu32",
            },
        );

        let g8 = self.rq_gelu.apply(&gelu32)?;
        push(
            trace,
            TraceEvent::Requantize {
                from: "gelu32",
                from_bits: 32,
                to: "g8",
                to_bits: 8,
            },
        );

        let ffn2 = int_matmul_with_params(&g8, &self.w.w2, Some(&self.w.b2), self.p_ffn2)?;
        push(
            trace,
            TraceEvent::MatMul {
                a: "g8",
                b: "w28",
                out: "ffn2_32",
            },
        );

        let r_f = self.rq_ffn_res.apply(&ffn2)?;
        push(
            trace,
            TraceEvent::Requantize {
                from: "ffn2_32",
                from_bits: 32,
                to: "res2_f32",
                to_bits: 32,
            },
        );
        let r_y = self.rq_y_res.apply(&y8)?;
        push(
            trace,
            TraceEvent::Requantize {
                from: "y8",
                from_bits: 8,
                to: "res2_y32",
                to_bits: 32,
            },
        );
        let res2 = add_tensors(&r_f, &r_y)?;
        push(
            trace,
            TraceEvent::Add {
                a: "res2_f32",
                b: "res2_y32",
                out: "res2_32",
            },
        );

        let normed2 = self.layernorm_rows(&res2)?;
        push(
            trace,
            TraceEvent::Kernel {
                name: "layernorm",
                from: "res2_32",
                to: "ln2_norm32",
            },
        );
        let aff2 = self.affine(&normed2, &self.w.ln2_gain, &self.w.ln2_bias, self.p_ln2_aff)?;
        push(
            trace,
            TraceEvent::Kernel {
                name: "ln_affine",
                from: "ln2_norm32",
                to: "ln2_aff32",
            },
        );
        let out8 = self.rq_out.apply(&aff2)?;
        push(
            trace,
            TraceEvent::Requantize {
                from: "ln2_aff32",
                from_bits: 32,
                to: "out8",
                to_bits: 8,
            },
        );
        Ok(out8)
    }

    fn layernorm_rows(&self, t: &QTensor) -> Result<QTensor> {
        let (rows, cols) = (t.shape()[0], t.shape()[1]);
        let mut out = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            let (normed, _) =
                i_layernorm(&t.data()[r * cols..(r + 1) * cols], t.scale(), &self.ln)?;
            out.extend(normed);
        }
        QTensor::new(out, self.p_ln_norm, vec![rows, cols])
    }

    /// Per-channel `gain * normed + bias` in integers; gain is 8-bit, bias is
    /// 32-bit at the product scale `S_gain * 2^-M`.
    fn affine(
        &self,
        normed: &QTensor,
        gain: &QTensor,
        bias: &[i32],
        out_params: QParams,
    ) -> Result<QTensor> {
        let (rows, cols) = (normed.shape()[0], normed.shape()[1]);
        let gdata = gain.data();
        let mut out = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                let n = normed.data()[r * cols + c] as i64;
                out.push(narrow_i32(gdata[c] as i64 * n + bias[c] as i64));
            }
        }
        QTensor::new(out, out_params, vec![rows, cols])
    }
}

fn slice_head(t: &QTensor, head: usize, head_dim: usize) -> Result<QTensor> {
    let (rows, cols) = (t.shape()[0], t.shape()[1]);
    let mut out = Vec::with_capacity(rows * head_dim);
    for r in 0..rows {
        let base = r * cols + head * head_dim;
        out.extend_from_slice(&t.data()[base..base + head_dim]);
    }
    QTensor::new(out, *t.params(), vec![rows, head_dim])
}

fn add_tensors(a: &QTensor, b: &QTensor) -> Result<QTensor> {
    if a.shape() != b.shape() {
        return Err(Error::DimMismatch {
            context: "residual add shapes",
            expected: a.len(),
            actual: b.len(),
        });
    }
    if (a.scale() - b.scale()).abs() > a.scale().abs() * 1e-12 {
        return Err(Error::InvalidScale(b.scale()));
    }
    let data = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| narrow_i32(x as i64 + y as i64))
        .collect();
    QTensor::new(data, *a.params(), a.shape().to_vec())
}
