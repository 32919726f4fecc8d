//! Double-precision reference encoder layer.
//!
//! Architecturally identical to the integer layer and driven by the exact
//! nonlinearities; used for calibration, equivalence testing, and as the
//! simulated-quantization baseline (it consumes dequantized parameters).

use crate::error::{Error, Result};
use crate::oracle;
use crate::purity;

use super::{EncoderDims, EncoderWeights, FloatEncoderWeights};

/// Near-zero variance epsilon for the reference LayerNorm; the integer side
/// adds one unit to its integer variance, which lands in the same regime.
pub const REFERENCE_LN_EPS: f64 = 1e-12;

/// All intermediate activations of one reference forward pass.
#[derive(Debug, Clone)]
pub struct RefTrace {
    pub q_proj: Vec<f64>,
    pub k_proj: Vec<f64>,
    pub v_proj: Vec<f64>,
    pub scores: Vec<f64>,
    pub probs: Vec<f64>,
    pub context: Vec<f64>,
    pub attn_out: Vec<f64>,
    pub res1: Vec<f64>,
    pub ln1_out: Vec<f64>,
    pub ffn1: Vec<f64>,
    pub gelu_out: Vec<f64>,
    pub ffn2: Vec<f64>,
    pub res2: Vec<f64>,
    pub out: Vec<f64>,
}

/// FP64 encoder layer over real-valued weights.
#[derive(Debug, Clone)]
pub struct ReferenceLayer {
    w: FloatEncoderWeights,
    eps: f64,
}

impl ReferenceLayer {
    pub fn from_float(w: FloatEncoderWeights) -> Self {
        Self {
            w,
            eps: REFERENCE_LN_EPS,
        }
    }

    /// Builds the reference from quantized weights by dequantizing every
    /// parameter, so both layers compute over identical weight values.
    pub fn from_quantized(w: &EncoderWeights) -> Self {
        Self::from_float(w.dequantize_all())
    }

    pub fn dims(&self) -> &EncoderDims {
        &self.w.dims
    }

    pub fn weights(&self) -> &FloatEncoderWeights {
        &self.w
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.forward_trace(x).map(|t| t.out)
    }

    pub fn forward_trace(&self, x: &[f64]) -> Result<RefTrace> {
        purity::record_float_use();
        let d = &self.w.dims;
        let (t, hdim, heads, f) = (d.seq, d.hidden, d.heads, d.ffn);
        if x.len() != t * hdim {
            return Err(Error::DimMismatch {
                context: "reference input",
                expected: t * hdim,
                actual: x.len(),
            });
        }
        let head_dim = hdim / heads;

        let q_proj = matmul_bias(x, &self.w.wq, &self.w.bq, t, hdim, hdim);
        let k_proj = matmul_bias(x, &self.w.wk, &self.w.bk, t, hdim, hdim);
        let v_proj = matmul_bias(x, &self.w.wv, &self.w.bv, t, hdim, hdim);

        let inv_sqrt_d = 1.0 / (head_dim as f64).sqrt();
        let mut scores = vec![0.0; heads * t * t];
        for h in 0..heads {
            for i in 0..t {
                for j in 0..t {
                    let mut acc = 0.0;
                    for kk in 0..head_dim {
                        acc += q_proj[i * hdim + h * head_dim + kk]
                            * k_proj[j * hdim + h * head_dim + kk];
                    }
                    scores[h * t * t + i * t + j] = acc * inv_sqrt_d;
                }
            }
        }

        let mut probs = vec![0.0; heads * t * t];
        for h in 0..heads {
            for i in 0..t {
                let row = &scores[h * t * t + i * t..h * t * t + (i + 1) * t];
                let sm = oracle::softmax(row)?;
                probs[h * t * t + i * t..h * t * t + (i + 1) * t].copy_from_slice(&sm);
            }
        }

        let mut context = vec![0.0; t * hdim];
        for h in 0..heads {
            for i in 0..t {
                for kk in 0..head_dim {
                    let mut acc = 0.0;
                    for j in 0..t {
                        acc += probs[h * t * t + i * t + j] * v_proj[j * hdim + h * head_dim + kk];
                    }
                    context[i * hdim + h * head_dim + kk] = acc;
                }
            }
        }

        let attn_out = matmul_bias(&context, &self.w.wo, &self.w.bo, t, hdim, hdim);

        let res1: Vec<f64> = x.iter().zip(&attn_out).map(|(a, b)| a + b).collect();
        let ln1_out = self.layernorm_affine(&res1, &self.w.ln1_gain, &self.w.ln1_bias, t, hdim)?;

        let ffn1 = matmul_bias(&ln1_out, &self.w.w1, &self.w.b1, t, hdim, f);
        let gelu_out: Vec<f64> = ffn1.iter().map(|&v| oracle::gelu(v)).collect();
        let ffn2 = matmul_bias(&gelu_out, &self.w.w2, &self.w.b2, t, f, hdim);

        let res2: Vec<f64> = ln1_out.iter().zip(&ffn2).map(|(a, b)| a + b).collect();
        let out = self.layernorm_affine(&res2, &self.w.ln2_gain, &self.w.ln2_bias, t, hdim)?;

        Ok(RefTrace {
            q_proj,
            k_proj,
            v_proj,
            scores,
            probs,
            context,
            attn_out,
            res1,
            ln1_out,
            ffn1,
            gelu_out,
            ffn2,
            res2,
            out,
        })
    }

    fn layernorm_affine(
        &self,
        x: &[f64],
        gain: &[f64],
        bias: &[f64],
        rows: usize,
        cols: usize,
    ) -> Result<Vec<f64>> {
        let mut out = vec![0.0; rows * cols];
        for r in 0..rows {
            let row = &x[r * cols..(r + 1) * cols];
            let normed = oracle::layernorm(row, self.eps)?;
            for (c, &n) in normed.iter().enumerate() {
                out[r * cols + c] = n * gain[c] + bias[c];
            }
        }
        Ok(out)
    }
}

/// `x (m x k) * w (k x n) + b`, row-major.
fn matmul_bias(x: &[f64], w: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let orow = &mut out[i * n..(i + 1) * n];
        orow.copy_from_slice(b);
        for l in 0..k {
            let xv = x[i * k + l];
            if xv == 0.0 {
                continue;
            }
            let wrow = &w[l * n..(l + 1) * n];
            for (o, &wv) in orow.iter_mut().zip(wrow) {
                *o += xv * wv;
            }
        }
    }
    out
}

/// Convenience entry matching the module surface: the FP64 layer evaluated
/// over the dequantized parameters of a quantized weight bundle.
pub fn fp32_reference_layer(x: &[f64], w: &EncoderWeights) -> Result<Vec<f64>> {
    ReferenceLayer::from_quantized(w).forward(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::synth::random_weights;
    use crate::oracle;

    fn tiny_weights() -> FloatEncoderWeights {
        // 2 tokens, 4 hidden, 1 head, 8 ffn; hand-set projection weights
        let dims = EncoderDims::new(2, 4, 1, 8).unwrap();
        let mut w = FloatEncoderWeights::zeros(dims);
        // simple, asymmetric values
        for (i, v) in w.wq.iter_mut().enumerate() {
            *v = ((i % 5) as f64 - 2.0) * 0.1;
        }
        for (i, v) in w.wk.iter_mut().enumerate() {
            *v = ((i % 7) as f64 - 3.0) * 0.05;
        }
        for (i, v) in w.wv.iter_mut().enumerate() {
            *v = ((i % 3) as f64 - 1.0) * 0.2;
        }
        for (i, v) in w.wo.iter_mut().enumerate() {
            *v = if i % 5 == 0 { 0.3 } else { -0.1 };
        }
        w.bq = vec![0.01, -0.02, 0.03, 0.0];
        w.bk = vec![0.0, 0.01, -0.01, 0.02];
        w.bv = vec![0.05, 0.0, -0.05, 0.1];
        w
    }

    #[test]
    fn attention_matches_hand_computation() {
        // independent recomputation of the 2-token, 4-dim, single-head case
        let w = tiny_weights();
        let layer = ReferenceLayer::from_float(w.clone());
        let x = [0.2, -0.4, 0.6, 0.1, -0.3, 0.5, -0.2, 0.8];
        let trace = layer.forward_trace(&x).unwrap();

        let proj = |xrow: &[f64], wmat: &[f64], b: &[f64], col: usize| -> f64 {
            (0..4).map(|i| xrow[i] * wmat[i * 4 + col]).sum::<f64>() + b[col]
        };
        let mut q = [[0.0; 4]; 2];
        let mut k = [[0.0; 4]; 2];
        let mut v = [[0.0; 4]; 2];
        #[allow(clippy::needless_range_loop)]
        for tok in 0..2 {
            let xrow = &x[tok * 4..(tok + 1) * 4];
            for c in 0..4 {
                q[tok][c] = proj(xrow, &w.wq, &w.bq, c);
                k[tok][c] = proj(xrow, &w.wk, &w.bk, c);
                v[tok][c] = proj(xrow, &w.wv, &w.bv, c);
            }
        }
        #[allow(clippy::needless_range_loop)]
        for tok in 0..2 {
            let s0: f64 = (0..4).map(|c| q[tok][c] * k[0][c]).sum::<f64>() / 2.0;
            let s1: f64 = (0..4).map(|c| q[tok][c] * k[1][c]).sum::<f64>() / 2.0;
            let e0 = (s0 - s0.max(s1)).exp();
            let e1 = (s1 - s0.max(s1)).exp();
            let (p0, p1) = (e0 / (e0 + e1), e1 / (e0 + e1));
            for c in 0..4 {
                let want = p0 * v[0][c] + p1 * v[1][c];
                let got = trace.context[tok * 4 + c];
                assert!(
                    (got - want).abs() < 1e-10,
                    "tok {tok} col {c}: {got} vs {want}"
                );
            }
            assert!((trace.scores[tok * 2] - s0).abs() < 1e-10);
            assert!((trace.scores[tok * 2 + 1] - s1).abs() < 1e-10);
        }
    }

    #[test]
    fn zero_input_gives_zero_pre_layernorm_activations() {
        let dims = EncoderDims::new(3, 8, 2, 16).unwrap();
        let mut w = random_weights(&dims, 7);
        w.bq.iter_mut().for_each(|v| *v = 0.0);
        w.bk.iter_mut().for_each(|v| *v = 0.0);
        w.bv.iter_mut().for_each(|v| *v = 0.0);
        w.bo.iter_mut().for_each(|v| *v = 0.0);
        let layer = ReferenceLayer::from_float(w);
        let trace = layer.forward_trace(&[0.0; 24]).unwrap();
        for &v in trace.attn_out.iter().chain(&trace.res1) {
            assert_eq!(v, 0.0);
        }
    }

    #[test]
    fn value_matrix_scaling_scales_attention_output() {
        let dims = EncoderDims::new(4, 8, 2, 16).unwrap();
        let w = random_weights(&dims, 11);
        let mut w2 = w.clone();
        for v in w2.wv.iter_mut() {
            *v *= 3.0;
        }
        for v in w2.bv.iter_mut() {
            *v *= 3.0;
        }
        for v in w2.bo.iter_mut() {
            *v = 0.0;
        }
        let mut w1 = w.clone();
        for v in w1.bo.iter_mut() {
            *v = 0.0;
        }
        let x: Vec<f64> = (0..4 * 8).map(|i| ((i % 9) as f64 - 4.0) * 0.2).collect();
        let t1 = ReferenceLayer::from_float(w1).forward_trace(&x).unwrap();
        let t2 = ReferenceLayer::from_float(w2).forward_trace(&x).unwrap();
        for (a, b) in t1.attn_out.iter().zip(&t2.attn_out) {
            assert!((3.0 * a - b).abs() < 1e-9, "{a} vs {b}");
        }
    }

    #[test]
    fn identical_tokens_give_identical_rows() {
        let dims = EncoderDims::new(4, 8, 2, 16).unwrap();
        let w = random_weights(&dims, 3);
        let token: Vec<f64> = (0..8).map(|i| (i as f64 - 3.5) * 0.1).collect();
        let x: Vec<f64> = token.repeat(4);
        let out = ReferenceLayer::from_float(w).forward(&x).unwrap();
        for row in 1..4 {
            for c in 0..8 {
                assert!((out[c] - out[row * 8 + c]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn gelu_oracle_used_in_ffn() {
        let dims = EncoderDims::new(1, 4, 1, 4).unwrap();
        let w = random_weights(&dims, 5);
        let layer = ReferenceLayer::from_float(w);
        let x = [0.3, -0.1, 0.7, 0.2];
        let trace = layer.forward_trace(&x).unwrap();
        for (g, h) in trace.gelu_out.iter().zip(&trace.ffn1) {
            assert!((g - oracle::gelu(*h)).abs() < 1e-15);
        }
    }
}
