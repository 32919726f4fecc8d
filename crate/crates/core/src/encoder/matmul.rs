//! INT8 matrix multiplication with INT32 accumulation.

use crate::error::{Error, Result};
use crate::poly::narrow_i32;
use crate::quant::{QParams, QTensor};

fn check_8bit(t: &QTensor, context: &'static str) -> Result<()> {
    if t.params().bits() != 8 {
        return Err(Error::BitsMismatch {
            context,
            expected: 8,
            actual: t.params().bits(),
        });
    }
    Ok(())
}

/// `A (m x k, int8) * B (k x n, int8) + bias -> (m x n, int32)` at scale
/// `S_A * S_B`. The bias, when present, must already be quantized at that
/// product scale. Accumulation runs in 64-bit and narrows per element with
/// the crate's trap/saturate policy.
pub fn int_matmul(a: &QTensor, b: &QTensor, bias: Option<&[i32]>) -> Result<QTensor> {
    let out_params = QParams::from_scale(32, a.scale() * b.scale())?;
    int_matmul_with_params(a, b, bias, out_params)
}

/// [`int_matmul`] with a precomputed output parameter block, so the hot path
/// performs no float work.
pub(crate) fn int_matmul_with_params(
    a: &QTensor,
    b: &QTensor,
    bias: Option<&[i32]>,
    out_params: QParams,
) -> Result<QTensor> {
    check_8bit(a, "matmul lhs")?;
    check_8bit(b, "matmul rhs")?;
    let (ashape, bshape) = (a.shape(), b.shape());
    if ashape.len() != 2 || bshape.len() != 2 {
        return Err(Error::DimMismatch {
            context: "matmul rank",
            expected: 2,
            actual: ashape.len().max(bshape.len()),
        });
    }
    let (m, k) = (ashape[0], ashape[1]);
    let (kb, n) = (bshape[0], bshape[1]);
    if k != kb {
        return Err(Error::DimMismatch {
            context: "matmul inner dimension",
            expected: k,
            actual: kb,
        });
    }
    if let Some(bias) = bias {
        if bias.len() != n {
            return Err(Error::DimMismatch {
                context: "matmul bias",
                expected: n,
                actual: bias.len(),
            });
        }
    }

    let adata = a.data();
    let bdata = b.data();
    let mut out = Vec::with_capacity(m * n);
    let mut acc = vec![0i64; n];
    for i in 0..m {
        match bias {
            Some(bias) => {
                for (dst, &bj) in acc.iter_mut().zip(bias) {
                    *dst = bj as i64;
                }
            }
            None => acc.fill(0),
        }
        let arow = &adata[i * k..(i + 1) * k];
        for (l, &a_il) in arow.iter().enumerate() {
            if a_il == 0 {
                continue;
            }
            let a_il = a_il as i64;
            let brow = &bdata[l * n..(l + 1) * n];
            for (dst, &b_lj) in acc.iter_mut().zip(brow) {
                *dst += a_il * b_lj as i64;
            }
        }
        out.extend(acc.iter().map(|&v| narrow_i32(v)));
    }
    QTensor::new(out, out_params, vec![m, n])
}
