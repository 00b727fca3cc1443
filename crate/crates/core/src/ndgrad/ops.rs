//! Eager forward kernels shared by the tape and by no-grad inference.
//!
//! Both paths call the same functions, so a tape replay and an eager
//! evaluation of the same network produce bitwise-identical values.

use super::{GradError, Tensor};

fn mismatch(op: &'static str, a: &Tensor, b: &Tensor) -> GradError {
    GradError::ShapeMismatch {
        op,
        lhs: a.shape().to_vec(),
        rhs: b.shape().to_vec(),
    }
}

/// `a · b` for `a: m × k` (or a length-`k` vector) and `b: k × n`.
pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor, GradError> {
    let (m, k) = a.dims2()?;
    let (k2, n) = match b.shape() {
        [r, c] => (*r, *c),
        _ => return Err(mismatch("matmul", a, b)),
    };
    if k != k2 {
        return Err(mismatch("matmul", a, b));
    }
    let mut out = vec![0.0; m * n];
    matmul_kernel(a.data(), b.data(), &mut out, m, k, n);
    let shape = if a.shape().len() == 1 {
        vec![n]
    } else {
        vec![m, n]
    };
    Ok(Tensor::from_parts(shape, out))
}

pub(crate) fn matmul_kernel(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let orow = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
}

/// `g · bᵀ` where `g: m × n`, `b: k × n`; result `m × k`.
pub(crate) fn matmul_nt(g: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * k];
    for i in 0..m {
        let grow = &g[i * n..(i + 1) * n];
        for p in 0..k {
            let brow = &b[p * n..(p + 1) * n];
            out[i * k + p] = grow.iter().zip(brow).map(|(x, y)| x * y).sum();
        }
    }
    out
}

/// `aᵀ · g` where `a: m × k`, `g: m × n`; result `k × n`.
pub(crate) fn matmul_tn(a: &[f64], g: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; k * n];
    for i in 0..m {
        let grow = &g[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let orow = &mut out[p * n..(p + 1) * n];
            for (o, &gv) in orow.iter_mut().zip(grow) {
                *o += av * gv;
            }
        }
    }
    out
}

/// Adds a length-`n` bias to every row of an `m × n` tensor.
pub fn add_bias(a: &Tensor, bias: &Tensor) -> Result<Tensor, GradError> {
    let (_, n) = a.dims2()?;
    let (br, bn) = bias.dims2()?;
    if br != 1 || bn != n {
        return Err(mismatch("add_bias", a, bias));
    }
    let b = bias.data();
    let mut out = a.data().to_vec();
    for row in out.chunks_mut(n) {
        for (o, &bv) in row.iter_mut().zip(b) {
            *o += bv;
        }
    }
    Ok(Tensor::from_parts(a.shape().to_vec(), out))
}

fn zip_with(
    op: &'static str,
    a: &Tensor,
    b: &Tensor,
    f: impl Fn(f64, f64) -> f64,
) -> Result<Tensor, GradError> {
    if a.dims2()? != b.dims2()? {
        return Err(mismatch(op, a, b));
    }
    let out = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Ok(Tensor::from_parts(a.shape().to_vec(), out))
}

pub fn add(a: &Tensor, b: &Tensor) -> Result<Tensor, GradError> {
    zip_with("add", a, b, |x, y| x + y)
}

pub fn sub(a: &Tensor, b: &Tensor) -> Result<Tensor, GradError> {
    zip_with("sub", a, b, |x, y| x - y)
}

pub fn mul(a: &Tensor, b: &Tensor) -> Result<Tensor, GradError> {
    zip_with("mul", a, b, |x, y| x * y)
}

pub fn map(a: &Tensor, f: impl Fn(f64) -> f64) -> Tensor {
    Tensor::from_parts(a.shape().to_vec(), a.data().iter().map(|&x| f(x)).collect())
}

/// `log(1 + eˣ)` without overflow for large `x`.
pub fn softplus_scalar(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn exp(a: &Tensor) -> Tensor {
    map(a, f64::exp)
}

pub fn square(a: &Tensor) -> Tensor {
    map(a, |x| x * x)
}

pub fn softplus(a: &Tensor) -> Tensor {
    map(a, softplus_scalar)
}

pub fn tanh(a: &Tensor) -> Tensor {
    map(a, f64::tanh)
}

pub fn clamp(a: &Tensor, lo: f64, hi: f64) -> Tensor {
    map(a, |x| x.clamp(lo, hi))
}

pub fn scale(a: &Tensor, s: f64) -> Tensor {
    map(a, |x| s * x)
}

pub fn add_scalar(a: &Tensor, s: f64) -> Tensor {
    map(a, |x| x + s)
}

/// Sum of every element, as a `1 × 1` tensor.
pub fn sum_all(a: &Tensor) -> Tensor {
    Tensor::scalar(a.data().iter().sum())
}

/// Per-row sums of an `m × n` tensor, as `m × 1`.
pub fn sum_rows(a: &Tensor) -> Result<Tensor, GradError> {
    let (m, n) = a.dims2()?;
    let out = a.data().chunks(n).map(|r| r.iter().sum()).collect();
    Ok(Tensor::from_parts(vec![m, 1], out))
}

/// Concatenates along the feature (last) axis.
pub fn concat(a: &Tensor, b: &Tensor) -> Result<Tensor, GradError> {
    let (ma, na) = a.dims2()?;
    let (mb, nb) = b.dims2()?;
    if ma != mb {
        return Err(mismatch("concat", a, b));
    }
    let mut out = Vec::with_capacity(ma * (na + nb));
    for i in 0..ma {
        out.extend_from_slice(&a.data()[i * na..(i + 1) * na]);
        out.extend_from_slice(&b.data()[i * nb..(i + 1) * nb]);
    }
    let shape = if a.shape().len() == 1 && b.shape().len() == 1 {
        vec![na + nb]
    } else {
        vec![ma, na + nb]
    };
    Ok(Tensor::from_parts(shape, out))
}

/// Columns `start..end` along the feature axis.
pub fn slice(a: &Tensor, start: usize, end: usize) -> Result<Tensor, GradError> {
    let (m, n) = a.dims2()?;
    if start >= end || end > n {
        return Err(GradError::SliceOutOfRange {
            start,
            end,
            width: n,
        });
    }
    let w = end - start;
    let mut out = Vec::with_capacity(m * w);
    for i in 0..m {
        out.extend_from_slice(&a.data()[i * n + start..i * n + end]);
    }
    let shape = if a.shape().len() == 1 {
        vec![w]
    } else {
        vec![m, w]
    };
    Ok(Tensor::from_parts(shape, out))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matmul_two_by_two() {
        let a = Tensor::matrix(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let b = Tensor::matrix(2, 1, vec![1.0, 1.0]).unwrap();
        let c = matmul(&a, &b).unwrap();
        assert_eq!(c.shape(), &[2, 1]);
        assert_eq!(c.data(), &[3.0, 7.0]);
    }

    #[test]
    fn matmul_rejects_inner_mismatch_naming_shapes() {
        let a = Tensor::zeros(&[2, 3]);
        let b = Tensor::zeros(&[2, 2]);
        let err = matmul(&a, &b).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("[2, 3]") && msg.contains("[2, 2]"), "{msg}");
    }

    #[test]
    fn softplus_at_zero_is_log_two() {
        assert!((softplus_scalar(0.0) - 0.6931471805599453).abs() < 1e-16);
        assert!((softplus_scalar(800.0) - 800.0).abs() < 1e-12);
        assert!(softplus_scalar(-800.0) >= 0.0);
    }

    #[test]
    fn concat_vectors() {
        let c = concat(&Tensor::vector(&[1.0, 2.0]), &Tensor::vector(&[3.0])).unwrap();
        assert_eq!(c.shape(), &[3]);
        assert_eq!(c.data(), &[1.0, 2.0, 3.0]);
    }

    #[test]
    fn slice_bounds_checked() {
        let a = Tensor::vector(&[1.0, 2.0, 3.0]);
        assert_eq!(slice(&a, 1, 3).unwrap().data(), &[2.0, 3.0]);
        assert!(slice(&a, 2, 4).is_err());
        assert!(slice(&a, 2, 2).is_err());
    }

    #[test]
    fn bias_broadcasts_over_rows() {
        let a = Tensor::matrix(2, 2, vec![0.0, 1.0, 2.0, 3.0]).unwrap();
        let out = add_bias(&a, &Tensor::vector(&[10.0, 20.0])).unwrap();
        assert_eq!(out.data(), &[10.0, 21.0, 12.0, 23.0]);
        assert!(add_bias(&a, &Tensor::vector(&[1.0])).is_err());
    }

    #[test]
    fn transposed_products_agree_with_plain_matmul() {
        let a: Vec<f64> = (0..6).map(|v| v as f64 - 2.5).collect();
        let b: Vec<f64> = (0..12).map(|v| (v as f64).sin()).collect();
        // a: 2×3, b: 4×3 -> a bᵀ: 2×4
        let nt = matmul_nt(&a, &b, 2, 4, 3);
        let mut bt = vec![0.0; 12];
        for r in 0..4 {
            for c in 0..3 {
                bt[c * 4 + r] = b[r * 3 + c];
            }
        }
        let mut plain = vec![0.0; 8];
        matmul_kernel(&a, &bt, &mut plain, 2, 3, 4);
        for (x, y) in nt.iter().zip(&plain) {
            assert!((x - y).abs() < 1e-12);
        }
    }
}
