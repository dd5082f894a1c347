//! Differentiable primitives. Each forward has a matching VJP that consumes
//! whatever the forward kept.

use crate::error::{DeqError, Result};
use crate::numcore::Tensor2;

/// Per-channel affine applied after group standardization.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupNormAffine {
    pub scale: Tensor2,
    pub shift: Tensor2,
}

impl GroupNormAffine {
    pub fn identity(width: usize) -> Self {
        Self {
            scale: Tensor2::filled(1, width, 1.0),
            shift: Tensor2::zeros(1, width),
        }
    }

    pub fn zeros(width: usize) -> Self {
        Self {
            scale: Tensor2::zeros(1, width),
            shift: Tensor2::zeros(1, width),
        }
    }
}

/// What group norm keeps for its VJP.
#[derive(Debug, Clone)]
pub struct GroupNormCache {
    pub groups: usize,
    /// Standardized input before the affine.
    pub x_hat: Tensor2,
    /// `1/√(var + eps)` per (row, group), row-major.
    pub inv_std: Vec<f64>,
    /// Group means, same layout as `inv_std`.
    pub mean: Vec<f64>,
}

pub fn check_groups(width: usize, groups: usize) -> Result<()> {
    if groups == 0 || width % groups != 0 {
        return Err(DeqError::config(format!(
            "group count {groups} does not divide width {width}"
        )));
    }
    Ok(())
}

/// Group normalization over contiguous channel groups of each row.
///
/// Each group is shifted to zero mean and divided by `√(var + eps)` (biased
/// variance), then `scale`/`shift` are applied per channel.
pub fn group_norm(
    x: &Tensor2,
    groups: usize,
    eps: f64,
    affine: &GroupNormAffine,
) -> Result<(Tensor2, GroupNormCache)> {
    let (rows, width) = x.shape();
    check_groups(width, groups)?;
    if !(eps > 0.0) {
        return Err(DeqError::config(format!("group norm eps must be > 0, got {eps}")));
    }
    if affine.scale.shape() != (1, width) || affine.shift.shape() != (1, width) {
        return Err(DeqError::shape("group_norm", x.shape(), affine.scale.shape()));
    }
    let gsize = width / groups;
    let mut x_hat = Tensor2::zeros(rows, width);
    let mut out = Tensor2::zeros(rows, width);
    let mut inv_std = Vec::with_capacity(rows * groups);
    let mut means = Vec::with_capacity(rows * groups);
    let scale = affine.scale.data();
    let shift = affine.shift.data();
    for r in 0..rows {
        let row = x.row(r);
        for g in 0..groups {
            let span = g * gsize..(g + 1) * gsize;
            let seg = &row[span.clone()];
            let mean = seg.iter().sum::<f64>() / gsize as f64;
            let var = seg.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / gsize as f64;
            let is = 1.0 / (var + eps).sqrt();
            inv_std.push(is);
            means.push(mean);
            for c in span {
                let h = (row[c] - mean) * is;
                x_hat.set(r, c, h);
                out.set(r, c, h * scale[c] + shift[c]);
            }
        }
    }
    Ok((
        out,
        GroupNormCache {
            groups,
            x_hat,
            inv_std,
            mean: means,
        },
    ))
}

/// Cotangents of group norm: `(dx, d_affine)`.
pub fn group_norm_vjp(
    cache: &GroupNormCache,
    affine: &GroupNormAffine,
    upstream: &Tensor2,
) -> Result<(Tensor2, GroupNormAffine)> {
    let (rows, width) = cache.x_hat.shape();
    if upstream.shape() != (rows, width) {
        return Err(DeqError::shape("group_norm_vjp", upstream.shape(), (rows, width)));
    }
    let gsize = width / cache.groups;
    let m = gsize as f64;
    let scale = affine.scale.data();
    let mut dx = Tensor2::zeros(rows, width);
    let mut d_affine = GroupNormAffine::zeros(width);
    for r in 0..rows {
        let u = upstream.row(r);
        let xh = cache.x_hat.row(r);
        for c in 0..width {
            d_affine.scale.data_mut()[c] += u[c] * xh[c];
            d_affine.shift.data_mut()[c] += u[c];
        }
        for g in 0..cache.groups {
            let span = g * gsize..(g + 1) * gsize;
            let is = cache.inv_std[r * cache.groups + g];
            let mut sum_d = 0.0;
            let mut sum_dx = 0.0;
            for c in span.clone() {
                let d = u[c] * scale[c];
                sum_d += d;
                sum_dx += d * xh[c];
            }
            let out = dx.row_mut(r);
            for c in span {
                let d = u[c] * scale[c];
                out[c] = is / m * (m * d - sum_d - xh[c] * sum_dx);
            }
        }
    }
    Ok((dx, d_affine))
}

/// `y = x Wᵀ + b`, i.e. `W·x` applied to every row.
pub fn affine(x: &Tensor2, weight: &Tensor2, bias: &Tensor2) -> Result<Tensor2> {
    x.matmul_t(weight)?.add_row(bias)
}

/// Cotangents of [`affine`]: `(dx, dW, db)`.
pub fn affine_vjp(
    x: &Tensor2,
    weight: &Tensor2,
    upstream: &Tensor2,
) -> Result<(Tensor2, Tensor2, Tensor2)> {
    let dx = upstream.matmul(weight)?;
    let dw = upstream.t_matmul(x)?;
    Ok((dx, dw, upstream.sum_rows()))
}

pub fn relu(x: &Tensor2) -> Tensor2 {
    x.map(|v| if v > 0.0 { v } else { 0.0 })
}

/// Masks the upstream by `x > 0` (the derivative at exactly 0 is 0).
pub fn relu_vjp(x: &Tensor2, upstream: &Tensor2) -> Result<Tensor2> {
    x.zip_map(upstream, "relu_vjp", |xv, u| if xv > 0.0 { u } else { 0.0 })
}

pub fn sigmoid(x: &Tensor2) -> Tensor2 {
    x.map(|v| 1.0 / (1.0 + (-v).exp()))
}

/// VJP of the sigmoid expressed through its output `y`.
pub fn sigmoid_vjp(y: &Tensor2, upstream: &Tensor2) -> Result<Tensor2> {
    y.zip_map(upstream, "sigmoid_vjp", |s, u| u * s * (1.0 - s))
}

/// Cotangents of `a ⊙ b`: `(u ⊙ b, u ⊙ a)`.
pub fn hadamard_vjp(a: &Tensor2, b: &Tensor2, upstream: &Tensor2) -> Result<(Tensor2, Tensor2)> {
    Ok((upstream.hadamard(b)?, upstream.hadamard(a)?))
}

/// Elementwise sum of equally shaped tensors.
pub fn sum_all(parts: &[Tensor2]) -> Result<Tensor2> {
    let first = parts
        .first()
        .ok_or_else(|| DeqError::config("sum over zero tensors"))?;
    let mut acc = first.clone();
    for p in &parts[1..] {
        acc.add_assign(p)?;
    }
    Ok(acc)
}

/// The VJP of a sum hands the upstream to every term.
pub fn sum_vjp(n_terms: usize, upstream: &Tensor2) -> Vec<Tensor2> {
    vec![upstream.clone(); n_terms]
}
