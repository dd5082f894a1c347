use crate::error::{DeqError, Result};
use crate::layers::FusionParams;
use crate::numcore::{Rng, Tensor2};

/// Affine classification head `logits = z·W + b` with `W` of shape `d × C`.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadParams {
    pub weight: Tensor2,
    pub bias: Tensor2,
}

impl HeadParams {
    /// `W ~ N(0, 1/d)`, `b = 0`.
    pub fn init(rng: &mut Rng, width: usize, classes: usize) -> Result<Self> {
        if classes < 2 {
            return Err(DeqError::config(format!("head needs >= 2 classes, got {classes}")));
        }
        Ok(Self {
            weight: rng.randn(width, classes, (1.0 / width as f64).sqrt()),
            bias: Tensor2::zeros(1, classes),
        })
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            weight: Tensor2::zeros(self.weight.rows(), self.weight.cols()),
            bias: Tensor2::zeros(1, self.bias.cols()),
        }
    }

    pub fn classes(&self) -> usize {
        self.weight.cols()
    }

    pub fn logits(&self, z: &Tensor2) -> Result<Tensor2> {
        z.matmul(&self.weight)?.add_row(&self.bias)
    }

    /// `(dz, d_head)` for an upstream cotangent on the logits.
    pub fn vjp(&self, z: &Tensor2, d_logits: &Tensor2) -> Result<(Tensor2, HeadParams)> {
        Ok((
            d_logits.matmul_t(&self.weight)?,
            HeadParams {
                weight: z.t_matmul(d_logits)?,
                bias: d_logits.sum_rows(),
            },
        ))
    }
}

/// Mean softmax cross-entropy and its cotangent on the logits.
pub fn cross_entropy(logits: &Tensor2, labels: &[usize]) -> Result<(f64, Tensor2)> {
    let (rows, classes) = logits.shape();
    if rows != labels.len() {
        return Err(DeqError::shape("cross_entropy", logits.shape(), (labels.len(), classes)));
    }
    if rows == 0 {
        return Err(DeqError::Domain("cross entropy of an empty batch".into()));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
        return Err(DeqError::Domain(format!("label {bad} out of range for {classes} classes")));
    }
    let mut grad = Tensor2::zeros(rows, classes);
    let mut loss = 0.0;
    let inv = 1.0 / rows as f64;
    for (r, &y) in labels.iter().enumerate() {
        let row = logits.row(r);
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = row.iter().map(|v| (v - m).exp()).sum();
        let lse = m + sum.ln();
        loss += lse - row[y];
        let g = grad.row_mut(r);
        for c in 0..classes {
            g[c] = (row[c] - lse).exp() * inv;
        }
        g[y] -= inv;
    }
    Ok((loss * inv, grad))
}

/// Fusion parameters plus the classification head.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub fusion: FusionParams,
    pub head: HeadParams,
}

impl Model {
    pub fn init(rng: &mut Rng, n_modalities: usize, width: usize, classes: usize, groups: usize) -> Result<Self> {
        let fusion = FusionParams::init(rng, n_modalities, width, groups)?;
        let head = HeadParams::init(rng, width, classes)?;
        Ok(Self { fusion, head })
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            fusion: self.fusion.zeros_like(),
            head: self.head.zeros_like(),
        }
    }

    /// Fusion tensors in [`FusionParams::named`] order, then `head.weight`
    /// and `head.bias`.
    pub fn named(&self) -> Vec<(String, &Tensor2)> {
        let mut out = self.fusion.named();
        out.push(("head.weight".into(), &self.head.weight));
        out.push(("head.bias".into(), &self.head.bias));
        out
    }

    pub fn named_mut(&mut self) -> Vec<(String, &mut Tensor2)> {
        let mut out = self.fusion.named_mut();
        out.push(("head.weight".into(), &mut self.head.weight));
        out.push(("head.bias".into(), &mut self.head.bias));
        out
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.named().iter().flat_map(|(_, t)| t.data().iter().copied()).collect()
    }

    pub fn n_values(&self) -> usize {
        self.named().iter().map(|(_, t)| t.len()).sum()
    }

    pub fn assign_flat(&mut self, values: &[f64]) -> Result<()> {
        let n = self.n_values();
        if values.len() != n {
            return Err(DeqError::shape("Model::assign_flat", (values.len(), 1), (n, 1)));
        }
        let mut off = 0;
        for (_, t) in self.named_mut() {
            let len = t.len();
            t.data_mut().copy_from_slice(&values[off..off + len]);
            off += len;
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.named().iter().all(|(_, t)| t.is_finite())
    }
}
