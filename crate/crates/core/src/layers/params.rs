use super::primitives::{check_groups, GroupNormAffine};
use crate::error::{DeqError, Result};
use crate::numcore::{Rng, Tensor2};

/// Injected per-modality features `x_1..x_N`, each `batch × width`.
#[derive(Debug, Clone, PartialEq)]
pub struct ModalityBundle {
    features: Vec<Tensor2>,
}

impl ModalityBundle {
    pub fn new(features: Vec<Tensor2>) -> Result<Self> {
        let first = features
            .first()
            .ok_or_else(|| DeqError::config("a modality bundle needs at least one modality"))?;
        for f in &features[1..] {
            if f.shape() != first.shape() {
                return Err(DeqError::shape("ModalityBundle::new", first.shape(), f.shape()));
            }
        }
        Ok(Self { features })
    }

    pub fn n_modalities(&self) -> usize {
        self.features.len()
    }

    pub fn width(&self) -> usize {
        self.features[0].cols()
    }

    pub fn batch(&self) -> usize {
        self.features[0].rows()
    }

    pub fn features(&self) -> &[Tensor2] {
        &self.features
    }

    pub fn get(&self, i: usize) -> &Tensor2 {
        &self.features[i]
    }

    pub fn features_mut(&mut self) -> &mut [Tensor2] {
        &mut self.features
    }

    /// Rows `idx` of every modality, in the given order.
    pub fn select_rows(&self, idx: &[usize]) -> ModalityBundle {
        let features = self
            .features
            .iter()
            .map(|f| {
                let mut data = Vec::with_capacity(idx.len() * f.cols());
                for &r in idx {
                    data.extend_from_slice(f.row(r));
                }
                Tensor2::new(idx.len(), f.cols(), data).expect("row gather")
            })
            .collect();
        ModalityBundle { features }
    }
}

/// Optional squashing applied to the gate logits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum GateActivation {
    /// `α = θ_α(z_fuse + z_i) + b_α`, exactly affine.
    #[default]
    Identity,
    Sigmoid,
}

impl GateActivation {
    pub fn as_str(self) -> &'static str {
        match self {
            GateActivation::Identity => "identity",
            GateActivation::Sigmoid => "sigmoid",
        }
    }
}

impl std::str::FromStr for GateActivation {
    type Err = DeqError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "identity" => Ok(GateActivation::Identity),
            "sigmoid" => Ok(GateActivation::Sigmoid),
            other => Err(DeqError::config(format!("unknown gate activation '{other}'"))),
        }
    }
}

/// Parameters of one modality block: two affine maps and three group norms.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockParams {
    pub w_hat: Tensor2,
    pub b_hat: Tensor2,
    pub gn_hat: GroupNormAffine,
    pub w_tilde: Tensor2,
    pub b_tilde: Tensor2,
    pub gn_tilde: GroupNormAffine,
    pub gn_out: GroupNormAffine,
}

impl BlockParams {
    fn zeros(d: usize) -> Self {
        Self {
            w_hat: Tensor2::zeros(d, d),
            b_hat: Tensor2::zeros(1, d),
            gn_hat: GroupNormAffine::zeros(d),
            w_tilde: Tensor2::zeros(d, d),
            b_tilde: Tensor2::zeros(1, d),
            gn_tilde: GroupNormAffine::zeros(d),
            gn_out: GroupNormAffine::zeros(d),
        }
    }

    fn identity_affines(d: usize) -> Self {
        Self {
            gn_hat: GroupNormAffine::identity(d),
            gn_tilde: GroupNormAffine::identity(d),
            gn_out: GroupNormAffine::identity(d),
            ..Self::zeros(d)
        }
    }
}

/// Every learnable tensor of the fusion system plus its structural settings.
///
/// The same type doubles as the container for parameter cotangents (see
/// [`FusionParams::zeros_like`]).
#[derive(Debug, Clone, PartialEq)]
pub struct FusionParams {
    pub width: usize,
    pub groups: usize,
    pub eps: f64,
    pub gate_activation: GateActivation,
    pub blocks: Vec<BlockParams>,
    pub gate_weight: Tensor2,
    pub gate_bias: Tensor2,
    pub fuse_weight: Tensor2,
    pub fuse_bias: Tensor2,
    pub gn_fuse: GroupNormAffine,
    /// Modality importance `w_i`, stored as a `1 × N` row.
    pub modality_weights: Tensor2,
}

pub const DEFAULT_EPS: f64 = 1e-5;

/// Weight scale relative to `1/√d` used by [`FusionParams::init`].
pub const DEFAULT_INIT_GAIN: f64 = 0.25;

impl FusionParams {
    /// Weights `~ N(0, gain²/d)`, biases 0, group-norm affines 1/0, `w_i = 1/N`.
    pub fn init_with_gain(
        rng: &mut Rng,
        n_modalities: usize,
        width: usize,
        groups: usize,
        gain: f64,
    ) -> Result<Self> {
        if !(gain > 0.0 && gain.is_finite()) {
            return Err(DeqError::config(format!("init gain must be positive, got {gain}")));
        }
        let mut p = Self::structural(n_modalities, width, groups)?;
        let std = gain / (width as f64).sqrt();
        for b in &mut p.blocks {
            b.w_hat = rng.randn(width, width, std);
            b.w_tilde = rng.randn(width, width, std);
        }
        p.gate_weight = rng.randn(width, width, std);
        p.fuse_weight = rng.randn(width, width, std);
        Ok(p)
    }

    /// [`FusionParams::init_with_gain`] at [`DEFAULT_INIT_GAIN`].
    pub fn init(rng: &mut Rng, n_modalities: usize, width: usize, groups: usize) -> Result<Self> {
        Self::init_with_gain(rng, n_modalities, width, groups, DEFAULT_INIT_GAIN)
    }

    /// All weights and biases zero, affines identity, `w_i = 1/N`.
    pub fn structural(n_modalities: usize, width: usize, groups: usize) -> Result<Self> {
        if n_modalities == 0 {
            return Err(DeqError::config("need at least one modality"));
        }
        check_groups(width, groups)?;
        Ok(Self {
            width,
            groups,
            eps: DEFAULT_EPS,
            gate_activation: GateActivation::Identity,
            blocks: (0..n_modalities).map(|_| BlockParams::identity_affines(width)).collect(),
            gate_weight: Tensor2::zeros(width, width),
            gate_bias: Tensor2::zeros(1, width),
            fuse_weight: Tensor2::zeros(width, width),
            fuse_bias: Tensor2::zeros(1, width),
            gn_fuse: GroupNormAffine::identity(width),
            modality_weights: Tensor2::filled(1, n_modalities, 1.0 / n_modalities as f64),
        })
    }

    /// Same structure, every tensor zero.
    pub fn zeros_like(&self) -> Self {
        let d = self.width;
        Self {
            width: d,
            groups: self.groups,
            eps: self.eps,
            gate_activation: self.gate_activation,
            blocks: (0..self.n_modalities()).map(|_| BlockParams::zeros(d)).collect(),
            gate_weight: Tensor2::zeros(d, d),
            gate_bias: Tensor2::zeros(1, d),
            fuse_weight: Tensor2::zeros(d, d),
            fuse_bias: Tensor2::zeros(1, d),
            gn_fuse: GroupNormAffine::zeros(d),
            modality_weights: Tensor2::zeros(1, self.n_modalities()),
        }
    }

    pub fn n_modalities(&self) -> usize {
        self.blocks.len()
    }

    pub fn validate(&self) -> Result<()> {
        check_groups(self.width, self.groups)?;
        if !(self.eps > 0.0) {
            return Err(DeqError::config("group norm eps must be positive"));
        }
        let d = self.width;
        let mut bad = None;
        self.visit(|name, t| {
            let want = expected_shape(name, d, self.n_modalities());
            if bad.is_none() && t.shape() != want {
                bad = Some(DeqError::shape("FusionParams::validate", t.shape(), want));
            }
            if bad.is_none() && !t.is_finite() {
                bad = Some(DeqError::Numeric(format!("parameter {name} is not finite")));
            }
        });
        bad.map_or(Ok(()), Err)
    }

    pub fn check_bundle(&self, x: &ModalityBundle) -> Result<()> {
        if x.n_modalities() != self.n_modalities() {
            return Err(DeqError::config(format!(
                "bundle has {} modalities, parameters expect {}",
                x.n_modalities(),
                self.n_modalities()
            )));
        }
        if x.width() != self.width {
            return Err(DeqError::shape(
                "check_bundle",
                (x.batch(), x.width()),
                (x.batch(), self.width),
            ));
        }
        Ok(())
    }

    /// Every tensor with its canonical name, in a fixed order.
    pub fn named(&self) -> Vec<(String, &Tensor2)> {
        let mut out = Vec::with_capacity(10 * self.blocks.len() + 7);
        for (i, b) in self.blocks.iter().enumerate() {
            out.push((format!("block{i}.w_hat"), &b.w_hat));
            out.push((format!("block{i}.b_hat"), &b.b_hat));
            out.push((format!("block{i}.gn_hat.scale"), &b.gn_hat.scale));
            out.push((format!("block{i}.gn_hat.shift"), &b.gn_hat.shift));
            out.push((format!("block{i}.w_tilde"), &b.w_tilde));
            out.push((format!("block{i}.b_tilde"), &b.b_tilde));
            out.push((format!("block{i}.gn_tilde.scale"), &b.gn_tilde.scale));
            out.push((format!("block{i}.gn_tilde.shift"), &b.gn_tilde.shift));
            out.push((format!("block{i}.gn_out.scale"), &b.gn_out.scale));
            out.push((format!("block{i}.gn_out.shift"), &b.gn_out.shift));
        }
        out.push(("gate.weight".into(), &self.gate_weight));
        out.push(("gate.bias".into(), &self.gate_bias));
        out.push(("fuse.weight".into(), &self.fuse_weight));
        out.push(("fuse.bias".into(), &self.fuse_bias));
        out.push(("fuse.gn.scale".into(), &self.gn_fuse.scale));
        out.push(("fuse.gn.shift".into(), &self.gn_fuse.shift));
        out.push(("modality_weights".into(), &self.modality_weights));
        out
    }

    /// Mutable counterpart of [`FusionParams::named`], same order.
    pub fn named_mut(&mut self) -> Vec<(String, &mut Tensor2)> {
        let mut out = Vec::with_capacity(10 * self.blocks.len() + 7);
        for (i, b) in self.blocks.iter_mut().enumerate() {
            out.push((format!("block{i}.w_hat"), &mut b.w_hat));
            out.push((format!("block{i}.b_hat"), &mut b.b_hat));
            out.push((format!("block{i}.gn_hat.scale"), &mut b.gn_hat.scale));
            out.push((format!("block{i}.gn_hat.shift"), &mut b.gn_hat.shift));
            out.push((format!("block{i}.w_tilde"), &mut b.w_tilde));
            out.push((format!("block{i}.b_tilde"), &mut b.b_tilde));
            out.push((format!("block{i}.gn_tilde.scale"), &mut b.gn_tilde.scale));
            out.push((format!("block{i}.gn_tilde.shift"), &mut b.gn_tilde.shift));
            out.push((format!("block{i}.gn_out.scale"), &mut b.gn_out.scale));
            out.push((format!("block{i}.gn_out.shift"), &mut b.gn_out.shift));
        }
        out.push(("gate.weight".into(), &mut self.gate_weight));
        out.push(("gate.bias".into(), &mut self.gate_bias));
        out.push(("fuse.weight".into(), &mut self.fuse_weight));
        out.push(("fuse.bias".into(), &mut self.fuse_bias));
        out.push(("fuse.gn.scale".into(), &mut self.gn_fuse.scale));
        out.push(("fuse.gn.shift".into(), &mut self.gn_fuse.shift));
        out.push(("modality_weights".into(), &mut self.modality_weights));
        out
    }

    pub fn visit(&self, mut f: impl FnMut(&str, &Tensor2)) {
        for (n, t) in self.named() {
            f(&n, t);
        }
    }

    pub fn visit_mut(&mut self, mut f: impl FnMut(&str, &mut Tensor2)) {
        for (n, t) in self.named_mut() {
            f(&n, t);
        }
    }

    pub fn names(&self) -> Vec<String> {
        let mut names = Vec::new();
        self.visit(|n, _| names.push(n.to_string()));
        names
    }

    pub fn n_values(&self) -> usize {
        let mut n = 0;
        self.visit(|_, t| n += t.len());
        n
    }

    /// Concatenation of all tensors in visit order.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.n_values());
        self.visit(|_, t| out.extend_from_slice(t.data()));
        out
    }

    pub fn assign_flat(&mut self, values: &[f64]) -> Result<()> {
        if values.len() != self.n_values() {
            return Err(DeqError::shape(
                "FusionParams::assign_flat",
                (values.len(), 1),
                (self.n_values(), 1),
            ));
        }
        let mut offset = 0;
        self.visit_mut(|_, t| {
            let n = t.len();
            t.data_mut().copy_from_slice(&values[offset..offset + n]);
            offset += n;
        });
        Ok(())
    }

    pub fn tensor(&self, name: &str) -> Option<&Tensor2> {
        self.named().into_iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn tensor_mut(&mut self, name: &str) -> Option<&mut Tensor2> {
        self.named_mut()
            .into_iter()
            .find(|(n, _)| n == name)
            .map(|(_, t)| t)
    }
}

fn expected_shape(name: &str, d: usize, n: usize) -> (usize, usize) {
    if name == "modality_weights" {
        (1, n)
    } else if name.ends_with("weight") || name.ends_with("w_hat") || name.ends_with("w_tilde") {
        (d, d)
    } else {
        (1, d)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn init_has_expected_structure() {
        let p = FusionParams::init(&mut Rng::new(0), 3, 8, 2).unwrap();
        p.validate().unwrap();
        assert_eq!(p.n_modalities(), 3);
        assert_eq!(p.modality_weights.data(), &[1.0 / 3.0; 3]);
        assert_eq!(p.blocks[0].gn_hat.scale.data(), &[1.0; 8]);
        assert_eq!(p.gate_bias.max_abs(), 0.0);
        assert_eq!(p.names().len(), 3 * 10 + 7);
    }

    #[test]
    fn groups_must_divide_width() {
        assert!(FusionParams::init(&mut Rng::new(0), 2, 6, 4).is_err());
        assert!(FusionParams::structural(0, 6, 1).is_err());
    }

    #[test]
    fn flatten_and_assign_are_inverse() {
        let p = FusionParams::init(&mut Rng::new(1), 2, 4, 1).unwrap();
        let mut q = p.zeros_like();
        q.assign_flat(&p.flatten()).unwrap();
        assert_eq!(p, q);
    }

    #[test]
    fn lookup_by_name() {
        let mut p = FusionParams::init(&mut Rng::new(1), 2, 4, 1).unwrap();
        p.tensor_mut("gate.bias").unwrap().data_mut()[0] = 7.0;
        assert_eq!(p.gate_bias.get(0, 0), 7.0);
        assert_eq!(p.tensor("block1.gn_out.scale").unwrap().shape(), (1, 4));
        assert!(p.tensor("nope").is_none());
    }

    #[test]
    fn bundle_requires_matching_shapes() {
        assert!(ModalityBundle::new(vec![]).is_err());
        assert!(ModalityBundle::new(vec![Tensor2::zeros(2, 3), Tensor2::zeros(2, 4)]).is_err());
        let b = ModalityBundle::new(vec![Tensor2::zeros(2, 3), Tensor2::zeros(2, 3)]).unwrap();
        assert_eq!((b.n_modalities(), b.batch(), b.width()), (2, 2, 3));
    }
}
