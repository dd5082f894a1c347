use crate::error::{DeqError, Result};
use crate::layers::ModalityBundle;
use crate::numcore::{Rng, Tensor2};

/// How the two sign draws `(s₁, s₂)` become a class label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LabelRule {
    /// Two classes, label `[s₁·s₂ > 0]`. Neither modality alone carries any
    /// information about the label, and no linear function of the inputs
    /// separates it.
    #[default]
    SignProduct,
    /// Four classes, label `2·[s₁ > 0] + [s₂ > 0]`.
    SignPair,
}

impl LabelRule {
    pub fn classes(self) -> usize {
        match self {
            LabelRule::SignProduct => 2,
            LabelRule::SignPair => 4,
        }
    }

    pub fn label(self, s1: f64, s2: f64) -> usize {
        match self {
            LabelRule::SignProduct => usize::from(s1 * s2 > 0.0),
            LabelRule::SignPair => 2 * usize::from(s1 > 0.0) + usize::from(s2 > 0.0),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            LabelRule::SignProduct => "sign-product",
            LabelRule::SignPair => "sign-pair",
        }
    }
}

impl std::str::FromStr for LabelRule {
    type Err = DeqError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sign-product" => Ok(LabelRule::SignProduct),
            "sign-pair" => Ok(LabelRule::SignPair),
            other => Err(DeqError::config(format!("unknown label rule '{other}'"))),
        }
    }
}

/// Two-modality sign task: `x_i = s_i·v_i + σ·noise` with unit directions
/// `v_i` and uniform signs `s_i ∈ {−1, +1}`.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticTaskSpec {
    pub width: usize,
    pub sigma: f64,
    pub n_train: usize,
    pub n_test: usize,
    pub rule: LabelRule,
}

impl Default for SyntheticTaskSpec {
    fn default() -> Self {
        Self {
            width: 16,
            sigma: 0.3,
            n_train: 2000,
            n_test: 1000,
            rule: LabelRule::SignProduct,
        }
    }
}

impl SyntheticTaskSpec {
    pub const N_MODALITIES: usize = 2;

    pub fn classes(&self) -> usize {
        self.rule.classes()
    }

    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.n_train == 0 || self.n_test == 0 {
            return Err(DeqError::config("task width and split sizes must be positive"));
        }
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return Err(DeqError::config(format!("noise scale must be >= 0, got {}", self.sigma)));
        }
        Ok(())
    }
}

/// Labelled samples; `signs[k]` keeps the latent `(s₁, s₂)` of sample `k`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub x: ModalityBundle,
    pub labels: Vec<usize>,
    pub signs: Vec<(f64, f64)>,
    pub classes: usize,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn subset(&self, idx: &[usize]) -> Dataset {
        Dataset {
            x: self.x.select_rows(idx),
            labels: idx.iter().map(|&k| self.labels[k]).collect(),
            signs: idx.iter().map(|&k| self.signs[k]).collect(),
            classes: self.classes,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaskData {
    pub train: Dataset,
    pub test: Dataset,
    /// Signal directions `v₁, v₂` as `1 × d` rows.
    pub directions: Vec<Tensor2>,
}

fn unit_direction(rng: &mut Rng, d: usize) -> Tensor2 {
    loop {
        let v = rng.randn(1, d, 1.0);
        let n = v.frob_norm();
        if n > 1e-8 {
            return v.scale(1.0 / n);
        }
    }
}

fn draw_split(spec: &SyntheticTaskSpec, dirs: &[Tensor2], n: usize, rng: &mut Rng) -> Result<Dataset> {
    // cycle through the four sign pairs so every class gets an equal share
    let mut signs: Vec<(f64, f64)> = (0..n)
        .map(|k| match k % 4 {
            0 => (1.0, 1.0),
            1 => (1.0, -1.0),
            2 => (-1.0, 1.0),
            _ => (-1.0, -1.0),
        })
        .collect();
    rng.shuffle(&mut signs);
    let d = spec.width;
    let mut feats = vec![Tensor2::zeros(n, d), Tensor2::zeros(n, d)];
    for (r, &(s1, s2)) in signs.iter().enumerate() {
        for (i, s) in [s1, s2].into_iter().enumerate() {
            let row = feats[i].row_mut(r);
            for (c, v) in dirs[i].data().iter().enumerate() {
                row[c] = s * v + spec.sigma * rng.normal();
            }
        }
    }
    Ok(Dataset {
        x: ModalityBundle::new(feats)?,
        labels: signs.iter().map(|&(a, b)| spec.rule.label(a, b)).collect(),
        signs,
        classes: spec.classes(),
    })
}

/// Draws directions, then the train split, then the test split.
pub fn gen_signproduct(spec: &SyntheticTaskSpec, rng: &mut Rng) -> Result<TaskData> {
    spec.validate()?;
    let directions = vec![unit_direction(rng, spec.width), unit_direction(rng, spec.width)];
    let train = draw_split(spec, &directions, spec.n_train, rng)?;
    let test = draw_split(spec, &directions, spec.n_test, rng)?;
    Ok(TaskData {
        train,
        test,
        directions,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(rule: LabelRule, sigma: f64) -> SyntheticTaskSpec {
        SyntheticTaskSpec {
            width: 8,
            sigma,
            n_train: 40,
            n_test: 20,
            rule,
        }
    }

    #[test]
    fn noiseless_means_are_signed_directions() {
        let data = gen_signproduct(&spec(LabelRule::SignPair, 0.0), &mut Rng::new(0)).unwrap();
        for (k, &(s1, s2)) in data.train.signs.iter().enumerate() {
            let want1 = data.directions[0].scale(s1);
            let want2 = data.directions[1].scale(s2);
            assert_eq!(data.train.x.get(0).row(k), want1.data());
            assert_eq!(data.train.x.get(1).row(k), want2.data());
            assert_eq!(data.train.labels[k], LabelRule::SignPair.label(s1, s2));
        }
    }

    #[test]
    fn labels_are_balanced() {
        for rule in [LabelRule::SignProduct, LabelRule::SignPair] {
            let data = gen_signproduct(&spec(rule, 0.3), &mut Rng::new(1)).unwrap();
            let mut counts = vec![0; rule.classes()];
            data.train.labels.iter().for_each(|&l| counts[l] += 1);
            assert!(counts.iter().all(|&c| c == 40 / rule.classes()), "{counts:?}");
        }
    }

    #[test]
    fn sign_product_rule() {
        let r = LabelRule::SignProduct;
        assert_eq!((r.label(1.0, 1.0), r.label(-1.0, -1.0)), (1, 1));
        assert_eq!((r.label(1.0, -1.0), r.label(-1.0, 1.0)), (0, 0));
    }

    #[test]
    fn generation_is_deterministic() {
        let a = gen_signproduct(&spec(LabelRule::SignProduct, 0.3), &mut Rng::new(7)).unwrap();
        let b = gen_signproduct(&spec(LabelRule::SignProduct, 0.3), &mut Rng::new(7)).unwrap();
        assert_eq!(a, b);
    }
}
