use std::f64::consts::PI;

use super::Tensor2;

/// SplitMix64 stream with Box–Muller normals.
///
/// The generator is fully determined by its 64-bit state:
///
/// ```text
/// state  += 0x9E3779B97F4A7C15
/// z       = state
/// z       = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9
/// z       = (z ^ (z >> 27)) * 0x94D049BB133111EB
/// output  = z ^ (z >> 31)
/// ```
///
/// (all arithmetic wrapping mod 2⁶⁴, initial state = seed). Uniforms take the
/// top 53 bits: `u = (output >> 11) · 2⁻⁵³ ∈ [0, 1)`. Normals are produced in
/// pairs from two consecutive uniforms `u₁, u₂` as
/// `r = √(−2 ln(1 − u₁))`, `(r cos 2πu₂, r sin 2πu₂)`; the sine half is
/// buffered and returned by the next call.
#[derive(Debug, Clone, PartialEq)]
pub struct Rng {
    seed: u64,
    state: u64,
    spare_normal: Option<f64>,
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            state: seed,
            spare_normal: None,
        }
    }

    /// Seed this stream was created with.
    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Independent child stream, derived from this stream's next output.
    pub fn fork(&mut self) -> Rng {
        Rng::new(self.next_u64())
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = self.state;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }

    /// Uniform in `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Integer in `[0, n)` by multiply-shift.
    pub fn below(&mut self, n: usize) -> usize {
        ((self.next_u64() as u128 * n as u128) >> 64) as usize
    }

    /// Uniform sign, `+1` or `-1`.
    pub fn sign(&mut self) -> f64 {
        if self.next_u64() >> 63 == 0 {
            1.0
        } else {
            -1.0
        }
    }

    pub fn normal(&mut self) -> f64 {
        if let Some(z) = self.spare_normal.take() {
            return z;
        }
        let u1 = 1.0 - self.uniform();
        let u2 = self.uniform();
        let r = (-2.0 * u1.ln()).sqrt();
        let (s, c) = (2.0 * PI * u2).sin_cos();
        self.spare_normal = Some(r * s);
        r * c
    }

    /// `rows × cols` tensor of i.i.d. `N(0, scale²)` draws, filled row-major.
    pub fn randn(&mut self, rows: usize, cols: usize, scale: f64) -> Tensor2 {
        debug_assert!(scale > 0.0);
        let data = (0..rows * cols).map(|_| scale * self.normal()).collect();
        Tensor2::new(rows, cols, data).expect("length matches by construction")
    }

    /// Fisher–Yates shuffle.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i + 1);
            items.swap(i, j);
        }
    }
}

/// Free-function form of [`Rng::randn`].
pub fn randn(rng: &mut Rng, rows: usize, cols: usize, scale: f64) -> Tensor2 {
    rng.randn(rows, cols, scale)
}
