//! Parameter normalization, forward noising and DDIM reverse sampling over
//! the 61-dimensional hand parameter vector.
//!
//! Forward process: `H_t = √ᾱ_t · H_0 + √(1 − ᾱ_t) · ε`. The denoiser
//! predicts `H_0`; the noise estimate used by the reverse step is derived
//! from that prediction.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::geometry::Point3;
use crate::hand::{HandParams, NUM_PARAMS, POSE_RANGE, ROT_RANGE, SHAPE_RANGE, TRANS_RANGE};
use crate::{Error, Result};

/// Linear-β noise schedule with cumulative products `ᾱ_0 = 1, …, ᾱ_T`.
#[derive(Debug, Clone, PartialEq)]
pub struct DiffusionSchedule {
    beta_start: f64,
    beta_end: f64,
    betas: Vec<f64>,
    alpha_bar: Vec<f64>,
}

impl Default for DiffusionSchedule {
    fn default() -> Self {
        Self::linear(1000, 1e-4, 2e-2).expect("default schedule is valid")
    }
}

impl DiffusionSchedule {
    pub fn linear(timesteps: usize, beta_start: f64, beta_end: f64) -> Result<Self> {
        if timesteps == 0 || !(0.0 < beta_start && beta_start <= beta_end && beta_end < 1.0) {
            return Err(Error::Config(format!(
                "invalid linear schedule T={timesteps}, β ∈ [{beta_start}, {beta_end}]"
            )));
        }
        let mut betas = vec![0.0; timesteps + 1];
        let mut alpha_bar = vec![1.0; timesteps + 1];
        for t in 1..=timesteps {
            let frac = if timesteps == 1 {
                0.0
            } else {
                (t - 1) as f64 / (timesteps - 1) as f64
            };
            betas[t] = beta_start + (beta_end - beta_start) * frac;
            alpha_bar[t] = alpha_bar[t - 1] * (1.0 - betas[t]);
        }
        Ok(Self {
            beta_start,
            beta_end,
            betas,
            alpha_bar,
        })
    }

    pub fn timesteps(&self) -> usize {
        self.betas.len() - 1
    }

    pub fn beta_start(&self) -> f64 {
        self.beta_start
    }

    pub fn beta_end(&self) -> f64 {
        self.beta_end
    }

    /// `β_t = 1 − α_t` for `t` in `1..=T`.
    pub fn beta(&self, t: usize) -> f64 {
        self.betas[t]
    }

    /// `ᾱ_t` for `t` in `0..=T`.
    pub fn alpha_bar(&self, t: usize) -> f64 {
        self.alpha_bar[t]
    }

    pub fn signal_scale(&self, t: usize) -> f64 {
        self.alpha_bar[t].sqrt()
    }

    pub fn noise_scale(&self, t: usize) -> f64 {
        (1.0 - self.alpha_bar[t]).sqrt()
    }

    fn check_t(&self, t: usize) -> Result<()> {
        if t == 0 || t > self.timesteps() {
            Err(Error::TimestepOutOfRange { t, max: self.timesteps() })
        } else {
            Ok(())
        }
    }

    /// Reverse-step noise scale `σ_t(η)` between `t` and `t_prev`.
    pub fn sigma(&self, t: usize, t_prev: usize, eta: f64) -> Result<f64> {
        self.check_t(t)?;
        if t_prev >= t {
            return Err(Error::Config(format!("t_prev {t_prev} must be below t {t}")));
        }
        let (a, a_prev) = (self.alpha_bar[t], self.alpha_bar[t_prev]);
        let var = (1.0 - a_prev) / (1.0 - a) * (1.0 - a / a_prev);
        Ok(eta * var.max(0.0).sqrt())
    }
}

/// Per-group affine normalization `(x − center) / half_range`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormalizationSpec {
    pub shape: (f64, f64),
    pub pose: (f64, f64),
    pub rotation: (f64, f64),
    pub translation_center: Point3,
    pub translation_half_extent: Point3,
}

impl Default for NormalizationSpec {
    fn default() -> Self {
        Self::with_scene_box(Point3::zeros(), Point3::repeat(0.3))
    }
}

impl NormalizationSpec {
    pub fn with_scene_box(center: Point3, half_extent: Point3) -> Self {
        NormalizationSpec {
            shape: (0.0, 3.0),
            pose: (0.0, std::f64::consts::PI),
            rotation: (0.0, std::f64::consts::PI),
            translation_center: center,
            translation_half_extent: half_extent,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let halves = [self.shape.1, self.pose.1, self.rotation.1]
            .into_iter()
            .chain(self.translation_half_extent.iter().copied());
        if halves.into_iter().all(|h| h > 0.0 && h.is_finite()) {
            Ok(())
        } else {
            Err(Error::Config("normalization half-ranges must be positive".into()))
        }
    }

    /// Center and half-range of every coordinate.
    pub fn affine(&self) -> ([f64; NUM_PARAMS], [f64; NUM_PARAMS]) {
        let mut center = [0.0; NUM_PARAMS];
        let mut half = [0.0; NUM_PARAMS];
        for (range, (c, h)) in [(SHAPE_RANGE, self.shape), (POSE_RANGE, self.pose), (ROT_RANGE, self.rotation)] {
            for i in range {
                center[i] = c;
                half[i] = h;
            }
        }
        for (k, i) in TRANS_RANGE.enumerate() {
            center[i] = self.translation_center[k];
            half[i] = self.translation_half_extent[k];
        }
        (center, half)
    }

    pub fn normalize(&self, params: &HandParams) -> [f64; NUM_PARAMS] {
        let (c, h) = self.affine();
        std::array::from_fn(|i| (params.0[i] - c[i]) / h[i])
    }

    pub fn denormalize(&self, values: &[f64]) -> Result<HandParams> {
        if values.len() != NUM_PARAMS {
            return Err(Error::LengthMismatch {
                expected: NUM_PARAMS,
                got: values.len(),
            });
        }
        let (c, h) = self.affine();
        HandParams::from_slice(&std::array::from_fn::<f64, NUM_PARAMS, _>(|i| values[i] * h[i] + c[i]))
    }
}

pub fn q_sample(h0: &[f64], t: usize, noise: &[f64], schedule: &DiffusionSchedule) -> Result<Vec<f64>> {
    schedule.check_t(t)?;
    same_len(h0, noise)?;
    let (s, n) = (schedule.signal_scale(t), schedule.noise_scale(t));
    Ok(h0.iter().zip(noise).map(|(x, e)| s * x + n * e).collect())
}

/// Noise implied by a clean estimate: `(H_t − √ᾱ_t · Ĥ_0) / √(1 − ᾱ_t)`.
pub fn implied_eps(h_t: &[f64], h0_pred: &[f64], t: usize, schedule: &DiffusionSchedule) -> Result<Vec<f64>> {
    schedule.check_t(t)?;
    same_len(h_t, h0_pred)?;
    let (s, n) = (schedule.signal_scale(t), schedule.noise_scale(t));
    Ok(h_t.iter().zip(h0_pred).map(|(x, x0)| (x - s * x0) / n).collect())
}

/// One DDIM update from `t` to `t_prev` given a clean-parameter estimate.
pub fn ddim_step<R: Rng + ?Sized>(
    h_t: &[f64],
    h0_pred: &[f64],
    t: usize,
    t_prev: usize,
    eta: f64,
    schedule: &DiffusionSchedule,
    rng: &mut R,
) -> Result<Vec<f64>> {
    if !(0.0..=1.0).contains(&eta) {
        return Err(Error::Config(format!("η = {eta} outside [0, 1]")));
    }
    let sigma = schedule.sigma(t, t_prev, eta)?;
    let eps = implied_eps(h_t, h0_pred, t, schedule)?;
    let a_prev = schedule.alpha_bar(t_prev);
    let mut radicand = 1.0 - a_prev - sigma * sigma;
    if radicand < 0.0 {
        // Rounding at η = 1 can land a hair below zero.
        if radicand < -1e-12 {
            return Err(Error::InconsistentSchedule);
        }
        radicand = 0.0;
    }
    let dir = radicand.sqrt();
    let signal = a_prev.sqrt();
    Ok(h0_pred
        .iter()
        .zip(&eps)
        .map(|(x0, e)| {
            let fresh: f64 = if sigma > 0.0 { rng.sample(StandardNormal) } else { 0.0 };
            signal * x0 + dir * e + sigma * fresh
        })
        .collect())
}

/// Maps a noisy normalized parameter vector to a clean estimate.
pub trait Denoiser {
    fn predict(&self, h_t: &[f64], t: usize, condition: &[f64]) -> Result<Vec<f64>>;
}

/// Returns a fixed clean estimate regardless of input.
#[derive(Debug, Clone)]
pub struct OracleDenoiser(pub Vec<f64>);

impl Denoiser for OracleDenoiser {
    fn predict(&self, _h_t: &[f64], _t: usize, _condition: &[f64]) -> Result<Vec<f64>> {
        Ok(self.0.clone())
    }
}

/// Descending timesteps `T = t_S > … > t_1`, uniformly strided.
pub fn strided_timesteps(steps: usize, total: usize) -> Vec<usize> {
    let steps = steps.clamp(1, total);
    let mut ts: Vec<usize> = (1..=steps)
        .rev()
        .map(|k| ((k * total) as f64 / steps as f64).round() as usize)
        .collect();
    ts.dedup();
    ts
}

/// Runs a full reverse chain from standard Gaussian noise and returns the
/// denormalized parameters.
pub fn sample<D: Denoiser + ?Sized>(
    denoiser: &D,
    condition: &[f64],
    steps: usize,
    eta: f64,
    seed: u64,
    spec: &NormalizationSpec,
    schedule: &DiffusionSchedule,
) -> Result<HandParams> {
    let h0 = sample_normalized(denoiser, condition, steps, eta, seed, schedule)?;
    spec.denormalize(&h0)
}

pub fn sample_normalized<D: Denoiser + ?Sized>(
    denoiser: &D,
    condition: &[f64],
    steps: usize,
    eta: f64,
    seed: u64,
    schedule: &DiffusionSchedule,
) -> Result<Vec<f64>> {
    if steps == 0 {
        return Err(Error::Config("sampling needs at least one step".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut h: Vec<f64> = (0..NUM_PARAMS).map(|_| rng.sample(StandardNormal)).collect();
    let ts = strided_timesteps(steps, schedule.timesteps());
    for (i, &t) in ts.iter().enumerate() {
        let t_prev = ts.get(i + 1).copied().unwrap_or(0);
        let h0 = denoiser.predict(&h, t, condition)?;
        if h0.len() != NUM_PARAMS || h0.iter().any(|v| !v.is_finite()) {
            return Err(Error::DenoiserDiverged);
        }
        h = ddim_step(&h, &h0, t, t_prev, eta, schedule, &mut rng)?;
    }
    Ok(h)
}

fn same_len(a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() == b.len() {
        Ok(())
    } else {
        Err(Error::LengthMismatch {
            expected: a.len(),
            got: b.len(),
        })
    }
}
