//! ODE sampling and chunked dubbing.
//!
//! Integration runs from `t_start` (noise end) down to `t = 0` (data end) with
//! explicit Euler steps `x ← x + (t − t_next)·v`, matching the training target
//! `x₀ − ε` in [`crate::train`].

mod dub;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::conditioning::ConditioningBundle;
use crate::error::{Error, Result};
use crate::model::VelocityModel;
use crate::tensor::Mat;

pub use dub::{dub, dub_fl2v, dub_i2v, dub_streaming, ChunkTrace, DubOutput, DubRequest};

/// Anything that maps a conditioning bundle and time to per-position velocities.
pub trait VelocityField {
    fn velocity(&self, bundle: &ConditioningBundle, t: f32) -> Result<Mat<f32>>;

    /// Audio window the field expects on its tokens.
    fn audio_window(&self) -> usize {
        0
    }

    fn m_ch(&self) -> usize {
        1
    }
}

impl VelocityField for VelocityModel {
    fn velocity(&self, bundle: &ConditioningBundle, t: f32) -> Result<Mat<f32>> {
        self.forward(bundle, t)
    }

    fn audio_window(&self) -> usize {
        self.config().audio_window
    }

    fn m_ch(&self) -> usize {
        self.config().m_ch
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DubMode {
    /// Context frames from the previous output plus a source keyframe reference.
    #[default]
    Streaming,
    /// Context frames plus the last generated frame as reference.
    I2v,
    /// No context; first and last source frames of each chunk as references.
    Fl2v,
}

impl std::str::FromStr for DubMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "streaming" => Ok(Self::Streaming),
            "i2v" => Ok(Self::I2v),
            "fl2v" => Ok(Self::Fl2v),
            other => Err(Error::Config(format!(
                "unknown mode {other:?}; expected streaming|i2v|fl2v"
            ))),
        }
    }
}

impl std::fmt::Display for DubMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Streaming => "streaming",
            Self::I2v => "i2v",
            Self::Fl2v => "fl2v",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SamplerConfig {
    pub ode_steps: usize,
    pub mode: DubMode,
    /// Start time for SDEdit; `None` samples from pure noise, `Some(0.0)` copies the source.
    pub sdedit_t0: Option<f64>,
    pub seed: u64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            ode_steps: 20,
            mode: DubMode::Streaming,
            sdedit_t0: None,
            seed: 0,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.ode_steps == 0 {
            return Err(Error::Config("ode_steps must be at least 1".into()));
        }
        if let Some(t0) = self.sdedit_t0 {
            if !(0.0..=1.0).contains(&t0) {
                return Err(Error::Config(format!("sdedit_t0 = {t0} outside [0, 1]")));
            }
        }
        Ok(())
    }
}

/// `rows × cols` standard normal draws.
pub fn gaussian<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Mat<f32> {
    Mat::from_vec(
        rows,
        cols,
        (0..rows * cols).map(|_| rng.sample::<f32, _>(StandardNormal)).collect(),
    )
}

/// `(1 − t0)·source + t0·ε`; at `t0 = 0` this is the source itself.
pub fn sdedit_init<R: Rng + ?Sized>(source: &Mat<f32>, t0: f32, rng: &mut R) -> Mat<f32> {
    let noise = gaussian(source.rows(), source.cols(), rng);
    if t0 == 0.0 {
        return source.clone();
    }
    crate::train::interpolate(source, &noise, t0)
}

/// Euler-integrate the noisy span of `bundle` from `init` at `t_start` down to 0.
///
/// Context positions stay at their clean values. `t_start = 0` returns `init`.
pub fn ode_solve<F: VelocityField + ?Sized>(
    field: &F,
    bundle: &mut ConditioningBundle,
    init: &Mat<f32>,
    steps: usize,
    t_start: f32,
) -> Result<Mat<f32>> {
    if steps == 0 {
        return Err(Error::Config("ode_solve needs at least one step".into()));
    }
    if !(0.0..=1.0).contains(&t_start) {
        return Err(Error::Config(format!("t_start = {t_start} outside [0, 1]")));
    }
    let span = bundle.noisy_span();
    let mut x = init.clone();
    if t_start == 0.0 {
        return Ok(x);
    }
    for k in 0..steps {
        let t = t_start * (1.0 - k as f32 / steps as f32);
        let t_next = t_start * (1.0 - (k + 1) as f32 / steps as f32);
        bundle.set_noisy(&x);
        let v = field.velocity(bundle, t)?;
        let dt = t - t_next;
        for i in 0..x.rows() {
            let vi = v.row(span.start + i);
            for (xv, &vv) in x.row_mut(i).iter_mut().zip(vi) {
                *xv += dt * vv;
            }
        }
        if !x.all_finite() {
            return Err(Error::Numerical(format!("non-finite state after ODE step {k}")));
        }
    }
    bundle.set_noisy(&x);
    Ok(x)
}

/// Sample from pure noise.
pub fn ode_sample<F: VelocityField + ?Sized, R: Rng + ?Sized>(
    field: &F,
    bundle: &mut ConditioningBundle,
    steps: usize,
    rng: &mut R,
) -> Result<Mat<f32>> {
    let span = bundle.noisy_span();
    let init = gaussian(span.len(), bundle.c_lat(), rng);
    ode_solve(field, bundle, &init, steps, 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::conditioning::{assemble_conditioning, Context};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// `v = a·x` on every position; exact flow from t=1 to 0 is `x·eᵃ`.
    struct LinearField(f32);

    impl VelocityField for LinearField {
        fn velocity(&self, b: &ConditioningBundle, _t: f32) -> Result<Mat<f32>> {
            Ok(b.z1().map(|v| self.0 * v))
        }
    }

    struct ConstField(f32);

    impl VelocityField for ConstField {
        fn velocity(&self, b: &ConditioningBundle, _t: f32) -> Result<Mat<f32>> {
            Ok(Mat::filled(b.len(), b.c_lat(), self.0))
        }
    }

    fn bundle(rows: usize) -> ConditioningBundle {
        let ctx = Mat::filled(3, 2, 9.0);
        assemble_conditioning(&Mat::zeros(rows, 2), Context::Frames(&ctx), &[0.0, 0.0], 1).unwrap()
    }

    #[test]
    fn single_step_constant_field() {
        let mut b = bundle(2);
        let init = Mat::from_vec(2, 2, vec![1.0, 2.0, 3.0, 4.0]);
        let out = ode_solve(&ConstField(0.5), &mut b, &init, 1, 0.8).unwrap();
        assert_eq!(out, init.map(|v| v + 0.8 * 0.5));
        assert!(b.z1().slice_rows(0, 3).data().iter().all(|&v| v == 9.0));
    }

    #[test]
    fn euler_error_halves_with_step_doubling() {
        let a = 0.8f32;
        let init = Mat::from_vec(1, 2, vec![1.0, -0.5]);
        let exact = init.map(|v| v * a.exp());
        let err = |n| {
            let out = ode_solve(&LinearField(a), &mut bundle(1), &init, n, 1.0).unwrap();
            out.data()
                .iter()
                .zip(exact.data())
                .map(|(p, q)| ((p - q) as f64).powi(2))
                .sum::<f64>()
                .sqrt()
        };
        let (e10, e20, e40) = (err(10), err(20), err(40));
        for ratio in [e10 / e20, e20 / e40] {
            assert!((1.6..=2.4).contains(&ratio), "ratio {ratio}");
        }
    }

    #[test]
    fn zero_start_returns_init() {
        let init = Mat::from_vec(1, 2, vec![0.3, 0.4]);
        let out = ode_solve(&ConstField(5.0), &mut bundle(1), &init, 7, 0.0).unwrap();
        assert_eq!(out, init);
    }

    #[test]
    fn sdedit_endpoints_and_variance() {
        let src = Mat::from_vec(1, 3, vec![0.2, -0.1, 0.7]);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        assert_eq!(sdedit_init(&src, 0.0, &mut rng), src);
        let mut a = ChaCha8Rng::seed_from_u64(9);
        let mut b = ChaCha8Rng::seed_from_u64(9);
        assert_eq!(sdedit_init(&src, 1.0, &mut a), gaussian(1, 3, &mut b));

        let n = 1000;
        let draws: Vec<f32> = (0..n).map(|_| sdedit_init(&src, 0.5, &mut rng).get(0, 0)).collect();
        let mean = draws.iter().sum::<f32>() / n as f32;
        let var = draws.iter().map(|d| (d - mean).powi(2)).sum::<f32>() / (n - 1) as f32;
        assert!(var > 0.0 && var < 1.0, "var {var}");
        assert!((var - 0.25).abs() < 0.05, "var {var}");
    }

    #[test]
    fn same_seed_same_sample() {
        let run = || {
            let mut rng = ChaCha8Rng::seed_from_u64(3);
            ode_sample(&LinearField(-0.3), &mut bundle(4), 5, &mut rng).unwrap()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn config_validation() {
        assert!(SamplerConfig::default().validate().is_ok());
        let bad = SamplerConfig {
            sdedit_t0: Some(1.5),
            ..SamplerConfig::default()
        };
        assert!(bad.validate().is_err());
        assert!(SamplerConfig { ode_steps: 0, ..SamplerConfig::default() }.validate().is_err());
        assert_eq!("FL2V".parse::<DubMode>().unwrap(), DubMode::Fl2v);
    }
}
