//! Paired-seed evaluation runs shared by the CLI, examples, and acceptance suite.

use serde::{Deserialize, Serialize};
use statrs::distribution::{Binomial, DiscreteCDF};

use crate::error::Result;
use crate::metrics::{evaluate, CsvRow, DubReport};
use crate::sample::{dub, DubMode, DubRequest, SamplerConfig, VelocityField};
use crate::seed;
use crate::world::{gen_audio, generate_clip, CameraKind};

/// Source clips the model never saw, each paired with an independent new audio track.
pub fn held_out_requests(n: usize, pixel_len: usize, seed: u64) -> Result<Vec<DubRequest>> {
    (0..n)
        .map(|i| {
            let kind = CameraKind::ALL[i % CameraKind::ALL.len()];
            let clip = generate_clip(pixel_len, seed::derive(seed, "held-out-clip", i as u64), kind)?;
            let audio = gen_audio(pixel_len, seed::derive(seed, "held-out-audio", i as u64))?;
            DubRequest::new(clip.video, audio)
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub mode: DubMode,
    pub strategy: String,
    pub seed: u64,
    pub sdedit_t0: Option<f64>,
    pub report: DubReport,
}

impl RunRecord {
    pub fn csv_row(&self) -> CsvRow {
        CsvRow::from_report(self.mode.to_string(), self.strategy.clone(), self.seed, &self.report)
    }
}

/// Dub request `i` with sampler seed `seeds[i]`, once per mode, in a fixed order.
pub fn paired_runs<F: VelocityField + ?Sized>(
    field: &F,
    strategy: &str,
    requests: &[DubRequest],
    seeds: &[u64],
    modes: &[DubMode],
    base: &SamplerConfig,
) -> Result<Vec<RunRecord>> {
    let mut out = Vec::with_capacity(requests.len() * modes.len());
    for (req, &seed) in requests.iter().zip(seeds) {
        for &mode in modes {
            let cfg = SamplerConfig { mode, seed, ..*base };
            let output = dub(req, field, &cfg)?;
            out.push(RunRecord {
                mode,
                strategy: strategy.to_string(),
                seed,
                sdedit_t0: cfg.sdedit_t0,
                report: evaluate(req, &output)?,
            });
        }
    }
    Ok(out)
}

/// One-sided sign test: probability of at least `wins` successes in `n` fair coin flips.
/// Ties should be dropped from `n` by the caller.
pub fn sign_test_p(wins: usize, n: usize) -> f64 {
    if n == 0 {
        return 1.0;
    }
    if wins == 0 {
        return 1.0;
    }
    let b = Binomial::new(0.5, n as u64).expect("valid binomial");
    b.sf(wins as u64 - 1)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairedComparison {
    pub mean_a: f64,
    pub mean_b: f64,
    /// Pairs where `a > b`.
    pub wins: usize,
    /// Pairs with `a ≠ b`.
    pub informative: usize,
    pub p_value: f64,
}

impl PairedComparison {
    /// Evidence that `a` exceeds `b` on the mean and by the sign test at `alpha`.
    pub fn a_greater(&self, alpha: f64) -> bool {
        self.mean_a > self.mean_b && self.p_value < alpha
    }
}

/// Compare paired samples `a[i]` against `b[i]`.
pub fn compare_paired(a: &[f64], b: &[f64]) -> PairedComparison {
    assert_eq!(a.len(), b.len(), "paired samples must align");
    let n = a.len().max(1) as f64;
    let wins = a.iter().zip(b).filter(|(x, y)| x > y).count();
    let informative = a.iter().zip(b).filter(|(x, y)| x != y).count();
    PairedComparison {
        mean_a: a.iter().sum::<f64>() / n,
        mean_b: b.iter().sum::<f64>() / n,
        wins,
        informative,
        p_value: sign_test_p(wins, informative),
    }
}
