//! Supervision-strategy ablation grid.
//!
//! Each [`AblationMode`] pins the four supervision switches of a
//! [`TrainConfig`] to one named strategy so that runs across modes differ in
//! nothing else. The driver repeats every mode over the same benchmark and
//! seed list and reports per-seed and mean test correlations, which makes the
//! grid directly comparable row to row.

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::pipeline::{run_seeded_repeats_on, TrainConfig};
use crate::synth::Benchmark;

/// A named supervision strategy: which teacher signals the student trains on
/// and whether pair losses are confidence-weighted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AblationMode {
    /// No distillation at all; the student trains from scratch on the
    /// labeled calibration subset only.
    CftOnly,
    /// Point-wise soft scores only.
    Point,
    /// Pair-wise preferences only, unweighted (every pair counts equally).
    Pair,
    /// Pair-wise preferences only, confidence-weighted and filtered.
    PairConf,
    /// Point-wise plus pair-wise, unweighted pairs.
    PointPair,
    /// Point-wise plus confidence-weighted pair-wise (the full recipe).
    All,
}

impl AblationMode {
    /// Every mode, in grid display order.
    pub const ALL_MODES: [AblationMode; 6] = [
        AblationMode::CftOnly,
        AblationMode::Point,
        AblationMode::Pair,
        AblationMode::PairConf,
        AblationMode::PointPair,
        AblationMode::All,
    ];

    /// Stable CLI / CSV name.
    pub fn slug(&self) -> &'static str {
        match self {
            AblationMode::CftOnly => "cft_only",
            AblationMode::Point => "point",
            AblationMode::Pair => "pair",
            AblationMode::PairConf => "pair_conf",
            AblationMode::PointPair => "point_pair",
            AblationMode::All => "all",
        }
    }

    /// Parse a CLI / CSV name.
    pub fn parse(s: &str) -> Result<AblationMode> {
        AblationMode::ALL_MODES
            .into_iter()
            .find(|m| m.slug() == s)
            .ok_or_else(|| {
                CoreError::Config(format!(
                    "unknown ablation mode {s:?}; expected one of {}",
                    AblationMode::ALL_MODES.map(|m| m.slug()).join(", ")
                ))
            })
    }

    /// Pin the supervision switches of `base` to this mode. All other
    /// hyper-parameters (epochs, budget, seeds, ...) pass through untouched
    /// so the modes differ only in their supervision strategy.
    pub fn apply(&self, base: &TrainConfig) -> TrainConfig {
        let (point, pairs, conf, skip) = match self {
            AblationMode::CftOnly => (true, true, true, true),
            AblationMode::Point => (true, false, true, false),
            AblationMode::Pair => (false, true, false, false),
            AblationMode::PairConf => (false, true, true, false),
            AblationMode::PointPair => (true, true, false, false),
            AblationMode::All => (true, true, true, false),
        };
        TrainConfig {
            use_point: point,
            use_pairs: pairs,
            use_confidence: conf,
            skip_stage1: skip,
            ..base.clone()
        }
    }
}

impl std::fmt::Display for AblationMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.slug())
    }
}

/// One mode's results across the shared seed list.
#[derive(Debug, Clone, Serialize)]
pub struct AblationRow {
    pub mode: AblationMode,
    /// Per-seed `(seed, test SRCC, test PLCC)`, in seed order.
    pub per_seed: Vec<(u64, f64, f64)>,
    pub mean_srcc: f64,
    pub mean_plcc: f64,
}

/// Run every requested mode on the same benchmark with the same training
/// seeds. The benchmark is fixed across modes and seeds; only the training
/// randomness (budget split, init, batching) varies with the seed, so
/// differences between rows isolate the supervision strategy itself.
pub fn run_ablation(
    bench: &Benchmark,
    base: &TrainConfig,
    modes: &[AblationMode],
    seeds: &[u64],
) -> Result<Vec<AblationRow>> {
    if modes.is_empty() {
        return Err(CoreError::Config("no ablation modes requested".into()));
    }
    let mut rows = Vec::with_capacity(modes.len());
    for mode in modes {
        let config = mode.apply(base);
        config.validate()?;
        let agg = run_seeded_repeats_on(bench, &config, seeds)?;
        let per_seed = agg
            .outcomes
            .iter()
            .map(|o| (o.seed, o.reports["test"].srcc, o.reports["test"].plcc))
            .collect();
        rows.push(AblationRow {
            mode: *mode,
            per_seed,
            mean_srcc: agg.test_srcc.mean,
            mean_plcc: agg.test_plcc.mean,
        });
    }
    Ok(rows)
}
