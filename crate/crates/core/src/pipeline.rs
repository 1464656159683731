//! Orchestration of the two training stages.
//!
//! Stage 1 (distillation) trains the student on teacher signals only — point
//! soft scores and confidence-weighted pair preferences — and is audited to
//! never read a human label. Stage 2 (calibration) fine-tunes on the small
//! labeled subset with an MSE-plus-correlation objective. On top of the two
//! stages sit the label-budget splitter, checkpoint selection, the affine
//! least-squares baseline, and multi-seed aggregation.

use crate::error::{CoreError, Result};
use crate::losses;
use crate::metrics::{self, EvalReport};
use crate::seed;
use crate::signals::{filter_pairs, SupervisionPair, TeacherPointSignal};
use crate::student::{AdamW, AdamWConfig, FeatureDataset, Mlp, Split};
use crate::synth::{make_benchmark, Benchmark, SynthConfig};
use crate::ImageId;
use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, HashMap, HashSet};

/// How the stage-1 checkpoint is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckpointMode {
    /// Minimize distillation loss on a held-out teacher-signal split;
    /// no label is ever consulted.
    MosFree,
    /// Maximize correlation on the held-out fraction of the labeled subset
    /// (the labels are extracted by the caller, outside the stage).
    FewShot,
}

/// All knobs of a two-stage training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub hidden: Vec<usize>,
    pub stage1_epochs: usize,
    pub stage1_batch: usize,
    pub stage1_opt: AdamWConfig,
    pub stage2_epochs: usize,
    pub stage2_batch: usize,
    pub stage2_opt: AdamWConfig,
    /// Weight of the pair-wise term inside the distillation loss.
    pub lambda_dis: f64,
    /// Weight of the correlation term inside the calibration loss.
    pub lambda_cal: f64,
    /// Smooth-L1 transition point for the point-wise term.
    pub beta: f64,
    /// Confidence threshold: pairs with omega below it are dropped.
    pub tau: f64,
    /// Fraction of training images whose labels are visible.
    pub mos_ratio: f64,
    /// Fraction of the labeled subset held out for checkpoint selection.
    pub calib_holdout_frac: f64,
    pub checkpoint_mode: CheckpointMode,
    /// Stage 2 updates only the output layer when set.
    pub freeze_trunk_stage2: bool,
    /// Supervision ablation switches. All on = the full method.
    pub use_point: bool,
    pub use_pairs: bool,
    pub use_confidence: bool,
    pub skip_stage1: bool,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            hidden: vec![64, 32],
            stage1_epochs: 30,
            stage1_batch: 64,
            stage1_opt: AdamWConfig::stage1_default(),
            stage2_epochs: 100,
            stage2_batch: 32,
            stage2_opt: AdamWConfig::stage2_default(),
            lambda_dis: 0.5,
            lambda_cal: 1.0,
            beta: 1.0,
            tau: 0.1,
            mos_ratio: 0.1,
            calib_holdout_frac: 0.2,
            checkpoint_mode: CheckpointMode::MosFree,
            freeze_trunk_stage2: false,
            use_point: true,
            use_pairs: true,
            use_confidence: true,
            skip_stage1: false,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.mos_ratio) {
            return Err(CoreError::Config(format!(
                "mos_ratio {} outside [0, 1]",
                self.mos_ratio
            )));
        }
        if !(self.calib_holdout_frac > 0.0 && self.calib_holdout_frac < 1.0) {
            return Err(CoreError::Config(format!(
                "calib_holdout_frac {} outside (0, 1)",
                self.calib_holdout_frac
            )));
        }
        if self.stage1_batch == 0 || self.stage2_batch == 0 {
            return Err(CoreError::Config("batch sizes must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.tau) {
            return Err(CoreError::Config(format!("tau {} outside [0, 1]", self.tau)));
        }
        if self.lambda_dis < 0.0 || self.lambda_cal < 0.0 || self.beta <= 0.0 {
            return Err(CoreError::Config(
                "lambda weights must be >= 0 and beta > 0".into(),
            ));
        }
        if !self.use_point && !self.use_pairs && !self.skip_stage1 {
            return Err(CoreError::Config(
                "distillation needs at least one of the point or pair terms".into(),
            ));
        }
        self.stage1_opt.validate()?;
        self.stage2_opt.validate()
    }

    pub fn layer_sizes(&self, input_dim: usize) -> Vec<usize> {
        let mut sizes = Vec::with_capacity(self.hidden.len() + 2);
        sizes.push(input_dim);
        sizes.extend_from_slice(&self.hidden);
        sizes.push(1);
        sizes
    }
}

/// One epoch of a training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean total training loss over the epoch's batches.
    pub train_loss: f64,
    /// Mean point-wise component (0 when unused).
    pub point_loss: f64,
    /// Mean pair-wise component (0 when unused).
    pub pair_loss: f64,
    /// Checkpoint-selection criterion after this epoch: a distillation loss
    /// (lower is better) in mos_free runs, a correlation in few_shot and
    /// calibration runs (higher is better).
    pub val_metric: f64,
}

/// What one stage did: per-epoch records, which epoch was selected, and how
/// many label reads the stage performed (distillation must report 0).
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct RunLog {
    pub epochs: Vec<EpochRecord>,
    /// Index into `epochs` of the returned checkpoint; None when no epoch
    /// ran (the initial parameters were returned).
    pub selected_epoch: Option<usize>,
    pub mos_reads_during_run: u64,
    /// Final reports per split, filled in by the experiment driver once
    /// labels may be consulted.
    pub reports: BTreeMap<String, EvalReport>,
}

/// Labeled holdout rows (dataset row index, label), extracted by the caller.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct HoldoutLabels {
    pub rows: Vec<(usize, f64)>,
}

/// Pick `floor(ratio · N_train)` training ids, uniformly without
/// replacement, as the label-visible subset. Returns (labeled, unlabeled);
/// validation and test splits are untouched.
pub fn split_mos_budget(
    dataset: &FeatureDataset,
    ratio: f64,
    seed: u64,
) -> Result<(Vec<ImageId>, Vec<ImageId>)> {
    if !(0.0..=1.0).contains(&ratio) {
        return Err(CoreError::Config(format!("mos ratio {ratio} outside [0, 1]")));
    }
    let train_rows = dataset.split_indices(Split::Train);
    let labeled_rows: Vec<usize> = train_rows
        .iter()
        .copied()
        .filter(|&i| dataset.mos(i).is_some())
        .collect();
    if ratio > 0.0 && labeled_rows.is_empty() {
        return Err(CoreError::MissingLabels(
            "no training row carries a label".into(),
        ));
    }
    let want = (ratio * labeled_rows.len() as f64).floor() as usize;
    if ratio > 0.0 && want == 0 {
        return Err(CoreError::BudgetTooSmall(format!(
            "ratio {ratio} of {} labeled training rows rounds down to zero",
            labeled_rows.len()
        )));
    }
    let mut shuffled = labeled_rows;
    shuffled.shuffle(&mut seed::stream_rng(seed, "mos-budget"));
    let chosen: HashSet<usize> = shuffled[..want].iter().copied().collect();
    let labeled = shuffled[..want]
        .iter()
        .map(|&i| dataset.id(i).clone())
        .collect();
    let unlabeled = train_rows
        .iter()
        .filter(|i| !chosen.contains(i))
        .map(|&i| dataset.id(i).clone())
        .collect();
    Ok((labeled, unlabeled))
}

/// Split the labeled ids into a calibration-train part and a holdout used
/// only for checkpoint selection. The holdout needs at least 2 rows to
/// support a correlation; when the labeled set is too small to afford that
/// (fewer than 4 ids), the holdout comes back empty and selection falls
/// back to the training labels.
pub fn calib_split(labeled: &[ImageId], frac: f64, seed: u64) -> (Vec<ImageId>, Vec<ImageId>) {
    let m = labeled.len();
    let mut h = (frac * m as f64).floor() as usize;
    if h < 2 {
        h = 2;
    }
    if h + 2 > m {
        h = 0;
    }
    let mut shuffled = labeled.to_vec();
    shuffled.shuffle(&mut seed::stream_rng(seed, "calib-holdout"));
    let holdout = shuffled[..h].to_vec();
    let train = shuffled[h..].to_vec();
    (train, holdout)
}

/// Pick the winning epoch from per-epoch criterion values: mos_free
/// minimizes (a loss), few_shot maximizes (a correlation). Ties go to the
/// earlier epoch.
pub fn select_checkpoint(history: &[f64], mode: CheckpointMode) -> usize {
    assert!(!history.is_empty(), "empty checkpoint history");
    let mut best = 0;
    for (i, &v) in history.iter().enumerate().skip(1) {
        let better = match mode {
            CheckpointMode::MosFree => v < history[best],
            CheckpointMode::FewShot => v > history[best],
        };
        if better {
            best = i;
        }
    }
    best
}

/// Least-squares affine fit `y ≈ a·x + b` over (score, label) points.
pub fn affine_calibrate(labeled: &[(f64, f64)]) -> Result<(f64, f64)> {
    if labeled.len() < 2 {
        return Err(CoreError::InsufficientData(format!(
            "affine fit needs at least 2 labeled points, got {}",
            labeled.len()
        )));
    }
    let n = labeled.len() as f64;
    let mx = labeled.iter().map(|p| p.0).sum::<f64>() / n;
    let my = labeled.iter().map(|p| p.1).sum::<f64>() / n;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    for (x, y) in labeled {
        sxx += (x - mx) * (x - mx);
        sxy += (x - mx) * (y - my);
    }
    if sxx == 0.0 {
        return Err(CoreError::DegenerateFit(
            "scores are constant on the labeled subset".into(),
        ));
    }
    let a = sxy / sxx;
    Ok((a, my - a * mx))
}

struct PairPools {
    train: Vec<SupervisionPair>,
    holdout: Vec<SupervisionPair>,
}

/// Resolve, audit, and filter the supervision pairs for stage 1.
fn prepare_pairs(
    config: &TrainConfig,
    pairs: &[SupervisionPair],
    train_rows: &HashSet<usize>,
    holdout_rows: &HashSet<usize>,
    dataset: &FeatureDataset,
) -> Result<PairPools> {
    let all_train: HashSet<usize> = train_rows.union(holdout_rows).copied().collect();
    for p in pairs {
        for id in [&p.a, &p.b] {
            match dataset.index_of(id) {
                Some(row) if all_train.contains(&row) => {}
                _ => {
                    return Err(CoreError::DanglingPair { id: id.0.clone() });
                }
            }
        }
    }
    let effective: Vec<SupervisionPair> = if config.use_confidence {
        filter_pairs(pairs, config.tau)?
    } else {
        pairs
            .iter()
            .cloned()
            .map(|mut p| {
                p.omega = 1.0;
                p
            })
            .collect()
    };
    let mut train = Vec::new();
    let mut holdout = Vec::new();
    for p in effective {
        let ra = dataset.index_of(&p.a).unwrap();
        let rb = dataset.index_of(&p.b).unwrap();
        if train_rows.contains(&ra) && train_rows.contains(&rb) {
            train.push(p);
        } else if holdout_rows.contains(&ra) && holdout_rows.contains(&rb) {
            holdout.push(p);
        }
        // Pairs straddling the two sides are used by neither.
    }
    Ok(PairPools { train, holdout })
}

/// Distillation loss (value only) over a fixed set of rows and pairs, used
/// for validation; returns the composite according to the active switches.
fn distill_eval(
    config: &TrainConfig,
    params: &Mlp,
    dataset: &FeatureDataset,
    rows: &[usize],
    teacher: &HashMap<usize, f64>,
    pairs: &[SupervisionPair],
) -> Result<f64> {
    let mut total = 0.0;
    if config.use_point && !rows.is_empty() {
        let feats: Vec<&[f64]> = rows.iter().map(|&i| dataset.feature(i)).collect();
        let scores = params.forward_batch(&feats)?;
        let targets: Vec<f64> = rows.iter().map(|&i| teacher[&i]).collect();
        total += losses::reg_loss(&scores, &targets, config.beta)?.value;
    }
    if config.use_pairs && !pairs.is_empty() {
        let (ids, scores) = score_pair_union(params, dataset, pairs)?;
        let rank = losses::rank_loss(&ids, &scores, pairs)?.value;
        total += if config.use_point {
            config.lambda_dis * rank
        } else {
            rank
        };
    }
    Ok(total)
}

/// Forward the union of ids referenced by `pairs`; returns ids + scores in
/// first-appearance order.
fn score_pair_union(
    params: &Mlp,
    dataset: &FeatureDataset,
    pairs: &[SupervisionPair],
) -> Result<(Vec<ImageId>, Vec<f64>)> {
    let mut ids: Vec<ImageId> = Vec::new();
    let mut seen: HashSet<&str> = HashSet::new();
    for p in pairs {
        for id in [&p.a, &p.b] {
            if seen.insert(id.as_str()) {
                ids.push(id.clone());
            }
        }
    }
    let feats: Vec<&[f64]> = ids
        .iter()
        .map(|id| dataset.feature(dataset.index_of(id).expect("audited id")))
        .collect();
    let scores = params.forward_batch(&feats)?;
    Ok((ids, scores))
}

/// Stage 1: distill the teacher into the student. Never reads a label —
/// the dataset's label-access counter must not move during this call, and
/// the returned log records the observed delta so callers can assert it.
///
/// `few_shot_holdout` carries (row, label) points extracted by the caller
/// beforehand; it is required in few_shot checkpoint mode and ignored
/// otherwise.
pub fn run_stage1(
    config: &TrainConfig,
    dataset: &FeatureDataset,
    points: &[TeacherPointSignal],
    pairs: &[SupervisionPair],
    few_shot_holdout: Option<&HoldoutLabels>,
) -> Result<(Mlp, RunLog)> {
    config.validate()?;
    let reads_before = dataset.mos_read_count();
    if config.checkpoint_mode == CheckpointMode::FewShot
        && few_shot_holdout.map_or(true, |h| h.rows.len() < 2)
    {
        return Err(CoreError::Config(
            "few_shot checkpoint mode needs at least 2 pre-extracted holdout labels".into(),
        ));
    }

    // Teacher soft scores per dataset row; every training row must have one.
    let mut teacher: HashMap<usize, f64> = HashMap::with_capacity(points.len());
    for p in points {
        if let Some(row) = dataset.index_of(&p.image_id) {
            teacher.insert(row, p.soft_score);
        }
    }
    let train_all = dataset.split_indices(Split::Train);
    for &row in &train_all {
        if !teacher.contains_key(&row) {
            return Err(CoreError::InvalidSignal {
                id: dataset.id(row).0.clone(),
                reason: "training row has no point signal".into(),
            });
        }
    }

    // Hold out 10% of training rows for mos-free checkpoint selection.
    let mut shuffled = train_all.clone();
    shuffled.shuffle(&mut seed::stream_rng(config.seed, "stage1-holdout"));
    let n_hold = if shuffled.len() >= 20 { shuffled.len() / 10 } else { 0 };
    let holdout_rows: HashSet<usize> = shuffled[..n_hold].iter().copied().collect();
    let core_rows: Vec<usize> = shuffled[n_hold..].to_vec();
    let core_set: HashSet<usize> = core_rows.iter().copied().collect();

    let pools = if config.use_pairs {
        prepare_pairs(config, pairs, &core_set, &holdout_rows, dataset)?
    } else {
        PairPools {
            train: Vec::new(),
            holdout: Vec::new(),
        }
    };
    if config.use_pairs && pools.train.is_empty() && !pairs.is_empty() {
        log::warn!("no supervision pair survived filtering; training on point signals only");
    }

    let mut params = Mlp::init(&config.layer_sizes(dataset.dim()), config.seed)?;
    let mut opt = AdamW::new(&params, config.stage1_opt)?;
    let mut shuffle_rng = seed::stream_rng(config.seed, "stage1-shuffle");
    let mut pair_rng = seed::stream_rng(config.seed, "stage1-pair-draw");

    let mut log = RunLog::default();
    let mut snapshots: Vec<Mlp> = Vec::with_capacity(config.stage1_epochs);
    let holdout_sorted: Vec<usize> = {
        let mut v: Vec<usize> = holdout_rows.iter().copied().collect();
        v.sort_unstable();
        v
    };

    let mut order = core_rows.clone();
    for epoch in 1..=config.stage1_epochs {
        order.shuffle(&mut shuffle_rng);
        let mut sum_total = 0.0;
        let mut sum_point = 0.0;
        let mut sum_pair = 0.0;
        let mut batches = 0usize;
        for batch in order.chunks(config.stage1_batch) {
            let mut feats: Vec<&[f64]> = Vec::new();
            let mut ogs: Vec<f64> = Vec::new();
            let mut total = 0.0;
            let mut point_part = 0.0;
            let mut pair_part = 0.0;

            if config.use_point {
                let bf: Vec<&[f64]> = batch.iter().map(|&i| dataset.feature(i)).collect();
                let scores = params.forward_batch(&bf)?;
                let targets: Vec<f64> = batch.iter().map(|&i| teacher[&i]).collect();
                let reg = losses::reg_loss(&scores, &targets, config.beta)?;
                point_part = reg.value;
                total += reg.value;
                feats.extend(bf);
                ogs.extend(reg.score_grads);
            }
            if config.use_pairs && !pools.train.is_empty() {
                let draw: Vec<SupervisionPair> = (0..config.stage1_batch)
                    .map(|_| pools.train[pair_rng.gen_range(0..pools.train.len())].clone())
                    .collect();
                let (ids, scores) = score_pair_union(&params, dataset, &draw)?;
                let rank = losses::rank_loss(&ids, &scores, &draw)?;
                let weight = if config.use_point { config.lambda_dis } else { 1.0 };
                pair_part = rank.value;
                total += weight * rank.value;
                let pf: Vec<&[f64]> = ids
                    .iter()
                    .map(|id| dataset.feature(dataset.index_of(id).expect("audited id")))
                    .collect();
                feats.extend(pf);
                ogs.extend(rank.score_grads.iter().map(|g| weight * g));
            }
            if feats.is_empty() {
                continue;
            }
            if !total.is_finite() {
                return Err(CoreError::TrainingDivergence {
                    step: opt.step,
                    reason: format!("non-finite stage-1 loss in epoch {epoch}"),
                });
            }
            let grads = params.backward(&feats, &ogs)?;
            opt.step(&mut params, &grads)?;
            sum_total += total;
            sum_point += point_part;
            sum_pair += pair_part;
            batches += 1;
        }
        let denom = batches.max(1) as f64;

        let val_metric = match config.checkpoint_mode {
            CheckpointMode::MosFree => {
                if holdout_sorted.is_empty() && pools.holdout.is_empty() {
                    sum_total / denom
                } else {
                    distill_eval(config, &params, dataset, &holdout_sorted, &teacher, &pools.holdout)?
                }
            }
            CheckpointMode::FewShot => {
                let hold = few_shot_holdout.expect("checked above");
                let feats: Vec<&[f64]> = hold.rows.iter().map(|&(i, _)| dataset.feature(i)).collect();
                let scores = params.forward_batch(&feats)?;
                let labels: Vec<f64> = hold.rows.iter().map(|&(_, y)| y).collect();
                match metrics::plcc(&scores, &labels) {
                    Ok(r) => r,
                    Err(CoreError::DegenerateMetric(_)) => -1.0,
                    Err(e) => return Err(e),
                }
            }
        };
        log.epochs.push(EpochRecord {
            epoch,
            train_loss: sum_total / denom,
            point_loss: sum_point / denom,
            pair_loss: sum_pair / denom,
            val_metric,
        });
        snapshots.push(params.clone());
    }

    let chosen = if snapshots.is_empty() {
        params.clone()
    } else {
        let history: Vec<f64> = log.epochs.iter().map(|e| e.val_metric).collect();
        let best = select_checkpoint(&history, config.checkpoint_mode);
        log.selected_epoch = Some(best);
        snapshots[best].clone()
    };
    log.mos_reads_during_run = dataset.mos_read_count() - reads_before;
    Ok((chosen, log))
}

/// Stage 2: calibrate the student on the labeled subset. The holdout
/// fraction of the labeled ids is reserved for checkpoint selection; the
/// candidate list includes the incoming parameters, so a model the stage
/// cannot improve is returned untouched.
pub fn run_stage2(
    config: &TrainConfig,
    params: Mlp,
    dataset: &FeatureDataset,
    labeled_ids: &[ImageId],
) -> Result<(Mlp, RunLog)> {
    config.validate()?;
    let reads_before = dataset.mos_read_count();
    if labeled_ids.is_empty() {
        return Err(CoreError::MissingLabels(
            "calibration requires a non-empty labeled set".into(),
        ));
    }
    let row_label = |id: &ImageId| -> Result<(usize, f64)> {
        let row = dataset
            .index_of(id)
            .ok_or_else(|| CoreError::DanglingPair { id: id.0.clone() })?;
        let y = dataset.mos(row).ok_or_else(|| {
            CoreError::MissingLabels(format!("labeled id {id} has no label value"))
        })?;
        Ok((row, y))
    };
    let (train_ids, holdout_ids) = calib_split(labeled_ids, config.calib_holdout_frac, config.seed);
    let train: Vec<(usize, f64)> = train_ids.iter().map(|id| row_label(id)).collect::<Result<_>>()?;
    let holdout: Vec<(usize, f64)> = holdout_ids.iter().map(|id| row_label(id)).collect::<Result<_>>()?;
    // With no affordable holdout, selection falls back to the train labels.
    let selection = if holdout.is_empty() { &train } else { &holdout };

    let eval_plcc = |params: &Mlp, rows: &[(usize, f64)]| -> Result<f64> {
        let feats: Vec<&[f64]> = rows.iter().map(|&(i, _)| dataset.feature(i)).collect();
        let scores = params.forward_batch(&feats)?;
        let labels: Vec<f64> = rows.iter().map(|&(_, y)| y).collect();
        match metrics::plcc(&scores, &labels) {
            Ok(r) => Ok(r),
            Err(CoreError::DegenerateMetric(_)) => Ok(-1.0),
            Err(e) => Err(e),
        }
    };
    let full_loss = |params: &Mlp, rows: &[(usize, f64)]| -> Result<f64> {
        let feats: Vec<&[f64]> = rows.iter().map(|&(i, _)| dataset.feature(i)).collect();
        let scores = params.forward_batch(&feats)?;
        let labels: Vec<f64> = rows.iter().map(|&(_, y)| y).collect();
        if scores.len() < 2 || config.lambda_cal == 0.0 {
            return Ok(losses::mse_loss(&scores, &labels)?.value);
        }
        match losses::calib_loss(&scores, &labels, config.lambda_cal) {
            Ok(l) => Ok(l.value),
            Err(CoreError::DegenerateBatch(_)) => Ok(losses::mse_loss(&scores, &labels)?.value),
            Err(e) => Err(e),
        }
    };

    let mut params = params;
    let mut opt = AdamW::new(&params, config.stage2_opt)?;
    let from_layer = if config.freeze_trunk_stage2 {
        params.n_layers() - 1
    } else {
        0
    };
    let mut shuffle_rng = seed::stream_rng(config.seed, "stage2-shuffle");

    let mut log = RunLog::default();
    // Epoch 0: the incoming parameters, before any update.
    log.epochs.push(EpochRecord {
        epoch: 0,
        train_loss: full_loss(&params, &train)?,
        point_loss: 0.0,
        pair_loss: 0.0,
        val_metric: eval_plcc(&params, selection)?,
    });
    let mut snapshots: Vec<Mlp> = vec![params.clone()];

    let mut order: Vec<usize> = (0..train.len()).collect();
    for epoch in 1..=config.stage2_epochs {
        order.shuffle(&mut shuffle_rng);
        // Chunk the epoch; a trailing 1-row chunk is merged into its
        // neighbor because the correlation term needs at least 2 rows.
        let mut bounds: Vec<(usize, usize)> = (0..order.len())
            .step_by(config.stage2_batch)
            .map(|s| (s, (s + config.stage2_batch).min(order.len())))
            .collect();
        if bounds.len() >= 2 && bounds.last().map_or(false, |&(s, e)| e - s == 1) {
            let (_, end) = bounds.pop().unwrap();
            bounds.last_mut().unwrap().1 = end;
        }
        let chunks: Vec<&[usize]> = bounds.iter().map(|&(s, e)| &order[s..e]).collect();
        let mut sum_loss = 0.0;
        let mut batches = 0usize;
        for chunk in chunks {
            let rows: Vec<(usize, f64)> = chunk.iter().map(|&k| train[k]).collect();
            let feats: Vec<&[f64]> = rows.iter().map(|&(i, _)| dataset.feature(i)).collect();
            let scores = params.forward_batch(&feats)?;
            let labels: Vec<f64> = rows.iter().map(|&(_, y)| y).collect();
            let loss = if scores.len() < 2 || config.lambda_cal == 0.0 {
                losses::mse_loss(&scores, &labels)?
            } else {
                match losses::calib_loss(&scores, &labels, config.lambda_cal) {
                    Ok(l) => l,
                    Err(CoreError::DegenerateBatch(_)) => {
                        log::warn!("constant-label batch in epoch {epoch}; using MSE only");
                        losses::mse_loss(&scores, &labels)?
                    }
                    Err(e) => return Err(e),
                }
            };
            if !loss.value.is_finite() {
                return Err(CoreError::TrainingDivergence {
                    step: opt.step,
                    reason: format!("non-finite stage-2 loss in epoch {epoch}"),
                });
            }
            let grads = params.backward(&feats, &loss.score_grads)?;
            opt.step_layers(&mut params, &grads, from_layer)?;
            sum_loss += loss.value;
            batches += 1;
        }
        log.epochs.push(EpochRecord {
            epoch,
            train_loss: sum_loss / batches.max(1) as f64,
            point_loss: 0.0,
            pair_loss: 0.0,
            val_metric: eval_plcc(&params, selection)?,
        });
        snapshots.push(params.clone());
    }

    let history: Vec<f64> = log.epochs.iter().map(|e| e.val_metric).collect();
    let best = select_checkpoint(&history, CheckpointMode::FewShot);
    log.selected_epoch = Some(best);
    log.mos_reads_during_run = dataset.mos_read_count() - reads_before;
    Ok((snapshots[best].clone(), log))
}

/// Score every row of a split and compare against its labels.
pub fn evaluate_split(params: &Mlp, dataset: &FeatureDataset, split: Split) -> Result<EvalReport> {
    let rows: Vec<usize> = dataset
        .split_indices(split)
        .into_iter()
        .filter(|&i| dataset.mos(i).is_some())
        .collect();
    if rows.len() < 2 {
        return Err(CoreError::MissingLabels(format!(
            "split {} has {} labeled rows; need at least 2",
            split.as_str(),
            rows.len()
        )));
    }
    let feats: Vec<&[f64]> = rows.iter().map(|&i| dataset.feature(i)).collect();
    let scores = params.forward_batch(&feats)?;
    let labels: Vec<f64> = rows
        .iter()
        .map(|&i| dataset.mos(i).expect("filtered above"))
        .collect();
    EvalReport::compute(&scores, &labels)
}

/// The outcome of one full two-stage run on one benchmark.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentOutcome {
    pub seed: u64,
    pub stage1_log: Option<RunLog>,
    pub stage2_log: Option<RunLog>,
    /// Post-pipeline reports against labels, keyed by split name.
    pub reports: BTreeMap<String, EvalReport>,
    /// Report of the stage-1 model alone on the test split (against
    /// labels), for before/after comparisons.
    pub stage1_test: Option<EvalReport>,
}

/// Run the full pipeline on one benchmark: budget split, stage 1 (unless
/// skipped), stage 2 (unless the budget is zero), and final evaluation.
pub fn run_experiment(bench: &Benchmark, config: &TrainConfig) -> Result<ExperimentOutcome> {
    config.validate()?;
    let dataset = &bench.dataset;
    let (labeled, _unlabeled) = split_mos_budget(dataset, config.mos_ratio, config.seed)?;

    // Extract the few-shot holdout labels up front so stage 1 itself never
    // touches the label store.
    let few_shot_holdout = if config.checkpoint_mode == CheckpointMode::FewShot && !labeled.is_empty()
    {
        let (_, holdout_ids) = calib_split(&labeled, config.calib_holdout_frac, config.seed);
        let rows: Vec<(usize, f64)> = holdout_ids
            .iter()
            .filter_map(|id| {
                let row = dataset.index_of(id)?;
                dataset.mos(row).map(|y| (row, y))
            })
            .collect();
        Some(HoldoutLabels { rows })
    } else {
        None
    };

    let (stage1_params, stage1_log) = if config.skip_stage1 {
        (Mlp::init(&config.layer_sizes(dataset.dim()), config.seed)?, None)
    } else {
        let (p, l) = run_stage1(
            config,
            dataset,
            &bench.points,
            &bench.pairs,
            few_shot_holdout.as_ref(),
        )?;
        (p, Some(l))
    };
    let stage1_test = if config.skip_stage1 {
        None
    } else {
        Some(evaluate_split(&stage1_params, dataset, Split::Test)?)
    };

    let (final_params, stage2_log) = if labeled.is_empty() {
        (stage1_params, None)
    } else {
        let (p, l) = run_stage2(config, stage1_params, dataset, &labeled)?;
        (p, Some(l))
    };

    let mut reports = BTreeMap::new();
    for split in [Split::Val, Split::Test] {
        reports.insert(
            split.as_str().to_string(),
            evaluate_split(&final_params, dataset, split)?,
        );
    }
    Ok(ExperimentOutcome {
        seed: config.seed,
        stage1_log,
        stage2_log,
        reports,
        stage1_test,
    })
}

/// Mean and standard deviation (population) of a series.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub mean: f64,
    pub std: f64,
}

impl Aggregate {
    pub fn of(values: &[f64]) -> Aggregate {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        Aggregate {
            mean,
            std: var.sqrt(),
        }
    }
}

/// Per-seed outcomes plus aggregate statistics over the test split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedAggregate {
    pub outcomes: Vec<ExperimentOutcome>,
    pub test_srcc: Aggregate,
    pub test_plcc: Aggregate,
    pub val_srcc: Aggregate,
    pub val_plcc: Aggregate,
}

impl SeedAggregate {
    fn from_outcomes(outcomes: Vec<ExperimentOutcome>) -> SeedAggregate {
        let pick = |split: &str, f: &dyn Fn(&EvalReport) -> f64| -> Vec<f64> {
            outcomes.iter().map(|o| f(&o.reports[split])).collect()
        };
        SeedAggregate {
            test_srcc: Aggregate::of(&pick("test", &|r| r.srcc)),
            test_plcc: Aggregate::of(&pick("test", &|r| r.plcc)),
            val_srcc: Aggregate::of(&pick("val", &|r| r.srcc)),
            val_plcc: Aggregate::of(&pick("val", &|r| r.plcc)),
            outcomes,
        }
    }
}

/// Repeat the full pipeline once per seed on freshly generated synthetic
/// benchmarks (each seed gets its own data, budget split, and init) and
/// aggregate. Runs are independent, so they execute in parallel; results
/// are collected in seed order.
pub fn run_seeded_repeats(
    synth_template: &SynthConfig,
    train_template: &TrainConfig,
    seeds: &[u64],
) -> Result<SeedAggregate> {
    if seeds.is_empty() {
        return Err(CoreError::InsufficientData("no seeds given".into()));
    }
    let mut outcomes: Vec<ExperimentOutcome> = seeds
        .par_iter()
        .map(|&s| {
            let synth = SynthConfig {
                seed: s,
                ..synth_template.clone()
            };
            let train = TrainConfig {
                seed: s,
                ..train_template.clone()
            };
            let bench = make_benchmark(&synth).map_err(|e| seed_err(s, e))?;
            run_experiment(&bench, &train).map_err(|e| seed_err(s, e))
        })
        .collect::<Result<_>>()?;
    // Canonical seed order, so aggregates do not depend on how the seed
    // list was written down.
    outcomes.sort_by_key(|o| o.seed);
    Ok(SeedAggregate::from_outcomes(outcomes))
}

/// Same repetition over a fixed, pre-loaded benchmark: the data stays put
/// while the budget split, initialization, and batch order re-randomize
/// per seed.
pub fn run_seeded_repeats_on(
    bench: &Benchmark,
    train_template: &TrainConfig,
    seeds: &[u64],
) -> Result<SeedAggregate> {
    if seeds.is_empty() {
        return Err(CoreError::InsufficientData("no seeds given".into()));
    }
    let mut outcomes: Vec<ExperimentOutcome> = seeds
        .par_iter()
        .map(|&s| {
            let train = TrainConfig {
                seed: s,
                ..train_template.clone()
            };
            run_experiment(bench, &train).map_err(|e| seed_err(s, e))
        })
        .collect::<Result<_>>()?;
    outcomes.sort_by_key(|o| o.seed);
    Ok(SeedAggregate::from_outcomes(outcomes))
}

fn seed_err(seed: u64, e: CoreError) -> CoreError {
    CoreError::SeedRun {
        seed,
        source: Box::new(e),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy_dataset() -> FeatureDataset {
        // Feature = the label itself, so a [1,1] identity student is exact.
        let n = 20;
        let ids: Vec<ImageId> = (0..n).map(|i| ImageId(format!("t{i:02}"))).collect();
        let values: Vec<f64> = (0..n).map(|i| 1.0 + 4.0 * i as f64 / (n - 1) as f64).collect();
        FeatureDataset::new(
            ids,
            1,
            values.clone(),
            values.iter().map(|&v| Some(v)).collect(),
            vec![None; n],
            vec![Split::Train; n],
        )
        .unwrap()
    }

    #[test]
    fn budget_split_contract() {
        let ds = toy_dataset();
        let (labeled, unlabeled) = split_mos_budget(&ds, 0.0, 1).unwrap();
        assert!(labeled.is_empty());
        assert_eq!(unlabeled.len(), 20);

        let (labeled, unlabeled) = split_mos_budget(&ds, 1.0, 1).unwrap();
        assert_eq!(labeled.len(), 20);
        assert!(unlabeled.is_empty());

        let (labeled, unlabeled) = split_mos_budget(&ds, 0.5, 1).unwrap();
        assert_eq!(labeled.len(), 10);
        assert_eq!(unlabeled.len(), 10);
        let l: HashSet<&str> = labeled.iter().map(|i| i.as_str()).collect();
        assert!(unlabeled.iter().all(|i| !l.contains(i.as_str())));
        // Deterministic per seed.
        assert_eq!(labeled, split_mos_budget(&ds, 0.5, 1).unwrap().0);
        assert_ne!(labeled, split_mos_budget(&ds, 0.5, 2).unwrap().0);

        assert!(matches!(
            split_mos_budget(&ds, 0.01, 1),
            Err(CoreError::BudgetTooSmall(_))
        ));
        assert!(split_mos_budget(&ds, 1.5, 1).is_err());
    }

    #[test]
    fn checkpoint_selection_rules() {
        assert_eq!(select_checkpoint(&[0.7], CheckpointMode::MosFree), 0);
        assert_eq!(
            select_checkpoint(&[3.0, 2.0, 1.0], CheckpointMode::MosFree),
            2
        );
        assert_eq!(
            select_checkpoint(&[2.0, 1.0, 1.0], CheckpointMode::MosFree),
            1
        );
        assert_eq!(
            select_checkpoint(&[0.1, 0.9, 0.9], CheckpointMode::FewShot),
            1
        );
    }

    #[test]
    fn affine_fit_examples() {
        let (a, b) = affine_calibrate(&[(1.0, 1.0), (2.0, 2.0), (4.5, 4.5)]).unwrap();
        assert!((a - 1.0).abs() < 1e-9 && b.abs() < 1e-9);
        let (a, b) = affine_calibrate(&[(1.0, 3.0), (2.0, 5.0)]).unwrap();
        assert!((a - 2.0).abs() < 1e-12 && (b - 1.0).abs() < 1e-12);
        assert!(matches!(
            affine_calibrate(&[(2.0, 1.0), (2.0, 3.0)]),
            Err(CoreError::DegenerateFit(_))
        ));
        assert!(affine_calibrate(&[(1.0, 1.0)]).is_err());
    }

    #[test]
    fn calib_split_edge_rules() {
        let ids: Vec<ImageId> = (0..140).map(|i| ImageId(format!("x{i}"))).collect();
        let (train, hold) = calib_split(&ids, 0.2, 3);
        assert_eq!(hold.len(), 28);
        assert_eq!(train.len(), 112);

        let ids: Vec<ImageId> = (0..4).map(|i| ImageId(format!("x{i}"))).collect();
        let (train, hold) = calib_split(&ids, 0.2, 3);
        assert_eq!(hold.len(), 2);
        assert_eq!(train.len(), 2);

        let ids: Vec<ImageId> = (0..3).map(|i| ImageId(format!("x{i}"))).collect();
        let (train, hold) = calib_split(&ids, 0.2, 3);
        assert!(hold.is_empty());
        assert_eq!(train.len(), 3);
    }

    #[test]
    fn stage2_on_perfect_toy_returns_params_unchanged() {
        let ds = toy_dataset();
        let params = Mlp {
            layer_sizes: vec![1, 1],
            weights: vec![vec![1.0]],
            biases: vec![vec![0.0]],
        };
        let config = TrainConfig {
            stage2_epochs: 5,
            stage2_batch: 8,
            mos_ratio: 1.0,
            ..TrainConfig::default()
        };
        let labeled: Vec<ImageId> = ds.ids().to_vec();
        let (out, log) = run_stage2(&config, params.clone(), &ds, &labeled).unwrap();
        assert_eq!(out, params, "selection should keep the already-perfect model");
        assert_eq!(log.selected_epoch, Some(0));
        assert!(log.epochs[0].train_loss.abs() < 1e-18);
        assert_eq!(log.epochs.len(), 6);
    }

    #[test]
    fn stage2_requires_labels() {
        let ds = toy_dataset();
        let params = Mlp::init(&[1, 1], 0).unwrap();
        let config = TrainConfig::default();
        assert!(matches!(
            run_stage2(&config, params, &ds, &[]),
            Err(CoreError::MissingLabels(_))
        ));
    }

    #[test]
    fn config_validation_rules() {
        assert!(TrainConfig::default().validate().is_ok());
        assert!(TrainConfig {
            mos_ratio: 1.2,
            ..TrainConfig::default()
        }
        .validate()
        .is_err());
        assert!(TrainConfig {
            calib_holdout_frac: 0.0,
            ..TrainConfig::default()
        }
        .validate()
        .is_err());
        assert!(TrainConfig {
            stage1_batch: 0,
            ..TrainConfig::default()
        }
        .validate()
        .is_err());
        assert!(TrainConfig {
            use_point: false,
            use_pairs: false,
            ..TrainConfig::default()
        }
        .validate()
        .is_err());
    }

    #[test]
    fn aggregate_of_single_value_has_zero_std() {
        let a = Aggregate::of(&[0.83]);
        assert_eq!(a.mean, 0.83);
        assert_eq!(a.std, 0.0);
    }
}
