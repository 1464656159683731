//! Synthetic benchmark generator and simulated teacher.
//!
//! Generates, at desk scale, the regime this whole crate targets: a teacher
//! whose quality scores *rank* images almost perfectly but sit on a bent,
//! biased scale; pair-wise preferences whose reliability varies with how
//! close the pair is; and a small budget of human labels. Everything is
//! driven by one seed plus named RNG streams, so regeneration is
//! bitwise-identical.

use crate::error::{CoreError, Result};
use crate::seed;
use crate::signals::{self, SupervisionPair, TeacherPointSignal};
use crate::student::{FeatureDataset, Split};
use crate::ImageId;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Monotone map from latent quality to the teacher's internal score scale.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TeacherBias {
    /// No distortion.
    Identity,
    /// `g(q) = 1 + 4·((q−1)/4)^gamma`; gamma < 1 compresses the top of the
    /// scale — ranks survive, the scale bends.
    Compressive { gamma: f64 },
    /// `g(q) = alpha·q + beta` with `alpha > 0`.
    Affine { alpha: f64, beta: f64 },
}

impl TeacherBias {
    pub fn apply(&self, q: f64) -> f64 {
        let q = q.clamp(1.0, 5.0);
        match *self {
            TeacherBias::Identity => q,
            TeacherBias::Compressive { gamma } => 1.0 + 4.0 * ((q - 1.0) / 4.0).powf(gamma),
            TeacherBias::Affine { alpha, beta } => alpha * q + beta,
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = match *self {
            TeacherBias::Identity => true,
            TeacherBias::Compressive { gamma } => gamma > 0.0,
            TeacherBias::Affine { alpha, .. } => alpha > 0.0,
        };
        if ok {
            Ok(())
        } else {
            Err(CoreError::Config(format!(
                "teacher bias map must be strictly increasing: {self:?}"
            )))
        }
    }
}

/// Knobs of the synthetic benchmark.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    /// Image count.
    pub n: usize,
    /// Feature dimension.
    pub d: usize,
    /// How many leading dims carry quality signal; the rest are noise.
    pub informative_dims: usize,
    /// Gaussian noise added to informative feature dims.
    pub feature_noise: f64,
    pub teacher_bias: TeacherBias,
    /// Noise on the teacher's internal score, point and pair alike.
    pub teacher_noise: f64,
    /// Curvature of the point logits around the teacher's score.
    pub point_sharpness: f64,
    /// Scale of the pair decision logits per unit of score gap.
    pub pair_sharpness: f64,
    /// When set, pair noise grows as the latent gap shrinks, so near-ties
    /// are unreliable and confidence actually predicts correctness.
    pub hetero_pairs: bool,
    /// Gaussian noise on the human labels.
    pub mos_noise: f64,
    /// How many supervision pairs to sample (from the training split).
    pub pair_count: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n: 2000,
            d: 16,
            informative_dims: 4,
            feature_noise: 0.25,
            teacher_bias: TeacherBias::Compressive { gamma: 0.5 },
            teacher_noise: 0.6,
            point_sharpness: 2.0,
            pair_sharpness: 3.0,
            hetero_pairs: false,
            mos_noise: 0.2,
            pair_count: 2000,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n < 10 {
            return Err(CoreError::Config(format!("n must be >= 10, got {}", self.n)));
        }
        if self.informative_dims == 0 || self.informative_dims > self.d {
            return Err(CoreError::Config(format!(
                "informative_dims {} outside 1..={}",
                self.informative_dims, self.d
            )));
        }
        if self.feature_noise < 0.0 || self.teacher_noise < 0.0 || self.mos_noise < 0.0 {
            return Err(CoreError::Config("noise scales must be >= 0".into()));
        }
        if self.point_sharpness <= 0.0 || self.pair_sharpness <= 0.0 {
            return Err(CoreError::Config("sharpness must be > 0".into()));
        }
        self.teacher_bias.validate()
    }
}

/// Standard normal draw via Box–Muller; consumes exactly two uniforms.
pub(crate) fn normal(rng: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = 1.0 - rng.gen::<f64>();
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

/// Latent qualities, i.i.d. uniform on [1, 5].
pub fn gen_latent(n: usize, seed: u64) -> Vec<f64> {
    let mut rng = seed::stream_rng(seed, "latent");
    (0..n).map(|_| rng.gen_range(1.0..=5.0)).collect()
}

/// The fixed smooth monotone map used by informative feature dim `j`.
/// Dim 0 is the identity so a linear probe has an exact handle on q.
pub fn informative_map(j: usize, q: f64) -> f64 {
    match j % 4 {
        0 => q,
        1 => (q - 3.0).tanh(),
        2 => ((q - 1.0) / 4.0).sqrt(),
        _ => ((q - 1.0) / 4.0).powi(2),
    }
}

/// Feature matrix, row-major n×d. Informative dims are monotone functions
/// of q plus Gaussian noise; the rest are pure standard-normal distractors.
///
/// `informative_dims` may be 0 here (a pure-noise null benchmark used in
/// tests) even though [`SynthConfig::validate`] requires at least 1 for
/// real runs.
pub fn gen_features(q: &[f64], config: &SynthConfig) -> Vec<f64> {
    let mut rng = seed::stream_rng(config.seed, "features");
    let mut out = Vec::with_capacity(q.len() * config.d);
    for &qi in q {
        for j in 0..config.d {
            if j < config.informative_dims {
                out.push(informative_map(j, qi) + config.feature_noise * normal(&mut rng));
            } else {
                out.push(normal(&mut rng));
            }
        }
    }
    out
}

/// Point-judgment logits for one image: the teacher scores the image at
/// `m = clamp(g(q) + noise, 1, 5)` and emits logits `−kappa_pt·(v_k − m)²`
/// over the five quality words, so the derived soft score is a smoothed `m`.
pub fn teacher_point_oracle(q: f64, config: &SynthConfig, rng: &mut ChaCha8Rng) -> [f64; 5] {
    let m = (config.teacher_bias.apply(q) + config.teacher_noise * normal(rng)).clamp(1.0, 5.0);
    let mut logits = [0.0; 5];
    for (k, slot) in logits.iter_mut().enumerate() {
        let v = (5 - k) as f64;
        *slot = -config.point_sharpness * (v - m) * (v - m);
    }
    logits
}

const HETERO_GAP_REF: f64 = 0.5;
const HETERO_NOISE_CAP: f64 = 3.0;

/// Pair-judgment logits: `l_a = kappa·(g(q_a) − g(q_b))/2 + noise`,
/// `l_b` its exact negation before noise. In heteroscedastic mode the noise
/// scale grows as the latent gap shrinks (capped), so near-ties come out
/// low-confidence *and* unreliable.
pub fn teacher_pair_oracle(
    q_a: f64,
    q_b: f64,
    config: &SynthConfig,
    rng: &mut ChaCha8Rng,
) -> (f64, f64) {
    let half_gap = config.pair_sharpness * (config.teacher_bias.apply(q_a) - config.teacher_bias.apply(q_b)) / 2.0;
    let sigma = if config.hetero_pairs {
        let gap = (q_a - q_b).abs();
        let scale = if gap > 0.0 {
            (HETERO_GAP_REF / gap).clamp(1.0, HETERO_NOISE_CAP)
        } else {
            HETERO_NOISE_CAP
        };
        config.teacher_noise * scale
    } else {
        config.teacher_noise
    };
    (half_gap + sigma * normal(rng), -half_gap)
}

/// Human labels: latent quality plus Gaussian noise, clamped to [1, 5].
pub fn gen_mos(q: &[f64], sigma_y: f64, seed: u64) -> Vec<f64> {
    let mut rng = seed::stream_rng(seed, "mos");
    q.iter()
        .map(|&qi| (qi + sigma_y * normal(&mut rng)).clamp(1.0, 5.0))
        .collect()
}

/// Everything one experiment needs: the dataset (features, labels, latent
/// truth, splits), the teacher's point signals aligned with dataset rows,
/// and the sampled supervision pairs (training ids only).
#[derive(Debug, Clone)]
pub struct Benchmark {
    pub dataset: FeatureDataset,
    pub points: Vec<TeacherPointSignal>,
    pub pairs: Vec<SupervisionPair>,
}

impl Benchmark {
    /// Latent qualities for a set of row indices.
    pub fn latent_of(&self, rows: &[usize]) -> Vec<f64> {
        rows.iter()
            .map(|&i| self.dataset.latent(i).expect("synthetic rows carry latent truth"))
            .collect()
    }

    /// Teacher soft scores for a set of row indices.
    pub fn teacher_scores_of(&self, rows: &[usize]) -> Vec<f64> {
        rows.iter().map(|&i| self.points[i].soft_score).collect()
    }
}

/// Generate the full benchmark bundle for one config.
pub fn make_benchmark(config: &SynthConfig) -> Result<Benchmark> {
    config.validate()?;
    make_benchmark_unchecked(config)
}

/// Same as [`make_benchmark`] without config validation, so tests can build
/// degenerate variants (e.g. zero informative dims).
pub fn make_benchmark_unchecked(config: &SynthConfig) -> Result<Benchmark> {
    let n = config.n;
    let ids: Vec<ImageId> = (0..n).map(|i| ImageId(format!("img_{i:05}"))).collect();
    let latent = gen_latent(n, config.seed);
    let features = gen_features(&latent, config);
    let mos = gen_mos(&latent, config.mos_noise, config.seed);

    // Seeded 70/10/20 split over shuffled row indices.
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut seed::stream_rng(config.seed, "split"));
    let n_train = (n * 7) / 10;
    let n_val = n / 10;
    let mut split = vec![Split::Test; n];
    for &i in &order[..n_train] {
        split[i] = Split::Train;
    }
    for &i in &order[n_train..n_train + n_val] {
        split[i] = Split::Val;
    }

    let dataset = FeatureDataset::new(
        ids.clone(),
        config.d,
        features,
        mos.into_iter().map(Some).collect(),
        latent.iter().copied().map(Some).collect(),
        split,
    )?;

    let mut point_rng = seed::stream_rng(config.seed, "teacher-point");
    let mut points = Vec::with_capacity(n);
    for (id, &q) in ids.iter().zip(latent.iter()) {
        let logits = teacher_point_oracle(q, config, &mut point_rng);
        points.push(TeacherPointSignal::from_logits(id.clone(), logits)?);
    }

    let train_ids: Vec<ImageId> = dataset
        .split_indices(Split::Train)
        .into_iter()
        .map(|i| dataset.id(i).clone())
        .collect();
    let sampled = signals::sample_pairs(&train_ids, config.pair_count, config.seed)?;
    let mut pair_rng = seed::stream_rng(config.seed, "teacher-pair");
    let mut pairs = Vec::with_capacity(sampled.len());
    for (a, b) in sampled {
        let qa = latent[dataset.index_of(&a).expect("sampled id exists")];
        let qb = latent[dataset.index_of(&b).expect("sampled id exists")];
        let (la, lb) = teacher_pair_oracle(qa, qb, config, &mut pair_rng);
        pairs.push(SupervisionPair::from_logits(a, b, la, lb)?);
    }

    Ok(Benchmark {
        dataset,
        points,
        pairs,
    })
}
