//! The student: a small scalar regressor over fixed-length feature vectors,
//! with hand-rolled reverse-mode gradients and a decoupled-weight-decay
//! adaptive optimizer.
//!
//! The network is a plain multilayer perceptron — affine layers with a
//! Gaussian-error linear unit on hidden layers and identity on the single
//! output. Everything is f64 and deterministic per seed.

use crate::error::{CoreError, Result};
use crate::seed;
use crate::ImageId;
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};

/// Gaussian-error linear unit, tanh form.
fn gelu(x: f64) -> f64 {
    const C: f64 = 0.7978845608028654; // sqrt(2/pi)
    0.5 * x * (1.0 + (C * (x + 0.044715 * x * x * x)).tanh())
}

/// Derivative of `gelu`.
fn gelu_prime(x: f64) -> f64 {
    const C: f64 = 0.7978845608028654;
    let u = C * (x + 0.044715 * x * x * x);
    let t = u.tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * C * (1.0 + 3.0 * 0.044715 * x * x)
}

/// Multilayer perceptron parameters. `weights[l]` is row-major
/// `layer_sizes[l+1] × layer_sizes[l]`; `biases[l]` has `layer_sizes[l+1]`
/// entries. The final layer always has one output unit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub layer_sizes: Vec<usize>,
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
}

/// Parameter-shaped gradient accumulator.
#[derive(Debug, Clone, PartialEq)]
pub struct Grads {
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
}

impl Mlp {
    /// Initialize with uniform weights of bound `sqrt(6/(fan_in+fan_out))`
    /// and zero biases, deterministically per seed.
    pub fn init(layer_sizes: &[usize], seed: u64) -> Result<Mlp> {
        if layer_sizes.len() < 2 {
            return Err(CoreError::Config(format!(
                "need at least input and output sizes, got {layer_sizes:?}"
            )));
        }
        if layer_sizes.iter().any(|&s| s == 0) {
            return Err(CoreError::Config(format!(
                "zero-width layer in {layer_sizes:?}"
            )));
        }
        if *layer_sizes.last().unwrap() != 1 {
            return Err(CoreError::Config(format!(
                "output layer must have exactly 1 unit, got {layer_sizes:?}"
            )));
        }
        let mut rng = seed::stream_rng(seed, "student-init");
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for w in layer_sizes.windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let mat: Vec<f64> = (0..fan_in * fan_out)
                .map(|_| rng.gen_range(-bound..bound))
                .collect();
            weights.push(mat);
            biases.push(vec![0.0; fan_out]);
        }
        Ok(Mlp {
            layer_sizes: layer_sizes.to_vec(),
            weights,
            biases,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn n_layers(&self) -> usize {
        self.layer_sizes.len() - 1
    }

    /// Scalar score for one feature vector.
    pub fn forward(&self, feature: &[f64]) -> Result<f64> {
        Ok(self.forward_cached(feature)?.output)
    }

    /// Scores for a batch of feature vectors.
    pub fn forward_batch(&self, features: &[&[f64]]) -> Result<Vec<f64>> {
        features.iter().map(|f| self.forward(f)).collect()
    }

    fn forward_cached(&self, feature: &[f64]) -> Result<SampleCache> {
        if feature.len() != self.input_dim() {
            return Err(CoreError::Shape(format!(
                "feature length {} vs input dim {}",
                feature.len(),
                self.input_dim()
            )));
        }
        let n_layers = self.n_layers();
        let mut activations: Vec<Vec<f64>> = Vec::with_capacity(n_layers + 1);
        let mut pre_acts: Vec<Vec<f64>> = Vec::with_capacity(n_layers);
        activations.push(feature.to_vec());
        for l in 0..n_layers {
            let (n_in, n_out) = (self.layer_sizes[l], self.layer_sizes[l + 1]);
            let input = &activations[l];
            let mut z = self.biases[l].clone();
            for (o, zo) in z.iter_mut().enumerate() {
                let row = &self.weights[l][o * n_in..(o + 1) * n_in];
                *zo += row.iter().zip(input.iter()).map(|(w, a)| w * a).sum::<f64>();
            }
            let a = if l + 1 < n_layers {
                z.iter().map(|&v| gelu(v)).collect()
            } else {
                z.clone()
            };
            debug_assert_eq!(a.len(), n_out);
            pre_acts.push(z);
            activations.push(a);
        }
        let output = activations.last().unwrap()[0];
        Ok(SampleCache {
            activations,
            pre_acts,
            output,
        })
    }

    /// Gradients of `sum_i output_grads[i] * forward(features[i])` with
    /// respect to every weight and bias.
    pub fn backward(&self, features: &[&[f64]], output_grads: &[f64]) -> Result<Grads> {
        if features.len() != output_grads.len() {
            return Err(CoreError::Shape(format!(
                "batch {} vs output grads {}",
                features.len(),
                output_grads.len()
            )));
        }
        let mut grads = self.zero_grads();
        for (feature, &g) in features.iter().zip(output_grads.iter()) {
            if g == 0.0 {
                continue;
            }
            let cache = self.forward_cached(feature)?;
            self.accumulate_sample(&cache, g, &mut grads);
        }
        Ok(grads)
    }

    fn accumulate_sample(&self, cache: &SampleCache, g: f64, grads: &mut Grads) {
        let n_layers = self.n_layers();
        // Output layer is identity, so its delta is the incoming gradient.
        let mut delta = vec![g];
        for l in (0..n_layers).rev() {
            let n_in = self.layer_sizes[l];
            let input = &cache.activations[l];
            for (o, &d) in delta.iter().enumerate() {
                grads.biases[l][o] += d;
                let row = &mut grads.weights[l][o * n_in..(o + 1) * n_in];
                for (gw, a) in row.iter_mut().zip(input.iter()) {
                    *gw += d * a;
                }
            }
            if l > 0 {
                let mut prev = vec![0.0; n_in];
                for (o, &d) in delta.iter().enumerate() {
                    let row = &self.weights[l][o * n_in..(o + 1) * n_in];
                    for (p, w) in prev.iter_mut().zip(row.iter()) {
                        *p += d * w;
                    }
                }
                for (p, &z) in prev.iter_mut().zip(cache.pre_acts[l - 1].iter()) {
                    *p *= gelu_prime(z);
                }
                delta = prev;
            }
        }
    }

    pub fn zero_grads(&self) -> Grads {
        Grads {
            weights: self.weights.iter().map(|w| vec![0.0; w.len()]).collect(),
            biases: self.biases.iter().map(|b| vec![0.0; b.len()]).collect(),
        }
    }

    pub fn all_finite(&self) -> bool {
        self.weights
            .iter()
            .chain(self.biases.iter())
            .all(|v| v.iter().all(|x| x.is_finite()))
    }
}

struct SampleCache {
    activations: Vec<Vec<f64>>,
    pre_acts: Vec<Vec<f64>>,
    output: f64,
}

/// Optimizer hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamWConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl AdamWConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.lr > 0.0
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.eps > 0.0
            && self.weight_decay >= 0.0;
        if ok {
            Ok(())
        } else {
            Err(CoreError::Config(format!("invalid optimizer settings {self:?}")))
        }
    }

    /// Distillation-stage defaults.
    pub fn stage1_default() -> AdamWConfig {
        AdamWConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 1e-4,
        }
    }

    /// Calibration-stage defaults: a gentler rate for fine-tuning.
    pub fn stage2_default() -> AdamWConfig {
        AdamWConfig {
            lr: 1e-4,
            ..AdamWConfig::stage1_default()
        }
    }
}

/// Adaptive optimizer with weight decay applied decoupled from the
/// gradient-based update.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamW {
    pub config: AdamWConfig,
    pub step: u64,
    m_weights: Vec<Vec<f64>>,
    v_weights: Vec<Vec<f64>>,
    m_biases: Vec<Vec<f64>>,
    v_biases: Vec<Vec<f64>>,
}

impl AdamW {
    pub fn new(params: &Mlp, config: AdamWConfig) -> Result<AdamW> {
        config.validate()?;
        let zeros_w: Vec<Vec<f64>> = params.weights.iter().map(|w| vec![0.0; w.len()]).collect();
        let zeros_b: Vec<Vec<f64>> = params.biases.iter().map(|b| vec![0.0; b.len()]).collect();
        Ok(AdamW {
            config,
            step: 0,
            m_weights: zeros_w.clone(),
            v_weights: zeros_w,
            m_biases: zeros_b.clone(),
            v_biases: zeros_b,
        })
    }

    /// One update over all layers.
    pub fn step(&mut self, params: &mut Mlp, grads: &Grads) -> Result<()> {
        self.step_layers(params, grads, 0)
    }

    /// One update touching only layers `from_layer..`; earlier layers stay
    /// frozen (no decay, no moment updates). Used for head-only fine-tuning.
    pub fn step_layers(&mut self, params: &mut Mlp, grads: &Grads, from_layer: usize) -> Result<()> {
        if grads.weights.len() != params.weights.len()
            || grads
                .weights
                .iter()
                .zip(params.weights.iter())
                .any(|(g, p)| g.len() != p.len())
        {
            return Err(CoreError::Shape("gradient shape mismatch".into()));
        }
        let finite = grads
            .weights
            .iter()
            .chain(grads.biases.iter())
            .all(|v| v.iter().all(|x| x.is_finite()));
        if !finite {
            return Err(CoreError::TrainingDivergence {
                step: self.step,
                reason: "non-finite gradient".into(),
            });
        }
        let t = (self.step + 1) as f64;
        let c = self.config;
        let bc1 = 1.0 - c.beta1.powf(t);
        let bc2 = 1.0 - c.beta2.powf(t);
        let update = |p: &mut [f64], g: &[f64], m: &mut [f64], v: &mut [f64], decay: bool| {
            for i in 0..p.len() {
                if decay {
                    p[i] *= 1.0 - c.lr * c.weight_decay;
                }
                m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * g[i];
                v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * g[i] * g[i];
                let mh = m[i] / bc1;
                let vh = v[i] / bc2;
                p[i] -= c.lr * mh / (vh.sqrt() + c.eps);
            }
        };
        for l in from_layer..params.weights.len() {
            update(
                &mut params.weights[l],
                &grads.weights[l],
                &mut self.m_weights[l],
                &mut self.v_weights[l],
                true,
            );
            // Biases are conventionally exempt from weight decay.
            update(
                &mut params.biases[l],
                &grads.biases[l],
                &mut self.m_biases[l],
                &mut self.v_biases[l],
                false,
            );
        }
        self.step += 1;
        if !params.all_finite() {
            return Err(CoreError::TrainingDivergence {
                step: self.step,
                reason: "non-finite parameter after update".into(),
            });
        }
        Ok(())
    }
}

/// Which split a dataset row belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }

    pub fn parse(s: &str) -> Option<Split> {
        match s {
            "train" => Some(Split::Train),
            "val" => Some(Split::Val),
            "test" => Some(Split::Test),
            _ => None,
        }
    }
}

/// A dataset of feature vectors with optional human labels, optional
/// synthetic ground truth, and a split tag per row.
///
/// Every read of a human label goes through [`FeatureDataset::mos`], which
/// bumps an internal counter — the distillation stage is audited against
/// that counter to prove it never touches labels.
#[derive(Debug)]
pub struct FeatureDataset {
    ids: Vec<ImageId>,
    dim: usize,
    features: Vec<f64>,
    mos: Vec<Option<f64>>,
    latent: Vec<Option<f64>>,
    split: Vec<Split>,
    index: HashMap<String, usize>,
    mos_reads: AtomicU64,
}

impl Clone for FeatureDataset {
    fn clone(&self) -> Self {
        FeatureDataset {
            ids: self.ids.clone(),
            dim: self.dim,
            features: self.features.clone(),
            mos: self.mos.clone(),
            latent: self.latent.clone(),
            split: self.split.clone(),
            index: self.index.clone(),
            mos_reads: AtomicU64::new(self.mos_reads.load(Ordering::Relaxed)),
        }
    }
}

impl FeatureDataset {
    pub fn new(
        ids: Vec<ImageId>,
        dim: usize,
        features: Vec<f64>,
        mos: Vec<Option<f64>>,
        latent: Vec<Option<f64>>,
        split: Vec<Split>,
    ) -> Result<FeatureDataset> {
        let n = ids.len();
        if features.len() != n * dim || mos.len() != n || latent.len() != n || split.len() != n {
            return Err(CoreError::Shape(format!(
                "dataset field lengths disagree: n={n}, dim={dim}, features={}, mos={}, latent={}, split={}",
                features.len(),
                mos.len(),
                latent.len(),
                split.len()
            )));
        }
        let mut index = HashMap::with_capacity(n);
        for (i, id) in ids.iter().enumerate() {
            if index.insert(id.0.clone(), i).is_some() {
                return Err(CoreError::InvalidSignal {
                    id: id.0.clone(),
                    reason: "duplicate id in dataset".into(),
                });
            }
        }
        Ok(FeatureDataset {
            ids,
            dim,
            features,
            mos,
            latent,
            split,
            index,
            mos_reads: AtomicU64::new(0),
        })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn id(&self, i: usize) -> &ImageId {
        &self.ids[i]
    }

    pub fn ids(&self) -> &[ImageId] {
        &self.ids
    }

    pub fn index_of(&self, id: &ImageId) -> Option<usize> {
        self.index.get(id.as_str()).copied()
    }

    pub fn feature(&self, i: usize) -> &[f64] {
        &self.features[i * self.dim..(i + 1) * self.dim]
    }

    pub fn split_of(&self, i: usize) -> Split {
        self.split[i]
    }

    /// Row indices belonging to one split, in dataset order.
    pub fn split_indices(&self, split: Split) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.split[i] == split).collect()
    }

    /// Human label for row `i`. Counted: every call, hit or miss, increments
    /// the audit counter.
    pub fn mos(&self, i: usize) -> Option<f64> {
        self.mos_reads.fetch_add(1, Ordering::Relaxed);
        self.mos[i]
    }

    /// Uncounted label access for serialization only.
    pub(crate) fn mos_for_export(&self, i: usize) -> Option<f64> {
        self.mos[i]
    }

    /// Synthetic ground-truth quality, where present. Not a human label;
    /// used only for benchmark evaluation against the generator.
    pub fn latent(&self, i: usize) -> Option<f64> {
        self.latent[i]
    }

    /// How many times a human label has been read since construction.
    pub fn mos_read_count(&self) -> u64 {
        self.mos_reads.load(Ordering::Relaxed)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn init_shapes_and_determinism() {
        let p = Mlp::init(&[16, 1], 3).unwrap();
        assert_eq!(p.weights.len(), 1);
        assert_eq!(p.weights[0].len(), 16);
        assert_eq!(p.biases[0], vec![0.0]);
        let q = Mlp::init(&[16, 1], 3).unwrap();
        assert_eq!(p, q);
        let r = Mlp::init(&[16, 1], 4).unwrap();
        assert_ne!(p, r);

        let p = Mlp::init(&[16, 32, 1], 0).unwrap();
        assert_eq!(p.weights[0].len(), 16 * 32);
        assert_eq!(p.weights[1].len(), 32);
        let bound = (6.0_f64 / (16.0 + 32.0)).sqrt();
        assert!(p.weights[0].iter().all(|w| w.abs() < bound));

        assert!(Mlp::init(&[16], 0).is_err());
        assert!(Mlp::init(&[16, 2], 0).is_err());
        assert!(Mlp::init(&[0, 1], 0).is_err());
    }

    #[test]
    fn forward_trivial_cases() {
        let mut p = Mlp::init(&[3, 1], 0).unwrap();
        p.weights[0] = vec![0.0; 3];
        p.biases[0] = vec![0.0];
        assert_eq!(p.forward(&[4.0, -2.0, 7.0]).unwrap(), 0.0);

        p.weights[0] = vec![1.0, 0.0, 0.0];
        p.biases[0] = vec![0.5];
        assert_eq!(p.forward(&[1.0, 0.0, 0.0]).unwrap(), 1.5);

        assert!(p.forward(&[1.0, 2.0]).is_err());
    }

    /// A deliberately different evaluation of the same network: nested
    /// Vec matrices, column-wise accumulation.
    fn naive_forward(p: &Mlp, x: &[f64]) -> f64 {
        let mut a: Vec<f64> = x.to_vec();
        for l in 0..p.n_layers() {
            let n_in = p.layer_sizes[l];
            let n_out = p.layer_sizes[l + 1];
            let mut z = vec![0.0; n_out];
            for (j, &xj) in a.iter().enumerate() {
                for o in 0..n_out {
                    z[o] += p.weights[l][o * n_in + j] * xj;
                }
            }
            for o in 0..n_out {
                z[o] += p.biases[l][o];
            }
            a = if l + 1 < p.n_layers() {
                z.iter().map(|&v| gelu(v)).collect()
            } else {
                z
            };
        }
        a[0]
    }

    #[test]
    fn forward_matches_independent_evaluator() {
        let p = Mlp::init(&[16, 32, 1], 0).unwrap();
        let mut rng = crate::seed::stream_rng(0, "forward-check");
        for _ in 0..20 {
            let x: Vec<f64> = (0..16).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let a = p.forward(&x).unwrap();
            let b = naive_forward(&p, &x);
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
            assert_eq!(a, p.forward(&x).unwrap());
        }
    }

    #[test]
    fn backward_trivial_cases() {
        let p = Mlp::init(&[3, 1], 5).unwrap();
        let x = [0.5, -1.0, 2.0];
        let g = p.backward(&[&x], &[0.0]).unwrap();
        assert!(g.weights[0].iter().all(|&v| v == 0.0));
        assert!(g.biases[0].iter().all(|&v| v == 0.0));

        let g = p.backward(&[&x], &[2.0]).unwrap();
        for (gw, xi) in g.weights[0].iter().zip(x.iter()) {
            assert!((gw - 2.0 * xi).abs() < 1e-15);
        }
        assert!((g.biases[0][0] - 2.0).abs() < 1e-15);
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = crate::seed::stream_rng(9, "backward-fd");
        for _ in 0..5 {
            let mut p = Mlp::init(&[4, 6, 3, 1], rng.gen()).unwrap();
            let feats: Vec<Vec<f64>> = (0..3)
                .map(|_| (0..4).map(|_| rng.gen_range(-1.5..1.5)).collect())
                .collect();
            let views: Vec<&[f64]> = feats.iter().map(|f| f.as_slice()).collect();
            let ogs: Vec<f64> = (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let grads = p.backward(&views, &ogs).unwrap();

            let objective = |p: &Mlp| -> f64 {
                views
                    .iter()
                    .zip(ogs.iter())
                    .map(|(f, g)| g * p.forward(f).unwrap())
                    .sum()
            };
            let h = 1e-4;
            for l in 0..p.n_layers() {
                for i in 0..p.weights[l].len() {
                    let orig = p.weights[l][i];
                    p.weights[l][i] = orig + h;
                    let up = objective(&p);
                    p.weights[l][i] = orig - h;
                    let down = objective(&p);
                    p.weights[l][i] = orig;
                    let fd = (up - down) / (2.0 * h);
                    let a = grads.weights[l][i];
                    let rel = (a - fd).abs() / a.abs().max(fd.abs()).max(1e-2);
                    assert!(rel < 1e-4, "layer {l} weight {i}: {a} vs {fd}");
                }
                for i in 0..p.biases[l].len() {
                    let orig = p.biases[l][i];
                    p.biases[l][i] = orig + h;
                    let up = objective(&p);
                    p.biases[l][i] = orig - h;
                    let down = objective(&p);
                    p.biases[l][i] = orig;
                    let fd = (up - down) / (2.0 * h);
                    let a = grads.biases[l][i];
                    let rel = (a - fd).abs() / a.abs().max(fd.abs()).max(1e-2);
                    assert!(rel < 1e-4, "layer {l} bias {i}: {a} vs {fd}");
                }
            }
        }
    }

    #[test]
    fn adamw_trivial_and_oracle_steps() {
        let mut p = Mlp::init(&[2, 1], 0).unwrap();
        let zero = p.zero_grads();
        let before = p.clone();
        let mut opt = AdamW::new(
            &p,
            AdamWConfig {
                weight_decay: 0.0,
                ..AdamWConfig::stage1_default()
            },
        )
        .unwrap();
        opt.step(&mut p, &zero).unwrap();
        assert_eq!(p, before);
        assert_eq!(opt.step, 1);

        // Pure decay shrinks weights by (1 − lr·wd) and leaves biases alone.
        let cfg = AdamWConfig {
            lr: 0.1,
            weight_decay: 0.01,
            ..AdamWConfig::stage1_default()
        };
        let mut p = Mlp::init(&[2, 1], 1).unwrap();
        p.biases[0][0] = 0.7;
        let w0 = p.weights[0].clone();
        let mut opt = AdamW::new(&p, cfg).unwrap();
        let zg = p.zero_grads();
        opt.step(&mut p, &zg).unwrap();
        for (w, orig) in p.weights[0].iter().zip(w0.iter()) {
            assert!((w - orig * (1.0 - 0.1 * 0.01)).abs() < 1e-15);
        }
        assert_eq!(p.biases[0][0], 0.7);

        // Hand-evaluated single step on a scalar parameter.
        let mut p = Mlp {
            layer_sizes: vec![1, 1],
            weights: vec![vec![1.0]],
            biases: vec![vec![0.0]],
        };
        let cfg = AdamWConfig {
            lr: 0.1,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
        };
        let mut opt = AdamW::new(&p, cfg).unwrap();
        let grads = Grads {
            weights: vec![vec![1.0]],
            biases: vec![vec![0.0]],
        };
        opt.step(&mut p, &grads).unwrap();
        assert!((p.weights[0][0] - 0.9).abs() < 1e-6, "{}", p.weights[0][0]);

        let bad = Grads {
            weights: vec![vec![f64::NAN]],
            biases: vec![vec![0.0]],
        };
        assert!(matches!(
            opt.step(&mut p, &bad),
            Err(CoreError::TrainingDivergence { .. })
        ));
    }

    #[test]
    fn frozen_layers_stay_put() {
        let mut p = Mlp::init(&[3, 4, 1], 2).unwrap();
        let first_before = p.weights[0].clone();
        let mut opt = AdamW::new(&p, AdamWConfig::stage1_default()).unwrap();
        let mut grads = p.zero_grads();
        for g in grads.weights.iter_mut().flat_map(|w| w.iter_mut()) {
            *g = 0.3;
        }
        opt.step_layers(&mut p, &grads, 1).unwrap();
        assert_eq!(p.weights[0], first_before);
        assert_ne!(p.weights[1], vec![0.0; 4]);
    }

    #[test]
    fn linear_student_fits_linear_targets() {
        let mut rng = crate::seed::stream_rng(7, "convergence");
        let d = 4;
        let w_true: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let xs: Vec<Vec<f64>> = (0..64)
            .map(|_| (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect();
        let ys: Vec<f64> = xs
            .iter()
            .map(|x| x.iter().zip(w_true.iter()).map(|(a, b)| a * b).sum::<f64>() + 0.3)
            .collect();
        let views: Vec<&[f64]> = xs.iter().map(|x| x.as_slice()).collect();

        let mut p = Mlp::init(&[d, 1], 0).unwrap();
        let cfg = AdamWConfig {
            lr: 0.01,
            weight_decay: 0.0,
            ..AdamWConfig::stage1_default()
        };
        let mut opt = AdamW::new(&p, cfg).unwrap();
        let mut final_mse = f64::INFINITY;
        for _ in 0..2000 {
            let scores = p.forward_batch(&views).unwrap();
            let loss = crate::losses::mse_loss(&scores, &ys).unwrap();
            final_mse = loss.value;
            if final_mse < 1e-4 {
                break;
            }
            let grads = p.backward(&views, &loss.score_grads).unwrap();
            opt.step(&mut p, &grads).unwrap();
        }
        assert!(final_mse < 1e-3, "did not converge: {final_mse}");
    }

    #[test]
    fn dataset_contract_and_label_counter() {
        let ids: Vec<ImageId> = (0..4).map(|i| ImageId(format!("im{i}"))).collect();
        let ds = FeatureDataset::new(
            ids.clone(),
            2,
            vec![0.0, 1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0],
            vec![Some(1.0), None, Some(3.0), None],
            vec![None; 4],
            vec![Split::Train, Split::Train, Split::Val, Split::Test],
        )
        .unwrap();
        assert_eq!(ds.len(), 4);
        assert_eq!(ds.feature(1), &[2.0, 3.0]);
        assert_eq!(ds.split_indices(Split::Train), vec![0, 1]);
        assert_eq!(ds.index_of(&ImageId::from("im2")), Some(2));
        assert_eq!(ds.mos_read_count(), 0);
        assert_eq!(ds.mos(0), Some(1.0));
        assert_eq!(ds.mos(1), None);
        assert_eq!(ds.mos_read_count(), 2);

        let dup = FeatureDataset::new(
            vec![ImageId::from("a"), ImageId::from("a")],
            1,
            vec![0.0, 1.0],
            vec![None, None],
            vec![None, None],
            vec![Split::Train, Split::Train],
        );
        assert!(dup.is_err());
    }

    #[test]
    fn checkpoint_roundtrip_is_value_exact() {
        let p = Mlp::init(&[5, 8, 1], 123).unwrap();
        let opt = AdamW::new(&p, AdamWConfig::stage1_default()).unwrap();
        let json = serde_json::to_string(&(&p, &opt)).unwrap();
        let (p2, opt2): (Mlp, AdamW) = serde_json::from_str(&json).unwrap();
        assert_eq!(p, p2);
        assert_eq!(opt, opt2);
    }
}
