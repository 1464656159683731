//! Teacher signal processing: point-wise soft scores and pair-wise
//! preferences with confidence weights.
//!
//! A teacher exposes log-likelihoods rather than hard answers. For a single
//! image we read the log-likelihoods of the five quality words and take the
//! expectation of their ordinal values under the softmax; for a pair we read
//! the log-likelihoods of the two decision tokens and derive a hard
//! preference plus a confidence weight from the binary entropy.

use crate::error::{CoreError, Result};
use crate::seed;
use crate::ImageId;
use rand::Rng;
use serde::{Deserialize, Serialize};

/// The five quality levels a teacher rates with, ordered best to worst.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum QualityToken {
    Excellent,
    Good,
    Fair,
    Poor,
    Bad,
}

impl QualityToken {
    /// Canonical order used everywhere a 5-vector is indexed.
    pub const ALL: [QualityToken; 5] = [
        QualityToken::Excellent,
        QualityToken::Good,
        QualityToken::Fair,
        QualityToken::Poor,
        QualityToken::Bad,
    ];

    /// Ordinal score of the level: Excellent = 5 down to Bad = 1.
    pub fn value(self) -> f64 {
        match self {
            QualityToken::Excellent => 5.0,
            QualityToken::Good => 4.0,
            QualityToken::Fair => 3.0,
            QualityToken::Poor => 2.0,
            QualityToken::Bad => 1.0,
        }
    }

    pub fn word(self) -> &'static str {
        match self {
            QualityToken::Excellent => "Excellent",
            QualityToken::Good => "Good",
            QualityToken::Fair => "Fair",
            QualityToken::Poor => "Poor",
            QualityToken::Bad => "Bad",
        }
    }

    /// Case-insensitive match against a token string, tolerating leading or
    /// trailing whitespace as emitted by subword tokenizers.
    pub fn parse_token(s: &str) -> Option<QualityToken> {
        let t = s.trim();
        Self::ALL
            .into_iter()
            .find(|k| k.word().eq_ignore_ascii_case(t))
    }
}

/// A teacher's point-wise judgment of one image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TeacherPointSignal {
    pub image_id: ImageId,
    /// Log-likelihoods of the five quality words, canonical order.
    pub logits: [f64; 5],
    /// Softmax of `logits`.
    pub probs: [f64; 5],
    /// Expected ordinal value under `probs`, in [1, 5].
    pub soft_score: f64,
}

impl TeacherPointSignal {
    pub fn from_logits(image_id: ImageId, logits: [f64; 5]) -> Result<Self> {
        let probs = point_probs_for(&image_id, logits)?;
        let soft_score = point_score(&probs)?;
        Ok(TeacherPointSignal {
            image_id,
            logits,
            probs,
            soft_score,
        })
    }
}

/// One pair-wise supervision tuple: ids, raw decision logits, and the
/// derived preference label and confidence weight.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SupervisionPair {
    pub a: ImageId,
    pub b: ImageId,
    pub logit_a: f64,
    pub logit_b: f64,
    /// Probability that the teacher prefers `a`; `p_b = 1 - p_a`.
    pub p_a: f64,
    /// Hard preference: 1 iff `p_a >= 0.5`.
    pub t: u8,
    /// Confidence weight in [0, 1]; 0 at a coin flip, 1 at certainty.
    pub omega: f64,
}

impl SupervisionPair {
    pub fn from_logits(a: ImageId, b: ImageId, logit_a: f64, logit_b: f64) -> Result<Self> {
        if a == b {
            return Err(CoreError::InvalidSignal {
                id: a.0,
                reason: "pair references the same image twice".into(),
            });
        }
        let (p_a, _p_b) = pair_probs_for(&a, logit_a, logit_b)?;
        let t = pair_label(p_a)?;
        let omega = pair_confidence(p_a)?;
        Ok(SupervisionPair {
            a,
            b,
            logit_a,
            logit_b,
            p_a,
            t,
            omega,
        })
    }

    pub fn p_b(&self) -> f64 {
        1.0 - self.p_a
    }
}

/// Softmax over the five quality-word log-likelihoods, stabilized by
/// max-subtraction so magnitudes up to ±1e4 stay finite.
pub fn point_probs(logits: [f64; 5]) -> Result<[f64; 5]> {
    point_probs_for(&ImageId::from("<unnamed>"), logits)
}

fn point_probs_for(id: &ImageId, logits: [f64; 5]) -> Result<[f64; 5]> {
    if logits.iter().any(|l| !l.is_finite()) {
        return Err(CoreError::InvalidSignal {
            id: id.0.clone(),
            reason: format!("non-finite point logits {logits:?}"),
        });
    }
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut probs = [0.0; 5];
    let mut sum = 0.0;
    for (p, l) in probs.iter_mut().zip(logits.iter()) {
        *p = (l - m).exp();
        sum += *p;
    }
    for p in &mut probs {
        *p /= sum;
    }
    Ok(probs)
}

/// Expected ordinal value `sum v_k p_k` with v = (5,4,3,2,1); lands in [1, 5].
pub fn point_score(probs: &[f64; 5]) -> Result<f64> {
    let sum: f64 = probs.iter().sum();
    if probs.iter().any(|p| !p.is_finite() || *p < 0.0) || (sum - 1.0).abs() > 1e-6 {
        return Err(CoreError::InvalidSignal {
            id: "<probs>".into(),
            reason: format!("not a probability vector: {probs:?}"),
        });
    }
    Ok(QualityToken::ALL
        .iter()
        .zip(probs.iter())
        .map(|(k, p)| k.value() * p)
        .sum())
}

/// Two-way softmax of the decision logits: `p_a = sigma(l_a - l_b)`.
pub fn pair_probs(l_a: f64, l_b: f64) -> Result<(f64, f64)> {
    pair_probs_for(&ImageId::from("<unnamed>"), l_a, l_b)
}

fn pair_probs_for(id: &ImageId, l_a: f64, l_b: f64) -> Result<(f64, f64)> {
    if !l_a.is_finite() || !l_b.is_finite() {
        return Err(CoreError::InvalidSignal {
            id: id.0.clone(),
            reason: format!("non-finite pair logits ({l_a}, {l_b})"),
        });
    }
    let p_a = sigmoid(l_a - l_b);
    Ok((p_a, 1.0 - p_a))
}

pub(crate) fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Hard preference label: 1 if `p_a >= 0.5` else 0. The tie goes to A.
pub fn pair_label(p_a: f64) -> Result<u8> {
    check_prob(p_a)?;
    Ok(if p_a >= 0.5 { 1 } else { 0 })
}

/// Confidence weight: one minus the normalized binary entropy,
/// `1 - H(p)/ln 2` with `H` in nats and `0 ln 0 = 0`.
pub fn pair_confidence(p_a: f64) -> Result<f64> {
    check_prob(p_a)?;
    let h = binary_entropy(p_a);
    // Clamp tiny negative excursions from the division.
    Ok((1.0 - h / std::f64::consts::LN_2).clamp(0.0, 1.0))
}

fn binary_entropy(p: f64) -> f64 {
    let term = |x: f64| if x == 0.0 { 0.0 } else { -x * x.ln() };
    term(p) + term(1.0 - p)
}

fn check_prob(p: f64) -> Result<()> {
    if !p.is_finite() || !(0.0..=1.0).contains(&p) {
        return Err(CoreError::InvalidSignal {
            id: "<prob>".into(),
            reason: format!("probability {p} outside [0, 1]"),
        });
    }
    Ok(())
}

/// Draw `count` ordered pairs uniformly i.i.d. from `ids`, rejecting and
/// redrawing self-pairs. Duplicates across draws are permitted. The first
/// element of each pair is presented to the teacher as option A.
pub fn sample_pairs(ids: &[ImageId], count: usize, seed: u64) -> Result<Vec<(ImageId, ImageId)>> {
    if ids.len() < 2 {
        return Err(CoreError::InsufficientData(format!(
            "pair sampling needs at least 2 ids, got {}",
            ids.len()
        )));
    }
    let mut rng = seed::stream_rng(seed, "pair-sampling");
    let mut pairs = Vec::with_capacity(count);
    while pairs.len() < count {
        let i = rng.gen_range(0..ids.len());
        let j = rng.gen_range(0..ids.len());
        if i == j {
            continue;
        }
        pairs.push((ids[i].clone(), ids[j].clone()));
    }
    Ok(pairs)
}

/// Retain pairs whose confidence meets the threshold, preserving order.
pub fn filter_pairs(pairs: &[SupervisionPair], tau: f64) -> Result<Vec<SupervisionPair>> {
    if !(0.0..=1.0).contains(&tau) {
        return Err(CoreError::Config(format!("tau {tau} outside [0, 1]")));
    }
    Ok(pairs.iter().filter(|p| p.omega >= tau).cloned().collect())
}

/// Drop repeated (a, b) tuples, keeping the first occurrence of each.
pub fn dedup_pairs(pairs: Vec<(ImageId, ImageId)>) -> Vec<(ImageId, ImageId)> {
    let mut seen = std::collections::HashSet::new();
    pairs
        .into_iter()
        .filter(|p| seen.insert((p.0.clone(), p.1.clone())))
        .collect()
}
