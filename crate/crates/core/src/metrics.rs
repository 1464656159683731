//! Evaluation statistics: rank correlation, linear correlation, and
//! residual summaries over held-out splits.

use crate::error::{CoreError, Result};
use serde::{Deserialize, Serialize};

/// Summary of a model's predictions against labels on one split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub srcc: f64,
    pub plcc: f64,
    pub mean_residual: f64,
    pub mae: f64,
    pub rmse: f64,
    pub n: usize,
}

impl EvalReport {
    /// Compute all statistics for `pred` against `label`.
    pub fn compute(pred: &[f64], label: &[f64]) -> Result<EvalReport> {
        let (mean_residual, mae, rmse) = residual_stats(pred, label)?;
        Ok(EvalReport {
            srcc: srcc(pred, label)?,
            plcc: plcc(pred, label)?,
            mean_residual,
            mae,
            rmse,
            n: pred.len(),
        })
    }
}

fn check_paired(x: &[f64], y: &[f64], min_len: usize) -> Result<()> {
    if x.len() != y.len() {
        return Err(CoreError::Shape(format!(
            "paired vectors differ in length: {} vs {}",
            x.len(),
            y.len()
        )));
    }
    if x.len() < min_len {
        return Err(CoreError::InsufficientData(format!(
            "need at least {min_len} paired values, got {}",
            x.len()
        )));
    }
    if x.iter().chain(y.iter()).any(|v| !v.is_finite()) {
        return Err(CoreError::InvalidSignal {
            id: "<metric input>".into(),
            reason: "non-finite value in metric input".into(),
        });
    }
    Ok(())
}

/// Average (fractional) ranks, 1-based: ties share the mean of the rank
/// block they occupy.
pub fn average_ranks(x: &[f64]) -> Vec<f64> {
    let n = x.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| x[i].partial_cmp(&x[j]).expect("finite values"));
    let mut ranks = vec![0.0; n];
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && x[order[j + 1]] == x[order[i]] {
            j += 1;
        }
        // Positions i..=j (0-based) share the average of ranks i+1..=j+1.
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &idx in &order[i..=j] {
            ranks[idx] = avg;
        }
        i = j + 1;
    }
    ranks
}

fn pearson_raw(x: &[f64], y: &[f64]) -> Result<f64> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (a, b) in x.iter().zip(y.iter()) {
        let dx = a - mx;
        let dy = b - my;
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(CoreError::DegenerateMetric(
            "correlation undefined for a constant vector".into(),
        ));
    }
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// Spearman rank correlation: Pearson over average ranks.
pub fn srcc(x: &[f64], y: &[f64]) -> Result<f64> {
    check_paired(x, y, 2)?;
    pearson_raw(&average_ranks(x), &average_ranks(y))
}

/// Pearson linear correlation.
pub fn plcc(x: &[f64], y: &[f64]) -> Result<f64> {
    check_paired(x, y, 2)?;
    pearson_raw(x, y)
}

/// Mean residual (pred − label), mean absolute residual, and root mean
/// square residual.
pub fn residual_stats(pred: &[f64], label: &[f64]) -> Result<(f64, f64, f64)> {
    if pred.is_empty() && label.is_empty() {
        return Err(CoreError::EmptyBatch("residual stats over no samples".into()));
    }
    check_paired(pred, label, 1)?;
    let n = pred.len() as f64;
    let mut sum = 0.0;
    let mut abs = 0.0;
    let mut sq = 0.0;
    for (p, l) in pred.iter().zip(label.iter()) {
        let r = p - l;
        sum += r;
        abs += r.abs();
        sq += r * r;
    }
    Ok((sum / n, abs / n, (sq / n).sqrt()))
}

/// Pearson correlation after fitting a monotone logistic-plus-linear map
/// from predictions to labels, for comparability with evaluation protocols
/// that remap scores before correlating. Not used by default anywhere.
///
/// The map is `u(x) = b1·(0.5 − 1/(1 + exp(b2·(x − b3)))) + b4·x + b5`,
/// fit by Adam on mean squared error from a data-driven start.
pub fn plcc_logistic(pred: &[f64], label: &[f64]) -> Result<f64> {
    check_paired(pred, label, 2)?;
    let raw = pearson_raw(pred, label)?;
    let n = pred.len() as f64;
    let lmin = label.iter().cloned().fold(f64::INFINITY, f64::min);
    let lmax = label.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let pmean = pred.iter().sum::<f64>() / n;
    let pstd = (pred.iter().map(|p| (p - pmean).powi(2)).sum::<f64>() / n).sqrt();
    // b = (b1, b2, b3, b4, b5); slope sign follows the raw correlation.
    let mut b = [lmax - lmin, raw.signum() / pstd.max(1e-6), pmean, 0.0, (lmin + lmax) / 2.0];
    let mut m = [0.0; 5];
    let mut v = [0.0; 5];
    let (beta1, beta2, eps, lr) = (0.9, 0.999, 1e-8, 0.05);
    for step in 0..2000 {
        let mut grad = [0.0; 5];
        for (x, y) in pred.iter().zip(label.iter()) {
            let z = b[1] * (x - b[2]);
            let s = crate::signals::sigmoid(z);
            let u = b[0] * (0.5 - s) + b[3] * x + b[4];
            let e = 2.0 * (u - y) / n;
            let ds = s * (1.0 - s); // d sigma / dz
            grad[0] += e * (0.5 - s);
            grad[1] += e * (-b[0] * ds * (x - b[2]));
            grad[2] += e * (b[0] * ds * b[1]);
            grad[3] += e * x;
            grad[4] += e;
        }
        let t = (step + 1) as f64;
        for k in 0..5 {
            m[k] = beta1 * m[k] + (1.0 - beta1) * grad[k];
            v[k] = beta2 * v[k] + (1.0 - beta2) * grad[k] * grad[k];
            let mh = m[k] / (1.0 - beta1.powf(t));
            let vh = v[k] / (1.0 - beta2.powf(t));
            b[k] -= lr * mh / (vh.sqrt() + eps);
        }
    }
    let mapped: Vec<f64> = pred
        .iter()
        .map(|x| {
            let s = crate::signals::sigmoid(b[1] * (x - b[2]));
            b[0] * (0.5 - s) + b[3] * x + b[4]
        })
        .collect();
    match pearson_raw(&mapped, label) {
        Ok(r) => Ok(r),
        // A collapsed fit falls back to the raw correlation.
        Err(CoreError::DegenerateMetric(_)) => Ok(raw),
        Err(e) => Err(e),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    #[test]
    fn srcc_monotone_invariance() {
        let x: Vec<f64> = (1..=10).map(|i| i as f64).collect();
        let y: Vec<f64> = x.iter().map(|v| v.powi(3)).collect();
        assert!((srcc(&x, &y).unwrap() - 1.0).abs() < 1e-12);
        let rev: Vec<f64> = x.iter().rev().cloned().collect();
        assert!((srcc(&x, &rev).unwrap() + 1.0).abs() < 1e-12);
    }

    #[test]
    fn srcc_small_example() {
        let x = [1.0, 2.0, 3.0, 4.0];
        let y = [1.0, 3.0, 2.0, 4.0];
        assert!((srcc(&x, &y).unwrap() - 0.8).abs() < 1e-12);
    }

    #[test]
    fn srcc_handles_ties_with_average_ranks() {
        let r = average_ranks(&[10.0, 20.0, 20.0, 30.0]);
        assert_eq!(r, vec![1.0, 2.5, 2.5, 4.0]);
        let r = average_ranks(&[5.0, 5.0, 5.0]);
        assert_eq!(r, vec![2.0, 2.0, 2.0]);
    }

    #[test]
    fn srcc_errors() {
        assert!(matches!(
            srcc(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]),
            Err(CoreError::DegenerateMetric(_))
        ));
        assert!(srcc(&[1.0], &[1.0]).is_err());
        assert!(srcc(&[1.0, 2.0], &[1.0, 2.0, 3.0]).is_err());
    }

    #[test]
    fn plcc_examples() {
        let x = [1.0, 2.0, 3.0];
        let y: Vec<f64> = x.iter().map(|v| 2.0 * v + 3.0).collect();
        assert!((plcc(&x, &y).unwrap() - 1.0).abs() < 1e-12);
        let y2 = [1.0, 2.0, 4.0];
        assert!((plcc(&x, &y2).unwrap() - 0.981981).abs() < 1e-5);
        assert!((plcc(&x, &y2).unwrap() - plcc(&y2, &x).unwrap()).abs() < 1e-15);
        assert!(plcc(&[2.0, 2.0], &[1.0, 3.0]).is_err());
    }

    #[test]
    fn residual_stats_examples() {
        let (m, a, r) = residual_stats(&[1.0, 2.0], &[1.0, 2.0]).unwrap();
        assert_eq!((m, a, r), (0.0, 0.0, 0.0));
        let (m, a, r) = residual_stats(&[2.0, 3.0], &[1.0, 2.0]).unwrap();
        assert!((m - 1.0).abs() < 1e-15 && (a - 1.0).abs() < 1e-15 && (r - 1.0).abs() < 1e-15);
        let (m, a, r) = residual_stats(&[0.0, 2.0], &[1.0, 1.0]).unwrap();
        assert!(m.abs() < 1e-15 && (a - 1.0).abs() < 1e-15 && (r - 1.0).abs() < 1e-15);
        assert!(matches!(
            residual_stats(&[], &[]),
            Err(CoreError::EmptyBatch(_))
        ));
    }

    /// Brute-force rank assignment straight from the definition.
    fn brute_ranks(x: &[f64]) -> Vec<f64> {
        x.iter()
            .map(|&xi| {
                let below = x.iter().filter(|&&xj| xj < xi).count() as f64;
                let equal = x.iter().filter(|&&xj| xj == xi).count() as f64;
                1.0 + below + (equal - 1.0) / 2.0
            })
            .collect()
    }

    #[test]
    fn srcc_matches_brute_force_oracle() {
        let mut rng = crate::seed::stream_rng(42, "metric-oracle");
        for case in 0..200 {
            let n = rng.gen_range(2..40);
            // Mix continuous and heavily tied vectors.
            let gen = |rng: &mut rand_chacha::ChaCha8Rng| -> Vec<f64> {
                (0..n)
                    .map(|_| {
                        if rng.gen_bool(0.4) {
                            rng.gen_range(0..4) as f64
                        } else {
                            rng.gen_range(-5.0..5.0)
                        }
                    })
                    .collect()
            };
            let x = gen(&mut rng);
            let y = gen(&mut rng);
            let ours = srcc(&x, &y);
            let brute = pearson_raw(&brute_ranks(&x), &brute_ranks(&y));
            match (ours, brute) {
                (Ok(a), Ok(b)) => assert!((a - b).abs() < 1e-9, "case {case}: {a} vs {b}"),
                (Err(_), Err(_)) => {}
                (a, b) => panic!("case {case}: disagree on degeneracy: {a:?} vs {b:?}"),
            }
        }
    }

    #[test]
    fn eval_report_serializes_with_fixed_names() {
        let rep = EvalReport::compute(&[1.0, 2.0, 3.5], &[1.0, 2.0, 3.0]).unwrap();
        let j: serde_json::Value = serde_json::from_str(&serde_json::to_string(&rep).unwrap()).unwrap();
        for key in ["srcc", "plcc", "mean_residual", "mae", "rmse", "n"] {
            assert!(j.get(key).is_some(), "missing field {key}");
        }
        assert_eq!(j["n"], 3);
    }

    #[test]
    fn logistic_plcc_straightens_a_monotone_bend() {
        let mut rng = crate::seed::stream_rng(3, "logistic");
        let x: Vec<f64> = (0..200).map(|_| rng.gen_range(1.0..5.0)).collect();
        // Labels follow a compressive bend of x plus small noise.
        let y: Vec<f64> = x
            .iter()
            .map(|&v| 1.0 + 4.0 * (((v - 1.0) / 4.0) as f64).sqrt() + rng.gen_range(-0.05..0.05))
            .collect();
        let raw = plcc(&x, &y).unwrap();
        let fit = plcc_logistic(&x, &y).unwrap();
        assert!(fit > raw, "fit {fit} should beat raw {raw}");
        assert!(fit > 0.99, "fit {fit}");
        // Affine data is already linear; the iterative fit may leave a
        // microscopic bend but must stay essentially perfect.
        let y2: Vec<f64> = x.iter().map(|v| 0.5 * v + 1.0).collect();
        let fit2 = plcc_logistic(&x, &y2).unwrap();
        assert!(fit2 > 0.9999, "affine data degraded to {fit2}");
    }

    proptest! {
        #[test]
        fn correlations_bounded(xs in proptest::collection::vec(-1e3f64..1e3, 2..50),
                                ys in proptest::collection::vec(-1e3f64..1e3, 2..50)) {
            let n = xs.len().min(ys.len());
            let (x, y) = (&xs[..n], &ys[..n]);
            if let Ok(r) = srcc(x, y) {
                prop_assert!(r.abs() <= 1.0 + 1e-12);
            }
            if let Ok(r) = plcc(x, y) {
                prop_assert!(r.abs() <= 1.0 + 1e-12);
            }
        }

        #[test]
        fn srcc_invariant_under_increasing_transform(
            xs in proptest::collection::vec(-50f64..50.0, 3..30),
            ys in proptest::collection::vec(-50f64..50.0, 3..30),
        ) {
            let n = xs.len().min(ys.len());
            let (x, y) = (&xs[..n], &ys[..n]);
            let tx: Vec<f64> = x.iter().map(|v| v.exp() + 3.0 * v).collect();
            if let (Ok(a), Ok(b)) = (srcc(x, y), srcc(&tx, y)) {
                prop_assert!((a - b).abs() < 1e-12);
            }
        }

        #[test]
        fn plcc_invariant_under_positive_affine(
            xs in proptest::collection::vec(-50f64..50.0, 3..30),
            ys in proptest::collection::vec(-50f64..50.0, 3..30),
            scale in 0.01f64..100.0,
            shift in -100f64..100.0,
        ) {
            let n = xs.len().min(ys.len());
            let (x, y) = (&xs[..n], &ys[..n]);
            let tx: Vec<f64> = x.iter().map(|v| scale * v + shift).collect();
            if let (Ok(a), Ok(b)) = (plcc(x, y), plcc(&tx, y)) {
                prop_assert!((a - b).abs() < 1e-9);
            }
        }
    }
}
