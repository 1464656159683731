//! Release gate: one test per shipping criterion, each printing a
//! `ACCEPTANCE C<n> ...: PASS` line (visible with `--nocapture`). The
//! criteria cover exact equation oracles, gradient checks, metric
//! equivalence, the calibration story, label-efficiency and ablation
//! orderings, stage-1 label isolation, sweep determinism, and harvester
//! robustness.

use std::path::Path;
use std::time::Duration;

use qdistill_core::ablation::{run_ablation, AblationMode};
use qdistill_core::losses::{
    calib_loss, distill_loss, mse_loss, plcc_loss, rank_loss, reg_loss, smooth_l1,
};
use qdistill_core::metrics::{plcc, srcc};
use qdistill_core::pipeline::{
    affine_calibrate, calib_split, run_seeded_repeats, run_stage1, split_mos_budget,
    CheckpointMode, HoldoutLabels, TrainConfig,
};
use qdistill_core::signals::{
    filter_pairs, pair_confidence, pair_probs, point_probs, point_score, SupervisionPair,
};
use qdistill_core::student::{Mlp, Split};
use qdistill_core::synth::{make_benchmark, SynthConfig};
use qdistill_core::ImageId;
use qdistill_teacher::client::MockTransport;
use qdistill_teacher::extract::extract_point_logits;
use qdistill_teacher::harvest::{harvest, HarvestConfig, RetryPolicy};
use qdistill_teacher::template::PromptTemplates;

/// Tiny deterministic generator (SplitMix64) so the suite needs no RNG
/// dependency of its own.
struct Gen(u64);

impl Gen {
    fn next_u64(&mut self) -> u64 {
        self.0 = self.0.wrapping_add(0x9e3779b97f4a7c15);
        let mut z = self.0;
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
        z ^ (z >> 31)
    }

    /// Uniform in [0, 1).
    fn unit(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 / (1u64 << 53) as f64
    }

    fn range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.unit()
    }
}

fn ids(n: usize) -> Vec<ImageId> {
    (0..n).map(|i| ImageId(format!("img_{i:03}"))).collect()
}

#[test]
fn c1_equation_oracles() {
    // Point-wise judgment: softmax over quality-word logits, expectation
    // over the ordinal values 5..1.
    let p = point_probs([2.0, 1.0, 0.0, -1.0, -2.0]).unwrap();
    assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    assert!((point_score(&p).unwrap() - 4.451940).abs() < 1e-5);
    assert!((point_score(&[0.2; 5]).unwrap() - 3.0).abs() < 1e-12);

    // Pair-wise preference probabilities.
    let (pa, pb) = pair_probs(-0.3, -1.5).unwrap();
    assert!((pa - 0.768525).abs() < 1e-6);
    assert!((pb - 0.231475).abs() < 1e-6);
    assert!((pa + pb - 1.0).abs() < 1e-12);

    // Confidence: 0 at a coin flip, 1 at certainty.
    assert!(pair_confidence(0.5).unwrap().abs() < 1e-12);
    assert!((pair_confidence(1.0).unwrap() - 1.0).abs() < 1e-12);
    assert!((pair_confidence(0.0).unwrap() - 1.0).abs() < 1e-12);
    assert!((pair_confidence(0.9).unwrap() - 0.531004).abs() < 1e-5);

    // tau-filter keeps only pairs at or above the confidence threshold.
    let names = ids(6);
    let mut pairs: Vec<SupervisionPair> = (0..3)
        .map(|i| {
            SupervisionPair::from_logits(names[2 * i].clone(), names[2 * i + 1].clone(), 1.0, 0.0)
                .unwrap()
        })
        .collect();
    pairs[0].omega = 0.0;
    pairs[1].omega = 0.1600;
    pairs[2].omega = 0.5310;
    let kept = filter_pairs(&pairs, 0.2).unwrap();
    assert_eq!(kept.len(), 1);
    assert!((kept[0].omega - 0.5310).abs() < 1e-12);

    // Losses.
    let l = smooth_l1(1.5, 1.0, 1.0).unwrap();
    assert!((l.value - 0.125).abs() < 1e-12);
    assert!((l.score_grads[0] - 0.5).abs() < 1e-12);
    assert!((reg_loss(&[3.0], &[1.0], 1.0).unwrap().value - 1.5).abs() < 1e-12);

    let two = ids(2);
    let mut certain = SupervisionPair::from_logits(two[0].clone(), two[1].clone(), 50.0, 0.0).unwrap();
    certain.omega = 1.0;
    let l = rank_loss(&two, &[4.0, 3.0], &[certain.clone()]).unwrap();
    assert!((l.value - 0.313262).abs() < 1e-6);

    let l = distill_loss(&two, &[3.0, 2.0], &[1.0, 2.0], &[certain], 0.5, 1.0).unwrap();
    assert!((l.value - 0.906631).abs() < 1e-5);

    assert!((mse_loss(&[1.0, 2.0], &[2.0, 4.0]).unwrap().value - 2.5).abs() < 1e-12);
    let l = plcc_loss(&[1.0, 2.0, 3.0], &[1.0, 2.0, 4.0]).unwrap();
    assert!((l.value - 0.018019).abs() < 1e-5);
    let l = calib_loss(&[1.0, 2.0, 3.0], &[1.0, 2.0, 4.0], 1.0).unwrap();
    assert!((l.value - 0.351352).abs() < 1e-4);

    println!("ACCEPTANCE C1 equation oracles: PASS");
}

#[test]
fn c2_gradients_match_finite_differences() {
    // Every loss, composed through the student network, against central
    // finite differences on every parameter, 20 random instances each.
    let dim = 4;
    let batch = 5;
    let h = 1e-4;
    // Near-zero gradients drown in truncation noise under a pure relative
    // test, so the denominator is floored (an absolute 1e-6 bound there).
    let check = |a: f64, fd: f64, what: &str| {
        let rel = (a - fd).abs() / a.abs().max(fd.abs()).max(1e-2);
        assert!(rel < 1e-4, "{what}: analytic {a} vs fd {fd}");
    };

    let losses: Vec<(&str, Box<dyn Fn(&[ImageId], &[f64], &Instance) -> f64>)> = vec![
        ("reg", Box::new(|_, s, inst| reg_loss(s, &inst.teacher, 1.0).unwrap().value)),
        ("rank", Box::new(|n, s, inst| rank_loss(n, s, &inst.pairs).unwrap().value)),
        (
            "distill",
            Box::new(|n, s, inst| {
                distill_loss(n, s, &inst.teacher, &inst.pairs, 0.5, 1.0).unwrap().value
            }),
        ),
        ("mse", Box::new(|_, s, inst| mse_loss(s, &inst.labels).unwrap().value)),
        ("plcc", Box::new(|_, s, inst| plcc_loss(s, &inst.labels).unwrap().value)),
        ("calib", Box::new(|_, s, inst| calib_loss(s, &inst.labels, 1.0).unwrap().value)),
    ];

    struct Instance {
        teacher: Vec<f64>,
        labels: Vec<f64>,
        pairs: Vec<SupervisionPair>,
    }

    let names = ids(batch);
    let mut gen = Gen(42);
    for (loss_name, loss_of_scores) in &losses {
        for instance in 0..20 {
            let mut mlp = Mlp::init(&[dim, 6, 3, 1], gen.next_u64()).unwrap();
            let feats: Vec<Vec<f64>> = (0..batch)
                .map(|_| (0..dim).map(|_| gen.range(-1.5, 1.5)).collect())
                .collect();
            let inst = Instance {
                teacher: (0..batch).map(|_| gen.range(1.0, 5.0)).collect(),
                labels: (0..batch).map(|_| gen.range(1.0, 5.0)).collect(),
                pairs: (0..3)
                    .map(|i| {
                        SupervisionPair::from_logits(
                            names[i].clone(),
                            names[i + 2].clone(),
                            gen.range(-2.0, 2.0),
                            gen.range(-2.0, 2.0),
                        )
                        .unwrap()
                    })
                    .collect(),
            };

            // Analytic: loss grads w.r.t. scores, chained through backward.
            let views: Vec<&[f64]> = feats.iter().map(|f| f.as_slice()).collect();
            let scores = mlp.forward_batch(&views).unwrap();
            let score_grads = match *loss_name {
                "reg" => reg_loss(&scores, &inst.teacher, 1.0).unwrap().score_grads,
                "rank" => rank_loss(&names, &scores, &inst.pairs).unwrap().score_grads,
                "distill" => {
                    distill_loss(&names, &scores, &inst.teacher, &inst.pairs, 0.5, 1.0)
                        .unwrap()
                        .score_grads
                }
                "mse" => mse_loss(&scores, &inst.labels).unwrap().score_grads,
                "plcc" => plcc_loss(&scores, &inst.labels).unwrap().score_grads,
                "calib" => calib_loss(&scores, &inst.labels, 1.0).unwrap().score_grads,
                _ => unreachable!(),
            };
            let grads = mlp.backward(&views, &score_grads).unwrap();

            let eval = |mlp: &Mlp| -> f64 {
                let scores = mlp.forward_batch(&views).unwrap();
                loss_of_scores(&names, &scores, &inst)
            };
            for l in 0..mlp.n_layers() {
                for i in 0..mlp.weights[l].len() {
                    let orig = mlp.weights[l][i];
                    mlp.weights[l][i] = orig + h;
                    let up = eval(&mlp);
                    mlp.weights[l][i] = orig - h;
                    let down = eval(&mlp);
                    mlp.weights[l][i] = orig;
                    check(
                        grads.weights[l][i],
                        (up - down) / (2.0 * h),
                        &format!("{loss_name} instance {instance} layer {l} weight {i}"),
                    );
                }
                for i in 0..mlp.biases[l].len() {
                    let orig = mlp.biases[l][i];
                    mlp.biases[l][i] = orig + h;
                    let up = eval(&mlp);
                    mlp.biases[l][i] = orig - h;
                    let down = eval(&mlp);
                    mlp.biases[l][i] = orig;
                    check(
                        grads.biases[l][i],
                        (up - down) / (2.0 * h),
                        &format!("{loss_name} instance {instance} layer {l} bias {i}"),
                    );
                }
            }
        }
    }
    println!("ACCEPTANCE C2 gradient finite-difference suite: PASS");
}

#[test]
fn c3_metrics_match_brute_force_and_invariances() {
    // Reference implementations, written as directly as possible.
    fn brute_ranks(x: &[f64]) -> Vec<f64> {
        let mut order: Vec<usize> = (0..x.len()).collect();
        order.sort_by(|&i, &j| x[i].partial_cmp(&x[j]).unwrap());
        let mut ranks = vec![0.0; x.len()];
        let mut i = 0;
        while i < order.len() {
            let mut j = i;
            while j + 1 < order.len() && x[order[j + 1]] == x[order[i]] {
                j += 1;
            }
            let avg = (i + j) as f64 / 2.0 + 1.0;
            for &k in &order[i..=j] {
                ranks[k] = avg;
            }
            i = j + 1;
        }
        ranks
    }
    fn brute_pearson(x: &[f64], y: &[f64]) -> f64 {
        let n = x.len() as f64;
        let mx = x.iter().sum::<f64>() / n;
        let my = y.iter().sum::<f64>() / n;
        let cov: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
        let vx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
        let vy: f64 = y.iter().map(|b| (b - my) * (b - my)).sum();
        cov / (vx.sqrt() * vy.sqrt())
    }

    let mut gen = Gen(7);
    let mut checked = 0;
    while checked < 200 {
        let n = 3 + (gen.next_u64() % 38) as usize;
        // Even-indexed draws quantize to provoke ties.
        let draw = |g: &mut Gen, quantize: bool| -> Vec<f64> {
            (0..n)
                .map(|_| {
                    let v = g.range(-5.0, 5.0);
                    if quantize {
                        (v * 2.0).round() / 2.0
                    } else {
                        v
                    }
                })
                .collect()
        };
        let x = draw(&mut gen, checked % 2 == 0);
        let y = draw(&mut gen, checked % 3 == 0);
        let (Ok(ours_s), Ok(ours_p)) = (srcc(&x, &y), plcc(&x, &y)) else {
            continue; // constant vector drawn; not part of this comparison
        };
        assert!((ours_s - brute_pearson(&brute_ranks(&x), &brute_ranks(&y))).abs() < 1e-9);
        assert!((ours_p - brute_pearson(&x, &y)).abs() < 1e-9);
        checked += 1;
    }

    // SRCC is invariant under strictly monotone maps; PLCC under
    // positive-slope affine maps.
    for trial in 0..50 {
        let n = 5 + (trial % 20);
        let x: Vec<f64> = (0..n).map(|_| gen.range(-3.0, 3.0)).collect();
        let y: Vec<f64> = (0..n).map(|_| gen.range(-3.0, 3.0)).collect();
        let (Ok(s0), Ok(p0)) = (srcc(&x, &y), plcc(&x, &y)) else {
            continue;
        };
        let monotone: Vec<f64> = x.iter().map(|v| v.exp() + 0.5 * v).collect();
        assert!((srcc(&monotone, &y).unwrap() - s0).abs() < 1e-12);
        let affine: Vec<f64> = x.iter().map(|v| 2.5 * v - 3.0).collect();
        assert!((plcc(&affine, &y).unwrap() - p0).abs() < 1e-12);
    }
    println!("ACCEPTANCE C3 metric oracle equivalence: PASS");
}

#[test]
fn c4_affine_calibration_fixes_scale_not_rank() {
    // Noise-free compressive teacher: perfect ranks, bent scale.
    let synth = SynthConfig {
        teacher_noise: 0.0,
        ..SynthConfig::default()
    };
    let bench = make_benchmark(&synth).unwrap();
    let test = bench.dataset.split_indices(Split::Test);
    let latent = bench.latent_of(&test);
    let teacher = bench.teacher_scores_of(&test);
    let mos: Vec<f64> = test.iter().map(|&i| bench.dataset.mos(i).unwrap()).collect();

    let rank_vs_latent = srcc(&teacher, &latent).unwrap();
    let line_vs_latent = plcc(&teacher, &latent).unwrap();
    assert!((rank_vs_latent - 1.0).abs() < 1e-9, "srcc {rank_vs_latent}");
    assert!(line_vs_latent < 0.99, "plcc {line_vs_latent}");

    // Affine re-scaling fitted on a 10% label budget.
    let (labeled, _) = split_mos_budget(&bench.dataset, 0.1, 0).unwrap();
    let fit_points: Vec<(f64, f64)> = labeled
        .iter()
        .map(|id| {
            let i = bench.dataset.index_of(id).unwrap();
            (bench.points[i].soft_score, bench.dataset.mos(i).unwrap())
        })
        .collect();
    let (a, b) = affine_calibrate(&fit_points).unwrap();
    let calibrated: Vec<f64> = teacher.iter().map(|s| a * s + b).collect();

    let mean_residual =
        |pred: &[f64]| pred.iter().zip(&mos).map(|(s, y)| y - s).sum::<f64>() / mos.len() as f64;
    let before = mean_residual(&teacher);
    let after = mean_residual(&calibrated);
    assert!(
        after.abs() <= 0.2 * before.abs(),
        "mean residual {before:.4} -> {after:.4} is less than an 80% reduction"
    );
    let srcc_delta = (srcc(&calibrated, &mos).unwrap() - srcc(&teacher, &mos).unwrap()).abs();
    assert!(srcc_delta < 1e-12, "srcc moved by {srcc_delta:e}");

    println!(
        "ACCEPTANCE C4 affine calibration (plcc {line_vs_latent:.4}, residual {before:.3} -> {after:.3}): PASS"
    );
}

#[test]
fn c5_label_efficiency_ordering() {
    let seeds: Vec<u64> = (0..5).collect();
    let synth = SynthConfig::default();
    let mean_plcc = |ratio: f64| {
        let train = TrainConfig {
            mos_ratio: ratio,
            ..TrainConfig::default()
        };
        run_seeded_repeats(&synth, &train, &seeds).unwrap().test_plcc.mean
    };
    let p0 = mean_plcc(0.0);
    let p10 = mean_plcc(0.10);
    let p30 = mean_plcc(0.30);

    assert!(p30 >= p10 && p10 >= p0, "ordering broken: {p0:.4} {p10:.4} {p30:.4}");
    let first_gain = p10 - p0;
    let second_gain = p30 - p10;
    assert!(
        first_gain >= 2.0 * second_gain,
        "first 10% of labels gained {first_gain:.4}, next 20% gained {second_gain:.4}"
    );
    println!(
        "ACCEPTANCE C5 label efficiency (plcc {p0:.4} -> {p10:.4} -> {p30:.4}): PASS"
    );
}

#[test]
fn c6_supervision_ablation_ordering() {
    // Reference protocol: heteroscedastic benchmark (seed 3), training
    // seeds 0..4, supervision switched per mode, everything else fixed.
    let bench = make_benchmark(&SynthConfig {
        hetero_pairs: true,
        seed: 3,
        ..SynthConfig::default()
    })
    .unwrap();
    let seeds: Vec<u64> = (0..5).collect();
    let rows = run_ablation(
        &bench,
        &TrainConfig::default(),
        &AblationMode::ALL_MODES,
        &seeds,
    )
    .unwrap();
    let mean = |mode: AblationMode| {
        rows.iter().find(|r| r.mode == mode).unwrap().mean_srcc
    };

    let cft = mean(AblationMode::CftOnly);
    let point = mean(AblationMode::Point);
    let pair = mean(AblationMode::Pair);
    let pair_conf = mean(AblationMode::PairConf);
    let point_pair = mean(AblationMode::PointPair);
    let all = mean(AblationMode::All);

    assert!(cft < point, "cft_only {cft:.4} !< point {point:.4}");
    assert!(point <= point_pair, "point {point:.4} !<= point_pair {point_pair:.4}");
    assert!(point_pair <= all, "point_pair {point_pair:.4} !<= all {all:.4}");
    assert!(pair_conf >= pair, "pair_conf {pair_conf:.4} !>= pair {pair:.4}");

    println!(
        "ACCEPTANCE C6 ablation ordering (cft {cft:.4} < point {point:.4} <= \
         point_pair {point_pair:.4} <= all {all:.4}; pair_conf {pair_conf:.4} >= pair {pair:.4}): PASS"
    );
}

#[test]
fn c7_stage1_never_reads_labels() {
    let bench = make_benchmark(&SynthConfig {
        n: 400,
        pair_count: 400,
        ..SynthConfig::default()
    })
    .unwrap();
    let config = TrainConfig {
        stage1_epochs: 10,
        ..TrainConfig::default()
    };

    let before = bench.dataset.mos_read_count();
    let (_, log) =
        run_stage1(&config, &bench.dataset, &bench.points, &bench.pairs, None).unwrap();
    assert_eq!(log.mos_reads_during_run, 0);
    assert_eq!(bench.dataset.mos_read_count(), before);

    // Few-shot checkpoint selection consumes labels that the caller
    // extracted beforehand; the stage itself still reads zero.
    let (labeled, _) = split_mos_budget(&bench.dataset, 0.1, 0).unwrap();
    let (_, holdout_ids) = calib_split(&labeled, 0.2, 0);
    let holdout = HoldoutLabels {
        rows: holdout_ids
            .iter()
            .filter_map(|id| {
                let i = bench.dataset.index_of(id)?;
                bench.dataset.mos(i).map(|y| (i, y))
            })
            .collect(),
    };
    let before = bench.dataset.mos_read_count();
    let (_, log) = run_stage1(
        &TrainConfig {
            checkpoint_mode: CheckpointMode::FewShot,
            ..config
        },
        &bench.dataset,
        &bench.points,
        &bench.pairs,
        Some(&holdout),
    )
    .unwrap();
    assert_eq!(log.mos_reads_during_run, 0);
    assert_eq!(bench.dataset.mos_read_count(), before);

    println!("ACCEPTANCE C7 stage-1 label isolation: PASS");
}

#[test]
fn c8_sweep_rerun_from_snapshot_is_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let first = tmp.path().join("first");
    let second = tmp.path().join("second");

    let sweep = |args: &[&str]| {
        let out = assert_cmd::Command::cargo_bin("qdistill")
            .unwrap()
            .args(args)
            .output()
            .unwrap();
        assert!(
            out.status.success(),
            "sweep failed: {}",
            String::from_utf8_lossy(&out.stderr)
        );
    };
    sweep(&[
        "sweep",
        "--out",
        first.to_str().unwrap(),
        "--ratios",
        "0,0.2",
        "--seeds",
        "2",
        "--n",
        "300",
        "--pair-count",
        "300",
        "--stage1-epochs",
        "6",
        "--stage2-epochs",
        "15",
    ]);
    let snapshot = first.join("config.json");
    sweep(&[
        "--config",
        snapshot.to_str().unwrap(),
        "sweep",
        "--out",
        second.to_str().unwrap(),
    ]);

    let csv_a = std::fs::read(first.join("sweep.csv")).unwrap();
    let csv_b = std::fs::read(second.join("sweep.csv")).unwrap();
    assert_eq!(csv_a, csv_b, "re-run from snapshot changed the CSV");

    // Shape: header + ratios x seeds data rows + one aggregate row per ratio.
    let text = String::from_utf8(csv_a).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "ratio,seed,srcc,plcc");
    assert_eq!(lines.len(), 1 + 2 * 2 + 2);
    assert_eq!(text.matches(",mean,").count(), 2);

    println!("ACCEPTANCE C8 sweep snapshot determinism: PASS");
}

#[test]
fn c9_harvest_robustness_against_mock_endpoint() {
    let images: Vec<(String, String)> = (0..12)
        .map(|i| (format!("img_{i:03}"), format!("https://imgs/{i}.png")))
        .collect();
    let pairs: Vec<(String, String)> = (0..6)
        .map(|i| (format!("img_{:03}", 2 * i), format!("img_{:03}", 2 * i + 1)))
        .collect();
    let config_for = |dir: &Path| HarvestConfig {
        model: "mock-teacher".into(),
        concurrency: 3,
        retry: RetryPolicy {
            max_attempts: 2,
            backoff_ms: 1,
        },
        templates: PromptTemplates::default(),
        point_path: dir.join("points.jsonl"),
        pair_path: dir.join("pairs.jsonl"),
    };

    // Uninterrupted reference run.
    let tmp = tempfile::tempdir().unwrap();
    let clean_dir = tmp.path().join("clean");
    std::fs::create_dir_all(&clean_dir).unwrap();
    let clean = config_for(&clean_dir);
    let transport = MockTransport::new().with_delay(Duration::from_millis(5));
    let report = harvest(&transport, &clean, &images, &pairs).unwrap();
    assert_eq!(report.points_written, 12);
    assert_eq!(report.pairs_written, 6);
    assert!(report.failures.is_empty());

    // Concurrency stayed within its bound but actually overlapped.
    assert!(transport.max_in_flight() <= 3, "in-flight {}", transport.max_in_flight());
    assert!(transport.max_in_flight() >= 2, "harvest never overlapped requests");

    // Per-item failure isolation: one permanently failing image must not
    // block the others. It takes down its own point request and the one
    // pair that shows it, nothing else.
    let broken_dir = tmp.path().join("broken");
    std::fs::create_dir_all(&broken_dir).unwrap();
    let broken = config_for(&broken_dir);
    let failing = MockTransport::new().fail_on("https://imgs/7.png");
    let report = harvest(&failing, &broken, &images, &pairs).unwrap();
    assert_eq!(report.points_written, 11);
    assert_eq!(report.pairs_written, 5);
    assert_eq!(report.failures.len(), 2);
    assert!(
        report.failures.iter().all(|f| f.item.contains("img_007")),
        "{:?}",
        report.failures
    );

    // Resumability: a second pass fetches only what is missing, and the
    // final files are byte-identical to the uninterrupted run.
    let resumed = harvest(&MockTransport::new(), &broken, &images, &pairs).unwrap();
    assert_eq!(resumed.points_written, 1);
    assert_eq!(resumed.pairs_written, 1);
    assert_eq!(resumed.skipped_existing, 16);
    let bytes = |dir: &Path, name: &str| std::fs::read(dir.join(name)).unwrap();
    assert_eq!(bytes(&clean_dir, "points.jsonl"), bytes(&broken_dir, "points.jsonl"));
    assert_eq!(bytes(&clean_dir, "pairs.jsonl"), bytes(&broken_dir, "pairs.jsonl"));

    // Parse floor: quality words missing from the returned alternatives get
    // min(returned logprob) - 10.
    let response = serde_json::json!({
        "choices": [{
            "message": {"role": "assistant", "content": "Excellent"},
            "logprobs": {"content": [{
                "token": "Excellent",
                "logprob": -0.1,
                "top_logprobs": [
                    {"token": "Excellent", "logprob": -0.1},
                    {"token": "good", "logprob": -2.0},
                    {"token": "the", "logprob": -3.5}
                ]
            }]}
        }]
    });
    let extraction = extract_point_logits(&response).unwrap();
    assert_eq!(extraction.logits[0], -0.1);
    assert_eq!(extraction.logits[1], -2.0);
    assert_eq!(extraction.logits[2], -13.5);
    assert_eq!(extraction.logits[3], -13.5);
    assert_eq!(extraction.logits[4], -13.5);
    assert_eq!(extraction.floored, vec!["Fair", "Poor", "Bad"]);

    println!("ACCEPTANCE C9 harvest robustness: PASS");
}
