//! Implementations of the subcommands. Each takes the merged [`RunConfig`]
//! plus its own arguments, writes its artifacts under `--out`, and prints a
//! short human summary (machine-readable detail goes to the files).

use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::time::Duration;

use qdistill_core::ablation::{run_ablation, AblationMode};
use qdistill_core::io::{
    load_bundle, read_checkpoint, write_bundle, write_checkpoint, write_json, write_jsonl,
    BundlePaths, Checkpoint, CHECKPOINT_VERSION,
};
use qdistill_core::pipeline::{
    calib_split, evaluate_split, run_seeded_repeats, run_stage1, run_stage2, split_mos_budget,
    CheckpointMode, HoldoutLabels, RunLog,
};
use qdistill_core::student::Split;
use qdistill_core::synth::make_benchmark;
use qdistill_core::CoreError;
use qdistill_teacher::client::{HttpTransport, MockTransport, Transport};
use qdistill_teacher::harvest::{harvest, HarvestConfig, RetryPolicy};
use qdistill_teacher::template::PromptTemplates;

use crate::config::RunConfig;
use crate::{CliError, HarvestArgs};

fn ensure_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir)
        .map_err(|e| CliError::Core(CoreError::io(dir.display().to_string(), e)))
}

/// `synth`: generate a benchmark bundle under `--out`.
pub fn cmd_synth(rc: &RunConfig, out: &Path) -> Result<(), CliError> {
    ensure_dir(out)?;
    let bench = make_benchmark(&rc.synth).map_err(CliError::Core)?;
    write_bundle(&bench, &BundlePaths::in_dir(out)).map_err(CliError::Core)?;
    rc.write_snapshot(out)?;
    let n = bench.dataset.len();
    let (tr, va, te) = (
        bench.dataset.split_indices(Split::Train).len(),
        bench.dataset.split_indices(Split::Val).len(),
        bench.dataset.split_indices(Split::Test).len(),
    );
    println!(
        "wrote benchmark to {}: {n} images ({tr} train / {va} val / {te} test), \
         {} point signals, {} pairs, seed {}",
        out.display(),
        bench.points.len(),
        bench.pairs.len(),
        rc.synth.seed
    );
    Ok(())
}

/// `harvest`: query a teacher endpoint (or the built-in mock) for signals.
pub fn cmd_harvest(rc: &RunConfig, args: &HarvestArgs) -> Result<(), CliError> {
    ensure_dir(&args.out)?;
    let templates = match &args.templates {
        Some(dir) => PromptTemplates::load(dir).map_err(CliError::Teacher)?,
        None => PromptTemplates::default(),
    };
    let config = HarvestConfig {
        model: args.model.clone(),
        concurrency: args.concurrency,
        retry: RetryPolicy {
            max_attempts: args.max_attempts,
            backoff_ms: args.backoff_ms,
        },
        templates,
        point_path: args.out.join("points.jsonl"),
        pair_path: args.out.join("pairs.jsonl"),
    };
    let images = read_two_column_csv(&args.images, "id", "ref")?;
    let pairs = match &args.pairs {
        Some(p) => read_two_column_csv(p, "a", "b")?,
        None => Vec::new(),
    };

    let transport: Box<dyn Transport> = match (&args.endpoint, args.mock) {
        (Some(url), false) => Box::new(
            HttpTransport::from_env(url, Duration::from_secs(args.timeout_secs))
                .map_err(CliError::Teacher)?,
        ),
        (None, true) => Box::new(MockTransport::new()),
        _ => {
            return Err(CliError::Usage(
                "harvest needs exactly one of --endpoint <URL> or --mock".into(),
            ))
        }
    };

    let report = harvest(transport.as_ref(), &config, &images, &pairs)
        .map_err(CliError::Teacher)?;
    write_json(&args.out.join("harvest_report.json"), &report).map_err(CliError::Core)?;
    rc.write_snapshot(&args.out)?;
    println!(
        "harvested {} point / {} pair signals into {} ({} already present, {} failures, \
         {} floored; {} requests, mean latency {:.1} ms)",
        report.points_written,
        report.pairs_written,
        args.out.display(),
        report.skipped_existing,
        report.failures.len(),
        report.floored.len(),
        report.latency.requests,
        report.latency.mean_ms
    );
    for f in &report.failures {
        log::warn!("failed item {}: {}", f.item, f.error);
    }
    Ok(())
}

/// `distill`: stage-1 training from teacher signals only.
pub fn cmd_distill(rc: &RunConfig, data: &Path, out: &Path) -> Result<(), CliError> {
    ensure_dir(out)?;
    let bench = load_bundle(&BundlePaths::in_dir(data)).map_err(CliError::Core)?;
    let dataset = &bench.dataset;
    let cfg = &rc.train;

    // In few-shot mode the labeled holdout is read here, outside the stage,
    // so the stage itself never touches the label store.
    let few_shot = if cfg.checkpoint_mode == CheckpointMode::FewShot {
        let (labeled, _) =
            split_mos_budget(dataset, cfg.mos_ratio, cfg.seed).map_err(CliError::Core)?;
        let (_, holdout_ids) = calib_split(&labeled, cfg.calib_holdout_frac, cfg.seed);
        let rows = holdout_ids
            .iter()
            .filter_map(|id| {
                let i = dataset.index_of(id)?;
                dataset.mos(i).map(|y| (i, y))
            })
            .collect();
        Some(HoldoutLabels { rows })
    } else {
        None
    };

    let (params, log) = run_stage1(cfg, dataset, &bench.points, &bench.pairs, few_shot.as_ref())
        .map_err(CliError::Core)?;

    let ckpt = Checkpoint {
        version: CHECKPOINT_VERSION,
        params,
        optimizer: None,
        seed_lineage: format!(
            "base seed {}; derived streams: stage1-holdout, stage1-shuffle, stage1-pair-draw",
            cfg.seed
        ),
    };
    write_checkpoint(&out.join("stage1.ckpt.json"), &ckpt).map_err(CliError::Core)?;
    write_run_log(out, "stage1", &log)?;
    rc.write_snapshot(out)?;
    print_stage_summary("stage 1", out, &log);
    Ok(())
}

/// `calibrate`: stage-2 fine-tuning of a stage-1 checkpoint on the label budget.
pub fn cmd_calibrate(
    rc: &RunConfig,
    data: &Path,
    checkpoint: &Path,
    out: &Path,
) -> Result<(), CliError> {
    ensure_dir(out)?;
    let bench = load_bundle(&BundlePaths::in_dir(data)).map_err(CliError::Core)?;
    let cfg = &rc.train;
    let ckpt = read_checkpoint(checkpoint).map_err(CliError::Core)?;
    let (labeled, _) =
        split_mos_budget(&bench.dataset, cfg.mos_ratio, cfg.seed).map_err(CliError::Core)?;
    let (params, log) =
        run_stage2(cfg, ckpt.params, &bench.dataset, &labeled).map_err(CliError::Core)?;

    let ckpt = Checkpoint {
        version: CHECKPOINT_VERSION,
        params,
        optimizer: None,
        seed_lineage: format!(
            "base seed {}; derived streams: mos-budget, calib-holdout, stage2-shuffle; \
             calibrated from {}",
            cfg.seed,
            checkpoint.display()
        ),
    };
    write_checkpoint(&out.join("stage2.ckpt.json"), &ckpt).map_err(CliError::Core)?;
    write_run_log(out, "stage2", &log)?;
    rc.write_snapshot(out)?;
    print_stage_summary("stage 2", out, &log);
    Ok(())
}

/// `eval`: print an evaluation report for one split as JSON on stdout.
pub fn cmd_eval(data: &Path, checkpoint: &Path, split: Split) -> Result<(), CliError> {
    let bench = load_bundle(&BundlePaths::in_dir(data)).map_err(CliError::Core)?;
    let ckpt = read_checkpoint(checkpoint).map_err(CliError::Core)?;
    let report = evaluate_split(&ckpt.params, &bench.dataset, split).map_err(CliError::Core)?;
    let rendered = serde_json::to_string_pretty(&report)
        .map_err(|e| CliError::config(format!("cannot render report: {e}")))?;
    println!("{rendered}");
    Ok(())
}

/// `sweep`: label-efficiency curve over `ratios` x `seeds`, written as CSV.
pub fn cmd_sweep(rc: &RunConfig, out: &Path) -> Result<(), CliError> {
    ensure_dir(out)?;
    let ratios = rc
        .extras
        .ratios
        .clone()
        .unwrap_or_else(|| vec![0.0, 0.1, 0.3]);
    let seed_count = rc.extras.seeds.unwrap_or(5);
    let seeds: Vec<u64> = (0..seed_count).collect();
    if ratios.is_empty() || seeds.is_empty() {
        return Err(CliError::Usage(
            "sweep needs at least one ratio and one seed".into(),
        ));
    }

    let mut csv = String::from("ratio,seed,srcc,plcc\n");
    let mut aggregates = String::new();
    for &ratio in &ratios {
        let train = qdistill_core::pipeline::TrainConfig {
            mos_ratio: ratio,
            ..rc.train.clone()
        };
        let agg = run_seeded_repeats(&rc.synth, &train, &seeds).map_err(CliError::Core)?;
        for o in &agg.outcomes {
            let t = &o.reports["test"];
            let _ = writeln!(csv, "{ratio},{},{},{}", o.seed, t.srcc, t.plcc);
        }
        let _ = writeln!(
            aggregates,
            "{ratio},mean,{},{}",
            agg.test_srcc.mean, agg.test_plcc.mean
        );
        println!(
            "ratio {ratio}: mean test srcc {:.4} / plcc {:.4} over {} seeds",
            agg.test_srcc.mean,
            agg.test_plcc.mean,
            seeds.len()
        );
    }
    csv.push_str(&aggregates);

    let path = out.join("sweep.csv");
    fs::write(&path, csv).map_err(|e| CliError::Core(CoreError::io(path.display().to_string(), e)))?;
    let mut rc = rc.clone();
    rc.extras.ratios = Some(ratios);
    rc.extras.seeds = Some(seed_count);
    rc.extras.modes = None;
    rc.write_snapshot(out)?;
    println!("wrote {}", path.display());
    Ok(())
}

/// `ablate`: supervision-strategy grid on one fixed benchmark, written as CSV.
pub fn cmd_ablate(rc: &RunConfig, out: &Path, modes: &[AblationMode]) -> Result<(), CliError> {
    ensure_dir(out)?;
    let seed_count = rc.extras.seeds.unwrap_or(5);
    let seeds: Vec<u64> = (0..seed_count).collect();
    if seeds.is_empty() {
        return Err(CliError::Usage("ablate needs at least one seed".into()));
    }

    let bench = make_benchmark(&rc.synth).map_err(CliError::Core)?;
    let rows = run_ablation(&bench, &rc.train, modes, &seeds).map_err(CliError::Core)?;

    let mut csv = String::from("mode,seed,srcc,plcc\n");
    for row in &rows {
        for (seed, srcc, plcc) in &row.per_seed {
            let _ = writeln!(csv, "{},{seed},{srcc},{plcc}", row.mode);
        }
    }
    for row in &rows {
        let _ = writeln!(csv, "{},mean,{},{}", row.mode, row.mean_srcc, row.mean_plcc);
        println!(
            "{:<10} mean test srcc {:.4} / plcc {:.4}",
            row.mode, row.mean_srcc, row.mean_plcc
        );
    }

    let path = out.join("ablate.csv");
    fs::write(&path, csv).map_err(|e| CliError::Core(CoreError::io(path.display().to_string(), e)))?;
    let mut rc = rc.clone();
    rc.extras.seeds = Some(seed_count);
    rc.extras.modes = Some(modes.iter().map(|m| m.slug().to_string()).collect());
    rc.extras.ratios = None;
    rc.write_snapshot(out)?;
    println!("wrote {}", path.display());
    Ok(())
}

/// Write a stage's run log twice: per-epoch rows as line-delimited JSON
/// (`<stage>_log.jsonl`) and the whole log, including the selected epoch and
/// the label-read counter, as one document (`<stage>_run.json`).
fn write_run_log(dir: &Path, stage: &str, log: &RunLog) -> Result<(), CliError> {
    write_jsonl(&dir.join(format!("{stage}_log.jsonl")), &log.epochs).map_err(CliError::Core)?;
    write_json(&dir.join(format!("{stage}_run.json")), log).map_err(CliError::Core)
}

fn print_stage_summary(stage: &str, out: &Path, log: &RunLog) {
    let selected = match log.selected_epoch {
        Some(i) => format!("epoch {}", log.epochs[i].epoch),
        None => "initial parameters".to_string(),
    };
    let last = log.epochs.last();
    println!(
        "{stage}: {} epochs, selected {selected}, final train loss {}, \
         label reads during stage {}; artifacts in {}",
        log.epochs.len(),
        last.map_or("n/a".into(), |e| format!("{:.6}", e.train_loss)),
        log.mos_reads_during_run,
        out.display()
    );
}

/// Read a two-column CSV with the given header names (extra columns are
/// rejected to catch swapped files).
fn read_two_column_csv(
    path: &Path,
    first: &str,
    second: &str,
) -> Result<Vec<(String, String)>, CliError> {
    let file = path.display().to_string();
    let format_err = |line: u64, message: String| {
        CliError::Core(CoreError::Format {
            file: file.clone(),
            line,
            column: 0,
            message,
        })
    };
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| match e.kind() {
            csv::ErrorKind::Io(_) if !path.exists() => {
                CliError::Core(CoreError::MissingArtifact(format!("{file} does not exist")))
            }
            _ => format_err(0, e.to_string()),
        })?;
    let headers = reader
        .headers()
        .map_err(|e| format_err(0, e.to_string()))?
        .clone();
    let expected = [first, second];
    if headers.iter().collect::<Vec<_>>() != expected {
        return Err(format_err(
            1,
            format!("expected header {first},{second}, found {}", headers.iter().collect::<Vec<_>>().join(",")),
        ));
    }
    let mut rows = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record.map_err(|e| format_err(i as u64 + 2, e.to_string()))?;
        if record.len() != 2 || record[0].is_empty() || record[1].is_empty() {
            return Err(format_err(
                i as u64 + 2,
                format!("expected two non-empty fields, found {}", record.len()),
            ));
        }
        rows.push((record[0].to_string(), record[1].to_string()));
    }
    Ok(rows)
}

/// Keep `--split` parsing near the other flag parsers.
pub fn parse_split(s: &str) -> Result<Split, String> {
    Split::parse(s).ok_or_else(|| format!("unknown split {s:?}; expected train, val, or test"))
}
