//! Drive many judgment requests through a transport and write signal files.
//!
//! Concurrency model: a fixed pool of worker threads (the concurrency
//! limit) pulls work items from a shared queue, so at most `concurrency`
//! requests are in flight at once. Completed results flow over a channel
//! to the single collector/writer on the calling thread; workers never
//! touch the output files. Each completed row is appended and flushed
//! immediately, which is what makes an interrupted harvest resumable:
//! a re-run reads the partial files, skips finished items, and finishes
//! the rest. On clean completion the files are rewritten in sorted order,
//! so any path to completion yields byte-identical artifacts.

use crate::client::{build_pair_request, build_point_request, Transport, TransportError};
use crate::extract::{extract_pair_logits, extract_point_logits};
use crate::template::PromptTemplates;
use crate::TeacherError;
use qdistill_core::io::{read_jsonl, write_jsonl, PairRow, PointRow};
use serde::{Deserialize, Serialize};
use std::collections::{HashMap, HashSet, VecDeque};
use std::fs::OpenOptions;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::sync::mpsc;
use std::sync::Mutex;
use std::time::{Duration, Instant};

/// Retry policy for transient transport failures.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RetryPolicy {
    /// Total attempts per item, including the first (≥ 1).
    pub max_attempts: u32,
    /// First backoff; doubles per retry.
    pub backoff_ms: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            max_attempts: 3,
            backoff_ms: 500,
        }
    }
}

/// Everything a harvest run needs besides the transport and the work list.
#[derive(Debug, Clone)]
pub struct HarvestConfig {
    pub model: String,
    /// Upper bound on simultaneously in-flight requests (≥ 1).
    pub concurrency: usize,
    pub retry: RetryPolicy,
    pub templates: PromptTemplates,
    pub point_path: PathBuf,
    pub pair_path: PathBuf,
}

impl HarvestConfig {
    pub fn validate(&self) -> Result<(), TeacherError> {
        if self.concurrency == 0 {
            return Err(TeacherError::Config(
                "concurrency limit must be at least 1".into(),
            ));
        }
        if self.retry.max_attempts == 0 {
            return Err(TeacherError::Config(
                "retry policy needs at least 1 attempt".into(),
            ));
        }
        self.templates.validate()
    }
}

/// One item that could not be harvested after all retries.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ItemFailure {
    /// The image id, or "a|b" for a pair.
    pub item: String,
    pub error: String,
}

/// An item whose response was parsed with floored (missing) quality words.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlooredItem {
    pub id: String,
    pub words: Vec<String>,
}

/// Wall-clock latency over all attempted requests.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LatencyStats {
    pub requests: u64,
    pub min_ms: f64,
    pub mean_ms: f64,
    pub max_ms: f64,
}

impl LatencyStats {
    fn of(samples: &[f64]) -> LatencyStats {
        if samples.is_empty() {
            return LatencyStats::default();
        }
        LatencyStats {
            requests: samples.len() as u64,
            min_ms: samples.iter().copied().fold(f64::INFINITY, f64::min),
            mean_ms: samples.iter().sum::<f64>() / samples.len() as f64,
            max_ms: samples.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        }
    }
}

/// What a harvest run did.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct HarvestReport {
    pub points_written: usize,
    pub pairs_written: usize,
    /// Items found already present in the output files and skipped.
    pub skipped_existing: usize,
    pub failures: Vec<ItemFailure>,
    pub floored: Vec<FlooredItem>,
    pub latency: LatencyStats,
}

enum Work {
    Point {
        id: String,
        image: String,
    },
    Pair {
        a: String,
        b: String,
        image_a: String,
        image_b: String,
    },
}

enum Done {
    Point(PointRow, Vec<&'static str>),
    Pair(PairRow),
    Failed { item: String, error: String },
}

fn read_existing<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>, TeacherError> {
    if !path.exists() {
        return Ok(Vec::new());
    }
    read_jsonl(path).map_err(TeacherError::Core)
}

/// Run one request with retries; returns the response and per-attempt
/// latencies.
fn send_with_retry(
    transport: &dyn Transport,
    retry: &RetryPolicy,
    request: &serde_json::Value,
    latencies: &mut Vec<f64>,
) -> Result<serde_json::Value, String> {
    let mut attempt = 0;
    loop {
        attempt += 1;
        let t0 = Instant::now();
        let result = transport.send(request);
        latencies.push(t0.elapsed().as_secs_f64() * 1e3);
        match result {
            Ok(v) => return Ok(v),
            Err(TransportError::Permanent(m)) => return Err(format!("permanent: {m}")),
            Err(TransportError::Transient(m)) => {
                if attempt >= retry.max_attempts {
                    return Err(format!("transient after {attempt} attempts: {m}"));
                }
                let factor = 1u64 << (attempt - 1).min(16);
                std::thread::sleep(Duration::from_millis(retry.backoff_ms.saturating_mul(factor)));
            }
        }
    }
}

/// Harvest point signals for `images` (id, image reference) and pair
/// signals for `pairs` (id pairs referencing `images`). Already-written
/// items are skipped; new rows are appended as they complete and the
/// files are rewritten in sorted order at the end.
pub fn harvest(
    transport: &dyn Transport,
    config: &HarvestConfig,
    images: &[(String, String)],
    pairs: &[(String, String)],
) -> Result<HarvestReport, TeacherError> {
    config.validate()?;
    let image_ref: HashMap<&str, &str> = images
        .iter()
        .map(|(id, r)| (id.as_str(), r.as_str()))
        .collect();
    for (a, b) in pairs {
        for id in [a, b] {
            if !image_ref.contains_key(id.as_str()) {
                return Err(TeacherError::Config(format!(
                    "pair ({a}, {b}) references unknown image id {id}"
                )));
            }
        }
    }

    let mut existing_points: Vec<PointRow> = read_existing(&config.point_path)?;
    let mut existing_pairs: Vec<PairRow> = read_existing(&config.pair_path)?;
    let done_points: HashSet<String> = existing_points.iter().map(|r| r.id.clone()).collect();
    let done_pairs: HashSet<(String, String)> = existing_pairs
        .iter()
        .map(|r| (r.a.clone(), r.b.clone()))
        .collect();

    let mut queue: VecDeque<Work> = VecDeque::new();
    let mut queued_points: HashSet<&str> = HashSet::new();
    let mut queued_pairs: HashSet<(&str, &str)> = HashSet::new();
    let mut skipped = 0usize;
    for (id, image) in images {
        if done_points.contains(id) {
            skipped += 1;
        } else if queued_points.insert(id) {
            queue.push_back(Work::Point {
                id: id.clone(),
                image: image.clone(),
            });
        }
    }
    for (a, b) in pairs {
        if done_pairs.contains(&(a.clone(), b.clone())) {
            skipped += 1;
        } else if queued_pairs.insert((a, b)) {
            queue.push_back(Work::Pair {
                a: a.clone(),
                b: b.clone(),
                image_a: image_ref[a.as_str()].to_string(),
                image_b: image_ref[b.as_str()].to_string(),
            });
        }
    }

    let total_work = queue.len();
    let mut report = HarvestReport {
        skipped_existing: skipped,
        ..HarvestReport::default()
    };
    let mut all_latencies: Vec<f64> = Vec::new();

    if total_work > 0 {
        let queue = Mutex::new(queue);
        let (tx, rx) = mpsc::channel::<(Done, Vec<f64>)>();
        let workers = config.concurrency.min(total_work);

        let mut appender_point = appender(&config.point_path)?;
        let mut appender_pair = appender(&config.pair_path)?;

        std::thread::scope(|scope| -> Result<(), TeacherError> {
            for _ in 0..workers {
                let tx = tx.clone();
                let queue = &queue;
                scope.spawn(move || {
                    loop {
                        let item = match queue.lock().expect("queue lock").pop_front() {
                            Some(w) => w,
                            None => break,
                        };
                        let mut latencies = Vec::new();
                        let done = run_item(transport, config, &item, &mut latencies);
                        if tx.send((done, latencies)).is_err() {
                            break;
                        }
                    }
                });
            }
            drop(tx);

            // Single writer: drain results, append finished rows right away.
            for (done, lat) in rx.iter() {
                all_latencies.extend(lat);
                match done {
                    Done::Point(row, floored) => {
                        append_row(&mut appender_point, &config.point_path, &row)?;
                        if !floored.is_empty() {
                            report.floored.push(FlooredItem {
                                id: row.id.clone(),
                                words: floored.iter().map(|w| w.to_string()).collect(),
                            });
                        }
                        existing_points.push(row);
                        report.points_written += 1;
                    }
                    Done::Pair(row) => {
                        append_row(&mut appender_pair, &config.pair_path, &row)?;
                        existing_pairs.push(row);
                        report.pairs_written += 1;
                    }
                    Done::Failed { item, error } => {
                        report.failures.push(ItemFailure { item, error });
                    }
                }
            }
            Ok(())
        })?;

        if report.points_written + report.pairs_written == 0 && !report.failures.is_empty() {
            return Err(TeacherError::Harvest(format!(
                "all {} items failed; first error: {}",
                report.failures.len(),
                report.failures[0].error
            )));
        }
    }

    // Canonicalize: complete files are sorted, so any run order (including
    // interrupted-and-resumed) converges to the same bytes.
    existing_points.sort_by(|x, y| x.id.cmp(&y.id));
    existing_pairs.sort_by(|x, y| (&x.a, &x.b).cmp(&(&y.a, &y.b)));
    write_jsonl(&config.point_path, &existing_points)?;
    write_jsonl(&config.pair_path, &existing_pairs)?;

    report.failures.sort_by(|x, y| x.item.cmp(&y.item));
    report.floored.sort_by(|x, y| x.id.cmp(&y.id));
    report.latency = LatencyStats::of(&all_latencies);
    Ok(report)
}

fn appender(path: &Path) -> Result<std::fs::File, TeacherError> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)
                .map_err(|e| TeacherError::Core(qdistill_core::error::CoreError::io(
                    parent.display().to_string(),
                    e,
                )))?;
        }
    }
    OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| {
            TeacherError::Core(qdistill_core::error::CoreError::io(
                path.display().to_string(),
                e,
            ))
        })
}

fn append_row<T: Serialize>(
    file: &mut std::fs::File,
    path: &Path,
    row: &T,
) -> Result<(), TeacherError> {
    let line = serde_json::to_string(row).map_err(|e| {
        TeacherError::Harvest(format!("cannot serialize row for {}: {e}", path.display()))
    })?;
    writeln!(file, "{line}").and_then(|_| file.flush()).map_err(|e| {
        TeacherError::Core(qdistill_core::error::CoreError::io(
            path.display().to_string(),
            e,
        ))
    })
}

fn run_item(
    transport: &dyn Transport,
    config: &HarvestConfig,
    item: &Work,
    latencies: &mut Vec<f64>,
) -> Done {
    match item {
        Work::Point { id, image } => {
            let request = match build_point_request(image, &config.templates.point, &config.model)
            {
                Ok(r) => r,
                Err(e) => {
                    return Done::Failed {
                        item: id.clone(),
                        error: e.to_string(),
                    }
                }
            };
            match send_with_retry(transport, &config.retry, &request, latencies) {
                Ok(response) => match extract_point_logits(&response) {
                    Ok(e) => Done::Point(
                        PointRow {
                            id: id.clone(),
                            logits: e.logits,
                        },
                        e.floored,
                    ),
                    Err(e) => Done::Failed {
                        item: id.clone(),
                        error: e.to_string(),
                    },
                },
                Err(error) => Done::Failed {
                    item: id.clone(),
                    error,
                },
            }
        }
        Work::Pair {
            a,
            b,
            image_a,
            image_b,
        } => {
            let item_name = format!("{a}|{b}");
            let request = match build_pair_request(
                image_a,
                image_b,
                &config.templates.pair,
                &config.model,
            ) {
                Ok(r) => r,
                Err(e) => {
                    return Done::Failed {
                        item: item_name,
                        error: e.to_string(),
                    }
                }
            };
            match send_with_retry(transport, &config.retry, &request, latencies) {
                Ok(response) => match extract_pair_logits(&response) {
                    Ok((la, lb)) => Done::Pair(PairRow {
                        a: a.clone(),
                        b: b.clone(),
                        logit_a: la,
                        logit_b: lb,
                    }),
                    Err(e) => Done::Failed {
                        item: item_name,
                        error: e.to_string(),
                    },
                },
                Err(error) => Done::Failed {
                    item: item_name,
                    error,
                },
            }
        }
    }
}
