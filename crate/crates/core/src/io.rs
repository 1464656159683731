//! File formats: line-delimited JSON for variable-length records, CSV for
//! flat tables. Floats are rendered shortest-round-trip, so every format
//! round-trips value-exactly and no file carries a timestamp.
//!
//! A dataset bundle on disk is:
//!   features.jsonl  {"id":…, "feat":[…]}         one line per image
//!   points.jsonl    {"id":…, "logits":[5 values]}
//!   pairs.jsonl     {"a":…, "b":…, "logit_a":…, "logit_b":…}
//!   mos.csv         id,mos        (labeled ids only)
//!   split.csv       id,split      (train / val / test, all ids)
//!   latent.csv      id,latent     (synthetic ground truth, optional)

use crate::error::{CoreError, Result};
use crate::signals::{SupervisionPair, TeacherPointSignal};
use crate::student::{FeatureDataset, Split};
use crate::synth::Benchmark;
use crate::ImageId;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

/// Locations of one dataset bundle's files.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BundlePaths {
    pub features: PathBuf,
    pub points: PathBuf,
    pub pairs: PathBuf,
    pub split: PathBuf,
    pub mos: Option<PathBuf>,
    pub latent: Option<PathBuf>,
}

impl BundlePaths {
    /// Conventional file names under one directory.
    pub fn in_dir(dir: &Path) -> BundlePaths {
        BundlePaths {
            features: dir.join("features.jsonl"),
            points: dir.join("points.jsonl"),
            pairs: dir.join("pairs.jsonl"),
            split: dir.join("split.csv"),
            mos: Some(dir.join("mos.csv")),
            latent: Some(dir.join("latent.csv")),
        }
    }
}

/// One image feature vector, as serialized in the features file.
#[derive(Debug, Serialize, Deserialize)]
pub struct FeatureRow {
    pub id: String,
    pub feat: Vec<f64>,
}

/// One point signal (five quality-token logits), as serialized.
#[derive(Serialize, Deserialize)]
pub struct PointRow {
    pub id: String,
    pub logits: [f64; 5],
}

/// One pair signal (preference logits for both sides), as serialized.
#[derive(Serialize, Deserialize)]
pub struct PairRow {
    pub a: String,
    pub b: String,
    pub logit_a: f64,
    pub logit_b: f64,
}

fn display(p: &Path) -> String {
    p.display().to_string()
}

fn create(path: &Path) -> Result<BufWriter<std::fs::File>> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).map_err(|e| CoreError::io(display(parent), e))?;
        }
    }
    Ok(BufWriter::new(
        std::fs::File::create(path).map_err(|e| CoreError::io(display(path), e))?,
    ))
}

fn open(path: &Path) -> Result<BufReader<std::fs::File>> {
    if !path.exists() {
        return Err(CoreError::MissingArtifact(format!(
            "{} does not exist",
            display(path)
        )));
    }
    Ok(BufReader::new(
        std::fs::File::open(path).map_err(|e| CoreError::io(display(path), e))?,
    ))
}

/// Write any serializable records as line-delimited JSON.
pub fn write_jsonl<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = create(path)?;
    for row in rows {
        serde_json::to_writer(&mut w, row)
            .map_err(|e| CoreError::io(display(path), e.into()))?;
        w.write_all(b"\n").map_err(|e| CoreError::io(display(path), e))?;
    }
    w.flush().map_err(|e| CoreError::io(display(path), e))
}

/// Read line-delimited JSON records, reporting file/line/column on failure.
pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let r = open(path)?;
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line.map_err(|e| CoreError::io(display(path), e))?;
        if line.trim().is_empty() {
            continue;
        }
        let row = serde_json::from_str(&line).map_err(|e| CoreError::Format {
            file: display(path),
            line: (i + 1) as u64,
            column: e.column() as u64,
            message: e.to_string(),
        })?;
        out.push(row);
    }
    Ok(out)
}

fn write_id_value_csv(path: &Path, header: &str, rows: &[(String, String)]) -> Result<()> {
    let mut w = create(path)?;
    writeln!(w, "id,{header}").map_err(|e| CoreError::io(display(path), e))?;
    for (id, value) in rows {
        writeln!(w, "{id},{value}").map_err(|e| CoreError::io(display(path), e))?;
    }
    w.flush().map_err(|e| CoreError::io(display(path), e))
}

fn read_id_value_csv(path: &Path, header: &str) -> Result<Vec<(String, String)>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(open(path)?);
    {
        let got = rdr.headers().map_err(|e| csv_format_err(path, &e))?;
        if got.len() != 2 || &got[0] != "id" || &got[1] != header {
            return Err(CoreError::Format {
                file: display(path),
                line: 1,
                column: 0,
                message: format!("expected header \"id,{header}\", got {got:?}"),
            });
        }
    }
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| csv_format_err(path, &e))?;
        if rec.len() != 2 {
            return Err(CoreError::Format {
                file: display(path),
                line: rec.position().map(|p| p.line()).unwrap_or(0),
                column: 0,
                message: format!("expected 2 fields, got {}", rec.len()),
            });
        }
        out.push((rec[0].to_string(), rec[1].to_string()));
    }
    Ok(out)
}

fn csv_format_err(path: &Path, e: &csv::Error) -> CoreError {
    let line = match e.kind() {
        csv::ErrorKind::Utf8 { pos, .. } => pos.as_ref().map(|p| p.line()).unwrap_or(0),
        csv::ErrorKind::UnequalLengths { pos, .. } => pos.as_ref().map(|p| p.line()).unwrap_or(0),
        _ => 0,
    };
    CoreError::Format {
        file: display(path),
        line,
        column: 0,
        message: e.to_string(),
    }
}

fn parse_f64(path: &Path, line: u64, s: &str) -> Result<f64> {
    s.parse::<f64>().map_err(|e| CoreError::Format {
        file: display(path),
        line,
        column: 0,
        message: format!("bad number {s:?}: {e}"),
    })
}

/// Write a full bundle. Rows are emitted in id order so a write → read →
/// write cycle is byte-identical.
pub fn write_bundle(bench: &Benchmark, paths: &BundlePaths) -> Result<()> {
    let ds = &bench.dataset;
    let mut order: Vec<usize> = (0..ds.len()).collect();
    order.sort_by(|&a, &b| ds.id(a).cmp(ds.id(b)));

    let feat_rows: Vec<FeatureRow> = order
        .iter()
        .map(|&i| FeatureRow {
            id: ds.id(i).0.clone(),
            feat: ds.feature(i).to_vec(),
        })
        .collect();
    write_jsonl(&paths.features, &feat_rows)?;

    let mut point_by_id: BTreeMap<&str, &TeacherPointSignal> = BTreeMap::new();
    for p in &bench.points {
        point_by_id.insert(p.image_id.as_str(), p);
    }
    let point_rows: Vec<PointRow> = point_by_id
        .values()
        .map(|p| PointRow {
            id: p.image_id.0.clone(),
            logits: p.logits,
        })
        .collect();
    write_jsonl(&paths.points, &point_rows)?;

    let pair_rows: Vec<PairRow> = bench
        .pairs
        .iter()
        .map(|p| PairRow {
            a: p.a.0.clone(),
            b: p.b.0.clone(),
            logit_a: p.logit_a,
            logit_b: p.logit_b,
        })
        .collect();
    write_jsonl(&paths.pairs, &pair_rows)?;

    let split_rows: Vec<(String, String)> = order
        .iter()
        .map(|&i| (ds.id(i).0.clone(), ds.split_of(i).as_str().to_string()))
        .collect();
    write_id_value_csv(&paths.split, "split", &split_rows)?;

    if let Some(mos_path) = &paths.mos {
        let rows: Vec<(String, String)> = order
            .iter()
            .filter_map(|&i| ds.mos_for_export(i).map(|y| (ds.id(i).0.clone(), y.to_string())))
            .collect();
        write_id_value_csv(mos_path, "mos", &rows)?;
    }
    if let Some(latent_path) = &paths.latent {
        let rows: Vec<(String, String)> = order
            .iter()
            .filter_map(|&i| ds.latent(i).map(|q| (ds.id(i).0.clone(), q.to_string())))
            .collect();
        if !rows.is_empty() {
            write_id_value_csv(latent_path, "latent", &rows)?;
        }
    }
    Ok(())
}

/// Load and cross-validate a bundle. Rows come back sorted by id; every id
/// in the side files must exist in the features file.
pub fn load_bundle(paths: &BundlePaths) -> Result<Benchmark> {
    let mut feat_rows: Vec<FeatureRow> = read_jsonl(&paths.features)?;
    if feat_rows.is_empty() {
        return Err(CoreError::InsufficientData(format!(
            "no feature rows in {}",
            display(&paths.features)
        )));
    }
    let dim = feat_rows[0].feat.len();
    for (i, row) in feat_rows.iter().enumerate() {
        if row.feat.len() != dim {
            return Err(CoreError::Format {
                file: display(&paths.features),
                line: (i + 1) as u64,
                column: 0,
                message: format!(
                    "feature row for {} has length {}, expected {dim}",
                    row.id,
                    row.feat.len()
                ),
            });
        }
    }
    feat_rows.sort_by(|a, b| a.id.cmp(&b.id));
    let ids: Vec<ImageId> = feat_rows.iter().map(|r| ImageId(r.id.clone())).collect();
    let index: BTreeMap<&str, usize> = ids
        .iter()
        .enumerate()
        .map(|(i, id)| (id.as_str(), i))
        .collect();
    let n = ids.len();

    let reference = |referencing: &Path, id: &str| CoreError::Reference {
        referencing: display(referencing),
        defining: display(&paths.features),
        id: id.to_string(),
    };

    // Split: required for every id.
    let mut split = vec![None; n];
    for (id, value) in read_id_value_csv(&paths.split, "split")? {
        let &row = index
            .get(id.as_str())
            .ok_or_else(|| reference(&paths.split, &id))?;
        let tag = Split::parse(&value).ok_or_else(|| CoreError::Format {
            file: display(&paths.split),
            line: 0,
            column: 0,
            message: format!("unknown split tag {value:?} for id {id}"),
        })?;
        split[row] = Some(tag);
    }
    let split: Vec<Split> = split
        .into_iter()
        .zip(ids.iter())
        .map(|(s, id)| {
            s.ok_or_else(|| CoreError::Reference {
                referencing: display(&paths.features),
                defining: display(&paths.split),
                id: id.0.clone(),
            })
        })
        .collect::<Result<_>>()?;

    let mut mos = vec![None; n];
    if let Some(mos_path) = &paths.mos {
        if mos_path.exists() {
            for (line, (id, value)) in read_id_value_csv(mos_path, "mos")?.into_iter().enumerate() {
                let &row = index
                    .get(id.as_str())
                    .ok_or_else(|| reference(mos_path, &id))?;
                mos[row] = Some(parse_f64(mos_path, (line + 2) as u64, &value)?);
            }
        }
    }

    let mut latent = vec![None; n];
    if let Some(latent_path) = &paths.latent {
        if latent_path.exists() {
            for (line, (id, value)) in read_id_value_csv(latent_path, "latent")?
                .into_iter()
                .enumerate()
            {
                let &row = index
                    .get(id.as_str())
                    .ok_or_else(|| reference(latent_path, &id))?;
                latent[row] = Some(parse_f64(latent_path, (line + 2) as u64, &value)?);
            }
        }
    }

    let features: Vec<f64> = feat_rows.iter().flat_map(|r| r.feat.iter().copied()).collect();
    let dataset = FeatureDataset::new(ids.clone(), dim, features, mos, latent, split)?;

    let mut points = Vec::new();
    for row in read_jsonl::<PointRow>(&paths.points)? {
        if !index.contains_key(row.id.as_str()) {
            return Err(reference(&paths.points, &row.id));
        }
        points.push(TeacherPointSignal::from_logits(ImageId(row.id), row.logits)?);
    }
    points.sort_by(|a, b| a.image_id.cmp(&b.image_id));

    let mut pairs = Vec::new();
    for row in read_jsonl::<PairRow>(&paths.pairs)? {
        for id in [&row.a, &row.b] {
            if !index.contains_key(id.as_str()) {
                return Err(reference(&paths.pairs, id));
            }
        }
        pairs.push(SupervisionPair::from_logits(
            ImageId(row.a),
            ImageId(row.b),
            row.logit_a,
            row.logit_b,
        )?);
    }

    Ok(Benchmark {
        dataset,
        points,
        pairs,
    })
}

/// A saved model: parameters, optionally optimizer state, and the seed
/// lineage that produced it. JSON round-trips value-exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub params: crate::student::Mlp,
    pub optimizer: Option<crate::student::AdamW>,
    /// Human-readable note of base seed and derivation streams.
    pub seed_lineage: String,
}

pub const CHECKPOINT_VERSION: u32 = 1;

pub fn write_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    let mut w = create(path)?;
    serde_json::to_writer(&mut w, ckpt).map_err(|e| CoreError::io(display(path), e.into()))?;
    w.write_all(b"\n").map_err(|e| CoreError::io(display(path), e))?;
    w.flush().map_err(|e| CoreError::io(display(path), e))
}

pub fn read_checkpoint(path: &Path) -> Result<Checkpoint> {
    if !path.exists() {
        return Err(CoreError::MissingArtifact(format!(
            "checkpoint {} does not exist",
            display(path)
        )));
    }
    let r = open(path)?;
    let ckpt: Checkpoint = serde_json::from_reader(r).map_err(|e| CoreError::Format {
        file: display(path),
        line: e.line() as u64,
        column: e.column() as u64,
        message: e.to_string(),
    })?;
    if ckpt.version != CHECKPOINT_VERSION {
        return Err(CoreError::Format {
            file: display(path),
            line: 0,
            column: 0,
            message: format!(
                "unsupported checkpoint version {} (expected {CHECKPOINT_VERSION})",
                ckpt.version
            ),
        });
    }
    Ok(ckpt)
}

/// Write any serializable value as a single JSON document.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value)
        .map_err(|e| CoreError::io(display(path), e.into()))?;
    w.write_all(b"\n").map_err(|e| CoreError::io(display(path), e))?;
    w.flush().map_err(|e| CoreError::io(display(path), e))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    if !path.exists() {
        return Err(CoreError::MissingArtifact(format!(
            "{} does not exist",
            display(path)
        )));
    }
    let r = open(path)?;
    serde_json::from_reader(r).map_err(|e| CoreError::Format {
        file: display(path),
        line: e.line() as u64,
        column: e.column() as u64,
        message: e.to_string(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{make_benchmark, SynthConfig};

    fn small_config() -> SynthConfig {
        SynthConfig {
            n: 40,
            pair_count: 30,
            seed: 5,
            ..SynthConfig::default()
        }
    }

    #[test]
    fn bundle_roundtrip_is_byte_identical() {
        let bench = make_benchmark(&small_config()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let first = BundlePaths::in_dir(&dir.path().join("first"));
        write_bundle(&bench, &first).unwrap();
        let loaded = load_bundle(&first).unwrap();
        let second = BundlePaths::in_dir(&dir.path().join("second"));
        write_bundle(&loaded, &second).unwrap();

        for (a, b) in [
            (&first.features, &second.features),
            (&first.points, &second.points),
            (&first.pairs, &second.pairs),
            (&first.split, &second.split),
            (first.mos.as_ref().unwrap(), second.mos.as_ref().unwrap()),
            (first.latent.as_ref().unwrap(), second.latent.as_ref().unwrap()),
        ] {
            let ba = std::fs::read(a).unwrap();
            let bb = std::fs::read(b).unwrap();
            assert_eq!(ba, bb, "files differ: {} vs {}", a.display(), b.display());
            assert!(!ba.is_empty());
        }

        // Value-exactness spot checks.
        assert_eq!(loaded.dataset.len(), bench.dataset.len());
        for i in 0..bench.dataset.len() {
            assert_eq!(loaded.dataset.feature(i), bench.dataset.feature(i));
            assert_eq!(loaded.dataset.latent(i), bench.dataset.latent(i));
            assert_eq!(loaded.dataset.split_of(i), bench.dataset.split_of(i));
        }
        assert_eq!(loaded.pairs, bench.pairs);
        assert_eq!(loaded.points, bench.points);
    }

    #[test]
    fn dangling_pair_id_is_a_reference_error() {
        let bench = make_benchmark(&small_config()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let paths = BundlePaths::in_dir(dir.path());
        write_bundle(&bench, &paths).unwrap();
        let mut content = std::fs::read_to_string(&paths.pairs).unwrap();
        content.push_str("{\"a\":\"img_00000\",\"b\":\"ghost\",\"logit_a\":0.5,\"logit_b\":0.0}\n");
        std::fs::write(&paths.pairs, content).unwrap();
        match load_bundle(&paths) {
            Err(CoreError::Reference { id, .. }) => assert_eq!(id, "ghost"),
            other => panic!("expected reference error, got {other:?}"),
        }
    }

    #[test]
    fn mixed_feature_lengths_are_a_format_error() {
        let bench = make_benchmark(&small_config()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let paths = BundlePaths::in_dir(dir.path());
        write_bundle(&bench, &paths).unwrap();
        let content = std::fs::read_to_string(&paths.features).unwrap();
        let mut lines: Vec<&str> = content.lines().collect();
        let short = "{\"id\":\"img_00000\",\"feat\":[1.0,2.0]}";
        lines[0] = short;
        std::fs::write(&paths.features, lines.join("\n")).unwrap();
        match load_bundle(&paths) {
            Err(CoreError::Format { file, .. }) => assert!(file.contains("features.jsonl")),
            other => panic!("expected format error, got {other:?}"),
        }
    }

    #[test]
    fn malformed_json_reports_line_and_column() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("rows.jsonl");
        std::fs::write(&path, "{\"id\":\"a\",\"feat\":[1.0]}\n{oops}\n").unwrap();
        match read_jsonl::<FeatureRow>(&path) {
            Err(CoreError::Format { line, column, .. }) => {
                assert_eq!(line, 2);
                assert!(column > 0);
            }
            other => panic!("expected format error, got {other:?}"),
        }
    }

    #[test]
    fn checkpoint_roundtrip_and_missing_artifact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt.json");
        assert!(matches!(
            read_checkpoint(&path),
            Err(CoreError::MissingArtifact(_))
        ));
        let params = crate::student::Mlp::init(&[4, 8, 1], 77).unwrap();
        let ckpt = Checkpoint {
            version: CHECKPOINT_VERSION,
            params,
            optimizer: None,
            seed_lineage: "base 77 / student-init".into(),
        };
        write_checkpoint(&path, &ckpt).unwrap();
        let back = read_checkpoint(&path).unwrap();
        assert_eq!(back, ckpt);

        let mut stale = ckpt.clone();
        stale.version = 99;
        write_checkpoint(&path, &stale).unwrap();
        assert!(matches!(read_checkpoint(&path), Err(CoreError::Format { .. })));
    }

    #[test]
    fn split_file_must_cover_all_ids() {
        let bench = make_benchmark(&small_config()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let paths = BundlePaths::in_dir(dir.path());
        write_bundle(&bench, &paths).unwrap();
        let content = std::fs::read_to_string(&paths.split).unwrap();
        let trimmed: Vec<&str> = content.lines().take(bench.dataset.len()).collect();
        std::fs::write(&paths.split, trimmed.join("\n")).unwrap();
        assert!(matches!(
            load_bundle(&paths),
            Err(CoreError::Reference { .. })
        ));
    }
}
