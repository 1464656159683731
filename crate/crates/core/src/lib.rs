//! Distills a teacher's quality judgments into a lightweight student
//! regressor and calibrates it to a human opinion-score scale.
//!
//! The crate is organized around the two training stages:
//!
//! 1. **Teacher-guided distillation** — the student learns from dense
//!    teacher signals: per-image soft scores ([`signals::TeacherPointSignal`])
//!    and confidence-weighted pairwise preferences
//!    ([`signals::SupervisionPair`]), with no opinion-score labels.
//! 2. **Calibration fine-tuning** — a small labeled subset aligns the
//!    student's output scale with human scores via a joint MSE +
//!    correlation objective.
//!
//! [`synth`] generates a self-contained benchmark with a simulated teacher
//! so the whole pipeline runs without any external model, and [`io`]
//! defines the on-disk formats shared with harvested real signals.

pub mod ablation;
pub mod error;
pub mod io;
pub mod losses;
pub mod metrics;
pub mod pipeline;
pub mod seed;
pub mod signals;
pub mod student;
pub mod synth;

pub use error::CoreError;

/// Opaque image identifier used across datasets, signal files, and pairs.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, serde::Serialize, serde::Deserialize)]
#[serde(transparent)]
pub struct ImageId(pub String);

impl ImageId {
    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl std::fmt::Display for ImageId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for ImageId {
    fn from(s: &str) -> Self {
        ImageId(s.to_string())
    }
}

impl From<String> for ImageId {
    fn from(s: String) -> Self {
        ImageId(s)
    }
}

impl std::borrow::Borrow<str> for ImageId {
    fn borrow(&self) -> &str {
        &self.0
    }
}
