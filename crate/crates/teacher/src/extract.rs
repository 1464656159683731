//! Pull quality-token logits out of chat-completion responses.

use crate::TeacherError;
use qdistill_core::signals::QualityToken;

/// How far below the weakest returned alternative a missing token is
/// placed. Keeps the downstream softmax well-defined when the endpoint
/// truncates its alternatives list.
pub const MISSING_TOKEN_GAP: f64 = 10.0;

/// What `extract_point_logits` found: the canonical-order logits plus
/// which quality words had to be floored because the endpoint did not
/// return them.
#[derive(Debug, Clone, PartialEq)]
pub struct PointExtraction {
    pub logits: [f64; 5],
    pub floored: Vec<&'static str>,
}

fn unparseable(reason: &str, raw: &serde_json::Value) -> TeacherError {
    TeacherError::Unparseable {
        reason: reason.to_string(),
        raw: raw.to_string(),
    }
}

/// The (token, logprob) alternatives at the first answer position.
fn top_logprobs(response: &serde_json::Value) -> Result<Vec<(String, f64)>, TeacherError> {
    let top = &response["choices"][0]["logprobs"]["content"][0]["top_logprobs"];
    let arr = top
        .as_array()
        .ok_or_else(|| unparseable("no top_logprobs at the first answer token", response))?;
    let mut out = Vec::with_capacity(arr.len());
    for alt in arr {
        let token = alt["token"]
            .as_str()
            .ok_or_else(|| unparseable("alternative without a token string", response))?;
        let lp = alt["logprob"]
            .as_f64()
            .ok_or_else(|| unparseable("alternative without a numeric logprob", response))?;
        out.push((token.to_string(), lp));
    }
    if out.is_empty() {
        return Err(unparseable("empty top_logprobs list", response));
    }
    Ok(out)
}

/// Extract the five quality-word logits in canonical order
/// (excellent, good, fair, poor, bad).
///
/// Matching is case-insensitive and tolerates surrounding whitespace in
/// the returned tokens. Words absent from the alternatives get the floor
/// value `min(returned logprobs) − 10`; at least one word must be present.
pub fn extract_point_logits(
    response: &serde_json::Value,
) -> Result<PointExtraction, TeacherError> {
    let alts = top_logprobs(response)?;
    let min = alts
        .iter()
        .map(|(_, lp)| *lp)
        .fold(f64::INFINITY, f64::min);
    let floor = min - MISSING_TOKEN_GAP;

    let mut logits = [0.0; 5];
    let mut floored = Vec::new();
    let mut any = false;
    for (k, token) in QualityToken::ALL.iter().enumerate() {
        // Among duplicates (e.g. "Good" and " good"), keep the likeliest.
        let best = alts
            .iter()
            .filter(|(t, _)| t.trim().eq_ignore_ascii_case(token.word()))
            .map(|(_, lp)| *lp)
            .fold(f64::NEG_INFINITY, f64::max);
        if best.is_finite() {
            logits[k] = best;
            any = true;
        } else {
            logits[k] = floor;
            floored.push(token.word());
        }
    }
    if !any {
        return Err(unparseable(
            "no quality word among the returned alternatives",
            response,
        ));
    }
    Ok(PointExtraction { logits, floored })
}

/// Extract the (A, B) preference logits. Both tokens must be present.
pub fn extract_pair_logits(response: &serde_json::Value) -> Result<(f64, f64), TeacherError> {
    let alts = top_logprobs(response)?;
    let find = |want: &str| -> Option<f64> {
        alts.iter()
            .filter(|(t, _)| t.trim() == want)
            .map(|(_, lp)| *lp)
            .fold(None, |acc: Option<f64>, lp| Some(acc.map_or(lp, |a| a.max(lp))))
    };
    match (find("A"), find("B")) {
        (Some(a), Some(b)) => Ok((a, b)),
        (a, b) => Err(unparseable(
            &format!(
                "decision token missing: A {}, B {}",
                if a.is_some() { "present" } else { "absent" },
                if b.is_some() { "present" } else { "absent" }
            ),
            response,
        )),
    }
}
