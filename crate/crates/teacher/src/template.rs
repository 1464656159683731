//! Prompt templates for the two judgment requests.
//!
//! Templates are plain text files with placeholder slots: the point prompt
//! needs `{image}`, the pair prompt needs `{image_a}` and `{image_b}`. The
//! placeholder marks where the image content part is spliced into the chat
//! message; the surrounding text becomes text parts. The bundled defaults
//! are written from scratch and make the constrained answer format explicit
//! (one word out of five, or a single A/B token).

use crate::TeacherError;
use qdistill_core::signals::QualityToken;
use std::fs;
use std::path::Path;

pub const POINT_SLOT: &str = "{image}";
pub const PAIR_SLOT_A: &str = "{image_a}";
pub const PAIR_SLOT_B: &str = "{image_b}";

const DEFAULT_POINT: &str = include_str!("../templates/point_prompt.txt");
const DEFAULT_PAIR: &str = include_str!("../templates/pair_prompt.txt");

/// The pair of prompt templates used by a harvest.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplates {
    pub point: String,
    pub pair: String,
}

impl Default for PromptTemplates {
    fn default() -> Self {
        PromptTemplates {
            point: DEFAULT_POINT.to_string(),
            pair: DEFAULT_PAIR.to_string(),
        }
    }
}

impl PromptTemplates {
    /// Load `point_prompt.txt` and `pair_prompt.txt` from a directory.
    pub fn load(dir: &Path) -> Result<PromptTemplates, TeacherError> {
        let read = |name: &str| -> Result<String, TeacherError> {
            fs::read_to_string(dir.join(name)).map_err(|e| {
                TeacherError::Template(format!("cannot read {}: {e}", dir.join(name).display()))
            })
        };
        let t = PromptTemplates {
            point: read("point_prompt.txt")?,
            pair: read("pair_prompt.txt")?,
        };
        t.validate()?;
        Ok(t)
    }

    /// Check both templates have their slots and constrain the answer.
    pub fn validate(&self) -> Result<(), TeacherError> {
        validate_point_template(&self.point)?;
        validate_pair_template(&self.pair)
    }
}

pub fn validate_point_template(template: &str) -> Result<(), TeacherError> {
    if !template.contains(POINT_SLOT) {
        return Err(TeacherError::Template(format!(
            "point template is missing the {POINT_SLOT} slot"
        )));
    }
    let lower = template.to_lowercase();
    for token in QualityToken::ALL {
        if !lower.contains(&token.word().to_lowercase()) {
            return Err(TeacherError::Template(format!(
                "point template does not list the candidate word \"{}\"",
                token.word()
            )));
        }
    }
    Ok(())
}

pub fn validate_pair_template(template: &str) -> Result<(), TeacherError> {
    for slot in [PAIR_SLOT_A, PAIR_SLOT_B] {
        if !template.contains(slot) {
            return Err(TeacherError::Template(format!(
                "pair template is missing the {slot} slot"
            )));
        }
    }
    Ok(())
}

/// Split a template at its slots into alternating text and slot pieces.
/// Returns the text segments between slots, in order; `slots` gives the
/// order in which the named slots appeared.
pub(crate) fn split_slots<'a>(
    template: &'a str,
    slot_names: &[&str],
) -> (Vec<&'a str>, Vec<String>) {
    let mut texts = Vec::new();
    let mut slots = Vec::new();
    let mut rest = template;
    loop {
        let hit = slot_names
            .iter()
            .filter_map(|s| rest.find(s).map(|pos| (pos, *s)))
            .min();
        match hit {
            Some((pos, name)) => {
                texts.push(&rest[..pos]);
                slots.push(name.to_string());
                rest = &rest[pos + name.len()..];
            }
            None => {
                texts.push(rest);
                return (texts, slots);
            }
        }
    }
}

/// Render the point prompt: text around the single image slot.
pub fn render_point_prompt(
    template: &str,
    image_ref: &str,
) -> Result<Vec<(String, bool)>, TeacherError> {
    validate_point_template(template)?;
    Ok(render(template, &[(POINT_SLOT, image_ref)]))
}

/// Render the pair prompt with both image slots filled.
pub fn render_pair_prompt(
    template: &str,
    image_a: &str,
    image_b: &str,
) -> Result<Vec<(String, bool)>, TeacherError> {
    validate_pair_template(template)?;
    Ok(render(template, &[(PAIR_SLOT_A, image_a), (PAIR_SLOT_B, image_b)]))
}

/// Produce the ordered content parts: `(value, is_image)` where text parts
/// carry the literal text and image parts carry the image reference.
fn render(template: &str, fills: &[(&str, &str)]) -> Vec<(String, bool)> {
    let names: Vec<&str> = fills.iter().map(|(n, _)| *n).collect();
    let (texts, slots) = split_slots(template, &names);
    let mut parts = Vec::new();
    for (i, text) in texts.iter().enumerate() {
        let trimmed = text.trim();
        if !trimmed.is_empty() {
            parts.push((trimmed.to_string(), false));
        }
        if let Some(slot) = slots.get(i) {
            let fill = fills
                .iter()
                .find(|(n, _)| n == slot)
                .map(|(_, v)| *v)
                .expect("slot name comes from fills");
            parts.push((fill.to_string(), true));
        }
    }
    parts
}
