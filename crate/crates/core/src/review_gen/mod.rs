//! Review text generation: Likert sentiment labels, prompt assembly, the
//! fine-tuning corpus, and pluggable text backends. The " ||" separator
//! terminates the prompt region so generated text can be stripped of it
//! unambiguously.

pub mod lm;

use std::collections::BTreeMap;

use crate::data::{Dataset, ItemAttributes, RatingScale};
use crate::error::{Error, Result};
use crate::rating_gen::FakeRatingMatrix;

pub const PROMPT_SEPARATOR: &str = "||";

const LABELS: [&str; 5] = ["Very Poor", "Poor", "Average", "Good", "Excellent"];

/// Map an integer rating onto the five satisfaction labels. Scales other
/// than 5-point bucket linearly.
pub fn sentiment_label(r: i64, scale: RatingScale) -> Result<&'static str> {
    if r < scale.min || r > scale.max {
        return Err(Error::RatingOutOfScale {
            rating: r as f64,
            min: scale.min,
            max: scale.max,
            user: String::new(),
            item: String::new(),
        });
    }
    let levels = (scale.max - scale.min + 1) as i64;
    let idx = ((r - scale.min) * 5 / levels).min(4) as usize;
    Ok(LABELS[idx])
}

fn sentiment_adjective(label: &str) -> String {
    label.to_lowercase()
}

#[derive(Debug, Clone, PartialEq)]
pub struct PromptSpec {
    pub sentiment_label: String,
    pub item_name: String,
    pub rendered: String,
}

pub fn build_prompt(r: i64, item: &ItemAttributes, scale: RatingScale) -> Result<PromptSpec> {
    let label = sentiment_label(r, scale)?;
    let name = if item.name.is_empty() { item.item_external_id.clone() } else { item.name.clone() };
    if name.is_empty() {
        return Err(Error::invalid("item has no usable name for prompting"));
    }
    Ok(PromptSpec {
        sentiment_label: label.to_string(),
        item_name: name.clone(),
        rendered: format!("{label} {name} {PROMPT_SEPARATOR}"),
    })
}

/// One line per train interaction with a non-empty review:
/// "<sentiment> <item name> || <review>".
pub fn build_training_corpus(ds: &Dataset) -> Vec<String> {
    let mut out = Vec::new();
    for (u, i, v) in ds.ratings.iter() {
        let review = match ds.review(u, i) {
            Some(t) if !t.is_empty() => t,
            _ => continue,
        };
        let prompt = match build_prompt(v.round() as i64, &ds.attributes[i], ds.scale) {
            Ok(p) => p,
            Err(_) => continue,
        };
        out.push(format!("{} {}", prompt.rendered, review));
    }
    out
}

/// Text generation backend. Fine-tuning mutates state; generation on a
/// frozen backend is seeded per call.
pub trait TextBackend {
    fn kind(&self) -> &'static str;
    /// Returns the per-epoch mean NLL trace (empty for non-trainable kinds).
    fn fine_tune(&mut self, corpus: &[String], epochs: usize, seed: u64) -> Result<Vec<f64>>;
    fn generate(&self, prompt: &PromptSpec, seed: u64) -> String;
    fn save(&self, dir: &std::path::Path) -> Result<()>;
}

/// Fixed-sentence backend: no training, no model artifacts, full pipeline
/// coverage in tests.
#[derive(Debug, Clone, Default)]
pub struct DeterministicBackend;

pub fn deterministic_review_text(label: &str, item_name: &str) -> String {
    format!("{label} product. This {item_name} is {}.", sentiment_adjective(label))
}

impl TextBackend for DeterministicBackend {
    fn kind(&self) -> &'static str {
        "deterministic-template"
    }

    fn fine_tune(&mut self, _corpus: &[String], _epochs: usize, _seed: u64) -> Result<Vec<f64>> {
        Ok(Vec::new())
    }

    fn generate(&self, prompt: &PromptSpec, _seed: u64) -> String {
        deterministic_review_text(&prompt.sentiment_label, &prompt.item_name)
    }

    fn save(&self, _dir: &std::path::Path) -> Result<()> {
        Ok(())
    }
}

pub fn backend_from_name(name: &str) -> Result<Box<dyn TextBackend>> {
    match name {
        "deterministic-template" => Ok(Box::new(DeterministicBackend)),
        "causal-lm" => Ok(Box::new(lm::CausalLmBackend::default())),
        other => Err(Error::UnknownName {
            kind: "text backend",
            name: other.into(),
            known: "deterministic-template, causal-lm".into(),
        }),
    }
}

pub fn fine_tune(backend: &mut dyn TextBackend, corpus: &[String], epochs: usize, seed: u64) -> Result<Vec<f64>> {
    backend.fine_tune(corpus, epochs, seed)
}

pub fn generate_review(backend: &dyn TextBackend, prompt: &PromptSpec, seed: u64) -> String {
    backend.generate(prompt, seed)
}

/// One review per nonzero fake rating, keyed (fake user row, item).
pub fn generate_reviews(
    backend: &dyn TextBackend,
    fakes: &FakeRatingMatrix,
    ds: &Dataset,
    seed: u64,
) -> Result<BTreeMap<(usize, usize), String>> {
    let mut out = BTreeMap::new();
    for (u, i, v) in fakes.ratings.iter() {
        let prompt = build_prompt(v.round() as i64, &ds.attributes[i], ds.scale)?;
        let review_seed = seed
            .wrapping_mul(0x9e37_79b9_7f4a_7c15)
            .wrapping_add((u as u64) << 32 | i as u64);
        out.insert((u, i), backend.generate(&prompt, review_seed));
    }
    Ok(out)
}
