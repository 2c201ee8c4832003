//! Prompt-ensembled class text embeddings.

use super::encoder::{l2_normalize, EncoderClient};
use crate::error::{Error, IoContext, Result};
use std::path::Path;

pub const PLACEHOLDER: &str = "{}";

/// The CLIP prompt-ensemble templates for UCF101.
pub const DEFAULT_TEMPLATES: [&str; 48] = [
    "a photo of a person {}.",
    "a video of a person {}.",
    "a example of a person {}.",
    "a demonstration of a person {}.",
    "a photo of the person {}.",
    "a video of the person {}.",
    "a example of the person {}.",
    "a demonstration of the person {}.",
    "a photo of a person using {}.",
    "a video of a person using {}.",
    "a example of a person using {}.",
    "a demonstration of a person using {}.",
    "a photo of the person using {}.",
    "a video of the person using {}.",
    "a example of the person using {}.",
    "a demonstration of the person using {}.",
    "a photo of a person doing {}.",
    "a video of a person doing {}.",
    "a example of a person doing {}.",
    "a demonstration of a person doing {}.",
    "a photo of the person doing {}.",
    "a video of the person doing {}.",
    "a example of the person doing {}.",
    "a demonstration of the person doing {}.",
    "a photo of a person during {}.",
    "a video of a person during {}.",
    "a example of a person during {}.",
    "a demonstration of a person during {}.",
    "a photo of the person during {}.",
    "a video of the person during {}.",
    "a example of the person during {}.",
    "a demonstration of the person during {}.",
    "a photo of a person performing {}.",
    "a video of a person performing {}.",
    "a example of a person performing {}.",
    "a demonstration of a person performing {}.",
    "a photo of the person performing {}.",
    "a video of the person performing {}.",
    "a example of the person performing {}.",
    "a demonstration of the person performing {}.",
    "a photo of a person practicing {}.",
    "a video of a person practicing {}.",
    "a example of a person practicing {}.",
    "a demonstration of a person practicing {}.",
    "a photo of the person practicing {}.",
    "a video of the person practicing {}.",
    "a example of the person practicing {}.",
    "a demonstration of the person practicing {}.",
];

pub fn default_templates() -> Vec<String> {
    DEFAULT_TEMPLATES.iter().map(|t| t.to_string()).collect()
}

/// One template per non-empty line, each with exactly one `{}`.
pub fn read_templates(path: &Path) -> Result<Vec<String>> {
    let text = std::fs::read_to_string(path).at(path)?;
    let templates: Vec<String> = text.lines().map(str::trim_end).filter(|l| !l.is_empty()).map(String::from).collect();
    validate_templates(&templates)?;
    Ok(templates)
}

pub fn validate_templates(templates: &[String]) -> Result<()> {
    if templates.is_empty() {
        return Err(Error::InvalidArgument("at least one prompt template is required".into()));
    }
    if let Some(t) = templates.iter().find(|t| t.matches(PLACEHOLDER).count() != 1) {
        return Err(Error::InvalidArgument(format!("template `{t}` must contain exactly one `{PLACEHOLDER}`")));
    }
    Ok(())
}

/// `ApplyEyeMakeup` -> `Apply Eye Makeup`; underscores become spaces.
pub fn humanize_class_name(name: &str) -> String {
    let chars: Vec<char> = name.chars().collect();
    let mut out = String::with_capacity(name.len() + 4);
    for (i, &c) in chars.iter().enumerate() {
        if c == '_' {
            out.push(' ');
            continue;
        }
        if i > 0 {
            let prev = chars[i - 1];
            let next_lower = chars.get(i + 1).is_some_and(|n| n.is_lowercase());
            let boundary = (c.is_uppercase() && (prev.is_lowercase() || prev.is_ascii_digit()))
                || (c.is_uppercase() && prev.is_uppercase() && next_lower)
                || (c.is_ascii_digit() && prev.is_alphabetic())
                || (c.is_alphabetic() && prev.is_ascii_digit());
            if boundary && !out.ends_with(' ') {
                out.push(' ');
            }
        }
        out.push(c);
    }
    out
}

pub fn render_prompt(template: &str, class_name: &str) -> String {
    template.replacen(PLACEHOLDER, &humanize_class_name(class_name), 1)
}

/// Per-class unit-norm text embeddings, row order matching `class_names`.
#[derive(Clone, Debug, PartialEq)]
pub struct ClassTextLibrary {
    pub class_names: Vec<String>,
    pub templates: Vec<String>,
    pub dim: usize,
    embeddings: Vec<f32>,
}

impl ClassTextLibrary {
    pub fn from_rows(class_names: Vec<String>, templates: Vec<String>, rows: Vec<Vec<f32>>) -> Result<Self> {
        let dim = rows.first().map_or(0, Vec::len);
        if rows.len() != class_names.len() || dim == 0 {
            return Err(Error::InvalidArgument("one non-empty embedding row per class is required".into()));
        }
        let mut embeddings = Vec::with_capacity(rows.len() * dim);
        for r in &rows {
            if r.len() != dim {
                return Err(Error::DimensionMismatch { expected: dim, found: r.len() });
            }
            embeddings.extend(l2_normalize(r)?);
        }
        Ok(Self { class_names, templates, dim, embeddings })
    }

    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn row(&self, class: usize) -> &[f32] {
        &self.embeddings[class * self.dim..(class + 1) * self.dim]
    }
}

/// Renders every template for every class, embeds and L2-normalises each
/// prompt, averages per class, and re-normalises the mean.
pub fn build_text_library(
    class_names: &[String],
    templates: &[String],
    encoder: &dyn EncoderClient,
) -> Result<ClassTextLibrary> {
    if class_names.is_empty() {
        return Err(Error::InvalidArgument("class list is empty".into()));
    }
    validate_templates(templates)?;
    let prompts: Vec<String> =
        class_names.iter().flat_map(|c| templates.iter().map(move |t| render_prompt(t, c))).collect();
    let embedded = encoder.encode_texts(&prompts)?;
    let k = templates.len();
    let mut rows = Vec::with_capacity(class_names.len());
    for chunk in embedded.chunks(k) {
        let dim = chunk[0].len();
        let mut mean = vec![0.0f64; dim];
        for e in chunk {
            if e.len() != dim {
                return Err(Error::DimensionMismatch { expected: dim, found: e.len() });
            }
            for (m, v) in mean.iter_mut().zip(l2_normalize(e)?) {
                *m += v as f64;
            }
        }
        rows.push(mean.iter().map(|m| (m / k as f64) as f32).collect());
    }
    ClassTextLibrary::from_rows(class_names.to_vec(), templates.to_vec(), rows)
}
