//! Prompt templates.
//!
//! Placeholders are written `[NAME]`. Rendering is a single left-to-right
//! pass: bound values are inserted verbatim and never rescanned.

use std::collections::BTreeMap;

use sha2::{Digest, Sha256};

pub const DATASET_GEN: &str = "dataset_gen";
pub const VISIBILITY: &str = "visibility";
pub const EDIT_FUNCTION: &str = "edit_function";
pub const REFINE: &str = "refine";
pub const GENERATE: &str = "generate";
pub const EXTRACT_PAIRS: &str = "extract_pairs";
pub const MAP_FUNCTION: &str = "map_function";
pub const ALTERNATIVES: &str = "alternatives";

const BUILTIN: &[(&str, &str)] = &[
    (
        DATASET_GEN,
        "a realistic [Object_Name] shown in an isometric perspective and in a clean background",
    ),
    (VISIBILITY, "analyze if this function is visible in the image"),
    (EDIT_FUNCTION, "change [FUNCTION] from [SOLUTION_A] to [SOLUTION_B]"),
    (
        REFINE,
        "Refine the design description for the sketched product concept.\n\
         User description: [TRANSCRIPT]\n\
         Answer with exactly these lines:\n\
         description: <one sentence describing the concept>\n\
         style: <style requirements>\n\
         placement: <placement requirements>\n\
         category: <one of: [CATEGORIES]>",
    ),
    (GENERATE, "[DESCRIPTION] Style: [STYLE]. Placement: [PLACEMENT]."),
    (
        EXTRACT_PAIRS,
        "Identify the design functions of the product in the image and how each is realised.\n\
         Concept description: [DESCRIPTION]\n\
         Answer with one line per function, formatted as `function: solution`, and nothing else.",
    ),
    (
        MAP_FUNCTION,
        "Each component of the product in the image is overlaid with a distinct transparent \
         color. Colors present: [COLORS].\n\
         Which color region is most likely associated with the function \"[FUNCTION]\"? \
         Answer with the color name only.",
    ),
    (
        ALTERNATIVES,
        "Function: [FUNCTION]\n\
         Current solution: [SOLUTION]\n\
         Propose exactly two alternative solutions that differ from the current one. \
         Answer with one solution per line and nothing else.",
    ),
];

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum TemplateError {
    #[error("unknown template {0:?}")]
    UnknownTemplate(String),
    #[error("template {template:?} needs a binding for [{name}]")]
    MissingPlaceholder { template: String, name: String },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplate {
    pub id: String,
    pub template: String,
    pub placeholders: Vec<String>,
}

enum Piece<'a> {
    Text(&'a str),
    Slot(&'a str),
}

fn pieces(template: &str) -> Vec<Piece<'_>> {
    let mut out = Vec::new();
    let mut rest = template;
    while let Some(open) = rest.find('[') {
        let Some(close) = rest[open..].find(']').map(|c| open + c) else {
            break;
        };
        let name = &rest[open + 1..close];
        let is_name = !name.is_empty()
            && name
                .chars()
                .all(|c| c.is_ascii_alphanumeric() || c == '_');
        if !is_name {
            out.push(Piece::Text(&rest[..open + 1]));
            rest = &rest[open + 1..];
            continue;
        }
        out.push(Piece::Text(&rest[..open]));
        out.push(Piece::Slot(name));
        rest = &rest[close + 1..];
    }
    out.push(Piece::Text(rest));
    out
}

impl PromptTemplate {
    pub fn new(id: impl Into<String>, template: impl Into<String>) -> Self {
        let template = template.into();
        let mut placeholders: Vec<String> = Vec::new();
        for p in pieces(&template) {
            if let Piece::Slot(name) = p {
                if !placeholders.iter().any(|n| n == name) {
                    placeholders.push(name.to_owned());
                }
            }
        }
        Self {
            id: id.into(),
            template,
            placeholders,
        }
    }

    pub fn render(&self, bindings: &[(&str, &str)]) -> Result<String, TemplateError> {
        let mut out = String::with_capacity(self.template.len());
        for p in pieces(&self.template) {
            match p {
                Piece::Text(t) => out.push_str(t),
                Piece::Slot(name) => {
                    let value = bindings
                        .iter()
                        .find(|(k, _)| *k == name)
                        .map(|(_, v)| *v)
                        .ok_or_else(|| TemplateError::MissingPlaceholder {
                            template: self.id.clone(),
                            name: name.to_owned(),
                        })?;
                    out.push_str(value);
                }
            }
        }
        Ok(out)
    }
}

/// Registry of prompt templates keyed by id.
#[derive(Debug, Clone)]
pub struct TemplateRegistry {
    templates: BTreeMap<String, PromptTemplate>,
}

impl Default for TemplateRegistry {
    fn default() -> Self {
        Self::builtin()
    }
}

impl TemplateRegistry {
    pub fn builtin() -> Self {
        Self {
            templates: BUILTIN
                .iter()
                .map(|(id, t)| (id.to_string(), PromptTemplate::new(*id, *t)))
                .collect(),
        }
    }

    pub fn get(&self, id: &str) -> Result<&PromptTemplate, TemplateError> {
        self.templates
            .get(id)
            .ok_or_else(|| TemplateError::UnknownTemplate(id.to_owned()))
    }

    pub fn render(&self, id: &str, bindings: &[(&str, &str)]) -> Result<String, TemplateError> {
        self.get(id)?.render(bindings)
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.templates.keys().map(String::as_str)
    }

    /// SHA-256 over `id \0 template \0` for every template in id order.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        for t in self.templates.values() {
            h.update(t.id.as_bytes());
            h.update([0]);
            h.update(t.template.as_bytes());
            h.update([0]);
        }
        hex::encode(h.finalize())
    }
}

/// Render a builtin template.
pub fn render_template(id: &str, bindings: &[(&str, &str)]) -> Result<String, TemplateError> {
    TemplateRegistry::builtin().render(id, bindings)
}

/// Render the edit prompt from two full solution phrases that share a
/// leading function name, e.g. "wheel size 19 inches" and "wheel size 20
/// inches". The longest shared run of leading words becomes `[FUNCTION]`.
pub fn render_edit_phrases(solution_a: &str, solution_b: &str) -> Result<String, TemplateError> {
    let (wa, wb): (Vec<&str>, Vec<&str>) = (
        solution_a.split_whitespace().collect(),
        solution_b.split_whitespace().collect(),
    );
    let shared = wa
        .iter()
        .zip(&wb)
        .take_while(|(x, y)| x == y)
        .count()
        .min(wa.len().saturating_sub(1))
        .min(wb.len().saturating_sub(1));
    let function = wa[..shared].join(" ");
    let (a, b) = (wa[shared..].join(" "), wb[shared..].join(" "));
    render_template(
        EDIT_FUNCTION,
        &[("FUNCTION", &function), ("SOLUTION_A", &a), ("SOLUTION_B", &b)],
    )
}
