//! Named prompt templates loaded from one human-editable text file.
//!
//! ```text
//! # comment
//! [argument]
//! Debate topic: "{topic}"
//! {history}
//! ```

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::model::{Incentive, ModeratorSpec, ModeratorStyle, PersonaSpec};

pub const BUNDLED_TEMPLATES: &str = include_str!("../assets/templates.txt");

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum TemplateError {
    #[error("line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("missing template section [{0}]")]
    MissingSection(String),
    #[error("[{section}] uses unknown placeholder {{{name}}}")]
    UnknownPlaceholder { section: String, name: String },
    #[error("[{section}] must use placeholder {{{name}}}")]
    MissingPlaceholder { section: String, name: String },
    #[error("no value for {{{name}}} in [{section}]")]
    MissingValue { section: String, name: String },
    #[error("cannot read {path}: {message}")]
    Io { path: String, message: String },
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Part {
    Text(String),
    Slot(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Template {
    parts: Vec<Part>,
}

impl Template {
    fn parse(body: &str, first_line: usize) -> Result<Self, TemplateError> {
        let mut parts = Vec::new();
        let mut text = String::new();
        let mut chars = body.chars().peekable();
        let mut line = first_line;
        while let Some(c) = chars.next() {
            match c {
                '{' if chars.peek() == Some(&'{') => {
                    chars.next();
                    text.push('{');
                }
                '}' if chars.peek() == Some(&'}') => {
                    chars.next();
                    text.push('}');
                }
                '{' => {
                    let mut name = String::new();
                    loop {
                        match chars.next() {
                            Some('}') => break,
                            Some(c) if c.is_ascii_alphanumeric() || c == '_' => name.push(c),
                            _ => {
                                return Err(TemplateError::Syntax {
                                    line,
                                    message: "unterminated or malformed placeholder".into(),
                                })
                            }
                        }
                    }
                    if name.is_empty() {
                        return Err(TemplateError::Syntax { line, message: "empty placeholder {}".into() });
                    }
                    if !text.is_empty() {
                        parts.push(Part::Text(std::mem::take(&mut text)));
                    }
                    parts.push(Part::Slot(name));
                }
                '}' => {
                    return Err(TemplateError::Syntax { line, message: "unmatched }; write }} for a literal brace".into() })
                }
                c => {
                    if c == '\n' {
                        line += 1;
                    }
                    text.push(c);
                }
            }
        }
        if !text.is_empty() {
            parts.push(Part::Text(text));
        }
        Ok(Self { parts })
    }

    pub fn placeholders(&self) -> BTreeSet<&str> {
        self.parts
            .iter()
            .filter_map(|p| match p {
                Part::Slot(name) => Some(name.as_str()),
                Part::Text(_) => None,
            })
            .collect()
    }

    /// Literal text when the template has no placeholders.
    pub fn literal(&self) -> Option<String> {
        self.placeholders().is_empty().then(|| self.render_with(|_| None).unwrap_or_default())
    }

    fn render_with<'a>(&self, lookup: impl Fn(&str) -> Option<&'a str>) -> Result<String, String> {
        let mut out = String::new();
        for part in &self.parts {
            match part {
                Part::Text(t) => out.push_str(t),
                Part::Slot(name) => out.push_str(lookup(name).ok_or_else(|| name.clone())?),
            }
        }
        Ok(out)
    }
}

/// Section name, required placeholders, optional placeholders.
const SECTIONS: &[(&str, &[&str], &[&str])] = &[
    ("debater_system", &["persona_prompt", "incentive"], &["persona_name", "topic"]),
    ("incentive_truth", &[], &[]),
    ("incentive_persuasion", &[], &[]),
    ("opening_stance", &["topic"], &[]),
    ("argument", &["history"], &["topic", "round", "rounds"]),
    ("round_stance_elicitation", &["history"], &["topic", "round", "rounds"]),
    ("self_report_elicitation", &["argument"], &[]),
    ("self_report_correction", &[], &[]),
    ("moderator_neutral", &[], &[]),
    ("moderator_consensus", &[], &["topic"]),
    ("moderator_turn", &["history"], &["topic", "round", "rounds"]),
    ("closing_stance", &["stance"], &["topic", "history", "rounds"]),
    ("bias_instruction", &[], &[]),
    ("bias_correction", &[], &[]),
    ("sentiment_instruction", &[], &[]),
];

/// Every template the protocol needs, plus the hash of the source file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplateSet {
    templates: BTreeMap<String, Template>,
    sha256: String,
}

impl PromptTemplateSet {
    pub fn bundled() -> Self {
        Self::parse(BUNDLED_TEMPLATES).expect("bundled templates are valid")
    }

    pub fn from_file(path: &Path) -> Result<Self, TemplateError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| TemplateError::Io { path: path.display().to_string(), message: e.to_string() })?;
        Self::parse(&text)
    }

    pub fn parse(source: &str) -> Result<Self, TemplateError> {
        let mut raw: Vec<(String, usize, Vec<&str>)> = Vec::new();
        for (i, line) in source.lines().enumerate() {
            let lineno = i + 1;
            let trimmed = line.trim_end();
            if trimmed.starts_with('#') {
                continue;
            }
            if let Some(name) = trimmed.strip_prefix('[').and_then(|s| s.strip_suffix(']')) {
                if name.is_empty() || !name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_') {
                    return Err(TemplateError::Syntax { line: lineno, message: format!("bad section name [{name}]") });
                }
                if raw.iter().any(|(n, _, _)| n == name) {
                    return Err(TemplateError::Syntax { line: lineno, message: format!("duplicate section [{name}]") });
                }
                raw.push((name.to_string(), lineno + 1, Vec::new()));
                continue;
            }
            match raw.last_mut() {
                Some((_, _, lines)) => lines.push(trimmed),
                None if trimmed.is_empty() => {}
                None => {
                    return Err(TemplateError::Syntax { line: lineno, message: "text before the first section".into() })
                }
            }
        }

        let mut templates = BTreeMap::new();
        for (name, first_line, lines) in raw {
            let start = lines.iter().position(|l| !l.is_empty()).unwrap_or(lines.len());
            let end = lines.iter().rposition(|l| !l.is_empty()).map_or(start, |e| e + 1);
            let body = lines[start..end].join("\n");
            templates.insert(name, Template::parse(&body, first_line + start)?);
        }

        for (section, required, optional) in SECTIONS {
            let template = templates
                .get(*section)
                .ok_or_else(|| TemplateError::MissingSection(section.to_string()))?;
            let used = template.placeholders();
            for name in &used {
                if !required.contains(name) && !optional.contains(name) {
                    return Err(TemplateError::UnknownPlaceholder { section: section.to_string(), name: name.to_string() });
                }
            }
            if let Some(name) = required.iter().find(|n| !used.contains(*n)) {
                return Err(TemplateError::MissingPlaceholder { section: section.to_string(), name: name.to_string() });
            }
        }

        Ok(Self { templates, sha256: hex::encode(Sha256::digest(source.as_bytes())) })
    }

    /// Hex SHA-256 of the source text.
    pub fn sha256(&self) -> &str {
        &self.sha256
    }

    pub fn get(&self, section: &str) -> Option<&Template> {
        self.templates.get(section)
    }

    /// Fills `section` from `values`. Unused values are ignored.
    pub fn render(&self, section: &str, values: &[(&str, &str)]) -> Result<String, TemplateError> {
        let template = self
            .templates
            .get(section)
            .ok_or_else(|| TemplateError::MissingSection(section.to_string()))?;
        template
            .render_with(|name| values.iter().find(|(k, _)| *k == name).map(|(_, v)| *v))
            .map_err(|name| TemplateError::MissingValue { section: section.to_string(), name })
    }

    pub fn incentive_text(&self, incentive: Incentive) -> Result<String, TemplateError> {
        match incentive {
            Incentive::Truth => self.render("incentive_truth", &[]),
            Incentive::Persuasion => self.render("incentive_persuasion", &[]),
        }
    }

    /// System prompt for a debater persona on a topic.
    pub fn debater_system(&self, persona: &PersonaSpec, topic: &str) -> Result<String, TemplateError> {
        let incentive = self.incentive_text(persona.incentive)?;
        self.render(
            "debater_system",
            &[
                ("persona_name", &persona.name),
                ("persona_prompt", &persona.system_prompt),
                ("incentive", &incentive),
                ("topic", topic),
            ],
        )
    }

    /// Moderator spec whose system prompt is the style's template rendered for `topic`.
    pub fn moderator_spec(&self, style: ModeratorStyle, topic: &str) -> Result<ModeratorSpec, TemplateError> {
        let section = match style {
            ModeratorStyle::Neutral => "moderator_neutral",
            ModeratorStyle::ConsensusBuilder => "moderator_consensus",
        };
        Ok(ModeratorSpec { style, system_prompt: self.render(section, &[("topic", topic)])? })
    }
}
