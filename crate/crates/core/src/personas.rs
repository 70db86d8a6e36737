//! Persona catalog: stable persona names mapped to their prompt packages.

use std::path::Path;

use serde::Deserialize;

use crate::model::PersonaSpec;

pub const BUNDLED_PERSONAS: &str = include_str!("../assets/personas.json");

#[derive(Debug, thiserror::Error)]
pub enum PersonaError {
    #[error("cannot read {path}: {message}")]
    Io { path: String, message: String },
    #[error("invalid persona file: {0}")]
    Json(#[from] serde_json::Error),
    #[error("invalid persona {name:?}: {message}")]
    Invalid { name: String, message: String },
    #[error("unknown persona {name:?}; known: {known}")]
    Unknown { name: String, known: String },
}

#[derive(Deserialize)]
struct PersonaFile {
    personas: Vec<PersonaSpec>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PersonaCatalog {
    personas: Vec<PersonaSpec>,
}

/// Lower-case, with `-`/`_` runs and whitespace collapsed to single spaces.
fn normalize(name: &str) -> String {
    name.split(|c: char| c.is_whitespace() || c == '-' || c == '_')
        .filter(|w| !w.is_empty())
        .map(str::to_lowercase)
        .collect::<Vec<_>>()
        .join(" ")
}

impl PersonaCatalog {
    pub fn bundled() -> Self {
        Self::parse(BUNDLED_PERSONAS).expect("bundled personas are valid")
    }

    pub fn from_file(path: &Path) -> Result<Self, PersonaError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| PersonaError::Io { path: path.display().to_string(), message: e.to_string() })?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, PersonaError> {
        let file: PersonaFile = serde_json::from_str(text)?;
        let mut seen = std::collections::HashSet::new();
        for p in &file.personas {
            let invalid = |message: &str| PersonaError::Invalid { name: p.name.clone(), message: message.into() };
            if p.name.trim().is_empty() {
                return Err(invalid("name is empty"));
            }
            if p.system_prompt.trim().is_empty() {
                return Err(invalid("system_prompt is empty"));
            }
            if !seen.insert(normalize(&p.name)) {
                return Err(invalid("listed twice"));
            }
        }
        Ok(Self { personas: file.personas })
    }

    /// Case-, hyphen- and underscore-insensitive lookup.
    pub fn get(&self, name: &str) -> Result<&PersonaSpec, PersonaError> {
        let key = normalize(name);
        self.personas.iter().find(|p| normalize(&p.name) == key).ok_or_else(|| PersonaError::Unknown {
            name: name.to_string(),
            known: self.names().join(", "),
        })
    }

    pub fn names(&self) -> Vec<&str> {
        self.personas.iter().map(|p| p.name.as_str()).collect()
    }
}
