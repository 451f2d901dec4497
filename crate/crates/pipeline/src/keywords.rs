//! Element keywords and the shipped vocabulary.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{PipelineError, Result};

pub const VOCABULARY_VERSION: &str = "v1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Category {
    ConcreteObject,
    AbstractLocal,
    AbstractGlobal,
}

impl Category {
    pub const ALL: [Category; 3] = [Category::ConcreteObject, Category::AbstractLocal, Category::AbstractGlobal];

    pub fn as_str(&self) -> &'static str {
        match self {
            Category::ConcreteObject => "concrete-object",
            Category::AbstractLocal => "abstract-local",
            Category::AbstractGlobal => "abstract-global",
        }
    }

    pub fn is_concrete(&self) -> bool {
        matches!(self, Category::ConcreteObject)
    }

    pub fn vocabulary(&self) -> &'static [&'static str] {
        match self {
            Category::ConcreteObject => CONCRETE,
            Category::AbstractLocal => ABSTRACT_LOCAL,
            Category::AbstractGlobal => ABSTRACT_GLOBAL,
        }
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Category {
    type Err = PipelineError;

    fn from_str(s: &str) -> Result<Self> {
        Category::ALL
            .into_iter()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| PipelineError::Input(format!("unknown keyword category `{s}`")))
    }
}

const CONCRETE: &[&str] = &[
    "backpack", "handbag", "umbrella", "teapot", "bicycle", "lamp", "armchair", "sneaker", "hat", "scarf",
    "vase", "guitar", "clock", "mug", "dog", "cat", "sunflower", "camera", "bottle", "kite",
];

const ABSTRACT_LOCAL: &[&str] = &[
    "texture", "material", "pattern", "color", "hairstyle", "makeup", "pose", "expression", "fabric weave",
    "surface finish", "embroidery", "stripe layout",
];

const ABSTRACT_GLOBAL: &[&str] = &[
    "lighting", "art style", "color palette", "mood", "design style", "time of day", "weather", "lens blur",
    "film grain", "composition",
];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Keyword {
    pub text: String,
    pub category: Category,
}

impl Keyword {
    pub fn new(text: impl Into<String>, category: Category) -> Result<Self> {
        let text = text.into();
        if text.trim().is_empty() {
            return Err(PipelineError::Input("keyword text is empty".into()));
        }
        Ok(Self { text, category })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn categories_round_trip() {
        for c in Category::ALL {
            assert_eq!(c.as_str().parse::<Category>().unwrap(), c);
            assert_eq!(serde_json::to_string(&c).unwrap(), format!("\"{c}\""));
            assert!(!c.vocabulary().is_empty());
        }
        assert!("abstract".parse::<Category>().is_err());
    }

    #[test]
    fn empty_keyword_rejected() {
        assert!(Keyword::new("  ", Category::AbstractLocal).is_err());
    }
}
