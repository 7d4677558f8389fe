use serde::{Deserialize, Serialize};

pub const BACKGROUND: &str = "background";

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum SchemaError {
    #[error("schema must list {BACKGROUND:?} first")]
    MissingBackground,
    #[error("schema has no component classes")]
    NoComponents,
    #[error("duplicate class label {0:?}")]
    DuplicateLabel(String),
    #[error("schema has {0} classes; labels are 8-bit")]
    TooManyClasses(usize),
}

/// Component classes of one product category. Index 0 is background.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassSchema {
    pub category: String,
    pub classes: Vec<String>,
}

impl ClassSchema {
    pub fn new(category: impl Into<String>, components: &[&str]) -> Self {
        let mut classes = vec![BACKGROUND.to_owned()];
        classes.extend(components.iter().map(|c| c.to_string()));
        Self {
            category: category.into(),
            classes,
        }
    }

    pub fn validate(&self) -> Result<(), SchemaError> {
        if self.classes.first().map(String::as_str) != Some(BACKGROUND) {
            return Err(SchemaError::MissingBackground);
        }
        if self.classes.len() < 2 {
            return Err(SchemaError::NoComponents);
        }
        if self.classes.len() > 256 {
            return Err(SchemaError::TooManyClasses(self.classes.len()));
        }
        for (i, c) in self.classes.iter().enumerate() {
            if self.classes[..i].contains(c) {
                return Err(SchemaError::DuplicateLabel(c.clone()));
            }
        }
        Ok(())
    }

    /// Number of classes including background.
    pub fn num_classes(&self) -> usize {
        self.classes.len()
    }

    pub fn components(&self) -> &[String] {
        &self.classes[1..]
    }

    pub fn label(&self, index: u8) -> Option<&str> {
        self.classes.get(index as usize).map(String::as_str)
    }

    pub fn index_of(&self, label: &str) -> Option<u8> {
        self.classes.iter().position(|c| c == label).map(|i| i as u8)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn validation() {
        assert!(ClassSchema::new("car", &["body", "wheel"]).validate().is_ok());
        let dup = ClassSchema::new("car", &["body", "body"]);
        assert_eq!(dup.validate(), Err(SchemaError::DuplicateLabel("body".into())));
        let no_bg = ClassSchema {
            category: "x".into(),
            classes: vec!["a".into()],
        };
        assert_eq!(no_bg.validate(), Err(SchemaError::MissingBackground));
        assert_eq!(ClassSchema::new("x", &[]).validate(), Err(SchemaError::NoComponents));
    }
}
