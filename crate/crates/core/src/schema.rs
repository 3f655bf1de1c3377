//! Table schema: type attributes, their code dictionaries and key widths.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::ServerError;
use crate::prefix_tree::KeyLayout;
use crate::sum_tree::MAX_POWERS;

pub const DEFAULT_TYPE_WIDTH: u8 = 8;
pub const DEFAULT_POWERS: usize = 2;

fn default_width() -> u8 {
    DEFAULT_TYPE_WIDTH
}

fn default_z() -> usize {
    DEFAULT_POWERS
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TypeAttribute {
    pub name: String,
    #[serde(default = "default_width")]
    pub width: u8,
    /// Label → integer code.
    #[serde(default)]
    pub codes: BTreeMap<String, u32>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Schema {
    #[serde(default)]
    pub types: Vec<TypeAttribute>,
    /// Number of committed powers `v, v^2, …, v^z`.
    #[serde(default = "default_z")]
    pub z: usize,
    /// Optional public per-value bound; enforced at insert and audited.
    #[serde(default)]
    pub gamma: Option<u64>,
    /// Refuse aggregates touching smaller buckets. Off unless set.
    #[serde(default)]
    pub min_bucket_size: Option<u64>,
}

impl Default for Schema {
    fn default() -> Self {
        Schema { types: vec![], z: DEFAULT_POWERS, gamma: None, min_bucket_size: None }
    }
}

impl Schema {
    /// One `Type` attribute with the given labels coded `0, 1, …` in order.
    pub fn single_type(name: &str, labels: &[&str]) -> Self {
        let codes = labels.iter().enumerate().map(|(i, l)| (l.to_string(), i as u32)).collect();
        Schema {
            types: vec![TypeAttribute { name: name.into(), width: DEFAULT_TYPE_WIDTH, codes }],
            ..Schema::default()
        }
    }

    pub fn validate(&self) -> Result<(), ServerError> {
        if self.z == 0 || self.z > MAX_POWERS {
            return Err(ServerError::Schema(format!("z = {} outside 1..={MAX_POWERS}", self.z)));
        }
        if let Some(g) = self.gamma {
            if g >= crate::crypto::VALUE_DOMAIN {
                return Err(ServerError::Schema(format!("gamma {g} outside the value domain")));
            }
        }
        self.layout()?;
        for t in &self.types {
            let mut seen = std::collections::BTreeSet::new();
            for (label, &code) in &t.codes {
                if t.width < 32 && code >= (1u32 << t.width) {
                    return Err(ServerError::Schema(format!(
                        "code {code} for {}={label} does not fit {} bits",
                        t.name, t.width
                    )));
                }
                if !seen.insert(code) {
                    return Err(ServerError::Schema(format!("code {code} reused in {}", t.name)));
                }
            }
        }
        Ok(())
    }

    pub fn layout(&self) -> Result<KeyLayout, ServerError> {
        let widths: Vec<u8> = self.types.iter().map(|t| t.width).collect();
        Ok(KeyLayout::new(&widths)?)
    }

    pub fn type_count(&self) -> usize {
        self.types.len()
    }

    /// Resolves a label (or a bare integer) to the attribute's code.
    pub fn code(&self, attr: usize, label: &str) -> Result<u32, ServerError> {
        let t = self
            .types
            .get(attr)
            .ok_or_else(|| ServerError::Schema(format!("no type attribute #{attr}")))?;
        if let Some(&c) = t.codes.get(label) {
            return Ok(c);
        }
        match label.parse::<u32>() {
            Ok(c) if t.width == 32 || c < (1u32 << t.width) => Ok(c),
            _ => Err(ServerError::Schema(format!("unknown {} label {label:?}", t.name))),
        }
    }

    pub fn codes(&self, labels: &[&str]) -> Result<Vec<u32>, ServerError> {
        if labels.len() != self.types.len() {
            return Err(ServerError::Schema(format!(
                "expected {} type labels, got {}",
                self.types.len(),
                labels.len()
            )));
        }
        labels.iter().enumerate().map(|(i, l)| self.code(i, l)).collect()
    }

    pub fn from_toml(text: &str) -> Result<Self, ServerError> {
        let s: Schema = toml::from_str(text).map_err(|e| ServerError::Schema(e.to_string()))?;
        s.validate()?;
        Ok(s)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("schema serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn residential_industrial() {
        let s = Schema::single_type("Type", &["residential", "industrial"]);
        s.validate().unwrap();
        assert_eq!(s.codes(&["industrial"]).unwrap(), vec![1]);
        assert_eq!(s.code(0, "7").unwrap(), 7);
        assert!(s.code(0, "commercial").is_err());
        assert_eq!(s.layout().unwrap().key_bits(), 40);
    }

    #[test]
    fn inconsistent_widths_rejected() {
        let mut s = Schema::single_type("Type", &["a", "b"]);
        s.types[0].width = 0;
        assert!(s.validate().is_err());
        let mut s = Schema::single_type("Type", &["a", "b"]);
        s.types[0].width = 1;
        s.types[0].codes.insert("c".into(), 2);
        assert!(s.validate().is_err());
        let s = Schema { types: vec![TypeAttribute { name: "x".into(), width: 32, codes: Default::default() }; 4], ..Schema::default() };
        assert!(s.validate().is_err());
        assert!(Schema { z: 5, ..Schema::default() }.validate().is_err());
    }

    #[test]
    fn toml_round_trip() {
        let text = r#"
z = 2
gamma = 40

[[types]]
name = "Type"
codes = { residential = 0, industrial = 1 }
"#;
        let s = Schema::from_toml(text).unwrap();
        assert_eq!(s.types[0].width, DEFAULT_TYPE_WIDTH);
        assert_eq!(s.gamma, Some(40));
        assert_eq!(Schema::from_toml(&s.to_toml()).unwrap(), s);
    }
}
