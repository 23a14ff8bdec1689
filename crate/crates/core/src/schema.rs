use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Number of perceptual attributes in a fingerprint.
pub const ATTRIBUTE_COUNT: usize = 16;

pub const DEFAULT_SCHEMA_VERSION: &str = "mf-16-v1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Attribute {
    pub id: u8,
    pub name: String,
    pub boundary_low: String,
    pub boundary_high: String,
    pub question: String,
}

/// The ordered list of 16 perceptual attributes a fingerprint is defined over.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributeSchema {
    pub attributes: Vec<Attribute>,
    pub version: String,
}

const DEFAULT_ATTRIBUTES: [(&str, &str, &str, &str); ATTRIBUTE_COUNT] = [
    ("color vibrancy", "dull", "vibrant", "How vivid are the colors?"),
    ("surface roughness", "smooth", "rough", "How coarse does the surface look?"),
    ("pattern complexity", "plain", "complex", "How intricate is the pattern?"),
    ("striped pattern", "no stripes", "pronounced stripes", "How strongly striped is it?"),
    ("checkered pattern", "no checks", "pronounced checks", "How strongly checkered is it?"),
    ("brightness", "black", "white", "How light or dark is it?"),
    ("shininess", "matt", "mirror", "How glossy is it?"),
    ("sparkle", "none", "sparkling", "How much does it glitter?"),
    ("hardness", "soft", "hard", "How firm would it feel?"),
    ("movement effect", "none", "extreme", "How much does its look change as the view moves?"),
    ("pattern scale", "fine", "large", "How big are the pattern features?"),
    ("naturalness", "manmade", "natural", "Does it look natural or manufactured?"),
    ("thickness", "flat", "thick", "How deep is its structure?"),
    ("multicolored", "single", "many", "How many distinct colors does it show?"),
    ("value", "cheap", "luxurious", "How expensive does it look?"),
    ("warmth", "cold", "warm", "How warm would it feel to touch?"),
];

impl Default for AttributeSchema {
    fn default() -> Self {
        let attributes = DEFAULT_ATTRIBUTES
            .iter()
            .enumerate()
            .map(|(i, (name, low, high, question))| Attribute {
                id: (i + 1) as u8,
                name: name.to_string(),
                boundary_low: low.to_string(),
                boundary_high: high.to_string(),
                question: question.to_string(),
            })
            .collect();
        AttributeSchema {
            attributes,
            version: DEFAULT_SCHEMA_VERSION.to_string(),
        }
    }
}

impl AttributeSchema {
    pub fn validate(&self) -> Result<()> {
        if self.attributes.len() != ATTRIBUTE_COUNT {
            return Err(Error::invalid(format!(
                "schema must list {ATTRIBUTE_COUNT} attributes, found {}",
                self.attributes.len()
            )));
        }
        for (i, attr) in self.attributes.iter().enumerate() {
            if attr.id as usize != i + 1 {
                return Err(Error::invalid(format!(
                    "attribute at position {} has id {}, expected {}",
                    i + 1,
                    attr.id,
                    i + 1
                )));
            }
            if self.attributes[..i].iter().any(|a| a.name == attr.name) {
                return Err(Error::invalid(format!("duplicate attribute name '{}'", attr.name)));
            }
        }
        Ok(())
    }

    pub fn name(&self, attribute_id: u8) -> Option<&str> {
        self.attributes
            .get((attribute_id as usize).checked_sub(1)?)
            .map(|a| a.name.as_str())
    }
}

/// Checks that `attribute_id` is in `1..=16` and returns its zero-based index.
pub fn attribute_index(attribute_id: u8) -> Result<usize> {
    if (1..=ATTRIBUTE_COUNT as u8).contains(&attribute_id) {
        Ok(attribute_id as usize - 1)
    } else {
        Err(Error::invalid(format!(
            "attribute id {attribute_id} outside 1..={ATTRIBUTE_COUNT}"
        )))
    }
}
