//! Column-level description of a survival table.
//!
//! A [`FeatureSchema`] names every covariate column, its kind (continuous or
//! discrete with an explicit category ordering), and which columns hold the
//! observed time and the event indicator. Category orderings are part of the
//! model artifact: they fix the layout of the one-hot encoding and are
//! persisted inside checkpoints.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ColumnKind {
    Continuous,
    /// Categorical column; `categories` is the ordered label table and its
    /// length is the cardinality.
    Discrete { categories: Vec<String> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Column {
    pub name: String,
    #[serde(flatten)]
    pub kind: ColumnKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSchema {
    pub columns: Vec<Column>,
    pub time_column: String,
    pub event_column: String,
}

/// Encoded layout implied by a schema: one standardized block of
/// `d_cont + 1` reals (covariates plus transformed time) and one one-hot
/// channel of size `C_j + 1` per discrete covariate plus the event channel
/// (cardinality 2). The final slot of every channel is the mask state.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodingDims {
    pub cont_dim: usize,
    pub channel_sizes: Vec<usize>,
}

impl EncodingDims {
    pub fn disc_total(&self) -> usize {
        self.channel_sizes.iter().sum()
    }
}

impl FeatureSchema {
    pub fn new(columns: Vec<Column>, time_column: &str, event_column: &str) -> Result<Self> {
        let schema = FeatureSchema {
            columns,
            time_column: time_column.to_string(),
            event_column: event_column.to_string(),
        };
        schema.validate()?;
        Ok(schema)
    }

    pub fn validate(&self) -> Result<()> {
        if self.time_column == self.event_column {
            return Err(Error::Schema(
                "time_column and event_column must be distinct".into(),
            ));
        }
        if self.columns.is_empty() {
            return Err(Error::Schema(
                "schema needs at least one covariate column".into(),
            ));
        }
        let mut seen = std::collections::BTreeSet::new();
        for col in &self.columns {
            if col.name == self.time_column || col.name == self.event_column {
                return Err(Error::Schema(format!(
                    "covariate column '{}' collides with a time/event role",
                    col.name
                )));
            }
            if !seen.insert(col.name.clone()) {
                return Err(Error::Schema(format!("duplicate column '{}'", col.name)));
            }
            if let ColumnKind::Discrete { categories } = &col.kind {
                if categories.len() < 2 {
                    return Err(Error::Schema(format!(
                        "discrete column '{}' needs cardinality >= 2",
                        col.name
                    )));
                }
                let uniq: std::collections::BTreeSet<_> = categories.iter().collect();
                if uniq.len() != categories.len() {
                    return Err(Error::Schema(format!(
                        "discrete column '{}' has duplicate category labels",
                        col.name
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn continuous_columns(&self) -> impl Iterator<Item = &Column> {
        self.columns
            .iter()
            .filter(|c| matches!(c.kind, ColumnKind::Continuous))
    }

    pub fn discrete_columns(&self) -> impl Iterator<Item = &Column> {
        self.columns
            .iter()
            .filter(|c| matches!(c.kind, ColumnKind::Discrete { .. }))
    }

    pub fn d_cont(&self) -> usize {
        self.continuous_columns().count()
    }

    pub fn d_disc(&self) -> usize {
        self.discrete_columns().count()
    }

    /// Cardinalities of the discrete covariates, in schema order.
    pub fn cardinalities(&self) -> Vec<usize> {
        self.discrete_columns()
            .map(|c| match &c.kind {
                ColumnKind::Discrete { categories } => categories.len(),
                ColumnKind::Continuous => unreachable!(),
            })
            .collect()
    }

    /// Layout of the encoded representation. The event indicator is the last
    /// discrete channel with cardinality 2.
    pub fn encoding_dims(&self) -> EncodingDims {
        let mut channel_sizes: Vec<usize> =
            self.cardinalities().iter().map(|c| c + 1).collect();
        channel_sizes.push(3); // event channel: E=0, E=1, mask
        EncodingDims {
            cont_dim: self.d_cont() + 1,
            channel_sizes,
        }
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::io(path.display().to_string(), e))?;
        let schema: FeatureSchema = toml::from_str(&text)
            .map_err(|e| Error::Schema(format!("{}: {e}", path.display())))?;
        schema.validate()?;
        Ok(schema)
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        let text = toml::to_string_pretty(self)
            .map_err(|e| Error::Schema(format!("serialize schema: {e}")))?;
        std::fs::write(path, text).map_err(|e| Error::io(path.display().to_string(), e))
    }

    /// Stable content hash over the canonical JSON form.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("schema serializes");
        let digest = Sha256::digest(&bytes);
        hex_string(&digest)
    }
}

pub(crate) fn hex_string(bytes: &[u8]) -> String {
    let mut s = String::with_capacity(bytes.len() * 2);
    for b in bytes {
        use std::fmt::Write;
        write!(s, "{b:02x}").unwrap();
    }
    s
}

pub fn continuous(name: &str) -> Column {
    Column {
        name: name.to_string(),
        kind: ColumnKind::Continuous,
    }
}

pub fn discrete(name: &str, categories: &[&str]) -> Column {
    Column {
        name: name.to_string(),
        kind: ColumnKind::Discrete {
            categories: categories.iter().map(|s| s.to_string()).collect(),
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn demo() -> FeatureSchema {
        FeatureSchema::new(
            vec![
                continuous("age"),
                discrete("grade", &["low", "high"]),
                continuous("size"),
            ],
            "time",
            "event",
        )
        .unwrap()
    }

    #[test]
    fn dims_follow_schema() {
        let s = demo();
        assert_eq!(s.d_cont(), 2);
        assert_eq!(s.d_disc(), 1);
        let dims = s.encoding_dims();
        assert_eq!(dims.cont_dim, 3);
        assert_eq!(dims.channel_sizes, vec![3, 3]);
    }

    #[test]
    fn rejects_role_collision() {
        let err = FeatureSchema::new(vec![continuous("time")], "time", "event");
        assert!(err.is_err());
    }

    #[test]
    fn rejects_unary_discrete() {
        let err = FeatureSchema::new(vec![discrete("g", &["only"])], "t", "e");
        assert!(err.is_err());
    }

    #[test]
    fn rejects_duplicate_labels() {
        let err = FeatureSchema::new(vec![discrete("g", &["a", "a"])], "t", "e");
        assert!(err.is_err());
    }

    #[test]
    fn toml_roundtrip() {
        let s = demo();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("schema.toml");
        s.save(&path).unwrap();
        let back = FeatureSchema::load(&path).unwrap();
        assert_eq!(s, back);
        assert_eq!(s.hash(), back.hash());
    }
}
