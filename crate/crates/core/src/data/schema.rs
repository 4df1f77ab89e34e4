use std::collections::HashSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ColumnKind {
    Continuous,
    Categorical,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ColumnRole {
    ManufacturingParameter,
    FeatureDescriptor,
    Target,
    Ignored,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnSpec {
    pub name: String,
    pub kind: ColumnKind,
    pub role: ColumnRole,
    /// Declared levels, in encoding order. Empty for continuous columns.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub levels: Vec<String>,
    /// When set, unseen categorical values are appended to `levels` during
    /// ingestion instead of being rejected.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub open_levels: bool,
}

impl ColumnSpec {
    pub fn continuous(name: &str, role: ColumnRole) -> Self {
        ColumnSpec {
            name: name.to_string(),
            kind: ColumnKind::Continuous,
            role,
            levels: Vec::new(),
            open_levels: false,
        }
    }

    pub fn categorical(name: &str, role: ColumnRole, levels: &[&str]) -> Self {
        ColumnSpec {
            name: name.to_string(),
            kind: ColumnKind::Categorical,
            role,
            levels: levels.iter().map(|s| s.to_string()).collect(),
            open_levels: false,
        }
    }

    pub fn open(mut self) -> Self {
        self.open_levels = true;
        self
    }

    pub fn level_index(&self, value: &str) -> Option<usize> {
        self.levels.iter().position(|l| l == value)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataSchema {
    pub columns: Vec<ColumnSpec>,
    pub selected_inputs: Vec<String>,
}

/// Name of the target column in the built-in schema.
pub const TARGET_COLUMN: &str = "dft_mm";

impl DataSchema {
    pub fn new(columns: Vec<ColumnSpec>, selected_inputs: Vec<String>) -> Result<Self> {
        let schema = DataSchema {
            columns,
            selected_inputs,
        };
        schema.validate()?;
        Ok(schema)
    }

    /// Built-in schema mirroring the public DLS dimensional-accuracy
    /// dataset: thirteen inputs plus the DFT target, with eight inputs
    /// selected (one-hot width 16).
    pub fn default_schema() -> Self {
        use ColumnRole::*;
        let columns = vec![
            ColumnSpec::categorical("hardware_set", ManufacturingParameter, &["1", "2"]),
            ColumnSpec::categorical("material", ManufacturingParameter, &["UMA", "RPU", "EPX"]),
            ColumnSpec::categorical("thermal_cure", ManufacturingParameter, &["UMA", "RPU", "EPX"]).open(),
            ColumnSpec::categorical("layout", ManufacturingParameter, &["A", "B"]),
            ColumnSpec::continuous("x_coordinate", ManufacturingParameter),
            ColumnSpec::continuous("y_coordinate", ManufacturingParameter),
            ColumnSpec::continuous("r_coordinate", ManufacturingParameter),
            ColumnSpec::categorical(
                "build_id",
                ManufacturingParameter,
                &["1", "2", "3", "4", "5", "6", "7", "8", "9"],
            )
            .open(),
            ColumnSpec::categorical("part_design", FeatureDescriptor, &["clip", "plug", "bracket"]).open(),
            ColumnSpec::continuous("nominal_dimension", FeatureDescriptor),
            ColumnSpec::categorical(
                "feature_class",
                FeatureDescriptor,
                &["thickness", "length", "diameter", "height"],
            ),
            ColumnSpec::categorical("feature_category", FeatureDescriptor, &["inner", "outer"]),
            ColumnSpec::categorical("feature_id", FeatureDescriptor, &["clip_thickness", "plug_diameter"]).open(),
            ColumnSpec::continuous(TARGET_COLUMN, Target),
        ];
        let selected = [
            "hardware_set",
            "material",
            "layout",
            "x_coordinate",
            "y_coordinate",
            "r_coordinate",
            "feature_class",
            "feature_category",
        ];
        DataSchema {
            columns,
            selected_inputs: selected.iter().map(|s| s.to_string()).collect(),
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let schema: DataSchema =
            toml::from_str(text).map_err(|e| Error::Schema(format!("invalid schema document: {e}")))?;
        schema.validate()?;
        Ok(schema)
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path.as_ref())?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("schema serialises")
    }

    pub fn validate(&self) -> Result<()> {
        let mut names = HashSet::new();
        for col in &self.columns {
            if !names.insert(col.name.as_str()) {
                return Err(Error::Schema(format!("duplicate column `{}`", col.name)));
            }
            match col.kind {
                ColumnKind::Categorical => {
                    let distinct: HashSet<_> = col.levels.iter().collect();
                    if distinct.len() != col.levels.len() {
                        return Err(Error::Schema(format!("column `{}` has duplicate levels", col.name)));
                    }
                    if col.levels.len() < 2 {
                        return Err(Error::Schema(format!(
                            "categorical column `{}` needs at least 2 levels",
                            col.name
                        )));
                    }
                }
                ColumnKind::Continuous => {
                    if !col.levels.is_empty() {
                        return Err(Error::Schema(format!(
                            "continuous column `{}` must not declare levels",
                            col.name
                        )));
                    }
                }
            }
        }
        let targets: Vec<_> = self.columns.iter().filter(|c| c.role == ColumnRole::Target).collect();
        if targets.len() != 1 {
            return Err(Error::Schema(format!(
                "exactly one target column required, found {}",
                targets.len()
            )));
        }
        if targets[0].kind != ColumnKind::Continuous {
            return Err(Error::Schema("target column must be continuous".into()));
        }
        if self.selected_inputs.is_empty() {
            return Err(Error::Schema("no input columns selected".into()));
        }
        let mut seen = HashSet::new();
        for name in &self.selected_inputs {
            if !seen.insert(name.as_str()) {
                return Err(Error::Schema(format!("column `{name}` selected twice")));
            }
            let col = self
                .column(name)
                .ok_or_else(|| Error::Schema(format!("selected input `{name}` is not a schema column")))?;
            if matches!(col.role, ColumnRole::Target | ColumnRole::Ignored) {
                return Err(Error::Schema(format!(
                    "selected input `{name}` has role {:?}",
                    col.role
                )));
            }
        }
        Ok(())
    }

    pub fn column(&self, name: &str) -> Option<&ColumnSpec> {
        self.columns.iter().find(|c| c.name == name)
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c.name == name)
    }

    pub fn target_index(&self) -> usize {
        self.columns
            .iter()
            .position(|c| c.role == ColumnRole::Target)
            .expect("validated schema has a target")
    }

    pub fn target(&self) -> &ColumnSpec {
        &self.columns[self.target_index()]
    }

    pub fn selected_columns(&self) -> impl Iterator<Item = &ColumnSpec> {
        self.selected_inputs
            .iter()
            .map(move |n| self.column(n).expect("validated selection"))
    }

    /// One column per selected continuous input plus one per level of each
    /// selected categorical input.
    pub fn encoded_width(&self) -> usize {
        self.selected_columns()
            .map(|c| match c.kind {
                ColumnKind::Continuous => 1,
                ColumnKind::Categorical => c.levels.len(),
            })
            .sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_schema_is_valid_with_width_16() {
        let s = DataSchema::default_schema();
        s.validate().unwrap();
        assert_eq!(s.selected_inputs.len(), 8);
        assert_eq!(s.encoded_width(), 16);
    }

    #[test]
    fn toml_round_trip() {
        let s = DataSchema::default_schema();
        let back = DataSchema::from_toml_str(&s.to_toml_string()).unwrap();
        assert_eq!(s, back);
    }

    #[test]
    fn rejects_bad_schemas() {
        let one_level = DataSchema::new(
            vec![
                ColumnSpec::categorical("a", ColumnRole::FeatureDescriptor, &["x"]),
                ColumnSpec::continuous("y", ColumnRole::Target),
            ],
            vec!["a".into()],
        );
        assert!(matches!(one_level, Err(Error::Schema(_))));

        let no_target = DataSchema::new(
            vec![ColumnSpec::continuous("a", ColumnRole::FeatureDescriptor)],
            vec!["a".into()],
        );
        assert!(no_target.is_err());

        let selects_target = DataSchema::new(
            vec![
                ColumnSpec::continuous("a", ColumnRole::FeatureDescriptor),
                ColumnSpec::continuous("y", ColumnRole::Target),
            ],
            vec!["y".into()],
        );
        assert!(selects_target.is_err());

        let selects_ignored = DataSchema::new(
            vec![
                ColumnSpec::continuous("a", ColumnRole::Ignored),
                ColumnSpec::continuous("y", ColumnRole::Target),
            ],
            vec!["a".into()],
        );
        assert!(selects_ignored.is_err());
    }
}
