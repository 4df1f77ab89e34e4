use serde::{Deserialize, Serialize};

use super::schema::ColumnKind;
use super::table::{Cell, RecordTable};
use crate::linalg::Matrix;
use crate::{Error, Result};

/// What an encoded column holds.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum EncodedColumn {
    Continuous { source: String },
    Indicator { source: String, level: String },
}

impl EncodedColumn {
    pub fn label(&self) -> String {
        match self {
            EncodedColumn::Continuous { source } => source.clone(),
            EncodedColumn::Indicator { source, level } => format!("{source}={level}"),
        }
    }

    pub fn is_continuous(&self) -> bool {
        matches!(self, EncodedColumn::Continuous { .. })
    }
}

/// Numeric feature matrix with aligned targets (mm).
///
/// `row_ids` carries each row's index in the originating table through
/// subsetting, so that callers can audit which rows a fit touched.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignMatrix {
    features: Matrix,
    targets: Vec<f64>,
    columns: Vec<EncodedColumn>,
    row_ids: Vec<usize>,
}

impl DesignMatrix {
    pub fn new(features: Matrix, targets: Vec<f64>, columns: Vec<EncodedColumn>) -> Result<Self> {
        if features.rows() != targets.len() {
            return Err(Error::LengthMismatch {
                left: features.rows(),
                right: targets.len(),
            });
        }
        if features.cols() != columns.len() {
            return Err(Error::LengthMismatch {
                left: features.cols(),
                right: columns.len(),
            });
        }
        if !features.is_finite() || targets.iter().any(|t| !t.is_finite()) {
            return Err(Error::Numerical("design matrix contains non-finite values".into()));
        }
        let row_ids = (0..targets.len()).collect();
        Ok(DesignMatrix {
            features,
            targets,
            columns,
            row_ids,
        })
    }

    /// Convenience constructor for all-continuous data labelled `x0, x1, ...`.
    pub fn from_continuous(features: Matrix, targets: Vec<f64>) -> Result<Self> {
        let columns = (0..features.cols())
            .map(|j| EncodedColumn::Continuous {
                source: format!("x{j}"),
            })
            .collect();
        DesignMatrix::new(features, targets, columns)
    }

    pub fn features(&self) -> &Matrix {
        &self.features
    }

    pub fn targets(&self) -> &[f64] {
        &self.targets
    }

    pub fn columns(&self) -> &[EncodedColumn] {
        &self.columns
    }

    pub fn column_labels(&self) -> Vec<String> {
        self.columns.iter().map(EncodedColumn::label).collect()
    }

    pub fn row_ids(&self) -> &[usize] {
        &self.row_ids
    }

    pub fn n_rows(&self) -> usize {
        self.targets.len()
    }

    pub fn width(&self) -> usize {
        self.columns.len()
    }

    pub fn select_rows(&self, idx: &[usize]) -> DesignMatrix {
        DesignMatrix {
            features: self.features.select_rows(idx),
            targets: idx.iter().map(|&i| self.targets[i]).collect(),
            columns: self.columns.clone(),
            row_ids: idx.iter().map(|&i| self.row_ids[i]).collect(),
        }
    }

    /// Same rows and targets with replaced feature values (used by scalers).
    pub(crate) fn with_features(&self, features: Matrix) -> DesignMatrix {
        debug_assert_eq!(features.rows(), self.features.rows());
        debug_assert_eq!(features.cols(), self.features.cols());
        DesignMatrix {
            features,
            targets: self.targets.clone(),
            columns: self.columns.clone(),
            row_ids: self.row_ids.clone(),
        }
    }

    /// Writes the matrix as CSV: one column per encoded label plus `dft_mm`.
    pub fn write_csv<W: std::io::Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = self.column_labels();
        header.push("dft_mm".into());
        w.write_record(&header)?;
        for i in 0..self.n_rows() {
            let mut rec: Vec<String> = self.features.row(i).iter().map(|v| v.to_string()).collect();
            rec.push(self.targets[i].to_string());
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// One-hot encodes the schema's selected inputs. Continuous columns are
/// copied verbatim; each categorical column becomes one indicator per
/// declared level, in level order. No reference level is dropped.
pub fn encode(table: &RecordTable) -> Result<DesignMatrix> {
    if table.is_empty() {
        return Err(Error::Empty("cannot encode an empty table"));
    }
    let schema = table.schema();
    let mut columns = Vec::with_capacity(schema.encoded_width());
    let mut sources = Vec::new();
    for name in &schema.selected_inputs {
        let idx = schema.column_index(name).expect("validated selection");
        let spec = &schema.columns[idx];
        match spec.kind {
            ColumnKind::Continuous => columns.push(EncodedColumn::Continuous { source: name.clone() }),
            ColumnKind::Categorical => {
                for level in &spec.levels {
                    columns.push(EncodedColumn::Indicator {
                        source: name.clone(),
                        level: level.clone(),
                    });
                }
            }
        }
        sources.push((idx, spec.kind, spec.levels.len()));
    }
    let width = columns.len();
    let mut data = Vec::with_capacity(table.len() * width);
    for row in table.rows() {
        for &(idx, kind, n_levels) in &sources {
            match (kind, row[idx]) {
                (ColumnKind::Continuous, Cell::Real(v)) => data.push(v),
                (ColumnKind::Categorical, Cell::Level(l)) => {
                    data.extend((0..n_levels).map(|k| if k == l { 1.0 } else { 0.0 }));
                }
                _ => unreachable!("record table cells match their column kinds"),
            }
        }
    }
    let features = Matrix::from_vec(table.len(), width, data)?;
    DesignMatrix::new(features, table.targets(), columns)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::schema::{ColumnRole, ColumnSpec, DataSchema};

    fn schema() -> DataSchema {
        DataSchema::new(
            vec![
                ColumnSpec::continuous("a", ColumnRole::ManufacturingParameter),
                ColumnSpec::categorical("c", ColumnRole::FeatureDescriptor, &["p", "q", "r"]),
                ColumnSpec::continuous("b", ColumnRole::ManufacturingParameter),
                ColumnSpec::continuous("y", ColumnRole::Target),
            ],
            vec!["a".into(), "b".into(), "c".into()],
        )
        .unwrap()
    }

    fn table() -> RecordTable {
        let rows = vec![
            vec![Cell::Real(1.0), Cell::Level(0), Cell::Real(-1.0), Cell::Real(0.1)],
            vec![Cell::Real(2.0), Cell::Level(2), Cell::Real(-2.0), Cell::Real(0.2)],
            vec![Cell::Real(3.0), Cell::Level(1), Cell::Real(-3.0), Cell::Real(0.3)],
            vec![Cell::Real(4.0), Cell::Level(2), Cell::Real(-4.0), Cell::Real(0.4)],
        ];
        RecordTable::new(schema(), rows).unwrap()
    }

    #[test]
    fn single_indicator_row() {
        let s = DataSchema::new(
            vec![
                ColumnSpec::categorical("k", ColumnRole::FeatureDescriptor, &["A", "B"]),
                ColumnSpec::continuous("y", ColumnRole::Target),
            ],
            vec!["k".into()],
        )
        .unwrap();
        let t = RecordTable::new(s, vec![vec![Cell::Level(0), Cell::Real(0.0)]]).unwrap();
        let m = encode(&t).unwrap();
        assert_eq!(m.features().row(0), &[1.0, 0.0]);
        assert_eq!(m.column_labels(), vec!["k=A", "k=B"]);
    }

    #[test]
    fn width_labels_and_block_sums() {
        let m = encode(&table()).unwrap();
        assert_eq!(m.width(), 5);
        assert_eq!(m.column_labels(), vec!["a", "b", "c=p", "c=q", "c=r"]);
        for i in 0..m.n_rows() {
            let block: f64 = m.features().row(i)[2..5].iter().sum();
            assert_eq!(block, 1.0);
        }
        assert_eq!(m.features().row(1), &[2.0, -2.0, 0.0, 0.0, 1.0]);
        assert_eq!(m.targets(), &[0.1, 0.2, 0.3, 0.4]);
    }

    #[test]
    fn encoding_commutes_with_row_permutation() {
        let t = table();
        let perm = [2, 0, 3, 1];
        let a = encode(&t.select_rows(&perm).unwrap()).unwrap();
        let b = encode(&t).unwrap().select_rows(&perm);
        assert_eq!(a.features(), b.features());
        assert_eq!(a.targets(), b.targets());
    }
}
