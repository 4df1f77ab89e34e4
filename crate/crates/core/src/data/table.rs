use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::schema::{ColumnKind, DataSchema};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Cell {
    Real(f64),
    /// Index into the column's declared levels.
    Level(usize),
}

/// Parsed records, one cell per schema column, in schema column order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordTable {
    schema: DataSchema,
    rows: Vec<Vec<Cell>>,
}

impl RecordTable {
    /// Builds a table from already-typed rows, checking every invariant.
    pub fn new(schema: DataSchema, rows: Vec<Vec<Cell>>) -> Result<Self> {
        schema.validate()?;
        if rows.is_empty() {
            return Err(Error::Empty("record table has no rows"));
        }
        for (r, row) in rows.iter().enumerate() {
            if row.len() != schema.columns.len() {
                return Err(Error::LengthMismatch {
                    left: row.len(),
                    right: schema.columns.len(),
                });
            }
            for (cell, spec) in row.iter().zip(&schema.columns) {
                let ok = match (cell, spec.kind) {
                    (Cell::Real(v), ColumnKind::Continuous) => v.is_finite(),
                    (Cell::Level(i), ColumnKind::Categorical) => *i < spec.levels.len(),
                    _ => false,
                };
                if !ok {
                    return Err(Error::Parse {
                        row: r,
                        column: spec.name.clone(),
                        message: format!("cell {cell:?} does not match the column type"),
                    });
                }
            }
        }
        Ok(RecordTable { schema, rows })
    }

    pub fn schema(&self) -> &DataSchema {
        &self.schema
    }

    pub fn rows(&self) -> &[Vec<Cell>] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn targets(&self) -> Vec<f64> {
        let t = self.schema.target_index();
        self.rows
            .iter()
            .map(|r| match r[t] {
                Cell::Real(v) => v,
                Cell::Level(_) => unreachable!("target is continuous"),
            })
            .collect()
    }

    /// Text value of a cell (level name for categoricals).
    pub fn value_text(&self, row: usize, column: usize) -> String {
        match self.rows[row][column] {
            Cell::Real(v) => v.to_string(),
            Cell::Level(i) => self.schema.columns[column].levels[i].clone(),
        }
    }

    pub fn select_rows(&self, idx: &[usize]) -> Result<RecordTable> {
        RecordTable::new(self.schema.clone(), idx.iter().map(|&i| self.rows[i].clone()).collect())
    }

    /// Writes the table as CSV with a header row in schema column order.
    pub fn write_csv<W: std::io::Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(self.schema.columns.iter().map(|c| c.name.as_str()))?;
        for r in 0..self.rows.len() {
            let rec: Vec<String> = (0..self.schema.columns.len()).map(|c| self.value_text(r, c)).collect();
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Reads a CSV file against `schema`. Extra columns in the file are ignored.
pub fn load_csv(path: impl AsRef<Path>, schema: &DataSchema) -> Result<RecordTable> {
    let file = std::fs::File::open(path.as_ref())?;
    read_csv(file, schema)
}

pub fn read_csv<R: Read>(reader: R, schema: &DataSchema) -> Result<RecordTable> {
    schema.validate()?;
    let mut schema = schema.clone();
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let header = rdr.headers()?.clone();
    let positions: Vec<usize> = schema
        .columns
        .iter()
        .map(|c| {
            header
                .iter()
                .position(|h| h == c.name)
                .ok_or_else(|| Error::MissingColumn { column: c.name.clone() })
        })
        .collect::<Result<_>>()?;

    let mut rows = Vec::new();
    for (r, record) in rdr.records().enumerate() {
        let record = record?;
        let mut row = Vec::with_capacity(schema.columns.len());
        for (spec, &pos) in schema.columns.iter_mut().zip(&positions) {
            let raw = record.get(pos).unwrap_or("");
            if raw.is_empty() {
                return Err(Error::Parse {
                    row: r,
                    column: spec.name.clone(),
                    message: "missing value".into(),
                });
            }
            let cell = match spec.kind {
                ColumnKind::Continuous => {
                    let v: f64 = raw.parse().map_err(|_| Error::Parse {
                        row: r,
                        column: spec.name.clone(),
                        message: format!("`{raw}` is not a number"),
                    })?;
                    if !v.is_finite() {
                        return Err(Error::Parse {
                            row: r,
                            column: spec.name.clone(),
                            message: format!("`{raw}` is not finite"),
                        });
                    }
                    Cell::Real(v)
                }
                ColumnKind::Categorical => match spec.level_index(raw) {
                    Some(i) => Cell::Level(i),
                    None if spec.open_levels => {
                        spec.levels.push(raw.to_string());
                        Cell::Level(spec.levels.len() - 1)
                    }
                    None => {
                        return Err(Error::UnknownLevel {
                            row: r,
                            column: spec.name.clone(),
                            value: raw.to_string(),
                        })
                    }
                },
            };
            row.push(cell);
        }
        rows.push(row);
    }
    RecordTable::new(schema, rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::schema::{ColumnRole, ColumnSpec};

    fn tiny_schema() -> DataSchema {
        DataSchema::new(
            vec![
                ColumnSpec::continuous("x", ColumnRole::ManufacturingParameter),
                ColumnSpec::categorical("cls", ColumnRole::FeatureDescriptor, &["A", "B"]),
                ColumnSpec::continuous("dft", ColumnRole::Target),
            ],
            vec!["x".into(), "cls".into()],
        )
        .unwrap()
    }

    #[test]
    fn parses_two_rows() {
        let csv = "x,cls,dft\n1.5,A,0.02\n-3,B,-0.1\n";
        let t = read_csv(csv.as_bytes(), &tiny_schema()).unwrap();
        assert_eq!(t.len(), 2);
        assert_eq!(t.targets(), vec![0.02, -0.1]);
        assert_eq!(t.rows()[1][1], Cell::Level(1));
    }

    #[test]
    fn header_order_is_free_and_extra_columns_ignored() {
        let csv = "dft,extra,cls,x\n0.5,zzz,B,2\n";
        let t = read_csv(csv.as_bytes(), &tiny_schema()).unwrap();
        assert_eq!(t.rows()[0], vec![Cell::Real(2.0), Cell::Level(1), Cell::Real(0.5)]);
    }

    #[test]
    fn missing_target_column_is_schema_mismatch() {
        let csv = "x,cls\n1,A\n";
        match read_csv(csv.as_bytes(), &tiny_schema()) {
            Err(Error::MissingColumn { column }) => assert_eq!(column, "dft"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn bad_cell_is_located() {
        let csv = "x,cls,dft\n1,A,0.1\nabc,A,0.2\n";
        match read_csv(csv.as_bytes(), &tiny_schema()) {
            Err(Error::Parse { row, column, .. }) => {
                assert_eq!(row, 1);
                assert_eq!(column, "x");
            }
            other => panic!("unexpected {other:?}"),
        }
        let missing = "x,cls,dft\n1,,0.1\n";
        assert!(matches!(
            read_csv(missing.as_bytes(), &tiny_schema()),
            Err(Error::Parse { .. })
        ));
    }

    #[test]
    fn unknown_level_rejected_unless_open() {
        let csv = "x,cls,dft\n1,C,0.1\n";
        assert!(matches!(
            read_csv(csv.as_bytes(), &tiny_schema()),
            Err(Error::UnknownLevel { .. })
        ));
        let mut open = tiny_schema();
        open.columns[1].open_levels = true;
        let t = read_csv(csv.as_bytes(), &open).unwrap();
        assert_eq!(t.schema().columns[1].levels, vec!["A", "B", "C"]);
        assert_eq!(t.rows()[0][1], Cell::Level(2));
    }

    #[test]
    fn empty_file_is_rejected() {
        let csv = "x,cls,dft\n";
        assert!(matches!(read_csv(csv.as_bytes(), &tiny_schema()), Err(Error::Empty(_))));
    }

    #[test]
    fn write_then_read_preserves_table() {
        let csv = "x,cls,dft\n1.5,A,0.02\n-3,B,-0.1\n";
        let t = read_csv(csv.as_bytes(), &tiny_schema()).unwrap();
        let mut buf = Vec::new();
        t.write_csv(&mut buf).unwrap();
        let back = read_csv(buf.as_slice(), &tiny_schema()).unwrap();
        assert_eq!(t, back);
    }
}
