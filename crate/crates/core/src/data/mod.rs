//! Dataset schema, CSV ingestion, one-hot encoding, feature scaling and the
//! synthetic fixture.

mod encode;
mod scale;
mod schema;
mod synthetic;
mod table;

pub use encode::{encode, DesignMatrix, EncodedColumn};
pub use scale::{fit_scaler, ColumnScale, ScalerMethod, ScalerState};
pub use schema::{ColumnKind, ColumnRole, ColumnSpec, DataSchema, TARGET_COLUMN};
pub use synthetic::{generate_synthetic, synthetic_ground_truth, synthetic_truth};
pub use table::{load_csv, read_csv, Cell, RecordTable};
