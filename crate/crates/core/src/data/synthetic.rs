//! Synthetic stand-in for the DLS dataset: rows drawn from the built-in
//! schema's level sets and build-area coordinate ranges, with a smooth
//! nonlinear DFT response plus Gaussian noise.

use rand::Rng as _;
use rand_distr::{Distribution, Normal};

use super::encode::encode;
use super::schema::DataSchema;
use super::table::{Cell, RecordTable};
use crate::{rng, Error, Result};

/// Half-extents of the sampled build area (mm).
pub const BUILD_HALF_WIDTH: f64 = 90.0;
pub const BUILD_HALF_DEPTH: f64 = 55.0;

/// Noise-free response on one default-schema encoded row (width 16).
pub fn synthetic_truth(encoded: &[f64]) -> f64 {
    assert_eq!(
        encoded.len(),
        16,
        "synthetic response is defined on the default encoding"
    );
    let hw2 = encoded[1];
    let material = [0.0, 0.06, -0.05];
    let mat: f64 = material.iter().zip(&encoded[2..5]).map(|(a, b)| a * b).sum();
    let layout_b = encoded[6];
    let (x, y, r) = (encoded[7], encoded[8], encoded[9]);
    let class = [0.03, -0.04, 0.08, -0.10];
    let cls: f64 = class.iter().zip(&encoded[10..14]).map(|(a, b)| a * b).sum();
    let outer = encoded[15] - encoded[14];
    let epx = encoded[4];
    0.04 * hw2
        + mat
        + 0.02 * layout_b
        + 0.07 * (x / 50.0).tanh()
        + 0.04 * (y / 25.0).sin()
        + 0.05 * (r / 100.0).powi(2)
        + cls * (1.0 + 0.3 * hw2)
        + 0.05 * outer * encoded[12] * (1.0 + epx)
        - 0.02 * outer
}

/// Noise-free responses for a table built on the default schema.
pub fn synthetic_ground_truth(table: &RecordTable) -> Result<Vec<f64>> {
    let m = encode(table)?;
    if m.width() != 16 {
        return Err(Error::LayoutMismatch(format!(
            "synthetic response expects the default 16-column encoding, got {}",
            m.width()
        )));
    }
    Ok((0..m.n_rows()).map(|i| synthetic_truth(m.features().row(i))).collect())
}

/// Draws `n` rows on the default schema. Deterministic given `seed`.
pub fn generate_synthetic(n: usize, noise_sigma: f64, seed: u64) -> Result<RecordTable> {
    if n == 0 {
        return Err(Error::Config("synthetic table needs at least one row".into()));
    }
    if !(noise_sigma >= 0.0) || !noise_sigma.is_finite() {
        return Err(Error::Config(format!("noise_sigma must be >= 0, got {noise_sigma}")));
    }
    let mut schema = DataSchema::default_schema();
    let mut rng = rng::stream(seed, &[0x5EED]);
    let idx = |name: &str| schema_index(&DataSchema::default_schema(), name);
    let (hw, mat, cure, layout, xc, yc, rc, build, design, nominal, class, cat, fid, target) = (
        idx("hardware_set"),
        idx("material"),
        idx("thermal_cure"),
        idx("layout"),
        idx("x_coordinate"),
        idx("y_coordinate"),
        idx("r_coordinate"),
        idx("build_id"),
        idx("part_design"),
        idx("nominal_dimension"),
        idx("feature_class"),
        idx("feature_category"),
        idx("feature_id"),
        schema.target_index(),
    );

    let mut rows = Vec::with_capacity(n);
    for _ in 0..n {
        let mut row = vec![Cell::Real(0.0); schema.columns.len()];
        let pick =
            |rng: &mut rng::Rng, col: usize, schema: &DataSchema| rng.random_range(0..schema.columns[col].levels.len());
        let m = pick(&mut rng, mat, &schema);
        row[hw] = Cell::Level(pick(&mut rng, hw, &schema));
        row[mat] = Cell::Level(m);
        row[cure] = Cell::Level(m);
        row[layout] = Cell::Level(pick(&mut rng, layout, &schema));
        let x = rng.random_range(-BUILD_HALF_WIDTH..=BUILD_HALF_WIDTH);
        let y = rng.random_range(-BUILD_HALF_DEPTH..=BUILD_HALF_DEPTH);
        row[xc] = Cell::Real(x);
        row[yc] = Cell::Real(y);
        row[rc] = Cell::Real(x.hypot(y));
        row[build] = Cell::Level(pick(&mut rng, build, &schema));
        let d = pick(&mut rng, design, &schema);
        row[design] = Cell::Level(d);
        row[nominal] = Cell::Real(rng.random_range(2.0..30.0));
        let c = pick(&mut rng, class, &schema);
        row[class] = Cell::Level(c);
        row[cat] = Cell::Level(pick(&mut rng, cat, &schema));
        let id = format!(
            "{}_{}",
            schema.columns[design].levels[d], schema.columns[class].levels[c]
        );
        let fid_spec = &mut schema.columns[fid];
        let l = match fid_spec.level_index(&id) {
            Some(l) => l,
            None => {
                fid_spec.levels.push(id);
                fid_spec.levels.len() - 1
            }
        };
        row[fid] = Cell::Level(l);
        row[target] = Cell::Real(0.0);
        rows.push(row);
    }

    let table = RecordTable::new(schema.clone(), rows)?;
    let truth = synthetic_ground_truth(&table)?;
    let noise = Normal::new(0.0, noise_sigma.max(0.0)).expect("valid sigma");
    let mut rows = table.rows().to_vec();
    for (row, t) in rows.iter_mut().zip(truth) {
        let eps = if noise_sigma > 0.0 { noise.sample(&mut rng) } else { 0.0 };
        row[target] = Cell::Real(t + eps);
    }
    RecordTable::new(schema, rows)
}

fn schema_index(schema: &DataSchema, name: &str) -> usize {
    schema.column_index(name).expect("default schema column")
}
