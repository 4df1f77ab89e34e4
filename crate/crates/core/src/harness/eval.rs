//! Dual Monte Carlo evaluation of a deterministic family and the
//! training-fraction sweep built on it.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::grid::{fit_scaled, grid_search, Candidate, FitObserver, HyperGrid};
use super::split::{dual_mc_split, SplitFractions};
use crate::data::{DesignMatrix, ScalerMethod};
use crate::metrics::{parity_table, rmse, ParityTable};
use crate::models::{Family, ModelConfig};
use crate::{rng, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    Full,
    Ci,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalProtocol {
    pub outer_iterations: usize,
    pub inner_iterations: usize,
    pub fractions: SplitFractions,
    pub k: usize,
    pub seed: u64,
    pub scaler: ScalerMethod,
    /// Tune once per outer iteration and reuse the choice for its inner
    /// iterations.
    pub fast_mode: bool,
}

impl Default for EvalProtocol {
    fn default() -> Self {
        EvalProtocol {
            outer_iterations: 3,
            inner_iterations: 50,
            fractions: SplitFractions::default(),
            k: 5,
            seed: 2022,
            scaler: ScalerMethod::Zscore,
            fast_mode: false,
        }
    }
}

impl EvalProtocol {
    pub fn with_preset(mut self, preset: Preset) -> Self {
        let (outer, inner) = match preset {
            Preset::Full => (3, 50),
            Preset::Ci => (1, 5),
        };
        self.outer_iterations = outer;
        self.inner_iterations = inner;
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.fractions.validate()?;
        if self.outer_iterations == 0 || self.inner_iterations == 0 {
            return Err(Error::Config("iteration counts must be >= 1".into()));
        }
        if self.k < 2 {
            return Err(Error::Config(format!("k-fold needs k >= 2, got {}", self.k)));
        }
        Ok(())
    }

    pub fn n_iterations(&self) -> usize {
        self.outer_iterations * self.inner_iterations
    }
}

/// Summary statistics of an RMSE series (mm). `std_dev` is the population
/// standard deviation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RmseStats {
    pub average: f64,
    pub maximum: f64,
    pub minimum: f64,
    pub std_dev: f64,
    pub prediction_range: f64,
}

impl RmseStats {
    pub fn from_values(values: &[f64]) -> Result<RmseStats> {
        if values.is_empty() {
            return Err(Error::Empty("no RMSE values to summarise"));
        }
        let n = values.len() as f64;
        let average = values.iter().sum::<f64>() / n;
        let maximum = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let minimum = values.iter().copied().fold(f64::INFINITY, f64::min);
        let var = values.iter().map(|v| (v - average).powi(2)).sum::<f64>() / n;
        Ok(RmseStats {
            // summation round-off can push the mean a hair outside [min, max]
            average: average.clamp(minimum, maximum),
            maximum,
            minimum,
            std_dev: var.sqrt(),
            prediction_range: maximum - minimum,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationResult {
    pub outer: usize,
    pub inner: usize,
    pub iteration: u64,
    pub test_rmse: Option<f64>,
    pub train_rmse: Option<f64>,
    pub chosen: Option<Candidate>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub family: Family,
    pub grid: HyperGrid,
    pub protocol: EvalProtocol,
    pub iterations: Vec<IterationResult>,
    pub test: RmseStats,
    pub train: RmseStats,
    pub failed: usize,
    /// Set when the run departs from per-iteration tuning.
    pub protocol_deviation: Option<String>,
    /// Test-set parity data of the lowest-RMSE iteration.
    #[serde(skip)]
    pub best_parity: Option<ParityTable>,
}

impl EvalReport {
    pub fn test_rmses(&self) -> Vec<f64> {
        self.iterations.iter().filter_map(|r| r.test_rmse).collect()
    }

    pub fn train_rmses(&self) -> Vec<f64> {
        self.iterations.iter().filter_map(|r| r.train_rmse).collect()
    }
}

struct Outcome {
    test_rmse: f64,
    train_rmse: f64,
    chosen: Candidate,
    parity: ParityTable,
}

fn iteration_id(protocol: &EvalProtocol, outer: usize, inner: usize) -> u64 {
    (outer * protocol.inner_iterations + inner) as u64
}

fn tune(
    grid: &HyperGrid,
    train: &DesignMatrix,
    protocol: &EvalProtocol,
    iteration: u64,
    observer: &dyn FitObserver,
) -> Result<(Candidate, ModelConfig)> {
    let cv = grid_search(
        grid,
        train,
        protocol.scaler,
        protocol.k,
        rng::derive_seed(protocol.seed, &[iteration, 1]),
        observer,
    )?;
    let chosen = cv.best().params.clone();
    let cfg = grid.base_config()?.with_params(&chosen)?;
    Ok((chosen, cfg))
}

fn run_iteration(
    grid: &HyperGrid,
    data: &DesignMatrix,
    protocol: &EvalProtocol,
    iteration: u64,
    tuned: Option<&(Candidate, ModelConfig)>,
    observer: &dyn FitObserver,
) -> Result<Outcome> {
    let plan = dual_mc_split(data.n_rows(), protocol.fractions, protocol.seed, iteration)?;
    if plan.test.is_empty() {
        return Err(Error::Config("test split is empty; raise the test fraction".into()));
    }
    let train = data.select_rows(&plan.train);
    let test = data.select_rows(&plan.test);
    let owned;
    let (chosen, cfg) = match tuned {
        Some(t) => t,
        None => {
            owned = tune(grid, &train, protocol, iteration, observer)?;
            &owned
        }
    };
    let cfg = cfg.reseeded(rng::derive_seed(protocol.seed, &[iteration, 2]));
    let (scaler, model) = fit_scaled(&cfg, &train, protocol.scaler, observer)?;
    let train_scaled = scaler.apply(&train)?;
    let test_scaled = scaler.apply(&test)?;
    let train_pred = model.predict(train_scaled.features())?;
    let test_pred = model.predict(test_scaled.features())?;
    Ok(Outcome {
        test_rmse: rmse(&test_pred.values, test.targets())?,
        train_rmse: rmse(&train_pred.values, train.targets())?,
        chosen: chosen.clone(),
        parity: parity_table(test.targets(), &test_pred.values, None, None)?,
    })
}

/// Runs `outer × inner` split/tune/fit/score iterations. Failed iterations
/// are recorded and excluded from the statistics; the run errors only when
/// every iteration fails or the protocol itself is invalid.
pub fn run_evaluation(
    grid: &HyperGrid,
    data: &DesignMatrix,
    protocol: &EvalProtocol,
    observer: &dyn FitObserver,
) -> Result<EvalReport> {
    protocol.validate()?;
    grid.configs()?;
    if data.n_rows() == 0 {
        return Err(Error::Empty("evaluation data has no rows"));
    }
    let ids: Vec<(usize, usize)> = (0..protocol.outer_iterations)
        .flat_map(|o| (0..protocol.inner_iterations).map(move |i| (o, i)))
        .collect();

    let tuned: Vec<Option<Result<(Candidate, ModelConfig)>>> = if protocol.fast_mode {
        (0..protocol.outer_iterations)
            .into_par_iter()
            .map(|o| {
                let it = iteration_id(protocol, o, 0);
                let plan = dual_mc_split(data.n_rows(), protocol.fractions, protocol.seed, it);
                Some(plan.and_then(|p| tune(grid, &data.select_rows(&p.train), protocol, it, observer)))
            })
            .collect()
    } else {
        (0..protocol.outer_iterations).map(|_| None).collect()
    };

    let outcomes: Vec<Result<Outcome>> = ids
        .par_iter()
        .map(|&(o, i)| {
            let it = iteration_id(protocol, o, i);
            match &tuned[o] {
                Some(Err(e)) => Err(Error::Numerical(format!("tuning failed: {e}"))),
                Some(Ok(t)) => run_iteration(grid, data, protocol, it, Some(t), observer),
                None => run_iteration(grid, data, protocol, it, None, observer),
            }
        })
        .collect();

    let mut iterations = Vec::with_capacity(ids.len());
    let mut best: Option<(f64, ParityTable)> = None;
    let mut first_error = None;
    for (&(o, i), out) in ids.iter().zip(outcomes) {
        let iteration = iteration_id(protocol, o, i);
        match out {
            Ok(out) => {
                if best.as_ref().is_none_or(|(b, _)| out.test_rmse < *b) {
                    best = Some((out.test_rmse, out.parity));
                }
                iterations.push(IterationResult {
                    outer: o,
                    inner: i,
                    iteration,
                    test_rmse: Some(out.test_rmse),
                    train_rmse: Some(out.train_rmse),
                    chosen: Some(out.chosen),
                    error: None,
                });
            }
            Err(e) => {
                if matches!(e, Error::Config(_)) || e.is_input_error() {
                    return Err(e);
                }
                log::warn!("{} iteration {iteration} failed: {e}", grid.family);
                iterations.push(IterationResult {
                    outer: o,
                    inner: i,
                    iteration,
                    test_rmse: None,
                    train_rmse: None,
                    chosen: None,
                    error: Some(e.to_string()),
                });
                first_error.get_or_insert(e);
            }
        }
    }
    let failed = iterations.iter().filter(|r| r.error.is_some()).count();
    if failed == iterations.len() {
        return Err(first_error.expect("at least one iteration"));
    }
    let test: Vec<f64> = iterations.iter().filter_map(|r| r.test_rmse).collect();
    let train: Vec<f64> = iterations.iter().filter_map(|r| r.train_rmse).collect();
    Ok(EvalReport {
        family: grid.family,
        grid: grid.clone(),
        protocol: protocol.clone(),
        test: RmseStats::from_values(&test)?,
        train: RmseStats::from_values(&train)?,
        iterations,
        failed,
        protocol_deviation: protocol
            .fast_mode
            .then(|| "fast mode: hyperparameters tuned once per outer iteration".to_string()),
        best_parity: best.map(|(_, p)| p),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub fraction: f64,
    pub train_mean: f64,
    pub train_std: f64,
    pub test_mean: f64,
    pub test_std: f64,
    pub iterations: usize,
    pub failed: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub family: Family,
    pub grid: HyperGrid,
    pub protocol: EvalProtocol,
    pub rows: Vec<SweepRow>,
    /// Best-iteration parity data per row.
    #[serde(skip)]
    pub parity: Vec<Option<ParityTable>>,
}

pub fn validate_fraction_list(fractions: &[f64]) -> Result<()> {
    if fractions.is_empty() {
        return Err(Error::Config("fraction list is empty".into()));
    }
    if fractions.iter().any(|f| !(*f > 0.0 && *f < 1.0)) {
        return Err(Error::Config(format!(
            "fractions must lie in (0, 1), got {fractions:?}"
        )));
    }
    if fractions.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Config(format!(
            "fractions must be strictly increasing, got {fractions:?}"
        )));
    }
    Ok(())
}

/// Runs the evaluation once per training fraction with the complement as
/// the test set.
pub fn fraction_sweep(
    grid: &HyperGrid,
    data: &DesignMatrix,
    fractions: &[f64],
    protocol: &EvalProtocol,
    observer: &dyn FitObserver,
) -> Result<SweepReport> {
    validate_fraction_list(fractions)?;
    let mut rows = Vec::with_capacity(fractions.len());
    let mut parity = Vec::with_capacity(fractions.len());
    for &f in fractions {
        let p = EvalProtocol {
            fractions: SplitFractions::new(f, 1.0 - f, 0.0)?,
            ..protocol.clone()
        };
        let report = run_evaluation(grid, data, &p, observer)?;
        rows.push(SweepRow {
            fraction: f,
            train_mean: report.train.average,
            train_std: report.train.std_dev,
            test_mean: report.test.average,
            test_std: report.test.std_dev,
            iterations: report.iterations.len(),
            failed: report.failed,
        });
        parity.push(report.best_parity);
    }
    Ok(SweepReport {
        family: grid.family,
        grid: grid.clone(),
        protocol: protocol.clone(),
        rows,
        parity,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{encode, generate_synthetic};
    use crate::harness::grid::NoObserver;
    use proptest::prelude::*;
    use serde_json::json;

    fn fixture(n: usize) -> DesignMatrix {
        encode(&generate_synthetic(n, 0.05, 8).unwrap()).unwrap()
    }

    fn small(outer: usize, inner: usize) -> EvalProtocol {
        EvalProtocol {
            outer_iterations: outer,
            inner_iterations: inner,
            k: 3,
            ..EvalProtocol::default()
        }
    }

    #[test]
    fn single_iteration_has_zero_range() {
        let r = run_evaluation(&HyperGrid::single(Family::Knn), &fixture(60), &small(1, 1), &NoObserver).unwrap();
        assert_eq!(r.iterations.len(), 1);
        assert_eq!(r.test.average, r.test.maximum);
        assert_eq!(r.test.minimum, r.test.maximum);
        assert_eq!(r.test.prediction_range, 0.0);
        assert_eq!(r.test.std_dev, 0.0);
        assert_eq!(r.best_parity.as_ref().unwrap().len(), 12);
    }

    #[test]
    fn statistics_are_functions_of_the_series() {
        let r = run_evaluation(
            &HyperGrid::single(Family::Tree),
            &fixture(80),
            &small(2, 3),
            &NoObserver,
        )
        .unwrap();
        let v = r.test_rmses();
        assert_eq!(v.len(), 6);
        let mean = v.iter().sum::<f64>() / 6.0;
        let max = v.iter().cloned().fold(f64::MIN, f64::max);
        let min = v.iter().cloned().fold(f64::MAX, f64::min);
        let sd = (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / 6.0).sqrt();
        assert!((r.test.average - mean).abs() < 1e-15);
        assert_eq!((r.test.maximum, r.test.minimum), (max, min));
        assert_eq!(r.test.prediction_range, max - min);
        assert!((r.test.std_dev - sd).abs() < 1e-15);
        let ids: Vec<u64> = r.iterations.iter().map(|i| i.iteration).collect();
        assert_eq!(ids, (0..6).collect::<Vec<_>>());
    }

    #[test]
    fn reproducible_to_the_bit() {
        let g = HyperGrid::single(Family::Forest).with_axis("n_estimators", vec![json!(5), json!(10)]);
        let a = run_evaluation(&g, &fixture(60), &small(1, 3), &NoObserver).unwrap();
        let b = run_evaluation(&g, &fixture(60), &small(1, 3), &NoObserver).unwrap();
        assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
        assert_eq!(a.best_parity, b.best_parity);
    }

    #[test]
    fn fast_mode_is_labelled() {
        let p = EvalProtocol {
            fast_mode: true,
            ..small(2, 2)
        };
        let r = run_evaluation(&HyperGrid::single(Family::Knn), &fixture(50), &p, &NoObserver).unwrap();
        assert!(r.protocol_deviation.is_some());
        assert_eq!(r.iterations.len(), 4);
    }

    #[test]
    fn protocol_errors() {
        let g = HyperGrid::single(Family::Knn);
        let data = fixture(30);
        let bad = EvalProtocol {
            fractions: SplitFractions {
                train: 1.5,
                test: 0.0,
                holdout: 0.0,
            },
            ..small(1, 1)
        };
        assert!(matches!(
            run_evaluation(&g, &data, &bad, &NoObserver),
            Err(Error::Config(_))
        ));
        assert!(run_evaluation(&g, &data, &small(0, 1), &NoObserver).is_err());
        let no_test = EvalProtocol {
            fractions: SplitFractions::new(1.0, 0.0, 0.0).unwrap(),
            ..small(1, 1)
        };
        assert!(matches!(
            run_evaluation(&g, &data, &no_test, &NoObserver),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn presets() {
        let p = EvalProtocol::default().with_preset(Preset::Ci);
        assert_eq!((p.outer_iterations, p.inner_iterations, p.k), (1, 5, 5));
        let p = p.with_preset(Preset::Full);
        assert_eq!((p.outer_iterations, p.inner_iterations), (3, 50));
    }

    #[test]
    fn sweep_rows_and_improvement() {
        let g = HyperGrid::single(Family::Knn);
        let s = fraction_sweep(&g, &fixture(200), &[0.1, 0.8], &small(1, 4), &NoObserver).unwrap();
        assert_eq!(s.rows.len(), 2);
        assert!(s.rows[1].test_mean <= s.rows[0].test_mean);
        assert_eq!(s.parity.len(), 2);
        let one = fraction_sweep(&g, &fixture(60), &[0.5], &small(1, 1), &NoObserver).unwrap();
        assert_eq!(one.rows.len(), 1);
        assert!(fraction_sweep(&g, &fixture(60), &[0.5, 0.3], &small(1, 1), &NoObserver).is_err());
        assert!(fraction_sweep(&g, &fixture(60), &[1.0], &small(1, 1), &NoObserver).is_err());
    }

    proptest! {
        #[test]
        fn stats_invariants(values in prop::collection::vec(0.0f64..1.0, 1..50)) {
            let s = RmseStats::from_values(&values).unwrap();
            prop_assert!(s.minimum <= s.average && s.average <= s.maximum);
            prop_assert_eq!(s.prediction_range, s.maximum - s.minimum);
            prop_assert!(s.std_dev >= 0.0);
        }
    }
}
