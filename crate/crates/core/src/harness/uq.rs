//! How the ensemble's aleatoric and epistemic uncertainty move with the
//! amount of training data.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::eval::validate_fraction_list;
use super::split::{dual_mc_split, SplitFractions};
use crate::bnn::{
    decompose_uncertainty, ensemble_predict, train_ensemble_model, EnsembleConfig, UncertaintyDecomposition,
};
use crate::data::{fit_scaler, DesignMatrix, ScalerMethod};
use crate::metrics::{parity_table, rmse, ParityTable};
use crate::{rng, Error, Result};

pub const DEFAULT_DRAWS: usize = 200;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct UqStudy {
    pub fractions: Vec<f64>,
    pub seeds: Vec<u64>,
    pub draws: usize,
    pub scaler: ScalerMethod,
}

impl Default for UqStudy {
    fn default() -> Self {
        UqStudy {
            fractions: vec![0.1, 0.5, 0.8, 0.9, 0.99],
            seeds: vec![2022, 2023, 2024, 2025, 2026],
            draws: DEFAULT_DRAWS,
            scaler: ScalerMethod::Zscore,
        }
    }
}

impl UqStudy {
    pub fn validate(&self) -> Result<()> {
        validate_fraction_list(&self.fractions)?;
        if self.seeds.is_empty() {
            return Err(Error::Config("uncertainty study needs at least one seed".into()));
        }
        if self.draws < 2 {
            return Err(Error::Config(format!(
                "uncertainty decomposition needs at least 2 draws, got {}",
                self.draws
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UqReplicate {
    pub seed: u64,
    pub aleatoric: f64,
    pub epistemic: f64,
    pub total: f64,
    pub rmse: f64,
}

/// One trained ensemble evaluated on its test split.
#[derive(Debug, Clone, PartialEq)]
pub struct UqRun {
    pub replicate: UqReplicate,
    pub decomposition: UncertaintyDecomposition,
    pub parity: ParityTable,
}

/// Splits `(fraction, 1 − fraction)` with `seed`, trains the ensemble model
/// on the scaled training rows with that seed, and decomposes its test-set
/// predictions over `draws` posterior samples.
pub fn uq_run(
    cfg: &EnsembleConfig,
    data: &DesignMatrix,
    fraction: f64,
    seed: u64,
    draws: usize,
    scaler: ScalerMethod,
) -> Result<UqRun> {
    let plan = dual_mc_split(
        data.n_rows(),
        SplitFractions::new(fraction, 1.0 - fraction, 0.0)?,
        seed,
        0,
    )?;
    if plan.test.is_empty() {
        return Err(Error::Config(format!(
            "training fraction {fraction} leaves no test rows"
        )));
    }
    let train = data.select_rows(&plan.train);
    let test = data.select_rows(&plan.test);
    let s = fit_scaler(&train, scaler)?;
    let model = train_ensemble_model(&s.apply(&train)?, &EnsembleConfig { seed, ..cfg.clone() })?;
    let out = ensemble_predict(&model, s.apply(&test)?.features(), draws, rng::derive_seed(seed, &[3]))?;
    let dec = decompose_uncertainty(&out)?;
    let parity = parity_table(test.targets(), &dec.mean, Some(&dec.aleatoric), Some(&dec.epistemic))?;
    Ok(UqRun {
        replicate: UqReplicate {
            seed,
            aleatoric: dec.aggregate.aleatoric,
            epistemic: dec.aggregate.epistemic,
            total: dec.aggregate.total,
            rmse: rmse(&dec.mean, test.targets())?,
        },
        decomposition: dec,
        parity,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UqTrendRow {
    pub fraction: f64,
    pub aleatoric_mean: f64,
    pub aleatoric_std: f64,
    pub epistemic_mean: f64,
    pub epistemic_std: f64,
    pub rmse_mean: f64,
    pub rmse_std: f64,
    pub replicates: Vec<UqReplicate>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UqTrendReport {
    pub model: EnsembleConfig,
    pub study: UqStudy,
    pub rows: Vec<UqTrendRow>,
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    (m, (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n).sqrt())
}

pub fn uq_trend_study(cfg: &EnsembleConfig, data: &DesignMatrix, study: &UqStudy) -> Result<UqTrendReport> {
    study.validate()?;
    let jobs: Vec<(f64, u64)> = study
        .fractions
        .iter()
        .flat_map(|&f| study.seeds.iter().map(move |&s| (f, s)))
        .collect();
    let reps = jobs
        .par_iter()
        .map(|&(f, s)| uq_run(cfg, data, f, s, study.draws, study.scaler).map(|r| r.replicate))
        .collect::<Result<Vec<_>>>()?;
    let rows = study
        .fractions
        .iter()
        .zip(reps.chunks(study.seeds.len()))
        .map(|(&fraction, reps)| {
            let col = |f: fn(&UqReplicate) -> f64| mean_std(&reps.iter().map(f).collect::<Vec<_>>());
            let (aleatoric_mean, aleatoric_std) = col(|r| r.aleatoric);
            let (epistemic_mean, epistemic_std) = col(|r| r.epistemic);
            let (rmse_mean, rmse_std) = col(|r| r.rmse);
            UqTrendRow {
                fraction,
                aleatoric_mean,
                aleatoric_std,
                epistemic_mean,
                epistemic_std,
                rmse_mean,
                rmse_std,
                replicates: reps.to_vec(),
            }
        })
        .collect();
    Ok(UqTrendReport {
        model: cfg.clone(),
        study: study.clone(),
        rows,
    })
}
