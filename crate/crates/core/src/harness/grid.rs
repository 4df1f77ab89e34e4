//! Exhaustive grid search scored by k-fold cross-validated negative RMSE.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::split::kfold_indices;
use crate::data::{fit_scaler, DesignMatrix, ScalerMethod};
use crate::metrics::rmse;
use crate::models::{Family, ModelConfig};
use crate::{Error, Result};

pub type Candidate = BTreeMap<String, Value>;

/// A model family, parameters pinned for every candidate, and named axes
/// whose cartesian product forms the candidates. Axes are ordered by name
/// and the last axis varies fastest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HyperGrid {
    pub family: Family,
    #[serde(default)]
    pub fixed: BTreeMap<String, Value>,
    #[serde(default)]
    pub axes: BTreeMap<String, Vec<Value>>,
}

impl HyperGrid {
    /// The family's default configuration as a single candidate.
    pub fn single(family: Family) -> HyperGrid {
        HyperGrid {
            family,
            fixed: BTreeMap::new(),
            axes: BTreeMap::new(),
        }
    }

    pub fn with_axis(mut self, name: &str, values: Vec<Value>) -> HyperGrid {
        self.axes.insert(name.to_string(), values);
        self
    }

    pub fn with_fixed(mut self, name: &str, value: Value) -> HyperGrid {
        self.fixed.insert(name.to_string(), value);
        self
    }

    pub fn size(&self) -> usize {
        self.axes.values().map(Vec::len).product()
    }

    pub fn candidates(&self) -> Vec<Candidate> {
        let mut out = vec![Candidate::new()];
        for (name, values) in &self.axes {
            out = out
                .into_iter()
                .flat_map(|c| {
                    values.iter().map(move |v| {
                        let mut c = c.clone();
                        c.insert(name.clone(), v.clone());
                        c
                    })
                })
                .collect();
        }
        out
    }

    pub fn base_config(&self) -> Result<ModelConfig> {
        self.family.default_config().with_params(&self.fixed)
    }

    /// Resolves every candidate to a model configuration, rejecting empty
    /// axes and unknown or mistyped parameters.
    pub fn configs(&self) -> Result<Vec<(Candidate, ModelConfig)>> {
        if let Some((name, _)) = self.axes.iter().find(|(_, v)| v.is_empty()) {
            return Err(Error::Config(format!("grid axis `{name}` has no values")));
        }
        let base = self.base_config()?;
        self.candidates()
            .into_iter()
            .map(|c| {
                let cfg = base.with_params(&c)?;
                Ok((c, cfg))
            })
            .collect()
    }
}

/// Observes which rows each fit sees, by the data matrix's row ids.
pub trait FitObserver: Sync {
    fn scaler_fitted(&self, _row_ids: &[usize]) {}
    fn model_fitted(&self, _row_ids: &[usize]) {}
}

pub struct NoObserver;

impl FitObserver for NoObserver {}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CandidateScore {
    pub params: Candidate,
    /// Mean negative RMSE over folds; `-inf` when any fold failed.
    pub mean_score: f64,
    pub fold_scores: Vec<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CvResult {
    pub candidates: Vec<CandidateScore>,
    pub chosen: usize,
}

impl CvResult {
    pub fn best(&self) -> &CandidateScore {
        &self.candidates[self.chosen]
    }
}

/// Fits a scaler on `train` only, then the model on the scaled rows.
pub(crate) fn fit_scaled(
    cfg: &ModelConfig,
    train: &DesignMatrix,
    method: ScalerMethod,
    observer: &dyn FitObserver,
) -> Result<(crate::data::ScalerState, Box<dyn crate::metrics::Regressor>)> {
    observer.scaler_fitted(train.row_ids());
    let scaler = fit_scaler(train, method)?;
    let scaled = scaler.apply(train)?;
    observer.model_fitted(scaled.row_ids());
    let model = cfg.fit(&scaled)?;
    Ok((scaler, model))
}

fn fold_score(
    cfg: &ModelConfig,
    data: &DesignMatrix,
    folds: &[Vec<usize>],
    v: usize,
    method: ScalerMethod,
    observer: &dyn FitObserver,
) -> Result<f64> {
    let train_idx: Vec<usize> = folds
        .iter()
        .enumerate()
        .filter(|(f, _)| *f != v)
        .flat_map(|(_, idx)| idx.iter().copied())
        .collect();
    let (scaler, model) = fit_scaled(cfg, &data.select_rows(&train_idx), method, observer)?;
    let val = scaler.apply(&data.select_rows(&folds[v]))?;
    let pred = model.predict(val.features())?;
    Ok(-rmse(&pred.values, val.targets())?)
}

/// Scores every grid candidate by k-fold cross-validation on `train`. The
/// scaler is refitted on each fold's training portion.
pub fn grid_search(
    grid: &HyperGrid,
    train: &DesignMatrix,
    scaler: ScalerMethod,
    k: usize,
    seed: u64,
    observer: &dyn FitObserver,
) -> Result<CvResult> {
    let configs = grid.configs()?;
    let folds = kfold_indices(train.n_rows(), k, seed)?;
    let candidates: Vec<CandidateScore> = configs
        .par_iter()
        .map(|(params, cfg)| {
            let scores: Result<Vec<f64>> = (0..k)
                .map(|v| fold_score(cfg, train, &folds, v, scaler, observer))
                .collect();
            match scores {
                Ok(fold_scores) => CandidateScore {
                    params: params.clone(),
                    mean_score: fold_scores.iter().sum::<f64>() / k as f64,
                    fold_scores,
                    error: None,
                },
                Err(e) => CandidateScore {
                    params: params.clone(),
                    mean_score: f64::NEG_INFINITY,
                    fold_scores: Vec::new(),
                    error: Some(e.to_string()),
                },
            }
        })
        .collect();
    let mut chosen = None;
    for (i, c) in candidates.iter().enumerate() {
        if c.mean_score > f64::NEG_INFINITY && chosen.is_none_or(|j: usize| c.mean_score > candidates[j].mean_score) {
            chosen = Some(i);
        }
    }
    match chosen {
        Some(chosen) => Ok(CvResult { candidates, chosen }),
        None => Err(Error::Numerical(format!(
            "every {} grid candidate failed; first error: {}",
            grid.family,
            candidates[0].error.as_deref().unwrap_or("unknown")
        ))),
    }
}
