//! Seeded train/test/holdout partitions and k-fold assignments.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::{rng, Error, Result};

/// Fractions of the rows assigned to each set; any remainder is unused.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitFractions {
    pub train: f64,
    pub test: f64,
    #[serde(default)]
    pub holdout: f64,
}

impl Default for SplitFractions {
    fn default() -> Self {
        SplitFractions {
            train: 0.8,
            test: 0.2,
            holdout: 0.0,
        }
    }
}

impl SplitFractions {
    pub fn new(train: f64, test: f64, holdout: f64) -> Result<Self> {
        let f = SplitFractions { train, test, holdout };
        f.validate()?;
        Ok(f)
    }

    pub fn validate(&self) -> Result<()> {
        let parts = [self.train, self.test, self.holdout];
        if parts.iter().any(|p| !p.is_finite() || !(0.0..=1.0).contains(p)) {
            return Err(Error::Config(format!(
                "split fractions must lie in [0, 1], got {self:?}"
            )));
        }
        if !(self.train > 0.0) {
            return Err(Error::Config("train fraction must be positive".into()));
        }
        if parts.iter().sum::<f64>() > 1.0 + 1e-9 {
            return Err(Error::Config(format!("split fractions sum to more than 1: {self:?}")));
        }
        Ok(())
    }
}

/// Rounded-down set size, guarded so that e.g. 2025 × 0.8 gives 1620.
fn portion(fraction: f64, n: usize) -> usize {
    ((fraction * n as f64) + 1e-9).floor() as usize
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitPlan {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
    pub holdout: Vec<usize>,
    pub fractions: SplitFractions,
    pub seed: u64,
    pub iteration: u64,
}

/// Shuffles `0..n` with the stream `(seed, iteration)` and cuts it into
/// train, then test, then holdout.
pub fn dual_mc_split(n: usize, fractions: SplitFractions, seed: u64, iteration: u64) -> Result<SplitPlan> {
    fractions.validate()?;
    let n_train = portion(fractions.train, n);
    let n_test = portion(fractions.test, n);
    let n_hold = portion(fractions.holdout, n).min(n - n_train - n_test);
    if n_train == 0 {
        return Err(Error::Config(format!(
            "train fraction {} of {n} rows leaves an empty training set",
            fractions.train
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng::stream(seed, &[iteration]));
    Ok(SplitPlan {
        train: order[..n_train].to_vec(),
        test: order[n_train..n_train + n_test].to_vec(),
        holdout: order[n_train + n_test..n_train + n_test + n_hold].to_vec(),
        fractions,
        seed,
        iteration,
    })
}

/// `k` disjoint validation folds covering `0..n`; the first `n % k` folds
/// hold one extra index.
pub fn kfold_indices(n: usize, k: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if k < 2 || k > n {
        return Err(Error::Config(format!("k-fold needs 2 <= k <= n, got k = {k}, n = {n}")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng::stream(seed, &[0xF01D]));
    let (base, extra) = (n / k, n % k);
    let mut folds = Vec::with_capacity(k);
    let mut start = 0;
    for f in 0..k {
        let len = base + usize::from(f < extra);
        folds.push(order[start..start + len].to_vec());
        start += len;
    }
    Ok(folds)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn exact_fractions() {
        let p = dual_mc_split(10, SplitFractions::default(), 1, 0).unwrap();
        assert_eq!((p.train.len(), p.test.len(), p.holdout.len()), (8, 2, 0));
        let mut all: Vec<usize> = p.train.iter().chain(&p.test).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..10).collect::<Vec<_>>());
        assert_eq!(
            dual_mc_split(2025, SplitFractions::default(), 3, 0)
                .unwrap()
                .train
                .len(),
            1620
        );
    }

    #[test]
    fn reproducible_and_iteration_dependent() {
        let f = SplitFractions::new(0.5, 0.3, 0.1).unwrap();
        assert_eq!(dual_mc_split(50, f, 9, 4).unwrap(), dual_mc_split(50, f, 9, 4).unwrap());
        assert_ne!(
            dual_mc_split(50, f, 9, 4).unwrap().train,
            dual_mc_split(50, f, 9, 5).unwrap().train
        );
    }

    #[test]
    fn invalid_fractions() {
        assert!(SplitFractions::new(1.5, 0.0, 0.0).is_err());
        assert!(SplitFractions::new(0.7, 0.4, 0.0).is_err());
        assert!(SplitFractions::new(0.0, 0.5, 0.0).is_err());
        assert!(dual_mc_split(3, SplitFractions::new(0.2, 0.2, 0.0).unwrap(), 1, 0).is_err());
    }

    #[test]
    fn fold_sizes() {
        let sizes: Vec<usize> = kfold_indices(10, 5, 1).unwrap().iter().map(Vec::len).collect();
        assert_eq!(sizes, vec![2; 5]);
        let sizes: Vec<usize> = kfold_indices(7, 3, 1).unwrap().iter().map(Vec::len).collect();
        assert_eq!(sizes, vec![3, 2, 2]);
        assert!(kfold_indices(5, 1, 1).is_err());
        assert!(kfold_indices(5, 6, 1).is_err());
    }

    proptest! {
        #[test]
        fn plans_are_disjoint_and_sized(
            n in 1usize..400,
            train in 0.05f64..1.0,
            test_share in 0.0f64..1.0,
            hold_share in 0.0f64..1.0,
            seed in any::<u64>(),
            iteration in 0u64..1000,
        ) {
            let test = (1.0 - train) * test_share;
            let holdout = (1.0 - train - test) * hold_share;
            let f = SplitFractions::new(train, test, holdout).unwrap();
            match dual_mc_split(n, f, seed, iteration) {
                Ok(p) => {
                    prop_assert_eq!(p.train.len(), portion(train, n));
                    prop_assert_eq!(p.test.len(), portion(test, n));
                    prop_assert!(p.holdout.len() <= portion(holdout, n));
                    let mut seen = vec![false; n];
                    for &i in p.train.iter().chain(&p.test).chain(&p.holdout) {
                        prop_assert!(i < n);
                        prop_assert!(!seen[i]);
                        seen[i] = true;
                    }
                    prop_assert_eq!(&p, &dual_mc_split(n, f, seed, iteration).unwrap());
                }
                Err(_) => prop_assert_eq!(portion(train, n), 0),
            }
        }

        #[test]
        fn folds_partition_the_rows(n in 2usize..300, k_seed in 0usize..1000, seed in any::<u64>()) {
            let k = 2 + k_seed % (n - 1);
            let folds = kfold_indices(n, k, seed).unwrap();
            prop_assert_eq!(folds.len(), k);
            let (lo, hi) = folds.iter().fold((usize::MAX, 0), |(a, b), f| (a.min(f.len()), b.max(f.len())));
            prop_assert!(hi - lo <= 1);
            let mut all: Vec<usize> = folds.concat();
            all.sort_unstable();
            prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
        }
    }
}
