//! Independent trials with seeds `base_seed + k`, run on the rayon pool.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::metrics::SeriesStats;

#[derive(Debug)]
pub struct TrialOutcome<R> {
    pub trial: usize,
    pub seed: u64,
    pub result: Result<R>,
}

#[derive(Debug)]
pub struct MonteCarlo<R> {
    pub trials: Vec<TrialOutcome<R>>,
}

impl<R> MonteCarlo<R> {
    pub fn successes(&self) -> impl Iterator<Item = (&TrialOutcome<R>, &R)> {
        self.trials
            .iter()
            .filter_map(|t| t.result.as_ref().ok().map(|r| (t, r)))
    }

    pub fn failures(&self) -> impl Iterator<Item = (&TrialOutcome<R>, &Error)> {
        self.trials
            .iter()
            .filter_map(|t| t.result.as_ref().err().map(|e| (t, e)))
    }

    pub fn n_failed(&self) -> usize {
        self.failures().count()
    }

    /// Mean and population std of one series per successful trial.
    pub fn stats(&self, series: impl Fn(&R) -> Vec<f64>) -> Result<SeriesStats> {
        let all: Vec<Vec<f64>> = self.successes().map(|(_, r)| series(r)).collect();
        if all.is_empty() {
            let first = self
                .failures()
                .next()
                .map_or_else(|| "no trials".to_string(), |(t, e)| format!("trial {}: {e}", t.trial));
            return Err(Error::AllTrialsFailed {
                trials: self.trials.len(),
                first,
            });
        }
        SeriesStats::from_series(&all)
    }
}

/// Runs `trial(k, seed)` for `k in 0..trials`. A failing trial is recorded
/// and does not stop the others. Results are ordered by trial index, so the
/// output does not depend on thread scheduling.
pub fn monte_carlo<R, F>(trials: usize, base_seed: u64, trial: F) -> Result<MonteCarlo<R>>
where
    R: Send,
    F: Fn(usize, u64) -> Result<R> + Sync,
{
    if trials == 0 {
        return Err(Error::InvalidParams("monte carlo needs at least one trial".into()));
    }
    let trials = (0..trials)
        .into_par_iter()
        .map(|k| {
            let seed = base_seed.wrapping_add(k as u64);
            TrialOutcome {
                trial: k,
                seed,
                result: trial(k, seed),
            }
        })
        .collect();
    Ok(MonteCarlo { trials })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_trial_has_zero_std() {
        let mc = monte_carlo(1, 5, |_, s| Ok(vec![s as f64, 2.0])).unwrap();
        let st = mc.stats(Clone::clone).unwrap();
        assert_eq!(st.std, vec![0.0, 0.0]);
        assert_eq!(st.mean, vec![5.0, 2.0]);
    }

    #[test]
    fn seeds_are_offsets_and_failures_are_kept() {
        let mc = monte_carlo(4, 10, |k, s| {
            if k == 2 {
                Err(Error::InvalidParams("boom".into()))
            } else {
                Ok(s)
            }
        })
        .unwrap();
        let seeds: Vec<u64> = mc.trials.iter().map(|t| t.seed).collect();
        assert_eq!(seeds, vec![10, 11, 12, 13]);
        assert_eq!(mc.n_failed(), 1);
        let st = mc.stats(|&s| vec![s as f64]).unwrap();
        assert_eq!(st.trials, 3);
    }

    #[test]
    fn all_failed_is_an_error() {
        let mc = monte_carlo(2, 0, |_, _| -> Result<Vec<f64>> { Err(Error::EmptySample) }).unwrap();
        assert!(matches!(mc.stats(Clone::clone), Err(Error::AllTrialsFailed { trials: 2, .. })));
    }
}
