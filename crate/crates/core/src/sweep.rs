//! Grid search over training hyperparameters, selected by validation
//! NDCG@100 and re-evaluated on the test users.

use std::collections::BTreeMap;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::DatasetSplit;
use crate::error::{Error, Result};
use crate::eval::{self, EvalReport};
use crate::models::{self, ModelKind, TrainConfig, TrainedModel, Validation};

/// A numeric hyperparameter that can be swept.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Param {
    LatentDim,
    Lambda,
    Alpha,
    RP,
    RQ,
    SQ,
    NormExponent,
    PopularityThreshold,
    Repeat,
    MaxIters,
}

impl Param {
    pub const ALL: [Param; 10] = [
        Param::LatentDim,
        Param::Lambda,
        Param::Alpha,
        Param::RP,
        Param::RQ,
        Param::SQ,
        Param::NormExponent,
        Param::PopularityThreshold,
        Param::Repeat,
        Param::MaxIters,
    ];

    pub fn key(self) -> &'static str {
        match self {
            Param::LatentDim => "L",
            Param::Lambda => "lambda",
            Param::Alpha => "alpha",
            Param::RP => "r_p",
            Param::RQ => "r_q",
            Param::SQ => "s_q",
            Param::NormExponent => "n",
            Param::PopularityThreshold => "popularity_threshold",
            Param::Repeat => "repeat",
            Param::MaxIters => "max_iters",
        }
    }

    fn is_count(self) -> bool {
        matches!(
            self,
            Param::LatentDim | Param::PopularityThreshold | Param::Repeat | Param::MaxIters
        )
    }

    /// Writes `value` into `config`, rejecting non-integral counts.
    pub fn apply(self, config: &mut TrainConfig, value: f64) -> Result<()> {
        if !value.is_finite() {
            return Err(Error::param(
                self.key(),
                format!("non-finite value {value}"),
            ));
        }
        if self.is_count() && (value < 0.0 || value.fract() != 0.0) {
            return Err(Error::param(
                self.key(),
                format!("expected a count, got {value}"),
            ));
        }
        let count = value as usize;
        match self {
            Param::LatentDim => config.latent_dim = count,
            Param::Lambda => config.islim.lambda = value,
            Param::Alpha => config.islim.alpha = value,
            Param::RP => config.r_p = value,
            Param::RQ => config.r_q = value,
            Param::SQ => config.s_q = value,
            Param::NormExponent => config.norm_exponent = value,
            Param::PopularityThreshold => config.islim.popularity_threshold = count,
            Param::Repeat => config.islim.repeat = count,
            Param::MaxIters => config.max_iters = count,
        }
        Ok(())
    }
}

impl FromStr for Param {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Param::ALL
            .into_iter()
            .find(|p| p.key() == s)
            .ok_or_else(|| Error::Config(format!("`{s}` is not a sweepable parameter")))
    }
}

#[derive(Debug, Clone)]
pub struct SweepGrid {
    pub model: ModelKind,
    pub base: TrainConfig,
    /// Axes in declaration order; the last axis varies fastest.
    pub axes: Vec<(Param, Vec<f64>)>,
}

impl SweepGrid {
    pub fn n_points(&self) -> usize {
        self.axes.iter().map(|(_, v)| v.len()).product()
    }

    /// Every grid point as (assignment, config), in row-major order.
    pub fn points(&self) -> Result<Vec<(BTreeMap<String, f64>, TrainConfig)>> {
        for (p, values) in &self.axes {
            if values.is_empty() {
                return Err(Error::Config(format!("grid for `{}` is empty", p.key())));
            }
        }
        let mut out = Vec::with_capacity(self.n_points());
        let mut idx = vec![0usize; self.axes.len()];
        loop {
            let mut config = self.base.clone();
            let mut assignment = BTreeMap::new();
            for ((p, values), &j) in self.axes.iter().zip(&idx) {
                p.apply(&mut config, values[j])?;
                assignment.insert(p.key().to_string(), values[j]);
            }
            config.validate()?;
            out.push((assignment, config));

            let mut axis = self.axes.len();
            loop {
                if axis == 0 {
                    return Ok(out);
                }
                axis -= 1;
                idx[axis] += 1;
                if idx[axis] < self.axes[axis].1.len() {
                    break;
                }
                idx[axis] = 0;
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub params: BTreeMap<String, f64>,
    /// Best validation NDCG@100 reached, or None when training failed.
    pub valid_ndcg: Option<f64>,
    pub best_iteration: usize,
    pub error: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepReport {
    pub model: ModelKind,
    pub setup: String,
    pub rows: Vec<SweepRow>,
    /// Index into `rows` of the selected grid point.
    pub best: usize,
    pub test: EvalReport,
}

impl SweepReport {
    pub fn best_row(&self) -> &SweepRow {
        &self.rows[self.best]
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Index of the highest score; earlier rows win ties.
pub fn argmax_first(scores: &[Option<f64>]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, s) in scores.iter().enumerate() {
        if let Some(s) = *s {
            if best.is_none_or(|(_, b)| s > b) {
                best = Some((i, s));
            }
        }
    }
    best.map(|(i, _)| i)
}

/// Trains every grid point on `split.train`, selects by validation
/// NDCG@100, retrains the winner and evaluates it on the test users.
pub fn run_sweep(
    split: &DatasetSplit,
    grid: &SweepGrid,
    ks: &[usize],
) -> Result<(SweepReport, TrainedModel)> {
    let points = grid.points()?;
    let valid = Validation {
        fold_in: &split.valid_fold_in,
        holdout: &split.valid_holdout,
    };
    let rows: Vec<SweepRow> = points
        .par_iter()
        .map(|(params, config)| {
            match models::train(grid.model, &split.train, Some(valid), config) {
                Ok(out) => SweepRow {
                    params: params.clone(),
                    valid_ndcg: out.best_score(),
                    best_iteration: out.best_iteration,
                    error: None,
                },
                Err(e) => {
                    log::warn!("grid point {params:?} failed: {e}");
                    SweepRow {
                        params: params.clone(),
                        valid_ndcg: None,
                        best_iteration: 0,
                        error: Some(e.to_string()),
                    }
                }
            }
        })
        .collect();
    let scores: Vec<Option<f64>> = rows.iter().map(|r| r.valid_ndcg).collect();
    let Some(best) = argmax_first(&scores) else {
        // Surface the first failure with its original class.
        let (_, config) = &points[0];
        models::train(grid.model, &split.train, Some(valid), config)?;
        return Err(Error::Evaluation(
            "no grid point produced a validation score".into(),
        ));
    };
    log::info!(
        "best grid point {:?} (ndcg@100 {:?})",
        rows[best].params,
        rows[best].valid_ndcg
    );

    let model = models::train(grid.model, &split.train, Some(valid), &points[best].1)?.model;
    let mut test = eval::evaluate(&model, &split.test_fold_in, &split.test_holdout, ks, false)?;
    for (k, v) in &rows[best].params {
        test.config_echo.insert(k.clone(), v.to_string());
    }
    Ok((
        SweepReport {
            model: grid.model,
            setup: grid.base.setup.name().to_string(),
            rows,
            best,
            test,
        },
        model,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_points_are_row_major() {
        let grid = SweepGrid {
            model: ModelKind::Mf,
            base: TrainConfig::default(),
            axes: vec![
                (Param::RP, vec![1.0, 2.0]),
                (Param::LatentDim, vec![4.0, 8.0, 16.0]),
            ],
        };
        let points = grid.points().unwrap();
        assert_eq!(points.len(), 6);
        assert_eq!(points[1].1.latent_dim, 8);
        assert_eq!(points[1].1.r_p, 1.0);
        assert_eq!(points[3].1.r_p, 2.0);
        assert_eq!(points[3].1.latent_dim, 4);
    }

    #[test]
    fn counts_must_be_integral() {
        let mut c = TrainConfig::default();
        assert!(Param::LatentDim.apply(&mut c, 2.5).is_err());
        assert!(Param::Lambda.apply(&mut c, 2.5).is_ok());
    }

    #[test]
    fn ties_go_to_the_first_row() {
        assert_eq!(
            argmax_first(&[Some(0.1), Some(0.3), None, Some(0.3)]),
            Some(1)
        );
        assert_eq!(argmax_first(&[None, None]), None);
    }

    #[test]
    fn parameter_names_round_trip() {
        for p in Param::ALL {
            assert_eq!(p.key().parse::<Param>().unwrap(), p);
        }
    }
}
