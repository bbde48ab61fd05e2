//! Downstream recommenders that consume ImplicitSLIM / SLIM-LLE embeddings:
//! ALS matrix factorization and PLRec, each with the vanilla,
//! `islim_init_reg`, `islim_init` and `slimlle_init` setups.

mod mf;
mod plrec;

use serde::{Deserialize, Serialize};

use crate::dense::{self, Cholesky, DenseMatrix};
use crate::embedding::EmbeddingMatrix;
use crate::error::{Error, Result};
use crate::eval;
use crate::implicit::ImplicitSlimParams;
use crate::sparse::InteractionMatrix;

pub use mf::{
    compute_bias, mf_item_update, mf_objective, mf_user_update, train_mf, MfHyper, MfModel,
};
pub use plrec::{
    item_normalization, plrec_objective, plrec_projection, plrec_q_update, train_plrec, PlrecHyper,
    PlrecModel,
};

/// How item embeddings are initialized and regularized.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Setup {
    Vanilla,
    IslimInitReg,
    IslimInit,
    SlimlleInit,
}

impl ModelKind {
    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Mf => "mf",
            ModelKind::Plrec => "plrec",
        }
    }
}

impl Setup {
    pub fn name(self) -> &'static str {
        match self {
            Setup::Vanilla => "vanilla",
            Setup::IslimInitReg => "islim_init_reg",
            Setup::IslimInit => "islim_init",
            Setup::SlimlleInit => "slimlle_init",
        }
    }
}

impl std::str::FromStr for Setup {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "vanilla" => Ok(Setup::Vanilla),
            "islim_init_reg" => Ok(Setup::IslimInitReg),
            "islim_init" => Ok(Setup::IslimInit),
            "slimlle_init" => Ok(Setup::SlimlleInit),
            other => Err(Error::param("setup", format!("unknown setup `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Mf,
    Plrec,
}

impl std::str::FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mf" => Ok(ModelKind::Mf),
            "plrec" => Ok(ModelKind::Plrec),
            other => Err(Error::param("model", format!("unknown model `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub setup: Setup,
    pub latent_dim: usize,
    pub max_iters: usize,
    pub r_p: f64,
    pub r_q: f64,
    pub s_q: f64,
    /// PLRec column-normalization exponent.
    pub norm_exponent: f64,
    pub islim: ImplicitSlimParams,
    pub seed: u64,
    pub use_bias: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            setup: Setup::Vanilla,
            latent_dim: 64,
            max_iters: 10,
            r_p: 1.0,
            r_q: 1.0,
            s_q: 0.0,
            norm_exponent: 0.0,
            islim: ImplicitSlimParams::default(),
            seed: 0,
            use_bias: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.latent_dim == 0 {
            return Err(Error::param("latent_dim", "must be at least 1"));
        }
        if self.max_iters == 0 {
            return Err(Error::param("max_iters", "must be at least 1"));
        }
        for (name, v) in [("r_p", self.r_p), ("r_q", self.r_q), ("s_q", self.s_q)] {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::param(name, format!("must be non-negative, got {v}")));
            }
        }
        if !self.norm_exponent.is_finite() {
            return Err(Error::param("n", "normalization exponent must be finite"));
        }
        if matches!(self.setup, Setup::IslimInitReg | Setup::IslimInit) {
            self.islim.validate()?;
        }
        if self.setup == Setup::SlimlleInit {
            crate::slim::check_lambda(self.islim.lambda)?;
        }
        Ok(())
    }
}

/// Validation fold-in / holdout pair used for early stopping.
#[derive(Debug, Clone, Copy)]
pub struct Validation<'a> {
    pub fold_in: &'a InteractionMatrix,
    pub holdout: &'a InteractionMatrix,
}

impl Validation<'_> {
    pub(crate) fn score(&self, model: &dyn eval::Scorer) -> Result<f64> {
        eval::selection_score(model, self.fold_in, self.holdout)
    }
}

/// Trained model plus the validation trace.
#[derive(Debug, Clone)]
pub struct TrainOutcome<M> {
    pub model: M,
    /// Validation NDCG@100 after each completed iteration.
    pub history: Vec<f64>,
    /// 1-based iteration of the returned model.
    pub best_iteration: usize,
}

impl<M> TrainOutcome<M> {
    pub fn best_score(&self) -> Option<f64> {
        self.history
            .get(self.best_iteration.checked_sub(1)?)
            .copied()
    }
}

/// Tracks the best validation score and signals the stop on the first drop.
pub(crate) struct EarlyStopping<M> {
    best: Option<(f64, usize, M)>,
    pub history: Vec<f64>,
}

impl<M> EarlyStopping<M> {
    pub fn new() -> Self {
        EarlyStopping {
            best: None,
            history: Vec::new(),
        }
    }

    /// Records `score` for `model`; returns false when training should stop.
    pub fn observe(&mut self, iteration: usize, score: f64, model: M) -> bool {
        self.history.push(score);
        log::debug!("iteration {iteration}: validation ndcg@100 = {score:.5}");
        match &self.best {
            Some((best, _, _)) if score < *best => false,
            _ => {
                self.best = Some((score, iteration, model));
                true
            }
        }
    }

    pub fn finish(self, fallback: M, last_iteration: usize) -> TrainOutcome<M> {
        match self.best {
            Some((_, best_iteration, model)) => TrainOutcome {
                model,
                history: self.history,
                best_iteration,
            },
            None => TrainOutcome {
                model: fallback,
                history: self.history,
                best_iteration: last_iteration,
            },
        }
    }
}

/// Either trained model, as stored on disk and served by the CLI.
#[derive(Debug, Clone)]
pub enum TrainedModel {
    Mf(MfModel),
    Plrec(PlrecModel),
}

impl TrainedModel {
    pub fn kind(&self) -> ModelKind {
        match self {
            TrainedModel::Mf(_) => ModelKind::Mf,
            TrainedModel::Plrec(_) => ModelKind::Plrec,
        }
    }

    pub fn item_embeddings(&self) -> &EmbeddingMatrix {
        match self {
            TrainedModel::Mf(m) => &m.q,
            TrainedModel::Plrec(m) => &m.q,
        }
    }
}

impl eval::Scorer for TrainedModel {
    fn n_items(&self) -> usize {
        self.item_embeddings().n_entities()
    }

    fn score_users(&self, fold_in: &InteractionMatrix) -> Result<DenseMatrix> {
        match self {
            TrainedModel::Mf(m) => m.score_users(fold_in),
            TrainedModel::Plrec(m) => m.score_users(fold_in),
        }
    }
}

/// Models that can embed users unseen during training.
pub trait FoldIn {
    fn fold_in(&self, x_new: &InteractionMatrix) -> Result<EmbeddingMatrix>;
}

impl FoldIn for MfModel {
    fn fold_in(&self, x_new: &InteractionMatrix) -> Result<EmbeddingMatrix> {
        MfModel::fold_in(self, x_new)
    }
}

impl FoldIn for PlrecModel {
    fn fold_in(&self, x_new: &InteractionMatrix) -> Result<EmbeddingMatrix> {
        PlrecModel::fold_in(self, x_new)
    }
}

impl FoldIn for TrainedModel {
    fn fold_in(&self, x_new: &InteractionMatrix) -> Result<EmbeddingMatrix> {
        match self {
            TrainedModel::Mf(m) => m.fold_in(x_new),
            TrainedModel::Plrec(m) => m.fold_in(x_new),
        }
    }
}

/// User embeddings for rows over the training item set.
pub fn fold_in_users(x_new: &InteractionMatrix, model: &impl FoldIn) -> Result<EmbeddingMatrix> {
    model.fold_in(x_new)
}

/// Trains the requested model family.
pub fn train(
    kind: ModelKind,
    x: &InteractionMatrix,
    valid: Option<Validation<'_>>,
    config: &TrainConfig,
) -> Result<TrainOutcome<TrainedModel>> {
    Ok(match kind {
        ModelKind::Mf => {
            let o = train_mf(x, valid, config)?;
            TrainOutcome {
                model: TrainedModel::Mf(o.model),
                history: o.history,
                best_iteration: o.best_iteration,
            }
        }
        ModelKind::Plrec => {
            let o = train_plrec(x, valid, config)?;
            TrainOutcome {
                model: TrainedModel::Plrec(o.model),
                history: o.history,
                best_iteration: o.best_iteration,
            }
        }
    })
}

/// Factored (M + shift·I) for repeated small ridge solves. Falls back to a
/// least-norm solve when the system is singular.
pub(crate) enum RidgeSystem {
    Cholesky(Cholesky),
    PseudoInverse(DenseMatrix),
}

impl RidgeSystem {
    pub fn new(m: &DenseMatrix, shift: f64) -> Result<Self> {
        let mut sys = m.clone();
        sys.add_to_diag(shift);
        sys.symmetrize();
        match Cholesky::factor(&sys) {
            Ok(c) => Ok(RidgeSystem::Cholesky(c)),
            Err(Error::NotPositiveDefinite { .. }) => {
                log::warn!("ridge system is singular (shift {shift}); using a pseudo-inverse");
                Ok(RidgeSystem::PseudoInverse(pseudo_inverse(&sys)?))
            }
            Err(e) => Err(e),
        }
    }

    pub fn solve_in_place(&self, b: &mut [f64]) {
        match self {
            RidgeSystem::Cholesky(c) => c.solve_in_place(b),
            RidgeSystem::PseudoInverse(p) => {
                let x: Vec<f64> = (0..p.rows()).map(|r| dense::dot(p.row(r), b)).collect();
                b.copy_from_slice(&x);
            }
        }
    }
}

fn pseudo_inverse(m: &DenseMatrix) -> Result<DenseMatrix> {
    let eig = dense::symmetric_eigen(m)?;
    let n = m.rows();
    let top = eig.values.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let tol = top * 1e-12 * n.max(1) as f64;
    let mut out = DenseMatrix::zeros(n, n);
    for (j, &lambda) in eig.values.iter().enumerate() {
        if lambda.abs() <= tol {
            continue;
        }
        let v = eig.vector(j);
        for r in 0..n {
            for c in 0..n {
                out[(r, c)] += v[r] * v[c] / lambda;
            }
        }
    }
    Ok(out)
}
