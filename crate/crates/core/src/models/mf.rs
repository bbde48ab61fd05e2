//! Matrix factorization X ≈ PᵀQ + 1bᵀ trained by alternating closed-form
//! ridge steps.

use rayon::prelude::*;

use super::{EarlyStopping, RidgeSystem, Setup, TrainConfig, TrainOutcome, Validation};
use crate::dense::DenseMatrix;
use crate::embedding::{EmbeddingMatrix, EntityKind};
use crate::error::{Error, Result};
use crate::eval::Scorer;
use crate::implicit::{self, GramOperator, InitialEmbeddings, WoodburyForm};
use crate::slim;
use crate::sparse::InteractionMatrix;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MfHyper {
    pub r_p: f64,
    pub r_q: f64,
    pub s_q: f64,
}

#[derive(Debug, Clone)]
pub struct MfModel {
    /// Training-user embeddings. Absent for the setups that only produce
    /// item embeddings.
    pub p: Option<EmbeddingMatrix>,
    pub q: EmbeddingMatrix,
    pub bias: Option<Vec<f64>>,
    pub hyper: MfHyper,
}

impl MfModel {
    pub fn new(
        p: Option<EmbeddingMatrix>,
        q: EmbeddingMatrix,
        bias: Option<Vec<f64>>,
        hyper: MfHyper,
    ) -> Result<Self> {
        if let Some(p) = &p {
            if p.latent_dim() != q.latent_dim() {
                return Err(Error::Shape(format!(
                    "P has latent dimension {} but Q has {}",
                    p.latent_dim(),
                    q.latent_dim()
                )));
            }
        }
        check_bias(bias.as_deref(), q.n_entities())?;
        Ok(MfModel { p, q, bias, hyper })
    }

    /// Closed-form user embeddings for new users against the trained items.
    pub fn fold_in(&self, x_new: &InteractionMatrix) -> Result<EmbeddingMatrix> {
        mf_user_update(x_new, &self.q, self.bias.as_deref(), self.hyper.r_p)
    }
}

impl Scorer for MfModel {
    fn n_items(&self) -> usize {
        self.q.n_entities()
    }

    fn score_users(&self, fold_in: &InteractionMatrix) -> Result<DenseMatrix> {
        let p = self.fold_in(fold_in)?;
        let mut scores = p.entity_major().matmul(self.q.matrix())?;
        if let Some(b) = &self.bias {
            add_row_vector(&mut scores, b);
        }
        Ok(scores)
    }
}

pub(crate) fn add_row_vector(m: &mut DenseMatrix, b: &[f64]) {
    for r in 0..m.rows() {
        for (v, bi) in m.row_mut(r).iter_mut().zip(b) {
            *v += bi;
        }
    }
}

pub(crate) fn check_bias(bias: Option<&[f64]>, n_items: usize) -> Result<()> {
    match bias {
        Some(b) if b.len() != n_items => Err(Error::Shape(format!(
            "bias has length {} for {} items",
            b.len(),
            n_items
        ))),
        _ => Ok(()),
    }
}

/// b_i = (number of interactions of item i) / U.
pub fn compute_bias(x: &InteractionMatrix) -> Vec<f64> {
    let u = x.n_users();
    if u == 0 {
        return vec![0.0; x.n_items()];
    }
    x.col_counts()
        .into_iter()
        .map(|c| c as f64 / u as f64)
        .collect()
}

/// Σ_i b_i·Q_{*i}
fn weighted_sum(entity_major: &DenseMatrix, b: Option<&[f64]>) -> Vec<f64> {
    let mut out = vec![0.0; entity_major.cols()];
    if let Some(b) = b {
        for (i, &bi) in b.iter().enumerate() {
            if bi != 0.0 {
                for (o, v) in out.iter_mut().zip(entity_major.row(i)) {
                    *o += bi * v;
                }
            }
        }
    }
    out
}

/// Per-user ridge step P_{*u} = (QQᵀ + r_p·I)⁻¹·Q·(x_u − b).
pub fn mf_user_update(
    x: &InteractionMatrix,
    q: &EmbeddingMatrix,
    bias: Option<&[f64]>,
    r_p: f64,
) -> Result<EmbeddingMatrix> {
    if x.n_items() != q.n_entities() {
        return Err(Error::Shape(format!(
            "interaction matrix has {} items but Q has {}",
            x.n_items(),
            q.n_entities()
        )));
    }
    check_bias(bias, q.n_entities())?;
    let l = q.latent_dim();
    let qe = q.entity_major();
    let system = RidgeSystem::new(&qe.t_matmul(&qe)?, r_p)?;
    let qb = weighted_sum(&qe, bias);

    let mut pe = DenseMatrix::zeros(x.n_users(), l);
    pe.values_mut()
        .par_chunks_mut(l)
        .enumerate()
        .for_each(|(u, out)| {
            for (o, v) in out.iter_mut().zip(&qb) {
                *o = -v;
            }
            for &i in x.row(u) {
                for (o, v) in out.iter_mut().zip(qe.row(i as usize)) {
                    *o += v;
                }
            }
            system.solve_in_place(out);
        });
    EmbeddingMatrix::from_entity_major(pe, EntityKind::User)
}

/// Per-item ridge step with optional attachment to `v`:
/// Q_{*i} = (PPᵀ + (r_q + s_q)·I)⁻¹·(P·(x_{*i} − b_i·1) + s_q·V_{*i}).
pub fn mf_item_update(
    x: &InteractionMatrix,
    p: &EmbeddingMatrix,
    v: Option<&EmbeddingMatrix>,
    bias: Option<&[f64]>,
    r_q: f64,
    s_q: f64,
) -> Result<EmbeddingMatrix> {
    if x.n_users() != p.n_entities() {
        return Err(Error::Shape(format!(
            "interaction matrix has {} users but P has {}",
            x.n_users(),
            p.n_entities()
        )));
    }
    check_bias(bias, x.n_items())?;
    let l = p.latent_dim();
    let ve = match v {
        Some(v) => {
            v.check_shape(l, x.n_items(), "V")?;
            Some(v.entity_major())
        }
        None if s_q > 0.0 => {
            return Err(Error::param(
                "s_q",
                "attachment weight given without embeddings to attach to",
            ))
        }
        None => None,
    };
    let pe = p.entity_major();
    let system = RidgeSystem::new(&pe.t_matmul(&pe)?, r_q + s_q)?;
    let p1 = pe.col_sums();
    let xt = x.transpose();

    let mut qe = DenseMatrix::zeros(x.n_items(), l);
    qe.values_mut()
        .par_chunks_mut(l)
        .enumerate()
        .for_each(|(i, out)| {
            let bi = bias.map_or(0.0, |b| b[i]);
            for (o, v) in out.iter_mut().zip(&p1) {
                *o = -bi * v;
            }
            for &u in xt.row(i) {
                for (o, v) in out.iter_mut().zip(pe.row(u as usize)) {
                    *o += v;
                }
            }
            if let (Some(ve), true) = (&ve, s_q > 0.0) {
                for (o, v) in out.iter_mut().zip(ve.row(i)) {
                    *o += s_q * v;
                }
            }
            system.solve_in_place(out);
        });
    EmbeddingMatrix::from_entity_major(qe, EntityKind::Item)
}

/// ‖X − PᵀQ − 1bᵀ‖²_F + r_p‖P‖²_F + r_q‖Q‖²_F + s_q‖V − Q‖²_F, evaluated
/// without forming the U×I residual.
pub fn mf_objective(
    x: &InteractionMatrix,
    p: &EmbeddingMatrix,
    q: &EmbeddingMatrix,
    bias: Option<&[f64]>,
    v: Option<&EmbeddingMatrix>,
    hyper: &MfHyper,
) -> Result<f64> {
    let l = q.latent_dim();
    p.check_shape(l, x.n_users(), "P")?;
    q.check_shape(l, x.n_items(), "Q")?;
    check_bias(bias, x.n_items())?;
    let pe = p.entity_major();
    let qe = q.entity_major();

    // ⟨X, PᵀQ + 1bᵀ⟩
    let mut cross = 0.0;
    for (u, i) in x.iter() {
        cross += crate::dense::dot(pe.row(u), qe.row(i)) + bias.map_or(0.0, |b| b[i]);
    }
    // ‖PᵀQ + 1bᵀ‖²
    let pp = pe.t_matmul(&pe)?;
    let qq = qe.t_matmul(&qe)?;
    let mut model_sq = pp.matmul(&qq)?.trace();
    if let Some(b) = bias {
        let qb = weighted_sum(&qe, Some(b));
        model_sq += 2.0 * crate::dense::dot(&pe.col_sums(), &qb);
        model_sq += x.n_users() as f64 * crate::dense::dot(b, b);
    }
    let mut obj = x.nnz() as f64 - 2.0 * cross + model_sq;
    obj += hyper.r_p * p.matrix().frobenius_sq() + hyper.r_q * q.matrix().frobenius_sq();
    if let Some(v) = v {
        if hyper.s_q != 0.0 {
            obj += hyper.s_q * v.matrix().sub(q.matrix())?.frobenius_sq();
        }
    }
    Ok(obj)
}

/// Trains MF under `config.setup`, early-stopping on validation NDCG@100
/// when `valid` is given.
pub fn train_mf(
    x: &InteractionMatrix,
    valid: Option<Validation<'_>>,
    config: &TrainConfig,
) -> Result<TrainOutcome<MfModel>> {
    config.validate()?;
    if x.is_empty() {
        return Err(Error::EmptyDataset { stage: "training" });
    }
    let hyper = MfHyper {
        r_p: config.r_p,
        r_q: config.r_q,
        s_q: config.s_q,
    };
    let bias = config.use_bias.then(|| compute_bias(x));
    let l = config.latent_dim;
    let n = x.n_items();
    if l > n {
        return Err(Error::param(
            "latent_dim",
            format!("L = {l} exceeds the number of items {n}"),
        ));
    }
    let item_model = |q: EmbeddingMatrix| MfModel {
        p: None,
        q,
        bias: bias.clone(),
        hyper,
    };

    match config.setup {
        Setup::Vanilla | Setup::IslimInitReg => {
            let reg = config.setup == Setup::IslimInitReg;
            let op = GramOperator::new(x);
            let popularity = crate::data::item_popularity(x);
            let mut q = EmbeddingMatrix::gaussian(l, n, EntityKind::Item, config.seed);
            let mut stopping = EarlyStopping::new();
            let mut last = None;
            for it in 1..=config.max_iters {
                let v = if reg {
                    let a = implicit::build_anchor_matrix(
                        &q,
                        &popularity,
                        config.islim.popularity_threshold,
                    )?;
                    let v = implicit::implicit_slim_with(
                        &op,
                        &q,
                        &a,
                        &config.islim,
                        WoodburyForm::Resolvent,
                    )?;
                    if it == 1 {
                        q = v.clone();
                    }
                    Some(v)
                } else {
                    None
                };
                let p = mf_user_update(x, &q, bias.as_deref(), hyper.r_p)?;
                let s_q = if reg { hyper.s_q } else { 0.0 };
                q = mf_item_update(x, &p, v.as_ref(), bias.as_deref(), hyper.r_q, s_q)?;
                if !q.matrix().is_finite() {
                    return Err(Error::Numeric(format!(
                        "non-finite item embeddings at iteration {it}"
                    )));
                }
                let model = MfModel {
                    p: Some(p),
                    q: q.clone(),
                    bias: bias.clone(),
                    hyper,
                };
                match valid {
                    Some(valid) => {
                        let score = valid.score(&model)?;
                        if !stopping.observe(it, score, model) {
                            break;
                        }
                    }
                    None => last = Some((it, model)),
                }
            }
            Ok(match last {
                Some((it, model)) => TrainOutcome {
                    model,
                    history: Vec::new(),
                    best_iteration: it,
                },
                None => stopping.finish(item_model(q), config.max_iters),
            })
        }
        Setup::IslimInit => {
            let init = InitialEmbeddings::Gaussian {
                latent_dim: l,
                seed: config.seed,
            };
            let outcome = match valid {
                Some(valid) => {
                    let mut evaluator = |q: &EmbeddingMatrix| valid.score(&item_model(q.clone()));
                    implicit::iterate_implicit_slim(x, init, &config.islim, Some(&mut evaluator))?
                }
                None => implicit::iterate_implicit_slim(x, init, &config.islim, None)?,
            };
            Ok(TrainOutcome {
                model: item_model(outcome.embeddings),
                history: outcome.scores,
                best_iteration: outcome.best_iteration,
            })
        }
        Setup::SlimlleInit => {
            let q = slim::slim_lle_embed(x, config.islim.lambda, l)?;
            let model = item_model(q);
            let history = match valid {
                Some(valid) => vec![valid.score(&model)?],
                None => Vec::new(),
            };
            Ok(TrainOutcome {
                model,
                history,
                best_iteration: 1,
            })
        }
    }
}
