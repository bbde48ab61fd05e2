//! PLRec: users are projected through a fixed item projector W, item
//! embeddings Q are then a single ridge regression X ≈ X·N⁻¹Wᵀ·Q.

use rayon::prelude::*;

use super::mf::{add_row_vector, check_bias, compute_bias};
use super::{EarlyStopping, RidgeSystem, Setup, TrainConfig, TrainOutcome, Validation};
use crate::dense::{self, DenseMatrix};
use crate::embedding::{EmbeddingMatrix, EntityKind};
use crate::error::{Error, Result};
use crate::eval::Scorer;
use crate::implicit::{self, GramOperator, WoodburyForm};
use crate::slim;
use crate::sparse::InteractionMatrix;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlrecHyper {
    pub r_q: f64,
    pub s_q: f64,
}

#[derive(Debug, Clone)]
pub struct PlrecModel {
    w: EmbeddingMatrix,
    pub q: EmbeddingMatrix,
    /// Diagonal of N⁻¹, taken from the training matrix.
    item_scale: Vec<f64>,
    pub norm_exponent: f64,
    pub bias: Option<Vec<f64>>,
    pub hyper: PlrecHyper,
}

impl PlrecModel {
    pub fn new(
        w: EmbeddingMatrix,
        q: EmbeddingMatrix,
        item_scale: Vec<f64>,
        norm_exponent: f64,
        bias: Option<Vec<f64>>,
        hyper: PlrecHyper,
    ) -> Result<Self> {
        q.check_shape(w.latent_dim(), w.n_entities(), "Q")?;
        if item_scale.len() != w.n_entities() {
            return Err(Error::Shape(format!(
                "item normalization has {} entries for {} items",
                item_scale.len(),
                w.n_entities()
            )));
        }
        check_bias(bias.as_deref(), w.n_entities())?;
        Ok(PlrecModel {
            w,
            q,
            item_scale,
            norm_exponent,
            bias,
            hyper,
        })
    }

    pub fn w(&self) -> &EmbeddingMatrix {
        &self.w
    }

    pub fn item_scale(&self) -> &[f64] {
        &self.item_scale
    }

    /// User projections H = X_new·N⁻¹Wᵀ, as an L×U embedding matrix.
    pub fn fold_in(&self, x_new: &InteractionMatrix) -> Result<EmbeddingMatrix> {
        let h = plrec_projection(x_new, &self.w, &self.item_scale)?;
        EmbeddingMatrix::from_entity_major(h, EntityKind::User)
    }
}

impl Scorer for PlrecModel {
    fn n_items(&self) -> usize {
        self.q.n_entities()
    }

    fn score_users(&self, fold_in: &InteractionMatrix) -> Result<DenseMatrix> {
        let h = plrec_projection(fold_in, &self.w, &self.item_scale)?;
        let mut scores = h.matmul(self.q.matrix())?;
        if let Some(b) = &self.bias {
            add_row_vector(&mut scores, b);
        }
        Ok(scores)
    }
}

/// Diagonal of N⁻¹ with N_ii = (nnz of column i)ⁿ; empty columns get 1.
pub fn item_normalization(x: &InteractionMatrix, norm_exponent: f64) -> Vec<f64> {
    x.col_counts()
        .into_iter()
        .map(|c| {
            if c == 0 {
                1.0
            } else {
                1.0 / (c as f64).powf(norm_exponent)
            }
        })
        .collect()
}

/// H = X·N⁻¹Wᵀ (U×L).
pub fn plrec_projection(
    x: &InteractionMatrix,
    w: &EmbeddingMatrix,
    item_scale: &[f64],
) -> Result<DenseMatrix> {
    if x.n_items() != w.n_entities() || item_scale.len() != w.n_entities() {
        return Err(Error::Shape(format!(
            "interaction matrix has {} items, projector {}, normalization {}",
            x.n_items(),
            w.n_entities(),
            item_scale.len()
        )));
    }
    let mut wt = w.entity_major();
    wt.scale_rows(item_scale);
    x.mul_dense(&wt)
}

/// Q = (HᵀH + (r_q + s_q)·I)⁻¹·(HᵀX + s_q·V) with H = X·N⁻¹Wᵀ.
pub fn plrec_q_update(
    x: &InteractionMatrix,
    w: &EmbeddingMatrix,
    v: Option<&EmbeddingMatrix>,
    norm_exponent: f64,
    r_q: f64,
    s_q: f64,
) -> Result<EmbeddingMatrix> {
    let h = plrec_projection(x, w, &item_normalization(x, norm_exponent))?;
    q_update_from_projection(x, &h, v, None, r_q, s_q)
}

/// Ridge step for Q given the user projections `h`, with residuals taken
/// against X − 1bᵀ when a bias is present.
pub(crate) fn q_update_from_projection(
    x: &InteractionMatrix,
    h: &DenseMatrix,
    v: Option<&EmbeddingMatrix>,
    bias: Option<&[f64]>,
    r_q: f64,
    s_q: f64,
) -> Result<EmbeddingMatrix> {
    let l = h.cols();
    if h.rows() != x.n_users() {
        return Err(Error::Shape(format!(
            "projection has {} rows for {} users",
            h.rows(),
            x.n_users()
        )));
    }
    check_bias(bias, x.n_items())?;
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
    let system = RidgeSystem::new(&h.t_matmul(h)?, r_q + s_q)?;
    let h1 = h.col_sums();
    // Row i of XᵀH is (HᵀX)_{*i}.
    let mut qe = x.transpose().mul_dense(h)?;
    qe.values_mut()
        .par_chunks_mut(l)
        .enumerate()
        .for_each(|(i, out)| {
            if let Some(b) = bias {
                for (o, v) in out.iter_mut().zip(&h1) {
                    *o -= b[i] * v;
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

/// ‖X − X·N⁻¹WᵀQ‖²_F + r_q‖Q‖²_F + s_q‖V − Q‖²_F. Forms the dense U×I
/// residual, so it is meant for diagnostics on small data.
pub fn plrec_objective(
    x: &InteractionMatrix,
    w: &EmbeddingMatrix,
    q: &EmbeddingMatrix,
    v: Option<&EmbeddingMatrix>,
    norm_exponent: f64,
    hyper: &PlrecHyper,
) -> Result<f64> {
    let h = plrec_projection(x, w, &item_normalization(x, norm_exponent))?;
    let mut r = h.matmul(q.matrix())?;
    r.scale_in_place(-1.0);
    for (u, i) in x.iter() {
        r[(u, i)] += 1.0;
    }
    let mut obj = r.frobenius_sq() + hyper.r_q * q.matrix().frobenius_sq();
    if let Some(v) = v {
        if hyper.s_q != 0.0 {
            obj += hyper.s_q * v.matrix().sub(q.matrix())?.frobenius_sq();
        }
    }
    Ok(obj)
}

/// Trains PLRec under `config.setup`. The ImplicitSLIM setups refresh the
/// projector every iteration and stop on the first drop of validation
/// NDCG@100.
pub fn train_plrec(
    x: &InteractionMatrix,
    valid: Option<Validation<'_>>,
    config: &TrainConfig,
) -> Result<TrainOutcome<PlrecModel>> {
    config.validate()?;
    if x.is_empty() {
        return Err(Error::EmptyDataset { stage: "training" });
    }
    let l = config.latent_dim;
    let n = x.n_items();
    if l > n {
        return Err(Error::param(
            "latent_dim",
            format!("L = {l} exceeds the number of items {n}"),
        ));
    }
    let hyper = PlrecHyper {
        r_q: config.r_q,
        s_q: config.s_q,
    };
    let bias = config.use_bias.then(|| compute_bias(x));
    let scale = item_normalization(x, config.norm_exponent);
    let fit = |w: EmbeddingMatrix, v: Option<&EmbeddingMatrix>, s_q: f64| -> Result<PlrecModel> {
        let h = plrec_projection(x, &w, &scale)?;
        let q = q_update_from_projection(x, &h, v, bias.as_deref(), hyper.r_q, s_q)?;
        Ok(PlrecModel {
            w,
            q,
            item_scale: scale.clone(),
            norm_exponent: config.norm_exponent,
            bias: bias.clone(),
            hyper,
        })
    };
    let single = |model: PlrecModel| -> Result<TrainOutcome<PlrecModel>> {
        let history = match valid {
            Some(valid) => vec![valid.score(&model)?],
            None => Vec::new(),
        };
        Ok(TrainOutcome {
            model,
            history,
            best_iteration: 1,
        })
    };

    match config.setup {
        Setup::Vanilla => {
            let w = dense::top_right_singular_vectors(x, l)?;
            single(fit(EmbeddingMatrix::new(w, EntityKind::Item)?, None, 0.0)?)
        }
        Setup::SlimlleInit => {
            let w = slim::slim_lle_embed(x, config.islim.lambda, l)?;
            single(fit(w, None, 0.0)?)
        }
        Setup::IslimInitReg | Setup::IslimInit => {
            let reg = config.setup == Setup::IslimInitReg;
            let (iters, s_q) = if reg {
                (config.max_iters, hyper.s_q)
            } else {
                (config.islim.repeat, 0.0)
            };
            let op = GramOperator::new(x);
            let popularity = crate::data::item_popularity(x);
            let mut v = EmbeddingMatrix::gaussian(l, n, EntityKind::Item, config.seed);
            let mut stopping = EarlyStopping::new();
            let mut last = None;
            for it in 1..=iters {
                let a = implicit::build_anchor_matrix(
                    &v,
                    &popularity,
                    config.islim.popularity_threshold,
                )?;
                v = implicit::implicit_slim_with(
                    &op,
                    &v,
                    &a,
                    &config.islim,
                    WoodburyForm::Resolvent,
                )?;
                v = EmbeddingMatrix::new(dense::row_orthonormalize(v.matrix())?, EntityKind::Item)?;
                let model = fit(v.clone(), reg.then_some(&v), s_q)?;
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
            match last {
                Some((it, model)) => Ok(TrainOutcome {
                    model,
                    history: Vec::new(),
                    best_iteration: it,
                }),
                None => {
                    let fallback = fit(v.clone(), reg.then_some(&v), s_q)?;
                    Ok(stopping.finish(fallback, iters))
                }
            }
        }
    }
}
