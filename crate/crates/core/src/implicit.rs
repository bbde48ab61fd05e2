//! ImplicitSLIM fast path.
//!
//! Computes the embeddings the dense solution in [`crate::slim`] would give
//! with the approximate diagonal, but through products of L×N dense blocks
//! with the sparse feedback matrix only. No I×I matrix is ever allocated;
//! the largest intermediate is max(U, I)×L.

use serde::{Deserialize, Serialize};

use crate::data::item_popularity;
use crate::dense::{self, DenseMatrix};
use crate::embedding::{EmbeddingMatrix, EntityKind};
use crate::error::{Error, Result};
use crate::slim::check_lambda;
use crate::sparse::InteractionMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ImplicitSlimParams {
    /// Ridge strength of the implicit EASE step.
    pub lambda: f64,
    /// Attachment strength to the prior embeddings.
    pub alpha: f64,
    /// Items with fewer users get a zero column in the anchor matrix.
    pub popularity_threshold: usize,
    /// Number of chained applications in [`iterate_implicit_slim`].
    pub repeat: usize,
}

impl Default for ImplicitSlimParams {
    fn default() -> Self {
        ImplicitSlimParams {
            lambda: 100.0,
            alpha: 1.0,
            popularity_threshold: 0,
            repeat: 1,
        }
    }
}

impl ImplicitSlimParams {
    pub fn validate(&self) -> Result<()> {
        check_lambda(self.lambda)?;
        if !(self.alpha >= 0.0) || !self.alpha.is_finite() {
            return Err(Error::param(
                "alpha",
                format!("must be non-negative, got {}", self.alpha),
            ));
        }
        if self.repeat == 0 {
            return Err(Error::param("repeat", "must be at least 1"));
        }
        Ok(())
    }
}

/// Algebraic form used for the final L×L inverse.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum WoodburyForm {
    /// F − FAᵀ(α⁻¹I + FAᵀ)⁻¹F; undefined at α = 0.
    AlphaInverse,
    /// F − (I − (I + αFAᵀ)⁻¹)F.
    #[default]
    Resolvent,
}

/// Approximate diag((XᵀX + λI)⁻¹) as 1 / (column count + λ).
pub fn inverse_gram_diag_approx(x: &InteractionMatrix, lambda: f64) -> Result<Vec<f64>> {
    check_lambda(lambda)?;
    Ok(x.col_counts()
        .into_iter()
        .map(|c| 1.0 / (c as f64 + lambda))
        .collect())
}

/// X together with its transpose so that XᵀX can be applied to I×L blocks
/// as two sparse-dense products.
pub struct GramOperator<'a> {
    x: &'a InteractionMatrix,
    xt: InteractionMatrix,
}

impl<'a> GramOperator<'a> {
    pub fn new(x: &'a InteractionMatrix) -> Self {
        GramOperator {
            x,
            xt: x.transpose(),
        }
    }

    pub fn matrix(&self) -> &InteractionMatrix {
        self.x
    }

    /// (XᵀX + shift·I)·m for an I×k block `m`.
    pub fn apply_shifted(&self, m: &DenseMatrix, shift: f64) -> Result<DenseMatrix> {
        let users = self.x.mul_dense(m)?;
        let mut out = self.xt.mul_dense(&users)?;
        drop(users);
        if shift != 0.0 {
            for (o, &v) in out.values_mut().iter_mut().zip(m.values()) {
                *o += shift * v;
            }
        }
        Ok(out)
    }
}

/// One ImplicitSLIM step with anchor matrix `a`.
pub fn implicit_slim(
    x: &InteractionMatrix,
    q: &EmbeddingMatrix,
    a: &EmbeddingMatrix,
    params: &ImplicitSlimParams,
) -> Result<EmbeddingMatrix> {
    implicit_slim_with(&GramOperator::new(x), q, a, params, WoodburyForm::Resolvent)
}

pub fn implicit_slim_with(
    op: &GramOperator<'_>,
    q: &EmbeddingMatrix,
    a: &EmbeddingMatrix,
    params: &ImplicitSlimParams,
    form: WoodburyForm,
) -> Result<EmbeddingMatrix> {
    params.validate()?;
    let x = op.matrix();
    let n = x.n_items();
    let l = q.latent_dim();
    if l > n {
        return Err(Error::param(
            "latent_dim",
            format!("L = {l} exceeds the number of entities {n}"),
        ));
    }
    q.check_shape(l, n, "Q")?;
    a.check_shape(l, n, "A")?;
    if !q.matrix().is_finite() || !a.matrix().is_finite() {
        return Err(Error::Numeric(
            "non-finite embeddings given to ImplicitSLIM".into(),
        ));
    }
    let lambda = params.lambda;
    let alpha = params.alpha;

    // Entity-major (I×L) copies keep each embedding contiguous for the
    // sparse products.
    let at = a.entity_major();
    let d2: Vec<f64> = inverse_gram_diag_approx(x, lambda)?
        .into_iter()
        .map(|d| d * d)
        .collect();

    // Fᵀ = (XᵀX + λI)·D²·(XᵀX + λI)·Aᵀ
    let mut ft = op.apply_shifted(&at, lambda)?;
    ft.scale_rows(&d2);
    let ft = op.apply_shifted(&ft, lambda)?;

    let fat = ft.t_matmul(&at)?; // F·Aᵀ, L×L
    let qat = q.entity_major().t_matmul(&at)?; // Q·Aᵀ, L×L
    drop(at);

    let inner_t = match form {
        WoodburyForm::Resolvent => {
            // (I − (I + αFAᵀ)⁻¹)
            let mut sys = fat.scale(alpha);
            sys.add_to_diag(1.0);
            let mut m = dense::lu_solve(&sys, &DenseMatrix::identity(l))?.scale(-1.0);
            m.add_to_diag(1.0);
            // (F − M·F)ᵀ = Fᵀ − Fᵀ·Mᵀ
            let mft = ft.matmul_t(&m)?;
            ft.sub(&mft)?
        }
        WoodburyForm::AlphaInverse => {
            if alpha == 0.0 {
                return Err(Error::param("alpha", "the α⁻¹ form needs alpha > 0"));
            }
            let mut sys = fat.clone();
            sys.add_to_diag(1.0 / alpha);
            // FAᵀ·(α⁻¹I + FAᵀ)⁻¹·F, transposed: Fᵀ·Kᵀ·(FAᵀ)ᵀ
            let k = dense::lu_solve(&sys, &DenseMatrix::identity(l))?;
            let coef = fat.matmul(&k)?;
            let corr_t = ft.matmul_t(&coef)?;
            ft.sub(&corr_t)?
        }
    };
    drop(ft);

    // V̂ = αQAᵀ · inner
    let c = qat.scale(alpha);
    let v = c.matmul_t(&inner_t)?;
    EmbeddingMatrix::new(v, q.kind())
}

/// Copy of Q with the columns of unpopular entities zeroed.
pub fn build_anchor_matrix(
    q: &EmbeddingMatrix,
    popularity: &[usize],
    threshold: usize,
) -> Result<EmbeddingMatrix> {
    if popularity.len() != q.n_entities() {
        return Err(Error::Shape(format!(
            "popularity has {} entries for {} entities",
            popularity.len(),
            q.n_entities()
        )));
    }
    let mut a = q.clone();
    let m = a.matrix_mut();
    for r in 0..m.rows() {
        for (v, &p) in m.row_mut(r).iter_mut().zip(popularity) {
            if p < threshold {
                *v = 0.0;
            }
        }
    }
    Ok(a)
}

/// Starting point for [`iterate_implicit_slim`].
#[derive(Debug, Clone)]
pub enum InitialEmbeddings {
    Given(EmbeddingMatrix),
    /// Standard normal entries.
    Gaussian {
        latent_dim: usize,
        seed: u64,
    },
}

#[derive(Debug, Clone)]
pub struct IterationOutcome {
    pub embeddings: EmbeddingMatrix,
    /// 1-based index of the returned iterate.
    pub best_iteration: usize,
    /// Evaluator score per completed iterate (empty without an evaluator).
    pub scores: Vec<f64>,
}

/// Applies ImplicitSLIM `params.repeat` times, rebuilding the anchor matrix
/// from the current embeddings each time. With an evaluator, stops at the
/// first score drop and returns the best iterate.
pub fn iterate_implicit_slim(
    x: &InteractionMatrix,
    init: InitialEmbeddings,
    params: &ImplicitSlimParams,
    mut evaluator: Option<&mut dyn FnMut(&EmbeddingMatrix) -> Result<f64>>,
) -> Result<IterationOutcome> {
    params.validate()?;
    let mut q = match init {
        InitialEmbeddings::Given(q) => q,
        InitialEmbeddings::Gaussian { latent_dim, seed } => {
            EmbeddingMatrix::gaussian(latent_dim, x.n_items(), EntityKind::Item, seed)
        }
    };
    let op = GramOperator::new(x);
    let popularity = item_popularity(x);

    let mut best: Option<(f64, usize, EmbeddingMatrix)> = None;
    let mut scores = Vec::new();
    for it in 1..=params.repeat {
        let a = build_anchor_matrix(&q, &popularity, params.popularity_threshold)?;
        q = implicit_slim_with(&op, &q, &a, params, WoodburyForm::Resolvent)?;
        let Some(eval) = evaluator.as_mut() else {
            continue;
        };
        let score = eval(&q)?;
        scores.push(score);
        log::debug!("implicit-slim iteration {it}: score {score:.5}");
        match &best {
            Some((best_score, _, _)) if score < *best_score => break,
            _ => best = Some((score, it, q.clone())),
        }
    }
    Ok(match best {
        Some((_, best_iteration, embeddings)) => IterationOutcome {
            embeddings,
            best_iteration,
            scores,
        },
        None => IterationOutcome {
            embeddings: q,
            best_iteration: params.repeat,
            scores,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> InteractionMatrix {
        InteractionMatrix::from_pairs(
            5,
            4,
            vec![
                (0, 0),
                (0, 1),
                (1, 1),
                (1, 2),
                (2, 0),
                (2, 3),
                (3, 2),
                (4, 1),
                (4, 3),
            ],
        )
        .unwrap()
    }

    #[test]
    fn diag_approx_of_identity() {
        let d = inverse_gram_diag_approx(&InteractionMatrix::identity(2), 1.0).unwrap();
        assert_eq!(d, vec![0.5, 0.5]);
    }

    #[test]
    fn diag_approx_of_empty_column() {
        let x = InteractionMatrix::from_pairs(2, 3, vec![(0, 0), (1, 2)]).unwrap();
        let d = inverse_gram_diag_approx(&x, 4.0).unwrap();
        assert_eq!(d[1], 0.25);
    }

    #[test]
    fn zero_prior_gives_zero_output() {
        let x = small();
        let q = EmbeddingMatrix::zeros(2, 4, EntityKind::Item);
        let a = EmbeddingMatrix::gaussian(2, 4, EntityKind::Item, 1);
        let v = implicit_slim(&x, &q, &a, &ImplicitSlimParams::default()).unwrap();
        assert_eq!(v.matrix().max_abs(), 0.0);
    }

    #[test]
    fn zero_alpha_gives_zero_output() {
        let x = small();
        let q = EmbeddingMatrix::gaussian(2, 4, EntityKind::Item, 2);
        let params = ImplicitSlimParams {
            alpha: 0.0,
            ..Default::default()
        };
        let v = implicit_slim(&x, &q, &q, &params).unwrap();
        assert_eq!(v.matrix().max_abs(), 0.0);
    }

    #[test]
    fn latent_dim_above_item_count_is_rejected() {
        let x = small();
        let q = EmbeddingMatrix::gaussian(5, 4, EntityKind::Item, 3);
        assert!(implicit_slim(&x, &q, &q, &ImplicitSlimParams::default()).is_err());
    }

    #[test]
    fn anchor_threshold_zero_and_above_max() {
        let q = EmbeddingMatrix::gaussian(3, 4, EntityKind::Item, 4);
        let pop = vec![3, 0, 7, 1];
        assert_eq!(build_anchor_matrix(&q, &pop, 0).unwrap(), q);
        let a = build_anchor_matrix(&q, &pop, 8).unwrap();
        assert_eq!(a.matrix().max_abs(), 0.0);
        let v = implicit_slim(&small(), &q, &a, &ImplicitSlimParams::default()).unwrap();
        assert_eq!(v.matrix().max_abs(), 0.0);
    }

    #[test]
    fn anchor_masks_exactly_unpopular_columns() {
        let q = EmbeddingMatrix::gaussian(3, 4, EntityKind::Item, 5);
        let pop = vec![3, 0, 7, 1];
        let a = build_anchor_matrix(&q, &pop, 2).unwrap();
        for r in 0..3 {
            for c in 0..4 {
                let want = if pop[c] < 2 { 0.0 } else { q.matrix()[(r, c)] };
                assert_eq!(a.matrix()[(r, c)], want);
            }
        }
    }

    #[test]
    fn decreasing_evaluator_returns_first_iterate() {
        let x = small();
        let params = ImplicitSlimParams {
            repeat: 4,
            ..Default::default()
        };
        let mut calls = 0;
        let mut eval = |_: &EmbeddingMatrix| -> Result<f64> {
            calls += 1;
            Ok(1.0 / calls as f64)
        };
        let out = iterate_implicit_slim(
            &x,
            InitialEmbeddings::Gaussian {
                latent_dim: 2,
                seed: 9,
            },
            &params,
            Some(&mut eval),
        )
        .unwrap();
        assert_eq!(out.best_iteration, 1);
        assert_eq!(out.scores.len(), 2);

        let once = ImplicitSlimParams {
            repeat: 1,
            ..params
        };
        let first = iterate_implicit_slim(
            &x,
            InitialEmbeddings::Gaussian {
                latent_dim: 2,
                seed: 9,
            },
            &once,
            None,
        )
        .unwrap();
        assert_eq!(out.embeddings, first.embeddings);
    }
}
