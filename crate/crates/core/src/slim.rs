//! Explicit item-item closed forms: EASE, SLIM-LLE, the LLE embedding step,
//! and the dense ImplicitSLIM solution.
//!
//! All of these build I×I matrices and are capped by the dense limit. They
//! are the reference the fast path in [`crate::implicit`] is checked
//! against, and the route for the SLIM-LLE initialization setups.

use serde::{Deserialize, Serialize};

use crate::dense::{self, check_dense_limit, dot, DenseMatrix};
use crate::embedding::{EmbeddingMatrix, EntityKind};
use crate::error::{Error, Result};
use crate::sparse::InteractionMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightKind {
    Ease,
    SlimLle,
    Laplacian,
    InverseGram,
}

/// Dense I×I item-item matrix tagged with how it was produced.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightMatrix {
    pub values: DenseMatrix,
    pub kind: WeightKind,
}

/// Which diagonal to use for D inside B̂ − I = −P̂·D⁻¹.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DiagMode {
    /// diag((XᵀX + λI)⁻¹)
    Exact,
    /// 1 ⊘ diag(XᵀX + λI)
    Approx,
}

pub(crate) fn check_lambda(lambda: f64) -> Result<()> {
    if !(lambda > 0.0) || !lambda.is_finite() {
        return Err(Error::param(
            "lambda",
            format!("must be positive and finite, got {lambda}"),
        ));
    }
    Ok(())
}

/// XᵀX + λI as a dense matrix.
pub fn ridge_gram(x: &InteractionMatrix, lambda: f64) -> Result<DenseMatrix> {
    check_lambda(lambda)?;
    check_dense_limit(x.n_items(), "ridge_gram")?;
    let mut g = x.gram();
    g.add_to_diag(lambda);
    Ok(g)
}

/// P̂ = (XᵀX + λI)⁻¹.
pub fn inverse_gram(x: &InteractionMatrix, lambda: f64) -> Result<WeightMatrix> {
    let g = ridge_gram(x, lambda)?;
    let mut p = dense::spd_solve(&g, &DenseMatrix::identity(g.rows()))?;
    p.symmetrize();
    Ok(WeightMatrix {
        values: p,
        kind: WeightKind::InverseGram,
    })
}

/// B̂ = I − P̂·diagMat(1 ⊘ d) for a given diagonal `d`.
fn ease_from_inverse(p: &DenseMatrix, d: &[f64]) -> DenseMatrix {
    let mut b = p.clone();
    let inv: Vec<f64> = d.iter().map(|v| 1.0 / v).collect();
    b.scale_cols(&inv);
    b.scale_in_place(-1.0);
    b.add_to_diag(1.0);
    b
}

/// EASE weights B̂ = I − P̂·diagMat(1 ⊘ diag P̂); zero diagonal.
pub fn ease_weights(x: &InteractionMatrix, lambda: f64) -> Result<WeightMatrix> {
    let p = inverse_gram(x, lambda)?.values;
    let mut b = ease_from_inverse(&p, &p.diag());
    for i in 0..b.rows() {
        b[(i, i)] = 0.0;
    }
    Ok(WeightMatrix {
        values: b,
        kind: WeightKind::Ease,
    })
}

/// Ridge objective ‖X − XB‖²_F + λ‖B‖²_F, evaluated through the Gram matrix.
pub fn ease_objective(x: &InteractionMatrix, b: &DenseMatrix, lambda: f64) -> Result<f64> {
    let g = x.gram();
    // ‖X − XB‖² = tr(G) − 2 tr(G B) + tr(Bᵀ G B)
    let gb = g.matmul(b)?;
    let mut quad = 0.0;
    for r in 0..b.rows() {
        for c in 0..b.cols() {
            quad += b[(r, c)] * gb[(r, c)];
        }
    }
    Ok(g.trace() - 2.0 * gb.trace() + quad + lambda * b.frobenius_sq())
}

/// SLIM-LLE weights: EASE with the extra constraint that every column sums
/// to one.
pub fn slim_lle_weights(x: &InteractionMatrix, lambda: f64) -> Result<WeightMatrix> {
    let p = inverse_gram(x, lambda)?.values;
    let n = p.rows();
    let p1 = p.row_sums();
    let total: f64 = p1.iter().sum();
    let scale = p.max_abs();
    if !(total.abs() > 1e-14 * scale * n as f64) {
        return Err(Error::Degenerate(format!(
            "1ᵀP̂1 = {total:e} is too close to zero for the rank-one correction"
        )));
    }
    let mut c = p;
    for r in 0..n {
        for col in 0..n {
            c[(r, col)] -= p1[r] * p1[col] / total;
        }
    }
    let d = c.diag();
    if let Some((i, v)) = d
        .iter()
        .enumerate()
        .find(|(_, v)| !(v.abs() > 1e-12 * scale))
    {
        return Err(Error::Degenerate(format!(
            "diagonal entry {i} of the corrected inverse is {v:e}"
        )));
    }
    let mut b = ease_from_inverse(&c, &d);
    for i in 0..n {
        b[(i, i)] = 0.0;
    }
    Ok(WeightMatrix {
        values: b,
        kind: WeightKind::SlimLle,
    })
}

/// LLE embedding step for a fixed item-item matrix B.
///
/// Takes the L+1 bottom eigenvectors of (I − B)(I − B)ᵀ, drops the one most
/// aligned with the constant vector, and scales the rest so that
/// (1/n_scale)·V·Vᵀ = I.
pub fn lle_second_step(
    b: &WeightMatrix,
    latent_dim: usize,
    n_scale: usize,
) -> Result<EmbeddingMatrix> {
    let n = b.values.rows();
    if !b.values.is_square() {
        return Err(Error::Shape(format!(
            "weight matrix is {:?}",
            b.values.shape()
        )));
    }
    if latent_dim == 0 || latent_dim + 1 > n {
        return Err(Error::param(
            "latent_dim",
            format!("need 1 <= L and L + 1 <= {n}, got L = {latent_dim}"),
        ));
    }
    let m = residual_gram(&b.values)?;
    let pairs = dense::smallest_eigenpairs(&m, latent_dim + 1)?;

    let inv_sqrt_n = 1.0 / (n as f64).sqrt();
    let drop = (0..=latent_dim)
        .map(|j| {
            let v = pairs.vector(j);
            (j, (v.iter().sum::<f64>() * inv_sqrt_n).abs())
        })
        .fold(
            (0, -1.0),
            |best, cur| if cur.1 > best.1 { cur } else { best },
        )
        .0;

    let s = (n_scale as f64).sqrt();
    let mut v = DenseMatrix::zeros(latent_dim, n);
    for (row, j) in (0..=latent_dim).filter(|&j| j != drop).enumerate() {
        for (dst, x) in v.row_mut(row).iter_mut().zip(pairs.vector(j)) {
            *dst = s * x;
        }
    }
    EmbeddingMatrix::new(v, EntityKind::Item)
}

/// (I − B)(I − B)ᵀ.
fn residual_gram(b: &DenseMatrix) -> Result<DenseMatrix> {
    let mut r = b.scale(-1.0);
    r.add_to_diag(1.0);
    let mut m = r.matmul_t(&r)?;
    m.symmetrize();
    Ok(m)
}

/// SLIM-LLE embeddings: SLIM-LLE weights followed by the LLE step with
/// n_scale = I. Pass Xᵀ to embed users instead.
pub fn slim_lle_embed(
    x: &InteractionMatrix,
    lambda: f64,
    latent_dim: usize,
) -> Result<EmbeddingMatrix> {
    let b = slim_lle_weights(x, lambda)?;
    lle_second_step(&b, latent_dim, x.n_items())
}

/// Dense ImplicitSLIM solution and whether the system needed a
/// pseudo-inverse.
#[derive(Debug, Clone)]
pub struct ExplicitSolution {
    pub embeddings: EmbeddingMatrix,
    pub pseudo_solved: bool,
}

/// V̂ = αQAᵀA((B̂ − I)(B̂ − I)ᵀ + αAᵀA)⁻¹ with B̂ the EASE matrix, built
/// densely. `diag_mode` picks the diagonal used inside B̂.
pub fn explicit_implicit_slim(
    x: &InteractionMatrix,
    q: &EmbeddingMatrix,
    a: &EmbeddingMatrix,
    lambda: f64,
    alpha: f64,
    diag_mode: DiagMode,
) -> Result<ExplicitSolution> {
    check_lambda(lambda)?;
    if !(alpha >= 0.0) || !alpha.is_finite() {
        return Err(Error::param(
            "alpha",
            format!("must be non-negative, got {alpha}"),
        ));
    }
    let n = x.n_items();
    let l = q.latent_dim();
    q.check_shape(l, n, "Q")?;
    a.check_shape(a.latent_dim(), n, "A")?;

    let p = inverse_gram(x, lambda)?.values;
    let d = match diag_mode {
        DiagMode::Exact => p.diag(),
        DiagMode::Approx => ridge_gram(x, lambda)?
            .diag()
            .iter()
            .map(|g| 1.0 / g)
            .collect(),
    };
    let b = ease_from_inverse(&p, &d);
    let mut system = residual_gram(&b)?;

    let am = a.matrix();
    let mut ata = am.t_matmul(am)?;
    ata.scale_in_place(alpha);
    ata.symmetrize();
    system = system.add(&ata)?;
    system.symmetrize();

    if alpha == 0.0 {
        log::warn!("explicit ImplicitSLIM called with alpha = 0; the solution is identically zero");
        return Ok(ExplicitSolution {
            embeddings: EmbeddingMatrix::zeros(l, n, q.kind()),
            pseudo_solved: true,
        });
    }

    // V̂ᵀ = S⁻¹ · (αAᵀA) · Qᵀ, S symmetric.
    let rhs = ata.matmul(&q.matrix().transpose())?;
    let (vt, pseudo_solved) = match dense::spd_solve(&system, &rhs) {
        Ok(vt) => (vt, false),
        Err(Error::NotPositiveDefinite { .. }) => {
            log::warn!("ImplicitSLIM system is singular; falling back to a least-norm solve");
            (pseudo_solve(&system, &rhs)?, true)
        }
        Err(e) => return Err(e),
    };
    Ok(ExplicitSolution {
        embeddings: EmbeddingMatrix::new(vt.transpose(), q.kind())?,
        pseudo_solved,
    })
}

/// Least-norm solution of a symmetric PSD system via its eigendecomposition.
fn pseudo_solve(m: &DenseMatrix, rhs: &DenseMatrix) -> Result<DenseMatrix> {
    let eig = dense::symmetric_eigen(m)?;
    let top = eig.values.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
    let tol = top * 1e-12 * m.rows() as f64;
    let n = m.rows();
    let mut out = DenseMatrix::zeros(n, rhs.cols());
    for (j, &lambda) in eig.values.iter().enumerate() {
        if lambda.abs() <= tol {
            continue;
        }
        let v = eig.vector(j);
        for c in 0..rhs.cols() {
            let coef = (0..n).map(|r| v[r] * rhs[(r, c)]).sum::<f64>() / lambda;
            for r in 0..n {
                out[(r, c)] += coef * v[r];
            }
        }
    }
    Ok(out)
}

/// Laplacian L̂ = (I − B)(I − B)ᵀ of a SLIM-LLE matrix and its adjacency
/// Â = diagMat(diag L̂) − L̂.
pub fn laplacian_from_b(b: &WeightMatrix) -> Result<(WeightMatrix, DenseMatrix)> {
    let n = b.values.rows();
    let sums = b.values.col_sums();
    if let Some((i, s)) = sums
        .iter()
        .enumerate()
        .find(|(_, s)| (*s - 1.0).abs() > 1e-8)
    {
        return Err(Error::Contract(format!(
            "column {i} of B sums to {s}, a graph Laplacian needs column sums of one"
        )));
    }
    if let Some(i) = (0..n).find(|&i| b.values[(i, i)].abs() > 1e-10) {
        return Err(Error::Contract(format!(
            "B has a nonzero diagonal entry at {i}"
        )));
    }
    let l = residual_gram(&b.values)?;
    let mut adj = l.scale(-1.0);
    for i in 0..n {
        adj[(i, i)] = 0.0;
    }
    Ok((
        WeightMatrix {
            values: l,
            kind: WeightKind::Laplacian,
        },
        adj,
    ))
}

/// ‖V − VB‖²_F + α‖(V − Q)Aᵀ‖²_F.
pub fn implicit_slim_objective(
    v: &DenseMatrix,
    b: &DenseMatrix,
    q: &DenseMatrix,
    a: &DenseMatrix,
    alpha: f64,
) -> Result<f64> {
    let recon = v.sub(&v.matmul(b)?)?.frobenius_sq();
    let attach = v.sub(q)?.matmul_t(a)?.frobenius_sq();
    Ok(recon + alpha * attach)
}

/// ‖Q − QB‖²_F, the SLIM regularizer.
pub fn slim_regularizer(q: &DenseMatrix, b: &DenseMatrix) -> Result<f64> {
    Ok(q.sub(&q.matmul(b)?)?.frobenius_sq())
}

/// Σ_i Σ_j Â_ij ‖Q_i − Q_j‖² / 2 for a symmetric adjacency.
pub fn graph_regularizer(q: &DenseMatrix, adjacency: &DenseMatrix) -> f64 {
    let cols: Vec<Vec<f64>> = (0..q.cols()).map(|j| q.col(j)).collect();
    let mut total = 0.0;
    for i in 0..cols.len() {
        for j in 0..cols.len() {
            let w = adjacency[(i, j)];
            if w != 0.0 {
                let diff: Vec<f64> = cols[i].iter().zip(&cols[j]).map(|(a, b)| a - b).collect();
                total += w * dot(&diff, &diff);
            }
        }
    }
    0.5 * total
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ones22() -> InteractionMatrix {
        InteractionMatrix::from_pairs(2, 2, vec![(0, 0), (0, 1), (1, 0), (1, 1)]).unwrap()
    }

    #[test]
    fn gram_hand_values() {
        let g = ridge_gram(&InteractionMatrix::identity(2), 1.0).unwrap();
        assert_eq!(g, DenseMatrix::from_diag(&[2.0, 2.0]));
        let g = ridge_gram(&ones22(), 2.0).unwrap();
        assert_eq!(
            g,
            DenseMatrix::from_rows(&[vec![4.0, 2.0], vec![2.0, 4.0]]).unwrap()
        );
    }

    #[test]
    fn gram_rejects_non_positive_lambda() {
        assert!(matches!(
            ridge_gram(&ones22(), 0.0),
            Err(Error::Parameter { name: "lambda", .. })
        ));
        assert!(ridge_gram(&ones22(), -1.0).is_err());
    }

    #[test]
    fn ease_of_diagonal_gram_is_zero() {
        let b = ease_weights(&InteractionMatrix::identity(4), 3.0).unwrap();
        assert!(b.values.max_abs() < 1e-15);
    }

    #[test]
    fn ease_two_by_two_hand_value() {
        let b = ease_weights(&ones22(), 2.0).unwrap();
        let want = DenseMatrix::from_rows(&[vec![0.0, 0.5], vec![0.5, 0.0]]).unwrap();
        assert!(b.values.max_abs_diff(&want) < 1e-12);
    }

    #[test]
    fn slim_lle_two_items_is_forced() {
        let x = InteractionMatrix::from_pairs(3, 2, vec![(0, 0), (1, 0), (1, 1), (2, 1)]).unwrap();
        let b = slim_lle_weights(&x, 1.5).unwrap();
        let want = DenseMatrix::from_rows(&[vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap();
        assert!(b.values.max_abs_diff(&want) < 1e-12);
    }

    #[test]
    fn slim_lle_single_item_is_degenerate() {
        let x = InteractionMatrix::identity(1);
        assert!(matches!(
            slim_lle_weights(&x, 1.0),
            Err(Error::Degenerate(_))
        ));
    }

    #[test]
    fn laplacian_of_swap_matrix() {
        let b = WeightMatrix {
            values: DenseMatrix::from_rows(&[vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap(),
            kind: WeightKind::SlimLle,
        };
        let (l, adj) = laplacian_from_b(&b).unwrap();
        let want = DenseMatrix::from_rows(&[vec![2.0, -2.0], vec![-2.0, 2.0]]).unwrap();
        assert!(l.values.max_abs_diff(&want) < 1e-15);
        assert_eq!(adj[(0, 1)], 2.0);
        assert_eq!(adj[(0, 0)], 0.0);
    }

    #[test]
    fn laplacian_rejects_ease_matrix() {
        let b = ease_weights(&ones22(), 2.0).unwrap();
        assert!(matches!(laplacian_from_b(&b), Err(Error::Contract(_))));
    }

    #[test]
    fn lle_step_of_zero_matrix_is_normalized() {
        let b = WeightMatrix {
            values: DenseMatrix::zeros(6, 6),
            kind: WeightKind::SlimLle,
        };
        let v = lle_second_step(&b, 2, 6).unwrap();
        let g = v.matrix().matmul_t(v.matrix()).unwrap().scale(1.0 / 6.0);
        assert!(g.max_abs_diff(&DenseMatrix::identity(2)) < 1e-10);
    }

    #[test]
    fn lle_step_rejects_too_many_dims() {
        let b = WeightMatrix {
            values: DenseMatrix::zeros(3, 3),
            kind: WeightKind::SlimLle,
        };
        assert!(lle_second_step(&b, 3, 3).is_err());
    }
}
