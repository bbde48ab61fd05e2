//! Seeded synthetic implicit feedback with planted item clusters.
//!
//! Users and items live in a `latent_dim_true`-dimensional space; items are
//! scattered around `n_clusters` centers. The logit of an interaction is the
//! scaled inner product plus a power-law popularity term plus a global
//! offset, which is bisected so that the expected density hits the target.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::mix_seed;
use crate::dense::DenseMatrix;
use crate::error::{Error, Result};
use crate::sparse::InteractionMatrix;

/// Realized density must land within this relative distance of the target.
pub const DENSITY_TOLERANCE: f64 = 0.2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub n_users: usize,
    pub n_items: usize,
    pub latent_dim_true: usize,
    pub n_clusters: usize,
    pub density_target: f64,
    /// Power-law exponent of the item popularity multipliers.
    pub popularity_skew: f64,
    /// Standard deviation of items around their cluster center.
    pub cluster_spread: f64,
    /// Multiplier on the normalized user-item inner product.
    pub signal: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            n_users: 2000,
            n_items: 500,
            latent_dim_true: 16,
            n_clusters: 8,
            density_target: 0.05,
            popularity_skew: 1.0,
            cluster_spread: 1.5,
            signal: 8.0,
            seed: 0,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_users == 0 || self.n_items == 0 {
            return Err(Error::param("n_users", "users and items must be positive"));
        }
        if self.n_items > u32::MAX as usize || self.n_users > u32::MAX as usize {
            return Err(Error::param(
                "n_items",
                "dimensions exceed the u32 index range",
            ));
        }
        if self.latent_dim_true == 0 {
            return Err(Error::param("latent_dim_true", "must be at least 1"));
        }
        if self.n_clusters == 0 || self.n_clusters > self.n_items {
            return Err(Error::param(
                "n_clusters",
                format!("must be in 1..={}, got {}", self.n_items, self.n_clusters),
            ));
        }
        if !(self.density_target > 0.0 && self.density_target < 1.0) {
            return Err(Error::param(
                "density_target",
                format!("must lie in (0, 1), got {}", self.density_target),
            ));
        }
        for (name, v) in [
            ("popularity_skew", self.popularity_skew),
            ("cluster_spread", self.cluster_spread),
            ("signal", self.signal),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::param(
                    name,
                    format!("must be finite and non-negative, got {v}"),
                ));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct SynthData {
    pub matrix: InteractionMatrix,
    /// Planted cluster of every item.
    pub item_clusters: Vec<usize>,
}

fn gaussian_matrix(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> DenseMatrix {
    DenseMatrix::from_fn(rows, cols, |_, _| StandardNormal.sample(rng))
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

pub fn generate(spec: &SynthSpec) -> Result<SynthData> {
    spec.validate()?;
    let (nu, ni, d, k) = (
        spec.n_users,
        spec.n_items,
        spec.latent_dim_true,
        spec.n_clusters,
    );
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

    let centers = gaussian_matrix(k, d, &mut rng);
    let mut item_clusters: Vec<usize> = (0..ni).map(|i| i % k).collect();
    item_clusters.shuffle(&mut rng);
    let mut items = gaussian_matrix(ni, d, &mut rng);
    for (i, &c) in item_clusters.iter().enumerate() {
        for (v, center) in items.row_mut(i).iter_mut().zip(centers.row(c)) {
            *v = center + spec.cluster_spread * *v;
        }
    }
    let users = gaussian_matrix(nu, d, &mut rng);

    let mut ranks: Vec<usize> = (1..=ni).collect();
    ranks.shuffle(&mut rng);
    let log_pop: Vec<f64> = ranks
        .iter()
        .map(|&r| -spec.popularity_skew * (r as f64).ln())
        .collect();

    // Logits without the offset, user-major.
    let mut logits = users.matmul_t(&items)?;
    let scale = spec.signal / (d as f64).sqrt();
    logits.values_mut().par_chunks_mut(ni).for_each(|row| {
        for (z, lp) in row.iter_mut().zip(&log_pop) {
            *z = scale * *z + lp;
        }
    });

    let expected_density = |offset: f64| -> f64 {
        let total: f64 = logits
            .values()
            .par_chunks(ni)
            .map(|row| row.iter().map(|&z| sigmoid(z + offset)).sum::<f64>())
            .sum();
        total / (nu * ni) as f64
    };
    let (mut lo, mut hi) = (-60.0, 60.0);
    if expected_density(lo) > spec.density_target || expected_density(hi) < spec.density_target {
        return Err(Error::Generation(format!(
            "cannot calibrate density {} with the given logit range",
            spec.density_target
        )));
    }
    for _ in 0..100 {
        let mid = 0.5 * (lo + hi);
        if expected_density(mid) < spec.density_target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let offset = 0.5 * (lo + hi);

    let rows: Vec<Vec<u32>> = logits
        .values()
        .par_chunks(ni)
        .enumerate()
        .map(|(u, row)| {
            let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(spec.seed ^ 0x5eed, u as u64));
            row.iter()
                .enumerate()
                .filter(|&(_, &z)| rand::Rng::random::<f64>(&mut rng) < sigmoid(z + offset))
                .map(|(i, _)| i as u32)
                .collect()
        })
        .collect();
    let matrix = InteractionMatrix::from_rows(ni, rows)?;

    let realized = matrix.density();
    if (realized - spec.density_target).abs() > DENSITY_TOLERANCE * spec.density_target {
        return Err(Error::Generation(format!(
            "realized density {realized:.5} is too far from the target {}",
            spec.density_target
        )));
    }
    log::info!(
        "generated {nu}×{ni} matrix with {} interactions (density {realized:.4})",
        matrix.nnz()
    );
    Ok(SynthData {
        matrix,
        item_clusters,
    })
}

/// Matrix with every entry drawn independently as Bernoulli(`density`).
pub fn bernoulli_matrix(
    n_users: usize,
    n_items: usize,
    density: f64,
    seed: u64,
) -> Result<InteractionMatrix> {
    if !(0.0..=1.0).contains(&density) {
        return Err(Error::param(
            "density",
            format!("must lie in [0, 1], got {density}"),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rows = (0..n_users)
        .map(|_| {
            (0..n_items as u32)
                .filter(|_| rand::Rng::random::<f64>(&mut rng) < density)
                .collect()
        })
        .collect();
    InteractionMatrix::from_rows(n_items, rows)
}
