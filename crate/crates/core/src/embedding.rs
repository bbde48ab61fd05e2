use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::dense::DenseMatrix;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EntityKind {
    Item,
    User,
}

/// L×N latent matrix whose columns are entity embeddings.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    values: DenseMatrix,
    kind: EntityKind,
}

impl EmbeddingMatrix {
    pub fn new(values: DenseMatrix, kind: EntityKind) -> Result<Self> {
        if values.rows() == 0 {
            return Err(Error::param(
                "latent_dim",
                "embeddings need at least one latent row",
            ));
        }
        if !values.is_finite() {
            return Err(Error::Numeric(
                "embedding matrix has non-finite entries".into(),
            ));
        }
        Ok(EmbeddingMatrix { values, kind })
    }

    pub fn zeros(latent_dim: usize, n_entities: usize, kind: EntityKind) -> Self {
        EmbeddingMatrix {
            values: DenseMatrix::zeros(latent_dim, n_entities),
            kind,
        }
    }

    /// Entries drawn i.i.d. from the standard normal distribution.
    pub fn gaussian(latent_dim: usize, n_entities: usize, kind: EntityKind, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let values = DenseMatrix::from_fn(latent_dim, n_entities, |_, _| {
            StandardNormal.sample(&mut rng)
        });
        EmbeddingMatrix { values, kind }
    }

    pub fn latent_dim(&self) -> usize {
        self.values.rows()
    }

    pub fn n_entities(&self) -> usize {
        self.values.cols()
    }

    pub fn kind(&self) -> EntityKind {
        self.kind
    }

    pub fn matrix(&self) -> &DenseMatrix {
        &self.values
    }

    pub fn matrix_mut(&mut self) -> &mut DenseMatrix {
        &mut self.values
    }

    pub fn into_matrix(self) -> DenseMatrix {
        self.values
    }

    /// Embedding of entity `j` (column j).
    pub fn column(&self, j: usize) -> Vec<f64> {
        self.values.col(j)
    }

    /// N×L copy with one embedding per row.
    pub fn entity_major(&self) -> DenseMatrix {
        self.values.transpose()
    }

    pub fn from_entity_major(rows: DenseMatrix, kind: EntityKind) -> Result<Self> {
        Self::new(rows.transpose(), kind)
    }

    pub(crate) fn check_shape(
        &self,
        latent_dim: usize,
        n_entities: usize,
        what: &str,
    ) -> Result<()> {
        if self.latent_dim() != latent_dim || self.n_entities() != n_entities {
            return Err(Error::Shape(format!(
                "{what} is {}x{}, expected {latent_dim}x{n_entities}",
                self.latent_dim(),
                self.n_entities()
            )));
        }
        Ok(())
    }
}
