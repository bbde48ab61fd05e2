//! Binary user×item feedback matrix in compressed-row form.

use rayon::prelude::*;

use crate::dense::DenseMatrix;
use crate::error::{Error, Result};

/// Implicit feedback matrix X ∈ {0,1}^{U×I}. Only the positions of the ones
/// are stored: row-major by user, column indices sorted and unique.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InteractionMatrix {
    n_users: usize,
    n_items: usize,
    indptr: Vec<usize>,
    indices: Vec<u32>,
}

impl InteractionMatrix {
    pub fn empty(n_users: usize, n_items: usize) -> Self {
        InteractionMatrix {
            n_users,
            n_items,
            indptr: vec![0; n_users + 1],
            indices: Vec::new(),
        }
    }

    pub fn identity(n: usize) -> Self {
        InteractionMatrix {
            n_users: n,
            n_items: n,
            indptr: (0..=n).collect(),
            indices: (0..n as u32).collect(),
        }
    }

    /// Builds a matrix from `(user, item)` pairs in any order. Duplicates are
    /// collapsed.
    pub fn from_pairs(
        n_users: usize,
        n_items: usize,
        pairs: impl IntoIterator<Item = (usize, usize)>,
    ) -> Result<Self> {
        check_index_width(n_items)?;
        let mut pairs: Vec<(usize, usize)> = pairs.into_iter().collect();
        if let Some(&(u, i)) = pairs.iter().find(|&&(u, i)| u >= n_users || i >= n_items) {
            return Err(Error::Shape(format!(
                "entry ({u}, {i}) outside a {n_users}x{n_items} matrix"
            )));
        }
        pairs.sort_unstable();
        pairs.dedup();
        let mut indptr = vec![0usize; n_users + 1];
        for &(u, _) in &pairs {
            indptr[u + 1] += 1;
        }
        for u in 0..n_users {
            indptr[u + 1] += indptr[u];
        }
        let indices = pairs.into_iter().map(|(_, i)| i as u32).collect();
        Ok(InteractionMatrix {
            n_users,
            n_items,
            indptr,
            indices,
        })
    }

    /// Builds a matrix from per-user item lists. Lists are sorted and
    /// deduplicated.
    pub fn from_rows(n_items: usize, rows: Vec<Vec<u32>>) -> Result<Self> {
        check_index_width(n_items)?;
        let mut indptr = Vec::with_capacity(rows.len() + 1);
        indptr.push(0);
        let mut indices = Vec::with_capacity(rows.iter().map(Vec::len).sum());
        for (u, mut row) in rows.into_iter().enumerate() {
            row.sort_unstable();
            row.dedup();
            if let Some(&bad) = row.iter().find(|&&i| i as usize >= n_items) {
                return Err(Error::Shape(format!(
                    "user {u} references item {bad} but there are {n_items} items"
                )));
            }
            indices.extend_from_slice(&row);
            indptr.push(indices.len());
        }
        Ok(InteractionMatrix {
            n_users: indptr.len() - 1,
            n_items,
            indptr,
            indices,
        })
    }

    /// Builds a matrix straight from CSR arrays, validating every invariant.
    pub fn from_csr(
        n_users: usize,
        n_items: usize,
        indptr: Vec<usize>,
        indices: Vec<u32>,
    ) -> Result<Self> {
        check_index_width(n_items)?;
        if indptr.len() != n_users + 1 || indptr[0] != 0 || indptr[n_users] != indices.len() {
            return Err(Error::Shape("inconsistent row pointer array".into()));
        }
        for u in 0..n_users {
            if indptr[u] > indptr[u + 1] {
                return Err(Error::Shape(format!("row pointer decreases at user {u}")));
            }
            let row = &indices[indptr[u]..indptr[u + 1]];
            if row.windows(2).any(|w| w[0] >= w[1]) {
                return Err(Error::Shape(format!("row {u} is not strictly sorted")));
            }
            if row.last().is_some_and(|&i| i as usize >= n_items) {
                return Err(Error::Shape(format!("row {u} has an out-of-range item")));
            }
        }
        Ok(InteractionMatrix {
            n_users,
            n_items,
            indptr,
            indices,
        })
    }

    #[inline]
    pub fn n_users(&self) -> usize {
        self.n_users
    }

    #[inline]
    pub fn n_items(&self) -> usize {
        self.n_items
    }

    #[inline]
    pub fn nnz(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn density(&self) -> f64 {
        if self.n_users == 0 || self.n_items == 0 {
            return 0.0;
        }
        self.nnz() as f64 / (self.n_users as f64 * self.n_items as f64)
    }

    pub fn indptr(&self) -> &[usize] {
        &self.indptr
    }

    pub fn indices(&self) -> &[u32] {
        &self.indices
    }

    /// Sorted item indices of user `u`.
    #[inline]
    pub fn row(&self, u: usize) -> &[u32] {
        &self.indices[self.indptr[u]..self.indptr[u + 1]]
    }

    pub fn row_nnz(&self, u: usize) -> usize {
        self.indptr[u + 1] - self.indptr[u]
    }

    pub fn row_counts(&self) -> Vec<usize> {
        (0..self.n_users).map(|u| self.row_nnz(u)).collect()
    }

    /// Number of users per item.
    pub fn col_counts(&self) -> Vec<usize> {
        let mut counts = vec![0usize; self.n_items];
        for &i in &self.indices {
            counts[i as usize] += 1;
        }
        counts
    }

    pub fn contains(&self, u: usize, i: usize) -> bool {
        self.row(u).binary_search(&(i as u32)).is_ok()
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (0..self.n_users).flat_map(move |u| self.row(u).iter().map(move |&i| (u, i as usize)))
    }

    /// Xᵀ as an item×user matrix.
    pub fn transpose(&self) -> InteractionMatrix {
        let counts = self.col_counts();
        let mut indptr = vec![0usize; self.n_items + 1];
        for i in 0..self.n_items {
            indptr[i + 1] = indptr[i] + counts[i];
        }
        let mut cursor = indptr.clone();
        let mut indices = vec![0u32; self.nnz()];
        for u in 0..self.n_users {
            for &i in self.row(u) {
                let slot = &mut cursor[i as usize];
                indices[*slot] = u as u32;
                *slot += 1;
            }
        }
        InteractionMatrix {
            n_users: self.n_items,
            n_items: self.n_users,
            indptr,
            indices,
        }
    }

    /// Keeps the given users, in the given order.
    pub fn select_rows(&self, users: &[usize]) -> InteractionMatrix {
        let mut indptr = Vec::with_capacity(users.len() + 1);
        indptr.push(0);
        let mut indices = Vec::new();
        for &u in users {
            indices.extend_from_slice(self.row(u));
            indptr.push(indices.len());
        }
        InteractionMatrix {
            n_users: users.len(),
            n_items: self.n_items,
            indptr,
            indices,
        }
    }

    pub fn to_dense(&self) -> DenseMatrix {
        let mut m = DenseMatrix::zeros(self.n_users, self.n_items);
        for (u, i) in self.iter() {
            m[(u, i)] = 1.0;
        }
        m
    }

    /// Dense XᵀX (I×I). Entry (i, j) counts users who have both items.
    pub fn gram(&self) -> DenseMatrix {
        let n = self.n_items;
        let mut g = DenseMatrix::zeros(n, n);
        for u in 0..self.n_users {
            let row = self.row(u);
            for &a in row {
                let dst = g.row_mut(a as usize);
                for &b in row {
                    dst[b as usize] += 1.0;
                }
            }
        }
        g
    }

    /// `X · rhs` for a dense I×k `rhs`: row u is the sum of the `rhs` rows of
    /// the items user u interacted with.
    pub fn mul_dense(&self, rhs: &DenseMatrix) -> Result<DenseMatrix> {
        if rhs.rows() != self.n_items {
            return Err(Error::Shape(format!(
                "cannot multiply {}x{} sparse by {}x{} dense",
                self.n_users,
                self.n_items,
                rhs.rows(),
                rhs.cols()
            )));
        }
        let k = rhs.cols();
        let mut out = DenseMatrix::zeros(self.n_users, k);
        if k == 0 {
            return Ok(out);
        }
        out.values_mut()
            .par_chunks_mut(k)
            .enumerate()
            .for_each(|(u, acc)| {
                for &i in self.row(u) {
                    for (a, &v) in acc.iter_mut().zip(rhs.row(i as usize)) {
                        *a += v;
                    }
                }
            });
        Ok(out)
    }
}

fn check_index_width(n_items: usize) -> Result<()> {
    if n_items > u32::MAX as usize {
        return Err(Error::Shape(format!(
            "{n_items} items exceed the u32 index range"
        )));
    }
    Ok(())
}
