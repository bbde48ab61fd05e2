//! Ingestion, activity filtering and strong-generalization splits.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sparse::InteractionMatrix;

/// Default share of each held-out user's interactions revealed as fold-in.
pub const DEFAULT_FOLD_IN_FRAC: f64 = 0.8;

/// Column layout of an interaction CSV.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CsvFormat {
    /// `user,item,rating`
    Triples,
    /// `user,item`
    Pairs,
}

#[derive(Debug, Clone)]
pub struct LoadOptions {
    pub format: CsvFormat,
    pub rating_threshold: Option<f64>,
    pub has_header: bool,
}

impl LoadOptions {
    pub fn pairs() -> Self {
        LoadOptions {
            format: CsvFormat::Pairs,
            rating_threshold: None,
            has_header: false,
        }
    }

    pub fn triples(threshold: f64) -> Self {
        LoadOptions {
            format: CsvFormat::Triples,
            rating_threshold: Some(threshold),
            has_header: false,
        }
    }
}

/// Bijections between external string ids and dense indices.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IdMap {
    pub user_ids: Vec<String>,
    pub item_ids: Vec<String>,
}

impl IdMap {
    pub fn user_index(&self, id: &str) -> Option<usize> {
        self.user_ids.iter().position(|u| u == id)
    }

    pub fn item_index(&self, id: &str) -> Option<usize> {
        self.item_ids.iter().position(|i| i == id)
    }

    /// Keeps only the listed users and items, in the listed order.
    pub fn restrict(&self, users: &[usize], items: &[usize]) -> IdMap {
        IdMap {
            user_ids: users.iter().map(|&u| self.user_ids[u].clone()).collect(),
            item_ids: items.iter().map(|&i| self.item_ids[i].clone()).collect(),
        }
    }
}

#[derive(Default)]
struct Interner {
    ids: Vec<String>,
    lookup: HashMap<String, usize>,
}

impl Interner {
    fn intern(&mut self, id: &str) -> usize {
        if let Some(&idx) = self.lookup.get(id) {
            return idx;
        }
        let idx = self.ids.len();
        self.ids.push(id.to_owned());
        self.lookup.insert(id.to_owned(), idx);
        idx
    }
}

/// Reads an interaction log into a binary matrix. Indices are assigned in
/// first-seen order; ratings (if any) are only used for thresholding.
pub fn load_interactions(path: &Path, opts: &LoadOptions) -> Result<(InteractionMatrix, IdMap)> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_interactions(BufReader::new(file), opts).map_err(|e| match e {
        Error::Io { source, .. } => Error::io(path, source),
        other => other,
    })
}

pub fn read_interactions(
    reader: impl BufRead,
    opts: &LoadOptions,
) -> Result<(InteractionMatrix, IdMap)> {
    let threshold = match (opts.format, opts.rating_threshold) {
        (CsvFormat::Triples, None) => {
            return Err(Error::param(
                "rating_threshold",
                "rating column present but no threshold given",
            ))
        }
        (CsvFormat::Triples, Some(t)) => Some(t),
        (CsvFormat::Pairs, _) => None,
    };
    let expected_cols = match opts.format {
        CsvFormat::Triples => 3,
        CsvFormat::Pairs => 2,
    };

    let mut users = Interner::default();
    let mut items = Interner::default();
    let mut pairs = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io("<input>", e))?;
        let lineno = lineno + 1;
        if lineno == 1 && opts.has_header {
            continue;
        }
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != expected_cols {
            return Err(Error::Parse {
                line: lineno,
                message: format!("expected {expected_cols} fields, found {}", fields.len()),
            });
        }
        if fields[0].is_empty() || fields[1].is_empty() {
            return Err(Error::Parse {
                line: lineno,
                message: "empty user or item id".into(),
            });
        }
        if let Some(t) = threshold {
            let rating: f64 = fields[2].parse().map_err(|_| Error::Parse {
                line: lineno,
                message: format!("rating `{}` is not a number", fields[2]),
            })?;
            if !rating.is_finite() {
                return Err(Error::Parse {
                    line: lineno,
                    message: format!("rating `{}` is not finite", fields[2]),
                });
            }
            if rating < t {
                continue;
            }
        }
        pairs.push((users.intern(fields[0]), items.intern(fields[1])));
    }
    if pairs.is_empty() {
        return Err(Error::EmptyDataset { stage: "loading" });
    }
    let x = InteractionMatrix::from_pairs(users.ids.len(), items.ids.len(), pairs)?;
    Ok((
        x,
        IdMap {
            user_ids: users.ids,
            item_ids: items.ids,
        },
    ))
}

/// Writes `user,item` pairs with external ids, row-major by user index.
pub fn write_interactions(path: &Path, x: &InteractionMatrix, ids: &IdMap) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for (u, i) in x.iter() {
        writeln!(w, "{},{}", ids.user_ids[u], ids.item_ids[i]).map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Result of activity filtering: the reindexed matrix plus the original
/// indices of the surviving users and items.
#[derive(Debug, Clone)]
pub struct Filtered {
    pub matrix: InteractionMatrix,
    pub kept_users: Vec<usize>,
    pub kept_items: Vec<usize>,
}

/// Repeatedly drops users with fewer than `min_user` interactions and items
/// with fewer than `min_item` users until both thresholds hold.
pub fn filter_activity(
    x: &InteractionMatrix,
    min_user: usize,
    min_item: usize,
) -> Result<InteractionMatrix> {
    filter_activity_with_maps(x, min_user, min_item).map(|f| f.matrix)
}

pub fn filter_activity_with_maps(
    x: &InteractionMatrix,
    min_user: usize,
    min_item: usize,
) -> Result<Filtered> {
    let mut user_alive = vec![true; x.n_users()];
    let mut item_alive = vec![true; x.n_items()];
    loop {
        let mut user_deg = vec![0usize; x.n_users()];
        let mut item_deg = vec![0usize; x.n_items()];
        for (u, i) in x.iter() {
            if user_alive[u] && item_alive[i] {
                user_deg[u] += 1;
                item_deg[i] += 1;
            }
        }
        let mut changed = false;
        for (alive, &deg) in user_alive.iter_mut().zip(&user_deg) {
            if *alive && deg < min_user {
                *alive = false;
                changed = true;
            }
        }
        for (alive, &deg) in item_alive.iter_mut().zip(&item_deg) {
            if *alive && deg < min_item {
                *alive = false;
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }

    let kept_users: Vec<usize> = (0..x.n_users()).filter(|&u| user_alive[u]).collect();
    let kept_items: Vec<usize> = (0..x.n_items()).filter(|&i| item_alive[i]).collect();
    let mut new_item = vec![u32::MAX; x.n_items()];
    for (new, &old) in kept_items.iter().enumerate() {
        new_item[old] = new as u32;
    }
    let rows = kept_users
        .iter()
        .map(|&u| {
            x.row(u)
                .iter()
                .filter(|&&i| item_alive[i as usize])
                .map(|&i| new_item[i as usize])
                .collect()
        })
        .collect();
    let matrix = InteractionMatrix::from_rows(kept_items.len(), rows)?;
    if matrix.is_empty() {
        return Err(Error::EmptyDataset {
            stage: "activity filtering",
        });
    }
    Ok(Filtered {
        matrix,
        kept_users,
        kept_items,
    })
}

/// Number of users who interacted with each item.
pub fn item_popularity(x: &InteractionMatrix) -> Vec<usize> {
    x.col_counts()
}

/// Strong-generalization split: train, validation and test users are
/// disjoint; validation and test rows are divided into fold-in and holdout.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSplit {
    pub train: InteractionMatrix,
    pub valid_fold_in: InteractionMatrix,
    pub valid_holdout: InteractionMatrix,
    pub test_fold_in: InteractionMatrix,
    pub test_holdout: InteractionMatrix,
    /// Source-matrix row of each train / validation / test row.
    pub train_users: Vec<usize>,
    pub valid_users: Vec<usize>,
    pub test_users: Vec<usize>,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitParams {
    pub valid_frac: f64,
    pub test_frac: f64,
    pub fold_in_frac: f64,
    pub seed: u64,
}

impl Default for SplitParams {
    fn default() -> Self {
        SplitParams {
            valid_frac: 0.1,
            test_frac: 0.1,
            fold_in_frac: DEFAULT_FOLD_IN_FRAC,
            seed: 0,
        }
    }
}

/// SplitMix64 finalizer; derives independent per-user streams from one seed.
pub(crate) fn mix_seed(a: u64, b: u64) -> u64 {
    let mut z = a
        .wrapping_mul(0x9E37_79B9_7F4A_7C15)
        .wrapping_add(b)
        .wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Number of fold-in entries for a user with `degree` interactions.
pub fn fold_in_count(degree: usize, fold_in_frac: f64) -> usize {
    ((fold_in_frac * degree as f64) - 1e-9).ceil().max(0.0) as usize
}

pub fn split_strong(x: &InteractionMatrix, params: &SplitParams) -> Result<DatasetSplit> {
    let SplitParams {
        valid_frac,
        test_frac,
        fold_in_frac,
        seed,
    } = *params;
    if !(valid_frac > 0.0 && test_frac > 0.0 && valid_frac + test_frac < 1.0) {
        return Err(Error::param(
            "valid_frac/test_frac",
            format!("need 0 < valid, test and valid + test < 1, got {valid_frac}, {test_frac}"),
        ));
    }
    if !(fold_in_frac > 0.0 && fold_in_frac < 1.0) {
        return Err(Error::param(
            "fold_in_frac",
            format!("must lie in (0, 1), got {fold_in_frac}"),
        ));
    }

    let n = x.n_users();
    let n_valid = (valid_frac * n as f64).round() as usize;
    let n_test = (test_frac * n as f64).round() as usize;
    if n_valid == 0 || n_test == 0 || n_valid + n_test >= n {
        return Err(Error::Split(format!(
            "{n} users cannot populate train, validation ({n_valid}) and test ({n_test}) groups"
        )));
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut valid_cand = order[..n_valid].to_vec();
    let mut test_cand = order[n_valid..n_valid + n_test].to_vec();
    let mut train_users = order[n_valid + n_test..].to_vec();
    valid_cand.sort_unstable();
    test_cand.sort_unstable();

    let mut moved = 0usize;
    let mut divide = |cand: Vec<usize>, train: &mut Vec<usize>| {
        let mut users = Vec::new();
        let mut fold_rows = Vec::new();
        let mut hold_rows = Vec::new();
        for u in cand {
            let mut items = x.row(u).to_vec();
            let k = fold_in_count(items.len(), fold_in_frac);
            if k >= items.len() {
                train.push(u);
                moved += 1;
                continue;
            }
            items.shuffle(&mut ChaCha8Rng::seed_from_u64(mix_seed(seed, u as u64)));
            let hold = items.split_off(k);
            users.push(u);
            fold_rows.push(items);
            hold_rows.push(hold);
        }
        (users, fold_rows, hold_rows)
    };
    let (valid_users, vf, vh) = divide(valid_cand, &mut train_users);
    let (test_users, tf, th) = divide(test_cand, &mut train_users);
    if moved > 0 {
        log::info!("split: {moved} held-out users had an empty holdout and were returned to train");
    }
    if valid_users.is_empty() || test_users.is_empty() {
        return Err(Error::Split(
            "no held-out user has enough interactions for a non-empty holdout".into(),
        ));
    }
    train_users.sort_unstable();

    let ni = x.n_items();
    Ok(DatasetSplit {
        train: x.select_rows(&train_users),
        valid_fold_in: InteractionMatrix::from_rows(ni, vf)?,
        valid_holdout: InteractionMatrix::from_rows(ni, vh)?,
        test_fold_in: InteractionMatrix::from_rows(ni, tf)?,
        test_holdout: InteractionMatrix::from_rows(ni, th)?,
        train_users,
        valid_users,
        test_users,
        seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Cursor;

    fn read(text: &str, opts: &LoadOptions) -> Result<(InteractionMatrix, IdMap)> {
        read_interactions(Cursor::new(text), opts)
    }

    #[test]
    fn threshold_filters_ratings() {
        let (x, ids) = read("a,x,5\na,y,2\nb,x,4\n", &LoadOptions::triples(4.0)).unwrap();
        assert_eq!((x.n_users(), x.n_items()), (2, 1));
        assert_eq!(x.iter().collect::<Vec<_>>(), vec![(0, 0), (1, 0)]);
        assert_eq!(ids.user_ids, vec!["a", "b"]);
        assert_eq!(ids.item_ids, vec!["x"]);
    }

    #[test]
    fn duplicate_pairs_count_once() {
        let (x, _) = read("u1,i1\nu1,i2\nu1,i1\n", &LoadOptions::pairs()).unwrap();
        assert_eq!(x.nnz(), 2);
    }

    #[test]
    fn header_is_skipped() {
        let opts = LoadOptions {
            has_header: true,
            ..LoadOptions::pairs()
        };
        let (x, ids) = read("user,item\nu,i\n", &opts).unwrap();
        assert_eq!(x.nnz(), 1);
        assert_eq!(ids.user_ids, vec!["u"]);
    }

    #[test]
    fn malformed_row_reports_line() {
        let err = read("a,x\nb\n", &LoadOptions::pairs()).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }));
        let err = read("a,x,notanumber\n", &LoadOptions::triples(1.0)).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 1, .. }));
    }

    #[test]
    fn triples_without_threshold_is_a_parameter_error() {
        let opts = LoadOptions {
            rating_threshold: None,
            ..LoadOptions::triples(0.0)
        };
        assert!(matches!(
            read("a,x,1\n", &opts),
            Err(Error::Parameter { .. })
        ));
    }

    #[test]
    fn nothing_above_threshold_is_empty() {
        let err = read("a,x,1\n", &LoadOptions::triples(4.0)).unwrap_err();
        assert!(matches!(err, Error::EmptyDataset { .. }));
    }

    #[test]
    fn zero_thresholds_leave_matrix_unchanged() {
        let x = InteractionMatrix::from_pairs(3, 3, vec![(0, 0), (1, 2), (2, 1)]).unwrap();
        assert_eq!(filter_activity(&x, 0, 0).unwrap(), x);
    }

    #[test]
    fn single_user_below_threshold_is_empty() {
        let x = InteractionMatrix::from_pairs(1, 2, vec![(0, 0), (0, 1)]).unwrap();
        assert!(matches!(
            filter_activity(&x, 3, 0),
            Err(Error::EmptyDataset { .. })
        ));
    }

    #[test]
    fn filter_cascades() {
        // Item 2 has one user; dropping it leaves user 1 with one item.
        let x = InteractionMatrix::from_pairs(
            3,
            3,
            vec![(0, 0), (0, 1), (1, 0), (1, 2), (2, 0), (2, 1)],
        )
        .unwrap();
        let f = filter_activity_with_maps(&x, 2, 2).unwrap();
        assert_eq!(f.kept_users, vec![0, 2]);
        assert_eq!(f.kept_items, vec![0, 1]);
        assert_eq!(f.matrix.nnz(), 4);
    }

    #[test]
    fn fold_in_ceiling() {
        assert_eq!(fold_in_count(5, 0.8), 4);
        assert_eq!(fold_in_count(1, 0.8), 1);
        assert_eq!(fold_in_count(3, 0.5), 2);
        assert_eq!(fold_in_count(10, 0.8), 8);
    }

    #[test]
    fn popularity_of_identity_and_empty() {
        assert_eq!(item_popularity(&InteractionMatrix::identity(2)), vec![1, 1]);
        assert_eq!(item_popularity(&InteractionMatrix::empty(3, 4)), vec![0; 4]);
    }

    #[test]
    fn tiny_population_cannot_be_split() {
        let x = InteractionMatrix::identity(2);
        assert!(matches!(
            split_strong(&x, &SplitParams::default()),
            Err(Error::Split(_))
        ));
    }

    #[test]
    fn single_interaction_users_return_to_train() {
        let rows = (0..20)
            .map(|u| {
                if u % 2 == 0 {
                    vec![0]
                } else {
                    vec![0, 1, 2, 3, 4]
                }
            })
            .collect();
        let x = InteractionMatrix::from_rows(5, rows).unwrap();
        let params = SplitParams {
            valid_frac: 0.25,
            test_frac: 0.25,
            ..SplitParams::default()
        };
        let s = split_strong(&x, &params).unwrap();
        for &u in s.valid_users.iter().chain(&s.test_users) {
            assert_eq!(x.row_nnz(u), 5);
        }
        for r in 0..s.valid_holdout.n_users() {
            assert_eq!(s.valid_fold_in.row_nnz(r), 4);
            assert_eq!(s.valid_holdout.row_nnz(r), 1);
        }
        assert_eq!(
            s.train_users.len() + s.valid_users.len() + s.test_users.len(),
            20
        );
    }
}
