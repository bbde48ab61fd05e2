//! On-disk formats.
//!
//! Sparse matrix (`.isxf`): magic `ISXF`, u32 version, u64 n_users,
//! u64 n_items, u64 nnz, then nnz (u32 user, u32 item) pairs sorted by
//! (user, item). Dense matrix (`.islm`): magic `ISLM`, u32 version,
//! u64 rows, u64 cols, then row-major f64. All integers and floats are
//! little-endian.
//!
//! Splits and models are directories of such files plus a small metadata
//! file.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::DatasetSplit;
use crate::dense::DenseMatrix;
use crate::embedding::{EmbeddingMatrix, EntityKind};
use crate::error::{Error, Result};
use crate::models::{MfHyper, MfModel, ModelKind, PlrecHyper, PlrecModel, Setup, TrainedModel};
use crate::sparse::InteractionMatrix;

pub const SPARSE_MAGIC: &[u8; 4] = b"ISXF";
pub const DENSE_MAGIC: &[u8; 4] = b"ISLM";
pub const FORMAT_VERSION: u32 = 1;

fn format_err(path: &Path, message: impl Into<String>) -> Error {
    Error::Format {
        path: path.to_path_buf(),
        message: message.into(),
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Error::io(path, e))
}

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| Error::io(path, e))
}

fn file_len(path: &Path) -> Result<u64> {
    fs::metadata(path)
        .map(|m| m.len())
        .map_err(|e| Error::io(path, e))
}

struct Reader<R> {
    inner: R,
    path: PathBuf,
}

impl<R: Read> Reader<R> {
    fn bytes<const N: usize>(&mut self) -> Result<[u8; N]> {
        let mut buf = [0u8; N];
        self.inner.read_exact(&mut buf).map_err(|e| {
            if e.kind() == std::io::ErrorKind::UnexpectedEof {
                format_err(&self.path, "file is truncated")
            } else {
                Error::io(&self.path, e)
            }
        })?;
        Ok(buf)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.bytes()?))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.bytes()?))
    }

    fn header(&mut self, magic: &[u8; 4]) -> Result<()> {
        let got: [u8; 4] = self.bytes()?;
        if &got != magic {
            return Err(format_err(
                &self.path,
                format!(
                    "bad magic {:?}, expected {:?}",
                    String::from_utf8_lossy(&got),
                    String::from_utf8_lossy(magic)
                ),
            ));
        }
        let version = self.u32()?;
        if version != FORMAT_VERSION {
            return Err(format_err(
                &self.path,
                format!("unsupported version {version}"),
            ));
        }
        Ok(())
    }

    fn expect_eof(&mut self) -> Result<()> {
        let mut probe = [0u8; 1];
        match self.inner.read(&mut probe) {
            Ok(0) => Ok(()),
            Ok(_) => Err(format_err(&self.path, "trailing bytes after payload")),
            Err(e) => Err(Error::io(&self.path, e)),
        }
    }
}

fn to_usize(v: u64, path: &Path, what: &str) -> Result<usize> {
    usize::try_from(v).map_err(|_| format_err(path, format!("{what} {v} does not fit in memory")))
}

pub fn write_sparse(path: &Path, x: &InteractionMatrix) -> Result<()> {
    let mut w = create(path)?;
    let io = |e| Error::io(path, e);
    w.write_all(SPARSE_MAGIC).map_err(io)?;
    w.write_all(&FORMAT_VERSION.to_le_bytes()).map_err(io)?;
    for v in [x.n_users(), x.n_items(), x.nnz()] {
        w.write_all(&(v as u64).to_le_bytes()).map_err(io)?;
    }
    for (u, i) in x.iter() {
        w.write_all(&(u as u32).to_le_bytes()).map_err(io)?;
        w.write_all(&(i as u32).to_le_bytes()).map_err(io)?;
    }
    w.flush().map_err(io)
}

pub fn read_sparse(path: &Path) -> Result<InteractionMatrix> {
    let len = file_len(path)?;
    let mut r = Reader {
        inner: open(path)?,
        path: path.to_path_buf(),
    };
    r.header(SPARSE_MAGIC)?;
    let n_users = to_usize(r.u64()?, path, "user count")?;
    let n_items = to_usize(r.u64()?, path, "item count")?;
    let nnz = r.u64()?;
    if n_users > u32::MAX as usize + 1 || n_items > u32::MAX as usize + 1 {
        return Err(format_err(path, "dimensions exceed the u32 index range"));
    }
    if nnz.checked_mul(8).and_then(|b| b.checked_add(32)) != Some(len) {
        return Err(format_err(
            path,
            format!("{nnz} entries do not match a file of {len} bytes"),
        ));
    }
    let nnz = to_usize(nnz, path, "entry count")?;
    let mut indptr = vec![0usize; n_users + 1];
    let mut indices = Vec::with_capacity(nnz);
    let mut prev: Option<(u32, u32)> = None;
    for _ in 0..nnz {
        let u = r.u32()?;
        let i = r.u32()?;
        if u as usize >= n_users || i as usize >= n_items {
            return Err(format_err(
                path,
                format!("entry ({u}, {i}) is out of range"),
            ));
        }
        if prev.is_some_and(|p| p >= (u, i)) {
            return Err(format_err(path, "entries are not strictly sorted"));
        }
        prev = Some((u, i));
        indptr[u as usize + 1] += 1;
        indices.push(i);
    }
    r.expect_eof()?;
    for u in 0..n_users {
        indptr[u + 1] += indptr[u];
    }
    InteractionMatrix::from_csr(n_users, n_items, indptr, indices)
}

pub fn write_dense(path: &Path, m: &DenseMatrix) -> Result<()> {
    let mut w = create(path)?;
    let io = |e| Error::io(path, e);
    w.write_all(DENSE_MAGIC).map_err(io)?;
    w.write_all(&FORMAT_VERSION.to_le_bytes()).map_err(io)?;
    w.write_all(&(m.rows() as u64).to_le_bytes()).map_err(io)?;
    w.write_all(&(m.cols() as u64).to_le_bytes()).map_err(io)?;
    for v in m.values() {
        w.write_all(&v.to_le_bytes()).map_err(io)?;
    }
    w.flush().map_err(io)
}

pub fn read_dense(path: &Path) -> Result<DenseMatrix> {
    let len = file_len(path)?;
    let mut r = Reader {
        inner: open(path)?,
        path: path.to_path_buf(),
    };
    r.header(DENSE_MAGIC)?;
    let rows = r.u64()?;
    let cols = r.u64()?;
    let expected = rows
        .checked_mul(cols)
        .and_then(|n| n.checked_mul(8))
        .and_then(|b| b.checked_add(24));
    if expected != Some(len) {
        return Err(format_err(
            path,
            format!("{rows}×{cols} does not match a file of {len} bytes"),
        ));
    }
    let rows = to_usize(rows, path, "row count")?;
    let cols = to_usize(cols, path, "column count")?;
    let mut values = Vec::with_capacity(rows * cols);
    for _ in 0..rows * cols {
        values.push(f64::from_le_bytes(r.bytes()?));
    }
    r.expect_eof()?;
    DenseMatrix::from_vec(rows, cols, values)
}

pub fn write_embeddings(path: &Path, e: &EmbeddingMatrix) -> Result<()> {
    write_dense(path, e.matrix())
}

pub fn read_embeddings(path: &Path, kind: EntityKind) -> Result<EmbeddingMatrix> {
    EmbeddingMatrix::new(read_dense(path)?, kind)
}

fn write_vector(path: &Path, v: &[f64]) -> Result<()> {
    write_dense(path, &DenseMatrix::from_vec(1, v.len(), v.to_vec())?)
}

fn read_vector(path: &Path) -> Result<Vec<f64>> {
    let m = read_dense(path)?;
    if m.rows() != 1 {
        return Err(format_err(
            path,
            format!("expected a single row, found {}", m.rows()),
        ));
    }
    Ok(m.into_values())
}

/// Parses `key=value` lines. Blank lines and `#` comments are skipped;
/// a repeated key is an error.
pub fn parse_key_values(text: &str) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            return Err(Error::Parse {
                line: n + 1,
                message: format!("expected key=value, got `{line}`"),
            });
        };
        let k = k.trim();
        if k.is_empty() {
            return Err(Error::Parse {
                line: n + 1,
                message: "empty key".into(),
            });
        }
        if out.insert(k.to_string(), v.trim().to_string()).is_some() {
            return Err(Error::Parse {
                line: n + 1,
                message: format!("duplicate key `{k}`"),
            });
        }
    }
    Ok(out)
}

pub fn format_key_values(map: &BTreeMap<String, String>) -> String {
    map.iter().map(|(k, v)| format!("{k}={v}\n")).collect()
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

const SPLIT_PARTS: [&str; 5] = [
    "train",
    "valid_fold_in",
    "valid_holdout",
    "test_fold_in",
    "test_holdout",
];

#[derive(Serialize, Deserialize)]
struct SplitMeta {
    seed: u64,
    train_users: Vec<usize>,
    valid_users: Vec<usize>,
    test_users: Vec<usize>,
}

fn split_parts(split: &DatasetSplit) -> [&InteractionMatrix; 5] {
    [
        &split.train,
        &split.valid_fold_in,
        &split.valid_holdout,
        &split.test_fold_in,
        &split.test_holdout,
    ]
}

/// Writes the five split matrices plus `split.json` with the user
/// partition.
pub fn save_split(dir: &Path, split: &DatasetSplit) -> Result<()> {
    create_dir(dir)?;
    for (name, m) in SPLIT_PARTS.iter().zip(split_parts(split)) {
        write_sparse(&dir.join(format!("{name}.isxf")), m)?;
    }
    let meta = SplitMeta {
        seed: split.seed,
        train_users: split.train_users.clone(),
        valid_users: split.valid_users.clone(),
        test_users: split.test_users.clone(),
    };
    write_text(
        &dir.join("split.json"),
        &serde_json::to_string_pretty(&meta)?,
    )
}

pub fn load_split(dir: &Path) -> Result<DatasetSplit> {
    let mut parts = Vec::with_capacity(5);
    for name in SPLIT_PARTS {
        parts.push(read_sparse(&dir.join(format!("{name}.isxf")))?);
    }
    let meta_path = dir.join("split.json");
    let meta: SplitMeta = serde_json::from_str(&read_text(&meta_path)?)
        .map_err(|e| format_err(&meta_path, e.to_string()))?;
    let mut parts = parts.into_iter();
    let mut next = || parts.next().expect("five parts");
    let split = DatasetSplit {
        train: next(),
        valid_fold_in: next(),
        valid_holdout: next(),
        test_fold_in: next(),
        test_holdout: next(),
        train_users: meta.train_users,
        valid_users: meta.valid_users,
        test_users: meta.test_users,
        seed: meta.seed,
    };
    let n_items = split.train.n_items();
    if split_parts(&split).iter().any(|m| m.n_items() != n_items)
        || split.valid_fold_in.n_users() != split.valid_holdout.n_users()
        || split.test_fold_in.n_users() != split.test_holdout.n_users()
    {
        return Err(format_err(dir, "split parts have inconsistent shapes"));
    }
    Ok(split)
}

const MODEL_META: &str = "model.txt";

fn meta_get<'a>(meta: &'a BTreeMap<String, String>, key: &str, path: &Path) -> Result<&'a str> {
    meta.get(key)
        .map(String::as_str)
        .ok_or_else(|| format_err(path, format!("missing key `{key}`")))
}

fn meta_f64(meta: &BTreeMap<String, String>, key: &str, path: &Path) -> Result<f64> {
    meta_get(meta, key, path)?
        .parse()
        .map_err(|_| format_err(path, format!("`{key}` is not a number")))
}

fn meta_bool(meta: &BTreeMap<String, String>, key: &str, path: &Path) -> Result<bool> {
    meta_get(meta, key, path)?
        .parse()
        .map_err(|_| format_err(path, format!("`{key}` is not true/false")))
}

/// Saves a trained model as embedding files plus a `model.txt` metadata
/// file recording the hyperparameters and the setup it was trained with.
pub fn save_model(dir: &Path, model: &TrainedModel, setup: Setup) -> Result<()> {
    create_dir(dir)?;
    let mut meta = BTreeMap::new();
    meta.insert("format_version".to_string(), FORMAT_VERSION.to_string());
    meta.insert("model".to_string(), model.kind().name().to_string());
    meta.insert("setup".to_string(), setup.name().to_string());
    let q = model.item_embeddings();
    meta.insert("latent_dim".to_string(), q.latent_dim().to_string());
    meta.insert("n_items".to_string(), q.n_entities().to_string());
    write_embeddings(&dir.join("q.islm"), q)?;
    let bias = match model {
        TrainedModel::Mf(m) => {
            meta.insert("r_p".to_string(), m.hyper.r_p.to_string());
            meta.insert("r_q".to_string(), m.hyper.r_q.to_string());
            meta.insert("s_q".to_string(), m.hyper.s_q.to_string());
            meta.insert("has_p".to_string(), m.p.is_some().to_string());
            if let Some(p) = &m.p {
                write_embeddings(&dir.join("p.islm"), p)?;
            }
            m.bias.as_deref()
        }
        TrainedModel::Plrec(m) => {
            meta.insert("r_q".to_string(), m.hyper.r_q.to_string());
            meta.insert("s_q".to_string(), m.hyper.s_q.to_string());
            meta.insert("n".to_string(), m.norm_exponent.to_string());
            write_embeddings(&dir.join("w.islm"), m.w())?;
            write_vector(&dir.join("item_scale.islm"), m.item_scale())?;
            m.bias.as_deref()
        }
    };
    meta.insert("has_bias".to_string(), bias.is_some().to_string());
    if let Some(b) = bias {
        write_vector(&dir.join("bias.islm"), b)?;
    }
    write_text(&dir.join(MODEL_META), &format_key_values(&meta))
}

pub fn load_model(dir: &Path) -> Result<(TrainedModel, Setup)> {
    let meta_path = dir.join(MODEL_META);
    let meta = parse_key_values(&read_text(&meta_path)?)?;
    let version = meta_get(&meta, "format_version", &meta_path)?;
    if version != FORMAT_VERSION.to_string() {
        return Err(format_err(
            &meta_path,
            format!("unsupported version {version}"),
        ));
    }
    let kind: ModelKind = meta_get(&meta, "model", &meta_path)?
        .parse()
        .map_err(|_| format_err(&meta_path, "unknown model kind"))?;
    let setup: Setup = meta_get(&meta, "setup", &meta_path)?
        .parse()
        .map_err(|_| format_err(&meta_path, "unknown setup"))?;
    let q = read_embeddings(&dir.join("q.islm"), EntityKind::Item)?;
    let bias = if meta_bool(&meta, "has_bias", &meta_path)? {
        Some(read_vector(&dir.join("bias.islm"))?)
    } else {
        None
    };
    let model = match kind {
        ModelKind::Mf => {
            let p = if meta_bool(&meta, "has_p", &meta_path)? {
                Some(read_embeddings(&dir.join("p.islm"), EntityKind::User)?)
            } else {
                None
            };
            let hyper = MfHyper {
                r_p: meta_f64(&meta, "r_p", &meta_path)?,
                r_q: meta_f64(&meta, "r_q", &meta_path)?,
                s_q: meta_f64(&meta, "s_q", &meta_path)?,
            };
            TrainedModel::Mf(MfModel::new(p, q, bias, hyper)?)
        }
        ModelKind::Plrec => {
            let w = read_embeddings(&dir.join("w.islm"), EntityKind::Item)?;
            let scale = read_vector(&dir.join("item_scale.islm"))?;
            let hyper = PlrecHyper {
                r_q: meta_f64(&meta, "r_q", &meta_path)?,
                s_q: meta_f64(&meta, "s_q", &meta_path)?,
            };
            let n = meta_f64(&meta, "n", &meta_path)?;
            TrainedModel::Plrec(PlrecModel::new(w, q, scale, n, bias, hyper)?)
        }
    };
    Ok((model, setup))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn key_values_parse() {
        let m = parse_key_values("# comment\nL = 64\n\nlambda=10\n").unwrap();
        assert_eq!(m["L"], "64");
        assert_eq!(m["lambda"], "10");
        assert!(parse_key_values("a=1\na=2").is_err());
        assert!(parse_key_values("novalue").is_err());
    }

    #[test]
    fn sparse_rejects_bad_magic() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.isxf");
        fs::write(&path, b"NOPE\x01\x00\x00\x00").unwrap();
        assert!(matches!(read_sparse(&path), Err(Error::Format { .. })));
    }

    #[test]
    fn dense_rejects_truncation() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.islm");
        write_dense(&path, &DenseMatrix::identity(3)).unwrap();
        let bytes = fs::read(&path).unwrap();
        fs::write(&path, &bytes[..bytes.len() - 4]).unwrap();
        assert!(matches!(read_dense(&path), Err(Error::Format { .. })));
    }

    #[test]
    fn sparse_round_trip_is_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        let x = InteractionMatrix::from_rows(5, vec![vec![0, 4], vec![], vec![1, 2, 3]]).unwrap();
        let a = dir.path().join("a.isxf");
        let b = dir.path().join("b.isxf");
        write_sparse(&a, &x).unwrap();
        let back = read_sparse(&a).unwrap();
        assert_eq!(back, x);
        write_sparse(&b, &back).unwrap();
        assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
    }
}
