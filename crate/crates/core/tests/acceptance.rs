//! Acceptance gate: one PASS/FAIL line per criterion, nonzero exit on any
//! failure. Runs without the libtest harness so that the counting allocator
//! sees a single extraction at a time.

use std::alloc::{GlobalAlloc, Layout, System};
use std::panic::{self, AssertUnwindSafe};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::{Duration, Instant};

use implicit_slim::dense::{self, lu_solve};
use implicit_slim::eval::{evaluate_scores, ndcg_at_k, recall_at_k};
use implicit_slim::implicit::{implicit_slim, inverse_gram_diag_approx};
use implicit_slim::models::{mf_item_update, mf_user_update, ModelKind};
use implicit_slim::slim::{
    explicit_implicit_slim, laplacian_from_b, ridge_gram, slim_lle_weights, DiagMode,
};
use implicit_slim::sweep::{run_sweep, Param, SweepGrid};
use implicit_slim::synth::{bernoulli_matrix, generate, SynthSpec};
use implicit_slim::{
    data, slim, DenseMatrix, EmbeddingMatrix, EntityKind, ImplicitSlimParams, InteractionMatrix,
    Setup, SplitParams, TrainConfig,
};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Counting;

static CURRENT: AtomicUsize = AtomicUsize::new(0);
static PEAK: AtomicUsize = AtomicUsize::new(0);

unsafe impl GlobalAlloc for Counting {
    unsafe fn alloc(&self, layout: Layout) -> *mut u8 {
        let p = unsafe { System.alloc(layout) };
        if !p.is_null() {
            let now = CURRENT.fetch_add(layout.size(), Ordering::SeqCst) + layout.size();
            PEAK.fetch_max(now, Ordering::SeqCst);
        }
        p
    }

    unsafe fn dealloc(&self, ptr: *mut u8, layout: Layout) {
        unsafe { System.dealloc(ptr, layout) };
        CURRENT.fetch_sub(layout.size(), Ordering::SeqCst);
    }

    unsafe fn realloc(&self, ptr: *mut u8, layout: Layout, new_size: usize) -> *mut u8 {
        let p = unsafe { System.realloc(ptr, layout, new_size) };
        if !p.is_null() {
            if new_size >= layout.size() {
                let grow = new_size - layout.size();
                let now = CURRENT.fetch_add(grow, Ordering::SeqCst) + grow;
                PEAK.fetch_max(now, Ordering::SeqCst);
            } else {
                CURRENT.fetch_sub(layout.size() - new_size, Ordering::SeqCst);
            }
        }
        p
    }
}

#[global_allocator]
static ALLOC: Counting = Counting;

type Check = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn gaussian_items(l: usize, n: usize, seed: u64) -> EmbeddingMatrix {
    EmbeddingMatrix::gaussian(l, n, EntityKind::Item, seed)
}

fn fast_path_equivalence() -> Check {
    let start = Instant::now();
    let params = ImplicitSlimParams {
        lambda: 5.0,
        alpha: 2.0,
        ..ImplicitSlimParams::default()
    };
    let mut worst = 0.0f64;
    for seed in 0..20 {
        let x = bernoulli_matrix(60, 40, 0.15, seed).unwrap();
        let q = gaussian_items(8, 40, 100 + seed);
        let fast = implicit_slim(&x, &q, &q, &params).unwrap();
        let explicit = explicit_implicit_slim(&x, &q, &q, 5.0, 2.0, DiagMode::Approx).unwrap();
        worst = worst.max(fast.matrix().max_abs_diff(explicit.embeddings.matrix()));
    }
    let elapsed = start.elapsed();
    ensure(worst <= 1e-8, || format!("max deviation {worst:e}"))?;
    ensure(elapsed < Duration::from_secs(5), || {
        format!("took {elapsed:?}")
    })?;
    Ok(format!(
        "max deviation {worst:.2e}, {:.2}s",
        elapsed.as_secs_f64()
    ))
}

fn memory_contract() -> Check {
    let (nu, ni, l) = (20_000, 10_000, 128);
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let rows: Vec<Vec<u32>> = (0..nu)
        .map(|_| {
            sample(&mut rng, ni, 50)
                .into_iter()
                .map(|i| i as u32)
                .collect()
        })
        .collect();
    let x = InteractionMatrix::from_rows(ni, rows).unwrap();
    let q = gaussian_items(l, ni, 8);
    let params = ImplicitSlimParams {
        lambda: 100.0,
        alpha: 1.0,
        ..ImplicitSlimParams::default()
    };

    let baseline = CURRENT.load(Ordering::SeqCst);
    PEAK.store(baseline, Ordering::SeqCst);
    let start = Instant::now();
    let v = implicit_slim(&x, &q, &q, &params).unwrap();
    let elapsed = start.elapsed();
    let aux = PEAK.load(Ordering::SeqCst) - baseline;
    drop(v);

    let budget = 10 * l * nu.max(ni) * 8;
    ensure(aux < budget, || {
        format!("peak auxiliary {aux} bytes >= {budget}")
    })?;
    ensure(elapsed < Duration::from_secs(30), || {
        format!("took {elapsed:?}")
    })?;
    Ok(format!(
        "nnz {}, peak auxiliary {:.1} MB of {:.1} MB, {:.2}s",
        x.nnz(),
        aux as f64 / 1e6,
        budget as f64 / 1e6,
        elapsed.as_secs_f64()
    ))
}

fn dense_ease_objective(x: &DenseMatrix, b: &DenseMatrix, lambda: f64) -> f64 {
    let r = x.sub(&x.matmul(b).unwrap()).unwrap();
    r.frobenius_sq() + lambda * b.frobenius_sq()
}

fn ease_correctness() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst_diag = 0.0f64;
    let mut worst_drop = 0.0f64;
    for seed in 0..10 {
        let x = bernoulli_matrix(40, 15, 0.3, 50 + seed).unwrap();
        let lambda = 5.0;
        let b = slim::ease_weights(&x, lambda).unwrap().values;
        for i in 0..b.rows() {
            worst_diag = worst_diag.max(b[(i, i)].abs());
        }
        let xd = x.to_dense();
        let base = dense_ease_objective(&xd, &b, lambda);
        for _ in 0..100 {
            let mut delta =
                DenseMatrix::from_fn(b.rows(), b.cols(), |_, _| rng.random::<f64>() * 2.0 - 1.0);
            for i in 0..b.rows() {
                delta[(i, i)] = 0.0;
            }
            let moved = b.add(&delta.scale(1e-3)).unwrap();
            // Relative slack for rounding in the objective itself.
            worst_drop = worst_drop.max((base - dense_ease_objective(&xd, &moved, lambda)) / base);
        }
    }
    ensure(worst_diag <= 1e-10, || {
        format!("diagonal entry {worst_diag:e}")
    })?;
    ensure(worst_drop <= 1e-12, || {
        format!("perturbation lowered the objective by {worst_drop:e}")
    })?;

    let x = InteractionMatrix::from_rows(2, vec![vec![0, 1], vec![0, 1]]).unwrap();
    let b = slim::ease_weights(&x, 2.0).unwrap().values;
    let expected = DenseMatrix::from_rows(&[vec![0.0, 0.5], vec![0.5, 0.0]]).unwrap();
    let hand = b.max_abs_diff(&expected);
    ensure(hand <= 1e-12, || format!("2x2 case off by {hand:e}"))?;
    Ok(format!(
        "max |diag| {worst_diag:.1e}, 2x2 case off by {hand:.1e}"
    ))
}

fn slim_lle_laplacian() -> Check {
    let x = bernoulli_matrix(50, 20, 0.25, 11).unwrap();
    let b = slim_lle_weights(&x, 10.0).unwrap();
    let sums = b.values.col_sums();
    let sum_err = sums.iter().map(|s| (s - 1.0).abs()).fold(0.0, f64::max);
    let diag = b.values.diag().iter().map(|d| d.abs()).fold(0.0, f64::max);
    ensure(sum_err <= 1e-8, || format!("column sum off by {sum_err:e}"))?;
    ensure(diag <= 1e-8, || format!("diagonal entry {diag:e}"))?;

    let (lap, _) = laplacian_from_b(&b).unwrap();
    let l1 = lap
        .values
        .row_sums()
        .iter()
        .map(|v| v.abs())
        .fold(0.0, f64::max);
    ensure(l1 <= 1e-8, || format!("|L1| = {l1:e}"))?;
    let min_eig = dense::symmetric_eigen(&lap.values)
        .unwrap()
        .values
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min);
    ensure(min_eig >= -1e-8, || {
        format!("smallest eigenvalue {min_eig:e}")
    })?;

    let mut worst = 0.0f64;
    for seed in 0..10 {
        let q = gaussian_items(4, 20, seed).into_matrix();
        let quad = q.matmul(&lap.values).unwrap().matmul_t(&q).unwrap().trace();
        let direct = q.sub(&q.matmul(&b.values).unwrap()).unwrap().frobenius_sq();
        worst = worst.max((quad - direct).abs());
    }
    ensure(worst <= 1e-8, || format!("trace identity off by {worst:e}"))?;
    Ok(format!(
        "|L1| {l1:.1e}, min eigenvalue {min_eig:.1e}, trace gap {worst:.1e}"
    ))
}

fn exact_inverse_diag(x: &InteractionMatrix, lambda: f64) -> Vec<f64> {
    let g = ridge_gram(x, lambda).unwrap();
    lu_solve(&g, &DenseMatrix::identity(g.rows()))
        .unwrap()
        .diag()
}

fn relative_error(approx: &[f64], exact: &[f64]) -> f64 {
    approx
        .iter()
        .zip(exact)
        .map(|(a, e)| ((a - e) / e).abs())
        .fold(0.0, f64::max)
}

fn diagonal_approximation() -> Check {
    // Every user touches one item, so XᵀX is diagonal.
    let rows = (0..30).map(|u| vec![(u % 7) as u32]).collect();
    let x = InteractionMatrix::from_rows(7, rows).unwrap();
    let exact_case = relative_error(
        &inverse_gram_diag_approx(&x, 3.0).unwrap(),
        &exact_inverse_diag(&x, 3.0),
    );
    ensure(exact_case <= 1e-12, || {
        format!("diagonal Gram case off by {exact_case:e}")
    })?;

    let x = bernoulli_matrix(80, 25, 0.2, 21).unwrap();
    let max_nnz = *x.col_counts().iter().max().unwrap();
    let mut lambda = (x.n_items() - 2) as f64 * max_nnz as f64;
    let mut errors = Vec::new();
    for _ in 0..6 {
        errors.push(relative_error(
            &inverse_gram_diag_approx(&x, lambda).unwrap(),
            &exact_inverse_diag(&x, lambda),
        ));
        lambda *= 2.0;
    }
    ensure(errors.windows(2).all(|w| w[1] < w[0]), || {
        format!("errors {errors:?}")
    })?;
    Ok(format!(
        "diagonal case {exact_case:.1e}, errors {:.2e} -> {:.2e}",
        errors[0], errors[5]
    ))
}

/// ‖X − PᵀQ‖² + r_p‖P‖² + r_q‖Q‖², built densely.
fn dense_mf_objective(
    x: &DenseMatrix,
    p: &EmbeddingMatrix,
    q: &EmbeddingMatrix,
    r_p: f64,
    r_q: f64,
) -> f64 {
    let fit = p.matrix().t_matmul(q.matrix()).unwrap();
    x.sub(&fit).unwrap().frobenius_sq()
        + r_p * p.matrix().frobenius_sq()
        + r_q * q.matrix().frobenius_sq()
}

fn als_monotonicity() -> Check {
    let (r_p, r_q) = (0.5, 2.0);
    let mut worst_rise = f64::NEG_INFINITY;
    for seed in 0..5 {
        let x = bernoulli_matrix(120, 60, 0.1, 30 + seed).unwrap();
        let xd = x.to_dense();
        let mut q = gaussian_items(8, 60, seed);
        let mut p = mf_user_update(&x, &q, None, r_p).unwrap();
        let mut prev = dense_mf_objective(&xd, &p, &q, r_p, r_q);
        for step in 0..20 {
            if step % 2 == 0 {
                q = mf_item_update(&x, &p, None, None, r_q, 0.0).unwrap();
            } else {
                p = mf_user_update(&x, &q, None, r_p).unwrap();
            }
            let obj = dense_mf_objective(&xd, &p, &q, r_p, r_q);
            worst_rise = worst_rise.max(obj - prev);
            ensure(obj <= prev + 1e-9, || {
                format!("seed {seed} alternation {step}: {prev} -> {obj}")
            })?;
            prev = obj;
        }
    }
    Ok(format!("largest change {worst_rise:.2e}"))
}

fn downstream_improvement() -> Check {
    let start = Instant::now();
    let mut gains = Vec::new();
    for seed in 0..5 {
        let data = generate(&SynthSpec {
            seed,
            ..SynthSpec::default()
        })
        .map_err(|e| e.to_string())?;
        let split = data::split_strong(
            &data.matrix,
            &SplitParams {
                seed,
                valid_frac: 0.2,
                test_frac: 0.2,
                ..SplitParams::default()
            },
        )
        .map_err(|e| e.to_string())?;
        let base = TrainConfig {
            latent_dim: 64,
            max_iters: 10,
            seed,
            ..TrainConfig::default()
        };
        let vanilla = SweepGrid {
            model: ModelKind::Mf,
            base: base.clone(),
            axes: vec![
                (Param::RP, vec![0.01, 0.03, 0.1, 0.3, 1.0, 3.0, 10.0]),
                (
                    Param::RQ,
                    vec![3.0, 10.0, 30.0, 100.0, 300.0, 1000.0, 3000.0],
                ),
            ],
        };
        let islim = SweepGrid {
            model: ModelKind::Mf,
            base: TrainConfig {
                setup: Setup::IslimInitReg,
                ..base
            },
            axes: vec![
                (Param::RP, vec![0.03, 0.1, 1.0]),
                (Param::RQ, vec![10.0, 100.0]),
                (Param::Lambda, vec![10.0, 100.0]),
                (Param::Alpha, vec![1e-3, 1e-2]),
                (Param::SQ, vec![30.0, 100.0, 300.0]),
            ],
        };
        let (v, _) = run_sweep(&split, &vanilla, &[100]).map_err(|e| e.to_string())?;
        let (i, _) = run_sweep(&split, &islim, &[100]).map_err(|e| e.to_string())?;
        gains.push(i.test.metrics["ndcg@100"] - v.test.metrics["ndcg@100"]);
    }
    let elapsed = start.elapsed();
    let mean = gains.iter().sum::<f64>() / gains.len() as f64;
    let positive = gains.iter().filter(|&&g| g > 0.0).count();
    let shown: Vec<String> = gains.iter().map(|g| format!("{g:+.4}")).collect();
    ensure(mean > 0.0 && positive >= 4, || {
        format!("gains [{}]", shown.join(", "))
    })?;
    ensure(elapsed < Duration::from_secs(300), || {
        format!("took {elapsed:?}")
    })?;
    Ok(format!(
        "NDCG@100 gains [{}], mean {mean:+.4}, {:.0}s",
        shown.join(", "),
        elapsed.as_secs_f64()
    ))
}

fn metric_oracles() -> Check {
    let holdout = InteractionMatrix::from_rows(
        10,
        vec![vec![7], vec![0, 1], vec![5], vec![2, 3, 4, 6], vec![]],
    )
    .unwrap();
    let ranked = vec![
        vec![1, 7, 2],
        vec![0, 1, 2],
        vec![0, 1, 2],
        vec![2, 9, 3],
        vec![0, 1, 2],
    ];
    let recall = recall_at_k(&ranked, &holdout, 3).unwrap();
    let ndcg = ndcg_at_k(&ranked, &holdout, 3).unwrap();
    let want_recall = [Some(1.0), Some(1.0), Some(0.0), Some(2.0 / 3.0), None];
    let want_ndcg = [Some(0.63093), Some(1.0), Some(0.0), Some(0.703918), None];
    for (u, ((r, n), (wr, wn))) in recall
        .iter()
        .zip(&ndcg)
        .zip(want_recall.iter().zip(&want_ndcg))
        .enumerate()
    {
        let close = |a: &Option<f64>, b: &Option<f64>| match (a, b) {
            (Some(a), Some(b)) => (a - b).abs() <= 1e-6,
            (None, None) => true,
            _ => false,
        };
        ensure(close(r, wr) && close(n, wn), || {
            format!("user {u}: recall {r:?} ndcg {n:?}")
        })?;
    }

    // Random scores against the hypergeometric hit distribution.
    let (nu, ni, k) = (1000, 200, 100);
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut fold_rows = Vec::with_capacity(nu);
    let mut hold_rows = Vec::with_capacity(nu);
    for _ in 0..nu {
        let degree = rng.random_range(2..40);
        let items: Vec<u32> = sample(&mut rng, ni, degree)
            .into_iter()
            .map(|i| i as u32)
            .collect();
        let cut = degree / 2;
        fold_rows.push(items[..cut].to_vec());
        hold_rows.push(items[cut..].to_vec());
    }
    let fold = InteractionMatrix::from_rows(ni, fold_rows).unwrap();
    let hold = InteractionMatrix::from_rows(ni, hold_rows).unwrap();
    let scores = DenseMatrix::from_fn(nu, ni, |_, _| rng.random());
    let report = evaluate_scores(&scores, &fold, &hold, &[k], true).unwrap();

    let (mut mean, mut var) = (0.0, 0.0);
    for u in 0..nu {
        let n_avail = (ni - fold.row_nnz(u)) as f64;
        let h = hold.row_nnz(u) as f64;
        let drawn = (k as f64).min(n_avail);
        let p = h / n_avail;
        let denom = (k as f64).min(h);
        mean += drawn * p / denom;
        var += drawn * p * (1.0 - p) * (n_avail - drawn) / (n_avail - 1.0) / (denom * denom);
    }
    mean /= nu as f64;
    let sigma = var.sqrt() / nu as f64;
    let observed = report.metrics["recall@100"];
    let z = (observed - mean) / sigma;
    ensure(z.abs() <= 3.0, || {
        format!("random recall {observed} vs {mean} ({z:+.2} sigma)")
    })?;
    Ok(format!(
        "fixture exact, random recall {observed:.4} vs {mean:.4} ({z:+.2} sigma)"
    ))
}

fn main() {
    let criteria: [(&str, fn() -> Check); 8] = [
        ("fast-path equivalence", fast_path_equivalence),
        ("memory contract", memory_contract),
        ("EASE correctness", ease_correctness),
        (
            "SLIM-LLE feasibility and Laplacian identity",
            slim_lle_laplacian,
        ),
        ("diagonal approximation", diagonal_approximation),
        ("ALS monotonicity", als_monotonicity),
        ("downstream improvement", downstream_improvement),
        ("metric oracles", metric_oracles),
    ];
    let only: Vec<usize> = std::env::args()
        .skip(1)
        .filter_map(|a| a.parse().ok())
        .collect();
    panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    for (idx, (name, check)) in criteria.iter().enumerate() {
        let n = idx + 1;
        if !only.is_empty() && !only.contains(&n) {
            continue;
        }
        let outcome = match panic::catch_unwind(AssertUnwindSafe(check)) {
            Ok(r) => r,
            Err(e) => Err(e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into())),
        };
        match outcome {
            Ok(detail) => println!("criterion {n} ({name}): PASS - {detail}"),
            Err(detail) => {
                failed += 1;
                println!("criterion {n} ({name}): FAIL - {detail}");
            }
        }
    }
    if failed > 0 {
        std::process::exit(1);
    }
}
