//! Acceptance suite. Each test checks one criterion at its stated tolerance
//! and prints a single `criterion N: PASS|FAIL` line to stderr.
//!
//! Training runs go through the `duallex` binary and are shared between the
//! criteria that read them; run artifacts are kept under the target tmp dir.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::OnceLock;

use duallex::adversarial::{adv_backward, adv_losses, Discriminator, DiscriminatorConfig};
use duallex::retrieval::CslsIndex;
use duallex::selection::{criterion_sa, SelectionConfig};
use duallex::trainer::{cycle_backward, cycle_loss};
use duallex::{
    generate, precision_at_1, procrustes_solve, BilingualLexicon, EmbeddingSpace, LinearMapping, Normalization,
    TrainConfig, TrainRun,
};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

const N: &str = "2000";
const D: &str = "50";
const SEEDS: [u64; 5] = [1, 2, 3, 4, 5];

/// Training configuration shared by every benchmark run. Hyperparameters not
/// listed keep their defaults.
const TRAIN_CONFIG: &str = "\
epochs = 10
iterations_per_epoch = 1000
disc_hidden_dim = 128
selection_eval_vocab = 2000
";

fn report(criterion: u32, pass: bool, detail: &str) {
    let verdict = if pass { "PASS" } else { "FAIL" };
    let mut err = std::io::stderr().lock();
    writeln!(err, "criterion {criterion}: {verdict} ({detail})").unwrap();
    assert!(pass, "criterion {criterion} failed: {detail}");
}

fn duallex(args: &[&str], cwd: Option<&Path>) {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_duallex"));
    cmd.args(args).env("RUST_LOG", "warn");
    if let Some(dir) = cwd {
        cmd.current_dir(dir);
    }
    let out = cmd.output().expect("binary runs");
    assert!(
        out.status.success(),
        "duallex {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn work_dir(name: &str) -> PathBuf {
    let dir = Path::new(env!("CARGO_TARGET_TMPDIR")).join("acceptance").join(name);
    if dir.exists() {
        fs::remove_dir_all(&dir).unwrap();
    }
    fs::create_dir_all(&dir).unwrap();
    dir
}

fn load_space(path: &Path) -> EmbeddingSpace {
    EmbeddingSpace::load_text(path, None).unwrap().normalize(Normalization::Unit).unwrap()
}

fn parse_report(path: &Path) -> (f64, f64, f64) {
    let text = fs::read_to_string(path).unwrap();
    let get = |key: &str| -> f64 {
        text.lines()
            .find_map(|l| l.strip_prefix(key).and_then(|r| r.strip_prefix('=')))
            .unwrap()
            .parse()
            .unwrap()
    };
    (get("p_at_1_forward"), get("p_at_1_backward"), get("inconsistency_rate"))
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn std_dev(v: &[f64]) -> f64 {
    let m = mean(v);
    (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / v.len() as f64).sqrt()
}

fn fmt_list(v: &[f64]) -> String {
    let items: Vec<String> = v.iter().map(|x| format!("{x:.3}")).collect();
    format!("[{}]", items.join(", "))
}

struct SeedRun {
    pair: PathBuf,
    run: PathBuf,
    p_forward: f64,
    p_backward: f64,
    inconsistency: f64,
    /// Forward P@1 of the maps saved after each epoch.
    epoch_p_forward: Vec<f64>,
}

fn evaluate(pair: &Path, checkpoint: &Path, report: &Path) -> (f64, f64, f64) {
    duallex(
        &[
            "evaluate",
            "--src",
            s(&pair.join("src.vec")),
            "--tgt",
            s(&pair.join("tgt.vec")),
            "--checkpoint",
            s(checkpoint),
            "--dict",
            s(&pair.join("gold.dict")),
            "--both-directions",
            "--report",
            s(report),
        ],
        None,
    );
    parse_report(report)
}

/// synth → train → evaluate for one seed.
fn pipeline(root: &Path, sigma: &str, seed: u64, cycle_weight: &str) -> SeedRun {
    let seed_s = seed.to_string();
    let pair = root.join(format!("pair{seed}"));
    if !pair.join("gold.dict").exists() {
        duallex(&["synth", "--n", N, "--d", D, "--sigma", sigma, "--seed", &seed_s, "--out", s(&pair)], None);
    }
    let cfg = root.join("train.cfg");
    fs::write(&cfg, TRAIN_CONFIG).unwrap();
    let run = root.join(format!("run{seed}_cw{cycle_weight}"));
    duallex(
        &[
            "train",
            "--src",
            s(&pair.join("src.vec")),
            "--tgt",
            s(&pair.join("tgt.vec")),
            "--out",
            s(&run),
            "--config",
            s(&cfg),
            "--seed",
            &seed_s,
            "--cycle-weight",
            cycle_weight,
            "--keep-epochs",
        ],
        None,
    );
    let (p_forward, p_backward, inconsistency) = evaluate(&pair, &run, &run.join("report.txt"));

    let src = load_space(&pair.join("src.vec"));
    let tgt = load_space(&pair.join("tgt.vec"));
    let gold = BilingualLexicon::load(pair.join("gold.dict")).unwrap();
    let mut epoch_p_forward = Vec::new();
    for e in 0.. {
        let path = run.join("epochs").join(format!("{e:03}_f.txt"));
        if !path.exists() {
            break;
        }
        let f = LinearMapping::load_text(&path).unwrap();
        epoch_p_forward.push(precision_at_1(&f, &src, &tgt, &gold, 10).unwrap().p_at_1);
    }
    SeedRun {
        pair,
        run,
        p_forward,
        p_backward,
        inconsistency,
        epoch_p_forward,
    }
}

/// The σ = 0.01 benchmark with the full objective.
fn clean_runs() -> &'static [SeedRun] {
    static RUNS: OnceLock<Vec<SeedRun>> = OnceLock::new();
    RUNS.get_or_init(|| {
        let root = work_dir("sigma_0.01");
        SEEDS.iter().map(|&seed| pipeline(&root, "0.01", seed, "1")).collect()
    })
}

/// The σ = 0.05 benchmark, with and without the cycle terms.
struct NoisyRuns {
    joint: Vec<SeedRun>,
    baseline: Vec<SeedRun>,
}

fn noisy_runs() -> &'static NoisyRuns {
    static RUNS: OnceLock<NoisyRuns> = OnceLock::new();
    RUNS.get_or_init(|| {
        let root = work_dir("sigma_0.05");
        let joint = SEEDS.iter().map(|&seed| pipeline(&root, "0.05", seed, "1")).collect();
        let baseline = SEEDS.iter().map(|&seed| pipeline(&root, "0.05", seed, "0")).collect();
        NoisyRuns { joint, baseline }
    })
}

// Criterion 1 ---------------------------------------------------------------

const FD_EPS: f64 = 1e-5;

fn gaussian(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || StandardNormal.sample(rng))
}

fn central_diff(x: &[f64], mut loss: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut v = x.to_vec();
    (0..v.len())
        .map(|i| {
            let orig = v[i];
            v[i] = orig + FD_EPS;
            let up = loss(&v);
            v[i] = orig - FD_EPS;
            let down = loss(&v);
            v[i] = orig;
            (up - down) / (2.0 * FD_EPS)
        })
        .collect()
}

fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    norm(&diff) / norm(a).max(norm(b)).max(1e-12)
}

fn to_vec(m: &Array2<f64>) -> Vec<f64> {
    m.iter().copied().collect()
}

fn square(d: usize, v: &[f64]) -> LinearMapping {
    LinearMapping::new(Array2::from_shape_vec((d, d), v.to_vec()).unwrap()).unwrap()
}

/// Worst relative error over every gradient of one random instance.
fn gradient_instance(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = rng.random_range(2..=8);
    let h = rng.random_range(2..=16);
    let smoothing = [0.0, 0.1, 0.2][seed as usize % 3];
    let cfg = DiscriminatorConfig {
        hidden_dim: h,
        input_dropout: 0.0,
        hidden_dropout: 0.0,
        smoothing,
        ..Default::default()
    };
    let mut disc = Discriminator::new(d, cfg, &mut rng).unwrap();
    disc.w1 *= 2.0;
    disc.w2 *= 2.0;
    disc.w3 *= 2.0;
    let real = gaussian(6, d, &mut rng);
    let src = gaussian(5, d, &mut rng);
    let tgt = gaussian(4, d, &mut rng);
    let fw = gaussian(d, d, &mut rng);
    let gw = gaussian(d, d, &mut rng);
    let f = LinearMapping::new(fw.clone()).unwrap();
    let g = LinearMapping::new(gw.clone()).unwrap();
    let mut worst: f64 = 0.0;

    // Discriminator role: loss against its first-layer weights and biases.
    let mapped = f.apply(src.view()).unwrap();
    let (grads, dmapped) = adv_backward(&disc, real.view(), mapped.view(), smoothing).unwrap();
    let num = central_diff(&to_vec(&disc.w1), |v| {
        let mut dd = disc.clone();
        dd.w1 = Array2::from_shape_vec(disc.w1.raw_dim(), v.to_vec()).unwrap();
        adv_losses(&dd, real.view(), mapped.view(), smoothing, None).unwrap().disc_loss
    });
    worst = worst.max(rel_err(&to_vec(&grads.w1), &num));
    let num = central_diff(&disc.w3.to_vec(), |v| {
        let mut dd = disc.clone();
        dd.w3 = ndarray::Array1::from(v.to_vec());
        adv_losses(&dd, real.view(), mapped.view(), smoothing, None).unwrap().disc_loss
    });
    worst = worst.max(rel_err(&grads.w3.to_vec(), &num));

    // Generator role, through both mappings: F(X) and G(Y).
    let analytic = src.t().dot(&dmapped);
    let num = central_diff(&to_vec(&fw), |v| {
        let m = square(d, v).apply(src.view()).unwrap();
        adv_losses(&disc, real.view(), m.view(), smoothing, None).unwrap().gen_loss
    });
    worst = worst.max(rel_err(&to_vec(&analytic), &num));
    let gy = g.apply(tgt.view()).unwrap();
    let (_, dgy) = adv_backward(&disc, real.view(), gy.view(), smoothing).unwrap();
    let analytic = tgt.t().dot(&dgy);
    let num = central_diff(&to_vec(&gw), |v| {
        let m = square(d, v).apply(tgt.view()).unwrap();
        adv_losses(&disc, real.view(), m.view(), smoothing, None).unwrap().gen_loss
    });
    worst = worst.max(rel_err(&to_vec(&analytic), &num));

    // Cycle terms, X side (F then G) and Y side (G then F).
    let cx = cycle_backward(&f, &g, src.view()).unwrap();
    let cy = cycle_backward(&g, &f, tgt.view()).unwrap();
    let checks = [
        (&cx.grad_first, central_diff(&to_vec(&fw), |v| cycle_loss(&square(d, v), &g, src.view()).unwrap())),
        (&cx.grad_second, central_diff(&to_vec(&gw), |v| cycle_loss(&f, &square(d, v), src.view()).unwrap())),
        (&cy.grad_first, central_diff(&to_vec(&gw), |v| cycle_loss(&square(d, v), &f, tgt.view()).unwrap())),
        (&cy.grad_second, central_diff(&to_vec(&fw), |v| cycle_loss(&g, &square(d, v), tgt.view()).unwrap())),
    ];
    for (analytic, num) in checks {
        worst = worst.max(rel_err(&to_vec(analytic), &num));
    }
    worst
}

#[test]
fn criterion_01_gradient_correctness() {
    let worst = (0..24).map(gradient_instance).fold(0.0, f64::max);
    report(1, worst < 1e-4, &format!("24 instances, worst relative error {worst:.2e}"));
}

// Criterion 2 ---------------------------------------------------------------

fn csls_instance(seed: u64) -> (f64, bool) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ns = rng.random_range(1..=50);
    let nt = rng.random_range(1..=50);
    let d = rng.random_range(2..=10);
    let k = rng.random_range(0..=12);
    let unit = |m: Array2<f64>| {
        let mut m = m;
        for mut r in m.rows_mut() {
            let n = r.dot(&r).sqrt();
            r /= n;
        }
        m
    };
    let a = unit(gaussian(ns, d, &mut rng));
    let b = unit(gaussian(nt, d, &mut rng));
    let cos = a.dot(&b.t());
    let top_mean = |mut v: Vec<f64>| {
        v.sort_by(|x, y| y.partial_cmp(x).unwrap());
        let k = k.min(v.len());
        if k == 0 {
            0.0
        } else {
            v[..k].iter().sum::<f64>() / k as f64
        }
    };
    let rs: Vec<f64> = (0..ns).map(|i| top_mean(cos.row(i).to_vec())).collect();
    let rt: Vec<f64> = (0..nt).map(|j| top_mean(cos.column(j).to_vec())).collect();
    let score = |i: usize, j: usize| 2.0 * cos[[i, j]] - rs[i] - rt[j];
    let argmax_t = |i: usize| (0..nt).fold(0, |b, j| if score(i, j) > score(i, b) { j } else { b });
    let argmax_s = |j: usize| (0..ns).fold(0, |b, i| if score(i, j) > score(b, j) { i } else { b });

    let idx = CslsIndex::build(a.view(), b.view(), k).unwrap();
    let mut worst: f64 = 0.0;
    for i in 0..ns {
        worst = worst.max((idx.r_source()[i] - rs[i]).abs());
        for j in 0..nt {
            worst = worst.max((idx.score(i, j) - score(i, j)).abs());
        }
    }
    for j in 0..nt {
        worst = worst.max((idx.r_target()[j] - rt[j]).abs());
    }
    let ids: Vec<usize> = (0..ns).collect();
    let mut same = idx.translate(&ids).unwrap() == ids.iter().map(|&i| argmax_t(i)).collect::<Vec<_>>();
    let mutual: Vec<(usize, usize)> = (0..ns)
        .filter_map(|i| {
            let j = argmax_t(i);
            (argmax_s(j) == i).then_some((i, j))
        })
        .collect();
    same &= idx.mutual_dictionary(50) == mutual;
    (worst, same)
}

#[test]
fn criterion_02_csls_oracle_equivalence() {
    let results: Vec<(f64, bool)> = (0..60).map(csls_instance).collect();
    let worst = results.iter().map(|r| r.0).fold(0.0, f64::max);
    let agree = results.iter().all(|r| r.1);
    report(
        2,
        worst < 1e-10 && agree,
        &format!("60 instances up to 50x50, worst score diff {worst:.2e}, argmax and mutual pairs identical: {agree}"),
    );
}

// Criterion 3 ---------------------------------------------------------------

#[test]
fn criterion_03_procrustes_recovery() {
    let mut worst_err: f64 = 0.0;
    let mut worst_orth: f64 = 0.0;
    for (seed, n, d) in [(1, 2000, 50), (2, 1000, 30), (3, 200, 10), (4, 64, 16)] {
        let p = generate(n, d, 0.0, seed).unwrap();
        let ids: Vec<usize> = (0..n).collect();
        let w = procrustes_solve(p.source.rows(&ids).view(), p.target.rows(&p.permutation).view()).unwrap();
        let diff = &w.weights() - &p.rotation.weights();
        worst_err = worst_err.max(diff.iter().map(|v| v * v).sum::<f64>().sqrt());
        worst_orth = worst_orth.max(w.orthogonality_defect());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for _ in 0..20 {
        let a = gaussian(30, 12, &mut rng);
        let b = gaussian(30, 12, &mut rng);
        worst_orth = worst_orth.max(procrustes_solve(a.view(), b.view()).unwrap().orthogonality_defect());
    }
    report(
        3,
        worst_err < 1e-6 && worst_orth < 1e-8,
        &format!("max ‖W − Q‖_F {worst_err:.2e}, max ‖WᵀW − I‖_F {worst_orth:.2e}"),
    );
}

// Criterion 4 ---------------------------------------------------------------

#[test]
fn criterion_04_end_to_end_alignment() {
    let runs = clean_runs();
    let fwd: Vec<f64> = runs.iter().map(|r| r.p_forward).collect();
    let bwd: Vec<f64> = runs.iter().map(|r| r.p_backward).collect();
    let ok = runs.iter().filter(|r| r.p_forward >= 0.95 && r.p_backward >= 0.95).count();
    report(
        4,
        ok >= 4,
        &format!("{ok}/5 seeds with both P@1 >= 0.95; forward {}, backward {}", fmt_list(&fwd), fmt_list(&bwd)),
    );
}

// Criterion 5 ---------------------------------------------------------------

#[test]
fn criterion_05_dual_learning_effect() {
    let runs = noisy_runs();
    let inc = |v: &[SeedRun]| mean(&v.iter().map(|r| r.inconsistency).collect::<Vec<_>>());
    let p1 = |v: &[SeedRun]| mean(&v.iter().map(|r| r.p_forward).collect::<Vec<_>>());
    let (inc_j, inc_b) = (inc(&runs.joint), inc(&runs.baseline));
    let (p_j, p_b) = (p1(&runs.joint), p1(&runs.baseline));
    report(
        5,
        inc_j < inc_b && p_j >= p_b - 0.01,
        &format!("mean inconsistency {inc_j:.4} (w=1) vs {inc_b:.4} (w=0); mean P@1 {p_j:.4} vs {p_b:.4}"),
    );
}

// Criterion 6 ---------------------------------------------------------------

#[test]
fn criterion_06_stability() {
    let runs = noisy_runs();
    let joint: Vec<f64> = runs.joint.iter().map(|r| r.p_forward).collect();
    let base: Vec<f64> = runs.baseline.iter().map(|r| r.p_forward).collect();
    let (sj, sb) = (std_dev(&joint), std_dev(&base));
    report(
        6,
        sj <= sb,
        &format!("std of P@1 {sj:.4} (w=1) vs {sb:.4} (w=0); w=1 {}, w=0 {}", fmt_list(&joint), fmt_list(&base)),
    );
}

// Criterion 7 ---------------------------------------------------------------

#[test]
fn criterion_07_baseline_ablation_identity() {
    let p = generate(2000, 50, 0.05, 1).unwrap();
    let mut cfg = TrainConfig {
        epochs: 3,
        iterations_per_epoch: 200,
        cycle_weight: 0.0,
        seed: 1,
        ..Default::default()
    };
    cfg.discriminator.hidden_dim = 128;
    cfg.selection.eval_vocab = 2000;
    let mut joint = TrainRun::new(cfg, 50).unwrap();
    let mut base = TrainRun::new(cfg, 50).unwrap();
    let mut identical = true;
    for _ in 0..cfg.epochs {
        let a = joint.train_epoch(&p.source, &p.target).unwrap();
        let b = base.train_epoch_baseline(&p.source, &p.target).unwrap();
        identical &= a.s_a.to_bits() == b.s_a.to_bits() && a.losses.total.to_bits() == b.losses.total.to_bits();
        identical &= joint.f_map == base.f_map && joint.g_map == base.g_map;
        identical &= joint.d_x == base.d_x && joint.d_y == base.d_y;
    }
    identical &= joint.best == base.best;
    report(7, identical, "3 epochs x 200 iterations at d=50, maps, discriminators and scores compared bitwise");
}

// Criterion 8 ---------------------------------------------------------------

#[test]
fn criterion_08_selection_validity() {
    let runs = clean_runs();
    let mut gaps = Vec::new();
    for r in runs {
        let best = r.epoch_p_forward.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        gaps.push(best - r.p_forward);
    }
    let within = gaps.iter().all(|&g| g <= 0.05);

    let r = &runs[0];
    let src = load_space(&r.pair.join("src.vec"));
    let tgt = load_space(&r.pair.join("tgt.vec"));
    let (f, g) = duallex::trainer::load_mappings(&r.run).unwrap();
    let mut cfg = SelectionConfig {
        lambda: 1.0,
        eval_vocab: 2000,
        ..Default::default()
    };
    let one = criterion_sa(&f, &g, &src, &tgt, &cfg).unwrap();
    cfg.lambda = 0.0;
    let zero = criterion_sa(&f, &g, &src, &tgt, &cfg).unwrap();
    let lambda_gap = (one.combined - one.forward).abs().max((zero.combined - zero.backward).abs());
    report(
        8,
        within && lambda_gap <= 1e-12,
        &format!("best-minus-selected P@1 per seed {}, lambda extremes gap {lambda_gap:.1e}", fmt_list(&gaps)),
    );
}

// Criterion 9 ---------------------------------------------------------------

#[test]
fn criterion_09_refinement_gain() {
    let runs = noisy_runs();
    let mut before = Vec::new();
    let mut after = Vec::new();
    for r in &runs.joint {
        let out = r.run.join("refined");
        duallex(
            &[
                "refine",
                "--src",
                s(&r.pair.join("src.vec")),
                "--tgt",
                s(&r.pair.join("tgt.vec")),
                "--checkpoint",
                s(&r.run),
                "--out",
                s(&out),
            ],
            None,
        );
        let (p, _, _) = evaluate(&r.pair, &out, &out.join("report.txt"));
        before.push(r.p_forward);
        after.push(p);
    }
    let gains = before.iter().zip(&after).filter(|(b, a)| a > b).count();
    report(
        9,
        mean(&after) >= mean(&before) && gains >= 3,
        &format!("P@1 before {}, after {}, {gains}/5 strict gains", fmt_list(&before), fmt_list(&after)),
    );
}

// Criterion 10 --------------------------------------------------------------

#[test]
fn criterion_10_determinism() {
    let root = work_dir("determinism");
    fs::write(root.join("train.cfg"), "epochs = 2\niterations_per_epoch = 100\ndisc_hidden_dim = 32\n").unwrap();
    let steps: [&[&str]; 4] = [
        &["synth", "--n", "400", "--d", "16", "--sigma", "0.05", "--seed", "3", "--out", "pair"],
        &[
            "train", "--src", "pair/src.vec", "--tgt", "pair/tgt.vec", "--out", "run", "--config", "../train.cfg",
            "--seed", "3", "--keep-epochs",
        ],
        &["refine", "--src", "pair/src.vec", "--tgt", "pair/tgt.vec", "--checkpoint", "run", "--out", "refined"],
        &[
            "evaluate", "--src", "pair/src.vec", "--tgt", "pair/tgt.vec", "--checkpoint", "refined", "--dict",
            "pair/gold.dict", "--both-directions", "--report", "report.txt",
        ],
    ];
    let mut trees = Vec::new();
    for rep in 0..2 {
        let dir = root.join(format!("rep{rep}"));
        fs::create_dir_all(&dir).unwrap();
        for args in steps {
            duallex(args, Some(&dir));
        }
        trees.push(snapshot(&dir));
    }
    let same = trees[0] == trees[1];
    report(10, same, &format!("{} output files compared byte for byte across two invocations", trees[0].len()));
}

fn snapshot(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in fs::read_dir(&d).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                out.push((path.strip_prefix(dir).unwrap().to_path_buf(), fs::read(&path).unwrap()));
            }
        }
    }
    out.sort();
    out
}
