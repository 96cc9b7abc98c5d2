//! Acceptance suite. Runs every criterion and prints one PASS/FAIL line each;
//! exits nonzero if any criterion fails.

mod common;

use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use polycascade::cli::config::RunConfig;
use polycascade::cli::gradcheck::random_problem;
use polycascade::cli::{build_model, load_datasets};
use polycascade::data::{synth_classification, synth_regression, Dataset};
use polycascade::numerics::pairwise_sq_dist;
use polycascade::package::{kernel_from_theta, kernel_map, theta_map};
use polycascade::trainer::{
    fit, omega, qp_oracle, train_batch_replicated, train_batch_single, BatchOptions, Convention,
    Model, OutputMode, TrainConfig,
};
use polycascade::{
    init_cascade, CascadeState, InitOptions, KernelConstants, LayerSpec, Matrix, PackageState,
    ReplicatedCascade,
};

type Outcome = Result<String, String>;

fn random(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Matrix {
    Matrix::from_fn(r, c, |_, _| rng.random_range(-1.0..1.0))
}

fn bits(m: &Matrix) -> Vec<u64> {
    m.as_slice().iter().map(|v| v.to_bits()).collect()
}

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn cascade(seed: u64, widths: &[usize], k: usize, sigma2: f64) -> CascadeState {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sample = random(&mut rng, 3 * k, widths[0]);
    let specs: Vec<LayerSpec> = widths
        .windows(2)
        .map(|w| LayerSpec { n_in: w[0], n_out: w[1], k })
        .collect();
    let opts = InitOptions { seed, sigma2: vec![sigma2], ..InitOptions::default() };
    init_cascade(&specs, &sample, KernelConstants::default(), &opts).unwrap()
}

fn mse(pred: &Matrix, target: &Matrix) -> f64 {
    pred.sub(target).unwrap().sum_squares() / (pred.rows() * pred.cols()) as f64
}

fn kernel_formulas() -> Outcome {
    let k = KernelConstants::default();
    let e10 = 10f64.exp();
    let m = Matrix::from_rows(&[[0.0, 1.0, e10]]).unwrap();
    let km = kernel_map(&m, &k).unwrap();
    let th = theta_map(&m, &k).unwrap();
    // ln(e^10) may land one ulp off 10, which e^10 amplifies to ~4e-12.
    let anchors = km[(0, 0)] == 1000.0
        && km[(0, 1)] == 990.0
        && (km[(0, 2)] - 1000.0).abs() <= 1e-15 * e10 * 1000.0
        && th[(0, 1)] == -9.0
        && (th[(0, 2)] - 1.0).abs() < 1e-14;

    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let x = random(&mut rng, 12, 5).scale(10.0);
        let c = random(&mut rng, 9, 5).scale(10.0);
        let d = pairwise_sq_dist(&x, &c).unwrap();
        let direct = kernel_map(&d, &k).unwrap();
        let via = kernel_from_theta(&d, &theta_map(&d, &k).unwrap(), &k).unwrap();
        worst = worst.max(direct.rel_diff(&via));
    }
    check(
        anchors && worst <= 1e-12,
        format!("anchors {} (K(e^10) = {}), theta path rel diff {worst:.2e}", if anchors { "ok" } else { "WRONG" }, km[(0, 2)]),
    )
}

/// `k` points in `[−10, 10]^n`, no two closer than 0.3 of the grid spacing
/// `20 / k^(1/n)`.
fn separated_points(rng: &mut ChaCha8Rng, k: usize, n: usize) -> Matrix {
    let min_dist = 0.3 * 20.0 / (k as f64).powf(1.0 / n as f64);
    let mut pts: Vec<Vec<f64>> = Vec::with_capacity(k);
    while pts.len() < k {
        let p: Vec<f64> = (0..n).map(|_| rng.random_range(-10.0..10.0)).collect();
        let d2 = |q: &Vec<f64>| q.iter().zip(&p).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
        if pts.iter().all(|q| d2(q) >= min_dist * min_dist) {
            pts.push(p);
        }
    }
    Matrix::from_rows(&pts).unwrap()
}

fn interpolation_identity() -> Outcome {
    let k = KernelConstants::default();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst: f64 = 0.0;
    for _ in 0..50 {
        let kp = rng.random_range(1..=64);
        let n_in = rng.random_range(1..=8);
        let n_out = rng.random_range(1..=8);
        let c = separated_points(&mut rng, kp, n_in);
        let y = random(&mut rng, kp, n_out);
        let pkg = PackageState::new(c.clone(), y.clone(), 0.0, &k).map_err(|e| e.to_string())?;
        let out = pkg.evaluate(&c, &k).map_err(|e| e.to_string())?;
        worst = worst.max(out.sub(&y).unwrap().max_abs() / y.max_abs());
    }
    check(worst <= 1e-9, format!("50 packages, worst relative error {worst:.2e}"))
}

fn gradient_suite() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst: f64 = 0.0;
    for case in 0..20 {
        let q = rng.random_range(1..=4);
        let widths: Vec<usize> = (0..=q).map(|_| rng.random_range(1..=6)).collect();
        let k = rng.random_range(2..=10);
        let r = rng.random_range(1..=8);
        let (cas, x) = random_problem(&widths, k, r, 100 + case, 1e-3).map_err(|e| e.to_string())?;
        worst = worst.max(common::gradient_error(&cas, &x));
    }
    check(
        worst < 1e-5,
        format!("20 cascades against double-double central differences, worst scaled error {worst:.2e}"),
    )
}

fn omega_triple_sum(h: &Matrix, g: &Matrix) -> Matrix {
    Matrix::from_fn(h.rows(), h.rows(), |i, j| {
        let mut acc = 0.0;
        for p in 0..h.cols() {
            for t in 0..g.cols() {
                acc += h[(i, p)] * h[(j, p)] * g[(i, t)] * g[(j, t)];
            }
        }
        acc
    })
}

fn rearrangement_identity() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let r = rng.random_range(1..=12);
        let (k, n) = (rng.random_range(1..=15), rng.random_range(1..=5));
        let h = random(&mut rng, r, k);
        let g = random(&mut rng, r, n);
        let fast = omega(&h, &g).map_err(|e| e.to_string())?;
        let slow = omega_triple_sum(&h, &g);
        worst = worst.max(fast.sub(&slow).unwrap().max_abs() / slow.max_abs().max(1.0));
    }
    check(worst <= 1e-10, format!("20 instances, worst difference {worst:.2e}"))
}

fn qp_equivalence() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst: f64 = 0.0;
    let mut max_p = 0;
    for case in 0..20 {
        let q = rng.random_range(1..=3);
        let mut widths = vec![rng.random_range(1..=3)];
        widths.extend((1..q).map(|_| rng.random_range(1..=4)));
        widths.push(1);
        let k = rng.random_range(3..=10);
        let r = rng.random_range(1..=10);
        let alpha = 10f64.powf(rng.random_range(-2.0..2.0));
        let cas = cascade(200 + case, &widths, k, 1e-3);
        let p: usize = cas.layers().iter().map(|l| l.k() * l.n_out()).sum();
        assert!(p <= 200);
        max_p = max_p.max(p);
        let x = random(&mut rng, r, widths[0]);
        let t = random(&mut rng, r, 1);
        let trace = cas.forward(&x).unwrap();
        let grads = cas.backward(&trace, &Matrix::ones(r, 1)).unwrap();
        let dl = t.sub(&trace.output).unwrap();
        let oracle = qp_oracle(&trace, &grads, &dl, alpha).map_err(|e| e.to_string())?;
        let mut trained = cas.clone();
        let upd = train_batch_single(&mut trained, &x, &t, &BatchOptions::new(alpha)).map_err(|e| e.to_string())?;
        for (a, b) in upd.delta_y.iter().zip(&oracle) {
            worst = worst.max(a.sub(b).unwrap().max_abs() / b.max_abs().max(1e-300));
        }
    }
    check(worst <= 1e-8, format!("20 cascades (P up to {max_p}), worst relative difference {worst:.2e}"))
}

fn fixed_point_and_pairing() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut cas = cascade(60, &[3, 4, 2, 1], 6, 1e-3);
    let before = cas.clone();
    let x = random(&mut rng, 7, 3);
    let target = cas.predict(&x).unwrap();
    let upd = train_batch_single(&mut cas, &x, &target, &BatchOptions::new(2.0)).map_err(|e| e.to_string())?;
    let noop = upd.delta_y.iter().all(Matrix::is_zero)
        && cas.layers().iter().zip(before.layers()).all(|(a, b)| bits(a.y()) == bits(b.y()));

    let t = random(&mut rng, 7, 1);
    let (mut a, mut b) = (before.clone(), before.clone());
    let ua = train_batch_single(&mut a, &x, &t, &BatchOptions::new(2.0)).map_err(|e| e.to_string())?;
    let ub = train_batch_single(&mut b, &x, &t, &BatchOptions::new(2.0).with_convention(Convention::Dropped))
        .map_err(|e| e.to_string())?;
    let paired = ua.delta_y.iter().zip(&ub.delta_y).all(|(p, q)| bits(p) == bits(q))
        && ua.delta_y.iter().any(|d| !d.is_zero());
    check(noop && paired, format!("zero-residual no-op {noop}, conventions bitwise equal {paired}"))
}

fn toy_regression() -> Outcome {
    let start = Instant::now();
    let train = synth_regression("sine", 1280, 7, 0.0).map_err(|e| e.to_string())?;
    let test = synth_regression("sine", 500, 8, 0.0).map_err(|e| e.to_string())?;
    let specs = [
        LayerSpec { n_in: 1, n_out: 8, k: 16 },
        LayerSpec { n_in: 8, n_out: 8, k: 16 },
        LayerSpec { n_in: 8, n_out: 1, k: 16 },
    ];
    let opts = InitOptions { seed: 7, sigma2: vec![1e-3], ..InitOptions::default() };
    let cas = init_cascade(&specs, &train.inputs, KernelConstants::default(), &opts).map_err(|e| e.to_string())?;
    let mut model = Model::Cascade(cas);
    let cfg = TrainConfig { alpha: 1.0, batch_size: 64, epochs: 10, seed: 7, ..TrainConfig::default() };
    fit(&mut model, &train, &cfg, None).into_result().map_err(|e| e.to_string())?;
    let rmse = mse(&model.predict(&test.inputs).unwrap(), &test.targets).sqrt();
    let secs = start.elapsed().as_secs_f64();
    check(rmse < 0.05, format!("held-out RMSE {rmse:.4} after 200 batches (alpha 1) in {secs:.1}s"))
}

fn mnist_dir() -> Option<PathBuf> {
    let dir = std::env::var_os("MNIST_DIR")
        .map(PathBuf::from)
        .unwrap_or_else(|| Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/mnist"));
    ["train-images-idx3-ubyte", "train-labels-idx1-ubyte", "t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"]
        .iter()
        .all(|f| dir.join(f).exists() || dir.join(format!("{f}.gz")).exists())
        .then_some(dir)
}

fn mnist_file(dir: &Path, name: &str) -> String {
    let plain = dir.join(name);
    let path = if plain.exists() { plain } else { dir.join(format!("{name}.gz")) };
    path.display().to_string().replace('\\', "/")
}

/// Settings shared with configs/mnist-desk.toml.
const MNIST_MODEL: &str = "
[model]
layers = [{ k = 5000, n = 100 }, { k = 100, n = 20 }, { k = 100, n = 20 }, { k = 100 }]
sigma2 = [1e-3]
y_init = 0.1

[train]
batch_size = 500
epochs = 5
alpha = 1.0
mode = \"replicated\"
";

/// `None` when the data files are not available.
fn mnist_desk() -> Option<Outcome> {
    let dir = mnist_dir()?;
    let text = format!(
        "{MNIST_MODEL}\n[data]\nimages = \"{}\"\nlabels = \"{}\"\neval_images = \"{}\"\neval_labels = \"{}\"\ntrain_limit = 10000\neval_limit = 2000\n",
        mnist_file(&dir, "train-images-idx3-ubyte"),
        mnist_file(&dir, "train-labels-idx1-ubyte"),
        mnist_file(&dir, "t10k-images-idx3-ubyte"),
        mnist_file(&dir, "t10k-labels-idx1-ubyte"),
    );
    let run = || -> Result<(Vec<f64>, usize, f64), String> {
        let start = Instant::now();
        let cfg = RunConfig::parse(&text).map_err(|e| e.to_string())?;
        let (train, eval) = load_datasets(&cfg).map_err(|e| e.to_string())?;
        let mut model = build_model(&cfg, &train).map_err(|e| e.to_string())?;
        let tc = cfg.train_config(train.n_outputs()).map_err(|e| e.to_string())?;
        let stats = fit(&mut model, &train, &tc, eval.as_ref()).into_result().map_err(|e| e.to_string())?;
        let acc = stats.iter().filter_map(|s| s.eval_accuracy).collect();
        Ok((acc, model.param_count(), start.elapsed().as_secs_f64()))
    };
    Some(run().and_then(|(acc, params, secs)| {
        let best = acc.iter().copied().fold(0.0, f64::max);
        let list: Vec<String> = acc.iter().map(|a| format!("{a:.4}")).collect();
        check(
            best >= 0.95,
            format!("test accuracy per epoch [{}], {params} parameters, {secs:.0}s", list.join(", ")),
        )
    }))
}

fn sectors_model(data: &Dataset, mode: OutputMode) -> Model {
    let s = data.n_outputs();
    let last = if mode == OutputMode::Replicated { 1 } else { s };
    let specs = [
        LayerSpec { n_in: 2, n_out: 4, k: 16 },
        LayerSpec { n_in: 4, n_out: last, k: 16 },
    ];
    let opts = InitOptions { seed: 9, sigma2: vec![1e-3], ..InitOptions::default() };
    let base = init_cascade(&specs, &data.inputs, KernelConstants::default(), &opts).unwrap();
    match mode {
        OutputMode::Replicated => Model::Replicated(ReplicatedCascade::from_base(&base, s).unwrap()),
        _ => Model::Cascade(base),
    }
}

fn multi_output_modes() -> Outcome {
    let data = synth_classification(300, 3, 9).map_err(|e| e.to_string())?;
    let mut lines = Vec::new();
    let mut ok = true;
    for mode in [OutputMode::RandomOutput, OutputMode::Replicated] {
        let mut model = sectors_model(&data, mode);
        let initial = mse(&model.predict(&data.inputs).unwrap(), &data.targets);
        // 10 batches per epoch, so 50 batches in all.
        let cfg = TrainConfig { alpha: 1.0, batch_size: 30, epochs: 5, seed: 9, output_mode: mode, ..TrainConfig::default() };
        fit(&mut model, &data, &cfg, None).into_result().map_err(|e| e.to_string())?;
        let after = mse(&model.predict(&data.inputs).unwrap(), &data.targets);
        ok &= after < 0.5 * initial;
        lines.push(format!("{mode:?} mse {initial:.4} -> {after:.4}"));
    }

    let Model::Replicated(mut rep) = sectors_model(&data, OutputMode::Replicated) else { unreachable!() };
    let rows: Vec<usize> = (0..30).collect();
    let batch = data.subset(&rows).unwrap();
    let alone: Vec<CascadeState> = rep.slices().to_vec();
    let opts = BatchOptions::new(1.0);
    let updates = train_batch_replicated(&mut rep, &batch.inputs, &batch.targets, &opts).map_err(|e| e.to_string())?;
    let mut isolated = true;
    for (j, (upd, mut single)) in updates.into_iter().zip(alone).enumerate() {
        let upd = upd.map_err(|e| e.to_string())?;
        let t = batch.targets.select_cols(j, 1).unwrap();
        let us = train_batch_single(&mut single, &batch.inputs, &t, &opts).map_err(|e| e.to_string())?;
        isolated &= upd.delta_y.iter().zip(&us.delta_y).all(|(a, b)| bits(a) == bits(b));
        isolated &= rep.slices()[j].layers().iter().zip(single.layers()).all(|(a, b)| bits(a.y()) == bits(b.y()));
    }
    ok &= isolated;
    lines.push(format!("slices bitwise isolated {isolated}"));
    check(ok, lines.join("; "))
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let run = |tag: &str| -> Result<(Vec<u8>, Vec<u8>), String> {
        let metrics = dir.path().join(format!("{tag}.csv"));
        let ckpt = dir.path().join(format!("{tag}.ckpt"));
        let out = Command::new(env!("CARGO_BIN_EXE_polycascade"))
            .args(["train", "--synth", "sectors3", "--synth-points", "240", "--dims", "2,4,1", "--k", "12"])
            .args(["--epochs", "3", "--batch-size", "40", "--alpha", "1", "--seed", "11", "--no-wall-clock"])
            .arg("--metrics")
            .arg(&metrics)
            .arg("--checkpoint")
            .arg(&ckpt)
            .output()
            .map_err(|e| e.to_string())?;
        if !out.status.success() {
            return Err(String::from_utf8_lossy(&out.stderr).into_owned());
        }
        Ok((std::fs::read(&metrics).map_err(|e| e.to_string())?, std::fs::read(&ckpt).map_err(|e| e.to_string())?))
    };
    let a = run("a")?;
    let b = run("b")?;
    check(
        a == b,
        format!("metrics {} bytes, checkpoint {} bytes, identical {}", a.0.len(), a.1.len(), a == b),
    )
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 9] = [
        ("1 kernel formulas", kernel_formulas),
        ("2 interpolation identity", interpolation_identity),
        ("3 gradient suite", gradient_suite),
        ("4 rearrangement identity", rearrangement_identity),
        ("5 QP-oracle equivalence", qp_equivalence),
        ("6 fixed point and convention pairing", fixed_point_and_pairing),
        ("7 toy regression", toy_regression),
        ("9 multi-output modes", multi_output_modes),
        ("10 determinism", determinism),
    ];
    let mut failed = 0;
    let mut report = |name: &str, outcome: Outcome| match outcome {
        Ok(detail) => println!("PASS criterion {name}: {detail}"),
        Err(detail) => {
            failed += 1;
            println!("FAIL criterion {name}: {detail}");
        }
    };
    for (name, f) in &criteria[..7] {
        report(name, f());
    }
    match mnist_desk() {
        Some(outcome) => report("8 MNIST desk scale", outcome),
        None => println!("NOT RUN criterion 8 MNIST desk scale: IDX files not found (set MNIST_DIR)"),
    }
    for (name, f) in &criteria[7..] {
        report(name, f());
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
