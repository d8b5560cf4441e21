//! Acceptance criteria. Each test prints one `acceptance N PASS|FAIL` line
//! straight to stdout (bypassing the test harness capture) and then asserts.
//!
//! Criteria 7 and 8 train on MNIST / CIFAR-10 and take hours; they are
//! ignored by default and read the raw files under `$SPHTR_DATA`:
//! `cargo test -p sphtr-cli --test acceptance -- --ignored`.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use rand::Rng;
use sphtr::dataset::{
    build_dataset, load_source, sample_sequence, synthetic_split, RotateMode, SequenceSet, Source,
    SphericalSignal, Split,
};
use sphtr::equivariance::{run_cell, CellSpec};
use sphtr::model::{evaluate, gradient_check, train, ModelConfig, ModelParams, TrainOptions};
use sphtr::rng::stream_rng;
use sphtr::sampling::{build_cube_grid, build_erp_grid, build_icosa_grid};
use sphtr::uniformity::uniformity;
use sphtr::{
    enumerate_group, group_permutations, ExperimentConfig, GridParams, SamplingGrid, Solid, Tensor64,
};

fn report(id: u32, title: &str, pass: bool, detail: &str) {
    let line = format!(
        "acceptance {id:>2} {} {title}: {detail}\n",
        if pass { "PASS" } else { "FAIL" }
    );
    let mut out = std::io::stdout().lock();
    out.write_all(line.as_bytes()).unwrap();
    out.flush().unwrap();
    assert!(pass, "{}", line.trim_end());
}

fn configs_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn is_bijection(perm: &[usize]) -> bool {
    let mut seen = vec![false; perm.len()];
    perm.iter()
        .all(|&p| p < perm.len() && !std::mem::replace(&mut seen[p], true))
}

#[test]
fn criterion_01_group_structure() {
    let start = Instant::now();
    let icosa = enumerate_group(Solid::Icosa).unwrap();
    let cube = enumerate_group(Solid::Cube).unwrap();
    let (ai, ac) = (icosa.check_axioms(), cube.check_axioms());
    let secs = start.elapsed().as_secs_f64();
    let within = |a: &sphtr::groups::AxiomReport| {
        a.holds() && a.closure_error <= 1e-8 && a.max_orthogonality_error <= 1e-8 && a.max_det_error <= 1e-8
    };
    let pass = icosa.len() == 60 && cube.len() == 24 && within(&ai) && within(&ac) && secs < 5.0;
    report(
        1,
        "group structure",
        pass,
        &format!(
            "icosa order {} (closure err {:.1e}), cube order {} (closure err {:.1e}), {secs:.2}s",
            icosa.len(),
            ai.closure_error,
            cube.len(),
            ac.closure_error
        ),
    );
}

#[test]
fn criterion_02_rotation_to_permutation() {
    let start = Instant::now();
    let mut grids: Vec<(Solid, SamplingGrid)> = (0..=4)
        .map(|d| (Solid::Icosa, build_icosa_grid(d, 0).unwrap()))
        .collect();
    grids.extend([1, 8, 15, 29].map(|e| (Solid::Cube, build_cube_grid(e).unwrap())));

    let mut rng = stream_rng(2, 0);
    let mut worst: f64 = 0.0;
    let mut bijective = true;
    let mut homomorphic = true;
    for (solid, grid) in &grids {
        let group = enumerate_group(*solid).unwrap();
        let perms = group_permutations(&group, grid).unwrap();
        for p in &perms {
            worst = worst.max(p.max_match_error);
            bijective &= is_bijection(&p.point_perm) && is_bijection(&p.patch_perm);
        }
        for _ in 0..100 {
            let a = rng.random_range(0..group.len());
            let b = rng.random_range(0..group.len());
            let product = group.get(a).matrix * group.get(b).matrix;
            let ab = group.find(&product).expect("closed under products");
            let composed: Vec<usize> = perms[b]
                .point_perm
                .iter()
                .map(|&m| perms[a].point_perm[m])
                .collect();
            homomorphic &= composed == perms[ab].point_perm;
        }
    }
    let secs = start.elapsed().as_secs_f64();
    let pass = bijective && homomorphic && worst < 1e-9 && secs < 60.0;
    report(
        2,
        "rotation to permutation",
        pass,
        &format!(
            "{} grids, bijective={bijective}, homomorphism={homomorphic} (100 pairs each), max match error {worst:.2e}, {secs:.1}s",
            grids.len()
        ),
    );
}

const MNIST_SCALE: [(&str, f64); 3] = [
    ("icosa div=3", 10.6338),
    ("cube e=15", 10.114),
    ("erp 25x50", 8.275),
];
const CIFAR_SCALE: [(&str, f64); 3] = [
    ("icosa div=4", 21.2247),
    ("cube e=29", 20.2055),
    ("erp 50x100", 18.0280),
];

fn scale_grids(cifar: bool) -> [SamplingGrid; 3] {
    if cifar {
        [
            build_icosa_grid(4, 0).unwrap(),
            build_cube_grid(29).unwrap(),
            build_erp_grid(50, 100, 10, 20).unwrap(),
        ]
    } else {
        [
            build_icosa_grid(3, 0).unwrap(),
            build_cube_grid(15).unwrap(),
            build_erp_grid(25, 50, 5, 5).unwrap(),
        ]
    }
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

#[test]
fn criterion_03_uniformity_ranking() {
    let start = Instant::now();
    let mut pass = true;
    let mut parts = Vec::new();
    for (cifar, reference) in [(false, MNIST_SCALE), (true, CIFAR_SCALE)] {
        let stats: Vec<(f64, f64)> = scale_grids(cifar)
            .iter()
            .map(|g| {
                let finals: Vec<f64> = (0..5)
                    .map(|seed| uniformity(g, 100, g.len(), seed).unwrap().final_value)
                    .collect();
                mean_std(&finals)
            })
            .collect();
        for w in 0..2 {
            let (hi, lo) = (stats[w], stats[w + 1]);
            let gap = hi.0 - lo.0;
            pass &= gap > 3.0 * hi.1.max(lo.1);
        }
        let calib: Vec<String> = stats
            .iter()
            .zip(reference)
            .map(|((m, s), (name, reference))| {
                format!(
                    "{name} {m:.3}+-{s:.3} ({:+.0}% vs {reference})",
                    100.0 * (m - reference) / reference
                )
            })
            .collect();
        parts.push(calib.join(", "));
    }
    let secs = start.elapsed().as_secs_f64();
    pass &= secs < 600.0;
    report(
        3,
        "uniformity ranking icosa > cube > erp",
        pass,
        &format!("{} | {secs:.0}s", parts.join(" | ")),
    );
}

#[test]
fn criterion_04_uniformity_convergence() {
    let mut pass = true;
    let mut parts = Vec::new();
    for cifar in [false, true] {
        for g in scale_grids(cifar) {
            let r = uniformity(&g, 100, g.len(), 0).unwrap();
            let rel = r.trailing_range(25) / r.final_value;
            pass &= rel < 0.05;
            parts.push(format!("{} {:.2}%", g.params(), 100.0 * rel));
        }
    }
    report(
        4,
        "uniformity convergence (trailing-25 range < 5%)",
        pass,
        &parts.join(", "),
    );
}

#[test]
fn criterion_05_equivariance() {
    let start = Instant::now();
    let images = synthetic_split(Split::Test, 100, 5);
    let mut worst_plain: f64 = 0.0;
    let mut least_pos = f64::INFINITY;
    for div in 1..=4 {
        for layers in [1, 2, 4, 8] {
            let mut spec = CellSpec::new(GridParams::Icosa { div, patch_scale: 0 }, layers, 100, 5);
            let plain = run_cell::<f64>(&spec, &images, Source::Synthetic).unwrap();
            worst_plain = plain.per_rotation.iter().fold(worst_plain, |w, &d| w.max(d));
            spec.use_pos_embedding = true;
            least_pos = least_pos.min(
                run_cell::<f64>(&spec, &images, Source::Synthetic)
                    .unwrap()
                    .aggregate,
            );
        }
    }
    let secs = start.elapsed().as_secs_f64();
    let pass = worst_plain <= 1e-9 && least_pos > 1e-3 && secs < 600.0;
    report(
        5,
        "equivariance error",
        pass,
        &format!(
            "16 cells x 100 samples x 60 rotations: worst per-rotation delta without pos {worst_plain:.2e}, min mean delta with pos {least_pos:.2e}, {secs:.0}s"
        ),
    );
}

#[test]
fn criterion_06_gradient_check() {
    let start = Instant::now();
    let mut config = ModelConfig::small(20, 4);
    config.model_dim = 8;
    config.layers = 1;
    config.heads = 2;
    config.ffn_hidden = 32;
    config.dropout = 0.0;
    let mut params = ModelParams::<f64>::init(&config, 6).unwrap();
    // Perturb every tensor so zero biases and unit gains carry gradient signal too.
    let mut rng = stream_rng(6, 1);
    for t in params.tensors_mut() {
        for v in t.data_mut() {
            *v += rng.random_range(-0.2..0.2);
        }
    }
    let x = Tensor64::from_fn(&[20, 4], |_| rng.random_range(0.0..1.0));
    let errors = gradient_check(&params, &x, 4, 1e-5).unwrap();
    let (name, worst) = errors.iter().max_by(|a, b| a.1.total_cmp(&b.1)).cloned().unwrap();
    let secs = start.elapsed().as_secs_f64();
    let pass = worst <= 1e-4 && secs < 120.0;
    report(
        6,
        "full-model gradient check",
        pass,
        &format!(
            "{} tensors, worst relative error {worst:.2e} ({name}), {secs:.1}s",
            errors.len()
        ),
    );
}

fn data_root() -> PathBuf {
    std::env::var_os("SPHTR_DATA")
        .map(PathBuf::from)
        .expect("set SPHTR_DATA to the directory holding mnist/ and cifar-10-batches-bin/")
}

fn env_usize(name: &str, default: usize) -> usize {
    std::env::var(name)
        .ok()
        .and_then(|v| v.parse().ok())
        .unwrap_or(default)
}

fn train_and_test(cfg: &ExperimentConfig, train_set: &SequenceSet, test_set: &SequenceSet) -> f64 {
    let model = cfg.model(train_set.num_patches, train_set.input_dim());
    let mut params = ModelParams::<f32>::init(&model, cfg.seed).unwrap();
    let opts = TrainOptions {
        epochs: cfg.epochs,
        batch_size: cfg.batch_size,
        lr: cfg.lr,
        seed: cfg.seed,
    };
    train(&mut params, train_set, None, &opts, |log| {
        eprintln!(
            "  epoch {} loss {:.4} acc {:.4}",
            log.epoch,
            log.train.mean_loss,
            log.train.accuracy()
        );
    })
    .unwrap();
    evaluate(&params, test_set).unwrap().accuracy()
}

fn mnist_run(config: &str) -> f64 {
    let mut cfg = ExperimentConfig::from_file(&configs_dir().join(config)).unwrap();
    cfg.epochs = 20;
    let root = data_root();
    let dir = cfg.source_dir(Some(&root)).unwrap();
    let grid = cfg.grid().build().unwrap();
    let train_raw = load_source(cfg.source, &dir, Split::Train, Some(10_000), cfg.seed).unwrap();
    let test_raw = load_source(cfg.source, &dir, Split::Test, None, cfg.seed).unwrap();
    let train_set = build_dataset(
        &train_raw,
        cfg.source,
        &grid,
        RotateMode::So3,
        Split::Train,
        cfg.seed,
    )
    .unwrap();
    let test_set = build_dataset(
        &test_raw,
        cfg.source,
        &grid,
        RotateMode::So3,
        Split::Test,
        cfg.seed,
    )
    .unwrap();
    train_and_test(&cfg, &train_set, &test_set)
}

#[test]
#[ignore = "nightly: trains on MNIST under $SPHTR_DATA for about an hour"]
fn criterion_07_training_smoke() {
    let start = Instant::now();
    let icosa = mnist_run("table2_sphmnist_icosa.conf");
    let erp = mnist_run("table2_sphmnist_erp.conf");
    let pass = icosa >= 0.70 && icosa > erp;
    report(
        7,
        "training smoke (icosa >= 0.70 and above erp)",
        pass,
        &format!(
            "icosa {icosa:.4}, erp {erp:.4}, {:.0}s",
            start.elapsed().as_secs_f64()
        ),
    );
}

#[test]
#[ignore = "nightly: trains on CIFAR-10 under $SPHTR_DATA for several hours"]
fn criterion_08_patch_scale_trend() {
    let start = Instant::now();
    let train_limit = env_usize("SPHTR_NIGHTLY_TRAIN", 5000);
    let root = data_root();
    let mut rows = Vec::new();
    let mut pass = true;
    for seed in 0..3 {
        let mut cfg = ExperimentConfig::from_file(&configs_dir().join("table3_k0.conf")).unwrap();
        cfg.seed = seed;
        cfg.epochs = env_usize("SPHTR_NIGHTLY_EPOCHS", 10);
        let dir = cfg.source_dir(Some(&root)).unwrap();
        let grid = cfg.grid().build().unwrap();
        let train_raw = load_source(cfg.source, &dir, Split::Train, Some(train_limit), seed).unwrap();
        let test_raw = load_source(cfg.source, &dir, Split::Test, None, seed).unwrap();
        let train0 =
            build_dataset(&train_raw, cfg.source, &grid, RotateMode::So3, Split::Train, seed).unwrap();
        let test0 = build_dataset(&test_raw, cfg.source, &grid, RotateMode::So3, Split::Test, seed).unwrap();
        let k0 = train_and_test(&cfg, &train0, &test0);
        cfg.patch_scale = 3;
        let k3 = train_and_test(
            &cfg,
            &train0.regroup_icosa(3).unwrap(),
            &test0.regroup_icosa(3).unwrap(),
        );
        pass &= k3 > k0;
        rows.push(format!("seed {seed}: k0 {k0:.4} k3 {k3:.4}"));
    }
    report(
        8,
        "patch-scale trend (k=3 above k=0)",
        pass,
        &format!("{}, {:.0}s", rows.join("; "), start.elapsed().as_secs_f64()),
    );
}

#[test]
fn criterion_09_resampling_identity() {
    let start = Instant::now();
    let grid = build_icosa_grid(3, 0).unwrap();
    let group = enumerate_group(Solid::Icosa).unwrap();
    let perms = group_permutations(&group, &grid).unwrap();
    let raw = synthetic_split(Split::Train, 20, 9);
    let mut worst: f64 = 0.0;
    for image in &raw.images {
        let signal = SphericalSignal::full_sphere(image.clone());
        let base = sample_sequence(&signal, &grid, None, 0);
        for (r, perm) in group.elements().iter().zip(&perms) {
            let rotated = sample_sequence(&signal, &grid, Some(r), 0);
            for (m, &to) in perm.point_perm.iter().enumerate() {
                worst = worst.max((rotated.values[to] - base.values[m]).abs());
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    let pass = worst <= 1e-12 && secs < 60.0;
    report(
        9,
        "resampling equals point permutation",
        pass,
        &format!("20 signals x 60 rotations on 1280 points, max deviation {worst:.2e}, {secs:.1}s"),
    );
}

fn run_cli(out: &Path, args: &[&str]) {
    let status = Command::new(env!("CARGO_BIN_EXE_sphtr"))
        .args(args)
        .arg("--out")
        .arg(out)
        .env_remove("SPHTR_DATA")
        .output()
        .unwrap();
    assert!(
        status.status.success(),
        "{args:?}: {}",
        String::from_utf8_lossy(&status.stderr)
    );
}

fn tree_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.is_file())
        .map(|p| {
            (
                p.file_name().unwrap().to_string_lossy().into_owned(),
                std::fs::read(&p).unwrap(),
            )
        })
        .collect();
    files.sort();
    files
}

#[test]
fn criterion_10_reproducibility() {
    let tmp = tempfile::tempdir().unwrap();
    let smoke = configs_dir().join("smoke.conf");
    let smoke = smoke.to_str().unwrap();
    let tiny = [
        "--set",
        "train_limit=60",
        "--set",
        "test_limit=30",
        "--set",
        "layers=1",
        "--set",
        "epochs=1",
    ];
    let runs: Vec<(&str, Vec<&str>)> = vec![
        ("grid", vec!["grid", "icosa", "--div", "3"]),
        (
            "uniformity",
            vec!["uniformity", "--preset", "sphmnist", "--n", "3", "--seed", "4"],
        ),
        ("groups", vec!["groups", "cube", "--e", "8"]),
        (
            "dataset",
            [
                &["--config", smoke, "dataset", "build", "--div", "2"][..],
                &tiny[..],
            ]
            .concat(),
        ),
        ("train", [&["--config", smoke, "train"][..], &tiny[..]].concat()),
        (
            "equivariance",
            vec![
                "--config",
                smoke,
                "equivariance",
                "--set",
                "eq_divs=1",
                "--set",
                "eq_layers=1,2",
                "--set",
                "eq_samples=3",
                "--set",
                "precision=f64",
            ],
        ),
        (
            "ablate",
            vec!["--config", smoke, "ablate", "patch-scale", "--dry-run"],
        ),
    ];
    let mut checked = 0;
    let mut differing = Vec::new();
    for (name, args) in &runs {
        let (a, b) = (
            tmp.path().join(format!("{name}-a")),
            tmp.path().join(format!("{name}-b")),
        );
        run_cli(&a, args);
        run_cli(&b, args);
        let (ta, tb) = (tree_bytes(&a), tree_bytes(&b));
        checked += ta.len();
        if ta != tb || ta.is_empty() {
            differing.push(*name);
        }
    }
    // Evaluating the trained checkpoint twice.
    let train_dir = tmp.path().join("train-a");
    let ckpt = train_dir.join("model.ckpt");
    let ckpt = ckpt.to_str().unwrap();
    for out in ["eval-a", "eval-b"] {
        run_cli(
            &tmp.path().join(out),
            &[&["--config", smoke, "eval", "--checkpoint", ckpt][..], &tiny[..]].concat(),
        );
    }
    let eval_same = tree_bytes(&tmp.path().join("eval-a")) == tree_bytes(&tmp.path().join("eval-b"));
    if !eval_same {
        differing.push("eval");
    }
    report(
        10,
        "byte-identical reruns",
        differing.is_empty(),
        &format!(
            "{} subcommands, {checked} files compared, differing: {differing:?}",
            runs.len() + 1
        ),
    );
}

#[test]
fn nightly_criteria_status() {
    if std::env::var_os("SPHTR_DATA").is_none() {
        let mut out = std::io::stdout().lock();
        for (id, what) in [
            (7, "training smoke on MNIST"),
            (8, "patch-scale trend on CIFAR-10"),
        ] {
            writeln!(
                out,
                "acceptance {id:>2} NOT RUN {what}: nightly, needs SPHTR_DATA and --ignored"
            )
            .unwrap();
        }
    }
}
