//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero when any criterion fails.
//!
//! Criteria 5 to 10 train on MNIST, read from `data/mnist` at the workspace
//! root or from `$JIGSAW_MNIST`. The desk-scale runs take about an hour on
//! one CPU core.

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use candle_core::{DType, Device, Tensor};
use oracle::permutations_of;
use jigsaw_core::adversarial::{fgsm_perturb, reconstruction_objective_grad, AttackConfig};
use jigsaw_core::config::RunConfig;
use jigsaw_core::data::DatasetSpec;
use jigsaw_core::evaluation::{attack_sweep, auroc, fpr_at_tpr, AttackVariant, LabeledScores, Protocol};
use jigsaw_core::experiment::{prepare, Prepared};
use jigsaw_core::puzzle::{apply_permutation, enumerate_permutations, invert_permutation, Grid, ImageTensor, MaskMode, PermMode};
use jigsaw_core::scoring::{raw_scores, Aggregation, DEFAULT_SCORING_BATCH};
use jigsaw_core::training::{fit_with, ModelConfig, Monitor};
use jigsaw_core::{Checkpoint, ReconstructionNet, UNetConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const AUROC_CLASS_1: f64 = 0.97;
const AUROC_CLASS_8_TWELFTH: f64 = 0.85;
const STABILITY_STD: f64 = 0.01;
const ABLATION_SLACK: f64 = 0.005;
const ROBUSTNESS_SLACK: f64 = 0.02;
const SIGN_AGREEMENT: f64 = 0.99;
const PROBE_EPSILON: f64 = 0.05;
const METRIC_TOL: f64 = 1e-9;
const NORMALIZATION_TOL: f64 = 1e-6;

/// Brute-force helpers kept free of the library under test.
mod oracle {
    pub fn permutations_of(n: usize) -> Vec<Vec<usize>> {
        if n == 0 {
            return vec![vec![]];
        }
        let mut out = Vec::new();
        for p in permutations_of(n - 1) {
            for pos in 0..=p.len() {
                let mut q = p.clone();
                q.insert(pos, n - 1);
                out.push(q);
            }
        }
        out
    }
}

/// Result lines, printed in criterion order once every check has run.
#[derive(Default)]
struct Report {
    lines: Vec<(usize, bool, String)>,
}

impl Report {
    fn line(&mut self, id: usize, name: &str, pass: bool, detail: String, started: Instant) {
        let tag = if pass { "PASS" } else { "FAIL" };
        let text = format!("criterion {id:>2} {tag} {name}: {detail} ({:.1}s)", started.elapsed().as_secs_f64());
        eprintln!("{text}");
        self.lines.push((id, pass, text));
    }

    fn finish(mut self) -> ExitCode {
        self.lines.sort_by_key(|l| l.0);
        for (_, _, text) in &self.lines {
            println!("{text}");
        }
        let passed = self.lines.iter().filter(|l| l.1).count();
        println!("acceptance: {passed} of {} criteria passed", self.lines.len());
        if passed == self.lines.len() {
            ExitCode::SUCCESS
        } else {
            ExitCode::FAILURE
        }
    }
}

fn criterion_1(r: &mut Report) {
    let t = Instant::now();
    let all = permutations_of(4);
    let displaced = |p: &Vec<usize>| p.iter().enumerate().filter(|(i, v)| *i != **v).count();
    let brute_at_least_two = all.iter().filter(|p| displaced(p) >= 2).count();
    let brute_exactly_two = all.iter().filter(|p| displaced(p) == 2).count();
    let a = enumerate_permutations(Grid::TWO_BY_TWO, PermMode::AtLeastTwo).unwrap();
    let b = enumerate_permutations(Grid::TWO_BY_TWO, PermMode::ExactlyTwo).unwrap();
    let pass = all.len() == 24 && a.len() == 23 && b.len() == 6 && brute_at_least_two == 23 && brute_exactly_two == 6;
    r.line(
        1,
        "permutation cardinalities",
        pass,
        format!("at_least_two {} (brute force {brute_at_least_two}), exactly_two {} (brute force {brute_exactly_two})", a.len(), b.len()),
        t,
    );
}

fn criterion_2(r: &mut Report) {
    let t = Instant::now();
    let perms = enumerate_permutations(Grid::TWO_BY_TWO, PermMode::AtLeastTwo).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (mut identity_failures, mut multiset_failures) = (0, 0);
    for i in 0..100 {
        let c = if i % 2 == 0 { 1 } else { 3 };
        let img = ImageTensor::new(c, 32, 32, (0..c * 32 * 32).map(|_| rng.random()).collect()).unwrap();
        let mut sorted = img.data().to_vec();
        sorted.sort_by(f32::total_cmp);
        for p in &perms {
            let puzzled = apply_permutation(&img, p).unwrap();
            let back = apply_permutation(&puzzled, &invert_permutation(p)).unwrap();
            if back.data().iter().zip(img.data()).any(|(a, b)| a.to_bits() != b.to_bits()) {
                identity_failures += 1;
            }
            let mut s = puzzled.data().to_vec();
            s.sort_by(f32::total_cmp);
            if s.iter().zip(&sorted).any(|(a, b)| a.to_bits() != b.to_bits()) {
                multiset_failures += 1;
            }
        }
    }
    r.line(
        2,
        "puzzle group properties",
        identity_failures == 0 && multiset_failures == 0,
        format!("2300 pairs, {identity_failures} identity failures, {multiset_failures} multiset failures"),
        t,
    );
}

/// Ball containment on an untrained network, sign agreement on the trained
/// class-1 network in double precision, probed at puzzled validation images.
fn criterion_3(r: &mut Report, trained: Result<&Run, String>) {
    let t = Instant::now();
    let dev = Device::Cpu;
    let tiny = UNetConfig { channels: 1, image_size: 8, depth: 1, base_channels: 4 };
    let net32 = ReconstructionNet::build(&tiny, DType::F32, 3).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut outside = 0;
    for _ in 0..1000 {
        let eps = rng.random_range(0.0..0.3);
        let data: Vec<f32> = (0..64).map(|_| rng.random()).collect();
        let x = Tensor::from_vec(data, (1, 1, 8, 8), &dev).unwrap();
        let out = fgsm_perturb(&net32, &x, Some(&x), &AttackConfig::fgsm(eps), &mut rng).unwrap();
        let xs: Vec<f32> = x.flatten_all().unwrap().to_vec1().unwrap();
        let os: Vec<f32> = out.flatten_all().unwrap().to_vec1().unwrap();
        if xs.iter().zip(&os).any(|(a, b)| (f64::from(*a) - f64::from(*b)).abs() > eps || !(0.0..=1.0).contains(b)) {
            outside += 1;
        }
    }
    let run = match trained {
        Ok(run) => run,
        Err(e) => {
            r.line(3, "FGSM contract", false, format!("{outside}/1000 draws leave the ball; no trained network: {e}"), t);
            return;
        }
    };

    let net = ReconstructionNet::build(&run.ckpt.meta.unet, DType::F64, 0).unwrap();
    net.params().import(&run.ckpt.unet.params().export(""), "").unwrap();
    let perms = &run.ckpt.meta.scoring.perms;
    let shape = (1, 1, 32, 32);
    let (mut checked, mut agree) = (0usize, 0usize);
    let h = 1e-6;
    for (k, img) in run.data.split.val.images.iter().take(4).enumerate() {
        let target = img.to_tensor(DType::F64, &dev).unwrap();
        let puzzled = apply_permutation(img, &perms[k * 5 % perms.len()]).unwrap();
        // probe at a random start inside the training ball, as FGSM does
        let z: Vec<f64> = puzzled
            .data()
            .iter()
            .map(|v| (f64::from(*v) + rng.random_range(-PROBE_EPSILON..PROBE_EPSILON)).clamp(0.0, 1.0))
            .collect();
        let zt = Tensor::from_vec(z.clone(), shape, &dev).unwrap();
        let grad: Vec<f64> = reconstruction_objective_grad(&net, &zt, &target).unwrap().1.flatten_all().unwrap().to_vec1().unwrap();
        let f = |v: Vec<f64>| {
            let v = Tensor::from_vec(v, shape, &dev).unwrap();
            reconstruction_objective_grad(&net, &v, &target).unwrap().0
        };
        for (i, g) in grad.iter().enumerate() {
            if g.abs() <= 1e-4 {
                continue;
            }
            let (mut up, mut down) = (z.clone(), z.clone());
            up[i] += h;
            down[i] -= h;
            let fd = (f(up) - f(down)) / (2.0 * h);
            checked += 1;
            if fd.signum() == g.signum() {
                agree += 1;
            }
        }
    }
    let rate = agree as f64 / checked.max(1) as f64;
    r.line(
        3,
        "FGSM contract",
        outside == 0 && checked > 0 && rate >= SIGN_AGREEMENT,
        format!("{outside}/1000 draws leave the ball, sign agreement {rate:.4} on {checked} coordinates"),
        t,
    );
}

fn oracle_auroc(scores: &[f64], anomalous: &[bool]) -> f64 {
    let (mut wins, mut pairs) = (0.0, 0.0);
    for (i, a) in anomalous.iter().enumerate() {
        if !a {
            continue;
        }
        for (j, b) in anomalous.iter().enumerate() {
            if *b {
                continue;
            }
            pairs += 1.0;
            wins += match scores[i].partial_cmp(&scores[j]).unwrap() {
                std::cmp::Ordering::Greater => 1.0,
                std::cmp::Ordering::Equal => 0.5,
                std::cmp::Ordering::Less => 0.0,
            };
        }
    }
    wins / pairs
}

/// Lowest FPR over every observed score used as an inclusive threshold.
fn oracle_fpr(scores: &[f64], anomalous: &[bool], tpr: f64) -> f64 {
    let n_anom = anomalous.iter().filter(|a| **a).count() as f64;
    let n_norm = anomalous.len() as f64 - n_anom;
    let mut best = f64::INFINITY;
    for &t in scores {
        let tp = scores.iter().zip(anomalous).filter(|(s, a)| **a && **s >= t).count() as f64;
        let fp = scores.iter().zip(anomalous).filter(|(s, a)| !**a && **s >= t).count() as f64;
        if tp / n_anom >= tpr - 1e-12 {
            best = best.min(fp / n_norm);
        }
    }
    best
}

fn criterion_4(r: &mut Report) {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst: f64 = 0.0;
    for _ in 0..200 {
        let n = rng.random_range(2..=1000);
        let levels: i32 = rng.random_range(2..50);
        let mut anomalous: Vec<bool> = (0..n).map(|_| rng.random_bool(0.3)).collect();
        anomalous[0] = true;
        anomalous[1] = false;
        let scores: Vec<f64> = anomalous
            .iter()
            .map(|a| {
                let shift = if *a { 0.7 * rng.random::<f64>() } else { 0.0 };
                f64::from(rng.random_range(0..levels)) + shift
            })
            .collect();
        let ls = LabeledScores::new(scores.clone(), anomalous.clone()).unwrap();
        worst = worst.max((auroc(&ls).unwrap() - oracle_auroc(&scores, &anomalous)).abs());
        for tpr in [0.5, 0.9, 0.99, 0.995, 1.0] {
            worst = worst.max((fpr_at_tpr(&ls, tpr).unwrap() - oracle_fpr(&scores, &anomalous, tpr)).abs());
        }
    }
    r.line(4, "metric oracle equivalence", worst <= METRIC_TOL, format!("max deviation {worst:.2e} over 200 instances"), t);
}

fn mnist_root() -> PathBuf {
    std::env::var_os("JIGSAW_MNIST")
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/mnist"))
}

/// Desk-scale MNIST configuration shared by every training criterion.
fn desk_config(class: &str) -> RunConfig {
    let mut cfg = RunConfig::new(DatasetSpec::mnist(mnist_root()));
    cfg.seed = 0;
    cfg.experiment.protocol = Protocol::Two;
    cfg.experiment.normal_class = class.to_string();
    cfg.experiment.test_limit = Some(2000);
    cfg.train.batch_size = 32;
    cfg.train.lambda_adv = 0.1;
    cfg.train.model = ModelConfig { depth: 3, base_channels: 8, disc_base_channels: 16 };
    cfg
}

struct Run {
    ckpt: Checkpoint,
    data: Prepared,
    monitor_aurocs: Vec<f64>,
    test_auroc: f64,
}

fn train_and_test(name: &str, cfg: &RunConfig) -> jigsaw_core::Result<Run> {
    let data = prepare(cfg)?;
    let train = cfg.effective_train();
    let started = Instant::now();
    eprintln!(
        "[{name}] {} train, {} val, {} test, {} epochs",
        data.split.train.len(),
        data.split.val.len(),
        data.split.test.len(),
        train.epochs
    );
    let monitor = data.monitor.as_ref().map(|(images, anomalous)| Monitor { images, anomalous });
    let fitted = fit_with(&train, &data.split.train.images, &data.split.val.images, monitor, |_, rec| {
        eprintln!(
            "[{name}] epoch {} loss {:.4} monitor {} ({:.0}s)",
            rec.epoch,
            rec.loss_total,
            rec.auroc.map_or("-".to_string(), |a| format!("{:.4}", a.max)),
            started.elapsed().as_secs_f64()
        );
        Ok(())
    })?;
    let monitor_aurocs = fitted.records.iter().filter_map(|r| r.auroc).map(|a| a.get(cfg.aggregation())).collect();
    let ckpt = Checkpoint::from_fit(fitted, &train)?;
    let table = ckpt.score(&data.split.test.images)?;
    let test_auroc = auroc(&LabeledScores::new(table.aggregates(cfg.aggregation()), data.split.test_anomalous.clone())?)?;
    eprintln!("[{name}] test auroc {test_auroc:.4} ({:.0}s)", started.elapsed().as_secs_f64());
    Ok(Run { ckpt, data, monitor_aurocs, test_auroc })
}

fn class_1_config() -> RunConfig {
    let mut cfg = desk_config("1");
    cfg.experiment.train_limit = Some(2000);
    cfg.experiment.monitor_size = Some(150);
    cfg.train.epochs = 30;
    cfg.train.eval_last_epochs = 20;
    cfg
}

fn class_8_config() -> RunConfig {
    let mut cfg = desk_config("8");
    cfg.experiment.fraction = 1.0 / 12.0;
    cfg.train.batch_size = 8;
    cfg.train.epochs = 100;
    cfg
}

fn criterion_5(r: &mut Report, run: &Run) {
    let t = Instant::now();
    let perms = &run.ckpt.meta.scoring.perms;
    let raw = raw_scores(&run.ckpt.unet, &run.data.split.val.images, perms, DEFAULT_SCORING_BATCH).unwrap();
    let norms = run.ckpt.meta.normalizers.values();
    let worst = (0..perms.len())
        .map(|k| (raw.iter().map(|row| row[k] / norms[k]).sum::<f64>() / raw.len() as f64 - 1.0).abs())
        .fold(0.0, f64::max);
    r.line(
        5,
        "normalization identity",
        worst <= NORMALIZATION_TOL,
        format!("max |mean - 1| {worst:.2e} over {} permutations, {} validation images", perms.len(), raw.len()),
        t,
    );
}

fn std_dev(v: &[f64]) -> f64 {
    let mean = v.iter().sum::<f64>() / v.len() as f64;
    (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / v.len() as f64).sqrt()
}

fn main() -> ExitCode {
    let mut r = Report::default();
    criterion_1(&mut r);
    criterion_2(&mut r);
    criterion_4(&mut r);

    let t = Instant::now();
    let class_1 = train_and_test("class 1", &class_1_config());
    match &class_1 {
        Ok(run) => {
            criterion_5(&mut r, run);
            r.line(
                6,
                "desk MNIST class 1",
                run.test_auroc >= AUROC_CLASS_1,
                format!("AUROC(max) {:.4} >= {AUROC_CLASS_1}", run.test_auroc),
                t,
            );
        }
        Err(e) => {
            r.line(5, "normalization identity", false, format!("class-1 run failed: {e}"), t);
            r.line(6, "desk MNIST class 1", false, format!("class-1 run failed: {e}"), t);
        }
    }

    criterion_3(&mut r, class_1.as_ref().map_err(|e| e.to_string()));

    let t = Instant::now();
    let class_8 = train_and_test("class 8", &class_8_config());
    match &class_8 {
        Ok(run) => r.line(
            7,
            "data efficiency class 8 at 1/12",
            run.test_auroc >= AUROC_CLASS_8_TWELFTH,
            format!("AUROC(max) {:.4} >= {AUROC_CLASS_8_TWELFTH} with {} training images", run.test_auroc, run.data.split.train.len()),
            t,
        ),
        Err(e) => r.line(7, "data efficiency class 8 at 1/12", false, format!("run failed: {e}"), t),
    }

    let t = Instant::now();
    match &class_1 {
        Ok(run) => {
            let s = std_dev(&run.monitor_aurocs);
            r.line(
                8,
                "stability",
                run.monitor_aurocs.len() == 20 && s <= STABILITY_STD,
                format!("std {s:.4} <= {STABILITY_STD} over {} monitored epochs", run.monitor_aurocs.len()),
                t,
            );
        }
        Err(e) => r.line(8, "stability", false, format!("class-1 run failed: {e}"), t),
    }

    let t = Instant::now();
    let mut pae_cfg = class_1_config();
    pae_cfg.experiment.monitor_size = None;
    pae_cfg.train.lambda_adv = 0.0;
    pae_cfg.train.attack.epsilon = 0.0;
    pae_cfg.train.puzzle.mask_mode = MaskMode::None;
    match (&class_1, train_and_test("PAE", &pae_cfg)) {
        (Ok(full), Ok(pae)) => r.line(
            9,
            "ablation direction",
            full.test_auroc >= pae.test_auroc - ABLATION_SLACK,
            format!("CPAE-G {:.4} >= PAE {:.4} - {ABLATION_SLACK}", full.test_auroc, pae.test_auroc),
            t,
        ),
        (_, Err(e)) => r.line(9, "ablation direction", false, format!("PAE mode failed: {e}"), t),
        (Err(e), _) => r.line(9, "ablation direction", false, format!("class-1 run failed: {e}"), t),
    }

    let t = Instant::now();
    match &class_8 {
        Ok(run) => {
            let cfg = class_8_config();
            let split = &run.data.split;
            let rows = attack_sweep(
                &run.ckpt.unet,
                &split.test.images,
                &split.test_anomalous,
                AttackVariant::Attack1,
                &[0.0, 0.05, 0.1, 0.2],
                &cfg.effective_train().attack,
                &run.ckpt.meta.scoring.perms,
                &run.ckpt.meta.normalizers,
                Aggregation::Max,
                &cfg.eval.tpr_points,
                DEFAULT_SCORING_BATCH,
                &mut ChaCha8Rng::seed_from_u64(10),
            );
            match rows {
                Ok(rows) => {
                    let series: Vec<f64> = rows.iter().map(|row| row.report.auroc).collect();
                    let exact = series[0] == run.test_auroc;
                    let monotone = series.windows(2).all(|w| w[1] <= w[0] + ROBUSTNESS_SLACK);
                    let shown: Vec<String> = series.iter().map(|a| format!("{a:.4}")).collect();
                    r.line(
                        10,
                        "robustness trend",
                        exact && monotone,
                        format!("AUROC at eps 0, 0.05, 0.1, 0.2: {}; eps 0 equals clean: {exact}", shown.join(", ")),
                        t,
                    );
                }
                Err(e) => r.line(10, "robustness trend", false, format!("attack failed: {e}"), t),
            }
        }
        Err(e) => r.line(10, "robustness trend", false, format!("class-8 run failed: {e}"), t),
    }

    r.finish()
}
