//! Acceptance checks. Runs every criterion in sequence (so the timed ones are
//! not competing for the CPU) and prints one PASS/FAIL line per criterion.
//!
//! `ACCEPTANCE_ONLY=1,3,10` restricts the run to the listed criteria.

use std::io::BufReader;
use std::process::{Command, ExitCode};
use std::sync::Arc;
use std::time::{Duration, Instant};

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use stereolift::action::{self, gen_motion_dataset, train_action, ActionConfig, ActionSequence};
use stereolift::config::Config;
use stereolift::geometry::{disparity, project, synthesize_right_view, CameraIntrinsics, Pixel2, Point3};
use stereolift::geosearch::{closed_form_delta_z, refine, reprojection_error, SearchConfig, SearchMode};
use stereolift::lifting::{
    predict_right, split_indices, train_monocular, train_reconstruction, train_view_synthesis, Lifter, NetShape, ReconMode,
};
use stereolift::metrics::{mpjpe_protocol1, pck3d_auc, pckh, PCKH_ALPHA};
use stereolift::neuralnet::{adam_step, loss_and_grad, AdamState, Loss, MlpConfig, MlpModel, Mode, ParamKind, TrainConfig};
use stereolift::par::Execution;
use stereolift::pipeline::{label_stream, DatasetRecord, LabelConfig};
use stereolift::skeleton::{denormalize2d, normalize2d, Frame, JointSchema, Pose2D, Pose3D, CROP_SIZE};
use stereolift::synthgen::{generate_pairs, pair_at, record_id, SynthConfig, TrainingPair};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn noisy(pose: &Pose3D, sigma: f64, r: &mut ChaCha8Rng) -> Pose3D {
    let n = Normal::new(0.0, sigma).unwrap();
    let joints = pose
        .joints
        .iter()
        .map(|p| Point3::new(p.x + n.sample(r), p.y + n.sample(r), p.z + n.sample(r)))
        .collect();
    Pose3D::new(pose.schema.clone(), joints, Frame::Absolute).unwrap().root_aligned()
}

fn jittered() -> SynthConfig {
    SynthConfig { root_pixel_jitter: 16.0, seed: 5, ..SynthConfig::default() }
}

fn refined_reprojection() -> Outcome {
    let pairs = generate_pairs(&jittered(), 0..1000, Execution::Sequential).unwrap();
    let mut r = rng(1);
    let coarse: Vec<Pose3D> = pairs.iter().map(|p| noisy(&p.pose3d, 40.0, &mut r)).collect();
    let t = Instant::now();
    let mut worst: f64 = 0.0;
    for (p, c) in pairs.iter().zip(&coarse) {
        let out = refine(c, &p.left2d, &p.intrinsics, &SearchConfig::default()).unwrap();
        worst = worst.max(reprojection_error(&out.pose_abs, &p.left2d, &p.intrinsics).unwrap());
    }
    let dt = t.elapsed();
    outcome(worst <= 1e-6 && dt < Duration::from_secs(5), format!("max reprojection {worst:.3e} px in {dt:.2?}"))
}

fn scan_matches_closed_form() -> Outcome {
    let pairs = generate_pairs(&jittered(), 1000..2000, Execution::Sequential).unwrap();
    let mut r = rng(2);
    let scan = SearchConfig::default();
    let mut worst: f64 = 0.0;
    for p in &pairs {
        let c = noisy(&p.pose3d, 60.0, &mut r);
        let a = refine(&c, &p.left2d, &p.intrinsics, &scan).unwrap().delta_z;
        let b = closed_form_delta_z(&c, &p.left2d, &p.intrinsics).unwrap();
        worst = worst.max((a - b).abs());
    }
    let s = Arc::new(JointSchema::chain(2));
    let coarse = Pose3D::new(s.clone(), vec![Point3::ORIGIN, Point3::new(300.0, 0.0, 0.0)], Frame::RootRelative).unwrap();
    let gt = Pose2D::new(s, vec![Pixel2::new(0.0, 0.0), Pixel2::new(100.0, 0.0)]);
    let k = CameraIntrinsics::new(1000.0, 1000.0, 0.0, 0.0).unwrap();
    let mut hand = closed_form_delta_z(&coarse, &gt, &k).unwrap() == 3000.0;
    for mode in [SearchMode::Scan, SearchMode::ClosedForm] {
        let out = refine(&coarse, &gt, &k, &SearchConfig { mode, ..scan }).unwrap();
        hand &= out.delta_z == 3000.0 && out.residual == 0.0;
        hand &= out.pose_abs.joints == [Point3::new(0.0, 0.0, 3000.0), Point3::new(300.0, 0.0, 3000.0)];
    }
    outcome(worst <= 1.0 && hand, format!("max |scan - closed form| {worst:.3} mm, hand example exact: {hand}"))
}

fn stereo_geometry() -> Outcome {
    let mut r = rng(3);
    let base = SynthConfig::default();
    let (mut dv, mut dd, mut n): (f64, f64, usize) = (0.0, 0.0, 0);
    for i in 0..625 {
        let pose = pair_at(&base, i).unwrap().pose3d_abs;
        let k = CameraIntrinsics::new(
            r.random_range(200.0..2000.0),
            r.random_range(200.0..2000.0),
            r.random_range(-300.0..300.0),
            r.random_range(-300.0..300.0),
        )
        .unwrap();
        let dx = r.random_range(50.0..1000.0);
        let right = synthesize_right_view(&pose, &k, dx).unwrap();
        for (p, pr) in pose.joints.iter().zip(&right.joints) {
            let pl = project(*p, &k).unwrap();
            let want = disparity(&k, dx, p.z);
            dv = dv.max((pr.v - pl.v).abs());
            dd = dd.max(((pr.u - pl.u) - want).abs() / want.abs());
            n += 1;
        }
    }
    let k = CameraIntrinsics::new(1150.0, 1150.0, 512.0, 512.0).unwrap();
    let s = Arc::new(JointSchema::chain(2));
    let pose = Pose3D::new(s, vec![Point3::new(500.0, -250.0, 2500.0); 2], Frame::Absolute).unwrap();
    let left = project(pose.joints[0], &k).unwrap();
    let right = synthesize_right_view(&pose, &k, 500.0).unwrap().joints[0];
    let example = left == Pixel2::new(742.0, 397.0)
        && right == Pixel2::new(972.0, 397.0)
        && right.u - left.u == 230.0
        && disparity(&k, 500.0, 2500.0) == 230.0;
    outcome(
        n == 10_000 && dv <= 1e-9 && dd <= 1e-9 && example,
        format!("{n} joints, max |v_R - v_L| {dv:.1e} px, max disparity rel err {dd:.1e}, example exact: {example}"),
    )
}

fn train_loss(model: &mut MlpModel, x: &Array2<f64>, y: &Array2<f64>, kind: Loss) -> f64 {
    let (out, _) = model.forward(x, Mode::Train(&mut rng(0))).unwrap();
    loss_and_grad(kind, &out, y).0
}

const FD_FLOOR: f64 = 1e-5;

fn gradients() -> Outcome {
    let h = 1e-5;
    let mut r = rng(4);
    let (mut worst, mut checked): (f64, usize) = (0.0, 0);
    let mut worst_at = String::new();
    for trial in 0..20 {
        let config = MlpConfig {
            input_dim: r.random_range(2..9),
            hidden_dim: r.random_range(3..11),
            n_residual_blocks: r.random_range(0..4),
            output_dim: r.random_range(1..6),
            dropout_rate: 0.0,
            max_norm: 1.0,
            seed: trial,
            tail_dims: (0..r.random_range(0..3)).map(|_| r.random_range(2..8)).collect(),
        };
        let n = r.random_range(4..11);
        let kind = if trial % 2 == 0 { Loss::Mse } else { Loss::SoftmaxCrossEntropy };
        let x = Array2::from_shape_fn((n, config.input_dim), |_| r.random_range(-1.0..1.0));
        let y = match kind {
            Loss::Mse => Array2::from_shape_fn((n, config.output_dim), |_| r.random_range(-1.0..1.0)),
            Loss::SoftmaxCrossEntropy => {
                let mut y = Array2::zeros((n, config.output_dim));
                for i in 0..n {
                    y[[i, r.random_range(0..config.output_dim)]] = 1.0;
                }
                y
            }
        };
        let mut model = MlpModel::init_kaiming(&config).unwrap();
        // Perturb batch-norm affine parameters and biases away from their
        // initial values so every parameter kind is exercised.
        for p in model.parameters_mut() {
            if !matches!(p.kind, ParamKind::Weight { .. }) {
                p.data.iter_mut().for_each(|v| *v += r.random_range(-0.5..0.5));
            }
        }
        let (out, cache) = model.forward(&x, Mode::Train(&mut rng(0))).unwrap();
        let (_, dout) = loss_and_grad(kind, &out, &y);
        let grads = model.backward(&cache.unwrap(), &dout);
        for p in 0..grads.0.len() {
            for i in 0..grads.0[p].len() {
                let orig = model.parameters()[p].2[i];
                model.parameters_mut()[p].data[i] = orig + h;
                let up = train_loss(&mut model, &x, &y, kind);
                model.parameters_mut()[p].data[i] = orig - h;
                let down = train_loss(&mut model, &x, &y, kind);
                model.parameters_mut()[p].data[i] = orig;
                let fd = (up - down) / (2.0 * h);
                let an = grads.0[p][i];
                // The floor keeps exactly-zero gradients (biases feeding batch
                // norm) from being judged on rounding noise, which is ~1e-10 at
                // this step size.
                let rel = (an - fd).abs() / (an.abs() + fd.abs()).max(FD_FLOOR);
                if rel > worst {
                    worst = rel;
                    worst_at = format!("config {trial} {}[{i}]: analytic {an:.6e} numeric {fd:.6e}", model.parameters()[p].0);
                }
                checked += 1;
            }
        }
    }
    outcome(worst <= 1e-4, format!("{checked} parameters over 20 configs, worst rel err {worst:.2e} ({worst_at})"))
}

fn max_norm_fuzz() -> Outcome {
    let mut r = rng(5);
    let max_norm = 1.0;
    let config = MlpConfig {
        input_dim: 12,
        hidden_dim: 24,
        n_residual_blocks: 2,
        output_dim: 6,
        dropout_rate: 0.3,
        max_norm,
        seed: 5,
        tail_dims: vec![10],
    };
    let mut model = MlpModel::init_kaiming(&config).unwrap();
    let mut state = AdamState::new(&model);
    let tc = TrainConfig::default();
    let mut worst: f64 = 0.0;
    for t in 1..=1000u64 {
        let n = r.random_range(2..32);
        let scale = 10f64.powf(r.random_range(-2.0..3.0));
        let x = Array2::from_shape_fn((n, 12), |_| scale * r.random_range(-1.0..1.0));
        let y = Array2::from_shape_fn((n, 6), |_| scale * r.random_range(-1.0..1.0));
        let (out, cache) = model.forward(&x, Mode::Train(&mut r)).unwrap();
        let (_, dout) = loss_and_grad(Loss::Mse, &out, &y);
        let grads = model.backward(&cache.unwrap(), &dout);
        let lr = 10f64.powf(r.random_range(-4.0..0.0));
        adam_step(&mut model, &grads, &mut state, t, lr, &tc);
        for (_, kind, data) in model.parameters() {
            if let ParamKind::Weight { cols, .. } = kind {
                for row in data.chunks_exact(cols) {
                    worst = worst.max(row.iter().map(|w| w * w).sum::<f64>().sqrt());
                }
            }
        }
    }
    outcome(worst <= max_norm + 1e-9, format!("1000 Adam steps, largest row norm {worst:.12}"))
}

fn exact_input_recovery() -> Outcome {
    let cfg = SynthConfig { seed: 6, ..SynthConfig::default() };
    let pairs = generate_pairs(&cfg, 0..1000, Execution::Sequential).unwrap();
    let mut worst: f64 = 0.0;
    for p in &pairs {
        let out = refine(&p.pose3d, &p.left2d, &p.intrinsics, &SearchConfig::default()).unwrap();
        for (a, b) in out.pose_abs.joints.iter().zip(&p.pose3d_abs.joints) {
            worst = worst.max((a.x - b.x).abs()).max((a.y - b.y).abs()).max((a.z - b.z).abs());
        }
    }
    outcome(worst <= 1.0, format!("1000 samples, worst coordinate error {worst:.4} mm"))
}

fn mean(v: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    s / n as f64
}

fn desk_scale_training(lines: &mut Vec<(String, Outcome)>) -> Outcome {
    let t = Instant::now();
    let all = generate_pairs(&SynthConfig::default(), 0..20_000, Execution::Parallel).unwrap();
    let (tr, te) = split_indices(all.len(), 0.1);
    let train: Vec<TrainingPair> = tr.iter().map(|&i| all[i].clone()).collect();
    let test: Vec<TrainingPair> = te.iter().map(|&i| all[i].clone()).collect();
    let shape = NetShape { hidden_dim: 256, n_residual_blocks: 2, seed: 1, ..NetShape::default() };
    let tc = TrainConfig { epochs: 50, seed: 3, ..TrainConfig::default() };

    let (vm, _) = train_view_synthesis(&train, &shape, &tc, 500.0).unwrap();
    let pck = mean(test.iter().map(|p| {
        let right = denormalize2d(&predict_right(&vm, &normalize2d(&p.left2d, CROP_SIZE)).unwrap(), CROP_SIZE);
        pckh(&right, &p.right2d, &p.right2d.schema, PCKH_ALPHA).unwrap()
    }));
    let (rm, _) = train_reconstruction(&train, &vm, &shape, &tc, ReconMode::SelfSynthesized).unwrap();
    let (mm, _) = train_monocular(&train, &shape, &tc).unwrap();
    let stereo = Lifter::new(Some(vm), rm).unwrap();
    let mono = Lifter::new(None, mm).unwrap();

    let lefts: Vec<&Pose2D> = test.iter().map(|p| &p.left2d).collect();
    let cs = stereo.predict_coarse_batch(&lefts).unwrap();
    let cm = mono.predict_coarse_batch(&lefts).unwrap();
    let e_stereo = mean(test.iter().zip(&cs).map(|(p, c)| mpjpe_protocol1(c, &p.pose3d).unwrap()));
    let e_mono = mean(test.iter().zip(&cm).map(|(p, c)| mpjpe_protocol1(c, &p.pose3d).unwrap()));
    let e_refined = mean(test.iter().zip(&cs).map(|(p, c)| {
        let r = refine(c, &p.left2d, &p.intrinsics, &SearchConfig::default()).unwrap();
        mpjpe_protocol1(&r.pose_rel, &p.pose3d).unwrap()
    }));
    let dt = t.elapsed();

    let a = outcome(pck >= 0.95, format!("view synthesis held-out PCKh@0.5 {pck:.4} (need >= 0.95)"));
    let b = outcome(
        e_stereo <= e_mono,
        format!("stereo-input MPJPE {e_stereo:.2} mm vs monocular {e_mono:.2} mm (need stereo <= mono)"),
    );
    let c = outcome(e_refined <= e_stereo, format!("refined MPJPE {e_refined:.2} mm vs coarse {e_stereo:.2} mm"));
    let pass = a.pass && b.pass && c.pass && dt < Duration::from_secs(30 * 60);
    lines.push(("7a".into(), a));
    lines.push(("7b".into(), b));
    lines.push(("7c".into(), c));
    outcome(pass, format!("{} held-out of {} pairs, width 256, 50 epochs, {dt:.0?} (budget 30 min)", test.len(), all.len()))
}

const ABLATION_CONFIG: &str = "
[net]
hidden_dim = 256
n_residual_blocks = 2
seed = 1
[train]
epochs = 30
seed = 3
";

fn dx_ablation_cli() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("ablation.toml"), ABLATION_CONFIG).unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_stereolift"))
        .args(["--config", "ablation.toml", "report", "ablation", "--out", "report", "--max-spread", "0.1"])
        .current_dir(dir.path())
        .output()
        .unwrap();
    let text = String::from_utf8_lossy(&out.stdout);
    let Ok(summary) = serde_json::from_str::<serde_json::Value>(text.trim()) else {
        return outcome(false, format!("no summary: {}", String::from_utf8_lossy(&out.stderr)));
    };
    let rows: Vec<(f64, f64)> = summary["rows"]
        .as_array()
        .map(|rs| rs.iter().map(|r| (r["dx_mm"].as_f64().unwrap(), r["mpjpe_mm"].as_f64().unwrap())).collect())
        .unwrap_or_default();
    let spread = summary["spread"].as_f64().unwrap_or(f64::INFINITY);
    let csv = dir.path().join("report/dx_ablation.csv").exists();
    let dxs: Vec<f64> = rows.iter().map(|r| r.0).collect();
    let table: Vec<String> = rows.iter().map(|(d, e)| format!("{d}:{e:.2}")).collect();
    outcome(
        out.status.success() && csv && dxs == [250.0, 500.0, 750.0] && spread < 0.1,
        format!("MPJPE by dx [{}] mm, relative spread {:.2}% (need < 10%)", table.join(", "), 100.0 * spread),
    )
}

fn labeling_throughput() -> Outcome {
    let synth = SynthConfig { seed: 9, ..SynthConfig::default() };
    let warm = generate_pairs(&synth, 0..2000, Execution::Parallel).unwrap();
    let shape = NetShape::default();
    let tc = TrainConfig { epochs: 1, seed: 2, ..TrainConfig::default() };
    let (vm, _) = train_view_synthesis(&warm, &shape, &tc, synth.dx).unwrap();
    let (rm, _) = train_reconstruction(&warm, &vm, &shape, &tc, ReconMode::SelfSynthesized).unwrap();
    let lifter = Lifter::new(Some(vm), rm).unwrap();

    let pairs = generate_pairs(&synth, 10_000..20_000, Execution::Parallel).unwrap();
    let mut input = Vec::new();
    for (i, p) in pairs.iter().enumerate() {
        let mut rec = DatasetRecord::from_pair(record_id(synth.seed, 10_000 + i as u64), p, synth.dx);
        rec.joints3d_rel = None;
        rec.joints3d_abs = None;
        input.extend_from_slice(rec.to_line().as_bytes());
        input.push(b'\n');
    }
    let cfg = LabelConfig::default();
    let mut runs = Vec::new();
    for _ in 0..2 {
        let mut out = Vec::new();
        let t = Instant::now();
        let summary = label_stream(BufReader::new(input.as_slice()), &mut out, &lifter, &cfg, Execution::Sequential).unwrap();
        runs.push((out, t.elapsed(), summary.labeled));
    }
    let identical = runs[0].0 == runs[1].0;
    let slowest = runs.iter().map(|r| r.1).max().unwrap();
    let all_labeled = runs.iter().all(|r| r.2 == 10_000);
    outcome(
        identical && all_labeled && slowest < Duration::from_secs(60),
        format!("10000 records x2, byte-identical: {identical}, all labeled: {all_labeled}, slowest run {slowest:.2?} single-core scan"),
    )
}

fn metric_examples() -> Outcome {
    let s = Arc::new(JointSchema::h36m16());
    let gt3: Vec<Point3> = (0..16).map(|i| Point3::new(if i == 0 { 0.0 } else { 10.0 * i as f64 }, -20.0 * i as f64, 5.0 * i as f64)).collect();
    let gt = Pose3D::new(s.clone(), gt3.clone(), Frame::RootRelative).unwrap();
    let shifted = Pose3D::new(s.clone(), gt3.iter().map(|p| p.add(Point3::new(50.0, 0.0, 0.0))).collect(), Frame::Absolute).unwrap();
    let mut one = gt3.clone();
    one[5].x += 32.0;
    let one = Pose3D::new(s.clone(), one, Frame::RootRelative).unwrap();
    let mut checks = vec![
        ("mpjpe identical", mpjpe_protocol1(&gt, &gt).unwrap() == 0.0),
        ("mpjpe translation", mpjpe_protocol1(&shifted, &gt).unwrap() == 0.0),
        ("mpjpe one joint 32 mm", mpjpe_protocol1(&one, &gt).unwrap() == 2.0),
    ];

    let mut gt2: Vec<Pixel2> = (0..16).map(|i| Pixel2::new(7.0 * i as f64, 3.0 * i as f64)).collect();
    gt2[s.neck_index] = Pixel2::new(100.0, 100.0);
    gt2[s.head_top_index] = Pixel2::new(100.0, 40.0);
    let gt2 = Pose2D::new(s.clone(), gt2);
    let mut off = gt2.clone();
    off.joints[3].u += 31.0;
    let mut flat = gt2.clone();
    flat.joints[s.head_top_index] = flat.joints[s.neck_index];
    checks.push(("pckh identical", pckh(&gt2, &gt2, &s, PCKH_ALPHA).unwrap() == 1.0));
    checks.push(("pckh 15/16", pckh(&off, &gt2, &s, PCKH_ALPHA).unwrap() == 0.9375));
    checks.push(("pckh zero head", pckh(&gt2, &flat, &s, PCKH_ALPHA).is_err()));

    let moved = |d: f64| {
        let j = gt3.iter().enumerate().map(|(i, p)| if i == 0 { *p } else { p.add(Point3::new(0.0, 0.0, d)) }).collect();
        Pose3D::new(s.clone(), j, Frame::RootRelative).unwrap()
    };
    let same = pck3d_auc(&gt, &gt, 150.0, 31).unwrap();
    let edge = pck3d_auc(&moved(150.0), &gt, 150.0, 31).unwrap();
    let far = pck3d_auc(&moved(1000.0), &gt, 150.0, 31).unwrap();
    checks.push(("pck/auc identical", same.pck == 1.0 && same.auc == 1.0));
    checks.push(("pck/auc at 150 mm", edge.pck == 1.0 && edge.auc == 1.0 / 31.0));
    checks.push(("pck/auc at 1000 mm", far.pck == 0.0 && far.auc == 0.0));

    let failed: Vec<&str> = checks.iter().filter(|c| !c.1).map(|c| c.0).collect();
    outcome(failed.is_empty(), format!("{} examples, failed: {failed:?}", checks.len()))
}

fn action_module() -> Outcome {
    let settings = Config::default().action;
    let mut full_acc = Vec::new();
    let mut flat_acc = Vec::new();
    for seed in 0..5u64 {
        let train = gen_motion_dataset(seed, settings.n_per_class).unwrap();
        let test = gen_motion_dataset(1000 + seed, 40).unwrap();
        let tc = TrainConfig { seed, ..settings.train.clone() };
        for (ablate_depth, acc) in [(false, &mut full_acc), (true, &mut flat_acc)] {
            let cfg = ActionConfig { seed, ablate_depth, ..settings.classifier.clone() };
            let (m, _) = train_action(&train, &tc, &cfg).unwrap();
            acc.push(action::accuracy(&m, &test).unwrap());
        }
    }
    let mut train = gen_motion_dataset(7, settings.n_per_class).unwrap();
    let mut labels: Vec<usize> = train.iter().map(|s| s.label).collect();
    labels.shuffle(&mut rng(7));
    train = train
        .into_iter()
        .zip(labels)
        .map(|(s, l)| ActionSequence::new(s.frames, l).unwrap())
        .collect();
    let (m, _) = train_action(&train, &TrainConfig { seed: 7, ..settings.train.clone() }, &settings.classifier).unwrap();
    let shuffled = action::accuracy(&m, &gen_motion_dataset(1007, 40).unwrap()).unwrap();

    let accurate = full_acc.iter().all(|&a| a >= 0.90);
    let sensitive = full_acc.iter().zip(&flat_acc).all(|(f, d)| f > d);
    let chance = (shuffled - 0.2).abs() <= 0.1;
    let fmt = |v: &[f64]| v.iter().map(|a| format!("{a:.3}")).collect::<Vec<_>>().join(" ");
    outcome(
        accurate && sensitive && chance,
        format!(
            "held-out accuracy full [{}] depth-ablated [{}], shuffled labels {shuffled:.3}",
            fmt(&full_acc),
            fmt(&flat_acc)
        ),
    )
}

fn main() -> ExitCode {
    // Let `cargo test -- --list` and filtered runs through without work.
    if std::env::args().any(|a| a == "--list") {
        return ExitCode::SUCCESS;
    }
    let only: Option<Vec<u32>> = std::env::var("ACCEPTANCE_ONLY")
        .ok()
        .map(|v| v.split(',').filter_map(|s| s.trim().parse().ok()).collect());
    let wanted = |n: u32| only.as_ref().is_none_or(|o| o.contains(&n));

    let criteria: [(u32, &str); 11] = [
        (1, "zero-pixel reprojection"),
        (2, "scan vs closed form"),
        (3, "stereo geometry invariants"),
        (4, "gradient correctness"),
        (5, "max-norm invariant"),
        (6, "exact-input recovery"),
        (7, "desk-scale training"),
        (8, "dx ablation harness"),
        (9, "labeling determinism and throughput"),
        (10, "metric examples"),
        (11, "action module"),
    ];
    let mut failed = 0;
    for (n, name) in criteria {
        if !wanted(n) {
            continue;
        }
        let t = Instant::now();
        let mut sub = Vec::new();
        let o = match n {
            1 => refined_reprojection(),
            2 => scan_matches_closed_form(),
            3 => stereo_geometry(),
            4 => gradients(),
            5 => max_norm_fuzz(),
            6 => exact_input_recovery(),
            7 => desk_scale_training(&mut sub),
            8 => dx_ablation_cli(),
            9 => labeling_throughput(),
            10 => metric_examples(),
            _ => action_module(),
        };
        for (id, s) in &sub {
            println!("  {id} {}: {}", if s.pass { "PASS" } else { "FAIL" }, s.detail);
        }
        println!("{} criterion {n} ({name}): {} [{:.1?}]", if o.pass { "PASS" } else { "FAIL" }, o.detail, t.elapsed());
        if !o.pass {
            failed += 1;
        }
    }
    println!("acceptance: {failed} failed");
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
