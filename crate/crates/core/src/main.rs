use std::collections::HashMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};

use stereolift::action::{self, ActionConfig, ActionModel};
use stereolift::config::Config;
use stereolift::geosearch::refine;
use stereolift::lifting::{
    id_key, is_held_out, train_monocular, train_reconstruction, train_view_synthesis, Lifter, ReconMode, ReconModel,
    ViewSynthModel,
};
use stereolift::metrics::{self, MetricReport, CSV_HEADER, PCK3D_THRESHOLD_MM, PCKH_ALPHA};
use stereolift::par::Execution;
use stereolift::pipeline::{self, read_records, DatasetRecord, LabelSummary};
use stereolift::report::{self, AblationSettings};
use stereolift::skeleton::{denormalize2d, normalize2d, JointSchema, Pose2D, Pose3D, CROP_SIZE};
use stereolift::synthgen::{generate_dataset, TrainingPair};
use stereolift::{jsonfmt, Error, Result};

#[derive(Parser)]
#[command(name = "stereolift", version, about = "3D pose labels from 2D keypoints via virtual stereo lifting")]
struct Cli {
    /// TOML configuration file; missing keys take their defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides every seed in the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Run on the calling thread only.
    #[arg(long, global = true)]
    sequential: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Print the effective configuration as TOML.
    Config,
    /// Synthetic stereo pairs.
    Synth {
        #[command(subcommand)]
        command: SynthCommand,
    },
    /// Train a lifting network.
    Train {
        #[command(subcommand)]
        command: TrainCommand,
    },
    /// Lift and refine every record of a dataset.
    Label(LabelArgs),
    /// Run the depth search on records that already carry a coarse 3D pose.
    Refine(IoArgs),
    /// Check every record invariant of a dataset.
    Validate(ValidateArgs),
    /// Compare predictions against ground truth.
    Eval {
        #[command(subcommand)]
        command: EvalCommand,
    },
    /// Action classification on synthetic motion sequences.
    Action {
        #[command(subcommand)]
        command: ActionCommand,
    },
    /// CSV tables and SVG plots.
    Report {
        #[command(subcommand)]
        command: ReportCommand,
    },
}

#[derive(Subcommand)]
enum SynthCommand {
    /// Write `n` synthetic records.
    Gen {
        #[arg(long)]
        n: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    TeacherForced,
    SelfSynthesized,
}

#[derive(Subcommand)]
enum TrainCommand {
    /// Left view -> right view.
    Viewsynth {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Stereo (or, with --monocular, left-only) 2D -> root-relative 3D.
    Recon {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, required_unless_present = "monocular")]
        viewsynth: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "self-synthesized")]
        mode: ModeArg,
        #[arg(long)]
        monocular: bool,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct IoArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct LabelArgs {
    #[command(flatten)]
    io: IoArgs,
    #[arg(long)]
    viewsynth: Option<PathBuf>,
    #[arg(long)]
    recon: PathBuf,
}

#[derive(Args)]
struct ValidateArgs {
    #[arg(long)]
    input: PathBuf,
    /// Write violations as JSON lines.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    pred: PathBuf,
    #[arg(long)]
    gt: PathBuf,
    /// Append the metric as CSV rows.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum EvalCommand {
    /// Mean per-joint position error of root-relative 3D joints, mm.
    Mpjpe {
        #[command(flatten)]
        args: EvalArgs,
        /// Fail (exit 1) above this error.
        #[arg(long)]
        max_mm: Option<f64>,
    },
    /// 2D PCKh@0.5 of `joints2d`.
    Pckh {
        #[command(flatten)]
        args: EvalArgs,
        #[arg(long)]
        min: Option<f64>,
    },
    /// 3D PCK at 150 mm and its AUC.
    Pck3d {
        #[command(flatten)]
        args: EvalArgs,
        #[arg(long)]
        min: Option<f64>,
    },
}

#[derive(Subcommand)]
enum ActionCommand {
    /// Write labeled synthetic motion sequences.
    Gen {
        #[arg(long)]
        n_per_class: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a classifier on a sequence file.
    Train {
        #[arg(long)]
        data: PathBuf,
        /// Set every z to a constant before training and classification.
        #[arg(long)]
        ablate_depth: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Accuracy of a classifier on a sequence file.
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Exit with status 1 below this accuracy.
        #[arg(long)]
        min_accuracy: Option<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Subcommand)]
enum ReportCommand {
    /// Merge loss CSVs written by the train commands.
    Loss {
        #[arg(long, required = true)]
        input: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        svg: bool,
    },
    /// Per-joint 3D error histograms.
    Errors {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train and evaluate one lifter per stereo baseline.
    Ablation {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        svg: bool,
        /// Fail (exit 1) when the results differ by this relative amount or more.
        #[arg(long)]
        max_spread: Option<f64>,
    },
}

/// Outcome of a command: a JSON summary plus whether a threshold failed.
struct Outcome {
    summary: Value,
    failed: bool,
}

impl Outcome {
    fn ok(summary: Value) -> Self {
        Outcome { summary, failed: false }
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    Ok(BufWriter::new(File::create(path).map_err(|e| Error::io(path, e))?))
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    let mut w = create(path)?;
    w.write_all(text.as_bytes()).map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

fn loss_path(model: &Path) -> PathBuf {
    model.with_extension("loss.csv")
}

fn save_history(model: &Path, name: &str, history: &[f64]) -> Result<PathBuf> {
    let path = loss_path(model);
    let mut w = create(&path)?;
    report::write_loss_csv(&[(name.to_string(), history.to_vec())], &mut w)?;
    w.flush().map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

/// Training pairs of a synthetic dataset split into (train, held-out).
fn load_pairs(path: &Path, cfg: &Config) -> Result<(Vec<TrainingPair>, Vec<TrainingPair>)> {
    let recs = read_records(path)?;
    if recs.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let schema = Arc::new(JointSchema::by_name(&recs[0].schema_name)?);
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for r in &recs {
        let pair = r.training_pair(&schema, cfg.synth.dx)?;
        if is_held_out(id_key(&r.id), cfg.test_fraction) {
            test.push(pair);
        } else {
            train.push(pair);
        }
    }
    Ok((train, test))
}

fn by_id(path: &Path) -> Result<HashMap<String, DatasetRecord>> {
    Ok(read_records(path)?.into_iter().map(|r| (r.id.clone(), r)).collect())
}

/// Pairs prediction and ground-truth records sharing an id, in prediction order.
fn matched(pred: &Path, gt: &Path) -> Result<Vec<(DatasetRecord, DatasetRecord)>> {
    let mut gt = by_id(gt)?;
    let out: Vec<_> = read_records(pred)?
        .into_iter()
        .filter_map(|p| gt.remove(&p.id).map(|g| (p, g)))
        .collect();
    if out.is_empty() {
        return Err(Error::EmptyDataset);
    }
    Ok(out)
}

fn schema_of(rec: &DatasetRecord, cache: &mut HashMap<String, Arc<JointSchema>>) -> Result<Arc<JointSchema>> {
    if let Some(s) = cache.get(&rec.schema_name) {
        return Ok(s.clone());
    }
    let s = Arc::new(JointSchema::by_name(&rec.schema_name)?);
    cache.insert(rec.schema_name.clone(), s.clone());
    Ok(s)
}

fn pairs3d(pred: &Path, gt: &Path) -> Result<(Vec<(Pose3D, Pose3D)>, Arc<JointSchema>)> {
    let mut cache = HashMap::new();
    let mut out = Vec::new();
    let mut schema = None;
    for (p, g) in matched(pred, gt)? {
        let s = schema_of(&g, &mut cache)?;
        let missing = |id: &str| Error::InvalidConfig(format!("record {id} has no joints3d_rel"));
        let pp = p.pose3d_rel(&s).ok_or_else(|| missing(&p.id))??;
        let gg = g.pose3d_rel(&s).ok_or_else(|| missing(&g.id))??;
        schema.get_or_insert(s);
        out.push((pp, gg));
    }
    Ok((out, schema.expect("at least one pair")))
}

fn append_csv(path: &Option<PathBuf>, rows: &[(&str, &MetricReport)]) -> Result<()> {
    let Some(path) = path else { return Ok(()) };
    let fresh = !path.exists();
    let f = std::fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(f);
    if fresh {
        writeln!(w, "{CSV_HEADER}").map_err(|e| Error::io(path, e))?;
    }
    for (metric, r) in rows {
        r.write_csv_row(metric, &mut w).map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn exec(cli: &Cli) -> Execution {
    if cli.sequential {
        Execution::Sequential
    } else {
        Execution::Parallel
    }
}

fn view_pckh(vm: &ViewSynthModel, test: &[TrainingPair]) -> Result<Option<f64>> {
    if test.is_empty() {
        return Ok(None);
    }
    let pairs: Vec<(Pose2D, Pose2D)> = test
        .iter()
        .map(|p| {
            let right = stereolift::lifting::predict_right(vm, &normalize2d(&p.left2d, CROP_SIZE))?;
            Ok((denormalize2d(&right, CROP_SIZE), p.right2d.clone()))
        })
        .collect::<Result<_>>()?;
    Ok(Some(metrics::pckh_report("heldout", &pairs, &vm.schema, PCKH_ALPHA)?.value))
}

fn run(cli: &Cli) -> Result<Outcome> {
    let mut cfg = match &cli.config {
        Some(p) => Config::load(p)?,
        None => Config::default(),
    };
    if let Some(seed) = cli.seed {
        cfg = cfg.with_seed(seed);
    }
    let exec = exec(cli);

    match &cli.command {
        Command::Config => {
            print!("{}", cfg.to_toml());
            Ok(Outcome::ok(Value::Null))
        }
        Command::Synth {
            command: SynthCommand::Gen { n, out },
        } => {
            let mut w = create(out)?;
            let summary = generate_dataset(&cfg.synth, *n, &mut w, exec)?;
            w.flush().map_err(|e| Error::io(out, e))?;
            Ok(Outcome::ok(json!({ "count": summary.count, "seed": summary.seed, "out": out })))
        }
        Command::Train {
            command: TrainCommand::Viewsynth { data, out },
        } => {
            let (train, test) = load_pairs(data, &cfg)?;
            let (vm, rep) = train_view_synthesis(&train, &cfg.net, &cfg.train, cfg.synth.dx)?;
            vm.save(out)?;
            let loss = save_history(out, "viewsynth", &rep.history)?;
            Ok(Outcome::ok(json!({
                "model": out, "loss_csv": loss, "train": train.len(), "heldout": test.len(),
                "final_loss": rep.history.last(), "heldout_pckh": view_pckh(&vm, &test)?,
            })))
        }
        Command::Train {
            command: TrainCommand::Recon { data, viewsynth, mode, monocular, out },
        } => {
            let (train, test) = load_pairs(data, &cfg)?;
            let (lifter, rep) = if *monocular {
                let (rm, rep) = train_monocular(&train, &cfg.net, &cfg.train)?;
                (Lifter::new(None, rm)?, rep)
            } else {
                let vm = ViewSynthModel::load(viewsynth.as_ref().expect("required by clap"))?;
                let mode = match mode {
                    ModeArg::TeacherForced => ReconMode::TeacherForced,
                    ModeArg::SelfSynthesized => ReconMode::SelfSynthesized,
                };
                let (rm, rep) = train_reconstruction(&train, &vm, &cfg.net, &cfg.train, mode)?;
                (Lifter::new(Some(vm), rm)?, rep)
            };
            lifter.recon.save(out)?;
            let loss = save_history(out, "recon", &rep.history)?;
            let heldout = if test.is_empty() { None } else { Some(report::coarse_mpjpe(&lifter, &test)?) };
            Ok(Outcome::ok(json!({
                "model": out, "loss_csv": loss, "train": train.len(), "heldout": test.len(),
                "final_loss": rep.history.last(), "heldout_mpjpe_mm": heldout,
            })))
        }
        Command::Label(args) => {
            let vm = args.viewsynth.as_ref().map(ViewSynthModel::load).transpose()?;
            let lifter = Lifter::new(vm, ReconModel::load(&args.recon)?)?;
            let summary: LabelSummary = pipeline::label_dataset(&args.io.input, &args.io.out, &lifter, &cfg.label, exec)?;
            Ok(Outcome::ok(serde_json::to_value(summary).expect("summary")))
        }
        Command::Refine(io) => {
            let recs = read_records(&io.input)?;
            let mut cache = HashMap::new();
            let mut w = create(&io.out)?;
            let (mut refined, mut failed) = (0u64, 0u64);
            for rec in &recs {
                let result = (|| {
                    let s = schema_of(rec, &mut cache)?;
                    let coarse = rec
                        .pose3d_rel(&s)
                        .ok_or_else(|| Error::InvalidConfig(format!("record {} has no joints3d_rel", rec.id)))??;
                    let k = rec
                        .crop_intrinsics()
                        .ok_or_else(|| Error::InvalidConfig(format!("record {} has no intrinsics", rec.id)))??;
                    refine(&coarse, &rec.pose2d(&s)?, &k, &cfg.search)
                })();
                let mut out = rec.clone();
                match result {
                    Ok(r) => {
                        out.joints3d_rel = Some(r.pose_rel.joints.iter().map(|p| [p.x, p.y, p.z]).collect());
                        out.joints3d_abs = Some(r.pose_abs.joints.iter().map(|p| [p.x, p.y, p.z]).collect());
                        out.delta_z = Some(r.delta_z);
                        out.meta.insert("label_status".into(), Value::from("labeled"));
                        refined += 1;
                    }
                    Err(e) => {
                        out.meta.insert("label_status".into(), Value::from("failed"));
                        out.meta.insert("label_error".into(), Value::from(e.to_string()));
                        failed += 1;
                    }
                }
                writeln!(w, "{}", out.to_line()).map_err(|e| Error::io(&io.out, e))?;
            }
            w.flush().map_err(|e| Error::io(&io.out, e))?;
            Ok(Outcome::ok(json!({ "total": recs.len(), "refined": refined, "failed": failed })))
        }
        Command::Validate(args) => {
            let violations = pipeline::validate_dataset(&args.input, exec)?;
            if let Some(out) = &args.out {
                let mut w = create(out)?;
                for v in &violations {
                    writeln!(w, "{}", jsonfmt::to_string(v).expect("violation")).map_err(|e| Error::io(out, e))?;
                }
                w.flush().map_err(|e| Error::io(out, e))?;
            }
            let first: Vec<_> = violations.iter().take(10).collect();
            Ok(Outcome {
                summary: json!({ "violations": violations.len(), "first": first }),
                failed: !violations.is_empty(),
            })
        }
        Command::Eval { command } => eval(command),
        Command::Action { command } => run_action(command, &cfg),
        Command::Report { command } => run_report(command, &cfg, exec),
    }
}

fn eval(command: &EvalCommand) -> Result<Outcome> {
    match command {
        EvalCommand::Mpjpe { args, max_mm } => {
            let (pairs, _) = pairs3d(&args.pred, &args.gt)?;
            let r = metrics::mpjpe_report("mpjpe", &pairs)?;
            append_csv(&args.out, &[("mpjpe", &r)])?;
            Ok(Outcome {
                failed: max_mm.is_some_and(|t| r.value > t),
                summary: json!({ "metric": "mpjpe", "value": r.value, "count": r.count, "per_joint": r.per_joint }),
            })
        }
        EvalCommand::Pckh { args, min } => {
            let mut cache = HashMap::new();
            let mut pairs = Vec::new();
            let mut schema = None;
            for (p, g) in matched(&args.pred, &args.gt)? {
                let s = schema_of(&g, &mut cache)?;
                pairs.push((p.pose2d(&s)?, g.pose2d(&s)?));
                schema.get_or_insert(s);
            }
            let r = metrics::pckh_report("pckh", &pairs, &schema.expect("non-empty"), PCKH_ALPHA)?;
            append_csv(&args.out, &[("pckh", &r)])?;
            Ok(Outcome {
                failed: min.is_some_and(|t| r.value < t),
                summary: json!({ "metric": "pckh", "value": r.value, "count": r.count, "per_joint": r.per_joint }),
            })
        }
        EvalCommand::Pck3d { args, min } => {
            let (pairs, _) = pairs3d(&args.pred, &args.gt)?;
            let (pck, auc) = metrics::pck3d_reports(&pairs, PCK3D_THRESHOLD_MM, metrics::AUC_STEPS)?;
            append_csv(&args.out, &[("pck3d", &pck), ("auc", &auc)])?;
            Ok(Outcome {
                failed: min.is_some_and(|t| pck.value < t),
                summary: json!({ "metric": "pck3d", "pck": pck.value, "auc": auc.value, "count": pck.count }),
            })
        }
    }
}

fn run_action(command: &ActionCommand, cfg: &Config) -> Result<Outcome> {
    match command {
        ActionCommand::Gen { n_per_class, out } => {
            let seqs = action::gen_motion_dataset(cfg.action.classifier.seed, n_per_class.unwrap_or(cfg.action.n_per_class))?;
            let mut w = create(out)?;
            action::write_sequences(&seqs, &mut w)?;
            w.flush().map_err(|e| Error::io(out, e))?;
            Ok(Outcome::ok(json!({ "count": seqs.len(), "classes": action::MotionClass::ALL.len(), "out": out })))
        }
        ActionCommand::Train { data, ablate_depth, out } => {
            let seqs = action::read_sequences_file(data)?;
            let acfg = ActionConfig {
                ablate_depth: *ablate_depth || cfg.action.classifier.ablate_depth,
                ..cfg.action.classifier.clone()
            };
            let (m, rep) = action::train_action(&seqs, &cfg.action.train, &acfg)?;
            m.save(out)?;
            let loss = save_history(out, "action", &rep.history)?;
            Ok(Outcome::ok(json!({
                "model": out, "loss_csv": loss, "sequences": seqs.len(),
                "train_accuracy": action::accuracy(&m, &seqs)?, "final_loss": rep.history.last(),
            })))
        }
        ActionCommand::Eval { model, data, min_accuracy, out } => {
            let m = ActionModel::load(model)?;
            let seqs = action::read_sequences_file(data)?;
            let acc = action::accuracy(&m, &seqs)?;
            let r = MetricReport {
                name: model.display().to_string(),
                value: acc,
                per_joint: Vec::new(),
                count: seqs.len(),
            };
            append_csv(out, &[("action_accuracy", &r)])?;
            Ok(Outcome {
                failed: min_accuracy.is_some_and(|t| acc < t),
                summary: json!({ "metric": "action_accuracy", "value": acc, "count": seqs.len() }),
            })
        }
    }
}

fn run_report(command: &ReportCommand, cfg: &Config, exec: Execution) -> Result<Outcome> {
    match command {
        ReportCommand::Loss { input, out, svg } => {
            let mut series = Vec::new();
            for p in input {
                let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
                series.extend(report::read_loss_csv(&text)?);
            }
            let csv = out.join("loss.csv");
            let mut w = create(&csv)?;
            report::write_loss_csv(&series, &mut w)?;
            w.flush().map_err(|e| Error::io(&csv, e))?;
            let mut files = vec![csv];
            if *svg {
                let pts: Vec<_> = series
                    .iter()
                    .map(|(n, v)| (n.clone(), v.iter().enumerate().map(|(i, &y)| (i as f64, y)).collect()))
                    .collect();
                let path = out.join("loss.svg");
                write_file(&path, &report::svg_line_plot("Training loss", "epoch", "loss", &pts))?;
                files.push(path);
            }
            Ok(Outcome::ok(json!({ "series": series.len(), "files": files })))
        }
        ReportCommand::Errors { pred, gt, out } => {
            let (pairs, schema) = pairs3d(pred, gt)?;
            let rows = report::error_histograms(&pairs, &schema, cfg.report.histogram_bin_mm)?;
            let path = out.join("joint_errors.csv");
            let mut w = create(&path)?;
            report::write_histogram_csv(&rows, &mut w)?;
            w.flush().map_err(|e| Error::io(&path, e))?;
            let mpjpe = metrics::mpjpe_report("mpjpe", &pairs)?;
            Ok(Outcome::ok(json!({ "records": pairs.len(), "mpjpe": mpjpe.value, "files": [path] })))
        }
        ReportCommand::Ablation { out, svg, max_spread } => {
            let settings = AblationSettings {
                synth: cfg.synth.clone(),
                n_pairs: cfg.report.ablation_pairs,
                test_fraction: cfg.test_fraction,
                net: cfg.net.clone(),
                train: cfg.train.clone(),
            };
            let rows = report::dx_ablation(&settings, &cfg.report.dx_values, exec)?;
            let path = out.join("dx_ablation.csv");
            let mut w = create(&path)?;
            report::write_ablation_csv(&rows, &mut w)?;
            w.flush().map_err(|e| Error::io(&path, e))?;
            let mut files = vec![path];
            if *svg {
                let pts = vec![("mpjpe".to_string(), rows.iter().map(|r| (r.dx_mm, r.mpjpe_mm)).collect())];
                let p = out.join("dx_ablation.svg");
                write_file(&p, &report::svg_line_plot("Baseline ablation", "dx (mm)", "MPJPE (mm)", &pts))?;
                files.push(p);
            }
            let spread = report::ablation_spread(&rows);
            Ok(Outcome {
                failed: max_spread.is_some_and(|t| spread >= t),
                summary: json!({ "rows": rows, "spread": spread, "files": files }),
            })
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(outcome) => {
            if !outcome.summary.is_null() {
                println!("{}", jsonfmt::to_string(&outcome.summary).expect("summary"));
            }
            if outcome.failed {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
