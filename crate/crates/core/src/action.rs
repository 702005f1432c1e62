//! Action classification from short sequences of root-relative 3D poses.

use std::f64::consts::PI;
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::sync::Arc;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::error::{Error, Result};
use crate::geometry::Point3;
use crate::jsonfmt;
use crate::neuralnet::{train, Loss, MlpConfig, MlpModel, ModelFile, TrainConfig, TrainReport};
use crate::par::derive_seed;
use crate::skeleton::{Frame, JointSchema, Pose3D, DEFAULT_SCALE_MM};
use crate::synthgen::{rest_directions, SynthConfig};

pub const SEQUENCE_LEN: usize = 25;

/// Synthetic motion classes. The two reaches trace the same image-plane
/// path and differ only in depth.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MotionClass {
    ArmRaise,
    Squat,
    Wave,
    ReachForward,
    ReachBackward,
}

impl MotionClass {
    pub const ALL: [MotionClass; 5] = [
        MotionClass::ArmRaise,
        MotionClass::Squat,
        MotionClass::Wave,
        MotionClass::ReachForward,
        MotionClass::ReachBackward,
    ];

    pub fn label(self) -> usize {
        Self::ALL.iter().position(|&c| c == self).expect("listed")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ActionSequence {
    pub frames: Vec<Pose3D>,
    pub label: usize,
}

impl ActionSequence {
    pub fn new(frames: Vec<Pose3D>, label: usize) -> Result<Self> {
        if frames.len() != SEQUENCE_LEN {
            return Err(Error::ShapeMismatch {
                expected: format!("{SEQUENCE_LEN} frames"),
                found: format!("{} frames", frames.len()),
            });
        }
        for f in &frames {
            f.expect_frame(Frame::RootRelative)?;
            frames[0].schema.ensure_same(&f.schema)?;
        }
        Ok(ActionSequence { frames, label })
    }

    pub fn schema(&self) -> &Arc<JointSchema> {
        &self.frames[0].schema
    }

    /// Flattened network input in units of the 3D normalization scale.
    /// With `ablate_depth` every z is replaced by 0.
    pub fn features(&self, ablate_depth: bool) -> Vec<f64> {
        self.frames
            .iter()
            .flat_map(|f| f.joints.iter())
            .flat_map(|p| [p.x, p.y, if ablate_depth { 0.0 } else { p.z }])
            .map(|v| v / DEFAULT_SCALE_MM)
            .collect()
    }
}

/// Unit vector at `angle` from `d` toward `toward` (both unit, orthogonal).
fn rotate(d: Point3, angle: f64, toward: Point3) -> Point3 {
    d.scale(angle.cos()).add(toward.scale(angle.sin()))
}

/// One sequence of `class`, drawn from `rng`.
fn motion(class: MotionClass, rng: &mut impl Rng, schema: &Arc<JointSchema>) -> Result<ActionSequence> {
    let rest = rest_directions();
    let ranges = SynthConfig::default().bone_length_ranges;
    let body_scale = rng.random_range(0.9..1.1);
    let lengths: Vec<f64> = ranges.iter().map(|&(lo, hi)| (lo + hi) / 2.0 * body_scale).collect();
    let yaw: f64 = rng.random_range(-0.2..0.2);
    let amp: f64 = rng.random_range(0.8..1.2);
    let t0: f64 = rng.random_range(-0.1..0.1);
    let speed: f64 = rng.random_range(0.85..1.15);
    let wave_cycles: f64 = rng.random_range(1.5..2.5);
    let noise = Normal::new(0.0, 10.0).expect("finite");

    let down = Point3::new(0.0, 1.0, 0.0);
    let up = Point3::new(0.0, -1.0, 0.0);
    let right = Point3::new(-1.0, 0.0, 0.0);
    let toward_cam = Point3::new(0.0, 0.0, -1.0);
    let away = Point3::new(0.0, 0.0, 1.0);
    // Bones ending at r_elbow and r_wrist.
    let (r_upper, r_fore) = (14, 15);

    let (s, c) = yaw.sin_cos();
    let mut frames = Vec::with_capacity(SEQUENCE_LEN);
    for f in 0..SEQUENCE_LEN {
        let t = ((f as f64 / (SEQUENCE_LEN - 1) as f64 - t0) * speed).clamp(0.0, 1.0);
        let bump = (PI * t).sin();
        let mut dirs = rest;
        match class {
            MotionClass::ArmRaise => {
                let d = rotate(down, 1.4 * amp * bump, right);
                dirs[r_upper] = d;
                dirs[r_fore] = d;
            }
            MotionClass::Squat => {
                let a = 1.0 * amp * bump;
                for (thigh, shin) in [(2, 3), (5, 6)] {
                    dirs[thigh] = rotate(down, a, toward_cam);
                    dirs[shin] = rotate(down, a, away);
                }
            }
            MotionClass::Wave => {
                dirs[r_upper] = right;
                let phi = 0.6 * amp * (2.0 * PI * wave_cycles * t).sin();
                dirs[r_fore] = rotate(up, phi, right);
            }
            MotionClass::ReachForward | MotionClass::ReachBackward => {
                let toward = if class == MotionClass::ReachForward { toward_cam } else { away };
                let d = rotate(down, 1.4 * amp * bump, toward);
                dirs[r_upper] = d;
                dirs[r_fore] = d;
            }
        }
        let mut local = vec![Point3::ORIGIN; schema.len()];
        for j in 0..schema.len() {
            if j != schema.root_index {
                local[j] = local[schema.parent[j]].add(dirs[j].scale(lengths[j]));
            }
        }
        let joints = local
            .iter()
            .enumerate()
            .map(|(j, p)| {
                let q = Point3::new(c * p.x + s * p.z, p.y, -s * p.x + c * p.z);
                if j == schema.root_index {
                    q
                } else {
                    q.add(Point3::new(noise.sample(rng), noise.sample(rng), noise.sample(rng)))
                }
            })
            .collect();
        frames.push(Pose3D::new(schema.clone(), joints, Frame::RootRelative)?);
    }
    ActionSequence::new(frames, class.label())
}

/// `n_per_class` sequences of every class, interleaved by class.
pub fn gen_motion_dataset(seed: u64, n_per_class: usize) -> Result<Vec<ActionSequence>> {
    if n_per_class == 0 {
        return Err(Error::EmptyDataset);
    }
    let schema = Arc::new(JointSchema::h36m16());
    let mut out = Vec::with_capacity(n_per_class * MotionClass::ALL.len());
    for i in 0..n_per_class {
        for class in MotionClass::ALL {
            let idx = (i * MotionClass::ALL.len() + class.label()) as u64;
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, idx));
            out.push(motion(class, &mut rng, &schema)?);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ActionConfig {
    pub hidden: Vec<usize>,
    pub dropout_rate: f64,
    pub max_norm: f64,
    pub seed: u64,
    /// Train and classify with every z set to a constant.
    pub ablate_depth: bool,
}

impl Default for ActionConfig {
    fn default() -> Self {
        ActionConfig {
            hidden: vec![512, 256],
            dropout_rate: 0.3,
            max_norm: 1.0,
            seed: 0,
            ablate_depth: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ActionModel {
    pub net: MlpModel,
    pub schema: Arc<JointSchema>,
    pub n_classes: usize,
    pub ablate_depth: bool,
}

fn feature_rows(seqs: &[ActionSequence], ablate: bool) -> Array2<f64> {
    let width = seqs.first().map_or(0, |s| s.features(false).len());
    let flat: Vec<f64> = seqs.iter().flat_map(|s| s.features(ablate)).collect();
    Array2::from_shape_vec((seqs.len(), width), flat).expect("uniform sequences")
}

/// Softmax cross-entropy training on flattened sequences.
pub fn train_action(seqs: &[ActionSequence], tc: &TrainConfig, cfg: &ActionConfig) -> Result<(ActionModel, TrainReport)> {
    let first = seqs.first().ok_or(Error::EmptyDataset)?;
    let schema = first.schema().clone();
    for s in seqs {
        schema.ensure_same(s.schema())?;
    }
    let n_classes = seqs.iter().map(|s| s.label).max().expect("non-empty") + 1;
    if seqs.iter().all(|s| s.label == first.label) {
        return Err(Error::SingleClass);
    }
    let (&h0, tail) = cfg
        .hidden
        .split_first()
        .ok_or_else(|| Error::InvalidConfig("action classifier needs at least one hidden layer".into()))?;
    let mlp = MlpConfig {
        input_dim: SEQUENCE_LEN * schema.len() * 3,
        hidden_dim: h0,
        n_residual_blocks: 0,
        output_dim: n_classes,
        dropout_rate: cfg.dropout_rate,
        max_norm: cfg.max_norm,
        seed: cfg.seed,
        tail_dims: tail.to_vec(),
    };
    let mut net = MlpModel::init_kaiming(&mlp)?;
    let x = feature_rows(seqs, cfg.ablate_depth);
    let mut y = Array2::zeros((seqs.len(), n_classes));
    for (i, s) in seqs.iter().enumerate() {
        y[[i, s.label]] = 1.0;
    }
    let report = train(&mut net, &x, &y, tc, Loss::SoftmaxCrossEntropy)?;
    Ok((
        ActionModel {
            net,
            schema,
            n_classes,
            ablate_depth: cfg.ablate_depth,
        },
        report,
    ))
}

fn softmax_rows(mut logits: Array2<f64>) -> Array2<f64> {
    for mut row in logits.rows_mut() {
        let max = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        row.mapv_inplace(|v| (v - max).exp());
        let z = row.sum();
        row /= z;
    }
    logits
}

/// Class probabilities for each sequence.
pub fn classify_batch(m: &ActionModel, seqs: &[ActionSequence]) -> Result<Array2<f64>> {
    for s in seqs {
        m.schema.ensure_same(s.schema())?;
    }
    if seqs.is_empty() {
        return Ok(Array2::zeros((0, m.n_classes)));
    }
    Ok(softmax_rows(m.net.predict(&feature_rows(seqs, m.ablate_depth))?))
}

pub fn classify(m: &ActionModel, seq: &ActionSequence) -> Result<Vec<f64>> {
    Ok(classify_batch(m, std::slice::from_ref(seq))?.row(0).to_vec())
}

fn argmax(row: ndarray::ArrayView1<f64>) -> usize {
    row.iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |best, (i, &p)| if p > best.1 { (i, p) } else { best })
        .0
}

/// Fraction of sequences whose most probable class equals the label.
pub fn accuracy(m: &ActionModel, seqs: &[ActionSequence]) -> Result<f64> {
    if seqs.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let probs = classify_batch(m, seqs)?;
    let hits = probs
        .rows()
        .into_iter()
        .zip(seqs)
        .filter(|(row, s)| argmax(*row) == s.label)
        .count();
    Ok(hits as f64 / seqs.len() as f64)
}

impl ActionModel {
    pub fn to_file(&self) -> ModelFile {
        let mut meta = Map::new();
        meta.insert("schema".into(), Value::from(self.schema.name.clone()));
        meta.insert("n_classes".into(), Value::from(self.n_classes));
        meta.insert("ablate_depth".into(), Value::from(self.ablate_depth));
        ModelFile::from_model("action", &self.net, meta)
    }

    pub fn from_file(f: &ModelFile) -> Result<Self> {
        if f.kind != "action" {
            return Err(Error::Model(format!("expected an action model, found {}", f.kind)));
        }
        let missing = |k: &str| Error::Model(format!("meta.{k} missing"));
        let schema = f.meta.get("schema").and_then(Value::as_str).ok_or_else(|| missing("schema"))?;
        let schema = Arc::new(JointSchema::by_name(schema)?);
        let n_classes = f.meta.get("n_classes").and_then(Value::as_u64).ok_or_else(|| missing("n_classes"))? as usize;
        let ablate_depth = f.meta.get("ablate_depth").and_then(Value::as_bool).unwrap_or(false);
        let net = f.to_model()?;
        if net.config.input_dim != SEQUENCE_LEN * schema.len() * 3 || net.config.output_dim != n_classes {
            return Err(Error::Model("action model dims do not match schema".into()));
        }
        Ok(ActionModel {
            net,
            schema,
            n_classes,
            ablate_depth,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.to_file().save(path)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_file(&ModelFile::load(path)?)
    }
}

/// One line of a sequence file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequenceRecord {
    pub id: String,
    pub schema: String,
    pub label: usize,
    pub frames: Vec<Vec<[f64; 3]>>,
}

impl SequenceRecord {
    pub fn from_sequence(id: String, s: &ActionSequence) -> Self {
        SequenceRecord {
            id,
            schema: s.schema().name.clone(),
            label: s.label,
            frames: s
                .frames
                .iter()
                .map(|f| f.joints.iter().map(|p| [p.x, p.y, p.z]).collect())
                .collect(),
        }
    }

    pub fn to_sequence(&self) -> Result<ActionSequence> {
        let schema = Arc::new(JointSchema::by_name(&self.schema)?);
        let frames = self
            .frames
            .iter()
            .map(|f| {
                let joints = f.iter().map(|&[x, y, z]| Point3::new(x, y, z)).collect();
                Pose3D::new(schema.clone(), joints, Frame::RootRelative)
            })
            .collect::<Result<_>>()?;
        ActionSequence::new(frames, self.label)
    }
}

pub fn write_sequences<W: Write>(seqs: &[ActionSequence], w: &mut W) -> Result<()> {
    for (i, s) in seqs.iter().enumerate() {
        let rec = SequenceRecord::from_sequence(format!("seq-{i:06}"), s);
        writeln!(w, "{}", jsonfmt::to_string(&rec).expect("finite sequences"))?;
    }
    Ok(())
}

pub fn read_sequences<R: BufRead>(r: R) -> Result<Vec<ActionSequence>> {
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: SequenceRecord = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: i + 1,
            msg: e.to_string(),
        })?;
        out.push(rec.to_sequence()?);
    }
    Ok(out)
}

pub fn read_sequences_file(path: impl AsRef<Path>) -> Result<Vec<ActionSequence>> {
    let path = path.as_ref();
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    read_sequences(BufReader::new(f))
}
