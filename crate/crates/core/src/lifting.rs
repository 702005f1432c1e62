//! The two learned stages: left 2D -> right 2D view synthesis, and stereo 2D
//! -> coarse root-relative 3D reconstruction.

use std::path::Path;
use std::sync::Arc;

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::error::{Error, Result};
use crate::neuralnet::{train, Loss, MlpConfig, MlpModel, ModelFile, TrainConfig, TrainReport};
use crate::par::mix64;
use crate::skeleton::{
    denormalize3d, normalize2d, normalize3d, Frame, JointSchema, Pose2D, Pose3D, CROP_SIZE, DEFAULT_SCALE_MM,
};
use crate::synthgen::TrainingPair;

/// Width, depth and regularization shared by both subnetworks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NetShape {
    pub hidden_dim: usize,
    pub n_residual_blocks: usize,
    pub dropout_rate: f64,
    pub max_norm: f64,
    pub seed: u64,
}

impl Default for NetShape {
    fn default() -> Self {
        NetShape {
            hidden_dim: 1024,
            n_residual_blocks: 2,
            dropout_rate: 0.5,
            max_norm: 1.0,
            seed: 0,
        }
    }
}

impl NetShape {
    pub fn mlp(&self, input_dim: usize, output_dim: usize) -> MlpConfig {
        MlpConfig {
            input_dim,
            hidden_dim: self.hidden_dim,
            n_residual_blocks: self.n_residual_blocks,
            output_dim,
            dropout_rate: self.dropout_rate,
            max_norm: self.max_norm,
            seed: self.seed,
            tail_dims: Vec::new(),
        }
    }
}

/// Where the right half of the reconstruction input comes from during training.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReconMode {
    TeacherForced,
    SelfSynthesized,
}

/// Input layout of a reconstruction network.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReconInput {
    /// `[left || right]`, 4N values.
    Stereo,
    /// Left view only, 2N values.
    Monocular,
}

/// Maps a normalized left-view pose (2N) to the normalized right view (2N).
#[derive(Debug, Clone, PartialEq)]
pub struct ViewSynthModel {
    pub net: MlpModel,
    pub schema: Arc<JointSchema>,
    pub crop_size: f64,
    /// Baseline the training targets were rendered with, mm.
    pub dx: f64,
}

/// Maps normalized 2D input to normalized root-relative 3D (3N).
#[derive(Debug, Clone, PartialEq)]
pub struct ReconModel {
    pub net: MlpModel,
    pub schema: Arc<JointSchema>,
    pub input: ReconInput,
    pub crop_size: f64,
    pub scale_mm: f64,
}

fn check_schema(schema: &JointSchema, pose: &Pose2D) -> Result<()> {
    schema.ensure_same(&pose.schema)
}

fn common_schema(pairs: &[TrainingPair]) -> Result<Arc<JointSchema>> {
    let first = pairs.first().ok_or(Error::EmptyDataset)?;
    let schema = first.left2d.schema.clone();
    for p in pairs {
        schema.ensure_same(&p.left2d.schema)?;
    }
    Ok(schema)
}

fn rows(flat: Vec<Vec<f64>>, width: usize) -> Array2<f64> {
    let n = flat.len();
    Array2::from_shape_vec((n, width), flat.into_iter().flatten().collect()).expect("uniform rows")
}

fn norm2_flat(p: &Pose2D, crop: f64) -> Vec<f64> {
    normalize2d(p, crop).to_flat()
}

fn target3(p: &TrainingPair, scale: f64) -> Result<Vec<f64>> {
    Ok(normalize3d(&p.pose3d, scale)?.to_flat())
}

/// Trains the view synthesis network with MSE on normalized crop coordinates.
pub fn train_view_synthesis(
    pairs: &[TrainingPair],
    shape: &NetShape,
    tc: &TrainConfig,
    dx: f64,
) -> Result<(ViewSynthModel, TrainReport)> {
    let schema = common_schema(pairs)?;
    let n2 = 2 * schema.len();
    let x = rows(pairs.iter().map(|p| norm2_flat(&p.left2d, CROP_SIZE)).collect(), n2);
    let y = rows(pairs.iter().map(|p| norm2_flat(&p.right2d, CROP_SIZE)).collect(), n2);
    let mut net = MlpModel::init_kaiming(&shape.mlp(n2, n2))?;
    let report = train(&mut net, &x, &y, tc, Loss::Mse)?;
    Ok((
        ViewSynthModel {
            net,
            schema,
            crop_size: CROP_SIZE,
            dx,
        },
        report,
    ))
}

impl ViewSynthModel {
    /// Batched prediction on normalized left views, one pose per row.
    pub fn predict_rows(&self, left_norm: &Array2<f64>) -> Result<Array2<f64>> {
        self.net.predict(left_norm)
    }
}

/// Predicts the normalized right view of a normalized left view.
pub fn predict_right(m: &ViewSynthModel, left_norm: &Pose2D) -> Result<Pose2D> {
    check_schema(&m.schema, left_norm)?;
    let x = rows(vec![left_norm.to_flat()], 2 * m.schema.len());
    let out = m.predict_rows(&x)?;
    Pose2D::from_flat(m.schema.clone(), out.row(0).as_slice().expect("contiguous row"))
}

/// Trains the stereo reconstruction network. `view` is only read.
pub fn train_reconstruction(
    pairs: &[TrainingPair],
    view: &ViewSynthModel,
    shape: &NetShape,
    tc: &TrainConfig,
    mode: ReconMode,
) -> Result<(ReconModel, TrainReport)> {
    let schema = common_schema(pairs)?;
    view.schema.ensure_same(&schema)?;
    let n = schema.len();
    let left = rows(pairs.iter().map(|p| norm2_flat(&p.left2d, CROP_SIZE)).collect(), 2 * n);
    let right = match mode {
        ReconMode::TeacherForced => rows(pairs.iter().map(|p| norm2_flat(&p.right2d, CROP_SIZE)).collect(), 2 * n),
        ReconMode::SelfSynthesized => view.predict_rows(&left)?,
    };
    let x = ndarray::concatenate(ndarray::Axis(1), &[left.view(), right.view()]).expect("same row count");
    let y = rows(pairs.iter().map(|p| target3(p, DEFAULT_SCALE_MM)).collect::<Result<_>>()?, 3 * n);
    let mut net = MlpModel::init_kaiming(&shape.mlp(4 * n, 3 * n))?;
    let report = train(&mut net, &x, &y, tc, Loss::Mse)?;
    Ok((
        ReconModel {
            net,
            schema,
            input: ReconInput::Stereo,
            crop_size: CROP_SIZE,
            scale_mm: DEFAULT_SCALE_MM,
        },
        report,
    ))
}

/// Same-budget ablation: reconstruction from the left view alone.
pub fn train_monocular(pairs: &[TrainingPair], shape: &NetShape, tc: &TrainConfig) -> Result<(ReconModel, TrainReport)> {
    let schema = common_schema(pairs)?;
    let n = schema.len();
    let x = rows(pairs.iter().map(|p| norm2_flat(&p.left2d, CROP_SIZE)).collect(), 2 * n);
    let y = rows(pairs.iter().map(|p| target3(p, DEFAULT_SCALE_MM)).collect::<Result<_>>()?, 3 * n);
    let mut net = MlpModel::init_kaiming(&shape.mlp(2 * n, 3 * n))?;
    let report = train(&mut net, &x, &y, tc, Loss::Mse)?;
    Ok((
        ReconModel {
            net,
            schema,
            input: ReconInput::Monocular,
            crop_size: CROP_SIZE,
            scale_mm: DEFAULT_SCALE_MM,
        },
        report,
    ))
}

/// A reconstruction network plus the view network feeding it, if stereo.
#[derive(Debug, Clone, PartialEq)]
pub struct Lifter {
    pub view: Option<ViewSynthModel>,
    pub recon: ReconModel,
}

impl Lifter {
    pub fn new(view: Option<ViewSynthModel>, recon: ReconModel) -> Result<Self> {
        match (recon.input, &view) {
            (ReconInput::Stereo, None) => {
                return Err(Error::InvalidConfig("stereo reconstruction needs a view synthesis model".into()))
            }
            (ReconInput::Stereo, Some(v)) => v.schema.ensure_same(&recon.schema)?,
            (ReconInput::Monocular, _) => {}
        }
        Ok(Lifter { view, recon })
    }

    pub fn schema(&self) -> &Arc<JointSchema> {
        &self.recon.schema
    }

    /// Network input rows for crop-coordinate left views.
    pub fn input_rows(&self, lefts: &[&Pose2D]) -> Result<Array2<f64>> {
        let n = self.recon.schema.len();
        for l in lefts {
            check_schema(&self.recon.schema, l)?;
        }
        let left = rows(lefts.iter().map(|p| norm2_flat(p, self.recon.crop_size)).collect(), 2 * n);
        Ok(match (self.recon.input, &self.view) {
            (ReconInput::Stereo, Some(view)) => {
                let right = view.predict_rows(&left)?;
                ndarray::concatenate(ndarray::Axis(1), &[left.view(), right.view()]).expect("same row count")
            }
            _ => left,
        })
    }

    /// Coarse root-relative poses in millimeters for a batch of left views.
    pub fn predict_coarse_batch(&self, lefts: &[&Pose2D]) -> Result<Vec<Pose3D>> {
        if lefts.is_empty() {
            return Ok(Vec::new());
        }
        let out = self.recon.net.predict(&self.input_rows(lefts)?)?;
        out.rows()
            .into_iter()
            .map(|r| {
                let p = Pose3D::from_flat(self.recon.schema.clone(), &r.to_vec(), Frame::Absolute)?;
                // Force an exact zero root before scaling back to millimeters.
                denormalize3d(&p.root_aligned(), self.recon.scale_mm).map(|q| q.root_aligned())
            })
            .collect()
    }

    pub fn predict_coarse(&self, left: &Pose2D) -> Result<Pose3D> {
        Ok(self.predict_coarse_batch(&[left])?.remove(0))
    }
}

/// normalize -> predict right -> concatenate -> reconstruct -> millimeters.
pub fn predict_coarse(vm: &ViewSynthModel, rm: &ReconModel, left: &Pose2D) -> Result<Pose3D> {
    vm.schema.ensure_same(&rm.schema)?;
    if rm.input != ReconInput::Stereo {
        return Err(Error::InvalidConfig("expected a stereo reconstruction model".into()));
    }
    let n = rm.schema.len();
    check_schema(&rm.schema, left)?;
    let left_n = normalize2d(left, rm.crop_size);
    let right_n = predict_right(vm, &left_n)?;
    let mut input = left_n.to_flat();
    input.extend(right_n.to_flat());
    let out = rm.net.predict(&rows(vec![input], 4 * n))?;
    let p = Pose3D::from_flat(rm.schema.clone(), out.row(0).as_slice().expect("contiguous row"), Frame::RootRelative)?;
    Ok(denormalize3d(&p, rm.scale_mm)?.root_aligned())
}

/// Deterministic held-out membership for a record key.
pub fn is_held_out(key: u64, test_fraction: f64) -> bool {
    let u = (mix64(key) >> 11) as f64 / (1u64 << 53) as f64;
    u < test_fraction
}

/// Stable 64-bit key of a record id (FNV-1a).
pub fn id_key(id: &str) -> u64 {
    id.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| (h ^ b as u64).wrapping_mul(0x0100_0000_01b3))
}

/// Splits indices `0..n` into (train, test) by index hash.
pub fn split_indices(n: usize, test_fraction: f64) -> (Vec<usize>, Vec<usize>) {
    (0..n).partition(|&i| !is_held_out(i as u64, test_fraction))
}

fn meta_of(schema: &JointSchema, crop: f64) -> Map<String, Value> {
    let mut m = Map::new();
    m.insert("schema".into(), Value::from(schema.name.clone()));
    m.insert("crop_size".into(), Value::from(crop));
    m
}

fn meta_str<'a>(f: &'a ModelFile, key: &str) -> Result<&'a str> {
    f.meta
        .get(key)
        .and_then(Value::as_str)
        .ok_or_else(|| Error::Model(format!("meta.{key} missing")))
}

fn meta_f64(f: &ModelFile, key: &str) -> Result<f64> {
    f.meta
        .get(key)
        .and_then(Value::as_f64)
        .ok_or_else(|| Error::Model(format!("meta.{key} missing")))
}

fn expect_kind(f: &ModelFile, kind: &str) -> Result<()> {
    if f.kind != kind {
        return Err(Error::Model(format!("expected a {kind} model, found {}", f.kind)));
    }
    Ok(())
}

impl ViewSynthModel {
    pub fn to_file(&self) -> ModelFile {
        let mut meta = meta_of(&self.schema, self.crop_size);
        meta.insert("dx".into(), Value::from(self.dx));
        ModelFile::from_model("viewsynth", &self.net, meta)
    }

    pub fn from_file(f: &ModelFile) -> Result<Self> {
        expect_kind(f, "viewsynth")?;
        let schema = Arc::new(JointSchema::by_name(meta_str(f, "schema")?)?);
        let net = f.to_model()?;
        if net.config.input_dim != 2 * schema.len() || net.config.output_dim != 2 * schema.len() {
            return Err(Error::Model("view synthesis dims do not match schema".into()));
        }
        Ok(ViewSynthModel {
            net,
            schema,
            crop_size: meta_f64(f, "crop_size")?,
            dx: meta_f64(f, "dx")?,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.to_file().save(path)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_file(&ModelFile::load(path)?)
    }
}

impl ReconModel {
    pub fn to_file(&self) -> ModelFile {
        let mut meta = meta_of(&self.schema, self.crop_size);
        meta.insert("scale_mm".into(), Value::from(self.scale_mm));
        meta.insert("input".into(), serde_json::to_value(self.input).expect("enum"));
        ModelFile::from_model("recon", &self.net, meta)
    }

    pub fn from_file(f: &ModelFile) -> Result<Self> {
        expect_kind(f, "recon")?;
        let schema = Arc::new(JointSchema::by_name(meta_str(f, "schema")?)?);
        let input: ReconInput = serde_json::from_value(Value::from(meta_str(f, "input")?))
            .map_err(|e| Error::Model(format!("meta.input: {e}")))?;
        let net = f.to_model()?;
        let n = schema.len();
        let want_in = if input == ReconInput::Stereo { 4 * n } else { 2 * n };
        if net.config.input_dim != want_in || net.config.output_dim != 3 * n {
            return Err(Error::Model("reconstruction dims do not match schema".into()));
        }
        Ok(ReconModel {
            net,
            schema,
            input,
            crop_size: meta_f64(f, "crop_size")?,
            scale_mm: meta_f64(f, "scale_mm")?,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.to_file().save(path)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_file(&ModelFile::load(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::mpjpe_protocol1;
    use crate::par::Execution;
    use crate::skeleton::denormalize2d;
    use crate::synthgen::{generate_pairs, SynthConfig};

    fn small_shape() -> NetShape {
        NetShape {
            hidden_dim: 128,
            n_residual_blocks: 0,
            dropout_rate: 0.0,
            max_norm: 1.0,
            seed: 1,
        }
    }

    fn memorize_tc() -> TrainConfig {
        TrainConfig {
            epochs: 2000,
            batch_size: 64,
            lr_decay: 1.0,
            weight_decay: 0.0,
            seed: 3,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn memorized_pair_is_reproduced() {
        let pairs = generate_pairs(&SynthConfig::default(), 0..64, Execution::Sequential).unwrap();
        let (vm, _) = train_view_synthesis(&pairs, &small_shape(), &memorize_tc(), 500.0).unwrap();
        let (rm, _) = train_reconstruction(&pairs, &vm, &small_shape(), &memorize_tc(), ReconMode::SelfSynthesized).unwrap();
        let (mut worst_px, mut worst_mm) = (0.0f64, 0.0f64);
        for p in &pairs {
            let right = denormalize2d(&predict_right(&vm, &normalize2d(&p.left2d, CROP_SIZE)).unwrap(), CROP_SIZE);
            for (a, b) in right.joints.iter().zip(&p.right2d.joints) {
                worst_px = worst_px.max(a.distance(*b));
            }
            let coarse = predict_coarse(&vm, &rm, &p.left2d).unwrap();
            assert_eq!(coarse.joints[0], crate::geometry::Point3::ORIGIN);
            worst_mm = worst_mm.max(mpjpe_protocol1(&coarse, &p.pose3d).unwrap());
        }
        eprintln!("memorized: worst right-view error {worst_px:.3} px, worst MPJPE {worst_mm:.3} mm");
        assert!(worst_px < 3.0, "right view off by {worst_px}");
        assert!(worst_mm < 12.0, "memorized MPJPE {worst_mm}");
        let p = &pairs[0];
        let coarse = predict_coarse(&vm, &rm, &p.left2d).unwrap();

        let lifter = Lifter::new(Some(vm.clone()), rm.clone()).unwrap();
        assert_eq!(lifter.predict_coarse(&p.left2d).unwrap(), coarse);
    }

    #[test]
    fn concatenation_order_matters() {
        let pairs = generate_pairs(&SynthConfig::default(), 0..8, Execution::Sequential).unwrap();
        let mut tc = memorize_tc();
        tc.epochs = 2;
        let (vm, _) = train_view_synthesis(&pairs, &small_shape(), &tc, 500.0).unwrap();
        let (rm, _) = train_reconstruction(&pairs, &vm, &small_shape(), &tc, ReconMode::TeacherForced).unwrap();
        let left = normalize2d(&pairs[0].left2d, CROP_SIZE).to_flat();
        let right = normalize2d(&pairs[0].right2d, CROP_SIZE).to_flat();
        let a = rm.net.predict(&rows(vec![[left.clone(), right.clone()].concat()], 64)).unwrap();
        let b = rm.net.predict(&rows(vec![[right, left].concat()], 64)).unwrap();
        assert!(a.iter().zip(b.iter()).any(|(x, y)| (x - y).abs() > 1e-6));
    }

    #[test]
    fn view_model_is_frozen_and_training_deterministic() {
        let pairs = generate_pairs(&SynthConfig::default(), 0..32, Execution::Sequential).unwrap();
        let mut tc = memorize_tc();
        tc.epochs = 3;
        let (vm, _) = train_view_synthesis(&pairs, &small_shape(), &tc, 500.0).unwrap();
        let before = vm.to_file().to_json();
        let (rm1, _) = train_reconstruction(&pairs, &vm, &small_shape(), &tc, ReconMode::SelfSynthesized).unwrap();
        assert_eq!(vm.to_file().to_json(), before);
        let (rm2, _) = train_reconstruction(&pairs, &vm, &small_shape(), &tc, ReconMode::SelfSynthesized).unwrap();
        assert_eq!(rm1.to_file().to_json(), rm2.to_file().to_json());
        let (vm2, _) = train_view_synthesis(&pairs, &small_shape(), &tc, 500.0).unwrap();
        assert_eq!(vm2.to_file().to_json(), before);
    }

    #[test]
    fn model_files_round_trip() {
        let pairs = generate_pairs(&SynthConfig::default(), 0..8, Execution::Sequential).unwrap();
        let mut tc = memorize_tc();
        tc.epochs = 1;
        let (vm, _) = train_view_synthesis(&pairs, &small_shape(), &tc, 500.0).unwrap();
        let (rm, _) = train_monocular(&pairs, &small_shape(), &tc).unwrap();
        assert_eq!(ViewSynthModel::from_file(&vm.to_file()).unwrap(), vm);
        assert_eq!(ReconModel::from_file(&rm.to_file()).unwrap(), rm);
        assert!(ReconModel::from_file(&vm.to_file()).is_err());
        assert!(Lifter::new(None, rm.clone()).is_ok());
        let out = Lifter::new(None, rm).unwrap().predict_coarse(&pairs[0].left2d).unwrap();
        assert!(out.is_finite());
    }

    #[test]
    fn errors() {
        let mut tc = memorize_tc();
        tc.epochs = 1;
        assert!(matches!(train_view_synthesis(&[], &small_shape(), &tc, 500.0), Err(Error::EmptyDataset)));
        let pairs = generate_pairs(&SynthConfig::default(), 0..4, Execution::Sequential).unwrap();
        let (vm, _) = train_view_synthesis(&pairs, &small_shape(), &tc, 500.0).unwrap();
        let other = Pose2D::new(Arc::new(JointSchema::chain(16)), pairs[0].left2d.joints.clone());
        assert!(matches!(predict_right(&vm, &other), Err(Error::SchemaMismatch(_))));
    }

    #[test]
    fn split_is_deterministic_and_roughly_sized() {
        let (train_a, test_a) = split_indices(20_000, 0.1);
        let (train_b, test_b) = split_indices(20_000, 0.1);
        assert_eq!((train_a.len(), test_a.clone()), (train_b.len(), test_b));
        let frac = test_a.len() as f64 / 20_000.0;
        assert!((frac - 0.1).abs() < 0.01, "{frac}");
        assert_ne!(id_key("a"), id_key("b"));
    }

    #[test]
    fn outputs_finite_on_unit_box() {
        let pairs = generate_pairs(&SynthConfig::default(), 0..4, Execution::Sequential).unwrap();
        let mut tc = memorize_tc();
        tc.epochs = 1;
        let (vm, _) = train_view_synthesis(&pairs, &small_shape(), &tc, 500.0).unwrap();
        let schema = vm.schema.clone();
        for corner in [-1.0, 0.0, 1.0] {
            let p = Pose2D::from_flat(schema.clone(), &vec![corner; 32]).unwrap();
            assert!(predict_right(&vm, &p).unwrap().is_finite());
        }
    }
}
