//! Deterministic synthetic 2D/3D training pairs.
//!
//! Poses are perturbations of a canonical standing skeleton: every bone gets a
//! random length and a direction inside a cone around its rest direction, the
//! body is turned about the vertical axis and placed in front of the camera so
//! that every joint projects inside the crop.

use std::f64::consts::PI;
use std::io::Write;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{
    project_pose, synthesize_right_view, CameraIntrinsics, Point3, DEFAULT_DX_MM,
};
use crate::par::{self, derive_seed, Execution};
use crate::pipeline::DatasetRecord;
use crate::skeleton::{JointSchema, Pose2D, Pose3D, Frame, CROP_SIZE};

/// Attempts per sample before giving up on a configuration.
pub const RETRY_BUDGET: usize = 100;

const CHUNK: usize = 1024;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub seed: u64,
    /// Schema of the generated skeleton; only `h36m16` has a rest pose.
    pub schema: String,
    /// `(min, max)` length in mm of the bone ending at each joint (root entry unused).
    pub bone_length_ranges: Vec<(f64, f64)>,
    /// Cone half-angle in radians around each bone's rest direction.
    pub joint_angle_ranges: Vec<f64>,
    pub root_depth_range: (f64, f64),
    /// Rotation of the whole body about the camera's vertical axis, radians.
    pub yaw_range: (f64, f64),
    /// Uniform jitter of the pelvis around the crop center, pixels. At 0 the
    /// pelvis sits on the optical axis when the principal point is centered.
    pub root_pixel_jitter: f64,
    /// Crop-frame intrinsics.
    pub intrinsics: CameraIntrinsics,
    pub crop_size: f64,
    pub dx: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        // Indexed by joint of the h36m16 schema.
        let bones = vec![
            (0.0, 0.0),     // pelvis
            (115.0, 145.0), // r_hip
            (400.0, 470.0), // r_knee
            (390.0, 460.0), // r_ankle
            (115.0, 145.0), // l_hip
            (400.0, 470.0), // l_knee
            (390.0, 460.0), // l_ankle
            (210.0, 260.0), // spine
            (210.0, 260.0), // neck
            (200.0, 250.0), // head_top
            (130.0, 170.0), // l_shoulder
            (250.0, 300.0), // l_elbow
            (220.0, 270.0), // l_wrist
            (130.0, 170.0), // r_shoulder
            (250.0, 300.0), // r_elbow
            (220.0, 270.0), // r_wrist
        ];
        let angles = vec![0.0, 0.15, 0.5, 0.6, 0.15, 0.5, 0.6, 0.3, 0.25, 0.3, 0.2, 1.4, 1.6, 0.2, 1.4, 1.6];
        SynthConfig {
            seed: 0,
            schema: "h36m16".into(),
            bone_length_ranges: bones,
            joint_angle_ranges: angles,
            root_depth_range: (2000.0, 6000.0),
            yaw_range: (-PI / 2.0, PI / 2.0),
            root_pixel_jitter: 0.0,
            intrinsics: CameraIntrinsics {
                fx: 230.0,
                fy: 230.0,
                cx: CROP_SIZE / 2.0,
                cy: CROP_SIZE / 2.0,
            },
            crop_size: CROP_SIZE,
            dx: DEFAULT_DX_MM,
        }
    }
}

/// Rest direction of the bone ending at each h36m16 joint (x right, y down,
/// z away from the camera; the body faces the camera).
pub(crate) fn rest_directions() -> [Point3; 16] {
    let (l, r, d, u) = (
        Point3::new(1.0, 0.0, 0.0),
        Point3::new(-1.0, 0.0, 0.0),
        Point3::new(0.0, 1.0, 0.0),
        Point3::new(0.0, -1.0, 0.0),
    );
    [Point3::ORIGIN, r, d, d, l, d, d, u, u, u, l, d, d, r, d, d]
}

impl SynthConfig {
    pub fn schema(&self) -> Result<JointSchema> {
        JointSchema::by_name(&self.schema)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.schema != "h36m16" {
            return bad(format!("synthetic generator has no rest pose for schema '{}'", self.schema));
        }
        let n = self.schema()?.len();
        if self.bone_length_ranges.len() != n || self.joint_angle_ranges.len() != n {
            return bad(format!("need {n} bone length ranges and joint angle ranges"));
        }
        for (i, &(lo, hi)) in self.bone_length_ranges.iter().enumerate() {
            if !(lo <= hi) || lo < 0.0 {
                return bad(format!("bone length range {i} is empty or negative"));
            }
        }
        if self.joint_angle_ranges.iter().any(|a| !(0.0..=PI).contains(a)) {
            return bad("joint angle ranges must lie in [0, pi]".into());
        }
        let (zlo, zhi) = self.root_depth_range;
        if !(zlo > 0.0 && zlo <= zhi) {
            return bad("root depth range must be non-empty and positive".into());
        }
        if !(self.yaw_range.0 <= self.yaw_range.1) {
            return bad("yaw range is empty".into());
        }
        if !(self.crop_size > 0.0) || self.root_pixel_jitter < 0.0 {
            return bad("crop size must be positive and jitter non-negative".into());
        }
        self.intrinsics.validate()
    }
}

/// One synthetic training sample.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingPair {
    pub left2d: Pose2D,
    pub right2d: Pose2D,
    pub pose3d: Pose3D,
    pub pose3d_abs: Pose3D,
    pub intrinsics: CameraIntrinsics,
}

impl TrainingPair {
    /// Builds the stereo pair for an absolute pose.
    pub fn from_absolute(pose3d_abs: Pose3D, k: &CameraIntrinsics, dx: f64) -> Result<Self> {
        let left2d = project_pose(&pose3d_abs, k)?;
        let right2d = synthesize_right_view(&pose3d_abs, k, dx)?;
        Ok(TrainingPair {
            left2d,
            right2d,
            pose3d: pose3d_abs.root_aligned(),
            pose3d_abs,
            intrinsics: *k,
        })
    }

    /// Worst violation of the pair invariants, `None` when clean.
    pub fn check(&self, crop_size: f64) -> Option<String> {
        for (i, p) in self.pose3d_abs.joints.iter().enumerate() {
            if !(p.z > 0.0) {
                return Some(format!("joint {i} has depth {}", p.z));
            }
        }
        let reproj = project_pose(&self.pose3d_abs, &self.intrinsics).ok()?;
        for (i, (a, b)) in reproj.joints.iter().zip(&self.left2d.joints).enumerate() {
            if a.distance(*b) > 1e-6 {
                return Some(format!("joint {i} reprojects {} px off", a.distance(*b)));
            }
            if !(0.0..=crop_size).contains(&b.u) || !(0.0..=crop_size).contains(&b.v) {
                return Some(format!("joint {i} outside the crop"));
            }
        }
        for (i, (l, r)) in self.left2d.joints.iter().zip(&self.right2d.joints).enumerate() {
            if (l.v - r.v).abs() > 1e-9 {
                return Some(format!("joint {i} rows differ between views"));
            }
        }
        None
    }
}

fn sample_in_cone(axis: Point3, half_angle: f64, rng: &mut impl Rng) -> Point3 {
    if half_angle == 0.0 {
        return axis;
    }
    // Orthonormal basis around the axis.
    let helper = if axis.x.abs() < 0.9 { Point3::new(1.0, 0.0, 0.0) } else { Point3::new(0.0, 1.0, 0.0) };
    let e1 = cross(axis, helper);
    let e1 = e1.scale(1.0 / e1.norm());
    let e2 = cross(axis, e1);
    let cos_a = rng.random_range(half_angle.cos()..=1.0);
    let sin_a = (1.0 - cos_a * cos_a).max(0.0).sqrt();
    let phi = rng.random_range(0.0..2.0 * PI);
    axis.scale(cos_a)
        .add(e1.scale(sin_a * phi.cos()))
        .add(e2.scale(sin_a * phi.sin()))
}

fn cross(a: Point3, b: Point3) -> Point3 {
    Point3::new(a.y * b.z - a.z * b.y, a.z * b.x - a.x * b.z, a.x * b.y - a.y * b.x)
}

fn sample_range(rng: &mut impl Rng, (lo, hi): (f64, f64)) -> f64 {
    if lo == hi {
        lo
    } else {
        rng.random_range(lo..hi)
    }
}

/// Samples an absolute pose whose projection lies inside the crop.
pub fn sample_pose3(rng: &mut impl Rng, cfg: &SynthConfig) -> Result<Pose3D> {
    let schema = Arc::new(cfg.schema()?);
    let rest = rest_directions();
    let n = schema.len();
    let k = &cfg.intrinsics;
    for _ in 0..RETRY_BUDGET {
        let mut lengths: Vec<f64> = cfg.bone_length_ranges.iter().map(|&r| sample_range(rng, r)).collect();
        for &(a, b) in &schema.left_right_pairs {
            lengths[b] = lengths[a];
        }
        let mut local = vec![Point3::ORIGIN; n];
        // Parents precede children in the h36m16 ordering.
        for j in 0..n {
            if j == schema.root_index {
                continue;
            }
            let dir = sample_in_cone(rest[j], cfg.joint_angle_ranges[j], rng);
            local[j] = local[schema.parent[j]].add(dir.scale(lengths[j]));
        }
        let yaw = sample_range(rng, cfg.yaw_range);
        let (s, c) = yaw.sin_cos();
        let z = sample_range(rng, cfg.root_depth_range);
        let jit = cfg.root_pixel_jitter;
        let mid = cfg.crop_size / 2.0;
        let pu = mid + if jit > 0.0 { rng.random_range(-jit..=jit) } else { 0.0 };
        let pv = mid + if jit > 0.0 { rng.random_range(-jit..=jit) } else { 0.0 };
        let root = Point3::new((pu - k.cx) * z / k.fx, (pv - k.cy) * z / k.fy, z);
        let joints: Vec<Point3> = local
            .iter()
            .map(|p| Point3::new(c * p.x + s * p.z, p.y, -s * p.x + c * p.z).add(root))
            .collect();
        let inside = joints.iter().all(|p| {
            p.z > 0.0 && {
                let u = k.fx * p.x / p.z + k.cx;
                let v = k.fy * p.y / p.z + k.cy;
                (0.0..=cfg.crop_size).contains(&u) && (0.0..=cfg.crop_size).contains(&v)
            }
        });
        if inside {
            return Pose3D::new(schema, joints, Frame::Absolute);
        }
    }
    Err(Error::GenerationExhausted { retries: RETRY_BUDGET })
}

/// Samples a pose and derives both views from it.
pub fn generate_pair(rng: &mut impl Rng, cfg: &SynthConfig) -> Result<TrainingPair> {
    let pose = sample_pose3(rng, cfg)?;
    TrainingPair::from_absolute(pose, &cfg.intrinsics, cfg.dx)
}

/// Sample `index` of the stream defined by `cfg.seed`.
pub fn pair_at(cfg: &SynthConfig, index: u64) -> Result<TrainingPair> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, index));
    generate_pair(&mut rng, cfg)
}

/// Samples `start..end` of the stream; independent of how the work is split.
pub fn generate_pairs(cfg: &SynthConfig, range: std::ops::Range<u64>, exec: Execution) -> Result<Vec<TrainingPair>> {
    cfg.validate()?;
    let start = range.start;
    par::map_range(0..(range.end - range.start) as usize, exec, |i| pair_at(cfg, start + i as u64))
        .into_iter()
        .collect()
}

/// Record id of sample `index`.
pub fn record_id(seed: u64, index: u64) -> String {
    format!("synth-{seed}-{index:07}")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct GenSummary {
    pub count: u64,
    pub seed: u64,
}

/// Streams `n` records as JSON lines.
pub fn generate_dataset<W: Write>(cfg: &SynthConfig, n: u64, out: &mut W, exec: Execution) -> Result<GenSummary> {
    if n == 0 {
        return Err(Error::InvalidConfig("record count must be at least 1".into()));
    }
    cfg.validate()?;
    let mut start = 0u64;
    while start < n {
        let end = (start + CHUNK as u64).min(n);
        let lines: Vec<Result<String>> = par::map_range(0..(end - start) as usize, exec, |i| {
            let idx = start + i as u64;
            let pair = pair_at(cfg, idx)?;
            Ok(DatasetRecord::from_pair(record_id(cfg.seed, idx), &pair, cfg.dx).to_line())
        });
        for (i, line) in lines.into_iter().enumerate() {
            let idx = start + i as u64;
            let line = line?;
            writeln!(out, "{line}").map_err(|source| Error::Io {
                path: None,
                record: Some(idx as usize),
                source,
            })?;
        }
        start = end;
    }
    out.flush()?;
    Ok(GenSummary { count: n, seed: cfg.seed })
}
