//! Depth-offset search placing a root-relative 3D pose in front of the camera.
//!
//! Each joint is put on the camera ray of its 2D observation, at the coarse
//! relative depth plus a shared offset `dz`:
//!
//! ```text
//! x~_i = (u_i - cx) (z_i + dz) / fx
//! y~_i = (v_i - cy) (z_i + dz) / fy
//! ```
//!
//! and `dz` minimizes `sum_i (x~_i - x_i)^2 + (y~_i - y_i)^2` against the
//! coarse pose. The result reprojects onto the 2D input by construction.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{project, CameraIntrinsics, Point3};
use crate::skeleton::{Frame, Pose2D, Pose3D};

/// Losses closer than this are treated as equal; the smaller offset wins.
pub const TIE_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SearchMode {
    /// Evaluate `0, step, 2 step, ..., z_max` in ascending order.
    Scan,
    /// Minimize the quadratic analytically.
    ClosedForm,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SearchConfig {
    pub step_mm: f64,
    pub z_max_mm: f64,
    pub mode: SearchMode,
}

impl Default for SearchConfig {
    fn default() -> Self {
        SearchConfig {
            step_mm: 1.0,
            z_max_mm: 10_000.0,
            mode: SearchMode::Scan,
        }
    }
}

impl SearchConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.step_mm > 0.0) || !(self.z_max_mm > self.step_mm) || !self.z_max_mm.is_finite() {
            return Err(Error::InvalidConfig(format!(
                "search needs step > 0 and z_max > step (step={}, z_max={})",
                self.step_mm, self.z_max_mm
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RefinedPose {
    pub pose_abs: Pose3D,
    pub pose_rel: Pose3D,
    pub delta_z: f64,
    /// Loss at `delta_z`, mm^2.
    pub residual: f64,
}

/// Per-joint ray slopes and coarse coordinates.
struct Problem<'a> {
    k: &'a CameraIntrinsics,
    gt: &'a Pose2D,
    coarse: &'a Pose3D,
}

impl<'a> Problem<'a> {
    fn new(coarse: &'a Pose3D, gt: &'a Pose2D, k: &'a CameraIntrinsics) -> Result<Self> {
        coarse.expect_frame(Frame::RootRelative)?;
        coarse.schema.ensure_same(&gt.schema)?;
        let p = Problem { k, gt, coarse };
        if p.denominator() == 0.0 {
            return Err(Error::DegenerateProjection);
        }
        Ok(p)
    }

    /// Pixel offsets from the principal point, with the vertical one
    /// rescaled by fx / fy. Working in pixels rather than slopes keeps
    /// integer inputs exact.
    fn offsets(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        let r = self.k.fx / self.k.fy;
        self.gt.joints.iter().map(move |px| (px.u - self.k.cx, r * (px.v - self.k.cy)))
    }

    /// Sum of squared slopes times fx^2.
    fn denominator(&self) -> f64 {
        self.offsets().map(|(a, b)| a * a + b * b).sum()
    }

    fn min_z(&self) -> f64 {
        self.coarse.joints.iter().map(|p| p.z).fold(f64::INFINITY, f64::min)
    }

    fn loss(&self, dz: f64) -> f64 {
        self.gt
            .joints
            .iter()
            .zip(&self.coarse.joints)
            .map(|(px, q)| {
                let depth = q.z + dz;
                let x = (px.u - self.k.cx) * depth / self.k.fx;
                let y = (px.v - self.k.cy) * depth / self.k.fy;
                (x - q.x) * (x - q.x) + (y - q.y) * (y - q.y)
            })
            .sum()
    }

    fn unconstrained_minimizer(&self) -> f64 {
        let fx = self.k.fx;
        let num: f64 = self
            .offsets()
            .zip(&self.coarse.joints)
            .map(|((a, b), q)| a * (fx * q.x - a * q.z) + b * (fx * q.y - b * q.z))
            .sum();
        num / self.denominator()
    }

    fn build(&self, dz: f64) -> RefinedPose {
        let joints = self
            .gt
            .joints
            .iter()
            .zip(&self.coarse.joints)
            .map(|(px, q)| {
                let depth = q.z + dz;
                Point3::new(
                    (px.u - self.k.cx) * depth / self.k.fx,
                    (px.v - self.k.cy) * depth / self.k.fy,
                    depth,
                )
            })
            .collect();
        let pose_abs = Pose3D {
            schema: self.coarse.schema.clone(),
            joints,
            frame: Frame::Absolute,
        };
        RefinedPose {
            pose_rel: pose_abs.root_aligned(),
            pose_abs,
            delta_z: dz,
            residual: self.loss(dz),
        }
    }
}

/// Refines a coarse root-relative pose against its 2D observation.
pub fn refine(coarse: &Pose3D, gt2d: &Pose2D, k: &CameraIntrinsics, cfg: &SearchConfig) -> Result<RefinedPose> {
    cfg.validate()?;
    let problem = Problem::new(coarse, gt2d, k)?;
    let min_z = problem.min_z();
    let dz = match cfg.mode {
        SearchMode::Scan => {
            let n_steps = (cfg.z_max_mm / cfg.step_mm).floor() as u64;
            // First grid index whose offset keeps every joint in front of the camera.
            let first = if min_z > 0.0 {
                0
            } else {
                let mut i = (-min_z / cfg.step_mm).floor().max(0.0) as u64;
                while min_z + i as f64 * cfg.step_mm <= 0.0 {
                    i += 1;
                }
                i
            };
            if first > n_steps {
                return Err(Error::NoValidDepth);
            }
            let mut best = (f64::INFINITY, 0.0);
            for i in first..=n_steps {
                let dz = i as f64 * cfg.step_mm;
                let loss = problem.loss(dz);
                if loss < best.0 - TIE_TOLERANCE {
                    best = (loss, dz);
                }
            }
            best.1
        }
        SearchMode::ClosedForm => {
            let lo = if min_z > 0.0 { 0.0 } else { (-min_z).next_up() };
            if lo > cfg.z_max_mm {
                return Err(Error::NoValidDepth);
            }
            problem.unconstrained_minimizer().clamp(lo, cfg.z_max_mm)
        }
    };
    Ok(problem.build(dz))
}

/// Minimizer of the depth-offset loss over `dz >= 0`.
pub fn closed_form_delta_z(coarse: &Pose3D, gt2d: &Pose2D, k: &CameraIntrinsics) -> Result<f64> {
    let problem = Problem::new(coarse, gt2d, k)?;
    Ok(problem.unconstrained_minimizer().max(0.0))
}

/// Depth-offset loss at `dz`, mm^2.
pub fn search_loss(coarse: &Pose3D, gt2d: &Pose2D, k: &CameraIntrinsics, dz: f64) -> Result<f64> {
    Ok(Problem::new(coarse, gt2d, k)?.loss(dz))
}

/// Largest pixel distance between the projected pose and the 2D observation.
pub fn reprojection_error(pose_abs: &Pose3D, gt2d: &Pose2D, k: &CameraIntrinsics) -> Result<f64> {
    pose_abs.schema.ensure_same(&gt2d.schema)?;
    let mut worst = 0.0f64;
    for (i, (p, g)) in pose_abs.joints.iter().zip(&gt2d.joints).enumerate() {
        let px = project(*p, k).map_err(|_| Error::NonPositiveDepth { z: p.z, joint: Some(i) })?;
        worst = worst.max(px.distance(*g));
    }
    Ok(worst)
}
