//! CSV tables and small static SVG plots.

use std::fmt::Write as _;
use std::io::Write;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::lifting::{split_indices, train_reconstruction, train_view_synthesis, Lifter, NetShape, ReconMode};
use crate::metrics::mpjpe_protocol1;
use crate::neuralnet::TrainConfig;
use crate::par::Execution;
use crate::skeleton::{JointSchema, Pose2D, Pose3D};
use crate::synthgen::{generate_pairs, SynthConfig, TrainingPair};

/// Loss curves as `series,epoch,loss` rows.
pub fn write_loss_csv<W: Write>(series: &[(String, Vec<f64>)], w: &mut W) -> Result<()> {
    writeln!(w, "series,epoch,loss")?;
    for (name, values) in series {
        for (epoch, v) in values.iter().enumerate() {
            writeln!(w, "{name},{epoch},{v}")?;
        }
    }
    Ok(())
}

/// Parses rows written by [`write_loss_csv`].
pub fn read_loss_csv(text: &str) -> Result<Vec<(String, Vec<f64>)>> {
    let mut out: Vec<(String, Vec<f64>)> = Vec::new();
    for (i, line) in text.lines().enumerate().skip(1) {
        if line.trim().is_empty() {
            continue;
        }
        let bad = || Error::Parse {
            line: i + 1,
            msg: format!("expected series,epoch,loss: {line}"),
        };
        let mut parts = line.split(',');
        let (Some(name), Some(_), Some(v), None) = (parts.next(), parts.next(), parts.next(), parts.next()) else {
            return Err(bad());
        };
        let v: f64 = v.parse().map_err(|_| bad())?;
        match out.last_mut() {
            Some((n, vals)) if n == name => vals.push(v),
            _ => out.push((name.to_string(), vec![v])),
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HistogramRow {
    pub joint: String,
    pub bin_lo_mm: f64,
    pub bin_hi_mm: f64,
    pub count: u64,
}

/// Per-joint histograms of root-aligned 3D errors over matched pose pairs.
pub fn error_histograms(pairs: &[(Pose3D, Pose3D)], schema: &JointSchema, bin_mm: f64) -> Result<Vec<HistogramRow>> {
    if !(bin_mm > 0.0) {
        return Err(Error::InvalidConfig("histogram bin width must be positive".into()));
    }
    let mut per_joint: Vec<Vec<f64>> = vec![Vec::new(); schema.len()];
    for (pred, gt) in pairs {
        for (j, e) in crate::metrics::joint_errors_3d(pred, gt)?.into_iter().enumerate() {
            per_joint[j].push(e);
        }
    }
    let max = per_joint.iter().flatten().fold(0.0f64, |a, &b| a.max(b));
    let n_bins = ((max / bin_mm).floor() as usize + 1).max(1);
    let mut rows = Vec::with_capacity(n_bins * schema.len());
    for (j, errs) in per_joint.iter().enumerate() {
        let mut counts = vec![0u64; n_bins];
        for &e in errs {
            counts[((e / bin_mm).floor() as usize).min(n_bins - 1)] += 1;
        }
        for (b, &count) in counts.iter().enumerate() {
            rows.push(HistogramRow {
                joint: schema.joint_names[j].clone(),
                bin_lo_mm: b as f64 * bin_mm,
                bin_hi_mm: (b + 1) as f64 * bin_mm,
                count,
            });
        }
    }
    Ok(rows)
}

pub fn write_histogram_csv<W: Write>(rows: &[HistogramRow], w: &mut W) -> Result<()> {
    writeln!(w, "joint,bin_lo_mm,bin_hi_mm,count")?;
    for r in rows {
        writeln!(w, "{},{},{},{}", r.joint, r.bin_lo_mm, r.bin_hi_mm, r.count)?;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AblationRow {
    pub dx_mm: f64,
    /// Held-out coarse MPJPE, no depth search.
    pub mpjpe_mm: f64,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationSettings {
    pub synth: SynthConfig,
    pub n_pairs: u64,
    pub test_fraction: f64,
    pub net: NetShape,
    pub train: TrainConfig,
}

/// Held-out coarse MPJPE of a stereo lifter.
pub fn coarse_mpjpe(lifter: &Lifter, test: &[TrainingPair]) -> Result<f64> {
    if test.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let lefts: Vec<&Pose2D> = test.iter().map(|p| &p.left2d).collect();
    let coarse = lifter.predict_coarse_batch(&lefts)?;
    let total: f64 = coarse
        .iter()
        .zip(test)
        .map(|(c, p)| mpjpe_protocol1(c, &p.pose3d))
        .sum::<Result<f64>>()?;
    Ok(total / test.len() as f64)
}

/// Splits pairs into (train, test) by index hash.
pub fn split_pairs(pairs: Vec<TrainingPair>, test_fraction: f64) -> (Vec<TrainingPair>, Vec<TrainingPair>) {
    let (train_idx, _) = split_indices(pairs.len(), test_fraction);
    let mut is_train = vec![false; pairs.len()];
    for i in train_idx {
        is_train[i] = true;
    }
    let (train, test): (Vec<_>, Vec<_>) = pairs.into_iter().zip(is_train).partition(|(_, t)| *t);
    (train.into_iter().map(|(p, _)| p).collect(), test.into_iter().map(|(p, _)| p).collect())
}

/// Trains a stereo lifter per baseline on the same poses and reports the
/// held-out coarse error of each.
pub fn dx_ablation(s: &AblationSettings, dx_values: &[f64], exec: Execution) -> Result<Vec<AblationRow>> {
    let mut rows = Vec::with_capacity(dx_values.len());
    for &dx in dx_values {
        let synth = SynthConfig { dx, ..s.synth.clone() };
        synth.validate()?;
        let pairs = generate_pairs(&synth, 0..s.n_pairs, exec)?;
        let (train, test) = split_pairs(pairs, s.test_fraction);
        let (vm, _) = train_view_synthesis(&train, &s.net, &s.train, dx)?;
        let (rm, _) = train_reconstruction(&train, &vm, &s.net, &s.train, ReconMode::SelfSynthesized)?;
        let lifter = Lifter::new(Some(vm), rm)?;
        rows.push(AblationRow {
            dx_mm: dx,
            mpjpe_mm: coarse_mpjpe(&lifter, &test)?,
            count: test.len(),
        });
    }
    Ok(rows)
}

pub fn write_ablation_csv<W: Write>(rows: &[AblationRow], w: &mut W) -> Result<()> {
    writeln!(w, "dx_mm,mpjpe_mm,count")?;
    for r in rows {
        writeln!(w, "{},{},{}", r.dx_mm, r.mpjpe_mm, r.count)?;
    }
    Ok(())
}

/// Largest pairwise relative difference between the rows' errors.
pub fn ablation_spread(rows: &[AblationRow]) -> f64 {
    let lo = rows.iter().map(|r| r.mpjpe_mm).fold(f64::INFINITY, f64::min);
    let hi = rows.iter().map(|r| r.mpjpe_mm).fold(f64::NEG_INFINITY, f64::max);
    if rows.is_empty() || lo <= 0.0 {
        return 0.0;
    }
    (hi - lo) / lo
}

const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"];

/// Static SVG line plot; one polyline per series over `(x, y)` points.
pub fn svg_line_plot(title: &str, x_label: &str, y_label: &str, series: &[(String, Vec<(f64, f64)>)]) -> String {
    let (w, h, m) = (640.0, 400.0, 56.0);
    let pts = series.iter().flat_map(|(_, p)| p.iter()).filter(|(x, y)| x.is_finite() && y.is_finite());
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for &(x, y) in pts {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    if !x0.is_finite() {
        (x0, x1, y0, y1) = (0.0, 1.0, 0.0, 1.0);
    }
    if x1 == x0 {
        x1 = x0 + 1.0;
    }
    if y1 == y0 {
        y1 = y0 + 1.0;
    }
    let sx = |x: f64| m + (x - x0) / (x1 - x0) * (w - 2.0 * m);
    let sy = |y: f64| h - m - (y - y0) / (y1 - y0) * (h - 2.0 * m);

    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#);
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="24" text-anchor="middle" font-family="sans-serif" font-size="16">{}</text>"#, w / 2.0, escape(title));
    let _ = writeln!(
        s,
        r#"<path d="M{m} {m} V{} H{}" fill="none" stroke="black"/>"#,
        h - m,
        w - m
    );
    for (v, anchor_x) in [(x0, sx(x0)), (x1, sx(x1))] {
        let _ = writeln!(s, r#"<text x="{anchor_x}" y="{}" text-anchor="middle" font-family="sans-serif" font-size="11">{}</text>"#, h - m + 16.0, tick(v));
    }
    for (v, anchor_y) in [(y0, sy(y0)), (y1, sy(y1))] {
        let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="end" font-family="sans-serif" font-size="11">{}</text>"#, m - 6.0, anchor_y + 4.0, tick(v));
    }
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle" font-family="sans-serif" font-size="12">{}</text>"#, w / 2.0, h - 12.0, escape(x_label));
    let _ = writeln!(
        s,
        r#"<text x="16" y="{}" text-anchor="middle" font-family="sans-serif" font-size="12" transform="rotate(-90 16 {})">{}</text>"#,
        h / 2.0,
        h / 2.0,
        escape(y_label)
    );
    for (i, (name, points)) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let coords: Vec<String> = points
            .iter()
            .filter(|(x, y)| x.is_finite() && y.is_finite())
            .map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y)))
            .collect();
        let _ = writeln!(s, r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="1.5"/>"#, coords.join(" "));
        let ly = m + 16.0 * i as f64;
        let _ = writeln!(s, r#"<text x="{}" y="{ly}" text-anchor="end" font-family="sans-serif" font-size="11" fill="{color}">{}</text>"#, w - m, escape(name));
    }
    s.push_str("</svg>\n");
    s
}

fn tick(v: f64) -> String {
    if v.abs() >= 1000.0 || (v != 0.0 && v.abs() < 0.01) {
        format!("{v:.2e}")
    } else {
        format!("{v:.3}")
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
