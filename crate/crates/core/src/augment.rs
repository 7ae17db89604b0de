//! Training-time geometric/chromatic augmentation and test-time augmentation.

use std::f64::consts::PI;

use rand::seq::index::sample;
use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::cloud::PointCloud;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeometricConfig {
    pub center_shift: bool,
    pub dropout_p: f64,
    pub dropout_ratio: f64,
    /// Uniform yaw over the full circle.
    pub rotate_z: bool,
    /// Maximum absolute tilt about the x and y axes, radians.
    pub tilt_max: f64,
    /// Flip probability per axis.
    pub flip_p: [f64; 3],
    pub jitter_sigma: f64,
    pub jitter_clip: f64,
}

impl Default for GeometricConfig {
    fn default() -> Self {
        Self {
            center_shift: true,
            dropout_p: 0.5,
            dropout_ratio: 0.2,
            rotate_z: true,
            tilt_max: PI / 64.0,
            flip_p: [0.5, 0.5, 0.0],
            jitter_sigma: 0.005,
            jitter_clip: 0.02,
        }
    }
}

impl GeometricConfig {
    /// Every transform disabled.
    pub fn off() -> Self {
        Self {
            center_shift: false,
            dropout_p: 0.0,
            dropout_ratio: 0.0,
            rotate_z: false,
            tilt_max: 0.0,
            flip_p: [0.0; 3],
            jitter_sigma: 0.0,
            jitter_clip: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChromaticConfig {
    pub auto_contrast_p: f64,
    /// Fixed blend factor; `None` draws one uniformly per application.
    pub auto_contrast_blend: Option<f64>,
    pub translation_p: f64,
    pub translation_ratio: f64,
    pub jitter_p: f64,
    /// Standard deviation in 0-255 color units.
    pub jitter_sigma: f64,
    pub normalize: bool,
}

impl Default for ChromaticConfig {
    fn default() -> Self {
        Self {
            auto_contrast_p: 0.2,
            auto_contrast_blend: None,
            translation_p: 0.95,
            translation_ratio: 0.05,
            jitter_p: 0.95,
            jitter_sigma: 0.05 * 255.0,
            normalize: true,
        }
    }
}

impl ChromaticConfig {
    /// Only the normalization to [-1, 1].
    pub fn normalize_only() -> Self {
        Self {
            auto_contrast_p: 0.0,
            auto_contrast_blend: None,
            translation_p: 0.0,
            translation_ratio: 0.0,
            jitter_p: 0.0,
            jitter_sigma: 0.0,
            normalize: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentConfig {
    pub geometric: GeometricConfig,
    pub chromatic: ChromaticConfig,
}

impl AugmentConfig {
    pub fn validate(&self) -> Result<()> {
        let g = &self.geometric;
        let c = &self.chromatic;
        let probs = [
            g.dropout_p,
            g.flip_p[0],
            g.flip_p[1],
            g.flip_p[2],
            c.auto_contrast_p,
            c.translation_p,
            c.jitter_p,
        ];
        if probs.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::InvalidArgument(
                "augmentation probabilities must lie in [0, 1]".into(),
            ));
        }
        let nonneg = [
            g.dropout_ratio,
            g.tilt_max,
            g.jitter_sigma,
            g.jitter_clip,
            c.translation_ratio,
            c.jitter_sigma,
        ];
        if nonneg.iter().any(|v| !(*v >= 0.0)) {
            return Err(Error::InvalidArgument(
                "augmentation magnitudes must be non-negative".into(),
            ));
        }
        if g.dropout_ratio >= 1.0 {
            return Err(Error::InvalidArgument(
                "dropout ratio must be below 1".into(),
            ));
        }
        if let Some(b) = c.auto_contrast_blend {
            if !(0.0..=1.0).contains(&b) {
                return Err(Error::InvalidArgument(
                    "auto-contrast blend must lie in [0, 1]".into(),
                ));
            }
        }
        Ok(())
    }
}

fn rot_z(theta: f64) -> [[f64; 3]; 3] {
    let (s, c) = theta.sin_cos();
    [[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]]
}

fn rot_x(theta: f64) -> [[f64; 3]; 3] {
    let (s, c) = theta.sin_cos();
    [[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]]
}

fn rot_y(theta: f64) -> [[f64; 3]; 3] {
    let (s, c) = theta.sin_cos();
    [[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]]
}

fn matmul3(a: &[[f64; 3]; 3], b: &[[f64; 3]; 3]) -> [[f64; 3]; 3] {
    std::array::from_fn(|i| std::array::from_fn(|j| (0..3).map(|k| a[i][k] * b[k][j]).sum()))
}

pub fn rotate(positions: &mut [[f64; 3]], m: &[[f64; 3]; 3]) {
    for p in positions.iter_mut() {
        let q = *p;
        *p = std::array::from_fn(|i| m[i][0] * q[0] + m[i][1] * q[1] + m[i][2] * q[2]);
    }
}

/// Center shift, dropout, rotation, flips and jitter, in that order.
pub fn apply_geometric(
    pc: &PointCloud,
    cfg: &GeometricConfig,
    rng_seed: u64,
) -> Result<PointCloud> {
    if pc.is_empty() {
        return Err(Error::InvalidCloud("cannot augment an empty cloud".into()));
    }
    let mut rng = crate::rng::stream(rng_seed, &[0x67_656f]);
    let mut out = pc.clone();

    if cfg.center_shift {
        let n = out.len() as f64;
        let cx = out.positions.iter().map(|p| p[0]).sum::<f64>() / n;
        let cy = out.positions.iter().map(|p| p[1]).sum::<f64>() / n;
        let zmin = out
            .positions
            .iter()
            .map(|p| p[2])
            .fold(f64::INFINITY, f64::min);
        for p in &mut out.positions {
            p[0] -= cx;
            p[1] -= cy;
            p[2] -= zmin;
        }
    }

    if cfg.dropout_p > 0.0 && rng.random_bool(cfg.dropout_p) {
        let n = out.len();
        let keep = n - (n as f64 * cfg.dropout_ratio).floor() as usize;
        let mut idx = sample(&mut rng, n, keep).into_vec();
        idx.sort_unstable();
        out = out.select(&idx);
    }

    let mut m = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
    let mut rotated = false;
    if cfg.rotate_z {
        m = rot_z(rng.random_range(-PI..=PI));
        rotated = true;
    }
    if cfg.tilt_max > 0.0 {
        let ax = rng.random_range(-cfg.tilt_max..=cfg.tilt_max);
        let ay = rng.random_range(-cfg.tilt_max..=cfg.tilt_max);
        m = matmul3(&rot_y(ay), &matmul3(&rot_x(ax), &m));
        rotated = true;
    }
    if rotated {
        rotate(&mut out.positions, &m);
    }

    for axis in 0..3 {
        if cfg.flip_p[axis] > 0.0 && rng.random_bool(cfg.flip_p[axis]) {
            for p in &mut out.positions {
                p[axis] = -p[axis];
            }
        }
    }

    if cfg.jitter_sigma > 0.0 {
        let normal = Normal::new(0.0, cfg.jitter_sigma).expect("finite sigma");
        for p in &mut out.positions {
            for c in p.iter_mut() {
                *c += normal
                    .sample(&mut rng)
                    .clamp(-cfg.jitter_clip, cfg.jitter_clip);
            }
        }
    }
    Ok(out)
}

/// Maps 0-255 colors to [-1, 1].
#[inline]
pub fn normalize_color(c: f64) -> f64 {
    c / 127.5 - 1.0
}

/// Auto-contrast, translation, jitter, then optional normalization.
/// Returns per-point real-valued color features.
pub fn apply_chromatic(
    pc: &PointCloud,
    cfg: &ChromaticConfig,
    rng_seed: u64,
) -> Result<Vec<[f64; 3]>> {
    let colors = pc
        .colors
        .as_ref()
        .ok_or_else(|| Error::MissingColors(pc.scene_id.clone()))?;
    let mut rng = crate::rng::stream(rng_seed, &[0x6368_726f]);
    let mut feats: Vec<[f64; 3]> = colors.iter().map(|c| c.map(f64::from)).collect();

    if cfg.auto_contrast_p > 0.0 && !feats.is_empty() && rng.random_bool(cfg.auto_contrast_p) {
        let blend = cfg
            .auto_contrast_blend
            .unwrap_or_else(|| rng.random::<f64>());
        auto_contrast(&mut feats, blend);
    }

    if cfg.translation_p > 0.0 && rng.random_bool(cfg.translation_p) {
        let shift: [f64; 3] = std::array::from_fn(|_| {
            (rng.random::<f64>() - 0.5) * 255.0 * 2.0 * cfg.translation_ratio
        });
        for f in &mut feats {
            for ch in 0..3 {
                f[ch] = (f[ch] + shift[ch]).clamp(0.0, 255.0);
            }
        }
    }

    if cfg.jitter_p > 0.0 && cfg.jitter_sigma > 0.0 && rng.random_bool(cfg.jitter_p) {
        let normal = Normal::new(0.0, cfg.jitter_sigma).expect("finite sigma");
        for f in &mut feats {
            for v in f.iter_mut() {
                *v = (*v + normal.sample(&mut rng)).clamp(0.0, 255.0);
            }
        }
    }

    if cfg.normalize {
        for f in &mut feats {
            for v in f.iter_mut() {
                *v = normalize_color(*v);
            }
        }
    }
    Ok(feats)
}

/// Stretches each channel to [0, 255] and blends with the original.
pub fn auto_contrast(feats: &mut [[f64; 3]], blend: f64) {
    for ch in 0..3 {
        let lo = feats.iter().map(|f| f[ch]).fold(f64::INFINITY, f64::min);
        let hi = feats
            .iter()
            .map(|f| f[ch])
            .fold(f64::NEG_INFINITY, f64::max);
        if hi - lo <= 0.0 {
            continue;
        }
        let range = hi - lo;
        for f in feats.iter_mut() {
            let stretched = (f[ch] - lo) / range * 255.0;
            f[ch] = (1.0 - blend) * f[ch] + blend * stretched;
        }
    }
}

/// Color features without augmentation: normalized to [-1, 1].
pub fn color_features(pc: &PointCloud) -> Result<Vec<[f64; 3]>> {
    apply_chromatic(pc, &ChromaticConfig::normalize_only(), 0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TtaConfig {
    pub yaw_angles: Vec<f64>,
    pub mirror_x: bool,
}

impl Default for TtaConfig {
    fn default() -> Self {
        Self {
            yaw_angles: vec![0.0, PI / 2.0, PI, 3.0 * PI / 2.0],
            mirror_x: true,
        }
    }
}

impl TtaConfig {
    pub fn identity() -> Self {
        Self {
            yaw_angles: vec![0.0],
            mirror_x: false,
        }
    }

    /// The yaw list actually used: identity first, duplicates of 0 removed.
    fn yaws(&self) -> Vec<f64> {
        let mut out = vec![0.0];
        out.extend(self.yaw_angles.iter().copied().filter(|&a| a != 0.0));
        out
    }

    pub fn num_instances(&self) -> usize {
        self.yaws().len() * if self.mirror_x { 2 } else { 1 }
    }
}

/// Identifies one TTA instance: yaw angle and whether x is mirrored.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TtaTransform {
    pub id: usize,
    pub yaw: f64,
    pub mirror_x: bool,
}

/// One transformed copy per (yaw, mirror) pair, identity first. Point order
/// and count are preserved in every copy.
pub fn tta_instances(pc: &PointCloud, cfg: &TtaConfig) -> Vec<(PointCloud, TtaTransform)> {
    let mut out = Vec::with_capacity(cfg.num_instances());
    let mirrors: &[bool] = if cfg.mirror_x {
        &[false, true]
    } else {
        &[false]
    };
    for yaw in cfg.yaws() {
        for &mirror in mirrors {
            let mut inst = pc.clone();
            if yaw != 0.0 {
                rotate(&mut inst.positions, &rot_z(yaw));
            }
            if mirror {
                for p in &mut inst.positions {
                    p[0] = -p[0];
                }
            }
            let id = out.len();
            out.push((
                inst,
                TtaTransform {
                    id,
                    yaw,
                    mirror_x: mirror,
                },
            ));
        }
    }
    out
}
