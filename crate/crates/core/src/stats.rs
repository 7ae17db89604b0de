//! Dataset statistics: neighborhood density and per-class distributions.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::cloud::{dist2, PointCloud, IGNORE_LABEL};
use crate::error::{Error, Result};
use crate::exec;
use crate::manifest::DatasetManifest;
use crate::sampling::KdTree;

/// Mean and population standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (0.0, 0.0);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Mean and standard deviation, over points, of the mean distance from each
/// point to its `k` nearest neighbors (self excluded).
pub fn neighborhood_density(pc: &PointCloud, k: usize) -> Result<(f64, f64)> {
    if k == 0 {
        return Err(Error::InvalidArgument("k must be at least 1".into()));
    }
    if pc.len() <= k {
        return Err(Error::TooFewPoints {
            needed: k,
            got: pc.len(),
        });
    }
    let tree = KdTree::build(&pc.positions);
    let per_point = exec::map_range(pc.len(), |i| {
        let p = &pc.positions[i];
        let nb = tree.nearest(p, k, Some(i));
        nb.iter()
            .map(|&j| dist2(p, &pc.positions[j]).sqrt())
            .sum::<f64>()
            / k as f64
    });
    Ok(mean_std(&per_point))
}

/// Per-class distribution of points and instances across scenes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassStats {
    pub num_scenes: usize,
    pub points_mean: Vec<f64>,
    pub points_std: Vec<f64>,
    /// Absent when any scene lacks instance ids.
    pub instances_mean: Option<Vec<f64>>,
    pub instances_std: Option<Vec<f64>>,
    /// Fraction of all points per class.
    pub point_share: Vec<f64>,
    /// Fraction of all points carrying the ignore label.
    pub ignore_share: f64,
}

impl ClassStats {
    pub fn from_clouds(clouds: &[PointCloud], num_classes: usize) -> Result<Self> {
        let per_scene: Vec<(Vec<f64>, Option<Vec<f64>>, f64)> = clouds
            .iter()
            .map(|pc| scene_counts(pc, num_classes))
            .collect::<Result<_>>()?;
        let column =
            |f: &dyn Fn(&(Vec<f64>, Option<Vec<f64>>, f64)) -> Option<f64>| -> Option<Vec<f64>> {
                per_scene.iter().map(f).collect()
            };
        let mut points_mean = vec![0.0; num_classes];
        let mut points_std = vec![0.0; num_classes];
        let all_instances = per_scene.iter().all(|s| s.1.is_some()) && !per_scene.is_empty();
        let mut inst_mean = vec![0.0; num_classes];
        let mut inst_std = vec![0.0; num_classes];
        let mut totals = vec![0.0; num_classes];
        for c in 0..num_classes {
            let pts = column(&|s| Some(s.0[c])).unwrap_or_default();
            (points_mean[c], points_std[c]) = mean_std(&pts);
            totals[c] = pts.iter().sum();
            if all_instances {
                let inst = column(&|s| s.1.as_ref().map(|v| v[c])).unwrap();
                (inst_mean[c], inst_std[c]) = mean_std(&inst);
            }
        }
        let ignored: f64 = per_scene.iter().map(|s| s.2).sum();
        let total = totals.iter().sum::<f64>() + ignored;
        let (point_share, ignore_share) = if total > 0.0 {
            (totals.iter().map(|t| t / total).collect(), ignored / total)
        } else {
            (vec![0.0; num_classes], 0.0)
        };
        Ok(ClassStats {
            num_scenes: clouds.len(),
            points_mean,
            points_std,
            instances_mean: all_instances.then_some(inst_mean),
            instances_std: all_instances.then_some(inst_std),
            point_share,
            ignore_share,
        })
    }

    pub fn share_of(&self, classes: &[usize]) -> f64 {
        classes.iter().map(|&c| self.point_share[c]).sum()
    }
}

fn scene_counts(pc: &PointCloud, num_classes: usize) -> Result<(Vec<f64>, Option<Vec<f64>>, f64)> {
    let labels = pc
        .labels
        .as_ref()
        .ok_or_else(|| Error::MissingLabels(pc.scene_id.clone()))?;
    pc.validate(Some(num_classes))?;
    let mut counts = vec![0.0; num_classes];
    let mut ignored = 0.0;
    let mut seen: Vec<HashSet<u32>> = vec![HashSet::new(); num_classes];
    for (i, &l) in labels.iter().enumerate() {
        if l == IGNORE_LABEL {
            ignored += 1.0;
            continue;
        }
        counts[l as usize] += 1.0;
        if let Some(inst) = &pc.instances {
            seen[l as usize].insert(inst[i]);
        }
    }
    let instances = pc
        .instances
        .as_ref()
        .map(|_| seen.iter().map(|s| s.len() as f64).collect());
    Ok((counts, instances, ignored))
}

/// Loads every scene of `manifest` and aggregates its class statistics.
pub fn class_statistics(manifest: &DatasetManifest, num_classes: usize) -> Result<ClassStats> {
    let clouds = manifest.load_all()?;
    ClassStats::from_clouds(&clouds, num_classes)
}
