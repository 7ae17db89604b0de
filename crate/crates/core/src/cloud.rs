//! Point-cloud container and range filtering.

use crate::error::{Error, Result};

/// Class index into a label space.
pub type Label = u16;

/// Label value marking points excluded from training and scoring.
pub const IGNORE_LABEL: Label = Label::MAX;

/// One scan: positions plus optional per-point attributes.
///
/// Optional arrays are either absent or exactly as long as `positions`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PointCloud {
    pub scene_id: String,
    pub positions: Vec<[f64; 3]>,
    pub colors: Option<Vec<[u8; 3]>>,
    pub intensity: Option<Vec<f32>>,
    pub labels: Option<Vec<Label>>,
    pub instances: Option<Vec<u32>>,
}

impl PointCloud {
    pub fn new(scene_id: impl Into<String>, positions: Vec<[f64; 3]>) -> Self {
        Self {
            scene_id: scene_id.into(),
            positions,
            ..Default::default()
        }
    }

    pub fn with_colors(mut self, colors: Vec<[u8; 3]>) -> Self {
        self.colors = Some(colors);
        self
    }

    pub fn with_intensity(mut self, intensity: Vec<f32>) -> Self {
        self.intensity = Some(intensity);
        self
    }

    pub fn with_labels(mut self, labels: Vec<Label>) -> Self {
        self.labels = Some(labels);
        self
    }

    pub fn with_instances(mut self, instances: Vec<u32>) -> Self {
        self.instances = Some(instances);
        self
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    /// Checks array lengths, finiteness, and (optionally) the label range.
    pub fn validate(&self, num_classes: Option<usize>) -> Result<()> {
        let n = self.len();
        let check = |name: &str, len: Option<usize>| match len {
            Some(l) if l != n => Err(Error::InvalidCloud(format!(
                "{name} has {l} entries, positions has {n}"
            ))),
            _ => Ok(()),
        };
        check("colors", self.colors.as_ref().map(Vec::len))?;
        check("intensity", self.intensity.as_ref().map(Vec::len))?;
        check("labels", self.labels.as_ref().map(Vec::len))?;
        check("instances", self.instances.as_ref().map(Vec::len))?;
        if let Some(i) = self
            .positions
            .iter()
            .position(|p| p.iter().any(|c| !c.is_finite()))
        {
            return Err(Error::InvalidCloud(format!("position {i} is not finite")));
        }
        if let (Some(c), Some(labels)) = (num_classes, &self.labels) {
            if let Some(&l) = labels
                .iter()
                .find(|&&l| l != IGNORE_LABEL && l as usize >= c)
            {
                return Err(Error::LabelOutOfRange {
                    label: l as u32,
                    num_classes: c,
                });
            }
        }
        Ok(())
    }

    /// Returns a new cloud holding the points at `indices`, in that order.
    pub fn select(&self, indices: &[usize]) -> PointCloud {
        fn pick<T: Copy>(v: &Option<Vec<T>>, idx: &[usize]) -> Option<Vec<T>> {
            v.as_ref().map(|v| idx.iter().map(|&i| v[i]).collect())
        }
        PointCloud {
            scene_id: self.scene_id.clone(),
            positions: indices.iter().map(|&i| self.positions[i]).collect(),
            colors: pick(&self.colors, indices),
            intensity: pick(&self.intensity, indices),
            labels: pick(&self.labels, indices),
            instances: pick(&self.instances, indices),
        }
    }

    /// Keeps the points where `keep` is true.
    pub fn retain_mask(&self, keep: &[bool]) -> PointCloud {
        let idx: Vec<usize> = keep
            .iter()
            .enumerate()
            .filter_map(|(i, &k)| k.then_some(i))
            .collect();
        self.select(&idx)
    }

    /// Axis-aligned bounding box `(min, max)`; `None` for an empty cloud.
    pub fn bounds(&self) -> Option<([f64; 3], [f64; 3])> {
        bounds(&self.positions)
    }
}

pub fn bounds(positions: &[[f64; 3]]) -> Option<([f64; 3], [f64; 3])> {
    let first = *positions.first()?;
    Some(
        positions
            .iter()
            .fold((first, first), |(mut lo, mut hi), p| {
                for a in 0..3 {
                    lo[a] = lo[a].min(p[a]);
                    hi[a] = hi[a].max(p[a]);
                }
                (lo, hi)
            }),
    )
}

#[inline]
pub fn norm(p: &[f64; 3]) -> f64 {
    (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt()
}

#[inline]
pub fn dist2(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    let dz = a[2] - b[2];
    dx * dx + dy * dy + dz * dz
}

/// Drops points farther than `max_range` meters from the scanner origin.
pub fn distance_filter(pc: &PointCloud, max_range: f64) -> Result<PointCloud> {
    if !(max_range > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "max_range must be positive, got {max_range}"
        )));
    }
    let keep: Vec<bool> = pc.positions.iter().map(|p| norm(p) <= max_range).collect();
    Ok(pc.retain_mask(&keep))
}
