use crate::augment::{apply_chromatic, apply_geometric, color_features, AugmentConfig};
use crate::autodiff::Tensor;
use crate::cloud::{Label, PointCloud};
use crate::error::{Error, Result};
use crate::rng::derive;
use crate::sampling::{sphere_crop, voxel_grid_sample_positions};

/// One network input: positions, per-point features and targets.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub positions: Vec<[f64; 3]>,
    pub features: Tensor,
    pub labels: Vec<Label>,
}

impl Sample {
    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }
}

/// Normalized color features of a cloud as a `points x 3` tensor.
pub fn input_features(pc: &PointCloud) -> Result<Tensor> {
    Ok(Tensor::from_rows(&color_features(pc)?))
}

/// Augment, voxel-sample, then sphere-crop one labeled scene.
pub fn training_sample(
    pc: &PointCloud,
    augment: &AugmentConfig,
    voxel_size: f64,
    crop_points: usize,
    seed: u64,
) -> Result<Sample> {
    let labels = pc
        .labels
        .as_ref()
        .ok_or_else(|| Error::MissingLabels(pc.scene_id.clone()))?;
    if labels.len() != pc.len() {
        return Err(Error::InvalidCloud(format!(
            "scene `{}` has mismatched labels",
            pc.scene_id
        )));
    }
    let geo = apply_geometric(pc, &augment.geometric, derive(seed, &[1]))?;
    let feats = apply_chromatic(&geo, &augment.chromatic, derive(seed, &[2]))?;
    let voxel = voxel_grid_sample_positions(&geo.positions, voxel_size, derive(seed, &[3]))?;
    let sub = geo.select(&voxel.kept);
    let crop = sphere_crop(&sub, crop_points, derive(seed, &[4]))?;
    let rows: Vec<[f64; 3]> = crop.iter().map(|&i| feats[voxel.kept[i]]).collect();
    let sub_labels = sub.labels.as_ref().expect("labels checked above");
    Ok(Sample {
        positions: crop.iter().map(|&i| sub.positions[i]).collect(),
        features: Tensor::from_rows(&rows),
        labels: crop.iter().map(|&i| sub_labels[i]).collect(),
    })
}
