//! Confusion-matrix metrics, fast single-subsample evaluation, and precise
//! testing by fragment voting with test-time augmentation.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use crate::augment::{tta_instances, TtaConfig};
use crate::cloud::{Label, PointCloud, IGNORE_LABEL};
use crate::error::{Error, Result};
use crate::labelspace::{build_translation, translate_labels, AliasTable, LabelSpace};
use crate::model::Model;
use crate::rng::derive;
use crate::sampling::{fragment_partition_positions, split_to_budget, voxel_grid_sample};
use crate::training::input_features;

/// Default point budget per inference chunk.
pub const FRAGMENT_BUDGET: usize = 200_000;

/// Counts indexed by (true class, predicted class).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    num_classes: usize,
    counts: Vec<u64>,
    /// Classes dropped from scoring; truth points of these classes are not counted.
    pub excluded: BTreeSet<usize>,
}

impl ConfusionMatrix {
    pub fn new(num_classes: usize) -> Self {
        Self {
            num_classes,
            counts: vec![0; num_classes * num_classes],
            excluded: BTreeSet::new(),
        }
    }

    pub fn with_excluded(mut self, excluded: BTreeSet<usize>) -> Self {
        self.excluded = excluded;
        self
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn get(&self, truth: usize, predicted: usize) -> u64 {
        self.counts[truth * self.num_classes + predicted]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Builds a matrix directly from counts, row-major by true class.
    pub fn from_counts(rows: &[Vec<u64>]) -> Result<Self> {
        let n = rows.len();
        if rows.iter().any(|r| r.len() != n) {
            return Err(Error::Shape("confusion matrix must be square".into()));
        }
        Ok(Self {
            num_classes: n,
            counts: rows.concat(),
            excluded: BTreeSet::new(),
        })
    }

    /// Adds one count per non-ignored, non-excluded truth point. Nothing is
    /// counted when any index is out of range.
    pub fn accumulate(&mut self, predicted: &[Label], truth: &[Label]) -> Result<()> {
        if predicted.len() != truth.len() {
            return Err(Error::Shape(format!(
                "{} predictions for {} truth labels",
                predicted.len(),
                truth.len()
            )));
        }
        let n = self.num_classes;
        let out_of_range = |l: Label| Error::LabelOutOfRange {
            label: l as u32,
            num_classes: n,
        };
        for (&p, &t) in predicted.iter().zip(truth) {
            if t != IGNORE_LABEL && t as usize >= n {
                return Err(out_of_range(t));
            }
            if t != IGNORE_LABEL && p as usize >= n {
                return Err(out_of_range(p));
            }
        }
        for (&p, &t) in predicted.iter().zip(truth) {
            if t == IGNORE_LABEL || self.excluded.contains(&(t as usize)) {
                continue;
            }
            self.counts[t as usize * n + p as usize] += 1;
        }
        Ok(())
    }

    pub fn merge(&mut self, other: &ConfusionMatrix) -> Result<()> {
        if other.num_classes != self.num_classes {
            return Err(Error::Shape(format!(
                "cannot merge {}-class and {}-class matrices",
                self.num_classes, other.num_classes
            )));
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        self.excluded.extend(other.excluded.iter().copied());
        Ok(())
    }

    pub fn metrics(&self) -> Result<MetricsReport> {
        let total = self.total();
        if total == 0 {
            return Err(Error::InvalidArgument("confusion matrix is empty".into()));
        }
        let n = self.num_classes;
        let mut iou = vec![0.0; n];
        let mut acc = vec![0.0; n];
        let mut valid = vec![false; n];
        let mut iou_ratios = Vec::new();
        let mut acc_ratios = Vec::new();
        let mut trace = 0;
        for c in 0..n {
            let tp = self.get(c, c);
            let row: u64 = (0..n).map(|p| self.get(c, p)).sum();
            let col: u64 = (0..n).map(|t| self.get(t, c)).sum();
            trace += tp;
            let (fn_, fp) = (row - tp, col - tp);
            let union = tp + fp + fn_;
            if union > 0 {
                iou[c] = tp as f64 / union as f64;
            }
            if row > 0 {
                acc[c] = tp as f64 / row as f64;
            }
            valid[c] = union > 0 && !self.excluded.contains(&c);
            if valid[c] {
                iou_ratios.push((tp, union));
                acc_ratios.push((tp, row));
            }
        }
        Ok(MetricsReport {
            class_names: (0..n).map(|c| format!("class{c}")).collect(),
            miou: mean_of_ratios(&iou_ratios),
            macc: mean_of_ratios(&acc_ratios),
            all_acc: trace as f64 / total as f64,
            iou,
            acc,
            valid,
            precise: false,
        })
    }
}

/// Mean of `num / den` ratios (a zero denominator counts as 0), correctly
/// rounded in practice: ratios and sum are carried in double-double.
pub fn mean_of_ratios(ratios: &[(u64, u64)]) -> f64 {
    if ratios.is_empty() {
        return 0.0;
    }
    let (mut hi, mut lo) = (0.0f64, 0.0f64);
    for &(num, den) in ratios {
        if den == 0 {
            continue;
        }
        let (a, b) = (num as f64, den as f64);
        let q = a / b;
        let q_lo = (-q).mul_add(b, a) / b;
        let s = hi + q;
        let bb = s - hi;
        let err = (hi - (s - bb)) + (q - bb);
        let t = err + lo + q_lo;
        hi = s + t;
        lo = t - (hi - s);
    }
    let k = ratios.len() as f64;
    let q = hi / k;
    let r = (-q).mul_add(k, hi) + lo;
    q + r / k
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub class_names: Vec<String>,
    pub iou: Vec<f64>,
    pub acc: Vec<f64>,
    /// Whether a class was scored (present and not excluded).
    pub valid: Vec<bool>,
    pub miou: f64,
    pub macc: f64,
    pub all_acc: f64,
    /// Produced with test-time augmentation and fragment voting.
    pub precise: bool,
}

impl MetricsReport {
    pub fn with_names(mut self, space: &LabelSpace) -> Self {
        if space.len() == self.iou.len() {
            self.class_names = space.classes.clone();
        }
        self
    }

    pub fn iou_of(&self, name: &str) -> Option<f64> {
        self.class_names
            .iter()
            .position(|c| c == name)
            .map(|i| self.iou[i])
    }

    /// Per-class rows, then the summary row. Precise reports mark the
    /// summary with `*`.
    pub fn to_table(&self) -> String {
        let mut out = String::from("class\tIoU\tAcc\tvalid\n");
        for (i, name) in self.class_names.iter().enumerate() {
            let _ = writeln!(
                out,
                "{name}\t{:.4}\t{:.4}\t{}",
                self.iou[i], self.acc[i], self.valid[i]
            );
        }
        let star = if self.precise { "*" } else { "" };
        let _ = writeln!(out, "mIoU{star}\tmAcc{star}\tallAcc{star}");
        let _ = writeln!(
            out,
            "{:.4}\t{:.4}\t{:.4}",
            self.miou, self.macc, self.all_acc
        );
        out
    }

    /// One `key=value` line per entry, full precision.
    pub fn to_key_values(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "miou={}", self.miou);
        let _ = writeln!(out, "macc={}", self.macc);
        let _ = writeln!(out, "all_acc={}", self.all_acc);
        let _ = writeln!(out, "precise={}", self.precise);
        for (i, name) in self.class_names.iter().enumerate() {
            let _ = writeln!(out, "iou.{name}={}", self.iou[i]);
            let _ = writeln!(out, "acc.{name}={}", self.acc[i]);
            let _ = writeln!(out, "valid.{name}={}", self.valid[i]);
        }
        out
    }
}

/// Per-point class vote counts.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VoteBuffer {
    num_classes: usize,
    votes: Vec<u32>,
    coverage: Vec<u32>,
}

impl VoteBuffer {
    pub fn new(num_points: usize, num_classes: usize) -> Self {
        Self {
            num_classes,
            votes: vec![0; num_points * num_classes],
            coverage: vec![0; num_points],
        }
    }

    pub fn num_points(&self) -> usize {
        self.coverage.len()
    }

    pub fn coverage(&self) -> &[u32] {
        &self.coverage
    }

    pub fn votes(&self, point: usize) -> &[u32] {
        &self.votes[point * self.num_classes..(point + 1) * self.num_classes]
    }

    /// One vote for `predictions[j]` at point `indices[j]`.
    pub fn add(&mut self, indices: &[usize], predictions: &[Label]) -> Result<()> {
        if indices.len() != predictions.len() {
            return Err(Error::Shape(
                "indices and predictions differ in length".into(),
            ));
        }
        for (&i, &p) in indices.iter().zip(predictions) {
            if i >= self.coverage.len() || p as usize >= self.num_classes {
                return Err(Error::InvalidArgument(format!(
                    "vote ({i}, {p}) out of range"
                )));
            }
        }
        for (&i, &p) in indices.iter().zip(predictions) {
            self.votes[i * self.num_classes + p as usize] += 1;
            self.coverage[i] += 1;
        }
        Ok(())
    }

    pub fn merge(&mut self, other: &VoteBuffer) -> Result<()> {
        if other.num_classes != self.num_classes || other.coverage.len() != self.coverage.len() {
            return Err(Error::Shape("vote buffers differ in shape".into()));
        }
        for (a, b) in self.votes.iter_mut().zip(&other.votes) {
            *a += b;
        }
        for (a, b) in self.coverage.iter_mut().zip(&other.coverage) {
            *a += b;
        }
        Ok(())
    }

    /// Most-voted class per point, ties to the lowest index.
    pub fn finalize(&self) -> Result<Vec<Label>> {
        (0..self.num_points())
            .map(|i| {
                if self.coverage[i] == 0 {
                    return Err(Error::InvalidArgument(format!(
                        "point {i} received no vote"
                    )));
                }
                let v = self.votes(i);
                let mut best = 0;
                for c in 1..v.len() {
                    if v[c] > v[best] {
                        best = c;
                    }
                }
                Ok(best as Label)
            })
            .collect()
    }

    /// Share of each point's votes held by its winning class.
    pub fn margins(&self) -> Vec<f64> {
        (0..self.num_points())
            .map(|i| {
                let top = self.votes(i).iter().copied().max().unwrap_or(0);
                if self.coverage[i] == 0 {
                    0.0
                } else {
                    top as f64 / self.coverage[i] as f64
                }
            })
            .collect()
    }
}

fn predict(
    model: &Model,
    positions: &[[f64; 3]],
    features: &crate::autodiff::Tensor,
) -> Result<Vec<Label>> {
    let logits = model.forward(positions, features)?;
    Ok(logits
        .argmax_rows()
        .into_iter()
        .map(|c| c as Label)
        .collect())
}

fn gather_rows(t: &crate::autodiff::Tensor, rows: &[usize]) -> crate::autodiff::Tensor {
    let mut out = crate::autodiff::Tensor::zeros(rows.len(), t.cols);
    for (r, &i) in rows.iter().enumerate() {
        out.row_mut(r).copy_from_slice(t.row(i));
    }
    out
}

/// Predicts every point from a single voxel subsample: each point takes the
/// prediction of its voxel's representative.
pub fn fast_eval(
    model: &Model,
    pc: &PointCloud,
    voxel_size: f64,
    rng_seed: u64,
) -> Result<Vec<Label>> {
    if pc.is_empty() {
        return Err(Error::InvalidCloud("cannot evaluate an empty cloud".into()));
    }
    let sample = voxel_grid_sample(pc, voxel_size, rng_seed)?;
    let feats = input_features(pc)?;
    let positions: Vec<[f64; 3]> = sample.kept.iter().map(|&i| pc.positions[i]).collect();
    let pred = predict(model, &positions, &gather_rows(&feats, &sample.kept))?;
    Ok(sample.inverse.iter().map(|&j| pred[j]).collect())
}

/// Inference chunks for one TTA instance: fragments split to the budget,
/// with chunks too small for the model folded into a neighbor.
fn inference_chunks(
    positions: &[[f64; 3]],
    voxel_size: f64,
    rng_seed: u64,
    budget: usize,
    min_points: usize,
) -> Result<Vec<Vec<usize>>> {
    let mut chunks: Vec<Vec<usize>> = Vec::new();
    for f in fragment_partition_positions(positions, voxel_size, rng_seed)? {
        chunks.extend(split_to_budget(positions, f.indices, budget));
    }
    let mut out: Vec<Vec<usize>> = Vec::with_capacity(chunks.len());
    let mut carry: Vec<usize> = Vec::new();
    for mut c in chunks {
        if !carry.is_empty() {
            c.append(&mut carry);
        }
        if c.len() < min_points {
            carry = c;
        } else {
            out.push(c);
        }
    }
    if !carry.is_empty() {
        match out.last_mut() {
            Some(last) => last.append(&mut carry),
            None => out.push(carry),
        }
    }
    for c in &mut out {
        c.sort_unstable();
    }
    Ok(out)
}

/// Predictions and vote tallies from a precise test.
#[derive(Debug, Clone, PartialEq)]
pub struct PreciseOutput {
    pub labels: Vec<Label>,
    pub votes: VoteBuffer,
    /// Present when the cloud carries labels in the model's space.
    pub report: Option<MetricsReport>,
}

/// Votes from every TTA instance and every fragment.
pub fn precise_votes(
    model: &Model,
    pc: &PointCloud,
    voxel_size: f64,
    tta: &TtaConfig,
    rng_seed: u64,
    budget: usize,
) -> Result<VoteBuffer> {
    if pc.is_empty() {
        return Err(Error::InvalidCloud("cannot evaluate an empty cloud".into()));
    }
    let k = model.config().k_neighbors;
    if pc.len() < k {
        return Err(Error::TooFewPoints {
            needed: k,
            got: pc.len(),
        });
    }
    let feats = input_features(pc)?;
    let instances = tta_instances(pc, tta);
    let mut jobs: Vec<(usize, Vec<usize>)> = Vec::new();
    for (inst, t) in &instances {
        let seed = derive(rng_seed, &[t.id as u64]);
        for chunk in inference_chunks(&inst.positions, voxel_size, seed, budget, k)? {
            jobs.push((t.id, chunk));
        }
    }
    let preds = crate::exec::map(&jobs, |(id, chunk)| {
        let positions: Vec<[f64; 3]> = chunk
            .iter()
            .map(|&i| instances[*id].0.positions[i])
            .collect();
        predict(model, &positions, &gather_rows(&feats, chunk))
    });
    let mut votes = VoteBuffer::new(pc.len(), model.num_classes());
    for ((_, chunk), pred) in jobs.iter().zip(preds) {
        votes.add(chunk, &pred?)?;
    }
    Ok(votes)
}

/// Fragment voting over all TTA instances, scored when labels are present.
pub fn precise_test(
    model: &Model,
    pc: &PointCloud,
    voxel_size: f64,
    tta: &TtaConfig,
    rng_seed: u64,
) -> Result<PreciseOutput> {
    let votes = precise_votes(model, pc, voxel_size, tta, rng_seed, FRAGMENT_BUDGET)?;
    let labels = votes.finalize()?;
    let report = match &pc.labels {
        Some(truth) => {
            let mut conf = ConfusionMatrix::new(model.num_classes());
            conf.accumulate(&labels, truth)?;
            let mut r = conf.metrics()?;
            r.precise = true;
            Some(r)
        }
        None => None,
    };
    Ok(PreciseOutput {
        labels,
        votes,
        report,
    })
}

/// Scores a model on scenes labeled in another space. Truth labels are
/// translated into the model's space. Model classes that received unmatched
/// scene classes, and model classes no scene class maps to, are excluded
/// from the metrics.
#[allow(clippy::too_many_arguments)]
pub fn cross_domain_eval(
    model: &Model,
    model_space: &LabelSpace,
    scenes: &[PointCloud],
    scene_space: &LabelSpace,
    aliases: &AliasTable,
    voxel_size: f64,
    tta: &TtaConfig,
    rng_seed: u64,
) -> Result<MetricsReport> {
    if model_space.len() != model.num_classes() {
        return Err(Error::LabelSpace(format!(
            "model predicts {} classes but `{}` has {}",
            model.num_classes(),
            model_space.name,
            model_space.len()
        )));
    }
    let map = build_translation(scene_space, model_space, aliases)?;
    let preds = crate::exec::map_range(scenes.len(), |i| {
        let votes = precise_votes(
            model,
            &scenes[i],
            voxel_size,
            tta,
            derive(rng_seed, &[i as u64]),
            FRAGMENT_BUDGET,
        )?;
        votes.finalize()
    });
    // Classes the scenes cannot contain are not scored either.
    let mut excluded = map.excluded.clone();
    excluded.extend((0..model_space.len()).filter(|t| !map.mapping.contains(t)));
    let mut conf = ConfusionMatrix::new(model.num_classes()).with_excluded(excluded);
    for (pc, pred) in scenes.iter().zip(preds) {
        let truth = pc
            .labels
            .as_ref()
            .ok_or_else(|| Error::MissingLabels(pc.scene_id.clone()))?;
        conf.accumulate(&pred?, &translate_labels(truth, &map)?)?;
    }
    let mut report = conf.metrics()?.with_names(model_space);
    report.precise = true;
    Ok(report)
}
