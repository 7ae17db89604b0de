//! U-shaped local-attention segmentation network.
//!
//! Two (or more) encoder stages each run grouped vector attention over every
//! point's k nearest neighbors and then mean-pool onto a coarser voxel grid.
//! The decoder unpools back along the same voxel membership, fuses the skip
//! features of each stage, and a linear segmentation head produces per-point
//! class logits. All arithmetic is `f64`; gradients are exact.

mod checkpoint;

use std::sync::Arc;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Segments, Tensor, Var};
use crate::error::{Error, Result};
use crate::sampling::{knn_self, voxel_groups};

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_VERSION};

/// Channels per attention group.
pub const GROUP_SIZE: usize = 8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// Per-point feature channels (colors); coordinates are handled separately.
    pub input_channels: usize,
    pub stage_widths: Vec<usize>,
    pub k_neighbors: usize,
    /// Pooling voxel size after each stage, meters, strictly increasing.
    pub pool_voxel_sizes: Vec<f64>,
    pub num_classes: usize,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            input_channels: 3,
            stage_widths: vec![32, 64],
            k_neighbors: 8,
            pool_voxel_sizes: vec![0.05, 0.10],
            num_classes: 11,
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.input_channels == 0 {
            return bad("input_channels must be positive".into());
        }
        if self.stage_widths.is_empty() {
            return bad("at least one stage is required".into());
        }
        if let Some(w) = self
            .stage_widths
            .iter()
            .find(|&&w| w == 0 || w % GROUP_SIZE != 0)
        {
            return bad(format!(
                "stage width {w} must be a positive multiple of {GROUP_SIZE}"
            ));
        }
        if self.pool_voxel_sizes.len() != self.stage_widths.len() {
            return bad("one pooling voxel size per stage is required".into());
        }
        if self
            .pool_voxel_sizes
            .iter()
            .any(|&v| !(v > 0.0 && v.is_finite()))
        {
            return bad("pooling voxel sizes must be positive".into());
        }
        if self.pool_voxel_sizes.windows(2).any(|w| w[1] <= w[0]) {
            return bad("pooling voxel sizes must be strictly increasing".into());
        }
        if self.k_neighbors == 0 {
            return bad("k_neighbors must be at least 1".into());
        }
        if self.num_classes == 0 {
            return bad("num_classes must be at least 1".into());
        }
        Ok(())
    }

    fn stages(&self) -> usize {
        self.stage_widths.len()
    }

    /// Width of the bottleneck features and of stage `s` outputs.
    fn width(&self, s: usize) -> usize {
        self.stage_widths[s.min(self.stages() - 1)]
    }
}

/// Named parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub name: String,
    pub tensor: Tensor,
}

/// Parameter slots, grouped per block.
#[derive(Debug, Clone, Copy)]
struct Linear {
    w: usize,
    b: usize,
}

#[derive(Debug, Clone, Copy)]
struct AttnSlots {
    q: Linear,
    k: Linear,
    v: Linear,
    pe1: Linear,
    pe2: Linear,
    attn1: Linear,
    attn2: Linear,
    out: Linear,
}

#[derive(Debug, Clone)]
struct Layout {
    embed: Linear,
    blocks: Vec<AttnSlots>,
    down: Vec<Linear>,
    fuse: Vec<Linear>,
    head: Linear,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    config: ModelConfig,
    params: Vec<Param>,
}

struct ParamBuilder {
    params: Vec<Param>,
}

impl ParamBuilder {
    fn linear(&mut self, name: &str, fan_in: usize, fan_out: usize) -> Linear {
        let w = self.params.len();
        self.params.push(Param {
            name: format!("{name}.weight"),
            tensor: Tensor::zeros(fan_in, fan_out),
        });
        self.params.push(Param {
            name: format!("{name}.bias"),
            tensor: Tensor::zeros(1, fan_out),
        });
        Linear { w, b: w + 1 }
    }
}

fn build_layout(cfg: &ModelConfig) -> (Layout, Vec<Param>) {
    let mut pb = ParamBuilder { params: Vec::new() };
    let embed = pb.linear("embed", cfg.input_channels, cfg.width(0));
    let mut blocks = Vec::new();
    let mut down = Vec::new();
    for s in 0..cfg.stages() {
        let c = cfg.width(s);
        let g = c / GROUP_SIZE;
        let p = format!("stage{s}.attn");
        blocks.push(AttnSlots {
            q: pb.linear(&format!("{p}.query"), c, c),
            k: pb.linear(&format!("{p}.key"), c, c),
            v: pb.linear(&format!("{p}.value"), c, c),
            pe1: pb.linear(&format!("{p}.pos1"), 3, c),
            pe2: pb.linear(&format!("{p}.pos2"), c, c),
            attn1: pb.linear(&format!("{p}.weight1"), c, g),
            attn2: pb.linear(&format!("{p}.weight2"), g, g),
            out: pb.linear(&format!("{p}.proj"), c, c),
        });
        down.push(pb.linear(&format!("stage{s}.down"), c, cfg.width(s + 1)));
    }
    let mut fuse = vec![Linear { w: 0, b: 0 }; cfg.stages()];
    for s in (0..cfg.stages()).rev() {
        fuse[s] = pb.linear(
            &format!("decoder{s}.fuse"),
            cfg.width(s) + cfg.width(s + 1),
            cfg.width(s),
        );
    }
    let head = pb.linear("head", cfg.width(0), cfg.num_classes);
    (
        Layout {
            embed,
            blocks,
            down,
            fuse,
            head,
        },
        pb.params,
    )
}

fn init_uniform(t: &mut Tensor, rng: &mut crate::rng::Rng) {
    let bound = 1.0 / (t.rows as f64).sqrt();
    for v in &mut t.data {
        *v = rng.random_range(-bound..=bound);
    }
}

/// Geometry derived from input positions: neighbor tables and pooling
/// structure per level. Independent of the parameters.
#[derive(Debug, Clone)]
pub struct Geometry {
    pub num_points: usize,
    levels: Vec<LevelGeometry>,
}

#[derive(Debug, Clone)]
struct LevelGeometry {
    k: usize,
    centers: Arc<Vec<usize>>,
    neighbors: Arc<Vec<usize>>,
    relative: Tensor,
    pool: Arc<Segments>,
    parent: Arc<Vec<usize>>,
}

impl Geometry {
    pub fn build(positions: &[[f64; 3]], cfg: &ModelConfig) -> Result<Self> {
        if positions.len() < cfg.k_neighbors {
            return Err(Error::TooFewPoints {
                needed: cfg.k_neighbors,
                got: positions.len(),
            });
        }
        let mut level_pos = positions.to_vec();
        let mut levels = Vec::new();
        for s in 0..cfg.stages() {
            let n = level_pos.len();
            let k = cfg.k_neighbors.min(n);
            let nb = knn_self(&level_pos, k, true)?;
            let centers: Vec<usize> = (0..n).flat_map(|i| std::iter::repeat_n(i, k)).collect();
            let scale = 1.0 / cfg.pool_voxel_sizes[s];
            let mut relative = Tensor::zeros(n * k, 3);
            for (r, (&i, &j)) in centers.iter().zip(&nb.indices).enumerate() {
                let row = relative.row_mut(r);
                for a in 0..3 {
                    row[a] = (level_pos[i][a] - level_pos[j][a]) * scale;
                }
            }
            let (pool, parent, coarse) = pool_level(&level_pos, cfg.pool_voxel_sizes[s]);
            levels.push(LevelGeometry {
                k,
                centers: Arc::new(centers),
                neighbors: Arc::new(nb.indices),
                relative,
                pool: Arc::new(pool),
                parent: Arc::new(parent),
            });
            level_pos = coarse;
        }
        Ok(Geometry {
            num_points: positions.len(),
            levels,
        })
    }

    /// Point counts per level, finest first, bottleneck last.
    pub fn level_sizes(&self) -> Vec<usize> {
        let mut v: Vec<usize> = self.levels.iter().map(|l| l.pool.input_rows).collect();
        if let Some(l) = self.levels.last() {
            v.push(l.pool.members.len());
        }
        v
    }
}

/// Groups points by voxel; members of each voxel are ordered by coordinates
/// so that the pooled values do not depend on input order.
fn pool_level(positions: &[[f64; 3]], voxel: f64) -> (Segments, Vec<usize>, Vec<[f64; 3]>) {
    let groups = voxel_groups(positions, voxel);
    let mut parent = vec![0; positions.len()];
    let mut members = Vec::with_capacity(groups.len());
    let mut coarse = Vec::with_capacity(groups.len());
    for (g, (_, mut m)) in groups.into_iter().enumerate() {
        m.sort_by(|&a, &b| {
            let (pa, pb) = (positions[a], positions[b]);
            pa[0]
                .total_cmp(&pb[0])
                .then(pa[1].total_cmp(&pb[1]))
                .then(pa[2].total_cmp(&pb[2]))
                .then(a.cmp(&b))
        });
        let mut c = [0.0; 3];
        for &i in &m {
            parent[i] = g;
            for a in 0..3 {
                c[a] += positions[i][a];
            }
        }
        let inv = 1.0 / m.len() as f64;
        coarse.push(c.map(|v| v * inv));
        members.push(m);
    }
    (
        Segments {
            members,
            input_rows: positions.len(),
        },
        parent,
        coarse,
    )
}

/// Recorded forward pass.
pub struct Forward {
    pub graph: Graph,
    pub logits: Var,
    /// Decoder output feeding the head.
    pub features: Var,
}

impl Forward {
    pub fn logits(&self) -> &Tensor {
        self.graph.value(self.logits)
    }

    pub fn features(&self) -> &Tensor {
        self.graph.value(self.features)
    }
}

impl Model {
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let (_, mut params) = build_layout(&config);
        for (i, p) in params.iter_mut().enumerate() {
            if p.name.ends_with(".weight") {
                let mut rng = crate::rng::stream(config.seed, &[0x696e_6974, i as u64]);
                init_uniform(&mut p.tensor, &mut rng);
            }
        }
        Ok(Model { config, params })
    }

    pub(crate) fn from_parts(config: ModelConfig, params: Vec<Param>) -> Result<Self> {
        config.validate()?;
        let (_, expected) = build_layout(&config);
        if expected.len() != params.len() {
            return Err(Error::Shape(format!(
                "expected {} parameter tensors, got {}",
                expected.len(),
                params.len()
            )));
        }
        for (e, p) in expected.iter().zip(&params) {
            if e.name != p.name || e.tensor.shape() != p.tensor.shape() {
                return Err(Error::Shape(format!(
                    "parameter `{}` {:?} does not match expected `{}` {:?}",
                    p.name,
                    p.tensor.shape(),
                    e.name,
                    e.tensor.shape()
                )));
            }
        }
        Ok(Model { config, params })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn num_classes(&self) -> usize {
        self.config.num_classes
    }

    pub fn params(&self) -> &[Param] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Param] {
        &mut self.params
    }

    pub fn param(&self, name: &str) -> Option<&Tensor> {
        self.params
            .iter()
            .find(|p| p.name == name)
            .map(|p| &p.tensor)
    }

    pub fn num_parameters(&self) -> usize {
        self.params.iter().map(|p| p.tensor.data.len()).sum()
    }

    pub fn is_head(name: &str) -> bool {
        name.starts_with("head.")
    }

    pub fn head_input_width(&self) -> usize {
        self.config.width(0)
    }

    fn check_features(&self, num_points: usize, features: &Tensor) -> Result<()> {
        if features.cols != self.config.input_channels {
            return Err(Error::Shape(format!(
                "expected {} feature channels, got {}",
                self.config.input_channels, features.cols
            )));
        }
        if features.rows != num_points {
            return Err(Error::Shape(format!(
                "{} feature rows for {num_points} points",
                features.rows
            )));
        }
        Ok(())
    }

    /// Runs the network and keeps the tape for differentiation.
    pub fn record(&self, geometry: &Geometry, features: &Tensor) -> Result<Forward> {
        self.check_features(geometry.num_points, features)?;
        let (layout, _) = build_layout(&self.config);
        let mut g = Graph::new();
        let p: Vec<Var> = self
            .params
            .iter()
            .enumerate()
            .map(|(i, p)| g.param(i, p.tensor.clone()))
            .collect();
        let lin = |g: &mut Graph, x: Var, l: Linear| g.linear(x, p[l.w], p[l.b]);

        let input = g.constant(features.clone());
        let e = lin(&mut g, input, layout.embed);
        let mut x = g.silu(e);
        let mut skips = Vec::new();
        for (s, level) in geometry.levels.iter().enumerate() {
            let b = layout.blocks[s];
            let q = lin(&mut g, x, b.q);
            let k = lin(&mut g, x, b.k);
            let v = lin(&mut g, x, b.v);
            let rel = g.constant(level.relative.clone());
            let pe_hidden = lin(&mut g, rel, b.pe1);
            let pe_hidden = g.silu(pe_hidden);
            let pe = lin(&mut g, pe_hidden, b.pe2);
            let qi = g.gather(q, level.centers.clone());
            let kj = g.gather(k, level.neighbors.clone());
            let vj = g.gather(v, level.neighbors.clone());
            let diff = g.sub(qi, kj);
            let relation = g.add(diff, pe);
            let w_hidden = lin(&mut g, relation, b.attn1);
            let w_hidden = g.silu(w_hidden);
            let w_logits = lin(&mut g, w_hidden, b.attn2);
            let weights = g.neighbor_softmax(w_logits, level.k);
            let values = g.add(vj, pe);
            let agg = g.grouped_aggregate(weights, values, level.k, GROUP_SIZE);
            let proj = lin(&mut g, agg, b.out);
            let y = g.add(x, proj);
            skips.push(y);
            let pooled = g.segment_mean(y, level.pool.clone());
            let d = lin(&mut g, pooled, layout.down[s]);
            x = g.silu(d);
        }
        for (s, level) in geometry.levels.iter().enumerate().rev() {
            let up = g.gather(x, level.parent.clone());
            let cat = g.concat_cols(skips[s], up);
            let f = lin(&mut g, cat, layout.fuse[s]);
            x = g.silu(f);
        }
        let logits = lin(&mut g, x, layout.head);
        Ok(Forward {
            graph: g,
            logits,
            features: x,
        })
    }

    /// Per-point class logits, `points x num_classes`.
    pub fn forward(&self, positions: &[[f64; 3]], features: &Tensor) -> Result<Tensor> {
        let geometry = Geometry::build(positions, &self.config)?;
        self.forward_geometry(&geometry, features)
    }

    pub fn forward_geometry(&self, geometry: &Geometry, features: &Tensor) -> Result<Tensor> {
        let fwd = self.record(geometry, features)?;
        Ok(fwd.logits().clone())
    }

    /// Gradients of `sum(logits * upstream)` for every parameter, in parameter order.
    pub fn backward(
        &self,
        positions: &[[f64; 3]],
        features: &Tensor,
        upstream: &Tensor,
    ) -> Result<Vec<Tensor>> {
        let geometry = Geometry::build(positions, &self.config)?;
        let fwd = self.record(&geometry, features)?;
        self.backward_recorded(&fwd, upstream)
    }

    pub fn backward_recorded(&self, fwd: &Forward, upstream: &Tensor) -> Result<Vec<Tensor>> {
        if upstream.shape() != fwd.logits().shape() {
            return Err(Error::Shape(format!(
                "upstream gradient {:?} does not match logits {:?}",
                upstream.shape(),
                fwd.logits().shape()
            )));
        }
        let mut grads = fwd.graph.backward(fwd.logits, upstream.clone());
        Ok(fwd.graph.param_grads(&mut grads, self.params.len()))
    }

    /// Replaces the segmentation head with a fresh one for `new_num_classes`,
    /// leaving every other parameter untouched.
    pub fn reinit_head(&self, new_num_classes: usize, seed: u64) -> Result<Model> {
        if new_num_classes == 0 {
            return Err(Error::InvalidArgument(
                "new_num_classes must be at least 1".into(),
            ));
        }
        let mut config = self.config.clone();
        config.num_classes = new_num_classes;
        let width = self.head_input_width();
        let mut params = self.params.clone();
        for p in params.iter_mut().filter(|p| Self::is_head(&p.name)) {
            if p.name.ends_with(".weight") {
                p.tensor = Tensor::zeros(width, new_num_classes);
                let mut rng = crate::rng::stream(seed, &[0x6865_6164]);
                init_uniform(&mut p.tensor, &mut rng);
            } else {
                p.tensor = Tensor::zeros(1, new_num_classes);
            }
        }
        Model::from_parts(config, params)
    }

    pub fn is_finite(&self) -> bool {
        self.params.iter().all(|p| p.tensor.is_finite())
    }
}
