//! Voxel-grid subsampling, sphere cropping, fragment partitioning and exact
//! k-nearest-neighbor search.

use rand::seq::SliceRandom;
use rand::Rng as _;

use crate::cloud::{bounds, dist2, PointCloud};
use crate::error::{Error, Result};
use crate::exec;

pub type VoxelKey = [i64; 3];

/// Voxel key of `p` on a grid of cell size `voxel_size` anchored at `origin`.
#[inline]
pub fn voxel_key(p: &[f64; 3], origin: &[f64; 3], voxel_size: f64) -> VoxelKey {
    std::array::from_fn(|a| ((p[a] - origin[a]) / voxel_size).floor() as i64)
}

/// Groups point indices by voxel, anchored at the cloud's minimum corner.
///
/// Returns the occupied voxels in ascending key order; each group lists its
/// point indices in ascending order.
pub fn voxel_groups(positions: &[[f64; 3]], voxel_size: f64) -> Vec<(VoxelKey, Vec<usize>)> {
    let Some((lo, _)) = bounds(positions) else {
        return Vec::new();
    };
    let mut keyed: Vec<(VoxelKey, usize)> = positions
        .iter()
        .enumerate()
        .map(|(i, p)| (voxel_key(p, &lo, voxel_size), i))
        .collect();
    keyed.sort_unstable();
    let mut groups: Vec<(VoxelKey, Vec<usize>)> = Vec::new();
    for (key, i) in keyed {
        match groups.last_mut() {
            Some((k, members)) if *k == key => members.push(i),
            _ => groups.push((key, vec![i])),
        }
    }
    groups
}

fn check_voxel_size(voxel_size: f64) -> Result<()> {
    if voxel_size > 0.0 && voxel_size.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!(
            "voxel size must be positive, got {voxel_size}"
        )))
    }
}

/// Result of voxel-grid subsampling.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SampleIndex {
    /// Source indices of the kept points, ascending.
    pub kept: Vec<usize>,
    /// For every source point, the position in `kept` of its voxel's representative.
    pub inverse: Vec<usize>,
}

/// Keeps one uniformly chosen point per occupied voxel.
pub fn voxel_grid_sample(pc: &PointCloud, voxel_size: f64, rng_seed: u64) -> Result<SampleIndex> {
    voxel_grid_sample_positions(&pc.positions, voxel_size, rng_seed)
}

pub fn voxel_grid_sample_positions(
    positions: &[[f64; 3]],
    voxel_size: f64,
    rng_seed: u64,
) -> Result<SampleIndex> {
    check_voxel_size(voxel_size)?;
    let groups = voxel_groups(positions, voxel_size);
    let mut rng = crate::rng::stream(rng_seed, &[0x766f_78]);
    let mut reps: Vec<(usize, usize)> = groups
        .iter()
        .enumerate()
        .map(|(g, (_, members))| (members[rng.random_range(0..members.len())], g))
        .collect();
    reps.sort_unstable();
    let mut slot_of_group = vec![0; groups.len()];
    for (slot, &(_, g)) in reps.iter().enumerate() {
        slot_of_group[g] = slot;
    }
    let mut inverse = vec![0; positions.len()];
    for (g, (_, members)) in groups.iter().enumerate() {
        for &i in members {
            inverse[i] = slot_of_group[g];
        }
    }
    Ok(SampleIndex {
        kept: reps.into_iter().map(|(i, _)| i).collect(),
        inverse,
    })
}

/// Picks a random center and keeps the `max_points` points nearest to it.
///
/// Clouds with at most `max_points` points pass through unchanged.
pub fn sphere_crop(pc: &PointCloud, max_points: usize, rng_seed: u64) -> Result<Vec<usize>> {
    if max_points == 0 {
        return Err(Error::InvalidArgument("max_points must be positive".into()));
    }
    if pc.len() <= max_points {
        return Ok((0..pc.len()).collect());
    }
    let mut rng = crate::rng::stream(rng_seed, &[0x6372_6f70]);
    let center = rng.random_range(0..pc.len());
    sphere_crop_at(&pc.positions, max_points, center)
}

/// Keeps the `max_points` points nearest to point `center` (ties by lower
/// index), returned in ascending index order.
pub fn sphere_crop_at(
    positions: &[[f64; 3]],
    max_points: usize,
    center: usize,
) -> Result<Vec<usize>> {
    if center >= positions.len() {
        return Err(Error::InvalidArgument(format!(
            "crop center {center} out of range"
        )));
    }
    if positions.len() <= max_points {
        return Ok((0..positions.len()).collect());
    }
    let c = positions[center];
    let mut order: Vec<(f64, usize)> = positions
        .iter()
        .enumerate()
        .map(|(i, p)| (dist2(p, &c), i))
        .collect();
    let cmp = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
    order.select_nth_unstable_by(max_points - 1, cmp);
    let mut kept: Vec<usize> = order[..max_points].iter().map(|&(_, i)| i).collect();
    kept.sort_unstable();
    Ok(kept)
}

/// One member of a grid-derived partition of a dense cloud.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Fragment {
    /// Source indices, ascending.
    pub indices: Vec<usize>,
    /// Within-voxel rank this fragment collects.
    pub rank: usize,
}

/// Splits a cloud into fragments holding at most one point per voxel.
///
/// Each voxel's points get a seeded random rank; fragment `r` collects all
/// points of rank `r`. The fragments are disjoint and cover every point.
pub fn fragment_partition(
    pc: &PointCloud,
    voxel_size: f64,
    rng_seed: u64,
) -> Result<Vec<Fragment>> {
    fragment_partition_positions(&pc.positions, voxel_size, rng_seed)
}

pub fn fragment_partition_positions(
    positions: &[[f64; 3]],
    voxel_size: f64,
    rng_seed: u64,
) -> Result<Vec<Fragment>> {
    check_voxel_size(voxel_size)?;
    let mut groups = voxel_groups(positions, voxel_size);
    let mut rng = crate::rng::stream(rng_seed, &[0x6672_6167]);
    let depth = groups.iter().map(|(_, m)| m.len()).max().unwrap_or(0);
    let mut fragments: Vec<Fragment> = (0..depth)
        .map(|rank| Fragment {
            indices: Vec::new(),
            rank,
        })
        .collect();
    for (_, members) in groups.iter_mut() {
        members.shuffle(&mut rng);
        for (rank, &i) in members.iter().enumerate() {
            fragments[rank].indices.push(i);
        }
    }
    for f in &mut fragments {
        f.indices.sort_unstable();
    }
    Ok(fragments)
}

/// Recursively halves `indices` at the spatial median of the widest axis
/// until every part holds at most `budget` points.
pub fn split_to_budget(
    positions: &[[f64; 3]],
    indices: Vec<usize>,
    budget: usize,
) -> Vec<Vec<usize>> {
    let budget = budget.max(1);
    if indices.len() <= budget {
        return vec![indices];
    }
    let pts: Vec<[f64; 3]> = indices.iter().map(|&i| positions[i]).collect();
    let (lo, hi) = bounds(&pts).expect("non-empty");
    let axis = (0..3)
        .max_by(|&a, &b| (hi[a] - lo[a]).total_cmp(&(hi[b] - lo[b])))
        .unwrap();
    let mut sorted = indices;
    sorted.sort_by(|&a, &b| {
        positions[a][axis]
            .total_cmp(&positions[b][axis])
            .then(a.cmp(&b))
    });
    let right = sorted.split_off(sorted.len() / 2);
    let mut left = sorted;
    left.sort_unstable();
    let mut right = right;
    right.sort_unstable();
    let mut out = split_to_budget(positions, left, budget);
    out.extend(split_to_budget(positions, right, budget));
    out
}

// ---------------------------------------------------------------------------
// k-nearest neighbors

/// Flat `queries x k` neighbor table, each row sorted by (distance, index).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Neighbors {
    pub k: usize,
    pub indices: Vec<usize>,
}

impl Neighbors {
    pub fn row(&self, q: usize) -> &[usize] {
        &self.indices[q * self.k..(q + 1) * self.k]
    }

    pub fn len(&self) -> usize {
        if self.k == 0 {
            0
        } else {
            self.indices.len() / self.k
        }
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}

const LEAF_SIZE: usize = 12;

enum Node {
    Leaf {
        start: usize,
        end: usize,
    },
    Split {
        axis: usize,
        value: f64,
        left: usize,
        right: usize,
    },
}

/// Exact kd-tree over a fixed point set. Read-only after construction.
pub struct KdTree<'a> {
    positions: &'a [[f64; 3]],
    order: Vec<usize>,
    nodes: Vec<Node>,
}

impl<'a> KdTree<'a> {
    pub fn build(positions: &'a [[f64; 3]]) -> Self {
        let mut tree = KdTree {
            positions,
            order: (0..positions.len()).collect(),
            nodes: Vec::new(),
        };
        if !positions.is_empty() {
            tree.build_node(0, positions.len());
        }
        tree
    }

    fn build_node(&mut self, start: usize, end: usize) -> usize {
        let id = self.nodes.len();
        if end - start <= LEAF_SIZE {
            self.nodes.push(Node::Leaf { start, end });
            return id;
        }
        let pts = self.positions;
        let slice = &mut self.order[start..end];
        let mut lo = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        for &i in slice.iter() {
            for a in 0..3 {
                lo[a] = lo[a].min(pts[i][a]);
                hi[a] = hi[a].max(pts[i][a]);
            }
        }
        let axis = (0..3)
            .max_by(|&a, &b| (hi[a] - lo[a]).total_cmp(&(hi[b] - lo[b])))
            .unwrap();
        let mid = slice.len() / 2;
        slice.select_nth_unstable_by(mid, |&a, &b| pts[a][axis].total_cmp(&pts[b][axis]));
        let value = pts[slice[mid]][axis];
        self.nodes.push(Node::Leaf { start, end });
        let left = self.build_node(start, start + mid);
        let right = self.build_node(start + mid, end);
        self.nodes[id] = Node::Split {
            axis,
            value,
            left,
            right,
        };
        id
    }

    /// The `k` nearest points to `q`, skipping index `exclude`.
    pub fn nearest(&self, q: &[f64; 3], k: usize, exclude: Option<usize>) -> Vec<usize> {
        let mut best: Vec<(f64, usize)> = Vec::with_capacity(k + 1);
        if k > 0 && !self.nodes.is_empty() {
            self.search(0, q, k, exclude, &mut best);
        }
        best.into_iter().map(|(_, i)| i).collect()
    }

    fn search(
        &self,
        node: usize,
        q: &[f64; 3],
        k: usize,
        exclude: Option<usize>,
        best: &mut Vec<(f64, usize)>,
    ) {
        match self.nodes[node] {
            Node::Leaf { start, end } => {
                for &i in &self.order[start..end] {
                    if Some(i) == exclude {
                        continue;
                    }
                    let cand = (dist2(&self.positions[i], q), i);
                    if best.len() == k {
                        let worst = best[k - 1];
                        if (cand.0, cand.1) >= (worst.0, worst.1) {
                            continue;
                        }
                        best.pop();
                    }
                    let at = best.partition_point(|b| (b.0, b.1) < (cand.0, cand.1));
                    best.insert(at, cand);
                }
            }
            Node::Split {
                axis,
                value,
                left,
                right,
            } => {
                let d = q[axis] - value;
                let (near, far) = if d < 0.0 {
                    (left, right)
                } else {
                    (right, left)
                };
                self.search(near, q, k, exclude, best);
                if best.len() < k || d * d <= best[k - 1].0 {
                    self.search(far, q, k, exclude, best);
                }
            }
        }
    }
}

/// k nearest `positions` for each external query point.
pub fn knn(positions: &[[f64; 3]], queries: &[[f64; 3]], k: usize) -> Result<Neighbors> {
    if positions.is_empty() {
        return Err(Error::InvalidArgument("knn over an empty point set".into()));
    }
    if k > positions.len() {
        return Err(Error::InvalidArgument(format!(
            "k = {k} exceeds {} candidates",
            positions.len()
        )));
    }
    let tree = KdTree::build(positions);
    let rows = exec::map(queries, |q| tree.nearest(q, k, None));
    Ok(Neighbors {
        k,
        indices: rows.concat(),
    })
}

/// k nearest neighbors of every point within its own set. With
/// `include_self == false` a point never lists itself.
pub fn knn_self(positions: &[[f64; 3]], k: usize, include_self: bool) -> Result<Neighbors> {
    if positions.is_empty() {
        return Err(Error::InvalidArgument("knn over an empty point set".into()));
    }
    let available = positions.len() - usize::from(!include_self);
    if k > available {
        return Err(Error::InvalidArgument(format!(
            "k = {k} exceeds {available} candidates"
        )));
    }
    let tree = KdTree::build(positions);
    let rows = exec::map_range(positions.len(), |i| {
        tree.nearest(&positions[i], k, (!include_self).then_some(i))
    });
    Ok(Neighbors {
        k,
        indices: rows.concat(),
    })
}
