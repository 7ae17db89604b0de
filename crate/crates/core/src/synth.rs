//! Deterministic synthetic shell-construction rooms.
//!
//! A scene is an axis-aligned room whose surfaces are sampled directly on a
//! jittered grid, so per-surface point counts are exactly `round(area *
//! density)`. The scanner origin lies inside the room.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::cloud::{Label, PointCloud};
use crate::error::{Error, Result};
use crate::io::{save_pointcloud, PointFormat};
use crate::labelspace::{
    build_translation, default_aliases, pretrain_space, target_space, translate_labels,
};
use crate::manifest::{DatasetManifest, Split};
use crate::rng::{derive, stream, Rng};

const CEILING: Label = 0;
const FLOOR: Label = 1;
const WALL: Label = 2;
const BEAM: Label = 3;
const COLUMN: Label = 4;
const WINDOW: Label = 5;
const DOOR: Label = 6;
const STAIRS: Label = 7;
const EQUIPMENT: Label = 8;
const INSTALLATION: Label = 9;
const NONE: Label = 10;

/// Clearance between openings and room corners, meters.
const CORNER_MARGIN: f64 = 0.3;
const LINTEL_HEIGHT: f64 = 0.2;
const REVEAL_DEPTH: f64 = 0.1;

/// Room generator settings. The defaults keep wall, floor and ceiling at
/// roughly 94% of all points.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneSpec {
    /// Room extent ranges `[min, max]`, meters.
    pub room_x: [f64; 2],
    pub room_y: [f64; 2],
    pub room_z: [f64; 2],
    /// Object count ranges `[min, max]`, inclusive.
    pub doors: [usize; 2],
    pub windows: [usize; 2],
    pub ceiling_beams: [usize; 2],
    pub columns: [usize; 2],
    pub stairs: [usize; 2],
    pub installations: [usize; 2],
    pub equipment: [usize; 2],
    pub clutter: [usize; 2],
    /// Width and height of door openings.
    pub door_size: [f64; 2],
    /// Width and height of window openings.
    pub window_size: [f64; 2],
    pub window_sill: f64,
    /// Points per square meter of surface.
    pub density: f64,
    /// One color per target class.
    pub palette: Vec<[u8; 3]>,
    /// Gaussian color noise, 0-255 units.
    pub color_noise: f64,
}

impl Default for SceneSpec {
    fn default() -> Self {
        Self {
            room_x: [4.5, 6.5],
            room_y: [3.5, 5.0],
            room_z: [2.6, 3.0],
            doors: [1, 1],
            windows: [0, 1],
            ceiling_beams: [0, 0],
            columns: [0, 0],
            stairs: [0, 0],
            installations: [0, 1],
            equipment: [0, 2],
            clutter: [1, 2],
            door_size: [0.9, 2.1],
            window_size: [1.0, 0.8],
            window_sill: 0.9,
            density: 400.0,
            palette: default_palette(),
            color_noise: 8.0,
        }
    }
}

/// Well-separated colors, indexed like the target label space.
pub fn default_palette() -> Vec<[u8; 3]> {
    vec![
        [230, 230, 230], // ceiling
        [120, 90, 60],   // floor
        [180, 180, 120], // wall
        [200, 60, 60],   // beam
        [140, 40, 160],  // column
        [60, 180, 230],  // window
        [90, 200, 90],   // door
        [240, 150, 30],  // stairs
        [40, 60, 200],   // equipment
        [230, 60, 200],  // installation
        [40, 40, 40],    // none
    ]
}

impl SceneSpec {
    /// No openings or objects: only floor, ceiling and walls.
    pub fn bare() -> Self {
        Self {
            doors: [0, 0],
            windows: [0, 0],
            ceiling_beams: [0, 0],
            columns: [0, 0],
            stairs: [0, 0],
            installations: [0, 0],
            equipment: [0, 0],
            clutter: [0, 0],
            ..Self::default()
        }
    }

    /// Every object type except columns present at least once.
    pub fn full() -> Self {
        Self {
            windows: [1, 1],
            ceiling_beams: [1, 1],
            stairs: [1, 1],
            clutter: [1, 2],
            installations: [1, 1],
            equipment: [1, 1],
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        for (name, r) in [
            ("room_x", self.room_x),
            ("room_y", self.room_y),
            ("room_z", self.room_z),
        ] {
            if !(r[0] > 0.0 && r[1] >= r[0] && r[1].is_finite()) {
                return bad(format!("{name} must be a positive range"));
            }
        }
        let counts = [
            ("doors", self.doors),
            ("windows", self.windows),
            ("ceiling_beams", self.ceiling_beams),
            ("columns", self.columns),
            ("stairs", self.stairs),
            ("installations", self.installations),
            ("equipment", self.equipment),
            ("clutter", self.clutter),
        ];
        for (name, r) in counts {
            if r[1] < r[0] {
                return bad(format!("{name} range is reversed"));
            }
        }
        if !(self.density > 0.0 && self.density.is_finite()) {
            return bad("density must be positive".into());
        }
        if self.palette.len() != 11 {
            return bad(format!(
                "palette needs 11 colors, got {}",
                self.palette.len()
            ));
        }
        if !(self.color_noise >= 0.0) {
            return bad("color_noise must be non-negative".into());
        }
        let shortest_wall = self.room_x[0].min(self.room_y[0]);
        let lowest = self.room_z[0];
        let openings = [
            ("door", self.doors[1], self.door_size, 0.0),
            (
                "window",
                self.windows[1],
                self.window_size,
                self.window_sill,
            ),
        ];
        for (name, max, [w, h], base) in openings {
            if max == 0 {
                continue;
            }
            if !(w > 0.0 && h > 0.0 && base >= 0.0) {
                return bad(format!("{name} size must be positive"));
            }
            if w + 2.0 * CORNER_MARGIN > shortest_wall || base + h + LINTEL_HEIGHT > lowest {
                return bad(format!(
                    "{name} opening {w} x {h} does not fit the smallest wall"
                ));
            }
        }
        Ok(())
    }
}

/// A planar rectangle `origin + s*u + t*v`, `s, t` in [0, 1].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Surface {
    pub origin: [f64; 3],
    pub u: [f64; 3],
    pub v: [f64; 3],
    pub class: Label,
    pub instance: u32,
    /// For walls, which wall of the room this is; openings are cut from it.
    wall: Option<usize>,
}

fn add(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

fn scale(a: [f64; 3], s: f64) -> [f64; 3] {
    [a[0] * s, a[1] * s, a[2] * s]
}

fn dot(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

impl Surface {
    fn new(origin: [f64; 3], u: [f64; 3], v: [f64; 3], class: Label, instance: u32) -> Self {
        Self {
            origin,
            u,
            v,
            class,
            instance,
            wall: None,
        }
    }

    pub fn area(&self) -> f64 {
        dot(self.u, self.u).sqrt() * dot(self.v, self.v).sqrt()
    }

    fn at(&self, s: f64, t: f64) -> [f64; 3] {
        add(self.origin, add(scale(self.u, s), scale(self.v, t)))
    }

    /// Local coordinates `(s, t)` and the off-plane distance of `p`.
    fn local(&self, p: &[f64; 3]) -> (f64, f64, f64) {
        let d = [
            p[0] - self.origin[0],
            p[1] - self.origin[1],
            p[2] - self.origin[2],
        ];
        let (uu, vv) = (dot(self.u, self.u), dot(self.v, self.v));
        let s = dot(d, self.u) / uu;
        let t = dot(d, self.v) / vv;
        let off = add(d, add(scale(self.u, -s), scale(self.v, -t)));
        (s, t, dot(off, off).sqrt())
    }

    /// Whether `p` lies on the rectangle within `tol` meters.
    pub fn contains(&self, p: &[f64; 3], tol: f64) -> bool {
        let (s, t, off) = self.local(p);
        let (lu, lv) = (dot(self.u, self.u).sqrt(), dot(self.v, self.v).sqrt());
        off <= tol
            && s * lu >= -tol
            && (s - 1.0) * lu <= tol
            && t * lv >= -tol
            && (t - 1.0) * lv <= tol
    }
}

/// Axis-aligned rectangle cut out of a wall, in wall-local meters.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Hole {
    s0: f64,
    s1: f64,
    t0: f64,
    t1: f64,
}

impl Hole {
    fn contains(&self, s: f64, t: f64) -> bool {
        s > self.s0 && s < self.s1 && t > self.t0 && t < self.t1
    }
}

/// Planar surfaces of a scene, plus the openings cut into each wall.
#[derive(Debug, Clone, PartialEq)]
pub struct Layout {
    pub surfaces: Vec<Surface>,
    holes: Vec<Vec<Hole>>,
}

fn pick(rng: &mut Rng, r: [usize; 2]) -> usize {
    rng.random_range(r[0]..=r[1])
}

fn pick_f(rng: &mut Rng, r: [f64; 2]) -> f64 {
    if r[1] > r[0] {
        rng.random_range(r[0]..=r[1])
    } else {
        r[0]
    }
}

struct Builder {
    surfaces: Vec<Surface>,
    next_instance: u32,
}

impl Builder {
    fn instance(&mut self) -> u32 {
        self.next_instance += 1;
        self.next_instance - 1
    }

    fn rect(&mut self, origin: [f64; 3], u: [f64; 3], v: [f64; 3], class: Label, instance: u32) {
        self.surfaces
            .push(Surface::new(origin, u, v, class, instance));
    }

    /// Side faces of a box standing on the floor, plus the top if requested.
    fn open_box(&mut self, min: [f64; 3], size: [f64; 3], class: Label, top: bool) {
        let id = self.instance();
        let [x, y, z] = min;
        let [dx, dy, dz] = size;
        if top {
            self.rect([x, y, z + dz], [dx, 0.0, 0.0], [0.0, dy, 0.0], class, id);
        }
        self.rect([x, y, z], [dx, 0.0, 0.0], [0.0, 0.0, dz], class, id);
        self.rect([x, y + dy, z], [dx, 0.0, 0.0], [0.0, 0.0, dz], class, id);
        self.rect([x, y, z], [0.0, dy, 0.0], [0.0, 0.0, dz], class, id);
        self.rect([x + dx, y, z], [0.0, dy, 0.0], [0.0, 0.0, dz], class, id);
    }
}

/// Builds the surfaces of one room.
pub fn scene_layout(spec: &SceneSpec, seed: u64) -> Result<Layout> {
    spec.validate()?;
    let mut rng = stream(seed, &[0x6c61_796f]);
    let w = pick_f(&mut rng, spec.room_x);
    let d = pick_f(&mut rng, spec.room_y);
    let h = pick_f(&mut rng, spec.room_z);
    // Room corner relative to the scanner at the origin.
    let x0 = -w * rng.random_range(0.3..0.7);
    let y0 = -d * rng.random_range(0.3..0.7);
    let z0 = -rng.random_range(1.2..1.6f64).min(h - 0.2);
    let (x1, y1, z1) = (x0 + w, y0 + d, z0 + h);

    let mut b = Builder {
        surfaces: Vec::new(),
        next_instance: 0,
    };
    let floor = b.instance();
    b.rect([x0, y0, z0], [w, 0.0, 0.0], [0.0, d, 0.0], FLOOR, floor);
    let ceiling = b.instance();
    b.rect([x0, y0, z1], [w, 0.0, 0.0], [0.0, d, 0.0], CEILING, ceiling);

    // Walls run counter-clockwise; `inward` points into the room.
    let walls = [
        ([x0, y0, z0], [w, 0.0, 0.0], [0.0, 1.0, 0.0]),
        ([x1, y0, z0], [0.0, d, 0.0], [-1.0, 0.0, 0.0]),
        ([x1, y1, z0], [-w, 0.0, 0.0], [0.0, -1.0, 0.0]),
        ([x0, y1, z0], [0.0, -d, 0.0], [1.0, 0.0, 0.0]),
    ];
    for (i, &(o, u, _)) in walls.iter().enumerate() {
        let id = b.instance();
        let mut s = Surface::new(o, u, [0.0, 0.0, h], WALL, id);
        s.wall = Some(i);
        b.surfaces.push(s);
    }
    let mut holes: Vec<Vec<Hole>> = vec![Vec::new(); 4];
    // Wall spans along their length, reserved by openings, stairs and strips.
    let mut reserved: Vec<Vec<(f64, f64)>> = vec![Vec::new(); 4];
    let wall_len = |i: usize| if i % 2 == 0 { w } else { d };

    let place_on_wall =
        |rng: &mut Rng, width: f64, reserved: &mut Vec<Vec<(f64, f64)>>| -> Option<(usize, f64)> {
            for _ in 0..50 {
                let wi = rng.random_range(0..4);
                let len = wall_len(wi);
                if width + 2.0 * CORNER_MARGIN > len {
                    continue;
                }
                let s0 = rng.random_range(CORNER_MARGIN..=len - CORNER_MARGIN - width);
                let s1 = s0 + width;
                if reserved[wi]
                    .iter()
                    .all(|&(a, c)| s1 + 0.1 <= a || s0 >= c + 0.1)
                {
                    reserved[wi].push((s0, s1));
                    return Some((wi, s0));
                }
            }
            None
        };

    let mut openings = Vec::new();
    for _ in 0..pick(&mut rng, spec.doors) {
        openings.push((DOOR, spec.door_size, 0.0));
    }
    for _ in 0..pick(&mut rng, spec.windows) {
        openings.push((WINDOW, spec.window_size, spec.window_sill));
    }
    for (class, [ow, oh], base) in openings {
        let Some((wi, s0)) = place_on_wall(&mut rng, ow, &mut reserved) else {
            continue;
        };
        let (o, u, inward) = walls[wi];
        let dir = scale(u, 1.0 / wall_len(wi));
        let outward = scale(inward, -REVEAL_DEPTH);
        let corner = add(o, add(scale(dir, s0), [0.0, 0.0, base]));
        let width = scale(dir, ow);
        let up = [0.0, 0.0, oh];
        let id = b.instance();
        // Leaf recessed in the opening, with reveals joining it to the wall plane.
        b.rect(add(corner, outward), width, up, class, id);
        b.rect(corner, outward, up, class, id);
        b.rect(add(corner, width), outward, up, class, id);
        b.rect(add(corner, up), width, outward, class, id);
        if base > 0.0 {
            b.rect(corner, width, outward, class, id);
        }
        let lintel = b.instance();
        b.rect(
            add(corner, up),
            width,
            [0.0, 0.0, LINTEL_HEIGHT],
            BEAM,
            lintel,
        );
        holes[wi].push(Hole {
            s0,
            s1: s0 + ow,
            t0: base,
            t1: base + oh + LINTEL_HEIGHT,
        });
    }

    for _ in 0..pick(&mut rng, spec.stairs) {
        let (run, rise, width) = (0.28, 0.18, 0.9);
        let steps = (((h - 0.3) / rise).floor() as usize).min(6);
        if steps == 0 {
            continue;
        }
        let Some((wi, s0)) = place_on_wall(&mut rng, steps as f64 * run, &mut reserved) else {
            continue;
        };
        let (o, u, inward) = walls[wi];
        let dir = scale(u, 1.0 / wall_len(wi));
        let across = scale(inward, width);
        let id = b.instance();
        for k in 0..steps {
            let foot = add(
                o,
                add(scale(dir, s0 + k as f64 * run), [0.0, 0.0, k as f64 * rise]),
            );
            b.rect(foot, across, [0.0, 0.0, rise], STAIRS, id);
            b.rect(
                add(foot, [0.0, 0.0, rise]),
                scale(dir, run),
                across,
                STAIRS,
                id,
            );
        }
    }

    for _ in 0..pick(&mut rng, spec.installations) {
        let (sw, depth) = (0.15, 0.06);
        let Some((wi, s0)) = place_on_wall(&mut rng, sw, &mut reserved) else {
            continue;
        };
        let (o, u, inward) = walls[wi];
        let dir = scale(u, 1.0 / wall_len(wi));
        let off = scale(inward, depth);
        let corner = add(o, scale(dir, s0));
        let id = b.instance();
        b.rect(
            add(corner, off),
            scale(dir, sw),
            [0.0, 0.0, h],
            INSTALLATION,
            id,
        );
        b.rect(corner, off, [0.0, 0.0, h], INSTALLATION, id);
        b.rect(
            add(corner, scale(dir, sw)),
            off,
            [0.0, 0.0, h],
            INSTALLATION,
            id,
        );
    }

    for _ in 0..pick(&mut rng, spec.ceiling_beams) {
        let (bw, bd) = (0.3, 0.35);
        let id = b.instance();
        if rng.random_bool(0.5) {
            let y = rng.random_range(y0 + 0.5..y1 - 0.5 - bw);
            b.rect([x0, y, z1 - bd], [w, 0.0, 0.0], [0.0, bw, 0.0], BEAM, id);
            b.rect([x0, y, z1 - bd], [w, 0.0, 0.0], [0.0, 0.0, bd], BEAM, id);
            b.rect(
                [x0, y + bw, z1 - bd],
                [w, 0.0, 0.0],
                [0.0, 0.0, bd],
                BEAM,
                id,
            );
        } else {
            let x = rng.random_range(x0 + 0.5..x1 - 0.5 - bw);
            b.rect([x, y0, z1 - bd], [0.0, d, 0.0], [bw, 0.0, 0.0], BEAM, id);
            b.rect([x, y0, z1 - bd], [0.0, d, 0.0], [0.0, 0.0, bd], BEAM, id);
            b.rect(
                [x + bw, y0, z1 - bd],
                [0.0, d, 0.0],
                [0.0, 0.0, bd],
                BEAM,
                id,
            );
        }
    }

    for _ in 0..pick(&mut rng, spec.columns) {
        let c = 0.35;
        let x = rng.random_range(x0 + 1.0..x1 - 1.0 - c);
        let y = rng.random_range(y0 + 1.0..y1 - 1.0 - c);
        b.open_box([x, y, z0], [c, c, h], COLUMN, false);
    }

    let floor_box =
        |rng: &mut Rng, b: &mut Builder, lo: f64, hi: f64, tall: [f64; 2], class: Label| {
            let sx = rng.random_range(lo..hi);
            let sy = rng.random_range(lo..hi);
            let sz = rng.random_range(tall[0]..tall[1]);
            let x = rng.random_range(x0 + 0.4..(x1 - 0.4 - sx).max(x0 + 0.41));
            let y = rng.random_range(y0 + 0.4..(y1 - 0.4 - sy).max(y0 + 0.41));
            b.open_box([x, y, z0], [sx, sy, sz], class, true);
        };
    for _ in 0..pick(&mut rng, spec.equipment) {
        floor_box(&mut rng, &mut b, 0.4, 0.8, [0.5, 1.2], EQUIPMENT);
    }
    for _ in 0..pick(&mut rng, spec.clutter) {
        floor_box(&mut rng, &mut b, 0.1, 0.35, [0.1, 0.35], NONE);
    }

    Ok(Layout {
        surfaces: b.surfaces,
        holes,
    })
}

/// Jittered-grid sample of exactly `n` points in the unit square, with
/// rows laid out according to the aspect ratio `lu / lv`.
fn stratified(n: usize, lu: f64, lv: f64, rng: &mut Rng) -> Vec<(f64, f64)> {
    if n == 0 {
        return Vec::new();
    }
    let rows = ((n as f64 * lv / lu).sqrt().round() as usize).clamp(1, n);
    let mut out = Vec::with_capacity(n);
    for r in 0..rows {
        let count = (r + 1) * n / rows - r * n / rows;
        for j in 0..count {
            let s = (j as f64 + rng.random::<f64>()) / count as f64;
            let t = (r as f64 + rng.random::<f64>()) / rows as f64;
            out.push((s, t));
        }
    }
    out
}

/// Number of points sampled on a surface of the given area.
pub fn point_count(area: f64, density: f64) -> usize {
    (area * density).round() as usize
}

/// Samples every surface of a layout into a labeled, colored cloud.
pub fn sample_layout(layout: &Layout, spec: &SceneSpec, scene_id: &str, seed: u64) -> PointCloud {
    let mut rng = stream(seed, &[0x7361_6d70]);
    let noise = Normal::new(0.0, spec.color_noise.max(0.0)).expect("finite noise");
    let intensity_noise = Normal::new(0.0, 0.05).expect("finite noise");
    let mut positions = Vec::new();
    let mut colors = Vec::new();
    let mut intensity = Vec::new();
    let mut labels = Vec::new();
    let mut instances = Vec::new();
    for surf in &layout.surfaces {
        let (lu, lv) = (dot(surf.u, surf.u).sqrt(), dot(surf.v, surf.v).sqrt());
        let n = point_count(lu * lv, spec.density);
        let holes = surf.wall.map(|w| &layout.holes[w][..]).unwrap_or(&[]);
        let base = spec.palette[surf.class as usize];
        let reflect = 0.3 + 0.05 * surf.class as f64;
        for (s, t) in stratified(n, lu, lv, &mut rng) {
            if holes.iter().any(|hole| hole.contains(s * lu, t * lv)) {
                continue;
            }
            positions.push(surf.at(s, t));
            colors.push(base.map(|c| {
                (c as f64 + noise.sample(&mut rng))
                    .round()
                    .clamp(0.0, 255.0) as u8
            }));
            intensity.push((reflect + intensity_noise.sample(&mut rng)).clamp(0.0, 1.0) as f32);
            labels.push(surf.class);
            instances.push(surf.instance);
        }
    }
    PointCloud::new(scene_id, positions)
        .with_colors(colors)
        .with_intensity(intensity)
        .with_labels(labels)
        .with_instances(instances)
}

/// One labeled scene in the target label space.
pub fn generate_scene(spec: &SceneSpec, seed: u64) -> Result<PointCloud> {
    let layout = scene_layout(spec, seed)?;
    Ok(sample_layout(
        &layout,
        spec,
        &format!("scene_{seed:016x}"),
        seed,
    ))
}

/// Which label space generated scenes are written in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelVariant {
    /// The 11-class target space.
    Target,
    /// The 9-class pretraining space without stairs and installation.
    Pretrain,
}

/// Re-expresses target-space labels in the pretraining space.
pub fn to_pretrain_labels(pc: &PointCloud) -> Result<PointCloud> {
    let labels = pc
        .labels
        .as_ref()
        .ok_or_else(|| Error::MissingLabels(pc.scene_id.clone()))?;
    let map = build_translation(&target_space(), &pretrain_space(), &default_aliases())?;
    let mut out = pc.clone();
    out.labels = Some(translate_labels(labels, &map)?);
    Ok(out)
}

/// Scene counts per split. Every split but the largest gets `ceil(n * ratio)`
/// scenes while the largest keeps at least one; the largest takes the rest.
pub fn split_counts(n: usize, ratios: [f64; 3]) -> Result<[usize; 3]> {
    if ratios.iter().any(|r| !(*r >= 0.0)) || (ratios.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidArgument(format!(
            "split ratios {ratios:?} must be non-negative and sum to 1"
        )));
    }
    let largest = (0..3).fold(0, |best, i| if ratios[i] > ratios[best] { i } else { best });
    let mut counts = [0usize; 3];
    let mut assigned = 0;
    for i in (0..3).filter(|&i| i != largest) {
        let want = (n as f64 * ratios[i] - 1e-9).ceil().max(0.0) as usize;
        let room = n.saturating_sub(1).saturating_sub(assigned);
        counts[i] = want.min(room);
        assigned += counts[i];
    }
    counts[largest] = n - assigned;
    Ok(counts)
}

/// Generates `n` scenes, writes them as binary PLY under `out_dir/scenes`,
/// and writes `out_dir/manifest.txt`. Scene geometry depends only on `seed`
/// and the scene index, not on the label variant.
pub fn generate_dataset(
    spec: &SceneSpec,
    n: usize,
    ratios: [f64; 3],
    seed: u64,
    out_dir: &Path,
    variant: LabelVariant,
) -> Result<DatasetManifest> {
    spec.validate()?;
    let counts = split_counts(n, ratios)?;
    let scene_dir = out_dir.join("scenes");
    std::fs::create_dir_all(&scene_dir).map_err(|e| Error::io(&scene_dir, e))?;
    let space = match variant {
        LabelVariant::Target => target_space(),
        LabelVariant::Pretrain => pretrain_space(),
    };
    let written = crate::exec::map_range(n, |i| -> Result<String> {
        let layout = scene_layout(spec, derive(seed, &[i as u64]))?;
        let id = format!("scene_{i:03}");
        let mut pc = sample_layout(&layout, spec, &id, derive(seed, &[i as u64]));
        if variant == LabelVariant::Pretrain {
            pc = to_pretrain_labels(&pc)?;
        }
        let rel = format!("scenes/{id}.ply");
        save_pointcloud(&pc, &out_dir.join(&rel), PointFormat::PlyBinaryLe)?;
        Ok(rel)
    });
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut stream(seed, &[0x7370_6c69]));
    let mut split_of = vec![Split::Train; n];
    for (pos, &i) in order.iter().enumerate() {
        split_of[i] = if pos < counts[0] {
            Split::Train
        } else if pos < counts[0] + counts[1] {
            Split::Val
        } else {
            Split::Test
        };
    }
    let mut manifest = DatasetManifest::new(out_dir, space.name.clone());
    for (i, rel) in written.into_iter().enumerate() {
        manifest.push(format!("scene_{i:03}"), rel?, split_of[i])?;
    }
    manifest.save(&out_dir.join("manifest.txt"))?;
    Ok(manifest)
}
