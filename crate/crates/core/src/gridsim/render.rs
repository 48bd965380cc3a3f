use alloc::vec::Vec;

use rand::Rng;

use super::{Pose, World};
use crate::{Error, Result};

/// One directional scan: a single row of `columns` (depth, class) pairs.
#[derive(Clone, Debug, PartialEq)]
pub struct Scan {
    /// Camera pose; `theta` is the optical axis.
    pub camera: Pose,
    /// Camera-plane depth in meters, 0 where missing.
    pub depth: Vec<f64>,
    pub class: Vec<u8>,
    /// Cell hit by each column's ray, kept for diagnostics and oracles.
    pub hit: Vec<(usize, usize)>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Panorama {
    pub scans: Vec<Scan>,
    pub columns: usize,
    /// Horizontal field of view of each scan in radians.
    pub fov: f64,
}

impl Panorama {
    /// Normalized image-plane offsets of the columns, see [`column_offsets`].
    pub fn offsets(&self) -> Vec<f64> {
        column_offsets(self.columns, self.fov)
    }
}

/// Image-plane coordinate `u` of each column center for a pinhole camera
/// with the given horizontal field of view. Column `j` looks along
/// `forward + u_j * right`, where `right` is the axis rotated by -90°.
pub fn column_offsets(columns: usize, fov: f64) -> Vec<f64> {
    let focal = (columns as f64 / 2.0) / libm::tan(fov / 2.0);
    (0..columns)
        .map(|j| (j as f64 + 0.5 - columns as f64 / 2.0) / focal)
        .collect()
}

/// Grid traversal from `(x, y)` meters along `angle` to the first blocked
/// cell. Returns the distance to the hit cell's entry face and the cell.
pub fn march(world: &World, x: f64, y: f64, angle: f64) -> Option<(f64, (usize, usize))> {
    let c = world.cell;
    let (px, py) = (x / c, y / c);
    let (dx, dy) = (libm::cos(angle), libm::sin(angle));
    let (mut cx, mut cy) = (libm::floor(px) as i64, libm::floor(py) as i64);
    if !world.in_bounds(cx, cy) {
        return None;
    }
    let step_x: i64 = if dx > 0.0 { 1 } else { -1 };
    let step_y: i64 = if dy > 0.0 { 1 } else { -1 };
    let boundary = |p: f64, cell: i64, step: i64| if step > 0 { (cell + 1) as f64 - p } else { p - cell as f64 };
    let inv = |d: f64| if d.abs() < 1e-15 { f64::INFINITY } else { 1.0 / d.abs() };
    let (dtx, dty) = (inv(dx), inv(dy));
    let first = |b: f64, dt: f64| if dt.is_infinite() { f64::INFINITY } else { b * dt };
    let mut tx = first(boundary(px, cx, step_x), dtx);
    let mut ty = first(boundary(py, cy, step_y), dty);
    let mut t = 0.0;
    loop {
        if world.is_blocked(cx as usize, cy as usize) {
            return Some((t * c, (cx as usize, cy as usize)));
        }
        if tx < ty {
            t = tx;
            tx += dtx;
            cx += step_x;
        } else {
            t = ty;
            ty += dty;
            cy += step_y;
        }
        if !world.in_bounds(cx, cy) {
            return None;
        }
    }
}

/// Renders `k` scans of `columns` columns each. Scan `i` is centered on
/// `pose.theta + 2πi/k`. Each column independently loses its depth with
/// probability `p_miss`.
pub fn render_panorama<R: Rng>(
    world: &World,
    pose: &Pose,
    k: usize,
    columns: usize,
    fov_deg: f64,
    p_miss: f64,
    rng: &mut R,
) -> Result<Panorama> {
    if !world.is_free_point(pose.x, pose.y) {
        return Err(Error::PoseNotFree { x: pose.x, y: pose.y });
    }
    if k < 4 || columns < 8 {
        return Err(Error::Invalid(alloc::format!("panorama needs K >= 4 and W >= 8, got {k} x {columns}")));
    }
    let fov = fov_deg.to_radians();
    let offsets = column_offsets(columns, fov);
    let mut scans = Vec::with_capacity(k);
    for i in 0..k {
        let camera = Pose::new(pose.x, pose.y, pose.theta + 2.0 * core::f64::consts::PI * i as f64 / k as f64);
        let mut depth = Vec::with_capacity(columns);
        let mut class = Vec::with_capacity(columns);
        let mut hit = Vec::with_capacity(columns);
        for &u in &offsets {
            let angle = camera.theta - libm::atan(u);
            let (dist, cell) = march(world, pose.x, pose.y, angle).expect("worlds are enclosed by walls");
            let mut d = dist / libm::sqrt(1.0 + u * u);
            if p_miss > 0.0 && rng.gen_bool(p_miss) {
                d = 0.0;
            }
            depth.push(d);
            class.push(world.class_at(cell.0, cell.1));
            hit.push(cell);
        }
        scans.push(Scan {
            camera,
            depth,
            class,
            hit,
        });
    }
    Ok(Panorama { scans, columns, fov })
}
