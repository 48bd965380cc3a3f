//! Procedural indoor worlds on a square cell grid, panoramic range scans,
//! navigation graphs and template instructions.
//!
//! Coordinates: cell `(cx, cy)` covers `[cx, cx+1) x [cy, cy+1)` in cell
//! units; world meters are cell units times the cell size. Headings are
//! radians measured from `+x` toward `+y`, so a positive heading change is a
//! left turn.

use alloc::format;
use alloc::vec::Vec;
use core::f64::consts::PI;

use crate::{Error, Result};

mod episode;
mod graph;
mod render;
mod world;

pub use episode::{grammar_words, sample_episode, Clause, Episode, Turn};
pub use graph::{NavGraph, ViewpointId};
pub use render::{column_offsets, march, render_panorama, Panorama, Scan};
pub use world::{generate_world, Room};

pub const WALL: u8 = 0;
pub const DOOR: u8 = 1;
pub const NUM_CLASSES: usize = 12;
/// Semantic value of free cells.
pub const FREE: u8 = u8::MAX;

pub const CLASS_NAMES: [&str; NUM_CLASSES] = [
    "wall", "door", "table", "chair", "sofa", "bed", "plant", "sink", "stairs", "lamp", "shelf", "rug",
];

/// Classes an instruction may refer to.
pub fn is_landmark(class: u8) -> bool {
    class != WALL && (class as usize) < NUM_CLASSES
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Pose {
    pub x: f64,
    pub y: f64,
    pub theta: f64,
}

impl Pose {
    pub fn new(x: f64, y: f64, theta: f64) -> Self {
        Self {
            x,
            y,
            theta: wrap_angle(theta),
        }
    }

    pub fn dist(&self, other: &Pose) -> f64 {
        libm::hypot(self.x - other.x, self.y - other.y)
    }
}

/// Maps an angle into `[0, 2π)`.
pub fn wrap_angle(a: f64) -> f64 {
    let r = a % (2.0 * PI);
    if r < 0.0 {
        r + 2.0 * PI
    } else {
        r
    }
}

/// Signed difference `to - from` mapped into `(-π, π]`.
pub fn angle_diff(to: f64, from: f64) -> f64 {
    let d = wrap_angle(to - from);
    if d > PI {
        d - 2.0 * PI
    } else {
        d
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct World {
    pub size: usize,
    pub cell: f64,
    pub seed: u64,
    /// Row-major `size x size`; `true` for walls and furniture.
    pub blocked: Vec<bool>,
    /// Class id per cell, [`FREE`] where not blocked.
    pub semantic: Vec<u8>,
    pub rooms: Vec<Room>,
}

impl World {
    #[inline]
    pub fn idx(&self, cx: usize, cy: usize) -> usize {
        cy * self.size + cx
    }

    pub fn in_bounds(&self, cx: i64, cy: i64) -> bool {
        cx >= 0 && cy >= 0 && (cx as usize) < self.size && (cy as usize) < self.size
    }

    pub fn is_blocked(&self, cx: usize, cy: usize) -> bool {
        self.blocked[self.idx(cx, cy)]
    }

    pub fn class_at(&self, cx: usize, cy: usize) -> u8 {
        self.semantic[self.idx(cx, cy)]
    }

    /// Cell containing a point in meters.
    pub fn cell_of(&self, x: f64, y: f64) -> Option<(usize, usize)> {
        let cx = libm::floor(x / self.cell) as i64;
        let cy = libm::floor(y / self.cell) as i64;
        self.in_bounds(cx, cy).then_some((cx as usize, cy as usize))
    }

    /// Center of a cell in meters.
    pub fn center(&self, cx: usize, cy: usize) -> (f64, f64) {
        ((cx as f64 + 0.5) * self.cell, (cy as f64 + 0.5) * self.cell)
    }

    pub fn is_free_point(&self, x: f64, y: f64) -> bool {
        self.cell_of(x, y).is_some_and(|(cx, cy)| !self.is_blocked(cx, cy))
    }

    /// Cells holding a landmark class.
    pub fn landmarks(&self) -> Vec<(usize, usize)> {
        (0..self.size * self.size)
            .filter(|&i| is_landmark(self.semantic[i]))
            .map(|i| (i % self.size, i / self.size))
            .collect()
    }

    /// Number of free cells reachable from the first free cell (4-connected).
    pub fn reachable_free(&self) -> usize {
        let n = self.size;
        let Some(first) = self.blocked.iter().position(|b| !b) else {
            return 0;
        };
        let mut seen = alloc::vec![false; n * n];
        let mut stack = alloc::vec![first];
        seen[first] = true;
        let mut count = 0;
        while let Some(i) = stack.pop() {
            count += 1;
            let (x, y) = ((i % n) as i64, (i / n) as i64);
            for (dx, dy) in [(1, 0), (-1, 0), (0, 1), (0, -1)] {
                let (nx, ny) = (x + dx, y + dy);
                if self.in_bounds(nx, ny) {
                    let j = ny as usize * n + nx as usize;
                    if !self.blocked[j] && !seen[j] {
                        seen[j] = true;
                        stack.push(j);
                    }
                }
            }
        }
        count
    }

    /// Boundary walls, free-space connectivity and one landmark per room.
    pub fn check_invariants(&self) -> Result<()> {
        let n = self.size;
        for i in 0..n {
            for (x, y) in [(i, 0), (i, n - 1), (0, i), (n - 1, i)] {
                if !self.is_blocked(x, y) {
                    return Err(Error::Invalid(format!("boundary cell ({x}, {y}) is free")));
                }
            }
        }
        let free = self.blocked.iter().filter(|b| !**b).count();
        if self.reachable_free() != free {
            return Err(Error::Invalid("free space is not connected".into()));
        }
        for (i, r) in self.rooms.iter().enumerate() {
            let has = (r.y0..=r.y1).any(|y| (r.x0..=r.x1).any(|x| is_landmark(self.class_at(x, y))));
            if !has {
                return Err(Error::Invalid(format!("room {i} has no landmark")));
            }
        }
        Ok(())
    }
}
