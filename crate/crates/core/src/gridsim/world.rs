use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use super::{World, DOOR, FREE, NUM_CLASSES, WALL};
use crate::rng::seeded;
use crate::{Error, Result};

/// Inclusive rectangle of free interior cells.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Room {
    pub x0: usize,
    pub y0: usize,
    pub x1: usize,
    pub y1: usize,
}

impl Room {
    fn width(&self) -> usize {
        self.x1 - self.x0 + 1
    }

    fn height(&self) -> usize {
        self.y1 - self.y0 + 1
    }
}

/// Rooms are carved by recursive binary splits. Interior walls lie on odd
/// coordinates and door openings on even ones, so every even-even cell is
/// free and furniture (always on odd-odd cells) never closes a passage.
pub fn generate_world(seed: u64, size: usize, cell: f64) -> Result<World> {
    if size < 16 {
        return Err(Error::WorldTooSmall(format!("{size}x{size} cannot hold two rooms")));
    }
    if cell <= 0.0 {
        return Err(Error::WorldTooSmall(format!("cell size {cell}")));
    }
    let mut rng = seeded(seed);
    let mut w = World {
        size,
        cell,
        seed,
        blocked: vec![false; size * size],
        semantic: vec![FREE; size * size],
        rooms: Vec::new(),
    };
    for i in 0..size {
        for (x, y) in [(i, 0), (i, size - 1), (0, i), (size - 1, i)] {
            set_wall(&mut w, x, y);
        }
    }
    let interior = Room {
        x0: 1,
        y0: 1,
        x1: size - 2,
        y1: size - 2,
    };
    split(&mut w, interior, 0, &mut rng);
    for room in w.rooms.clone() {
        furnish(&mut w, room, &mut rng);
    }
    Ok(w)
}

fn set_wall(w: &mut World, x: usize, y: usize) {
    let i = w.idx(x, y);
    w.blocked[i] = true;
    w.semantic[i] = WALL;
}

/// Odd split lines leaving at least three cells on either side.
fn split_lines(lo: usize, hi: usize) -> Vec<usize> {
    (lo + 3..=hi.saturating_sub(3)).filter(|v| v % 2 == 1).collect()
}

fn split<R: Rng>(w: &mut World, r: Room, depth: usize, rng: &mut R) {
    let vertical = split_lines(r.x0, r.x1);
    let horizontal = split_lines(r.y0, r.y1);
    let big = r.width().max(r.height()) >= 9;
    let go = match depth {
        0 => true,
        _ => big && rng.gen_bool(0.75),
    };
    if !go || (vertical.is_empty() && horizontal.is_empty()) {
        w.rooms.push(r);
        return;
    }
    let use_vertical = if vertical.is_empty() {
        false
    } else if horizontal.is_empty() {
        true
    } else if r.width() != r.height() {
        r.width() > r.height()
    } else {
        rng.gen_bool(0.5)
    };
    if use_vertical {
        let line = vertical[rng.gen_range(0..vertical.len())];
        for y in r.y0..=r.y1 {
            set_wall(w, line, y);
        }
        let door = even_in(r.y0, r.y1, rng);
        open_door(w, line, door, true);
        split(w, Room { x1: line - 1, ..r }, depth + 1, rng);
        split(w, Room { x0: line + 1, ..r }, depth + 1, rng);
    } else {
        let line = horizontal[rng.gen_range(0..horizontal.len())];
        for x in r.x0..=r.x1 {
            set_wall(w, x, line);
        }
        let door = even_in(r.x0, r.x1, rng);
        open_door(w, door, line, false);
        split(w, Room { y1: line - 1, ..r }, depth + 1, rng);
        split(w, Room { y0: line + 1, ..r }, depth + 1, rng);
    }
}

fn even_in<R: Rng>(lo: usize, hi: usize, rng: &mut R) -> usize {
    let evens: Vec<usize> = (lo..=hi).filter(|v| v % 2 == 0).collect();
    evens[rng.gen_range(0..evens.len())]
}

/// Frees the opening at `(x, y)` and marks the wall cells on both sides of it
/// as door frame.
fn open_door(w: &mut World, x: usize, y: usize, vertical_wall: bool) {
    let i = w.idx(x, y);
    w.blocked[i] = false;
    w.semantic[i] = FREE;
    let frames = if vertical_wall {
        [(x, y - 1), (x, y + 1)]
    } else {
        [(x - 1, y), (x + 1, y)]
    };
    for (fx, fy) in frames {
        let j = w.idx(fx, fy);
        if w.blocked[j] {
            w.semantic[j] = DOOR;
        }
    }
}

fn furnish<R: Rng>(w: &mut World, r: Room, rng: &mut R) {
    let mut spots: Vec<(usize, usize)> = (r.y0..=r.y1)
        .flat_map(|y| (r.x0..=r.x1).map(move |x| (x, y)))
        .filter(|&(x, y)| x % 2 == 1 && y % 2 == 1)
        .collect();
    let area = r.width() * r.height();
    let count = (1 + area / 24 + rng.gen_range(0..2)).min(spots.len());
    for _ in 0..count {
        let (x, y) = spots.swap_remove(rng.gen_range(0..spots.len()));
        let i = w.idx(x, y);
        w.blocked[i] = true;
        w.semantic[i] = rng.gen_range(2..NUM_CLASSES as u8);
    }
}
