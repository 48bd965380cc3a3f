use alloc::collections::BinaryHeap;
use alloc::vec;
use alloc::vec::Vec;
use core::cmp::Ordering;

use super::{Pose, World};
use crate::{Error, Result};

pub type ViewpointId = usize;

/// Viewpoints on the even-even cell lattice, joined to their eight lattice
/// neighbors (1 or √2 lattice steps, i.e. 2 or 2.83 cells) when the straight
/// segment between them touches no blocked cell.
#[derive(Clone, Debug, PartialEq)]
pub struct NavGraph {
    /// Position of each viewpoint in meters.
    pub pos: Vec<(f64, f64)>,
    /// Cell of each viewpoint.
    pub cells: Vec<(usize, usize)>,
    /// Sorted neighbor lists.
    pub adj: Vec<Vec<ViewpointId>>,
}

/// Conservative visibility: every cell the segment passes through or grazes
/// at a corner must be free.
pub fn segment_clear(world: &World, a: (f64, f64), b: (f64, f64)) -> bool {
    let c = world.cell;
    let (ax, ay, bx, by) = (a.0 / c, a.1 / c, b.0 / c, b.1 / c);
    let len = libm::hypot(bx - ax, by - ay);
    let n = (len * 100.0) as usize + 1;
    const GRAZE: f64 = 1e-9;
    for i in 0..=n {
        let t = i as f64 / n as f64;
        let (x, y) = (ax + (bx - ax) * t, ay + (by - ay) * t);
        for ox in [-GRAZE, GRAZE] {
            for oy in [-GRAZE, GRAZE] {
                let (cx, cy) = (libm::floor(x + ox) as i64, libm::floor(y + oy) as i64);
                if !world.in_bounds(cx, cy) || world.is_blocked(cx as usize, cy as usize) {
                    return false;
                }
            }
        }
    }
    true
}

#[derive(PartialEq)]
struct Entry(f64, ViewpointId);

impl Eq for Entry {}

impl Ord for Entry {
    fn cmp(&self, other: &Self) -> Ordering {
        // min-heap on (cost, id)
        other.0.total_cmp(&self.0).then_with(|| other.1.cmp(&self.1))
    }
}

impl PartialOrd for Entry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

const COST_EPS: f64 = 1e-9;

impl NavGraph {
    pub fn build(world: &World) -> Self {
        let n = world.size;
        let mut cells = Vec::new();
        for y in (2..n - 1).step_by(2) {
            for x in (2..n - 1).step_by(2) {
                if !world.is_blocked(x, y) {
                    cells.push((x, y));
                }
            }
        }
        let pos: Vec<(f64, f64)> = cells.iter().map(|&(x, y)| world.center(x, y)).collect();
        let index = |x: i64, y: i64| cells.iter().position(|&c| c == (x as usize, y as usize));
        let mut adj = vec![Vec::new(); cells.len()];
        for (i, &(x, y)) in cells.iter().enumerate() {
            for (dx, dy) in [(2, 0), (0, 2), (2, 2), (2, -2)] {
                let (nx, ny) = (x as i64 + dx, y as i64 + dy);
                if nx < 0 || ny < 0 {
                    continue;
                }
                if let Some(j) = index(nx, ny) {
                    if segment_clear(world, pos[i], pos[j]) {
                        adj[i].push(j);
                        adj[j].push(i);
                    }
                }
            }
        }
        for a in &mut adj {
            a.sort_unstable();
        }
        Self { pos, cells, adj }
    }

    pub fn len(&self) -> usize {
        self.pos.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pos.is_empty()
    }

    pub fn check(&self, id: ViewpointId) -> Result<()> {
        if id < self.len() {
            Ok(())
        } else {
            Err(Error::UnknownViewpoint(id))
        }
    }

    pub fn dist(&self, a: ViewpointId, b: ViewpointId) -> f64 {
        libm::hypot(self.pos[a].0 - self.pos[b].0, self.pos[a].1 - self.pos[b].1)
    }

    /// Heading of travel from `a` to `b`.
    pub fn heading(&self, a: ViewpointId, b: ViewpointId) -> f64 {
        super::wrap_angle(libm::atan2(self.pos[b].1 - self.pos[a].1, self.pos[b].0 - self.pos[a].0))
    }

    pub fn pose(&self, id: ViewpointId, theta: f64) -> Pose {
        Pose::new(self.pos[id].0, self.pos[id].1, theta)
    }

    pub fn nearest(&self, x: f64, y: f64) -> ViewpointId {
        (0..self.len())
            .min_by(|&a, &b| {
                let da = libm::hypot(self.pos[a].0 - x, self.pos[a].1 - y);
                let db = libm::hypot(self.pos[b].0 - x, self.pos[b].1 - y);
                da.total_cmp(&db)
            })
            .expect("graph is nonempty")
    }

    /// Moves to viewpoint `to`, facing the direction of travel. Staying in
    /// place keeps the heading.
    pub fn step(&self, pose: &Pose, to: ViewpointId) -> Result<Pose> {
        self.check(to)?;
        let (x, y) = self.pos[to];
        let (dx, dy) = (x - pose.x, y - pose.y);
        if libm::hypot(dx, dy) < 1e-12 {
            return Ok(Pose::new(x, y, pose.theta));
        }
        Ok(Pose::new(x, y, libm::atan2(dy, dx)))
    }

    /// Dijkstra costs and predecessors from `from`. Among equal-cost routes
    /// the predecessor with the smallest id wins.
    pub fn dijkstra(&self, from: ViewpointId) -> (Vec<f64>, Vec<Option<ViewpointId>>) {
        let n = self.len();
        let mut cost = vec![f64::INFINITY; n];
        let mut prev: Vec<Option<ViewpointId>> = vec![None; n];
        let mut done = vec![false; n];
        cost[from] = 0.0;
        let mut heap = BinaryHeap::new();
        heap.push(Entry(0.0, from));
        while let Some(Entry(c, u)) = heap.pop() {
            if done[u] {
                continue;
            }
            done[u] = true;
            for &v in &self.adj[u] {
                if done[v] {
                    continue;
                }
                let nc = c + self.dist(u, v);
                let better = nc < cost[v] - COST_EPS
                    || ((nc - cost[v]).abs() <= COST_EPS && prev[v].is_some_and(|p| u < p));
                if better {
                    cost[v] = nc;
                    prev[v] = Some(u);
                    heap.push(Entry(nc, v));
                }
            }
        }
        (cost, prev)
    }

    /// Minimal Euclidean route, endpoints included.
    pub fn shortest_path(&self, from: ViewpointId, to: ViewpointId) -> Result<Vec<ViewpointId>> {
        self.check(from)?;
        self.check(to)?;
        let (cost, prev) = self.dijkstra(from);
        if !cost[to].is_finite() {
            return Err(Error::Disconnected { from, to });
        }
        let mut path = vec![to];
        let mut cur = to;
        while let Some(p) = prev[cur] {
            path.push(p);
            cur = p;
        }
        path.reverse();
        Ok(path)
    }

    pub fn path_length(&self, path: &[ViewpointId]) -> f64 {
        path.windows(2).map(|w| self.dist(w[0], w[1])).sum()
    }

    pub fn is_connected(&self) -> bool {
        self.is_empty() || self.dijkstra(0).0.iter().all(|c| c.is_finite())
    }
}

#[cfg(test)]
mod tests {
    use super::super::generate_world;
    use super::*;
    use crate::rng::{seeded, Rng};

    #[test]
    fn graphs_are_connected_with_lattice_spacing() {
        for seed in 0..50 {
            let w = generate_world(seed, 20, 0.5).unwrap();
            let g = NavGraph::build(&w);
            assert!(g.is_connected(), "seed {seed}");
            for (i, nb) in g.adj.iter().enumerate() {
                for &j in nb {
                    let cells = g.dist(i, j) / w.cell;
                    assert!((2.0 - 1e-9..=3.0).contains(&cells));
                    assert!(segment_clear(&w, g.pos[i], g.pos[j]));
                }
            }
        }
    }

    #[test]
    fn trivial_and_corridor_paths() {
        let w = generate_world(0, 16, 0.5).unwrap();
        let g = NavGraph::build(&w);
        assert_eq!(g.shortest_path(3, 3).unwrap(), vec![3]);
        assert!(matches!(g.shortest_path(0, 10_000), Err(Error::UnknownViewpoint(_))));
        // a straight line of lattice points inside one room is its own shortest path
        let r = w.rooms[0];
        let y = (r.y0..=r.y1).find(|v| v % 2 == 0).unwrap();
        let row: Vec<usize> = (r.x0..=r.x1)
            .filter(|x| x % 2 == 0)
            .map(|x| g.cells.iter().position(|&c| c == (x, y)).unwrap())
            .collect();
        if row.len() >= 2 && row.windows(2).all(|p| g.adj[p[0]].contains(&p[1])) {
            assert_eq!(g.shortest_path(row[0], *row.last().unwrap()).unwrap(), row);
        }
    }

    #[test]
    fn step_sets_travel_heading() {
        let w = generate_world(0, 16, 0.5).unwrap();
        let g = NavGraph::build(&w);
        let a = g.cells.iter().position(|&c| c == (2, 2)).unwrap();
        let b = g.cells.iter().position(|&c| c == (4, 2)).unwrap();
        let p = g.step(&g.pose(a, 1.0), b).unwrap();
        assert!(p.theta.abs() < 1e-12);
        let same = g.step(&p, b).unwrap();
        assert_eq!(same, p);
        assert!(g.step(&p, 999).is_err());
    }

    #[test]
    fn path_length_sums_hops() {
        let w = generate_world(4, 20, 0.5).unwrap();
        let g = NavGraph::build(&w);
        let mut rng = seeded(1);
        let mut pose = g.pose(0, 0.0);
        let mut cur = 0;
        let mut walked = 0.0;
        let mut path = vec![0];
        for _ in 0..5 {
            let nb = &g.adj[cur];
            let next = nb[rng.gen_range(0..nb.len())];
            let np = g.step(&pose, next).unwrap();
            walked += pose.dist(&np);
            pose = np;
            cur = next;
            path.push(next);
        }
        assert!((walked - g.path_length(&path)).abs() < 1e-12);
    }

    /// Exhaustive enumeration of simple paths.
    fn brute_cost(g: &NavGraph, cur: usize, to: usize, seen: &mut Vec<bool>, acc: f64, best: &mut f64) {
        if cur == to {
            *best = best.min(acc);
            return;
        }
        for &n in &g.adj[cur] {
            if !seen[n] {
                seen[n] = true;
                brute_cost(g, n, to, seen, acc + g.dist(cur, n), best);
                seen[n] = false;
            }
        }
    }

    #[test]
    fn dijkstra_matches_exhaustive_search_on_small_graphs() {
        let mut rng = seeded(7);
        for _ in 0..30 {
            let n = rng.gen_range(4..=12);
            let pos: Vec<(f64, f64)> = (0..n).map(|_| (rng.gen_range(0.0..5.0), rng.gen_range(0.0..5.0))).collect();
            let mut adj = vec![Vec::new(); n];
            for i in 0..n {
                for j in i + 1..n {
                    if rng.gen_bool(0.35) {
                        adj[i].push(j);
                        adj[j].push(i);
                    }
                }
            }
            let g = NavGraph {
                cells: vec![(0, 0); n],
                pos,
                adj,
            };
            for to in 0..n {
                let mut seen = vec![false; n];
                seen[0] = true;
                let mut best = f64::INFINITY;
                brute_cost(&g, 0, to, &mut seen, 0.0, &mut best);
                match g.shortest_path(0, to) {
                    Ok(p) => assert!((g.path_length(&p) - best).abs() < 1e-9),
                    Err(Error::Disconnected { .. }) => assert!(best.is_infinite()),
                    Err(e) => panic!("{e}"),
                }
            }
        }
    }
}
