use alloc::string::{String, ToString};
use alloc::sync::Arc;
use alloc::vec::Vec;
use core::f64::consts::PI;

use rand::Rng;

use super::graph::{NavGraph, ViewpointId};
use super::{angle_diff, is_landmark, march, Pose, World, CLASS_NAMES, DOOR};
use crate::config::Config;
use crate::rng::seeded;
use crate::{Error, Result};

const MAX_ATTEMPTS: usize = 100;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Turn {
    Straight,
    SlightLeft,
    SlightRight,
    Left,
    Right,
    Around,
}

impl Turn {
    /// Classifies a signed heading change (positive = left).
    pub fn from_change(delta: f64) -> Self {
        let deg = delta.to_degrees();
        let a = deg.abs();
        if a < 30.0 {
            Turn::Straight
        } else if a >= 150.0 {
            Turn::Around
        } else if a < 60.0 - 1e-9 {
            if deg > 0.0 {
                Turn::SlightLeft
            } else {
                Turn::SlightRight
            }
        } else if deg > 0.0 {
            Turn::Left
        } else {
            Turn::Right
        }
    }

    fn phrases(self) -> &'static [&'static str] {
        match self {
            Turn::Straight => &["go straight", "walk forward", "continue straight", "head forward"],
            Turn::SlightLeft => &["bear left", "veer left"],
            Turn::SlightRight => &["bear right", "veer right"],
            Turn::Left => &["turn left", "go left"],
            Turn::Right => &["turn right", "go right"],
            Turn::Around => &["turn around", "go back"],
        }
    }
}

const PREPS: &[&str] = &["to the", "toward the", "past the", "by the"];
const NO_LANDMARK: &[&str] = &["a bit", "some more"];
const STOPS: &[&str] = &["stop at the", "wait by the", "stop near the"];

fn class_words(class: u8) -> &'static [&'static str] {
    match CLASS_NAMES[class as usize] {
        "door" => &["door", "doorway"],
        "sofa" => &["sofa", "couch"],
        "shelf" => &["shelf", "bookcase"],
        "stairs" => &["stairs", "staircase"],
        "rug" => &["rug", "carpet"],
        _ => core::slice::from_ref(&CLASS_NAMES[class as usize]),
    }
}

/// Every word the grammar can emit, sorted.
pub fn grammar_words() -> Vec<&'static str> {
    let mut words: Vec<&'static str> = Vec::new();
    let turns = [
        Turn::Straight,
        Turn::SlightLeft,
        Turn::SlightRight,
        Turn::Left,
        Turn::Right,
        Turn::Around,
    ];
    let phrases = turns.iter().flat_map(|t| t.phrases().iter());
    for p in phrases.chain(PREPS).chain(NO_LANDMARK).chain(STOPS) {
        words.extend(p.split(' '));
    }
    for c in 1..CLASS_NAMES.len() as u8 {
        words.extend_from_slice(class_words(c));
    }
    words.sort_unstable();
    words.dedup();
    words
}

/// One instruction clause describing a single edge of the trajectory.
#[derive(Clone, Debug, PartialEq)]
pub struct Clause {
    pub turn: Turn,
    /// Landmark cell referenced by the clause, visible from the edge's end.
    pub landmark: Option<(usize, usize)>,
    pub words: Vec<String>,
}

#[derive(Clone, Debug)]
pub struct Episode {
    pub world: Arc<World>,
    pub graph: Arc<NavGraph>,
    pub seed: u64,
    /// Viewpoints from start to goal.
    pub path: Vec<ViewpointId>,
    pub start_heading: f64,
    pub clauses: Vec<Clause>,
    pub stop_landmark: (usize, usize),
    pub text: String,
    pub tokens: Vec<String>,
}

impl Episode {
    pub fn start(&self) -> ViewpointId {
        self.path[0]
    }

    pub fn goal(&self) -> ViewpointId {
        *self.path.last().expect("paths are nonempty")
    }

    pub fn edges(&self) -> usize {
        self.path.len() - 1
    }

    pub fn start_pose(&self) -> Pose {
        self.graph.pose(self.start(), self.start_heading)
    }

    pub fn goal_pose(&self) -> Pose {
        let n = self.path.len();
        self.graph.pose(self.goal(), self.graph.heading(self.path[n - 2], self.path[n - 1]))
    }

    /// Demonstrator states `s*_0..s*_E`: each viewpoint of the path with the
    /// heading of the edge that reached it.
    pub fn trajectory(&self) -> Vec<Pose> {
        let mut out = alloc::vec![self.start_pose()];
        for w in self.path.windows(2) {
            out.push(self.graph.pose(w[1], self.graph.heading(w[0], w[1])));
        }
        out
    }

    /// Straight-line distance from start to goal in meters.
    pub fn start_goal_distance(&self) -> f64 {
        self.graph.dist(self.start(), self.goal())
    }
}

/// True when the ray from `from` toward the center of `cell` first hits `cell`.
pub fn cell_visible(world: &World, from: (f64, f64), cell: (usize, usize)) -> bool {
    let (tx, ty) = world.center(cell.0, cell.1);
    let angle = libm::atan2(ty - from.1, tx - from.0);
    march(world, from.0, from.1, angle).is_some_and(|(_, hit)| hit == cell)
}

/// Nearest visible landmark within `radius` meters of `from`.
fn nearest_visible(world: &World, marks: &[(usize, usize)], from: (f64, f64), radius: f64) -> Option<(usize, usize)> {
    let mut best: Option<((usize, usize), f64)> = None;
    for &m in marks {
        let (mx, my) = world.center(m.0, m.1);
        let d = libm::hypot(mx - from.0, my - from.1);
        if d <= radius && best.is_none_or(|(_, bd)| d < bd) && cell_visible(world, from, m) {
            best = Some((m, d));
        }
    }
    best.map(|(m, _)| m)
}

fn pick<'a, R: Rng>(rng: &mut R, options: &'a [&'a str]) -> &'a str {
    options[rng.gen_range(0..options.len())]
}

fn push_words(out: &mut Vec<String>, phrase: &str) {
    out.extend(phrase.split(' ').map(|w| w.to_string()));
}

/// Samples a shortest-path trajectory of `min_path_edges..=t_max` edges and
/// describes it with one clause per edge plus a stop clause.
pub fn sample_episode(world: Arc<World>, graph: Arc<NavGraph>, seed: u64, cfg: &Config) -> Result<Episode> {
    let mut rng = seeded(seed);
    let marks = world.landmarks();
    for _ in 0..MAX_ATTEMPTS {
        let start = rng.gen_range(0..graph.len());
        let (_, prev) = graph.dijkstra(start);
        let hops = |mut v: usize| {
            let mut n = 0;
            while let Some(p) = prev[v] {
                v = p;
                n += 1;
            }
            n
        };
        let goals: Vec<ViewpointId> = (0..graph.len())
            .filter(|&g| g != start && prev[g].is_some())
            .filter(|&g| (cfg.min_path_edges..=cfg.t_max).contains(&hops(g)))
            .collect();
        let start_heading = rng.gen_range(0.0..2.0 * PI);
        if goals.is_empty() {
            continue;
        }
        let goal = goals[rng.gen_range(0..goals.len())];
        let path = graph.shortest_path(start, goal)?;
        let Some(stop_landmark) = nearest_visible(&world, &marks, graph.pos[goal], cfg.stop_landmark_radius) else {
            continue;
        };
        let mut clauses = Vec::with_capacity(path.len() - 1);
        let mut heading = start_heading;
        for w in path.windows(2) {
            let dir = graph.heading(w[0], w[1]);
            let turn = Turn::from_change(angle_diff(dir, heading));
            heading = dir;
            let landmark = nearest_visible(&world, &marks, graph.pos[w[1]], cfg.clause_landmark_radius);
            let mut words = Vec::new();
            push_words(&mut words, pick(&mut rng, turn.phrases()));
            match landmark {
                Some((lx, ly)) => {
                    push_words(&mut words, pick(&mut rng, PREPS));
                    push_words(&mut words, pick(&mut rng, class_words(world.class_at(lx, ly))));
                }
                None => push_words(&mut words, pick(&mut rng, NO_LANDMARK)),
            }
            clauses.push(Clause { turn, landmark, words });
        }
        let mut stop = Vec::new();
        push_words(&mut stop, pick(&mut rng, STOPS));
        let class = world.class_at(stop_landmark.0, stop_landmark.1);
        debug_assert!(is_landmark(class) || class == DOOR);
        push_words(&mut stop, pick(&mut rng, class_words(class)));

        let mut text = String::new();
        let mut tokens = Vec::new();
        for (i, words) in clauses.iter().map(|c| &c.words).chain(core::iter::once(&stop)).enumerate() {
            if i > 0 {
                text.push_str(", ");
            }
            text.push_str(&words.join(" "));
            tokens.extend(words.iter().cloned());
        }
        text.push('.');
        if tokens.len() > cfg.max_tokens {
            continue;
        }
        if let Some(first) = text.get_mut(0..1) {
            first.make_ascii_uppercase();
        }
        return Ok(Episode {
            world,
            graph,
            seed,
            path,
            start_heading,
            clauses,
            stop_landmark,
            text,
            tokens,
        });
    }
    Err(Error::EpisodeSampling(MAX_ATTEMPTS))
}
