//! Semantic spatial map: per-column semantic features are pooled, projected
//! onto the ground plane and folded into a world-frame latent grid by a
//! sparsity-aware convolutional GRU.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::config::Config;
use crate::gridsim::{Panorama, World, NUM_CLASSES};
use crate::nn::Conv;
use crate::tensor::{Init, ParamId, ParamStore, Tape, Tensor, Var};
use crate::{Error, Real, Result};

/// Distance in meters a back-projected point is pushed past the surface
/// along its viewing ray, so it lands inside the surface cell rather than on
/// its boundary.
pub const PROJECTION_INSET: f64 = 1e-6;

/// Square world-frame grid shared by the map and the belief.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MapGeometry {
    pub size: usize,
    pub cell: f64,
    /// World coordinate of the corner of cell `(0, 0)`.
    pub origin: (f64, f64),
}

impl MapGeometry {
    /// Places `(x, y)` at the center of cell `(size/2, size/2)`.
    pub fn centered(x: f64, y: f64, size: usize, cell: f64) -> Self {
        let half = (size / 2) as f64 + 0.5;
        Self {
            size,
            cell,
            origin: (x - half * cell, y - half * cell),
        }
    }

    pub fn cells(&self) -> usize {
        self.size * self.size
    }

    pub fn cell_of(&self, x: f64, y: f64) -> Option<(usize, usize)> {
        let cx = libm::floor((x - self.origin.0) / self.cell);
        let cy = libm::floor((y - self.origin.1) / self.cell);
        let n = self.size as f64;
        (cx >= 0.0 && cy >= 0.0 && cx < n && cy < n).then_some((cx as usize, cy as usize))
    }

    pub fn flat(&self, x: f64, y: f64) -> Option<usize> {
        self.cell_of(x, y).map(|(cx, cy)| cy * self.size + cx)
    }

    pub fn center(&self, cx: usize, cy: usize) -> (f64, f64) {
        (
            self.origin.0 + (cx as f64 + 0.5) * self.cell,
            self.origin.1 + (cy as f64 + 0.5) * self.cell,
        )
    }

    pub fn contains_world(&self, world: &World) -> bool {
        let far = world.size as f64 * world.cell - 1e-9;
        self.cell_of(0.0, 0.0).is_some() && self.cell_of(far, far).is_some()
    }
}

/// Mean of the nonzero entries of each window of `factor` values; 0 when a
/// window has none.
pub fn pool_depth(depth: &[f64], factor: usize) -> Vec<f64> {
    depth
        .chunks(factor)
        .map(|w| {
            let (s, n) = w.iter().filter(|d| **d > 0.0).fold((0.0, 0usize), |(s, n), d| (s + d, n + 1));
            if n == 0 {
                0.0
            } else {
                s / n as f64
            }
        })
        .collect()
}

/// Geometry of one panorama after pooling.
#[derive(Clone, Debug)]
pub struct PooledColumns {
    /// Row-stochastic (or zero) pooling matrix `[pooled, scans * columns]`.
    pub pool: Vec<f64>,
    /// Ground-plane endpoint of each pooled column, `None` when depth is missing.
    pub points: Vec<Option<(f64, f64)>>,
}

/// Pools every scan by `factor` and back-projects the pooled columns through
/// the pinhole model. Features and image coordinates are averaged over the
/// columns with valid depth only.
pub fn pool_columns(pano: &Panorama, factor: usize) -> Result<PooledColumns> {
    if factor == 0 || pano.columns % factor != 0 {
        return Err(Error::Invalid(format!("pool factor {factor} does not divide {}", pano.columns)));
    }
    let offsets = pano.offsets();
    let per_scan = pano.columns / factor;
    let total = pano.scans.len() * pano.columns;
    let rows = pano.scans.len() * per_scan;
    let mut pool = vec![0.0; rows * total];
    let mut points = Vec::with_capacity(rows);
    for (si, scan) in pano.scans.iter().enumerate() {
        let depth = pool_depth(&scan.depth, factor);
        let (c, s) = (libm::cos(scan.camera.theta), libm::sin(scan.camera.theta));
        for (pi, &d) in depth.iter().enumerate() {
            let row = si * per_scan + pi;
            let cols: Vec<usize> = (pi * factor..(pi + 1) * factor).filter(|&j| scan.depth[j] > 0.0).collect();
            if cols.is_empty() {
                points.push(None);
                continue;
            }
            let u = cols.iter().map(|&j| offsets[j]).sum::<f64>() / cols.len() as f64;
            for &j in &cols {
                pool[row * total + si * pano.columns + j] = 1.0 / cols.len() as f64;
            }
            // forward + u * right, right = (sin, -cos)
            let (dx, dy) = (c + u * s, s - u * c);
            let reach = d + PROJECTION_INSET / libm::sqrt(1.0 + u * u);
            points.push(Some((scan.camera.x + reach * dx, scan.camera.y + reach * dy)));
        }
    }
    Ok(PooledColumns { pool, points })
}

/// Features scattered onto the map grid for one observation.
#[derive(Clone, Debug)]
pub struct Projected {
    /// `[C, Y, X]`, zero off the hit mask.
    pub features: Var,
    pub hit: Vec<bool>,
    /// Columns whose endpoint fell outside the map.
    pub dropped: usize,
}

/// Map state on a tape.
#[derive(Clone, Debug)]
pub struct SemanticMap {
    /// `[C_m, Y, X]`, exactly zero wherever `observed` is false.
    pub features: Var,
    pub observed: Vec<bool>,
    pub geometry: MapGeometry,
}

impl SemanticMap {
    pub fn blank<S: Real>(tape: &mut Tape<S>, channels: usize, geometry: MapGeometry) -> Result<Self> {
        let n = geometry.cells();
        let features = tape.constant(&[channels, geometry.size, geometry.size], vec![S::zero(); channels * n])?;
        Ok(Self {
            features,
            observed: vec![false; n],
            geometry,
        })
    }

    pub fn observed_area(&self) -> f64 {
        self.observed.iter().filter(|o| **o).count() as f64 * self.geometry.cell * self.geometry.cell
    }

    /// Observed mask as a `[1, Y, X]` 0/1 constant.
    pub fn mask_var<S: Real>(&self, tape: &mut Tape<S>) -> Result<Var> {
        let n = self.geometry.size;
        let m = self.observed.iter().map(|&o| if o { S::one() } else { S::zero() }).collect();
        tape.constant(&[1, n, n], m)
    }
}

/// Inverse count of valid cells in each 3x3 neighborhood, and a 0/1 validity
/// map of where that count is positive.
fn neighborhood_norm<S: Real>(valid: &[bool], n: usize) -> (Vec<S>, Vec<S>) {
    let mut inv = vec![S::zero(); n * n];
    let mut any = vec![S::zero(); n * n];
    for y in 0..n {
        for x in 0..n {
            let mut c = 0;
            for yy in y.saturating_sub(1)..(y + 2).min(n) {
                for xx in x.saturating_sub(1)..(x + 2).min(n) {
                    c += valid[yy * n + xx] as usize;
                }
            }
            if c > 0 {
                inv[y * n + x] = S::from_f64(1.0 / c as f64);
                any[y * n + x] = S::one();
            }
        }
    }
    (inv, any)
}

/// 3x3 convolution that sums only over valid inputs, divides by the number
/// of valid inputs in the window and adds the bias only where that number is
/// positive. Inputs must already be zero at invalid cells.
pub fn sparse_conv<S: Real>(tape: &mut Tape<S>, store: &ParamStore<S>, conv: &Conv, x: Var, valid: &[bool]) -> Result<Var> {
    let n = tape.shape(x)[1];
    let (inv, any) = neighborhood_norm::<S>(valid, n);
    let w = tape.param(store, conv.w);
    let y = tape.conv2d(x, w, 1, 1)?;
    let inv = tape.constant(&[n, n], inv)?;
    let y = tape.mul_broadcast(y, inv)?;
    let b = tape.param(store, conv.b);
    let y = tape.add_channel_bias(y, b)?;
    let any = tape.constant(&[n, n], any)?;
    tape.mul_broadcast(y, any)
}

/// Mapper parameters.
#[derive(Clone, Debug)]
pub struct Mapper {
    pub embed: ParamId,
    pub feat_channels: usize,
    pub map_channels: usize,
    pub pool_factor: usize,
    /// Input path producing update, reset and candidate pre-activations.
    pub gx: Conv,
    /// State path for the update and reset gates.
    pub gh: Conv,
    /// State path for the candidate, applied to the reset-gated state.
    pub gn: Conv,
}

impl Mapper {
    pub fn new<S: Real, R: Rng>(store: &mut ParamStore<S>, cfg: &Config, rng: &mut R) -> Result<Self> {
        let (c, m) = (cfg.feat_channels, cfg.map_channels);
        Ok(Self {
            embed: store.add("mapper.embed", &[NUM_CLASSES, c], Init::FanIn(1), rng)?,
            feat_channels: c,
            map_channels: m,
            pool_factor: cfg.pool_factor,
            gx: Conv::new(store, "mapper.gru.x", c, 3 * m, 3, 1, 1, rng)?,
            gh: Conv::new(store, "mapper.gru.h", m, 2 * m, 3, 1, 1, rng)?,
            gn: Conv::new(store, "mapper.gru.n", m, m, 3, 1, 1, rng)?,
        })
    }

    /// Embeds semantic class ids: one row of `C` features per column, i.e.
    /// the one-hot encoding times the learned embedding matrix.
    pub fn extract_features<S: Real>(&self, tape: &mut Tape<S>, store: &ParamStore<S>, classes: &[u8]) -> Result<Var> {
        if let Some(&bad) = classes.iter().find(|&&c| c as usize >= NUM_CLASSES) {
            return Err(Error::UnknownClass(bad));
        }
        let ids: Vec<usize> = classes.iter().map(|&c| c as usize).collect();
        let table = tape.param(store, self.embed);
        tape.embedding(table, &ids)
    }

    /// Features of every scan column, pooled and scattered onto the grid with
    /// per-channel max on collisions.
    pub fn project<S: Real>(&self, tape: &mut Tape<S>, store: &ParamStore<S>, pano: &Panorama, geometry: &MapGeometry) -> Result<Projected> {
        let classes: Vec<u8> = pano.scans.iter().flat_map(|s| s.class.iter().copied()).collect();
        let feats = self.extract_features(tape, store, &classes)?;
        let pooled = pool_columns(pano, self.pool_factor)?;
        let rows = pooled.points.len();
        let pool = tape.constant(&[rows, classes.len()], pooled.pool.iter().map(|&v| S::from_f64(v)).collect())?;
        let rows_var = tape.matmul(pool, feats)?;
        let mut dropped = 0;
        let targets: Vec<Option<usize>> = pooled
            .points
            .iter()
            .map(|p| {
                p.and_then(|(x, y)| {
                    let t = geometry.flat(x, y);
                    dropped += t.is_none() as usize;
                    t
                })
            })
            .collect();
        let (flat, hit) = tape.scatter_max(rows_var, &targets, geometry.cells())?;
        let features = tape.reshape(flat, &[self.feat_channels, geometry.size, geometry.size])?;
        Ok(Projected { features, hit, dropped })
    }

    /// One GRU step restricted to `hit ∪ observed`. An observation with no
    /// hits returns the map unchanged. `dropout`, when given, scales each
    /// state channel on the recurrent paths.
    pub fn update<S: Real>(
        &self,
        tape: &mut Tape<S>,
        store: &ParamStore<S>,
        map: &SemanticMap,
        obs: &Projected,
        dropout: Option<&[S]>,
    ) -> Result<SemanticMap> {
        let n = map.geometry.size;
        if obs.hit.len() != map.observed.len() || tape.shape(obs.features)[1..] != [n, n] {
            return Err(Error::Geometry(format!(
                "observation {:?} vs map {n}x{n}",
                tape.shape(obs.features)
            )));
        }
        if !obs.hit.iter().any(|&h| h) {
            return Ok(map.clone());
        }
        let m = self.map_channels;
        let h = match dropout {
            Some(scale) => scale_channels(tape, map.features, scale)?,
            None => map.features,
        };
        let ax = sparse_conv(tape, store, &self.gx, obs.features, &obs.hit)?;
        let ah = sparse_conv(tape, store, &self.gh, h, &map.observed)?;
        let zx = tape.slice(ax, 0, m)?;
        let rx = tape.slice(ax, m, m)?;
        let nx = tape.slice(ax, 2 * m, m)?;
        let zh = tape.slice(ah, 0, m)?;
        let rh = tape.slice(ah, m, m)?;
        let z = tape.add(zx, zh)?;
        let z = tape.sigmoid(z);
        let r = tape.add(rx, rh)?;
        let r = tape.sigmoid(r);
        let rh_state = tape.mul(r, h)?;
        let nh = sparse_conv(tape, store, &self.gn, rh_state, &map.observed)?;
        let cand = tape.add(nx, nh)?;
        let cand = tape.tanh(cand);
        let diff = tape.sub(cand, map.features)?;
        let step = tape.mul(z, diff)?;
        let observed: Vec<bool> = map.observed.iter().zip(&obs.hit).map(|(&a, &b)| a || b).collect();
        let region = tape.constant(&[n, n], observed.iter().map(|&o| if o { S::one() } else { S::zero() }).collect())?;
        let step = tape.mul_broadcast(step, region)?;
        let features = tape.add(map.features, step)?;
        Ok(SemanticMap {
            features,
            observed,
            geometry: map.geometry,
        })
    }

    /// Projects a panorama and folds it into the map.
    pub fn observe<S: Real>(
        &self,
        tape: &mut Tape<S>,
        store: &ParamStore<S>,
        map: &SemanticMap,
        pano: &Panorama,
        dropout: Option<&[S]>,
    ) -> Result<SemanticMap> {
        let obs = self.project(tape, store, pano, &map.geometry)?;
        self.update(tape, store, map, &obs, dropout)
    }

    /// Per-episode channel dropout scales (`0` or `1/(1-p)`).
    pub fn dropout_mask<S: Real, R: Rng>(&self, p: f64, rng: &mut R) -> Vec<S> {
        (0..self.map_channels)
            .map(|_| if rng.gen_bool(p) { S::zero() } else { S::from_f64(1.0 / (1.0 - p)) })
            .collect()
    }
}

/// Multiplies channel `c` of `x[C, Y, X]` by `scale[c]`.
fn scale_channels<S: Real>(tape: &mut Tape<S>, x: Var, scale: &[S]) -> Result<Var> {
    let s = tape.shape(x).to_vec();
    let c = s[0];
    let flat = tape.reshape(x, &[1, c, s[1] * s[2]])?;
    let mut diag = vec![S::zero(); c * c];
    for (i, &v) in scale.iter().enumerate() {
        diag[i * c + i] = v;
    }
    let d = tape.constant(&[c, c], diag)?;
    let y = tape.channel_mix(flat, d)?;
    tape.reshape(y, &s)
}

/// Detached copy of a map's values.
pub fn snapshot<S: Real>(tape: &Tape<S>, map: &SemanticMap) -> (Tensor<S>, Vec<bool>) {
    (tape.value(map.features), map.observed.clone())
}
