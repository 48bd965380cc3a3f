use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

use proptest::prelude::*;
use rand::Rng;

use super::*;
use crate::langmodel::LanguageModel;
use crate::rng::seeded;
use crate::tensor::gradcheck::{check_inputs, check_params, COMPOSITE_STEP};
use crate::tensor::{Tensor, LOG_EPS};

fn toy_config(headings: usize, upscale: usize) -> Config {
    let mut c = Config::default();
    c.hidden = 4;
    c.embed_dim = 6;
    c.t_max = 3;
    c.map_size = 8;
    c.map_channels = 3;
    c.motion_hidden = 4;
    c.lingunet_hidden = 4;
    c.headings = headings;
    c.kernel_size = 3;
    c.kernel_upscale = upscale;
    c
}

struct Toy {
    store: ParamStore<f64>,
    lang: LanguageModel,
    filter: BayesFilter,
    cfg: Config,
}

fn toy(seed: u64, headings: usize, upscale: usize) -> Toy {
    let cfg = toy_config(headings, upscale);
    let mut store = ParamStore::new();
    let mut rng = seeded(seed);
    let lang = LanguageModel::new(&mut store, &cfg, 10, &mut rng).unwrap();
    let filter = BayesFilter::new(&mut store, &cfg, &mut rng).unwrap();
    let ids: Vec<_> = store.ids().collect();
    for id in ids {
        if store.name(id).ends_with(".b") {
            store.tensor_mut(id).data_mut().iter_mut().for_each(|v| *v = rng.gen_range(-0.3..0.3));
        }
    }
    Toy { store, lang, filter, cfg }
}

fn random_map(tape: &mut Tape<f64>, channels: usize, n: usize, seed: u64) -> SemanticMap {
    let mut rng = seeded(seed);
    let geometry = MapGeometry::centered(2.25, 2.25, n, 0.5);
    let observed: Vec<bool> = (0..n * n).map(|_| rng.gen_bool(0.7)).collect();
    let f: Vec<f64> = (0..channels * n * n)
        .map(|i| if observed[i % (n * n)] { rng.gen_range(-1.0..1.0) } else { 0.0 })
        .collect();
    SemanticMap {
        features: tape.constant(&[channels, n, n], f).unwrap(),
        observed,
        geometry,
    }
}

/// Explicit sum over prior states: `b̄(s') = Σ_s p(s' | s) b(s)`, then the
/// surviving mass is renormalized.
fn oracle_predict(b: &[f64], g: &[f64], th: usize, n: usize, k: usize) -> Vec<f64> {
    let r = (k / 2) as i64;
    let plane = n * n;
    let mut out = vec![0.0; th * plane];
    for t2 in 0..th {
        for y2 in 0..n as i64 {
            for x2 in 0..n as i64 {
                let mut s = 0.0;
                for t1 in 0..th {
                    for y1 in 0..n as i64 {
                        for x1 in 0..n as i64 {
                            let (dy, dx) = (y2 - y1, x2 - x1);
                            if dy.abs() > r || dx.abs() > r {
                                continue;
                            }
                            let ch = ((t1 * th + t2) * k + (dy + r) as usize) * k + (dx + r) as usize;
                            let src = (y1 * n as i64 + x1) as usize;
                            s += b[t1 * plane + src] * g[ch * plane + src];
                        }
                    }
                }
                out[t2 * plane + (y2 * n as i64 + x2) as usize] = s;
            }
        }
    }
    let z: f64 = out.iter().sum::<f64>() + LOG_EPS;
    out.iter().map(|v| v / z).collect()
}

fn oracle_observe(b: &[f64], l: &[f64]) -> Vec<f64> {
    let joint: Vec<f64> = b.iter().zip(l).map(|(a, c)| a * c).collect();
    let z: f64 = joint.iter().sum::<f64>() + LOG_EPS;
    joint.iter().map(|v| v / z).collect()
}

fn random_kernels<R: Rng>(rng: &mut R, th: usize, n: usize, k: usize) -> Vec<f64> {
    let plane = n * n;
    let mut g: Vec<f64> = (0..th * th * k * k * plane).map(|_| rng.gen_range(0.0..1.0)).collect();
    for t1 in 0..th {
        for c in 0..plane {
            let idx: Vec<usize> = (0..th * k * k).map(|j| (t1 * th * k * k + j) * plane + c).collect();
            let s: f64 = idx.iter().map(|&i| g[i]).sum();
            idx.iter().for_each(|&i| g[i] /= s);
        }
    }
    g
}

fn random_belief<R: Rng>(rng: &mut R, len: usize) -> Vec<f64> {
    let b: Vec<f64> = (0..len).map(|_| if rng.gen_bool(0.3) { 0.0 } else { rng.gen_range(0.0..1.0) }).collect();
    let s: f64 = b.iter().sum();
    b.iter().map(|v| v / s).collect()
}

#[test]
fn init_belief_is_a_delta_at_the_start_bin() {
    let g = MapGeometry::centered(4.25, 4.25, 16, 0.5);
    let b = init_belief::<f64>(&Pose::new(4.25, 4.25, 0.0), &g, 4).unwrap();
    assert_eq!(b.iter().sum::<f64>(), 1.0);
    assert_eq!(b.iter().filter(|v| **v != 0.0).count(), 1);
    assert_eq!(b[8 * 16 + 8], 1.0);
    let other = init_belief::<f64>(&Pose::new(5.25, 4.25, PI / 2.0), &g, 4).unwrap();
    let argmax = |v: &[f64]| v.iter().position(|x| *x == 1.0).unwrap();
    assert_ne!(argmax(&b), argmax(&other));
    assert!(init_belief::<f64>(&Pose::new(-1.0, 4.0, 0.0), &g, 4).is_err());
}

#[test]
fn init_belief_bins_match_integer_oracle() {
    let mut rng = seeded(1);
    let g = MapGeometry::centered(6.25, 6.25, 24, 0.5);
    for _ in 0..50 {
        let (x, y) = (rng.gen_range(0.3..11.7), rng.gen_range(0.3..11.7));
        let deg = rng.gen_range(-180.0..180.0f64);
        let b = init_belief::<f64>(&Pose::new(x, y, deg.to_radians()), &g, 4).unwrap();
        // cells counted in half meters from the map corner, headings in
        // quarter turns starting at -45 degrees
        let cx = ((x - g.origin.0) * 2.0) as usize;
        let cy = ((y - g.origin.1) * 2.0) as usize;
        let th = (((deg + 45.0 + 360.0) as i64 % 360) / 90) as usize;
        assert_eq!(b[(th * 24 + cy) * 24 + cx], 1.0, "pose ({x}, {y}, {deg})");
    }
}

#[test]
fn heading_bins_are_centered() {
    assert_eq!(heading_bin(0.0, 4), 0);
    assert_eq!(heading_bin(PI / 4.0 - 1e-9, 4), 0);
    assert_eq!(heading_bin(PI / 4.0 + 1e-9, 4), 1);
    assert_eq!(heading_bin(-PI / 4.0 + 1e-9, 4), 0);
    assert_eq!(heading_bin(PI, 4), 2);
    assert_eq!(heading_bin(-PI / 2.0, 4), 3);
    assert_eq!(heading_bin(2.7, 1), 0);
    for b in 0..8 {
        assert_eq!(heading_bin(heading_center(b, 8), 8), b);
    }
}

#[test]
fn upscale_matrix_geometry() {
    let id = upscale_matrix(3, 1);
    for i in 0..9 {
        for j in 0..9 {
            assert_eq!(id[i * 9 + j], (i == j) as u8 as f64);
        }
    }
    // K = 7, U = 2 at 0.5 m cells reaches 7 cells = 3.5 m
    let (k, u) = (7, 2);
    let kf = u * (k + 1) - 1;
    assert_eq!(kf, 15);
    let m = upscale_matrix(k, u);
    let corner_coarse = k * k - 1;
    let corner_fine = kf * kf - 1;
    assert!(m[corner_fine * k * k + corner_coarse] > 0.0);
    assert_eq!((kf / 2) as f64 * 0.5, 3.5);
    // center of the fine kernel reproduces the center coarse tap
    let cf = (kf / 2) * kf + kf / 2;
    let cc = (k / 2) * k + k / 2;
    assert_eq!(m[cf * k * k + cc], 1.0);
}

proptest! {
    // every coarse tap spreads exactly u² of mass, so a normalized coarse
    // kernel stays normalized after dividing by u²
    #[test]
    fn upscale_columns_sum_to_u_squared(k in (0usize..5).prop_map(|h| 2 * h + 1), u in 1usize..5) {
        let m = upscale_matrix(k, u);
        let kf = u * (k + 1) - 1;
        for c in 0..k * k {
            let s: f64 = (0..kf * kf).map(|f| m[f * k * k + c]).sum();
            prop_assert!((s - (u * u) as f64).abs() < 1e-12);
        }
    }
}

#[test]
fn kernels_sum_to_one() {
    for (headings, upscale) in [(4, 1), (4, 2), (1, 1), (2, 2)] {
        let t = toy(headings as u64 * 10 + upscale as u64, headings, upscale);
        let mut tape = Tape::new();
        let map = random_map(&mut tape, t.cfg.map_channels, 8, 3);
        let ctx = t.filter.motion.map_context(&mut tape, &t.store, map.features).unwrap();
        let mut rng = seeded(4);
        let a: Vec<f64> = (0..12).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let a = tape.constant(&[12], a).unwrap();
        let g = t.filter.motion.kernels(&mut tape, &t.store, a, ctx).unwrap();
        let k = t.filter.motion.kernel;
        assert_eq!(tape.shape(g), &[headings * headings * k * k, 8, 8]);
        let kf = t.filter.motion.effective_kernel();
        let fine = upscale_kernels(tape.data(g), headings, k, upscale, 64);
        for (field, side) in [(tape.data(g), k), (&fine[..], kf)] {
            for src in 0..headings {
                for c in 0..64 {
                    let s: f64 = (0..headings * side * side).map(|j| field[(src * headings * side * side + j) * 64 + c]).sum();
                    assert!((s - 1.0).abs() <= 1e-6, "sum {s}");
                }
            }
        }
    }
}

#[test]
fn constant_inputs_give_uniform_interior_kernels() {
    let t = toy(5, 2, 1);
    let mut tape = Tape::new();
    let n = 16;
    let map = tape.constant(&[3, n, n], vec![0.4; 3 * n * n]).unwrap();
    let ctx = t.filter.motion.map_context(&mut tape, &t.store, map).unwrap();
    let a = tape.constant(&[12], vec![0.3; 12]).unwrap();
    let g = t.filter.motion.kernels(&mut tape, &t.store, a, ctx).unwrap();
    let gv = tape.data(g);
    let plane = n * n;
    for ch in 0..tape.shape(g)[0] {
        let reference = gv[ch * plane + 8 * n + 8];
        for y in 3..n - 3 {
            for x in 3..n - 3 {
                assert!((gv[ch * plane + y * n + x] - reference).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn identity_and_translation_kernels() {
    let (th, n, k) = (2, 5, 3);
    let plane = n * n;
    let mut rng = seeded(6);
    let b = random_belief(&mut rng, th * plane);
    let mut ident = vec![0.0; th * th * k * k * plane];
    let mut shift = ident.clone();
    for t1 in 0..th {
        for c in 0..plane {
            ident[((t1 * th + t1) * k * k + 4) * plane + c] = 1.0;
            shift[((t1 * th + t1) * k * k + 5) * plane + c] = 1.0;
        }
    }
    let mut tape = Tape::new();
    let bv = tape.constant(&[th, n, n], b.clone()).unwrap();
    let gi = tape.constant(&[th * th * k * k, n, n], ident).unwrap();
    let out = predict(&mut tape, bv, gi, k, 1).unwrap();
    for (a, e) in tape.data(out).iter().zip(&b) {
        assert!((a - e).abs() <= 2.0 * LOG_EPS * e, "{a} vs {e}");
    }
    let mut delta = vec![0.0; th * plane];
    delta[plane + 2 * n + 1] = 1.0;
    let dv = tape.constant(&[th, n, n], delta).unwrap();
    let gs = tape.constant(&[th * th * k * k, n, n], shift).unwrap();
    let out = predict(&mut tape, dv, gs, k, 1).unwrap();
    let v = tape.data(out);
    assert!((v[plane + 2 * n + 2] - 1.0).abs() < 1e-11);
    assert_eq!(v.iter().filter(|x| **x != 0.0).count(), 1);
}

#[test]
fn predict_matches_quadruple_loop() {
    let mut rng = seeded(7);
    for (th, n, k) in [(4, 5, 3), (1, 6, 5), (2, 4, 3)] {
        let plane = n * n;
        let b = random_belief(&mut rng, th * plane);
        let g = random_kernels(&mut rng, th, n, k);
        let mut tape = Tape::new();
        let bv = tape.constant(&[th, n, n], b.clone()).unwrap();
        let gv = tape.constant(&[th * th * k * k, n, n], g.clone()).unwrap();
        let out = predict(&mut tape, bv, gv, k, 1).unwrap();
        let want = oracle_predict(&b, &g, th, n, k);
        let err = tape.data(out).iter().zip(&want).map(|(a, e)| (a - e).abs()).fold(0.0, f64::max);
        assert!(err <= 1e-6, "max abs diff {err}");
    }
}

#[test]
fn observe_examples() {
    let mut tape = Tape::new();
    let mut rng = seeded(8);
    let b = random_belief(&mut rng, 2 * 4 * 4);
    let bv = tape.constant(&[2, 4, 4], b.clone()).unwrap();
    let l = tape.constant(&[2, 4, 4], vec![0.37; 32]).unwrap();
    let out = observe(&mut tape, bv, l).unwrap();
    for (a, e) in tape.data(out).iter().zip(&b) {
        assert!((a - e).abs() < 1e-12);
    }
    let two = tape.constant(&[1, 1, 2], vec![0.5, 0.5]).unwrap();
    let l = tape.constant(&[1, 1, 2], vec![0.9, 0.1]).unwrap();
    let out = observe(&mut tape, two, l).unwrap();
    assert!((tape.data(out)[0] - 0.9).abs() < 1e-11 && (tape.data(out)[1] - 0.1).abs() < 1e-11);
    for _ in 0..50 {
        let b = random_belief(&mut rng, 32);
        let l: Vec<f64> = (0..32).map(|_| rng.gen_range(0.0..1.0)).collect();
        let bv = tape.constant(&[2, 4, 4], b.clone()).unwrap();
        let lv = tape.constant(&[2, 4, 4], l.clone()).unwrap();
        let out = observe(&mut tape, bv, lv).unwrap();
        let want = oracle_observe(&b, &l);
        for (a, e) in tape.data(out).iter().zip(&want) {
            assert!((a - e).abs() <= 1e-8);
        }
        assert!((tape.data(out).iter().sum::<f64>() - 1.0).abs() <= 1e-6);
    }
}

#[test]
fn annihilated_mass_is_reported() {
    let mut tape = Tape::new();
    let b = tape.constant(&[1, 1, 2], vec![1.0, 0.0]).unwrap();
    let l = tape.constant(&[1, 1, 2], vec![1e-12, 1.0]).unwrap();
    assert!(matches!(observe(&mut tape, b, l), Err(Error::DegenerateUpdate(_))));
}

#[test]
fn likelihood_outputs_are_probabilities() {
    let mut count = 0;
    for seed in 0..40 {
        let t = toy(seed, 4, 1);
        let mut tape = Tape::new();
        let map = random_map(&mut tape, 3, 8, seed);
        let mut rng = seeded(seed + 1000);
        let o: Vec<f64> = (0..12).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let o = tape.constant(&[12], o).unwrap();
        let x = BayesFilter::likelihood_input(&mut tape, &map).unwrap();
        let logits = t.filter.likelihood.forward(&mut tape, &t.store, x, o).unwrap();
        let l = tape.sigmoid(logits);
        assert_eq!(tape.shape(l), &[4, 8, 8]);
        for v in tape.data(l) {
            assert!((0.0..=1.0).contains(v));
            count += 1;
        }
    }
    assert!(count >= 10_000);
}

#[test]
fn likelihood_rejects_indivisible_maps() {
    let t = toy(9, 4, 1);
    let mut tape = Tape::new();
    let x = tape.constant(&[4, 12, 12], vec![0.0; 4 * 144]).unwrap();
    let o = tape.constant(&[12], vec![0.0; 12]).unwrap();
    assert!(matches!(t.filter.likelihood.forward(&mut tape, &t.store, x, o), Err(Error::Geometry(_))));
}

#[test]
fn likelihood_gradient_wrt_text_matches_finite_differences() {
    let t = toy(10, 4, 1);
    let mut rng = seeded(11);
    let mut tape0 = Tape::new();
    let map = random_map(&mut tape0, 3, 8, 12);
    let xv = BayesFilter::likelihood_input(&mut tape0, &map).unwrap();
    let x = tape0.value(xv);
    let o = Tensor::new(&[12], (0..12).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
    let w: Vec<f64> = (0..4 * 64).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let report = check_inputs(&[o, x], 1e-6, |tape, v| {
        let logits = t.filter.likelihood.forward(tape, &t.store, v[1], v[0])?;
        let l = tape.sigmoid(logits);
        let wv = tape.constant(&[4, 8, 8], w.clone())?;
        let p = tape.mul(l, wv)?;
        Ok(tape.sum(p))
    })
    .unwrap();
    assert!(report.max_rel_err <= 1e-4, "{report:?}");
}

#[test]
fn zero_steps_return_the_prior() {
    let t = toy(13, 4, 1);
    let mut tape = Tape::new();
    let map = random_map(&mut tape, 3, 8, 13);
    let start = Pose::new(2.25, 2.25, 0.0);
    let run = t.filter.run(&mut tape, &t.store, &t.lang, &[2, 3], &map, &start, 0).unwrap();
    assert!(run.beliefs.is_empty());
    let b0 = init_belief::<f64>(&start, &map.geometry, 4).unwrap();
    assert_eq!(tape.data(run.last()), &b0[..]);
}

/// Two filter steps equal the hand-composed oracle recursion fed with the
/// same kernels and likelihoods.
#[test]
fn run_matches_composed_oracle() {
    for (seed, headings, upscale) in [(14, 4, 1), (15, 4, 2), (16, 1, 1)] {
        let t = toy(seed, headings, upscale);
        let mut tape = Tape::new();
        let map = random_map(&mut tape, 3, 8, seed);
        let start = Pose::new(2.3, 2.1, 1.0);
        let run = t.filter.run(&mut tape, &t.store, &t.lang, &[4, 2, 7], &map, &start, 2).unwrap();
        let k = t.filter.motion.effective_kernel();
        let mut b = init_belief::<f64>(&start, &map.geometry, headings).unwrap();
        for s in 0..2 {
            let fine = upscale_kernels(tape.data(run.kernels[s]), headings, t.filter.motion.kernel, upscale, 64);
            let bar = oracle_predict(&b, &fine, headings, 8, k);
            b = oracle_observe(&bar, tape.data(run.likelihoods[s]));
            let got = tape.data(run.beliefs[s]);
            let err = got.iter().zip(&b).map(|(a, e)| (a - e).abs()).fold(0.0, f64::max);
            assert!(err <= 1e-6, "step {s}: {err}");
            assert!((got.iter().sum::<f64>() - 1.0).abs() <= 1e-5);
        }
    }
}

#[test]
fn runs_are_byte_identical() {
    let t = toy(17, 4, 2);
    let start = Pose::new(2.3, 2.1, 1.0);
    let mut outs = Vec::new();
    for _ in 0..2 {
        let mut tape = Tape::new();
        let map = random_map(&mut tape, 3, 8, 17);
        let run = t.filter.run(&mut tape, &t.store, &t.lang, &[4, 2, 7], &map, &start, 3).unwrap();
        outs.push(run.beliefs.iter().flat_map(|b| tape.data(*b).to_vec()).collect::<Vec<_>>());
    }
    assert_eq!(outs[0], outs[1]);
}

#[test]
fn filter_gradients_match_finite_differences() {
    let t = toy(18, 2, 2);
    let start = Pose::new(2.3, 2.1, 1.0);
    let mut rng = seeded(19);
    let target: Vec<f64> = random_belief(&mut rng, 2 * 64);
    let report = check_params(&t.store, COMPOSITE_STEP, 4, |tape, store| {
        let map = random_map(tape, 3, 8, 18);
        let run = t.filter.run(tape, store, &t.lang, &[4, 2, 7, 1], &map, &start, 2)?;
        let a = tape.nll_histogram(run.beliefs[0], &target)?;
        let b = tape.nll_histogram(run.beliefs[1], &target)?;
        tape.add(a, b)
    })
    .unwrap();
    assert!(report.max_rel_err <= 1e-4, "{report:?}");
}

#[test]
fn predict_goal_examples() {
    let g = MapGeometry::centered(2.25, 2.25, 8, 0.5);
    let mut b = vec![0.0; 2 * 64];
    b[64 + 3 * 8 + 5] = 1.0;
    let e = predict_goal(&b, 2, &g);
    assert_eq!((e.heading, e.cell), (1, (5, 3)));
    assert_eq!((e.x, e.y), g.center(5, 3));
    assert!((e.theta - PI).abs() < 1e-12);
    let mut tie = vec![0.0; 2 * 64];
    tie[70] = 0.5;
    tie[9] = 0.5;
    assert_eq!(predict_goal(&tie, 2, &g).cell, (1, 1));
    let mut rng = seeded(20);
    for _ in 0..100 {
        let v: Vec<f64> = (0..128).map(|_| rng.gen_range(0..5) as f64).collect();
        let m = v.iter().cloned().fold(f64::MIN, f64::max);
        let first = v.iter().position(|x| *x == m).unwrap();
        let e = predict_goal(&v, 2, &g);
        assert_eq!(e.heading * 64 + e.cell.1 * 8 + e.cell.0, first);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn predict_conserves_mass(seed in 0u64..10_000, th in 1usize..4, n in 3usize..7) {
        let mut rng = seeded(seed);
        let k = 3;
        let b = random_belief(&mut rng, th * n * n);
        let g = random_kernels(&mut rng, th, n, k);
        let mut tape = Tape::new();
        let bv = tape.constant(&[th, n, n], b).unwrap();
        let gv = tape.constant(&[th * th * k * k, n, n], g).unwrap();
        let out = predict(&mut tape, bv, gv, k, 1).unwrap();
        let s: f64 = tape.data(out).iter().sum();
        prop_assert!((s - 1.0).abs() <= 1e-5);
        prop_assert!(tape.data(out).iter().all(|v| *v >= 0.0));
    }

    // dilated scatter plus tent equals the push-forward through the
    // materialized upscaled kernels, including mass clipped at the border
    #[test]
    fn upscaled_predict_matches_materialized_kernels(seed in 0u64..10_000, th in 1usize..4, n in 3usize..9, u in 2usize..4) {
        let mut rng = seeded(seed);
        let k = 3;
        let b = random_belief(&mut rng, th * n * n);
        let g = random_kernels(&mut rng, th, n, k);
        let fine = upscale_kernels(&g, th, k, u, n * n);
        let want = oracle_predict(&b, &fine, th, n, u * (k + 1) - 1);
        let mut tape = Tape::new();
        let bv = tape.constant(&[th, n, n], b).unwrap();
        let gv = tape.constant(&[th * th * k * k, n, n], g).unwrap();
        let out = predict(&mut tape, bv, gv, k, u).unwrap();
        let err = tape.data(out).iter().zip(&want).map(|(a, e)| (a - e).abs()).fold(0.0, f64::max);
        prop_assert!(err <= 1e-12, "{err}");
    }
}
