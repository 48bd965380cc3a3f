use alloc::sync::Arc;

use rand::Rng;

use super::*;
use crate::gridsim::{generate_world, grammar_words, sample_episode, NavGraph};
use crate::rng::seeded;
use crate::tensor::gradcheck::check_params;

fn toy_config() -> Config {
    let mut c = Config::default();
    c.hidden = 4;
    c.embed_dim = 6;
    c.t_max = 3;
    c
}

fn toy_model(seed: u64) -> (ParamStore<f64>, LanguageModel) {
    let mut store = ParamStore::new();
    let m = LanguageModel::new(&mut store, &toy_config(), 10, &mut seeded(seed)).unwrap();
    let ids: Vec<_> = store.ids().collect();
    let mut rng = seeded(seed + 1);
    for id in ids {
        if store.name(id).ends_with(".b") {
            store.tensor_mut(id).data_mut().iter_mut().for_each(|v| *v = rng.gen_range(-0.5..0.5));
        }
    }
    (store, m)
}

#[test]
fn tokenize_examples() {
    assert_eq!(words("Turn left."), vec!["turn", "left"]);
    assert_eq!(words("  Go, past the SOFA!stop "), vec!["go", "past", "the", "sofa", "stop"]);
    let v = Vocabulary::build(["turn", "left", "the"]);
    assert_eq!(v.encode("Turn left.").unwrap(), vec![v.id("turn"), v.id("left")]);
    assert_eq!(v.encode("turn giraffe").unwrap()[1], UNK);
    assert_eq!(v.encode(" ,. ").unwrap_err(), Error::EmptyInstruction);
    assert_eq!(v.encode("").unwrap_err(), Error::EmptyInstruction);
}

#[test]
fn vocabulary_round_trips() {
    let v = Vocabulary::build(grammar_words());
    assert_eq!(v.token(PAD), Some("<pad>"));
    assert_eq!(v.token(UNK), Some("<unk>"));
    for id in 0..v.len() {
        assert_eq!(v.id(v.token(id).unwrap()), id);
    }
    let back = Vocabulary::from_lines(&v.to_lines()).unwrap();
    assert_eq!(back, v);
    assert!(Vocabulary::from_lines("<pad>\n<unk>\na\na\n").is_err());
    assert!(Vocabulary::from_lines("a\nb\n").is_err());
}

#[test]
fn episode_text_tokenizes_to_its_words() {
    let cfg = Config::default();
    let vocab = Vocabulary::build(grammar_words());
    let world = Arc::new(generate_world(3, cfg.world_size, cfg.cell_size).unwrap());
    let graph = Arc::new(NavGraph::build(&world));
    for seed in 0..50 {
        let ep = sample_episode(world.clone(), graph.clone(), seed, &cfg).unwrap();
        assert_eq!(words(&ep.text), ep.tokens);
        let ids = vocab.encode(&ep.text).unwrap();
        assert!(ids.iter().all(|&i| i > UNK));
        assert_eq!(vocab.encode(&vocab.decode(&ids)).unwrap(), ids);
    }
}

#[test]
fn single_token_state_equals_summary() {
    let (store, m) = toy_model(1);
    let mut tape = Tape::new();
    let enc = m.encode(&mut tape, &store, &[4]).unwrap();
    assert_eq!(tape.data(enc.states), tape.data(enc.summary));
    let (step, _) = {
        let s = m.initial_state(&mut tape, &store, &enc).unwrap();
        m.decode_step(&mut tape, &store, 1, s, &enc).unwrap()
    };
    assert_eq!(step.attn_obs, vec![1.0]);
    assert_eq!(step.attn_act, vec![1.0]);
}

fn tie_directions(store: &mut ParamStore<f64>, m: &LanguageModel) {
    for (a, b) in [(m.encoder.fwd.wx, m.encoder.bwd.wx), (m.encoder.fwd.wh, m.encoder.bwd.wh), (m.encoder.fwd.b, m.encoder.bwd.b)] {
        let v = store.tensor(a).data().to_vec();
        store.tensor_mut(b).data_mut().copy_from_slice(&v);
    }
}

#[test]
fn reversal_swaps_direction_halves_with_tied_weights() {
    let (mut store, m) = toy_model(2);
    tie_directions(&mut store, &m);
    let seq = [2usize, 7, 3, 3, 9];
    let rev: Vec<usize> = seq.iter().rev().copied().collect();
    let mut tape = Tape::new();
    let a = m.encode(&mut tape, &store, &seq).unwrap();
    let b = m.encode(&mut tape, &store, &rev).unwrap();
    let (sa, sb) = (tape.data(a.states).to_vec(), tape.data(b.states).to_vec());
    let h = m.hidden;
    let l = seq.len();
    for i in 0..l {
        let j = l - 1 - i;
        for k in 0..h {
            assert!((sa[i * 2 * h + k] - sb[j * 2 * h + h + k]).abs() < 1e-12);
            assert!((sa[i * 2 * h + h + k] - sb[j * 2 * h + k]).abs() < 1e-12);
        }
    }
}

#[test]
fn duplicate_tokens_get_equal_attention_under_symmetry() {
    let (mut store, m) = toy_model(3);
    tie_directions(&mut store, &m);
    let h = m.hidden;
    for att in [m.att_obs, m.att_act] {
        let w = store.tensor_mut(att).data_mut();
        for r in 0..h {
            for c in 0..h {
                w[(h + r) * h + c] = w[r * h + c];
            }
        }
    }
    let mut tape = Tape::new();
    let steps = m.run(&mut tape, &store, &[5, 5]).unwrap();
    for s in steps {
        assert!((s.attn_obs[0] - s.attn_obs[1]).abs() < 1e-12);
        assert!((s.attn_act[0] - s.attn_act[1]).abs() < 1e-12);
    }
}

#[test]
fn attention_rows_are_distributions() {
    let mut rng = seeded(4);
    for seed in 0..20 {
        let (store, m) = toy_model(seed);
        let l = rng.gen_range(1..=12);
        let toks: Vec<usize> = (0..l).map(|_| rng.gen_range(0..10)).collect();
        let mut tape = Tape::new();
        let steps = m.run(&mut tape, &store, &toks).unwrap();
        assert_eq!(steps.len(), 3);
        for s in &steps {
            assert_eq!(tape.shape(s.obs), &[m.latent_width()]);
            assert_eq!(tape.shape(s.act), &[m.latent_width()]);
            for row in [&s.attn_obs, &s.attn_act] {
                assert_eq!(row.len(), l);
                assert!(row.iter().all(|a| *a >= 0.0));
                assert!((row.iter().sum::<f64>() - 1.0).abs() <= 1e-6);
            }
        }
    }
}

#[test]
fn decoder_trajectory_depends_only_on_instruction() {
    let (store, m) = toy_model(5);
    let mut t1 = Tape::new();
    let mut t2 = Tape::new();
    let a = m.run(&mut t1, &store, &[3, 4, 5]).unwrap();
    let _ = t2.constant(&[2], vec![1.0, 2.0]).unwrap();
    let b = m.run(&mut t2, &store, &[3, 4, 5]).unwrap();
    for (x, y) in a.iter().zip(&b) {
        assert_eq!(t1.data(x.obs), t2.data(y.obs));
        assert_eq!(t1.data(x.act), t2.data(y.act));
    }
}

#[test]
fn rejects_bad_lengths_and_steps() {
    let (store, m) = toy_model(6);
    let mut tape = Tape::new();
    assert_eq!(m.encode(&mut tape, &store, &[]).unwrap_err(), Error::EmptyInstruction);
    let long = vec![2; m.encoder.max_tokens + 1];
    assert!(matches!(m.encode(&mut tape, &store, &long), Err(Error::InstructionTooLong { len: 41, max: 40 })));
    assert!(m.encode(&mut tape, &store, &vec![2; m.encoder.max_tokens]).is_ok());
    let enc = m.encode(&mut tape, &store, &[2, 3]).unwrap();
    let s = m.initial_state(&mut tape, &store, &enc).unwrap();
    assert!(matches!(m.decode_step(&mut tape, &store, 0, s, &enc), Err(Error::OutOfRange { .. })));
    assert!(matches!(m.decode_step(&mut tape, &store, 4, s, &enc), Err(Error::OutOfRange { .. })));
}

#[test]
fn positional_encoding_values() {
    let pe = positional_encoding(1, 4);
    let want = [libm::sin(1.0), libm::cos(1.0), libm::sin(0.01), libm::cos(0.01)];
    for (a, b) in pe.iter().zip(want) {
        assert!((a - b).abs() < 1e-15);
    }
}

#[test]
fn gradients_match_finite_differences() {
    let (store, m) = toy_model(7);
    let mut rng = seeded(8);
    let w: Vec<f64> = (0..2 * 3 * m.latent_width()).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let report = check_params(&store, 1e-6, 8, |tape, store| {
        let steps = m.run(tape, store, &[2, 6, 3, 9, 4])?;
        let parts: Vec<Var> = steps.iter().flat_map(|s| [s.obs, s.act]).collect();
        let all = tape.concat(&parts)?;
        let wv = tape.constant(&[w.len()], w.clone())?;
        let l = tape.mul(all, wv)?;
        let l = tape.tanh(l);
        Ok(tape.sum(l))
    })
    .unwrap();
    assert!(report.max_rel_err <= 1e-4, "{report:?}");
}
