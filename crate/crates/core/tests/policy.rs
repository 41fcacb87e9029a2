use askroute::diff::{check_gradients, ParamStore, Tape, Tensor};
use askroute::lang::{LangConfig, Vocabulary};
use askroute::policy::{
    action_matrix, attend_visual, bind, decode_step, encode_instruction, view_matrix, DecoderState,
    ModelConfig, ModelParams, Session, CRITIC_PARAMS,
};
use askroute::world::{generate_world, sample_episode, WorldConfig, WorldGraph};
use askroute::Error;

mod common;
use common::{bound_from, tiny_config};

fn tiny_world() -> (WorldGraph, Vocabulary) {
    let cfg = WorldConfig {
        num_viewpoints: 12,
        vis_dim: 4,
        landmark_classes: 6,
        ..WorldConfig::default()
    };
    (generate_world(&cfg, 3).unwrap(), Vocabulary::new(6))
}

#[test]
fn initial_shapes_and_forget_bias() {
    let cfg = ModelConfig::default();
    let p = ModelParams::init(&cfg, 0).unwrap();
    let names: Vec<&str> = cfg.shapes().iter().map(|s| s.0).collect();
    assert_eq!(p.store.names(), names.as_slice());
    for (name, shape) in cfg.shapes() {
        assert_eq!(p.store.get(name).unwrap().shape(), shape.as_slice());
    }
    let h = cfg.hidden;
    for b in ["enc_fw_b", "enc_bw_b", "dec_b"] {
        let d = p.store.get(b).unwrap().data();
        assert!(d[h..2 * h].iter().all(|&x| x == 1.0));
        assert!(d[..h].iter().chain(&d[2 * h..]).all(|&x| x == 0.0));
    }
    let f = cfg.feature_dim();
    assert_eq!(p.store.get("dec_w").unwrap().shape(), &[4 * h, 2 * f + h]);
}

#[test]
fn zero_weights_encode_to_zero() {
    let (_, vocab) = tiny_world();
    let cfg = tiny_config(&vocab, false);
    let mut p = ModelParams::init(&cfg, 1).unwrap();
    for name in ["enc_fw_w", "enc_fw_b", "enc_bw_w", "enc_bw_b"] {
        let i = p.store.index_of(name).unwrap();
        p.store.tensors_mut()[i].data_mut().iter_mut().for_each(|x| *x = 0.0);
    }
    let mut tape = Tape::<f64>::new();
    let b = bind(&mut tape, &cfg, &p.store.cast()).unwrap();
    let enc = encode_instruction(&mut tape, &b, cfg.vocab_size, &[2, 5, 7, 3]).unwrap();
    assert_eq!(tape.shape(enc.u), &[4, 16]);
    assert!(tape.value(enc.u).data().iter().all(|&x| x == 0.0));
}

#[test]
fn swapped_directions_mirror_the_encoding() {
    let (_, vocab) = tiny_world();
    let cfg = tiny_config(&vocab, false);
    let p = ModelParams::init(&cfg, 2).unwrap().store.cast::<f64>();
    let mut swapped = ParamStore::new();
    for (name, t) in p.iter() {
        let src = match name {
            "enc_fw_w" => "enc_bw_w",
            "enc_bw_w" => "enc_fw_w",
            "enc_fw_b" => "enc_bw_b",
            "enc_bw_b" => "enc_fw_b",
            other => other,
        };
        let _ = t;
        swapped.insert(name, p.get(src).unwrap().clone());
    }
    let tokens = [4usize, 9, 2, 11, 6];
    let rev: Vec<usize> = tokens.iter().rev().copied().collect();
    let mut t1 = Tape::<f64>::new();
    let b1 = bind(&mut t1, &cfg, &p).unwrap();
    let e1 = encode_instruction(&mut t1, &b1, cfg.vocab_size, &tokens).unwrap();
    let mut t2 = Tape::<f64>::new();
    let b2 = bind(&mut t2, &cfg, &swapped).unwrap();
    let e2 = encode_instruction(&mut t2, &b2, cfg.vocab_size, &rev).unwrap();
    let (u1, u2) = (t1.value(e1.u), t2.value(e2.u));
    let h = cfg.hidden;
    let l = tokens.len();
    for i in 0..l {
        let (a, b) = (u1.row(i), u2.row(l - 1 - i));
        for k in 0..h {
            assert!((a[k] - b[h + k]).abs() < 1e-12);
            assert!((a[h + k] - b[k]).abs() < 1e-12);
        }
    }
}

#[test]
fn encoder_rejects_bad_tokens() {
    let (_, vocab) = tiny_world();
    let cfg = tiny_config(&vocab, false);
    let mut tape = Tape::<f32>::new();
    let b = bind(&mut tape, &cfg, &ModelParams::init(&cfg, 0).unwrap().store).unwrap();
    assert!(matches!(
        encode_instruction(&mut tape, &b, cfg.vocab_size, &[cfg.vocab_size]),
        Err(Error::Index { .. })
    ));
    assert!(encode_instruction(&mut tape, &b, cfg.vocab_size, &[]).is_err());
}

#[test]
fn attention_saturates_on_dominant_slot() {
    let (w, vocab) = tiny_world();
    let cfg = tiny_config(&vocab, false);
    let mut p = ModelParams::init(&cfg, 3).unwrap().store.cast::<f64>();
    // w_f = I-like so the key equals the hidden state's first F entries.
    let f = cfg.feature_dim();
    let i = p.index_of("w_f").unwrap();
    let wf = &mut p.tensors_mut()[i];
    wf.data_mut().iter_mut().for_each(|x| *x = 0.0);
    for r in 0..f.min(cfg.hidden) {
        wf.data_mut()[r * cfg.hidden + r] = 1.0;
    }
    let mut tape = Tape::<f64>::new();
    let b = bind(&mut tape, &cfg, &p).unwrap();
    let mut view = w.view_features(0).unwrap();
    let target_slot = 7;
    view.rows[target_slot] = vec![0.0; f];
    view.rows[target_slot][0] = 1.0;
    let v = view_matrix(&mut tape, &view).unwrap();
    let mut h = vec![0.0; cfg.hidden];
    h[0] = 200.0;
    let h = tape.constant(Tensor::vector(h));
    let (att, alpha) = attend_visual(&mut tape, &b, v, h).unwrap();
    let a = tape.value(alpha).data();
    let sum: f64 = a.iter().sum();
    assert!((sum - 1.0).abs() < 1e-12);
    // Other rows with a positive first coordinate could compete; check the
    // winner is the unique maximum of the first column.
    let col0: Vec<f64> = view.rows.iter().map(|r| r[0] as f64).collect();
    let best = (0..col0.len()).max_by(|&x, &y| col0[x].total_cmp(&col0[y])).unwrap();
    assert!(a[best] > 1.0 - 1e-6, "alpha {}", a[best]);
    let att = tape.value(att).data();
    for k in 0..f {
        assert!((att[k] - view.rows[best][k] as f64).abs() < 1e-6);
    }
}

#[test]
fn ask_row_leaves_move_logits_untouched() {
    let (w, vocab) = tiny_world();
    let lang = LangConfig::default();
    let ep = sample_episode(&w, &vocab, &lang, 4, (2, 4)).unwrap();
    let cfg = tiny_config(&vocab, false);
    let base = ModelParams::init(&cfg, 5).unwrap();
    let asa = base.with_ask(true);
    let mut s1 = Session::start(&base, &ep.instruction.token_ids).unwrap();
    let mut s2 = Session::start(&asa, &ep.instruction.token_ids).unwrap();
    let mut cur = ep.start;
    for _ in 0..3 {
        let view = w.view_features(cur).unwrap();
        let acts = w.navigable_actions(cur).unwrap();
        let o1 = s1.step(&view, &acts).unwrap();
        let o2 = s2.step(&view, &acts).unwrap();
        let l1 = s1.tape.value(o1.logits).data().to_vec();
        let l2 = s2.tape.value(o2.logits).data().to_vec();
        assert_eq!(l2.len(), l1.len() + 1);
        assert_eq!(&l2[..l1.len()], l1.as_slice());
        assert_eq!(o1.value_f64, o2.value_f64);
        s1.executed(&acts, 0);
        s2.executed(&acts, 0);
        cur = acts.moves[0].dest;
    }
}

#[test]
fn checkpoint_round_trip_and_ask_reuse() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    let cfg = ModelConfig::default();
    let p = ModelParams::init(&cfg, 9).unwrap();
    p.save(&path).unwrap();
    let back = ModelParams::load(&path).unwrap();
    assert_eq!(back, p);

    let asa = back.with_ask(true);
    let apath = dir.path().join("a.ckpt");
    asa.save(&apath).unwrap();
    let loaded = ModelParams::load(&apath).unwrap();
    assert!(loaded.ask_enabled());
    assert_eq!(loaded.store.get("w_a"), p.store.get("w_a"));

    let bytes = std::fs::read(&path).unwrap();
    let cut = dir.path().join("cut.ckpt");
    std::fs::write(&cut, &bytes[..bytes.len() - 10]).unwrap();
    let err = ModelParams::load(&cut).unwrap_err();
    assert!(matches!(err, Error::Corrupt { .. }));
    assert_eq!(err.exit_code(), 3);
}

#[test]
fn critic_parameters_exist() {
    let p = ModelParams::init(&ModelConfig::default(), 0).unwrap();
    for n in CRITIC_PARAMS {
        assert!(p.store.get(n).is_some());
    }
}

#[test]
fn decode_step_gradients_match_finite_differences() {
    let (w, vocab) = tiny_world();
    let ep = sample_episode(&w, &vocab, &LangConfig::default(), 1, (2, 3)).unwrap();
    for ask in [false, true] {
        let cfg = tiny_config(&vocab, ask);
        let params: Vec<Tensor<f64>> = ModelParams::init(&cfg, 7).unwrap().store.cast::<f64>().tensors().to_vec();
        let view = w.view_features(ep.start).unwrap();
        let acts = w.navigable_actions(ep.start).unwrap();
        let tokens = ep.instruction.token_ids.clone();
        let report = check_gradients(
            |tape, vars| {
                let b = bound_from(vars, &cfg, false);
                let enc = encode_instruction(tape, &b, cfg.vocab_size, &tokens)?;
                let state = DecoderState::initial(tape, &b);
                let v = view_matrix(tape, &view)?;
                let a = action_matrix(tape, &acts, ask)?;
                let o1 = decode_step(tape, &b, &enc, v, a, &state)?;
                let o2 = decode_step(tape, &b, &enc, v, a, &o1.state)?;
                let ce = tape.cross_entropy(o2.logits, 0)?;
                let val = tape.sum(o2.value);
                let sq = tape.mul(val, val)?;
                tape.add(ce, sq)
            },
            &params,
            1e-5,
        )
        .unwrap();
        assert!(report.max_rel_error < 1e-4, "ask={ask}: {report:?}");
    }
}

#[test]
fn full_objective_gradients_match_finite_differences() {
    let (plain, ask) = common::two_step_gradcheck();
    assert!(plain < 1e-4, "ask disabled: {plain}");
    assert!(ask < 1e-4, "ask enabled: {ask}");
}
