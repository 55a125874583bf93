use geolang::numerics::*;
use ndarray::{array, Array2};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Mat {
    Array2::from_shape_simple_fn((rows, cols), || rng.random_range(-1.0..1.0))
}

/// Three dense layers touching every differentiable op once.
fn three_layer(store: &mut ParameterStore, seed: u64) -> impl Fn(&mut Graph, &ParameterStore) -> Result<Var, NumError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for (name, r, c) in [("w1", 6, 8), ("b1", 1, 8), ("g1", 1, 8), ("be1", 1, 8), ("w2", 8, 8), ("w2b", 8, 8), ("b2", 1, 8), ("w3", 8, 5), ("emb", 7, 6), ("s", 1, 8)] {
        store.add(name, random(r, c, &mut rng)).unwrap();
    }
    let ids = [3usize, 0, 6, 3];
    move |g: &mut Graph, s: &ParameterStore| {
        let p = |g: &mut Graph, n: &str| g.param(s, s.id(n).unwrap());
        let emb = p(g, "emb");
        let x = g.embedding_lookup(emb, &ids)?;
        let w1 = p(g, "w1");
        let h = g.matmul(x, w1)?;
        let b1 = p(g, "b1");
        let h = g.add_row(h, b1)?;
        let h = g.gelu(h);
        let (g1, be1) = (p(g, "g1"), p(g, "be1"));
        let h = g.layer_norm(h, g1, be1, 1e-12)?;
        let (w2, w2b) = (p(g, "w2"), p(g, "w2b"));
        let a = g.matmul(h, w2)?;
        let b = g.matmul_bt(h, w2b)?;
        let att = g.matmul_bt(a, b)?;
        let att = g.scale(att, 0.3);
        let att = g.softmax(att);
        let h2 = g.matmul(att, h)?;
        let sc = p(g, "s");
        let h2 = g.mul_row(h2, sc)?;
        let h2 = g.mul(h2, h)?;
        let b2 = p(g, "b2");
        let h2 = g.add_row(h2, b2)?;
        let h2 = g.tanh(h2);
        let left = g.slice_cols(h2, 0, 4)?;
        let right = g.slice_cols(h2, 4, 4)?;
        let swapped = g.concat_cols(&[right, left])?;
        let h3 = g.add(swapped, h2)?;
        let top = g.rows(h3, &[0, 1])?;
        let bottom = g.rows(h3, &[2, 3])?;
        let picked = g.pick_rows(&[top, bottom], &[1, 0])?;
        let stacked = g.concat_rows(&[picked, bottom])?;
        let w3 = p(g, "w3");
        let logits = g.matmul(stacked, w3)?;
        let ce = g.cross_entropy(logits, &[Some(1), None, Some(4), Some(0)])?;
        let reg = g.sum(stacked);
        let reg = g.scale(reg, 0.01);
        g.add(ce, reg)
    }
}

#[test]
fn three_layer_network_matches_finite_differences() {
    let mut store = ParameterStore::new();
    let f = three_layer(&mut store, 5);
    assert!(store.num_scalars() >= 200);
    let r = check_gradients(&mut store, f, 200, 1e-5, 1e-7, 9).unwrap();
    assert_eq!(r.checked, 200);
    assert!(r.passes(1e-4), "{r:?}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]
    #[test]
    fn every_op_passes_randomized_gradient_check(seed in any::<u64>()) {
        let mut store = ParameterStore::new();
        let f = three_layer(&mut store, seed);
        let r = check_gradients(&mut store, f, 60, 1e-5, 1e-7, seed ^ 1).unwrap();
        prop_assert!(r.passes(1e-4), "{:?}", r);
    }
}

#[test]
fn adam_two_step_trace_by_hand() {
    // x0 = 1, constant gradient 2, lr 0.1.
    // t=1: m = 0.2, v = 0.004, m^ = 2, v^ = 4, x = 1 - 0.1 * 2 / (2 + 1e-8)
    // t=2: m = 0.38, v = 0.007996, m^ = 0.38 / 0.19 = 2, v^ = 0.007996 / 0.001999 = 4
    let cfg = AdamConfig::default();
    let mut s = ParameterStore::new();
    let id = s.add("x", array![[1.0]]).unwrap();
    let mut expected = 1.0;
    for (m, v, c1, c2) in [(0.2, 0.004, 0.1, 0.001), (0.38, 0.007996, 0.19, 0.001999)] {
        s.zero_grad();
        s.grad_mut(id)[[0, 0]] = 2.0;
        s.adam_step(&cfg, 0.1).unwrap();
        let m_hat: f64 = m / c1;
        let v_hat: f64 = v / c2;
        expected -= 0.1 * m_hat / (v_hat.sqrt() + 1e-8);
        assert!((s.value(id)[[0, 0]] - expected).abs() < 1e-12);
    }
    assert!((expected - 0.8).abs() < 1e-8);
    assert_eq!(s.step(), 2);
}

#[test]
fn convex_quadratic_decreases_after_warmup() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let target = random(3, 4, &mut rng);
    let mut s = ParameterStore::new();
    let id = s.add("w", random(3, 4, &mut rng)).unwrap();
    let sched = LinearDecay { base: 0.05, warmup_steps: 10, total_steps: 300 };
    let mut losses = Vec::new();
    for t in 0..300 {
        s.zero_grad();
        let mut g = Graph::new();
        let w = g.param(&s, id);
        let neg = g.input(-&target);
        let d = g.add(w, neg).unwrap();
        let sq = g.mul(d, d).unwrap();
        let l = g.sum(sq);
        losses.push(g.scalar(l));
        g.backward(l).accumulate_into(&mut s);
        s.adam_step(&AdamConfig::default(), sched.at(t)).unwrap();
    }
    for w in losses[10..].windows(2) {
        assert!(w[1] <= w[0] + 1e-12, "{} -> {}", w[0], w[1]);
    }
    assert!(losses[299] < 1e-3 * losses[0]);
}

#[test]
fn checkpoint_resume_continues_trace_bit_exactly() {
    let run = |store: &mut ParameterStore, steps: std::ops::Range<u64>, losses: &mut Vec<u64>| {
        let mut s2 = ParameterStore::new();
        let f = three_layer(&mut s2, 1);
        for t in steps {
            store.zero_grad();
            let mut g = Graph::new();
            let l = f(&mut g, store).unwrap();
            losses.push(g.scalar(l).to_bits());
            g.backward(l).accumulate_into(store);
            store.adam_step(&AdamConfig::default(), 1e-2 * (1.0 - t as f64 / 40.0)).unwrap();
        }
    };
    let mut base = ParameterStore::new();
    let _ = three_layer(&mut base, 1);
    let mut straight = base.clone();
    let mut a = Vec::new();
    run(&mut straight, 0..40, &mut a);

    let mut first = base.clone();
    let mut b = Vec::new();
    run(&mut first, 0..20, &mut b);
    let bytes = first.to_checkpoint(true).to_bytes();
    let mut resumed = ParameterStore::from_checkpoint(&Checkpoint::from_bytes(&bytes).unwrap()).unwrap();
    run(&mut resumed, 20..40, &mut b);
    assert_eq!(a, b);
    assert_eq!(resumed.to_checkpoint(true).to_bytes(), straight.to_checkpoint(true).to_bytes());
}

#[test]
fn segment_attention_and_reshape_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let mut store = ParameterStore::new();
    for (name, r, c) in [("x", 7, 6), ("wq", 6, 4), ("wk", 6, 4), ("wv", 6, 6), ("wo", 6, 3)] {
        store.add(name, random(r, c, &mut rng)).unwrap();
    }
    let f = |g: &mut Graph, s: &ParameterStore| {
        let p = |g: &mut Graph, n: &str| g.param(s, s.id(n).unwrap());
        let x = p(g, "x");
        let (wq, wk, wv, wo) = (p(g, "wq"), p(g, "wk"), p(g, "wv"), p(g, "wo"));
        let q = g.matmul(x, wq)?;
        let k = g.matmul(x, wk)?;
        let v = g.matmul(x, wv)?;
        let a = g.segment_attention(q, k, v, &[0..3, 3..4, 5..7], 2)?;
        let o = g.matmul(a, wo)?;
        let r = g.reshape(o, 3, 7)?;
        let t = g.tanh(r);
        let t2 = g.mul(t, t)?;
        Ok(g.sum(t2))
    };
    let r = check_gradients(&mut store, f, 500, 1e-5, 1e-7, 3).unwrap();
    assert!(r.passes(1e-4), "{r:?}");

    let mut g = Graph::new();
    let x = g.input(random(7, 6, &mut rng));
    let a = g.segment_attention(x, x, x, &[0..3, 3..7], 3).unwrap();
    let probs = g.attention_probs(a).unwrap();
    assert_eq!(probs.len(), 6);
    for p in probs {
        for row in p.rows() {
            assert!((row.sum() - 1.0).abs() < 1e-12);
        }
    }
    assert!(g.segment_attention(x, x, x, &[0..3, 2..5], 3).is_err());
}
