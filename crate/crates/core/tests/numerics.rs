use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use routedk::numerics::{Graph, Tensor, Var};

fn triple_loop(a: &Tensor<f64>, b: &Tensor<f64>) -> Vec<f64> {
    let (m, k, n) = (a.shape()[0], a.shape()[1], b.shape()[1]);
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            let mut acc = 0.0;
            for p in 0..k {
                acc += a.get(i, p) * b.get(p, j);
            }
            out[i * n + j] = acc;
        }
    }
    out
}

#[test]
fn matmul_matches_triple_loop_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    // Integer-valued entries keep every partial sum exact in 64-bit.
    let mut int_tensor = |shape: &[usize]| {
        let n = shape.iter().product();
        Tensor::new(shape, (0..n).map(|_| rng.gen_range(-9..=9) as f64).collect()).unwrap()
    };
    let a = int_tensor(&[4, 3]);
    let b = int_tensor(&[3, 2]);
    assert_eq!(a.matmul(&b).unwrap().data(), triple_loop(&a, &b).as_slice());

    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let a = Tensor::<f64>::randn(&[5, 7], 1.0, &mut rng);
    let b = Tensor::<f64>::randn(&[7, 3], 1.0, &mut rng);
    for (x, y) in a.matmul(&b).unwrap().data().iter().zip(triple_loop(&a, &b)) {
        assert!((x - y).abs() < 1e-12);
    }
}

/// Builds a three-stage composition exercising every differentiable op and
/// returns the scalar loss.
fn composite(g: &mut Graph<f64>, params: &[Var]) -> Var {
    let [x, w1, gain, w2, wk, table, weights] = params.try_into().unwrap();
    let emb = g.embed(table, &[2, 0, 1, 2]).unwrap();
    let h0 = g.add(x, emb).unwrap();
    let n = g.rms_norm(h0, gain).unwrap();
    let h1 = g.matmul(n, w1).unwrap();
    let act = g.gelu(h1);
    let k = g.matmul(act, wk).unwrap();
    let att = g.causal_attention(act, k, h1, 2).unwrap();
    let pooled = g.mean_rows(att, 3).unwrap();
    let route = g.matmul(pooled, w2).unwrap();
    let alpha = g.softmax_rows(route).unwrap();
    let mixed_a = g.scale_by(att, alpha, 0).unwrap();
    let mixed_b = g.scale_by(act, alpha, 1).unwrap();
    let mix = g.add(mixed_a, mixed_b).unwrap();
    let scaled = g.scale(mix, 0.7);
    let sq = g.mul(scaled, scaled).unwrap();
    let logits = g.matmul_bt(sq, table).unwrap();
    let shifted = g.scale_by(logits, weights, 1).unwrap();
    let nll = g.masked_next_token_nll(shifted, &[1, 2, 0, 1], &[false, true, true, true]).unwrap();
    let extra = g.sum(sq);
    let small = g.scale(extra, 0.01);
    g.add(nll, small).unwrap()
}

#[test]
fn composite_gradient_matches_central_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let shapes: [&[usize]; 7] = [&[4, 4], &[4, 4], &[4], &[4, 2], &[4, 4], &[3, 4], &[2]];
    let values: Vec<Tensor<f64>> = shapes.iter().map(|s| Tensor::randn(s, 0.7, &mut rng)).collect();

    let eval = |vals: &[Tensor<f64>]| {
        let mut g = Graph::new();
        let vars: Vec<Var> = vals.iter().map(|v| g.param(v.clone())).collect();
        let loss = composite(&mut g, &vars);
        (g, vars, loss)
    };
    let (g, vars, loss) = eval(&values);
    let grads = g.backward(loss).unwrap();

    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for (pi, v) in values.iter().enumerate() {
        let analytic = grads.get(vars[pi]).unwrap();
        for e in 0..v.len() {
            let mut plus = values.clone();
            plus[pi].data_mut()[e] += h;
            let mut minus = values.clone();
            minus[pi].data_mut()[e] -= h;
            let (gp, _, lp) = eval(&plus);
            let (gm, _, lm) = eval(&minus);
            let fd = (gp.value(lp).data()[0] - gm.value(lm).data()[0]) / (2.0 * h);
            let a = analytic.data()[e];
            let rel = (a - fd).abs() / a.abs().max(fd.abs()).max(1e-3);
            worst = worst.max(rel);
        }
    }
    assert!(worst < 1e-4, "max relative error {worst}");
}

#[test]
fn causal_attention_ignores_future_rows() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let q = Tensor::<f64>::randn(&[5, 4], 1.0, &mut rng);
    let k = Tensor::<f64>::randn(&[5, 4], 1.0, &mut rng);
    let v = Tensor::<f64>::randn(&[5, 4], 1.0, &mut rng);
    let run = |k: Tensor<f64>, v: Tensor<f64>| {
        let mut g = Graph::new();
        let (a, b, c) = (g.constant(q.clone()), g.constant(k), g.constant(v));
        let o = g.causal_attention(a, b, c, 2).unwrap();
        g.value(o).clone()
    };
    let base = run(k.clone(), v.clone());
    let mut k2 = k.clone();
    let mut v2 = v.clone();
    for c in 0..4 {
        k2.data_mut()[4 * 4 + c] += 3.0;
        v2.data_mut()[4 * 4 + c] -= 2.0;
    }
    let changed = run(k2, v2);
    assert_eq!(&base.data()[..16], &changed.data()[..16]);
}

proptest! {
    #[test]
    fn softmax_rows_are_distributions(row in proptest::collection::vec(-1e4f32..1e4f32, 1..12)) {
        let n = row.len();
        let t = Tensor::new(&[1, n], row).unwrap().softmax_rows().unwrap();
        let sum: f32 = t.data().iter().sum();
        prop_assert!((sum - 1.0).abs() <= 1e-6, "sum {} over {} entries", sum, n);
        prop_assert!(t.data().iter().all(|&p| p >= 0.0 && p.is_finite()));
    }
}
