use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::embedding::{FullEmbedding, LowRankEmbedding, SchemeSpec};
use crate::testing::{assert_grad_close, central_difference};

const EPS: f32 = 1e-4;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn random_table(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Array2<f32> {
    Array2::from_shape_fn((rows, cols), |_| rng.random_range(-1.0f32..1.0))
}

fn full(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> EmbeddingScheme {
    EmbeddingScheme::Full(FullEmbedding::from_table(random_table(rows, cols, rng)))
}

fn toy_gmf(seed: u64) -> Gmf {
    let mut r = rng(seed);
    let mut gmf = Gmf::new(4, 4, 4, &SchemeSpec::Full, &mut r).unwrap();
    gmf.user = full(4, 4, &mut r);
    gmf.item = full(4, 4, &mut r);
    gmf.head.bias.value[[0, 0]] = 0.3;
    gmf
}

/// Weighted sum of outputs, so that `dL/d(out) = weights`.
fn probe_loss<M: Model>(model: &M, left: &[usize], right: &[usize], weights: &[f64]) -> f64 {
    let out = model.predict(left, right).unwrap();
    out.iter().zip(weights).map(|(o, w)| o * w).sum()
}

fn dense_grad_of(grad: &EmbeddingGrad, scheme: &EmbeddingScheme) -> Vec<Array2<f64>> {
    match (grad, scheme) {
        (EmbeddingGrad::Table(g), _) => vec![g.to_dense(scheme.len())],
        (EmbeddingGrad::LowRank { p, q }, _) => vec![p.to_dense(scheme.len()), q.clone()],
        (EmbeddingGrad::Quantized(_), _) => vec![],
    }
}

fn scheme_tensor_mut(scheme: &mut EmbeddingScheme, k: usize) -> &mut Array2<f32> {
    match scheme {
        EmbeddingScheme::Full(t) => &mut t.table.value,
        EmbeddingScheme::LowRank(t) => {
            if k == 0 {
                &mut t.p.value
            } else {
                &mut t.q.value
            }
        }
        _ => unreachable!("no exact gradient for this scheme"),
    }
}

/// Checks every dense parameter and every exactly differentiable embedding
/// tensor against central differences.
fn check_all_grads<M: Model + Clone>(model: &M, left: &[usize], right: &[usize], seed: u64) {
    let mut r = rng(seed);
    let weights: Vec<f64> = (0..left.len()).map(|_| r.random_range(-1.0..1.0)).collect();
    let (_, ctx) = model.forward(left, right).unwrap();
    let grads = model.backward(&ctx, &weights).unwrap();
    let mut probe = model.clone();
    let loss = |m: &M| probe_loss(m, left, right, &weights);

    for (p, analytic) in grads.dense.iter().enumerate() {
        for ((i, j), &a) in analytic.indexed_iter() {
            let numeric = central_difference(
                &mut probe,
                EPS,
                |m: &mut M| m.dense_mut().into_iter().nth(p).unwrap().value.get_mut((i, j)).unwrap(),
                loss,
            );
            assert_grad_close(a, numeric, &format!("dense {p} [{i},{j}]"));
        }
    }
    for (s, (g, scheme)) in grads.embeddings.iter().zip(model.schemes()).enumerate() {
        for (k, analytic) in dense_grad_of(g, scheme).iter().enumerate() {
            for ((i, j), &a) in analytic.indexed_iter() {
                let numeric = central_difference(
                    &mut probe,
                    EPS,
                    |m: &mut M| {
                        let scheme = m.schemes_mut().into_iter().nth(s).unwrap();
                        scheme_tensor_mut(scheme, k).get_mut((i, j)).unwrap()
                    },
                    loss,
                );
                assert_grad_close(a, numeric, &format!("scheme {s} tensor {k} [{i},{j}]"));
            }
        }
    }
}

#[test]
fn gmf_unit_weights_is_plain_mf() {
    let mut gmf = toy_gmf(1);
    gmf.head.h.value.fill(1.0);
    gmf.head.bias.value.fill(0.0);
    let out = gmf.predict(&[2], &[3]).unwrap();
    let u = gmf.user.lookup(&[2]).unwrap();
    let i = gmf.item.lookup(&[3]).unwrap();
    assert_eq!(out[0], u.row(0).dot(&i.row(0)));
}

#[test]
fn gmf_zero_user_gives_bias() {
    let mut gmf = toy_gmf(2);
    if let EmbeddingScheme::Full(t) = &mut gmf.user {
        t.table.value.row_mut(1).fill(0.0);
    }
    let out = gmf.predict(&[1, 1], &[0, 3]).unwrap();
    assert_eq!(out, vec![f64::from(0.3f32), f64::from(0.3f32)]);
}

#[test]
fn gmf_matches_scalar_loop() {
    let gmf = toy_gmf(3);
    let users = [0, 1, 2, 3, 1];
    let items = [3, 2, 1, 0, 1];
    let out = gmf.predict(&users, &items).unwrap();
    let (EmbeddingScheme::Full(u), EmbeddingScheme::Full(i)) = (&gmf.user, &gmf.item) else {
        unreachable!()
    };
    for b in 0..users.len() {
        let mut s = f64::from(gmf.head.bias.value[[0, 0]]);
        for j in 0..4 {
            s += f64::from(gmf.head.h.value[[j, 0]])
                * f64::from(u.table()[[users[b], j]])
                * f64::from(i.table()[[items[b], j]]);
        }
        assert!((out[b] - s).abs() <= 1e-6, "{} vs {s}", out[b]);
    }
}

#[test]
fn gmf_product_rule() {
    let mut gmf = toy_gmf(4);
    gmf.head.h.value.fill(1.0);
    let (_, ctx) = gmf.forward(&[0], &[2]).unwrap();
    let grads = gmf.backward(&ctx, &[1.0]).unwrap();
    assert_eq!(grads.upstream[0], ctx.item.output);
    assert_eq!(grads.upstream[1], ctx.user.output);
}

#[test]
fn gmf_zero_dlogits_give_zero_grads() {
    let gmf = toy_gmf(5);
    let (_, ctx) = gmf.forward(&[0, 1], &[2, 3]).unwrap();
    let grads = gmf.backward(&ctx, &[0.0, 0.0]).unwrap();
    for g in grads.dense.iter().chain(&grads.upstream) {
        assert!(g.iter().all(|&x| x == 0.0));
    }
}

#[test]
fn gmf_gradients_match_finite_differences() {
    let gmf = toy_gmf(6);
    check_all_grads(&gmf, &[0, 1, 2, 3, 0, 2], &[3, 2, 1, 0, 0, 2], 60);
}

#[test]
fn gmf_with_low_rank_tables_matches_finite_differences() {
    let mut r = rng(7);
    let mut gmf = toy_gmf(7);
    gmf.user = EmbeddingScheme::LowRank(
        LowRankEmbedding::from_factors(random_table(4, 3, &mut r), random_table(3, 4, &mut r)).unwrap(),
    );
    gmf.item = EmbeddingScheme::LowRank(
        LowRankEmbedding::from_factors(random_table(4, 3, &mut r), random_table(3, 4, &mut r)).unwrap(),
    );
    check_all_grads(&gmf, &[0, 1, 3, 3], &[2, 2, 0, 1], 70);
}

#[test]
fn gmf_dense_grads_under_quantized_tables() {
    let mut r = rng(8);
    let spec = SchemeSpec::Dpq {
        subspaces: 2,
        centroids: 4,
    };
    let mut gmf = Gmf::new(6, 6, 4, &spec, &mut r).unwrap();
    gmf.head.h = crate::param::Param::new(random_table(4, 1, &mut r));
    check_all_grads(&gmf, &[0, 1, 5], &[4, 2, 3], 80);
    let spec = SchemeSpec::Mgqe {
        variant: crate::embedding::MgqeVariant::SharedVarK,
        tier_fractions: vec![0.5],
        centroids: vec![4, 2],
        subspaces: vec![2, 2],
    };
    let gmf = Gmf::new(6, 6, 4, &spec, &mut r).unwrap();
    check_all_grads(&gmf, &[0, 1, 5], &[4, 2, 3], 81);
}

fn toy_neumf(seed: u64) -> NeuMf {
    let mut r = rng(seed);
    let mut m = NeuMf::new(4, 5, 8, &SchemeSpec::Full, &mut r).unwrap();
    m.gmf_user = full(4, 8, &mut r);
    m.gmf_item = full(5, 8, &mut r);
    m.mlp_user = full(4, 8, &mut r);
    m.mlp_item = full(5, 8, &mut r);
    for layer in &mut m.layers {
        layer.bias.value = random_table(1, layer.outputs(), &mut r) * 0.1;
    }
    m.fusion_bias.value[[0, 0]] = -0.2;
    m
}

#[test]
fn neumf_gradients_match_finite_differences() {
    let m = toy_neumf(9);
    check_all_grads(&m, &[0, 1, 2, 3, 1], &[4, 3, 2, 0, 1], 90);
}

#[test]
fn neumf_zero_mlp_fusion_is_gmf() {
    let mut m = toy_neumf(10);
    let d = m.dim();
    for j in d..m.fusion.rows() {
        m.fusion.value[[j, 0]] = 0.0;
    }
    let gmf = Gmf {
        user: m.gmf_user.clone(),
        item: m.gmf_item.clone(),
        head: GmfHead {
            h: crate::param::Param::new(m.fusion.value.slice(ndarray::s![..d, ..]).to_owned()),
            bias: m.fusion_bias.clone(),
        },
    };
    let users = [0, 1, 2, 3];
    let items = [4, 0, 2, 2];
    assert_eq!(m.predict(&users, &items).unwrap(), gmf.predict(&users, &items).unwrap());
}

#[test]
fn neumf_dead_relu_blocks_gradient() {
    let mut m = toy_neumf(11);
    // Kill the first hidden unit of layer 1 for every input.
    m.layers[0].weight.value.column_mut(0).fill(0.0);
    m.layers[0].bias.value[[0, 0]] = -1.0;
    let (_, ctx) = m.forward(&[0, 1], &[2, 3]).unwrap();
    assert!(ctx.pre_activations[0].column(0).iter().all(|&z| z < 0.0));
    let grads = m.backward(&ctx, &[1.0, -0.5]).unwrap();
    // dense[0] = W1, dense[1] = b1
    assert!(grads.dense[0].column(0).iter().all(|&g| g == 0.0));
    assert_eq!(grads.dense[1][[0, 0]], 0.0);
}

#[test]
fn ranking_scores_match_forward() {
    let gmf = toy_gmf(12);
    let scores = gmf.score_all_items(&[0, 3]).unwrap();
    for (b, &u) in [0usize, 3].iter().enumerate() {
        let direct = gmf.predict(&[u; 4], &[0, 1, 2, 3]).unwrap();
        for j in 0..4 {
            assert!((scores[[b, j]] - direct[j]).abs() < 1e-12);
        }
    }
    let m = toy_neumf(13);
    let scores = m.score_all_items(&[1, 2]).unwrap();
    for (b, &u) in [1usize, 2].iter().enumerate() {
        let direct = m.predict(&[u; 5], &[0, 1, 2, 3, 4]).unwrap();
        for j in 0..5 {
            assert!((scores[[b, j]] - direct[j]).abs() < 1e-12);
        }
    }
}

fn toy_i2i(seed: u64) -> Item2Item {
    let mut r = rng(seed);
    let mut m = Item2Item::new(5, 4, &SchemeSpec::Full, &mut r).unwrap();
    m.item = full(5, 4, &mut r);
    m
}

#[test]
fn item2item_unit_basis_score() {
    let mut m = toy_i2i(14);
    m.head.h.value.fill(1.0);
    m.head.bias.value[[0, 0]] = 0.25;
    if let EmbeddingScheme::Full(t) = &mut m.item {
        for i in [1, 3] {
            t.table.value.row_mut(i).fill(0.0);
            t.table.value[[i, 2]] = 1.0;
        }
    }
    assert_eq!(m.predict(&[1], &[3]).unwrap(), vec![1.25]);
}

#[test]
fn item2item_perfect_prediction_has_zero_gradient() {
    let m = toy_i2i(15);
    let (pred, ctx) = m.forward(&[0, 1], &[2, 3]).unwrap();
    let loss = crate::train::squared_loss(&pred, &pred);
    assert_eq!(loss.loss, 0.0);
    let grads = m.backward(&ctx, &loss.grad).unwrap();
    assert!(grads.dense.iter().all(|g| g.iter().all(|&x| x == 0.0)));
}

#[test]
fn item2item_gradients_match_finite_differences() {
    let m = toy_i2i(16);
    // Repeated and self pairs exercise gradient accumulation.
    check_all_grads(&m, &[0, 1, 2, 4, 3], &[1, 1, 4, 4, 0], 160);
}

#[test]
fn mismatched_batches_are_rejected() {
    let gmf = toy_gmf(17);
    assert!(gmf.forward(&[0, 1], &[0]).is_err());
    assert!(matches!(gmf.forward(&[9], &[0]), Err(Error::IdOutOfRange { id: 9, .. })));
}
