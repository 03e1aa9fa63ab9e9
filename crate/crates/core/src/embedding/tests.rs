use ndarray::{array, Array2};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::param::Param;
use crate::testing::{assert_grad_close, central_difference};

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn dpq_scheme(n: usize, d: usize, sub: usize, k: usize, seed: u64) -> EmbeddingScheme {
    EmbeddingScheme::Dpq(DpqEmbedding::new(n, d, sub, k, &mut rng(seed)).unwrap())
}

fn shared_mgqe(d: usize, sub: usize, bounds: Vec<usize>, ks: Vec<usize>, seed: u64) -> EmbeddingScheme {
    let m = ks.len();
    let part = TierPartition::new(bounds, ks, vec![sub; m], MgqeVariant::SharedVarK).unwrap();
    EmbeddingScheme::Mgqe(MgqeEmbedding::new(d, part, &mut rng(seed)).unwrap())
}

#[test]
fn full_lookup_returns_table_row() {
    let mut table = Array2::<f32>::zeros((5, 3));
    table.row_mut(3).assign(&array![0.25f32, -1.5, 2.0]);
    let scheme = EmbeddingScheme::Full(FullEmbedding::from_table(table));
    let out = scheme.lookup(&[3]).unwrap();
    assert_eq!(out, array![[0.25, -1.5, 2.0]]);
}

#[test]
fn dpq_fixed_point_returns_centroids() {
    // Every subspace has centroid 5 equal to the raw row's slice.
    let mut r = rng(1);
    let d = 6;
    let sub = 3;
    let k = 8;
    let mut values = Param::normal(sub * k, 2, 1.0, &mut r).value;
    let raw_row = array![0.1f32, 0.2, -0.3, 0.4, 0.5, -0.6];
    for s in 0..sub {
        values[[s * k + 5, 0]] = raw_row[2 * s];
        values[[s * k + 5, 1]] = raw_row[2 * s + 1];
    }
    let cb = CodebookSet::new(d, sub, k, values).unwrap();
    let raw = Param::new(raw_row.clone().insert_axis(ndarray::Axis(0)));
    let scheme = EmbeddingScheme::Dpq(DpqEmbedding::from_parts(raw, cb));
    let looked = scheme.lookup_forward(&[0]).unwrap();
    assert_eq!(looked.output.row(0), raw_row.mapv(f64::from));
    let LookupContext::Quantized(ctx) = looked.context else {
        panic!("training lookup must keep a quantized context");
    };
    assert_eq!(ctx.groups[0].codes, vec![5, 5, 5]);
}

#[test]
fn low_rank_with_identity_q_returns_p_rows() {
    let mut r = rng(2);
    let p = Param::normal(7, 4, 1.0, &mut r).value;
    let q = Array2::<f32>::eye(4);
    let scheme = EmbeddingScheme::LowRank(LowRankEmbedding::from_factors(p.clone(), q).unwrap());
    let full = EmbeddingScheme::Full(FullEmbedding::from_table(p));
    let ids = [6, 0, 3, 3];
    assert_eq!(scheme.lookup(&ids).unwrap(), full.lookup(&ids).unwrap());
}

#[test]
fn out_of_range_ids_fail_for_every_scheme() {
    let mut r = rng(3);
    let schemes = vec![
        EmbeddingScheme::Full(FullEmbedding::new(4, 4, 0.01, &mut r)),
        EmbeddingScheme::LowRank(LowRankEmbedding::new(4, 4, 2, 0.01, &mut r).unwrap()),
        dpq_scheme(4, 4, 2, 2, 3),
        shared_mgqe(4, 2, vec![0, 1, 4], vec![2, 1], 3),
    ];
    for s in schemes {
        assert!(matches!(s.lookup(&[0, 4]), Err(Error::IdOutOfRange { id: 4, size: 4 })), "{}", s.name());
    }
}

#[test]
fn straight_through_copies_upstream_exactly() {
    let mut r = rng(4);
    for scheme in [
        dpq_scheme(20, 8, 4, 4, 4),
        shared_mgqe(8, 4, vec![0, 3, 20], vec![4, 2], 4),
    ] {
        let ids = [19, 2, 2, 7, 0];
        let looked = scheme.lookup_forward(&ids).unwrap();
        let upstream = Array2::from_shape_fn((5, 8), |_| r.random_range(-1.0..1.0));
        let EmbeddingGrad::Quantized(grads) = scheme.lookup_backward(&looked.context, &upstream).unwrap() else {
            panic!("quantized scheme must produce quantized grads");
        };
        let g = &grads[0];
        // Map each raw-gradient row back to the batch row carrying that id.
        let mut seen = vec![false; ids.len()];
        for (k, &row) in g.raw.rows.iter().enumerate() {
            let b = (0..ids.len()).find(|&b| ids[b] == row && !seen[b]).unwrap();
            seen[b] = true;
            for j in 0..8 {
                assert_eq!(g.raw.values[[k, j]].to_bits(), upstream[[b, j]].to_bits());
            }
        }
        assert!(g.codebook.iter().all(|&v| v == 0.0));

        let zero = Array2::zeros((5, 8));
        let EmbeddingGrad::Quantized(grads) = scheme.lookup_backward(&looked.context, &zero).unwrap() else {
            unreachable!()
        };
        assert!(grads[0].raw.values.iter().all(|&v| v == 0.0));
    }
}

#[test]
fn serving_context_cannot_backpropagate() {
    let mut scheme = dpq_scheme(10, 4, 2, 4, 5);
    scheme.freeze_for_serving().unwrap();
    let looked = scheme.lookup_forward(&[1]).unwrap();
    assert!(matches!(
        scheme.lookup_backward(&looked.context, &Array2::zeros((1, 4))),
        Err(Error::ServingContext)
    ));
}

#[test]
fn low_rank_gradients_match_finite_differences() {
    let mut r = rng(6);
    let mut lr = LowRankEmbedding::new(5, 8, 3, 0.5, &mut r).unwrap();
    let ids = [4, 1, 1, 0];
    let weights = Array2::from_shape_fn((4, 8), |_| r.random_range(-1.0..1.0));
    // Linear functional L = <weights, lookup(ids)>, whose gradient wrt the
    // output is exactly `weights`.
    let loss = |t: &LowRankEmbedding| (&t.lookup(&ids).unwrap().0 * &weights).sum();
    let (_, p_rows) = lr.lookup(&ids).unwrap();
    let (gp, gq) = lr.backward(&ids, &p_rows, &weights);
    let gp = gp.to_dense(5);
    for i in 0..5 {
        for j in 0..3 {
            let num = central_difference(&mut lr, 1e-3, |t| &mut t.p.value[[i, j]], loss);
            assert_grad_close(gp[[i, j]], num, &format!("P[{i},{j}]"));
        }
    }
    for i in 0..3 {
        for j in 0..8 {
            let num = central_difference(&mut lr, 1e-3, |t| &mut t.q.value[[i, j]], loss);
            assert_grad_close(gq[[i, j]], num, &format!("Q[{i},{j}]"));
        }
    }
}

#[test]
fn vq_loss_gradients_reach_selected_centroids() {
    // Two subspaces, scalar centroids; the codebook gradient of the VQ term
    // must match a finite difference on the centroid values.
    let cb = CodebookSet::new(2, 2, 3, array![[0.0f32], [1.0], [-1.0], [0.5], [2.0], [-0.5]]).unwrap();
    let raw = Param::new(array![[0.9f32, 0.4], [-0.8, -0.7], [0.2, 1.9]]);
    let mut scheme = EmbeddingScheme::Dpq(DpqEmbedding::from_parts(raw, cb));
    let ids = [0, 1, 2, 0];
    let beta = 0.25;
    let looked = scheme.lookup_forward(&ids).unwrap();
    let mut grad = scheme.lookup_backward(&looked.context, &Array2::zeros((4, 2))).unwrap();
    scheme.add_vq_loss(&looked.context, &mut grad, beta).unwrap();
    let EmbeddingGrad::Quantized(g) = grad else { unreachable!() };
    let codebook_grad = g[0].codebook.clone();

    // Only the centroid term depends on codebook values when codes are held
    // fixed; codes do not change under a 1e-3 perturbation here.
    let codebook_loss = |s: &EmbeddingScheme| {
        let l = s.lookup_forward(&ids).unwrap();
        let LookupContext::Quantized(c) = l.context else { unreachable!() };
        (&c.raw - &c.quantized).mapv(|x| x * x).sum() / 4.0
    };
    for row in 0..6 {
        let num = central_difference(
            &mut scheme,
            1e-3,
            |s| match s {
                EmbeddingScheme::Dpq(t) => &mut t.codebooks_mut().param.value[[row, 0]],
                _ => unreachable!(),
            },
            codebook_loss,
        );
        assert_grad_close(codebook_grad[[row, 0]], num, &format!("centroid row {row}"));
    }
}

#[test]
fn single_tier_mgqe_equals_dpq() {
    let n = 40;
    let dpq = dpq_scheme(n, 8, 4, 16, 77);
    let mgqe = shared_mgqe(8, 4, vec![0, n], vec![16], 77);
    let ids: Vec<usize> = (0..n).rev().chain(0..5).collect();
    assert_eq!(dpq.lookup(&ids).unwrap(), mgqe.lookup(&ids).unwrap());
}

#[test]
fn equal_capacity_tiers_equal_dpq_through_training() {
    let n = 60;
    let mut dpq = dpq_scheme(n, 8, 8, 8, 21);
    let mut mgqe = shared_mgqe(8, 8, vec![0, 7, 25, n], vec![8, 8, 8], 21);
    let mut r = rng(22);
    let mut adam = AdamState::new(0.05);
    for _ in 0..30 {
        let ids: Vec<usize> = (0..16).map(|_| r.random_range(0..n)).collect();
        let upstream = Array2::from_shape_fn((16, 8), |_| r.random_range(-1.0..1.0));
        adam.begin_step();
        for scheme in [&mut dpq, &mut mgqe] {
            let looked = scheme.lookup_forward(&ids).unwrap();
            let mut g = scheme.lookup_backward(&looked.context, &upstream).unwrap();
            scheme.add_vq_loss(&looked.context, &mut g, 0.25).unwrap();
            scheme.apply_grads(&g, &adam).unwrap();
        }
    }
    dpq.freeze_for_serving().unwrap();
    mgqe.freeze_for_serving().unwrap();
    assert_eq!(dpq.item_codes().unwrap(), mgqe.item_codes().unwrap());
}

#[test]
fn freeze_keeps_outputs_and_is_idempotent() {
    let mut r = rng(8);
    let table = Param::normal(30, 4, 1.0, &mut r).value;
    let schemes = vec![
        EmbeddingScheme::Full(FullEmbedding::from_table(table.clone())),
        dpq_scheme(30, 8, 4, 8, 8),
        shared_mgqe(8, 8, vec![0, 5, 30], vec![8, 2], 8),
    ];
    let ids: Vec<usize> = (0..30).collect();
    for mut s in schemes {
        let before = s.lookup(&ids).unwrap();
        s.freeze_for_serving().unwrap();
        assert!(s.is_frozen());
        assert_eq!(s.lookup(&ids).unwrap(), before, "{}", s.name());
        s.freeze_for_serving().unwrap();
        assert_eq!(s.lookup(&ids).unwrap(), before, "{}", s.name());
    }
}

#[test]
fn scalar_scheme_quantizes_on_freeze() {
    let mut r = rng(9);
    let table = FullEmbedding::new(50, 4, 1.0, &mut r);
    let original = table.table().clone();
    let mut s = EmbeddingScheme::ScalarQuantized(ScalarQuantizedState::Training { table, bits: 8 });
    assert!(!s.is_frozen());
    s.freeze_for_serving().unwrap();
    let out = s.lookup(&(0..50).collect::<Vec<_>>()).unwrap();
    let EmbeddingScheme::ScalarQuantized(ScalarQuantizedState::Frozen(sq)) = &s else { unreachable!() };
    for j in 0..4 {
        let bound = sq.step(j) / 2.0;
        for i in 0..50 {
            assert!((out[[i, j]] - f64::from(original[[i, j]])).abs() <= bound);
        }
    }
    assert_eq!(s.item_codes().unwrap().len(), 50);
}

#[test]
fn shared_mgqe_tail_codes_stay_below_tier_capacity() {
    let mut s = shared_mgqe(16, 16, vec![0, 20, 200], vec![256, 64], 10);
    s.freeze_for_serving().unwrap();
    let codes = s.item_codes().unwrap();
    assert!(codes[20..].iter().flatten().all(|&c| c < 64));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn groupwise_matches_per_item_map(
        seed in any::<u64>(),
        batch in proptest::collection::vec(0usize..50, 0..40),
        head in 1usize..20,
        mid in 21usize..45,
        variant in 0u8..3,
        frozen in any::<bool>(),
    ) {
        let variant = MgqeVariant::from_tag(variant).unwrap();
        let (ks, ds) = match variant {
            MgqeVariant::SharedVarK | MgqeVariant::UnsharedVarK => (vec![16, 8, 2], vec![4, 4, 4]),
            MgqeVariant::UnsharedVarD => (vec![8, 8, 8], vec![8, 4, 2]),
        };
        let part = TierPartition::new(vec![0, head, mid, 50], ks, ds, variant).unwrap();
        let mut mgqe = MgqeEmbedding::new(8, part, &mut rng(seed)).unwrap();
        if frozen {
            mgqe.freeze();
        }
        let grouped = mgqe.groupwise_lookup(&batch).unwrap();
        // Map baseline: each item on its own through its tier's table.
        for (b, &id) in batch.iter().enumerate() {
            let tier = mgqe.partition().tier_of(id);
            let (inst, local) = match variant {
                MgqeVariant::SharedVarK => (0, id),
                _ => (tier, id - mgqe.partition().boundaries()[tier]),
            };
            let single = mgqe.instances()[inst]
                .lookup_group(&[local], mgqe.partition().centroids()[tier])
                .unwrap();
            prop_assert_eq!(grouped.output.row(b), single.output.row(0));
        }
    }
}
