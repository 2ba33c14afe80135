mod common;

use proptest::collection::vec;
use proptest::prelude::*;

use common::*;
use rrank::corpus::{build_catalog, build_histories, parse_interactions_str, write_interactions};
use rrank::evalrank::{compensated_sum, evaluate, ndcg_at, pair_metrics, precision_recall_f1_at, Candidates, EvalPair};
use rrank::factors::{
    enhanced_rationale_factors, init_random, top_k, BperPlusExtras, Block, Matrix, ModelDims, ScoreMode, Scorer,
};
use rrank::seminit::{parse_embeddings, semantic_initialize, write_embeddings, EmbeddingTable};
use rrank::train::{adam_step, bper_triplet_loss_and_grads, pitf_loss_and_grads, AdamState};
use rrank::{score_ie, score_ue, score_uie, InteractionRecord};

fn id(prefix: &'static str, n: usize) -> impl Strategy<Value = String> {
    (0..n).prop_map(move |k| format!("{prefix}{k}"))
}

fn records(max: usize) -> impl Strategy<Value = Vec<InteractionRecord>> {
    vec(
        (id("u", 6), id("i", 5), vec(id("e", 12), 1..4)).prop_map(|(u, i, mut rats)| {
            rats.sort();
            rats.dedup();
            InteractionRecord {
                user_id: u,
                item_id: i,
                rationale_ids: rats,
            }
        }),
        1..max,
    )
}

fn small_dims() -> impl Strategy<Value = (ModelDims, u64)> {
    (1usize..5, 1usize..5, 2usize..8, 1usize..6, any::<u64>())
        .prop_map(|(u, i, e, d, seed)| (ModelDims::new(u, i, e, d).unwrap(), seed))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn parse_serialize_identity(recs in records(30)) {
        let mut buf = Vec::new();
        write_interactions(&recs, &mut buf).unwrap();
        let parsed = parse_interactions_str(std::str::from_utf8(&buf).unwrap()).unwrap();
        prop_assert_eq!(parsed.records, recs);
    }

    #[test]
    fn catalog_is_pure_and_histories_bounded(recs in records(30)) {
        let a = build_catalog(&recs, None).unwrap();
        let b = build_catalog(&recs, None).unwrap();
        prop_assert_eq!(&a, &b);
        let h = build_histories(&a, &recs, &[]).unwrap();
        let triplets: usize = recs.iter().map(|r| r.rationale_ids.len()).sum();
        let su: usize = h.user_rationales.iter().map(Vec::len).sum();
        let si: usize = h.item_rationales.iter().map(Vec::len).sum();
        prop_assert!(su <= triplets && si <= triplets);
        let mut ue = std::collections::HashSet::new();
        let mut ie = std::collections::HashSet::new();
        for r in &recs {
            for e in &r.rationale_ids {
                ue.insert((r.user_id.clone(), e.clone()));
                ie.insert((r.item_id.clone(), e.clone()));
            }
        }
        prop_assert_eq!(su, ue.len());
        prop_assert_eq!(si, ie.len());
    }

    #[test]
    fn fused_score_is_affine_in_mu((dims, seed) in small_dims(), bias in -1.0f32..1.0) {
        let mut m = init_random(dims, seed, 0.5).unwrap();
        m.b_u.row_mut(0)[0] = bias;
        m.b_i.row_mut(1)[0] = -bias;
        for u in 0..dims.n_users {
            for i in 0..dims.n_items {
                for e in 0..dims.n_rationales {
                    let s0 = score_uie(&m, u, i, e, 0.0).unwrap();
                    let s1 = score_uie(&m, u, i, e, 1.0).unwrap();
                    let half = score_uie(&m, u, i, e, 0.5).unwrap();
                    prop_assert!((half - 0.5 * (s0 + s1)).abs() < 1e-12);
                    prop_assert_eq!(s0, score_ie(&m, i, e).unwrap());
                    prop_assert_eq!(s1, score_ue(&m, u, e).unwrap());
                    // pure: same call, same bits
                    prop_assert_eq!(half.to_bits(), score_uie(&m, u, i, e, 0.5).unwrap().to_bits());
                }
            }
        }
    }

    #[test]
    fn ranking_invariant_under_increasing_maps(raw in vec(-64i32..64, 1..40), c in -100i32..100, k in 1usize..12) {
        // dyadic scores keep +c and 2x exact, ties included
        let scores: Vec<(usize, f64)> = raw.iter().enumerate().map(|(e, &s)| (e, s as f64 / 8.0)).collect();
        let base = top_k(scores.clone(), k).indices();
        let shifted = top_k(scores.iter().map(|&(e, s)| (e, s + c as f64)).collect(), k).indices();
        let doubled = top_k(scores.iter().map(|&(e, s)| (e, 2.0 * s)).collect(), k).indices();
        prop_assert_eq!(&base, &shifted);
        prop_assert_eq!(&base, &doubled);
    }

    #[test]
    fn unit_projection_reduces_to_bper((dims, seed) in small_dims(), d_sem in 1usize..4) {
        // W s_e = 1 when W has a single nonzero column of ones and s_e[0] = 1
        let d = dims.d;
        let mut w = Matrix::zeros(d, d_sem);
        for r in 0..d {
            w.row_mut(r)[0] = 1.0;
        }
        let mut s = Matrix::zeros(dims.n_rationales, d_sem);
        for e in 0..dims.n_rationales {
            s.row_mut(e)[0] = 1.0;
        }
        let base = init_random(dims, seed, 0.5).unwrap();
        let extras = BperPlusExtras::new(w, s).unwrap();
        let plus = base.clone().with_extras(extras.clone()).unwrap();
        let a = Scorer::new(&base, ScoreMode::Bper, 0.7).unwrap();
        let b = Scorer::new(&plus, ScoreMode::BperPlus, 0.7).unwrap();
        for e in 0..dims.n_rationales {
            let (ou, oi) = enhanced_rationale_factors(&plus, &extras, e).unwrap();
            prop_assert!(ou.iter().zip(base.o_u.row(e)).all(|(x, &y)| *x == y as f64));
            prop_assert!(oi.iter().zip(base.o_i.row(e)).all(|(x, &y)| *x == y as f64));
            for u in 0..dims.n_users {
                for i in 0..dims.n_items {
                    prop_assert!((a.score(u, i, e).unwrap() - b.score(u, i, e).unwrap()).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn loss_nonnegative_and_ln2_at_ties((dims, seed) in small_dims(), l2 in 0.0f64..0.1, n in 1usize..4) {
        let m = init_random(dims, seed, 0.5).unwrap();
        let e = 0;
        let negs: Vec<usize> = (0..n).map(|k| 1 + k % (dims.n_rationales - 1)).collect();
        let (loss, _) = bper_triplet_loss_and_grads(&m, 0, 0, e, &negs, &negs, l2).unwrap();
        prop_assert!(loss >= 0.0);
        let flat = rrank::FactorModel::zeros(dims);
        let (loss, _) = bper_triplet_loss_and_grads(&flat, 0, 0, e, &negs, &negs, 0.0).unwrap();
        prop_assert!((loss - 2.0 * n as f64 * std::f64::consts::LN_2).abs() < 1e-12);
        if dims.n_items > 1 {
            let (loss, _) = pitf_loss_and_grads(&flat, 0, 0, e, &[1], &negs, 0.5, 0.0).unwrap();
            prop_assert!((loss - (1.0 + 0.5 * n as f64) * std::f64::consts::LN_2).abs() < 1e-12);
        }
    }

    #[test]
    fn raising_positive_lowers_loss((dims, seed) in small_dims(), bump in 0.01f32..1.0) {
        let m = init_random(dims, seed, 0.5).unwrap();
        let negs = [1usize];
        let (before, _) = bper_triplet_loss_and_grads(&m, 0, 0, 0, &negs, &negs, 0.0).unwrap();
        let mut up = m.clone();
        up.b_u.row_mut(0)[0] += bump;
        let (after, _) = bper_triplet_loss_and_grads(&up, 0, 0, 0, &negs, &negs, 0.0).unwrap();
        prop_assert!(after < before);
    }

    #[test]
    fn step_touches_only_triplet_rows((dims, seed) in small_dims(), u_pick in any::<usize>(), i_pick in any::<usize>()) {
        let mut m = init_random(dims, seed, 0.5).unwrap();
        let before = m.clone();
        let (u, i) = (u_pick % dims.n_users, i_pick % dims.n_items);
        let e = 0;
        let negs_u = [1usize];
        let negs_i = [dims.n_rationales - 1];
        let (_, g) = bper_triplet_loss_and_grads(&m, u, i, e, &negs_u, &negs_i, 1e-3).unwrap();
        let mut adam = AdamState::new(&m);
        adam_step(&mut m, &g, &mut adam, 0.01).unwrap();
        let allowed = |b: Block, r: usize| match b {
            Block::User => r == u,
            Block::Item => r == i,
            Block::RationaleU | Block::BiasU => r == e || negs_u.contains(&r),
            Block::RationaleI | Block::BiasI => r == e || negs_i.contains(&r),
            Block::Projection => false,
        };
        for b in Block::ALL {
            let (Some(x), Some(y)) = (before.block(b), m.block(b)) else { continue };
            for r in 0..x.rows() {
                if !allowed(b, r) {
                    prop_assert!(x.row(r).iter().zip(y.row(r)).all(|(p, q)| p.to_bits() == q.to_bits()));
                }
            }
        }
    }

    #[test]
    fn semantic_init_laws(recs in records(25), dim in 1usize..6, seed in any::<u64>()) {
        let catalog = build_catalog(&recs, None).unwrap();
        let h = build_histories(&catalog, &recs, &[]).unwrap();
        let mut table = EmbeddingTable::new(dim);
        let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(seed);
        for id in catalog.rationales.ids() {
            let v: Vec<f32> = (0..dim).map(|_| rand::Rng::gen_range(&mut rng, -2.0f32..2.0)).collect();
            table.insert(id, v).unwrap();
        }
        let (nu, ni, ne) = catalog.sizes();
        let dims = ModelDims::new(nu, ni, ne, dim).unwrap();
        let a = semantic_initialize(dims, &table, &catalog, &h).unwrap().model;
        let b = semantic_initialize(dims, &table, &catalog, &h).unwrap().model;
        prop_assert_eq!(&a, &b);
        for e in 0..ne {
            prop_assert!(a.o_u.row(e).iter().zip(a.o_i.row(e)).all(|(x, y)| x.to_bits() == y.to_bits()));
            prop_assert_eq!(a.b_u.row(e)[0], 0.0);
            prop_assert_eq!(a.b_i.row(e)[0], 0.0);
        }
        let norm = |v: &[f32]| v.iter().map(|&x| (x as f64).powi(2)).sum::<f64>().sqrt();
        for (u, hist) in h.user_rationales.iter().enumerate() {
            let pu = a.p.row(u);
            let max_norm = hist.iter().map(|&e| norm(a.o_u.row(e))).fold(0.0, f64::max);
            prop_assert!(norm(pu) <= max_norm * (1.0 + 1e-6));
            for (k, &x) in pu.iter().enumerate() {
                let lo = hist.iter().map(|&e| a.o_u.row(e)[k]).fold(f32::INFINITY, f32::min);
                let hi = hist.iter().map(|&e| a.o_u.row(e)[k]).fold(f32::NEG_INFINITY, f32::max);
                prop_assert!(x >= lo - 1e-6 && x <= hi + 1e-6);
            }
        }
    }

    #[test]
    fn embedding_read_write_identity(rows in vec((id("r", 50), vec(-1e3f32..1e3, 3)), 1..20)) {
        let mut table = EmbeddingTable::new(3);
        for (id, v) in rows {
            let _ = table.insert(&id, v);
        }
        let mut bytes = Vec::new();
        write_embeddings(&table, &mut bytes).unwrap();
        let back = parse_embeddings(&bytes).unwrap();
        prop_assert_eq!(&back, &table);
        let mut again = Vec::new();
        write_embeddings(&back, &mut again).unwrap();
        prop_assert_eq!(again, bytes);
    }

    #[test]
    fn metric_laws(perm in Just((0..30).collect::<Vec<usize>>()).prop_shuffle(), truth in vec(0usize..30, 1..8), p in 1usize..15) {
        let m = pair_metrics(&perm, &truth, p).unwrap();
        for x in [m.ndcg, m.precision, m.recall, m.f1] {
            prop_assert!((0.0..=1.0).contains(&x));
        }
        let hits = m.precision * p as f64;
        prop_assert!((hits - hits.round()).abs() < 1e-9);
        let (lhs, rhs) = (m.f1 * (m.precision + m.recall), 2.0 * m.precision * m.recall);
        prop_assert!((lhs - rhs).abs() <= 4.0 * f64::EPSILON * rhs);
        prop_assert_eq!(m.f1 == 0.0, hits.round() == 0.0);
        let (_, rec_next, _) = precision_recall_f1_at(&perm, &truth, p + 1).unwrap();
        prop_assert!(rec_next >= m.recall);
        // swapping two irrelevant entries leaves nDCG unchanged
        let irrelevant: Vec<usize> = (0..perm.len()).filter(|&k| !truth.contains(&perm[k])).collect();
        if irrelevant.len() >= 2 {
            let mut swapped = perm.clone();
            swapped.swap(irrelevant[0], irrelevant[irrelevant.len() - 1]);
            prop_assert_eq!(ndcg_at(&swapped, &truth, p).unwrap(), m.ndcg);
        }
        let o = metric_oracle(&perm, &truth, p);
        prop_assert!((o.ndcg - m.ndcg).abs() < 1e-12);
    }

    #[test]
    fn evaluate_mean_is_pair_mean((dims, seed) in small_dims(), picks in vec((any::<usize>(), any::<usize>(), any::<usize>()), 1..12)) {
        let m = init_random(dims, seed, 0.5).unwrap();
        let pairs: Vec<EvalPair> = picks
            .iter()
            .map(|&(u, i, e)| EvalPair { user: u % dims.n_users, item: i % dims.n_items, truth: vec![e % dims.n_rationales] })
            .collect();
        let report = evaluate(&m, &pairs, &Candidates::All, 3, 0.7, ScoreMode::Bper).unwrap();
        let mean = compensated_sum(report.per_pair.iter().map(|r| r.metrics.ndcg)) / pairs.len() as f64;
        let naive: f64 = report.per_pair.iter().map(|r| r.metrics.ndcg).sum::<f64>() / pairs.len() as f64;
        prop_assert!((report.ndcg - 100.0 * mean).abs() < 1e-9);
        prop_assert!((mean - naive).abs() < 1e-12);
    }
}

#[test]
fn shared_oracle_sanity() {
    let o = metric_oracle(&[3, 1, 2], &[1, 9], 2);
    assert!((o.ndcg - (1.0 / 3f64.log2()) / (1.0 + 1.0 / 3f64.log2())).abs() < 1e-15);
    assert_eq!(o.precision, 0.5);
}
