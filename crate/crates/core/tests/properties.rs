use fedcbmir_core::cae::FeatureVector;
use fedcbmir_core::eval::timing_summary;
use fedcbmir_core::fed::{fedavg_aggregate, ClientUpdate};
use fedcbmir_core::numerics::{LayoutId, ModelWeights};
use fedcbmir_core::retrieval::{euclidean, EntryMeta, FeatureIndex, IndexEntry, Scenario};
use fedcbmir_core::{Label, Magnification, Split};
use proptest::prelude::*;

fn entry(id: String, vector: Vec<f32>, m: Option<Magnification>) -> IndexEntry {
    IndexEntry {
        meta: EntryMeta {
            id,
            label: Label::Benign,
            magnification: m,
            center: "c".into(),
            split: Split::Train,
        },
        vector,
    }
}

fn mag(i: u8) -> Option<Magnification> {
    Magnification::ALL.get(i as usize).copied()
}

fn scalar_distance(a: &[f32], b: &[f32]) -> f64 {
    let mut s = 0.0f64;
    for i in 0..a.len() {
        let d = a[i] as f64 - b[i] as f64;
        s += d * d;
    }
    s.sqrt()
}

proptest! {
    #[test]
    fn euclidean_matches_scalar_loop(pairs in prop::collection::vec((-100.0f32..100.0, -100.0f32..100.0), 1..300)) {
        let (a, b): (Vec<f32>, Vec<f32>) = pairs.into_iter().unzip();
        let d = euclidean(&a, &b).unwrap();
        let o = scalar_distance(&a, &b);
        prop_assert!((d - o).abs() <= 1e-10 * o.max(1.0));
    }

    #[test]
    fn sen1_stays_in_partition_and_is_sorted(
        vecs in prop::collection::vec((prop::collection::vec(-5.0f32..5.0, 4), 0u8..5), 1..60),
        q in prop::collection::vec(-5.0f32..5.0, 4),
        qm in 0u8..5,
        k in 1usize..8,
    ) {
        let entries: Vec<_> = vecs.iter().enumerate().map(|(i, (v, m))| entry(format!("e{i}"), v.clone(), mag(*m))).collect();
        let index = FeatureIndex::new(LayoutId(0), entries).unwrap();
        let query = FeatureVector::new("q", q);
        match index.rank(&query, k, Scenario::Sen1, mag(qm)) {
            Ok(groups) => {
                let hits = &groups[0].hits;
                let available = vecs.iter().filter(|(_, m)| mag(*m) == mag(qm)).count();
                prop_assert_eq!(hits.len(), k.min(available));
                prop_assert!(hits.iter().all(|h| h.magnification == mag(qm)));
                prop_assert!(hits.windows(2).all(|w| w[0].distance <= w[1].distance));
            }
            Err(fedcbmir_core::Error::EmptyPartition(_)) => {
                prop_assert!(vecs.iter().all(|(_, m)| mag(*m) != mag(qm)));
            }
            Err(e) => prop_assert!(false, "{e}"),
        }
    }

    #[test]
    fn far_entries_never_displace_top_k(
        vecs in prop::collection::vec(prop::collection::vec(-1.0f32..1.0, 3), 1..40),
        far in 1usize..10,
        k in 1usize..6,
    ) {
        let base: Vec<_> = vecs.iter().enumerate().map(|(i, v)| entry(format!("e{i}"), v.clone(), None)).collect();
        let mut prepended: Vec<_> = (0..far).map(|i| entry(format!("far{i}"), vec![1e3 + i as f32; 3], None)).collect();
        prepended.extend(base.iter().cloned());
        let q = FeatureVector::new("q", vec![0.0; 3]);
        let ids = |idx: FeatureIndex| -> Vec<String> {
            idx.rank(&q, k, Scenario::Sen1, None).unwrap()[0].hits.iter().map(|h| h.entry_id.clone()).collect()
        };
        let a = ids(FeatureIndex::new(LayoutId(0), base).unwrap());
        let b = ids(FeatureIndex::new(LayoutId(0), prepended).unwrap());
        let n = a.len();
        prop_assert_eq!(a, b[..n].to_vec());
    }

    #[test]
    fn own_id_is_never_a_hit(vecs in prop::collection::vec(prop::collection::vec(-1.0f32..1.0, 2), 2..30), pick in any::<prop::sample::Index>()) {
        let entries: Vec<_> = vecs.iter().enumerate().map(|(i, v)| entry(format!("e{i}"), v.clone(), None)).collect();
        let i = pick.index(entries.len());
        let q = FeatureVector::new(format!("e{i}"), vecs[i].clone());
        let index = FeatureIndex::new(LayoutId(0), entries).unwrap();
        let hits = &index.rank(&q, vecs.len(), Scenario::Sen1, None).unwrap()[0].hits;
        prop_assert_eq!(hits.len(), vecs.len() - 1);
        prop_assert!(hits.iter().all(|h| h.entry_id != q.source_id));
    }

    #[test]
    fn timing_summary_matches_oracle(xs in prop::collection::vec(0.0f64..10.0, 1..200)) {
        let (mean, p95) = timing_summary(&xs).unwrap();
        let mut s = xs.clone();
        s.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let rank = ((0.95 * xs.len() as f64).ceil() as usize).max(1);
        let oracle_mean = xs.iter().sum::<f64>() / xs.len() as f64;
        prop_assert!((mean - oracle_mean).abs() <= 1e-9);
        prop_assert_eq!(p95, s[rank - 1]);
    }

    #[test]
    fn fedavg_five_updates_match_weighted_mean(
        ws in prop::collection::vec((1u64..50, prop::collection::vec(-10.0f32..10.0, 16)), 5),
    ) {
        let updates: Vec<_> = ws.iter().enumerate().map(|(i, (n, w))| ClientUpdate {
            client_id: format!("c{i}"),
            round: 0,
            n_k: *n,
            weights: ModelWeights::new(LayoutId(9), w.clone()),
            loss: 0.0,
        }).collect();
        let agg = fedavg_aggregate(&updates).unwrap();
        let total: u64 = ws.iter().map(|(n, _)| n).sum();
        for j in 0..16 {
            let oracle: f64 = ws.iter().map(|(n, w)| *n as f64 * w[j] as f64).sum::<f64>() / total as f64;
            prop_assert!((agg.values[j] as f64 - oracle).abs() <= 1e-6 * oracle.abs().max(1.0));
        }
    }
}
