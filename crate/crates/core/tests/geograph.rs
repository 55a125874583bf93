use std::collections::BTreeSet;

use geolang::dgg::{CellId, LatLng};
use geolang::geograph::{self, EdgeType, GraphBuilder, GraphConfig, HeteroGraph, NodeType, PoiRecord, QueryRecord, SessionRecord};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_pois(n: usize, seed: u64) -> Vec<PoiRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // a handful of tight clusters so that many POIs share level-15 cells
    let centers: Vec<(f64, f64)> = (0..5).map(|_| (rng.random_range(20.0..40.0), rng.random_range(100.0..120.0))).collect();
    (0..n)
        .map(|i| {
            let (clat, clng) = centers[i % centers.len()];
            PoiRecord {
                poi_id: format!("p{i}"),
                name: format!("Place {i}"),
                address: format!("{i} Some Road"),
                poi_type: "Shop".into(),
                lat: clat + rng.random_range(-0.003..0.003),
                lng: clng + rng.random_range(-0.003..0.003),
            }
        })
        .collect()
}

fn pcp_edges_by_key(g: &HeteroGraph) -> BTreeSet<(String, String)> {
    g.edges(EdgeType::PcP)
        .into_iter()
        .map(|(a, b)| {
            let (ka, kb) = (g.node(a).key.clone(), g.node(b).key.clone());
            if ka < kb {
                (ka, kb)
            } else {
                (kb, ka)
            }
        })
        .collect()
}

fn brute_force_pcp(pois: &[PoiRecord], level: u8) -> BTreeSet<(String, String)> {
    let mut out = BTreeSet::new();
    for (i, a) in pois.iter().enumerate() {
        for b in &pois[i + 1..] {
            let ca = CellId::from_latlng(LatLng::new(a.lat, a.lng).unwrap(), level).unwrap();
            let cb = CellId::from_latlng(LatLng::new(b.lat, b.lng).unwrap(), level).unwrap();
            if ca == cb {
                let (x, y) = (a.poi_id.clone(), b.poi_id.clone());
                out.insert(if x < y { (x, y) } else { (y, x) });
            }
        }
    }
    out
}

fn colocate(pois: Vec<PoiRecord>) -> HeteroGraph {
    let mut b = GraphBuilder::new(GraphConfig::default());
    b.ingest_pois(pois).unwrap();
    b.build_colocation();
    b.freeze()
}

#[test]
fn colocation_matches_brute_force_oracle() {
    for (n, seed) in [(50, 1), (400, 2), (1000, 3)] {
        let pois = random_pois(n, seed);
        let oracle = brute_force_pcp(&pois, 15);
        let g = colocate(pois);
        assert_eq!(pcp_edges_by_key(&g), oracle, "n={n}");
        assert!(!oracle.is_empty());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn colocation_is_permutation_invariant(seed in 0u64..1000, shuffle in 0u64..1000) {
        use rand::seq::SliceRandom;
        let pois = random_pois(60, seed);
        let mut shuffled = pois.clone();
        shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(shuffle));
        prop_assert_eq!(pcp_edges_by_key(&colocate(pois)), pcp_edges_by_key(&colocate(shuffled)));
    }

    #[test]
    fn edge_domains_hold(seed in 0u64..1000) {
        let g = random_graph(80, seed);
        for t in EdgeType::ALL {
            for (a, b) in g.edges(t) {
                prop_assert_ne!(a, b);
                let (ta, tb) = (g.node(a).node_type, g.node(b).node_type);
                match t {
                    EdgeType::QcP => prop_assert!(ta != tb),
                    _ => prop_assert!(ta == NodeType::Poi && tb == NodeType::Poi),
                }
            }
        }
        for v in 0..g.len() as u32 {
            for t in [EdgeType::QcP, EdgeType::PcP] {
                let ns = g.neighbors(v, t);
                prop_assert!(ns.windows(2).all(|w| w[0] < w[1]));
                for &u in ns {
                    prop_assert!(g.neighbors(u, t).contains(&v));
                }
            }
            let qs = g.neighbors(v, EdgeType::QcP).iter().filter(|&&u| g.node(u).node_type == NodeType::Query).count();
            prop_assert!(qs <= 4);
        }
    }
}

fn random_graph(n_pois: usize, seed: u64) -> HeteroGraph {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabc);
    let pois = random_pois(n_pois, seed);
    let clicks: Vec<_> = (0..n_pois * 3)
        .map(|_| QueryRecord {
            text: format!("q{}", rng.random_range(0..20)),
            clicked_poi_id: format!("p{}", rng.random_range(0..n_pois + 5)),
            count: rng.random_range(1..10),
        })
        .collect();
    let sessions: Vec<_> = (0..n_pois)
        .map(|_| SessionRecord { poi_ids: (0..rng.random_range(1..5)).map(|_| format!("p{}", rng.random_range(0..n_pois))).collect() })
        .collect();
    HeteroGraph::build(GraphConfig::default(), pois, clicks, sessions).unwrap()
}

#[test]
fn large_snapshot_round_trip_is_byte_stable() {
    let g = random_graph(10_000, 11);
    assert!(g.len() >= 10_000);
    let bytes = geograph::save_snapshot(&g);
    let back = geograph::load_snapshot(&bytes).unwrap();
    assert_eq!(back, g);
    assert_eq!(geograph::save_snapshot(&back), bytes);
}
