use std::collections::BTreeMap;

use proptest::prelude::*;
use xling_core::corpus::LanguageMeta;
use xling_core::graph::{
    analyze, build_graph, graph_from_json, graph_to_json, BloodType, TransferBin, TransferGraph, GRAPH_SCHEMA,
};
use xling_core::matrix::{Provenance, ScoreMatrix};
use xling_core::synthetic::{generic_metas, random_score_matrix};

fn matrix_from(n: usize, values: &[f64]) -> (ScoreMatrix, BTreeMap<String, LanguageMeta>) {
    let metas = generic_metas(n, 3);
    let codes: Vec<String> = metas.keys().cloned().collect();
    let mut m = ScoreMatrix::new(codes.clone(), Provenance::Ingested);
    for (i, s) in codes.iter().enumerate() {
        for (j, t) in codes.iter().enumerate() {
            let v = values[i * n + j];
            if i == j {
                m.set_mono(s, v);
            } else {
                m.set_bilingual(s, t, v);
            }
        }
    }
    (m, metas)
}

fn matrices(max_n: usize) -> impl Strategy<Value = (ScoreMatrix, BTreeMap<String, LanguageMeta>)> {
    (2..=max_n).prop_flat_map(|n| prop::collection::vec(0.01f64..=1.0, n * n).prop_map(move |v| matrix_from(n, &v)))
}

fn check_identities(g: &TransferGraph) {
    assert_eq!(g.total_donation(), g.total_ft());
    assert_eq!(g.total_recipience(), g.total_ft());
    for node in g.nodes.values() {
        let expected = BloodType::classify(node.donation, node.recipience);
        assert_eq!(node.blood_type, expected);
    }
    for e in g.edges.values() {
        assert_eq!(e.bin, TransferBin::from_percent(e.ft_percent));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn sums_agree_exactly((m, metas) in matrices(8)) {
        let g = build_graph(&m, &metas).unwrap();
        let n = m.languages.len();
        prop_assert_eq!(g.edges.len(), n * (n - 1));
        check_identities(&g);
    }

    #[test]
    fn power_of_two_scaling_is_bitwise((m, metas) in matrices(8), up in any::<bool>()) {
        let c = if up { 2.0 } else { 0.5 };
        let g = build_graph(&m, &metas).unwrap();
        let h = build_graph(&m.scaled(c), &metas).unwrap();
        for (k, e) in &g.edges {
            prop_assert_eq!(e.ft, h.edges[k].ft);
        }
        for (k, n) in &g.nodes {
            prop_assert_eq!(n.donation, h.nodes[k].donation);
            prop_assert_eq!(n.blood_type, h.nodes[k].blood_type);
        }
    }

    #[test]
    fn node_sums_match_brute_force((m, metas) in matrices(6)) {
        let g = build_graph(&m, &metas).unwrap();
        for s in &m.languages {
            let mut donation = 0.0;
            let mut recipience = 0.0;
            for t in &m.languages {
                if s != t {
                    donation += (m.bilingual(s, t).unwrap() - m.mono(t).unwrap()) / m.mono(t).unwrap();
                    recipience += (m.bilingual(t, s).unwrap() - m.mono(s).unwrap()) / m.mono(s).unwrap();
                }
            }
            let node = &g.nodes[s];
            let tol = 1e-12 * (1.0 + g.total_ft().abs().max(donation.abs()));
            prop_assert!((node.donation - donation).abs() <= tol);
            prop_assert!((node.recipience - recipience).abs() <= tol);
        }
    }

    #[test]
    fn json_round_trip_is_lossless((m, metas) in matrices(5)) {
        let g = build_graph(&m, &metas).unwrap();
        let back = graph_from_json(&graph_to_json(&g)).unwrap();
        prop_assert_eq!(back, g);
    }
}

#[test]
fn export_validates_against_schema() {
    let schema: serde_json::Value = serde_json::from_str(GRAPH_SCHEMA).unwrap();
    let validator = jsonschema::validator_for(&schema).unwrap();
    let (m, metas) = random_score_matrix(22, 0.05, 0.6, 9);
    let g = build_graph(&m, &metas).unwrap();
    let doc: serde_json::Value = serde_json::from_str(&graph_to_json(&g)).unwrap();
    let errors: Vec<String> = validator.iter_errors(&doc).map(|e| e.to_string()).collect();
    assert!(errors.is_empty(), "{errors:?}");
    assert_eq!(doc["edges"].as_array().unwrap().len(), 22 * 21);

    let mut broken = doc.clone();
    broken["edges"][0]["bin"] = serde_json::json!("Huge");
    assert!(!validator.is_valid(&broken));
}

#[test]
fn analytics_on_a_large_graph_are_available() {
    let (m, metas) = random_score_matrix(22, 0.05, 0.6, 3);
    let g = build_graph(&m, &metas).unwrap();
    let a = analyze(&g);
    let r = a.reciprocity.value().unwrap();
    assert_eq!(r.n, 22 * 21 / 2);
    assert!((-1.0..=1.0).contains(&r.r));
    assert_eq!(a.bin_histogram.values().sum::<usize>(), 22 * 21);
}
