//! Distance and degree analysis against independently computed reference
//! values (exhaustive BFS oracles).

use std::collections::BTreeMap;

use proptest::prelude::*;
use skipnet_core::analysis::{
    backprop_distance, degree_stats, distances_from, hubs, loglog_degree_sweep, mbd,
    verify_prop1, verify_prop2, AnalysisError, BdQuery,
};
use skipnet_core::topology::{
    dense_topology, evenly_spaced, log_dense_v1, log_dense_v2, loglog_topology, nearest,
    nearest_half_and_log, Budget, Node, NodeId, NodeKind, ParamValue, Scheme, Topology,
};

#[test]
fn log_scheme_mbd_growth() {
    for (l, want) in [(16u32, 4u32), (24, 4), (32, 5), (64, 6), (256, 8)] {
        let t = log_dense_v1(l, &[l]).unwrap();
        assert_eq!(mbd(&t).unwrap().mbd, want, "L={l}");
    }
}

/// The 64-layer single-block comparison of all ablation schemes.
#[test]
fn scheme_comparison_mbd_at_64() {
    let l = 64u32;
    let cases: Vec<(&str, Topology, u32)> = vec![
        ("log", log_dense_v1(l, &[l]).unwrap(), 6),
        ("nearest-log", nearest(l, &[l], Budget::Log).unwrap(), 17),
        (
            "evenly-log",
            evenly_spaced(l, &[l], Budget::Log).unwrap(),
            11,
        ),
        ("nearest-half", nearest(l, &[l], Budget::Half).unwrap(), 7),
        (
            "evenly-half",
            evenly_spaced(l, &[l], Budget::Half).unwrap(),
            2,
        ),
        ("nearest-half-log", nearest_half_and_log(l, &[l]).unwrap(), 2),
    ];
    for (name, topo, want) in cases {
        assert_eq!(mbd(&topo).unwrap().mbd, want, "{name}");
    }
}

#[test]
fn dense_mbd_is_always_one() {
    for l in 1u32..=32 {
        assert_eq!(mbd(&dense_topology(l, &[l]).unwrap()).unwrap().mbd, 1);
    }
}

#[test]
fn half_bandwidth_schemes_stay_within_two_hops() {
    for l in 2u32..=64 {
        let ev = evenly_spaced(l, &[l], Budget::Half).unwrap();
        assert!(mbd(&ev).unwrap().mbd <= 2, "evenly-half L={l}");
        let nhl = nearest_half_and_log(l, &[l]).unwrap();
        assert!(mbd(&nhl).unwrap().mbd <= 2, "nearest-half-log L={l}");
    }
}

#[test]
fn report_bookkeeping_is_consistent() {
    let t = log_dense_v1(64, &[64]).unwrap();
    let r = mbd(&t).unwrap();
    assert_eq!(r.pair_count, 65 * 64 / 2);
    let hist_total: u64 = r.distance_histogram.values().sum();
    assert_eq!(hist_total, r.pair_count);
    let hist_sum: u64 = r
        .distance_histogram
        .iter()
        .map(|(&d, &c)| d as u64 * c)
        .sum();
    assert_eq!(hist_sum, r.distance_sum);
    assert!(r.mean_bd() >= 1.0 && r.mean_bd() <= r.mbd as f64);
    let (i, j) = r.witness_pair;
    assert_eq!(
        backprop_distance(&t, BdQuery { from: i, to: j }).unwrap(),
        r.mbd
    );
}

#[test]
fn distance_bound_holds_for_log_scheme() {
    for l in [16u32, 64, 256] {
        let t = log_dense_v1(l, &[l]).unwrap();
        let rep = verify_prop1(&t).unwrap();
        assert!(rep.pass, "L={l}");
        assert_eq!(rep.violations, 0);
        assert_eq!(rep.pairs_checked, (l as u64 + 1) * l as u64 / 2);
        // The bound is tight: some pair meets it exactly.
        assert_eq!(rep.max_slack, 0, "L={l}");
    }
    // Splitting into blocks only loosens the bound.
    let rep = verify_prop1(&log_dense_v1(64, &[32, 32]).unwrap()).unwrap();
    assert!(rep.pass);
    assert_eq!(rep.n_block, 2);
    // Wrong scheme is refused rather than silently checked.
    assert!(matches!(
        verify_prop1(&dense_topology(8, &[8]).unwrap()),
        Err(AnalysisError::WrongScheme { .. })
    ));
}

#[test]
fn connection_budget_sweep() {
    let rows = verify_prop2(&[16, 64, 256, 1024]).unwrap();
    let edges: Vec<u64> = rows.iter().map(|r| r.edges).collect();
    assert_eq!(edges, vec![38, 204, 872, 4336]);
    let mbds: Vec<u32> = rows.iter().map(|r| r.mbd).collect();
    assert_eq!(mbds, vec![4, 4, 5, 5]);
    let no_span: Vec<u32> = rows.iter().map(|r| r.mbd_without_span).collect();
    assert_eq!(no_span, vec![5, 6, 7, 7]);
    for r in &rows {
        assert!(r.pass(), "L={}", r.layers);
        assert!(r.mbd <= r.mbd_bound);
        assert!(r.mbd_without_span <= r.without_span_bound);
        assert!((r.edges as f64) <= r.edge_reference + 3.0 * r.layers as f64);
    }
    assert!(verify_prop2(&[3]).is_err());
}

#[test]
fn block_compressed_distances() {
    let t = log_dense_v2(24, &[12, 12], 16).unwrap();
    let r = mbd(&t).unwrap();
    assert_eq!(r.mbd, 3);
    // An order-independent witness: layers 8 and 1 sit three hops apart.
    assert_eq!(
        backprop_distance(
            &t,
            BdQuery {
                from: NodeId(8),
                to: NodeId(1)
            }
        )
        .unwrap(),
        3
    );
    // Cross-block pairs route through the compressed summary: at most
    // one hop to the summary plus one hop into the producing block.
    for i in 14..=25u32 {
        let d = distances_from(&t, NodeId(i));
        for j in 0..=12u32 {
            assert!(
                d[j as usize].unwrap() <= 2,
                "BD({i},{j}) = {:?}",
                d[j as usize]
            );
        }
    }
}

#[test]
fn degree_statistics() {
    let dense = dense_topology(10, &[10]).unwrap();
    let s = degree_stats(&dense);
    assert_eq!(s.total_edges, 55);
    assert_eq!(s.max_in_degree, 10);
    assert_eq!(s.max_out_degree, 10); // the initial node feeds every layer
    assert!((s.mean_in_degree() - 5.5).abs() < 1e-12);

    let ll = loglog_topology(16, &[16], 1).unwrap();
    let s = degree_stats(&ll);
    assert_eq!(s.total_edges, 38);
    assert_eq!(s.feature_in_sum, 38);
    assert!((s.mean_in_degree() - 2.375).abs() < 1e-12);
}

#[test]
fn degree_sweep_at_1024() {
    let rows = loglog_degree_sweep(1024, 1024, 4).unwrap();
    assert_eq!(rows.len(), 1);
    let (l, base, alt) = &rows[0];
    assert_eq!(*l, 1024);
    assert!((base.mean_in_degree() - 4336.0 / 1024.0).abs() < 1e-12);
    let delta = alt.mean_in_degree() - base.mean_in_degree();
    assert!(
        (0.898..=0.900).contains(&delta),
        "min-inputs top-up delta {delta}"
    );
}

#[test]
fn hub_extraction_and_tamper_detection() {
    let t = loglog_topology(16, &[16], 3).unwrap();
    let h = hubs(&t).unwrap();
    assert_eq!(
        h,
        vec![NodeId(0), NodeId(4), NodeId(8), NodeId(12), NodeId(16)]
    );
    assert!(matches!(
        hubs(&dense_topology(8, &[8]).unwrap()),
        Err(AnalysisError::WrongScheme { .. })
    ));
    // Tampered metadata is caught against recomputation.
    let mut params = t.scheme_params().clone();
    params.insert(
        String::from("hubs"),
        ParamValue::IntList(vec![0, 4, 8, 12, 15]),
    );
    let tampered = Topology::from_parts(
        Scheme::LogLog,
        t.num_feature_layers(),
        t.block_sizes().to_vec(),
        params,
        t.nodes().to_vec(),
        t.input_map().clone(),
    )
    .unwrap();
    assert!(matches!(hubs(&tampered), Err(AnalysisError::HubMismatch)));
}

#[test]
fn query_validation() {
    let t = log_dense_v1(8, &[8]).unwrap();
    assert!(matches!(
        backprop_distance(
            &t,
            BdQuery {
                from: NodeId(3),
                to: NodeId(3)
            }
        ),
        Err(AnalysisError::BadQuery(_))
    ));
    assert!(matches!(
        backprop_distance(
            &t,
            BdQuery {
                from: NodeId(2),
                to: NodeId(5)
            }
        ),
        Err(AnalysisError::BadQuery(_))
    ));
    assert!(matches!(
        backprop_distance(
            &t,
            BdQuery {
                from: NodeId(99),
                to: NodeId(0)
            }
        ),
        Err(AnalysisError::BadQuery(_))
    ));
}

#[test]
fn unreachable_pairs_are_reported() {
    // 1 <- 0 and 2 <- 0: node 2 cannot reach node 1 backwards.
    let nodes = vec![
        Node {
            id: NodeId(0),
            kind: NodeKind::Initial,
            block: 0,
        },
        Node {
            id: NodeId(1),
            kind: NodeKind::Feature,
            block: 0,
        },
        Node {
            id: NodeId(2),
            kind: NodeKind::Feature,
            block: 0,
        },
    ];
    let mut inputs = BTreeMap::new();
    inputs.insert(NodeId(1), vec![NodeId(0)]);
    inputs.insert(NodeId(2), vec![NodeId(0)]);
    let t = Topology::from_parts(Scheme::Custom, 2, vec![2], BTreeMap::new(), nodes, inputs)
        .unwrap();
    assert!(matches!(
        backprop_distance(
            &t,
            BdQuery {
                from: NodeId(2),
                to: NodeId(1)
            }
        ),
        Err(AnalysisError::Unreachable { .. })
    ));
    assert!(matches!(mbd(&t), Err(AnalysisError::Unreachable { .. })));
    assert_eq!(distances_from(&t, NodeId(2))[1], None);
}

#[test]
fn triangle_inequality_over_log_scheme() {
    let t = log_dense_v1(32, &[32]).unwrap();
    let dists: Vec<Vec<Option<u32>>> = (0..=32u32)
        .map(|i| distances_from(&t, NodeId(i)))
        .collect();
    for i in 2..=32u32 {
        for k in 1..i {
            for j in 0..k {
                let dij = dists[i as usize][j as usize].unwrap();
                let dik = dists[i as usize][k as usize].unwrap();
                let dkj = dists[k as usize][j as usize].unwrap();
                assert!(dij <= dik + dkj, "triangle violated at {i},{k},{j}");
            }
        }
    }
}

proptest! {
    /// The distance bound for the logarithmic scheme holds at every size.
    #[test]
    fn distance_bound_property(l in 2u32..=128) {
        let t = log_dense_v1(l, &[l]).unwrap();
        prop_assert!(verify_prop1(&t).unwrap().pass);
    }

    /// One backward hop always exists between consecutive layers.
    #[test]
    fn chain_neighbours_are_one_hop(l in 2u32..=128, i in 2u32..=128) {
        prop_assume!(i <= l);
        let t = log_dense_v1(l, &[l]).unwrap();
        let d = backprop_distance(&t, BdQuery { from: NodeId(i), to: NodeId(i - 1) }).unwrap();
        prop_assert_eq!(d, 1);
    }

    /// MBD can never undercut the information-theoretic floor of the
    /// logarithmic scheme: reaching back G layers takes at least one hop
    /// per power of two.
    #[test]
    fn log_mbd_is_at_least_two_beyond_three_layers(l in 4u32..=128) {
        let t = log_dense_v1(l, &[l]).unwrap();
        prop_assert!(mbd(&t).unwrap().mbd >= 2);
    }
}
