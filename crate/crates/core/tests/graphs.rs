use chrono::{NaiveDate, TimeDelta};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use stockformer::data::{compute_returns, PanelDataset};
use stockformer::graphs::{
    build_spatial_graph, build_temporal_graph, init_temporal_embedding, slot_node, struc2vec_embed,
    time_slot_of, trading_slot_indices, SLOT_NODES,
};
use stockformer::synthetic::{synthetic_bars, weekday_calendar};

#[test]
fn temporal_graph_is_two_regular() {
    let g = build_temporal_graph();
    assert_eq!(g.n_nodes, 252);
    assert_eq!(g.edges.len(), 504);
    for i in 0..g.n_nodes {
        assert_eq!(g.out_degree(i), 2, "out-degree of {i}");
        assert_eq!(g.in_degree(i), 2, "in-degree of {i}");
    }
    let mut targets: Vec<usize> = g.out_neighbors(251).collect();
    targets.sort_unstable();
    assert_eq!(targets, vec![0, 20]);
}

#[test]
fn slot_arithmetic_round_trips() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let t0 = NaiveDate::from_ymd_opt(2018, 1, 1)
        .unwrap()
        .and_hms_opt(9, 30, 0)
        .unwrap();
    for _ in 0..1000 {
        let dt = TimeDelta::seconds(rng.random_range(1..=86_400 * 3));
        let t = t0 + TimeDelta::seconds(rng.random_range(0..86_400 * 365 * 8));
        let slot = time_slot_of(t, t0, dt).unwrap();
        assert!(slot.remainder >= TimeDelta::zero() && slot.remainder < dt);
        assert_eq!(t0 + dt * slot.index as i32 + slot.remainder, t);
    }
}

#[test]
fn first_trading_days_of_consecutive_months_are_one_month_apart() {
    let calendar = weekday_calendar(NaiveDate::from_ymd_opt(2022, 1, 3).unwrap(), 300);
    let slots = trading_slot_indices(&calendar);
    let firsts: Vec<u64> = (1..calendar.len())
        .filter(|&i| {
            calendar[i].format("%m").to_string() != calendar[i - 1].format("%m").to_string()
        })
        .map(|i| slots[i])
        .collect();
    for w in firsts.windows(2) {
        assert_eq!(w[1] - w[0], 21);
        assert_eq!(slot_node(w[1]), (slot_node(w[0]) + 21) % SLOT_NODES);
    }
}

#[test]
fn temporal_smoothing_averages_self_and_successors() {
    let g = build_temporal_graph();
    let raw = init_temporal_embedding(&g, 3, 0, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
    let once = init_temporal_embedding(&g, 3, 1, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
    for i in [0usize, 17, 251] {
        for c in 0..3 {
            let want =
                (raw.row(i)[c] + raw.row((i + 1) % 252)[c] + raw.row((i + 21) % 252)[c]) / 3.0;
            assert!((once.row(i)[c] - want).abs() < 1e-15);
        }
    }
}

proptest! {
    #[test]
    fn slot_nodes_have_period_252(p in 0u64..1_000_000_000) {
        prop_assert_eq!(slot_node(p), slot_node(p + 252));
        prop_assert!(slot_node(p) < 252);
    }

    #[test]
    fn spatial_graph_is_a_correlation_matrix(seed in any::<u64>(), n in 2usize..10) {
        let panel = PanelDataset::from_bars(synthetic_bars(n, 40, 0.05, seed)).unwrap();
        let (g, _) = build_spatial_graph(&compute_returns(&panel).unwrap());
        for i in 0..n {
            prop_assert_eq!(g.weight(i, i), 1.0);
            for j in 0..n {
                prop_assert_eq!(g.weight(i, j), g.weight(j, i));
                prop_assert!((-1.0..=1.0).contains(&g.weight(i, j)));
            }
        }
    }

    #[test]
    fn struc2vec_rows_are_unit_and_seeded(seed in any::<u64>(), n in 1usize..9, dim in 1usize..6) {
        let panel = PanelDataset::from_bars(synthetic_bars(n, 30, 0.0, seed)).unwrap();
        let (g, _) = build_spatial_graph(&compute_returns(&panel).unwrap());
        let a = struc2vec_embed(&g, dim, 20, 1e-6, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        let b = struc2vec_embed(&g, dim, 20, 1e-6, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        prop_assert_eq!(
            a.values.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            b.values.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
        for i in 0..n {
            let norm = a.row(i).iter().map(|v| v * v).sum::<f64>().sqrt();
            prop_assert!((norm - 1.0).abs() < 1e-8);
        }
    }
}
