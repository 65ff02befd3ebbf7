mod common;

use common::*;
use proptest::prelude::*;
use xorcast::coding::{
    candidate_codes, code_receivers, code_utility, select_nct, select_ncv, select_ncv_mwis, select_ncvd, select_nonc,
    select_side_mwis, Depth,
};

fn raw_state() -> impl Strategy<Value = RawState> {
    (1usize..=4, 1usize..=8).prop_flat_map(|(clients, len)| {
        (
            prop::collection::vec((0..clients, 0.1f64..5.0, 0.0f64..80.0, prop::bool::weighted(0.8)), len),
            prop::collection::vec(prop::collection::vec(0..len, 0..=6), clients),
            prop::collection::vec(0.0f64..0.3, clients),
        )
            .prop_map(move |(packets, overheard, channel_loss)| RawState {
                clients,
                packets,
                overheard,
                channel_loss,
            })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn every_selected_code_yields_its_primary(raw in raw_state()) {
        let s = build(&raw);
        let picks = [
            select_nonc(&s.queue),
            select_nct(&s.queue, &s.nodes),
            select_ncv(&s.queue, &s.nodes, &s.estimates, s.now),
            select_ncvd(&s.queue, &s.nodes, &s.estimates, s.now, Depth::Unbounded),
            select_ncv_mwis(&s.queue, &s.nodes, &s.estimates, s.now),
        ];
        for code in picks.iter().flatten() {
            prop_assert!(decodes_primary(&s, code), "{code}");
            prop_assert!(s.queue.get(&code.primary()).unwrap().is_active());
        }
        prop_assert_eq!(picks[0].is_some(), first_active(&s).is_some());
        prop_assert!(picks.iter().all(|p| p.is_some() == picks[0].is_some()));
    }

    #[test]
    fn ncv_matches_exhaustive_search(raw in raw_state()) {
        let s = build(&raw);
        if let Some(primary) = first_active(&s) {
            let code = select_ncv(&s.queue, &s.nodes, &s.estimates, s.now).unwrap();
            prop_assert_eq!(code.primary(), primary.id);
            prop_assert_eq!(utility(&s, &members(&code)), best_utility_for(&s, primary));
        }
    }

    #[test]
    fn nct_matches_exhaustive_search(raw in raw_state()) {
        let s = build(&raw);
        if let Some(primary) = first_active(&s) {
            let code = select_nct(&s.queue, &s.nodes).unwrap();
            prop_assert_eq!(receivers(&s, &members(&code)), best_receivers_for(&s, primary));
        }
    }

    #[test]
    fn ncvd_searches_every_active_primary(raw in raw_state()) {
        let s = build(&raw);
        let ncvd = select_ncvd(&s.queue, &s.nodes, &s.estimates, s.now, Depth::Unbounded);
        match (ncvd, best_utility_any_primary(&s)) {
            (Some(code), Some(best)) => prop_assert_eq!(utility(&s, &members(&code)), best),
            (None, None) => {}
            other => prop_assert!(false, "mismatch {:?}", other),
        }
        prop_assert_eq!(
            select_ncvd(&s.queue, &s.nodes, &s.estimates, s.now, Depth::limited(1).unwrap()),
            select_ncv(&s.queue, &s.nodes, &s.estimates, s.now)
        );
    }

    #[test]
    fn deeper_search_never_hurts(raw in raw_state(), d in 1usize..6) {
        let s = build(&raw);
        let score = |depth: Depth| {
            select_ncvd(&s.queue, &s.nodes, &s.estimates, s.now, depth).map(|c| utility(&s, &members(&c)))
        };
        let shallow = score(Depth::limited(d).unwrap());
        let deep = score(Depth::limited(d + 1).unwrap());
        prop_assert!(deep >= shallow);
    }

    #[test]
    fn mwis_is_a_feasible_lower_bound(raw in raw_state()) {
        let s = build(&raw);
        if let Some(primary) = first_active(&s) {
            let code = select_side_mwis(primary, &s.queue, &s.nodes, &s.estimates, s.now);
            let u = utility(&s, &members(&code));
            prop_assert!(u >= 0.0);
            prop_assert!(u <= best_utility_for(&s, primary));
        }
    }

    #[test]
    fn library_scores_agree_with_reference(raw in raw_state()) {
        let s = build(&raw);
        if let Some(primary) = first_active(&s) {
            let target = &s.nodes[primary.target];
            let codes = candidate_codes(primary, &s.queue, target);
            prop_assert_eq!(codes.len(), all_codes(&s, primary).len());
            for code in &codes {
                let lib = code_utility(code, &s.queue, &s.nodes, &s.estimates, s.now);
                let reference = utility(&s, &members(code));
                prop_assert!((lib.total - reference).abs() <= 1e-9);
                prop_assert!((lib.total - lib.per_node.iter().sum::<f64>()).abs() <= 1e-9);
                prop_assert!(lib.receivers <= s.nodes.len());
                prop_assert_eq!(code_receivers(code, &s.queue, &s.nodes), receivers(&s, &members(code)));
            }
        }
    }

    #[test]
    fn unit_weights_make_ncv_count_receivers(raw in raw_state()) {
        let s = build(&degenerate(raw));
        if let Some(ncv) = select_ncv(&s.queue, &s.nodes, &s.estimates, s.now) {
            let nct = select_nct(&s.queue, &s.nodes).unwrap();
            prop_assert_eq!(utility(&s, &members(&ncv)), receivers(&s, &members(&nct)) as f64);
        }
    }

    #[test]
    fn selection_is_deterministic(raw in raw_state()) {
        let a = build(&raw);
        let b = build(&raw);
        prop_assert_eq!(
            select_ncvd(&a.queue, &a.nodes, &a.estimates, a.now, Depth::Unbounded),
            select_ncvd(&b.queue, &b.nodes, &b.estimates, b.now, Depth::Unbounded)
        );
        prop_assert_eq!(select_nct(&a.queue, &a.nodes), select_nct(&b.queue, &b.nodes));
    }
}

#[test]
fn expiring_head_is_skipped_by_ncvd() {
    // Head packet is due now; a fresh packet behind it is worth sending.
    let raw = RawState {
        clients: 2,
        packets: vec![(0, 5.0, 0.0, true), (1, 1.0, 80.0, true)],
        overheard: vec![vec![], vec![]],
        channel_loss: vec![0.0, 0.0],
    };
    let s = build(&raw);
    let code = select_ncvd(&s.queue, &s.nodes, &s.estimates, s.now, Depth::Unbounded).unwrap();
    assert_eq!(code.target(), 1);
    assert_eq!(
        utility(
            &s,
            &members(&select_ncv(&s.queue, &s.nodes, &s.estimates, s.now).unwrap())
        ),
        0.0
    );
}

#[test]
fn ncv_drops_side_packets_that_would_arrive_late() {
    // Client 0 knows both side packets; client 1's is due now, client 2's is not.
    let raw = RawState {
        clients: 3,
        packets: vec![(0, 1.0, 80.0, true), (1, 1.0, 0.0, true), (2, 1.0, 80.0, true)],
        overheard: vec![vec![1, 2], vec![0, 2], vec![0, 1]],
        channel_loss: vec![0.0; 3],
    };
    let s = build(&raw);
    let code = select_ncv(&s.queue, &s.nodes, &s.estimates, s.now).unwrap();
    let ids: Vec<u32> = code.members().iter().map(|id| id.flow).collect();
    assert_eq!(ids, vec![0, 2]);
    // NCT ignores the deadline and sends all three.
    let nct = select_nct(&s.queue, &s.nodes).unwrap();
    assert_eq!(nct.len(), 3);
    assert_eq!(receivers(&s, &members(&nct)), 3);
}
