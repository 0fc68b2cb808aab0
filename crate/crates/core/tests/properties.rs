//! Invariants that must hold for every input, checked with proptest.

use causal_twin::defense::{defend_episode, DefenseSpec};
use causal_twin::detect::{detection_metrics, quantile_upper_bound, DetectorState};
use causal_twin::inference::{simulate_do, Exogenous};
use causal_twin::rootcause::{exact_shapley, sampled_shapley};
use causal_twin::synth::PlantOptions;
use causal_twin::validate::{shd, shd_raw};
use causal_twin::{CausalGraph, Edge, Intervention, Label, PlantTemplate, Scm, TimeSeriesFrame};
use proptest::prelude::*;

fn small_plant(seed: u64) -> PlantTemplate {
    PlantTemplate::staged("mini", 2, 1, seed, PlantOptions::default()).unwrap()
}

/// Random lagged graph over `n` nodes; lag-0 edges point from lower to
/// higher index so the contemporaneous part stays acyclic.
fn graph_strategy(n: usize, max_lag: usize) -> impl Strategy<Value = CausalGraph> {
    prop::collection::btree_set((0..n, 0..=max_lag, 0..n), 0..3 * n).prop_map(move |set| {
        let edges: Vec<Edge> = set
            .into_iter()
            .filter(|&(s, l, d)| l > 0 || s < d)
            .map(|(s, l, d)| Edge::new(s, l, d))
            .collect();
        let names = (0..n).map(|i| format!("V{i}")).collect();
        CausalGraph::new(names, max_lag, 0.05, edges).unwrap()
    })
}

fn perturbed(frame: &TimeSeriesFrame, bumps: &[(usize, usize, f64)]) -> TimeSeriesFrame {
    let n = frame.n_vars();
    let mut values = frame.values().to_vec();
    for &(t, v, d) in bumps {
        let (t, v) = (t % frame.len(), v % n);
        values[t * n + v] = if frame.meta()[v].is_binary() { 1.0 - values[t * n + v] } else { values[t * n + v] + d };
    }
    TimeSeriesFrame::new(frame.meta().to_vec(), frame.timestamps().to_vec(), values, None).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn generation_and_simulation_are_deterministic(plant_seed in 0u64..50, seed in any::<u64>()) {
        let plant = small_plant(plant_seed);
        prop_assert_eq!(plant.generate(300, seed).unwrap(), plant.generate(300, seed).unwrap());
        let scm = &plant.scm;
        let history = vec![0.0; scm.max_lag() * scm.n_vars()];
        let run = || simulate_do(scm, &Intervention::empty(), &history, &Exogenous::Sampled { samples: 4, seed }, 6).unwrap();
        prop_assert_eq!(run(), run());
    }

    #[test]
    fn mcai_is_weighted_sum_of_scores(plant_seed in 0u64..50, seed in any::<u64>(), bumps in prop::collection::vec((0usize..200, 0usize..64, -5.0f64..5.0), 0..8)) {
        let plant = small_plant(plant_seed);
        let frame = perturbed(&plant.generate(200, seed).unwrap(), &bumps);
        let mut det = DetectorState::new(plant.scm.clone());
        let w = det.weights().to_vec();
        for t in 0..frame.len() {
            if let Ok(s) = det.score_step(t as i64, frame.row(t)) {
                let sum: f64 = s.scores.iter().zip(&w).map(|(a, b)| a * b).sum();
                prop_assert!((s.mcai - sum).abs() <= 1e-12 * sum.abs().max(1.0));
                prop_assert!(s.scores.iter().all(|&x| x >= 0.0));
            }
        }
    }

    #[test]
    fn alarms_shrink_as_threshold_rises(
        plant_seed in 0u64..50,
        seed in any::<u64>(),
        bumps in prop::collection::vec((0usize..400, 0usize..64, -8.0f64..8.0), 1..12),
        lo in 0.0f64..20.0,
        gap in 0.0f64..20.0,
    ) {
        let plant = small_plant(plant_seed);
        let frame = perturbed(&plant.generate(400, seed).unwrap(), &bumps);
        let mut det = DetectorState::new(plant.scm.clone());
        let mcai = det.mcai_series(&frame);
        let hi = lo + gap;
        for (t, &m) in mcai.iter().enumerate() {
            if m > hi {
                prop_assert!(m > lo, "row {}", t);
            }
        }
        let labels: Vec<Label> = (0..frame.len()).map(|t| if bumps.iter().any(|b| b.0 == t) { Label::Attack(1) } else { Label::Normal }).collect();
        let a = detection_metrics(&mcai, &labels, lo);
        let b = detection_metrics(&mcai, &labels, hi);
        prop_assert!(b.recall <= a.recall);
        prop_assert!(b.false_alarm_rate <= a.false_alarm_rate);
    }

    #[test]
    fn shapley_efficiency_symmetry_dummy(m in 3usize..8, table in prop::collection::vec(-10.0f64..10.0, 96)) {
        // Players 0 and 1 are interchangeable; the last player is a dummy.
        let dummy = m - 1;
        let middle = (1u64 << (m - 3)) - 1;
        let f = |mask: u64| {
            let pair = (mask & 1) + (mask >> 1 & 1);
            table[(pair * 32 + (mask >> 2 & middle)) as usize]
        };
        for res in [exact_shapley(f, m), sampled_shapley(f, m, 400, 5)] {
            let total: f64 = res.phi.iter().sum();
            prop_assert!((total - (f((1 << m) - 1) - f(0))).abs() < 1e-9);
            prop_assert!(res.phi[dummy].abs() < 1e-9, "dummy {}", res.phi[dummy]);
        }
        let ex = exact_shapley(f, m);
        prop_assert!((ex.phi[0] - ex.phi[1]).abs() < 1e-9);
    }

    #[test]
    fn shd_is_a_normalised_metric(a in graph_strategy(6, 2), b in graph_strategy(6, 2), c in graph_strategy(6, 2)) {
        prop_assert_eq!(shd_raw(&a, &a).unwrap(), 0);
        prop_assert_eq!(shd_raw(&a, &b).unwrap(), shd_raw(&b, &a).unwrap());
        prop_assert!(shd_raw(&a, &c).unwrap() <= shd_raw(&a, &b).unwrap() + shd_raw(&b, &c).unwrap());
        let s = shd(&a, &b).unwrap();
        prop_assert!((0.0..=1.0).contains(&s));
    }

    #[test]
    fn no_op_defense_replays_the_episode_exactly(plant_seed in 0u64..50, seed in any::<u64>(), bumps in prop::collection::vec((0usize..150, 0usize..64, -6.0f64..6.0), 0..6)) {
        let plant = small_plant(plant_seed);
        let frame = perturbed(&plant.generate(150, seed).unwrap(), &bumps);
        let mut det = DetectorState::new(plant.scm.clone());
        det.set_threshold(0.0);
        let out = defend_episode(&det, &frame, &DefenseSpec::no_op()).unwrap();
        prop_assert_eq!(out.values(), frame.values());
    }

    #[test]
    fn detector_state_depends_only_on_the_lag_window(plant_seed in 0u64..50, s1 in any::<u64>(), s2 in any::<u64>(), prefix in 1usize..300) {
        let plant = small_plant(plant_seed);
        let a = plant.generate(prefix + 20, s1).unwrap();
        let b = plant.generate(prefix + 20, s2).unwrap();
        let depth = plant.scm.max_lag() + 1;
        let mut da = DetectorState::new(plant.scm.clone());
        let mut db = DetectorState::new(plant.scm.clone());
        for t in 0..prefix {
            let _ = da.step(t as i64, a.row(t));
            let _ = db.step(t as i64, b.row(t));
        }
        // Feed both the same tail; after `depth` rows their outputs agree.
        for k in 0..20 {
            let t = prefix + k;
            let ra = da.score_step(t as i64, a.row(t));
            let rb = db.score_step(t as i64, a.row(t));
            if k + 1 >= depth {
                let (ra, rb) = (ra.unwrap(), rb.unwrap());
                prop_assert_eq!(ra.mcai.to_bits(), rb.mcai.to_bits());
                prop_assert_eq!(ra.scores, rb.scores);
            }
        }
    }

    #[test]
    fn quantile_bound_is_conservative(xs in prop::collection::vec(-100.0f64..100.0, 10..400), q in 0.5f64..0.999, gap in 0usize..5) {
        let ub = quantile_upper_bound(&xs, q, gap);
        let mut sorted = xs.clone();
        sorted.sort_by(f64::total_cmp);
        let below = sorted.iter().filter(|&&x| x <= ub).count() as f64;
        prop_assert!(below >= q * xs.len() as f64 - 1.0);
        prop_assert!(ub <= sorted[sorted.len() - 1]);
    }

    #[test]
    fn scm_json_round_trip(plant_seed in 0u64..200) {
        let scm = small_plant(plant_seed).scm;
        let back = Scm::from_json(&scm.to_json().unwrap()).unwrap();
        prop_assert_eq!(back.graph_hash(), scm.graph_hash());
        prop_assert_eq!(back.equations(), scm.equations());
    }
}
