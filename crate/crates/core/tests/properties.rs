use corl_core::continual::{project_agem, project_gem};
use corl_core::data::{generate_dataset, Quality};
use corl_core::env::{self, EnvState, Family, TaskSpec};
use corl_core::metrics::{parse_raw_csv, raw_csv, ResultMatrix};
use corl_core::selection::{nearest_state, select_buffer, DistanceMetric, SelectionConfig, Selector, SelectorContext};
use proptest::prelude::*;

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn family() -> impl Strategy<Value = TaskSpec> {
    prop_oneof![
        (-3.2..3.2f64).prop_map(|p| TaskSpec::new(Family::PmDir, p)),
        (0.0..2.0f64).prop_map(|p| TaskSpec::new(Family::PmVel, p)),
    ]
}

proptest! {
    #[test]
    fn reward_is_bounded(task in family(), vel in prop::collection::vec(-50.0..50.0f64, 2), act in prop::collection::vec(-20.0..20.0f64, 2)) {
        let d = task.family.dims();
        let r = env::reward(&task, &vel[..d], &act[..d]);
        prop_assert!(r.abs() <= task.r_max);
    }

    #[test]
    fn velocity_stays_clamped(task in family(), actions in prop::collection::vec(-5.0..5.0f64, 2..120)) {
        let d = task.family.dims();
        let mut s = EnvState { pos: vec![0.0; d], vel: vec![0.0; d], step: 0 };
        for chunk in actions.chunks_exact(d) {
            if s.step >= task.horizon {
                break;
            }
            let (next, _, _) = env::step(&task, &s, chunk).unwrap();
            prop_assert!(next.vel.iter().all(|v| v.abs() <= task.v_max));
            let again = env::step(&task, &s, chunk).unwrap().0;
            prop_assert_eq!(&again, &next);
            s = next;
        }
    }

    #[test]
    fn agem_projection_is_feasible(g in prop::collection::vec(-5.0..5.0f64, 1..50), seed in any::<u64>()) {
        let mut r = corl_core::rng::seeded(seed);
        use rand::Rng;
        let reference: Vec<f64> = g.iter().map(|_| r.random_range(-5.0..5.0)).collect();
        let out = project_agem(&g, &reference);
        prop_assert!(dot(&out, &reference) >= -1e-9);
        if dot(&g, &reference) >= 0.0 {
            prop_assert_eq!(out, g);
        }
    }

    #[test]
    fn gem_projection_is_feasible(dim in 1usize..50, k in 1usize..=4, seed in any::<u64>()) {
        use rand::Rng;
        let mut r = corl_core::rng::seeded(seed);
        let mut v = |n| (0..n).map(|_| r.random_range(-1.0..1.0)).collect::<Vec<f64>>();
        let g = v(dim);
        let mem: Vec<Vec<f64>> = (0..k).map(|_| v(dim)).collect();
        let out = project_gem(&g, &mem);
        for m in &mem {
            prop_assert!(dot(&out, m) >= -1e-9, "{}", dot(&out, m));
        }
        if mem.iter().all(|m| dot(&g, m) >= 0.0) {
            prop_assert_eq!(&out, &g);
        }
        let single = project_gem(&g, &mem[..1]);
        let agem = project_agem(&g, &mem[0]);
        for (a, b) in single.iter().zip(&agem) {
            prop_assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn result_matrix_csv_round_trip(rows in prop::collection::vec(prop::collection::vec(-500.0..500.0f64, 3), 3)) {
        let mut m = ResultMatrix::new(3);
        for (i, row) in rows.iter().enumerate() {
            m.push_row(row[..=i].to_vec()).unwrap();
        }
        let text = raw_csv(&[(4, m.clone())]).unwrap();
        let back = parse_raw_csv(&text).unwrap();
        prop_assert_eq!(back, vec![(4, m)]);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn nearest_state_is_optimal(seed in 0u64..1000, q in prop::collection::vec(-3.0..3.0f32, 4)) {
        let ds = generate_dataset(&TaskSpec::new(Family::PmDir, 0.7), Quality::MediumRandom, 2, seed).unwrap();
        let (e, t) = nearest_state(&ds, &q, DistanceMetric::StateL2, &SelectorContext::default()).unwrap();
        let d = |s: &[f32]| s.iter().zip(&q).map(|(a, b)| ((a - b) as f64).powi(2)).sum::<f64>();
        let best = d(&ds.episodes[e].transitions[t].s);
        for (_, tr) in ds.iter_indexed() {
            prop_assert!(d(&tr.s) >= best);
        }
    }

    #[test]
    fn buffers_hold_dataset_transitions(seed in 0u64..1000, capacity in 1usize..500) {
        let ds = generate_dataset(&TaskSpec::new(Family::PmVel, 0.5), Quality::MediumRandom, 3, seed).unwrap();
        let cfg = SelectionConfig { seed, ..Default::default() };
        let mut rho = || vec![0.0f32; 2];
        for sel in [Selector::Random, Selector::Reward, Selector::Coverage] {
            let b = select_buffer(&ds, sel, capacity, &SelectorContext::default(), &cfg, &mut rho).unwrap();
            prop_assert_eq!(b.transitions.len(), capacity.min(ds.transition_count()));
            for ((e, t), tr) in b.provenance.iter().zip(&b.transitions) {
                prop_assert_eq!(ds.get(*e, *t).unwrap(), tr);
            }
        }
    }
}
