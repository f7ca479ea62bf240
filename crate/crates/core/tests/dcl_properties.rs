use faultline::dcl::fixture::DclInstance;
use faultline::dcl::{attention_weights, bag_and_probs, loss_hier, Dims};
use ndarray::Array2;
use proptest::prelude::*;

fn dims() -> Dims {
    Dims { embed: 16, hidden: 8, projection: 8, rank: 4, agent_slots: 5 }
}

fn argmax(v: &[f64]) -> usize {
    v.iter().enumerate().fold(0, |best, (i, x)| if *x > v[best] { i } else { best })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn attention_is_a_distribution(seed in any::<u64>()) {
        let inst = DclInstance::random(seed, dims());
        let alpha = attention_weights(inst.turns.view(), &inst.params).unwrap();
        prop_assert!((alpha.sum() - 1.0).abs() < 1e-9);
        prop_assert!(alpha.iter().all(|&a| a > 0.0));
    }

    #[test]
    fn losses_are_non_negative(seed in any::<u64>()) {
        let e = DclInstance::random(seed, dims()).evaluate().unwrap();
        prop_assert!(e.loss_cls >= 0.0 && e.loss_hier >= 0.0 && e.loss_con >= -1e-12 && e.loss_total >= -1e-12);
    }

    #[test]
    fn agent_argmax_ignores_bag_scale(seed in any::<u64>(), scale in 0.01f64..100.0) {
        let inst = DclInstance::random(seed, dims());
        let alpha = attention_weights(inst.turns.view(), &inst.params).unwrap();
        let base = bag_and_probs(inst.turns.view(), alpha.view(), &inst.banks, &inst.params).unwrap();
        let scaled_turns = &inst.turns * scale;
        let scaled = bag_and_probs(scaled_turns.view(), alpha.view(), &inst.banks, &inst.params).unwrap();
        prop_assert_eq!(argmax(base.p_agent.as_slice().unwrap()), argmax(scaled.p_agent.as_slice().unwrap()));
    }

    #[test]
    fn hinge_vanishes_exactly_when_consistent(
        a in prop::collection::vec(0.0f64..1.0, 3),
        e in prop::collection::vec(0.0f64..1.0, 4),
        p in prop::collection::vec(0.0f64..1.0, 12),
    ) {
        let pa = ndarray::Array1::from(a.clone());
        let pe = ndarray::Array1::from(e.clone());
        let pp = Array2::from_shape_vec((3, 4), p.clone()).unwrap();
        let consistent = (0..3).all(|k| (0..4).all(|m| p[k * 4 + m] <= a[k].min(e[m])));
        let loss = loss_hier(pa.view(), pe.view(), pp.view()).unwrap();
        prop_assert_eq!(loss == 0.0, consistent);
    }
}
