use proptest::prelude::*;
use sphtr::autodiff::{cosine_lr, Graph, Tensor};
use sphtr::groups::random_so3;
use sphtr::rng::stream_rng;
use sphtr::ExperimentConfig;

proptest! {
    #[test]
    fn random_rotations_are_proper(seed in any::<u64>()) {
        let r = random_so3(&mut stream_rng(seed, 0));
        prop_assert!(r.is_proper_rotation(1e-12));
    }

    #[test]
    fn softmax_rows_are_distributions(values in prop::collection::vec(-50.0f64..50.0, 12)) {
        let mut g = Graph::new();
        let x = g.constant(Tensor::new(vec![3, 4], values).unwrap());
        let p = g.softmax(x);
        for row in g.value(p).data().chunks(4) {
            prop_assert!(row.iter().all(|&v| (0.0..=1.0).contains(&v)));
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn cosine_schedule_never_increases(total in 1usize..500, lr in 1e-5f64..1.0) {
        let mut prev = f64::INFINITY;
        for step in 0..=total {
            let now = cosine_lr(step, total, lr);
            prop_assert!(now <= prev && now >= 0.0 && now <= lr);
            prev = now;
        }
    }

    #[test]
    fn resolved_configs_parse_back(seed in any::<u64>(), div in 0usize..6, layers in 1usize..9) {
        let cfg = ExperimentConfig {
            seed,
            div,
            layers,
            ..ExperimentConfig::default()
        };
        let text = cfg.resolved();
        prop_assert_eq!(ExperimentConfig::parse(&text).unwrap().resolved(), text);
    }
}
