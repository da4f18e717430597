//! Property tests over random architectures, parameters and embedding steps.

use critembed::analysis::{group_neurons, output_distance, reduce_network};
use critembed::data_io::Checkpoint;
use critembed::embedding::{apply_embed, apply_plan, embed_cache, equal_split, permute_neurons, EmbeddingPlan, EmbeddingStep};
use critembed::network::{backward, forward, gradient, predict, risk};
use critembed::training::{init_params, train, TrainConfig};
use critembed::{Activation, Architecture, Dataset, DenseMatrix, Loss, NetParams};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn activation() -> impl Strategy<Value = Activation> {
    prop_oneof![Just(Activation::Tanh), Just(Activation::Sigmoid), Just(Activation::Relu), Just(Activation::Linear)]
}

/// Depth 2 to 4, every width in 1..=4.
fn architecture() -> impl Strategy<Value = Architecture> {
    (prop::collection::vec(1usize..=4, 3..=5), activation()).prop_map(|(w, a)| Architecture::new(w, a).unwrap())
}

fn net() -> impl Strategy<Value = (Architecture, NetParams)> {
    (architecture(), any::<u64>()).prop_map(|(arch, seed)| {
        let p = init_params(&arch, 1.0, seed).unwrap();
        (arch, p)
    })
}

fn dataset(arch: &Architecture, n: usize, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut draw = |cols: usize| -> DenseMatrix {
        let rows: Vec<Vec<f64>> = (0..n).map(|_| (0..cols).map(|_| rng.random_range(-2.0..2.0)).collect()).collect();
        DenseMatrix::from_rows(&rows).unwrap()
    };
    let x = draw(arch.input_dim());
    let y = draw(arch.output_dim());
    Dataset::new(x, y).unwrap()
}

/// A valid (layer, neuron, alpha) step for `arch`, chosen from raw draws.
fn pick(arch: &Architecture, l: usize, s: usize) -> (usize, usize) {
    let layer = 1 + l % (arch.depth() - 1);
    (layer, s % arch.width(layer))
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(1.0)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn embedding_keeps_outputs((arch, p) in net(), l in 0usize..8, s in 0usize..8, alpha in -3.0..3.0f64, seed in any::<u64>()) {
        let (layer, neuron) = pick(&arch, l, s);
        let (q, wide) = apply_embed(&p, &arch, layer, neuron, alpha).unwrap();
        prop_assert_eq!(wide.width(layer), arch.width(layer) + 1);
        let data = dataset(&arch, 6, seed);
        for i in 0..data.len() {
            let y0 = predict(&p, &arch, data.input(i)).unwrap();
            let y1 = predict(&q, &wide, data.input(i)).unwrap();
            for (a, b) in y0.iter().zip(&y1) {
                prop_assert!(rel(*a, *b) <= 1e-12, "{a} vs {b}");
            }
        }
        let r0 = risk(&p, &arch, &data, Loss::Mse).unwrap();
        let r1 = risk(&q, &wide, &data, Loss::Mse).unwrap();
        prop_assert!((r0 - r1).abs() <= 1e-13 * r0.max(1.0));
    }

    #[test]
    fn cache_prediction_matches_recomputation((arch, p) in net(), l in 0usize..8, s in 0usize..8, alpha in -3.0..3.0f64, seed in any::<u64>()) {
        let (layer, neuron) = pick(&arch, l, s);
        let data = dataset(&arch, 1, seed);
        let (x, y) = (data.input(0), data.target(0));
        let (_, c0) = forward(&p, &arch, x).unwrap();
        let c0 = backward(&p, &arch, c0, Loss::Mse, y).unwrap();
        let predicted = embed_cache(&c0, layer, neuron, alpha).unwrap();
        let (q, wide) = apply_embed(&p, &arch, layer, neuron, alpha).unwrap();
        let (_, c1) = forward(&q, &wide, x).unwrap();
        let c1 = backward(&q, &wide, c1, Loss::Mse, y).unwrap();
        for k in 0..=arch.depth() {
            for (a, b) in predicted.feature(k).iter().zip(c1.feature(k)) {
                prop_assert!(rel(*a, *b) <= 1e-12);
            }
            if let (Some(e0), Some(e1)) = (predicted.error(k), c1.error(k)) {
                for (a, b) in e0.iter().zip(e1) {
                    prop_assert!(rel(*a, *b) <= 1e-12);
                }
            }
        }
    }

    #[test]
    fn permutation_is_invisible_to_the_risk((arch, p) in net(), l in 0usize..8, seed in any::<u64>()) {
        let layer = 1 + l % (arch.depth() - 1);
        let mut perm: Vec<usize> = (0..arch.width(layer)).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for i in (1..perm.len()).rev() {
            perm.swap(i, rng.random_range(0..=i));
        }
        let q = permute_neurons(&p, &arch, layer, &perm).unwrap();
        let data = dataset(&arch, 5, seed ^ 1);
        let r0 = risk(&p, &arch, &data, Loss::Mse).unwrap();
        let r1 = risk(&q, &arch, &data, Loss::Mse).unwrap();
        prop_assert_eq!(r0.to_bits(), r1.to_bits());
    }

    #[test]
    fn vectorize_round_trips((arch, p) in net()) {
        let v = p.vectorize();
        prop_assert_eq!(v.len(), arch.param_count());
        let back = NetParams::devectorize(v.as_slice(), &arch).unwrap();
        prop_assert_eq!(back, p);
    }

    #[test]
    fn checkpoint_json_is_bit_exact((arch, p) in net()) {
        let c = Checkpoint::new(arch, p).unwrap();
        let back = Checkpoint::from_json(&c.to_json().unwrap()).unwrap();
        prop_assert_eq!(back, c);
    }

    #[test]
    fn plan_text_round_trips(steps in prop::collection::vec((1usize..4, 0usize..6, -5.0..5.0f64), 1..6)) {
        let plan = EmbeddingPlan::new(steps.into_iter().map(|(l, s, a)| EmbeddingStep::new(l, s, a)).collect());
        let back = EmbeddingPlan::parse(&plan.to_string()).unwrap();
        prop_assert_eq!(back, plan);
    }

    #[test]
    fn equal_split_reduces_back((arch, p) in net(), s in 0usize..8, k in 2usize..5) {
        let neuron = s % arch.width(1);
        let (q, wide) = equal_split(&p, &arch, 1, neuron, k).unwrap();
        let groups = group_neurons(&q, &wide, 1, 0.999_999, 0.0).unwrap();
        let (r, ra) = reduce_network(&q, &wide, 1, &groups).unwrap();
        prop_assert!(ra.width(1) <= arch.width(1));
        let grid: Vec<Vec<f64>> = (0..16)
            .map(|i| (0..arch.input_dim()).map(|j| -2.0 + 0.25 * (i + j) as f64).collect())
            .collect();
        let y_scale = grid.iter().flat_map(|x| predict(&p, &arch, x).unwrap()).fold(1.0f64, |m, v| m.max(v.abs()));
        prop_assert!(output_distance(&p, &arch, &r, &ra, &grid).unwrap() <= 1e-12 * y_scale);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn one_gd_epoch_is_one_gradient_step((arch, p) in net(), seed in any::<u64>(), lr in 1e-3..0.5f64) {
        let data = dataset(&arch, 4, seed);
        let cfg = TrainConfig { learning_rate: lr, epochs: 1, record_every: 1, keep_snapshots: false, ..TrainConfig::default() };
        let stepped = train(&p, &arch, &data, Loss::Mse, &cfg).unwrap().final_params;
        let mut expected = p.clone();
        let g = NetParams::devectorize(gradient(&p, &arch, &data, Loss::Mse).unwrap().as_slice(), &arch).unwrap();
        expected.add_scaled(&g, -lr).unwrap();
        prop_assert_eq!(stepped, expected);
    }

    #[test]
    fn plans_compose_step_by_step((arch, p) in net(), raw in prop::collection::vec((0usize..8, 0usize..8, -2.0..2.0f64), 1..5)) {
        let mut cur = (p.clone(), arch.clone());
        let mut steps = Vec::new();
        for (l, s, a) in raw {
            let (layer, neuron) = pick(&cur.1, l, s);
            steps.push(EmbeddingStep::new(layer, neuron, a));
            cur = apply_embed(&cur.0, &cur.1, layer, neuron, a).unwrap();
        }
        let whole = apply_plan(&p, &arch, &EmbeddingPlan::new(steps)).unwrap();
        prop_assert_eq!(whole, cur);
    }
}
