use critembed::analysis::{
    build_diagram, group_neurons, hessian_spectrum, prediction_agreement, reduce_network, DiagramOptions, DiagramRun,
};
use critembed::data_io::{gen_synthetic, load_checkpoint, load_mnist, save_checkpoint, write_mnist_idx, Checkpoint, SyntheticSpec};
use critembed::embedding::{apply_plan, critical_subspace, EmbeddingPlan};
use critembed::network::{gradient, risk};
use critembed::training::{init_params, train, Optimizer, TrainConfig};
use critembed::{Activation, Architecture, Loss};
use tempfile::TempDir;

fn desk_point() -> (Architecture, critembed::NetParams, critembed::Dataset) {
    let data = gen_synthetic(&SyntheticSpec::desk(16)).unwrap();
    let arch = Architecture::new(vec![1, 2, 1], Activation::Tanh).unwrap();
    let cfg = TrainConfig {
        learning_rate: 0.3,
        epochs: 100_000,
        stop_grad_below: Some(1e-13),
        keep_snapshots: false,
        ..TrainConfig::default()
    };
    let init = init_params(&arch, 0.125, 0).unwrap();
    let p = train(&init, &arch, &data, Loss::Mse, &cfg).unwrap().final_params;
    (arch, p, data)
}

#[test]
fn trained_point_survives_checkpoint_embedding_and_reduction() {
    let (arch, p, data) = desk_point();
    assert!(gradient(&p, &arch, &data, Loss::Mse).unwrap().norm_l1() <= 1e-10);

    let dir = TempDir::new().unwrap();
    let path = dir.path().join("point.json");
    save_checkpoint(&Checkpoint::new(arch.clone(), p.clone()).unwrap(), &path).unwrap();
    let back = load_checkpoint(&path).unwrap();
    assert_eq!(
        risk(&back.params, &back.arch, &data, Loss::Mse).unwrap().to_bits(),
        risk(&p, &arch, &data, Loss::Mse).unwrap().to_bits()
    );

    let plan = EmbeddingPlan::parse("1:1:0.25, 1:2:-0.5").unwrap();
    let (wide, wa) = apply_plan(&back.params, &back.arch, &plan).unwrap();
    assert_eq!(wa.widths(), &[1, 4, 1]);
    assert!(gradient(&wide, &wa, &data, Loss::Mse).unwrap().norm_l1() <= 1e-9);
    let s0 = hessian_spectrum(&p, &arch, &data, Loss::Mse, 1e-11).unwrap();
    let s2 = hessian_spectrum(&wide, &wa, &data, Loss::Mse, 1e-11).unwrap();
    assert_eq!(s2.n_zero, s0.n_zero + 2);

    let groups = group_neurons(&wide, &wa, 1, 0.9, 0.0).unwrap();
    let (narrow, na) = reduce_network(&wide, &wa, 1, &groups).unwrap();
    assert_eq!(na, arch);
    let r0 = risk(&p, &arch, &data, Loss::Mse).unwrap();
    let r1 = risk(&narrow, &na, &data, Loss::Mse).unwrap();
    assert!((r0 - r1).abs() <= 1e-12 * r0);
}

#[test]
fn subspace_points_stay_critical() {
    let (arch, p, data) = desk_point();
    let sub = critical_subspace(&p, &arch, &[(1, 0), (1, 1)]).unwrap();
    assert_eq!(sub.dim(), 2);
    for alphas in [[0.0, 0.0], [1.5, -2.0], [-3.0, 3.0]] {
        let q = sub.point(&alphas).unwrap();
        assert!(gradient(&q, &sub.arch, &data, Loss::Mse).unwrap().norm_l1() <= 1e-9);
    }
}

#[test]
fn diagram_finds_the_narrow_minimum() {
    let data = gen_synthetic(&SyntheticSpec::desk(16)).unwrap();
    let mut runs = Vec::new();
    for m in [1usize, 2] {
        let arch = Architecture::new(vec![1, m, 1], Activation::Tanh).unwrap();
        let var = (m as f64).powi(-3);
        let cfg = TrainConfig {
            learning_rate: 0.3,
            epochs: 100_000,
            init_variance: var,
            stop_grad_below: Some(1e-11),
            ..TrainConfig::default()
        };
        for k in 0..2u64 {
            let init = init_params(&arch, var, m as u64 * 100 + k).unwrap();
            runs.push(DiagramRun { arch: arch.clone(), trajectory: train(&init, &arch, &data, Loss::Mse, &cfg).unwrap() });
        }
    }
    let opts = DiagramOptions { target_width: 3, ..DiagramOptions::default() };
    let entries = build_diagram(&runs, &data, Loss::Mse, &opts).unwrap();
    assert!(!entries.is_empty());
    for e in &entries {
        assert_eq!(e.degeneracy, 3 - e.source_width, "{e:?}");
    }
    assert!(entries.windows(2).all(|w| w[0].loss <= w[1].loss));
}

#[test]
fn idx_fixture_trains_and_reduces() {
    let dir = TempDir::new().unwrap();
    let (img, lab) = (dir.path().join("img"), dir.path().join("lab"));
    // Two 2x2 "digits": class 0 lights the left column, class 1 the right.
    let mut pixels = Vec::new();
    let mut labels = Vec::new();
    for i in 0..20u8 {
        let c = i % 2;
        let on = 200 + i;
        pixels.extend(if c == 0 { [on, 0, on, 0] } else { [0, on, 0, on] });
        labels.push(c);
    }
    write_mnist_idx(&img, &lab, 2, 2, &pixels, &labels).unwrap();
    let data = load_mnist(&img, &lab, usize::MAX).unwrap();
    assert_eq!((data.len(), data.input_dim(), data.output_dim()), (20, 4, 10));

    let arch = Architecture::new(vec![4, 6, 10], Activation::Relu).unwrap();
    let cfg = TrainConfig {
        optimizer: Optimizer::Adam,
        learning_rate: 1e-2,
        epochs: 2000,
        keep_snapshots: false,
        ..TrainConfig::default()
    };
    let init = init_params(&arch, 0.1, 3).unwrap();
    let p = train(&init, &arch, &data, Loss::Mse, &cfg).unwrap().final_params;
    let groups = group_neurons(&p, &arch, 1, 0.99, 0.01).unwrap();
    let (q, qa) = reduce_network(&p, &arch, 1, &groups).unwrap();
    assert!(qa.width(1) <= 6);
    let agree = prediction_agreement(&p, &arch, &q, &qa, &data).unwrap();
    assert_eq!(agree.confusion.iter().flatten().sum::<usize>(), 20);
    assert!(agree.fraction >= 0.9, "{agree:?}");
}
