mod common;

use std::sync::OnceLock;

use common::{gaussian, random_flow};
use fpn_core::autoencoder::{train_autoencoder, Autoencoder, AutoencoderConfig};
use fpn_core::flow::{one_hot, one_hot_repeated, FlowFamily, FlowModel, FlowSpec};
use fpn_core::io::synth::{binary_attribute_latents, ObjectEmbedding, TwoGaussian};
use fpn_core::numerics::{DenseMatrix, Rng};
use fpn_core::tasks::{
    class_log_posteriors, classify, conditional_generate, log_normalize_rows, manipulate_attributes, manipulate_latent,
    ClassPrior,
};
use fpn_core::trainer::{build_latent_dataset, train_flow, LatentDataset, TrainConfig};

#[test]
fn posteriors_match_linear_space_bayes() {
    let mut rng = Rng::seed_from(41);
    let flow = random_flow(FlowFamily::Maf, 3, 3, 16, 0.05, &mut rng);
    let prior = ClassPrior::new(vec![0.5, 0.3, 0.2]).unwrap();
    let z = gaussian(25, 3, &mut rng);
    let post = class_log_posteriors(&flow, &prior, &z).unwrap();
    let lik: Vec<Vec<f64>> = (0..3)
        .map(|k| flow.log_prob(&z, &one_hot_repeated(k, 3, 25).unwrap()).unwrap().iter().map(|v| v.exp()).collect())
        .collect();
    for r in 0..25 {
        let joint: Vec<f64> = lik.iter().zip(prior.probs()).map(|(l, p)| l[r] * p).collect();
        let evidence: f64 = joint.iter().sum();
        let mut total = 0.0;
        for (k, j) in joint.iter().enumerate() {
            let p = post.get(r, k).exp();
            total += p;
            assert!((p - j / evidence).abs() < 1e-10);
        }
        assert!((total - 1.0).abs() < 1e-12);
    }
}

#[test]
fn normalising_known_likelihoods() {
    let half = 0.5f64.ln();
    let mut scores = DenseMatrix::from_rows(&[vec![0.8f64.ln() + half, 0.2f64.ln() + half]]).unwrap();
    log_normalize_rows(&mut scores);
    assert!((scores.get(0, 0).exp() - 0.8).abs() < 1e-12);
    assert!((scores.get(0, 1).exp() - 0.2).abs() < 1e-12);
    assert_eq!(fpn_core::tasks::argmax_rows(&scores), vec![0]);
}

#[test]
fn prior_scale_does_not_change_decisions() {
    let mut rng = Rng::seed_from(42);
    let flow = random_flow(FlowFamily::RealNvp, 2, 4, 16, 0.05, &mut rng);
    let z = gaussian(200, 2, &mut rng);
    let w = vec![1.0, 3.0, 0.5, 2.0];
    let a = classify(&flow, &ClassPrior::new(w.clone()).unwrap(), &z).unwrap();
    let b = classify(&flow, &ClassPrior::new(w.iter().map(|v| v * 37.0).collect()).unwrap(), &z).unwrap();
    assert_eq!(a, b);
}

struct Pipeline {
    ae: Autoencoder,
    flow: FlowModel,
    x_train: DenseMatrix,
    labels_train: Vec<usize>,
    x_test: DenseMatrix,
    labels_test: Vec<usize>,
}

/// Two-Gaussian latents embedded as 16-d objects, an autoencoder on top and a
/// class-conditional flow on its codes.
fn pipeline() -> &'static Pipeline {
    static CELL: OnceLock<Pipeline> = OnceLock::new();
    CELL.get_or_init(|| {
        let mut rng = Rng::seed_from(43);
        let task = TwoGaussian::default();
        let embed = ObjectEmbedding::new(2, 16, &mut rng);
        let (z_train, labels_train) = task.sample(2000, &mut rng);
        let (z_test, labels_test) = task.sample(400, &mut rng);
        let (x_train, x_test) = (embed.apply(&z_train), embed.apply(&z_test));
        let ae_cfg = AutoencoderConfig { latent_dim: 2, hidden: vec![32, 32], epochs: 40, batch_size: 32, ..Default::default() };
        let (mut ae, _) = train_autoencoder(&x_train, &ae_cfg, 43).unwrap();
        ae.freeze();
        let ds = build_latent_dataset(&ae, &x_train, &one_hot(&labels_train, 2).unwrap(), 0.1, 43).unwrap();
        let flow = FlowModel::build(2, 2, &FlowSpec::c_maf_5().with_hidden(32), &mut rng).unwrap();
        let cfg = TrainConfig { epochs: 40, batch_size: 128, learning_rate: 3e-3, ..TrainConfig::default() };
        let flow = train_flow(flow, &ds, &cfg).unwrap().model;
        Pipeline { ae, flow, x_train, labels_train, x_test, labels_test }
    })
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(p, q)| (p - q) * (p - q)).sum()
}

#[test]
fn held_out_classification_is_near_bayes_optimal() {
    let p = pipeline();
    let z = p.ae.encode(&p.x_test).unwrap();
    let pred = classify(&p.flow, p.flow.class_prior().unwrap(), &z).unwrap();
    let acc = common::accuracy(&pred, &p.labels_test);
    assert!(acc >= 0.99, "{acc}");
}

#[test]
fn generated_objects_sit_near_their_class_centroid() {
    let p = pipeline();
    let centroid = |class: usize| {
        let rows: Vec<usize> = (0..p.labels_train.len()).filter(|&i| p.labels_train[i] == class).collect();
        p.x_train.select_rows(&rows).col_means()
    };
    let (c0, c1) = (centroid(0), centroid(1));
    for (class, own, other) in [(0, &c0, &c1), (1, &c1, &c0)] {
        let y = one_hot_repeated(class, 2, 500).unwrap();
        let x = conditional_generate(&p.flow, &p.ae, &y, &mut Rng::seed_from(44)).unwrap();
        assert!(x.data().iter().all(|v| (0.0..=1.0).contains(v)));
        let closer = x.iter_rows().filter(|r| sq_dist(r, own.row(0)) < sq_dist(r, other.row(0))).count();
        assert!(closer as f64 / 500.0 >= 0.95, "class {class}: {closer}/500");
    }
}

#[test]
fn generation_is_seed_deterministic() {
    let p = pipeline();
    let y = one_hot(&[0, 1, 1, 0, 1], 2).unwrap();
    let a = conditional_generate(&p.flow, &p.ae, &y, &mut Rng::seed_from(9)).unwrap();
    let b = conditional_generate(&p.flow, &p.ae, &y, &mut Rng::seed_from(9)).unwrap();
    assert!(a.data().iter().zip(b.data()).all(|(u, v)| u.to_bits() == v.to_bits()));
}

#[test]
fn class_edit_crosses_the_decision_boundary() {
    let p = pipeline();
    let rows: Vec<usize> = (0..p.labels_test.len()).filter(|&i| p.labels_test[i] == 0).collect();
    let x = p.x_test.select_rows(&rows);
    let (src, dst) = (one_hot_repeated(0, 2, rows.len()).unwrap(), one_hot_repeated(1, 2, rows.len()).unwrap());
    let edited = manipulate_attributes(&p.flow, &p.ae, &x, &src, &dst).unwrap();
    let pred = classify(&p.flow, p.flow.class_prior().unwrap(), &p.ae.encode(&edited).unwrap()).unwrap();
    let ones = pred.iter().filter(|&&c| c == 1).count() as f64 / pred.len() as f64;
    assert!(ones >= 0.95, "{ones}");

    // Editing in latent space and back is the identity.
    let z = p.ae.encode(&x).unwrap();
    let there = manipulate_latent(&p.flow, &z, &src, &dst).unwrap();
    assert!(manipulate_latent(&p.flow, &there, &dst, &src).unwrap().max_abs_diff(&z) < 1e-6);
    // An identity edit is a plain reconstruction.
    let same = manipulate_attributes(&p.flow, &p.ae, &x, &src, &src).unwrap();
    assert!(same.max_abs_diff(&p.ae.reconstruct(&x).unwrap()) < 1e-6);
}

#[test]
fn single_attribute_edit_leaves_the_others() {
    let mut rng = Rng::seed_from(45);
    let (z, y) = binary_attribute_latents(2000, 3, 2, 2.0, 0.4, &mut rng);
    let ds = LatentDataset::new(z, y, 0.1, 45).unwrap();
    let flow = FlowModel::build(3, 2, &FlowSpec::c_maf_5().with_hidden(32), &mut rng).unwrap();
    let cfg = TrainConfig { epochs: 40, batch_size: 128, learning_rate: 3e-3, ..TrainConfig::default() };
    let flow = train_flow(flow, &ds, &cfg).unwrap().model;
    assert!(flow.class_prior().is_none());

    let (z, y) = (ds.validation_z(), ds.validation_y());
    let mut flipped = y.clone();
    for r in 0..flipped.rows() {
        flipped.set(r, 0, 1.0 - y.get(r, 0));
    }
    let edited = manipulate_latent(&flow, &z, &y, &flipped).unwrap();
    let sign_matches = |col: usize, attrs: &DenseMatrix| {
        (0..edited.rows()).filter(|&r| (edited.get(r, col) > 0.0) == (attrs.get(r, col) == 1.0)).count() as f64
            / edited.rows() as f64
    };
    let moved = sign_matches(0, &flipped);
    let kept = sign_matches(1, &y);
    assert!(moved >= 0.95, "edited attribute follows target on {moved}");
    assert!(kept >= 0.95, "untouched attribute preserved on {kept}");
}
