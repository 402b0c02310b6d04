mod common;

use common::gaussian;
use fpn_core::autoencoder::{train_autoencoder, AutoencoderConfig, AutoencoderVariant};
use fpn_core::flow::{one_hot, FlowModel, FlowSpec};
use fpn_core::io::synth::ObjectEmbedding;
use fpn_core::numerics::{DenseMatrix, Rng};
use fpn_core::trainer::{build_latent_dataset, train_flow, TrainConfig};
use nalgebra::DMatrix;

/// Points on a random 3-d affine subspace of `[0, 1]^10`.
fn linear_manifold(n: usize, rng: &mut Rng) -> DenseMatrix {
    let basis = gaussian(3, 10, rng);
    let z = gaussian(n, 3, rng);
    z.matmul(&basis).unwrap().map(|v| (0.5 + 0.04 * v).clamp(0.0, 1.0))
}

/// Mean per-row squared error of the best rank-`k` affine reconstruction.
fn pca_error(x: &DenseMatrix, k: usize) -> f64 {
    let means = x.col_means();
    let m = DMatrix::from_fn(x.rows(), x.cols(), |r, c| x.get(r, c) - means.get(0, c));
    let sv = m.svd(false, false).singular_values;
    sv.iter().skip(k).map(|s| s * s).sum::<f64>() / x.rows() as f64
}

fn row_sq_error(a: &DenseMatrix, b: &DenseMatrix) -> f64 {
    a.zip_map(b, |p, q| (p - q) * (p - q)).unwrap().sum() / a.rows() as f64
}

fn config(variant: AutoencoderVariant, latent: usize, hidden: Vec<usize>, epochs: usize) -> AutoencoderConfig {
    AutoencoderConfig { variant, latent_dim: latent, hidden, epochs, batch_size: 32, learning_rate: 3e-3, ..AutoencoderConfig::default() }
}

#[test]
fn linear_manifold_is_recovered() {
    let mut rng = Rng::seed_from(31);
    let x = linear_manifold(200, &mut rng);
    let pca = pca_error(&x, 3);
    let total = pca_error(&x, 0);
    let (ae, _) = train_autoencoder(&x, &config(AutoencoderVariant::Ae, 3, vec![32], 400), 31).unwrap();
    let err = row_sq_error(&ae.reconstruct(&x).unwrap(), &x);
    assert!(pca < 1e-6, "clamping bent the manifold: {pca}");
    assert!(err < 1e-2, "ae {err}, pca {pca}, total variance {total}");
    assert!(err < 0.1 * total, "ae {err} explains too little of {total}");
}

#[test]
fn held_out_error_matches_training_log() {
    let mut rng = Rng::seed_from(32);
    let embed = ObjectEmbedding::new(2, 16, &mut rng);
    let train = embed.apply(&gaussian(4000, 2, &mut rng));
    let test = embed.apply(&gaussian(500, 2, &mut rng));
    // Stopped while the loss is still well above Adam's noise floor, where the
    // running loss of an epoch no longer tracks the loss at its end.
    let cfg = AutoencoderConfig { learning_rate: 1e-3, ..config(AutoencoderVariant::Ae, 2, vec![32, 32], 60) };
    let (mut ae, log) = train_autoencoder(&train, &cfg, 32).unwrap();
    ae.freeze();
    let logged = log.last().unwrap().reconstruction_mse;
    let held_out = ae.reconstruct(&test).unwrap().mse(&test).unwrap();
    assert!((held_out / logged - 1.0).abs() < 0.2, "held-out {held_out} vs logged {logged}");

    // Re-encoding a reconstruction lands close to the original code.
    let z = ae.encode(&test).unwrap();
    let z2 = ae.encode(&ae.decode(&z).unwrap()).unwrap();
    let drift = z2.mse(&z).unwrap();
    let recon = ae.reconstruct(&test).unwrap();
    let bound = 10.0 * recon.mse(&test).unwrap() * test.cols() as f64;
    assert!(drift < bound, "drift {drift}, bound {bound}");
}

#[test]
fn flow_training_leaves_frozen_base_untouched() {
    let mut rng = Rng::seed_from(33);
    let embed = ObjectEmbedding::new(2, 12, &mut rng);
    let labels: Vec<usize> = (0..300).map(|i| i % 2).collect();
    let z = DenseMatrix::from_fn(300, 2, |r, _| 2.0 * labels[r] as f64 - 1.0 + 0.3 * rng.standard_normal());
    let x = embed.apply(&z);
    let (mut ae, _) = train_autoencoder(&x, &config(AutoencoderVariant::Ae, 2, vec![16], 20), 33).unwrap();
    ae.freeze();
    let sum = ae.checksum();
    let bytes = fpn_core::io::encode_autoencoder(&ae);
    let ds = build_latent_dataset(&ae, &x, &one_hot(&labels, 2).unwrap(), 0.2, 33).unwrap();
    let flow = FlowModel::build(2, 2, &FlowSpec { layers: 2, hidden: 16, ..FlowSpec::c_maf_5() }, &mut rng).unwrap();
    let cfg = TrainConfig { epochs: 5, batch_size: 32, ..TrainConfig::default() };
    train_flow(flow, &ds, &cfg).unwrap();
    let _ = ae.encode(&x).unwrap();
    let _ = ae.decode(&ds.z().clone()).unwrap();
    assert_eq!(ae.checksum(), sum);
    assert_eq!(fpn_core::io::encode_autoencoder(&ae), bytes);
    assert!(ae.clone().fit(&x, &AutoencoderConfig::default(), &mut rng).is_err());
}

#[test]
fn decoder_range_on_wild_latents() {
    let mut rng = Rng::seed_from(34);
    for variant in [AutoencoderVariant::Ae, AutoencoderVariant::Vae] {
        let ae = fpn_core::autoencoder::Autoencoder::new(variant, 9, 4, &[16, 8], &mut rng).unwrap();
        let out = ae.decode(&gaussian(100, 4, &mut rng).map(|v| 50.0 * v)).unwrap();
        assert_eq!(out.shape(), (100, 9));
        assert!(out.data().iter().all(|v| (0.0..=1.0).contains(v)));
        assert_eq!(ae.encode(&DenseMatrix::filled(3, 9, 0.5)).unwrap().cols(), 4);
    }
}

#[test]
fn vae_aggregate_posterior_is_roughly_standard() {
    let mut rng = Rng::seed_from(35);
    let embed = ObjectEmbedding::new(2, 16, &mut rng);
    let x = embed.apply(&gaussian(1000, 2, &mut rng));
    let cfg = config(AutoencoderVariant::Vae, 2, vec![32, 32], 150);
    let (ae, log) = train_autoencoder(&x, &cfg, 35).unwrap();
    assert!(log.iter().all(|e| e.kl >= 0.0));
    let (mean, logvar) = ae.encode_distribution(&x).unwrap();
    let logvar = logvar.unwrap();
    // Reparameterised draws from q(z | x), pooled over the data.
    let z = DenseMatrix::from_fn(x.rows(), 2, |r, c| mean.get(r, c) + (0.5 * logvar.get(r, c)).exp() * rng.standard_normal());
    for c in 0..2 {
        let col: Vec<f64> = z.iter_rows().map(|r| r[c]).collect();
        let m = col.iter().sum::<f64>() / col.len() as f64;
        let v = col.iter().map(|x| (x - m).powi(2)).sum::<f64>() / col.len() as f64;
        assert!(m.abs() < 0.2, "dim {c}: mean {m}");
        assert!((0.5..=1.5).contains(&v), "dim {c}: variance {v}");
    }
}
