mod common;

use common::{fd_jacobian, gaussian, log_abs_det};
use fpn_core::numerics::{DenseMatrix, ParamSet, Rng, Tape};
use fpn_core::transforms::{CouplingLayer, InvertibleBatchNorm, MafLayer, Parity, ReversePermutation, Transform};

fn maf(dim: usize, ctx: usize, noise: f64, rng: &mut Rng) -> (Transform, ParamSet) {
    let mut params = ParamSet::new();
    let layer = MafLayer::new(&mut params, rng, dim, ctx, 16, 2, 5.0);
    params.perturb(rng, noise);
    (Transform::Maf(layer), params)
}

fn coupling(dim: usize, ctx: usize, parity: Parity, noise: f64, rng: &mut Rng) -> (Transform, ParamSet) {
    let mut params = ParamSet::new();
    let layer = CouplingLayer::new(&mut params, rng, dim, ctx, parity, 16, 2, 5.0);
    params.perturb(rng, noise);
    (Transform::Coupling(layer), params)
}

fn row_forward(t: &Transform, p: &ParamSet, y: &[f64]) -> impl Fn(&[f64]) -> Vec<f64> {
    let t = t.clone();
    let p = p.clone();
    let y = DenseMatrix::row_vector(y);
    move |u| t.forward(&p, &DenseMatrix::row_vector(u), &y).unwrap().0.row(0).to_vec()
}

fn check_fd_logdet(t: &Transform, p: &ParamSet, ctx: usize, rng: &mut Rng) {
    for _ in 0..10 {
        let u = gaussian(1, t.dim(), rng);
        let y: Vec<f64> = (0..ctx).map(|_| rng.uniform()).collect();
        let (_, logdet) = t.forward(p, &u, &DenseMatrix::row_vector(&y)).unwrap();
        let jac = fd_jacobian(row_forward(t, p, &y), u.row(0), 1e-5);
        let fd = log_abs_det(&jac);
        assert!((fd - logdet[0]).abs() < 1e-5, "{}: analytic {} vs fd {fd}", t.name(), logdet[0]);
    }
}

#[test]
fn maf_logdet_matches_numeric_jacobian() {
    let mut rng = Rng::seed_from(11);
    let (t, p) = maf(4, 2, 0.2, &mut rng);
    check_fd_logdet(&t, &p, 2, &mut rng);
}

#[test]
fn coupling_logdet_matches_numeric_jacobian() {
    let mut rng = Rng::seed_from(12);
    for parity in [Parity::Even, Parity::Odd] {
        let (t, p) = coupling(6, 3, parity, 0.2, &mut rng);
        check_fd_logdet(&t, &p, 3, &mut rng);
    }
}

#[test]
fn round_trips_and_logdets_cancel() {
    let mut rng = Rng::seed_from(13);
    let layers = vec![
        maf(5, 2, 0.2, &mut rng),
        maf(1, 2, 0.2, &mut rng),
        coupling(5, 2, Parity::Even, 0.2, &mut rng),
        coupling(5, 2, Parity::Odd, 0.2, &mut rng),
        (Transform::Reverse(ReversePermutation::new(5)), ParamSet::new()),
        (
            Transform::BatchNorm(InvertibleBatchNorm::frozen(vec![0.3, -1.0, 2.0, 0.0, 0.5], vec![0.5, 2.0, 1.0, 3.0, 0.1], 1e-5)),
            ParamSet::new(),
        ),
    ];
    for (t, p) in &layers {
        let u = gaussian(32, t.dim(), &mut rng);
        let y = DenseMatrix::from_fn(32, 2, |_, _| rng.uniform());
        let (x, fwd) = t.forward(p, &u, &y).unwrap();
        let (back, inv) = t.inverse(p, &x, &y).unwrap();
        assert!(back.max_abs_diff(&u) < 1e-8, "{}", t.name());
        for (a, b) in fwd.iter().zip(&inv) {
            assert!((a + b).abs() < 1e-10, "{}: {a} + {b}", t.name());
        }
    }
}

#[test]
fn maf_conditioner_is_autoregressive_in_data_and_free_in_context() {
    let mut rng = Rng::seed_from(14);
    let dim = 5;
    let mut params = ParamSet::new();
    let layer = MafLayer::new(&mut params, &mut rng, dim, 3, 16, 2, 5.0);
    params.perturb(&mut rng, 0.3);
    let eval = |x: &DenseMatrix, y: &DenseMatrix| {
        let mut tape = Tape::new();
        let xv = tape.constant(x.clone());
        let yv = tape.constant(y.clone());
        let (mu, alpha) = layer.conditioner(&params, &mut tape, xv, Some(yv));
        (tape.value(mu).clone(), tape.value(alpha).clone())
    };
    let x = gaussian(1, dim, &mut rng);
    let y = DenseMatrix::row_vector(&[0.2, 0.7, 0.1]);
    let (mu0, a0) = eval(&x, &y);
    for j in 0..dim {
        let mut xp = x.clone();
        xp.set(0, j, xp.get(0, j) + 0.5);
        let (mu, a) = eval(&xp, &y);
        for i in 0..dim {
            let moved = mu.get(0, i) != mu0.get(0, i) || a.get(0, i) != a0.get(0, i);
            if j >= i {
                assert!(!moved, "output {i} depends on input {j}");
            }
        }
    }
    // Every output, the first included, sees the context.
    let (mu, a) = eval(&x, &DenseMatrix::row_vector(&[0.9, 0.0, 0.4]));
    for i in 0..dim {
        assert!(mu.get(0, i) != mu0.get(0, i) || a.get(0, i) != a0.get(0, i), "output {i} ignores context");
    }
}

#[test]
fn log_scales_respect_the_clamp() {
    let mut rng = Rng::seed_from(15);
    let mut params = ParamSet::new();
    let layer = MafLayer::new(&mut params, &mut rng, 3, 1, 16, 2, 2.0);
    params.perturb(&mut rng, 5.0);
    let mut tape = Tape::new();
    let x = tape.constant(gaussian(64, 3, &mut rng).map(|v| 10.0 * v));
    let y = tape.constant(DenseMatrix::from_fn(64, 1, |_, _| rng.uniform()));
    let (_, alpha) = layer.conditioner(&params, &mut tape, x, Some(y));
    let worst = tape.value(alpha).data().iter().fold(0.0f64, |m, v| m.max(v.abs()));
    assert!(worst <= 2.0, "{worst}");
    assert!(worst > 1.0, "clamp never approached ({worst})");
}

#[test]
fn coupling_pass_through_half_is_bit_identical() {
    let mut rng = Rng::seed_from(16);
    for parity in [Parity::Even, Parity::Odd] {
        let mut params = ParamSet::new();
        let layer = CouplingLayer::new(&mut params, &mut rng, 7, 2, parity, 16, 2, 5.0);
        params.perturb(&mut rng, 0.3);
        let (pass, transformed) = layer.halves();
        assert_eq!(pass.len() + transformed.len(), 7);
        let t = Transform::Coupling(layer);
        let u = gaussian(20, 7, &mut rng);
        let y = DenseMatrix::from_fn(20, 2, |_, _| rng.uniform());
        let (x, _) = t.forward(&params, &u, &y).unwrap();
        let (back, _) = t.inverse(&params, &x, &y).unwrap();
        for r in 0..20 {
            for &c in &pass {
                assert_eq!(x.get(r, c).to_bits(), u.get(r, c).to_bits());
                assert_eq!(back.get(r, c).to_bits(), u.get(r, c).to_bits());
            }
            assert!(transformed.iter().any(|&c| x.get(r, c) != u.get(r, c)));
        }
    }
}

#[test]
fn rows_are_transformed_independently() {
    let mut rng = Rng::seed_from(17);
    let (t, p) = maf(4, 2, 0.2, &mut rng);
    let u = gaussian(10, 4, &mut rng);
    let y = DenseMatrix::from_fn(10, 2, |_, _| rng.uniform());
    let (x, ld) = t.forward(&p, &u, &y).unwrap();
    for r in [0, 4, 9] {
        let (xr, ldr) = t.forward(&p, &u.select_rows(&[r]), &y.select_rows(&[r])).unwrap();
        assert!(xr.max_abs_diff(&x.select_rows(&[r])) < 1e-12);
        assert!((ldr[0] - ld[r]).abs() < 1e-12);
    }
}

#[test]
fn reverse_permutation_is_an_involution() {
    let p = ReversePermutation::new(3);
    let v = DenseMatrix::from_rows(&[vec![1.0, 2.0, 3.0]]).unwrap();
    let once = p.apply(&v).unwrap();
    assert_eq!(once.row(0), &[3.0, 2.0, 1.0]);
    assert_eq!(p.apply(&once).unwrap(), v);
    let single = DenseMatrix::row_vector(&[4.0]);
    assert_eq!(ReversePermutation::new(1).apply(&single).unwrap(), single);
}
