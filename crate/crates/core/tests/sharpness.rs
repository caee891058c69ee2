mod common;

use sharpness_core::linalg::{quadratic_form, symmetric_eig, SymmetricMatrix};
use sharpness_core::losses::{LossFunction, QuadraticLoss, ScaleInvToy};
use sharpness_core::measures::{MeasureSpec, SeededStream};
use sharpness_core::sharpness::{
    estimate_regularizer, estimate_sharpness, measure_exact, MomentMeasure, SharpnessSpec, SpecPreset,
};

fn presets() -> Vec<SpecPreset> {
    vec![
        SpecPreset::Trace,
        SpecPreset::Frobenius,
        SpecPreset::Moment { n: 2, measure: MomentMeasure::Gaussian },
        SpecPreset::Moment { n: 3, measure: MomentMeasure::Sphere },
        SpecPreset::Charpoly { sigma: 0.1 },
    ]
}

/// Estimates on random Hessians land within 4 delta-method standard errors.
#[test]
fn estimators_agree_with_spectral_oracles() {
    let root = SeededStream::new(11);
    let mut worst: f64 = 0.0;
    for case in 0..12u64 {
        let d = 2 + (case % 3) as usize;
        let h = common::random_symmetric(&root, case, d, 0.7);
        let s = symmetric_eig(&h).unwrap();
        for (k, p) in presets().iter().enumerate() {
            let Ok(exact) = measure_exact(&s, p) else { continue };
            let spec = p.build(d).unwrap();
            let est = estimate_sharpness(
                &|v| quadratic_form(&h, v),
                &spec,
                &root.fork(case * 16 + k as u64),
                50_000,
            )
            .unwrap();
            let z = est.zscore(exact).abs();
            worst = worst.max(z);
            assert!(z < 4.0, "case {case} {} d={d}: exact {exact} est {} ± {}", p.name(), est.value, est.stderr);
        }
    }
    assert!(worst > 0.0);
}

#[test]
fn determinant_estimate_matches_for_positive_definite_hessians() {
    let h = SymmetricMatrix::from_rows(&[vec![2.0, 0.5], vec![0.5, 1.0]]).unwrap();
    let p = SpecPreset::Determinant { t: 5.0 };
    let exact = measure_exact(&symmetric_eig(&h).unwrap(), &p).unwrap();
    let est = estimate_sharpness(&|v| quadratic_form(&h, v), &p.build(2).unwrap(), &SeededStream::new(3), 400_000).unwrap();
    assert!(est.zscore(exact).abs() < 4.0, "exact {exact} est {} ± {}", est.value, est.stderr);
}

/// For `L(x) = ½xᵀHx` at the origin with `ρ = 1`, the loss-difference
/// estimator and the quadratic-form estimator see identical numbers.
#[test]
fn regularizer_equals_sharpness_bitwise_for_quadratics_at_origin() {
    let root = SeededStream::new(4);
    let h = common::random_symmetric(&root, 0, 3, 1.0);
    let h = SymmetricMatrix::from_row_major(3, &{
        // Shift to positive definite so the quadratic loss is admissible.
        let mut m = h.as_row_major().to_vec();
        for i in 0..3 {
            m[i * 3 + i] += 10.0;
        }
        m
    })
    .unwrap();
    let loss = QuadraticLoss::centered(h.clone()).unwrap();
    for p in presets() {
        let spec = p.build(3).unwrap();
        let a = estimate_regularizer(&loss, &[0.0; 3], &spec, 1.0, &root, 1000).unwrap();
        let b = estimate_sharpness(&|v| quadratic_form(&h, v), &spec, &root, 1000).unwrap();
        assert_eq!(a.value.to_bits(), b.value.to_bits(), "{}", p.name());
        assert_eq!(a.stderr.to_bits(), b.stderr.to_bits());
    }
}

/// On a quadratic, `R_ρ` at the minimum has no Taylor remainder.
#[test]
fn regularizer_is_exact_in_rho_for_quadratics_at_minimum() {
    let h = SymmetricMatrix::from_diagonal(&[3.0, 1.0]).unwrap();
    let loss = QuadraticLoss::new(h, vec![0.5, -0.25]).unwrap();
    let spec = SpecPreset::Trace.build(2).unwrap();
    let st = SeededStream::new(9);
    let base = estimate_regularizer(&loss, &[0.5, -0.25], &spec, 1.0, &st, 2000).unwrap();
    for rho in [0.5, 0.1, 0.01] {
        let r = estimate_regularizer(&loss, &[0.5, -0.25], &spec, rho, &st, 2000).unwrap();
        assert!((r.value - base.value).abs() < 1e-9, "ρ={rho}: {} vs {}", r.value, base.value);
    }
}

#[test]
fn constant_offset_does_not_change_the_regularizer() {
    let h = SymmetricMatrix::from_diagonal(&[2.0, 0.5, 1.0]).unwrap();
    let a = QuadraticLoss::new(h.clone(), vec![1.0, 0.0, -1.0]).unwrap();
    let b = a.clone().with_offset(123.0).unwrap();
    let x = [0.3, -0.2, 0.9];
    let st = SeededStream::new(2);
    for p in presets() {
        let spec = p.build(3).unwrap();
        let ra = estimate_regularizer(&a, &x, &spec, 0.1, &st, 500).unwrap();
        let rb = estimate_regularizer(&b, &x, &spec, 0.1, &st, 500).unwrap();
        assert!(
            (ra.value - rb.value).abs() <= 1e-8 * ra.value.abs().max(1.0),
            "{}: {} vs {}",
            p.name(),
            ra.value,
            rb.value
        );
    }
}

/// Scale-invariant toy: the hypercube estimate is unchanged under coupled
/// rescaling of point and samples, while the trace oracle is not.
#[test]
fn rescaling_splits_determinant_from_trace() {
    let toy = ScaleInvToy;
    for k in [0.5, 2.0, 10.0] {
        for case in 0..100u64 {
            let st = SeededStream::new(case);
            let x = [common::uniform(&st, 0, -2.0, 2.0), common::uniform(&st, 1, -2.0, 2.0)];
            let y = [k * x[0], x[1] / k];
            let hx = toy.exact_hessian(&x).unwrap().unwrap();
            let hy = toy.exact_hessian(&y).unwrap().unwrap();
            let scale = hx.max_abs().max(hy.max_abs()).max(1.0);
            let dx = hx.get(0, 0) * hx.get(1, 1) - hx.get(0, 1).powi(2);
            let dy = hy.get(0, 0) * hy.get(1, 1) - hy.get(0, 1).powi(2);
            assert!((dx - dy).abs() <= 1e-8 * scale * scale, "k={k} x={x:?}: {dx} vs {dy}");
        }
    }
    let h1 = toy.exact_hessian(&[1.0, 1.0]).unwrap().unwrap();
    let h2 = toy.exact_hessian(&[2.0, 0.5]).unwrap().unwrap();
    let t1 = measure_exact(&symmetric_eig(&h1).unwrap(), &SpecPreset::Trace).unwrap();
    let t2 = measure_exact(&symmetric_eig(&h2).unwrap(), &SpecPreset::Trace).unwrap();
    assert!(t2 > t1, "{t2} vs {t1}");
    // 2(k²x₁² + x₂²/k²)/(2d) against 2(x₁² + x₂²)/(2d).
    assert!((t1 - 1.0).abs() < 1e-12 && (t2 - 2.125).abs() < 1e-12);
}

#[test]
fn coupled_hypercube_samples_cancel_exactly() {
    let toy = ScaleInvToy;
    let spec = SharpnessSpec::average(MeasureSpec::hypercube(2, 1.0).unwrap());
    let x = [0.7, 1.9];
    let k = 3.0;
    let y = [k * x[0], x[1] / k];
    let hx = toy.exact_hessian(&x).unwrap().unwrap();
    let hy = toy.exact_hessian(&y).unwrap().unwrap();
    let groups = spec.sample(&SeededStream::new(1), 1000, None).unwrap();
    let moved: Vec<_> = groups.iter().map(|g| g.map_points(|v| vec![k * v[0], v[1] / k]).unwrap()).collect();
    let a = sharpness_core::sharpness::estimate_sharpness_with_samples(&|v| quadratic_form(&hx, v), &spec, &groups).unwrap();
    let b = sharpness_core::sharpness::estimate_sharpness_with_samples(&|v| quadratic_form(&hy, v), &spec, &moved).unwrap();
    assert!((a.value - b.value).abs() <= 1e-10);
}
