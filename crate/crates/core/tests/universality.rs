mod common;

use sharpness_core::linalg::{quadratic_form, symmetric_eig};
use sharpness_core::losses::ScaleInvToy;
use sharpness_core::measures::SeededStream;
use sharpness_core::universality::{
    chebyshev_nodes, node_bound, probe_hessian, probe_hessian_fd, probe_moments, reconstruct_eigenvalues,
    reconstruct_hessian, MomentSource, ProbeMode,
};

#[test]
fn eigenvalues_from_exact_moments() {
    let root = SeededStream::new(21);
    for case in 0..200u64 {
        let d = 1 + (case % 6) as usize;
        let h = common::random_symmetric(&root, case, d, 1.0);
        let s = symmetric_eig(&h).unwrap();
        let r = s.values.iter().fold(0.0_f64, |m, l| m.max(l.abs()));
        let nodes = chebyshev_nodes(d, node_bound(r), 0.9);
        let probe = probe_moments(MomentSource::Spectrum(&s), &nodes, ProbeMode::Exact).unwrap();
        let eig = reconstruct_eigenvalues(&probe).unwrap();
        let err = common::max_abs_diff(&eig, &s.values);
        assert!(err <= 1e-6, "case {case} d={d}: {eig:?} vs {:?}", s.values);
    }
}

#[test]
fn sampled_moments_recover_a_two_by_two_spectrum() {
    let h = sharpness_core::linalg::SymmetricMatrix::from_rows(&[vec![1.0, 0.3], vec![0.3, -0.5]]).unwrap();
    let s = symmetric_eig(&h).unwrap();
    let nodes = chebyshev_nodes(2, node_bound(1.1), 0.4);
    let oracle = |v: &[f64]| quadratic_form(&h, v);
    let probe = probe_moments(
        MomentSource::Quadratic { oracle: &oracle, dim: 2 },
        &nodes,
        ProbeMode::MonteCarlo { n: 400_000, stream: SeededStream::new(2) },
    )
    .unwrap();
    let eig = reconstruct_eigenvalues(&probe).unwrap();
    assert!(common::max_abs_diff(&eig, &s.values) < 0.05, "{eig:?} vs {:?}", s.values);
}

#[test]
fn dirac_probes_recover_hessians() {
    let root = SeededStream::new(5);
    for case in 0..200u64 {
        let d = 1 + (case % 6) as usize;
        let h = common::random_symmetric(&root, case, d, 3.0);
        let probes = probe_hessian(&|v| quadratic_form(&h, v), d).unwrap();
        assert_eq!(probes.count(), d * (d + 1) / 2);
        let rec = reconstruct_hessian(&probes).unwrap();
        let err = common::max_abs_diff(rec.as_row_major(), h.as_row_major());
        assert!(err <= 1e-13 * h.max_abs().max(1.0), "case {case}: {err}");
    }
}

#[test]
fn finite_difference_probes_recover_the_scale_invariant_hessian() {
    let rec = reconstruct_hessian(&probe_hessian_fd(&ScaleInvToy, &[1.0, 1.0]).unwrap()).unwrap();
    let err = common::max_abs_diff(rec.as_row_major(), &[2.0, 2.0, 2.0, 2.0]);
    assert!(err <= 1e-5, "{:?}", rec.as_row_major());
}
