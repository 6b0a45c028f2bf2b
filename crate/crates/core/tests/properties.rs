//! Randomized invariants of the pointwise algebra.

use proptest::prelude::*;
use tiso_core::material::{self, TiModuli};
use tiso_core::qsh;
use tiso_core::{Box3, ElasticParams, Mat3, MaterialField, PhasePoint, Vec3, Wave};

/// Admissible moduli with `E²` of either sign.
fn moduli() -> impl Strategy<Value = TiModuli> {
    (1.0..5.0f64, 1.0..6.0f64, 0.2..15.0f64, 0.2..15.0f64, 0.0..1.5f64).prop_map(|(a55, a66, d11, d33, k)| {
        let lo = a55.max(a66);
        let (a11, a33) = (lo + d11, lo + d33);
        let prod = (a11 - a55) * (a33 - a55);
        TiModuli { a11, a33, a55, a66, e2: prod - k * k * prod }
    })
}

fn direction() -> impl Strategy<Value = Vec3> {
    (-1.0..1.0f64, -1.0..1.0f64, -1.0..1.0f64)
        .prop_filter("nonzero", |(a, b, c)| a * a + b * b + c * c > 1e-2)
        .prop_map(|(a, b, c)| Vec3([a, b, c]))
}

fn sc(xt: Vec3) -> (f64, f64) {
    (xt[0] * xt[0] + xt[1] * xt[1], xt[2] * xt[2])
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn hamiltonians_are_quadratically_homogeneous(mo in moduli(), xt in direction(), t in 0.1..5.0f64) {
        for w in Wave::ALL {
            let (s, c) = sc(xt);
            if let (Ok(p), Ok(pt)) = (mo.hamiltonian(w, s, c), mo.hamiltonian(w, t * t * s, t * t * c)) {
                prop_assert!((pt - t * t * p).abs() <= 1e-10 * pt.abs().max(1.0));
            }
        }
    }

    #[test]
    fn qp_dominates_qsv(mo in moduli(), xt in direction()) {
        let (s, c) = sc(xt);
        if let (Ok(pp), Ok(ps)) = (mo.hamiltonian(Wave::QP, s, c), mo.hamiltonian(Wave::QSV, s, c)) {
            prop_assert!(pp >= ps - 1e-12 * pp.abs());
        }
    }

    #[test]
    fn qp_half_hessian_is_positive_definite(mo in moduli(), xt in direction()) {
        let h = material::tilted_half_hessian(&mo, Wave::QP, xt).unwrap();
        let (e, _) = h.symmetric_eigen();
        prop_assert!(e.iter().all(|v| *v > 0.0), "{e:?}");
    }

    #[test]
    fn euler_identity_for_the_hamilton_map(a13 in 0.0..4.0f64, axis in direction(), xi in direction()) {
        let p = ElasticParams::new(14.0, a13, 12.0, 4.0, 5.0);
        let d = Box3::new(Vec3([-1.0; 3]), Vec3([1.0; 3]));
        let m = MaterialField::homogeneous(d, p, axis);
        for w in Wave::ALL {
            let pt = PhasePoint::new(Vec3::ZERO, xi);
            if let (Ok(h), Ok((_, dxi))) = (material::hamiltonian(&m, w, &pt), material::hamiltonian_derivs(&m, w, &pt)) {
                prop_assert!((xi.dot(dxi) - 2.0 * h).abs() <= 1e-9 * h.abs().max(1.0));
            }
        }
    }

    #[test]
    fn a13_survives_the_anellipticity_round_trip(a13 in -3.9..8.0f64) {
        let p = ElasticParams::new(14.0, a13, 12.0, 4.0, 5.0);
        let back = p.moduli().a13();
        // the E² parameterization keeps the root with a13 + a55 >= 0
        if a13 + p.a55 >= 0.0 {
            prop_assert!((back.unwrap() - a13).abs() < 1e-10);
        }
    }

    #[test]
    fn metric_extraction_inverts_assembly(alpha in 0.05..3.0f64, ratio in 1.01..4.0f64, flip in any::<bool>(), w in direction()) {
        let beta = if flip { alpha * ratio } else { alpha / ratio };
        let g0 = Mat3::IDENTITY;
        let g = qsh::metric_from_parts(alpha, beta, w, &g0);
        let e = qsh::extract_parameters(&g, &g0).unwrap();
        prop_assert!((e.alpha - alpha).abs() <= 1e-10 * alpha);
        prop_assert!((e.beta - beta).abs() <= 1e-10 * beta);
        let wn = w.normalized().unwrap();
        prop_assert!((e.axis - wn).norm().min((e.axis + wn).norm()) < 1e-9);
    }

    #[test]
    fn symmetric_eigen_reconstructs(a in -3.0..3.0f64, b in -3.0..3.0f64, c in -3.0..3.0f64, d in -1.0..1.0f64, e in -1.0..1.0f64, f in -1.0..1.0f64) {
        let m = Mat3([[a, d, e], [d, b, f], [e, f, c]]);
        let (vals, vecs) = m.symmetric_eigen();
        let back = vecs.mul_mat(&Mat3::diag(vals)).mul_mat(&vecs.transpose());
        prop_assert!(back.sub(&m).max_abs() < 1e-10);
    }
}
