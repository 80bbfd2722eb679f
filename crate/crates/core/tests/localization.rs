//! Localisation and regularisation checks that need high-precision
//! numerics: the integral form of the regularised value against the
//! algebraic difference, and the divisor-class neighbor count.

use lindstedt_core::freq::{PsiShape, ScalePartition};
use lindstedt_core::model::{load_model_str, LoadedModel, ModelView};
use lindstedt_core::scalar::{bigfloat, Bf, QuadReal, RealScalar};
use lindstedt_core::selfenergy::{se_value, se_value_derivative, SeEnumerator};
use lindstedt_core::validator::gauss_legendre;
use lindstedt_core::{mode_ball, Mode, Sign};
use num_rational::BigRational;

const SYSA: &str = r#"{
    "name": "sysA", "kind": "real", "d": 1, "omega": ["1"], "tau": "1",
    "terms": [{"j": 1, "s": [2], "coeff": "1"}]
}"#;

/// The regularised value is the path-derivative integrated along the
/// segment from the on-shell point: quadrature on the analytic derivative
/// reproduces the algebraic difference to better than 1e-20 at 256 bits.
#[test]
fn regularization_matches_its_integral_form() {
    bigfloat::set_default_precision(256);
    let prec = 256;
    let LoadedModel::Real(m) = load_model_str::<Bf>(SYSA).unwrap() else {
        panic!()
    };
    let view = ModelView::Real(&m);
    let nup = Mode::from_slice(&[6]);
    let en = SeEnumerator::new(&view, 1, Sign::Plus, nup.clone()).unwrap();
    // u stays near the on-shell point so the segment avoids the poles
    let u_target = Bf::from_i64_prec(1, prec).add(&Bf::from_i64_prec(1, prec).scale_pow2(-4));
    let on_shell = Bf::from_i64_prec(1, prec);
    let span = u_target.sub(&on_shell);
    let offset = u_target.sub(&Bf::from_i64_prec(6, prec));
    let nodes = gauss_legendre(48, prec);

    let mut with_path = 0usize;
    for k in 1..=2usize {
        for s in Sign::both() {
            for class in en.clusters(k, 1, s).unwrap().iter() {
                if class.marked.path().is_empty() {
                    continue;
                }
                with_path += 1;
                // algebraic difference of the value between the two points
                let full = se_value(&view, &class.marked, &nup, &offset).unwrap();
                let at_shell = se_value(
                    &view,
                    &class.marked,
                    &nup,
                    &on_shell.sub(&Bf::from_i64_prec(6, prec)),
                )
                .unwrap();
                let lhs = full.sub(&at_shell).unwrap();
                // quadrature of the derivative along the segment
                let mut rhs = lindstedt_core::poly::CoeffPoly::<Bf>::zero(1);
                for (t, w) in &nodes {
                    let point = on_shell.add(&span.mul(t));
                    let dv =
                        se_value_derivative(&view, &class.marked, &nup, &point).unwrap();
                    rhs = rhs.add(&dv.mul_scalar(&lindstedt_core::scalar::CScalar::from_real(
                        w.mul(&span),
                    )))
                    .unwrap();
                }
                // relative comparison per coefficient
                let diff = lhs.sub(&rhs).unwrap();
                let scale: f64 = lhs
                    .terms()
                    .map(|(_, c)| c.abs_to_f64())
                    .fold(0.0, f64::max)
                    .max(1e-30);
                for (_, c) in diff.terms() {
                    let rel = c.abs_to_f64() / scale;
                    assert!(rel <= 1e-20, "relative error {rel} on {}", class.key);
                }
            }
        }
    }
    assert!(with_path > 0, "no clusters with a path were enumerated");
}

/// For a mode with a small divisor, exactly 2d - 1 other modes within
/// lattice distance 2 share its divisor.
#[test]
fn close_equal_divisor_neighbor_count() {
    // d = 1
    let LoadedModel::Real(m1) = load_model_str::<BigRational>(SYSA).unwrap() else {
        panic!()
    };
    let nu = Mode::from_slice(&[1]);
    let mut count = 0;
    for nup in mode_ball(1, 3) {
        if nup == nu {
            continue;
        }
        if nu.sub(&nup).norm1() <= 2 && m1.spec.equal_divisor(1, &nu, 1, &nup) {
            count += 1;
        }
    }
    assert_eq!(count, 1); // 2d - 1 at d = 1

    // d = 2, golden frequency vector
    let g2 = r#"{
        "name": "g2", "kind": "real", "d": 2,
        "omega": ["1", "(1+sqrt5)/2"], "tau": "2",
        "terms": [
            {"j": 1, "s": [1, 1], "coeff": "1"},
            {"j": 2, "s": [2, 1], "coeff": "1"}
        ]
    }"#;
    let LoadedModel::Real(m2) = load_model_str::<QuadReal>(g2).unwrap() else {
        panic!()
    };
    // base modes whose divisor sits below gamma
    let mut tested = 0;
    for nu in mode_ball(2, 5) {
        if nu.is_zero() || nu.as_unit().is_some() {
            continue;
        }
        for j in 1..=2usize {
            let (delta, _) = m2.spec.small_divisor(j, &nu);
            if delta.gt(&m2.spec.gamma) {
                continue;
            }
            tested += 1;
            let mut count = 0;
            for nup in mode_ball(2, 8) {
                if nup == nu {
                    continue;
                }
                if nu.sub(&nup).norm1() > 2 {
                    continue;
                }
                for jp in 1..=2usize {
                    if m2.spec.equal_divisor(j, &nu, jp, &nup) {
                        count += 1;
                        break;
                    }
                }
            }
            assert_eq!(count, 3, "nu={nu} j={j}"); // 2d - 1 at d = 2
        }
    }
    assert!(tested > 0);
}

/// The cutoff derivative agrees with a central finite difference for both
/// shapes.
#[test]
fn cutoff_derivative_matches_finite_differences() {
    bigfloat::set_default_precision(256);
    let prec = 256;
    let gamma = Bf::from_f64_prec(0.5, prec);
    for shape in [PsiShape::SmoothstepC1, PsiShape::ExpBumpCinf] {
        let part = ScalePartition::new(gamma.clone(), shape);
        let h = Bf::from_i64_prec(1, prec).scale_pow2(-60);
        // interior samples only: at the window edges the second derivative
        // jumps and a central difference picks up the kink
        for i in (1..=15).chain(17..=20) {
            let u = gamma
                .mul(&Bf::from_i64_prec(5, prec))
                .scale_pow2(-3)
                .add(&gamma.mul(&Bf::from_i64_prec(i, prec)).scale_pow2(-6));
            let d_analytic = part.psi_prime(&u).unwrap();
            let num = part
                .psi(&u.add(&h))
                .unwrap()
                .sub(&part.psi(&u.sub(&h)).unwrap())
                .div(&h.scale_pow2(1));
            let err = RealScalar::to_f64(&d_analytic.sub(&num).abs());
            assert!(err < 1e-30, "{shape:?} at sample {i}: {err}");
        }
    }
}
