//! Acceptance suite: one test per release criterion, each printing a
//! pass/fail line (visible with --nocapture). Every tolerance is pinned
//! here in code.

use lindstedt_core::cluster::verify_counting;
use lindstedt_core::freq::{
    check_divisor_dichotomy, check_scale_gap_and_chains, PsiShape, ScalePartition,
};
use lindstedt_core::model::{
    derive_force_table, load_model_file, ForceTable, HamiltonianSystem, LoadedModel, ModelView,
    RealSystem,
};
use lindstedt_core::scalar::{bigfloat, Bf, CScalar, QuadReal, RealScalar};
use lindstedt_core::selfenergy::{
    build_matrix, chain_product, verify_pair_gain, verify_symmetries, E1, E2,
};
use lindstedt_core::series::solve_up_to;
use lindstedt_core::trees::Enumerator;
use lindstedt_core::validator::residual_sweep;
use lindstedt_core::{mode_ball, Mode, Sign, Variant};
use num_rational::BigRational;

fn model_path(name: &str) -> std::path::PathBuf {
    std::path::Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../models")
        .join(name)
}

fn load_real<K: RealScalar>(name: &str) -> RealSystem<K> {
    match load_model_file::<K>(&model_path(name)).unwrap() {
        LoadedModel::Real(m) => m,
        _ => panic!("expected a real system"),
    }
}

fn load_ham<K: RealScalar>(name: &str) -> (HamiltonianSystem<K>, ForceTable<K>) {
    match load_model_file::<K>(&model_path(name)).unwrap() {
        LoadedModel::Hamiltonian(h) => {
            let f = derive_force_table(&h).unwrap();
            (h, f)
        }
        _ => panic!("expected a Hamiltonian system"),
    }
}

fn report(criterion: &str, pass: bool, detail: &str) {
    println!(
        "[{}] {criterion} — {detail}",
        if pass { "PASS" } else { "FAIL" }
    );
    assert!(pass, "{criterion}: {detail}");
}

/// Criterion 1: the tree expansion reproduces the direct solver exactly on
/// every coefficient and counterterm through order 4, on both corpus
/// models, in the exact kernels.
#[test]
fn criterion_01_pipeline_equivalence() {
    fn run<K: RealScalar>(m: &RealSystem<K>) -> (u64, u64) {
        let view = ModelView::Real(m);
        let en = Enumerator::new(&view);
        let table = solve_up_to(&view, 4).unwrap();
        let d = m.d();
        let mut checked = 0u64;
        let mut bad = 0u64;
        for k in 1..=4usize {
            for j in 1..=d {
                for nu in mode_ball(d, 3 * k as i64) {
                    if nu.is_unit(j, Sign::Plus) || nu.is_unit(j, Sign::Minus) {
                        continue;
                    }
                    let lhs = en.x_coefficient(k, j, &nu, Sign::Plus).unwrap();
                    let rhs = table.coeff(k, j, &nu, Sign::Plus);
                    checked += 1;
                    if lhs != rhs {
                        bad += 1;
                    }
                }
                checked += 1;
                if en.counterterm(k, j, Sign::Plus).unwrap() != table.eta_coeff(k, j, Sign::Plus)
                {
                    bad += 1;
                }
            }
        }
        (checked, bad)
    }
    let (c1, b1) = run(&load_real::<BigRational>("sysA.json"));
    let (c2, b2) = run(&load_real::<QuadReal>("g2.json"));
    report(
        "criterion 1: pipeline equivalence k <= 4",
        b1 + b2 == 0,
        &format!("{} coefficients compared exactly", c1 + c2),
    );
}

/// Criterion 2: counterterms are real polynomials in the moduli through
/// order 6; the complex-formulation towers are conjugate and real.
#[test]
fn criterion_02_counterterm_symmetries() {
    let mut pass = true;
    let mut count = 0;
    {
        let m = load_real::<BigRational>("sysA.json");
        let t = solve_up_to(&ModelView::Real(&m), 6).unwrap();
        for k in 1..=6 {
            count += 1;
            pass &= t.eta_coeff(k, 1, Sign::Plus).is_modulus_only();
        }
    }
    {
        let m = load_real::<QuadReal>("g2.json");
        let t = solve_up_to(&ModelView::Real(&m), 6).unwrap();
        for k in 1..=6 {
            for j in 1..=2 {
                count += 1;
                pass &= t.eta_coeff(k, j, Sign::Plus).is_modulus_only();
            }
        }
    }
    for name in ["ham1.json", "ham2.json"] {
        let (h, f) = load_ham::<QuadReal>(name);
        let view = ModelView::Zw {
            spec: &h.spec,
            force: &f,
        };
        let t = solve_up_to(&view, 6).unwrap();
        for k in 1..=6 {
            for j in 1..=h.d() {
                let ep = t.eta_coeff(k, j, Sign::Plus);
                let em = t.eta_coeff(k, j, Sign::Minus);
                count += 1;
                pass &= em == ep.conjugate();
                pass &= ep.is_modulus_only();
            }
        }
    }
    report(
        "criterion 2: counterterm symmetries k <= 6",
        pass,
        &format!("{count} counterterms checked exactly"),
    );
}

/// Criterion 3: frozen reference values of the quadratic oscillator, from
/// the independent second-order expansion computed before the build.
#[test]
fn criterion_03_reference_counterterms() {
    let m = load_real::<BigRational>("sysA.json");
    let t = solve_up_to(&ModelView::Real(&m), 2).unwrap();
    let eta1 = t.eta_coeff(1, 1, Sign::Plus);
    let eta2 = t.eta_coeff(2, 1, Sign::Plus);
    let pass = eta1.is_zero() && eta2.to_canonical_string() == "(10/3) * c1+^1 c1-^1";
    report(
        "criterion 3: reference counterterms",
        pass,
        &format!("eta1 = {}, eta2 = {}", eta1, eta2),
    );
}

/// Criterion 4: the chain of two localized self-energy matrices around the
/// sign-alternating propagator vanishes identically, for orders up to 2 and
/// every admissible scale triple in a window of 8 scales, at d = 1 and 2.
#[test]
fn criterion_04_matrix_cancellation() {
    fn run<K: RealScalar>(
        view: &ModelView<K>,
        base: &Mode,
    ) -> (u64, u64) {
        let spec = view.spec();
        let part = ScalePartition::new(spec.gamma.clone(), PsiShape::SmoothstepC1);
        let mut products = 0u64;
        let mut failures = 0u64;
        for n_l in 4..12i32 {
            for n_t in [n_l - 2, n_l - 4] {
                let m1 = build_matrix(view, base, 1, n_t, true, &part).unwrap();
                let m2 = build_matrix(view, base, 2, n_t, true, &part).unwrap();
                assert!(m2.entries.values().any(|p| !p.is_zero()));
                let delta = spec.gamma.mul(&K::from_i64(3)).scale_pow2(-2 - n_l);
                let psi = part.big_psi(&delta, n_l).unwrap();
                assert!(!psi.is_zero());
                let g = psi.div(&delta);
                for (a, b) in [(&m1, &m1), (&m1, &m2), (&m2, &m1), (&m2, &m2)] {
                    products += 1;
                    let prod = chain_product(a, b, &g).unwrap();
                    if prod.iter().any(|p| !p.is_zero()) {
                        failures += 1;
                    }
                }
            }
        }
        (products, failures)
    }
    let (h1, f1) = load_ham::<BigRational>("ham1.json");
    let v1 = ModelView::Zw {
        spec: &h1.spec,
        force: &f1,
    };
    let (p1, b1) = run(&v1, &Mode::from_slice(&[6]));
    let (h2, f2) = load_ham::<QuadReal>("ham2.json");
    let v2 = ModelView::Zw {
        spec: &h2.spec,
        force: &f2,
    };
    let (p2, b2) = run(&v2, &Mode::from_slice(&[4, -2]));
    report(
        "criterion 4: localized matrix chain cancellation",
        b1 + b2 == 0,
        &format!("{} symbolic products vanish exactly", p1 + p2),
    );
}

/// Criterion 5: propagator-pair collapse: the pair sum stays below
/// 2/omega^2 across 1000 samples per scale while a single propagator grows
/// like 2^n; the observed per-sample gain scales like 2^-n within a factor
/// of 4.
#[test]
fn criterion_05_propagator_pair_gain() {
    let m = load_real::<BigRational>("sysA.json");
    let part = ScalePartition::new(m.spec.gamma.clone(), PsiShape::SmoothstepC1);
    let rep = verify_pair_gain(&m.spec, &part, 1, 4, 12, 1000).unwrap();
    let mut pass = rep.ok();
    let scaled: Vec<f64> = rep
        .gain_rows
        .iter()
        .map(|r| r.gain_ratio * 2f64.powi(r.scale))
        .collect();
    let mut sorted = scaled.clone();
    sorted.sort_by(f64::total_cmp);
    let mid = sorted[sorted.len() / 2];
    for s in &scaled {
        pass &= *s < 4.0 * mid && *s > mid / 4.0;
    }
    // single propagators grow with the scale
    for w in rep.gain_rows.windows(2) {
        pass &= w[1].max_single > 1.5 * w[0].max_single;
    }
    report(
        "criterion 5: propagator-pair gain",
        pass,
        &format!(
            "{} samples, bound and collapse exact, gain*2^n in [{:.3}, {:.3}]",
            rep.instances,
            sorted.first().unwrap(),
            sorted.last().unwrap()
        ),
    );
}

/// Criterion 6: the localized-value family identities hold exactly on every
/// enumerated self-energy cluster of order <= 2, under forced localisation,
/// at d = 2 in both formulations.
#[test]
fn criterion_06_family_identities() {
    let mut pass = true;
    let mut instances = 0u64;
    {
        let m = load_real::<QuadReal>("g2.json");
        let view = ModelView::Real(&m);
        let reports = verify_symmetries(&view, &Mode::from_slice(&[4, -2]), 2).unwrap();
        for r in &reports {
            pass &= r.ok();
            instances += r.instances;
        }
        pass &= reports.iter().all(|r| r.instances > 0);
    }
    {
        let (h, f) = load_ham::<QuadReal>("ham2.json");
        let view = ModelView::Zw {
            spec: &h.spec,
            force: &f,
        };
        let reports = verify_symmetries(&view, &Mode::from_slice(&[4, -2]), 2).unwrap();
        for r in &reports {
            pass &= r.ok();
            instances += r.instances;
        }
        pass &= reports[0].instances > 0 && reports[2].instances > 0 && reports[3].instances > 0;
    }
    report(
        "criterion 6: family identities on self-energy clusters",
        pass,
        &format!("{instances} instances, both formulations, exact"),
    );
}

/// Criterion 7: the truncation residual scales like the first omitted
/// order: log-log slope within 0.3 of K+1 for K in 2..=4, both corpus
/// models, at 256-bit precision.
#[test]
fn criterion_07_residual_scaling() {
    bigfloat::set_default_precision(256);
    let prec = 256;
    let eps: Vec<Bf> = [-2.0f64, -2.5, -3.0, -3.5]
        .iter()
        .map(|l| {
            let ln10 = Bf::from_i64_prec(10, prec).ln();
            RealScalar::exp(&Bf::from_f64_prec(*l, prec).mul(&ln10)).unwrap()
        })
        .collect();
    let mut pass = true;
    let mut detail = String::new();
    {
        let m = load_real::<BigRational>("sysA.json");
        let view = ModelView::Real(&m);
        let c = vec![CScalar::from_real(Bf::from_f64_prec(0.3, prec))];
        for k in 2..=4usize {
            let t = solve_up_to(&view, k).unwrap();
            let rep = residual_sweep(&view, &t, &c, &eps, 64).unwrap();
            let slope = rep.slope.unwrap();
            pass &= (slope - (k as f64 + 1.0)).abs() <= 0.3;
            detail.push_str(&format!("sysA K={k}: {slope:.2}; "));
        }
    }
    {
        let m = load_real::<QuadReal>("g2.json");
        let view = ModelView::Real(&m);
        let c = vec![
            CScalar::from_real(Bf::from_f64_prec(0.3, prec)),
            CScalar::from_real(Bf::from_f64_prec(0.2, prec)),
        ];
        for k in 2..=4usize {
            let t = solve_up_to(&view, k).unwrap();
            let rep = residual_sweep(&view, &t, &c, &eps, 24).unwrap();
            let slope = rep.slope.unwrap();
            pass &= (slope - (k as f64 + 1.0)).abs() <= 0.3;
            detail.push_str(&format!("g2 K={k}: {slope:.2}; "));
        }
    }
    report("criterion 7: residual scaling", pass, detail.trim_end());
}

/// Criterion 8: the small-divisor lattice scans find no violation over the
/// radius-6 ball for either corpus frequency spec, with equal divisors
/// decided on the lattice.
#[test]
fn criterion_08_divisor_scans() {
    let mut pass = true;
    let mut scanned = 0u64;
    {
        let m = load_real::<BigRational>("sysA.json");
        let r1 = check_divisor_dichotomy(&m.spec, 6);
        let (r2, r3) = check_scale_gap_and_chains(&m.spec, 6, 8);
        for r in [&r1, &r2, &r3] {
            pass &= r.ok();
            scanned += r.scanned_count;
        }
    }
    {
        let m = load_real::<QuadReal>("g2.json");
        let r1 = check_divisor_dichotomy(&m.spec, 6);
        let (r2, r3) = check_scale_gap_and_chains(&m.spec, 6, 8);
        for r in [&r1, &r2, &r3] {
            pass &= r.ok();
            scanned += r.scanned_count;
        }
    }
    report(
        "criterion 8: small-divisor lattice scans",
        pass,
        &format!("{scanned} pairs and chains scanned, zero violations"),
    );
}

/// Criterion 9: counting statistics over all scaled trees of order <= 3:
/// the per-scale sup is finite and reported, every resonant line has its
/// companion non-resonant line, and the displacement bounds hold with
/// E1 = 4 and E2 = 7.
#[test]
fn criterion_09_counting_statistics() {
    let mut pass = true;
    let mut detail = String::new();
    {
        let m = load_real::<BigRational>("sysA.json");
        let view = ModelView::Real(&m);
        let part = ScalePartition::new(m.spec.gamma.clone(), PsiShape::SmoothstepC1);
        let rep = verify_counting(&view, &part, 3, E1, E2).unwrap();
        pass &= rep.ok();
        detail.push_str(&format!(
            "sysA: {} assignments, {} self-energy; ",
            rep.assignments_scanned, rep.self_energy_found
        ));
    }
    {
        let m = load_real::<QuadReal>("g2.json");
        let view = ModelView::Real(&m);
        let part = ScalePartition::new(m.spec.gamma.clone(), PsiShape::SmoothstepC1);
        let rep = verify_counting(&view, &part, 3, E1, E2).unwrap();
        pass &= rep.ok();
        pass &= rep.counting_sup.iter().all(|(_, s)| s.is_finite());
        let sups: Vec<String> = rep
            .counting_sup
            .iter()
            .map(|(n, s)| format!("n>={n}: {s:.3}"))
            .collect();
        detail.push_str(&format!(
            "g2: {} assignments, {} self-energy, {} resonant, sup [{}]",
            rep.assignments_scanned,
            rep.self_energy_found,
            rep.resonant_lines_found,
            sups.join(", ")
        ));
        // the scan must actually see self-energy clusters
        pass &= rep.self_energy_found > 0;
    }
    report("criterion 9: counting statistics", pass, &detail);
}

/// Criterion 10: partition of unity to 2^-64 over 10^4 sampled points,
/// scale multiplicity never above 2, and the divisor window containment.
#[test]
fn criterion_10_partition_of_unity() {
    bigfloat::set_default_precision(256);
    let gamma = Bf::from_f64_prec(0.5, 256);
    let mut pass = true;
    let mut worst = 0f64;
    for shape in [PsiShape::SmoothstepC1, PsiShape::ExpBumpCinf] {
        let part = ScalePartition::new(gamma.clone(), shape);
        let top = gamma.mul(&Bf::from_i64_prec(7, 256)).scale_pow2(-3);
        for i in 1..=5000usize {
            // sample u in (0, 7 gamma / 8] on a shifted grid spanning many
            // scales
            let frac = Bf::from_i64_prec(i as i64, 256).div(&Bf::from_i64_prec(5000, 256));
            let u = top.mul(&frac.mul(&frac).mul(&frac));
            if u.is_zero() {
                continue;
            }
            let weights = part.scale_weights(&u, false).unwrap();
            pass &= matches!(weights.len(), 1 | 2);
            let mut sum = Bf::from_i64_prec(0, 256);
            for (n, w) in &weights {
                sum = sum.add(w);
                pass &= part.window_holds(&u, *n);
            }
            let dev = sum.sub(&Bf::from_i64_prec(1, 256)).abs();
            let devf = RealScalar::to_f64(&dev);
            if devf > worst {
                worst = devf;
            }
            pass &= dev.le(&Bf::from_i64_prec(1, 256).scale_pow2(-64));
        }
    }
    report(
        "criterion 10: partition of unity and scale windows",
        pass,
        &format!("10000 samples across two shapes, worst deviation {worst:.2e}"),
    );
}
