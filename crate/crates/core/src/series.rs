//! Direct order-by-order solution of the bifurcation and range equations by
//! Fourier-Taylor algebra. No trees: this is the oracle the diagrammatic
//! pipeline must reproduce.

use std::collections::{BTreeMap, BTreeSet};

use crate::error::{Error, Result};
use crate::model::sidx_norm;
use crate::poly::CoeffPoly;
use crate::scalar::{CScalar, RealScalar};
use crate::{Mode, Sign, Variant};

/// Series data up to a fixed order: `x` holds the solution coefficients
/// (for the complex formulation, sign `+` holds the z tower and sign `-`
/// the w tower) and `eta` the counterterm coefficients.
#[derive(Clone, Debug)]
pub struct SeriesTable<K: RealScalar> {
    pub variant: Variant,
    pub dim: usize,
    pub max_order: usize,
    pub x: BTreeMap<(usize, usize, Mode, Sign), CoeffPoly<K>>,
    pub eta: BTreeMap<(usize, usize, Sign), CoeffPoly<K>>,
}

impl<K: RealScalar> SeriesTable<K> {
    pub fn seed(variant: Variant, dim: usize) -> Self {
        let mut x = BTreeMap::new();
        for j in 1..=dim {
            match variant {
                Variant::RealX => {
                    x.insert(
                        (0, j, Mode::unit(dim, j, Sign::Plus), Sign::Plus),
                        CoeffPoly::symbol(dim, j, Sign::Plus),
                    );
                    x.insert(
                        (0, j, Mode::unit(dim, j, Sign::Minus), Sign::Plus),
                        CoeffPoly::symbol(dim, j, Sign::Minus),
                    );
                }
                Variant::ComplexZw => {
                    x.insert(
                        (0, j, Mode::unit(dim, j, Sign::Plus), Sign::Plus),
                        CoeffPoly::symbol(dim, j, Sign::Plus),
                    );
                    x.insert(
                        (0, j, Mode::unit(dim, j, Sign::Minus), Sign::Minus),
                        CoeffPoly::symbol(dim, j, Sign::Minus),
                    );
                }
            }
        }
        SeriesTable {
            variant,
            dim,
            max_order: 0,
            x,
            eta: BTreeMap::new(),
        }
    }

    pub fn coeff(&self, k: usize, j: usize, nu: &Mode, sign: Sign) -> CoeffPoly<K> {
        self.x
            .get(&(k, j, nu.clone(), sign))
            .cloned()
            .unwrap_or_else(|| CoeffPoly::zero(self.dim))
    }

    pub fn eta_coeff(&self, k: usize, j: usize, sign: Sign) -> CoeffPoly<K> {
        self.eta
            .get(&(k, j, sign))
            .cloned()
            .unwrap_or_else(|| CoeffPoly::zero(self.dim))
    }

    /// All modes stored at a given order and component.
    pub fn modes_at(&self, k: usize, j: usize, sign: Sign) -> Vec<Mode> {
        self.x
            .range((k, j, Mode::zero(0), Sign::Plus)..)
            .take_while(|((kk, jj, _, _), _)| *kk == k && *jj == j)
            .filter(|((_, _, _, s), _)| *s == sign)
            .map(|((_, _, m, _), _)| m.clone())
            .collect()
    }
}

pub use crate::model::ModelView as SolveModel;

/// Multiply the mode-indexed power series of the listed factors, truncating
/// at total order `max_ord` and pruning modes beyond `max_mode`.
fn series_product<K: RealScalar>(
    table: &SeriesTable<K>,
    factors: &[(usize, Sign)],
    max_ord: usize,
    max_mode: i64,
) -> BTreeMap<(usize, Mode), CoeffPoly<K>> {
    let dim = table.dim;
    let mut acc: BTreeMap<(usize, Mode), CoeffPoly<K>> = BTreeMap::new();
    acc.insert((0, Mode::zero(dim)), CoeffPoly::one(dim));
    for &(comp, sign) in factors {
        let mut next: BTreeMap<(usize, Mode), CoeffPoly<K>> = BTreeMap::new();
        for ((ord_a, mode_a), pa) in &acc {
            for kk in 0..=(max_ord - ord_a) {
                for nu in table.modes_at(kk, comp, sign) {
                    let mode = mode_a.add(&nu);
                    if mode.norm1() > max_mode {
                        continue;
                    }
                    let pb = table.x.get(&(kk, comp, nu.clone(), sign)).unwrap();
                    let prod = pa.mul(pb).expect("dimension agreement");
                    if prod.is_zero() {
                        continue;
                    }
                    let key = (ord_a + kk, mode);
                    match next.remove(&key) {
                        None => {
                            next.insert(key, prod);
                        }
                        Some(old) => {
                            next.insert(key, old.add(&prod).expect("dimension agreement"));
                        }
                    }
                }
            }
        }
        acc = next;
    }
    acc.retain(|_, p| !p.is_zero());
    acc
}

/// Assemble the order-k Fourier coefficients of the forcing for every
/// component. For the real variant the map is keyed by sign `+` only.
fn forcing_at_order<K: RealScalar>(
    model: &SolveModel<K>,
    table: &SeriesTable<K>,
    k: usize,
) -> BTreeMap<(usize, Sign), BTreeMap<Mode, CoeffPoly<K>>> {
    let dim = table.dim;
    let max_mode = 3 * k as i64;
    let mut out: BTreeMap<(usize, Sign), BTreeMap<Mode, CoeffPoly<K>>> = BTreeMap::new();
    match model {
        SolveModel::Real(m) => {
            for ((j, s), coeff) in &m.fcoeffs {
                let p = sidx_norm(s) - 1;
                if p > k {
                    continue;
                }
                let mut factors = Vec::new();
                for (i, &si) in s.iter().enumerate() {
                    for _ in 0..si {
                        factors.push((i + 1, Sign::Plus));
                    }
                }
                let prod = series_product(table, &factors, k - p, max_mode);
                let slot = out.entry((*j, Sign::Plus)).or_default();
                for ((ord, mode), poly) in prod {
                    if ord != k - p {
                        continue;
                    }
                    let term = poly.mul_scalar(coeff);
                    match slot.remove(&mode) {
                        None => {
                            slot.insert(mode, term);
                        }
                        Some(old) => {
                            slot.insert(mode, old.add(&term).expect("dim"));
                        }
                    }
                }
            }
        }
        SolveModel::Zw { force, .. } => {
            for ((sign, j, sp, sm), coeff) in &force.entries {
                let p = sidx_norm(sp) + sidx_norm(sm) - 1;
                if p > k {
                    continue;
                }
                let mut factors = Vec::new();
                for (i, &si) in sp.iter().enumerate() {
                    for _ in 0..si {
                        factors.push((i + 1, Sign::Plus));
                    }
                }
                for (i, &si) in sm.iter().enumerate() {
                    for _ in 0..si {
                        factors.push((i + 1, Sign::Minus));
                    }
                }
                let prod = series_product(table, &factors, k - p, max_mode);
                let slot = out.entry((*j, *sign)).or_default();
                for ((ord, mode), poly) in prod {
                    if ord != k - p {
                        continue;
                    }
                    let term = poly.mul_scalar(coeff);
                    match slot.remove(&mode) {
                        None => {
                            slot.insert(mode, term);
                        }
                        Some(old) => {
                            slot.insert(mode, old.add(&term).expect("dim"));
                        }
                    }
                }
            }
        }
    }
    for slot in out.values_mut() {
        slot.retain(|_, p| !p.is_zero());
    }
    let _ = dim;
    out
}

/// Counterterm contribution `sum_{k'=1..=k} eta^(k') x^(k-k')_{j,nu}`.
fn counterterm_sum<K: RealScalar>(
    table: &SeriesTable<K>,
    k: usize,
    j: usize,
    nu: &Mode,
    sign: Sign,
    upto: usize,
) -> CoeffPoly<K> {
    let mut acc = CoeffPoly::zero(table.dim);
    for kp in 1..=upto {
        let eta = table.eta_coeff(kp, j, sign);
        if eta.is_zero() {
            continue;
        }
        let x = table.coeff(k - kp, j, nu, sign);
        if x.is_zero() {
            continue;
        }
        acc = acc.add(&eta.mul(&x).expect("dim")).expect("dim");
    }
    acc
}

/// Advance the table by one order. Orders below `k` must be present.
pub fn solve_order<K: RealScalar>(
    model: &SolveModel<K>,
    table: &mut SeriesTable<K>,
    k: usize,
) -> Result<()> {
    assert_eq!(table.max_order + 1, k, "orders must be computed in sequence");
    let spec = model.spec();
    let dim = table.dim;
    let forcing = forcing_at_order(model, table, k);
    let empty = BTreeMap::new();

    match table.variant {
        Variant::RealX => {
            // bifurcation equations fix the counterterm; the + equation
            // determines it and the - equation is then checked, not solved.
            for j in 1..=dim {
                let f = forcing.get(&(j, Sign::Plus)).unwrap_or(&empty);
                let e_plus = Mode::unit(dim, j, Sign::Plus);
                let e_minus = Mode::unit(dim, j, Sign::Minus);
                let mut bif = f.get(&e_plus).cloned().unwrap_or_else(|| CoeffPoly::zero(dim));
                bif = bif
                    .add(&counterterm_sum(table, k, j, &e_plus, Sign::Plus, k - 1))
                    .expect("dim");
                let eta = bif.div_symbol(j, Sign::Plus)?.neg();

                let mut bif_m = f
                    .get(&e_minus)
                    .cloned()
                    .unwrap_or_else(|| CoeffPoly::zero(dim));
                bif_m = bif_m
                    .add(&counterterm_sum(table, k, j, &e_minus, Sign::Plus, k - 1))
                    .expect("dim");
                let eta_m = bif_m.div_symbol(j, Sign::Minus)?.neg();
                // exact kernels compare exactly; the float kernel prunes
                // the difference against its threshold
                if !eta.sub(&eta_m).expect("dim").is_zero() {
                    return Err(Error::Assertion(format!(
                        "counterterm mismatch between the two bifurcation equations at k={k} j={j}"
                    )));
                }
                if !eta.is_zero() {
                    table.eta.insert((k, j, Sign::Plus), eta);
                }
            }
            // range equations
            for j in 1..=dim {
                let f = forcing.get(&(j, Sign::Plus)).unwrap_or(&empty);
                let mut modes: BTreeSet<Mode> = f.keys().cloned().collect();
                for kp in 1..=k {
                    if !table.eta_coeff(kp, j, Sign::Plus).is_zero() {
                        for m in table.modes_at(k - kp, j, Sign::Plus) {
                            modes.insert(m);
                        }
                    }
                }
                for nu in modes {
                    if nu.is_unit(j, Sign::Plus) || nu.is_unit(j, Sign::Minus) {
                        continue;
                    }
                    let mut num = f.get(&nu).cloned().unwrap_or_else(|| CoeffPoly::zero(dim));
                    num = num
                        .add(&counterterm_sum(table, k, j, &nu, Sign::Plus, k))
                        .expect("dim");
                    if num.is_zero() {
                        continue;
                    }
                    let wn = spec.omega_dot(&nu);
                    let wj = &spec.omega[j - 1];
                    let den = wn.mul(&wn).sub(&wj.mul(wj));
                    if den.is_denominator_zero() {
                        return Err(Error::ResonantMode {
                            j,
                            nu: nu.to_repr(),
                        });
                    }
                    let x = num.mul_scalar(&CScalar::from_real(K::one().div(&den)));
                    table.x.insert((k, j, nu, Sign::Plus), x);
                }
            }
        }
        Variant::ComplexZw => {
            // two bifurcation equations; each tower keeps its own
            // counterterm and the conjugation relation between them is
            // asserted. For Hamiltonian tables they coincide.
            for j in 1..=dim {
                let e_plus = Mode::unit(dim, j, Sign::Plus);
                let e_minus = Mode::unit(dim, j, Sign::Minus);
                let fp = forcing.get(&(j, Sign::Plus)).unwrap_or(&empty);
                let fm = forcing.get(&(j, Sign::Minus)).unwrap_or(&empty);

                let mut bif = fp
                    .get(&e_plus)
                    .cloned()
                    .unwrap_or_else(|| CoeffPoly::zero(dim));
                bif = bif
                    .add(&counterterm_sum(table, k, j, &e_plus, Sign::Plus, k - 1))
                    .expect("dim");
                let eta_p = bif.div_symbol(j, Sign::Plus)?.neg();

                let mut bif_m = fm
                    .get(&e_minus)
                    .cloned()
                    .unwrap_or_else(|| CoeffPoly::zero(dim));
                bif_m = bif_m
                    .add(&counterterm_sum(table, k, j, &e_minus, Sign::Minus, k - 1))
                    .expect("dim");
                let eta_m = bif_m.div_symbol(j, Sign::Minus)?.neg();

                if !eta_m.sub(&eta_p.conjugate()).expect("dim").is_zero() {
                    return Err(Error::Assertion(format!(
                        "the two counterterm towers are not conjugate at k={k} j={j}"
                    )));
                }
                if !eta_p.is_zero() {
                    table.eta.insert((k, j, Sign::Plus), eta_p);
                }
                if !eta_m.is_zero() {
                    table.eta.insert((k, j, Sign::Minus), eta_m);
                }
            }
            // range equations, first order in each tower
            for j in 1..=dim {
                for sign in Sign::both() {
                    let f = forcing.get(&(j, sign)).unwrap_or(&empty);
                    let mut modes: BTreeSet<Mode> = f.keys().cloned().collect();
                    for kp in 1..=k {
                        if !table.eta_coeff(kp, j, sign).is_zero() {
                            for m in table.modes_at(k - kp, j, sign) {
                                modes.insert(m);
                            }
                        }
                    }
                    for nu in modes {
                        if nu.is_unit(j, sign) {
                            continue;
                        }
                        let mut num =
                            f.get(&nu).cloned().unwrap_or_else(|| CoeffPoly::zero(dim));
                        num = num
                            .add(&counterterm_sum(table, k, j, &nu, sign, k))
                            .expect("dim");
                        if num.is_zero() {
                            continue;
                        }
                        let wn = spec.omega_dot(&nu);
                        let signed = match sign {
                            Sign::Plus => wn,
                            Sign::Minus => wn.neg(),
                        };
                        let den = signed.sub(&spec.omega[j - 1]);
                        if den.is_denominator_zero() {
                            return Err(Error::ResonantMode {
                                j,
                                nu: nu.to_repr(),
                            });
                        }
                        let x = num.mul_scalar(&CScalar::from_real(K::one().div(&den)));
                        table.x.insert((k, j, nu, sign), x);
                    }
                }
            }
        }
    }
    table.max_order = k;
    Ok(())
}

pub fn solve_up_to<K: RealScalar>(model: &SolveModel<K>, order: usize) -> Result<SeriesTable<K>> {
    let dim = model.spec().d;
    let mut table = SeriesTable::seed(model.variant(), dim);
    for k in 1..=order {
        solve_order(model, &mut table, k)?;
    }
    Ok(table)
}

/// Structural invariants of a computed table. `real_coeffs` marks real
/// systems whose nonlinearity is real-valued, where the counterterms must be
/// real polynomials in the moduli.
pub fn verify_table_invariants<K: RealScalar>(
    table: &SeriesTable<K>,
    real_coeffs: bool,
) -> Result<()> {
    for ((k, j, nu, sign), p) in &table.x {
        if *k >= 1 {
            if nu.norm1() > 3 * *k as i64 {
                return Err(Error::Assertion(format!(
                    "mode support violation at k={k} j={j} nu={nu}"
                )));
            }
            if table.variant == Variant::RealX && (nu.is_unit(*j, Sign::Plus) || nu.is_unit(*j, Sign::Minus))
            {
                return Err(Error::Assertion(format!(
                    "shell coefficient stored at k={k} j={j} nu={nu}"
                )));
            }
            if table.variant == Variant::ComplexZw && nu.is_unit(*j, *sign) {
                return Err(Error::Assertion(format!(
                    "shell coefficient stored at k={k} j={j} nu={nu} sign={sign}"
                )));
            }
        }
        if table.variant == Variant::RealX && real_coeffs {
            // reality: the coefficient at -nu is the conjugate
            let mate = table.coeff(*k, *j, &nu.neg(), Sign::Plus);
            if mate != p.conjugate() {
                return Err(Error::Assertion(format!(
                    "reality violation at k={k} j={j} nu={nu}"
                )));
            }
        }
    }
    for ((k, j, sign), eta) in &table.eta {
        match table.variant {
            Variant::RealX => {
                if real_coeffs && !eta.is_modulus_only() {
                    return Err(Error::Assertion(format!(
                        "counterterm at k={k} j={j} is not a real polynomial in the moduli"
                    )));
                }
            }
            Variant::ComplexZw => {
                let mate = table.eta_coeff(*k, *j, sign.flip());
                if mate != eta.conjugate() {
                    return Err(Error::Assertion(format!(
                        "counterterm towers not conjugate at k={k} j={j}"
                    )));
                }
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{derive_force_table, embed_real, load_model_str, LoadedModel, RealSystem};
    use num_bigint::BigInt;
    use num_rational::BigRational;

    fn q(n: i64, d: i64) -> BigRational {
        BigRational::new(BigInt::from(n), BigInt::from(d))
    }

    fn qc(n: i64, d: i64) -> CScalar<BigRational> {
        CScalar::from_real(q(n, d))
    }

    pub(crate) fn sysa() -> RealSystem<BigRational> {
        let txt = r#"{
            "name": "sysA", "kind": "real", "d": 1, "omega": ["1"], "tau": "1",
            "terms": [{"j": 1, "s": [2], "coeff": "1"}]
        }"#;
        match load_model_str::<BigRational>(txt).unwrap() {
            LoadedModel::Real(m) => m,
            _ => unreachable!(),
        }
    }

    #[test]
    fn first_order_of_reference_system() {
        let m = sysa();
        let t = solve_up_to(&SolveModel::Real(&m), 1).unwrap();
        // eta^(1) = 0
        assert!(t.eta_coeff(1, 1, Sign::Plus).is_zero());
        // x^(1)_{1,2} = (1/3)(c+)^2
        let cp = CoeffPoly::symbol(1, 1, Sign::Plus);
        let cm = CoeffPoly::symbol(1, 1, Sign::Minus);
        let x2 = t.coeff(1, 1, &Mode::from_slice(&[2]), Sign::Plus);
        assert_eq!(x2, cp.mul(&cp).unwrap().mul_scalar(&qc(1, 3)));
        // x^(1)_{1,0} = -2 c+ c-
        let x0 = t.coeff(1, 1, &Mode::from_slice(&[0]), Sign::Plus);
        assert_eq!(x0, cp.mul(&cm).unwrap().mul_scalar(&qc(-2, 1)));
        // x^(1)_{1,-2} = (1/3)(c-)^2
        let xm2 = t.coeff(1, 1, &Mode::from_slice(&[-2]), Sign::Plus);
        assert_eq!(xm2, cm.mul(&cm).unwrap().mul_scalar(&qc(1, 3)));
    }

    #[test]
    fn second_order_counterterm_of_reference_system() {
        let m = sysa();
        let t = solve_up_to(&SolveModel::Real(&m), 2).unwrap();
        let cp = CoeffPoly::symbol(1, 1, Sign::Plus);
        let cm = CoeffPoly::symbol(1, 1, Sign::Minus);
        let expect = cp.mul(&cm).unwrap().mul_scalar(&qc(10, 3));
        assert_eq!(t.eta_coeff(2, 1, Sign::Plus), expect);
    }

    #[test]
    fn odd_orders_vanish_by_parity() {
        let m = sysa();
        let t = solve_up_to(&SolveModel::Real(&m), 4).unwrap();
        assert!(t.eta_coeff(1, 1, Sign::Plus).is_zero());
        assert!(t.eta_coeff(3, 1, Sign::Plus).is_zero());
        assert!(!t.eta_coeff(2, 1, Sign::Plus).is_zero());
        assert!(!t.eta_coeff(4, 1, Sign::Plus).is_zero());
        verify_table_invariants(&t, true).unwrap();
    }

    #[test]
    fn no_quadratic_term_means_trivial_first_order() {
        // f = x^3 only: first order has no degree-2 source
        let txt = r#"{
            "name": "cubic", "kind": "real", "d": 1, "omega": ["1"], "tau": "1",
            "terms": [{"j": 1, "s": [3], "coeff": "1"}]
        }"#;
        let LoadedModel::Real(m) = load_model_str::<BigRational>(txt).unwrap() else {
            panic!()
        };
        let t = solve_up_to(&SolveModel::Real(&m), 1).unwrap();
        assert!(t.eta_coeff(1, 1, Sign::Plus).is_zero());
        assert_eq!(t.modes_at(1, 1, Sign::Plus).len(), 0);
        // order 2 sees the cubic term
        let t = solve_up_to(&SolveModel::Real(&m), 2).unwrap();
        assert!(!t.eta_coeff(2, 1, Sign::Plus).is_zero());
    }

    #[test]
    fn order_zero_table() {
        let m = sysa();
        let t = solve_up_to(&SolveModel::Real(&m), 0).unwrap();
        assert_eq!(t.max_order, 0);
        assert_eq!(t.x.len(), 2);
    }

    #[test]
    fn resonant_frequency_detected() {
        // omega = (1, 2) is resonant: nu = (2, 0) hits omega_2 exactly
        let txt = r#"{
            "name": "res", "kind": "real", "d": 2, "omega": ["1", "2"], "tau": "2",
            "gamma0": "1/10",
            "terms": [{"j": 2, "s": [2, 0], "coeff": "1"}]
        }"#;
        let LoadedModel::Real(m) = load_model_str::<BigRational>(txt).unwrap() else {
            panic!()
        };
        let err = solve_up_to(&SolveModel::Real(&m), 1).unwrap_err();
        assert!(matches!(err, Error::ResonantMode { .. }), "{err}");
    }

    #[test]
    fn zw_solver_on_hamiltonian_model() {
        let txt = r#"{
            "name": "ham1", "kind": "hamiltonian", "d": 1, "omega": ["1"], "tau": "1",
            "aterms": [
                {"s_plus": [3], "s_minus": [0], "coeff": "1"},
                {"s_plus": [0], "s_minus": [3], "coeff": "1"},
                {"s_plus": [2], "s_minus": [1], "coeff": "1"},
                {"s_plus": [1], "s_minus": [2], "coeff": "1"}
            ]
        }"#;
        let LoadedModel::Hamiltonian(h) = load_model_str::<BigRational>(txt).unwrap() else {
            panic!()
        };
        let force = derive_force_table(&h).unwrap();
        let model = SolveModel::Zw {
            spec: &h.spec,
            force: &force,
        };
        let t = solve_up_to(&model, 3).unwrap();
        verify_table_invariants(&t, false).unwrap();
        // counterterms real and functions of the moduli only
        for k in 1..=3 {
            let e = t.eta_coeff(k, 1, Sign::Plus);
            assert!(e.is_modulus_only(), "eta^{k} = {e}");
        }
    }

    #[test]
    fn zw_solver_on_embedded_real_system_keeps_conjugation() {
        let m = sysa();
        let force = embed_real(&m);
        let model = SolveModel::Zw {
            spec: &m.spec,
            force: &force,
        };
        let t = solve_up_to(&model, 3).unwrap();
        verify_table_invariants(&t, false).unwrap();
    }
}
