//! Polynomials in the amplitude symbols `c1+, c1-, …, cd+, cd-` with complex
//! scalar coefficients.
//!
//! Every series coefficient and counterterm lives here. Monomials are keyed
//! by the exponent tuple in lexicographic order, which also fixes the
//! canonical text serialization. No stored term has a negligible scalar.

use std::collections::BTreeMap;
use std::fmt;

use smallvec::SmallVec;

use crate::error::{Error, Result};
use crate::scalar::{CScalar, RealScalar};
use crate::Sign;

/// Exponent multi-index over the 2d symbols, ordered
/// `c1+, c1-, c2+, c2-, …`. Exponents are signed: series coefficients are
/// genuine polynomials, but localized self-energy values factor through
/// negative powers of single amplitude symbols.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Debug)]
pub struct Mono(pub SmallVec<[i32; 8]>);

impl Mono {
    pub fn unit(dim: usize) -> Self {
        Mono(SmallVec::from_elem(0, 2 * dim))
    }

    pub fn symbol(dim: usize, j: usize, sign: Sign) -> Self {
        let mut m = Mono::unit(dim);
        m.0[Self::slot(j, sign)] += 1;
        m
    }

    pub fn slot(j: usize, sign: Sign) -> usize {
        2 * (j - 1)
            + match sign {
                Sign::Plus => 0,
                Sign::Minus => 1,
            }
    }

    pub fn degree(&self) -> i64 {
        self.0.iter().map(|&e| e as i64).sum()
    }

    pub fn is_polynomial(&self) -> bool {
        self.0.iter().all(|&e| e >= 0)
    }

    fn conjugate(&self) -> Mono {
        let mut out = self.0.clone();
        for p in out.chunks_exact_mut(2) {
            p.swap(0, 1);
        }
        Mono(out)
    }

    fn mul(&self, o: &Mono) -> Mono {
        Mono(
            self.0
                .iter()
                .zip(o.0.iter())
                .map(|(a, b)| a + b)
                .collect(),
        )
    }
}

#[derive(Clone, PartialEq, Debug)]
pub struct CoeffPoly<K: RealScalar> {
    dim: usize,
    terms: BTreeMap<Mono, CScalar<K>>,
}

impl<K: RealScalar> CoeffPoly<K> {
    pub fn zero(dim: usize) -> Self {
        CoeffPoly {
            dim,
            terms: BTreeMap::new(),
        }
    }

    pub fn constant(dim: usize, c: CScalar<K>) -> Self {
        let mut p = CoeffPoly::zero(dim);
        p.add_term(Mono::unit(dim), c);
        p
    }

    pub fn one(dim: usize) -> Self {
        CoeffPoly::constant(dim, CScalar::one())
    }

    pub fn symbol(dim: usize, j: usize, sign: Sign) -> Self {
        let mut p = CoeffPoly::zero(dim);
        p.add_term(Mono::symbol(dim, j, sign), CScalar::one());
        p
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn num_terms(&self) -> usize {
        self.terms.len()
    }

    pub fn terms(&self) -> impl Iterator<Item = (&Mono, &CScalar<K>)> {
        self.terms.iter()
    }

    pub fn max_total_degree(&self) -> i64 {
        self.terms.keys().map(|m| m.degree()).max().unwrap_or(0)
    }

    /// True when no monomial carries a negative exponent.
    pub fn is_polynomial(&self) -> bool {
        self.terms.keys().all(|m| m.is_polynomial())
    }

    /// Insert with combination; drops the result if it prunes to zero.
    pub fn add_term(&mut self, m: Mono, c: CScalar<K>) {
        debug_assert_eq!(m.0.len(), 2 * self.dim);
        if c.is_negligible() {
            return;
        }
        match self.terms.entry(m) {
            std::collections::btree_map::Entry::Vacant(e) => {
                e.insert(c);
            }
            std::collections::btree_map::Entry::Occupied(mut e) => {
                let s = e.get().add(&c);
                if s.is_negligible() {
                    e.remove();
                } else {
                    *e.get_mut() = s;
                }
            }
        }
    }

    fn check_dim(&self, o: &Self) -> Result<()> {
        if self.dim != o.dim {
            Err(Error::DimensionMismatch(self.dim, o.dim))
        } else {
            Ok(())
        }
    }

    pub fn add(&self, o: &Self) -> Result<Self> {
        self.check_dim(o)?;
        let mut out = self.clone();
        for (m, c) in &o.terms {
            out.add_term(m.clone(), c.clone());
        }
        Ok(out)
    }

    pub fn sub(&self, o: &Self) -> Result<Self> {
        self.add(&o.neg())
    }

    pub fn neg(&self) -> Self {
        let mut out = CoeffPoly::zero(self.dim);
        for (m, c) in &self.terms {
            out.terms.insert(m.clone(), c.neg());
        }
        out
    }

    pub fn mul(&self, o: &Self) -> Result<Self> {
        self.check_dim(o)?;
        let mut out = CoeffPoly::zero(self.dim);
        for (ma, ca) in &self.terms {
            for (mb, cb) in &o.terms {
                out.add_term(ma.mul(mb), ca.mul(cb));
            }
        }
        Ok(out)
    }

    pub fn mul_scalar(&self, c: &CScalar<K>) -> Self {
        let mut out = CoeffPoly::zero(self.dim);
        for (m, v) in &self.terms {
            out.add_term(m.clone(), v.mul(c));
        }
        out
    }

    pub fn scale_pow2(&self, k: i32) -> Self {
        let mut out = CoeffPoly::zero(self.dim);
        for (m, v) in &self.terms {
            out.add_term(m.clone(), v.scale_pow2(k));
        }
        out
    }

    /// Swap every `cj+` with `cj-` and conjugate each scalar. Involution.
    pub fn conjugate(&self) -> Self {
        let mut out = CoeffPoly::zero(self.dim);
        for (m, c) in &self.terms {
            out.add_term(m.conjugate(), c.conj());
        }
        out
    }

    /// Substitute `cj+ = c[j]`, `cj- = conj(c[j])` and evaluate.
    pub fn eval(&self, c: &[CScalar<K>]) -> Result<CScalar<K>> {
        if c.len() != self.dim {
            return Err(Error::DimensionMismatch(self.dim, c.len()));
        }
        let mut acc = CScalar::zero();
        for (m, coeff) in &self.terms {
            let mut t = coeff.clone();
            for j in 0..self.dim {
                for (slot, base) in [(2 * j, c[j].clone()), (2 * j + 1, c[j].conj())] {
                    let e = m.0[slot];
                    if e >= 0 {
                        for _ in 0..e {
                            t = t.mul(&base);
                        }
                    } else {
                        if base.is_zero() {
                            return Err(Error::Numeric(
                                "evaluating a negative symbol power at zero amplitude".into(),
                            ));
                        }
                        let inv = CScalar::one().div(&base);
                        for _ in 0..(-e) {
                            t = t.mul(&inv);
                        }
                    }
                }
            }
            acc = acc.add(&t);
        }
        Ok(acc)
    }

    /// True when the polynomial depends on the amplitudes only through the
    /// moduli |c1|^2, …, |cd|^2: every monomial pairs each `cj+` with a
    /// `cj-`, and every scalar is real.
    pub fn is_modulus_only(&self) -> bool {
        self.terms.iter().all(|(m, c)| {
            c.is_real() && m.0.chunks_exact(2).all(|p| p[0] == p[1])
        })
    }

    /// Multiply by the single symbol `cj^sign`.
    pub fn mul_symbol(&self, j: usize, sign: Sign) -> Self {
        let slot = Mono::slot(j, sign);
        let mut out = CoeffPoly::zero(self.dim);
        for (m, c) in &self.terms {
            let mut mm = m.clone();
            mm.0[slot] += 1;
            out.add_term(mm, c.clone());
        }
        out
    }

    /// Exact polynomial division by the single symbol `cj^sign`. Fails
    /// unless every stored monomial carries that symbol; the tree grammar
    /// guarantees it wherever the series pipelines divide.
    pub fn div_symbol(&self, j: usize, sign: Sign) -> Result<Self> {
        let slot = Mono::slot(j, sign);
        let mut out = CoeffPoly::zero(self.dim);
        for (m, c) in &self.terms {
            if m.0[slot] <= 0 {
                return Err(Error::Assertion(format!(
                    "polynomial not divisible by c{j}{}: monomial {} lacks the symbol",
                    sign,
                    mono_string(m)
                )));
            }
            let mut mm = m.clone();
            mm.0[slot] -= 1;
            out.add_term(mm, c.clone());
        }
        Ok(out)
    }

    /// Division in the Laurent sense: exponents may go negative. Cluster
    /// values factor through such monomials.
    pub fn div_symbol_laurent(&self, j: usize, sign: Sign) -> Self {
        let slot = Mono::slot(j, sign);
        let mut out = CoeffPoly::zero(self.dim);
        for (m, c) in &self.terms {
            let mut mm = m.clone();
            mm.0[slot] -= 1;
            out.add_term(mm, c.clone());
        }
        out
    }

    /// Canonical text form: monomials in descending lexicographic order of
    /// the exponent tuple, each as `(coeff) * c1+^a c1-^b …`.
    pub fn to_canonical_string(&self) -> String {
        if self.terms.is_empty() {
            return "(0)".to_string();
        }
        let parts: Vec<String> = self
            .terms
            .iter()
            .rev()
            .map(|(m, c)| {
                let ms = mono_string(m);
                if ms.is_empty() {
                    format!("({c})")
                } else {
                    format!("({c}) * {ms}")
                }
            })
            .collect();
        parts.join(" + ")
    }
}

fn mono_string(m: &Mono) -> String {
    let mut parts = Vec::new();
    for (j, p) in m.0.chunks_exact(2).enumerate() {
        if p[0] > 0 {
            parts.push(format!("c{}+^{}", j + 1, p[0]));
        }
        if p[1] > 0 {
            parts.push(format!("c{}-^{}", j + 1, p[1]));
        }
    }
    parts.join(" ")
}

impl<K: RealScalar> fmt::Display for CoeffPoly<K> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.to_canonical_string())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_bigint::BigInt;
    use num_rational::BigRational;
    use proptest::prelude::*;

    type P = CoeffPoly<BigRational>;

    fn c(n: i64, d: i64) -> CScalar<BigRational> {
        CScalar::from_real(BigRational::new(BigInt::from(n), BigInt::from(d)))
    }

    fn sym(j: usize, s: Sign) -> P {
        P::symbol(1, j, s)
    }

    #[test]
    fn additive_inverse_cancels_exactly() {
        let p = sym(1, Sign::Plus);
        let z = p.add(&p.neg()).unwrap();
        assert!(z.is_zero());
    }

    #[test]
    fn doubling_and_mixed_sum() {
        let cp = sym(1, Sign::Plus);
        let cm = sym(1, Sign::Minus);
        let prod = cp.mul(&cm).unwrap();
        let two = prod.add(&prod).unwrap();
        assert_eq!(two.to_canonical_string(), "(2) * c1+^1 c1-^1");

        // (c1+ + c2-) + c2- in dimension 2
        let a = CoeffPoly::<BigRational>::symbol(2, 1, Sign::Plus)
            .add(&CoeffPoly::symbol(2, 2, Sign::Minus))
            .unwrap();
        let b = a.add(&CoeffPoly::symbol(2, 2, Sign::Minus)).unwrap();
        assert_eq!(b.to_canonical_string(), "(1) * c1+^1 + (2) * c2-^1");
    }

    #[test]
    fn product_of_conjugate_linear_forms() {
        let cp = sym(1, Sign::Plus);
        let cm = sym(1, Sign::Minus);
        let s = cp.add(&cm).unwrap();
        let d = cp.sub(&cm).unwrap();
        let p = s.mul(&d).unwrap();
        // (c+)^2 - (c-)^2
        let expect = cp
            .mul(&cp)
            .unwrap()
            .sub(&cm.mul(&cm).unwrap())
            .unwrap();
        assert_eq!(p, expect);
        assert!(P::zero(1).mul(&s).unwrap().is_zero());
    }

    #[test]
    fn conjugation_swaps_signs_and_scalars() {
        let p = sym(1, Sign::Plus).mul_scalar(&CScalar::i());
        let q = p.conjugate();
        assert_eq!(
            q,
            sym(1, Sign::Minus).mul_scalar(&CScalar::i().neg())
        );
        // self-conjugate monomial
        let m = sym(1, Sign::Plus).mul(&sym(1, Sign::Minus)).unwrap();
        assert_eq!(m.conjugate(), m);
    }

    #[test]
    fn evaluation_examples() {
        let m = sym(1, Sign::Plus).mul(&sym(1, Sign::Minus)).unwrap();
        let v = m.eval(&[c(2, 1)]).unwrap();
        assert_eq!(v, c(4, 1));

        let one_plus_i = CScalar::new(
            BigRational::from_integer(BigInt::from(1)),
            BigRational::from_integer(BigInt::from(1)),
        );
        let v = sym(1, Sign::Plus).eval(&[one_plus_i.clone()]).unwrap();
        assert_eq!(v, one_plus_i);

        // 2 (c1+)^2 at c = i gives -2
        let p = sym(1, Sign::Plus)
            .mul(&sym(1, Sign::Plus))
            .unwrap()
            .mul_scalar(&c(2, 1));
        let v = p.eval(&[CScalar::i()]).unwrap();
        assert_eq!(v, c(-2, 1));
    }

    #[test]
    fn modulus_only_predicate() {
        let m = sym(1, Sign::Plus).mul(&sym(1, Sign::Minus)).unwrap();
        assert!(m.is_modulus_only());
        let sq = sym(1, Sign::Plus).mul(&sym(1, Sign::Plus)).unwrap();
        assert!(!sq.is_modulus_only());
        // the second-order counterterm of the reference quadratic oscillator
        let eta2 = m.mul_scalar(&c(10, 3));
        assert!(eta2.is_modulus_only());
        assert_eq!(eta2.to_canonical_string(), "(10/3) * c1+^1 c1-^1");
    }

    #[test]
    fn symbol_division() {
        let m = sym(1, Sign::Plus).mul(&sym(1, Sign::Minus)).unwrap();
        let d = m.div_symbol(1, Sign::Plus).unwrap();
        assert_eq!(d, sym(1, Sign::Minus));
        assert!(sym(1, Sign::Minus).div_symbol(1, Sign::Plus).is_err());
    }

    fn arb_poly(dim: usize) -> impl Strategy<Value = P> {
        proptest::collection::vec(
            (
                proptest::collection::vec(0i32..3, 2 * dim),
                -5i64..6,
                -5i64..6,
            ),
            0..6,
        )
        .prop_map(move |terms| {
            let mut p = P::zero(dim);
            for (exps, re, im) in terms {
                let coeff = CScalar::new(
                    BigRational::from_integer(BigInt::from(re)),
                    BigRational::from_integer(BigInt::from(im)),
                );
                p.add_term(Mono(SmallVec::from_vec(exps)), coeff);
            }
            p
        })
    }

    proptest! {
        #[test]
        fn ring_axioms(a in arb_poly(2), b in arb_poly(2), d in arb_poly(2)) {
            // associativity of multiplication
            let ab_d = a.mul(&b).unwrap().mul(&d).unwrap();
            let a_bd = a.mul(&b.mul(&d).unwrap()).unwrap();
            prop_assert_eq!(&ab_d, &a_bd);
            // distributivity
            let lhs = a.mul(&b.add(&d).unwrap()).unwrap();
            let rhs = a.mul(&b).unwrap().add(&a.mul(&d).unwrap()).unwrap();
            prop_assert_eq!(&lhs, &rhs);
        }

        #[test]
        fn eval_is_ring_hom(a in arb_poly(2), b in arb_poly(2)) {
            let c = [
                CScalar::new(
                    BigRational::new(BigInt::from(1), BigInt::from(3)),
                    BigRational::new(BigInt::from(-1), BigInt::from(2)),
                ),
                CScalar::new(
                    BigRational::new(BigInt::from(2), BigInt::from(7)),
                    BigRational::new(BigInt::from(1), BigInt::from(5)),
                ),
            ];
            let lhs = a.mul(&b).unwrap().eval(&c).unwrap();
            let rhs = a.eval(&c).unwrap().mul(&b.eval(&c).unwrap());
            prop_assert_eq!(lhs, rhs);
        }

        #[test]
        fn conjugation_involution_and_multiplicativity(a in arb_poly(2), b in arb_poly(2)) {
            prop_assert_eq!(a.conjugate().conjugate(), a.clone());
            let lhs = a.mul(&b).unwrap().conjugate();
            let rhs = a.conjugate().mul(&b.conjugate()).unwrap();
            prop_assert_eq!(lhs, rhs);
        }
    }
}
