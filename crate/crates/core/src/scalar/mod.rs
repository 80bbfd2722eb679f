//! Scalar kernels for the coefficient algebra.
//!
//! Three kernels share one interface: exact rational arithmetic, exact
//! arithmetic in a real quadratic field `Q(sqrt(D))`, and arbitrary-precision
//! binary floats. Exact kernels support equality with no tolerance; the float
//! kernel carries its working precision on every value and rounds mixed
//! operations to the smaller precision.

use std::cmp::Ordering;
use std::fmt;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{Signed, Zero};

use crate::error::{Error, Result};

pub mod bigfloat;
pub mod parse;
pub mod quad;
pub mod rational;

pub use bigfloat::Bf;
pub use quad::QuadReal;

/// Real number kernel. All coefficient and propagator arithmetic is generic
/// over this trait; the choice of kernel decides whether cancellation tests
/// are exact or thresholded.
pub trait RealScalar:
    Clone + PartialEq + fmt::Debug + fmt::Display + Send + Sync + 'static
{
    /// Kernel name used in reports and config echo.
    const KERNEL_NAME: &'static str;

    fn zero() -> Self;
    fn one() -> Self;
    fn from_i64(n: i64) -> Self;
    fn from_rat(r: &BigRational) -> Self;

    /// `sqrt(n)` for a natural `n`, if the kernel can represent it.
    fn sqrt_nat(n: u64) -> Result<Self>;

    fn add(&self, o: &Self) -> Self;
    fn sub(&self, o: &Self) -> Self;
    fn mul(&self, o: &Self) -> Self;
    /// Division; the caller guarantees `o` is nonzero.
    fn div(&self, o: &Self) -> Self;
    fn neg(&self) -> Self;
    fn abs(&self) -> Self;

    /// Multiply by 2^k. Exact in every kernel.
    fn scale_pow2(&self, k: i32) -> Self;

    fn is_zero(&self) -> bool;

    /// Pruning predicate used by the polynomial layer when dropping terms.
    /// Exact kernels: identical to `is_zero`. Float kernel: magnitude below
    /// the configured pruning threshold (default 2^(-precision/2)).
    fn is_negligible(&self) -> bool {
        self.is_zero()
    }

    /// Denominator-zero detection used by the order-by-order solver.
    /// Exact kernels test equality; the float kernel thresholds at
    /// 2^(-precision+8) to distinguish true resonance from underflow.
    fn is_denominator_zero(&self) -> bool {
        self.is_zero()
    }

    fn cmp_total(&self, o: &Self) -> Ordering;

    fn to_f64(&self) -> f64;
    fn to_bf(&self, prec: usize) -> Bf;

    /// `exp(self)`, where the kernel supports transcendental functions.
    fn exp(&self) -> Option<Self> {
        None
    }

    fn lt(&self, o: &Self) -> bool {
        self.cmp_total(o) == Ordering::Less
    }
    fn le(&self, o: &Self) -> bool {
        self.cmp_total(o) != Ordering::Greater
    }
    fn gt(&self, o: &Self) -> bool {
        self.cmp_total(o) == Ordering::Greater
    }
    fn ge(&self, o: &Self) -> bool {
        self.cmp_total(o) != Ordering::Less
    }

    fn from_ratio(num: i64, den: i64) -> Self {
        Self::from_rat(&BigRational::new(BigInt::from(num), BigInt::from(den)))
    }
}

/// Complex number over a real kernel. Conjugation is the kernel-level
/// involution used throughout the coefficient algebra.
#[derive(Clone, PartialEq, Debug)]
pub struct CScalar<K> {
    pub re: K,
    pub im: K,
}

impl<K: RealScalar> CScalar<K> {
    pub fn new(re: K, im: K) -> Self {
        CScalar { re, im }
    }

    pub fn zero() -> Self {
        CScalar::new(K::zero(), K::zero())
    }

    pub fn one() -> Self {
        CScalar::new(K::one(), K::zero())
    }

    pub fn i() -> Self {
        CScalar::new(K::zero(), K::one())
    }

    pub fn from_real(re: K) -> Self {
        CScalar::new(re, K::zero())
    }

    pub fn from_i64(n: i64) -> Self {
        CScalar::from_real(K::from_i64(n))
    }

    pub fn from_ratio(num: i64, den: i64) -> Self {
        CScalar::from_real(K::from_ratio(num, den))
    }

    pub fn add(&self, o: &Self) -> Self {
        CScalar::new(self.re.add(&o.re), self.im.add(&o.im))
    }

    pub fn sub(&self, o: &Self) -> Self {
        CScalar::new(self.re.sub(&o.re), self.im.sub(&o.im))
    }

    pub fn mul(&self, o: &Self) -> Self {
        CScalar::new(
            self.re.mul(&o.re).sub(&self.im.mul(&o.im)),
            self.re.mul(&o.im).add(&self.im.mul(&o.re)),
        )
    }

    pub fn mul_real(&self, k: &K) -> Self {
        CScalar::new(self.re.mul(k), self.im.mul(k))
    }

    pub fn div(&self, o: &Self) -> Self {
        let n2 = o.re.mul(&o.re).add(&o.im.mul(&o.im));
        let num = self.mul(&o.conj());
        CScalar::new(num.re.div(&n2), num.im.div(&n2))
    }

    pub fn div_real(&self, k: &K) -> Self {
        CScalar::new(self.re.div(k), self.im.div(k))
    }

    pub fn neg(&self) -> Self {
        CScalar::new(self.re.neg(), self.im.neg())
    }

    pub fn conj(&self) -> Self {
        CScalar::new(self.re.clone(), self.im.neg())
    }

    pub fn scale_pow2(&self, k: i32) -> Self {
        CScalar::new(self.re.scale_pow2(k), self.im.scale_pow2(k))
    }

    pub fn is_zero(&self) -> bool {
        self.re.is_zero() && self.im.is_zero()
    }

    pub fn is_negligible(&self) -> bool {
        self.re.is_negligible() && self.im.is_negligible()
    }

    /// Real part test used by structural predicates; thresholded only in the
    /// float kernel.
    pub fn is_real(&self) -> bool {
        self.im.is_negligible()
    }

    /// |z|^2 as a real kernel value.
    pub fn norm_sqr(&self) -> K {
        self.re.mul(&self.re).add(&self.im.mul(&self.im))
    }

    pub fn abs_to_f64(&self) -> f64 {
        let n = self.norm_sqr().to_f64();
        n.sqrt()
    }

    pub fn parse(s: &str) -> Result<Self> {
        parse::parse_scalar::<K>(s)
    }
}

fn fmt_real_part<K: RealScalar>(k: &K) -> String {
    format!("{k}")
}

impl<K: RealScalar> fmt::Display for CScalar<K> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.im.is_zero() {
            write!(f, "{}", fmt_real_part(&self.re))
        } else if self.re.is_zero() {
            write!(f, "{} i", fmt_real_part(&self.im))
        } else {
            write!(f, "{} + {} i", fmt_real_part(&self.re), fmt_real_part(&self.im))
        }
    }
}

/// Decompose n = f^2 * m with m squarefree; returns (f, m).
pub(crate) fn squarefree_split(n: u64) -> (u64, u64) {
    let mut f = 1u64;
    let mut m = n;
    let mut p = 2u64;
    while p * p <= m {
        while m % (p * p) == 0 {
            m /= p * p;
            f *= p;
        }
        p += 1;
    }
    (f, m)
}

pub(crate) fn rat_is_zero(r: &BigRational) -> bool {
    r.numer().is_zero()
}

pub(crate) fn rat_sign(r: &BigRational) -> i32 {
    if r.numer().is_zero() {
        0
    } else if r.numer().is_negative() {
        -1
    } else {
        1
    }
}

pub(crate) fn rat_zero() -> BigRational {
    <BigRational as Zero>::zero()
}

pub(crate) fn parse_err(msg: impl Into<String>) -> Error {
    Error::Parse(msg.into())
}
