//! Exact real quadratic-field kernel: values `a + b*sqrt(d)` with rational
//! `a, b` and a fixed squarefree radicand `d`.
//!
//! A value with `b == 0` normalizes to `d == 0` and is compatible with any
//! radicand, so plain rationals mix freely with field elements. Mixing two
//! distinct irrational radicands is a programming error and panics.

use std::cmp::Ordering;
use std::fmt;

use num_bigint::BigInt;
use num_rational::BigRational;

use super::{bigfloat::Bf, rat_is_zero, rat_sign, rat_zero, squarefree_split, RealScalar};
use crate::error::Result;

#[derive(Clone, PartialEq, Debug)]
pub struct QuadReal {
    pub a: BigRational,
    pub b: BigRational,
    /// Squarefree radicand; 0 when the value is rational.
    pub d: u64,
}

impl QuadReal {
    pub fn rational(a: BigRational) -> Self {
        QuadReal {
            a,
            b: rat_zero(),
            d: 0,
        }
    }

    pub fn new(a: BigRational, b: BigRational, d: u64) -> Self {
        if rat_is_zero(&b) {
            QuadReal::rational(a)
        } else {
            debug_assert!(d > 1, "irrational part requires a radicand > 1");
            QuadReal { a, b, d }
        }
    }

    fn join_radicand(&self, o: &Self) -> u64 {
        match (self.d, o.d) {
            (0, d) | (d, 0) => d,
            (x, y) if x == y => x,
            (x, y) => panic!("mixed quadratic radicands sqrt{x} and sqrt{y}"),
        }
    }

    /// Sign of a + b*sqrt(d) computed exactly.
    pub fn sign(&self) -> i32 {
        let sa = rat_sign(&self.a);
        let sb = rat_sign(&self.b);
        if sb == 0 {
            return sa;
        }
        if sa == 0 {
            return sb;
        }
        if sa == sb {
            return sa;
        }
        // opposite signs: compare a^2 against b^2 d
        let lhs = &self.a * &self.a;
        let rhs = (&self.b * &self.b) * BigRational::from_integer(BigInt::from(self.d));
        match lhs.cmp(&rhs) {
            Ordering::Greater => sa,
            Ordering::Less => sb,
            // equality would force sqrt(d) rational
            Ordering::Equal => 0,
        }
    }
}

impl fmt::Display for QuadReal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if rat_is_zero(&self.b) {
            write!(f, "{}", self.a)
        } else if rat_is_zero(&self.a) {
            write!(f, "{}*sqrt{}", self.b, self.d)
        } else {
            write!(f, "({} + {}*sqrt{})", self.a, self.b, self.d)
        }
    }
}

impl RealScalar for QuadReal {
    const KERNEL_NAME: &'static str = "quadratic-field";

    fn zero() -> Self {
        QuadReal::rational(rat_zero())
    }

    fn one() -> Self {
        QuadReal::rational(num_traits::One::one())
    }

    fn from_i64(n: i64) -> Self {
        QuadReal::rational(BigRational::from_integer(BigInt::from(n)))
    }

    fn from_rat(r: &BigRational) -> Self {
        QuadReal::rational(r.clone())
    }

    fn sqrt_nat(n: u64) -> Result<Self> {
        if n == 0 {
            return Ok(RealScalar::zero());
        }
        let (f, m) = squarefree_split(n);
        if m == 1 {
            Ok(RealScalar::from_i64(f as i64))
        } else {
            Ok(QuadReal::new(
                rat_zero(),
                BigRational::from_integer(BigInt::from(f)),
                m,
            ))
        }
    }

    fn add(&self, o: &Self) -> Self {
        let d = self.join_radicand(o);
        QuadReal::new(&self.a + &o.a, &self.b + &o.b, d)
    }

    fn sub(&self, o: &Self) -> Self {
        let d = self.join_radicand(o);
        QuadReal::new(&self.a - &o.a, &self.b - &o.b, d)
    }

    fn mul(&self, o: &Self) -> Self {
        let d = self.join_radicand(o);
        let dd = BigRational::from_integer(BigInt::from(d));
        QuadReal::new(
            &self.a * &o.a + (&self.b * &o.b) * &dd,
            &self.a * &o.b + &self.b * &o.a,
            d,
        )
    }

    fn div(&self, o: &Self) -> Self {
        let d = self.join_radicand(o);
        let dd = BigRational::from_integer(BigInt::from(d));
        // multiply by the conjugate of o
        let norm = &o.a * &o.a - (&o.b * &o.b) * &dd;
        assert!(!rat_is_zero(&norm), "division by zero in quadratic kernel");
        let num = self.mul(&QuadReal::new(o.a.clone(), -o.b.clone(), d));
        QuadReal::new(&num.a / &norm, &num.b / &norm, d)
    }

    fn neg(&self) -> Self {
        QuadReal::new(-self.a.clone(), -self.b.clone(), self.d)
    }

    fn abs(&self) -> Self {
        if self.sign() < 0 {
            self.neg()
        } else {
            self.clone()
        }
    }

    fn scale_pow2(&self, k: i32) -> Self {
        QuadReal::new(self.a.scale_pow2(k), self.b.scale_pow2(k), self.d)
    }

    fn is_zero(&self) -> bool {
        rat_is_zero(&self.a) && rat_is_zero(&self.b)
    }

    fn cmp_total(&self, o: &Self) -> Ordering {
        let diff = self.sub(o);
        match diff.sign() {
            x if x < 0 => Ordering::Less,
            0 => Ordering::Equal,
            _ => Ordering::Greater,
        }
    }

    fn to_f64(&self) -> f64 {
        let b = RealScalar::to_f64(&self.b);
        RealScalar::to_f64(&self.a) + b * (self.d as f64).sqrt()
    }

    fn to_bf(&self, prec: usize) -> Bf {
        let a = Bf::from_big_rational(&self.a, prec);
        if rat_is_zero(&self.b) {
            return a;
        }
        let b = Bf::from_big_rational(&self.b, prec);
        let s = Bf::sqrt_u64(self.d, prec);
        a.add(&b.mul(&s))
    }
}
