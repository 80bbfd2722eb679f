//! Exact rational kernel: `BigRational` used directly.

use std::cmp::Ordering;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{Signed, ToPrimitive, Zero};

use super::{bigfloat::Bf, squarefree_split, RealScalar};
use crate::error::{Error, Result};

impl RealScalar for BigRational {
    const KERNEL_NAME: &'static str = "exact-rational";

    fn zero() -> Self {
        <BigRational as Zero>::zero()
    }

    fn one() -> Self {
        num_traits::One::one()
    }

    fn from_i64(n: i64) -> Self {
        BigRational::from_integer(BigInt::from(n))
    }

    fn from_rat(r: &BigRational) -> Self {
        r.clone()
    }

    fn sqrt_nat(n: u64) -> Result<Self> {
        let (f, m) = squarefree_split(n);
        if m == 1 {
            Ok(RealScalar::from_i64(f as i64))
        } else {
            Err(Error::Parse(format!(
                "sqrt{n} is irrational; the exact-rational kernel cannot represent it"
            )))
        }
    }

    fn add(&self, o: &Self) -> Self {
        self + o
    }

    fn sub(&self, o: &Self) -> Self {
        self - o
    }

    fn mul(&self, o: &Self) -> Self {
        self * o
    }

    fn div(&self, o: &Self) -> Self {
        self / o
    }

    fn neg(&self) -> Self {
        -self
    }

    fn abs(&self) -> Self {
        Signed::abs(self)
    }

    fn scale_pow2(&self, k: i32) -> Self {
        let two = BigRational::from_integer(BigInt::from(2));
        if k >= 0 {
            let mut r = self.clone();
            for _ in 0..k {
                r *= &two;
            }
            r
        } else {
            let mut r = self.clone();
            for _ in 0..(-k) {
                r /= &two;
            }
            r
        }
    }

    fn is_zero(&self) -> bool {
        Zero::is_zero(self)
    }

    fn cmp_total(&self, o: &Self) -> Ordering {
        self.cmp(o)
    }

    fn to_f64(&self) -> f64 {
        ToPrimitive::to_f64(self).unwrap_or_else(|| {
            // fall back through a big-float round-trip for huge numerators
            self.to_bf(128).to_f64()
        })
    }

    fn to_bf(&self, prec: usize) -> Bf {
        Bf::from_big_rational(self, prec)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn q(n: i64, d: i64) -> BigRational {
        BigRational::new(BigInt::from(n), BigInt::from(d))
    }

    #[test]
    fn pow2_scaling_is_exact() {
        let x = q(3, 7);
        assert_eq!(x.scale_pow2(5), q(96, 7));
        assert_eq!(x.scale_pow2(-3), q(3, 56));
    }

    #[test]
    fn sqrt_of_square_is_rational() {
        assert_eq!(<BigRational as RealScalar>::sqrt_nat(36).unwrap(), q(6, 1));
        assert!(<BigRational as RealScalar>::sqrt_nat(5).is_err());
    }
}
