//! Arbitrary-precision binary float kernel backed by `astro-float`.
//!
//! Every value carries its working precision in bits; mixed-precision
//! operations round to the smaller precision. Zero-coefficient pruning uses
//! a configurable threshold of 2^(-precision/PRUNE_DIV); denominator-zero
//! detection thresholds at 2^(-precision+8).

use std::cell::RefCell;
use std::cmp::Ordering;
use std::fmt;
use std::sync::atomic::{AtomicUsize, Ordering as AtomicOrdering};

use astro_float::{BigFloat, Consts, Radix, RoundingMode, Sign as AfSign, WORD_BIT_SIZE};
use num_bigint::{BigInt, Sign as NumSign};
use num_rational::BigRational;

use super::{squarefree_split, RealScalar};
use crate::error::Result;

const RM: RoundingMode = RoundingMode::ToEven;

static DEFAULT_PRECISION: AtomicUsize = AtomicUsize::new(256);
/// Pruning threshold is 2^(-precision/PRUNE_DIV); the divisor is the
/// configuration-visible knob.
static PRUNE_DIV: AtomicUsize = AtomicUsize::new(2);

pub fn set_default_precision(bits: usize) {
    DEFAULT_PRECISION.store(bits.max(64), AtomicOrdering::SeqCst);
}

pub fn default_precision() -> usize {
    DEFAULT_PRECISION.load(AtomicOrdering::SeqCst)
}

pub fn set_prune_divisor(div: usize) {
    PRUNE_DIV.store(div.max(1), AtomicOrdering::SeqCst);
}

pub fn prune_divisor() -> usize {
    PRUNE_DIV.load(AtomicOrdering::SeqCst)
}

thread_local! {
    static CONSTS: RefCell<Consts> = RefCell::new(Consts::new().expect("constants cache"));
}

fn with_consts<T>(f: impl FnOnce(&mut Consts) -> T) -> T {
    CONSTS.with(|c| f(&mut c.borrow_mut()))
}

#[derive(Clone, Debug)]
pub struct Bf {
    v: BigFloat,
    prec: usize,
}

impl Bf {
    pub fn raw(&self) -> &BigFloat {
        &self.v
    }

    pub fn precision(&self) -> usize {
        self.prec
    }

    pub fn with_prec(v: BigFloat, prec: usize) -> Self {
        Bf { v, prec }
    }

    pub fn from_i64_prec(n: i64, prec: usize) -> Self {
        Bf {
            v: BigFloat::from_i64(n, prec),
            prec,
        }
    }

    pub fn from_f64_prec(x: f64, prec: usize) -> Self {
        Bf {
            v: BigFloat::from_f64(x, prec),
            prec,
        }
    }

    pub fn from_bigint(n: &BigInt, prec: usize) -> Self {
        let (sign, digits) = n.to_u64_digits();
        if digits.is_empty() {
            return Bf::from_i64_prec(0, prec);
        }
        let s = match sign {
            NumSign::Minus => AfSign::Neg,
            _ => AfSign::Pos,
        };
        let exp = (digits.len() * WORD_BIT_SIZE) as i32;
        let v = BigFloat::from_words(&digits, s, exp);
        Bf { v, prec }
    }

    pub fn from_big_rational(r: &BigRational, prec: usize) -> Self {
        let num = Bf::from_bigint(r.numer(), prec + 32);
        let den = Bf::from_bigint(r.denom(), prec + 32);
        Bf {
            v: num.v.div(&den.v, prec, RM),
            prec,
        }
    }

    pub fn sqrt_u64(n: u64, prec: usize) -> Self {
        let v = BigFloat::from_u64(n, prec + 32).sqrt(prec, RM);
        Bf { v, prec }
    }

    pub fn pi(prec: usize) -> Self {
        Bf {
            v: with_consts(|cc| cc.pi(prec, RM)),
            prec,
        }
    }

    pub fn sin(&self) -> Self {
        Bf {
            v: with_consts(|cc| self.v.sin(self.prec, RM, cc)),
            prec: self.prec,
        }
    }

    pub fn cos(&self) -> Self {
        Bf {
            v: with_consts(|cc| self.v.cos(self.prec, RM, cc)),
            prec: self.prec,
        }
    }

    pub fn ln(&self) -> Self {
        Bf {
            v: with_consts(|cc| self.v.ln(self.prec, RM, cc)),
            prec: self.prec,
        }
    }

    pub fn sqrt(&self) -> Self {
        Bf {
            v: self.v.sqrt(self.prec, RM),
            prec: self.prec,
        }
    }

    pub fn powi(&self, n: usize) -> Self {
        Bf {
            v: self.v.powi(n, self.prec, RM),
            prec: self.prec,
        }
    }

    /// Exponent such that |self| is within [2^(e-1), 2^e); None for zero.
    fn bin_exponent(&self) -> Option<i32> {
        if self.v.is_zero() {
            None
        } else {
            self.v.exponent()
        }
    }
}

impl PartialEq for Bf {
    fn eq(&self, o: &Self) -> bool {
        matches!(self.v.cmp(&o.v), Some(0))
    }
}

impl fmt::Display for Bf {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.v)
    }
}

impl RealScalar for Bf {
    const KERNEL_NAME: &'static str = "big-float";

    fn zero() -> Self {
        Bf::from_i64_prec(0, default_precision())
    }

    fn one() -> Self {
        Bf::from_i64_prec(1, default_precision())
    }

    fn from_i64(n: i64) -> Self {
        Bf::from_i64_prec(n, default_precision())
    }

    fn from_rat(r: &BigRational) -> Self {
        Bf::from_big_rational(r, default_precision())
    }

    fn sqrt_nat(n: u64) -> Result<Self> {
        let (f, m) = squarefree_split(n);
        if m == 1 {
            Ok(RealScalar::from_i64(f as i64))
        } else {
            Ok(Bf::sqrt_u64(n, default_precision()))
        }
    }

    fn add(&self, o: &Self) -> Self {
        let p = self.prec.min(o.prec);
        Bf {
            v: self.v.add(&o.v, p, RM),
            prec: p,
        }
    }

    fn sub(&self, o: &Self) -> Self {
        let p = self.prec.min(o.prec);
        Bf {
            v: self.v.sub(&o.v, p, RM),
            prec: p,
        }
    }

    fn mul(&self, o: &Self) -> Self {
        let p = self.prec.min(o.prec);
        Bf {
            v: self.v.mul(&o.v, p, RM),
            prec: p,
        }
    }

    fn div(&self, o: &Self) -> Self {
        let p = self.prec.min(o.prec);
        assert!(!o.v.is_zero(), "division by zero in big-float kernel");
        Bf {
            v: self.v.div(&o.v, p, RM),
            prec: p,
        }
    }

    fn neg(&self) -> Self {
        Bf {
            v: self.v.neg(),
            prec: self.prec,
        }
    }

    fn abs(&self) -> Self {
        Bf {
            v: self.v.abs(),
            prec: self.prec,
        }
    }

    fn scale_pow2(&self, k: i32) -> Self {
        if self.v.is_zero() {
            return self.clone();
        }
        let mut v = self.v.clone();
        let e = v.exponent().expect("finite value");
        v.set_exponent(e + k);
        Bf { v, prec: self.prec }
    }

    fn is_zero(&self) -> bool {
        self.v.is_zero()
    }

    fn is_negligible(&self) -> bool {
        match self.bin_exponent() {
            None => true,
            Some(e) => {
                let cut = (self.prec / prune_divisor()) as i32;
                e <= -cut
            }
        }
    }

    fn is_denominator_zero(&self) -> bool {
        match self.bin_exponent() {
            None => true,
            Some(e) => e <= -(self.prec as i32) + 8,
        }
    }

    fn cmp_total(&self, o: &Self) -> Ordering {
        match self.v.cmp(&o.v) {
            Some(x) if x < 0 => Ordering::Less,
            Some(0) => Ordering::Equal,
            Some(_) => Ordering::Greater,
            None => panic!("NaN in big-float comparison"),
        }
    }

    fn to_f64(&self) -> f64 {
        if self.v.is_zero() {
            return 0.0;
        }
        let parts = self.v.as_raw_parts();
        let Some((words, _len, sign, exp, _inexact)) = parts else {
            return f64::NAN;
        };
        // top two mantissa words give 128 bits; plenty for f64
        let n = words.len();
        let top = words[n - 1] as f64;
        let next = if n >= 2 { words[n - 2] as f64 } else { 0.0 };
        let m = top / 2f64.powi(64) + next / 2f64.powi(128);
        let val = m * 2f64.powi(exp);
        if sign == AfSign::Neg {
            -val
        } else {
            val
        }
    }

    fn to_bf(&self, prec: usize) -> Bf {
        if prec >= self.prec {
            self.clone()
        } else {
            Bf {
                v: self.v.add(&BigFloat::from_i64(0, 64), prec, RM),
                prec,
            }
        }
    }

    fn exp(&self) -> Option<Self> {
        Some(Bf {
            v: with_consts(|cc| self.v.exp(self.prec, RM, cc)),
            prec: self.prec,
        })
    }
}

/// Parse a decimal literal into a big-float at the given precision.
pub fn parse_decimal(s: &str, prec: usize) -> Option<Bf> {
    let v = with_consts(|cc| BigFloat::parse(s, Radix::Dec, prec, RM, cc));
    if v.is_nan() {
        None
    } else {
        Some(Bf { v, prec })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mixed_precision_rounds_down() {
        let a = Bf::from_i64_prec(1, 256);
        let b = Bf::from_i64_prec(3, 128);
        let q = a.div(&b);
        assert_eq!(q.precision(), 128);
    }

    #[test]
    fn rational_conversion_is_faithful() {
        let r = BigRational::new(BigInt::from(10), BigInt::from(3));
        let x = Bf::from_big_rational(&r, 192);
        let back = x.mul(&Bf::from_i64_prec(3, 192));
        let err = back.sub(&Bf::from_i64_prec(10, 192)).abs();
        assert!(err.is_denominator_zero());
    }

    #[test]
    fn negligibility_threshold_tracks_precision() {
        let tiny = Bf::from_i64_prec(1, 256).scale_pow2(-200);
        assert!(tiny.is_negligible());
        let small = Bf::from_i64_prec(1, 256).scale_pow2(-100);
        assert!(!small.is_negligible());
    }

    #[test]
    fn exponent_scaling() {
        let x = Bf::from_i64_prec(3, 128).scale_pow2(-4);
        let y = Bf::from_f64_prec(0.1875, 128);
        assert_eq!(x, y);
    }

    #[test]
    fn f64_round_trip() {
        let x = Bf::from_f64_prec(-0.37251, 192);
        assert!((RealScalar::to_f64(&x) + 0.37251).abs() < 1e-15);
    }
}
