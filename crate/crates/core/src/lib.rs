//! Lindstedt perturbation series for perturbed oscillator systems.
//!
//! Two independent pipelines compute the series coefficients and the
//! counterterms: a direct order-by-order Fourier solver and a labelled-tree
//! expansion. The library also carries the cluster machinery needed to
//! verify the symmetry and cancellation identities that make the series
//! summable: small-divisor scans, scale partitions, self-energy clusters,
//! localisation, and the propagator-pair and matrix cancellations.

use std::fmt;

pub mod cluster;
pub mod error;
pub mod freq;
pub mod model;
pub mod poly;
pub mod scalar;
pub mod selfenergy;
pub mod series;
pub mod trees;
pub mod validator;

pub use error::{Error, Result};

/// Sign label: the `+`/`-` tags carried by end nodes, lines and amplitude
/// symbols.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Debug)]
pub enum Sign {
    Plus,
    Minus,
}

impl Sign {
    pub fn flip(self) -> Sign {
        match self {
            Sign::Plus => Sign::Minus,
            Sign::Minus => Sign::Plus,
        }
    }

    pub fn as_i64(self) -> i64 {
        match self {
            Sign::Plus => 1,
            Sign::Minus => -1,
        }
    }

    pub fn both() -> [Sign; 2] {
        [Sign::Plus, Sign::Minus]
    }
}

impl fmt::Display for Sign {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Sign::Plus => write!(f, "+"),
            Sign::Minus => write!(f, "-"),
        }
    }
}

/// Integer mode vector; `|nu|` is the l1 norm throughout.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Debug)]
pub struct Mode(pub smallvec::SmallVec<[i64; 4]>);

impl Mode {
    pub fn zero(d: usize) -> Self {
        Mode(smallvec::SmallVec::from_elem(0, d))
    }

    pub fn unit(d: usize, j: usize, sign: Sign) -> Self {
        let mut m = Mode::zero(d);
        m.0[j - 1] = sign.as_i64();
        m
    }

    pub fn from_slice(v: &[i64]) -> Self {
        Mode(smallvec::SmallVec::from_slice(v))
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn norm1(&self) -> i64 {
        self.0.iter().map(|x| x.abs()).sum()
    }

    pub fn is_zero(&self) -> bool {
        self.0.iter().all(|&x| x == 0)
    }

    pub fn add(&self, o: &Mode) -> Mode {
        Mode(self.0.iter().zip(o.0.iter()).map(|(a, b)| a + b).collect())
    }

    pub fn sub(&self, o: &Mode) -> Mode {
        Mode(self.0.iter().zip(o.0.iter()).map(|(a, b)| a - b).collect())
    }

    pub fn neg(&self) -> Mode {
        Mode(self.0.iter().map(|a| -a).collect())
    }

    /// `self == sign * e_j`?
    pub fn is_unit(&self, j: usize, sign: Sign) -> bool {
        self.0
            .iter()
            .enumerate()
            .all(|(i, &x)| if i == j - 1 { x == sign.as_i64() } else { x == 0 })
    }

    /// If the mode is `±e_j`, return `(j, sign)`.
    pub fn as_unit(&self) -> Option<(usize, Sign)> {
        let mut found = None;
        for (i, &x) in self.0.iter().enumerate() {
            match x {
                0 => {}
                1 | -1 if found.is_none() => {
                    found = Some((i + 1, if x == 1 { Sign::Plus } else { Sign::Minus }))
                }
                _ => return None,
            }
        }
        found
    }

    pub fn to_repr(&self) -> error::ModeRepr {
        error::ModeRepr(self.0.to_vec())
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(")?;
        for (i, v) in self.0.iter().enumerate() {
            if i > 0 {
                write!(f, ",")?;
            }
            write!(f, "{v}")?;
        }
        write!(f, ")")
    }
}

/// Which pipeline formulation a series or tree lives in: the real
/// second-order system in `x`, or the complex first-order system in `(z, w)`.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum Variant {
    RealX,
    ComplexZw,
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Variant::RealX => write!(f, "real-x"),
            Variant::ComplexZw => write!(f, "complex-zw"),
        }
    }
}

/// Enumerate all modes with l1 norm at most `radius` (including zero).
pub fn mode_ball(d: usize, radius: i64) -> Vec<Mode> {
    let mut out = Vec::new();
    let mut cur = vec![0i64; d];
    fn rec(d: usize, radius: i64, idx: usize, cur: &mut Vec<i64>, out: &mut Vec<Mode>) {
        if idx == d {
            out.push(Mode::from_slice(cur));
            return;
        }
        let used: i64 = cur[..idx].iter().map(|x| x.abs()).sum();
        let room = radius - used;
        for v in -room..=room {
            cur[idx] = v;
            rec(d, radius, idx + 1, cur, out);
        }
        cur[idx] = 0;
    }
    rec(d, radius, 0, &mut cur, &mut out);
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mode_ball_counts() {
        // d=1: 2N+1 points; d=2: 2N^2+2N+1 points
        assert_eq!(mode_ball(1, 3).len(), 7);
        assert_eq!(mode_ball(2, 4).len(), 41);
    }

    #[test]
    fn unit_mode_detection() {
        let m = Mode::unit(2, 2, Sign::Minus);
        assert_eq!(m.as_unit(), Some((2, Sign::Minus)));
        assert!(m.is_unit(2, Sign::Minus));
        assert!(!m.is_unit(1, Sign::Minus));
        assert_eq!(Mode::from_slice(&[1, 1]).as_unit(), None);
        assert_eq!(Mode::from_slice(&[0, 0]).as_unit(), None);
        assert_eq!(Mode::from_slice(&[2, 0]).as_unit(), None);
    }
}
