//! Exact literal parser shared by every kernel.
//!
//! Grammar: integers, decimals (kept exact as rationals), `i`, `sqrtN`,
//! `+ - * /` and parentheses. Juxtaposition like `2i`, `3sqrt5` or `2(…)`
//! multiplies. Decimals never lose precision at the boundary: `0.125`
//! becomes `1/8` before the kernel sees it.

use num_bigint::BigInt;
use num_rational::BigRational;

use super::{parse_err, CScalar, RealScalar};
use crate::error::Result;

#[derive(Clone, Debug, PartialEq)]
enum Tok {
    Num(BigRational),
    Sqrt(u64),
    ImagUnit,
    Plus,
    Minus,
    Star,
    Slash,
    LParen,
    RParen,
}

fn tokenize(s: &str) -> Result<Vec<Tok>> {
    let bytes = s.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i] as char;
        match c {
            ' ' | '\t' => i += 1,
            '+' => {
                out.push(Tok::Plus);
                i += 1;
            }
            '-' => {
                out.push(Tok::Minus);
                i += 1;
            }
            '*' => {
                out.push(Tok::Star);
                i += 1;
            }
            '/' => {
                out.push(Tok::Slash);
                i += 1;
            }
            '(' => {
                out.push(Tok::LParen);
                i += 1;
            }
            ')' => {
                out.push(Tok::RParen);
                i += 1;
            }
            'i' => {
                out.push(Tok::ImagUnit);
                i += 1;
            }
            's' => {
                if s[i..].starts_with("sqrt") {
                    i += 4;
                    let start = i;
                    while i < bytes.len() && bytes[i].is_ascii_digit() {
                        i += 1;
                    }
                    if start == i {
                        return Err(parse_err(format!("sqrt needs a natural number in `{s}`")));
                    }
                    let n: u64 = s[start..i]
                        .parse()
                        .map_err(|_| parse_err(format!("radicand overflow in `{s}`")))?;
                    out.push(Tok::Sqrt(n));
                } else {
                    return Err(parse_err(format!("unexpected `s` in `{s}`")));
                }
            }
            d if d.is_ascii_digit() => {
                let start = i;
                while i < bytes.len() && bytes[i].is_ascii_digit() {
                    i += 1;
                }
                let int_part = &s[start..i];
                let mut frac_part = "";
                if i < bytes.len() && bytes[i] == b'.' {
                    i += 1;
                    let fs = i;
                    while i < bytes.len() && bytes[i].is_ascii_digit() {
                        i += 1;
                    }
                    frac_part = &s[fs..i];
                }
                let mut num: BigInt = int_part
                    .parse()
                    .map_err(|_| parse_err(format!("bad integer in `{s}`")))?;
                let mut den = BigInt::from(1);
                for ch in frac_part.chars() {
                    num = num * 10 + (ch as u8 - b'0');
                    den *= 10;
                }
                out.push(Tok::Num(BigRational::new(num, den)));
            }
            other => return Err(parse_err(format!("unexpected character `{other}` in `{s}`"))),
        }
    }
    Ok(out)
}

struct Parser<'a, K: RealScalar> {
    toks: &'a [Tok],
    pos: usize,
    _k: std::marker::PhantomData<K>,
}

impl<'a, K: RealScalar> Parser<'a, K> {
    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos)
    }

    fn next(&mut self) -> Option<Tok> {
        let t = self.toks.get(self.pos).cloned();
        if t.is_some() {
            self.pos += 1;
        }
        t
    }

    fn expr(&mut self) -> Result<CScalar<K>> {
        let mut acc = self.term()?;
        while let Some(t) = self.peek() {
            match t {
                Tok::Plus => {
                    self.pos += 1;
                    acc = acc.add(&self.term()?);
                }
                Tok::Minus => {
                    self.pos += 1;
                    acc = acc.sub(&self.term()?);
                }
                _ => break,
            }
        }
        Ok(acc)
    }

    fn term(&mut self) -> Result<CScalar<K>> {
        let mut acc = self.unary()?;
        loop {
            match self.peek() {
                Some(Tok::Star) => {
                    self.pos += 1;
                    acc = acc.mul(&self.unary()?);
                }
                Some(Tok::Slash) => {
                    self.pos += 1;
                    let rhs = self.unary()?;
                    if rhs.is_zero() {
                        return Err(parse_err("division by zero in literal"));
                    }
                    acc = acc.div(&rhs);
                }
                // juxtaposition: `2i`, `3sqrt5`, `2(1+i)`
                Some(Tok::ImagUnit) | Some(Tok::Sqrt(_)) | Some(Tok::LParen) => {
                    acc = acc.mul(&self.unary()?);
                }
                _ => break,
            }
        }
        Ok(acc)
    }

    fn unary(&mut self) -> Result<CScalar<K>> {
        if matches!(self.peek(), Some(Tok::Minus)) {
            self.pos += 1;
            return Ok(self.unary()?.neg());
        }
        if matches!(self.peek(), Some(Tok::Plus)) {
            self.pos += 1;
            return self.unary();
        }
        self.primary()
    }

    fn primary(&mut self) -> Result<CScalar<K>> {
        match self.next() {
            Some(Tok::Num(r)) => Ok(CScalar::from_real(K::from_rat(&r))),
            Some(Tok::ImagUnit) => Ok(CScalar::i()),
            Some(Tok::Sqrt(n)) => Ok(CScalar::from_real(K::sqrt_nat(n)?)),
            Some(Tok::LParen) => {
                let e = self.expr()?;
                match self.next() {
                    Some(Tok::RParen) => Ok(e),
                    _ => Err(parse_err("missing `)`")),
                }
            }
            other => Err(parse_err(format!("unexpected token {other:?}"))),
        }
    }
}

pub fn parse_scalar<K: RealScalar>(s: &str) -> Result<CScalar<K>> {
    let toks = tokenize(s)?;
    if toks.is_empty() {
        return Err(parse_err("empty literal"));
    }
    let mut p = Parser::<K> {
        toks: &toks,
        pos: 0,
        _k: std::marker::PhantomData,
    };
    let v = p.expr()?;
    if p.pos != toks.len() {
        return Err(parse_err(format!("trailing tokens in `{s}`")));
    }
    Ok(v)
}

/// Parse a literal that must be real-valued.
pub fn parse_real<K: RealScalar>(s: &str) -> Result<K> {
    let v = parse_scalar::<K>(s)?;
    if !v.im.is_zero() {
        return Err(parse_err(format!("`{s}` is not real")));
    }
    Ok(v.re)
}

/// Parse a literal that must be a positive rational (tau, tolerances).
pub fn parse_positive_rational(s: &str) -> Result<BigRational> {
    let v = parse_scalar::<BigRational>(s)?;
    if !RealScalar::is_zero(&v.im) || v.re <= super::rat_zero() {
        return Err(parse_err(format!("`{s}` is not a positive rational")));
    }
    Ok(v.re)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scalar::QuadReal;
    use num_bigint::BigInt;

    fn q(n: i64, d: i64) -> BigRational {
        BigRational::new(BigInt::from(n), BigInt::from(d))
    }

    #[test]
    fn rational_literals() {
        let v = parse_scalar::<BigRational>("3/4").unwrap();
        assert_eq!(v.re, q(3, 4));
        let v = parse_scalar::<BigRational>("-0.125").unwrap();
        assert_eq!(v.re, q(-1, 8));
    }

    #[test]
    fn complex_literals() {
        let v = parse_scalar::<BigRational>("1+2i").unwrap();
        assert_eq!(v.re, q(1, 1));
        assert_eq!(v.im, q(2, 1));
        let v = parse_scalar::<BigRational>("1/2 - 3/4 i").unwrap();
        assert_eq!(v.im, q(-3, 4));
    }

    #[test]
    fn golden_mean_literal() {
        let v = parse_scalar::<QuadReal>("(1+sqrt5)/2").unwrap();
        let phi = v.re;
        assert_eq!(phi.mul(&phi), phi.add(&QuadReal::one()));
    }

    #[test]
    fn sqrt_rejected_in_rational_kernel() {
        assert!(parse_scalar::<BigRational>("sqrt5").is_err());
        assert!(parse_scalar::<BigRational>("sqrt9").is_ok());
    }

    #[test]
    fn trailing_garbage_rejected() {
        assert!(parse_scalar::<BigRational>("1 2").is_err());
    }
}
