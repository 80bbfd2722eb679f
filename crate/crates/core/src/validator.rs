//! Independent numerical validation: substitute the truncated series into
//! the defining equations on a torus grid and measure how the residual
//! scales with the perturbation parameter; empirical growth diagnostics for
//! the series coefficients.

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::ModelView;
use crate::poly::CoeffPoly;
use crate::scalar::{bigfloat, Bf, CScalar, RealScalar};
use crate::series::SeriesTable;
use crate::{Mode, Sign, Variant};

type C = CScalar<Bf>;

fn poly_to_bf<K: RealScalar>(p: &CoeffPoly<K>, prec: usize) -> CoeffPoly<Bf> {
    let mut out = CoeffPoly::zero(p.dim());
    for (m, c) in p.terms() {
        out.add_term(
            m.clone(),
            CScalar::new(c.re.to_bf(prec), c.im.to_bf(prec)),
        );
    }
    out
}

#[derive(Serialize, Debug, Clone)]
pub struct ResidualRow {
    pub epsilon: f64,
    pub residual: f64,
    pub per_component: Vec<f64>,
}

#[derive(Serialize, Debug, Clone)]
pub struct ResidualReport {
    pub model: String,
    pub order: usize,
    pub c_values: Vec<String>,
    pub rows: Vec<ResidualRow>,
    /// log-log slope of residual against epsilon; present with >= 4 points
    pub slope: Option<f64>,
}

struct PhaseTable {
    /// per dimension: powers e^(i nu theta) for nu in [-max_nu, max_nu]
    powers: Vec<Vec<C>>,
    max_nu: i64,
}

impl PhaseTable {
    fn new(theta: &[Bf], max_nu: i64, prec: usize) -> Self {
        let mut powers = Vec::new();
        for th in theta {
            let base = CScalar::new(th.cos(), th.sin());
            let mut row = vec![C::one(); (2 * max_nu + 1) as usize];
            for k in 1..=max_nu {
                let prev = row[(max_nu + k - 1) as usize].clone();
                row[(max_nu + k) as usize] = prev.mul(&base);
            }
            let inv = base.conj();
            for k in 1..=max_nu {
                let prev = row[(max_nu - k + 1) as usize].clone();
                row[(max_nu - k) as usize] = prev.mul(&inv);
            }
            powers.push(row);
        }
        let _ = prec;
        PhaseTable { powers, max_nu }
    }

    fn phase(&self, nu: &Mode) -> C {
        let mut acc = C::one();
        for (i, &n) in nu.0.iter().enumerate() {
            acc = acc.mul(&self.powers[i][(self.max_nu + n) as usize]);
        }
        acc
    }
}

/// Evaluate the truncated series on a torus grid and report the sup-norm of
/// the defining-equation residual for each epsilon. Trigonometric
/// polynomials of bounded degree are exactly resolved by the grid.
pub fn residual_sweep<K: RealScalar>(
    view: &ModelView<K>,
    table: &SeriesTable<K>,
    c: &[C],
    eps: &[Bf],
    grid_per_dim: usize,
) -> Result<ResidualReport> {
    let prec = bigfloat::default_precision();
    let spec = view.spec();
    let d = spec.d;
    if c.len() != d {
        return Err(Error::DimensionMismatch(d, c.len()));
    }
    let order = table.max_order;
    let omega: Vec<Bf> = spec.omega.iter().map(|w| w.to_bf(prec)).collect();

    // collapse the table to numeric mode amplitudes per order
    // key: (j, sign, nu) -> per-order complex values
    let mut amps: std::collections::BTreeMap<(usize, Sign, Mode), Vec<C>> =
        std::collections::BTreeMap::new();
    for ((k, j, nu, sign), poly) in &table.x {
        let val = poly_to_bf(poly, prec).eval(c)?;
        amps.entry((*j, *sign, nu.clone()))
            .or_insert_with(|| vec![C::zero(); order + 1])[*k] = val;
    }
    let mut etas: std::collections::BTreeMap<(usize, Sign), Vec<C>> =
        std::collections::BTreeMap::new();
    for ((k, j, sign), poly) in &table.eta {
        let val = poly_to_bf(poly, prec).eval(c)?;
        etas.entry((*j, *sign))
            .or_insert_with(|| vec![C::zero(); order + 1])[*k] = val;
    }

    let max_nu = 3 * order.max(1) as i64 + 1;
    let two_pi = Bf::pi(prec).scale_pow2(1);
    let mut grid = Vec::new();
    let mut idx = vec![0usize; d];
    loop {
        let theta: Vec<Bf> = idx
            .iter()
            .map(|&m| {
                two_pi
                    .mul(&Bf::from_i64_prec(m as i64, prec))
                    .div(&Bf::from_i64_prec(grid_per_dim as i64, prec))
            })
            .collect();
        grid.push(PhaseTable::new(&theta, max_nu, prec));
        // advance the multi-index
        let mut i = 0;
        loop {
            if i == d {
                break;
            }
            idx[i] += 1;
            if idx[i] < grid_per_dim {
                break;
            }
            idx[i] = 0;
            i += 1;
        }
        if idx.iter().all(|&x| x == 0) {
            break;
        }
    }

    let mut rows = Vec::new();
    for e in eps {
        // per-epsilon amplitudes
        let pow_e: Vec<Bf> = {
            let mut v = vec![Bf::from_i64_prec(1, prec)];
            for _ in 1..=order {
                v.push(v.last().unwrap().mul(e));
            }
            v
        };
        let col: std::collections::BTreeMap<(usize, Sign, Mode), C> = amps
            .iter()
            .map(|(key, per_k)| {
                let mut acc = C::zero();
                for (k, val) in per_k.iter().enumerate() {
                    acc = acc.add(&val.mul_real(&pow_e[k]));
                }
                (key.clone(), acc)
            })
            .collect();
        let eta_col: std::collections::BTreeMap<(usize, Sign), C> = etas
            .iter()
            .map(|(key, per_k)| {
                let mut acc = C::zero();
                for (k, val) in per_k.iter().enumerate() {
                    acc = acc.add(&val.mul_real(&pow_e[k]));
                }
                (key.clone(), acc)
            })
            .collect();

        let per_component = grid
            .par_iter()
            .map(|pt| {
                let mut per_component = vec![0f64; d];
            // field values at this grid point
            let mut x = vec![C::zero(); d];
            let mut w = vec![C::zero(); d]; // zw: the minus tower
            let mut lin = vec![C::zero(); d]; // second-derivative part
            let mut lin_w = vec![C::zero(); d];
            for ((j, sign, nu), amp) in &col {
                let ph = pt.phase(nu);
                let term = amp.mul(&ph);
                let wn = {
                    let mut acc = Bf::from_i64_prec(0, prec);
                    for (i, &n) in nu.0.iter().enumerate() {
                        if n != 0 {
                            acc = acc.add(&omega[i].mul(&Bf::from_i64_prec(n, prec)));
                        }
                    }
                    acc
                };
                match table.variant {
                    Variant::RealX => {
                        x[j - 1] = x[j - 1].add(&term);
                        // omega_j^2 - (omega.nu)^2 times the mode
                        let f =
                            omega[j - 1].mul(&omega[j - 1]).sub(&wn.mul(&wn));
                        lin[j - 1] = lin[j - 1].add(&term.mul_real(&f));
                    }
                    Variant::ComplexZw => match sign {
                        Sign::Plus => {
                            x[j - 1] = x[j - 1].add(&term);
                            let f = wn.sub(&omega[j - 1]);
                            lin[j - 1] = lin[j - 1].add(&term.mul_real(&f));
                        }
                        Sign::Minus => {
                            w[j - 1] = w[j - 1].add(&term);
                            let f = wn.neg().sub(&omega[j - 1]);
                            lin_w[j - 1] = lin_w[j - 1].add(&term.mul_real(&f));
                        }
                    },
                }
            }
            match view {
                ModelView::Real(m) => {
                    for j in 1..=d {
                        // residual = xdd + w^2 x + f + eta x
                        let mut res = lin[j - 1].clone();
                        for ((jj, s), coeff) in &m.fcoeffs {
                            if *jj != j {
                                continue;
                            }
                            let p = crate::model::sidx_norm(s) - 1;
                            let mut t = CScalar::new(coeff.re.to_bf(prec), coeff.im.to_bf(prec))
                                .mul_real(&pow_e[0].mul(&epow(e, p, prec)));
                            for (i, &si) in s.iter().enumerate() {
                                for _ in 0..si {
                                    t = t.mul(&x[i]);
                                }
                            }
                            res = res.add(&t);
                        }
                        if let Some(eta) = eta_col.get(&(j, Sign::Plus)) {
                            res = res.add(&eta.mul(&x[j - 1]));
                        }
                        let a = res.abs_to_f64();
                        if a > per_component[j - 1] {
                            per_component[j - 1] = a;
                        }
                    }
                }
                ModelView::Zw { force, .. } => {
                    for j in 1..=d {
                        for sign in Sign::both() {
                            // (sigma w.nu - w_j) z - eta z - f^sigma = 0
                            let mut res = match sign {
                                Sign::Plus => lin[j - 1].clone(),
                                Sign::Minus => lin_w[j - 1].clone(),
                            };
                            let field = match sign {
                                Sign::Plus => &x[j - 1],
                                Sign::Minus => &w[j - 1],
                            };
                            if let Some(eta) = eta_col.get(&(j, sign)) {
                                res = res.sub(&eta.mul(field));
                            }
                            for ((fs, jj, spp, smm), coeff) in &force.entries {
                                if *fs != sign || *jj != j {
                                    continue;
                                }
                                let p = crate::model::sidx_norm(spp)
                                    + crate::model::sidx_norm(smm)
                                    - 1;
                                let mut t =
                                    CScalar::new(coeff.re.to_bf(prec), coeff.im.to_bf(prec))
                                        .mul_real(&epow(e, p, prec));
                                for (i, &si) in spp.iter().enumerate() {
                                    for _ in 0..si {
                                        t = t.mul(&x[i]);
                                    }
                                }
                                for (i, &si) in smm.iter().enumerate() {
                                    for _ in 0..si {
                                        t = t.mul(&w[i]);
                                    }
                                }
                                res = res.sub(&t);
                            }
                            let a = res.abs_to_f64();
                            if a > per_component[j - 1] {
                                per_component[j - 1] = a;
                            }
                        }
                    }
                }
            }
                per_component
            })
            .reduce(
                || vec![0f64; d],
                |a, b| a.iter().zip(b.iter()).map(|(x, y)| x.max(*y)).collect(),
            );
        let residual = per_component.iter().cloned().fold(0f64, f64::max);
        rows.push(ResidualRow {
            epsilon: RealScalar::to_f64(e),
            residual,
            per_component,
        });
    }

    let slope = if rows.len() >= 4 {
        Some(fit_loglog(&rows))
    } else {
        None
    };
    Ok(ResidualReport {
        model: String::new(),
        order,
        c_values: c.iter().map(|v| format!("{v}")).collect(),
        rows,
        slope,
    })
}

fn epow(e: &Bf, p: usize, prec: usize) -> Bf {
    let mut acc = Bf::from_i64_prec(1, prec);
    for _ in 0..p {
        acc = acc.mul(e);
    }
    acc
}

fn fit_loglog(rows: &[ResidualRow]) -> f64 {
    let pts: Vec<(f64, f64)> = rows
        .iter()
        .filter(|r| r.residual > 0.0 && r.epsilon > 0.0)
        .map(|r| (r.epsilon.ln(), r.residual.ln()))
        .collect();
    let n = pts.len() as f64;
    let sx: f64 = pts.iter().map(|p| p.0).sum();
    let sy: f64 = pts.iter().map(|p| p.1).sum();
    let sxx: f64 = pts.iter().map(|p| p.0 * p.0).sum();
    let sxy: f64 = pts.iter().map(|p| p.0 * p.1).sum();
    (n * sxy - sx * sy) / (n * sxx - sx * sx)
}

#[derive(Serialize, Debug, Clone)]
pub struct GrowthRow {
    pub order: usize,
    pub max_abs: f64,
    pub root: f64,
    pub gamma_scaled: f64,
}

#[derive(Serialize, Debug, Clone)]
pub struct GrowthReport {
    pub rows: Vec<GrowthRow>,
}

/// Per-order maxima of the evaluated coefficients: the k-th roots estimate
/// the inverse radius, and the ratio against the amplitude-cube growth is
/// reported alongside.
pub fn growth_diagnostics<K: RealScalar>(
    table: &SeriesTable<K>,
    c: &[C],
) -> Result<GrowthReport> {
    let prec = bigfloat::default_precision();
    let gamma = c
        .iter()
        .map(|v| v.abs_to_f64())
        .fold(1f64, f64::max);
    let mut rows = Vec::new();
    for k in 1..=table.max_order {
        let mut max_abs = 0f64;
        for ((kk, _j, _nu, _s), poly) in &table.x {
            if *kk != k {
                continue;
            }
            let v = poly_to_bf(poly, prec).eval(c)?.abs_to_f64();
            if v > max_abs {
                max_abs = v;
            }
        }
        rows.push(GrowthRow {
            order: k,
            max_abs,
            root: max_abs.powf(1.0 / k as f64),
            gamma_scaled: max_abs / gamma.powi(3 * k as i32),
        });
    }
    Ok(GrowthReport { rows })
}

/// Gauss-Legendre nodes and weights on [0, 1] at the given precision.
pub fn gauss_legendre(n: usize, prec: usize) -> Vec<(Bf, Bf)> {
    // Newton iteration on P_n over [-1, 1], seeded by the Chebyshev guess
    let one = Bf::from_i64_prec(1, prec);
    let half = one.scale_pow2(-1);
    let pi = Bf::pi(prec);
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let guess = pi
            .mul(&Bf::from_f64_prec(i as f64 + 0.75, prec))
            .div(&Bf::from_f64_prec(n as f64 + 0.5, prec));
        let mut x = guess.cos().neg();
        for _ in 0..100 {
            let (p, dp) = legendre(n, &x, prec);
            let step = p.div(&dp);
            x = x.sub(&step);
            if step.abs().is_denominator_zero() {
                break;
            }
        }
        let (_, dp) = legendre(n, &x, prec);
        // weight on [-1,1]: 2 / ((1 - x^2) dp^2); halved for [0,1]
        let w = Bf::from_i64_prec(2, prec)
            .div(&one.sub(&x.mul(&x)).mul(&dp.mul(&dp)));
        let node01 = x.add(&one).scale_pow2(-1);
        out.push((node01, w.mul(&half)));
    }
    out
}

fn legendre(n: usize, x: &Bf, prec: usize) -> (Bf, Bf) {
    let one = Bf::from_i64_prec(1, prec);
    let mut p0 = one.clone();
    let mut p1 = x.clone();
    if n == 0 {
        return (p0, Bf::from_i64_prec(0, prec));
    }
    for k in 2..=n {
        let a = Bf::from_i64_prec((2 * k - 1) as i64, prec);
        let b = Bf::from_i64_prec((k - 1) as i64, prec);
        let kq = Bf::from_i64_prec(k as i64, prec);
        let p2 = a.mul(x).mul(&p1).sub(&b.mul(&p0)).div(&kq);
        p0 = p1;
        p1 = p2;
    }
    // derivative from the recurrence
    let num = Bf::from_i64_prec(n as i64, prec).mul(&x.mul(&p1).sub(&p0));
    let den = x.mul(x).sub(&one);
    (p1.clone(), num.div(&den))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{load_model_str, LoadedModel};
    use crate::series::{solve_up_to, SolveModel};

    fn sysa() -> crate::model::RealSystem<Bf> {
        bigfloat::set_default_precision(256);
        let txt = r#"{
            "name": "sysA", "kind": "real", "d": 1, "omega": ["1"], "tau": "1",
            "terms": [{"j": 1, "s": [2], "coeff": "1"}]
        }"#;
        match load_model_str::<Bf>(txt).unwrap() {
            LoadedModel::Real(m) => m,
            _ => unreachable!(),
        }
    }

    #[test]
    fn residual_scales_with_the_first_omitted_order() {
        let m = sysa();
        let table = solve_up_to(&SolveModel::Real(&m), 2).unwrap();
        let view = ModelView::Real(&m);
        let prec = 256;
        let c = vec![CScalar::from_real(Bf::from_f64_prec(0.3, prec))];
        let eps: Vec<Bf> = [-2.0f64, -2.5, -3.0, -3.5]
            .iter()
            .map(|l| {
                let ln10 = Bf::from_i64_prec(10, prec).ln();
                let x = Bf::from_f64_prec(*l, prec).mul(&ln10);
                RealScalar::exp(&x).unwrap()
            })
            .collect();
        let rep = residual_sweep(&view, &table, &c, &eps, 32).unwrap();
        let slope = rep.slope.unwrap();
        assert!(
            (slope - 3.0).abs() < 0.2,
            "slope {slope}, rows {:?}",
            rep.rows
        );
    }

    #[test]
    fn residual_vanishes_at_zero_epsilon() {
        let m = sysa();
        let table = solve_up_to(&SolveModel::Real(&m), 2).unwrap();
        let view = ModelView::Real(&m);
        let c = vec![CScalar::from_real(Bf::from_f64_prec(0.4, 256))];
        let rep = residual_sweep(&view, &table, &c, &[Bf::from_i64_prec(0, 256)], 16).unwrap();
        assert!(rep.rows[0].residual < 1e-70, "{}", rep.rows[0].residual);
    }

    #[test]
    fn truncation_gain_per_order() {
        let m = sysa();
        let view = ModelView::Real(&m);
        let t1 = solve_up_to(&SolveModel::Real(&m), 1).unwrap();
        let t2 = solve_up_to(&SolveModel::Real(&m), 2).unwrap();
        let c = vec![CScalar::from_real(Bf::from_f64_prec(0.3, 256))];
        let e = Bf::from_f64_prec(1e-3, 256);
        let r1 = residual_sweep(&view, &t1, &c, &[e.clone()], 16).unwrap().rows[0].residual;
        let r2 = residual_sweep(&view, &t2, &c, &[e], 16).unwrap().rows[0].residual;
        let ratio = r2 / r1;
        assert!(ratio < 5e-3 && ratio > 5e-5, "ratio {ratio}");
    }

    #[test]
    fn growth_stays_bounded() {
        let m = sysa();
        let table = solve_up_to(&SolveModel::Real(&m), 6).unwrap();
        let c = vec![CScalar::from_real(Bf::from_f64_prec(0.5, 256))];
        let rep = growth_diagnostics(&table, &c).unwrap();
        assert_eq!(rep.rows.len(), 6);
        let roots: Vec<f64> = rep.rows.iter().map(|r| r.root).collect();
        for r in &roots {
            assert!(r.is_finite() && *r < 10.0, "{roots:?}");
        }
        // doubling the amplitude scales order k by at most ~(2^3)^k
        let c2 = vec![CScalar::from_real(Bf::from_f64_prec(1.0, 256))];
        let rep2 = growth_diagnostics(&table, &c2).unwrap();
        for (a, b) in rep.rows.iter().zip(rep2.rows.iter()) {
            if a.max_abs > 0.0 {
                let factor = b.max_abs / a.max_abs;
                assert!(factor <= 8f64.powi(a.order as i32) * 2.0, "order {}", a.order);
            }
        }
    }

    #[test]
    fn quadrature_integrates_polynomials_exactly() {
        let prec = 256;
        let nodes = gauss_legendre(24, prec);
        // integral of t^7 over [0,1] is 1/8
        let mut acc = Bf::from_i64_prec(0, prec);
        for (x, w) in &nodes {
            acc = acc.add(&x.powi(7).mul(w));
        }
        let expect = Bf::from_i64_prec(1, prec).scale_pow2(-3);
        let err = acc.sub(&expect).abs();
        assert!(err.lt(&Bf::from_i64_prec(1, prec).scale_pow2(-200)), "{err}");
    }
}
