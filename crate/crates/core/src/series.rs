//! Exact summation of two-sided valuation-shell series.
//!
//! Integrals over a p-adic group stratify into shells indexed by an integer
//! valuation `m`, and every integrand this crate produces has shell values
//! `S(m)` that eventually satisfy a short linear recurrence over the
//! rational-function field in both directions `m -> +/- infinity` (the
//! strands are powers of character values times `Y` monomials, finitely
//! many of them).  The engine evaluates a window of shells exactly, fits
//! the minimal recurrence of order at most [`SumOptions::max_order`] on
//! each side, verifies it on extra window points, and sums the tails in
//! closed form.  That closed form is the meromorphic continuation of the
//! series; a flag records when it was used at a point where the literal
//! series does not converge.
//!
//! Let `T = sum_{m >= M} S(m)` with the recurrence
//! `S(t) = sum_j a_j S(t-j)` valid for `t >= M`.  Splitting each shifted
//! tail gives `T = sum_j a_j (P_j + T)` with
//! `P_j = sum_{i=M-j}^{M-1} S(i)`, hence
//! `T = (sum_j a_j P_j) / (1 - sum_j a_j)`.  The series is genuinely
//! divergent (no continuation) exactly when 1 is a characteristic root,
//! i.e. `sum_j a_j = 1`.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use num_complex::Complex64;
use num_traits::Float;

use crate::err::{Error, Result};
use crate::field::Prime;
use crate::ratfun::RatFun;

/// Tuning knobs for [`shell_sum`].
#[derive(Clone, Debug)]
pub struct SumOptions {
    /// Initial half-width of the explicitly summed head region.
    pub head: i64,
    /// Largest head half-width tried before giving up.
    pub head_cap: i64,
    /// Maximal recurrence order fitted per side.
    pub max_order: usize,
    /// Extra window equations a fitted recurrence must satisfy.
    pub margin: i64,
    /// Real part of `s` at which literal convergence is checked; `None`
    /// marks every engaged tail as formal.
    pub sigma_star: Option<f64>,
}

impl Default for SumOptions {
    fn default() -> Self {
        SumOptions {
            head: 8,
            head_cap: 64,
            max_order: 4,
            margin: 3,
            sigma_star: None,
        }
    }
}

/// Result of a shell summation.
#[derive(Clone, Debug)]
pub struct SumResult {
    pub value: RatFun,
    /// True when a tail was summed by continuation outside (or without) a
    /// verified region of literal convergence.
    pub formal_tail: bool,
}

struct Fit {
    /// Recurrence coefficients `a_1 .. a_r`.
    coeffs: Vec<RatFun>,
    /// The tail formula is valid from this shell on.
    tail_start: i64,
}

/// Sum `S(m)` over all integers `m`, exactly.
///
/// The callback must be a pure function of `m`.  Shells outside the support
/// of the underlying integral should return the zero function; one-sided
/// sums are the special case where one side is eventually zero (fitted as
/// the order-0 recurrence).
pub fn shell_sum<F>(q: Prime, mut f: F, opts: &SumOptions) -> Result<SumResult>
where
    F: FnMut(i64) -> Result<RatFun>,
{
    let mut cache: BTreeMap<i64, RatFun> = BTreeMap::new();
    let fit_span = 2 * opts.max_order as i64 + opts.margin;
    let mut head = opts.head;
    loop {
        let w = head + fit_span;
        // Materialize the window through the cache.
        for m in -w..=w {
            if !cache.contains_key(&m) {
                let v = f(m)?;
                cache.insert(m, v);
            }
        }
        let get = |m: i64| cache.get(&m).expect("window covers m").clone();
        let plus = fit_side(&|m| get(m), head, w, opts);
        let minus = fit_side(&|m| get(-m), head, w, opts);
        match (plus, minus) {
            (Some(fp), Some(fm)) => {
                let t_plus = tail_sum(q, &|m| get(m), &fp)?;
                let t_minus = tail_sum(q, &|m| get(-m), &fm)?;
                let mut mid = RatFun::zero(q);
                for m in (-(fm.tail_start - 1))..=(fp.tail_start - 1) {
                    mid = mid.checked_add(&get(m))?;
                }
                let value = mid.checked_add(&t_plus)?.checked_add(&t_minus)?;
                let formal = tail_is_formal(&fp, opts, q)? | tail_is_formal(&fm, opts, q)?;
                return Ok(SumResult {
                    value,
                    formal_tail: formal,
                });
            }
            _ => {
                if head + 8 > opts.head_cap {
                    return Err(Error::NoRecurrence(String::from(
                        "no linear recurrence of admissible order fits the shell tails \
                         within the maximal window",
                    )));
                }
                head += 8;
            }
        }
    }
}

/// Try recurrence orders `0..=max_order` on the points `(head, w]` of one
/// side, fitting on the deepest points and verifying on the rest.  Returns
/// the accepted fit, or `None` to request a wider window.
fn fit_side(get: &dyn Fn(i64) -> RatFun, head: i64, w: i64, opts: &SumOptions) -> Option<Fit> {
    'orders: for r in 0..=opts.max_order {
        let ri = r as i64;
        let tail_start = head + 1 + ri;
        if r == 0 {
            // Zero tail: every point past the head must vanish.
            for t in head + 1..=w {
                if !get(t).is_zero() {
                    continue 'orders;
                }
            }
            return Some(Fit {
                coeffs: vec![],
                tail_start,
            });
        }
        if tail_start + ri > w {
            return None;
        }
        // Fit on the r deepest equations S(t) = sum_j a_j S(t-j).
        let mut rows = Vec::with_capacity(r);
        let mut rhs = Vec::with_capacity(r);
        for k in 0..ri {
            let t = w - k;
            rows.push((1..=ri).map(|j| get(t - j)).collect::<Vec<_>>());
            rhs.push(get(t));
        }
        let coeffs = match solve(rows, rhs) {
            Ok(Some(c)) => c,
            _ => continue 'orders,
        };
        // Verify on every remaining window equation.
        for t in tail_start..=w - ri {
            let mut acc = RatFun::zero(get(t).q());
            for (j, a) in coeffs.iter().enumerate() {
                acc = match acc.checked_add(&match a.checked_mul(&get(t - 1 - j as i64)) {
                    Ok(v) => v,
                    Err(_) => continue 'orders,
                }) {
                    Ok(v) => v,
                    Err(_) => continue 'orders,
                };
            }
            if acc != get(t) {
                continue 'orders;
            }
        }
        return Some(Fit { coeffs, tail_start });
    }
    None
}

/// Exact Gaussian elimination over the rational-function field.  Returns
/// `Ok(None)` for a singular matrix; arithmetic failures (degree cap)
/// propagate as errors.
fn solve(mut a: Vec<Vec<RatFun>>, mut b: Vec<RatFun>) -> Result<Option<Vec<RatFun>>> {
    let n = b.len();
    for col in 0..n {
        let pivot = match (col..n).find(|&row| !a[row][col].is_zero()) {
            Some(row) => row,
            None => return Ok(None),
        };
        a.swap(col, pivot);
        b.swap(col, pivot);
        let inv = a[col][col].checked_recip()?;
        for k in col..n {
            a[col][k] = a[col][k].checked_mul(&inv)?;
        }
        b[col] = b[col].checked_mul(&inv)?;
        for row in 0..n {
            if row == col || a[row][col].is_zero() {
                continue;
            }
            let f = a[row][col].clone();
            for k in col..n {
                let t = f.checked_mul(&a[col][k])?;
                a[row][k] = &a[row][k] - &t;
            }
            let t = f.checked_mul(&b[col])?;
            b[row] = &b[row] - &t;
        }
    }
    Ok(Some(b))
}

/// Closed-form tail `sum_{m >= tail_start} S(m)` for an accepted fit.
fn tail_sum(q: Prime, get: &dyn Fn(i64) -> RatFun, fit: &Fit) -> Result<RatFun> {
    if fit.coeffs.is_empty() {
        return Ok(RatFun::zero(q));
    }
    let m0 = fit.tail_start;
    let mut coeff_sum = RatFun::zero(q);
    let mut num = RatFun::zero(q);
    for (idx, a) in fit.coeffs.iter().enumerate() {
        let j = idx as i64 + 1;
        coeff_sum = coeff_sum.checked_add(a)?;
        let mut p_j = RatFun::zero(q);
        for i in m0 - j..=m0 - 1 {
            p_j = p_j.checked_add(&get(i))?;
        }
        num = num.checked_add(&a.checked_mul(&p_j)?)?;
    }
    let denom = &RatFun::one(q) - &coeff_sum;
    if denom.is_zero() {
        return Err(Error::DivergentSum(String::from(
            "characteristic root 1: a shell strand neither decays nor grows, \
             so the series has no continuation (resampling parameters usually \
             moves off this degenerate locus)",
        )));
    }
    num.checked_div(&denom)
}

/// Decide whether a fitted tail was summed outside its region of literal
/// convergence: some characteristic root has modulus >= 1 at the probe
/// point `Y* = q^{-sigma*/2}`.
fn tail_is_formal(fit: &Fit, opts: &SumOptions, q: Prime) -> Result<bool> {
    let r = fit.coeffs.len();
    if r == 0 {
        return Ok(false);
    }
    let sigma = match opts.sigma_star {
        None => return Ok(true),
        Some(s) => s,
    };
    let y = Complex64::new(Float::powf(q.as_f64(), -sigma / 2.0), 0.0);
    // Characteristic polynomial x^r - a_1 x^{r-1} - ... - a_r at Y*.
    let mut poly = vec![Complex64::new(0.0, 0.0); r + 1];
    poly[r] = Complex64::new(1.0, 0.0);
    for (idx, a) in fit.coeffs.iter().enumerate() {
        let v = match a.eval_c64(y) {
            Ok(v) => v,
            // A pole of a coefficient at the probe point: no convergence
            // statement possible, flag conservatively.
            Err(_) => return Ok(true),
        };
        poly[r - 1 - idx] = -v;
    }
    Ok(complex_roots(&poly)
        .into_iter()
        .any(|root| root.norm() >= 1.0 - 1e-9))
}

/// All complex roots of a polynomial (coefficient `k` multiplies `x^k`),
/// by simultaneous Durand-Kerner iteration.  Intended for the tiny
/// characteristic polynomials of shell recurrences.
pub fn complex_roots(coeffs: &[Complex64]) -> Vec<Complex64> {
    let mut c: Vec<Complex64> = coeffs.to_vec();
    while c.last().map_or(false, |l| l.norm() < 1e-300) {
        c.pop();
    }
    if c.len() < 2 {
        return vec![];
    }
    let deg = c.len() - 1;
    let lead = c[deg];
    for v in c.iter_mut() {
        *v /= lead;
    }
    let eval = |x: Complex64| {
        let mut acc = Complex64::new(0.0, 0.0);
        for k in (0..c.len()).rev() {
            acc = acc * x + c[k];
        }
        acc
    };
    let seed = Complex64::new(0.4, 0.9);
    let mut roots: Vec<Complex64> = (0..deg).map(|k| seed.powu(k as u32 + 1)).collect();
    for _ in 0..500 {
        let mut delta: f64 = 0.0;
        for i in 0..deg {
            let mut den = Complex64::new(1.0, 0.0);
            for j in 0..deg {
                if j != i {
                    den *= roots[i] - roots[j];
                }
            }
            if den.norm() < 1e-300 {
                continue;
            }
            let step = eval(roots[i]) / den;
            roots[i] -= step;
            delta = delta.max(step.norm());
        }
        if delta < 1e-13 {
            break;
        }
    }
    roots
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::Rat;
    use crate::ratfun::Scalar;
    use num_bigint::BigInt;

    fn q5() -> Prime {
        Prime::new(5).unwrap()
    }

    fn rat(n: i64, d: i64) -> Rat {
        Rat::new(BigInt::from(n), BigInt::from(d))
    }

    #[test]
    fn one_sided_geometric_matches_closed_form() {
        let q = q5();
        let a = Scalar::from_rat(q, rat(2, 3));
        // S(m) = (a Y^2)^m for m >= 0, zero below.
        let f = |m: i64| -> Result<RatFun> {
            Ok(if m < 0 {
                RatFun::zero(q)
            } else {
                RatFun::monomial(a.pow(m), 2 * m)
            })
        };
        let out = shell_sum(q, f, &SumOptions::default()).unwrap();
        assert_eq!(out.value, RatFun::geo_sum(&a, 2).unwrap());
    }

    #[test]
    fn two_sided_constant_ratio() {
        let q = q5();
        // S(m) = (1/3)^{|m|}: sums to 2 exactly.
        let f = |m: i64| -> Result<RatFun> {
            Ok(RatFun::from_rat(q, rat(1, 3).pow(m.unsigned_abs() as i32)))
        };
        let out = shell_sum(q, f, &SumOptions::default()).unwrap();
        assert_eq!(out.value, RatFun::from_rat(q, rat(2, 1)));
    }

    #[test]
    fn order_two_strands() {
        let q = q5();
        let a = Scalar::from_rat(q, rat(1, 2));
        let b = Scalar::from_rat(q, rat(-1, 3));
        let f = |m: i64| -> Result<RatFun> {
            Ok(if m < 0 {
                RatFun::zero(q)
            } else {
                &RatFun::monomial(a.pow(m), 2 * m) + &RatFun::monomial(b.pow(m), 2 * m)
            })
        };
        let out = shell_sum(q, f, &SumOptions::default()).unwrap();
        let expect = &RatFun::geo_sum(&a, 2).unwrap() + &RatFun::geo_sum(&b, 2).unwrap();
        assert_eq!(out.value, expect);
    }

    #[test]
    fn transient_head_then_tail() {
        let q = q5();
        let a = Scalar::from_rat(q, rat(1, 7));
        // Arbitrary junk on shells 0..4, geometric from shell 5 on.
        let f = |m: i64| -> Result<RatFun> {
            Ok(match m {
                m if m < 0 => RatFun::zero(q),
                0 => RatFun::from_rat(q, rat(10, 1)),
                1 => RatFun::y_pow(q, 3),
                2 => RatFun::from_rat(q, rat(-4, 9)),
                3 => RatFun::zero(q),
                4 => RatFun::one(q),
                m => RatFun::monomial(a.pow(m), 2 * m),
            })
        };
        let out = shell_sum(q, f, &SumOptions::default()).unwrap();
        // Independent assembly: explicit head + geometric remainder.
        let mut expect = RatFun::from_rat(q, rat(10, 1));
        expect = &expect + &RatFun::y_pow(q, 3);
        expect = &expect + &RatFun::from_rat(q, rat(-4, 9));
        expect = &expect + &RatFun::one(q);
        let full_geo = RatFun::geo_sum(&a, 2).unwrap();
        let mut partial = RatFun::zero(q);
        for m in 0..5 {
            partial = &partial + &RatFun::monomial(a.pow(m), 2 * m);
        }
        expect = &expect + &(&full_geo - &partial);
        assert_eq!(out.value, expect);
    }

    #[test]
    fn constant_strand_is_divergent() {
        let q = q5();
        let f = |m: i64| -> Result<RatFun> {
            Ok(if m < 0 { RatFun::zero(q) } else { RatFun::one(q) })
        };
        match shell_sum(q, f, &SumOptions::default()) {
            Err(Error::DivergentSum(_)) => {}
            other => panic!("expected a divergence report, got {other:?}"),
        }
    }

    #[test]
    fn formal_flag_outside_convergence() {
        let q = q5();
        let two = Scalar::from_int(q, 2);
        let f = |m: i64| -> Result<RatFun> {
            Ok(if m < 0 {
                RatFun::zero(q)
            } else {
                RatFun::monomial(two.pow(m), 2 * m)
            })
        };
        // At sigma = 0 the ratio 2 Y^2 has modulus 2: formal continuation.
        let opts = SumOptions {
            sigma_star: Some(0.0),
            ..SumOptions::default()
        };
        let out = shell_sum(q, f, &opts).unwrap();
        assert!(out.formal_tail);
        assert_eq!(out.value, RatFun::geo_sum(&two, 2).unwrap());
        // At sigma = 2 the ratio has modulus 2/25: literal convergence.
        let opts = SumOptions {
            sigma_star: Some(2.0),
            ..SumOptions::default()
        };
        let out = shell_sum(q, f, &opts).unwrap();
        assert!(!out.formal_tail);
    }

    #[test]
    fn finite_support_is_exact_and_literal() {
        let q = q5();
        let f = |m: i64| -> Result<RatFun> {
            Ok(if (-3..=2).contains(&m) {
                RatFun::y_pow(q, m)
            } else {
                RatFun::zero(q)
            })
        };
        let out = shell_sum(q, f, &SumOptions::default()).unwrap();
        let mut expect = RatFun::zero(q);
        for m in -3..=2 {
            expect = &expect + &RatFun::y_pow(q, m);
        }
        assert_eq!(out.value, expect);
        assert!(!out.formal_tail);
    }

    #[test]
    fn durand_kerner_small_roots() {
        // (x - 2)(x + 3)(x - i)
        let i = Complex64::new(0.0, 1.0);
        let r1 = Complex64::new(2.0, 0.0);
        let r2 = Complex64::new(-3.0, 0.0);
        // x^3 + (1 - i... expand directly from the factors instead.
        let c3 = Complex64::new(1.0, 0.0);
        let c2 = -(r1 + r2 + i);
        let c1 = r1 * r2 + r1 * i + r2 * i;
        let c0 = -(r1 * r2 * i);
        let mut roots = complex_roots(&[c0, c1, c2, c3]);
        roots.sort_by(|a, b| a.re.partial_cmp(&b.re).unwrap());
        assert!((roots[0] - r2).norm() < 1e-9);
        assert!((roots[1] - i).norm() < 1e-9);
        assert!((roots[2] - r1).norm() < 1e-9);
    }
}
