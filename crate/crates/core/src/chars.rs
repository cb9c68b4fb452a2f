//! Multiplicative characters of the local field and tuples of them.
//!
//! The p-adic characters handled exactly are the unramified ones,
//! `w(x) = a^{v(x)} |x|^t` with `a` a nonzero Gaussian rational and `t` a
//! half-integer; the half-integer restriction keeps `q^{-t v}` inside the
//! scalar field.  Real characters `sgn^eps |.|^t` are carried for the
//! archimedean (numeric) path and for exponent bookkeeping.  A character
//! may additionally be twisted by a half-integer multiple of the symbolic
//! parameter `s`; the twist turns values into rational functions of
//! `Y = q^{-s/2}`.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use num_bigint::BigInt;
use num_complex::Complex64;
use num_traits::{Float, ToPrimitive};

use crate::err::{Error, Result};
use crate::field::{val, Prime, Rat};
use crate::ratfun::{RatFun, Scalar};

/// Half-integers are stored as twice their value.  Renders `3` as `"3/2"`.
pub fn fmt_half(t2: i64) -> String {
    if t2 % 2 == 0 {
        (t2 / 2).to_string()
    } else {
        format!("{t2}/2")
    }
}

/// Parse `"3/2"`, `"-1/2"`, `"2"` into twice the half-integer value.
pub fn parse_half(s: &str) -> Result<i64> {
    let r: Rat = s
        .trim()
        .parse()
        .map_err(|_| Error::Domain(format!("cannot parse half-integer from {s:?}")))?;
    let doubled = &r * Rat::from_integer(BigInt::from(2));
    if !doubled.is_integer() {
        return Err(Error::Domain(format!("{s:?} is not a half-integer")));
    }
    doubled
        .to_integer()
        .to_i64()
        .ok_or_else(|| Error::Domain(format!("{s:?} out of range")))
}

/// One multiplicative character of a local field.
#[derive(Clone, Debug, PartialEq)]
pub enum MultChar {
    /// `w(x) = a^{v(x)} |x|^{t2/2}` on a p-adic field, `a` Gaussian.
    Padic { q: Prime, a: Scalar, t2: i64 },
    /// `w(x) = sgn(x)^eps |x|^{t}` on the real field.
    Real { eps: u8, t: f64 },
}

impl MultChar {
    pub fn unramified(q: Prime, a: Scalar) -> Result<MultChar> {
        if a.is_zero() {
            return Err(Error::Domain("character parameter a must be nonzero".into()));
        }
        if a.gauss_parts().is_none() {
            return Err(Error::Domain(
                "character parameter a must be a Gaussian rational".into(),
            ));
        }
        Ok(MultChar::Padic { q, a, t2: 0 })
    }

    pub fn unramified_twisted(q: Prime, a: Scalar, t2: i64) -> Result<MultChar> {
        let mut w = MultChar::unramified(q, a)?;
        if let MultChar::Padic { t2: t, .. } = &mut w {
            *t = t2;
        }
        Ok(w)
    }

    pub fn real(eps: u8, t: f64) -> MultChar {
        MultChar::Real { eps: eps % 2, t }
    }

    pub fn is_padic(&self) -> bool {
        matches!(self, MultChar::Padic { .. })
    }

    pub fn q(&self) -> Option<Prime> {
        match self {
            MultChar::Padic { q, .. } => Some(*q),
            MultChar::Real { .. } => None,
        }
    }

    /// The exponent of absolute growth: `|w(x)| = |x|^{ex}` along powers of
    /// the uniformizer (p-adic) or on rays (real).
    pub fn ex(&self) -> f64 {
        match self {
            MultChar::Padic { q, a, t2 } => {
                (*t2 as f64) / 2.0 - Float::ln(a.to_c64().norm()) / Float::ln(q.as_f64())
            }
            MultChar::Real { t, .. } => *t,
        }
    }

    pub fn inv(&self) -> MultChar {
        match self {
            MultChar::Padic { q, a, t2 } => MultChar::Padic {
                q: *q,
                a: a.inv(),
                t2: -t2,
            },
            MultChar::Real { eps, t } => MultChar::Real { eps: *eps, t: -t },
        }
    }

    /// Pointwise product of two characters of the same field.
    pub fn product(&self, o: &MultChar) -> Result<MultChar> {
        match (self, o) {
            (MultChar::Padic { q, a, t2 }, MultChar::Padic { q: q2, a: a2, t2: u2 }) => {
                if q != q2 {
                    return Err(Error::Domain("characters of different fields".into()));
                }
                Ok(MultChar::Padic {
                    q: *q,
                    a: a * a2,
                    t2: t2 + u2,
                })
            }
            (MultChar::Real { eps, t }, MultChar::Real { eps: e2, t: u }) => {
                Ok(MultChar::Real {
                    eps: (eps + e2) % 2,
                    t: t + u,
                })
            }
            _ => Err(Error::Domain("characters of different fields".into())),
        }
    }

    /// The exact value at `-1`: always `1` for unramified p-adic, `(-1)^eps`
    /// for real.
    pub fn value_at_minus_one(&self) -> i32 {
        match self {
            MultChar::Padic { .. } => 1,
            MultChar::Real { eps, .. } => {
                if *eps == 0 {
                    1
                } else {
                    -1
                }
            }
        }
    }

    /// Exact value at a nonzero rational, optionally twisted by
    /// `|.|^{(shift2/2) s}`: returns `a^v q^{-(t2/2) v} Y^{shift2 v}`.
    pub fn eval(&self, x: &Rat, shift2: i64) -> Result<RatFun> {
        match self {
            MultChar::Real { .. } => Err(Error::Capability(
                "real characters have no exact rational-function values".into(),
            )),
            MultChar::Padic { q, a, t2 } => {
                let v = val(x, *q)
                    .ok_or_else(|| Error::Domain("character evaluated at zero".into()))?;
                let c = &a.pow(v) * &Scalar::q_half_pow(*q, -t2 * v);
                Ok(RatFun::monomial(c, shift2 * v))
            }
        }
    }

    /// Numeric value at a nonzero rational (p-adic fields only; the real
    /// path evaluates its own characters pointwise on floats).
    pub fn eval_c64(&self, x: &Rat) -> Result<Complex64> {
        match self {
            MultChar::Real { .. } => Err(Error::Capability(
                "numeric p-adic evaluation of a real character".into(),
            )),
            MultChar::Padic { q, a, t2 } => {
                let v = val(x, *q)
                    .ok_or_else(|| Error::Domain("character evaluated at zero".into()))?;
                let av = a.to_c64().powi(v as i32);
                let qa = Float::powf(q.as_f64(), -(*t2 as f64) / 2.0 * v as f64);
                Ok(av * qa)
            }
        }
    }

    /// Config form of the parameters.
    pub fn describe(&self) -> String {
        match self {
            MultChar::Padic { a, t2, .. } => {
                format!(
                    "unr({}){}",
                    a.fmt_gauss().expect("Gaussian by construction"),
                    if *t2 == 0 {
                        String::new()
                    } else {
                        format!("|.|^{}", fmt_half(*t2))
                    }
                )
            }
            MultChar::Real { eps, t } => {
                format!(
                    "{}|.|^{t}",
                    if *eps == 1 { "sgn" } else { "" }
                )
            }
        }
    }
}

/// A character with a symbolic twist `|.|^{(shift2/2) s}`.
#[derive(Clone, Debug, PartialEq)]
pub struct TwistedChar {
    pub base: MultChar,
    pub shift2: i64,
}

impl TwistedChar {
    pub fn plain(base: MultChar) -> TwistedChar {
        TwistedChar { base, shift2: 0 }
    }

    /// `chi_s = chi |.|^s`.
    pub fn with_s(base: MultChar) -> TwistedChar {
        TwistedChar { base, shift2: 2 }
    }

    pub fn eval(&self, x: &Rat) -> Result<RatFun> {
        self.base.eval(x, self.shift2)
    }

    pub fn inv(&self) -> TwistedChar {
        TwistedChar {
            base: self.base.inv(),
            shift2: -self.shift2,
        }
    }
}

/// An ordered tuple of characters of a common local field; the inducing
/// datum of a principal series representation.
#[derive(Clone, Debug, PartialEq)]
pub struct CharTuple(Vec<MultChar>);

impl CharTuple {
    pub fn new(chars: Vec<MultChar>) -> Result<CharTuple> {
        if let Some(first) = chars.first() {
            let q = first.q();
            if chars.iter().any(|c| c.q() != q) {
                return Err(Error::Domain("mixed fields in a character tuple".into()));
            }
        }
        Ok(CharTuple(chars))
    }

    pub fn empty() -> CharTuple {
        CharTuple(Vec::new())
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// 1-based access, matching the way induced data are usually indexed.
    pub fn at(&self, i: usize) -> &MultChar {
        &self.0[i - 1]
    }

    pub fn chars(&self) -> &[MultChar] {
        &self.0
    }

    pub fn q(&self) -> Option<Prime> {
        self.0.first().and_then(MultChar::q)
    }

    /// The dual tuple `(a_k^{-1}, ..., a_1^{-1})`; an involution.
    pub fn hat_dual(&self) -> CharTuple {
        CharTuple(self.0.iter().rev().map(MultChar::inv).collect())
    }

    /// Central sign correction between two tuples of lengths `(n, n')`,
    /// `n'` equal to `n` or `n - 1`: the product of `(nu_i nu'_j)(-1)` over
    /// pairs `j < i` with `i + j <= n`.  By construction it is 1 for
    /// `n <= 2` and for any fully unramified p-adic pair.
    pub fn sgn_product(&self, other: &CharTuple) -> Result<i32> {
        let n = self.len();
        let np = other.len();
        if !(np == n || np + 1 == n) {
            return Err(Error::Domain(format!(
                "tuple lengths ({n}, {np}) are not of adjacent-rank shape"
            )));
        }
        let mut sign = 1i32;
        for i in 1..=n {
            for j in 1..i {
                if i + j <= n {
                    sign *= self.at(i).value_at_minus_one() * other.at(j).value_at_minus_one();
                }
            }
        }
        Ok(sign)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_bigint::BigInt;
    use num_traits::Zero;

    fn q5() -> Prime {
        Prime::new(5).unwrap()
    }

    fn rat(n: i64, d: i64) -> Rat {
        Rat::new(BigInt::from(n), BigInt::from(d))
    }

    #[test]
    fn half_integer_strings() {
        assert_eq!(fmt_half(3), "3/2");
        assert_eq!(fmt_half(-4), "-2");
        assert_eq!(parse_half("1/2").unwrap(), 1);
        assert_eq!(parse_half("-2").unwrap(), -4);
        assert!(parse_half("1/3").is_err());
    }

    #[test]
    fn exponent_examples() {
        let q = q5();
        let w = MultChar::unramified_twisted(q, Scalar::i(q), 1).unwrap();
        assert!((w.ex() - 0.5).abs() < 1e-12);
        let w = MultChar::real(1, 0.5);
        assert!((w.ex() - 0.5).abs() < 1e-12);
        let w = MultChar::unramified(q, Scalar::from_int(q, 2)).unwrap();
        assert!((w.ex() + 0.4306765).abs() < 1e-6);
        // Oracle: |w(p^m)| must equal q^{-m ex} at m = 3.
        let v = w
            .eval_c64(&Rat::from_integer(BigInt::from(125)))
            .unwrap()
            .norm();
        let predicted = Float::powf(5.0f64, -3.0 * w.ex());
        assert!((v - predicted).abs() < 1e-9);
    }

    #[test]
    fn eval_examples() {
        let q = q5();
        let a = Scalar::gauss(q, rat(2, 3), rat(1, 3));
        let w = MultChar::unramified(q, a.clone()).unwrap();
        // At the uniformizer, no twist: the parameter itself.
        assert_eq!(
            w.eval(&rat(5, 1), 0).unwrap(),
            RatFun::from_scalar(a.clone())
        );
        // |.|^{1/2} twist at p^2: a^2 q^{-1}.
        let w2 = MultChar::unramified_twisted(q, a.clone(), 1).unwrap();
        let expect = (&a.pow(2)).mul_rat(&rat(1, 5));
        assert_eq!(w2.eval(&rat(25, 1), 0).unwrap(), RatFun::from_scalar(expect));
        // chi_s at the uniformizer: c Y^2.
        let c = Scalar::from_int(q, 3);
        let chi = TwistedChar::with_s(MultChar::unramified(q, c.clone()).unwrap());
        assert_eq!(chi.eval(&rat(5, 1)).unwrap(), RatFun::monomial(c, 2));
        // Zero is out of the group.
        assert!(w.eval(&Rat::zero(), 0).is_err());
    }

    #[test]
    fn eval_is_multiplicative() {
        let q = q5();
        let a = Scalar::gauss(q, rat(-1, 2), rat(2, 1));
        let w = MultChar::unramified_twisted(q, a, 3).unwrap();
        let xs = [rat(5, 3), rat(2, 25), rat(-7, 1), rat(125, 4)];
        for x in &xs {
            for y in &xs {
                let lhs = w.eval(&(x * y), 2).unwrap();
                let rhs = &w.eval(x, 2).unwrap() * &w.eval(y, 2).unwrap();
                assert_eq!(lhs, rhs);
            }
        }
    }

    #[test]
    fn sign_product_cases() {
        let q = q5();
        let unr = |n: i64| MultChar::unramified(q, Scalar::from_int(q, n)).unwrap();
        let nu = CharTuple::new(vec![unr(2), unr(3)]).unwrap();
        let nup = CharTuple::new(vec![unr(7)]).unwrap();
        assert_eq!(nu.sgn_product(&nup).unwrap(), 1);
        // Real rank 3 with one contributing pair.
        let sgn = MultChar::real(1, 0.0);
        let triv = MultChar::real(0, 0.0);
        let nu = CharTuple::new(vec![sgn.clone(), triv.clone(), sgn.clone()]).unwrap();
        let nup = CharTuple::new(vec![sgn.clone(), triv.clone(), triv.clone()]).unwrap();
        assert_eq!(nu.sgn_product(&nup).unwrap(), -1);
        // Length mismatch beyond adjacent rank is refused.
        let short = CharTuple::new(vec![triv]).unwrap();
        assert!(nu.sgn_product(&short).is_err());
    }

    #[test]
    fn hat_dual_involution() {
        let q = q5();
        let unr = |n: i64, d: i64| {
            MultChar::unramified(q, Scalar::from_rat(q, rat(n, d))).unwrap()
        };
        let t = CharTuple::new(vec![unr(2, 1), unr(3, 1)]).unwrap();
        let d = t.hat_dual();
        assert_eq!(
            d.chars()[0],
            MultChar::unramified(q, Scalar::from_rat(q, rat(1, 3))).unwrap()
        );
        assert_eq!(
            d.chars()[1],
            MultChar::unramified(q, Scalar::from_rat(q, rat(1, 2))).unwrap()
        );
        assert_eq!(d.hat_dual(), t);
        assert_eq!(CharTuple::empty().hat_dual().len(), 0);
    }

    #[test]
    fn ex_is_additive() {
        let q = q5();
        let w1 = MultChar::unramified_twisted(q, Scalar::gauss(q, rat(1, 2), rat(1, 3)), 1)
            .unwrap();
        let w2 = MultChar::unramified_twisted(q, Scalar::from_int(q, 3), -2).unwrap();
        let prod = w1.product(&w2).unwrap();
        assert!((prod.ex() - (w1.ex() + w2.ex())).abs() < 1e-12);
        assert!((w1.inv().ex() + w1.ex()).abs() < 1e-12);
    }
}
