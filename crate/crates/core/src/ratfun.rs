//! Exact coefficient field and rational functions of the complex parameter.
//!
//! Every exact integral in this crate is a rational function of
//! `Y = q^{-s/2}` with coefficients in the field `Q(i)[r] / (r^2 - q)`.
//! The quadratic generator `r` is a formal square root of `q`; it is what
//! half-integer exponents of `q` (module of the torus, normalizing factors
//! of induced representations) evaluate to.  Working in this fixed quartic
//! extension of `Q` keeps arithmetic exact and equality decidable.
//!
//! Rational functions are kept in a canonical form (numerator and
//! denominator coprime, denominator monic), so structural equality is value
//! equality.  Division by zero panics, like integer division; fallible
//! entry points are provided where a zero is a plausible runtime input.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;
use core::ops::{Add, Mul, Neg, Sub};

use num_bigint::BigInt;
use num_complex::Complex64;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};

use crate::err::{Error, Result};
use crate::field::{Prime, Rat};

/// Hard cap on polynomial degrees in the exact algebra.  Desk-scale
/// computations stay two orders of magnitude below this; hitting it means
/// a runaway recurrence, and the checked entry points report it as an error.
pub const DEGREE_CAP: usize = 512;

/// An element of `Q(i)[r]/(r^2 - q)`, stored as four exact rational
/// coordinates on the basis `{1, i, r, i r}`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Scalar {
    q: Prime,
    c: [Rat; 4],
}

impl Scalar {
    pub fn zero(q: Prime) -> Self {
        Scalar {
            q,
            c: [Rat::zero(), Rat::zero(), Rat::zero(), Rat::zero()],
        }
    }

    pub fn one(q: Prime) -> Self {
        Scalar::from_rat(q, Rat::one())
    }

    pub fn from_rat(q: Prime, x: Rat) -> Self {
        Scalar {
            q,
            c: [x, Rat::zero(), Rat::zero(), Rat::zero()],
        }
    }

    pub fn from_int(q: Prime, n: i64) -> Self {
        Scalar::from_rat(q, Rat::from_integer(BigInt::from(n)))
    }

    pub fn gauss(q: Prime, re: Rat, im: Rat) -> Self {
        Scalar {
            q,
            c: [re, im, Rat::zero(), Rat::zero()],
        }
    }

    pub fn i(q: Prime) -> Self {
        Scalar::gauss(q, Rat::zero(), Rat::one())
    }

    /// The formal square root of `q`.
    pub fn rt_q(q: Prime) -> Self {
        Scalar {
            q,
            c: [Rat::zero(), Rat::zero(), Rat::one(), Rat::zero()],
        }
    }

    /// `i^k` for `k` quarter turns.
    pub fn quarter_turn(q: Prime, k: u8) -> Self {
        match k % 4 {
            0 => Scalar::one(q),
            1 => Scalar::i(q),
            2 => -&Scalar::one(q),
            _ => -&Scalar::i(q),
        }
    }

    /// `q^{k/2}` for an integer `k` of either sign, exactly.
    pub fn q_half_pow(q: Prime, k: i64) -> Self {
        let m = k.div_euclid(2);
        let e = k.rem_euclid(2);
        let base = Scalar::from_rat(q, q.pow(m));
        if e == 1 {
            &base * &Scalar::rt_q(q)
        } else {
            base
        }
    }

    #[inline]
    pub fn q(&self) -> Prime {
        self.q
    }

    pub fn coords(&self) -> &[Rat; 4] {
        &self.c
    }

    pub fn is_zero(&self) -> bool {
        self.c.iter().all(Rat::is_zero)
    }

    pub fn is_one(&self) -> bool {
        self.c[0].is_one() && self.c[1].is_zero() && self.c[2].is_zero() && self.c[3].is_zero()
    }

    /// The rational part when the element is plain rational.
    pub fn rat_part(&self) -> Option<&Rat> {
        if self.c[1].is_zero() && self.c[2].is_zero() && self.c[3].is_zero() {
            Some(&self.c[0])
        } else {
            None
        }
    }

    /// Real and imaginary rational parts when the element lies in `Q(i)`.
    pub fn gauss_parts(&self) -> Option<(&Rat, &Rat)> {
        if self.c[2].is_zero() && self.c[3].is_zero() {
            Some((&self.c[0], &self.c[1]))
        } else {
            None
        }
    }

    /// `i -> -i`.
    pub fn conj_i(&self) -> Self {
        Scalar {
            q: self.q,
            c: [
                self.c[0].clone(),
                -&self.c[1],
                self.c[2].clone(),
                -&self.c[3],
            ],
        }
    }

    /// `r -> -r`.
    pub fn conj_r(&self) -> Self {
        Scalar {
            q: self.q,
            c: [
                self.c[0].clone(),
                self.c[1].clone(),
                -&self.c[2],
                -&self.c[3],
            ],
        }
    }

    pub fn mul_rat(&self, x: &Rat) -> Self {
        Scalar {
            q: self.q,
            c: [
                &self.c[0] * x,
                &self.c[1] * x,
                &self.c[2] * x,
                &self.c[3] * x,
            ],
        }
    }

    /// Multiplicative inverse.  The product of an element with its three
    /// conjugates under `i -> -i`, `r -> -r` is a nonzero rational (the
    /// field norm), which reduces inversion to rational division.
    pub fn checked_inv(&self) -> Result<Self> {
        if self.is_zero() {
            return Err(Error::Domain("inverse of zero scalar".into()));
        }
        let y = self * &self.conj_r();
        debug_assert!(y.c[2].is_zero() && y.c[3].is_zero(), "r-part survived its own conjugate");
        let z = &y * &y.conj_i();
        let norm = z.rat_part().expect("field norm is rational").clone();
        debug_assert!(!norm.is_zero());
        // self * conj_r(self) * conj_i(y) = y * conj_i(y) = norm.
        let adj = &self.conj_r() * &y.conj_i();
        Ok(adj.mul_rat(&(Rat::one() / norm)))
    }

    pub fn inv(&self) -> Self {
        self.checked_inv().expect("inverse of zero scalar")
    }

    /// Integer power; negative exponents invert (panics on zero base).
    pub fn pow(&self, k: i64) -> Self {
        let base = if k < 0 { self.inv() } else { self.clone() };
        let mut acc = Scalar::one(self.q);
        for _ in 0..k.unsigned_abs() {
            acc = &acc * &base;
        }
        acc
    }

    /// Floating image under `r -> sqrt(q)`, `i -> i`.
    pub fn to_c64(&self) -> Complex64 {
        let rt = num_traits::Float::sqrt(self.q.as_f64());
        let f = |x: &Rat| x.to_f64().unwrap_or(f64::NAN);
        Complex64::new(f(&self.c[0]) + rt * f(&self.c[2]), f(&self.c[1]) + rt * f(&self.c[3]))
    }

    /// Parse a Gaussian rational in the config form `"2/3+1/3i"` (also
    /// accepts `"-1/2"`, `"i"`, `"2-i"`, an optional `*` before `i`).
    pub fn parse_gauss(q: Prime, s: &str) -> Result<Self> {
        let t: String = s.chars().filter(|c| !c.is_whitespace()).collect();
        if t.is_empty() {
            return Err(Error::Domain("empty scalar string".into()));
        }
        let bad = || Error::Domain(format!("cannot parse Gaussian rational from {s:?}"));
        let parse_rat = |u: &str| -> Result<Rat> {
            match u {
                "" | "+" => Ok(Rat::one()),
                "-" => Ok(-Rat::one()),
                _ => u.parse::<BigRational>().map_err(|_| bad()),
            }
        };
        // Split at the last top-level sign that is not a leading sign.
        let bytes = t.as_bytes();
        let mut split = None;
        for j in (1..bytes.len()).rev() {
            if bytes[j] == b'+' || bytes[j] == b'-' {
                split = Some(j);
                break;
            }
        }
        let (re_str, im_str) = match split {
            Some(j) if t.ends_with('i') => (&t[..j], &t[j..]),
            _ => {
                if t.ends_with('i') {
                    ("", t.as_str())
                } else {
                    (t.as_str(), "")
                }
            }
        };
        let re = if re_str.is_empty() {
            Rat::zero()
        } else {
            parse_rat(re_str)?
        };
        let im = if im_str.is_empty() {
            Rat::zero()
        } else {
            let body = im_str
                .strip_suffix('i')
                .ok_or_else(bad)?
                .strip_suffix('*')
                .unwrap_or(im_str.strip_suffix('i').unwrap());
            let body = body.strip_prefix('+').unwrap_or(body);
            parse_rat(body)?
        };
        Ok(Scalar::gauss(q, re, im))
    }

    /// Config form of a Gaussian rational; `None` when `r` coordinates
    /// are present.
    pub fn fmt_gauss(&self) -> Option<String> {
        let (re, im) = self.gauss_parts()?;
        Some(if im.is_zero() {
            re.to_string()
        } else if re.is_zero() {
            format!("{im}i")
        } else if im.is_negative() {
            format!("{re}{im}i")
        } else {
            format!("{re}+{im}i")
        })
    }

    /// Render as a term coefficient: `(sign, body)` where the body omits a
    /// unit rational in front of the basis monomials.
    fn fmt_parts(&self) -> (bool, String) {
        let nz: Vec<usize> = (0..4).filter(|&k| !self.c[k].is_zero()).collect();
        if nz.is_empty() {
            return (false, "0".into());
        }
        if nz.len() == 1 {
            let k = nz[0];
            let v = &self.c[k];
            let neg = v.is_negative();
            let a = v.abs();
            let sym = ["", "i", "r", "i*r"][k];
            let body = if sym.is_empty() {
                a.to_string()
            } else if a.is_one() {
                sym.to_string()
            } else {
                format!("{a}*{sym}")
            };
            return (neg, body);
        }
        let mut out = String::from("(");
        let mut first = true;
        for k in nz {
            let v = &self.c[k];
            let a = v.abs();
            let sym = ["", "i", "r", "i*r"][k];
            let piece = if sym.is_empty() {
                a.to_string()
            } else if a.is_one() {
                sym.to_string()
            } else {
                format!("{a}*{sym}")
            };
            if first {
                if v.is_negative() {
                    out.push('-');
                }
                first = false;
            } else {
                out.push_str(if v.is_negative() { "-" } else { "+" });
            }
            out.push_str(&piece);
        }
        out.push(')');
        (false, out)
    }
}

fn same_q(a: Prime, b: Prime) -> Prime {
    assert!(a == b, "mixed residue characteristics {} and {}", a.get(), b.get());
    a
}

impl Add for &Scalar {
    type Output = Scalar;
    fn add(self, o: &Scalar) -> Scalar {
        let q = same_q(self.q, o.q);
        Scalar {
            q,
            c: [
                &self.c[0] + &o.c[0],
                &self.c[1] + &o.c[1],
                &self.c[2] + &o.c[2],
                &self.c[3] + &o.c[3],
            ],
        }
    }
}

impl Sub for &Scalar {
    type Output = Scalar;
    fn sub(self, o: &Scalar) -> Scalar {
        self + &(-o)
    }
}

impl Neg for &Scalar {
    type Output = Scalar;
    fn neg(self) -> Scalar {
        Scalar {
            q: self.q,
            c: [-&self.c[0], -&self.c[1], -&self.c[2], -&self.c[3]],
        }
    }
}

impl Mul for &Scalar {
    type Output = Scalar;
    fn mul(self, o: &Scalar) -> Scalar {
        let q = same_q(self.q, o.q);
        let qr = q.rat();
        let a = &self.c;
        let b = &o.c;
        // (a0 + a1 i + a2 r + a3 ir)(b0 + ...) with i^2 = -1, r^2 = q.
        let c0 = &(&a[0] * &b[0]) - &(&a[1] * &b[1]) + (&(&a[2] * &b[2]) - &(&a[3] * &b[3])) * &qr;
        let c1 = &(&a[0] * &b[1]) + &(&a[1] * &b[0]) + (&(&a[2] * &b[3]) + &(&a[3] * &b[2])) * &qr;
        let c2 = &(&a[0] * &b[2]) + &(&a[2] * &b[0]) - (&(&a[1] * &b[3]) + &(&a[3] * &b[1]));
        let c3 = &(&a[0] * &b[3]) + &(&a[3] * &b[0]) + &(&a[1] * &b[2]) + &(&a[2] * &b[1]);
        Scalar { q, c: [c0, c1, c2, c3] }
    }
}

macro_rules! forward_binop {
    ($imp:ident, $method:ident, $t:ty) => {
        impl $imp<$t> for $t {
            type Output = $t;
            fn $method(self, rhs: $t) -> $t {
                (&self).$method(&rhs)
            }
        }
        impl<'a> $imp<&'a $t> for $t {
            type Output = $t;
            fn $method(self, rhs: &'a $t) -> $t {
                (&self).$method(rhs)
            }
        }
        impl<'a> $imp<$t> for &'a $t {
            type Output = $t;
            fn $method(self, rhs: $t) -> $t {
                self.$method(&rhs)
            }
        }
    };
}

forward_binop!(Add, add, Scalar);
forward_binop!(Sub, sub, Scalar);
forward_binop!(Mul, mul, Scalar);

impl Neg for Scalar {
    type Output = Scalar;
    fn neg(self) -> Scalar {
        -&self
    }
}

impl fmt::Display for Scalar {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let (neg, body) = self.fmt_parts();
        if neg {
            write!(f, "-{body}")
        } else {
            write!(f, "{body}")
        }
    }
}

/// Dense polynomial in `Y` with `Scalar` coefficients; no trailing zeros.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Poly {
    q: Prime,
    c: Vec<Scalar>,
}

impl Poly {
    pub fn zero(q: Prime) -> Self {
        Poly { q, c: vec![] }
    }

    pub fn constant(s: Scalar) -> Self {
        let q = s.q();
        let mut p = Poly { q, c: vec![s] };
        p.trim();
        p
    }

    pub fn one(q: Prime) -> Self {
        Poly::constant(Scalar::one(q))
    }

    pub fn monomial(c: Scalar, d: usize) -> Self {
        let q = c.q();
        if c.is_zero() {
            return Poly::zero(q);
        }
        let mut v = vec![Scalar::zero(q); d + 1];
        v[d] = c;
        Poly { q, c: v }
    }

    pub fn from_coeffs(q: Prime, c: Vec<Scalar>) -> Self {
        let mut p = Poly { q, c };
        p.trim();
        p
    }

    fn trim(&mut self) {
        while self.c.last().map_or(false, Scalar::is_zero) {
            self.c.pop();
        }
    }

    pub fn is_zero(&self) -> bool {
        self.c.is_empty()
    }

    /// Degree, or `None` for the zero polynomial.
    pub fn deg(&self) -> Option<usize> {
        self.c.len().checked_sub(1)
    }

    pub fn coeff(&self, k: usize) -> Scalar {
        self.c.get(k).cloned().unwrap_or_else(|| Scalar::zero(self.q))
    }

    pub fn leading(&self) -> Option<&Scalar> {
        self.c.last()
    }

    pub fn q(&self) -> Prime {
        self.q
    }

    pub fn add(&self, o: &Poly) -> Poly {
        let q = same_q(self.q, o.q);
        let n = self.c.len().max(o.c.len());
        let mut v = Vec::with_capacity(n);
        for k in 0..n {
            v.push(&self.coeff(k) + &o.coeff(k));
        }
        Poly::from_coeffs(q, v)
    }

    pub fn sub(&self, o: &Poly) -> Poly {
        self.add(&o.neg())
    }

    pub fn neg(&self) -> Poly {
        Poly {
            q: self.q,
            c: self.c.iter().map(|s| -s).collect(),
        }
    }

    pub fn scale(&self, s: &Scalar) -> Poly {
        if s.is_zero() {
            return Poly::zero(self.q);
        }
        Poly {
            q: self.q,
            c: self.c.iter().map(|a| a * s).collect(),
        }
    }

    /// Multiply by `Y^d`.
    pub fn shift_up(&self, d: usize) -> Poly {
        if self.is_zero() {
            return self.clone();
        }
        let mut v = vec![Scalar::zero(self.q); d];
        v.extend(self.c.iter().cloned());
        Poly { q: self.q, c: v }
    }

    pub fn mul(&self, o: &Poly) -> Result<Poly> {
        let q = same_q(self.q, o.q);
        if self.is_zero() || o.is_zero() {
            return Ok(Poly::zero(q));
        }
        let d = self.c.len() + o.c.len() - 2;
        if d > DEGREE_CAP {
            return Err(Error::DegreeCap(d));
        }
        let mut v = vec![Scalar::zero(q); d + 1];
        for (i, a) in self.c.iter().enumerate() {
            if a.is_zero() {
                continue;
            }
            for (j, b) in o.c.iter().enumerate() {
                if b.is_zero() {
                    continue;
                }
                v[i + j] = &v[i + j] + &(a * b);
            }
        }
        Ok(Poly::from_coeffs(q, v))
    }

    /// Euclidean division over the coefficient field.
    pub fn div_rem(&self, d: &Poly) -> (Poly, Poly) {
        assert!(!d.is_zero(), "polynomial division by zero");
        let q = same_q(self.q, d.q);
        let dd = d.deg().unwrap();
        let lead_inv = d.leading().unwrap().inv();
        let mut rem = self.clone();
        let mut quo = vec![Scalar::zero(q); self.c.len().saturating_sub(dd)];
        while let Some(rd) = rem.deg() {
            if rd < dd {
                break;
            }
            let f = rem.leading().unwrap() * &lead_inv;
            let k = rd - dd;
            quo[k] = &quo[k] + &f;
            // rem -= f * Y^k * d, done in place to skip the cap check.
            for (j, b) in d.c.iter().enumerate() {
                let t = &f * b;
                rem.c[k + j] = &rem.c[k + j] - &t;
            }
            rem.trim();
        }
        (Poly::from_coeffs(q, quo), rem)
    }

    pub fn gcd(&self, o: &Poly) -> Poly {
        let mut a = self.clone();
        let mut b = o.clone();
        while !b.is_zero() {
            let (_, r) = a.div_rem(&b);
            a = b;
            b = r;
        }
        a.make_monic()
    }

    pub fn make_monic(self) -> Poly {
        match self.leading() {
            None => self,
            Some(l) if l.is_one() => self,
            Some(l) => {
                let inv = l.inv();
                self.scale(&inv)
            }
        }
    }

    pub fn eval_c64(&self, y: Complex64) -> Complex64 {
        let mut acc = Complex64::new(0.0, 0.0);
        for c in self.c.iter().rev() {
            acc = acc * y + c.to_c64();
        }
        acc
    }

    fn fmt_into(&self, out: &mut String) {
        if self.is_zero() {
            out.push('0');
            return;
        }
        let mut first = true;
        for (k, c) in self.c.iter().enumerate() {
            if c.is_zero() {
                continue;
            }
            let (neg, body) = c.fmt_parts();
            if first {
                if neg {
                    out.push('-');
                }
                first = false;
            } else {
                out.push_str(if neg { " - " } else { " + " });
            }
            let ypart = match k {
                0 => String::new(),
                1 => "Y".into(),
                _ => format!("Y^{k}"),
            };
            if ypart.is_empty() {
                out.push_str(&body);
            } else if body == "1" {
                out.push_str(&ypart);
            } else {
                out.push_str(&body);
                out.push('*');
                out.push_str(&ypart);
            }
        }
    }
}

impl fmt::Display for Poly {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut s = String::new();
        self.fmt_into(&mut s);
        write!(f, "{s}")
    }
}

/// Rational function of `Y`, always held in canonical form: numerator and
/// denominator coprime, denominator monic.  Structural equality is value
/// equality.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RatFun {
    num: Poly,
    den: Poly,
}

impl RatFun {
    pub fn try_new(num: Poly, den: Poly) -> Result<RatFun> {
        if den.is_zero() {
            return Err(Error::Domain("zero denominator".into()));
        }
        same_q(num.q(), den.q());
        if num.is_zero() {
            return Ok(RatFun {
                den: Poly::one(num.q()),
                num,
            });
        }
        let g = num.gcd(&den);
        let (num, r1) = num.div_rem(&g);
        debug_assert!(r1.is_zero());
        let (den, r2) = den.div_rem(&g);
        debug_assert!(r2.is_zero());
        let lead_inv = den.leading().expect("nonzero denominator").inv();
        Ok(RatFun {
            num: num.scale(&lead_inv),
            den: den.scale(&lead_inv),
        })
    }

    pub fn new(num: Poly, den: Poly) -> RatFun {
        RatFun::try_new(num, den).expect("division by the zero polynomial")
    }

    pub fn from_poly(p: Poly) -> RatFun {
        let q = p.q();
        RatFun {
            num: p,
            den: Poly::one(q),
        }
    }

    pub fn from_scalar(s: Scalar) -> RatFun {
        RatFun::from_poly(Poly::constant(s))
    }

    pub fn from_rat(q: Prime, x: Rat) -> RatFun {
        RatFun::from_scalar(Scalar::from_rat(q, x))
    }

    pub fn zero(q: Prime) -> RatFun {
        RatFun::from_poly(Poly::zero(q))
    }

    pub fn one(q: Prime) -> RatFun {
        RatFun::from_poly(Poly::one(q))
    }

    /// `c * Y^d`, `d` of either sign.
    pub fn monomial(c: Scalar, d: i64) -> RatFun {
        let q = c.q();
        if d >= 0 {
            RatFun::from_poly(Poly::monomial(c, d as usize))
        } else {
            RatFun::new(Poly::constant(c), Poly::monomial(Scalar::one(q), (-d) as usize))
        }
    }

    pub fn y_pow(q: Prime, d: i64) -> RatFun {
        RatFun::monomial(Scalar::one(q), d)
    }

    pub fn q(&self) -> Prime {
        self.num.q()
    }

    pub fn num(&self) -> &Poly {
        &self.num
    }

    pub fn den(&self) -> &Poly {
        &self.den
    }

    pub fn is_zero(&self) -> bool {
        self.num.is_zero()
    }

    pub fn is_one(&self) -> bool {
        self.num == Poly::one(self.q()) && self.den == Poly::one(self.q())
    }

    /// The constant value when the function is constant.
    pub fn constant_value(&self) -> Option<Scalar> {
        if self.den == Poly::one(self.q()) && self.num.deg().map_or(true, |d| d == 0) {
            Some(self.num.coeff(0))
        } else {
            None
        }
    }

    /// Formal geometric series `sum_{m >= 0} (c Y^d)^m = 1 / (1 - c Y^d)`.
    /// This is the meromorphic continuation of the shell sums; the one
    /// genuinely divergent case is ratio exactly 1.
    pub fn geo_sum(c: &Scalar, d: i64) -> Result<RatFun> {
        if d == 0 && c.is_one() {
            return Err(Error::DivergentSum("geometric ratio is exactly 1".into()));
        }
        let one = RatFun::one(c.q());
        let ratio = RatFun::monomial(c.clone(), d);
        (&one - &ratio).checked_recip()
    }

    pub fn checked_recip(&self) -> Result<RatFun> {
        RatFun::try_new(self.den.clone(), self.num.clone())
    }

    pub fn recip(&self) -> RatFun {
        self.checked_recip().expect("reciprocal of zero")
    }

    pub fn checked_mul(&self, o: &RatFun) -> Result<RatFun> {
        RatFun::try_new(self.num.mul(&o.num)?, self.den.mul(&o.den)?)
    }

    pub fn checked_add(&self, o: &RatFun) -> Result<RatFun> {
        let num = self.num.mul(&o.den)?.add(&o.num.mul(&self.den)?);
        RatFun::try_new(num, self.den.mul(&o.den)?)
    }

    pub fn checked_div(&self, o: &RatFun) -> Result<RatFun> {
        self.checked_mul(&o.checked_recip()?)
    }

    /// Integer power; negative exponents invert (panics on zero base).
    pub fn pow(&self, k: i64) -> RatFun {
        let base = if k < 0 { self.recip() } else { self.clone() };
        let mut acc = RatFun::one(self.q());
        for _ in 0..k.unsigned_abs() {
            acc = &acc * &base;
        }
        acc
    }

    /// The involution `s -> 1 - s`, i.e. `Y -> q^{-1/2} Y^{-1}`, with
    /// negative powers cleared back into polynomial form.
    pub fn subst_one_minus_s(&self) -> RatFun {
        let q = self.q();
        // 1/sqrt(q) = r/q exactly.
        let rinv = Scalar::q_half_pow(q, -1);
        let lift = |p: &Poly, up_to: usize| -> Poly {
            // p(q^{-1/2} Y^{-1}) * Y^{up_to}
            let mut v = vec![Scalar::zero(q); up_to + 1];
            let mut w = Scalar::one(q);
            for k in 0..=up_to {
                let c = p.coeff(k);
                if !c.is_zero() {
                    v[up_to - k] = &c * &w;
                }
                w = &w * &rinv;
            }
            Poly::from_coeffs(q, v)
        };
        let n = self
            .num
            .deg()
            .unwrap_or(0)
            .max(self.den.deg().unwrap_or(0));
        if self.num.is_zero() {
            return RatFun::zero(q);
        }
        RatFun::new(lift(&self.num, n), lift(&self.den, n))
    }

    /// Floating evaluation with `r -> sqrt(q)`.  Refuses points within
    /// `1e-12` of a denominator root.
    pub fn eval_c64(&self, y: Complex64) -> Result<Complex64> {
        let dv = self.den.eval_c64(y);
        if dv.norm() < 1e-12 {
            return Err(Error::Domain(format!(
                "evaluation at Y = {}+{}i is within 1e-12 of a pole",
                y.re, y.im
            )));
        }
        Ok(self.num.eval_c64(y) / dv)
    }
}

impl Add for &RatFun {
    type Output = RatFun;
    fn add(self, o: &RatFun) -> RatFun {
        self.checked_add(o).expect("degree cap exceeded in +")
    }
}

impl Sub for &RatFun {
    type Output = RatFun;
    fn sub(self, o: &RatFun) -> RatFun {
        self + &(-o)
    }
}

impl Mul for &RatFun {
    type Output = RatFun;
    fn mul(self, o: &RatFun) -> RatFun {
        self.checked_mul(o).expect("degree cap exceeded in *")
    }
}

impl core::ops::Div for &RatFun {
    type Output = RatFun;
    fn div(self, o: &RatFun) -> RatFun {
        self.checked_div(o).expect("rational function division by zero")
    }
}

impl Neg for &RatFun {
    type Output = RatFun;
    fn neg(self) -> RatFun {
        RatFun {
            num: self.num.neg(),
            den: self.den.clone(),
        }
    }
}

forward_binop!(Add, add, RatFun);
forward_binop!(Sub, sub, RatFun);
forward_binop!(Mul, mul, RatFun);

impl core::ops::Div<RatFun> for RatFun {
    type Output = RatFun;
    fn div(self, rhs: RatFun) -> RatFun {
        &self / &rhs
    }
}

impl Neg for RatFun {
    type Output = RatFun;
    fn neg(self) -> RatFun {
        -&self
    }
}

impl fmt::Display for RatFun {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.den == Poly::one(self.q()) {
            write!(f, "{}", self.num)
        } else {
            write!(f, "({}) / ({})", self.num, self.den)
        }
    }
}
