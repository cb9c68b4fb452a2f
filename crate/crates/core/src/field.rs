//! Arithmetic of the p-adic base field: valuations, canonical digit
//! representatives, the additive character, and the one integral every
//! exact computation eventually reduces to (a character against a ball).
//!
//! Conventions, fixed once here and relied on everywhere else:
//! the uniformizer is the prime `p` itself, the residue field has `q = p`
//! elements, Haar measure on the field gives the integer ring volume 1,
//! and the additive character is `psi(x) = exp(2 pi i {x})` where `{x}`
//! is the p-adic fractional part.  Its conductor is exactly the integers.

use alloc::format;

use num_bigint::BigInt;
use num_complex::Complex64;
use num_integer::Integer;
use num_rational::BigRational;
use num_traits::{Float, FloatConst, One, Signed, ToPrimitive, Zero};

use crate::err::{Error, Result};

/// Exact rational scalars; every p-adic number we ever materialize lives in
/// `Z[1/p]` or is a ratio of such, so this is lossless.
pub type Rat = BigRational;

/// A rational prime, the residue characteristic.  Validated at construction
/// so downstream code can assume primality.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Prime(u64);

impl Prime {
    pub fn new(p: u64) -> Result<Prime> {
        if p < 2 {
            return Err(Error::Domain(format!("{p} is not prime")));
        }
        let mut d = 2u64;
        while d * d <= p {
            if p % d == 0 {
                return Err(Error::Domain(format!("{p} is not prime")));
            }
            d += 1;
        }
        Ok(Prime(p))
    }

    #[inline]
    pub fn get(self) -> u64 {
        self.0
    }

    pub fn bigint(self) -> BigInt {
        BigInt::from(self.0)
    }

    pub fn rat(self) -> Rat {
        Rat::from_integer(self.bigint())
    }

    /// `p^k` as an exact rational, `k` of either sign.
    pub fn pow(self, k: i64) -> Rat {
        let mag = BigInt::from(self.0).pow(k.unsigned_abs() as u32);
        if k >= 0 {
            Rat::from_integer(mag)
        } else {
            Rat::new(BigInt::one(), mag)
        }
    }

    pub fn as_f64(self) -> f64 {
        self.0 as f64
    }
}

/// p-adic valuation of a nonzero integer; `None` for zero.
pub fn int_val(n: &BigInt, p: Prime) -> Option<i64> {
    if n.is_zero() {
        return None;
    }
    let pb = p.bigint();
    let mut v = 0i64;
    let mut m = n.abs();
    loop {
        let (quo, rem) = m.div_rem(&pb);
        if rem.is_zero() {
            v += 1;
            m = quo;
        } else {
            return Some(v);
        }
    }
}

/// p-adic valuation of a rational; `None` for zero.
pub fn val(x: &Rat, p: Prime) -> Option<i64> {
    if x.is_zero() {
        return None;
    }
    let vn = int_val(x.numer(), p).expect("nonzero numerator");
    let vd = int_val(x.denom(), p).expect("nonzero denominator");
    Some(vn - vd)
}

/// Normalized absolute value `|x| = q^{-v(x)}`, with `|0| = 0`.
pub fn abs_q(x: &Rat, p: Prime) -> Rat {
    match val(x, p) {
        None => Rat::zero(),
        Some(v) => p.pow(-v),
    }
}

/// Inverse of `a` modulo `m` for `gcd(a, m) = 1`, reduced into `[0, m)`.
fn inverse_mod(a: &BigInt, m: &BigInt) -> BigInt {
    let e = a.extended_gcd(m);
    debug_assert!(e.gcd.is_one(), "inverse_mod of a non-unit");
    e.x.mod_floor(m)
}

/// Canonical digit representative of `x` modulo `p^m Z_p`: the unique
/// `y = sum_{i=v}^{m-1} d_i p^i` with digits in `[0, p)` such that
/// `x - y` lies in `p^m Z_p`.  In particular `y = 0` when `v(x) >= m`.
pub fn digit_rep(x: &Rat, p: Prime, m: i64) -> Rat {
    let v = match val(x, p) {
        None => return Rat::zero(),
        Some(v) => v,
    };
    if v >= m {
        return Rat::zero();
    }
    // x = p^v * u with u a unit; reduce u modulo p^(m-v).
    let u = x * p.pow(-v);
    let modulus = p.bigint().pow((m - v) as u32);
    let a = u.numer().mod_floor(&modulus);
    let binv = inverse_mod(u.denom(), &modulus);
    let c = (a * binv).mod_floor(&modulus);
    Rat::from_integer(c) * p.pow(v)
}

/// p-adic fractional part: the unique `y` in `[0, 1) \cap Z[1/p]` with
/// `x - y` p-integral.
pub fn frac_part(x: &Rat, p: Prime) -> Rat {
    digit_rep(x, p, 0)
}

/// The additive character as a power of `i`, when it is one: returns
/// `k` with `psi(x) = i^k` if `{x}` is in `{0, 1/4, 1/2, 3/4}`, and an
/// error otherwise.  Only at `p = 2` can a nonzero quarter turn occur.
pub fn psi_quarter_turns(x: &Rat, p: Prime) -> Result<u8> {
    let f = frac_part(x, p);
    let scaled = &f * Rat::from_integer(BigInt::from(4));
    if scaled.is_integer() {
        let k = scaled.to_integer().mod_floor(&BigInt::from(4));
        Ok(k.to_u8().expect("residue in [0,4)"))
    } else {
        Err(Error::PhaseNotRepresentable(format!(
            "psi argument with fractional part {f} (denominator not dividing 4)"
        )))
    }
}

/// Numeric additive character `psi(x) = exp(2 pi i {x})`.
pub fn psi_c64(x: &Rat, p: Prime) -> Complex64 {
    let t = frac_part(x, p).to_f64().expect("fractional part fits in f64");
    let ang = 2.0 * f64::PI() * t;
    Complex64::new(Float::cos(ang), Float::sin(ang))
}

/// Exact integral of the additive character over a ball:
/// `int_{p^m Z_p} psi(c x) dx`, which is `q^{-m}` when `v(c) + m >= 0`
/// (the character is trivial on the ball) and `0` otherwise (it restricts
/// to a nontrivial character of a compact group).
pub fn psi_ball_integral(c: &Rat, p: Prime, m: i64) -> Rat {
    match val(c, p) {
        None => p.pow(-m),
        Some(v) if v + m >= 0 => p.pow(-m),
        Some(_) => Rat::zero(),
    }
}

/// Exact integral of the additive character over a valuation shell:
/// `int_{v(x) = j} psi(c x) dx`, as a difference of two ball integrals.
pub fn psi_shell_integral(c: &Rat, p: Prime, j: i64) -> Rat {
    psi_ball_integral(c, p, j) - psi_ball_integral(c, p, j + 1)
}
