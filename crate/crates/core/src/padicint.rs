//! Closed forms for one-dimensional p-adic integrals and the cell
//! decompositions that reduce higher-rank integrals to them.
//!
//! The recurring shape: an integrand over `O` (or a ball, or a shell)
//! that depends on the coordinate only through the valuation of one or
//! two affine expressions.  Such integrals are finite sums plus a
//! geometric tail, and both are evaluated here exactly.
//!
//! Measure conventions.  `dx` is the self-dual additive measure with
//! `vol(O) = 1`.  Integrals over the unit group or a compact group `K`
//! carry explicit volume constants from [`unit_cell_vol`] and
//! [`kappa_cell_vol`]; the latter is normalized so that splitting a
//! group integral through lower-triangular times maximal-compact
//! coordinates needs no further correction factor:
//!
//! ```text
//! int_G F dg = int_B int_K F(b k) dk db,    vol_dk(K_2) = 1 + 1/q.
//! ```

use alloc::vec;
use alloc::vec::Vec;

use num_traits::{One, Zero};

use crate::err::{Error, Result};
use crate::field::{psi_ball_integral, psi_quarter_turns, psi_shell_integral, val, Prime, Rat};
use crate::matrix::Mat;
use crate::ratfun::{RatFun, Scalar};
use crate::schwartz::{Lattice, SchwartzSpan};

/// Smallest valuation among the entries, `None` for the zero matrix.
pub fn min_entry_val(m: &Mat, p: Prime) -> Option<i64> {
    m.entries().iter().filter_map(|x| val(x, p)).min()
}

/// The ball `center + p^depth O` inside the field.
#[derive(Clone, Debug, PartialEq)]
pub struct BallCoset {
    pub center: Rat,
    pub depth: i64,
}

impl BallCoset {
    pub fn new(center: Rat, depth: i64) -> BallCoset {
        BallCoset { center, depth }
    }

    /// The unit ball `O`.
    pub fn ring() -> BallCoset {
        BallCoset::new(Rat::zero(), 0)
    }

    pub fn vol(&self, p: Prime) -> Rat {
        p.pow(-self.depth)
    }

    pub fn contains(&self, x: &Rat, p: Prime) -> bool {
        match val(&(x - &self.center), p) {
            None => true,
            Some(v) => v >= self.depth,
        }
    }

    /// Two balls are nested or disjoint; the intersection, if nonempty,
    /// is the deeper one.
    pub fn intersect(&self, other: &BallCoset, p: Prime) -> Option<BallCoset> {
        let shallow = self.depth.min(other.depth);
        let near = match val(&(&self.center - &other.center), p) {
            None => true,
            Some(v) => v >= shallow,
        };
        if !near {
            return None;
        }
        Some(if self.depth >= other.depth {
            self.clone()
        } else {
            other.clone()
        })
    }
}

/// Additive volume of `{v(x) = m} ∩ (c + p^b O)` given only `vc = v(c)`
/// (`None` when `c = 0`).
pub fn vol_shell_coset(p: Prime, m: i64, vc: Option<i64>, b: i64) -> Rat {
    match vc {
        // Coset is the centered ball p^b O.
        None => {
            if m >= b {
                shell_vol(p, m)
            } else {
                Rat::zero()
            }
        }
        Some(v) if v >= b => {
            if m >= b {
                shell_vol(p, m)
            } else {
                Rat::zero()
            }
        }
        // Off-center: the whole coset sits in the shell v = vc.
        Some(v) => {
            if m == v {
                p.pow(-b)
            } else {
                Rat::zero()
            }
        }
    }
}

fn shell_vol(p: Prime, m: i64) -> Rat {
    p.pow(-m) - p.pow(-m - 1)
}

/// A function of a valuation: explicit values on `lo..lo+vals.len()`,
/// a constant from there on, and a designated value at `v = +infinity`
/// (argument exactly zero).  Queries below `lo` are a caller bug.
#[derive(Clone, Debug)]
pub struct ValSeq {
    lo: i64,
    vals: Vec<RatFun>,
    tail: RatFun,
    at_inf: RatFun,
}

impl ValSeq {
    pub fn new(lo: i64, vals: Vec<RatFun>, tail: RatFun, at_inf: RatFun) -> ValSeq {
        ValSeq {
            lo,
            vals,
            tail,
            at_inf,
        }
    }

    pub fn constant(c: RatFun) -> ValSeq {
        ValSeq::new(0, vec![], c.clone(), c)
    }

    /// Materialize `f` on `lo..hi`; the caller asserts `f` is constant
    /// from `hi` on (the tail is `f(hi)`).
    pub fn tabulate(
        lo: i64,
        hi: i64,
        mut f: impl FnMut(i64) -> Result<RatFun>,
        at_inf: RatFun,
    ) -> Result<ValSeq> {
        debug_assert!(hi >= lo);
        let mut vals = Vec::new();
        for v in lo..hi {
            vals.push(f(v)?);
        }
        let tail = f(hi)?;
        Ok(ValSeq::new(lo, vals, tail, at_inf))
    }

    /// First index at which the constant tail is authoritative.
    pub fn threshold(&self) -> i64 {
        self.lo + self.vals.len() as i64
    }

    pub fn at(&self, v: Option<i64>) -> &RatFun {
        match v {
            None => &self.at_inf,
            Some(v) => {
                assert!(v >= self.lo, "valuation below the tabulated window");
                let idx = (v - self.lo) as usize;
                self.vals.get(idx).unwrap_or(&self.tail)
            }
        }
    }
}

/// `int_dom V(v(c0 + c1 w)) dw` over a ball coset, additive measure.
pub fn coset_locus_integral(
    p: Prime,
    dom: &BallCoset,
    c0: &Rat,
    c1: &Rat,
    vseq: &ValSeq,
) -> RatFun {
    let vol = RatFun::from_rat(p, dom.vol(p));
    if c1.is_zero() {
        return vseq.at(val(c0, p)) * &vol;
    }
    let base = c0 + &(c1 * &dom.center);
    let s0 = val(c1, p).expect("nonzero slope") + dom.depth;
    if let Some(vb) = val(&base, p) {
        if vb < s0 {
            // The vanishing locus lies outside the domain ball.
            return vseq.at(Some(vb)) * &vol;
        }
    }
    // Locus inside: on the shell v(tau - tau0) = r the value is V(s0+r),
    // and those shells exhaust the ball up to a point of measure zero.
    let r_hi = (vseq.threshold() - s0).max(0);
    let mut acc = RatFun::zero(p);
    for r in 0..r_hi {
        let w = RatFun::from_rat(p, shell_vol(p, r));
        acc = &acc + &(&w * vseq.at(Some(s0 + r)));
    }
    // sum_{r >= r_hi} (1 - 1/q) q^{-r} = q^{-r_hi}
    let tail_mass = RatFun::from_rat(p, p.pow(-r_hi));
    acc = &acc + &(&tail_mass * vseq.at(Some(s0 + r_hi)));
    &acc * &vol
}

/// `int_O P(v(t - a)) Q(v(t - b)) dt` with two loci `a, b` in `O` at
/// distance `delta = v(a - b) >= 0`.  `P`, `Q` are radial profiles
/// (indexed from 0).
pub fn ball_two_locus_integral(p: Prime, pv: &ValSeq, qv: &ValSeq, delta: i64) -> RatFun {
    assert!(delta >= 0, "loci must both lie in the unit ball");
    let r_hi = pv.threshold().max(qv.threshold()).max(delta + 1);
    let mut acc = RatFun::zero(p);
    // Shells around a that keep b at distance delta.
    for r in 0..delta {
        let w = RatFun::from_rat(p, shell_vol(p, r));
        acc = &acc + &(&w * &(pv.at(Some(r)) * qv.at(Some(r))));
    }
    // The ball of radius delta around both loci: units of the rescaled
    // coordinate away from both residues, then each locus refined.
    let both = pv.at(Some(delta)) * qv.at(Some(delta));
    let w_mid = p.pow(-delta) - &(p.pow(-delta - 1) * Rat::from_integer(2.into()));
    acc = &acc + &(&RatFun::from_rat(p, w_mid) * &both);
    for r in (delta + 1)..r_hi {
        let w = RatFun::from_rat(p, shell_vol(p, r));
        let mixed = &(pv.at(Some(r)) * qv.at(Some(delta))) + &(pv.at(Some(delta)) * qv.at(Some(r)));
        acc = &acc + &(&w * &mixed);
    }
    let tail_mass = RatFun::from_rat(p, p.pow(-r_hi));
    let mixed_tail =
        &(pv.at(Some(r_hi)) * qv.at(Some(delta))) + &(pv.at(Some(delta)) * qv.at(Some(r_hi)));
    &acc + &(&tail_mass * &mixed_tail)
}

/// `int_O P(v(t - a)) dt` for a single locus `a` in `O`.
pub fn ball_locus_integral(p: Prime, pv: &ValSeq) -> RatFun {
    coset_locus_integral(p, &BallCoset::ring(), &Rat::zero(), &Rat::one(), pv)
}

fn psi_scalar(p: Prime, x: &Rat) -> Result<Scalar> {
    Ok(Scalar::quarter_turn(p, psi_quarter_turns(x, p)?))
}

/// `int_ball psi(gamma x) dx`.
pub fn psi_ball_coset_integral(p: Prime, gamma: &Rat, ball: &BallCoset) -> Result<Scalar> {
    let vol = psi_ball_integral(gamma, p, ball.depth);
    if vol.is_zero() {
        return Ok(Scalar::zero(p));
    }
    let phase = psi_scalar(p, &(gamma * &ball.center))?;
    Ok(&phase * &Scalar::from_rat(p, vol))
}

/// `int_{v(x) = m, x in ball} psi(gamma x) dx`.
pub fn psi_shell_ball_integral(p: Prime, gamma: &Rat, m: i64, ball: &BallCoset) -> Result<Scalar> {
    let centered = match val(&ball.center, p) {
        None => true,
        Some(v) => v >= ball.depth,
    };
    if centered {
        if m >= ball.depth {
            Ok(Scalar::from_rat(p, psi_shell_integral(gamma, p, m)))
        } else {
            Ok(Scalar::zero(p))
        }
    } else if m == val(&ball.center, p).expect("off-center ball") {
        psi_ball_coset_integral(p, gamma, ball)
    } else {
        Ok(Scalar::zero(p))
    }
}

/// Triangular basis matrix of a row-shape support lattice.
pub(crate) fn row_basis_of(lat: &Lattice, p: Prime) -> Result<Mat> {
    match lat {
        Lattice::RowBasis(b) => Ok(b.clone()),
        Lattice::Entrywise(ms) => Ok(Mat::diag(ms.iter().map(|&m| p.pow(m)).collect())),
        Lattice::ColBasis(b) if b.rows() == 1 => Ok(b.clone()),
        Lattice::ColBasis(_) => Err(Error::Dimension(
            "column lattice has no row basis".into(),
        )),
    }
}

/// `int_{v(h) = m} phi(h y) dh` for a row span `phi` and a fixed nonzero
/// row `y`, additive measure in `h`.
pub fn span_line_shell_integral(
    p: Prime,
    span: &SchwartzSpan,
    y: &Mat,
    m: i64,
) -> Result<Scalar> {
    assert_eq!(y.rows(), 1, "line direction must be a row");
    assert!(
        y.entries().iter().any(|e| !e.is_zero()),
        "line direction must be nonzero"
    );
    let mut acc = Scalar::zero(p);
    for term in span.terms() {
        let basis = row_basis_of(&term.lat, p)?;
        let binv = basis.inverse()?;
        let rho = y * &binv;
        let dlt = &term.d * &binv;
        // h y lies in d + O B  iff  h rho_i - dlt_i in O for every i.
        let mut dom: Option<BallCoset> = None;
        let mut dead = false;
        for i in 0..rho.cols() {
            let ri = rho.at(0, i);
            let di = dlt.at(0, i);
            if ri.is_zero() {
                if matches!(val(di, p), Some(v) if v < 0) {
                    dead = true;
                    break;
                }
                continue;
            }
            let cond = BallCoset::new(di / ri, -val(ri, p).expect("nonzero"));
            let next = match &dom {
                None => Some(cond),
                Some(prev) => prev.intersect(&cond, p),
            };
            match next {
                Some(b) => dom = Some(b),
                None => {
                    dead = true;
                    break;
                }
            }
        }
        if dead {
            continue;
        }
        let dom = dom.expect("nonzero row gives at least one condition");
        let mut gamma = Rat::zero();
        for i in 0..y.cols() {
            gamma = &gamma + &(term.c.at(0, i) * y.at(0, i));
        }
        let part = psi_shell_ball_integral(p, &gamma, m, &dom)?;
        acc = &acc + &(&term.coeff * &part);
    }
    Ok(acc)
}

/// Average over units `u` of `G(min(v(pi^M u + x), cap))` where only
/// `j = v(x)` matters.  The measure is the normalized additive measure
/// on the unit group.
pub fn cancel_avg(
    p: Prime,
    m_big: i64,
    j: i64,
    cap: i64,
    mut g: impl FnMut(i64) -> Result<RatFun>,
) -> Result<RatFun> {
    if j != m_big {
        return g(m_big.min(j).min(cap));
    }
    if cap <= m_big {
        return g(cap);
    }
    // v(pi^M u + x) = M + e with e distributed like the distance from a
    // random unit to a fixed residue, truncated at cap.
    let norm = Rat::one() - p.pow(-1);
    let e_hi = cap - m_big;
    let w0 = Rat::one() - &(p.pow(-1) * Rat::from_integer(2.into()));
    let mut acc = &g(m_big)? * &RatFun::from_rat(p, w0);
    for e in 1..e_hi {
        let w = shell_vol(p, e);
        acc = &acc + &(&g(m_big + e)? * &RatFun::from_rat(p, w));
    }
    acc = &acc + &(&g(cap)? * &RatFun::from_rat(p, p.pow(-e_hi)));
    Ok(&acc * &RatFun::from_rat(p, norm.recip()))
}

/// `int_{x in ball} psi(gamma x) V(v(x + w)) dx`, exact.
///
/// When the shifted center keeps a valuation below the ball depth, the
/// locus is constant across the domain and only the phase integrates.
/// Otherwise `x + w` sweeps the centered ball `p^depth O` and the
/// integral stratifies into shells, with the shift unwound into a
/// constant phase in front.
pub fn psi_ball_locus_integral(
    p: Prime,
    gamma: &Rat,
    ball: &BallCoset,
    shift: &Rat,
    vseq: &ValSeq,
) -> Result<RatFun> {
    let cw = &ball.center + shift;
    if let Some(v) = val(&cw, p) {
        if v < ball.depth {
            let phase = psi_ball_coset_integral(p, gamma, ball)?;
            return Ok(vseq.at(Some(v)) * &RatFun::from_scalar(phase));
        }
    }
    let mut r0 = ball.depth.max(vseq.threshold());
    if let Some(vg) = val(gamma, p) {
        // Shells below -v(gamma) - 1 carry no mass; above, plain volumes.
        r0 = r0.max(-vg);
    }
    let mut acc = RatFun::zero(p);
    for r in ball.depth..r0 {
        let mass = psi_shell_integral(gamma, p, r);
        if !mass.is_zero() {
            acc = &acc + &(vseq.at(Some(r)) * &RatFun::from_rat(p, mass));
        }
    }
    let tail = psi_ball_integral(gamma, p, r0);
    if !tail.is_zero() {
        acc = &acc + &(vseq.at(Some(r0)) * &RatFun::from_rat(p, tail));
    }
    if !shift.is_zero() && !gamma.is_zero() {
        let pre = psi_scalar(p, &-(gamma * shift))?;
        acc = &acc * &RatFun::from_scalar(pre);
    }
    Ok(acc)
}

const ENUM_CAP: u64 = 2_000_000;

fn pow_u64(q: u64, e: u32) -> Result<u64> {
    q.checked_pow(e)
        .filter(|&n| n <= ENUM_CAP)
        .ok_or_else(|| Error::Capability("cell enumeration too large".into()))
}

/// Representatives of the unit group modulo `1 + p^depth O` as ring
/// elements; `depth = 0` stands for the whole unit group at once.
pub fn unit_reps(p: Prime, depth: i64) -> Result<Vec<Rat>> {
    if depth <= 0 {
        return Ok(vec![Rat::one()]);
    }
    let q = p.get();
    let n = pow_u64(q, depth as u32)?;
    Ok((1..n)
        .filter(|k| k % q != 0)
        .map(|k| Rat::from_integer(k.into()))
        .collect())
}

/// Additive volume of one cell from [`unit_reps`].
pub fn unit_cell_vol(p: Prime, depth: i64) -> Rat {
    if depth <= 0 {
        Rat::one() - p.pow(-1)
    } else {
        p.pow(-depth)
    }
}

/// Additive volume of the integral maximal compact of rank `k`.
pub fn vol_k_additive(p: Prime, k: usize) -> Rat {
    let mut v = Rat::one();
    for i in 1..=k as i64 {
        v = v * (Rat::one() - p.pow(-i));
    }
    v
}

/// Integer representatives of the rank-`k` maximal compact modulo the
/// principal congruence subgroup of the given depth; `depth = 0` is the
/// single-cell decomposition.
pub fn kappa_reps(p: Prime, k: usize, depth: i64) -> Result<Vec<Mat>> {
    if depth <= 0 {
        return Ok(vec![Mat::identity(k)]);
    }
    let q = p.get();
    let n = pow_u64(q, depth as u32)?;
    let cells = pow_u64(n, (k * k) as u32)?;
    let mut out = Vec::new();
    for idx in 0..cells {
        let mut rem = idx;
        let mut rows = Vec::with_capacity(k);
        for _ in 0..k {
            let mut row = Vec::with_capacity(k);
            for _ in 0..k {
                row.push(Rat::from_integer((rem % n).into()));
                rem /= n;
            }
            rows.push(row);
        }
        let m = Mat::from_rows(rows);
        let unit_det = match val(&m.det(), p) {
            None => false,
            Some(v) => v == 0,
        };
        if unit_det {
            out.push(m);
        }
    }
    Ok(out)
}

/// Volume of one cell from [`kappa_reps`] in the compact-factor measure
/// normalized for lower-triangular splitting (see the module docs).
pub fn kappa_cell_vol(p: Prime, k: usize, depth: i64) -> Rat {
    let corr = (Rat::one() - p.pow(-1)).recip();
    let mut corr_k = Rat::one();
    for _ in 0..k {
        corr_k = corr_k * &corr;
    }
    if depth <= 0 {
        vol_k_additive(p, k) * corr_k
    } else {
        p.pow(-((k * k) as i64) * depth) * corr_k
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schwartz::SchwartzTerm;

    fn q3() -> Prime {
        Prime::new(3).unwrap()
    }

    fn q2() -> Prime {
        Prime::new(2).unwrap()
    }

    fn rat(n: i64, d: i64) -> Rat {
        Rat::new(n.into(), d.into())
    }

    fn rf(p: Prime, n: i64) -> RatFun {
        RatFun::from_rat(p, Rat::from_integer(n.into()))
    }

    // Representatives of p^{-pad} O modulo p^depth O, each standing for
    // a cell rep + p^depth O of volume p^{-depth}.
    fn grid(p: Prime, pad: i64, depth: i64) -> Vec<Rat> {
        let n = p.get().pow((depth + pad) as u32);
        (0..n)
            .map(|k| Rat::from_integer(k.into()) * p.pow(-pad))
            .collect()
    }

    #[test]
    fn shell_coset_volume_matches_enumeration() {
        let p = q3();
        let cells = grid(p, 2, 3);
        let cell_vol = p.pow(-3);
        for c in [Rat::zero(), rat(1, 3), rat(2, 1), rat(1, 9)] {
            for b in -1..=2 {
                for m in -2..=2 {
                    let mut brute = Rat::zero();
                    for x in &cells {
                        if val(x, p) == Some(m) && BallCoset::new(c.clone(), b).contains(x, p) {
                            brute = brute + &cell_vol;
                        }
                    }
                    let exact = vol_shell_coset(p, m, val(&c, p), b);
                    assert_eq!(exact, brute, "c={c} b={b} m={m}");
                }
            }
        }
    }

    #[test]
    fn ball_intersection_cases() {
        let p = q3();
        let a = BallCoset::new(rat(1, 1), 1);
        let b = BallCoset::new(rat(4, 1), 2);
        // 4 = 1 + 3: centers differ by valuation 1 >= min depth.
        let c = a.intersect(&b, p).unwrap();
        assert_eq!(c.depth, 2);
        assert_eq!(c.center, rat(4, 1));
        let far = BallCoset::new(rat(2, 1), 2);
        assert!(a.intersect(&far, p).is_none());
        assert!(BallCoset::ring()
            .intersect(&far, p)
            .is_some());
    }

    fn mono(p: Prime, k: i64) -> RatFun {
        RatFun::monomial(Scalar::one(p), k)
    }

    // Distinct monomial values so any misindexing is visible; `off`
    // separates two profiles used side by side.
    fn test_seq(p: Prime, lo: i64, off: i64) -> ValSeq {
        let vals = (0..4).map(|i| mono(p, off + lo + i)).collect();
        ValSeq::new(lo, vals, mono(p, off + 40), mono(p, off + 77))
    }

    #[test]
    fn locus_integral_matches_enumeration() {
        for p in [q2(), q3()] {
            let cases = [
                (BallCoset::ring(), Rat::zero(), Rat::one()),
                (BallCoset::ring(), rat(1, 1), p.pow(1)),
                (BallCoset::new(rat(1, 1), 1), rat(-1, 1), Rat::one()),
                (BallCoset::new(rat(1, 1), 1), rat(3, 1), Rat::zero()),
                (BallCoset::new(Rat::zero(), -1), rat(1, 1), p.pow(-1)),
            ];
            for (dom, c0, c1) in cases {
                let vseq =
                    test_seq(p, val(&c1, p).map_or(-2, |v| v.min(0)) + dom.depth.min(0) - 2, 0);
                let exact = coset_locus_integral(p, &dom, &c0, &c1, &vseq);
                // Deep enough that v(c0 + c1 w) is decided per cell or
                // past the tail threshold.
                let depth = 6;
                let pad = (-dom.depth).max(0) + 1;
                let cell_vol = RatFun::from_rat(p, p.pow(-depth));
                let mut brute = RatFun::zero(p);
                for w in grid(p, pad, depth) {
                    if !dom.contains(&w, p) {
                        continue;
                    }
                    let t = &c0 + &(&c1 * &w);
                    let hi = vseq.threshold();
                    let v = val(&t, p).map_or(hi, |v| v.min(hi));
                    brute = &brute + &(vseq.at(Some(v)) * &cell_vol);
                }
                assert_eq!(exact, brute, "dom={dom:?} c0={c0} c1={c1}");
            }
        }
    }

    #[test]
    fn two_locus_integral_matches_enumeration() {
        for p in [q2(), q3()] {
            for delta in 0..3i64 {
                let a = Rat::zero();
                let b = p.pow(delta);
                let pv = test_seq(p, 0, 0);
                // Distinct values so a P/Q swap cannot cancel out.
                let qv = test_seq(p, 0, 10);
                let exact = ball_two_locus_integral(p, &pv, &qv, delta);
                let depth = 7;
                let cell_vol = RatFun::from_rat(p, p.pow(-depth));
                let mut brute = RatFun::zero(p);
                for t in grid(p, 0, depth) {
                    let ra = val(&(&t - &a), p).map(|v| v.min(pv.threshold()));
                    let rb = val(&(&t - &b), p).map(|v| v.min(qv.threshold()));
                    // Representatives never hit a locus exactly except t = a:
                    // clamp infinite valuation to the tail region.
                    let ra = ra.or(Some(pv.threshold()));
                    let rb = rb.or(Some(qv.threshold()));
                    brute = &brute + &(&(pv.at(ra) * qv.at(rb)) * &cell_vol);
                }
                assert_eq!(exact, brute, "p={} delta={delta}", p.get());
            }
        }
    }

    #[test]
    fn locus_integral_total_mass() {
        let p = q3();
        let one = ValSeq::constant(RatFun::one(p));
        assert_eq!(ball_locus_integral(p, &one), RatFun::one(p));
        assert_eq!(
            ball_two_locus_integral(p, &one, &one, 2),
            RatFun::one(p)
        );
    }

    #[test]
    fn phase_shell_ball_matches_enumeration() {
        let p = q2();
        // Arguments stay within v >= -2, so every phase is a quarter turn
        // and the pointwise oracle is exact.
        let gamma = rat(1, 2);
        for ball in [
            BallCoset::ring(),
            BallCoset::new(rat(1, 2), 1),
            BallCoset::new(rat(1, 1), 2),
            BallCoset::new(Rat::zero(), 1),
        ] {
            for m in -1..=3 {
                let exact = psi_shell_ball_integral(p, &gamma, m, &ball).unwrap();
                let depth = 4;
                let pad = 1;
                let cell_vol = Scalar::from_rat(p, p.pow(-depth));
                let mut brute = Scalar::zero(p);
                for x in grid(p, pad, depth) {
                    if val(&x, p) == Some(m) && ball.contains(&x, p) {
                        let ph =
                            Scalar::quarter_turn(p, psi_quarter_turns(&(&gamma * &x), p).unwrap());
                        brute = &brute + &(&ph * &cell_vol);
                    }
                }
                assert_eq!(exact, brute, "ball={ball:?} m={m}");
            }
        }
    }

    #[test]
    fn cancellation_average_matches_enumeration() {
        for p in [q2(), q3()] {
            for (m_big, j, cap) in [
                (0i64, 0i64, 3i64),
                (0, 0, 0),
                (0, 0, -1),
                (1, 1, 4),
                (-1, -1, 2),
                (0, 2, 5),
                (2, 0, 5),
            ] {
                let x = p.pow(j);
                let exact =
                    cancel_avg(p, m_big, j, cap, |d| Ok(mono(p, d - m_big.min(j).min(cap))))
                        .unwrap();
                let depth = (cap - m_big).max(1) + 1;
                let reps = unit_reps(p, depth).unwrap();
                let mut brute = RatFun::zero(p);
                for u in &reps {
                    let t = &(p.pow(m_big) * u) + &x;
                    let va = val(&t, p).map_or(cap, |v| v.min(cap));
                    brute = &brute + &mono(p, va - m_big.min(j).min(cap));
                }
                let n = Rat::from_integer((reps.len() as i64).into());
                brute = &brute * &RatFun::from_rat(p, n.recip());
                assert_eq!(exact, brute, "p={} M={m_big} j={j} cap={cap}", p.get());
            }
        }
    }

    #[test]
    fn line_shell_integral_matches_enumeration() {
        let p = q2();
        // A span with an off-center support and a phase.
        let shifted = SchwartzTerm::new(
            Scalar::one(p),
            Mat::from_rows(vec![vec![rat(1, 2), Rat::zero()]]),
            Mat::from_rows(vec![vec![rat(1, 1), Rat::zero()]]),
            Lattice::RowBasis(Mat::from_int_rows(&[&[2, 1], &[0, 4]])),
        );
        let span = SchwartzSpan::single(shifted);
        // One direction meets the support, one gives incompatible
        // conditions (every term empty).
        for y in [
            Mat::from_rows(vec![vec![rat(1, 1), rat(1, 1)]]),
            Mat::from_rows(vec![vec![rat(1, 1), rat(3, 2)]]),
        ] {
            let mut seen_nonzero = false;
            for m in -3..=3 {
                let exact = span_line_shell_integral(p, &span, &y, m).unwrap();
                seen_nonzero = seen_nonzero || !exact.is_zero();
                let depth = 6;
                let pad = 3;
                let cell_vol = Scalar::from_rat(p, p.pow(-depth));
                let mut brute = Scalar::zero(p);
                for h in grid(p, pad, depth) {
                    if val(&h, p) == Some(m) {
                        let arg = y.scale(&h);
                        brute = &brute + &(&span.eval_at(&arg, p).unwrap() * &cell_vol);
                    }
                }
                assert_eq!(exact, brute, "y={y:?} m={m}");
            }
            assert_eq!(seen_nonzero, y.at(0, 1) == &rat(1, 1));
        }
    }

    #[test]
    fn unit_cells_cover_the_unit_group() {
        for p in [q2(), q3()] {
            for depth in 0..3i64 {
                let reps = unit_reps(p, depth).unwrap();
                let total = unit_cell_vol(p, depth) * Rat::from_integer((reps.len() as i64).into());
                assert_eq!(total, Rat::one() - p.pow(-1));
            }
        }
    }

    #[test]
    fn compact_cells_count_and_volume() {
        assert_eq!(kappa_reps(q2(), 2, 1).unwrap().len(), 6);
        let p5 = Prime::new(5).unwrap();
        assert_eq!(kappa_reps(p5, 2, 1).unwrap().len(), 480);
        for p in [q2(), q3(), p5] {
            for depth in 0..2i64 {
                let reps = kappa_reps(p, 2, depth).unwrap();
                let total =
                    kappa_cell_vol(p, 2, depth) * Rat::from_integer((reps.len() as i64).into());
                // vol(K_2) in the split-normalized measure is 1 + 1/q.
                assert_eq!(total, Rat::one() + p.pow(-1));
            }
        }
    }

    #[test]
    fn split_measure_agrees_with_additive_on_k() {
        // (1 - 1/q)^k vol_dk(K) = vol_additive(K): the triangular factor
        // of an integral element has unit diagonal shells.
        for p in [q2(), q3()] {
            let lhs = (Rat::one() - p.pow(-1)) * (Rat::one() - p.pow(-1)) * kappa_cell_vol(p, 2, 0);
            assert_eq!(lhs, vol_k_additive(p, 2));
        }
    }

    #[test]
    fn ball_locus_plain_shells() {
        // gamma = 0, shift = 0: int_O V(v(x)) dx as a bare shell sum.
        let p = q3();
        let v = ValSeq::tabulate(
            0,
            3,
            |r| Ok(rf(p, r + 1)),
            RatFun::zero(p),
        )
        .unwrap();
        let got = psi_ball_locus_integral(p, &Rat::zero(), &BallCoset::ring(), &Rat::zero(), &v)
            .unwrap();
        let mut want = RatFun::zero(p);
        for r in 0..3 {
            let mass = shell_vol(p, r);
            want = &want + &(&rf(p, r + 1) * &RatFun::from_rat(p, mass));
        }
        // Tail r >= 3 carries V = 4 with total mass q^{-3}.
        want = &want + &(&rf(p, 4) * &RatFun::from_rat(p, p.pow(-3)));
        assert_eq!(got, want);
    }

    #[test]
    fn ball_locus_off_center_is_constant() {
        // Ball 1 + p^2 O with shift 2 at q = 3: v(x + 2) = 1 throughout.
        let p = q3();
        let v = ValSeq::tabulate(0, 4, |r| Ok(rf(p, 10 + r)), RatFun::zero(p))
            .unwrap();
        let ball = BallCoset::new(Rat::one(), 2);
        let got =
            psi_ball_locus_integral(p, &Rat::zero(), &ball, &rat(2, 1), &v).unwrap();
        let want = &rf(p, 11) * &RatFun::from_rat(p, p.pow(-2));
        assert_eq!(got, want);
    }

    #[test]
    fn ball_locus_shift_phase_cancels_exactly() {
        // q = 2, gamma = 1/2, domain O, shift 1: the locus v(x + 1) = 0
        // picks out 2O, where psi(x/2) integrates to 1/2.
        let p = q2();
        let one_at_zero = ValSeq::new(
            0,
            vec![RatFun::one(p)],
            RatFun::zero(p),
            RatFun::zero(p),
        );
        let got = psi_ball_locus_integral(
            p,
            &rat(1, 2),
            &BallCoset::ring(),
            &Rat::one(),
            &one_at_zero,
        )
        .unwrap();
        assert_eq!(got, RatFun::from_rat(p, rat(1, 2)));
    }

    #[test]
    fn ball_locus_matches_enumeration() {
        // Brute force on a digit grid, gamma = 0 so every value is rational.
        let p = q2();
        // at_inf matches the tail so the measure-zero point x = -shift
        // grades like its cell under the brute grid.
        let v = ValSeq::tabulate(
            -2,
            3,
            |r| Ok(rf(p, 2 * r + 7)),
            rf(p, 13),
        )
        .unwrap();
        for (center, depth, shift) in [
            (Rat::zero(), 0i64, Rat::zero()),
            (rat(1, 2), -1, Rat::one()),
            (rat(1, 1), 1, rat(-1, 1)),
            (rat(3, 4), -2, rat(1, 4)),
        ] {
            let ball = BallCoset::new(center, depth);
            let got = psi_ball_locus_integral(p, &Rat::zero(), &ball, &shift, &v).unwrap();
            // Cells of depth 5 resolve every locus value below the tail.
            let cells = grid(p, 2, 5);
            let cell_vol = RatFun::from_rat(p, p.pow(-5));
            let mut brute = RatFun::zero(p);
            for x in &cells {
                if ball.contains(x, p) {
                    let vv = val(&(x + &shift), p);
                    brute = &brute + &(v.at(vv) * &cell_vol);
                }
            }
            assert_eq!(got, brute);
        }
    }
}
