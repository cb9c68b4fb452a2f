//! Exact evaluation of the local pairings between principal series
//! sections: the open-orbit pairings at small rank, their Whittaker
//! counterparts, the zeta integral on the line, and the convergence
//! strip bookkeeping both share.
//!
//! Every engine here stratifies its integral over valuation shells,
//! sums each shell in closed form, and stitches the shells together
//! with [`shell_sum`], so values are rational functions of
//! `Y = q^{-s/2}` over `Q(i)[sqrt q]`.  Where an exact evaluation is
//! out of reach (equal rank above two, archimedean data, sections that
//! do not flatten) the engines return a `Capability` error rather than
//! an approximation; the numeric companion path picks those up.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::rc::Rc;
use alloc::vec;
use alloc::vec::Vec;
use core::cell::{Cell, RefCell};

use num_traits::{One, Zero};

use crate::chars::{CharTuple, MultChar, TwistedChar};
use crate::err::{Error, Result};
use crate::field::{val, Prime, Rat};
use crate::matrix::Mat;
use crate::padicint::{
    cancel_avg, kappa_cell_vol, kappa_reps, min_entry_val, psi_ball_locus_integral,
    psi_shell_ball_integral, span_line_shell_integral, unit_cell_vol, unit_reps, BallCoset,
    ValSeq,
};
use crate::ratfun::{RatFun, Scalar};
use crate::schwartz::{Lattice, RowTensor, SchwartzSpan};
use crate::section::{SectionEvaluator, SectionExpr, SectionKind, TwistedTuple};
use crate::series::{shell_sum, SumOptions, SumResult};

/// An open interval of `Re(s)` with extended-real endpoints.
///
/// `lower == -inf` or `upper == +inf` encode one-sided strips; the
/// interval is empty when the endpoints cross or meet.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StripInterval {
    pub lower: f64,
    pub upper: f64,
}

impl StripInterval {
    pub fn is_empty(&self) -> bool {
        !(self.lower < self.upper)
    }

    pub fn contains(&self, sigma: f64) -> bool {
        self.lower < sigma && sigma < self.upper
    }

    /// A point comfortably inside the strip, if there is one.
    pub fn interior_point(&self) -> Option<f64> {
        if self.is_empty() {
            return None;
        }
        match (self.lower.is_finite(), self.upper.is_finite()) {
            (true, true) => Some(0.5 * (self.lower + self.upper)),
            (true, false) => Some(self.lower + 1.0),
            (false, true) => Some(self.upper - 1.0),
            (false, false) => Some(0.0),
        }
    }
}

/// The strip of `Re(s)` on which all shell sums of the open-orbit
/// pairing for the two tuples converge absolutely.
///
/// Writing `e_i`, `e'_j` for the exponents of the tuple entries, the
/// pair `(i, j)` (1-based) contributes the ceiling `Re(s) < 1 - e_i - e'_j`
/// when `i + j <= n` and the floor `Re(s) > -e_i - e'_j` when `i + j > n`,
/// where `n` is the length of the first tuple.  The same rule covers the
/// equal-rank and rank-pair shapes.
pub fn omega_strip(nu: &CharTuple, nup: &CharTuple) -> StripInterval {
    let n = nu.len();
    let mut lower = f64::NEG_INFINITY;
    let mut upper = f64::INFINITY;
    for (i, a) in nu.chars().iter().enumerate() {
        for (j, b) in nup.chars().iter().enumerate() {
            let e = a.ex() + b.ex();
            if i + j + 2 <= n {
                upper = upper.min(1.0 - e);
            } else {
                lower = lower.max(-e);
            }
        }
    }
    StripInterval { lower, upper }
}

/// The character `x -> |x|^s`, the standard twist carried by every
/// pairing in this module.
pub fn s_char(p: Prime) -> TwistedChar {
    let base = MultChar::unramified(p, Scalar::one(p)).expect("unit scalar");
    TwistedChar::with_s(base)
}

/// The character `x -> |x|^{1-s}`, used on the dual side of the
/// functional equations.  Its value at `x` is `|x| * Y^{-2 v(x)}`.
pub fn one_minus_s_char(p: Prime) -> TwistedChar {
    let base = MultChar::unramified_twisted(p, Scalar::one(p), 2).expect("unit scalar");
    TwistedChar {
        base,
        shift2: -2,
    }
}

fn qh(p: Prime, k: i64) -> RatFun {
    RatFun::from_scalar(Scalar::q_half_pow(p, k))
}

fn qpow(p: Prime, m: i64) -> RatFun {
    RatFun::from_rat(p, p.pow(m))
}

/// Multiplicative volume of the unit group, `1 - 1/q`.
fn unit_mass(p: Prime) -> RatFun {
    RatFun::from_rat(p, Rat::one() - p.pow(-1))
}

/// Memoized integer powers of a fixed rational function.  The shell
/// engines request the same small set of exponents very many times.
struct PowCache {
    base: RatFun,
    memo: RefCell<BTreeMap<i64, RatFun>>,
}

impl PowCache {
    fn new(base: RatFun) -> PowCache {
        PowCache {
            base,
            memo: RefCell::new(BTreeMap::new()),
        }
    }

    fn at(&self, k: i64) -> RatFun {
        if let Some(v) = self.memo.borrow().get(&k) {
            return v.clone();
        }
        let v = self.base.pow(k);
        self.memo.borrow_mut().insert(k, v.clone());
        v
    }
}

/// Widen the explicit head of a shell sum.
///
/// The recurrence fitter of [`shell_sum`] is sound only when its
/// window reaches past the last shell on which the summand changes
/// regime; a switch outside the window would verify as a clean
/// geometric tail and extrapolate the wrong branch.  Every engine
/// below therefore derives a bound on its switch shells from the data
/// in play and widens the head by it.
fn bumped(opts: &SumOptions, extra: i64) -> SumOptions {
    let extra = extra.max(0);
    SumOptions {
        head: opts.head + extra,
        head_cap: opts.head_cap + extra,
        ..opts.clone()
    }
}

fn rat_val_abs(x: &Rat, p: Prime) -> i64 {
    val(x, p).map_or(0, |v| v.abs())
}

/// Shells on which integrals of a span along a line can change regime:
/// inside the lattice depth the value is locally constant, below the
/// support floor it vanishes, and the phase conductor sits between.
fn span_settle(span: &SchwartzSpan, p: Prime) -> i64 {
    match span.support_val_floor(p) {
        None => 0,
        Some(floor) => span.stability_depth(p) + floor.abs(),
    }
}

/// Bound on `|m|` past which the values of a section along the matrix
/// shells `pi^m` settle into their final law profile.  Translations
/// shift the settling point by their entry valuations; a rank-raising
/// node by the scale of its Schwartz data.
fn settle_bound(f: &SectionExpr, p: Prime) -> i64 {
    match f.kind() {
        SectionKind::Spherical => 0,
        SectionKind::Translate { by, child } => {
            let a = min_entry_val(by, p).map_or(0, |v| v.abs());
            let b = by
                .inverse()
                .ok()
                .and_then(|i| min_entry_val(&i, p))
                .map_or(0, |v| v.abs());
            settle_bound(child, p) + a + b
        }
        SectionKind::Hat { child } => settle_bound(child, p),
        SectionKind::Combo(parts) => parts
            .iter()
            .map(|(_, c)| settle_bound(c, p))
            .max()
            .unwrap_or(0),
        SectionKind::GodementPlus { child, phi, .. } => {
            settle_bound(child, p) + span_settle(phi, p)
        }
        SectionKind::GodementCirc { .. } => 0,
    }
}

/// Zeta integral on the line against a multiplicative character, with
/// the `s`-twist supplied by `sw`:
///
/// `Z = int phi(x) omega(x) sw(x) d*x`.
///
/// Exact for p-adic characters over the working prime; archimedean
/// characters belong to the numeric path.
pub fn tate_zeta_at(
    p: Prime,
    omega: &MultChar,
    phi: &SchwartzSpan,
    sw: &TwistedChar,
    opts: &SumOptions,
) -> Result<SumResult> {
    if !omega.is_padic() || omega.q() != Some(p) {
        return Err(Error::Capability(
            "zeta integrals for archimedean characters take the numeric path".into(),
        ));
    }
    if phi.shape() != (1, 1) {
        return Err(Error::Dimension("line data must be a 1x1 span".into()));
    }
    if phi.q() != p {
        return Err(Error::Domain(
            "Schwartz data must live over the working prime".into(),
        ));
    }
    let pi = p.rat();
    let step = &omega.eval(&pi, 0)? * &sw.eval(&pi)?;
    let stepc = PowCache::new(step);
    let dir = Mat::e_row(1);
    shell_sum(
        p,
        |m| {
            let line = span_line_shell_integral(p, phi, &dir, m)?;
            if line.is_zero() {
                return Ok(RatFun::zero(p));
            }
            Ok(&(&stepc.at(m) * &qpow(p, m)) * &RatFun::from_scalar(line))
        },
        &bumped(opts, span_settle(phi, p)),
    )
}

/// [`tate_zeta_at`] with the standard twist `|x|^s`.
pub fn tate_zeta(
    p: Prime,
    omega: &MultChar,
    phi: &SchwartzSpan,
    opts: &SumOptions,
) -> Result<SumResult> {
    tate_zeta_at(p, omega, phi, &s_char(p), opts)
}

/// Value of the rank-two spherical Whittaker function at
/// `diag(pi^m, 1)`: the unipotent integral of the section against the
/// conjugate standard additive character, assembled in closed form.
///
/// Stratified over the valuation `j` of the unipotent coordinate, the
/// law profile is `A_1^j A_2^{m-j}` below the pivot swap at `j = m`
/// and the constant `A_1^m` from there on, while the additive
/// character contributes mass `-1` on the shell `j = -1`,
/// `(1 - 1/q) q^{-j}` on the shells `j >= 0`, and nothing deeper.
/// Past the swap the masses telescope to `q^{-max(m, 0)}` exactly, so
/// the sum is a finite expression; for `m < 0` the two pieces cancel
/// and the value vanishes.
fn whittaker_core(p: Prime, t: &TwistedTuple, m: i64) -> Result<RatFun> {
    if t.len() != 2 {
        return Err(Error::Capability(format!(
            "exact Whittaker values stop at rank two (asked for rank {})",
            t.len()
        )));
    }
    for it in t.items() {
        if it.shift2 != 0 {
            return Err(Error::Domain(
                "Whittaker shells need an s-free character tuple".into(),
            ));
        }
    }
    let pi = p.rat();
    let a1 = t.law_at(&Mat::diag(vec![pi.clone(), Rat::one()]))?;
    let a2 = t.law_at(&Mat::diag(vec![Rat::one(), pi]))?;
    let val = |j: i64| -> RatFun {
        if j >= m {
            a1.pow(m)
        } else {
            &a1.pow(j) * &a2.pow(m - j)
        }
    };
    let mut acc = &RatFun::zero(p) - &val(-1);
    let settled = m.max(0);
    let unit = unit_mass(p);
    for j in 0..settled {
        acc = &acc + &(&(&val(j) * &unit) * &qpow(p, -j));
    }
    Ok(&acc + &(&val(settled) * &qpow(p, -settled)))
}

/// Spherical Whittaker value at `diag(pi^m, 1)` for a rank-two
/// unramified tuple.
pub fn jacquet_whittaker(p: Prime, nu: &CharTuple, m: i64) -> Result<RatFun> {
    let t = TwistedTuple::plain(p, nu)?;
    whittaker_core(p, &t, m)
}

/// Smallest `L` such that `y -> f(y r)` is constant on right cosets of
/// the depth-`L` principal congruence cell.
///
/// For a spherical leaf it is enough that conjugation by `r` keeps the
/// cell integral, which costs the entry floors of `r` and its inverse.
/// Translations compose into `r`, the involution of the hat node is an
/// automorphism preserving congruence cells, and rank-raising nodes
/// inherit the stability of their translated Schwartz data.
fn right_invariance_depth(f: &SectionExpr, r: &Mat, p: Prime) -> Result<i64> {
    if f.rank() <= 1 {
        return Ok(0);
    }
    match f.kind() {
        SectionKind::Spherical => {
            let a = min_entry_val(r, p).ok_or(Error::Singular)?;
            let b = min_entry_val(&r.inverse()?, p).ok_or(Error::Singular)?;
            Ok((-(a + b)).max(0))
        }
        SectionKind::Translate { by, child } => right_invariance_depth(child, &(r * by), p),
        SectionKind::Hat { child } => right_invariance_depth(child, &r.hat_conj()?, p),
        SectionKind::Combo(parts) => {
            let mut depth = 0;
            for (_, child) in parts {
                depth = depth.max(right_invariance_depth(child, r, p)?);
            }
            Ok(depth)
        }
        SectionKind::GodementPlus { phi, .. } => {
            Ok(phi.right_translate(r)?.right_stability_depth(p).max(0))
        }
        SectionKind::GodementCirc { .. } => Err(Error::Capability(
            "rank-preserving nodes above rank one have no pointwise exact evaluation".into(),
        )),
    }
}

/// Write a section as a weighted sum of right-translated spherical
/// sections: `f(x) = sum_i w_i sph_{t_i}(x H_i)`.
///
/// This is the normal form the shell engines consume.  Rank-raising
/// nodes do not flatten; callers route those separately.
fn flatten_translates(f: &SectionExpr) -> Result<Vec<(Scalar, Mat, TwistedTuple)>> {
    let p = f.q();
    match f.kind() {
        SectionKind::Spherical => Ok(vec![(
            Scalar::one(p),
            Mat::identity(f.rank()),
            f.tuple().clone(),
        )]),
        SectionKind::Translate { by, child } => {
            let inner = flatten_translates(child)?;
            Ok(inner
                .into_iter()
                .map(|(w, h, t)| (w, by * &h, t))
                .collect())
        }
        SectionKind::Hat { child } => {
            let inner = flatten_translates(child)?;
            let mut out = Vec::with_capacity(inner.len());
            for (w, h, t) in inner {
                out.push((w, h.hat_conj()?, t.hat_dual()));
            }
            Ok(out)
        }
        SectionKind::Combo(parts) => {
            let mut out = Vec::new();
            for (c, child) in parts {
                for (w, h, t) in flatten_translates(child)? {
                    out.push((&w * c, h, t));
                }
            }
            Ok(out)
        }
        SectionKind::GodementPlus { .. } | SectionKind::GodementCirc { .. } => {
            Err(Error::Capability(
                "rank-raising sections do not flatten to translated spherical data".into(),
            ))
        }
    }
}

/// Value of a rank-zero section, which is a plain scalar.
fn rank0_value(f: &SectionExpr) -> Result<Scalar> {
    let p = f.q();
    match f.kind() {
        SectionKind::Spherical => Ok(Scalar::one(p)),
        SectionKind::Translate { child, .. } => rank0_value(child),
        SectionKind::Hat { child } => rank0_value(child),
        SectionKind::Combo(parts) => {
            let mut acc = Scalar::zero(p);
            for (c, child) in parts {
                acc = &acc + &(c * &rank0_value(child)?);
            }
            Ok(acc)
        }
        _ => Err(Error::Capability(
            "rank-zero sections carry no rank-raising structure".into(),
        )),
    }
}

/// Equal-rank pairing on the line.  Any rank-one section is the
/// multiplicative character of its tuple times its value at 1, so the
/// pairing collapses to a zeta integral with the product character.
fn lambda_nn1(
    p: Prime,
    sw: &TwistedChar,
    f: &SectionExpr,
    fp: &SectionExpr,
    phi: &SchwartzSpan,
    opts: &SumOptions,
) -> Result<SumResult> {
    let ev = SectionEvaluator::with_options(p, opts.clone());
    let i1 = Mat::identity(1);
    let c = &ev.eval(f, &i1)? * &ev.eval(fp, &i1)?;
    let pi = p.rat();
    let step = &(&f.tuple().at(0).eval(&pi)? * &fp.tuple().at(0).eval(&pi)?) * &sw.eval(&pi)?;
    let stepc = PowCache::new(step);
    let dir = Mat::e_row(1);
    let sum = shell_sum(
        p,
        |m| {
            let line = span_line_shell_integral(p, phi, &dir, m)?;
            if line.is_zero() {
                return Ok(RatFun::zero(p));
            }
            Ok(&(&stepc.at(m) * &qpow(p, m)) * &RatFun::from_scalar(line))
        },
        &bumped(opts, span_settle(phi, p)),
    )?;
    Ok(SumResult {
        value: &c * &sum.value,
        formal_tail: sum.formal_tail || ev.formal_tail_seen(),
    })
}

/// Rank-pair pairing at ranks (1, 0): the group integrated over is a
/// point, so the value is the product of the two sections there.
fn lambda_nnp1(
    p: Prime,
    f: &SectionExpr,
    fp: &SectionExpr,
    opts: &SumOptions,
) -> Result<SumResult> {
    let ev = SectionEvaluator::with_options(p, opts.clone());
    let v = ev.eval(f, &Mat::identity(1))?;
    let c = rank0_value(fp)?;
    Ok(SumResult {
        value: &v * &RatFun::from_scalar(c),
        formal_tail: ev.formal_tail_seen(),
    })
}

/// Rank-pair pairing at ranks (2, 1) by pointwise evaluation of the
/// rank-two section on the embedded line.
///
/// With `g_m(u) = [[pi^m u, 1], [0, 1]]` and `c' = f'(1)`,
/// `Lambda = c' sum_m (a'(pi) sw(pi))^m q^{m/2} int_{v=m} f(g_m(u)) d*u`,
/// and the `u`-integral is a finite sum over unit cells at the
/// invariance depth of `f`.
fn lambda_nnp2_point(
    p: Prime,
    sw: &TwistedChar,
    f: &SectionExpr,
    fp: &SectionExpr,
    opts: &SumOptions,
) -> Result<SumResult> {
    let ev = SectionEvaluator::with_options(p, opts.clone());
    let c_fp = ev.eval(fp, &Mat::identity(1))?;
    let pi = p.rat();
    let step = PowCache::new(&fp.tuple().at(0).eval(&pi)? * &sw.eval(&pi)?);
    let depth = right_invariance_depth(f, &Mat::identity(2), p)?.max(0);
    let settle = settle_bound(f, p) + depth;
    let units = unit_reps(p, depth)?;
    let uvol = RatFun::from_rat(p, unit_cell_vol(p, depth));
    let formal = Cell::new(ev.formal_tail_seen());
    let sum = shell_sum(
        p,
        |m| {
            let shift = p.pow(m);
            // A node's internal shells shift with the evaluation
            // point, so each point gets a window scaled to |m|.
            let evm = SectionEvaluator::with_options(p, bumped(opts, settle + m.abs()));
            let mut acc = RatFun::zero(p);
            for u in &units {
                let g = Mat::from_rows(vec![
                    vec![&shift * u, Rat::one()],
                    vec![Rat::zero(), Rat::one()],
                ]);
                acc = &acc + &evm.eval(f, &g)?;
            }
            formal.set(formal.get() | evm.formal_tail_seen());
            if acc.is_zero() {
                return Ok(RatFun::zero(p));
            }
            Ok(&(&(&step.at(m) * &qh(p, m)) * &uvol) * &acc)
        },
        &bumped(opts, settle),
    )?;
    Ok(SumResult {
        value: &c_fp * &sum.value,
        formal_tail: sum.formal_tail || formal.get(),
    })
}

/// One scalar box of a 1x2 span: coefficient, per-entry phases, and
/// per-entry ball cosets.
struct RowBox {
    coeff: Scalar,
    l0: Rat,
    l1: Rat,
    b0: BallCoset,
    b1: BallCoset,
}

/// Bound on the shells where a box's masses or phases change regime:
/// ball depths, phase conductors, center valuations, and the one extra
/// step a shifted center can cancel past its own valuation.
fn box_settle(bx: &RowBox, p: Prime) -> i64 {
    let mut b = bx.b0.depth.abs() + bx.b1.depth.abs();
    b += rat_val_abs(&bx.l0, p) + rat_val_abs(&bx.l1, p);
    b += rat_val_abs(&bx.b0.center, p) + rat_val_abs(&bx.b1.center, p);
    if let Some(vc) = val(&bx.b1.center, p) {
        let probe = &bx.b1.center + &p.pow(vc);
        if let Some(w) = val(&probe, p) {
            b += (w - vc).max(0);
        }
    }
    b
}

fn boxes_settle(boxes: &[RowBox], p: Prime) -> i64 {
    boxes.iter().map(|bx| box_settle(bx, p)).max().unwrap_or(0)
}

fn row_boxes(span: &SchwartzSpan, p: Prime) -> Result<Vec<RowBox>> {
    let mut out = Vec::new();
    for t in span.entrywise_terms(p)? {
        let depths = match &t.lat {
            Lattice::Entrywise(v) => v.clone(),
            _ => unreachable!("entrywise terms carry entrywise lattices"),
        };
        out.push(RowBox {
            coeff: t.coeff.clone(),
            l0: t.c.at(0, 0).clone(),
            l1: t.c.at(0, 1).clone(),
            b0: BallCoset::new(t.d.at(0, 0).clone(), depths[0]),
            b1: BallCoset::new(t.d.at(0, 1).clone(), depths[1]),
        });
    }
    Ok(out)
}

/// Rank-pair pairing at ranks (2, 1) where the first slot is a
/// rank-preserving node over translated spherical data.
///
/// The inner convolution and the outer pairing are fused into a single
/// stratification.  Per spherical leaf, the convolution variable is
/// polar-decomposed along the bottom-row plane `w = pi^m e_2 kappa`;
/// the leaf character collapses the dropped variable into the
/// geometric weight `gamma_1 = chi(pi)^{-1} a'(pi) sw(pi) q` and the
/// row rescaling into `W_1 = a'(pi) sw(pi) q^{1/2}`.  Per kappa cell
/// the first tensor factor contributes the line sum
/// `G(y) = sum_j gamma_1^{-j} q^j int_{v(t)=j} Phi_0(t y) dt`,
/// and the second factor contributes, per scalar box and per shell `a`
/// of its first entry, a phase mass times a locus integral carrying
/// the pivot profile `R^{min(a, v)}` with `R` the ratio of the two
/// diagonal law values.
fn fused_core(
    p: Prime,
    sw: &TwistedChar,
    chi: &TwistedChar,
    t: &TwistedTuple,
    phi: &RowTensor,
    fp: &SectionExpr,
    opts: &SumOptions,
    formal: &Cell<bool>,
) -> Result<RatFun> {
    let pi = p.rat();
    let ev = SectionEvaluator::with_options(p, opts.clone());
    let c_fp = ev.eval(fp, &Mat::identity(1))?;
    formal.set(formal.get() | ev.formal_tail_seen());
    if c_fp.is_zero() {
        return Ok(RatFun::zero(p));
    }
    let a_fp = fp.tuple().at(0).eval(&pi)?;
    let sw1 = sw.eval(&pi)?;
    let chi1 = chi.eval(&pi)?;
    let gamma1 = PowCache::new(&(&(&chi1.recip() * &a_fp) * &sw1) * &qpow(p, 1));
    let w1 = PowCache::new(&(&a_fp * &sw1) * &qh(p, 1));
    let a1 = t.law_at(&Mat::diag(vec![pi.clone(), Rat::one()]))?;
    let a2 = t.law_at(&Mat::diag(vec![Rat::one(), pi.clone()]))?;
    let rc = PowCache::new(a1.checked_div(&a2)?);
    let astep = PowCache::new(&(&chi1 * &qh(p, 3)) * &a2);
    let a2c = PowCache::new(a2);
    let depth = phi
        .factor(0)
        .right_stability_depth(p)
        .max(phi.factor(1).right_stability_depth(p))
        .max(0);
    let cells = kappa_reps(p, 2, depth)?;
    let cvol = RatFun::from_rat(p, kappa_cell_vol(p, 2, depth));
    let e2 = Mat::e_row(2);
    let mut total = RatFun::zero(p);
    for cell in &cells {
        let dir = &e2 * cell;
        let gsum = shell_sum(
            p,
            |j| {
                let line = span_line_shell_integral(p, phi.factor(0), &dir, j)?;
                if line.is_zero() {
                    return Ok(RatFun::zero(p));
                }
                Ok(&(&gamma1.at(-j) * &qpow(p, j)) * &RatFun::from_scalar(line))
            },
            &bumped(opts, span_settle(phi.factor(0), p) + depth),
        )?;
        formal.set(formal.get() | gsum.formal_tail);
        if gsum.value.is_zero() {
            continue;
        }
        let boxes = row_boxes(&phi.factor(1).right_translate(cell)?, p)?;
        if boxes.is_empty() {
            continue;
        }
        let bsettle = boxes_settle(&boxes, p);
        let msum = shell_sum(
            p,
            |m| {
                let shift = p.pow(m);
                let mut acc = RatFun::zero(p);
                for bx in &boxes {
                    let cw = &bx.b1.center + &shift;
                    let vcw = val(&cw, p);
                    let lo = bx.b1.depth.min(vcw.unwrap_or(bx.b1.depth));
                    let asum = shell_sum(
                        p,
                        |a| {
                            let mass0 = psi_shell_ball_integral(p, &bx.l0, a, &bx.b0)?;
                            if mass0.is_zero() {
                                return Ok(RatFun::zero(p));
                            }
                            let hi = a.max(lo) + 1;
                            let vs =
                                ValSeq::tabulate(lo, hi, |r| Ok(rc.at(a.min(r))), rc.at(a))?;
                            let yint =
                                psi_ball_locus_integral(p, &bx.l1, &bx.b1, &shift, &vs)?;
                            if yint.is_zero() {
                                return Ok(RatFun::zero(p));
                            }
                            Ok(&(&astep.at(a) * &RatFun::from_scalar(mass0)) * &yint)
                        },
                        // The shift pi^m moves this box's switch
                        // shells with it.
                        &bumped(opts, bsettle + m.abs()),
                    )?;
                    formal.set(formal.get() | asum.formal_tail);
                    acc = &acc + &(&RatFun::from_scalar(bx.coeff.clone()) * &asum.value);
                }
                if acc.is_zero() {
                    return Ok(RatFun::zero(p));
                }
                Ok(&(&w1.at(m) * &a2c.at(m)) * &acc)
            },
            &bumped(opts, bsettle),
        )?;
        formal.set(formal.get() | msum.formal_tail);
        if msum.value.is_zero() {
            continue;
        }
        total = &total + &(&(&cvol * &gsum.value) * &msum.value);
    }
    Ok(&(&c_fp * &unit_mass(p)) * &total)
}

/// Peel the child of a rank-preserving node into translated spherical
/// leaves and run [`fused_core`] on each.  Shifting the translation
/// into the convolution variable costs `chi(det H)^{-1} |det H|^{1/2}`
/// per leaf and right-translates the Schwartz tensor.
fn lambda_nnp2_fused(
    p: Prime,
    sw: &TwistedChar,
    chi: &TwistedChar,
    child: &SectionExpr,
    phi: &RowTensor,
    fp: &SectionExpr,
    opts: &SumOptions,
) -> Result<SumResult> {
    let leaves = flatten_translates(child)?;
    let formal = Cell::new(false);
    let mut value = RatFun::zero(p);
    for (w, h, t) in &leaves {
        let hd = h.det();
        let hv = val(&hd, p).ok_or(Error::Singular)?;
        let pre = &(&RatFun::from_scalar(w.clone()) * &chi.inv().eval(&hd)?) * &qh(p, hv);
        let phih = phi.right_translate(&h.inverse()?)?;
        let part = fused_core(p, sw, chi, t, &phih, fp, opts, &formal)?;
        value = &value + &(&pre * &part);
    }
    Ok(SumResult {
        value,
        formal_tail: formal.get(),
    })
}

/// Rank-pair dispatch: linear structure splits, rank-preserving nodes
/// go to the fused engine, everything else evaluates pointwise.
fn lambda_nnp2(
    p: Prime,
    sw: &TwistedChar,
    f: &SectionExpr,
    fp: &SectionExpr,
    opts: &SumOptions,
) -> Result<SumResult> {
    match f.kind() {
        SectionKind::Combo(parts) => {
            let mut value = RatFun::zero(p);
            let mut formal = false;
            for (c, child) in parts {
                let part = lambda_nnp2(p, sw, child, fp, opts)?;
                value = &value + &(&RatFun::from_scalar(c.clone()) * &part.value);
                formal |= part.formal_tail;
            }
            Ok(SumResult {
                value,
                formal_tail: formal,
            })
        }
        SectionKind::GodementCirc { chi, child, phi } => {
            lambda_nnp2_fused(p, sw, chi, child, phi, fp, opts)
        }
        _ => lambda_nnp2_point(p, sw, f, fp, opts),
    }
}

/// Equal-rank pairing at rank two for one translated spherical leaf of
/// the first slot.
///
/// After the leaf translation has been shifted onto the other two
/// arguments, the group decomposes as lower-triangular times compact,
/// and the first slot is a pure law profile: with `t_1, t_2` the
/// diagonal shells and `x` the unipotent coordinate, the leaf law is
/// `A_2^{m_1 + m_2} R^{min(v(t_1 + x), m_2)}`.  The shifted-pivot
/// profile is averaged over the `t_1` shell by `cancel_avg` and
/// integrated over the `x` box by the locus integral; the `t_2` shell
/// contributes a phase mass.
fn lambda_nn2_core(
    p: Prime,
    sw: &TwistedChar,
    t: &TwistedTuple,
    fpe: &SectionExpr,
    phi: &SchwartzSpan,
    opts: &SumOptions,
    formal: &Cell<bool>,
) -> Result<RatFun> {
    let pi = p.rat();
    let a1 = t.law_at(&Mat::diag(vec![pi.clone(), Rat::one()]))?;
    let a2 = t.law_at(&Mat::diag(vec![Rat::one(), pi.clone()]))?;
    let rc = PowCache::new(a1.checked_div(&a2)?);
    let tp = fpe.tuple();
    let b1 = tp.law_at(&Mat::diag(vec![pi.clone(), Rat::one()]))?;
    let b2 = tp.law_at(&Mat::diag(vec![Rat::one(), pi.clone()]))?;
    let sw1 = sw.eval(&pi)?;
    let inner_step = PowCache::new(&(&a2 * &b1) * &sw1);
    let outer_step = PowCache::new(&(&(&a2 * &b2) * &sw1) * &qpow(p, 2));
    let depth = right_invariance_depth(fpe, &Mat::identity(2), p)?
        .max(phi.right_stability_depth(p))
        .max(0);
    let cells = kappa_reps(p, 2, depth)?;
    let cvol = RatFun::from_rat(p, kappa_cell_vol(p, 2, depth));
    let ev = SectionEvaluator::with_options(p, opts.clone());
    let zero_c = Rat::zero();
    let mut total = RatFun::zero(p);
    for cell in &cells {
        let fpv = ev.eval(fpe, cell)?;
        if fpv.is_zero() {
            continue;
        }
        let boxes = row_boxes(&phi.right_translate(cell)?, p)?;
        if boxes.is_empty() {
            continue;
        }
        let bsettle = boxes_settle(&boxes, p);
        let sum2 = shell_sum(
            p,
            |m2| {
                let mut masses = Vec::with_capacity(boxes.len());
                let mut any = false;
                for bx in &boxes {
                    let mass = psi_shell_ball_integral(p, &bx.l1, m2, &bx.b1)?;
                    any |= !mass.is_zero();
                    masses.push(mass);
                }
                if !any {
                    return Ok(RatFun::zero(p));
                }
                let sum1 = shell_sum(
                    p,
                    |m1| {
                        let mut acc = RatFun::zero(p);
                        for (bx, mass) in boxes.iter().zip(&masses) {
                            if mass.is_zero() {
                                continue;
                            }
                            let vc0 = val(&bx.b0.center, p);
                            let lo = bx.b0.depth.min(vc0.unwrap_or(bx.b0.depth));
                            let hi = (m1 + 1).max(lo) + 1;
                            let vs = ValSeq::tabulate(
                                lo,
                                hi,
                                |j| cancel_avg(p, m1, j, m2, |d| Ok(rc.at(d))),
                                rc.at(m1.min(m2)),
                            )?;
                            let xint =
                                psi_ball_locus_integral(p, &bx.l0, &bx.b0, &zero_c, &vs)?;
                            if xint.is_zero() {
                                continue;
                            }
                            let w = &RatFun::from_scalar(bx.coeff.clone())
                                * &RatFun::from_scalar(mass.clone());
                            acc = &acc + &(&w * &xint);
                        }
                        if acc.is_zero() {
                            return Ok(RatFun::zero(p));
                        }
                        Ok(&inner_step.at(m1) * &acc)
                    },
                    // The pivot cap switches the profile at m1 = m2.
                    &bumped(opts, bsettle + m2.abs()),
                )?;
                formal.set(formal.get() | sum1.formal_tail);
                Ok(&outer_step.at(m2) * &sum1.value)
            },
            &bumped(opts, bsettle),
        )?;
        formal.set(formal.get() | sum2.formal_tail);
        if sum2.value.is_zero() {
            continue;
        }
        total = &total + &(&(&cvol * &fpv) * &sum2.value);
    }
    formal.set(formal.get() | ev.formal_tail_seen());
    Ok(&unit_mass(p) * &total)
}

/// Equal-rank pairing at rank two.  The first slot is flattened to
/// translated spherical leaves; each translation is shifted onto the
/// second slot and the Schwartz data at the cost of `sw(det H)^{-1}`.
fn lambda_nn2(
    p: Prime,
    sw: &TwistedChar,
    f: &SectionExpr,
    fp: &SectionExpr,
    phi: &SchwartzSpan,
    opts: &SumOptions,
) -> Result<SumResult> {
    let leaves = flatten_translates(f)?;
    let mut terms: Vec<(RatFun, TwistedTuple, SectionExpr, SchwartzSpan)> = Vec::new();
    for (w, h, t) in leaves {
        let hinv = h.inverse()?;
        let pre = &RatFun::from_scalar(w) * &sw.eval(&h.det())?.recip();
        let fph = SectionExpr::translate(hinv.clone(), Rc::new(fp.clone()))?;
        let phih = phi.right_translate(&hinv)?;
        terms.push((pre, t, fph, phih));
    }
    let formal = Cell::new(false);
    let mut value = RatFun::zero(p);
    for (pre, t, fph, phih) in &terms {
        let part = lambda_nn2_core(p, sw, t, fph, phih, opts, &formal)?;
        value = &value + &(pre * &part);
    }
    Ok(SumResult {
        value,
        formal_tail: formal.get(),
    })
}

fn check_span(p: Prime, ph: &SchwartzSpan, shape: (usize, usize)) -> Result<()> {
    if ph.q() != p {
        return Err(Error::Domain(
            "Schwartz data must live over the working prime".into(),
        ));
    }
    if ph.shape() != shape {
        return Err(Error::Dimension(format!(
            "Schwartz argument must be {}x{} here (got {}x{})",
            shape.0,
            shape.1,
            ph.shape().0,
            ph.shape().1
        )));
    }
    Ok(())
}

/// Open-orbit pairing with an explicit `s`-twist.
///
/// Shapes: equal rank pairs `(1, 1)` and `(2, 2)` take a Schwartz row
/// of width equal to the rank; rank pairs `(2, 1)` and `(1, 0)` take
/// none.  Ranks beyond these have no exact engine and return a
/// `Capability` error pointing at the numeric path.
pub fn lambda_open_orbit_at(
    p: Prime,
    sw: &TwistedChar,
    f: &SectionExpr,
    fp: &SectionExpr,
    phi: Option<&SchwartzSpan>,
    opts: &SumOptions,
) -> Result<SumResult> {
    if f.q() != p || fp.q() != p {
        return Err(Error::Domain(
            "sections must live over the working prime".into(),
        ));
    }
    match (f.rank(), fp.rank(), phi) {
        (1, 1, Some(ph)) => {
            check_span(p, ph, (1, 1))?;
            lambda_nn1(p, sw, f, fp, ph, opts)
        }
        (2, 2, Some(ph)) => {
            check_span(p, ph, (1, 2))?;
            lambda_nn2(p, sw, f, fp, ph, opts)
        }
        (2, 1, None) => lambda_nnp2(p, sw, f, fp, opts),
        (1, 0, None) => lambda_nnp1(p, f, fp, opts),
        (a, b, Some(_)) if a == b => Err(Error::Capability(format!(
            "exact equal-rank pairing stops at rank two (asked for rank {a}); use the numeric path"
        ))),
        (a, b, None) if a == b + 1 => Err(Error::Capability(format!(
            "exact rank-pair pairing stops at ranks (2, 1) (asked for ({a}, {b})); use the numeric path"
        ))),
        (a, b, Some(_)) => Err(Error::Dimension(format!(
            "a Schwartz argument pairs equal ranks (got ranks ({a}, {b}))"
        ))),
        (a, b, None) => Err(Error::Dimension(format!(
            "without a Schwartz argument the ranks must be (k, k-1) (got ({a}, {b}))"
        ))),
    }
}

/// Open-orbit pairing with the standard twist `|det|^s`.
pub fn lambda_open_orbit(
    p: Prime,
    f: &SectionExpr,
    fp: &SectionExpr,
    phi: Option<&SchwartzSpan>,
    opts: &SumOptions,
) -> Result<SumResult> {
    lambda_open_orbit_at(p, &s_char(p), f, fp, phi, opts)
}

/// Rank-one Whittaker pairing.  Whittaker data on the line is the
/// section itself, so the pairing is the zeta integral of the Schwartz
/// function against the product of the two characters.
fn rs_z_nn1(
    p: Prime,
    sw: &TwistedChar,
    f: &SectionExpr,
    fp: &SectionExpr,
    phi: &SchwartzSpan,
    opts: &SumOptions,
) -> Result<SumResult> {
    let af = f.tuple().at(0);
    let afp = fp.tuple().at(0);
    if af.shift2 != 0 || afp.shift2 != 0 {
        return Err(Error::Capability(
            "rank-one Whittaker pairing needs s-free character tuples".into(),
        ));
    }
    let ev = SectionEvaluator::with_options(p, opts.clone());
    let i1 = Mat::identity(1);
    let c = &ev.eval(f, &i1)? * &ev.eval(fp, &i1)?;
    let omega = af.base.product(&afp.base)?;
    let z = tate_zeta_at(p, &omega, phi, sw, opts)?;
    Ok(SumResult {
        value: &c * &z.value,
        formal_tail: z.formal_tail || ev.formal_tail_seen(),
    })
}

/// Whittaker pairing at ranks (2, 1).  The first slot must flatten to
/// spherical leaves translated by integral units of the group, so that
/// its Whittaker function is the spherical one for each leaf tuple:
///
/// `Z = (1 - 1/q) f'(1) sum_m W(m) (a'(pi) sw(pi))^m q^{m/2}`.
fn rs_z_nnp2(
    p: Prime,
    sw: &TwistedChar,
    f: &SectionExpr,
    fp: &SectionExpr,
    opts: &SumOptions,
) -> Result<SumResult> {
    let leaves = flatten_translates(f)?;
    for (_, h, _) in &leaves {
        if !h.is_in_k(p) {
            return Err(Error::Capability(
                "exact Whittaker data needs compact translations; use the numeric path".into(),
            ));
        }
    }
    let ev = SectionEvaluator::with_options(p, opts.clone());
    let c_fp = ev.eval(fp, &Mat::identity(1))?;
    let pi = p.rat();
    let step = PowCache::new(&fp.tuple().at(0).eval(&pi)? * &sw.eval(&pi)?);
    let sum = shell_sum(
        p,
        |m| {
            let mut wv = RatFun::zero(p);
            for (w, _, t) in &leaves {
                let wm = whittaker_core(p, t, m)?;
                wv = &wv + &(&RatFun::from_scalar(w.clone()) * &wm);
            }
            if wv.is_zero() {
                return Ok(RatFun::zero(p));
            }
            Ok(&(&step.at(m) * &qh(p, m)) * &wv)
        },
        opts,
    )?;
    Ok(SumResult {
        value: &(&unit_mass(p) * &c_fp) * &sum.value,
        formal_tail: sum.formal_tail || ev.formal_tail_seen(),
    })
}

/// Whittaker-side pairing with an explicit `s`-twist.
///
/// Exact shapes: `(2, 1)` and `(1, 0)` rank pairs and the `(1, 1)`
/// equal-rank pair.  Equal rank two needs the full Whittaker expansion
/// and is served by the numeric path.
pub fn rs_z_at(
    p: Prime,
    sw: &TwistedChar,
    f: &SectionExpr,
    fp: &SectionExpr,
    phi: Option<&SchwartzSpan>,
    opts: &SumOptions,
) -> Result<SumResult> {
    if f.q() != p || fp.q() != p {
        return Err(Error::Domain(
            "sections must live over the working prime".into(),
        ));
    }
    match (f.rank(), fp.rank(), phi) {
        (2, 1, None) => rs_z_nnp2(p, sw, f, fp, opts),
        (1, 1, Some(ph)) => {
            check_span(p, ph, (1, 1))?;
            rs_z_nn1(p, sw, f, fp, ph, opts)
        }
        (1, 0, None) => lambda_nnp1(p, f, fp, opts),
        (2, 2, Some(_)) => Err(Error::Capability(
            "exact Whittaker pairing at equal rank two is out of reach; use the numeric path"
                .into(),
        )),
        (a, b, Some(_)) if a == b => Err(Error::Capability(format!(
            "exact Whittaker pairing stops below rank {a}; use the numeric path"
        ))),
        (a, b, None) if a == b + 1 => Err(Error::Capability(format!(
            "exact Whittaker rank pairs stop at (2, 1) (asked for ({a}, {b})); use the numeric path"
        ))),
        (a, b, Some(_)) => Err(Error::Dimension(format!(
            "a Schwartz argument pairs equal ranks (got ranks ({a}, {b}))"
        ))),
        (a, b, None) => Err(Error::Dimension(format!(
            "without a Schwartz argument the ranks must be (k, k-1) (got ({a}, {b}))"
        ))),
    }
}

/// Whittaker-side pairing with the standard twist `|det|^s`.
pub fn rs_z(
    p: Prime,
    f: &SectionExpr,
    fp: &SectionExpr,
    phi: Option<&SchwartzSpan>,
    opts: &SumOptions,
) -> Result<SumResult> {
    rs_z_at(p, &s_char(p), f, fp, phi, opts)
}

/// Exact value of a rank-raising or rank-preserving node at a point,
/// with the formal-tail flag surfaced.  Other section kinds evaluate
/// through [`SectionEvaluator`] directly and are rejected here.
pub fn godement_eval(
    p: Prime,
    f: &SectionExpr,
    at: &Mat,
    opts: &SumOptions,
) -> Result<SumResult> {
    if f.q() != p {
        return Err(Error::Domain(
            "section must live over the working prime".into(),
        ));
    }
    match f.kind() {
        SectionKind::GodementPlus { .. } | SectionKind::GodementCirc { .. } => {
            let ev = SectionEvaluator::with_options(p, opts.clone());
            let value = ev.eval(f, at)?;
            Ok(SumResult {
                value,
                formal_tail: ev.formal_tail_seen(),
            })
        }
        _ => Err(Error::Domain(
            "pointwise node evaluation is for rank-raising sections".into(),
        )),
    }
}
