//! Principal-series vectors as evaluable expression trees.
//!
//! A section of the representation induced from a character tuple
//! `alpha = (alpha_1, ..., alpha_k)` of the diagonal torus obeys the
//! transformation law
//!
//! ```text
//! f(bbar x) = prod_i alpha_i(bbar_ii) |bbar_ii|^{(2i-1-k)/2} . f(x)
//! ```
//!
//! for lower-triangular `bbar`, so a section is determined by its
//! restriction to the maximal compact subgroup.  [`SectionExpr`] builds
//! sections from a spherical base vector by right translation, the dual
//! involution `g -> w g^iota w`, linear combination, and the two
//! integral constructions that raise or preserve rank (a lower-rank
//! section integrated against a Schwartz function).  Every node carries
//! the character tuple it transforms under; the tuple entries are
//! [`TwistedChar`]s, so a node may depend on the symbolic parameter
//! through twists like `chi |.|^s`.
//!
//! [`SectionEvaluator`] computes exact values: it splits the argument
//! as `bbar kappa`, pulls the transformation law out of `bbar`, and
//! recurses on the compact part.  The integral nodes are evaluated in
//! closed form where the shell decomposition stays one-dimensional
//! (rank two for the rank-raising node, rank one for the rank-preserving
//! one); deeper ranks return a capability error and route through the
//! truncated numeric evaluator instead.  Node values are memoized per
//! `(node, kappa)`; `kappa` is a coset invariant because the pivot rule
//! of the decomposition is deterministic.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::rc::Rc;
use alloc::vec::Vec;
use core::cell::{Cell, RefCell};
use core::marker::PhantomData;

use num_traits::Zero;

use crate::chars::{CharTuple, TwistedChar};
use crate::err::{Error, Result};
use crate::field::{val, Prime, Rat};
use crate::iwasawa;
use crate::matrix::Mat;
use crate::padicint::span_line_shell_integral;
use crate::ratfun::{RatFun, Scalar};
use crate::schwartz::{RowTensor, SchwartzSpan};
use crate::series::{shell_sum, SumOptions};

/// An ordered tuple of possibly `s`-twisted characters; the inducing
/// datum of a principal series, with the prime kept explicit so the
/// empty tuple (rank zero) still knows its field.
#[derive(Clone, Debug, PartialEq)]
pub struct TwistedTuple {
    q: Prime,
    items: Vec<TwistedChar>,
}

impl TwistedTuple {
    pub fn new(q: Prime, items: Vec<TwistedChar>) -> Result<TwistedTuple> {
        for chi in &items {
            if chi.base.q() != Some(q) {
                return Err(Error::Domain(
                    "tuple entries must be p-adic characters of the given prime".into(),
                ));
            }
        }
        Ok(TwistedTuple { q, items })
    }

    /// Lift a plain tuple, with no symbolic twists.
    pub fn plain(q: Prime, tuple: &CharTuple) -> Result<TwistedTuple> {
        TwistedTuple::new(
            q,
            tuple.chars().iter().cloned().map(TwistedChar::plain).collect(),
        )
    }

    pub fn q(&self) -> Prime {
        self.q
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn at(&self, i: usize) -> &TwistedChar {
        &self.items[i]
    }

    pub fn items(&self) -> &[TwistedChar] {
        &self.items
    }

    pub fn append(&self, chi: TwistedChar) -> Result<TwistedTuple> {
        let mut items = self.items.clone();
        items.push(chi);
        TwistedTuple::new(self.q, items)
    }

    /// The dual tuple `(alpha_k^{-1}, ..., alpha_1^{-1})`; an involution.
    pub fn hat_dual(&self) -> TwistedTuple {
        TwistedTuple {
            q: self.q,
            items: self.items.iter().rev().map(TwistedChar::inv).collect(),
        }
    }

    /// The transformation-law prefactor at a lower-triangular argument:
    /// `prod_i alpha_i(b_ii) |b_ii|^{(2i-1-k)/2}`.
    pub fn law_at(&self, bbar: &Mat) -> Result<RatFun> {
        let k = self.len();
        if bbar.rows() != k || bbar.cols() != k {
            return Err(Error::Dimension(format!(
                "law of a rank-{k} tuple at a {}x{} matrix",
                bbar.rows(),
                bbar.cols()
            )));
        }
        let mut acc = RatFun::one(self.q);
        for i in 0..k {
            let b = bbar.at(i, i);
            let v = val(b, self.q).ok_or(Error::Singular)?;
            let e = 2 * (i as i64) + 1 - k as i64;
            let half = RatFun::from_scalar(Scalar::q_half_pow(self.q, -v * e));
            acc = acc.checked_mul(&self.at(i).eval(b)?)?.checked_mul(&half)?;
        }
        Ok(acc)
    }
}

/// The structural variants of a section expression.  Children sit
/// behind `Rc` so common subexpressions share node identity (and hence
/// memoized values).
#[derive(Clone, Debug)]
pub enum SectionKind {
    /// The normalized spherical vector: identically 1 on the compact group.
    Spherical,
    /// `x -> child(x by)`.
    Translate { by: Mat, child: Rc<SectionExpr> },
    /// `x -> child(w x^iota w)`; the tuple dualizes.
    Hat { child: Rc<SectionExpr> },
    /// Rank k from rank k-1: integrate the child against a Schwartz
    /// function on (k-1) x k rows,
    /// `int child(h^{-1}) phi([h,0] x) chi(det h) |det h|^{k/2} dh`,
    /// with the `x`-dependent prefactor `chi(det x) |det x|^{(k-1)/2}`.
    GodementPlus {
        chi: TwistedChar,
        child: Rc<SectionExpr>,
        phi: SchwartzSpan,
    },
    /// Rank-preserving: integrate against a Schwartz function on k x k
    /// matrices, `int child(h) phi(x^{-1} h) chi(det h) |det h|^{(k-1)/2} dh`
    /// times `chi(det x^{-1}) |det x|^{(1-k)/2}`; the tuple is unchanged.
    GodementCirc {
        chi: TwistedChar,
        child: Rc<SectionExpr>,
        phi: RowTensor,
    },
    /// Scalar-weighted sum of sections with one common tuple.
    Combo(Vec<(Scalar, Rc<SectionExpr>)>),
}

/// A principal-series section together with the tuple it transforms
/// under.  Construct through the checked builders; the tuple is derived
/// from the parts and kept in sync by construction.
#[derive(Clone, Debug)]
pub struct SectionExpr {
    kind: SectionKind,
    tuple: TwistedTuple,
}

impl SectionExpr {
    pub fn spherical(tuple: TwistedTuple) -> SectionExpr {
        SectionExpr {
            kind: SectionKind::Spherical,
            tuple,
        }
    }

    pub fn spherical_plain(q: Prime, tuple: &CharTuple) -> Result<SectionExpr> {
        Ok(SectionExpr::spherical(TwistedTuple::plain(q, tuple)?))
    }

    pub fn translate(by: Mat, child: Rc<SectionExpr>) -> Result<SectionExpr> {
        let k = child.rank();
        if by.rows() != k || by.cols() != k {
            return Err(Error::Dimension(format!(
                "translating a rank-{k} section by a {}x{} matrix",
                by.rows(),
                by.cols()
            )));
        }
        if by.det().is_zero() {
            return Err(Error::Singular);
        }
        let tuple = child.tuple.clone();
        Ok(SectionExpr {
            kind: SectionKind::Translate { by, child },
            tuple,
        })
    }

    pub fn hat(child: Rc<SectionExpr>) -> SectionExpr {
        let tuple = child.tuple.hat_dual();
        SectionExpr {
            kind: SectionKind::Hat { child },
            tuple,
        }
    }

    pub fn godement_plus(
        chi: TwistedChar,
        child: Rc<SectionExpr>,
        phi: SchwartzSpan,
    ) -> Result<SectionExpr> {
        let k = child.rank() + 1;
        if child.rank() == 0 {
            return Err(Error::Domain(
                "rank-raising node needs a child of positive rank".into(),
            ));
        }
        if chi.base.q() != Some(child.q()) {
            return Err(Error::Domain(
                "character and child section live over different fields".into(),
            ));
        }
        if phi.shape() != (k - 1, k) || phi.q() != child.q() {
            return Err(Error::Dimension(format!(
                "rank-raising node at rank {k} needs a {}x{} Schwartz span",
                k - 1,
                k
            )));
        }
        let tuple = child.tuple.append(chi.clone())?;
        Ok(SectionExpr {
            kind: SectionKind::GodementPlus { chi, child, phi },
            tuple,
        })
    }

    pub fn godement_circ(
        chi: TwistedChar,
        child: Rc<SectionExpr>,
        phi: RowTensor,
    ) -> Result<SectionExpr> {
        let k = child.rank();
        if k == 0 {
            return Err(Error::Domain(
                "rank-preserving node needs a child of positive rank".into(),
            ));
        }
        if chi.base.q() != Some(child.q()) {
            return Err(Error::Domain(
                "character and child section live over different fields".into(),
            ));
        }
        if phi.shape() != (k, k) || phi.q() != child.q() {
            return Err(Error::Dimension(format!(
                "rank-preserving node at rank {k} needs a {k}x{k} Schwartz tensor"
            )));
        }
        let tuple = child.tuple.clone();
        Ok(SectionExpr {
            kind: SectionKind::GodementCirc { chi, child, phi },
            tuple,
        })
    }

    pub fn combo(parts: Vec<(Scalar, Rc<SectionExpr>)>) -> Result<SectionExpr> {
        let first = parts
            .first()
            .ok_or_else(|| Error::Domain("empty linear combination".into()))?;
        let tuple = first.1.tuple.clone();
        for (c, child) in &parts {
            if child.tuple != tuple {
                return Err(Error::Domain(
                    "combined sections must share one character tuple".into(),
                ));
            }
            if c.q() != tuple.q() {
                return Err(Error::Domain(
                    "combination weights must match the section field".into(),
                ));
            }
        }
        Ok(SectionExpr {
            kind: SectionKind::Combo(parts),
            tuple,
        })
    }

    pub fn kind(&self) -> &SectionKind {
        &self.kind
    }

    pub fn tuple(&self) -> &TwistedTuple {
        &self.tuple
    }

    pub fn rank(&self) -> usize {
        self.tuple.len()
    }

    pub fn q(&self) -> Prime {
        self.tuple.q()
    }
}

/// Exact point evaluator.  One evaluator serves one verification case:
/// it is single-threaded (interior mutability for the memo) and must
/// not outlive the expressions it has evaluated, which the lifetime
/// parameter enforces.
pub struct SectionEvaluator<'e> {
    p: Prime,
    opts: SumOptions,
    memo: RefCell<BTreeMap<(usize, Vec<Rat>), RatFun>>,
    formal: Cell<bool>,
    _exprs: PhantomData<Cell<&'e SectionExpr>>,
}

impl<'e> SectionEvaluator<'e> {
    pub fn new(p: Prime) -> Self {
        Self::with_options(p, SumOptions::default())
    }

    pub fn with_options(p: Prime, opts: SumOptions) -> Self {
        SectionEvaluator {
            p,
            opts,
            memo: RefCell::new(BTreeMap::new()),
            formal: Cell::new(false),
            _exprs: PhantomData,
        }
    }

    /// True when some integral node engaged a tail outside (or without)
    /// a verified region of literal convergence since the last reset.
    pub fn formal_tail_seen(&self) -> bool {
        self.formal.get()
    }

    pub fn reset_formal(&self) {
        self.formal.set(false);
    }

    /// Evaluate `f` at `g`: split `g = bbar kappa`, pull out the
    /// transformation law, recurse on the compact part.
    pub fn eval(&self, f: &'e SectionExpr, g: &Mat) -> Result<RatFun> {
        let k = f.rank();
        if g.rows() != k || g.cols() != k {
            return Err(Error::Dimension(format!(
                "evaluating a rank-{k} section at a {}x{} matrix",
                g.rows(),
                g.cols()
            )));
        }
        if f.q() != self.p {
            return Err(Error::Domain(
                "section and evaluator live over different fields".into(),
            ));
        }
        let fac = iwasawa::decompose(g, self.p)?;
        let law = f.tuple().law_at(&fac.bbar)?;
        law.checked_mul(&self.at_k(f, &fac.kappa)?)
    }

    fn at_k(&self, f: &'e SectionExpr, kappa: &Mat) -> Result<RatFun> {
        match &f.kind {
            SectionKind::Spherical => Ok(RatFun::one(self.p)),
            SectionKind::Combo(parts) => {
                let mut acc = RatFun::zero(self.p);
                for (c, child) in parts {
                    let term = self
                        .at_k(child, kappa)?
                        .checked_mul(&RatFun::from_scalar(c.clone()))?;
                    acc = acc.checked_add(&term)?;
                }
                Ok(acc)
            }
            SectionKind::Translate { by, child } => self.eval(child, &(kappa * by)),
            SectionKind::Hat { child } => self.eval(child, &kappa.hat_conj()?),
            SectionKind::GodementPlus { chi, child, phi } => {
                self.plus_at_k(f, chi, child, phi, kappa)
            }
            SectionKind::GodementCirc { chi, child, phi } => {
                self.circ_at_k(f, chi, child, phi, kappa)
            }
        }
    }

    fn memo_key(f: &SectionExpr, kappa: &Mat) -> (usize, Vec<Rat>) {
        (f as *const SectionExpr as usize, kappa.entries().to_vec())
    }

    /// Rank-raising node at a compact point.  The determinant prefactor
    /// is 1 there, `[h,0] kappa = h . row_0(kappa)`, and a rank-one
    /// child is its value at 1 times its character, so the defining
    /// integral collapses to shells of the scalar `h`:
    ///
    /// ```text
    /// sum_m  child(1) alpha(pi^{-m}) chi(pi^m)
    ///        . int_{v(h)=m} phi(h row_0(kappa)) dh
    /// ```
    ///
    /// (`|det h|^{k/2} = q^{-m}` against the multiplicative measure
    /// `q^m dh` cancels at k = 2.)
    fn plus_at_k(
        &self,
        f: &'e SectionExpr,
        chi: &TwistedChar,
        child: &'e Rc<SectionExpr>,
        phi: &SchwartzSpan,
        kappa: &Mat,
    ) -> Result<RatFun> {
        if f.rank() != 2 {
            return Err(Error::Capability(format!(
                "exact rank-raising evaluation stops at rank two (asked for rank {}); \
                 use the truncated numeric evaluator",
                f.rank()
            )));
        }
        let key = Self::memo_key(f, kappa);
        if let Some(v) = self.memo.borrow().get(&key) {
            return Ok(v.clone());
        }
        let p = self.p;
        let c_child = self.eval(child, &Mat::identity(1))?;
        let alpha = child.tuple().at(0).clone();
        let row = kappa.row(0);
        let res = shell_sum(
            p,
            |m| {
                let line = span_line_shell_integral(p, phi, &row, m)?;
                if line.is_zero() {
                    return Ok(RatFun::zero(p));
                }
                let w = alpha.eval(&p.pow(-m))?.checked_mul(&chi.eval(&p.pow(m))?)?;
                c_child
                    .checked_mul(&w)?
                    .checked_mul(&RatFun::from_scalar(line))
            },
            &self.opts,
        )?;
        if res.formal_tail {
            self.formal.set(true);
        }
        self.memo.borrow_mut().insert(key, res.value.clone());
        Ok(res.value)
    }

    /// Rank-preserving node at a compact point, rank one: the prefactor
    /// is 1, and with `y = kappa^{-1}` the defining integral is
    ///
    /// ```text
    /// sum_m  child(1) alpha(pi^m) chi(pi^m) q^m
    ///        . int_{v(h)=m} phi(h y) dh .
    /// ```
    fn circ_at_k(
        &self,
        f: &'e SectionExpr,
        chi: &TwistedChar,
        child: &'e Rc<SectionExpr>,
        phi: &RowTensor,
        kappa: &Mat,
    ) -> Result<RatFun> {
        if f.rank() != 1 {
            return Err(Error::Capability(format!(
                "exact rank-preserving evaluation stops at rank one (asked for rank {}); \
                 rank-two values route through the fused open-orbit engines or the \
                 truncated numeric evaluator",
                f.rank()
            )));
        }
        let key = Self::memo_key(f, kappa);
        if let Some(v) = self.memo.borrow().get(&key) {
            return Ok(v.clone());
        }
        let p = self.p;
        let c_child = self.eval(child, &Mat::identity(1))?;
        let alpha = child.tuple().at(0).clone();
        let y = kappa.inverse()?;
        let res = shell_sum(
            p,
            |m| {
                let line = span_line_shell_integral(p, phi.factor(0), &y, m)?;
                if line.is_zero() {
                    return Ok(RatFun::zero(p));
                }
                let w = alpha.eval(&p.pow(m))?.checked_mul(&chi.eval(&p.pow(m))?)?;
                c_child
                    .checked_mul(&w)?
                    .checked_mul(&RatFun::from_rat(p, p.pow(m)))?
                    .checked_mul(&RatFun::from_scalar(line))
            },
            &self.opts,
        )?;
        if res.formal_tail {
            self.formal.set(true);
        }
        self.memo.borrow_mut().insert(key, res.value.clone());
        Ok(res.value)
    }
}
