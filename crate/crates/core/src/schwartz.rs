//! Elementary Schwartz functions on spaces of p-adic matrices and the
//! exact calculus they support.
//!
//! A term denotes the function
//!
//! ```text
//! x  |->  coeff * psi(tr(tc x)) * 1[x - d in L]
//! ```
//!
//! where `L` is a lattice.  On vector shapes (one row or one column) the
//! lattice is carried as a full basis matrix, which makes the span closed
//! under right translation by arbitrary invertible matrices and under the
//! Fourier transform; on genuinely rectangular shapes only entrywise
//! product lattices are supported, which is all that bookkeeping of
//! compact-group indicators requires.
//!
//! Everything is canonicalized: lattice bases to a triangular normal form
//! over the valuation ring, centers and phases to digit representatives
//! modulo the lattice and its dual, terms coalesced.  Equality of spans is
//! equality of canonical forms.  The one non-exact corner is a phase
//! factor `psi(<c, d>)` appearing when a phase vector is reduced modulo
//! the dual lattice: when it is not a fourth root of unity the reduction
//! is skipped (the term is kept unreduced, still denoting the same
//! function).

use alloc::vec;
use alloc::vec::Vec;

use num_complex::Complex64;
use num_traits::{One, Zero};

use crate::err::{Error, Result};
use crate::field::{abs_q, digit_rep, frac_part, psi_c64, psi_quarter_turns, val, Prime, Rat};
use crate::matrix::Mat;
use crate::ratfun::Scalar;

/// Most boxes a single term may refine into.
const BOX_CAP: u64 = 65_536;

/// Support lattice of a term.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum Lattice {
    /// Entrywise product of balls, depth per entry (row-major).
    Entrywise(Vec<i64>),
    /// Row lattice `O^{1xb} B` for a `1xb` shape.
    RowBasis(Mat),
    /// Column lattice `A O^{ax1}` for an `ax1` shape.
    ColBasis(Mat),
}

/// One elementary term.  Construct through [`SchwartzTerm::new`] or the
/// convenience constructors and combine via [`SchwartzSpan`].
#[derive(Clone, Debug, PartialEq)]
pub struct SchwartzTerm {
    pub coeff: Scalar,
    /// Phase matrix `c` (same shape as the argument).
    pub c: Mat,
    /// Center `d` (same shape as the argument).
    pub d: Mat,
    pub lat: Lattice,
}

impl SchwartzTerm {
    pub fn new(coeff: Scalar, c: Mat, d: Mat, lat: Lattice) -> SchwartzTerm {
        let t = SchwartzTerm { coeff, c, d, lat };
        t.assert_shapes();
        t
    }

    /// The plain indicator `1_{p^m O^{a x b}}`.
    pub fn unit_ball(q: Prime, rows: usize, cols: usize, m: i64) -> SchwartzTerm {
        let lat = if rows == 1 {
            Lattice::RowBasis(Mat::diag(vec![q.pow(m); cols]))
        } else if cols == 1 {
            Lattice::ColBasis(Mat::diag(vec![q.pow(m); rows]))
        } else {
            Lattice::Entrywise(vec![m; rows * cols])
        };
        SchwartzTerm::new(
            Scalar::one(q),
            Mat::zeros(rows, cols),
            Mat::zeros(rows, cols),
            lat,
        )
    }

    fn assert_shapes(&self) {
        assert_eq!(
            (self.c.rows(), self.c.cols()),
            (self.d.rows(), self.d.cols()),
            "phase and center shapes differ"
        );
        match &self.lat {
            Lattice::Entrywise(m) => {
                assert_eq!(m.len(), self.c.rows() * self.c.cols());
            }
            Lattice::RowBasis(b) => {
                assert!(self.c.rows() == 1 && b.rows() == self.c.cols() && b.is_square());
            }
            Lattice::ColBasis(a) => {
                assert!(self.c.cols() == 1 && a.rows() == self.c.rows() && a.is_square());
            }
        }
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.c.rows(), self.c.cols())
    }

    /// `sum_ij c_ij x_ij = tr(tc x)`, the self-pairing of the shape.
    fn pairing(a: &Mat, b: &Mat) -> Rat {
        let mut acc = Rat::zero();
        for (x, y) in a.entries().iter().zip(b.entries()) {
            acc = acc + x * y;
        }
        acc
    }

    /// Membership of `x - d` in the lattice.
    fn supports(&self, x: &Mat, p: Prime) -> bool {
        let diff = x.add(&self.d.scale(&-Rat::one()));
        match &self.lat {
            Lattice::Entrywise(m) => diff
                .entries()
                .iter()
                .zip(m)
                .all(|(e, &dep)| val(e, p).map_or(true, |v| v >= dep)),
            Lattice::RowBasis(b) => {
                let lam = &diff * &b.inverse().expect("lattice basis invertible");
                lam.is_p_integral(p)
            }
            Lattice::ColBasis(a) => {
                let lam = &a.inverse().expect("lattice basis invertible") * &diff;
                lam.is_p_integral(p)
            }
        }
    }

    /// Exact pointwise value; fails only when the phase at `x` is not a
    /// fourth root of unity.
    pub fn eval_at(&self, x: &Mat, p: Prime) -> Result<Scalar> {
        if !self.supports(x, p) {
            return Ok(Scalar::zero(self.coeff.q()));
        }
        let turns = psi_quarter_turns(&Self::pairing(&self.c, x), p)?;
        Ok(&self.coeff * &Scalar::quarter_turn(self.coeff.q(), turns))
    }

    /// Numeric pointwise value (never fails).
    pub fn eval_c64(&self, x: &Mat, p: Prime) -> Complex64 {
        if !self.supports(x, p) {
            return Complex64::new(0.0, 0.0);
        }
        self.coeff.to_c64() * psi_c64(&Self::pairing(&self.c, x), p)
    }

    /// Volume of the support coset under the self-dual measure.
    pub fn support_volume(&self, p: Prime) -> Rat {
        match &self.lat {
            Lattice::Entrywise(m) => {
                let total: i64 = m.iter().sum();
                p.pow(-total)
            }
            Lattice::RowBasis(b) | Lattice::ColBasis(b) => abs_q(&b.det(), p),
        }
    }
}

/// A finite linear combination of terms of one shape, kept canonical.
#[derive(Clone, Debug, PartialEq)]
pub struct SchwartzSpan {
    q: Prime,
    rows: usize,
    cols: usize,
    terms: Vec<SchwartzTerm>,
}

impl SchwartzSpan {
    pub fn zero(q: Prime, rows: usize, cols: usize) -> SchwartzSpan {
        SchwartzSpan {
            q,
            rows,
            cols,
            terms: vec![],
        }
    }

    pub fn from_terms(q: Prime, rows: usize, cols: usize, terms: Vec<SchwartzTerm>) -> SchwartzSpan {
        for t in &terms {
            assert_eq!(t.shape(), (rows, cols), "mixed shapes in a span");
            assert!(t.coeff.q() == q);
        }
        let mut s = SchwartzSpan {
            q,
            rows,
            cols,
            terms,
        };
        s.canonicalize();
        s
    }

    pub fn single(t: SchwartzTerm) -> SchwartzSpan {
        let (r, c) = t.shape();
        SchwartzSpan::from_terms(t.coeff.q(), r, c, vec![t])
    }

    /// `1_{p^m O^{rows x cols}}`.
    pub fn unit_ball(q: Prime, rows: usize, cols: usize, m: i64) -> SchwartzSpan {
        SchwartzSpan::single(SchwartzTerm::unit_ball(q, rows, cols, m))
    }

    pub fn q(&self) -> Prime {
        self.q
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn terms(&self) -> &[SchwartzTerm] {
        &self.terms
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn add(&self, o: &SchwartzSpan) -> SchwartzSpan {
        assert_eq!(self.shape(), o.shape(), "adding spans of different shapes");
        let mut terms = self.terms.clone();
        terms.extend(o.terms.iter().cloned());
        SchwartzSpan::from_terms(self.q, self.rows, self.cols, terms)
    }

    pub fn scale(&self, s: &Scalar) -> SchwartzSpan {
        SchwartzSpan::from_terms(
            self.q,
            self.rows,
            self.cols,
            self.terms
                .iter()
                .map(|t| {
                    SchwartzTerm::new(&t.coeff * s, t.c.clone(), t.d.clone(), t.lat.clone())
                })
                .collect(),
        )
    }

    pub fn eval_at(&self, x: &Mat, p: Prime) -> Result<Scalar> {
        let mut acc = Scalar::zero(self.q);
        for t in &self.terms {
            acc = &acc + &t.eval_at(x, p)?;
        }
        Ok(acc)
    }

    pub fn eval_c64(&self, x: &Mat, p: Prime) -> Complex64 {
        self.terms
            .iter()
            .map(|t| t.eval_c64(x, p))
            .fold(Complex64::new(0.0, 0.0), |a, b| a + b)
    }

    /// `x -> phi(-x)`.
    pub fn negate_arg(&self) -> SchwartzSpan {
        let minus = -Rat::one();
        SchwartzSpan::from_terms(
            self.q,
            self.rows,
            self.cols,
            self.terms
                .iter()
                .map(|t| {
                    SchwartzTerm::new(
                        t.coeff.clone(),
                        t.c.scale(&minus),
                        t.d.scale(&minus),
                        t.lat.clone(),
                    )
                })
                .collect(),
        )
    }

    /// `tphi(x) = phi(tx)`, swapping the shape.
    pub fn transpose(&self) -> SchwartzSpan {
        SchwartzSpan::from_terms(
            self.q,
            self.cols,
            self.rows,
            self.terms
                .iter()
                .map(|t| {
                    let lat = match &t.lat {
                        Lattice::Entrywise(m) => {
                            // transpose the depth grid
                            let (r, c) = t.shape();
                            let mut out = vec![0i64; m.len()];
                            for i in 0..r {
                                for j in 0..c {
                                    out[j * r + i] = m[i * c + j];
                                }
                            }
                            Lattice::Entrywise(out)
                        }
                        Lattice::RowBasis(b) => Lattice::ColBasis(b.transpose()),
                        Lattice::ColBasis(a) => Lattice::RowBasis(a.transpose()),
                    };
                    SchwartzTerm::new(t.coeff.clone(), t.c.transpose(), t.d.transpose(), lat)
                })
                .collect(),
        )
    }

    /// `(g.phi)(x) = phi(x g)` for invertible `g`.  Closed for vector
    /// shapes; on rectangular shapes only the compact-stable case (scalar
    /// entrywise lattice, zero phase and center, unimodular `g`) is exact.
    pub fn right_translate(&self, g: &Mat) -> Result<SchwartzSpan> {
        if g.rows() != self.cols || !g.is_square() {
            return Err(Error::Dimension("translation shape mismatch".into()));
        }
        let ginv = g.inverse().map_err(|_| Error::Singular)?;
        let mut out = Vec::with_capacity(self.terms.len());
        for t in &self.terms {
            // psi(tr(tc (x g))) = psi(tr(t(c tg) x)); support x g in d + L
            // means x in d g^{-1} + L g^{-1}.
            let c2 = &t.c * &g.transpose();
            let d2 = &t.d * &ginv;
            let lat2 = match &t.lat {
                Lattice::RowBasis(b) => Lattice::RowBasis(b * &ginv),
                // Column shapes see a 1x1 translation, a plain scaling.
                Lattice::ColBasis(a) => Lattice::ColBasis(a.scale(ginv.at(0, 0))),
                Lattice::Entrywise(m) if self.rows == 1 => {
                    let b = Mat::diag(m.iter().map(|&k| self.q.pow(k)).collect());
                    Lattice::RowBasis(&b * &ginv)
                }
                Lattice::Entrywise(m)
                    if m.iter().all(|&k| k == m[0])
                        && g.is_in_k(self.q)
                        && t.c.entries().iter().all(Rat::is_zero)
                        && t.d.entries().iter().all(Rat::is_zero) =>
                {
                    Lattice::Entrywise(m.clone())
                }
                Lattice::Entrywise(_) => {
                    return Err(Error::Capability(
                        "right translation on this shape needs a vector shape or a \
                         compact-stable indicator"
                            .into(),
                    ));
                }
            };
            out.push(SchwartzTerm::new(t.coeff.clone(), c2, d2, lat2));
        }
        Ok(SchwartzSpan::from_terms(self.q, self.rows, self.cols, out))
    }

    /// Exact Fourier transform on vector shapes, with respect to `psi`
    /// (`conj = false`) or its conjugate.  The result represents
    /// `y -> int phi(x) psi(+-<y, x>) dx`.
    pub fn fourier(&self, conj: bool) -> Result<SchwartzSpan> {
        if self.rows != 1 && self.cols != 1 {
            return Err(Error::Dimension(
                "Fourier transform restricted to vector shapes".into(),
            ));
        }
        let p = self.q;
        let mut out = Vec::with_capacity(self.terms.len());
        for t in &self.terms {
            let (vol, dual) = match &t.lat {
                Lattice::RowBasis(b) => (
                    abs_q(&b.det(), p),
                    Lattice::RowBasis(b.transpose().inverse()?),
                ),
                Lattice::ColBasis(a) => (
                    abs_q(&a.det(), p),
                    Lattice::ColBasis(a.transpose().inverse()?),
                ),
                Lattice::Entrywise(m) => {
                    let total: i64 = m.iter().sum();
                    (
                        p.pow(-total),
                        Lattice::Entrywise(m.iter().map(|&k| -k).collect()),
                    )
                }
            };
            let turns = psi_quarter_turns(&SchwartzTerm::pairing(&t.c, &t.d), p)?;
            let coeff = (&t.coeff * &Scalar::quarter_turn(p, turns)).mul_rat(&vol);
            let minus = -Rat::one();
            out.push(SchwartzTerm::new(
                coeff,
                t.d.clone(),
                t.c.scale(&minus),
                dual,
            ));
        }
        let f = SchwartzSpan::from_terms(self.q, self.rows, self.cols, out);
        Ok(if conj { f.negate_arg() } else { f })
    }

    /// Certified invariance under right translation by the full compact
    /// group: every term is a plain scalar-lattice indicator.  Sound but
    /// deliberately not complete.
    pub fn is_k_stable_cert(&self, p: Prime) -> bool {
        self.terms.iter().all(|t| {
            if !t.c.entries().iter().all(Rat::is_zero) {
                return false;
            }
            if !t.d.entries().iter().all(Rat::is_zero) {
                return false;
            }
            match &t.lat {
                Lattice::Entrywise(m) => m.iter().all(|&k| k == m[0]),
                Lattice::RowBasis(b) | Lattice::ColBasis(b) => {
                    // O B = p^m O^k exactly when B p^{-m} is unimodular,
                    // and m is then forced by the determinant.
                    let k = b.rows() as i64;
                    let dv = val(&b.det(), p).expect("basis invertible");
                    dv % k == 0 && b.scale(&p.pow(-dv / k)).is_in_k(p)
                }
            }
        })
    }

    /// Smallest `L >= 0` with `phi(x + w) = phi(x)` for all `w` in
    /// `p^L O^{a x b}`: every term's lattice must absorb the shift and
    /// every phase must be trivial on it.
    pub fn stability_depth(&self, p: Prime) -> i64 {
        let mut depth = 0i64;
        for t in &self.terms {
            let lat = match &t.lat {
                Lattice::Entrywise(m) => m.iter().copied().max().unwrap_or(0),
                Lattice::RowBasis(b) | Lattice::ColBasis(b) => {
                    let binv = b.inverse().expect("basis invertible");
                    -min_mat_val(&binv, p).expect("invertible basis")
                }
            };
            let phase = min_mat_val(&t.c, p).map_or(0, |v| -v);
            depth = depth.max(lat).max(phase);
        }
        depth.max(0)
    }

    /// Smallest valuation taken by an entry anywhere on the support;
    /// `None` for the zero span.
    pub fn support_val_floor(&self, p: Prime) -> Option<i64> {
        let mut floor: Option<i64> = None;
        for t in &self.terms {
            let lat = match &t.lat {
                Lattice::Entrywise(m) => m.iter().copied().min().unwrap_or(0),
                Lattice::RowBasis(b) | Lattice::ColBasis(b) => {
                    min_mat_val(b, p).expect("invertible basis")
                }
            };
            let f = min_mat_val(&t.d, p).map_or(lat, |dv| dv.min(lat));
            floor = Some(floor.map_or(f, |cur: i64| cur.min(f)));
        }
        floor
    }

    /// Certified depth `L >= 0` with `phi(x k) = phi(x)` for all `k` in
    /// the principal congruence subgroup of depth `L` (all of the compact
    /// group when `L = 0`).  Sound, not sharp.
    pub fn right_stability_depth(&self, p: Prime) -> i64 {
        match self.support_val_floor(p) {
            None => 0,
            Some(floor) => (self.stability_depth(p) - floor).max(0),
        }
    }

    /// Refine every term of a row span into entrywise boxes: cosets
    /// `w + p^N O^{1xb}` of a cube fine enough to sit inside the term's
    /// row lattice, one box per digit tuple of the triangular basis.
    /// Phases carry over unchanged.  Integration engines use the boxes
    /// to split a coupled row condition into per-entry ball conditions.
    pub fn entrywise_terms(&self, p: Prime) -> Result<Vec<SchwartzTerm>> {
        assert_eq!(self.rows, 1, "box refinement acts on row spans");
        let mut out = Vec::new();
        for t in &self.terms {
            let basis = match &t.lat {
                Lattice::Entrywise(_) => {
                    out.push(t.clone());
                    continue;
                }
                Lattice::RowBasis(b) => lattice_normal_form(b, p),
                Lattice::ColBasis(_) => unreachable!("row spans carry row lattices"),
            };
            let binv = basis.inverse()?;
            let n = -min_mat_val(&binv, p).ok_or(Error::Singular)?;
            // Digit counts per basis row: p^N O^b has index prod q^{N - e_i}.
            let mut counts = Vec::with_capacity(self.cols);
            let mut total: u64 = 1;
            for i in 0..self.cols {
                let e = val(basis.at(i, i), p).expect("triangular basis");
                let c = (p.get() as u64)
                    .checked_pow((n - e) as u32)
                    .filter(|&c| c <= BOX_CAP && total.saturating_mul(c) <= BOX_CAP)
                    .ok_or_else(|| Error::Capability("box refinement too large".into()))?;
                total *= c;
                counts.push(c);
            }
            let mut idx = vec![0u64; self.cols];
            loop {
                let mut w = Mat::zeros(1, self.cols);
                for (i, &k) in idx.iter().enumerate() {
                    let coef = Rat::from_integer(k.into());
                    for j in 0..self.cols {
                        let v = w.at(0, j) + &(&coef * basis.at(i, j));
                        w.set(0, j, v);
                    }
                }
                out.push(SchwartzTerm::new(
                    t.coeff.clone(),
                    t.c.clone(),
                    t.d.add(&w),
                    Lattice::Entrywise(vec![n; self.cols]),
                ));
                // Odometer over the digit tuples.
                let mut i = 0;
                loop {
                    if i == self.cols {
                        break;
                    }
                    idx[i] += 1;
                    if idx[i] < counts[i] {
                        break;
                    }
                    idx[i] = 0;
                    i += 1;
                }
                if i == self.cols {
                    break;
                }
            }
        }
        Ok(out)
    }

    /// Canonicalize: lattice bases to triangular normal form, centers
    /// reduced modulo the lattice, phases modulo the dual lattice (phase
    /// permitting), terms coalesced under a fixed order.
    fn canonicalize(&mut self) {
        let p = self.q;
        for t in self.terms.iter_mut() {
            // Promote vector entrywise lattices to basis form so equal
            // lattices meet in one representation.
            if let Lattice::Entrywise(m) = &t.lat {
                if self.rows == 1 {
                    t.lat = Lattice::RowBasis(Mat::diag(m.iter().map(|&k| p.pow(k)).collect()));
                } else if self.cols == 1 {
                    t.lat = Lattice::ColBasis(Mat::diag(m.iter().map(|&k| p.pow(k)).collect()));
                }
            }
            // On a 1x1 shape the two basis forms coincide; pick the row one.
            if self.rows == 1 && self.cols == 1 {
                if let Lattice::ColBasis(a) = &t.lat {
                    t.lat = Lattice::RowBasis(a.clone());
                }
            }
            match &mut t.lat {
                Lattice::RowBasis(b) => *b = lattice_normal_form(b, p),
                Lattice::ColBasis(a) => {
                    *a = lattice_normal_form(&a.transpose(), p).transpose()
                }
                Lattice::Entrywise(_) => {}
            }
            // Center modulo the lattice.
            match &t.lat {
                Lattice::Entrywise(m) => {
                    let mut d2 = t.d.clone();
                    for i in 0..d2.rows() {
                        for j in 0..d2.cols() {
                            let dep = m[i * d2.cols() + j];
                            let r = digit_rep(d2.at(i, j), p, dep);
                            d2.set(i, j, r);
                        }
                    }
                    t.d = d2;
                }
                Lattice::RowBasis(b) => {
                    let lam = &t.d * &b.inverse().expect("basis invertible");
                    let mut red = Mat::zeros(1, lam.cols());
                    for j in 0..lam.cols() {
                        red.set(0, j, frac_part(lam.at(0, j), p));
                    }
                    t.d = &red * b;
                }
                Lattice::ColBasis(a) => {
                    let lam = &a.inverse().expect("basis invertible") * &t.d;
                    let mut red = Mat::zeros(lam.rows(), 1);
                    for i in 0..lam.rows() {
                        red.set(i, 0, frac_part(lam.at(i, 0), p));
                    }
                    t.d = a * &red;
                }
            }
            // Phase modulo the dual lattice, when the correction phase is
            // representable; otherwise keep the phase vector as given.
            let reduced_c: Option<Mat> = match &t.lat {
                Lattice::Entrywise(m) => {
                    let mut c2 = t.c.clone();
                    for i in 0..c2.rows() {
                        for j in 0..c2.cols() {
                            let dep = m[i * c2.cols() + j];
                            let r = digit_rep(c2.at(i, j), p, -dep);
                            c2.set(i, j, r);
                        }
                    }
                    Some(c2)
                }
                Lattice::RowBasis(b) => {
                    let mu = &t.c * &b.transpose();
                    let mut red = Mat::zeros(1, mu.cols());
                    for j in 0..mu.cols() {
                        red.set(0, j, frac_part(mu.at(0, j), p));
                    }
                    Some(&red * &b.transpose().inverse().expect("basis invertible"))
                }
                Lattice::ColBasis(a) => {
                    let mu = &a.transpose() * &t.c;
                    let mut red = Mat::zeros(mu.rows(), 1);
                    for i in 0..mu.rows() {
                        red.set(i, 0, frac_part(mu.at(i, 0), p));
                    }
                    Some(&a.transpose().inverse().expect("basis invertible") * &red)
                }
            };
            if let Some(c2) = reduced_c {
                if c2 != t.c {
                    let delta = t.c.add(&c2.scale(&-Rat::one()));
                    if let Ok(turns) =
                        psi_quarter_turns(&SchwartzTerm::pairing(&delta, &t.d), p)
                    {
                        t.coeff = &t.coeff * &Scalar::quarter_turn(p, turns);
                        t.c = c2;
                    }
                }
            }
        }
        // Coalesce identical (lattice, c, d) keys and drop zeros.
        self.terms
            .sort_by(|a, b| (&a.lat, &a.c, &a.d).cmp(&(&b.lat, &b.c, &b.d)));
        let mut merged: Vec<SchwartzTerm> = Vec::with_capacity(self.terms.len());
        for t in self.terms.drain(..) {
            match merged.last_mut() {
                Some(last) if last.lat == t.lat && last.c == t.c && last.d == t.d => {
                    last.coeff = &last.coeff + &t.coeff;
                }
                _ => merged.push(t),
            }
        }
        merged.retain(|t| !t.coeff.is_zero());
        self.terms = merged;
    }
}

/// Triangular normal form of a row-lattice basis over the valuation ring:
/// the unique basis, in the `GL(O)` orbit of left multiplication, that is
/// upper triangular with diagonal `p^{e_i}` and above-diagonal entries
/// equal to their digit representatives modulo the column's pivot.
pub fn lattice_normal_form(b: &Mat, p: Prime) -> Mat {
    assert!(b.is_square());
    let k = b.rows();
    let mut m = b.clone();
    for col in 0..k {
        // Pivot: minimal valuation in this column among rows >= col.
        let mut best: Option<(i64, usize)> = None;
        for r in col..k {
            if let Some(v) = val(m.at(r, col), p) {
                if best.map_or(true, |(bv, _)| v < bv) {
                    best = Some((v, r));
                }
            }
        }
        let (pv, pr) = best.expect("lattice basis is invertible");
        if pr != col {
            for j in 0..k {
                let a = m.at(col, j).clone();
                m.set(col, j, m.at(pr, j).clone());
                m.set(pr, j, a);
            }
        }
        // Normalize the pivot row so the pivot is exactly p^{pv}.
        let unit = m.at(col, col) * p.pow(-pv);
        let uinv = Rat::one() / unit;
        for j in 0..k {
            let v = m.at(col, j) * &uinv;
            m.set(col, j, v);
        }
        // Clear below, reduce above to digit representatives.
        for r in 0..k {
            if r == col || m.at(r, col).is_zero() {
                continue;
            }
            let f = if r > col {
                m.at(r, col) / m.at(col, col)
            } else {
                let rep = digit_rep(m.at(r, col), p, pv);
                (m.at(r, col) - &rep) / m.at(col, col)
            };
            debug_assert!(val(&f, p).map_or(true, |v| v >= 0));
            for j in 0..k {
                let v = m.at(r, j) - &(&f * m.at(col, j));
                m.set(r, j, v);
            }
        }
    }
    m
}

fn min_mat_val(m: &Mat, p: Prime) -> Option<i64> {
    m.entries().iter().filter_map(|x| val(x, p)).min()
}

/// A Schwartz function on `a x b` matrices that is a product of row
/// spans: `Phi(x) = prod_i phi_i(row_i x)`.  Closed under right
/// translation (it acts row by row), which is all the section calculus
/// needs; sums of such products are carried by the callers.
#[derive(Clone, Debug, PartialEq)]
pub struct RowTensor {
    rows: Vec<SchwartzSpan>,
}

impl RowTensor {
    pub fn new(rows: Vec<SchwartzSpan>) -> RowTensor {
        assert!(!rows.is_empty(), "empty tensor");
        let cols = rows[0].shape().1;
        for r in &rows {
            assert_eq!(r.shape(), (1, cols), "tensor factors must be rows");
            assert!(r.q() == rows[0].q());
        }
        RowTensor { rows }
    }

    /// `1_{O^{rows x cols}}` as a product of unit-ball rows.
    pub fn unit_ball(q: Prime, rows: usize, cols: usize) -> RowTensor {
        RowTensor::new(vec![SchwartzSpan::unit_ball(q, 1, cols, 0); rows])
    }

    pub fn q(&self) -> Prime {
        self.rows[0].q()
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows.len(), self.rows[0].shape().1)
    }

    pub fn factors(&self) -> &[SchwartzSpan] {
        &self.rows
    }

    pub fn factor(&self, i: usize) -> &SchwartzSpan {
        &self.rows[i]
    }

    pub fn is_zero(&self) -> bool {
        self.rows.iter().any(SchwartzSpan::is_zero)
    }

    pub fn eval_at(&self, x: &Mat, p: Prime) -> Result<Scalar> {
        assert_eq!((x.rows(), x.cols()), self.shape());
        let mut acc = Scalar::one(p);
        for (i, f) in self.rows.iter().enumerate() {
            acc = &acc * &f.eval_at(&x.row(i), p)?;
        }
        Ok(acc)
    }

    pub fn right_translate(&self, g: &Mat) -> Result<RowTensor> {
        let rows = self
            .rows
            .iter()
            .map(|f| f.right_translate(g))
            .collect::<Result<Vec<_>>>()?;
        Ok(RowTensor { rows })
    }

    /// See [`SchwartzSpan::right_stability_depth`]; a product is stable
    /// where every factor is.
    pub fn right_stability_depth(&self, p: Prime) -> i64 {
        self.rows
            .iter()
            .map(|f| f.right_stability_depth(p))
            .max()
            .unwrap_or(0)
    }

    /// Certified depth `L >= 0` with `Phi(k x) = Phi(x)` for `k` in the
    /// principal congruence subgroup of depth `L`.  Left translation
    /// mixes rows, so the bound couples each factor's stability with the
    /// deepest support entry of the whole tensor.
    pub fn left_stability_depth(&self, p: Prime) -> i64 {
        if self.is_zero() {
            return 0;
        }
        let sigma = self
            .rows
            .iter()
            .map(|f| f.stability_depth(p))
            .max()
            .unwrap_or(0);
        let floor = self
            .rows
            .iter()
            .filter_map(|f| f.support_val_floor(p))
            .min()
            .unwrap_or(0);
        (sigma - floor).max(0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_bigint::BigInt;

    fn q5() -> Prime {
        Prime::new(5).unwrap()
    }

    fn q2() -> Prime {
        Prime::new(2).unwrap()
    }

    fn q3() -> Prime {
        Prime::new(3).unwrap()
    }

    fn rat(n: i64, d: i64) -> Rat {
        Rat::new(BigInt::from(n), BigInt::from(d))
    }

    fn row1(q: Prime, x: Rat) -> Mat {
        let mut m = Mat::zeros(1, 1);
        let _ = q;
        m.set(0, 0, x);
        m
    }

    #[test]
    fn fourier_frozen_examples() {
        let p = q5();
        // 1_O is self-dual.
        let phi = SchwartzSpan::unit_ball(p, 1, 1, 0);
        assert_eq!(phi.fourier(false).unwrap(), phi);
        // 1_{pO} -> q^{-1} 1_{p^{-1}O}.
        let phi = SchwartzSpan::unit_ball(p, 1, 1, 1);
        let f = phi.fourier(false).unwrap();
        let expect = SchwartzSpan::unit_ball(p, 1, 1, -1)
            .scale(&Scalar::from_rat(p, rat(1, 5)));
        assert_eq!(f, expect);
        // psi(c .) 1_O -> 1_{-c + O}.
        let c = row1(p, rat(1, 5));
        let t = SchwartzTerm::new(
            Scalar::one(p),
            c.clone(),
            Mat::zeros(1, 1),
            Lattice::Entrywise(vec![0]),
        );
        let f = SchwartzSpan::single(t).fourier(false).unwrap();
        let expect = SchwartzSpan::single(SchwartzTerm::new(
            Scalar::one(p),
            Mat::zeros(1, 1),
            c.scale(&-Rat::one()),
            Lattice::Entrywise(vec![0]),
        ));
        assert_eq!(f, expect);
    }

    #[test]
    fn double_fourier_is_negation() {
        let p = q5();
        let mut c = Mat::zeros(1, 2);
        c.set(0, 1, rat(2, 5));
        let base = SchwartzTerm::new(
            Scalar::from_int(p, 3),
            c,
            Mat::zeros(1, 2),
            Lattice::Entrywise(vec![1, -1]),
        );
        let mut d = Mat::zeros(1, 2);
        d.set(0, 0, rat(1, 1));
        d.set(0, 1, rat(3, 5));
        let shifted = SchwartzTerm::new(
            Scalar::i(p),
            Mat::zeros(1, 2),
            d,
            Lattice::Entrywise(vec![0, 2]),
        );
        for t in [base, shifted] {
            let span = SchwartzSpan::single(t);
            let ff = span.fourier(false).unwrap().fourier(false).unwrap();
            assert_eq!(ff, span.negate_arg());
            let ff = span.fourier(true).unwrap().fourier(true).unwrap();
            assert_eq!(ff, span.negate_arg());
        }
    }

    #[test]
    fn conjugate_fourier_is_negated_fourier() {
        let p = q5();
        let phi = SchwartzSpan::unit_ball(p, 1, 2, 1);
        let a = phi.fourier(true).unwrap();
        let b = phi.fourier(false).unwrap().negate_arg();
        assert_eq!(a, b);
    }

    #[test]
    fn translate_examples() {
        let p = q5();
        let phi = SchwartzSpan::unit_ball(p, 1, 1, 0);
        // By the identity: unchanged.
        assert_eq!(phi.right_translate(&Mat::identity(1)).unwrap(), phi);
        // By the uniformizer: support becomes p^{-1} O.
        let g = row1(p, rat(5, 1));
        let f = phi.right_translate(&g).unwrap();
        assert_eq!(f, SchwartzSpan::unit_ball(p, 1, 1, -1));
        // Pointwise oracle at 1, p^{-1}, p^{-2}.
        for (x, expect) in [(rat(1, 1), 1i64), (rat(1, 5), 1), (rat(1, 25), 0)] {
            let v = f.eval_at(&row1(p, x), p).unwrap();
            assert_eq!(v, Scalar::from_int(p, expect));
        }
    }

    #[test]
    fn translate_composition() {
        let p = q5();
        let g = Mat::from_int_rows(&[&[5, 1], &[0, 1]]);
        let h = Mat::from_int_rows(&[&[1, 0], &[2, 1]]);
        let mut d = Mat::zeros(1, 2);
        d.set(0, 0, rat(1, 5));
        let phi = SchwartzSpan::single(SchwartzTerm::new(
            Scalar::one(p),
            Mat::zeros(1, 2),
            d,
            Lattice::Entrywise(vec![2, 0]),
        ));
        // As operators, translate(g) after translate(h) is translate(g h).
        let a = phi
            .right_translate(&h)
            .unwrap()
            .right_translate(&g)
            .unwrap();
        let b = phi.right_translate(&(&g * &h)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn transpose_swaps_shape() {
        let p = q5();
        let phi = SchwartzSpan::unit_ball(p, 2, 1, 0);
        let t = phi.transpose();
        assert_eq!(t.shape(), (1, 2));
        assert_eq!(t, SchwartzSpan::unit_ball(p, 1, 2, 0));
    }

    #[test]
    fn pointwise_phase_evaluation() {
        let p2 = Prime::new(2).unwrap();
        let c = row1(p2, rat(1, 4));
        let t = SchwartzTerm::new(
            Scalar::one(p2),
            c,
            Mat::zeros(1, 1),
            Lattice::Entrywise(vec![0]),
        );
        // psi(1/4 * 1) = i.
        let v = t.eval_at(&row1(p2, rat(1, 1)), p2).unwrap();
        assert_eq!(v, Scalar::i(p2));
        // Outside the support: 0.
        let v = t.eval_at(&row1(p2, rat(1, 2)), p2).unwrap();
        assert!(v.is_zero());
        // Irrational phase at p = 5 is refused.
        let p = q5();
        let t = SchwartzTerm::new(
            Scalar::one(p),
            row1(p, rat(1, 5)),
            Mat::zeros(1, 1),
            Lattice::Entrywise(vec![0]),
        );
        assert!(t.eval_at(&row1(p, rat(1, 1)), p).is_err());
    }

    #[test]
    fn canonical_form_merges_equal_lattices() {
        let p = q5();
        // Two bases of the same lattice O^2 (second is a shear of it).
        let b1 = Mat::identity(2);
        let b2 = Mat::from_int_rows(&[&[1, 3], &[0, 1]]);
        let mk = |b: Mat| {
            SchwartzTerm::new(
                Scalar::one(p),
                Mat::zeros(1, 2),
                Mat::zeros(1, 2),
                Lattice::RowBasis(b),
            )
        };
        let span = SchwartzSpan::from_terms(p, 1, 2, vec![mk(b1), mk(b2)]);
        assert_eq!(span.terms().len(), 1);
        assert_eq!(span.terms()[0].coeff, Scalar::from_int(p, 2));
        // Center reduction: d inside the lattice vanishes.
        let mut d = Mat::zeros(1, 2);
        d.set(0, 0, rat(10, 1));
        let t = SchwartzTerm::new(
            Scalar::one(p),
            Mat::zeros(1, 2),
            d,
            Lattice::Entrywise(vec![0, 0]),
        );
        let span = SchwartzSpan::single(t);
        assert_eq!(span, SchwartzSpan::unit_ball(p, 1, 2, 0));
    }

    #[test]
    fn phase_reduction_with_quarter_turn() {
        let p2 = Prime::new(2).unwrap();
        // c = 5/4 reduces to 1/4 modulo the dual of O (which is O itself);
        // the correction phase is psi((5/4 - 1/4) * d) = psi(d).
        let c = row1(p2, rat(5, 4));
        let d = row1(p2, rat(1, 2));
        let t = SchwartzTerm::new(Scalar::one(p2), c, d.clone(), Lattice::Entrywise(vec![1]));
        let span = SchwartzSpan::single(t);
        assert_eq!(span.terms().len(), 1);
        let got = &span.terms()[0];
        assert_eq!(got.c, row1(p2, rat(1, 4)));
        // psi(1 * 1/2) = -1.
        assert_eq!(got.coeff, Scalar::from_int(p2, -1));
    }

    #[test]
    fn k_stability_certificate() {
        let p = q5();
        assert!(SchwartzSpan::unit_ball(p, 1, 2, 3).is_k_stable_cert(p));
        assert!(SchwartzSpan::unit_ball(p, 2, 2, 0).is_k_stable_cert(p));
        let mut d = Mat::zeros(1, 2);
        d.set(0, 0, rat(1, 5));
        let t = SchwartzTerm::new(
            Scalar::one(p),
            Mat::zeros(1, 2),
            d,
            Lattice::Entrywise(vec![0, 0]),
        );
        assert!(!SchwartzSpan::single(t).is_k_stable_cert(p));
        let skew = SchwartzTerm::new(
            Scalar::one(p),
            Mat::zeros(1, 2),
            Mat::zeros(1, 2),
            Lattice::Entrywise(vec![0, 1]),
        );
        assert!(!SchwartzSpan::single(skew).is_k_stable_cert(p));
    }

    #[test]
    fn lattice_normal_form_is_canonical() {
        let p = q5();
        let b = Mat::from_int_rows(&[&[5, 7], &[10, 3]]);
        let n = lattice_normal_form(&b, p);
        // Triangular, diagonal powers of p.
        assert!(n.at(1, 0).is_zero());
        assert_eq!(val(n.at(0, 0), p).unwrap() + val(n.at(1, 1), p).unwrap(),
                   val(&b.det(), p).unwrap());
        // Any unimodular change of basis lands on the same form.
        let u = Mat::from_int_rows(&[&[1, 0], &[4, 1]]);
        let n2 = lattice_normal_form(&(&u * &b), p);
        assert_eq!(n, n2);
    }

    // A small but non-degenerate point set reaching outside the unit
    // ball in both coordinates.
    fn probe_points(p: Prime) -> Vec<Mat> {
        let mut reps = vec![Rat::zero()];
        for k in 1..8i64 {
            reps.push(Rat::new(k.into(), 4.into()));
        }
        let mut out = Vec::new();
        for a in &reps {
            for b in &reps {
                out.push(Mat::from_rows(vec![vec![a.clone(), b.clone()]]));
            }
        }
        let _ = p;
        out
    }

    fn congruence_elements(p: Prime, l: i64) -> Vec<Mat> {
        // 1 + p^l u for integer u mod p^2, plus generic compact elements
        // when l = 0.
        let n = p.get().pow(2) as i64;
        let mut out = Vec::new();
        for a in 0..n {
            for b in 0..n {
                for c in 0..n {
                    for d in 0..n {
                        let u = Mat::from_int_rows(&[&[a, b], &[c, d]]);
                        let g = Mat::identity(2).add(&u.scale(&p.pow(l)));
                        if val(&g.det(), p) == Some(0) {
                            out.push(g);
                        }
                    }
                }
            }
        }
        out
    }

    #[test]
    fn right_stability_depth_is_sound() {
        let p = q2();
        let shear = Mat::from_rows(vec![
            vec![Rat::new(1.into(), 2.into()), Rat::one()],
            vec![Rat::zero(), Rat::one()],
        ]);
        let phased = SchwartzSpan::single(SchwartzTerm::new(
            Scalar::one(p),
            Mat::from_rows(vec![vec![Rat::new(1.into(), 2.into()), Rat::zero()]]),
            Mat::from_rows(vec![vec![Rat::one(), Rat::zero()]]),
            Lattice::Entrywise(vec![1, 0]),
        ));
        let spans = [
            SchwartzSpan::unit_ball(p, 1, 2, 0),
            SchwartzSpan::unit_ball(p, 1, 2, 0)
                .right_translate(&shear)
                .unwrap(),
            phased,
        ];
        for span in &spans {
            let l = span.right_stability_depth(p);
            for g in congruence_elements(p, l) {
                for x in probe_points(p) {
                    let lhs = span.eval_at(&(&x * &g), p).unwrap();
                    let rhs = span.eval_at(&x, p).unwrap();
                    assert_eq!(lhs, rhs, "depth {l} not invariant");
                }
            }
        }
    }

    #[test]
    fn row_tensor_translation_matches_pointwise() {
        let p = q3();
        let top = SchwartzSpan::unit_ball(p, 1, 2, 0);
        let bot = SchwartzSpan::unit_ball(p, 1, 2, 1);
        let tensor = RowTensor::new(vec![top, bot]);
        let g = Mat::from_rows(vec![
            vec![Rat::new(1.into(), 3.into()), Rat::one()],
            vec![Rat::one(), Rat::zero()],
        ]);
        let moved = tensor.right_translate(&g).unwrap();
        for a in probe_points(p) {
            for b in probe_points(p).iter().step_by(13) {
                let x = Mat::from_rows(vec![
                    vec![a.at(0, 0).clone(), a.at(0, 1).clone()],
                    vec![b.at(0, 0).clone(), b.at(0, 1).clone()],
                ]);
                let lhs = tensor.eval_at(&(&x * &g), p).unwrap();
                let rhs = moved.eval_at(&x, p).unwrap();
                assert_eq!(lhs, rhs);
            }
        }
    }

    #[test]
    fn entrywise_boxes_reproduce_the_span() {
        let p = q2();
        // A skew row lattice, a shifted center and a phase, plus a plain
        // scaled ball; boxes must agree pointwise and tile by volume.
        let basis = Mat::from_rows(vec![
            vec![Rat::one(), Rat::one()],
            vec![Rat::zero(), rat(2, 1)],
        ]);
        let skew = SchwartzTerm::new(
            Scalar::from_int(p, 2),
            Mat::from_rows(vec![vec![rat(1, 2), Rat::zero()]]),
            Mat::from_rows(vec![vec![rat(1, 2), Rat::zero()]]),
            Lattice::RowBasis(basis),
        );
        let plain = SchwartzTerm::unit_ball(p, 1, 2, -1);
        let span = SchwartzSpan::from_terms(p, 1, 2, vec![skew, plain]);
        let boxes = span.entrywise_terms(p).unwrap();
        let rebuilt = SchwartzSpan::from_terms(p, 1, 2, boxes.clone());
        for x in probe_points(p) {
            assert_eq!(
                span.eval_at(&x, p).unwrap(),
                rebuilt.eval_at(&x, p).unwrap(),
                "x = {:?}",
                x
            );
        }
        let mut vol = Rat::zero();
        for b in &boxes {
            if let Lattice::Entrywise(m) = &b.lat {
                vol = vol + p.pow(-(m[0] + m[1]));
            } else {
                panic!("box refinement must yield entrywise lattices");
            }
        }
        let mut want = Rat::zero();
        for t in span.terms() {
            want = want + t.support_volume(p);
        }
        assert_eq!(vol, want);
    }

    #[test]
    fn left_stability_depth_is_sound() {
        let p = q2();
        let shear = Mat::from_rows(vec![
            vec![Rat::new(1.into(), 2.into()), Rat::one()],
            vec![Rat::zero(), Rat::one()],
        ]);
        let tensor = RowTensor::unit_ball(p, 2, 2)
            .right_translate(&shear)
            .unwrap();
        let l = tensor.left_stability_depth(p);
        for g in congruence_elements(p, l) {
            for a in probe_points(p) {
                for b in probe_points(p).iter().step_by(17) {
                    let x = Mat::from_rows(vec![
                        vec![a.at(0, 0).clone(), a.at(0, 1).clone()],
                        vec![b.at(0, 0).clone(), b.at(0, 1).clone()],
                    ]);
                    let lhs = tensor.eval_at(&(&g * &x), p).unwrap();
                    let rhs = tensor.eval_at(&x, p).unwrap();
                    assert_eq!(lhs, rhs);
                }
            }
        }
    }
}
