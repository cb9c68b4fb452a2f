//! Exact matrices over the rationals: the ambient general linear groups,
//! the antidiagonal involutions `w_k`, the inductive family `z_k` whose
//! translates open the orbit the zeta integrals are supported on, and the
//! transpose-inverse involutions used by functional equations.

use alloc::vec;
use alloc::vec::Vec;
use core::fmt;
use core::ops::Mul;

use num_bigint::BigInt;
use num_traits::{One, Signed, Zero};

use crate::err::{Error, Result};
use crate::field::{val, Prime, Rat};

/// Dense rectangular matrix of exact rationals, row-major, 0-indexed.
/// The derived order is lexicographic on (rows, cols, entries); it carries
/// no geometric meaning and exists for use in ordered container keys.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct Mat {
    rows: usize,
    cols: usize,
    e: Vec<Rat>,
}

impl Mat {
    pub fn zeros(rows: usize, cols: usize) -> Mat {
        Mat {
            rows,
            cols,
            e: vec![Rat::zero(); rows * cols],
        }
    }

    pub fn identity(k: usize) -> Mat {
        let mut m = Mat::zeros(k, k);
        for i in 0..k {
            m.set(i, i, Rat::one());
        }
        m
    }

    pub fn from_rows(rows: Vec<Vec<Rat>>) -> Mat {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        assert!(rows.iter().all(|row| row.len() == c), "ragged rows");
        Mat {
            rows: r,
            cols: c,
            e: rows.into_iter().flatten().collect(),
        }
    }

    pub fn from_int_rows(rows: &[&[i64]]) -> Mat {
        Mat::from_rows(
            rows.iter()
                .map(|r| r.iter().map(|&n| Rat::from_integer(BigInt::from(n))).collect())
                .collect(),
        )
    }

    pub fn diag(entries: Vec<Rat>) -> Mat {
        let k = entries.len();
        let mut m = Mat::zeros(k, k);
        for (i, x) in entries.into_iter().enumerate() {
            m.set(i, i, x);
        }
        m
    }

    /// The row vector `e_k = [0, ..., 0, 1]`.
    pub fn e_row(k: usize) -> Mat {
        let mut m = Mat::zeros(1, k);
        if k > 0 {
            m.set(0, k - 1, Rat::one());
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    #[inline]
    pub fn at(&self, i: usize, j: usize) -> &Rat {
        &self.e[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, x: Rat) {
        self.e[i * self.cols + j] = x;
    }

    pub fn entries(&self) -> &[Rat] {
        &self.e
    }

    /// Row `i` as a `1 x cols` matrix.
    pub fn row(&self, i: usize) -> Mat {
        assert!(i < self.rows);
        let mut m = Mat::zeros(1, self.cols);
        for j in 0..self.cols {
            m.set(0, j, self.at(i, j).clone());
        }
        m
    }

    pub fn transpose(&self) -> Mat {
        let mut m = Mat::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                m.set(j, i, self.at(i, j).clone());
            }
        }
        m
    }

    /// Paste `block` into `self` with upper-left corner at `(i, j)`.
    pub fn paste(&mut self, i: usize, j: usize, block: &Mat) {
        assert!(i + block.rows <= self.rows && j + block.cols <= self.cols);
        for a in 0..block.rows {
            for b in 0..block.cols {
                self.set(i + a, j + b, block.at(a, b).clone());
            }
        }
    }

    /// `diag(h, 1_extra)`: the standard embedding of a smaller group in the
    /// upper-left corner.
    pub fn embed_upper_left(&self, extra: usize) -> Mat {
        assert!(self.is_square());
        let k = self.rows + extra;
        let mut m = Mat::identity(k);
        m.paste(0, 0, self);
        m
    }

    pub fn scale(&self, x: &Rat) -> Mat {
        Mat {
            rows: self.rows,
            cols: self.cols,
            e: self.e.iter().map(|v| v * x).collect(),
        }
    }

    pub fn add(&self, o: &Mat) -> Mat {
        assert!(self.rows == o.rows && self.cols == o.cols, "shape mismatch");
        Mat {
            rows: self.rows,
            cols: self.cols,
            e: self.e.iter().zip(&o.e).map(|(a, b)| a + b).collect(),
        }
    }

    /// Exact determinant by rational Gaussian elimination.
    pub fn det(&self) -> Rat {
        assert!(self.is_square(), "determinant of a non-square matrix");
        let k = self.rows;
        let mut m = self.clone();
        let mut det = Rat::one();
        for col in 0..k {
            let pivot = match (col..k).find(|&r| !m.at(r, col).is_zero()) {
                None => return Rat::zero(),
                Some(r) => r,
            };
            if pivot != col {
                for j in 0..k {
                    let a = m.at(col, j).clone();
                    let b = m.at(pivot, j).clone();
                    m.set(col, j, b);
                    m.set(pivot, j, a);
                }
                det = -det;
            }
            let p = m.at(col, col).clone();
            det = det * &p;
            for r in col + 1..k {
                if m.at(r, col).is_zero() {
                    continue;
                }
                let f = m.at(r, col) / &p;
                for j in col..k {
                    let v = m.at(r, j) - &(&f * m.at(col, j));
                    m.set(r, j, v);
                }
            }
        }
        det
    }

    /// Exact inverse by Gauss-Jordan elimination.
    pub fn inverse(&self) -> Result<Mat> {
        assert!(self.is_square(), "inverse of a non-square matrix");
        let k = self.rows;
        let mut m = self.clone();
        let mut inv = Mat::identity(k);
        for col in 0..k {
            let pivot = match (col..k).find(|&r| !m.at(r, col).is_zero()) {
                None => return Err(Error::Singular),
                Some(r) => r,
            };
            if pivot != col {
                for j in 0..k {
                    let a = m.at(col, j).clone();
                    m.set(col, j, m.at(pivot, j).clone());
                    m.set(pivot, j, a);
                    let a = inv.at(col, j).clone();
                    inv.set(col, j, inv.at(pivot, j).clone());
                    inv.set(pivot, j, a);
                }
            }
            let p = m.at(col, col).clone();
            let pinv = Rat::one() / p;
            for j in 0..k {
                let v = m.at(col, j) * &pinv;
                m.set(col, j, v);
                let v = inv.at(col, j) * &pinv;
                inv.set(col, j, v);
            }
            for r in 0..k {
                if r == col || m.at(r, col).is_zero() {
                    continue;
                }
                let f = m.at(r, col).clone();
                for j in 0..k {
                    let v = m.at(r, j) - &(&f * m.at(col, j));
                    m.set(r, j, v);
                    let v = inv.at(r, j) - &(&f * inv.at(col, j));
                    inv.set(r, j, v);
                }
            }
        }
        Ok(inv)
    }

    /// Transpose inverse, `g -> (g^t)^{-1}`; an involution and an
    /// automorphism of the group.
    pub fn iota(&self) -> Result<Mat> {
        Ok(self.inverse()?.transpose())
    }

    /// Conjugated dual `g -> w_k g^iota w_k`, the involution under which
    /// dual sections transform.
    pub fn hat_conj(&self) -> Result<Mat> {
        let w = make_w(self.rows);
        Ok(&(&w * &self.iota()?) * &w)
    }

    /// All entries p-integral (denominators prime to p).
    pub fn is_p_integral(&self, p: Prime) -> bool {
        self.e.iter().all(|x| val(x, p).map_or(true, |v| v >= 0))
    }

    /// Membership in the maximal compact: p-integral entries and unit
    /// determinant.
    pub fn is_in_k(&self, p: Prime) -> bool {
        self.is_square() && self.is_p_integral(p) && val(&self.det(), p) == Some(0)
    }

    /// All entries integers (used by unimodularity checks).
    pub fn is_integer(&self) -> bool {
        self.e.iter().all(Rat::is_integer)
    }

    pub fn is_lower_triangular(&self) -> bool {
        if !self.is_square() {
            return false;
        }
        for i in 0..self.rows {
            for j in i + 1..self.cols {
                if !self.at(i, j).is_zero() {
                    return false;
                }
            }
        }
        true
    }
}

impl Mul for &Mat {
    type Output = Mat;
    fn mul(self, o: &Mat) -> Mat {
        assert!(self.cols == o.rows, "inner dimension mismatch");
        let mut m = Mat::zeros(self.rows, o.cols);
        for i in 0..self.rows {
            for j in 0..o.cols {
                let mut acc = Rat::zero();
                for t in 0..self.cols {
                    let a = self.at(i, t);
                    if a.is_zero() {
                        continue;
                    }
                    acc = acc + a * o.at(t, j);
                }
                m.set(i, j, acc);
            }
        }
        m
    }
}

impl Mul for Mat {
    type Output = Mat;
    fn mul(self, o: Mat) -> Mat {
        &self * &o
    }
}

impl fmt::Debug for Mat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[")?;
        for i in 0..self.rows {
            if i > 0 {
                write!(f, "; ")?;
            }
            for j in 0..self.cols {
                if j > 0 {
                    write!(f, " ")?;
                }
                write!(f, "{}", self.at(i, j))?;
            }
        }
        write!(f, "]")
    }
}

/// The antidiagonal involution `w_k`.
pub fn make_w(k: usize) -> Mat {
    let mut m = Mat::zeros(k, k);
    for i in 0..k {
        m.set(i, k - 1 - i, Rat::one());
    }
    m
}

/// The inductive unipotent family `z_k`, built bottom-up:
/// `z_0` empty, `z_1 = [1]`, and for `k >= 2`
///
/// ```text
/// z_k = [w_{k-1} 0] [z_{k-2}^{-1} 0 ] [ tz_{k-1} w_{k-1} z_{k-1}  te_{k-1} ]
///       [０     1] [0          1_2] [ 0                         1        ]
/// ```
///
/// All entries stay integral and the determinant is a sign; both are
/// asserted rather than assumed.
pub fn make_z(k: usize) -> Mat {
    let mut zs: Vec<Mat> = Vec::with_capacity(k + 1);
    zs.push(Mat::zeros(0, 0));
    if k >= 1 {
        zs.push(Mat::identity(1));
    }
    for m in 2..=k {
        let w = make_w(m - 1);
        let f1 = w.embed_upper_left(1);
        let f2 = zs[m - 2]
            .inverse()
            .expect("z is unimodular")
            .embed_upper_left(2);
        let core = &(&zs[m - 1].transpose() * &w) * &zs[m - 1];
        let mut f3 = Mat::identity(m);
        f3.paste(0, 0, &core);
        f3.set(m - 2, m - 1, Rat::one());
        let z = &(&f1 * &f2) * &f3;
        debug_assert!(z.is_integer(), "z_{m} left the integers");
        debug_assert!(z.det().abs().is_one(), "z_{m} is not unimodular");
        zs.push(z);
    }
    zs.pop().expect("k + 1 entries built")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rat(n: i64, d: i64) -> Rat {
        Rat::new(BigInt::from(n), BigInt::from(d))
    }

    #[test]
    fn w_family() {
        assert_eq!(make_w(1), Mat::from_int_rows(&[&[1]]));
        assert_eq!(make_w(2), Mat::from_int_rows(&[&[0, 1], &[1, 0]]));
        for k in 0..6 {
            let w = make_w(k);
            assert_eq!(&w * &w, Mat::identity(k));
        }
    }

    #[test]
    fn z_family_frozen_values() {
        assert_eq!(make_z(1), Mat::from_int_rows(&[&[1]]));
        assert_eq!(make_z(2), Mat::from_int_rows(&[&[1, 1], &[0, 1]]));
        assert_eq!(
            make_z(3),
            Mat::from_int_rows(&[&[1, 2, 1], &[0, 1, 0], &[0, 0, 1]])
        );
    }

    #[test]
    fn z_family_unimodular_to_ten() {
        for k in 0..=10 {
            let z = make_z(k);
            assert!(z.is_integer(), "z_{k} not integral");
            if k > 0 {
                assert!(z.det().abs().is_one(), "z_{k} not unimodular");
                assert!(z.inverse().unwrap().is_integer());
            }
        }
    }

    #[test]
    fn det_and_inverse() {
        let g = Mat::from_rows(vec![
            vec![rat(2, 1), rat(1, 3)],
            vec![rat(0, 1), rat(-1, 2)],
        ]);
        assert_eq!(g.det(), rat(-1, 1));
        let gi = g.inverse().unwrap();
        assert_eq!(&g * &gi, Mat::identity(2));
        let sing = Mat::from_int_rows(&[&[1, 2], &[2, 4]]);
        assert!(sing.det().is_zero());
        assert!(matches!(sing.inverse(), Err(Error::Singular)));
    }

    #[test]
    fn iota_and_hat() {
        let id = Mat::identity(3);
        assert_eq!(id.hat_conj().unwrap(), id);
        let g = Mat::from_int_rows(&[&[5, 0], &[0, 1]]);
        let expect = Mat::from_rows(vec![
            vec![rat(1, 1), rat(0, 1)],
            vec![rat(0, 1), rat(1, 5)],
        ]);
        assert_eq!(g.hat_conj().unwrap(), expect);
        let z2 = make_z(2);
        assert_eq!(
            z2.iota().unwrap(),
            Mat::from_int_rows(&[&[1, 0], &[-1, 1]])
        );
        assert_eq!(z2.iota().unwrap().iota().unwrap(), z2);
    }

    #[test]
    fn hat_is_a_homomorphism() {
        let g = Mat::from_rows(vec![
            vec![rat(1, 2), rat(3, 1)],
            vec![rat(0, 1), rat(5, 1)],
        ]);
        let h = Mat::from_rows(vec![
            vec![rat(2, 1), rat(-1, 1)],
            vec![rat(1, 1), rat(1, 1)],
        ]);
        let lhs = (&g * &h).hat_conj().unwrap();
        let rhs = &g.hat_conj().unwrap() * &h.hat_conj().unwrap();
        assert_eq!(lhs, rhs);
    }

    #[test]
    fn compact_membership() {
        let p = Prime::new(5).unwrap();
        assert!(Mat::identity(3).is_in_k(p));
        // 1/3 is a 5-adic unit, so this is still in K.
        let g = Mat::from_rows(vec![
            vec![rat(1, 3), rat(1, 1)],
            vec![rat(0, 1), rat(1, 1)],
        ]);
        assert!(g.is_in_k(p));
        let h = Mat::from_int_rows(&[&[5, 0], &[0, 1]]);
        assert!(h.is_p_integral(p) && !h.is_in_k(p));
        let f = Mat::from_rows(vec![
            vec![rat(1, 5), rat(0, 1)],
            vec![rat(0, 1), rat(1, 1)],
        ]);
        assert!(!f.is_p_integral(p));
    }
}
