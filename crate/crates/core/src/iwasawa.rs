//! Decomposition of an invertible p-adic matrix as a lower-triangular
//! factor times a unit of the maximal compact subgroup, `g = bbar kappa`.
//!
//! The algorithm is column elimination over the valuation ring: in each
//! row from the top, the entry of minimal valuation among the remaining
//! columns becomes the pivot (so every shear multiplier is integral), a
//! determinant-one rotation moves it into place, and the row is cleared to
//! the right.  The collected column operations form `kappa^{-1}`; being
//! products of integral rotations and shears with unit determinant, their
//! inverse stays in the compact group.

use alloc::vec::Vec;

use num_traits::Zero;

use crate::err::{Error, Result};
use crate::field::{val, Prime};
use crate::matrix::Mat;

/// The two exact factors of `g = bbar * kappa`.
#[derive(Clone, Debug)]
pub struct IwasawaFactors {
    /// Lower triangular with nonzero diagonal.
    pub bbar: Mat,
    /// Integral with unit determinant.
    pub kappa: Mat,
}

/// Decompose with the deterministic pivot rule: minimal valuation, ties
/// broken by smallest column index.
pub fn decompose(g: &Mat, p: Prime) -> Result<IwasawaFactors> {
    decompose_with(g, p, &mut |_| 0)
}

/// Decompose with a caller-chosen tie break among minimal-valuation pivot
/// candidates; `choose` receives the candidate column list (ascending) and
/// returns an index into it.  Any choice yields a valid decomposition of
/// the same coset, which is what pivot-invariance tests exercise.
pub fn decompose_with(
    g: &Mat,
    p: Prime,
    choose: &mut dyn FnMut(&[usize]) -> usize,
) -> Result<IwasawaFactors> {
    if !g.is_square() {
        return Err(Error::Dimension("decomposition of a non-square matrix".into()));
    }
    let k = g.rows();
    let mut work = g.clone();
    // Accumulates the right factor c with g c lower triangular.
    let mut c = Mat::identity(k);
    for r in 0..k {
        let mut best: Option<i64> = None;
        let mut ties: Vec<usize> = Vec::new();
        for j in r..k {
            if let Some(v) = val(work.at(r, j), p) {
                match best {
                    None => {
                        best = Some(v);
                        ties.push(j);
                    }
                    Some(b) if v < b => {
                        best = Some(v);
                        ties.clear();
                        ties.push(j);
                    }
                    Some(b) if v == b => ties.push(j),
                    _ => {}
                }
            }
        }
        if ties.is_empty() {
            return Err(Error::Singular);
        }
        let pick = ties[choose(&ties).min(ties.len() - 1)];
        if pick != r {
            // Right-multiply by the rotation sending column pick to
            // column r and column r to minus column pick (determinant 1).
            rotate_cols(&mut work, r, pick);
            rotate_cols(&mut c, r, pick);
        }
        let pivot = work.at(r, r).clone();
        for l in r + 1..k {
            if work.at(r, l).is_zero() {
                continue;
            }
            let f = work.at(r, l) / &pivot;
            debug_assert!(
                val(&f, p).map_or(true, |v| v >= 0),
                "shear multiplier must be integral"
            );
            shear_cols(&mut work, r, l, &f);
            shear_cols(&mut c, r, l, &f);
        }
    }
    let kappa = c.inverse()?;
    debug_assert!(work.is_lower_triangular());
    debug_assert!(kappa.is_in_k(p), "right factor left the compact group");
    debug_assert!(&work * &kappa == *g);
    Ok(IwasawaFactors { bbar: work, kappa })
}

/// Column rotation: `(col_r, col_pick) <- (col_pick, -col_r)`.
fn rotate_cols(m: &mut Mat, r: usize, pick: usize) {
    for i in 0..m.rows() {
        let a = m.at(i, r).clone();
        let b = m.at(i, pick).clone();
        m.set(i, r, b);
        m.set(i, pick, -a);
    }
}

/// Column shear: `col_l -= f * col_r`.
fn shear_cols(m: &mut Mat, r: usize, l: usize, f: &crate::field::Rat) {
    for i in 0..m.rows() {
        let v = m.at(i, l) - &(f * m.at(i, r));
        m.set(i, l, v);
    }
}
