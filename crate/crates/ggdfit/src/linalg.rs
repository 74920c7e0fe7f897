//! Minimal fixed-size helpers for the 3-parameter estimation problem.

use crate::scalar::Real;

pub type Vec3<T> = [T; 3];
pub type Mat3<T> = [[T; 3]; 3];

/// Solves A x = b by Gaussian elimination with partial pivoting.
/// Returns `None` when a pivot is (numerically) zero.
pub fn solve3<T: Real>(a: &Mat3<T>, b: &Vec3<T>) -> Option<Vec3<T>> {
    let mut m = *a;
    let mut r = *b;
    for col in 0..3 {
        let mut pivot = col;
        for row in col + 1..3 {
            if m[row][col].abs() > m[pivot][col].abs() {
                pivot = row;
            }
        }
        if m[pivot][col].abs() < T::of(1e-300) || !m[pivot][col].is_finite() {
            return None;
        }
        m.swap(col, pivot);
        r.swap(col, pivot);
        let pivot_row = m[col];
        for row in col + 1..3 {
            let f = m[row][col] / pivot_row[col];
            for (k, entry) in m[row].iter_mut().enumerate().skip(col) {
                *entry = *entry - f * pivot_row[k];
            }
            r[row] = r[row] - f * r[col];
        }
    }
    let mut x = [T::zero(); 3];
    for col in (0..3).rev() {
        let mut acc = r[col];
        for k in col + 1..3 {
            acc = acc - m[col][k] * x[k];
        }
        x[col] = acc / m[col][col];
        if !x[col].is_finite() {
            return None;
        }
    }
    Some(x)
}

pub fn norm3<T: Real>(v: &Vec3<T>) -> T {
    (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt()
}
