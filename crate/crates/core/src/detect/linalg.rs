//! Small dense Hermitian helpers with multiplication accounting.

use super::{CMUL, NORM, RCMUL};
use crate::C64;

/// In-place Cholesky `A = RᴴR` of an `n × n` row-major Hermitian positive
/// definite matrix; the upper triangle of `a` is overwritten with `R`, the
/// strict lower triangle is zeroed. Returns `false` if a pivot is not
/// positive.
pub(crate) fn cholesky_upper(a: &mut [C64], n: usize, mults: &mut u64) -> bool {
    for i in 0..n {
        let mut d = a[i * n + i].re;
        for k in 0..i {
            d -= a[k * n + i].norm_sqr();
        }
        *mults += NORM * i as u64;
        if !(d > 0.0) {
            return false;
        }
        let rii = d.sqrt();
        let inv = 1.0 / rii;
        *mults += 2;
        a[i * n + i] = C64::new(rii, 0.0);
        for j in i + 1..n {
            let mut v = a[i * n + j];
            for k in 0..i {
                v -= a[k * n + i].conj() * a[k * n + j];
            }
            a[i * n + j] = v * inv;
            a[j * n + i] = C64::new(0.0, 0.0);
            *mults += CMUL * i as u64 + RCMUL;
        }
    }
    true
}

/// Solves `Rᴴ x = b` for upper-triangular `R` with real diagonal.
pub(crate) fn solve_upper_h(r: &[C64], n: usize, b: &mut [C64], mults: &mut u64) {
    for i in 0..n {
        let mut v = b[i];
        for k in 0..i {
            v -= r[k * n + i].conj() * b[k];
        }
        b[i] = v / r[i * n + i].re;
        *mults += CMUL * i as u64 + RCMUL + 1;
    }
}

/// Solves `R x = b` for upper-triangular `R` with real diagonal.
pub(crate) fn solve_upper(r: &[C64], n: usize, b: &mut [C64], mults: &mut u64) {
    for i in (0..n).rev() {
        let mut v = b[i];
        for k in i + 1..n {
            v -= r[i * n + k] * b[k];
        }
        b[i] = v / r[i * n + i].re;
        *mults += CMUL * (n - 1 - i) as u64 + RCMUL + 1;
    }
}
