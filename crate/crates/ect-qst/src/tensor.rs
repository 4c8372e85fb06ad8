//! Internal helpers for base-d digit indexing and product-structure
//! linear algebra on flat amplitude buffers.
//!
//! Qudit 0 is the most significant digit: index x of an N-qudit register
//! decomposes as x = sum_r x_r d^(N-1-r).

use nalgebra::DMatrix;
use num_complex::Complex64;

/// Digit of `x` at qudit position `r` (0-based, most significant first).
pub(crate) fn digit(x: usize, d: usize, n: usize, r: usize) -> usize {
    (x / d.pow((n - 1 - r) as u32)) % d
}

/// All digits of `x`, most significant first.
pub(crate) fn digits(x: usize, d: usize, n: usize) -> Vec<usize> {
    (0..n).map(|r| digit(x, d, n, r)).collect()
}

/// Apply a d x d matrix to qudit `r` of a dense length-d^N buffer.
pub(crate) fn apply_single(
    buf: &mut [Complex64],
    d: usize,
    n: usize,
    r: usize,
    mat: &DMatrix<Complex64>,
) {
    debug_assert_eq!(buf.len(), d.pow(n as u32));
    debug_assert_eq!(mat.nrows(), d);
    let stride = d.pow((n - 1 - r) as u32);
    let block = stride * d;
    let mut scratch = vec![Complex64::default(); d];
    for base in (0..buf.len()).step_by(block) {
        for off in 0..stride {
            for (x, slot) in scratch.iter_mut().enumerate() {
                *slot = buf[base + off + x * stride];
            }
            for y in 0..d {
                let mut acc = Complex64::default();
                for (x, &s) in scratch.iter().enumerate() {
                    acc += mat[(y, x)] * s;
                }
                buf[base + off + y * stride] = acc;
            }
        }
    }
}

/// Dense product vector out[x] = prod_r factors[r][x_r].
pub(crate) fn product_vector(factors: &[&[Complex64]], d: usize) -> Vec<Complex64> {
    let mut out = vec![Complex64::new(1.0, 0.0)];
    for f in factors {
        debug_assert_eq!(f.len(), d);
        let mut next = Vec::with_capacity(out.len() * d);
        for &a in &out {
            for &b in f.iter() {
                next.push(a * b);
            }
        }
        out = next;
    }
    out
}
