//! Blocked matrix products over row-major slices.
//!
//! Every output element of [`gemm_nt`] is a lane-split dot product whose
//! summation order depends only on the inner dimension, never on the matrix
//! shapes or the blocking. Two calls that share a row of `a` and a row of
//! `b` therefore produce bitwise-identical results, which is what makes
//! patch-mode and image-mode inference agree exactly.

use super::Real;

const LANES: usize = 8;

/// Bytes of `b` kept hot per block in [`gemm_nt`].
const BLOCK_BYTES: usize = 192 * 1024;

#[inline(always)]
fn reduce<T: Real>(acc: &[T; LANES], tail: T) -> T {
    ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7])) + tail
}

/// Lane-split dot product.
#[inline]
pub fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [T::zero(); LANES];
    let split = a.len() - a.len() % LANES;
    for (ca, cb) in a[..split]
        .chunks_exact(LANES)
        .zip(b[..split].chunks_exact(LANES))
    {
        for l in 0..LANES {
            acc[l] += ca[l] * cb[l];
        }
    }
    let mut tail = T::zero();
    for (&x, &y) in a[split..].iter().zip(&b[split..]) {
        tail += x * y;
    }
    reduce(&acc, tail)
}

/// Four dot products sharing `a`; each result is bitwise equal to [`dot`].
#[inline]
fn dot4<T: Real>(a: &[T], b: [&[T]; 4]) -> [T; 4] {
    let mut acc = [[T::zero(); LANES]; 4];
    let split = a.len() - a.len() % LANES;
    let mut off = 0;
    while off < split {
        let ca = &a[off..off + LANES];
        for (r, row) in b.iter().enumerate() {
            let cb = &row[off..off + LANES];
            for l in 0..LANES {
                acc[r][l] += ca[l] * cb[l];
            }
        }
        off += LANES;
    }
    let mut out = [T::zero(); 4];
    for (r, row) in b.iter().enumerate() {
        let mut tail = T::zero();
        for (&x, &y) in a[split..].iter().zip(&row[split..]) {
            tail += x * y;
        }
        out[r] = reduce(&acc[r], tail);
    }
    out
}

/// `c[i, j] = bias[j] + Σ_l a[i, l] · b[j, l]` with `a: m × k`, `b: n × k`,
/// `c: m × n`.
pub fn gemm_nt<T: Real>(a: &[T], b: &[T], bias: Option<&[T]>, c: &mut [T], m: usize, n: usize, k: usize) {
    assert_eq!(a.len(), m * k);
    assert_eq!(b.len(), n * k);
    assert_eq!(c.len(), m * n);
    if let Some(bias) = bias {
        assert_eq!(bias.len(), n);
    }
    let row_bytes = (k * std::mem::size_of::<T>()).max(1);
    let jb = (BLOCK_BYTES / row_bytes).clamp(4, n.max(4)) / 4 * 4;
    let mut j0 = 0;
    while j0 < n {
        let j1 = (j0 + jb).min(n);
        for i in 0..m {
            let ar = &a[i * k..(i + 1) * k];
            let cr = &mut c[i * n..(i + 1) * n];
            let mut j = j0;
            while j + 4 <= j1 {
                let rows = [
                    &b[j * k..(j + 1) * k],
                    &b[(j + 1) * k..(j + 2) * k],
                    &b[(j + 2) * k..(j + 3) * k],
                    &b[(j + 3) * k..(j + 4) * k],
                ];
                let d = dot4(ar, rows);
                for r in 0..4 {
                    cr[j + r] = match bias {
                        Some(bias) => bias[j + r] + d[r],
                        None => d[r],
                    };
                }
                j += 4;
            }
            while j < j1 {
                let d = dot(ar, &b[j * k..(j + 1) * k]);
                cr[j] = match bias {
                    Some(bias) => bias[j] + d,
                    None => d,
                };
                j += 1;
            }
        }
        j0 = j1;
    }
}

#[inline]
fn axpy<T: Real>(y: &mut [T], alpha: T, x: &[T]) {
    for (y, &x) in y.iter_mut().zip(x) {
        *y += alpha * x;
    }
}

/// `c += a · b` with `a: m × k`, `b: k × n`, `c: m × n`.
pub fn gemm_nn_acc<T: Real>(a: &[T], b: &[T], c: &mut [T], m: usize, n: usize, k: usize) {
    assert_eq!(a.len(), m * k);
    assert_eq!(b.len(), k * n);
    assert_eq!(c.len(), m * n);
    for i in 0..m {
        let cr = &mut c[i * n..(i + 1) * n];
        for (l, &alpha) in a[i * k..(i + 1) * k].iter().enumerate() {
            if alpha != T::zero() {
                axpy(cr, alpha, &b[l * n..(l + 1) * n]);
            }
        }
    }
}

/// `c += aᵀ · b` with `a: k × m`, `b: k × n`, `c: m × n`.
pub fn gemm_tn_acc<T: Real>(a: &[T], b: &[T], c: &mut [T], m: usize, n: usize, k: usize) {
    assert_eq!(a.len(), k * m);
    assert_eq!(b.len(), k * n);
    assert_eq!(c.len(), m * n);
    for l in 0..k {
        let br = &b[l * n..(l + 1) * n];
        for (i, &alpha) in a[l * m..(l + 1) * m].iter().enumerate() {
            if alpha != T::zero() {
                axpy(&mut c[i * n..(i + 1) * n], alpha, br);
            }
        }
    }
}
