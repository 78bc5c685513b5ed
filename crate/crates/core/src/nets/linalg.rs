//! Small dense kernels. Summation order is fixed so results are reproducible.

use crate::scalar::Real;

const LANES: usize = 8;

#[inline]
pub fn dot<S: Real>(a: &[S], b: &[S]) -> S {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [S::zero(); LANES];
    let ca = a.chunks_exact(LANES);
    let cb = b.chunks_exact(LANES);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for l in 0..LANES {
            acc[l] += x[l] * y[l];
        }
    }
    let mut tail = S::zero();
    for (x, y) in ra.iter().zip(rb) {
        tail += *x * *y;
    }
    let s01 = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    let s23 = (acc[4] + acc[5]) + (acc[6] + acc[7]);
    (s01 + s23) + tail
}

/// `y += alpha * x`
#[inline]
pub fn axpy<S: Real>(alpha: S, x: &[S], y: &mut [S]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * *xi;
    }
}

/// `y = b + W x` with `W` row-major `[out, in]`.
pub fn affine<S: Real>(w: &[S], b: &[S], x: &[S], y: &mut [S]) {
    let n = x.len();
    for (r, yr) in y.iter_mut().enumerate() {
        *yr = b[r] + dot(&w[r * n..(r + 1) * n], x);
    }
}

/// `y += W x`
pub fn matvec_acc<S: Real>(w: &[S], x: &[S], y: &mut [S]) {
    let n = x.len();
    for (r, yr) in y.iter_mut().enumerate() {
        *yr += dot(&w[r * n..(r + 1) * n], x);
    }
}

/// Backward of `y = W x (+ b)`: accumulates `dW += dy ⊗ x`, `db += dy` and
/// `dx += Wᵀ dy`. Either of `db`/`dx` may be skipped.
pub fn affine_backward<S: Real>(
    w: &[S],
    x: &[S],
    dy: &[S],
    dw: &mut [S],
    db: Option<&mut [S]>,
    dx: Option<&mut [S]>,
) {
    let n = x.len();
    for (r, &g) in dy.iter().enumerate() {
        if g != S::zero() {
            axpy(g, x, &mut dw[r * n..(r + 1) * n]);
        }
    }
    if let Some(db) = db {
        for (d, &g) in db.iter_mut().zip(dy) {
            *d += g;
        }
    }
    if let Some(dx) = dx {
        for (r, &g) in dy.iter().enumerate() {
            if g != S::zero() {
                axpy(g, &w[r * n..(r + 1) * n], dx);
            }
        }
    }
}

#[inline]
pub fn sigmoid<S: Real>(x: S) -> S {
    if x >= S::zero() {
        S::one() / (S::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (S::one() + e)
    }
}
