//! Small shared numeric helpers.
//!
//! Everything here is deliberately boring: fixed-order reductions so that a
//! given seed reproduces bit-identical runs, and a power helper that settles
//! the `0^p` and near-integer-exponent cases once instead of at every call
//! site.

/// `base^p` for `base >= 0`, with an explicit zero branch.
///
/// `p` must be positive. Integer exponents up to 8 take the exact-product
/// path; everything else goes through `powf`. Negative bases are treated as
/// zero because callers only ever produce them as the dead branch of a
/// positive-part term.
#[inline]
pub fn pos_pow(base: f64, p: f64) -> f64 {
    debug_assert!(p > 0.0, "pos_pow exponent must be positive, got {p}");
    if base <= 0.0 {
        return 0.0;
    }
    let rounded = p.round();
    if p == rounded && (1.0..=8.0).contains(&rounded) {
        base.powi(rounded as i32)
    } else {
        base.powf(p)
    }
}

/// Positive part `max(v, 0)`.
#[inline]
pub fn pos(v: f64) -> f64 {
    if v > 0.0 {
        v
    } else {
        0.0
    }
}

/// Dot product with a fixed left-to-right reduction order.
#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = 0.0;
    for i in 0..a.len() {
        acc += a[i] * b[i];
    }
    acc
}

/// Euclidean norm.
#[inline]
pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// `acc += scale * v`, elementwise.
#[inline]
pub fn axpy(acc: &mut [f64], scale: f64, v: &[f64]) {
    debug_assert_eq!(acc.len(), v.len());
    for i in 0..acc.len() {
        acc[i] += scale * v[i];
    }
}

/// True when every element is finite.
#[inline]
pub fn all_finite(v: &[f64]) -> bool {
    v.iter().all(|x| x.is_finite())
}

/// Clamp to a closed interval.
#[inline]
pub fn clamp(v: f64, lo: f64, hi: f64) -> f64 {
    debug_assert!(lo <= hi);
    v.max(lo).min(hi)
}

/// Bisection root of an increasing function on `[lo, hi]`.
///
/// Requires `f(lo) <= 0 <= f(hi)`; returns the midpoint once the bracket
/// width or `|f|` falls below the tolerances. The caller is responsible for
/// supplying a valid bracket.
pub fn bisect_increasing(
    mut f: impl FnMut(f64) -> f64,
    mut lo: f64,
    mut hi: f64,
    x_tol: f64,
    f_tol: f64,
) -> f64 {
    debug_assert!(lo < hi);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        let v = f(mid);
        if v.abs() <= f_tol {
            return mid;
        }
        if v > 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
        if hi - lo <= x_tol * (1.0 + mid.abs()) {
            break;
        }
    }
    0.5 * (lo + hi)
}

/// Golden-section minimum of a unimodal function on `[lo, hi]`.
///
/// Returns `(argmin, min)` once the bracket shrinks below `x_tol` (absolute).
/// Convex functions are unimodal, so this is exact for the 1-d restrictions
/// of the dual objective; kinks are fine because no derivative is used.
pub fn golden_min(mut f: impl FnMut(f64) -> f64, lo: f64, hi: f64, x_tol: f64) -> (f64, f64) {
    debug_assert!(lo <= hi);
    const INV_PHI: f64 = 0.618_033_988_749_894_9;
    let mut a = lo;
    let mut b = hi;
    let mut x1 = b - INV_PHI * (b - a);
    let mut x2 = a + INV_PHI * (b - a);
    let mut f1 = f(x1);
    let mut f2 = f(x2);
    for _ in 0..220 {
        if b - a <= x_tol {
            break;
        }
        if f1 <= f2 {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - INV_PHI * (b - a);
            f1 = f(x1);
        } else {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + INV_PHI * (b - a);
            f2 = f(x2);
        }
    }
    let xm = 0.5 * (a + b);
    let fm = f(xm);
    if f1 <= f2 && f1 <= fm {
        (x1, f1)
    } else if f2 <= fm {
        (x2, f2)
    } else {
        (xm, fm)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pos_pow_zero_base_is_zero() {
        assert_eq!(pos_pow(0.0, 2.5), 0.0);
        assert_eq!(pos_pow(-1.0, 3.0), 0.0);
    }

    #[test]
    fn pos_pow_integer_matches_powf() {
        let v = pos_pow(1.7, 3.0);
        assert!((v - 1.7f64.powf(3.0)).abs() < 1e-14, "got {v}");
    }

    #[test]
    fn bisect_finds_sqrt2() {
        let root = bisect_increasing(|x| x * x - 2.0, 0.0, 2.0, 1e-15, 0.0);
        assert!((root - 2f64.sqrt()).abs() < 1e-12, "got {root}");
    }

    #[test]
    fn golden_min_quadratic() {
        let (x, v) = golden_min(|x| (x - 0.3) * (x - 0.3) + 1.0, -4.0, 5.0, 1e-12);
        assert!((x - 0.3).abs() < 1e-6, "argmin {x}");
        assert!((v - 1.0).abs() < 1e-12, "min {v}");
    }

    #[test]
    fn golden_min_handles_kink() {
        let (x, _) = golden_min(|x| (x - 1.25).abs(), -10.0, 10.0, 1e-12);
        assert!((x - 1.25).abs() < 1e-7, "argmin {x}");
    }
}
