//! Small allocation-free vector helpers used by the hot loops.
//!
//! States are plain `&[f64]` slices so the dimension stays a runtime
//! parameter without forcing heap allocation inside integrators and
//! membership tests.

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

#[inline]
pub fn dist2(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

#[inline]
pub fn dist(a: &[f64], b: &[f64]) -> f64 {
    dist2(a, b).sqrt()
}

/// out = a + s*b
#[inline]
pub fn axpy(out: &mut [f64], a: &[f64], s: f64, b: &[f64]) {
    for i in 0..out.len() {
        out[i] = a[i] + s * b[i];
    }
}

#[inline]
pub fn scale_in_place(a: &mut [f64], s: f64) {
    for x in a.iter_mut() {
        *x *= s;
    }
}

#[inline]
pub fn all_finite(a: &[f64]) -> bool {
    a.iter().all(|x| x.is_finite())
}

/// Minimizes a unimodal function on [lo, hi] by golden-section search.
///
/// Returns (argmin, min). Used as an independent oracle for radially
/// symmetric value functions; tolerance is on the argument.
pub fn golden_section_min<F: Fn(f64) -> f64>(f: F, lo: f64, hi: f64, tol: f64) -> (f64, f64) {
    const INV_PHI: f64 = 0.618_033_988_749_894_9;
    let (mut a, mut b) = (lo, hi);
    let mut c = b - INV_PHI * (b - a);
    let mut d = a + INV_PHI * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    while (b - a).abs() > tol {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - INV_PHI * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + INV_PHI * (b - a);
            fd = f(d);
        }
    }
    let m = 0.5 * (a + b);
    (m, f(m))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn golden_section_finds_parabola_min() {
        let (x, v) = golden_section_min(|x| (x - 0.3) * (x - 0.3) + 1.0, 0.0, 1.0, 1e-12);
        assert!((x - 0.3).abs() < 1e-6);
        assert!((v - 1.0).abs() < 1e-14);
    }

    #[test]
    fn axpy_writes_combination() {
        let a = [1.0, 2.0];
        let b = [3.0, -1.0];
        let mut out = [0.0; 2];
        axpy(&mut out, &a, 2.0, &b);
        assert_eq!(out, [7.0, 0.0]);
    }
}
