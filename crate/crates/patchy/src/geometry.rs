//! Spheres, balls and hyperplanes with half-space membership tests.

use serde::{Deserialize, Serialize};

use crate::math::{dist, dot, norm};

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Sphere {
    pub center: Vec<f64>,
    pub radius: f64,
}

impl Sphere {
    pub fn new(center: Vec<f64>, radius: f64) -> Sphere {
        debug_assert!(radius > 0.0);
        Sphere { center, radius }
    }

    /// Signed distance to the sphere surface (positive outside).
    #[inline]
    pub fn signed_distance(&self, x: &[f64]) -> f64 {
        dist(x, &self.center) - self.radius
    }

    /// Unit outer normal at (the radial projection of) `x`, written into `out`.
    pub fn outer_normal(&self, x: &[f64], out: &mut [f64]) {
        let d = dist(x, &self.center).max(1e-300);
        for i in 0..out.len() {
            out[i] = (x[i] - self.center[i]) / d;
        }
    }

    #[inline]
    pub fn contains_open(&self, x: &[f64]) -> bool {
        self.signed_distance(x) < 0.0
    }

    #[inline]
    pub fn contains_closed(&self, x: &[f64]) -> bool {
        self.signed_distance(x) <= 0.0
    }
}

/// Oriented hyperplane {x : <normal, x> = offset} with |normal| = 1.
///
/// The positive side is the half space the normal points into.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Hyperplane {
    pub normal: Vec<f64>,
    pub offset: f64,
}

impl Hyperplane {
    /// Builds the plane from an unnormalized normal `w` and a point on it.
    pub fn from_normal_point(w: &[f64], point: &[f64]) -> Hyperplane {
        let nw = norm(w);
        debug_assert!(nw > 0.0);
        let normal: Vec<f64> = w.iter().map(|x| x / nw).collect();
        let offset = dot(&normal, point);
        Hyperplane { normal, offset }
    }

    /// Builds the plane {<n, x> = offset} directly; `w` is normalized.
    pub fn from_normal_offset(w: &[f64], offset_unnormalized: f64) -> Hyperplane {
        let nw = norm(w);
        debug_assert!(nw > 0.0);
        Hyperplane {
            normal: w.iter().map(|x| x / nw).collect(),
            offset: offset_unnormalized / nw,
        }
    }

    /// Signed distance of `x` from the plane (positive on the normal side).
    #[inline]
    pub fn signed_distance(&self, x: &[f64]) -> f64 {
        dot(&self.normal, x) - self.offset
    }

    /// Closed positive half space test.
    #[inline]
    pub fn in_plus_closed(&self, x: &[f64]) -> bool {
        self.signed_distance(x) >= 0.0
    }

    /// Closed negative half space test.
    #[inline]
    pub fn in_minus_closed(&self, x: &[f64]) -> bool {
        self.signed_distance(x) <= 0.0
    }

    /// The plane shifted by `rho` along its normal (into the positive side).
    pub fn shifted(&self, rho: f64) -> Hyperplane {
        Hyperplane {
            normal: self.normal.clone(),
            offset: self.offset + rho,
        }
    }

    /// The same plane with reversed orientation.
    pub fn flipped(&self) -> Hyperplane {
        Hyperplane {
            normal: self.normal.iter().map(|x| -x).collect(),
            offset: -self.offset,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn point_on_plane_is_in_both_closed_half_spaces() {
        let pl = Hyperplane::from_normal_point(&[2.0, 0.0], &[1.0, 5.0]);
        assert!(pl.in_plus_closed(&[1.0, -3.0]));
        assert!(pl.in_minus_closed(&[1.0, -3.0]));
        assert!((pl.signed_distance(&[1.0, 0.0])).abs() < 1e-15);
    }

    #[test]
    fn half_space_sign_flips_under_normal_negation() {
        let pl = Hyperplane::from_normal_point(&[1.0, 1.0], &[0.0, 0.0]);
        let fl = pl.flipped();
        let x = [0.3, 0.5];
        assert_eq!(
            pl.signed_distance(&x) > 0.0,
            fl.signed_distance(&x) < 0.0
        );
    }

    #[test]
    fn sphere_normal_is_radial() {
        let s = Sphere::new(vec![1.0, 0.0], 2.0);
        let mut n = [0.0; 2];
        s.outer_normal(&[3.0, 0.0], &mut n);
        assert!((n[0] - 1.0).abs() < 1e-15 && n[1].abs() < 1e-15);
        assert!(s.contains_open(&[1.0, 0.5]));
        assert!(!s.contains_open(&[3.0, 0.0]));
        assert!(s.contains_closed(&[3.0, 0.0]));
    }
}
