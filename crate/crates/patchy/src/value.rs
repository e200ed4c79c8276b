//! Grid solver for the penalized optimal-stopping value function and the
//! regularity diagnostics built on top of it.
//!
//! The scheme is a first-order semi-Lagrangian value iteration for the
//! optimal stopping problem
//!
//!   V(y) = min( phi_eps(y), min_u [ dt + V(y + dt f(y,u)) ] )
//!
//! on a uniform grid with multilinear interpolation. Iterates start from
//! the penalty and decrease monotonically, so the fixed point is reached
//! from above.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::constants::ConstantsLedger;
use crate::error::{Error, Result};
use crate::math::{dot, norm};
use crate::rng::CounterRng;
use crate::system::ControlSystem;

/// Penalty parameters (the eps of the approximate problem).
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct PenaltyParams {
    pub eps: f64,
}

/// phi_eps(x) = |x|^2 / (eps^2 - |x|^2) for |x| < eps, +inf otherwise.
pub fn penalty(x: &[f64], p: &PenaltyParams) -> f64 {
    let r2: f64 = x.iter().map(|v| v * v).sum();
    let e2 = p.eps * p.eps;
    if r2 < e2 {
        r2 / (e2 - r2)
    } else {
        f64::INFINITY
    }
}

/// z(T) = (1 + eps) e^(cT) - 1: radius of the comparison ball containing
/// the sub-level set of horizon T.
pub fn domain_bound(eps: f64, c: f64, t: f64) -> f64 {
    (1.0 + eps) * (c * t).exp() - 1.0
}

/// Grid geometry and solver tuning.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GridSpec {
    /// Nodes per axis (>= 3).
    pub resolution: usize,
    /// Half-width of the axis-aligned box [-radius, radius]^n.
    /// Must contain B_{z(T')}.
    pub radius: f64,
    /// Characteristic step as a multiple of h / max|f| at the node.
    pub cfl: f64,
    /// Sup-norm convergence tolerance.
    pub tol: f64,
    pub max_sweeps: usize,
}

impl GridSpec {
    pub fn standard(radius: f64, resolution: usize) -> GridSpec {
        GridSpec {
            resolution,
            radius,
            cfl: 1.0,
            tol: 1e-6,
            max_sweeps: 10_000,
        }
    }
}

/// Differentiability flag with the gradient when it is trustworthy.
#[derive(Clone, Debug)]
pub struct RegularityFlag {
    pub differentiable: bool,
    pub gradient: Vec<f64>,
}

/// The solved value function on a uniform grid.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GridValueFunction {
    pub n: usize,
    pub resolution: usize,
    pub radius: f64,
    pub h: f64,
    pub eps: f64,
    pub t_prime: f64,
    /// Finite stand-in for infinity (10 T'). All stored values are finite.
    pub cap: f64,
    pub values: Vec<f64>,
    pub residual: f64,
    pub sweeps: usize,
    /// Max adjacent difference quotient over sub-cap nodes.
    pub lip_estimate: f64,
    /// One-sided gradient quotients must agree within this to count as
    /// differentiable (10 h Lip).
    pub reg_threshold: f64,
}

/// Node masks for the working sub-level sets.
#[derive(Clone, Debug)]
pub struct SublevelMasks {
    pub lambda_t: Vec<bool>,
    pub lambda_t_eps: Vec<bool>,
    pub lambda_tp: Vec<bool>,
    pub lambda_tp_eps0: Vec<bool>,
}

/// Report of the sampled semiconcavity check.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SemiconcavityReport {
    pub pairs: usize,
    pub violations: usize,
    pub max_excess: f64,
}

/// Report of the Hamilton-Jacobi decrease test at one point.
#[derive(Clone, Debug)]
pub struct HjReport {
    pub best_control: usize,
    /// min_u <grad V, f(y,u)> + 1; success when <= eps1.
    pub margin: f64,
}

impl GridValueFunction {
    pub fn node_count(&self) -> usize {
        self.values.len()
    }

    /// Builds a grid container with given values (test/synthetic use).
    pub fn from_values(
        n: usize,
        resolution: usize,
        radius: f64,
        eps: f64,
        t_prime: f64,
        values: Vec<f64>,
    ) -> GridValueFunction {
        assert_eq!(values.len(), resolution.pow(n as u32));
        let h = 2.0 * radius / (resolution - 1) as f64;
        let cap = 10.0 * t_prime;
        let mut g = GridValueFunction {
            n,
            resolution,
            radius,
            h,
            eps,
            t_prime,
            cap,
            values,
            residual: 0.0,
            sweeps: 0,
            lip_estimate: 0.0,
            reg_threshold: 0.0,
        };
        g.lip_estimate = g.measure_lip();
        g.reg_threshold = 10.0 * g.h * g.lip_estimate.max(1e-9);
        g
    }

    #[inline]
    pub fn node_point(&self, idx: usize, out: &mut [f64]) {
        let mut rem = idx;
        for d in 0..self.n {
            let i = rem % self.resolution;
            rem /= self.resolution;
            out[d] = -self.radius + i as f64 * self.h;
        }
    }

    #[inline]
    fn stride(&self, d: usize) -> usize {
        self.resolution.pow(d as u32)
    }

    /// Multilinear interpolation; out-of-box points return the cap.
    pub fn value(&self, y: &[f64]) -> f64 {
        debug_assert_eq!(y.len(), self.n);
        let mut base = 0usize;
        let mut frac = [0.0f64; 8];
        if self.n > 8 {
            unimplemented!("state dimension > 8");
        }
        for d in 0..self.n {
            let t = (y[d] + self.radius) / self.h;
            if !(t >= 0.0) || t > (self.resolution - 1) as f64 {
                return self.cap;
            }
            let mut i = t.floor() as usize;
            if i >= self.resolution - 1 {
                i = self.resolution - 2;
            }
            frac[d] = (t - i as f64).clamp(0.0, 1.0);
            base += i * self.stride(d);
        }
        let corners = 1usize << self.n;
        let mut acc = 0.0;
        for c in 0..corners {
            let mut widx = base;
            let mut weight = 1.0;
            for d in 0..self.n {
                if c & (1 << d) != 0 {
                    widx += self.stride(d);
                    weight *= frac[d];
                } else {
                    weight *= 1.0 - frac[d];
                }
            }
            acc += weight * self.values[widx];
        }
        acc
    }

    /// Interpolated value clipped at T' (values above mean "outside").
    pub fn value_clipped(&self, y: &[f64]) -> f64 {
        self.value(y).min(self.t_prime)
    }

    pub fn inside(&self, y: &[f64], margin: f64) -> bool {
        y.iter().all(|v| v.abs() <= self.radius - margin)
    }

    /// Central-difference gradient with a one-sided agreement test.
    pub fn gradient(&self, y: &[f64]) -> Result<RegularityFlag> {
        if !self.inside(y, 1.5 * self.h) {
            return Err(Error::OutsideGrid);
        }
        let mut grad = vec![0.0; self.n];
        let mut differentiable = true;
        let mut yp = y.to_vec();
        let v0 = self.value(y);
        if v0 >= self.cap {
            return Err(Error::OutsideGrid);
        }
        for d in 0..self.n {
            yp.copy_from_slice(y);
            yp[d] = y[d] + self.h;
            let vf = self.value(&yp);
            yp[d] = y[d] - self.h;
            let vb = self.value(&yp);
            let fwd = (vf - v0) / self.h;
            let bwd = (v0 - vb) / self.h;
            grad[d] = 0.5 * (fwd + bwd);
            if (fwd - bwd).abs() > self.reg_threshold {
                differentiable = false;
            }
        }
        Ok(RegularityFlag {
            differentiable,
            gradient: grad,
        })
    }

    fn measure_lip(&self) -> f64 {
        let sub = self.t_prime * 1.5;
        let mut lip = 0.0f64;
        for d in 0..self.n {
            let stride = self.stride(d);
            for i in 0..self.values.len() - stride {
                let a = self.values[i];
                let b = self.values[i + stride];
                if a < sub && b < sub {
                    let q = (a - b).abs() / self.h;
                    if q > lip {
                        lip = q;
                    }
                }
            }
        }
        lip
    }

    /// Node masks for Lambda_T, Lambda_{T,eps}, Lambda_{T'}, Lambda_{T',eps0}.
    pub fn sublevel_sets(&self, ledger: &ConstantsLedger) -> SublevelMasks {
        let mut lambda_t = vec![false; self.node_count()];
        let mut lambda_t_eps = vec![false; self.node_count()];
        let mut lambda_tp = vec![false; self.node_count()];
        let mut lambda_tp_eps0 = vec![false; self.node_count()];
        let mut y = vec![0.0; self.n];
        for i in 0..self.node_count() {
            let v = self.values[i];
            self.node_point(i, &mut y);
            let r = norm(&y);
            if v <= ledger.t_horizon {
                lambda_t[i] = true;
                if r >= ledger.eps {
                    lambda_t_eps[i] = true;
                }
            }
            if v <= ledger.t_prime {
                lambda_tp[i] = true;
                if r >= ledger.eps0 {
                    lambda_tp_eps0[i] = true;
                }
            }
        }
        SublevelMasks {
            lambda_t,
            lambda_t_eps,
            lambda_tp,
            lambda_tp_eps0,
        }
    }

    /// Diameter of a node mask, estimated by directional projections.
    pub fn mask_diameter(&self, mask: &[bool], seed: u64) -> f64 {
        let dirs = if self.n == 2 { 180 } else { 512 };
        let mut rng = CounterRng::new(seed, 0xd1);
        let mut dir = vec![0.0; self.n];
        let mut y = vec![0.0; self.n];
        let mut best = 0.0f64;
        for k in 0..dirs {
            if self.n == 2 {
                let a = std::f64::consts::PI * k as f64 / dirs as f64;
                dir[0] = a.cos();
                dir[1] = a.sin();
            } else {
                rng.unit_direction(&mut dir);
            }
            let mut lo = f64::INFINITY;
            let mut hi = f64::NEG_INFINITY;
            for (i, &m) in mask.iter().enumerate() {
                if m {
                    self.node_point(i, &mut y);
                    let p = dot(&dir, &y);
                    lo = lo.min(p);
                    hi = hi.max(p);
                }
            }
            if hi - lo > best {
                best = hi - lo;
            }
        }
        best
    }

    /// Max Lip(V) over adjacent node pairs inside the mask.
    pub fn mask_lip(&self, mask: &[bool]) -> f64 {
        let mut lip = 0.0f64;
        for d in 0..self.n {
            let stride = self.stride(d);
            for i in 0..self.values.len() - stride {
                if mask[i] && mask[i + stride] {
                    let q = (self.values[i] - self.values[i + stride]).abs() / self.h;
                    if q > lip {
                        lip = q;
                    }
                }
            }
        }
        lip
    }

    fn sample_mask_point(
        &self,
        mask: &[bool],
        mask_nodes: &[usize],
        rng: &mut CounterRng,
        out: &mut [f64],
    ) {
        let idx = mask_nodes[rng.index(mask_nodes.len())];
        self.node_point(idx, out);
        let lim = self.radius * (1.0 - 1e-12);
        for v in out.iter_mut() {
            *v = (*v + self.h * (rng.next_f64() - 0.5)).clamp(-lim, lim);
        }
        let _ = mask;
    }

    fn mask_contains(&self, mask: &[bool], y: &[f64]) -> bool {
        // nearest-node membership
        let mut idx = 0usize;
        for d in 0..self.n {
            let t = ((y[d] + self.radius) / self.h).round();
            if t < 0.0 || t > (self.resolution - 1) as f64 {
                return false;
            }
            idx += (t as usize) * self.stride(d);
        }
        mask[idx]
    }

    /// Sampled midpoint semiconcavity check (Eq.-style second difference):
    /// V(x1) + V(x2) - 2 V(mid) <= lambda |x1 - x2|^2 + tol.
    pub fn check_semiconcavity(
        &self,
        mask: &[bool],
        lambda: f64,
        pairs: usize,
        tol: f64,
        seed: u64,
    ) -> Result<SemiconcavityReport> {
        let mask_nodes: Vec<usize> = (0..self.node_count()).filter(|&i| mask[i]).collect();
        if mask_nodes.is_empty() {
            return Err(Error::Infeasible("semiconcavity region empty".into()));
        }
        let mut rng = CounterRng::new(seed, 0x5c);
        let mut x1 = vec![0.0; self.n];
        let mut x2 = vec![0.0; self.n];
        let mut mid = vec![0.0; self.n];
        let mut violations = 0usize;
        let mut max_excess = f64::NEG_INFINITY;
        let mut done = 0usize;
        while done < pairs {
            self.sample_mask_point(mask, &mask_nodes, &mut rng, &mut x1);
            self.sample_mask_point(mask, &mask_nodes, &mut rng, &mut x2);
            for d in 0..self.n {
                mid[d] = 0.5 * (x1[d] + x2[d]);
            }
            if !self.mask_contains(mask, &mid) {
                continue;
            }
            let d2 = crate::math::dist2(&x1, &x2);
            if d2 < (0.5 * self.h) * (0.5 * self.h) {
                continue;
            }
            let lhs = self.value(&x1) + self.value(&x2) - 2.0 * self.value(&mid);
            let excess = lhs - lambda * d2;
            if excess > max_excess {
                max_excess = excess;
            }
            if excess > tol {
                violations += 1;
            }
            done += 1;
        }
        Ok(SemiconcavityReport {
            pairs,
            violations,
            max_excess,
        })
    }

    /// Estimate-mode: smallest lambda with zero sampled violations, over
    /// both midpoint pairs and one-sided Taylor residuals at differentiable
    /// base points (the latter is what the quadratic upper bound needs).
    pub fn estimate_semiconcavity(&self, mask: &[bool], pairs: usize, seed: u64) -> Result<f64> {
        let mask_nodes: Vec<usize> = (0..self.node_count()).filter(|&i| mask[i]).collect();
        if mask_nodes.is_empty() {
            return Err(Error::Infeasible("semiconcavity region empty".into()));
        }
        let mut rng = CounterRng::new(seed, 0x5e);
        let mut x1 = vec![0.0; self.n];
        let mut x2 = vec![0.0; self.n];
        let mut mid = vec![0.0; self.n];
        let mut lam = 0.0f64;
        let mut done = 0usize;
        while done < pairs {
            self.sample_mask_point(mask, &mask_nodes, &mut rng, &mut x1);
            self.sample_mask_point(mask, &mask_nodes, &mut rng, &mut x2);
            for d in 0..self.n {
                mid[d] = 0.5 * (x1[d] + x2[d]);
            }
            if !self.mask_contains(mask, &mid) {
                continue;
            }
            let d2 = crate::math::dist2(&x1, &x2);
            if d2 < (2.0 * self.h) * (2.0 * self.h) {
                continue;
            }
            let lhs = self.value(&x1) + self.value(&x2) - 2.0 * self.value(&mid);
            if lhs / d2 > lam {
                lam = lhs / d2;
            }
            // Taylor residual from x1 toward x2 when the gradient is clean.
            if let Ok(flag) = self.gradient(&x1) {
                if flag.differentiable {
                    let lin: f64 = (0..self.n)
                        .map(|d| flag.gradient[d] * (x2[d] - x1[d]))
                        .sum();
                    let resid = self.value(&x2) - self.value(&x1) - lin;
                    if resid / d2 > lam {
                        lam = resid / d2;
                    }
                }
            }
            done += 1;
        }
        Ok(lam)
    }

    /// Hamilton-Jacobi decrease margin at a differentiable point:
    /// min_u <grad V(y), f(y,u)> + 1.
    pub fn check_hj_decrease(&self, sys: &ControlSystem, y: &[f64]) -> Result<HjReport> {
        let flag = self.gradient(y)?;
        if !flag.differentiable {
            return Err(Error::NotDifferentiable);
        }
        let mut f = vec![0.0; self.n];
        let mut best = f64::INFINITY;
        let mut best_control = 0usize;
        for u in &sys.controls {
            sys.eval_into(y, &u.coords, &mut f);
            let p = dot(&flag.gradient, &f);
            if p < best {
                best = p;
                best_control = u.index;
            }
        }
        Ok(HjReport {
            best_control,
            margin: best + 1.0,
        })
    }
}

/// Solves the optimal-stopping value iteration on the grid.
pub fn solve_value_function(
    sys: &ControlSystem,
    eps: f64,
    t_prime: f64,
    spec: &GridSpec,
) -> Result<GridValueFunction> {
    if spec.resolution < 3 {
        return Err(Error::Config(format!(
            "grid resolution must be >= 3, got {}",
            spec.resolution
        )));
    }
    let need = domain_bound(eps, sys.c_growth, t_prime);
    if spec.radius + 1e-9 < need {
        return Err(Error::Config(format!(
            "grid box half-width {} smaller than z(T') = {need}",
            spec.radius
        )));
    }
    let n = sys.n;
    let res = spec.resolution;
    let node_count = res.pow(n as u32);
    let h = 2.0 * spec.radius / (res - 1) as f64;
    let cap = 10.0 * t_prime;
    let p = PenaltyParams { eps };

    // Stopping values (penalty capped to keep everything finite).
    let mut y = vec![0.0; n];
    let mut stop = vec![0.0f64; node_count];
    let grid_tmp = GridValueFunction {
        n,
        resolution: res,
        radius: spec.radius,
        h,
        eps,
        t_prime,
        cap,
        values: vec![0.0; node_count],
        residual: 0.0,
        sweeps: 0,
        lip_estimate: 0.0,
        reg_threshold: 0.0,
    };
    for i in 0..node_count {
        grid_tmp.node_point(i, &mut y);
        stop[i] = penalty(&y, &p).min(cap);
    }
    // Partial-step stop candidates: travel theta*dt along the control
    // chord, then stop and pay the penalty evaluated exactly. This keeps
    // the final approach free of interpolation bias from the convex
    // penalty core.
    const THETAS: [f64; 8] = [0.125, 0.25, 0.375, 0.5, 0.625, 0.75, 0.875, 1.0];

    // Precompute per (node, control): dt and the interpolation stencil of
    // the midpoint-rule characteristic foot y + dt f(y + dt/2 f(y,u), u).
    let m = sys.controls.len();
    let corners = 1usize << n;
    #[derive(Clone)]
    struct Stencil {
        base: u32,
        valid: bool,
        w: [f64; 8],
    }
    let strides: Vec<usize> = (0..n).map(|d| res.pow(d as u32)).collect();
    let per_node: Vec<(Vec<Stencil>, f64, f64)> = (0..node_count)
        .into_par_iter()
        .map(|i| {
            let mut y = vec![0.0; n];
            let mut f = vec![0.0; n];
            let mut midp = vec![0.0; n];
            let mut foot = vec![0.0; n];
            let mut out = Vec::with_capacity(m);
            let mut rem = i;
            for d in 0..n {
                let ix = rem % res;
                rem /= res;
                y[d] = -spec.radius + ix as f64 * h;
            }
            let mut vmax = 1e-9f64;
            for u in &sys.controls {
                sys.eval_into(&y, &u.coords, &mut f);
                let v = norm(&f);
                if v > vmax {
                    vmax = v;
                }
            }
            let dt = spec.cfl * h / vmax;
            let mut stop_i = stop[i];
            for u in &sys.controls {
                sys.eval_into(&y, &u.coords, &mut f);
                for d in 0..n {
                    midp[d] = y[d] + 0.5 * dt * f[d];
                }
                sys.eval_into(&midp, &u.coords, &mut f);
                for d in 0..n {
                    foot[d] = y[d] + dt * f[d];
                }
                for &theta in &THETAS {
                    for d in 0..n {
                        midp[d] = y[d] + theta * (foot[d] - y[d]);
                    }
                    let cand = theta * dt + penalty(&midp, &p);
                    if cand < stop_i {
                        stop_i = cand;
                    }
                }
                // build stencil
                let mut base = 0usize;
                let mut frac = [0.0f64; 8];
                let mut valid = true;
                for d in 0..n {
                    let t = (foot[d] + spec.radius) / h;
                    if !(t >= 0.0) || t > (res - 1) as f64 {
                        valid = false;
                        break;
                    }
                    let mut ix = t.floor() as usize;
                    if ix >= res - 1 {
                        ix = res - 2;
                    }
                    frac[d] = (t - ix as f64).clamp(0.0, 1.0);
                    base += ix * strides[d];
                }
                let mut w = [0.0f64; 8];
                if valid {
                    for c in 0..corners {
                        let mut weight = 1.0;
                        for d in 0..n {
                            if c & (1 << d) != 0 {
                                weight *= frac[d];
                            } else {
                                weight *= 1.0 - frac[d];
                            }
                        }
                        w[c] = weight;
                    }
                }
                out.push(Stencil {
                    base: base as u32,
                    valid,
                    w,
                });
            }
            (out, stop_i, dt)
        })
        .collect();
    let mut stencils = Vec::with_capacity(node_count * m);
    let mut dt_node = vec![0.0f64; node_count];
    for (i, (sts, stop_i, dt)) in per_node.into_iter().enumerate() {
        stencils.extend(sts);
        stop[i] = stop_i;
        dt_node[i] = dt;
    }

    // Corner offsets for gathering.
    let mut corner_off = [0usize; 8];
    for c in 0..corners {
        let mut off = 0usize;
        for d in 0..n {
            if c & (1 << d) != 0 {
                off += strides[d];
            }
        }
        corner_off[c] = off;
    }

    let mut values = stop.clone();
    let mut residual = f64::INFINITY;
    let mut sweeps = 0usize;
    while sweeps < spec.max_sweeps && residual > spec.tol {
        let old = &values;
        let new: Vec<f64> = (0..node_count)
            .into_par_iter()
            .map(|i| {
                let mut best = stop[i];
                let dt = dt_node[i];
                let row = &stencils[i * m..(i + 1) * m];
                for st in row {
                    let cont = if st.valid {
                        let mut acc = 0.0;
                        let b = st.base as usize;
                        for c in 0..corners {
                            acc += st.w[c] * old[b + corner_off[c]];
                        }
                        acc
                    } else {
                        cap
                    };
                    let cand = dt + cont;
                    if cand < best {
                        best = cand;
                    }
                }
                best
            })
            .collect();
        residual = new
            .iter()
            .zip(values.iter())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f64, f64::max);
        values = new;
        sweeps += 1;
    }
    if residual > spec.tol {
        return Err(Error::NoConvergence { residual, sweeps });
    }

    let mut grid = GridValueFunction::from_values(n, res, spec.radius, eps, t_prime, values);
    grid.residual = residual;
    grid.sweeps = sweeps;
    Ok(grid)
}

/// Independent oracle for the planar single integrator: V depends only on
/// |y| and equals min over stop radii r of (|y| - r) + r^2/(eps^2 - r^2),
/// minimized by golden section.
pub fn single_integrator_oracle(r: f64, eps: f64) -> f64 {
    let obj = |s: f64| {
        let phi = s * s / (eps * eps - s * s);
        (r - s).max(0.0) + phi
    };
    let hi = eps * (1.0 - 1e-9);
    let (_, v) = crate::math::golden_section_min(obj, 0.0, hi.min(r.max(1e-12)), 1e-10);
    // stopping immediately is always admissible
    let stop_now = if r < eps {
        r * r / (eps * eps - r * r)
    } else {
        f64::INFINITY
    };
    v.min(stop_now)
}

/// Sup error of the grid against the radial oracle over a node mask.
pub fn oracle_error_on_mask(grid: &GridValueFunction, mask: &[bool]) -> f64 {
    let mut y = vec![0.0; grid.n];
    let mut worst = 0.0f64;
    for i in 0..grid.node_count() {
        if !mask[i] {
            continue;
        }
        grid.node_point(i, &mut y);
        let exact = single_integrator_oracle(norm(&y), grid.eps);
        let err = (grid.values[i] - exact).abs();
        if err > worst {
            worst = err;
        }
    }
    worst
}

/// Convenience: true when every masked node lies inside B_{z(T)}.
pub fn mask_inside_ball(grid: &GridValueFunction, mask: &[bool], radius: f64) -> bool {
    let mut y = vec![0.0; grid.n];
    for i in 0..grid.node_count() {
        if mask[i] {
            grid.node_point(i, &mut y);
            if norm(&y) > radius + 1e-12 {
                return false;
            }
        }
    }
    true
}

/// Max |V(node)| deviation helper used by tests comparing against a known
/// bound min(phi, T(y)): returns the worst positive excess.
pub fn upper_bound_excess<F: Fn(&[f64]) -> f64>(grid: &GridValueFunction, bound: F) -> f64 {
    let mut y = vec![0.0; grid.n];
    let mut worst: f64 = 0.0;
    for i in 0..grid.node_count() {
        grid.node_point(i, &mut y);
        let b = bound(&y);
        if b.is_finite() {
            worst = worst.max(grid.values[i] - b);
        }
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::system::ControlSystem;

    fn s1() -> ControlSystem {
        ControlSystem::benchmark("single-integrator-2d", 16).unwrap()
    }

    #[test]
    fn penalty_matches_formula() {
        let p = PenaltyParams { eps: 0.5 };
        assert_eq!(penalty(&[0.0, 0.0], &p), 0.0);
        assert!(penalty(&[0.5, 0.0], &p).is_infinite());
        assert!((penalty(&[0.3, 0.0], &p) - 0.5625).abs() < 1e-15);
        // nondecreasing in |x| on [0, eps)
        let mut last = 0.0;
        for k in 0..50 {
            let r = 0.4999 * k as f64 / 49.0;
            let v = penalty(&[r, 0.0], &p);
            assert!(v >= last);
            last = v;
        }
    }

    #[test]
    fn domain_bound_matches_closed_form() {
        assert!((domain_bound(0.5, 1.0, 0.0) - 0.5).abs() < 1e-15);
        assert!((domain_bound(0.5, 1.0, 1.0) - 3.077422742688568).abs() < 1e-12);
        assert!((domain_bound(0.5, 1.0, 2.01) - 10.194976020978789).abs() < 1e-12);
    }

    fn quick_grid() -> GridValueFunction {
        let sys = s1();
        let spec = GridSpec::standard(domain_bound(0.5, 1.0, 2.01), 101);
        solve_value_function(&sys, 0.5, 2.01, &spec).unwrap()
    }

    #[test]
    fn value_zero_at_origin_and_below_min_time() {
        let g = quick_grid();
        assert!(g.value(&[0.0, 0.0]) < 1e-6);
        // V <= min(phi, |y|) + grid tolerance on every node
        let tol = 2.0 * g.h * g.lip_estimate.max(1.0);
        let p = PenaltyParams { eps: 0.5 };
        let excess = upper_bound_excess(&g, |y| {
            let t = norm(y);
            penalty(y, &p).min(t)
        });
        assert!(excess <= tol, "excess {excess} > tol {tol}");
    }

    #[test]
    fn coarse_grid_tracks_radial_oracle() {
        let g = quick_grid();
        // Lambda_{T,eps} nodes: V <= 1, |y| >= 0.5
        let mut mask = vec![false; g.node_count()];
        let mut y = vec![0.0; 2];
        for i in 0..g.node_count() {
            g.node_point(i, &mut y);
            if g.values[i] <= 1.0 && norm(&y) >= 0.5 {
                mask[i] = true;
            }
        }
        let err = oracle_error_on_mask(&g, &mask);
        // first-order scheme on the 101^2 grid (h ~ 0.2)
        assert!(err < 0.08, "oracle error {err}");
    }

    #[test]
    fn iteration_is_monotone_from_penalty() {
        // re-run a couple of sweeps manually at tiny resolution
        let sys = s1();
        let spec = GridSpec {
            resolution: 41,
            radius: domain_bound(0.5, 1.0, 2.01),
            cfl: 1.0,
            tol: 1e-3,
            max_sweeps: 3,
        };
        // max_sweeps too small to converge: expect NoConvergence,
        // which still demonstrates residual decrease (monotone from above).
        match solve_value_function(&sys, 0.5, 2.01, &spec) {
            Err(Error::NoConvergence { residual, .. }) => {
                assert!(residual.is_finite());
            }
            Ok(_) => {}
            Err(e) => panic!("unexpected error {e}"),
        }
    }

    #[test]
    fn sublevel_masks_are_contained_in_comparison_ball() {
        let g = quick_grid();
        let sys = s1();
        let led = crate::constants::derive_constants(
            0.5,
            1.0,
            &sys,
            g.lip_estimate,
            4.2,
            4.0,
            &Default::default(),
        )
        .unwrap();
        let masks = g.sublevel_sets(&led);
        assert!(mask_inside_ball(&g, &masks.lambda_t, domain_bound(0.5, 1.0, 1.0)));
        // Lambda_T contains the origin node
        let origin = (g.resolution / 2) * (1 + g.resolution);
        assert!(masks.lambda_t[origin]);
        // Lambda_{T,eps} excludes nodes with |y| < eps
        let mut y = vec![0.0; 2];
        for i in 0..g.node_count() {
            if masks.lambda_t_eps[i] {
                g.node_point(i, &mut y);
                assert!(norm(&y) >= 0.5);
            }
        }
    }

    #[test]
    fn affine_function_is_semiconcave_with_zero_constant() {
        let res = 41;
        let mut vals = vec![0.0; res * res];
        let radius = 1.0;
        let h = 2.0 * radius / (res - 1) as f64;
        for iy in 0..res {
            for ix in 0..res {
                let x = -radius + ix as f64 * h;
                let y = -radius + iy as f64 * h;
                vals[ix + iy * res] = 0.3 * x - 0.7 * y + 0.1;
            }
        }
        let g = GridValueFunction::from_values(2, res, radius, 0.5, 2.01, vals);
        let mask = vec![true; g.node_count()];
        let rep = g.check_semiconcavity(&mask, 0.0, 2000, 1e-9, 7).unwrap();
        assert_eq!(rep.violations, 0);
    }

    #[test]
    fn concave_quadratic_passes_and_convex_fails() {
        let res = 41;
        let radius = 1.0;
        let h = 2.0 * radius / (res - 1) as f64;
        let build = |sign: f64| {
            let mut vals = vec![0.0; res * res];
            for iy in 0..res {
                for ix in 0..res {
                    let x = -radius + ix as f64 * h;
                    let y = -radius + iy as f64 * h;
                    vals[ix + iy * res] = sign * (x * x + y * y);
                }
            }
            GridValueFunction::from_values(2, res, radius, 0.5, 2.01, vals)
        };
        let mask = vec![true; res * res];
        // V = -|x|^2: second difference equals |x1-x2|^2 / 2
        let gm = build(-1.0);
        let rep = gm.check_semiconcavity(&mask, 1.0, 2000, 1e-9, 8).unwrap();
        assert_eq!(rep.violations, 0);
        // V = +|x|^2 is not semiconcave with lambda = 0
        let gp = build(1.0);
        let rep = gp.check_semiconcavity(&mask, 0.0, 2000, 1e-9, 9).unwrap();
        assert!(rep.violations > 0);
    }

    #[test]
    fn estimate_then_check_has_no_violations() {
        let g = quick_grid();
        let mut mask = vec![false; g.node_count()];
        let mut y = vec![0.0; 2];
        for i in 0..g.node_count() {
            g.node_point(i, &mut y);
            if g.values[i] <= g.t_prime {
                mask[i] = true;
            }
        }
        let lam = g.estimate_semiconcavity(&mask, 4000, 11).unwrap();
        let rep = g
            .check_semiconcavity(&mask, 1.5 * lam, 4000, 1e-8, 12)
            .unwrap();
        assert_eq!(rep.violations, 0, "lam={lam} max_excess={}", rep.max_excess);
    }

    #[test]
    fn hj_margin_points_against_gradient() {
        let g = quick_grid();
        let sys = s1();
        let rep = g.check_hj_decrease(&sys, &[1.0, 0.0]).unwrap();
        let u = &sys.controls[rep.best_control];
        assert!(u.coords[0] < -0.9, "control {:?}", u.coords);
        assert!(rep.margin <= 0.0560, "margin {}", rep.margin);
    }

    #[test]
    fn constant_grid_has_zero_gradient_and_unit_margin() {
        let res = 21;
        let g = GridValueFunction::from_values(2, res, 1.0, 0.5, 2.01, vec![1.0; res * res]);
        let flag = g.gradient(&[0.1, 0.1]).unwrap();
        assert!(flag.differentiable);
        assert!(norm(&flag.gradient) < 1e-12);
        let sys = s1();
        let rep = g.check_hj_decrease(&sys, &[0.1, 0.1]).unwrap();
        assert!((rep.margin - 1.0).abs() < 1e-9);
    }

    #[test]
    fn min_switch_ridge_is_flagged_nondifferentiable() {
        let res = 41;
        let radius = 1.0;
        let h = 2.0 * radius / (res - 1) as f64;
        let mut vals = vec![0.0; res * res];
        for iy in 0..res {
            for ix in 0..res {
                let x = -radius + ix as f64 * h;
                vals[ix + iy * res] = x.abs(); // kink along x = 0
            }
        }
        let g = GridValueFunction::from_values(2, res, radius, 0.5, 2.01, vals);
        let flag = g.gradient(&[0.0, 0.2]).unwrap();
        assert!(!flag.differentiable);
    }

    #[test]
    fn small_grid_is_rejected() {
        let sys = s1();
        let spec = GridSpec::standard(domain_bound(0.5, 1.0, 2.01), 2);
        assert!(solve_value_function(&sys, 0.5, 2.01, &spec).is_err());
        let spec2 = GridSpec::standard(1.0, 51);
        assert!(solve_value_function(&sys, 0.5, 2.01, &spec2).is_err());
    }
}
