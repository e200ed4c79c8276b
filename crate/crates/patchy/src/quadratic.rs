//! Piecewise-quadratic upper approximation of the value function:
//! `~V = min_i V_i` with `V_i(x) = V(y_i) + <grad V(y_i), x - y_i> + (1+lambda)|x - y_i|^2`,
//! one control value per piece, and bisector hyperplanes between pieces.
//!
//! All pieces share the quadratic coefficient, so every level set of a
//! piece is a sphere and every bisector {V_k = V_i} is a hyperplane whose
//! normal is the constant vector grad V_k - grad V_i (the quadratic terms
//! cancel bit-exactly).

use std::collections::BinaryHeap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::constants::ConstantsLedger;
use crate::error::{Error, Result};
use crate::geometry::Hyperplane;
use crate::math::{dist, dist2, dot};
use crate::rng::CounterRng;
use crate::system::{ControlSystem, ControlValue};
use crate::value::GridValueFunction;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct QuadraticPiece {
    pub index: usize,
    /// Center y_i (a differentiable point of V).
    pub center: Vec<f64>,
    /// V(y_i).
    pub value: f64,
    /// grad V(y_i).
    pub grad: Vec<f64>,
    /// Index of the selected control v^i in the system's control set.
    pub control_index: usize,
    /// min_u <grad V(y_i), f(y_i, u)> + 1 at the center.
    pub hj_margin: f64,
    /// Whether the margin met the strict -1 + eps1 gate.
    pub hj_ok: bool,
}

impl QuadraticPiece {
    /// V_i(x) for shared coefficient `coeff` = 1 + lambda.
    #[inline]
    pub fn eval(&self, x: &[f64], coeff: f64) -> f64 {
        let mut lin = self.value;
        let mut q = 0.0;
        for d in 0..x.len() {
            let dx = x[d] - self.center[d];
            lin += self.grad[d] * dx;
            q += dx * dx;
        }
        lin + coeff * q
    }

    /// grad V_i(x) written into `out`.
    #[inline]
    pub fn grad_at(&self, x: &[f64], coeff: f64, out: &mut [f64]) {
        for d in 0..x.len() {
            out[d] = self.grad[d] + 2.0 * coeff * (x[d] - self.center[d]);
        }
    }

    /// Center omega_i of the spherical level sets.
    pub fn sphere_center(&self, coeff: f64) -> Vec<f64> {
        self.center
            .iter()
            .zip(&self.grad)
            .map(|(y, g)| y - g / (2.0 * coeff))
            .collect()
    }

    /// Minimum b_i of V_i (attained at omega_i).
    pub fn min_value(&self, coeff: f64) -> f64 {
        let g2: f64 = self.grad.iter().map(|g| g * g).sum();
        self.value - g2 / (4.0 * coeff)
    }

    /// Radius of the level sphere {V_i = tau}, if it exists.
    pub fn radius_at(&self, tau: f64, coeff: f64) -> Option<f64> {
        let b = self.min_value(coeff);
        if tau > b {
            Some(((tau - b) / coeff).sqrt())
        } else {
            None
        }
    }
}

/// Uniform bucket grid over piece locations for fast min queries.
#[derive(Clone, Debug, Default)]
struct BucketIndex {
    cell: f64,
    origin: Vec<f64>,
    dims: Vec<usize>,
    buckets: Vec<Vec<u32>>,
    min_b: Vec<f64>,
    global_min_b: f64,
}

impl BucketIndex {
    fn build(points: &[Vec<f64>], b_vals: &[f64], cell: f64) -> BucketIndex {
        let n = points[0].len();
        let mut lo = vec![f64::INFINITY; n];
        let mut hi = vec![f64::NEG_INFINITY; n];
        for p in points {
            for d in 0..n {
                lo[d] = lo[d].min(p[d]);
                hi[d] = hi[d].max(p[d]);
            }
        }
        let dims: Vec<usize> = (0..n)
            .map(|d| (((hi[d] - lo[d]) / cell).floor() as usize + 1).max(1))
            .collect();
        let total: usize = dims.iter().product();
        let mut buckets = vec![Vec::new(); total];
        let mut min_b = vec![f64::INFINITY; total];
        let mut global_min_b = f64::INFINITY;
        for (i, p) in points.iter().enumerate() {
            let mut idx = 0usize;
            let mut stride = 1usize;
            for d in 0..n {
                let k = (((p[d] - lo[d]) / cell).floor() as usize).min(dims[d] - 1);
                idx += k * stride;
                stride *= dims[d];
            }
            buckets[idx].push(i as u32);
            min_b[idx] = min_b[idx].min(b_vals[i]);
            global_min_b = global_min_b.min(b_vals[i]);
        }
        BucketIndex {
            cell,
            origin: lo,
            dims,
            buckets,
            min_b,
            global_min_b,
        }
    }

    fn cell_of(&self, x: &[f64], d: usize) -> i64 {
        ((x[d] - self.origin[d]) / self.cell).floor() as i64
    }

    /// Visits buckets in expanding square shells around x. The callback
    /// returns the current best value; iteration stops when no remaining
    /// bucket can beat it.
    fn search<F: FnMut(&[u32]) -> f64>(&self, x: &[f64], coeff: f64, mut visit: F) {
        let n = self.origin.len();
        let home: Vec<i64> = (0..n).map(|d| self.cell_of(x, d)).collect();
        let span = self
            .dims
            .iter()
            .enumerate()
            .map(|(d, &dim)| {
                let lo = -home[d];
                let hi = dim as i64 - 1 - home[d];
                lo.abs().max(hi.abs())
            })
            .max()
            .unwrap_or(0);
        let mut best = f64::INFINITY;
        for ring in 0..=span {
            let ring_dist = (ring - 1).max(0) as f64 * self.cell;
            if coeff * ring_dist * ring_dist + self.global_min_b >= best {
                break;
            }
            self.for_ring(&home, ring, |idx| {
                let bucket = &self.buckets[idx];
                if bucket.is_empty() {
                    return;
                }
                if coeff * ring_dist * ring_dist + self.min_b[idx] >= best {
                    return;
                }
                let v = visit(bucket);
                if v < best {
                    best = v;
                }
            });
        }
    }

    fn for_ring<F: FnMut(usize)>(&self, home: &[i64], ring: i64, mut f: F) {
        let n = self.origin.len();
        match n {
            1 => {
                for &dx in &[-ring, ring] {
                    let c = home[0] + dx;
                    if c >= 0 && (c as usize) < self.dims[0] {
                        f(c as usize);
                    }
                    if ring == 0 {
                        break;
                    }
                }
            }
            2 => {
                let (w, h) = (self.dims[0] as i64, self.dims[1] as i64);
                for dy in -ring..=ring {
                    let y = home[1] + dy;
                    if y < 0 || y >= h {
                        continue;
                    }
                    if dy.abs() == ring {
                        for dx in -ring..=ring {
                            let x = home[0] + dx;
                            if x >= 0 && x < w {
                                f((x + y * w) as usize);
                            }
                        }
                    } else {
                        for &dx in &[-ring, ring] {
                            let x = home[0] + dx;
                            if x >= 0 && x < w {
                                f((x + y * w) as usize);
                            }
                            if ring == 0 {
                                break;
                            }
                        }
                    }
                }
            }
            _ => {
                let mut counter = vec![-ring; n];
                'outer: loop {
                    if counter.iter().any(|c| c.abs() == ring) {
                        let mut idx = 0usize;
                        let mut stride = 1usize;
                        let mut ok = true;
                        for d in 0..n {
                            let c = home[d] + counter[d];
                            if c < 0 || c as usize >= self.dims[d] {
                                ok = false;
                                break;
                            }
                            idx += c as usize * stride;
                            stride *= self.dims[d];
                        }
                        if ok {
                            f(idx);
                        }
                    }
                    for d in 0..n {
                        counter[d] += 1;
                        if counter[d] <= ring {
                            continue 'outer;
                        }
                        counter[d] = -ring;
                    }
                    break;
                }
            }
        }
    }

    /// Indices of stored points within `radius` of x.
    fn within(&self, x: &[f64], radius: f64, points: &[Vec<f64>]) -> Vec<usize> {
        let n = self.origin.len();
        let r_cells = (radius / self.cell).ceil() as i64 + 1;
        let mut out = Vec::new();
        let home: Vec<i64> = (0..n).map(|d| self.cell_of(x, d)).collect();
        let r2 = radius * radius;
        for ring in 0..=r_cells {
            self.for_ring(&home, ring, |idx| {
                for &i in &self.buckets[idx] {
                    if dist2(x, &points[i as usize]) <= r2 {
                        out.push(i as usize);
                    }
                }
            });
        }
        out.sort_unstable();
        out
    }
}

/// The piecewise-quadratic surrogate with its spatial indexes.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PiecewiseQuadratic {
    pub lambda: f64,
    pub pieces: Vec<QuadraticPiece>,
    pub ledger: ConstantsLedger,
    #[serde(skip)]
    omega_index: BucketIndex,
    #[serde(skip)]
    center_index: BucketIndex,
    #[serde(skip)]
    omegas: Vec<Vec<f64>>,
    #[serde(skip)]
    centers: Vec<Vec<f64>>,
    #[serde(skip)]
    pub min_values: Vec<f64>,
}

impl PiecewiseQuadratic {
    pub fn new(lambda: f64, pieces: Vec<QuadraticPiece>, ledger: ConstantsLedger) -> Self {
        let mut pq = PiecewiseQuadratic {
            lambda,
            pieces,
            ledger,
            omega_index: BucketIndex::default(),
            center_index: BucketIndex::default(),
            omegas: Vec::new(),
            centers: Vec::new(),
            min_values: Vec::new(),
        };
        pq.rebuild_index();
        pq
    }

    /// Rebuilds the spatial indexes (needed after deserialization).
    pub fn rebuild_index(&mut self) {
        let coeff = self.coeff();
        self.omegas = self
            .pieces
            .iter()
            .map(|p| p.sphere_center(coeff))
            .collect();
        self.min_values = self.pieces.iter().map(|p| p.min_value(coeff)).collect();
        self.centers = self.pieces.iter().map(|p| p.center.clone()).collect();
        let cell = (2.0 * self.ledger.eps2).max(1e-6);
        self.omega_index = BucketIndex::build(&self.omegas, &self.min_values, cell);
        self.center_index = BucketIndex::build(&self.centers, &self.min_values, cell);
    }

    #[inline]
    pub fn coeff(&self) -> f64 {
        1.0 + self.lambda
    }

    pub fn len(&self) -> usize {
        self.pieces.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pieces.is_empty()
    }

    /// ~V(x) with the argmin index; ties break to the smallest index.
    pub fn eval(&self, x: &[f64]) -> Result<(f64, usize)> {
        if self.pieces.is_empty() {
            return Err(Error::Infeasible("empty piece list".into()));
        }
        let coeff = self.coeff();
        let mut best = f64::INFINITY;
        let mut best_i = usize::MAX;
        self.omega_index.search(x, coeff, |bucket| {
            for &i in bucket {
                let i = i as usize;
                let v = self.pieces[i].eval(x, coeff);
                if v < best || (v == best && i < best_i) {
                    best = v;
                    best_i = i;
                }
            }
            best
        });
        Ok((best, best_i))
    }

    /// ~V value only.
    pub fn tilde_v(&self, x: &[f64]) -> f64 {
        self.eval(x).map(|(v, _)| v).unwrap_or(f64::INFINITY)
    }

    /// Pieces whose centers lie within `radius` of x.
    pub fn centers_within(&self, x: &[f64], radius: f64) -> Vec<usize> {
        self.center_index.within(x, radius, &self.centers)
    }

    /// Pieces whose sphere centers lie within `radius` of x.
    pub fn omegas_within(&self, x: &[f64], radius: f64) -> Vec<usize> {
        self.omega_index.within(x, radius, &self.omegas)
    }

    pub fn omega(&self, i: usize) -> &[f64] {
        &self.omegas[i]
    }

    /// Bisector hyperplane {V_k = V_i}, oriented so the normal points into
    /// pi+ = {V_k > V_i}.
    pub fn bisector(&self, k: usize, i: usize) -> Result<Hyperplane> {
        if k == i {
            return Err(Error::DegenerateBisector { k, i });
        }
        let coeff = self.coeff();
        let (pk, pi) = (&self.pieces[k], &self.pieces[i]);
        let n = pk.center.len();
        // V_k - V_i = <w, x> + const with w = g_k - g_i - 2c (y_k - y_i)
        let mut w = vec![0.0; n];
        for d in 0..n {
            w[d] = pk.grad[d] - pi.grad[d] - 2.0 * coeff * (pk.center[d] - pi.center[d]);
        }
        let wn = crate::math::norm(&w);
        let scale = (crate::math::norm(&pk.grad) + crate::math::norm(&pi.grad)).max(1.0);
        if wn < 1e-12 * scale {
            return Err(Error::DegenerateBisector { k, i });
        }
        let const_term = pk.value - pi.value - dot(&pk.grad, &pk.center)
            + dot(&pi.grad, &pi.center)
            + coeff * (dot(&pk.center, &pk.center) - dot(&pi.center, &pi.center));
        // plane: <w, x> + const_term = 0
        Ok(Hyperplane::from_normal_offset(&w, -const_term))
    }

    /// Constant gradient difference grad V_k - grad V_i.
    pub fn grad_diff(&self, k: usize, i: usize) -> Vec<f64> {
        let coeff = self.coeff();
        let (pk, pi) = (&self.pieces[k], &self.pieces[i]);
        (0..pk.center.len())
            .map(|d| pk.grad[d] - pi.grad[d] - 2.0 * coeff * (pk.center[d] - pi.center[d]))
            .collect()
    }
}

/// Builds the quadratic upper approximant at a differentiable point.
pub fn build_quadratic(
    grid: &GridValueFunction,
    y: &[f64],
    lambda: f64,
) -> Result<QuadraticPiece> {
    let flag = grid.gradient(y)?;
    if !flag.differentiable {
        return Err(Error::NotDifferentiable);
    }
    let _ = lambda;
    Ok(QuadraticPiece {
        index: 0,
        center: y.to_vec(),
        value: grid.value(y),
        grad: flag.gradient,
        control_index: 0,
        hj_margin: f64::NAN,
        hj_ok: false,
    })
}

/// Selects the control minimizing <grad V(y), f(y, u)>; fails when the
/// minimum does not reach -1 + eps1.
pub fn select_control(
    sys: &ControlSystem,
    grid: &GridValueFunction,
    y: &[f64],
    eps1: f64,
) -> Result<ControlValue> {
    let rep = grid.check_hj_decrease(sys, y)?;
    if rep.margin >= eps1 {
        return Err(Error::HjMarginFailure {
            point: y.to_vec(),
            margin: rep.margin,
        });
    }
    Ok(sys.control(rep.best_control).clone())
}

/// Covering options for `sample_centers`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CoveringOptions {
    /// Number of candidate/validation sample points of Lambda_{T',eps0}.
    pub build_samples: usize,
    pub max_centers: usize,
    /// Stop when the worst sampled gap <= factor * eps2^2.
    pub gap_target_factor: f64,
    /// Reject duplicate centers closer than this.
    pub dup_tol: f64,
    /// Jitter attempts around nondifferentiable / HJ-failing candidates.
    pub jitter_tries: usize,
    pub seed: u64,
}

impl Default for CoveringOptions {
    fn default() -> Self {
        CoveringOptions {
            build_samples: 120_000,
            max_centers: 60_000,
            gap_target_factor: 0.9,
            dup_tol: 1e-6,
            jitter_tries: 8,
            seed: 1,
        }
    }
}

/// Covering statistics.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CoveringReport {
    pub n_centers: usize,
    pub max_gap: f64,
    pub hj_flagged: usize,
    pub samples: usize,
}

struct HeapEntry {
    gap: f64,
    idx: u32,
}
impl PartialEq for HeapEntry {
    fn eq(&self, other: &Self) -> bool {
        self.gap == other.gap && self.idx == other.idx
    }
}
impl Eq for HeapEntry {}
impl PartialOrd for HeapEntry {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for HeapEntry {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.gap
            .partial_cmp(&other.gap)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(self.idx.cmp(&other.idx).reverse())
    }
}

/// Greedy worst-gap covering of Lambda_{T',eps0}: repeatedly centers a new
/// quadratic at the sample point with the largest current gap ~V - V until
/// the sampled sandwich bound `~V <= V + eps2^2` holds.
pub fn sample_centers(
    grid: &GridValueFunction,
    sys: &ControlSystem,
    ledger: &ConstantsLedger,
    lambda: f64,
    opts: &CoveringOptions,
) -> Result<(PiecewiseQuadratic, CoveringReport)> {
    let n = grid.n;
    let coeff = 1.0 + lambda;
    let mut rng = CounterRng::new(opts.seed, 0xc0);
    let mut samples: Vec<Vec<f64>> = Vec::with_capacity(opts.build_samples);
    let mut v_cache: Vec<f64> = Vec::with_capacity(opts.build_samples);
    let bound = ledger.l_bound.min(grid.radius);
    let mut attempts = 0usize;
    let max_attempts = opts.build_samples.saturating_mul(400);
    let mut x = vec![0.0; n];
    while samples.len() < opts.build_samples && attempts < max_attempts {
        attempts += 1;
        rng.fill_uniform(&mut x, -bound, bound);
        let r = crate::math::norm(&x);
        if r < ledger.eps0 {
            continue;
        }
        let v = grid.value(&x);
        if v > ledger.t_prime {
            continue;
        }
        samples.push(x.clone());
        v_cache.push(v);
    }
    if samples.is_empty() {
        return Err(Error::CoveringFailure(
            "Lambda_{T',eps0} sample set is empty".into(),
        ));
    }
    let m = samples.len();

    let mut cur: Vec<f64> = vec![f64::INFINITY; m];
    let mut heap: BinaryHeap<HeapEntry> = (0..m)
        .map(|j| HeapEntry {
            gap: f64::INFINITY,
            idx: j as u32,
        })
        .collect();

    let gap_target = opts.gap_target_factor * ledger.eps2 * ledger.eps2;
    let mut pieces: Vec<QuadraticPiece> = Vec::new();
    let mut hj_flagged = 0usize;
    let mut jrng = CounterRng::new(opts.seed, 0xc1);
    let mut max_gap = f64::INFINITY;
    let mut stuck = 0usize;

    'outer: while pieces.len() < opts.max_centers {
        let (j, gap) = loop {
            match heap.pop() {
                None => break 'outer,
                Some(e) => {
                    let j = e.idx as usize;
                    let true_gap = cur[j] - v_cache[j];
                    let fresh = if e.gap.is_finite() {
                        true_gap >= e.gap - 1e-15 * (1.0 + e.gap.abs())
                    } else {
                        !true_gap.is_finite()
                    };
                    if fresh {
                        break (j, true_gap);
                    }
                    heap.push(HeapEntry {
                        gap: true_gap,
                        idx: e.idx,
                    });
                }
            }
        };
        max_gap = gap;
        if gap <= gap_target {
            break;
        }

        let mut placed = false;
        let mut cand = samples[j].clone();
        for attempt in 0..=opts.jitter_tries {
            if attempt > 0 {
                for d in 0..n {
                    cand[d] = samples[j][d] + 0.5 * grid.h * (jrng.next_f64() - 0.5);
                }
                if crate::math::norm(&cand) < ledger.eps0 || grid.value(&cand) > ledger.t_prime
                {
                    continue;
                }
            }
            if pieces
                .iter()
                .rev()
                .take(64)
                .any(|p| dist(&p.center, &cand) < opts.dup_tol)
            {
                continue;
            }
            let mut piece = match build_quadratic(grid, &cand, lambda) {
                Ok(p) => p,
                Err(_) => continue,
            };
            match grid.check_hj_decrease(sys, &cand) {
                Ok(rep) => {
                    piece.control_index = rep.best_control;
                    piece.hj_margin = rep.margin;
                    piece.hj_ok = rep.margin < ledger.eps1;
                }
                Err(_) => continue,
            }
            if !piece.hj_ok {
                hj_flagged += 1;
            }
            piece.index = pieces.len();
            let piece_ref = &piece;
            let sample_ref = &samples;
            cur.par_iter_mut().enumerate().for_each(|(s, c)| {
                let v = piece_ref.eval(&sample_ref[s], coeff);
                if v < *c {
                    *c = v;
                }
            });
            heap.push(HeapEntry {
                gap: cur[j] - v_cache[j],
                idx: j as u32,
            });
            pieces.push(piece);
            placed = true;
            break;
        }
        if !placed {
            stuck += 1;
            heap.push(HeapEntry {
                gap: gap - 1e-12 * (1.0 + stuck as f64),
                idx: j as u32,
            });
            if stuck > 8 * m {
                return Err(Error::CoveringFailure(format!(
                    "cannot place a center near sample {:?} (gap {gap})",
                    samples[j]
                )));
            }
        }
    }

    if max_gap > gap_target {
        return Err(Error::CoveringFailure(format!(
            "gap target {gap_target} unreachable within {} centers; worst residual {max_gap}",
            opts.max_centers
        )));
    }

    let report = CoveringReport {
        n_centers: pieces.len(),
        max_gap,
        hj_flagged,
        samples: m,
    };
    Ok((
        PiecewiseQuadratic::new(lambda, pieces, ledger.clone()),
        report,
    ))
}

/// Sampled sandwich check: 0 <= ~V - V <= eps2^2 with the grid-V slack.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SandwichReport {
    pub samples: usize,
    pub violations: usize,
    pub max_gap: f64,
    pub min_gap: f64,
}

pub fn check_sandwich(
    pq: &PiecewiseQuadratic,
    grid: &GridValueFunction,
    samples: usize,
    seed: u64,
) -> SandwichReport {
    let led = &pq.ledger;
    let slack = 2.0 * grid.h * led.lip_v;
    let mut rng = CounterRng::new(seed, 0x5a);
    let mut x = vec![0.0; grid.n];
    let bound = led.l_bound.min(grid.radius);
    let mut done = 0usize;
    let mut violations = 0usize;
    let mut max_gap = f64::NEG_INFINITY;
    let mut min_gap = f64::INFINITY;
    while done < samples {
        rng.fill_uniform(&mut x, -bound, bound);
        if crate::math::norm(&x) < led.eps0 {
            continue;
        }
        let v = grid.value(&x);
        if v > led.t_prime {
            continue;
        }
        let tv = pq.tilde_v(&x);
        let gap = tv - v;
        max_gap = max_gap.max(gap);
        min_gap = min_gap.min(gap);
        if gap < -slack || gap > led.eps2 * led.eps2 + slack {
            violations += 1;
        }
        done += 1;
    }
    SandwichReport {
        samples,
        violations,
        max_gap,
        min_gap,
    }
}

/// Locality plus decrease-transfer statistics (spec invariants of the
/// covering, checked by sampling around every `piece_stride`-th piece).
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LocalityReport {
    pub samples: usize,
    pub locality_violations: usize,
    pub transfer_violations: usize,
}

pub fn check_locality_and_transfer(
    pq: &PiecewiseQuadratic,
    grid: &GridValueFunction,
    sys: &ControlSystem,
    samples_per_piece: usize,
    piece_stride: usize,
    seed: u64,
) -> LocalityReport {
    let led = &pq.ledger;
    let coeff = pq.coeff();
    let indices: Vec<usize> = (0..pq.len()).step_by(piece_stride.max(1)).collect();
    let reports: Vec<(usize, usize, usize)> = indices
        .par_iter()
        .map(|&i| {
            let mut rng = CounterRng::new(seed, 0x10_000 + i as u64);
            let piece = &pq.pieces[i];
            let mut x = vec![0.0; grid.n];
            let mut f = vec![0.0; grid.n];
            let mut gv = vec![0.0; grid.n];
            let mut loc = 0usize;
            let mut tr = 0usize;
            let mut count = 0usize;
            let u = &sys.controls[piece.control_index];
            let mut vloc = 0.0f64;
            for _ in 0..16 {
                for d in 0..grid.n {
                    x[d] = piece.center[d] + 2.0 * led.eps2 * (rng.next_f64() - 0.5);
                }
                sys.eval_into(&x, &u.coords, &mut f);
                vloc = vloc.max(crate::math::norm(&f));
            }
            let gnorm = crate::math::norm(&piece.grad);
            let tol =
                2.0 * coeff * 2.0 * led.eps2 * vloc + sys.lip_x * gnorm * 2.0 * led.eps2 + 0.02;
            for _ in 0..samples_per_piece {
                rng.unit_direction(&mut x);
                let r = 2.0 * led.eps2 * rng.next_f64().powf(1.0 / grid.n as f64);
                for d in 0..grid.n {
                    x[d] = piece.center[d] + r * x[d];
                }
                if crate::math::norm(&x) > led.l_prime {
                    continue;
                }
                count += 1;
                if piece.hj_ok {
                    piece.grad_at(&x, coeff, &mut gv);
                    sys.eval_into(&x, &u.coords, &mut f);
                    if dot(&gv, &f) >= -1.0 + 2.0 * led.eps1 + tol {
                        tr += 1;
                    }
                }
                if r > led.eps2
                    && crate::math::norm(&x) >= led.eps0
                    && grid.value(&x) <= led.t_prime
                {
                    if let Ok((_, arg)) = pq.eval(&x) {
                        if arg == i {
                            loc += 1;
                        }
                    }
                }
            }
            (count, loc, tr)
        })
        .collect();
    let mut samples = 0;
    let mut locality_violations = 0;
    let mut transfer_violations = 0;
    for (c, l, t) in reports {
        samples += c;
        locality_violations += l;
        transfer_violations += t;
    }
    LocalityReport {
        samples,
        locality_violations,
        transfer_violations,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::constants::derive_constants;
    use crate::system::ControlSystem;
    use crate::value::{domain_bound, solve_value_function, GridSpec};

    fn s1() -> ControlSystem {
        ControlSystem::benchmark("single-integrator-2d", 16).unwrap()
    }

    fn grid101() -> GridValueFunction {
        let spec = GridSpec::standard(domain_bound(0.5, 1.0, 2.01), 101);
        solve_value_function(&s1(), 0.5, 2.01, &spec).unwrap()
    }

    fn test_piece(center: Vec<f64>, value: f64, grad: Vec<f64>, index: usize) -> QuadraticPiece {
        QuadraticPiece {
            index,
            center,
            value,
            grad,
            control_index: 0,
            hj_margin: -1.0,
            hj_ok: true,
        }
    }

    fn test_ledger() -> ConstantsLedger {
        derive_constants(0.5, 1.0, &s1(), 1.0, 4.2, 4.0, &Default::default()).unwrap()
    }

    #[test]
    fn quadratic_identities_hold() {
        let g = grid101();
        let y = [1.0, 0.0];
        let p = build_quadratic(&g, &y, 4.0).unwrap();
        let coeff = 5.0;
        assert!((p.eval(&y, coeff) - g.value(&y)).abs() < 1e-14);
        let x = [1.3, -0.2];
        let lin: f64 = (0..2).map(|d| p.grad[d] * (x[d] - y[d])).sum();
        let lhs = p.eval(&x, coeff) - p.eval(&y, coeff) - lin;
        let d2 = dist2(&x, &y);
        assert!((lhs - coeff * d2).abs() < 1e-12);
    }

    #[test]
    fn quadratic_dominates_value_plus_square() {
        let g = grid101();
        let led = test_ledger();
        let lam = 1.5
            * g.estimate_semiconcavity(&g.sublevel_sets(&led).lambda_tp, 3000, 3)
                .unwrap();
        let y = [1.0, 0.0];
        let p = build_quadratic(&g, &y, lam).unwrap();
        let coeff = 1.0 + lam;
        let mut rng = CounterRng::new(5, 0);
        let mut x = vec![0.0; 2];
        let slack = 2.0 * g.h * 1.0;
        let mut checked = 0;
        while checked < 1000 {
            rng.fill_uniform(&mut x, -2.2, 2.2);
            if g.value(&x) > 2.01 {
                continue;
            }
            checked += 1;
            let vx = g.value(&x);
            assert!(
                vx + dist2(&x, &y) <= p.eval(&x, coeff) + slack,
                "x={x:?} V={vx}"
            );
        }
    }

    #[test]
    fn select_control_opposes_gradient() {
        let g = grid101();
        let sys = s1();
        let led = test_ledger();
        let u = select_control(&sys, &g, &[1.0, 0.0], led.eps1).unwrap();
        assert!(u.coords[0] < -0.9);
        let u2 = select_control(&sys, &g, &[0.0, 2.0], led.eps1).unwrap();
        assert!(u2.coords[1] < -0.9, "{:?}", u2.coords);
    }

    #[test]
    fn zero_field_has_no_decrease_direction() {
        let g = grid101();
        let sys =
            ControlSystem::polynomial("zero", 2, vec![vec![], vec![]], vec![vec![0.0, 0.0]], 1.0)
                .unwrap();
        match select_control(&sys, &g, &[1.0, 0.0], 0.05) {
            Err(Error::HjMarginFailure { margin, .. }) => {
                assert!((margin - 1.0).abs() < 1e-12)
            }
            other => panic!("expected margin failure, got {other:?}"),
        }
    }

    #[test]
    fn bisector_of_symmetric_pieces_is_midplane() {
        let led = test_ledger();
        let c = 1.0 + led.lambda;
        let p1 = test_piece(vec![0.0, 0.0], 0.0, vec![0.0, 0.0], 0);
        let p2 = test_piece(vec![2.0, 0.0], 0.0, vec![0.0, 0.0], 1);
        let pq = PiecewiseQuadratic::new(led.lambda, vec![p1, p2], led.clone());
        let pl = pq.bisector(0, 1).unwrap();
        assert!((pl.signed_distance(&[1.0, 5.0])).abs() < 1e-12);
        assert!(pl.normal[0] > 0.99);
        let mut rng = CounterRng::new(9, 0);
        for _ in 0..100 {
            let x = [1.0, rng.uniform(-3.0, 3.0)];
            let vk = pq.pieces[0].eval(&x, c);
            let vi = pq.pieces[1].eval(&x, c);
            assert!((vk - vi).abs() <= 1e-10 * vk.abs().max(1.0));
        }
        let pl2 = pq.bisector(1, 0).unwrap();
        let x = [1.7, 0.3];
        assert!(pl.signed_distance(&x) > 0.0);
        assert!(pl2.signed_distance(&x) < 0.0);
    }

    #[test]
    fn duplicate_pieces_have_degenerate_bisector() {
        let led = test_ledger();
        let p1 = test_piece(vec![1.0, 0.0], 0.5, vec![1.0, 0.0], 0);
        let p2 = test_piece(vec![1.0, 0.0], 0.5, vec![1.0, 0.0], 1);
        let pq = PiecewiseQuadratic::new(led.lambda, vec![p1, p2], led);
        assert!(matches!(
            pq.bisector(0, 1),
            Err(Error::DegenerateBisector { .. })
        ));
    }

    #[test]
    fn eval_min_and_tiebreak() {
        let led = test_ledger();
        let p1 = test_piece(vec![-1.0, 0.0], 0.3, vec![0.0, 0.0], 0);
        let p2 = test_piece(vec![1.0, 0.0], 0.3, vec![0.0, 0.0], 1);
        let pq = PiecewiseQuadratic::new(led.lambda, vec![p1, p2], led);
        let (_, arg) = pq.eval(&[0.0, 0.0]).unwrap();
        assert_eq!(arg, 0);
        let c = pq.coeff();
        for x in [[0.3, 0.2], [-0.7, 0.1], [2.0, -1.0]] {
            let (tv, _) = pq.eval(&x).unwrap();
            assert!(tv <= pq.pieces[0].eval(&x, c) + 1e-15);
            assert!(tv <= pq.pieces[1].eval(&x, c) + 1e-15);
        }
    }

    #[test]
    fn single_point_region_covers_with_one_center() {
        let g = grid101();
        let sys = s1();
        let led = test_ledger();
        let opts = CoveringOptions {
            build_samples: 1,
            max_centers: 10,
            seed: 3,
            ..Default::default()
        };
        let (pq, rep) = sample_centers(&g, &sys, &led, led.lambda, &opts).unwrap();
        assert_eq!(rep.n_centers, 1);
        let y = &pq.pieces[0].center;
        let (tv, _) = pq.eval(y).unwrap();
        assert!((tv - g.value(y)).abs() < 1e-12);
    }
}
