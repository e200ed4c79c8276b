//! Control systems: dynamics evaluators, sampled control sets, and the
//! empirical growth/Lipschitz estimates the synthesis consumes.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::{all_finite, norm};
use crate::rng::CounterRng;

/// One admissible control value together with its index in the sampled set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ControlValue {
    pub coords: Vec<f64>,
    pub index: usize,
}

/// Right-hand sides available to the pipeline.
///
/// Benchmarks are hard-coded; custom systems are polynomial coefficient
/// tables, one table per output coordinate. A monomial multiplies powers
/// of state and control entries.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub enum Dynamics {
    /// dx = u (n = m, |u| <= 1)
    SingleIntegrator,
    /// dx1 = x2, dx2 = u (n = 2, m = 1, u in [-1, 1])
    DoubleIntegrator,
    /// dx = u + w for a fixed drift w
    DriftIntegrator { drift: Vec<f64> },
    /// Polynomial dynamics: per output coordinate, a list of monomials.
    Polynomial { rows: Vec<Vec<Monomial>> },
}

/// coef * prod_i x_i^state_pows[i] * prod_j u_j^control_pows[j]
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Monomial {
    pub coef: f64,
    pub state_pows: Vec<u32>,
    pub control_pows: Vec<u32>,
}

impl Monomial {
    fn eval(&self, x: &[f64], u: &[f64]) -> f64 {
        let mut v = self.coef;
        for (xi, p) in x.iter().zip(&self.state_pows) {
            v *= xi.powi(*p as i32);
        }
        for (uj, q) in u.iter().zip(&self.control_pows) {
            v *= uj.powi(*q as i32);
        }
        v
    }
}

/// A control system with a finite sampled control set.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ControlSystem {
    pub name: String,
    pub n: usize,
    pub dynamics: Dynamics,
    pub controls: Vec<ControlValue>,
    /// Growth constant c with |f(x,u)| <= c (1 + |x|).
    pub c_growth: f64,
    /// Empirical Lipschitz constant of f in x (the c5 surrogate).
    pub lip_x: f64,
}

impl ControlSystem {
    /// Builds one of the named benchmark systems.
    ///
    /// `control_samples` is the number of sampled control values (for the
    /// single/drift integrators: directions on the unit circle/sphere; for
    /// the double integrator: levels in [-1, 1]).
    pub fn benchmark(name: &str, control_samples: usize) -> Result<ControlSystem> {
        match name {
            "single-integrator-2d" => Ok(ControlSystem {
                name: name.to_string(),
                n: 2,
                dynamics: Dynamics::SingleIntegrator,
                controls: circle_controls(control_samples),
                c_growth: 1.0,
                lip_x: 0.0,
            }),
            "double-integrator" => Ok(ControlSystem {
                name: name.to_string(),
                n: 2,
                dynamics: Dynamics::DoubleIntegrator,
                controls: interval_controls(control_samples),
                c_growth: 1.0,
                lip_x: 1.0,
            }),
            "drift-integrator" => {
                let drift = vec![0.3, 0.0];
                Ok(ControlSystem {
                    name: name.to_string(),
                    n: 2,
                    dynamics: Dynamics::DriftIntegrator { drift },
                    controls: circle_controls(control_samples),
                    c_growth: 1.3,
                    lip_x: 0.0,
                })
            }
            other => Err(Error::Config(format!("unknown benchmark system `{other}`"))),
        }
    }

    /// Builds a custom polynomial system. `controls` samples the admissible set.
    pub fn polynomial(
        name: &str,
        n: usize,
        rows: Vec<Vec<Monomial>>,
        controls: Vec<Vec<f64>>,
        c_growth: f64,
    ) -> Result<ControlSystem> {
        if rows.len() != n {
            return Err(Error::Config(format!(
                "polynomial system declares {} rows for state dimension {n}",
                rows.len()
            )));
        }
        if controls.is_empty() {
            return Err(Error::Config("control set must be nonempty".into()));
        }
        let controls = controls
            .into_iter()
            .enumerate()
            .map(|(index, coords)| ControlValue { coords, index })
            .collect();
        let mut sys = ControlSystem {
            name: name.to_string(),
            n,
            dynamics: Dynamics::Polynomial { rows },
            controls,
            c_growth,
            lip_x: 0.0,
        };
        sys.lip_x = sys.estimate_lip_x(5.0, 2000, 11);
        Ok(sys)
    }

    pub fn control(&self, index: usize) -> &ControlValue {
        &self.controls[index]
    }

    /// Evaluates f(x, u) into `out` without allocating.
    #[inline]
    pub fn eval_into(&self, x: &[f64], u: &[f64], out: &mut [f64]) {
        match &self.dynamics {
            Dynamics::SingleIntegrator => out.copy_from_slice(u),
            Dynamics::DoubleIntegrator => {
                out[0] = x[1];
                out[1] = u[0];
            }
            Dynamics::DriftIntegrator { drift } => {
                for i in 0..out.len() {
                    out[i] = u[i] + drift[i];
                }
            }
            Dynamics::Polynomial { rows } => {
                for (o, row) in out.iter_mut().zip(rows) {
                    *o = row.iter().map(|m| m.eval(x, u)).sum();
                }
            }
        }
    }

    /// Checked evaluation: validates dimensions and finiteness.
    pub fn eval_dynamics(&self, x: &[f64], u: &ControlValue) -> Result<Vec<f64>> {
        if x.len() != self.n {
            return Err(Error::DimensionMismatch {
                expected: self.n,
                got: x.len(),
            });
        }
        let mut out = vec![0.0; self.n];
        self.eval_into(x, &u.coords, &mut out);
        if !all_finite(&out) {
            return Err(Error::NonFiniteDynamics {
                x: x.to_vec(),
                u: u.coords.clone(),
            });
        }
        Ok(out)
    }

    /// Checks the sublinear growth bound |f(x,u)| <= c_growth (1 + |x|)
    /// over `samples` random (x, u) pairs drawn from the ball of `radius`.
    pub fn verify_growth(&self, radius: f64, samples: usize, seed: u64) -> GrowthReport {
        let mut rng = CounterRng::new(seed, 0xf0);
        let mut x = vec![0.0; self.n];
        let mut f = vec![0.0; self.n];
        let mut max_ratio = 0.0f64;
        for _ in 0..samples.max(1) {
            rng.unit_direction(&mut x);
            let r = radius * rng.next_f64().powf(1.0 / self.n as f64);
            for xi in x.iter_mut() {
                *xi *= r;
            }
            let u = &self.controls[rng.index(self.controls.len())];
            self.eval_into(&x, &u.coords, &mut f);
            let ratio = norm(&f) / (1.0 + norm(&x));
            if ratio > max_ratio {
                max_ratio = ratio;
            }
        }
        GrowthReport {
            max_ratio,
            ok: max_ratio <= self.c_growth + 1e-12,
        }
    }

    /// Empirical Lipschitz constant of x -> f(x,u) over the ball of `radius`
    /// by sampled difference quotients.
    pub fn estimate_lip_x(&self, radius: f64, samples: usize, seed: u64) -> f64 {
        let mut rng = CounterRng::new(seed, 0xf1);
        let mut x1 = vec![0.0; self.n];
        let mut x2 = vec![0.0; self.n];
        let mut f1 = vec![0.0; self.n];
        let mut f2 = vec![0.0; self.n];
        let mut lip = 0.0f64;
        for _ in 0..samples {
            rng.fill_uniform(&mut x1, -radius, radius);
            let h = radius * 1e-3 * (0.5 + rng.next_f64());
            rng.unit_direction(&mut x2);
            for i in 0..self.n {
                x2[i] = x1[i] + h * x2[i];
            }
            let u = &self.controls[rng.index(self.controls.len())];
            self.eval_into(&x1, &u.coords, &mut f1);
            self.eval_into(&x2, &u.coords, &mut f2);
            let q = crate::math::dist(&f1, &f2) / h;
            if q > lip {
                lip = q;
            }
        }
        lip
    }

    /// Largest sampled speed max |f(x,u)| over the ball of `radius`.
    pub fn max_speed(&self, radius: f64, samples: usize, seed: u64) -> f64 {
        let mut rng = CounterRng::new(seed, 0xf2);
        let mut x = vec![0.0; self.n];
        let mut f = vec![0.0; self.n];
        let mut vmax = 0.0f64;
        for _ in 0..samples {
            rng.fill_uniform(&mut x, -radius, radius);
            for u in &self.controls {
                self.eval_into(&x, &u.coords, &mut f);
                let v = norm(&f);
                if v > vmax {
                    vmax = v;
                }
            }
        }
        vmax
    }
}

/// Report of `verify_growth`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GrowthReport {
    pub max_ratio: f64,
    pub ok: bool,
}

/// `count` unit vectors evenly spaced on the circle (n = 2).
pub fn circle_controls(count: usize) -> Vec<ControlValue> {
    let count = count.max(2);
    (0..count)
        .map(|k| {
            let a = 2.0 * std::f64::consts::PI * k as f64 / count as f64;
            ControlValue {
                coords: vec![a.cos(), a.sin()],
                index: k,
            }
        })
        .collect()
}

/// `count` levels evenly spaced on [-1, 1] (m = 1), endpoints included.
pub fn interval_controls(count: usize) -> Vec<ControlValue> {
    let count = count.max(2);
    (0..count)
        .map(|k| ControlValue {
            coords: vec![-1.0 + 2.0 * k as f64 / (count - 1) as f64],
            index: k,
        })
        .collect()
}
