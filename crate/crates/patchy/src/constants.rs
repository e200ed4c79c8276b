//! The constants ledger: every radius, margin and horizon the synthesis
//! stages share, derived from (eps, T) and the measured regularity of the
//! value function.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::system::ControlSystem;

/// Options for `derive_constants`. Defaults match the standard pipeline.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ConstantsOptions {
    /// T' = T + t_prime_margin (must be > 1).
    pub t_prime_margin: f64,
    /// Multiplier applied to every strict-inequality bound.
    pub safety: f64,
    /// Whether eps2 is also bounded by eps1 / (8 c5 c6).
    ///
    /// With c5 taken as the empirical Lipschitz constant of f in x this
    /// bound degenerates for systems with strong drift coupling; the
    /// decrease-transfer property is then validated by sampling instead.
    pub include_transfer_bound: bool,
    /// L' - L gap.
    pub l_prime_gap: f64,
}

impl Default for ConstantsOptions {
    fn default() -> Self {
        ConstantsOptions {
            t_prime_margin: 1.01,
            safety: 0.9,
            include_transfer_bound: true,
            l_prime_gap: 1.0,
        }
    }
}

/// All constants consumed downstream. Immutable once derived.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConstantsLedger {
    pub n: usize,
    pub eps: f64,
    pub t_horizon: f64,
    pub t_prime: f64,
    pub t_dprime: f64,
    pub eps0: f64,
    pub eps0_prime: f64,
    pub eps0_dprime: f64,
    pub tau0: f64,
    pub eps1: f64,
    pub eps2: f64,
    pub lambda: f64,
    pub l_bound: f64,
    pub l_prime: f64,
    pub lip_v: f64,
    pub diam_lambda: f64,
    pub c_growth: f64,
    /// c6 = sqrt(n) Lip(V) + 4 (1 + lambda) diam
    pub c6: f64,
    /// c9 = c (1 + L')
    pub c9: f64,
}

impl ConstantsLedger {
    /// Quadratic coefficient shared by every piece.
    pub fn coeff(&self) -> f64 {
        1.0 + self.lambda
    }

    /// Lower speed bound threshold from the a-priori estimate 1/(4 c6).
    pub fn c8_threshold(&self) -> f64 {
        1.0 / (4.0 * self.c6)
    }

    /// Sphere radius bounds for exposed level spheres.
    pub fn radius_bounds(&self) -> (f64, f64) {
        (
            1.0 / (4.0 * self.c9 * self.coeff()),
            self.c6 / (2.0 * self.coeff()),
        )
    }

    fn validate(&self) -> Result<()> {
        let l = self;
        let mut bad = Vec::new();
        if !(l.eps1 * 4.0 * l.t_prime < l.eps) {
            bad.push("eps1 * 4 T' < eps");
        }
        if !(l.eps2 * l.eps2 < l.eps / 3.0) {
            bad.push("eps2^2 < eps / 3");
        }
        if !(l.eps2 < (l.t_prime - l.t_horizon) / (1.0 + l.lip_v)) {
            bad.push("eps2 < (T' - T) / (1 + Lip V)");
        }
        if !(l.eps2 < l.l_prime - l.l_bound) {
            bad.push("eps2 < L' - L");
        }
        if !(l.eps2 * l.eps2 < l.tau0 / 2.0) {
            bad.push("eps2^2 < tau0 / 2");
        }
        if !(l.eps0 < (l.eps / 4.0).min(l.eps0_prime)) {
            bad.push("eps0 < min(eps/4, eps0')");
        }
        if !(l.eps0 * l.eps0 / (l.eps * l.eps - l.eps0 * l.eps0) < l.tau0 / 2.0) {
            bad.push("eps0^2/(eps^2 - eps0^2) < tau0 / 2");
        }
        if !(l.l_prime > l.l_bound) {
            bad.push("L' > L");
        }
        let fields = [
            l.t_dprime, l.eps0, l.eps0_prime, l.eps0_dprime, l.tau0, l.eps1, l.eps2,
        ];
        if fields.iter().any(|v| !(*v > 0.0)) {
            bad.push("all derived constants positive");
        }
        if !(l.tau0 < l.t_dprime) {
            bad.push("tau0 < T''");
        }
        if bad.is_empty() {
            Ok(())
        } else {
            Err(Error::Infeasible(format!(
                "constants ledger violates: {}",
                bad.join("; ")
            )))
        }
    }
}

/// Derives the full ledger from the problem data and the measured
/// regularity (Lip V, diam of the sub-level set, semiconcavity lambda).
pub fn derive_constants(
    eps: f64,
    t_horizon: f64,
    sys: &ControlSystem,
    lip_v: f64,
    diam_lambda: f64,
    lambda: f64,
    opts: &ConstantsOptions,
) -> Result<ConstantsLedger> {
    if !(eps > 0.0 && eps < 1.0_f64.min(t_horizon)) {
        return Err(Error::Infeasible(format!(
            "need 0 < eps < min(1, T), got eps={eps}, T={t_horizon}"
        )));
    }
    if lip_v < 0.0 || diam_lambda < 0.0 || lambda < 0.0 {
        return Err(Error::Infeasible(
            "lip_V, diam_Lambda, lambda must be nonnegative".into(),
        ));
    }
    let c = sys.c_growth;
    if !(c > 0.0) {
        return Err(Error::Infeasible("growth constant must be positive".into()));
    }
    let n = sys.n;
    let s = opts.safety;
    let t_prime = t_horizon + opts.t_prime_margin;

    let eps0_prime = eps * ((4.0 * t_prime + 1.0) / (2.0 * (1.0 + 2.0 * t_prime))).sqrt();
    let eps0_dprime = eps * (2.0 * t_prime / (1.0 + 2.0 * t_prime)).sqrt();
    let tau0 = (1.0 / c) * ((eps0_prime + 1.0) / (eps0_dprime + 1.0)).ln();
    let eps1 = s * eps / (4.0 * t_prime);
    // eps0^2/(eps^2 - eps0^2) < tau0/2  <=>  eps0 < eps sqrt(tau0 / (tau0 + 2))
    let eps0 = s * (eps / 4.0)
        .min(eps0_prime)
        .min(eps * (tau0 / (tau0 + 2.0)).sqrt());

    let lam = lambda;
    let l_bound = diam_lambda
        + (n as f64).sqrt() * lip_v
        + ((n as f64) * lip_v * lip_v + 4.0 * t_prime * (1.0 + lam)).sqrt();
    let l_prime = l_bound + opts.l_prime_gap;
    let c6 = (n as f64).sqrt() * lip_v + 4.0 * (1.0 + lam) * diam_lambda;
    let c9 = c * (1.0 + l_prime);

    let mut eps2_bound = (eps / 3.0)
        .sqrt()
        .min((tau0 / 2.0).sqrt())
        .min((t_prime - t_horizon) / (1.0 + lip_v))
        .min(l_prime - l_bound);
    if opts.include_transfer_bound {
        let c5 = sys.lip_x;
        if c5 * c6 > 0.0 {
            eps2_bound = eps2_bound.min(eps1 / (8.0 * c5 * c6));
        }
    }
    let eps2 = s * eps2_bound;
    let t_dprime = t_prime - lip_v * eps2;

    let ledger = ConstantsLedger {
        n,
        eps,
        t_horizon,
        t_prime,
        t_dprime,
        eps0,
        eps0_prime,
        eps0_dprime,
        tau0,
        eps1,
        eps2,
        lambda: lam,
        l_bound,
        l_prime,
        lip_v,
        diam_lambda,
        c_growth: c,
        c6,
        c9,
    };
    ledger.validate()?;
    Ok(ledger)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::system::ControlSystem;

    fn s1() -> ControlSystem {
        ControlSystem::benchmark("single-integrator-2d", 16).unwrap()
    }

    /// Frozen by evaluating the defining formulas with a separate
    /// high-precision calculator for eps = 0.5, T = 1, T' = 2.01, c = 1.
    #[test]
    fn derived_radii_match_calculator_oracle() {
        let led = derive_constants(0.5, 1.0, &s1(), 1.0, 4.14, 4.0, &ConstantsOptions::default())
            .unwrap();
        assert!((led.t_prime - 2.01).abs() < 1e-15);
        assert!((led.eps0_prime - 0.4744466267069727).abs() < 1e-12);
        assert!((led.eps0_dprime - 0.4474362560044179).abs() < 1e-12);
        assert!((led.tau0 - 0.018488858871585682).abs() < 1e-12);
        assert!((led.eps1 - 0.05597014925373135).abs() < 1e-12);
        assert!(led.eps1 < 0.5 / (4.0 * 2.01));
    }

    #[test]
    fn ledger_invariants_hold() {
        let led = derive_constants(0.5, 1.0, &s1(), 1.1, 4.2, 4.0, &ConstantsOptions::default())
            .unwrap();
        assert!(led.eps1 * 4.0 * led.t_prime < led.eps);
        assert!(led.eps2 * led.eps2 < led.eps / 3.0);
        assert!(led.eps2 < (led.t_prime - led.t_horizon) / (1.0 + led.lip_v));
        assert!(led.eps2 < led.l_prime - led.l_bound);
        assert!(led.eps0 < (led.eps / 4.0).min(led.eps0_prime));
        assert!(led.eps0.powi(2) / (led.eps.powi(2) - led.eps0.powi(2)) < led.tau0 / 2.0);
        assert!((led.t_dprime - (led.t_prime - led.lip_v * led.eps2)).abs() < 1e-15);
    }

    #[test]
    fn eps_out_of_range_is_rejected() {
        assert!(derive_constants(1.2, 2.0, &s1(), 1.0, 4.0, 4.0, &ConstantsOptions::default())
            .is_err());
        assert!(derive_constants(0.5, 0.4, &s1(), 1.0, 4.0, 4.0, &ConstantsOptions::default())
            .is_err());
    }

    #[test]
    fn transfer_bound_caps_eps2_when_enabled() {
        let sys = ControlSystem::benchmark("double-integrator", 9).unwrap();
        let with = derive_constants(0.5, 2.0, &sys, 2.0, 6.0, 2.0, &ConstantsOptions::default())
            .unwrap();
        let opts = ConstantsOptions {
            include_transfer_bound: false,
            ..Default::default()
        };
        let without = derive_constants(0.5, 2.0, &sys, 2.0, 6.0, 2.0, &opts).unwrap();
        assert!(with.eps2 < without.eps2);
        let c5c6 = sys.lip_x * with.c6;
        assert!(with.eps2 <= 0.9 * with.eps1 / (8.0 * c5c6) + 1e-15);
    }
}
