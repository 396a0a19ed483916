//! The radial profile φ(r) of the spiraling solution.
//!
//! Two variants are supported. The piecewise profile is `r` near the origin,
//! the power sum `r^{-μ} + C r^{-μ-2}` for `r ≥ 1`, and a C² connector on
//! `[3/4, 1]`. The analytic profile is
//! `r((1+r²)^{-(μ+1)/2} + C(1+r²)^{-(μ+3)/2})` everywhere.
//!
//! For `r ≥ r_start` both variants are represented exactly (or to far below
//! rounding) by a [`TailSeries`] `r^{-μ} Σ a_k r^{-2k}`, which lets the
//! coefficient builder evaluate the improper integrals in closed form.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const BRIDGE_START: f64 = 0.75;
pub const BRIDGE_END: f64 = 1.0;
const BRIDGE_WIDTH: f64 = BRIDGE_END - BRIDGE_START;
const POSITIVITY_SAMPLES: usize = 10_000;

/// Number of binomial terms kept for the analytic tail at r ≥ 2.
const ANALYTIC_TAIL_TERMS: usize = 40;
const ANALYTIC_TAIL_START: f64 = 2.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    Piecewise,
    Analytic,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProfileParams {
    pub n: usize,
    pub mu: f64,
    pub c_mu: f64,
    pub variant: Variant,
}

impl ProfileParams {
    pub fn new(n: usize, mu: f64, c_mu: f64, variant: Variant) -> Self {
        ProfileParams { n, mu, c_mu, variant }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < 2 {
            return Err(Error::InvalidParams(format!("dimension n = {} must be >= 2", self.n)));
        }
        if !self.mu.is_finite() || self.mu < 0.0 || 2.0 * self.mu >= self.n as f64 {
            return Err(Error::InvalidParams(format!(
                "mu out of range: need 0 <= 2 mu < n, got mu = {} with n = {}",
                self.mu, self.n
            )));
        }
        if !self.c_mu.is_finite() || self.c_mu < 0.0 {
            return Err(Error::InvalidParams(format!("C_mu = {} must be >= 0", self.c_mu)));
        }
        Ok(())
    }
}

/// φ together with its first two derivatives.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Phi {
    pub value: f64,
    pub d1: f64,
    pub d2: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BridgeStrategy {
    Quintic,
    SmoothstepBlend,
}

/// Connector on `[3/4, 1]`, written in the local variable
/// `t = (r - 3/4) / (1/4)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Bridge {
    /// φ = Σ c_k t^k, the unique quintic matching value, φ′ and φ″ at both ends.
    Quintic { coefficients: [f64; 6] },
    /// φ = (1 - s(t)) r + s(t) φ_outer(r) with s = 10t³ - 15t⁴ + 6t⁵.
    SmoothstepBlend,
}

/// `r^{-μ} Σ_k a_k r^{-2k}`, valid for `r ≥ r_start`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TailSeries {
    pub r_start: f64,
    pub mu: f64,
    pub coeffs: Vec<f64>,
}

impl TailSeries {
    /// Q(r) = r^μ φ(r) and its first two derivatives.
    pub fn q(&self, r: f64) -> (f64, f64, f64) {
        let x = r.recip() * r.recip();
        let (mut q, mut q1, mut q2) = (0.0, 0.0, 0.0);
        let mut pow = 1.0;
        for (k, &a) in self.coeffs.iter().enumerate() {
            let k = k as f64;
            q += a * pow;
            q1 += -2.0 * k * a * pow / r;
            q2 += 2.0 * k * (2.0 * k + 1.0) * a * pow / (r * r);
            pow *= x;
        }
        (q, q1, q2)
    }

    pub fn phi(&self, r: f64) -> Phi {
        let (q, q1, q2) = self.q(r);
        let mu = self.mu;
        let p = r.powf(-mu);
        Phi {
            value: p * q,
            d1: p * (q1 - mu * q / r),
            d2: p * (q2 - 2.0 * mu * q1 / r + mu * (mu + 1.0) * q / (r * r)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RadialProfile {
    params: ProfileParams,
    bridge: Option<Bridge>,
    tail: TailSeries,
}

fn smoothstep(t: f64) -> (f64, f64, f64) {
    let t2 = t * t;
    (
        t2 * t * (10.0 - 15.0 * t + 6.0 * t2),
        30.0 * t2 * (1.0 - t) * (1.0 - t),
        60.0 * t * (1.0 - t) * (1.0 - 2.0 * t),
    )
}

fn binomial_negative(p: f64, terms: usize) -> Vec<f64> {
    // Coefficients of (1 + x)^{-p}.
    let mut out = Vec::with_capacity(terms);
    let mut c = 1.0;
    for j in 0..terms {
        out.push(c);
        c *= (-p - j as f64) / (j as f64 + 1.0);
    }
    out
}

impl RadialProfile {
    /// Build with the default bridge: the quintic, falling back to the
    /// smoothstep blend if the quintic is not positive on the bridge.
    pub fn build(params: ProfileParams) -> Result<Self> {
        match Self::build_with(params, BridgeStrategy::Quintic) {
            Err(Error::BridgeNotPositive { .. }) => Self::build_with(params, BridgeStrategy::SmoothstepBlend),
            other => other,
        }
    }

    pub fn build_with(params: ProfileParams, strategy: BridgeStrategy) -> Result<Self> {
        params.validate()?;
        let (mu, c) = (params.mu, params.c_mu);
        let (bridge, tail) = match params.variant {
            Variant::Piecewise => {
                let bridge = match strategy {
                    BridgeStrategy::Quintic => Bridge::Quintic {
                        coefficients: quintic_bridge(mu, c),
                    },
                    BridgeStrategy::SmoothstepBlend => Bridge::SmoothstepBlend,
                };
                let tail = TailSeries {
                    r_start: BRIDGE_END,
                    mu,
                    coeffs: vec![1.0, c],
                };
                (Some(bridge), tail)
            }
            Variant::Analytic => {
                let lead = binomial_negative(0.5 * (mu + 1.0), ANALYTIC_TAIL_TERMS);
                let corr = binomial_negative(0.5 * (mu + 3.0), ANALYTIC_TAIL_TERMS);
                let coeffs = (0..ANALYTIC_TAIL_TERMS)
                    .map(|k| lead[k] + if k > 0 { c * corr[k - 1] } else { 0.0 })
                    .collect();
                let tail = TailSeries {
                    r_start: ANALYTIC_TAIL_START,
                    mu,
                    coeffs,
                };
                (None, tail)
            }
        };
        let profile = RadialProfile { params, bridge, tail };
        profile.check_bridge_positive()?;
        Ok(profile)
    }

    fn check_bridge_positive(&self) -> Result<()> {
        if self.bridge.is_none() {
            return Ok(());
        }
        let (mut min, mut at) = (f64::INFINITY, BRIDGE_START);
        for k in 0..=POSITIVITY_SAMPLES {
            let r = BRIDGE_START + BRIDGE_WIDTH * k as f64 / POSITIVITY_SAMPLES as f64;
            let v = self.eval(r).value;
            if v < min {
                min = v;
                at = r;
            }
        }
        if min > 0.0 && min.is_finite() {
            Ok(())
        } else {
            Err(Error::BridgeNotPositive { min, at })
        }
    }

    pub fn params(&self) -> &ProfileParams {
        &self.params
    }

    pub fn n(&self) -> usize {
        self.params.n
    }

    pub fn mu(&self) -> f64 {
        self.params.mu
    }

    pub fn c_mu(&self) -> f64 {
        self.params.c_mu
    }

    pub fn variant(&self) -> Variant {
        self.params.variant
    }

    pub fn bridge(&self) -> Option<&Bridge> {
        self.bridge.as_ref()
    }

    pub fn tail(&self) -> &TailSeries {
        &self.tail
    }

    /// Radii where φ‴ may jump (φ is only C² there).
    pub fn breakpoints(&self) -> &'static [f64] {
        match self.params.variant {
            Variant::Piecewise => &[BRIDGE_START, BRIDGE_END],
            Variant::Analytic => &[],
        }
    }

    pub fn phi(&self, r: f64) -> f64 {
        self.eval(r).value
    }

    /// φ, φ′, φ″ at `r ≥ 0`. At the junctions the outer formulas are used.
    pub fn eval(&self, r: f64) -> Phi {
        let r = r.max(0.0);
        match self.params.variant {
            Variant::Analytic => analytic_phi(r, self.params.mu, self.params.c_mu),
            Variant::Piecewise => {
                if r < BRIDGE_START {
                    Phi {
                        value: r,
                        d1: 1.0,
                        d2: 0.0,
                    }
                } else if r >= BRIDGE_END {
                    outer_phi(r, self.params.mu, self.params.c_mu)
                } else {
                    self.bridge_phi(r)
                }
            }
        }
    }

    fn bridge_phi(&self, r: f64) -> Phi {
        let t = (r - BRIDGE_START) / BRIDGE_WIDTH;
        match self.bridge.as_ref().expect("piecewise profile has a bridge") {
            Bridge::Quintic { coefficients: c } => {
                let v = c[0] + t * (c[1] + t * (c[2] + t * (c[3] + t * (c[4] + t * c[5]))));
                let d = c[1] + t * (2.0 * c[2] + t * (3.0 * c[3] + t * (4.0 * c[4] + t * 5.0 * c[5])));
                let dd = 2.0 * c[2] + t * (6.0 * c[3] + t * (12.0 * c[4] + t * 20.0 * c[5]));
                Phi {
                    value: v,
                    d1: d / BRIDGE_WIDTH,
                    d2: dd / (BRIDGE_WIDTH * BRIDGE_WIDTH),
                }
            }
            Bridge::SmoothstepBlend => {
                let (s, s1, s2) = smoothstep(t);
                let (s1, s2) = (s1 / BRIDGE_WIDTH, s2 / (BRIDGE_WIDTH * BRIDGE_WIDTH));
                let o = outer_phi(r, self.params.mu, self.params.c_mu);
                let gap = o.value - r;
                Phi {
                    value: (1.0 - s) * r + s * o.value,
                    d1: (1.0 - s) + s * o.d1 + s1 * gap,
                    d2: s * o.d2 + 2.0 * s1 * (o.d1 - 1.0) + s2 * gap,
                }
            }
        }
    }
}

pub(crate) fn outer_phi(r: f64, mu: f64, c: f64) -> Phi {
    let p = r.powf(-mu);
    let x = 1.0 / (r * r);
    Phi {
        value: p * (1.0 + c * x),
        d1: -p / r * (mu + (mu + 2.0) * c * x),
        d2: p * x * (mu * (mu + 1.0) + (mu + 2.0) * (mu + 3.0) * c * x),
    }
}

fn analytic_phi(r: f64, mu: f64, c: f64) -> Phi {
    // f_p(r) = r (1 + r²)^{-p}
    let u = 1.0 + r * r;
    let term = |p: f64| {
        let up = u.powf(-p);
        (
            r * up,
            up - 2.0 * p * r * r * up / u,
            -6.0 * p * r * up / u + 4.0 * p * (p + 1.0) * r * r * r * up / (u * u),
        )
    };
    let (a0, a1, a2) = term(0.5 * (mu + 1.0));
    let (b0, b1, b2) = term(0.5 * (mu + 3.0));
    Phi {
        value: a0 + c * b0,
        d1: a1 + c * b1,
        d2: a2 + c * b2,
    }
}

/// Quintic in t on the bridge matching (r, 1, 0) at t = 0 and the outer
/// formula's value/derivatives at t = 1.
fn quintic_bridge(mu: f64, c: f64) -> [f64; 6] {
    let h = BRIDGE_WIDTH;
    let c0 = BRIDGE_START;
    let c1 = h;
    let c2 = 0.0;
    let o = outer_phi(BRIDGE_END, mu, c);
    let p = o.value - (c0 + c1 + c2);
    let q = h * o.d1 - (c1 + 2.0 * c2);
    let s = h * h * o.d2 - 2.0 * c2;
    [
        c0,
        c1,
        c2,
        10.0 * p - 4.0 * q + 0.5 * s,
        -15.0 * p + 7.0 * q - s,
        6.0 * p - 3.0 * q + 0.5 * s,
    ]
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn piecewise(n: usize, mu: f64, c: f64) -> RadialProfile {
        RadialProfile::build(ProfileParams::new(n, mu, c, Variant::Piecewise)).unwrap()
    }

    #[test]
    fn linear_core() {
        let p = piecewise(3, 0.2, 0.0);
        let v = p.eval(0.5);
        assert_eq!((v.value, v.d1, v.d2), (0.5, 1.0, 0.0));
    }

    #[test]
    fn outer_power_sum() {
        let p = piecewise(3, 1.0, 0.0);
        let v = p.eval(2.0);
        assert_relative_eq!(v.value, 0.5, max_relative = 1e-15);
        assert_relative_eq!(v.d1, -0.25, max_relative = 1e-15);
        let q = piecewise(2, 0.5, 2.0);
        assert_relative_eq!(q.phi(4.0), 0.5625, max_relative = 1e-15);
    }

    #[test]
    fn vanishes_at_origin() {
        for variant in [Variant::Piecewise, Variant::Analytic] {
            let p = RadialProfile::build(ProfileParams::new(4, 1.1, 3.0, variant)).unwrap();
            assert_eq!(p.phi(0.0), 0.0);
        }
    }

    #[test]
    fn analytic_at_one() {
        let p = RadialProfile::build(ProfileParams::new(3, 1.0, 0.0, Variant::Analytic)).unwrap();
        assert_relative_eq!(p.phi(1.0), 0.5, max_relative = 1e-15);
    }

    #[test]
    fn analytic_small_r() {
        for c in [0.0, 0.7, 5.0] {
            let p = RadialProfile::build(ProfileParams::new(3, 0.8, c, Variant::Analytic)).unwrap();
            let r = 1e-6;
            assert_relative_eq!(p.phi(r) / r, 1.0 + c, max_relative = 1e-6);
        }
    }

    #[test]
    fn bridge_value_between_outer_formulas() {
        for &(mu, c) in &[(0.5, 0.0), (0.9, 32.0), (0.2, 3.0)] {
            let p = piecewise(3, mu, c);
            let cands = [
                BRIDGE_START,
                BRIDGE_END,
                outer_phi(BRIDGE_START, mu, c).value,
                outer_phi(BRIDGE_END, mu, c).value,
            ];
            let lo = cands.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = cands.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let v = p.phi(0.9);
            assert!(v >= lo && v <= hi, "phi(0.9) = {v} not in [{lo}, {hi}]");
        }
    }

    #[test]
    fn invalid_params_rejected() {
        for (n, mu, c) in [(2, 1.0, 0.0), (3, -0.1, 0.0), (1, 0.1, 0.0), (3, 0.5, -1.0)] {
            let r = RadialProfile::build(ProfileParams::new(n, mu, c, Variant::Piecewise));
            assert!(matches!(r, Err(Error::InvalidParams(_))));
        }
    }

    #[test]
    fn tail_series_matches_closed_form() {
        for variant in [Variant::Piecewise, Variant::Analytic] {
            let p = RadialProfile::build(ProfileParams::new(3, 1.2, 7.0, variant)).unwrap();
            for &r in &[2.0, 3.5, 10.0, 1e3] {
                let a = p.eval(r);
                let b = p.tail().phi(r);
                assert_relative_eq!(a.value, b.value, max_relative = 1e-14);
                assert_relative_eq!(a.d1, b.d1, max_relative = 1e-13);
                assert_relative_eq!(a.d2, b.d2, max_relative = 1e-12);
            }
        }
    }

    fn junction_gap(p: &RadialProfile, r0: f64) -> [f64; 3] {
        let mu = p.mu();
        let c = p.c_mu();
        let bridge = p.bridge_phi(r0);
        let outer = if r0 == BRIDGE_START {
            Phi {
                value: r0,
                d1: 1.0,
                d2: 0.0,
            }
        } else {
            outer_phi(r0, mu, c)
        };
        let scale = 1.0 + outer.value.abs() + outer.d1.abs() + outer.d2.abs();
        [
            (bridge.value - outer.value).abs() / scale,
            (bridge.d1 - outer.d1).abs() / scale,
            (bridge.d2 - outer.d2).abs() / scale,
        ]
    }

    proptest! {
        #[test]
        fn junctions_are_c2(mu in 0.0f64..2.4, c in 0.0f64..200.0, blend in any::<bool>()) {
            let strategy = if blend { BridgeStrategy::SmoothstepBlend } else { BridgeStrategy::Quintic };
            let p = RadialProfile::build_with(ProfileParams::new(5, mu, c, Variant::Piecewise), strategy).unwrap();
            for r0 in [BRIDGE_START, BRIDGE_END] {
                for gap in junction_gap(&p, r0) {
                    prop_assert!(gap < 1e-13, "gap {} at {}", gap, r0);
                }
            }
        }

        #[test]
        fn positive_everywhere(mu in 0.0f64..1.4, c in 0.0f64..100.0, analytic in any::<bool>()) {
            let variant = if analytic { Variant::Analytic } else { Variant::Piecewise };
            let p = RadialProfile::build(ProfileParams::new(3, mu, c, variant)).unwrap();
            let mut min = f64::INFINITY;
            for k in 1..=10_000 {
                let r = 1e3 * (k as f64 / 10_000.0).powi(3);
                min = min.min(p.phi(r));
            }
            prop_assert!(min > 0.0);
        }

        #[test]
        fn decays_like_leading_power(mu in 0.0f64..1.4, c in 0.0f64..50.0, r in 10.0f64..1e4) {
            let p = piecewise(3, mu, c);
            prop_assert!((p.phi(r) - r.powf(-mu)).abs() <= 2.0 * c * r.powf(-mu - 2.0) + 1e-15 * r.powf(-mu));
            // The analytic profile's r^{-μ-2} coefficient is C - (μ+1)/2.
            let a = RadialProfile::build(ProfileParams::new(3, mu, c, Variant::Analytic)).unwrap();
            let eff = (c - 0.5 * (mu + 1.0)).abs();
            prop_assert!((a.phi(r) - r.powf(-mu)).abs() <= 2.0 * eff * r.powf(-mu - 2.0) + 4.0 * r.powf(-mu - 4.0) * (1.0 + c));
        }
    }
}
