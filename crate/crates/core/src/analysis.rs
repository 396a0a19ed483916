//! Norms, exponent fits, and numerical checks of the energy-estimate
//! machinery behind the Liouville theorems: the pointwise key identity,
//! Caccioppoli inequalities with bump and logarithmic cutoffs, gradient
//! decay rates and the monotonicity defect.

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::coefficients::{random_unit, CaseId};
use crate::error::{Error, Result};
use crate::quadrature::{gauss_legendre, integrate, integrate_from_origin, integrate_with_breaks, Tolerance};
use crate::spiral::{slope, SpiralField, FULL_STEP};

fn tol() -> Tolerance {
    Tolerance::new(1e-15, 1e-11)
}

/// Surface measure |S^{m}| of the unit m-sphere.
pub fn sphere_area(m: usize) -> f64 {
    match m {
        0 => 2.0,
        1 => 2.0 * PI,
        _ => 2.0 * PI / (m as f64 - 1.0) * sphere_area(m - 2),
    }
}

/// Angular dependence of `|u|^p` on the sphere.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Angular {
    /// Radial field.
    Constant,
    /// `|e·ν|^p`, a linear g.
    Linear,
}

/// `∫_{S^{n−1}} |g|^p dσ`.
pub fn angular_factor(n: usize, p: f64, angular: Angular) -> Result<f64> {
    if n < 2 {
        return Err(Error::InvalidParams(format!("dimension n = {n} must be >= 2")));
    }
    match angular {
        Angular::Constant => Ok(sphere_area(n - 1)),
        Angular::Linear => {
            let m = n as i32 - 2;
            let half = integrate(|t: f64| t.cos().powf(p) * t.sin().powi(m), 0.0, 0.5 * PI, tol())?;
            Ok(sphere_area(n - 2) * 2.0 * half)
        }
    }
}

/// Precomputed rule for `∫_{S^{n−1}} ((a−b)(e·ν)² + b)^{p/2} dσ`, the
/// angular integral of `|∇(ψ(r) e·ν)|^p` with `a = |ψ′|²`, `b = |ψ|²/r²`.
#[derive(Debug, Clone)]
pub struct GradientAngular {
    nodes_c2: Vec<f64>,
    weights: Vec<f64>,
    half_p: f64,
}

impl GradientAngular {
    pub fn new(n: usize, p: f64) -> Self {
        let (x, w) = gauss_legendre(48);
        let scale = sphere_area(n - 2) * 2.0 * (0.25 * PI);
        let mut nodes_c2 = Vec::with_capacity(x.len());
        let mut weights = Vec::with_capacity(x.len());
        for (xi, wi) in x.iter().zip(&w) {
            let theta = 0.25 * PI * (xi + 1.0);
            nodes_c2.push(theta.cos().powi(2));
            weights.push(scale * wi * theta.sin().powi(n as i32 - 2));
        }
        GradientAngular {
            nodes_c2,
            weights,
            half_p: 0.5 * p,
        }
    }

    pub fn eval(&self, a: f64, b: f64) -> f64 {
        self.nodes_c2
            .iter()
            .zip(&self.weights)
            .map(|(c2, w)| w * ((a - b) * c2 + b).max(0.0).powf(self.half_p))
            .sum()
    }
}

/// Leading behaviour `|ψ(r)| ≈ c r^{−exponent}` near the origin.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerLaw {
    pub coefficient: f64,
    pub exponent: f64,
}

/// `‖u‖_{L^p(B_R)}` for `u = ψ(|x|) g(ν)` given the modulus `|ψ|`.
///
/// A declared power-law singularity is subtracted and integrated in closed
/// form; a non-integrable one is reported as `DivergentNorm`.
pub fn lp_norm_ball<F: Fn(f64) -> f64>(
    modulus: F,
    n: usize,
    p: f64,
    radius: f64,
    angular: Angular,
    singular: Option<PowerLaw>,
    breaks: &[f64],
) -> Result<f64> {
    if !(p >= 1.0) {
        return Err(Error::InvalidParams(format!("p = {p} must be >= 1")));
    }
    let ang = angular_factor(n, p, angular)?;
    let nf = n as f64;
    let radial = match singular {
        None => integrate_with_breaks(|r: f64| r.powi(n as i32 - 1) * modulus(r).powf(p), 0.0, radius, breaks, tol())?,
        Some(pl) => {
            let e = nf - p * pl.exponent;
            if e <= 0.0 {
                return Err(Error::DivergentNorm {
                    p_mu: p * pl.exponent,
                    n,
                });
            }
            let cp = pl.coefficient.powf(p);
            let diff = |r: f64| r.powi(n as i32 - 1) * (modulus(r).powf(p) - cp * r.powf(-p * pl.exponent));
            integrate_from_origin(diff, radius, breaks, tol())? + cp * radius.powf(e) / e
        }
    };
    Ok((ang * radial).powf(1.0 / p))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExponentFit {
    pub exponent: f64,
    pub r_squared: f64,
}

/// Least-squares slope of `log value` against `log(−t)`.
pub fn fit_exponent(series: &[(f64, f64)]) -> Result<ExponentFit> {
    if series.len() < 5 {
        return Err(Error::DegenerateFit(format!("{} points, need at least 5", series.len())));
    }
    if let Some(&(t, v)) = series.iter().find(|(t, v)| !(*t < 0.0) || !(*v > 0.0)) {
        return Err(Error::DegenerateFit(format!("need t < 0 and value > 0, got ({t}, {v})")));
    }
    let (lo, hi) = series.iter().fold((f64::INFINITY, 0.0f64), |(lo, hi), &(_, v)| (lo.min(v), hi.max(v)));
    if (hi - lo) < 0.01 * hi {
        return Err(Error::DegenerateFit(format!("values span only {:.3e} relative", (hi - lo) / hi)));
    }
    let x: Vec<f64> = series.iter().map(|(t, _)| (-t).ln()).collect();
    let y: Vec<f64> = series.iter().map(|(_, v)| v.ln()).collect();
    let k = slope(&x, &y);
    let my = y.iter().sum::<f64>() / y.len() as f64;
    let mx = x.iter().sum::<f64>() / x.len() as f64;
    let ss_tot: f64 = y.iter().map(|v| (v - my).powi(2)).sum();
    let ss_res: f64 = x.iter().zip(&y).map(|(a, b)| (b - my - k * (a - mx)).powi(2)).sum();
    Ok(ExponentFit {
        exponent: k,
        r_squared: 1.0 - ss_res / ss_tot,
    })
}

/// Spatial blowup exponent `(n − pμ)/(2p)` of `‖u(·,t)‖_{L^p(B_1)}`.
pub fn expected_blowup_exponent(n: usize, mu: f64, p: f64) -> f64 {
    (n as f64 - p * mu) / (2.0 * p)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CutoffKind {
    Bump,
    Log,
}

/// Radial cutoff functions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Cutoff {
    pub kind: CutoffKind,
    pub radius: f64,
}

impl Cutoff {
    pub fn bump(radius: f64) -> Self {
        Cutoff {
            kind: CutoffKind::Bump,
            radius,
        }
    }

    pub fn log(radius: f64) -> Self {
        Cutoff {
            kind: CutoffKind::Log,
            radius,
        }
    }

    /// `(ψ(r), ψ′(r))`.
    pub fn eval(&self, r: f64) -> (f64, f64) {
        let big_r = self.radius;
        match self.kind {
            CutoffKind::Bump => {
                let s = r / big_r;
                if s <= 1.0 {
                    (1.0, 0.0)
                } else if s >= 2.0 {
                    (0.0, 0.0)
                } else {
                    let t = s - 1.0;
                    let v = t * t * t * (10.0 - 15.0 * t + 6.0 * t * t);
                    let d = 30.0 * t * t * (1.0 - t) * (1.0 - t);
                    (1.0 - v, -d / big_r)
                }
            }
            CutoffKind::Log => {
                if r <= 1.0 {
                    (1.0, 0.0)
                } else if r >= big_r {
                    (0.0, 0.0)
                } else {
                    let l = big_r.ln();
                    (1.0 - r.ln() / l, -1.0 / (r * l))
                }
            }
        }
    }

    pub fn support(&self) -> f64 {
        match self.kind {
            CutoffKind::Bump => 2.0 * self.radius,
            CutoffKind::Log => self.radius,
        }
    }

    fn breaks(&self) -> Vec<f64> {
        match self.kind {
            CutoffKind::Bump => vec![self.radius, 2.0 * self.radius],
            CutoffKind::Log => vec![1.0, self.radius],
        }
    }
}

/// The four integrals of the Caccioppoli inequality and its two sides.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CaccioppoliEntry {
    pub cutoff: Cutoff,
    pub lambda: f64,
    pub big_lambda: f64,
    pub constant: f64,
    /// `∫|∇w|²ψ²`.
    pub grad_w_psi: f64,
    /// `∫|w|²|∇ψ|²`.
    pub w_grad_psi: f64,
    /// `∫|w|²ψ²`.
    pub w_psi: f64,
    /// `∫|w|² x·∇(ψ²)`.
    pub w_x_grad_psi2: f64,
    pub lhs: f64,
    pub rhs: f64,
    pub slack: f64,
    pub holds: bool,
}

/// Integrals over ℝⁿ of `|∇w|²`, `|w|²` against radial weights, reduced to
/// radial quadrature: `∫_S g² = |S^{n−1}|/n`, `|∇w|² = φ′²g² + φ²/r²`.
fn radial_integral<F: Fn(f64) -> f64>(sf: &SpiralField, f: F, a: f64, b: f64, extra: &[f64]) -> Result<f64> {
    let mut brk = sf.profile().breakpoints().to_vec();
    brk.extend_from_slice(extra);
    if a == 0.0 {
        integrate_from_origin(f, b, &brk, tol())
    } else {
        integrate_with_breaks(f, a, b, &brk, tol())
    }
}

fn grad_density(sf: &SpiralField, r: f64) -> f64 {
    let n = sf.n();
    let p = sf.profile().eval(r);
    sphere_area(n - 1) * (p.d1 * p.d1 / n as f64 + p.value * p.value / (r * r)) * r.powi(n as i32 - 1)
}

fn mass_density(sf: &SpiralField, r: f64) -> f64 {
    let n = sf.n();
    let phi = sf.profile().phi(r);
    sphere_area(n - 1) / n as f64 * phi * phi * r.powi(n as i32 - 1)
}

/// Checks the Caccioppoli inequality with `C(λ, Λ) = Λ²/λ`, using the
/// closed-form ellipticity constants of the field.
pub fn caccioppoli_check(sf: &SpiralField, cutoff: Cutoff) -> Result<CaccioppoliEntry> {
    let (lambda, big_lambda) = sf.field().predicted_constants();
    let constant = big_lambda * big_lambda / lambda;
    let mu = sf.mu();
    let nf = sf.n() as f64;
    let sup = cutoff.support();
    let brk = cutoff.breaks();
    let grad_w_psi = radial_integral(sf, |r| grad_density(sf, r) * cutoff.eval(r).0.powi(2), 0.0, sup, &brk)?;
    let w_grad_psi = radial_integral(sf, |r| mass_density(sf, r) * cutoff.eval(r).1.powi(2), 0.0, sup, &brk)?;
    let w_psi = radial_integral(sf, |r| mass_density(sf, r) * cutoff.eval(r).0.powi(2), 0.0, sup, &brk)?;
    let w_x_grad_psi2 = radial_integral(
        sf,
        |r| {
            let (v, d) = cutoff.eval(r);
            mass_density(sf, r) * 2.0 * v * d * r
        },
        0.0,
        sup,
        &brk,
    )?;
    let lhs = -lambda * grad_w_psi + constant * w_grad_psi;
    let rhs = 0.5 * (2.0 * mu - nf) * w_psi - 0.5 * w_x_grad_psi2;
    Ok(CaccioppoliEntry {
        cutoff,
        lambda,
        big_lambda,
        constant,
        grad_w_psi,
        w_grad_psi,
        w_psi,
        w_x_grad_psi2,
        lhs,
        rhs,
        slack: lhs - rhs,
        holds: lhs - rhs > 0.0,
    })
}

/// Logarithmic-cutoff bound `∫_{B_{√R}}|∇w|² ≤ 4C ∫|w|²|∇ψ_R|²`.
pub fn log_cutoff_bound(sf: &SpiralField, radius: f64) -> Result<f64> {
    let cut = Cutoff::log(radius);
    let (lambda, big_lambda) = sf.field().predicted_constants();
    let c = big_lambda * big_lambda / lambda;
    let w_grad_psi = radial_integral(sf, |r| mass_density(sf, r) * cut.eval(r).1.powi(2), 1.0, radius, &[])?;
    Ok(4.0 * c * w_grad_psi)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogCutoffRatio {
    pub radii: (f64, f64),
    pub bounds: (f64, f64),
    pub ratio: f64,
    /// ∫_{B_{√R}}|∇w|² at both radii, for reference.
    pub energies: (f64, f64),
}

pub fn log_cutoff_ratio(sf: &SpiralField, r1: f64, r2: f64) -> Result<LogCutoffRatio> {
    let b1 = log_cutoff_bound(sf, r1)?;
    let b2 = log_cutoff_bound(sf, r2)?;
    let e1 = radial_integral(sf, |r| grad_density(sf, r), 0.0, r1.sqrt(), &[])?;
    let e2 = radial_integral(sf, |r| grad_density(sf, r), 0.0, r2.sqrt(), &[])?;
    Ok(LogCutoffRatio {
        radii: (r1, r2),
        bounds: (b1, b2),
        ratio: b1 / b2,
        energies: (e1, e2),
    })
}

/// Pointwise check of `2Re(div(A∇w) w̄) = ½ m(x)` at random points; the
/// divergence is differenced from the flux, the right side is closed form.
pub fn key_identity_check(sf: &SpiralField, samples: usize, r_min: f64, r_max: f64, seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for _ in 0..samples {
        let r = rng.gen_range(r_min.ln()..=r_max.ln()).exp();
        let x: Vec<f64> = random_unit(&mut rng, sf.n()).into_iter().map(|v| v * r).collect();
        let w = sf.eval_w(&x);
        let grad = sf.eval_grad_w(&x);
        let x_grad: Complex64 = x.iter().zip(&grad).map(|(a, b)| b * a).sum();
        let rhs_eq = (Complex64::i() * w + w * sf.mu() + x_grad) * 0.5;
        let div = sf.full_residual(&x, FULL_STEP * r)? + rhs_eq;
        let lhs = 2.0 * (div * w.conj()).re;
        let rhs = 0.5 * sf.monotonicity_defect(&x);
        worst = worst.max((lhs - rhs).abs());
    }
    Ok(worst)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecayFit {
    pub radii: Vec<f64>,
    pub increments: Vec<f64>,
    pub slope: f64,
    pub expected: f64,
    pub tolerance: f64,
    pub pass: bool,
}

/// Fits the log-slope of annulus energies `∫_{B_{2R}∖B_R}|∇w|²`;
/// expected `n − 2μ − 2`. The tolerance is `5%` of `max(|expected|, 1)`.
pub fn decay_rate_check(sf: &SpiralField, radii: &[f64]) -> Result<DecayFit> {
    if radii.len() < 4 || radii.iter().any(|&r| !(r > 2.0)) {
        return Err(Error::InvalidParams("decay check needs >= 4 radii, all > 2".into()));
    }
    let increments = radii
        .iter()
        .map(|&r| radial_integral(sf, |s| grad_density(sf, s), r, 2.0 * r, &[]))
        .collect::<Result<Vec<_>>>()?;
    let lx: Vec<f64> = radii.iter().map(|r| r.ln()).collect();
    let ly: Vec<f64> = increments.iter().map(|v| v.ln()).collect();
    let s = slope(&lx, &ly);
    let expected = sf.n() as f64 - 2.0 * sf.mu() - 2.0;
    let tolerance = 0.05 * expected.abs().max(1.0);
    Ok(DecayFit {
        radii: radii.to_vec(),
        increments,
        slope: s,
        expected,
        tolerance,
        pass: (s - expected).abs() <= tolerance,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MonotonicityScan {
    pub min: f64,
    pub argmin: f64,
    pub samples: usize,
}

/// Minimum of the defect `m` along the axis of g (where `g² = 1`) over a
/// log grid on `[1e-3, r_max]` refined linearly on `[0.5, 3]`.
pub fn monotonicity_scan(sf: &SpiralField, r_max: f64) -> MonotonicityScan {
    let mut radii: Vec<f64> = (0..=4000).map(|i| 1e-3 * (r_max / 1e-3).powf(i as f64 / 4000.0)).collect();
    radii.extend((0..=25_000).map(|i| 0.5 + 1e-4 * i as f64));
    let e = sf.direction().to_vec();
    let mut scan = MonotonicityScan {
        min: f64::INFINITY,
        argmin: f64::NAN,
        samples: radii.len(),
    };
    for r in radii.into_iter().filter(|&r| r <= r_max) {
        let x: Vec<f64> = e.iter().map(|v| v * r).collect();
        let m = sf.monotonicity_defect(&x);
        if m < scan.min {
            scan.min = m;
            scan.argmin = r;
        }
    }
    scan
}

/// Configurable tolerances for the Liouville checks.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LiouvilleTolerances {
    pub key_identity: f64,
    pub log_ratio_target: f64,
    pub log_ratio_rel: f64,
    pub monotone_floor: f64,
}

impl Default for LiouvilleTolerances {
    fn default() -> Self {
        LiouvilleTolerances {
            key_identity: 1e-5,
            log_ratio_target: 2.0,
            log_ratio_rel: 0.15,
            monotone_floor: -1e-12,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LiouvilleReport {
    pub case_id: CaseId,
    pub key_identity_residual: f64,
    pub key_identity_tolerance: f64,
    pub key_identity_pass: bool,
    pub caccioppoli: Vec<CaccioppoliEntry>,
    pub caccioppoli_pass: bool,
    /// Only for the critical case `2μ = n − 2`.
    pub log_cutoff: Option<LogCutoffRatio>,
    pub log_cutoff_pass: Option<bool>,
    pub decay: DecayFit,
    pub monotonicity: MonotonicityScan,
    /// `m ≥ floor` when `C_μ = 0`; `m < 0` with argmin in (1, 3) when `C_μ > 0`.
    pub monotonicity_pass: bool,
    pub pass: bool,
}

pub fn liouville_report(sf: &SpiralField, samples: usize, seed: u64, tols: LiouvilleTolerances) -> Result<LiouvilleReport> {
    let key = key_identity_check(sf, samples, 1e-2, 1e2, seed)?;
    let caccioppoli = [10.0, 100.0, 1000.0]
        .iter()
        .map(|&r| caccioppoli_check(sf, Cutoff::bump(r)))
        .collect::<Result<Vec<_>>>()?;
    let caccioppoli_pass = caccioppoli.iter().all(|c| c.holds);
    let case_id = sf.field().case_id();
    let log_cutoff = if case_id == CaseId::Case3 {
        Some(log_cutoff_ratio(sf, 1e2, 1e4)?)
    } else {
        None
    };
    let log_cutoff_pass = log_cutoff
        .map(|l| (l.ratio - tols.log_ratio_target).abs() <= tols.log_ratio_rel * tols.log_ratio_target);
    let decay = decay_rate_check(sf, &[1e2, 1e3, 1e4, 1e5])?;
    let monotonicity = monotonicity_scan(sf, 100.0);
    let monotonicity_pass = if sf.profile().c_mu() == 0.0 {
        monotonicity.min >= tols.monotone_floor
    } else {
        monotonicity.min < 0.0 && monotonicity.argmin > 1.0 && monotonicity.argmin < 3.0
    };
    let key_identity_pass = key <= tols.key_identity;
    let pass = key_identity_pass && caccioppoli_pass && log_cutoff_pass.unwrap_or(true) && decay.pass && monotonicity_pass;
    Ok(LiouvilleReport {
        case_id,
        key_identity_residual: key,
        key_identity_tolerance: tols.key_identity,
        key_identity_pass,
        caccioppoli,
        caccioppoli_pass,
        log_cutoff,
        log_cutoff_pass,
        decay,
        monotonicity,
        monotonicity_pass,
        pass,
    })
}
