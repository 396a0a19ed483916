//! The stationary spiraling profile `w = φ(r) g(ν) e^{−i log r}` with
//! `g(ν) = e·ν`, and checks that it solves `div(A∇w) = ½(iw + μw + x·∇w)`.

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::coefficients::{random_unit, CoefficientField, Construction};
use crate::error::{Error, Result};
use crate::fd;
use crate::profile::RadialProfile;

/// Relative initial step of the extrapolated radial differences in the reduced residual.
pub const REDUCED_STEP: f64 = 1e-3;
/// Relative step of the flux differences in the full residual.
pub const FULL_STEP: f64 = 1e-4;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SpiralField {
    field: CoefficientField,
    e: Vec<f64>,
}

/// The two real residuals of the reduced radial system.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReducedResidual {
    pub first: f64,
    pub second: f64,
}

impl ReducedResidual {
    pub fn max_abs(&self) -> f64 {
        self.first.abs().max(self.second.abs())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AsymptoticsReport {
    pub radii: Vec<f64>,
    pub rel_error: Vec<f64>,
    /// Log-log slope of `rel_error`; `None` when the error vanishes identically.
    pub fitted_order: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResidualStats {
    pub samples: usize,
    pub max_first: f64,
    pub max_second: f64,
    pub worst_radius: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FullResidualStats {
    pub samples: usize,
    pub max_abs: f64,
    pub worst_radius: f64,
}

impl SpiralField {
    /// Spiral with `g = x₁/|x|`.
    pub fn new(field: CoefficientField) -> Self {
        let mut e = vec![0.0; field.n()];
        e[0] = 1.0;
        SpiralField { field, e }
    }

    pub fn with_direction(field: CoefficientField, e: &[f64]) -> Result<Self> {
        let norm = e.iter().map(|v| v * v).sum::<f64>().sqrt();
        if e.len() != field.n() || !(norm > 0.0) {
            return Err(Error::InvalidParams(format!(
                "direction must be a nonzero vector of length {}",
                field.n()
            )));
        }
        Ok(SpiralField {
            e: e.iter().map(|v| v / norm).collect(),
            field,
        })
    }

    pub fn from_construction(c: Construction) -> Self {
        Self::new(c.field)
    }

    pub fn field(&self) -> &CoefficientField {
        &self.field
    }

    pub fn profile(&self) -> &RadialProfile {
        self.field.profile()
    }

    pub fn n(&self) -> usize {
        self.field.n()
    }

    pub fn mu(&self) -> f64 {
        self.profile().mu()
    }

    pub fn direction(&self) -> &[f64] {
        &self.e
    }

    /// Eigenvalue of −Δ on the sphere for linear g.
    pub fn lambda_g(&self) -> f64 {
        self.n() as f64 - 1.0
    }

    fn polar(&self, x: &[f64]) -> (f64, f64) {
        assert_eq!(x.len(), self.n(), "point dimension mismatch");
        let r = norm(x);
        let g = if r > 0.0 { dot(&self.e, x) / r } else { 0.0 };
        (r, g)
    }

    pub fn eval_w(&self, x: &[f64]) -> Complex64 {
        let (r, g) = self.polar(x);
        if r == 0.0 {
            return Complex64::new(0.0, 0.0);
        }
        phase(r) * (self.profile().phi(r) * g)
    }

    pub fn eval_grad_w(&self, x: &[f64]) -> Vec<Complex64> {
        let (r, g) = self.polar(x);
        assert!(r > 0.0, "gradient undefined at the origin");
        let p = self.profile().eval(r);
        let ph = phase(r);
        let radial = ph * Complex64::new(p.d1, -p.value / r) * g;
        let tang = ph * (p.value / r);
        x.iter()
            .zip(&self.e)
            .map(|(xk, ek)| {
                let nu = xk / r;
                radial * nu + tang * (ek - g * nu)
            })
            .collect()
    }

    /// Residuals of both reduced equations at radius `r`.
    pub fn reduced_residual(&self, r: f64) -> Result<ReducedResidual> {
        let n = self.n() as i32;
        let nf = n as f64;
        let mu = self.mu();
        let alpha = self.field.alpha();
        let prof = self.profile();
        let brk = prof.breakpoints();
        let h = REDUCED_STEP * r;
        let p = prof.eval(r);
        let c = self.field.eval(r)?;

        let g_fn = |s: f64| s.powi(n - 2) * self.field.beta(s).unwrap_or(f64::NAN) * prof.phi(s).powi(2);
        let lhs1 = fd::ridders(&g_fn, r, h, brk).0 / (r.powi(n - 1) * p.value);
        let lap = p.d2 + (nf - 1.0) * p.d1 / r;
        let rhs1 = 0.5 * (mu * p.value + r * p.d1) + nf * alpha * p.value / (r * r) - alpha * lap;

        let k_fn = |s: f64| s.powi(n - 1) * self.field.beta(s).unwrap_or(f64::NAN) * prof.eval(s).d1;
        let flux = fd::ridders(&k_fn, r, h, brk).0 / r.powi(n - 1);
        let second = (nf - 1.0) * c.gamma * p.value / (r * r)
            + alpha * ((nf - 2.0) * p.value / (r * r) + 2.0 * p.d1 / r)
            - flux
            + c.beta * p.value / (r * r);
        Ok(ReducedResidual {
            first: lhs1 - rhs1,
            second,
        })
    }

    /// Reduced residuals divided by `φ(r)(1 + r^{−2})`, the natural size of
    /// the terms in both equations.
    pub fn weighted_residual(&self, r: f64) -> Result<ReducedResidual> {
        let res = self.reduced_residual(r)?;
        let w = self.profile().phi(r) * (1.0 + 1.0 / (r * r));
        Ok(ReducedResidual {
            first: res.first / w,
            second: res.second / w,
        })
    }

    /// Weighted reduced residuals over every positive radius of the table.
    pub fn residual_sweep(&self) -> Result<ResidualStats> {
        let mut stats = ResidualStats {
            samples: 0,
            max_first: 0.0,
            max_second: 0.0,
            worst_radius: f64::NAN,
        };
        let mut worst = -1.0;
        for &r in self.field.table().r.iter().filter(|&&r| r > 0.0) {
            let res = self.weighted_residual(r)?;
            stats.samples += 1;
            stats.max_first = stats.max_first.max(res.first.abs());
            stats.max_second = stats.max_second.max(res.second.abs());
            if !(res.max_abs() <= worst) {
                worst = res.max_abs();
                stats.worst_radius = r;
            }
        }
        Ok(stats)
    }

    fn flux(&self, y: &[f64]) -> Result<Vec<Complex64>> {
        self.field.apply(y, &self.eval_grad_w(y))
    }

    /// `div(A∇w) − ½(iw + μw + x·∇w)` with the divergence taken by
    /// fourth-order differences of the analytic flux.
    pub fn full_residual(&self, x: &[f64], h: f64) -> Result<Complex64> {
        let r = norm(x);
        if r == 0.0 {
            return Err(Error::InvalidParams("full residual needs x != 0".into()));
        }
        if h > r / 10.0 {
            return Err(Error::StepTooLarge { h, r });
        }
        let brk = self.profile().breakpoints();
        let mut div = Complex64::new(0.0, 0.0);
        let mut y = x.to_vec();
        for k in 0..self.n() {
            let mut at = |s: f64| -> Result<Complex64> {
                y[k] = x[k] + s;
                let f = self.flux(&y)?[k];
                y[k] = x[k];
                Ok(f)
            };
            let radius = |s: f64| {
                let mut z = x.to_vec();
                z[k] += s;
                norm(&z)
            };
            let crosses = |steps: &[f64]| {
                brk.iter().any(|&b| steps.iter().any(|&s| (radius(s) - b).signum() != (r - b).signum()))
            };
            let central = [-2.0 * h, -h, h, 2.0 * h];
            let d = if !crosses(&central) {
                (at(-2.0 * h)? - at(-h)? * 8.0 + at(h)? * 8.0 - at(2.0 * h)?) / (12.0 * h)
            } else {
                let fwd = [h, 2.0 * h, 3.0 * h, 4.0 * h];
                let s = if crosses(&fwd) { -h } else { h };
                (at(0.0)? * -25.0 + at(s)? * 48.0 - at(2.0 * s)? * 36.0 + at(3.0 * s)? * 16.0 - at(4.0 * s)? * 3.0)
                    / (12.0 * s)
            };
            div += d;
        }
        let w = self.eval_w(x);
        let grad = self.eval_grad_w(x);
        let x_grad: Complex64 = x.iter().zip(&grad).map(|(a, b)| b * a).sum();
        let rhs = (Complex64::i() * w + w * self.mu() + x_grad) * 0.5;
        Ok(div - rhs)
    }

    /// Full residual at `samples` random points with log-uniform radius in
    /// `[r_min, r_max]` and step `FULL_STEP·|x|`.
    pub fn full_residual_sweep(&self, samples: usize, r_min: f64, r_max: f64, seed: u64) -> Result<FullResidualStats> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut stats = FullResidualStats {
            samples,
            max_abs: 0.0,
            worst_radius: f64::NAN,
        };
        for _ in 0..samples {
            let r = rng.gen_range(r_min.ln()..=r_max.ln()).exp();
            let x: Vec<f64> = random_unit(&mut rng, self.n()).into_iter().map(|v| v * r).collect();
            let res = self.full_residual(&x, FULL_STEP * r)?.norm();
            if !(res <= stats.max_abs) {
                stats.max_abs = res;
                stats.worst_radius = r;
            }
        }
        Ok(stats)
    }

    /// Relative deviation `|w − |x|^{−μ} g e^{−i log|x|}| / |w|` along `e`.
    pub fn check_asymptotics(&self, radii: &[f64]) -> Result<AsymptoticsReport> {
        if let Some(r) = radii.iter().find(|&&r| !(r >= 2.0)) {
            return Err(Error::InvalidParams(format!("asymptotics radii must be >= 2, got {r}")));
        }
        let mu = self.mu();
        let rel_error: Vec<f64> = radii
            .iter()
            .map(|&r| {
                let x: Vec<f64> = self.e.iter().map(|v| v * r).collect();
                let w = self.eval_w(&x);
                let lead = phase(r) * r.powf(-mu);
                (w - lead).norm() / w.norm()
            })
            .collect();
        let fitted_order = if rel_error.iter().all(|&v| v > 0.0) && radii.len() >= 2 {
            let lx: Vec<f64> = radii.iter().map(|r| r.ln()).collect();
            let ly: Vec<f64> = rel_error.iter().map(|v| v.ln()).collect();
            Some(slope(&lx, &ly))
        } else {
            None
        };
        Ok(AsymptoticsReport {
            radii: radii.to_vec(),
            rel_error,
            fitted_order,
        })
    }

    /// `m(x) = 2μ|w|² + x·∇|w|² = (2μφ² + 2rφφ′) g²`.
    pub fn monotonicity_defect(&self, x: &[f64]) -> f64 {
        let (r, g) = self.polar(x);
        if r == 0.0 {
            return 0.0;
        }
        let p = self.profile().eval(r);
        (2.0 * self.mu() * p.value * p.value + 2.0 * r * p.value * p.d1) * g * g
    }
}

/// Max deviation of a discrete spherical Laplacian of `g = e·ν` from
/// `−(n−1)g` on a latitude(-longitude) grid with `m` cells per π (n = 2, 3).
pub fn spherical_eigen_residual(n: usize, e: &[f64], m: usize) -> Result<f64> {
    let h = std::f64::consts::PI / m as f64;
    let mut worst = 0.0f64;
    match n {
        2 => {
            let g = |t: f64| e[0] * t.cos() + e[1] * t.sin();
            for j in 0..2 * m {
                let t = j as f64 * h;
                let lap = (g(t + h) - 2.0 * g(t) + g(t - h)) / (h * h);
                worst = worst.max((lap + g(t)).abs());
            }
        }
        3 => {
            let g = |t: f64, p: f64| e[0] * t.sin() * p.cos() + e[1] * t.sin() * p.sin() + e[2] * t.cos();
            for i in 1..m {
                let t = i as f64 * h;
                for j in 0..2 * m {
                    let p = j as f64 * h;
                    let polar = ((t + 0.5 * h).sin() * (g(t + h, p) - g(t, p))
                        - (t - 0.5 * h).sin() * (g(t, p) - g(t - h, p)))
                        / (h * h * t.sin());
                    let azim = (g(t, p + h) - 2.0 * g(t, p) + g(t, p - h)) / (h * h * t.sin().powi(2));
                    worst = worst.max((polar + azim + 2.0 * g(t, p)).abs());
                }
            }
        }
        _ => return Err(Error::InvalidParams(format!("spherical stencil implemented for n = 2, 3, not {n}"))),
    }
    Ok(worst)
}

pub(crate) fn phase(r: f64) -> Complex64 {
    Complex64::from_polar(1.0, -r.ln())
}

pub(crate) fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Least-squares slope of `y` against `x`.
pub(crate) fn slope(x: &[f64], y: &[f64]) -> f64 {
    let m = x.len() as f64;
    let mx = x.iter().sum::<f64>() / m;
    let my = y.iter().sum::<f64>() / m;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    sxy / sxx
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coefficients::{construct, FieldOptions, Overrides};
    use crate::profile::{ProfileParams, Variant};
    use approx::assert_relative_eq;

    fn spiral(n: usize, mu: f64, variant: Variant) -> SpiralField {
        SpiralField::from_construction(construct(n, mu, variant, Overrides::default(), FieldOptions::default()).unwrap())
    }

    fn spiral_with_c(n: usize, mu: f64, c: f64, alpha: f64) -> SpiralField {
        let p = RadialProfile::build(ProfileParams::new(n, mu, c, Variant::Piecewise)).unwrap();
        let opts = FieldOptions {
            ceiling: f64::INFINITY,
            ..Default::default()
        };
        SpiralField::new(CoefficientField::assemble_with(p, alpha, opts).unwrap())
    }

    #[test]
    fn w_vanishes_on_equator_and_at_origin() {
        let s = spiral(3, 0.4, Variant::Piecewise);
        assert_eq!(s.eval_w(&[0.0, 1.3, -0.2]), Complex64::new(0.0, 0.0));
        assert_eq!(s.eval_w(&[0.0, 0.0, 0.0]), Complex64::new(0.0, 0.0));
    }

    #[test]
    fn phase_winds_back() {
        let s = spiral_with_c(2, 0.0, 2.0, 1.0);
        let r = (2.0 * std::f64::consts::PI).exp();
        let w = s.eval_w(&[r, 0.0]);
        assert_relative_eq!(w.re, s.profile().phi(r), max_relative = 1e-12);
        assert!(w.im.abs() < 1e-12 * w.re);
    }

    #[test]
    fn modulus_of_pure_power() {
        let s = spiral_with_c(3, 1.0, 0.0, 1.0);
        assert_relative_eq!(s.eval_w(&[2.0, 0.0, 0.0]).norm(), 0.5, max_relative = 1e-15);
    }

    #[test]
    fn radial_derivative_modulus() {
        let s = spiral(2, 0.9, Variant::Piecewise);
        let r = 3.7;
        let g = s.eval_grad_w(&[r, 0.0]);
        let p = s.profile().eval(r);
        assert_relative_eq!(g[0].norm(), (p.d1 * p.d1 + p.value * p.value / (r * r)).sqrt(), max_relative = 1e-14);
        assert!(g[1].norm() < 1e-15);
    }

    #[test]
    fn equator_gradient_is_tangential() {
        let s = spiral(2, 0.9, Variant::Piecewise);
        let r = 0.4;
        let g = s.eval_grad_w(&[0.0, r]);
        let expected = phase(r) * (s.profile().phi(r) / r);
        assert_relative_eq!((g[0] - expected).norm(), 0.0, epsilon = 1e-15);
        assert!(g[1].norm() < 1e-15);
    }

    #[test]
    fn gradient_matches_central_differences() {
        let s = spiral(3, 1.2, Variant::Piecewise);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..1000 {
            let r = rng.gen_range((1e-2f64).ln()..(1e3f64).ln()).exp();
            let x: Vec<f64> = random_unit(&mut rng, 3).into_iter().map(|v| v * r).collect();
            let grad = s.eval_grad_w(&x);
            let h = 1e-4 * r;
            let scale = grad.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
            for k in 0..3 {
                let at = |d: f64| {
                    let mut y = x.clone();
                    y[k] += d;
                    s.eval_w(&y)
                };
                let fd = (at(-2.0 * h) - at(-h) * 8.0 + at(h) * 8.0 - at(2.0 * h)) / (12.0 * h);
                assert!((fd - grad[k]).norm() <= 1e-6 * scale, "r = {r}");
            }
        }
    }

    #[test]
    fn closed_form_region_residual() {
        let s = spiral(3, 0.4, Variant::Piecewise);
        let res = s.reduced_residual(0.5).unwrap();
        assert!(res.max_abs() < 1e-9, "{res:?}");
    }

    #[test]
    fn shifted_gamma_residual() {
        let p = RadialProfile::build(ProfileParams::new(5, 0.5, 0.0, Variant::Piecewise)).unwrap();
        let opts = FieldOptions {
            gamma_shift: 1.0,
            ..Default::default()
        };
        let s = SpiralField::new(CoefficientField::assemble_with(p, 1.0, opts).unwrap());
        let r = 2.5;
        let res = s.reduced_residual(r).unwrap();
        assert_relative_eq!(res.second, 4.0 * s.profile().phi(r) / (r * r), max_relative = 1e-8);
    }

    #[test]
    fn residuals_vanish_far_out() {
        for (n, mu) in [(2, 0.9), (3, 0.5), (5, 0.5)] {
            let s = spiral(n, mu, Variant::Piecewise);
            let res = s.reduced_residual(100.0).unwrap();
            assert!(res.max_abs() <= 1e-6, "n={n} mu={mu}: {res:?}");
        }
    }

    #[test]
    fn full_residual_small_off_axis() {
        let s = spiral(2, 0.9, Variant::Piecewise);
        let x = [std::f64::consts::FRAC_1_SQRT_2, std::f64::consts::FRAC_1_SQRT_2];
        let v = s.full_residual(&x, 1e-4).unwrap().norm();
        assert!(v <= 1e-5, "{v}");
        assert!(s.full_residual(&[0.0, 1.7], 1.7e-4).unwrap().norm() <= 1e-5);
    }

    #[test]
    fn full_residual_detects_miscoupling() {
        let good = spiral(2, 0.9, Variant::Piecewise);
        let opts = FieldOptions {
            alpha_scale: 2.0,
            ..Default::default()
        };
        let bad = SpiralField::new(
            CoefficientField::assemble_with(good.profile().clone(), good.field().alpha(), opts).unwrap(),
        );
        let x = [0.6, 0.8];
        assert!(bad.full_residual(&x, 1e-4).unwrap().norm() > 1e-3);
    }

    #[test]
    fn full_residual_rejects_big_steps() {
        let s = spiral(2, 0.9, Variant::Piecewise);
        assert!(matches!(s.full_residual(&[0.1, 0.0], 0.02), Err(Error::StepTooLarge { .. })));
    }

    #[test]
    fn asymptotics_piecewise() {
        let s = spiral_with_c(2, 0.0, 2.0, 1.0);
        let rep = s.check_asymptotics(&[10.0, 100.0, 1000.0]).unwrap();
        assert_relative_eq!(rep.rel_error[0], 0.02 / 1.02, max_relative = 1e-10);
        assert!((rep.fitted_order.unwrap() + 2.0).abs() < 0.1);
        let s0 = spiral_with_c(5, 0.5, 0.0, 1.0);
        let rep = s0.check_asymptotics(&[2.0, 10.0]).unwrap();
        assert!(rep.rel_error.iter().all(|&e| e == 0.0));
        assert!(rep.fitted_order.is_none());
    }

    #[test]
    fn asymptotics_analytic_slope() {
        let s = spiral(2, 0.9, Variant::Analytic);
        let rep = s.check_asymptotics(&[1e3, 1e4]).unwrap();
        assert!((rep.fitted_order.unwrap() + 2.0).abs() < 1e-3);
    }

    #[test]
    fn defect_closed_forms() {
        let s = spiral_with_c(3, 0.5, 3.0, 1.0);
        let r: f64 = 0.5;
        assert_relative_eq!(s.monotonicity_defect(&[r, 0.0, 0.0]), 3.0 * r * r, max_relative = 1e-14);
        let r: f64 = 2.0;
        let expected = -4.0 * 3.0 * r.powf(-3.0) * (1.0 + 3.0 / (r * r));
        assert_relative_eq!(s.monotonicity_defect(&[r, 0.0, 0.0]), expected, max_relative = 1e-13);
        let s0 = spiral_with_c(5, 0.5, 0.0, 1.0);
        assert!(s0.monotonicity_defect(&[0.0, 3.0, 0.0, 1.0, 0.0]).abs() < 1e-15);
    }

    #[test]
    fn scale_covariance_in_pure_power_region() {
        let s = spiral_with_c(3, 0.7, 0.0, 1.0);
        let x = [1.2, -0.4, 0.9];
        for lam in [1.5, 4.0, 30.0] {
            let y: Vec<f64> = x.iter().map(|v| v * lam).collect();
            let scaled = s.eval_w(&y) * Complex64::from_polar(lam.powf(0.7), lam.ln());
            assert!((scaled - s.eval_w(&x)).norm() < 1e-13);
        }
    }

    #[test]
    fn linear_g_is_spherical_eigenfunction() {
        for m in [64, 128] {
            let r2 = spherical_eigen_residual(2, &[0.6, 0.8], m).unwrap();
            let r3 = spherical_eigen_residual(3, &[0.3, -0.5, 0.8124], m).unwrap();
            // Second order on the circle; the sphere degrades to first order at the poles.
            let h = std::f64::consts::PI / m as f64;
            assert!(r2 < h * h && r3 < h, "m={m}: {r2} {r3}");
        }
    }
}
