//! Coefficient fields `A(x) = αI + i(β(r) ν⊗ν + γ(r)(I − ν⊗ν))`.
//!
//! β is obtained by integrating the first reduced ODE from the origin, γ by
//! solving the second one algebraically. On `r ≥ r_start` the profile is a
//! power sum, so every cumulative integral there is a constant plus explicit
//! powers (or logarithms); the growing parts that must cancel are cancelled
//! symbolically rather than in floating point.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::interp::MonotoneCubic;
use crate::profile::{Bridge, ProfileParams, RadialProfile, TailSeries, Variant, BRIDGE_START};
use crate::quadrature::{integrate_vec, Tolerance};

/// Tolerance used to decide `2μ = n − 2` and exact logarithmic tail terms.
pub const CASE_TOLERANCE: f64 = 1e-12;
/// Case 2 doubling search stops once D reaches this margin.
pub const D_MARGIN: f64 = 1.0;
pub const DEFAULT_CEILING: f64 = 1e6;

const TABLE_MIN: f64 = 1e-6;
const TABLE_MAX: f64 = 1e6;
const TABLE_PER_DECADE: usize = 100;
const TABLE_LINEAR_STEP: f64 = 0.005;
const CACHE_PANELS: usize = 64;

fn quad_tol() -> Tolerance {
    Tolerance::new(1e-16, 1e-13)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CaseId {
    Case1,
    Case2,
    Case3,
}

impl CaseId {
    pub fn classify(n: usize, mu: f64) -> CaseId {
        let gap = 2.0 * mu - (n as f64 - 2.0);
        if gap.abs() <= CASE_TOLERANCE {
            CaseId::Case3
        } else if gap < 0.0 {
            CaseId::Case1
        } else {
            CaseId::Case2
        }
    }
}

/// The three profile integrals; `None` where the integral diverges.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CaseConstants {
    pub d: Option<f64>,
    pub e: Option<f64>,
    pub f: Option<f64>,
    pub case_id: CaseId,
}

impl CaseConstants {
    pub fn require_d(&self) -> Result<f64> {
        self.d.ok_or(Error::DivergentIntegral { name: "D", exponent: -1.0 })
    }
    pub fn require_e(&self) -> Result<f64> {
        self.e.ok_or(Error::DivergentIntegral { name: "E", exponent: -1.0 })
    }
    pub fn require_f(&self) -> Result<f64> {
        self.f.ok_or(Error::DivergentIntegral { name: "F", exponent: -1.0 })
    }
}

fn power_antiderivative(e: f64, r: f64) -> f64 {
    if (e + 1.0).abs() <= CASE_TOLERANCE {
        r.ln()
    } else {
        r.powf(e + 1.0) / (e + 1.0)
    }
}

fn convolve(a: &[f64], b: &[f64], len: usize) -> Vec<f64> {
    let mut out = vec![0.0; len];
    for (i, &x) in a.iter().enumerate() {
        for (j, &y) in b.iter().enumerate() {
            if i + j < len {
                out[i + j] += x * y;
            }
        }
    }
    out
}

/// Cumulative integrals `I1 = ∫φ²s^{n-1}`, `I2 = ∫φ²s^{n-3}`,
/// `I3 = ∫φ′²s^{n-1}` from the origin.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProfileIntegrals {
    profile: RadialProfile,
    cache_start: f64,
    cache_step: f64,
    cache: Vec<[f64; 3]>,
    /// Coefficients of r^{2μ}φ² = Σ b_k r^{-2k}.
    b: Vec<f64>,
    /// Coefficients of r^{2μ+2}φ′² = Σ d_k r^{-2k}.
    d: Vec<f64>,
    /// I_m(r) = tail_const[m] + Σ_k c_{m,k} A(e_{m,k}, r) for r ≥ r_start.
    tail_const: [f64; 3],
}

impl ProfileIntegrals {
    pub fn new(profile: RadialProfile) -> Result<Self> {
        let tail = profile.tail().clone();
        // Full product length plus one slot, so the shifted I2/I3 terms are complete.
        let len = 2 * tail.coeffs.len();
        let b = convolve(&tail.coeffs, &tail.coeffs, len);
        let da: Vec<f64> = tail
            .coeffs
            .iter()
            .enumerate()
            .map(|(k, a)| a * (-tail.mu - 2.0 * k as f64))
            .collect();
        let d = convolve(&da, &da, len);

        let n = profile.n();
        let (cache_start, start_vals) = match profile.variant() {
            Variant::Piecewise => {
                let r = BRIDGE_START;
                let nf = n as f64;
                (r, [r.powi(n as i32 + 2) / (nf + 2.0), r.powi(n as i32) / nf, r.powi(n as i32) / nf])
            }
            Variant::Analytic => (0.0, [0.0; 3]),
        };
        let cache_step = (tail.r_start - cache_start) / CACHE_PANELS as f64;
        let mut out = ProfileIntegrals {
            profile,
            cache_start,
            cache_step,
            cache: vec![start_vals],
            b,
            d,
            tail_const: [0.0; 3],
        };
        let mut acc = start_vals;
        for j in 0..CACHE_PANELS {
            let a = cache_start + j as f64 * cache_step;
            let piece = out.integrate_inner(a, a + cache_step)?;
            for m in 0..3 {
                acc[m] += piece[m];
            }
            out.cache.push(acc);
        }
        let at_start = acc;
        let r0 = tail.r_start;
        for m in 0..3 {
            let series: f64 = out.tail_terms(m).map(|(c, e)| c * power_antiderivative(e, r0)).sum();
            out.tail_const[m] = at_start[m] - series;
        }
        Ok(out)
    }

    pub fn profile(&self) -> &RadialProfile {
        &self.profile
    }

    fn integrand(&self, s: f64) -> [f64; 3] {
        let n = self.profile.n() as i32;
        let p = self.profile.eval(s);
        let phi2 = p.value * p.value;
        [phi2 * s.powi(n - 1), phi2 * s.powi(n - 3), p.d1 * p.d1 * s.powi(n - 1)]
    }

    fn integrate_inner(&self, a: f64, b: f64) -> Result<[f64; 3]> {
        let f = |s: f64| self.integrand(s);
        Ok(integrate_vec(&f, a, b, quad_tol())?.value)
    }

    /// (coefficient, exponent) pairs of the tail integrand of I_m.
    fn tail_terms(&self, m: usize) -> impl Iterator<Item = (f64, f64)> + '_ {
        let n = self.profile.n() as f64;
        let mu = self.profile.mu();
        let (coeffs, base) = match m {
            0 => (&self.b, n - 1.0 - 2.0 * mu),
            1 => (&self.b, n - 3.0 - 2.0 * mu),
            _ => (&self.d, n - 3.0 - 2.0 * mu),
        };
        coeffs.iter().enumerate().map(move |(k, &c)| (c, base - 2.0 * k as f64))
    }

    pub fn r_start(&self) -> f64 {
        self.profile.tail().r_start
    }

    /// Cumulative integrals at `r ≥ 0`.
    pub fn at(&self, r: f64) -> Result<[f64; 3]> {
        let r_start = self.r_start();
        if r >= r_start {
            let mut out = self.tail_const;
            for (m, slot) in out.iter_mut().enumerate() {
                *slot += self.tail_terms(m).map(|(c, e)| c * power_antiderivative(e, r)).sum::<f64>();
            }
            return Ok(out);
        }
        if r <= self.cache_start {
            // Piecewise core: φ = s.
            let n = self.profile.n();
            let nf = n as f64;
            return Ok([r.powi(n as i32 + 2) / (nf + 2.0), r.powi(n as i32) / nf, r.powi(n as i32) / nf]);
        }
        let j = (((r - self.cache_start) / self.cache_step).floor() as usize).min(CACHE_PANELS - 1);
        let a = self.cache_start + j as f64 * self.cache_step;
        let piece = self.integrate_inner(a, r)?;
        let base = self.cache[j];
        Ok([base[0] + piece[0], base[1] + piece[1], base[2] + piece[2]])
    }

    pub fn case_constants(&self) -> CaseConstants {
        let case_id = CaseId::classify(self.profile.n(), self.profile.mu());
        // D subtracts the leading s^{-2μ} term, whose antiderivative is the k = 0 tail term.
        let converges = |m: usize, skip_leading: bool| {
            self.tail_terms(m)
                .enumerate()
                .filter(|(k, (c, _))| !(skip_leading && *k == 0) && *c != 0.0)
                .all(|(_, (_, e))| e < -1.0 - CASE_TOLERANCE)
        };
        CaseConstants {
            d: converges(0, true).then_some(self.tail_const[0]),
            e: converges(1, false).then_some(self.tail_const[1]),
            f: converges(2, false).then_some(self.tail_const[2]),
            case_id,
        }
    }
}

/// `Re Σ A_kl p_l p̄_k`, summing the (k, l) and (l, k) terms together so the
/// imaginary part of a symmetric `Im A` cancels exactly.
fn re_quadform(a: &DMatrix<Complex64>, p: &[Complex64]) -> f64 {
    let n = p.len();
    let mut acc = 0.0;
    for k in 0..n {
        acc += a[(k, k)].re * p[k].norm_sqr();
        for l in k + 1..n {
            let (z, w) = (p[l] * p[k].conj(), p[k] * p[l].conj());
            let im = a[(k, l)].im * z.im + a[(l, k)].im * w.im;
            acc += a[(k, l)].re * z.re + a[(l, k)].re * w.re - im;
        }
    }
    acc
}

/// Compute D, E, F for a profile (`None` entries diverge).
pub fn compute_case_constants(profile: &RadialProfile) -> Result<CaseConstants> {
    Ok(ProfileIntegrals::new(profile.clone())?.case_constants())
}

/// Selected (C_μ, α) and the case constants at that choice.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    pub c_mu: f64,
    pub alpha: f64,
    pub case_id: CaseId,
    pub constants: CaseConstants,
}

/// First tail coefficient a₁ of r^μφ as an affine function of C_μ.
fn tail_a1_offset(variant: Variant, mu: f64) -> f64 {
    match variant {
        Variant::Piecewise => 0.0,
        Variant::Analytic => -0.5 * (mu + 1.0),
    }
}

pub fn select_constants(n: usize, mu: f64, variant: Variant) -> Result<Selection> {
    ProfileParams::new(n, mu, 0.0, variant).validate()?;
    let case_id = CaseId::classify(n, mu);
    let nf = n as f64;
    match case_id {
        CaseId::Case1 => {
            let profile = RadialProfile::build(ProfileParams::new(n, mu, 0.0, variant))?;
            Ok(Selection {
                c_mu: 0.0,
                alpha: 1.0,
                case_id,
                constants: compute_case_constants(&profile)?,
            })
        }
        CaseId::Case3 => {
            // Logarithmic coefficient of β is −a₁ + α(n + μ²).
            let alpha = 1.0;
            let c_mu = alpha * (nf + mu * mu) - tail_a1_offset(variant, mu);
            let profile = RadialProfile::build(ProfileParams::new(n, mu, c_mu, variant))?;
            Ok(Selection {
                c_mu,
                alpha,
                case_id,
                constants: compute_case_constants(&profile)?,
            })
        }
        CaseId::Case2 => {
            let mut c_mu = 1.0;
            for _ in 0..64 {
                let profile = RadialProfile::build(ProfileParams::new(n, mu, c_mu, variant))?;
                let constants = compute_case_constants(&profile)?;
                let d = constants.require_d()?;
                if d >= D_MARGIN {
                    let e = constants.require_e()?;
                    let f = constants.require_f()?;
                    let alpha = (nf - 2.0 * mu) * d / (4.0 * (nf * e + f));
                    return Ok(Selection {
                        c_mu,
                        alpha,
                        case_id,
                        constants,
                    });
                }
                c_mu *= 2.0;
            }
            Err(Error::InvalidParams(format!(
                "no C_mu up to 2^64 reaches D >= {D_MARGIN} for n = {n}, mu = {mu}"
            )))
        }
    }
}

/// N(r) = K r^p + Σ_{k≥1} r^{2−2k}(u_k + v_k ln r); β = N/Q2 − α r φ′/φ on the tail.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct TailNumerator {
    k_const: f64,
    p: f64,
    u: Vec<f64>,
    v: Vec<f64>,
}

impl TailNumerator {
    fn eval(&self, r: f64) -> (f64, f64) {
        let ln = r.ln();
        let mut n0 = self.k_const * r.powf(self.p);
        let mut n1 = self.k_const * self.p * r.powf(self.p - 1.0);
        let x = 1.0 / (r * r);
        let mut pow = 1.0; // r^{2-2k} for k = 1
        for k in 1..self.u.len() {
            let (u, v) = (self.u[k], self.v[k]);
            let kk = k as f64;
            n0 += pow * (u + v * ln);
            n1 += pow / r * ((2.0 - 2.0 * kk) * (u + v * ln) + v);
            pow *= x;
        }
        (n0, n1)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FieldOptions {
    pub ceiling: f64,
    /// Constant added to γ; a test hook for corrupted fields.
    pub gamma_shift: f64,
    /// Factor applied to α in the assembled matrix only, leaving β and γ
    /// as derived; a test hook for miscoupled fields.
    pub alpha_scale: f64,
}

impl Default for FieldOptions {
    fn default() -> Self {
        FieldOptions {
            ceiling: DEFAULT_CEILING,
            gamma_shift: 0.0,
            alpha_scale: 1.0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CoefficientTable {
    pub r: Vec<f64>,
    pub beta: Vec<f64>,
    pub gamma: Vec<f64>,
    beta_interp: MonotoneCubic,
    gamma_interp: MonotoneCubic,
}

impl CoefficientTable {
    pub fn sup_beta(&self) -> f64 {
        self.beta.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
    pub fn sup_gamma(&self) -> f64 {
        self.gamma.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
    pub fn interp_beta(&self, r: f64) -> f64 {
        self.beta_interp.eval(r)
    }
    pub fn interp_gamma(&self, r: f64) -> f64 {
        self.gamma_interp.eval(r)
    }
}

/// Logarithmic grid on [1e-6, 1e6], linear refinement on [0, 2], and the
/// profile breakpoints.
pub fn table_grid(breakpoints: &[f64]) -> Vec<f64> {
    let decades = (TABLE_MAX / TABLE_MIN).log10().round() as usize;
    let m = decades * TABLE_PER_DECADE;
    let mut r: Vec<f64> = (0..=m)
        .map(|i| TABLE_MIN * 10f64.powf(i as f64 / TABLE_PER_DECADE as f64))
        .collect();
    let lin = (2.0 / TABLE_LINEAR_STEP).round() as usize;
    r.extend((0..=lin).map(|i| i as f64 * TABLE_LINEAR_STEP));
    r.extend_from_slice(breakpoints);
    r.sort_by(f64::total_cmp);
    r.dedup_by(|a, b| (*a - *b).abs() <= 1e-12 * b.abs().max(1e-300));
    r
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CoefficientField {
    integrals: ProfileIntegrals,
    alpha: f64,
    case_id: CaseId,
    options: FieldOptions,
    numerator: TailNumerator,
    table: Option<CoefficientTable>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BetaGamma {
    pub beta: f64,
    pub beta_prime: f64,
    pub gamma: f64,
}

impl CoefficientField {
    pub fn assemble(profile: RadialProfile, alpha: f64) -> Result<Self> {
        Self::assemble_with(profile, alpha, FieldOptions::default())
    }

    pub fn assemble_with(profile: RadialProfile, alpha: f64, options: FieldOptions) -> Result<Self> {
        if !(alpha > 0.0 && alpha.is_finite()) {
            return Err(Error::InvalidParams(format!("alpha = {alpha} must be > 0")));
        }
        let case_id = CaseId::classify(profile.n(), profile.mu());
        let integrals = ProfileIntegrals::new(profile)?;
        let numerator = Self::tail_numerator(&integrals, alpha);
        let mut field = CoefficientField {
            integrals,
            alpha,
            case_id,
            options,
            numerator,
            table: None,
        };
        field.tabulate()?;
        Ok(field)
    }

    fn weights(n: usize, mu: f64, alpha: f64) -> [f64; 3] {
        let nf = n as f64;
        [(2.0 * mu - nf) / 4.0, nf * alpha, alpha]
    }

    fn tail_numerator(ints: &ProfileIntegrals, alpha: f64) -> TailNumerator {
        let n = ints.profile.n();
        let nf = n as f64;
        let mu = ints.profile.mu();
        let w = Self::weights(n, mu, alpha);
        let len = ints.b.len();
        // J tail coefficient on A(e_k), e_k = n − 1 − 2μ − 2k.
        let j: Vec<f64> = (0..len)
            .map(|k| w[0] * ints.b[k] + if k > 0 { w[1] * ints.b[k - 1] + w[2] * ints.d[k - 1] } else { 0.0 })
            .collect();
        let mut u = vec![0.0; len];
        let mut v = vec![0.0; len];
        for k in 1..len {
            let e = nf - 1.0 - 2.0 * mu - 2.0 * k as f64;
            if (e + 1.0).abs() <= CASE_TOLERANCE {
                u[k] = 0.25 * ints.b[k];
                v[k] = j[k];
            } else {
                u[k] = 0.25 * ints.b[k] + j[k] / (e + 1.0);
            }
        }
        let k_const = w[0] * ints.tail_const[0] + w[1] * ints.tail_const[1] + w[2] * ints.tail_const[2];
        TailNumerator {
            k_const,
            p: 2.0 + 2.0 * mu - nf,
            u,
            v,
        }
    }

    fn tabulate(&mut self) -> Result<()> {
        let r = table_grid(self.profile().breakpoints());
        let mut beta = Vec::with_capacity(r.len());
        let mut gamma = Vec::with_capacity(r.len());
        for &x in &r {
            let c = self.eval(x)?;
            beta.push(c.beta);
            gamma.push(c.gamma);
        }
        let sup_b = beta.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let sup_g = gamma.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if !(sup_b <= self.options.ceiling && sup_g <= self.options.ceiling) {
            return Err(Error::UnboundedCoefficient {
                sup_beta: sup_b,
                sup_gamma: sup_g,
                ceiling: self.options.ceiling,
            });
        }
        self.table = Some(CoefficientTable {
            beta_interp: MonotoneCubic::new(r.clone(), beta.clone()),
            gamma_interp: MonotoneCubic::new(r.clone(), gamma.clone()),
            r,
            beta,
            gamma,
        });
        Ok(())
    }

    pub fn profile(&self) -> &RadialProfile {
        &self.integrals.profile
    }

    pub fn integrals(&self) -> &ProfileIntegrals {
        &self.integrals
    }

    pub fn n(&self) -> usize {
        self.profile().n()
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn case_id(&self) -> CaseId {
        self.case_id
    }

    pub fn options(&self) -> FieldOptions {
        self.options
    }

    pub fn table(&self) -> &CoefficientTable {
        self.table.as_ref().expect("field is tabulated on assembly")
    }

    /// Limits as r → 0⁺: β(0⁺) = α/n and the matching γ.
    pub fn origin_limits(&self) -> (f64, f64) {
        let nf = self.n() as f64;
        let b0 = self.alpha / nf;
        let g0 = (-self.alpha * nf + (nf - 2.0) * b0) / (nf - 1.0) + self.options.gamma_shift;
        (b0, g0)
    }

    /// β and β′ by the integrated formula.
    pub fn beta_and_prime(&self, r: f64) -> Result<(f64, f64)> {
        let n = self.n();
        let nf = n as f64;
        let mu = self.profile().mu();
        let alpha = self.alpha;
        if r <= 0.0 {
            return Ok((alpha / nf, 0.0));
        }
        if self.profile().variant() == Variant::Piecewise && r < BRIDGE_START {
            let c2 = (mu + 1.0) / (2.0 * (nf + 2.0));
            return Ok((alpha / nf + c2 * r * r, 2.0 * c2 * r));
        }
        let tail: &TailSeries = self.profile().tail();
        if r >= tail.r_start {
            let (q, q1, q2) = tail.q(r);
            let (num, num1) = self.numerator.eval(r);
            let (qq, qq1) = self.q_squared(r);
            let rho1 = -mu + r * q1 / q;
            let rho1_prime = q1 / q + r * q2 / q - r * q1 * q1 / (q * q);
            let beta = num / qq - alpha * rho1;
            let beta1 = num1 / qq - num * qq1 / (qq * qq) - alpha * rho1_prime;
            return Ok((beta, beta1));
        }
        let w = Self::weights(n, mu, alpha);
        let ints = self.integrals.at(r)?;
        let p = self.profile().eval(r);
        let h = r.powi(n as i32 - 2) * p.value * p.value;
        let j = w[0] * ints[0] + w[1] * ints[1] + w[2] * ints[2];
        let phi2 = p.value * p.value;
        let j1 = w[0] * phi2 * r.powi(n as i32 - 1) + w[1] * phi2 * r.powi(n as i32 - 3) + w[2] * p.d1 * p.d1 * r.powi(n as i32 - 1);
        let rho1 = r * p.d1 / p.value;
        let rho1_prime = p.d1 / p.value + r * p.d2 / p.value - r * p.d1 * p.d1 / phi2;
        let log_dh = (nf - 2.0) / r + 2.0 * p.d1 / p.value;
        let beta = 0.25 * r * r + j / h - alpha * rho1;
        let beta1 = 0.5 * r + j1 / h - (j / h) * log_dh - alpha * rho1_prime;
        Ok((beta, beta1))
    }

    fn q_squared(&self, r: f64) -> (f64, f64) {
        let x = 1.0 / (r * r);
        let (mut s, mut s1) = (0.0, 0.0);
        let mut pow = 1.0;
        for (k, &b) in self.integrals.b.iter().enumerate() {
            s += b * pow;
            s1 += -2.0 * k as f64 * b * pow / r;
            pow *= x;
        }
        (s, s1)
    }

    pub fn beta(&self, r: f64) -> Result<f64> {
        Ok(self.beta_and_prime(r)?.0)
    }

    /// β, β′ and γ at radius `r`.
    pub fn eval(&self, r: f64) -> Result<BetaGamma> {
        if r <= 0.0 {
            let (b0, g0) = self.origin_limits();
            return Ok(BetaGamma {
                beta: b0,
                beta_prime: 0.0,
                gamma: g0,
            });
        }
        let (beta, beta1) = self.beta_and_prime(r)?;
        Ok(BetaGamma {
            beta,
            beta_prime: beta1,
            gamma: self.gamma_from(r, beta, beta1),
        })
    }

    /// γ from the second reduced equation given β, β′ at `r`.
    pub fn gamma_from(&self, r: f64, beta: f64, beta_prime: f64) -> f64 {
        let nf = self.n() as f64;
        let p = self.profile().eval(r);
        let rho1 = r * p.d1 / p.value;
        let rho2 = r * r * p.d2 / p.value;
        let a = self.alpha;
        (-a * ((nf - 2.0) + 2.0 * rho1) + (nf - 1.0) * beta * rho1 + r * beta_prime * rho1 + beta * rho2 - beta) / (nf - 1.0)
            + self.options.gamma_shift
    }

    pub fn gamma(&self, r: f64) -> Result<f64> {
        Ok(self.eval(r)?.gamma)
    }

    /// A(x) q without forming the matrix.
    pub fn apply(&self, x: &[f64], q: &[Complex64]) -> Result<Vec<Complex64>> {
        let (nu, beta, gamma) = self.frame(x)?;
        let nq: Complex64 = nu.iter().zip(q).map(|(a, b)| b * a).sum();
        Ok(q
            .iter()
            .zip(&nu)
            .map(|(qk, nk)| {
                let radial = nq * nk;
                let tangential = qk - radial;
                qk * (self.alpha * self.options.alpha_scale) + Complex64::i() * (radial * beta + tangential * gamma)
            })
            .collect())
    }

    fn frame(&self, x: &[f64]) -> Result<(Vec<f64>, f64, f64)> {
        assert_eq!(x.len(), self.n(), "point dimension mismatch");
        let r = x.iter().map(|v| v * v).sum::<f64>().sqrt();
        if r == 0.0 {
            // Radial limit along the first axis; A is discontinuous at the origin.
            let mut nu = vec![0.0; self.n()];
            nu[0] = 1.0;
            let (b, g) = self.origin_limits();
            return Ok((nu, b, g));
        }
        let nu: Vec<f64> = x.iter().map(|v| v / r).collect();
        let c = self.eval(r)?;
        Ok((nu, c.beta, c.gamma))
    }

    /// The n×n complex coefficient matrix at `x`.
    pub fn matrix(&self, x: &[f64]) -> Result<DMatrix<Complex64>> {
        let (nu, beta, gamma) = self.frame(x)?;
        Ok(self.matrix_from(&nu, beta, gamma))
    }

    /// Radial limit of A at the origin along the unit vector `dir`.
    pub fn matrix_at_origin_along(&self, dir: &[f64]) -> DMatrix<Complex64> {
        let norm = dir.iter().map(|v| v * v).sum::<f64>().sqrt();
        let nu: Vec<f64> = dir.iter().map(|v| v / norm).collect();
        let (b, g) = self.origin_limits();
        self.matrix_from(&nu, b, g)
    }

    fn matrix_from(&self, nu: &[f64], beta: f64, gamma: f64) -> DMatrix<Complex64> {
        let n = self.n();
        DMatrix::from_fn(n, n, |k, l| {
            let id = if k == l { 1.0 } else { 0.0 };
            let nn = nu[k] * nu[l];
            Complex64::new(self.alpha * self.options.alpha_scale * id, beta * nn + gamma * (id - nn))
        })
    }

    /// Real 2n×2n block form `[[Re A, −Im A], [Im A, Re A]]` acting on
    /// stacked (Re q, Im q).
    pub fn to_real_system(&self, x: &[f64]) -> Result<DMatrix<f64>> {
        Ok(real_block(&self.matrix(x)?))
    }

    /// Closed-form ellipticity constants: λ = α and
    /// Λ = (α² + sup max(β², γ²))^{1/2} over the table.
    pub fn predicted_constants(&self) -> (f64, f64) {
        let t = self.table();
        let s = t.sup_beta().max(t.sup_gamma());
        (self.alpha, (self.alpha * self.alpha + s * s).sqrt())
    }

    /// Least-squares slope of β against `ln r` at `samples` log-spaced radii
    /// in `[r_lo, r_hi]`; logarithmic growth of β shows up as a nonzero slope.
    pub fn beta_log_slope(&self, r_lo: f64, r_hi: f64, samples: usize) -> Result<f64> {
        Ok(self.beta_log_fit(r_lo, r_hi, samples)?.slope)
    }

    /// Both the plain slope of β against `ln r` and the `ln r` coefficient of
    /// a fit of the asymptotic form `a + b ln r + (c + d ln r) r^{−2}`.
    pub fn beta_log_fit(&self, r_lo: f64, r_hi: f64, samples: usize) -> Result<LogSlopeFit> {
        let x: Vec<f64> = (0..samples)
            .map(|i| r_lo.ln() + (r_hi / r_lo).ln() * i as f64 / (samples - 1) as f64)
            .collect();
        let y = x.iter().map(|l| self.beta(l.exp())).collect::<Result<Vec<_>>>()?;
        let slope = crate::spiral::slope(&x, &y);
        let q = r_lo * r_lo;
        let design = DMatrix::from_fn(samples, 4, |i, j| {
            let (l, w) = (x[i], q * (-2.0 * x[i]).exp());
            [1.0, l, w, w * l][j]
        });
        let rhs = DVector::from_column_slice(&y);
        let coef = design
            .svd(true, true)
            .solve(&rhs, 1e-14)
            .map_err(|e| Error::DegenerateFit(e.to_string()))?;
        Ok(LogSlopeFit {
            slope,
            log_coefficient: coef[1],
            r_range: (r_lo, r_hi),
        })
    }

    pub fn audit_ellipticity(&self, samples: usize, seed: u64) -> Result<EllipticityReport> {
        let n = self.n();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (mut min_q, mut max_op) = (f64::INFINITY, 0.0f64);
        let (ln_lo, ln_hi) = (TABLE_MIN.ln(), TABLE_MAX.ln());
        for _ in 0..samples {
            let r = rng.gen_range(ln_lo..ln_hi).exp();
            let dir = random_unit(&mut rng, n);
            let x: Vec<f64> = dir.iter().map(|v| v * r).collect();
            let p: Vec<Complex64> = (0..n)
                .map(|_| Complex64::new(rng.sample(StandardNormal), rng.sample(StandardNormal)))
                .collect();
            let p2: f64 = p.iter().map(|z| z.norm_sqr()).sum();
            let ap = self.apply(&x, &p)?;
            let quad = re_quadform(&self.matrix(&x)?, &p);
            min_q = min_q.min(quad / p2);
            let ap2: f64 = ap.iter().map(|z| z.norm_sqr()).sum();
            max_op = max_op.max((ap2 / p2).sqrt());
        }
        if !(min_q > 0.0) {
            return Err(Error::EllipticityViolated { min: min_q });
        }
        let (lp, bp) = self.predicted_constants();
        Ok(EllipticityReport {
            lambda: min_q,
            big_lambda: max_op,
            min_re_quadform: min_q,
            max_opnorm: max_op,
            lambda_predicted: lp,
            big_lambda_predicted: bp,
            samples,
            seed,
        })
    }

    pub fn metadata(&self) -> FieldMetadata {
        let p = self.profile();
        FieldMetadata {
            n: p.n(),
            mu: p.mu(),
            c_mu: p.c_mu(),
            alpha: self.alpha,
            case_id: self.case_id,
            variant: p.variant(),
            bridge: p.bridge().cloned(),
            gamma_shift: self.options.gamma_shift,
            interpolation: "monotone_cubic".to_string(),
        }
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "r,beta,gamma")?;
        let t = self.table();
        for i in 0..t.r.len() {
            writeln!(out, "{:e},{:e},{:e}", t.r[i], t.beta[i], t.gamma[i])?;
        }
        Ok(())
    }

    pub fn to_json(&self) -> serde_json::Value {
        let t = self.table();
        serde_json::json!({
            "metadata": self.metadata(),
            "r": t.r,
            "beta": t.beta,
            "gamma": t.gamma,
        })
    }
}

pub fn real_block(a: &DMatrix<Complex64>) -> DMatrix<f64> {
    let n = a.nrows();
    DMatrix::from_fn(2 * n, 2 * n, |i, j| {
        let z = a[(i % n, j % n)];
        match (i < n, j < n) {
            (true, true) | (false, false) => z.re,
            (true, false) => -z.im,
            (false, true) => z.im,
        }
    })
}

pub(crate) fn random_unit<R: Rng>(rng: &mut R, n: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
        let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        if norm > 1e-8 {
            return v.into_iter().map(|a| a / norm).collect();
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogSlopeFit {
    pub slope: f64,
    pub log_coefficient: f64,
    pub r_range: (f64, f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldMetadata {
    pub n: usize,
    pub mu: f64,
    pub c_mu: f64,
    pub alpha: f64,
    pub case_id: CaseId,
    pub variant: Variant,
    pub bridge: Option<Bridge>,
    pub gamma_shift: f64,
    pub interpolation: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EllipticityReport {
    pub lambda: f64,
    pub big_lambda: f64,
    pub min_re_quadform: f64,
    pub max_opnorm: f64,
    pub lambda_predicted: f64,
    pub big_lambda_predicted: f64,
    pub samples: usize,
    pub seed: u64,
}

/// Optional user overrides of the selected constants.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Overrides {
    pub c_mu: Option<f64>,
    pub alpha: Option<f64>,
}

/// A selected and assembled construction.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Construction {
    pub selection: Selection,
    pub field: CoefficientField,
}

pub fn construct(n: usize, mu: f64, variant: Variant, overrides: Overrides, options: FieldOptions) -> Result<Construction> {
    let mut selection = select_constants(n, mu, variant)?;
    if overrides.c_mu.is_some() || overrides.alpha.is_some() {
        selection.c_mu = overrides.c_mu.unwrap_or(selection.c_mu);
        selection.alpha = overrides.alpha.unwrap_or(selection.alpha);
        let p = RadialProfile::build(ProfileParams::new(n, mu, selection.c_mu, variant))?;
        selection.constants = compute_case_constants(&p)?;
    }
    let profile = RadialProfile::build(ProfileParams::new(n, mu, selection.c_mu, variant))?;
    let field = CoefficientField::assemble_with(profile, selection.alpha, options)?;
    Ok(Construction { selection, field })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn field(n: usize, mu: f64) -> CoefficientField {
        construct(n, mu, Variant::Piecewise, Overrides::default(), FieldOptions::default())
            .unwrap()
            .field
    }

    #[test]
    fn critical_case_cancels_log_growth() {
        for n in [3usize, 5] {
            let mu = 0.5 * (n as f64 - 2.0);
            let c = construct(n, mu, Variant::Piecewise, Overrides::default(), FieldOptions::default()).unwrap();
            let c_mu = c.selection.c_mu;
            assert_relative_eq!(c_mu, n as f64 + 0.25 * (n as f64 - 2.0).powi(2), max_relative = 1e-15);
            assert!(c.field.beta_log_fit(1e2, 1e6, 41).unwrap().log_coefficient.abs() <= 1e-5);
            // The ln r coefficient of β is −(C_μ − (n + μ²)α).
            for f in [0.9, 1.1] {
                let bumped = Overrides {
                    c_mu: Some(f * c_mu),
                    alpha: None,
                };
                let p = construct(n, mu, Variant::Piecewise, bumped, FieldOptions::default()).unwrap();
                let fit = p.field.beta_log_fit(1e2, 1e6, 41).unwrap();
                assert_relative_eq!(fit.log_coefficient, -(f - 1.0) * c_mu, max_relative = 1e-4);
                assert!(fit.slope.abs() >= 1e-2);
            }
        }
    }

    #[test]
    fn classification() {
        assert_eq!(CaseId::classify(5, 0.5), CaseId::Case1);
        assert_eq!(CaseId::classify(2, 0.0), CaseId::Case3);
        assert_eq!(CaseId::classify(3, 0.5), CaseId::Case3);
        assert_eq!(CaseId::classify(2, 0.8), CaseId::Case2);
    }

    #[test]
    fn case1_selection() {
        let s = select_constants(5, 0.5, Variant::Piecewise).unwrap();
        assert_eq!((s.c_mu, s.alpha), (0.0, 1.0));
        assert_eq!(s.case_id, CaseId::Case1);
    }

    #[test]
    fn case3_selection() {
        let s = select_constants(2, 0.0, Variant::Piecewise).unwrap();
        assert_eq!((s.c_mu, s.alpha), (2.0, 1.0));
        let s = select_constants(5, 1.5, Variant::Piecewise).unwrap();
        assert_relative_eq!(s.c_mu, 5.0 + 0.25 * 9.0);
    }

    #[test]
    fn case2_selection_balances_growth() {
        let s = select_constants(2, 0.8, Variant::Piecewise).unwrap();
        let c = s.constants;
        let (d, e, f) = (c.d.unwrap(), c.e.unwrap(), c.f.unwrap());
        assert!(d >= D_MARGIN && s.alpha > 0.0 && s.c_mu > 0.0);
        let combo = -(2.0 - 1.6) / 4.0 * d + s.alpha * (2.0 * e + f);
        assert!(combo.abs() <= 1e-8, "combination {combo}");
    }

    #[test]
    fn case2_d_respects_lower_bound() {
        let (n, mu) = (3usize, 1.2);
        for c in [4.0, 16.0, 64.0] {
            let p = RadialProfile::build(ProfileParams::new(n, mu, c, Variant::Piecewise)).unwrap();
            let d = compute_case_constants(&p).unwrap().d.unwrap();
            let nf = n as f64;
            let bound = -1.0 / (nf - 2.0 * mu) + 2.0 * c / (2.0 * mu - nf + 2.0);
            assert!(d >= bound, "D = {d} < {bound}");
        }
    }

    #[test]
    fn pure_power_tail_contributes_nothing_to_d() {
        // C = 0: φ² − s^{−2μ} ≡ 0 on (1, ∞), so D is the finite core part.
        let p = RadialProfile::build(ProfileParams::new(3, 0.2, 0.0, Variant::Piecewise)).unwrap();
        let ints = ProfileIntegrals::new(p).unwrap();
        let c = ints.case_constants();
        let inner = ints.at(1.0).unwrap()[0] - 1.0 / (3.0 - 0.4);
        assert_relative_eq!(c.d.unwrap(), inner, max_relative = 1e-13);
        assert!(c.e.is_none() && c.f.is_none());
    }

    #[test]
    fn divergent_constants_are_flagged() {
        let p = RadialProfile::build(ProfileParams::new(3, 0.5, 3.25, Variant::Piecewise)).unwrap();
        let c = compute_case_constants(&p).unwrap();
        assert!(c.d.is_none() && c.e.is_none() && c.f.is_none());
        assert!(matches!(c.require_d(), Err(Error::DivergentIntegral { .. })));
        // μ = 0 kills the leading φ′² term, so F converges.
        let p = RadialProfile::build(ProfileParams::new(2, 0.0, 2.0, Variant::Piecewise)).unwrap();
        assert!(compute_case_constants(&p).unwrap().f.is_some());
    }

    #[test]
    fn beta_in_core_region() {
        let f = field(3, 0.4);
        let (n, mu, a) = (3.0, 0.4, f.alpha());
        for &r in &[1e-6, 0.1, 0.5, 0.74] {
            assert_relative_eq!(f.beta(r).unwrap(), a / n + (mu + 1.0) * r * r / (2.0 * (n + 2.0)), max_relative = 1e-12);
        }
        assert_relative_eq!(f.beta(1e-9).unwrap(), a / n, max_relative = 1e-12);
    }

    #[test]
    fn gamma_at_origin_two_dimensions() {
        let p = RadialProfile::build(ProfileParams::new(2, 0.0, 2.0, Variant::Piecewise)).unwrap();
        let f = CoefficientField::assemble(p, 1.0).unwrap();
        assert_relative_eq!(f.gamma(1e-9).unwrap(), -2.0, max_relative = 1e-9);
        assert_relative_eq!(f.origin_limits().1, -2.0);
    }

    #[test]
    fn case2_tail_is_bounded() {
        let f = field(2, 0.9);
        let b2 = f.beta(1e2).unwrap();
        let b3 = f.beta(1e3).unwrap();
        assert!((b3 - b2).abs() <= 0.1 * b2.abs(), "beta(1e2) = {b2}, beta(1e3) = {b3}");
    }

    #[test]
    fn case1_gamma_tail_form() {
        // γ = c₁ + c₂ r^{2−n+2μ}: the variation over [10, 1e3] is the r^{-2}
        // part evaluated at 10 (the r = 1e3 part is 1e-4 of it).
        let f = field(5, 0.5);
        let g10 = f.gamma(10.0).unwrap();
        let g100 = f.gamma(100.0).unwrap();
        let g1000 = f.gamma(1000.0).unwrap();
        let ratio = (g10 - g1000) / (g100 - g1000);
        assert_relative_eq!(ratio, (1.0 - 1e-4) / (1e-2 - 1e-4), max_relative = 1e-6);
    }

    #[test]
    fn beta_prime_matches_finite_differences() {
        for (n, mu) in [(2, 0.9), (3, 0.5), (5, 0.5), (3, 1.4)] {
            let f = field(n, mu);
            for &r in &[0.3, 0.8, 0.93, 1.7, 12.0, 450.0] {
                let h = 1e-4 * r;
                let fd = (-f.beta(r + 2.0 * h).unwrap() + 8.0 * f.beta(r + h).unwrap() - 8.0 * f.beta(r - h).unwrap()
                    + f.beta(r - 2.0 * h).unwrap())
                    / (12.0 * h);
                let (_, bp) = f.beta_and_prime(r).unwrap();
                assert!((fd - bp).abs() <= 1e-7 * (1.0 + bp.abs()), "n={n} mu={mu} r={r}: {fd} vs {bp}");
            }
        }
    }

    #[test]
    fn tail_and_quadrature_routes_agree_for_analytic_variant() {
        let c = construct(2, 0.9, Variant::Analytic, Overrides::default(), FieldOptions::default()).unwrap();
        let f = &c.field;
        let below = f.beta_and_prime(2.0 - 1e-12).unwrap();
        let above = f.beta_and_prime(2.0).unwrap();
        assert_relative_eq!(below.0, above.0, max_relative = 1e-10);
        assert_relative_eq!(below.1, above.1, max_relative = 1e-8, epsilon = 1e-10);
    }

    #[test]
    fn diagonal_on_axis() {
        let f = field(2, 0.9);
        let a = f.matrix(&[1.0, 0.0]).unwrap();
        let c = f.eval(1.0).unwrap();
        assert_eq!(a[(0, 0)], Complex64::new(f.alpha(), c.beta));
        assert_eq!(a[(1, 1)], Complex64::new(f.alpha(), c.gamma));
        assert_eq!(a[(0, 1)], Complex64::new(0.0, 0.0));
    }

    #[test]
    fn origin_limit_along_rays() {
        let f = field(3, 1.2);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..20 {
            let d = random_unit(&mut rng, 3);
            let near: Vec<f64> = d.iter().map(|v| v * 1e-8).collect();
            let a = f.matrix(&near).unwrap();
            let lim = f.matrix_at_origin_along(&d);
            assert!((a - lim).norm() < 1e-9);
        }
    }

    #[test]
    fn imaginary_part_symmetric() {
        let f = field(3, 1.2);
        let a = f.matrix(&[0.3, -1.1, 2.0]).unwrap();
        for k in 0..3 {
            assert_eq!(a[(k, k)].re, f.alpha());
            for l in 0..3 {
                assert_eq!(a[(k, l)].im, a[(l, k)].im);
                if k != l {
                    assert_eq!(a[(k, l)].re, 0.0);
                }
            }
        }
    }

    #[test]
    fn real_system_blocks() {
        let f = field(2, 0.9);
        let x = [0.4, 0.7];
        let b = f.to_real_system(&x).unwrap();
        let a = f.matrix(&x).unwrap();
        for k in 0..2 {
            for l in 0..2 {
                assert_eq!(b[(k, l)], a[(k, l)].re);
                assert_eq!(b[(k + 2, l + 2)], a[(k, l)].re);
                assert_eq!(b[(k, l + 2)], -a[(k, l)].im);
                assert_eq!(b[(k + 2, l)], a[(k, l)].im);
            }
        }
    }

    #[test]
    fn pure_real_field_gives_block_diagonal() {
        let a = DMatrix::from_fn(3, 3, |i, j| Complex64::new(if i == j { 2.0 } else { 0.0 }, 0.0));
        let b = real_block(&a);
        assert_eq!(b, DMatrix::from_fn(6, 6, |i, j| if i == j { 2.0 } else { 0.0 }));
    }

    #[test]
    fn ellipticity_norm_on_axis() {
        // A = diag(1 + 3i, 1 + i), p = e₁: |Ap| = √10.
        let a = DMatrix::from_row_slice(2, 2, &[Complex64::new(1.0, 3.0), Complex64::new(0.0, 0.0), Complex64::new(0.0, 0.0), Complex64::new(1.0, 1.0)]);
        let p = nalgebra::DVector::from_vec(vec![Complex64::new(1.0, 0.0), Complex64::new(0.0, 0.0)]);
        assert_relative_eq!((a * p).norm(), 10f64.sqrt(), max_relative = 1e-15);
    }

    #[test]
    fn coercivity_is_exactly_alpha() {
        let f = field(3, 1.4);
        let rep = f.audit_ellipticity(2000, 0).unwrap();
        assert!((rep.min_re_quadform - f.alpha()).abs() <= 1e-13 * rep.big_lambda_predicted);
        assert!(rep.max_opnorm <= rep.big_lambda_predicted * (1.0 + 1e-12));
    }

    #[test]
    fn unbounded_override_is_rejected() {
        // Case 2 with α far from the balancing value: β grows like r^{2μ−n+2}.
        let r = construct(2, 0.9, Variant::Piecewise, Overrides { c_mu: None, alpha: Some(1.0) }, FieldOptions::default());
        assert!(matches!(r, Err(Error::UnboundedCoefficient { .. })));
    }

    #[test]
    fn csv_export_has_header_and_rows() {
        let f = field(5, 0.5);
        let mut buf = Vec::new();
        f.write_csv(&mut buf).unwrap();
        let s = String::from_utf8(buf).unwrap();
        assert!(s.starts_with("r,beta,gamma\n"));
        assert_eq!(s.lines().count(), f.table().r.len() + 1);
    }
}
