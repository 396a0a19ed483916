//! The exact self-similar space-time solution and an implicit radial solver
//! that evolves `u = ψ(r,t) g(ν)` from `t = −1` toward the blowup at `t = 0`.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::analysis::{angular_factor, expected_blowup_exponent, fit_exponent, Angular, ExponentFit, GradientAngular};
use crate::error::{Error, Result};
use crate::profile::{BRIDGE_END, BRIDGE_START};
use crate::quadrature::{integrate_from_origin, Tolerance};
use crate::spiral::{norm, phase, SpiralField};

/// `u(x,t) = (−t)^{−μ/2} e^{−(i/2)log(−t)} w(x/√−t)`.
#[derive(Debug, Clone)]
pub struct SelfSimilarSolution {
    sf: SpiralField,
}

impl SelfSimilarSolution {
    pub fn new(sf: SpiralField) -> Self {
        SelfSimilarSolution { sf }
    }

    pub fn spiral(&self) -> &SpiralField {
        &self.sf
    }

    pub fn mu(&self) -> f64 {
        self.sf.mu()
    }

    pub fn n(&self) -> usize {
        self.sf.n()
    }

    pub fn u(&self, x: &[f64], t: f64) -> Result<Complex64> {
        check_time(t)?;
        let s = -t;
        let y: Vec<f64> = x.iter().map(|v| v / s.sqrt()).collect();
        Ok(Complex64::from_polar(s.powf(-0.5 * self.mu()), -0.5 * s.ln()) * self.sf.eval_w(&y))
    }

    /// Radial factor `ψ(r,t) = (−t)^{−μ/2} φ(r/√−t) e^{−i log r}`.
    pub fn psi(&self, r: f64, t: f64) -> Complex64 {
        if r == 0.0 {
            return Complex64::new(0.0, 0.0);
        }
        let s = -t;
        phase(r) * (s.powf(-0.5 * self.mu()) * self.sf.profile().phi(r / s.sqrt()))
    }

    pub fn psi_r(&self, r: f64, t: f64) -> Complex64 {
        let s = -t;
        let p = self.sf.profile().eval(r / s.sqrt());
        phase(r) * s.powf(-0.5 * self.mu()) * Complex64::new(p.d1 / s.sqrt(), -p.value / r)
    }

    pub fn psi_t(&self, r: f64, t: f64) -> Complex64 {
        let s = -t;
        let rho = r / s.sqrt();
        let p = self.sf.profile().eval(rho);
        phase(r) * (0.5 * s.powf(-0.5 * self.mu() - 1.0) * (self.mu() * p.value + rho * p.d1))
    }

    /// Radii where ψ(·,t) has jumps in its third derivative.
    pub fn breaks(&self, t: f64) -> [f64; 2] {
        let s = (-t).sqrt();
        [BRIDGE_START * s, BRIDGE_END * s]
    }
}

fn check_time(t: f64) -> Result<()> {
    if !(t < 0.0) {
        return Err(Error::InvalidParams(format!("time t = {t} must be negative")));
    }
    Ok(())
}

/// Nodes `0 = r₀ < … < r_J = R_max` with cell faces and volumes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RadialGrid {
    pub r: Vec<f64>,
    /// Face `j` lies between nodes `j` and `j+1`.
    pub faces: Vec<f64>,
    /// `|S^{n−1}|`-free cell volumes; the last cell is a half cell.
    pub volumes: Vec<f64>,
}

impl RadialGrid {
    /// `r_j = c·sinh(k j/J)` with `k = asinh(R_max/c)`: uniform below `c`,
    /// logarithmic above.
    pub fn sinh(n: usize, r_max: f64, intervals: usize, scale: f64) -> Result<Self> {
        if intervals < 4 || !(r_max > 0.0) || !(scale > 0.0) {
            return Err(Error::InvalidParams(format!(
                "grid needs >= 4 intervals and positive R_max, scale (got {intervals}, {r_max}, {scale})"
            )));
        }
        let k = (r_max / scale).asinh();
        let mut r: Vec<f64> = (0..=intervals).map(|j| scale * (k * j as f64 / intervals as f64).sinh()).collect();
        r[intervals] = r_max;
        let faces: Vec<f64> = r.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect();
        let nf = n as i32;
        let vol = |a: f64, b: f64| (b.powi(nf) - a.powi(nf)) / n as f64;
        let mut volumes = vec![0.0; intervals + 1];
        for j in 1..intervals {
            volumes[j] = vol(faces[j - 1], faces[j]);
        }
        volumes[intervals] = vol(faces[intervals - 1], r_max);
        Ok(RadialGrid { r, faces, volumes })
    }

    pub fn intervals(&self) -> usize {
        self.r.len() - 1
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum BoundaryMode {
    /// Outer value from the exact solution.
    ExactDirichlet,
    /// Zero flux at `R_max`.
    Decay,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvolutionConfig {
    pub r_max: f64,
    pub points: usize,
    pub t_min: f64,
    pub steps_per_decade: usize,
    pub theta: f64,
    pub boundary: BoundaryMode,
    pub grid_scale: f64,
    /// Bound on the weighted consistency residual at `t = −1`.
    pub consistency_tol: f64,
    /// Disable the switch to `θ = 1` on detected ringing.
    pub allow_fallback: bool,
}

impl Default for EvolutionConfig {
    fn default() -> Self {
        EvolutionConfig {
            r_max: 8.0,
            points: 4000,
            t_min: -1e-3,
            steps_per_decade: 40,
            theta: 0.5,
            boundary: BoundaryMode::ExactDirichlet,
            grid_scale: 1e-3,
            consistency_tol: 0.1,
            allow_fallback: true,
        }
    }
}

impl EvolutionConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.t_min < 0.0 && self.t_min > -1.0) {
            return Err(Error::Usage(format!("t_min = {} must lie in (-1, 0)", self.t_min)));
        }
        if self.steps_per_decade == 0 {
            return Err(Error::Usage("steps per decade must be positive".into()));
        }
        if self.theta != 0.5 && self.theta != 1.0 {
            return Err(Error::Usage(format!("theta = {} must be 0.5 or 1", self.theta)));
        }
        if self.points < 4 {
            return Err(Error::Usage(format!("points = {} must be >= 4", self.points)));
        }
        if !(self.r_max > 1.0) || !(self.grid_scale > 0.0) || !(self.consistency_tol > 0.0) {
            return Err(Error::Usage("R_max must exceed 1; grid scale and tolerance must be positive".into()));
        }
        Ok(())
    }

    /// `t_k = −10^{−k/steps}` down to `t_min`, whose last step is clipped.
    pub fn time_grid(&self) -> Vec<f64> {
        let decades = -(-self.t_min).log10();
        let steps = (decades * self.steps_per_decade as f64 - 1e-9).ceil() as usize;
        let mut t: Vec<f64> = (0..=steps).map(|k| -(10f64.powf(-(k as f64) / self.steps_per_decade as f64))).collect();
        t[steps] = self.t_min;
        t
    }
}

/// Nodes required in `√−t·[3/4, 1]` at the first and last time level.
pub const MIN_TRANSITION_NODES: usize = 8;

/// `ψ(r_j, t)` on a radial grid.
#[derive(Debug, Clone, PartialEq)]
pub struct ReducedState {
    pub t: f64,
    pub psi: Vec<Complex64>,
}

/// Tridiagonal rows of the discrete operator; row 0 is unused.
#[derive(Debug, Clone)]
struct Bands {
    lower: Vec<Complex64>,
    diag: Vec<Complex64>,
    upper: Vec<Complex64>,
}

/// Discretization of `L_t ψ = (r^{n−1}(α+iβ̃)ψ′)′/r^{n−1} − λ_g(α+iγ̃)ψ/r²` with
/// `β̃(r) = β(r/√−t)`, `γ̃(r) = γ(r/√−t)`.
#[derive(Debug, Clone)]
pub struct ReducedSolver {
    sol: SelfSimilarSolution,
    grid: RadialGrid,
    config: EvolutionConfig,
}

fn thomas(lower: &[Complex64], diag: &[Complex64], upper: &[Complex64], rhs: &mut [Complex64], offset: usize) -> Result<()> {
    let m = rhs.len();
    let mut c = vec![Complex64::new(0.0, 0.0); m];
    let mut b = diag[0];
    for i in 0..m {
        if i > 0 {
            b = diag[i] - lower[i] * c[i - 1];
        }
        if !(b.norm() > 1e-300) || !b.re.is_finite() || !b.im.is_finite() {
            return Err(Error::SolverSingular { row: i + offset });
        }
        if i > 0 {
            rhs[i] = (rhs[i] - lower[i] * rhs[i - 1]) / b;
        } else {
            rhs[i] /= b;
        }
        c[i] = upper[i] / b;
    }
    for i in (0..m.saturating_sub(1)).rev() {
        let next = rhs[i + 1];
        rhs[i] -= c[i] * next;
    }
    Ok(())
}

impl ReducedSolver {
    pub fn new(sol: SelfSimilarSolution, config: EvolutionConfig) -> Result<Self> {
        config.validate()?;
        let grid = RadialGrid::sinh(sol.n(), config.r_max, config.points, config.grid_scale)?;
        Ok(ReducedSolver { sol, grid, config })
    }

    pub fn grid(&self) -> &RadialGrid {
        &self.grid
    }

    pub fn config(&self) -> &EvolutionConfig {
        &self.config
    }

    pub fn solution(&self) -> &SelfSimilarSolution {
        &self.sol
    }

    fn bands(&self, t: f64) -> Result<Bands> {
        check_time(t)?;
        let field = self.sol.spiral().field();
        let alpha = field.alpha() * field.options().alpha_scale;
        let lambda = self.sol.spiral().lambda_g();
        let n = self.sol.n() as i32;
        let s = (-t).sqrt();
        let g = &self.grid;
        let jj = g.intervals();
        let flux = g
            .faces
            .iter()
            .enumerate()
            .map(|(j, &f)| {
                let beta = field.beta(f / s)?;
                Ok(Complex64::new(alpha, beta) * (f.powi(n - 1) / (g.r[j + 1] - g.r[j])))
            })
            .collect::<Result<Vec<_>>>()?;
        let zero = Complex64::new(0.0, 0.0);
        let mut bands = Bands {
            lower: vec![zero; jj + 1],
            diag: vec![zero; jj + 1],
            upper: vec![zero; jj + 1],
        };
        for j in 1..=jj {
            let v = g.volumes[j];
            let lo = flux[j - 1] / v;
            let up = if j < jj { flux[j] / v } else { zero };
            let gamma = field.gamma(g.r[j] / s)?;
            bands.lower[j] = lo;
            bands.upper[j] = up;
            bands.diag[j] = -lo - up - Complex64::new(alpha, gamma) * (lambda / (g.r[j] * g.r[j]));
        }
        Ok(bands)
    }

    fn apply_bands(&self, b: &Bands, psi: &[Complex64]) -> Vec<Complex64> {
        let jj = self.grid.intervals();
        let last = match self.config.boundary {
            BoundaryMode::ExactDirichlet => jj - 1,
            BoundaryMode::Decay => jj,
        };
        let mut out = vec![Complex64::new(0.0, 0.0); jj + 1];
        for j in 1..=last {
            let up = if j < jj { b.upper[j] * psi[j + 1] } else { Complex64::new(0.0, 0.0) };
            out[j] = b.lower[j] * psi[j - 1] + b.diag[j] * psi[j] + up;
        }
        out
    }

    /// `L_t ψ` at the interior (and, in decay mode, outer) nodes; boundary
    /// entries are zero.
    pub fn reduced_operator(&self, t: f64, psi: &[Complex64]) -> Result<Vec<Complex64>> {
        if psi.len() != self.grid.r.len() {
            return Err(Error::InvalidParams(format!("state has {} values, grid {}", psi.len(), self.grid.r.len())));
        }
        Ok(self.apply_bands(&self.bands(t)?, psi))
    }

    pub fn exact_state(&self, t: f64) -> ReducedState {
        ReducedState {
            t,
            psi: self.grid.r.iter().map(|&r| self.sol.psi(r, t)).collect(),
        }
    }

    /// Weighted truncation error of the discrete operator on the exact
    /// solution, `max_j min(r_j², −t)|(L_t ψ − ∂_tψ)_j| / (c_j max|ψ|)` with
    /// the local coefficient scale `c_j = |α+iβ̃(r_j)| + |α+iγ̃(r_j)|`, over
    /// nodes whose stencil `(r_{j−1}, r_{j+1})` contains no junction of the
    /// profile.
    pub fn consistency(&self, t: f64) -> Result<f64> {
        Ok(self.consistency_split(t)?.0)
    }

    /// `(smooth, junction)`: the weighted residual away from and at the
    /// stencils straddling a junction, where it is only first order.
    pub fn consistency_split(&self, t: f64) -> Result<(f64, f64)> {
        let exact = self.exact_state(t);
        let l = self.reduced_operator(t, &exact.psi)?;
        let scale = exact.psi.iter().map(|v| v.norm()).fold(0.0, f64::max);
        let last = match self.config.boundary {
            BoundaryMode::ExactDirichlet => self.grid.intervals() - 1,
            BoundaryMode::Decay => self.grid.intervals(),
        };
        let field = self.sol.spiral().field();
        let alpha = field.alpha() * field.options().alpha_scale;
        let s = (-t).sqrt();
        let breaks = self.sol.breaks(t);
        let g = &self.grid;
        let (mut smooth, mut junction) = (0.0f64, 0.0f64);
        for j in 1..=last {
            let r = g.r[j];
            let c = field.eval(r / s)?;
            let local = Complex64::new(alpha, c.beta).norm() + Complex64::new(alpha, c.gamma).norm();
            let d = (l[j] - self.sol.psi_t(r, t)).norm() * (r * r).min(-t) / (local * scale);
            let hi = g.r.get(j + 1).copied().unwrap_or(r);
            if breaks.iter().any(|&b| b > g.r[j - 1] && b < hi) {
                junction = junction.max(d);
            } else {
                smooth = smooth.max(d);
            }
        }
        Ok((smooth, junction))
    }

    /// One θ-step `(I − θΔt L_new)ψ_new = (I + (1−θ)Δt L_old)ψ_old`.
    pub fn step(&self, state: &ReducedState, t_new: f64, theta: f64) -> Result<ReducedState> {
        let old = self.bands(state.t)?;
        self.step_with(state, &old, &self.bands(t_new)?, t_new, theta)
    }

    fn step_with(&self, state: &ReducedState, old: &Bands, new: &Bands, t_new: f64, theta: f64) -> Result<ReducedState> {
        check_time(t_new)?;
        let dt = t_new - state.t;
        let jj = self.grid.intervals();
        let lo = self.apply_bands(old, &state.psi);
        let mut psi = vec![Complex64::new(0.0, 0.0); jj + 1];
        let last = match self.config.boundary {
            BoundaryMode::ExactDirichlet => {
                psi[jj] = self.sol.psi(self.grid.r[jj], t_new);
                jj - 1
            }
            BoundaryMode::Decay => jj,
        };
        let rows = 1..=last;
        let mut rhs: Vec<Complex64> = rows.clone().map(|j| state.psi[j] + lo[j] * ((1.0 - theta) * dt)).collect();
        if last < jj {
            rhs[last - 1] += new.upper[last] * psi[jj] * (theta * dt);
        }
        let one = Complex64::new(1.0, 0.0);
        let lower: Vec<Complex64> = rows.clone().map(|j| -new.lower[j] * (theta * dt)).collect();
        let diag: Vec<Complex64> = rows.clone().map(|j| one - new.diag[j] * (theta * dt)).collect();
        let upper: Vec<Complex64> = rows.map(|j| -new.upper[j] * (theta * dt)).collect();
        thomas(&lower, &diag, &upper, &mut rhs, 1)?;
        psi[1..=last].copy_from_slice(&rhs);
        Ok(ReducedState { t: t_new, psi })
    }

    /// Evolves exact data from `t = −1` along the configured time grid,
    /// calling `observe` at every time level. Returns the fallback time.
    pub fn evolve<F>(&self, mut observe: F) -> Result<(ReducedState, Option<f64>)>
    where
        F: FnMut(&ReducedState) -> Result<()>,
    {
        let times = self.config.time_grid();
        for t in [times[0], self.config.t_min] {
            let s = (-t).sqrt();
            let nodes = self.grid.r.iter().filter(|&&r| r >= BRIDGE_START * s && r <= BRIDGE_END * s).count();
            if nodes < MIN_TRANSITION_NODES {
                return Err(Error::GridTooCoarse {
                    measure: "nodes across the transition",
                    residual: nodes as f64,
                    tolerance: MIN_TRANSITION_NODES as f64,
                });
            }
        }
        let c = self.consistency(-1.0)?;
        if c > self.config.consistency_tol {
            return Err(Error::GridTooCoarse {
                measure: "consistency residual",
                residual: c,
                tolerance: self.config.consistency_tol,
            });
        }
        let mut state = self.exact_state(times[0]);
        observe(&state)?;
        let mut theta = self.config.theta;
        let mut fallback = None;
        let mut old = self.bands(times[0])?;
        for &t in &times[1..] {
            let new = self.bands(t)?;
            let mut next = self.step_with(&state, &old, &new, t, theta)?;
            if theta < 1.0 && self.config.allow_fallback && ringing(&state.psi, &next.psi) {
                theta = 1.0;
                fallback = Some(t);
                next = self.step_with(&state, &old, &new, t, theta)?;
            }
            state = next;
            old = new;
            observe(&state)?;
        }
        Ok((state, fallback))
    }

    /// `max|ψ_sim − ψ_exact| / max|ψ_exact|` on the grid.
    pub fn sup_relative_error(&self, state: &ReducedState) -> f64 {
        let exact = self.exact_state(state.t);
        let scale = exact.psi.iter().map(|v| v.norm()).fold(0.0, f64::max);
        state.psi.iter().zip(&exact.psi).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max) / scale
    }
}

/// Sawtooth detector on the step increment: flags a run of ≥ 4 sign
/// alternations of the second difference carrying most of its size.
fn ringing(old: &[Complex64], new: &[Complex64]) -> bool {
    let d: Vec<Complex64> = new.iter().zip(old).map(|(a, b)| a - b).collect();
    let scale = d.iter().map(|v| v.norm()).fold(0.0, f64::max);
    if scale == 0.0 {
        return false;
    }
    let mut run = 0;
    let mut prev: Option<Complex64> = None;
    for w in d.windows(3) {
        let dd = w[0] - w[1] * 2.0 + w[2];
        if dd.norm() < 0.5 * scale {
            run = 0;
            prev = None;
            continue;
        }
        run = match prev {
            Some(p) if (p.conj() * dd).re < 0.0 => run + 1,
            _ => 1,
        };
        if run >= 4 {
            return true;
        }
        prev = Some(dd);
    }
    false
}

/// One recorded time level.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub t: f64,
    pub lp_exact: f64,
    pub lp_sim: f64,
    pub grad_accum_exact: f64,
    pub grad_accum_sim: f64,
    pub sup_rel_error: f64,
    /// Weighted consistency of the discrete operator on the exact solution.
    pub consistency: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub n: usize,
    pub mu: f64,
    pub p: f64,
    pub config: EvolutionConfig,
    pub trace: Vec<TraceRow>,
    /// `(n − pμ)/(2p)` when `pμ > n`, else 0 (finite limit).
    pub expected_exponent: f64,
    /// Fits on `t ∈ [−10⁻¹, −10⁻³] ∩ [−1, t_min]`.
    pub fitted_exact: Option<ExponentFit>,
    pub fitted_sim: Option<ExponentFit>,
    /// `pμ < n`: the spatial norm has a finite limit.
    pub no_blowup: bool,
    /// Largest `|lp_sim/lp_exact − 1|` for `t ≤ −10⁻²`.
    pub norm_deviation: f64,
    pub final_sup_rel_error: f64,
    pub max_consistency: f64,
    pub fallback_time: Option<f64>,
    /// Ratios of the exact accumulated gradient norm across successive
    /// whole decades of `−t`.
    pub grad_decade_factors: Vec<f64>,
    pub grad_increasing: bool,
}

impl ExperimentReport {
    pub fn write_csv<W: std::io::Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "t,||u||_Lp_B1_exact,||u||_Lp_B1_sim,grad_norm_accum_exact,grad_norm_accum_sim")?;
        for r in &self.trace {
            writeln!(
                out,
                "{:e},{:e},{:e},{:e},{:e}",
                r.t, r.lp_exact, r.lp_sim, r.grad_accum_exact, r.grad_accum_sim
            )?;
        }
        Ok(())
    }
}

fn norm_tol() -> Tolerance {
    Tolerance::new(1e-300, 1e-10)
}

/// `∫_{B_1}|u(·,t)|^p` of the exact solution.
pub fn exact_lp_power(sol: &SelfSimilarSolution, p: f64, t: f64) -> Result<f64> {
    let n = sol.n() as i32;
    let ang = angular_factor(sol.n(), p, Angular::Linear)?;
    let radial = integrate_from_origin(|r| r.powi(n - 1) * sol.psi(r, t).norm().powf(p), 1.0, &sol.breaks(t), norm_tol())?;
    Ok(ang * radial)
}

/// `∫_{B_1}|∇u(·,t)|^p` of the exact solution.
pub fn exact_grad_power(sol: &SelfSimilarSolution, rule: &GradientAngular, t: f64) -> Result<f64> {
    let n = sol.n() as i32;
    let f = |r: f64| {
        let a = sol.psi_r(r, t).norm_sqr();
        let b = sol.psi(r, t).norm_sqr() / (r * r);
        r.powi(n - 1) * rule.eval(a, b)
    };
    integrate_from_origin(f, 1.0, &sol.breaks(t), norm_tol())
}

fn sim_lp_power(grid: &RadialGrid, psi: &[Complex64], n: usize, p: f64, ang: f64) -> f64 {
    let nf = n as i32;
    let mut sum = 0.0;
    let h = |j: usize| grid.r[j].powi(nf - 1) * psi[j].norm().powf(p);
    for j in 0..grid.intervals() {
        let (a, b) = (grid.r[j], grid.r[j + 1]);
        if a >= 1.0 {
            break;
        }
        if b <= 1.0 {
            sum += 0.5 * (b - a) * (h(j) + h(j + 1));
        } else {
            let s = (1.0 - a) / (b - a);
            let v1 = h(j) + s * (h(j + 1) - h(j));
            sum += 0.5 * (1.0 - a) * (h(j) + v1);
        }
    }
    ang * sum
}

fn sim_grad_power(grid: &RadialGrid, psi: &[Complex64], n: usize, rule: &GradientAngular) -> f64 {
    let nf = n as i32;
    let mut sum = 0.0;
    for j in 0..grid.intervals() {
        let (a, b) = (grid.r[j], grid.r[j + 1]);
        if a >= 1.0 {
            break;
        }
        let m = 0.5 * (a + b);
        let d = (psi[j + 1] - psi[j]) / (b - a);
        let v = (psi[j + 1] + psi[j]) * 0.5;
        let w = b.min(1.0) - a;
        sum += w * m.powi(nf - 1) * rule.eval(d.norm_sqr(), v.norm_sqr() / (m * m));
    }
    sum
}

fn fit_window(trace: &[TraceRow], value: impl Fn(&TraceRow) -> f64) -> Option<ExponentFit> {
    let series: Vec<(f64, f64)> = trace
        .iter()
        .filter(|r| r.t >= -0.1 * (1.0 + 1e-9) && r.t <= -1e-3 * (1.0 - 1e-9))
        .map(|r| (r.t, value(r)))
        .collect();
    fit_exponent(&series).ok()
}

/// Evolves from exact data at `t = −1` to `t_min`, recording the spatial
/// `L^p(B_1)` norm and the accumulated space-time `L^p(B_1×(−1,t))` norm
/// of `∇u` for the simulated and exact solutions.
pub fn run_blowup_experiment(sol: &SelfSimilarSolution, config: EvolutionConfig, p: f64) -> Result<ExperimentReport> {
    if !(p > 2.0) {
        return Err(Error::Usage(format!("p = {p} must exceed 2 (delta > 0)")));
    }
    let solver = ReducedSolver::new(sol.clone(), config)?;
    let n = sol.n();
    let ang = angular_factor(n, p, Angular::Linear)?;
    let rule = GradientAngular::new(n, p);
    let mut trace: Vec<TraceRow> = Vec::new();
    let (mut acc_exact, mut acc_sim) = (0.0, 0.0);
    let mut prev: Option<(f64, f64, f64)> = None;
    let (_, fallback_time) = solver.evolve(|state| {
        let t = state.t;
        let ge = exact_grad_power(sol, &rule, t)?;
        let gs = sim_grad_power(solver.grid(), &state.psi, n, &rule);
        if let Some((t0, ge0, gs0)) = prev {
            acc_exact += 0.5 * (t - t0) * (ge + ge0);
            acc_sim += 0.5 * (t - t0) * (gs + gs0);
        }
        prev = Some((t, ge, gs));
        trace.push(TraceRow {
            t,
            lp_exact: exact_lp_power(sol, p, t)?.powf(1.0 / p),
            lp_sim: sim_lp_power(solver.grid(), &state.psi, n, p, ang).powf(1.0 / p),
            grad_accum_exact: acc_exact.powf(1.0 / p),
            grad_accum_sim: acc_sim.powf(1.0 / p),
            sup_rel_error: solver.sup_relative_error(state),
            consistency: solver.consistency(t)?,
        });
        Ok(())
    })?;
    let norm_deviation = trace
        .iter()
        .filter(|r| r.t <= -1e-2 * (1.0 - 1e-9))
        .map(|r| (r.lp_sim / r.lp_exact - 1.0).abs())
        .fold(0.0, f64::max);
    let mut grad_decade_factors = Vec::new();
    let mut decade = 1;
    while let (Some(a), Some(b)) = (at_time(&trace, -(10f64.powi(-decade))), at_time(&trace, -(10f64.powi(-decade - 1)))) {
        grad_decade_factors.push(b.grad_accum_exact / a.grad_accum_exact);
        decade += 1;
    }
    let grad_increasing = trace.windows(2).all(|w| w[1].grad_accum_exact > w[0].grad_accum_exact);
    Ok(ExperimentReport {
        n,
        mu: sol.mu(),
        p,
        config,
        expected_exponent: if p * sol.mu() < n as f64 {
            0.0
        } else {
            expected_blowup_exponent(n, sol.mu(), p)
        },
        fitted_exact: fit_window(&trace, |r| r.lp_exact),
        fitted_sim: fit_window(&trace, |r| r.lp_sim),
        no_blowup: p * sol.mu() < n as f64,
        norm_deviation,
        final_sup_rel_error: trace.last().map_or(f64::NAN, |r| r.sup_rel_error),
        max_consistency: trace.iter().map(|r| r.consistency).fold(0.0, f64::max),
        fallback_time,
        grad_decade_factors,
        grad_increasing,
        trace,
    })
}

fn at_time(trace: &[TraceRow], t: f64) -> Option<&TraceRow> {
    trace.iter().find(|r| (r.t / t - 1.0).abs() < 1e-9)
}

/// Sup relative error at `t_end` for a grid and its refinement with both
/// `Δr` and `Δt` halved; returns `(coarse, fine, observed order)`.
pub fn convergence_study(sol: &SelfSimilarSolution, config: EvolutionConfig, t_end: f64) -> Result<(f64, f64, f64)> {
    let mut coarse = config;
    coarse.t_min = t_end;
    coarse.allow_fallback = false;
    let mut fine = coarse;
    fine.points *= 2;
    fine.steps_per_decade *= 2;
    let run = |c: EvolutionConfig| -> Result<f64> {
        let s = ReducedSolver::new(sol.clone(), c)?;
        let (state, _) = s.evolve(|_| Ok(()))?;
        Ok(s.sup_relative_error(&state))
    };
    let (e1, e2) = (run(coarse)?, run(fine)?);
    Ok((e1, e2, (e1 / e2).log2()))
}

/// Sup of `|u(x,t)|` along the axis of `g` over log-spaced radii in
/// `[10⁻⁸ r_max, r_max]`.
pub fn sup_modulus(sol: &SelfSimilarSolution, t: f64, r_max: f64, samples: usize) -> Result<f64> {
    let e = sol.spiral().direction().to_vec();
    let mut best = 0.0f64;
    for i in 0..=samples {
        let r = r_max * 1e-8f64.powf(1.0 - i as f64 / samples as f64);
        let x: Vec<f64> = e.iter().map(|v| v * r).collect();
        debug_assert!((norm(&x) - r).abs() < 1e-12 * r.max(1.0));
        best = best.max(sol.u(&x, t)?.norm());
    }
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coefficients::{construct, CoefficientField, FieldOptions, Overrides};
    use crate::profile::{ProfileParams, RadialProfile, Variant};
    use approx::assert_relative_eq;

    fn solution(n: usize, mu: f64) -> SelfSimilarSolution {
        SelfSimilarSolution::new(SpiralField::from_construction(
            construct(n, mu, Variant::Piecewise, Overrides::default(), FieldOptions::default()).unwrap(),
        ))
    }

    fn small_config() -> EvolutionConfig {
        EvolutionConfig {
            points: 1000,
            t_min: -0.1,
            steps_per_decade: 20,
            ..EvolutionConfig::default()
        }
    }

    #[test]
    fn u_at_minus_one_is_w() {
        let s = solution(2, 0.9);
        for x in [[0.3, 0.1], [0.9, -0.2], [2.0, 5.0]] {
            assert_eq!(s.u(&x, -1.0).unwrap(), s.spiral().eval_w(&x));
        }
        assert!(s.u(&[1.0, 0.0], 0.0).is_err());
    }

    #[test]
    fn pure_power_region_is_stationary_in_modulus() {
        let p = RadialProfile::build(ProfileParams::new(5, 0.5, 0.0, Variant::Piecewise)).unwrap();
        let s = SelfSimilarSolution::new(SpiralField::new(CoefficientField::assemble(p, 1.0).unwrap()));
        let x = [1.5, 0.0, 0.5, 0.0, 0.0];
        let a = s.u(&x, -0.25).unwrap().norm();
        let b = s.u(&x, -0.01).unwrap().norm();
        assert_relative_eq!(a, b, max_relative = 1e-13);
        assert_relative_eq!(a, norm(&x).powf(-0.5) * 1.5 / norm(&x), max_relative = 1e-13);
    }

    #[test]
    fn parabolic_scaling_invariance() {
        let s = solution(2, 0.9);
        let (x, t) = ([2.0, 1.0], -0.5);
        for lam in [0.5, 1.7, 3.0] {
            let y = [lam * x[0], lam * x[1]];
            let scaled = s.u(&y, lam * lam * t).unwrap() * Complex64::from_polar(lam.powf(0.9), lam.ln());
            assert_relative_eq!((scaled - s.u(&x, t).unwrap()).norm(), 0.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn psi_derivatives_match_differences() {
        let s = solution(3, 1.2);
        for (r, t) in [(0.2, -0.3), (0.5, -0.3), (1.7, -0.9), (0.05, -0.004)] {
            let h = 1e-6 * r;
            let dr = (s.psi(r + h, t) - s.psi(r - h, t)) / (2.0 * h);
            assert!((dr - s.psi_r(r, t)).norm() < 1e-6 * s.psi_r(r, t).norm().max(1.0), "{r} {t}");
            let k = 1e-7 * -t;
            let dt = (s.psi(r, t + k) - s.psi(r, t - k)) / (2.0 * k);
            assert!((dt - s.psi_t(r, t)).norm() < 1e-5 * s.psi_t(r, t).norm().max(1.0), "{r} {t}");
        }
    }

    #[test]
    fn u_matches_psi_times_g() {
        let s = solution(3, 0.5);
        let x = [0.3, -0.4, 0.2];
        let r = norm(&x);
        let u = s.u(&x, -0.2).unwrap();
        assert!((u - s.psi(r, -0.2) * (0.3 / r)).norm() < 1e-13);
    }

    #[test]
    fn sinh_grid() {
        let g = RadialGrid::sinh(3, 8.0, 100, 1e-3).unwrap();
        assert_eq!(g.r[0], 0.0);
        assert_eq!(g.r[100], 8.0);
        assert!(g.r.windows(2).all(|w| w[1] > w[0]));
        let total: f64 = g.volumes.iter().sum::<f64>() + (g.faces[0].powi(3)) / 3.0;
        assert_relative_eq!(total, 8f64.powi(3) / 3.0, max_relative = 1e-12);
    }

    #[test]
    fn time_grid_is_geometric() {
        let c = EvolutionConfig {
            t_min: -1e-2,
            ..EvolutionConfig::default()
        };
        let t = c.time_grid();
        assert_eq!(t.len(), 81);
        assert_eq!(t[0], -1.0);
        assert_eq!(t[80], -1e-2);
        assert_relative_eq!(t[40], -0.1, max_relative = 1e-12);
    }

    #[test]
    fn config_validation() {
        let bad = [
            EvolutionConfig {
                steps_per_decade: 0,
                ..EvolutionConfig::default()
            },
            EvolutionConfig {
                theta: 0.7,
                ..EvolutionConfig::default()
            },
            EvolutionConfig {
                t_min: 0.0,
                ..EvolutionConfig::default()
            },
        ];
        for c in bad {
            assert!(matches!(c.validate(), Err(Error::Usage(_))));
        }
    }

    #[test]
    fn flux_stencil_is_second_order_on_linear_profile() {
        // α = 1, β = γ = 0 and ψ = r, n = 2: (rψ′)′/r − ψ/r² = 0.
        let worst = |points: usize| {
            let g = RadialGrid::sinh(2, 8.0, points, 1e-3).unwrap();
            (1..g.intervals())
                .map(|j| ((g.faces[j] - g.faces[j - 1]) / g.volumes[j] - 1.0 / g.r[j]).abs() * g.r[j])
                .fold(0.0, f64::max)
        };
        let (a, b) = (worst(400), worst(800));
        assert!(a < 1e-3 && a / b > 3.5, "{a} {b}");
    }

    #[test]
    fn real_data_gains_imaginary_part_only_through_coupling() {
        let s = solution(2, 0.5);
        let solver = ReducedSolver::new(s, small_config()).unwrap();
        let psi: Vec<Complex64> = solver.grid().r.iter().map(|&r| Complex64::new(r * (-r).exp(), 0.0)).collect();
        let l = solver.reduced_operator(-1.0, &psi).unwrap();
        assert!(l.iter().any(|v| v.im.abs() > 1e-3));
    }

    #[test]
    fn zero_state_stays_zero() {
        let mut c = small_config();
        c.boundary = BoundaryMode::Decay;
        let solver = ReducedSolver::new(solution(3, 0.4), c).unwrap();
        let zero = ReducedState {
            t: -1.0,
            psi: vec![Complex64::new(0.0, 0.0); solver.grid().r.len()],
        };
        let next = solver.step(&zero, -0.9, 0.5).unwrap();
        assert!(next.psi.iter().all(|v| *v == Complex64::new(0.0, 0.0)));
    }

    #[test]
    fn consistency_is_second_order_in_space() {
        let s = solution(2, 0.9);
        let mut c = small_config();
        let mut prev = f64::NAN;
        for points in [500, 1000, 2000] {
            c.points = points;
            let e = ReducedSolver::new(s.clone(), c).unwrap().consistency(-1.0).unwrap();
            if prev.is_finite() {
                assert!(prev / e > 3.0, "{prev} -> {e}");
            }
            prev = e;
        }
    }

    #[test]
    fn coarse_grid_is_rejected() {
        let mut c = small_config();
        c.points = 20;
        let solver = ReducedSolver::new(solution(2, 0.9), c).unwrap();
        assert!(matches!(solver.evolve(|_| Ok(())), Err(Error::GridTooCoarse { .. })));
        c.points = 1000;
        c.consistency_tol = 1e-6;
        let solver = ReducedSolver::new(solution(2, 0.9), c).unwrap();
        assert!(matches!(solver.evolve(|_| Ok(())), Err(Error::GridTooCoarse { .. })));
    }

    #[test]
    fn half_steps_agree_to_third_order() {
        let sol = SelfSimilarSolution::new(SpiralField::from_construction(
            construct(2, 0.5, Variant::Analytic, Overrides::default(), FieldOptions::default()).unwrap(),
        ));
        let solver = ReducedSolver::new(sol, EvolutionConfig::default()).unwrap();
        let s0 = solver.exact_state(-0.5);
        let diff = |dt: f64| {
            let full = solver.step(&s0, -0.5 + dt, 0.5).unwrap();
            let half = solver.step(&s0, -0.5 + 0.5 * dt, 0.5).unwrap();
            let two = solver.step(&half, -0.5 + dt, 0.5).unwrap();
            solver
                .grid()
                .r
                .iter()
                .zip(full.psi.iter().zip(&two.psi))
                .filter(|(r, _)| **r > 0.01)
                .map(|(_, (a, b))| (a - b).norm())
                .fold(0.0, f64::max)
        };
        let (a, b) = (diff(1.6e-2), diff(8e-3));
        assert!(a / b > 6.0, "{a} {b}");
    }

    #[test]
    fn short_evolution_tracks_exact_solution() {
        let c = EvolutionConfig {
            t_min: -0.1,
            ..EvolutionConfig::default()
        };
        let solver = ReducedSolver::new(solution(2, 0.9), c).unwrap();
        let (state, fallback) = solver.evolve(|_| Ok(())).unwrap();
        assert!(fallback.is_none());
        assert!(solver.sup_relative_error(&state) < 0.01);
    }

    #[test]
    fn no_spurious_blowup_at_zero_mu() {
        let s = solution(2, 0.0);
        let a = sup_modulus(&s, -1e-1, 2.0, 2000).unwrap();
        let b = sup_modulus(&s, -1e-4, 2.0, 2000).unwrap();
        assert_relative_eq!(a, b, max_relative = 1e-2);
    }

    #[test]
    fn exact_norm_scaling() {
        // Substituting ρ = r/√−t.
        let s = solution(2, 0.9);
        let p = 2.5;
        let t: f64 = -1e-3;
        let scale = (-t).sqrt();
        let direct = exact_lp_power(&s, p, t).unwrap();
        let ang = angular_factor(2, p, Angular::Linear).unwrap();
        let inner = crate::quadrature::integrate_with_breaks(
            |rho: f64| rho * s.spiral().profile().phi(rho).powf(p),
            0.0,
            1.0 / scale,
            &[0.75, 1.0],
            norm_tol(),
        )
        .unwrap();
        let sub = ang * (-t).powf(1.0 - 0.5 * p * 0.9) * inner;
        assert_relative_eq!(direct, sub, max_relative = 1e-8);
    }
}
