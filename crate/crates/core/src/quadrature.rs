//! Adaptive Gauss-Kronrod (7/15) quadrature with global panel bisection.
//!
//! Integrands are vector valued (`[f64; N]`) so that several cumulative
//! integrals of the same profile can share one set of function evaluations.

use crate::error::{Error, Result};

const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];

const WGK: [f64; 8] = [
    0.022_935_322_010_529_225,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_18,
    0.140_653_259_715_525_92,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_83,
];

// Gauss weights for the nodes XGK[1], XGK[3], XGK[5] and the centre.
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

#[derive(Debug, Clone, Copy)]
pub struct Tolerance {
    pub abs: f64,
    pub rel: f64,
    pub max_panels: usize,
}

impl Default for Tolerance {
    fn default() -> Self {
        Tolerance {
            abs: 1e-13,
            rel: 1e-13,
            max_panels: 4000,
        }
    }
}

impl Tolerance {
    pub fn new(abs: f64, rel: f64) -> Self {
        Tolerance {
            abs,
            rel,
            ..Default::default()
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Estimate<const N: usize> {
    pub value: [f64; N],
    pub error: [f64; N],
    pub panels: usize,
}

#[derive(Clone, Copy)]
struct Panel<const N: usize> {
    a: f64,
    b: f64,
    value: [f64; N],
    error: [f64; N],
}

fn rescale_error(err: f64, res_abs: f64, res_asc: f64) -> f64 {
    let mut scaled = err.abs();
    if res_asc != 0.0 && scaled != 0.0 {
        let scale = (200.0 * scaled / res_asc).powf(1.5);
        scaled = if scale < 1.0 { res_asc * scale } else { res_asc };
    }
    if res_abs > f64::MIN_POSITIVE / (50.0 * f64::EPSILON) {
        let min_err = 50.0 * f64::EPSILON * res_abs;
        if min_err > scaled {
            scaled = min_err;
        }
    }
    scaled
}

/// One G7/K15 panel on `[a, b]`.
pub fn gk15<const N: usize, F>(f: &F, a: f64, b: f64) -> ([f64; N], [f64; N])
where
    F: Fn(f64) -> [f64; N],
{
    let center = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    let fc = f(center);

    let mut res_k = [0.0; N];
    let mut res_g = [0.0; N];
    let mut res_abs = [0.0; N];
    for k in 0..N {
        res_k[k] = WGK[7] * fc[k];
        res_g[k] = WG[3] * fc[k];
        res_abs[k] = (WGK[7] * fc[k]).abs();
    }

    let mut f1 = [[0.0; N]; 7];
    let mut f2 = [[0.0; N]; 7];
    for j in 0..7 {
        let dx = half * XGK[j];
        f1[j] = f(center - dx);
        f2[j] = f(center + dx);
        for k in 0..N {
            let s = f1[j][k] + f2[j][k];
            res_k[k] += WGK[j] * s;
            res_abs[k] += WGK[j] * (f1[j][k].abs() + f2[j][k].abs());
            if j % 2 == 1 {
                res_g[k] += WG[j / 2] * s;
            }
        }
    }

    let mut value = [0.0; N];
    let mut error = [0.0; N];
    for k in 0..N {
        let mean = 0.5 * res_k[k];
        let mut res_asc = WGK[7] * (fc[k] - mean).abs();
        for j in 0..7 {
            res_asc += WGK[j] * ((f1[j][k] - mean).abs() + (f2[j][k] - mean).abs());
        }
        let h = half.abs();
        value[k] = res_k[k] * half;
        error[k] = rescale_error((res_k[k] - res_g[k]) * half, res_abs[k] * h, res_asc * h);
    }
    (value, error)
}

/// Adaptive integration of a vector-valued integrand on `[a, b]`.
///
/// Panels are bisected largest-error-first until every component meets
/// `max(tol.abs, tol.rel * |I_k|)`.
pub fn integrate_vec<const N: usize, F>(f: &F, a: f64, b: f64, tol: Tolerance) -> Result<Estimate<N>>
where
    F: Fn(f64) -> [f64; N],
{
    if a == b {
        return Ok(Estimate {
            value: [0.0; N],
            error: [0.0; N],
            panels: 0,
        });
    }
    let (v, e) = gk15(f, a, b);
    let mut panels = vec![Panel {
        a,
        b,
        value: v,
        error: e,
    }];

    loop {
        let mut total = [0.0; N];
        let mut err = [0.0; N];
        for p in &panels {
            for k in 0..N {
                total[k] += p.value[k];
                err[k] += p.error[k];
            }
        }
        let bound: Vec<f64> = (0..N).map(|k| tol.abs.max(tol.rel * total[k].abs())).collect();
        if (0..N).all(|k| err[k] <= bound[k]) {
            return Ok(Estimate {
                value: total,
                error: err,
                panels: panels.len(),
            });
        }
        if panels.len() >= tol.max_panels {
            let worst = (0..N).map(|k| err[k]).fold(0.0, f64::max);
            return Err(Error::QuadratureFailure {
                a,
                b,
                panels: panels.len(),
                error: worst,
            });
        }

        let score = |p: &Panel<N>| (0..N).map(|k| p.error[k] / bound[k]).fold(0.0, f64::max);
        let (idx, _) = panels
            .iter()
            .enumerate()
            .map(|(i, p)| (i, score(p)))
            .fold((0, f64::NEG_INFINITY), |acc, x| if x.1 > acc.1 { x } else { acc });
        let p = panels.swap_remove(idx);
        let mid = 0.5 * (p.a + p.b);
        if mid <= p.a || mid >= p.b {
            // Panel cannot be split further in floating point.
            let worst = (0..N).map(|k| err[k]).fold(0.0, f64::max);
            return Err(Error::QuadratureFailure {
                a,
                b,
                panels: panels.len() + 1,
                error: worst,
            });
        }
        let (v1, e1) = gk15(f, p.a, mid);
        let (v2, e2) = gk15(f, mid, p.b);
        panels.push(Panel {
            a: p.a,
            b: mid,
            value: v1,
            error: e1,
        });
        panels.push(Panel {
            a: mid,
            b: p.b,
            value: v2,
            error: e2,
        });
    }
}

pub fn integrate<F>(f: F, a: f64, b: f64, tol: Tolerance) -> Result<f64>
where
    F: Fn(f64) -> f64,
{
    let g = |x: f64| [f(x)];
    Ok(integrate_vec(&g, a, b, tol)?.value[0])
}

/// Integrate over `[a, b]` split at the interior `breaks` (points outside
/// the interval are ignored).
pub fn integrate_with_breaks<F>(f: F, a: f64, b: f64, breaks: &[f64], tol: Tolerance) -> Result<f64>
where
    F: Fn(f64) -> f64,
{
    let mut pts = vec![a];
    pts.extend(breaks.iter().copied().filter(|&x| x > a && x < b));
    pts.push(b);
    pts.sort_by(f64::total_cmp);
    let mut sum = 0.0;
    for w in pts.windows(2) {
        sum += integrate(&f, w[0], w[1], tol)?;
    }
    Ok(sum)
}

/// Integrate over `[0, b]` using dyadic panels `[b 2^{-k-1}, b 2^{-k}]`,
/// which tolerates integrable power-type behaviour at the origin.
pub fn integrate_from_origin<F>(f: F, b: f64, breaks: &[f64], tol: Tolerance) -> Result<f64>
where
    F: Fn(f64) -> f64,
{
    let mut pts: Vec<f64> = (0..=60).map(|k| b * 0.5f64.powi(k)).collect();
    pts.extend(breaks.iter().copied().filter(|&x| x > 0.0 && x < b));
    pts.sort_by(f64::total_cmp);
    pts.dedup();
    let mut sum = 0.0;
    for w in pts.windows(2) {
        sum += integrate(&f, w[0], w[1], tol)?;
    }
    Ok(sum)
}

/// Gauss-Legendre nodes and weights on [-1, 1] (Newton iteration on P_m).
pub fn gauss_legendre(m: usize) -> (Vec<f64>, Vec<f64>) {
    let mut x = vec![0.0; m];
    let mut w = vec![0.0; m];
    for i in 0..m.div_ceil(2) {
        let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (m as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, 0.0);
            for k in 0..m {
                let p2 = p1;
                p1 = p0;
                p0 = ((2 * k + 1) as f64 * z * p1 - k as f64 * p2) / (k + 1) as f64;
            }
            dp = m as f64 * (z * p0 - p1) / (z * z - 1.0);
            let dz = p0 / dp;
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        x[i] = -z;
        x[m - 1 - i] = z;
        w[i] = 2.0 / ((1.0 - z * z) * dp * dp);
        w[m - 1 - i] = w[i];
    }
    (x, w)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn polynomials_are_exact_on_one_panel() {
        let (v, _) = gk15(&|x: f64| [x.powi(20)], 0.0, 1.0);
        assert_relative_eq!(v[0], 1.0 / 21.0, max_relative = 1e-14);
    }

    #[test]
    fn adaptive_handles_sharp_peak() {
        let f = |x: f64| 1.0 / (1e-4 + (x - 0.3).powi(2));
        let exact = ((0.7f64) / 1e-2).atan() / 1e-2 + ((0.3f64) / 1e-2).atan() / 1e-2;
        let v = integrate(f, 0.0, 1.0, Tolerance::new(1e-12, 1e-12)).unwrap();
        assert_relative_eq!(v, exact, max_relative = 1e-11);
    }

    #[test]
    fn vector_components_share_panels() {
        let f = |x: f64| [x.sin(), x.exp(), 1.0 / (1.0 + x * x)];
        let est = integrate_vec(&f, 0.0, 2.0, Tolerance::default()).unwrap();
        assert_relative_eq!(est.value[0], 1.0 - 2.0f64.cos(), max_relative = 1e-13);
        assert_relative_eq!(est.value[1], 2.0f64.exp() - 1.0, max_relative = 1e-13);
        assert_relative_eq!(est.value[2], 2.0f64.atan(), max_relative = 1e-13);
    }

    #[test]
    fn integrable_origin_singularity() {
        let v = integrate_from_origin(|r: f64| r.powf(-0.5), 1.0, &[], Tolerance::default()).unwrap();
        // 2^{-60} tail missing: 2 * sqrt(2^-60) ~ 2e-9
        assert!((v - 2.0).abs() < 3e-9);
    }

    #[test]
    fn gauss_legendre_rule() {
        let (x, w) = gauss_legendre(20);
        assert_relative_eq!(w.iter().sum::<f64>(), 2.0, max_relative = 1e-14);
        let m: f64 = x.iter().zip(&w).map(|(a, b)| b * a.powi(38)).sum();
        assert_relative_eq!(m, 2.0 / 39.0, max_relative = 1e-12);
        let (x, _) = gauss_legendre(5);
        assert_relative_eq!(x[4], (5.0 + 2.0 * (10.0f64 / 7.0).sqrt()).sqrt() / 3.0, max_relative = 1e-14);
    }

    #[test]
    fn panel_budget_is_enforced() {
        let f = |x: f64| if x < 0.5 { 0.0 } else { 1.0 / (x - 0.5 + 1e-300).sqrt() };
        let tol = Tolerance {
            abs: 1e-15,
            rel: 1e-15,
            max_panels: 20,
        };
        assert!(matches!(integrate(f, 0.0, 1.0, tol), Err(Error::QuadratureFailure { .. })));
    }
}
