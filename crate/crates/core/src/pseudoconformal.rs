//! The kernel `K_t` of the fractional propagator on an annulus, its
//! stationary point and value, and the operators `T`, `T~` and `E_R` linked
//! by the pseudo-conformal change of variables `(x, t) -> (x/t, 1/t)`.
//!
//! Phase convention: `T`, `T~` and `E_R` carry the constant
//! `kappa = alpha^{-1/(alpha-1)-1} (1 - alpha)` of the stationary value in
//! front of `|.|^{alpha/(alpha-1)}`. Setting `kappa = 1` gives the normalized
//! form; for `kappa > 0` the two are related by `t -> kappa^{1/(1-beta)} t`
//! in `T`, with `beta = alpha/(alpha-1)`.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::profile::annulus_cutoff;
use crate::quad::{gauss_legendre, loglog_slope, sphere_average, Panels};
use crate::rng;
use crate::{e, LabError, Result, C64};

/// Evaluations allowed per point.
pub const QUAD_BUDGET: usize = 1 << 26;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    pub alpha: f64,
    /// Space-time dimension; frequencies live in `R^{n-1}`.
    pub n: usize,
    pub kappa: f64,
}

impl KernelSpec {
    pub fn new(alpha: f64, n: usize) -> Result<Self> {
        if !(2..=4).contains(&n) {
            return Err(LabError::Parameter("n must be 2, 3 or 4".into()));
        }
        if alpha <= 0.0 || alpha == 1.0 {
            return Err(LabError::Parameter("alpha must be positive and not 1".into()));
        }
        Ok(KernelSpec { alpha, n, kappa: stationary_constant(alpha) })
    }

    pub fn normalized(mut self) -> Self {
        self.kappa = 1.0;
        self
    }

    pub fn d(&self) -> usize {
        self.n - 1
    }

    pub fn beta(&self) -> f64 {
        self.alpha / (self.alpha - 1.0)
    }

    pub fn psi(&self, rho: f64) -> f64 {
        annulus_cutoff(rho)
    }

    /// Bound on `|grad_z kappa |z|^beta|` over the support of `psi`.
    fn phase_slope(&self) -> f64 {
        let b = self.beta();
        self.kappa.abs() * b.abs() * 2f64.powf(b - 1.0).max(2f64.powf(1.0 - b))
    }
}

/// `alpha^{-1/(alpha-1)-1} (1 - alpha)`.
pub fn stationary_constant(alpha: f64) -> f64 {
    alpha.powf(-1.0 / (alpha - 1.0) - 1.0) * (1.0 - alpha)
}

/// `K_t(x) = int psi(xi) e(x.xi + t|xi|^alpha) d xi`, reduced to a radial
/// integral against the sphere average of `e(rho x.omega)`.
pub fn kernel_kt(x: &[f64], t: f64, spec: &KernelSpec) -> Result<C64> {
    let d = spec.d();
    if x.len() != d {
        return Err(LabError::Parameter(format!("x must have {d} coordinates")));
    }
    let r: f64 = x.iter().map(|v| v * v).sum::<f64>().sqrt();
    let a = spec.alpha;
    let slope = t.abs() * a * 0.5f64.powf(a - 1.0).max(2f64.powf(a - 1.0)) + r;
    let width = 1.0 / (8.0 * slope.max(1.0));
    let panels = (1.5 / width).ceil() as usize;
    if panels.saturating_mul(8) > QUAD_BUDGET {
        return Err(LabError::Resolution(format!("{} nodes exceed the quadrature budget", panels * 8)));
    }
    let p = Panels::new(0.5, 2.0, width, 8);
    Ok(p.integrate(|rho| e(t * rho.powf(a)) * (spec.psi(rho) * sphere_average(d, rho * r) * rho.powi(d as i32 - 1))))
}

/// `xi_c = -(x~/|x~|) (|x~|/alpha)^{1/(alpha-1)}`, the zero of
/// `x~ + alpha |xi|^{alpha-2} xi`.
pub fn stationary_point(xt: &[f64], alpha: f64) -> Result<Vec<f64>> {
    let r: f64 = xt.iter().map(|v| v * v).sum::<f64>().sqrt();
    if r == 0.0 {
        return Err(LabError::Degenerate("no stationary point for x~ = 0".into()));
    }
    if alpha == 1.0 || alpha <= 0.0 {
        return Err(LabError::Parameter("alpha must be positive and not 1".into()));
    }
    let s = (r / alpha).powf(1.0 / (alpha - 1.0));
    Ok(xt.iter().map(|v| -v / r * s).collect())
}

/// Closed form `phi(xi_c) = kappa |x~|^{alpha/(alpha-1)}`.
pub fn stationary_value(xt: &[f64], alpha: f64) -> Result<f64> {
    stationary_point(xt, alpha)?;
    let r: f64 = xt.iter().map(|v| v * v).sum::<f64>().sqrt();
    Ok(stationary_constant(alpha) * r.powf(alpha / (alpha - 1.0)))
}

/// `phi(xi) = xi.x~ + |xi|^alpha`.
pub fn phase(xi: &[f64], xt: &[f64], alpha: f64) -> f64 {
    let r: f64 = xi.iter().map(|v| v * v).sum::<f64>().sqrt();
    xi.iter().zip(xt).map(|(a, b)| a * b).sum::<f64>() + r.powf(alpha)
}

pub fn phase_gradient(xi: &[f64], xt: &[f64], alpha: f64) -> Vec<f64> {
    let r: f64 = xi.iter().map(|v| v * v).sum::<f64>().sqrt();
    let c = if r == 0.0 { 0.0 } else { alpha * r.powf(alpha - 2.0) };
    xi.iter().zip(xt).map(|(a, b)| b + c * a).collect()
}

/// Leading stationary phase term
/// `t^{-d/2} psi(xi_c) |det phi''|^{-1/2} e^{i pi sigma/4} e(t phi(xi_c))`.
pub fn main_term(xt: &[f64], t: f64, spec: &KernelSpec) -> Result<C64> {
    let a = spec.alpha;
    let d = spec.d();
    let xc = stationary_point(xt, a)?;
    let s: f64 = xc.iter().map(|v| v * v).sum::<f64>().sqrt();
    // Radial eigenvalue alpha(alpha-1)s^{alpha-2}, tangential alpha s^{alpha-2}.
    let radial = a * (a - 1.0) * s.powf(a - 2.0);
    let tangential = a * s.powf(a - 2.0);
    let det = radial.abs() * tangential.abs().powi(d as i32 - 1);
    let sigma = radial.signum() + (d as f64 - 1.0) * tangential.signum();
    let amp = t.powf(-(d as f64) / 2.0) * spec.psi(s) / det.sqrt();
    Ok(C64::from_polar(amp, std::f64::consts::PI * sigma / 4.0) * e(t * phase(&xc, xt, a)))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StationaryPhaseReport {
    pub ts: Vec<f64>,
    /// `|K_t(t x~) - main term|`.
    pub errors: Vec<f64>,
    pub main_magnitudes: Vec<f64>,
    pub slope: f64,
    pub main_slope: f64,
}

/// Fits the decay of the stationary phase remainder at `x = t x~`.
pub fn stationary_phase_check(xt: &[f64], ts: &[f64], spec: &KernelSpec) -> Result<StationaryPhaseReport> {
    let xc = stationary_point(xt, spec.alpha)?;
    let s: f64 = xc.iter().map(|v| v * v).sum::<f64>().sqrt();
    if !(0.75..=1.5).contains(&s) {
        return Err(LabError::Predicate(format!("|xi_c| = {s} is outside the region where psi = 1")));
    }
    let rows: Vec<Result<(f64, f64)>> = crate::par::map_slice(ts, |&t| {
        let x: Vec<f64> = xt.iter().map(|v| v * t).collect();
        let k = kernel_kt(&x, t, spec)?;
        let m = main_term(xt, t, spec)?;
        Ok(((k - m).norm(), m.norm()))
    });
    let rows: Vec<(f64, f64)> = rows.into_iter().collect::<Result<_>>()?;
    let errors: Vec<f64> = rows.iter().map(|r| r.0).collect();
    let mains: Vec<f64> = rows.iter().map(|r| r.1).collect();
    Ok(StationaryPhaseReport { ts: ts.to_vec(), slope: loglog_slope(ts, &errors), main_slope: loglog_slope(ts, &mains), errors, main_magnitudes: mains })
}

/// Smooth compactly supported data `sum_j c_j b(|y - y_j| / rho_j)` on `R^d`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BumpData {
    pub d: usize,
    pub centers: Vec<Vec<f64>>,
    pub radii: Vec<f64>,
    pub coeffs: Vec<C64>,
}

impl BumpData {
    pub fn zero(d: usize) -> Self {
        BumpData { d, centers: Vec::new(), radii: Vec::new(), coeffs: Vec::new() }
    }

    /// `count` bumps of radius `rho` centered in `B_{spread}`.
    pub fn seeded(seed: u64, d: usize, count: usize, spread: f64, rho: f64) -> Self {
        let mut r = rng::stream(seed, 29);
        let mut centers = Vec::new();
        while centers.len() < count {
            let c: Vec<f64> = (0..d).map(|_| rng::uniform(&mut r, -spread, spread)).collect();
            if c.iter().map(|v| v * v).sum::<f64>().sqrt() <= spread {
                centers.push(c);
            }
        }
        let coeffs = (0..count).map(|_| rng::complex_normal(&mut r)).collect();
        BumpData { d, centers, radii: vec![rho; count], coeffs }
    }

    pub fn eval(&self, y: &[f64]) -> C64 {
        self.centers
            .iter()
            .zip(&self.radii)
            .zip(&self.coeffs)
            .map(|((c, rho), k)| {
                let dist = c.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
                k * bump(dist / rho)
            })
            .sum()
    }

    /// `y -> f(s y)`.
    pub fn rescaled(&self, s: f64) -> Self {
        BumpData {
            d: self.d,
            centers: self.centers.iter().map(|c| c.iter().map(|v| v / s).collect()).collect(),
            radii: self.radii.iter().map(|r| r / s).collect(),
            coeffs: self.coeffs.clone(),
        }
    }

    pub fn scaled(&self, k: C64) -> Self {
        BumpData { coeffs: self.coeffs.iter().map(|c| c * k).collect(), ..self.clone() }
    }

    pub fn plus(&self, o: &BumpData) -> Self {
        let mut out = self.clone();
        out.centers.extend(o.centers.iter().cloned());
        out.radii.extend(o.radii.iter().cloned());
        out.coeffs.extend(o.coeffs.iter().cloned());
        out
    }
}

/// Radial profile `1 - S(r)` on `r < 1`.
fn bump(r: f64) -> f64 {
    crate::profile::bump_pu(r)
}

/// `sum_j c_j int b_j(y) k(y) dy` with tensor Gauss-Legendre panels over each
/// bump's box; `slope` bounds the phase gradient of `k` in cycles per unit.
fn integrate_against<K: Fn(&[f64]) -> C64>(f: &BumpData, slope: f64, kern: K) -> Result<C64> {
    let d = f.d;
    const M: usize = 6;
    let (gx, gw) = gauss_legendre(M);
    let mut total = C64::new(0.0, 0.0);
    for ((c, &rho), &coef) in f.centers.iter().zip(&f.radii).zip(&f.coeffs) {
        let width = (rho / 4.0).min(1.0 / (8.0 * (d as f64).sqrt() * slope.max(1e-300)));
        let per_axis = ((2.0 * rho / width).ceil() as usize).max(1);
        let h = 2.0 * rho / per_axis as f64;
        let nodes_axis = per_axis * M;
        let count = nodes_axis.checked_pow(d as u32).unwrap_or(usize::MAX);
        if count > QUAD_BUDGET {
            return Err(LabError::Resolution(format!("{count} nodes exceed the quadrature budget")));
        }
        let axis: Vec<(f64, f64)> = (0..per_axis)
            .flat_map(|p| {
                let mid = -rho + (p as f64 + 0.5) * h;
                gx.iter().zip(&gw).map(move |(x, w)| (mid + 0.5 * h * x, 0.5 * h * w)).collect::<Vec<_>>()
            })
            .collect();
        let mut y = vec![0.0; d];
        let mut acc = C64::new(0.0, 0.0);
        for flat in 0..count {
            let mut rest = flat;
            let mut w = 1.0;
            let mut r2 = 0.0;
            for k in (0..d).rev() {
                let (o, wk) = axis[rest % nodes_axis];
                rest /= nodes_axis;
                y[k] = c[k] + o;
                w *= wk;
                r2 += o * o;
            }
            let b = bump(r2.sqrt() / rho);
            if b != 0.0 {
                acc += kern(&y) * (w * b);
            }
        }
        total += acc * coef;
    }
    Ok(total)
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// `Tf(x, t) = int e(kappa t |(x-y)/t|^beta) psi((x-y)/t) f(y) dy`.
pub fn t_operator(f: &BumpData, x: &[f64], t: f64, spec: &KernelSpec) -> Result<C64> {
    let b = spec.beta();
    integrate_against(f, spec.phase_slope(), |y| {
        let z: Vec<f64> = x.iter().zip(y).map(|(a, c)| (a - c) / t).collect();
        let r = norm(&z);
        let p = spec.psi(r);
        if p == 0.0 {
            return C64::new(0.0, 0.0);
        }
        e(spec.kappa * t * r.powf(b)) * p
    })
}

/// `T~f(x, t) = int e(kappa t^{-1} |x - t y|^beta) psi(x - t y) f(y) dy`.
pub fn t_tilde_operator(f: &BumpData, x: &[f64], t: f64, spec: &KernelSpec) -> Result<C64> {
    let b = spec.beta();
    integrate_against(f, spec.phase_slope(), |y| {
        let z: Vec<f64> = x.iter().zip(y).map(|(a, c)| a - t * c).collect();
        let r = norm(&z);
        let p = spec.psi(r);
        if p == 0.0 {
            return C64::new(0.0, 0.0);
        }
        e(spec.kappa / t * r.powf(b)) * p
    })
}

/// `E_R f(x, t) = int e(kappa (R^2/t) |(x - t y)/R|^beta) psi((x - t y)/R) f(y) dy`.
pub fn er_operator(f: &BumpData, big_r: f64, x: &[f64], t: f64, spec: &KernelSpec) -> Result<C64> {
    let b = spec.beta();
    integrate_against(f, spec.phase_slope() * big_r, |y| {
        let z: Vec<f64> = x.iter().zip(y).map(|(a, c)| (a - t * c) / big_r).collect();
        let r = norm(&z);
        let p = spec.psi(r);
        if p == 0.0 {
            return C64::new(0.0, 0.0);
        }
        e(spec.kappa * big_r * big_r / t * r.powf(b)) * p
    })
}

/// `E_R` at many points.
pub fn er_field(f: &BumpData, big_r: f64, points: &[(Vec<f64>, f64)], spec: &KernelSpec) -> Result<Vec<C64>> {
    crate::par::map_slice(points, |(x, t)| er_operator(f, big_r, x, *t, spec)).into_iter().collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckLine {
    pub name: String,
    pub value: f64,
    pub contract: String,
    pub pass: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChainReport {
    pub r: f64,
    pub p: f64,
    pub identity_error: f64,
    pub rescaling_error: f64,
    pub norm_t: f64,
    pub norm_t_tilde: f64,
    pub ratio: f64,
    pub band: (f64, f64),
    pub lines: Vec<CheckLine>,
}

impl ChainReport {
    pub fn passed(&self) -> bool {
        self.lines.iter().all(|l| l.pass)
    }
}

impl fmt::Display for ChainReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for l in &self.lines {
            writeln!(f, "{} value={:.6e} contract={} {}", l.name, l.value, l.contract, if l.pass { "pass" } else { "fail" })?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChainConfig {
    pub p: f64,
    pub identity_points: usize,
    pub rescaling_points: usize,
    pub norm_samples: usize,
    pub seed: u64,
}

impl Default for ChainConfig {
    fn default() -> Self {
        ChainConfig { p: 4.0, identity_points: 100, rescaling_points: 50, norm_samples: 200, seed: 0 }
    }
}

/// Uniform point of `B_R^{d} x [R/2, R]`.
fn cylinder_point(g: &mut rng::LabRng, d: usize, big_r: f64) -> (Vec<f64>, f64) {
    loop {
        let x: Vec<f64> = (0..d).map(|_| rng::uniform(g, -big_r, big_r)).collect();
        if norm(&x) <= big_r {
            return (x, rng::uniform(g, big_r / 2.0, big_r));
        }
    }
}

fn ball_volume(d: usize, r: f64) -> f64 {
    use std::f64::consts::PI;
    match d {
        1 => 2.0 * r,
        2 => PI * r * r,
        3 => 4.0 / 3.0 * PI * r * r * r,
        _ => unreachable!(),
    }
}

/// Checks `Tf(x,t) = T~f(x/t, 1/t)`, `T~f(x/R, t/R^2) = R^{n-1} E_R g(x,t)`
/// with `g(y) = f(R y)`, and the ratio `||Tf||_p / (R^{(n+1)/p} ||T~f||_p)`
/// where the second norm is over the image of `B_R x [R/2, R]`.
pub fn pseudo_conformal_chain_check(f: &BumpData, big_r: f64, spec: &KernelSpec, cfg: &ChainConfig) -> Result<ChainReport> {
    let d = spec.d();
    if f.d != d {
        return Err(LabError::Parameter(format!("data must live on R^{d}")));
    }
    if f.centers.iter().zip(&f.radii).any(|(c, r)| norm(c) + r > big_r) {
        return Err(LabError::Domain("data must be supported in B_R".into()));
    }
    let mut g = rng::stream(cfg.seed, 31);
    let pts: Vec<(Vec<f64>, f64)> = (0..cfg.identity_points).map(|_| cylinder_point(&mut g, d, big_r)).collect();
    let pairs: Vec<Result<(C64, C64)>> = crate::par::map_slice(&pts, |(x, t)| {
        let a = t_operator(f, x, *t, spec)?;
        let u: Vec<f64> = x.iter().map(|v| v / t).collect();
        let b = t_tilde_operator(f, &u, 1.0 / t, spec)?;
        Ok((a, b))
    });
    let pairs: Vec<(C64, C64)> = pairs.into_iter().collect::<Result<_>>()?;
    let identity_error = normwise(&pairs);
    let rp: Vec<(Vec<f64>, f64)> = (0..cfg.rescaling_points).map(|_| cylinder_point(&mut g, d, big_r)).collect();
    let gdat = f.rescaled(big_r);
    let scale = big_r.powi(d as i32);
    let pairs: Vec<Result<(C64, C64)>> = crate::par::map_slice(&rp, |(x, t)| {
        let u: Vec<f64> = x.iter().map(|v| v / big_r).collect();
        let a = t_tilde_operator(f, &u, t / (big_r * big_r), spec)?;
        let b = er_operator(&gdat, big_r, x, *t, spec)? * scale;
        Ok((a, b))
    });
    let pairs: Vec<(C64, C64)> = pairs.into_iter().collect::<Result<_>>()?;
    let rescaling_error = normwise(&pairs);
    // Monte Carlo L^p norms on both sides.
    let p = cfg.p;
    let np: Vec<(Vec<f64>, f64)> = (0..cfg.norm_samples).map(|_| cylinder_point(&mut g, d, big_r)).collect();
    let vals: Vec<Result<f64>> = crate::par::map_slice(&np, |(x, t)| Ok(t_operator(f, x, *t, spec)?.norm().powf(p)));
    let vals: Vec<f64> = vals.into_iter().collect::<Result<_>>()?;
    let vol = ball_volume(d, big_r) * big_r / 2.0;
    let norm_t = (vol * vals.iter().sum::<f64>() / vals.len().max(1) as f64).powf(1.0 / p);
    // Image: s in [1/R, 2/R], |u| <= R s.
    let mut tp = Vec::with_capacity(cfg.norm_samples);
    while tp.len() < cfg.norm_samples {
        let u: Vec<f64> = (0..d).map(|_| rng::uniform(&mut g, -2.0, 2.0)).collect();
        let s = rng::uniform(&mut g, 1.0 / big_r, 2.0 / big_r);
        if norm(&u) <= big_r * s {
            tp.push((u, s));
        }
    }
    let vals: Vec<Result<f64>> = crate::par::map_slice(&tp, |(u, s)| Ok(t_tilde_operator(f, u, *s, spec)?.norm().powf(p)));
    let vals: Vec<f64> = vals.into_iter().collect::<Result<_>>()?;
    let omega = ball_volume(d, 1.0) * big_r.powi(d as i32) * ((2.0 / big_r).powi(d as i32 + 1) - (1.0 / big_r).powi(d as i32 + 1)) / (d as f64 + 1.0);
    let norm_tt = (omega * vals.iter().sum::<f64>() / vals.len().max(1) as f64).powf(1.0 / p);
    let jac = 2f64.powf((spec.n as f64 + 1.0) / p);
    let band = (1.0 / jac / 4.0, 4.0 * jac);
    let ratio = if norm_tt == 0.0 { if norm_t == 0.0 { 1.0 } else { f64::INFINITY } } else { norm_t / (big_r.powf((spec.n as f64 + 1.0) / p) * norm_tt) };
    let lines = vec![
        CheckLine { name: "identity_T_Ttilde".into(), value: identity_error, contract: "<= 1e-8".into(), pass: identity_error <= 1e-8 },
        CheckLine { name: "rescaling_Ttilde_ER".into(), value: rescaling_error, contract: "<= 1e-6".into(), pass: rescaling_error <= 1e-6 },
        CheckLine { name: "norm_ratio".into(), value: ratio, contract: format!("in [{:.4}, {:.4}]", band.0, band.1), pass: ratio >= band.0 && ratio <= band.1 },
    ];
    Ok(ChainReport { r: big_r, p, identity_error, rescaling_error, norm_t, norm_t_tilde: norm_tt, ratio, band, lines })
}

/// `max |a - b| / max |a|`, zero when everything vanishes.
fn normwise(pairs: &[(C64, C64)]) -> f64 {
    let top = pairs.iter().fold(0.0f64, |m, (a, _)| m.max(a.norm()));
    let err = pairs.iter().fold(0.0f64, |m, (a, b)| m.max((a - b).norm()));
    if top == 0.0 {
        err
    } else {
        err / top
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stationary_examples() {
        let xc = stationary_point(&[1.0, 0.0], 2.0).unwrap();
        assert!((xc[0] + 0.5).abs() < 1e-15 && xc[1] == 0.0);
        let xc = stationary_point(&[0.6, 0.8], 0.5).unwrap();
        assert!((norm(&xc) - 0.25).abs() < 1e-15);
        assert!((stationary_constant(2.0) + 0.25).abs() < 1e-15);
        // alpha = 1/2, |x~| = 1: direct substitution gives 1/4.
        assert!((stationary_value(&[0.0, 1.0], 0.5).unwrap() - 0.25).abs() < 1e-15);
        assert!(stationary_point(&[0.0, 0.0], 2.0).is_err());
    }

    #[test]
    fn stationary_residual_and_value_on_random_inputs() {
        let mut r = rng::stream(7, 0);
        for _ in 0..100 {
            let d = 1 + (rng::uniform(&mut r, 0.0, 3.0) as usize).min(2);
            let xt: Vec<f64> = (0..d).map(|_| rng::uniform(&mut r, -2.0, 2.0)).collect();
            let a = [0.5, 0.8, 1.5, 2.0, 3.0][rng::uniform(&mut r, 0.0, 5.0) as usize % 5];
            let xc = stationary_point(&xt, a).unwrap();
            let g = phase_gradient(&xc, &xt, a);
            assert!(norm(&g) <= 1e-12 * (1.0 + norm(&xt)), "{g:?}");
            let closed = stationary_value(&xt, a).unwrap();
            let direct = phase(&xc, &xt, a);
            assert!((closed - direct).abs() <= 1e-12 * (1.0 + direct.abs()), "{closed} {direct}");
        }
    }

    #[test]
    fn kernel_at_origin_and_symmetry() {
        let spec = KernelSpec::new(2.0, 3).unwrap();
        let k0 = kernel_kt(&[0.0, 0.0], 0.0, &spec).unwrap();
        let psi_int = Panels::new(0.5, 2.0, 0.001, 8).integrate(|r| C64::new(2.0 * std::f64::consts::PI * r * annulus_cutoff(r), 0.0)).re;
        assert!(k0.im.abs() < 1e-14 && (k0.re - psi_int).abs() < 1e-12 && k0.re > 0.0);
        let a = kernel_kt(&[1.3, -0.4], 2.0, &spec).unwrap();
        let b = kernel_kt(&[-1.3, 0.4], 2.0, &spec).unwrap();
        assert!((a - b).norm() < 1e-14);
    }

    #[test]
    fn radial_kernel_matches_cartesian_quadrature() {
        let spec = KernelSpec::new(2.0, 3).unwrap();
        let x = [0.7, -1.1];
        let t = 0.9;
        let p = Panels::new(-2.0, 2.0, 0.02, 8);
        let direct = p.integrate(|a| {
            p.integrate(|b| {
                let r = (a * a + b * b).sqrt();
                e(x[0] * a + x[1] * b + t * r * r) * annulus_cutoff(r)
            })
        });
        let radial = kernel_kt(&x, t, &spec).unwrap();
        // The cutoff is only C^2, which limits both rules.
        assert!((direct - radial).norm() < 1e-8, "{direct} {radial}");
    }

    #[test]
    fn non_stationary_kernel_is_small() {
        let spec = KernelSpec::new(2.0, 3).unwrap();
        let t = 100.0;
        let stat = kernel_kt(&[2.0 * t, 0.0], t, &spec).unwrap().norm();
        let far = kernel_kt(&[8.0 * t, 0.0], t, &spec).unwrap().norm();
        assert!(far <= stat / (t * t), "{far} {stat}");
    }

    #[test]
    fn stationary_phase_decay() {
        let spec = KernelSpec::new(2.0, 3).unwrap();
        let ts: Vec<f64> = [2.0, 2.5, 3.0, 3.5, 4.0].iter().map(|k| 10f64.powf(*k)).collect();
        let rep = stationary_phase_check(&[2.0, 0.0], &ts, &spec).unwrap();
        assert!(rep.slope <= -1.4, "{rep:?}");
        assert!((rep.main_slope + 1.0).abs() < 1e-12);
        // xi_c on the transition shell.
        assert!(stationary_phase_check(&[1.2, 0.0], &ts, &spec).is_err());
    }

    #[test]
    fn chain_identities_and_band() {
        let spec = KernelSpec::new(2.0, 3).unwrap();
        let cfg = ChainConfig { identity_points: 30, rescaling_points: 20, norm_samples: 100, ..Default::default() };
        let z = pseudo_conformal_chain_check(&BumpData::zero(2), 16.0, &spec, &cfg).unwrap();
        assert_eq!(z.identity_error, 0.0);
        let f = BumpData::seeded(4, 2, 3, 8.0, 1.5);
        let rep = pseudo_conformal_chain_check(&f, 16.0, &spec, &cfg).unwrap();
        assert!(rep.passed(), "{rep}");
    }

    #[test]
    fn operators_are_linear() {
        let spec = KernelSpec::new(1.5, 3).unwrap();
        let f = BumpData::seeded(5, 2, 2, 4.0, 1.0);
        let g = BumpData::seeded(6, 2, 2, 4.0, 1.0);
        let k = C64::new(0.3, -1.2);
        let sum = f.scaled(k).plus(&g);
        let (x, t) = ([3.0, -2.0], 6.0);
        for op in 0..3 {
            let ev = |h: &BumpData| match op {
                0 => t_operator(h, &x, t, &spec).unwrap(),
                1 => t_tilde_operator(h, &[0.5, 0.2], 0.1, &spec).unwrap(),
                _ => er_operator(h, 8.0, &x, t, &spec).unwrap(),
            };
            let lhs = ev(&sum);
            let rhs = ev(&f) * k + ev(&g);
            assert!((lhs - rhs).norm() <= 1e-12 * lhs.norm().max(1e-300), "op {op}");
        }
    }
}
