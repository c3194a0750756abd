//! The extension operator, the fractional propagator, Littlewood-Paley
//! projections and the scaling identities.

use crate::field::{BoxRegion, FrequencyField, Lattice, SpaceTimeField};
use crate::fourier::{natural_lattice, plan_axes, transform_nd};
use crate::profile::{annulus_cutoff, dyadic_piece};
use crate::surface::Surface;
use crate::{e, LabError, Result, C64};

fn check_resolution(f: &FrequencyField, xmax: f64) -> Result<()> {
    let h = f.h();
    if xmax > 0.0 && h > 1.0 / (4.0 * xmax) * (1.0 + 1e-9) {
        return Err(LabError::Resolution(format!("frequency spacing {h} too coarse for |x'| up to {xmax}")));
    }
    Ok(())
}

/// `Ef` on a space-time lattice (spatial axes first, `x_n` last), one lattice
/// transform per `x_n` slice.
pub fn extend(f: &FrequencyField, surface: &Surface, domain: &Lattice) -> Result<SpaceTimeField> {
    let d = f.dim();
    if domain.ndim() != d + 1 {
        return Err(LabError::Parameter("domain must have n = d + 1 axes".into()));
    }
    let spatial = Lattice::new(domain.origin[..d].to_vec(), domain.spacing[..d].to_vec(), domain.dims[..d].to_vec());
    let xmax = (0..d).map(|k| spatial.lo()[k].abs().max(spatial.hi()[k].abs())).fold(0.0, f64::max);
    check_resolution(f, xmax)?;
    let w = f.lattice.cell_volume();
    let nz: Vec<usize> = (0..f.values.len()).filter(|&i| f.values[i].norm_sqr() != 0.0).collect();
    let hvals: Vec<f64> = nz.iter().map(|&i| surface.h(&f.lattice.node(i))).collect();
    let tr = plan_axes(&f.lattice, &spatial);
    let nslice = spatial.len();
    let nt = domain.dims[d];
    let slices: Vec<Vec<C64>> = (0..nt)
        .map(|it| {
            let xn = domain.coord(d, it);
            let mut g = vec![C64::new(0.0, 0.0); f.values.len()];
            for (k, &i) in nz.iter().enumerate() {
                g[i] = f.values[i] * e(hvals[k] * xn) * w;
            }
            transform_nd(&g, &f.lattice.dims, &tr).0
        })
        .collect();
    // Reorder to row-major with x_n last.
    let mut values = vec![C64::new(0.0, 0.0); nslice * nt];
    for (it, s) in slices.iter().enumerate() {
        for (m, v) in s.iter().enumerate() {
            values[m * nt + it] = *v;
        }
    }
    Ok(SpaceTimeField { lattice: domain.clone(), values })
}

/// `Ef` at scattered points by direct summation over the nonzero samples.
pub fn extend_points(f: &FrequencyField, surface: &Surface, points: &[Vec<f64>]) -> Result<Vec<C64>> {
    let d = f.dim();
    let xmax = points.iter().flat_map(|p| p[..d].iter().map(|v| v.abs())).fold(0.0, f64::max);
    check_resolution(f, xmax)?;
    let w = f.lattice.cell_volume();
    let nz: Vec<(Vec<f64>, C64, f64)> = (0..f.values.len())
        .filter(|&i| f.values[i].norm_sqr() != 0.0)
        .map(|i| {
            let xi = f.lattice.node(i);
            let h = surface.h(&xi);
            (xi, f.values[i] * w, h)
        })
        .collect();
    Ok(crate::par::map_slice(points, |p| {
        let mut acc = C64::new(0.0, 0.0);
        for (xi, v, h) in &nz {
            let mut ph = h * p[d];
            for k in 0..d {
                ph += xi[k] * p[k];
            }
            acc += v * e(ph);
        }
        acc
    }))
}

/// `u(., t)` for each listed time, sampled on a spatial lattice.
#[derive(Clone, Debug)]
pub struct Evolution {
    pub lattice: Lattice,
    pub times: Vec<f64>,
    pub slices: Vec<Vec<C64>>,
}

impl Evolution {
    pub fn slice_field(&self, i: usize) -> SpaceTimeField {
        let mut lat = self.lattice.clone();
        lat.origin.push(self.times[i]);
        lat.spacing.push(0.0);
        lat.dims.push(1);
        SpaceTimeField { lattice: lat, values: self.slices[i].clone() }
    }

    pub fn l2_norm(&self, i: usize) -> f64 {
        (self.slices[i].iter().map(|v| v.norm_sqr()).sum::<f64>() * self.lattice.cell_volume()).sqrt()
    }
}

/// `e^{it(-Delta)^{alpha/2}} g` with multiplier `e(t |xi|^alpha)`, on the
/// periodic lattice dual to the spectrum.
pub fn propagate(ghat: &FrequencyField, alpha: f64, times: &[f64]) -> Result<Evolution> {
    let x = natural_lattice(ghat);
    propagate_on(ghat, alpha, times, &x)
}

pub fn propagate_on(ghat: &FrequencyField, alpha: f64, times: &[f64], x: &Lattice) -> Result<Evolution> {
    if !(alpha > 0.0) {
        return Err(LabError::Parameter("alpha must be positive".into()));
    }
    let g = if alpha < 1.0 { littlewood_paley_project(ghat, 1.0) } else { ghat.clone() };
    let w = g.lattice.cell_volume();
    let tr = plan_axes(&g.lattice, x);
    let radii: Vec<f64> = (0..g.values.len()).map(|i| g.lattice.node(i).iter().map(|v| v * v).sum::<f64>().powf(alpha / 2.0)).collect();
    let slices = times
        .iter()
        .map(|&t| {
            let buf: Vec<C64> = g.values.iter().zip(&radii).map(|(v, r)| if v.norm_sqr() == 0.0 { *v } else { v * e(t * r) * w }).collect();
            transform_nd(&buf, &g.lattice.dims, &tr).0
        })
        .collect();
    Ok(Evolution { lattice: x.clone(), times: times.to_vec(), slices })
}

fn radius(p: &[f64]) -> f64 {
    p.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Multiplies the spectrum by the annulus cutoff at scale `lambda`.
pub fn littlewood_paley_project(g: &FrequencyField, lambda: f64) -> FrequencyField {
    g.multiplied(|p| C64::new(annulus_cutoff(radius(p) / lambda), 0.0))
}

/// Dyadic partition-of-unity piece at scale `lambda`.
pub fn littlewood_paley_piece(g: &FrequencyField, lambda: f64) -> FrequencyField {
    g.multiplied(|p| C64::new(dyadic_piece(radius(p) / lambda), 0.0))
}

/// Relative gap in `e^{iRt(-Delta)^{a/2}} g(x) = R^{-(n-1)/a} (e^{it(-Delta)^{a/2}} g_1)(R^{-1/a} x)`
/// where `g_1^(xi) = g^(R^{-1/a} xi)`. The right side samples `g_1^` on the
/// dilated lattice and is evaluated by a separate summation.
pub fn scaling_identity_check(ghat: &FrequencyField, alpha: f64, r: f64, t: f64, x: &[f64]) -> Result<f64> {
    if !(alpha > 0.0) || !(r >= 1.0) {
        return Err(LabError::Parameter("need alpha > 0 and R >= 1".into()));
    }
    let d = ghat.dim();
    let surf = Surface::Fractional { alpha };
    let mut p = x.to_vec();
    p.push(r * t);
    let lhs = extend_points(ghat, &surf, &[p])?[0];
    let s = r.powf(1.0 / alpha);
    let lat = &ghat.lattice;
    let scaled = Lattice::new(lat.origin.iter().map(|o| o * s).collect(), lat.spacing.iter().map(|h| h * s).collect(), lat.dims.clone());
    let g1 = FrequencyField {
        lattice: scaled,
        values: ghat.values.clone(),
        support: BoxRegion::new(ghat.support.lo.iter().map(|v| v * s).collect(), ghat.support.hi.iter().map(|v| v * s).collect()),
    };
    let mut q: Vec<f64> = x.iter().map(|v| v / s).collect();
    q.push(t);
    let rhs = extend_points_unchecked(&g1, &surf, &q) * r.powf(-(d as f64) / alpha);
    let scale = lhs.norm().max(rhs.norm());
    Ok(if scale == 0.0 { 0.0 } else { (lhs - rhs).norm() / scale })
}

fn extend_points_unchecked(f: &FrequencyField, surface: &Surface, p: &[f64]) -> C64 {
    let d = f.dim();
    let w = f.lattice.cell_volume();
    let mut acc = C64::new(0.0, 0.0);
    for (i, v) in f.values.iter().enumerate() {
        if v.norm_sqr() == 0.0 {
            continue;
        }
        let xi = f.lattice.node(i);
        let mut ph = surface.h(&xi) * p[d];
        for k in 0..d {
            ph += xi[k] * p[k];
        }
        acc += v * w * e(ph);
    }
    acc
}

/// Parabolic rescaling `Eg(x) = K^d e(K^2 x_n |c|^2 - K c.x') Ef_tau(Kx' - 2K^2 x_n c, K^2 x_n)`
/// for `g(xi) = f_tau(c + xi/K)` and `h = |xi|^2`. Returns the largest
/// discrepancy over `points`, relative to the largest `|Eg|` seen.
pub fn parabolic_rescaling_check(f_tau: &FrequencyField, center: &[f64], k: f64, points: &[Vec<f64>]) -> Result<f64> {
    let d = f_tau.dim();
    let lat = &f_tau.lattice;
    let g_lat = Lattice::new(
        (0..d).map(|i| k * (lat.origin[i] - center[i])).collect(),
        lat.spacing.iter().map(|h| h * k).collect(),
        lat.dims.clone(),
    );
    let g = FrequencyField {
        lattice: g_lat,
        values: f_tau.values.clone(),
        support: BoxRegion::new(
            (0..d).map(|i| k * (f_tau.support.lo[i] - center[i])).collect(),
            (0..d).map(|i| k * (f_tau.support.hi[i] - center[i])).collect(),
        ),
    };
    let surf = Surface::Paraboloid;
    let c2: f64 = center.iter().map(|v| v * v).sum();
    let mapped: Vec<Vec<f64>> = points
        .iter()
        .map(|x| {
            let xn = x[d];
            let mut y: Vec<f64> = (0..d).map(|i| k * x[i] - 2.0 * k * k * xn * center[i]).collect();
            y.push(k * k * xn);
            y
        })
        .collect();
    let lhs: Vec<C64> = points.iter().map(|x| extend_points_unchecked(&g, &surf, x)).collect();
    let inner: Vec<C64> = mapped.iter().map(|y| extend_points_unchecked(f_tau, &surf, y)).collect();
    let mut worst: f64 = 0.0;
    let mut scale: f64 = 0.0;
    for (i, x) in points.iter().enumerate() {
        let cx: f64 = (0..d).map(|j| center[j] * x[j]).sum();
        let rhs = inner[i] * k.powi(d as i32) * e(k * k * x[d] * c2 - k * cx);
        worst = worst.max((lhs[i] - rhs).norm());
        scale = scale.max(lhs[i].norm());
    }
    Ok(if scale == 0.0 { 0.0 } else { worst / scale })
}
