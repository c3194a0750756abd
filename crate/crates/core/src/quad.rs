//! Composite Gauss-Legendre quadrature and the angular averages of plane
//! waves over spheres.

use std::f64::consts::PI;

use crate::C64;

/// Nodes and weights of the `m`-point Gauss-Legendre rule on `[-1, 1]`,
/// by Newton iteration on `P_m`.
pub fn gauss_legendre(m: usize) -> (Vec<f64>, Vec<f64>) {
    let mut x = vec![0.0; m];
    let mut w = vec![0.0; m];
    for i in 0..m.div_ceil(2) {
        let mut z = (PI * (i as f64 + 0.75) / (m as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, z);
            for k in 2..=m {
                let p2 = ((2 * k - 1) as f64 * z * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            dp = m as f64 * (z * p1 - p0) / (z * z - 1.0);
            let dz = p1 / dp;
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        x[i] = -z;
        x[m - 1 - i] = z;
        let wi = 2.0 / ((1.0 - z * z) * dp * dp);
        w[i] = wi;
        w[m - 1 - i] = wi;
    }
    (x, w)
}

/// Composite rule on `[a, b]`: equal panels no wider than `width`, each with
/// the `m`-point rule.
#[derive(Clone, Debug)]
pub struct Panels {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl Panels {
    pub fn new(a: f64, b: f64, width: f64, m: usize) -> Panels {
        let count = (((b - a) / width).ceil() as usize).max(1);
        let h = (b - a) / count as f64;
        let (x, w) = gauss_legendre(m);
        let mut nodes = Vec::with_capacity(count * m);
        let mut weights = Vec::with_capacity(count * m);
        for p in 0..count {
            let mid = a + (p as f64 + 0.5) * h;
            for (xi, wi) in x.iter().zip(&w) {
                nodes.push(mid + 0.5 * h * xi);
                weights.push(0.5 * h * wi);
            }
        }
        Panels { nodes, weights }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// `sum w_i f(x_i)`, accumulated panel by panel.
    pub fn integrate<F: Fn(f64) -> C64>(&self, f: F) -> C64 {
        let mut total = C64::new(0.0, 0.0);
        for (x, w) in self.nodes.iter().zip(&self.weights) {
            total += f(*x) * *w;
        }
        total
    }
}

/// `int_{S^{d-1}} e(s omega_1) d sigma(omega)` for `d = 1, 2, 3`.
pub fn sphere_average(d: usize, s: f64) -> f64 {
    let a = 2.0 * PI * s;
    match d {
        1 => 2.0 * a.cos(),
        2 => 2.0 * PI * libm::j0(a),
        3 => {
            if a.abs() < 1e-8 {
                4.0 * PI * (1.0 - a * a / 6.0)
            } else {
                4.0 * PI * a.sin() / a
            }
        }
        _ => panic!("sphere averages implemented for d <= 3"),
    }
}

/// Surface area of the unit sphere in `R^d`.
pub fn sphere_area(d: usize) -> f64 {
    match d {
        1 => 2.0,
        2 => 2.0 * PI,
        3 => 4.0 * PI,
        _ => panic!("sphere areas implemented for d <= 3"),
    }
}

/// Least-squares slope of `log y` against `log x`.
pub fn loglog_slope(x: &[f64], y: &[f64]) -> f64 {
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx) * (a - mx)).sum();
    sxy / sxx
}
