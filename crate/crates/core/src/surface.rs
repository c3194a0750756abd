//! Phase functions `h` with gradients, Hessians and a curvature class.

use serde::{Deserialize, Serialize};

use crate::poly::Poly;
use crate::{LabError, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Surface {
    /// `|xi|^2`
    Paraboloid,
    /// `|xi|^alpha`
    Fractional { alpha: f64 },
    /// `xi^T A xi` with `A` symmetric, row-major.
    Quadratic { a: Vec<f64> },
    /// Arbitrary polynomial phase.
    Polynomial(Poly),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum CurvatureClass {
    Elliptic,
    Hyperbolic,
    Fractional(f64),
}

impl Surface {
    pub fn h(&self, xi: &[f64]) -> f64 {
        match self {
            Surface::Paraboloid => xi.iter().map(|v| v * v).sum(),
            Surface::Fractional { alpha } => xi.iter().map(|v| v * v).sum::<f64>().powf(alpha / 2.0),
            Surface::Quadratic { a } => quad_form(a, xi),
            Surface::Polynomial(p) => p.eval(xi),
        }
    }

    pub fn grad(&self, xi: &[f64]) -> Vec<f64> {
        match self {
            Surface::Paraboloid => xi.iter().map(|v| 2.0 * v).collect(),
            Surface::Fractional { alpha } => {
                let r2: f64 = xi.iter().map(|v| v * v).sum();
                if r2 == 0.0 {
                    return vec![0.0; xi.len()];
                }
                let c = alpha * r2.powf(alpha / 2.0 - 1.0);
                xi.iter().map(|v| c * v).collect()
            }
            Surface::Quadratic { a } => {
                let d = xi.len();
                (0..d).map(|i| 2.0 * (0..d).map(|j| a[i * d + j] * xi[j]).sum::<f64>()).collect()
            }
            Surface::Polynomial(p) => p.grad(xi),
        }
    }

    pub fn hess(&self, xi: &[f64]) -> Vec<f64> {
        let d = xi.len();
        match self {
            Surface::Paraboloid => {
                let mut h = vec![0.0; d * d];
                for i in 0..d {
                    h[i * d + i] = 2.0;
                }
                h
            }
            Surface::Fractional { alpha } => {
                let r2: f64 = xi.iter().map(|v| v * v).sum();
                let mut h = vec![0.0; d * d];
                if r2 == 0.0 {
                    return h;
                }
                let c = alpha * r2.powf(alpha / 2.0 - 1.0);
                for i in 0..d {
                    for j in 0..d {
                        let delta = if i == j { 1.0 } else { 0.0 };
                        h[i * d + j] = c * (delta + (alpha - 2.0) * xi[i] * xi[j] / r2);
                    }
                }
                h
            }
            Surface::Quadratic { a } => a.iter().map(|v| 2.0 * v).collect(),
            Surface::Polynomial(p) => p.hess(xi),
        }
    }

    /// Unit vector along `(-grad h(omega), 1)`.
    pub fn direction(&self, omega: &[f64]) -> Vec<f64> {
        let g = self.grad(omega);
        let mut v: Vec<f64> = g.iter().map(|x| -x).collect();
        v.push(1.0);
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        v.iter().map(|x| x / n).collect()
    }

    /// Classifies by sampling Hessian signatures over `[-1,1]^d`.
    pub fn curvature_class(&self, d: usize) -> Result<CurvatureClass> {
        match self {
            Surface::Paraboloid => return Ok(CurvatureClass::Elliptic),
            Surface::Fractional { alpha } => return Ok(CurvatureClass::Fractional(*alpha)),
            _ => {}
        }
        let m = 9usize;
        let mut all_pos = true;
        let mut all_mixed = true;
        for flat in 0..m.pow(d as u32) {
            let mut idx = flat;
            let xi: Vec<f64> = (0..d)
                .map(|_| {
                    let i = idx % m;
                    idx /= m;
                    -1.0 + 2.0 * i as f64 / (m - 1) as f64
                })
                .collect();
            let ev = sym_eigenvalues(&self.hess(&xi), d);
            let pos = ev.iter().all(|&l| l > 1e-12);
            let mixed = ev.iter().any(|&l| l > 1e-12) && ev.iter().any(|&l| l < -1e-12) && ev.iter().all(|l| l.abs() > 1e-12);
            all_pos &= pos;
            all_mixed &= mixed;
        }
        if all_pos {
            Ok(CurvatureClass::Elliptic)
        } else if all_mixed && d == 2 {
            Ok(CurvatureClass::Hyperbolic)
        } else {
            Err(LabError::Form("Hessian signature is neither definite nor (for n = 3) indefinite throughout".into()))
        }
    }
}

fn quad_form(a: &[f64], x: &[f64]) -> f64 {
    let d = x.len();
    let mut s = 0.0;
    for i in 0..d {
        for j in 0..d {
            s += x[i] * a[i * d + j] * x[j];
        }
    }
    s
}

/// Eigenvalues of a small symmetric matrix by cyclic Jacobi rotations.
pub fn sym_eigenvalues(m: &[f64], d: usize) -> Vec<f64> {
    let mut a = m.to_vec();
    for _sweep in 0..50 {
        let off: f64 = (0..d).flat_map(|i| (0..d).filter(move |&j| j != i).map(move |j| (i, j))).map(|(i, j)| a[i * d + j].powi(2)).sum();
        if off < 1e-30 {
            break;
        }
        for p in 0..d {
            for q in p + 1..d {
                let apq = a[p * d + q];
                if apq.abs() < 1e-300 {
                    continue;
                }
                let theta = (a[q * d + q] - a[p * d + p]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..d {
                    let akp = a[k * d + p];
                    let akq = a[k * d + q];
                    a[k * d + p] = c * akp - s * akq;
                    a[k * d + q] = s * akp + c * akq;
                }
                for k in 0..d {
                    let apk = a[p * d + k];
                    let aqk = a[q * d + k];
                    a[p * d + k] = c * apk - s * aqk;
                    a[q * d + k] = s * apk + c * aqk;
                }
            }
        }
    }
    (0..d).map(|i| a[i * d + i]).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fd_grad(s: &Surface, x: &[f64]) -> Vec<f64> {
        let h = 1e-6;
        (0..x.len())
            .map(|i| {
                let mut a = x.to_vec();
                let mut b = x.to_vec();
                a[i] += h;
                b[i] -= h;
                (s.h(&a) - s.h(&b)) / (2.0 * h)
            })
            .collect()
    }

    #[test]
    fn gradients_match_finite_differences() {
        let poly = Poly::from_terms(2, vec![(vec![1, 1], 1.0), (vec![2, 0], 0.01), (vec![0, 3], 1e-4)]);
        let surfaces = [
            Surface::Paraboloid,
            Surface::Fractional { alpha: 0.5 },
            Surface::Fractional { alpha: 3.0 },
            Surface::Quadratic { a: vec![1.0, 0.3, 0.3, -2.0] },
            Surface::Polynomial(poly),
        ];
        let x = [0.37, -0.61];
        for s in &surfaces {
            let g = s.grad(&x);
            let f = fd_grad(s, &x);
            for k in 0..2 {
                assert!((g[k] - f[k]).abs() < 1e-7, "{s:?}");
            }
        }
    }

    #[test]
    fn classification() {
        assert_eq!(Surface::Paraboloid.curvature_class(2).unwrap(), CurvatureClass::Elliptic);
        let hyp = Surface::Quadratic { a: vec![0.0, 0.5, 0.5, 0.0] };
        assert_eq!(hyp.curvature_class(2).unwrap(), CurvatureClass::Hyperbolic);
        let ell = Surface::Quadratic { a: vec![1.0, 0.2, 0.2, 2.0] };
        assert_eq!(ell.curvature_class(2).unwrap(), CurvatureClass::Elliptic);
        let deg = Surface::Quadratic { a: vec![1.0, 0.0, 0.0, 0.0] };
        assert!(deg.curvature_class(2).is_err());
    }

    #[test]
    fn fractional_hessian_eigenvalues() {
        let s = Surface::Fractional { alpha: 3.0 };
        let x = [0.6, 0.8];
        let ev = sym_eigenvalues(&s.hess(&x), 2);
        let mut ev = ev.clone();
        ev.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert!((ev[0] - 3.0).abs() < 1e-12);
        assert!((ev[1] - 6.0).abs() < 1e-12);
    }
}
