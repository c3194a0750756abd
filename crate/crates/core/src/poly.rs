//! Dense-enough multivariate polynomials with real coefficients.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Poly {
    pub nvars: usize,
    /// (exponents, coefficient); kept merged and sorted by exponent vector.
    pub terms: Vec<(Vec<u32>, f64)>,
}

/// All exponent vectors of total degree `<= d`, graded then lexicographic.
pub fn monomials_up_to(nvars: usize, d: u32) -> Vec<Vec<u32>> {
    let mut out = Vec::new();
    for deg in 0..=d {
        let mut cur = vec![0u32; nvars];
        fill(&mut out, &mut cur, 0, deg);
    }
    out
}

fn fill(out: &mut Vec<Vec<u32>>, cur: &mut Vec<u32>, k: usize, left: u32) {
    if k + 1 == cur.len() {
        cur[k] = left;
        out.push(cur.clone());
        return;
    }
    for a in (0..=left).rev() {
        cur[k] = a;
        fill(out, cur, k + 1, left - a);
    }
    cur[k] = 0;
}

impl Poly {
    pub fn zero(nvars: usize) -> Self {
        Poly { nvars, terms: Vec::new() }
    }

    pub fn constant(nvars: usize, c: f64) -> Self {
        Poly::from_terms(nvars, vec![(vec![0; nvars], c)])
    }

    pub fn variable(nvars: usize, i: usize) -> Self {
        let mut e = vec![0; nvars];
        e[i] = 1;
        Poly::from_terms(nvars, vec![(e, 1.0)])
    }

    pub fn from_terms(nvars: usize, terms: Vec<(Vec<u32>, f64)>) -> Self {
        let mut map: BTreeMap<Vec<u32>, f64> = BTreeMap::new();
        for (e, c) in terms {
            assert_eq!(e.len(), nvars);
            *map.entry(e).or_insert(0.0) += c;
        }
        Poly { nvars, terms: map.into_iter().filter(|(_, c)| *c != 0.0).collect() }
    }

    /// Coefficients listed against `monomials_up_to(nvars, d)`.
    pub fn from_coeffs(nvars: usize, d: u32, coeffs: &[f64]) -> Self {
        let mons = monomials_up_to(nvars, d);
        assert_eq!(mons.len(), coeffs.len());
        Poly::from_terms(nvars, mons.into_iter().zip(coeffs.iter().cloned()).collect())
    }

    pub fn degree(&self) -> u32 {
        self.terms.iter().map(|(e, _)| e.iter().sum::<u32>()).max().unwrap_or(0)
    }

    pub fn coeff(&self, exps: &[u32]) -> f64 {
        self.terms.iter().find(|(e, _)| e.as_slice() == exps).map(|t| t.1).unwrap_or(0.0)
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        self.terms
            .iter()
            .map(|(e, c)| c * e.iter().zip(x).map(|(&k, &v)| v.powi(k as i32)).product::<f64>())
            .sum()
    }

    pub fn grad(&self, x: &[f64]) -> Vec<f64> {
        let mut g = vec![0.0; self.nvars];
        for (e, c) in &self.terms {
            for i in 0..self.nvars {
                if e[i] == 0 {
                    continue;
                }
                let mut t = c * e[i] as f64;
                for (k, (&ek, &xk)) in e.iter().zip(x).enumerate() {
                    let p = if k == i { ek - 1 } else { ek };
                    t *= xk.powi(p as i32);
                }
                g[i] += t;
            }
        }
        g
    }

    /// Row-major Hessian.
    pub fn hess(&self, x: &[f64]) -> Vec<f64> {
        let n = self.nvars;
        let mut h = vec![0.0; n * n];
        for (e, c) in &self.terms {
            for i in 0..n {
                for j in 0..n {
                    let mut ex = e.clone();
                    let mut t = *c;
                    if ex[i] == 0 {
                        continue;
                    }
                    t *= ex[i] as f64;
                    ex[i] -= 1;
                    if ex[j] == 0 {
                        continue;
                    }
                    t *= ex[j] as f64;
                    ex[j] -= 1;
                    for (k, &ek) in ex.iter().enumerate() {
                        t *= x[k].powi(ek as i32);
                    }
                    h[i * n + j] += t;
                }
            }
        }
        h
    }

    pub fn add(&self, o: &Poly) -> Poly {
        let mut t = self.terms.clone();
        t.extend(o.terms.iter().cloned());
        Poly::from_terms(self.nvars, t)
    }

    pub fn scale(&self, s: f64) -> Poly {
        Poly::from_terms(self.nvars, self.terms.iter().map(|(e, c)| (e.clone(), c * s)).collect())
    }

    pub fn sub(&self, o: &Poly) -> Poly {
        self.add(&o.scale(-1.0))
    }

    pub fn mul(&self, o: &Poly) -> Poly {
        let mut t = Vec::with_capacity(self.terms.len() * o.terms.len());
        for (ea, ca) in &self.terms {
            for (eb, cb) in &o.terms {
                t.push((ea.iter().zip(eb).map(|(a, b)| a + b).collect(), ca * cb));
            }
        }
        Poly::from_terms(self.nvars, t)
    }

    pub fn pow(&self, k: u32) -> Poly {
        let mut out = Poly::constant(self.nvars, 1.0);
        for _ in 0..k {
            out = out.mul(self);
        }
        out
    }

    /// `y -> p(A y + b)` with `A` row-major `nvars x nvars`.
    pub fn compose_affine(&self, a: &[f64], b: &[f64]) -> Poly {
        let n = self.nvars;
        let lin: Vec<Poly> = (0..n)
            .map(|i| {
                let mut t = vec![(vec![0; n], b[i])];
                for k in 0..n {
                    let mut e = vec![0; n];
                    e[k] = 1;
                    t.push((e, a[i * n + k]));
                }
                Poly::from_terms(n, t)
            })
            .collect();
        let mut out = Poly::zero(n);
        for (e, c) in &self.terms {
            let mut term = Poly::constant(n, *c);
            for i in 0..n {
                if e[i] > 0 {
                    term = term.mul(&lin[i].pow(e[i]));
                }
            }
            out = out.add(&term);
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn monomial_count() {
        assert_eq!(monomials_up_to(3, 1).len(), 4);
        assert_eq!(monomials_up_to(3, 2).len(), 10);
        assert_eq!(monomials_up_to(2, 3).len(), 10);
    }

    #[test]
    fn eval_grad_hess() {
        // p = x^2 y + 3 z - 1
        let p = Poly::from_terms(3, vec![(vec![2, 1, 0], 1.0), (vec![0, 0, 1], 3.0), (vec![0, 0, 0], -1.0)]);
        let x = [1.5, -2.0, 0.5];
        assert!((p.eval(&x) - (2.25 * -2.0 + 1.5 - 1.0)).abs() < 1e-14);
        let g = p.grad(&x);
        assert!((g[0] - 2.0 * 1.5 * -2.0).abs() < 1e-14);
        assert!((g[1] - 2.25).abs() < 1e-14);
        assert!((g[2] - 3.0).abs() < 1e-14);
        let h = p.hess(&x);
        assert!((h[0] - 2.0 * -2.0).abs() < 1e-14);
        assert!((h[1] - 3.0).abs() < 1e-14 && (h[3] - 3.0).abs() < 1e-14);
        assert_eq!(h[8], 0.0);
    }

    #[test]
    fn affine_composition_matches_pointwise() {
        let p = Poly::from_terms(2, vec![(vec![1, 1], 1.0), (vec![3, 0], 0.2), (vec![0, 2], -0.5)]);
        let a = [0.6, -0.8, 0.8, 0.6];
        let b = [0.1, -0.3];
        let q = p.compose_affine(&a, &b);
        for &(u, v) in &[(0.3, 0.7), (-1.0, 0.2), (2.0, -1.5)] {
            let x = [a[0] * u + a[1] * v + b[0], a[2] * u + a[3] * v + b[1]];
            assert!((q.eval(&[u, v]) - p.eval(&x)).abs() < 1e-12);
        }
    }
}
