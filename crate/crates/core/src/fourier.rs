//! Lattice Fourier sums. `AxisTransform` evaluates
//! `out_m = sum_j c_j e((xi0 + j hxi)(x0 + m hx))` exactly (up to rounding)
//! with one FFT when `hxi * hx = 1/P` for an integer `P`, and with a
//! chirp-z (Bluestein) convolution otherwise.

use std::sync::Arc;

use rustfft::{Fft, FftPlanner};

use crate::field::{FrequencyField, Lattice};
use crate::{e, C64};

enum Kind {
    Fft { p: usize, plan: Arc<dyn Fft<f64>> },
    Czt { l: usize, fwd: Arc<dyn Fft<f64>>, inv: Arc<dyn Fft<f64>>, khat: Vec<C64>, chirp: Vec<C64> },
}

pub struct AxisTransform {
    pub nxi: usize,
    pub nx: usize,
    pre: Vec<C64>,
    post: Vec<C64>,
    kind: Kind,
}

impl AxisTransform {
    pub fn new(xi0: f64, hxi: f64, nxi: usize, x0: f64, hx: f64, nx: usize) -> Self {
        let pre = (0..nxi).map(|j| e(j as f64 * hxi * x0)).collect();
        let post = (0..nx).map(|m| e(xi0 * (x0 + m as f64 * hx))).collect();
        let beta = hxi * hx;
        let mut planner = FftPlanner::new();
        let pf = if beta > 0.0 { 1.0 / beta } else { f64::INFINITY };
        let p = pf.round();
        let fast = pf.is_finite()
            && (pf - p).abs() < 1e-9 * p
            && p as usize >= nxi
            && (p as usize) <= 4 * nxi.max(nx) + 64;
        let kind = if fast {
            let p = p as usize;
            Kind::Fft { p, plan: planner.plan_fft_inverse(p) }
        } else {
            let l = (nxi + nx).max(2).next_power_of_two();
            let fwd = planner.plan_fft_forward(l);
            let inv = planner.plan_fft_inverse(l);
            let big = nxi.max(nx);
            let chirp: Vec<C64> = (0..big).map(|j| e(beta * (j as f64) * (j as f64) / 2.0)).collect();
            let mut k = vec![C64::new(0.0, 0.0); l];
            for d in -(nxi as i64 - 1)..(nx as i64) {
                let idx = d.rem_euclid(l as i64) as usize;
                k[idx] = e(-beta * (d as f64) * (d as f64) / 2.0);
            }
            fwd.process(&mut k);
            Kind::Czt { l, fwd, inv, khat: k, chirp }
        };
        AxisTransform { nxi, nx, pre, post, kind }
    }

    pub fn apply(&self, input: &[C64], out: &mut [C64]) {
        debug_assert_eq!(input.len(), self.nxi);
        debug_assert_eq!(out.len(), self.nx);
        match &self.kind {
            Kind::Fft { p, plan } => {
                let mut buf = vec![C64::new(0.0, 0.0); *p];
                for j in 0..self.nxi {
                    buf[j] = input[j] * self.pre[j];
                }
                plan.process(&mut buf);
                for m in 0..self.nx {
                    out[m] = self.post[m] * buf[m % p];
                }
            }
            Kind::Czt { l, fwd, inv, khat, chirp } => {
                let mut buf = vec![C64::new(0.0, 0.0); *l];
                for j in 0..self.nxi {
                    buf[j] = input[j] * self.pre[j] * chirp[j];
                }
                fwd.process(&mut buf);
                for (b, k) in buf.iter_mut().zip(khat) {
                    *b *= *k;
                }
                inv.process(&mut buf);
                let s = 1.0 / *l as f64;
                for m in 0..self.nx {
                    out[m] = self.post[m] * chirp[m] * buf[m] * s;
                }
            }
        }
    }
}

/// Applies one `AxisTransform` per axis to row-major `values`.
pub fn transform_nd(values: &[C64], dims: &[usize], transforms: &[AxisTransform]) -> (Vec<C64>, Vec<usize>) {
    let mut cur = values.to_vec();
    let mut cd = dims.to_vec();
    for (k, tr) in transforms.iter().enumerate() {
        assert_eq!(cd[k], tr.nxi);
        let inner: usize = cd[k + 1..].iter().product();
        let outer: usize = cd[..k].iter().product();
        let lines = inner * outer;
        let (nin, nout) = (cd[k], tr.nx);
        let cur_ref = &cur;
        let outs: Vec<Vec<C64>> = crate::par::map_range(lines, |li| {
            let (o, i) = (li / inner, li % inner);
            let base = o * nin * inner + i;
            let line: Vec<C64> = (0..nin).map(|j| cur_ref[base + j * inner]).collect();
            let mut res = vec![C64::new(0.0, 0.0); nout];
            if line.iter().any(|v| v.norm_sqr() != 0.0) {
                tr.apply(&line, &mut res);
            }
            res
        });
        let mut next = vec![C64::new(0.0, 0.0); outer * nout * inner];
        for (li, res) in outs.into_iter().enumerate() {
            let (o, i) = (li / inner, li % inner);
            let base = o * nout * inner + i;
            for (m, v) in res.into_iter().enumerate() {
                next[base + m * inner] = v;
            }
        }
        cur = next;
        cd[k] = nout;
    }
    (cur, cd)
}

/// Transforms from the lattice of `from` to the nodes of `to`, axis by axis.
pub fn plan_axes(from: &Lattice, to: &Lattice) -> Vec<AxisTransform> {
    (0..from.ndim())
        .map(|k| AxisTransform::new(from.origin[k], from.spacing[k], from.dims[k], to.origin[k], to.spacing[k], to.dims[k]))
        .collect()
}

/// The periodic physical lattice dual to `f`: period `1/h` per axis, `N`
/// nodes, centered.
pub fn natural_lattice(f: &FrequencyField) -> Lattice {
    natural_lattice_sized(&f.lattice, &f.lattice.dims)
}

pub fn natural_lattice_sized(xi: &Lattice, sizes: &[usize]) -> Lattice {
    let d = xi.ndim();
    let mut origin = Vec::with_capacity(d);
    let mut spacing = Vec::with_capacity(d);
    for k in 0..d {
        let hx = 1.0 / (sizes[k] as f64 * xi.spacing[k]);
        spacing.push(hx);
        origin.push(-((sizes[k] / 2) as f64) * hx);
    }
    Lattice::new(origin, spacing, sizes.to_vec())
}

/// `F(x) = sum_j f_j e(xi_j . x) h^d` on the nodes of `x`.
pub fn to_physical(f: &FrequencyField, x: &Lattice) -> Vec<C64> {
    let w = f.lattice.cell_volume();
    let scaled: Vec<C64> = f.values.iter().map(|v| v * w).collect();
    let tr = plan_axes(&f.lattice, x);
    transform_nd(&scaled, &f.lattice.dims, &tr).0
}

/// `f_j = sum_m F_m e(-xi_j . x_m) hx^d` on the nodes of `xi`.
pub fn to_frequency(values: &[C64], x: &Lattice, xi: &Lattice) -> FrequencyField {
    let w = x.cell_volume();
    let conj: Vec<C64> = values.iter().map(|v| v.conj() * w).collect();
    let tr = plan_axes(x, xi);
    let (out, _) = transform_nd(&conj, &x.dims, &tr);
    let values = out.into_iter().map(|v| v.conj()).collect();
    let mut f = FrequencyField { lattice: xi.clone(), values, support: crate::field::BoxRegion::new(xi.lo(), xi.hi()) };
    f.tighten_support();
    f
}

/// `| ||f||_2 - ||f^||_2 | / ||f||_2` through the forward transform.
pub fn fourier_pair_check(f: &FrequencyField) -> f64 {
    let nf = f.l2_norm();
    if nf == 0.0 {
        return 0.0;
    }
    let x = natural_lattice(f);
    let big = to_physical(f, &x);
    let nb = (big.iter().map(|v| v.norm_sqr()).sum::<f64>() * x.cell_volume()).sqrt();
    (nf - nb).abs() / nf
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    fn direct(c: &[C64], xi0: f64, hxi: f64, x0: f64, hx: f64, nx: usize) -> Vec<C64> {
        (0..nx)
            .map(|m| {
                let x = x0 + m as f64 * hx;
                c.iter().enumerate().map(|(j, v)| v * e((xi0 + j as f64 * hxi) * x)).sum()
            })
            .collect()
    }

    #[test]
    fn axis_transform_matches_direct_sum() {
        let mut r = rng::stream(5, 0);
        let c: Vec<C64> = (0..37).map(|_| rng::complex_normal(&mut r)).collect();
        for &(xi0, hxi, x0, hx, nx) in &[
            (-0.5, 1.0 / 36.0, -18.0, 1.0, 36usize),
            (-1.0, 0.05, -3.3, 0.173, 50),
            (0.2, 0.013, 10.0, 0.9, 17),
        ] {
            let tr = AxisTransform::new(xi0, hxi, c.len(), x0, hx, nx);
            let mut out = vec![C64::new(0.0, 0.0); nx];
            tr.apply(&c, &mut out);
            let d = direct(&c, xi0, hxi, x0, hx, nx);
            let scale: f64 = c.iter().map(|v| v.norm()).sum();
            for (a, b) in out.iter().zip(&d) {
                assert!((a - b).norm() < 1e-12 * scale, "{a} {b}");
            }
        }
    }

    fn gaussian_field(seed: u64, h: f64) -> FrequencyField {
        let mut r = rng::stream(seed, 1);
        let c = [rng::uniform(&mut r, -0.3, 0.3), rng::uniform(&mut r, -0.3, 0.3)];
        let w = rng::uniform(&mut r, 0.05, 0.2);
        let x0 = [rng::uniform(&mut r, -5.0, 5.0), rng::uniform(&mut r, -5.0, 5.0)];
        FrequencyField::from_fn(Lattice::through_zero(&[-1.0, -1.0], &[1.0, 1.0], h), |p| {
            let q = ((p[0] - c[0]).powi(2) + (p[1] - c[1]).powi(2)) / (w * w);
            if q > 40.0 {
                C64::new(0.0, 0.0)
            } else {
                (-q).exp() * e(-(p[0] * x0[0] + p[1] * x0[1]))
            }
        })
    }

    #[test]
    fn plancherel_battery() {
        for seed in 0..20 {
            let f = gaussian_field(seed, 1.0 / 64.0);
            assert!(fourier_pair_check(&f) <= 1e-10);
        }
    }

    #[test]
    fn single_harmonic_and_zero() {
        let mut f = FrequencyField::zeros_on_cube(2, 1.0 / 16.0);
        let mid = f.values.len() / 3;
        f.values[mid] = C64::new(1.0, -2.0);
        assert!(fourier_pair_check(&f) <= 1e-12);
        let z = FrequencyField::zeros_on_cube(2, 0.25);
        assert_eq!(fourier_pair_check(&z), 0.0);
    }

    #[test]
    fn round_trip() {
        let f = gaussian_field(3, 1.0 / 32.0);
        let x = natural_lattice(&f);
        let big = to_physical(&f, &x);
        let back = to_frequency(&big, &x, &f.lattice);
        let err: f64 = f.values.iter().zip(&back.values).map(|(a, b)| (a - b).norm_sqr()).sum::<f64>().sqrt();
        let nrm: f64 = f.values.iter().map(|a| a.norm_sqr()).sum::<f64>().sqrt();
        assert!(err <= 1e-12 * nrm);
    }
}
