//! Wave packet decomposition at scale `r`: caps of radius about `r^{-1/2}`,
//! spatial translates on a lattice of spacing about `r^{(1+delta)/2}`, and
//! the tubes they live on.
//!
//! Each packet is `1_{2 theta} * (eta_v^ conv (psi_theta f))`, computed on the
//! window `2 theta` where the convolution becomes a product in physical space.
//! Storage is lazy: the set keeps the (anchored) input and the index table,
//! and packets are rebuilt one FFT at a time.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;
use std::sync::Arc;

use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::extension::extend;
use crate::field::{write_dump, BoxRegion, FrequencyField, Lattice};
use crate::profile::{bspline3, bump_pu};
use crate::surface::Surface;
use crate::{e, LabError, Result, C64};

/// Implicit constant in the tube order relation.
pub const ORDER_CONSTANT: f64 = 4.0;

/// Relative energy below which a packet is dropped.
pub const DROP_TOLERANCE: f64 = 1e-22;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Cap {
    pub center: Vec<f64>,
    pub radius: f64,
    pub index: usize,
    pub k: Vec<i64>,
}

/// Square caps `k s + (-s, s)^d` with `s = m h`, for all `k` whose cap meets
/// `[-1, 1]^d`. Every point lies in at most `2^d` caps.
#[derive(Clone, Debug, PartialEq)]
pub struct CapCover {
    pub d: usize,
    pub h: f64,
    pub m: usize,
    pub s: f64,
    pub kmax: i64,
}

impl CapCover {
    pub fn new(d: usize, r: f64, h: f64) -> Result<Self> {
        let m = (r.powf(-0.5) / h).round() as usize;
        if m < 2 {
            return Err(LabError::Resolution(format!("frequency spacing {h} cannot resolve caps at r = {r}")));
        }
        let s = m as f64 * h;
        let kmax = ((1.0 / s) + 1.0 - 1e-9).floor() as i64;
        Ok(CapCover { d, h, m, s, kmax })
    }

    pub fn side(&self) -> usize {
        (2 * self.kmax + 1) as usize
    }

    pub fn len(&self) -> usize {
        self.side().pow(self.d as u32)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn index(&self, k: &[i64]) -> usize {
        k.iter().fold(0, |acc, &ki| acc * self.side() + (ki + self.kmax) as usize)
    }

    pub fn cap(&self, index: usize) -> Cap {
        let mut k = vec![0i64; self.d];
        let mut rest = index;
        for a in (0..self.d).rev() {
            k[a] = (rest % self.side()) as i64 - self.kmax;
            rest /= self.side();
        }
        Cap { center: k.iter().map(|&ki| ki as f64 * self.s).collect(), radius: self.s, index, k }
    }

    pub fn caps(&self) -> Vec<Cap> {
        (0..self.len()).map(|i| self.cap(i)).collect()
    }

    /// Caps whose center lies within Euclidean distance `dist` of `p`.
    pub fn near(&self, p: &[f64], dist: f64) -> Vec<Cap> {
        let lo: Vec<i64> = p.iter().map(|&x| (((x - dist) / self.s).ceil() as i64).max(-self.kmax)).collect();
        let hi: Vec<i64> = p.iter().map(|&x| (((x + dist) / self.s).floor() as i64).min(self.kmax)).collect();
        let mut out = Vec::new();
        if lo.iter().zip(&hi).any(|(a, b)| a > b) {
            return out;
        }
        let mut k = lo.clone();
        loop {
            let c: Vec<f64> = k.iter().map(|&ki| ki as f64 * self.s).collect();
            if dist2(&c, p) <= dist * dist {
                out.push(self.cap(self.index(&k)));
            }
            let mut a = self.d;
            loop {
                if a == 0 {
                    return out;
                }
                a -= 1;
                if k[a] < hi[a] {
                    k[a] += 1;
                    break;
                }
                k[a] = lo[a];
            }
        }
    }

    /// `psi_theta(xi)`, a tensor product of `bump_pu`.
    pub fn psi(&self, cap: &Cap, xi: &[f64]) -> f64 {
        xi.iter().zip(&cap.center).map(|(x, c)| bump_pu((x - c) / self.s)).product()
    }
}

/// Translation lattice `a' Z^d` clipped to one period `L = 1/h`, where
/// `a' = L / ceil(L / r^{(1+delta)/2})` so the lattice tiles the torus.
#[derive(Clone, Debug, PartialEq)]
pub struct VLattice {
    pub period: f64,
    pub a: f64,
    pub count: usize,
    pub jmin: i64,
}

impl VLattice {
    pub fn new(r: f64, delta: f64, h: f64) -> Self {
        let period = 1.0 / h;
        let a0 = r.powf((1.0 + delta) / 2.0);
        let count = (period / a0 - 1e-9).ceil().max(1.0) as usize;
        VLattice { period, a: period / count as f64, count, jmin: -((count / 2) as i64) }
    }

    pub fn jmax(&self) -> i64 {
        self.jmin + self.count as i64 - 1
    }

    /// `eta_j(x)`: cubic B-spline centered at `-a' j`, periodized.
    pub fn eta(&self, j: i64, x: f64) -> f64 {
        let mut y = x + self.a * j as f64;
        y -= self.period * (y / self.period).round();
        bspline3(y / self.a)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tube {
    pub cap: Cap,
    pub v: Vec<f64>,
    pub v_index: Vec<i64>,
    pub x0: Vec<f64>,
    pub r: f64,
    pub delta: f64,
    /// `grad h` at the cap center.
    pub slope: Vec<f64>,
}

impl Tube {
    pub fn new(surface: &Surface, cap: Cap, v_index: Vec<i64>, a: f64, x0: Vec<f64>, r: f64, delta: f64) -> Tube {
        let slope = surface.grad(&cap.center);
        let v = v_index.iter().map(|&j| j as f64 * a).collect();
        Tube { cap, v, v_index, x0, r, delta, slope }
    }

    pub fn width(&self) -> f64 {
        self.r.powf(0.5 + self.delta)
    }

    pub fn direction(&self) -> Vec<f64> {
        let mut v: Vec<f64> = self.slope.iter().map(|x| -x).collect();
        v.push(1.0);
        let n = norm(&v);
        v.iter().map(|x| x / n).collect()
    }

    /// Horizontal offset `x' - x0' + (x_n - x0_n) grad h + v`.
    fn offset(&self, x: &[f64]) -> Vec<f64> {
        let d = self.v.len();
        let t = x[d] - self.x0[d];
        (0..d).map(|k| x[k] - self.x0[k] + t * self.slope[k] + self.v[k]).collect()
    }

    pub fn contains_scaled(&self, x: &[f64], c: f64) -> bool {
        norm(&self.offset(x)) <= c * self.width() && dist2(x, &self.x0) <= self.r * self.r
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        self.contains_scaled(x, 1.0)
    }

    /// Whether the tube meets `B_r(x0)`: the ball maps to an ellipsoid with
    /// semi-axes `r sqrt(1 + |g|^2)` along `g` and `r` across it.
    pub fn is_nonempty(&self) -> bool {
        let g = &self.slope;
        let gn = norm(g);
        let (p, q) = if gn == 0.0 {
            (0.0, norm(&self.v))
        } else {
            let along: f64 = self.v.iter().zip(g).map(|(a, b)| a * b).sum::<f64>() / gn;
            let perp2 = (dist2(&self.v, &vec![0.0; g.len()]) - along * along).max(0.0);
            (along.abs(), perp2.sqrt())
        };
        let ra = self.r * (1.0 + gn * gn).sqrt();
        let w = self.width();
        let rad = (p * p + q * q).sqrt();
        if rad <= self.r + w {
            return true;
        }
        if rad > ra + w {
            return false;
        }
        dist_to_ellipse(ra, self.r, p, q) <= w
    }

    /// The core line clipped to `B_{r + w}(x0)`; `None` when it misses.
    pub fn core_segment(&self) -> Option<(Vec<f64>, Vec<f64>)> {
        let d = self.v.len();
        let big = self.r + self.width();
        let g2: f64 = self.slope.iter().map(|x| x * x).sum();
        let vg: f64 = self.v.iter().zip(&self.slope).map(|(a, b)| a * b).sum();
        let v2: f64 = self.v.iter().map(|x| x * x).sum();
        let (qa, qb, qc) = (1.0 + g2, 2.0 * vg, v2 - big * big);
        let disc = qb * qb - 4.0 * qa * qc;
        if disc < 0.0 {
            return None;
        }
        let sq = disc.sqrt();
        let point = |t: f64| {
            let mut p: Vec<f64> = (0..d).map(|k| self.x0[k] - self.v[k] - t * self.slope[k]).collect();
            p.push(self.x0[d] + t);
            p
        };
        Some((point((-qb - sq) / (2.0 * qa)), point((-qb + sq) / (2.0 * qa))))
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Distance from `(p, q)`, `p, q >= 0`, to the solid ellipse
/// `x^2/a^2 + y^2/b^2 <= 1` with `a >= b`, by bisection on the Lagrange
/// multiplier.
pub fn dist_to_ellipse(a: f64, b: f64, p: f64, q: f64) -> f64 {
    let (z0, z1) = (p / a, q / b);
    let g = z0 * z0 + z1 * z1 - 1.0;
    if g <= 0.0 {
        return 0.0;
    }
    if q == 0.0 {
        let numer = a * p;
        let denom = a * a - b * b;
        if numer < denom {
            let xde = numer / denom;
            let (x0, x1) = (a * xde, b * (1.0 - xde * xde).max(0.0).sqrt());
            return ((x0 - p).powi(2) + x1 * x1).sqrt();
        }
        return (p - a).abs();
    }
    if p == 0.0 {
        return (q - b).abs();
    }
    let r0 = (a / b).powi(2);
    let n0 = r0 * z0;
    let (mut s0, mut s1) = (z1 - 1.0, (n0 * n0 + z1 * z1).sqrt() - 1.0);
    let mut sm = 0.0;
    for _ in 0..200 {
        sm = 0.5 * (s0 + s1);
        if sm == s0 || sm == s1 {
            break;
        }
        let (t0, t1) = (n0 / (sm + r0), z1 / (sm + 1.0));
        let gg = t0 * t0 + t1 * t1 - 1.0;
        if gg > 0.0 {
            s0 = sm;
        } else if gg < 0.0 {
            s1 = sm;
        } else {
            break;
        }
    }
    let x0 = r0 * p / (sm + r0);
    let x1 = q / (sm + 1.0);
    ((x0 - p).powi(2) + (x1 - q).powi(2)).sqrt()
}

/// Distance between segments `[p0, p1]` and `[q0, q1]`.
pub fn segment_distance(p0: &[f64], p1: &[f64], q0: &[f64], q1: &[f64]) -> f64 {
    let sub = |a: &[f64], b: &[f64]| -> Vec<f64> { a.iter().zip(b).map(|(x, y)| x - y).collect() };
    let dot = |a: &[f64], b: &[f64]| -> f64 { a.iter().zip(b).map(|(x, y)| x * y).sum() };
    let d1 = sub(p1, p0);
    let d2 = sub(q1, q0);
    let r = sub(p0, q0);
    let (a, ee, f) = (dot(&d1, &d1), dot(&d2, &d2), dot(&d2, &r));
    let eps = 1e-300;
    let (s, t);
    if a <= eps && ee <= eps {
        return norm(&r);
    }
    if a <= eps {
        s = 0.0;
        t = (f / ee).clamp(0.0, 1.0);
    } else {
        let c = dot(&d1, &r);
        if ee <= eps {
            t = 0.0;
            s = (-c / a).clamp(0.0, 1.0);
        } else {
            let b = dot(&d1, &d2);
            let denom = a * ee - b * b;
            let mut s0 = if denom > 1e-14 * a * ee { ((b * f - c * ee) / denom).clamp(0.0, 1.0) } else { 0.0 };
            let mut t0 = (b * s0 + f) / ee;
            if t0 < 0.0 {
                t0 = 0.0;
                s0 = (-c / a).clamp(0.0, 1.0);
            } else if t0 > 1.0 {
                t0 = 1.0;
                s0 = ((b - c) / a).clamp(0.0, 1.0);
            }
            s = s0;
            t = t0;
        }
    }
    let cp: Vec<f64> = p0.iter().zip(&d1).map(|(x, y)| x + s * y).collect();
    let cq: Vec<f64> = q0.iter().zip(&d2).map(|(x, y)| x + t * y).collect();
    norm(&sub(&cp, &cq))
}

/// Core-to-core distance minus both widths, floored at zero.
pub fn tube_distance(a: &Tube, b: &Tube) -> f64 {
    match (a.core_segment(), b.core_segment()) {
        (Some((p0, p1)), Some((q0, q1))) => (segment_distance(&p0, &p1, &q0, &q1) - a.width() - b.width()).max(0.0),
        _ => f64::INFINITY,
    }
}

/// `T_small < T_big`: caps within `4 r_small^{-1/2}` and tubes within
/// `4 r_big^{1/2+delta}`.
pub fn tube_order(small: &Tube, big: &Tube) -> bool {
    tube_order_with(small, big, ORDER_CONSTANT)
}

pub fn tube_order_with(small: &Tube, big: &Tube, c: f64) -> bool {
    if small.r > big.r * (1.0 + 1e-12) {
        return false;
    }
    let cap_ok = dist2(&small.cap.center, &big.cap.center).sqrt() <= c * small.r.powf(-0.5);
    cap_ok && tube_distance(small, big) <= c * big.r.powf(0.5 + big.delta)
}

/// All nonempty tubes of the scale-`r` family anchored at `x0`.
pub fn tubes_in_ball(surface: &Surface, d: usize, x0: &[f64], r: f64, delta: f64, h: f64) -> Result<Vec<Tube>> {
    let cover = CapCover::new(d, r, h)?;
    let vl = VLattice::new(r, delta, h);
    let caps = cover.caps();
    let per: Vec<Vec<Tube>> = crate::par::map_slice(&caps, |cap| {
        let mut out = Vec::new();
        for_each_index(d, vl.jmin, vl.jmax(), |j| {
            let t = Tube::new(surface, cap.clone(), j.to_vec(), vl.a, x0.to_vec(), r, delta);
            if t.is_nonempty() {
                out.push(t);
            }
        });
        out
    });
    Ok(per.into_iter().flatten().collect())
}

fn for_each_index<F: FnMut(&[i64])>(d: usize, lo: i64, hi: i64, f: F) {
    for_each_box(&vec![lo; d], &vec![hi; d], f)
}

fn for_each_box<F: FnMut(&[i64])>(lo: &[i64], hi: &[i64], mut f: F) {
    let d = lo.len();
    if lo.iter().zip(hi).any(|(a, b)| a > b) {
        return;
    }
    let mut k = lo.to_vec();
    loop {
        f(&k);
        let mut a = d;
        loop {
            if a == 0 {
                return;
            }
            a -= 1;
            if k[a] < hi[a] {
                k[a] += 1;
                break;
            }
            k[a] = lo[a];
        }
    }
}

/// `up W`: parent tubes at scale `r` anchored at `x0` that dominate some
/// member of `W` in the tube order. Sorted by cap index, then `v`.
///
/// Members of `W` must share scale, anchor and `delta`, and come from the
/// lattice with spacing `h`.
pub fn lift_tubes(surface: &Surface, w: &[Tube], x0: &[f64], r: f64, delta: f64, h: f64) -> Result<Vec<Tube>> {
    if w.is_empty() {
        return Ok(Vec::new());
    }
    let d = w[0].v.len();
    let (rho, x1) = (w[0].r, w[0].x0.clone());
    let svl = VLattice::new(rho, w[0].delta, h);
    let cover = CapCover::new(d, r, h)?;
    let vl = VLattice::new(r, delta, h);
    let wb = r.powf(0.5 + delta);
    let ws = w[0].width();
    let tol = ORDER_CONSTANT * wb + wb + ws;
    let cap_tol = ORDER_CONSTANT * rho.powf(-0.5);
    // Members grouped by cap, and the radius around x1 holding every core.
    let mut groups: Vec<(Cap, BTreeMap<Vec<i64>, usize>)> = Vec::new();
    let mut reach: f64 = 0.0;
    for (i, t) in w.iter().enumerate() {
        if let Some((p0, p1)) = t.core_segment() {
            reach = reach.max(dist2(&p0, &x1).sqrt()).max(dist2(&p1, &x1).sqrt());
        }
        match groups.iter_mut().find(|(c, _)| c.index == t.cap.index) {
            Some((_, m)) => {
                m.insert(t.v_index.clone(), i);
            }
            None => {
                let mut m = BTreeMap::new();
                m.insert(t.v_index.clone(), i);
                groups.push((t.cap.clone(), m));
            }
        }
    }
    let per: Vec<Vec<Tube>> = crate::par::map_range(cover.len(), |ci| {
        let cap = cover.cap(ci);
        let close: Vec<&(Cap, BTreeMap<Vec<i64>, usize>)> =
            groups.iter().filter(|(c, _)| dist2(&c.center, &cap.center).sqrt() <= cap_tol).collect();
        let mut out = Vec::new();
        if close.is_empty() {
            return out;
        }
        let g = surface.grad(&cap.center);
        let stretch = (1.0 + g.iter().map(|x| x * x).sum::<f64>()).sqrt();
        let vc: Vec<f64> = (0..d).map(|k| x0[k] - x1[k] - (x1[d] - x0[d]) * g[k]).collect();
        let half = (tol + reach) * stretch + vl.a;
        let lo: Vec<i64> = (0..d).map(|k| (((vc[k] - half) / vl.a).floor() as i64).max(vl.jmin)).collect();
        let hi: Vec<i64> = (0..d).map(|k| (((vc[k] + half) / vl.a).ceil() as i64).min(vl.jmax())).collect();
        for_each_box(&lo, &hi, |j| {
            let t = Tube::new(surface, cap.clone(), j.to_vec(), vl.a, x0.to_vec(), r, delta);
            if !t.is_nonempty() {
                return;
            }
            let Some((p0, p1)) = t.core_segment() else { return };
            let near = closest_on_segment(&p0, &p1, &x1);
            let dn = dist2(&near, &x1).sqrt();
            if dn - reach > tol {
                return;
            }
            // Guesses: members whose cores pass closest to the parent core
            // near x1. Any hit is a witness; otherwise scan everything.
            let pull = if dn > rho { rho / dn } else { 1.0 };
            let inner: Vec<f64> = (0..=d).map(|k| x1[k] + (near[k] - x1[k]) * pull).collect();
            let mut found = false;
            'guess: for (c, members) in &close {
                let gs = surface.grad(&c.center);
                for pt in [&near, &inner] {
                    let vg: Vec<f64> = (0..d).map(|k| x1[k] - pt[k] - (pt[d] - x1[d]) * gs[k]).collect();
                    let base: Vec<i64> = vg.iter().map(|v| (v / svl.a).round() as i64).collect();
                    let lo: Vec<i64> = base.iter().map(|b| b - 1).collect();
                    let hi: Vec<i64> = base.iter().map(|b| b + 1).collect();
                    let mut hit = false;
                    for_each_box(&lo, &hi, |jj| {
                        if !hit {
                            if let Some(&i) = members.get(jj) {
                                hit = tube_order(&w[i], &t);
                            }
                        }
                    });
                    if hit {
                        found = true;
                        break 'guess;
                    }
                }
            }
            if !found {
                found = close.iter().any(|(_, members)| members.values().any(|&i| tube_order(&w[i], &t)));
            }
            if found {
                out.push(t);
            }
        });
        out
    });
    Ok(per.into_iter().flatten().collect())
}

fn closest_on_segment(p0: &[f64], p1: &[f64], x: &[f64]) -> Vec<f64> {
    let dvec: Vec<f64> = p1.iter().zip(p0).map(|(a, b)| a - b).collect();
    let l2: f64 = dvec.iter().map(|v| v * v).sum();
    let t = if l2 == 0.0 { 0.0 } else { (x.iter().zip(p0).zip(&dvec).map(|((a, b), c)| (a - b) * c).sum::<f64>() / l2).clamp(0.0, 1.0) };
    p0.iter().zip(&dvec).map(|(a, b)| a + t * b).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PacketEntry {
    pub cap: usize,
    pub v_index: Vec<i64>,
    pub energy: f64,
    pub nonempty: bool,
}

/// Lazily stored packets of one input at one scale.
#[derive(Clone)]
pub struct WavePacketSet {
    pub surface: Surface,
    pub r: f64,
    pub delta: f64,
    pub x0: Vec<f64>,
    pub truncation_radius: f64,
    pub cover: CapCover,
    pub vlat: VLattice,
    pub entries: Vec<PacketEntry>,
    pub input_norm_sq: f64,
    pub dropped_energy: f64,
    base: FrequencyField,
    base_offset: Vec<i64>,
    fft: Arc<dyn Fft<f64>>,
    ifft: Arc<dyn Fft<f64>>,
    /// `eta_j(x_m)` per translate index, over the window's physical nodes.
    eta: Vec<Vec<f64>>,
    eta_support: Vec<Vec<(usize, f64)>>,
}

impl std::fmt::Debug for WavePacketSet {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("WavePacketSet").field("r", &self.r).field("packets", &self.entries.len()).finish()
    }
}

/// `phi(x, omega) = x'.omega + x_n h(omega)`.
pub fn phase(surface: &Surface, x: &[f64], omega: &[f64]) -> f64 {
    let d = omega.len();
    (0..d).map(|k| x[k] * omega[k]).sum::<f64>() + x[d] * surface.h(omega)
}

/// Splits `f` into packets at scale `r`, anchored at `x0` (pass zeros for
/// the unanchored decomposition).
pub fn decompose(f: &FrequencyField, surface: &Surface, r: f64, delta: f64, x0: &[f64]) -> Result<WavePacketSet> {
    if r < 16.0 {
        return Err(LabError::Scale(format!("r = {r} < 16 degenerates the cap cover")));
    }
    let d = f.dim();
    if x0.len() != d + 1 {
        return Err(LabError::Parameter("anchor must have n = d + 1 coordinates".into()));
    }
    let h = f.lattice.spacing[0];
    let mut base_offset = Vec::with_capacity(d);
    for k in 0..d {
        let o = f.lattice.origin[k] / h;
        if (f.lattice.spacing[k] - h).abs() > 1e-12 * h || (o - o.round()).abs() > 1e-6 {
            return Err(LabError::Parameter("frequency lattice must be h Z^d with equal spacing".into()));
        }
        base_offset.push(o.round() as i64);
    }
    let cover = CapCover::new(d, r, h)?;
    let vlat = VLattice::new(r, delta, h);
    let nw = 4 * cover.m;
    let mut planner = FftPlanner::new();
    let fft = planner.plan_fft_forward(nw);
    let ifft = planner.plan_fft_inverse(nw);
    let hx = vlat.period / nw as f64;
    let eta: Vec<Vec<f64>> = (vlat.jmin..=vlat.jmax())
        .map(|j| (0..nw).map(|m| vlat.eta(j, -vlat.period / 2.0 + m as f64 * hx)).collect())
        .collect();
    let eta_support = eta.iter().map(|row| row.iter().enumerate().filter(|(_, w)| **w != 0.0).map(|(m, w)| (m, *w)).collect()).collect();
    let base = if x0.iter().all(|&c| c == 0.0) { f.clone() } else { f.multiplied(|w| e(phase(surface, x0, w))) };
    let mut set = WavePacketSet {
        surface: surface.clone(),
        r,
        delta,
        x0: x0.to_vec(),
        truncation_radius: 10.0 * r.powf((1.0 + delta) / 2.0),
        cover,
        vlat,
        entries: Vec::new(),
        input_norm_sq: f.l2_norm().powi(2),
        dropped_energy: 0.0,
        base,
        base_offset,
        fft,
        ifft,
        eta,
        eta_support,
    };
    if set.input_norm_sq == 0.0 {
        return Ok(set);
    }
    let caps = set.active_caps();
    let thr = DROP_TOLERANCE * set.input_norm_sq;
    let results: Vec<(Vec<PacketEntry>, f64)> = crate::par::map_slice(&caps, |&ci| {
        let Some(g) = set.cap_physical(ci) else { return (Vec::new(), 0.0) };
        let en = set.translate_energies(&g);
        let mut kept = Vec::new();
        let mut dropped = 0.0;
        let nv = set.vlat.count;
        for (flat, &en) in en.iter().enumerate() {
            if en <= thr {
                dropped += en;
                continue;
            }
            let mut j = vec![0i64; d];
            let mut rest = flat;
            for a in (0..d).rev() {
                j[a] = (rest % nv) as i64 + set.vlat.jmin;
                rest /= nv;
            }
            let tube = Tube::new(surface, set.cover.cap(ci), j.clone(), set.vlat.a, x0.to_vec(), r, delta);
            kept.push(PacketEntry { cap: ci, v_index: j, energy: en, nonempty: tube.is_nonempty() });
        }
        (kept, dropped)
    });
    for (kept, dropped) in results {
        set.entries.extend(kept);
        set.dropped_energy += dropped;
    }
    Ok(set)
}

impl WavePacketSet {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.base.dim()
    }

    pub fn h(&self) -> f64 {
        self.cover.h
    }

    pub fn window_len(&self) -> usize {
        4 * self.cover.m
    }

    pub fn tube(&self, i: usize) -> Tube {
        let en = &self.entries[i];
        Tube::new(&self.surface, self.cover.cap(en.cap), en.v_index.clone(), self.vlat.a, self.x0.clone(), self.r, self.delta)
    }

    /// Tubes of the packets, nonempty ones only.
    pub fn tubes(&self) -> Vec<Tube> {
        (0..self.len()).filter(|&i| self.entries[i].nonempty).map(|i| self.tube(i)).collect()
    }

    pub fn find(&self, cap: usize, v_index: &[i64]) -> Option<usize> {
        self.entries
            .binary_search_by(|en| (en.cap, en.v_index.as_slice()).cmp(&(cap, v_index)))
            .ok()
    }

    pub fn energy_sum(&self) -> f64 {
        crate::par::ordered_sum(&self.entries.iter().map(|e| e.energy).collect::<Vec<_>>())
    }

    /// Caps whose `psi` support meets the input lattice.
    fn active_caps(&self) -> Vec<usize> {
        let d = self.dim();
        let m = self.cover.m as i64;
        let mut lo = vec![0i64; d];
        let mut hi = vec![0i64; d];
        for k in 0..d {
            let a = self.base_offset[k];
            let b = a + self.base.lattice.dims[k] as i64 - 1;
            lo[k] = (a.div_euclid(m) - 1).max(-self.cover.kmax);
            hi[k] = (b.div_euclid(m) + 1).min(self.cover.kmax);
        }
        let mut out = Vec::new();
        for_each_box(&lo, &hi, |k| out.push(self.cover.index(k)));
        out.sort_unstable();
        out
    }

    /// Window lattice of `2 theta`: `nw` nodes from `c - 2s`.
    pub fn window_lattice(&self, cap: usize) -> Lattice {
        let c = self.cover.cap(cap);
        let d = self.dim();
        Lattice::new(
            c.k.iter().map(|&k| (k * self.cover.m as i64 - 2 * self.cover.m as i64) as f64 * self.h()).collect(),
            vec![self.h(); d],
            vec![self.window_len(); d],
        )
    }

    fn window_offset(&self, cap: usize) -> Vec<i64> {
        let c = self.cover.cap(cap);
        let m = self.cover.m as i64;
        c.k.iter().map(|&k| k * m - 2 * m).collect()
    }

    /// `psi_theta f` on the window, or `None` when it vanishes.
    fn window_values(&self, cap: usize) -> Option<Vec<C64>> {
        let d = self.dim();
        let nw = self.window_len();
        let off = self.window_offset(cap);
        let c = self.cover.cap(cap);
        let strides = self.base.lattice.strides();
        // Per axis: window positions with a nonzero weight inside the input.
        let mut axes: Vec<Vec<(usize, usize, f64)>> = Vec::with_capacity(d);
        for a in 0..d {
            let mut list = Vec::new();
            for i in 0..nw {
                let gi = off[a] + i as i64;
                let li = gi - self.base_offset[a];
                if li < 0 || li >= self.base.lattice.dims[a] as i64 {
                    continue;
                }
                let w = bump_pu((gi as f64 * self.h() - c.center[a]) / self.cover.s);
                if w != 0.0 {
                    list.push((i, li as usize * strides[a], w));
                }
            }
            if list.is_empty() {
                return None;
            }
            axes.push(list);
        }
        let mut out = vec![C64::new(0.0, 0.0); nw.pow(d as u32)];
        let mut any = false;
        let lo = vec![0i64; d];
        let hi: Vec<i64> = axes.iter().map(|l| l.len() as i64 - 1).collect();
        for_each_box(&lo, &hi, |k| {
            let mut wflat = 0usize;
            let mut gflat = 0usize;
            let mut w = 1.0;
            for a in 0..d {
                let (i, g, wa) = axes[a][k[a] as usize];
                wflat = wflat * nw + i;
                gflat += g;
                w *= wa;
            }
            let v = self.base.values[gflat];
            if v.norm_sqr() != 0.0 {
                out[wflat] = v * w;
                any = true;
            }
        });
        any.then_some(out)
    }

    fn fft_axes(&self, data: &mut [C64], inverse: bool) {
        let d = self.dim();
        let nw = self.window_len();
        let plan = if inverse { &self.ifft } else { &self.fft };
        let mut line = vec![C64::new(0.0, 0.0); nw];
        for a in 0..d {
            let inner = nw.pow((d - 1 - a) as u32);
            let outer = nw.pow(a as u32);
            for o in 0..outer {
                for i in 0..inner {
                    let base = o * nw * inner + i;
                    for j in 0..nw {
                        line[j] = data[base + j * inner];
                    }
                    plan.process(&mut line);
                    for j in 0..nw {
                        data[base + j * inner] = line[j];
                    }
                }
            }
        }
    }

    fn sign(&self, flat: usize) -> f64 {
        let nw = self.window_len();
        let mut rest = flat;
        let mut s = 0usize;
        for _ in 0..self.dim() {
            s += rest % nw;
            rest /= nw;
        }
        if s % 2 == 0 {
            1.0
        } else {
            -1.0
        }
    }

    /// Physical samples of `psi_theta f` on the window's torus, up to a
    /// unimodular factor and the weight `h^d`.
    fn cap_physical(&self, cap: usize) -> Option<Vec<C64>> {
        let mut w = self.window_values(cap)?;
        for (i, v) in w.iter_mut().enumerate() {
            *v *= self.sign(i);
        }
        self.fft_axes(&mut w, true);
        Some(w)
    }

    /// Back to window frequencies from physical samples.
    fn cap_frequency(&self, mut g: Vec<C64>) -> Vec<C64> {
        self.fft_axes(&mut g, false);
        let s = 1.0 / (self.window_len() as f64).powi(self.dim() as i32);
        for (i, v) in g.iter_mut().enumerate() {
            *v *= self.sign(i) * s;
        }
        g
    }

    /// `||f_{theta,v}||^2` for every translate, by separable contraction.
    fn translate_energies(&self, g: &[C64]) -> Vec<f64> {
        let d = self.dim();
        let nw = self.window_len();
        let nv = self.vlat.count;
        let mut cur: Vec<f64> = g.iter().map(|v| v.norm_sqr()).collect();
        let mut dims = vec![nw; d];
        for a in 0..d {
            let inner: usize = dims[a + 1..].iter().product();
            let outer: usize = dims[..a].iter().product();
            let mut next = vec![0.0; outer * nv * inner];
            for o in 0..outer {
                for (j, eta) in self.eta.iter().enumerate() {
                    let dst = o * nv * inner + j * inner;
                    for (m, &w) in eta.iter().enumerate() {
                        if w == 0.0 {
                            continue;
                        }
                        let w2 = w * w;
                        let src = o * nw * inner + m * inner;
                        for i in 0..inner {
                            next[dst + i] += w2 * cur[src + i];
                        }
                    }
                }
            }
            cur = next;
            dims[a] = nv;
        }
        let scale = (self.h() / nw as f64).powi(d as i32);
        cur.iter().map(|v| v * scale).collect()
    }

    /// `sum_j eta_j(x)` over the given translates, on the window's torus.
    fn eta_sum(&self, vs: &[&[i64]]) -> Vec<f64> {
        let d = self.dim();
        let nw = self.window_len();
        let mut out = vec![0.0; nw.pow(d as u32)];
        let lo = vec![0i64; d];
        for j in vs {
            let rows: Vec<&Vec<(usize, f64)>> = (0..d).map(|a| &self.eta_support[(j[a] - self.vlat.jmin) as usize]).collect();
            let hi: Vec<i64> = rows.iter().map(|r| r.len() as i64 - 1).collect();
            for_each_box(&lo, &hi, |k| {
                let mut flat = 0usize;
                let mut w = 1.0;
                for a in 0..d {
                    let (m, wa) = rows[a][k[a] as usize];
                    flat = flat * nw + m;
                    w *= wa;
                }
                out[flat] += w;
            });
        }
        out
    }

    fn unanchor(&self, f: &mut FrequencyField) {
        if self.x0.iter().any(|&c| c != 0.0) {
            let s = &self.surface;
            let x0 = &self.x0;
            *f = f.multiplied(|w| e(-phase(s, x0, w)));
        }
    }

    /// Sum of the packets of one cap whose translate indices are listed.
    fn cap_sum(&self, cap: usize, vs: &[&[i64]]) -> Option<Vec<C64>> {
        let g = self.cap_physical(cap)?;
        let w = self.eta_sum(vs);
        let prod: Vec<C64> = g.iter().zip(&w).map(|(a, b)| a * b).collect();
        Some(self.cap_frequency(prod))
    }

    /// `f_{theta,v}` on its window `2 theta`.
    pub fn materialize(&self, i: usize) -> FrequencyField {
        let en = &self.entries[i];
        let vals = self.cap_sum(en.cap, &[en.v_index.as_slice()]).unwrap_or_else(|| vec![C64::new(0.0, 0.0); self.window_len().pow(self.dim() as u32)]);
        let lat = self.window_lattice(en.cap);
        let mut f = FrequencyField { support: BoxRegion::new(lat.lo(), lat.hi()), lattice: lat, values: vals };
        self.unanchor(&mut f);
        f.tighten_support();
        f
    }

    /// The input lattice padded by `3 s` on every side; every window fits.
    pub fn padded_lattice(&self) -> Lattice {
        let pad = 3 * self.cover.m;
        let lat = &self.base.lattice;
        Lattice::new(
            lat.origin.iter().map(|o| o - pad as f64 * self.h()).collect(),
            lat.spacing.clone(),
            lat.dims.iter().map(|n| n + 2 * pad).collect(),
        )
    }

    /// `sum f_{theta,v}` over the selected entries, on the padded lattice.
    pub fn partial_sum<F: Fn(&PacketEntry) -> bool + Sync>(&self, keep: F) -> FrequencyField {
        self.sum_entries(self.entries.iter().filter(|en| keep(en)))
    }

    /// `sum f_{theta,v}` over the entries flagged in `mask` (one flag per entry).
    pub fn masked_sum(&self, mask: &[bool]) -> FrequencyField {
        assert_eq!(mask.len(), self.entries.len());
        self.sum_entries(self.entries.iter().zip(mask).filter(|(_, m)| **m).map(|(en, _)| en))
    }

    fn sum_entries<'a, I: Iterator<Item = &'a PacketEntry>>(&'a self, entries: I) -> FrequencyField {
        let lat = self.padded_lattice();
        let d = self.dim();
        let mut by_cap: Vec<(usize, Vec<&[i64]>)> = Vec::new();
        for en in entries {
            match by_cap.last_mut() {
                Some((c, list)) if *c == en.cap => list.push(&en.v_index),
                _ => by_cap.push((en.cap, vec![&en.v_index])),
            }
        }
        let mut out = FrequencyField::zeros(lat.clone());
        let strides = lat.strides();
        let pad_off: Vec<i64> = lat.origin.iter().map(|o| (o / self.h()).round() as i64).collect();
        let nw = self.window_len();
        // Bounded batches keep the window buffers from piling up.
        for batch in by_cap.chunks(16) {
            let sums: Vec<Option<Vec<C64>>> = crate::par::map_slice(batch, |(c, list)| self.cap_sum(*c, list));
            for ((c, _), s) in batch.iter().zip(sums) {
                let Some(s) = s else { continue };
                let off = self.window_offset(*c);
                for (flat, v) in s.iter().enumerate() {
                    let mut rest = flat;
                    let mut g = 0usize;
                    for a in (0..d).rev() {
                        let li = off[a] + (rest % nw) as i64 - pad_off[a];
                        rest /= nw;
                        g += li as usize * strides[a];
                    }
                    out.values[g] += *v;
                }
            }
        }
        self.unanchor(&mut out);
        out.tighten_support();
        out
    }

    pub fn reconstruct(&self) -> FrequencyField {
        self.partial_sum(|_| true)
    }

    /// The input on the padded lattice.
    pub fn padded_input(&self) -> FrequencyField {
        let lat = self.padded_lattice();
        let pad = 3 * self.cover.m;
        let mut out = FrequencyField::zeros(lat.clone());
        let bl = &self.base.lattice;
        let strides = lat.strides();
        let mut src = self.base.clone();
        self.unanchor(&mut src);
        for (i, v) in src.values.iter().enumerate() {
            let idx = bl.multi_index(i);
            let g: usize = idx.iter().enumerate().map(|(a, &j)| (j + pad) * strides[a]).sum();
            out.values[g] = *v;
        }
        out.tighten_support();
        out
    }

    /// `||f - sum f_{theta,v}||_2 / ||f||_2`.
    pub fn reconstruction_residual(&self) -> f64 {
        if self.input_norm_sq == 0.0 {
            return 0.0;
        }
        self.padded_input().sub(&self.reconstruct()).l2_norm() / self.input_norm_sq.sqrt()
    }

    /// CSV index table: one row per packet with its byte offset in the
    /// concatenated dump written by `write_packets`.
    pub fn write_index<W: Write>(&self, w: &mut W) -> Result<()> {
        let d = self.dim();
        let cols: Vec<String> = (0..d)
            .map(|k| format!("center_{k}"))
            .chain((0..d).map(|k| format!("v_{k}")))
            .collect();
        writeln!(w, "packet,cap,{},energy,nonempty,offset", cols.join(","))?;
        let bytes = 64 + 16 * self.window_len().pow(d as u32);
        for (i, en) in self.entries.iter().enumerate() {
            let c = self.cover.cap(en.cap);
            let t = self.tube(i);
            let fields: Vec<String> = c.center.iter().chain(&t.v).map(|x| format!("{x}")).collect();
            writeln!(w, "{i},{},{},{:e},{},{}", en.cap, fields.join(","), en.energy, en.nonempty as u8, i * bytes)?;
        }
        Ok(())
    }

    pub fn write_packets<W: Write>(&self, w: &mut W) -> Result<()> {
        for i in 0..self.len() {
            write_dump(w, self.dim() + 1, &self.materialize(i))?;
        }
        Ok(())
    }
}

/// `(sup_T |E f_T|, sup_{B_r \ 2T} |E f_T|)` on a grid of spacing `w/4` in
/// space and `w/2` in `x_n`, where `w = r^{1/2+delta}`.
pub fn packet_extension_decay(set: &WavePacketSet, i: usize) -> Result<(f64, f64)> {
    let packet = set.materialize(i);
    if packet.is_zero() {
        return Ok((0.0, 0.0));
    }
    let tube = set.tube(i);
    let d = set.dim();
    let r = set.r;
    let w = tube.width();
    let hs = w / 4.0;
    let ht = w / 2.0;
    let ns = (2.0 * r / hs).ceil() as usize + 1;
    let nt = (2.0 * r / ht).ceil() as usize + 1;
    let mut origin: Vec<f64> = (0..d).map(|k| set.x0[k] - r).collect();
    origin.push(set.x0[d] - r);
    let mut spacing = vec![2.0 * r / (ns - 1) as f64; d];
    spacing.push(2.0 * r / (nt - 1) as f64);
    let mut dims = vec![ns; d];
    dims.push(nt);
    let domain = Lattice::new(origin, spacing, dims);
    let u = extend(&packet, &set.surface, &domain)?;
    let (mut inside, mut outside) = (0.0f64, 0.0f64);
    for (idx, v) in u.values.iter().enumerate() {
        let x = domain.node(idx);
        if dist2(&x, &set.x0) > r * r {
            continue;
        }
        if tube.contains(&x) {
            inside = inside.max(v.norm());
        } else if !tube.contains_scaled(&x, 2.0) {
            outside = outside.max(v.norm());
        }
    }
    Ok((inside, outside))
}

/// `||g|_W - (g|_{up W})|_W||_2 / ||g||_2` with `W` a set of scale-`rho`
/// tubes (all anchored at the same point) and `up W` taken at scale `r`
/// around `x0`. `h` is the spacing of `g`'s lattice.
pub fn compare_scales_check(g: &FrequencyField, surface: &Surface, w: &[Tube], r: f64, x0: &[f64]) -> Result<f64> {
    let gn = g.l2_norm();
    if gn == 0.0 || w.is_empty() {
        return Ok(0.0);
    }
    let (rho, x1, delta) = (w[0].r, w[0].x0.clone(), w[0].delta);
    let keys: BTreeSet<(usize, Vec<i64>)> = w.iter().map(|t| (t.cap.index, t.v_index.clone())).collect();
    let small = decompose(g, surface, rho, delta, &x1)?;
    let direct = small.partial_sum(|en| keys.contains(&(en.cap, en.v_index.clone())));
    let up = lift_tubes(surface, w, x0, r, delta, g.h())?;
    let up_keys: BTreeSet<(usize, Vec<i64>)> = up.iter().map(|t| (t.cap.index, t.v_index.clone())).collect();
    let big = decompose(g, surface, r, delta, x0)?;
    let g_up = big.partial_sum(|en| up_keys.contains(&(en.cap, en.v_index.clone())));
    let again = decompose(&g_up, surface, rho, delta, &x1)?;
    let via = again.partial_sum(|en| keys.contains(&(en.cap, en.v_index.clone())));
    // Bring both onto a common lattice before subtracting.
    let common = Lattice::through_zero(
        &(0..g.dim()).map(|k| direct.lattice.lo()[k].min(via.lattice.lo()[k])).collect::<Vec<_>>(),
        &(0..g.dim()).map(|k| direct.lattice.hi()[k].max(via.lattice.hi()[k])).collect::<Vec<_>>(),
        g.h(),
    );
    let a = embed(&direct, &common);
    let b = embed(&via, &common);
    Ok(a.sub(&b).l2_norm() / gn)
}

/// Copies `f` onto a larger lattice with the same spacing and grid.
pub fn embed(f: &FrequencyField, lat: &Lattice) -> FrequencyField {
    let mut out = FrequencyField::zeros(lat.clone());
    let strides = lat.strides();
    let h = f.lattice.spacing[0];
    let shift: Vec<i64> = (0..lat.ndim()).map(|k| ((f.lattice.origin[k] - lat.origin[k]) / h).round() as i64).collect();
    for (i, v) in f.values.iter().enumerate() {
        if v.norm_sqr() == 0.0 {
            continue;
        }
        let idx = f.lattice.multi_index(i);
        let mut g = 0usize;
        for k in 0..idx.len() {
            let j = idx[k] as i64 + shift[k];
            assert!(j >= 0 && (j as usize) < lat.dims[k], "embedding lattice too small");
            g += j as usize * strides[k];
        }
        out.values[g] = *v;
    }
    out.tighten_support();
    out
}
