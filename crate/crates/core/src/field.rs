//! Lattices, sampled fields, norms and the binary dump format.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::rng;
use crate::{LabError, Result, C64};

/// Uniform lattice: node `i` on axis `k` sits at `origin[k] + i * spacing[k]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Lattice {
    pub origin: Vec<f64>,
    pub spacing: Vec<f64>,
    pub dims: Vec<usize>,
}

impl Lattice {
    pub fn new(origin: Vec<f64>, spacing: Vec<f64>, dims: Vec<usize>) -> Self {
        assert!(origin.len() == spacing.len() && spacing.len() == dims.len());
        Lattice { origin, spacing, dims }
    }

    /// Nodes `j h` for `lo <= j h <= hi` on every axis (a lattice through 0).
    pub fn through_zero(lo: &[f64], hi: &[f64], h: f64) -> Self {
        let tol = 1e-9;
        let mut origin = Vec::new();
        let mut dims = Vec::new();
        for k in 0..lo.len() {
            let j0 = (lo[k] / h - tol).ceil() as i64;
            let j1 = (hi[k] / h + tol).floor() as i64;
            origin.push(j0 as f64 * h);
            dims.push((j1 - j0 + 1).max(0) as usize);
        }
        Lattice { origin, spacing: vec![h; lo.len()], dims }
    }

    /// Centered cube `[-a, a]^d` with `m` nodes per axis.
    pub fn centered(d: usize, half_width: f64, m: usize) -> Self {
        let h = if m > 1 { 2.0 * half_width / (m - 1) as f64 } else { 0.0 };
        Lattice { origin: vec![-half_width; d], spacing: vec![h; d], dims: vec![m; d] }
    }

    pub fn ndim(&self) -> usize {
        self.dims.len()
    }

    pub fn len(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn coord(&self, axis: usize, i: usize) -> f64 {
        self.origin[axis] + i as f64 * self.spacing[axis]
    }

    pub fn axis_coords(&self, axis: usize) -> Vec<f64> {
        (0..self.dims[axis]).map(|i| self.coord(axis, i)).collect()
    }

    pub fn cell_volume(&self) -> f64 {
        self.spacing.iter().product()
    }

    /// Row-major strides (last axis fastest).
    pub fn strides(&self) -> Vec<usize> {
        let mut s = vec![1; self.dims.len()];
        for k in (0..self.dims.len().saturating_sub(1)).rev() {
            s[k] = s[k + 1] * self.dims[k + 1];
        }
        s
    }

    pub fn multi_index(&self, mut flat: usize) -> Vec<usize> {
        let mut idx = vec![0; self.dims.len()];
        for k in (0..self.dims.len()).rev() {
            idx[k] = flat % self.dims[k];
            flat /= self.dims[k];
        }
        idx
    }

    pub fn node(&self, flat: usize) -> Vec<f64> {
        self.multi_index(flat).iter().enumerate().map(|(k, &i)| self.coord(k, i)).collect()
    }

    pub fn lo(&self) -> Vec<f64> {
        self.origin.clone()
    }

    pub fn hi(&self) -> Vec<f64> {
        (0..self.ndim()).map(|k| self.coord(k, self.dims[k].saturating_sub(1))).collect()
    }
}

/// Closed axis-aligned box.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoxRegion {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl BoxRegion {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Self {
        BoxRegion { lo, hi }
    }

    pub fn cube(d: usize, a: f64) -> Self {
        BoxRegion { lo: vec![-a; d], hi: vec![a; d] }
    }

    pub fn contains(&self, p: &[f64]) -> bool {
        p.iter().zip(self.lo.iter().zip(&self.hi)).all(|(x, (l, h))| *x >= *l && *x <= *h)
    }

    pub fn contains_box(&self, other: &BoxRegion, tol: f64) -> bool {
        (0..self.lo.len()).all(|k| other.lo[k] >= self.lo[k] - tol && other.hi[k] <= self.hi[k] + tol)
    }

    pub fn volume(&self) -> f64 {
        self.lo.iter().zip(&self.hi).map(|(l, h)| (h - l).max(0.0)).product()
    }
}

/// Anything stored as complex samples on a lattice.
pub trait Sampled {
    fn lattice(&self) -> &Lattice;
    fn values(&self) -> &[C64];
}

/// Samples of `f` on a frequency lattice, with a box holding every nonzero.
#[derive(Clone, Debug, PartialEq)]
pub struct FrequencyField {
    pub lattice: Lattice,
    pub values: Vec<C64>,
    pub support: BoxRegion,
}

impl Sampled for FrequencyField {
    fn lattice(&self) -> &Lattice {
        &self.lattice
    }
    fn values(&self) -> &[C64] {
        &self.values
    }
}

impl FrequencyField {
    pub fn zeros(lattice: Lattice) -> Self {
        let support = BoxRegion::new(lattice.lo(), lattice.hi());
        FrequencyField { values: vec![C64::new(0.0, 0.0); lattice.len()], lattice, support }
    }

    /// Lattice `h Z^d` restricted to `[-1, 1]^d`.
    pub fn zeros_on_cube(d: usize, h: f64) -> Self {
        Self::zeros(Lattice::through_zero(&vec![-1.0; d], &vec![1.0; d], h))
    }

    /// Samples `f` on the lattice; the support box is tightened afterwards.
    pub fn from_fn<F: Fn(&[f64]) -> C64 + Sync>(lattice: Lattice, f: F) -> Self {
        let values = crate::par::map_range(lattice.len(), |i| f(&lattice.node(i)));
        let mut out = FrequencyField { support: BoxRegion::new(lattice.lo(), lattice.hi()), lattice, values };
        out.tighten_support();
        out
    }

    pub fn dim(&self) -> usize {
        self.lattice.ndim()
    }

    pub fn h(&self) -> f64 {
        self.lattice.spacing.iter().cloned().fold(0.0, f64::max)
    }

    /// Shrinks the support box to the bounding box of the nonzero samples.
    pub fn tighten_support(&mut self) {
        let d = self.dim();
        let mut lo = vec![usize::MAX; d];
        let mut hi = vec![0usize; d];
        let dims = &self.lattice.dims;
        for (i, v) in self.values.iter().enumerate() {
            if v.norm_sqr() > 0.0 {
                let mut rest = i;
                for k in (0..d).rev() {
                    let j = rest % dims[k];
                    rest /= dims[k];
                    lo[k] = lo[k].min(j);
                    hi[k] = hi[k].max(j);
                }
            }
        }
        if lo[0] == usize::MAX {
            let c = self.lattice.node(0);
            self.support = BoxRegion::new(c.clone(), c);
        } else {
            let lat = &self.lattice;
            self.support = BoxRegion::new((0..d).map(|k| lat.coord(k, lo[k])).collect(), (0..d).map(|k| lat.coord(k, hi[k])).collect());
        }
    }

    pub fn is_zero(&self) -> bool {
        self.values.iter().all(|v| v.norm_sqr() == 0.0)
    }

    /// Riemann-sum L^2 norm.
    pub fn l2_norm(&self) -> f64 {
        (self.values.iter().map(|v| v.norm_sqr()).sum::<f64>() * self.lattice.cell_volume()).sqrt()
    }

    pub fn scale(&mut self, s: C64) {
        for v in &mut self.values {
            *v *= s;
        }
    }

    pub fn add_assign(&mut self, other: &FrequencyField) {
        assert_eq!(self.lattice, other.lattice);
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            *a += *b;
        }
    }

    pub fn sub(&self, other: &FrequencyField) -> FrequencyField {
        assert_eq!(self.lattice, other.lattice);
        let values = self.values.iter().zip(&other.values).map(|(a, b)| a - b).collect();
        let mut out = FrequencyField { lattice: self.lattice.clone(), values, support: self.support.clone() };
        out.tighten_support();
        out
    }

    /// Multiplies every sample by `m(xi)`.
    pub fn multiplied<F: Fn(&[f64]) -> C64 + Sync>(&self, m: F) -> FrequencyField {
        let values = crate::par::map_range(self.values.len(), |i| {
            let v = self.values[i];
            if v.norm_sqr() == 0.0 {
                v
            } else {
                v * m(&self.lattice.node(i))
            }
        });
        let mut out = FrequencyField { lattice: self.lattice.clone(), values, support: self.support.clone() };
        out.tighten_support();
        out
    }

    /// `count` random plane waves `c_j e(xi . y_j)` with `|y_j|_inf <= spread`,
    /// times the product bump of half-width `s`, on `h Z^d`.
    pub fn plane_waves(seed: u64, d: usize, h: f64, s: f64, count: usize, spread: f64) -> FrequencyField {
        let mut r = rng::stream(seed, 23);
        let waves: Vec<(Vec<f64>, C64)> = (0..count)
            .map(|_| ((0..d).map(|_| rng::uniform(&mut r, -spread, spread)).collect(), rng::complex_normal(&mut r)))
            .collect();
        FrequencyField::from_fn(Lattice::through_zero(&vec![-s; d], &vec![s; d], h), |p| {
            let b: f64 = p.iter().map(|v| crate::profile::bump_pu(v / s)).product();
            if b == 0.0 {
                return C64::new(0.0, 0.0);
            }
            waves.iter().map(|(y, c)| c * crate::e(p.iter().zip(y).map(|(a, b)| a * b).sum())).sum::<C64>() * b
        })
    }

    /// Index of the node nearest to `p`, if inside the lattice.
    pub fn index_of(&self, p: &[f64]) -> Option<usize> {
        let strides = self.lattice.strides();
        let mut flat = 0;
        for k in 0..self.dim() {
            let i = ((p[k] - self.lattice.origin[k]) / self.lattice.spacing[k]).round();
            if i < 0.0 || i as usize >= self.lattice.dims[k] {
                return None;
            }
            flat += i as usize * strides[k];
        }
        Some(flat)
    }
}

/// Samples on a space(-time) lattice; the last axis is `x_n` (or `t`).
#[derive(Clone, Debug, PartialEq)]
pub struct SpaceTimeField {
    pub lattice: Lattice,
    pub values: Vec<C64>,
}

impl Sampled for SpaceTimeField {
    fn lattice(&self) -> &Lattice {
        &self.lattice
    }
    fn values(&self) -> &[C64] {
        &self.values
    }
}

impl SpaceTimeField {
    pub fn zeros(lattice: Lattice) -> Self {
        SpaceTimeField { values: vec![C64::new(0.0, 0.0); lattice.len()], lattice }
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().map(|v| v.norm()).fold(0.0, f64::max)
    }

    /// Checks the unit-scale resolution rule (spacing at most 1/4).
    pub fn check_spacing(&self) -> Result<()> {
        if self.lattice.spacing.iter().any(|&h| h > 0.25 + 1e-12) {
            return Err(LabError::Resolution("space-time spacing exceeds 1/4".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum NormMethod {
    Grid,
    MonteCarlo,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormReport {
    pub value: f64,
    pub method: NormMethod,
    pub std_error: f64,
    pub sample_count: usize,
}

/// L^p norm of a sampled field over `region`.
///
/// `Grid` is the Riemann sum over nodes in the region. `MonteCarlo` samples
/// the multilinear interpolant at two uniform points per stratum and returns
/// the delta-method standard error of the norm.
pub fn lp_norm<S: Sampled + ?Sized>(
    field: &S,
    p: f64,
    region: &BoxRegion,
    method: NormMethod,
    samples: usize,
    seed: u64,
) -> Result<NormReport> {
    let lat = field.lattice();
    let d = lat.ndim();
    if region.lo.len() != d {
        return Err(LabError::Domain("region dimension mismatch".into()));
    }
    if !(p >= 1.0) {
        return Err(LabError::Parameter("p must be at least 1".into()));
    }
    let outer = BoxRegion::new(lat.lo(), lat.hi());
    let tol: Vec<f64> = lat.spacing.iter().map(|h| 1e-9 * h.max(1e-300)).collect();
    for k in 0..d {
        if region.lo[k] < outer.lo[k] - tol[k] || region.hi[k] > outer.hi[k] + tol[k] || region.lo[k] > region.hi[k] {
            return Err(LabError::Domain("region outside field domain".into()));
        }
    }
    let vals = field.values();
    match method {
        NormMethod::Grid => {
            let mut acc = 0.0;
            let mut mx: f64 = 0.0;
            let mut count = 0;
            for (i, v) in vals.iter().enumerate() {
                if region.contains(&lat.node(i)) {
                    let a = v.norm();
                    count += 1;
                    if p.is_infinite() {
                        mx = mx.max(a);
                    } else {
                        acc += a.powf(p);
                    }
                }
            }
            let value = if p.is_infinite() { mx } else { (acc * lat.cell_volume()).powf(1.0 / p) };
            Ok(NormReport { value, method, std_error: 0.0, sample_count: count })
        }
        NormMethod::MonteCarlo => {
            if p.is_infinite() {
                return Err(LabError::Parameter("p = inf needs the grid method".into()));
            }
            let strata_target = (samples / 2).max(1) as f64;
            let m = strata_target.powf(1.0 / d as f64).floor().max(1.0) as usize;
            let n_strata = m.pow(d as u32);
            let widths: Vec<f64> = (0..d).map(|k| (region.hi[k] - region.lo[k]) / m as f64).collect();
            let vol_s: f64 = widths.iter().product();
            let per: Vec<(f64, f64)> = crate::par::map_range(n_strata, |s| {
                let mut r = rng::substream(seed, 0x4c50, s as u64);
                let mut idx = s;
                let mut cell_lo = vec![0.0; d];
                for k in (0..d).rev() {
                    cell_lo[k] = region.lo[k] + (idx % m) as f64 * widths[k];
                    idx /= m;
                }
                let mut ys = [0.0; 2];
                for y in ys.iter_mut() {
                    let pt: Vec<f64> = (0..d).map(|k| cell_lo[k] + widths[k] * rng::uniform(&mut r, 0.0, 1.0)).collect();
                    *y = interpolate(lat, vals, &pt).norm().powf(p);
                }
                (0.5 * (ys[0] + ys[1]) * vol_s, vol_s * vol_s * (ys[0] - ys[1]).powi(2) / 4.0)
            });
            let integral: f64 = per.iter().map(|x| x.0).sum();
            let var: f64 = per.iter().map(|x| x.1).sum();
            let value = integral.max(0.0).powf(1.0 / p);
            let std_error = if integral > 0.0 { value / (p * integral) * var.sqrt() } else { 0.0 };
            Ok(NormReport { value, method, std_error, sample_count: 2 * n_strata })
        }
    }
}

/// Multilinear interpolation of lattice values at `pt` (clamped to the lattice).
pub fn interpolate(lat: &Lattice, vals: &[C64], pt: &[f64]) -> C64 {
    let d = lat.ndim();
    let strides = lat.strides();
    let mut base = 0usize;
    let mut frac = vec![0.0; d];
    for k in 0..d {
        let n = lat.dims[k];
        if n == 1 {
            continue;
        }
        let u = ((pt[k] - lat.origin[k]) / lat.spacing[k]).clamp(0.0, (n - 1) as f64);
        let i = (u.floor() as usize).min(n - 2);
        frac[k] = u - i as f64;
        base += i * strides[k];
    }
    let mut acc = C64::new(0.0, 0.0);
    for corner in 0..(1usize << d) {
        let mut w = 1.0;
        let mut off = 0;
        for k in 0..d {
            if lat.dims[k] == 1 {
                if corner >> k & 1 == 1 {
                    w = 0.0;
                }
                continue;
            }
            if corner >> k & 1 == 1 {
                w *= frac[k];
                off += strides[k];
            } else {
                w *= 1.0 - frac[k];
            }
        }
        if w != 0.0 {
            acc += vals[base + off] * w;
        }
    }
    acc
}

pub const DUMP_MAGIC: &[u8; 6] = b"WPLAB1";
pub const DUMP_VERSION: u16 = 1;

/// Header contents of a binary field dump.
#[derive(Clone, Debug, PartialEq)]
pub struct DumpHeader {
    pub version: u16,
    pub n: u32,
    pub dims: Vec<usize>,
    pub spacing: Vec<f64>,
}

/// Writes the 64-byte header and row-major interleaved re/im values.
///
/// Header layout (little endian): magic[0..6], version u16 [6..8],
/// n u32 [8..12], axis count u32 [12..16], dims 3 x u32 [16..28],
/// zero pad [28..32], spacing 3 x f64 [32..56], zero pad [56..64].
pub fn write_dump<W: Write, S: Sampled + ?Sized>(w: &mut W, n: usize, field: &S) -> Result<()> {
    let lat = field.lattice();
    if lat.ndim() > 3 {
        return Err(LabError::Parameter("dump supports at most 3 axes".into()));
    }
    let mut h = [0u8; 64];
    h[0..6].copy_from_slice(DUMP_MAGIC);
    h[6..8].copy_from_slice(&DUMP_VERSION.to_le_bytes());
    h[8..12].copy_from_slice(&(n as u32).to_le_bytes());
    h[12..16].copy_from_slice(&(lat.ndim() as u32).to_le_bytes());
    for k in 0..lat.ndim() {
        h[16 + 4 * k..20 + 4 * k].copy_from_slice(&(lat.dims[k] as u32).to_le_bytes());
        h[32 + 8 * k..40 + 8 * k].copy_from_slice(&lat.spacing[k].to_le_bytes());
    }
    w.write_all(&h)?;
    let mut buf = Vec::with_capacity(16 * field.values().len());
    for v in field.values() {
        buf.extend_from_slice(&v.re.to_le_bytes());
        buf.extend_from_slice(&v.im.to_le_bytes());
    }
    w.write_all(&buf)?;
    Ok(())
}

pub fn read_dump<R: Read>(r: &mut R) -> Result<(DumpHeader, Vec<C64>)> {
    let mut h = [0u8; 64];
    r.read_exact(&mut h)?;
    if &h[0..6] != DUMP_MAGIC {
        return Err(LabError::Form("bad dump magic".into()));
    }
    let u32_at = |o: usize| u32::from_le_bytes(h[o..o + 4].try_into().unwrap());
    let version = u16::from_le_bytes([h[6], h[7]]);
    let n = u32_at(8);
    let axes = u32_at(12) as usize;
    if axes > 3 {
        return Err(LabError::Form("bad axis count".into()));
    }
    let dims: Vec<usize> = (0..axes).map(|k| u32_at(16 + 4 * k) as usize).collect();
    let spacing: Vec<f64> = (0..axes).map(|k| f64::from_le_bytes(h[32 + 8 * k..40 + 8 * k].try_into().unwrap())).collect();
    let len: usize = dims.iter().product();
    let mut raw = vec![0u8; 16 * len];
    r.read_exact(&mut raw)?;
    let values = raw
        .chunks_exact(16)
        .map(|c| C64::new(f64::from_le_bytes(c[0..8].try_into().unwrap()), f64::from_le_bytes(c[8..16].try_into().unwrap())))
        .collect();
    Ok((DumpHeader { version, n, dims, spacing }, values))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn random_field(seed: u64) -> SpaceTimeField {
        let lat = Lattice::new(vec![0.0, 0.0], vec![0.1, 0.1], vec![21, 21]);
        let mut r = rng::stream(seed, 0);
        let values = (0..lat.len()).map(|_| rng::complex_normal(&mut r)).collect();
        SpaceTimeField { lattice: lat, values }
    }

    #[test]
    fn zero_and_constant() {
        let lat = Lattice::new(vec![0.0, 0.0], vec![0.01, 0.01], vec![101, 101]);
        let z = SpaceTimeField::zeros(lat.clone());
        let unit = BoxRegion::new(vec![0.0, 0.0], vec![1.0, 1.0]);
        let rep = lp_norm(&z, 3.0, &unit, NormMethod::Grid, 0, 0).unwrap();
        assert_eq!(rep.value, 0.0);
        assert_eq!(rep.std_error, 0.0);
        let c = SpaceTimeField { values: vec![C64::new(0.0, 2.5); lat.len()], lattice: lat };
        let half_open = BoxRegion::new(vec![0.0, 0.0], vec![0.995, 0.995]);
        let rep = lp_norm(&c, 2.0, &half_open, NormMethod::Grid, 0, 0).unwrap();
        assert!((rep.value - 2.5).abs() < 1e-12);
        let mc = lp_norm(&c, 2.0, &unit, NormMethod::MonteCarlo, 400, 1).unwrap();
        assert!((mc.value - 2.5).abs() < 1e-12);
    }

    #[test]
    fn domain_error_outside() {
        let f = random_field(1);
        let r = BoxRegion::new(vec![0.0, 0.0], vec![3.0, 1.0]);
        assert!(matches!(lp_norm(&f, 2.0, &r, NormMethod::Grid, 0, 0), Err(LabError::Domain(_))));
    }

    #[test]
    fn grid_norm_monotone_and_homogeneous() {
        let f = random_field(2);
        let small = BoxRegion::new(vec![0.0, 0.0], vec![1.0, 1.0]);
        let big = BoxRegion::new(vec![0.0, 0.0], vec![2.0, 2.0]);
        let a = lp_norm(&f, 4.0, &small, NormMethod::Grid, 0, 0).unwrap().value;
        let b = lp_norm(&f, 4.0, &big, NormMethod::Grid, 0, 0).unwrap().value;
        assert!(a <= b);
        let mut g = f.clone();
        for v in &mut g.values {
            *v *= -3.0;
        }
        let c = lp_norm(&g, 4.0, &big, NormMethod::Grid, 0, 0).unwrap().value;
        assert!((c - 3.0 * b).abs() < 1e-12 * c);
        let inf = lp_norm(&f, f64::INFINITY, &big, NormMethod::Grid, 0, 0).unwrap().value;
        assert!((inf - f.max_abs()).abs() == 0.0);
    }

    #[test]
    fn monte_carlo_matches_dense_oracle() {
        // Oracle: midpoint quadrature of the multilinear interpolant on a
        // 16x refined grid, written independently of `interpolate`.
        for seed in 0..5 {
            let f = random_field(10 + seed);
            let region = BoxRegion::new(vec![0.2, 0.3], vec![1.7, 1.9]);
            let p = 3.0;
            let mc = lp_norm(&f, p, &region, NormMethod::MonteCarlo, 20000, seed).unwrap();
            let m = 600;
            let (wx, wy) = ((1.7 - 0.2) / m as f64, (1.9 - 0.3) / m as f64);
            let mut acc = 0.0;
            for i in 0..m {
                for j in 0..m {
                    let x = 0.2 + (i as f64 + 0.5) * wx;
                    let y = 0.3 + (j as f64 + 0.5) * wy;
                    let (ux, uy) = (x / 0.1, y / 0.1);
                    let (ix, iy) = (ux.floor() as usize, uy.floor() as usize);
                    let (fx, fy) = (ux - ix as f64, uy - iy as f64);
                    let at = |a: usize, b: usize| f.values[a * 21 + b];
                    let v = at(ix, iy) * (1.0 - fx) * (1.0 - fy)
                        + at(ix + 1, iy) * fx * (1.0 - fy)
                        + at(ix, iy + 1) * (1.0 - fx) * fy
                        + at(ix + 1, iy + 1) * fx * fy;
                    acc += v.norm().powf(p) * wx * wy;
                }
            }
            let oracle = acc.powf(1.0 / p);
            assert!((mc.value - oracle).abs() <= 3.0 * mc.std_error + 1e-4 * oracle, "{} {} {}", mc.value, oracle, mc.std_error);
            assert!(mc.std_error > 0.0);
        }
    }

    #[test]
    fn dump_round_trip() {
        let f = random_field(3);
        let mut buf = Vec::new();
        write_dump(&mut buf, 3, &f).unwrap();
        assert_eq!(buf.len(), 64 + 16 * f.values.len());
        assert_eq!(&buf[0..6], b"WPLAB1");
        let (h, vals) = read_dump(&mut buf.as_slice()).unwrap();
        assert_eq!(h.dims, vec![21, 21]);
        assert_eq!(h.spacing, vec![0.1, 0.1]);
        assert_eq!(h.n, 3);
        assert_eq!(vals, f.values);
    }

    #[test]
    fn through_zero_lattice() {
        let l = Lattice::through_zero(&[-1.0], &[1.0], 0.25);
        assert_eq!(l.dims, vec![9]);
        assert_eq!(l.origin, vec![-1.0]);
        let l = Lattice::through_zero(&[-0.3], &[0.55], 0.25);
        assert_eq!(l.axis_coords(0), vec![-0.25, 0.0, 0.25, 0.5]);
    }
}
