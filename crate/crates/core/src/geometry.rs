//! Tube geometry near varieties: the exponent `p_n(k)`, grains and
//! multigrains, the slice measure of fattened tubes near a surface, the
//! planar set `X` swept by dilated tubes, and the nested tube predicate.

use std::fmt::Write as _;

use num_rational::Ratio;
use serde::{Deserialize, Serialize};

use crate::field::{FrequencyField, Lattice};
use crate::fourier::{natural_lattice_sized, to_physical};
use crate::poly::Poly;
use crate::rng;
use crate::wavepackets::{segment_distance, Tube, WavePacketSet};
use crate::{LabError, Result};

/// `p_n(k) = 2 + 6 / (2(n-1) + (k-1) prod_{i=k}^{n-1} 2i/(2i+1))`.
pub fn p_k_exponent(n: usize, k: usize) -> Result<Ratio<i128>> {
    if n < 3 || k < 2 || k > n - 1 {
        return Err(LabError::Parameter(format!("need 2 <= k <= n-1, got n = {n}, k = {k}")));
    }
    let mut prod = Ratio::from_integer(1i128);
    for i in k..n {
        let i = i as i128;
        prod *= Ratio::new(2 * i, 2 * i + 1);
    }
    let den = Ratio::from_integer(2 * (n as i128 - 1)) + Ratio::from_integer(k as i128 - 1) * prod;
    Ok(Ratio::from_integer(2) + Ratio::from_integer(6) / den)
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Solves the small dense system `m x = b` by partial pivoting.
fn solve(mut m: Vec<f64>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let k = b.len();
    let scale = m.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    for c in 0..k {
        let p = (c..k).max_by(|&i, &j| m[i * k + c].abs().total_cmp(&m[j * k + c].abs()))?;
        if m[p * k + c].abs() <= 1e-14 * scale.max(1e-300) {
            return None;
        }
        for j in 0..k {
            m.swap(c * k + j, p * k + j);
        }
        b.swap(c, p);
        for i in c + 1..k {
            let f = m[i * k + c] / m[c * k + c];
            for j in c..k {
                m[i * k + j] -= f * m[c * k + j];
            }
            b[i] -= f * b[c];
        }
    }
    let mut x = vec![0.0; k];
    for c in (0..k).rev() {
        let s: f64 = (c + 1..k).map(|j| m[c * k + j] * x[j]).sum();
        x[c] = (b[c] - s) / m[c * k + c];
    }
    Some(x)
}

/// Common zero set of a list of polynomials in `R^n`. The empty list is all
/// of `R^n`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Variety {
    pub n: usize,
    pub polys: Vec<Poly>,
}

impl Variety {
    pub fn new(n: usize, polys: Vec<Poly>) -> Result<Self> {
        if polys.iter().any(|p| p.nvars != n) {
            return Err(LabError::Parameter("polynomials must all have n variables".into()));
        }
        if polys.len() > n {
            return Err(LabError::Parameter("more equations than variables".into()));
        }
        Ok(Variety { n, polys })
    }

    pub fn whole(n: usize) -> Self {
        Variety { n, polys: Vec::new() }
    }

    /// `{x . normal = offset}`.
    pub fn plane(normal: &[f64], offset: f64) -> Self {
        let n = normal.len();
        let mut p = Poly::constant(n, -offset);
        for (i, &c) in normal.iter().enumerate() {
            p = p.add(&Poly::variable(n, i).scale(c));
        }
        Variety { n, polys: vec![p] }
    }

    pub fn sphere(center: &[f64], radius: f64) -> Self {
        let n = center.len();
        let mut p = Poly::constant(n, -radius * radius);
        for (i, &c) in center.iter().enumerate() {
            p = p.add(&Poly::variable(n, i).sub(&Poly::constant(n, c)).pow(2));
        }
        Variety { n, polys: vec![p] }
    }

    /// `x_3 = x_1 x_2 / scale` in `R^3`, a doubly ruled quadric.
    pub fn saddle(scale: f64) -> Self {
        let x = |i| Poly::variable(3, i);
        Variety { n: 3, polys: vec![x(2).sub(&x(0).mul(&x(1)).scale(1.0 / scale))] }
    }

    pub fn codim(&self) -> usize {
        self.polys.len()
    }

    pub fn complexity(&self) -> u32 {
        self.polys.iter().map(|p| p.degree()).max().unwrap_or(0)
    }

    pub fn residual(&self, x: &[f64]) -> f64 {
        self.polys.iter().fold(0.0, |a, p| a.max(p.eval(x).abs()))
    }

    /// Gauss-Newton with minimum-norm steps from `x`; `None` when the
    /// Jacobian degenerates or the iteration does not settle.
    pub fn project(&self, x: &[f64]) -> Option<Vec<f64>> {
        let m = self.polys.len();
        if m == 0 {
            return Some(x.to_vec());
        }
        let n = self.n;
        let mut y = x.to_vec();
        let scale = 1.0 + norm(x);
        for _ in 0..60 {
            let f: Vec<f64> = self.polys.iter().map(|p| p.eval(&y)).collect();
            let jac: Vec<Vec<f64>> = self.polys.iter().map(|p| p.grad(&y)).collect();
            let gmax = jac.iter().map(|g| norm(g)).fold(0.0, f64::max);
            if f.iter().zip(&jac).all(|(v, g)| v.abs() <= 1e-13 * norm(g).max(1e-300) * scale) {
                return Some(y);
            }
            if gmax == 0.0 {
                return None;
            }
            let mut jjt = vec![0.0; m * m];
            for i in 0..m {
                for j in 0..m {
                    jjt[i * m + j] = dot(&jac[i], &jac[j]);
                }
            }
            let lam = solve(jjt, f)?;
            let mut step = 0.0;
            for k in 0..n {
                let s: f64 = (0..m).map(|i| jac[i][k] * lam[i]).sum();
                y[k] -= s;
                step += s * s;
            }
            if step.sqrt() <= 1e-14 * scale {
                return Some(y);
            }
        }
        (self.residual(&y) <= 1e-9 * scale).then_some(y)
    }

    /// Distance from `x` to the variety, through the Gauss-Newton foot
    /// point. Infinite when the projection fails.
    pub fn distance(&self, x: &[f64]) -> f64 {
        self.project(x).map_or(f64::INFINITY, |y| dist(x, &y))
    }

    /// Distance to the part of the variety inside `B_radius(center)`,
    /// exact for flat pieces: the foot point's excess over the ball is
    /// added in quadrature.
    pub fn distance_in_ball(&self, x: &[f64], center: &[f64], radius: f64) -> f64 {
        match self.project(x) {
            None => f64::INFINITY,
            Some(y) => {
                let d = dist(x, &y);
                let excess = (dist(&y, center) - radius).max(0.0);
                (d * d + excess * excess).sqrt()
            }
        }
    }

    /// Points of the variety inside the ball, from projected uniform points.
    pub fn sample(&self, center: &[f64], radius: f64, count: usize, seed: u64) -> Vec<Vec<f64>> {
        let mut r = rng::stream(seed, 61);
        let mut out = Vec::with_capacity(count);
        let mut tries = 0;
        while out.len() < count && tries < 200 * count {
            tries += 1;
            let x: Vec<f64> = center.iter().map(|c| c + rng::uniform(&mut r, -radius, radius)).collect();
            if dist(&x, center) > radius {
                continue;
            }
            if let Some(y) = self.project(&x) {
                if dist(&y, center) <= radius {
                    out.push(y);
                }
            }
        }
        out
    }

    /// One polynomial per line, terms separated by `;`, each term
    /// `coefficient:e1,e2,...,en`. Blank lines and `#` comments are ignored;
    /// the first directive `n=<dim>` fixes the dimension.
    pub fn to_text(&self) -> String {
        let mut s = format!("n={}\n", self.n);
        for p in &self.polys {
            let terms: Vec<String> = p
                .terms
                .iter()
                .map(|(e, c)| format!("{c:e}:{}", e.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(",")))
                .collect();
            let _ = writeln!(s, "{}", terms.join(";"));
        }
        s
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut n = None;
        let mut polys = Vec::new();
        for (ln, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            if let Some(v) = line.strip_prefix("n=") {
                n = Some(v.trim().parse::<usize>().map_err(|_| LabError::Form(format!("line {}: bad dimension", ln + 1)))?);
                continue;
            }
            let dim = n.ok_or_else(|| LabError::Form("missing n=<dim> before the first polynomial".into()))?;
            let mut terms = Vec::new();
            for t in line.split(';').map(str::trim).filter(|t| !t.is_empty()) {
                let (c, e) = t.split_once(':').ok_or_else(|| LabError::Form(format!("line {}: term without ':'", ln + 1)))?;
                let c: f64 = c.trim().parse().map_err(|_| LabError::Form(format!("line {}: bad coefficient", ln + 1)))?;
                let e: Vec<u32> = e
                    .split(',')
                    .map(|v| v.trim().parse::<u32>())
                    .collect::<std::result::Result<_, _>>()
                    .map_err(|_| LabError::Form(format!("line {}: bad exponent", ln + 1)))?;
                if e.len() != dim {
                    return Err(LabError::Form(format!("line {}: expected {dim} exponents", ln + 1)));
                }
                terms.push((e, c));
            }
            polys.push(Poly::from_terms(dim, terms));
        }
        Variety::new(n.ok_or_else(|| LabError::Form("missing n=<dim>".into()))?, polys)
    }
}

/// A variety together with a ball.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Grain {
    pub variety: Variety,
    pub center: Vec<f64>,
    pub radius: f64,
}

/// Grains of codimension `0, 1, ..., m` on shrinking nested balls.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Multigrain {
    pub grains: Vec<Grain>,
}

impl Multigrain {
    /// Checks codimensions, strictly decreasing scales, nested balls and
    /// (on sampled points) nested varieties.
    pub fn new(grains: Vec<Grain>, seed: u64) -> Result<Self> {
        for (i, g) in grains.iter().enumerate() {
            if g.variety.codim() != i {
                return Err(LabError::Predicate(format!("grain {i} has codimension {}", g.variety.codim())));
            }
            if i > 0 {
                let p = &grains[i - 1];
                if g.radius >= p.radius {
                    return Err(LabError::Predicate(format!("scale {i} does not decrease")));
                }
                if dist(&g.center, &p.center) + g.radius > p.radius * (1.0 + 1e-12) {
                    return Err(LabError::Predicate(format!("ball {i} is not inside ball {}", i - 1)));
                }
                for x in g.variety.sample(&g.center, g.radius, 32, seed ^ i as u64) {
                    if p.variety.distance(&x) > 1e-6 * (1.0 + g.radius) {
                        return Err(LabError::Predicate(format!("variety {i} leaves variety {}", i - 1)));
                    }
                }
            }
        }
        Ok(Multigrain { grains })
    }

    pub fn depth(&self) -> usize {
        self.grains.len().saturating_sub(1)
    }
}

/// A tube as a solid cylinder: frequency cap center, core segment, radius and
/// the scale it lives at.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeoTube {
    pub omega: Vec<f64>,
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    pub width: f64,
    pub scale: f64,
}

impl GeoTube {
    pub fn from_tube(t: &Tube) -> Option<GeoTube> {
        let (a, b) = t.core_segment()?;
        Some(GeoTube { omega: t.cap.center.clone(), a, b, width: t.width(), scale: t.r })
    }

    pub fn axis(&self) -> Vec<f64> {
        let v: Vec<f64> = self.b.iter().zip(&self.a).map(|(x, y)| x - y).collect();
        let l = norm(&v);
        v.iter().map(|x| x / l).collect()
    }

    /// Distance between the solid tubes, zero when they meet.
    pub fn distance(&self, o: &GeoTube) -> f64 {
        (segment_distance(&self.a, &self.b, &o.a, &o.b) - self.width - o.width).max(0.0)
    }

    /// `count` points: half on the core, half on the boundary along a helix.
    pub fn samples(&self, count: usize) -> Vec<Vec<f64>> {
        let (u, w) = normal_pair(&self.axis());
        let half = count.div_ceil(2).max(2);
        let mut out = Vec::with_capacity(2 * half);
        for i in 0..half {
            let t = i as f64 / (half - 1) as f64;
            let p: Vec<f64> = self.a.iter().zip(&self.b).map(|(x, y)| x + t * (y - x)).collect();
            let phi = i as f64 * 2.399_963_229_728_653;
            let (s, c) = phi.sin_cos();
            let q: Vec<f64> = (0..3).map(|k| p[k] + self.width * (c * u[k] + s * w[k])).collect();
            out.push(p);
            out.push(q);
        }
        out
    }
}

/// Two unit vectors completing `v` to an orthonormal frame of `R^3`.
pub fn normal_pair(v: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let pick = if v[0].abs() < 0.6 { [1.0, 0.0, 0.0] } else { [0.0, 1.0, 0.0] };
    let d = dot(&pick, v);
    let mut u: Vec<f64> = (0..3).map(|k| pick[k] - d * v[k]).collect();
    let l = norm(&u);
    u.iter_mut().for_each(|x| *x /= l);
    let w = vec![v[1] * u[2] - v[2] * u[1], v[2] * u[0] - v[0] * u[2], v[0] * u[1] - v[1] * u[0]];
    (u, w)
}

pub const NESTED_CONSTANT: f64 = 4.0;
pub const NESTED_SAMPLES: usize = 200;

/// Nested tube hypothesis for `t` (level 0) and one witness per level
/// `1..=m`, with implicit constant 4. `deltas[j]` is the `delta_j` of level
/// `j`; the first entry also serves as the common `delta`.
pub fn nested_tube_check(mg: &Multigrain, t: &GeoTube, witnesses: &[GeoTube], deltas: &[f64]) -> Result<bool> {
    let m = mg.depth();
    if witnesses.len() < m {
        return Err(LabError::Predicate(format!("witness for level {} missing", witnesses.len() + 1)));
    }
    if deltas.len() < m + 1 {
        return Err(LabError::Parameter("need one delta per level".into()));
    }
    let c = NESTED_CONSTANT;
    let tubes: Vec<&GeoTube> = std::iter::once(t).chain(witnesses.iter().take(m)).collect();
    for j in 0..=m {
        let rj = tubes[j].scale;
        for i in 0..=j {
            let ri = tubes[i].scale;
            if dist(&tubes[i].omega, &tubes[j].omega) > c * rj.powf(-0.5) {
                return Ok(false);
            }
            if tubes[j].distance(tubes[i]) > c * ri.powf(0.5 + deltas[0]) {
                return Ok(false);
            }
        }
        if j > 0 {
            let s = &mg.grains[j].variety;
            let tol = c * rj.powf(0.5 + deltas[j]);
            if tubes[j].samples(NESTED_SAMPLES).iter().any(|x| s.distance(x) > tol) {
                return Ok(false);
            }
        }
    }
    Ok(true)
}

/// The planar set `(union 10T) cap {x_n = 0}` rasterized on a square grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct XSet {
    pub origin: [f64; 2],
    pub spacing: f64,
    pub dims: [usize; 2],
    pub cells: Vec<bool>,
    pub area: f64,
}

/// Whether `x` lies in the dilate `c T`: horizontal offset within `c` times
/// the width and `x` within `c r` of the anchor.
pub fn in_dilate(t: &Tube, x: &[f64], c: f64) -> bool {
    let d = t.v.len();
    let s = x[d] - t.x0[d];
    let off2: f64 = (0..d).map(|k| (x[k] - t.x0[k] + s * t.slope[k] + t.v[k]).powi(2)).sum();
    off2 <= (c * t.width()).powi(2) && dist(x, &t.x0) <= c * t.r
}

/// Builds `X` from tubes in `R^3` on a grid of spacing `resolution`
/// (default `R^{1/2+delta}/8` from the first tube).
pub fn build_x_set(tubes: &[Tube], resolution: Option<f64>) -> Result<XSet> {
    if tubes.is_empty() {
        return Ok(XSet { origin: [0.0; 2], spacing: resolution.unwrap_or(1.0), dims: [0, 0], cells: Vec::new(), area: 0.0 });
    }
    if tubes.iter().any(|t| t.v.len() != 2) {
        return Err(LabError::Parameter("X sets are planar: tubes must live in R^3".into()));
    }
    let spacing = resolution.unwrap_or(tubes[0].width() / 8.0);
    if spacing <= 0.0 {
        return Err(LabError::Resolution("grid spacing must be positive".into()));
    }
    // Each slice lies in the disc of radius 10w around the core crossing.
    let mut lo = [f64::INFINITY; 2];
    let mut hi = [f64::NEG_INFINITY; 2];
    for t in tubes {
        let s = -t.x0[2];
        let rad = 10.0 * t.width();
        for k in 0..2 {
            let c = t.x0[k] - s * t.slope[k] - t.v[k];
            lo[k] = lo[k].min(c - rad);
            hi[k] = hi[k].max(c + rad);
        }
    }
    let dims = [((hi[0] - lo[0]) / spacing).ceil() as usize + 1, ((hi[1] - lo[1]) / spacing).ceil() as usize + 1];
    let origin = [lo[0], lo[1]];
    let rows: Vec<Vec<bool>> = crate::par::map_range(dims[0], |i| {
        (0..dims[1])
            .map(|j| {
                let x = [origin[0] + (i as f64 + 0.5) * spacing, origin[1] + (j as f64 + 0.5) * spacing, 0.0];
                tubes.iter().any(|t| in_dilate(t, &x, 10.0))
            })
            .collect()
    });
    let cells: Vec<bool> = rows.into_iter().flatten().collect();
    let area = cells.iter().filter(|&&c| c).count() as f64 * spacing * spacing;
    Ok(XSet { origin, spacing, dims, cells, area })
}

/// `sup |Ef(x', 0)|` over a twice oversampled period grid.
pub fn sup_slice(f: &FrequencyField) -> f64 {
    if f.is_zero() {
        return 0.0;
    }
    let sizes: Vec<usize> = f.lattice.dims.iter().map(|n| (2 * n).next_power_of_two()).collect();
    let x: Lattice = natural_lattice_sized(&f.lattice, &sizes);
    to_physical(f, &x).iter().fold(0.0, |a, v| a.max(v.norm()))
}

/// `(||f#||_2^2, 10 |X| ||f^||_inf^2)` for the packets of `set` flagged in
/// `mask`, with `f^ = Ef(., 0)`.
pub fn l2_tube_bound_check(f: &FrequencyField, set: &WavePacketSet, mask: &[bool], area: f64) -> (f64, f64) {
    let lhs = if mask.iter().any(|&m| m) { set.masked_sum(mask).l2_norm().powi(2) } else { 0.0 };
    let sup = sup_slice(f);
    (lhs, 10.0 * area * sup * sup)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SliceWolffConfig {
    pub big_r: f64,
    pub r: f64,
    pub delta: f64,
    /// Height of the slice `x_3 = a`.
    pub a: f64,
    pub samples: usize,
    pub seed: u64,
    /// Center of `B_r`.
    pub center: Vec<f64>,
}

impl SliceWolffConfig {
    pub fn new(big_r: f64, r: f64, delta: f64, samples: usize, seed: u64) -> Self {
        SliceWolffConfig { big_r, r, delta, a: 0.0, samples, seed, center: vec![0.0; 3] }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SliceEstimate {
    pub area: f64,
    pub std_error: f64,
    pub bound_ratio: f64,
    /// Admissible `r`-tubes near the variety.
    pub small_tubes: usize,
    /// Fraction of the sampling box inside the fattened set.
    pub fat_fraction: f64,
    pub box_area: f64,
}

/// Occupancy of the union of admissible small tubes on a voxel grid.
pub struct TubeUnion {
    pub origin: Vec<f64>,
    pub voxel: f64,
    pub side: usize,
    pub cells: Vec<bool>,
    pub tubes: usize,
}

impl TubeUnion {
    pub fn contains(&self, x: &[f64]) -> bool {
        let mut flat = 0usize;
        for k in 0..3 {
            let i = ((x[k] - self.origin[k]) / self.voxel).floor();
            if i < 0.0 || i >= self.side as f64 {
                return false;
            }
            flat = flat * self.side + i as usize;
        }
        self.cells[flat]
    }

    fn bounds(&self) -> Option<([f64; 3], [f64; 3])> {
        let mut lo = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        let s = self.side;
        for (flat, &c) in self.cells.iter().enumerate() {
            if !c {
                continue;
            }
            let idx = [flat / (s * s), flat / s % s, flat % s];
            for k in 0..3 {
                lo[k] = lo[k].min(self.origin[k] + idx[k] as f64 * self.voxel);
                hi[k] = hi[k].max(self.origin[k] + (idx[k] + 1) as f64 * self.voxel);
            }
        }
        lo[0].is_finite().then_some((lo, hi))
    }
}

/// Unit directions on the upper hemisphere from a Fibonacci lattice with
/// angular spacing about `spacing`.
fn hemisphere(spacing: f64) -> Vec<Vec<f64>> {
    let n = ((4.0 * std::f64::consts::PI) / (spacing * spacing)).ceil() as usize;
    let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
    (0..n)
        .filter_map(|i| {
            let z = 1.0 - (2.0 * i as f64 + 1.0) / n as f64;
            if z < 0.0 {
                return None;
            }
            let rho = (1.0 - z * z).sqrt();
            let (s, c) = (golden * i as f64).sin_cos();
            Some(vec![rho * c, rho * s, z])
        })
        .collect()
}

/// All `r x r^{1/2+delta}` tubes inside `N_{2w}(S cap B_r)`: centers on a
/// lattice of spacing `w`, directions `w/r` apart, containment tested on 50
/// core and 8 boundary points.
pub fn admissible_union(s: &Variety, center: &[f64], r: f64, delta: f64) -> Result<TubeUnion> {
    if s.n != 3 {
        return Err(LabError::Parameter("slice estimates live in R^3".into()));
    }
    let w = r.powf(0.5 + delta);
    let reach = r + 2.0 * w;
    let voxel = w / 4.0;
    let side = (2.0 * reach / voxel).ceil() as usize + 1;
    let origin: Vec<f64> = center.iter().map(|c| c - reach).collect();
    let dfun = |x: &[f64]| s.distance_in_ball(x, center, r);
    // Centers within w of the variety piece.
    let steps = (2.0 * reach / w).floor() as usize + 1;
    let lattice: Vec<Vec<f64>> = (0..steps.pow(3))
        .map(|flat| {
            let idx = [flat / (steps * steps), flat / steps % steps, flat % steps];
            (0..3).map(|k| center[k] - reach + idx[k] as f64 * w).collect()
        })
        .collect();
    let near: Vec<bool> = crate::par::map_slice(&lattice, |x| dfun(x) <= w);
    let centers: Vec<Vec<f64>> = lattice.into_iter().zip(near).filter(|(_, k)| *k).map(|(x, _)| x).collect();
    let dirs = hemisphere(w / r);
    let half = r / 2.0;
    let tol = 2.0 * w;
    let found: Vec<Vec<(Vec<f64>, Vec<f64>)>> = crate::par::map_slice(&centers, |c| {
        let mut out = Vec::new();
        for v in &dirs {
            let a: Vec<f64> = (0..3).map(|k| c[k] - half * v[k]).collect();
            let b: Vec<f64> = (0..3).map(|k| c[k] + half * v[k]).collect();
            if dfun(&a) > tol || dfun(&b) > tol {
                continue;
            }
            let (u, x) = normal_pair(v);
            let ok = (0..50).all(|i| {
                let t = -half + r * i as f64 / 49.0;
                let p: Vec<f64> = (0..3).map(|k| c[k] + t * v[k]).collect();
                dfun(&p) <= tol
            }) && (0..8).all(|i| {
                let phi = std::f64::consts::FRAC_PI_4 * i as f64;
                let t = if i % 2 == 0 { -half } else { half };
                let (sn, cs) = phi.sin_cos();
                let p: Vec<f64> = (0..3).map(|k| c[k] + t * v[k] + w * (cs * u[k] + sn * x[k])).collect();
                dfun(&p) <= tol
            });
            if ok {
                out.push((a, b));
            }
        }
        out
    });
    let segs: Vec<(Vec<f64>, Vec<f64>)> = found.into_iter().flatten().collect();
    let mut cells = vec![false; side * side * side];
    let w2 = w * w;
    for (a, b) in &segs {
        let ab: Vec<f64> = (0..3).map(|k| b[k] - a[k]).collect();
        let l2 = dot(&ab, &ab);
        let mut lo = [0usize; 3];
        let mut hi = [0usize; 3];
        for k in 0..3 {
            let m = a[k].min(b[k]) - w;
            let n = a[k].max(b[k]) + w;
            lo[k] = (((m - origin[k]) / voxel).floor().max(0.0)) as usize;
            hi[k] = (((n - origin[k]) / voxel).ceil() as usize).min(side - 1);
        }
        // Walk the axis in voxel steps and mark nearby voxels.
        let steps = (l2.sqrt() / voxel).ceil() as usize + 1;
        let reach_vox = (w / voxel).ceil() as i64 + 1;
        for s_i in 0..=steps {
            let t = s_i as f64 / steps as f64;
            let p: Vec<f64> = (0..3).map(|k| a[k] + t * ab[k]).collect();
            let base: Vec<i64> = (0..3).map(|k| ((p[k] - origin[k]) / voxel).floor() as i64).collect();
            for di in -reach_vox..=reach_vox {
                for dj in -reach_vox..=reach_vox {
                    for dk in -reach_vox..=reach_vox {
                        let idx = [base[0] + di, base[1] + dj, base[2] + dk];
                        if (0..3).any(|k| idx[k] < lo[k] as i64 || idx[k] > hi[k] as i64) {
                            continue;
                        }
                        let flat = (idx[0] as usize * side + idx[1] as usize) * side + idx[2] as usize;
                        if cells[flat] {
                            continue;
                        }
                        let q: Vec<f64> = (0..3).map(|k| origin[k] + (idx[k] as f64 + 0.5) * voxel).collect();
                        let aq: Vec<f64> = (0..3).map(|k| q[k] - a[k]).collect();
                        // Solid cylinder with flat ends.
                        let tt = dot(&aq, &ab) / l2;
                        let d2: f64 = (0..3).map(|k| (aq[k] - tt * ab[k]).powi(2)).sum();
                        if (0.0..=1.0).contains(&tt) && d2 <= w2 {
                            cells[flat] = true;
                        }
                    }
                }
            }
        }
    }
    Ok(TubeUnion { origin, voxel, side, cells, tubes: segs.len() })
}

/// Monte Carlo estimate of `|S'~ cap {x_3 = a}|`, where `S~` is the union of
/// the `R/r` dilates (about the center of `B_r`) of admissible tubes, cut to
/// `B_{10R}`, and `S'~` is the union of `R x R^{1/2+delta}` tubes within
/// angle `1/10` of `e_3` lying in `S~`.
pub fn slice_wolff_estimate(s: &Variety, cfg: &SliceWolffConfig) -> Result<SliceEstimate> {
    let u = admissible_union(s, &cfg.center, cfg.r, cfg.delta)?;
    slice_wolff_from_union(&u, cfg)
}

/// Tilts `(i, j)/64` with `|(i, j)|/64 < 1/10`, most vertical first.
fn tilt_grid() -> Vec<Vec<f64>> {
    let mut t: Vec<(i64, i64)> = Vec::new();
    for i in -6..=6i64 {
        for j in -6..=6i64 {
            if ((i * i + j * j) as f64).sqrt() / 64.0 < 0.1 {
                t.push((i, j));
            }
        }
    }
    t.sort_by_key(|&(i, j)| (i * i + j * j, i, j));
    t.into_iter()
        .map(|(i, j)| {
            let (ti, tj) = (i as f64 / 64.0, j as f64 / 64.0);
            // Polar angle |(ti, tj)| towards azimuth atan2(tj, ti).
            let th = (ti * ti + tj * tj).sqrt();
            let (az_s, az_c) = if th == 0.0 { (0.0, 1.0) } else { (tj / th, ti / th) };
            vec![th.sin() * az_c, th.sin() * az_s, th.cos()]
        })
        .collect()
}

pub fn slice_wolff_from_union(u: &TubeUnion, cfg: &SliceWolffConfig) -> Result<SliceEstimate> {
    let (big_r, r) = (cfg.big_r, cfg.r);
    if !(big_r > r && r > 1.0) {
        return Err(LabError::Parameter("need R > r > 1".into()));
    }
    if cfg.a.abs() > 2.0 * big_r {
        return Err(LabError::Domain("slice height outside [-2R, 2R]".into()));
    }
    let norm_bound = big_r * big_r / r.sqrt();
    let Some((lo, hi)) = u.bounds() else {
        return Ok(SliceEstimate { area: 0.0, std_error: 0.0, bound_ratio: 0.0, small_tubes: 0, fat_fraction: 0.0, box_area: 0.0 });
    };
    let lam = big_r / r;
    let c = &cfg.center;
    // S~ = lam (U - c) + c, cut to B_{10R}(c).
    let in_fat = |x: &[f64]| {
        if dist(x, c) > 10.0 * big_r {
            return false;
        }
        let y: Vec<f64> = (0..3).map(|k| c[k] + (x[k] - c[k]) / lam).collect();
        u.contains(&y)
    };
    let box_lo = [c[0] + lam * (lo[0] - c[0]), c[1] + lam * (lo[1] - c[1])];
    let box_hi = [c[0] + lam * (hi[0] - c[0]), c[1] + lam * (hi[1] - c[1])];
    let box_area = (box_hi[0] - box_lo[0]) * (box_hi[1] - box_lo[1]);
    let wr = big_r.powf(0.5 + cfg.delta);
    let dirs = tilt_grid();
    let mut lateral = vec![[0.0, 0.0]];
    for i in -2..=2i32 {
        for j in -2..=2i32 {
            let o = [i as f64 * wr / 2.0, j as f64 * wr / 2.0];
            if (i, j) != (0, 0) && o[0].hypot(o[1]) <= wr {
                lateral.push(o);
            }
        }
    }
    let axial: Vec<f64> = [0.0, -0.125, 0.125, -0.25, 0.25, -0.375, 0.375, -0.5, 0.5].iter().map(|s| s * big_r).collect();
    let covered = |y: &[f64]| -> bool {
        if !in_fat(y) {
            return false;
        }
        for v in &dirs {
            let (e1, e2) = normal_pair(v);
            for o in &lateral {
                for &s in &axial {
                    let mid: Vec<f64> = (0..3).map(|k| y[k] + o[0] * e1[k] + o[1] * e2[k] + s * v[k]).collect();
                    // The foot of y on the axis comes first.
                    let foot = -s / big_r + 0.5;
                    let mut ts: Vec<f64> = vec![foot.clamp(0.0, 1.0)];
                    ts.extend((0..50).map(|i| i as f64 / 49.0));
                    let axis_ok = ts.iter().all(|&t| {
                        let p: Vec<f64> = (0..3).map(|k| mid[k] + (t - 0.5) * big_r * v[k]).collect();
                        in_fat(&p)
                    });
                    if !axis_ok {
                        continue;
                    }
                    let rim_ok = (0..8).all(|i| {
                        let t = (i as f64 + 0.5) / 8.0 - 0.5;
                        let (sn, cs) = (std::f64::consts::FRAC_PI_4 * 3.0 * i as f64).sin_cos();
                        let p: Vec<f64> = (0..3).map(|k| mid[k] + t * big_r * v[k] + wr * (cs * e1[k] + sn * e2[k])).collect();
                        in_fat(&p)
                    });
                    if rim_ok {
                        return true;
                    }
                }
            }
        }
        false
    };
    const SHARD: usize = 64;
    let shards = cfg.samples.div_ceil(SHARD);
    let counts: Vec<(usize, usize, usize)> = crate::par::map_range(shards, |sh| {
        let mut g = rng::substream(cfg.seed, 71, sh as u64);
        let n = SHARD.min(cfg.samples - sh * SHARD);
        let (mut hit, mut fat) = (0, 0);
        for _ in 0..n {
            let y = [rng::uniform(&mut g, box_lo[0], box_hi[0]), rng::uniform(&mut g, box_lo[1], box_hi[1]), cfg.a];
            if in_fat(&y) {
                fat += 1;
                if covered(&y) {
                    hit += 1;
                }
            }
        }
        (n, hit, fat)
    });
    let n: usize = counts.iter().map(|c| c.0).sum();
    let hits: usize = counts.iter().map(|c| c.1).sum();
    let fat: usize = counts.iter().map(|c| c.2).sum();
    if n == 0 {
        return Err(LabError::Parameter("need at least one sample".into()));
    }
    let p = hits as f64 / n as f64;
    let area = box_area * p;
    let std_error = box_area * (p * (1.0 - p) / n as f64).sqrt();
    Ok(SliceEstimate { area, std_error, bound_ratio: area / norm_bound, small_tubes: u.tubes, fat_fraction: fat as f64 / n as f64, box_area })
}

/// Slice area predicted for the plane through the center of `B_r`, unit
/// normal `e_1`, at height `a = 0`. The fattened set is the slab
/// `|x_1| <= H`, `H = 2 (R/r) r^{1/2+delta}`, over the disc of radius
/// `rho = R + H`. A near vertical `R`-tube through `(x_1, x_2, 0)` has its
/// core inside that disc iff `|x_2| <= (sqrt(rho^2 - R^2/4) + w_R) / cos(1/10)`.
pub fn plane_slice_model(big_r: f64, r: f64, delta: f64) -> f64 {
    let h = 2.0 * big_r / r * r.powf(0.5 + delta);
    let wr = big_r.powf(0.5 + delta);
    let rho = big_r + h;
    let x = ((rho * rho - big_r * big_r / 4.0).max(0.0).sqrt() + wr) / 0.1f64.cos();
    2.0 * h * 2.0 * x.min(rho)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::surface::Surface;
    use crate::wavepackets::{decompose, Cap};

    #[test]
    fn exponent_values() {
        assert_eq!(p_k_exponent(3, 2).unwrap(), Ratio::new(13, 4));
        assert_eq!(p_k_exponent(4, 3).unwrap(), Ratio::new(25, 9));
        assert_eq!(p_k_exponent(4, 2).unwrap(), Ratio::new(113, 39));
        assert!(p_k_exponent(3, 3).is_err());
        assert!(p_k_exponent(4, 1).is_err());
        for n in 3..=8 {
            for k in 2..n - 1 {
                assert!(p_k_exponent(n, k + 1).unwrap() < p_k_exponent(n, k).unwrap());
            }
            assert!(p_k_exponent(n, n - 1).unwrap() > Ratio::from_integer(2));
        }
    }

    #[test]
    fn projection_and_distance() {
        let s = Variety::sphere(&[0.0; 3], 2.0);
        assert!((s.distance(&[3.0, 0.0, 0.0]) - 1.0).abs() < 1e-10);
        let p = Variety::plane(&[0.0, 0.0, 1.0], 1.0);
        assert!((p.distance(&[4.0, -2.0, 3.5]) - 2.5).abs() < 1e-12);
        assert!((p.distance_in_ball(&[0.0, 0.0, 3.0], &[0.0; 3], 3.0) - 2.0).abs() < 1e-12);
        let want = (1.0 + (17f64.sqrt() - 3.0).powi(2)).sqrt();
        assert!((p.distance_in_ball(&[4.0, 0.0, 2.0], &[0.0; 3], 3.0) - want).abs() < 1e-12);
        // Curve: intersection of two planes.
        let line = Variety::new(3, vec![p.polys[0].clone(), Variety::plane(&[1.0, 0.0, 0.0], 0.0).polys[0].clone()]).unwrap();
        assert!((line.distance(&[3.0, 7.0, 5.0]) - 5.0).abs() < 1e-10);
        let sad = Variety::saddle(10.0);
        let mut r = rng::stream(2, 0);
        for _ in 0..50 {
            let x: Vec<f64> = (0..3).map(|_| rng::uniform(&mut r, -5.0, 5.0)).collect();
            let y = sad.project(&x).unwrap();
            assert!(sad.residual(&y) < 1e-9);
            assert!(dist(&x, &y) <= sad.polys[0].eval(&x).abs() / norm(&sad.polys[0].grad(&x)) * 3.0 + 1e-9);
        }
    }

    #[test]
    fn variety_text_roundtrip() {
        let v = Variety::new(3, vec![Variety::saddle(4.0).polys[0].clone(), Variety::plane(&[1.0, 2.0, 0.0], 1.5).polys[0].clone()]).unwrap();
        let back = Variety::parse(&v.to_text()).unwrap();
        let mut r = rng::stream(3, 0);
        for _ in 0..20 {
            let x: Vec<f64> = (0..3).map(|_| rng::normal(&mut r)).collect();
            for (a, b) in v.polys.iter().zip(&back.polys) {
                assert_eq!(a.eval(&x), b.eval(&x));
            }
        }
        assert!(Variety::parse("1:1,0,0").is_err());
        assert!(Variety::parse("n=3\n1:1,0").is_err());
        assert!(Variety::parse("n=2\n# comment\n\n2.5:1,1 ; -1:0,0").is_ok());
    }

    fn tube_at(omega: &[f64], v: &[f64], r: f64, delta: f64) -> Tube {
        let cap = Cap { k: vec![0, 0], center: omega.to_vec(), radius: 0.01, index: 0 };
        let mut t = Tube::new(&Surface::Paraboloid, cap, vec![0, 0], 1.0, vec![0.0; 3], r, delta);
        t.v = v.to_vec();
        t
    }

    #[test]
    fn x_set_single_and_empty() {
        assert_eq!(build_x_set(&[], None).unwrap().area, 0.0);
        let t = tube_at(&[0.0, 0.0], &[0.0, 0.0], 64.0, 0.05);
        let x = build_x_set(std::slice::from_ref(&t), None).unwrap();
        let want = std::f64::consts::PI * (10.0 * t.width()).powi(2);
        assert!((x.area / want - 1.0).abs() < 0.05, "{} {}", x.area, want);
    }

    #[test]
    fn x_set_matches_finer_recount() {
        let mut r = rng::stream(5, 0);
        let tubes: Vec<Tube> = (0..50)
            .map(|_| {
                let om = [rng::uniform(&mut r, -0.8, 0.8), rng::uniform(&mut r, -0.8, 0.8)];
                let v = [rng::uniform(&mut r, -60.0, 60.0), rng::uniform(&mut r, -60.0, 60.0)];
                let mut t = tube_at(&om, &v, 64.0, 0.05);
                t.x0 = vec![rng::uniform(&mut r, -20.0, 20.0), rng::uniform(&mut r, -20.0, 20.0), rng::uniform(&mut r, -30.0, 30.0)];
                t
            })
            .collect();
        let x = build_x_set(&tubes, None).unwrap();
        // Independent recount: slice of 10T is the disc |x' - c| <= 10w with
        // c = x0' + x0_3 grad h - v, cut by |x - x0| <= 10r.
        let fine = x.spacing / 4.0;
        let (nx, ny) = (x.dims[0] * 4, x.dims[1] * 4);
        let mut count = 0usize;
        for i in 0..nx {
            for j in 0..ny {
                let p = [x.origin[0] + (i as f64 + 0.5) * fine, x.origin[1] + (j as f64 + 0.5) * fine];
                let hit = tubes.iter().any(|t| {
                    let c = [t.x0[0] + t.x0[2] * 2.0 * t.cap.center[0] - t.v[0], t.x0[1] + t.x0[2] * 2.0 * t.cap.center[1] - t.v[1]];
                    let w = 64f64.powf(0.55);
                    let in_disc = (p[0] - c[0]).hypot(p[1] - c[1]) <= 10.0 * w;
                    let d2 = (p[0] - t.x0[0]).powi(2) + (p[1] - t.x0[1]).powi(2) + t.x0[2].powi(2);
                    in_disc && d2 <= 6400.0 * 64.0
                });
                count += hit as usize;
            }
        }
        let fine_area = count as f64 * fine * fine;
        assert!((x.area / fine_area - 1.0).abs() < 0.02, "{} {}", x.area, fine_area);
        // Union bound.
        let (a, b) = tubes.split_at(25);
        let xa = build_x_set(a, Some(x.spacing)).unwrap().area;
        let xb = build_x_set(b, Some(x.spacing)).unwrap().area;
        assert!(x.area <= (xa + xb) * 1.01);
    }

    #[test]
    fn l2_tube_bound_holds() {
        let f = FrequencyField::plane_waves(9, 2, 1.0 / 64.0, 0.45, 3, 10.0);
        let set = decompose(&f, &Surface::Paraboloid, 64.0, 0.05, &[0.0; 3]).unwrap();
        let z = FrequencyField::zeros_on_cube(2, 1.0 / 64.0);
        assert_eq!(l2_tube_bound_check(&z, &set, &vec![false; set.len()], 0.0), (0.0, 0.0));
        let tubes: Vec<Tube> = (0..set.len()).map(|i| set.tube(i)).collect();
        let mut r = rng::stream(10, 0);
        for trial in 0..30 {
            let mask: Vec<bool> = if trial == 0 { vec![true; set.len()] } else { (0..set.len()).map(|_| rng::uniform(&mut r, 0.0, 1.0) < 0.3).collect() };
            let sel: Vec<Tube> = tubes.iter().zip(&mask).filter(|(_, m)| **m).map(|(t, _)| t.clone()).collect();
            let x = build_x_set(&sel, Some(2.0)).unwrap();
            let (lhs, rhs) = l2_tube_bound_check(&f, &set, &mask, x.area);
            assert!(lhs <= rhs, "trial {trial}: {lhs} > {rhs}");
        }
    }

    fn geo(omega: &[f64], a: [f64; 3], b: [f64; 3], r: f64, delta: f64) -> GeoTube {
        GeoTube { omega: omega.to_vec(), a: a.to_vec(), b: b.to_vec(), width: r.powf(0.5 + delta), scale: r }
    }

    #[test]
    fn nested_tubes() {
        let g0 = Grain { variety: Variety::whole(3), center: vec![0.0; 3], radius: 4096.0 };
        let mg0 = Multigrain::new(vec![g0.clone()], 0).unwrap();
        let t = geo(&[0.0, 0.0], [0.0, 0.0, -2048.0], [0.0, 0.0, 2048.0], 4096.0, 0.05);
        assert!(nested_tube_check(&mg0, &t, &[], &[0.05]).unwrap());
        let g1 = Grain { variety: Variety::plane(&[1.0, 0.0, 0.0], 0.0), center: vec![0.0; 3], radius: 1024.0 };
        let mg1 = Multigrain::new(vec![g0.clone(), g1], 0).unwrap();
        assert!(nested_tube_check(&mg1, &t, &[], &[0.05, 0.05]).is_err());
        // Lies in the plane: fine. Crosses it: fails.
        let inside = geo(&[0.0, 0.0], [0.0, 0.0, -512.0], [0.0, 0.0, 512.0], 1024.0, 0.05);
        assert!(nested_tube_check(&mg1, &t, &[inside], &[0.05, 0.05]).unwrap());
        let across = geo(&[0.0, 0.0], [-512.0, 0.0, 0.0], [512.0, 0.0, 0.0], 1024.0, 0.05);
        assert!(!nested_tube_check(&mg1, &t, &[across], &[0.05, 0.05]).unwrap());
        // Bad grain chains are rejected.
        let bad = Grain { variety: Variety::plane(&[1.0, 0.0, 0.0], 0.0), center: vec![0.0; 3], radius: 8192.0 };
        assert!(Multigrain::new(vec![g0, bad], 0).is_err());
    }

    #[test]
    fn nested_tubes_constructive() {
        let delta = 0.05;
        let mut r = rng::stream(12, 0);
        for trial in 0..20 {
            // Plane through the origin, then a line inside it.
            let nrm = {
                let v: Vec<f64> = (0..3).map(|_| rng::normal(&mut r)).collect();
                let l = norm(&v);
                v.iter().map(|x| x / l).collect::<Vec<_>>()
            };
            let (u, _) = normal_pair(&nrm);
            let plane = Variety::plane(&nrm, 0.0);
            let line = Variety::new(3, vec![plane.polys[0].clone(), Variety::plane(&crate::geometry::normal_pair(&nrm).1, 0.0).polys[0].clone()]).unwrap();
            let g = vec![
                Grain { variety: Variety::whole(3), center: vec![0.0; 3], radius: 1024.0 },
                Grain { variety: plane, center: vec![0.0; 3], radius: 256.0 },
                Grain { variety: line, center: vec![0.0; 3], radius: 64.0 },
            ];
            let mg = Multigrain::new(g, trial).unwrap();
            let om = [rng::uniform(&mut r, -0.3, 0.3), rng::uniform(&mut r, -0.3, 0.3)];
            let seg = |len: f64| {
                let a: Vec<f64> = u.iter().map(|x| -x * len / 2.0).collect();
                let b: Vec<f64> = u.iter().map(|x| x * len / 2.0).collect();
                (a, b)
            };
            let mk = |len: f64, r: f64| {
                let (a, b) = seg(len);
                // Project the endpoints back onto the grain varieties.
                let a = mg.grains[2].variety.project(&a).unwrap();
                let b = mg.grains[2].variety.project(&b).unwrap();
                GeoTube { omega: om.to_vec(), a, b, width: r.powf(0.5 + delta), scale: r }
            };
            let t = mk(1024.0, 1024.0);
            let w = vec![mk(256.0, 256.0), mk(64.0, 64.0)];
            assert!(nested_tube_check(&mg, &t, &w, &[delta; 3]).unwrap());
            let mut moved = w.clone();
            let shift = 10.0 * 256f64.powf(0.5 + delta);
            moved[0].a.iter_mut().zip(&nrm).for_each(|(x, n)| *x += shift * n);
            moved[0].b.iter_mut().zip(&nrm).for_each(|(x, n)| *x += shift * n);
            assert!(!nested_tube_check(&mg, &t, &moved, &[delta; 3]).unwrap());
        }
    }

    #[test]
    fn sphere_estimate_reproducible() {
        let s = Variety::sphere(&[0.0; 3], 8.0);
        let cfg = SliceWolffConfig::new(256.0, 16.0, 0.01, 600, 1);
        let u = admissible_union(&s, &cfg.center, cfg.r, cfg.delta).unwrap();
        let a = slice_wolff_from_union(&u, &cfg).unwrap();
        let b = slice_wolff_from_union(&u, &SliceWolffConfig { seed: 2, ..cfg }).unwrap();
        assert!((a.area - b.area).abs() <= 3.0 * a.std_error.hypot(b.std_error), "{a:?} {b:?}");
        // No candidate tube: empty estimate.
        let far = Variety::plane(&[1.0, 0.0, 0.0], 1000.0);
        let e = slice_wolff_estimate(&far, &SliceWolffConfig::new(256.0, 16.0, 0.01, 100, 1)).unwrap();
        assert_eq!((e.area, e.std_error, e.bound_ratio), (0.0, 0.0, 0.0));
    }

    #[test]
    fn plane_slice_matches_model() {
        let s = Variety::plane(&[1.0, 0.0, 0.0], 0.0);
        let cfg = SliceWolffConfig::new(256.0, 16.0, 0.01, 1500, 3);
        let est = slice_wolff_estimate(&s, &cfg).unwrap();
        let model = plane_slice_model(256.0, 16.0, 0.01);
        assert!(est.small_tubes > 0);
        assert!((est.area / model - 1.0).abs() < 0.15, "{est:?} model {model}");
        assert!(est.bound_ratio <= 16.0);
    }
}
