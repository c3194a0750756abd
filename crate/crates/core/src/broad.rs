//! Cap decompositions, broad functions, the bilinear term, normal forms and
//! bad lines for hyperbolic phases, and the multi-scale broad predicate.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::field::FrequencyField;
use crate::poly::Poly;
use crate::rng;
use crate::surface::Surface;
use crate::{e, LabError, Result, C64};

/// Dyadic squares of side `1/K` tiling `[-1, 1]^d`; a node belongs to the
/// cap `floor((xi + 1) K)` on each axis, with the top edge folded into the
/// last cap.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CapGrid {
    pub k: usize,
    pub d: usize,
}

impl CapGrid {
    pub fn new(k: usize, d: usize) -> Result<Self> {
        if k == 0 {
            return Err(LabError::Parameter("K must be positive".into()));
        }
        Ok(CapGrid { k, d })
    }

    pub fn side(&self) -> usize {
        2 * self.k
    }

    pub fn len(&self) -> usize {
        self.side().pow(self.d as u32)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn coords(&self, index: usize) -> Vec<usize> {
        let mut c = vec![0; self.d];
        let mut rest = index;
        for a in (0..self.d).rev() {
            c[a] = rest % self.side();
            rest /= self.side();
        }
        c
    }

    pub fn index(&self, c: &[usize]) -> usize {
        c.iter().fold(0, |acc, &v| acc * self.side() + v)
    }

    pub fn cap_of(&self, xi: &[f64]) -> usize {
        let c: Vec<usize> = xi
            .iter()
            .map(|&x| (((x + 1.0) * self.k as f64).floor().max(0.0) as usize).min(self.side() - 1))
            .collect();
        self.index(&c)
    }

    pub fn center(&self, index: usize) -> Vec<f64> {
        self.coords(index).iter().map(|&c| -1.0 + (c as f64 + 0.5) / self.k as f64).collect()
    }

    /// Closures intersect, diagonal contact included.
    pub fn adjacent(&self, a: usize, b: usize) -> bool {
        let (ca, cb) = (self.coords(a), self.coords(b));
        ca.iter().zip(&cb).all(|(x, y)| x.abs_diff(*y) <= 1)
    }

    /// Index of the coarser cap (side `1/k_coarse`) containing cap `i`.
    pub fn parent_in(&self, i: usize, coarse: &CapGrid) -> usize {
        let ratio = self.k / coarse.k;
        let c: Vec<usize> = self.coords(i).iter().map(|&v| v / ratio).collect();
        coarse.index(&c)
    }

    /// `f_tau = f 1_tau`.
    pub fn restrict(&self, f: &FrequencyField, cap: usize) -> FrequencyField {
        let mut out = f.clone();
        for (i, v) in out.values.iter_mut().enumerate() {
            if v.norm_sqr() != 0.0 && self.cap_of(&f.lattice.node(i)) != cap {
                *v = C64::new(0.0, 0.0);
            }
        }
        out.tighten_support();
        out
    }
}

/// `E f_tau(x)` for every cap and point: `out[point][cap]`.
pub fn cap_extensions(f: &FrequencyField, surface: &Surface, grid: &CapGrid, points: &[Vec<f64>]) -> Result<Vec<Vec<C64>>> {
    let d = f.dim();
    if grid.d != d {
        return Err(LabError::Parameter("cap grid dimension mismatch".into()));
    }
    let xmax = points.iter().flat_map(|p| p[..d].iter().map(|v| v.abs())).fold(0.0, f64::max);
    let h = f.h();
    if xmax > 0.0 && h > 1.0 / (4.0 * xmax) * (1.0 + 1e-9) {
        return Err(LabError::Resolution(format!("frequency spacing {h} too coarse for |x'| up to {xmax}")));
    }
    let w = f.lattice.cell_volume();
    let nodes: Vec<(Vec<f64>, C64, f64, usize)> = (0..f.values.len())
        .filter(|&i| f.values[i].norm_sqr() != 0.0)
        .map(|i| {
            let xi = f.lattice.node(i);
            let hv = surface.h(&xi);
            let c = grid.cap_of(&xi);
            (xi, f.values[i] * w, hv, c)
        })
        .collect();
    let ncap = grid.len();
    Ok(crate::par::map_slice(points, |p| {
        let mut acc = vec![C64::new(0.0, 0.0); ncap];
        for (xi, v, hv, c) in &nodes {
            let mut ph = hv * p[d];
            for k in 0..d {
                ph += xi[k] * p[k];
            }
            acc[*c] += v * e(ph);
        }
        acc
    }))
}

/// `Ef = sum_tau Ef_tau`, summed in cap order.
pub fn total(caps: &[C64]) -> C64 {
    caps.iter().fold(C64::new(0.0, 0.0), |a, b| a + b)
}

fn max_abs(caps: &[C64]) -> f64 {
    caps.iter().map(|v| v.norm()).fold(0.0, f64::max)
}

/// `|Ef(x)|` when `max_tau |Ef_tau(x)| <= alpha |Ef(x)|`, else 0.
pub fn broad_value(caps: &[C64], alpha: f64) -> f64 {
    let ef = total(caps).norm();
    if max_abs(caps) <= alpha * ef {
        ef
    } else {
        0.0
    }
}

fn check_alpha(alpha: f64) -> Result<()> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(LabError::Parameter(format!("broadness parameter {alpha} outside (0, 1)")));
    }
    Ok(())
}

/// `Br_alpha Ef` at the given points.
pub fn broad_function(f: &FrequencyField, surface: &Surface, alpha: f64, k: usize, points: &[Vec<f64>]) -> Result<Vec<f64>> {
    check_alpha(alpha)?;
    let grid = CapGrid::new(k, f.dim())?;
    let caps = cap_extensions(f, surface, &grid, points)?;
    Ok(caps.iter().map(|c| broad_value(c, alpha)).collect())
}

/// `max_x |Ef| - |Br_alpha Ef| - alpha^{-1} max_tau |Ef_tau|`, divided by
/// `max |Ef|` (0 when `Ef` vanishes at every point).
pub fn broad_narrow_check(f: &FrequencyField, surface: &Surface, alpha: f64, k: usize, points: &[Vec<f64>]) -> Result<f64> {
    check_alpha(alpha)?;
    let grid = CapGrid::new(k, f.dim())?;
    let caps = cap_extensions(f, surface, &grid, points)?;
    let mut worst = f64::NEG_INFINITY;
    let mut scale: f64 = 0.0;
    for c in &caps {
        let ef = total(c).norm();
        scale = scale.max(ef);
        worst = worst.max(ef - broad_value(c, alpha) - max_abs(c) / alpha);
    }
    if scale == 0.0 {
        return Ok(0.0);
    }
    Ok(worst / scale)
}

/// `sum over ordered non-adjacent pairs |Ef_tau|^{1/2} |Ef_tau'|^{1/2}`.
pub fn bilinear_value(grid: &CapGrid, caps: &[C64]) -> f64 {
    let roots: Vec<f64> = caps.iter().map(|v| v.norm().sqrt()).collect();
    let active: Vec<usize> = (0..caps.len()).filter(|&i| roots[i] > 0.0).collect();
    let mut acc = 0.0;
    for &a in &active {
        for &b in &active {
            if !grid.adjacent(a, b) {
                acc += roots[a] * roots[b];
            }
        }
    }
    acc
}

pub fn bilinear_term(f: &FrequencyField, surface: &Surface, k: usize, points: &[Vec<f64>]) -> Result<Vec<f64>> {
    if k < 4 {
        return Err(LabError::Parameter("K must be at least 4 for non-adjacent pairs".into()));
    }
    let grid = CapGrid::new(k, f.dim())?;
    let caps = cap_extensions(f, surface, &grid, points)?;
    Ok(caps.iter().map(|c| bilinear_value(&grid, c)).collect())
}

/// Coefficient bound `|a20| + |a22| + 100^d sum_{i>=3} |a_ij| <= eps0` for
/// `h = xi1 xi2 + a20 xi1^2 + a22 xi2^2 + (terms of degree 3..d)`.
pub fn normal_form_check(h: &Poly, d: u32, eps0: f64) -> Result<bool> {
    if h.nvars != 2 {
        return Err(LabError::Form("normal form needs two variables".into()));
    }
    if (h.coeff(&[1, 1]) - 1.0).abs() > 0.0 {
        return Err(LabError::Form("coefficient of xi1 xi2 must be 1".into()));
    }
    let mut low = 0.0;
    let mut high = 0.0;
    for (ex, c) in &h.terms {
        let deg = ex[0] + ex[1];
        match deg {
            0 | 1 => return Err(LabError::Form("constant and linear terms are not allowed".into())),
            2 if ex[0] == 1 => {}
            2 => low += c.abs(),
            _ if deg > d => return Err(LabError::Form(format!("term of degree {deg} exceeds d = {d}"))),
            _ => high += c.abs(),
        }
    }
    Ok(low + 100f64.powi(d as i32) * high <= eps0)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Line {
    pub iota: u8,
    pub a: f64,
    pub v: [f64; 2],
}

impl Line {
    /// `iota = 1`: through `(0, a)`; `iota = 2`: through `(a, 0)`.
    pub fn base_point(&self) -> [f64; 2] {
        if self.iota == 1 {
            [0.0, self.a]
        } else {
            [self.a, 0.0]
        }
    }

    pub fn distance(&self, p: &[f64]) -> f64 {
        let b = self.base_point();
        let n = (self.v[0] * self.v[0] + self.v[1] * self.v[1]).sqrt();
        ((p[0] - b[0]) * self.v[1] - (p[1] - b[1]) * self.v[0]).abs() / n
    }
}

/// The coefficients `c_{i,j}` of `h o M_l^{-1}` with `c[i][j]` multiplying
/// `xi1^{i-j} xi2^j`. For `iota = 2` the variables are exchanged first, so
/// the table is in the exchanged frame.
pub fn line_coefficients(h: &Poly, line: &Line) -> Vec<Vec<f64>> {
    let d = h.degree() as usize;
    let (poly, v, a) = if line.iota == 1 {
        (h.clone(), line.v, line.a)
    } else {
        let swapped = Poly::from_terms(2, h.terms.iter().map(|(ex, c)| (vec![ex[1], ex[0]], *c)).collect());
        (swapped, [line.v[1], line.v[0]], line.a)
    };
    let n = (v[0] * v[0] + v[1] * v[1]).sqrt();
    let (v1, v2) = (v[0] / n, v[1] / n);
    // M^{-1}(eta) = eta1 v + eta2 v_perp + (0, a).
    let t = poly.compose_affine(&[v1, -v2, v2, v1], &[0.0, a]);
    (0..=d)
        .map(|i| (0..=i).map(|j| t.coeff(&[(i - j) as u32, j as u32])).collect())
        .collect()
}

/// Parameters and strips for bad lines of a hyperbolic normal form.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BadStripFamily {
    pub d: u32,
    pub eps0: f64,
    pub k_l: f64,
    /// `10^{-10d} eps0 / K_L`.
    pub c1: f64,
    /// Lattice spacing for `a` and the direction set; `c1` unless overridden.
    pub spacing: f64,
    /// Strip half-width; `c1` unless overridden.
    pub width: f64,
    /// `10^{20d} / eps0`, saturated.
    pub m: u64,
    pub strips: Vec<Line>,
}

impl BadStripFamily {
    pub fn new(d: u32, eps0: f64, k_l: f64) -> Self {
        let c1 = 10f64.powi(-10 * d as i32) * eps0 / k_l;
        let m = 10f64.powi(20 * d as i32) / eps0;
        BadStripFamily { d, eps0, k_l, c1, spacing: c1, width: c1, m: if m >= u64::MAX as f64 { u64::MAX } else { m as u64 }, strips: Vec::new() }
    }

    pub fn with_strips(mut self, strips: Vec<Line>, width: f64) -> Self {
        self.strips = strips;
        self.width = width;
        self
    }

    /// `10^{-5d} eps0 / K_L`.
    pub fn threshold(&self) -> f64 {
        10f64.powi(-5 * self.d as i32) * self.eps0 / self.k_l
    }

    /// Maximal `spacing`-separated set on the unit circle: equally spaced
    /// points whose chord is at least the spacing.
    pub fn directions(&self) -> Vec<[f64; 2]> {
        let n = (std::f64::consts::PI / (self.spacing / 2.0).min(1.0).asin()).floor().max(3.0) as usize;
        (0..n)
            .map(|k| {
                let t = std::f64::consts::TAU * k as f64 / n as f64;
                [t.cos(), t.sin()]
            })
            .collect()
    }

    /// Every lattice line `l_{iota,a,v}` with its classification.
    pub fn lines(&self, h: &Poly) -> Result<Vec<(Line, bool, Vec<Vec<f64>>)>> {
        let na = (10.0 / self.spacing + 1e-9).floor() as i64;
        if na > 100_000 {
            return Err(LabError::Parameter(format!("spacing {} gives too many lines; pass a desk spacing", self.spacing)));
        }
        let dirs = self.directions();
        let mut lines = Vec::new();
        for ai in -na..=na {
            let a = ai as f64 * self.spacing;
            for v in &dirs {
                let iota = if v[1].abs() <= v[0].abs() { 1 } else { 2 };
                lines.push(Line { iota, a, v: *v });
            }
        }
        let out: Vec<Result<(Line, bool, Vec<Vec<f64>>)>> = crate::par::map_slice(&lines, |l| {
            let (bad, c) = is_bad_line(h, l, self)?;
            Ok((l.clone(), bad, c))
        });
        out.into_iter().collect()
    }

    /// Enumerates lines with lattice spacing `spacing` and keeps the bad
    /// ones as strips of half-width `spacing`.
    pub fn enumerate(d: u32, eps0: f64, k_l: f64, h: &Poly, spacing: Option<f64>) -> Result<Self> {
        let mut fam = BadStripFamily::new(d, eps0, k_l);
        if let Some(s) = spacing {
            fam.spacing = s;
            fam.width = s;
        }
        fam.strips = fam.lines(h)?.into_iter().filter(|(_, bad, _)| *bad).map(|(l, _, _)| l).collect();
        Ok(fam)
    }

    pub fn contains(&self, strip: usize, p: &[f64]) -> bool {
        self.strips[strip].distance(p) <= self.width
    }
}

/// Bad-line test: `max_{i>=2} |c_{i,0}| <= 10^{-5d} eps0 / K_L`.
pub fn is_bad_line(h: &Poly, line: &Line, family: &BadStripFamily) -> Result<(bool, Vec<Vec<f64>>)> {
    let c = line_coefficients(h, line);
    let top = (2..c.len()).map(|i| c[i][0].abs()).fold(0.0, f64::max);
    let bad = top <= family.threshold();
    if bad && c.len() > 2 && c[2][1].abs() < 0.01 {
        return Err(LabError::Inconsistency(format!("|c21| = {} < 1/100 on a bad line", c[2][1].abs())));
    }
    Ok((bad, c))
}

/// CSV table: `iota,a,v1,v2,bad,c20,...,cd0`.
pub fn write_bad_line_table<W: Write>(w: &mut W, rows: &[(Line, bool, Vec<Vec<f64>>)], d: usize) -> Result<()> {
    let cols: Vec<String> = (2..=d).map(|i| format!("c{i}0")).collect();
    writeln!(w, "iota,a,v1,v2,bad,{}", cols.join(","))?;
    for (l, bad, c) in rows {
        let vals: Vec<String> = (2..=d).map(|i| format!("{:e}", c.get(i).map(|r| r[0]).unwrap_or(0.0))).collect();
        writeln!(w, "{},{},{},{},{},{}", l.iota, l.a, l.v[0], l.v[1], *bad as u8, vals.join(","))?;
    }
    Ok(())
}

/// Outcome of the multi-scale predicate at one point.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MultiscalePoint {
    pub value: f64,
    pub broad: bool,
    /// Largest strip-sum found by greedy search (a lower bound on the max).
    pub greedy: f64,
    /// The value used in the decision: exact when exhaustive, otherwise the
    /// triangle-inequality upper bound.
    pub decided_with: f64,
    pub exhaustive: bool,
}

/// Exhaustive search is used up to this many strips.
pub const EXHAUSTIVE_STRIPS: usize = 8;

struct StripSearch {
    /// K0-cap membership per strip.
    members: Vec<Vec<bool>>,
    m: u64,
}

impl StripSearch {
    /// `|sum of Ef_tau over caps in the intersection of the chosen strips and
    /// the region mask|`.
    fn value(&self, chosen: &[usize], caps: &[C64], region: &[bool]) -> f64 {
        let mut acc = C64::new(0.0, 0.0);
        for (t, v) in caps.iter().enumerate() {
            if region[t] && chosen.iter().all(|&s| self.members[s][t]) {
                acc += v;
            }
        }
        acc.norm()
    }

    fn exhaustive(&self, caps: &[C64], region: &[bool]) -> f64 {
        let n = self.members.len();
        let mut best: f64 = 0.0;
        for mask in 1u32..(1u32 << n) {
            if mask.count_ones() as u64 > self.m {
                continue;
            }
            let chosen: Vec<usize> = (0..n).filter(|&i| mask >> i & 1 == 1).collect();
            best = best.max(self.value(&chosen, caps, region));
        }
        best
    }

    fn upper_bound(&self, caps: &[C64], region: &[bool]) -> f64 {
        self.members
            .iter()
            .map(|mem| caps.iter().enumerate().filter(|(t, _)| region[*t] && mem[*t]).map(|(_, v)| v.norm()).sum::<f64>())
            .fold(0.0, f64::max)
    }

    fn greedy(&self, caps: &[C64], region: &[bool], budget: usize, seed: u64) -> f64 {
        let n = self.members.len();
        if n == 0 {
            return 0.0;
        }
        let mut r = rng::stream(seed, 77);
        let mut best: f64 = 0.0;
        for _ in 0..budget.max(1) {
            let start = (rng::uniform(&mut r, 0.0, 1.0) * n as f64) as usize % n;
            let mut chosen = vec![start];
            let mut cur = self.value(&chosen, caps, region);
            loop {
                if chosen.len() as u64 >= self.m {
                    break;
                }
                let mut step = None;
                for s in 0..n {
                    if chosen.contains(&s) {
                        continue;
                    }
                    chosen.push(s);
                    let v = self.value(&chosen, caps, region);
                    chosen.pop();
                    if v > cur && step.map_or(true, |(_, b)| v > b) {
                        step = Some((s, v));
                    }
                }
                match step {
                    Some((s, v)) => {
                        chosen.push(s);
                        cur = v;
                    }
                    None => break,
                }
            }
            best = best.max(cur);
        }
        best
    }

    /// Returns (decision value, greedy value, exhaustive flag).
    fn max_strip_sum(&self, caps: &[C64], region: &[bool], budget: usize, seed: u64) -> (f64, f64, bool) {
        if self.members.is_empty() {
            return (0.0, 0.0, true);
        }
        if self.members.len() <= EXHAUSTIVE_STRIPS {
            let v = self.exhaustive(caps, region);
            (v, self.greedy(caps, region, budget, seed), true)
        } else {
            (self.upper_bound(caps, region), self.greedy(caps, region, budget, seed), false)
        }
    }
}

/// Multi-scale broad restriction of `Ef`. `ks[0]` is the finest scale `K`;
/// every `ks[j]` must divide `ks[0]`. A `K`-cap lies in a region iff its
/// center does.
#[allow(clippy::too_many_arguments)]
pub fn multiscale_broad(
    f: &FrequencyField,
    surface: &Surface,
    alphas: &[f64],
    ks: &[usize],
    family: &BadStripFamily,
    points: &[Vec<f64>],
    search_budget: usize,
    seed: u64,
) -> Result<Vec<MultiscalePoint>> {
    if alphas.len() != ks.len() || ks.is_empty() {
        return Err(LabError::Parameter("alpha and K vectors must have equal, nonzero length".into()));
    }
    for &a in alphas {
        check_alpha(a)?;
    }
    let d = f.dim();
    let k0 = ks[0];
    if ks.iter().any(|&k| k == 0 || k0 % k != 0) {
        return Err(LabError::Parameter("every K_j must divide K_0".into()));
    }
    let fine = CapGrid::new(k0, d)?;
    let grids: Vec<CapGrid> = ks.iter().map(|&k| CapGrid::new(k, d)).collect::<Result<_>>()?;
    let centers: Vec<Vec<f64>> = (0..fine.len()).map(|t| fine.center(t)).collect();
    let search = StripSearch {
        members: (0..family.strips.len()).map(|s| centers.iter().map(|c| family.contains(s, c)).collect()).collect(),
        m: family.m,
    };
    let caps = cap_extensions(f, surface, &fine, points)?;
    let all = vec![true; fine.len()];
    let parents: Vec<Vec<usize>> = grids.iter().map(|g| (0..fine.len()).map(|t| fine.parent_in(t, g)).collect()).collect();
    let last = ks.len() - 1;
    let out = crate::par::map_range(points.len(), |pi| {
        let c = &caps[pi];
        let ef = total(c).norm();
        let pseed = seed ^ (pi as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15);
        let (dec, greedy, exh) = search.max_strip_sum(c, &all, search_budget, pseed);
        let mut broad = dec <= alphas[last] * ef;
        let mut decided = dec;
        let mut greedy_best = greedy;
        let mut exhaustive = exh;
        for j in 0..ks.len() {
            if !broad {
                break;
            }
            let g = &grids[j];
            let mut coarse = vec![C64::new(0.0, 0.0); g.len()];
            for (t, v) in c.iter().enumerate() {
                coarse[parents[j][t]] += v;
            }
            let mut strip_part: f64 = 0.0;
            for u in 0..g.len() {
                let region: Vec<bool> = parents[j].iter().map(|&p| p == u).collect();
                if !c.iter().zip(&region).any(|(v, r)| *r && v.norm_sqr() != 0.0) {
                    continue;
                }
                let (dv, gv, ex) = search.max_strip_sum(c, &region, search_budget, pseed ^ (u as u64 + 1));
                strip_part = strip_part.max(dv);
                greedy_best = greedy_best.max(gv);
                exhaustive &= ex;
            }
            let lhs = max_abs(&coarse) + strip_part;
            decided = decided.max(strip_part);
            broad = lhs <= alphas[j] * ef;
        }
        MultiscalePoint { value: if broad { ef } else { 0.0 }, broad, greedy: greedy_best, decided_with: decided, exhaustive }
    });
    Ok(out)
}

/// Exact max over tuples of at most `m` strips, by brute force over subsets.
/// Only for small families; used to audit the search.
pub fn exhaustive_strip_max(f: &FrequencyField, surface: &Surface, k: usize, family: &BadStripFamily, point: &[f64]) -> Result<f64> {
    let fine = CapGrid::new(k, f.dim())?;
    let centers: Vec<Vec<f64>> = (0..fine.len()).map(|t| fine.center(t)).collect();
    let search = StripSearch {
        members: (0..family.strips.len()).map(|s| centers.iter().map(|c| family.contains(s, c)).collect()).collect(),
        m: family.m,
    };
    let caps = cap_extensions(f, surface, &fine, &[point.to_vec()])?;
    Ok(search.exhaustive(&caps[0], &vec![true; fine.len()]))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::Lattice;
    use crate::profile::bump_pu;

    fn seeded(seed: u64, h: f64) -> FrequencyField {
        let mut r = rng::stream(seed, 31);
        let waves: Vec<(Vec<f64>, C64)> = (0..6)
            .map(|_| (vec![rng::uniform(&mut r, -8.0, 8.0), rng::uniform(&mut r, -8.0, 8.0)], rng::complex_normal(&mut r)))
            .collect();
        FrequencyField::from_fn(Lattice::through_zero(&[-1.0, -1.0], &[1.0, 1.0], h), |p| {
            let b = bump_pu(p[0]) * bump_pu(p[1]);
            waves.iter().map(|(y, c)| c * e(p[0] * y[0] + p[1] * y[1])).sum::<C64>() * b
        })
    }

    fn points(seed: u64, n: usize, r: f64) -> Vec<Vec<f64>> {
        let mut g = rng::stream(seed, 32);
        (0..n).map(|_| (0..3).map(|_| rng::uniform(&mut g, -r, r)).collect()).collect()
    }

    fn one_cap(grid: &CapGrid, cap: usize, h: f64) -> FrequencyField {
        let c = grid.center(cap);
        let half = 0.5 / grid.k as f64;
        FrequencyField::from_fn(Lattice::through_zero(&[-1.0, -1.0], &[1.0, 1.0], h), |p| {
            let u = [(p[0] - c[0]) / half, (p[1] - c[1]) / half];
            C64::new(1.0, u[0]) * bump_pu(u[0]) * bump_pu(u[1])
        })
    }

    #[test]
    fn cap_grid_tiles() {
        let g = CapGrid::new(4, 2).unwrap();
        assert_eq!(g.len(), 64);
        assert_eq!(g.cap_of(&[1.0, 1.0]), 63);
        assert_eq!(g.cap_of(&[-1.0, -1.0]), 0);
        assert_eq!(g.cap_of(&[-0.75, -1.0]), g.index(&[1, 0]));
        assert!(g.adjacent(0, g.index(&[1, 1])));
        assert!(!g.adjacent(0, g.index(&[2, 1])));
        let f = seeded(1, 1.0 / 32.0);
        let mut sum = FrequencyField::zeros(f.lattice.clone());
        for c in 0..g.len() {
            sum.add_assign(&g.restrict(&f, c));
        }
        assert_eq!(sum.values, f.values);
    }

    #[test]
    fn cap_sums_match_extension() {
        let f = seeded(2, 1.0 / 32.0);
        let g = CapGrid::new(4, 2).unwrap();
        let pts = points(3, 20, 8.0);
        let caps = cap_extensions(&f, &Surface::Paraboloid, &g, &pts).unwrap();
        let direct = crate::extension::extend_points(&f, &Surface::Paraboloid, &pts).unwrap();
        for (c, dv) in caps.iter().zip(&direct) {
            assert!((total(c) - dv).norm() < 1e-12 * dv.norm().max(1.0));
        }
        // Definition oracle: each cap value from the restricted field.
        for cap in [0usize, 9, 27, 63] {
            let fc = g.restrict(&f, cap);
            let ec = crate::extension::extend_points(&fc, &Surface::Paraboloid, &pts).unwrap();
            for (c, v) in caps.iter().zip(&ec) {
                assert!((c[cap] - v).norm() < 1e-12 * v.norm().max(1.0));
            }
        }
    }

    #[test]
    fn broad_single_cap_and_monotone() {
        let h = 1.0 / 32.0;
        let g = CapGrid::new(4, 2).unwrap();
        let f = one_cap(&g, 27, h);
        let pts = points(4, 50, 8.0);
        assert!(broad_function(&f, &Surface::Paraboloid, 0.5, 4, &pts).unwrap().iter().all(|&v| v == 0.0));
        let f = seeded(5, h);
        let lo = broad_function(&f, &Surface::Paraboloid, 0.3, 4, &pts).unwrap();
        let hi = broad_function(&f, &Surface::Paraboloid, 0.6, 4, &pts).unwrap();
        for (a, b) in lo.iter().zip(&hi) {
            if *a > 0.0 {
                assert_eq!(a, b);
            }
        }
        assert!(broad_function(&f, &Surface::Paraboloid, 1.0, 4, &pts).is_err());
    }

    #[test]
    fn broad_narrow_inequality() {
        let h = 1.0 / 32.0;
        let pts = points(6, 200, 8.0);
        for seed in 0..5 {
            let f = seeded(seed, h);
            assert!(broad_narrow_check(&f, &Surface::Paraboloid, 0.5, 4, &pts).unwrap() <= 1e-12);
        }
        let z = FrequencyField::zeros_on_cube(2, h);
        assert_eq!(broad_narrow_check(&z, &Surface::Paraboloid, 0.5, 4, &pts).unwrap(), 0.0);
        let g = CapGrid::new(4, 2).unwrap();
        let mut two = one_cap(&g, 0, h);
        two.add_assign(&one_cap(&g, 63, h));
        assert!(broad_narrow_check(&two, &Surface::Paraboloid, 0.5, 4, &pts).unwrap() <= 1e-12);
    }

    #[test]
    fn bilinear_cases() {
        let h = 1.0 / 32.0;
        let g = CapGrid::new(4, 2).unwrap();
        let pts = points(7, 30, 8.0);
        assert!(bilinear_term(&one_cap(&g, 10, h), &Surface::Paraboloid, 4, &pts).unwrap().iter().all(|&v| v == 0.0));
        assert!(bilinear_term(&one_cap(&g, 10, h), &Surface::Paraboloid, 3, &pts).is_err());
        // Two far caps with equal modulus at x = 0.
        let mut two = one_cap(&g, 0, h);
        two.add_assign(&one_cap(&g, 63, h));
        let c = crate::extension::extend_points(&one_cap(&g, 0, h), &Surface::Paraboloid, &[vec![0.0; 3]]).unwrap()[0].norm();
        let b = bilinear_term(&two, &Surface::Paraboloid, 4, &[vec![0.0; 3]]).unwrap()[0];
        assert!((b - 2.0 * c).abs() < 1e-12 * c);
        // Brute-force double loop with per-cap restricted fields.
        let f = seeded(8, h);
        let g8 = CapGrid::new(8, 2).unwrap();
        let got = bilinear_term(&f, &Surface::Paraboloid, 8, &pts[..5]).unwrap();
        let per: Vec<Vec<C64>> = (0..g8.len())
            .map(|cap| crate::extension::extend_points(&g8.restrict(&f, cap), &Surface::Paraboloid, &pts[..5]).unwrap())
            .collect();
        for p in 0..5 {
            let mut acc = 0.0;
            for a in 0..g8.len() {
                for b in 0..g8.len() {
                    let (ca, cb) = (g8.coords(a), g8.coords(b));
                    let far = ca[0].abs_diff(cb[0]) > 1 || ca[1].abs_diff(cb[1]) > 1;
                    if far {
                        acc += per[a][p].norm().sqrt() * per[b][p].norm().sqrt();
                    }
                }
            }
            assert!((acc - got[p]).abs() <= 1e-12 * acc.max(1.0));
        }
        // Phase rotation invariance.
        let mut rot = f.clone();
        rot.scale(C64::from_polar(1.0, 0.7));
        let br = bilinear_term(&rot, &Surface::Paraboloid, 8, &pts[..5]).unwrap();
        for (a, b) in got.iter().zip(&br) {
            assert!((a - b).abs() <= 1e-10 * a.max(1.0));
        }
    }

    fn xy() -> Poly {
        Poly::from_terms(2, vec![(vec![1, 1], 1.0)])
    }

    #[test]
    fn normal_form_examples() {
        let eps0 = 1e-3;
        assert!(normal_form_check(&xy(), 3, eps0).unwrap());
        let b = xy().add(&Poly::from_terms(2, vec![(vec![2, 0], eps0)]));
        assert!(normal_form_check(&b, 3, eps0).unwrap());
        let c = xy().add(&Poly::from_terms(2, vec![(vec![0, 3], 2.0 * eps0)]));
        assert!(!normal_form_check(&c, 3, eps0).unwrap());
        let lin = xy().add(&Poly::variable(2, 0));
        assert!(matches!(normal_form_check(&lin, 3, eps0), Err(LabError::Form(_))));
        assert!(normal_form_check(&Poly::from_terms(2, vec![(vec![1, 1], 2.0)]), 3, eps0).is_err());
    }

    #[test]
    fn bad_line_examples() {
        let fam = BadStripFamily::new(3, 1e-3, 128.0);
        let l = Line { iota: 1, a: 0.0, v: [1.0, 0.0] };
        assert!(is_bad_line(&xy(), &l, &fam).unwrap().0);
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let diag = Line { iota: 1, a: 0.0, v: [s, s] };
        let (bad, c) = is_bad_line(&xy(), &diag, &fam).unwrap();
        assert!(!bad);
        assert!((c[2][0] - 0.5).abs() < 1e-15);
        let h = xy().add(&Poly::from_terms(2, vec![(vec![2, 0], 0.01)]));
        let fam2 = BadStripFamily::new(2, 1e-3, 100.0);
        assert!(!is_bad_line(&h, &l, &fam2).unwrap().0);
        // Vertical lines use the exchanged frame.
        let vert = Line { iota: 2, a: 0.3, v: [0.0, 1.0] };
        assert!(is_bad_line(&xy(), &vert, &fam).unwrap().0);
    }

    #[test]
    fn bad_flag_ignores_linear_terms() {
        let fam = BadStripFamily::new(3, 1e-3, 128.0);
        let mut r = rng::stream(12, 0);
        let hh = xy().add(&Poly::from_terms(2, vec![(vec![3, 0], 1e-9), (vec![1, 2], 2e-9)]));
        let shifted = hh.add(&Poly::from_terms(2, vec![(vec![1, 0], 0.7), (vec![0, 1], -1.3)]));
        for _ in 0..100 {
            let t = rng::uniform(&mut r, 0.0, std::f64::consts::TAU);
            let v = [t.cos(), t.sin()];
            let l = Line { iota: if v[1].abs() <= v[0].abs() { 1 } else { 2 }, a: rng::uniform(&mut r, -1.0, 1.0), v };
            let a = is_bad_line(&hh, &l, &fam).map(|x| x.0);
            let b = is_bad_line(&shifted, &l, &fam).map(|x| x.0);
            assert_eq!(a.is_ok(), b.is_ok());
            if let (Ok(a), Ok(b)) = (a, b) {
                assert_eq!(a, b);
            }
        }
    }

    #[test]
    fn line_coefficients_match_direct_evaluation() {
        let h = xy().add(&Poly::from_terms(2, vec![(vec![3, 0], 0.2), (vec![1, 2], -0.1), (vec![0, 2], 0.05)]));
        let l = Line { iota: 1, a: 0.4, v: [0.8, 0.6] };
        let c = line_coefficients(&h, &l);
        let mut r = rng::stream(13, 0);
        for _ in 0..20 {
            let y = [rng::uniform(&mut r, -1.0, 1.0), rng::uniform(&mut r, -1.0, 1.0)];
            let x = [0.8 * y[0] - 0.6 * y[1], 0.6 * y[0] + 0.8 * y[1] + 0.4];
            let mut s = 0.0;
            for (i, row) in c.iter().enumerate() {
                for (j, cij) in row.iter().enumerate() {
                    s += cij * y[0].powi((i - j) as i32) * y[1].powi(j as i32);
                }
            }
            assert!((s - h.eval(&x)).abs() < 1e-12);
        }
    }

    #[test]
    fn family_enumeration_desk_spacing() {
        let fam = BadStripFamily::enumerate(2, 1e-3, 128.0, &xy(), Some(0.25)).unwrap();
        // Horizontal and vertical directions at every offset.
        assert!(!fam.strips.is_empty());
        assert!(fam.strips.iter().all(|l| l.v[0].abs() < 1e-12 || l.v[1].abs() < 1e-12));
        let dirs = fam.directions();
        for i in 0..dirs.len() {
            let j = (i + 1) % dirs.len();
            let chord = ((dirs[i][0] - dirs[j][0]).powi(2) + (dirs[i][1] - dirs[j][1]).powi(2)).sqrt();
            assert!(chord >= 0.25 && chord < 0.5);
        }
        assert!(BadStripFamily::enumerate(3, 1e-3, 128.0, &xy(), None).is_err());
    }

    #[test]
    fn multiscale_cases() {
        let h = 1.0 / 32.0;
        let pts = points(14, 40, 8.0);
        let f = seeded(15, h);
        let s = Surface::Paraboloid;
        // Equal scales, no strips: same broad set as the single-scale predicate.
        let fam = BadStripFamily::new(3, 1e-3, 128.0);
        let ms = multiscale_broad(&f, &s, &[0.5, 0.5, 0.5], &[4, 4, 4], &fam, &pts, 4, 1).unwrap();
        let single = broad_function(&f, &s, 0.5, 4, &pts).unwrap();
        for (a, b) in ms.iter().zip(&single) {
            assert_eq!(a.value, *b);
        }
        let z = FrequencyField::zeros_on_cube(2, h);
        assert!(multiscale_broad(&z, &s, &[0.5, 0.5], &[4, 2], &fam, &pts, 4, 1).unwrap().iter().all(|p| p.value == 0.0));
        // Everything inside one strip: no broad points.
        let strip = Line { iota: 1, a: 0.0, v: [1.0, 0.0] };
        let fam1 = BadStripFamily::new(3, 1e-3, 128.0).with_strips(vec![strip], 0.3);
        let thin = FrequencyField::from_fn(Lattice::through_zero(&[-1.0, -1.0], &[1.0, 1.0], h), |p| {
            C64::new(bump_pu(p[0]) * bump_pu(p[1] / 0.2), 0.0)
        });
        let ms = multiscale_broad(&thin, &s, &[0.9, 0.9], &[4, 2], &fam1, &pts, 4, 1).unwrap();
        assert!(ms.iter().all(|p| !p.broad));
        // Small family: greedy equals the exhaustive max.
        let strips: Vec<Line> = (0..5).map(|i| Line { iota: 1, a: -0.8 + 0.4 * i as f64, v: [1.0, 0.0] }).chain([Line { iota: 2, a: 0.1, v: [0.0, 1.0] }]).collect();
        let mut fam6 = BadStripFamily::new(3, 1e-3, 128.0).with_strips(strips, 0.3);
        fam6.m = 2;
        let ms = multiscale_broad(&f, &s, &[0.5, 0.5], &[4, 2], &fam6, &pts[..10], 16, 3).unwrap();
        for (p, x) in ms.iter().zip(&pts[..10]) {
            let ex = exhaustive_strip_max(&f, &s, 4, &fam6, x).unwrap();
            assert!(p.exhaustive);
            assert!(p.decided_with >= ex - 1e-12);
        }
    }
}
