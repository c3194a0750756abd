//! Polynomial partitioning by iterated ham-sandwich cuts, wall and cell
//! geometry, tangent/transverse tube classification and the cell counting
//! along lines.

use std::cmp::Ordering;
use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::poly::{monomials_up_to, Poly};
use crate::rng;
use crate::wavepackets::Tube;
use crate::{LabError, Result};

/// Product of factors, each a polynomial in `y = (x - center) / scale`.
/// The last `grid_planes` factors are the axis-aligned planes added for the
/// cell radius bound.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PartitionPolynomial {
    pub n: usize,
    pub center: Vec<f64>,
    pub scale: f64,
    pub factors: Vec<Poly>,
    pub grid_planes: usize,
    /// Wall distances are clipped to this value.
    pub reach: f64,
}

impl PartitionPolynomial {
    pub fn new(center: Vec<f64>, scale: f64, factors: Vec<Poly>) -> Self {
        PartitionPolynomial { n: center.len(), center, scale, factors, grid_planes: 0, reach: scale }
    }

    /// Polynomial in world coordinates, e.g. `P = x_n` via `from_world`.
    pub fn from_world(n: usize, factors: Vec<Poly>) -> Self {
        PartitionPolynomial { reach: f64::MAX, ..PartitionPolynomial::new(vec![0.0; n], 1.0, factors) }
    }

    fn local(&self, x: &[f64]) -> Vec<f64> {
        x.iter().zip(&self.center).map(|(a, c)| (a - c) / self.scale).collect()
    }

    pub fn total_degree(&self) -> u32 {
        self.factors.iter().map(|f| f.degree()).sum()
    }

    /// Degree spent on ham-sandwich factors.
    pub fn cut_degree(&self) -> u32 {
        self.factors[..self.factors.len() - self.grid_planes].iter().map(|f| f.degree()).sum()
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        let y = self.local(x);
        self.factors.iter().map(|f| f.eval(&y)).product()
    }

    pub fn factor_value(&self, j: usize, x: &[f64]) -> f64 {
        self.factors[j].eval(&self.local(x))
    }

    /// Gradient of factor `j` in world coordinates.
    pub fn factor_grad(&self, j: usize, x: &[f64]) -> Vec<f64> {
        self.factors[j].grad(&self.local(x)).into_iter().map(|g| g / self.scale).collect()
    }

    /// Bit `j` set iff factor `j` is positive at `x`.
    pub fn signs(&self, x: &[f64]) -> u64 {
        let y = self.local(x);
        let mut s = 0u64;
        for (j, f) in self.factors.iter().enumerate() {
            if f.eval(&y) > 0.0 {
                s |= 1 << j;
            }
        }
        s
    }

    /// First-order distance to `Z(P)`: `min_j |Q_j| / |grad Q_j|`, clipped to
    /// `[0, reach]`; a vanishing gradient counts as distance 0.
    pub fn distance(&self, x: &[f64]) -> f64 {
        let y = self.local(x);
        let mut best = self.reach;
        for f in &self.factors {
            let v = f.eval(&y);
            let g = f.grad(&y);
            let gn = g.iter().map(|a| a * a).sum::<f64>().sqrt();
            let cmax = f.terms.iter().map(|t| t.1.abs()).fold(0.0, f64::max);
            if gn <= 1e-9 * cmax {
                return 0.0;
            }
            best = best.min(v.abs() / gn * self.scale);
        }
        best.max(0.0)
    }

    pub fn in_wall(&self, x: &[f64], width: f64) -> bool {
        self.distance(x) <= width
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub signs: u64,
    pub mass: f64,
    /// Center and radius of a ball containing every point of the cell.
    pub center: Vec<f64>,
    pub radius: f64,
    /// Indices into the caller's point list.
    pub points: Vec<usize>,
    pub retained: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellSet {
    pub cells: Vec<Cell>,
    pub wall_width: f64,
    pub wall_mass: f64,
    pub total_mass: f64,
    /// Per-level signed-mass imbalance of the accepted cut, on the full cloud.
    pub imbalance: Vec<f64>,
    pub degenerate: bool,
}

impl CellSet {
    pub fn nonempty(&self) -> usize {
        self.cells.iter().filter(|c| c.mass > 0.0).count()
    }

    pub fn retained(&self) -> impl Iterator<Item = &Cell> {
        self.cells.iter().filter(|c| c.retained)
    }

    /// Max over min of the retained cell masses.
    pub fn retained_ratio(&self) -> f64 {
        let (lo, hi) = self.retained().fold((f64::INFINITY, 0.0f64), |(lo, hi), c| (lo.min(c.mass), hi.max(c.mass)));
        if hi == 0.0 {
            1.0
        } else {
            hi / lo
        }
    }

    pub fn retained_fraction(&self) -> f64 {
        let m: f64 = self.retained().map(|c| c.mass).sum();
        if self.total_mass > 0.0 {
            m / self.total_mass
        } else {
            0.0
        }
    }

    pub fn max_radius(&self) -> f64 {
        self.cells.iter().filter(|c| c.mass > 0.0).map(|c| c.radius).fold(0.0, f64::max)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PartitionConfig {
    /// Degree budget `D` for the cuts.
    pub degree: u32,
    pub center: Vec<f64>,
    pub radius: f64,
    pub wall_width: f64,
    pub seed: u64,
    pub starts: usize,
    pub iterations: usize,
    /// Accepted signed-mass imbalance per piece.
    pub tolerance: f64,
    /// The cut search runs on at most this many points.
    pub search_points: usize,
}

impl PartitionConfig {
    pub fn new(degree: u32, center: Vec<f64>, radius: f64, wall_width: f64, seed: u64) -> Self {
        PartitionConfig { degree, center, radius, wall_width, seed, starts: 8, iterations: 60, tolerance: 1.0 / 3.0, search_points: 8192 }
    }
}

fn binom(n: u64, k: u64) -> u64 {
    (0..k).fold(1u64, |acc, i| acc * (n - i) / (i + 1))
}

/// Degrees of the successive cuts: level `j` bisects `2^j` pieces with the
/// least `d` having `binom(d + n, n) >= 2^j + 1`, while the budget lasts.
pub fn cut_schedule(n: usize, budget: u32) -> Vec<u32> {
    let mut out = Vec::new();
    let mut used = 0;
    let mut pieces = 1u64;
    loop {
        let mut d = 1u32;
        while binom(d as u64 + n as u64, n as u64) < pieces + 1 {
            d += 1;
        }
        if used + d > budget {
            return out;
        }
        out.push(d);
        used += d;
        pieces *= 2;
    }
}

fn lex_cmp(a: &[f64], b: &[f64]) -> Ordering {
    for (x, y) in a.iter().zip(b) {
        match x.total_cmp(y) {
            Ordering::Equal => continue,
            o => return o,
        }
    }
    Ordering::Equal
}

struct CutSearch<'a> {
    /// Non-constant monomials per point.
    feats: &'a [Vec<f64>],
    weights: &'a [f64],
    piece: &'a [usize],
    piece_mass: Vec<f64>,
}

impl CutSearch<'_> {
    fn values(&self, dir: &[f64]) -> Vec<f64> {
        self.feats.iter().map(|f| f.iter().zip(dir).map(|(a, b)| a * b).sum()).collect()
    }

    fn imbalance_at(&self, vals: &[f64], c: f64) -> f64 {
        let mut diff = vec![0.0; self.piece_mass.len()];
        for ((v, w), p) in vals.iter().zip(self.weights).zip(self.piece) {
            diff[*p] += if *v > c { *w } else { -*w };
        }
        diff.iter().zip(&self.piece_mass).filter(|(_, m)| **m > 0.0).map(|(d, m)| d.abs() / m).fold(0.0, f64::max)
    }

    /// Best constant for a direction and the resulting imbalance.
    fn balance(&self, dir: &[f64]) -> (f64, f64) {
        let vals = self.values(dir);
        let np = self.piece_mass.len();
        let mut per: Vec<Vec<(f64, f64)>> = vec![Vec::new(); np];
        for ((v, w), p) in vals.iter().zip(self.weights).zip(self.piece) {
            per[*p].push((*v, *w));
        }
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for (p, list) in per.iter_mut().enumerate() {
            if self.piece_mass[p] <= 0.0 {
                continue;
            }
            list.sort_by(|a, b| a.0.total_cmp(&b.0));
            let mut acc = 0.0;
            let mut med = list[list.len() - 1].0;
            for (v, w) in list.iter() {
                acc += w;
                if acc >= 0.5 * self.piece_mass[p] {
                    med = *v;
                    break;
                }
            }
            lo = lo.min(med);
            hi = hi.max(med);
        }
        if !lo.is_finite() {
            return (1.0, 0.0);
        }
        if hi <= lo {
            return (self.imbalance_at(&vals, lo), lo);
        }
        let g = (5f64.sqrt() - 1.0) / 2.0;
        let (mut a, mut b) = (lo, hi);
        let mut x1 = b - g * (b - a);
        let mut x2 = a + g * (b - a);
        let mut f1 = self.imbalance_at(&vals, x1);
        let mut f2 = self.imbalance_at(&vals, x2);
        for _ in 0..40 {
            if f1 <= f2 {
                b = x2;
                x2 = x1;
                f2 = f1;
                x1 = b - g * (b - a);
                f1 = self.imbalance_at(&vals, x1);
            } else {
                a = x1;
                x1 = x2;
                f1 = f2;
                x2 = a + g * (b - a);
                f2 = self.imbalance_at(&vals, x2);
            }
        }
        let mut best = (f1, x1);
        for c in [x2, lo, hi] {
            let v = self.imbalance_at(&vals, c);
            if v < best.0 {
                best = (v, c);
            }
        }
        best
    }
}

fn normalized(v: Vec<f64>) -> Vec<f64> {
    let n = v.iter().map(|a| a * a).sum::<f64>().sqrt();
    v.into_iter().map(|a| a / n).collect()
}

fn features(mons: &[Vec<u32>], y: &[f64]) -> Vec<f64> {
    mons.iter().map(|e| e.iter().zip(y).map(|(&k, &v)| v.powi(k as i32)).product()).collect()
}

/// Cell bounding ball: the better of the box midpoint and the outer ball
/// center.
fn bounding_ball(pts: &[&Vec<f64>], outer: &[f64]) -> (Vec<f64>, f64) {
    let n = outer.len();
    let mut lo = vec![f64::INFINITY; n];
    let mut hi = vec![f64::NEG_INFINITY; n];
    for p in pts {
        for a in 0..n {
            lo[a] = lo[a].min(p[a]);
            hi[a] = hi[a].max(p[a]);
        }
    }
    let mid: Vec<f64> = lo.iter().zip(&hi).map(|(a, b)| 0.5 * (a + b)).collect();
    let rad = |c: &[f64]| pts.iter().map(|p| p.iter().zip(c).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt()).fold(0.0, f64::max);
    let (rm, ro) = (rad(&mid), rad(outer));
    if rm <= ro {
        (mid, rm)
    } else {
        (outer.to_vec(), ro)
    }
}

/// Keeps the cells whose masses lie in the band `[m, 2m]` of largest total.
fn select_band(cells: &mut [Cell]) {
    let masses: Vec<f64> = cells.iter().map(|c| c.mass).filter(|m| *m > 0.0).collect();
    let mut best: Option<(f64, f64)> = None;
    for &m in &masses {
        let tot: f64 = masses.iter().filter(|&&x| x >= m && x <= 2.0 * m).sum();
        if best.is_none_or(|(bt, bm)| tot > bt || (tot == bt && m < bm)) {
            best = Some((tot, m));
        }
    }
    for c in cells.iter_mut() {
        c.retained = matches!(best, Some((_, m)) if c.mass >= m && c.mass <= 2.0 * m);
    }
}

/// Partitions a weighted point cloud in `B_R(center)` by iterated
/// ham-sandwich cuts within the degree budget, then adds grid planes of
/// spacing `R/D` until every cell fits in a ball of radius `2R/D`.
pub fn partition(points: &[Vec<f64>], weights: &[f64], cfg: &PartitionConfig) -> Result<(PartitionPolynomial, CellSet)> {
    let n = cfg.center.len();
    if points.is_empty() || points.len() != weights.len() {
        return Err(LabError::Parameter("need a nonempty point cloud with one weight per point".into()));
    }
    if cfg.degree < 2 {
        return Err(LabError::Parameter("degree budget D must be at least 2".into()));
    }
    for (p, w) in points.iter().zip(weights) {
        if p.len() != n {
            return Err(LabError::Parameter("point dimension mismatch".into()));
        }
        if !(w.is_finite() && *w >= 0.0) {
            return Err(LabError::Parameter("weights must be finite and non-negative".into()));
        }
        let r2: f64 = p.iter().zip(&cfg.center).map(|(a, c)| (a - c) * (a - c)).sum();
        if r2.sqrt() > cfg.radius * (1.0 + 1e-9) {
            return Err(LabError::Domain("point outside B_R".into()));
        }
    }
    // Canonical order makes every sum independent of the input order.
    let mut order: Vec<usize> = (0..points.len()).collect();
    order.sort_by(|&a, &b| lex_cmp(&points[a], &points[b]).then(weights[a].total_cmp(&weights[b])));
    let pts: Vec<&Vec<f64>> = order.iter().map(|&i| &points[i]).collect();
    let wts: Vec<f64> = order.iter().map(|&i| weights[i]).collect();
    let total: f64 = wts.iter().sum();
    let ys: Vec<Vec<f64>> = pts.iter().map(|p| p.iter().zip(&cfg.center).map(|(a, c)| (a - c) / cfg.radius).collect()).collect();

    let spread = pts.iter().any(|p| lex_cmp(p, pts[0]) != Ordering::Equal);
    if total <= 0.0 || !spread {
        // Put Z(P) through the first point; everything lands in the wall.
        let mut t = vec![(vec![0; n], -ys[0][0])];
        let mut e = vec![0; n];
        e[0] = 1;
        t.push((e, 1.0));
        let poly = PartitionPolynomial::new(cfg.center.clone(), cfg.radius, vec![Poly::from_terms(n, t)]);
        let cs = CellSet { cells: Vec::new(), wall_width: cfg.wall_width, wall_mass: total, total_mass: total, imbalance: Vec::new(), degenerate: true };
        return Ok((poly, cs));
    }

    let stride = points.len().div_ceil(cfg.search_points.max(1));
    let sample: Vec<usize> = (0..points.len()).step_by(stride).collect();
    let mut factors: Vec<Poly> = Vec::new();
    let mut imbalance = Vec::new();
    let mut degenerate = false;
    let mut piece_full: Vec<usize> = vec![0; points.len()];
    for (level, &d) in cut_schedule(n, cfg.degree).iter().enumerate() {
        let mons: Vec<Vec<u32>> = monomials_up_to(n, d).into_iter().skip(1).collect();
        // Pieces are the current sign classes, renumbered densely.
        let mut ids: BTreeMap<usize, usize> = BTreeMap::new();
        for &p in &piece_full {
            let next = ids.len();
            ids.entry(p).or_insert(next);
        }
        let piece: Vec<usize> = piece_full.iter().map(|p| ids[p]).collect();
        let np = ids.len();
        let sfeats: Vec<Vec<f64>> = sample.iter().map(|&i| features(&mons, &ys[i])).collect();
        let swts: Vec<f64> = sample.iter().map(|&i| wts[i]).collect();
        let spiece: Vec<usize> = sample.iter().map(|&i| piece[i]).collect();
        let mut smass = vec![0.0; np];
        for (w, p) in swts.iter().zip(&spiece) {
            smass[*p] += w;
        }
        let search = CutSearch { feats: &sfeats, weights: &swts, piece: &spiece, piece_mass: smass };
        let runs: Vec<(f64, Vec<f64>)> = crate::par::map_range(cfg.starts.max(1), |s| {
            let mut r = rng::substream(cfg.seed, level as u64 + 1, s as u64);
            let mut dir = normalized((0..mons.len()).map(|_| rng::normal(&mut r)).collect());
            let mut cur = search.balance(&dir).0;
            let mut sigma = 0.5;
            for _ in 0..cfg.iterations {
                if cur < 1e-3 {
                    break;
                }
                let cand = normalized(dir.iter().map(|a| a + sigma * rng::normal(&mut r)).collect());
                let v = search.balance(&cand).0;
                if v < cur {
                    dir = cand;
                    cur = v;
                    sigma = (sigma * 1.2).min(1.0);
                } else {
                    sigma *= 0.85;
                }
            }
            (cur, dir)
        });
        let best = runs.into_iter().min_by(|a, b| a.0.total_cmp(&b.0).then(lex_cmp(&a.1, &b.1))).unwrap();
        let dir = best.1;
        // Constant from the full cloud.
        let ffeats: Vec<Vec<f64>> = ys.iter().map(|y| features(&mons, y)).collect();
        let mut fmass = vec![0.0; np];
        for (w, p) in wts.iter().zip(&piece) {
            fmass[*p] += w;
        }
        let full = CutSearch { feats: &ffeats, weights: &wts, piece: &piece, piece_mass: fmass };
        let (imb, c) = full.balance(&dir);
        imbalance.push(imb);
        if imb > cfg.tolerance {
            degenerate = true;
        }
        let mut terms: Vec<(Vec<u32>, f64)> = mons.iter().cloned().zip(dir.iter().cloned()).collect();
        terms.push((vec![0; n], -c));
        let cmax = terms.iter().map(|t| t.1.abs()).fold(0.0, f64::max);
        let q = Poly::from_terms(n, terms.into_iter().map(|(e, v)| (e, v / cmax)).collect());
        let bit = factors.len();
        for (i, y) in ys.iter().enumerate() {
            if q.eval(y) > 0.0 {
                piece_full[i] |= 1 << bit;
            }
        }
        factors.push(q);
    }
    let mut poly = PartitionPolynomial::new(cfg.center.clone(), cfg.radius, factors);
    let mut dist: Vec<f64> = pts.iter().map(|p| poly.distance(p)).collect();
    let mut signs: Vec<u64> = piece_full.iter().map(|&s| s as u64).collect();
    let limit = 2.0 * cfg.radius / cfg.degree as f64;
    let spacing = cfg.radius / cfg.degree as f64;
    let max_planes = 2 * n * cfg.degree as usize + 2;
    let build = |signs: &[u64], dist: &[f64]| -> BTreeMap<u64, Vec<usize>> {
        let mut m: BTreeMap<u64, Vec<usize>> = BTreeMap::new();
        for i in 0..signs.len() {
            if dist[i] > cfg.wall_width {
                m.entry(signs[i]).or_default().push(i);
            }
        }
        m
    };
    let mut groups = build(&signs, &dist);
    loop {
        let mut worst: Option<(f64, u64)> = None;
        for (s, members) in &groups {
            let list: Vec<&Vec<f64>> = members.iter().map(|&i| pts[i]).collect();
            let (_, rad) = bounding_ball(&list, &cfg.center);
            if rad > limit && worst.is_none_or(|(r, _)| rad > r) {
                worst = Some((rad, *s));
            }
        }
        let Some((_, s)) = worst else { break };
        if poly.grid_planes >= max_planes || poly.factors.len() >= 64 {
            degenerate = true;
            break;
        }
        let members = &groups[&s];
        let mut lo = vec![f64::INFINITY; n];
        let mut hi = vec![f64::NEG_INFINITY; n];
        for &i in members {
            for a in 0..n {
                lo[a] = lo[a].min(pts[i][a]);
                hi[a] = hi[a].max(pts[i][a]);
            }
        }
        let axis = (0..n).max_by(|&a, &b| (hi[a] - lo[a]).total_cmp(&(hi[b] - lo[b]))).unwrap();
        let mid = 0.5 * (lo[axis] + hi[axis]);
        let k0 = ((mid - cfg.center[axis]) / spacing).round() as i64;
        let t = [k0, k0 - 1, k0 + 1]
            .iter()
            .map(|&k| cfg.center[axis] + k as f64 * spacing)
            .find(|&t| t > lo[axis] && t < hi[axis])
            .unwrap_or(mid);
        let mut e = vec![0; n];
        e[axis] = 1;
        let plane = Poly::from_terms(n, vec![(e, 1.0), (vec![0; n], -(t - cfg.center[axis]) / cfg.radius)]);
        let bit = poly.factors.len();
        for (i, p) in pts.iter().enumerate() {
            if p[axis] > t {
                signs[i] |= 1 << bit;
            }
            dist[i] = dist[i].min((p[axis] - t).abs());
        }
        poly.factors.push(plane);
        poly.grid_planes += 1;
        groups = build(&signs, &dist);
    }
    let mut wall_mass = 0.0;
    for i in 0..pts.len() {
        if dist[i] <= cfg.wall_width {
            wall_mass += wts[i];
        }
    }
    let mut cells: Vec<Cell> = groups
        .into_iter()
        .map(|(s, members)| {
            let list: Vec<&Vec<f64>> = members.iter().map(|&i| pts[i]).collect();
            let (center, radius) = bounding_ball(&list, &cfg.center);
            Cell { signs: s, mass: members.iter().map(|&i| wts[i]).sum(), center, radius, points: members.iter().map(|&i| order[i]).collect(), retained: false }
        })
        .collect();
    select_band(&mut cells);
    Ok((poly, CellSet { cells, wall_width: cfg.wall_width, wall_mass, total_mass: total, imbalance, degenerate }))
}

/// Number of distinct sign vectors met by `samples` equally spaced points of
/// the segment `[a, b]`.
pub fn check_cell_crossing(a: &[f64], b: &[f64], p: &PartitionPolynomial, samples: usize) -> usize {
    let m = samples.max(2);
    let mut seen = std::collections::BTreeSet::new();
    for i in 0..m {
        let t = i as f64 / (m - 1) as f64;
        let x: Vec<f64> = a.iter().zip(b).map(|(u, v)| u + t * (v - u)).collect();
        seen.insert(p.signs(&x));
    }
    seen.len()
}

/// Tube geometry needed by the classifier: core segment and radius.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TubeShape {
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    pub width: f64,
}

impl TubeShape {
    pub fn from_tube(t: &Tube) -> Option<TubeShape> {
        let (a, b) = t.core_segment()?;
        Some(TubeShape { a, b, width: t.width() })
    }

    pub fn direction(&self) -> Vec<f64> {
        normalized(self.b.iter().zip(&self.a).map(|(u, v)| u - v).collect())
    }

    pub fn length(&self) -> f64 {
        dist(&self.a, &self.b)
    }

    fn midpoint(&self) -> Vec<f64> {
        self.a.iter().zip(&self.b).map(|(u, v)| 0.5 * (u + v)).collect()
    }

    /// Points on the core every `width/2` together with offsets of
    /// `0.7 width` along an orthonormal frame of the normal space.
    pub fn samples(&self) -> Vec<Vec<f64>> {
        let n = self.a.len();
        let v = self.direction();
        let frame = normal_frame(&v);
        let steps = ((self.length() / (0.5 * self.width)).ceil() as usize).max(8);
        let mut out = Vec::with_capacity((steps + 1) * (2 * n - 1));
        for i in 0..=steps {
            let t = i as f64 / steps as f64;
            let c: Vec<f64> = self.a.iter().zip(&self.b).map(|(u, w)| u + t * (w - u)).collect();
            out.push(c.clone());
            for e in &frame {
                for s in [-0.7, 0.7] {
                    out.push((0..n).map(|k| c[k] + s * self.width * e[k]).collect());
                }
            }
        }
        out
    }
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Orthonormal basis of the complement of the unit vector `v`.
pub fn normal_frame(v: &[f64]) -> Vec<Vec<f64>> {
    let n = v.len();
    let mut basis: Vec<Vec<f64>> = vec![v.to_vec()];
    for k in 0..n {
        let mut e = vec![0.0; n];
        e[k] = 1.0;
        for b in &basis {
            let c = dot(&e, b);
            for i in 0..n {
                e[i] -= c * b[i];
            }
        }
        let norm = dot(&e, &e).sqrt();
        if norm > 1e-6 {
            basis.push(e.into_iter().map(|x| x / norm).collect());
        }
        if basis.len() == n {
            break;
        }
    }
    basis.remove(0);
    basis
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Ball {
    pub center: Vec<f64>,
    pub radius: f64,
}

impl Ball {
    pub fn contains(&self, x: &[f64]) -> bool {
        dist(x, &self.center) <= self.radius
    }
}

/// Whether a sampled point of `T` lies in `B_k` and in the wall.
pub fn meets_wall(t: &TubeShape, p: &PartitionPolynomial, ball: &Ball, wall_width: f64) -> bool {
    if segment_point_distance(&t.a, &t.b, &ball.center) > ball.radius + t.width {
        return false;
    }
    t.samples().iter().any(|x| ball.contains(x) && p.in_wall(x, wall_width))
}

fn segment_point_distance(a: &[f64], b: &[f64], x: &[f64]) -> f64 {
    let ab: Vec<f64> = b.iter().zip(a).map(|(u, v)| u - v).collect();
    let l2 = dot(&ab, &ab);
    let t = if l2 > 0.0 { (dot(&x.iter().zip(a).map(|(u, v)| u - v).collect::<Vec<_>>(), &ab) / l2).clamp(0.0, 1.0) } else { 0.0 };
    let q: Vec<f64> = a.iter().zip(&ab).map(|(u, d)| u + t * d).collect();
    dist(&q, x)
}

/// Damped Newton projection of `x` onto `Z(Q_j)`; `None` if it does not
/// converge in the budget.
pub fn project_to_factor(p: &PartitionPolynomial, j: usize, x: &[f64], max_step: f64, iterations: usize) -> Option<Vec<f64>> {
    let mut z = x.to_vec();
    for _ in 0..iterations {
        let v = p.factor_value(j, &z);
        let g = p.factor_grad(j, &z);
        let g2 = dot(&g, &g);
        if g2 == 0.0 || !g2.is_finite() {
            return None;
        }
        if v.abs() / g2.sqrt() <= 1e-10 * p.scale {
            return Some(z);
        }
        let mut step: Vec<f64> = g.iter().map(|gi| -v * gi / g2).collect();
        let len = dot(&step, &step).sqrt();
        if len > max_step {
            step.iter_mut().for_each(|s| *s *= max_step / len);
        }
        z.iter_mut().zip(&step).for_each(|(a, s)| *a += s);
    }
    None
}

/// Non-singular points of `Z(P)` found by projecting 64 axis samples of the
/// 10-fold dilate of `T`, restricted to `2B_k` and `10T`; each is returned
/// with the unit normal of its factor.
pub fn zero_set_points(t: &TubeShape, p: &PartitionPolynomial, ball: &Ball) -> Vec<(Vec<f64>, Vec<f64>)> {
    let n = t.a.len();
    let mid = t.midpoint();
    let v = t.direction();
    let half = 5.0 * t.length();
    let big = Ball { center: ball.center.clone(), radius: 2.0 * ball.radius };
    // Clip the dilated axis to 2B_k.
    let oc: Vec<f64> = mid.iter().zip(&big.center).map(|(a, b)| a - b).collect();
    let bq = dot(&oc, &v);
    let disc = bq * bq - (dot(&oc, &oc) - big.radius * big.radius);
    if disc < 0.0 {
        return Vec::new();
    }
    let (s0, s1) = ((-bq - disc.sqrt()).max(-half), (-bq + disc.sqrt()).min(half));
    if s0 > s1 {
        return Vec::new();
    }
    let ten_a: Vec<f64> = (0..n).map(|k| mid[k] - half * v[k]).collect();
    let ten_b: Vec<f64> = (0..n).map(|k| mid[k] + half * v[k]).collect();
    let mut out = Vec::new();
    for i in 0..64 {
        let s = s0 + (s1 - s0) * (i as f64 + 0.5) / 64.0;
        let x: Vec<f64> = (0..n).map(|k| mid[k] + s * v[k]).collect();
        for j in 0..p.factors.len() {
            let Some(z) = project_to_factor(p, j, &x, 0.25 * ball.radius, 50) else { continue };
            if !big.contains(&z) || segment_point_distance(&ten_a, &ten_b, &z) > 10.0 * t.width {
                continue;
            }
            let g = p.factor_grad(j, &z);
            let gn = dot(&g, &g).sqrt();
            let cmax = p.factors[j].terms.iter().map(|t| t.1.abs()).fold(0.0, f64::max) / p.scale;
            if gn <= 1e-9 * cmax {
                continue;
            }
            // Points on two factors are singular points of Z(P).
            let other = (0..p.factors.len()).any(|i| {
                i != j && {
                    let gi = p.factor_grad(i, &z);
                    let gin = dot(&gi, &gi).sqrt();
                    gin > 0.0 && p.factor_value(i, &z).abs() / gin <= 1e-9 * p.scale
                }
            });
            if other {
                continue;
            }
            out.push((z, g.iter().map(|x| x / gn).collect()));
        }
    }
    out
}

/// Angle between a unit direction and the tangent plane with unit normal
/// `normal`.
pub fn plane_angle(v: &[f64], normal: &[f64]) -> f64 {
    dot(v, normal).abs().min(1.0).asin()
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Classification {
    pub tangent: Vec<usize>,
    pub transverse: Vec<usize>,
    /// Tangent by default: no zero-set point was found in `2B_k cap 10T`.
    pub vacuous: Vec<usize>,
}

/// Tangent/transverse split of the tubes meeting `B_k cap W` with angle
/// threshold `R^{-1/2 + 2 delta}`.
pub fn classify_tubes(tubes: &[TubeShape], p: &PartitionPolynomial, ball: &Ball, wall_width: f64, r: f64, delta: f64) -> Classification {
    let thr = r.powf(-0.5 + 2.0 * delta);
    let verdicts: Vec<Option<(bool, bool)>> = crate::par::map_slice(tubes, |t| {
        if !meets_wall(t, p, ball, wall_width) {
            return None;
        }
        let v = t.direction();
        let zs = zero_set_points(t, p, ball);
        let trans = zs.iter().any(|(_, nrm)| plane_angle(&v, nrm) > thr);
        Some((trans, zs.is_empty()))
    });
    let mut out = Classification::default();
    for (i, v) in verdicts.into_iter().enumerate() {
        match v {
            Some((true, _)) => out.transverse.push(i),
            Some((false, vac)) => {
                out.tangent.push(i);
                if vac {
                    out.vacuous.push(i);
                }
            }
            None => {}
        }
    }
    out
}

/// `n`-dimensional mixture of `components` isotropic Gaussians, rejection
/// sampled into `B_R(0)`.
pub fn gaussian_mixture(seed: u64, n: usize, radius: f64, count: usize, components: usize) -> Vec<Vec<f64>> {
    let mut r = rng::stream(seed, 41);
    let comps: Vec<(Vec<f64>, f64)> = (0..components)
        .map(|_| {
            let c: Vec<f64> = loop {
                let c: Vec<f64> = (0..n).map(|_| rng::uniform(&mut r, -0.5, 0.5) * radius).collect();
                if dot(&c, &c).sqrt() <= 0.5 * radius {
                    break c;
                }
            };
            (c, rng::uniform(&mut r, 0.125, 0.33) * radius)
        })
        .collect();
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let k = (rng::uniform(&mut r, 0.0, components as f64) as usize).min(components - 1);
        let (c, s) = &comps[k];
        let x: Vec<f64> = c.iter().map(|ci| ci + s * rng::normal(&mut r)).collect();
        if dot(&x, &x).sqrt() <= radius {
            out.push(x);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn plane_z(n: usize) -> PartitionPolynomial {
        PartitionPolynomial::from_world(n, vec![Poly::variable(n, n - 1)])
    }

    #[test]
    fn schedule_within_budget() {
        assert_eq!(cut_schedule(3, 2), vec![1, 1]);
        assert_eq!(cut_schedule(3, 3), vec![1, 1]);
        assert_eq!(cut_schedule(3, 4), vec![1, 1, 2]);
        assert_eq!(cut_schedule(3, 8), vec![1, 1, 2, 2]);
        for d in 2..10 {
            assert!(cut_schedule(3, d).iter().sum::<u32>() <= d);
        }
    }

    #[test]
    fn uniform_cube_two_cuts() {
        let mut r = rng::stream(1, 0);
        let pts: Vec<Vec<f64>> = (0..20000).map(|_| (0..3).map(|_| rng::uniform(&mut r, -0.5, 0.5)).collect()).collect();
        let w = vec![1.0; pts.len()];
        let cfg = PartitionConfig::new(2, vec![0.0; 3], 1.0, 0.01, 3);
        let (p, cs) = partition(&pts, &w, &cfg).unwrap();
        assert!(!cs.degenerate);
        assert!(cs.nonempty() >= 4);
        let masses: Vec<f64> = cs.cells.iter().map(|c| c.mass).collect();
        let (lo, hi) = masses.iter().fold((f64::INFINITY, 0.0f64), |(a, b), &m| (a.min(m), b.max(m)));
        assert!(hi / lo <= 2.0, "{masses:?}");
        assert_eq!(p.cut_degree(), 2);
    }

    #[test]
    fn single_point_is_degenerate() {
        let pts = vec![vec![0.1, 0.2, 0.3]; 5];
        let cfg = PartitionConfig::new(3, vec![0.0; 3], 1.0, 0.01, 0);
        let (p, cs) = partition(&pts, &[1.0; 5], &cfg).unwrap();
        assert!(cs.degenerate);
        assert!(p.eval(&pts[0]).abs() < 1e-15);
        assert_eq!(cs.wall_mass, 5.0);
    }

    #[test]
    fn mixture_ledger_matches_brute_force() {
        let radius = 1024.0;
        for (seed, d) in [(0u64, 2u32), (1, 3), (2, 4)] {
            let pts = gaussian_mixture(seed, 3, radius, 100_000, 3);
            let w = vec![1.0; pts.len()];
            let wall = radius.powf(0.51);
            let cfg = PartitionConfig::new(d, vec![0.0; 3], radius, wall, seed);
            let (p, cs) = partition(&pts, &w, &cfg).unwrap();
            // Independent scan: classify every point from P alone.
            let mut by_sign: BTreeMap<u64, f64> = BTreeMap::new();
            let mut wall_mass = 0.0;
            for x in &pts {
                let y: Vec<f64> = x.iter().map(|v| v / radius).collect();
                let mut s = 0u64;
                let mut dmin = f64::INFINITY;
                for (j, f) in p.factors.iter().enumerate() {
                    let v = f.eval(&y);
                    if v > 0.0 {
                        s |= 1 << j;
                    }
                    let g = f.grad(&y);
                    dmin = dmin.min(v.abs() / g.iter().map(|a| a * a).sum::<f64>().sqrt() * radius);
                }
                if dmin <= wall {
                    wall_mass += 1.0;
                } else {
                    *by_sign.entry(s).or_default() += 1.0;
                }
            }
            assert_eq!(wall_mass, cs.wall_mass);
            assert_eq!(by_sign.len(), cs.cells.len());
            for c in &cs.cells {
                assert_eq!(by_sign[&c.signs], c.mass);
            }
            assert!(cs.retained_ratio() <= 2.0);
            assert!(cs.nonempty() <= 8 * (d as usize).pow(3));
            assert!(cs.max_radius() <= 2.0 * radius / d as f64 * (1.0 + 1e-12));
            for c in &cs.cells {
                for &i in c.points.iter().step_by(97) {
                    assert!(dist(&pts[i], &c.center) <= c.radius * (1.0 + 1e-12));
                }
            }
        }
    }

    #[test]
    fn partition_ignores_input_order() {
        let pts = gaussian_mixture(5, 3, 100.0, 5000, 3);
        let mut r = rng::stream(6, 0);
        let mut shuffled = pts.clone();
        for i in (1..shuffled.len()).rev() {
            let j = (rng::uniform(&mut r, 0.0, (i + 1) as f64) as usize).min(i);
            shuffled.swap(i, j);
        }
        let cfg = PartitionConfig::new(3, vec![0.0; 3], 100.0, 2.0, 9);
        let (pa, a) = partition(&pts, &vec![1.0; 5000], &cfg).unwrap();
        let (pb, b) = partition(&shuffled, &vec![1.0; 5000], &cfg).unwrap();
        assert_eq!(pa, pb);
        let ma: Vec<f64> = a.cells.iter().map(|c| c.mass).collect();
        let mb: Vec<f64> = b.cells.iter().map(|c| c.mass).collect();
        assert_eq!(ma, mb);
    }

    #[test]
    fn wall_grows_with_width() {
        let p = PartitionPolynomial::new(vec![0.0; 3], 10.0, vec![Poly::from_terms(3, vec![(vec![2, 0, 0], 1.0), (vec![0, 2, 0], 1.0), (vec![0, 0, 0], -0.25)])]);
        let mut r = rng::stream(7, 0);
        for _ in 0..500 {
            let x: Vec<f64> = (0..3).map(|_| rng::uniform(&mut r, -10.0, 10.0)).collect();
            if p.in_wall(&x, 0.5) {
                assert!(p.in_wall(&x, 1.0));
            }
        }
        assert!(p.in_wall(&[5.0, 0.0, 3.0], 1e-9));
        assert!((p.distance(&[6.0, 0.0, 0.0]) - 0.11 / 1.2 * 10.0).abs() < 1e-12);
    }

    #[test]
    fn crossing_counts() {
        let lin = plane_z(3);
        assert_eq!(check_cell_crossing(&[0.0, 0.0, -1.0], &[1.0, 2.0, 1.0], &lin, 1000), 2);
        let planes = PartitionPolynomial::from_world(
            3,
            vec![
                Poly::from_terms(3, vec![(vec![1, 0, 0], 1.0), (vec![0, 0, 0], -0.1)]),
                Poly::from_terms(3, vec![(vec![0, 1, 0], 1.0), (vec![0, 0, 0], 0.2)]),
                Poly::from_terms(3, vec![(vec![0, 0, 1], 1.0), (vec![1, 0, 0], 0.3)]),
            ],
        );
        let c = check_cell_crossing(&[-1.0, -0.9, -1.1], &[1.0, 1.05, 0.95], &planes, 1000);
        assert_eq!(c, 4);
        // Fine sampling oracle on random lines against a product of quadrics.
        let q = PartitionPolynomial::from_world(
            3,
            vec![
                Poly::from_terms(3, vec![(vec![2, 0, 0], 1.0), (vec![0, 2, 0], 1.0), (vec![0, 0, 1], -1.0)]),
                Poly::from_terms(3, vec![(vec![1, 1, 0], 1.0), (vec![0, 0, 0], -0.1)]),
            ],
        );
        let mut r = rng::stream(8, 0);
        for _ in 0..100 {
            let a: Vec<f64> = (0..3).map(|_| rng::uniform(&mut r, -2.0, 2.0)).collect();
            let b: Vec<f64> = (0..3).map(|_| rng::uniform(&mut r, -2.0, 2.0)).collect();
            let coarse = check_cell_crossing(&a, &b, &q, 1000);
            let fine = check_cell_crossing(&a, &b, &q, 100_000);
            assert!(fine <= q.total_degree() as usize + 1);
            assert_eq!(coarse, fine);
        }
    }

    fn shape(a: [f64; 3], v: [f64; 3], len: f64, w: f64) -> TubeShape {
        let b = [a[0] + len * v[0], a[1] + len * v[1], a[2] + len * v[2]];
        TubeShape { a: a.to_vec(), b: b.to_vec(), width: w }
    }

    #[test]
    fn plane_classification() {
        let p = plane_z(3);
        let ball = Ball { center: vec![0.0; 3], radius: 50.0 };
        let tubes = vec![
            shape([0.0, 0.0, -30.0], [0.0, 0.0, 1.0], 60.0, 4.0),
            shape([-30.0, 0.0, 1.0], [1.0, 0.0, 0.0], 60.0, 4.0),
            shape([-30.0, 0.0, 40.0], [1.0, 0.0, 0.0], 60.0, 4.0),
        ];
        let c = classify_tubes(&tubes, &p, &ball, 8.0, 64.0, 0.05);
        assert_eq!(c.transverse, vec![0]);
        assert_eq!(c.tangent, vec![1]);
        assert_eq!(c.vacuous, Vec::<usize>::new());
    }

    #[test]
    fn quadric_classification_matches_dense_oracle() {
        let r = 256.0;
        let delta = 0.05;
        let p = PartitionPolynomial::new(
            vec![0.0; 3],
            r,
            vec![Poly::from_terms(3, vec![(vec![2, 0, 0], 1.0), (vec![0, 2, 0], 0.5), (vec![0, 0, 1], -1.0), (vec![0, 0, 0], -0.1)])],
        );
        let ball = Ball { center: vec![0.0; 3], radius: r.powf(1.0 - delta) };
        let wall = r.powf(0.5 + delta);
        let w = r.powf(0.5 + delta);
        let mut g = rng::stream(9, 0);
        let tubes: Vec<TubeShape> = (0..200)
            .map(|_| {
                let c: Vec<f64> = (0..3).map(|_| rng::uniform(&mut g, -0.5, 0.5) * r).collect();
                let mut v: Vec<f64> = (0..3).map(|_| rng::normal(&mut g)).collect();
                if rng::uniform(&mut g, 0.0, 1.0) < 0.5 {
                    v[2] *= 0.02;
                }
                let v = normalized(v);
                TubeShape { a: (0..3).map(|k| c[k] - r * v[k]).collect(), b: (0..3).map(|k| c[k] + r * v[k]).collect(), width: w }
            })
            .collect();
        let got = classify_tubes(&tubes, &p, &ball, wall, r, delta);
        let thr = r.powf(-0.5 + 2.0 * delta);
        let mut agree = 0;
        let mut total = 0;
        for (i, t) in tubes.iter().enumerate() {
            let meets = got.tangent.contains(&i) || got.transverse.contains(&i);
            if !meets {
                continue;
            }
            total += 1;
            // Dense oracle: project a 3D sample of 10T cap 2B_k onto Z(P).
            let v = t.direction();
            let frame = normal_frame(&v);
            let mid = t.midpoint();
            let mut trans = false;
            for a in 0..40 {
                let s = -5.0 * t.length() + 10.0 * t.length() * (a as f64 + 0.5) / 40.0;
                for (u1, u2) in [(0.0, 0.0), (5.0, 0.0), (-5.0, 0.0), (0.0, 5.0), (0.0, -5.0)] {
                    let x: Vec<f64> = (0..3).map(|k| mid[k] + s * v[k] + t.width * (u1 * frame[0][k] + u2 * frame[1][k])).collect();
                    if dist(&x, &ball.center) > 2.0 * ball.radius {
                        continue;
                    }
                    if let Some(z) = project_to_factor(&p, 0, &x, 0.25 * ball.radius, 200) {
                        let ta: Vec<f64> = (0..3).map(|k| mid[k] - 5.0 * t.length() * v[k]).collect();
                        let tb: Vec<f64> = (0..3).map(|k| mid[k] + 5.0 * t.length() * v[k]).collect();
                        if dist(&z, &ball.center) <= 2.0 * ball.radius && segment_point_distance(&ta, &tb, &z) <= 10.0 * t.width {
                            let gz = p.factor_grad(0, &z);
                            let gn = dot(&gz, &gz).sqrt();
                            let nrm: Vec<f64> = gz.iter().map(|x| x / gn).collect();
                            trans |= plane_angle(&v, &nrm) > thr;
                        }
                    }
                }
            }
            if trans == got.transverse.contains(&i) {
                agree += 1;
            }
        }
        assert!(total > 20, "{total}");
        assert_eq!(agree, total);
    }
}
