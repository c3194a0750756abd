//! Per-cap wave packets, the wall cover by balls, tangent/transverse
//! assembly and the cell/trans/tang iteration with its L^2 ledger.

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::broad::{bilinear_value, broad_value, cap_extensions, total, CapGrid};
use crate::field::{FrequencyField, Lattice};
use crate::partition::{classify_tubes, partition, Ball, CellSet, PartitionConfig, PartitionPolynomial, TubeShape};
use crate::rng;
use crate::surface::Surface;
use crate::wavepackets::{decompose, WavePacketSet};
use crate::{LabError, Result, C64};

/// Packets with energy below this fraction of `||f||^2` take no part in the
/// tube geometry.
pub const SIGNIFICANT: f64 = 1e-10;

/// Explicit constant in the ledger bounds.
pub const LEDGER_CONSTANT: f64 = 16.0;

/// Up to this many active caps every subset is enumerated.
pub const EXHAUSTIVE_CAPS: usize = 16;

pub const SAMPLED_SUBSETS: usize = 256;

/// Wave packets of each `f_tau = f 1_tau` at one scale.
pub struct CapPackets {
    pub grid: CapGrid,
    pub taus: Vec<usize>,
    pub sets: Vec<WavePacketSet>,
    /// Per set entry: the tube, if the packet is significant and its tube
    /// meets the ball.
    pub shapes: Vec<Vec<Option<TubeShape>>>,
    lattice: Lattice,
}

pub fn packets_by_cap(f: &FrequencyField, surface: &Surface, k: usize, r: f64, delta: f64, x0: &[f64]) -> Result<CapPackets> {
    let grid = CapGrid::new(k, f.dim())?;
    let norm = f.l2_norm().powi(2);
    let mut taus = Vec::new();
    let mut sets = Vec::new();
    let mut shapes = Vec::new();
    for tau in 0..grid.len() {
        let ft = grid.restrict(f, tau);
        if ft.is_zero() {
            continue;
        }
        let set = decompose(&ft, surface, r, delta, x0)?;
        let sh: Vec<Option<TubeShape>> = crate::par::map_range(set.entries.len(), |i| {
            let en = &set.entries[i];
            if en.nonempty && en.energy >= SIGNIFICANT * norm {
                TubeShape::from_tube(&set.tube(i))
            } else {
                None
            }
        });
        taus.push(tau);
        sets.push(set);
        shapes.push(sh);
    }
    let lattice = match sets.first() {
        Some(s) => s.padded_lattice(),
        None => f.lattice.clone(),
    };
    Ok(CapPackets { grid, taus, sets, shapes, lattice })
}

impl CapPackets {
    pub fn lattice(&self) -> &Lattice {
        &self.lattice
    }

    pub fn zeros(&self) -> FrequencyField {
        FrequencyField::zeros(self.lattice.clone())
    }

    pub fn none(&self) -> Vec<Vec<bool>> {
        self.sets.iter().map(|s| vec![false; s.entries.len()]).collect()
    }

    pub fn tau_sum(&self, t: usize, mask: &[bool]) -> FrequencyField {
        if !mask.iter().any(|&m| m) {
            return self.zeros();
        }
        self.sets[t].masked_sum(mask)
    }

    pub fn sum(&self, masks: &[Vec<bool>]) -> FrequencyField {
        let mut out = self.zeros();
        for (t, m) in masks.iter().enumerate() {
            if m.iter().any(|&x| x) {
                out.add_assign(&self.tau_sum(t, m));
            }
        }
        out.tighten_support();
        out
    }

    /// Sum of the packet energies selected by `masks`.
    pub fn energy(&self, masks: &[Vec<bool>]) -> f64 {
        self.sets.iter().zip(masks).map(|(s, m)| s.entries.iter().zip(m).filter(|(_, k)| **k).map(|(e, _)| e.energy).sum::<f64>()).sum()
    }
}

/// `f_{I,k,+} = sum_{tau in I} sum_{T in T_{k,+}} f_{tau,T}`: `masks` flags the
/// packets of each active cap and `subset` lists positions in `cp.taus`.
pub fn assemble_wall_functions(cp: &CapPackets, masks: &[Vec<bool>], subset: &[usize]) -> FrequencyField {
    let mut out = cp.zeros();
    for &t in subset {
        out.add_assign(&cp.tau_sum(t, &masks[t]));
    }
    out.tighten_support();
    out
}

#[derive(Clone, Debug)]
enum Constraint {
    Ball(Ball),
    Cell { poly: Arc<PartitionPolynomial>, signs: u64, wall: f64 },
    Wall { poly: Arc<PartitionPolynomial>, wall: f64 },
}

/// Intersection of balls, cells and walls from earlier steps.
#[derive(Clone, Debug)]
pub struct Region {
    parts: Vec<Constraint>,
}

impl Region {
    pub fn ball(b: Ball) -> Self {
        Region { parts: vec![Constraint::Ball(b)] }
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        self.parts.iter().all(|c| match c {
            Constraint::Ball(b) => b.contains(x),
            Constraint::Cell { poly, signs, wall } => poly.signs(x) == *signs && !poly.in_wall(x, *wall),
            Constraint::Wall { poly, wall } => poly.in_wall(x, *wall),
        })
    }

    fn with(&self, c: Constraint) -> Region {
        let mut r = self.clone();
        r.parts.push(c);
        r
    }
}

/// Grid points of the cube around `ball` lying in `region`, and the cell
/// volume of the grid.
pub fn region_samples(ball: &Ball, region: &Region, per_axis: usize) -> (Vec<Vec<f64>>, f64) {
    let n = ball.center.len();
    let m = per_axis.max(2);
    let step = 2.0 * ball.radius / (m - 1) as f64;
    let mut out = Vec::new();
    let total = m.pow(n as u32);
    for flat in 0..total {
        let mut rest = flat;
        let mut x = vec![0.0; n];
        for a in (0..n).rev() {
            x[a] = ball.center[a] - ball.radius + (rest % m) as f64 * step;
            rest /= m;
        }
        if region.contains(&x) {
            out.push(x);
        }
    }
    (out, step.powi(n as i32))
}

/// Everything one partitioning step needs about a function on a region.
pub struct WallAnalysis {
    pub center: Vec<f64>,
    pub radius: f64,
    pub scale: f64,
    pub wall_width: f64,
    pub ball_radius: f64,
    pub poly: PartitionPolynomial,
    pub cells: CellSet,
    pub points: Vec<Vec<f64>>,
    pub volume: f64,
    /// `Ef_tau` at every sample point, over the `K`-caps.
    pub caps: Vec<Vec<C64>>,
    pub packets: CapPackets,
    /// The wall cover: balls `B_k` and the wall sample points in each.
    pub balls: Vec<Ball>,
    pub ball_points: Vec<Vec<usize>>,
    /// Per ball and active cap: (transverse mask, tangent mask).
    pub classes: Vec<Vec<(Vec<bool>, Vec<bool>)>>,
    pub vacuous: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepSettings {
    pub surface: Surface,
    pub k: usize,
    pub degree: u32,
    pub delta: f64,
    pub exponent: f64,
    pub seed: u64,
}

/// Partitions `|Br_alpha Eg|^p` over `points`, decomposes every `g_tau` at
/// scale `scale` anchored at `ball.center`, covers the wall by balls of
/// radius `scale^{1-delta}` and classifies the tubes in each ball.
pub fn analyze_wall(g: &FrequencyField, st: &StepSettings, ball: &Ball, scale: f64, points: Vec<Vec<f64>>, volume: f64, alpha: f64) -> Result<WallAnalysis> {
    let grid = CapGrid::new(st.k, g.dim())?;
    let caps = cap_extensions(g, &st.surface, &grid, &points)?;
    let weights: Vec<f64> = caps.iter().map(|c| broad_value(c, alpha).powf(st.exponent) * volume).collect();
    let wall_width = scale.powf(0.5 + st.delta);
    let ball_radius = scale.powf(1.0 - st.delta);
    let (poly, cells) = if points.is_empty() {
        (
            PartitionPolynomial::new(ball.center.clone(), ball.radius, Vec::new()),
            CellSet { cells: Vec::new(), wall_width, wall_mass: 0.0, total_mass: 0.0, imbalance: Vec::new(), degenerate: true },
        )
    } else {
        let cfg = PartitionConfig::new(st.degree, ball.center.clone(), ball.radius, wall_width, st.seed);
        partition(&points, &weights, &cfg)?
    };
    let packets = packets_by_cap(g, &st.surface, st.k, scale, st.delta, &ball.center)?;
    let mut cover: BTreeMap<Vec<i64>, Vec<usize>> = BTreeMap::new();
    for (i, x) in points.iter().enumerate() {
        if !poly.factors.is_empty() && poly.in_wall(x, wall_width) {
            let key: Vec<i64> = x.iter().zip(&ball.center).map(|(a, c)| ((a - c) / ball_radius).round() as i64).collect();
            cover.entry(key).or_default().push(i);
        }
    }
    let mut balls = Vec::new();
    let mut ball_points = Vec::new();
    for (key, pts) in cover {
        let center = key.iter().zip(&ball.center).map(|(k, c)| c + *k as f64 * ball_radius).collect();
        balls.push(Ball { center, radius: ball_radius });
        ball_points.push(pts);
    }
    let mut classes = Vec::new();
    let mut vacuous = 0;
    for b in &balls {
        let mut per = Vec::new();
        for sh in &packets.shapes {
            let idx: Vec<usize> = (0..sh.len()).filter(|&i| sh[i].is_some()).collect();
            let list: Vec<TubeShape> = idx.iter().map(|&i| sh[i].clone().unwrap()).collect();
            let c = classify_tubes(&list, &poly, b, wall_width, scale, st.delta);
            let mut plus = vec![false; sh.len()];
            let mut minus = vec![false; sh.len()];
            for &j in &c.transverse {
                plus[idx[j]] = true;
            }
            for &j in &c.tangent {
                minus[idx[j]] = true;
            }
            vacuous += c.vacuous.len();
            per.push((plus, minus));
        }
        classes.push(per);
    }
    Ok(WallAnalysis {
        center: ball.center.clone(),
        radius: ball.radius,
        scale,
        wall_width,
        ball_radius,
        poly,
        cells,
        points,
        volume,
        caps,
        packets,
        balls,
        ball_points,
        classes,
        vacuous,
    })
}

/// Subsets of the active caps used for `sum_I`: all of them up to
/// `EXHAUSTIVE_CAPS` caps, else a seeded sample plus the full set.
pub fn subset_family(active: usize, seed: u64) -> Result<(Vec<u64>, bool)> {
    if active > 64 {
        return Err(LabError::Parameter("more than 64 active caps".into()));
    }
    if active <= EXHAUSTIVE_CAPS {
        // Gray-code order: consecutive subsets differ in one cap.
        return Ok(((0..1u64 << active).map(|i| i ^ (i >> 1)).collect(), true));
    }
    let mut r = rng::stream(seed, 53);
    let full = if active == 64 { u64::MAX } else { (1u64 << active) - 1 };
    let mut out = vec![full];
    while out.len() < SAMPLED_SUBSETS {
        let m = rand::Rng::random::<u64>(&mut r) & full;
        out.push(m);
    }
    Ok((out, false))
}

/// Calls `visit(position, Br_alpha)` for each subset of the per-cap vectors
/// `per_tau` (one cap vector per active cap), following the family order.
fn for_each_subset_broad(per_tau: &[Vec<C64>], family: &[u64], alpha: f64, mut visit: impl FnMut(usize, f64)) {
    let ncaps = per_tau.first().map(|v| v.len()).unwrap_or(0);
    let mut acc = vec![C64::new(0.0, 0.0); ncaps];
    let mut cur = 0u64;
    for (pos, &mask) in family.iter().enumerate() {
        let diff = cur ^ mask;
        if diff.count_ones() > 1 || pos == 0 {
            acc.iter_mut().for_each(|v| *v = C64::new(0.0, 0.0));
            for (t, v) in per_tau.iter().enumerate() {
                if mask >> t & 1 == 1 {
                    acc.iter_mut().zip(v).for_each(|(a, b)| *a += b);
                }
            }
        } else if diff != 0 {
            let t = diff.trailing_zeros() as usize;
            let sign = if mask >> t & 1 == 1 { 1.0 } else { -1.0 };
            acc.iter_mut().zip(&per_tau[t]).for_each(|(a, b)| *a += b * sign);
        }
        cur = mask;
        visit(pos, broad_value(&acc, alpha));
    }
}

/// Per ball: transverse and tangent cap vectors `E f_{tau,k,+-}` at the
/// ball's wall points, indexed `[point][tau]`.
#[allow(clippy::type_complexity)]
fn ball_cap_values(a: &WallAnalysis, st: &StepSettings, b: usize) -> Result<(Vec<Vec<Vec<C64>>>, Vec<Vec<Vec<C64>>>, Vec<FrequencyField>, Vec<FrequencyField>)> {
    let pts: Vec<Vec<f64>> = a.ball_points[b].iter().map(|&i| a.points[i].clone()).collect();
    let grid = &a.packets.grid;
    let nt = a.packets.taus.len();
    let mut plus = vec![vec![Vec::new(); nt]; pts.len()];
    let mut minus = vec![vec![Vec::new(); nt]; pts.len()];
    let mut pf = Vec::new();
    let mut mf = Vec::new();
    for t in 0..nt {
        let (pm, mm) = &a.classes[b][t];
        let fp = a.packets.tau_sum(t, pm);
        let fm = a.packets.tau_sum(t, mm);
        let cp = if fp.is_zero() { vec![vec![C64::new(0.0, 0.0); grid.len()]; pts.len()] } else { cap_extensions(&fp, &st.surface, grid, &pts)? };
        let cm = if fm.is_zero() { vec![vec![C64::new(0.0, 0.0); grid.len()]; pts.len()] } else { cap_extensions(&fm, &st.surface, grid, &pts)? };
        for (i, (p, m)) in cp.into_iter().zip(cm).enumerate() {
            plus[i][t] = p;
            minus[i][t] = m;
        }
        pf.push(fp);
        mf.push(fm);
    }
    Ok((plus, minus, pf, mf))
}

fn bil_at(grid: &CapGrid, taus: &[usize], minus: &[Vec<C64>]) -> f64 {
    let mut v = vec![C64::new(0.0, 0.0); grid.len()];
    for (t, caps) in minus.iter().enumerate() {
        v[taus[t]] = total(caps);
    }
    bilinear_value(grid, &v)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WallBroadReport {
    /// `max_x Br_alpha Ef - 2(sum_I Br_{2 alpha} Ef_{I,k,+} + K^100 Bil)`.
    pub value: f64,
    pub wall_points: usize,
    pub balls: usize,
    pub subsets: usize,
    pub exhaustive: bool,
    pub f_norm: f64,
}

/// Pointwise broad/wall inequality on the wall points of one partitioning
/// step of `f` over `B_R(center)`.
#[allow(clippy::too_many_arguments)]
pub fn wall_broad_check(f: &FrequencyField, surface: &Surface, r: f64, center: &[f64], k: usize, alpha: f64, degree: u32, delta: f64, per_axis: usize, seed: u64) -> Result<WallBroadReport> {
    let st = StepSettings { surface: surface.clone(), k, degree, delta, exponent: 13.0 / 4.0, seed };
    let ball = Ball { center: center.to_vec(), radius: r };
    let (pts, vol) = region_samples(&ball, &Region::ball(ball.clone()), per_axis);
    let a = analyze_wall(f, &st, &ball, r, pts, vol, alpha)?;
    let (family, exhaustive) = subset_family(a.packets.taus.len(), seed)?;
    let weight = (k as f64).powi(100);
    let mut worst = f64::NEG_INFINITY;
    let mut npts = 0;
    for b in 0..a.balls.len() {
        let (plus, minus, _, _) = ball_cap_values(&a, &st, b)?;
        for (j, &i) in a.ball_points[b].iter().enumerate() {
            let lhs = broad_value(&a.caps[i], alpha);
            let mut sum_i = 0.0;
            for_each_subset_broad(&plus[j], &family, 2.0 * alpha, |_, v| sum_i += v);
            let rhs = 2.0 * (sum_i + weight * bil_at(&a.packets.grid, &a.packets.taus, &minus[j]));
            worst = worst.max(lhs - rhs);
            npts += 1;
        }
    }
    Ok(WallBroadReport {
        value: if npts == 0 { 0.0 } else { worst },
        wall_points: npts,
        balls: a.balls.len(),
        subsets: family.len(),
        exhaustive,
        f_norm: f.l2_norm(),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StepState {
    Cell,
    Trans,
    Tang,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Tangent,
    SmallRadius,
    StepLimit,
    Degenerate,
    Empty,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationConfig {
    pub surface: Surface,
    pub r0: f64,
    pub degree: u32,
    pub eps: f64,
    pub delta: f64,
    pub k: usize,
    pub alpha: f64,
    pub exponent: f64,
    pub samples_per_axis: usize,
    /// Weight of the bilinear term when choosing the state.
    pub tangent_weight: f64,
    /// Forced states for the first steps; free choice afterwards.
    pub forced: Vec<StepState>,
    pub max_steps: usize,
    /// Parent cells processed per step, heaviest first.
    pub max_cells: usize,
    pub center: Vec<f64>,
    pub seed: u64,
}

impl IterationConfig {
    pub fn new(surface: Surface, r0: f64, degree: u32, eps: f64, k: usize, seed: u64) -> Self {
        IterationConfig {
            surface,
            r0,
            degree,
            eps,
            delta: eps * eps,
            k,
            alpha: (k as f64).powf(-eps),
            exponent: 13.0 / 4.0,
            samples_per_axis: 9,
            tangent_weight: (k as f64).powi(100),
            forced: Vec::new(),
            max_steps: 6,
            max_cells: 8,
            center: vec![0.0; 3],
            seed,
        }
    }

    /// Iteration stops once `r_u <= max(R^{eps/10}, 16)`.
    pub fn stop_radius(&self) -> f64 {
        self.r0.powf(self.eps / 10.0).max(16.0)
    }

    pub fn next_radius(&self, r: f64, state: StepState) -> f64 {
        match state {
            StepState::Cell => r / self.degree as f64,
            StepState::Trans | StepState::Tang => r.powf(1.0 - self.delta),
        }
    }

    /// `2^u alpha`, kept below 1.
    pub fn alpha_at(&self, u: usize) -> f64 {
        (self.alpha * 2f64.powi(u as i32)).min(0.99)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PacketRef {
    /// Cap index in the `K`-grid.
    pub tau: usize,
    /// Entry positions in the decomposition of the parent's `f_tau`.
    pub entries: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceCell {
    pub id: usize,
    pub parent: Option<usize>,
    pub center: Vec<f64>,
    pub radius: f64,
    pub l2_sq: f64,
    /// Packets of the parent function (decomposed at `source_scale` around
    /// the parent center) whose sum is this cell's function.
    pub packets: Vec<PacketRef>,
    pub source_scale: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LedgerEntry {
    pub name: String,
    pub measured: f64,
    pub bound: f64,
    pub holds: bool,
}

impl LedgerEntry {
    fn new(name: &str, measured: f64, bound: f64) -> Self {
        LedgerEntry { name: name.into(), measured, bound, holds: measured <= bound }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub u: usize,
    pub state: StepState,
    pub forced: bool,
    pub radius: f64,
    /// Cellular, transverse and weighted tangent terms.
    pub terms: [f64; 3],
    pub cells: Vec<TraceCell>,
    pub ledger: Vec<LedgerEntry>,
    /// Fraction of candidate cellular children kept by the pigeonhole.
    pub retained_fraction: f64,
    pub subsets_exhaustive: bool,
    pub vacuous_tangent: usize,
}

pub const TRACE_SCHEMA: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationTrace {
    pub schema: u32,
    pub r0: f64,
    pub degree: u32,
    pub delta: f64,
    pub eps: f64,
    pub root: TraceCell,
    pub radii: Vec<f64>,
    pub steps: Vec<StepRecord>,
    pub s_c: usize,
    pub s_t: usize,
    pub stop: StopReason,
    pub degenerate: bool,
}

impl IterationTrace {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("trace serializes")
    }

    /// Checks the radius recursion, counters, termination and nesting.
    pub fn invariant_violations(&self, cfg: &IterationConfig) -> Vec<String> {
        let mut out = Vec::new();
        if self.radii.first() != Some(&self.r0) {
            out.push("r_0 != R".into());
        }
        for (i, st) in self.steps.iter().enumerate() {
            let want = cfg.next_radius(self.radii[i], st.state);
            if (self.radii[i + 1] - want).abs() > 1e-9 * want {
                out.push(format!("radius at step {} is {} not {}", st.u, self.radii[i + 1], want));
            }
            if st.state == StepState::Tang && i + 1 != self.steps.len() {
                out.push("tangent step before the end".into());
            }
        }
        let sc_bound = (self.r0.ln() / (self.degree as f64).ln()).ceil() as usize;
        let st_bound = (1.0 / (self.delta * self.delta)).ceil() as usize;
        if self.s_c > sc_bound {
            out.push(format!("s_c = {} > {}", self.s_c, sc_bound));
        }
        if self.s_t > st_bound {
            out.push(format!("s_t = {} > {}", self.s_t, st_bound));
        }
        if self.stop == StopReason::SmallRadius && *self.radii.last().unwrap() > cfg.stop_radius() {
            out.push("stopped for small radius above the threshold".into());
        }
        if self.stop == StopReason::Tangent && self.steps.last().map(|s| s.state) != Some(StepState::Tang) {
            out.push("tangent stop without a tangent step".into());
        }
        let mut ids: BTreeMap<usize, usize> = BTreeMap::new();
        ids.insert(self.root.id, 0);
        for st in &self.steps {
            for c in &st.cells {
                match c.parent.and_then(|p| ids.get(&p)) {
                    Some(&level) if level + 1 == st.u => {}
                    _ => out.push(format!("cell {} has no parent at step {}", c.id, st.u - 1)),
                }
                ids.insert(c.id, st.u);
            }
        }
        out
    }
}

struct Live {
    cell: TraceCell,
    f: FrequencyField,
    region: Region,
    ball: Ball,
}

struct Candidate {
    parent: usize,
    ball: Ball,
    region: Region,
    f: FrequencyField,
    masks: Vec<Vec<bool>>,
    taus: Vec<usize>,
}

fn refs(taus: &[usize], masks: &[Vec<bool>]) -> Vec<PacketRef> {
    masks
        .iter()
        .zip(taus)
        .filter(|(m, _)| m.iter().any(|&x| x))
        .map(|(m, &tau)| PacketRef { tau, entries: (0..m.len()).filter(|&i| m[i]).collect() })
        .collect()
}

/// Runs the cell/trans/tang iteration on `f` over `B_R(center)`.
pub fn iterate(f: &FrequencyField, cfg: &IterationConfig) -> Result<IterationTrace> {
    if cfg.r0 < (cfg.degree as f64).powi(2) {
        return Err(LabError::Parameter("need R >= D^2".into()));
    }
    if cfg.degree < 2 {
        return Err(LabError::Parameter("D must be at least 2".into()));
    }
    let st = StepSettings { surface: cfg.surface.clone(), k: cfg.k, degree: cfg.degree, delta: cfg.delta, exponent: cfg.exponent, seed: cfg.seed };
    let root_ball = Ball { center: cfg.center.clone(), radius: cfg.r0 };
    let root = TraceCell { id: 0, parent: None, center: cfg.center.clone(), radius: cfg.r0, l2_sq: f.l2_norm().powi(2), packets: Vec::new(), source_scale: 0.0 };
    let mut live = vec![Live { cell: root.clone(), f: f.clone(), region: Region::ball(root_ball.clone()), ball: root_ball }];
    let mut trace = IterationTrace {
        schema: TRACE_SCHEMA,
        r0: cfg.r0,
        degree: cfg.degree,
        delta: cfg.delta,
        eps: cfg.eps,
        root,
        radii: vec![cfg.r0],
        steps: Vec::new(),
        s_c: 0,
        s_t: 0,
        stop: StopReason::StepLimit,
        degenerate: false,
    };
    let mut next_id = 1;
    let d = cfg.degree as f64;
    for u in 1..=cfg.max_steps {
        let r_prev = *trace.radii.last().unwrap();
        // Heaviest parents first, ties by id.
        live.sort_by(|a, b| b.cell.l2_sq.total_cmp(&a.cell.l2_sq).then(a.cell.id.cmp(&b.cell.id)));
        live.truncate(cfg.max_cells);
        let a_prev = cfg.alpha_at(u - 1);
        let a_cur = cfg.alpha_at(u);
        let mut terms = [0.0f64; 3];
        let mut cell_cands: Vec<Candidate> = Vec::new();
        let mut trans_cands: Vec<Candidate> = Vec::new();
        let mut tang_cands: Vec<(f64, Candidate)> = Vec::new();
        let mut exhaustive = true;
        let mut vacuous = 0;
        let mut degenerate = false;
        for (pi, parent) in live.iter().enumerate() {
            let (pts, vol) = region_samples(&parent.ball, &parent.region, cfg.samples_per_axis);
            let st_u = StepSettings { seed: rand::Rng::random::<u64>(&mut rng::substream(cfg.seed, u as u64, parent.cell.id as u64)), ..st.clone() };
            let a = analyze_wall(&parent.f, &st_u, &parent.ball, r_prev, pts, vol, a_prev)?;
            degenerate |= a.cells.degenerate;
            vacuous += a.vacuous;
            let poly = Arc::new(a.poly.clone());
            let p = cfg.exponent;
            // Cellular candidates.
            let shapes = &a.packets.shapes;
            for c in a.cells.cells.iter().filter(|c| c.mass > 0.0) {
                for &i in &c.points {
                    terms[0] += broad_value(&a.caps[i], a_cur).powf(p) * a.volume;
                }
                let region = parent.region.with(Constraint::Cell { poly: poly.clone(), signs: c.signs, wall: a.wall_width });
                let masks: Vec<Vec<bool>> = crate::par::map_slice(shapes, |sh| {
                    sh.iter().map(|s| s.as_ref().is_some_and(|t| t.samples().iter().any(|x| region.contains(x)))).collect()
                });
                let fc = a.packets.sum(&masks);
                let ball = Ball { center: c.center.clone(), radius: (2.0 * cfg.next_radius(r_prev, StepState::Cell)).min(parent.ball.radius) };
                cell_cands.push(Candidate { parent: pi, ball, region, f: fc, masks, taus: a.packets.taus.clone() });
            }
            // Wall terms.
            let (family, ex) = subset_family(a.packets.taus.len(), st_u.seed)?;
            exhaustive &= ex;
            for b in 0..a.balls.len() {
                let (plus, minus, pf, mf) = ball_cap_values(&a, &st, b)?;
                let mut per_subset = vec![0.0; family.len()];
                for (j, _) in a.ball_points[b].iter().enumerate() {
                    for_each_subset_broad(&plus[j], &family, a_cur, |pos, v| per_subset[pos] += v.powf(p) * a.volume);
                    terms[2] += cfg.tangent_weight * bil_at(&a.packets.grid, &a.packets.taus, &minus[j]).powf(p) * a.volume;
                }
                terms[1] += per_subset.iter().sum::<f64>();
                let wall_region = parent.region.with(Constraint::Wall { poly: poly.clone(), wall: a.wall_width }).with(Constraint::Ball(a.balls[b].clone()));
                // Transverse child: the subset with the largest integral.
                let best = (0..family.len()).max_by(|&x, &y| per_subset[x].total_cmp(&per_subset[y]).then(family[y].cmp(&family[x]))).unwrap();
                let mask = family[best];
                let nt = a.packets.taus.len();
                let mut masks = a.packets.none();
                let mut fplus = a.packets.zeros();
                for t in 0..nt {
                    if mask >> t & 1 == 1 {
                        masks[t] = a.classes[b][t].0.clone();
                        fplus.add_assign(&pf[t]);
                    }
                }
                fplus.tighten_support();
                trans_cands.push(Candidate { parent: pi, ball: a.balls[b].clone(), region: wall_region.clone(), f: fplus, masks, taus: a.packets.taus.clone() });
                // Tangent child: the cap with the most tangent mass.
                for t in 0..nt {
                    let m2 = mf[t].l2_norm().powi(2);
                    if m2 > 0.0 {
                        let mut masks = a.packets.none();
                        masks[t] = a.classes[b][t].1.clone();
                        tang_cands.push((m2, Candidate { parent: pi, ball: a.balls[b].clone(), region: wall_region.clone(), f: mf[t].clone(), masks, taus: a.packets.taus.clone() }));
                    }
                }
            }
        }
        let forced = cfg.forced.get(u - 1).copied();
        let state = forced.unwrap_or(if terms[0] >= terms[1] && terms[0] >= terms[2] {
            StepState::Cell
        } else if terms[1] >= terms[2] {
            StepState::Trans
        } else {
            StepState::Tang
        });
        let r_u = cfg.next_radius(r_prev, state);
        let mut retained_fraction = 1.0;
        let chosen: Vec<Candidate> = match state {
            StepState::Cell => {
                let mut norms: Vec<f64> = cell_cands.iter().map(|c| c.f.l2_norm().powi(2)).filter(|m| *m > 0.0).collect();
                norms.sort_by(|a, b| a.total_cmp(b));
                let med = if norms.is_empty() { 0.0 } else { norms[(norms.len() - 1) / 2] };
                let before = cell_cands.len().max(1);
                let kept: Vec<Candidate> = cell_cands
                    .into_iter()
                    .filter(|c| {
                        let m = c.f.l2_norm().powi(2);
                        m > 0.0 && m <= 2.0 * med
                    })
                    .collect();
                retained_fraction = kept.len() as f64 / before as f64;
                kept
            }
            StepState::Trans => trans_cands.into_iter().filter(|c| !c.f.is_zero()).collect(),
            StepState::Tang => {
                // One child per parent.
                let mut best: BTreeMap<usize, (f64, Candidate)> = BTreeMap::new();
                for (m, c) in tang_cands {
                    if best.get(&c.parent).is_none_or(|(bm, _)| m > *bm) {
                        best.insert(c.parent, (m, c));
                    }
                }
                best.into_values().map(|(_, c)| c).collect()
            }
        };
        let mut cells = Vec::new();
        let mut next_live = Vec::new();
        for c in chosen {
            let parent = &live[c.parent];
            let cell = TraceCell {
                id: next_id,
                parent: Some(parent.cell.id),
                center: c.ball.center.clone(),
                radius: c.ball.radius,
                l2_sq: c.f.l2_norm().powi(2),
                packets: refs(&c.taus, &c.masks),
                source_scale: r_prev,
            };
            next_id += 1;
            cells.push(cell.clone());
            next_live.push(Live { cell, f: c.f, region: c.region, ball: c.ball });
        }
        let parent_sum: f64 = live.iter().map(|l| l.cell.l2_sq).sum();
        let child_sum: f64 = cells.iter().map(|c| c.l2_sq).sum();
        let max_ratio = cells
            .iter()
            .map(|c| c.l2_sq / live.iter().find(|l| Some(l.cell.id) == c.parent).map(|l| l.cell.l2_sq).unwrap_or(1.0))
            .fold(0.0, f64::max);
        let cst = LEDGER_CONSTANT;
        let sum_ratio = if parent_sum > 0.0 { child_sum / parent_sum } else { 0.0 };
        let ledger = match state {
            StepState::Cell => vec![LedgerEntry::new("cell_child_over_parent", max_ratio, cst / (d * d)), LedgerEntry::new("cell_sum_over_parent_sum", sum_ratio, cst * d)],
            StepState::Trans => vec![LedgerEntry::new("trans_child_over_parent", max_ratio, cst), LedgerEntry::new("trans_sum_over_parent_sum", sum_ratio, cst * d.powi(3))],
            StepState::Tang => vec![LedgerEntry::new("tang_child_over_parent", max_ratio, cst), LedgerEntry::new("tang_sum_over_parent_sum", sum_ratio, cst)],
        };
        match state {
            StepState::Cell => trace.s_c += 1,
            StepState::Trans => trace.s_t += 1,
            StepState::Tang => {}
        }
        trace.radii.push(r_u);
        trace.steps.push(StepRecord {
            u,
            state,
            forced: forced.is_some(),
            radius: r_u,
            terms,
            cells,
            ledger,
            retained_fraction,
            subsets_exhaustive: exhaustive,
            vacuous_tangent: vacuous,
        });
        if degenerate {
            trace.degenerate = true;
            trace.stop = StopReason::Degenerate;
            break;
        }
        if state == StepState::Tang {
            trace.stop = StopReason::Tangent;
            break;
        }
        if next_live.is_empty() {
            trace.stop = StopReason::Empty;
            break;
        }
        if r_u <= cfg.stop_radius() {
            trace.stop = StopReason::SmallRadius;
            break;
        }
        live = next_live;
    }
    Ok(trace)
}
