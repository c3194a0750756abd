//! Acceptance suite: one check per criterion, grouped into named suites.
//!
//! Reports hold measured values only, never timings, so two runs with the
//! same seed can be compared byte for byte.

use std::fmt;

use num_rational::Ratio;
use wplab_core::broad::{bilinear_term, broad_function, broad_narrow_check, BadStripFamily, CapGrid, Line};
use wplab_core::extension::{extend_points, parabolic_rescaling_check};
use wplab_core::field::{FrequencyField, Lattice};
use wplab_core::geometry::{admissible_union, p_k_exponent, plane_slice_model, slice_wolff_from_union, SliceWolffConfig, Variety};
use wplab_core::iteration::wall_broad_check;
use wplab_core::params::critical_exponent_raw;
use wplab_core::partition::{check_cell_crossing, gaussian_mixture, partition, PartitionConfig};
use wplab_core::poly::Poly;
use wplab_core::profile::bump_pu;
use wplab_core::pseudoconformal::{phase_gradient, pseudo_conformal_chain_check, stationary_phase_check, stationary_point, BumpData, ChainConfig, KernelSpec};
use wplab_core::surface::Surface;
use wplab_core::wavepackets::{decompose, packet_extension_decay};
use wplab_core::{rng, Result, C64};

use crate::sweep::{run_sweep, DataFamily, SweepConfig};

pub type BetaFn = fn(f64, usize, f64) -> f64;

#[derive(Clone, Debug, PartialEq)]
pub struct CriterionReport {
    pub id: u32,
    pub name: &'static str,
    pub pass: bool,
    pub lines: Vec<String>,
}

impl fmt::Display for CriterionReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "criterion {:>2} {:<22} {}", self.id, self.name, if self.pass { "PASS" } else { "FAIL" })?;
        for l in &self.lines {
            writeln!(f, "    {l}")?;
        }
        Ok(())
    }
}

/// Collects named checks for one criterion.
struct Checks {
    pass: bool,
    lines: Vec<String>,
}

impl Checks {
    fn new() -> Self {
        Checks { pass: true, lines: Vec::new() }
    }

    fn check(&mut self, ok: bool, line: String) {
        self.pass &= ok;
        self.lines.push(format!("{} {line}", if ok { "ok  " } else { "FAIL" }));
    }

    fn note(&mut self, line: String) {
        self.lines.push(format!("     {line}"));
    }

    fn finish(self, id: u32, name: &'static str) -> CriterionReport {
        CriterionReport { id, name, pass: self.pass, lines: self.lines }
    }
}

fn guarded(id: u32, name: &'static str, body: impl FnOnce(&mut Checks) -> Result<()>) -> CriterionReport {
    let mut c = Checks::new();
    if let Err(e) = body(&mut c) {
        c.check(false, format!("error: {e}"));
    }
    c.finish(id, name)
}

pub const CRITERIA: &[(u32, &str)] = &[
    (1, "exponents"),
    (2, "packet_decomposition"),
    (3, "tube_localization"),
    (4, "parabolic_rescaling"),
    (5, "partitioning"),
    (6, "broad_narrow"),
    (7, "bad_lines"),
    (8, "slice_wolff"),
    (9, "pseudo_conformal"),
    (10, "local_smoothing_sweep"),
];

/// Suite names and the criteria they run, in documented order.
pub const SUITES: &[(&str, &[u32])] = &[
    ("exponents", &[1]),
    ("packets", &[2, 3, 4]),
    ("partition", &[5]),
    ("broad", &[6, 7]),
    ("wolff", &[8]),
    ("pconf", &[9]),
    ("sweep", &[10]),
    ("all", &[1, 2, 3, 4, 5, 6, 7, 8, 9, 10]),
];

pub fn suite(name: &str) -> Option<&'static [u32]> {
    SUITES.iter().find(|(n, _)| *n == name).map(|(_, ids)| *ids)
}

pub fn run_criterion(id: u32, seed: u64) -> CriterionReport {
    match id {
        1 => exponents(critical_exponent_raw),
        2 => packet_decomposition(seed),
        3 => tube_localization(seed),
        4 => parabolic_rescaling(seed),
        5 => partitioning(seed),
        6 => broad_narrow(seed),
        7 => bad_lines(seed),
        8 => slice_wolff(seed),
        9 => pseudo_conformal(seed),
        10 => local_smoothing_sweep(seed),
        _ => panic!("no criterion {id}"),
    }
}

/// Criterion 1, with the critical exponent passed in so a corrupted formula
/// can be fed through the same check.
pub fn exponents(beta: BetaFn) -> CriterionReport {
    guarded(1, "exponents", |c| {
        let b = beta(2.0, 3, 4.0);
        c.check((b - 0.5).abs() <= 1e-15, format!("beta_c(2,3,4) = {b:?}, want 1/2"));
        let b = beta(2.0, 3, 13.0 / 4.0);
        c.check((b - 2.0 / 13.0).abs() <= 1e-15, format!("beta_c(2,3,13/4) = {b:?}, want 2/13"));
        let mut worst: f64 = 0.0;
        for n in 3..=6 {
            for a in [0.5, 2.0, 3.0] {
                worst = worst.max(beta(a, n, 2.0 * n as f64 / (n as f64 - 1.0)).abs());
            }
        }
        c.check(worst <= 1e-15, format!("max |beta_c(p = 2n/(n-1))| = {worst:?}, want 0"));
        let p3 = p_k_exponent(3, 2)?;
        c.check(p3 == Ratio::new(13, 4), format!("p_3(2) = {p3}, want 13/4"));
        for n in 3..=5usize {
            let vals: Vec<Ratio<i128>> = (2..n).map(|k| p_k_exponent(n, k)).collect::<Result<_>>()?;
            let dec = vals.windows(2).all(|w| w[1] < w[0]);
            let shown: Vec<String> = vals.iter().map(|v| v.to_string()).collect();
            c.check(dec, format!("p_{n}(k), k = 2..{}: {} strictly decreasing", n - 1, shown.join(" > ")));
        }
        Ok(())
    })
}

fn packet_decomposition(seed: u64) -> CriterionReport {
    guarded(2, "packet_decomposition", |c| {
        let (r, delta, h) = (256.0, 0.05, 1.0 / 256.0);
        let (mut resid, mut energy, mut escaped, mut packets) = (0.0f64, 0.0f64, 0usize, 0usize);
        for s in 0..20 {
            let f = FrequencyField::plane_waves(seed.wrapping_add(s), 2, h, 0.9, 5, 30.0);
            let set = decompose(&f, &Surface::Paraboloid, r, delta, &[0.0; 3])?;
            resid = resid.max(set.reconstruction_residual());
            energy = energy.max(set.energy_sum() / f.l2_norm().powi(2));
            packets += set.len();
            let sc = set.cover.s;
            let caps: std::collections::BTreeSet<usize> = set.entries.iter().map(|e| e.cap).collect();
            for &cap in &caps {
                let lat = set.window_lattice(cap);
                let center = set.cover.cap(cap).center;
                let inside = (0..2).all(|k| lat.lo()[k] >= center[k] - 2.0 * sc - 1e-12 && lat.hi()[k] < center[k] + 2.0 * sc);
                escaped += usize::from(!inside);
            }
            // Materialized packets: every nonzero sample inside 2 theta.
            for i in (0..set.len()).step_by(211) {
                let p = set.materialize(i);
                let center = set.cover.cap(set.entries[i].cap).center;
                for (j, v) in p.values.iter().enumerate() {
                    if v.norm_sqr() > 0.0 {
                        let xi = p.lattice.node(j);
                        if (0..2).any(|k| (xi[k] - center[k]).abs() > 2.0 * sc + 1e-12) {
                            escaped += 1;
                        }
                    }
                }
            }
        }
        c.note(format!("20 seeds, n = 3, r = 256, delta = 0.05, h = 1/256, {packets} packets"));
        c.check(resid <= 1e-3, format!("max relative L2 residual {resid:.3e} <= 1e-3"));
        c.check(escaped == 0, format!("samples or windows outside 2 theta: {escaped}"));
        c.check(energy <= 10.0, format!("max sum ||f_T||^2 / ||f||^2 = {energy:.6} <= 10"));
        Ok(())
    })
}

fn tube_localization(seed: u64) -> CriterionReport {
    guarded(3, "tube_localization", |c| {
        let mut ratios = Vec::new();
        for r in [64.0, 128.0, 256.0, 512.0] {
            let f = FrequencyField::plane_waves(seed, 2, 1.0 / (4.0 * r), 0.3, 5, 30.0);
            let set = decompose(&f, &Surface::Paraboloid, r, 0.05, &[0.0; 3])?;
            let top = set.entries.iter().map(|e| e.energy).fold(0.0, f64::max);
            let mut pool: Vec<usize> = (0..set.len()).filter(|&i| set.entries[i].nonempty && set.entries[i].energy >= 1e-3 * top).collect();
            let mut g = rng::stream(seed, 0x7433);
            for i in (1..pool.len()).rev() {
                let j = (rng::uniform(&mut g, 0.0, (i + 1) as f64) as usize).min(i);
                pool.swap(i, j);
            }
            pool.truncate(10);
            let per: Vec<Result<(f64, f64)>> = wplab_core::par::map_slice(&pool, |&i| packet_extension_decay(&set, i));
            let mut worst: f64 = 0.0;
            for v in per {
                let (inside, outside) = v?;
                if inside > 0.0 {
                    worst = worst.max(outside / inside);
                }
            }
            c.check(worst <= 1.0 / r, format!("r = {r}: max sup_(B_r - 2T) / sup_T = {worst:.4e} <= 1/r = {:.4e} ({} packets)", 1.0 / r, pool.len()));
            ratios.push(worst);
        }
        let mono = ratios.windows(2).all(|w| w[1] <= w[0]);
        c.check(mono, format!("ratio non-increasing in r: {}", ratios.iter().map(|v| format!("{v:.4e}")).collect::<Vec<_>>().join(", ")));
        Ok(())
    })
}

fn parabolic_rescaling(seed: u64) -> CriterionReport {
    guarded(4, "parabolic_rescaling", |c| {
        let mut g = rng::stream(seed, 0x7044);
        for k in [2.0, 4.0, 8.0] {
            let grid = CapGrid::new(k as usize, 2)?;
            let cap = (rng::uniform(&mut g, 0.0, grid.len() as f64) as usize).min(grid.len() - 1);
            let center = grid.center(cap);
            let half = 0.5 / k;
            let phase: Vec<f64> = (0..2).map(|_| rng::uniform(&mut g, -4.0, 4.0)).collect();
            let f = FrequencyField::from_fn(Lattice::through_zero(&[-1.0, -1.0], &[1.0, 1.0], 1.0 / 128.0), |p| {
                let u = [(p[0] - center[0]) / half, (p[1] - center[1]) / half];
                let b = bump_pu(u[0]) * bump_pu(u[1]);
                if b == 0.0 {
                    C64::new(0.0, 0.0)
                } else {
                    wplab_core::e(phase[0] * p[0] + phase[1] * p[1]) * b
                }
            });
            let pts: Vec<Vec<f64>> = (0..100).map(|_| (0..3).map(|_| rng::uniform(&mut g, -8.0, 8.0)).collect()).collect();
            let err = parabolic_rescaling_check(&f, &center, k, &pts)?;
            c.check(err <= 1e-6, format!("K = {k}: max relative error {err:.3e} over 100 points <= 1e-6"));
        }
        Ok(())
    })
}

fn partitioning(seed: u64) -> CriterionReport {
    guarded(5, "partitioning", |c| {
        let radius: f64 = 1024.0;
        let wall = radius.powf(0.51);
        let (mut ratio, mut cells_over, mut radius_over, mut crossing_over, mut degenerate) = (0.0f64, 0usize, 0usize, 0usize, 0usize);
        let mut worst_ratio_at = (0, 0);
        for s in 0..50u64 {
            let pts = gaussian_mixture(seed.wrapping_add(s), 3, radius, 100_000, 3);
            let w = vec![1.0; pts.len()];
            for d in [2u32, 3, 4] {
                let cfg = PartitionConfig::new(d, vec![0.0; 3], radius, wall, seed.wrapping_add(s));
                let (p, cs) = partition(&pts, &w, &cfg)?;
                degenerate += usize::from(cs.degenerate);
                let rr = cs.retained_ratio();
                if rr > ratio {
                    ratio = rr;
                    worst_ratio_at = (s, d);
                }
                cells_over += usize::from(cs.nonempty() > 8 * (d as usize).pow(3));
                radius_over += usize::from(cs.max_radius() > 2.0 * radius / d as f64 * (1.0 + 1e-12));
                let mut g = rng::substream(seed, 0x7035, s * 8 + d as u64);
                let ball = |g: &mut rng::LabRng| loop {
                    let x: Vec<f64> = (0..3).map(|_| rng::uniform(g, -radius, radius)).collect();
                    if x.iter().map(|v| v * v).sum::<f64>() <= radius * radius {
                        return x;
                    }
                };
                for _ in 0..100 {
                    let (a, b) = (ball(&mut g), ball(&mut g));
                    if check_cell_crossing(&a, &b, &p, 2000) > p.total_degree() as usize + 1 {
                        crossing_over += 1;
                    }
                }
            }
        }
        c.note(format!("50 mixtures of 1e5 points in B_1024, D in {{2,3,4}}, wall width R^0.51; degenerate partitions: {degenerate}"));
        c.check(ratio <= 2.05, format!("max retained-cell mass ratio {ratio:.4} <= 2.05 (seed offset {}, D = {})", worst_ratio_at.0, worst_ratio_at.1));
        c.check(cells_over == 0, format!("partitions with more than 8 D^3 nonempty cells: {cells_over}"));
        c.check(radius_over == 0, format!("partitions with a cell radius above 2R/D: {radius_over}"));
        c.check(crossing_over == 0, format!("random tubes visiting more than deg(P) + 1 cells: {crossing_over} of 15000"));
        Ok(())
    })
}

fn one_cap(grid: &CapGrid, cap: usize, h: f64) -> FrequencyField {
    let center = grid.center(cap);
    let half = 0.5 / grid.k as f64;
    FrequencyField::from_fn(Lattice::through_zero(&[-1.0, -1.0], &[1.0, 1.0], h), |p| {
        let u = [(p[0] - center[0]) / half, (p[1] - center[1]) / half];
        C64::new(1.0, u[0]) * bump_pu(u[0]) * bump_pu(u[1])
    })
}

fn cube_points(g: &mut rng::LabRng, count: usize, half: f64) -> Vec<Vec<f64>> {
    (0..count).map(|_| (0..3).map(|_| rng::uniform(g, -half, half)).collect()).collect()
}

fn broad_narrow(seed: u64) -> CriterionReport {
    guarded(6, "broad_narrow", |c| {
        let s = Surface::Paraboloid;
        let h = 1.0 / 32.0;
        let mut g = rng::stream(seed, 0x7066);
        let pts = cube_points(&mut g, 200, 8.0);
        let mut worst = f64::NEG_INFINITY;
        for i in 0..20 {
            let f = FrequencyField::plane_waves(seed.wrapping_add(i), 2, h, 1.0, 6, 8.0);
            worst = worst.max(broad_narrow_check(&f, &s, 0.5, 4, &pts)?);
        }
        c.check(worst <= 1e-12, format!("max relative broad/narrow excess over 20 seeds {worst:.3e} <= 1e-12"));
        let grid = CapGrid::new(4, 2)?;
        let cap = (rng::uniform(&mut g, 0.0, 64.0) as usize).min(63);
        let single = broad_function(&one_cap(&grid, cap, h), &s, 0.5, 4, &pts)?;
        let nz = single.iter().filter(|v| **v != 0.0).count();
        c.check(nz == 0, format!("single cap {cap}: nonzero Br values {nz} of {}", pts.len()));
        // Brute-force double loop over per-cap restricted fields.
        let f = FrequencyField::plane_waves(seed, 2, h, 1.0, 6, 8.0);
        let g8 = CapGrid::new(8, 2)?;
        let few = &pts[..10];
        let got = bilinear_term(&f, &s, 8, few)?;
        let per: Vec<Vec<C64>> = (0..g8.len()).map(|cap| extend_points(&g8.restrict(&f, cap), &s, few)).collect::<Result<_>>()?;
        let mut err: f64 = 0.0;
        for p in 0..few.len() {
            let mut acc = 0.0;
            for a in 0..g8.len() {
                for b in 0..g8.len() {
                    let (ca, cb) = (g8.coords(a), g8.coords(b));
                    if ca[0].abs_diff(cb[0]) > 1 || ca[1].abs_diff(cb[1]) > 1 {
                        acc += per[a][p].norm().sqrt() * per[b][p].norm().sqrt();
                    }
                }
            }
            err = err.max((acc - got[p]).abs() / acc.max(1.0));
        }
        c.check(err <= 1e-12, format!("Bil vs brute-force double loop, K = 8, 10 points: {err:.3e} <= 1e-12"));
        let f = FrequencyField::plane_waves(seed.wrapping_add(2), 2, 1.0 / 256.0, 0.45, 4, 20.0);
        let rep = wall_broad_check(&f, &s, 64.0, &[0.0; 3], 4, 0.4, 2, 0.05, 7, seed)?;
        c.check(
            rep.value <= rep.f_norm / 64.0,
            format!("wall_broad_check R = 64, K = 4: {:.4e} <= ||f||/R = {:.4e} ({} wall points, {} subsets)", rep.value, rep.f_norm / 64.0, rep.wall_points, rep.subsets),
        );
        Ok(())
    })
}

fn bad_lines(seed: u64) -> CriterionReport {
    guarded(7, "bad_lines", |c| {
        let xy = Poly::from_terms(2, vec![(vec![1, 1], 1.0)]);
        let fam = BadStripFamily::new(3, 1e-3, 128.0);
        let horiz = wplab_core::broad::is_bad_line(&xy, &Line { iota: 1, a: 0.0, v: [1.0, 0.0] }, &fam)?.0;
        c.check(horiz, "h = xi1 xi2, direction (1,0): bad".into());
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let diag = wplab_core::broad::is_bad_line(&xy, &Line { iota: 1, a: 0.0, v: [s, s] }, &fam)?.0;
        c.check(!diag, "h = xi1 xi2, direction (1,1)/sqrt 2: not bad".into());
        let eps0 = 1e-3;
        let mut g = rng::stream(seed, 0x7077);
        let (mut trips, mut not_normal, mut bad_seen, mut lines_seen) = (0usize, 0usize, 0usize, 0usize);
        for i in 0..200 {
            let d = if rng::uniform(&mut g, 0.0, 1.0) < 0.5 { 2u32 } else { 3 };
            // Every other polynomial has vanishingly small pure powers so that
            // bad lines actually occur.
            let tiny = if i % 2 == 0 { 1e-22 } else { 1.0 };
            let mut terms = vec![(vec![1, 1], 1.0)];
            terms.push((vec![2, 0], tiny * rng::uniform(&mut g, -eps0, eps0) / 4.0));
            terms.push((vec![0, 2], rng::uniform(&mut g, -eps0, eps0) / 4.0));
            let high = eps0 / (4.0 * 100f64.powi(d as i32) * 7.0);
            for deg in 3..=d {
                for j in 0..=deg {
                    let pure = j == 0;
                    terms.push((vec![deg - j, j], if pure { tiny } else { 1.0 } * rng::uniform(&mut g, -high, high)));
                }
            }
            let h = Poly::from_terms(2, terms);
            if !wplab_core::broad::normal_form_check(&h, d, eps0)? {
                not_normal += 1;
                continue;
            }
            let mut fam = BadStripFamily::new(d, eps0, 128.0);
            fam.spacing = 0.25;
            fam.width = 0.25;
            match fam.lines(&h) {
                Ok(rows) => {
                    lines_seen += rows.len();
                    bad_seen += rows.iter().filter(|r| r.1).count();
                }
                Err(wplab_core::LabError::Inconsistency(_)) => trips += 1,
                Err(e) => return Err(e),
            }
        }
        c.note(format!("200 random normal forms, d in {{2,3}}: {lines_seen} lines, {bad_seen} bad"));
        c.check(not_normal == 0, format!("generated polynomials failing the normal-form bound: {not_normal}"));
        c.check(trips == 0, format!("|c21| >= 1/100 assertion trips: {trips}"));
        Ok(())
    })
}

fn slice_wolff(seed: u64) -> CriterionReport {
    guarded(8, "slice_wolff", |c| {
        let delta = 0.01;
        for name in ["plane", "sphere", "saddle"] {
            for r in [16.0, 64.0] {
                let s = match name {
                    "plane" => Variety::plane(&[1.0, 0.0, 0.0], 0.0),
                    "sphere" => Variety::sphere(&[0.0; 3], r / 2.0),
                    _ => Variety::saddle(r),
                };
                let u = admissible_union(&s, &[0.0; 3], r, delta)?;
                for big in [256.0, 1024.0] {
                    let est = slice_wolff_from_union(&u, &SliceWolffConfig::new(big, r, delta, 2000, seed))?;
                    c.check(
                        est.bound_ratio <= 50.0,
                        format!("{name} r = {r} R = {big}: area {:.4e} +- {:.1e}, bound ratio {:.3} <= 50 ({} tubes)", est.area, est.std_error, est.bound_ratio, est.small_tubes),
                    );
                    if name == "plane" {
                        let model = plane_slice_model(big, r, delta);
                        let rel = est.area / model - 1.0;
                        c.check(rel.abs() <= 0.15, format!("plane r = {r} R = {big}: analytic slab area {model:.4e}, relative gap {rel:+.4} within 15%"));
                    }
                }
            }
        }
        Ok(())
    })
}

fn pseudo_conformal(seed: u64) -> CriterionReport {
    guarded(9, "pseudo_conformal", |c| {
        let spec = KernelSpec::new(2.0, 3)?;
        let (mut ident, mut resc, mut out_band) = (0.0f64, 0.0f64, 0usize);
        let (mut lo, mut hi) = (f64::INFINITY, 0.0f64);
        for big in [16.0, 32.0] {
            for s in 0..10 {
                let f = BumpData::seeded(seed.wrapping_add(s), 2, 3, big / 2.0, 1.5);
                let cfg = ChainConfig { seed: seed.wrapping_add(s), ..Default::default() };
                let rep = pseudo_conformal_chain_check(&f, big, &spec, &cfg)?;
                ident = ident.max(rep.identity_error);
                resc = resc.max(rep.rescaling_error);
                out_band += usize::from(!(rep.ratio >= rep.band.0 && rep.ratio <= rep.band.1));
                lo = lo.min(rep.ratio);
                hi = hi.max(rep.ratio);
            }
        }
        let band = (2f64.powf(-1.0) / 4.0, 4.0 * 2f64.powf(1.0));
        c.check(ident <= 1e-8, format!("Tf(x,t) = T~f(x/t,1/t): max normwise error {ident:.3e} <= 1e-8"));
        c.check(resc <= 1e-6, format!("T~ vs E_R rescaling: max normwise error {resc:.3e} <= 1e-6"));
        c.check(out_band == 0, format!("norm ratios in [{lo:.4}, {hi:.4}], band [{:.4}, {:.4}], outside: {out_band} of 20", band.0, band.1));
        let ts: Vec<f64> = [2.0, 2.5, 3.0, 3.5, 4.0].iter().map(|k| 10f64.powf(*k)).collect();
        let sp = stationary_phase_check(&[2.0, 0.0], &ts, &spec)?;
        c.check(sp.slope <= -1.4, format!("stationary phase remainder slope {:.4} <= -1.4 (main term slope {:.4})", sp.slope, sp.main_slope));
        let mut g = rng::stream(seed, 0x7099);
        let mut worst: f64 = 0.0;
        for _ in 0..100 {
            let d = 1 + (rng::uniform(&mut g, 0.0, 3.0) as usize).min(2);
            let xt: Vec<f64> = (0..d).map(|_| rng::uniform(&mut g, -2.0, 2.0)).collect();
            let a = [0.5, 0.8, 1.5, 2.0, 3.0][(rng::uniform(&mut g, 0.0, 5.0) as usize).min(4)];
            let xc = stationary_point(&xt, a)?;
            let grad = phase_gradient(&xc, &xt, a);
            worst = worst.max(grad.iter().map(|v| v * v).sum::<f64>().sqrt());
        }
        c.check(worst <= 1e-12, format!("max |grad phi(xi_c)| over 100 inputs {worst:.3e} <= 1e-12"));
        Ok(())
    })
}

fn local_smoothing_sweep(seed: u64) -> CriterionReport {
    guarded(10, "local_smoothing_sweep", |c| {
        for alpha in [0.5, 2.0, 3.0] {
            let cfg = SweepConfig { alpha, n: 2, p: 4.0, data_family: DataFamily::Chirped, trials_per_r: 8, seed, ..Default::default() };
            let t = run_sweep(&cfg)?;
            let bound = t.predicted_exponent() + 0.15;
            let maxes: Vec<String> = t.radii.iter().map(|r| format!("{}:{:.4}", r.r, r.max_ratio.unwrap_or(f64::NAN))).collect();
            match t.slope {
                Some(s) => c.check(s <= bound, format!("alpha = {alpha}: fitted slope {s:.4} <= {bound:.2}; max ratios {}", maxes.join(" "))),
                None => c.check(false, format!("alpha = {alpha}: fewer than two feasible radii")),
            }
        }
        Ok(())
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn corrupted(alpha: f64, n: usize, p: f64) -> f64 {
        let m = (n - 1) as f64;
        alpha * (m * (0.5 - 1.0 / p) - 2.0 / p)
    }

    #[test]
    fn exponents_pass_and_mutation_fails() {
        let good = exponents(critical_exponent_raw);
        assert!(good.pass, "{good}");
        let bad = exponents(corrupted);
        assert!(!bad.pass);
        assert!(bad.to_string().contains("criterion  1 exponents"));
        assert!(bad.lines.iter().any(|l| l.starts_with("FAIL beta_c(2,3,4)")));
    }

    #[test]
    fn suites_cover_every_criterion_in_order() {
        assert_eq!(suite("all").unwrap(), &[1, 2, 3, 4, 5, 6, 7, 8, 9, 10]);
        assert!(suite("nope").is_none());
        let mut seen: Vec<u32> = SUITES.iter().filter(|(n, _)| *n != "all").flat_map(|(_, ids)| ids.iter().copied()).collect();
        seen.sort();
        assert_eq!(seen, (1..=10).collect::<Vec<_>>());
    }

    #[test]
    fn rescaling_and_bad_lines_pass() {
        assert!(run_criterion(4, 0).pass);
        let r = run_criterion(7, 0);
        assert!(r.pass, "{r}");
    }
}
