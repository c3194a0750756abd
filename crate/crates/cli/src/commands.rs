//! One function per subcommand; each returns a table and optional binary
//! payloads to write next to it.

use anyhow::{bail, Result};
use wplab_core::broad::{bilinear_term, broad_function, broad_narrow_check};
use wplab_core::extension::{extend_points, propagate_on};
use wplab_core::field::{write_dump, FrequencyField, Lattice, SpaceTimeField};
use wplab_core::geometry::{plane_slice_model, slice_wolff_estimate, SliceWolffConfig, Variety};
use wplab_core::partition::{gaussian_mixture, partition, PartitionConfig};
use wplab_core::pseudoconformal::{pseudo_conformal_chain_check, BumpData, ChainConfig, KernelSpec};
use wplab_core::surface::Surface;
use wplab_core::wavepackets::decompose;
use wplab_core::{rng, C64};

use crate::accept;
use crate::config::Config;
use crate::output::{Cell, Table};
use crate::sweep::{period, run_sweep, trial_data};

pub struct Output {
    pub table: Table,
    /// `(file name, bytes)`.
    pub blobs: Vec<(String, Vec<u8>)>,
}

impl From<Table> for Output {
    fn from(table: Table) -> Self {
        Output { table, blobs: Vec::new() }
    }
}

pub fn propagate(cfg: &Config) -> Result<Output> {
    let p = &cfg.params;
    p.validate()?;
    let d = p.n - 1;
    if d > 2 {
        bail!("propagate supports n = 2 and n = 3");
    }
    let r = p.r;
    let per = period(p.alpha, r);
    let mut g = rng::stream(p.seed, 0x5052);
    let ghat = trial_data(cfg.sweep.data_family, p.alpha, d, r, per, &mut g);
    let nt = cfg.times.max(2);
    let times: Vec<f64> = (0..nt).map(|i| r / 2.0 + (r / 2.0) * i as f64 / (nt - 1) as f64).collect();
    let h = 0.25;
    let m = (2.0 * r / h) as usize + 1;
    let x = Lattice::new(vec![-r; d], vec![h; d], vec![m; d]);
    let ev = propagate_on(&ghat, p.alpha, &times, &x)?;
    let mut t = Table::new(&["t", "l2_norm_box", "max_abs", "lp_norm_box"]);
    for (i, &ti) in times.iter().enumerate() {
        let s = &ev.slices[i];
        let mx = s.iter().map(|v| v.norm()).fold(0.0, f64::max);
        let lp = (s.iter().map(|v| v.norm().powf(p.p)).sum::<f64>() * x.cell_volume()).powf(1.0 / p.p);
        t.push(vec![ti.into(), ev.l2_norm(i).into(), mx.into(), lp.into()]);
    }
    // Space-time block with t as the last axis.
    let mut lat = x.clone();
    lat.origin.push(times[0]);
    lat.spacing.push(times[1] - times[0]);
    lat.dims.push(nt);
    let mut values = vec![C64::new(0.0, 0.0); x.len() * nt];
    for (it, s) in ev.slices.iter().enumerate() {
        for (k, v) in s.iter().enumerate() {
            values[k * nt + it] = *v;
        }
    }
    let mut bytes = Vec::new();
    write_dump(&mut bytes, p.n, &SpaceTimeField { lattice: lat, values })?;
    Ok(Output { table: t, blobs: vec![("propagate.bin".into(), bytes)] })
}

pub fn wavepacket(cfg: &Config) -> Result<Output> {
    let p = &cfg.params;
    p.validate()?;
    let f = FrequencyField::plane_waves(p.seed, p.n - 1, cfg.spacing, 0.9, 5, 30.0);
    let set = decompose(&f, &Surface::Paraboloid, p.r, p.delta, &vec![0.0; p.n])?;
    let mut t = Table::new(&["cap", "cap_center", "v_index", "energy", "nonempty"]);
    for en in &set.entries {
        let c = set.cover.cap(en.cap).center;
        let cs: Vec<String> = c.iter().map(|v| format!("{v:?}")).collect();
        let vs: Vec<String> = en.v_index.iter().map(|v| v.to_string()).collect();
        t.push(vec![en.cap.into(), cs.join(" ").into(), vs.join(" ").into(), en.energy.into(), en.nonempty.into()]);
    }
    Ok(t.into())
}

pub fn partition_cmd(cfg: &Config) -> Result<Output> {
    let p = &cfg.params;
    p.validate()?;
    let pts = gaussian_mixture(p.seed, p.n, p.r, cfg.samples, 3);
    let w = vec![1.0; pts.len()];
    let pc = PartitionConfig::new(p.d_budget as u32, vec![0.0; p.n], p.r, p.r.powf(0.5 + p.delta), p.seed);
    let (poly, cs) = partition(&pts, &w, &pc)?;
    let mut t = Table::new(&["signs", "mass", "radius", "retained", "center", "degree"]);
    for c in &cs.cells {
        let center: Vec<String> = c.center.iter().map(|v| format!("{v:?}")).collect();
        t.push(vec![(c.signs as i64).into(), c.mass.into(), c.radius.into(), c.retained.into(), center.join(" ").into(), (poly.total_degree() as usize).into()]);
    }
    t.push(vec!["wall".into(), cs.wall_mass.into(), cs.wall_width.into(), Cell::Empty, Cell::Empty, (poly.total_degree() as usize).into()]);
    Ok(t.into())
}

pub fn broad(cfg: &Config) -> Result<Output> {
    let p = &cfg.params;
    p.validate()?;
    if p.n != 3 {
        bail!("broad runs with n = 3");
    }
    let f = FrequencyField::plane_waves(p.seed, 2, 1.0 / 32.0, 1.0, 6, 8.0);
    let mut g = rng::stream(p.seed, 0x4252);
    let pts: Vec<Vec<f64>> = (0..cfg.points).map(|_| (0..3).map(|_| rng::uniform(&mut g, -8.0, 8.0)).collect()).collect();
    let alpha = (p.k as f64).powf(-p.eps);
    let s = Surface::Paraboloid;
    let ef = extend_points(&f, &s, &pts)?;
    let br = broad_function(&f, &s, alpha, p.k, &pts)?;
    let bil = if p.k >= 4 { Some(bilinear_term(&f, &s, p.k, &pts)?) } else { None };
    let excess = broad_narrow_check(&f, &s, alpha, p.k, &pts)?;
    let mut t = Table::new(&["x1", "x2", "x3", "abs_ef", "broad", "bilinear", "excess"]);
    for (i, x) in pts.iter().enumerate() {
        t.push(vec![x[0].into(), x[1].into(), x[2].into(), ef[i].norm().into(), br[i].into(), bil.as_ref().map(|b| b[i]).into(), excess.into()]);
    }
    Ok(t.into())
}

pub fn wolff(cfg: &Config) -> Result<Output> {
    let p = &cfg.params;
    let r = cfg.small_r;
    let s = match cfg.variety.as_str() {
        "plane" => Variety::plane(&[1.0, 0.0, 0.0], 0.0),
        "sphere" => Variety::sphere(&[0.0; 3], r / 2.0),
        "saddle" => Variety::saddle(r),
        v => bail!("unknown variety `{v}` (plane, sphere, saddle)"),
    };
    let wc = SliceWolffConfig::new(p.r, r, p.delta, cfg.samples, p.seed);
    let est = slice_wolff_estimate(&s, &wc)?;
    let model: Cell = if cfg.variety == "plane" { plane_slice_model(p.r, r, p.delta).into() } else { Cell::Empty };
    let mut t = Table::new(&["variety", "small_r", "big_r", "delta", "area", "std_error", "bound_ratio", "small_tubes", "fat_fraction", "plane_model"]);
    t.push(vec![
        cfg.variety.clone().into(),
        r.into(),
        p.r.into(),
        p.delta.into(),
        est.area.into(),
        est.std_error.into(),
        est.bound_ratio.into(),
        est.small_tubes.into(),
        est.fat_fraction.into(),
        model,
    ]);
    Ok(t.into())
}

pub fn pconf(cfg: &Config) -> Result<Output> {
    let p = &cfg.params;
    let spec = KernelSpec::new(p.alpha, p.n)?;
    let f = BumpData::seeded(p.seed, p.n - 1, 3, p.r / 2.0, 1.5);
    let cc = ChainConfig { p: p.p, seed: p.seed, norm_samples: cfg.points.max(1) * 2, ..Default::default() };
    let rep = pseudo_conformal_chain_check(&f, p.r, &spec, &cc)?;
    let mut t = Table::new(&["check", "value", "contract", "pass"]);
    for l in &rep.lines {
        t.push(vec![l.name.clone().into(), l.value.into(), l.contract.clone().into(), l.pass.into()]);
    }
    Ok(t.into())
}

pub fn sweep(cfg: &Config) -> Result<Output> {
    let tab = run_sweep(&cfg.sweep)?;
    let pe = tab.predicted_exponent();
    let mut t = Table::new(&["kind", "r", "trial", "value", "norm_u", "norm_g", "predicted_exponent", "note"]);
    for row in &tab.trials {
        t.push(vec!["trial".into(), row.r.into(), row.trial.into(), row.ratio.into(), row.norm_u.into(), row.norm_g.into(), pe.into(), Cell::Empty]);
    }
    for row in &tab.radii {
        t.push(vec!["max".into(), row.r.into(), Cell::Empty, row.max_ratio.into(), Cell::Empty, Cell::Empty, row.predicted_exponent.into(), row.skipped.clone().into()]);
    }
    t.push(vec!["slope".into(), Cell::Empty, Cell::Empty, tab.slope.into(), Cell::Empty, Cell::Empty, pe.into(), Cell::Empty]);
    Ok(t.into())
}

/// Runs a suite; the table lists every report line.
pub fn accept_cmd(cfg: &Config, suite_name: &str) -> Result<(Output, Vec<accept::CriterionReport>)> {
    let Some(ids) = accept::suite(suite_name) else {
        let names: Vec<&str> = accept::SUITES.iter().map(|(n, _)| *n).collect();
        bail!("unknown suite `{suite_name}` (one of {})", names.join(", "));
    };
    let reports: Vec<accept::CriterionReport> = ids.iter().map(|&id| accept::run_criterion(id, cfg.seed())).collect();
    let mut t = Table::new(&["criterion", "name", "pass", "line"]);
    for r in &reports {
        for l in &r.lines {
            t.push(vec![(r.id as usize).into(), r.name.into(), r.pass.into(), l.clone().into()]);
        }
    }
    Ok((t.into(), reports))
}

/// Runs `f` on a pool of `threads` workers (or inline without `parallel`).
pub fn with_threads<T: Send>(threads: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T> {
    #[cfg(feature = "parallel")]
    {
        if let Some(k) = threads {
            let pool = rayon::ThreadPoolBuilder::new().num_threads(k).build()?;
            return Ok(pool.install(f));
        }
    }
    #[cfg(not(feature = "parallel"))]
    let _ = threads;
    Ok(f())
}
