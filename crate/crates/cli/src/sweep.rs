//! Dyadic-R sweeps of `||u||_{L^p(B_R x [R/2, R])} / ||g||_{L^p}` for the
//! fractional propagator, with a least-squares growth exponent.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use wplab_core::extension::propagate_on;
use wplab_core::field::{FrequencyField, Lattice};
use wplab_core::params::smoothing_exponent;
use wplab_core::profile::{annulus_cutoff, bump_pu};
use wplab_core::quad::loglog_slope;
use wplab_core::{e, par, rng, LabError, Result, C64};

/// Frequency-lattice nodes allowed per trial.
pub const NODE_BUDGET: usize = 1 << 22;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataFamily {
    RandomBandlimited,
    SinglePacket,
    Chirped,
}

impl FromStr for DataFamily {
    type Err = LabError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "random_bandlimited" => Ok(DataFamily::RandomBandlimited),
            "single_packet" => Ok(DataFamily::SinglePacket),
            "chirped" => Ok(DataFamily::Chirped),
            _ => Err(LabError::Parameter(format!("unknown data family {s}"))),
        }
    }
}

impl fmt::Display for DataFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DataFamily::RandomBandlimited => "random_bandlimited",
            DataFamily::SinglePacket => "single_packet",
            DataFamily::Chirped => "chirped",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepConfig {
    pub r_list: Vec<f64>,
    pub alpha: f64,
    pub n: usize,
    pub p: f64,
    pub data_family: DataFamily,
    pub trials_per_r: usize,
    pub seed: u64,
    /// Stratified time samples per trial.
    pub time_strata: usize,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            r_list: (4..=10).map(|k| 2f64.powi(k)).collect(),
            alpha: 2.0,
            n: 2,
            p: 4.0,
            data_family: DataFamily::Chirped,
            trials_per_r: 8,
            seed: 0,
            time_strata: 128,
        }
    }
}

impl SweepConfig {
    pub fn validate(&self) -> Result<()> {
        if self.r_list.is_empty() || self.r_list.windows(2).any(|w| w[1] <= w[0]) {
            return Err(LabError::Parameter("r_list must be nonempty and strictly increasing".into()));
        }
        if self.r_list.iter().any(|r| *r < 1.0 || r.log2().fract() != 0.0) {
            return Err(LabError::Parameter("r_list entries must be dyadic and at least 1".into()));
        }
        if self.trials_per_r == 0 || self.time_strata == 0 {
            return Err(LabError::Parameter("trials_per_r and time_strata must be positive".into()));
        }
        if !(2..=3).contains(&self.n) {
            return Err(LabError::Parameter("sweeps support n = 2 and n = 3".into()));
        }
        if !(self.alpha > 0.0) || self.alpha == 1.0 {
            return Err(LabError::Parameter("alpha must be positive and not 1".into()));
        }
        if !(self.p >= 2.0) || self.p.is_infinite() {
            return Err(LabError::Parameter("p must be finite and at least 2".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialRow {
    pub r: f64,
    pub trial: usize,
    pub ratio: f64,
    pub norm_u: f64,
    pub norm_g: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RadiusRow {
    pub r: f64,
    pub max_ratio: Option<f64>,
    pub predicted_exponent: f64,
    pub skipped: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepTable {
    pub config: SweepConfig,
    pub trials: Vec<TrialRow>,
    pub radii: Vec<RadiusRow>,
    /// Fitted exponent of the max ratio against `R`; `None` with fewer
    /// than two usable radii.
    pub slope: Option<f64>,
}

impl SweepTable {
    pub fn predicted_exponent(&self) -> f64 {
        smoothing_exponent(self.config.n, self.config.p)
    }
}

/// Largest group velocity `alpha |xi|^{alpha-1}` on `1/2 <= |xi| <= 2`.
fn max_speed(alpha: f64) -> f64 {
    alpha * 0.5f64.powf(alpha - 1.0).max(2f64.powf(alpha - 1.0))
}

/// Period of the computational box: the data and the evolution over
/// `[0, R]` stay well inside one period.
pub fn period(alpha: f64, r: f64) -> f64 {
    let need = 2.5 * (max_speed(alpha) + 1.0) * r;
    2f64.powi(need.log2().ceil() as i32)
}

fn frequency_lattice(d: usize, period: f64) -> Lattice {
    let m = (4.0 * period) as usize;
    Lattice::new(vec![-2.0; d], vec![1.0 / period; d], vec![m; d])
}

/// Initial data on the annulus for one trial.
pub fn trial_data(family: DataFamily, alpha: f64, d: usize, r: f64, period: f64, g: &mut rng::LabRng) -> FrequencyField {
    let lat = frequency_lattice(d, period);
    let point_in_ball = |g: &mut rng::LabRng, rad: f64| loop {
        let x: Vec<f64> = (0..d).map(|_| rng::uniform(g, -rad, rad)).collect();
        if x.iter().map(|v| v * v).sum::<f64>() <= rad * rad {
            return x;
        }
    };
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
    let radius = |p: &[f64]| p.iter().map(|v| v * v).sum::<f64>().sqrt();
    match family {
        DataFamily::Chirped => {
            let x0 = point_in_ball(g, r);
            let t0 = rng::uniform(g, r / 2.0, r);
            FrequencyField::from_fn(lat, |p| {
                let rho = radius(p);
                let c = annulus_cutoff(rho);
                if c == 0.0 {
                    return C64::new(0.0, 0.0);
                }
                e(-t0 * rho.powf(alpha) - dot(&x0, p)) * c
            })
        }
        DataFamily::RandomBandlimited => {
            let waves: Vec<(Vec<f64>, C64)> = (0..8).map(|_| (point_in_ball(g, r), rng::complex_normal(g))).collect();
            FrequencyField::from_fn(lat, |p| {
                let c = annulus_cutoff(radius(p));
                if c == 0.0 {
                    return C64::new(0.0, 0.0);
                }
                waves.iter().map(|(y, k)| k * e(-dot(y, p))).sum::<C64>() * c
            })
        }
        DataFamily::SinglePacket => {
            let xi0 = loop {
                let xi = point_in_ball(g, 1.5);
                if radius(&xi) >= 0.75 {
                    break xi;
                }
            };
            let x0 = point_in_ball(g, r);
            let s = r.sqrt();
            FrequencyField::from_fn(lat, |p| {
                let b: f64 = p.iter().zip(&xi0).map(|(a, c)| bump_pu((a - c) * s)).product();
                if b == 0.0 {
                    return C64::new(0.0, 0.0);
                }
                e(-dot(&x0, p)) * (b * annulus_cutoff(radius(p)))
            })
        }
    }
}

fn sum_pow(vals: &[C64], p: f64, ball: Option<(&Lattice, f64)>) -> f64 {
    let terms: Vec<f64> = match ball {
        None => vals.iter().map(|v| v.norm().powf(p)).collect(),
        Some((lat, r)) => vals
            .iter()
            .enumerate()
            .map(|(i, v)| if lat.node(i).iter().map(|x| x * x).sum::<f64>() <= r * r { v.norm().powf(p) } else { 0.0 })
            .collect(),
    };
    par::ordered_sum(&terms)
}

/// One trial: `(||u||_{L^p(B_R x [R/2,R])}, ||g||_{L^p})`. Spatial sums use
/// spacing 1/8, below the Nyquist spacing of `|u|^p` for `p <= 4`; the time
/// integral is stratified Monte Carlo with one sample per stratum.
pub fn trial_norms(cfg: &SweepConfig, r: f64, trial: usize, ridx: u64) -> Result<(f64, f64)> {
    let d = cfg.n - 1;
    let per = period(cfg.alpha, r);
    let mut g = rng::substream(cfg.seed, 0x5357 + ridx, trial as u64);
    let ghat = trial_data(cfg.data_family, cfg.alpha, d, r, per, &mut g);
    let h = 0.125;
    let full = Lattice::new(vec![-per / 2.0; d], vec![h; d], vec![(per / h) as usize; d]);
    let g0 = propagate_on(&ghat, cfg.alpha, &[0.0], &full)?;
    let norm_g = (sum_pow(&g0.slices[0], cfg.p, None) * h.powi(d as i32)).powf(1.0 / cfg.p);
    let m = (2.0 * r / h) as usize + 1;
    let ball = Lattice::new(vec![-r; d], vec![h; d], vec![m; d]);
    let strata = cfg.time_strata;
    let width = r / 2.0 / strata as f64;
    let times: Vec<f64> = (0..strata).map(|s| r / 2.0 + width * (s as f64 + rng::uniform(&mut g, 0.0, 1.0))).collect();
    let per_time: Vec<Result<f64>> = par::map_slice(&times, |&t| {
        let ev = propagate_on(&ghat, cfg.alpha, &[t], &ball)?;
        Ok(sum_pow(&ev.slices[0], cfg.p, Some((&ball, r))))
    });
    let per_time: Vec<f64> = per_time.into_iter().collect::<Result<_>>()?;
    let norm_u = (par::ordered_sum(&per_time) * width * h.powi(d as i32)).powf(1.0 / cfg.p);
    Ok((norm_u, norm_g))
}

/// Why `R` cannot be run within the node budget, if it cannot.
pub fn infeasible(cfg: &SweepConfig, r: f64) -> Option<String> {
    let per = period(cfg.alpha, r);
    let nodes = ((4.0 * per) as usize).checked_pow((cfg.n - 1) as u32).unwrap_or(usize::MAX);
    if nodes > NODE_BUDGET {
        Some(format!("needs {nodes} frequency nodes, budget {NODE_BUDGET}"))
    } else {
        None
    }
}

pub fn run_sweep(cfg: &SweepConfig) -> Result<SweepTable> {
    cfg.validate()?;
    let predicted = smoothing_exponent(cfg.n, cfg.p);
    let jobs: Vec<(usize, usize)> = cfg
        .r_list
        .iter()
        .enumerate()
        .filter(|(_, r)| infeasible(cfg, **r).is_none())
        .flat_map(|(i, _)| (0..cfg.trials_per_r).map(move |t| (i, t)))
        .collect();
    let results: Vec<Result<TrialRow>> = par::map_slice(&jobs, |&(i, t)| {
        let r = cfg.r_list[i];
        let (norm_u, norm_g) = trial_norms(cfg, r, t, i as u64)?;
        Ok(TrialRow { r, trial: t, ratio: norm_u / norm_g, norm_u, norm_g })
    });
    let trials: Vec<TrialRow> = results.into_iter().collect::<Result<_>>()?;
    let radii: Vec<RadiusRow> = cfg
        .r_list
        .iter()
        .map(|&r| {
            let skipped = infeasible(cfg, r);
            let max_ratio = if skipped.is_some() { None } else { trials.iter().filter(|t| t.r == r).map(|t| t.ratio).reduce(f64::max) };
            RadiusRow { r, max_ratio, predicted_exponent: predicted, skipped }
        })
        .collect();
    let (xs, ys): (Vec<f64>, Vec<f64>) = radii.iter().filter_map(|row| row.max_ratio.map(|m| (row.r, m))).unzip();
    let slope = if xs.len() >= 2 { Some(loglog_slope(&xs, &ys)) } else { None };
    Ok(SweepTable { config: cfg.clone(), trials, radii, slope })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(family: DataFamily) -> SweepConfig {
        SweepConfig { r_list: vec![8.0, 16.0], trials_per_r: 2, time_strata: 16, data_family: family, ..Default::default() }
    }

    #[test]
    fn rejects_bad_lists() {
        let mut c = small(DataFamily::Chirped);
        c.r_list = vec![16.0, 8.0];
        assert!(run_sweep(&c).is_err());
        c.r_list = vec![12.0];
        assert!(run_sweep(&c).is_err());
        c.r_list = vec![8.0];
        c.trials_per_r = 0;
        assert!(run_sweep(&c).is_err());
    }

    #[test]
    fn same_seed_same_table() {
        for fam in [DataFamily::Chirped, DataFamily::RandomBandlimited, DataFamily::SinglePacket] {
            let a = run_sweep(&small(fam)).unwrap();
            let b = run_sweep(&small(fam)).unwrap();
            assert_eq!(a, b);
            assert!(a.radii.iter().all(|r| r.predicted_exponent == 0.25));
            assert!(a.trials.iter().all(|t| t.ratio.is_finite() && t.ratio > 0.0));
        }
    }

    /// Independent oracle for the norm of `g`: Plancherel gives the L^2 norm
    /// from the spectrum alone.
    #[test]
    fn l2_norm_of_data_matches_plancherel() {
        let cfg = SweepConfig { p: 2.0, ..small(DataFamily::RandomBandlimited) };
        let r = 16.0;
        let (_, norm_g) = trial_norms(&cfg, r, 0, 1).unwrap();
        let mut g = rng::substream(cfg.seed, 0x5357 + 1, 0);
        let ghat = trial_data(cfg.data_family, cfg.alpha, 1, r, period(cfg.alpha, r), &mut g);
        assert!((norm_g - ghat.l2_norm()).abs() < 1e-9 * norm_g, "{norm_g} {}", ghat.l2_norm());
    }

    /// For `p = 2` the propagator is unitary, so `||u||_{L^2(R x [R/2,R])}^2
    /// = (R/2) ||g||^2`; restricting to the ball can only lose mass.
    #[test]
    fn l2_ratio_below_unitary_bound() {
        let cfg = SweepConfig { p: 2.0, ..small(DataFamily::Chirped) };
        let (u, g) = trial_norms(&cfg, 16.0, 0, 1).unwrap();
        let bound = (8.0f64).sqrt() * g;
        assert!(u <= bound * 1.05, "{u} {bound}");
        assert!(u >= 0.2 * bound, "{u} {bound}");
    }

    #[test]
    fn skips_oversized_radius() {
        let cfg = SweepConfig { r_list: vec![16.0, 256.0], n: 3, trials_per_r: 1, time_strata: 4, ..Default::default() };
        let t = run_sweep(&cfg).unwrap();
        assert!(t.radii[1].skipped.is_some() && t.radii[1].max_ratio.is_none());
        assert!(t.slope.is_none());
    }
}
