//! Flat `key = value` configuration files.
//!
//! Keys mirror the fields of `ExperimentParams` and `SweepConfig`, plus a few
//! per-command knobs. Blank lines and `#` comments are ignored; unknown or
//! repeated keys are errors.

use std::collections::BTreeMap;
use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};
use wplab_core::params::ExperimentParams;

use crate::sweep::{DataFamily, SweepConfig};

pub const KEYS: &[&str] = &[
    "alpha",
    "n",
    "p",
    "r",
    "eps",
    "delta",
    "k",
    "d_budget",
    "seed",
    "catalog_mode",
    "r_list",
    "data_family",
    "trials_per_r",
    "time_strata",
    "points",
    "samples",
    "variety",
    "small_r",
    "spacing",
    "times",
];

#[derive(Clone, Debug, PartialEq)]
pub struct Config {
    pub params: ExperimentParams,
    pub sweep: SweepConfig,
    /// Evaluation points for `broad` and `pconf`.
    pub points: usize,
    /// Monte Carlo samples or point-cloud size, depending on the command.
    pub samples: usize,
    /// `plane`, `sphere` or `saddle`.
    pub variety: String,
    /// Small tube scale `r` for `wolff`.
    pub small_r: f64,
    /// Frequency spacing of generated inputs.
    pub spacing: f64,
    /// Time slices written by `propagate`.
    pub times: usize,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            params: ExperimentParams::default(),
            sweep: SweepConfig::default(),
            points: 100,
            samples: 2000,
            variety: "plane".into(),
            small_r: 16.0,
            spacing: 1.0 / 256.0,
            times: 8,
        }
    }
}

pub fn parse_pairs(text: &str) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for (no, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| anyhow!("line {}: expected key = value", no + 1))?;
        let (k, v) = (k.trim(), v.trim());
        if !KEYS.contains(&k) {
            bail!("line {}: unknown key `{k}`", no + 1);
        }
        if out.insert(k.to_string(), v.to_string()).is_some() {
            bail!("line {}: key `{k}` given twice", no + 1);
        }
    }
    Ok(out)
}

fn num<T: std::str::FromStr>(k: &str, v: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    v.parse::<T>().map_err(|e| anyhow!("bad value for `{k}`: {e}"))
}

impl Config {
    pub fn from_text(text: &str) -> Result<Config> {
        let mut c = Config::default();
        for (k, v) in parse_pairs(text)? {
            let v = v.as_str();
            match k.as_str() {
                "alpha" => {
                    c.params.alpha = num(&k, v)?;
                    c.sweep.alpha = c.params.alpha;
                }
                "n" => {
                    c.params.n = num(&k, v)?;
                    c.sweep.n = c.params.n;
                }
                "p" => {
                    c.params.p = num(&k, v)?;
                    c.sweep.p = c.params.p;
                }
                "r" => c.params.r = num(&k, v)?,
                "eps" => c.params.eps = num(&k, v)?,
                "delta" => c.params.delta = num(&k, v)?,
                "k" => c.params.k = num(&k, v)?,
                "d_budget" => c.params.d_budget = num(&k, v)?,
                "seed" => c.set_seed(num(&k, v)?),
                "catalog_mode" => c.params.catalog_mode = num(&k, v)?,
                "r_list" => c.sweep.r_list = v.split(',').map(|s| num(&k, s.trim())).collect::<Result<_>>()?,
                "data_family" => c.sweep.data_family = v.parse::<DataFamily>()?,
                "trials_per_r" => c.sweep.trials_per_r = num(&k, v)?,
                "time_strata" => c.sweep.time_strata = num(&k, v)?,
                "points" => c.points = num(&k, v)?,
                "samples" => c.samples = num(&k, v)?,
                "variety" => c.variety = v.to_string(),
                "small_r" => c.small_r = num(&k, v)?,
                "spacing" => c.spacing = num(&k, v)?,
                "times" => c.times = num(&k, v)?,
                _ => unreachable!(),
            }
        }
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Config> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Config::from_text(&text).with_context(|| format!("in {}", path.display()))
    }

    pub fn set_seed(&mut self, seed: u64) {
        self.params.seed = seed;
        self.sweep.seed = seed;
    }

    pub fn seed(&self) -> u64 {
        self.params.seed
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_known_keys() {
        let c = Config::from_text("# sweep\nalpha = 0.5\nn=2\nr_list = 16, 32,64\ndata_family = single_packet # inline\nseed=9\n\n").unwrap();
        assert_eq!(c.params.alpha, 0.5);
        assert_eq!(c.sweep.alpha, 0.5);
        assert_eq!(c.sweep.r_list, vec![16.0, 32.0, 64.0]);
        assert_eq!(c.sweep.data_family, DataFamily::SinglePacket);
        assert_eq!((c.params.seed, c.sweep.seed), (9, 9));
    }

    #[test]
    fn rejects_unknown_repeated_and_malformed() {
        assert!(Config::from_text("alpah = 2").unwrap_err().to_string().contains("unknown key"));
        assert!(Config::from_text("n = 2\nn = 3").is_err());
        assert!(Config::from_text("alpha 2").is_err());
        assert!(Config::from_text("n = two").is_err());
        assert!(Config::from_text("data_family = gaussian").is_err());
    }

    #[test]
    fn empty_file_is_defaults() {
        assert_eq!(Config::from_text("\n# nothing\n").unwrap(), Config::default());
    }
}
