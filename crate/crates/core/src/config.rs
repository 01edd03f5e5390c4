//! Flat key-value run configuration: one `key = value` per line, `#` starts a
//! comment. Unknown and duplicate keys are rejected before any computation.

use crate::error::{Error, Result};
use crate::grid::{build_grid, Grid};
use crate::integrate::SchemeConfig;
use crate::potential::{InfluenceKind, InfluenceSpec, PotentialSpec};
use crate::study::{ManufacturedProblem, Profile, StudyAxis, DEFAULT_AMPLITUDE};
use std::collections::BTreeSet;
use std::path::Path;

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub dim: usize,
    pub extent: f64,
    pub h: f64,
    pub eps: f64,
    pub gamma: f64,
    pub pot_c: f64,
    pub pot_beta: f64,
    pub influence: InfluenceKind,
    pub theta: f64,
    pub dt: f64,
    pub t_final: f64,
    pub tol_fp: f64,
    pub max_fp_iters: usize,
    pub profile: Profile,
    pub amp_omega: f64,
    pub levels: usize,
    pub axis: StudyAxis,
    pub ref_factor: usize,
    pub snapshot_every: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            dim: 2,
            extent: 1.0,
            h: 0.05,
            eps: 0.2,
            gamma: 1.0,
            pot_c: 1.0,
            pot_beta: 1.0,
            influence: InfluenceKind::Constant,
            theta: 0.0,
            dt: 0.01,
            t_final: 0.1,
            tol_fp: 1e-10,
            max_fp_iters: 100,
            profile: Profile::Sine,
            amp_omega: 0.0,
            levels: 4,
            axis: StudyAxis::Space,
            ref_factor: 4,
            snapshot_every: 1,
        }
    }
}

impl RunConfig {
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            Error::Config(format!("cannot read config {}: {e}", path.display()))
        })?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        let mut seen = BTreeSet::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(Error::Config(format!(
                    "line {}: expected `key = value`, got `{raw}`",
                    lineno + 1
                )));
            };
            let key = key.trim();
            let value = value.trim();
            if !seen.insert(key.to_string()) {
                return Err(Error::Config(format!("line {}: duplicate key `{key}`", lineno + 1)));
            }
            cfg.apply(key, value, lineno + 1)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn apply(&mut self, key: &str, value: &str, lineno: usize) -> Result<()> {
        let bad = |what: &str| {
            Error::Config(format!("line {lineno}: cannot parse `{value}` as {what} for `{key}`"))
        };
        match key {
            "dim" => self.dim = value.parse().map_err(|_| bad("an integer"))?,
            "extent" => self.extent = value.parse().map_err(|_| bad("a number"))?,
            "h" => self.h = value.parse().map_err(|_| bad("a number"))?,
            "eps" => self.eps = value.parse().map_err(|_| bad("a number"))?,
            "gamma" => self.gamma = value.parse().map_err(|_| bad("a number"))?,
            "pot_c" => self.pot_c = value.parse().map_err(|_| bad("a number"))?,
            "pot_beta" => self.pot_beta = value.parse().map_err(|_| bad("a number"))?,
            "influence" => {
                self.influence = match value {
                    "const" => InfluenceKind::Constant,
                    "ramp" => InfluenceKind::Ramp,
                    _ => return Err(bad("`const` or `ramp`")),
                }
            }
            "theta" => self.theta = value.parse().map_err(|_| bad("a number"))?,
            "dt" => self.dt = value.parse().map_err(|_| bad("a number"))?,
            "T" => self.t_final = value.parse().map_err(|_| bad("a number"))?,
            "tol_fp" => self.tol_fp = value.parse().map_err(|_| bad("a number"))?,
            "max_fp_iters" => self.max_fp_iters = value.parse().map_err(|_| bad("an integer"))?,
            "profile" => {
                self.profile = match value {
                    "zero" => Profile::Zero,
                    "sine" => Profile::Sine,
                    "cusp" => Profile::Cusp,
                    "rough" => Profile::Rough,
                    _ => return Err(bad("`zero`, `sine`, `cusp`, or `rough`")),
                }
            }
            "amp_omega" => self.amp_omega = value.parse().map_err(|_| bad("a number"))?,
            "levels" => self.levels = value.parse().map_err(|_| bad("an integer"))?,
            "axis" => {
                self.axis = match value {
                    "space" => StudyAxis::Space,
                    "time" => StudyAxis::Time,
                    _ => return Err(bad("`space` or `time`")),
                }
            }
            "ref_factor" => self.ref_factor = value.parse().map_err(|_| bad("an integer"))?,
            "snapshot_every" => {
                self.snapshot_every = value.parse().map_err(|_| bad("an integer"))?
            }
            _ => return Err(Error::Config(format!("line {lineno}: unknown key `{key}`"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if !(1..=3).contains(&self.dim) {
            return Err(Error::Config(format!("dim must be 1, 2, or 3, got {}", self.dim)));
        }
        if !(self.extent > 0.0) {
            return Err(Error::Config("extent must be positive".into()));
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(Error::Config(format!("gamma must lie in (0, 1], got {}", self.gamma)));
        }
        if !(0.0..=1.0).contains(&self.theta) {
            return Err(Error::Config(format!("theta must lie in [0, 1], got {}", self.theta)));
        }
        if self.snapshot_every == 0 {
            return Err(Error::Config("snapshot_every must be at least 1".into()));
        }
        if self.ref_factor < 2 {
            return Err(Error::Config("ref_factor must be at least 2".into()));
        }
        Ok(())
    }

    pub fn potential(&self) -> Result<PotentialSpec> {
        PotentialSpec::new(self.pot_c, self.pot_beta)
    }

    pub fn influence_spec(&self) -> InfluenceSpec {
        InfluenceSpec::new(self.influence)
    }

    pub fn grid(&self) -> Result<Grid> {
        let extents = vec![self.extent; self.dim];
        build_grid(self.dim, &extents, self.h, self.eps)
    }

    pub fn scheme(&self) -> Result<SchemeConfig> {
        let mut scheme = SchemeConfig::new(self.dt, self.theta, self.t_final)?;
        scheme.tol_fp = self.tol_fp;
        scheme.max_fp_iters = self.max_fp_iters;
        Ok(scheme)
    }

    pub fn problem(&self) -> Result<ManufacturedProblem> {
        ManufacturedProblem::new(self.profile, self.gamma, self.amp_omega, DEFAULT_AMPLITUDE)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_parse_from_empty_text() {
        let cfg = RunConfig::parse("").unwrap();
        assert_eq!(cfg.dim, 2);
        assert_eq!(cfg.t_final, 0.1);
    }

    #[test]
    fn parses_keys_comments_and_capital_t() {
        let text = "\
# a comment line
dim = 1
h = 0.025      # trailing comment
eps = 0.1
T = 0.5
theta = 0.5
influence = ramp
profile = cusp
gamma = 0.5
";
        let cfg = RunConfig::parse(text).unwrap();
        assert_eq!(cfg.dim, 1);
        assert_eq!(cfg.h, 0.025);
        assert_eq!(cfg.t_final, 0.5);
        assert_eq!(cfg.influence, InfluenceKind::Ramp);
        assert_eq!(cfg.profile, Profile::Cusp);
        assert_eq!(cfg.gamma, 0.5);
    }

    #[test]
    fn rejects_unknown_duplicate_and_malformed_keys() {
        assert!(RunConfig::parse("mystery = 1").is_err());
        assert!(RunConfig::parse("h = 0.05\nh = 0.025").is_err());
        assert!(RunConfig::parse("h 0.05").is_err());
        assert!(RunConfig::parse("dim = two").is_err());
        assert!(RunConfig::parse("influence = gaussian").is_err());
        assert!(RunConfig::parse("gamma = 1.5").is_err());
        assert!(RunConfig::parse("ref_factor = 1").is_err());
    }
}
