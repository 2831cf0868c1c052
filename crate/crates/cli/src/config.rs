//! TOML run configuration.
//!
//! Top-level `n_base`, `M`, `gamma`, `Y`, `K` describe a single run and act
//! as defaults for every `[[ladder]]` entry.

use std::path::{Path, PathBuf};

use fracvi_core::oracle::OracleConfig;
use fracvi_core::study::{Preset, Rung, StudySpec, Target};
use fracvi_core::timestepper::ForcingMode;
use serde::Deserialize;

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RungConfig {
    pub n_base: Option<usize>,
    #[serde(rename = "M")]
    pub m: Option<usize>,
    pub gamma: Option<f64>,
    #[serde(rename = "Y")]
    pub y: Option<f64>,
    #[serde(rename = "K")]
    pub k: Option<usize>,
}

impl RungConfig {
    fn over(&self, defaults: &RungConfig) -> RungConfig {
        RungConfig {
            n_base: self.n_base.or(defaults.n_base),
            m: self.m.or(defaults.m),
            gamma: self.gamma.or(defaults.gamma),
            y: self.y.or(defaults.y),
            k: self.k.or(defaults.k),
        }
    }

    fn complete(&self, what: &str) -> Result<Rung, String> {
        let missing = |key: &str| format!("{what}: missing `{key}`");
        Ok(Rung {
            n_base: self.n_base.ok_or_else(|| missing("n_base"))?,
            m: self.m.ok_or_else(|| missing("M"))?,
            gamma: self.gamma,
            y: self.y.ok_or_else(|| missing("Y"))?,
            k: self.k.ok_or_else(|| missing("K"))?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub preset: Preset,
    pub s: f64,
    #[serde(rename = "T")]
    pub t_final: Option<f64>,
    pub mode: Option<ForcingMode>,
    /// Output directory, overridden by `--out`.
    pub output: Option<PathBuf>,
    pub n_base: Option<usize>,
    #[serde(rename = "M")]
    pub m: Option<usize>,
    pub gamma: Option<f64>,
    #[serde(rename = "Y")]
    pub y: Option<f64>,
    #[serde(rename = "K")]
    pub k: Option<usize>,
    #[serde(default)]
    pub ladder: Vec<RungConfig>,
    pub target: Option<Target>,
    /// Settings of the `oracle` verb.
    pub oracle: Option<OracleConfig>,
    pub tail_per_unit: Option<usize>,
    pub expected_slope: Option<f64>,
    pub band: Option<[f64; 2]>,
    #[serde(default)]
    pub record_timings: bool,
}

impl Config {
    pub fn parse(text: &str) -> Result<Self, String> {
        toml::from_str(text).map_err(|e| e.to_string())
    }

    pub fn load(path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        Self::parse(&text).map_err(|e| format!("{}: {e}", path.display()))
    }

    pub fn t_final(&self) -> f64 {
        self.t_final.unwrap_or(0.5)
    }

    pub fn mode(&self) -> ForcingMode {
        self.mode.unwrap_or_default()
    }

    fn defaults(&self) -> RungConfig {
        RungConfig {
            n_base: self.n_base,
            m: self.m,
            gamma: self.gamma,
            y: self.y,
            k: self.k,
        }
    }

    /// The run described by the top-level keys.
    pub fn single_rung(&self) -> Result<Rung, String> {
        self.defaults().complete("top level")
    }

    /// Ladder entries completed from the top-level keys. Consecutive rungs
    /// may not get coarser in any of `n_base`, `M`, `Y`, `K`.
    pub fn ladder(&self) -> Result<Vec<Rung>, String> {
        let defaults = self.defaults();
        let rungs = self
            .ladder
            .iter()
            .enumerate()
            .map(|(i, r)| r.over(&defaults).complete(&format!("ladder entry {}", i + 1)))
            .collect::<Result<Vec<_>, _>>()?;
        for (i, w) in rungs.windows(2).enumerate() {
            let (a, b) = (&w[0], &w[1]);
            if b.n_base < a.n_base || b.m < a.m || b.y < a.y || b.k < a.k {
                return Err(format!(
                    "ladder entry {} is coarser than entry {} in at least one of n_base, M, Y, K",
                    i + 2,
                    i + 1
                ));
            }
            if (b.n_base, b.m, b.k) == (a.n_base, a.m, a.k) && b.y == a.y {
                return Err(format!("ladder entries {} and {} are identical", i + 1, i + 2));
            }
        }
        Ok(rungs)
    }

    pub fn study_spec(&self) -> Result<StudySpec, String> {
        let mut spec = StudySpec::new(self.preset, self.s, self.ladder()?);
        spec.t_final = self.t_final();
        spec.mode = self.mode();
        spec.record_timings = self.record_timings;
        spec.tail_per_unit = self.tail_per_unit;
        spec.expected_slope = self.expected_slope;
        spec.band = self.band;
        spec.target = match self.target.clone() {
            Some(Target::Oracle { mut config }) => {
                config.mode = spec.mode;
                Target::Oracle { config }
            }
            Some(t) => t,
            None => Target::default(),
        };
        Ok(spec)
    }

    /// `[oracle]` settings, falling back to the oracle target's settings.
    pub fn oracle_config(&self) -> OracleConfig {
        let mut config = match (&self.oracle, &self.target) {
            (Some(c), _) => *c,
            (None, Some(Target::Oracle { config })) => *config,
            _ => OracleConfig::default(),
        };
        config.mode = self.mode();
        config
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const STUDY: &str = r#"
preset = "P3"
s = 0.5
T = 0.5
mode = "right_limit"
n_base = 32
M = 32
Y = 3.0

[[ladder]]
K = 8
[[ladder]]
K = 16
[[ladder]]
K = 32

[target]
kind = "fine_self"
"#;

    #[test]
    fn ladder_inherits_top_level_keys() {
        let c = Config::parse(STUDY).unwrap();
        let spec = c.study_spec().unwrap();
        assert_eq!(spec.preset, Preset::P3);
        assert_eq!(spec.mode, ForcingMode::RightLimit);
        assert_eq!(spec.ladder.len(), 3);
        assert!(spec.ladder.iter().all(|r| r.n_base == 32 && r.m == 32 && r.y == 3.0));
        assert_eq!(spec.ladder.iter().map(|r| r.k).collect::<Vec<_>>(), [8, 16, 32]);
        assert_eq!(spec.target, Target::FineSelf { rung: None });
        assert!(c.single_rung().is_err());
    }

    #[test]
    fn single_run_keys() {
        let c = Config::parse("preset = \"p1\"\ns = 0.4\nn_base = 8\nM = 8\nY = 2.0\nK = 4\ngamma = 4.0\n").unwrap();
        let r = c.single_rung().unwrap();
        assert_eq!((r.n_base, r.m, r.k, r.gamma), (8, 8, 4, Some(4.0)));
        assert_eq!(c.t_final(), 0.5);
        assert_eq!(c.mode(), ForcingMode::Averaged);
    }

    #[test]
    fn rejects_unknown_keys_and_coarsening() {
        assert!(Config::parse("preset = \"p1\"\ns = 0.4\nfoo = 1\n").is_err());
        let text = "preset = \"p2\"\ns = 0.5\nY = 2.0\nK = 4\n[[ladder]]\nn_base = 16\nM = 16\n[[ladder]]\nn_base = 8\nM = 8\n";
        assert!(Config::parse(text).unwrap().ladder().unwrap_err().contains("coarser"));
        let missing = "preset = \"p2\"\ns = 0.5\n[[ladder]]\nn_base = 16\n";
        assert!(Config::parse(missing).unwrap().ladder().unwrap_err().contains("missing `M`"));
    }

    #[test]
    fn oracle_settings() {
        let text = "preset = \"p2\"\ns = 0.5\nmode = \"right_limit\"\n[oracle]\nn_modes = 32\nn_phys = 128\n";
        let c = Config::parse(text).unwrap();
        let o = c.oracle_config();
        assert_eq!((o.n_modes, o.n_phys, o.mode), (32, 128, ForcingMode::RightLimit));
        assert_eq!(o.psor_tol, OracleConfig::default().psor_tol);
        let text = "preset = \"p2\"\ns = 0.5\n[target]\nkind = \"oracle\"\n[target.config]\nn_modes = 64\nn_phys = 128\n";
        assert_eq!(Config::parse(text).unwrap().oracle_config().n_modes, 64);
    }
}
