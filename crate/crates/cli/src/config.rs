//! Benchmark configuration: a TOML file naming datasets (generated or loaded
//! from CSV), the algorithms to compare, and the cross-validation plan.

use std::path::PathBuf;

use serde::Deserialize;

use randsel::datagen::{gen_weston_linear, gen_weston_nonlinear, gen_xor};
use randsel::dataset::{read_csv, Dataset};
use randsel::error::{Error, Result};
use randsel::evaluation::Algorithm;

pub const DEFAULT_XOR_NOISE_SD: f64 = 0.3;

fn default_outer() -> usize {
    10
}
fn default_inner() -> usize {
    10
}
fn default_reshuffles() -> usize {
    3
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlanSpec {
    #[serde(default = "default_outer")]
    pub outer_folds: usize,
    #[serde(default = "default_inner")]
    pub inner_folds: usize,
    #[serde(default = "default_reshuffles")]
    pub reshuffles: usize,
}

impl Default for PlanSpec {
    fn default() -> Self {
        PlanSpec {
            outer_folds: default_outer(),
            inner_folds: default_inner(),
            reshuffles: default_reshuffles(),
        }
    }
}

/// One dataset: either a generator recipe or a CSV path, never both.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSpec {
    pub name: String,
    pub generator: Option<String>,
    pub path: Option<PathBuf>,
    pub m: Option<usize>,
    pub n: Option<usize>,
    pub noise_sd: Option<f64>,
    pub seed: Option<u64>,
}

impl DatasetSpec {
    pub fn validate(&self) -> Result<()> {
        match (&self.generator, &self.path) {
            (Some(_), Some(_)) | (None, None) => Err(Error::InvalidParameter(format!(
                "dataset '{}' must set exactly one of generator / path",
                self.name
            ))),
            (Some(g), None) => {
                if !matches!(g.as_str(), "xor" | "weston-linear" | "weston-nonlinear") {
                    return Err(Error::InvalidParameter(format!(
                        "dataset '{}': unknown generator '{g}' \
                         (expected xor, weston-linear, or weston-nonlinear)",
                        self.name
                    )));
                }
                if self.m.is_none() || self.n.is_none() {
                    return Err(Error::InvalidParameter(format!(
                        "dataset '{}': generator needs m and n",
                        self.name
                    )));
                }
                if self.noise_sd.is_some() && g != "xor" {
                    return Err(Error::InvalidParameter(format!(
                        "dataset '{}': noise_sd applies only to the xor generator",
                        self.name
                    )));
                }
                Ok(())
            }
            (None, Some(_)) => {
                if self.m.is_some() || self.n.is_some() || self.seed.is_some() {
                    return Err(Error::InvalidParameter(format!(
                        "dataset '{}': m/n/seed apply only to generators",
                        self.name
                    )));
                }
                Ok(())
            }
        }
    }

    pub fn load(&self) -> Result<Dataset> {
        self.validate()?;
        if let Some(path) = &self.path {
            return read_csv(path);
        }
        let m = self.m.expect("validated");
        let n = self.n.expect("validated");
        let seed = self.seed.unwrap_or(0);
        match self.generator.as_deref().expect("validated") {
            "xor" => gen_xor(m, n, self.noise_sd.unwrap_or(DEFAULT_XOR_NOISE_SD), seed),
            "weston-linear" => gen_weston_linear(m, n, seed),
            "weston-nonlinear" => gen_weston_nonlinear(m, n, seed),
            other => Err(Error::InvalidParameter(format!(
                "unknown generator '{other}'"
            ))),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchConfig {
    /// Master seed for fold assignments and selector substreams.
    pub seed: u64,
    #[serde(default)]
    pub plan: PlanSpec,
    pub datasets: Vec<DatasetSpec>,
    pub algorithms: Vec<Algorithm>,
    /// Multiples of the per-candidate median-heuristic gamma to try.
    pub gamma_multipliers: Option<Vec<f64>>,
    /// Feature-count grid for ranking baselines; defaults to the culling
    /// schedule of the dataset's feature count.
    pub counts: Option<Vec<usize>>,
}

impl BenchConfig {
    pub fn parse(text: &str) -> Result<BenchConfig> {
        let cfg: BenchConfig = toml::from_str(text)
            .map_err(|e| Error::InvalidParameter(format!("bad bench config: {e}")))?;
        if cfg.datasets.is_empty() {
            return Err(Error::InvalidParameter(
                "bench config must list at least one dataset".into(),
            ));
        }
        if cfg.algorithms.is_empty() {
            return Err(Error::InvalidParameter(
                "bench config must list at least one algorithm".into(),
            ));
        }
        for ds in &cfg.datasets {
            ds.validate()?;
        }
        Ok(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_a_full_config() {
        let text = r#"
seed = 7

[plan]
outer_folds = 5
inner_folds = 4
reshuffles = 2

[[datasets]]
name = "xor"
generator = "xor"
m = 120
n = 10
seed = 3

[[datasets]]
name = "from-file"
path = "data.csv"

[[algorithms]]
method = "corr"

[[algorithms]]
method = "randsel"
n_bootstraps = 200
subsample = 30
cull_fraction = 0.25
top_fraction = 0.25
occasions = 3
fixing_enabled = false
bandwidth = "median_heuristic"
master_seed = 1
min_features = 2
coupled_draws = true
"#;
        let cfg = BenchConfig::parse(text).unwrap();
        assert_eq!(cfg.plan.outer_folds, 5);
        assert_eq!(cfg.datasets.len(), 2);
        assert_eq!(cfg.algorithms.len(), 2);
        assert_eq!(cfg.algorithms[1].name(), "randsel");
    }

    #[test]
    fn defaults_fill_the_plan() {
        let text = r#"
seed = 1

[[datasets]]
name = "d"
generator = "weston-linear"
m = 100
n = 10

[[algorithms]]
method = "corr"
"#;
        let cfg = BenchConfig::parse(text).unwrap();
        assert_eq!(cfg.plan.outer_folds, 10);
        assert_eq!(cfg.plan.inner_folds, 10);
        assert_eq!(cfg.plan.reshuffles, 3);
    }

    #[test]
    fn rejects_bad_configs() {
        assert!(BenchConfig::parse("seed = 1\ndatasets = []\nalgorithms = []").is_err());

        let no_alg = r#"
seed = 1
algorithms = []

[[datasets]]
name = "d"
generator = "xor"
m = 50
n = 4
"#;
        let err = BenchConfig::parse(no_alg).unwrap_err();
        assert!(err.to_string().contains("algorithm"), "{err}");

        let both = r#"
seed = 1

[[datasets]]
name = "d"
generator = "xor"
path = "x.csv"
m = 50
n = 4

[[algorithms]]
method = "corr"
"#;
        assert!(BenchConfig::parse(both).is_err());

        let bad_gen = r#"
seed = 1

[[datasets]]
name = "d"
generator = "nope"
m = 50
n = 4

[[algorithms]]
method = "corr"
"#;
        assert!(BenchConfig::parse(bad_gen).is_err());
    }
}
