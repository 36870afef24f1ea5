//! TOML experiment configuration.
//!
//! ```toml
//! [experiment]
//! sim = 1
//! d = 4
//! setups = [1, 2, 3]
//! methods = ["naive_knn", "oracle_knn", "enn_k", "bayes"]
//! n = 20000
//! scale = 0.25
//! test_size = 1000
//! reps = 100
//! seed = 1
//! stop_c = 0.02
//!
//! [weights]
//! k_rule = "power_0.7"   # or "cv"
//! mstar_rule = "cv"      # or "constants"
//! regret_ratio = 1.0
//! cv_folds = 5
//!
//! [gamma]
//! gammas = [0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7]
//!
//! [matching]
//! sizes = [1000, 10000, 100000]
//! workers = 5
//! ```
//!
//! Every key is optional; missing keys take the [`ExperimentConfig`] defaults.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::datagen::SimulationId;
use crate::error::{Error, Result};
use crate::experiments::{ExperimentConfig, KRule, Method, MstarRule};

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct ExperimentSection {
    sim: u32,
    d: usize,
    setups: Vec<usize>,
    methods: Vec<Method>,
    n: usize,
    scale: f64,
    test_size: usize,
    reps: usize,
    seed: u64,
    stop_c: f64,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct WeightsSection {
    k_rule: KRule,
    mstar_rule: MstarRule,
    regret_ratio: f64,
    cv_folds: usize,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct GammaSection {
    gammas: Vec<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct MatchingSection {
    sizes: Vec<usize>,
    workers: usize,
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct ConfigFile {
    experiment: ExperimentSection,
    weights: WeightsSection,
    gamma: GammaSection,
    matching: MatchingSection,
}

impl From<&ExperimentConfig> for ConfigFile {
    fn from(c: &ExperimentConfig) -> Self {
        Self {
            experiment: ExperimentSection {
                sim: c.sim.number(),
                d: c.d,
                setups: c.setup_ids.clone(),
                methods: c.methods.clone(),
                n: c.n,
                scale: c.scale,
                test_size: c.test_size,
                reps: c.reps,
                seed: c.seed,
                stop_c: c.stop_c,
            },
            weights: WeightsSection {
                k_rule: c.k_rule,
                mstar_rule: c.mstar_rule,
                regret_ratio: c.regret_ratio,
                cv_folds: c.cv_folds,
            },
            gamma: GammaSection { gammas: c.gammas.clone() },
            matching: MatchingSection { sizes: c.matching_sizes.clone(), workers: c.matching_workers },
        }
    }
}

macro_rules! default_from_config {
    ($($t:ident => $field:ident),*) => {
        $(impl Default for $t {
            fn default() -> Self {
                ConfigFile::from(&ExperimentConfig::default()).$field
            }
        })*
    };
}

default_from_config!(
    ExperimentSection => experiment,
    WeightsSection => weights,
    GammaSection => gamma,
    MatchingSection => matching
);

impl ConfigFile {
    fn into_config(self) -> Result<ExperimentConfig> {
        let e = self.experiment;
        let sim = SimulationId::from_number(e.sim)
            .map_err(|err| Error::Config { field: "sim".into(), reason: err.to_string() })?;
        Ok(ExperimentConfig {
            sim,
            d: e.d,
            setup_ids: e.setups,
            methods: e.methods,
            n: e.n,
            test_size: e.test_size,
            reps: e.reps,
            seed: e.seed,
            k_rule: self.weights.k_rule,
            mstar_rule: self.weights.mstar_rule,
            stop_c: e.stop_c,
            scale: e.scale,
            regret_ratio: self.weights.regret_ratio,
            cv_folds: self.weights.cv_folds,
            gammas: self.gamma.gammas,
            matching_sizes: self.matching.sizes,
            matching_workers: self.matching.workers,
        })
    }
}

/// Parses and validates a configuration document.
pub fn parse_config(text: &str) -> Result<ExperimentConfig> {
    let file: ConfigFile = toml::from_str(text).map_err(|e| Error::Config {
        field: "<document>".into(),
        reason: e.to_string().trim().to_string(),
    })?;
    let cfg = file.into_config()?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn load_config(path: &Path) -> Result<ExperimentConfig> {
    parse_config(&std::fs::read_to_string(path)?)
}

/// Serializes every field, so the output parses back to the same config.
pub fn to_toml(cfg: &ExperimentConfig) -> String {
    toml::to_string(&ConfigFile::from(cfg)).expect("config fields are TOML-representable")
}
