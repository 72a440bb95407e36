use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use weak_mfg::fixedpoint::MfgSolveConfig;
use weak_mfg::nplayer::{GapConfig, RateSweepConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    Solve,
    Nplayer,
    RateSweep,
    CheckMono,
    Selftest,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelBlock {
    pub name: String,
    /// Model parameters; omitted keys take their defaults.
    #[serde(default)]
    pub params: serde_json::Value,
}

impl Default for ModelBlock {
    fn default() -> Self {
        ModelBlock {
            name: "uncoupled".into(),
            params: serde_json::Value::Null,
        }
    }
}

/// Settings of the `nplayer` and `rate-sweep` commands.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NPlayerBlock {
    /// Number of players for `nplayer`.
    pub n: usize,
    /// Player counts for `rate-sweep`.
    pub n_list: Vec<usize>,
    pub rollouts: usize,
    pub gap: GapConfig,
}

impl Default for NPlayerBlock {
    fn default() -> Self {
        let sweep = RateSweepConfig::default();
        NPlayerBlock {
            n: 64,
            n_list: sweep.n_list,
            rollouts: sweep.rollouts,
            gap: sweep.gap,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MonotonicityBlock {
    /// Random pairs of laws compared.
    pub pairs: usize,
}

impl Default for MonotonicityBlock {
    fn default() -> Self {
        MonotonicityBlock { pairs: 20 }
    }
}

/// Everything a run needs. Unknown keys anywhere are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub command: Command,
    #[serde(default)]
    pub model: ModelBlock,
    #[serde(default)]
    pub solve: MfgSolveConfig,
    #[serde(default)]
    pub nplayer: NPlayerBlock,
    #[serde(default)]
    pub monotonicity: MonotonicityBlock,
    #[serde(default)]
    pub output: Option<PathBuf>,
    /// Overrides every seed in the other blocks.
    #[serde(default)]
    pub seed: Option<u64>,
}

impl RunConfig {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| anyhow::anyhow!("cli::load_config: cannot read {}: {}", path.display(), e))?;
        serde_json::from_str(&text).map_err(|e| anyhow::anyhow!("cli::load_config: {}: {}", path.display(), e))
    }

    pub fn apply_seed(&mut self, seed: Option<u64>) {
        if let Some(s) = seed.or(self.seed) {
            self.seed = Some(s);
            self.solve.seed = s;
        }
    }

    pub fn sweep(&self) -> RateSweepConfig {
        RateSweepConfig {
            n_list: self.nplayer.n_list.clone(),
            rollouts: self.nplayer.rollouts,
            seed: self.solve.seed,
            gap: self.nplayer.gap,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_takes_defaults() {
        let c: RunConfig = serde_json::from_str(r#"{"command": "solve"}"#).unwrap();
        assert_eq!(c.model.name, "uncoupled");
        assert_eq!(c.solve, MfgSolveConfig::default());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(serde_json::from_str::<RunConfig>(r#"{"command": "solve", "colour": 1}"#).is_err());
        assert!(serde_json::from_str::<RunConfig>(r#"{"command": "solve", "solve": {"iters": 3}}"#).is_err());
        assert!(serde_json::from_str::<RunConfig>(r#"{"command": "fly"}"#).is_err());
    }

    #[test]
    fn shipped_configs_load() {
        let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
        let mut seen = 0;
        for entry in std::fs::read_dir(dir).unwrap() {
            let path = entry.unwrap().path();
            let c = RunConfig::load(&path).unwrap();
            c.solve.validate().unwrap();
            weak_mfg::models::build_model::<f64>(&c.model.name, &c.model.params).unwrap();
            seen += 1;
        }
        assert!(seen >= 5);
    }

    #[test]
    fn seed_override_reaches_the_solver() {
        let mut c: RunConfig = serde_json::from_str(r#"{"command": "solve", "seed": 4}"#).unwrap();
        c.apply_seed(None);
        assert_eq!(c.solve.seed, 4);
        c.apply_seed(Some(9));
        assert_eq!(c.solve.seed, 9);
        assert_eq!(c.sweep().seed, 9);
    }
}
