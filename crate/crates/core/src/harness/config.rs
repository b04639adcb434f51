//! Experiment configuration: a human-editable TOML file with CLI overrides.
//! Every paper constant is surfaced here with its paper default.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::agent::AgentConfig;
use crate::aux::{AtcConfig, AuxConfig, AuxKind};
use crate::error::{Error, Result};
use crate::gridworld::{Cell, EnvConfig, MazeMap, Palette};
use crate::model::{Activation, ValueHeadKind};
use crate::nn::FtaConfig;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct MapSection {
    /// Path to the ASCII map; empty = the built-in default map.
    pub path: String,
    pub palette: Palette,
}

impl Default for MapSection {
    fn default() -> Self {
        MapSection {
            path: String::new(),
            palette: Palette::default(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct EnvSection {
    pub gamma: f32,
    pub episode_cutoff: u32,
    pub reward_goal: f32,
    /// Defaults to the map's `T` cell when absent.
    pub training_goal: Option<Cell>,
}

impl Default for EnvSection {
    fn default() -> Self {
        EnvSection {
            gamma: 0.99,
            episode_cutoff: 100,
            reward_goal: 1.0,
            training_goal: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct AgentSection {
    pub activation: String,
    pub value_head: ValueHeadKind,
    pub epsilon: f64,
    pub epsilon_decay: bool,
    pub batch_size: usize,
    pub buffer_capacity: usize,
    pub target_sync_period: u64,
    pub train_steps: u64,
    pub transfer_steps: u64,
    pub record_period: u64,
    pub fta: FtaConfig,
}

impl Default for AgentSection {
    fn default() -> Self {
        AgentSection {
            activation: "relu32".into(),
            value_head: ValueHeadKind::Nonlinear,
            epsilon: 0.1,
            epsilon_decay: false,
            batch_size: 32,
            buffer_capacity: 100_000,
            target_sync_period: 64,
            train_steps: 300_000,
            transfer_steps: 100_000,
            record_period: 10_000,
            fta: FtaConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct SweepSection {
    /// Stage-1 stepsizes (also the Scratch baseline grid).
    pub stage1: Vec<f64>,
    /// Stage-2 grid for 32-feature representations.
    pub stage2_narrow: Vec<f64>,
    /// Stage-2 grid for 640-feature (and wider) representations.
    pub stage2_wide: Vec<f64>,
    /// Stage-1 runs go the full step budget (paper protocol). Disable to
    /// stop each run at its early save, which makes single-point sweeps
    /// much cheaper.
    pub stage1_full_run: bool,
}

impl Default for SweepSection {
    fn default() -> Self {
        SweepSection {
            stage1: vec![1e-3, 3e-4, 1e-4, 3e-5, 1e-5],
            stage2_narrow: vec![1e-2, 3e-3, 1e-3, 3e-4, 1e-4],
            stage2_wide: vec![1e-3, 3e-4, 1e-4, 3e-5, 1e-5],
            stage1_full_run: true,
        }
    }
}

/// One agent specification: activation x auxiliary task (plus the FTA eta for
/// the no-aux eta sweep).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SpecEntry {
    pub activation: String,
    pub aux: AuxKind,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub eta: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub weight: Option<f64>,
}

impl SpecEntry {
    pub fn label(&self) -> String {
        let act = match (self.activation.as_str(), self.eta) {
            ("fta", Some(eta)) => format!("fta{eta}"),
            ("fta", None) => "fta0.2".to_string(),
            (a, _) => a.to_string(),
        };
        format!("{act}-{}", self.aux.label())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct CampaignSection {
    pub seeds: u32,
    /// "all", "stratified", or an explicit list of goal cells.
    pub tasks: TaskSelection,
    pub stratified_count: usize,
    pub specs: Vec<SpecEntry>,
    /// Baselines evaluated per distinct activation: subset of
    /// ["scratch", "random", "input"].
    pub baselines: Vec<String>,
    /// Eta values for the FTA/No-aux family when `expand_fta_etas` is set.
    pub fta_eta_grid: Vec<f64>,
    pub expand_fta_etas: bool,
    pub probe_size: usize,
    pub master_seed: u64,
}

impl Default for CampaignSection {
    fn default() -> Self {
        CampaignSection {
            seeds: 3,
            tasks: TaskSelection::default(),
            stratified_count: 10,
            specs: vec![
                SpecEntry {
                    activation: "relu32".into(),
                    aux: AuxKind::None,
                    eta: None,
                    weight: None,
                },
                SpecEntry {
                    activation: "fta".into(),
                    aux: AuxKind::None,
                    eta: Some(0.2),
                    weight: None,
                },
                SpecEntry {
                    activation: "relu32".into(),
                    aux: AuxKind::VirtualVf5,
                    eta: None,
                    weight: None,
                },
            ],
            baselines: vec!["scratch".into()],
            fta_eta_grid: vec![0.2, 0.4, 0.6, 0.8],
            expand_fta_etas: false,
            probe_size: 1000,
            master_seed: 94281,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TaskSelection {
    Keyword(String),
    Goals(Vec<Cell>),
}

impl Default for TaskSelection {
    fn default() -> Self {
        TaskSelection::Keyword("stratified".into())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct AuxSection {
    pub kind: AuxKind,
    pub weight: Option<f64>,
    pub aux_gamma: f64,
    pub lambda: f64,
    pub atc: AtcConfig,
}

impl Default for AuxSection {
    fn default() -> Self {
        let d = AuxConfig::default();
        AuxSection {
            kind: d.kind,
            weight: d.weight,
            aux_gamma: d.aux_gamma,
            lambda: d.lambda,
            atc: d.atc,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct RunSection {
    pub out_dir: String,
}

impl Default for RunSection {
    fn default() -> Self {
        RunSection {
            out_dir: "results".into(),
        }
    }
}

/// The whole experiment file.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub map: MapSection,
    pub env: EnvSection,
    pub agent: AgentSection,
    pub aux: AuxSection,
    pub sweep: SweepSection,
    pub campaign: CampaignSection,
    pub run: RunSection,
}

impl ExperimentConfig {
    /// Reads a TOML file and applies dotted-path overrides
    /// (e.g. `agent.activation=fta`).
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<ExperimentConfig> {
        let mut value: toml::Value = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| {
                    Error::config(format!("cannot read config {}: {e}", p.display()))
                })?;
                let table: toml::Table = text
                    .parse()
                    .map_err(|e| Error::config(format!("{}: {e}", p.display())))?;
                toml::Value::Table(table)
            }
            None => toml::Value::Table(Default::default()),
        };
        for ov in overrides {
            apply_override(&mut value, ov)?;
        }
        let cfg: ExperimentConfig = value
            .try_into()
            .map_err(|e| Error::config(format!("invalid config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.sweep.stage1.is_empty()
            || self.sweep.stage2_narrow.is_empty()
            || self.sweep.stage2_wide.is_empty()
        {
            return Err(Error::config("stepsize grids must be non-empty"));
        }
        if self.campaign.seeds < 1 {
            return Err(Error::config("campaign.seeds must be >= 1"));
        }
        parse_activation(&self.agent.activation, &self.agent.fta)?;
        for b in &self.campaign.baselines {
            if !["scratch", "random", "input"].contains(&b.as_str()) {
                return Err(Error::config(format!("unknown baseline {b:?}")));
            }
        }
        if let TaskSelection::Keyword(k) = &self.campaign.tasks {
            if k != "all" && k != "stratified" {
                return Err(Error::config(format!(
                    "campaign.tasks must be \"all\", \"stratified\", or a goal list; got {k:?}"
                )));
            }
        }
        Ok(())
    }

    pub fn load_map(&self, base_dir: &Path) -> Result<MazeMap> {
        if self.map.path.is_empty() {
            MazeMap::parse_with_palette(crate::gridworld::DEFAULT_MAP, self.map.palette)
        } else {
            let p = PathBuf::from(&self.map.path);
            let p = if p.is_absolute() { p } else { base_dir.join(p) };
            MazeMap::load(&p, self.map.palette)
        }
    }

    pub fn training_goal(&self, map: &MazeMap) -> Result<Cell> {
        match self.env.training_goal.or(map.training_goal) {
            Some(g) => Ok(g),
            None => Err(Error::config(
                "no training goal: set env.training_goal or mark a 'T' cell in the map",
            )),
        }
    }

    pub fn env_config(&self, goal: Cell) -> EnvConfig {
        EnvConfig {
            gamma: self.env.gamma,
            goal,
            episode_cutoff: self.env.episode_cutoff,
            reward_goal: self.env.reward_goal,
        }
    }

    pub fn aux_config(&self, kind: AuxKind, weight: Option<f64>) -> AuxConfig {
        AuxConfig {
            kind,
            weight: weight.or(self.aux.weight),
            aux_gamma: self.aux.aux_gamma,
            lambda: self.aux.lambda,
            atc: self.aux.atc,
        }
    }

    /// The runtime agent settings for one (activation, aux, stepsize) choice.
    pub fn agent_config(
        &self,
        activation: Activation,
        aux: AuxConfig,
        learning_rate: f64,
    ) -> AgentConfig {
        AgentConfig {
            activation,
            value_head: self.agent.value_head,
            epsilon: self.agent.epsilon,
            epsilon_decay: self.agent.epsilon_decay,
            batch_size: self.agent.batch_size,
            buffer_capacity: self.agent.buffer_capacity,
            target_sync_period: self.agent.target_sync_period,
            learning_rate,
            train_steps: self.agent.train_steps,
            transfer_steps: self.agent.transfer_steps,
            record_period: self.agent.record_period,
            aux,
        }
    }

    /// Stage-2 stepsize grid for a representation of width `d`.
    pub fn stage2_grid(&self, d: usize) -> &[f64] {
        if d <= 32 {
            &self.sweep.stage2_narrow
        } else {
            &self.sweep.stage2_wide
        }
    }

    /// Canonical serialization hash ("git-style" content id).
    pub fn config_hash(&self) -> String {
        let text = toml::to_string(self).expect("config serializes");
        let mut hasher = Sha256::new();
        hasher.update(text.as_bytes());
        hex(&hasher.finalize())
    }
}

pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// sha256 over arbitrary bytes, hex-encoded (used for per-run stamps).
pub fn sha256_hex(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    hex(&hasher.finalize())
}

/// Parses an activation label plus FTA settings into the model enum.
pub fn parse_activation(label: &str, fta: &FtaConfig) -> Result<Activation> {
    match label {
        "relu32" => Ok(Activation::Relu32),
        "relu640" => Ok(Activation::Relu640),
        "fta" => {
            fta.validate()?;
            Ok(Activation::Fta(*fta))
        }
        other => Err(Error::config(format!(
            "unknown activation {other:?} (expected relu32, relu640, or fta)"
        ))),
    }
}

/// Applies one `a.b.c=value` override onto a TOML tree. Values parse as TOML
/// when possible and fall back to strings.
fn apply_override(root: &mut toml::Value, spec: &str) -> Result<()> {
    let (path, raw) = spec
        .split_once('=')
        .ok_or_else(|| Error::usage(format!("override {spec:?} must be key=value")))?;
    let parsed: toml::Value = match raw.parse::<toml::Value>() {
        Ok(v) => v,
        Err(_) => toml::Value::String(raw.to_string()),
    };
    let mut cur = root;
    let parts: Vec<&str> = path.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let table = cur
            .as_table_mut()
            .ok_or_else(|| Error::usage(format!("override path {path:?} crosses a non-table")))?;
        if i + 1 == parts.len() {
            table.insert(part.to_string(), parsed);
            return Ok(());
        }
        cur = table
            .entry(part.to_string())
            .or_insert(toml::Value::Table(Default::default()));
    }
    unreachable!()
}
