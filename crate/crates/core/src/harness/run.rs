//! Individual sub-runs: stage-1 representation training, stage-2 transfer
//! (frozen / scratch / random / input), and standalone property measurement.
//! Each run writes its artifacts into its own directory and a `done.json`
//! stamp carrying a content hash of the run's inputs, which is what makes
//! campaigns resumable.

use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::agent::{
    phi_table_from_trunk, phi_table_identity, AgentConfig, DqnAgent, PhiTable, RunMode,
    TrainingTrace, ValueOnlyLearner,
};
use crate::checkpoint;
use crate::csvio;
use crate::error::{Error, Result};
use crate::gridworld::{EnvConfig, Maze, MazeMap, ObsTable};
use crate::model::{Activation, QNetwork, Trunk, ValueHeadKind};
use crate::num::Real;
use crate::properties::ProbeSet;
use crate::rng::Seed;
use crate::tensor::Parameterized;

use super::config::sha256_hex;

/// Stamp written at the end of a successful sub-run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunStamp {
    pub run_hash: String,
    pub auc: f64,
    pub saved_at: Option<u64>,
    pub converged: bool,
    pub final_step: u64,
}

pub fn stamp_path(dir: &Path) -> std::path::PathBuf {
    dir.join("done.json")
}

pub fn read_stamp(dir: &Path) -> Option<RunStamp> {
    let text = std::fs::read_to_string(stamp_path(dir)).ok()?;
    serde_json::from_str(&text).ok()
}

fn write_stamp(dir: &Path, stamp: &RunStamp) -> Result<()> {
    let text = serde_json::to_string_pretty(stamp)
        .map_err(|e| Error::format(format!("stamp encode: {e}")))?;
    csvio::write_atomic(&stamp_path(dir), &text)
}

/// Hash of everything that determines a run's outputs.
#[derive(Serialize)]
struct RunInputs<'a> {
    kind: &'a str,
    map_text_hash: &'a str,
    env: &'a EnvConfig,
    agent: &'a AgentConfig,
    seed: u64,
    steps: u64,
    early_save: bool,
    stop_after_save: bool,
    /// Content hash of the frozen representation (frozen transfers only).
    source_hash: &'a str,
}

pub fn run_hash(
    kind: &str,
    map_text_hash: &str,
    env: &EnvConfig,
    agent: &AgentConfig,
    seed: u64,
    steps: u64,
    early_save: bool,
    stop_after_save: bool,
    source_hash: &str,
) -> String {
    let inputs = RunInputs {
        kind,
        map_text_hash,
        env,
        agent,
        seed,
        steps,
        early_save,
        stop_after_save,
        source_hash,
    };
    sha256_hex(serde_json::to_string(&inputs).unwrap().as_bytes())
}

/// Renders a map back to its canonical ASCII (content hash input).
pub fn map_text(map: &MazeMap) -> String {
    let mut out = String::new();
    for r in 0..map.height {
        for c in 0..map.width {
            let ch = if map.is_wall((r, c)) {
                '#'
            } else if map.training_goal == Some((r, c)) {
                'T'
            } else {
                '.'
            };
            out.push(ch);
        }
        out.push('\n');
    }
    out
}

/// Writes the per-checkpoint return curve.
pub fn write_trace_csv(dir: &Path, trace: &TrainingTrace) -> Result<()> {
    let rows: Vec<Vec<String>> = trace
        .records
        .iter()
        .map(|r| {
            vec![
                r.step.to_string(),
                csvio::fmt_f64(r.avg_return),
                csvio::fmt_f64(r.avg_td_loss),
            ]
        })
        .collect();
    let text = csvio::render(&["step", "avg_return", "avg_td_loss"], &rows);
    csvio::write_atomic(&dir.join("trace.csv"), &text)
}

/// Writes raw property snapshots (one row per measurement step).
pub fn write_props_csv(dir: &Path, trace: &TrainingTrace) -> Result<()> {
    let rows: Vec<Vec<String>> = trace
        .snapshots
        .iter()
        .map(|s| {
            vec![
                s.step.to_string(),
                (s.is_freeze as u8).to_string(),
                csvio::fmt_f64(s.raw.l_rep),
                csvio::fmt_f64(s.raw.dynamics_awareness),
                csvio::fmt_f64(s.raw.diversity),
                csvio::fmt_f64(s.raw.orthogonality),
                csvio::fmt_f64(s.raw.sparsity),
                s.raw
                    .interference
                    .map(csvio::fmt_f64)
                    .unwrap_or_default(),
                (s.raw.interference_low_confidence as u8).to_string(),
            ]
        })
        .collect();
    let text = csvio::render(
        &[
            "step",
            "is_freeze",
            "l_rep",
            "dynamics_awareness",
            "diversity",
            "orthogonality",
            "sparsity",
            "interference",
            "interference_low_confidence",
        ],
        &rows,
    );
    csvio::write_atomic(&dir.join("props_raw.csv"), &text)
}

#[derive(Debug)]
pub struct Stage1Artifacts {
    pub trace: TrainingTrace,
    pub stamp: RunStamp,
    /// Content hash of the representation checkpoint.
    pub rep_hash: String,
}

/// Trains stage 1 and writes trace.csv, props_raw.csv, rep.ckpt, value.ckpt,
/// done.json into `dir`. Resumes from an existing stamp when the hash
/// matches.
#[allow(clippy::too_many_arguments)]
pub fn stage1_run(
    dir: &Path,
    map: &Arc<MazeMap>,
    obs: &Arc<ObsTable>,
    env: EnvConfig,
    agent_cfg: AgentConfig,
    run_seed: Seed,
    seed_index: u64,
    probe: Option<Arc<ProbeSet>>,
    full_run: bool,
    config_hash: &str,
) -> Result<Stage1Artifacts> {
    let maze = Maze::new(Arc::clone(map), env)?;
    let map_hash = sha256_hex(map_text(map).as_bytes());
    let hash = run_hash(
        "stage1",
        &map_hash,
        &env,
        &agent_cfg,
        seed_index,
        agent_cfg.train_steps,
        true,
        !full_run,
        "",
    );
    if let Some(stamp) = read_stamp(dir) {
        if stamp.run_hash == hash {
            let trace = read_trace(dir)?;
            let rep_hash = file_hash(&dir.join("rep.ckpt"))?;
            return Ok(Stage1Artifacts {
                trace,
                stamp,
                rep_hash,
            });
        }
        return Err(Error::config(format!(
            "{} holds results for a different configuration; delete it to re-run",
            dir.display()
        )));
    }

    let mode = RunMode {
        steps: agent_cfg.train_steps,
        early_save: true,
        stop_after_save: !full_run,
        track_properties: probe.is_some(),
        track_interference: probe.is_some(),
    };
    let activation = agent_cfg.activation;
    let mut agent = DqnAgent::new(maze, Arc::clone(obs), agent_cfg, run_seed, probe)?;
    let mut out = agent.run(mode)?;

    std::fs::create_dir_all(dir)?;
    write_trace_csv(dir, &out.trace)?;
    write_props_csv(dir, &out.trace)?;
    let meta = checkpoint::Meta {
        kind: "representation".into(),
        obs_h: map.height,
        obs_w: map.width,
        activation,
        value_head: None,
        config_hash: config_hash.to_string(),
        saved_at_step: out.saved.step,
        converged: out.saved.converged,
    };
    checkpoint::save(&dir.join("rep.ckpt"), &meta, &mut out.saved.net.trunk)?;
    let vmeta = checkpoint::Meta {
        kind: "value_head".into(),
        value_head: Some(out.saved.net.value.kind),
        ..meta
    };
    checkpoint::save(&dir.join("value.ckpt"), &vmeta, &mut out.saved.net.value)?;

    let stamp = RunStamp {
        run_hash: hash,
        auc: out.trace.auc(),
        saved_at: out.trace.saved_at,
        converged: out.trace.converged,
        final_step: out.trace.final_step,
    };
    write_stamp(dir, &stamp)?;
    let rep_hash = file_hash(&dir.join("rep.ckpt"))?;
    Ok(Stage1Artifacts {
        trace: out.trace,
        stamp,
        rep_hash,
    })
}

fn read_trace(dir: &Path) -> Result<TrainingTrace> {
    let table = csvio::read_table(&dir.join("trace.csv"))?;
    let (ci_step, ci_ret, ci_loss) = (
        table.col("step")?,
        table.col("avg_return")?,
        table.col("avg_td_loss")?,
    );
    let mut trace = TrainingTrace::default();
    for row in &table.rows {
        trace.records.push(crate::agent::ReturnRecord {
            step: row[ci_step]
                .parse()
                .map_err(|e| Error::format(format!("trace.csv step: {e}")))?,
            avg_return: row[ci_ret]
                .parse()
                .map_err(|e| Error::format(format!("trace.csv avg_return: {e}")))?,
            avg_td_loss: row[ci_loss]
                .parse()
                .map_err(|e| Error::format(format!("trace.csv avg_td_loss: {e}")))?,
        });
    }
    Ok(trace)
}

pub fn file_hash(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path)?;
    Ok(sha256_hex(&bytes))
}

/// What provides the representation in a stage-2 run.
#[derive(Debug, Clone)]
pub enum RepSource {
    /// Load and freeze a stage-1 checkpoint.
    Frozen { rep_ckpt: std::path::PathBuf },
    /// Fully trainable network from random init (the Scratch baseline).
    Scratch { activation: Activation },
    /// Frozen randomly initialized trunk (the Random baseline).
    Random { activation: Activation },
    /// Observations straight into the value head (the Input baseline).
    Input,
}

impl RepSource {
    pub fn label(&self) -> &'static str {
        match self {
            RepSource::Frozen { .. } => "frozen",
            RepSource::Scratch { .. } => "scratch",
            RepSource::Random { .. } => "random",
            RepSource::Input => "input",
        }
    }
}

/// Loads a representation checkpoint into a fresh trunk and verifies the
/// architecture matches the manifest.
pub fn load_trunk(rep_ckpt: &Path, map: &MazeMap) -> Result<(Trunk<Real>, checkpoint::Manifest)> {
    let (manifest, tensors) = checkpoint::load(rep_ckpt)?;
    if manifest.kind != "representation" {
        return Err(Error::config(format!(
            "{} is a {:?} checkpoint, not a representation",
            rep_ckpt.display(),
            manifest.kind
        )));
    }
    if manifest.obs_h != map.height || manifest.obs_w != map.width {
        return Err(Error::config(format!(
            "checkpoint grid {}x{} does not match map {}x{}",
            manifest.obs_h, manifest.obs_w, map.height, map.width
        )));
    }
    let mut rng = Seed(0).stream(); // overwritten by the checkpoint values
    let mut trunk = Trunk::new(map.height, map.width, manifest.activation, &mut rng);
    checkpoint::apply(&manifest, &tensors, &mut trunk)?;
    Ok((trunk, manifest))
}

/// Loads a value-head checkpoint matching a representation width.
pub fn load_value_head(
    value_ckpt: &Path,
    rep_dim: usize,
) -> Result<(crate::model::ValueHead<Real>, checkpoint::Manifest)> {
    let (manifest, tensors) = checkpoint::load(value_ckpt)?;
    if manifest.kind != "value_head" {
        return Err(Error::config(format!(
            "{} is a {:?} checkpoint, not a value head",
            value_ckpt.display(),
            manifest.kind
        )));
    }
    let kind = manifest.value_head.unwrap_or(ValueHeadKind::Nonlinear);
    let mut rng = Seed(0).stream();
    let mut head = crate::model::ValueHead::new(rep_dim, crate::gridworld::ACTION_COUNT, kind, &mut rng);
    checkpoint::apply(&manifest, &tensors, &mut head)?;
    Ok((head, manifest))
}

/// Runs one stage-2 transfer and writes trace.csv + done.json. Frozen /
/// random / input sources train only the value head on a precomputed feature
/// table; scratch trains the full network.
#[allow(clippy::too_many_arguments)]
pub fn stage2_run(
    dir: &Path,
    map: &Arc<MazeMap>,
    obs: &Arc<ObsTable>,
    env: EnvConfig,
    mut agent_cfg: AgentConfig,
    source: &RepSource,
    run_seed: Seed,
    seed_index: u64,
) -> Result<RunStamp> {
    agent_cfg.aux = crate::aux::AuxConfig::none(); // no auxiliary losses in transfer
    let map_hash = sha256_hex(map_text(map).as_bytes());
    let source_hash = match source {
        RepSource::Frozen { rep_ckpt } => file_hash(rep_ckpt)?,
        other => other.label().to_string(),
    };
    let steps = agent_cfg.transfer_steps;
    let hash = run_hash(
        &format!("stage2-{}", source.label()),
        &map_hash,
        &env,
        &agent_cfg,
        seed_index,
        steps,
        false,
        false,
        &source_hash,
    );
    if let Some(stamp) = read_stamp(dir) {
        if stamp.run_hash == hash {
            return Ok(stamp);
        }
        return Err(Error::config(format!(
            "{} holds results for a different configuration; delete it to re-run",
            dir.display()
        )));
    }

    let maze = Maze::new(Arc::clone(map), env)?;
    let trace = match source {
        RepSource::Scratch { activation } => {
            agent_cfg.activation = *activation;
            agent_cfg.train_steps = steps;
            let mut agent = DqnAgent::new(maze, Arc::clone(obs), agent_cfg, run_seed, None)?;
            agent.run(RunMode::plain(steps))?.trace
        }
        RepSource::Frozen { rep_ckpt } => {
            let (mut trunk, _manifest) = load_trunk(rep_ckpt, map)?;
            let before: String = trunk_hash(&mut trunk);
            let table = Arc::new(phi_table_from_trunk(&mut trunk, obs));
            let trace = value_only(maze, table, agent_cfg, run_seed, steps)?;
            // the frozen trunk must be bit-identical after training
            debug_assert_eq!(before, trunk_hash(&mut trunk));
            trace
        }
        RepSource::Random { activation } => {
            let mut rng = run_seed.child("init").child("trunk").stream();
            let mut trunk = Trunk::new(map.height, map.width, *activation, &mut rng);
            let table = Arc::new(phi_table_from_trunk(&mut trunk, obs));
            value_only(maze, table, agent_cfg, run_seed, steps)?
        }
        RepSource::Input => {
            let table = Arc::new(phi_table_identity(obs));
            value_only(maze, table, agent_cfg, run_seed, steps)?
        }
    };

    std::fs::create_dir_all(dir)?;
    write_trace_csv(dir, &trace)?;
    let stamp = RunStamp {
        run_hash: hash,
        auc: trace.auc(),
        saved_at: None,
        converged: false,
        final_step: trace.final_step,
    };
    write_stamp(dir, &stamp)?;
    Ok(stamp)
}

fn value_only(
    maze: Maze,
    table: Arc<PhiTable>,
    cfg: AgentConfig,
    run_seed: Seed,
    steps: u64,
) -> Result<TrainingTrace> {
    let mut learner = ValueOnlyLearner::new(maze, table, cfg.value_head, cfg, run_seed)?;
    learner.run(steps)
}

pub fn trunk_hash(trunk: &mut Trunk<Real>) -> String {
    let mut bytes = Vec::new();
    trunk.visit_params(&mut |_, p| {
        for v in p.value.data() {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    });
    sha256_hex(&bytes)
}

/// Builds a full QNetwork from rep + value checkpoints (for `measure`).
pub fn load_model(
    rep_ckpt: &Path,
    value_ckpt: &Path,
    map: &MazeMap,
) -> Result<(QNetwork<Real>, checkpoint::Manifest)> {
    let (trunk, manifest) = load_trunk(rep_ckpt, map)?;
    let (value, _vm) = load_value_head(value_ckpt, trunk.rep_dim())?;
    Ok((QNetwork { trunk, value }, manifest))
}
