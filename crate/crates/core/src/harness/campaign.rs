//! Campaign orchestration: the two-stage pipeline over agent specifications,
//! seeds, and transfer tasks, with stepsize sweeps, baselines, property
//! normalization, and an idempotent on-disk result store.
//!
//! Sub-runs are independent jobs executed by a worker pool; each writes its
//! own directory and is skipped on re-runs when its input hash matches. The
//! merged CSV tables are rebuilt (sorted, single-writer) at the end of every
//! campaign invocation.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use rayon::prelude::*;

use crate::agent::AgentConfig;
use crate::csvio;
use crate::error::{Error, Result};
use crate::gridworld::{Cell, Maze, MazeMap, ObsTable};
use crate::model::Activation;
use crate::properties::{self, ProbeSet};
use crate::rng::Seed;
use crate::task_similarity::{self, RankedTask};

use super::config::{parse_activation, ExperimentConfig, SpecEntry, TaskSelection};
use super::run::{self, RepSource, RunStamp};
use super::sweep::select_best;

pub struct CampaignOutcome {
    pub out_dir: PathBuf,
    pub executed_runs: usize,
    pub reused_runs: usize,
    pub transfer_rows: usize,
}

/// Worker count: REPSCOPE_WORKERS when set, else the machine's parallelism.
pub fn worker_count() -> usize {
    std::env::var("REPSCOPE_WORKERS")
        .ok()
        .and_then(|v| v.parse().ok())
        .filter(|&n| n >= 1)
        .unwrap_or_else(|| {
            std::thread::available_parallelism()
                .map(|n| n.get())
                .unwrap_or(1)
        })
}

fn pool() -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(worker_count())
        .build()
        .map_err(|e| Error::usage(format!("worker pool: {e}")))
}

pub struct CampaignContext {
    pub cfg: ExperimentConfig,
    pub map: Arc<MazeMap>,
    pub obs: Arc<ObsTable>,
    pub training_goal: Cell,
    pub ranked: Vec<RankedTask>,
    pub tasks: Vec<RankedTask>,
    pub probe: Arc<ProbeSet>,
    pub out: PathBuf,
    pub config_hash: String,
    pub master: Seed,
}

impl CampaignContext {
    pub fn prepare(cfg: ExperimentConfig, base_dir: &Path) -> Result<CampaignContext> {
        let map = Arc::new(cfg.load_map(base_dir)?);
        let obs = Arc::new(ObsTable::build(&map));
        let training_goal = cfg.training_goal(&map)?;
        let ranked = task_similarity::rank_tasks(&map, cfg.env.gamma as f64, training_goal)?;
        let tasks: Vec<RankedTask> = match &cfg.campaign.tasks {
            TaskSelection::Keyword(k) if k == "all" => ranked.clone(),
            TaskSelection::Keyword(_) => {
                task_similarity::stratified_tasks(&ranked, cfg.campaign.stratified_count)
            }
            TaskSelection::Goals(goals) => {
                let mut picked = Vec::new();
                for g in goals {
                    let t = ranked
                        .iter()
                        .find(|t| t.goal == *g)
                        .ok_or_else(|| Error::config(format!("task goal {g:?} is not a free cell")))?;
                    picked.push(t.clone());
                }
                picked
            }
        };
        let master = Seed(cfg.campaign.master_seed);
        let env = cfg.env_config(training_goal);
        let maze = Maze::new(Arc::clone(&map), env)?;
        let probe = Arc::new(properties::collect_probe(
            &maze,
            cfg.campaign.probe_size,
            master,
        )?);
        let out = PathBuf::from(&cfg.run.out_dir);
        let config_hash = cfg.config_hash();
        Ok(CampaignContext {
            cfg,
            map,
            obs,
            training_goal,
            ranked,
            tasks,
            probe,
            out,
            config_hash,
            master,
        })
    }

    pub fn spec_activation(&self, spec: &SpecEntry) -> Result<Activation> {
        let mut fta = self.cfg.agent.fta;
        if let Some(eta) = spec.eta {
            fta.eta = eta;
        }
        parse_activation(&spec.activation, &fta)
    }

    fn stage1_dir(&self, spec_label: &str, lr: f64, seed: u32) -> PathBuf {
        self.out
            .join("runs/stage1")
            .join(spec_label)
            .join(format!("lr{lr}"))
            .join(format!("seed{seed}"))
    }

    fn stage2_dir(&self, source: &str, task: Cell, lr: f64, seed: u32) -> PathBuf {
        self.out
            .join("runs/stage2")
            .join(source)
            .join(format!("goal{}-{}", task.0, task.1))
            .join(format!("lr{lr}"))
            .join(format!("seed{seed}"))
    }

    fn stage1_seed(&self, spec_label: &str, seed: u32) -> Seed {
        self.master
            .child("stage1")
            .child(spec_label)
            .child_u64(seed as u64)
    }

    fn stage2_seed(&self, source: &str, task: Cell, seed: u32) -> Seed {
        self.master
            .child("stage2")
            .child(source)
            .child_u64((task.0 as u64) << 32 | task.1 as u64)
            .child_u64(seed as u64)
    }
}

/// One stage-1 sweep over the grid x seeds for one agent spec; returns the
/// selected stepsize and the per-seed artifacts at that stepsize.
pub struct Stage1Selection {
    pub spec_label: String,
    pub best_lr: f64,
    pub rep_ckpts: Vec<PathBuf>,
    pub stamps: Vec<RunStamp>,
}

pub fn sweep_stage1(ctx: &CampaignContext, spec: &SpecEntry) -> Result<(Stage1Selection, usize, usize)> {
    let label = spec.label();
    let activation = ctx.spec_activation(spec)?;
    let aux = ctx.cfg.aux_config(spec.aux, spec.weight);
    let env = ctx.cfg.env_config(ctx.training_goal);
    let grid = ctx.cfg.sweep.stage1.clone();
    let seeds = ctx.cfg.campaign.seeds;
    let full_run = ctx.cfg.sweep.stage1_full_run;

    let mut jobs: Vec<(usize, u32)> = Vec::new();
    for g in 0..grid.len() {
        for s in 0..seeds {
            jobs.push((g, s));
        }
    }
    let executed = std::sync::atomic::AtomicUsize::new(0);
    let reused = std::sync::atomic::AtomicUsize::new(0);
    let results: Vec<Result<(usize, u32, RunStamp)>> = pool()?.install(|| {
        jobs.par_iter()
            .map(|&(g, s)| {
                let lr = grid[g];
                let dir = ctx.stage1_dir(&label, lr, s);
                let had_stamp = run::read_stamp(&dir).is_some();
                let agent_cfg = ctx.cfg.agent_config(activation, aux, lr);
                let art = run::stage1_run(
                    &dir,
                    &ctx.map,
                    &ctx.obs,
                    env,
                    agent_cfg,
                    ctx.stage1_seed(&label, s),
                    s as u64,
                    Some(Arc::clone(&ctx.probe)),
                    full_run,
                    &ctx.config_hash,
                )?;
                if had_stamp {
                    reused.fetch_add(1, std::sync::atomic::Ordering::Relaxed);
                } else {
                    executed.fetch_add(1, std::sync::atomic::Ordering::Relaxed);
                }
                Ok((g, s, art.stamp))
            })
            .collect()
    });
    let mut aucs: Vec<Vec<f64>> = vec![Vec::new(); grid.len()];
    let mut stamps_by: Vec<Vec<Option<RunStamp>>> = vec![vec![None; seeds as usize]; grid.len()];
    for r in results {
        let (g, s, stamp) = r?;
        aucs[g].push(stamp.auc);
        stamps_by[g][s as usize] = Some(stamp);
    }
    let best = select_best(&grid, &aucs);
    let best_lr = grid[best];
    let rep_ckpts: Vec<PathBuf> = (0..seeds)
        .map(|s| ctx.stage1_dir(&label, best_lr, s).join("rep.ckpt"))
        .collect();
    let stamps: Vec<RunStamp> = stamps_by[best]
        .iter()
        .map(|s| s.clone().expect("stamp recorded"))
        .collect();
    if stamps.iter().all(|s| !s.converged) {
        eprintln!(
            "warning: no seed of {label} met the early-saving criterion; keeping final-step representations"
        );
    }
    Ok((
        Stage1Selection {
            spec_label: label,
            best_lr,
            rep_ckpts,
            stamps,
        },
        executed.into_inner(),
        reused.into_inner(),
    ))
}

/// One transfer-AUC sample row.
#[derive(Debug, Clone)]
pub struct TransferRow {
    pub source: String,
    pub spec_label: String,
    pub task_rank: usize,
    pub goal: Cell,
    pub seed: u32,
    pub lr: f64,
    pub auc: f64,
}

/// Stage-2 sweep for one (source family, task): evaluates the grid on every
/// seed, picks the grid point with the best mean AUC, returns the per-seed
/// rows at that stepsize.
#[allow(clippy::too_many_arguments)]
pub fn sweep_stage2(
    ctx: &CampaignContext,
    source_key: &str,
    spec_label: &str,
    sources: &[(u32, RepSource)],
    task: &RankedTask,
    grid: &[f64],
    agent_for: &(dyn Fn(f64) -> AgentConfig + Sync),
    counters: (&std::sync::atomic::AtomicUsize, &std::sync::atomic::AtomicUsize),
) -> Result<Vec<TransferRow>> {
    let env = ctx.cfg.env_config(task.goal);
    let mut jobs: Vec<(usize, usize)> = Vec::new();
    for g in 0..grid.len() {
        for si in 0..sources.len() {
            jobs.push((g, si));
        }
    }
    let results: Vec<Result<(usize, usize, RunStamp)>> = jobs
        .par_iter()
        .map(|&(g, si)| {
            let lr = grid[g];
            let (seed, ref source) = sources[si];
            let dir = ctx.stage2_dir(source_key, task.goal, lr, seed);
            let had_stamp = run::read_stamp(&dir).is_some();
            let stamp = run::stage2_run(
                &dir,
                &ctx.map,
                &ctx.obs,
                env,
                agent_for(lr),
                source,
                ctx.stage2_seed(source_key, task.goal, seed),
                seed as u64,
            )?;
            if had_stamp {
                counters.1.fetch_add(1, std::sync::atomic::Ordering::Relaxed);
            } else {
                counters.0.fetch_add(1, std::sync::atomic::Ordering::Relaxed);
            }
            Ok((g, si, stamp))
        })
        .collect();
    let mut aucs: Vec<Vec<f64>> = vec![Vec::new(); grid.len()];
    let mut all: Vec<Vec<Option<RunStamp>>> = vec![vec![None; sources.len()]; grid.len()];
    for r in results {
        let (g, si, stamp) = r?;
        aucs[g].push(stamp.auc);
        all[g][si] = Some(stamp);
    }
    let best = select_best(grid, &aucs);
    Ok(sources
        .iter()
        .enumerate()
        .map(|(si, (seed, _))| TransferRow {
            source: source_key.to_string(),
            spec_label: spec_label.to_string(),
            task_rank: task.rank,
            goal: task.goal,
            seed: *seed,
            lr: grid[best],
            auc: all[best][si].as_ref().unwrap().auc,
        })
        .collect())
}

/// Full campaign: stage-1 sweeps, freezes, stage-2 sweeps over tasks,
/// baselines, property normalization, merged CSV emission.
pub fn run_campaign(cfg: ExperimentConfig, base_dir: &Path) -> Result<CampaignOutcome> {
    let ctx = CampaignContext::prepare(cfg, base_dir)?;
    std::fs::create_dir_all(&ctx.out)?;
    // persist the resolved config + ranking
    let resolved = toml::to_string_pretty(&ctx.cfg)
        .map_err(|e| Error::format(format!("config serialize: {e}")))?;
    csvio::write_atomic(&ctx.out.join("config.resolved.toml"), &resolved)?;
    write_rank_csv(&ctx.out, &ctx.ranked, ctx.training_goal, &ctx.map)?;

    let mut executed = 0usize;
    let mut reused = 0usize;

    // Stage 1 per spec.
    let mut selections: Vec<(SpecEntry, Stage1Selection)> = Vec::new();
    let specs = expanded_specs(&ctx.cfg);
    for spec in &specs {
        let (sel, ex, re) = sweep_stage1(&ctx, spec)?;
        executed += ex;
        reused += re;
        selections.push((spec.clone(), sel));
    }

    // Stage 2: frozen representations per spec, plus baselines per activation.
    let ex_count = std::sync::atomic::AtomicUsize::new(0);
    let re_count = std::sync::atomic::AtomicUsize::new(0);
    let mut transfer_rows: Vec<TransferRow> = Vec::new();
    let pool = pool()?;
    for (spec, sel) in &selections {
        let activation = ctx.spec_activation(spec)?;
        let d = activation.rep_dim();
        let grid = ctx.cfg.stage2_grid(d).to_vec();
        let sources: Vec<(u32, RepSource)> = sel
            .rep_ckpts
            .iter()
            .enumerate()
            .map(|(s, p)| {
                (
                    s as u32,
                    RepSource::Frozen {
                        rep_ckpt: p.clone(),
                    },
                )
            })
            .collect();
        let source_key = format!("frozen-{}", sel.spec_label);
        for task in &ctx.tasks {
            let rows = pool.install(|| {
                sweep_stage2(
                    &ctx,
                    &source_key,
                    &sel.spec_label,
                    &sources,
                    task,
                    &grid,
                    &|lr| ctx.cfg.agent_config(activation, ctx.cfg.aux_config(crate::aux::AuxKind::None, None), lr),
                    (&ex_count, &re_count),
                )
            })?;
            transfer_rows.extend(rows);
        }
    }

    // Baselines, keyed by activation label so specs sharing an activation
    // share baseline runs.
    let mut baseline_acts: Vec<(String, Activation)> = Vec::new();
    for spec in &specs {
        let act = ctx.spec_activation(spec)?;
        let key = spec_activation_label(spec);
        if !baseline_acts.iter().any(|(k, _)| *k == key) {
            baseline_acts.push((key, act));
        }
    }
    for (act_label, activation) in &baseline_acts {
        for baseline in &ctx.cfg.campaign.baselines {
            let (source, grid): (RepSource, Vec<f64>) = match baseline.as_str() {
                "scratch" => (
                    RepSource::Scratch {
                        activation: *activation,
                    },
                    ctx.cfg.sweep.stage1.clone(),
                ),
                "random" => (
                    RepSource::Random {
                        activation: *activation,
                    },
                    ctx.cfg.stage2_grid(activation.rep_dim()).to_vec(),
                ),
                "input" => (RepSource::Input, ctx.cfg.sweep.stage2_wide.clone()),
                other => return Err(Error::config(format!("unknown baseline {other:?}"))),
            };
            // Input is activation-independent; run it once.
            if baseline == "input" && act_label != &baseline_acts[0].0 {
                continue;
            }
            let source_key = if baseline == "input" {
                "input".to_string()
            } else {
                format!("{baseline}-{act_label}")
            };
            let sources: Vec<(u32, RepSource)> = (0..ctx.cfg.campaign.seeds)
                .map(|s| (s, source.clone()))
                .collect();
            for task in &ctx.tasks {
                let rows = pool.install(|| {
                    sweep_stage2(
                        &ctx,
                        &source_key,
                        &source_key,
                        &sources,
                        task,
                        &grid,
                        &|lr| ctx.cfg.agent_config(*activation, ctx.cfg.aux_config(crate::aux::AuxKind::None, None), lr),
                        (&ex_count, &re_count),
                    )
                })?;
                transfer_rows.extend(rows);
            }
        }
    }
    executed += ex_count.into_inner();
    reused += re_count.into_inner();

    // Merged tables (sorted, rebuilt from scratch = duplicate-free).
    write_transfer_csv(&ctx.out, &mut transfer_rows)?;
    merge_traces(&ctx, &selections)?;
    normalize_properties(&ctx.out, &selections, &ctx)?;

    Ok(CampaignOutcome {
        out_dir: ctx.out.clone(),
        executed_runs: executed,
        reused_runs: reused,
        transfer_rows: transfer_rows.len(),
    })
}

/// The spec list, optionally expanding the FTA/No-aux family over the eta
/// grid (the paper's "No-aux agents test eta = 0.2/0.4/0.6/0.8").
pub fn expanded_specs(cfg: &ExperimentConfig) -> Vec<SpecEntry> {
    let mut out = Vec::new();
    for spec in &cfg.campaign.specs {
        if cfg.campaign.expand_fta_etas
            && spec.activation == "fta"
            && spec.aux == crate::aux::AuxKind::None
        {
            for &eta in &cfg.campaign.fta_eta_grid {
                let mut s = spec.clone();
                s.eta = Some(eta);
                if !out.iter().any(|o: &SpecEntry| o.label() == s.label()) {
                    out.push(s);
                }
            }
        } else if !out.iter().any(|o: &SpecEntry| o.label() == spec.label()) {
            out.push(spec.clone());
        }
    }
    out
}

fn spec_activation_label(spec: &SpecEntry) -> String {
    match (spec.activation.as_str(), spec.eta) {
        ("fta", Some(eta)) => format!("fta{eta}"),
        ("fta", None) => "fta0.2".to_string(),
        (a, _) => a.to_string(),
    }
}

fn write_rank_csv(
    out: &Path,
    ranked: &[RankedTask],
    training_goal: Cell,
    map: &MazeMap,
) -> Result<()> {
    let rows: Vec<Vec<String>> = ranked
        .iter()
        .map(|t| {
            vec![
                t.rank.to_string(),
                t.goal.0.to_string(),
                t.goal.1.to_string(),
                csvio::fmt_f64(t.similarity),
            ]
        })
        .collect();
    let text = csvio::render(&["rank", "goal_row", "goal_col", "similarity"], &rows);
    csvio::write_atomic(&out.join("task_ranks.csv"), &text)?;
    let ascii = task_similarity::rank_map_ascii(map, ranked, training_goal);
    csvio::write_atomic(&out.join("task_ranks.txt"), &ascii)
}

fn write_transfer_csv(out: &Path, rows: &mut [TransferRow]) -> Result<()> {
    rows.sort_by(|a, b| {
        (&a.source, a.task_rank, a.seed)
            .partial_cmp(&(&b.source, b.task_rank, b.seed))
            .unwrap()
    });
    let table: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            vec![
                r.source.clone(),
                r.spec_label.clone(),
                r.task_rank.to_string(),
                r.goal.0.to_string(),
                r.goal.1.to_string(),
                r.seed.to_string(),
                csvio::fmt_f64(r.lr),
                csvio::fmt_f64(r.auc),
            ]
        })
        .collect();
    let text = csvio::render(
        &[
            "source",
            "spec",
            "task_rank",
            "goal_row",
            "goal_col",
            "seed",
            "lr",
            "auc",
        ],
        &table,
    );
    csvio::write_atomic(&out.join("transfer_auc.csv"), &text)
}

/// Concatenates the selected stage-1 runs' return curves into one table.
fn merge_traces(ctx: &CampaignContext, selections: &[(SpecEntry, Stage1Selection)]) -> Result<()> {
    let mut rows: Vec<Vec<String>> = Vec::new();
    for (_, sel) in selections {
        for seed in 0..ctx.cfg.campaign.seeds {
            let dir = ctx.stage1_dir(&sel.spec_label, sel.best_lr, seed);
            let table = csvio::read_table(&dir.join("trace.csv"))?;
            for row in &table.rows {
                rows.push(vec![
                    sel.spec_label.clone(),
                    csvio::fmt_f64(sel.best_lr),
                    seed.to_string(),
                    row[0].clone(),
                    row[1].clone(),
                    row[2].clone(),
                ]);
            }
        }
    }
    let text = csvio::render(
        &["spec", "lr", "seed", "step", "avg_return", "avg_td_loss"],
        &rows,
    );
    csvio::write_atomic(&ctx.out.join("training_traces.csv"), &text)
}

/// Two-pass property normalization: pass 1 collects every raw row from the
/// selected stage-1 runs; pass 2 computes the population normalizers
/// (L_max over all representations and time steps; MaxInterference over all
/// representations) and writes the normalized table.
fn normalize_properties(
    out: &Path,
    selections: &[(SpecEntry, Stage1Selection)],
    ctx: &CampaignContext,
) -> Result<()> {
    #[derive(Clone)]
    struct RawRow {
        spec: String,
        seed: u32,
        step: u64,
        is_freeze: bool,
        vals: Vec<String>,
        l_rep: f64,
        interference: Option<f64>,
    }
    let mut raw_rows: Vec<RawRow> = Vec::new();
    for (_, sel) in selections {
        for seed in 0..ctx.cfg.campaign.seeds {
            let dir = ctx.stage1_dir(&sel.spec_label, sel.best_lr, seed);
            let path = dir.join("props_raw.csv");
            if !path.exists() {
                continue;
            }
            let table = csvio::read_table(&path)?;
            for row in &table.rows {
                let l_rep: f64 = row[2]
                    .parse()
                    .map_err(|e| Error::format(format!("props l_rep: {e}")))?;
                let interference = if row[7].is_empty() {
                    None
                } else {
                    Some(
                        row[7]
                            .parse()
                            .map_err(|e| Error::format(format!("props interference: {e}")))?,
                    )
                };
                raw_rows.push(RawRow {
                    spec: sel.spec_label.clone(),
                    seed,
                    step: row[0].parse().unwrap_or(0),
                    is_freeze: row[1] == "1",
                    vals: row.clone(),
                    l_rep,
                    interference,
                });
            }
        }
    }
    raw_rows.sort_by(|a, b| (&a.spec, a.seed, a.step).cmp(&(&b.spec, b.seed, b.step)));

    // merged raw table
    let raw_table: Vec<Vec<String>> = raw_rows
        .iter()
        .map(|r| {
            let mut v = vec![r.spec.clone(), r.seed.to_string()];
            v.extend(r.vals.iter().cloned());
            v
        })
        .collect();
    let raw_text = csvio::render(
        &[
            "spec",
            "seed",
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
        &raw_table,
    );
    csvio::write_atomic(&out.join("properties_raw.csv"), &raw_text)?;

    // pass 2: population normalizers
    let l_max = raw_rows.iter().map(|r| r.l_rep).fold(0.0f64, f64::max);
    let max_interference = raw_rows
        .iter()
        .filter_map(|r| r.interference)
        .fold(f64::NEG_INFINITY, f64::max);
    let norm_table: Vec<Vec<String>> = raw_rows
        .iter()
        .map(|r| {
            let cr = properties::complexity_reduction(r.l_rep, l_max);
            let ni = r.interference.map(|i| {
                properties::non_interference(
                    i,
                    if max_interference.is_finite() {
                        max_interference
                    } else {
                        0.0
                    },
                )
            });
            vec![
                r.spec.clone(),
                r.seed.to_string(),
                r.step.to_string(),
                (r.is_freeze as u8).to_string(),
                csvio::fmt_f64(cr),
                r.vals[3].clone(), // dynamics awareness
                r.vals[4].clone(), // diversity
                r.vals[5].clone(), // orthogonality
                r.vals[6].clone(), // sparsity
                ni.map(csvio::fmt_f64).unwrap_or_default(),
            ]
        })
        .collect();
    let norm_text = csvio::render(
        &[
            "spec",
            "seed",
            "step",
            "is_freeze",
            "complexity_reduction",
            "dynamics_awareness",
            "diversity",
            "orthogonality",
            "sparsity",
            "non_interference",
        ],
        &norm_table,
    );
    csvio::write_atomic(&out.join("properties_norm.csv"), &norm_text)
}
