//! Command-line front end: train / transfer / measure / rank-tasks /
//! campaign / report.
//!
//! Exit codes: 0 success, 2 usage or configuration error, 3 numerical
//! failure.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};

use repscope_core::agent::features_and_values;
use repscope_core::csvio;
use repscope_core::error::Error;
use repscope_core::gridworld::ObsTable;
use repscope_core::harness::{
    campaign, config::parse_activation, report, run, ExperimentConfig, RepSource,
};
use repscope_core::properties;
use repscope_core::rng::Seed;
use repscope_core::task_similarity;

#[derive(Parser)]
#[command(
    name = "repscope",
    about = "Trains maze DQN representations under auxiliary losses, transfers them to new goals, and measures representation properties",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct ConfigArgs {
    /// Experiment config file (TOML); defaults apply when omitted.
    #[arg(long, short = 'c')]
    config: Option<PathBuf>,
    /// Dotted-path overrides, e.g. --set agent.activation=fta (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Output directory (overrides run.out_dir).
    #[arg(long, short = 'o')]
    out: Option<PathBuf>,
}

impl ConfigArgs {
    fn load(&self) -> repscope_core::Result<(ExperimentConfig, PathBuf)> {
        let mut overrides = self.overrides.clone();
        if let Some(out) = &self.out {
            overrides.push(format!("run.out_dir={}", out.display()));
        }
        let cfg = ExperimentConfig::load(self.config.as_deref(), &overrides)?;
        let base = self
            .config
            .as_deref()
            .and_then(Path::parent)
            .unwrap_or(Path::new("."))
            .to_path_buf();
        Ok((cfg, base))
    }
}

#[derive(Subcommand)]
enum Command {
    /// Stage 1: train a representation on the training task (early-saving
    /// the trunk), writing rep.ckpt, value.ckpt, trace.csv, props_raw.csv.
    Train {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Auxiliary task for this run (overrides aux.kind).
        #[arg(long)]
        aux: Option<String>,
        /// Stage-1 stepsize (no sweep; single run).
        #[arg(long)]
        lr: Option<f64>,
        /// Run seed index.
        #[arg(long, default_value_t = 0)]
        seed: u32,
        /// Stop as soon as the early-saving criterion fires instead of
        /// training the full budget.
        #[arg(long)]
        stop_after_save: bool,
    },
    /// Stage 2: train a fresh value head on a frozen representation (or a
    /// baseline) in a transfer task.
    Transfer {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Stage-1 representation checkpoint (required unless --baseline).
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Baseline instead of a checkpoint: scratch | random | input.
        #[arg(long)]
        baseline: Option<String>,
        /// Transfer goal as `row,col` (defaults to the training goal).
        #[arg(long)]
        goal: Option<String>,
        #[arg(long)]
        lr: Option<f64>,
        #[arg(long, default_value_t = 0)]
        seed: u32,
    },
    /// Measure the six representation properties of a checkpoint on the
    /// probe set.
    Measure {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Representation checkpoint.
        #[arg(long)]
        checkpoint: PathBuf,
        /// Matching value-head checkpoint (defaults to value.ckpt next to
        /// the representation).
        #[arg(long)]
        value_head: Option<PathBuf>,
        /// Probe seed (the measurement dataset is a pure function of map +
        /// this seed).
        #[arg(long, default_value_t = 94281)]
        probe_seed: u64,
        /// Also run the algebraic identity checks and report pass/fail.
        #[arg(long)]
        appendix_checks: bool,
    },
    /// Rank all transfer tasks by successor-representation similarity to
    /// the training task.
    RankTasks {
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Full two-stage campaign: stage-1 sweeps, freezes, stage-2 sweeps over
    /// tasks, baselines, property normalization. Resumes completed sub-runs.
    Campaign {
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Build report tables (performance vs similarity, property scatter,
    /// property-over-time, property correlations) from a campaign store.
    Report {
        #[command(flatten)]
        cfg: ConfigArgs,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            match err {
                Error::Numerical(_) => ExitCode::from(3),
                _ => ExitCode::from(2),
            }
        }
    }
}

fn dispatch(cli: Cli) -> repscope_core::Result<()> {
    match cli.command {
        Command::Train {
            cfg,
            aux,
            lr,
            seed,
            stop_after_save,
        } => cmd_train(cfg, aux, lr, seed, stop_after_save),
        Command::Transfer {
            cfg,
            checkpoint,
            baseline,
            goal,
            lr,
            seed,
        } => cmd_transfer(cfg, checkpoint, baseline, goal, lr, seed),
        Command::Measure {
            cfg,
            checkpoint,
            value_head,
            probe_seed,
            appendix_checks,
        } => cmd_measure(cfg, checkpoint, value_head, probe_seed, appendix_checks),
        Command::RankTasks { cfg } => cmd_rank_tasks(cfg),
        Command::Campaign { cfg } => cmd_campaign(cfg),
        Command::Report { cfg } => cmd_report(cfg),
    }
}

fn parse_goal(spec: &str) -> repscope_core::Result<(usize, usize)> {
    let (r, c) = spec
        .split_once(',')
        .ok_or_else(|| Error::usage(format!("goal {spec:?} must be row,col")))?;
    let row = r
        .trim()
        .parse()
        .map_err(|e| Error::usage(format!("goal row: {e}")))?;
    let col = c
        .trim()
        .parse()
        .map_err(|e| Error::usage(format!("goal col: {e}")))?;
    Ok((row, col))
}

fn cmd_train(
    args: ConfigArgs,
    aux: Option<String>,
    lr: Option<f64>,
    seed: u32,
    stop_after_save: bool,
) -> repscope_core::Result<()> {
    let mut overrides = Vec::new();
    if let Some(aux) = aux {
        overrides.push(format!("aux.kind={aux}"));
    }
    let args = ConfigArgs {
        overrides: [args.overrides.clone(), overrides].concat(),
        ..args
    };
    let (cfg, base) = args.load()?;
    let map = Arc::new(cfg.load_map(&base)?);
    let obs = Arc::new(ObsTable::build(&map));
    let goal = cfg.training_goal(&map)?;
    let env = cfg.env_config(goal);
    let activation = parse_activation(&cfg.agent.activation, &cfg.agent.fta)?;
    let lr = lr.unwrap_or(cfg.sweep.stage1[0]);
    let agent_cfg = cfg.agent_config(activation, cfg.aux_config(cfg.aux.kind, None), lr);
    let master = Seed(cfg.campaign.master_seed);
    let maze = repscope_core::gridworld::Maze::new(Arc::clone(&map), env)?;
    let probe = Arc::new(properties::collect_probe(
        &maze,
        cfg.campaign.probe_size,
        master,
    )?);
    let out_dir = PathBuf::from(&cfg.run.out_dir);
    let label = format!("{}-{}", cfg.agent.activation, cfg.aux.kind.label());
    let dir = out_dir
        .join("runs/stage1")
        .join(&label)
        .join(format!("lr{lr}"))
        .join(format!("seed{seed}"));
    let art = run::stage1_run(
        &dir,
        &map,
        &obs,
        env,
        agent_cfg,
        master.child("stage1").child(&label).child_u64(seed as u64),
        seed as u64,
        Some(probe),
        !stop_after_save,
        &cfg.config_hash(),
    )?;
    println!(
        "stage-1 run complete: {} (AUC {}, {})",
        dir.display(),
        csvio::fmt_f64(art.stamp.auc),
        match art.stamp.saved_at {
            Some(s) => format!("representation saved at step {s}"),
            None => "unconverged: kept final-step representation".to_string(),
        }
    );
    Ok(())
}

fn cmd_transfer(
    args: ConfigArgs,
    checkpoint: Option<PathBuf>,
    baseline: Option<String>,
    goal: Option<String>,
    lr: Option<f64>,
    seed: u32,
) -> repscope_core::Result<()> {
    let (cfg, base) = args.load()?;
    let map = Arc::new(cfg.load_map(&base)?);
    let obs = Arc::new(ObsTable::build(&map));
    let goal = match goal {
        Some(g) => parse_goal(&g)?,
        None => cfg.training_goal(&map)?,
    };
    if map.id_of(goal).is_none() {
        return Err(Error::config(format!("goal {goal:?} is not a free cell")));
    }
    let env = cfg.env_config(goal);
    let activation = parse_activation(&cfg.agent.activation, &cfg.agent.fta)?;
    let (source, label, d): (RepSource, String, usize) = match (&checkpoint, &baseline) {
        (Some(ckpt), None) => {
            let (trunk, _m) = run::load_trunk(ckpt, &map)?;
            let d = trunk.rep_dim();
            (
                RepSource::Frozen {
                    rep_ckpt: ckpt.clone(),
                },
                "frozen".to_string(),
                d,
            )
        }
        (None, Some(b)) => match b.as_str() {
            "scratch" => (
                RepSource::Scratch { activation },
                "scratch".into(),
                activation.rep_dim(),
            ),
            "random" => (
                RepSource::Random { activation },
                "random".into(),
                activation.rep_dim(),
            ),
            "input" => (RepSource::Input, "input".into(), obs.dim),
            other => return Err(Error::usage(format!("unknown baseline {other:?}"))),
        },
        (Some(_), Some(_)) => {
            return Err(Error::usage("--checkpoint and --baseline are exclusive"))
        }
        (None, None) => {
            return Err(Error::usage("transfer needs --checkpoint or --baseline"))
        }
    };
    let lr = lr.unwrap_or_else(|| {
        if matches!(source, RepSource::Scratch { .. }) {
            cfg.sweep.stage1[0]
        } else {
            cfg.stage2_grid(d)[0]
        }
    });
    let agent_cfg = cfg.agent_config(
        activation,
        cfg.aux_config(repscope_core::aux::AuxKind::None, None),
        lr,
    );
    let out_dir = PathBuf::from(&cfg.run.out_dir);
    let dir = out_dir
        .join("runs/stage2")
        .join(&label)
        .join(format!("goal{}-{}", goal.0, goal.1))
        .join(format!("lr{lr}"))
        .join(format!("seed{seed}"));
    let master = Seed(cfg.campaign.master_seed);
    let stamp = run::stage2_run(
        &dir,
        &map,
        &obs,
        env,
        agent_cfg,
        &source,
        master
            .child("stage2")
            .child(&label)
            .child_u64((goal.0 as u64) << 32 | goal.1 as u64)
            .child_u64(seed as u64),
        seed as u64,
    )?;
    println!(
        "stage-2 run complete: {} (AUC {})",
        dir.display(),
        csvio::fmt_f64(stamp.auc)
    );
    Ok(())
}

fn cmd_measure(
    args: ConfigArgs,
    checkpoint: PathBuf,
    value_head: Option<PathBuf>,
    probe_seed: u64,
    appendix_checks: bool,
) -> repscope_core::Result<()> {
    let (cfg, base) = args.load()?;
    let map = Arc::new(cfg.load_map(&base)?);
    let obs = ObsTable::build(&map);
    let value_path = value_head.unwrap_or_else(|| checkpoint.with_file_name("value.ckpt"));
    if !value_path.exists() {
        return Err(Error::config(format!(
            "value-head checkpoint not found at {} (use --value-head)",
            value_path.display()
        )));
    }
    let (mut net, manifest) = run::load_model(&checkpoint, &value_path, &map)?;
    let goal = cfg.training_goal(&map)?;
    let maze = repscope_core::gridworld::Maze::new(Arc::clone(&map), cfg.env_config(goal))?;
    let probe = properties::collect_probe(&maze, cfg.campaign.probe_size, Seed(probe_seed))?;
    let (phi, phi_next, v) = features_and_values(&mut net, &obs, &probe)?;
    let n = probe.len();
    let d = net.trunk.rep_dim();
    let raw = properties::measure_raw(&phi, &phi_next, &v, &probe.pairing, n, d, &[]);

    let out_dir = PathBuf::from(&cfg.run.out_dir);
    let rows = vec![vec![
        checkpoint
            .file_stem()
            .unwrap_or_default()
            .to_string_lossy()
            .to_string(),
        manifest.activation.label().to_string(),
        manifest.config_hash.clone(),
        manifest.saved_at_step.to_string(),
        csvio::fmt_f64(raw.l_rep),
        csvio::fmt_f64(raw.dynamics_awareness),
        csvio::fmt_f64(raw.diversity),
        csvio::fmt_f64(raw.orthogonality),
        csvio::fmt_f64(raw.sparsity),
        String::new(), // interference needs a training trace
    ]];
    let text = csvio::render(
        &[
            "checkpoint",
            "activation",
            "config_hash",
            "saved_at_step",
            "l_rep",
            "dynamics_awareness",
            "diversity",
            "orthogonality",
            "sparsity",
            "interference",
        ],
        &rows,
    );
    let out_path = out_dir.join("measure.csv");
    csvio::write_atomic(&out_path, &text)?;
    println!("measured {} -> {}", checkpoint.display(), out_path.display());
    println!(
        "l_rep={} dynamics_awareness={} diversity={} orthogonality={} sparsity={}",
        csvio::fmt_f64(raw.l_rep),
        csvio::fmt_f64(raw.dynamics_awareness),
        csvio::fmt_f64(raw.diversity),
        csvio::fmt_f64(raw.orthogonality),
        csvio::fmt_f64(raw.sparsity),
    );

    if appendix_checks {
        let identity = properties::appendix_identity_check(&phi, n, d);
        // orthogonal linear update: disjoint-support features leave the
        // other prediction exactly unchanged
        let phi1 = [1.0f64, 2.0, 0.0, 0.0];
        let phi2 = [0.0f64, 0.0, 3.0, -1.0];
        let w0 = [0.5f64, -0.25, 0.125, 1.0];
        let alpha_delta = 0.7;
        let updated: Vec<f64> = w0
            .iter()
            .zip(&phi1)
            .map(|(w, p)| w + alpha_delta * p)
            .collect();
        let before: f64 = phi2.iter().zip(&w0).map(|(a, b)| a * b).sum();
        let after: f64 = phi2.iter().zip(&updated).map(|(a, b)| a * b).sum();
        let no_interference = before == after;
        // centered features: orthogonality sum equals correlation sum
        let centered = {
            let cols = [[1.0f64, -1.0, 2.0, -2.0], [3.0, -3.0, 1.0, -1.0]];
            let mut orth = 0.0;
            let mut corr = 0.0;
            for k in &cols {
                for l in &cols {
                    let dot: f64 = k.iter().zip(l).map(|(a, b)| a * b).sum();
                    orth += dot;
                    let mk: f64 = k.iter().sum::<f64>() / 4.0;
                    let ml: f64 = l.iter().sum::<f64>() / 4.0;
                    let cdot: f64 =
                        k.iter().zip(l).map(|(a, b)| (a - mk) * (b - ml)).sum();
                    corr += cdot;
                }
            }
            orth == corr
        };
        println!(
            "appendix checks: identity={} linear_update_zero_interference={} centered_equivalence={}",
            pass(identity),
            pass(no_interference),
            pass(centered)
        );
        if !(identity && no_interference && centered) {
            return Err(Error::numerical("appendix identity check failed"));
        }
    }
    Ok(())
}

fn pass(ok: bool) -> &'static str {
    if ok {
        "pass"
    } else {
        "FAIL"
    }
}

fn cmd_rank_tasks(args: ConfigArgs) -> repscope_core::Result<()> {
    let (cfg, base) = args.load()?;
    let map = cfg.load_map(&base)?;
    let goal = cfg.training_goal(&map)?;
    let ranked = task_similarity::rank_tasks(&map, cfg.env.gamma as f64, goal)?;
    let out_dir = PathBuf::from(&cfg.run.out_dir);
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
    csvio::write_atomic(&out_dir.join("task_ranks.csv"), &text)?;
    let ascii = task_similarity::rank_map_ascii(&map, &ranked, goal);
    csvio::write_atomic(&out_dir.join("task_ranks.txt"), &ascii)?;
    print!("{ascii}");
    println!(
        "{} tasks ranked; tables in {}",
        ranked.len(),
        out_dir.display()
    );
    Ok(())
}

fn cmd_campaign(args: ConfigArgs) -> repscope_core::Result<()> {
    let (cfg, base) = args.load()?;
    let outcome = campaign::run_campaign(cfg, &base)?;
    println!(
        "campaign complete: {} transfer rows in {} ({} sub-runs executed, {} reused)",
        outcome.transfer_rows,
        outcome.out_dir.display(),
        outcome.executed_runs,
        outcome.reused_runs
    );
    Ok(())
}

fn cmd_report(args: ConfigArgs) -> repscope_core::Result<()> {
    let (cfg, _base) = args.load()?;
    let out = PathBuf::from(&cfg.run.out_dir);
    let written = report::write_reports(&out)?;
    for f in &written {
        println!("wrote {}", out.join(f).display());
    }
    Ok(())
}
