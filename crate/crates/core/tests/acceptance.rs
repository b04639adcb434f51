//! Acceptance suite: one test per criterion, each printing a PASS/FAIL line
//! (run with `--nocapture` to watch progress).
//!
//! The training-based criteria (6, 7, 9) run real agents on the default map
//! and cache their sub-runs under `target/tmp/`, so a re-run of the suite
//! reuses completed runs byte-for-byte. A fresh run of the full suite is a
//! multi-hour computation on a 2-core machine (the stage-2 Scratch baselines
//! dominate); every other criterion completes in seconds.

use std::path::{Path, PathBuf};
use std::sync::{Arc, OnceLock};
use std::time::Instant;

use repscope_core::agent::AgentConfig;
use repscope_core::aux::{AuxConfig, AuxKind};
use repscope_core::csvio;
use repscope_core::gridworld::{Action, EnvConfig, Maze, MazeMap, ObsTable};
use repscope_core::harness::campaign::{sweep_stage2, CampaignContext, TransferRow};
use repscope_core::harness::{run, ExperimentConfig, RepSource};
use repscope_core::model::Activation;
use repscope_core::nn::{fta_forward, FtaConfig};
use repscope_core::properties::{self, Pairwise};
use repscope_core::rng::Seed;
use repscope_core::task_similarity::{
    self, successor_profile, task_similarity, RankedTask, TabularMdp,
};

// ---------------------------------------------------------------------------
// Pinned experiment constants.
//
// Stage-1 stepsizes were selected by running the spec's stage-1 grid
// [1e-3, 3e-4, 1e-4, 3e-5, 1e-5] on the default map and comparing training
// AUC / time-to-save: for relu32, 1e-3 diverges and 3e-4 converges fastest;
// for fta, 1e-3 and 3e-4 collapse the pre-activations into the clipped FTA
// region while 1e-4 converges fastest. The Scratch baseline uses the same
// grid (and therefore the same winner) per the training-grid convention.
// Frozen stage-2 stepsizes are swept in-suite over the spec's stage-2 grids.
// ---------------------------------------------------------------------------
const STAGE1_LR_RELU: f64 = 3e-4;
const STAGE1_LR_FTA: f64 = 1e-4;
const SCRATCH_LR_RELU: f64 = STAGE1_LR_RELU;
const SCRATCH_LR_FTA: f64 = STAGE1_LR_FTA;
const STAGE1_SEEDS: u32 = 5;
const TRANSFER_SEEDS: u32 = 3;
const N_TASKS: usize = 10;
const MASTER_SEED: u64 = 94281;

fn accept_dir() -> PathBuf {
    Path::new(env!("CARGO_TARGET_TMPDIR")).join("acceptance")
}

fn pass(name: &str, detail: String) {
    println!("[acceptance] {name}: PASS — {detail}");
}

struct World {
    cfg: ExperimentConfig,
    ctx: CampaignContext,
}

fn world() -> &'static World {
    static WORLD: OnceLock<World> = OnceLock::new();
    WORLD.get_or_init(|| {
        let overrides = vec![
            format!("run.out_dir={}", accept_dir().display()),
            format!("campaign.master_seed={MASTER_SEED}"),
            format!("campaign.seeds={STAGE1_SEEDS}"),
            format!("campaign.stratified_count={N_TASKS}"),
            "sweep.stage1_full_run=false".to_string(),
        ];
        let cfg = ExperimentConfig::load(None, &overrides).unwrap();
        let ctx = CampaignContext::prepare(cfg.clone(), Path::new(".")).unwrap();
        World { cfg, ctx }
    })
}

struct SpecRuns {
    label: &'static str,
    activation: Activation,
    lr: f64,
    converged: Vec<bool>,
    saved_steps: Vec<Option<u64>>,
    rep_ckpts: Vec<PathBuf>,
    run_dirs: Vec<PathBuf>,
}

/// Criterion-6 runs: 2 specs x 5 seeds of stage-1 training at the pinned
/// stepsizes, early-stopping at the save point. Cached across suite runs.
fn stage1_runs() -> &'static Vec<SpecRuns> {
    static RUNS: OnceLock<Vec<SpecRuns>> = OnceLock::new();
    RUNS.get_or_init(|| {
        let w = world();
        let mut out = Vec::new();
        for (label, activation, lr) in [
            ("relu32-none", Activation::Relu32, STAGE1_LR_RELU),
            (
                "fta0.2-none",
                Activation::Fta(FtaConfig::default()),
                STAGE1_LR_FTA,
            ),
        ] {
            let env = w.cfg.env_config(w.ctx.training_goal);
            let mut spec_runs = SpecRuns {
                label,
                activation,
                lr,
                converged: Vec::new(),
                saved_steps: Vec::new(),
                rep_ckpts: Vec::new(),
                run_dirs: Vec::new(),
            };
            for seed in 0..STAGE1_SEEDS {
                let dir = accept_dir()
                    .join("runs/stage1")
                    .join(label)
                    .join(format!("lr{lr}"))
                    .join(format!("seed{seed}"));
                let agent_cfg =
                    w.cfg
                        .agent_config(activation, AuxConfig::of_kind(AuxKind::None), lr);
                let t = Instant::now();
                let art = run::stage1_run(
                    &dir,
                    &w.ctx.map,
                    &w.ctx.obs,
                    env,
                    agent_cfg,
                    Seed(MASTER_SEED)
                        .child("stage1")
                        .child(label)
                        .child_u64(seed as u64),
                    seed as u64,
                    Some(Arc::clone(&w.ctx.probe)),
                    false, // stop after the early save
                    "acceptance",
                )
                .unwrap();
                println!(
                    "[acceptance]   stage1 {label} seed {seed}: {} ({:.0}s)",
                    match art.stamp.saved_at {
                        Some(s) => format!("saved at {s}"),
                        None => format!("unconverged after {}", art.stamp.final_step),
                    },
                    t.elapsed().as_secs_f64()
                );
                spec_runs.converged.push(art.stamp.converged);
                spec_runs.saved_steps.push(art.stamp.saved_at);
                spec_runs.rep_ckpts.push(dir.join("rep.ckpt"));
                spec_runs.run_dirs.push(dir);
            }
            out.push(spec_runs);
        }
        out
    })
}

// ---------------------------------------------------------------------------
// Criterion 1: gradient fidelity for every layer and auxiliary loss.
// The layer checks live in layer_gradients.rs and the per-loss checks in
// aux_gradients.rs; this criterion re-runs the same machinery end to end and
// enforces the 1-minute budget.
// ---------------------------------------------------------------------------
#[test]
fn criterion_1_gradient_fidelity() {
    use repscope_core::model::{Trunk, ValueHead, ValueHeadKind};
    use repscope_core::nn::gradcheck::{check_param_grads, snapshot_grads, worst, FD_TOL};
    use repscope_core::tensor::{Param, Parameterized};

    let t0 = Instant::now();
    let text = (0..7).map(|_| ".".repeat(7)).collect::<Vec<_>>().join("\n");
    let map = Arc::new(MazeMap::parse(&text).unwrap());
    let obs_dim = 7 * 7 * 3;
    let mut obs64 = Vec::new();
    for id in 0..map.num_states() {
        let img = map.render(map.cell_of(id as u16));
        obs64.extend(img.data().iter().map(|&v| v as f64));
    }
    let b = 4usize;
    let batch: Vec<repscope_core::gridworld::Transition> = (0..b)
        .map(|i| repscope_core::gridworld::Transition {
            s: (i * 11 % 49) as u16,
            a: Action::from_index(i % 4),
            s_next: ((i * 17 + 5) % 49) as u16,
            reward: if i == 2 { 1.0 } else { 0.0 },
            discount: if i == 2 { 0.0 } else { 0.99 },
            truncated: false,
        })
        .collect();
    let gather = |ids: &mut dyn Iterator<Item = u16>| -> Vec<f64> {
        let mut out = Vec::new();
        for id in ids {
            out.extend_from_slice(&obs64[id as usize * obs_dim..(id as usize + 1) * obs_dim]);
        }
        out
    };

    struct Net {
        trunk: Trunk<f64>,
        value: ValueHead<f64>,
        aux: repscope_core::aux::AuxHead<f64>,
    }
    impl Parameterized<f64> for Net {
        fn visit_params(&mut self, f: &mut dyn FnMut(&str, &mut Param<f64>)) {
            self.trunk.visit_params(f);
            self.value.visit_params(f);
            self.aux.visit_params(f);
        }
    }

    let mut worst_err: f64 = 0.0;
    let mut checked_losses = 0;
    for kind in [
        AuxKind::None, // plain TD objective through trunk + value head
        AuxKind::Ir,
        AuxKind::Nas,
        AuxKind::Sf,
        AuxKind::Reward,
        AuxKind::Xy,
        AuxKind::VirtualVf1,
        AuxKind::VirtualVf5,
        AuxKind::Atc,
    ] {
        for activation in [
            Activation::Relu32,
            Activation::Fta(FtaConfig { k: 20, eta: 0.2 }),
        ] {
            // the full per-kind sweep at relu32; the FTA trunk re-check runs
            // on two representative losses to stay inside the budget
            if matches!(activation, Activation::Fta(_))
                && !matches!(kind, AuxKind::None | AuxKind::Nas)
            {
                continue;
            }
            let mut rng_init = Seed(4100 + kind as u64).child("trunk").stream();
            let trunk = Trunk::new(7, 7, activation, &mut rng_init);
            let mut rng_v = Seed(4200).child("value").stream();
            let value = ValueHead::new(trunk.rep_dim(), 4, ValueHeadKind::Nonlinear, &mut rng_v);
            let aux = repscope_core::aux::AuxHead::build(
                &AuxConfig::of_kind(kind),
                &trunk,
                &map,
                Seed(4300 + kind as u64),
            )
            .unwrap();
            let mut net = Net { trunk, value, aux };
            let d = net.trunk.rep_dim();
            let mut rng = Seed(4400 + kind as u64).stream();
            // synthetic targets (constants under differentiation)
            let bootstrap: Vec<f64> = (0..b).map(|_| rng.uniform_in(0.0, 1.0)).collect();
            let sf: Vec<f64> = (0..b * d).map(|_| rng.uniform_in(-0.5, 0.5)).collect();
            let n_goals = net.aux.n_virtual_goals();
            let vvf: Vec<f64> = (0..n_goals * b).map(|_| rng.uniform_in(0.0, 1.0)).collect();
            let xy: Vec<f64> = batch
                .iter()
                .flat_map(|tr| {
                    let (row, col) = map.cell_of(tr.s);
                    [col as f64, row as f64]
                })
                .collect();
            let neg: Vec<usize> = (0..b).map(|i| (i + 1) % b).collect();
            let obs_anchor = gather(&mut batch.iter().map(|t| t.s));
            let obs_next = gather(&mut batch.iter().map(|t| t.s_next));
            let weight = 0.7;

            let (batch_c, bootstrap_c, sf_c, vvf_c, xy_c, neg_c) = (
                batch.clone(),
                bootstrap.clone(),
                sf.clone(),
                vvf.clone(),
                xy.clone(),
                neg.clone(),
            );
            let (obs_anchor_c, obs_next_c) = (obs_anchor.clone(), obs_next.clone());
            let loss_fn = move |net: &mut Net| -> f64 {
                let needs_next = net.aux.needs_next_phi();
                let rows = if needs_next { 2 * b } else { b };
                let mut obs = obs_anchor_c.clone();
                if needs_next {
                    obs.extend_from_slice(&obs_next_c);
                }
                let mut phi = Vec::new();
                net.trunk.forward(&obs, rows, &mut phi);
                let mut q = Vec::new();
                net.value.forward(&phi[..b * d], b, &mut q);
                // TD part: squared error on the selected actions
                let mut loss = 0.0;
                for (i, tr) in batch_c.iter().enumerate() {
                    let diff = q[i * 4 + tr.a.index()] - bootstrap_c[i];
                    loss += diff * diff / b as f64;
                }
                if net.aux.is_atc() {
                    let l = net
                        .aux
                        .compute_atc(&mut net.trunk, &obs_anchor_c, &obs_next_c, b, weight);
                    return loss + weight * l;
                }
                let ctx = repscope_core::aux::AuxCtx {
                    weight,
                    batch: &batch_c,
                    obs_t: &obs[..b * obs_dim],
                    xy_targets: &xy_c,
                    sf_targets: &sf_c,
                    vvf_targets: &vvf_c,
                    neg_idx: &neg_c,
                };
                let mut dphi = vec![0.0; rows * d];
                let l = net.aux.compute(&ctx, &phi, &mut dphi, d);
                loss + weight * l
            };

            // analytic gradients via the same assembly the agent uses
            let mut loss_fn_grad = loss_fn.clone();
            net.zero_grads();
            {
                let needs_next = net.aux.needs_next_phi();
                let rows = if needs_next { 2 * b } else { b };
                let mut obs = gather(&mut batch.iter().map(|t| t.s));
                if needs_next {
                    obs.extend_from_slice(&gather(&mut batch.iter().map(|t| t.s_next)));
                }
                let mut phi = Vec::new();
                net.trunk.forward(&obs, rows, &mut phi);
                let mut q = Vec::new();
                net.value.forward(&phi[..b * d], b, &mut q);
                let mut dq = vec![0.0; b * 4];
                for (i, tr) in batch.iter().enumerate() {
                    dq[i * 4 + tr.a.index()] =
                        2.0 * (q[i * 4 + tr.a.index()] - bootstrap[i]) / b as f64;
                }
                let mut dphi = vec![0.0; rows * d];
                let mut dphi_v = Vec::new();
                net.value.backward(&dq, Some(&mut dphi_v));
                for (dst, &g) in dphi[..b * d].iter_mut().zip(&dphi_v) {
                    *dst += g;
                }
                if net.aux.is_atc() {
                    net.trunk.backward(&dphi);
                    let anchor = gather(&mut batch.iter().map(|t| t.s));
                    let positive = gather(&mut batch.iter().map(|t| t.s_next));
                    net.aux
                        .compute_atc(&mut net.trunk, &anchor, &positive, b, weight);
                } else {
                    if !net.aux.is_none() {
                        let ctx = repscope_core::aux::AuxCtx {
                            weight,
                            batch: &batch,
                            obs_t: &obs[..b * obs_dim],
                            xy_targets: &xy,
                            sf_targets: &sf,
                            vvf_targets: &vvf,
                            neg_idx: &neg,
                        };
                        net.aux.compute(&ctx, &phi, &mut dphi, d);
                    }
                    net.trunk.backward(&dphi);
                }
            }
            let grads = snapshot_grads(&mut net);
            let mut rng_pts = Seed(4500 + kind as u64).stream();
            let results = check_param_grads(&mut net, &mut loss_fn_grad, &grads, 100, &mut rng_pts);
            let w = worst(&results);
            assert!(
                w.rel_err < FD_TOL,
                "criterion 1 FAIL: {kind:?}/{}: {w:?}",
                activation.label()
            );
            worst_err = worst_err.max(w.rel_err);
            checked_losses += 1;
        }
    }
    let elapsed = t0.elapsed().as_secs_f64();
    assert!(elapsed < 60.0, "criterion 1 exceeded 1 minute: {elapsed:.1}s");
    pass(
        "criterion 1 (gradient fidelity)",
        format!(
            "{checked_losses} objective/activation combos x 100 points, worst rel err {worst_err:.2e} < 1e-4, {elapsed:.1}s"
        ),
    );
}

// ---------------------------------------------------------------------------
// Criterion 2: FTA invariants on 1e5 random scalars plus the exact worked
// example.
// ---------------------------------------------------------------------------
#[test]
fn criterion_2_fta_invariants() {
    let cfg = FtaConfig { k: 20, eta: 0.2 };
    let mut rng = Seed(20).stream();
    let mut out: Vec<f32> = Vec::new();
    for i in 0..100_000 {
        let z = [rng.uniform_in(-3.0, 3.0) as f32];
        fta_forward(&z, &cfg, &mut out);
        let unit = out.iter().filter(|&&v| v == 1.0).count();
        let nonzero = out.iter().filter(|&&v| v != 0.0).count();
        assert_eq!(unit, 1, "draw {i}: exactly one unit entry (z={})", z[0]);
        assert!(nonzero <= 2, "draw {i}: at most 2 nonzero entries");
        assert!(
            out.iter().all(|&v| (0.0..=1.0).contains(&v)),
            "draw {i}: entries in [0,1]"
        );
    }
    fta_forward(&[0.1f32], &cfg, &mut out);
    assert_eq!(out[10], 1.0f32, "worked example h_11 (0-based 10) = 1");
    assert_eq!(out[9], 0.9f32, "worked example h_10 (0-based 9) = 0.9");
    assert!(out
        .iter()
        .enumerate()
        .all(|(i, &v)| i == 9 || i == 10 || v == 0.0));
    pass(
        "criterion 2 (FTA invariants)",
        "1e5 random scalars: one unit entry, <=2 nonzero, in [0,1]; fta(0.1) = {h10: 0.9, h11: 1} exactly".to_string(),
    );
}

// ---------------------------------------------------------------------------
// Criterion 3: Appendix identity suite.
// ---------------------------------------------------------------------------
#[test]
fn criterion_3_appendix_identities() {
    let mut rng = Seed(30).stream();
    // identity on 100 random matrices within 1e-6 relative
    let mut worst_rel: f64 = 0.0;
    for _ in 0..100 {
        let n = 3 + rng.below(30);
        let d = 2 + rng.below(24);
        let phi: Vec<f64> = (0..n * d).map(|_| rng.uniform_in(-2.0, 2.0)).collect();
        let (lhs, rhs) = properties::orthogonality_identity_sides(&phi, n, d);
        let rel = (lhs - rhs).abs() / lhs.abs().max(rhs.abs()).max(1e-30);
        worst_rel = worst_rel.max(rel);
        assert!(rel < 1e-6, "identity violated: {lhs} vs {rhs}");
    }
    // linear-update zero interference under orthogonality, machine precision
    for _ in 0..100 {
        let d = 8;
        // disjoint supports give exactly orthogonal features
        let mut phi1 = vec![0.0f64; d];
        let mut phi2 = vec![0.0f64; d];
        for j in 0..d / 2 {
            phi1[j] = rng.uniform_in(-1.0, 1.0);
            phi2[d / 2 + j] = rng.uniform_in(-1.0, 1.0);
        }
        let w0: Vec<f64> = (0..d).map(|_| rng.uniform_in(-1.0, 1.0)).collect();
        let alpha_delta = rng.uniform_in(-2.0, 2.0);
        let before: f64 = phi2.iter().zip(&w0).map(|(a, b)| a * b).sum();
        let after: f64 = phi2
            .iter()
            .zip(w0.iter().zip(&phi1))
            .map(|(p2, (w, p1))| p2 * (w + alpha_delta * p1))
            .sum();
        assert_eq!(before.to_bits(), after.to_bits(), "update must not move the orthogonal prediction");
        // Gram–Schmidt pair (dense orthogonal up to f64 rounding)
        let a: Vec<f64> = (0..d).map(|_| rng.uniform_in(-1.0, 1.0)).collect();
        let mut b: Vec<f64> = (0..d).map(|_| rng.uniform_in(-1.0, 1.0)).collect();
        let na: f64 = a.iter().map(|x| x * x).sum();
        let ab: f64 = a.iter().zip(&b).map(|(x, y)| x * y).sum();
        for j in 0..d {
            b[j] -= ab / na * a[j];
        }
        let before: f64 = b.iter().zip(&w0).map(|(x, w)| x * w).sum();
        let after: f64 = b
            .iter()
            .zip(w0.iter().zip(&a))
            .map(|(x, (w, p))| x * (w + alpha_delta * p))
            .sum();
        let scale: f64 = b.iter().map(|x| x.abs()).sum::<f64>() * alpha_delta.abs();
        assert!(
            (after - before).abs() <= 64.0 * f64::EPSILON * scale.max(1.0),
            "near-orthogonal update moved the prediction by {}",
            after - before
        );
    }
    // centered features: correlation sum equals orthogonality sum exactly
    // (integer-valued columns with exact zero means)
    let cols: [[f64; 6]; 3] = [
        [1.0, -1.0, 2.0, -2.0, 3.0, -3.0],
        [4.0, -4.0, 1.0, -1.0, 0.0, 0.0],
        [2.0, 2.0, -1.0, -1.0, -1.0, -1.0],
    ];
    let n = 6.0;
    let mut orth_sum = 0.0;
    let mut corr_sum = 0.0;
    for k in &cols {
        for l in &cols {
            let dot: f64 = k.iter().zip(l).map(|(a, b)| a * b).sum();
            orth_sum += dot / (n * n);
            let mk: f64 = k.iter().sum::<f64>() / n;
            let ml: f64 = l.iter().sum::<f64>() / n;
            assert_eq!(mk, 0.0);
            assert_eq!(ml, 0.0);
            let cdot: f64 = k.iter().zip(l).map(|(a, b)| (a - mk) * (b - ml)).sum();
            corr_sum += cdot / (n * n);
        }
    }
    assert_eq!(orth_sum.to_bits(), corr_sum.to_bits());
    pass(
        "criterion 3 (appendix identities)",
        format!("100 random matrices within 1e-6 (worst {worst_rel:.2e}); zero-interference exact; centered equivalence exact"),
    );
}

// ---------------------------------------------------------------------------
// Criterion 4: metric trivial cases exactly, plus ranges on random draws.
// ---------------------------------------------------------------------------
#[test]
fn criterion_4_metric_trivial_cases() {
    // complexity
    let pw = Pairwise::compute(&[0.0, 1.0, 3.0], 3, 1);
    assert!((properties::complexity_raw(&pw, &[0.0, 1.0, 3.0]) - 1.0).abs() < 1e-6);
    assert_eq!(properties::complexity_raw(&pw, &[2.0, 2.0, 2.0]), 0.0);
    assert!(
        (properties::complexity_raw(&pw, &[0.0, 2.0, 3.0]) - 7.0 / 6.0).abs() < 1e-6,
        "3-point hand value"
    );
    assert_eq!(properties::complexity_reduction(5.0, 5.0), 0.0);
    assert_eq!(properties::complexity_reduction(0.0, 5.0), 1.0);
    assert!((properties::complexity_reduction(7.0 / 6.0, 7.0 / 3.0) - 0.5).abs() < 1e-12);
    // dynamics awareness
    let phi = [0.0, 0.0, 1.0, 0.0];
    assert!((properties::dynamics_awareness(&phi, &phi, &[1, 0], 2, 2) - 1.0).abs() < 1e-12);
    let cphi = [1.0, 1.0, 1.0, 1.0];
    assert_eq!(properties::dynamics_awareness(&cphi, &cphi, &[1, 0], 2, 2), 0.0);
    let next = [1.0, 0.0, 0.0, 0.0];
    assert!(properties::dynamics_awareness(&phi, &next, &[1, 0], 2, 2).abs() < 1e-12);
    // diversity
    let pw2 = Pairwise::compute(&[0.0, 0.0, 1.0, 0.0, 0.0, 1.0], 3, 2);
    assert_eq!(properties::diversity(&pw2, &[3.0, 3.0, 3.0]), 1.0);
    // saturation: equal normalized distances over many points drive
    // diversity toward 0
    let n = 50;
    let phi_sat: Vec<f64> = (0..n).map(|i| i as f64).collect();
    let v_sat = phi_sat.clone();
    let pw_sat = Pairwise::compute(&phi_sat, n, 1);
    assert!(properties::diversity(&pw_sat, &v_sat) < 0.2);
    // orthogonality
    let (o, _) = properties::orthogonality(&Pairwise::compute(&[1.0, 0.0, 0.0, 1.0], 2, 2));
    assert_eq!(o, 1.0);
    let (o2, _) = properties::orthogonality(&Pairwise::compute(&[1.0, 1.0, 1.0, 1.0], 2, 2));
    assert!(o2.abs() < 1e-12);
    let s = (0.5f64).sqrt();
    let (o3, _) = properties::orthogonality(&Pairwise::compute(&[1.0, 0.0, s, s], 2, 2));
    assert!((o3 - (1.0 - s)).abs() < 1e-9);
    let (oz, warn) = properties::orthogonality(&Pairwise::compute(&[0.0; 4], 2, 2));
    assert_eq!((oz, warn), (0.0, true));
    // sparsity
    assert_eq!(properties::sparsity(&[0.0, 1.0, 1.0, 0.0]), 0.5);
    assert_eq!(properties::sparsity(&[0.0; 4]), 1.0);
    // FTA layer output sparsity >= 1 - 2/k
    let cfg = FtaConfig { k: 20, eta: 0.2 };
    let mut rng = Seed(40).stream();
    let mut out = Vec::new();
    let mut phi_fta = Vec::new();
    for _ in 0..2000 {
        fta_forward(&[rng.uniform_in(-2.5, 2.5)], &cfg, &mut out);
        phi_fta.extend(out.iter().copied());
    }
    assert!(properties::sparsity(&phi_fta) >= 0.9);
    // interference aggregation + normalization
    let ui: Vec<f64> = (1..=10).map(|i| i as f64).collect();
    assert_eq!(properties::interference_aggregate(&ui).unwrap(), (10.0, false));
    assert_eq!(properties::non_interference(0.0, 0.0), 1.0);
    assert_eq!(properties::non_interference(5.0, 5.0), 0.0);

    // ranges on 100 random (phi, V) draws
    for _ in 0..100 {
        let n = 8 + rng.below(24);
        let d = 2 + rng.below(16);
        let phi: Vec<f64> = (0..n * d).map(|_| rng.uniform_in(-2.0, 2.0)).collect();
        let phi_next: Vec<f64> = (0..n * d).map(|_| rng.uniform_in(-2.0, 2.0)).collect();
        let v: Vec<f64> = (0..n).map(|_| rng.uniform_in(-1.0, 1.0)).collect();
        let pairing: Vec<usize> = (0..n).map(|_| rng.below(n)).collect();
        let pw = Pairwise::compute(&phi, n, d);
        let div = properties::diversity(&pw, &v);
        assert!((0.0..=1.0).contains(&div), "diversity {div}");
        let (orth, _) = properties::orthogonality(&pw);
        assert!((0.0..=1.0).contains(&orth), "orthogonality {orth}");
        let sp = properties::sparsity(&phi);
        assert!((0.0..=1.0).contains(&sp), "sparsity {sp}");
        let da = properties::dynamics_awareness(&phi, &phi_next, &pairing, n, d);
        assert!(da <= 1.0, "dynamics awareness {da}");
        let l = properties::complexity_raw(&pw, &v);
        assert!(l >= 0.0);
        let cr = properties::complexity_reduction(l, l.max(1.0));
        assert!((0.0..=1.0).contains(&cr));
    }
    pass(
        "criterion 4 (metric trivial cases)",
        "all stated examples exact; metrics in range over 100 random draws".to_string(),
    );
}

// ---------------------------------------------------------------------------
// Criterion 5: similarity oracle on the 5x5 grid and the default map.
// ---------------------------------------------------------------------------

/// Independent oracle: rows of (I - gamma P~)^{-1} with the goal row of P~
/// zeroed, solved by Gauss-Jordan elimination with partial pivoting.
fn linear_solve_psi(mdp: &TabularMdp, policy: &[u8], goal: u16) -> Vec<f64> {
    let n = mdp.n;
    let mut aug = vec![0.0f64; n * 2 * n];
    for s in 0..n {
        aug[s * 2 * n + s] += 1.0;
        if s != goal as usize {
            let sp = mdp.step(s as u16, policy[s] as usize) as usize;
            aug[s * 2 * n + sp] -= mdp.gamma;
        }
        aug[s * 2 * n + n + s] = 1.0;
    }
    for col in 0..n {
        let mut piv = col;
        for r in (col + 1)..n {
            if aug[r * 2 * n + col].abs() > aug[piv * 2 * n + col].abs() {
                piv = r;
            }
        }
        if piv != col {
            for c in 0..2 * n {
                aug.swap(col * 2 * n + c, piv * 2 * n + c);
            }
        }
        let p = aug[col * 2 * n + col];
        assert!(p.abs() > 1e-12);
        for c in 0..2 * n {
            aug[col * 2 * n + c] /= p;
        }
        for r in 0..n {
            if r != col {
                let f = aug[r * 2 * n + col];
                if f != 0.0 {
                    for c in 0..2 * n {
                        aug[r * 2 * n + c] -= f * aug[col * 2 * n + c];
                    }
                }
            }
        }
    }
    let mut psi = vec![0.0f64; n * n];
    for s in 0..n {
        for j in 0..n {
            psi[s * n + j] = aug[s * 2 * n + n + j];
        }
    }
    psi
}

fn bfs_distances(map: &MazeMap, goal: u16) -> Vec<usize> {
    let n = map.num_states();
    let mut dist = vec![usize::MAX; n];
    let mut queue = std::collections::VecDeque::new();
    dist[goal as usize] = 0;
    queue.push_back(goal);
    while let Some(s) = queue.pop_front() {
        let cell = map.cell_of(s);
        for a in Action::ALL {
            let id = map.id_of(map.neighbor(cell, a)).unwrap();
            if dist[id as usize] == usize::MAX {
                dist[id as usize] = dist[s as usize] + 1;
                queue.push_back(id);
            }
        }
    }
    dist
}

#[test]
fn criterion_5_similarity_oracle() {
    let open5 = MazeMap::parse(&(0..5).map(|_| ".".repeat(5)).collect::<Vec<_>>().join("\n"))
        .unwrap();
    let default_map = MazeMap::default_map();
    let mut worst_psi: f64 = 0.0;
    let mut worst_v: f64 = 0.0;
    for map in [&open5, &default_map] {
        let mdp = TabularMdp::from_map(map, 0.99);
        for goal_id in 0..map.num_states() as u16 {
            let (v, policy) = task_similarity::value_iteration(&mdp, goal_id, 1e-10).unwrap();
            // V* = gamma^(k-1) everywhere
            let dist = bfs_distances(map, goal_id);
            for s in 0..map.num_states() {
                let expect = if s == goal_id as usize {
                    0.0
                } else {
                    0.99f64.powi(dist[s] as i32 - 1)
                };
                worst_v = worst_v.max((v[s] - expect).abs());
            }
            // rollout psi vs linear solve
            let psi = task_similarity::successor_representation(&mdp, &policy, goal_id).unwrap();
            let oracle = linear_solve_psi(&mdp, &policy, goal_id);
            for (a, b) in psi.iter().zip(&oracle) {
                worst_psi = worst_psi.max((a - b).abs());
            }
        }
    }
    assert!(worst_psi < 1e-6, "psi deviates from the linear solve: {worst_psi}");
    assert!(worst_v < 1e-8, "V* deviates from the closed form: {worst_v}");

    // self-similarity maximal for every one of the 173 tasks
    let mdp = TabularMdp::from_map(&default_map, 0.99);
    let profiles: Vec<_> = default_map
        .free_cells()
        .iter()
        .map(|&g| successor_profile(&default_map, &mdp, g).unwrap())
        .collect();
    for (i, a) in profiles.iter().enumerate() {
        let self_sim = task_similarity(a, a);
        for (j, b) in profiles.iter().enumerate() {
            if i != j {
                assert!(
                    self_sim >= task_similarity(a, b),
                    "task {i} is more similar to task {j} than to itself"
                );
            }
        }
    }
    pass(
        "criterion 5 (similarity oracle)",
        format!(
            "psi rollout vs linear solve within {worst_psi:.1e} (<1e-6) over both maps; V* matches gamma^(k-1) (worst {worst_v:.1e}); self-similarity maximal for all 173 tasks"
        ),
    );
}

// ---------------------------------------------------------------------------
// Criterion 6: training convergence at the pinned stepsizes.
// ---------------------------------------------------------------------------
#[test]
fn criterion_6_training_convergence() {
    let runs = stage1_runs();
    let mut details = Vec::new();
    for spec in runs {
        let converged = spec.converged.iter().filter(|&&c| c).count();
        let steps: Vec<String> = spec
            .saved_steps
            .iter()
            .map(|s| s.map(|v| v.to_string()).unwrap_or_else(|| "-".into()))
            .collect();
        assert!(
            converged >= 4,
            "criterion 6 FAIL: {} converged on {converged}/5 seeds (saves at {steps:?})",
            spec.label
        );
        details.push(format!(
            "{} lr={} saved {}/5 seeds at steps [{}]",
            spec.label,
            spec.lr,
            converged,
            steps.join(", ")
        ));
    }
    pass("criterion 6 (training convergence)", details.join("; "));
}

// ---------------------------------------------------------------------------
// Criterion 7: directional transfer reproduction over 10 stratified tasks.
// ---------------------------------------------------------------------------

struct TransferData {
    tasks: Vec<RankedTask>,
    /// mean AUC per task: [task][source] with sources frozen-relu, frozen-fta,
    /// scratch-relu (dissimilar tasks only), scratch-fta
    frozen_relu: Vec<f64>,
    frozen_fta: Vec<f64>,
    scratch_relu: Vec<Option<f64>>,
    scratch_fta: Vec<f64>,
}

fn transfer_data() -> &'static TransferData {
    static DATA: OnceLock<TransferData> = OnceLock::new();
    DATA.get_or_init(|| {
        let w = world();
        let s1 = stage1_runs();
        let tasks = w.ctx.tasks.clone();
        assert_eq!(tasks.len(), N_TASKS);
        let counters = (
            std::sync::atomic::AtomicUsize::new(0),
            std::sync::atomic::AtomicUsize::new(0),
        );
        let mean =
            |rows: &[TransferRow]| rows.iter().map(|r| r.auc).sum::<f64>() / rows.len() as f64;

        let mut frozen = vec![Vec::new(), Vec::new()];
        for (si, spec) in s1.iter().enumerate() {
            let sources: Vec<(u32, RepSource)> = (0..TRANSFER_SEEDS)
                .map(|s| {
                    (
                        s,
                        RepSource::Frozen {
                            rep_ckpt: spec.rep_ckpts[s as usize].clone(),
                        },
                    )
                })
                .collect();
            let grid = w.cfg.stage2_grid(spec.activation.rep_dim()).to_vec();
            for task in &tasks {
                let t0 = Instant::now();
                let rows = sweep_stage2(
                    &w.ctx,
                    &format!("frozen-{}", spec.label),
                    spec.label,
                    &sources,
                    task,
                    &grid,
                    &|lr| {
                        w.cfg
                            .agent_config(spec.activation, AuxConfig::none(), lr)
                    },
                    (&counters.0, &counters.1),
                )
                .unwrap();
                println!(
                    "[acceptance]   frozen {} task rank {} mean AUC {:.3} (lr {}, {:.0}s)",
                    spec.label,
                    task.rank,
                    mean(&rows),
                    rows[0].lr,
                    t0.elapsed().as_secs_f64()
                );
                frozen[si].push(mean(&rows));
            }
        }

        // scratch baselines at the pinned training-grid stepsizes
        let mut scratch_fta = Vec::new();
        let mut scratch_relu: Vec<Option<f64>> = Vec::new();
        let dissimilar: Vec<usize> = (N_TASKS - 3..N_TASKS).collect();
        for (ti, task) in tasks.iter().enumerate() {
            let sources: Vec<(u32, RepSource)> = (0..TRANSFER_SEEDS)
                .map(|s| {
                    (
                        s,
                        RepSource::Scratch {
                            activation: Activation::Fta(FtaConfig::default()),
                        },
                    )
                })
                .collect();
            let t0 = Instant::now();
            let rows = sweep_stage2(
                &w.ctx,
                "scratch-fta0.2",
                "scratch-fta0.2",
                &sources,
                task,
                &[SCRATCH_LR_FTA],
                &|lr| {
                    w.cfg.agent_config(
                        Activation::Fta(FtaConfig::default()),
                        AuxConfig::none(),
                        lr,
                    )
                },
                (&counters.0, &counters.1),
            )
            .unwrap();
            println!(
                "[acceptance]   scratch fta task rank {} mean AUC {:.3} ({:.0}s)",
                task.rank,
                mean(&rows),
                t0.elapsed().as_secs_f64()
            );
            scratch_fta.push(mean(&rows));

            if dissimilar.contains(&ti) {
                let sources: Vec<(u32, RepSource)> = (0..TRANSFER_SEEDS)
                    .map(|s| {
                        (
                            s,
                            RepSource::Scratch {
                                activation: Activation::Relu32,
                            },
                        )
                    })
                    .collect();
                let t0 = Instant::now();
                let rows = sweep_stage2(
                    &w.ctx,
                    "scratch-relu32",
                    "scratch-relu32",
                    &sources,
                    task,
                    &[SCRATCH_LR_RELU],
                    &|lr| w.cfg.agent_config(Activation::Relu32, AuxConfig::none(), lr),
                    (&counters.0, &counters.1),
                )
                .unwrap();
                println!(
                    "[acceptance]   scratch relu task rank {} mean AUC {:.3} ({:.0}s)",
                    task.rank,
                    mean(&rows),
                    t0.elapsed().as_secs_f64()
                );
                scratch_relu.push(Some(mean(&rows)));
            } else {
                scratch_relu.push(None);
            }
        }

        TransferData {
            tasks,
            frozen_relu: frozen[0].clone(),
            frozen_fta: frozen[1].clone(),
            scratch_relu,
            scratch_fta,
        }
    })
}

#[test]
fn criterion_7_directional_transfer() {
    let data = transfer_data();
    // frozen FTA beats Scratch(FTA) on >= 7 of 10 tasks
    let fta_wins = data
        .frozen_fta
        .iter()
        .zip(&data.scratch_fta)
        .filter(|(f, s)| f > s)
        .count();
    // frozen ReLU underperforms Scratch(ReLU) on >= 2 of the 3 most
    // dissimilar tasks
    let relu_losses = (N_TASKS - 3..N_TASKS)
        .filter(|&ti| {
            data.scratch_relu[ti]
                .map(|s| data.frozen_relu[ti] < s)
                .unwrap_or(false)
        })
        .count();
    let detail = format!(
        "frozen FTA > Scratch(FTA) on {fta_wins}/10 tasks (need >=7); frozen ReLU < Scratch(ReLU) on {relu_losses}/3 most-dissimilar tasks (need >=2); task ranks {:?}",
        data.tasks.iter().map(|t| t.rank).collect::<Vec<_>>()
    );
    assert!(fta_wins >= 7, "criterion 7 FAIL: {detail}");
    assert!(relu_losses >= 2, "criterion 7 FAIL: {detail}");
    pass("criterion 7 (directional transfer)", detail);
}

// ---------------------------------------------------------------------------
// Criterion 8: byte-identical outputs when repeating commands.
// ---------------------------------------------------------------------------
#[test]
fn criterion_8_determinism() {
    let tmp = tempfile::tempdir().unwrap();
    let map = Arc::new(MazeMap::parse("T....\n.....\n.....\n.....\n.....").unwrap());
    let obs = Arc::new(ObsTable::build(&map));
    let env = EnvConfig::new((0, 0));
    let cfg = AgentConfig {
        learning_rate: 1e-3,
        buffer_capacity: 2000,
        record_period: 400,
        train_steps: 1600,
        transfer_steps: 800,
        ..AgentConfig::default()
    };
    let maze = Maze::new(Arc::clone(&map), env).unwrap();
    let probe = Arc::new(properties::collect_probe(&maze, 150, Seed(11)).unwrap());

    // stage 1 twice into fresh directories
    let mut bytes = Vec::new();
    for name in ["a", "b"] {
        let dir = tmp.path().join(name);
        run::stage1_run(
            &dir,
            &map,
            &obs,
            env,
            cfg,
            Seed(900).child("stage1").child_u64(0),
            0,
            Some(Arc::clone(&probe)),
            false,
            "det",
        )
        .unwrap();
        bytes.push((
            std::fs::read(dir.join("trace.csv")).unwrap(),
            std::fs::read(dir.join("props_raw.csv")).unwrap(),
            std::fs::read(dir.join("rep.ckpt")).unwrap(),
        ));
    }
    assert_eq!(bytes[0].0, bytes[1].0, "trace.csv must be byte-identical");
    assert_eq!(bytes[0].1, bytes[1].1, "props_raw.csv must be byte-identical");
    assert_eq!(bytes[0].2, bytes[1].2, "rep.ckpt must be byte-identical");

    // stage 2 (frozen) twice
    let mut s2 = Vec::new();
    for name in ["sa", "sb"] {
        let dir = tmp.path().join(name);
        run::stage2_run(
            &dir,
            &map,
            &obs,
            EnvConfig::new((4, 4)),
            cfg,
            &RepSource::Frozen {
                rep_ckpt: tmp.path().join("a/rep.ckpt"),
            },
            Seed(901).child("stage2").child_u64(0),
            0,
        )
        .unwrap();
        s2.push(std::fs::read(dir.join("trace.csv")).unwrap());
    }
    assert_eq!(s2[0], s2[1], "stage-2 trace.csv must be byte-identical");

    // rank map twice
    let ranked = task_similarity::rank_tasks(&map, 0.99, (0, 0)).unwrap();
    let ranked2 = task_similarity::rank_tasks(&map, 0.99, (0, 0)).unwrap();
    let render = |r: &[RankedTask]| {
        let rows: Vec<Vec<String>> = r
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
        csvio::render(&["rank", "r", "c", "sim"], &rows)
    };
    assert_eq!(render(&ranked), render(&ranked2));
    pass(
        "criterion 8 (determinism)",
        "stage-1/stage-2 traces, property rows, checkpoints, and rankings byte-identical across repeats"
            .to_string(),
    );
}

// ---------------------------------------------------------------------------
// Criterion 9: two-pass normalization over the stage-1 population.
// ---------------------------------------------------------------------------
#[test]
fn criterion_9_two_pass_normalization() {
    let runs = stage1_runs();
    let mut rows: Vec<(f64, Option<f64>)> = Vec::new(); // (l_rep, interference)
    for spec in runs {
        for dir in &spec.run_dirs {
            let table = csvio::read_table(&dir.join("props_raw.csv")).unwrap();
            let li = table.col("l_rep").unwrap();
            let ii = table.col("interference").unwrap();
            for row in &table.rows {
                let l: f64 = row[li].parse().unwrap();
                let i: Option<f64> = if row[ii].is_empty() {
                    None
                } else {
                    Some(row[ii].parse().unwrap())
                };
                rows.push((l, i));
            }
        }
    }
    assert!(rows.len() >= 10, "need a population to normalize over");
    let l_max = rows.iter().map(|r| r.0).fold(0.0f64, f64::max);
    let max_i = rows
        .iter()
        .filter_map(|r| r.1)
        .fold(f64::NEG_INFINITY, f64::max);
    assert!(l_max > 0.0);
    assert!(max_i.is_finite() && max_i > 0.0, "interference trace present");
    let mut min_cr = f64::INFINITY;
    let mut min_ni = f64::INFINITY;
    for (l, i) in &rows {
        let cr = properties::complexity_reduction(*l, l_max);
        assert!((0.0..=1.0).contains(&cr), "cr {cr}");
        min_cr = min_cr.min(cr);
        if let Some(i) = i {
            let ni = properties::non_interference(*i, max_i);
            assert!((0.0..=1.0).contains(&ni), "ni {ni}");
            min_ni = min_ni.min(ni);
        }
    }
    assert_eq!(min_cr, 0.0, "the L_max attainer must normalize to 0");
    assert_eq!(min_ni, 0.0, "the MaxInterference attainer must normalize to 0");
    pass(
        "criterion 9 (two-pass normalization)",
        format!(
            "{} property rows; complexity_reduction and non_interference in [0,1] with population minima 0 (L_max {:.3}, MaxInterference {:.3e})",
            rows.len(),
            l_max,
            max_i
        ),
    );
}
