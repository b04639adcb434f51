// Exploration probe: which stepsizes reach the early-saving criterion on the
// default map, and how fast. Not part of the test suite.
use repscope_core::agent::{AgentConfig, DqnAgent, RunMode};
use repscope_core::aux::{AuxConfig, AuxKind};
use repscope_core::gridworld::{EnvConfig, Maze, MazeMap, ObsTable};
use repscope_core::model::Activation;
use repscope_core::nn::FtaConfig;
use repscope_core::rng::Seed;
use std::sync::Arc;
use std::time::Instant;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let which = args.get(1).map(|s| s.as_str()).unwrap_or("relu");
    let lr: f64 = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(3e-4);
    let seed: u64 = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(0);
    let steps: u64 = args.get(4).and_then(|s| s.parse().ok()).unwrap_or(300_000);

    let map = Arc::new(MazeMap::default_map());
    let maze = Maze::new(Arc::clone(&map), EnvConfig::new((9, 9))).unwrap();
    let obs = Arc::new(ObsTable::build(&map));
    let (activation, aux) = match which {
        "fta" => (
            Activation::Fta(FtaConfig::default()),
            AuxConfig::none(),
        ),
        "vvf5" => (Activation::Relu32, AuxConfig::of_kind(AuxKind::VirtualVf5)),
        _ => (Activation::Relu32, AuxConfig::none()),
    };
    let cfg = AgentConfig {
        activation,
        learning_rate: lr,
        aux,
        ..AgentConfig::default()
    };
    let mut agent = DqnAgent::new(maze, obs, cfg, Seed(1000 + seed), None).unwrap();
    let t = Instant::now();
    let mode = RunMode {
        steps,
        early_save: true,
        stop_after_save: true,
        track_properties: false,
        track_interference: false,
    };
    let out = agent.run(mode).unwrap();
    let status = match out.trace.saved_at {
        Some(s) => format!("SAVED at step {s}"),
        None => "UNCONVERGED".to_string(),
    };
    let returns: Vec<String> = out
        .trace
        .records
        .iter()
        .map(|r| format!("{}k:{:.2}", r.step / 1000, r.avg_return))
        .collect();
    println!(
        "{which} lr={lr} seed={seed}: {status} ({} episodes, {:.0}s wall) returns=[{}]",
        out.trace.episodes.len(),
        t.elapsed().as_secs_f64(),
        returns.join(" ")
    );
}
