use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use rand::distributions::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use morsegraph::bench::{brute_force_roa, compare, goal_node, EvalLattice, GroundTruthRoA};
use morsegraph::config::{AnalysisConfig, ControllerConfig};
use morsegraph::dynamics::{simulate_goal_reach, ControlSystem, Controller, SimOutcome, TimeTauMap};
use morsegraph::export::{
    write_cube_set, write_morse_graph_dot, write_roa_csv, write_roa_ppm, write_summary,
    write_truth_ppm, RunSummary,
};
use morsegraph::morse::{compute_scc, morse_graph, CondensationGraph, MorseGraph};
use morsegraph::outer::{estimate_lipschitz, MultivaluedMap};
use morsegraph::roa::{regions_of_attraction, RoAAssignment};
use morsegraph::CubicalGrid;

/// Morse-graph analysis of closed-loop dynamics over a cubical state-space
/// decomposition.
#[derive(Parser)]
#[command(name = "morsegraph", version)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
    /// Analysis configuration file (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Worker threads (default: available parallelism).
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Override the seed of every seeded stage.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory (default `out`).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Full pipeline: outer approximation, Morse graph, regions of
    /// attraction, and all export artifacts.
    Analyze,
    /// Brute-force simulation of the goal-reaching set on an evaluation
    /// lattice.
    GroundTruth,
    /// Replay an analysis from its manifest and score it against a stored
    /// ground truth.
    Compare {
        /// Analysis output directory containing `manifest.toml`.
        analysis: PathBuf,
        /// Ground-truth file written by `ground-truth`.
        truth: PathBuf,
    },
    /// Monte-Carlo comparison of a hybrid controller against its fallback.
    HybridEval,
    /// Run the pipeline and write only the Morse-graph DOT file.
    ExportDot,
    /// Run the pipeline and write only the RoA artifacts (CSV, raster, cube
    /// sets).
    ExportRoa,
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    if let Some(n) = cli.workers {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("worker pool")?;
    }
    let out = cli.out.clone().unwrap_or_else(|| PathBuf::from("out"));
    match &cli.cmd {
        Cmd::Analyze => cmd_analyze(&load_config(&cli)?, cli.seed, &out),
        Cmd::GroundTruth => cmd_ground_truth(&load_config(&cli)?, &out),
        Cmd::Compare { analysis, truth } => cmd_compare(analysis, truth, cli.seed, &out),
        Cmd::HybridEval => cmd_hybrid_eval(&load_config(&cli)?, cli.seed, &out),
        Cmd::ExportDot => {
            let run = run_pipeline(&load_config(&cli)?, cli.seed)?;
            std::fs::create_dir_all(&out)?;
            write_morse_graph_dot(&run.mg, &out.join("morse_graph.dot"))?;
            println!("wrote {}", out.join("morse_graph.dot").display());
            Ok(())
        }
        Cmd::ExportRoa => {
            let run = run_pipeline(&load_config(&cli)?, cli.seed)?;
            std::fs::create_dir_all(&out)?;
            write_roa_artifacts(&run, &out)?;
            println!("wrote RoA artifacts to {}", out.display());
            Ok(())
        }
    }
}

fn load_config(cli: &Cli) -> Result<AnalysisConfig> {
    let path = cli
        .config
        .as_ref()
        .context("--config <path> is required for this command")?;
    AnalysisConfig::load(path).with_context(|| format!("loading {}", path.display()))
}

struct PipelineRun {
    cfg: AnalysisConfig,
    system: ControlSystem,
    grid: CubicalGrid,
    lipschitz: f64,
    mvm: MultivaluedMap,
    cg: CondensationGraph,
    mg: MorseGraph,
    assign: RoAAssignment,
    controller_label: String,
    wall_seconds: f64,
}

fn run_pipeline(cfg: &AnalysisConfig, seed: Option<u64>) -> Result<PipelineRun> {
    let start = Instant::now();
    let system = cfg.build_system()?;
    let controller = cfg.build_controller(&system)?;
    let controller_label = controller.label.clone();
    let grid = cfg.build_grid(&system)?;
    let map = TimeTauMap::new(system.clone(), controller, cfg.map.tau, cfg.map.step)?;
    let lipschitz = match cfg.map.lipschitz {
        Some(l) => l,
        None => {
            let spec = cfg.map.estimate_spec();
            estimate_lipschitz(&map, &grid, spec.pairs, spec.safety, seed.unwrap_or(spec.seed))?
        }
    };
    // The step counter reports analysis propagation only, not estimation.
    map.reset_counter();
    let mut mvm = MultivaluedMap::build(grid.clone(), map, lipschitz, cfg.map.refine as usize)?;
    if let Some(cache) = &cfg.map.cache {
        if cache.exists() {
            mvm.load_cache(cache)?;
        } else {
            mvm.build_cache();
            mvm.dump_cache(cache)?;
        }
    }
    let cg = compute_scc(&mvm);
    let mg = morse_graph(&cg);
    let assign = regions_of_attraction(&mg, &cg);
    Ok(PipelineRun {
        cfg: cfg.clone(),
        system,
        grid,
        lipschitz,
        mvm,
        cg,
        mg,
        assign,
        controller_label,
        wall_seconds: start.elapsed().as_secs_f64(),
    })
}

fn write_roa_artifacts(run: &PipelineRun, out: &Path) -> Result<()> {
    write_roa_csv(&run.assign, &run.cg, &out.join("roa.csv"))?;
    if run.grid.dims() >= 2 {
        write_roa_ppm(&run.assign, &run.grid, 0, 1, &out.join("roa.ppm"))?;
    }
    for &(node, ref cubes) in &run.assign.maximal_roas {
        write_cube_set(&run.grid, cubes, &out.join(format!("roa_node{node}.cubes")))?;
    }
    Ok(())
}

fn cmd_analyze(cfg: &AnalysisConfig, seed: Option<u64>, out: &Path) -> Result<()> {
    let run = run_pipeline(cfg, seed)?;
    std::fs::create_dir_all(out)?;
    std::fs::write(
        out.join("manifest.toml"),
        run.cfg.manifest_toml(&run.system, &run.grid, run.lipschitz),
    )?;
    write_morse_graph_dot(&run.mg, &out.join("morse_graph.dot"))?;
    write_roa_artifacts(&run, out)?;
    let summary = RunSummary {
        system: run.system.name.clone(),
        controller: run.controller_label.clone(),
        cube_count: run.grid.cube_count(),
        scc_count: run.cg.scc_count,
        morse_node_count: run.mg.nodes.len(),
        minimal_nodes: run.mg.minimal_nodes(),
        node_cube_counts: run.mg.nodes.iter().map(|n| n.cubes.len()).collect(),
        has_escape_node: run.mg.star_node().is_some(),
        lipschitz: run.lipschitz,
        propagation_steps: run.mvm.map.steps_performed(),
        wall_seconds: run.wall_seconds,
    };
    write_summary(&summary, &out.join("summary.json"))?;
    println!(
        "{} cubes, {} Morse nodes ({} minimal), L = {:.4}, {} propagation steps, {:.2} s",
        summary.cube_count,
        summary.morse_node_count,
        summary.minimal_nodes.len(),
        summary.lipschitz,
        summary.propagation_steps,
        summary.wall_seconds,
    );
    Ok(())
}

/// Hash binding a ground-truth file to the closed loop and lattice that
/// produced it.
fn truth_hash(system: &ControlSystem, controller_label: &str, cfg: &AnalysisConfig) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    let mut eat = |bytes: &[u8]| {
        for &b in bytes {
            h ^= u64::from(b);
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
    };
    eat(system.name.as_bytes());
    eat(controller_label.as_bytes());
    for i in 0..system.state_dim {
        eat(&system.state_bounds.lo[i].to_le_bytes());
        eat(&system.state_bounds.hi[i].to_le_bytes());
        eat(&system.goal[i].to_le_bytes());
    }
    eat(&cfg.truth.horizon.to_le_bytes());
    eat(&cfg.truth.eps.to_le_bytes());
    for &c in &cfg.truth.counts {
        eat(&c.to_le_bytes());
    }
    h
}

fn cmd_ground_truth(cfg: &AnalysisConfig, out: &Path) -> Result<()> {
    let system = cfg.build_system()?;
    let controller = cfg.build_controller(&system)?;
    let grid = cfg.build_grid(&system)?;
    if cfg.truth.counts.len() != system.state_dim {
        bail!(
            "truth.counts must list {} per-dimension point counts",
            system.state_dim
        );
    }
    if let Some(goal) = &cfg.truth.goal {
        if goal != &system.goal {
            bail!("truth.goal must match the plant goal {:?}", system.goal);
        }
    }
    let lattice = EvalLattice::new(
        grid.lower().to_vec(),
        grid.upper().to_vec(),
        cfg.truth.counts.clone(),
    )?;
    let start = Instant::now();
    let truth = brute_force_roa(&system, &controller, lattice, cfg.truth.horizon, cfg.truth.eps)?;
    std::fs::create_dir_all(out)?;
    let hash = truth_hash(&system, &controller.label, cfg);
    truth.save(&out.join("truth.bin"), hash)?;
    if truth.lattice.dims() == 2 {
        write_truth_ppm(&truth, &out.join("truth.ppm"))?;
    }
    println!(
        "{} / {} lattice points reach the goal ({:.2} s)",
        truth.reached_count(),
        truth.lattice.len(),
        start.elapsed().as_secs_f64(),
    );
    Ok(())
}

fn cmd_compare(analysis: &Path, truth_path: &Path, seed: Option<u64>, out: &Path) -> Result<()> {
    let manifest = analysis.join("manifest.toml");
    let cfg = AnalysisConfig::load(&manifest)
        .with_context(|| format!("loading {}", manifest.display()))?;
    let run = run_pipeline(&cfg, seed)?;
    let controller = cfg.build_controller(&run.system)?;
    let hash = truth_hash(&run.system, &controller.label, &cfg);
    let truth = GroundTruthRoA::load(truth_path, hash)?;
    let node = goal_node(&run.mg, &run.grid, &run.system.goal, cfg.truth.eps)?;
    let report = compare(
        &run.assign,
        &run.mg,
        node,
        &truth,
        &run.grid,
        run.mvm.map.steps_performed(),
    )?;
    std::fs::create_dir_all(out)?;
    report.save(&out.join("report.txt"))?;
    println!("{report}");
    Ok(())
}

fn cmd_hybrid_eval(cfg: &AnalysisConfig, seed: Option<u64>, out: &Path) -> Result<()> {
    let ControllerConfig::Hybrid { fallback, .. } = &cfg.controller else {
        bail!("hybrid-eval needs a [controller] section with kind = \"hybrid\"");
    };
    let system = cfg.build_system()?;
    let hybrid = cfg.build_controller(&system)?;
    let fallback = fallback.build(&system, &cfg.system)?;
    let grid = cfg.build_grid(&system)?;
    let ev = &cfg.hybrid_eval;
    let seed = seed.unwrap_or(ev.seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dists: Vec<Uniform<f64>> = (0..grid.dims())
        .map(|i| Uniform::new_inclusive(grid.lower()[i], grid.upper()[i]))
        .collect();
    let run_one = |controller: &Controller, x0: &[f64]| -> Option<usize> {
        let (outcome, steps) = simulate_goal_reach(
            &system,
            controller,
            x0,
            cfg.map.step,
            ev.horizon,
            ev.eps,
        );
        matches!(outcome, SimOutcome::Reached(_)).then_some(steps)
    };
    let (mut hyb_ok, mut fb_ok, mut both) = (0usize, 0usize, 0usize);
    let mut length_ratio_sum = 0.0;
    for _ in 0..ev.samples {
        let x0: Vec<f64> = dists.iter().map(|d| d.sample(&mut rng)).collect();
        let h = run_one(&hybrid, &x0);
        let f = run_one(&fallback, &x0);
        hyb_ok += usize::from(h.is_some());
        fb_ok += usize::from(f.is_some());
        if let (Some(hs), Some(fs)) = (h, f) {
            if fs > 0 {
                both += 1;
                length_ratio_sum += hs as f64 / fs as f64;
            }
        }
    }
    let hybrid_rate = hyb_ok as f64 / ev.samples as f64;
    let fallback_rate = fb_ok as f64 / ev.samples as f64;
    let mean_ratio = if both > 0 {
        length_ratio_sum / both as f64
    } else {
        f64::NAN
    };
    std::fs::create_dir_all(out)?;
    let text = format!(
        "samples = {}\nseed = {}\nhybrid_success_rate = {}\nfallback_success_rate = {}\nmean_length_ratio = {}\nboth_succeeded = {}\n",
        ev.samples, seed, hybrid_rate, fallback_rate, mean_ratio, both,
    );
    std::fs::write(out.join("hybrid_eval.txt"), &text)?;
    print!("{text}");
    Ok(())
}
