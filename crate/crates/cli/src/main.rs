use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use fieldnav::graph::{self, ExperienceId};
use fieldnav::mission::Supergraph;
use fieldnav::runtime::replay::{perceive_scans, read_drive, read_scans, replay_teach, write_scans};
use fieldnav::runtime::{stats_from_text, CampaignReport, Director, Engine, Scenario, StatsConfig, TelemetryWriter};
use fieldnav_server::{Orchestrator, ServeOptions};

/// Environment variable holding the `serve` bind address.
const BIND_ENV: &str = "FIELDNAV_BIND";
const DEFAULT_BIND: &str = "127.0.0.1:8080";

#[derive(Parser)]
#[command(name = "fieldnav", version, about = "Teach-and-repeat field robot simulator")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Args, Clone)]
struct ScenarioArgs {
    #[arg(long)]
    scenario: PathBuf,
    /// Overrides the scenario seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the appearance-clock acceleration.
    #[arg(long)]
    accel: Option<f64>,
}

impl ScenarioArgs {
    fn load(&self) -> Result<Scenario> {
        let mut s = Scenario::load(&self.scenario).with_context(|| format!("loading {}", self.scenario.display()))?;
        if let Some(seed) = self.seed {
            s.seed = seed;
        }
        if let Some(a) = self.accel {
            s.runtime.accel = a;
        }
        s.validate()?;
        Ok(s)
    }
}

#[derive(Subcommand)]
enum Cmd {
    /// Run a scenario headless.
    Run {
        #[command(flatten)]
        scenario: ScenarioArgs,
        /// Simulated seconds; by default until the script or campaign ends.
        #[arg(long)]
        duration: Option<f64>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        /// Also write every scan taken while docking to scans.ndjson.
        #[arg(long)]
        record_scans: bool,
    },
    /// Aggregate a telemetry log into a report and CSV tables.
    Stats {
        log: PathBuf,
        /// Bucket width in calendar seconds.
        #[arg(long, default_value_t = 86_400.0)]
        bucket: f64,
        #[arg(long, default_value_t = 900.0)]
        short_run: f64,
        #[arg(long, default_value_t = 10.0)]
        aborted_run: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Console backend (bind address from FIELDNAV_BIND).
    Serve {
        #[command(flatten)]
        scenario: ScenarioArgs,
        /// Load map.fnm and supergraph.json from here instead of running
        /// the scenario script first.
        #[arg(long)]
        map: Option<PathBuf>,
        /// Simulated seconds per wall second.
        #[arg(long, default_value_t = 1.0)]
        speed: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Map maintenance.
    Map {
        #[command(subcommand)]
        action: MapCmd,
    },
    /// Play back recorded traces.
    Replay {
        #[command(subcommand)]
        kind: ReplayCmd,
    },
}

#[derive(Subcommand)]
enum MapCmd {
    /// Check structural invariants of a saved map.
    Audit { dir: PathBuf },
    /// Keyframe, experience and edge counts.
    Stats { dir: PathBuf },
    /// Remove experiences no edge uses any more, or one by id.
    Purge {
        dir: PathBuf,
        #[arg(long, conflicts_with = "stale")]
        experience: Option<u32>,
        #[arg(long)]
        stale: bool,
    },
}

#[derive(Subcommand)]
enum ReplayCmd {
    /// Dock perception over a scan trace; prints one fix per line.
    Scans {
        trace: PathBuf,
        #[command(flatten)]
        scenario: ScenarioArgs,
    },
    /// Replay a teleop drive trace as a teach session.
    Drive {
        trace: PathBuf,
        #[command(flatten)]
        scenario: ScenarioArgs,
        #[arg(long)]
        from: Option<String>,
        #[arg(long)]
        to: Option<String>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
}

fn telemetry_file(dir: &Path, scenario: &Scenario) -> Result<TelemetryWriter> {
    std::fs::create_dir_all(dir)?;
    let f = File::create(dir.join("telemetry.ndjson"))?;
    Ok(TelemetryWriter::new(Box::new(BufWriter::new(f)), Engine::header(scenario)))
}

fn print_summary(r: &CampaignReport) {
    println!(
        "autonomous: {:.1} s, {:.1} m over {} runs ({} short); traversals {:.1} m",
        r.autonomous_s,
        r.autonomous_m,
        r.runs.len(),
        r.runs.iter().filter(|x| x.short).count(),
        r.traversal_m
    );
    println!(
        "missions {} captures {} lost {}; edges taught {} re-taught {} never re-taught {:.3}",
        r.missions, r.captures, r.lost_events, r.taught_edges, r.retaught_edges, r.never_retaught_fraction
    );
}

fn load_map(dir: &Path) -> Result<(graph::ExperienceGraph, Supergraph)> {
    let g = graph::load(&dir.join("map.fnm")).with_context(|| format!("loading {}/map.fnm", dir.display()))?;
    let sg = Supergraph::load(&dir.join("supergraph.json")).with_context(|| format!("loading {}/supergraph.json", dir.display()))?;
    Ok((g, sg))
}

fn run(scenario: ScenarioArgs, duration: Option<f64>, out: PathBuf, record_scans: bool) -> Result<()> {
    let s = scenario.load()?;
    let writer = telemetry_file(&out, &s)?;
    let mut d = Director::new(s, writer)?;
    if record_scans {
        d.engine.record_scans();
    }
    let summary = d.run(duration)?;
    summary.report.export(&out)?;
    d.engine.save_map(&out)?;
    if record_scans {
        std::fs::write(out.join("scans.ndjson"), write_scans(&d.engine.take_scans()))?;
    }
    println!("{} ticks, t = {:.1} s", summary.ticks, summary.t_end);
    print_summary(&summary.report);
    Ok(())
}

fn stats(log: PathBuf, cfg: StatsConfig, out: Option<PathBuf>) -> Result<()> {
    let text = std::fs::read_to_string(&log).with_context(|| format!("reading {}", log.display()))?;
    let report = stats_from_text(&text, cfg)?;
    print!("{}", report.buckets_csv());
    print_summary(&report);
    if let Some(dir) = out {
        report.export(&dir)?;
    }
    Ok(())
}

fn serve(scenario: ScenarioArgs, map: Option<PathBuf>, speed: f64, out: Option<PathBuf>) -> Result<()> {
    let s = scenario.load()?;
    let writer = match &out {
        Some(dir) => telemetry_file(dir, &s)?,
        None => TelemetryWriter::new(Box::new(std::io::sink()), Engine::header(&s)),
    };
    let engine = match map {
        Some(dir) => {
            let (g, sg) = load_map(&dir)?;
            Engine::with_map(s, g, sg, writer)?
        }
        None => {
            // Scripted setup (teaching, say) runs headless before serving.
            let mut d = Director::new(s, writer)?;
            while !d.is_finished() {
                d.step()?;
            }
            d.engine
        }
    };
    let bind = std::env::var(BIND_ENV).unwrap_or_else(|_| DEFAULT_BIND.to_string());
    let orchestrator = Orchestrator::spawn(engine, ServeOptions { speed, out, ..Default::default() });
    let rt = tokio::runtime::Runtime::new()?;
    let report = rt.block_on(async move {
        let listener = tokio::net::TcpListener::bind(&bind).await.with_context(|| format!("binding {bind}"))?;
        let stop = async {
            let _ = tokio::signal::ctrl_c().await;
        };
        Ok::<_, anyhow::Error>(fieldnav_server::serve(listener, orchestrator, stop).await?)
    })?;
    print_summary(&report);
    Ok(())
}

fn map(action: MapCmd) -> Result<()> {
    match action {
        MapCmd::Audit { dir } => {
            let (g, sg) = load_map(&dir)?;
            let mut issues: Vec<String> = g.audit().into_iter().map(|i| i.0).collect();
            if let Err(e) = sg.audit_against(&g) {
                issues.push(e.to_string());
            }
            if issues.is_empty() {
                println!("ok");
            } else {
                issues.iter().for_each(|i| println!("{i}"));
                bail!("{} issue(s)", issues.len());
            }
        }
        MapCmd::Stats { dir } => {
            let (g, sg) = load_map(&dir)?;
            let taught = sg.edges.iter().filter(|e| e.active().is_some()).count();
            println!("keyframes {}", g.keyframe_count());
            println!("experiences {}", g.experiences().count());
            println!("bound edges {}", g.bindings().len());
            println!("supergraph nodes {} edges {} taught {}", sg.nodes.len(), sg.edges.len(), taught);
        }
        MapCmd::Purge { dir, experience, stale } => {
            let (mut g, mut sg) = load_map(&dir)?;
            let ids: Vec<ExperienceId> = match (experience, stale) {
                (Some(id), _) => vec![ExperienceId(id)],
                (None, true) => {
                    let bound: Vec<ExperienceId> = g.bindings().values().copied().collect();
                    g.experiences().map(|e| e.id).filter(|id| !bound.contains(id)).collect()
                }
                (None, false) => bail!("give --experience <id> or --stale"),
            };
            for id in &ids {
                g.purge_experience(*id)?;
            }
            sg.prune_experiences(&g);
            graph::save(&g, &dir.join("map.fnm"))?;
            sg.save(&dir.join("supergraph.json"))?;
            println!("purged {} experience(s)", ids.len());
        }
    }
    Ok(())
}

fn replay(kind: ReplayCmd) -> Result<()> {
    match kind {
        ReplayCmd::Scans { trace, scenario } => {
            let s = scenario.load()?;
            let dock = s.world.dock.context("scenario has no dock")?;
            let scans = read_scans(&std::fs::read_to_string(&trace)?)?;
            let mut out = std::io::stdout().lock();
            for (scan, fix) in scans.iter().zip(perceive_scans(&scans, &s.docking, &dock.layout)) {
                let line = serde_json::json!({ "stamp": scan.timestamp, "fix": fix });
                writeln!(out, "{line}")?;
            }
        }
        ReplayCmd::Drive { trace, scenario, from, to, out } => {
            let s = scenario.load()?;
            let samples = read_drive(&std::fs::read_to_string(&trace)?)?;
            let writer = telemetry_file(&out, &s)?;
            let mut engine = Engine::new(s, writer)?;
            let summary = replay_teach(&mut engine, &samples, from, to)?;
            let report = engine.finish()?;
            engine.save_map(&out)?;
            report.export(&out)?;
            match summary {
                Some(t) => println!("experience {} with {} keyframes, {:.2} m", t.experience.0, t.keyframes, t.length),
                None => println!("no keyframes recorded"),
            }
        }
    }
    Ok(())
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match Cli::parse().command {
        Cmd::Run { scenario, duration, out, record_scans } => run(scenario, duration, out, record_scans),
        Cmd::Stats { log, bucket, short_run, aborted_run, out } => stats(
            log,
            StatsConfig {
                bucket,
                short_run,
                aborted_run,
            },
            out,
        ),
        Cmd::Serve { scenario, map, speed, out } => serve(scenario, map, speed, out),
        Cmd::Map { action } => map(action),
        Cmd::Replay { kind } => replay(kind),
    }
}
