use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use whitehat_core::chainsim::{simulate_bidding, BiddingSetup, BotConfig, Scenario};
use whitehat_core::corpus;
use whitehat_core::funcx::{extract_funcs, infer_args};
use whitehat_core::fuzz::{run_campaign, EvalContext, FuzzBudget};
use whitehat_core::hijack::clone_exploit;
use whitehat_core::minivm::VmConfig;
use whitehat_core::pipeline::{replay_until, run_pipeline, run_scenario, Event, PipelineConfig, RescueReport, ScenarioReport};
use whitehat_core::rewrite::rewrite_program;
use whitehat_core::traits::{TraitIndex, TraitMode};
use whitehat_core::types::Address;

#[derive(Parser)]
#[command(name = "whitehat", version, about = "Counter-exploit synthesis on a simulated chain")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args)]
struct Global {
    /// Seed for every random choice.
    #[arg(long, global = true, default_value_t = 1)]
    seed: u64,
    /// Fuzzing workers.
    #[arg(long, global = true, default_value_t = 1)]
    workers: usize,
    /// Scenario file (or corpus name) providing the world.
    #[arg(long, global = true)]
    world: Option<String>,
    /// Write output here instead of stdout.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Clone, rewrite and fuzz a deployed contract, then submit the best rescue.
    Hijack {
        address: Address,
        /// Play the scenario up to this tick first.
        #[arg(long, default_value_t = 0)]
        at_tick: u64,
    },
    /// Rebuild a scripted attack by label and replay it on similar victims.
    Backrun { label: String },
    /// Run only the fuzzing campaign over a contract's cloned programs.
    Fuzz {
        address: Address,
        #[arg(long, default_value_t = 0)]
        at_tick: u64,
        #[arg(long, default_value_t = 4_000)]
        max_execs: u64,
    },
    /// Trait index over the world's contracts.
    #[command(subcommand)]
    Traits(TraitsCmd),
    /// Function table recovery.
    #[command(subcommand)]
    Funcx(FuncxCmd),
    /// Simulate a gas-price bidding war and print the bid log as CSV.
    BidSim {
        /// JSON with optional `setup` and `bots`; defaults to the calibrated six bots.
        config: Option<PathBuf>,
    },
    /// Corpus scenarios.
    #[command(subcommand)]
    Scenario(ScenarioCmd),
    /// Summarize a saved report.
    Report { file: PathBuf },
}

#[derive(Subcommand)]
enum TraitsCmd {
    /// Build the index and write its binary snapshot to --out.
    Build,
    /// Addresses sharing a contract's trait.
    Similar {
        address: Address,
        #[arg(long, default_value = "codehash")]
        mode: TraitMode,
        /// Read a snapshot instead of indexing the world.
        #[arg(long)]
        index: Option<PathBuf>,
    },
}

#[derive(Subcommand)]
enum FuncxCmd {
    /// Selectors, entry points and inferred argument types.
    Dump {
        address: Address,
        #[arg(long, default_value_t = 0)]
        at_tick: u64,
    },
}

#[derive(Subcommand)]
enum ScenarioCmd {
    List,
    Export { name: String, file: PathBuf },
    /// Play a scenario with the pipeline watching and print the report.
    Run {
        /// Scenario file or corpus name.
        scenario: String,
        /// Play the timeline without the pipeline.
        #[arg(long)]
        undefended: bool,
    },
}

#[derive(Default, Deserialize)]
struct BidConfig {
    setup: Option<BiddingSetup>,
    bots: Option<Vec<BotConfig>>,
}

#[derive(Serialize)]
struct FuzzSummary {
    programs: usize,
    executions: u64,
    corpus_size: usize,
    profit: Option<i128>,
    fills: Vec<String>,
}

/// Bad input, as opposed to a stage that ran and failed.
#[derive(Debug)]
struct BadInput(anyhow::Error);

enum Status {
    Ok,
    StageFailed(String),
}

fn bad<T>(r: Result<T>) -> std::result::Result<T, BadInput> {
    r.map_err(BadInput)
}

fn load_scenario(source: &str) -> Result<Scenario> {
    let path = Path::new(source);
    if path.exists() {
        let text = fs::read_to_string(path).with_context(|| format!("reading {source}"))?;
        return Scenario::from_json(&text).with_context(|| format!("parsing {source}"));
    }
    corpus::build(source).map_err(|_| anyhow!("no such world file or scenario: {source}"))
}

fn world_scenario(g: &Global) -> Result<Scenario> {
    let source = g.world.as_deref().ok_or_else(|| anyhow!("--world is required"))?;
    load_scenario(source)
}

fn config(g: &Global) -> PipelineConfig {
    PipelineConfig {
        seed: g.seed,
        workers: g.workers.max(1),
        ..PipelineConfig::default()
    }
}

fn emit(g: &Global, text: &str) -> Result<()> {
    match &g.out {
        Some(p) => fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => {
            let mut out = std::io::stdout().lock();
            out.write_all(text.as_bytes())?;
            if !text.ends_with('\n') {
                out.write_all(b"\n")?;
            }
            Ok(())
        }
    }
}

fn rescue_status(r: &RescueReport) -> Status {
    match r.failure {
        Some(f) => Status::StageFailed(format!("{f:?}")),
        None => Status::Ok,
    }
}

fn run(cli: Cli) -> std::result::Result<Status, BadInput> {
    let g = &cli.global;
    match cli.cmd {
        Cmd::Hijack { address, at_tick } => {
            let scn = bad(world_scenario(g))?;
            let cfg = config(g);
            let mut chain = replay_until(&scn, at_tick, &cfg.builder);
            if chain.world().code(&address).is_empty() {
                return Err(BadInput(anyhow!("{address} has no code at tick {at_tick}")));
            }
            let report = run_pipeline(&mut chain, &Event::ContractCreated { address, tx_id: 0 }, 0, &cfg);
            bad(emit(g, &report.to_json()))?;
            Ok(rescue_status(&report))
        }
        Cmd::Backrun { label } => {
            let scn = bad(world_scenario(g))?;
            let cfg = config(g);
            let s = scn
                .timeline
                .iter()
                .find(|s| s.tx.label == label)
                .ok_or_else(|| BadInput(anyhow!("no scripted transaction labeled {label:?}")))?;
            let interval = scn.block_interval.max(1);
            let at = s.tick.div_ceil(interval) * interval;
            let mut chain = replay_until(&scn, at, &cfg.builder);
            let inc = chain
                .blocks()
                .iter()
                .flat_map(|b| &b.txs)
                .find(|t| t.tx.label == label)
                .cloned()
                .ok_or_else(|| BadInput(anyhow!("{label:?} was never included")))?;
            let event = Event::AttackConfirmed {
                tx: inc.tx.msg.clone(),
                pre_state: inc.pre_state.clone().expect("included transactions keep their pre-state"),
                tx_id: inc.id,
            };
            let report = run_pipeline(&mut chain, &event, 0, &cfg);
            bad(emit(g, &report.to_json()))?;
            Ok(rescue_status(&report))
        }
        Cmd::Fuzz { address, at_tick, max_execs } => {
            let scn = bad(world_scenario(g))?;
            let mut cfg = config(g);
            cfg.budget = FuzzBudget {
                max_execs,
                ..cfg.budget
            };
            let chain = replay_until(&scn, at_tick, &cfg.builder);
            let world = chain.world();
            let programs: Vec<_> = clone_exploit(world, address, &cfg.path_caps)
                .programs
                .iter()
                .map(|p| rewrite_program(p, world))
                .collect();
            if programs.is_empty() {
                return Err(BadInput(anyhow!("{address} has no functions to fuzz")));
            }
            let ctx = EvalContext {
                world,
                registry: &chain.registry,
                operator: cfg.operator,
                gas_price: cfg.gas_price,
                cfg: VmConfig {
                    step_budget: cfg.fuzz_step_budget,
                    ..VmConfig::default()
                },
            };
            let result = run_campaign(&ctx, &programs, &cfg.campaign());
            let summary = FuzzSummary {
                programs: programs.len(),
                executions: result.executions,
                corpus_size: result.corpus_size,
                profit: result.best.as_ref().map(|b| b.profit),
                fills: result
                    .best
                    .as_ref()
                    .map(|b| b.program.fills().iter().map(|w| w.to_string()).collect())
                    .unwrap_or_default(),
            };
            bad(emit(g, &serde_json::to_string_pretty(&summary).expect("summary serializes")))?;
            Ok(match result.best {
                Some(_) => Status::Ok,
                None => Status::StageFailed("no profitable test case".into()),
            })
        }
        Cmd::Traits(TraitsCmd::Build) => {
            let scn = bad(world_scenario(g))?;
            let out = g.out.as_ref().ok_or_else(|| BadInput(anyhow!("traits build needs --out")))?;
            let idx = TraitIndex::build(&scn.world);
            let file = bad(fs::File::create(out).with_context(|| format!("creating {}", out.display())))?;
            bad(idx.save(std::io::BufWriter::new(file)).context("writing snapshot"))?;
            eprintln!("indexed {} accounts", idx.records.len());
            Ok(Status::Ok)
        }
        Cmd::Traits(TraitsCmd::Similar { address, mode, index }) => {
            let idx = match index {
                Some(p) => {
                    let file = bad(fs::File::open(&p).with_context(|| format!("opening {}", p.display())))?;
                    bad(TraitIndex::load(std::io::BufReader::new(file)).context("reading snapshot"))?
                }
                None => TraitIndex::build(&bad(world_scenario(g))?.world),
            };
            let text: String = idx.query_similar(address, mode).iter().map(|a| format!("{a}\n")).collect();
            bad(emit(g, &text))?;
            Ok(Status::Ok)
        }
        Cmd::Funcx(FuncxCmd::Dump { address, at_tick }) => {
            let scn = bad(world_scenario(g))?;
            let chain = replay_until(&scn, at_tick, &config(g).builder);
            let world = chain.world();
            let funcs: Vec<_> = extract_funcs(world.code(&address))
                .into_iter()
                .map(|mut f| {
                    f.args = infer_args(world, address, &f);
                    f
                })
                .collect();
            bad(emit(g, &serde_json::to_string_pretty(&funcs).expect("functions serialize")))?;
            Ok(Status::Ok)
        }
        Cmd::BidSim { config } => {
            let cfg: BidConfig = match config {
                Some(p) => {
                    let text = bad(fs::read_to_string(&p).with_context(|| format!("reading {}", p.display())))?;
                    bad(serde_json::from_str(&text).with_context(|| format!("parsing {}", p.display())))?
                }
                None => BidConfig::default(),
            };
            let setup = cfg.setup.unwrap_or_else(BiddingSetup::calibrated);
            let bots = cfg.bots.unwrap_or_else(BotConfig::six_bots);
            let out = simulate_bidding(&setup, &bots);
            eprintln!(
                "{} bids, winner {:?} at {:.1} gwei, rescued fraction {:.3}",
                out.log.entries.len(),
                out.winner,
                out.winning_gas_price,
                out.rescued_fraction
            );
            bad(emit(g, &out.log.to_csv()))?;
            Ok(Status::Ok)
        }
        Cmd::Scenario(ScenarioCmd::List) => {
            let text: String = corpus::all().iter().map(|s| format!("{:<20} {}\n", s.name, s.description)).collect();
            bad(emit(g, &text))?;
            Ok(Status::Ok)
        }
        Cmd::Scenario(ScenarioCmd::Export { name, file }) => {
            let scn = bad(corpus::build(&name).map_err(|e| anyhow!(e)))?;
            bad(fs::write(&file, scn.to_json()).with_context(|| format!("writing {}", file.display())))?;
            Ok(Status::Ok)
        }
        Cmd::Scenario(ScenarioCmd::Run { scenario, undefended }) => {
            let scn = bad(load_scenario(&scenario))?;
            let report = run_scenario(&scn, &config(g), !undefended);
            bad(emit(g, &report.to_json()))?;
            let broken: Vec<&str> = report.expectations.iter().filter(|e| !e.holds).map(|e| e.label.as_str()).collect();
            Ok(if broken.is_empty() || undefended {
                Status::Ok
            } else {
                Status::StageFailed(format!("expectations failed: {}", broken.join(", ")))
            })
        }
        Cmd::Report { file } => {
            let text = bad(fs::read_to_string(&file).with_context(|| format!("reading {}", file.display())))?;
            let summary = bad(summarize(&text))?;
            bad(emit(g, &summary))?;
            Ok(Status::Ok)
        }
    }
}

fn rescue_line(r: &RescueReport) -> String {
    let holes = match (r.holes_before, r.holes_after) {
        (Some(b), Some(a)) => format!("{b}->{a}"),
        (Some(b), None) => format!("{b}->-"),
        _ => "-".into(),
    };
    let outcome = match (r.profit, r.failure) {
        (Some(p), _) => format!("profit {p}, {} txs", r.submitted.len()),
        (None, Some(f)) => format!("failed: {f:?}"),
        (None, None) => "no result".into(),
    };
    format!(
        "#{} {:?} on {} at tick {}: {} programs, holes {holes}, {outcome}\n",
        r.opportunity, r.strategy, r.subject, r.tick, r.programs
    )
}

fn summarize(text: &str) -> Result<String> {
    if let Ok(r) = serde_json::from_str::<ScenarioReport>(text) {
        let mut s = format!("scenario {} (seed {}, defended {})\n", r.scenario, r.seed, r.defended);
        for rep in &r.reports {
            s += &rescue_line(rep);
        }
        for t in &r.scripted {
            let outcome = t.outcome.map_or("not included".to_string(), |o| format!("{o:?}"));
            s += &format!("tick {:>4} {:?} {:?}: {outcome}\n", t.tick, t.role, t.label);
        }
        for e in &r.expectations {
            s += &format!("[{}] {}: {}\n", if e.holds { "ok" } else { "FAILED" }, e.label, e.value);
        }
        return Ok(s);
    }
    if let Ok(r) = serde_json::from_str::<RescueReport>(text) {
        return Ok(rescue_line(&r));
    }
    bail!("not a scenario or rescue report")
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(Status::Ok) => ExitCode::SUCCESS,
        Ok(Status::StageFailed(why)) => {
            eprintln!("stage failed: {why}");
            ExitCode::from(1)
        }
        Err(BadInput(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
