#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use def_tracer::stages::{
    analyze_stage, def_stage, graph_stage, modes_stage, AnalysisReport, DataPaths, ModesRecord,
    Overrides, Status,
};
use def_tracer::synth::{preset, synthesize_scenario, ScenarioSpec, PRESETS};
use def_tracer::waveform::write_dataset;
use def_tracer::{AnalysisConfig, Error, Result, Threshold};

#[derive(Parser)]
#[command(
    name = "def-tracer",
    version,
    about = "Locate sources and sinks of sub/super-synchronous oscillations from three-phase recordings"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// dq transform and mode identification.
    Modes {
        #[command(flatten)]
        input: Input,
        #[command(flatten)]
        tune: Tuning,
    },
    /// Per-mode DEF traces and slopes; needs `modes` output in --out.
    Def {
        #[command(flatten)]
        input: OptionalInput,
        #[command(flatten)]
        tune: Tuning,
        /// Only analyse the mode whose band contains this frequency (Hz).
        #[arg(long)]
        mode: Option<f64>,
    },
    /// Energy-flow graphs and labels from cached slopes; needs `def` output in --out.
    Graph {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        tune: Tuning,
    },
    /// All stages in order.
    Analyze {
        #[command(flatten)]
        input: Input,
        #[command(flatten)]
        tune: Tuning,
    },
    /// Write a synthetic dataset with its analytic truth.
    Synth {
        /// Scenario file (TOML).
        #[arg(long, conflicts_with = "preset", required_unless_present = "preset")]
        scenario: Option<PathBuf>,
        /// Built-in scenario.
        #[arg(long, value_parser = clap::builder::PossibleValuesParser::new(PRESETS))]
        preset: Option<String>,
        #[arg(long)]
        seed: Option<u64>,
        /// Relative RMS noise added to every channel.
        #[arg(long)]
        noise: Option<f64>,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct Input {
    #[arg(long)]
    config: Option<PathBuf>,
    /// Waveform file, or a directory holding waveforms.csv and topology.txt.
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    topology: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct OptionalInput {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    topology: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct Tuning {
    #[arg(long)]
    f0: Option<f64>,
    #[arg(long)]
    ref_node: Option<String>,
    /// Analysis window `start:end` in seconds.
    #[arg(long, value_parser = parse_window)]
    window: Option<[f64; 2]>,
    #[arg(long)]
    t_win: Option<f64>,
    /// Absolute (`0.1`) or relative (`0.05rel`).
    #[arg(long, value_parser = parse_threshold)]
    eps_edge: Option<Threshold>,
    #[arg(long, value_parser = parse_threshold)]
    eps_node: Option<Threshold>,
    #[arg(long)]
    max_modes: Option<usize>,
    #[arg(long)]
    band_halfwidth: Option<f64>,
    #[arg(long)]
    filter_order: Option<usize>,
}

impl Tuning {
    fn overrides(&self) -> Overrides {
        Overrides {
            f0: self.f0,
            ref_node: self.ref_node.clone(),
            window: self.window,
            t_win: self.t_win,
            eps_edge: self.eps_edge,
            eps_node: self.eps_node,
            max_modes: self.max_modes,
            band_halfwidth: self.band_halfwidth,
            filter_order: self.filter_order,
        }
    }
}

fn parse_window(s: &str) -> std::result::Result<[f64; 2], String> {
    let (a, b) = s.split_once(':').ok_or("expected start:end")?;
    let a: f64 = a.trim().parse().map_err(|_| format!("bad start `{a}`"))?;
    let b: f64 = b.trim().parse().map_err(|_| format!("bad end `{b}`"))?;
    if !(b > a) {
        return Err(format!("window {s} is empty"));
    }
    Ok([a, b])
}

fn parse_threshold(s: &str) -> std::result::Result<Threshold, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn base_config(path: Option<&Path>) -> Result<Option<AnalysisConfig>> {
    path.map(AnalysisConfig::load).transpose()
}

fn print_modes(rec: &ModesRecord) {
    if rec.modes.is_empty() {
        println!("no SSCI detected");
        return;
    }
    println!(
        "{:>10} {:>10} {:>10} {:>12}",
        "freq_hz", "band_lo", "band_hi", "prom_db"
    );
    for m in &rec.modes {
        println!(
            "{:>10.3} {:>10.3} {:>10.3} {:>12.1}",
            m.freq, m.band.0, m.band.1, m.prominence_db
        );
    }
}

fn print_report(r: &AnalysisReport) {
    if r.status == Status::NoSsciDetected {
        println!("no SSCI detected");
        return;
    }
    for m in &r.modes {
        println!("mode {:.2} Hz ({})", m.mode.freq, m.graph_file);
        if let Some(labels) = m.graph["element_labels"].as_object() {
            for (id, l) in labels {
                println!("  element {id}: {}", l.as_str().unwrap_or("?"));
            }
        }
        if let Some(labels) = m.graph["node_labels"].as_object() {
            for (id, l) in labels {
                println!("  node {id}: {}", l.as_str().unwrap_or("?"));
            }
        }
    }
    for w in &r.warnings {
        eprintln!("warning: {w}");
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Modes { input, tune } => {
            let cfg = tune
                .overrides()
                .apply(base_config(input.config.as_deref())?.unwrap_or_default())?;
            let data = DataPaths::resolve(&input.data, input.topology.as_deref());
            print_modes(&modes_stage(&cfg, &data, &input.out)?);
        }
        Command::Def { input, tune, mode } => {
            let data = input
                .data
                .as_deref()
                .map(|d| DataPaths::resolve(d, input.topology.as_deref()));
            let rec = def_stage(
                &tune.overrides(),
                base_config(input.config.as_deref())?,
                data,
                mode,
                &input.out,
            )?;
            for m in &rec.modes {
                println!("DEF computed for {:.2} Hz", m.freq);
            }
        }
        Command::Graph { config, out, tune } => {
            print_report(&graph_stage(
                &tune.overrides(),
                base_config(config.as_deref())?,
                &out,
            )?);
        }
        Command::Analyze { input, tune } => {
            let cfg = tune
                .overrides()
                .apply(base_config(input.config.as_deref())?.unwrap_or_default())?;
            let data = DataPaths::resolve(&input.data, input.topology.as_deref());
            print_report(&analyze_stage(&cfg, &data, &input.out)?);
        }
        Command::Synth {
            scenario,
            preset: name,
            seed,
            noise,
            out,
        } => {
            let mut spec = match (scenario, name) {
                (Some(p), _) => ScenarioSpec::load(&p)?,
                (None, Some(n)) => {
                    preset(&n).ok_or_else(|| Error::Scenario(format!("unknown preset `{n}`")))?
                }
                (None, None) => unreachable!("clap requires one of --scenario/--preset"),
            };
            if let Some(s) = seed {
                spec.seed = s;
            }
            if let Some(n) = noise {
                spec.noise = n;
            }
            let (ds, truth) = synthesize_scenario(&spec)?;
            write_dataset(&out, &ds)?;
            let write = |name: &str, text: String| {
                let p = out.join(name);
                std::fs::write(&p, text).map_err(|e| Error::io(&p, e))
            };
            write("truth.json", truth.to_json())?;
            write("scenario.toml", spec.to_toml())?;
            println!("wrote {} to {}", spec.name, out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
