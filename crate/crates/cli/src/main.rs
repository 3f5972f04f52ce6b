use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use fedfilter::aggregation::Rule;
use fedfilter::report::{format_g9, WriteOptions};
use fedfilter::runner::{load_config, run_to_dir, LoadedConfig, RunOverrides};
use fedfilter::{verify, Error};

#[derive(Parser)]
#[command(name = "fedfilter", version, about = "Federated-learning simulator with robust aggregation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment and write metrics.csv, weights.jsonl and manifest.json.
    Run {
        /// Config file, or the name of a bundled preset.
        #[arg(long)]
        config: String,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        rounds: Option<usize>,
        /// Record measured wall time instead of 0.
        #[arg(long)]
        timing: bool,
    },
    /// Run an acceptance suite.
    Verify {
        #[arg(long, default_value = "all")]
        suite: String,
    },
    /// Run several configs (or one config under several rules) side by side.
    Compare {
        #[arg(long, value_delimiter = ',', required = true)]
        configs: Vec<String>,
        #[arg(long)]
        out: PathBuf,
        /// Aggregation rules to apply to every config, e.g. `simeon,krum:6,bulyan`.
        #[arg(long, value_delimiter = ',')]
        rules: Vec<String>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        rounds: Option<usize>,
        #[arg(long)]
        timing: bool,
    },
}

enum Failure {
    Config(String),
    Runtime(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        if e.is_config() {
            Failure::Config(e.to_string())
        } else {
            Failure::Runtime(e.to_string())
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.command {
        Command::Run {
            config,
            out,
            seed,
            rounds,
            timing,
        } => run(&config, &out, RunOverrides { seed, rounds }, WriteOptions { timing }),
        Command::Verify { suite } => run_verify(&suite),
        Command::Compare {
            configs,
            out,
            rules,
            seed,
            rounds,
            timing,
        } => compare(&configs, &out, &rules, RunOverrides { seed, rounds }, WriteOptions { timing }),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(msg)) => {
            eprintln!("fedfilter: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("fedfilter: {msg}");
            ExitCode::from(2)
        }
    }
}

fn run(config: &str, out: &Path, overrides: RunOverrides, options: WriteOptions) -> Result<(), Failure> {
    let loaded = load_config(config)?;
    let outcome = run_to_dir(&loaded, out, &overrides, options)?;
    if let Some(last) = outcome.records.last() {
        eprintln!(
            "{}: {} rounds, final accuracy {}, misclassification {} -> {}",
            loaded.config.name,
            outcome.records.len(),
            format_g9(last.accuracy),
            format_g9(last.misclassification),
            out.display()
        );
    }
    Ok(())
}

fn run_verify(suite: &str) -> Result<(), Failure> {
    let checks = verify::run_suite(suite)?;
    let mut failed = 0;
    for c in &checks {
        println!("{}", c.line());
        failed += usize::from(!c.passed);
    }
    if failed == 0 {
        Ok(())
    } else {
        Err(Failure::Runtime(format!("{failed} of {} criteria failed", checks.len())))
    }
}

/// `rule` or `rule:f`.
fn parse_rule(spec: &str) -> Result<(Rule, Option<usize>), Failure> {
    let (name, f) = match spec.split_once(':') {
        Some((name, f)) => {
            let f = f
                .parse()
                .map_err(|_| Failure::Config(format!("--rules: `{f}` is not a valid f bound in `{spec}`")))?;
            (name, Some(f))
        }
        None => (spec, None),
    };
    let rule = name.parse::<Rule>().map_err(Failure::from)?;
    Ok((rule, f))
}

/// Applies `rule` to `loaded`, clamping the bound to what the population allows.
fn with_rule(loaded: &LoadedConfig, rule: Rule, f: Option<usize>) -> Result<LoadedConfig, Failure> {
    let requested = f.unwrap_or(loaded.config.aggregator.f_bound);
    let n = loaded.config.min_population();
    let limit = match rule {
        Rule::Krum => n.saturating_sub(3),
        Rule::Bulyan => n.saturating_sub(3) / 4,
        _ => usize::MAX,
    };
    if requested > limit {
        eprintln!(
            "fedfilter: {}: {} f_bound {requested} clamped to {limit} for n = {n}",
            loaded.config.name,
            rule.name()
        );
    }
    Ok(loaded.with_rule(rule, requested.min(limit))?)
}

fn compare(
    configs: &[String],
    out: &Path,
    rules: &[String],
    overrides: RunOverrides,
    options: WriteOptions,
) -> Result<(), Failure> {
    let rules = rules.iter().map(|r| parse_rule(r)).collect::<Result<Vec<_>, _>>()?;
    let loaded = configs.iter().map(|c| load_config(c)).collect::<Result<Vec<_>, _>>()?;
    let mut runs: Vec<(String, LoadedConfig)> = Vec::new();
    for l in &loaded {
        if rules.is_empty() {
            runs.push((l.config.name.clone(), l.clone()));
        }
        for &(rule, f) in &rules {
            let label = format!("{}_{}", l.config.name, rule.name());
            runs.push((label, with_rule(l, rule, f)?));
        }
    }
    let mut seen = std::collections::BTreeSet::new();
    for (label, _) in &runs {
        if !seen.insert(label.as_str()) {
            return Err(Failure::Config(format!("--configs: two runs would share the output directory `{label}`")));
        }
    }

    let mut merged = String::from("run,aggregator,");
    merged.push_str(fedfilter::report::METRICS_HEADER);
    merged.push('\n');
    for (label, l) in &runs {
        let outcome = run_to_dir(l, out.join(label), &overrides, options)?;
        let rule = l.config.aggregator.rule.name();
        for r in &outcome.records {
            let wall = if options.timing { r.wall_time_ms } else { 0 };
            let _ = writeln!(
                merged,
                "{label},{rule},{},{},{},{},{},{wall}",
                r.round,
                format_g9(r.accuracy),
                format_g9(r.misclassification),
                r.simeon_iterations,
                r.active_clients
            );
        }
        if let Some(last) = outcome.records.last() {
            eprintln!(
                "{label}: final accuracy {}, misclassification {}",
                format_g9(last.accuracy),
                format_g9(last.misclassification)
            );
        }
    }
    let path = out.join("compare.csv");
    std::fs::write(&path, merged).map_err(|e| Failure::Runtime(format!("{}: {e}", path.display())))
}
