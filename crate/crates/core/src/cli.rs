//! Command-line front end.
//!
//! Exit codes: 0 success, 1 runtime failure (a run diverged, I/O), 2 usage or
//! configuration error. Data (CSV, JSON) goes to stdout or files, diagnostics
//! to stderr.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::parser::ValueSource;
use clap::{Arg, ArgMatches, Command};

use crate::config::{parse_key_values, ExperimentConfig, KeyValues, EXPERIMENT_KEYS};
use crate::controllers::{hp_ratio, ratio_in_range, RATIO_LOWER, RATIO_UPPER};
use crate::error::Error;
use crate::harness::{compare, run_experiment, sweep_fc, write_run_log, write_run_log_file};
use crate::schedule::CyclicalSchedule;

pub const EXIT_OK: i32 = 0;
pub const EXIT_RUNTIME: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

fn value_arg(name: &'static str) -> Arg {
    Arg::new(name).long(name).num_args(1).value_name("VALUE")
}

fn experiment_args() -> Vec<Arg> {
    let mut args = vec![value_arg("config").help("flat key = value file; flags override it")];
    for &(name, aliases, help) in EXPERIMENT_KEYS {
        let mut arg = value_arg(name).help(help);
        for &alias in aliases {
            arg = if alias.len() == 1 {
                arg.short(alias.chars().next().unwrap())
            } else {
                arg.visible_alias(alias)
            };
        }
        args.push(arg);
    }
    args
}

pub fn command() -> Command {
    Command::new("cyclical")
        .about("Cyclical hyper-parameter schedules and small-scale training experiments")
        .subcommand_required(true)
        .arg_required_else_help(true)
        .allow_negative_numbers(true)
        .subcommand(
            Command::new("schedule")
                .about("Print the per-epoch trace of one cyclical schedule as CSV")
                .allow_negative_numbers(true)
                .arg(value_arg("epochs").required(true).help("number of epochs"))
                .arg(
                    value_arg("p_easy")
                        .visible_alias("p-easy")
                        .required(true)
                        .help("value at the easy end"),
                )
                .arg(
                    value_arg("p_hard")
                        .visible_alias("p-hard")
                        .required(true)
                        .help("value at the hard end"),
                )
                .arg(
                    value_arg("cyclical_factor")
                        .visible_alias("cyclical-factor")
                        .required(true)
                        .help("cycle shape, >= 1"),
                ),
        )
        .subcommand(
            Command::new("train")
                .about("Train every seed of a configuration and write per-epoch logs")
                .allow_negative_numbers(true)
                .args(experiment_args()),
        )
        .subcommand(
            Command::new("compare")
                .about("Paired-seed comparison of two configurations (JSON summary)")
                .allow_negative_numbers(true)
                .args(experiment_args())
                .arg(
                    value_arg("arm_a")
                        .visible_alias("arm-a")
                        .help("config file of arm A"),
                )
                .arg(
                    value_arg("arm_b")
                        .visible_alias("arm-b")
                        .help("config file of arm B"),
                )
                .arg(value_arg("summary").help("write the JSON summary here instead of stdout")),
        )
        .subcommand(
            Command::new("sweep")
                .about("Mean/std final accuracy over seeds for several cyclical factors (CSV)")
                .allow_negative_numbers(true)
                .args(experiment_args())
                .arg(
                    value_arg("fc_values")
                        .visible_alias("fc-values")
                        .default_value("1,2,4")
                        .help("comma-separated cyclical factors"),
                ),
        )
        .subcommand(
            Command::new("check")
                .about("Report LR*WD/(BS*(1-m)) and whether it is near 1e-6")
                .allow_negative_numbers(true)
                .arg(value_arg("lr").required(true))
                .arg(
                    value_arg("wd")
                        .visible_aliases(["weight_decay", "weight-decay"])
                        .required(true),
                )
                .arg(
                    value_arg("bs")
                        .visible_aliases(["batch_size", "batch-size"])
                        .short('b')
                        .required(true),
                )
                .arg(value_arg("momentum").default_value("0.9")),
        )
}

/// Failure carrying its exit code.
struct Failure {
    code: i32,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure {
            code: if e.is_config_error() {
                EXIT_USAGE
            } else {
                EXIT_RUNTIME
            },
            message: e.to_string(),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure {
            code: EXIT_RUNTIME,
            message: e.to_string(),
        }
    }
}

type CliResult = std::result::Result<(), Failure>;

fn usage(message: impl Into<String>) -> Failure {
    Failure {
        code: EXIT_USAGE,
        message: message.into(),
    }
}

fn string(m: &ArgMatches, name: &str) -> Option<String> {
    m.get_one::<String>(name).cloned()
}

fn parse_flag<T: std::str::FromStr>(m: &ArgMatches, name: &str) -> Result<T, Failure>
where
    T::Err: std::fmt::Display,
{
    let raw = string(m, name).ok_or_else(|| usage(format!("missing --{name}")))?;
    raw.trim().parse().map_err(|e| {
        usage(format!(
            "invalid value for `--{name}`: cannot parse `{raw}`: {e}"
        ))
    })
}

fn read_pairs(path: &Path) -> Result<KeyValues, Failure> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| usage(format!("cannot read config `{}`: {e}", path.display())))?;
    Ok(parse_key_values(&text)?)
}

/// Experiment keys given explicitly on the command line.
fn flag_pairs(m: &ArgMatches) -> KeyValues {
    EXPERIMENT_KEYS
        .iter()
        .filter(|(name, _, _)| m.value_source(name) == Some(ValueSource::CommandLine))
        .filter_map(|(name, _, _)| string(m, name).map(|v| (name.to_string(), v)))
        .collect()
}

fn config_from(m: &ArgMatches, file: Option<PathBuf>) -> Result<ExperimentConfig, Failure> {
    let mut pairs = match file {
        Some(path) => read_pairs(&path)?,
        None => KeyValues::new(),
    };
    pairs.extend(flag_pairs(m));
    Ok(ExperimentConfig::from_pairs(&pairs)?)
}

fn warn_on_ratio(config: &ExperimentConfig, err: &mut dyn Write) -> std::io::Result<()> {
    if let Ok(ratio) = config.ratio() {
        if !ratio_in_range(ratio) {
            writeln!(
                err,
                "warning: LR*WD/(BS*(1-m)) = {ratio:e} is outside [{RATIO_LOWER:e}, {RATIO_UPPER:e}]"
            )?;
        }
    }
    Ok(())
}

fn cmd_schedule(m: &ArgMatches, out: &mut dyn Write) -> CliResult {
    let epochs: usize = parse_flag(m, "epochs")?;
    let p_easy: f64 = parse_flag(m, "p_easy")?;
    let p_hard: f64 = parse_flag(m, "p_hard")?;
    let fc: f64 = parse_flag(m, "cyclical_factor")?;
    let schedule = CyclicalSchedule::new(p_easy, p_hard, fc, epochs)?;
    let mut text = String::from("epoch,value\n");
    for (e, v) in schedule.trace() {
        text.push_str(&format!("{e},{v}\n"));
    }
    out.write_all(text.as_bytes())?;
    Ok(())
}

fn seed_log_path(base: &Path, seed: u64) -> PathBuf {
    let stem = base.file_stem().and_then(|s| s.to_str()).unwrap_or("run");
    let name = match base.extension().and_then(|e| e.to_str()) {
        Some(ext) => format!("{stem}_seed{seed}.{ext}"),
        None => format!("{stem}_seed{seed}"),
    };
    base.with_file_name(name)
}

fn cmd_train(m: &ArgMatches, out: &mut dyn Write, err: &mut dyn Write) -> CliResult {
    let config = config_from(m, string(m, "config").map(PathBuf::from))?;
    if config.output.is_none() && config.seeds.len() > 1 {
        return Err(usage(
            "`--output` is required when training more than one seed",
        ));
    }
    warn_on_ratio(&config, err)?;

    let mut failed = 0;
    for &seed in &config.seeds {
        match run_experiment(&config, seed) {
            Ok(run) => match &config.output {
                Some(path) => {
                    let path = if config.seeds.len() > 1 {
                        seed_log_path(path, seed)
                    } else {
                        path.clone()
                    };
                    write_run_log_file(&run.records, &path)?;
                    writeln!(
                        out,
                        "seed={seed} final_test_acc={:.2} log={}",
                        run.final_accuracy,
                        path.display()
                    )?;
                }
                None => {
                    write_run_log(&run.records, &mut *out)?;
                    writeln!(err, "seed={seed} final_test_acc={:.2}", run.final_accuracy)?;
                }
            },
            Err(e) if e.is_config_error() => return Err(e.into()),
            Err(e) => {
                failed += 1;
                writeln!(err, "seed={seed} aborted: {e}")?;
            }
        }
    }
    if failed > 0 {
        return Err(Failure {
            code: EXIT_RUNTIME,
            message: format!("{failed} of {} runs aborted", config.seeds.len()),
        });
    }
    Ok(())
}

fn cmd_compare(m: &ArgMatches, out: &mut dyn Write, err: &mut dyn Write) -> CliResult {
    let shared = string(m, "config").map(PathBuf::from);
    let arm = |key: &str| -> Result<ExperimentConfig, Failure> {
        let mut pairs = match &shared {
            Some(p) => read_pairs(p)?,
            None => KeyValues::new(),
        };
        if let Some(p) = string(m, key) {
            pairs.extend(read_pairs(Path::new(&p))?);
        }
        pairs.extend(flag_pairs(m));
        Ok(ExperimentConfig::from_pairs(&pairs)?)
    };
    let a = arm("arm_a")?;
    let b = arm("arm_b")?;
    let summary = compare(&a, &b, &a.seeds)?;
    writeln!(
        err,
        "arm_a: {} ({} runs)",
        summary.arm_a.display(),
        summary.arm_a.completed
    )?;
    writeln!(
        err,
        "arm_b: {} ({} runs)",
        summary.arm_b.display(),
        summary.arm_b.completed
    )?;
    writeln!(
        err,
        "mean paired difference (b - a): {:+.3} points",
        summary.mean_paired_difference
    )?;
    let json = summary.to_json()?;
    match string(m, "summary") {
        Some(path) => std::fs::write(path, json + "\n")?,
        None => writeln!(out, "{json}")?,
    }
    Ok(())
}

fn cmd_sweep(m: &ArgMatches, out: &mut dyn Write, err: &mut dyn Write) -> CliResult {
    let config = config_from(m, string(m, "config").map(PathBuf::from))?;
    let raw = string(m, "fc_values").unwrap_or_default();
    let fc_values = raw
        .split(',')
        .map(|v| {
            v.trim()
                .parse::<f64>()
                .map_err(|e| usage(format!("invalid value for `--fc_values`: `{v}`: {e}")))
        })
        .collect::<Result<Vec<f64>, Failure>>()?;
    let rows = sweep_fc(&config, &fc_values, &config.seeds)?;
    let mut text = String::from("cyclical_factor,mean_acc,std_acc,completed\n");
    for row in &rows {
        let completed = row.per_seed.iter().flatten().count();
        text.push_str(&format!(
            "{},{},{},{completed}\n",
            row.cyclical_factor, row.mean, row.std
        ));
        for f in &row.failures {
            writeln!(
                err,
                "cyclical_factor={} seed={} aborted: {}",
                row.cyclical_factor, f.seed, f.message
            )?;
        }
    }
    out.write_all(text.as_bytes())?;
    Ok(())
}

fn cmd_check(m: &ArgMatches, out: &mut dyn Write) -> CliResult {
    let lr: f64 = parse_flag(m, "lr")?;
    let wd: f64 = parse_flag(m, "wd")?;
    let bs: usize = parse_flag(m, "bs")?;
    let momentum: f64 = parse_flag(m, "momentum")?;
    let ratio = hp_ratio(lr, wd, bs, momentum)?;
    writeln!(
        out,
        "ratio={ratio:e} in_range={} band=[{RATIO_LOWER:e},{RATIO_UPPER:e}]",
        ratio_in_range(ratio)
    )?;
    Ok(())
}

/// Parse `args` (including the program name) and execute. Returns the exit code.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let matches = match command().try_get_matches_from(args) {
        Ok(m) => m,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let rendered = e.render().to_string();
            let _ = if e.use_stderr() {
                err.write_all(rendered.as_bytes())
            } else {
                out.write_all(rendered.as_bytes())
            };
            return code;
        }
    };
    let result = match matches.subcommand() {
        Some(("schedule", m)) => cmd_schedule(m, out),
        Some(("train", m)) => cmd_train(m, out, err),
        Some(("compare", m)) => cmd_compare(m, out, err),
        Some(("sweep", m)) => cmd_sweep(m, out, err),
        Some(("check", m)) => cmd_check(m, out),
        _ => Err(usage("unknown subcommand")),
    };
    match result {
        Ok(()) => EXIT_OK,
        Err(f) => {
            let _ = writeln!(err, "error: {}", f.message);
            f.code
        }
    }
}
