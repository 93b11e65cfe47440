//! Batch front-end for passive linear-optics randomized benchmarking:
//! data generation, filter evaluation, decay fitting, analytic moments,
//! overlap tables, and Clebsch-Gordan cache management.
//!
//! Every command writes its artifacts plus a manifest.json with content
//! checksums into --out. Artifacts are deterministic for fixed inputs;
//! only the manifest timings vary between runs. Exit codes: 0 success,
//! 2 config error, 3 data error, 4 numerical or diagnostics error.

use clap::{Args, Parser, Subcommand};
use passive_rb::analysis::{
    first_moment, fit_exponential, rb_fidelity, second_moment, variance_trivial_bound,
};
use passive_rb::cg::{Coupling, TableStore};
use passive_rb::error::Error;
use passive_rb::filter::{
    build_filter_context, estimate_signal, frame_eigenvalue_pnr, read_signals_csv,
    write_signals_csv, FilterSpec, RBSignal,
};
use passive_rb::linopt::{read_records_jsonl, simulate, write_records_jsonl, SimConfig};
use passive_rb::repcore::{biguint_to_f64, dim_lambda, dim_sector};
use passive_rb::{FockVector, IrrepLabel};
use serde::Deserialize;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;
use std::fmt::Write as FmtWrite;
use std::fs;
use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::time::Instant;

#[derive(Parser)]
#[command(
    name = "passive-rb",
    version,
    about = "Randomized benchmarking of passive linear optics: simulate, filter, fit, report"
)]
struct Cli {
    /// Cap the worker-thread count; results are identical at any value.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate benchmarking records under Haar-random sequences.
    Simulate(SimulateArgs),
    /// Evaluate irrep or indicator filters over a record stream.
    Filter(FilterArgs),
    /// Fit A·r^l decays to signals and aggregate a fidelity estimate.
    Fit(FitArgs),
    /// Analytic filter moments and variance bounds per irrep.
    Moments(MomentsArgs),
    /// Per-irrep dimensions, frame eigenvalues, and input overlaps.
    Overlaps(OverlapsArgs),
    /// Build and verify the Clebsch-Gordan tables a sector needs.
    Tables(TablesArgs),
}

#[derive(Args)]
struct SimulateArgs {
    /// Simulation config JSON.
    #[arg(long)]
    config: PathBuf,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Override the seed in the config.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct FilterArgs {
    /// Records JSONL produced by simulate.
    records: PathBuf,
    /// Config JSON naming n, m, and the input state.
    #[arg(long)]
    config: PathBuf,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Irrep label k; repeatable. Default: every k = 0..=n.
    #[arg(long = "irrep")]
    irreps: Vec<u32>,
    /// Emit the survival-indicator signal; without --irrep it is the
    /// only signal.
    #[arg(long)]
    indicator: bool,
    /// Divide irrep signals by all shots instead of surviving shots.
    #[arg(long = "no-postselect")]
    no_postselect: bool,
}

#[derive(Args)]
struct FitArgs {
    /// Signals CSV produced by filter.
    signals: PathBuf,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Config JSON; enables the per-irrep fidelity aggregate.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct MomentsArgs {
    /// Config JSON naming n, m, and the input state.
    #[arg(long)]
    config: PathBuf,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Irrep label k; repeatable. Default: every k = 0..=n.
    #[arg(long = "irrep")]
    irreps: Vec<u32>,
}

#[derive(Args)]
struct OverlapsArgs {
    /// Config JSON naming n, m, and the input state.
    #[arg(long)]
    config: PathBuf,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TablesArgs {
    /// Config JSON naming n and m.
    #[arg(long)]
    config: PathBuf,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

/// Minimal problem description shared by the analysis commands; any
/// simulation config parses as one, extra fields are ignored.
#[derive(Deserialize)]
struct ProblemSpec {
    n: u32,
    m: u32,
    #[serde(default)]
    input: Option<Vec<u32>>,
}

impl ProblemSpec {
    fn input_state(&self) -> Result<FockVector, Error> {
        let input = match &self.input {
            Some(counts) => FockVector::new(counts.clone())
                .map_err(|e| Error::Config(e.to_string()))?,
            None => FockVector::collision_free(self.n, self.m)
                .map_err(|e| Error::Config(e.to_string()))?,
        };
        if input.m() != self.m as usize || input.total() != self.n {
            return Err(Error::Config(format!(
                "input {input} does not match n={}, m={}",
                self.n, self.m
            )));
        }
        Ok(input)
    }
}

fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) | Error::Argument(_) | Error::Domain(_) | Error::Shape(_)
        | Error::Size(_) => 2,
        Error::Data(_) | Error::Io(_) | Error::Json(_) | Error::Dependency(_) => 3,
        Error::Diagnostics(_) | Error::Fit(_) | Error::Coupling(_) => 4,
    }
}

fn sha256_hex(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    let digest = hasher.finalize();
    let mut hex = String::with_capacity(64);
    for b in digest {
        write!(hex, "{b:02x}").expect("writing to string cannot fail");
    }
    hex
}

/// Collects checksums and timings for the manifest while the command
/// runs, then writes manifest.json last.
struct Manifest {
    command: &'static str,
    config: Value,
    seed: Option<u64>,
    inputs: Vec<Value>,
    artifacts: Vec<Value>,
    timings_ms: BTreeMap<&'static str, u128>,
    warnings: Vec<String>,
}

impl Manifest {
    fn new(command: &'static str, config: Value) -> Self {
        Manifest {
            command,
            config,
            seed: None,
            inputs: Vec::new(),
            artifacts: Vec::new(),
            timings_ms: BTreeMap::new(),
            warnings: Vec::new(),
        }
    }

    fn record_input(&mut self, path: &Path, bytes: &[u8]) {
        self.inputs.push(json!({
            "path": path.display().to_string(),
            "sha256": sha256_hex(bytes),
        }));
    }

    fn write_artifact(&mut self, dir: &Path, name: &str, bytes: &[u8]) -> Result<(), Error> {
        fs::write(dir.join(name), bytes)?;
        self.artifacts.push(json!({
            "path": name,
            "sha256": sha256_hex(bytes),
        }));
        Ok(())
    }

    fn finish(self, dir: &Path) -> Result<(), Error> {
        let doc = json!({
            "tool": "passive-rb",
            "version": env!("CARGO_PKG_VERSION"),
            "command": self.command,
            "config": self.config,
            "seed": self.seed,
            "inputs": self.inputs,
            "artifacts": self.artifacts,
            "timings_ms": self.timings_ms.into_iter()
                .map(|(k, v)| (k.to_string(), Value::from(v as u64)))
                .collect::<serde_json::Map<String, Value>>(),
            "warnings": self.warnings,
        });
        let mut bytes = serde_json::to_vec_pretty(&doc)?;
        bytes.push(b'\n');
        fs::write(dir.join("manifest.json"), bytes)?;
        Ok(())
    }
}

fn read_config_value(path: &Path) -> Result<(Vec<u8>, Value), Error> {
    let bytes = fs::read(path)?;
    let value: Value = serde_json::from_slice(&bytes)
        .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    Ok((bytes, value))
}

fn parse_config<T: serde::de::DeserializeOwned>(path: &Path, bytes: &[u8]) -> Result<T, Error> {
    serde_json::from_slice(bytes).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

/// Requested irrep labels in ascending order; defaults to all of 0..=n.
fn chosen_irreps(requested: &[u32], n: u32, default_all: bool) -> Result<Vec<u32>, Error> {
    let mut ks: Vec<u32> = if requested.is_empty() {
        if default_all {
            (0..=n).collect()
        } else {
            Vec::new()
        }
    } else {
        requested.to_vec()
    };
    ks.sort_unstable();
    ks.dedup();
    if let Some(&k) = ks.iter().find(|&&k| k > n) {
        return Err(Error::Argument(format!("irrep label k={k} exceeds n={n}")));
    }
    Ok(ks)
}

fn cmd_simulate(args: SimulateArgs) -> Result<(), Error> {
    fs::create_dir_all(&args.out)?;
    let (config_bytes, _) = read_config_value(&args.config)?;
    let mut config: SimConfig = parse_config(&args.config, &config_bytes)?;
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    let mut manifest = Manifest::new("simulate", serde_json::to_value(&config)?);
    manifest.record_input(&args.config, &config_bytes);
    manifest.seed = Some(config.seed);

    let t0 = Instant::now();
    let records = simulate(&config)?;
    manifest.timings_ms.insert("simulate", t0.elapsed().as_millis());

    let t1 = Instant::now();
    let mut bytes = Vec::new();
    write_records_jsonl(&records, &mut bytes)?;
    manifest.write_artifact(&args.out, "records.jsonl", &bytes)?;
    manifest.timings_ms.insert("write", t1.elapsed().as_millis());
    manifest.timings_ms.insert("total", t0.elapsed().as_millis());
    manifest.finish(&args.out)
}

fn cmd_filter(args: FilterArgs) -> Result<(), Error> {
    fs::create_dir_all(&args.out)?;
    let (config_bytes, config_value) = read_config_value(&args.config)?;
    let spec: ProblemSpec = parse_config(&args.config, &config_bytes)?;
    let input = spec.input_state()?;
    let record_bytes = fs::read(&args.records)?;
    let records = read_records_jsonl(&mut record_bytes.as_slice())?;

    let mut manifest = Manifest::new("filter", config_value);
    manifest.record_input(&args.config, &config_bytes);
    manifest.record_input(&args.records, &record_bytes);

    let ks = chosen_irreps(&args.irreps, spec.n, !args.indicator)?;
    let t0 = Instant::now();
    let mut signals: Vec<RBSignal> = Vec::new();
    if !ks.is_empty() {
        let mut store = TableStore::from_env();
        let ctx = build_filter_context(spec.n, spec.m, input, &mut store)?;
        for &k in &ks {
            let signal = estimate_signal(
                &records,
                FilterSpec::Irrep { k },
                Some(&ctx),
                !args.no_postselect,
            )?;
            manifest.warnings.extend(signal.warnings.clone());
            signals.push(signal);
        }
    }
    if args.indicator {
        let signal = estimate_signal(&records, FilterSpec::Indicator { n: spec.n }, None, false)?;
        manifest.warnings.extend(signal.warnings.clone());
        signals.push(signal);
    }
    manifest.timings_ms.insert("filter", t0.elapsed().as_millis());

    let mut bytes = Vec::new();
    write_signals_csv(&signals, &mut bytes)?;
    manifest.write_artifact(&args.out, "signals.csv", &bytes)?;
    manifest.timings_ms.insert("total", t0.elapsed().as_millis());
    manifest.finish(&args.out)
}

fn cmd_fit(args: FitArgs) -> Result<(), Error> {
    fs::create_dir_all(&args.out)?;
    let signal_bytes = fs::read(&args.signals)?;
    let signals = read_signals_csv(&mut BufReader::new(signal_bytes.as_slice()))?;
    if signals.is_empty() {
        return Err(Error::Data("signal file holds no points".into()));
    }

    let mut manifest = Manifest::new("fit", Value::Null);
    manifest.record_input(&args.signals, &signal_bytes);
    let spec: Option<ProblemSpec> = match &args.config {
        Some(path) => {
            let (bytes, value) = read_config_value(path)?;
            manifest.record_input(path, &bytes);
            manifest.config = value;
            Some(parse_config(path, &bytes)?)
        }
        None => None,
    };

    let t0 = Instant::now();
    let mut fits = Vec::new();
    let mut rates: BTreeMap<u32, f64> = BTreeMap::new();
    let mut first_err: Option<Error> = None;
    let mut any_ok = false;
    for signal in &signals {
        match fit_exponential(signal) {
            Ok(fit) => {
                any_ok = true;
                if let Some(k) = signal
                    .filter_id
                    .strip_prefix("irrep-")
                    .and_then(|s| s.parse::<u32>().ok())
                {
                    rates.insert(k, fit.rate);
                }
                let mut row = serde_json::to_value(&fit)?;
                row.as_object_mut()
                    .expect("FitResult serializes to an object")
                    .insert("filter_id".into(), Value::from(signal.filter_id.clone()));
                fits.push(row);
            }
            Err(e) => {
                manifest
                    .warnings
                    .push(format!("{}: {e}", signal.filter_id));
                fits.push(json!({
                    "filter_id": signal.filter_id,
                    "error": e.to_string(),
                }));
                if first_err.is_none() {
                    first_err = Some(e);
                }
            }
        }
    }
    let fidelity = match &spec {
        Some(spec) if !rates.is_empty() => {
            let usable: BTreeMap<u32, f64> = rates
                .iter()
                .filter(|(&k, _)| k <= spec.n)
                .map(|(&k, &r)| (k, r))
                .collect();
            if usable.is_empty() {
                Value::Null
            } else {
                let estimate = rb_fidelity(&usable, spec.n, spec.m)?;
                json!({
                    "fidelity": estimate.fidelity,
                    "covered_weight": estimate.covered_weight,
                    "rates_used": usable.into_iter()
                        .map(|(k, r)| (k.to_string(), Value::from(r)))
                        .collect::<serde_json::Map<String, Value>>(),
                })
            }
        }
        _ => Value::Null,
    };
    manifest.timings_ms.insert("fit", t0.elapsed().as_millis());

    let doc = json!({ "fits": fits, "fidelity": fidelity });
    let mut bytes = serde_json::to_vec_pretty(&doc)?;
    bytes.push(b'\n');
    manifest.write_artifact(&args.out, "fits.json", &bytes)?;
    manifest.timings_ms.insert("total", t0.elapsed().as_millis());
    manifest.finish(&args.out)?;
    if !any_ok {
        return Err(first_err.expect("no fit succeeded, so one failed"));
    }
    Ok(())
}

fn cmd_moments(args: MomentsArgs) -> Result<(), Error> {
    fs::create_dir_all(&args.out)?;
    let (config_bytes, config_value) = read_config_value(&args.config)?;
    let spec: ProblemSpec = parse_config(&args.config, &config_bytes)?;
    let input = spec.input_state()?;
    let ks = chosen_irreps(&args.irreps, spec.n, true)?;

    let mut manifest = Manifest::new("moments", config_value);
    manifest.record_input(&args.config, &config_bytes);

    let t0 = Instant::now();
    let mut store = TableStore::from_env();
    let mut rows = Vec::new();
    for &k in &ks {
        let label = IrrepLabel::new(k, spec.m)?;
        let s = frame_eigenvalue_pnr(&label);
        let fm = first_moment(k, spec.n, spec.m, &input, &mut store)?;
        let sm = second_moment(k, spec.n, spec.m, &input, &mut store)?;
        rows.push(json!({
            "k": k,
            "dimension": biguint_to_f64(&dim_lambda(&label)),
            "frame_eigenvalue": s.as_f64(),
            "frame_eigenvalue_exact": s.value.to_string(),
            "first_moment": fm,
            "second_moment": sm,
            "variance": sm - fm * fm,
            "variance_trivial_bound": variance_trivial_bound(&label),
        }));
    }
    manifest.timings_ms.insert("moments", t0.elapsed().as_millis());

    let doc = json!({
        "n": spec.n,
        "m": spec.m,
        "input": input.counts(),
        "irreps": rows,
    });
    let mut bytes = serde_json::to_vec_pretty(&doc)?;
    bytes.push(b'\n');
    manifest.write_artifact(&args.out, "moments.json", &bytes)?;
    manifest.timings_ms.insert("total", t0.elapsed().as_millis());
    manifest.finish(&args.out)
}

fn cmd_overlaps(args: OverlapsArgs) -> Result<(), Error> {
    fs::create_dir_all(&args.out)?;
    let (config_bytes, config_value) = read_config_value(&args.config)?;
    let spec: ProblemSpec = parse_config(&args.config, &config_bytes)?;
    let input = spec.input_state()?;

    let mut manifest = Manifest::new("overlaps", config_value);
    manifest.record_input(&args.config, &config_bytes);

    let t0 = Instant::now();
    let mut store = TableStore::from_env();
    let ctx = build_filter_context(spec.n, spec.m, input, &mut store)?;
    let mut csv = String::from("k,dimension,frame_eigenvalue,input_overlap\n");
    for k in 0..=spec.n {
        let data = ctx.irrep(k)?;
        writeln!(
            csv,
            "{},{},{:.16e},{:.16e}",
            k,
            biguint_to_f64(&dim_lambda(&data.label)),
            data.eigenvalue.as_f64(),
            data.input_overlap
        )
        .expect("writing to string cannot fail");
    }
    manifest.timings_ms.insert("overlaps", t0.elapsed().as_millis());
    manifest.write_artifact(&args.out, "overlaps.csv", csv.as_bytes())?;
    manifest.timings_ms.insert("total", t0.elapsed().as_millis());
    manifest.finish(&args.out)
}

fn cmd_tables(args: TablesArgs) -> Result<(), Error> {
    fs::create_dir_all(&args.out)?;
    let (config_bytes, config_value) = read_config_value(&args.config)?;
    let spec: ProblemSpec = parse_config(&args.config, &config_bytes)?;

    let mut manifest = Manifest::new("tables", config_value);
    manifest.record_input(&args.config, &config_bytes);

    let t0 = Instant::now();
    let mut store = TableStore::from_env();
    let mut couplings: Vec<Coupling> = Vec::new();
    let push = |c: Coupling, list: &mut Vec<Coupling>| {
        if !list.iter().any(|x| x.key() == c.key()) {
            list.push(c);
        }
    };
    for k in 0..=spec.n {
        push(Coupling::symmetric_conjugate(spec.n, spec.m, k)?, &mut couplings);
        for l in 0..=spec.n.min(2 * k) {
            push(Coupling::square(k, l, spec.m)?, &mut couplings);
        }
    }
    let mut rows = Vec::new();
    let mut failed = None;
    for coupling in &couplings {
        let table = store.get(coupling)?;
        let report = table.verify();
        let pass = report.pass(1e-10);
        if !pass && failed.is_none() {
            failed = Some(coupling.key());
        }
        rows.push(json!({
            "coupling": coupling.key(),
            "multiplicity": table.multiplicity(),
            "orthogonality_checked": report.checked,
            "orthogonality_max_deviation": report.max_deviation,
            "pass": pass,
        }));
    }
    manifest.timings_ms.insert("tables", t0.elapsed().as_millis());

    let doc = json!({
        "n": spec.n,
        "m": spec.m,
        "sector_dimension": biguint_to_f64(&dim_sector(spec.n, spec.m)),
        "tables": rows,
    });
    let mut bytes = serde_json::to_vec_pretty(&doc)?;
    bytes.push(b'\n');
    manifest.write_artifact(&args.out, "tables.json", &bytes)?;
    manifest.timings_ms.insert("total", t0.elapsed().as_millis());
    manifest.finish(&args.out)?;
    match failed {
        Some(key) => Err(Error::Diagnostics(format!(
            "orthogonality verification failed for {key}"
        ))),
        None => Ok(()),
    }
}

fn run(command: Command) -> Result<(), Error> {
    match command {
        Command::Simulate(args) => cmd_simulate(args),
        Command::Filter(args) => cmd_filter(args),
        Command::Fit(args) => cmd_fit(args),
        Command::Moments(args) => cmd_moments(args),
        Command::Overlaps(args) => cmd_overlaps(args),
        Command::Tables(args) => cmd_tables(args),
    }
}

fn main() {
    let cli = Cli::parse();
    if let Some(threads) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
        {
            eprintln!("error: could not size the thread pool: {e}");
            std::process::exit(2);
        }
    }
    match run(cli.command) {
        Ok(()) => {}
        Err(e) => {
            eprintln!("error: {e}");
            std::process::exit(exit_code(&e));
        }
    }
}
