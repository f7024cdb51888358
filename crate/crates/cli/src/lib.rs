//! Batch driver: reads a JSON run configuration, runs it and writes
//! `results.csv`, `results.json` and `meta.json` into an output directory.

use std::fs;
use std::path::{Path, PathBuf};

use clap::Parser;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use tnpq::config::{Command, RunConfig};
use tnpq::divisibility;
use tnpq::ensemble::Ensemble;
use tnpq::exact;
use tnpq::experiments::{run_heisenberg, run_photon_counting, run_tilted_trace};
use tnpq::linops::{self, CMatrix};
use tnpq::unravel;
use tnpq::Error;

pub const EXIT_OK: i32 = 0;
pub const EXIT_IO: i32 = 1;
pub const EXIT_INVALID: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;

/// Records taken by `simulate` and `exact` when `record_every` is not set.
const DEFAULT_RECORDS: usize = 20;

#[derive(Debug, Parser)]
#[command(name = "tnpq", version, about = "Stochastic unravelings of trace-nonpreserving master equations")]
pub struct Args {
    /// JSON run configuration.
    #[arg(long)]
    pub config: PathBuf,
    /// Output directory, created if missing.
    #[arg(long)]
    pub out: PathBuf,
    /// Overrides the configured seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads; results do not depend on this.
    #[arg(long)]
    pub threads: Option<usize>,
}

/// A result table; `None` cells are written empty (CSV) or `null` (JSON).
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Table {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<Option<f64>>>,
}

impl Table {
    fn new(columns: Vec<String>) -> Self {
        Self {
            columns,
            rows: Vec::new(),
        }
    }

    fn push(&mut self, row: Vec<f64>) {
        self.rows.push(row.into_iter().map(Some).collect());
    }

    pub fn column(&self, name: &str) -> Option<Vec<Option<f64>>> {
        let k = self.columns.iter().position(|c| c == name)?;
        Some(self.rows.iter().map(|r| r[k]).collect())
    }
}

/// Provenance written into every artifact.
#[derive(Clone, Debug)]
pub struct Provenance {
    pub command: Command,
    pub seed: u64,
    pub config_sha256: String,
}

impl Provenance {
    fn header(&self) -> String {
        format!(
            "# tnpq {}\n# command: {}\n# config_sha256: {}\n# seed: {}\n",
            env!("CARGO_PKG_VERSION"),
            self.command.name(),
            self.config_sha256,
            self.seed
        )
    }

    fn json(&self) -> Value {
        json!({
            "tool": "tnpq",
            "version": env!("CARGO_PKG_VERSION"),
            "command": self.command.name(),
            "seed": self.seed,
            "config_sha256": self.config_sha256,
        })
    }
}

/// Output of one run: named tables plus command-specific metadata.
#[derive(Clone, Debug, Default)]
pub struct Output {
    /// `(file stem, table)`; the first one is `results`.
    pub tables: Vec<(String, Table)>,
    pub meta: serde_json::Map<String, Value>,
}

pub fn sha256_hex(text: &str) -> String {
    hex::encode(Sha256::digest(text.as_bytes()))
}

/// Shortest round-trip formatting, in exponent form outside `[1e-4, 1e15)`.
pub fn format_number(x: f64) -> String {
    let a = x.abs();
    if x == 0.0 || (1e-4..1e15).contains(&a) || !x.is_finite() {
        format!("{x}")
    } else {
        format!("{x:e}")
    }
}

pub fn to_csv(table: &Table, prov: &Provenance) -> String {
    let mut s = prov.header();
    s.push_str(&table.columns.join(","));
    s.push('\n');
    for row in &table.rows {
        let cells: Vec<String> = row.iter().map(|v| v.map(format_number).unwrap_or_default()).collect();
        s.push_str(&cells.join(","));
        s.push('\n');
    }
    s
}

pub fn to_json(table: &Table, prov: &Provenance) -> Value {
    let rows: Vec<Value> = table
        .rows
        .iter()
        .map(|r| Value::Array(r.iter().map(|v| v.filter(|x| x.is_finite()).map_or(Value::Null, Value::from)).collect()))
        .collect();
    let mut v = prov.json();
    v["columns"] = json!(table.columns);
    v["rows"] = Value::Array(rows);
    v
}

/// Applies the command-line overrides to a parsed configuration.
pub fn apply_overrides(cfg: &mut RunConfig, seed: Option<u64>, threads: Option<usize>) {
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if let Some(n) = threads {
        cfg.engine.get_or_insert_with(Default::default).threads = Some(n);
        cfg.photon_counting.get_or_insert_with(Default::default).engine.threads = Some(n);
        cfg.heisenberg.get_or_insert_with(Default::default).engine.threads = Some(n);
    }
}

fn record_every(cfg: &RunConfig, steps: usize) -> usize {
    cfg.record_every.unwrap_or_else(|| (steps / DEFAULT_RECORDS).max(1))
}

fn observable_columns(labels: &[(String, CMatrix)], suffixes: &[&str]) -> Vec<String> {
    labels
        .iter()
        .flat_map(|(l, _)| suffixes.iter().map(move |s| format!("{l}{s}")))
        .collect()
}

fn simulate(cfg: &RunConfig) -> tnpq::Result<Output> {
    let (model, rho0) = cfg.model_and_initial()?;
    let grid = cfg.grid()?;
    let observables = cfg.observables(model.dim())?;
    let engine = cfg.engine();
    let n = cfg.n_trajectories.unwrap_or(tnpq::config::DEFAULT_N_TRAJECTORIES);
    let every = record_every(cfg, grid.steps());

    let ensemble = Ensemble::sample_initial_batched(&linops::pure_decomposition(&rho0)?, n, cfg.seed, engine.n_batches)?;
    let (_, rec) = unravel::run(&model, ensemble, &grid, &engine.run_options(every))?;
    let exact = exact::integrate(&model, &rho0, &grid)?;

    let mut columns: Vec<String> = ["t", "trace_est", "trace_se", "trace_exact"].map(String::from).to_vec();
    columns.extend(observable_columns(&observables, &["_est", "_se", "_exact"]));
    columns.extend(["members", "distinct_states"].map(String::from));
    let mut table = Table::new(columns);
    for (i, p) in rec.points.iter().enumerate() {
        let x = &exact.values[p.step];
        let mut row = vec![p.t, rec.trace(i), rec.trace_se(i), linops::trace(x).re];
        for (_, a) in &observables {
            let (est, se) = rec.expectation(i, a).expect("states are recorded");
            row.extend([est, se, linops::trace(&(a * x)).re]);
        }
        row.push(p.members as f64);
        row.push(p.distinct.unwrap_or(0) as f64);
        table.push(row);
    }
    let mut meta = serde_json::Map::new();
    meta.insert("n_trajectories".into(), json!(n));
    meta.insert("record_every".into(), json!(every));
    meta.insert("unmatched_reverse_weight".into(), json!(rec.unmatched_reverse));
    Ok(Output {
        tables: vec![("results".into(), table)],
        meta,
    })
}

fn exact_run(cfg: &RunConfig) -> tnpq::Result<Output> {
    let (model, rho0) = cfg.model_and_initial()?;
    let grid = cfg.grid()?;
    let observables = cfg.observables(model.dim())?;
    let every = record_every(cfg, grid.steps());
    let traj = exact::integrate(&model, &rho0, &grid)?;

    let mut columns = vec!["t".to_string(), "trace".to_string()];
    columns.extend(observables.iter().map(|(l, _)| l.clone()));
    let mut table = Table::new(columns);
    for k in (0..=grid.steps()).filter(|k| k % every == 0 || *k == grid.steps()) {
        let x = &traj.values[k];
        let mut row = vec![grid.time(k), linops::trace(x).re];
        row.extend(observables.iter().map(|(_, a)| linops::trace(&(a * x)).re));
        table.push(row);
    }
    let mut meta = serde_json::Map::new();
    meta.insert("record_every".into(), json!(every));
    Ok(Output {
        tables: vec![("results".into(), table)],
        meta,
    })
}

fn moments(cfg: &RunConfig) -> tnpq::Result<Output> {
    let pc = cfg.photon_counting();
    let series = run_photon_counting(&pc)?;
    let k_max = series.moments.len();
    let mut columns = vec!["t".to_string(), "mu_0".to_string()];
    for prefix in ["mu_", "se_", "exact_"] {
        columns.extend((1..=k_max).map(|k| format!("{prefix}{k}")));
    }
    let mut table = Table::new(columns);
    for (i, &t) in series.times.iter().enumerate() {
        let mut row = vec![t, series.mu0[i]];
        for block in [&series.moments, &series.se, &series.exact] {
            row.extend(block.iter().map(|v| v[i]));
        }
        table.push(row);
    }
    let mut tables = vec![("results".to_string(), table)];
    if !pc.zeta_list.is_empty() {
        let mut tilted = Table::new(
            ["t", "zeta", "trace_est", "trace_se", "trace_exact"]
                .map(String::from)
                .to_vec(),
        );
        for r in run_tilted_trace(&pc)? {
            tilted.push(vec![r.t, r.zeta, r.trace_est, r.trace_se, r.trace_exact]);
        }
        tables.push(("tilted".into(), tilted));
    }
    let mut meta = serde_json::Map::new();
    meta.insert("photon_counting".into(), serde_json::to_value(&pc)?);
    Ok(Output { tables, meta })
}

fn heisenberg(cfg: &RunConfig) -> tnpq::Result<Output> {
    let h = cfg.heisenberg();
    let series = run_heisenberg(&h)?;
    let mut columns = vec!["t".to_string()];
    for o in &series.observables {
        for s in ["_est", "_se", "_exact", "_trace_est", "_trace_se", "_trace_exact", "_distinct_states"] {
            columns.push(format!("{}{s}", o.label));
        }
    }
    let mut table = Table::new(columns);
    for (i, &t) in series.times.iter().enumerate() {
        let mut row = vec![t];
        for o in &series.observables {
            row.extend([
                o.est[i],
                o.se[i],
                o.exact[i],
                o.trace_est[i],
                o.trace_se[i],
                o.trace_exact[i],
                o.distinct[i] as f64,
            ]);
        }
        table.push(row);
    }
    let mut meta = serde_json::Map::new();
    meta.insert("heisenberg".into(), serde_json::to_value(&h)?);
    Ok(Output {
        tables: vec![("results".into(), table)],
        meta,
    })
}

fn divisibility_run(cfg: &RunConfig) -> tnpq::Result<Output> {
    let model = cfg.model.as_ref().expect("validated").build()?;
    let grid = cfg.grid()?;
    let picture = cfg.divisibility.clone().unwrap_or_default().picture();
    let report = divisibility::divisibility_report(&model, &grid, picture)?;
    let mut table = Table::new(
        ["t", "min_choi_eig", "second_min", "third_min", "max_bloch_norm"]
            .map(String::from)
            .to_vec(),
    );
    for d in &report {
        let mut row: Vec<Option<f64>> = vec![Some(d.t)];
        row.extend((0..3).map(|k| d.choi.get(k).copied()));
        row.push(d.max_bloch_norm);
        table.rows.push(row);
    }
    let mut meta = serde_json::Map::new();
    meta.insert("picture".into(), json!(format!("{picture:?}")));
    meta.insert(
        "choi_normalization".into(),
        json!("J = (1/d) sum_ij Lambda[|i><j|] (x) |i><j|; the unnormalized convention has trace d"),
    );
    meta.insert("negativity_tolerance".into(), json!(divisibility::NEGATIVITY_TOL));
    Ok(Output {
        tables: vec![("results".into(), table)],
        meta,
    })
}

/// Runs a validated configuration.
pub fn execute(cfg: &RunConfig) -> tnpq::Result<Output> {
    match cfg.command {
        Command::Simulate => simulate(cfg),
        Command::Exact => exact_run(cfg),
        Command::Moments => moments(cfg),
        Command::Heisenberg => heisenberg(cfg),
        Command::Divisibility => divisibility_run(cfg),
    }
}

pub fn write_artifacts(dir: &Path, out: &Output, prov: &Provenance) -> std::io::Result<()> {
    fs::create_dir_all(dir)?;
    let mut files = Vec::new();
    for (stem, table) in &out.tables {
        fs::write(dir.join(format!("{stem}.csv")), to_csv(table, prov))?;
        let text = serde_json::to_string_pretty(&to_json(table, prov))?;
        fs::write(dir.join(format!("{stem}.json")), text + "\n")?;
        files.push(format!("{stem}.csv"));
        files.push(format!("{stem}.json"));
    }
    let mut meta = prov.json();
    meta["files"] = json!(files);
    for (k, v) in &out.meta {
        meta[k] = v.clone();
    }
    fs::write(dir.join("meta.json"), serde_json::to_string_pretty(&meta)? + "\n")
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Io(_) => EXIT_IO,
        e if e.is_numerical() => EXIT_NUMERICAL,
        _ => EXIT_INVALID,
    }
}

/// Parses, runs and writes one configuration; returns the process exit code.
pub fn run(args: &Args) -> i32 {
    let text = match fs::read_to_string(&args.config) {
        Ok(t) => t,
        Err(e) => {
            eprintln!("error: cannot read {}: {e}", args.config.display());
            return EXIT_INVALID;
        }
    };
    let mut cfg = match RunConfig::from_json(&text) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {}: {e}", args.config.display());
            return exit_code(&e);
        }
    };
    apply_overrides(&mut cfg, args.seed, args.threads);
    if let Err(e) = cfg.validate() {
        eprintln!("error: {e}");
        return exit_code(&e);
    }
    let prov = Provenance {
        command: cfg.command,
        seed: cfg.seed,
        config_sha256: sha256_hex(&text),
    };
    let out = match execute(&cfg) {
        Ok(o) => o,
        Err(e) => {
            eprintln!("error: {} (command {}, seed {}): {e}", args.config.display(), cfg.command.name(), cfg.seed);
            return exit_code(&e);
        }
    };
    if let Err(e) = write_artifacts(&args.out, &out, &prov) {
        eprintln!("error: writing {}: {e}", args.out.display());
        return EXIT_IO;
    }
    EXIT_OK
}
