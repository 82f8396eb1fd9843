use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use spa_core::aggregate::{AggregationConfig, Diagnostics, Mode, SpaEstimate};
use spa_core::frontends::{
    fit_coordinatewise, fit_fused, fit_group, make_first_difference, LinearMapD,
};
use spa_core::io::{format_vector, parse_matrix_csv, parse_vector_csv};
use spa_core::linalg::DesignMatrix;
use spa_core::pattern::{GroupStructure, SparsityPattern};
use spa_core::sim::run_replications;
use spa_core::{Error, EXACT_LIMIT};

use crate::scenario::ScenarioFields;
use crate::{FitArgs, Method, ReportArgs, ReportFormat, SimulateArgs, SparsityMode};

#[derive(Debug)]
pub enum CliError {
    /// Bad flags or unusable input files.
    Usage(String),
    /// Anything else.
    Internal(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Internal(_) => 1,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Internal(m) => f.write_str(m),
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match e {
            Error::ExactGuard { dim, limit } => CliError::Usage(format!(
                "{e}; rerun `spa fit --method mh` (dimension {dim} > {limit})"
            )),
            Error::Io(_) => CliError::Internal(e.to_string()),
            Error::Dimension(_) | Error::Input(_) | Error::DegeneratePrior => {
                CliError::Usage(e.to_string())
            }
        }
    }
}

struct Input {
    path: PathBuf,
    text: String,
}

impl Input {
    fn read(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
        Ok(Input {
            path: path.to_path_buf(),
            text,
        })
    }

    fn manifest_entry(&self) -> Value {
        json!({
            "path": self.path.display().to_string(),
            "sha256": format!("{:x}", Sha256::digest(self.text.as_bytes())),
        })
    }

    fn context<T>(&self, r: spa_core::Result<T>) -> Result<T, CliError> {
        r.map_err(|e| CliError::Usage(format!("{}: {e}", self.path.display())))
    }
}

fn write(dir: &Path, name: &str, contents: impl AsRef<[u8]>) -> Result<(), CliError> {
    let path = dir.join(name);
    fs::write(&path, contents).map_err(|e| CliError::Internal(format!("{}: {e}", path.display())))
}

fn create_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::Internal(format!("{}: {e}", dir.display())))
}

fn to_json<T: Serialize + ?Sized>(v: &T) -> Result<String, CliError> {
    serde_json::to_string_pretty(v)
        .map(|s| s + "\n")
        .map_err(|e| CliError::Internal(e.to_string()))
}

fn manifest(subcommand: &str, args: &impl Serialize, inputs: &[&Input], extra: Value) -> Value {
    json!({
        "tool": "spa",
        "version": env!("CARGO_PKG_VERSION"),
        "subcommand": subcommand,
        "arguments": args,
        "inputs": inputs.iter().map(|i| i.manifest_entry()).collect::<Vec<_>>(),
        "run": extra,
    })
}

fn diagnostics_json(est: &SpaEstimate) -> Value {
    let base = json!({ "mode": est.mode, "beta": est.beta });
    let mut v = match &est.diagnostics {
        Diagnostics::Exact(s) => json!({
            "patterns": s.patterns,
            "log_normalizer": s.log_normalizer,
        }),
        Diagnostics::Mh(d) => json!({
            "iterations": d.iterations,
            "accepted": d.accepted,
            "acceptance_rate": d.acceptance_rate,
            "unique_patterns_visited": d.unique_patterns_visited,
            "final_pattern": d.final_pattern.to_bitstring(),
            "final_pattern_size": d.final_pattern.count(),
            "cache_hits": d.cache_hits,
            "cache_misses": d.cache_misses,
        }),
    };
    if let (Value::Object(a), Value::Object(b)) = (&mut v, base) {
        a.extend(b);
    }
    v
}

/// `fit` and `exact`.
pub fn fit(args: &FitArgs, exact: bool) -> Result<(), CliError> {
    if !(args.sigma > 0.0 && args.sigma.is_finite()) {
        return Err(CliError::Usage(format!(
            "--sigma must be positive, got {}",
            args.sigma
        )));
    }
    if args.mode == SparsityMode::Group && args.groups.is_none() {
        return Err(CliError::Usage("--mode group requires --groups".into()));
    }
    if args.mode != SparsityMode::Fused && args.d_matrix.is_some() {
        return Err(CliError::Usage(
            "--d-matrix only applies to --mode fused".into(),
        ));
    }
    let method = if exact { Method::Exact } else { args.method };
    if method == Method::Exact && (args.warm_start.is_some() || args.trace) {
        return Err(CliError::Usage(
            "--warm-start and --trace apply to MH runs only".into(),
        ));
    }

    let design_in = Input::read(&args.design)?;
    let response_in = Input::read(&args.response)?;
    let x = DesignMatrix::new(design_in.context(parse_matrix_csv(&design_in.text))?)?;
    let y = response_in.context(parse_vector_csv(&response_in.text))?;
    if y.len() != x.n() {
        return Err(CliError::Usage(format!(
            "response has {} rows, design has {}",
            y.len(),
            x.n()
        )));
    }
    let mut inputs = vec![&design_in, &response_in];

    let groups_in = args.groups.as_deref().map(Input::read).transpose()?;
    let groups = match &groups_in {
        Some(g) => Some(g.context(GroupStructure::parse(&g.text, x.m()))?),
        None => None,
    };
    let d_in = args.d_matrix.as_deref().map(Input::read).transpose()?;
    let d_map = match (&d_in, args.mode) {
        (Some(d), _) => {
            let dm = d.context(parse_matrix_csv(&d.text))?;
            if dm.nrows() != x.m() || dm.ncols() != x.m() {
                return Err(CliError::Usage(format!(
                    "D must be {0}x{0}, got {1}x{2}",
                    x.m(),
                    dm.nrows(),
                    dm.ncols()
                )));
            }
            Some(d.context(LinearMapD::custom(dm))?)
        }
        (None, SparsityMode::Fused) => Some(make_first_difference(x.m())?),
        (None, _) => None,
    };
    inputs.extend(groups_in.iter());
    inputs.extend(d_in.iter());

    let dim = match &groups {
        Some(g) => g.num_groups(),
        None => x.m(),
    };
    if method == Method::Exact && dim > EXACT_LIMIT {
        return Err(CliError::Usage(format!(
            "exact enumeration is limited to dimension {EXACT_LIMIT}, got {dim}; use `spa fit --method mh`"
        )));
    }
    let warm_start = match &args.warm_start {
        Some(s) => {
            let p = SparsityPattern::parse_bitstring(s)?;
            if p.len() != dim {
                return Err(CliError::Usage(format!(
                    "--warm-start has length {}, expected {dim}",
                    p.len()
                )));
            }
            Some(p)
        }
        None => None,
    };
    let config = AggregationConfig {
        beta: args.beta,
        mode: match method {
            Method::Exact => Mode::Exact,
            Method::Mh => Mode::Mh,
        },
        t0: args.t0,
        t: args.t,
        seed: args.seed,
        cache_capacity: args.cache_capacity,
        keep_table: method == Method::Exact,
        record_trace: args.trace,
        warm_start,
    };
    config.validate()?;

    let est = match args.mode {
        SparsityMode::Coord => fit_coordinatewise(&x, &y, args.sigma, &config)?,
        SparsityMode::Fused => fit_fused(
            &x,
            &y,
            args.sigma,
            d_map.as_ref().expect("fused map"),
            &config,
        )?,
        SparsityMode::Group => fit_group(
            &x,
            &y,
            args.sigma,
            groups.as_ref().expect("groups"),
            &config,
        )?,
    };

    create_dir(&args.out)?;
    write(&args.out, "theta.csv", format_vector(&est.theta))?;
    write(&args.out, "fitted.csv", format_vector(&est.predict(&x)))?;
    write(
        &args.out,
        "diagnostics.json",
        to_json(&diagnostics_json(&est))?,
    )?;
    if let Some(table) = est.exact().and_then(|s| s.table.as_ref()) {
        let mut buf = Vec::new();
        table.write_csv(&mut buf)?;
        write(&args.out, "weights.csv", buf)?;
    }
    if let Some(d) = est.chain().filter(|d| d.trace.is_some()) {
        let mut buf = Vec::new();
        d.write_trace_csv(&mut buf)?;
        write(&args.out, "trace.csv", buf)?;
    }
    let sub = if exact { "exact" } else { "fit" };
    let extra = json!({
        "seed": args.seed,
        "beta": est.beta,
        "method": method,
        "n": x.n(),
        "m": x.m(),
    });
    write(
        &args.out,
        "manifest.json",
        to_json(&manifest(sub, args, &inputs, extra))?,
    )?;
    eprintln!(
        "{sub}: wrote {} coefficients to {}",
        est.theta.len(),
        args.out.join("theta.csv").display()
    );
    Ok(())
}

pub fn simulate(args: &SimulateArgs) -> Result<(), CliError> {
    let file_in = args.scenario.as_deref().map(Input::read).transpose()?;
    let fields = match &file_in {
        Some(f) => ScenarioFields::parse(&f.text)?,
        None => ScenarioFields::default(),
    };
    let scenario = fields.overlay(args).build()?;
    scenario.validate()?;
    let report = run_replications(&scenario)?;

    create_dir(&args.out)?;
    write(&args.out, "report.csv", report.summary_csv())?;
    write(&args.out, "report.json", to_json(&report)?)?;
    let mut buf = Vec::new();
    report.write_records_csv(&mut buf)?;
    write(&args.out, "records.csv", buf)?;
    let inputs: Vec<&Input> = file_in.iter().collect();
    let extra = json!({ "scenario": &scenario });
    write(
        &args.out,
        "manifest.json",
        to_json(&manifest("simulate", args, &inputs, extra))?,
    )?;
    eprintln!(
        "simulate: {} reps x {} estimators in {:.1}s",
        scenario.reps,
        scenario.roster.len(),
        report.wall_clock_secs
    );
    print!("{}", report.summary_csv());
    Ok(())
}

pub fn report(args: &ReportArgs) -> Result<(), CliError> {
    let input = Input::read(&args.input)?;
    let v: Value = serde_json::from_str(&input.text)
        .map_err(|e| CliError::Usage(format!("{}: {e}", args.input.display())))?;
    let rows = v
        .get("summaries")
        .and_then(Value::as_array)
        .ok_or_else(|| CliError::Usage("report has no summaries".into()))?;
    let num = |r: &Value, k: &str| r.get(k).and_then(Value::as_f64).unwrap_or(f64::NAN);
    let cols = [
        "prediction_mean",
        "prediction_sd",
        "estimation_mean",
        "estimation_sd",
    ];
    let mut out = String::new();
    match args.format {
        ReportFormat::Csv => {
            out.push_str("estimator,ok_reps,failed_reps,");
            out.push_str(&cols.join(","));
            out.push('\n');
            for r in rows {
                out.push_str(&format!(
                    "{},{},{}",
                    r["estimator"].as_str().unwrap_or("?"),
                    r["ok_reps"],
                    r["failed_reps"]
                ));
                for c in cols {
                    out.push_str(&format!(",{}", num(r, c)));
                }
                out.push('\n');
            }
        }
        ReportFormat::Markdown => {
            out.push_str("| estimator | reps | prediction | estimation |\n|---|---|---|---|\n");
            for r in rows {
                out.push_str(&format!(
                    "| {} | {} | {:.4} ({:.4}) | {:.4} ({:.4}) |\n",
                    r["estimator"].as_str().unwrap_or("?"),
                    r["ok_reps"],
                    num(r, cols[0]),
                    num(r, cols[1]),
                    num(r, cols[2]),
                    num(r, cols[3])
                ));
            }
        }
        ReportFormat::Text => {
            out.push_str(&format!(
                "{:<16} {:>6} {:>22} {:>22}\n",
                "estimator", "reps", "prediction mean (sd)", "estimation mean (sd)"
            ));
            for r in rows {
                let flag = if r["sd_degenerate"].as_bool() == Some(true) {
                    " *"
                } else {
                    ""
                };
                out.push_str(&format!(
                    "{:<16} {:>6} {:>22} {:>22}{flag}\n",
                    r["estimator"].as_str().unwrap_or("?"),
                    r["ok_reps"],
                    format!("{:.4} ({:.4})", num(r, cols[0]), num(r, cols[1])),
                    format!("{:.4} ({:.4})", num(r, cols[2]), num(r, cols[3])),
                ));
            }
            if rows
                .iter()
                .any(|r| r["sd_degenerate"].as_bool() == Some(true))
            {
                out.push_str("* fewer than two successful replications; sd reported as 0\n");
            }
        }
    }
    print!("{out}");
    Ok(())
}
