//! Command-line front end: parse device files or catalog names, run the
//! deciders, and emit human-readable summaries plus JSON reports.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};

use crate::catalog;
use crate::compat::{
    check_compatible, check_compatible_jordan, check_compatible_traditional,
    check_compatible_via_complementary, check_postprocessing, check_povm_povm_sandwich,
    CompatReport,
};
use crate::devices::{Instrument, State};
use crate::dilation::{canonical_dilation, complementary_instrument, minimal_dilation};
use crate::json::{
    device_from_file, device_to_json, dilation_to_json, instrument_to_json, Device,
};
use crate::linalg::{min_eig, CMatrix};
use crate::sdp::{SolveConfig, Status};

/// Exit code 0: decided; 2: UNDECIDED; 1: usage or I/O error.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            // clap handles --help/--version as "errors" with exit code 0.
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

#[derive(Parser)]
#[command(
    name = "instrocompat",
    about = "Compatibility, postprocessing, and non-disturbance deciders for quantum devices",
    version
)]
struct Cli {
    #[command(subcommand)]
    verb: Verb,
}

#[derive(Args, Clone)]
struct SolverArgs {
    /// Feasibility tolerance (default from INSTROCOMPAT_TOL or 1e-7).
    #[arg(long)]
    feas_tol: Option<f64>,
    /// Infeasibility-margin threshold.
    #[arg(long)]
    gap_tol: Option<f64>,
    /// Iteration cap for the projection solver.
    #[arg(long)]
    max_iter: Option<usize>,
}

impl SolverArgs {
    fn config(&self) -> SolveConfig {
        let mut cfg = SolveConfig::default();
        if let Ok(v) = std::env::var("INSTROCOMPAT_TOL") {
            if let Ok(t) = v.parse::<f64>() {
                cfg.feas_tol = t;
            }
        }
        if let Some(t) = self.feas_tol {
            cfg.feas_tol = t;
        }
        if let Some(t) = self.gap_tol {
            cfg.gap_tol = t;
        }
        if let Some(n) = self.max_iter {
            cfg.max_iter = n;
        }
        cfg
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum RouteArg {
    Direct,
    Complementary,
    Jordan,
}

#[derive(Subcommand)]
enum Verb {
    /// Decide compatibility of two devices.
    Check {
        /// First device: file path or catalog:NAME.
        #[arg(long)]
        a: String,
        /// Second device: file path or catalog:NAME.
        #[arg(long)]
        b: String,
        /// Decision route.
        #[arg(long, value_enum, default_value = "direct")]
        route: RouteArg,
        /// Use the equal-output-space joint with plain outcome sums.
        #[arg(long)]
        traditional: bool,
        #[command(flatten)]
        solver: SolverArgs,
        /// Write the JSON report here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Decide whether TARGET is a postprocessing of SOURCE.
    Postprocess {
        #[arg(long)]
        target: String,
        #[arg(long)]
        source: String,
        #[command(flatten)]
        solver: SolverArgs,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Construct a dilation and the complementary instrument of a device.
    Complement {
        /// Device: file path or catalog:NAME.
        device: String,
        /// Dilation flavor.
        #[arg(long, default_value = "canonical")]
        dilation: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Classify structural properties of a device.
    Classify {
        device: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a named demonstration (xz-threshold, no-broadcasting, pauli).
    Demo {
        name: String,
        #[command(flatten)]
        solver: SolverArgs,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Sweep a one-parameter family and report verdicts per grid point.
    Scan {
        /// Family name (currently: xz).
        #[arg(long, default_value = "xz")]
        family: String,
        /// Grid step in [0, 1].
        #[arg(long, default_value_t = 0.05)]
        step: f64,
        #[command(flatten)]
        solver: SolverArgs,
        /// Write CSV here (JSON when the extension is .json).
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

// ---------------------------------------------------------------------------
// Device references
// ---------------------------------------------------------------------------

/// Resolve a device reference: `catalog:NAME` or a JSON file path.
fn resolve_device(reference: &str) -> Result<Device, String> {
    if let Some(name) = reference.strip_prefix("catalog:") {
        resolve_catalog(name)
    } else {
        device_from_file(std::path::Path::new(reference)).map_err(|e| e.to_string())
    }
}

fn resolve_catalog(name: &str) -> Result<Device, String> {
    if let Some(d) = name.strip_prefix("id") {
        let dim: usize = d
            .parse()
            .map_err(|_| format!("invalid identity dimension in catalog name \"{name}\""))?;
        if dim == 0 || dim > 16 {
            return Err(format!("identity dimension {dim} out of range 1..=16"));
        }
        return Ok(Device::Instrument(Instrument::identity(dim)));
    }
    if let Some(rest) = name.strip_prefix("xz-i:a=") {
        let a: f64 = rest.parse().map_err(|_| bad_param(name))?;
        let (i, _) = catalog::xz_map_instruments(a).map_err(|e| e.to_string())?;
        return Ok(Device::Instrument(i));
    }
    if let Some(rest) = name.strip_prefix("xz-j:a=") {
        let a: f64 = rest.parse().map_err(|_| bad_param(name))?;
        let (_, j) = catalog::xz_map_instruments(a).map_err(|e| e.to_string())?;
        return Ok(Device::Instrument(j));
    }
    if let Some(rest) = name.strip_prefix("noisy-z:v=") {
        let v: f64 = rest.parse().map_err(|_| bad_param(name))?;
        let p = catalog::noisy_qubit_povm(&catalog::sharp_qubit_z(), v)
            .map_err(|e| e.to_string())?;
        return Ok(Device::Povm(p));
    }
    if let Some(rest) = name.strip_prefix("trash:") {
        // trash:p1,p2,... prepares Z-basis states with the given weights.
        let ps: Vec<f64> = rest
            .split(',')
            .map(|t| t.parse::<f64>().map_err(|_| bad_param(name)))
            .collect::<Result<_, _>>()?;
        let dim = ps.len();
        let xs: Vec<State> = (0..dim)
            .map(|k| {
                let mut v = CMatrix::zeros(dim, 1);
                v.set(k, 0, crate::linalg::C64::new(1.0, 0.0));
                State::pure(&v).map_err(|e| e.to_string())
            })
            .collect::<Result<_, _>>()?;
        let ins = catalog::trash_and_prepare(&ps, &xs, dim).map_err(|e| e.to_string())?;
        return Ok(Device::Instrument(ins));
    }
    if let Some(rest) = name.strip_prefix("luders:") {
        let povm = match resolve_device(rest)? {
            Device::Povm(p) => p,
            Device::Instrument(_) => {
                return Err(format!("luders: expects a POVM reference, got an instrument"))
            }
        };
        return Ok(Device::Instrument(povm.luders().map_err(|e| e.to_string())?));
    }
    match name {
        "pauli" => Ok(Device::Instrument(catalog::pauli_instrument())),
        "sharp-z" => Ok(Device::Povm(catalog::sharp_qubit_z())),
        "sharp-x" => Ok(Device::Povm(catalog::sharp_qubit_x())),
        "trivial" => Ok(Device::Povm(catalog::trivial_qubit_povm())),
        _ => Err(format!("unknown catalog name \"{name}\"")),
    }
}

fn bad_param(name: &str) -> String {
    format!("invalid parameter in catalog name \"{name}\"")
}

// ---------------------------------------------------------------------------
// Reports
// ---------------------------------------------------------------------------

fn config_json(cfg: &SolveConfig) -> Value {
    json!({
        "feas_tol": cfg.feas_tol,
        "gap_tol": cfg.gap_tol,
        "max_iter": cfg.max_iter,
    })
}

fn write_report(out: &Option<PathBuf>, report: &Value) -> Result<(), String> {
    if let Some(path) = out {
        let text = serde_json::to_string_pretty(report).map_err(|e| e.to_string())?;
        std::fs::write(path, text + "\n").map_err(|e| e.to_string())?;
    }
    Ok(())
}

fn exit_code(status: Status) -> i32 {
    match status {
        Status::Undecided => 2,
        _ => 0,
    }
}

fn compat_report_json(relation: &str, r: &CompatReport, cfg: &SolveConfig) -> Value {
    let mut v = json!({
        "relation": relation,
        "route": r.route.to_string(),
        "status": r.verdict.status.to_string(),
        "margin": r.verdict.margin,
        "iterations": r.verdict.iterations,
        "config": config_json(cfg),
    });
    if let Some(joint) = &r.joint {
        v["witness"] = instrument_to_json(joint);
    }
    v
}

// ---------------------------------------------------------------------------
// Dispatch
// ---------------------------------------------------------------------------

fn dispatch(cli: &Cli) -> Result<i32, String> {
    match &cli.verb {
        Verb::Check {
            a,
            b,
            route,
            traditional,
            solver,
            out,
        } => cmd_check(a, b, *route, *traditional, &solver.config(), out),
        Verb::Postprocess {
            target,
            source,
            solver,
            out,
        } => cmd_postprocess(target, source, &solver.config(), out),
        Verb::Complement {
            device,
            dilation,
            out,
        } => cmd_complement(device, dilation, out),
        Verb::Classify { device, out } => cmd_classify(device, out),
        Verb::Demo { name, solver, out } => cmd_demo(name, &solver.config(), out),
        Verb::Scan {
            family,
            step,
            solver,
            out,
        } => cmd_scan(family, *step, &solver.config(), out),
    }
}

fn cmd_check(
    a_ref: &str,
    b_ref: &str,
    route: RouteArg,
    traditional: bool,
    cfg: &SolveConfig,
    out: &Option<PathBuf>,
) -> Result<i32, String> {
    let a = resolve_device(a_ref)?;
    let b = resolve_device(b_ref)?;
    let report = match route {
        RouteArg::Direct => {
            let (ai, bi) = (a.as_instrument(), b.as_instrument());
            if traditional {
                check_compatible_traditional(&ai, &bi, cfg)
            } else {
                check_compatible(&ai, &bi, cfg)
            }
            .map_err(|e| e.to_string())?
        }
        RouteArg::Complementary => match (&a, &b) {
            (Device::Povm(pa), Device::Povm(pb)) => {
                check_povm_povm_sandwich(pa, pb, cfg).map_err(|e| e.to_string())?
            }
            _ => check_compatible_via_complementary(&a.as_instrument(), &b.as_instrument(), cfg)
                .map_err(|e| e.to_string())?,
        },
        RouteArg::Jordan => {
            let (ai, bi) = (a.as_instrument(), b.as_instrument());
            if ai.n_outcomes() != 1 || bi.n_outcomes() != 1 {
                return Err("the jordan route applies to channels (one-outcome devices)".into());
            }
            check_compatible_jordan(&ai, &bi, cfg).map_err(|e| e.to_string())?
        }
    };
    println!(
        "compatibility({a_ref}, {b_ref}) [{}]: {}  margin={:.3e}  iterations={}",
        report.route, report.verdict.status, report.verdict.margin, report.verdict.iterations
    );
    let v = compat_report_json("compatibility", &report, cfg);
    write_report(out, &v)?;
    Ok(exit_code(report.verdict.status))
}

fn cmd_postprocess(
    target_ref: &str,
    source_ref: &str,
    cfg: &SolveConfig,
    out: &Option<PathBuf>,
) -> Result<i32, String> {
    let target = resolve_device(target_ref)?.as_instrument();
    let source = resolve_device(source_ref)?.as_instrument();
    let report = check_postprocessing(&target, &source, cfg).map_err(|e| e.to_string())?;
    println!(
        "postprocessing({target_ref} ⪯ {source_ref}): {}  margin={:.3e}  iterations={}",
        report.verdict.status, report.verdict.margin, report.verdict.iterations
    );
    let mut v = json!({
        "relation": "postprocessing",
        "route": "DIRECT_SDP",
        "status": report.verdict.status.to_string(),
        "margin": report.verdict.margin,
        "iterations": report.verdict.iterations,
        "config": config_json(cfg),
    });
    if let Some(procs) = &report.processors {
        v["witness"] = Value::Array(procs.iter().map(instrument_to_json).collect());
    }
    write_report(out, &v)?;
    Ok(exit_code(report.verdict.status))
}

fn cmd_complement(
    device_ref: &str,
    flavor: &str,
    out: &Option<PathBuf>,
) -> Result<i32, String> {
    let ins = resolve_device(device_ref)?.as_instrument();
    let dil = match flavor {
        "canonical" => canonical_dilation(&ins).map_err(|e| e.to_string())?,
        "minimal" => minimal_dilation(&ins).map_err(|e| e.to_string())?,
        other => return Err(format!("unknown dilation flavor \"{other}\"")),
    };
    let comp = complementary_instrument(&ins, &dil).map_err(|e| e.to_string())?;
    println!(
        "complement({device_ref}, {flavor}): ancilla dimension {}, {} outcomes",
        dil.dim_anc,
        comp.n_outcomes()
    );
    let v = json!({
        "relation": "complement",
        "dilation": dilation_to_json(&dil),
        "complementary": instrument_to_json(&comp),
    });
    write_report(out, &v)?;
    Ok(0)
}

fn cmd_classify(device_ref: &str, out: &Option<PathBuf>) -> Result<i32, String> {
    let ins = resolve_device(device_ref)?.as_instrument();
    let cls = catalog::classify(&ins).map_err(|e| e.to_string())?;
    println!(
        "classify({device_ref}): measure-and-prepare={} indecomposable={} rank1-povm={} sharp={} trash-and-prepare={}",
        cls.is_measure_and_prepare,
        cls.is_indecomposable,
        cls.is_rank1_povm,
        cls.is_sharp,
        cls.is_trash_and_prepare
    );
    let states: Vec<Value> = cls
        .mp_states
        .iter()
        .map(|s| match s {
            Some(st) => crate::json::matrix_to_json(st.matrix()),
            None => Value::Null,
        })
        .collect();
    let v = json!({
        "relation": "classify",
        "is_measure_and_prepare": cls.is_measure_and_prepare,
        "is_indecomposable": cls.is_indecomposable,
        "is_rank1_povm": cls.is_rank1_povm,
        "is_sharp": cls.is_sharp,
        "is_trash_and_prepare": cls.is_trash_and_prepare,
        "mp_residual": cls.mp_residual,
        "mp_povm": device_to_json(&Device::Povm(cls.mp_povm.clone())),
        "mp_states": states,
    });
    write_report(out, &v)?;
    Ok(0)
}

fn cmd_demo(name: &str, cfg: &SolveConfig, out: &Option<PathBuf>) -> Result<i32, String> {
    match name {
        "xz-threshold" => {
            println!("a       min_eig(Jordan Choi)   verdict");
            let mut rows = Vec::new();
            for k in 0..=10 {
                let a = k as f64 / 10.0;
                let (i, j) = catalog::xz_map_instruments(a).map_err(|e| e.to_string())?;
                let me = jordan_min_eig(&i, &j)?;
                let verdict = if me >= -1e-9 { "PSD" } else { "NOT-PSD" };
                println!("{a:<7.2} {me:>20.6e}   {verdict}");
                rows.push(json!({"a": a, "min_eig": me, "psd": me >= -1e-9}));
            }
            write_report(out, &json!({"relation": "demo", "name": name, "rows": rows}))?;
            Ok(0)
        }
        "no-broadcasting" => {
            let id = Instrument::identity(2);
            let pauli = catalog::pauli_instrument();
            let r = check_compatible(&id, &pauli, cfg).map_err(|e| e.to_string())?;
            println!(
                "id₂ vs Pauli instrument: {}  margin={:.3e}",
                r.verdict.status, r.verdict.margin
            );
            write_report(out, &compat_report_json("demo:no-broadcasting", &r, cfg))?;
            Ok(exit_code(r.verdict.status))
        }
        "pauli" => {
            let pauli = catalog::pauli_instrument();
            let cls = catalog::classify(&pauli).map_err(|e| e.to_string())?;
            println!(
                "Pauli instrument: indecomposable={} measure-and-prepare={} (residual {:.3})",
                cls.is_indecomposable, cls.is_measure_and_prepare, cls.mp_residual
            );
            let dil = canonical_dilation(&pauli).map_err(|e| e.to_string())?;
            println!("canonical dilation ancilla dimension: {}", dil.dim_anc);
            write_report(
                out,
                &json!({
                    "relation": "demo", "name": name,
                    "is_indecomposable": cls.is_indecomposable,
                    "is_measure_and_prepare": cls.is_measure_and_prepare,
                    "dim_anc": dil.dim_anc,
                }),
            )?;
            Ok(0)
        }
        other => Err(format!(
            "unknown demo \"{other}\" (expected xz-threshold, no-broadcasting, or pauli)"
        )),
    }
}

fn jordan_min_eig(i: &Instrument, j: &Instrument) -> Result<f64, String> {
    let phi = i.induced_channel();
    let psi = j.induced_channel();
    let choi = crate::compat::jordan_product_choi(&phi, &psi).map_err(|e| e.to_string())?;
    min_eig(&choi).map_err(|e| e.to_string())
}

/// One scan row: grid point, Jordan minimum eigenvalue, solver verdict.
pub struct ScanRow {
    pub a: f64,
    pub min_eig: f64,
    pub status: Status,
    pub margin: f64,
}

/// Sweep the xz family over a ∈ {0, step, …, 1}.
pub fn scan_xz(step: f64, cfg: &SolveConfig) -> Result<Vec<ScanRow>, String> {
    if !(1e-4..=1.0).contains(&step) {
        return Err(format!("step {step} out of range"));
    }
    let mut rows = Vec::new();
    let n = (1.0 / step).round() as usize;
    for k in 0..=n {
        let a = (k as f64 * step).min(1.0);
        let (i, j) = catalog::xz_map_instruments(a).map_err(|e| e.to_string())?;
        let me = jordan_min_eig(&i, &j)?;
        let status = if me >= -cfg.feas_tol {
            Status::Feasible
        } else {
            Status::Infeasible
        };
        rows.push(ScanRow {
            a,
            min_eig: me,
            status,
            margin: me,
        });
    }
    Ok(rows)
}

fn cmd_scan(
    family: &str,
    step: f64,
    cfg: &SolveConfig,
    out: &Option<PathBuf>,
) -> Result<i32, String> {
    if family != "xz" {
        return Err(format!("unknown scan family \"{family}\""));
    }
    let rows = scan_xz(step, cfg)?;
    println!("a,min_eig,status,margin");
    let mut csv = String::from("a,min_eig,status,margin\n");
    for r in &rows {
        let line = format!("{:.6},{:.9e},{},{:.9e}", r.a, r.min_eig, r.status, r.margin);
        println!("{line}");
        csv.push_str(&line);
        csv.push('\n');
    }
    if let Some(path) = out {
        if path.extension().and_then(|e| e.to_str()) == Some("json") {
            let rows_v: Vec<Value> = rows
                .iter()
                .map(|r| {
                    json!({
                        "a": r.a, "min_eig": r.min_eig,
                        "status": r.status.to_string(), "margin": r.margin
                    })
                })
                .collect();
            write_report(out, &json!({"relation": "scan", "family": family, "rows": rows_v}))?;
        } else {
            std::fs::write(path, csv).map_err(|e| e.to_string())?;
        }
    }
    Ok(0)
}
