//! `tmoment`: truncated moment problems from the command line.
//!
//! Every command prints one JSON certificate on stdout (`dominate` and `scp`
//! print a human-readable table or diagram first). Exit status: 0 on
//! success, 2 when the verdict is a failure or a refusal, 1 on input errors.

mod problem;
mod report;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use serde_json::json;

use tmoment_core::dominating::{
    boundedness_check, dominate_monomial, dominate_space, dominator_formula, GridK, Sample,
};
use tmoment_core::extraction::{build_multiplication_system, extract_atoms, verify_representation};
use tmoment_core::flat::{check_tmp, frame_consistency, moment_basis};
use tmoment_core::matrix::moment_matrix_ordered;
use tmoment_core::scp::{natural_kmax, scp_solve, weight_diagram, ScpOptions};
use tmoment_core::{solve_tmp, Error, MomentSequence, MonomialSet, MultiIndex, Polynomial, SolveOptions};

use problem::{parse_grid, parse_problem, parse_weights, FileOptions, Problem};
use report::{check_json, witness_json, write_atoms_csv, Certificate, Tolerances};

/// Like `println!`, but a closed pipe (`tmoment ... | head`) is not a panic.
macro_rules! say {
    ($($t:tt)*) => {{
        use std::io::Write;
        let _ = writeln!(std::io::stdout().lock(), $($t)*);
    }};
}

/// `[-10, 10]` in steps of 0.5.
const DOMINATE_GRID_STEPS: usize = 41;

#[derive(Parser)]
#[command(
    name = "tmoment",
    version,
    about = "Truncated moment problems: checks, flat extensions, atom extraction",
    allow_negative_numbers = true
)]
struct Cli {
    #[command(flatten)]
    tuning: Tuning,
    #[command(subcommand)]
    command: Command,
}

/// Overrides for file options and defaults.
#[derive(Args)]
struct Tuning {
    #[arg(long, global = true)]
    psd_tol: Option<f64>,
    #[arg(long, global = true)]
    rank_tol: Option<f64>,
    /// Maximum number of extension steps.
    #[arg(long, global = true)]
    depth: Option<usize>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Normalize to a probability measure before solving.
    #[arg(long, global = true)]
    probability: bool,
    /// Also write recovered atoms and weights as CSV.
    #[arg(long, global = true, value_name = "PATH")]
    atoms_csv: Option<PathBuf>,
    /// Search box for the grid fallback, `lo,hi,steps` on every axis.
    #[arg(long, global = true, value_name = "LO,HI,STEPS")]
    grid: Option<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Positivity, localizing and consistency checks only.
    Check { file: PathBuf },
    /// Full pipeline: checks, flat extension, extraction, verification.
    Solve { file: PathBuf },
    /// Extract atoms from data whose moment matrix is already flat.
    Extract { file: PathBuf },
    /// Dominating polynomial of a monomial (`3`, `1,1`) or of all monomials up to a degree.
    Dominate {
        alpha: Option<String>,
        #[arg(long)]
        degree: Option<u32>,
        #[arg(long, default_value_t = 1)]
        nvars: usize,
    },
    /// Two-variable weighted shift: weights to moments to a representing measure.
    Scp {
        file: PathBuf,
        #[arg(long)]
        kmax: Option<u32>,
    },
    /// Solve each degree truncation listed under `levels` and compare.
    Frame { file: PathBuf },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        // Usage errors share exit code 1 with other input errors; 2 is
        // reserved for failure verdicts.
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(&cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn run(cli: &Cli) -> anyhow::Result<u8> {
    let t = &cli.tuning;
    match &cli.command {
        Command::Check { file } => check(file, t),
        Command::Solve { file } => solve(file, t),
        Command::Extract { file } => extract(file, t),
        Command::Dominate { alpha, degree, nvars } => dominate(alpha.as_deref(), *degree, *nvars),
        Command::Scp { file, kmax } => scp(file, *kmax, t),
        Command::Frame { file } => frame(file, t),
    }
}

fn read(path: &Path) -> anyhow::Result<String> {
    std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn load_problem(path: &Path) -> anyhow::Result<Problem> {
    let src = read(path)?;
    parse_problem(&src).with_context(|| format!("{}", path.display()))
}

/// Flag, then file option, then default.
fn effective(t: &Tuning, file: &FileOptions, nvars: usize) -> anyhow::Result<(SolveOptions, Option<String>)> {
    let mut o = SolveOptions::default();
    if let Some(v) = t.psd_tol.or(file.psd_tol) {
        o.psd_tol = v;
    }
    if let Some(v) = t.rank_tol.or(file.rank_tol) {
        o.rank_tol = v;
    }
    if let Some(v) = file.consistency_tol {
        o.consistency_tol = v;
    }
    if let Some(v) = file.residual_tol {
        o.residual_tol = v;
    }
    if let Some(v) = file.point_tol {
        o.point_tol = v;
    }
    if let Some(v) = t.depth.or(file.depth) {
        o.depth = v;
    }
    if let Some(v) = t.seed.or(file.seed) {
        o.seed = v;
    }
    o.probability = t.probability || file.probability.unwrap_or(false);
    let grid = t.grid.clone().or_else(|| file.grid.clone());
    if let Some(g) = &grid {
        let (lo, hi, steps) = parse_grid(g)?;
        o.search_box = Some(vec![(lo, hi); nvars]);
        o.cubature.points_per_axis = Some(steps);
    }
    for (name, v) in [("psd-tol", o.psd_tol), ("rank-tol", o.rank_tol)] {
        if !(v.is_finite() && v > 0.0) {
            bail!("{name} must be a positive number, got {v}");
        }
    }
    Ok((o, grid))
}

fn emit(cert: &Certificate, t: &Tuning, nvars: usize) -> anyhow::Result<()> {
    if let Some(path) = &t.atoms_csv {
        write_atoms_csv(path, nvars, &cert.atoms, &cert.weights)
            .with_context(|| format!("writing {}", path.display()))?;
    }
    say!("{}", cert.to_json());
    Ok(())
}

fn exit_for(success: bool) -> u8 {
    if success {
        0
    } else {
        2
    }
}

fn check(file: &Path, t: &Tuning) -> anyhow::Result<u8> {
    let p = load_problem(file)?;
    let (opts, grid) = effective(t, &p.options, p.nvars)?;
    let (report, failure) = check_tmp(&p.moments, &p.set, &p.constraints, &opts)?;
    let verdict = failure.as_ref().map_or("checks_passed".to_string(), |(v, _)| v.to_string());
    let mut cert = Certificate::new("check", Some(file), verdict);
    if let Some((_, w)) = &failure {
        cert.witness = witness_json(w, p.nvars);
    }
    cert.tolerances = Some(Tolerances::from_options(&opts, grid));
    cert.report = check_json(&report, p.nvars);
    cert.warnings = report.warnings.clone();
    emit(&cert, t, p.nvars)?;
    Ok(exit_for(failure.is_none()))
}

fn solve(file: &Path, t: &Tuning) -> anyhow::Result<u8> {
    let p = load_problem(file)?;
    let (opts, grid) = effective(t, &p.options, p.nvars)?;
    let sc = solve_tmp(&p.moments, &p.set, &p.constraints, &opts)?;
    let mut cert = Certificate::new("solve", Some(file), sc.verdict.to_string());
    if let Some(mu) = &sc.measure {
        cert.with_measure(mu);
    }
    if let Some(m) = &sc.extended_moments {
        cert.with_moments(m);
    }
    cert.residual = sc.residual;
    cert.witness = witness_json(&sc.witness, p.nvars);
    cert.tolerances = Some(Tolerances::from_options(&opts, grid));
    cert.report = json!({
        "route": sc.route,
        "check": check_json(&sc.check, p.nvars),
        "dominating": sc.dominating.as_ref().map(Polynomial::to_string),
        "limitations": sc.limitations,
    });
    cert.warnings = sc.warnings.clone();
    emit(&cert, t, p.nvars)?;
    Ok(exit_for(sc.verdict.is_success()))
}

fn extract(file: &Path, t: &Tuning) -> anyhow::Result<u8> {
    let p = load_problem(file)?;
    let (opts, grid) = effective(t, &p.options, p.nvars)?;
    let (report, failure) = check_tmp(&p.moments, &p.set, &p.constraints, &opts)?;
    let mut cert = Certificate::new("extract", Some(file), "representable");
    cert.tolerances = Some(Tolerances::from_options(&opts, grid));
    cert.warnings = report.warnings.clone();
    let check = check_json(&report, p.nvars);
    if let Some((v, w)) = failure {
        cert.verdict = v.to_string();
        cert.witness = witness_json(&w, p.nvars);
        cert.report = json!({ "check": check });
        emit(&cert, t, p.nvars)?;
        return Ok(2);
    }
    let basis = moment_basis(&p.set);
    let m = moment_matrix_ordered(&p.moments, &basis)?;
    let extracted = build_multiplication_system(&m, opts.rank_tol)
        .and_then(|sys| extract_atoms(&sys, &p.moments, &opts.extract_options()));
    let mu = match extracted {
        Ok(mu) => mu,
        Err(e @ (Error::Flatness(_) | Error::Extraction(_))) => {
            cert.verdict = match e {
                Error::Flatness(_) => "not_flat",
                _ => "extraction_failed",
            }
            .to_string();
            cert.report = json!({ "check": check, "reason": e.to_string() });
            emit(&cert, t, p.nvars)?;
            return Ok(2);
        }
        Err(e) => return Err(e.into()),
    };
    let v = verify_representation(&p.moments, &mu, &p.set, opts.residual_tol);
    cert.with_measure(&mu);
    cert.residual = Some(v.max_residual);
    if !v.ok {
        cert.verdict = "residual_too_large".into();
    }
    cert.report = json!({ "check": check, "checked_moments": v.checked });
    emit(&cert, t, p.nvars)?;
    Ok(exit_for(v.ok))
}

fn parse_alpha(s: &str) -> anyhow::Result<MultiIndex> {
    let exps = s
        .split(',')
        .map(|e| e.trim().parse::<u32>())
        .collect::<Result<Vec<_>, _>>()
        .with_context(|| format!("exponent vector {s:?} must be comma-separated non-negative integers"))?;
    Ok(MultiIndex::new(exps))
}

/// `max over the grid of |x^a| - p`; never positive for a true dominator.
fn grid_excess(a: &MultiIndex, p: &Polynomial, grid: &GridK) -> anyhow::Result<f64> {
    let mut worst = f64::NEG_INFINITY;
    for x in grid.points() {
        worst = worst.max(a.eval(x).abs() - p.eval(x)?);
    }
    Ok(worst)
}

fn dominate(alpha: Option<&str>, degree: Option<u32>, nvars: usize) -> anyhow::Result<u8> {
    let (target, p, alphas) = match (alpha, degree) {
        (Some(a), None) => {
            let a = parse_alpha(a)?;
            let p = dominate_monomial(&a)?;
            (a.monomial_string(), p, vec![a])
        }
        (None, Some(k)) => {
            if nvars == 0 {
                bail!("--nvars must be at least 1");
            }
            let alphas: Vec<_> = MonomialSet::up_to_degree(nvars, k)
                .iter()
                .filter(|a| !a.is_zero())
                .cloned()
                .collect();
            let p = dominate_space(k, nvars)?;
            (format!("all monomials of degree <= {k} in {nvars} variables"), p, alphas)
        }
        _ => bail!("give either an exponent vector or --degree"),
    };
    let n = p.nvars();
    let grid = GridK::boxed(&vec![(-10.0, 10.0); n], DOMINATE_GRID_STEPS)?;
    let sample = Sample::default_radial(n);
    let width = alphas.iter().map(|a| a.monomial_string().len()).max().unwrap_or(0).max(8);
    let mut table = Vec::new();
    let mut ok = true;
    say!("{:<width$}  {:<36}  {:>14}  {:>14}", "monomial", "dominator", "max |x^a|-q", "max |x^a|-p");
    for a in &alphas {
        let q = dominate_monomial(a)?;
        let formula = dominator_formula(a)?;
        let own = grid_excess(a, &q, &grid)?;
        let total = grid_excess(a, &p, &grid)?;
        let trend = boundedness_check(&Polynomial::monomial(a.clone(), 1.0), &p, &sample)?;
        ok &= own <= 0.0 && total <= 0.0 && trend.trend_bounded;
        say!("{:<width$}  {:<36}  {:>14.6e}  {:>14.6e}", a.monomial_string(), formula, own, total);
        table.push(json!({
            "monomial": a.monomial_string(),
            "dominator": formula,
            "dominator_expanded": q.to_string(),
            "grid_max_excess": own,
            "grid_max_excess_total": total,
            "ratio_sup_estimate": trend.sup_estimate,
            "trend_bounded": trend.trend_bounded,
        }));
    }
    say!("p = {p}");
    say!("grid: {}", grid.description());
    say!();
    let mut cert = Certificate::new("dominate", None, if ok { "dominated" } else { "not_dominated" });
    cert.report = json!({
        "target": target,
        "dominating": p.to_string(),
        "degree": p.degree(),
        "nvars": n,
        "grid": grid.description(),
        "monomials": table,
    });
    say!("{}", cert.to_json());
    Ok(exit_for(ok))
}

fn scp(file: &Path, kmax: Option<u32>, t: &Tuning) -> anyhow::Result<u8> {
    let src = read(file)?;
    let wf = parse_weights(&src).with_context(|| format!("{}", file.display()))?;
    let (solve, grid) = effective(t, &wf.options, 2)?;
    let opts = ScpOptions {
        kmax: kmax.or(wf.options.kmax),
        solve,
        ..ScpOptions::default()
    };
    let k = opts.kmax.unwrap_or_else(|| natural_kmax(&wf.family));
    say!("{}", weight_diagram(&wf.family, k));
    let res = scp_solve(&wf.family, &opts)?;
    let mut cert = Certificate::new("scp", Some(file), "refused");
    cert.tolerances = Some(Tolerances::from_options(&opts.solve, grid));
    let mut success = false;
    if let Some(sc) = &res.certificate {
        cert.verdict = sc.verdict.to_string();
        success = sc.verdict.is_success();
        if let Some(mu) = &sc.measure {
            cert.with_measure(mu);
        }
        cert.residual = sc.residual;
        cert.witness = witness_json(&sc.witness, 2);
        cert.warnings = sc.warnings.clone();
    }
    if let Some(m) = res.certificate.as_ref().and_then(|c| c.extended_moments.as_ref()).or(res.moments.as_ref()) {
        cert.with_moments(m);
    }
    cert.report = json!({
        "kmax": res.kmax,
        "norms_squared": [res.norms.0, res.norms.1],
        "refusal": res.refusal,
        "route": res.certificate.as_ref().and_then(|c| c.route),
        "completed_weights": res.completed_weights.as_ref().map(|w| w.records()),
        "extends_input": res.extends_input,
        "input_mismatch": res.input_mismatch,
        "degenerate": res.degenerate,
    });
    emit(&cert, t, 2)?;
    Ok(exit_for(success))
}

fn truncate(m: &MomentSequence, degree: u32) -> anyhow::Result<MomentSequence> {
    let set = MonomialSet::new(m.nvars(), m.iter().map(|(a, _)| a.clone()).filter(|a| a.degree() <= degree))?;
    Ok(m.restrict(&set)?)
}

fn frame(file: &Path, t: &Tuning) -> anyhow::Result<u8> {
    let p = load_problem(file)?;
    let Some(levels) = &p.levels else {
        bail!("{}: frame needs `levels = [...]`", file.display());
    };
    let (opts, grid) = effective(t, &p.options, p.nvars)?;
    let gammas = levels
        .iter()
        .map(|&d| truncate(&p.moments, d))
        .collect::<anyhow::Result<Vec<_>>>()?;
    let fr = frame_consistency(&gammas, &p.constraints, &opts)?;
    let verdict = if fr.all_solvable { "all_solvable" } else { "not_all_solvable" };
    let mut cert = Certificate::new("frame", Some(file), verdict);
    if let Some(mu) = fr.certificates.last().and_then(|c| c.measure.as_ref()) {
        cert.with_measure(mu);
    }
    cert.residual = fr.certificates.last().and_then(|c| c.residual);
    cert.tolerances = Some(Tolerances::from_options(&opts, grid));
    cert.report = json!({
        "levels": fr.levels,
        "masses": fr.masses,
        "shared_moment_max_discrepancy": fr.shared_moment_max_discrepancy,
    });
    cert.warnings = fr.certificates.iter().flat_map(|c| c.warnings.iter().cloned()).collect();
    cert.warnings.dedup();
    emit(&cert, t, p.nvars)?;
    Ok(exit_for(fr.all_solvable))
}
