//! Command-line surface.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::info;
use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use serde_json::json;

use crate::algebra::{AlgebraKind, NcPoly, Presentation, StructureConstants};
use crate::error::{Error, Result};
use crate::extension::ExtensionResult;
use crate::filtration::{build_truncated_basis, check_hypotheses, TruncationOptions};
use crate::hankel::{build_hankel_with, is_flat, shmuljan_factor, PivotOrder, ProductTable, TruncatedFunctional};
use crate::io::{self, AlgebraSpec, MatrixJson, Problem, ResultReport, StructureSpec, TruncationSpec};
use crate::solvers::{
    extract_atoms_commutative, random_instance, smallest_flat_instance, solve_cylinder, solve_enveloping,
    solve_matrix_poly, su2_spin, vector_functional, InstanceKind, VectorRep,
};
use crate::verify;

/// Reconstruction residuals of solver outputs, relative to `max(1, max|L|)`.
pub const SOLVER_RESIDUAL_TOL: f64 = 1e-7;

#[derive(Debug, Parser)]
#[command(name = "flatext", version, about = "Flat extensions of truncated hermitian functionals")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// Problem file; repeat to process several files.
    #[arg(long = "input", short = 'i', required = true)]
    pub inputs: Vec<PathBuf>,
    /// Report path; a directory when several inputs are given.
    #[arg(long, short = 'o')]
    pub output: Option<PathBuf>,
    /// Relative rank tolerance (overrides the file).
    #[arg(long)]
    pub tol_rank: Option<f64>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Number of input files processed concurrently.
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Parse and validate problem files and check the chain hypotheses.
    Validate(Common),
    /// Rank test on the Hankel matrix.
    CheckFlat(Common),
    /// Build the flat extension and its certificates.
    Extend {
        #[command(flatten)]
        common: Common,
        /// Words at which to evaluate the extended functional.
        #[arg(long = "eval")]
        eval: Vec<String>,
    },
    /// Atomic measure for commutative and cylinder problems.
    Atoms(Common),
    /// Finite-dimensional representation (matrix decomposition for matrix
    /// polynomials, hermitian generators for enveloping algebras).
    Represent(Common),
    /// Run every invariant suite on the extension.
    Verify(Common),
    /// Write a problem file generated from a vector functional.
    Gen(GenArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum GenKind {
    Commutative,
    Cylinder,
    MatrixPoly,
    Lie,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum GenRep {
    /// Random atomic or block data for the chosen kind.
    Random,
    Su2SpinHalf,
    Su2Random,
    HeisenbergTrivial,
    HeisenbergRandom,
}

#[derive(Debug, Clone, Args)]
pub struct GenArgs {
    #[arg(long, value_enum)]
    pub kind: GenKind,
    #[arg(long, value_enum, default_value_t = GenRep::Random)]
    pub rep: GenRep,
    #[arg(long)]
    pub d: Option<usize>,
    #[arg(long)]
    pub n: Option<usize>,
    /// Atoms (commutative), points (matrix_poly) or representation dimension (su2).
    #[arg(long)]
    pub r: Option<usize>,
    #[arg(long)]
    pub lines: Option<usize>,
    #[arg(long)]
    pub per_line: Option<usize>,
    /// Truncation degree; the smallest flat one when omitted.
    #[arg(long)]
    pub m: Option<usize>,
    #[arg(long)]
    pub y_cap: Option<usize>,
    #[arg(long, default_value_t = 4)]
    pub max_m: usize,
    /// Replace every moment by zero.
    #[arg(long)]
    pub zero: bool,
    #[arg(long, short = 'o')]
    pub output: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

/// Parse arguments and run; returns the process exit code.
pub fn run_from<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    match Cli::try_parse_from(args) {
        Ok(cli) => run(cli),
        Err(e) => {
            let code = if e.use_stderr() { 4 } else { 0 };
            if code == 0 {
                print!("{e}");
            } else {
                eprintln!("{}", json!({"error": "UsageError", "message": e.to_string(), "exit_code": 4}));
            }
            code
        }
    }
}

pub fn run(cli: Cli) -> i32 {
    match cli.command {
        Command::Gen(args) => match gen(&args) {
            Ok(()) => 0,
            Err(e) => report_error(&e, None),
        },
        Command::Validate(c) => run_inputs(&c, "validate", |p, c| cmd_validate(p, c)),
        Command::CheckFlat(c) => run_inputs(&c, "check-flat", |p, c| cmd_check_flat(p, c)),
        Command::Extend { common, eval } => run_inputs(&common, "extend", |p, c| cmd_extend(p, c, &eval)),
        Command::Atoms(c) => run_inputs(&c, "atoms", |p, c| cmd_atoms(p, c)),
        Command::Represent(c) => run_inputs(&c, "represent", |p, c| cmd_represent(p, c)),
        Command::Verify(c) => run_inputs(&c, "verify", |p, c| cmd_verify(p, c)),
    }
}

fn report_error(e: &Error, input: Option<&Path>) -> i32 {
    let code = e.exit_code();
    let mut obj = json!({"error": e.code(), "message": e.to_string(), "exit_code": code});
    if let Some(p) = input {
        obj["input"] = json!(p.display().to_string());
    }
    eprintln!("{obj}");
    code
}

fn output_path(common: &Common, input: &Path, command: &str) -> Option<PathBuf> {
    let out = common.output.as_ref()?;
    if common.inputs.len() == 1 {
        return Some(out.clone());
    }
    let stem = input.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "input".into());
    Some(out.join(format!("{stem}.{command}.json")))
}

fn run_inputs<F>(common: &Common, command: &str, f: F) -> i32
where
    F: Fn(&Path, &Common) -> std::result::Result<ResultReport, (Error, Option<ResultReport>)> + Sync,
{
    if common.inputs.len() > 1 {
        if let Some(dir) = &common.output {
            if let Err(e) = std::fs::create_dir_all(dir) {
                return report_error(&Error::from(e), None);
            }
        }
    }
    let process = |input: &PathBuf| -> (i32, Option<String>) {
        info!("{command}: {}", input.display());
        let (mut report, err) = match f(input, common) {
            Ok(r) => (Some(r), None),
            Err((e, r)) => (r, Some(e)),
        };
        if let (Some(r), Some(e)) = (report.as_mut(), err.as_ref()) {
            r.section("error", &json!({"code": e.code(), "message": e.to_string()}));
            r.set_status(e.code(), e.exit_code());
        }
        let mut code = report.as_ref().map_or(0, |r| r.exit_code);
        let mut stdout = None;
        if let Some(r) = &report {
            match output_path(common, input, command) {
                Some(path) => {
                    if let Err(e) = io::write_report(r, &path) {
                        code = code.max(report_error(&e, Some(input)));
                    }
                }
                None => stdout = Some(r.to_json()),
            }
            if r.exit_code != 0 && err.is_none() {
                eprintln!(
                    "{}",
                    json!({"error": r.status, "message": r.sections.get("failures").cloned().unwrap_or_default(), "exit_code": r.exit_code, "input": input.display().to_string()})
                );
            }
        }
        if let Some(e) = err {
            code = code.max(report_error(&e, Some(input)));
        }
        (code, stdout)
    };
    let jobs = common.jobs.max(1);
    let results: Vec<(i32, Option<String>)> = if jobs == 1 || common.inputs.len() == 1 {
        common.inputs.iter().map(process).collect()
    } else {
        match rayon::ThreadPoolBuilder::new().num_threads(jobs).build() {
            Ok(pool) => pool.install(|| common.inputs.par_iter().map(process).collect()),
            Err(e) => return report_error(&Error::InvalidInput(e.to_string()), None),
        }
    };
    let mut code = 0;
    for (c, out) in results {
        if let Some(s) = out {
            print!("{s}");
        }
        code = code.max(c);
    }
    code
}

type CmdResult = std::result::Result<ResultReport, (Error, Option<ResultReport>)>;

fn load(path: &Path, common: &Common) -> Result<Problem> {
    let mut p = io::load_problem(path)?;
    if let Some(t) = common.tol_rank {
        if !(t > 0.0 && t < 1.0) {
            return Err(Error::Validation { path: "--tol-rank".into(), message: "must lie in (0, 1)".into() });
        }
        p.tol.rank = Some(t);
    }
    Ok(p)
}

fn start(path: &Path, common: &Common, command: &str) -> std::result::Result<(Problem, ResultReport), (Error, Option<ResultReport>)> {
    let p = load(path, common).map_err(|e| (e, None))?;
    let mut report = ResultReport::new(command, common.seed, Some(path));
    report.section(
        "problem",
        &json!({
            "kind": p.pres.kind().label(),
            "generators": p.pres.gens().names(),
            "delta": p.pres.delta(),
            "m": p.m,
            "dim_b": p.chain.b_size(),
            "dim_c": p.chain.dim(),
            "tolerances": p.tol,
        }),
    );
    let hyp = check_hypotheses(&p.chain, &p.pres).map_err(|e| (e, None))?;
    report.section("hypotheses", &hyp);
    if !hyp.all_passed() {
        let names: Vec<&str> = hyp.failures().iter().map(|c| c.name.as_str()).collect();
        report.section("failures", &names);
        report.set_status("hypothesis_failure", 3);
    }
    Ok((p, report))
}

fn cmd_validate(path: &Path, common: &Common) -> CmdResult {
    let (p, mut report) = start(path, common, "validate")?;
    let table = ProductTable::for_chain(&p.pres, &p.chain).map_err(|e| (e, None))?;
    let missing: Vec<String> = table
        .support()
        .iter()
        .filter(|w| p.functional.get(w).is_none())
        .map(|w| p.pres.gens().format_word(w))
        .collect();
    report.section("moments", &json!({"given": p.functional.values().len(), "required": table.support().len()}));
    if let Some(first) = missing.first() {
        return Err((Error::MissingMoment(first.clone()), None));
    }
    Ok(report)
}

struct Flat {
    problem: Problem,
    report: ResultReport,
    table: ProductTable,
    hankel: crate::hankel::HankelMatrix,
    cert: crate::hankel::FlatnessCertificate,
}

fn flatness(path: &Path, common: &Common, command: &str) -> std::result::Result<Flat, (Error, Option<ResultReport>)> {
    let (p, mut report) = start(path, common, command)?;
    let table = ProductTable::for_chain(&p.pres, &p.chain).map_err(|e| (e, None))?;
    let hankel = build_hankel_with(&table, p.chain.b_size(), &p.functional, &p.pres).map_err(|e| (e, None))?;
    let cert = is_flat(&hankel, &p.tol);
    report.section("flatness", &cert);
    report.section(
        "hankel",
        &json!({"dim": hankel.dim(), "b_size": hankel.b_size, "hermitian_deviation": hankel.hermitian_deviation}),
    );
    if hankel.dim() <= 64 {
        report.matrix("hankel", &hankel.g);
    }
    if !cert.is_flat {
        report.section("failures", &json!({"rank_c": cert.rank_c, "rank_b": cert.rank_b, "rank_gap": cert.rank_gap()}));
        report.set_status("not_flat", 2);
    }
    Ok(Flat { problem: p, report, table, hankel, cert })
}

fn cmd_check_flat(path: &Path, common: &Common) -> CmdResult {
    let Flat { mut report, hankel, cert, .. } = flatness(path, common, "check-flat")?;
    if cert.is_flat {
        let w = shmuljan_factor(&hankel, &cert).map_err(|e| (e, Some(report.clone())))?;
        report.section("shmuljan", &w);
        if w.w.len() <= 64 * 64 {
            report.matrix("shmuljan_w", &w.w);
        }
    }
    Ok(report)
}

fn extended(path: &Path, common: &Common, command: &str) -> std::result::Result<(Problem, ExtensionResult, ResultReport), (Error, Option<ResultReport>)> {
    let flat = flatness(path, common, command)?;
    let Flat { problem: p, mut report, table, hankel, cert } = flat;
    if !cert.is_flat {
        let e = Error::NotFlat { rank_c: cert.rank_c, rank_b: cert.rank_b };
        return Err((e, Some(report)));
    }
    let ext = ExtensionResult::build(&p.pres, &p.chain, &table, &p.functional, hankel, cert, PivotOrder::Greedy)
        .map_err(|e| {
            let mut r = report.clone();
            r.set_status("certificate_failure", e.exit_code());
            (e, Some(r))
        })?;
    let gens = p.pres.gens();
    let bprime: Vec<String> = ext.bprime_elements().iter().map(|b| format_poly(&p.pres, b)).collect();
    report.section("bprime", &json!({"columns": ext.prime().columns, "elements": bprime, "gram_condition": ext.prime().gram_condition}));
    report.section("certificates", ext.certificates());
    let kgens: Vec<_> = ext.kernel_generators().iter().map(|k| io::poly_terms(&p.pres, k)).collect();
    report.section("kernel_generators", &kgens);
    report.matrix("gram", ext.gram());
    for (i, x) in ext.ops().x.iter().enumerate() {
        report.matrix(&format!("X_{}", gens.names()[i]), x);
    }
    let failures = certificate_failures(&ext, &p);
    if !failures.is_empty() {
        report.section("failures", &failures);
        report.set_status("certificate_failure", 3);
    }
    Ok((p, ext, report))
}

fn format_poly(pres: &Presentation, p: &NcPoly) -> String {
    let parts: Vec<String> = p
        .terms()
        .map(|(w, c)| {
            let word = pres.gens().format_word(w);
            if *c == Complex64::new(1.0, 0.0) {
                word
            } else {
                format!("({}{:+}i)*{word}", c.re, c.im)
            }
        })
        .collect();
    if parts.is_empty() {
        "0".into()
    } else {
        parts.join(" + ")
    }
}

/// Certificate checks at the problem's residual tolerance.
pub fn certificate_failures(ext: &ExtensionResult, p: &Problem) -> Vec<String> {
    let c = ext.certificates();
    let tol = p.tol.residual;
    let scale = c.moment_scale.max(1.0);
    let op_scale = ext.ops().x.iter().map(|m| m.norm()).fold(1.0, f64::max);
    let mut out = Vec::new();
    let mut check = |name: &str, value: f64, bound: f64| {
        if !(value <= bound) {
            out.push(format!("{name}: {value:.3e} > {bound:.3e}"));
        }
    };
    check("agreement_residual", c.agreement_residual, tol * scale);
    check("adjoint_residual", c.adjoint_residual, tol);
    check("relation_residual", c.relation_residual, tol * op_scale * op_scale);
    check("projection_identity_residual", c.projection_identity_residual, tol);
    check("projection_kernel_residual", c.projection_kernel_residual, tol * c.gram_condition.max(1.0));
    out
}

fn cmd_extend(path: &Path, common: &Common, eval: &[String]) -> CmdResult {
    let (p, ext, mut report) = extended(path, common, "extend")?;
    let mut values = Vec::new();
    for s in eval {
        let w = p.pres.gens().parse_word(s).map_err(|e| (e, Some(report.clone())))?;
        let v = ext.extended_value(&NcPoly::word(w));
        values.push(json!({"word": s, "re": v.re, "im": v.im}));
    }
    if !values.is_empty() {
        report.section("evaluations", &values);
    }
    Ok(report)
}

fn check_residual(report: &mut ResultReport, name: &str, value: f64, bound: f64) {
    if !(value <= bound) {
        report.section("failures", &[format!("{name}: {value:.3e} > {bound:.3e}")]);
        report.set_status("certificate_failure", 3);
    }
}

fn cmd_atoms(path: &Path, common: &Common) -> CmdResult {
    let (p, ext, mut report) = extended(path, common, "atoms")?;
    let bound = SOLVER_RESIDUAL_TOL * p.functional.max_abs().max(1.0);
    let fail = |e: Error, r: &ResultReport| {
        let mut r = r.clone();
        r.set_status("certificate_failure", e.exit_code());
        (e, Some(r))
    };
    match p.pres.kind() {
        AlgebraKind::Cylinder { .. } => {
            let cyl = solve_cylinder(&ext, &p.functional, common.seed).map_err(|e| fail(e, &report))?;
            report.section("measure", &cyl);
            check_residual(&mut report, "reconstruction_residual", cyl.measure.reconstruction_residual, bound);
        }
        _ => {
            let m = extract_atoms_commutative(&ext, &p.functional, common.seed).map_err(|e| fail(e, &report))?;
            report.section("measure", &m);
            check_residual(&mut report, "reconstruction_residual", m.reconstruction_residual, bound);
        }
    }
    Ok(report)
}

#[derive(Serialize)]
struct VectorJson {
    point: Vec<f64>,
    u: Vec<[f64; 2]>,
}

fn cmd_represent(path: &Path, common: &Common) -> CmdResult {
    let (p, ext, mut report) = extended(path, common, "represent")?;
    let bound = SOLVER_RESIDUAL_TOL * p.functional.max_abs().max(1.0);
    let fail = |e: Error, r: &ResultReport| {
        let mut r = r.clone();
        r.set_status("certificate_failure", e.exit_code());
        (e, Some(r))
    };
    match p.pres.kind() {
        AlgebraKind::MatrixPoly { .. } => {
            let dec = solve_matrix_poly(&ext, &p.functional, common.seed).map_err(|e| fail(e, &report))?;
            let blocks: Vec<VectorJson> = dec
                .points
                .iter()
                .zip(&dec.vectors)
                .map(|(t, u)| VectorJson { point: t.clone(), u: u.iter().map(|z| [z.re, z.im]).collect() })
                .collect();
            report.section("decomposition", &dec);
            report.section("blocks", &blocks);
            check_residual(&mut report, "decomposition_residual", dec.residual, bound);
        }
        AlgebraKind::Lie { .. } => {
            let pkg = solve_enveloping(&ext, &p.functional).map_err(|e| fail(e, &report))?;
            report.section("representation", &pkg);
            report.section("cyclic_vector", &pkg.v.iter().map(|z| [z.re, z.im]).collect::<Vec<_>>());
            for (j, h) in pkg.h.iter().enumerate() {
                report.matrix(&format!("H_{}", p.pres.gens().names()[j]), h);
            }
            let scale = p.functional.max_abs().max(1.0);
            check_residual(&mut report, "commutator_residual", pkg.commutator_residual, p.tol.residual * scale);
            check_residual(&mut report, "envelope_residual", pkg.envelope_residual, p.tol.residual * scale);
        }
        _ => {
            report.section("representation", &json!({"dim": ext.dim(), "basis": "B' with the Gram form of L"}));
        }
    }
    Ok(report)
}

fn cmd_verify(path: &Path, common: &Common) -> CmdResult {
    let (p, ext, mut report) = extended(path, common, "verify")?;
    let v = verify::run_all(&ext, &p.functional, &p.tol, common.seed).map_err(|e| (e, Some(report.clone())))?;
    report.section("verify", &v);
    if !v.all_passed() {
        let failed: Vec<&str> = v.suites.iter().filter(|s| !s.passed).map(|s| s.name.as_str()).collect();
        report.section("failures", &failed);
        report.set_status("certificate_failure", 3);
    }
    Ok(report)
}

fn algebra_spec(pres: &Presentation, preset: Option<&str>) -> AlgebraSpec {
    let mut spec = AlgebraSpec { kind: pres.kind().label().into(), d: None, n: None, structure_constants: None, custom_relations: None };
    match pres.kind() {
        AlgebraKind::Commutative { vars } => spec.d = Some(*vars),
        AlgebraKind::Cylinder { d } => spec.d = Some(*d),
        AlgebraKind::MatrixPoly { n, d } => {
            spec.n = Some(*n);
            spec.d = Some(*d);
        }
        AlgebraKind::Lie { structure } => {
            spec.d = Some(structure.dim());
            spec.structure_constants = Some(match preset {
                Some(name) => StructureSpec::Preset(name.into()),
                None => StructureSpec::Entries(
                    structure.upper_entries().into_iter().map(|(j, k, l, v)| (j + 1, k + 1, l + 1, v)).collect(),
                ),
            });
        }
        AlgebraKind::FreeWithRelations { .. } => {}
    }
    spec
}

fn gen(args: &GenArgs) -> Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
    let max_m = args.m.unwrap_or(args.max_m);
    let (pres, rep, preset, caps): (Presentation, VectorRep, Option<&str>, Vec<Option<usize>>) = match (args.kind, args.rep) {
        (GenKind::Lie, GenRep::Su2SpinHalf) => {
            let mut v = nalgebra::DVector::zeros(2);
            v[0] = Complex64::new(1.0, 0.0);
            (Presentation::lie(StructureConstants::su2())?, VectorRep { matrices: su2_spin(1), v }, Some("su2"), vec![None])
        }
        (GenKind::Lie, GenRep::HeisenbergTrivial) => {
            let rep = VectorRep {
                matrices: vec![nalgebra::DMatrix::zeros(1, 1); 3],
                v: nalgebra::DVector::from_element(1, Complex64::new(1.0, 0.0)),
            };
            (Presentation::lie(StructureConstants::heisenberg())?, rep, Some("heisenberg"), vec![None])
        }
        (kind, rep) => {
            let ik = match (kind, rep) {
                (GenKind::Commutative, GenRep::Random) => InstanceKind::Commutative { d: args.d.unwrap_or(1), atoms: args.r.unwrap_or(2) },
                (GenKind::Cylinder, GenRep::Random) => InstanceKind::Cylinder {
                    d: args.d.unwrap_or(1),
                    lines: args.lines.unwrap_or(2),
                    per_line: args.per_line.unwrap_or(2),
                },
                (GenKind::MatrixPoly, GenRep::Random) => {
                    InstanceKind::MatrixPoly { n: args.n.unwrap_or(2), d: args.d.unwrap_or(1), r: args.r.unwrap_or(2) }
                }
                (GenKind::Lie, GenRep::Su2Random) | (GenKind::Lie, GenRep::Random) => InstanceKind::Su2 { max_dim: args.r.unwrap_or(4) },
                (GenKind::Lie, GenRep::HeisenbergRandom) => InstanceKind::Heisenberg { atoms: args.r.unwrap_or(2) },
                (k, r) => return Err(Error::InvalidInput(format!("--rep {r:?} does not apply to --kind {k:?}"))),
            };
            let inst = random_instance(&ik, &mut rng, args.max_m)?;
            let preset = match ik {
                InstanceKind::Su2 { .. } => Some("su2"),
                InstanceKind::Heisenberg { .. } => Some("heisenberg"),
                _ => None,
            };
            let caps = if matches!(ik, InstanceKind::Cylinder { .. }) { vec![inst.y_cap] } else { vec![None] };
            (inst.pres, inst.rep, preset, caps)
        }
    };
    let (_chain, mut functional, m, y_cap) = match args.m {
        Some(m) => {
            let y_cap = args.y_cap.or(caps[0]).or(if matches!(pres.kind(), AlgebraKind::Cylinder { .. }) { Some(1) } else { None });
            let chain = build_truncated_basis(&pres, m, &TruncationOptions { y_cap, ..Default::default() })?;
            let f = vector_functional(&pres, &rep, &chain)?;
            (chain, f, m, y_cap)
        }
        None => {
            let caps = if let Some(c) = args.y_cap { vec![Some(c)] } else { caps };
            smallest_flat_instance(&pres, &rep, max_m, &caps)?
                .ok_or_else(|| Error::InvalidInput(format!("no flat truncation with m <= {max_m}")))?
        }
    };
    if args.zero {
        functional = TruncatedFunctional::new(functional.values().keys().map(|w| (w.clone(), Complex64::new(0.0, 0.0))).collect());
    }
    let problem = io::problem_from_functional(
        algebra_spec(&pres, preset),
        TruncationSpec { m, y_cap, custom_basis: None },
        &pres,
        &functional,
        None,
    );
    io::write_problem(&problem, &args.output)?;
    info!("wrote {} moments to {}", problem.moments.len(), args.output.display());
    Ok(())
}

/// Matrices of a report back as complex matrices.
pub fn report_matrix(report: &ResultReport, name: &str) -> Option<nalgebra::DMatrix<Complex64>> {
    report.matrices.get(name).map(MatrixJson::to_matrix)
}
