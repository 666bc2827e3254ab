//! Problem files and result reports.

use std::collections::BTreeMap;
use std::path::Path;

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::algebra::{AlgebraKind, GeneratorSet, NcPoly, Presentation, RewriteRule, StructureConstants, Word};
use crate::error::{Error, Result};
use crate::filtration::{build_truncated_basis, BasisChain, TruncationOptions};
use crate::hankel::{Tolerances, TruncatedFunctional};

/// Values of `w` and `w*` must be conjugate to this relative accuracy.
pub const HERMITIAN_PAIR_TOL: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemFile {
    pub algebra: AlgebraSpec,
    pub truncation: TruncationSpec,
    pub moments: Vec<MomentEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tolerances: Option<ToleranceSpec>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AlgebraSpec {
    /// `commutative`, `cylinder`, `matrix_poly`, `lie` or `free`.
    pub kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub d: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub structure_constants: Option<StructureSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub custom_relations: Option<CustomRelations>,
}

/// A named preset or 1-based upper entries `[j, k, l, c_jkl]` with `j < k`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum StructureSpec {
    Preset(String),
    Entries(Vec<(usize, usize, usize, f64)>),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CustomRelations {
    pub generators: Vec<String>,
    /// Name of each generator's adjoint; defaults to the generator itself.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub adjoints: Option<Vec<String>>,
    pub rules: Vec<RuleSpec>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RuleSpec {
    pub lhs: String,
    pub rhs: Vec<TermSpec>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TermSpec {
    pub word: String,
    pub re: f64,
    #[serde(default)]
    pub im: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TruncationSpec {
    pub m: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub y_cap: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub custom_basis: Option<CustomBasis>,
}

/// Monomial chain: `b` spans `B`, `b` followed by `c` spans `C`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CustomBasis {
    pub b: Vec<String>,
    pub c: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MomentEntry {
    pub word: String,
    pub re: f64,
    #[serde(default)]
    pub im: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ToleranceSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rank: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub psd: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub residual: Option<f64>,
}

fn invalid(path: impl Into<String>, message: impl Into<String>) -> Error {
    Error::Validation { path: path.into(), message: message.into() }
}

pub fn parse_problem_str(s: &str) -> Result<ProblemFile> {
    serde_json::from_str(s).map_err(|e| Error::Parse(e.to_string()))
}

pub fn parse_problem(path: &Path) -> Result<ProblemFile> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    parse_problem_str(&text)
}

pub fn problem_to_string(p: &ProblemFile) -> String {
    let mut s = serde_json::to_string_pretty(p).expect("problem files serialize");
    s.push('\n');
    s
}

pub fn write_problem(p: &ProblemFile, path: &Path) -> Result<()> {
    std::fs::write(path, problem_to_string(p))?;
    Ok(())
}

/// A validated problem ready for the pipeline.
#[derive(Clone, Debug)]
pub struct Problem {
    pub pres: Presentation,
    pub chain: BasisChain,
    pub functional: TruncatedFunctional,
    pub tol: Tolerances,
    pub m: usize,
}

fn require(v: Option<usize>, path: &str) -> Result<usize> {
    v.ok_or_else(|| invalid(path, "required for this algebra kind"))
}

pub fn build_presentation(spec: &AlgebraSpec) -> Result<Presentation> {
    let at = |field: &str| format!("algebra.{field}");
    let wrap = |field: &str, e: Error| match e {
        Error::Validation { .. } => e,
        other => invalid(at(field), other.to_string()),
    };
    match spec.kind.as_str() {
        "commutative" => Presentation::commutative(require(spec.d, "algebra.d")?).map_err(|e| wrap("d", e)),
        "cylinder" => Presentation::cylinder(require(spec.d, "algebra.d")?).map_err(|e| wrap("d", e)),
        "matrix_poly" => {
            let n = require(spec.n, "algebra.n")?;
            Presentation::matrix_poly(n, spec.d.unwrap_or(0)).map_err(|e| wrap("n", e))
        }
        "lie" => {
            let sc = match &spec.structure_constants {
                None => return Err(invalid(at("structure_constants"), "required for lie algebras")),
                Some(StructureSpec::Preset(name)) => match name.as_str() {
                    "su2" => StructureConstants::su2(),
                    "heisenberg" => StructureConstants::heisenberg(),
                    other => return Err(invalid(at("structure_constants"), format!("unknown preset {other:?}"))),
                },
                Some(StructureSpec::Entries(entries)) => {
                    let d = require(spec.d, "algebra.d")?;
                    let mut zero_based = Vec::with_capacity(entries.len());
                    for (i, &(j, k, l, v)) in entries.iter().enumerate() {
                        if j == 0 || k == 0 || l == 0 || j > d || k > d || l > d {
                            return Err(invalid(format!("algebra.structure_constants[{i}]"), "indices must lie in 1..=d"));
                        }
                        zero_based.push((j - 1, k - 1, l - 1, v));
                    }
                    StructureConstants::from_upper(d, &zero_based).map_err(|e| wrap("structure_constants", e))?
                }
            };
            if let Some(d) = spec.d {
                if d != sc.dim() {
                    return Err(invalid(at("d"), format!("structure constants have dimension {}", sc.dim())));
                }
            }
            Presentation::lie(sc).map_err(|e| wrap("structure_constants", e))
        }
        "free" => {
            let cr = spec
                .custom_relations
                .as_ref()
                .ok_or_else(|| invalid(at("custom_relations"), "required for free algebras"))?;
            let names = cr.generators.clone();
            let inv: Vec<u16> = match &cr.adjoints {
                None => (0..names.len() as u16).collect(),
                Some(adj) => {
                    if adj.len() != names.len() {
                        return Err(invalid(at("custom_relations.adjoints"), "one adjoint per generator"));
                    }
                    let mut out = Vec::with_capacity(adj.len());
                    for (i, a) in adj.iter().enumerate() {
                        let idx = names
                            .iter()
                            .position(|n| n == a)
                            .ok_or_else(|| invalid(format!("algebra.custom_relations.adjoints[{i}]"), format!("unknown generator {a:?}")))?;
                        out.push(idx as u16);
                    }
                    out
                }
            };
            let scratch = GeneratorSet::new(names.clone(), inv.clone(), AlgebraKind::FreeWithRelations { rules: Vec::new() })
                .map_err(|e| wrap("custom_relations.generators", e))?;
            let mut rules = Vec::with_capacity(cr.rules.len());
            for (i, r) in cr.rules.iter().enumerate() {
                let path = format!("algebra.custom_relations.rules[{i}]");
                let lhs = scratch.parse_word(&r.lhs).map_err(|e| invalid(format!("{path}.lhs"), e.to_string()))?;
                let mut rhs = NcPoly::zero();
                for (t, term) in r.rhs.iter().enumerate() {
                    let w = scratch
                        .parse_word(&term.word)
                        .map_err(|e| invalid(format!("{path}.rhs[{t}].word"), e.to_string()))?;
                    rhs.add_term(w, Complex64::new(term.re, term.im));
                }
                rules.push(RewriteRule { lhs, rhs });
            }
            Presentation::free_with_relations(names, inv, rules).map_err(|e| wrap("custom_relations.rules", e))
        }
        other => Err(invalid(at("kind"), format!("unknown kind {other:?}"))),
    }
}

fn parse_normal_word(pres: &Presentation, s: &str, path: &str) -> Result<Word> {
    let w = pres.gens().parse_word(s).map_err(|e| invalid(path, e.to_string()))?;
    let nf = pres.normal_form(&NcPoly::word(w)).map_err(|e| invalid(path, e.to_string()))?;
    let mut terms = nf.terms();
    match (terms.next(), terms.next()) {
        (Some((w, c)), None) if (c - Complex64::new(1.0, 0.0)).norm() < 1e-12 => Ok(w.clone()),
        _ => Err(invalid(path, format!("{s:?} does not reduce to a single basis monomial"))),
    }
}

pub fn build_tolerances(spec: Option<&ToleranceSpec>) -> Result<Tolerances> {
    let mut tol = Tolerances::default();
    let Some(t) = spec else { return Ok(tol) };
    if let Some(r) = t.rank {
        if !(r > 0.0 && r < 1.0) {
            return Err(invalid("tolerances.rank", "must lie in (0, 1)"));
        }
        tol.rank = Some(r);
    }
    if let Some(p) = t.psd {
        if !(p >= 0.0 && p.is_finite()) {
            return Err(invalid("tolerances.psd", "must be a finite non-negative number"));
        }
        tol.psd = p;
    }
    if let Some(r) = t.residual {
        if !(r > 0.0 && r.is_finite()) {
            return Err(invalid("tolerances.residual", "must be a finite positive number"));
        }
        tol.residual = r;
    }
    Ok(tol)
}

/// Strict validation of a parsed problem file.
pub fn validate_problem(file: &ProblemFile) -> Result<Problem> {
    let pres = build_presentation(&file.algebra)?;
    let tol = build_tolerances(file.tolerances.as_ref())?;
    let t = &file.truncation;
    let chain = match &t.custom_basis {
        Some(cb) => {
            let mut elements = Vec::with_capacity(cb.b.len() + cb.c.len());
            for (i, s) in cb.b.iter().enumerate() {
                elements.push(NcPoly::word(parse_normal_word(&pres, s, &format!("truncation.custom_basis.b[{i}]"))?));
            }
            for (i, s) in cb.c.iter().enumerate() {
                elements.push(NcPoly::word(parse_normal_word(&pres, s, &format!("truncation.custom_basis.c[{i}]"))?));
            }
            if elements.first().map(|e| *e != NcPoly::one()).unwrap_or(true) {
                return Err(invalid("truncation.custom_basis.b[0]", "the first basis element must be 1"));
            }
            BasisChain::from_elements(&pres, elements, cb.b.len(), None)
                .map_err(|e| invalid("truncation.custom_basis", e.to_string()))?
        }
        None => {
            let opts = TruncationOptions { y_cap: t.y_cap, ..Default::default() };
            build_truncated_basis(&pres, t.m, &opts).map_err(|e| match e {
                Error::DimensionOverflow { .. } => e,
                other => invalid("truncation", other.to_string()),
            })?
        }
    };
    let mut values: BTreeMap<Word, Complex64> = BTreeMap::new();
    let mut origin: BTreeMap<Word, usize> = BTreeMap::new();
    for (i, entry) in file.moments.iter().enumerate() {
        let path = format!("moments[{i}]");
        if !entry.re.is_finite() || !entry.im.is_finite() {
            return Err(invalid(path, "moment values must be finite"));
        }
        let w = parse_normal_word(&pres, &entry.word, &format!("{path}.word"))?;
        let v = Complex64::new(entry.re, entry.im);
        if let Some(&prev) = origin.get(&w) {
            if (values[&w] - v).norm() > HERMITIAN_PAIR_TOL * v.norm().max(1.0) {
                return Err(invalid(
                    path,
                    format!("{:?} duplicates {:?} with a different value", entry.word, file.moments[prev].word),
                ));
            }
            continue;
        }
        origin.insert(w.clone(), i);
        values.insert(w, v);
    }
    let functional = TruncatedFunctional::new(values);
    check_hermitian_pairs(&pres, &functional, file)?;
    Ok(Problem { pres, chain, functional, tol, m: t.m })
}

fn check_hermitian_pairs(pres: &Presentation, functional: &TruncatedFunctional, file: &ProblemFile) -> Result<()> {
    let mut red = pres.reducer();
    for (w, v) in functional.values() {
        let adj = red.reduce(&pres.star(&NcPoly::word(w.clone())))?;
        let Ok(val) = functional.eval(&adj, pres) else { continue };
        if (val - v.conj()).norm() > HERMITIAN_PAIR_TOL * v.norm().max(1.0) {
            let name = pres.gens().format_word(w);
            let adj_name: Vec<String> = adj.terms().map(|(u, _)| pres.gens().format_word(u)).collect();
            let idx = file.moments.iter().position(|m| pres.gens().parse_word(&m.word).ok().as_ref() == Some(w));
            let path = idx.map_or("moments".to_string(), |i| format!("moments[{i}]"));
            return Err(invalid(
                path,
                format!("values for {name} and its adjoint {} are not conjugate", adj_name.join(" + ")),
            ));
        }
    }
    Ok(())
}

pub fn load_problem(path: &Path) -> Result<Problem> {
    validate_problem(&parse_problem(path)?)
}

/// Problem file describing a functional over a presentation.
pub fn problem_from_functional(
    algebra: AlgebraSpec,
    truncation: TruncationSpec,
    pres: &Presentation,
    functional: &TruncatedFunctional,
    tolerances: Option<ToleranceSpec>,
) -> ProblemFile {
    let moments = functional
        .values()
        .iter()
        .map(|(w, v)| MomentEntry { word: pres.gens().format_word(w), re: v.re, im: v.im })
        .collect();
    ProblemFile { algebra, truncation, moments, tolerances }
}

/// Row-major matrix with `[re, im]` entries.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MatrixJson {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<[f64; 2]>,
}

impl From<&DMatrix<Complex64>> for MatrixJson {
    fn from(m: &DMatrix<Complex64>) -> Self {
        let mut data = Vec::with_capacity(m.len());
        for r in 0..m.nrows() {
            for c in 0..m.ncols() {
                data.push([m[(r, c)].re, m[(r, c)].im]);
            }
        }
        MatrixJson { rows: m.nrows(), cols: m.ncols(), data }
    }
}

impl MatrixJson {
    pub fn to_matrix(&self) -> DMatrix<Complex64> {
        DMatrix::from_fn(self.rows, self.cols, |r, c| {
            let [re, im] = self.data[r * self.cols + c];
            Complex64::new(re, im)
        })
    }
}

/// Polynomial as a list of terms.
pub fn poly_terms(pres: &Presentation, p: &NcPoly) -> Vec<TermSpec> {
    p.terms()
        .map(|(w, c)| TermSpec { word: pres.gens().format_word(w), re: c.re, im: c.im })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultReport {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub input: Option<String>,
    /// `ok`, `not_flat`, `hypothesis_failure` or `certificate_failure`.
    pub status: String,
    pub exit_code: i32,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub sections: BTreeMap<String, serde_json::Value>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub matrices: BTreeMap<String, MatrixJson>,
}

impl ResultReport {
    pub fn new(command: &str, seed: u64, input: Option<&Path>) -> Self {
        ResultReport {
            tool: env!("CARGO_PKG_NAME").into(),
            version: env!("CARGO_PKG_VERSION").into(),
            command: command.into(),
            seed,
            input: input.map(|p| p.display().to_string()),
            status: "ok".into(),
            exit_code: 0,
            sections: BTreeMap::new(),
            matrices: BTreeMap::new(),
        }
    }

    pub fn section<T: Serialize>(&mut self, name: &str, value: &T) {
        let v = serde_json::to_value(value).expect("report sections serialize");
        self.sections.insert(name.into(), v);
    }

    pub fn matrix(&mut self, name: &str, m: &DMatrix<Complex64>) {
        self.matrices.insert(name.into(), MatrixJson::from(m));
    }

    pub fn set_status(&mut self, status: &str, exit_code: i32) {
        if exit_code > self.exit_code {
            self.status = status.into();
            self.exit_code = exit_code;
        }
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("reports serialize");
        s.push('\n');
        s
    }
}

pub fn write_report(report: &ResultReport, path: &Path) -> Result<()> {
    std::fs::write(path, report.to_json())?;
    Ok(())
}

pub fn read_report(path: &Path) -> Result<ResultReport> {
    let text = std::fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| Error::Parse(e.to_string()))
}
