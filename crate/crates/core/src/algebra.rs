//! Words, noncommutative polynomials and normal forms modulo the defining
//! ideal of the supported algebra families.
//!
//! Every algebra is presented by hermitian-compatible generators `a_i` with
//! `a_i* = a_inv(i)` and a relation set `S`. Reduction to normal form is
//! performed by a kind-specific confluent rewrite system:
//!
//! * commutative and cylinder: letters are sorted;
//! * matrix polynomials: `x` letters are sorted and matrix units are fused
//!   with `e_ij e_kl = δ_jk e_il`, the last diagonal unit being eliminated by
//!   `e_nn = 1 - Σ_{k<n} e_kk`;
//! * Lie: out-of-order adjacent pairs are straightened with
//!   `x_j x_k -> x_k x_j + i Σ_l c_jkl x_l` for `j > k` (PBW order);
//! * free with relations: user rules `lhs -> rhs`, applied leftmost first.

use std::cmp::Ordering;
use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;

use num_complex::Complex64;
use smallvec::SmallVec;

use crate::error::{Error, Result};

/// Generator index.
pub type Letter = u16;

pub const DEFAULT_STEP_BUDGET: usize = 1_000_000;

const MAX_REWRITE_DEPTH: usize = 2_000;

/// A word in the free unital algebra; the empty word is the unit.
///
/// Words are ordered graded-lexicographically: shorter words first, then
/// lexicographically by generator index.
#[derive(Clone, PartialEq, Eq, Hash, Default)]
pub struct Word(SmallVec<[Letter; 8]>);

impl Word {
    pub fn unit() -> Self {
        Word(SmallVec::new())
    }

    pub fn from_letters(letters: &[Letter]) -> Self {
        Word(SmallVec::from_slice(letters))
    }

    pub fn letter(l: Letter) -> Self {
        Word(SmallVec::from_slice(&[l]))
    }

    pub fn letters(&self) -> &[Letter] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn is_unit(&self) -> bool {
        self.0.is_empty()
    }

    pub fn concat(&self, other: &Word) -> Word {
        let mut v = self.0.clone();
        v.extend_from_slice(&other.0);
        Word(v)
    }

    fn splice(&self, start: usize, end: usize, middle: &[Letter]) -> Word {
        let mut v: SmallVec<[Letter; 8]> = SmallVec::with_capacity(self.len() - (end - start) + middle.len());
        v.extend_from_slice(&self.0[..start]);
        v.extend_from_slice(middle);
        v.extend_from_slice(&self.0[end..]);
        Word(v)
    }
}

impl Ord for Word {
    fn cmp(&self, other: &Self) -> Ordering {
        self.len()
            .cmp(&other.len())
            .then_with(|| self.0.as_slice().cmp(other.0.as_slice()))
    }
}

impl PartialOrd for Word {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl fmt::Debug for Word {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Word{:?}", self.0.as_slice())
    }
}

/// Element of the free algebra: a finite map word -> complex coefficient.
///
/// Exact zero coefficients are never stored.
#[derive(Clone, PartialEq, Default)]
pub struct NcPoly {
    terms: BTreeMap<Word, Complex64>,
}

impl NcPoly {
    pub fn zero() -> Self {
        NcPoly::default()
    }

    pub fn one() -> Self {
        NcPoly::monomial(Word::unit(), Complex64::new(1.0, 0.0))
    }

    pub fn monomial(w: Word, c: Complex64) -> Self {
        let mut terms = BTreeMap::new();
        if c != Complex64::new(0.0, 0.0) {
            terms.insert(w, c);
        }
        NcPoly { terms }
    }

    pub fn word(w: Word) -> Self {
        NcPoly::monomial(w, Complex64::new(1.0, 0.0))
    }

    pub fn generator(l: Letter) -> Self {
        NcPoly::word(Word::letter(l))
    }

    pub fn from_terms<I: IntoIterator<Item = (Word, Complex64)>>(it: I) -> Self {
        let mut p = NcPoly::zero();
        for (w, c) in it {
            p.add_term(w, c);
        }
        p
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn terms(&self) -> impl Iterator<Item = (&Word, &Complex64)> {
        self.terms.iter()
    }

    pub fn num_terms(&self) -> usize {
        self.terms.len()
    }

    pub fn coefficient(&self, w: &Word) -> Complex64 {
        self.terms.get(w).copied().unwrap_or_default()
    }

    /// Maximal word length, `None` for the zero polynomial.
    pub fn degree(&self) -> Option<usize> {
        self.terms.keys().map(Word::len).max()
    }

    pub fn max_abs_coefficient(&self) -> f64 {
        self.terms.values().map(|c| c.norm()).fold(0.0, f64::max)
    }

    pub fn add_term(&mut self, w: Word, c: Complex64) {
        if c == Complex64::new(0.0, 0.0) {
            return;
        }
        let entry = self.terms.entry(w);
        match entry {
            std::collections::btree_map::Entry::Vacant(v) => {
                v.insert(c);
            }
            std::collections::btree_map::Entry::Occupied(mut o) => {
                let s = *o.get() + c;
                if s == Complex64::new(0.0, 0.0) {
                    o.remove();
                } else {
                    *o.get_mut() = s;
                }
            }
        }
    }

    pub fn add_scaled(&mut self, other: &NcPoly, c: Complex64) {
        for (w, v) in &other.terms {
            self.add_term(w.clone(), v * c);
        }
    }

    pub fn add(&self, other: &NcPoly) -> NcPoly {
        let mut r = self.clone();
        r.add_scaled(other, Complex64::new(1.0, 0.0));
        r
    }

    pub fn sub(&self, other: &NcPoly) -> NcPoly {
        let mut r = self.clone();
        r.add_scaled(other, Complex64::new(-1.0, 0.0));
        r
    }

    pub fn scale(&self, c: Complex64) -> NcPoly {
        NcPoly::from_terms(self.terms.iter().map(|(w, v)| (w.clone(), v * c)))
    }

    /// Product in the free algebra (concatenation of words, no reduction).
    pub fn mul(&self, other: &NcPoly) -> NcPoly {
        let mut r = NcPoly::zero();
        for (w1, c1) in &self.terms {
            for (w2, c2) in &other.terms {
                r.add_term(w1.concat(w2), c1 * c2);
            }
        }
        r
    }

    /// Drops coefficients with modulus at most `tol`.
    pub fn prune(&mut self, tol: f64) {
        self.terms.retain(|_, c| c.norm() > tol);
    }

    /// Max-coefficient distance between two polynomials.
    pub fn distance(&self, other: &NcPoly) -> f64 {
        self.sub(other).max_abs_coefficient()
    }
}

impl fmt::Debug for NcPoly {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_map()
            .entries(self.terms.iter().map(|(w, c)| (w.letters().to_vec(), c)))
            .finish()
    }
}

/// Real structure constants `c_jkl` with `[y_j, y_k] = Σ_l c_jkl y_l`.
#[derive(Clone, Debug, PartialEq)]
pub struct StructureConstants {
    d: usize,
    c: Vec<f64>,
}

impl StructureConstants {
    pub fn zero(d: usize) -> Self {
        StructureConstants { d, c: vec![0.0; d * d * d] }
    }

    /// Builds constants from `(j, k, l, value)` entries (0-based) for `j < k`;
    /// the antisymmetric partner is filled in.
    pub fn from_upper(d: usize, entries: &[(usize, usize, usize, f64)]) -> Result<Self> {
        let mut s = StructureConstants::zero(d);
        for &(j, k, l, v) in entries {
            if j >= d || k >= d || l >= d {
                return Err(Error::InvalidInput(format!(
                    "structure constant index ({j},{k},{l}) out of range for d={d}"
                )));
            }
            if j == k {
                if v != 0.0 {
                    return Err(Error::InvalidInput(format!(
                        "structure constant c[{j}][{j}][{l}] must vanish"
                    )));
                }
                continue;
            }
            let (a, b, sign) = if j < k { (j, k, 1.0) } else { (k, j, -1.0) };
            let idx = s.index(a, b, l);
            if s.c[idx] != 0.0 && s.c[idx] != sign * v {
                return Err(Error::InvalidInput(format!(
                    "structure constants for ({j},{k},{l}) are not antisymmetric"
                )));
            }
            s.c[idx] = sign * v;
            let idx2 = s.index(b, a, l);
            s.c[idx2] = -sign * v;
        }
        s.validate()?;
        Ok(s)
    }

    /// su(2) with `c_123 = c_231 = c_312 = 1`.
    pub fn su2() -> Self {
        Self::from_upper(3, &[(0, 1, 2, 1.0), (1, 2, 0, 1.0), (0, 2, 1, -1.0)]).expect("su(2) constants are valid")
    }

    /// Three-dimensional Heisenberg algebra `[y_1, y_2] = y_3`.
    pub fn heisenberg() -> Self {
        Self::from_upper(3, &[(0, 1, 2, 1.0)]).expect("Heisenberg constants are valid")
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    fn index(&self, j: usize, k: usize, l: usize) -> usize {
        (j * self.d + k) * self.d + l
    }

    pub fn get(&self, j: usize, k: usize, l: usize) -> f64 {
        self.c[self.index(j, k, l)]
    }

    /// Antisymmetry and the Jacobi identity (the latter is needed for the
    /// PBW rewrite system to be confluent).
    pub fn validate(&self) -> Result<()> {
        let d = self.d;
        for j in 0..d {
            for k in 0..d {
                for l in 0..d {
                    let a = self.get(j, k, l);
                    if !a.is_finite() || (a + self.get(k, j, l)).abs() > 1e-12 {
                        return Err(Error::InvalidInput(format!(
                            "structure constants not antisymmetric at ({j},{k},{l})"
                        )));
                    }
                }
            }
        }
        for a in 0..d {
            for b in 0..d {
                for c in 0..d {
                    for m in 0..d {
                        let mut s = 0.0;
                        for l in 0..d {
                            s += self.get(a, b, l) * self.get(l, c, m)
                                + self.get(b, c, l) * self.get(l, a, m)
                                + self.get(c, a, l) * self.get(l, b, m);
                        }
                        if s.abs() > 1e-10 {
                            return Err(Error::InvalidInput(format!(
                                "structure constants violate the Jacobi identity at ({a},{b},{c})"
                            )));
                        }
                    }
                }
            }
        }
        Ok(())
    }

    /// Nonzero entries `(j, k, l, c_jkl)` with `j < k`.
    pub fn upper_entries(&self) -> Vec<(usize, usize, usize, f64)> {
        let mut out = Vec::new();
        for j in 0..self.d {
            for k in (j + 1)..self.d {
                for l in 0..self.d {
                    let v = self.get(j, k, l);
                    if v != 0.0 {
                        out.push((j, k, l, v));
                    }
                }
            }
        }
        out
    }
}

/// User rewrite rule `lhs -> rhs` for the free-with-relations kind.
#[derive(Clone, Debug, PartialEq)]
pub struct RewriteRule {
    pub lhs: Word,
    pub rhs: NcPoly,
}

#[derive(Clone, Debug, PartialEq)]
pub enum AlgebraKind {
    /// `C[x_1..x_vars]` with hermitian variables.
    Commutative { vars: usize },
    /// `C[x_1..x_d, y]`; `y` is the last generator.
    Cylinder { d: usize },
    /// `n x n` matrices over `C[x_1..x_d]`; generators `x_1..x_d` followed by
    /// the matrix units `e_ij` in row-major order.
    MatrixPoly { n: usize, d: usize },
    /// Enveloping algebra; generator `x_j` stands for the hermitian element `i y_j`.
    Lie { structure: StructureConstants },
    FreeWithRelations { rules: Vec<RewriteRule> },
}

impl AlgebraKind {
    pub fn label(&self) -> &'static str {
        match self {
            AlgebraKind::Commutative { .. } => "commutative",
            AlgebraKind::Cylinder { .. } => "cylinder",
            AlgebraKind::MatrixPoly { .. } => "matrix_poly",
            AlgebraKind::Lie { .. } => "lie",
            AlgebraKind::FreeWithRelations { .. } => "free",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GeneratorSet {
    names: Vec<String>,
    inv: Vec<Letter>,
    kind: AlgebraKind,
}

impl GeneratorSet {
    pub fn new(names: Vec<String>, inv: Vec<Letter>, kind: AlgebraKind) -> Result<Self> {
        if names.len() != inv.len() {
            return Err(Error::InvalidInput("involution table length differs from generator count".into()));
        }
        if names.len() > Letter::MAX as usize {
            return Err(Error::InvalidInput("too many generators".into()));
        }
        for (i, &j) in inv.iter().enumerate() {
            if j as usize >= inv.len() || inv[j as usize] as usize != i {
                return Err(Error::InvalidInput(format!("involution is not an involution at generator {i}")));
            }
        }
        let mut seen = HashSet::new();
        for n in &names {
            if n.is_empty() || !n.chars().all(|c| c.is_ascii_alphanumeric() || c == '_') || n.chars().next().unwrap().is_ascii_digit() {
                return Err(Error::InvalidInput(format!("invalid generator name {n:?}")));
            }
            if !seen.insert(n.clone()) {
                return Err(Error::InvalidInput(format!("duplicate generator name {n:?}")));
            }
        }
        Ok(GeneratorSet { names, inv, kind })
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn inv(&self, l: Letter) -> Letter {
        self.inv[l as usize]
    }

    pub fn kind(&self) -> &AlgebraKind {
        &self.kind
    }

    pub fn letter_by_name(&self, name: &str) -> Option<Letter> {
        self.names.iter().position(|n| n == name).map(|i| i as Letter)
    }

    /// Parses `"1"`, `"x1^2*x2"`, `"x1*e12"`.
    pub fn parse_word(&self, s: &str) -> Result<Word> {
        let s = s.trim();
        if s == "1" || s.is_empty() {
            return Ok(Word::unit());
        }
        let mut letters: SmallVec<[Letter; 8]> = SmallVec::new();
        for factor in s.split('*') {
            let factor = factor.trim();
            let (name, power) = match factor.split_once('^') {
                Some((n, p)) => {
                    let p: usize = p
                        .trim()
                        .parse()
                        .map_err(|_| Error::InvalidInput(format!("bad exponent in {factor:?}")))?;
                    (n.trim(), p)
                }
                None => (factor, 1),
            };
            if name == "1" {
                continue;
            }
            let l = self
                .letter_by_name(name)
                .ok_or_else(|| Error::InvalidInput(format!("unknown generator {name:?} in word {s:?}")))?;
            for _ in 0..power {
                letters.push(l);
            }
        }
        Ok(Word(letters))
    }

    /// Caret notation, grouping runs of equal letters.
    pub fn format_word(&self, w: &Word) -> String {
        if w.is_empty() {
            return "1".to_string();
        }
        let mut parts = Vec::new();
        let ls = w.letters();
        let mut i = 0;
        while i < ls.len() {
            let mut j = i;
            while j < ls.len() && ls[j] == ls[i] {
                j += 1;
            }
            let name = &self.names[ls[i] as usize];
            if j - i == 1 {
                parts.push(name.clone());
            } else {
                parts.push(format!("{name}^{}", j - i));
            }
            i = j;
        }
        parts.join("*")
    }
}

/// Reverses the word and applies the generator involution letterwise.
pub fn word_involution(w: &Word, gens: &GeneratorSet) -> Word {
    Word(w.0.iter().rev().map(|&l| gens.inv(l)).collect())
}

/// Anti-linear anti-multiplicative involution on the free algebra.
pub fn poly_involution(p: &NcPoly, gens: &GeneratorSet) -> NcPoly {
    NcPoly::from_terms(p.terms().map(|(w, c)| (word_involution(w, gens), c.conj())))
}

/// A finitely presented unital *-algebra.
#[derive(Clone, Debug)]
pub struct Presentation {
    gens: GeneratorSet,
    relations: Vec<NcPoly>,
    delta: usize,
    step_budget: usize,
}

fn numbered(prefix: &str, count: usize) -> Vec<String> {
    (1..=count).map(|i| format!("{prefix}{i}")).collect()
}

fn commutator(a: Letter, b: Letter) -> NcPoly {
    NcPoly::word(Word::from_letters(&[a, b])).sub(&NcPoly::word(Word::from_letters(&[b, a])))
}

impl Presentation {
    pub fn commutative(vars: usize) -> Result<Self> {
        let gens = GeneratorSet::new(
            numbered("x", vars),
            (0..vars as Letter).collect(),
            AlgebraKind::Commutative { vars },
        )?;
        let mut rels = Vec::new();
        for i in 0..vars as Letter {
            for j in (i + 1)..vars as Letter {
                rels.push(commutator(i, j));
            }
        }
        Self::assemble(gens, rels)
    }

    pub fn cylinder(d: usize) -> Result<Self> {
        let mut names = numbered("x", d);
        names.push("y".to_string());
        let gens = GeneratorSet::new(names, (0..=d as Letter).collect(), AlgebraKind::Cylinder { d })?;
        let mut rels = Vec::new();
        for i in 0..=d as Letter {
            for j in (i + 1)..=d as Letter {
                rels.push(commutator(i, j));
            }
        }
        Self::assemble(gens, rels)
    }

    pub fn matrix_poly(n: usize, d: usize) -> Result<Self> {
        if n == 0 || n > 9 {
            return Err(Error::InvalidInput(format!("matrix size n={n} must lie in 1..=9")));
        }
        let mut names = numbered("x", d);
        let mut inv: Vec<Letter> = (0..d as Letter).collect();
        for i in 0..n {
            for j in 0..n {
                names.push(format!("e{}{}", i + 1, j + 1));
                inv.push((d + j * n + i) as Letter);
            }
        }
        let gens = GeneratorSet::new(names, inv, AlgebraKind::MatrixPoly { n, d })?;
        let e = |i: usize, j: usize| (d + i * n + j) as Letter;
        let mut rels = Vec::new();
        for i in 0..d as Letter {
            for j in (i + 1)..d as Letter {
                rels.push(commutator(i, j));
            }
            for a in 0..n {
                for b in 0..n {
                    rels.push(commutator(i, e(a, b)));
                }
            }
        }
        for i in 0..n {
            for j in 0..n {
                for k in 0..n {
                    for l in 0..n {
                        let mut r = NcPoly::word(Word::from_letters(&[e(i, j), e(k, l)]));
                        if j == k {
                            r = r.sub(&NcPoly::generator(e(i, l)));
                        }
                        rels.push(r);
                    }
                }
            }
        }
        let mut unit = NcPoly::one().scale(Complex64::new(-1.0, 0.0));
        for i in 0..n {
            unit.add_term(Word::letter(e(i, i)), Complex64::new(1.0, 0.0));
        }
        rels.push(unit);
        Self::assemble(gens, rels)
    }

    pub fn lie(structure: StructureConstants) -> Result<Self> {
        structure.validate()?;
        let d = structure.dim();
        let gens = GeneratorSet::new(
            numbered("x", d),
            (0..d as Letter).collect(),
            AlgebraKind::Lie { structure: structure.clone() },
        )?;
        let mut rels = Vec::new();
        for j in 0..d {
            for k in (j + 1)..d {
                let mut r = commutator(j as Letter, k as Letter);
                for l in 0..d {
                    let c = structure.get(j, k, l);
                    if c != 0.0 {
                        r.add_term(Word::letter(l as Letter), Complex64::new(0.0, -c));
                    }
                }
                rels.push(r);
            }
        }
        Self::assemble(gens, rels)
    }

    /// Free algebra on the given generators modulo user rewrite rules.
    ///
    /// Rules are checked for termination (step budget), sampled confluence
    /// on all overlaps up to length `2δ`, and *-invariance of the relation set.
    pub fn free_with_relations(names: Vec<String>, inv: Vec<Letter>, rules: Vec<RewriteRule>) -> Result<Self> {
        for r in &rules {
            if r.lhs.is_empty() {
                return Err(Error::InvalidInput("rewrite rule with empty left-hand side".into()));
            }
        }
        let gens = GeneratorSet::new(names, inv, AlgebraKind::FreeWithRelations { rules: rules.clone() })?;
        for r in &rules {
            for &l in r.lhs.letters().iter().chain(r.rhs.terms().flat_map(|(w, _)| w.letters().iter())) {
                if l as usize >= gens.len() {
                    return Err(Error::InvalidInput("rewrite rule uses an unknown generator".into()));
                }
            }
        }
        let rels: Vec<NcPoly> = rules.iter().map(|r| NcPoly::word(r.lhs.clone()).sub(&r.rhs)).collect();
        let delta = rels.iter().filter_map(NcPoly::degree).max().unwrap_or(0);
        let pres = Presentation { gens, relations: rels, delta, step_budget: DEFAULT_STEP_BUDGET };
        pres.check_confluence()?;
        pres.check_relations()?;
        Ok(pres)
    }

    fn assemble(gens: GeneratorSet, relations: Vec<NcPoly>) -> Result<Self> {
        let delta = relations.iter().filter_map(NcPoly::degree).max().unwrap_or(0);
        let pres = Presentation { gens, relations, delta, step_budget: DEFAULT_STEP_BUDGET };
        pres.check_relations()?;
        Ok(pres)
    }

    fn check_relations(&self) -> Result<()> {
        let pres = self;
        let mut red = pres.reducer();
        for r in &pres.relations {
            let scale = r.max_abs_coefficient().max(1.0);
            let nf = red.reduce(r)?;
            if nf.max_abs_coefficient() > 1e-10 * scale {
                return Err(Error::InvalidInput(format!("relation {r:?} does not reduce to zero")));
            }
            let nfs = red.reduce(&poly_involution(r, &pres.gens))?;
            if nfs.max_abs_coefficient() > 1e-10 * scale {
                return Err(Error::InvalidInput(format!("relation set is not *-invariant: {r:?}")));
            }
        }
        Ok(())
    }

    pub fn with_step_budget(mut self, budget: usize) -> Self {
        self.step_budget = budget;
        self
    }

    pub fn gens(&self) -> &GeneratorSet {
        &self.gens
    }

    pub fn kind(&self) -> &AlgebraKind {
        self.gens.kind()
    }

    pub fn relations(&self) -> &[NcPoly] {
        &self.relations
    }

    /// δ(S): maximal index of the relations (0 for an empty relation set).
    pub fn delta(&self) -> usize {
        self.delta
    }

    pub fn num_generators(&self) -> usize {
        self.gens.len()
    }

    pub fn reducer(&self) -> Reducer<'_> {
        Reducer { pres: self, memo: HashMap::new(), in_progress: HashSet::new(), steps: 0, depth: 0 }
    }

    pub fn normal_form(&self, p: &NcPoly) -> Result<NcPoly> {
        self.reducer().reduce(p)
    }

    pub fn star(&self, p: &NcPoly) -> NcPoly {
        poly_involution(p, &self.gens)
    }

    /// Index of `p`: maximal word length of its normal form.
    pub fn index_of(&self, p: &NcPoly) -> Result<usize> {
        self.normal_form(p)?.degree().ok_or(Error::ZeroElement)
    }

    /// Whether a word is already a normal-form monomial.
    pub fn is_normal_word(&self, w: &Word) -> Result<bool> {
        let nf = self.reducer().reduce_word(w)?;
        Ok(nf.num_terms() == 1 && (nf.coefficient(w) - Complex64::new(1.0, 0.0)).norm() < 1e-14)
    }

    fn check_confluence(&self) -> Result<()> {
        let AlgebraKind::FreeWithRelations { rules } = self.kind() else {
            return Ok(());
        };
        let max_len = 2 * self.delta.max(1);
        let mut red = self.reducer();
        for (a, ra) in rules.iter().enumerate() {
            for (b, rb) in rules.iter().enumerate() {
                let la = ra.lhs.letters();
                let lb = rb.lhs.letters();
                // suffix of la overlaps prefix of lb
                for o in 1..=la.len().min(lb.len()) {
                    if a == b && o == la.len() {
                        continue;
                    }
                    if la[la.len() - o..] != lb[..o] {
                        continue;
                    }
                    let w = ra.lhs.concat(&Word::from_letters(&lb[o..]));
                    if w.len() > max_len {
                        continue;
                    }
                    let via_a = apply_rule_at(&w, 0, ra);
                    let via_b = apply_rule_at(&w, la.len() - o, rb);
                    self.compare_critical(&mut red, &w, &via_a, &via_b)?;
                }
                // lb contained in la
                if a != b && lb.len() <= la.len() {
                    for p in 0..=(la.len() - lb.len()) {
                        if la[p..p + lb.len()] == *lb {
                            let via_a = ra.rhs.clone();
                            let via_b = apply_rule_at(&ra.lhs, p, rb);
                            self.compare_critical(&mut red, &ra.lhs, &via_a, &via_b)?;
                        }
                    }
                }
            }
        }
        Ok(())
    }

    fn compare_critical(&self, red: &mut Reducer<'_>, w: &Word, a: &NcPoly, b: &NcPoly) -> Result<()> {
        let na = red.reduce(a)?;
        let nb = red.reduce(b)?;
        let scale = na.max_abs_coefficient().max(nb.max_abs_coefficient()).max(1.0);
        if na.distance(&nb) > 1e-10 * scale {
            return Err(Error::NonConfluent(self.gens.format_word(w)));
        }
        Ok(())
    }
}

fn apply_rule_at(w: &Word, pos: usize, rule: &RewriteRule) -> NcPoly {
    let end = pos + rule.lhs.len();
    NcPoly::from_terms(rule.rhs.terms().map(|(u, c)| (w.splice(pos, end, u.letters()), *c)))
}

#[derive(Clone, Copy)]
enum UnitProduct {
    Identity,
    Unit(usize, usize),
    Zero,
}

/// Normal-form engine with a word memo; create one per batch of reductions.
pub struct Reducer<'a> {
    pres: &'a Presentation,
    memo: HashMap<Word, NcPoly>,
    in_progress: HashSet<Word>,
    steps: usize,
    depth: usize,
}

impl<'a> Reducer<'a> {
    pub fn presentation(&self) -> &'a Presentation {
        self.pres
    }

    pub fn reduce(&mut self, p: &NcPoly) -> Result<NcPoly> {
        let scale = p.max_abs_coefficient();
        let mut out = NcPoly::zero();
        for (w, c) in p.terms() {
            let r = self.reduce_word(w)?;
            out.add_scaled(&r, *c);
        }
        out.prune(1e-15 * scale);
        Ok(out)
    }

    /// Normal form of `a * b` for two polynomials.
    pub fn product(&mut self, a: &NcPoly, b: &NcPoly) -> Result<NcPoly> {
        self.reduce(&a.mul(b))
    }

    pub fn reduce_word(&mut self, w: &Word) -> Result<NcPoly> {
        if let Some(p) = self.memo.get(w) {
            return Ok(p.clone());
        }
        self.steps += 1;
        if self.steps > self.pres.step_budget {
            return Err(Error::NonTerminatingRewrite { steps: self.steps });
        }
        let r = match self.pres.kind() {
            AlgebraKind::Commutative { .. } | AlgebraKind::Cylinder { .. } => {
                let mut ls: SmallVec<[Letter; 8]> = w.0.clone();
                ls.sort_unstable();
                NcPoly::word(Word(ls))
            }
            AlgebraKind::MatrixPoly { n, d } => reduce_matrix_word(w, *n, *d),
            AlgebraKind::Lie { structure } => {
                let structure = structure.clone();
                self.recursive(w, |w| lie_step(w, &structure))?
            }
            AlgebraKind::FreeWithRelations { rules } => {
                let rules = rules.clone();
                self.recursive(w, |w| free_step(w, &rules))?
            }
        };
        self.memo.insert(w.clone(), r.clone());
        Ok(r)
    }

    /// Applies one rewrite step (`None` when `w` is irreducible) and reduces
    /// the resulting terms recursively.
    fn recursive<F>(&mut self, w: &Word, step: F) -> Result<NcPoly>
    where
        F: Fn(&Word) -> Option<NcPoly>,
    {
        let Some(next) = step(w) else {
            return Ok(NcPoly::word(w.clone()));
        };
        if !self.in_progress.insert(w.clone()) || self.depth >= MAX_REWRITE_DEPTH {
            return Err(Error::NonTerminatingRewrite { steps: self.steps });
        }
        self.depth += 1;
        let mut out = NcPoly::zero();
        let mut result = Ok(());
        for (u, c) in next.terms() {
            match self.reduce_word(u) {
                Ok(r) => out.add_scaled(&r, *c),
                Err(e) => {
                    result = Err(e);
                    break;
                }
            }
        }
        self.depth -= 1;
        self.in_progress.remove(w);
        result.map(|_| out)
    }
}

fn lie_step(w: &Word, s: &StructureConstants) -> Option<NcPoly> {
    let ls = w.letters();
    let t = (0..ls.len().saturating_sub(1)).find(|&t| ls[t] > ls[t + 1])?;
    let (j, k) = (ls[t] as usize, ls[t + 1] as usize);
    let mut out = NcPoly::word(w.splice(t, t + 2, &[ls[t + 1], ls[t]]));
    for l in 0..s.dim() {
        let c = s.get(j, k, l);
        if c != 0.0 {
            out.add_term(w.splice(t, t + 2, &[l as Letter]), Complex64::new(0.0, c));
        }
    }
    Some(out)
}

fn free_step(w: &Word, rules: &[RewriteRule]) -> Option<NcPoly> {
    let ls = w.letters();
    for p in 0..ls.len() {
        for r in rules {
            let lhs = r.lhs.letters();
            if p + lhs.len() <= ls.len() && ls[p..p + lhs.len()] == *lhs {
                return Some(apply_rule_at(w, p, r));
            }
        }
    }
    None
}

fn reduce_matrix_word(w: &Word, n: usize, d: usize) -> NcPoly {
    let mut xs: SmallVec<[Letter; 8]> = SmallVec::new();
    let mut prod = UnitProduct::Identity;
    for &l in w.letters() {
        let l_us = l as usize;
        if l_us < d {
            xs.push(l);
            continue;
        }
        let (i, j) = ((l_us - d) / n, (l_us - d) % n);
        prod = match prod {
            UnitProduct::Identity => UnitProduct::Unit(i, j),
            UnitProduct::Unit(a, b) if b == i => UnitProduct::Unit(a, j),
            _ => UnitProduct::Zero,
        };
    }
    xs.sort_unstable();
    let with = |extra: Option<usize>| {
        let mut v = xs.clone();
        if let Some(e) = extra {
            v.push(e as Letter);
        }
        Word(v)
    };
    let one = Complex64::new(1.0, 0.0);
    match prod {
        UnitProduct::Zero => NcPoly::zero(),
        UnitProduct::Identity => NcPoly::word(with(None)),
        UnitProduct::Unit(i, j) if i == n - 1 && j == n - 1 => {
            let mut p = NcPoly::word(with(None));
            for k in 0..n - 1 {
                p.add_term(with(Some(d + k * n + k)), -one);
            }
            p
        }
        UnitProduct::Unit(i, j) => NcPoly::word(with(Some(d + i * n + j))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn w(ls: &[Letter]) -> Word {
        Word::from_letters(ls)
    }

    #[test]
    fn word_involution_examples() {
        let herm = Presentation::commutative(3).unwrap();
        assert_eq!(word_involution(&Word::unit(), herm.gens()), Word::unit());
        assert_eq!(word_involution(&w(&[0, 1]), herm.gens()), w(&[1, 0]));
        let gens = GeneratorSet::new(
            vec!["a".into(), "b".into(), "c".into()],
            vec![1, 0, 2],
            AlgebraKind::FreeWithRelations { rules: vec![] },
        )
        .unwrap();
        // (x1 x3)* = x3* x1* = x3 x2 with 1 <-> 2 swapped
        assert_eq!(word_involution(&w(&[0, 2]), &gens), w(&[2, 1]));
        let ww = w(&[0, 2, 1]);
        assert_eq!(word_involution(&word_involution(&ww, &gens), &gens), ww);
    }

    #[test]
    fn bad_involution_rejected() {
        let r = GeneratorSet::new(
            vec!["a".into(), "b".into()],
            vec![1, 1],
            AlgebraKind::FreeWithRelations { rules: vec![] },
        );
        assert!(r.is_err());
    }

    #[test]
    fn poly_involution_and_ring_laws() {
        let pres = Presentation::commutative(1).unwrap();
        let p = NcPoly::monomial(w(&[0]), c(0.0, 1.0));
        assert_eq!(pres.star(&p), NcPoly::monomial(w(&[0]), c(0.0, -1.0)));
        assert_eq!(p.add(&NcPoly::zero()), p);
        assert_eq!(NcPoly::one().mul(&p), p);
        assert_eq!(p.mul(&NcPoly::one()), p);
        assert!(p.sub(&p).is_zero());
    }

    #[test]
    fn commutative_sorting() {
        let pres = Presentation::commutative(2).unwrap();
        let nf = pres.normal_form(&NcPoly::word(w(&[1, 0]))).unwrap();
        assert_eq!(nf, NcPoly::word(w(&[0, 1])));
    }

    #[test]
    fn matrix_unit_fusion() {
        let pres = Presentation::matrix_poly(2, 1).unwrap();
        let g = pres.gens();
        let e12 = g.letter_by_name("e12").unwrap();
        let e21 = g.letter_by_name("e21").unwrap();
        let e11 = g.letter_by_name("e11").unwrap();
        let e22 = g.letter_by_name("e22").unwrap();
        let nf = pres.normal_form(&NcPoly::word(w(&[e12, e21]))).unwrap();
        assert_eq!(nf, NcPoly::generator(e11));
        // e21 e12 = e22 = 1 - e11
        let nf = pres.normal_form(&NcPoly::word(w(&[e21, e12]))).unwrap();
        assert_eq!(nf, NcPoly::one().sub(&NcPoly::generator(e11)));
        assert!(pres.normal_form(&NcPoly::word(w(&[e12, e12]))).unwrap().is_zero());
        // e_ii e_jj = δ_ij e_ii
        for a in [e11, e22] {
            for b in [e11, e22] {
                let lhs = pres.normal_form(&NcPoly::word(w(&[a, b]))).unwrap();
                let rhs = if a == b { pres.normal_form(&NcPoly::generator(a)).unwrap() } else { NcPoly::zero() };
                assert_eq!(lhs, rhs);
            }
        }
        // x commutes past units
        let nf = pres.normal_form(&NcPoly::word(w(&[e12, 0, e21]))).unwrap();
        assert_eq!(nf, NcPoly::word(w(&[0, e11])));
    }

    #[test]
    fn su2_straightening() {
        let pres = Presentation::lie(StructureConstants::su2()).unwrap();
        // x1 x2 = x2 x1 + i x3 holds in the quotient
        let lhs = pres.normal_form(&NcPoly::word(w(&[0, 1]))).unwrap();
        let mut rhs = NcPoly::word(w(&[1, 0]));
        rhs.add_term(w(&[2]), c(0.0, 1.0));
        assert!(lhs.distance(&pres.normal_form(&rhs).unwrap()) < 1e-14);
        // ordered monomials are normal; x2 x1 straightens to x1 x2 - i x3
        assert_eq!(lhs, NcPoly::word(w(&[0, 1])));
        let nf = pres.normal_form(&NcPoly::word(w(&[1, 0]))).unwrap();
        let mut expect = NcPoly::word(w(&[0, 1]));
        expect.add_term(w(&[2]), c(0.0, -1.0));
        assert_eq!(nf, expect);
    }

    #[test]
    fn index_examples() {
        let pres = Presentation::commutative(3).unwrap();
        assert_eq!(pres.index_of(&NcPoly::one()).unwrap(), 0);
        let p = NcPoly::word(w(&[0, 1])).add(&NcPoly::generator(2));
        assert_eq!(pres.index_of(&p).unwrap(), 2);
        assert!(matches!(pres.index_of(&NcPoly::zero()), Err(Error::ZeroElement)));
        let su2 = Presentation::lie(StructureConstants::su2()).unwrap();
        let comm = NcPoly::word(w(&[0, 1])).sub(&NcPoly::word(w(&[1, 0])));
        assert_eq!(su2.index_of(&comm).unwrap(), 1);
        assert_eq!(su2.normal_form(&comm).unwrap(), NcPoly::monomial(w(&[2]), c(0.0, 1.0)));
    }

    #[test]
    fn delta_of_builtin_kinds() {
        assert_eq!(Presentation::commutative(2).unwrap().delta(), 2);
        assert_eq!(Presentation::cylinder(1).unwrap().delta(), 2);
        assert_eq!(Presentation::matrix_poly(2, 1).unwrap().delta(), 2);
        assert_eq!(Presentation::lie(StructureConstants::su2()).unwrap().delta(), 2);
        let free = Presentation::free_with_relations(vec!["a".into()], vec![0], vec![]).unwrap();
        assert_eq!(free.delta(), 0);
    }

    #[test]
    fn jacobi_violation_rejected() {
        // [y1,y2]=y1, [y2,y3]=y1, [y1,y3]=y2 does not satisfy Jacobi
        let r = StructureConstants::from_upper(3, &[(0, 1, 0, 1.0), (1, 2, 0, 1.0), (0, 2, 1, 1.0)]);
        assert!(r.is_err());
    }

    #[test]
    fn free_relations_commutative_rule() {
        // b a -> a b reproduces the commutative normal form
        let rules = vec![RewriteRule { lhs: w(&[1, 0]), rhs: NcPoly::word(w(&[0, 1])) }];
        let pres = Presentation::free_with_relations(vec!["a".into(), "b".into()], vec![0, 1], rules).unwrap();
        let nf = pres.normal_form(&NcPoly::word(w(&[1, 1, 0, 1, 0]))).unwrap();
        assert_eq!(nf, NcPoly::word(w(&[0, 0, 1, 1, 1])));
    }

    #[test]
    fn free_relations_non_confluent_rejected() {
        // aa -> b, aa -> a cannot both hold confluently... use overlap aaa
        let rules = vec![
            RewriteRule { lhs: w(&[0, 0]), rhs: NcPoly::generator(1) },
            RewriteRule { lhs: w(&[1, 0]), rhs: NcPoly::zero() },
        ];
        // overlap "aaa": (aa)a -> ba -> 0 ; a(aa) -> ab (irreducible)
        let r = Presentation::free_with_relations(vec!["a".into(), "b".into()], vec![0, 1], rules);
        assert!(matches!(r, Err(Error::NonConfluent(_))), "{r:?}");
    }

    #[test]
    fn looping_rules_hit_budget() {
        let rules = vec![
            RewriteRule { lhs: w(&[0, 1]), rhs: NcPoly::word(w(&[1, 0])) },
            RewriteRule { lhs: w(&[1, 0]), rhs: NcPoly::word(w(&[0, 1])) },
        ];
        let r = Presentation::free_with_relations(vec!["a".into(), "b".into()], vec![0, 1], rules);
        assert!(matches!(r, Err(Error::NonTerminatingRewrite { .. })), "{r:?}");
    }

    #[test]
    fn parse_and_format_words() {
        let pres = Presentation::matrix_poly(2, 2).unwrap();
        let g = pres.gens();
        let wd = g.parse_word("x1^2*x2*e12").unwrap();
        assert_eq!(g.format_word(&wd), "x1^2*x2*e12");
        assert_eq!(g.parse_word("1").unwrap(), Word::unit());
        assert!(g.parse_word("z3").is_err());
    }

    fn arb_poly(gens: usize, max_len: usize) -> impl Strategy<Value = NcPoly> {
        proptest::collection::vec(
            (proptest::collection::vec(0..gens as Letter, 0..=max_len), -2.0f64..2.0, -2.0f64..2.0),
            1..5,
        )
        .prop_map(|ts| NcPoly::from_terms(ts.into_iter().map(|(l, re, im)| (Word::from_letters(&l), c(re, im)))))
    }

    fn all_presentations() -> Vec<Presentation> {
        vec![
            Presentation::commutative(3).unwrap(),
            Presentation::matrix_poly(2, 1).unwrap(),
            Presentation::lie(StructureConstants::su2()).unwrap(),
            Presentation::lie(StructureConstants::heisenberg()).unwrap(),
        ]
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn involution_commutes_with_normal_form(seed in 0usize..4, p in arb_poly(3, 4)) {
            let pres = &all_presentations()[seed];
            let nf = pres.normal_form(&p).unwrap();
            let via_star = pres.star(&pres.normal_form(&pres.star(&p)).unwrap());
            let nf2 = pres.normal_form(&via_star).unwrap();
            prop_assert!(nf.distance(&nf2) < 1e-10 * (1.0 + nf.max_abs_coefficient()));
        }

        #[test]
        fn normal_form_is_a_homomorphism(seed in 0usize..4, p in arb_poly(3, 3), q in arb_poly(3, 3)) {
            let pres = &all_presentations()[seed];
            let mut red = pres.reducer();
            let direct = red.reduce(&p.mul(&q)).unwrap();
            let np = red.reduce(&p).unwrap();
            let nq = red.reduce(&q).unwrap();
            let staged = red.reduce(&np.mul(&nq)).unwrap();
            prop_assert!(direct.distance(&staged) < 1e-10 * (1.0 + direct.max_abs_coefficient()));
            let sum = red.reduce(&p.add(&q)).unwrap();
            prop_assert!(sum.distance(&np.add(&nq)) < 1e-12 * (1.0 + sum.max_abs_coefficient()));
            // idempotent
            let again = red.reduce(&direct).unwrap();
            prop_assert!(again.distance(&direct) < 1e-14 * (1.0 + direct.max_abs_coefficient()));
        }

        #[test]
        fn pbw_normal_forms_are_ordered(letters in proptest::collection::vec(0..3 as Letter, 0..=3)) {
            for s in [StructureConstants::su2(), StructureConstants::heisenberg()] {
                let pres = Presentation::lie(s).unwrap();
                let nf = pres.normal_form(&NcPoly::word(Word::from_letters(&letters))).unwrap();
                for (wd, _) in nf.terms() {
                    prop_assert!(wd.letters().windows(2).all(|p| p[0] <= p[1]));
                }
            }
        }
    }
}
