//! Connected-to-1 filtered bases of the truncated subspaces `B ⊆ C` and
//! prolongations `V⁺ = span{a_i v}`.

use std::collections::{BTreeSet, HashMap};

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::Serialize;

use crate::algebra::{AlgebraKind, Letter, NcPoly, Presentation, Word};
use crate::error::{Error, Result};

pub const DEFAULT_MAX_DIM: usize = 20_000;

/// Relative pivot tolerance for elimination over monomial coordinates.
const ELIMINATION_TOL: f64 = 1e-12;

#[derive(Clone, Debug)]
pub struct TruncationOptions {
    /// Cap on the `y` degree of `B` for cylinder presentations (`C` gets one more).
    pub y_cap: Option<usize>,
    pub max_dim: usize,
}

impl Default for TruncationOptions {
    fn default() -> Self {
        TruncationOptions { y_cap: None, max_dim: DEFAULT_MAX_DIM }
    }
}

impl TruncationOptions {
    pub fn with_y_cap(y_cap: usize) -> Self {
        TruncationOptions { y_cap: Some(y_cap), ..Default::default() }
    }
}

/// Maps normal-form polynomials to coordinates over a fixed list of
/// linearly independent polynomials.
#[derive(Clone, Debug)]
pub struct Coordinatizer {
    dim: usize,
    repr: CoordRepr,
}

#[derive(Clone, Debug)]
enum CoordRepr {
    /// Every element is a distinct monomial with coefficient one.
    Monomial(HashMap<Word, usize>),
    General {
        support: HashMap<Word, usize>,
        embed: DMatrix<Complex64>,
        pinv: DMatrix<Complex64>,
    },
}

impl Coordinatizer {
    pub fn new(elements: &[NcPoly]) -> Self {
        let dim = elements.len();
        let one = Complex64::new(1.0, 0.0);
        let mut mono = HashMap::new();
        let monomial = elements.iter().enumerate().all(|(i, p)| {
            p.num_terms() == 1 && {
                let (w, c) = p.terms().next().unwrap();
                *c == one && mono.insert(w.clone(), i).is_none()
            }
        });
        if monomial {
            return Coordinatizer { dim, repr: CoordRepr::Monomial(mono) };
        }
        let words: BTreeSet<Word> = elements.iter().flat_map(|p| p.terms().map(|(w, _)| w.clone())).collect();
        let support: HashMap<Word, usize> = words.into_iter().enumerate().map(|(i, w)| (w, i)).collect();
        let mut embed = DMatrix::zeros(support.len(), dim);
        for (j, p) in elements.iter().enumerate() {
            for (w, c) in p.terms() {
                embed[(support[w], j)] = *c;
            }
        }
        let pinv = if dim == 0 {
            DMatrix::zeros(0, support.len())
        } else {
            embed.clone().svd(true, true).pseudo_inverse(1e-12).expect("svd computed with u and v")
        };
        Coordinatizer { dim, repr: CoordRepr::General { support, embed, pinv } }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Coordinates of `p`, or `None` when `p` is not in the span.
    pub fn coords(&self, p: &NcPoly) -> Option<DVector<Complex64>> {
        let mut out = DVector::zeros(self.dim);
        match &self.repr {
            CoordRepr::Monomial(map) => {
                for (w, c) in p.terms() {
                    let &i = map.get(w)?;
                    out[i] += c;
                }
                Some(out)
            }
            CoordRepr::General { support, embed, pinv } => {
                let mut v = DVector::zeros(support.len());
                for (w, c) in p.terms() {
                    v[*support.get(w)?] += c;
                }
                out = pinv * &v;
                let resid = (embed * &out - &v).norm();
                (resid <= 1e-9 * v.norm().max(1e-300)).then_some(out)
            }
        }
    }

    pub fn contains(&self, p: &NcPoly) -> bool {
        self.coords(p).is_some()
    }
}

/// Reduced row echelon form of the given polynomials over monomial
/// coordinates; returns a basis of their span sorted by leading monomial.
pub fn echelon_basis(polys: &[NcPoly]) -> Vec<NcPoly> {
    let words: Vec<Word> = polys
        .iter()
        .flat_map(|p| p.terms().map(|(w, _)| w.clone()))
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    if words.is_empty() {
        return Vec::new();
    }
    let col: HashMap<&Word, usize> = words.iter().enumerate().map(|(i, w)| (w, i)).collect();
    let mut m = DMatrix::<Complex64>::zeros(polys.len(), words.len());
    for (i, p) in polys.iter().enumerate() {
        for (w, c) in p.terms() {
            m[(i, col[w])] = *c;
        }
    }
    let scale = m.iter().map(|c| c.norm()).fold(0.0, f64::max);
    let tol = ELIMINATION_TOL * scale;
    let (rows, cols) = m.shape();
    let mut r = 0;
    let mut pivots = Vec::new();
    for c in 0..cols {
        if r == rows {
            break;
        }
        let (best, val) = (r..rows).map(|i| (i, m[(i, c)].norm())).fold((r, -1.0), |a, b| if b.1 > a.1 { b } else { a });
        if val <= tol {
            continue;
        }
        m.swap_rows(r, best);
        let piv = m[(r, c)];
        for j in 0..cols {
            m[(r, j)] /= piv;
        }
        for i in 0..rows {
            if i != r {
                let f = m[(i, c)];
                if f != Complex64::new(0.0, 0.0) {
                    for j in 0..cols {
                        let v = m[(r, j)];
                        m[(i, j)] -= f * v;
                    }
                }
            }
        }
        pivots.push(c);
        r += 1;
    }
    (0..r)
        .map(|i| {
            let mut p = NcPoly::from_terms((0..cols).map(|j| (words[j].clone(), m[(i, j)])));
            p.prune(tol);
            p
        })
        .collect()
}

/// `V⁺`: basis of `span{normal_form(a_i v)}` over all generators.
pub fn prolongation(v: &[NcPoly], pres: &Presentation) -> Result<Vec<NcPoly>> {
    let mut red = pres.reducer();
    let mut prods = Vec::with_capacity(v.len() * pres.num_generators());
    for p in v {
        for i in 0..pres.num_generators() {
            prods.push(red.reduce(&NcPoly::generator(i as Letter).mul(p))?);
        }
    }
    Ok(echelon_basis(&prods))
}

/// `V^[l]`, the `l`-fold prolongation.
pub fn iterated_prolongation(v: &[NcPoly], l: usize, pres: &Presentation) -> Result<Vec<NcPoly>> {
    let mut cur = echelon_basis(v);
    for _ in 0..l {
        cur = prolongation(&cur, pres)?;
    }
    Ok(cur)
}

/// Filtered basis of `C` whose leading `b_size` elements span `B`.
#[derive(Clone, Debug)]
pub struct BasisChain {
    elements: Vec<NcPoly>,
    levels: Vec<usize>,
    b_size: usize,
    truncation: Option<usize>,
    y_cap: Option<usize>,
    coords: Coordinatizer,
}

impl BasisChain {
    /// Chain from explicit elements; each element is brought to normal form
    /// and its level defaults to its index.
    pub fn from_elements(
        pres: &Presentation,
        elements: Vec<NcPoly>,
        b_size: usize,
        levels: Option<Vec<usize>>,
    ) -> Result<Self> {
        if b_size > elements.len() {
            return Err(Error::InvalidInput("B is larger than C".into()));
        }
        let mut red = pres.reducer();
        let elements: Vec<NcPoly> = elements.iter().map(|p| red.reduce(p)).collect::<Result<_>>()?;
        if elements.iter().any(NcPoly::is_zero) {
            return Err(Error::InvalidInput("basis element reduces to zero".into()));
        }
        if echelon_basis(&elements).len() != elements.len() {
            return Err(Error::InvalidInput("basis elements are linearly dependent".into()));
        }
        let levels = match levels {
            Some(l) if l.len() == elements.len() => l,
            Some(_) => return Err(Error::InvalidInput("level list length differs from element count".into())),
            None => elements.iter().map(|p| p.degree().unwrap_or(0)).collect(),
        };
        let coords = Coordinatizer::new(&elements);
        Ok(BasisChain { elements, levels, b_size, truncation: None, y_cap: None, coords })
    }

    pub fn elements(&self) -> &[NcPoly] {
        &self.elements
    }

    pub fn element(&self, i: usize) -> &NcPoly {
        &self.elements[i]
    }

    pub fn level_of(&self, i: usize) -> usize {
        self.levels[i]
    }

    pub fn levels(&self) -> &[usize] {
        &self.levels
    }

    pub fn dim(&self) -> usize {
        self.elements.len()
    }

    pub fn b_size(&self) -> usize {
        self.b_size
    }

    /// Truncation degree `m` when the chain is `B = A_m`, `C = A_{m+1}`.
    pub fn truncation(&self) -> Option<usize> {
        self.truncation
    }

    pub fn y_cap(&self) -> Option<usize> {
        self.y_cap
    }

    pub fn coordinatizer(&self) -> &Coordinatizer {
        &self.coords
    }

    /// Coordinates over the C-basis of a normal-form polynomial.
    pub fn coords(&self, p: &NcPoly) -> Option<DVector<Complex64>> {
        self.coords.coords(p)
    }

    /// Polynomial with the given C-coordinates.
    pub fn poly_from_coords(&self, v: &DVector<Complex64>) -> NcPoly {
        let mut p = NcPoly::zero();
        for (i, e) in self.elements.iter().enumerate() {
            if v[i] != Complex64::new(0.0, 0.0) {
                p.add_scaled(e, v[i]);
            }
        }
        p
    }

    /// C-coordinates of `normal_form(b*)` for every basis element; `None`
    /// entries mark elements whose adjoint leaves `span(C)`.
    pub fn star_map(&self, pres: &Presentation) -> Result<Vec<Option<DVector<Complex64>>>> {
        let mut red = pres.reducer();
        self.elements
            .iter()
            .map(|e| Ok(self.coords(&red.reduce(&pres.star(e))?)))
            .collect()
    }
}

/// Normal-form monomials of total length at most `degree`.
///
/// For cylinders `y_cap` bounds the `y` exponent and `degree` bounds the
/// `x`-degree only; without a cap the total degree is bounded.
pub fn monomials_up_to(pres: &Presentation, degree: usize, y_cap: Option<usize>, max_dim: usize) -> Result<Vec<Word>> {
    let mut out: Vec<Word> = match pres.kind() {
        AlgebraKind::Commutative { vars } => sorted_words(*vars, degree),
        AlgebraKind::Lie { structure } => sorted_words(structure.dim(), degree),
        AlgebraKind::Cylinder { d } => match y_cap {
            None => sorted_words(d + 1, degree),
            Some(cap) => {
                let y = *d as Letter;
                let mut v = Vec::new();
                for xw in sorted_words(*d, degree) {
                    for j in 0..=cap {
                        let mut ls = xw.letters().to_vec();
                        ls.extend(std::iter::repeat_n(y, j));
                        v.push(Word::from_letters(&ls));
                    }
                }
                v
            }
        },
        AlgebraKind::MatrixPoly { n, d } => {
            let mut v = Vec::new();
            for xw in sorted_words(*d, degree) {
                v.push(xw.clone());
                for i in 0..*n {
                    for j in 0..*n {
                        if i == n - 1 && j == n - 1 {
                            continue;
                        }
                        v.push(xw.concat(&Word::letter((d + i * n + j) as Letter)));
                    }
                }
            }
            v
        }
        AlgebraKind::FreeWithRelations { rules } => {
            let g = pres.num_generators();
            let mut v = vec![Word::unit()];
            let mut frontier = vec![Word::unit()];
            for _ in 0..degree {
                let mut next = Vec::new();
                for w in &frontier {
                    for l in 0..g {
                        let cand = w.concat(&Word::letter(l as Letter));
                        let reducible = rules.iter().any(|r| {
                            let lhs = r.lhs.letters();
                            cand.letters().windows(lhs.len()).any(|win| win == lhs)
                        });
                        if !reducible {
                            next.push(cand);
                        }
                    }
                }
                if v.len() + next.len() > max_dim {
                    return Err(Error::DimensionOverflow { dim: v.len() + next.len(), cap: max_dim });
                }
                v.extend(next.iter().cloned());
                frontier = next;
            }
            v
        }
    };
    if out.len() > max_dim {
        return Err(Error::DimensionOverflow { dim: out.len(), cap: max_dim });
    }
    out.sort();
    Ok(out)
}

/// Nondecreasing words of length at most `degree` over `vars` letters.
fn sorted_words(vars: usize, degree: usize) -> Vec<Word> {
    let mut out = vec![Word::unit()];
    let mut frontier = vec![Word::unit()];
    for _ in 0..degree {
        let mut next = Vec::new();
        for w in &frontier {
            let start = w.letters().last().map_or(0, |&l| l as usize);
            for l in start..vars {
                next.push(w.concat(&Word::letter(l as Letter)));
            }
        }
        out.extend(next.iter().cloned());
        frontier = next;
    }
    out
}

/// `B = A_m` and `C = A_{m+1}` as normal-form monomials; levels are total degrees.
pub fn build_truncated_basis(pres: &Presentation, m: usize, opts: &TruncationOptions) -> Result<BasisChain> {
    let (b_cap, c_cap) = match (pres.kind(), opts.y_cap) {
        (AlgebraKind::Cylinder { .. }, Some(cap)) => {
            if cap == 0 {
                return Err(Error::InvalidInput("cylinder y-degree cap must be at least 1".into()));
            }
            (Some(cap), Some(cap + 1))
        }
        (AlgebraKind::Cylinder { .. }, None) => {
            return Err(Error::InvalidInput("cylinder truncation needs a y-degree cap".into()))
        }
        (_, Some(_)) => return Err(Error::InvalidInput("y-degree cap is only meaningful for cylinders".into())),
        (_, None) => (None, None),
    };
    let b = monomials_up_to(pres, m, b_cap, opts.max_dim)?;
    let c = monomials_up_to(pres, m + 1, c_cap, opts.max_dim)?;
    let in_b: BTreeSet<&Word> = b.iter().collect();
    let mut words = b.clone();
    words.extend(c.iter().filter(|w| !in_b.contains(w)).cloned());
    if words.len() > opts.max_dim {
        return Err(Error::DimensionOverflow { dim: words.len(), cap: opts.max_dim });
    }
    let levels = words.iter().map(Word::len).collect();
    let elements: Vec<NcPoly> = words.into_iter().map(NcPoly::word).collect();
    let coords = Coordinatizer::new(&elements);
    Ok(BasisChain { elements, levels, b_size: b.len(), truncation: Some(m), y_cap: opts.y_cap, coords })
}

#[derive(Clone, Debug, Serialize, PartialEq)]
pub struct HypothesisCheck {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Clone, Debug, Serialize, PartialEq)]
pub struct HypothesisReport {
    /// Prolongation depth used for `B^[m] ⊆ C`: smallest `m ≥ 1` with `2m ≥ δ`.
    pub m: usize,
    pub delta: usize,
    pub checks: Vec<HypothesisCheck>,
}

impl HypothesisReport {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn failures(&self) -> Vec<&HypothesisCheck> {
        self.checks.iter().filter(|c| !c.passed).collect()
    }
}

/// Checks that every element of level `l+1` lies in `V_l + V_l⁺` and that
/// level 0 is `C·1`. Returns a failure description.
fn connected_to_one(elements: &[NcPoly], levels: &[usize], pres: &Presentation) -> Result<Option<String>> {
    if elements.is_empty() || elements[0] != NcPoly::one() {
        return Ok(Some("first element is not the unit".into()));
    }
    let max_level = levels.iter().copied().max().unwrap_or(0);
    for (e, &l) in elements.iter().zip(levels) {
        if l == 0 && e.degree() != Some(0) {
            return Ok(Some("level 0 contains a non-scalar element".into()));
        }
    }
    for l in 0..max_level {
        let lower: Vec<NcPoly> = elements.iter().zip(levels).filter(|(_, &lv)| lv <= l).map(|(e, _)| e.clone()).collect();
        let mut span = prolongation(&lower, pres)?;
        span.extend(lower);
        let coords = Coordinatizer::new(&echelon_basis(&span));
        for (i, (e, _)) in elements.iter().zip(levels).enumerate().filter(|(_, (_, &lv))| lv == l + 1) {
            if !coords.contains(e) {
                return Ok(Some(format!("element {i} at level {} is not reached from level {l}", l + 1)));
            }
        }
    }
    Ok(None)
}

fn star_invariant(elements: &[NcPoly], pres: &Presentation) -> Result<Option<String>> {
    let coords = Coordinatizer::new(elements);
    let mut red = pres.reducer();
    for (i, e) in elements.iter().enumerate() {
        if !coords.contains(&red.reduce(&pres.star(e))?) {
            return Ok(Some(format!("adjoint of element {i} leaves the span")));
        }
    }
    Ok(None)
}

/// Verifies the hypotheses of the extension theorem on a chain: `B` and `C`
/// connected to 1, both *-invariant, and `B^[m] ⊆ C` with `2m ≥ δ`.
pub fn check_hypotheses(chain: &BasisChain, pres: &Presentation) -> Result<HypothesisReport> {
    let mut checks = Vec::new();
    let mut push = |name: &str, failure: Option<String>| {
        checks.push(HypothesisCheck {
            name: name.to_string(),
            passed: failure.is_none(),
            detail: failure.unwrap_or_else(|| "ok".into()),
        })
    };
    let b = &chain.elements[..chain.b_size];
    let b_levels = &chain.levels[..chain.b_size];
    push("c_connected_to_1", connected_to_one(&chain.elements, &chain.levels, pres)?);
    push("b_connected_to_1", connected_to_one(b, b_levels, pres)?);
    push("c_star_invariant", star_invariant(&chain.elements, pres)?);
    push("b_star_invariant", star_invariant(b, pres)?);

    let delta = pres.delta();
    let m = delta.div_ceil(2).max(1);
    let mut cumulative: Vec<NcPoly> = b.to_vec();
    let mut cur = b.to_vec();
    for _ in 0..m {
        cur = prolongation(&cur, pres)?;
        cumulative.extend(cur.iter().cloned());
    }
    let failure = cumulative
        .iter()
        .position(|p| !chain.coords.contains(p))
        .map(|_| format!("B^[{m}] is not contained in C"));
    push("b_prolongation_in_c", failure);
    Ok(HypothesisReport { m, delta, checks })
}
