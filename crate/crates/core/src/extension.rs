//! The flat extension: `B'`, the projection `π`, multiplication operators,
//! the evaluation map `φ(p) = p(X)(1)`, the extended functional and the
//! finite-dimensional *-representation on `B'`.

use std::collections::HashMap;
use std::sync::Mutex;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::Serialize;

use crate::algebra::{NcPoly, Presentation, Word};
use crate::error::{Error, Result};
use crate::filtration::{monomials_up_to, BasisChain, DEFAULT_MAX_DIM};
use crate::hankel::{
    build_hankel_with, is_flat, pivoted_columns, FlatnessCertificate, HankelMatrix, PivotOrder, ProductTable,
    Tolerances, TruncatedFunctional,
};

const ZERO: Complex64 = Complex64::new(0.0, 0.0);
const ONE: Complex64 = Complex64::new(1.0, 0.0);

/// Gram condition numbers above this are treated as singular.
pub const MAX_GRAM_CONDITION: f64 = 1e14;

#[derive(Clone, Debug, Serialize)]
pub struct PrimeBasis {
    /// Indices into the C-basis; the unit comes first.
    pub columns: Vec<usize>,
    /// `gram[(p, q)] = L(b'_p* b'_q)`.
    #[serde(skip)]
    pub gram: DMatrix<Complex64>,
    pub gram_condition: f64,
}

impl PrimeBasis {
    pub fn dim(&self) -> usize {
        self.columns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.columns.is_empty()
    }
}

/// One matrix per generator acting on `B'`-coordinates.
#[derive(Clone, Debug)]
pub struct MultiplicationOperators {
    pub x: Vec<DMatrix<Complex64>>,
}

impl MultiplicationOperators {
    pub fn get(&self, i: usize) -> &DMatrix<Complex64> {
        &self.x[i]
    }

    pub fn dim(&self) -> usize {
        self.x.first().map_or(0, |m| m.nrows())
    }
}

/// Residuals certifying the construction.
#[derive(Clone, Debug, Default, Serialize)]
pub struct ExtensionCertificates {
    /// `max_g ‖g(X)‖` over the defining relations.
    pub relation_residual: f64,
    /// `max_i ‖gram X_i - X_inv(i)* gram‖ / ‖gram‖`.
    pub adjoint_residual: f64,
    /// `max |L̃(w) - L(w)|` over the moment support, and `max |L|`.
    pub agreement_residual: f64,
    pub moment_scale: f64,
    /// `‖π b' - b'‖` and `‖π κ‖` over the kernel basis.
    pub projection_identity_residual: f64,
    pub projection_kernel_residual: f64,
    pub gram_condition: f64,
    pub bprime_dim: usize,
    pub kernel_generators: usize,
}

/// Select `B'` among the B-columns of the Hankel matrix.
pub fn select_bprime(cert: &FlatnessCertificate, h: &HankelMatrix, order: PivotOrder) -> Result<PrimeBasis> {
    if !cert.is_flat {
        return Err(Error::NotFlat { rank_c: cert.rank_c, rank_b: cert.rank_b });
    }
    if cert.rank_c == 0 {
        return Ok(PrimeBasis { columns: Vec::new(), gram: DMatrix::zeros(0, 0), gram_condition: 1.0 });
    }
    if cert.unit_in_kernel {
        return Err(Error::InvalidInput("the unit lies in the kernel of a nonzero functional".into()));
    }
    let columns = pivoted_columns(&h.g, h.b_size, cert.rank_c, order, cert.threshold);
    if columns.len() != cert.rank_c || columns[0] != 0 {
        return Err(Error::SingularGram { condition: f64::INFINITY });
    }
    let gram = DMatrix::from_fn(columns.len(), columns.len(), |p, q| h.g[(columns[p], columns[q])]);
    let sv = gram.singular_values();
    let smax = sv.max();
    let smin = sv.min();
    let gram_condition = if smin > 0.0 { smax / smin } else { f64::INFINITY };
    if gram_condition > MAX_GRAM_CONDITION || smin <= cert.threshold {
        return Err(Error::SingularGram { condition: gram_condition });
    }
    Ok(PrimeBasis { columns, gram, gram_condition })
}

/// `π = G_JJ⁻¹ G[J, :]`, mapping C-coordinates to `B'`-coordinates.
pub fn build_projection(prime: &PrimeBasis, h: &HankelMatrix) -> Result<DMatrix<Complex64>> {
    let r = prime.dim();
    if r == 0 {
        return Ok(DMatrix::zeros(0, h.dim()));
    }
    let rows = DMatrix::from_fn(r, h.dim(), |p, c| h.g[(prime.columns[p], c)]);
    let lu = prime.gram.clone().lu();
    lu.solve(&rows).ok_or(Error::SingularGram { condition: prime.gram_condition })
}

/// `X_i` with column `q` equal to `π(a_i b'_q)`.
pub fn build_multiplication_ops(
    prime: &PrimeBasis,
    pi: &DMatrix<Complex64>,
    chain: &BasisChain,
    pres: &Presentation,
) -> Result<MultiplicationOperators> {
    let r = prime.dim();
    let mut red = pres.reducer();
    let mut x = Vec::with_capacity(pres.num_generators());
    for i in 0..pres.num_generators() {
        let gen = NcPoly::generator(i as u16);
        let mut m = DMatrix::zeros(r, r);
        for (q, &col) in prime.columns.iter().enumerate() {
            let prod = red.product(&gen, chain.element(col))?;
            let c = chain.coords(&prod).ok_or_else(|| {
                Error::EscapesC(format!(
                    "{} * element {} leaves span(C)",
                    pres.gens().names()[i],
                    col
                ))
            })?;
            m.set_column(q, &(pi * c));
        }
        x.push(m);
    }
    Ok(MultiplicationOperators { x })
}

/// Evaluate a polynomial at matrices: `Σ c_w X_{w_1} ⋯ X_{w_k}`.
pub fn eval_matrix_poly(p: &NcPoly, x: &[DMatrix<Complex64>], dim: usize) -> DMatrix<Complex64> {
    let mut out = DMatrix::zeros(dim, dim);
    for (w, c) in p.terms() {
        let mut m = DMatrix::identity(dim, dim);
        for &l in w.letters() {
            m *= &x[l as usize];
        }
        out += m * *c;
    }
    out
}

pub struct ExtensionResult {
    pres: Presentation,
    chain: BasisChain,
    prime: PrimeBasis,
    projection: DMatrix<Complex64>,
    ops: MultiplicationOperators,
    /// `ℓ_j = L(b'_j)`.
    ell: DVector<Complex64>,
    kernel_gens: Vec<NcPoly>,
    certificates: ExtensionCertificates,
    hankel: HankelMatrix,
    flatness: FlatnessCertificate,
    memo: Mutex<HashMap<Word, DVector<Complex64>>>,
}

impl std::fmt::Debug for ExtensionResult {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ExtensionResult")
            .field("prime", &self.prime)
            .field("certificates", &self.certificates)
            .finish_non_exhaustive()
    }
}

/// Full pipeline: Hankel matrix, flatness, `B'`, `π`, operators.
pub fn extend(
    pres: &Presentation,
    chain: &BasisChain,
    functional: &TruncatedFunctional,
    tol: &Tolerances,
    order: PivotOrder,
) -> Result<ExtensionResult> {
    let table = ProductTable::for_chain(pres, chain)?;
    let h = build_hankel_with(&table, chain.b_size(), functional, pres)?;
    let cert = is_flat(&h, tol);
    ExtensionResult::build(pres, chain, &table, functional, h, cert, order)
}

impl ExtensionResult {
    pub fn build(
        pres: &Presentation,
        chain: &BasisChain,
        table: &ProductTable,
        functional: &TruncatedFunctional,
        h: HankelMatrix,
        cert: FlatnessCertificate,
        order: PivotOrder,
    ) -> Result<Self> {
        let prime = select_bprime(&cert, &h, order)?;
        let projection = build_projection(&prime, &h)?;
        let ops = build_multiplication_ops(&prime, &projection, chain, pres)?;
        let ell = DVector::from_iterator(prime.dim(), prime.columns.iter().map(|&j| h.g[(0, j)]));
        let kernel_gens = kernel_generators(&prime, &projection, chain, pres)?;
        let mut res = ExtensionResult {
            pres: pres.clone(),
            chain: chain.clone(),
            prime,
            projection,
            ops,
            ell,
            kernel_gens,
            certificates: ExtensionCertificates::default(),
            hankel: h,
            flatness: cert,
            memo: Mutex::new(HashMap::new()),
        };
        res.certificates = res.compute_certificates(table, functional)?;
        Ok(res)
    }

    fn compute_certificates(&self, table: &ProductTable, functional: &TruncatedFunctional) -> Result<ExtensionCertificates> {
        let r = self.dim();
        let x = &self.ops.x;
        let relation_residual = self
            .pres
            .relations()
            .iter()
            .map(|g| eval_matrix_poly(g, x, r).norm())
            .fold(0.0, f64::max);
        let gnorm = self.prime.gram.norm().max(f64::MIN_POSITIVE);
        let adjoint_residual = (0..x.len())
            .map(|i| {
                let j = self.pres.gens().inv(i as u16) as usize;
                (&self.prime.gram * &x[i] - x[j].adjoint() * &self.prime.gram).norm() / gnorm
            })
            .fold(0.0, f64::max);
        let mut agreement_residual: f64 = 0.0;
        for w in table.support() {
            let l = functional.get(&w).ok_or_else(|| Error::MissingMoment(self.pres.gens().format_word(&w)))?;
            agreement_residual = agreement_residual.max((self.extended_word(&w) - l).norm());
        }
        let mut projection_identity_residual: f64 = 0.0;
        for (q, &col) in self.prime.columns.iter().enumerate() {
            let mut e = DVector::zeros(r);
            e[q] = ONE;
            projection_identity_residual =
                projection_identity_residual.max((self.projection.column(col) - e).norm());
        }
        let projection_kernel_residual = if self.flatness.kernel_basis.ncols() > 0 && r > 0 {
            (&self.projection * &self.flatness.kernel_basis).norm()
        } else {
            0.0
        };
        Ok(ExtensionCertificates {
            relation_residual,
            adjoint_residual,
            agreement_residual,
            moment_scale: functional.max_abs(),
            projection_identity_residual,
            projection_kernel_residual,
            gram_condition: self.prime.gram_condition,
            bprime_dim: r,
            kernel_generators: self.kernel_gens.len(),
        })
    }

    pub fn presentation(&self) -> &Presentation {
        &self.pres
    }

    pub fn chain(&self) -> &BasisChain {
        &self.chain
    }

    pub fn prime(&self) -> &PrimeBasis {
        &self.prime
    }

    pub fn gram(&self) -> &DMatrix<Complex64> {
        &self.prime.gram
    }

    pub fn projection(&self) -> &DMatrix<Complex64> {
        &self.projection
    }

    pub fn ops(&self) -> &MultiplicationOperators {
        &self.ops
    }

    pub fn kernel_generators(&self) -> &[NcPoly] {
        &self.kernel_gens
    }

    pub fn certificates(&self) -> &ExtensionCertificates {
        &self.certificates
    }

    pub fn hankel(&self) -> &HankelMatrix {
        &self.hankel
    }

    pub fn flatness(&self) -> &FlatnessCertificate {
        &self.flatness
    }

    /// `dim B'`; zero exactly when `L ≡ 0`.
    pub fn dim(&self) -> usize {
        self.prime.dim()
    }

    pub fn is_zero(&self) -> bool {
        self.dim() == 0
    }

    /// `B'` elements as polynomials.
    pub fn bprime_elements(&self) -> Vec<NcPoly> {
        self.prime.columns.iter().map(|&c| self.chain.element(c).clone()).collect()
    }

    /// Coordinates of `1` in `B'`.
    pub fn unit_vector(&self) -> DVector<Complex64> {
        let mut e = DVector::zeros(self.dim());
        if self.dim() > 0 {
            e[0] = ONE;
        }
        e
    }

    /// `⟨v, w⟩_L = w* gram v`.
    pub fn inner(&self, v: &DVector<Complex64>, w: &DVector<Complex64>) -> Complex64 {
        (w.adjoint() * &self.prime.gram * v)[(0, 0)]
    }

    /// `φ(w) = w(X) e_1`, memoized over suffixes.
    pub fn phi_word(&self, w: &Word) -> DVector<Complex64> {
        let letters = w.letters();
        let mut memo = self.memo.lock().expect("memo lock");
        let mut start = letters.len();
        let mut v = self.unit_vector();
        for s in 0..letters.len() {
            if let Some(hit) = memo.get(&Word::from_letters(&letters[s..])) {
                start = s;
                v = hit.clone();
                break;
            }
        }
        for s in (0..start).rev() {
            v = &self.ops.x[letters[s] as usize] * v;
            memo.insert(Word::from_letters(&letters[s..]), v.clone());
        }
        v
    }

    /// `φ(p) = p(X)(1)` in `B'`-coordinates.
    pub fn phi(&self, p: &NcPoly) -> DVector<Complex64> {
        let mut out = DVector::zeros(self.dim());
        for (w, c) in p.terms() {
            out += self.phi_word(w) * *c;
        }
        out
    }

    /// `B'`-coordinates as a polynomial.
    pub fn poly_from_prime_coords(&self, v: &DVector<Complex64>) -> NcPoly {
        let mut p = NcPoly::zero();
        for (q, &c) in self.prime.columns.iter().enumerate() {
            if v[q] != ZERO {
                p.add_scaled(self.chain.element(c), v[q]);
            }
        }
        p
    }

    fn extended_word(&self, w: &Word) -> Complex64 {
        if self.is_zero() {
            return ZERO;
        }
        self.ell.dot(&self.phi_word(w))
    }

    /// `L̃(a) = L(φ(a))`.
    pub fn extended_value(&self, a: &NcPoly) -> Complex64 {
        a.terms().map(|(w, c)| c * self.extended_word(w)).sum()
    }

    /// `ρ_L(a) = a(X)` on `B'`.
    pub fn gns_representation(&self, a: &NcPoly) -> DMatrix<Complex64> {
        eval_matrix_poly(a, &self.ops.x, self.dim())
    }

    /// `π` applied to a normal-form element of `C`.
    pub fn project(&self, c: &NcPoly) -> Option<DVector<Complex64>> {
        self.chain.coords(c).map(|v| &self.projection * v)
    }
}

/// `{a_i b' - π(a_i b')}`, each scaled to unit max coefficient.
fn kernel_generators(
    prime: &PrimeBasis,
    pi: &DMatrix<Complex64>,
    chain: &BasisChain,
    pres: &Presentation,
) -> Result<Vec<NcPoly>> {
    let mut red = pres.reducer();
    let mut out = Vec::new();
    for i in 0..pres.num_generators() {
        let gen = NcPoly::generator(i as u16);
        for &col in &prime.columns {
            let c = red.product(&gen, chain.element(col))?;
            let Some(coords) = chain.coords(&c) else { continue };
            let beta = pi * coords;
            let mut k = c.clone();
            for (q, &bc) in prime.columns.iter().enumerate() {
                k.add_scaled(chain.element(bc), -beta[q]);
            }
            let scale = c.max_abs_coefficient().max(1.0);
            k.prune(1e-12 * scale);
            let m = k.max_abs_coefficient();
            if m > 1e-10 * scale {
                out.push(k.scale(Complex64::new(1.0 / m, 0.0)));
            }
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, Serialize)]
pub struct UniquenessReport {
    pub degree: usize,
    pub words_checked: usize,
    pub max_difference: f64,
    pub scale: f64,
    pub passed: bool,
}

/// Compare two extensions on all normal-form monomials up to `degree`.
pub fn uniqueness_check(a: &ExtensionResult, b: &ExtensionResult, degree: usize, tol: f64) -> Result<UniquenessReport> {
    let words = monomials_up_to(a.presentation(), degree, a.chain().y_cap().map(|c| c + degree), DEFAULT_MAX_DIM)?;
    let mut max_difference: f64 = 0.0;
    let mut scale: f64 = 0.0;
    for w in &words {
        let va = a.extended_word(w);
        let vb = b.extended_word(w);
        scale = scale.max(va.norm()).max(vb.norm());
        max_difference = max_difference.max((va - vb).norm());
    }
    let passed = max_difference <= tol * scale.max(1.0);
    Ok(UniquenessReport { degree, words_checked: words.len(), max_difference, scale, passed })
}
