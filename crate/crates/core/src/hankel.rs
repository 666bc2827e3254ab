//! Truncated hermitian functionals, their Hankel (Gram) matrices over the
//! C-basis, numerical kernels, and the flatness test.

use std::collections::{BTreeMap, BTreeSet};

use log::warn;
use nalgebra::{DMatrix, DVector, SymmetricEigen};
use num_complex::Complex64;
use serde::Serialize;

use crate::algebra::{NcPoly, Presentation, Word};
use crate::error::{Error, Result};
use crate::filtration::BasisChain;

/// Relative bound on `‖G - G*‖` beyond which moment data is rejected.
pub const HERMITIAN_LIMIT: f64 = 1e-8;

/// Numerical tolerances shared by the pipeline.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Tolerances {
    /// Relative singular-value threshold; `None` selects `dim · eps`.
    pub rank: Option<f64>,
    /// Relative slack for positivity: `λ_min ≥ -psd · max(1, ‖H‖)`.
    pub psd: f64,
    /// Relative bound for certificate residuals.
    pub residual: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances { rank: None, psd: 1e-9, residual: 1e-8 }
    }
}

impl Tolerances {
    pub fn with_rank(rank: f64) -> Self {
        Tolerances { rank: Some(rank), ..Default::default() }
    }

    pub fn relative_rank_tol(&self, dim: usize) -> f64 {
        self.rank.unwrap_or(dim.max(1) as f64 * f64::EPSILON)
    }
}

/// Hermitian linear functional on `C²`, given on normal-form words.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TruncatedFunctional {
    values: BTreeMap<Word, Complex64>,
}

impl TruncatedFunctional {
    pub fn new(values: BTreeMap<Word, Complex64>) -> Self {
        TruncatedFunctional { values }
    }

    pub fn values(&self) -> &BTreeMap<Word, Complex64> {
        &self.values
    }

    pub fn get(&self, w: &Word) -> Option<Complex64> {
        self.values.get(w).copied()
    }

    pub fn insert(&mut self, w: Word, v: Complex64) {
        self.values.insert(w, v);
    }

    pub fn max_abs(&self) -> f64 {
        self.values.values().map(|c| c.norm()).fold(0.0, f64::max)
    }

    /// `L(p)` for a normal-form polynomial.
    pub fn eval(&self, p: &NcPoly, pres: &Presentation) -> Result<Complex64> {
        let mut s = Complex64::new(0.0, 0.0);
        for (w, c) in p.terms() {
            let v = self.values.get(w).ok_or_else(|| Error::MissingMoment(pres.gens().format_word(w)))?;
            s += c * v;
        }
        Ok(s)
    }

    /// Largest `|L(w*) - conj(L(w))|` over stored words whose adjoint is
    /// fully stored, with the offending pair.
    pub fn hermitian_deviation(&self, pres: &Presentation) -> Result<(f64, Option<(Word, NcPoly)>)> {
        let mut red = pres.reducer();
        let mut worst = (0.0, None);
        for (w, v) in &self.values {
            let adj = red.reduce(&pres.star(&NcPoly::word(w.clone())))?;
            let Ok(val) = self.eval(&adj, pres) else { continue };
            let dev = (val - v.conj()).norm();
            if dev > worst.0 {
                worst = (dev, Some((w.clone(), adj)));
            }
        }
        Ok(worst)
    }
}

/// Normal forms of `b_i* · b_j` for a list of basis elements.
#[derive(Clone, Debug)]
pub struct ProductTable {
    dim: usize,
    products: Vec<NcPoly>,
}

impl ProductTable {
    pub fn new(pres: &Presentation, elements: &[NcPoly]) -> Result<Self> {
        let mut red = pres.reducer();
        let stars: Vec<NcPoly> = elements.iter().map(|e| pres.star(e)).collect();
        let dim = elements.len();
        let mut products = Vec::with_capacity(dim * dim);
        for s in &stars {
            for e in elements {
                products.push(red.product(s, e)?);
            }
        }
        Ok(ProductTable { dim, products })
    }

    pub fn for_chain(pres: &Presentation, chain: &BasisChain) -> Result<Self> {
        Self::new(pres, chain.elements())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Normal form of `b_row* · b_col`.
    pub fn get(&self, row: usize, col: usize) -> &NcPoly {
        &self.products[row * self.dim + col]
    }

    /// Normal-form words spanning `C²` (the moment support).
    pub fn support(&self) -> Vec<Word> {
        let set: BTreeSet<&Word> = self.products.iter().flat_map(|p| p.terms().map(|(w, _)| w)).collect();
        set.into_iter().cloned().collect()
    }

    /// Gram matrix `G[i][j] = value(b_i* b_j)` for any evaluator.
    pub fn gram_with<F>(&self, mut value: F) -> Result<DMatrix<Complex64>>
    where
        F: FnMut(&NcPoly) -> Result<Complex64>,
    {
        let mut g = DMatrix::zeros(self.dim, self.dim);
        for i in 0..self.dim {
            for j in 0..self.dim {
                g[(i, j)] = value(self.get(i, j))?;
            }
        }
        Ok(g)
    }
}

/// Moment support of a chain: normal-form words spanning `C²`.
pub fn moment_support(pres: &Presentation, chain: &BasisChain) -> Result<Vec<Word>> {
    Ok(ProductTable::for_chain(pres, chain)?.support())
}

#[derive(Clone, Debug)]
pub struct HankelMatrix {
    /// `g[(b, a)] = L(b* a)`, rows indexed by `b`.
    pub g: DMatrix<Complex64>,
    pub b_size: usize,
    /// `max |G - G*| / 2` before symmetrization.
    pub hermitian_deviation: f64,
}

impl HankelMatrix {
    /// Wraps a matrix, symmetrizing it and recording the deviation.
    pub fn from_matrix(g: DMatrix<Complex64>, b_size: usize) -> Result<Self> {
        if !g.is_square() || b_size > g.nrows() {
            return Err(Error::InvalidInput("Hankel matrix must be square with b_size <= dim".into()));
        }
        let adj = g.adjoint();
        let deviation = (&g - &adj).iter().map(|c| c.norm()).fold(0.0, f64::max) / 2.0;
        let scale = g.iter().map(|c| c.norm()).fold(0.0, f64::max);
        if deviation > HERMITIAN_LIMIT * scale.max(f64::MIN_POSITIVE) && deviation > 0.0 {
            return Err(Error::NonHermitian { deviation, limit: HERMITIAN_LIMIT * scale });
        }
        let g = (&g + &adj).scale(0.5);
        Ok(HankelMatrix { g, b_size, hermitian_deviation: deviation })
    }

    pub fn dim(&self) -> usize {
        self.g.nrows()
    }

    pub fn b_block(&self) -> DMatrix<Complex64> {
        self.g.view((0, 0), (self.b_size, self.b_size)).into_owned()
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.g.norm()
    }
}

/// `G[b][a] = L(b* a)` over the C-basis.
pub fn build_hankel(pres: &Presentation, chain: &BasisChain, functional: &TruncatedFunctional) -> Result<HankelMatrix> {
    let table = ProductTable::for_chain(pres, chain)?;
    build_hankel_with(&table, chain.b_size(), functional, pres)
}

pub fn build_hankel_with(
    table: &ProductTable,
    b_size: usize,
    functional: &TruncatedFunctional,
    pres: &Presentation,
) -> Result<HankelMatrix> {
    let g = table.gram_with(|p| functional.eval(p, pres))?;
    HankelMatrix::from_matrix(g, b_size)
}

/// Eigen-decomposition of a hermitian matrix with ascending eigenvalues.
#[derive(Clone, Debug)]
pub struct HermitianSpectrum {
    pub values: Vec<f64>,
    pub vectors: DMatrix<Complex64>,
}

impl HermitianSpectrum {
    pub fn new(m: &DMatrix<Complex64>) -> Self {
        let n = m.nrows();
        if n == 0 {
            return HermitianSpectrum { values: Vec::new(), vectors: DMatrix::zeros(0, 0) };
        }
        let herm = (m + m.adjoint()).scale(0.5);
        let eig = SymmetricEigen::new(herm);
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
        let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
        let vectors = DMatrix::from_fn(n, n, |r, c| eig.eigenvectors[(r, order[c])]);
        HermitianSpectrum { values, vectors }
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().map(|v| v.abs()).fold(0.0, f64::max)
    }

    pub fn min(&self) -> f64 {
        self.values.first().copied().unwrap_or(0.0)
    }

    pub fn rank(&self, threshold: f64) -> usize {
        self.values.iter().filter(|v| v.abs() > threshold).count()
    }

    /// Orthonormal eigenvectors with `|λ| <= threshold`.
    pub fn null_space(&self, threshold: f64) -> DMatrix<Complex64> {
        let idx: Vec<usize> = (0..self.values.len()).filter(|&i| self.values[i].abs() <= threshold).collect();
        DMatrix::from_fn(self.vectors.nrows(), idx.len(), |r, c| self.vectors[(r, idx[c])])
    }
}

/// Numerical null space of `H` (orthonormal columns): eigenvalues with
/// `|λ| <= tol · σ_max`.
pub fn kernel(h: &HankelMatrix, tol: f64) -> DMatrix<Complex64> {
    let spec = HermitianSpectrum::new(&h.g);
    spec.null_space(tol * spec.max_abs())
}

#[derive(Clone, Debug, Serialize)]
pub struct FlatnessCertificate {
    pub dim_c: usize,
    pub dim_b: usize,
    pub rank_c: usize,
    pub rank_b: usize,
    pub is_flat: bool,
    pub is_positive: bool,
    /// `C = B + K_L(C)` checked directly on the kernel basis.
    pub decomposition_holds: bool,
    pub unit_in_kernel: bool,
    /// Relative rank tolerance and the absolute threshold it induces.
    pub tol: f64,
    pub threshold: f64,
    pub sigma_max: f64,
    pub min_eigenvalue: f64,
    /// Smallest retained and largest discarded `|λ|` of the C-block.
    pub smallest_retained: Option<f64>,
    pub largest_discarded: Option<f64>,
    pub bprime_columns: Vec<usize>,
    #[serde(skip)]
    pub kernel_basis: DMatrix<Complex64>,
}

impl FlatnessCertificate {
    pub fn rank_gap(&self) -> usize {
        self.rank_c - self.rank_b.min(self.rank_c)
    }

    pub fn kernel_dim(&self) -> usize {
        self.kernel_basis.ncols()
    }
}

/// Rank of the kernel rows outside `B`; `C = B + K` iff it equals `dim - b_size`.
pub fn decomposition_check(kernel_basis: &DMatrix<Complex64>, b_size: usize) -> bool {
    let dim = kernel_basis.nrows();
    let k = dim - b_size;
    if k == 0 {
        return true;
    }
    if kernel_basis.ncols() < k {
        return false;
    }
    let bottom = kernel_basis.view((b_size, 0), (k, kernel_basis.ncols())).into_owned();
    let sv = bottom.singular_values();
    sv.iter().filter(|&&s| s > 1e-8).count() == k
}

pub fn is_flat(h: &HankelMatrix, tol: &Tolerances) -> FlatnessCertificate {
    let dim = h.dim();
    let rel = tol.relative_rank_tol(dim);
    let spec = HermitianSpectrum::new(&h.g);
    let sigma_max = spec.max_abs();
    let threshold = rel * sigma_max;
    let rank_c = spec.rank(threshold);
    let spec_b = HermitianSpectrum::new(&h.b_block());
    let rank_b = spec_b.rank(threshold);
    let kernel_basis = spec.null_space(threshold);
    let smallest_retained = spec.values.iter().map(|v| v.abs()).filter(|&v| v > threshold).reduce(f64::min);
    let largest_discarded = spec.values.iter().map(|v| v.abs()).filter(|&v| v <= threshold).reduce(f64::max);
    if let (Some(keep), Some(drop)) = (smallest_retained, largest_discarded) {
        if drop > 0.0 && keep / drop < 1e3 {
            warn!("rank decision near threshold {threshold:.3e}: retained {keep:.3e}, discarded {drop:.3e}");
        }
    }
    let decomposition_holds = decomposition_check(&kernel_basis, h.b_size);
    let unit_in_kernel = dim > 0 && {
        let e0: DVector<Complex64> = kernel_basis.row(0).transpose();
        (e0.norm_squared() - 1.0).abs() < 1e-8
    };
    let is_positive = positive_spectrum(&spec, tol.psd);
    let bprime_columns = if rank_c == rank_b {
        pivoted_columns(&h.g, h.b_size, rank_c, PivotOrder::Greedy, threshold)
    } else {
        Vec::new()
    };
    FlatnessCertificate {
        dim_c: dim,
        dim_b: h.b_size,
        rank_c,
        rank_b,
        is_flat: rank_c == rank_b,
        is_positive,
        decomposition_holds,
        unit_in_kernel,
        tol: rel,
        threshold,
        sigma_max,
        min_eigenvalue: spec.min(),
        smallest_retained,
        largest_discarded,
        bprime_columns,
        kernel_basis,
    }
}

fn positive_spectrum(spec: &HermitianSpectrum, psd_tol: f64) -> bool {
    spec.min() >= -psd_tol * spec.max_abs().max(1.0)
}

/// `L(a* a) ≥ 0` on C: `λ_min ≥ -tol · max(1, ‖H‖)`.
pub fn is_positive(h: &HankelMatrix, tol: f64) -> bool {
    positive_spectrum(&HermitianSpectrum::new(&h.g), tol)
}

#[derive(Clone, Debug, Serialize)]
pub struct ShmuljanFactor {
    #[serde(skip)]
    pub w: DMatrix<Complex64>,
    /// `‖B - A W‖_F` and `‖C - W* A W‖_F`.
    pub residual_b: f64,
    pub residual_c: f64,
}

/// `W` with `B = A W` and `C = W* A W` for the block split `[[A, B], [B*, C]]`.
pub fn shmuljan_factor(h: &HankelMatrix, cert: &FlatnessCertificate) -> Result<ShmuljanFactor> {
    if !cert.is_flat {
        return Err(Error::NotFlat { rank_c: cert.rank_c, rank_b: cert.rank_b });
    }
    let n = h.b_size;
    let k = h.dim() - n;
    let a = h.g.view((0, 0), (n, n)).into_owned();
    let b = h.g.view((0, n), (n, k)).into_owned();
    let c = h.g.view((n, n), (k, k)).into_owned();
    let w = if n == 0 {
        DMatrix::zeros(0, k)
    } else {
        let pinv = a.clone().svd(true, true).pseudo_inverse(cert.threshold.max(f64::MIN_POSITIVE)).expect("u and v computed");
        pinv * &b
    };
    let residual_b = (&b - &a * &w).norm();
    let residual_c = (&c - w.adjoint() * &a * &w).norm();
    Ok(ShmuljanFactor { w, residual_b, residual_c })
}

/// Pivot rule for choosing `B'` columns.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum PivotOrder {
    /// Largest residual norm first, ties to the lowest index.
    Greedy,
    /// Lowest index whose residual is not negligible.
    Sequential,
    /// Highest index whose residual is not negligible.
    Reversed,
}

/// Column-pivoted Gram-Schmidt over the first `b_size` columns of `g`,
/// forcing column 0 (the unit) first whenever it is nonzero.
pub fn pivoted_columns(g: &DMatrix<Complex64>, b_size: usize, count: usize, order: PivotOrder, threshold: f64) -> Vec<usize> {
    let mut chosen = Vec::new();
    if count == 0 || b_size == 0 {
        return chosen;
    }
    let mut residual: Vec<DVector<Complex64>> = (0..b_size).map(|j| g.column(j).into_owned()).collect();
    let floor = threshold.max(1e-14 * g.norm());
    let take = |j: usize, residual: &mut Vec<DVector<Complex64>>, chosen: &mut Vec<usize>| {
        let q = residual[j].normalize();
        for r in residual.iter_mut() {
            let proj = q.dotc(r);
            r.axpy(-proj, &q, Complex64::new(1.0, 0.0));
        }
        chosen.push(j);
    };
    if residual[0].norm() > floor {
        take(0, &mut residual, &mut chosen);
    }
    while chosen.len() < count {
        let norms: Vec<f64> = (0..b_size).map(|j| if chosen.contains(&j) { -1.0 } else { residual[j].norm() }).collect();
        let best = norms.iter().copied().fold(-1.0, f64::max);
        if best <= floor {
            break;
        }
        let accept = |j: &usize| norms[*j] >= 1e-3 * best;
        let pick = match order {
            PivotOrder::Greedy => (0..b_size).find(|&j| norms[j] == best),
            PivotOrder::Sequential => (0..b_size).find(accept),
            PivotOrder::Reversed => (0..b_size).rev().find(accept),
        };
        match pick {
            Some(j) => take(j, &mut residual, &mut chosen),
            None => break,
        }
    }
    chosen
}
