//! Vector functionals, atom extraction for commutative and cylinder
//! problems, matrix-polynomial decompositions and enveloping-algebra
//! representations.

use nalgebra::{Cholesky, DMatrix, DVector};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::algebra::{AlgebraKind, NcPoly, Presentation, StructureConstants, Word};
use crate::error::{Error, Result};
use crate::extension::{eval_matrix_poly, extend, ExtensionResult};
use crate::filtration::{build_truncated_basis, BasisChain, TruncationOptions};
use crate::hankel::{is_flat, build_hankel_with, PivotOrder, ProductTable, Tolerances, TruncatedFunctional};

const ZERO: Complex64 = Complex64::new(0.0, 0.0);
const ONE: Complex64 = Complex64::new(1.0, 0.0);

/// Relative residual allowed on the relations of a representation.
pub const RELATION_TOL: f64 = 1e-10;
/// Relative residual allowed on joint diagonalization.
pub const JOINT_TOL: f64 = 1e-6;
/// Eigenvalues closer than this fraction of the spread share a cluster.
pub const CLUSTER_SEPARATION: f64 = 1e-6;
pub const JOINT_RETRIES: usize = 3;
/// Weights below `-NEGATIVE_WEIGHT_TOL` are errors; those in between are dropped.
pub const NEGATIVE_WEIGHT_TOL: f64 = 1e-9;

/// A *-representation on `C^N` together with a vector.
#[derive(Clone, Debug)]
pub struct VectorRep {
    pub matrices: Vec<DMatrix<Complex64>>,
    pub v: DVector<Complex64>,
}

impl VectorRep {
    pub fn dim(&self) -> usize {
        self.v.len()
    }

    /// `w(M) v`.
    pub fn apply_word(&self, w: &Word) -> DVector<Complex64> {
        let mut x = self.v.clone();
        for &l in w.letters().iter().rev() {
            x = &self.matrices[l as usize] * x;
        }
        x
    }

    /// `⟨w(M) v, v⟩`.
    pub fn moment(&self, w: &Word) -> Complex64 {
        self.v.dotc(&self.apply_word(w))
    }
}

/// Check that the matrices respect the involution and the relations.
pub fn check_representation(pres: &Presentation, rep: &VectorRep) -> Result<()> {
    let n = rep.dim();
    if rep.matrices.len() != pres.num_generators() {
        return Err(Error::InvalidInput(format!(
            "expected {} matrices, found {}",
            pres.num_generators(),
            rep.matrices.len()
        )));
    }
    if rep.matrices.iter().any(|m| m.nrows() != n || m.ncols() != n) {
        return Err(Error::InvalidInput(format!("representation matrices must be {n}x{n}")));
    }
    if rep.v.norm() == 0.0 {
        return Err(Error::InvalidInput("vector must be nonzero".into()));
    }
    let scale = rep.matrices.iter().map(|m| m.norm()).fold(1.0, f64::max);
    for (i, m) in rep.matrices.iter().enumerate() {
        let j = pres.gens().inv(i as u16) as usize;
        let dev = (m.adjoint() - &rep.matrices[j]).norm();
        if dev > RELATION_TOL * scale {
            return Err(Error::InvalidInput(format!(
                "matrix for {} is not the adjoint of the matrix for {} (deviation {dev:.3e})",
                pres.gens().names()[j],
                pres.gens().names()[i]
            )));
        }
    }
    for (index, g) in pres.relations().iter().enumerate() {
        let deg = g.degree().unwrap_or(0) as i32;
        let residual = eval_matrix_poly(g, &rep.matrices, n).norm();
        if residual > RELATION_TOL * scale.powi(deg.max(1)) {
            return Err(Error::RelationViolation { index, residual });
        }
    }
    Ok(())
}

/// `L(w) = ⟨w(M) v, v⟩` on every word spanning `C²`.
pub fn vector_functional(pres: &Presentation, rep: &VectorRep, chain: &BasisChain) -> Result<TruncatedFunctional> {
    check_representation(pres, rep)?;
    let table = ProductTable::for_chain(pres, chain)?;
    let mut f = TruncatedFunctional::default();
    for w in table.support() {
        let v = rep.moment(&w);
        f.insert(w, v);
    }
    Ok(f)
}

/// Diagonal representation of a finite atomic measure with cyclic vector `√w`.
pub fn atomic_rep(atoms: &[Vec<f64>], weights: &[f64]) -> VectorRep {
    let k = atoms.len();
    let d = atoms.first().map_or(0, Vec::len);
    let matrices = (0..d)
        .map(|i| DMatrix::from_diagonal(&DVector::from_iterator(k, atoms.iter().map(|a| Complex64::new(a[i], 0.0)))))
        .collect();
    let v = DVector::from_iterator(k, weights.iter().map(|w| Complex64::new(w.sqrt(), 0.0)));
    VectorRep { matrices, v }
}

/// `C^n ⊗ C^r` model of `Σ_i ⟨P(t_i) u_i, u_i⟩`.
pub fn matrix_poly_rep(n: usize, points: &[Vec<f64>], vectors: &[DVector<Complex64>]) -> VectorRep {
    let r = points.len();
    let d = points.first().map_or(0, Vec::len);
    let dim = n * r;
    let idx = |a: usize, i: usize| a * r + i;
    let mut matrices = Vec::with_capacity(d + n * n);
    for l in 0..d {
        let mut m = DMatrix::zeros(dim, dim);
        for a in 0..n {
            for (i, t) in points.iter().enumerate() {
                m[(idx(a, i), idx(a, i))] = Complex64::new(t[l], 0.0);
            }
        }
        matrices.push(m);
    }
    for a in 0..n {
        for b in 0..n {
            let mut m = DMatrix::zeros(dim, dim);
            for i in 0..r {
                m[(idx(a, i), idx(b, i))] = ONE;
            }
            matrices.push(m);
        }
    }
    let mut v = DVector::zeros(dim);
    for (i, u) in vectors.iter().enumerate() {
        for a in 0..n {
            v[idx(a, i)] = u[a];
        }
    }
    VectorRep { matrices, v }
}

/// Hermitian spin matrices `(J_x, J_y, J_z)` of dimension `two_j + 1`.
pub fn su2_spin(two_j: usize) -> Vec<DMatrix<Complex64>> {
    let dim = two_j + 1;
    let j = two_j as f64 / 2.0;
    let m = |k: usize| j - k as f64;
    let mut plus = DMatrix::zeros(dim, dim);
    for k in 1..dim {
        let mk = m(k);
        plus[(k - 1, k)] = Complex64::new((j * (j + 1.0) - mk * (mk + 1.0)).sqrt(), 0.0);
    }
    let minus = plus.adjoint();
    let jx = (&plus + &minus).scale(0.5);
    let jy = (&plus - &minus) * Complex64::new(0.0, -0.5);
    let jz = DMatrix::from_diagonal(&DVector::from_iterator(dim, (0..dim).map(|k| Complex64::new(m(k), 0.0))));
    vec![jx, jy, jz]
}

/// Block-diagonal sum of representations with the same generator count.
pub fn direct_sum(parts: &[Vec<DMatrix<Complex64>>]) -> Vec<DMatrix<Complex64>> {
    let count = parts.first().map_or(0, Vec::len);
    let dim: usize = parts.iter().map(|p| p[0].nrows()).sum();
    (0..count)
        .map(|g| {
            let mut m = DMatrix::zeros(dim, dim);
            let mut off = 0;
            for p in parts {
                let k = p[g].nrows();
                m.view_mut((off, off), (k, k)).copy_from(&p[g]);
                off += k;
            }
            m
        })
        .collect()
}

#[derive(Clone, Debug, Serialize)]
pub struct AtomicMeasure {
    pub atoms: Vec<Vec<f64>>,
    pub weights: Vec<f64>,
    /// `max |Σ w_k w(t_k) - L(w)|` over the reference moments.
    pub reconstruction_residual: f64,
    pub joint_residual: f64,
}

impl AtomicMeasure {
    pub fn moment(&self, w: &Word) -> f64 {
        self.atoms.iter().zip(&self.weights).map(|(t, wt)| wt * eval_word_at(w, t)).sum()
    }

    pub fn total_mass(&self) -> f64 {
        self.weights.iter().sum()
    }
}

fn eval_word_at(w: &Word, t: &[f64]) -> f64 {
    w.letters().iter().map(|&l| t[l as usize]).product()
}

fn eval_poly_at(p: &NcPoly, t: &[f64]) -> Complex64 {
    p.terms().map(|(w, c)| c * eval_word_at(w, t)).sum()
}

/// Max deviation between a model and the reference moments.
fn moment_residual<F: Fn(&Word) -> Complex64>(reference: &TruncatedFunctional, model: F) -> f64 {
    reference.values().iter().map(|(w, v)| (model(w) - v).norm()).fold(0.0, f64::max)
}

/// `gram = R* R` with `R` upper triangular.
fn gram_factor(gram: &DMatrix<Complex64>) -> Result<(DMatrix<Complex64>, DMatrix<Complex64>)> {
    if gram.nrows() == 0 {
        return Ok((DMatrix::zeros(0, 0), DMatrix::zeros(0, 0)));
    }
    let herm = (gram + gram.adjoint()).scale(0.5);
    let min_eigenvalue = crate::hankel::HermitianSpectrum::new(&herm).min();
    let chol = Cholesky::new(herm).ok_or(Error::GramNotPD { min_eigenvalue })?;
    if min_eigenvalue <= 0.0 {
        return Err(Error::GramNotPD { min_eigenvalue });
    }
    let r = chol.l().adjoint();
    let r_inv = r.clone().try_inverse().ok_or(Error::GramNotPD { min_eigenvalue })?;
    Ok((r, r_inv))
}

/// Operators in an orthonormal basis of `B'` and the cyclic vector.
fn orthonormal_ops(ext: &ExtensionResult) -> Result<(Vec<DMatrix<Complex64>>, DVector<Complex64>)> {
    let (r, r_inv) = gram_factor(ext.gram())?;
    let h = ext.ops().x.iter().map(|x| &r * x * &r_inv).collect();
    let v = &r * ext.unit_vector();
    Ok((h, v))
}

/// One joint eigenspace.
#[derive(Clone, Debug)]
struct Cluster {
    basis: DMatrix<Complex64>,
    point: Vec<f64>,
}

/// Joint spectral decomposition of commuting hermitian matrices.
fn joint_diagonalize(h: &[DMatrix<Complex64>], rng: &mut ChaCha8Rng) -> std::result::Result<Vec<Cluster>, f64> {
    let n = h.first().map_or(0, |m| m.nrows());
    if n == 0 {
        return Ok(Vec::new());
    }
    let scale = h.iter().map(|m| m.norm()).fold(1.0, f64::max);
    let mut best_residual = f64::INFINITY;
    for _ in 0..=JOINT_RETRIES {
        let coeffs: Vec<f64> = h.iter().map(|_| rng.random_range(-1.0..1.0)).collect();
        let mut comb = DMatrix::zeros(n, n);
        for (c, m) in coeffs.iter().zip(h) {
            comb += m * Complex64::new(*c, 0.0);
        }
        let spec = crate::hankel::HermitianSpectrum::new(&comb);
        let spread = (spec.values[n - 1] - spec.values[0]).max(f64::MIN_POSITIVE);
        let mut groups: Vec<Vec<usize>> = vec![vec![0]];
        let mut ambiguous = false;
        for k in 1..n {
            let gap = spec.values[k] - spec.values[k - 1];
            if gap < CLUSTER_SEPARATION * spread {
                groups.last_mut().unwrap().push(k);
            } else {
                groups.push(vec![k]);
            }
            if gap > 0.1 * CLUSTER_SEPARATION * spread && gap < 10.0 * CLUSTER_SEPARATION * spread {
                ambiguous = true;
            }
        }
        let mut clusters = Vec::with_capacity(groups.len());
        let mut residual: f64 = 0.0;
        for g in &groups {
            let q = DMatrix::from_fn(n, g.len(), |r, c| spec.vectors[(r, g[c])]);
            let mut point = Vec::with_capacity(h.len());
            for m in h {
                let block = q.adjoint() * m * &q;
                let t = block.trace().re / g.len() as f64;
                let dev = (m * &q - &q * Complex64::new(t, 0.0)).norm();
                residual = residual.max(dev / scale);
                point.push(t);
            }
            clusters.push(Cluster { basis: q, point });
        }
        best_residual = best_residual.min(residual);
        if residual <= JOINT_TOL && !ambiguous {
            return Ok(clusters);
        }
    }
    Err(best_residual)
}

fn ensure_commuting(h: &[DMatrix<Complex64>]) -> Result<()> {
    let scale = h.iter().map(|m| m.norm()).fold(1.0, f64::max);
    for a in 0..h.len() {
        for b in (a + 1)..h.len() {
            let residual = (&h[a] * &h[b] - &h[b] * &h[a]).norm() / (scale * scale);
            if residual > JOINT_TOL {
                return Err(Error::NonCommutingOps { residual });
            }
        }
    }
    Ok(())
}

fn commuting_generators(pres: &Presentation) -> Result<usize> {
    match pres.kind() {
        AlgebraKind::Commutative { vars } => Ok(*vars),
        AlgebraKind::Cylinder { d } => Ok(d + 1),
        AlgebraKind::Lie { structure } if structure.upper_entries().is_empty() => Ok(structure.dim()),
        _ => Err(Error::WrongKind { expected: "commutative", found: pres.kind().label() }),
    }
}

/// Atoms of a flat positive functional on a commutative algebra.
pub fn extract_atoms_commutative(
    ext: &ExtensionResult,
    reference: &TruncatedFunctional,
    seed: u64,
) -> Result<AtomicMeasure> {
    commuting_generators(ext.presentation())?;
    if ext.is_zero() {
        return Ok(AtomicMeasure { atoms: Vec::new(), weights: Vec::new(), reconstruction_residual: moment_residual(reference, |_| ZERO), joint_residual: 0.0 });
    }
    let (h, _) = orthonormal_ops(ext)?;
    ensure_commuting(&h)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let clusters = joint_diagonalize(&h, &mut rng).map_err(|residual| Error::NonCommutingOps { residual })?;
    let joint_residual = joint_residual(&h, &clusters);
    let points: Vec<Vec<f64>> = clusters.iter().map(|c| c.point.clone()).collect();
    let bprime = ext.bprime_elements();
    let k = points.len();
    let vander = DMatrix::from_fn(bprime.len(), k, |q, j| eval_poly_at(&bprime[q], &points[j]));
    let rhs = DVector::from_iterator(bprime.len(), bprime.iter().map(|b| ext.extended_value(b)));
    let sol = vander
        .svd(true, true)
        .solve(&rhs, 1e-13)
        .map_err(|e| Error::InvalidInput(format!("weight system: {e}")))?;
    let mass = rhs[0].re.abs().max(f64::MIN_POSITIVE);
    let mut atoms = Vec::new();
    let mut weights = Vec::new();
    for (j, p) in points.into_iter().enumerate() {
        let w = sol[j].re;
        if w < -NEGATIVE_WEIGHT_TOL * mass.max(1.0) {
            return Err(Error::NegativeWeight { weight: w });
        }
        if w > 0.0 {
            atoms.push(p);
            weights.push(w);
        }
    }
    let mut m = AtomicMeasure { atoms, weights, reconstruction_residual: 0.0, joint_residual };
    m.reconstruction_residual = moment_residual(reference, |w| Complex64::new(m.moment(w), 0.0));
    Ok(m)
}

fn joint_residual(h: &[DMatrix<Complex64>], clusters: &[Cluster]) -> f64 {
    let mut r: f64 = 0.0;
    for c in clusters {
        for (m, t) in h.iter().zip(&c.point) {
            r = r.max((m * &c.basis - &c.basis * Complex64::new(*t, 0.0)).norm());
        }
    }
    r
}

pub fn binomial(n: usize, k: usize) -> usize {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    (0..k).fold(1usize, |acc, i| acc * (n - i) / (i + 1))
}

#[derive(Clone, Debug, Serialize)]
pub struct CylinderMeasure {
    /// Atoms `(t, s)` in `R^{d+1}`; `s` is the `y` coordinate.
    pub measure: AtomicMeasure,
    /// Distinct `x`-projections `t_j`.
    pub lines: Vec<Vec<f64>>,
    pub bound: usize,
    /// `max |Σ w_k t_k^α - L(x^α)|` over `x`-only reference moments.
    pub x_marginal_residual: f64,
}

/// Atoms on finitely many lines `t_j × R`.
pub fn solve_cylinder(ext: &ExtensionResult, reference: &TruncatedFunctional, seed: u64) -> Result<CylinderMeasure> {
    let d = match ext.presentation().kind() {
        AlgebraKind::Cylinder { d } => *d,
        other => return Err(Error::WrongKind { expected: "cylinder", found: other.label() }),
    };
    let m = ext.chain().truncation().ok_or_else(|| Error::InvalidInput("cylinder chain has no truncation degree".into()))?;
    let measure = extract_atoms_commutative(ext, reference, seed)?;
    let mut lines: Vec<Vec<f64>> = Vec::new();
    let spread = measure.atoms.iter().flat_map(|a| a[..d].iter()).fold(0.0f64, |s, v| s.max(v.abs())).max(1.0);
    for a in &measure.atoms {
        let t = &a[..d];
        if !lines.iter().any(|l| l.iter().zip(t).all(|(p, q)| (p - q).abs() <= 1e-6 * spread)) {
            lines.push(t.to_vec());
        }
    }
    let bound = binomial(d + 1 + m, m);
    if lines.len() > bound {
        return Err(Error::BoundViolation { found: lines.len(), bound });
    }
    let y = d as u16;
    let x_marginal_residual = reference
        .values()
        .iter()
        .filter(|(w, _)| !w.letters().contains(&y))
        .map(|(w, v)| (measure.moment(w) - v.re).abs().max(v.im.abs()))
        .fold(0.0, f64::max);
    Ok(CylinderMeasure { measure, lines, bound, x_marginal_residual })
}

#[derive(Clone, Debug, Serialize)]
pub struct MatrixPolyDecomposition {
    pub n: usize,
    pub points: Vec<Vec<f64>>,
    #[serde(skip)]
    pub vectors: Vec<DVector<Complex64>>,
    /// Reproduction residual over the reference moments.
    pub residual: f64,
    pub central_residual: f64,
}

impl MatrixPolyDecomposition {
    /// `Σ_i ⟨P(t_i) u_i, u_i⟩` for a word read as a matrix polynomial.
    pub fn value(&self, w: &Word, d: usize) -> Complex64 {
        let n = self.n;
        self.points
            .iter()
            .zip(&self.vectors)
            .map(|(t, u)| {
                let mut p = DMatrix::<Complex64>::identity(n, n);
                for &l in w.letters() {
                    let l = l as usize;
                    if l < d {
                        p *= Complex64::new(t[l], 0.0);
                    } else {
                        let (a, b) = ((l - d) / n, (l - d) % n);
                        let mut e = DMatrix::zeros(n, n);
                        e[(a, b)] = ONE;
                        p *= e;
                    }
                }
                u.dotc(&(p * u))
            })
            .sum()
    }
}

/// Fix the phase so the largest-magnitude entry is real positive.
pub fn normalize_phase(u: &DVector<Complex64>) -> DVector<Complex64> {
    let Some((_, big)) = u.iter().enumerate().max_by(|a, b| a.1.norm().total_cmp(&b.1.norm())) else {
        return u.clone();
    };
    if big.norm() == 0.0 {
        return u.clone();
    }
    u * (big.conj() / big.norm())
}

/// `L(P) = Σ_i Σ_jk p_jk(t_i) u_ki conj(u_ji)`.
pub fn solve_matrix_poly(
    ext: &ExtensionResult,
    reference: &TruncatedFunctional,
    seed: u64,
) -> Result<MatrixPolyDecomposition> {
    let (n, d) = match ext.presentation().kind() {
        AlgebraKind::MatrixPoly { n, d } => (*n, *d),
        other => return Err(Error::WrongKind { expected: "matrix_poly", found: other.label() }),
    };
    if ext.is_zero() {
        let mut dec = MatrixPolyDecomposition { n, points: Vec::new(), vectors: Vec::new(), residual: 0.0, central_residual: 0.0 };
        dec.residual = moment_residual(reference, |w| dec.value(w, d));
        return Ok(dec);
    }
    let (h, v) = orthonormal_ops(ext)?;
    let scale = h.iter().map(|m| m.norm()).fold(1.0, f64::max);
    let mut central_residual: f64 = 0.0;
    for x in &h[..d] {
        for m in &h {
            central_residual = central_residual.max((x * m - m * x).norm() / (scale * scale));
        }
    }
    if central_residual > JOINT_TOL {
        return Err(Error::CenterNotDiagonalizable { residual: central_residual });
    }
    let clusters = if d == 0 {
        vec![Cluster { basis: DMatrix::identity(v.len(), v.len()), point: Vec::new() }]
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        joint_diagonalize(&h[..d], &mut rng).map_err(|residual| Error::CenterNotDiagonalizable { residual })?
    };
    let mut points = Vec::new();
    let mut vectors = Vec::new();
    let mass = v.norm_squared();
    for c in &clusters {
        let pv = &c.basis * (c.basis.adjoint() * &v);
        // moment matrix of the block: mm[(k, j)] = ⟨ρ(e_jk) P v, P v⟩
        let mm = DMatrix::from_fn(n, n, |k, j| pv.dotc(&(&h[d + j * n + k] * &pv)));
        let spec = crate::hankel::HermitianSpectrum::new(&mm);
        for (idx, &lam) in spec.values.iter().enumerate() {
            if lam < -NEGATIVE_WEIGHT_TOL * mass.max(1.0) {
                return Err(Error::NegativeWeight { weight: lam });
            }
            if lam > 1e-12 * mass.max(1.0) {
                let u = spec.vectors.column(idx) * Complex64::new(lam.sqrt(), 0.0);
                points.push(c.point.clone());
                vectors.push(normalize_phase(&u));
            }
        }
    }
    let mut dec = MatrixPolyDecomposition { n, points, vectors, residual: 0.0, central_residual };
    dec.residual = moment_residual(reference, |w| dec.value(w, d));
    Ok(dec)
}

#[derive(Clone, Debug, Serialize)]
pub struct LieRepresentationPackage {
    #[serde(skip)]
    pub h: Vec<DMatrix<Complex64>>,
    #[serde(skip)]
    pub v: DVector<Complex64>,
    #[serde(skip)]
    pub gram: DMatrix<Complex64>,
    pub dim: usize,
    /// `max ‖[H_j, H_k] - i Σ_l c_jkl H_l‖`.
    pub commutator_residual: f64,
    /// `max |⟨w(H) v, v⟩ - L(w)|` over the reference moments.
    pub envelope_residual: f64,
    /// `max ‖H_j - H_j*‖`.
    pub hermitian_residual: f64,
}

/// Hermitian `H_j = ρ(i y_j)` in an orthonormal basis of `B'`.
pub fn solve_enveloping(ext: &ExtensionResult, reference: &TruncatedFunctional) -> Result<LieRepresentationPackage> {
    let structure = match ext.presentation().kind() {
        AlgebraKind::Lie { structure } => structure.clone(),
        other => return Err(Error::WrongKind { expected: "lie", found: other.label() }),
    };
    let (h, v) = orthonormal_ops(ext)?;
    let dim = v.len();
    let hermitian_residual = h.iter().map(|m| (m - m.adjoint()).norm()).fold(0.0, f64::max);
    let commutator_residual = lie_residual(&structure, &h);
    let rep = VectorRep { matrices: h.clone(), v: v.clone() };
    let envelope_residual = moment_residual(reference, |w| if dim == 0 { ZERO } else { rep.moment(w) });
    Ok(LieRepresentationPackage {
        h,
        v,
        gram: ext.gram().clone(),
        dim,
        commutator_residual,
        envelope_residual,
        hermitian_residual,
    })
}

/// `max_{j<k} ‖[H_j, H_k] - i Σ_l c_jkl H_l‖`.
pub fn lie_residual(structure: &StructureConstants, h: &[DMatrix<Complex64>]) -> f64 {
    let d = structure.dim();
    let mut r: f64 = 0.0;
    for j in 0..d {
        for k in (j + 1)..d {
            let mut m = &h[j] * &h[k] - &h[k] * &h[j];
            for l in 0..d {
                let c = structure.get(j, k, l);
                if c != 0.0 {
                    m -= &h[l] * Complex64::new(0.0, c);
                }
            }
            r = r.max(m.norm());
        }
    }
    r
}

/// Test-instance families.
#[derive(Clone, Debug, PartialEq)]
pub enum InstanceKind {
    Commutative { d: usize, atoms: usize },
    Cylinder { d: usize, lines: usize, per_line: usize },
    MatrixPoly { n: usize, d: usize, r: usize },
    Su2 { max_dim: usize },
    Heisenberg { atoms: usize },
}

/// Generating data behind an instance.
#[derive(Clone, Debug)]
pub enum GroundTruth {
    Atoms { atoms: Vec<Vec<f64>>, weights: Vec<f64> },
    MatrixPoly { points: Vec<Vec<f64>>, vectors: Vec<DVector<Complex64>> },
    Representation,
}

#[derive(Clone, Debug)]
pub struct Instance {
    pub pres: Presentation,
    pub chain: BasisChain,
    pub functional: TruncatedFunctional,
    pub rep: VectorRep,
    pub truth: GroundTruth,
    pub m: usize,
    pub y_cap: Option<usize>,
}

/// First truncation `(m, y_cap)` in the search order at which the vector
/// functional is flat.
pub fn smallest_flat_instance(
    pres: &Presentation,
    rep: &VectorRep,
    max_m: usize,
    y_caps: &[Option<usize>],
) -> Result<Option<(BasisChain, TruncatedFunctional, usize, Option<usize>)>> {
    let tol = Tolerances::with_rank(1e-10);
    for m in 0..=max_m {
        for &cap in y_caps {
            let opts = TruncationOptions { y_cap: cap, ..Default::default() };
            let chain = build_truncated_basis(pres, m, &opts)?;
            let f = vector_functional(pres, rep, &chain)?;
            let table = ProductTable::for_chain(pres, &chain)?;
            let h = build_hankel_with(&table, chain.b_size(), &f, pres)?;
            let cert = is_flat(&h, &tol);
            if cert.is_flat && cert.decomposition_holds {
                return Ok(Some((chain, f, m, cap)));
            }
        }
    }
    Ok(None)
}

fn separated_points(rng: &mut ChaCha8Rng, count: usize, d: usize, min_sep: f64) -> Vec<Vec<f64>> {
    let mut pts: Vec<Vec<f64>> = Vec::new();
    while pts.len() < count {
        let p: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
        let far = pts.iter().all(|q| q.iter().zip(&p).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt() >= min_sep);
        if far {
            pts.push(p);
        }
    }
    pts
}

fn random_weights(rng: &mut ChaCha8Rng, count: usize) -> Vec<f64> {
    let raw: Vec<f64> = (0..count).map(|_| rng.random_range(0.2..1.0)).collect();
    let s: f64 = raw.iter().sum();
    raw.into_iter().map(|w| w / s).collect()
}

fn random_unit_vector(rng: &mut ChaCha8Rng, n: usize) -> DVector<Complex64> {
    let v = DVector::from_fn(n, |_, _| Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)));
    let norm = v.norm();
    v / Complex64::new(norm.max(1e-3), 0.0)
}

/// Random flat instance; resamples until a flat truncation with `m <= max_m` exists.
pub fn random_instance(kind: &InstanceKind, rng: &mut ChaCha8Rng, max_m: usize) -> Result<Instance> {
    for _ in 0..64 {
        let (pres, rep, truth, caps) = match *kind {
            InstanceKind::Commutative { d, atoms } => {
                let pts = separated_points(rng, atoms, d, 0.25);
                let w = random_weights(rng, atoms);
                let rep = atomic_rep(&pts, &w);
                (Presentation::commutative(d)?, rep, GroundTruth::Atoms { atoms: pts, weights: w }, vec![None])
            }
            InstanceKind::Cylinder { d, lines, per_line } => {
                let ts = separated_points(rng, lines, d, 0.25);
                let mut pts = Vec::new();
                for t in &ts {
                    for s in separated_points(rng, per_line, 1, 0.25) {
                        let mut p = t.clone();
                        p.push(s[0]);
                        pts.push(p);
                    }
                }
                let w = random_weights(rng, pts.len());
                let rep = atomic_rep(&pts, &w);
                let caps = (1..=per_line.max(1) + 1).map(Some).collect();
                (Presentation::cylinder(d)?, rep, GroundTruth::Atoms { atoms: pts, weights: w }, caps)
            }
            InstanceKind::MatrixPoly { n, d, r } => {
                let pts = if d == 0 { vec![Vec::new(); r.min(1)] } else { separated_points(rng, r, d, 0.25) };
                let us: Vec<DVector<Complex64>> = pts.iter().map(|_| random_unit_vector(rng, n)).collect();
                let rep = matrix_poly_rep(n, &pts, &us);
                (Presentation::matrix_poly(n, d)?, rep, GroundTruth::MatrixPoly { points: pts, vectors: us }, vec![None])
            }
            InstanceKind::Su2 { max_dim } => {
                let mut parts = Vec::new();
                let mut used = 0;
                let budget = rng.random_range(1..=max_dim.max(1));
                while used < budget {
                    let dim = rng.random_range(1..=(budget - used));
                    parts.push(su2_spin(dim - 1));
                    used += dim;
                }
                let matrices = direct_sum(&parts);
                let v = random_unit_vector(rng, used);
                (Presentation::lie(StructureConstants::su2())?, VectorRep { matrices, v }, GroundTruth::Representation, vec![None])
            }
            InstanceKind::Heisenberg { atoms } => {
                let pts = separated_points(rng, atoms, 2, 0.25);
                let w = random_weights(rng, atoms);
                let mut rep = atomic_rep(&pts, &w);
                rep.matrices.push(DMatrix::zeros(atoms, atoms));
                let truth = GroundTruth::Atoms { atoms: pts, weights: w };
                (Presentation::lie(StructureConstants::heisenberg())?, rep, truth, vec![None])
            }
        };
        if let Some((chain, functional, m, y_cap)) = smallest_flat_instance(&pres, &rep, max_m, &caps)? {
            return Ok(Instance { pres, chain, functional, rep, truth, m, y_cap });
        }
    }
    Err(Error::InvalidInput(format!("no flat truncation with m <= {max_m} found for {kind:?}")))
}

/// Extension with the default pivot order and rank tolerance `1e-10`.
pub fn extend_instance(inst: &Instance) -> Result<ExtensionResult> {
    extend(&inst.pres, &inst.chain, &inst.functional, &Tolerances::with_rank(1e-10), PivotOrder::Greedy)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64) -> Complex64 {
        Complex64::new(re, 0.0)
    }

    fn setup(pres: &Presentation, rep: &VectorRep, m: usize, cap: Option<usize>) -> (TruncatedFunctional, ExtensionResult) {
        let chain = build_truncated_basis(pres, m, &TruncationOptions { y_cap: cap, ..Default::default() }).unwrap();
        let f = vector_functional(pres, rep, &chain).unwrap();
        let ext = extend(pres, &chain, &f, &Tolerances::with_rank(1e-10), PivotOrder::Greedy).unwrap();
        (f, ext)
    }

    #[test]
    fn scalar_rep_is_point_evaluation() {
        let pres = Presentation::commutative(1).unwrap();
        let rep = atomic_rep(&[vec![0.3]], &[1.0]);
        let chain = build_truncated_basis(&pres, 1, &TruncationOptions::default()).unwrap();
        let f = vector_functional(&pres, &rep, &chain).unwrap();
        for (w, v) in f.values() {
            assert!((v - c(0.3f64.powi(w.len() as i32))).norm() < 1e-15);
        }
    }

    #[test]
    fn spin_half_functional() {
        let pres = Presentation::lie(StructureConstants::su2()).unwrap();
        let mut e1 = DVector::zeros(2);
        e1[0] = c(1.0);
        let rep = VectorRep { matrices: su2_spin(1), v: e1 };
        let chain = build_truncated_basis(&pres, 1, &TruncationOptions::default()).unwrap();
        let f = vector_functional(&pres, &rep, &chain).unwrap();
        assert!((f.get(&Word::letter(2)).unwrap() - c(0.5)).norm() < 1e-15);
    }

    #[test]
    fn spin_matrices_satisfy_su2() {
        for two_j in 0..6 {
            let h = su2_spin(two_j);
            assert!(lie_residual(&StructureConstants::su2(), &h) < 1e-12, "2j={two_j}");
        }
    }

    #[test]
    fn relation_violation_detected() {
        let pres = Presentation::commutative(2).unwrap();
        let a = DMatrix::from_row_slice(2, 2, &[c(0.0), c(1.0), c(1.0), c(0.0)]);
        let b = DMatrix::from_row_slice(2, 2, &[c(1.0), c(0.0), c(0.0), c(-1.0)]);
        let rep = VectorRep { matrices: vec![a, b], v: DVector::from_vec(vec![c(1.0), c(0.0)]) };
        let chain = build_truncated_basis(&pres, 1, &TruncationOptions::default()).unwrap();
        assert!(matches!(vector_functional(&pres, &rep, &chain), Err(Error::RelationViolation { .. })));
    }

    #[test]
    fn two_atom_diagonal_rep() {
        let pres = Presentation::commutative(1).unwrap();
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let rep = VectorRep {
            matrices: vec![DMatrix::from_diagonal(&DVector::from_vec(vec![c(0.0), c(1.0)]))],
            v: DVector::from_vec(vec![c(s), c(s)]),
        };
        let (f, ext) = setup(&pres, &rep, 1, None);
        let expect = [1.0, 0.5, 0.5, 0.5, 0.5];
        for (w, v) in f.values() {
            assert!((v - c(expect[w.len()])).norm() < 1e-15);
        }
        let m = extract_atoms_commutative(&ext, &f, 7).unwrap();
        let mut pairs: Vec<(f64, f64)> = m.atoms.iter().map(|a| a[0]).zip(m.weights.iter().copied()).collect();
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
        assert!((pairs[0].0).abs() < 1e-9 && (pairs[1].0 - 1.0).abs() < 1e-9);
        assert!((pairs[0].1 - 0.5).abs() < 1e-9 && (pairs[1].1 - 0.5).abs() < 1e-9);
    }

    #[test]
    fn delta_zero_atom() {
        let pres = Presentation::commutative(1).unwrap();
        let rep = atomic_rep(&[vec![0.0]], &[1.0]);
        let (f, ext) = setup(&pres, &rep, 0, None);
        let m = extract_atoms_commutative(&ext, &f, 1).unwrap();
        assert_eq!(m.atoms.len(), 1);
        assert!(m.atoms[0][0].abs() < 1e-12 && (m.weights[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn three_atoms_in_the_plane() {
        let pres = Presentation::commutative(2).unwrap();
        let atoms = vec![vec![-0.5, 0.2], vec![0.7, -0.9], vec![0.1, 0.8]];
        let weights = vec![0.2, 0.3, 0.5];
        let (f, ext) = setup(&pres, &atomic_rep(&atoms, &weights), 2, None);
        let m = extract_atoms_commutative(&ext, &f, 3).unwrap();
        assert_eq!(m.atoms.len(), 3);
        for (a, w) in atoms.iter().zip(&weights) {
            let j = m.atoms.iter().position(|b| (b[0] - a[0]).abs() + (b[1] - a[1]).abs() < 1e-7).unwrap();
            assert!((m.weights[j] - w).abs() < 1e-7);
        }
        assert!(m.reconstruction_residual < 1e-9);
    }

    #[test]
    fn cylinder_single_line() {
        let pres = Presentation::cylinder(1).unwrap();
        let rep = atomic_rep(&[vec![0.0, -1.0], vec![0.0, 1.0]], &[0.5, 0.5]);
        let (f, ext) = setup(&pres, &rep, 1, Some(1));
        let cyl = solve_cylinder(&ext, &f, 5).unwrap();
        assert_eq!(cyl.lines.len(), 1);
        assert_eq!(cyl.measure.atoms.len(), 2);
        assert!(cyl.measure.weights.iter().all(|w| (w - 0.5).abs() < 1e-9));
        assert!(cyl.x_marginal_residual < 1e-9 && cyl.lines.len() <= cyl.bound);
    }

    #[test]
    fn cylinder_two_lines_four_atoms() {
        let pres = Presentation::cylinder(1).unwrap();
        let atoms = vec![vec![0.0, -0.5], vec![0.0, 0.5], vec![1.0, 0.2], vec![1.0, 0.9]];
        let rep = atomic_rep(&atoms, &[0.25, 0.25, 0.25, 0.25]);
        let (f, ext) = setup(&pres, &rep, 1, Some(2));
        let cyl = solve_cylinder(&ext, &f, 5).unwrap();
        assert_eq!(cyl.measure.atoms.len(), 4);
        assert_eq!((cyl.lines.len(), cyl.bound), (2, 3));
        assert!(cyl.measure.reconstruction_residual < 1e-9);
    }

    #[test]
    fn matrix_poly_single_point() {
        let pres = Presentation::matrix_poly(2, 1).unwrap();
        let u = DVector::from_vec(vec![c(1.0), c(0.0)]);
        let rep = matrix_poly_rep(2, &[vec![2.0]], std::slice::from_ref(&u));
        let (f, ext) = setup(&pres, &rep, 0, None);
        let dec = solve_matrix_poly(&ext, &f, 1).unwrap();
        assert_eq!(dec.points.len(), 1);
        assert!((dec.points[0][0] - 2.0).abs() < 1e-9);
        assert!((&dec.vectors[0] - &u).norm() < 1e-9);
        assert!(dec.residual < 1e-9);
    }

    #[test]
    fn matrix_poly_two_points_and_phase_invariance() {
        let pres = Presentation::matrix_poly(2, 1).unwrap();
        let pts = vec![vec![-0.5], vec![0.5]];
        let us = vec![
            DVector::from_vec(vec![Complex64::new(0.3, 0.4), c(0.8)]),
            DVector::from_vec(vec![c(1.0), Complex64::new(0.0, -0.5)]),
        ];
        let rep = matrix_poly_rep(2, &pts, &us);
        let (f, ext) = setup(&pres, &rep, 1, None);
        let dec = solve_matrix_poly(&ext, &f, 2).unwrap();
        assert_eq!(dec.points.len(), 2);
        assert!(dec.residual < 1e-8);
        let mut rotated = dec.clone();
        rotated.vectors[0] *= Complex64::from_polar(1.0, 0.7);
        for w in f.values().keys() {
            assert!((rotated.value(w, 1) - dec.value(w, 1)).norm() < 1e-12);
        }
    }

    #[test]
    fn matrix_poly_constants_only() {
        let pres = Presentation::matrix_poly(2, 0).unwrap();
        let u = DVector::from_vec(vec![c(0.6), Complex64::new(0.0, 0.8)]);
        let rep = matrix_poly_rep(2, &[vec![]], std::slice::from_ref(&u));
        let (f, ext) = setup(&pres, &rep, 0, None);
        let dec = solve_matrix_poly(&ext, &f, 1).unwrap();
        assert_eq!(dec.vectors.len(), 1);
        assert!(dec.residual < 1e-10);
        let phase = dec.vectors[0][0] / u[0];
        assert!((&dec.vectors[0] - &u * phase).norm() < 1e-9);
    }

    #[test]
    fn su2_spin_half_package() {
        let pres = Presentation::lie(StructureConstants::su2()).unwrap();
        let mut e1 = DVector::zeros(2);
        e1[0] = c(1.0);
        let rep = VectorRep { matrices: su2_spin(1), v: e1 };
        let (f, ext) = setup(&pres, &rep, 1, None);
        let pkg = solve_enveloping(&ext, &f).unwrap();
        assert_eq!(pkg.dim, 2);
        assert!(pkg.commutator_residual < 1e-10 && pkg.envelope_residual < 1e-10 && pkg.hermitian_residual < 1e-10);
    }

    #[test]
    fn heisenberg_trivial_rep() {
        let pres = Presentation::lie(StructureConstants::heisenberg()).unwrap();
        let rep = VectorRep { matrices: vec![DMatrix::zeros(1, 1); 3], v: DVector::from_vec(vec![c(1.0)]) };
        let (f, ext) = setup(&pres, &rep, 1, None);
        let pkg = solve_enveloping(&ext, &f).unwrap();
        assert_eq!(pkg.dim, 1);
        assert!(pkg.h.iter().all(|m| m.norm() < 1e-14));
    }

    #[test]
    fn abelian_lie_uses_atom_extraction() {
        let pres = Presentation::lie(StructureConstants::zero(2)).unwrap();
        let rep = atomic_rep(&[vec![0.1, 0.2], vec![-0.4, 0.6]], &[0.5, 0.5]);
        let (f, ext) = setup(&pres, &rep, 1, None);
        let m = extract_atoms_commutative(&ext, &f, 9).unwrap();
        assert_eq!(m.atoms.len(), 2);
        assert!(m.reconstruction_residual < 1e-9);
    }

    #[test]
    fn wrong_kind_rejected() {
        let pres = Presentation::commutative(1).unwrap();
        let rep = atomic_rep(&[vec![0.5]], &[1.0]);
        let (f, ext) = setup(&pres, &rep, 0, None);
        assert!(matches!(solve_enveloping(&ext, &f), Err(Error::WrongKind { .. })));
        assert!(matches!(solve_matrix_poly(&ext, &f, 0), Err(Error::WrongKind { .. })));
    }

    #[test]
    fn binomials() {
        assert_eq!(binomial(3, 1), 3);
        assert_eq!(binomial(6, 2), 15);
        assert_eq!(binomial(2, 5), 0);
    }

    #[test]
    fn random_instances_are_flat() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for kind in [
            InstanceKind::Commutative { d: 2, atoms: 3 },
            InstanceKind::Cylinder { d: 1, lines: 2, per_line: 2 },
            InstanceKind::MatrixPoly { n: 2, d: 1, r: 2 },
            InstanceKind::Su2 { max_dim: 4 },
            InstanceKind::Heisenberg { atoms: 2 },
        ] {
            let inst = random_instance(&kind, &mut rng, 3).unwrap();
            let ext = extend_instance(&inst).unwrap();
            assert!(ext.certificates().agreement_residual < 1e-9, "{kind:?}");
        }
    }
}
