//! Invariant suites run against a finished extension.

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::algebra::{NcPoly, Word};
use crate::error::Result;
use crate::extension::{extend, uniqueness_check, ExtensionResult};
use crate::filtration::{iterated_prolongation, monomials_up_to, DEFAULT_MAX_DIM};
use crate::hankel::{HermitianSpectrum, PivotOrder, ProductTable, Tolerances, TruncatedFunctional};

#[derive(Clone, Debug, Serialize, PartialEq)]
pub struct SuiteResult {
    pub name: String,
    pub passed: bool,
    /// Worst observed residual and the bound it was held to.
    pub worst: f64,
    pub bound: f64,
    pub detail: String,
}

impl SuiteResult {
    fn new(name: &str, worst: f64, bound: f64, detail: String) -> Self {
        SuiteResult { name: name.into(), passed: worst <= bound, worst, bound, detail }
    }
}

#[derive(Clone, Debug, Serialize, PartialEq)]
pub struct VerifyReport {
    pub suites: Vec<SuiteResult>,
}

impl VerifyReport {
    pub fn all_passed(&self) -> bool {
        self.suites.iter().all(|s| s.passed)
    }

    pub fn get(&self, name: &str) -> Option<&SuiteResult> {
        self.suites.iter().find(|s| s.name == name)
    }
}

/// Random polynomial with up to four terms of degree at most `max_deg`.
pub fn random_poly(rng: &mut ChaCha8Rng, generators: usize, max_deg: usize) -> NcPoly {
    let terms = rng.random_range(1..=4);
    let mut p = NcPoly::zero();
    for _ in 0..terms {
        let len = rng.random_range(0..=max_deg);
        let letters: Vec<u16> = (0..len).map(|_| rng.random_range(0..generators) as u16).collect();
        let c = Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        p.add_term(Word::from_letters(&letters), c);
    }
    p
}

fn moment_scale(f: &TruncatedFunctional) -> f64 {
    f.max_abs().max(1.0)
}

/// `max |L̃(w) - L(w)|` over the supplied moments, bound `1e-9 · max|L|`.
pub fn extension_agreement(ext: &ExtensionResult, functional: &TruncatedFunctional) -> SuiteResult {
    let worst = functional
        .values()
        .iter()
        .map(|(w, v)| (ext.extended_value(&NcPoly::word(w.clone())) - v).norm())
        .fold(0.0, f64::max);
    SuiteResult::new(
        "extension_agreement",
        worst,
        1e-9 * functional.max_abs(),
        format!("{} moments", functional.values().len()),
    )
}

/// Gram matrix of `L̃` on `A_k` (normal-form monomials up to length `k`).
pub fn extended_gram(ext: &ExtensionResult, k: usize) -> Result<DMatrix<Complex64>> {
    let pres = ext.presentation();
    let cap = ext.chain().y_cap().map(|c| c + k);
    let words = monomials_up_to(pres, k, cap, DEFAULT_MAX_DIM)?;
    let elements: Vec<NcPoly> = words.into_iter().map(NcPoly::word).collect();
    let table = ProductTable::new(pres, &elements)?;
    let g = table.gram_with(|p| Ok(ext.extended_value(p)))?;
    Ok((&g + g.adjoint()).scale(0.5))
}

fn truncation_degree(ext: &ExtensionResult) -> usize {
    ext.chain().truncation().unwrap_or_else(|| ext.chain().levels().iter().copied().max().unwrap_or(0).saturating_sub(1))
}

/// Positivity transfer and flatness of `L̃` on `A_{m+2}`.
pub fn positivity_and_flatness(ext: &ExtensionResult, tol: &Tolerances) -> Result<(SuiteResult, SuiteResult)> {
    let m = truncation_degree(ext);
    let g = extended_gram(ext, m + 2)?;
    let spec = HermitianSpectrum::new(&g);
    let norm = spec.max_abs();
    let input_psd = ext.flatness().is_positive;
    let min = spec.min();
    let positivity = if input_psd {
        SuiteResult::new("positivity_transfer", (-min).max(0.0), 1e-9 * norm.max(f64::MIN_POSITIVE), format!("dim A_{} = {}, min eigenvalue {min:.3e}", m + 2, g.nrows()))
    } else {
        SuiteResult { name: "positivity_transfer".into(), passed: true, worst: 0.0, bound: 0.0, detail: "input not positive; skipped".into() }
    };
    let threshold = tol.relative_rank_tol(g.nrows()).max(1e-10) * norm;
    let rank = spec.rank(threshold);
    let rank_b = ext.flatness().rank_b;
    let flatness = SuiteResult {
        name: "extension_flatness".into(),
        passed: rank == rank_b,
        worst: rank.abs_diff(rank_b) as f64,
        bound: 0.0,
        detail: format!("rank on A_{} = {rank}, rank on B = {rank_b}", m + 2),
    };
    Ok((positivity, flatness))
}

/// `L̃(b* a κ)` for `b ∈ B'`, random `a` of degree `<= 3`, kernel generators `κ`.
pub fn kernel_ideal(ext: &ExtensionResult, functional: &TruncatedFunctional, rng: &mut ChaCha8Rng, samples: usize) -> Result<SuiteResult> {
    let pres = ext.presentation();
    let mut red = pres.reducer();
    let bprime = ext.bprime_elements();
    let stars: Vec<NcPoly> = bprime.iter().map(|b| pres.star(b)).collect();
    let mut worst: f64 = 0.0;
    let mut count = 0;
    for _ in 0..samples {
        let a = random_poly(rng, pres.num_generators(), 3);
        for k in ext.kernel_generators() {
            let ak = red.product(&a, k)?;
            for s in &stars {
                let v = ext.extended_value(&red.product(s, &ak)?);
                worst = worst.max(v.norm() / a.max_abs_coefficient().max(1.0));
                count += 1;
            }
        }
    }
    Ok(SuiteResult::new("kernel_ideal", worst, 1e-8 * moment_scale(functional), format!("{count} evaluations")))
}

/// Elements of `𝒦^[2m-1]` that reduce into `C` are annihilated by the Hankel form.
pub fn kernel_prolongation(ext: &ExtensionResult) -> Result<SuiteResult> {
    let pres = ext.presentation();
    let m = pres.delta().div_ceil(2).max(1);
    let gens = ext.kernel_generators();
    let prolonged = if gens.is_empty() { Vec::new() } else { iterated_prolongation(gens, 2 * m - 1, pres)? };
    let g = &ext.hankel().g;
    let gnorm = g.norm().max(f64::MIN_POSITIVE);
    let mut worst: f64 = 0.0;
    let mut inside = 0;
    for p in &prolonged {
        if let Some(c) = ext.chain().coords(p) {
            inside += 1;
            worst = worst.max((g * &c).norm() / (gnorm * c.norm().max(f64::MIN_POSITIVE)));
        }
    }
    Ok(SuiteResult::new(
        "kernel_prolongation",
        worst,
        1e-8,
        format!("{inside} of {} prolonged elements lie in C", prolonged.len()),
    ))
}

/// Multiplicativity, unitality, adjointness and `L̃(a) = ⟨ρ(a)1, 1⟩`.
pub fn representation_laws(ext: &ExtensionResult, rng: &mut ChaCha8Rng, samples: usize) -> Result<Vec<SuiteResult>> {
    let pres = ext.presentation();
    let r = ext.dim();
    let unit_ok = ext.gns_representation(&NcPoly::one()) == DMatrix::identity(r, r);
    let gram = ext.gram();
    let gnorm = gram.norm().max(f64::MIN_POSITIVE);
    let e = ext.unit_vector();
    let (mut mult, mut adj, mut cyc) = (0.0f64, 0.0f64, 0.0f64);
    for _ in 0..samples {
        let a = pres.normal_form(&random_poly(rng, pres.num_generators(), 3))?;
        let b = pres.normal_form(&random_poly(rng, pres.num_generators(), 3))?;
        let ab = pres.normal_form(&a.mul(&b))?;
        let (ra, rb) = (ext.gns_representation(&a), ext.gns_representation(&b));
        let scale = (ra.norm() * rb.norm()).max(1.0);
        mult = mult.max((ext.gns_representation(&ab) - &ra * &rb).norm() / scale);
        let ras = ext.gns_representation(&pres.normal_form(&pres.star(&a))?);
        adj = adj.max((gram * &ra - ras.adjoint() * gram).norm() / (gnorm * ra.norm().max(1.0)));
        let lhs = ext.extended_value(&a);
        let rhs = ext.inner(&(&ra * &e), &e);
        cyc = cyc.max((lhs - rhs).norm() / ra.norm().max(1.0));
    }
    Ok(vec![
        SuiteResult {
            name: "representation_unit".into(),
            passed: unit_ok,
            worst: if unit_ok { 0.0 } else { 1.0 },
            bound: 0.0,
            detail: "rho(1) = I".into(),
        },
        SuiteResult::new("representation_multiplicative", mult, 1e-10, format!("{samples} random pairs")),
        SuiteResult::new("representation_adjoint", adj, 1e-9, format!("{samples} random elements")),
        SuiteResult::new("representation_cyclic", cyc, 1e-9 * gnorm.max(1.0), "L(a) = <rho(a)1, 1>".into()),
    ])
}

/// Generator adjointness `‖gram X_i - X_inv(i)* gram‖ <= 1e-9 ‖gram‖`.
pub fn generator_adjointness(ext: &ExtensionResult) -> SuiteResult {
    SuiteResult::new("generator_adjoint", ext.certificates().adjoint_residual, 1e-9, "relative to the gram norm".into())
}

/// Rebuild with the reversed pivot order and compare up to degree `2m + 4`.
pub fn uniqueness(
    ext: &ExtensionResult,
    functional: &TruncatedFunctional,
    tol: &Tolerances,
) -> Result<SuiteResult> {
    let other = extend(ext.presentation(), ext.chain(), functional, tol, PivotOrder::Reversed)?;
    let degree = 2 * truncation_degree(ext) + 4;
    let rep = uniqueness_check(ext, &other, degree, 1e-8)?;
    Ok(SuiteResult {
        name: "uniqueness".into(),
        passed: rep.passed,
        worst: rep.max_difference,
        bound: 1e-8 * rep.scale.max(1.0),
        detail: format!("{} monomials up to degree {degree}; B' columns {:?} vs {:?}", rep.words_checked, ext.prime().columns, other.prime().columns),
    })
}

/// Every suite, with randomness drawn from `seed`.
pub fn run_all(
    ext: &ExtensionResult,
    functional: &TruncatedFunctional,
    tol: &Tolerances,
    seed: u64,
) -> Result<VerifyReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut suites = vec![extension_agreement(ext, functional)];
    let (pos, flat) = positivity_and_flatness(ext, tol)?;
    suites.push(pos);
    suites.push(flat);
    suites.push(kernel_ideal(ext, functional, &mut rng, 20)?);
    suites.push(kernel_prolongation(ext)?);
    suites.extend(representation_laws(ext, &mut rng, 50)?);
    suites.push(generator_adjointness(ext));
    suites.push(uniqueness(ext, functional, tol)?);
    Ok(VerifyReport { suites })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::solvers::{extend_instance, random_instance, InstanceKind};

    #[test]
    fn all_suites_pass_on_random_instances() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for kind in [
            InstanceKind::Commutative { d: 2, atoms: 3 },
            InstanceKind::MatrixPoly { n: 2, d: 1, r: 2 },
            InstanceKind::Su2 { max_dim: 4 },
            InstanceKind::Cylinder { d: 1, lines: 2, per_line: 1 },
        ] {
            let inst = random_instance(&kind, &mut rng, 3).unwrap();
            let ext = extend_instance(&inst).unwrap();
            let rep = run_all(&ext, &inst.functional, &Tolerances::with_rank(1e-10), 1).unwrap();
            for s in &rep.suites {
                assert!(s.passed, "{kind:?}: {s:?}");
            }
        }
    }

    #[test]
    fn random_poly_respects_degree() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..50 {
            assert!(random_poly(&mut rng, 3, 3).degree().unwrap_or(0) <= 3);
        }
    }
}
