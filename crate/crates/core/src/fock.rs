//! Truncated boson Fock space and second-quantized operators.
//!
//! The basis is the set of occupation tuples (n_1, …, n_K) with
//! Σ n_i ≤ N_max, ordered by total occupation and then by descending first
//! occupations, so state 0 is the vacuum. Smeared ladder operators use the
//! quadrature convention a(ξ) = Σ_i conj(ξ_i) √w_i a_i, which reproduces
//! [a(ξ), a†(η)] = (ξ, η)_w on every sector strictly below N_max.
//!
//! Truncation policy: a†(η) acting out of the top sector maps to 0, which
//! keeps `create` the exact matrix adjoint of `annihilate` on the truncated
//! space. CCR violations are confined to the top sector and are measured,
//! not hidden.

use std::collections::HashMap;
use std::io::Write;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::modes::{inner_w, norm_w, ModeGrid, WeightedVector};

/// Default cap on the basis dimension.
pub const DEFAULT_DIM_CAP: usize = 2_000_000;

/// Hermiticity residual allowed when an operator carries the hermitian flag.
pub const HERMITIAN_TOL: f64 = 1e-13;

fn binomial(n: usize, k: usize) -> Option<usize> {
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc.checked_mul((n - i) as u128)?;
        acc /= (i + 1) as u128;
        if acc > usize::MAX as u128 {
            return None;
        }
    }
    Some(acc as usize)
}

/// Occupation-number basis of the truncated Fock space.
#[derive(Debug, Clone)]
pub struct FockBasis {
    n_modes: usize,
    n_max: usize,
    states: Vec<Vec<u8>>,
    index: HashMap<Vec<u8>, usize>,
    totals: Vec<usize>,
}

impl FockBasis {
    /// Builds the basis with the default dimension cap.
    pub fn build(n_modes: usize, n_max: usize) -> Result<Self> {
        Self::build_with_cap(n_modes, n_max, DEFAULT_DIM_CAP)
    }

    pub fn build_with_cap(n_modes: usize, n_max: usize, cap: usize) -> Result<Self> {
        if n_modes == 0 {
            return Err(Error::InvalidParameter {
                name: "n_modes",
                reason: "at least one mode required".into(),
            });
        }
        if n_max > u8::MAX as usize {
            return Err(Error::InvalidParameter {
                name: "n_max",
                reason: format!("occupation cap {n_max} too large"),
            });
        }
        let dim = binomial(n_modes + n_max, n_max).ok_or(Error::SizeCap {
            what: "fock dimension",
            got: usize::MAX,
            cap,
        })?;
        if dim > cap {
            return Err(Error::SizeCap {
                what: "fock dimension",
                got: dim,
                cap,
            });
        }

        let mut states = Vec::with_capacity(dim);
        let mut scratch = vec![0u8; n_modes];
        for total in 0..=n_max {
            emit_states(&mut states, &mut scratch, 0, total);
        }
        debug_assert_eq!(states.len(), dim);

        let index = states
            .iter()
            .enumerate()
            .map(|(i, s)| (s.clone(), i))
            .collect();
        let totals = states
            .iter()
            .map(|s| s.iter().map(|&n| n as usize).sum())
            .collect();
        Ok(FockBasis {
            n_modes,
            n_max,
            states,
            index,
            totals,
        })
    }

    pub fn dim(&self) -> usize {
        self.states.len()
    }

    pub fn n_modes(&self) -> usize {
        self.n_modes
    }

    pub fn n_max(&self) -> usize {
        self.n_max
    }

    pub fn state(&self, i: usize) -> &[u8] {
        &self.states[i]
    }

    /// Total occupation of basis state `i`.
    pub fn total(&self, i: usize) -> usize {
        self.totals[i]
    }

    pub fn index_of(&self, occ: &[u8]) -> Option<usize> {
        self.index.get(occ).copied()
    }

    /// Σ_i n_i ω_i per basis state; the diagonal of dΓ(ω).
    pub fn number_energy(&self, omega: &[f64]) -> Result<Vec<f64>> {
        if omega.len() != self.n_modes {
            return Err(Error::DimMismatch {
                what: "omega",
                expected: self.n_modes,
                got: omega.len(),
            });
        }
        Ok(self
            .states
            .iter()
            .map(|s| s.iter().zip(omega).map(|(&n, &o)| n as f64 * o).sum())
            .collect())
    }
}

/// Depth-first enumeration within one grade: mode `at` takes the largest
/// remaining occupation first, matching the documented ordering.
fn emit_states(out: &mut Vec<Vec<u8>>, scratch: &mut [u8], at: usize, remaining: usize) {
    if at == scratch.len() - 1 {
        scratch[at] = remaining as u8;
        out.push(scratch.to_vec());
        return;
    }
    for n in (0..=remaining).rev() {
        scratch[at] = n as u8;
        emit_states(out, scratch, at + 1, remaining - n);
    }
}

/// Complex amplitudes over the basis states.
#[derive(Debug, Clone, PartialEq)]
pub struct FockVector {
    pub values: Vec<Complex64>,
}

impl FockVector {
    pub fn zeros(dim: usize) -> Self {
        FockVector {
            values: vec![Complex64::ZERO; dim],
        }
    }

    pub fn vacuum(basis: &FockBasis) -> Self {
        let mut v = Self::zeros(basis.dim());
        v.values[0] = Complex64::ONE;
        v
    }

    /// Unit-normalized one-boson state in mode `mode`.
    pub fn one_boson(basis: &FockBasis, mode: usize) -> Result<Self> {
        let mut occ = vec![0u8; basis.n_modes()];
        if mode >= basis.n_modes() {
            return Err(Error::InvalidParameter {
                name: "mode",
                reason: format!("mode {mode} out of range"),
            });
        }
        if basis.n_max() == 0 {
            return Err(Error::InvalidParameter {
                name: "n_max",
                reason: "no one-boson sector with n_max = 0".into(),
            });
        }
        occ[mode] = 1;
        let idx = basis.index_of(&occ).expect("one-boson state present");
        let mut v = Self::zeros(basis.dim());
        v.values[idx] = Complex64::ONE;
        Ok(v)
    }

    pub fn norm(&self) -> f64 {
        self.values
            .iter()
            .map(|v| v.norm_sqr())
            .sum::<f64>()
            .sqrt()
    }

    /// Largest total occupation carrying a nonzero amplitude.
    pub fn sector(&self, basis: &FockBasis) -> Option<usize> {
        self.values
            .iter()
            .enumerate()
            .filter(|(_, v)| v.norm_sqr() > 0.0)
            .map(|(i, _)| basis.total(i))
            .max()
    }
}

/// Sparse complex matrix on the basis ordinals (CSR, deterministic layout).
#[derive(Debug, Clone, PartialEq)]
pub struct FockOperator {
    dim: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<u32>,
    values: Vec<Complex64>,
    hermitian: bool,
}

impl FockOperator {
    /// Builds from (row, col, value) triplets: sorted by (row, col),
    /// duplicates summed in order, exact zeros dropped. The layout is a pure
    /// function of the triplet multiset, so rebuilt operators are
    /// bit-identical.
    pub fn from_triplets(
        dim: usize,
        mut triplets: Vec<(u32, u32, Complex64)>,
        hermitian: bool,
    ) -> Self {
        triplets.sort_by_key(|&(r, c, _)| (r, c));
        let mut rows: Vec<u32> = Vec::with_capacity(triplets.len());
        let mut col_idx: Vec<u32> = Vec::with_capacity(triplets.len());
        let mut values: Vec<Complex64> = Vec::with_capacity(triplets.len());
        for (r, c, v) in triplets {
            if rows.last() == Some(&r) && col_idx.last() == Some(&c) {
                *values.last_mut().unwrap() += v;
            } else {
                rows.push(r);
                col_idx.push(c);
                values.push(v);
            }
        }
        let keep: Vec<bool> = values.iter().map(|v| *v != Complex64::ZERO).collect();
        let mut w = 0usize;
        for i in 0..values.len() {
            if keep[i] {
                rows[w] = rows[i];
                col_idx[w] = col_idx[i];
                values[w] = values[i];
                w += 1;
            }
        }
        rows.truncate(w);
        col_idx.truncate(w);
        values.truncate(w);

        let mut row_ptr = vec![0usize; dim + 1];
        for &r in &rows {
            row_ptr[r as usize + 1] += 1;
        }
        for r in 0..dim {
            row_ptr[r + 1] += row_ptr[r];
        }
        let op = FockOperator {
            dim,
            row_ptr,
            col_idx,
            values,
            hermitian,
        };
        if hermitian {
            let resid = op.hermiticity_residual();
            assert!(
                resid <= HERMITIAN_TOL,
                "hermitian flag set but residual {resid:.3e} exceeds {HERMITIAN_TOL:.0e}"
            );
        }
        op
    }

    pub fn zero(dim: usize) -> Self {
        FockOperator {
            dim,
            row_ptr: vec![0; dim + 1],
            col_idx: Vec::new(),
            values: Vec::new(),
            hermitian: true,
        }
    }

    pub fn identity(dim: usize) -> Self {
        FockOperator {
            dim,
            row_ptr: (0..=dim).collect(),
            col_idx: (0..dim as u32).collect(),
            values: vec![Complex64::ONE; dim],
            hermitian: true,
        }
    }

    pub fn diagonal(diag: &[f64]) -> Self {
        let triplets = diag
            .iter()
            .enumerate()
            .map(|(i, &d)| (i as u32, i as u32, Complex64::new(d, 0.0)))
            .collect();
        FockOperator::from_triplets(diag.len(), triplets, true)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn is_hermitian_flagged(&self) -> bool {
        self.hermitian
    }

    pub fn apply(&self, v: &[Complex64]) -> Result<Vec<Complex64>> {
        if v.len() != self.dim {
            return Err(Error::DimMismatch {
                what: "fock operator apply",
                expected: self.dim,
                got: v.len(),
            });
        }
        let mut out = vec![Complex64::ZERO; self.dim];
        self.apply_into(v, &mut out);
        Ok(out)
    }

    /// `out += self * v`; lengths must already match.
    pub fn apply_into(&self, v: &[Complex64], out: &mut [Complex64]) {
        for r in 0..self.dim {
            let mut acc = Complex64::ZERO;
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                acc += self.values[k] * v[self.col_idx[k] as usize];
            }
            out[r] += acc;
        }
    }

    /// Conjugate transpose, with the same deterministic layout rules.
    pub fn adjoint(&self) -> Self {
        let mut triplets = Vec::with_capacity(self.nnz());
        for r in 0..self.dim {
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                triplets.push((self.col_idx[k], r as u32, self.values[k].conj()));
            }
        }
        FockOperator::from_triplets(self.dim, triplets, self.hermitian)
    }

    pub fn scaled(&self, c: Complex64) -> Self {
        FockOperator {
            dim: self.dim,
            row_ptr: self.row_ptr.clone(),
            col_idx: self.col_idx.clone(),
            values: self.values.iter().map(|v| v * c).collect(),
            hermitian: self.hermitian && c.im == 0.0,
        }
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        if self.dim != other.dim {
            return Err(Error::DimMismatch {
                what: "fock operator add",
                expected: self.dim,
                got: other.dim,
            });
        }
        let mut triplets = Vec::with_capacity(self.nnz() + other.nnz());
        for op in [self, other] {
            for r in 0..op.dim {
                for k in op.row_ptr[r]..op.row_ptr[r + 1] {
                    triplets.push((r as u32, op.col_idx[k], op.values[k]));
                }
            }
        }
        Ok(FockOperator::from_triplets(
            self.dim,
            triplets,
            self.hermitian && other.hermitian,
        ))
    }

    pub fn to_dense(&self) -> DMatrix<Complex64> {
        let mut m = DMatrix::zeros(self.dim, self.dim);
        for r in 0..self.dim {
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                m[(r, self.col_idx[k] as usize)] += self.values[k];
            }
        }
        m
    }

    /// Max entrywise |A − A†|.
    pub fn hermiticity_residual(&self) -> f64 {
        let adj = {
            // adjoint() would re-assert the flag; build triplets directly
            let mut triplets = Vec::with_capacity(self.nnz());
            for r in 0..self.dim {
                for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                    triplets.push((self.col_idx[k], r as u32, self.values[k].conj()));
                }
            }
            FockOperator::from_triplets(self.dim, triplets, false)
        };
        let mut resid = 0.0_f64;
        for r in 0..self.dim {
            let a = &self.values[self.row_ptr[r]..self.row_ptr[r + 1]];
            let ac = &self.col_idx[self.row_ptr[r]..self.row_ptr[r + 1]];
            let b = &adj.values[adj.row_ptr[r]..adj.row_ptr[r + 1]];
            let bc = &adj.col_idx[adj.row_ptr[r]..adj.row_ptr[r + 1]];
            // two-pointer walk over sorted columns
            let (mut i, mut j) = (0usize, 0usize);
            while i < a.len() || j < b.len() {
                match (ac.get(i), bc.get(j)) {
                    (Some(&ca), Some(&cb)) if ca == cb => {
                        resid = resid.max((a[i] - b[j]).norm());
                        i += 1;
                        j += 1;
                    }
                    (Some(&ca), Some(&cb)) if ca < cb => {
                        resid = resid.max(a[i].norm());
                        i += 1;
                    }
                    (Some(_), Some(_)) => {
                        resid = resid.max(b[j].norm());
                        j += 1;
                    }
                    (Some(_), None) => {
                        resid = resid.max(a[i].norm());
                        i += 1;
                    }
                    (None, Some(_)) => {
                        resid = resid.max(b[j].norm());
                        j += 1;
                    }
                    (None, None) => break,
                }
            }
        }
        resid
    }

    /// Coordinate-list dump: `# fock K=<K> Nmax=<N> dim=<D>` then
    /// `row col re im` per entry, sorted by (row, col).
    pub fn dump_coo<W: Write>(&self, w: &mut W, basis: &FockBasis) -> std::io::Result<()> {
        writeln!(
            w,
            "# fock K={} Nmax={} dim={}",
            basis.n_modes(),
            basis.n_max(),
            self.dim
        )?;
        for r in 0..self.dim {
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                let v = self.values[k];
                writeln!(w, "{} {} {:e} {:e}", r, self.col_idx[k], v.re, v.im)?;
            }
        }
        Ok(())
    }
}

fn check_smearing(basis: &FockBasis, grid: &ModeGrid, xi: &WeightedVector) -> Result<()> {
    if grid.len() != basis.n_modes() {
        return Err(Error::DimMismatch {
            what: "grid vs basis modes",
            expected: basis.n_modes(),
            got: grid.len(),
        });
    }
    if xi.len() != basis.n_modes() {
        return Err(Error::DimMismatch {
            what: "smearing vector",
            expected: basis.n_modes(),
            got: xi.len(),
        });
    }
    Ok(())
}

/// Smeared annihilation operator a(ξ) = Σ_i conj(ξ_i) √w_i a_i.
pub fn annihilate(basis: &FockBasis, grid: &ModeGrid, xi: &WeightedVector) -> Result<FockOperator> {
    check_smearing(basis, grid, xi)?;
    let mut triplets = Vec::new();
    let mut occ = Vec::new();
    for (s, state) in (0..basis.dim()).map(|s| (s, basis.state(s))) {
        for (i, &n) in state.iter().enumerate() {
            if n == 0 {
                continue;
            }
            let amp = xi.values[i].conj() * grid.weight(i).sqrt() * (n as f64).sqrt();
            if amp == Complex64::ZERO {
                continue;
            }
            occ.clear();
            occ.extend_from_slice(state);
            occ[i] -= 1;
            let t = basis.index_of(&occ).expect("lowered state in basis");
            triplets.push((t as u32, s as u32, amp));
        }
    }
    Ok(FockOperator::from_triplets(basis.dim(), triplets, false))
}

/// Smeared creation operator a†(η); the exact matrix adjoint of
/// `annihilate(η)`, so a† out of the top sector truncates to 0.
pub fn create(basis: &FockBasis, grid: &ModeGrid, eta: &WeightedVector) -> Result<FockOperator> {
    Ok(annihilate(basis, grid, eta)?.adjoint())
}

/// Second quantization dΓ(ω) of a nonnegative multiplier, as a diagonal
/// operator with entries Σ_i n_i ω_i.
pub fn second_quantize_diag(basis: &FockBasis, omega: &[f64]) -> Result<FockOperator> {
    if omega.iter().any(|&o| o < 0.0) {
        return Err(Error::InvalidParameter {
            name: "omega",
            reason: "second quantization requires nonnegative entries".into(),
        });
    }
    Ok(FockOperator::diagonal(&basis.number_energy(omega)?))
}

/// Field operator φ(ξ) = (a(ξ) + a†(ξ)) / √2. Hermitian.
pub fn field(basis: &FockBasis, grid: &ModeGrid, xi: &WeightedVector) -> Result<FockOperator> {
    let a = annihilate(basis, grid, xi)?;
    let ad = a.adjoint();
    let sum = a.add(&ad)?;
    let mut op = sum.scaled(Complex64::new(1.0 / 2.0_f64.sqrt(), 0.0));
    op.hermitian = true;
    let resid = op.hermiticity_residual();
    assert!(resid <= HERMITIAN_TOL, "field residual {resid:.3e}");
    Ok(op)
}

/// Conjugate field Π(η) = i (−a(η) + a†(η)) / √2. Hermitian.
pub fn conjugate_field(
    basis: &FockBasis,
    grid: &ModeGrid,
    eta: &WeightedVector,
) -> Result<FockOperator> {
    let a = annihilate(basis, grid, eta)?;
    let ad = a.adjoint();
    let diff = ad.add(&a.scaled(-Complex64::ONE))?;
    let mut op = diff.scaled(Complex64::i() / 2.0_f64.sqrt());
    op.hermitian = true;
    let resid = op.hermiticity_residual();
    assert!(resid <= HERMITIAN_TOL, "conjugate field residual {resid:.3e}");
    Ok(op)
}

/// Rank-one projector onto the Fock vacuum.
pub fn vacuum_projector(basis: &FockBasis) -> FockOperator {
    FockOperator::from_triplets(basis.dim(), vec![(0, 0, Complex64::ONE)], true)
}

/// Margins for the relative bounds of a(η), a†(η) against dΓ(ω)^{1/2}.
#[derive(Debug, Clone, Serialize)]
pub struct BoundReport {
    pub trials: usize,
    pub min_margin_annihilate: f64,
    pub min_margin_create: f64,
    pub violations: usize,
    pub margin_floor: f64,
    pub pass: bool,
}

/// Verifies on seeded random states Ψ that
/// ‖a(η)Ψ‖  ≤ ‖ω^{−1/2}η‖ ‖dΓ(ω)^{1/2}Ψ‖ and
/// ‖a†(η)Ψ‖ ≤ ‖ω^{−1/2}η‖ ‖dΓ(ω)^{1/2}Ψ‖ + ‖η‖ ‖Ψ‖.
/// Margins below `-1e-12` count as violations. Truncating a† only shrinks
/// its norm, so the second bound survives the cap.
pub fn check_relative_bounds(
    basis: &FockBasis,
    grid: &ModeGrid,
    eta: &WeightedVector,
    trials: usize,
    seed: u64,
) -> Result<BoundReport> {
    check_smearing(basis, grid, eta)?;
    if grid.omegas().iter().any(|&o| !(o > 0.0)) {
        return Err(Error::InvalidParameter {
            name: "omega",
            reason: "relative bounds need strictly positive dispersion".into(),
        });
    }
    let margin_floor = -1e-12;
    let a = annihilate(basis, grid, eta)?;
    let ad = a.adjoint();
    let energies = basis.number_energy(grid.omegas())?;

    let eta_norm = norm_w(grid, eta)?;
    let eta_over = eta.omega_div(grid)?;
    // ‖ω^{−1/2}η‖² = Σ w |η|²/ω = (η/ω, η)_w
    let eta_half = inner_w(grid, &eta_over, eta)?.re.max(0.0).sqrt();

    let mut rng = crate::analysis::seeded_rng(seed);
    let mut min_a = f64::INFINITY;
    let mut min_c = f64::INFINITY;
    let mut violations = 0usize;
    for _ in 0..trials {
        let psi = random_fock(basis, &mut rng);
        let psi_norm = norm(&psi.values);
        let dgamma_half: f64 = psi
            .values
            .iter()
            .zip(&energies)
            .map(|(v, &e)| v.norm_sqr() * e)
            .sum::<f64>()
            .sqrt();

        let lhs_a = norm(&a.apply(&psi.values)?);
        let margin_a = eta_half * dgamma_half - lhs_a;
        let lhs_c = norm(&ad.apply(&psi.values)?);
        let margin_c = eta_half * dgamma_half + eta_norm * psi_norm - lhs_c;

        min_a = min_a.min(margin_a);
        min_c = min_c.min(margin_c);
        if margin_a < margin_floor || margin_c < margin_floor {
            violations += 1;
        }
    }
    Ok(BoundReport {
        trials,
        min_margin_annihilate: min_a,
        min_margin_create: min_c,
        violations,
        margin_floor,
        pass: violations == 0,
    })
}

pub fn norm(v: &[Complex64]) -> f64 {
    v.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt()
}

/// Unit-normalized complex Gaussian state.
pub fn random_fock<R: Rng>(basis: &FockBasis, rng: &mut R) -> FockVector {
    let mut v = FockVector::zeros(basis.dim());
    for val in v.values.iter_mut() {
        let re: f64 = rng.sample(StandardNormal);
        let im: f64 = rng.sample(StandardNormal);
        *val = Complex64::new(re, im);
    }
    let n = v.norm();
    if n > 0.0 {
        for val in v.values.iter_mut() {
            *val /= n;
        }
    }
    v
}
