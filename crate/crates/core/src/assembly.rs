//! Coupled-space operators on (particle lattice) ⊗ (truncated Fock space).
//!
//! Block structure drives everything here: the interaction, the dressing
//! unitary, the free field energy, and the effective potential are diagonal
//! in the particle position basis (one Fock block per position tuple), while
//! the kinetic term is diagonal in the particle momentum basis and is applied
//! with DFT hops. A dense full-matrix oracle exists for small configurations.
//!
//! Coupled vectors are stored position-major: `v[p * fock_dim + f]`.

use std::sync::{Arc, OnceLock};

use nalgebra::DMatrix;
use num_complex::Complex64;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::fock::{
    self, second_quantize_diag, vacuum_projector, FockBasis, FockOperator,
};
use crate::linalg::{self, frobenius_norm, kron, spectral_norm_hermitian};
use crate::modes::{
    inner_w, validate_assumptions, CouplingFamily, Dispersion, ModeGrid, ValidationReport,
    WeightedVector,
};
use crate::particle::{KineticOperator, ParticleGrid};

/// Seed for the fixed probe vectors used in flag verification.
const PROBE_SEED: u64 = 0x5ca1_1ab1;

/// Residual allowed when verifying hermitian/unitary flags at build.
pub const FLAG_TOL: f64 = 1e-10;

/// Residual allowed per dressing block for ‖U†U − I‖.
pub const UNITARITY_TOL: f64 = 1e-10;

/// Imaginary residue allowed before the effective potential is real-cast.
pub const VEFF_REALITY_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct SizeCaps {
    pub fock_dim: usize,
    pub position_tuples: usize,
    /// Cap on n_pos · fock_dim for dense-oracle assembly.
    pub dense_dim: usize,
}

impl Default for SizeCaps {
    fn default() -> Self {
        SizeCaps {
            fock_dim: fock::DEFAULT_DIM_CAP,
            position_tuples: crate::particle::DEFAULT_POSITION_CAP,
            dense_dim: 4096,
        }
    }
}

/// Scalar parameters of the model; Λ stays an argument of the operator
/// builders, never part of the configuration.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModelConfig {
    pub kappa: f64,
    pub rest_mass: f64,
    pub dim: usize,
    pub n_particles: usize,
    pub n_x: usize,
    pub length: f64,
    pub n_k: usize,
    pub k_max: f64,
    pub dispersion: Dispersion,
    pub cutoff: f64,
    pub n_max: usize,
    pub caps: SizeCaps,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            kappa: 0.5,
            rest_mass: 1.0,
            dim: 1,
            n_particles: 1,
            n_x: 8,
            length: std::f64::consts::TAU,
            n_k: 4,
            k_max: 2.0,
            dispersion: Dispersion::Massive { mass: 1.0 },
            cutoff: 1.0,
            n_max: 3,
            caps: SizeCaps::default(),
        }
    }
}

/// A validated configuration with its grids, basis, kinetic operator, and
/// per-site couplings precomputed. Immutable after construction; operator
/// builders may be called concurrently.
pub struct Model {
    config: ModelConfig,
    particle: Arc<ParticleGrid>,
    modes: ModeGrid,
    coupling: CouplingFamily,
    basis: FockBasis,
    kinetic: Arc<KineticOperator>,
    site_f: Vec<WeightedVector>,
    site_g: Vec<WeightedVector>,
    validation: ValidationReport,
    omega_diag: Arc<Vec<f64>>,
    interaction_blocks: OnceLock<Vec<Arc<FockOperator>>>,
}

impl Model {
    pub fn new(config: ModelConfig) -> Result<Self> {
        if !config.kappa.is_finite() {
            return Err(Error::InvalidParameter {
                name: "kappa",
                reason: "coupling constant must be finite".into(),
            });
        }
        let particle = ParticleGrid::build_with_cap(
            config.dim,
            config.n_particles,
            config.n_x,
            config.length,
            config.caps.position_tuples,
        )?;
        let modes = crate::modes::build_mode_grid(
            config.dim,
            config.n_k,
            config.k_max,
            config.dispersion,
        )?;
        let coupling = CouplingFamily::characteristic(config.cutoff)?;
        Self::from_parts(config, particle, modes, coupling)
    }

    /// Assembles a model from explicit grids and family. The assumption
    /// report must pass; assembly refuses broken configurations.
    pub fn from_parts(
        config: ModelConfig,
        particle: ParticleGrid,
        modes: ModeGrid,
        coupling: CouplingFamily,
    ) -> Result<Self> {
        let sites: Vec<Vec<f64>> = (0..particle.site_count())
            .map(|s| particle.site_position(s))
            .collect();
        let validation = validate_assumptions(&modes, &coupling, &sites);
        if !validation.pass() {
            return Err(Error::AssumptionsFailed(format!(
                "{:?}",
                validation.failures()
            )));
        }
        let basis = FockBasis::build_with_cap(modes.len(), config.n_max, config.caps.fock_dim)?;
        let kinetic = KineticOperator::new(&particle, config.rest_mass)?;
        let mut site_f = Vec::with_capacity(sites.len());
        let mut site_g = Vec::with_capacity(sites.len());
        for x in &sites {
            let f = coupling.coupling_at(&modes, x)?;
            site_g.push(f.omega_div(&modes)?);
            site_f.push(f);
        }
        let omega_diag = Arc::new(basis.number_energy(modes.omegas())?);
        Ok(Model {
            config,
            particle: Arc::new(particle),
            modes,
            coupling,
            basis,
            kinetic: Arc::new(kinetic),
            site_f,
            site_g,
            validation,
            omega_diag,
            interaction_blocks: OnceLock::new(),
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn particle(&self) -> &ParticleGrid {
        &self.particle
    }

    pub fn modes(&self) -> &ModeGrid {
        &self.modes
    }

    pub fn coupling(&self) -> &CouplingFamily {
        &self.coupling
    }

    pub fn basis(&self) -> &FockBasis {
        &self.basis
    }

    pub fn kinetic(&self) -> &KineticOperator {
        &self.kinetic
    }

    pub fn validation(&self) -> &ValidationReport {
        &self.validation
    }

    /// Coupling sample f at single-particle site `s`.
    pub fn site_coupling(&self, s: usize) -> &WeightedVector {
        &self.site_f[s]
    }

    pub fn coupled_dim(&self) -> usize {
        self.particle.total() * self.basis.dim()
    }

    fn check_lambda(lambda: f64) -> Result<()> {
        if !(lambda > 0.0) {
            return Err(Error::InvalidParameter {
                name: "lambda",
                reason: format!("scaling parameter must be positive, got {lambda}"),
            });
        }
        Ok(())
    }

    /// Σ_j f_{x_j} for a position tuple.
    fn tuple_coupling(&self, flat: usize) -> WeightedVector {
        let sites = self.particle.tuple_sites(flat);
        let mut acc = WeightedVector::zeros(self.modes.len());
        for s in sites {
            acc = acc.add(&self.site_f[s]);
        }
        acc
    }

    /// Σ_j f_{x_j}/ω for a position tuple.
    fn tuple_coupling_over_omega(&self, flat: usize) -> WeightedVector {
        let sites = self.particle.tuple_sites(flat);
        let mut acc = WeightedVector::zeros(self.modes.len());
        for s in sites {
            acc = acc.add(&self.site_g[s]);
        }
        acc
    }

    fn interaction_block_list(&self) -> Result<&Vec<Arc<FockOperator>>> {
        if let Some(blocks) = self.interaction_blocks.get() {
            return Ok(blocks);
        }
        let blocks: Vec<Arc<FockOperator>> = (0..self.particle.total())
            .into_par_iter()
            .map(|t| {
                let ft = self.tuple_coupling(t);
                fock::field(&self.basis, &self.modes, &ft).map(Arc::new)
            })
            .collect::<Result<_>>()?;
        let _ = self.interaction_blocks.set(blocks);
        Ok(self.interaction_blocks.get().expect("just set"))
    }

    /// H_I = Σ_j φ(f_{x_j}), block-diagonal via field-operator additivity.
    /// Carries no κ; scaling enters at the Hamiltonian level.
    pub fn interaction(&self) -> Result<CoupledOperator> {
        let blocks = self.interaction_block_list()?.clone();
        CoupledOperator::new(
            self.particle.total(),
            self.basis.dim(),
            vec![CoupledTerm::BlockSparse {
                blocks,
                scale: Complex64::ONE,
            }],
            true,
            false,
        )
    }

    /// H₀(Λ) = H_par ⊗ I + Λ² I ⊗ dΓ(ω).
    pub fn free_hamiltonian(&self, lambda: f64) -> Result<CoupledOperator> {
        Self::check_lambda(lambda)?;
        CoupledOperator::new(
            self.particle.total(),
            self.basis.dim(),
            vec![
                CoupledTerm::KineticTensor {
                    kin: Arc::clone(&self.kinetic),
                    grid: Arc::clone(&self.particle),
                    scale: 1.0,
                },
                CoupledTerm::FockDiagonal {
                    diag: Arc::clone(&self.omega_diag),
                    scale: lambda * lambda,
                },
            ],
            true,
            false,
        )
    }

    /// H(Λ) = H₀(Λ) + κΛ H_I; Λ = 1 is the unscaled Hamiltonian.
    pub fn total_hamiltonian(&self, lambda: f64) -> Result<CoupledOperator> {
        Self::check_lambda(lambda)?;
        let mut terms = vec![
            CoupledTerm::KineticTensor {
                kin: Arc::clone(&self.kinetic),
                grid: Arc::clone(&self.particle),
                scale: 1.0,
            },
            CoupledTerm::FockDiagonal {
                diag: Arc::clone(&self.omega_diag),
                scale: lambda * lambda,
            },
        ];
        let scale = self.config.kappa * lambda;
        if scale != 0.0 {
            terms.push(CoupledTerm::BlockSparse {
                blocks: self.interaction_block_list()?.clone(),
                scale: Complex64::new(scale, 0.0),
            });
        }
        CoupledOperator::new(self.particle.total(), self.basis.dim(), terms, true, false)
    }

    /// V_eff(x₁, …, x_N) = −(κ²/4) Σ_{j,l} [(f_{x_j}, f_{x_l}/ω) + (f_{x_l}, f_{x_j}/ω)].
    pub fn effective_potential(&self) -> Result<EffectivePotential> {
        let n_sites = self.particle.site_count();
        // site-pair table P[s, s'] = (f_s, g_{s'})
        let mut pair = vec![Complex64::ZERO; n_sites * n_sites];
        for s in 0..n_sites {
            for sp in 0..n_sites {
                pair[s * n_sites + sp] = inner_w(&self.modes, &self.site_f[s], &self.site_g[sp])?;
            }
        }
        let kappa2 = self.config.kappa * self.config.kappa;
        let mut values = Vec::with_capacity(self.particle.total());
        for t in 0..self.particle.total() {
            let sites = self.particle.tuple_sites(t);
            let mut acc = Complex64::ZERO;
            for &sj in &sites {
                for &sl in &sites {
                    acc += pair[sj * n_sites + sl] + pair[sl * n_sites + sj];
                }
            }
            let v = acc * (-kappa2 / 4.0);
            if v.im.abs() > VEFF_REALITY_TOL {
                return Err(Error::RealityViolation {
                    residue: v.im.abs(),
                    limit: VEFF_REALITY_TOL,
                });
            }
            values.push(v.re);
        }
        Ok(EffectivePotential { values })
    }

    /// The sharp-cutoff closed form
    /// V_eff = −(κ²/2) Σ_{j,l} ∫ χ_R(k)² ω(k)^{−2} e^{−i k·(x_j − x_l)} dk,
    /// used as an independent cross-check of [`Self::effective_potential`].
    pub fn effective_potential_remark(&self) -> Result<EffectivePotential> {
        if !matches!(
            self.coupling.form,
            crate::modes::CouplingForm::CharacteristicCutoff
        ) {
            return Err(Error::UnsupportedForm);
        }
        let n_sites = self.particle.site_count();
        let d = self.particle.dim();
        let mut pair = vec![Complex64::ZERO; n_sites * n_sites];
        for s in 0..n_sites {
            let xs = self.particle.site_position(s);
            for sp in 0..n_sites {
                let xp = self.particle.site_position(sp);
                let mut acc = Complex64::ZERO;
                for i in 0..self.modes.len() {
                    let k = self.modes.point(i);
                    let k_abs = k.iter().map(|c| c * c).sum::<f64>().sqrt();
                    if k_abs >= self.config.cutoff {
                        continue;
                    }
                    let phase: f64 = (0..d).map(|nu| -k[nu] * (xs[nu] - xp[nu])).sum();
                    acc += Complex64::from_polar(
                        self.modes.weight(i) / (self.modes.omega(i) * self.modes.omega(i)),
                        phase,
                    );
                }
                pair[s * n_sites + sp] = acc;
            }
        }
        let kappa2 = self.config.kappa * self.config.kappa;
        let mut values = Vec::with_capacity(self.particle.total());
        for t in 0..self.particle.total() {
            let sites = self.particle.tuple_sites(t);
            let mut acc = Complex64::ZERO;
            for &sj in &sites {
                for &sl in &sites {
                    acc += pair[sj * n_sites + sl];
                }
            }
            let v = acc * (-kappa2 / 2.0);
            if v.im.abs() > VEFF_REALITY_TOL {
                return Err(Error::RealityViolation {
                    residue: v.im.abs(),
                    limit: VEFF_REALITY_TOL,
                });
            }
            values.push(v.re);
        }
        Ok(EffectivePotential { values })
    }

    /// H_eff = H_par + V_eff on the particle lattice.
    pub fn effective_hamiltonian(&self) -> Result<ParticleHamiltonian> {
        let veff = self.effective_potential()?;
        Ok(ParticleHamiltonian {
            kinetic: Arc::clone(&self.kinetic),
            grid: Arc::clone(&self.particle),
            potential: veff.values,
        })
    }

    /// Dressing generator Σ_j Π(f_{x_j}/ω) for one position tuple.
    pub fn dressing_generator_block(&self, flat: usize) -> Result<FockOperator> {
        let gt = self.tuple_coupling_over_omega(flat);
        fock::conjugate_field(&self.basis, &self.modes, &gt)
    }

    /// U(Λ) = exp(i (κ/Λ) Σ_j Π(f_{x_j}/ω)), one dense unitary per block.
    pub fn dressing(&self, lambda: f64) -> Result<CoupledOperator> {
        Self::check_lambda(lambda)?;
        let scale = self.config.kappa / lambda;
        let blocks: Vec<Arc<DMatrix<Complex64>>> = (0..self.particle.total())
            .into_par_iter()
            .map(|t| -> Result<Arc<DMatrix<Complex64>>> {
                let gen = self.dressing_generator_block(t)?.to_dense();
                let u = linalg::exp_i_hermitian(&gen, scale);
                let defect = &u.adjoint() * &u - DMatrix::identity(u.nrows(), u.ncols());
                let resid = frobenius_norm(&defect);
                if resid > UNITARITY_TOL {
                    return Err(Error::Unconverged(format!(
                        "dressing block {t}: unitarity residual {resid:.3e}"
                    )));
                }
                Ok(Arc::new(u))
            })
            .collect::<Result<_>>()?;
        CoupledOperator::new(
            self.particle.total(),
            self.basis.dim(),
            vec![CoupledTerm::BlockDense {
                blocks,
                scale: Complex64::ONE,
            }],
            false,
            true,
        )
    }

    /// Dense assembly of the dressing unitary.
    pub fn dressing_dense(&self, lambda: f64) -> Result<DMatrix<Complex64>> {
        self.check_dense_cap()?;
        self.dressing(lambda)?.to_dense()
    }

    /// Max over blocks of ‖U†U − I‖_F for the dressing at this Λ.
    pub fn dressing_unitarity_residual(&self, lambda: f64) -> Result<f64> {
        Self::check_lambda(lambda)?;
        let scale = self.config.kappa / lambda;
        let per: Vec<f64> = (0..self.particle.total())
            .into_par_iter()
            .map(|t| -> Result<f64> {
                let gen = self.dressing_generator_block(t)?.to_dense();
                let u = linalg::exp_i_hermitian(&gen, scale);
                let defect = &u.adjoint() * &u - DMatrix::identity(u.nrows(), u.ncols());
                Ok(frobenius_norm(&defect))
            })
            .collect::<Result<_>>()?;
        Ok(per.into_iter().fold(0.0f64, f64::max))
    }

    fn check_dense_cap(&self) -> Result<()> {
        let dim = self.coupled_dim();
        if dim > self.config.caps.dense_dim {
            return Err(Error::SizeCap {
                what: "coupled dense dimension",
                got: dim,
                cap: self.config.caps.dense_dim,
            });
        }
        Ok(())
    }

    /// K(Λ) = U†(H_par ⊗ I)U − H_par ⊗ I + V_eff, computed definitionally
    /// (route a) and as U†H(Λ)U − H₀(Λ) (route b). The two routes differ by
    /// exactly the truncated dressing-algebra defect measured by
    /// [`Self::check_dressing_algebra`].
    pub fn k_lambda(&self, lambda: f64) -> Result<KLambdaRoutes> {
        Self::check_lambda(lambda)?;
        self.check_dense_cap()?;
        let u = self.dressing(lambda)?.to_dense()?;
        let uh = u.adjoint();
        let t = kron(
            &self.kinetic.dense(&self.particle)?,
            &DMatrix::identity(self.basis.dim(), self.basis.dim()),
        );
        let veff = self.effective_potential()?;
        let veff_dense = {
            let dim = self.coupled_dim();
            let mut m = DMatrix::zeros(dim, dim);
            for p in 0..self.particle.total() {
                for f in 0..self.basis.dim() {
                    let i = p * self.basis.dim() + f;
                    m[(i, i)] = Complex64::new(veff.values[p], 0.0);
                }
            }
            m
        };
        let definitional = &uh * &t * &u - &t + &veff_dense;

        let h = self.total_hamiltonian(lambda)?.to_dense()?;
        let h0 = self.free_hamiltonian(lambda)?.to_dense()?;
        let via_transform = &uh * &h * &u - h0;
        Ok(KLambdaRoutes {
            definitional,
            via_transform,
            fock_dim: self.basis.dim(),
        })
    }

    /// Measures r(s, N_max) = max over position tuples of
    /// ‖P_s (U†(Λ²H_b + κΛφ(F))U − Λ²H_b − V_eff) P_s‖, together with the
    /// worst vacuum-expectation deviation |⟨Ω|LHS|Ω⟩ − V_eff|.
    pub fn check_dressing_algebra(&self, lambda: f64, sector_cap: usize) -> Result<DressingAlgebraReport> {
        Self::check_lambda(lambda)?;
        if 2 * sector_cap > self.config.n_max {
            return Err(Error::InvalidParameter {
                name: "sector_cap",
                reason: format!(
                    "s = {sector_cap} must satisfy s ≤ N_max/2 = {}",
                    self.config.n_max / 2
                ),
            });
        }
        let veff = self.effective_potential()?;
        let kappa = self.config.kappa;
        let hb = second_quantize_diag(&self.basis, self.modes.omegas())?.to_dense();
        let mask: Vec<bool> = (0..self.basis.dim())
            .map(|i| self.basis.total(i) <= sector_cap)
            .collect();

        let per_block: Vec<(f64, f64)> = (0..self.particle.total())
            .into_par_iter()
            .map(|t| -> Result<(f64, f64)> {
                let ft = self.tuple_coupling(t);
                let phi = fock::field(&self.basis, &self.modes, &ft)?.to_dense();
                let gen = self.dressing_generator_block(t)?.to_dense();
                let u = linalg::exp_i_hermitian(&gen, kappa / lambda);
                let inner = &hb * Complex64::new(lambda * lambda, 0.0)
                    + &phi * Complex64::new(kappa * lambda, 0.0);
                let lhs = u.adjoint() * &inner * &u;
                let mut diff = lhs.clone() - &hb * Complex64::new(lambda * lambda, 0.0);
                for i in 0..diff.nrows() {
                    diff[(i, i)] -= Complex64::new(veff.values[t], 0.0);
                }
                // project to sectors ≤ s on both sides
                let mut masked = diff.clone();
                for r in 0..masked.nrows() {
                    for c in 0..masked.ncols() {
                        if !(mask[r] && mask[c]) {
                            masked[(r, c)] = Complex64::ZERO;
                        }
                    }
                }
                let r = spectral_norm_hermitian(&masked);
                let vac_dev = (lhs[(0, 0)].re - veff.values[t]).abs()
                    + lhs[(0, 0)].im.abs();
                Ok((r, vac_dev))
            })
            .collect::<Result<_>>()?;

        let residual = per_block.iter().map(|p| p.0).fold(0.0f64, f64::max);
        let vacuum_deviation = per_block.iter().map(|p| p.1).fold(0.0f64, f64::max);
        Ok(DressingAlgebraReport {
            lambda,
            sector_cap,
            n_max: self.config.n_max,
            residual,
            vacuum_deviation,
        })
    }

    /// Normalized ground state of H_par on the lattice: the zero-momentum
    /// plane wave, i.e. the constant vector.
    pub fn particle_ground_state(&self) -> Vec<Complex64> {
        let total = self.particle.total();
        let amp = Complex64::new(1.0 / (total as f64).sqrt(), 0.0);
        vec![amp; total]
    }

    /// v ⊗ Ω as a coupled vector.
    pub fn embed_vacuum(&self, particle_vec: &[Complex64]) -> Result<Vec<Complex64>> {
        self.embed_fock_index(particle_vec, 0)
    }

    /// v ⊗ (one boson in `mode`) as a coupled vector.
    pub fn embed_one_boson(&self, particle_vec: &[Complex64], mode: usize) -> Result<Vec<Complex64>> {
        let one = fock::FockVector::one_boson(&self.basis, mode)?;
        let idx = one
            .values
            .iter()
            .position(|v| *v != Complex64::ZERO)
            .expect("one-boson amplitude");
        self.embed_fock_index(particle_vec, idx)
    }

    fn embed_fock_index(&self, particle_vec: &[Complex64], f: usize) -> Result<Vec<Complex64>> {
        if particle_vec.len() != self.particle.total() {
            return Err(Error::DimMismatch {
                what: "particle vector",
                expected: self.particle.total(),
                got: particle_vec.len(),
            });
        }
        let fd = self.basis.dim();
        let mut out = vec![Complex64::ZERO; self.coupled_dim()];
        for (p, &amp) in particle_vec.iter().enumerate() {
            out[p * fd + f] = amp;
        }
        Ok(out)
    }

    /// (I ⊗ P_Ω) ψ.
    pub fn vacuum_project(&self, coupled: &[Complex64]) -> Vec<Complex64> {
        let fd = self.basis.dim();
        let mut out = vec![Complex64::ZERO; coupled.len()];
        for p in 0..self.particle.total() {
            out[p * fd] = coupled[p * fd];
        }
        out
    }

    /// The vacuum-sector particle amplitudes of a coupled vector.
    pub fn extract_vacuum(&self, coupled: &[Complex64]) -> Vec<Complex64> {
        let fd = self.basis.dim();
        (0..self.particle.total()).map(|p| coupled[p * fd]).collect()
    }

    /// I ⊗ P_Ω as an operator (used by dense diagnostics).
    pub fn vacuum_projector_coupled(&self) -> Result<CoupledOperator> {
        let block = Arc::new(vacuum_projector(&self.basis));
        CoupledOperator::new(
            self.particle.total(),
            self.basis.dim(),
            vec![CoupledTerm::BlockSparse {
                blocks: vec![block; self.particle.total()],
                scale: Complex64::ONE,
            }],
            true,
            false,
        )
    }
}

/// H_par + V_eff acting on the particle lattice alone.
#[derive(Clone)]
pub struct ParticleHamiltonian {
    kinetic: Arc<KineticOperator>,
    grid: Arc<ParticleGrid>,
    pub potential: Vec<f64>,
}

impl ParticleHamiltonian {
    pub fn dim(&self) -> usize {
        self.grid.total()
    }

    pub fn apply(&self, v: &[Complex64]) -> Result<Vec<Complex64>> {
        let mut out = self.kinetic.apply(v)?;
        for (o, (&p, i)) in out.iter_mut().zip(self.potential.iter().zip(v)) {
            *o += p * i;
        }
        Ok(out)
    }

    pub fn dense(&self) -> Result<DMatrix<Complex64>> {
        let mut m = self.kinetic.dense(&self.grid)?;
        for (i, &p) in self.potential.iter().enumerate() {
            m[(i, i)] += Complex64::new(p, 0.0);
        }
        Ok(m)
    }
}

/// Real potential values per position tuple.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EffectivePotential {
    pub values: Vec<f64>,
}

impl EffectivePotential {
    pub fn max_abs_deviation(&self, other: &EffectivePotential) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f64, f64::max)
    }

    pub fn spread(&self) -> f64 {
        let lo = self.values.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        hi - lo
    }
}

/// Both computations of K(Λ); see [`Model::k_lambda`].
pub struct KLambdaRoutes {
    pub definitional: DMatrix<Complex64>,
    pub via_transform: DMatrix<Complex64>,
    fock_dim: usize,
}

impl KLambdaRoutes {
    /// ‖P_s (a − b) P_s‖ over boson sectors ≤ s.
    pub fn route_difference_low_sector(&self, basis: &FockBasis, sector_cap: usize) -> f64 {
        let fd = self.fock_dim;
        let mask = |i: usize| basis.total(i % fd) <= sector_cap;
        let mut diff = &self.definitional - &self.via_transform;
        for r in 0..diff.nrows() {
            for c in 0..diff.ncols() {
                if !(mask(r) && mask(c)) {
                    diff[(r, c)] = Complex64::ZERO;
                }
            }
        }
        crate::linalg::spectral_norm(&diff)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct DressingAlgebraReport {
    pub lambda: f64,
    pub sector_cap: usize,
    pub n_max: usize,
    /// max over blocks of ‖P_s(LHS − RHS)P_s‖.
    pub residual: f64,
    /// max over blocks of |⟨Ω|LHS|Ω⟩ − V_eff|.
    pub vacuum_deviation: f64,
}

/// One term of a coupled-space operator.
#[derive(Clone)]
pub enum CoupledTerm {
    /// H_par ⊗ I (applied by per-axis DFT hops).
    KineticTensor {
        kin: Arc<KineticOperator>,
        grid: Arc<ParticleGrid>,
        scale: f64,
    },
    /// I ⊗ diag (e.g. Λ² dΓ(ω)).
    FockDiagonal { diag: Arc<Vec<f64>>, scale: f64 },
    /// diag(V(x)) ⊗ I.
    PositionDiagonal { values: Arc<Vec<f64>>, scale: f64 },
    /// One sparse Fock block per position tuple.
    BlockSparse {
        blocks: Vec<Arc<FockOperator>>,
        scale: Complex64,
    },
    /// One dense Fock block per position tuple (e.g. dressing exponentials).
    BlockDense {
        blocks: Vec<Arc<DMatrix<Complex64>>>,
        scale: Complex64,
    },
    /// Fully assembled dense matrix (oracle scale only).
    FullDense { matrix: Arc<DMatrix<Complex64>> },
}

/// Sum-of-terms operator on the coupled space, immutable after construction.
/// Hermitian/unitary flags are verified numerically at build time with fixed
/// probe vectors.
#[derive(Clone)]
pub struct CoupledOperator {
    n_pos: usize,
    fock_dim: usize,
    terms: Vec<CoupledTerm>,
    hermitian: bool,
    unitary: bool,
}

impl CoupledOperator {
    pub fn new(
        n_pos: usize,
        fock_dim: usize,
        terms: Vec<CoupledTerm>,
        hermitian: bool,
        unitary: bool,
    ) -> Result<Self> {
        let dim = n_pos * fock_dim;
        for term in &terms {
            let (what, expected, got) = match term {
                CoupledTerm::KineticTensor { kin, grid, .. } => (
                    "kinetic tensor term",
                    n_pos,
                    if grid.total() == kin.dim() { kin.dim() } else { usize::MAX },
                ),
                CoupledTerm::FockDiagonal { diag, .. } => ("fock diagonal term", fock_dim, diag.len()),
                CoupledTerm::PositionDiagonal { values, .. } => {
                    ("position diagonal term", n_pos, values.len())
                }
                CoupledTerm::BlockSparse { blocks, .. } => (
                    "block-sparse term",
                    n_pos,
                    if blocks.iter().all(|b| b.dim() == fock_dim) {
                        blocks.len()
                    } else {
                        usize::MAX
                    },
                ),
                CoupledTerm::BlockDense { blocks, .. } => (
                    "block-dense term",
                    n_pos,
                    if blocks.iter().all(|b| b.nrows() == fock_dim && b.ncols() == fock_dim) {
                        blocks.len()
                    } else {
                        usize::MAX
                    },
                ),
                CoupledTerm::FullDense { matrix } => (
                    "dense term",
                    dim,
                    if matrix.ncols() == dim { matrix.nrows() } else { usize::MAX },
                ),
            };
            if expected != got {
                return Err(Error::DimMismatch {
                    what,
                    expected,
                    got,
                });
            }
        }
        let op = CoupledOperator {
            n_pos,
            fock_dim,
            terms,
            hermitian,
            unitary,
        };
        op.verify_flags()?;
        Ok(op)
    }

    pub fn dim(&self) -> usize {
        self.n_pos * self.fock_dim
    }

    pub fn n_pos(&self) -> usize {
        self.n_pos
    }

    pub fn fock_dim(&self) -> usize {
        self.fock_dim
    }

    pub fn is_hermitian(&self) -> bool {
        self.hermitian
    }

    pub fn is_unitary(&self) -> bool {
        self.unitary
    }

    fn verify_flags(&self) -> Result<()> {
        if !self.hermitian && !self.unitary {
            return Ok(());
        }
        let mut rng = crate::analysis::seeded_rng(PROBE_SEED);
        for _ in 0..3 {
            let u = random_coupled(self.dim(), &mut rng);
            let v = random_coupled(self.dim(), &mut rng);
            let au = self.apply(&u)?;
            let av = self.apply(&v)?;
            if self.hermitian {
                let lhs = linalg::vec_dot(&u, &av);
                let rhs = linalg::vec_dot(&au, &v);
                let scale = linalg::vec_norm(&av).max(1.0);
                if (lhs - rhs).norm() > FLAG_TOL * scale {
                    return Err(Error::InvalidParameter {
                        name: "hermitian",
                        reason: format!(
                            "flag verification failed: |<u,Av> - <Au,v>| = {:.3e}",
                            (lhs - rhs).norm()
                        ),
                    });
                }
            }
            if self.unitary {
                let defect = (linalg::vec_norm(&au) - linalg::vec_norm(&u)).abs();
                if defect > FLAG_TOL {
                    return Err(Error::InvalidParameter {
                        name: "unitary",
                        reason: format!("flag verification failed: norm defect {defect:.3e}"),
                    });
                }
            }
        }
        Ok(())
    }

    pub fn apply(&self, v: &[Complex64]) -> Result<Vec<Complex64>> {
        if v.len() != self.dim() {
            return Err(Error::DimMismatch {
                what: "coupled apply",
                expected: self.dim(),
                got: v.len(),
            });
        }
        let fd = self.fock_dim;
        let mut out = vec![Complex64::ZERO; v.len()];
        for term in &self.terms {
            match term {
                CoupledTerm::KineticTensor { kin, scale, .. } => {
                    let mut column = vec![Complex64::ZERO; self.n_pos];
                    for f in 0..fd {
                        for p in 0..self.n_pos {
                            column[p] = v[p * fd + f];
                        }
                        let applied = kin.apply(&column)?;
                        for p in 0..self.n_pos {
                            out[p * fd + f] += *scale * applied[p];
                        }
                    }
                }
                CoupledTerm::FockDiagonal { diag, scale } => {
                    for p in 0..self.n_pos {
                        for f in 0..fd {
                            out[p * fd + f] += *scale * diag[f] * v[p * fd + f];
                        }
                    }
                }
                CoupledTerm::PositionDiagonal { values, scale } => {
                    for p in 0..self.n_pos {
                        for f in 0..fd {
                            out[p * fd + f] += *scale * values[p] * v[p * fd + f];
                        }
                    }
                }
                CoupledTerm::BlockSparse { blocks, scale } => {
                    out.par_chunks_mut(fd)
                        .zip(v.par_chunks(fd))
                        .zip(blocks.par_iter())
                        .for_each(|((o, slice), block)| {
                            let applied = block.apply(slice).expect("block dims");
                            for (oi, ai) in o.iter_mut().zip(&applied) {
                                *oi += *scale * ai;
                            }
                        });
                }
                CoupledTerm::BlockDense { blocks, scale } => {
                    out.par_chunks_mut(fd)
                        .zip(v.par_chunks(fd))
                        .zip(blocks.par_iter())
                        .for_each(|((o, slice), block)| {
                            let applied =
                                block.as_ref() * nalgebra::DVector::from_column_slice(slice);
                            for (oi, ai) in o.iter_mut().zip(applied.iter()) {
                                *oi += *scale * ai;
                            }
                        });
                }
                CoupledTerm::FullDense { matrix } => {
                    let applied = matrix.as_ref() * nalgebra::DVector::from_column_slice(v);
                    for (oi, ai) in out.iter_mut().zip(applied.iter()) {
                        *oi += ai;
                    }
                }
            }
        }
        Ok(out)
    }

    /// Dense assembly (no cap check here; callers gate on their config).
    pub fn to_dense(&self) -> Result<DMatrix<Complex64>> {
        let dim = self.dim();
        let fd = self.fock_dim;
        let mut m = DMatrix::zeros(dim, dim);
        for term in &self.terms {
            match term {
                CoupledTerm::KineticTensor { kin, grid, scale } => {
                    let kd = kin.dense(grid)?;
                    let id = DMatrix::identity(fd, fd);
                    m += kron(&kd, &id) * Complex64::new(*scale, 0.0);
                }
                CoupledTerm::FockDiagonal { diag, scale } => {
                    for p in 0..self.n_pos {
                        for f in 0..fd {
                            let i = p * fd + f;
                            m[(i, i)] += Complex64::new(*scale * diag[f], 0.0);
                        }
                    }
                }
                CoupledTerm::PositionDiagonal { values, scale } => {
                    for p in 0..self.n_pos {
                        for f in 0..fd {
                            let i = p * fd + f;
                            m[(i, i)] += Complex64::new(*scale * values[p], 0.0);
                        }
                    }
                }
                CoupledTerm::BlockSparse { blocks, scale } => {
                    for (p, block) in blocks.iter().enumerate() {
                        let bd = block.to_dense();
                        for r in 0..fd {
                            for c in 0..fd {
                                m[(p * fd + r, p * fd + c)] += *scale * bd[(r, c)];
                            }
                        }
                    }
                }
                CoupledTerm::BlockDense { blocks, scale } => {
                    for (p, block) in blocks.iter().enumerate() {
                        for r in 0..fd {
                            for c in 0..fd {
                                m[(p * fd + r, p * fd + c)] += *scale * block[(r, c)];
                            }
                        }
                    }
                }
                CoupledTerm::FullDense { matrix } => {
                    m += matrix.as_ref();
                }
            }
        }
        Ok(m)
    }

    pub fn from_dense(n_pos: usize, fock_dim: usize, matrix: DMatrix<Complex64>) -> Result<Self> {
        CoupledOperator::new(
            n_pos,
            fock_dim,
            vec![CoupledTerm::FullDense {
                matrix: Arc::new(matrix),
            }],
            false,
            false,
        )
    }

    /// Coordinate-list dump of the dense assembly, header
    /// `# coupled nx=<n> dim=<D>`.
    pub fn dump_coo<W: std::io::Write>(&self, w: &mut W, n_x: usize) -> Result<()> {
        let m = self.to_dense()?;
        writeln!(w, "# coupled nx={} dim={}", n_x, self.dim())?;
        for r in 0..m.nrows() {
            for c in 0..m.ncols() {
                let v = m[(r, c)];
                if v != Complex64::ZERO {
                    writeln!(w, "{} {} {:e} {:e}", r, c, v.re, v.im)?;
                }
            }
        }
        Ok(())
    }
}

fn random_coupled<R: rand::Rng>(dim: usize, rng: &mut R) -> Vec<Complex64> {
    use rand_distr::StandardNormal;
    let mut v: Vec<Complex64> = (0..dim)
        .map(|_| {
            let re: f64 = rng.sample(StandardNormal);
            let im: f64 = rng.sample(StandardNormal);
            Complex64::new(re, im)
        })
        .collect();
    let n = linalg::vec_norm(&v);
    if n > 0.0 {
        for c in v.iter_mut() {
            *c /= n;
        }
    }
    v
}
