//! Convergence experiments and the consolidated property-check suite.
//!
//! The scaling-limit experiments measure, vector by vector,
//! e(Λ) = ‖(H(Λ) − z)⁻¹ψ − ((H_eff − z)⁻¹ ⊗ P_Ω)ψ‖ and its time-evolution
//! counterpart. Resolvents are solved matrix-free by GMRES with a dense LU
//! oracle; evolution uses the dense Hermitian eigendecomposition at desk
//! scale and a Lanczos propagator matrix-free.

use std::collections::BTreeMap;
use std::io::Write;
use std::time::Instant;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::SeedableRng;
use rayon::prelude::*;
use serde::Serialize;

use crate::assembly::{CoupledOperator, Model, ModelConfig};
use crate::error::{Error, Result};
use crate::fock::{self, FockBasis};
use crate::linalg::{gmres, hermitian_eigen, kron, lu_solve_shifted, spectral_norm, vec_norm};
use crate::modes::{CouplingFamily, ModeGrid, WeightedVector};
use crate::particle::{check_lemma32, default_lemma32_scan, ParticleGrid};

pub fn seeded_rng(seed: u64) -> rand_chacha::ChaCha12Rng {
    rand_chacha::ChaCha12Rng::seed_from_u64(seed)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SolverOptions {
    /// Relative residual target for iterative solves.
    pub tol: f64,
    pub max_iter: usize,
    /// GMRES restart length; `None` runs full orthogonalization.
    pub restart: Option<usize>,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            tol: 1e-10,
            max_iter: 20_000,
            restart: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ResolveOutcome {
    pub x: Vec<Complex64>,
    pub residual: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Solves (H − z)x = b matrix-free. Non-convergence is reported in the
/// outcome, never silently.
pub fn resolve(
    h: &CoupledOperator,
    z: Complex64,
    b: &[Complex64],
    opts: &SolverOptions,
) -> Result<ResolveOutcome> {
    if z.im == 0.0 {
        return Err(Error::InvalidParameter {
            name: "z",
            reason: "resolvent shift must have Im z != 0".into(),
        });
    }
    let out = gmres(
        |v| {
            let mut hv = h.apply(v).expect("operator dims fixed");
            for (hvi, vi) in hv.iter_mut().zip(v) {
                *hvi -= z * vi;
            }
            hv
        },
        b,
        opts.tol,
        opts.max_iter,
        opts.restart,
    );
    Ok(ResolveOutcome {
        x: out.x,
        residual: out.residual,
        iterations: out.iterations,
        converged: out.converged,
    })
}

/// One point of a Λ-sweep.
#[derive(Debug, Clone, Serialize)]
pub struct SweepRecord {
    pub lambda: f64,
    pub z: Complex64,
    pub vector_id: String,
    /// ‖(H(Λ) − z)⁻¹ψ − ((H_eff − z)⁻¹ ⊗ P_Ω)ψ‖
    pub error: f64,
    /// Relative solver residual of the Krylov solve.
    pub residual: f64,
    pub wall_ms: f64,
    pub converged: bool,
}

/// Tagged unit-norm test vectors for the strong-limit experiments.
#[derive(Debug, Clone)]
pub struct TestVectorSet {
    pub entries: Vec<(String, Vec<Complex64>)>,
}

impl TestVectorSet {
    /// vacuum-sector ground ⊗ Ω, an excited one-boson companion, and their
    /// equal-weight mixture.
    pub fn standard(model: &Model) -> Result<Self> {
        let ground = model.particle_ground_state();
        let vac = model.embed_vacuum(&ground)?;
        let mut entries = vec![("vac_ground".to_string(), vac.clone())];
        if model.basis().n_max() >= 1 {
            let exc = model.embed_one_boson(&ground, 0)?;
            let mixed: Vec<Complex64> = vac
                .iter()
                .zip(&exc)
                .map(|(a, b)| (a + b) / 2.0_f64.sqrt())
                .collect();
            entries.push(("exc_ground_m0".to_string(), exc));
            entries.push(("mix_ground".to_string(), mixed));
        }
        Ok(TestVectorSet { entries })
    }
}

/// (H_eff − z)⁻¹ ⊗ P_Ω applied to ψ, by a dense particle-space solve.
pub fn limit_resolvent_target(
    model: &Model,
    z: Complex64,
    psi: &[Complex64],
) -> Result<Vec<Complex64>> {
    let heff = model.effective_hamiltonian()?;
    let psi_vac = model.extract_vacuum(psi);
    let y = lu_solve_shifted(&heff.dense()?, z, &psi_vac)?;
    model.embed_vacuum(&y)
}

/// e(Λ) for one test vector.
pub fn resolvent_error(
    model: &Model,
    lambda: f64,
    z: Complex64,
    psi: &[Complex64],
    vector_id: &str,
    opts: &SolverOptions,
) -> Result<SweepRecord> {
    let start = Instant::now();
    let h = model.total_hamiltonian(lambda)?;
    let solved = resolve(&h, z, psi, opts)?;
    let target = limit_resolvent_target(model, z, psi)?;
    let error: f64 = solved
        .x
        .iter()
        .zip(&target)
        .map(|(a, b)| (a - b).norm_sqr())
        .sum::<f64>()
        .sqrt();
    Ok(SweepRecord {
        lambda,
        z,
        vector_id: vector_id.to_string(),
        error,
        residual: solved.residual,
        wall_ms: start.elapsed().as_secs_f64() * 1e3,
        converged: solved.converged,
    })
}

/// Runs e(Λ) over a strictly increasing Λ list for every test vector.
/// Jobs are independent and run in parallel; records are merged in
/// (Λ, vector) order regardless of completion order.
pub fn sweep_lambda(
    model: &Model,
    lambdas: &[f64],
    z: Complex64,
    vectors: &TestVectorSet,
    opts: &SolverOptions,
) -> Result<Vec<SweepRecord>> {
    check_lambda_list(lambdas)?;
    let jobs: Vec<(usize, usize)> = (0..lambdas.len())
        .flat_map(|li| (0..vectors.entries.len()).map(move |vi| (li, vi)))
        .collect();
    let mut records = jobs
        .into_par_iter()
        .map(|(li, vi)| {
            let (id, psi) = &vectors.entries[vi];
            resolvent_error(model, lambdas[li], z, psi, id, opts)
        })
        .collect::<Result<Vec<_>>>()?;
    records.sort_by(|a, b| {
        a.lambda
            .partial_cmp(&b.lambda)
            .unwrap()
            .then_with(|| a.vector_id.cmp(&b.vector_id))
    });
    Ok(records)
}

fn check_lambda_list(lambdas: &[f64]) -> Result<()> {
    if lambdas.is_empty() {
        return Err(Error::InvalidParameter {
            name: "lambda_list",
            reason: "at least one Λ required".into(),
        });
    }
    if lambdas.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidParameter {
            name: "lambda_list",
            reason: "must be strictly increasing".into(),
        });
    }
    if lambdas[0] <= 0.0 {
        return Err(Error::InvalidParameter {
            name: "lambda_list",
            reason: "Λ must be positive".into(),
        });
    }
    Ok(())
}

/// Truncation floor: change of e(Λ) under N_max → N_max + 1, at the largest
/// sweep Λ for the vacuum ground vector. Convergence claims stop here.
pub fn sweep_truncation_floor(
    model: &Model,
    lambda: f64,
    z: Complex64,
    opts: &SolverOptions,
) -> Result<f64> {
    let refined = Model::new(ModelConfig {
        n_max: model.config().n_max + 1,
        ..model.config().clone()
    })?;
    let psi = model.embed_vacuum(&model.particle_ground_state())?;
    let psi_ref = refined.embed_vacuum(&refined.particle_ground_state())?;
    let e0 = resolvent_error(model, lambda, z, &psi, "floor", opts)?;
    let e1 = resolvent_error(&refined, lambda, z, &psi_ref, "floor", opts)?;
    Ok((e0.error - e1.error).abs())
}

/// Dense spectral propagator e^{−itH} for a fixed Hermitian matrix.
pub struct Propagator {
    values: Vec<f64>,
    vectors: DMatrix<Complex64>,
}

impl Propagator {
    pub fn new(h: &DMatrix<Complex64>) -> Self {
        let (values, vectors) = hermitian_eigen(h);
        Propagator { values, vectors }
    }

    pub fn apply(&self, t: f64, psi: &[Complex64]) -> Vec<Complex64> {
        let coeffs = self.vectors.adjoint() * nalgebra::DVector::from_column_slice(psi);
        let evolved = nalgebra::DVector::from_iterator(
            coeffs.len(),
            coeffs
                .iter()
                .zip(&self.values)
                .map(|(c, &e)| c * Complex64::from_polar(1.0, -t * e)),
        );
        (&self.vectors * evolved).iter().copied().collect()
    }
}

/// e^{−itH}ψ via the dense eigendecomposition.
pub fn evolve_dense(h: &DMatrix<Complex64>, t: f64, psi: &[Complex64]) -> Vec<Complex64> {
    Propagator::new(h).apply(t, psi)
}

#[derive(Debug, Clone, Serialize)]
pub struct EvolutionRecord {
    pub lambda: f64,
    pub t: f64,
    pub vector_id: String,
    /// ‖e^{−itH(Λ)}(I⊗P_Ω)ψ − (e^{−itH_eff} ⊗ P_Ω)ψ‖
    pub error: f64,
    pub unitarity_defect: f64,
    pub wall_ms: f64,
}

/// Corollary-style evolution comparison for every (Λ, t, ψ).
pub fn evolve_sweep(
    model: &Model,
    lambdas: &[f64],
    ts: &[f64],
    vectors: &TestVectorSet,
) -> Result<Vec<EvolutionRecord>> {
    check_lambda_list(lambdas)?;
    if model.coupled_dim() > model.config().caps.dense_dim {
        return Err(Error::SizeCap {
            what: "evolution dense dimension",
            got: model.coupled_dim(),
            cap: model.config().caps.dense_dim,
        });
    }
    let heff_dense = model.effective_hamiltonian()?.dense()?;
    let target_prop = Propagator::new(&heff_dense);

    let mut records: Vec<EvolutionRecord> = lambdas
        .par_iter()
        .flat_map(|&lambda| {
            let started = Instant::now();
            let h = model
                .total_hamiltonian(lambda)
                .and_then(|h| h.to_dense())
                .expect("dense cap checked");
            let prop = Propagator::new(&h);
            let setup_ms = started.elapsed().as_secs_f64() * 1e3;
            vectors
                .entries
                .iter()
                .flat_map(|(id, psi)| {
                    let projected = model.vacuum_project(psi);
                    let p_norm = vec_norm(&projected);
                    ts.iter()
                        .map(|&t| {
                            let start = Instant::now();
                            let evolved = prop.apply(t, &projected);
                            let defect = (vec_norm(&evolved) - p_norm).abs();
                            let target_particle =
                                target_prop.apply(t, &model.extract_vacuum(psi));
                            let target = model
                                .embed_vacuum(&target_particle)
                                .expect("dims fixed");
                            let error: f64 = evolved
                                .iter()
                                .zip(&target)
                                .map(|(a, b)| (a - b).norm_sqr())
                                .sum::<f64>()
                                .sqrt();
                            EvolutionRecord {
                                lambda,
                                t,
                                vector_id: id.clone(),
                                error,
                                unitarity_defect: defect,
                                wall_ms: setup_ms + start.elapsed().as_secs_f64() * 1e3,
                            }
                        })
                        .collect::<Vec<_>>()
                })
                .collect::<Vec<_>>()
        })
        .collect();
    records.sort_by(|a, b| {
        a.lambda
            .partial_cmp(&b.lambda)
            .unwrap()
            .then(a.t.partial_cmp(&b.t).unwrap())
            .then_with(|| a.vector_id.cmp(&b.vector_id))
    });
    Ok(records)
}

/// Single-point evolution error.
pub fn evolution_error(
    model: &Model,
    lambda: f64,
    t: f64,
    psi: &[Complex64],
    vector_id: &str,
) -> Result<EvolutionRecord> {
    let set = TestVectorSet {
        entries: vec![(vector_id.to_string(), psi.to_vec())],
    };
    let mut records = evolve_sweep(model, &[lambda], &[t], &set)?;
    Ok(records.remove(0))
}

#[derive(Debug, Clone, Serialize)]
pub struct Prop31Row {
    pub lambda: f64,
    pub vector_id: String,
    /// ‖(U†(H_par⊗I)U − H_par⊗I)Ψ‖ / (‖H₀(Λ)Ψ‖ + ‖Ψ‖)
    pub rho: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct Prop31Report {
    pub rows: Vec<Prop31Row>,
    pub nonincreasing: bool,
    /// log-log slope of ρ(Λ) over the finest three sweep points, per vector.
    pub tail_slopes: BTreeMap<String, f64>,
}

/// Measures the dressed-kinetic defect ratio ρ(Λ) over a Λ sweep.
pub fn diagnostics_proposition31(
    model: &Model,
    lambdas: &[f64],
    vectors: &TestVectorSet,
) -> Result<Prop31Report> {
    check_lambda_list(lambdas)?;
    if model.coupled_dim() > model.config().caps.dense_dim {
        return Err(Error::SizeCap {
            what: "prop31 dense dimension",
            got: model.coupled_dim(),
            cap: model.config().caps.dense_dim,
        });
    }
    let fd = model.basis().dim();
    let t_dense = kron(
        &model.kinetic().dense(model.particle())?,
        &DMatrix::identity(fd, fd),
    );
    let mut rows = Vec::new();
    for &lambda in lambdas {
        let u = model.dressing(lambda)?.to_dense()?;
        let defect = u.adjoint() * &t_dense * &u - &t_dense;
        let h0 = model.free_hamiltonian(lambda)?;
        for (id, psi) in &vectors.entries {
            let num = (&defect * nalgebra::DVector::from_column_slice(psi)).norm();
            let den = vec_norm(&h0.apply(psi)?) + vec_norm(psi);
            rows.push(Prop31Row {
                lambda,
                vector_id: id.clone(),
                rho: num / den,
            });
        }
    }
    let mut nonincreasing = true;
    let mut tail_slopes = BTreeMap::new();
    for (id, _) in &vectors.entries {
        let series: Vec<(f64, f64)> = rows
            .iter()
            .filter(|r| &r.vector_id == id)
            .map(|r| (r.lambda, r.rho))
            .collect();
        for w in series.windows(2) {
            if w[1].1 > w[0].1 * (1.0 + 1e-9) {
                nonincreasing = false;
            }
        }
        if series.len() >= 3 && series.iter().all(|&(_, r)| r > 0.0) {
            let tail = &series[series.len() - 3..];
            tail_slopes.insert(id.clone(), log_log_slope(tail));
        }
    }
    Ok(Prop31Report {
        rows,
        nonincreasing,
        tail_slopes,
    })
}

/// Least-squares slope of ln(y) against ln(x).
pub fn log_log_slope(points: &[(f64, f64)]) -> f64 {
    let n = points.len() as f64;
    let (mut sx, mut sy, mut sxx, mut sxy) = (0.0, 0.0, 0.0, 0.0);
    for &(x, y) in points {
        let lx = x.ln();
        let ly = y.ln();
        sx += lx;
        sy += ly;
        sxx += lx * lx;
        sxy += lx * ly;
    }
    (n * sxy - sx * sy) / (n * sxx - sx * sx)
}

// ---------------------------------------------------------------------------
// Consolidated property suite
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy)]
pub struct SuiteOptions {
    pub seed: u64,
    pub trials: usize,
    /// Λ at which the dressing checks run.
    pub lambda: f64,
}

impl Default for SuiteOptions {
    fn default() -> Self {
        SuiteOptions {
            seed: 42,
            trials: 200,
            lambda: 1.0,
        }
    }
}

/// One suite entry. `pass` is `None` when the check is vacuous or skipped.
#[derive(Debug, Clone, Serialize)]
pub struct CheckResult {
    pub pass: Option<bool>,
    pub residual: Option<f64>,
    pub threshold: Option<f64>,
    pub details: String,
}

impl CheckResult {
    fn measured(residual: f64, threshold: f64, details: String) -> Self {
        CheckResult {
            pass: Some(residual <= threshold),
            residual: Some(residual),
            threshold: Some(threshold),
            details,
        }
    }

    fn vacuous(details: String) -> Self {
        CheckResult {
            pass: None,
            residual: None,
            threshold: None,
            details,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
#[serde(transparent)]
pub struct PropertySuite {
    pub checks: BTreeMap<String, CheckResult>,
}

impl PropertySuite {
    pub fn all_pass(&self) -> bool {
        !self.checks.values().any(|c| c.pass == Some(false))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("suite serialization")
    }
}

/// Runs the consolidated checks for a configuration: assumption validation,
/// CCR and adjoint exactness on the safe sector, the conjugate-field
/// commutators, the momentum commutator in block form, relative bounds,
/// dressing unitarity and truncation decay, and the kinetic envelope scan.
pub fn run_property_suite(config: ModelConfig, opts: &SuiteOptions) -> PropertySuite {
    let built = (|| -> Result<(ParticleGrid, ModeGrid, CouplingFamily)> {
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
        Ok((particle, modes, coupling))
    })();
    match built {
        Ok((particle, modes, coupling)) => {
            run_property_suite_with_parts(config, particle, modes, coupling, opts)
        }
        Err(e) => {
            let mut checks = BTreeMap::new();
            checks.insert(
                "config_build".to_string(),
                CheckResult {
                    pass: Some(false),
                    residual: None,
                    threshold: None,
                    details: format!("{e}"),
                },
            );
            PropertySuite { checks }
        }
    }
}

/// Suite entry point that accepts injected grids, so broken discretizations
/// are reported rather than rejected upfront.
pub fn run_property_suite_with_parts(
    config: ModelConfig,
    particle: ParticleGrid,
    modes: ModeGrid,
    coupling: CouplingFamily,
    opts: &SuiteOptions,
) -> PropertySuite {
    let mut checks = BTreeMap::new();

    let sites: Vec<Vec<f64>> = (0..particle.site_count())
        .map(|s| particle.site_position(s))
        .collect();
    let validation = crate::modes::validate_assumptions(&modes, &coupling, &sites);
    for (name, q) in &validation.entries {
        checks.insert(
            format!("assumption_{name}"),
            CheckResult {
                pass: Some(q.pass),
                residual: q.value,
                threshold: q.threshold,
                details: String::new(),
            },
        );
    }
    if !validation.pass() {
        let skipped = "skipped: assumption validation failed".to_string();
        for name in [
            "ccr_safe_sector",
            "adjoint_exactness",
            "commutator_pi_number",
            "commutator_pi_field",
            "commutator_pi_momentum",
            "relative_bounds",
            "dressing_unitarity",
            "dressing_truncation_decay",
            "lemma32_envelope",
        ] {
            checks.insert(name.to_string(), CheckResult::vacuous(skipped.clone()));
        }
        return PropertySuite { checks };
    }

    let model = match Model::from_parts(config.clone(), particle, modes, coupling) {
        Ok(m) => m,
        Err(e) => {
            checks.insert(
                "model_build".to_string(),
                CheckResult {
                    pass: Some(false),
                    residual: None,
                    threshold: None,
                    details: format!("{e}"),
                },
            );
            return PropertySuite { checks };
        }
    };

    fock_algebra_checks(&model, opts, &mut checks);
    momentum_commutator_check(&model, &mut checks);
    relative_bounds_check(&model, opts, &mut checks);
    dressing_checks(&model, opts, &mut checks);
    lemma32_check(&model, &mut checks);

    PropertySuite { checks }
}

fn random_weighted(n: usize, rng: &mut impl rand::Rng) -> WeightedVector {
    use rand_distr::StandardNormal;
    WeightedVector::from_values(
        (0..n)
            .map(|_| {
                let re: f64 = rng.sample(StandardNormal);
                let im: f64 = rng.sample(StandardNormal);
                Complex64::new(re, im)
            })
            .collect(),
    )
}

/// Max |entry| over columns whose total occupation is ≤ `col_cap`.
fn masked_max(m: &DMatrix<Complex64>, basis: &FockBasis, col_cap: usize) -> f64 {
    let mut acc = 0.0_f64;
    for c in 0..m.ncols() {
        if basis.total(c) > col_cap {
            continue;
        }
        for r in 0..m.nrows() {
            acc = acc.max(m[(r, c)].norm());
        }
    }
    acc
}

fn fock_algebra_checks(
    model: &Model,
    opts: &SuiteOptions,
    checks: &mut BTreeMap<String, CheckResult>,
) {
    let basis = model.basis();
    let grid = model.modes();
    let n_max = basis.n_max();
    let details = format!("seed={}, K={}, N_max={}", opts.seed, basis.n_modes(), n_max);
    if n_max == 0 {
        let why = "vacuous: safe sector empty at N_max = 0".to_string();
        checks.insert("ccr_safe_sector".into(), CheckResult::vacuous(why.clone()));
        checks.insert("commutator_pi_number".into(), CheckResult::vacuous(why.clone()));
        checks.insert("commutator_pi_field".into(), CheckResult::vacuous(why));
    }
    let mut rng = seeded_rng(opts.seed);

    // adjoint exactness is structural: compare stored matrices entrywise
    let eta = random_weighted(grid.len(), &mut rng);
    let adjoint_resid = (|| -> Result<f64> {
        let a = fock::annihilate(basis, grid, &eta)?;
        let c = fock::create(basis, grid, &eta)?;
        let diff = c.to_dense() - a.to_dense().adjoint();
        Ok(diff.iter().fold(0.0f64, |acc, v| acc.max(v.norm())))
    })();
    checks.insert(
        "adjoint_exactness".into(),
        match adjoint_resid {
            Ok(r) => CheckResult::measured(r, 1e-12, details.clone()),
            Err(e) => CheckResult::vacuous(format!("skipped: {e}")),
        },
    );

    if n_max == 0 {
        return;
    }
    let safe = n_max - 1;

    let mut ccr_resid = 0.0_f64;
    let mut pi_phi_resid = 0.0_f64;
    for _ in 0..3 {
        let xi = random_weighted(grid.len(), &mut rng);
        let eta = random_weighted(grid.len(), &mut rng);
        let (Ok(a), Ok(c)) = (
            fock::annihilate(basis, grid, &xi),
            fock::create(basis, grid, &eta),
        ) else {
            continue;
        };
        let ad = a.to_dense();
        let cd = c.to_dense();
        let mut comm = &ad * &cd - &cd * &ad;
        let ip = crate::modes::inner_w(grid, &xi, &eta).expect("dims");
        for i in 0..comm.nrows() {
            comm[(i, i)] -= ip;
        }
        ccr_resid = ccr_resid.max(masked_max(&comm, basis, safe));

        let (Ok(pi), Ok(phi)) = (
            fock::conjugate_field(basis, grid, &xi),
            fock::field(basis, grid, &eta),
        ) else {
            continue;
        };
        let pid = pi.to_dense();
        let phid = phi.to_dense();
        let mut comm2 = &pid * &phid - &phid * &pid;
        let scalar = (crate::modes::inner_w(grid, &xi, &eta).expect("dims")
            + crate::modes::inner_w(grid, &eta, &xi).expect("dims"))
            * Complex64::new(0.0, -0.5);
        for i in 0..comm2.nrows() {
            comm2[(i, i)] -= scalar;
        }
        pi_phi_resid = pi_phi_resid.max(masked_max(&comm2, basis, safe));
    }
    checks.insert(
        "ccr_safe_sector".into(),
        CheckResult::measured(ccr_resid, 1e-12, details.clone()),
    );
    checks.insert(
        "commutator_pi_field".into(),
        CheckResult::measured(pi_phi_resid, 1e-12, details.clone()),
    );

    // [Π(ξ), dΓ(ω)] = −i φ(ωξ)
    let mut pi_num_resid = 0.0_f64;
    for _ in 0..3 {
        let xi = random_weighted(grid.len(), &mut rng);
        let pi = fock::conjugate_field(basis, grid, &xi).expect("dims");
        let hb = fock::second_quantize_diag(basis, grid.omegas()).expect("dims");
        let pid = pi.to_dense();
        let hbd = hb.to_dense();
        let comm = &pid * &hbd - &hbd * &pid;
        let omega_xi = xi.omega_mul(grid).expect("dims");
        let rhs = fock::field(basis, grid, &omega_xi)
            .expect("dims")
            .to_dense()
            .map(|v| v * Complex64::new(0.0, -1.0));
        pi_num_resid = pi_num_resid.max(masked_max(&(comm - rhs), basis, safe));
    }
    checks.insert(
        "commutator_pi_number".into(),
        CheckResult::measured(pi_num_resid, 1e-12, details),
    );
}

/// [Π(f_x), p̂^ν] = iΠ(∂_{x^ν} f_x) in block form: the position-block family
/// is conjugated by the lattice DFT momentum operator and differenced
/// against the derivative blocks built from the analytic derivatives.
///
/// The lattice represents the identity faithfully only inside its spectral
/// budget, so the check (a) uses a lattice-commensurate companion of the
/// configured mode grid (spacing 4π/L), and (b) restricts inputs to particle
/// frequencies low enough that the products Π(f_x)ψ stay below Nyquist —
/// outside that band the spectral derivative would alias, which is a
/// discretization artifact rather than an algebra violation.
fn momentum_commutator_check(model: &Model, checks: &mut BTreeMap<String, CheckResult>) {
    let config = model.config();
    if config.dim != 1 {
        checks.insert(
            "commutator_pi_momentum".into(),
            CheckResult::vacuous("vacuous: block momentum check implemented for d = 1".into()),
        );
        return;
    }
    if config.n_max == 0 {
        checks.insert(
            "commutator_pi_momentum".into(),
            CheckResult::vacuous("vacuous: safe sector empty at N_max = 0".into()),
        );
        return;
    }
    let n_k = config.n_k;
    // mode momenta sit at odd multiples of 2π/L up to index n_k − 1; the
    // check lattice must hold twice that band plus the probe band
    let k_idx_max = n_k - 1;
    let n_x = config.n_x.max(2 * (2 * k_idx_max + 1)).div_ceil(2) * 2;
    let probe_band = n_x / 2 - 1 - k_idx_max;

    let result = (|| -> Result<f64> {
        let base = 2.0 * std::f64::consts::TAU / config.length; // 4π/L
        let k_max = n_k as f64 * base / 2.0;
        let modes = crate::modes::build_mode_grid(1, n_k, k_max, config.dispersion)?;
        let family = CouplingFamily::characteristic(k_max)?;
        let basis = FockBasis::build_with_cap(modes.len(), config.n_max, config.caps.fock_dim)?;
        let fd = basis.dim();
        let dim = n_x * fd;
        if dim > config.caps.dense_dim {
            return Err(Error::SizeCap {
                what: "momentum commutator dense dimension",
                got: dim,
                cap: config.caps.dense_dim,
            });
        }
        let lattice = ParticleGrid::build_with_cap(
            1,
            1,
            n_x,
            config.length,
            config.caps.position_tuples,
        )?;

        // p̂ and the band projector on the lattice, via explicit DFT sums
        let mut p_hat = DMatrix::zeros(n_x, n_x);
        let mut band = DMatrix::zeros(n_x, n_x);
        for a in 0..n_x {
            for b in 0..n_x {
                let mut acc_p = Complex64::ZERO;
                let mut acc_b = Complex64::ZERO;
                for (j, &p) in lattice.momenta_axis().iter().enumerate() {
                    let phase =
                        std::f64::consts::TAU * (j * ((a + n_x - b) % n_x)) as f64 / n_x as f64;
                    acc_p += Complex64::from_polar(p, phase);
                    let wrapped = if j < n_x / 2 { j } else { n_x - j };
                    if wrapped <= probe_band {
                        acc_b += Complex64::from_polar(1.0, phase);
                    }
                }
                p_hat[(a, b)] = acc_p / n_x as f64;
                band[(a, b)] = acc_b / n_x as f64;
            }
        }
        let b_full = kron(&p_hat, &DMatrix::identity(fd, fd));

        let mut a_full = DMatrix::zeros(dim, dim);
        let mut c_full = DMatrix::zeros(dim, dim);
        for s in 0..n_x {
            let x = lattice.site_position(s);
            let f = family.coupling_at(&modes, &x)?;
            let df = family.derivative_coupling(&modes, &x, 0)?;
            let pi_f = fock::conjugate_field(&basis, &modes, &f)?.to_dense();
            let pi_df = fock::conjugate_field(&basis, &modes, &df)?.to_dense();
            for r in 0..fd {
                for c in 0..fd {
                    a_full[(s * fd + r, s * fd + c)] = pi_f[(r, c)];
                    c_full[(s * fd + r, s * fd + c)] = Complex64::i() * pi_df[(r, c)];
                }
            }
        }
        // sector projector (inputs ≤ N_max − 1) on the Fock factor
        let sector = DMatrix::from_fn(fd, fd, |r, c| {
            if r == c && basis.total(r) <= config.n_max - 1 {
                Complex64::ONE
            } else {
                Complex64::ZERO
            }
        });
        let projector = kron(&band, &sector);
        let diff = (&a_full * &b_full - &b_full * &a_full - c_full) * projector;
        Ok(spectral_norm(&diff))
    })();
    checks.insert(
        "commutator_pi_momentum".into(),
        match result {
            Ok(resid) => CheckResult::measured(
                resid,
                1e-8,
                format!(
                    "companion modes: n_k={n_k}, spacing 4π/L; lattice n_x={n_x}, \
                     probe band |j| ≤ {probe_band}; sectors ≤ N_max−1"
                ),
            ),
            Err(e) => CheckResult::vacuous(format!("skipped: {e}")),
        },
    );
}

fn relative_bounds_check(
    model: &Model,
    opts: &SuiteOptions,
    checks: &mut BTreeMap<String, CheckResult>,
) {
    let eta = model.site_coupling(0).clone();
    let report = fock::check_relative_bounds(model.basis(), model.modes(), &eta, opts.trials, opts.seed);
    checks.insert(
        "relative_bounds".into(),
        match report {
            Ok(r) => {
                let worst = (-r.min_margin_annihilate).max(-r.min_margin_create);
                CheckResult::measured(
                    worst,
                    1e-12,
                    format!(
                        "seed={}, trials={}, violations={}",
                        opts.seed, r.trials, r.violations
                    ),
                )
            }
            Err(e) => CheckResult::vacuous(format!("skipped: {e}")),
        },
    );
}

fn dressing_checks(model: &Model, opts: &SuiteOptions, checks: &mut BTreeMap<String, CheckResult>) {
    let n_max = model.config().n_max;
    let result = model.dressing_unitarity_residual(opts.lambda);
    checks.insert(
        "dressing_unitarity".into(),
        match result {
            Ok(resid) => CheckResult::measured(
                resid,
                crate::assembly::UNITARITY_TOL,
                format!("lambda={}", opts.lambda),
            ),
            Err(e) => CheckResult::vacuous(format!("skipped: {e}")),
        },
    );

    if n_max == 0 {
        checks.insert(
            "dressing_truncation_decay".into(),
            CheckResult::vacuous("vacuous: no boson sectors to truncate at N_max = 0".into()),
        );
        return;
    }
    let s = n_max / 2;
    let outcome = (|| -> Result<(f64, f64)> {
        let here = model.check_dressing_algebra(opts.lambda, s)?;
        let refined = Model::new(ModelConfig {
            n_max: n_max + 1,
            ..model.config().clone()
        })?;
        let there = refined.check_dressing_algebra(opts.lambda, s)?;
        Ok((here.residual, there.residual))
    })();
    checks.insert(
        "dressing_truncation_decay".into(),
        match outcome {
            // refining the boson cap must shrink the identity residual
            Ok((r_here, r_refined)) => CheckResult {
                pass: Some(r_refined <= r_here.max(1e-14)),
                residual: Some(r_refined),
                threshold: Some(r_here.max(1e-14)),
                details: format!(
                    "refined r(s={s}, N_max={}) against r(s={s}, N_max={n_max}) at lambda={}",
                    n_max + 1,
                    opts.lambda
                ),
            },
            Err(e) => CheckResult::vacuous(format!("skipped: {e}")),
        },
    );
}

fn lemma32_check(model: &Model, checks: &mut BTreeMap<String, CheckResult>) {
    let (lam, ps) = default_lemma32_scan();
    let report = check_lemma32(model.config().rest_mass, 0.05, &lam, &ps);
    checks.insert(
        "lemma32_envelope".into(),
        match report {
            Ok(r) => CheckResult {
                pass: Some(r.pass),
                residual: Some(r.p_extension_change.max(r.lambda_extension_change)),
                threshold: Some(1e-10),
                details: format!(
                    "C(0.05)={:.6e} at (lambda={:.4e}, p={:.4}), interior={}",
                    r.c_delta, r.lambda_star, r.p_star, r.interior
                ),
            },
            Err(e) => CheckResult::vacuous(format!("skipped: {e}")),
        },
    );
}

// ---------------------------------------------------------------------------
// CSV emission
// ---------------------------------------------------------------------------

/// Header: `lambda,z_re,z_im,vector_id,error,residual,wall_ms`.
pub fn write_sweep_csv<W: Write>(w: &mut W, records: &[SweepRecord]) -> std::io::Result<()> {
    writeln!(w, "lambda,z_re,z_im,vector_id,error,residual,wall_ms")?;
    for r in records {
        writeln!(
            w,
            "{},{},{},{},{:.12e},{:.3e},{:.3}",
            r.lambda, r.z.re, r.z.im, r.vector_id, r.error, r.residual, r.wall_ms
        )?;
    }
    Ok(())
}

/// Header: `lambda,t,vector_id,error,unitarity_defect,wall_ms`.
pub fn write_evolution_csv<W: Write>(
    w: &mut W,
    records: &[EvolutionRecord],
) -> std::io::Result<()> {
    writeln!(w, "lambda,t,vector_id,error,unitarity_defect,wall_ms")?;
    for r in records {
        writeln!(
            w,
            "{},{},{},{:.12e},{:.3e},{:.3}",
            r.lambda, r.t, r.vector_id, r.error, r.unitarity_defect, r.wall_ms
        )?;
    }
    Ok(())
}

/// Position coordinates followed by the potential value, one row per tuple.
pub fn write_veff_csv<W: Write>(
    w: &mut W,
    model: &Model,
    veff: &crate::assembly::EffectivePotential,
) -> std::io::Result<()> {
    let grid = model.particle();
    let mut header = Vec::new();
    for j in 0..grid.n_particles() {
        for nu in 0..grid.dim() {
            if grid.dim() == 1 {
                header.push(format!("x{}", j + 1));
            } else {
                header.push(format!("x{}_{}", j + 1, nu + 1));
            }
        }
    }
    header.push("v_eff".to_string());
    writeln!(w, "{}", header.join(","))?;
    for t in 0..grid.total() {
        let coords = grid.position(t);
        let mut row: Vec<String> = coords.iter().map(|c| format!("{c}")).collect();
        row.push(format!("{:.12e}", veff.values[t]));
        writeln!(w, "{}", row.join(","))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::assembly::SizeCaps;
    use approx::assert_relative_eq;

    fn default_model() -> Model {
        Model::new(ModelConfig::default()).unwrap()
    }

    fn free_model() -> Model {
        Model::new(ModelConfig {
            kappa: 0.0,
            ..ModelConfig::default()
        })
        .unwrap()
    }

    #[test]
    fn resolve_rejects_real_shift() {
        let model = default_model();
        let h = model.total_hamiltonian(1.0).unwrap();
        let b = vec![Complex64::ONE; h.dim()];
        assert!(resolve(&h, Complex64::new(1.0, 0.0), &b, &SolverOptions::default()).is_err());
    }

    #[test]
    fn resolve_matches_dense_lu() {
        let model = default_model();
        let h = model.total_hamiltonian(2.0).unwrap();
        let hd = h.to_dense().unwrap();
        let mut rng = seeded_rng(5);
        let b: Vec<Complex64> = (0..h.dim())
            .map(|_| {
                use rand::Rng;
                Complex64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5)
            })
            .collect();
        let z = Complex64::i();
        let krylov = resolve(&h, z, &b, &SolverOptions::default()).unwrap();
        assert!(krylov.converged);
        let direct = lu_solve_shifted(&hd, z, &b).unwrap();
        let diff: f64 = krylov
            .x
            .iter()
            .zip(&direct)
            .map(|(a, b)| (a - b).norm_sqr())
            .sum::<f64>()
            .sqrt();
        assert!(diff < 1e-9, "krylov vs LU: {diff}");
    }

    #[test]
    fn resolvent_error_vanishes_free_vacuum() {
        let model = free_model();
        let psi = model.embed_vacuum(&model.particle_ground_state()).unwrap();
        for lambda in [1.0, 4.0] {
            let rec = resolvent_error(
                &model,
                lambda,
                Complex64::i(),
                &psi,
                "vac",
                &SolverOptions::default(),
            )
            .unwrap();
            assert!(rec.converged);
            assert!(rec.error < 1e-10, "e({lambda}) = {}", rec.error);
        }
    }

    /// κ = 0, one-boson ψ: e(Λ) = ‖(H_par + Λ²ω₀ − z)⁻¹v‖ decays like Λ⁻².
    #[test]
    fn resolvent_error_excited_closed_form() {
        let model = free_model();
        let ground = model.particle_ground_state();
        let psi = model.embed_one_boson(&ground, 0).unwrap();
        let omega0 = model.modes().omega(0);
        let m = model.config().rest_mass;
        let z = Complex64::i();
        let mut errors = Vec::new();
        for lambda in [1.0, 2.0, 4.0, 8.0, 16.0] {
            let rec =
                resolvent_error(&model, lambda, z, &psi, "exc", &SolverOptions::default())
                    .unwrap();
            let denom = Complex64::new(m + lambda * lambda * omega0, 0.0) - z;
            assert_relative_eq!(rec.error, 1.0 / denom.norm(), epsilon = 1e-9);
            errors.push((lambda, rec.error));
        }
        let slope = log_log_slope(&errors[2..]);
        assert!((slope + 2.0).abs() < 0.1, "tail slope {slope}");
    }

    #[test]
    fn sweep_requires_increasing_lambdas() {
        let model = free_model();
        let set = TestVectorSet::standard(&model).unwrap();
        assert!(sweep_lambda(
            &model,
            &[4.0, 2.0],
            Complex64::i(),
            &set,
            &SolverOptions::default()
        )
        .is_err());
    }

    #[test]
    fn sweep_records_ordered_and_converged() {
        let model = default_model();
        let set = TestVectorSet::standard(&model).unwrap();
        let records = sweep_lambda(
            &model,
            &[1.0, 2.0],
            Complex64::i(),
            &set,
            &SolverOptions::default(),
        )
        .unwrap();
        assert_eq!(records.len(), 6);
        assert!(records.windows(2).all(|w| {
            (w[0].lambda, &w[0].vector_id) <= (w[1].lambda, &w[1].vector_id)
        }));
        assert!(records.iter().all(|r| r.converged));
    }

    #[test]
    fn resolvent_identity_spot_check() {
        let model = default_model();
        let h = model.total_hamiltonian(1.0).unwrap();
        let z1 = Complex64::new(0.3, 1.0);
        let z2 = Complex64::new(-0.2, 2.0);
        let mut rng = seeded_rng(17);
        use rand::Rng;
        let b: Vec<Complex64> = (0..h.dim())
            .map(|_| Complex64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5))
            .collect();
        let opts = SolverOptions::default();
        let r1 = resolve(&h, z1, &b, &opts).unwrap().x;
        let r2 = resolve(&h, z2, &b, &opts).unwrap().x;
        // (z1 − z2) (H − z1)⁻¹ (H − z2)⁻¹ b
        let nested = resolve(&h, z1, &r2, &opts).unwrap().x;
        for i in 0..b.len() {
            let lhs = r1[i] - r2[i];
            let rhs = (z1 - z2) * nested[i];
            assert!((lhs - rhs).norm() < 1e-8);
        }
    }

    #[test]
    fn resolvent_norm_bound() {
        let model = default_model();
        let h = model.total_hamiltonian(1.0).unwrap();
        let z = Complex64::new(0.7, 0.5);
        let mut rng = seeded_rng(23);
        use rand::Rng;
        for _ in 0..5 {
            let b: Vec<Complex64> = (0..h.dim())
                .map(|_| Complex64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5))
                .collect();
            let x = resolve(&h, z, &b, &SolverOptions::default()).unwrap().x;
            assert!(vec_norm(&x) <= vec_norm(&b) / z.im.abs() * (1.0 + 1e-9));
        }
    }

    #[test]
    fn evolution_zero_time_and_free_vacuum() {
        let model = default_model();
        let set = TestVectorSet::standard(&model).unwrap();
        let records = evolve_sweep(&model, &[1.0], &[0.0], &set).unwrap();
        for r in &records {
            assert!(r.error < 1e-12, "t=0 error {}", r.error);
        }
        let free = free_model();
        let psi = free.embed_vacuum(&free.particle_ground_state()).unwrap();
        let rec = evolution_error(&free, 2.0, 1.3, &psi, "vac").unwrap();
        assert!(rec.error < 1e-10);
        assert!(rec.unitarity_defect < 1e-10);
    }

    #[test]
    fn evolution_group_law() {
        let model = default_model();
        let h = model.total_hamiltonian(1.0).unwrap().to_dense().unwrap();
        let prop = Propagator::new(&h);
        let psi = model.embed_vacuum(&model.particle_ground_state()).unwrap();
        let one_shot = prop.apply(0.9, &psi);
        let stepped = prop.apply(0.5, &prop.apply(0.4, &psi));
        let diff: f64 = one_shot
            .iter()
            .zip(&stepped)
            .map(|(a, b)| (a - b).norm_sqr())
            .sum::<f64>()
            .sqrt();
        assert!(diff < 1e-9, "group law defect {diff}");
    }

    #[test]
    fn krylov_propagator_matches_dense_on_coupled_operator() {
        let model = default_model();
        let h = model.total_hamiltonian(1.0).unwrap();
        let hd = h.to_dense().unwrap();
        let psi = model.embed_vacuum(&model.particle_ground_state()).unwrap();
        let dense = evolve_dense(&hd, 0.7, &psi);
        let krylov = crate::linalg::evolve_krylov(
            |v| h.apply(v).expect("dims"),
            &psi,
            0.7,
            1e-12,
            30,
        )
        .unwrap();
        let diff: f64 = dense
            .iter()
            .zip(&krylov)
            .map(|(a, b)| (a - b).norm_sqr())
            .sum::<f64>()
            .sqrt();
        assert!(diff < 1e-9, "krylov vs dense propagator: {diff}");
    }

    #[test]
    fn prop31_ratios_zero_at_zero_coupling() {
        let model = free_model();
        let set = TestVectorSet::standard(&model).unwrap();
        let report = diagnostics_proposition31(&model, &[1.0, 2.0], &set).unwrap();
        assert!(report.rows.iter().all(|r| r.rho < 1e-13));
    }

    #[test]
    fn prop31_ratios_decay_with_slope_near_minus_one() {
        let model = default_model();
        let set = TestVectorSet::standard(&model).unwrap();
        let report =
            diagnostics_proposition31(&model, &[1.0, 2.0, 4.0, 8.0, 16.0], &set).unwrap();
        assert!(report.nonincreasing, "{:?}", report.rows);
        let slope = report.tail_slopes["vac_ground"];
        assert!(
            (slope + 1.0).abs() < 0.3,
            "expected ρ ~ Λ⁻¹, slope {slope}"
        );
    }

    #[test]
    fn suite_passes_on_default_config() {
        let suite = run_property_suite(ModelConfig::default(), &SuiteOptions::default());
        assert!(suite.all_pass(), "{}", suite.to_json());
        // every named check present and decided
        for name in [
            "ccr_safe_sector",
            "adjoint_exactness",
            "commutator_pi_number",
            "commutator_pi_field",
            "commutator_pi_momentum",
            "relative_bounds",
            "dressing_unitarity",
            "dressing_truncation_decay",
            "lemma32_envelope",
        ] {
            assert_eq!(suite.checks[name].pass, Some(true), "{name}");
        }
    }

    #[test]
    fn suite_flags_broken_grid() {
        let config = ModelConfig::default();
        let particle = ParticleGrid::build_with_cap(
            1,
            1,
            config.n_x,
            config.length,
            config.caps.position_tuples,
        )
        .unwrap();
        let modes = crate::modes::ModeGrid::from_parts_unchecked(
            1,
            vec![vec![0.3], vec![0.9]],
            vec![1.0, 1.0],
            config.dispersion,
        )
        .unwrap();
        let family = CouplingFamily::characteristic(1.0).unwrap();
        let suite = run_property_suite_with_parts(
            config,
            particle,
            modes,
            family,
            &SuiteOptions::default(),
        );
        assert!(!suite.all_pass());
        assert_eq!(suite.checks["assumption_a4_reality_residual"].pass, Some(false));
        assert_eq!(suite.checks["ccr_safe_sector"].pass, None);
    }

    #[test]
    fn suite_vacuous_at_nmax_zero() {
        let config = ModelConfig {
            n_max: 0,
            ..ModelConfig::default()
        };
        let suite = run_property_suite(config, &SuiteOptions::default());
        assert_eq!(suite.checks["ccr_safe_sector"].pass, None);
        assert!(suite.checks["ccr_safe_sector"].details.contains("vacuous"));
        assert!(suite.all_pass(), "vacuous is not failure");
    }

    #[test]
    fn csv_schema_and_determinism() {
        let model = default_model();
        let set = TestVectorSet::standard(&model).unwrap();
        let opts = SolverOptions::default();
        let records = sweep_lambda(&model, &[1.0, 2.0], Complex64::i(), &set, &opts).unwrap();
        let mut buf = Vec::new();
        write_sweep_csv(&mut buf, &records).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(
            lines.next().unwrap(),
            "lambda,z_re,z_im,vector_id,error,residual,wall_ms"
        );
        // byte-identical modulo the wall-time column
        let records2 = sweep_lambda(&model, &[1.0, 2.0], Complex64::i(), &set, &opts).unwrap();
        let strip = |recs: &[SweepRecord]| -> Vec<String> {
            let mut b = Vec::new();
            write_sweep_csv(&mut b, recs).unwrap();
            String::from_utf8(b)
                .unwrap()
                .lines()
                .map(|l| l.rsplit_once(',').unwrap().0.to_string())
                .collect()
        };
        assert_eq!(strip(&records), strip(&records2));
    }

    #[test]
    fn truncation_floor_is_small_for_default_config() {
        let model = Model::new(ModelConfig {
            caps: SizeCaps {
                dense_dim: 8192,
                ..SizeCaps::default()
            },
            ..ModelConfig::default()
        })
        .unwrap();
        let floor =
            sweep_truncation_floor(&model, 16.0, Complex64::i(), &SolverOptions::default())
                .unwrap();
        assert!(floor.is_finite());
        assert!(floor < 1e-2, "floor {floor}");
    }
}
