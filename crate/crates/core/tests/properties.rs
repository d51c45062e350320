//! Property tests for the algebraic invariants, plus a few sweep-style
//! diagnostics that don't fit the per-module unit tests.

use num_complex::Complex64;
use proptest::prelude::*;

use scalim_core::analysis::{seeded_rng, SolverOptions};
use scalim_core::assembly::{Model, ModelConfig};
use scalim_core::fock::{self, FockBasis};
use scalim_core::linalg::{lu_solve_shifted, vec_norm};
use scalim_core::modes::{build_mode_grid, inner_w, norm_w, Dispersion, ModeGrid, WeightedVector};
use scalim_core::particle::{build_particle_grid, KineticOperator};

fn grid4() -> ModeGrid {
    build_mode_grid(1, 4, 2.0, Dispersion::Massive { mass: 1.0 }).unwrap()
}

fn complex_vec(n: usize) -> impl Strategy<Value = Vec<Complex64>> {
    prop::collection::vec((-1.0f64..1.0, -1.0f64..1.0), n)
        .prop_map(|v| v.into_iter().map(|(re, im)| Complex64::new(re, im)).collect())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    /// (ξ, ξ) ≥ 0 with equality only at ξ = 0, and conjugate symmetry.
    #[test]
    fn inner_product_positivity_and_symmetry(
        a in complex_vec(4),
        b in complex_vec(4),
    ) {
        let grid = grid4();
        let xi = WeightedVector::from_values(a);
        let eta = WeightedVector::from_values(b);
        let self_ip = inner_w(&grid, &xi, &xi).unwrap();
        prop_assert!(self_ip.im.abs() < 1e-15);
        prop_assert!(self_ip.re >= 0.0);
        let is_zero = xi.values.iter().all(|v| *v == Complex64::ZERO);
        prop_assert_eq!(self_ip.re == 0.0, is_zero);

        let ab = inner_w(&grid, &xi, &eta).unwrap();
        let ba = inner_w(&grid, &eta, &xi).unwrap();
        prop_assert!((ab - ba.conj()).norm() < 1e-14);
    }

    /// Coupling kernel: (f_x, f_y) = conj((f_y, f_x)) and ‖f_x‖ independent
    /// of the source position.
    #[test]
    fn coupling_kernel_symmetry(x in -10.0f64..10.0, y in -10.0f64..10.0) {
        let grid = grid4();
        let family = scalim_core::modes::CouplingFamily::characteristic(1.0).unwrap();
        let fx = family.coupling_at(&grid, &[x]).unwrap();
        let fy = family.coupling_at(&grid, &[y]).unwrap();
        let ab = inner_w(&grid, &fx, &fy).unwrap();
        let ba = inner_w(&grid, &fy, &fx).unwrap();
        prop_assert!((ab - ba.conj()).norm() < 1e-14);
        let nx = norm_w(&grid, &fx).unwrap();
        let ny = norm_w(&grid, &fy).unwrap();
        prop_assert!((nx - ny).abs() < 1e-12);
    }

    /// create(η) is the exact stored adjoint of annihilate(η).
    #[test]
    fn adjoint_exactness(eta in complex_vec(4)) {
        let grid = grid4();
        let basis = FockBasis::build(4, 2).unwrap();
        let eta = WeightedVector::from_values(eta);
        let a = fock::annihilate(&basis, &grid, &eta).unwrap();
        let c = fock::create(&basis, &grid, &eta).unwrap();
        prop_assert_eq!(&c, &a.adjoint());
        prop_assert_eq!(&c.adjoint(), &a);
    }

    /// CCR on the safe sector for arbitrary smearing vectors.
    #[test]
    fn ccr_safe_sector(xi in complex_vec(3), eta in complex_vec(3)) {
        let grid = build_mode_grid(1, 2, 1.0, Dispersion::Massive { mass: 1.0 }).unwrap();
        // widen to 3 modes with a hand-built symmetric grid
        let grid = {
            let mut pts: Vec<Vec<f64>> = (0..grid.len()).map(|i| grid.point(i).to_vec()).collect();
            pts.push(vec![0.0]);
            ModeGrid::from_parts(1, pts, vec![0.5, 0.5, 1.0], Dispersion::Massive { mass: 1.0 })
                .unwrap()
        };
        let basis = FockBasis::build(3, 3).unwrap();
        let xi = WeightedVector::from_values(xi);
        let eta = WeightedVector::from_values(eta);
        let a = fock::annihilate(&basis, &grid, &xi).unwrap().to_dense();
        let c = fock::create(&basis, &grid, &eta).unwrap().to_dense();
        let ip = inner_w(&grid, &xi, &eta).unwrap();
        let comm = &a * &c - &c * &a;
        for col in 0..basis.dim() {
            if basis.total(col) + 1 > basis.n_max() {
                continue;
            }
            for row in 0..basis.dim() {
                let expect = if row == col { ip } else { Complex64::ZERO };
                prop_assert!((comm[(row, col)] - expect).norm() < 1e-12);
            }
        }
    }

    /// dΓ is additive and φ is additive in its argument.
    #[test]
    fn second_quantization_linearity(
        w1 in prop::collection::vec(0.0f64..3.0, 3),
        w2 in prop::collection::vec(0.0f64..3.0, 3),
        xi in complex_vec(3),
        eta in complex_vec(3),
    ) {
        let basis = FockBasis::build(3, 3).unwrap();
        let a = fock::second_quantize_diag(&basis, &w1).unwrap().to_dense();
        let b = fock::second_quantize_diag(&basis, &w2).unwrap().to_dense();
        let sum: Vec<f64> = w1.iter().zip(&w2).map(|(x, y)| x + y).collect();
        let ab = fock::second_quantize_diag(&basis, &sum).unwrap().to_dense();
        prop_assert!((a + b - ab).iter().all(|v| v.norm() < 1e-13));

        let grid = ModeGrid::from_parts(
            1,
            vec![vec![-1.0], vec![0.0], vec![1.0]],
            vec![1.0; 3],
            Dispersion::Massive { mass: 1.0 },
        ).unwrap();
        let xi = WeightedVector::from_values(xi);
        let eta = WeightedVector::from_values(eta);
        let lhs = fock::field(&basis, &grid, &xi.add(&eta)).unwrap().to_dense();
        let rhs = fock::field(&basis, &grid, &xi).unwrap().to_dense()
            + fock::field(&basis, &grid, &eta).unwrap().to_dense();
        prop_assert!((lhs - rhs).iter().all(|v| v.norm() < 1e-13));
    }

    /// Kinetic multipliers are bounded by [N·M, N·√(p_max² + M²)] and grow
    /// strictly with the rest mass.
    #[test]
    fn kinetic_multiplier_monotone(m1 in 0.1f64..4.0, dm in 0.1f64..2.0) {
        let grid = build_particle_grid(1, 2, 4, 5.0).unwrap();
        let k1 = KineticOperator::new(&grid, m1).unwrap();
        let k2 = KineticOperator::new(&grid, m1 + dm).unwrap();
        let p_max = grid
            .momenta_axis()
            .iter()
            .fold(0.0f64, |acc, &p| acc.max(p.abs()));
        let n = grid.n_particles() as f64;
        for (&a, &b) in k1.multipliers().iter().zip(k2.multipliers()) {
            prop_assert!(a >= n * m1 - 1e-12);
            prop_assert!(a <= n * (p_max * p_max + m1 * m1).sqrt() + 1e-12);
            prop_assert!(b > a);
        }
    }
}

/// ‖φ(ξ)Ψ‖ ≤ √2 (‖ω^{−1/2}ξ‖ ‖dΓ(ω)^{1/2}Ψ‖ + ‖ξ‖ ‖Ψ‖) on random states —
/// the smeared-field consequence of the relative bounds.
#[test]
fn field_norm_bound_on_random_states() {
    let grid = grid4();
    let basis = FockBasis::build(4, 3).unwrap();
    let energies = basis.number_energy(grid.omegas()).unwrap();
    let mut rng = seeded_rng(2024);
    for _ in 0..50 {
        let xi = {
            use rand_distr::StandardNormal;
            use rand::Rng;
            WeightedVector::from_values(
                (0..4)
                    .map(|_| {
                        let re: f64 = rng.sample(StandardNormal);
                        let im: f64 = rng.sample(StandardNormal);
                        Complex64::new(re, im)
                    })
                    .collect(),
            )
        };
        let phi = fock::field(&basis, &grid, &xi).unwrap();
        let psi = fock::random_fock(&basis, &mut rng);
        let lhs = fock::norm(&phi.apply(&psi.values).unwrap());
        let xi_half = inner_w(&grid, &xi.omega_div(&grid).unwrap(), &xi)
            .unwrap()
            .re
            .max(0.0)
            .sqrt();
        let dg_half: f64 = psi
            .values
            .iter()
            .zip(&energies)
            .map(|(v, &e)| v.norm_sqr() * e)
            .sum::<f64>()
            .sqrt();
        let rhs = 2.0f64.sqrt()
            * (xi_half * dg_half + norm_w(&grid, &xi).unwrap() * psi.norm());
        assert!(lhs <= rhs + 1e-12, "{lhs} > {rhs}");
    }
}

/// K(Λ)(H₀(Λ) − i)⁻¹ψ approaches V_eff (H_par − i)⁻¹ ⊗ P_Ω ψ as Λ grows.
#[test]
fn k_lambda_resolvent_product_converges() {
    let model = Model::new(ModelConfig::default()).unwrap();
    let z = Complex64::i();
    let psi = model.embed_vacuum(&model.particle_ground_state()).unwrap();

    // V_eff (H_par − z)⁻¹ ⊗ P_Ω ψ
    let kin_dense = model.kinetic().dense(model.particle()).unwrap();
    let veff = model.effective_potential().unwrap();
    let part = lu_solve_shifted(&kin_dense, z, &model.extract_vacuum(&psi)).unwrap();
    let scaled: Vec<Complex64> = part
        .iter()
        .zip(&veff.values)
        .map(|(v, &p)| v * p)
        .collect();
    let target = model.embed_vacuum(&scaled).unwrap();

    let mut gaps = Vec::new();
    for lambda in [2.0, 4.0, 8.0] {
        let routes = model.k_lambda(lambda).unwrap();
        let h0 = model.free_hamiltonian(lambda).unwrap().to_dense().unwrap();
        let x = lu_solve_shifted(&h0, z, &psi).unwrap();
        let kx = &routes.definitional * nalgebra::DVector::from_column_slice(&x);
        let gap: f64 = kx
            .iter()
            .zip(&target)
            .map(|(a, b)| (a - b).norm_sqr())
            .sum::<f64>()
            .sqrt();
        gaps.push(gap);
    }
    assert!(
        gaps[0] > gaps[1] && gaps[1] > gaps[2],
        "expected decreasing gaps, got {gaps:?}"
    );
}

/// The lab stays functional away from the headline regime: a two-particle
/// chain and a two-dimensional massless-regularized configuration both
/// assemble, validate, and sweep with converged solves.
#[test]
fn alternate_regimes_assemble_and_sweep() {
    use scalim_core::analysis::{resolvent_error, run_property_suite, SuiteOptions};

    let two_particle = ModelConfig {
        n_particles: 2,
        n_x: 4,
        n_max: 2,
        ..ModelConfig::default()
    };
    let model = Model::new(two_particle.clone()).unwrap();
    let psi = model.embed_vacuum(&model.particle_ground_state()).unwrap();
    let opts = SolverOptions::default();
    let mut last = f64::INFINITY;
    for lambda in [1.0, 4.0, 16.0] {
        let rec =
            resolvent_error(&model, lambda, Complex64::i(), &psi, "vac", &opts).unwrap();
        assert!(rec.converged);
        assert!(rec.error < last, "e({lambda}) = {} not decreasing", rec.error);
        last = rec.error;
    }
    let suite = run_property_suite(two_particle, &SuiteOptions::default());
    assert!(suite.all_pass(), "{}", suite.to_json());

    let planar = ModelConfig {
        dim: 2,
        n_x: 4,
        n_k: 2,
        k_max: 1.0,
        n_max: 2,
        dispersion: Dispersion::MasslessRegularized { floor: 0.05 },
        ..ModelConfig::default()
    };
    let model = Model::new(planar).unwrap();
    assert_eq!(model.modes().len(), 4);
    assert_eq!(model.particle().total(), 16);
    let psi = model.embed_vacuum(&model.particle_ground_state()).unwrap();
    let rec = resolvent_error(&model, 4.0, Complex64::i(), &psi, "vac", &opts).unwrap();
    assert!(rec.converged);
    assert!(rec.error.is_finite());
}

/// H_eff reduces to the bare kinetic operator when the coupling vanishes.
#[test]
fn effective_hamiltonian_free_limit() {
    let model = Model::new(ModelConfig {
        kappa: 0.0,
        ..ModelConfig::default()
    })
    .unwrap();
    let heff = model.effective_hamiltonian().unwrap();
    let mut rng = seeded_rng(9);
    use rand::Rng;
    let v: Vec<Complex64> = (0..model.particle().total())
        .map(|_| Complex64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5))
        .collect();
    let a = heff.apply(&v).unwrap();
    let b = model.kinetic().apply(&v).unwrap();
    let diff: f64 = a
        .iter()
        .zip(&b)
        .map(|(x, y)| (x - y).norm_sqr())
        .sum::<f64>()
        .sqrt();
    assert_eq!(diff, 0.0);
}

/// Monotone-decrease statements hold at a fixed discretization only above
/// the truncation floor; confirm the floor sits below the sweep range.
#[test]
fn truncation_floor_below_sweep_errors() {
    let model = Model::new(ModelConfig::default()).unwrap();
    let z = Complex64::i();
    let opts = SolverOptions::default();
    let floor =
        scalim_core::analysis::sweep_truncation_floor(&model, 16.0, z, &opts).unwrap();
    let psi = model.embed_vacuum(&model.particle_ground_state()).unwrap();
    let rec =
        scalim_core::analysis::resolvent_error(&model, 16.0, z, &psi, "vac", &opts).unwrap();
    assert!(
        floor < 0.01 * rec.error,
        "floor {floor:.3e} should sit well below e(16) = {:.3e}",
        rec.error
    );
    let _ = vec_norm(&[]);
}
