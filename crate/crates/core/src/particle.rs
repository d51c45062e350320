//! Periodic position lattice and the semi-relativistic kinetic operator.
//!
//! √(−Δ_j + M²) is diagonal in the discrete Fourier basis of the torus, so
//! the operator is applied matrix-free: forward DFT along every particle
//! axis, multiply by Σ_j √(|p_j|² + M²), inverse DFT. A dense circulant
//! oracle built from explicit plane-wave sums backs the FFT path in tests.

use std::f64::consts::PI;
use std::sync::Arc;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::Serialize;

use crate::error::{Error, Result};

/// Default cap on the number of position tuples.
pub const DEFAULT_POSITION_CAP: usize = 1 << 20;

/// Periodic lattice for N particles in d dimensions.
#[derive(Debug, Clone)]
pub struct ParticleGrid {
    dim: usize,
    n_particles: usize,
    n_x: usize,
    length: f64,
    axes: usize,
    total: usize,
    positions_axis: Vec<f64>,
    /// DFT momentum per frequency index: 2π·wrap(j)/L with
    /// wrap(j) = j for j < n_x/2 and j − n_x otherwise.
    momenta_axis: Vec<f64>,
}

pub fn build_particle_grid(dim: usize, n_particles: usize, n_x: usize, length: f64) -> Result<ParticleGrid> {
    ParticleGrid::build_with_cap(dim, n_particles, n_x, length, DEFAULT_POSITION_CAP)
}

impl ParticleGrid {
    pub fn build_with_cap(
        dim: usize,
        n_particles: usize,
        n_x: usize,
        length: f64,
        cap: usize,
    ) -> Result<Self> {
        if dim == 0 || n_particles == 0 {
            return Err(Error::InvalidParameter {
                name: "d/N",
                reason: "dimension and particle count must be positive".into(),
            });
        }
        if n_x == 0 || n_x % 2 != 0 {
            return Err(Error::InvalidParameter {
                name: "n_x",
                reason: format!("lattice size must be even and positive, got {n_x}"),
            });
        }
        if !(length > 0.0) {
            return Err(Error::InvalidParameter {
                name: "box_length",
                reason: format!("must be positive, got {length}"),
            });
        }
        let axes = dim * n_particles;
        let total = (n_x as u128).checked_pow(axes as u32).ok_or(Error::SizeCap {
            what: "position tuples",
            got: usize::MAX,
            cap,
        })?;
        if total > cap as u128 {
            return Err(Error::SizeCap {
                what: "position tuples",
                got: total.min(usize::MAX as u128) as usize,
                cap,
            });
        }
        let positions_axis = (0..n_x).map(|m| m as f64 * length / n_x as f64).collect();
        let momenta_axis = (0..n_x)
            .map(|j| {
                let wrapped = if j < n_x / 2 {
                    j as isize
                } else {
                    j as isize - n_x as isize
                };
                2.0 * PI * wrapped as f64 / length
            })
            .collect();
        Ok(ParticleGrid {
            dim,
            n_particles,
            n_x,
            length,
            axes,
            total: total as usize,
            positions_axis,
            momenta_axis,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_particles(&self) -> usize {
        self.n_particles
    }

    pub fn n_x(&self) -> usize {
        self.n_x
    }

    pub fn length(&self) -> f64 {
        self.length
    }

    /// d·N, the number of lattice axes.
    pub fn axes(&self) -> usize {
        self.axes
    }

    /// Number of position tuples n_x^(dN).
    pub fn total(&self) -> usize {
        self.total
    }

    pub fn positions_axis(&self) -> &[f64] {
        &self.positions_axis
    }

    pub fn momenta_axis(&self) -> &[f64] {
        &self.momenta_axis
    }

    /// Row-major decode of a flat tuple index into per-axis lattice indices
    /// (axis 0 slowest).
    pub fn decode(&self, flat: usize) -> Vec<usize> {
        let mut idx = flat;
        let mut out = vec![0usize; self.axes];
        for ax in (0..self.axes).rev() {
            out[ax] = idx % self.n_x;
            idx /= self.n_x;
        }
        out
    }

    /// All coordinates of a position tuple in axis order
    /// (particle 1 dims…, particle 2 dims…).
    pub fn position(&self, flat: usize) -> Vec<f64> {
        self.decode(flat)
            .into_iter()
            .map(|m| self.positions_axis[m])
            .collect()
    }

    /// Coordinates of particle `j` within a position tuple.
    pub fn particle_position(&self, flat: usize, j: usize) -> Vec<f64> {
        let coords = self.position(flat);
        coords[j * self.dim..(j + 1) * self.dim].to_vec()
    }

    /// Number of single-particle lattice sites n_x^d.
    pub fn site_count(&self) -> usize {
        self.n_x.pow(self.dim as u32)
    }

    /// Coordinates of single-particle site `s` (row-major over d axes).
    pub fn site_position(&self, s: usize) -> Vec<f64> {
        let mut idx = s;
        let mut out = vec![0.0; self.dim];
        for ax in (0..self.dim).rev() {
            out[ax] = self.positions_axis[idx % self.n_x];
            idx /= self.n_x;
        }
        out
    }

    /// Per-particle site indices of a position tuple.
    pub fn tuple_sites(&self, flat: usize) -> Vec<usize> {
        let axes = self.decode(flat);
        (0..self.n_particles)
            .map(|j| {
                axes[j * self.dim..(j + 1) * self.dim]
                    .iter()
                    .fold(0usize, |acc, &m| acc * self.n_x + m)
            })
            .collect()
    }
}

/// Σ_j √(−Δ_j + M²), tabulated as one multiplier per momentum tuple.
#[derive(Clone)]
pub struct KineticOperator {
    mass: f64,
    n_x: usize,
    axes: usize,
    total: usize,
    multipliers: Vec<f64>,
    fft_forward: Arc<dyn Fft<f64>>,
    fft_inverse: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for KineticOperator {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("KineticOperator")
            .field("mass", &self.mass)
            .field("n_x", &self.n_x)
            .field("axes", &self.axes)
            .finish()
    }
}

impl KineticOperator {
    pub fn new(grid: &ParticleGrid, mass: f64) -> Result<Self> {
        if !(mass > 0.0) {
            return Err(Error::InvalidParameter {
                name: "rest_mass",
                reason: format!("rest mass must be positive, got {mass}"),
            });
        }
        let mut multipliers = vec![0.0f64; grid.total()];
        for (flat, value) in multipliers.iter_mut().enumerate() {
            *value = kinetic_multiplier(grid, mass, &grid.decode(flat));
        }
        let mut planner = FftPlanner::new();
        Ok(KineticOperator {
            mass,
            n_x: grid.n_x(),
            axes: grid.axes(),
            total: grid.total(),
            multipliers,
            fft_forward: planner.plan_fft_forward(grid.n_x()),
            fft_inverse: planner.plan_fft_inverse(grid.n_x()),
        })
    }

    pub fn mass(&self) -> f64 {
        self.mass
    }

    pub fn dim(&self) -> usize {
        self.total
    }

    pub fn multipliers(&self) -> &[f64] {
        &self.multipliers
    }

    /// Matrix-free application via per-axis FFT passes.
    pub fn apply(&self, v: &[Complex64]) -> Result<Vec<Complex64>> {
        if v.len() != self.total {
            return Err(Error::DimMismatch {
                what: "kinetic apply",
                expected: self.total,
                got: v.len(),
            });
        }
        let mut buf = v.to_vec();
        self.fft_all_axes(&mut buf, true);
        for (b, &m) in buf.iter_mut().zip(&self.multipliers) {
            *b *= m;
        }
        self.fft_all_axes(&mut buf, false);
        let scale = 1.0 / self.total as f64;
        for b in buf.iter_mut() {
            *b *= scale;
        }
        Ok(buf)
    }

    fn fft_all_axes(&self, data: &mut [Complex64], forward: bool) {
        let fft = if forward {
            &self.fft_forward
        } else {
            &self.fft_inverse
        };
        let n = self.n_x;
        let mut line = vec![Complex64::ZERO; n];
        let mut scratch = vec![Complex64::ZERO; fft.get_inplace_scratch_len()];
        for ax in 0..self.axes {
            // stride of this axis in the row-major layout
            let stride = n.pow((self.axes - 1 - ax) as u32);
            let block = stride * n;
            for base in (0..self.total).step_by(block) {
                for offset in 0..stride {
                    let start = base + offset;
                    for (i, l) in line.iter_mut().enumerate() {
                        *l = data[start + i * stride];
                    }
                    fft.process_with_scratch(&mut line, &mut scratch);
                    for (i, l) in line.iter().enumerate() {
                        data[start + i * stride] = *l;
                    }
                }
            }
        }
    }

    /// Dense oracle: the circulant kernel is assembled from explicit
    /// plane-wave sums, independently of the FFT path.
    pub fn dense(&self, grid: &ParticleGrid) -> Result<DMatrix<Complex64>> {
        if grid.total() != self.total {
            return Err(Error::DimMismatch {
                what: "kinetic dense",
                expected: self.total,
                got: grid.total(),
            });
        }
        let n = grid.n_x();
        let total = grid.total();
        // kernel over circular index differences Δ (one per axis)
        let mut kernel = vec![Complex64::ZERO; total];
        for (dflat, out) in kernel.iter_mut().enumerate() {
            let delta = grid.decode(dflat);
            let mut acc = Complex64::ZERO;
            for jflat in 0..total {
                let jidx = grid.decode(jflat);
                let mult = kinetic_multiplier(grid, self.mass, &jidx);
                // e^{i p · x_Δ} = Π_ax e^{2πi j_ax Δ_ax / n}
                let phase: f64 = jidx
                    .iter()
                    .zip(&delta)
                    .map(|(&j, &d)| 2.0 * PI * (j * d % n) as f64 / n as f64)
                    .sum();
                acc += Complex64::from_polar(mult, phase);
            }
            *out = acc / total as f64;
        }
        let mut m = DMatrix::zeros(total, total);
        for r in 0..total {
            let ridx = grid.decode(r);
            for c in 0..total {
                let cidx = grid.decode(c);
                let mut dflat = 0usize;
                for ax in 0..grid.axes() {
                    let d = (ridx[ax] + n - cidx[ax]) % n;
                    dflat = dflat * n + d;
                }
                m[(r, c)] = kernel[dflat];
            }
        }
        Ok(m)
    }
}

fn kinetic_multiplier(grid: &ParticleGrid, mass: f64, idx: &[usize]) -> f64 {
    let d = grid.dim();
    (0..grid.n_particles())
        .map(|j| {
            let p2: f64 = (0..d)
                .map(|nu| {
                    let p = grid.momenta_axis()[idx[j * d + nu]];
                    p * p
                })
                .sum();
            (p2 + mass * mass).sqrt()
        })
        .sum()
}

/// Free-function form matching the operation name.
pub fn apply_kinetic(
    kin: &KineticOperator,
    grid: &ParticleGrid,
    v: &[Complex64],
) -> Result<Vec<Complex64>> {
    if grid.total() != kin.dim() {
        return Err(Error::DimMismatch {
            what: "kinetic vs grid",
            expected: kin.dim(),
            got: grid.total(),
        });
    }
    kin.apply(v)
}

/// Diagonal multiplication operator over position tuples.
#[derive(Debug, Clone)]
pub struct MultiplicationOperator {
    pub values: Vec<f64>,
}

impl MultiplicationOperator {
    pub fn new(values: Vec<f64>) -> Self {
        MultiplicationOperator { values }
    }

    pub fn constant(c: f64, total: usize) -> Self {
        MultiplicationOperator {
            values: vec![c; total],
        }
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn apply(&self, v: &[Complex64]) -> Result<Vec<Complex64>> {
        if v.len() != self.values.len() {
            return Err(Error::DimMismatch {
                what: "multiplication apply",
                expected: self.values.len(),
                got: v.len(),
            });
        }
        Ok(v.iter().zip(&self.values).map(|(c, &m)| c * m).collect())
    }

    pub fn dense(&self) -> DMatrix<Complex64> {
        DMatrix::from_diagonal(&nalgebra::DVector::from_iterator(
            self.values.len(),
            self.values.iter().map(|&v| Complex64::new(v, 0.0)),
        ))
    }
}

/// Envelope scan for the resolvent weight
/// h(λ, p) = |p| (p² + M² + λ)^{−1} (√(p² + M²) + 1)^{−1/2}:
/// sup λ^{1/2+δ} h must be finite, attained in the interior of the scan box,
/// and stable when the box grows.
#[derive(Debug, Clone, Serialize)]
pub struct Lemma32Report {
    pub delta: f64,
    pub mass: f64,
    pub c_delta: f64,
    pub lambda_star: f64,
    pub p_star: f64,
    pub interior: bool,
    pub p_zero_row_max: f64,
    /// |C change| when p_max doubles at fixed step.
    pub p_extension_change: f64,
    /// |C change| when the λ range gains a decade at fixed ratio.
    pub lambda_extension_change: f64,
    pub pass: bool,
}

fn envelope(mass: f64, delta: f64, lambda: f64, p: f64) -> f64 {
    let p2m2 = p * p + mass * mass;
    lambda.powf(0.5 + delta) * p.abs() / (p2m2 + lambda) / (p2m2.sqrt() + 1.0).sqrt()
}

fn scan_max(mass: f64, delta: f64, lambdas: &[f64], ps: &[f64]) -> (f64, usize, usize) {
    let mut best = (f64::NEG_INFINITY, 0usize, 0usize);
    for (li, &l) in lambdas.iter().enumerate() {
        for (pi, &p) in ps.iter().enumerate() {
            let v = envelope(mass, delta, l, p);
            if v > best.0 {
                best = (v, li, pi);
            }
        }
    }
    best
}

/// Logarithmic λ grid over [10^lo, 10^hi] with `per_decade` nodes per decade.
pub fn log_lambda_grid(lo: i32, hi: i32, per_decade: usize) -> Vec<f64> {
    let n = ((hi - lo) as usize) * per_decade;
    (0..=n)
        .map(|i| 10f64.powf(lo as f64 + i as f64 / per_decade as f64))
        .collect()
}

/// Symmetric inclusive p grid over [−p_max, p_max] with step `dp`.
pub fn symmetric_p_grid(p_max: f64, dp: f64) -> Vec<f64> {
    let half = (p_max / dp).round() as i64;
    (-half..=half).map(|i| i as f64 * dp).collect()
}

pub fn check_lemma32(
    mass: f64,
    delta: f64,
    lambdas: &[f64],
    ps: &[f64],
) -> Result<Lemma32Report> {
    if !(delta > 0.0 && delta < 0.1) {
        return Err(Error::InvalidParameter {
            name: "delta",
            reason: format!("must lie in (0, 1/10), got {delta}"),
        });
    }
    if !(mass > 0.0) {
        return Err(Error::InvalidParameter {
            name: "M",
            reason: "rest mass must be positive".into(),
        });
    }
    if lambdas.len() < 3 || ps.len() < 3 {
        return Err(Error::InvalidParameter {
            name: "scan grids",
            reason: "need at least 3 nodes per direction".into(),
        });
    }
    let (c, li, pi) = scan_max(mass, delta, lambdas, ps);
    let interior =
        li > 0 && li + 1 < lambdas.len() && pi > 0 && pi + 1 < ps.len() && ps[pi] != 0.0;

    let p_zero_row_max = lambdas
        .iter()
        .map(|&l| envelope(mass, delta, l, 0.0))
        .fold(0.0f64, f64::max);

    // extend p by appending nodes at the same step beyond both ends
    let dp = ps[1] - ps[0];
    let p_hi = *ps.last().unwrap();
    let mut ps_ext = ps.to_vec();
    let extra = (p_hi / dp).round() as usize;
    for i in 1..=extra {
        ps_ext.push(p_hi + i as f64 * dp);
        ps_ext.insert(0, ps[0] - i as f64 * dp);
    }
    let (c_p, _, _) = scan_max(mass, delta, lambdas, &ps_ext);
    let p_extension_change = (c_p - c).abs();

    // extend λ by one decade on each side at the same ratio
    let ratio = lambdas[1] / lambdas[0];
    let per_decade = (std::f64::consts::LN_10 / ratio.ln()).round().max(1.0) as usize;
    let mut lam_ext = lambdas.to_vec();
    let mut lo = lambdas[0];
    let mut hi = *lambdas.last().unwrap();
    for _ in 0..per_decade {
        lo /= ratio;
        hi *= ratio;
        lam_ext.insert(0, lo);
        lam_ext.push(hi);
    }
    let (c_l, _, _) = scan_max(mass, delta, &lam_ext, ps);
    let lambda_extension_change = (c_l - c).abs();

    let pass = c.is_finite()
        && interior
        && p_zero_row_max == 0.0
        && p_extension_change <= 1e-10
        && lambda_extension_change <= 1e-10;
    Ok(Lemma32Report {
        delta,
        mass,
        c_delta: c,
        lambda_star: lambdas[li],
        p_star: ps[pi],
        interior,
        p_zero_row_max,
        p_extension_change,
        lambda_extension_change,
        pass,
    })
}

/// The scan box used by the acceptance checks: λ ∈ [10⁻², 10⁴] logarithmic,
/// p ∈ [−50, 50] with step 0.05.
pub fn default_lemma32_scan() -> (Vec<f64>, Vec<f64>) {
    (log_lambda_grid(-2, 4, 40), symmetric_p_grid(50.0, 0.05))
}
