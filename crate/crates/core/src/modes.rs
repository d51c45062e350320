//! Boson one-mode space discretization.
//!
//! A [`ModeGrid`] is a symmetric momentum quadrature grid with midpoint
//! weights and tabulated dispersion values ω(k). The coupling family f_x and
//! its analytic derivatives are sampled on the grid, and the weighted inner
//! product (ξ, η) = Σ_i w_i conj(ξ_i) η_i realizes the one-particle L²
//! pairing (antilinear in the first slot, so [a(ξ), a†(η)] = (ξ, η)).

use std::collections::BTreeMap;

use num_complex::Complex64;
use serde::Serialize;

use crate::error::{Error, Result};

/// Tolerance for the discrete reality condition Im (∂f_x/ω, f_y/ω) = 0.
pub const REALITY_TOL: f64 = 1e-12;

/// Boson dispersion relation ω(k).
///
/// Strict positivity on every grid node is required so the 1/ω^m quadrature
/// sums stay finite; the massless form therefore carries a floor ε₀ > 0.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum Dispersion {
    /// ω(k) = √(k² + m_b²)
    Massive { mass: f64 },
    /// ω(k) = |k| + ε₀
    MasslessRegularized { floor: f64 },
}

impl Dispersion {
    pub fn evaluate(&self, k: &[f64]) -> f64 {
        let k2: f64 = k.iter().map(|c| c * c).sum();
        match self {
            Dispersion::Massive { mass } => (k2 + mass * mass).sqrt(),
            Dispersion::MasslessRegularized { floor } => k2.sqrt() + floor,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (name, v) = match self {
            Dispersion::Massive { mass } => ("boson_mass", *mass),
            Dispersion::MasslessRegularized { floor } => ("omega_floor", *floor),
        };
        if !(v > 0.0) {
            return Err(Error::InvalidParameter {
                name,
                reason: format!("must be positive, got {v}"),
            });
        }
        Ok(())
    }
}

/// Symmetric momentum quadrature grid with weights and dispersion values.
#[derive(Debug, Clone)]
pub struct ModeGrid {
    dim: usize,
    /// Flattened points, `len = K * dim`.
    points: Vec<f64>,
    weights: Vec<f64>,
    omega: Vec<f64>,
    dispersion: Dispersion,
}

impl ModeGrid {
    /// Number of modes K.
    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    /// Momentum-space dimension d_b.
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.points[i * self.dim..(i + 1) * self.dim]
    }

    pub fn weight(&self, i: usize) -> f64 {
        self.weights[i]
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn omega(&self, i: usize) -> f64 {
        self.omega[i]
    }

    pub fn omegas(&self) -> &[f64] {
        &self.omega
    }

    pub fn dispersion(&self) -> Dispersion {
        self.dispersion
    }

    /// Index of the mirror point −k_i, if the grid is exactly symmetric.
    pub fn mirror_index(&self, i: usize) -> Option<usize> {
        let target: Vec<f64> = self.point(i).iter().map(|c| -c).collect();
        (0..self.len()).find(|&j| {
            self.point(j)
                .iter()
                .zip(&target)
                .all(|(a, b)| (a - b).abs() <= 1e-12)
                && (self.weights[j] - self.weights[i]).abs() <= 1e-12
        })
    }

    /// Largest pairing/weight defect over all points; 0 for a symmetric grid.
    pub fn symmetry_defect(&self) -> f64 {
        (0..self.len())
            .map(|i| {
                let target: Vec<f64> = self.point(i).iter().map(|c| -c).collect();
                (0..self.len())
                    .map(|j| {
                        let d: f64 = self
                            .point(j)
                            .iter()
                            .zip(&target)
                            .map(|(a, b)| (a - b).abs())
                            .sum();
                        d + (self.weights[j] - self.weights[i]).abs()
                    })
                    .fold(f64::INFINITY, f64::min)
            })
            .fold(0.0, f64::max)
    }

    /// Validated constructor from explicit nodes: checks positivity and the
    /// ±k pairing. `points` is one `Vec` of length `dim` per node.
    pub fn from_parts(
        dim: usize,
        points: Vec<Vec<f64>>,
        weights: Vec<f64>,
        dispersion: Dispersion,
    ) -> Result<Self> {
        let grid = Self::from_parts_unchecked(dim, points, weights, dispersion)?;
        if grid.symmetry_defect() > 1e-12 {
            return Err(Error::GridSymmetry(
                "no ±k pairing with equal weights".into(),
            ));
        }
        Ok(grid)
    }

    /// Constructor that skips the symmetry check. Intended for diagnostics
    /// and negative tests; `validate_assumptions` will flag such grids.
    pub fn from_parts_unchecked(
        dim: usize,
        points: Vec<Vec<f64>>,
        weights: Vec<f64>,
        dispersion: Dispersion,
    ) -> Result<Self> {
        dispersion.validate()?;
        if dim == 0 || dim > 3 {
            return Err(Error::InvalidParameter {
                name: "d_b",
                reason: format!("momentum dimension must be 1..=3, got {dim}"),
            });
        }
        if points.len() != weights.len() {
            return Err(Error::DimMismatch {
                what: "mode grid points/weights",
                expected: points.len(),
                got: weights.len(),
            });
        }
        let mut flat = Vec::with_capacity(points.len() * dim);
        for p in &points {
            if p.len() != dim {
                return Err(Error::DimMismatch {
                    what: "mode grid point",
                    expected: dim,
                    got: p.len(),
                });
            }
            flat.extend_from_slice(p);
        }
        if weights.iter().any(|&w| !(w > 0.0)) {
            return Err(Error::InvalidParameter {
                name: "weights",
                reason: "all quadrature weights must be positive".into(),
            });
        }
        let omega: Vec<f64> = points.iter().map(|p| dispersion.evaluate(p)).collect();
        if omega.iter().any(|&o| !(o > 0.0)) {
            return Err(Error::InvalidParameter {
                name: "omega",
                reason: "dispersion must be strictly positive on every node".into(),
            });
        }
        Ok(ModeGrid {
            dim,
            points: flat,
            weights,
            omega,
            dispersion,
        })
    }
}

/// Uniform symmetric midpoint grid on [−k_max, k_max]^dim.
///
/// `n_k` is the number of nodes per axis and must be even so every node k has
/// an exact mirror −k and the origin (where a massless ω would vanish) is
/// excluded.
pub fn build_mode_grid(
    dim: usize,
    n_k: usize,
    k_max: f64,
    dispersion: Dispersion,
) -> Result<ModeGrid> {
    if n_k == 0 || n_k % 2 != 0 {
        return Err(Error::GridSymmetry(format!(
            "n_k must be even and positive for exact ±k pairing, got {n_k}"
        )));
    }
    if !(k_max > 0.0) {
        return Err(Error::InvalidParameter {
            name: "k_max",
            reason: format!("must be positive, got {k_max}"),
        });
    }
    let dk = 2.0 * k_max / n_k as f64;
    // Build the positive half and mirror it so negation is bitwise exact.
    let half: Vec<f64> = (0..n_k / 2).map(|j| (j as f64 + 0.5) * dk).collect();
    let mut axis: Vec<f64> = half.iter().rev().map(|&v| -v).collect();
    axis.extend_from_slice(&half);

    let n_nodes = n_k.pow(dim as u32);
    let w = dk.powi(dim as i32);
    let mut points = Vec::with_capacity(n_nodes);
    for flat in 0..n_nodes {
        let mut idx = flat;
        let mut p = vec![0.0; dim];
        for ax in (0..dim).rev() {
            p[ax] = axis[idx % n_k];
            idx /= n_k;
        }
        points.push(p);
    }
    ModeGrid::from_parts(dim, points, vec![w; n_nodes], dispersion)
}

/// A one-boson wavefunction sampled on the grid nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedVector {
    pub values: Vec<Complex64>,
}

impl WeightedVector {
    pub fn zeros(n: usize) -> Self {
        WeightedVector {
            values: vec![Complex64::ZERO; n],
        }
    }

    pub fn from_values(values: Vec<Complex64>) -> Self {
        WeightedVector { values }
    }

    pub fn from_fn(grid: &ModeGrid, f: impl Fn(&[f64]) -> Complex64) -> Self {
        WeightedVector {
            values: (0..grid.len()).map(|i| f(grid.point(i))).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Pointwise ξ_i / ω_i.
    pub fn omega_div(&self, grid: &ModeGrid) -> Result<Self> {
        check_len(grid, self)?;
        Ok(WeightedVector {
            values: self
                .values
                .iter()
                .zip(grid.omegas())
                .map(|(v, &o)| v / o)
                .collect(),
        })
    }

    /// Pointwise ω_i ξ_i.
    pub fn omega_mul(&self, grid: &ModeGrid) -> Result<Self> {
        check_len(grid, self)?;
        Ok(WeightedVector {
            values: self
                .values
                .iter()
                .zip(grid.omegas())
                .map(|(v, &o)| v * o)
                .collect(),
        })
    }

    pub fn add(&self, other: &Self) -> Self {
        WeightedVector {
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(a, b)| a + b)
                .collect(),
        }
    }

    pub fn scale(&self, c: Complex64) -> Self {
        WeightedVector {
            values: self.values.iter().map(|v| v * c).collect(),
        }
    }
}

fn check_len(grid: &ModeGrid, v: &WeightedVector) -> Result<()> {
    if v.len() != grid.len() {
        return Err(Error::DimMismatch {
            what: "weighted vector",
            expected: grid.len(),
            got: v.len(),
        });
    }
    Ok(())
}

/// Quadrature inner product (ξ, η) = Σ_i w_i conj(ξ_i) η_i, antilinear in ξ.
pub fn inner_w(grid: &ModeGrid, xi: &WeightedVector, eta: &WeightedVector) -> Result<Complex64> {
    check_len(grid, xi)?;
    check_len(grid, eta)?;
    Ok(xi
        .values
        .iter()
        .zip(&eta.values)
        .zip(grid.weights())
        .map(|((x, e), &w)| x.conj() * e * w)
        .sum())
}

/// ‖ξ‖_w = √(ξ, ξ).
pub fn norm_w(grid: &ModeGrid, xi: &WeightedVector) -> Result<f64> {
    Ok(inner_w(grid, xi, xi)?.re.max(0.0).sqrt())
}

/// Coupling family f_x on the grid.
///
/// The default form is the sharp-cutoff family
/// f_x(k) = χ(|k| ∈ [0, R)) ω(k)^{−1/2} e^{−i k·x}; its x-derivatives are the
/// exact analytic ones, ∂_{x^ν} f_x = −i k^ν f_x and Δf_x = −|k|² f_x.
#[derive(Debug, Clone)]
pub struct CouplingFamily {
    /// Momentum cutoff radius R.
    pub cutoff: f64,
    pub form: CouplingForm,
}

#[derive(Debug, Clone)]
pub enum CouplingForm {
    CharacteristicCutoff,
    /// User-supplied samples per position; derivative tables are optional.
    Tabulated { entries: Vec<TabulatedCoupling> },
}

#[derive(Debug, Clone)]
pub struct TabulatedCoupling {
    pub position: Vec<f64>,
    pub values: Vec<Complex64>,
    /// One table per spatial direction ν.
    pub gradient: Option<Vec<Vec<Complex64>>>,
    pub laplacian: Option<Vec<Complex64>>,
}

impl CouplingFamily {
    pub fn characteristic(cutoff: f64) -> Result<Self> {
        if cutoff < 0.0 {
            return Err(Error::InvalidParameter {
                name: "cutoff_radius",
                reason: format!("must be nonnegative, got {cutoff}"),
            });
        }
        Ok(CouplingFamily {
            cutoff,
            form: CouplingForm::CharacteristicCutoff,
        })
    }

    fn lookup<'a>(&'a self, x: &[f64]) -> Result<&'a TabulatedCoupling> {
        let CouplingForm::Tabulated { entries } = &self.form else {
            unreachable!()
        };
        entries
            .iter()
            .find(|e| {
                e.position.len() == x.len()
                    && e.position.iter().zip(x).all(|(a, b)| (a - b).abs() <= 1e-12)
            })
            .ok_or_else(|| Error::PositionNotTabulated(x.to_vec()))
    }

    /// Samples of f_x at the grid momenta.
    pub fn coupling_at(&self, grid: &ModeGrid, x: &[f64]) -> Result<WeightedVector> {
        self.check_position(grid, x)?;
        match &self.form {
            CouplingForm::CharacteristicCutoff => Ok(WeightedVector {
                values: (0..grid.len())
                    .map(|i| self.characteristic_value(grid, i, x))
                    .collect(),
            }),
            CouplingForm::Tabulated { .. } => {
                let entry = self.lookup(x)?;
                if entry.values.len() != grid.len() {
                    return Err(Error::DimMismatch {
                        what: "tabulated coupling",
                        expected: grid.len(),
                        got: entry.values.len(),
                    });
                }
                Ok(WeightedVector::from_values(entry.values.clone()))
            }
        }
    }

    /// Samples of ∂_{x^ν} f_x.
    pub fn derivative_coupling(
        &self,
        grid: &ModeGrid,
        x: &[f64],
        nu: usize,
    ) -> Result<WeightedVector> {
        self.check_position(grid, x)?;
        if nu >= grid.dim() {
            return Err(Error::InvalidParameter {
                name: "nu",
                reason: format!("direction {nu} out of range for d_b = {}", grid.dim()),
            });
        }
        match &self.form {
            CouplingForm::CharacteristicCutoff => Ok(WeightedVector {
                values: (0..grid.len())
                    .map(|i| {
                        let f = self.characteristic_value(grid, i, x);
                        -Complex64::i() * grid.point(i)[nu] * f
                    })
                    .collect(),
            }),
            CouplingForm::Tabulated { .. } => {
                let entry = self.lookup(x)?;
                let grad = entry.gradient.as_ref().ok_or_else(|| {
                    Error::UnsupportedDerivative("tabulated family has no gradient table".into())
                })?;
                grad.get(nu)
                    .map(|g| WeightedVector::from_values(g.clone()))
                    .ok_or_else(|| {
                        Error::UnsupportedDerivative(format!(
                            "tabulated gradient missing direction {nu}"
                        ))
                    })
            }
        }
    }

    /// Samples of Δf_x.
    pub fn laplacian_coupling(&self, grid: &ModeGrid, x: &[f64]) -> Result<WeightedVector> {
        self.check_position(grid, x)?;
        match &self.form {
            CouplingForm::CharacteristicCutoff => Ok(WeightedVector {
                values: (0..grid.len())
                    .map(|i| {
                        let f = self.characteristic_value(grid, i, x);
                        let k2: f64 = grid.point(i).iter().map(|c| c * c).sum();
                        -k2 * f
                    })
                    .collect(),
            }),
            CouplingForm::Tabulated { .. } => {
                let entry = self.lookup(x)?;
                entry
                    .laplacian
                    .as_ref()
                    .map(|l| WeightedVector::from_values(l.clone()))
                    .ok_or_else(|| {
                        Error::UnsupportedDerivative(
                            "tabulated family has no laplacian table".into(),
                        )
                    })
            }
        }
    }

    fn characteristic_value(&self, grid: &ModeGrid, i: usize, x: &[f64]) -> Complex64 {
        let k = grid.point(i);
        let k_abs = k.iter().map(|c| c * c).sum::<f64>().sqrt();
        // Characteristic function on [0, R): the open right end keeps R = 0
        // an empty cutoff on every grid.
        if k_abs >= self.cutoff {
            return Complex64::ZERO;
        }
        let phase: f64 = -k.iter().zip(x).map(|(kv, xv)| kv * xv).sum::<f64>();
        Complex64::from_polar(1.0 / grid.omega(i).sqrt(), phase)
    }

    fn check_position(&self, grid: &ModeGrid, x: &[f64]) -> Result<()> {
        if x.len() != grid.dim() {
            return Err(Error::DimMismatch {
                what: "position",
                expected: grid.dim(),
                got: x.len(),
            });
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter {
                name: "x",
                reason: "position must be finite".into(),
            });
        }
        Ok(())
    }
}

/// One validated quantity in a [`ValidationReport`].
#[derive(Debug, Clone, Serialize)]
pub struct QuantityCheck {
    pub value: Option<f64>,
    pub threshold: Option<f64>,
    pub pass: bool,
}

/// Discrete analogues of the dispersion/coupling integrability assumptions,
/// evaluated as a report. Serializes to a flat JSON object
/// `{quantity_name: {value, threshold, pass}}`.
#[derive(Debug, Clone, Serialize)]
#[serde(transparent)]
pub struct ValidationReport {
    pub entries: BTreeMap<String, QuantityCheck>,
}

impl ValidationReport {
    pub fn pass(&self) -> bool {
        self.entries.values().all(|q| q.pass)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialization")
    }

    pub fn failures(&self) -> Vec<&str> {
        self.entries
            .iter()
            .filter(|(_, q)| !q.pass)
            .map(|(k, _)| k.as_str())
            .collect()
    }
}

/// Evaluates the discrete assumption set on `grid`/`family`:
/// strict positivity of ω, grid ± symmetry, the quadrature sums
/// sup_x Σ w |f_x|²/ω^m for m = 0..3, the derivative and Laplacian sums, and
/// the reality condition Im (∂_{x^ν} f_x/ω, f_y/ω) = 0 over sampled positions.
pub fn validate_assumptions(
    grid: &ModeGrid,
    family: &CouplingFamily,
    positions: &[Vec<f64>],
) -> ValidationReport {
    let mut entries = BTreeMap::new();

    let omega_min = grid.omegas().iter().copied().fold(f64::INFINITY, f64::min);
    entries.insert(
        "omega_min".into(),
        QuantityCheck {
            value: Some(omega_min),
            threshold: Some(0.0),
            pass: omega_min > 0.0,
        },
    );

    let defect = grid.symmetry_defect();
    entries.insert(
        "grid_symmetry_defect".into(),
        QuantityCheck {
            value: Some(defect),
            threshold: Some(1e-12),
            pass: defect <= 1e-12,
        },
    );

    // sup over sampled positions of Σ w |f|² / ω^m, m = 0..3 (A.2, A.3).
    let names = [
        "a2_sup_f2",
        "a2_sup_f2_over_omega",
        "a3_sup_f2_over_omega2",
        "a3_sup_f2_over_omega3",
    ];
    for (m, name) in names.iter().enumerate() {
        let mut sup = 0.0_f64;
        let mut ok = true;
        for x in positions {
            match family.coupling_at(grid, x) {
                Ok(f) => {
                    let s: f64 = (0..grid.len())
                        .map(|i| {
                            grid.weight(i) * f.values[i].norm_sqr() / grid.omega(i).powi(m as i32)
                        })
                        .sum();
                    sup = sup.max(s);
                }
                Err(_) => ok = false,
            }
        }
        entries.insert(
            (*name).into(),
            QuantityCheck {
                value: ok.then_some(sup),
                threshold: None,
                pass: ok && sup.is_finite(),
            },
        );
    }

    // A.4 derivative and Laplacian sums.
    let mut grad_sup = Some(0.0_f64);
    let mut lap_sup = Some(0.0_f64);
    for x in positions {
        for nu in 0..grid.dim() {
            match family.derivative_coupling(grid, x, nu) {
                Ok(df) => {
                    if let Some(s) = grad_sup.as_mut() {
                        let v: f64 = (0..grid.len())
                            .map(|i| {
                                grid.weight(i) * df.values[i].norm_sqr() / grid.omega(i).powi(2)
                            })
                            .sum();
                        *s = s.max(v);
                    }
                }
                Err(_) => grad_sup = None,
            }
        }
        match family.laplacian_coupling(grid, x) {
            Ok(lf) => {
                if let Some(s) = lap_sup.as_mut() {
                    let v: f64 = (0..grid.len())
                        .map(|i| grid.weight(i) * lf.values[i].norm_sqr() / grid.omega(i).powi(2))
                        .sum();
                    *s = s.max(v);
                }
            }
            Err(_) => lap_sup = None,
        }
    }
    entries.insert(
        "a4_sup_grad_f2_over_omega2".into(),
        QuantityCheck {
            value: grad_sup,
            threshold: None,
            pass: grad_sup.map(|v| v.is_finite()).unwrap_or(false),
        },
    );
    entries.insert(
        "a4_sup_lap_f2_over_omega2".into(),
        QuantityCheck {
            value: lap_sup,
            threshold: None,
            pass: lap_sup.map(|v| v.is_finite()).unwrap_or(false),
        },
    );

    // Reality condition over sampled (x, y) pairs and all directions ν.
    let mut residue = Some(0.0_f64);
    'outer: for x in positions {
        for y in positions {
            for nu in 0..grid.dim() {
                let df = family.derivative_coupling(grid, x, nu);
                let fy = family.coupling_at(grid, y);
                let (Ok(df), Ok(fy)) = (df, fy) else {
                    residue = None;
                    break 'outer;
                };
                let lhs = df.omega_div(grid).and_then(|a| {
                    let b = fy.omega_div(grid)?;
                    inner_w(grid, &a, &b)
                });
                match lhs {
                    Ok(v) => {
                        if let Some(r) = residue.as_mut() {
                            *r = r.max(v.im.abs());
                        }
                    }
                    Err(_) => {
                        residue = None;
                        break 'outer;
                    }
                }
            }
        }
    }
    entries.insert(
        "a4_reality_residual".into(),
        QuantityCheck {
            value: residue,
            threshold: Some(REALITY_TOL),
            pass: residue.map(|r| r <= REALITY_TOL).unwrap_or(false),
        },
    );

    ValidationReport { entries }
}
