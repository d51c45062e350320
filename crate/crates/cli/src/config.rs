//! Run configuration: a strict key-value TOML file plus flag overrides.
//!
//! Unknown keys are rejected outright — silent typos in physics parameters
//! are the dominant failure mode for this kind of tool. The file round-trips
//! losslessly through serde.

use anyhow::{bail, Context};
use serde::{Deserialize, Serialize};

use scalim_core::assembly::{ModelConfig, SizeCaps};
use scalim_core::modes::Dispersion;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    // model
    pub kappa: f64,
    pub rest_mass: f64,
    pub dim: usize,
    pub n_particles: usize,
    pub n_x: usize,
    pub box_length: f64,
    pub n_k: usize,
    pub k_max: f64,
    pub dispersion: DispersionKind,
    pub boson_mass: f64,
    pub omega_floor: f64,
    pub cutoff_radius: f64,
    pub n_max: usize,

    // experiment
    /// Complex shift as [re, im]; Im must be nonzero.
    pub z: [f64; 2],
    pub lambda_list: Vec<f64>,
    pub t_list: Vec<f64>,
    pub seed: u64,

    // caps and tolerances
    pub fock_dim_cap: usize,
    pub position_cap: usize,
    pub dense_dim_cap: usize,
    pub solver_tol: f64,
    pub max_iterations: usize,
    pub suite_trials: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DispersionKind {
    Massive,
    MasslessRegularized,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            kappa: 0.5,
            rest_mass: 1.0,
            dim: 1,
            n_particles: 1,
            n_x: 8,
            box_length: std::f64::consts::TAU,
            n_k: 4,
            k_max: 2.0,
            dispersion: DispersionKind::Massive,
            boson_mass: 1.0,
            omega_floor: 0.01,
            cutoff_radius: 1.0,
            n_max: 3,
            z: [0.0, 1.0],
            lambda_list: vec![1.0, 2.0, 4.0, 8.0, 16.0],
            t_list: vec![1.0],
            seed: 42,
            fock_dim_cap: 2_000_000,
            position_cap: 1 << 20,
            dense_dim_cap: 4096,
            solver_tol: 1e-10,
            max_iterations: 20_000,
            suite_trials: 200,
        }
    }
}

impl RunConfig {
    pub fn load(path: Option<&std::path::Path>) -> anyhow::Result<Self> {
        let config = match path {
            None => RunConfig::default(),
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .with_context(|| format!("cannot read config file {}", p.display()))?;
                toml::from_str(&text)
                    .with_context(|| format!("malformed config file {}", p.display()))?
            }
        };
        Ok(config)
    }

    pub fn validate(&self) -> anyhow::Result<()> {
        if !(self.rest_mass > 0.0) {
            bail!("rest_mass: must be positive, got {}", self.rest_mass);
        }
        match self.dispersion {
            DispersionKind::Massive if !(self.boson_mass > 0.0) => {
                bail!("boson_mass: must be positive, got {}", self.boson_mass)
            }
            DispersionKind::MasslessRegularized if !(self.omega_floor > 0.0) => {
                bail!("omega_floor: must be positive, got {}", self.omega_floor)
            }
            _ => {}
        }
        if !self.kappa.is_finite() {
            bail!("kappa: must be finite");
        }
        if self.cutoff_radius < 0.0 {
            bail!("cutoff_radius: must be nonnegative, got {}", self.cutoff_radius);
        }
        if self.z[1] == 0.0 {
            bail!("z: imaginary part must be nonzero");
        }
        if self.lambda_list.is_empty() {
            bail!("lambda_list: must not be empty");
        }
        if self.lambda_list[0] <= 0.0 {
            bail!("lambda_list: Λ must be positive, got {}", self.lambda_list[0]);
        }
        if self.lambda_list.windows(2).any(|w| w[0] >= w[1]) {
            bail!("lambda_list: must be strictly increasing");
        }
        if self.t_list.is_empty() {
            bail!("t_list: must not be empty");
        }
        if !(self.solver_tol > 0.0) {
            bail!("solver_tol: must be positive");
        }
        if self.max_iterations == 0 {
            bail!("max_iterations: must be positive");
        }
        Ok(())
    }

    pub fn dispersion(&self) -> Dispersion {
        match self.dispersion {
            DispersionKind::Massive => Dispersion::Massive {
                mass: self.boson_mass,
            },
            DispersionKind::MasslessRegularized => Dispersion::MasslessRegularized {
                floor: self.omega_floor,
            },
        }
    }

    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            kappa: self.kappa,
            rest_mass: self.rest_mass,
            dim: self.dim,
            n_particles: self.n_particles,
            n_x: self.n_x,
            length: self.box_length,
            n_k: self.n_k,
            k_max: self.k_max,
            dispersion: self.dispersion(),
            cutoff: self.cutoff_radius,
            n_max: self.n_max,
            caps: SizeCaps {
                fock_dim: self.fock_dim_cap,
                position_tuples: self.position_cap,
                dense_dim: self.dense_dim_cap,
            },
        }
    }

    pub fn z(&self) -> num_complex::Complex64 {
        num_complex::Complex64::new(self.z[0], self.z[1])
    }

    #[cfg(test)]
    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serialization")
    }
}
