//! Benchmark systems with known parameters, synthetic data generation and
//! re-simulation checks for fitted estimates.

pub mod gradcheck;
mod problems;
pub mod simulate;

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::discovery::LibrarySpec;
use crate::error::{Error, Result};
use crate::expr::EvalPoint;
use crate::problem::{validate_problem, ConstraintSet, ModelStructure, ParameterEstimate, Problem, Trajectory};

pub use gradcheck::{gradient_check, GradCheckOptions, GradCheckPoint, GradCheckReport};
pub use problems::{calcium, carboxylic, carboxylic_with, km_dde, mendes, two_state, CARBOXYLIC_TABLE};
pub use simulate::{simulate_dde, simulate_ode, SimulationOptions};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BenchmarkName {
    Calcium,
    Mendes,
    KmDde,
    Carboxylic,
}

impl BenchmarkName {
    pub const ALL: [BenchmarkName; 4] = [Self::Calcium, Self::Mendes, Self::KmDde, Self::Carboxylic];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Calcium => "calcium",
            Self::Mendes => "mendes",
            Self::KmDde => "km_dde",
            Self::Carboxylic => "carboxylic",
        }
    }
}

impl fmt::Display for BenchmarkName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for BenchmarkName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|n| n.as_str() == s)
            .ok_or_else(|| Error::UnknownProblem(s.to_string()))
    }
}

/// One experiment: initial state (also the constant history for delay
/// models) and exogenous constants.
#[derive(Debug, Clone, PartialEq)]
pub struct Experiment {
    pub initial: Vec<f64>,
    pub exogenous: Vec<(String, f64)>,
}

#[derive(Debug, Clone)]
pub struct ProblemSpec {
    pub name: String,
    pub model: ModelStructure,
    pub constraints: ConstraintSet,
    pub true_p: DVector<f64>,
    pub true_phi: DVector<f64>,
    pub experiments: Vec<Experiment>,
    pub t_end: f64,
    pub dt: f64,
    /// Candidate library for discovery problems; `model` is then its true support.
    pub library: Option<LibrarySpec>,
    /// `(rate, term)` of every column of `model` when `library` is set.
    pub support: Vec<(usize, usize)>,
}

impl ProblemSpec {
    pub fn times(&self) -> Vec<f64> {
        let n = (self.t_end / self.dt).round() as usize;
        (0..=n).map(|k| k as f64 * self.dt).collect()
    }

    /// Simulates every experiment with the given parameters.
    pub fn simulate(&self, p: &DVector<f64>, phi: &DVector<f64>, opts: &SimulationOptions) -> Result<Vec<Trajectory>> {
        self.simulate_on(&self.times(), p, phi, opts)
    }

    pub fn simulate_on(
        &self,
        times: &[f64],
        p: &DVector<f64>,
        phi: &DVector<f64>,
        opts: &SimulationOptions,
    ) -> Result<Vec<Trajectory>> {
        if p.len() != self.model.n_linear() || phi.len() != self.model.n_nonlinear() {
            return Err(Error::DimensionMismatch(format!(
                "parameters have lengths {}/{} but the model needs {}/{}",
                p.len(),
                phi.len(),
                self.model.n_linear(),
                self.model.n_nonlinear()
            )));
        }
        self.experiments
            .par_iter()
            .enumerate()
            .map(|(e, ex)| {
                let exo: Vec<f64> = self
                    .model
                    .exogenous
                    .iter()
                    .map(|name| {
                        ex.exogenous
                            .iter()
                            .find(|(n, _)| n == name)
                            .map(|(_, v)| *v)
                            .ok_or(Error::MissingExogenous {
                                experiment: e,
                                name: name.clone(),
                            })
                    })
                    .collect::<Result<_>>()?;
                let states = simulate_model(&self.model, p.as_slice(), phi.as_slice(), &ex.initial, &exo, times, opts)?;
                let mut traj = Trajectory::new(times.to_vec(), states);
                if self.model.has_delays() {
                    traj = traj.with_history(ex.initial.clone());
                }
                for (name, v) in &ex.exogenous {
                    traj = traj.with_exogenous(name, *v);
                }
                Ok(traj)
            })
            .collect()
    }

    /// Noiseless measurements at the true parameters.
    pub fn generate_data(&self) -> Result<Vec<Trajectory>> {
        self.simulate(&self.true_p, &self.true_phi, &SimulationOptions::default())
    }

    pub fn problem(&self, data: Vec<Trajectory>) -> Result<Problem> {
        validate_problem(self.model.clone(), self.constraints.clone(), data)
    }

    /// Truth scaled entrywise by `U(1 - spread, 1 + spread)`.
    pub fn perturbed_phi(&self, seed: u64, spread: f64) -> DVector<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        self.true_phi.map(|v| v * rng.gen_range(1.0 - spread..=1.0 + spread))
    }
}

/// Solves the model forward from `initial` and returns `n_states × n_times`.
/// Delay models use `initial` as the constant history.
pub fn simulate_model(
    model: &ModelStructure,
    p: &[f64],
    phi: &[f64],
    initial: &[f64],
    exo: &[f64],
    times: &[f64],
    opts: &SimulationOptions,
) -> Result<DMatrix<f64>> {
    let n = model.n_states;
    if initial.len() != n {
        return Err(Error::DimensionMismatch(format!(
            "initial state has length {} but the model has {n} states",
            initial.len()
        )));
    }
    let slots = model.delay_slots();
    if model.has_delays() {
        let delays: Vec<f64> = model.delays.iter().map(|&d| phi[d]).collect();
        simulate_dde(
            |t, x, lagged, out| {
                let pt = EvalPoint {
                    time: t,
                    state: x,
                    delayed: lagged,
                    delay_slot: &slots,
                    n_states: n,
                    phi,
                    exo,
                };
                model.rhs(&pt, p, out)
            },
            initial,
            &delays,
            times,
            opts,
        )
    } else {
        simulate_ode(
            |t, x, out| {
                let pt = EvalPoint {
                    time: t,
                    state: x,
                    delayed: &[],
                    delay_slot: &slots,
                    n_states: n,
                    phi,
                    exo,
                };
                model.rhs(&pt, p, out)
            },
            initial,
            times,
            opts,
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub p_relative_error: Vec<f64>,
    pub phi_relative_error: Vec<f64>,
    pub p_absolute_error: Vec<f64>,
    pub phi_absolute_error: Vec<f64>,
    pub max_relative_error: f64,
    /// Root-mean-square re-simulation error per state, pooled over experiments.
    pub state_rmse: Vec<f64>,
}

impl ValidationReport {
    pub fn max_rmse(&self) -> f64 {
        self.state_rmse.iter().cloned().fold(0.0, f64::max)
    }
}

fn relative(est: &DVector<f64>, truth: &DVector<f64>) -> Vec<f64> {
    est.iter()
        .zip(truth.iter())
        .map(|(e, t)| if *t == 0.0 { e.abs() } else { (e - t).abs() / t.abs() })
        .collect()
}

/// Compares an estimate with the truth and re-simulates it against `data`.
pub fn validate_estimate(spec: &ProblemSpec, estimate: &ParameterEstimate, data: &[Trajectory]) -> Result<ValidationReport> {
    if estimate.p.len() != spec.true_p.len() || estimate.phi.len() != spec.true_phi.len() {
        return Err(Error::DimensionMismatch(format!(
            "estimate has {}/{} parameters but the spec has {}/{}",
            estimate.p.len(),
            estimate.phi.len(),
            spec.true_p.len(),
            spec.true_phi.len()
        )));
    }
    let p_relative_error = relative(&estimate.p, &spec.true_p);
    let phi_relative_error = relative(&estimate.phi, &spec.true_phi);
    let max_relative_error = p_relative_error
        .iter()
        .chain(&phi_relative_error)
        .cloned()
        .fold(0.0, f64::max);

    let times = data.first().map(|t| t.times.clone()).unwrap_or_else(|| spec.times());
    let sim = spec.simulate_on(&times, &estimate.p, &estimate.phi, &SimulationOptions::default())?;
    let n = spec.model.n_states;
    let mut sq = vec![0.0; n];
    let mut count = 0usize;
    for (s, d) in sim.iter().zip(data) {
        if d.states.shape() != s.states.shape() {
            return Err(Error::DimensionMismatch("data does not match the spec's experiments".into()));
        }
        for k in 0..d.n_times() {
            for i in 0..n {
                sq[i] += (s.states[(i, k)] - d.states[(i, k)]).powi(2);
            }
        }
        count += d.n_times();
    }
    let state_rmse = sq.iter().map(|v| (v / count.max(1) as f64).sqrt()).collect();
    Ok(ValidationReport {
        p_absolute_error: (&estimate.p - &spec.true_p).abs().iter().cloned().collect(),
        phi_absolute_error: (&estimate.phi - &spec.true_phi).abs().iter().cloned().collect(),
        p_relative_error,
        phi_relative_error,
        max_relative_error,
        state_rmse,
    })
}

/// Builds the named benchmark; `seed` only affects randomized experiment designs.
pub fn make_problem(name: &str, seed: u64) -> Result<ProblemSpec> {
    match name.parse::<BenchmarkName>()? {
        BenchmarkName::Calcium => calcium(),
        BenchmarkName::Mendes => mendes(),
        BenchmarkName::KmDde => km_dde(),
        BenchmarkName::Carboxylic => carboxylic(seed),
    }
}
