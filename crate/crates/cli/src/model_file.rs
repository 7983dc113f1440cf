//! Declarative model files for systems other than the built-in benchmarks.
//!
//! ```toml
//! n_states = 2
//! nonlinear = ["K"]
//! nonnegative_p = true
//!
//! [[basis]]
//! name = "k1"
//! loading = [-1.0, 1.0]
//! factors = [{ kind = "saturating", state = 0, half = "K" }]
//!
//! [truth]
//! p = [0.8]
//! phi = [0.5]
//!
//! [simulation]
//! t_end = 10.0
//! dt = 0.1
//! experiments = [{ initial = [2.0, 0.0] }]
//! ```

use std::collections::BTreeMap;
use std::path::Path;

use bilevel::discovery::{Arrhenius, LibrarySpec, GAS_CONSTANT, REFERENCE_TEMPERATURE};
use bilevel::benchmarks::Experiment;
use bilevel::{BasisField, ConstraintSet, Expr, ModelStructure, ProblemSpec};
use nalgebra::{DMatrix, DVector};
use serde::Deserialize;

use crate::CliError;

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Factor {
    /// `prod_i x_i^powers[i]`
    Monomial { powers: Vec<u32> },
    /// `x / (x + half)`
    Saturating { state: usize, half: String },
    /// `x(t - delay)^power`
    Delayed {
        state: usize,
        delay: String,
        #[serde(default = "one")]
        power: u32,
    },
    /// `exp(-E/R (1/T - 1/T_ref))`
    Arrhenius {
        energy: String,
        #[serde(default = "temperature")]
        temperature: String,
        #[serde(default = "gas_constant")]
        gas_constant: f64,
        #[serde(default = "reference_temperature")]
        reference_temperature: f64,
    },
    Constant { value: f64 },
}

fn one() -> u32 {
    1
}

fn temperature() -> String {
    "T".into()
}

fn gas_constant() -> f64 {
    GAS_CONSTANT
}

fn reference_temperature() -> f64 {
    REFERENCE_TEMPERATURE
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BasisEntry {
    pub name: String,
    pub loading: Vec<f64>,
    #[serde(default)]
    pub factors: Vec<Factor>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Truth {
    pub p: Vec<f64>,
    #[serde(default)]
    pub phi: Vec<f64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentEntry {
    pub initial: Vec<f64>,
    #[serde(default)]
    pub exogenous: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Simulation {
    pub t_end: f64,
    pub dt: f64,
    pub experiments: Vec<ExperimentEntry>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LibraryEntry {
    /// One row per state, one column per reaction rate.
    pub stoich: Vec<Vec<f64>>,
    #[serde(default = "two")]
    pub degree: usize,
    #[serde(default)]
    pub arrhenius: bool,
}

fn two() -> usize {
    2
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelFile {
    pub n_states: usize,
    #[serde(default)]
    pub nonlinear: Vec<String>,
    /// Names from `nonlinear` that are time delays.
    #[serde(default)]
    pub delays: Vec<String>,
    #[serde(default)]
    pub exogenous: Vec<String>,
    #[serde(default)]
    pub nonnegative_p: bool,
    pub phi_lower: Option<Vec<f64>>,
    pub phi_upper: Option<Vec<f64>>,
    pub phi0: Option<Vec<f64>>,
    #[serde(default)]
    pub basis: Vec<BasisEntry>,
    pub truth: Option<Truth>,
    pub simulation: Option<Simulation>,
    pub library: Option<LibraryEntry>,
}

/// A loaded model file. `spec.true_p`/`spec.true_phi` are only meaningful
/// when `has_truth` is set.
#[derive(Debug, Clone)]
pub struct CustomModel {
    pub spec: ProblemSpec,
    pub phi0: Option<DVector<f64>>,
    pub has_truth: bool,
}

fn usage(path: &Path, msg: impl std::fmt::Display) -> CliError {
    CliError::Usage(format!("{}: {msg}", path.display()))
}

pub fn load_model_file(path: &Path) -> Result<CustomModel, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| usage(path, e))?;
    let file: ModelFile = toml::from_str(&text).map_err(|e| usage(path, e))?;
    build(file).map_err(|e| usage(path, e))
}

pub fn build(file: ModelFile) -> Result<CustomModel, String> {
    let n = file.n_states;
    if n == 0 {
        return Err("n_states must be positive".into());
    }
    let phi_index = |name: &str| -> Result<usize, String> {
        file.nonlinear
            .iter()
            .position(|v| v == name)
            .ok_or_else(|| format!("`{name}` is not listed in `nonlinear`"))
    };
    let exo_index = |name: &str| -> Result<usize, String> {
        file.exogenous
            .iter()
            .position(|v| v == name)
            .ok_or_else(|| format!("`{name}` is not listed in `exogenous`"))
    };
    let state = |i: usize| -> Result<usize, String> {
        if i < n {
            Ok(i)
        } else {
            Err(format!("state {i} is out of range for {n} states"))
        }
    };

    let library = match &file.library {
        Some(lib) => {
            if lib.stoich.len() != n || lib.stoich.iter().any(|r| r.len() != lib.stoich[0].len()) {
                return Err(format!("library stoich must have {n} rows of equal length"));
            }
            let stoich = DMatrix::from_fn(n, lib.stoich[0].len(), |i, j| lib.stoich[i][j]);
            let arrhenius = lib.arrhenius.then(Arrhenius::default);
            Some(LibrarySpec::new(stoich, lib.degree, arrhenius).map_err(|e| e.to_string())?)
        }
        None => None,
    };
    if file.basis.is_empty() && library.is_none() {
        return Err("the model needs at least one [[basis]] entry or a [library]".into());
    }

    let mut basis = Vec::with_capacity(file.basis.len());
    for entry in &file.basis {
        if entry.loading.len() != n {
            return Err(format!("basis `{}` has a loading of length {}", entry.name, entry.loading.len()));
        }
        let mut factors = Vec::with_capacity(entry.factors.len());
        for f in &entry.factors {
            factors.push(match f {
                Factor::Monomial { powers } => {
                    if powers.len() != n {
                        return Err(format!("basis `{}`: monomial needs {n} powers", entry.name));
                    }
                    powers
                        .iter()
                        .enumerate()
                        .filter(|(_, &k)| k > 0)
                        .fold(Expr::c(1.0), |acc, (i, &k)| acc * Expr::x(i).powi(k as i32))
                }
                Factor::Saturating { state: s, half } => Expr::saturating(state(*s)?, phi_index(half)?),
                Factor::Delayed { state: s, delay, power } => {
                    let d = phi_index(delay)?;
                    if !file.delays.contains(delay) {
                        return Err(format!("`{delay}` is used as a delay but not listed in `delays`"));
                    }
                    Expr::delayed(state(*s)?, d).powi(*power as i32)
                }
                Factor::Arrhenius {
                    energy,
                    temperature,
                    gas_constant,
                    reference_temperature,
                } => Expr::arrhenius(phi_index(energy)?, exo_index(temperature)?, *gas_constant, *reference_temperature),
                Factor::Constant { value } => Expr::c(*value),
            });
        }
        basis.push(BasisField::new(entry.name.clone(), factors, entry.loading.clone()));
    }

    let delays = file.delays.iter().map(|d| phi_index(d)).collect::<Result<Vec<_>, _>>()?;
    let exo: Vec<&str> = file.exogenous.iter().map(String::as_str).collect();
    let model = ModelStructure::new(n, basis, file.nonlinear.clone())
        .with_delays(delays)
        .with_exogenous(&exo);
    let n_p = model.n_linear();
    let n_phi = model.n_nonlinear();

    let mut constraints = ConstraintSet::unconstrained(n_p, n_phi);
    if file.nonnegative_p {
        constraints = constraints.with_nonnegative_p().map_err(|e| e.to_string())?;
    }
    if file.phi_lower.is_some() || file.phi_upper.is_some() {
        let lower = file.phi_lower.clone().unwrap_or_else(|| vec![f64::NEG_INFINITY; n_phi]);
        let upper = file.phi_upper.clone().unwrap_or_else(|| vec![f64::INFINITY; n_phi]);
        constraints = constraints
            .with_phi_bounds(DVector::from_vec(lower), DVector::from_vec(upper))
            .map_err(|e| e.to_string())?;
    }

    let (true_p, true_phi, has_truth) = match &file.truth {
        Some(t) => {
            if t.p.len() != n_p || t.phi.len() != n_phi {
                return Err(format!(
                    "truth has {}/{} values but the model has {n_p}/{n_phi} parameters",
                    t.p.len(),
                    t.phi.len()
                ));
            }
            (DVector::from_vec(t.p.clone()), DVector::from_vec(t.phi.clone()), true)
        }
        None => (DVector::zeros(n_p), DVector::zeros(n_phi), false),
    };
    let phi0 = match &file.phi0 {
        Some(v) if v.len() != n_phi => return Err(format!("phi0 has {} values, expected {n_phi}", v.len())),
        Some(v) => Some(DVector::from_vec(v.clone())),
        None => None,
    };

    let (experiments, t_end, dt) = match &file.simulation {
        Some(sim) => {
            if !(sim.dt > 0.0) || !(sim.t_end > sim.dt) {
                return Err("simulation needs 0 < dt < t_end".into());
            }
            let mut out = Vec::with_capacity(sim.experiments.len());
            for ex in &sim.experiments {
                if ex.initial.len() != n {
                    return Err(format!("an experiment has {} initial values, expected {n}", ex.initial.len()));
                }
                for name in &file.exogenous {
                    if !ex.exogenous.contains_key(name) {
                        return Err(format!("an experiment does not set exogenous `{name}`"));
                    }
                }
                out.push(Experiment {
                    initial: ex.initial.clone(),
                    exogenous: ex.exogenous.iter().map(|(k, v)| (k.clone(), *v)).collect(),
                });
            }
            (out, sim.t_end, sim.dt)
        }
        None => (Vec::new(), 0.0, 1.0),
    };

    Ok(CustomModel {
        spec: ProblemSpec {
            name: "custom".into(),
            model,
            constraints,
            true_p,
            true_phi,
            experiments,
            t_end,
            dt,
            library,
            support: Vec::new(),
        },
        phi0,
        has_truth,
    })
}
