use std::path::{Path, PathBuf};

use bilevel::benchmarks::{carboxylic_with, gradient_check, SimulationOptions};
use bilevel::discovery::library_model;
use bilevel::{
    make_problem, optimize_outer, simulate_model, stlsq_discover, validate_estimate, BenchmarkName, ConvergenceFlag,
    DiscoveryStatus, ModelStructure, ParameterEstimate, ProblemSpec, Trajectory, Workspace,
};
use log::{info, warn};
use nalgebra::DVector;

use crate::config::{Command, RunConfig};
use crate::io::{read_trajectory, write_trajectory};
use crate::model_file::load_model_file;
use crate::record::{named, ResultRecord, RoundSummary, RunStatus, TermRecord};
use crate::CliError;

struct Resolved {
    spec: ProblemSpec,
    phi0: Option<DVector<f64>>,
    has_truth: bool,
    label: String,
}

fn resolve(config: &RunConfig) -> Result<Resolved, CliError> {
    if let Some(name) = config.problem {
        let spec = match (name, config.experiments) {
            (BenchmarkName::Carboxylic, Some(n)) => carboxylic_with(n, config.seed)?,
            (_, Some(_)) => {
                return Err(CliError::Usage(format!("`experiments` only applies to randomized designs, not {name}")));
            }
            _ => make_problem(name.as_str(), config.seed)?,
        };
        return Ok(Resolved {
            spec,
            phi0: None,
            has_truth: true,
            label: name.to_string(),
        });
    }
    let path = config.model.as_ref().expect("parse_config requires a problem or a model");
    let custom = load_model_file(path)?;
    Ok(Resolved {
        spec: custom.spec,
        phi0: custom.phi0,
        has_truth: custom.has_truth,
        label: path.display().to_string(),
    })
}

fn out_path(config: &RunConfig, file: impl AsRef<Path>) -> PathBuf {
    config.output.join(file)
}

/// Runs one command and returns the process exit code. A `record.json` is
/// written for every run that gets past model resolution.
pub fn run(config: &RunConfig) -> Result<i32, CliError> {
    std::fs::create_dir_all(&config.output)
        .map_err(|e| CliError::Io(format!("{}: {e}", config.output.display())))?;
    let resolved = resolve(config)?;
    let mut record = ResultRecord::new(config, &resolved.label);
    let result = match config.command {
        Command::Simulate => simulate(config, &resolved, &mut record),
        Command::Estimate => estimate(config, &resolved, &mut record),
        Command::Discover => discover(config, &resolved, &mut record),
        Command::Gradcheck => gradcheck(config, &resolved, &mut record),
    };
    let code = match result {
        Ok(code) => code,
        Err(e) => {
            record.status = RunStatus::Failed;
            record.error = Some(e.to_string());
            eprintln!("error: {e}");
            e.exit_code()
        }
    };
    record.write(&out_path(config, "record.json"))?;
    Ok(code)
}

fn load_data(config: &RunConfig, r: &Resolved) -> Result<Vec<Trajectory>, CliError> {
    let model = &r.spec.model;
    if !config.data.is_empty() {
        return config
            .data
            .iter()
            .map(|p| read_trajectory(p, model.n_states, &model.exogenous, model.has_delays()))
            .collect();
    }
    if r.has_truth && !r.spec.experiments.is_empty() {
        info!("generating noiseless data for {} experiments", r.spec.experiments.len());
        return Ok(r.spec.generate_data()?);
    }
    Err(CliError::Usage(
        "no --data given and the model has no [truth] and [simulation] to generate it".into(),
    ))
}

fn write_all(config: &RunConfig, prefix: &str, trajs: &[Trajectory], exo: &[String]) -> Result<(), CliError> {
    for (e, t) in trajs.iter().enumerate() {
        write_trajectory(&out_path(config, format!("{prefix}_{e}.csv")), t, exo)?;
    }
    Ok(())
}

/// Re-simulates each experiment on its own sample times from its first
/// sample (or history).
fn predict(model: &ModelStructure, p: &DVector<f64>, phi: &DVector<f64>, data: &[Trajectory]) -> Result<Vec<Trajectory>, CliError> {
    let opts = SimulationOptions::default();
    data.iter()
        .map(|d| {
            let initial: Vec<f64> = match &d.history {
                Some(h) => h.clone(),
                None => d.states.column(0).iter().cloned().collect(),
            };
            let exo: Vec<f64> = model
                .exogenous
                .iter()
                .map(|n| d.exogenous.get(n).copied().unwrap_or(f64::NAN))
                .collect();
            let states = simulate_model(model, p.as_slice(), phi.as_slice(), &initial, &exo, &d.times, &opts)?;
            let mut t = Trajectory::new(d.times.clone(), states);
            t.exogenous = d.exogenous.clone();
            Ok(t)
        })
        .collect()
}

fn fill_estimate(record: &mut ResultRecord, model: &ModelStructure, est: &ParameterEstimate) {
    record.linear = named(&model.linear_names(), est.p.iter().cloned());
    record.nonlinear = named(&model.nonlinear_names, est.phi.iter().cloned());
    record.loss = Some(est.loss);
    record.iterations = Some(est.iterations);
    record.convergence_flag = Some(est.convergence_flag);
    record.loss_trace = est.loss_trace.clone();
}

fn flag_code(record: &mut ResultRecord, flag: ConvergenceFlag) -> i32 {
    match flag {
        ConvergenceFlag::Converged | ConvergenceFlag::RegularityWarning => 0,
        ConvergenceFlag::MaxIter | ConvergenceFlag::LineSearchFailure => {
            record.status = RunStatus::Failed;
            record.error = Some(format!("optimizer stopped without converging ({flag:?})"));
            1
        }
    }
}

fn simulate(config: &RunConfig, r: &Resolved, record: &mut ResultRecord) -> Result<i32, CliError> {
    if !r.has_truth || r.spec.experiments.is_empty() {
        return Err(CliError::Usage("simulate needs [truth] and [simulation] in the model file".into()));
    }
    let model = &r.spec.model;
    record.linear = named(&model.linear_names(), r.spec.true_p.iter().cloned());
    record.nonlinear = named(&model.nonlinear_names, r.spec.true_phi.iter().cloned());
    let trajs = r.spec.generate_data()?;
    write_all(config, "trajectory", &trajs, &model.exogenous)?;
    println!(
        "wrote {} trajectories with {} states to {}",
        trajs.len(),
        model.n_states,
        config.output.display()
    );
    Ok(0)
}

fn initial_phi(config: &RunConfig, r: &Resolved) -> Result<DVector<f64>, CliError> {
    let n = r.spec.model.n_nonlinear();
    if let Some(v) = &config.phi0 {
        if v.len() != n {
            return Err(CliError::Usage(format!("phi0 has {} values, expected {n}", v.len())));
        }
        return Ok(DVector::from_vec(v.clone()));
    }
    if let Some(v) = &r.phi0 {
        return Ok(v.clone());
    }
    if r.has_truth {
        let (lo, hi) = (&r.spec.constraints.phi_lower, &r.spec.constraints.phi_upper);
        let phi = r.spec.perturbed_phi(config.seed, config.init_spread);
        return Ok(DVector::from_fn(n, |i, _| phi[i].clamp(lo[i], hi[i])));
    }
    if n == 0 {
        return Ok(DVector::zeros(0));
    }
    Err(CliError::Usage("no initial phi: pass --phi0 or set phi0 in the model file".into()))
}

fn estimate(config: &RunConfig, r: &Resolved, record: &mut ResultRecord) -> Result<i32, CliError> {
    let data = load_data(config, r)?;
    let phi0 = initial_phi(config, r)?;
    let model = &r.spec.model;
    let ws = Workspace::new(r.spec.problem(data.clone())?)?;
    info!("optimizing {} nonlinear parameters from {:?}", phi0.len(), phi0.as_slice());
    let est = optimize_outer(&ws, &phi0, &config.outer)?;
    fill_estimate(record, model, &est);
    if r.has_truth {
        match validate_estimate(&r.spec, &est, &data) {
            Ok(v) => record.validation = Some(v),
            Err(e) => record.warnings.push(format!("validation skipped: {e}")),
        }
    }
    write_all(config, "data", &data, &model.exogenous)?;
    match predict(model, &est.p, &est.phi, &data) {
        Ok(pred) => write_all(config, "predicted", &pred, &model.exogenous)?,
        Err(e) => record.warnings.push(format!("re-simulation failed: {e}")),
    }
    println!(
        "loss {:.6e} after {} iterations ({:?})",
        est.loss, est.iterations, est.convergence_flag
    );
    for n in record.linear.iter().chain(&record.nonlinear) {
        println!("  {:>12} = {:.8e}", n.name, n.value);
    }
    if let Some(v) = &record.validation {
        println!("max relative error vs truth {:.3e}", v.max_relative_error);
    }
    Ok(flag_code(record, est.convergence_flag))
}

fn discover(config: &RunConfig, r: &Resolved, record: &mut ResultRecord) -> Result<i32, CliError> {
    let Some(library) = &r.spec.library else {
        return Err(CliError::Usage("this problem has no candidate library".into()));
    };
    let data = load_data(config, r)?;
    let outcome = stlsq_discover(&data, library, &config.discovery)?;
    record.warnings.extend(outcome.warnings.iter().cloned());
    let term = |rate: usize, term: usize, k: f64, energy: Option<f64>| TermRecord {
        rate: rate + 1,
        term,
        label: library.term_label(term),
        k,
        energy,
    };
    for round in &outcome.rounds {
        record.rounds.push(RoundSummary {
            round: round.round,
            n_active: round.support.len(),
            eliminated: round.eliminated,
            loss: round.loss,
            iterations: round.iterations,
            convergence_flag: round.convergence_flag,
            terms: round
                .support
                .iter()
                .enumerate()
                .map(|(i, &(rt, t))| term(rt, t, round.k[i], round.energies.get(i).copied()))
                .collect(),
        });
    }

    let mut rows = csv::Writer::from_path(out_path(config, "rounds.csv")).map_err(|e| CliError::Io(e.to_string()))?;
    rows.write_record(["round", "rate", "term", "label", "k", "E"])
        .map_err(|e| CliError::Io(e.to_string()))?;
    for round in &record.rounds {
        for t in &round.terms {
            rows.write_record([
                round.round.to_string(),
                t.rate.to_string(),
                t.term.to_string(),
                t.label.clone(),
                t.k.to_string(),
                t.energy.map(|e| e.to_string()).unwrap_or_default(),
            ])
            .map_err(|e| CliError::Io(e.to_string()))?;
        }
    }
    rows.flush().map_err(|e| CliError::Io(e.to_string()))?;

    match outcome.state.status {
        DiscoveryStatus::AllEliminated => {
            record.status = RunStatus::AllEliminated;
            record.error = Some(format!(
                "every candidate term was eliminated (epsilon = {} is too large)",
                outcome.state.epsilon
            ));
            println!("all candidate terms eliminated after {} rounds", outcome.rounds.len());
            return Ok(3);
        }
        DiscoveryStatus::Running => {
            record.status = RunStatus::Failed;
            record.error = Some(format!("support did not settle within {} rounds", config.discovery.max_rounds));
        }
        DiscoveryStatus::Converged => {}
    }
    let est = outcome.estimate()?;
    let lm = library_model(library, Some(&outcome.state.active_mask))?;
    fill_estimate(record, &lm.model, est);

    let mut support = csv::Writer::from_path(out_path(config, "support.csv")).map_err(|e| CliError::Io(e.to_string()))?;
    support
        .write_record(["rate", "term", "label", "k", "E"])
        .map_err(|e| CliError::Io(e.to_string()))?;
    for &(rate, t) in &outcome.columns {
        support
            .write_record([
                (rate + 1).to_string(),
                t.to_string(),
                library.term_label(t),
                outcome.coefficient(rate, t).to_string(),
                outcome.energy(rate, t).map(|e| e.to_string()).unwrap_or_default(),
            ])
            .map_err(|e| CliError::Io(e.to_string()))?;
    }
    support.flush().map_err(|e| CliError::Io(e.to_string()))?;

    if r.has_truth && outcome.columns == r.spec.support {
        match validate_estimate(&r.spec, est, &data) {
            Ok(v) => record.validation = Some(v),
            Err(e) => record.warnings.push(format!("validation skipped: {e}")),
        }
    }
    write_all(config, "data", &data, &lm.model.exogenous)?;
    match predict(&lm.model, &est.p, &est.phi, &data) {
        Ok(pred) => write_all(config, "predicted", &pred, &lm.model.exogenous)?,
        Err(e) => record.warnings.push(format!("re-simulation failed: {e}")),
    }
    println!(
        "{} active terms after {} rounds, loss {:.6e}",
        outcome.columns.len(),
        outcome.rounds.len(),
        est.loss
    );
    for &(rate, t) in &outcome.columns {
        let e = outcome.energy(rate, t).map(|e| format!("  E = {e:.4e}")).unwrap_or_default();
        println!("  rate {:>2} term {:>3} {:>8}  k = {:+.5e}{e}", rate + 1, t, library.term_label(t), outcome.coefficient(rate, t));
    }
    if record.status == RunStatus::Failed {
        return Ok(1);
    }
    Ok(flag_code(record, est.convergence_flag))
}

fn gradcheck(config: &RunConfig, r: &Resolved, record: &mut ResultRecord) -> Result<i32, CliError> {
    let data = load_data(config, r)?;
    let reference = match (&config.phi0, r.has_truth) {
        (Some(v), _) => DVector::from_vec(v.clone()),
        (None, true) => r.spec.true_phi.clone(),
        (None, false) => initial_phi(config, r)?,
    };
    let ws = Workspace::new(r.spec.problem(data)?)?;
    let report = gradient_check(&ws, &reference, &config.gradcheck)?;
    let json = serde_json::to_string_pretty(&report).expect("report serializes");
    let path = out_path(config, "gradcheck.json");
    std::fs::write(&path, json + "\n").map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    record.gradcheck = Some((&report).into());
    println!(
        "max relative gradient error {:.3e} (tolerance {:.0e})",
        report.max_gradient_error, report.gradient_tolerance
    );
    println!(
        "max relative inner JVP error {:.3e} (tolerance {:.0e})",
        report.max_jvp_error, report.jvp_tolerance
    );
    println!("max relative design JVP error {:.3e}", report.max_design_error);
    if report.passed {
        Ok(0)
    } else {
        warn!("finite-difference check exceeded its tolerance");
        record.status = RunStatus::CheckFailed;
        Ok(1)
    }
}
