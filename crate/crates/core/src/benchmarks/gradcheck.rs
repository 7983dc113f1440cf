//! Analytic derivatives against central finite differences at random points
//! around a reference phi.

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::design::Workspace;
use crate::error::{Error, Result};
use crate::implicit::kkt_jvp;
use crate::inner::solve_inner;
use crate::outer::{outer_eval, HessianMode};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GradCheckOptions {
    pub points: usize,
    /// Points are `reference × U(1 − spread, 1 + spread)`, clamped to bounds.
    pub spread: f64,
    /// Relative step: `h_i = fd_step · |φ_i|`, or `fd_step` when `φ_i = 0`.
    pub fd_step: f64,
    pub gradient_tolerance: f64,
    pub jvp_tolerance: f64,
    pub seed: u64,
    pub ridge: f64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            points: 10,
            spread: 0.2,
            fd_step: 1e-5,
            gradient_tolerance: 1e-5,
            jvp_tolerance: 1e-6,
            seed: 0,
            ridge: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheckPoint {
    pub phi: Vec<f64>,
    pub gradient: Vec<f64>,
    pub gradient_fd: Vec<f64>,
    /// `‖g − g_fd‖∞ / ‖g_fd‖∞`.
    pub gradient_error: f64,
    /// Inner-solution tangents along every unit direction against difference
    /// quotients of two inner solves, as `max|W − W_fd| / max|W_fd|` over the
    /// Jacobian with column `i` scaled by `|φ_i|`.
    pub jvp_error: f64,
    /// Same for the assembled design.
    pub design_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub points: Vec<GradCheckPoint>,
    pub max_gradient_error: f64,
    pub max_jvp_error: f64,
    pub max_design_error: f64,
    pub gradient_tolerance: f64,
    pub jvp_tolerance: f64,
    pub passed: bool,
}

fn rel_inf(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    let scale = b.amax();
    let diff = (a - b).amax();
    if scale == 0.0 {
        diff
    } else {
        diff / scale
    }
}

fn step(rel: f64, x: f64) -> f64 {
    if x == 0.0 {
        rel
    } else {
        rel * x.abs()
    }
}

/// Runs the check at `options.points` random points around `reference`.
pub fn gradient_check(ws: &Workspace, reference: &DVector<f64>, options: &GradCheckOptions) -> Result<GradCheckReport> {
    if options.points == 0 || !(options.fd_step > 0.0) || !(options.spread >= 0.0) {
        return Err(Error::InvalidOption(
            "gradcheck needs points > 0, fd_step > 0 and spread >= 0".into(),
        ));
    }
    let n = reference.len();
    let (lo, hi) = ws.problem().phi_bounds();
    let mut rng = ChaCha8Rng::seed_from_u64(options.seed);
    let mut points = Vec::with_capacity(options.points);
    for _ in 0..options.points {
        let phi = DVector::from_fn(n, |i, _| {
            let f = 1.0 + options.spread * (2.0 * rng.gen::<f64>() - 1.0);
            (reference[i] * f).clamp(lo[i], hi[i])
        });

        let eval = outer_eval(ws, &phi, options.ridge, HessianMode::Paper)?;
        let design = &eval.design;
        let per_coord: Vec<(f64, (f64, f64), f64)> = (0..n)
            .into_par_iter()
            .map(|i| -> Result<(f64, (f64, f64), f64)> {
                let h = step(options.fd_step, phi[i]);
                let up = (phi[i] + h).min(hi[i]);
                let down = (phi[i] - h).max(lo[i]);
                if up <= down {
                    return Ok((0.0, (0.0, 0.0), 0.0));
                }
                let mut xp = phi.clone();
                let mut xm = phi.clone();
                xp[i] = up;
                xm[i] = down;
                let ap = ws.assemble(&xp)?;
                let am = ws.assemble(&xm)?;
                let sp = solve_inner(&ap, ws.problem().constraints(), options.ridge)?;
                let sm = solve_inner(&am, ws.problem().constraints(), options.ridge)?;
                let g = (sp.objective - sm.objective) / (up - down);

                let mut dir = DVector::zeros(n);
                dir[i] = 1.0;
                let dd = ws.design_jvp(&phi, &dir)?;
                let tangent = kkt_jvp(&eval.inner, design, &dd)?;
                let dp_fd = (&sp.p - &sm.p) / (up - down);
                // columns of the φ-scaled Jacobian so all directions share units
                let scale_i = if phi[i] == 0.0 { 1.0 } else { phi[i].abs() };
                let diff = (&tangent.w1 - &dp_fd).amax() * scale_i;
                let reference = dp_fd.amax() * scale_i;

                let exact = dd.to_dense(design);
                let fd = (ap.to_dense().0 - am.to_dense().0) / (up - down);
                let scale = fd.amax();
                let ddiff = (exact - &fd).amax();
                Ok((g, (diff, reference), if scale == 0.0 { ddiff } else { ddiff / scale }))
            })
            .collect::<Result<_>>()?;
        let gfd = DVector::from_fn(n, |i, _| per_coord[i].0);
        let (jd, jr) = per_coord
            .iter()
            .fold((0.0f64, 0.0f64), |(d, r), c| (d.max(c.1 .0), r.max(c.1 .1)));
        let jvp_error = if jr == 0.0 { jd } else { jd / jr };
        let design_error = per_coord.iter().map(|c| c.2).fold(0.0, f64::max);

        points.push(GradCheckPoint {
            phi: phi.iter().cloned().collect(),
            gradient: eval.gradient.iter().cloned().collect(),
            gradient_fd: gfd.iter().cloned().collect(),
            gradient_error: rel_inf(&eval.gradient, &gfd),
            jvp_error,
            design_error,
        });
    }
    let max = |f: fn(&GradCheckPoint) -> f64| points.iter().map(f).fold(0.0, f64::max);
    let max_gradient_error = max(|p| p.gradient_error);
    let max_jvp_error = max(|p| p.jvp_error);
    let max_design_error = max(|p| p.design_error);
    Ok(GradCheckReport {
        passed: max_gradient_error <= options.gradient_tolerance && max_jvp_error <= options.jvp_tolerance,
        points,
        max_gradient_error,
        max_jvp_error,
        max_design_error,
        gradient_tolerance: options.gradient_tolerance,
        jvp_tolerance: options.jvp_tolerance,
    })
}
