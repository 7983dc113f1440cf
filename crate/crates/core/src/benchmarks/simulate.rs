//! Dormand–Prince 5(4) integration for ODEs and constant-lag DDEs.
//!
//! Steps are forced to land on every output time and, for DDEs, on every
//! derivative breakpoint (sums of delays), so no output is interpolated.
//! Delayed lookups use cubic Hermite interpolation of the accepted steps.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimulationOptions {
    pub rtol: f64,
    pub atol: f64,
    pub max_steps: usize,
}

impl Default for SimulationOptions {
    fn default() -> Self {
        Self {
            rtol: 1e-9,
            atol: 1e-12,
            max_steps: 5_000_000,
        }
    }
}

const C: [f64; 7] = [0.0, 1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0, 1.0];
const A: [[f64; 6]; 7] = [
    [0.0; 6],
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
    [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
    [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
];
/// Fifth-order weights minus embedded fourth-order weights.
const E: [f64; 7] = [
    71.0 / 57600.0,
    0.0,
    -71.0 / 16695.0,
    71.0 / 1920.0,
    -17253.0 / 339200.0,
    22.0 / 525.0,
    -1.0 / 40.0,
];

/// Accepted step kept for delayed lookups.
#[derive(Debug, Clone)]
struct Segment {
    t0: f64,
    t1: f64,
    y0: Vec<f64>,
    y1: Vec<f64>,
    f0: Vec<f64>,
    f1: Vec<f64>,
}

impl Segment {
    fn eval(&self, t: f64, out: &mut [f64]) {
        let h = self.t1 - self.t0;
        let s = (t - self.t0) / h;
        let h00 = (1.0 + 2.0 * s) * (1.0 - s) * (1.0 - s);
        let h10 = s * (1.0 - s) * (1.0 - s);
        let h01 = s * s * (3.0 - 2.0 * s);
        let h11 = s * s * (s - 1.0);
        for i in 0..out.len() {
            out[i] = h00 * self.y0[i] + h10 * h * self.f0[i] + h01 * self.y1[i] + h11 * h * self.f1[i];
        }
    }
}

/// Past solution for delayed lookups: constant history before `t_start`,
/// then the accepted steps.
struct Past<'a> {
    t_start: f64,
    history: &'a [f64],
    y_start: Vec<f64>,
    segments: Vec<Segment>,
    /// Step in progress, consulted past the last accepted point.
    tentative: Option<Segment>,
}

impl Past<'_> {
    fn lookup(&self, t: f64, out: &mut [f64]) {
        if t < self.t_start {
            out.copy_from_slice(self.history);
            return;
        }
        if let Some(seg) = &self.tentative {
            if t >= seg.t0 {
                seg.eval(t, out);
                return;
            }
        }
        if self.segments.is_empty() {
            out.copy_from_slice(&self.y_start);
            return;
        }
        // past the last accepted step the last cubic is extrapolated
        let idx = self.segments.partition_point(|s| s.t1 < t).min(self.segments.len() - 1);
        self.segments[idx].eval(t, out);
    }
}

fn error_norm(y: &[f64], y_new: &[f64], err: &[f64], opts: &SimulationOptions) -> f64 {
    let n = y.len().max(1) as f64;
    let sum: f64 = (0..y.len())
        .map(|i| {
            let sc = opts.atol + opts.rtol * y[i].abs().max(y_new[i].abs());
            (err[i] / sc).powi(2)
        })
        .sum();
    (sum / n).sqrt()
}

/// Integrates `dx/dt = f(t, x)` and returns the states at `times`
/// (`n_states × n_times`); `times[0]` is the initial time.
pub fn simulate_ode<F>(mut rhs: F, x0: &[f64], times: &[f64], opts: &SimulationOptions) -> Result<DMatrix<f64>>
where
    F: FnMut(f64, &[f64], &mut [f64]),
{
    integrate(
        |t, y, _past: &Past<'_>, out: &mut [f64]| rhs(t, y, out),
        x0,
        x0,
        &[],
        times,
        opts,
        false,
    )
}

/// Integrates `dx/dt = f(t, x(t), x(t − τ_1), …)` with constant history
/// for `t < times[0]`. The delayed states are passed as `n_delays × n_states`
/// values, delay-major.
pub fn simulate_dde<F>(
    mut rhs: F,
    history: &[f64],
    delays: &[f64],
    times: &[f64],
    opts: &SimulationOptions,
) -> Result<DMatrix<f64>>
where
    F: FnMut(f64, &[f64], &[f64], &mut [f64]),
{
    for &d in delays {
        if !(d > 0.0) || !d.is_finite() {
            return Err(Error::DelayTooSmall { delay: d });
        }
    }
    let n = history.len();
    let mut lagged = vec![0.0; delays.len() * n];
    integrate(
        |t, y, past: &Past<'_>, out: &mut [f64]| {
            for (k, &d) in delays.iter().enumerate() {
                past.lookup(t - d, &mut lagged[k * n..(k + 1) * n]);
            }
            rhs(t, y, &lagged, out)
        },
        history,
        history,
        delays,
        times,
        opts,
        true,
    )
}

/// Sums of up to three delays that fall inside the integration window.
fn breakpoints(delays: &[f64], t0: f64, t_end: f64) -> Vec<f64> {
    let mut out = Vec::new();
    let mut level: Vec<f64> = vec![0.0];
    for _ in 0..3 {
        let mut next = Vec::new();
        for &b in &level {
            for &d in delays {
                let v = b + d;
                if t0 + v < t_end {
                    next.push(v);
                }
            }
        }
        out.extend(next.iter().map(|v| t0 + v));
        level = next;
    }
    out.sort_by(|a, b| a.partial_cmp(b).unwrap());
    out.dedup_by(|a, b| (*a - *b).abs() <= 1e-12 * (1.0 + b.abs()));
    out
}

#[allow(clippy::too_many_arguments)]
fn integrate<F>(
    mut f: F,
    x0: &[f64],
    history: &[f64],
    delays: &[f64],
    times: &[f64],
    opts: &SimulationOptions,
    keep_past: bool,
) -> Result<DMatrix<f64>>
where
    F: FnMut(f64, &[f64], &Past<'_>, &mut [f64]),
{
    let n = x0.len();
    if times.is_empty() {
        return Err(Error::TooFewSamples { got: 0, need: 1 });
    }
    for (index, w) in times.windows(2).enumerate() {
        if !(w[1] > w[0]) {
            return Err(Error::NonMonotoneTimes { index: index + 1 });
        }
    }
    if x0.iter().any(|v| !v.is_finite()) {
        return Err(Error::StepSizeUnderflow { t: times[0] });
    }
    let t_start = times[0];
    let t_end = *times.last().unwrap();
    let mut out = DMatrix::zeros(n, times.len());
    out.column_mut(0).copy_from_slice(x0);

    // every point the integrator must land on
    let mut stops: Vec<f64> = times[1..].to_vec();
    stops.extend(breakpoints(delays, t_start, t_end));
    stops.sort_by(|a, b| a.partial_cmp(b).unwrap());
    stops.dedup_by(|a, b| (*a - *b).abs() <= 1e-12 * (1.0 + b.abs()));

    let mut past = Past {
        t_start,
        history,
        y_start: x0.to_vec(),
        segments: Vec::new(),
        tentative: None,
    };
    let mut t = t_start;
    let mut y = x0.to_vec();
    let mut k: Vec<Vec<f64>> = vec![vec![0.0; n]; 7];
    f(t, &y, &past, &mut k[0]);
    let mut h = {
        // standard initial step heuristic
        let d0 = y.iter().map(|v| v * v).sum::<f64>().sqrt();
        let d1 = k[0].iter().map(|v| v * v).sum::<f64>().sqrt();
        let h0 = if d0 < 1e-5 || d1 < 1e-5 { 1e-6 } else { 0.01 * d0 / d1 };
        h0.min(t_end - t_start).max(1e-12)
    };
    let mut next_out = 1;
    let mut stop_idx = 0;
    let mut ytmp = vec![0.0; n];
    let mut y_new = vec![0.0; n];
    let mut err = vec![0.0; n];
    let mut steps = 0;
    while stop_idx < stops.len() {
        let target = stops[stop_idx];
        let floor = 1e-14 * (1.0 + t.abs());
        let mut step = h.min(target - t);
        let lands = step >= target - t - floor;
        if lands {
            step = target - t;
        }
        steps += 1;
        if steps > opts.max_steps || step < floor {
            return Err(Error::StepSizeUnderflow { t });
        }
        // a delay shorter than the step looks into the step itself: iterate
        // on the step's own Hermite interpolant until the end state settles
        let overlap = keep_past && delays.iter().any(|&d| d < step);
        past.tentative = None;
        for pass in 0..if overlap { 6 } else { 1 } {
            for s in 1..7 {
                for i in 0..n {
                    let mut acc = y[i];
                    for (j, kj) in k.iter().enumerate().take(s) {
                        acc += step * A[s][j] * kj[i];
                    }
                    ytmp[i] = acc;
                }
                let (_, tail) = k.split_at_mut(s);
                f(t + C[s] * step, &ytmp, &past, &mut tail[0]);
            }
            // the seventh stage is evaluated at the fifth-order solution
            let change = if pass == 0 {
                f64::INFINITY
            } else {
                let diff: Vec<f64> = ytmp.iter().zip(&y_new).map(|(a, b)| a - b).collect();
                error_norm(&y, &ytmp, &diff, opts)
            };
            y_new.copy_from_slice(&ytmp);
            if change < 1e-3 {
                break;
            }
            if overlap {
                past.tentative = Some(Segment {
                    t0: t,
                    t1: t + step,
                    y0: y.clone(),
                    y1: y_new.clone(),
                    f0: k[0].clone(),
                    f1: k[6].clone(),
                });
            }
        }
        past.tentative = None;
        for i in 0..n {
            let mut e = 0.0;
            for (j, kj) in k.iter().enumerate() {
                e += E[j] * kj[i];
            }
            err[i] = step * e;
        }
        let en = error_norm(&y, &y_new, &err, opts);
        if !en.is_finite() || y_new.iter().any(|v| !v.is_finite()) {
            h = step * 0.1;
            if h < floor {
                return Err(Error::StepSizeUnderflow { t });
            }
            continue;
        }
        if en > 1.0 {
            h = step * (0.9 * en.powf(-0.2)).max(0.1);
            continue;
        }
        let t_new = if lands { target } else { t + step };
        if keep_past {
            past.segments.push(Segment {
                t0: t,
                t1: t_new,
                y0: y.clone(),
                y1: y_new.clone(),
                f0: k[0].clone(),
                f1: k[6].clone(),
            });
        }
        t = t_new;
        y.copy_from_slice(&y_new);
        let last = k[6].clone();
        k[0] = last;
        let factor = if en == 0.0 { 5.0 } else { (0.9 * en.powf(-0.2)).clamp(0.2, 5.0) };
        if lands {
            // keep the unconstrained step size for the next interval
            h = h.max(step * factor.min(1.0));
            stop_idx += 1;
            while next_out < times.len() && (times[next_out] - t).abs() <= 1e-12 * (1.0 + t.abs()) {
                out.column_mut(next_out).copy_from_slice(&y);
                next_out += 1;
            }
            if keep_past {
                // derivative may jump at a breakpoint; restart the stages
                f(t, &y, &past, &mut k[0]);
            }
        } else {
            h = step * factor;
        }
    }
    Ok(out)
}
