//! Per-state cubic spline interpolants of the measurements and cumulative
//! Simpson quadrature on the measurement grid refined at panel midpoints.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::problem::Trajectory;

/// Not-a-knot cubic spline stored as per-interval polynomial coefficients
/// `y_k + b dt + c dt^2 + d dt^3`.
#[derive(Debug, Clone, PartialEq)]
pub struct CubicSpline {
    knots: Vec<f64>,
    coeffs: Vec<[f64; 4]>,
}

impl CubicSpline {
    pub fn not_a_knot(t: &[f64], y: &[f64]) -> Result<Self> {
        let n = t.len();
        if y.len() != n {
            return Err(Error::DimensionMismatch(format!(
                "{} knots but {} values",
                n,
                y.len()
            )));
        }
        if n < 4 {
            return Err(Error::TooFewSamples { got: n, need: 4 });
        }
        for (index, w) in t.windows(2).enumerate() {
            if !(w[1] > w[0]) {
                return Err(Error::NonMonotoneTimes { index: index + 1 });
            }
        }

        let h: Vec<f64> = t.windows(2).map(|w| w[1] - w[0]).collect();
        let delta: Vec<f64> = (0..n - 1).map(|i| (y[i + 1] - y[i]) / h[i]).collect();

        // Second derivatives m_1..m_{n-2}; m_0 and m_{n-1} are eliminated
        // through third-derivative continuity at the first and last interior knot.
        let k = n - 2;
        let mut sub = vec![0.0; k];
        let mut diag = vec![0.0; k];
        let mut sup = vec![0.0; k];
        let mut rhs = vec![0.0; k];
        for r in 0..k {
            let i = r + 1;
            sub[r] = h[i - 1];
            diag[r] = 2.0 * (h[i - 1] + h[i]);
            sup[r] = h[i];
            rhs[r] = 6.0 * (delta[i] - delta[i - 1]);
        }
        // m_0 = (1 + h0/h1) m_1 - (h0/h1) m_2
        let (h0, h1) = (h[0], h[1]);
        diag[0] += h0 * (1.0 + h0 / h1);
        sup[0] -= h0 * h0 / h1;
        // m_{n-1} = (1 + h_{n-2}/h_{n-3}) m_{n-2} - (h_{n-2}/h_{n-3}) m_{n-3}
        let (ha, hb) = (h[n - 2], h[n - 3]);
        diag[k - 1] += ha * (1.0 + ha / hb);
        sub[k - 1] -= ha * ha / hb;

        let inner = solve_tridiagonal(&sub, &diag, &sup, &rhs);
        let mut m = vec![0.0; n];
        m[1..n - 1].copy_from_slice(&inner);
        m[0] = (1.0 + h0 / h1) * m[1] - (h0 / h1) * m[2];
        m[n - 1] = (1.0 + ha / hb) * m[n - 2] - (ha / hb) * m[n - 3];

        let coeffs = (0..n - 1)
            .map(|i| {
                let hi = h[i];
                let b = delta[i] - hi * (2.0 * m[i] + m[i + 1]) / 6.0;
                let c = m[i] / 2.0;
                let d = (m[i + 1] - m[i]) / (6.0 * hi);
                [y[i], b, c, d]
            })
            .collect();
        Ok(Self {
            knots: t.to_vec(),
            coeffs,
        })
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    fn locate(&self, t: f64) -> usize {
        let i = self.knots.partition_point(|&k| k <= t);
        i.saturating_sub(1).min(self.coeffs.len() - 1)
    }

    pub fn value(&self, t: f64) -> f64 {
        let i = self.locate(t);
        let dt = t - self.knots[i];
        let [a, b, c, d] = self.coeffs[i];
        a + dt * (b + dt * (c + dt * d))
    }

    pub fn derivative(&self, t: f64) -> f64 {
        let i = self.locate(t);
        let dt = t - self.knots[i];
        let [_, b, c, d] = self.coeffs[i];
        b + dt * (2.0 * c + dt * 3.0 * d)
    }
}

fn solve_tridiagonal(sub: &[f64], diag: &[f64], sup: &[f64], rhs: &[f64]) -> Vec<f64> {
    let n = diag.len();
    let mut c = vec![0.0; n];
    let mut d = vec![0.0; n];
    c[0] = sup[0] / diag[0];
    d[0] = rhs[0] / diag[0];
    for i in 1..n {
        let denom = diag[i] - sub[i] * c[i - 1];
        c[i] = if i + 1 < n { sup[i] / denom } else { 0.0 };
        d[i] = (rhs[i] - sub[i] * d[i - 1]) / denom;
    }
    let mut x = vec![0.0; n];
    x[n - 1] = d[n - 1];
    for i in (0..n - 1).rev() {
        x[i] = d[i] - c[i] * x[i + 1];
    }
    x
}

/// One spline per state plus the optional constant history for `t <= 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct InterpolantSet {
    splines: Vec<CubicSpline>,
    history: Option<Vec<f64>>,
    t_first: f64,
    t_last: f64,
}

/// Fits a not-a-knot cubic spline to every state of a trajectory.
pub fn fit_interpolants(traj: &Trajectory) -> Result<InterpolantSet> {
    traj.check_times()?;
    if traj.n_times() < 4 {
        return Err(Error::TooFewSamples {
            got: traj.n_times(),
            need: 4,
        });
    }
    let splines = (0..traj.n_states())
        .map(|s| {
            let y: Vec<f64> = traj.states.row(s).iter().cloned().collect();
            CubicSpline::not_a_knot(&traj.times, &y)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(InterpolantSet {
        splines,
        history: traj.history.clone(),
        t_first: traj.times[0],
        t_last: *traj.times.last().unwrap(),
    })
}

impl InterpolantSet {
    pub fn n_states(&self) -> usize {
        self.splines.len()
    }

    pub fn domain(&self) -> (f64, f64) {
        (self.t_first, self.t_last)
    }

    pub fn history(&self) -> Option<&[f64]> {
        self.history.as_deref()
    }

    fn in_history(&self, t: f64) -> Result<bool> {
        let slack = 1e-12 * (1.0 + self.t_last.abs());
        if t > self.t_last + slack {
            return Err(self.out_of_domain(t));
        }
        if t < self.t_first {
            if self.history.is_some() && t <= 0.0 {
                return Ok(true);
            }
            return Err(self.out_of_domain(t));
        }
        Ok(false)
    }

    fn out_of_domain(&self, t: f64) -> Error {
        Error::OutOfDomain {
            t,
            lo: self.t_first,
            hi: self.t_last,
        }
    }

    /// Value (`order = 0`) or time derivative (`order = 1`) of one state.
    pub fn query(&self, state: usize, t: f64, order: usize) -> Result<f64> {
        if order > 1 {
            return Err(Error::UnsupportedOrder(order));
        }
        let spline = self.splines.get(state).ok_or_else(|| {
            Error::InvalidIndex(format!("state {state} of {}", self.splines.len()))
        })?;
        if self.in_history(t)? {
            let h = self.history.as_ref().unwrap();
            return Ok(if order == 0 { h[state] } else { 0.0 });
        }
        Ok(if order == 0 {
            spline.value(t)
        } else {
            spline.derivative(t)
        })
    }

    /// Values and derivatives of all states at `t`.
    pub fn query_all(&self, t: f64, values: &mut [f64], derivs: &mut [f64]) -> Result<()> {
        if self.in_history(t)? {
            values.copy_from_slice(self.history.as_ref().unwrap());
            derivs.iter_mut().for_each(|d| *d = 0.0);
            return Ok(());
        }
        for (s, spline) in self.splines.iter().enumerate() {
            values[s] = spline.value(t);
            derivs[s] = spline.derivative(t);
        }
        Ok(())
    }
}

/// Simpson nodes: every measurement instant plus every panel midpoint.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadratureGrid {
    times: Vec<f64>,
    nodes: Vec<f64>,
}

impl QuadratureGrid {
    pub fn simpson_refined(times: &[f64]) -> Result<Self> {
        if times.len() < 2 {
            return Err(Error::TooFewSamples {
                got: times.len(),
                need: 2,
            });
        }
        for (index, w) in times.windows(2).enumerate() {
            if !(w[1] > w[0]) {
                return Err(Error::NonMonotoneTimes { index: index + 1 });
            }
        }
        let mut nodes = Vec::with_capacity(2 * times.len() - 1);
        for w in times.windows(2) {
            nodes.push(w[0]);
            nodes.push(0.5 * (w[0] + w[1]));
        }
        nodes.push(*times.last().unwrap());
        Ok(Self {
            times: times.to_vec(),
            nodes,
        })
    }

    /// Measurement instants `t_0..t_{n-1}`; node `2k` is `t_k`.
    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn n_panels(&self) -> usize {
        self.times.len() - 1
    }

    /// Cumulative integrals at `t_1..t_{n-1}` of node values (stride 1).
    pub fn cumulate_into(&self, node_values: &[f64], out: &mut [f64]) {
        let mut acc = 0.0;
        for k in 0..self.n_panels() {
            let h = self.times[k + 1] - self.times[k];
            let i = 2 * k;
            acc += h / 6.0 * (node_values[i] + 4.0 * node_values[i + 1] + node_values[i + 2]);
            out[k] = acc;
        }
    }

    pub fn cumulate(&self, node_values: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.n_panels()];
        self.cumulate_into(node_values, &mut out);
        out
    }
}

/// `∫_{t_0}^{t_k}` of a vector-valued integrand at every measurement instant.
/// Row `k` of the result corresponds to `t_k`; row 0 is zero.
pub fn cumulative_quadrature<F>(integrand: F, grid: &QuadratureGrid) -> Result<DMatrix<f64>>
where
    F: Fn(f64) -> Vec<f64>,
{
    let nodes = grid.nodes();
    let values: Vec<Vec<f64>> = nodes.iter().map(|&t| integrand(t)).collect();
    let width = values.first().map_or(0, Vec::len);
    for (node, v) in values.iter().enumerate() {
        if v.len() != width {
            return Err(Error::DimensionMismatch(format!(
                "integrand returned {} components at node {node}, expected {width}",
                v.len()
            )));
        }
        if v.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFiniteIntegrand {
                node,
                t: nodes[node],
            });
        }
    }
    let n_t = grid.times().len();
    let mut out = DMatrix::zeros(n_t, width);
    let mut column = vec![0.0; nodes.len()];
    let mut cum = vec![0.0; n_t - 1];
    for c in 0..width {
        for (dst, v) in column.iter_mut().zip(&values) {
            *dst = v[c];
        }
        grid.cumulate_into(&column, &mut cum);
        for k in 1..n_t {
            out[(k, c)] = cum[k - 1];
        }
    }
    Ok(out)
}
