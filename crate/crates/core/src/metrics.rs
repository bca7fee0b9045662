//! Convergence classification and trace post-processing.

use alloc::vec::Vec;

use crate::engine::{AbstractTrace, Trace};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MetricsError {
    #[error("trace ends at {end} s, before disturbance + dwell = {needed} s")]
    TooShort { end: f64, needed: f64 },
    #[error("convergence tolerances must be positive and finite")]
    BadTolerance,
}

/// Which condition must hold for a row to count as settled.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConvergenceMode {
    /// Frequency restored and both power-sharing spreads within tolerance.
    Objectives,
    /// Every per-step rate (frequency, shared powers, both corrections) within
    /// `tol_rate`. Used where attacks move the equilibrium rather than remove it.
    SteadyState,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConvergenceCriteria {
    /// Disturbance (load step or attack onset), s.
    pub disturbance_t: f64,
    /// rad/s
    pub tol_freq: f64,
    /// Fraction of the mean.
    pub tol_share: f64,
    /// s
    pub dwell: f64,
    pub mode: ConvergenceMode,
    /// Per second, for [`ConvergenceMode::SteadyState`].
    pub tol_rate: f64,
}

impl Default for ConvergenceCriteria {
    fn default() -> Self {
        Self {
            disturbance_t: 5.0,
            tol_freq: 1e-3,
            tol_share: 0.01,
            dwell: 0.5,
            mode: ConvergenceMode::Objectives,
            tol_rate: 1e-3,
        }
    }
}

impl ConvergenceCriteria {
    pub fn validate(&self) -> Result<(), MetricsError> {
        let ok = [self.tol_freq, self.tol_share, self.dwell, self.tol_rate].iter().all(|v| *v > 0.0 && v.is_finite())
            && self.disturbance_t.is_finite();
        if ok {
            Ok(())
        } else {
            Err(MetricsError::BadTolerance)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConvergenceReport {
    pub converged: bool,
    /// Settling time after the disturbance, when converged.
    pub conv_time: Option<f64>,
    pub freq_error_final: f64,
    pub p_share_spread_final: f64,
    pub q_share_spread_final: f64,
    /// Largest per-step rate on the last row, per second.
    pub rate_final: f64,
}

/// Objective quantities of one row.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct RowMetrics {
    pub t: f64,
    pub freq_error: f64,
    pub p_spread: f64,
    pub q_spread: f64,
    pub rate: f64,
}

fn spread(v: impl Iterator<Item = f64> + Clone) -> f64 {
    let (lo, hi, sum, n) = v.fold((f64::INFINITY, f64::NEG_INFINITY, 0.0, 0usize), |(lo, hi, s, n), x| {
        (lo.min(x), hi.max(x), s + x, n + 1)
    });
    let mean = sum / n as f64;
    let d = hi - lo;
    if d == 0.0 {
        0.0
    } else {
        d / libm::fabs(mean)
    }
}

/// Per-row frequency error, sharing spreads and rates.
pub fn row_metrics(trace: &Trace) -> Vec<RowMetrics> {
    let mut out = Vec::with_capacity(trace.rows.len());
    for (k, r) in trace.rows.iter().enumerate() {
        let freq_error = r.agents.iter().fold(0.0f64, |a, x| a.max(libm::fabs(x.omega - trace.omega_nom)));
        let p_spread = spread(r.agents.iter().map(|a| a.mp_p));
        let q_spread = spread(r.agents.iter().map(|a| a.nq_q));
        let rate = if k == 0 {
            f64::INFINITY
        } else {
            let prev = &trace.rows[k - 1];
            r.agents
                .iter()
                .zip(&prev.agents)
                .map(|(a, b)| {
                    [a.omega - b.omega, a.mp_p - b.mp_p, a.nq_q - b.nq_q, a.d_omega - b.d_omega, a.d_v - b.d_v]
                        .iter()
                        .fold(0.0f64, |m, d| m.max(libm::fabs(*d)))
                })
                .fold(0.0f64, f64::max)
                / trace.dt
        };
        out.push(RowMetrics { t: r.t, freq_error, p_spread, q_spread, rate });
    }
    out
}

/// Settled means the criteria hold on every row from `t*` to the end of the
/// trace, and that run lasts at least the dwell time. `conv_time = t* - t_d`.
pub fn convergence_report(trace: &Trace, c: &ConvergenceCriteria) -> Result<ConvergenceReport, MetricsError> {
    c.validate()?;
    let dt = trace.dt;
    let end = trace.rows.last().map_or(0.0, |r| r.t + dt);
    if end < c.disturbance_t + c.dwell {
        return Err(MetricsError::TooShort { end, needed: c.disturbance_t + c.dwell });
    }
    let m = row_metrics(trace);
    let ok = |r: &RowMetrics| match c.mode {
        ConvergenceMode::Objectives => r.freq_error <= c.tol_freq && r.p_spread <= c.tol_share && r.q_spread <= c.tol_share,
        ConvergenceMode::SteadyState => r.rate <= c.tol_rate,
    };
    let k0 = m.iter().position(|r| r.t >= c.disturbance_t).unwrap_or(m.len());
    let mut k = m.len();
    while k > k0 && ok(&m[k - 1]) {
        k -= 1;
    }
    let run = (m.len() - k) as f64 * dt;
    let converged = k < m.len() && run + 0.5 * dt >= c.dwell;
    let last = m.last().copied().unwrap_or_default();
    Ok(ConvergenceReport {
        converged,
        conv_time: converged.then(|| (m[k].t - c.disturbance_t).max(0.0)),
        freq_error_final: last.freq_error,
        p_share_spread_final: last.p_spread,
        q_share_spread_final: last.q_spread,
        rate_final: last.rate,
    })
}

/// Classification of a delayed-consensus run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AbstractReport {
    pub converged: bool,
    pub conv_time: Option<f64>,
    /// Final over initial disagreement.
    pub decay: f64,
}

/// Converged when the disagreement falls below `tol` times its initial value
/// and stays there to the end of the run.
pub fn abstract_report(tr: &AbstractTrace, tol: f64) -> AbstractReport {
    let d0 = tr.disagreement.first().copied().unwrap_or(0.0);
    let last = tr.disagreement.last().copied().unwrap_or(f64::INFINITY);
    if tr.blew_up || d0 == 0.0 {
        return AbstractReport { converged: !tr.blew_up, conv_time: (!tr.blew_up).then_some(0.0), decay: if tr.blew_up { f64::INFINITY } else { 0.0 } };
    }
    let thr = tol * d0;
    let mut k = tr.disagreement.len();
    while k > 0 && tr.disagreement[k - 1] <= thr {
        k -= 1;
    }
    let converged = k < tr.disagreement.len();
    AbstractReport { converged, conv_time: converged.then_some(k as f64 * tr.dt), decay: last / d0 }
}

/// `(m_p P, n_q Q)` of `agent` every `stride` rows.
pub fn phase_portrait(trace: &Trace, agent: usize, stride: usize) -> Vec<(f64, f64)> {
    let stride = stride.max(1);
    trace
        .rows
        .iter()
        .step_by(stride)
        .map(|r| (r.agents[agent].mp_p, r.agents[agent].nq_q))
        .collect()
}
