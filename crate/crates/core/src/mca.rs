//! Per-agent semantic compensation layer.
//!
//! Each step the layer decimates the local voltage-loop error, compares it
//! with the consensus input, and when the mismatch outgrows a decaying
//! envelope it samples and holds the mismatch. The held value, scaled by
//! per-channel gains, is added to the consensus input.

use alloc::collections::VecDeque;
use alloc::vec;
use alloc::vec::Vec;

use crate::control::{ScParams, Zeta};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum McaError {
    #[error("mca.d_factor must be >= 1")]
    DFactor,
    #[error("mca.window must be >= 1 and match the impulse length ({0})")]
    Window(usize),
    #[error("mca.{0} must be positive and finite")]
    NonPositive(&'static str),
    #[error("mca gains must be finite")]
    Gains,
}

#[derive(Debug, Clone, PartialEq)]
pub struct McaParams {
    /// Downsampling factor `D`.
    pub d_factor: usize,
    /// Window length `W`.
    pub window: usize,
    /// Weights `δ[0..W]`.
    pub impulse: Vec<f64>,
    pub beta: f64,
    /// Envelope time constants for the p and q channels, s.
    pub t_c: [f64; 2],
    pub g1: f64,
    pub g2: f64,
    /// The voltage-loop error is divided by this before use, so the default
    /// (nominal voltage) works in per-unit.
    pub vc_base: f64,
}

impl Default for McaParams {
    fn default() -> Self {
        Self::for_controller(&ScParams::default(), 310.0)
    }
}

impl McaParams {
    /// Defaults with envelope time constants taken from the secondary gains.
    pub fn for_controller(sc: &ScParams, vc_base: f64) -> Self {
        Self {
            d_factor: 10,
            window: 1,
            impulse: vec![1.0],
            beta: 1.5,
            t_c: sc.time_constants(),
            g1: 0.3,
            g2: 0.5,
            vc_base,
        }
    }

    /// Normalized moving average of length `w`.
    pub fn with_average(mut self, w: usize) -> Self {
        self.window = w;
        self.impulse = vec![1.0 / w as f64; w];
        self
    }

    pub fn validate(&self) -> Result<(), McaError> {
        if self.d_factor < 1 {
            return Err(McaError::DFactor);
        }
        if self.window < 1 || self.impulse.len() != self.window {
            return Err(McaError::Window(self.impulse.len()));
        }
        for (name, v) in [("beta", self.beta), ("t_c", self.t_c[0]), ("t_c", self.t_c[1]), ("vc_base", self.vc_base)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(McaError::NonPositive(name));
            }
        }
        if !(self.g1.is_finite() && self.g2.is_finite() && self.impulse.iter().all(|x| x.is_finite())) {
            return Err(McaError::Gains);
        }
        Ok(())
    }
}

/// Ring buffer of voltage-loop error samples with absolute indices.
#[derive(Debug, Clone)]
pub struct VcHistory {
    buf: VecDeque<[f64; 2]>,
    capacity: usize,
    next: u64,
}

impl VcHistory {
    pub fn new(capacity: usize) -> Self {
        Self { buf: VecDeque::with_capacity(capacity.max(1)), capacity: capacity.max(1), next: 0 }
    }

    /// Buffer large enough for `p`'s window at the current decimation phase.
    pub fn for_params(p: &McaParams) -> Self {
        Self::new(p.window + p.d_factor)
    }

    pub fn push(&mut self, sample: [f64; 2]) {
        if self.buf.len() == self.capacity {
            self.buf.pop_front();
        }
        self.buf.push_back(sample);
        self.next += 1;
    }

    /// Number of samples ever pushed.
    pub fn total(&self) -> u64 {
        self.next
    }

    /// Sample `k`, clamped to the earliest and latest retained samples.
    pub fn at(&self, k: i64) -> [f64; 2] {
        if self.buf.is_empty() {
            return [0.0; 2];
        }
        let first = self.next as i64 - self.buf.len() as i64;
        let idx = k.clamp(first, self.next as i64 - 1) - first;
        self.buf[idx as usize]
    }
}

/// `ρ^D[n] = Σ_w h[nD - w] δ[w]` on both axes. Indices before the retained
/// history read the earliest retained sample.
pub fn semantic_downsample(hist: &VcHistory, p: &McaParams, n: u64) -> [f64; 2] {
    let base = (n * p.d_factor as u64) as i64;
    let mut out = [0.0; 2];
    for (w, d) in p.impulse.iter().enumerate().take(p.window) {
        let h = hist.at(base - w as i64);
        out[0] += h[0] * d;
        out[1] += h[1] * d;
    }
    out
}

/// `[ρ^dD - ζ_p, ρ^qD - ζ_q]`.
pub fn prediction_error(rho_d: [f64; 2], zeta: Zeta) -> [f64; 2] {
    [rho_d[0] - zeta.p, rho_d[1] - zeta.q]
}

fn norm2(v: [f64; 2]) -> f64 {
    libm::hypot(v[0], v[1])
}

/// `‖ρ‖ > β ‖[e^{-t/T_p} vc_d, e^{-t/T_q} vc_q]‖`.
pub fn trigger_condition(rho: [f64; 2], vc_now: [f64; 2], beta: f64, t_c: [f64; 2], t_since_ref: f64) -> bool {
    let env = [libm::exp(-t_since_ref / t_c[0]) * vc_now[0], libm::exp(-t_since_ref / t_c[1]) * vc_now[1]];
    norm2(rho) > beta * norm2(env)
}

#[derive(Debug, Clone)]
pub struct McaState {
    pub vc_history: VcHistory,
    pub held_recon: [f64; 2],
    /// Time of the last trigger, s.
    pub last_trigger: f64,
    pub freshness: f64,
    pub relevance: [f64; 2],
    /// Newest packet stamp seen, s.
    pub last_packet_stamp: f64,
    pub trigger_count: u64,
    /// Arrivals stamped in the future.
    pub clock_skew_count: u64,
}

impl McaState {
    pub fn new(p: &McaParams) -> Self {
        Self {
            vc_history: VcHistory::for_params(p),
            held_recon: [0.0; 2],
            last_trigger: 0.0,
            freshness: 0.0,
            relevance: [f64::INFINITY; 2],
            last_packet_stamp: 0.0,
            trigger_count: 0,
            clock_skew_count: 0,
        }
    }
}

/// Sample-and-hold: on a trigger, hold `rho` from `t` on.
pub fn reconstruct(ms: &mut McaState, rho: [f64; 2], triggered: bool, t: f64) -> [f64; 2] {
    if triggered {
        ms.held_recon = rho;
        ms.last_trigger = t;
        ms.trigger_count += 1;
    }
    ms.held_recon
}

/// Updates freshness `t - S` and relevance `ρ - ρ^R`.
pub fn update_semantics(ms: &mut McaState, t: f64, arrival: Option<f64>, rho: [f64; 2], rho_r: [f64; 2]) -> (f64, [f64; 2]) {
    update_freshness(ms, t, arrival);
    ms.relevance = [rho[0] - rho_r[0], rho[1] - rho_r[1]];
    (ms.freshness, ms.relevance)
}

fn update_freshness(ms: &mut McaState, t: f64, arrival: Option<f64>) {
    if let Some(stamp) = arrival {
        if stamp > t {
            ms.clock_skew_count += 1;
            ms.last_packet_stamp = t;
        } else if stamp > ms.last_packet_stamp {
            ms.last_packet_stamp = stamp;
        }
    }
    ms.freshness = (t - ms.last_packet_stamp).max(0.0);
}

/// `(g1 ρ^R_p, g2 ρ^R_q)`.
pub fn feedback(rho_r: [f64; 2], g1: f64, g2: f64) -> [f64; 2] {
    [g1 * rho_r[0], g2 * rho_r[1]]
}

/// `ζ + φ`. A zero term leaves the input untouched, including the sign of zero.
pub fn compensate(zeta: Zeta, phi: [f64; 2]) -> Zeta {
    let add = |z: f64, f: f64| if f == 0.0 { z } else { z + f };
    Zeta::new(add(zeta.p, phi[0]), add(zeta.q, phi[1]))
}

/// Inputs of one layer step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McaInputs {
    pub step: u64,
    pub t: f64,
    /// Raw voltage-loop error, V.
    pub vc_error: [f64; 2],
    pub zeta: Zeta,
    /// Newest stamp among packets delivered this step.
    pub arrival: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McaOutput {
    pub zeta_f: Zeta,
    pub triggered: bool,
    pub rho: [f64; 2],
    pub recon: [f64; 2],
    pub freshness: f64,
    pub relevance: [f64; 2],
}

/// One pass of the layer for one agent.
pub fn mca_step(ms: &mut McaState, p: &McaParams, inp: &McaInputs) -> McaOutput {
    update_freshness(ms, inp.t, inp.arrival);
    let vc = [inp.vc_error[0] / p.vc_base, inp.vc_error[1] / p.vc_base];
    ms.vc_history.push(vc);
    let n = inp.step / p.d_factor as u64;
    let rho_d = semantic_downsample(&ms.vc_history, p, n);
    let rho = prediction_error(rho_d, inp.zeta);
    let triggered = trigger_condition(rho, vc, p.beta, p.t_c, inp.t - ms.last_trigger);
    let recon = reconstruct(ms, rho, triggered, inp.t);
    let zeta_f = compensate(inp.zeta, feedback(recon, p.g1, p.g2));
    ms.relevance = if triggered { [rho[0] - recon[0], rho[1] - recon[1]] } else { [0.0; 2] };
    McaOutput { zeta_f, triggered, rho, recon, freshness: ms.freshness, relevance: ms.relevance }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(len: u64) -> VcHistory {
        let mut h = VcHistory::new(len as usize);
        for k in 0..len {
            h.push([k as f64, -(k as f64)]);
        }
        h
    }

    #[test]
    fn downsample_examples() {
        let h = ramp(50);
        let p = McaParams { d_factor: 1, ..McaParams::default() };
        for n in 0..50 {
            assert_eq!(semantic_downsample(&h, &p, n), h.at(n as i64));
        }
        let mut c = VcHistory::new(40);
        for _ in 0..40 {
            c.push([2.5, -1.0]);
        }
        let avg = McaParams { d_factor: 4, ..McaParams::default() }.with_average(4);
        assert_eq!(semantic_downsample(&c, &avg, 5), [2.5, -1.0]);
        let p = McaParams { d_factor: 4, window: 2, impulse: vec![0.5, 0.5], ..McaParams::default() };
        assert_eq!(semantic_downsample(&h, &p, 3)[0], 11.5);
    }

    #[test]
    fn prediction_error_examples() {
        assert_eq!(prediction_error([1.0, 2.0], Zeta::new(1.0, 2.0)), [0.0, 0.0]);
        let e = prediction_error([1.0, 2.0], Zeta::new(0.4, 0.5));
        assert!((e[0] - 0.6).abs() < 1e-15 && e[1] == 1.5);
    }

    #[test]
    fn trigger_examples() {
        assert!(!trigger_condition([0.0; 2], [1.0, 1.0], 1.5, [0.1, 0.1], 0.0));
        assert!(trigger_condition([1e-9, 0.0], [0.0; 2], 100.0, [0.1, 0.1], 0.0));
        assert!(trigger_condition([0.8, 0.0], [1.0, 0.0], 2.0, [0.5, 0.5], 0.5));
        assert!(!trigger_condition([0.7, 0.0], [1.0, 0.0], 2.0, [0.5, 0.5], 0.5));
    }

    #[test]
    fn hold_semantics() {
        let p = McaParams::default();
        let mut ms = McaState::new(&p);
        assert_eq!(reconstruct(&mut ms, [5.0, 5.0], false, 0.1), [0.0, 0.0]);
        assert_eq!(reconstruct(&mut ms, [1.0, 2.0], true, 0.2), [1.0, 2.0]);
        assert_eq!(reconstruct(&mut ms, [7.0, 7.0], false, 0.3), [1.0, 2.0]);
        assert_eq!(ms.last_trigger, 0.2);
        assert_eq!(ms.trigger_count, 1);
    }

    #[test]
    fn freshness_examples() {
        let p = McaParams::default();
        let mut ms = McaState::new(&p);
        assert_eq!(update_semantics(&mut ms, 1.0, Some(1.0), [0.0; 2], [0.0; 2]).0, 0.0);
        for k in 1..=300 {
            let t = 1.0 + k as f64 * 1e-3;
            let (f, _) = update_semantics(&mut ms, t, None, [0.0; 2], [0.0; 2]);
            assert!((f - k as f64 * 1e-3).abs() < 1e-12);
        }
        let (f, _) = update_semantics(&mut ms, 2.0, Some(2.5), [0.0; 2], [0.0; 2]);
        assert_eq!(f, 0.0);
        assert_eq!(ms.clock_skew_count, 1);
    }

    #[test]
    fn relevance_zero_after_trigger() {
        let p = McaParams::default();
        let mut ms = McaState::new(&p);
        let rho = [0.3, -0.2];
        let r = reconstruct(&mut ms, rho, true, 0.0);
        assert_eq!(update_semantics(&mut ms, 0.0, None, rho, r).1, [0.0, 0.0]);
    }

    #[test]
    fn feedback_and_compensate_examples() {
        assert_eq!(feedback([1.0, 1.0], 0.3, 0.5), [0.3, 0.5]);
        assert_eq!(feedback([1.0, -4.0], 0.0, 0.0), [0.0, -0.0]);
        assert_eq!(feedback([2.0, 4.0], 0.3, 0.5), [0.6, 2.0]);
        let z = Zeta::new(0.1, -0.2);
        assert_eq!(compensate(z, [0.0, 0.0]), z);
        let c = compensate(z, [0.05, 0.1]);
        assert!((c.p - 0.15).abs() < 1e-15 && (c.q + 0.1).abs() < 1e-15);
        let neg = Zeta::new(-0.0, 1.0);
        assert!(compensate(neg, [0.0, 0.0]).p.is_sign_negative());
    }

    #[test]
    fn step_relevance_zero_and_initial_sentinel() {
        let p = McaParams::default();
        let mut ms = McaState::new(&p);
        assert!(ms.relevance[0].is_infinite());
        let out = mca_step(
            &mut ms,
            &p,
            &McaInputs { step: 0, t: 0.0, vc_error: [0.0; 2], zeta: Zeta::new(0.2, 0.0), arrival: Some(0.0) },
        );
        assert!(out.triggered);
        assert_eq!(out.relevance, [0.0, 0.0]);
        assert_eq!(out.recon, [-0.2, 0.0]);
        let out = mca_step(
            &mut ms,
            &p,
            &McaInputs { step: 1, t: 1e-3, vc_error: [310.0, 0.0], zeta: Zeta::new(0.0, 0.0), arrival: None },
        );
        assert!(!out.triggered);
        assert_eq!(out.relevance, [0.0, 0.0]);
        assert_eq!(out.recon, [-0.2, 0.0]);
        assert_eq!(out.freshness, 1e-3);
    }
}
