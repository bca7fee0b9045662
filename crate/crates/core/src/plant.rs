//! Reduced-order inverter model and electrical coupling.
//!
//! Frequency follows its droop reference algebraically, the voltage loop is a
//! first-order lag with time constant `kp_v / ki_v`, and DER buses exchange
//! power over a lossless susceptance network. Everything advances by forward
//! Euler at a fixed step.

use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

use crate::matrix::SquareMatrix;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PlantError {
    #[error("filter is unstable: dt * omega_c = {0} must be < 1")]
    UnstableFilter(f64),
    #[error("voltage lag is unstable: dt / T_v = {0} must be < 1")]
    UnstableLag(f64),
    #[error("{field} must be positive and finite, got {value}")]
    NonPositive { field: &'static str, value: f64 },
    #[error("susceptance matrix is not {n}x{n}, symmetric, non-negative with zero diagonal")]
    BadSusceptance { n: usize },
    #[error("electrical network is not connected")]
    Disconnected,
    #[error("load schedule for bus {bus} is out of range or unordered")]
    BadLoad { bus: usize },
}

/// Droop coefficients and nominal operating point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DroopParams {
    /// rad/(W·s)
    pub m_p: f64,
    /// V/VAr
    pub n_q: f64,
    /// rad/s
    pub omega_nom: f64,
    /// V
    pub v_nom: f64,
}

impl Default for DroopParams {
    fn default() -> Self {
        Self { m_p: 9.4e-5, n_q: 1.3e-3, omega_nom: 2.0 * PI * 60.0, v_nom: 310.0 }
    }
}

impl DroopParams {
    pub fn validate(&self) -> Result<(), PlantError> {
        positive("droop.m_p", self.m_p)?;
        positive("droop.n_q", self.n_q)?;
        positive("droop.omega_nom", self.omega_nom)?;
        positive("droop.v_nom", self.v_nom)
    }
}

pub(crate) fn positive(field: &'static str, value: f64) -> Result<(), PlantError> {
    if value > 0.0 && value.is_finite() {
        Ok(())
    } else {
        Err(PlantError::NonPositive { field, value })
    }
}

/// Inner loop gains. The current-loop gains are carried for completeness; the
/// surrogate absorbs the current loop.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InnerLoopParams {
    pub kp_v: f64,
    pub ki_v: f64,
    pub kp_i: f64,
    pub ki_i: f64,
    /// Power measurement low-pass cutoff, rad/s.
    pub omega_c: f64,
}

impl Default for InnerLoopParams {
    fn default() -> Self {
        Self { kp_v: 50.0, ki_v: 100.0, kp_i: 0.2, ki_i: 1.0, omega_c: 31.4 }
    }
}

impl InnerLoopParams {
    /// Voltage loop time constant.
    pub fn t_v(&self) -> f64 {
        self.kp_v / self.ki_v
    }

    pub fn validate(&self, dt: f64) -> Result<(), PlantError> {
        positive("inner.kp_v", self.kp_v)?;
        positive("inner.ki_v", self.ki_v)?;
        positive("inner.kp_i", self.kp_i)?;
        positive("inner.ki_i", self.ki_i)?;
        positive("inner.omega_c", self.omega_c)?;
        if dt * self.omega_c >= 1.0 {
            return Err(PlantError::UnstableFilter(dt * self.omega_c));
        }
        if dt / self.t_v() >= 1.0 {
            return Err(PlantError::UnstableLag(dt / self.t_v()));
        }
        Ok(())
    }
}

/// Per-agent physical and controller state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DerState {
    /// Angle relative to the nominal rotating frame, rad.
    pub theta: f64,
    /// Bus frequency, rad/s.
    pub omega: f64,
    pub v_d: f64,
    pub v_q: f64,
    pub p_filt: f64,
    pub q_filt: f64,
    /// Voltage loop tracking error `v* - v`, V.
    pub vc_error: [f64; 2],
    /// Secondary PI integrators `[frequency, voltage]`.
    pub sc_integrators: [f64; 2],
}

impl DerState {
    /// Flat start at nominal voltage with the filters preloaded to `(p, q)`.
    pub fn initial(dp: &DroopParams, p: f64, q: f64) -> Self {
        Self {
            theta: 0.0,
            omega: dp.omega_nom - dp.m_p * p,
            v_d: dp.v_nom,
            v_q: 0.0,
            p_filt: p,
            q_filt: q,
            vc_error: [0.0; 2],
            sc_integrators: [0.0; 2],
        }
    }

    pub fn is_finite(&self) -> bool {
        [self.theta, self.omega, self.v_d, self.v_q, self.p_filt, self.q_filt]
            .iter()
            .chain(&self.vc_error)
            .chain(&self.sc_integrators)
            .all(|v| v.is_finite())
    }
}

/// `ω* = ω_nom - m_p P + δω`, `v* = [v_nom - n_q Q + δV, 0]`.
pub fn droop_references(s: &DerState, dp: &DroopParams, d_omega: f64, d_v: f64) -> (f64, [f64; 2]) {
    let omega_star = dp.omega_nom - dp.m_p * s.p_filt + d_omega;
    let v_d_star = dp.v_nom - dp.n_q * s.q_filt + d_v;
    (omega_star, [v_d_star, 0.0])
}

/// One step of the voltage lag. Returns the new `[v_d, v_q]` and the error
/// before relaxation.
pub fn vc_loop_step(s: &DerState, v_star: [f64; 2], ilp: &InnerLoopParams, dt: f64) -> ([f64; 2], [f64; 2]) {
    let err = [v_star[0] - s.v_d, v_star[1] - s.v_q];
    let k = dt / ilp.t_v();
    ([s.v_d + k * err[0], s.v_q + k * err[1]], err)
}

/// Bus load with absolute step changes.
#[derive(Debug, Clone, PartialEq)]
pub struct BusLoad {
    pub bus: usize,
    pub p: f64,
    pub q: f64,
    /// `(t, p, q)`: from `t` on the load is `(p, q)`.
    pub steps: Vec<LoadStep>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LoadStep {
    pub t: f64,
    pub p: f64,
    pub q: f64,
}

impl BusLoad {
    pub fn constant(bus: usize, p: f64, q: f64) -> Self {
        Self { bus, p, q, steps: Vec::new() }
    }

    pub fn at(&self, t: f64) -> (f64, f64) {
        self.steps
            .iter()
            .rev()
            .find(|s| s.t <= t)
            .map_or((self.p, self.q), |s| (s.p, s.q))
    }
}

/// Susceptance switch of the electrical network at time `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkSwitch {
    pub t: f64,
    pub susceptance: SquareMatrix,
}

/// Lossless coupling among DER buses plus bus loads.
#[derive(Debug, Clone, PartialEq)]
pub struct ElectricalNetwork {
    /// Susceptance, S.
    pub susceptance: SquareMatrix,
    pub loads: Vec<BusLoad>,
    /// Reconfigurations, applied from their time on.
    pub switches: Vec<NetworkSwitch>,
}

impl ElectricalNetwork {
    /// Uniform susceptance `b` between every pair of buses.
    pub fn complete(n: usize, b: f64, loads: Vec<BusLoad>) -> Self {
        let mut s = SquareMatrix::zeros(n);
        for j in 0..n {
            for m in 0..n {
                if j != m {
                    s.set(j, m, b);
                }
            }
        }
        Self { susceptance: s, loads, switches: Vec::new() }
    }

    pub fn n(&self) -> usize {
        self.susceptance.n()
    }

    /// Susceptance active at `t`.
    pub fn susceptance_at(&self, t: f64) -> &SquareMatrix {
        self.switches
            .iter()
            .rev()
            .find(|s| s.t <= t)
            .map_or(&self.susceptance, |s| &s.susceptance)
    }

    /// Per-bus `(P_load, Q_load)` at `t`.
    pub fn loads_at(&self, t: f64) -> Vec<(f64, f64)> {
        let mut out = vec![(0.0, 0.0); self.n()];
        for l in &self.loads {
            let (p, q) = l.at(t);
            out[l.bus].0 += p;
            out[l.bus].1 += q;
        }
        out
    }

    pub fn validate(&self) -> Result<(), PlantError> {
        let n = self.n();
        for b in core::iter::once(&self.susceptance).chain(self.switches.iter().map(|s| &s.susceptance)) {
            if b.n() != n || !valid_susceptance(b) {
                return Err(PlantError::BadSusceptance { n });
            }
            if !connected(b) {
                return Err(PlantError::Disconnected);
            }
        }
        if self.switches.windows(2).any(|w| !(w[1].t > w[0].t)) {
            return Err(PlantError::BadSusceptance { n });
        }
        for l in &self.loads {
            if l.bus >= n || l.steps.windows(2).any(|w| !(w[1].t > w[0].t)) {
                return Err(PlantError::BadLoad { bus: l.bus });
            }
        }
        Ok(())
    }
}

fn valid_susceptance(b: &SquareMatrix) -> bool {
    let n = b.n();
    (0..n).all(|j| {
        b.get(j, j) == 0.0
            && (0..n).all(|m| {
                let v = b.get(j, m);
                v >= 0.0 && v.is_finite() && v == b.get(m, j)
            })
    })
}

fn connected(b: &SquareMatrix) -> bool {
    let n = b.n();
    let mut seen = vec![false; n];
    let mut stack = vec![0usize];
    seen[0] = true;
    while let Some(j) = stack.pop() {
        for m in 0..n {
            if !seen[m] && b.get(j, m) > 0.0 {
                seen[m] = true;
                stack.push(m);
            }
        }
    }
    seen.into_iter().all(|s| s)
}

/// Injected `(P, Q)` of every DER: network exchange plus the local load.
pub fn network_powers(states: &[DerState], net: &ElectricalNetwork, t: f64) -> Vec<(f64, f64)> {
    let b = net.susceptance_at(t);
    let loads = net.loads_at(t);
    states
        .iter()
        .enumerate()
        .map(|(j, sj)| {
            let mut p = 0.0;
            let mut q = 0.0;
            for (m, sm) in states.iter().enumerate() {
                let bjm = b.get(j, m);
                if bjm == 0.0 {
                    continue;
                }
                let d = sj.theta - sm.theta;
                p += bjm * sj.v_d * sm.v_d * libm::sin(d);
                q += bjm * (sj.v_d - sm.v_d * libm::cos(d));
            }
            (p + loads[j].0, sj.v_d * q + loads[j].1)
        })
        .collect()
}

/// First-order measurement filter step.
pub fn measure_filter(raw: f64, filt_prev: f64, omega_c: f64, dt: f64) -> Result<f64, PlantError> {
    if dt * omega_c >= 1.0 {
        return Err(PlantError::UnstableFilter(dt * omega_c));
    }
    Ok(filter_step(raw, filt_prev, omega_c * dt))
}

#[inline]
pub(crate) fn filter_step(raw: f64, prev: f64, k: f64) -> f64 {
    prev + k * (raw - prev)
}

/// Advances every DER one step from the frequency and voltage references.
///
/// Powers are evaluated at the incoming state. Returns them.
pub fn integrate_plant(
    states: &mut [DerState],
    omega_stars: &[f64],
    v_stars: &[[f64; 2]],
    net: &ElectricalNetwork,
    dp: &DroopParams,
    ilp: &InnerLoopParams,
    t: f64,
    dt: f64,
) -> Vec<(f64, f64)> {
    let powers = network_powers(states, net, t);
    let k = ilp.omega_c * dt;
    for (j, s) in states.iter_mut().enumerate() {
        s.omega = omega_stars[j];
        s.theta += dt * (s.omega - dp.omega_nom);
        s.p_filt = filter_step(powers[j].0, s.p_filt, k);
        s.q_filt = filter_step(powers[j].1, s.q_filt, k);
        let (v, err) = vc_loop_step(s, v_stars[j], ilp, dt);
        s.v_d = v[0];
        s.v_q = v[1];
        s.vc_error = err;
    }
    powers
}
