//! Distributed secondary control: consensus input and PI corrections.

use crate::graph::CyberGraph;
use crate::plant::{DerState, DroopParams};

/// Consensus state exchanged between neighbors.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Psi {
    /// rad/s
    pub omega: f64,
    /// `m_p · P`, rad/s
    pub mp_p: f64,
    /// `n_q · Q`, V
    pub nq_q: f64,
}

impl Psi {
    pub fn new(omega: f64, mp_p: f64, nq_q: f64) -> Self {
        Self { omega, mp_p, nq_q }
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.omega, self.mp_p, self.nq_q]
    }

    pub fn from_array(a: [f64; 3]) -> Self {
        Self::new(a[0], a[1], a[2])
    }

    pub fn is_finite(&self) -> bool {
        self.omega.is_finite() && self.mp_p.is_finite() && self.nq_q.is_finite()
    }
}

impl core::ops::Add for Psi {
    type Output = Psi;
    fn add(self, o: Psi) -> Psi {
        Psi::new(self.omega + o.omega, self.mp_p + o.mp_p, self.nq_q + o.nq_q)
    }
}

impl core::ops::Sub for Psi {
    type Output = Psi;
    fn sub(self, o: Psi) -> Psi {
        Psi::new(self.omega - o.omega, self.mp_p - o.mp_p, self.nq_q - o.nq_q)
    }
}

/// Consensus control input `[ζ_p, ζ_q]`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Zeta {
    pub p: f64,
    pub q: f64,
}

impl Zeta {
    pub fn new(p: f64, q: f64) -> Self {
        Self { p, q }
    }
}

/// Secondary controller gains.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScParams {
    /// Convergence parameter.
    pub c: f64,
    pub kp_omega: f64,
    pub ki_omega: f64,
    pub kp_v: f64,
    pub ki_v: f64,
}

impl ScParams {
    /// 69-bus gains.
    pub const FEEDER_69: ScParams = ScParams { c: 1.0, kp_omega: 0.1, ki_omega: 100.0, kp_v: 0.1, ki_v: 10.0 };
    /// 47-bus gains.
    pub const FEEDER_47: ScParams = ScParams { c: 1.0, kp_omega: 0.1, ki_omega: 10.0, kp_v: 0.1, ki_v: 1.5 };

    /// Controller time constants `kp / ki` of the frequency and voltage loops.
    pub fn time_constants(&self) -> [f64; 2] {
        [self.kp_omega / self.ki_omega, self.kp_v / self.ki_v]
    }

    pub fn validate(&self) -> Result<(), ControlError> {
        let ok = self.c > 0.0
            && self.kp_omega >= 0.0
            && self.kp_v >= 0.0
            && self.ki_omega >= 0.0
            && self.ki_v >= 0.0
            && [self.c, self.kp_omega, self.ki_omega, self.kp_v, self.ki_v].iter().all(|v| v.is_finite());
        if ok {
            Ok(())
        } else {
            Err(ControlError::BadGains)
        }
    }
}

impl Default for ScParams {
    fn default() -> Self {
        Self::FEEDER_69
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ControlError {
    #[error("agent {j} received data from {m}, which is not a neighbor")]
    NotNeighbor { j: usize, m: usize },
    #[error("agent {j} received two entries from {m}")]
    Duplicate { j: usize, m: usize },
    #[error("secondary gains must be finite, c > 0 and gains >= 0")]
    BadGains,
}

/// `[ω_j, m_p P_j, n_q Q_j]` from the filtered powers.
pub fn pack_psi(s: &DerState, omega_j: f64, dp: &DroopParams) -> Psi {
    Psi::new(omega_j, dp.m_p * s.p_filt, dp.n_q * s.q_filt)
}

/// Weighted neighbor disagreement seen by agent `j`.
///
/// Neighbors absent from `received` contribute nothing.
pub fn consensus_input(
    own: Psi,
    received: &[(usize, Psi)],
    g: &CyberGraph,
    j: usize,
    c: f64,
) -> Result<Zeta, ControlError> {
    let mut zp = 0.0;
    let mut zq = 0.0;
    for (i, &(m, psi)) in received.iter().enumerate() {
        let e = g.weight(j, m);
        if e <= 0.0 || m == j {
            return Err(ControlError::NotNeighbor { j, m });
        }
        if received[..i].iter().any(|&(k, _)| k == m) {
            return Err(ControlError::Duplicate { j, m });
        }
        zp += e * ((psi.omega - own.omega) + (psi.mp_p - own.mp_p));
        zq += e * (psi.nq_q - own.nq_q);
    }
    Ok(Zeta::new(c * zp, c * zq))
}

/// Frequency PI on `u = (ω_nom - ω_j) + ζ_p`. Returns `(δω, integrator)`.
pub fn frequency_correction(zeta_p: f64, omega_j: f64, omega_nom: f64, params: &ScParams, dt: f64, integ: f64) -> (f64, f64) {
    pi_step(omega_nom - omega_j + zeta_p, params.kp_omega, params.ki_omega, dt, integ)
}

/// Voltage PI on `u = ζ_q`. Returns `(δV, integrator)`.
pub fn voltage_correction(zeta_q: f64, params: &ScParams, dt: f64, integ: f64) -> (f64, f64) {
    pi_step(zeta_q, params.kp_v, params.ki_v, dt, integ)
}

#[inline]
fn pi_step(u: f64, kp: f64, ki: f64, dt: f64, integ: f64) -> (f64, f64) {
    let integ = integ + ki * u * dt;
    (kp * u + integ, integ)
}
