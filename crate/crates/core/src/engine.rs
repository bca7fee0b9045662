//! Fixed-step orchestration.
//!
//! Per step `k`: deliver due packets, form consensus inputs, run the
//! compensation layer, step the secondary PI loops, form droop references,
//! record the row, advance the plant, then send the new consensus states
//! through the attack pipeline. Every agent reads the step-`k` snapshot, so
//! iteration order inside a step does not matter.

use alloc::collections::VecDeque;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::attack::{delay_steps, transmit, AttackError, AttackKind, AttackSpec, AttackStats, Channel, PsiHistory, Targets};
use crate::control::{consensus_input, frequency_correction, pack_psi, voltage_correction, ControlError, Psi, ScParams, Zeta};
use crate::graph::{laplacian, CyberGraph, GraphError, TopologySchedule};
use crate::mca::{mca_step, McaError, McaInputs, McaParams, McaState};
use crate::metrics::{abstract_report, convergence_report, ConvergenceCriteria, MetricsError};
use crate::plant::{droop_references, integrate_plant, DerState, DroopParams, ElectricalNetwork, InnerLoopParams, PlantError};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SimError {
    #[error("{path}: {msg}")]
    Config { path: String, msg: String },
    #[error("graph: {0}")]
    Graph(#[from] GraphError),
    #[error("plant: {0}")]
    Plant(#[from] PlantError),
    #[error("attack: {0}")]
    Attack(#[from] AttackError),
    #[error("mca: {0}")]
    Mca(#[from] McaError),
    #[error("control: {0}")]
    Control(#[from] ControlError),
    #[error("metrics: {0}")]
    Metrics(#[from] MetricsError),
    #[error("state of agent {agent} became non-finite at step {step}")]
    Diverged { step: u64, agent: usize },
}

impl SimError {
    fn config(path: &str, msg: impl Into<String>) -> Self {
        SimError::Config { path: path.into(), msg: msg.into() }
    }

    /// True for configuration problems, false for runtime divergence.
    pub fn is_validation(&self) -> bool {
        !matches!(self, SimError::Diverged { .. })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct McaConfig {
    pub enabled: bool,
    pub params: McaParams,
}

/// What to keep besides the per-step rows.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct RecordOptions {
    pub packets: bool,
}

/// Full plant scenario.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioConfig {
    pub name: String,
    pub dt: f64,
    pub t_end: f64,
    pub seed: u64,
    pub topology: TopologySchedule,
    pub droop: DroopParams,
    pub inner: InnerLoopParams,
    pub network: ElectricalNetwork,
    /// One entry shared by all agents, or one per agent.
    pub sc: Vec<ScParams>,
    pub mca: McaConfig,
    pub attacks: Vec<AttackSpec>,
    pub convergence: ConvergenceCriteria,
    pub record: RecordOptions,
}

impl ScenarioConfig {
    pub fn n_agents(&self) -> usize {
        self.topology.n_agents()
    }

    pub fn sc_for(&self, j: usize) -> &ScParams {
        if self.sc.len() == 1 {
            &self.sc[0]
        } else {
            &self.sc[j]
        }
    }

    pub fn steps(&self) -> u64 {
        libm::round(self.t_end / self.dt) as u64
    }

    pub fn validate(&self) -> Result<(), SimError> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(SimError::config("dt", "must be positive"));
        }
        if !(self.t_end > self.dt && self.t_end.is_finite()) {
            return Err(SimError::config("t_end", "must exceed dt"));
        }
        let n = self.n_agents();
        if self.network.n() != n {
            return Err(SimError::config(
                "network.susceptance",
                alloc::format!("has {} buses, graph has {n} agents", self.network.n()),
            ));
        }
        if self.sc.len() != 1 && self.sc.len() != n {
            return Err(SimError::config("sc", "give one entry or one per agent"));
        }
        self.droop.validate()?;
        self.inner.validate(self.dt)?;
        self.network.validate()?;
        for s in &self.sc {
            s.validate()?;
        }
        if self.mca.enabled {
            self.mca.params.validate()?;
        }
        for (i, a) in self.attacks.iter().enumerate() {
            a.validate(i, n)?;
        }
        for (i, (_, g)) in self.topology.entries().iter().enumerate() {
            if g.is_directed() {
                return Err(SimError::config(&alloc::format!("graph.schedule[{i}]"), "must be undirected"));
            }
        }
        self.convergence.validate()?;
        Ok(())
    }
}

/// Per-agent columns of one trace row.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct AgentRow {
    pub omega: f64,
    pub p_filt: f64,
    pub q_filt: f64,
    pub mp_p: f64,
    pub nq_q: f64,
    pub v_d: f64,
    pub zeta_p: f64,
    pub zeta_q: f64,
    pub zeta_pf: f64,
    pub zeta_qf: f64,
    pub d_omega: f64,
    pub d_v: f64,
    /// Voltage-loop error fed to the compensation layer, V.
    pub vc_error: [f64; 2],
    pub triggered: bool,
    pub rho: [f64; 2],
    pub recon: [f64; 2],
    pub freshness: f64,
    pub relevance: [f64; 2],
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    pub step: u64,
    pub t: f64,
    pub agents: Vec<AgentRow>,
}

/// One sent packet as it left the attack pipeline.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PacketRecord {
    pub step: u64,
    pub t: f64,
    pub src: usize,
    pub dst: usize,
    pub psi: Psi,
    pub stamp: f64,
    pub dropped: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    pub n_agents: usize,
    pub dt: f64,
    pub omega_nom: f64,
    pub mca_enabled: bool,
    pub rows: Vec<TraceRow>,
    pub packets: Vec<PacketRecord>,
    pub attack_stats: AttackStats,
    pub trigger_counts: Vec<u64>,
    pub clock_skew: u64,
}

impl Trace {
    pub fn trigger_count(&self) -> u64 {
        self.trigger_counts.iter().sum()
    }
}

fn tsa_lookback(cfg: &ScenarioConfig) -> usize {
    cfg.attacks
        .iter()
        .filter_map(|a| match a.kind {
            AttackKind::Tsa { n_shift, t_s } => Some(libm::round(libm::fabs(n_shift as f64 * t_s) / cfg.dt) as usize),
            _ => None,
        })
        .max()
        .unwrap_or(0)
}

/// Runs a plant scenario to completion.
pub fn run_scenario(cfg: &ScenarioConfig) -> Result<Trace, SimError> {
    cfg.validate()?;
    let n = cfg.n_agents();
    let dt = cfg.dt;
    let steps = cfg.steps();
    let dp = cfg.droop;

    let loads0 = cfg.network.loads_at(0.0);
    let mut states: Vec<DerState> = loads0.iter().map(|&(p, q)| DerState::initial(&dp, p, q)).collect();
    let mut d_omega = vec![0.0; n];
    let mut d_v = vec![0.0; n];

    // one channel per directed link that ever exists; chan[dst * n + src]
    let mut chan: Vec<Option<Channel>> = (0..n * n).map(|_| None).collect();
    for (_, g) in cfg.topology.entries() {
        for (dst, src) in g.links() {
            chan[dst * n + src].get_or_insert_with(|| Channel::new(src, dst, cfg.seed));
        }
    }
    let hist_cap = tsa_lookback(cfg) + 2;
    let mut hist: Vec<PsiHistory> = (0..n).map(|_| PsiHistory::new(hist_cap)).collect();
    let mut mca: Vec<McaState> = (0..n).map(|_| McaState::new(&cfg.mca.params)).collect();

    let mut trace = Trace {
        n_agents: n,
        dt,
        omega_nom: dp.omega_nom,
        mca_enabled: cfg.mca.enabled,
        rows: Vec::with_capacity(steps as usize),
        packets: Vec::new(),
        attack_stats: AttackStats::default(),
        trigger_counts: vec![0; n],
        clock_skew: 0,
    };

    let send = |k: u64,
                    g: &CyberGraph,
                    states: &[DerState],
                    hist: &mut [PsiHistory],
                    chan: &mut [Option<Channel>],
                    trace: &mut Trace| {
        let t = k as f64 * dt;
        for (j, s) in states.iter().enumerate() {
            hist[j].push(k, pack_psi(s, s.omega, &dp));
        }
        for (dst, src) in g.links() {
            let ch = chan[dst * n + src].as_mut().expect("channel exists for every link");
            let psi = pack_psi(&states[src], states[src].omega, &dp);
            let pkt = crate::attack::Packet { src, dst, psi, stamp: t, send_step: k };
            let tx = transmit(ch, pkt, &cfg.attacks, &hist[src], dt, &mut trace.attack_stats);
            if cfg.record.packets {
                trace.packets.push(PacketRecord {
                    step: k,
                    t,
                    src,
                    dst,
                    psi: tx.packet.psi,
                    stamp: tx.packet.stamp,
                    dropped: tx.dropped,
                });
            }
        }
    };

    send(0, cfg.topology.graph_at(0.0)?, &states, &mut hist, &mut chan, &mut trace);

    let mut received: Vec<Vec<(usize, Psi)>> = vec![Vec::new(); n];
    let mut arrival: Vec<Option<f64>> = vec![None; n];
    let mut omega_star = vec![0.0; n];
    let mut v_star = vec![[0.0; 2]; n];
    for k in 0..steps {
        let t = k as f64 * dt;
        let g = cfg.topology.graph_at(t)?;

        for j in 0..n {
            received[j].clear();
            arrival[j] = None;
        }
        for (idx, ch) in chan.iter_mut().enumerate() {
            let Some(ch) = ch else { continue };
            if let Some(p) = ch.deliver(k) {
                let (dst, src) = (idx / n, idx % n);
                if g.weight(dst, src) > 0.0 {
                    received[dst].push((src, p.psi));
                    arrival[dst] = Some(arrival[dst].map_or(p.stamp, |a: f64| a.max(p.stamp)));
                }
            }
        }

        let mut agents = Vec::with_capacity(n);
        for j in 0..n {
            let s = &states[j];
            let sc = cfg.sc_for(j);
            let own = pack_psi(s, s.omega, &dp);
            let zeta = consensus_input(own, &received[j], g, j, sc.c)?;
            let mut row = AgentRow {
                omega: s.omega,
                p_filt: s.p_filt,
                q_filt: s.q_filt,
                mp_p: own.mp_p,
                nq_q: own.nq_q,
                v_d: s.v_d,
                vc_error: s.vc_error,
                zeta_p: zeta.p,
                zeta_q: zeta.q,
                ..AgentRow::default()
            };
            let zeta_f = if cfg.mca.enabled {
                let out = mca_step(
                    &mut mca[j],
                    &cfg.mca.params,
                    &McaInputs { step: k, t, vc_error: s.vc_error, zeta, arrival: arrival[j] },
                );
                row.triggered = out.triggered;
                row.rho = out.rho;
                row.recon = out.recon;
                row.freshness = out.freshness;
                row.relevance = out.relevance;
                out.zeta_f
            } else {
                zeta
            };
            let Zeta { p: zpf, q: zqf } = zeta_f;
            let mut integ = s.sc_integrators;
            (d_omega[j], integ[0]) = frequency_correction(zpf, s.omega, dp.omega_nom, sc, dt, integ[0]);
            (d_v[j], integ[1]) = voltage_correction(zqf, sc, dt, integ[1]);
            states[j].sc_integrators = integ;
            (omega_star[j], v_star[j]) = droop_references(&states[j], &dp, d_omega[j], d_v[j]);
            row.zeta_pf = zpf;
            row.zeta_qf = zqf;
            row.d_omega = d_omega[j];
            row.d_v = d_v[j];
            agents.push(row);
        }
        trace.rows.push(TraceRow { step: k, t, agents });

        integrate_plant(&mut states, &omega_star, &v_star, &cfg.network, &dp, &cfg.inner, t, dt);
        if let Some(agent) = states.iter().position(|s| !s.is_finite()) {
            return Err(SimError::Diverged { step: k, agent });
        }

        if k + 1 < steps {
            let g_next = cfg.topology.graph_at((k + 1) as f64 * dt)?;
            send(k + 1, g_next, &states, &mut hist, &mut chan, &mut trace);
        }
    }
    for (j, m) in mca.iter().enumerate() {
        trace.trigger_counts[j] = m.trigger_count;
        trace.clock_skew += m.clock_skew_count;
    }
    Ok(trace)
}

/// Pure delayed consensus `ψ' = -L ψ(t - τ)` on scalar agent states.
#[derive(Debug, Clone, PartialEq)]
pub struct AbstractConfig {
    pub name: String,
    pub graph: CyberGraph,
    pub tau: f64,
    pub dt: f64,
    pub t_end: f64,
    pub initial: Vec<f64>,
    /// Converged when the final disagreement is below this fraction of the initial one.
    pub tol: f64,
}

impl AbstractConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        if !(self.dt > 0.0 && self.t_end > self.dt) {
            return Err(SimError::config("dt", "need 0 < dt < t_end"));
        }
        if !(self.tau >= 0.0 && self.tau.is_finite()) {
            return Err(SimError::config("tau", "must be finite and >= 0"));
        }
        if self.initial.len() != self.graph.n_agents() {
            return Err(SimError::config("initial", "one value per agent"));
        }
        if self.graph.is_directed() {
            return Err(SimError::Graph(GraphError::Directed));
        }
        if !self.graph.is_connected() {
            return Err(SimError::config("graph", "must be connected"));
        }
        if !(self.tol > 0.0 && self.tol < 1.0) {
            return Err(SimError::config("tol", "must lie in (0, 1)"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AbstractTrace {
    pub dt: f64,
    /// `max_j |ψ_j - mean(ψ)|` per step.
    pub disagreement: Vec<f64>,
    /// `Σ_j ψ_j` per step.
    pub sum: Vec<f64>,
    pub final_state: Vec<f64>,
    /// Set when the state overflowed; the trace stops there.
    pub blew_up: bool,
}

/// Integrates the delayed consensus by forward Euler. The history before
/// `t = 0` is held at the initial state.
pub fn abstract_consensus_mode(cfg: &AbstractConfig) -> Result<AbstractTrace, SimError> {
    cfg.validate()?;
    let lv = laplacian(&cfg.graph);
    let n = cfg.initial.len();
    let lag = delay_steps(cfg.tau, cfg.dt) as usize;
    let steps = libm::round(cfg.t_end / cfg.dt) as usize;
    let mut past: VecDeque<Vec<f64>> = VecDeque::with_capacity(lag + 1);
    past.push_back(cfg.initial.clone());
    let mut x = cfg.initial.clone();
    let mut lx = vec![0.0; n];
    let mut out = AbstractTrace {
        dt: cfg.dt,
        disagreement: Vec::with_capacity(steps),
        sum: Vec::with_capacity(steps),
        final_state: Vec::new(),
        blew_up: false,
    };
    for _ in 0..steps {
        let sum: f64 = x.iter().sum();
        let mean = sum / n as f64;
        let dis = x.iter().fold(0.0f64, |a, v| a.max(libm::fabs(v - mean)));
        if !(dis.is_finite() && dis < 1e100) {
            out.blew_up = true;
            break;
        }
        out.disagreement.push(dis);
        out.sum.push(sum);
        let delayed = &past[0];
        lv.laplacian.mul_vec(delayed, &mut lx);
        for i in 0..n {
            x[i] -= cfg.dt * lx[i];
        }
        if past.len() > lag {
            past.pop_front();
        }
        past.push_back(x.clone());
    }
    out.final_state = x;
    Ok(out)
}

/// Either kind of scenario.
#[derive(Debug, Clone, PartialEq)]
pub enum Scenario {
    Plant(ScenarioConfig),
    Abstract(AbstractConfig),
}

impl Scenario {
    pub fn name(&self) -> &str {
        match self {
            Scenario::Plant(c) => &c.name,
            Scenario::Abstract(c) => &c.name,
        }
    }
}

/// Outcome of one delay in a sweep.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepPoint {
    pub tau: f64,
    pub converged: bool,
    pub conv_time: Option<f64>,
}

/// Copy of `cfg` whose latency attacks all use `tau`; adds an all-link
/// latency from `t = 0` when the scenario has none.
pub fn with_latency(cfg: &ScenarioConfig, tau: f64) -> ScenarioConfig {
    let mut c = cfg.clone();
    let mut found = false;
    for a in &mut c.attacks {
        if let AttackKind::Latency { tau: t } = &mut a.kind {
            *t = tau;
            found = true;
        }
    }
    if !found {
        c.attacks.push(AttackSpec::new(AttackKind::Latency { tau }, Targets::All, 0.0));
    }
    c
}

/// Runs and classifies one delay value.
pub fn sweep_point(scenario: &Scenario, tau: f64) -> Result<SweepPoint, SimError> {
    match scenario {
        Scenario::Abstract(cfg) => {
            let mut c = cfg.clone();
            c.tau = tau;
            let tr = abstract_consensus_mode(&c)?;
            let r = abstract_report(&tr, c.tol);
            Ok(SweepPoint { tau, converged: r.converged, conv_time: r.conv_time })
        }
        Scenario::Plant(cfg) => {
            let c = with_latency(cfg, tau);
            match run_scenario(&c) {
                Ok(tr) => {
                    let r = convergence_report(&tr, &c.convergence)?;
                    Ok(SweepPoint { tau, converged: r.converged, conv_time: r.conv_time })
                }
                Err(SimError::Diverged { .. }) => Ok(SweepPoint { tau, converged: false, conv_time: None }),
                Err(e) => Err(e),
            }
        }
    }
}

/// One [`SweepPoint`] per delay, in input order.
pub fn sweep_delay(scenario: &Scenario, taus: &[f64]) -> Result<Vec<SweepPoint>, SimError> {
    taus.iter().map(|&t| sweep_point(scenario, t)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenarios;

    fn k5() -> ScenarioConfig {
        match scenarios::builtin("k5-nominal-47").unwrap() {
            Scenario::Plant(c) => c,
            _ => unreachable!(),
        }
    }

    #[test]
    fn row_count_matches_horizon() {
        let mut c = k5();
        c.t_end = 0.01;
        c.dt = 1e-3;
        let tr = run_scenario(&c).unwrap();
        assert_eq!(tr.rows.len(), 10);
        assert!(tr.rows.iter().enumerate().all(|(k, r)| r.step == k as u64 && r.t == k as f64 * 1e-3));
    }

    #[test]
    fn validation_reports_field() {
        let mut c = k5();
        c.dt = -1.0;
        assert!(matches!(run_scenario(&c), Err(SimError::Config { ref path, .. }) if path == "dt"));
        let mut c = k5();
        c.sc = vec![ScParams::default(); 3];
        assert!(run_scenario(&c).unwrap_err().is_validation());
    }

    #[test]
    fn abstract_zero_delay_conserves_sum() {
        let cfg = AbstractConfig {
            name: "t".into(),
            graph: CyberGraph::complete(5),
            tau: 0.0,
            dt: 1e-3,
            t_end: 5.0,
            initial: vec![1.0, -2.0, 0.5, 3.0, 0.0],
            tol: 1e-3,
        };
        let tr = abstract_consensus_mode(&cfg).unwrap();
        let s0 = tr.sum[0];
        assert!(tr.sum.iter().all(|s| (s - s0).abs() < 1e-9));
        let mean = s0 / 5.0;
        assert!(tr.final_state.iter().all(|x| (x - mean).abs() < 1e-6));
    }
}
