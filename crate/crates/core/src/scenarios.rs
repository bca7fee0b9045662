//! Built-in scenarios.
//!
//! Two reduced feeders: a 9-DER system with the 69-bus gains and a 5-DER
//! system with the 47-bus gains. Feeder buses are collapsed into a uniform
//! susceptance between every pair of DERs. Disturbances land at `t = 5 s`.

use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use crate::attack::{AttackKind, AttackSpec, Targets};
use crate::control::ScParams;
use crate::engine::{AbstractConfig, McaConfig, RecordOptions, Scenario, ScenarioConfig};
use crate::graph::{CyberGraph, TopologySchedule};
use crate::matrix::SquareMatrix;
use crate::mca::McaParams;
use crate::metrics::{ConvergenceCriteria, ConvergenceMode};
use crate::plant::{BusLoad, DroopParams, ElectricalNetwork, InnerLoopParams, LoadStep, NetworkSwitch};

/// Time of every scripted disturbance, s.
pub const EVENT_T: f64 = 5.0;
/// Injected delay of the latency scenarios, s.
pub const LATENCY_TAU: f64 = 0.05;
/// Per-channel bias of the false-data scenarios.
pub const FDIA_MAGNITUDE: f64 = 0.5;

/// Susceptance between DER pairs, 9-DER system, S.
pub const B_69: f64 = 0.2;
/// Susceptance between DER pairs, 5-DER system, S.
pub const B_47: f64 = 16.0;

/// `(name, description)` of every built-in.
pub const LIST: &[(&str, &str)] = &[
    ("k5-nominal-47", "5 DERs, complete cyber graph, load step, no attack"),
    ("abstract-k5", "pure delayed consensus on K5 (delay bound pi/10)"),
    ("abstract-p2", "pure delayed consensus on two agents (delay bound pi/4)"),
    ("la-69", "9 DERs, 50 ms latency on every link with a load step"),
    ("la-dropout-69", "9 DERs, 50 ms latency and 10% dropout with a load step"),
    ("tsa-69", "9 DERs, every packet carries 50 ms old data under a fresh stamp"),
    ("fdia-balanced-69", "9 DERs, zero-sum false data from two agents"),
    ("fdia-balanced-47", "5 DERs, zero-sum false data from two agents"),
    ("fdia-balanced-la-47", "5 DERs, zero-sum false data plus 50 ms latency"),
    ("fdia-unbalanced-47", "5 DERs, false data from a single agent"),
    ("reconfig-la-69", "9 DERs, electrical reconfiguration N1 to N2 plus 50 ms latency"),
    ("topology-la-47", "5 DERs, cyber graph T1 (complete) to T2 (chain) plus 50 ms latency and a load step"),
];

fn linspace(a: f64, b: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![a];
    }
    (0..n).map(|i| a + (b - a) * i as f64 / (n - 1) as f64).collect()
}

fn loads(n: usize, step: bool) -> Vec<BusLoad> {
    let p = linspace(5e3, 15e3, n);
    let q = linspace(2e3, 4e3, n);
    (0..n)
        .map(|j| {
            let mut l = BusLoad::constant(j, p[j], q[j]);
            if step {
                l.steps.push(LoadStep { t: EVENT_T, p: 1.5 * p[j], q: 1.5 * q[j] });
            }
            l
        })
        .collect()
}

struct Feeder {
    n: usize,
    b: f64,
    sc: ScParams,
    inner: InnerLoopParams,
    graph: CyberGraph,
}

fn feeder_69() -> Feeder {
    Feeder { n: 9, b: B_69, sc: ScParams::FEEDER_69, inner: InnerLoopParams::default(), graph: CyberGraph::ring_with_chords(9) }
}

fn feeder_47() -> Feeder {
    Feeder {
        n: 5,
        b: B_47,
        sc: ScParams::FEEDER_47,
        inner: InnerLoopParams { kp_v: 40.0, ki_v: 80.0, kp_i: 0.1, ki_i: 0.5, omega_c: 31.4 },
        graph: CyberGraph::complete(5),
    }
}

fn plant(name: &str, f: Feeder, load_step: bool, t_end: f64) -> ScenarioConfig {
    let droop = DroopParams::default();
    ScenarioConfig {
        name: name.to_string(),
        dt: 1e-3,
        t_end,
        seed: 1,
        topology: TopologySchedule::fixed(f.graph),
        droop,
        inner: f.inner,
        network: ElectricalNetwork::complete(f.n, f.b, loads(f.n, load_step)),
        sc: vec![f.sc],
        mca: McaConfig { enabled: true, params: McaParams::for_controller(&f.sc, droop.v_nom) },
        attacks: Vec::new(),
        convergence: ConvergenceCriteria { disturbance_t: EVENT_T, ..ConvergenceCriteria::default() },
        record: RecordOptions::default(),
    }
}

fn latency() -> AttackSpec {
    AttackSpec::new(AttackKind::Latency { tau: LATENCY_TAU }, Targets::All, EVENT_T)
}

fn fdia(balanced: bool) -> AttackSpec {
    let a = FDIA_MAGNITUDE;
    let (targets, alpha) = if balanced {
        (vec![0, 1], vec![[a, a, a], [-a, -a, -a]])
    } else {
        (vec![0], vec![[a, a, a]])
    };
    AttackSpec::new(AttackKind::Fdia { alpha, lambda: true }, Targets::Agents(targets), EVENT_T)
}

fn steady_state(mut c: ScenarioConfig) -> ScenarioConfig {
    c.convergence.mode = ConvergenceMode::SteadyState;
    c
}

fn abstract_cfg(name: &str, graph: CyberGraph, t_end: f64) -> AbstractConfig {
    let n = graph.n_agents();
    let initial = (0..n).map(|i| if i % 2 == 0 { 1.0 + i as f64 } else { -(i as f64) }).collect();
    AbstractConfig { name: name.to_string(), graph, tau: 0.0, dt: 1e-3, t_end, initial, tol: 1e-3 }
}

/// Looks a scenario up by name, with or without a `builtin:` prefix.
pub fn builtin(name: &str) -> Option<Scenario> {
    let name = name.strip_prefix("builtin:").unwrap_or(name);
    let s = match name {
        "k5-nominal-47" => {
            let mut c = plant(name, feeder_47(), true, 10.0);
            c.mca.enabled = false;
            Scenario::Plant(c)
        }
        "abstract-k5" => Scenario::Abstract(abstract_cfg(name, CyberGraph::complete(5), 60.0)),
        "abstract-p2" => Scenario::Abstract(abstract_cfg(name, CyberGraph::chain(2), 150.0)),
        "la-69" => {
            let mut c = plant(name, feeder_69(), true, 15.0);
            c.attacks.push(latency());
            Scenario::Plant(c)
        }
        "la-dropout-69" => {
            let mut c = plant(name, feeder_69(), true, 15.0);
            c.attacks.push(latency());
            c.attacks.push(AttackSpec::new(AttackKind::Dropout { p: 0.1 }, Targets::All, EVENT_T));
            Scenario::Plant(c)
        }
        "tsa-69" => {
            let mut c = plant(name, feeder_69(), true, 15.0);
            c.attacks.push(AttackSpec::new(AttackKind::Tsa { n_shift: -5, t_s: 0.01 }, Targets::All, EVENT_T));
            Scenario::Plant(c)
        }
        "fdia-balanced-69" => {
            let mut c = steady_state(plant(name, feeder_69(), false, 15.0));
            c.attacks.push(fdia(true));
            Scenario::Plant(c)
        }
        "fdia-balanced-47" => {
            let mut c = steady_state(plant(name, feeder_47(), false, 15.0));
            c.attacks.push(fdia(true));
            Scenario::Plant(c)
        }
        "fdia-balanced-la-47" => {
            let mut c = steady_state(plant(name, feeder_47(), false, 15.0));
            c.attacks.push(fdia(true));
            c.attacks.push(latency());
            Scenario::Plant(c)
        }
        "fdia-unbalanced-47" => {
            let mut c = steady_state(plant(name, feeder_47(), false, 15.0));
            c.attacks.push(fdia(false));
            Scenario::Plant(c)
        }
        "reconfig-la-69" => {
            let mut c = plant(name, feeder_69(), false, 15.0);
            c.network.switches.push(NetworkSwitch { t: EVENT_T, susceptance: reconfigured(9, B_69) });
            c.attacks.push(latency());
            Scenario::Plant(c)
        }
        "topology-la-47" => {
            let mut c = plant(name, feeder_47(), true, 12.0);
            c.topology = TopologySchedule::new(vec![(0.0, CyberGraph::complete(5)), (EVENT_T, CyberGraph::chain(5))])
                .expect("valid schedule");
            c.attacks.push(latency());
            Scenario::Plant(c)
        }
        _ => return None,
    };
    Some(s)
}

/// N2: the complete coupling with the lines from bus 0 opened except to bus 1.
fn reconfigured(n: usize, b: f64) -> SquareMatrix {
    let mut s = ElectricalNetwork::complete(n, b, Vec::new()).susceptance;
    for m in 2..n {
        s.set(0, m, 0.0);
        s.set(m, 0, 0.0);
    }
    s
}

/// Names of every built-in.
pub fn names() -> Vec<String> {
    LIST.iter().map(|(n, _)| n.to_string()).collect()
}
