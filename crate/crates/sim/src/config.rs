//! TOML scenario files.
//!
//! A file either describes a scenario from scratch or starts from a built-in
//! with `base = "builtin:NAME"` and overrides parts of it. Every table is
//! optional when a base is given.
//!
//! ```toml
//! name = "my-run"
//! base = "builtin:la-69"
//! t_end = 12.0
//!
//! [mca]
//! beta = 2.0
//!
//! [[attack]]
//! kind = "dropout"
//! p = 0.2
//! start = 5.0
//! ```

use std::path::Path;

use dersec_core::attack::{AttackKind, AttackSpec, Targets};
use dersec_core::control::ScParams;
use dersec_core::engine::{AbstractConfig, McaConfig, RecordOptions, Scenario, ScenarioConfig};
use dersec_core::graph::{CyberGraph, TopologySchedule};
use dersec_core::matrix::SquareMatrix;
use dersec_core::mca::McaParams;
use dersec_core::metrics::{ConvergenceCriteria, ConvergenceMode};
use dersec_core::plant::{BusLoad, DroopParams, ElectricalNetwork, InnerLoopParams, LoadStep, NetworkSwitch};
use dersec_core::scenarios;
use serde::Deserialize;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{path}: {source}")]
    Parse { path: String, source: toml::de::Error },
    #[error("{field}: {msg}")]
    Invalid { field: String, msg: String },
}

fn invalid(field: impl Into<String>, msg: impl Into<String>) -> ConfigError {
    ConfigError::Invalid { field: field.into(), msg: msg.into() }
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    pub name: Option<String>,
    pub base: Option<String>,
    /// `"plant"` (default) or `"abstract"`.
    pub mode: Option<String>,
    pub dt: Option<f64>,
    pub t_end: Option<f64>,
    pub seed: Option<u64>,
    pub graph: Option<GraphFile>,
    pub droop: Option<DroopFile>,
    pub inner: Option<InnerFile>,
    pub network: Option<NetworkFile>,
    pub loads: Option<Vec<LoadFile>>,
    pub sc: Option<ScFile>,
    pub mca: Option<McaFile>,
    #[serde(rename = "attack")]
    pub attacks: Option<Vec<AttackFile>>,
    pub convergence: Option<ConvergenceFile>,
    pub record: Option<RecordFile>,
    /// Abstract mode only.
    pub tau: Option<f64>,
    pub initial: Option<Vec<f64>>,
    pub tol: Option<f64>,
}

/// Graphs are given by `kind` (`complete`, `chain`, `ring`) or explicit
/// `edges` as `[a, b, weight]` triples.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GraphFile {
    pub n: Option<usize>,
    pub kind: Option<String>,
    pub edges: Option<Vec<(usize, usize, f64)>>,
    /// Later graphs, each active from its `t`.
    pub schedule: Option<Vec<ScheduledGraph>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduledGraph {
    pub t: f64,
    pub kind: Option<String>,
    pub edges: Option<Vec<(usize, usize, f64)>>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DroopFile {
    pub m_p: Option<f64>,
    pub n_q: Option<f64>,
    pub omega_nom: Option<f64>,
    pub v_nom: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InnerFile {
    pub kp_v: Option<f64>,
    pub ki_v: Option<f64>,
    pub kp_i: Option<f64>,
    pub ki_i: Option<f64>,
    pub omega_c: Option<f64>,
}

/// Couplings are a uniform susceptance `b` between all buses or a full
/// `matrix`, with the lines in `open` removed. A switch without `b` or
/// `matrix` opens lines of the initial coupling.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkFile {
    pub b: Option<f64>,
    pub matrix: Option<Vec<Vec<f64>>>,
    pub open: Option<Vec<(usize, usize)>>,
    #[serde(rename = "switch")]
    pub switches: Option<Vec<SwitchFile>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SwitchFile {
    pub t: f64,
    pub b: Option<f64>,
    pub matrix: Option<Vec<Vec<f64>>>,
    pub open: Option<Vec<(usize, usize)>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LoadFile {
    pub bus: usize,
    pub p: f64,
    pub q: f64,
    /// `[t, p, q]` absolute values from `t` on.
    #[serde(default)]
    pub steps: Vec<(f64, f64, f64)>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScFile {
    /// `"feeder-69"` or `"feeder-47"`.
    pub preset: Option<String>,
    pub c: Option<f64>,
    pub kp_omega: Option<f64>,
    pub ki_omega: Option<f64>,
    pub kp_v: Option<f64>,
    pub ki_v: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct McaFile {
    pub enabled: Option<bool>,
    pub d_factor: Option<usize>,
    pub window: Option<usize>,
    pub impulse: Option<Vec<f64>>,
    pub beta: Option<f64>,
    pub g1: Option<f64>,
    pub g2: Option<f64>,
    pub t_c: Option<[f64; 2]>,
    pub vc_base: Option<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttackFile {
    pub kind: String,
    #[serde(default)]
    pub start: f64,
    pub stop: Option<f64>,
    /// Source agents; absent means every link unless `edges` is set.
    pub agents: Option<Vec<usize>>,
    /// Directed links `[src, dst]`.
    pub edges: Option<Vec<(usize, usize)>>,
    pub tau: Option<f64>,
    pub p: Option<f64>,
    pub n_shift: Option<i64>,
    pub t_s: Option<f64>,
    pub alpha: Option<Vec<[f64; 3]>>,
    pub lambda: Option<bool>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConvergenceFile {
    pub disturbance_t: Option<f64>,
    pub tol_freq: Option<f64>,
    pub tol_share: Option<f64>,
    pub dwell: Option<f64>,
    /// `"objectives"` or `"steady-state"`.
    pub mode: Option<String>,
    pub tol_rate: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RecordFile {
    pub packets: Option<bool>,
}

/// Reads a scenario from a file path or a `builtin:NAME` reference.
pub fn load(source: &str) -> Result<Scenario, ConfigError> {
    if let Some(name) = source.strip_prefix("builtin:") {
        return builtin(name);
    }
    let text = std::fs::read_to_string(Path::new(source))
        .map_err(|e| ConfigError::Io { path: source.to_string(), source: e })?;
    parse(&text).map_err(|e| match e {
        ConfigError::Parse { source: s, .. } => ConfigError::Parse { path: source.to_string(), source: s },
        other => other,
    })
}

fn builtin(name: &str) -> Result<Scenario, ConfigError> {
    scenarios::builtin(name).ok_or_else(|| invalid("base", format!("unknown built-in scenario {name:?}")))
}

pub fn parse(text: &str) -> Result<Scenario, ConfigError> {
    let file: ScenarioFile = toml::from_str(text).map_err(|e| ConfigError::Parse { path: "<input>".into(), source: e })?;
    build(file)
}

pub fn build(f: ScenarioFile) -> Result<Scenario, ConfigError> {
    let base = match &f.base {
        Some(b) => Some(builtin(b.strip_prefix("builtin:").unwrap_or(b))?),
        None => None,
    };
    let mode = match (f.mode.as_deref(), &base) {
        (Some(m), _) => m.to_string(),
        (None, Some(Scenario::Abstract(_))) => "abstract".into(),
        (None, _) => "plant".into(),
    };
    match (mode.as_str(), base) {
        ("plant", Some(Scenario::Plant(c))) => build_plant(f, Some(c)).map(Scenario::Plant),
        ("plant", None) => build_plant(f, None).map(Scenario::Plant),
        ("abstract", Some(Scenario::Abstract(c))) => build_abstract(f, Some(c)).map(Scenario::Abstract),
        ("abstract", None) => build_abstract(f, None).map(Scenario::Abstract),
        ("plant" | "abstract", Some(_)) => Err(invalid("mode", "does not match the base scenario")),
        (other, _) => Err(invalid("mode", format!("expected \"plant\" or \"abstract\", got {other:?}"))),
    }
}

fn graph_from(n: usize, kind: &Option<String>, edges: &Option<Vec<(usize, usize, f64)>>, field: &str) -> Result<CyberGraph, ConfigError> {
    match (kind.as_deref(), edges) {
        (Some(_), Some(_)) => Err(invalid(field, "give either kind or edges")),
        (Some("complete"), None) => Ok(CyberGraph::complete(n)),
        (Some("chain"), None) => Ok(CyberGraph::chain(n)),
        (Some("ring"), None) => Ok(CyberGraph::ring_with_chords(n)),
        (Some(k), None) => Err(invalid(field, format!("unknown graph kind {k:?}"))),
        (None, Some(e)) => CyberGraph::undirected(n, e).map_err(|e| invalid(field, e.to_string())),
        (None, None) => Err(invalid(field, "needs kind or edges")),
    }
}

fn schedule_from(g: &GraphFile, fallback_n: Option<usize>) -> Result<TopologySchedule, ConfigError> {
    let n = g.n.or(fallback_n).ok_or_else(|| invalid("graph.n", "missing"))?;
    let mut entries = vec![(0.0, graph_from(n, &g.kind, &g.edges, "graph")?)];
    for (i, s) in g.schedule.iter().flatten().enumerate() {
        entries.push((s.t, graph_from(n, &s.kind, &s.edges, &format!("graph.schedule[{i}]"))?));
    }
    TopologySchedule::new(entries).map_err(|e| invalid("graph.schedule", e.to_string()))
}

fn coupling_from(
    n: usize,
    b: Option<f64>,
    matrix: &Option<Vec<Vec<f64>>>,
    open: &Option<Vec<(usize, usize)>>,
    start: &SquareMatrix,
    field: &str,
) -> Result<SquareMatrix, ConfigError> {
    let mut m = match (b, matrix) {
        (Some(_), Some(_)) => return Err(invalid(field, "give either b or matrix")),
        (Some(b), None) => ElectricalNetwork::complete(n, b, Vec::new()).susceptance,
        (None, Some(rows)) => SquareMatrix::from_rows(rows).ok_or_else(|| invalid(field, "matrix must be square"))?,
        (None, None) => start.clone(),
    };
    if m.n() != n {
        return Err(invalid(field, format!("has {} buses, expected {n}", m.n())));
    }
    for &(a, b) in open.iter().flatten() {
        if a >= n || b >= n {
            return Err(invalid(field, format!("open line ({a}, {b}) out of range")));
        }
        m.set(a, b, 0.0);
        m.set(b, a, 0.0);
    }
    Ok(m)
}

fn sc_from(f: &ScFile, base: ScParams) -> Result<ScParams, ConfigError> {
    let mut sc = match f.preset.as_deref() {
        None => base,
        Some("feeder-69") => ScParams::FEEDER_69,
        Some("feeder-47") => ScParams::FEEDER_47,
        Some(p) => return Err(invalid("sc.preset", format!("unknown preset {p:?}"))),
    };
    set(&mut sc.c, f.c);
    set(&mut sc.kp_omega, f.kp_omega);
    set(&mut sc.ki_omega, f.ki_omega);
    set(&mut sc.kp_v, f.kp_v);
    set(&mut sc.ki_v, f.ki_v);
    Ok(sc)
}

fn set<T>(slot: &mut T, v: Option<T>) {
    if let Some(v) = v {
        *slot = v;
    }
}

fn attack_from(i: usize, a: &AttackFile) -> Result<AttackSpec, ConfigError> {
    let field = format!("attack[{i}]");
    let need = |v: Option<f64>, key: &str| v.ok_or_else(|| invalid(format!("{field}.{key}"), "missing"));
    let kind = match a.kind.as_str() {
        "latency" => AttackKind::Latency { tau: need(a.tau, "tau")? },
        "dropout" => AttackKind::Dropout { p: need(a.p, "p")? },
        "tsa" => AttackKind::Tsa {
            n_shift: a.n_shift.ok_or_else(|| invalid(format!("{field}.n_shift"), "missing"))?,
            t_s: need(a.t_s, "t_s")?,
        },
        "fdia" => AttackKind::Fdia {
            alpha: a.alpha.clone().ok_or_else(|| invalid(format!("{field}.alpha"), "missing"))?,
            lambda: a.lambda.unwrap_or(true),
        },
        k => return Err(invalid(format!("{field}.kind"), format!("unknown attack {k:?}"))),
    };
    let targets = match (&a.agents, &a.edges) {
        (Some(_), Some(_)) => return Err(invalid(&field, "give either agents or edges")),
        (Some(ag), None) => Targets::Agents(ag.clone()),
        (None, Some(e)) => Targets::Edges(e.clone()),
        (None, None) => Targets::All,
    };
    Ok(AttackSpec { kind, targets, start: a.start, stop: a.stop })
}

fn mode_from(s: &str) -> Result<ConvergenceMode, ConfigError> {
    match s {
        "objectives" => Ok(ConvergenceMode::Objectives),
        "steady-state" => Ok(ConvergenceMode::SteadyState),
        other => Err(invalid("convergence.mode", format!("unknown mode {other:?}"))),
    }
}

fn build_plant(f: ScenarioFile, base: Option<ScenarioConfig>) -> Result<ScenarioConfig, ConfigError> {
    let fresh = base.is_none();
    let mut c = match base {
        Some(c) => c,
        None => {
            let g = f.graph.as_ref().ok_or_else(|| invalid("graph", "required without a base"))?;
            let n = g.n.ok_or_else(|| invalid("graph.n", "missing"))?;
            let droop = DroopParams::default();
            ScenarioConfig {
                name: "scenario".into(),
                dt: 1e-3,
                t_end: 10.0,
                seed: 1,
                topology: TopologySchedule::fixed(CyberGraph::complete(n)),
                droop,
                inner: InnerLoopParams::default(),
                network: ElectricalNetwork::complete(n, 1.0, Vec::new()),
                sc: vec![ScParams::FEEDER_69],
                mca: McaConfig { enabled: false, params: McaParams::for_controller(&ScParams::FEEDER_69, droop.v_nom) },
                attacks: Vec::new(),
                convergence: ConvergenceCriteria::default(),
                record: RecordOptions::default(),
            }
        }
    };
    set(&mut c.name, f.name);
    set(&mut c.dt, f.dt);
    set(&mut c.t_end, f.t_end);
    set(&mut c.seed, f.seed);
    if let Some(g) = &f.graph {
        c.topology = schedule_from(g, Some(c.n_agents()))?;
        if fresh && f.network.is_none() {
            c.network = ElectricalNetwork::complete(c.n_agents(), 1.0, Vec::new());
        }
    }
    let n = c.n_agents();
    if let Some(d) = &f.droop {
        set(&mut c.droop.m_p, d.m_p);
        set(&mut c.droop.n_q, d.n_q);
        set(&mut c.droop.omega_nom, d.omega_nom);
        set(&mut c.droop.v_nom, d.v_nom);
    }
    if let Some(i) = &f.inner {
        set(&mut c.inner.kp_v, i.kp_v);
        set(&mut c.inner.ki_v, i.ki_v);
        set(&mut c.inner.kp_i, i.kp_i);
        set(&mut c.inner.ki_i, i.ki_i);
        set(&mut c.inner.omega_c, i.omega_c);
    }
    if let Some(net) = &f.network {
        let start = c.network.susceptance.clone();
        c.network.susceptance = coupling_from(n, net.b, &net.matrix, &net.open, &start, "network")?;
        if let Some(sw) = &net.switches {
            let start = c.network.susceptance.clone();
            c.network.switches = sw
                .iter()
                .enumerate()
                .map(|(i, s)| {
                    let susceptance = coupling_from(n, s.b, &s.matrix, &s.open, &start, &format!("network.switch[{i}]"))?;
                    Ok(NetworkSwitch { t: s.t, susceptance })
                })
                .collect::<Result<_, ConfigError>>()?;
        }
    }
    if let Some(loads) = &f.loads {
        c.network.loads = loads
            .iter()
            .map(|l| BusLoad {
                bus: l.bus,
                p: l.p,
                q: l.q,
                steps: l.steps.iter().map(|&(t, p, q)| LoadStep { t, p, q }).collect(),
            })
            .collect();
        if let Some(l) = c.network.loads.iter().find(|l| l.bus >= n) {
            return Err(invalid("loads", format!("bus {} out of range", l.bus)));
        }
    }
    if let Some(s) = &f.sc {
        let sc = sc_from(s, c.sc[0])?;
        c.sc = vec![sc];
        if f.mca.as_ref().and_then(|m| m.t_c).is_none() {
            c.mca.params.t_c = sc.time_constants();
        }
    }
    if let Some(m) = &f.mca {
        let p = &mut c.mca.params;
        set(&mut c.mca.enabled, m.enabled.or(fresh.then_some(true)));
        set(&mut p.d_factor, m.d_factor);
        if let Some(w) = m.window {
            if m.impulse.is_none() {
                *p = p.clone().with_average(w);
            }
            p.window = w;
        }
        set(&mut p.impulse, m.impulse.clone());
        set(&mut p.beta, m.beta);
        set(&mut p.g1, m.g1);
        set(&mut p.g2, m.g2);
        set(&mut p.t_c, m.t_c);
        set(&mut p.vc_base, m.vc_base);
        if m.impulse.is_some() && m.window.is_none() {
            p.window = p.impulse.len();
        }
    }
    if let Some(a) = &f.attacks {
        c.attacks = a.iter().enumerate().map(|(i, a)| attack_from(i, a)).collect::<Result<_, _>>()?;
    }
    if let Some(cv) = &f.convergence {
        let k = &mut c.convergence;
        set(&mut k.disturbance_t, cv.disturbance_t);
        set(&mut k.tol_freq, cv.tol_freq);
        set(&mut k.tol_share, cv.tol_share);
        set(&mut k.dwell, cv.dwell);
        set(&mut k.tol_rate, cv.tol_rate);
        if let Some(m) = &cv.mode {
            k.mode = mode_from(m)?;
        }
    }
    if let Some(r) = &f.record {
        set(&mut c.record.packets, r.packets);
    }
    if f.tau.is_some() || f.initial.is_some() || f.tol.is_some() {
        return Err(invalid("tau/initial/tol", "only valid in abstract mode"));
    }
    Ok(c)
}

fn build_abstract(f: ScenarioFile, base: Option<AbstractConfig>) -> Result<AbstractConfig, ConfigError> {
    let mut c = match base {
        Some(c) => c,
        None => {
            let g = f.graph.as_ref().ok_or_else(|| invalid("graph", "required without a base"))?;
            let graph = graph_from(g.n.ok_or_else(|| invalid("graph.n", "missing"))?, &g.kind, &g.edges, "graph")?;
            let initial = f.initial.clone().ok_or_else(|| invalid("initial", "required without a base"))?;
            AbstractConfig { name: "abstract".into(), graph, tau: 0.0, dt: 1e-3, t_end: 60.0, initial, tol: 1e-3 }
        }
    };
    let plant_only = f.droop.is_some()
        || f.inner.is_some()
        || f.network.is_some()
        || f.loads.is_some()
        || f.sc.is_some()
        || f.mca.is_some()
        || f.attacks.is_some()
        || f.convergence.is_some()
        || f.record.is_some();
    if plant_only {
        return Err(invalid("mode", "plant tables are not valid in abstract mode"));
    }
    if let Some(g) = &f.graph {
        if g.schedule.is_some() {
            return Err(invalid("graph.schedule", "not valid in abstract mode"));
        }
        let n = g.n.unwrap_or(c.graph.n_agents());
        c.graph = graph_from(n, &g.kind, &g.edges, "graph")?;
    }
    set(&mut c.name, f.name);
    set(&mut c.dt, f.dt);
    set(&mut c.t_end, f.t_end);
    set(&mut c.tau, f.tau);
    set(&mut c.initial, f.initial);
    set(&mut c.tol, f.tol);
    Ok(c)
}
