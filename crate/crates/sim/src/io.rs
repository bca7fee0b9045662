//! Trace, packet, layer and summary files.
//!
//! Floats are written with `{:e}` formatting, which Rust guarantees to be the
//! shortest string that parses back to the same bits.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use dersec_core::engine::{AbstractTrace, SweepPoint, Trace};
use dersec_core::metrics::{AbstractReport, ConvergenceReport};
use serde::{Deserialize, Serialize};

pub const SCHEMA_VERSION: u32 = 1;

/// Per-agent trace columns, in file order.
pub const AGENT_COLUMNS: &[&str] = &[
    "omega", "p_filt", "q_filt", "mp_p", "nq_q", "v_d", "zeta_p", "zeta_q", "zeta_pf", "zeta_qf", "d_omega", "d_v",
];

pub const PACKET_HEADER: &[&str] = &["step", "t", "src", "dst", "omega", "mp_p", "nq_q", "stamp", "dropped"];

pub const MCA_HEADER: &[&str] =
    &["t", "agent", "triggered", "rho_p", "rho_q", "recon_p", "recon_q", "freshness", "relevance_p", "relevance_q"];

#[derive(Debug, thiserror::Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {source}")]
    Csv { path: PathBuf, source: csv::Error },
    #[error("{path}: {source}")]
    Json { path: PathBuf, source: serde_json::Error },
}

fn f(x: f64) -> String {
    format!("{x:e}")
}

fn csv_writer(path: &Path) -> Result<csv::Writer<File>, IoError> {
    csv::Writer::from_path(path).map_err(|e| IoError::Csv { path: path.into(), source: e })
}

fn csv_err(path: &Path) -> impl Fn(csv::Error) -> IoError + '_ {
    move |e| IoError::Csv { path: path.into(), source: e }
}

/// `step,t` followed by [`AGENT_COLUMNS`] for agent 0, then agent 1, and so on,
/// each suffixed `_<agent>`.
pub fn trace_header(n_agents: usize) -> Vec<String> {
    let mut h = vec!["step".to_string(), "t".to_string()];
    for j in 0..n_agents {
        h.extend(AGENT_COLUMNS.iter().map(|c| format!("{c}_{j}")));
    }
    h
}

pub fn write_trace_csv(trace: &Trace, path: &Path) -> Result<(), IoError> {
    let mut w = csv_writer(path)?;
    w.write_record(trace_header(trace.n_agents)).map_err(csv_err(path))?;
    for r in &trace.rows {
        let mut rec = vec![r.step.to_string(), f(r.t)];
        for a in &r.agents {
            rec.extend(
                [a.omega, a.p_filt, a.q_filt, a.mp_p, a.nq_q, a.v_d, a.zeta_p, a.zeta_q, a.zeta_pf, a.zeta_qf, a.d_omega, a.d_v]
                    .map(f),
            );
        }
        w.write_record(&rec).map_err(csv_err(path))?;
    }
    w.flush().map_err(|e| IoError::Io { path: path.into(), source: e })
}

/// A trace file read back: header and numeric rows.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceTable {
    pub header: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

pub fn read_trace_csv(path: &Path) -> Result<TraceTable, IoError> {
    let mut r = csv::Reader::from_path(path).map_err(csv_err(path))?;
    let header = r.headers().map_err(csv_err(path))?.iter().map(String::from).collect();
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(csv_err(path))?;
        let row = rec
            .iter()
            .map(|s| s.parse::<f64>())
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| IoError::Io { path: path.into(), source: std::io::Error::new(std::io::ErrorKind::InvalidData, e) })?;
        rows.push(row);
    }
    Ok(TraceTable { header, rows })
}

pub fn write_packets_csv(trace: &Trace, path: &Path) -> Result<(), IoError> {
    let mut w = csv_writer(path)?;
    w.write_record(PACKET_HEADER).map_err(csv_err(path))?;
    for p in &trace.packets {
        w.write_record([
            p.step.to_string(),
            f(p.t),
            p.src.to_string(),
            p.dst.to_string(),
            f(p.psi.omega),
            f(p.psi.mp_p),
            f(p.psi.nq_q),
            f(p.stamp),
            u8::from(p.dropped).to_string(),
        ])
        .map_err(csv_err(path))?;
    }
    w.flush().map_err(|e| IoError::Io { path: path.into(), source: e })
}

pub fn write_mca_csv(trace: &Trace, path: &Path) -> Result<(), IoError> {
    let mut w = csv_writer(path)?;
    w.write_record(MCA_HEADER).map_err(csv_err(path))?;
    for r in &trace.rows {
        for (j, a) in r.agents.iter().enumerate() {
            w.write_record([
                f(r.t),
                j.to_string(),
                u8::from(a.triggered).to_string(),
                f(a.rho[0]),
                f(a.rho[1]),
                f(a.recon[0]),
                f(a.recon[1]),
                f(a.freshness),
                f(a.relevance[0]),
                f(a.relevance[1]),
            ])
            .map_err(csv_err(path))?;
        }
    }
    w.flush().map_err(|e| IoError::Io { path: path.into(), source: e })
}

/// `t,disagreement,sum` of an abstract run.
pub fn write_abstract_csv(tr: &AbstractTrace, path: &Path) -> Result<(), IoError> {
    let mut w = csv_writer(path)?;
    w.write_record(["t", "disagreement", "sum"]).map_err(csv_err(path))?;
    for (k, (d, s)) in tr.disagreement.iter().zip(&tr.sum).enumerate() {
        w.write_record([f(k as f64 * tr.dt), f(*d), f(*s)]).map_err(csv_err(path))?;
    }
    w.flush().map_err(|e| IoError::Io { path: path.into(), source: e })
}

/// Contents of `summary.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub schema_version: u32,
    pub scenario: String,
    pub mode: String,
    pub seed: Option<u64>,
    pub mca_enabled: bool,
    pub converged: bool,
    pub conv_time: Option<f64>,
    pub trigger_count: u64,
    pub freq_error_final: Option<f64>,
    pub p_share_spread_final: Option<f64>,
    pub q_share_spread_final: Option<f64>,
    pub rate_final: Option<f64>,
    pub disagreement_decay: Option<f64>,
    pub packets_sent: u64,
    pub packets_dropped: u64,
    pub diverged: Option<DivergedAt>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DivergedAt {
    pub step: u64,
    pub agent: usize,
}

impl Summary {
    pub fn plant(scenario: &str, seed: u64, trace: &Trace, r: &ConvergenceReport) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            scenario: scenario.into(),
            mode: "plant".into(),
            seed: Some(seed),
            mca_enabled: trace.mca_enabled,
            converged: r.converged,
            conv_time: r.conv_time,
            trigger_count: trace.trigger_count(),
            freq_error_final: Some(r.freq_error_final),
            p_share_spread_final: Some(r.p_share_spread_final),
            q_share_spread_final: Some(r.q_share_spread_final),
            rate_final: Some(r.rate_final).filter(|x| x.is_finite()),
            disagreement_decay: None,
            packets_sent: trace.attack_stats.sent,
            packets_dropped: trace.attack_stats.dropped,
            diverged: None,
        }
    }

    pub fn abstract_mode(scenario: &str, r: &AbstractReport) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            scenario: scenario.into(),
            mode: "abstract".into(),
            seed: None,
            mca_enabled: false,
            converged: r.converged,
            conv_time: r.conv_time,
            trigger_count: 0,
            freq_error_final: None,
            p_share_spread_final: None,
            q_share_spread_final: None,
            rate_final: None,
            disagreement_decay: Some(r.decay).filter(|x| x.is_finite()),
            packets_sent: 0,
            packets_dropped: 0,
            diverged: None,
        }
    }

    pub fn diverged(scenario: &str, seed: u64, mca_enabled: bool, step: u64, agent: usize) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            scenario: scenario.into(),
            mode: "plant".into(),
            seed: Some(seed),
            mca_enabled,
            converged: false,
            conv_time: None,
            trigger_count: 0,
            freq_error_final: None,
            p_share_spread_final: None,
            q_share_spread_final: None,
            rate_final: None,
            disagreement_decay: None,
            packets_sent: 0,
            packets_dropped: 0,
            diverged: Some(DivergedAt { step, agent }),
        }
    }
}

pub fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<(), IoError> {
    let file = File::create(path).map_err(|e| IoError::Io { path: path.into(), source: e })?;
    let mut w = BufWriter::new(file);
    serde_json::to_writer_pretty(&mut w, value).map_err(|e| IoError::Json { path: path.into(), source: e })?;
    writeln!(w).and_then(|_| w.flush()).map_err(|e| IoError::Io { path: path.into(), source: e })
}

pub fn read_summary(path: &Path) -> Result<Summary, IoError> {
    let text = std::fs::read_to_string(path).map_err(|e| IoError::Io { path: path.into(), source: e })?;
    serde_json::from_str(&text).map_err(|e| IoError::Json { path: path.into(), source: e })
}

/// `tau,converged,conv_time` per sweep point.
pub fn write_sweep_csv(points: &[SweepPoint], path: &Path) -> Result<(), IoError> {
    let mut w = csv_writer(path)?;
    w.write_record(["tau", "converged", "conv_time"]).map_err(csv_err(path))?;
    for p in points {
        let ct = p.conv_time.map(f).unwrap_or_default();
        w.write_record([f(p.tau), p.converged.to_string(), ct]).map_err(csv_err(path))?;
    }
    w.flush().map_err(|e| IoError::Io { path: path.into(), source: e })
}
