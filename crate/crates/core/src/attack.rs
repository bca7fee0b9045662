//! Message channels and the attacks applied to packets in flight.
//!
//! Every sent packet goes through the same pipeline: false data, then time
//! shift, then latency, then dropout. Dropped packets never reach the buffer.

use alloc::collections::VecDeque;
use alloc::vec;
use alloc::vec::Vec;

use crate::control::Psi;
use crate::graph::LaplacianView;
use crate::rng::{Stream, StreamRng};

/// A consensus message on one directed link.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Packet {
    pub src: usize,
    pub dst: usize,
    pub psi: Psi,
    /// Sender timestamp, s.
    pub stamp: f64,
    pub send_step: u64,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum AttackError {
    #[error("attack {index}: dropout probability {p} outside [0, 1]")]
    BadProbability { index: usize, p: f64 },
    #[error("attack {index}: delay {tau} must be finite and >= 0")]
    BadDelay { index: usize, tau: f64 },
    #[error("attack {index}: window start {start} must precede stop {stop}")]
    BadWindow { index: usize, start: f64, stop: f64 },
    #[error("attack {index}: time-shift sample period must be positive")]
    BadSamplePeriod { index: usize },
    #[error("attack {index}: {got} alpha vectors for {expected} targets")]
    AlphaLength { index: usize, got: usize, expected: usize },
    #[error("attack {index}: target agent {agent} out of range")]
    UnknownAgent { index: usize, agent: usize },
    #[error("balanced injection needs at least two agents")]
    BalancedNeedsTwo,
    #[error("magnitude must be finite and > 0")]
    BadMagnitude,
}

/// What an attack hits.
#[derive(Debug, Clone, PartialEq)]
pub enum Targets {
    /// Every link.
    All,
    /// Directed links `(src, dst)`.
    Edges(Vec<(usize, usize)>),
    /// Every packet sent by these agents.
    Agents(Vec<usize>),
}

impl Targets {
    /// Position of the target covering link `src -> dst`.
    fn position(&self, src: usize, dst: usize) -> Option<usize> {
        match self {
            Targets::All => Some(src),
            Targets::Edges(e) => e.iter().position(|&x| x == (src, dst)),
            Targets::Agents(a) => a.iter().position(|&x| x == src),
        }
    }

    pub fn covers(&self, src: usize, dst: usize) -> bool {
        self.position(src, dst).is_some()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum AttackKind {
    /// Constant extra delay, s.
    Latency { tau: f64 },
    /// Per-packet loss probability.
    Dropout { p: f64 },
    /// Serve the sample `n_shift · t_s` away from the stamp. Negative is stale.
    Tsa { n_shift: i64, t_s: f64 },
    /// Additive bias `lambda · alpha`. `alpha` is indexed like the targets;
    /// with [`Targets::All`] it holds one vector per source agent, or a single
    /// vector shared by all.
    Fdia { alpha: Vec<[f64; 3]>, lambda: bool },
}

impl AttackKind {
    pub fn name(&self) -> &'static str {
        match self {
            AttackKind::Latency { .. } => "latency",
            AttackKind::Dropout { .. } => "dropout",
            AttackKind::Tsa { .. } => "tsa",
            AttackKind::Fdia { .. } => "fdia",
        }
    }
}

/// One attack, active on packets stamped in `[start, stop)`.
#[derive(Debug, Clone, PartialEq)]
pub struct AttackSpec {
    pub kind: AttackKind,
    pub targets: Targets,
    pub start: f64,
    pub stop: Option<f64>,
}

impl AttackSpec {
    pub fn new(kind: AttackKind, targets: Targets, start: f64) -> Self {
        Self { kind, targets, start, stop: None }
    }

    pub fn active(&self, t: f64) -> bool {
        t >= self.start && self.stop.is_none_or(|s| t < s)
    }

    pub fn validate(&self, index: usize, n: usize) -> Result<(), AttackError> {
        if let Some(stop) = self.stop {
            if !(self.start < stop) {
                return Err(AttackError::BadWindow { index, start: self.start, stop });
            }
        }
        let n_targets = match &self.targets {
            Targets::All => n,
            Targets::Edges(e) => {
                if let Some(&(a, b)) = e.iter().find(|&&(a, b)| a >= n || b >= n) {
                    return Err(AttackError::UnknownAgent { index, agent: a.max(b) });
                }
                e.len()
            }
            Targets::Agents(a) => {
                if let Some(&agent) = a.iter().find(|&&a| a >= n) {
                    return Err(AttackError::UnknownAgent { index, agent });
                }
                a.len()
            }
        };
        match &self.kind {
            AttackKind::Latency { tau } => {
                if !(*tau >= 0.0 && tau.is_finite()) {
                    return Err(AttackError::BadDelay { index, tau: *tau });
                }
            }
            AttackKind::Dropout { p } => {
                if !(0.0..=1.0).contains(p) {
                    return Err(AttackError::BadProbability { index, p: *p });
                }
            }
            AttackKind::Tsa { t_s, .. } => {
                if !(*t_s > 0.0 && t_s.is_finite()) {
                    return Err(AttackError::BadSamplePeriod { index });
                }
            }
            AttackKind::Fdia { alpha, .. } => {
                let shared = matches!(self.targets, Targets::All) && alpha.len() == 1;
                if !shared && alpha.len() != n_targets {
                    return Err(AttackError::AlphaLength { index, got: alpha.len(), expected: n_targets });
                }
            }
        }
        Ok(())
    }

    fn alpha_for(&self, src: usize, dst: usize) -> Option<[f64; 3]> {
        let AttackKind::Fdia { alpha, .. } = &self.kind else { return None };
        let i = self.targets.position(src, dst)?;
        if alpha.len() == 1 && matches!(self.targets, Targets::All) {
            Some(alpha[0])
        } else {
            alpha.get(i).copied()
        }
    }
}

/// `ψ + Λα`, component-wise.
pub fn apply_fdia(psi: Psi, alpha: [f64; 3], lambda_flag: bool) -> Psi {
    if lambda_flag {
        psi + Psi::from_array(alpha)
    } else {
        psi
    }
}

/// Recent consensus states of one sender, indexed by step.
#[derive(Debug, Clone)]
pub struct PsiHistory {
    buf: VecDeque<Psi>,
    capacity: usize,
    /// Step of `buf[0]`.
    first_step: u64,
}

impl PsiHistory {
    pub fn new(capacity: usize) -> Self {
        Self { buf: VecDeque::with_capacity(capacity.max(1)), capacity: capacity.max(1), first_step: 0 }
    }

    /// Appends the state of `step`, which must follow the last pushed step.
    pub fn push(&mut self, step: u64, psi: Psi) {
        if self.buf.is_empty() {
            self.first_step = step;
        }
        debug_assert_eq!(step, self.first_step + self.buf.len() as u64);
        if self.buf.len() == self.capacity {
            self.buf.pop_front();
            self.first_step += 1;
        }
        self.buf.push_back(psi);
    }

    /// State at `step`, clamped to the stored range. The flag reports clamping.
    pub fn at(&self, step: i64) -> (Psi, bool) {
        let first = self.first_step as i64;
        let last = first + self.buf.len() as i64 - 1;
        let k = step.clamp(first, last);
        (self.buf[(k - first) as usize], k != step)
    }
}

/// Replaces the content with the sender's state `n_shift · t_s` away from the
/// stamp while keeping the stamp. Any bias already on the packet is preserved.
/// Returns the packet and whether the history had to be clamped.
pub fn apply_tsa(pkt: Packet, n_shift: i64, t_s: f64, history: &PsiHistory, dt: f64) -> (Packet, bool) {
    if n_shift == 0 {
        return (pkt, false);
    }
    let offset = libm::round(n_shift as f64 * t_s / dt) as i64;
    let now = pkt.send_step as i64;
    let (shifted, clamped) = history.at(now + offset);
    let (current, _) = history.at(now);
    let mut out = pkt;
    out.psi = pkt.psi + (shifted - current);
    (out, clamped)
}

/// Delay in whole steps, rounding a continuous delay up to the next boundary.
pub fn delay_steps(tau: f64, dt: f64) -> u64 {
    let x = tau / dt;
    let r = libm::round(x);
    if libm::fabs(x - r) <= 1e-9 * r.max(1.0) {
        r as u64
    } else {
        libm::ceil(x) as u64
    }
}

/// One directed link: in-flight packets and the dropout stream.
#[derive(Debug, Clone)]
pub struct Channel {
    pub src: usize,
    pub dst: usize,
    buffer: Vec<(u64, Packet)>,
    stream: Stream,
}

impl Channel {
    pub fn new(src: usize, dst: usize, seed: u64) -> Self {
        Self { src, dst, buffer: Vec::new(), stream: Stream::named(seed, "dropout", src as u64, dst as u64) }
    }

    pub fn in_flight(&self) -> usize {
        self.buffer.len()
    }

    /// Removes every packet due at or before `step` and returns the newest.
    pub fn deliver(&mut self, step: u64) -> Option<Packet> {
        let mut best: Option<Packet> = None;
        self.buffer.retain(|&(due, pkt)| {
            if due <= step {
                if best.is_none_or(|b| pkt.send_step > b.send_step) {
                    best = Some(pkt);
                }
                false
            } else {
                true
            }
        });
        best
    }

    /// Drops every packet in flight.
    pub fn clear(&mut self) {
        self.buffer.clear();
    }
}

/// Queues `pkt` for delivery `tau` after its send step. Returns the due step.
pub fn apply_latency(ch: &mut Channel, pkt: Packet, tau: f64, dt: f64) -> u64 {
    let due = pkt.send_step + delay_steps(tau, dt);
    ch.buffer.push((due, pkt));
    due
}

/// Keep (`true`) or drop (`false`), from the channel's stream at the packet's send step.
pub fn apply_dropout(ch: &Channel, pkt: &Packet, p: f64) -> bool {
    if p <= 0.0 {
        return true;
    }
    if p >= 1.0 {
        return false;
    }
    ch.stream.uniform(pkt.send_step) >= p
}

/// Per-run attack counters.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct AttackStats {
    pub sent: u64,
    pub dropped: u64,
    pub tsa_clamped: u64,
}

/// Result of pushing a packet through the pipeline.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Transmission {
    /// Content as it would be delivered.
    pub packet: Packet,
    pub dropped: bool,
    pub due_step: u64,
}

/// Full pipeline for one packet on `ch`.
pub fn transmit(
    ch: &mut Channel,
    pkt: Packet,
    attacks: &[AttackSpec],
    history: &PsiHistory,
    dt: f64,
    stats: &mut AttackStats,
) -> Transmission {
    let t = pkt.stamp;
    let live = |a: &&AttackSpec| a.active(t) && a.targets.covers(pkt.src, pkt.dst);
    let mut pkt = pkt;
    for a in attacks.iter().filter(live) {
        if let AttackKind::Fdia { lambda, .. } = a.kind {
            if let Some(alpha) = a.alpha_for(pkt.src, pkt.dst) {
                pkt.psi = apply_fdia(pkt.psi, alpha, lambda);
            }
        }
    }
    for a in attacks.iter().filter(live) {
        if let AttackKind::Tsa { n_shift, t_s } = a.kind {
            let (p, clamped) = apply_tsa(pkt, n_shift, t_s, history, dt);
            pkt = p;
            stats.tsa_clamped += u64::from(clamped);
        }
    }
    let tau: f64 = attacks
        .iter()
        .filter(live)
        .map(|a| if let AttackKind::Latency { tau } = a.kind { tau } else { 0.0 })
        .sum();
    let keep_prob: f64 = attacks
        .iter()
        .filter(live)
        .map(|a| if let AttackKind::Dropout { p } = a.kind { 1.0 - p } else { 1.0 })
        .product();
    stats.sent += 1;
    let keep = apply_dropout(ch, &pkt, 1.0 - keep_prob);
    let due_step = pkt.send_step + delay_steps(tau, dt);
    if keep {
        apply_latency(ch, pkt, tau, dt);
    } else {
        stats.dropped += 1;
    }
    Transmission { packet: pkt, dropped: !keep, due_step }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FdiaClass {
    Balanced,
    Unbalanced,
}

/// Random per-agent bias vectors.
///
/// Balanced vectors sum to zero on every enabled channel. Unbalanced vectors
/// share one sign per channel, so every enabled channel has a nonzero sum.
/// The largest magnitude on each enabled channel equals `magnitude`.
pub fn make_fdia(
    n: usize,
    kind: FdiaClass,
    magnitude: f64,
    channels: [bool; 3],
    rng: &mut StreamRng,
) -> Result<Vec<[f64; 3]>, AttackError> {
    if !(magnitude > 0.0 && magnitude.is_finite()) {
        return Err(AttackError::BadMagnitude);
    }
    if kind == FdiaClass::Balanced && n < 2 {
        return Err(AttackError::BalancedNeedsTwo);
    }
    let mut alpha = vec![[0.0; 3]; n];
    for c in (0..3).filter(|&c| channels[c]) {
        let mut col: Vec<f64> = (0..n)
            .map(|_| match kind {
                FdiaClass::Balanced => 2.0 * rng.next_f64() - 1.0,
                FdiaClass::Unbalanced => 0.25 + 0.75 * rng.next_f64(),
            })
            .collect();
        if kind == FdiaClass::Balanced {
            let mean = col.iter().sum::<f64>() / n as f64;
            col.iter_mut().for_each(|x| *x -= mean);
        }
        let peak = col.iter().fold(0.0f64, |a, x| a.max(libm::fabs(*x)));
        if peak == 0.0 {
            for (i, x) in col.iter_mut().enumerate() {
                *x = if i % 2 == 0 { 1.0 } else { -1.0 };
            }
            if n % 2 == 1 {
                col[n - 1] = 0.0;
            }
        } else {
            col.iter_mut().for_each(|x| *x /= peak);
        }
        for (a, x) in alpha.iter_mut().zip(&col) {
            a[c] = x * magnitude;
        }
        if kind == FdiaClass::Balanced {
            // push the rounding residue onto the last agent
            let resid: f64 = alpha.iter().map(|a| a[c]).sum();
            alpha[n - 1][c] -= resid;
        }
    }
    Ok(alpha)
}

/// Balanced iff every channel's sum over agents is within `1e-9` of zero.
///
/// On a connected undirected graph this is exactly when `L x = -α` has a
/// solution, since the range of `L` is the complement of the all-ones vector.
pub fn classify_fdia(alpha: &[[f64; 3]], lv: &LaplacianView) -> FdiaClass {
    debug_assert_eq!(alpha.len(), lv.d_in.len());
    let balanced = (0..3).all(|c| libm::fabs(alpha.iter().map(|a| a[c]).sum::<f64>()) <= 1e-9);
    if balanced {
        FdiaClass::Balanced
    } else {
        FdiaClass::Unbalanced
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{laplacian, CyberGraph};
    use crate::rng::Stream;

    fn pkt(step: u64, psi: Psi) -> Packet {
        Packet { src: 0, dst: 1, psi, stamp: step as f64 * 1e-3, send_step: step }
    }

    #[test]
    fn latency_examples() {
        let mut ch = Channel::new(0, 1, 1);
        let p = pkt(10, Psi::new(1.0, 2.0, 3.0));
        assert_eq!(apply_latency(&mut ch, p, 0.0, 1e-3), 10);
        assert_eq!(ch.deliver(10), Some(p));
        assert_eq!(delay_steps(0.05, 1e-3), 50);
        let a = pkt(20, Psi::new(1.0, 0.0, 0.0));
        let b = pkt(21, Psi::new(2.0, 0.0, 0.0));
        apply_latency(&mut ch, a, 0.05, 1e-3);
        apply_latency(&mut ch, b, 0.05, 1e-3);
        assert_eq!(ch.deliver(69), None);
        assert_eq!(ch.deliver(70), Some(a));
        assert_eq!(ch.deliver(71), Some(b));
        assert_eq!(ch.in_flight(), 0);
    }

    #[test]
    fn newest_of_simultaneous_arrivals_wins() {
        let mut ch = Channel::new(0, 1, 1);
        let a = pkt(1, Psi::new(1.0, 0.0, 0.0));
        let b = pkt(2, Psi::new(2.0, 0.0, 0.0));
        apply_latency(&mut ch, b, 0.0, 1e-3);
        apply_latency(&mut ch, a, 0.002, 1e-3);
        assert_eq!(ch.deliver(3), Some(b));
    }

    #[test]
    fn dropout_extremes_and_rate() {
        let ch = Channel::new(2, 3, 42);
        let p = pkt(0, Psi::default());
        assert!(apply_dropout(&ch, &p, 0.0));
        assert!(!apply_dropout(&ch, &p, 1.0));
        let dropped = (0..100_000u64).filter(|&k| !apply_dropout(&ch, &pkt(k, Psi::default()), 0.1)).count();
        let rate = dropped as f64 / 1e5;
        assert!((0.094..=0.106).contains(&rate), "{rate}");
    }

    #[test]
    fn tsa_examples() {
        let mut h = PsiHistory::new(100);
        for k in 0..50 {
            h.push(k, Psi::new(2.0, 2.0, 2.0));
        }
        let p = pkt(49, Psi::new(2.0, 2.0, 2.0));
        assert_eq!(apply_tsa(p, 0, 1e-3, &h, 1e-3), (p, false));
        assert_eq!(apply_tsa(p, -10, 1e-3, &h, 1e-3).0, p);
        let slope = 3.0;
        let mut h = PsiHistory::new(100);
        for k in 0..50 {
            let v = slope * k as f64 * 1e-3;
            h.push(k, Psi::new(v, v, v));
        }
        let now = slope * 49.0 * 1e-3;
        let (out, clamped) = apply_tsa(pkt(49, Psi::new(now, now, now)), -5, 2e-3, &h, 1e-3);
        assert!(!clamped);
        assert!((out.psi.omega - (now - slope * 10.0 * 1e-3)).abs() < 1e-12);
        assert_eq!(out.stamp, 49.0 * 1e-3);
        let (_, clamped) = apply_tsa(pkt(49, Psi::new(now, now, now)), -80, 1e-3, &h, 1e-3);
        assert!(clamped);
    }

    #[test]
    fn fdia_examples() {
        let p = Psi::new(1.0, 2.0, 3.0);
        assert_eq!(apply_fdia(p, [5.0, 5.0, 5.0], false), p);
        assert_eq!(apply_fdia(p, [0.1, 0.0, 0.0], true).omega, 1.1);
        let a = apply_fdia(p, [0.3, -0.2, 0.1], true);
        let b = apply_fdia(p, [-0.3, 0.2, -0.1], true);
        assert!(((a.omega + b.omega) / 2.0 - p.omega).abs() < 1e-15);
    }

    #[test]
    fn make_fdia_shapes() {
        let mut rng = StreamRng::new(Stream::named(3, "fdia", 0, 0));
        let a = make_fdia(2, FdiaClass::Balanced, 0.5, [true, false, false], &mut rng).unwrap();
        assert_eq!(a[0][0] + a[1][0], 0.0);
        assert_eq!(a[0][0].abs(), 0.5);
        assert_eq!(a[0][1], 0.0);
        let u = make_fdia(4, FdiaClass::Unbalanced, 0.5, [true; 3], &mut rng).unwrap();
        assert!((0..3).all(|c| u.iter().map(|x| x[c]).sum::<f64>() > 0.0));
        assert_eq!(make_fdia(1, FdiaClass::Balanced, 0.5, [true; 3], &mut rng), Err(AttackError::BalancedNeedsTwo));
    }

    #[test]
    fn classify_examples() {
        let lv = laplacian(&CyberGraph::complete(3));
        assert_eq!(classify_fdia(&[[0.0; 3]; 3], &lv), FdiaClass::Balanced);
        assert_eq!(classify_fdia(&[[1.0, 0.0, 0.0], [-1.0, 0.0, 0.0], [0.0; 3]], &lv), FdiaClass::Balanced);
        assert_eq!(classify_fdia(&[[1.0, 0.0, 0.0], [0.0; 3], [0.0; 3]], &lv), FdiaClass::Unbalanced);
    }

    #[test]
    fn pipeline_order_fdia_then_tsa_then_latency() {
        let mut h = PsiHistory::new(10);
        for k in 0..10 {
            h.push(k, Psi::new(k as f64, 0.0, 0.0));
        }
        let attacks = [
            AttackSpec::new(AttackKind::Latency { tau: 0.003 }, Targets::All, 0.0),
            AttackSpec::new(AttackKind::Tsa { n_shift: -2, t_s: 1e-3 }, Targets::All, 0.0),
            AttackSpec::new(AttackKind::Fdia { alpha: vec![[0.5, 0.0, 0.0]], lambda: true }, Targets::All, 0.0),
        ];
        let mut ch = Channel::new(0, 1, 9);
        let mut stats = AttackStats::default();
        let tx = transmit(&mut ch, pkt(9, Psi::new(9.0, 0.0, 0.0)), &attacks, &h, 1e-3, &mut stats);
        assert_eq!(tx.packet.psi.omega, 7.5);
        assert_eq!(tx.due_step, 12);
        assert_eq!(ch.deliver(12).unwrap().psi.omega, 7.5);
    }

    #[test]
    fn attack_window() {
        let mut a = AttackSpec::new(AttackKind::Dropout { p: 0.1 }, Targets::All, 5.0);
        a.stop = Some(6.0);
        assert!(!a.active(4.999) && a.active(5.0) && !a.active(6.0));
        a.stop = Some(5.0);
        assert!(a.validate(0, 3).is_err());
    }
}
