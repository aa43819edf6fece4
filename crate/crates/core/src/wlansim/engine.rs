//! Event loop. Time is kept in integer nanoseconds; events at equal times
//! run in scheduling order.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, VecDeque};

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};

use super::config::{BackoffKind, DelayDist, SimConfig, TrafficSpec};
use super::topology::{Role, Topology};
use super::{ap_addr, flow_net, node_addr, sta_net, AggSample, NodeStats, SimError, SimResult};
use crate::mumodel::UNLIMITED;
use crate::phy::PhyProfile;
use crate::trace::{ns_to_us, ApAccessRecord, Direction, GroundTruthRecord, PacketRecord};

type Ns = u64;

fn ns(us: f64) -> Ns {
    (us * 1000.0).round().max(0.0) as Ns
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum PktKind {
    Seg,
    Ack(u32),
    Udp,
    Obss,
}

#[derive(Debug, Clone)]
struct Pkt {
    flow: usize,
    kind: PktKind,
    l4: u32,
    t_enq: Ns,
}

#[derive(Debug, Clone)]
struct Group {
    dest: Option<usize>,
    pkts: Vec<(Pkt, Ns)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum FlowKind {
    TcpDown,
    TcpUp,
    UdpUp,
    UdpDown,
}

#[derive(Debug)]
struct Flow {
    kind: FlowKind,
    sta: usize,
    w_max: u32,
    thinning: u32,
    cwnd: f64,
    outstanding: u32,
    max_outstanding: u32,
    one_way_us: f64,
    rx_pending: u32,
    delack_gen: u64,
    delack_armed: bool,
    recovery_until: Ns,
    delivered: u64,
    interval_us: f64,
    pkt_bytes: u32,
    poisson: bool,
}

#[derive(Debug, Default)]
struct Node {
    role: Option<Role>,
    q: VecDeque<Pkt>,
    dq: Vec<VecDeque<Pkt>>,
    rr: usize,
    batch: Vec<Group>,
    contending: bool,
    contend_start: Ns,
    rem: Ns,
    resume_at: Option<Ns>,
    gen: u64,
    cw: u32,
    attempts: u32,
    n_retx: u32,
    transmitting: bool,
    busy: u32,
    idle_since: Ns,
    countdown_ns: Ns,
    failed_ns: Ns,
    ifs_ns: Ns,
    /// The next resume still owes this attempt's IFS.
    ifs_pending: bool,
    /// The pending resume is the one charging the IFS.
    ifs_resume: bool,
    bounded_queued: usize,
    stats: NodeStats,
}

impl Node {
    fn has_work(&self) -> bool {
        !self.batch.is_empty() || !self.q.is_empty() || self.dq.iter().any(|d| !d.is_empty())
    }
}

#[derive(Debug)]
struct Tx {
    src: usize,
    start: Ns,
    end: Ns,
    groups: usize,
    corrupted: Vec<usize>,
}

impl Tx {
    fn receivers<'a>(&self, nodes: &'a [Node]) -> impl Iterator<Item = usize> + 'a {
        nodes[self.src].batch.iter().filter_map(|g| g.dest)
    }
}

#[derive(Debug, Clone, Copy)]
enum Ev {
    BackoffExpire { node: usize, gen: u64 },
    TxEnd { tx: usize },
    ApIngress { flow: usize, ack: Option<u32> },
    ServerData { flow: usize },
    ServerAck { flow: usize, credit: u32 },
    DelAck { flow: usize, gen: u64 },
    UdpGen { flow: usize },
    ObssGen { idx: usize },
    LossDetect { flow: usize },
    LinkChange { idx: usize },
}

struct Scheduled {
    t: Ns,
    seq: u64,
    ev: Ev,
}

impl PartialEq for Scheduled {
    fn eq(&self, o: &Self) -> bool {
        self.t == o.t && self.seq == o.seq
    }
}
impl Eq for Scheduled {}
impl PartialOrd for Scheduled {
    fn partial_cmp(&self, o: &Self) -> Option<Ordering> {
        Some(self.cmp(o))
    }
}
impl Ord for Scheduled {
    fn cmp(&self, o: &Self) -> Ordering {
        (o.t, o.seq).cmp(&(self.t, self.seq))
    }
}

pub(super) struct Sim<'a> {
    cfg: &'a SimConfig,
    topo: &'a Topology,
    phy: PhyProfile,
    rng: ChaCha8Rng,
    heap: BinaryHeap<Scheduled>,
    seq: u64,
    now: Ns,
    warmup: Ns,
    nodes: Vec<Node>,
    flows: Vec<Flow>,
    specs: Vec<TrafficSpec>,
    txs: Vec<Option<Tx>>,
    free_tx: Vec<usize>,
    active: Vec<usize>,
    link_loss: Vec<Option<f64>>,
    link_rate: Vec<f64>,
    n_sta: usize,
    out: SimResult,
}

impl<'a> Sim<'a> {
    pub(super) fn new(cfg: &'a SimConfig, topo: &'a Topology) -> Result<Self, SimError> {
        topo.validate()?;
        let n_sta = topo.n_stations();
        cfg.validate(n_sta)?;
        let phy = cfg.phy()?;
        for o in &cfg.obss {
            if topo.roles.get(o.node) != Some(&Role::ObssNode) || !(o.load > 0.0) || !(o.frame_us > 0.0) {
                return Err(SimError::Config(format!("bad OBSS source on node {}", o.node)));
            }
        }
        let specs = cfg.effective_flows(n_sta);
        let mut nodes: Vec<Node> = topo
            .roles
            .iter()
            .map(|r| Node { role: Some(*r), cw: cfg.w0, ..Default::default() })
            .collect();
        nodes[0].dq = vec![VecDeque::new(); n_sta];
        let link_rate = (0..n_sta)
            .map(|s| cfg.sta_rates.get(s).copied().unwrap_or(cfg.phy_rate_per_stream))
            .collect();
        let flows = specs.iter().map(|s| Self::make_flow(cfg, s)).collect();
        Ok(Self {
            cfg,
            topo,
            phy,
            rng: ChaCha8Rng::seed_from_u64(cfg.seed),
            heap: BinaryHeap::new(),
            seq: 0,
            now: 0,
            warmup: ns(cfg.warmup_us),
            nodes,
            flows,
            specs,
            txs: Vec::new(),
            free_tx: Vec::new(),
            active: Vec::new(),
            link_loss: vec![None; n_sta],
            link_rate,
            n_sta,
            out: SimResult::default(),
        })
    }

    fn make_flow(cfg: &SimConfig, s: &TrafficSpec) -> Flow {
        let mut f = Flow {
            kind: FlowKind::TcpDown,
            sta: s.sta(),
            w_max: cfg.w_max,
            thinning: cfg.t_f,
            cwnd: cfg.w_max as f64,
            outstanding: 0,
            max_outstanding: 0,
            one_way_us: cfg.d_backbone_us / 2.0,
            rx_pending: 0,
            delack_gen: 0,
            delack_armed: false,
            recovery_until: 0,
            delivered: 0,
            interval_us: 0.0,
            pkt_bytes: cfg.seg_bytes,
            poisson: false,
        };
        match s {
            TrafficSpec::TcpDownload { w_max, thinning, init_window, rtt_us, .. }
            | TrafficSpec::TcpUpload { w_max, thinning, init_window, rtt_us, .. } => {
                if matches!(s, TrafficSpec::TcpUpload { .. }) {
                    f.kind = FlowKind::TcpUp;
                }
                f.w_max = w_max.unwrap_or(cfg.w_max).max(1);
                f.thinning = thinning.unwrap_or(cfg.t_f).max(1);
                f.cwnd = init_window.unwrap_or(f.w_max).clamp(1, f.w_max) as f64;
                if let Some(r) = rtt_us {
                    f.one_way_us = r / 2.0;
                }
            }
            TrafficSpec::UdpUplink { rate_mbps, pkt_bytes, poisson, .. }
            | TrafficSpec::UdpDownlink { rate_mbps, pkt_bytes, poisson, .. } => {
                f.kind = if matches!(s, TrafficSpec::UdpUplink { .. }) { FlowKind::UdpUp } else { FlowKind::UdpDown };
                f.pkt_bytes = *pkt_bytes;
                f.interval_us = *pkt_bytes as f64 * 8.0 / rate_mbps;
                f.poisson = *poisson;
            }
        }
        f
    }

    fn schedule(&mut self, t: Ns, ev: Ev) {
        self.seq += 1;
        self.heap.push(Scheduled { t, seq: self.seq, ev });
    }

    fn exp_sample(&mut self, mean: f64) -> f64 {
        if mean <= 0.0 {
            return 0.0;
        }
        Exp::new(1.0 / mean).map(|d| d.sample(&mut self.rng)).unwrap_or(mean)
    }

    fn one_way(&mut self, flow: usize) -> Ns {
        let m = self.flows[flow].one_way_us;
        match self.cfg.delay_dist {
            DelayDist::Deterministic => ns(m),
            DelayDist::Exponential => {
                let v = self.exp_sample(m);
                ns(v)
            }
        }
    }

    pub(super) fn run(mut self) -> SimResult {
        for f in 0..self.flows.len() {
            match self.flows[f].kind {
                FlowKind::TcpDown => self.server_pump(f),
                FlowKind::TcpUp => self.sta_pump(f),
                FlowKind::UdpUp | FlowKind::UdpDown => {
                    let first = self.udp_gap(f);
                    self.schedule(first, Ev::UdpGen { flow: f });
                }
            }
        }
        for idx in 0..self.cfg.obss.len() {
            let o = &self.cfg.obss[idx];
            let gap = self.exp_sample(o.frame_us / o.load);
            self.schedule(ns(gap), Ev::ObssGen { idx });
        }
        for idx in 0..self.cfg.link_schedule.len() {
            let at = ns(self.cfg.link_schedule[idx].at_us);
            self.schedule(at, Ev::LinkChange { idx });
        }
        let end = ns(self.cfg.duration_us);
        while let Some(s) = self.heap.pop() {
            if s.t > end {
                break;
            }
            self.now = s.t;
            self.handle(s.ev);
        }
        self.finish()
    }

    fn finish(mut self) -> SimResult {
        let span_us = self.cfg.duration_us - self.cfg.warmup_us;
        self.out.flow_bytes = self.flows.iter().map(|f| f.delivered).collect();
        self.out.max_outstanding = self.flows.iter().map(|f| f.max_outstanding).collect();
        self.out.throughput_mbps = self.out.flow_bytes.iter().sum::<u64>() as f64 * 8.0 / span_us;
        self.out.node_stats = self.nodes.iter().map(|n| n.stats.clone()).collect();
        self.out.flows = self.specs.clone();
        self.out.ap_log.sort_by_key(|r| r.ts_start);
        self.out
    }

    fn handle(&mut self, ev: Ev) {
        match ev {
            Ev::BackoffExpire { node, gen } => {
                let n = &mut self.nodes[node];
                if n.gen != gen || n.resume_at.is_none() {
                    return;
                }
                n.countdown_ns += n.rem;
                n.rem = 0;
                n.resume_at = None;
                self.begin_tx(node);
            }
            Ev::TxEnd { tx } => self.end_tx(tx),
            Ev::ApIngress { flow, ack } => {
                let f = &self.flows[flow];
                let pkt = match ack {
                    Some(c) => Pkt { flow, kind: PktKind::Ack(c), l4: 0, t_enq: self.now },
                    None => Pkt { flow, kind: PktKind::Seg, l4: self.cfg.seg_bytes, t_enq: self.now },
                };
                let sta = f.sta;
                self.nodes[0].dq[sta].push_back(pkt);
                self.ensure_contending(0);
            }
            Ev::ServerData { flow } => {
                self.count_delivery(flow, self.cfg.seg_bytes);
                let f = &mut self.flows[flow];
                f.rx_pending += 1;
                if f.rx_pending >= f.thinning {
                    self.emit_ack(flow);
                } else {
                    self.arm_delack(flow);
                }
            }
            Ev::ServerAck { flow, credit } => {
                self.ack_credit(flow, credit);
                self.server_pump(flow);
            }
            Ev::DelAck { flow, gen } => {
                let f = &self.flows[flow];
                if f.delack_armed && f.delack_gen == gen && f.rx_pending > 0 {
                    self.emit_ack(flow);
                }
            }
            Ev::UdpGen { flow } => {
                let f = &self.flows[flow];
                let pkt = Pkt { flow, kind: PktKind::Udp, l4: f.pkt_bytes, t_enq: self.now };
                let (node, sta) = if f.kind == FlowKind::UdpUp { (f.sta + 1, None) } else { (0, Some(f.sta)) };
                self.enqueue_bounded(node, sta, pkt);
                let gap = self.udp_gap(flow);
                self.schedule(self.now + gap.max(1), Ev::UdpGen { flow });
            }
            Ev::ObssGen { idx } => {
                let o = self.cfg.obss[idx].clone();
                let pkt = Pkt { flow: usize::MAX, kind: PktKind::Obss, l4: 0, t_enq: self.now };
                self.enqueue_bounded(o.node, None, pkt);
                let gap = self.exp_sample(o.frame_us / o.load);
                self.schedule(self.now + ns(gap).max(1), Ev::ObssGen { idx });
            }
            Ev::LossDetect { flow } => {
                let now = self.now;
                let rtt = ns(2.0 * self.flows[flow].one_way_us);
                let recovery = self.cfg.loss_recovery;
                let f = &mut self.flows[flow];
                f.outstanding = f.outstanding.saturating_sub(1);
                if recovery && now >= f.recovery_until {
                    f.cwnd = (f.cwnd / 2.0).max(1.0);
                    f.recovery_until = now + rtt + ns(1000.0);
                }
                self.server_pump(flow);
            }
            Ev::LinkChange { idx } => {
                let c = &self.cfg.link_schedule[idx];
                self.link_loss[c.sta] = Some(c.loss);
                if let Some(r) = c.rate_mbps {
                    self.link_rate[c.sta] = r;
                }
            }
        }
    }

    fn udp_gap(&mut self, flow: usize) -> Ns {
        let f = &self.flows[flow];
        let (m, p) = (f.interval_us, f.poisson);
        if p {
            let v = self.exp_sample(m);
            ns(v)
        } else {
            ns(m)
        }
    }

    fn enqueue_bounded(&mut self, node: usize, sta: Option<usize>, pkt: Pkt) {
        let n = &mut self.nodes[node];
        if n.bounded_queued >= self.cfg.udp_queue_limit {
            return;
        }
        n.bounded_queued += 1;
        match sta {
            Some(s) => n.dq[s].push_back(pkt),
            None => n.q.push_back(pkt),
        }
        self.ensure_contending(node);
    }

    fn count_delivery(&mut self, flow: usize, bytes: u32) {
        if self.now >= self.warmup {
            self.flows[flow].delivered += bytes as u64;
        }
    }

    // ---- TCP ----

    fn window(&self, flow: usize) -> u32 {
        let f = &self.flows[flow];
        (f.cwnd.floor() as u32).clamp(1, f.w_max)
    }

    fn server_pump(&mut self, flow: usize) {
        while self.flows[flow].outstanding < self.window(flow) {
            let f = &mut self.flows[flow];
            f.outstanding += 1;
            f.max_outstanding = f.max_outstanding.max(f.outstanding);
            let lost = self.cfg.dl_loss_p > 0.0 && self.rng.random::<f64>() < self.cfg.dl_loss_p;
            let d = self.one_way(flow);
            if lost {
                let back = self.one_way(flow);
                self.schedule(self.now + d + back, Ev::LossDetect { flow });
            } else {
                self.schedule(self.now + d, Ev::ApIngress { flow, ack: None });
            }
        }
    }

    fn sta_pump(&mut self, flow: usize) {
        let node = self.flows[flow].sta + 1;
        while self.flows[flow].outstanding < self.window(flow) {
            let f = &mut self.flows[flow];
            f.outstanding += 1;
            f.max_outstanding = f.max_outstanding.max(f.outstanding);
            let pkt = Pkt { flow, kind: PktKind::Seg, l4: self.cfg.seg_bytes, t_enq: self.now };
            self.nodes[node].q.push_back(pkt);
        }
        self.ensure_contending(node);
    }

    fn ack_credit(&mut self, flow: usize, credit: u32) {
        let f = &mut self.flows[flow];
        f.outstanding = f.outstanding.saturating_sub(credit);
        if f.cwnd < f.w_max as f64 {
            f.cwnd = (f.cwnd + credit as f64 / f.cwnd).min(f.w_max as f64);
        }
    }

    fn arm_delack(&mut self, flow: usize) {
        let f = &mut self.flows[flow];
        if f.delack_armed {
            return;
        }
        f.delack_armed = true;
        f.delack_gen += 1;
        let gen = f.delack_gen;
        self.schedule(self.now + ns(self.cfg.delack_us), Ev::DelAck { flow, gen });
    }

    fn emit_ack(&mut self, flow: usize) {
        let f = &mut self.flows[flow];
        let credit = f.rx_pending;
        f.rx_pending = 0;
        f.delack_armed = false;
        f.delack_gen += 1;
        match f.kind {
            FlowKind::TcpDown => {
                let node = f.sta + 1;
                self.nodes[node].q.push_back(Pkt { flow, kind: PktKind::Ack(credit), l4: 0, t_enq: self.now });
                self.ensure_contending(node);
            }
            FlowKind::TcpUp => {
                let d = self.one_way(flow);
                self.schedule(self.now + d, Ev::ApIngress { flow, ack: Some(credit) });
            }
            _ => {}
        }
    }

    fn deliver(&mut self, pkt: Pkt) {
        let flow = pkt.flow;
        match (self.flows[flow].kind, pkt.kind) {
            (FlowKind::TcpDown, PktKind::Seg) => {
                self.count_delivery(flow, pkt.l4);
                let f = &mut self.flows[flow];
                f.rx_pending += 1;
                if f.rx_pending >= f.thinning {
                    self.emit_ack(flow);
                } else {
                    self.arm_delack(flow);
                }
            }
            (FlowKind::TcpDown, PktKind::Ack(c)) => {
                let d = self.one_way(flow);
                self.schedule(self.now + d, Ev::ServerAck { flow, credit: c });
            }
            (FlowKind::TcpUp, PktKind::Seg) => {
                let d = self.one_way(flow);
                self.schedule(self.now + d, Ev::ServerData { flow });
            }
            (FlowKind::TcpUp, PktKind::Ack(c)) => {
                self.ack_credit(flow, c);
                self.sta_pump(flow);
            }
            (_, PktKind::Udp) => self.count_delivery(flow, pkt.l4),
            _ => {}
        }
    }

    // ---- MAC ----

    fn draw_backoff(&mut self, node: usize) -> Ns {
        let cw = self.nodes[node].cw as f64;
        let sigma = self.cfg.sigma_us;
        match (self.cfg.backoff_kind, self.cfg.collision_free) {
            (BackoffKind::Uniform, false) => {
                let slots = self.rng.random_range(0..self.nodes[node].cw);
                ns(slots as f64 * sigma)
            }
            (BackoffKind::Uniform, true) => {
                let u: f64 = self.rng.random();
                ns(u * (cw - 1.0) * sigma)
            }
            (BackoffKind::Exponential, _) => {
                let v = self.exp_sample(cw * sigma / 2.0);
                ns(v)
            }
        }
    }

    fn slotted(&self) -> bool {
        self.cfg.backoff_kind == BackoffKind::Uniform && !self.cfg.collision_free
    }

    fn ensure_contending(&mut self, node: usize) {
        let n = &self.nodes[node];
        if n.contending || n.transmitting || !n.has_work() {
            return;
        }
        self.start_contention(node, true);
    }

    fn start_contention(&mut self, node: usize, fresh: bool) {
        let now = self.now;
        let rem = self.draw_backoff(node);
        let n = &mut self.nodes[node];
        n.contending = true;
        if fresh {
            n.contend_start = now;
            n.countdown_ns = 0;
            n.failed_ns = 0;
            n.ifs_ns = 0;
        }
        n.rem = rem;
        n.resume_at = None;
        n.ifs_pending = true;
        n.ifs_resume = false;
        self.try_resume(node);
    }

    fn try_resume(&mut self, node: usize) {
        let difs = ns(self.cfg.difs_us);
        let now = self.now;
        let n = &mut self.nodes[node];
        if !n.contending || n.transmitting || n.busy > 0 || n.resume_at.is_some() {
            return;
        }
        let r = (n.idle_since + difs).max(now);
        // one IFS per attempt; waits after later busy periods are deferral
        n.ifs_resume = n.ifs_pending;
        if n.ifs_pending {
            n.ifs_ns += r - now;
            n.ifs_pending = false;
        }
        n.resume_at = Some(r);
        n.gen += 1;
        let (gen, at) = (n.gen, r + n.rem);
        self.schedule(at, Ev::BackoffExpire { node, gen });
    }

    fn freeze(&mut self, node: usize) {
        let now = self.now;
        let slot = ns(self.cfg.sigma_us);
        let slotted = self.slotted();
        let collision_free = self.cfg.collision_free;
        let n = &mut self.nodes[node];
        let Some(r) = n.resume_at else { return };
        if now < r {
            if n.ifs_resume {
                n.ifs_ns -= r - now;
                n.ifs_pending = true;
            }
        } else {
            if !collision_free && now >= r + n.rem {
                // expires this very instant: it transmits and collides
                return;
            }
            let elapsed = now - r;
            let used = if slotted { elapsed / slot * slot } else { elapsed }.min(n.rem);
            n.countdown_ns += used;
            n.rem -= used;
        }
        n.resume_at = None;
        n.gen += 1;
    }

    fn rate_of(&self, sta_node: usize) -> f64 {
        self.link_rate[sta_node - 1]
    }

    fn loss(&self, a: usize, b: usize) -> f64 {
        let sta = match (a, b) {
            (0, s) | (s, 0) if s >= 1 && s <= self.n_sta => Some(s - 1),
            _ => None,
        };
        sta.and_then(|s| self.link_loss[s]).unwrap_or(self.topo.loss[a][b])
    }

    fn form_batch(&mut self, node: usize) {
        let role = self.nodes[node].role.unwrap_or(Role::Sta);
        let start = self.nodes[node].contend_start;
        let take = |q: &mut VecDeque<Pkt>, limit: u32| -> Vec<(Pkt, Ns)> {
            let n = if limit == UNLIMITED { q.len() } else { (limit as usize).min(q.len()) };
            q.drain(..n).map(|p| {
                let th = p.t_enq.max(start);
                (p, th)
            })
            .collect()
        };
        match role {
            Role::ObssNode => {
                let pkts = take(&mut self.nodes[node].q, 1);
                self.nodes[node].batch = vec![Group { dest: None, pkts }];
            }
            Role::Sta => {
                let pkts = take(&mut self.nodes[node].q, self.cfg.b_sta);
                self.nodes[node].batch = vec![Group { dest: Some(0), pkts }];
            }
            Role::Ap => {
                let backlogged: Vec<usize> =
                    (0..self.n_sta).filter(|&s| !self.nodes[0].dq[s].is_empty()).collect();
                if backlogged.is_empty() {
                    return;
                }
                let chosen: Vec<usize> = if self.cfg.n_ap > 1 && backlogged.len() >= 2 {
                    let h = (self.cfg.n_ap as usize).min(backlogged.len());
                    let mut c: Vec<usize> = backlogged.choose_multiple(&mut self.rng, h).copied().collect();
                    c.sort_unstable();
                    c
                } else {
                    let rr = self.nodes[0].rr;
                    let s = backlogged.iter().copied().find(|&s| s >= rr).unwrap_or(backlogged[0]);
                    self.nodes[0].rr = (s + 1) % self.n_sta;
                    vec![s]
                };
                let b_ap = self.cfg.b_ap;
                let ap = &mut self.nodes[0];
                ap.batch = chosen
                    .into_iter()
                    .map(|s| Group { dest: Some(s + 1), pkts: take(&mut ap.dq[s], b_ap) })
                    .collect();
            }
        }
        let n = &mut self.nodes[node];
        let bounded = n.batch.iter().flat_map(|g| &g.pkts).filter(|(p, _)| matches!(p.kind, PktKind::Udp | PktKind::Obss)).count();
        n.bounded_queued -= bounded;
    }

    fn duration_us(&self, node: usize) -> f64 {
        let n = &self.nodes[node];
        if n.role == Some(Role::ObssNode) {
            return self.cfg.obss.iter().find(|o| o.node == node).map_or(1000.0, |o| o.frame_us);
        }
        let mut stream = Vec::with_capacity(n.batch.len());
        let mut max_frames = 0;
        for g in &n.batch {
            let bytes: u64 = g.pkts.iter().map(|(p, _)| self.phy.mpdu_bytes(p.l4) as u64).sum();
            let sta_node = if node == 0 { g.dest.unwrap_or(1) } else { node };
            stream.push((bytes, g.pkts.len() as u32, self.rate_of(sta_node)));
            max_frames = max_frames.max(g.pkts.len() as u32);
        }
        if node != 0 || self.cfg.n_ap == 1 {
            let (bytes, frames, rate) = stream[0];
            return self.phy.su_exchange_us(bytes, frames, rate);
        }
        let h = stream.len() as u32;
        let data = stream.iter().map(|&(b, _, r)| self.phy.payload_us(b, r)).fold(0.0, f64::max);
        self.phy.sounding_us(h) + self.phy.sifs_us + self.phy.data_preamble_us + data + self.phy.mu_ack_phase_us(h)
    }

    fn begin_tx(&mut self, node: usize) {
        if self.nodes[node].batch.is_empty() {
            self.form_batch(node);
        }
        if self.nodes[node].batch.iter().all(|g| g.pkts.is_empty()) {
            self.nodes[node].batch.clear();
            self.nodes[node].contending = false;
            return;
        }
        let now = self.now;
        let dur = ns(self.duration_us(node));
        {
            let n = &mut self.nodes[node];
            n.attempts += 1;
            n.stats.attempts += 1;
            n.contending = false;
            n.transmitting = true;
        }
        let mut tx = Tx { src: node, start: now, end: now + dur, groups: self.nodes[node].batch.len(), corrupted: Vec::new() };
        let sense = &self.topo.sense;
        let my_rx: Vec<usize> = tx.receivers(&self.nodes).collect();
        for &id in &self.active {
            let other = self.txs[id].as_ref().expect("active tx");
            let o_src = other.src;
            let o_rx: Vec<usize> = other.receivers(&self.nodes).collect();
            for r in o_rx {
                if sense[node][r] {
                    self.txs[id].as_mut().expect("active tx").corrupted.push(r);
                }
            }
            for &r in &my_rx {
                if sense[o_src][r] {
                    tx.corrupted.push(r);
                }
            }
        }
        let id = match self.free_tx.pop() {
            Some(i) => {
                self.txs[i] = Some(tx);
                i
            }
            None => {
                self.txs.push(Some(tx));
                self.txs.len() - 1
            }
        };
        self.active.push(id);
        for j in 0..self.nodes.len() {
            if j != node && sense[node][j] {
                self.nodes[j].busy += 1;
                if self.nodes[j].busy == 1 {
                    self.freeze(j);
                }
            }
        }
        self.schedule(now + dur, Ev::TxEnd { tx: id });
    }

    fn end_tx(&mut self, id: usize) {
        let tx = self.txs[id].take().expect("tx ended twice");
        self.free_tx.push(id);
        self.active.retain(|&a| a != id);
        let now = self.now;
        let src = tx.src;
        let mut woke = Vec::new();
        for j in 0..self.nodes.len() {
            if j != src && self.topo.sense[src][j] {
                let n = &mut self.nodes[j];
                n.busy -= 1;
                if n.busy == 0 {
                    n.idle_since = now;
                    woke.push(j);
                }
            }
        }
        {
            let n = &mut self.nodes[src];
            n.transmitting = false;
            n.idle_since = now;
        }
        debug_assert_eq!(tx.groups, self.nodes[src].batch.len());

        let batch = std::mem::take(&mut self.nodes[src].batch);
        let mut failed = Vec::new();
        let mut delivered = Vec::new();
        let role = self.nodes[src].role.unwrap_or(Role::Sta);
        let retry = self.nodes[src].attempts > 1;
        if src == 0 {
            self.out.aggregation.push(AggSample {
                t_us: ns_to_us(tx.start),
                stations: batch.len() as u32,
                frames: batch.iter().map(|g| g.pkts.len() as u32).sum(),
            });
        }
        for g in batch {
            let ok = match g.dest {
                None => true,
                Some(d) => {
                    let p = self.loss(src, d);
                    !tx.corrupted.contains(&d) && (p <= 0.0 || self.rng.random::<f64>() >= p)
                }
            };
            self.log_group(&tx, role, &g, ok, retry);
            if ok {
                delivered.push(g);
            } else {
                failed.push(g);
            }
        }
        let any_failed = !failed.is_empty();
        {
            let n = &mut self.nodes[src];
            if any_failed {
                n.stats.failures += 1;
                n.failed_ns += tx.end - tx.start;
                n.n_retx += 1;
                n.cw = (n.cw * 2).min(self.cfg.cw_max);
                if n.attempts > self.cfg.retry_limit {
                    n.cw = self.cfg.w0;
                    n.attempts = 0;
                }
                n.batch = failed;
            } else {
                n.stats.successes += 1;
                n.cw = self.cfg.w0;
                n.attempts = 0;
                n.n_retx = 0;
            }
        }
        for g in delivered {
            for (p, _) in g.pkts {
                if p.kind != PktKind::Obss {
                    self.deliver(p);
                }
            }
        }
        if any_failed {
            self.start_contention(src, false);
        } else {
            self.ensure_contending(src);
        }
        for j in woke {
            self.try_resume(j);
        }
    }

    fn log_group(&mut self, tx: &Tx, role: Role, g: &Group, ok: bool, retry: bool) {
        if !self.cfg.record_logs {
            return;
        }
        let (ts_start, ts_end) = (ns_to_us(tx.start), ns_to_us(tx.end));
        match role {
            Role::ObssNode => {
                if self.topo.sense[0][tx.src] {
                    let dur = (tx.end - tx.start) as f64 / 1000.0;
                    self.out.ap_log.push(PacketRecord {
                        ts_start,
                        ts_end,
                        direction: Direction::ObssOverheard,
                        src_addr: node_addr(tx.src, self.n_sta),
                        dst_addr: "ff:ff:ff:ff:ff:ff".into(),
                        src_net: None,
                        dst_net: None,
                        l4_payload_bytes: 0,
                        frame_bytes: ((dur * self.cfg.phy_rate_per_stream / 8.0).round() as u64).max(1),
                        phy_rate: self.cfg.phy_rate_per_stream,
                        retry_flag: false,
                        success: true,
                        frames_in_txop: 1,
                    });
                }
            }
            Role::Sta => {
                if !ok {
                    return;
                }
                let s = tx.src - 1;
                let n = &self.nodes[tx.src];
                let access = tx.start - n.contend_start;
                let defer = access.saturating_sub(n.countdown_ns + n.failed_ns + n.ifs_ns);
                for (p, th) in &g.pkts {
                    self.out.ground_truth.push(GroundTruthRecord {
                        sta: node_addr(tx.src, self.n_sta),
                        flow: p.flow as u32,
                        t_enq: ns_to_us(p.t_enq),
                        t_head: ns_to_us(*th),
                        ts_start,
                        ts_end,
                        n_retx: n.n_retx,
                        defer_us: ns_to_us(defer),
                    });
                }
                let rate = self.rate_of(tx.src);
                for (flow, l4, frames) in by_flow(&g.pkts) {
                    self.out.ap_log.push(PacketRecord {
                        ts_start,
                        ts_end,
                        direction: Direction::Uplink,
                        src_addr: node_addr(tx.src, self.n_sta),
                        dst_addr: ap_addr(),
                        src_net: Some(sta_net(s)),
                        dst_net: Some(flow_net(flow)),
                        l4_payload_bytes: l4,
                        frame_bytes: l4 + frames as u64 * self.phy.mpdu_overhead_bytes as u64,
                        phy_rate: rate,
                        retry_flag: retry,
                        success: true,
                        frames_in_txop: frames,
                    });
                }
            }
            Role::Ap => {
                let d = g.dest.unwrap_or(1);
                let rate = self.rate_of(d);
                for (flow, l4, frames) in by_flow(&g.pkts) {
                    self.out.ap_log.push(PacketRecord {
                        ts_start,
                        ts_end,
                        direction: Direction::Downlink,
                        src_addr: ap_addr(),
                        dst_addr: node_addr(d, self.n_sta),
                        src_net: Some(flow_net(flow)),
                        dst_net: Some(sta_net(d - 1)),
                        l4_payload_bytes: l4,
                        frame_bytes: l4 + frames as u64 * self.phy.mpdu_overhead_bytes as u64,
                        phy_rate: rate,
                        retry_flag: retry,
                        success: ok,
                        frames_in_txop: frames,
                    });
                }
                if ok {
                    self.out.ap_access.push(ApAccessRecord {
                        ts_contend: ns_to_us(self.nodes[0].contend_start),
                        ts_start,
                        dst_addr: node_addr(d, self.n_sta),
                    });
                }
            }
        }
    }
}

/// (flow, payload, frames) per flow, in order of first appearance.
fn by_flow(pkts: &[(Pkt, Ns)]) -> Vec<(usize, u64, u32)> {
    let mut v: Vec<(usize, u64, u32)> = Vec::new();
    for (p, _) in pkts {
        match v.iter_mut().find(|e| e.0 == p.flow) {
            Some(e) => {
                e.1 += p.l4 as u64;
                e.2 += 1;
            }
            None => v.push((p.flow, p.l4 as u64, 1)),
        }
    }
    v
}
