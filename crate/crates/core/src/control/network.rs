//! Switch, controller, devices, relay and users as actors on a seeded
//! message bus.
//!
//! Messages between one sender and one receiver arrive in order. Which
//! sender/receiver channel goes next is drawn from the transport RNG, so
//! acks and grants interleave differently per seed but reproducibly.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::controller::{Command, Controller, ControllerConfig, Event};
use super::device::{ConfigDelta, ConfigReply, DeviceConfig, DeviceRegistry, DeviceRole};
use super::flow::{switch_process, Action, FlowEntry, FlowTable, Packet, UserId, KEY_EXCHANGE_READY};
use super::relay::{Allocation, TimeSlotTable, UserPair};

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Actor {
    User(UserId),
    Switch,
    Controller,
    Device(String),
    Relay,
}

impl fmt::Display for Actor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Actor::User(u) => write!(f, "user:{u}"),
            Actor::Switch => f.write_str("switch"),
            Actor::Controller => f.write_str("controller"),
            Actor::Device(d) => write!(f, "device:{d}"),
            Actor::Relay => f.write_str("relay"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Message {
    Packet(Packet),
    PacketIn(Packet),
    PacketOut(Packet),
    InstallFlow(FlowEntry),
    EditConfig { txn: u64, channel: u32, delta: ConfigDelta },
    ConfigAck { txn: u64, version: u64 },
    ConfigNack { txn: u64, reason: String },
    RequestSlot { pair: UserPair, duration_s: f64 },
    ReleaseSlot { slot: usize },
    SlotGrant { pair: UserPair, slot: usize },
    SlotQueued { pair: UserPair, position: usize },
}

impl Message {
    pub fn kind(&self) -> &'static str {
        match self {
            Message::Packet(_) => "packet",
            Message::PacketIn(_) => "packet_in",
            Message::PacketOut(_) => "packet_out",
            Message::InstallFlow(_) => "install_flow",
            Message::EditConfig { .. } => "edit_config",
            Message::ConfigAck { .. } => "config_ack",
            Message::ConfigNack { .. } => "config_nack",
            Message::RequestSlot { .. } => "request_slot",
            Message::ReleaseSlot { .. } => "release_slot",
            Message::SlotGrant { .. } => "slot_grant",
            Message::SlotQueued { .. } => "slot_queued",
        }
    }

    fn detail(&self) -> String {
        fn pkt(p: &Packet) -> String {
            format!(
                "{}->{} qcom={} qchannel={}",
                p.src,
                p.dst,
                p.qcom.as_deref().unwrap_or("-"),
                p.qchannel.map_or("-".to_string(), |c| c.to_string())
            )
        }
        match self {
            Message::Packet(p) | Message::PacketIn(p) | Message::PacketOut(p) => pkt(p),
            Message::InstallFlow(e) => format!("priority={} action={:?}", e.priority, e.action),
            Message::EditConfig { delta, .. } => {
                let mut parts = Vec::new();
                if let Some(d) = delta.delay_ps {
                    parts.push(format!("delay_ps={d}"));
                }
                if let Some(m) = &delta.relay_port_map {
                    let m: Vec<String> = m.iter().map(|(u, p)| format!("{u}:{p}")).collect();
                    parts.push(format!("relay_port_map={}", m.join("|")));
                }
                if let Some(p) = delta.lc_phase {
                    parts.push(format!("lc_phase={p:.6}"));
                }
                parts.join(" ")
            }
            Message::ConfigAck { version, .. } => format!("version={version}"),
            Message::ConfigNack { reason, .. } => format!("reason={reason}"),
            Message::RequestSlot { pair, duration_s } => format!("pair={pair} duration_s={duration_s}"),
            Message::ReleaseSlot { slot } => format!("slot={slot}"),
            Message::SlotGrant { pair, slot } => format!("pair={pair} slot={slot}"),
            Message::SlotQueued { pair, position } => format!("pair={pair} position={position}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TraceEntry {
    pub step: u64,
    pub from: String,
    pub to: String,
    pub kind: &'static str,
    pub qchannel: Option<u32>,
    pub txn: Option<u64>,
    pub detail: String,
}

#[derive(Debug, Clone)]
struct Envelope {
    seq: u64,
    from: Actor,
    to: Actor,
    msg: Message,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkSetup {
    pub controller: ControllerConfig,
    /// Starting basis delay of each user's station.
    pub initial_delays: BTreeMap<UserId, i64>,
    #[serde(default)]
    pub flows: Vec<FlowEntry>,
    pub relay_slots: usize,
    pub slot_duration_s: f64,
    /// Pairs already holding relay slots at start.
    #[serde(default)]
    pub occupied: Vec<(UserId, UserId)>,
}

pub struct Network {
    switch: FlowTable,
    controller: Controller,
    registry: Arc<DeviceRegistry>,
    relay: TimeSlotTable,
    inboxes: BTreeMap<UserId, Vec<Packet>>,
    pending: Vec<Envelope>,
    next_seq: u64,
    rng: ChaCha8Rng,
    trace: Vec<TraceEntry>,
    step: u64,
    txn_channel: BTreeMap<u64, u32>,
}

impl Network {
    pub fn new(setup: &NetworkSetup, transport_seed: u64) -> Result<Self> {
        let cfg = &setup.controller;
        let registry = DeviceRegistry::new(cfg.window_ps);
        for u in &cfg.users {
            let mut dc = DeviceConfig::factory(u.device_id.clone());
            if let Some(&d) = setup.initial_delays.get(&u.id) {
                dc.delay_ps = d;
            }
            registry.register(DeviceRole::Station { user: u.id.clone() }, dc)?;
        }
        registry.register(DeviceRole::Relay, DeviceConfig::factory(cfg.relay_device_id.clone()))?;
        let delays = cfg
            .users
            .iter()
            .map(|u| Ok((u.id.clone(), registry.get_config(&u.device_id)?.delay_ps)))
            .collect::<Result<BTreeMap<_, _>>>()?;
        let controller = Controller::new(cfg.clone(), delays);
        let mut switch = FlowTable::new(controller.bootstrap_flows());
        for f in &setup.flows {
            switch.install(f.clone());
        }
        let mut relay = TimeSlotTable::new(setup.relay_slots, setup.slot_duration_s)?;
        for (a, b) in &setup.occupied {
            relay.allocate_slots(UserPair::new(a.clone(), b.clone())?, cfg.session_duration_s)?;
        }
        Ok(Self {
            switch,
            controller,
            registry: Arc::new(registry),
            relay,
            inboxes: cfg.users.iter().map(|u| (u.id.clone(), Vec::new())).collect(),
            pending: Vec::new(),
            next_seq: 0,
            rng: ChaCha8Rng::seed_from_u64(transport_seed),
            trace: Vec::new(),
            step: 0,
            txn_channel: BTreeMap::new(),
        })
    }

    pub fn controller(&self) -> &Controller {
        &self.controller
    }

    pub fn registry(&self) -> &Arc<DeviceRegistry> {
        &self.registry
    }

    pub fn relay(&self) -> &TimeSlotTable {
        &self.relay
    }

    pub fn flow_table(&self) -> &FlowTable {
        &self.switch
    }

    pub fn inbox(&self, user: &str) -> &[Packet] {
        self.inboxes.get(user).map_or(&[], Vec::as_slice)
    }

    pub fn trace(&self) -> &[TraceEntry] {
        &self.trace
    }

    fn send(&mut self, from: Actor, to: Actor, msg: Message) {
        self.pending.push(Envelope {
            seq: self.next_seq,
            from,
            to,
            msg,
        });
        self.next_seq += 1;
    }

    /// A user hands `packet` to its switch port.
    pub fn inject(&mut self, packet: Packet) {
        let from = Actor::User(packet.src.clone());
        self.send(from, Actor::Switch, Message::Packet(packet));
    }

    /// Ends the session in `slot`; a queued pair may take it over.
    pub fn end_session(&mut self, slot: usize) -> Result<()> {
        self.send(Actor::Controller, Actor::Relay, Message::ReleaseSlot { slot });
        Ok(())
    }

    pub fn is_idle(&self) -> bool {
        self.pending.is_empty()
    }

    /// Delivers messages until none are left; returns how many were
    /// delivered.
    pub fn run_until_idle(&mut self, max_steps: usize) -> Result<usize> {
        let mut delivered = 0;
        while !self.pending.is_empty() {
            if delivered == max_steps {
                return Err(Error::Orchestration(format!(
                    "message bus still busy after {max_steps} deliveries"
                )));
            }
            // heads of each (from, to) channel
            let mut heads: BTreeMap<(&Actor, &Actor), usize> = BTreeMap::new();
            for (i, e) in self.pending.iter().enumerate() {
                heads
                    .entry((&e.from, &e.to))
                    .and_modify(|j| {
                        if self.pending[*j].seq > e.seq {
                            *j = i
                        }
                    })
                    .or_insert(i);
            }
            let choices: Vec<usize> = heads.into_values().collect();
            let pick = choices[self.rng.random_range(0..choices.len())];
            let env = self.pending.remove(pick);
            self.deliver(env);
            delivered += 1;
        }
        Ok(delivered)
    }

    fn record(&mut self, env: &Envelope) {
        let (qchannel, txn) = match &env.msg {
            Message::Packet(p) | Message::PacketIn(p) | Message::PacketOut(p) => (p.qchannel, None),
            Message::EditConfig { txn, channel, .. } => (Some(*channel), Some(*txn)),
            Message::ConfigAck { txn, .. } | Message::ConfigNack { txn, .. } => {
                (self.txn_channel.get(txn).copied(), Some(*txn))
            }
            _ => (None, None),
        };
        self.trace.push(TraceEntry {
            step: self.step,
            from: env.from.to_string(),
            to: env.to.to_string(),
            kind: env.msg.kind(),
            qchannel,
            txn,
            detail: env.msg.detail(),
        });
        self.step += 1;
    }

    fn deliver(&mut self, env: Envelope) {
        self.record(&env);
        let Envelope { from, to, msg, .. } = env;
        match (to, msg) {
            (Actor::Switch, Message::Packet(p)) => match switch_process(&p, &self.switch) {
                Action::ForwardTo(port) => {
                    if let Some(u) = self.controller.config().users.iter().find(|u| u.switch_port == port) {
                        let u = u.id.clone();
                        self.send(Actor::Switch, Actor::User(u), Message::Packet(p));
                    }
                }
                Action::SendToController => self.send(Actor::Switch, Actor::Controller, Message::PacketIn(p)),
                Action::Drop => {}
            },
            (Actor::Switch, Message::PacketOut(p)) => {
                if self.inboxes.contains_key(&p.dst) {
                    let to = Actor::User(p.dst.clone());
                    self.send(Actor::Switch, to, Message::Packet(p));
                }
            }
            (Actor::Switch, Message::InstallFlow(e)) => self.switch.install(e),
            (Actor::User(u), Message::Packet(p)) => {
                self.inboxes.entry(u).or_default().push(p);
            }
            (Actor::Device(id), Message::EditConfig { txn, delta, .. }) => {
                let reply = match self.registry.edit_config(&id, &delta) {
                    ConfigReply::Ack { version } => Message::ConfigAck { txn, version },
                    ConfigReply::Nack { reason } => Message::ConfigNack { txn, reason },
                };
                self.send(Actor::Device(id), Actor::Controller, reply);
            }
            (Actor::Relay, Message::RequestSlot { pair, duration_s }) => {
                if let Ok(a) = self.relay.allocate_slots(pair.clone(), duration_s) {
                    let reply = match a {
                        Allocation::Granted { slot } => Message::SlotGrant { pair, slot },
                        Allocation::Queued { position } => Message::SlotQueued { pair, position },
                    };
                    self.send(Actor::Relay, Actor::Controller, reply);
                }
            }
            (Actor::Relay, Message::ReleaseSlot { slot }) => {
                if let Ok(Some((pair, slot))) = self.relay.release(slot) {
                    self.send(Actor::Relay, Actor::Controller, Message::SlotGrant { pair, slot });
                }
            }
            (Actor::Controller, msg) => {
                let event = match (msg, from) {
                    (Message::PacketIn(p), _) => Event::PacketIn(p),
                    (Message::ConfigAck { txn, version }, Actor::Device(device_id)) => Event::ConfigAck {
                        device_id,
                        txn,
                        version,
                    },
                    (Message::ConfigNack { txn, reason }, Actor::Device(device_id)) => {
                        Event::ConfigNack { device_id, txn, reason }
                    }
                    (Message::SlotGrant { pair, slot }, _) => Event::SlotGrant { pair, slot },
                    (Message::SlotQueued { pair, position }, _) => Event::SlotQueued { pair, position },
                    _ => return,
                };
                for cmd in self.controller.controller_handle(event) {
                    self.dispatch(cmd);
                }
            }
            _ => {}
        }
    }

    fn dispatch(&mut self, cmd: Command) {
        let (to, msg) = match cmd {
            Command::RequestSlot { pair, duration_s } => (Actor::Relay, Message::RequestSlot { pair, duration_s }),
            Command::ReleaseSlot { slot } => (Actor::Relay, Message::ReleaseSlot { slot }),
            Command::EditConfig {
                txn,
                channel,
                device_id,
                delta,
            } => {
                self.txn_channel.insert(txn, channel);
                (Actor::Device(device_id), Message::EditConfig { txn, channel, delta })
            }
            Command::InstallFlow(e) => (Actor::Switch, Message::InstallFlow(e)),
            Command::SendPacket(p) => (Actor::Switch, Message::PacketOut(p)),
        };
        self.send(Actor::Controller, to, msg);
    }
}

/// Checks on a delivery trace that every READY for a channel comes after
/// the acks of all config edits issued for that channel.
pub fn verify_ready_after_acks(trace: &[TraceEntry]) -> std::result::Result<(), String> {
    let mut edits: BTreeMap<u32, Vec<u64>> = BTreeMap::new();
    let mut acks: BTreeMap<u64, u64> = BTreeMap::new();
    for e in trace {
        match e.kind {
            "edit_config" => {
                if let (Some(c), Some(t)) = (e.qchannel, e.txn) {
                    edits.entry(c).or_default().push(t);
                }
            }
            "config_ack" => {
                if let Some(t) = e.txn {
                    acks.insert(t, e.step);
                }
            }
            "packet_out" | "packet" if e.detail.contains(&format!("qcom={KEY_EXCHANGE_READY}")) => {
                let Some(c) = e.qchannel else {
                    return Err(format!("step {}: READY without qchannel", e.step));
                };
                let txns = edits.get(&c).map(Vec::as_slice).unwrap_or(&[]);
                if txns.is_empty() {
                    return Err(format!("step {}: READY for channel {c} before any config edit", e.step));
                }
                for t in txns {
                    match acks.get(t) {
                        Some(&s) if s < e.step => {}
                        _ => return Err(format!("step {}: READY for channel {c} before ack of txn {t}", e.step)),
                    }
                }
            }
            _ => {}
        }
    }
    Ok(())
}

pub fn write_trace_csv<W: std::io::Write>(trace: &[TraceEntry], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["step", "from", "to", "kind", "qchannel", "txn", "detail"])?;
    for e in trace {
        w.write_record([
            e.step.to_string(),
            e.from.clone(),
            e.to.clone(),
            e.kind.to_string(),
            e.qchannel.map_or(String::new(), |c| c.to_string()),
            e.txn.map_or(String::new(), |t| t.to_string()),
            e.detail.clone(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
