//! Key-exchange orchestration as a deterministic event handler.
//!
//! A `KEY_EXCHANGE_REQUEST` first asks the relay for a slot. Once granted,
//! the requester's basis delay and the relay port map are reconfigured; only
//! after every edit is acknowledged are the session flows installed and
//! `KEY_EXCHANGE_READY` sent to both users.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::timebin::{validate_stations, UserStation};

use super::device::ConfigDelta;
use super::flow::{
    Action, FieldMatch, FlowEntry, FlowMatch, Packet, UserId, KEY_EXCHANGE_ERROR, KEY_EXCHANGE_READY,
    KEY_EXCHANGE_REQUEST,
};
use super::relay::UserPair;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UserSpec {
    pub id: UserId,
    pub device_id: String,
    pub switch_port: u32,
    pub relay_port: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControllerConfig {
    pub users: Vec<UserSpec>,
    pub relay_device_id: String,
    pub window_ps: f64,
    pub session_duration_s: f64,
}

impl ControllerConfig {
    pub fn user(&self, id: &str) -> Option<&UserSpec> {
        self.users.iter().find(|u| u.id == id)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Event {
    PacketIn(Packet),
    ConfigAck {
        device_id: String,
        txn: u64,
        version: u64,
    },
    ConfigNack {
        device_id: String,
        txn: u64,
        reason: String,
    },
    SlotGrant {
        pair: UserPair,
        slot: usize,
    },
    SlotQueued {
        pair: UserPair,
        position: usize,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub enum Command {
    RequestSlot {
        pair: UserPair,
        duration_s: f64,
    },
    ReleaseSlot {
        slot: usize,
    },
    EditConfig {
        txn: u64,
        channel: u32,
        device_id: String,
        delta: ConfigDelta,
    },
    InstallFlow(FlowEntry),
    SendPacket(Packet),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    AwaitingSlot,
    Configuring,
    Ready,
}

/// Contents of a `KEY_EXCHANGE_READY` payload.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReadyInfo {
    pub slot: usize,
    pub peer: UserId,
    pub delay_ps: i64,
    pub peer_delay_ps: i64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Exchange {
    pub channel: u32,
    pub requester: UserId,
    pub peer: UserId,
    pub slot: Option<usize>,
    pub phase: Phase,
    /// The request had to wait for a slot.
    pub deferred: bool,
    pending: BTreeSet<u64>,
}

/// First delay for `current` that keeps all four signatures apart from a
/// peer at `peer`: the current value, twice the peer's, or ten windows
/// beyond it, then a search upward in whole windows.
pub fn compatible_delay(current: i64, peer: i64, window_ps: f64) -> Option<i64> {
    let w = window_ps.ceil() as i64;
    let ok = |d: i64| {
        validate_stations(
            &UserStation::new("requester", d as f64, 0),
            &UserStation::new("peer", peer as f64, 0),
            window_ps,
        )
        .is_ok()
    };
    [current, 2 * peer, peer + 10 * w]
        .into_iter()
        .chain((5..200).map(|k| k * w))
        .find(|&d| ok(d))
}

#[derive(Debug, Clone)]
pub struct Controller {
    cfg: ControllerConfig,
    delays: BTreeMap<UserId, i64>,
    next_channel: u32,
    next_txn: u64,
    exchanges: BTreeMap<UserPair, Exchange>,
    txns: BTreeMap<u64, (UserPair, ConfigDelta, String)>,
}

impl Controller {
    /// `delays` is the controller's inventory of each user's basis delay.
    pub fn new(cfg: ControllerConfig, delays: BTreeMap<UserId, i64>) -> Self {
        Self {
            cfg,
            delays,
            next_channel: 1,
            next_txn: 1,
            exchanges: BTreeMap::new(),
            txns: BTreeMap::new(),
        }
    }

    pub fn config(&self) -> &ControllerConfig {
        &self.cfg
    }

    pub fn exchange(&self, pair: &UserPair) -> Option<&Exchange> {
        self.exchanges.get(pair)
    }

    pub fn exchanges(&self) -> impl Iterator<Item = (&UserPair, &Exchange)> {
        self.exchanges.iter()
    }

    pub fn delay_of(&self, user: &str) -> Option<i64> {
        self.delays.get(user).copied()
    }

    /// Flows the switch needs before any request can reach the controller.
    pub fn bootstrap_flows(&self) -> Vec<FlowEntry> {
        vec![FlowEntry::intercept_qcom(1000)]
    }

    pub fn controller_handle(&mut self, event: Event) -> Vec<Command> {
        match event {
            Event::PacketIn(p) => self.on_packet(p),
            Event::SlotGrant { pair, slot } => self.on_grant(pair, slot),
            Event::SlotQueued { pair, .. } => {
                if let Some(x) = self.exchanges.get_mut(&pair) {
                    x.deferred = true;
                }
                Vec::new()
            }
            Event::ConfigAck { txn, .. } => self.on_ack(txn),
            Event::ConfigNack { txn, reason, device_id } => self.on_nack(txn, &device_id, &reason),
        }
    }

    fn error_to(&self, user: &str, peer: &str, reason: &str) -> Command {
        Command::SendPacket(
            Packet::classical("controller", user)
                .with_qcom(KEY_EXCHANGE_ERROR)
                .with_payload(format!("{{\"peer\":{:?},\"reason\":{:?}}}", peer, reason)),
        )
    }

    fn on_packet(&mut self, p: Packet) -> Vec<Command> {
        if p.qcom.as_deref() != Some(KEY_EXCHANGE_REQUEST) {
            // nothing else is routed through the controller
            return Vec::new();
        }
        for u in [&p.src, &p.dst] {
            if self.cfg.user(u).is_none() {
                return vec![self.error_to(&p.src, &p.dst, &format!("unknown user `{u}`"))];
            }
        }
        let pair = match UserPair::new(p.src.clone(), p.dst.clone()) {
            Ok(pair) => pair,
            Err(e) => return vec![self.error_to(&p.src, &p.dst, &e.to_string())],
        };
        if let Some(x) = self.exchanges.get(&pair) {
            return match x.phase {
                Phase::Ready => self.ready_packets(&pair),
                _ => Vec::new(),
            };
        }
        let channel = self.next_channel;
        self.next_channel += 1;
        self.exchanges.insert(
            pair.clone(),
            Exchange {
                channel,
                requester: p.src.clone(),
                peer: p.dst.clone(),
                slot: None,
                phase: Phase::AwaitingSlot,
                deferred: false,
                pending: BTreeSet::new(),
            },
        );
        vec![Command::RequestSlot {
            pair,
            duration_s: self.cfg.session_duration_s,
        }]
    }

    fn edit(&mut self, pair: &UserPair, device_id: String, delta: ConfigDelta) -> Command {
        let txn = self.next_txn;
        self.next_txn += 1;
        self.txns.insert(txn, (pair.clone(), delta.clone(), device_id.clone()));
        let x = self.exchanges.get_mut(pair).expect("edits belong to a live exchange");
        x.pending.insert(txn);
        Command::EditConfig {
            txn,
            channel: x.channel,
            device_id,
            delta,
        }
    }

    fn on_grant(&mut self, pair: UserPair, slot: usize) -> Vec<Command> {
        let Some(x) = self.exchanges.get_mut(&pair) else {
            // grant for an exchange we already gave up on
            return vec![Command::ReleaseSlot { slot }];
        };
        if x.phase != Phase::AwaitingSlot {
            return Vec::new();
        }
        x.slot = Some(slot);
        x.phase = Phase::Configuring;
        let (requester, peer) = (x.requester.clone(), x.peer.clone());

        let current = self.delays.get(&requester).copied().unwrap_or(0);
        let peer_delay = self.delays.get(&peer).copied().unwrap_or(0);
        let Some(delay) = compatible_delay(current, peer_delay, self.cfg.window_ps) else {
            let reason = format!("no basis delay compatible with `{peer}` at {peer_delay} ps");
            self.exchanges.remove(&pair);
            return vec![Command::ReleaseSlot { slot }, self.error_to(&requester, &peer, &reason)];
        };
        let r = self.cfg.user(&requester).expect("checked on request").clone();
        let q = self.cfg.user(&peer).expect("checked on request").clone();
        vec![
            self.edit(&pair, r.device_id.clone(), ConfigDelta::delay(delay)),
            self.edit(
                &pair,
                self.cfg.relay_device_id.clone(),
                ConfigDelta::port_map(vec![(r.id.clone(), r.relay_port), (q.id.clone(), q.relay_port)]),
            ),
        ]
    }

    fn on_ack(&mut self, txn: u64) -> Vec<Command> {
        let Some((pair, delta, device_id)) = self.txns.remove(&txn) else {
            return Vec::new();
        };
        if let Some(d) = delta.delay_ps {
            if let Some(user) = self.cfg.users.iter().find(|u| u.device_id == device_id) {
                self.delays.insert(user.id.clone(), d);
            }
        }
        let Some(x) = self.exchanges.get_mut(&pair) else {
            return Vec::new();
        };
        x.pending.remove(&txn);
        if x.phase != Phase::Configuring || !x.pending.is_empty() {
            return Vec::new();
        }
        x.phase = Phase::Ready;
        let (channel, requester, peer) = (x.channel, x.requester.clone(), x.peer.clone());
        let mut out = Vec::new();
        for (from, to) in [(&requester, &peer), (&peer, &requester)] {
            let port = self.cfg.user(to).expect("known").switch_port;
            out.push(Command::InstallFlow(FlowEntry::new(
                500,
                FlowMatch {
                    src: Some(from.clone()),
                    dst: Some(to.clone()),
                    qchannel: FieldMatch::Equals(channel),
                    qcom: FieldMatch::Absent,
                },
                Action::ForwardTo(port),
            )));
        }
        out.extend(self.ready_packets(&pair));
        out
    }

    fn on_nack(&mut self, txn: u64, device_id: &str, reason: &str) -> Vec<Command> {
        let Some((pair, _, _)) = self.txns.remove(&txn) else {
            return Vec::new();
        };
        let Some(x) = self.exchanges.remove(&pair) else {
            return Vec::new();
        };
        for t in &x.pending {
            self.txns.remove(t);
        }
        let mut out = Vec::new();
        if let Some(slot) = x.slot {
            out.push(Command::ReleaseSlot { slot });
        }
        out.push(self.error_to(
            &x.requester,
            &x.peer,
            &format!("device `{device_id}` refused configuration: {reason}"),
        ));
        out
    }

    fn ready_packets(&self, pair: &UserPair) -> Vec<Command> {
        let x = &self.exchanges[pair];
        let slot = x.slot.expect("ready exchanges hold a slot");
        [(&x.requester, &x.peer), (&x.peer, &x.requester)]
            .into_iter()
            .map(|(to, other)| {
                let info = ReadyInfo {
                    slot,
                    peer: other.clone(),
                    delay_ps: self.delays.get(to).copied().unwrap_or(0),
                    peer_delay_ps: self.delays.get(other).copied().unwrap_or(0),
                };
                Command::SendPacket(
                    Packet::classical("controller", to.clone())
                        .with_qcom(KEY_EXCHANGE_READY)
                        .with_qchannel(x.channel)
                        .with_payload(serde_json::to_string(&info).expect("plain struct")),
                )
            })
            .collect()
    }
}
