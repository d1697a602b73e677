//! Netconf-like configuration store for the quantum devices.
//!
//! Every edit is validated and applied under one write lock, so a reader
//! sees either the previous acknowledged config or the new one.

use std::collections::BTreeMap;
use std::sync::RwLock;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::timebin::{validate_stations, UserStation};

use super::flow::UserId;

pub const FACTORY_DELAY_PS: i64 = 1000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviceConfig {
    pub device_id: String,
    pub delay_ps: i64,
    pub lc_phase: f64,
    pub waveplate_phase: f64,
    /// Users currently patched through the relay, with their relay ports.
    pub relay_port_map: Vec<(UserId, u32)>,
    pub version: u64,
}

impl DeviceConfig {
    pub fn factory(device_id: impl Into<String>) -> Self {
        Self {
            device_id: device_id.into(),
            delay_ps: FACTORY_DELAY_PS,
            lc_phase: 0.0,
            waveplate_phase: 0.0,
            relay_port_map: Vec::new(),
            version: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ConfigDelta {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delay_ps: Option<i64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lc_phase: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub waveplate_phase: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub relay_port_map: Option<Vec<(UserId, u32)>>,
}

impl ConfigDelta {
    pub fn delay(delay_ps: i64) -> Self {
        Self {
            delay_ps: Some(delay_ps),
            ..Default::default()
        }
    }

    pub fn port_map(map: Vec<(UserId, u32)>) -> Self {
        Self {
            relay_port_map: Some(map),
            ..Default::default()
        }
    }

    pub fn is_empty(&self) -> bool {
        self.delay_ps.is_none()
            && self.lc_phase.is_none()
            && self.waveplate_phase.is_none()
            && self.relay_port_map.is_none()
    }

    fn apply(&self, cfg: &mut DeviceConfig) {
        if let Some(d) = self.delay_ps {
            cfg.delay_ps = d;
        }
        if let Some(p) = self.lc_phase {
            cfg.lc_phase = p;
        }
        if let Some(p) = self.waveplate_phase {
            cfg.waveplate_phase = p;
        }
        if let Some(m) = &self.relay_port_map {
            cfg.relay_port_map = m.clone();
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConfigReply {
    Ack { version: u64 },
    Nack { reason: String },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum DeviceRole {
    Station { user: UserId },
    Relay,
}

#[derive(Debug, Clone)]
struct DeviceEntry {
    role: DeviceRole,
    config: DeviceConfig,
}

#[derive(Debug)]
pub struct DeviceRegistry {
    window_ps: f64,
    devices: RwLock<BTreeMap<String, DeviceEntry>>,
}

impl DeviceRegistry {
    pub fn new(window_ps: f64) -> Self {
        Self {
            window_ps,
            devices: RwLock::new(BTreeMap::new()),
        }
    }

    pub fn window_ps(&self) -> f64 {
        self.window_ps
    }

    pub fn register(&self, role: DeviceRole, config: DeviceConfig) -> Result<()> {
        let mut devices = self.devices.write().expect("registry lock poisoned");
        if devices.contains_key(&config.device_id) {
            return Err(Error::Config(format!("device `{}` registered twice", config.device_id)));
        }
        devices.insert(config.device_id.clone(), DeviceEntry { role, config });
        Ok(())
    }

    pub fn get_config(&self, device_id: &str) -> Result<DeviceConfig> {
        self.devices
            .read()
            .expect("registry lock poisoned")
            .get(device_id)
            .map(|e| e.config.clone())
            .ok_or_else(|| Error::UnknownDevice(device_id.to_string()))
    }

    pub fn device_ids(&self) -> Vec<String> {
        self.devices
            .read()
            .expect("registry lock poisoned")
            .keys()
            .cloned()
            .collect()
    }

    /// Station device of `user`.
    pub fn station_of(&self, user: &str) -> Option<String> {
        self.devices
            .read()
            .expect("registry lock poisoned")
            .iter()
            .find(|(_, e)| matches!(&e.role, DeviceRole::Station { user: u } if u == user))
            .map(|(id, _)| id.clone())
    }

    pub fn edit_config(&self, device_id: &str, delta: &ConfigDelta) -> ConfigReply {
        let mut devices = self.devices.write().expect("registry lock poisoned");
        let Some(entry) = devices.get(device_id) else {
            return ConfigReply::Nack {
                reason: format!("unknown device `{device_id}`"),
            };
        };
        if delta.is_empty() {
            return ConfigReply::Ack {
                version: entry.config.version,
            };
        }
        let mut next = entry.config.clone();
        delta.apply(&mut next);
        if let Err(reason) = self.check(&devices, &entry.role, &next) {
            return ConfigReply::Nack { reason };
        }
        next.version += 1;
        let version = next.version;
        devices.get_mut(device_id).expect("present").config = next;
        ConfigReply::Ack { version }
    }

    fn check(
        &self,
        devices: &BTreeMap<String, DeviceEntry>,
        role: &DeviceRole,
        next: &DeviceConfig,
    ) -> std::result::Result<(), String> {
        if !next.lc_phase.is_finite() || !next.waveplate_phase.is_finite() {
            return Err("phases must be finite".into());
        }
        match role {
            DeviceRole::Station { user } => {
                if (next.delay_ps as f64) <= 4.0 * self.window_ps {
                    return Err(format!(
                        "delay {} ps must exceed 4 x window ({} ps)",
                        next.delay_ps,
                        4.0 * self.window_ps
                    ));
                }
                for peer in paired_with(devices, user) {
                    let Some(peer_cfg) = station_config(devices, &peer) else {
                        continue;
                    };
                    let me = UserStation::new(user.clone(), next.delay_ps as f64, 0);
                    let them = UserStation::new(peer.clone(), peer_cfg.delay_ps as f64, 0);
                    if validate_stations(&me, &them, self.window_ps).is_err() {
                        return Err(format!(
                            "signature collision with paired user `{peer}` (delay {} ps)",
                            peer_cfg.delay_ps
                        ));
                    }
                }
                Ok(())
            }
            DeviceRole::Relay => {
                let map = &next.relay_port_map;
                for (i, (u, port)) in map.iter().enumerate() {
                    if station_config(devices, u).is_none() {
                        return Err(format!("port map names unknown user `{u}`"));
                    }
                    if map[..i].iter().any(|(v, p)| v == u || p == port) {
                        return Err(format!("duplicate user or port in port map at `{u}`"));
                    }
                }
                Ok(())
            }
        }
    }
}

fn station_config<'a>(devices: &'a BTreeMap<String, DeviceEntry>, user: &str) -> Option<&'a DeviceConfig> {
    devices
        .values()
        .find(|e| matches!(&e.role, DeviceRole::Station { user: u } if u == user))
        .map(|e| &e.config)
}

/// Users patched through a relay together with `user`.
fn paired_with(devices: &BTreeMap<String, DeviceEntry>, user: &str) -> Vec<UserId> {
    devices
        .values()
        .filter(|e| e.role == DeviceRole::Relay)
        .filter(|e| e.config.relay_port_map.iter().any(|(u, _)| u == user))
        .flat_map(|e| e.config.relay_port_map.iter().map(|(u, _)| u.clone()))
        .filter(|u| u != user)
        .collect()
}
