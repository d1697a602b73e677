//! Line-delimited JSON transport for driving the control plane from
//! outside the process.
//!
//! One JSON object per line, discriminated by `type`:
//!
//! | type          | fields                                                        |
//! |---------------|---------------------------------------------------------------|
//! | `packet`      | `src`, `dst`, `qchannel`?, `qcom`?, `qec`?, `payload`         |
//! | `edit_config` | `device_id`, `delay_ps`?, `lc_phase`?, `waveplate_phase`?, `relay_port_map`? |
//! | `get_config`  | `device_id`                                                   |
//! | `ack`         | `device_id`, `version`                                        |
//! | `nack`        | `device_id`, `reason`                                         |
//! | `config`      | `device_id`, `delay_ps`, `lc_phase`, `waveplate_phase`, `relay_port_map`, `version` |
//! | `slot_grant`  | `src`, `dst`, `slot`                                          |
//! | `error`       | `reason`                                                      |
//! | `done`        |                                                               |
//!
//! Clients send `packet`, `edit_config` or `get_config`. The server answers
//! each request with zero or more lines and then `done`. For a `packet`,
//! the replies are every packet the network delivered to a user while
//! handling it, followed by a `slot_grant` per pair holding a relay slot.

use std::io::{BufRead, BufReader, Write};
use std::net::{TcpListener, TcpStream};
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::device::{ConfigDelta, ConfigReply, DeviceConfig};
use super::flow::Packet;
use super::network::Network;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum WireMessage {
    Packet(Packet),
    EditConfig {
        device_id: String,
        #[serde(flatten)]
        delta: ConfigDelta,
    },
    GetConfig {
        device_id: String,
    },
    Ack {
        device_id: String,
        version: u64,
    },
    Nack {
        device_id: String,
        reason: String,
    },
    Config(DeviceConfig),
    SlotGrant {
        src: String,
        dst: String,
        slot: usize,
    },
    Error {
        reason: String,
    },
    Done,
}

pub fn encode(msg: &WireMessage) -> String {
    serde_json::to_string(msg).expect("wire messages always serialize")
}

pub fn decode(line: &str) -> Result<WireMessage> {
    serde_json::from_str(line.trim()).map_err(|e| Error::Wire(e.to_string()))
}

/// A network plus the request handling shared by all connections.
pub struct WireService {
    network: Network,
    max_steps: usize,
}

impl WireService {
    pub fn new(network: Network) -> Self {
        Self {
            network,
            max_steps: 100_000,
        }
    }

    pub fn network(&self) -> &Network {
        &self.network
    }

    /// Replies for one request line, not including the closing `done`.
    pub fn handle_line(&mut self, line: &str) -> Vec<WireMessage> {
        let msg = match decode(line) {
            Ok(m) => m,
            Err(e) => return vec![WireMessage::Error { reason: e.to_string() }],
        };
        match msg {
            WireMessage::Packet(p) => {
                let before: Vec<(String, usize)> = self
                    .network
                    .controller()
                    .config()
                    .users
                    .iter()
                    .map(|u| (u.id.clone(), self.network.inbox(&u.id).len()))
                    .collect();
                self.network.inject(p);
                if let Err(e) = self.network.run_until_idle(self.max_steps) {
                    return vec![WireMessage::Error { reason: e.to_string() }];
                }
                let mut out = Vec::new();
                for (user, seen) in before {
                    for p in &self.network.inbox(&user)[seen..] {
                        out.push(WireMessage::Packet(p.clone()));
                    }
                }
                let relay = self.network.relay();
                for slot in 0..relay.n_slots() {
                    if let Some(a) = relay.assignment(slot) {
                        let (src, dst) = a.pair.users();
                        out.push(WireMessage::SlotGrant {
                            src: src.to_string(),
                            dst: dst.to_string(),
                            slot,
                        });
                    }
                }
                out
            }
            WireMessage::EditConfig { device_id, delta } => {
                match self.network.registry().edit_config(&device_id, &delta) {
                    ConfigReply::Ack { version } => vec![WireMessage::Ack { device_id, version }],
                    ConfigReply::Nack { reason } => vec![WireMessage::Nack { device_id, reason }],
                }
            }
            WireMessage::GetConfig { device_id } => match self.network.registry().get_config(&device_id) {
                Ok(cfg) => vec![WireMessage::Config(cfg)],
                Err(e) => vec![WireMessage::Error { reason: e.to_string() }],
            },
            other => vec![WireMessage::Error {
                reason: format!("`{}` is a reply, not a request", encode(&other)),
            }],
        }
    }
}

fn serve_connection(stream: TcpStream, service: Arc<Mutex<WireService>>) -> Result<()> {
    let mut writer = stream.try_clone()?;
    for line in BufReader::new(stream).lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let replies = service.lock().expect("service lock poisoned").handle_line(&line);
        for r in replies.iter().chain(std::iter::once(&WireMessage::Done)) {
            writeln!(writer, "{}", encode(r))?;
        }
        writer.flush()?;
    }
    Ok(())
}

/// Accepts connections on `listener`, one thread per connection. Stops
/// after `max_connections` if given.
pub fn serve(listener: TcpListener, service: Arc<Mutex<WireService>>, max_connections: Option<usize>) -> Result<()> {
    let mut handles = Vec::new();
    for (n, stream) in listener.incoming().enumerate() {
        let stream = stream?;
        let service = Arc::clone(&service);
        handles.push(std::thread::spawn(move || serve_connection(stream, service)));
        if max_connections.is_some_and(|m| n + 1 >= m) {
            break;
        }
    }
    for h in handles {
        h.join()
            .map_err(|_| Error::Wire("connection thread panicked".into()))??;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::control::flow::KEY_EXCHANGE_READY;
    use crate::control::network::tests::three_users;

    fn service() -> WireService {
        WireService::new(Network::new(&three_users(), 1).unwrap())
    }

    #[test]
    fn field_names() {
        let p = Packet::key_exchange_request("charlie", "alice").with_qchannel(3);
        let line = encode(&WireMessage::Packet(p.clone()));
        let v: serde_json::Value = serde_json::from_str(&line).unwrap();
        assert_eq!(v["type"], "packet");
        for f in ["src", "dst", "qchannel", "qcom", "payload"] {
            assert!(v.get(f).is_some(), "{f} missing in {line}");
        }
        assert_eq!(decode(&line).unwrap(), WireMessage::Packet(p));

        let edit =
            decode(r#"{"type":"edit_config","device_id":"bob.station","delay_ps":1500,"lc_phase":0.5}"#).unwrap();
        assert_eq!(
            edit,
            WireMessage::EditConfig {
                device_id: "bob.station".into(),
                delta: ConfigDelta {
                    delay_ps: Some(1500),
                    lc_phase: Some(0.5),
                    ..Default::default()
                }
            }
        );
        let cfg = encode(&WireMessage::Config(DeviceConfig::factory("x")));
        for f in ["device_id", "delay_ps", "lc_phase", "version"] {
            assert!(cfg.contains(&format!("\"{f}\"")), "{cfg}");
        }
        let grant = encode(&WireMessage::SlotGrant {
            src: "a".into(),
            dst: "b".into(),
            slot: 1,
        });
        assert!(grant.contains("\"slot\":1"));
        assert!(encode(&WireMessage::Nack {
            device_id: "d".into(),
            reason: "r".into()
        })
        .contains("\"reason\""));
    }

    #[test]
    fn service_requests() {
        let mut s = service();
        let r = s.handle_line(r#"{"type":"edit_config","device_id":"bob.station","delay_ps":1500}"#);
        assert_eq!(
            r,
            vec![WireMessage::Ack {
                device_id: "bob.station".into(),
                version: 1
            }]
        );
        match &s.handle_line(r#"{"type":"get_config","device_id":"bob.station"}"#)[..] {
            [WireMessage::Config(c)] => assert_eq!((c.delay_ps, c.version), (1500, 1)),
            other => panic!("{other:?}"),
        }
        assert!(matches!(&s.handle_line("not json")[..], [WireMessage::Error { .. }]));
        assert!(matches!(
            &s.handle_line(r#"{"type":"done"}"#)[..],
            [WireMessage::Error { .. }]
        ));
        let r = s.handle_line(&encode(&WireMessage::Packet(Packet::key_exchange_request(
            "charlie", "alice",
        ))));
        let ready = r
            .iter()
            .filter(|m| matches!(m, WireMessage::Packet(p) if p.qcom.as_deref() == Some(KEY_EXCHANGE_READY)))
            .count();
        assert_eq!(ready, 2);
        assert!(r.iter().any(|m| matches!(m, WireMessage::SlotGrant { slot: 0, .. })));
    }

    #[test]
    fn tcp_round_trip() {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        let svc = Arc::new(Mutex::new(service()));
        let server = std::thread::spawn(move || serve(listener, svc, Some(1)));
        let mut stream = TcpStream::connect(addr).unwrap();
        let mut reader = BufReader::new(stream.try_clone().unwrap());
        writeln!(stream, r#"{{"type":"get_config","device_id":"relay"}}"#).unwrap();
        let mut lines = Vec::new();
        loop {
            let mut line = String::new();
            reader.read_line(&mut line).unwrap();
            let msg = decode(&line).unwrap();
            if msg == WireMessage::Done {
                break;
            }
            lines.push(msg);
        }
        assert!(matches!(&lines[..], [WireMessage::Config(c)] if c.device_id == "relay" && c.version == 0));
        drop(reader);
        drop(stream);
        server.join().unwrap().unwrap();
    }
}
