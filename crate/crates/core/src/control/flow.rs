//! Packets carrying quantum metadata and the switch's match-action table.

use serde::{Deserialize, Serialize};

pub type UserId = String;

pub const KEY_EXCHANGE_REQUEST: &str = "KEY_EXCHANGE_REQUEST";
pub const KEY_EXCHANGE_READY: &str = "KEY_EXCHANGE_READY";
pub const KEY_EXCHANGE_ERROR: &str = "KEY_EXCHANGE_ERROR";

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Packet {
    pub src: UserId,
    pub dst: UserId,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub qchannel: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub qcom: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub qec: Option<String>,
    #[serde(default)]
    pub payload: String,
}

impl Packet {
    pub fn classical(src: impl Into<String>, dst: impl Into<String>) -> Self {
        Self {
            src: src.into(),
            dst: dst.into(),
            ..Default::default()
        }
    }

    pub fn key_exchange_request(src: impl Into<String>, dst: impl Into<String>) -> Self {
        Self::classical(src, dst).with_qcom(KEY_EXCHANGE_REQUEST)
    }

    pub fn with_qcom(mut self, qcom: &str) -> Self {
        self.qcom = Some(qcom.to_string());
        self
    }

    pub fn with_qchannel(mut self, channel: u32) -> Self {
        self.qchannel = Some(channel);
        self
    }

    pub fn with_payload(mut self, payload: impl Into<String>) -> Self {
        self.payload = payload.into();
        self
    }

    pub fn is_classical(&self) -> bool {
        self.qchannel.is_none() && self.qcom.is_none() && self.qec.is_none()
    }
}

/// Predicate over one optional packet field.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FieldMatch<T> {
    #[default]
    Any,
    Present,
    Absent,
    Equals(T),
}

impl<T: PartialEq> FieldMatch<T> {
    pub fn test(&self, value: Option<&T>) -> bool {
        match self {
            FieldMatch::Any => true,
            FieldMatch::Present => value.is_some(),
            FieldMatch::Absent => value.is_none(),
            FieldMatch::Equals(want) => value == Some(want),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct FlowMatch {
    pub src: Option<UserId>,
    pub dst: Option<UserId>,
    pub qchannel: FieldMatch<u32>,
    pub qcom: FieldMatch<String>,
}

impl FlowMatch {
    pub fn matches(&self, p: &Packet) -> bool {
        self.src.as_ref().is_none_or(|s| *s == p.src)
            && self.dst.as_ref().is_none_or(|d| *d == p.dst)
            && self.qchannel.test(p.qchannel.as_ref())
            && self.qcom.test(p.qcom.as_ref())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Action {
    ForwardTo(u32),
    SendToController,
    Drop,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlowEntry {
    pub priority: i32,
    #[serde(rename = "match", default)]
    pub matcher: FlowMatch,
    pub action: Action,
}

impl FlowEntry {
    pub fn new(priority: i32, matcher: FlowMatch, action: Action) -> Self {
        Self {
            priority,
            matcher,
            action,
        }
    }

    /// Sends every packet with a QCOM tag to the controller.
    pub fn intercept_qcom(priority: i32) -> Self {
        Self::new(
            priority,
            FlowMatch {
                qcom: FieldMatch::Present,
                ..Default::default()
            },
            Action::SendToController,
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct FlowTable {
    entries: Vec<FlowEntry>,
}

impl FlowTable {
    pub fn new(entries: Vec<FlowEntry>) -> Self {
        Self { entries }
    }

    pub fn install(&mut self, entry: FlowEntry) {
        self.entries.push(entry);
    }

    pub fn entries(&self) -> &[FlowEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Highest priority match wins, earlier entry on ties; a miss goes to the
/// controller.
pub fn switch_process(packet: &Packet, table: &FlowTable) -> Action {
    let mut best: Option<&FlowEntry> = None;
    for e in &table.entries {
        if e.matcher.matches(packet) && best.is_none_or(|b| e.priority > b.priority) {
            best = Some(e);
        }
    }
    best.map_or(Action::SendToController, |e| e.action)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn route(src: &str, dst: &str, port: u32) -> FlowEntry {
        FlowEntry::new(
            10,
            FlowMatch {
                src: Some(src.into()),
                dst: Some(dst.into()),
                ..Default::default()
            },
            Action::ForwardTo(port),
        )
    }

    #[test]
    fn qcom_goes_to_controller() {
        let table = FlowTable::new(vec![route("charlie", "alice", 1), FlowEntry::intercept_qcom(100)]);
        let p = Packet::key_exchange_request("charlie", "alice");
        assert_eq!(switch_process(&p, &table), Action::SendToController);
    }

    #[test]
    fn plain_route() {
        let table = FlowTable::new(vec![FlowEntry::intercept_qcom(100), route("alice", "bob", 2)]);
        assert_eq!(
            switch_process(&Packet::classical("alice", "bob"), &table),
            Action::ForwardTo(2)
        );
    }

    #[test]
    fn empty_table_misses_to_controller() {
        assert_eq!(
            switch_process(&Packet::classical("x", "y"), &FlowTable::default()),
            Action::SendToController
        );
    }

    #[test]
    fn ties_go_to_earlier_entry() {
        let mut table = FlowTable::default();
        table.install(route("a", "b", 1));
        table.install(route("a", "b", 2));
        assert_eq!(
            switch_process(&Packet::classical("a", "b"), &table),
            Action::ForwardTo(1)
        );
        table.install(FlowEntry::new(11, FlowMatch::default(), Action::Drop));
        assert_eq!(switch_process(&Packet::classical("a", "b"), &table), Action::Drop);
    }

    #[test]
    fn field_predicates() {
        let p = Packet::classical("a", "b").with_qchannel(7);
        assert!(FieldMatch::Present.test(p.qchannel.as_ref()));
        assert!(FieldMatch::Equals(7).test(p.qchannel.as_ref()));
        assert!(!FieldMatch::Equals(8).test(p.qchannel.as_ref()));
        assert!(FieldMatch::<String>::Absent.test(p.qcom.as_ref()));
        assert!(!p.is_classical());
        assert!(Packet::classical("a", "b").is_classical());
    }

    #[test]
    fn table_round_trips_through_toml() {
        let table = FlowTable::new(vec![
            FlowEntry::intercept_qcom(100),
            route("a", "b", 3),
            FlowEntry::new(
                5,
                FlowMatch {
                    qcom: FieldMatch::Equals(KEY_EXCHANGE_READY.into()),
                    ..Default::default()
                },
                Action::Drop,
            ),
        ]);
        let text = toml::to_string(&table).unwrap();
        let back: FlowTable = toml::from_str(&text).unwrap();
        assert_eq!(back, table);
    }

    fn arb_field<T: Clone + std::fmt::Debug + 'static>(
        v: impl Strategy<Value = T> + 'static,
    ) -> impl Strategy<Value = FieldMatch<T>> {
        prop_oneof![
            Just(FieldMatch::Any),
            Just(FieldMatch::Present),
            Just(FieldMatch::Absent),
            v.prop_map(FieldMatch::Equals),
        ]
    }

    fn arb_user() -> impl Strategy<Value = String> {
        prop::sample::select(vec!["a", "b", "c"]).prop_map(String::from)
    }

    fn arb_entry() -> impl Strategy<Value = FlowEntry> {
        (
            0..5i32,
            prop::option::of(arb_user()),
            prop::option::of(arb_user()),
            arb_field(0..3u32),
            arb_field(prop::sample::select(vec![KEY_EXCHANGE_REQUEST, KEY_EXCHANGE_READY]).prop_map(String::from)),
            prop_oneof![
                (0..4u32).prop_map(Action::ForwardTo),
                Just(Action::Drop),
                Just(Action::SendToController)
            ],
        )
            .prop_map(|(priority, src, dst, qchannel, qcom, action)| {
                FlowEntry::new(
                    priority,
                    FlowMatch {
                        src,
                        dst,
                        qchannel,
                        qcom,
                    },
                    action,
                )
            })
    }

    fn arb_packet() -> impl Strategy<Value = Packet> {
        (
            arb_user(),
            arb_user(),
            prop::option::of(0..3u32),
            prop::option::of(
                prop::sample::select(vec![KEY_EXCHANGE_REQUEST, KEY_EXCHANGE_READY]).prop_map(String::from),
            ),
        )
            .prop_map(|(src, dst, qchannel, qcom)| Packet {
                src,
                dst,
                qchannel,
                qcom,
                ..Default::default()
            })
    }

    proptest! {
        #[test]
        fn processing_is_deterministic_and_priority_ordered(
            entries in prop::collection::vec(arb_entry(), 0..12),
            packet in arb_packet(),
        ) {
            let table = FlowTable::new(entries.clone());
            let action = switch_process(&packet, &table);
            prop_assert_eq!(action, switch_process(&packet, &table));
            let hits: Vec<&FlowEntry> = entries.iter().filter(|e| e.matcher.matches(&packet)).collect();
            match hits.iter().map(|e| e.priority).max() {
                None => prop_assert_eq!(action, Action::SendToController),
                Some(top) => {
                    let first = hits.iter().find(|e| e.priority == top).unwrap();
                    prop_assert_eq!(action, first.action);
                }
            }
        }
    }
}
