//! Programmable quantum channel: switch flow tables keyed on quantum
//! metadata, a key-exchange controller, netconf-like device configuration
//! and the relay's time-slot scheduler.

pub mod controller;
pub mod device;
pub mod flow;
pub mod network;
pub mod relay;
pub mod wire;

pub use controller::{
    compatible_delay, Command, Controller, ControllerConfig, Event, Exchange, Phase, ReadyInfo, UserSpec,
};
pub use device::{ConfigDelta, ConfigReply, DeviceConfig, DeviceRegistry, DeviceRole};
pub use flow::{
    switch_process, Action, FieldMatch, FlowEntry, FlowMatch, FlowTable, Packet, UserId, KEY_EXCHANGE_ERROR,
    KEY_EXCHANGE_READY, KEY_EXCHANGE_REQUEST,
};
pub use network::{verify_ready_after_acks, write_trace_csv, Actor, Network, NetworkSetup, TraceEntry};
pub use relay::{Allocation, TimeSlotTable, UserPair};
