//! Time-division slot table of the passive optical relay.
//!
//! The relay cycles through `n_slots` slots of equal length; slot `i` is
//! live during `[i*d, (i+1)*d)` of every frame of length `n_slots*d`.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::flow::UserId;

/// Unordered user pair, stored sorted.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct UserPair(UserId, UserId);

impl UserPair {
    pub fn new(a: impl Into<String>, b: impl Into<String>) -> Result<Self> {
        let (a, b) = (a.into(), b.into());
        if a == b {
            return Err(Error::InvalidArgument(format!(
                "pair endpoints must differ, got ({a}, {a})"
            )));
        }
        Ok(if a <= b { Self(a, b) } else { Self(b, a) })
    }

    pub fn contains(&self, u: &str) -> bool {
        self.0 == u || self.1 == u
    }

    pub fn users(&self) -> (&str, &str) {
        (&self.0, &self.1)
    }
}

impl std::fmt::Display for UserPair {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}+{}", self.0, self.1)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Allocation {
    Granted { slot: usize },
    Queued { position: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlotAssignment {
    pub pair: UserPair,
    pub duration_s: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TimeSlotTable {
    slot_duration_s: f64,
    slots: Vec<Option<SlotAssignment>>,
    queue: VecDeque<SlotAssignment>,
}

impl TimeSlotTable {
    pub fn new(n_slots: usize, slot_duration_s: f64) -> Result<Self> {
        if slot_duration_s.is_nan() || slot_duration_s <= 0.0 {
            return Err(Error::Config("relay slot duration must be > 0".into()));
        }
        Ok(Self {
            slot_duration_s,
            slots: vec![None; n_slots],
            queue: VecDeque::new(),
        })
    }

    pub fn n_slots(&self) -> usize {
        self.slots.len()
    }

    pub fn slot_duration_s(&self) -> f64 {
        self.slot_duration_s
    }

    pub fn frame_s(&self) -> f64 {
        self.slot_duration_s * self.slots.len() as f64
    }

    pub fn slot_of(&self, pair: &UserPair) -> Option<usize> {
        self.slots
            .iter()
            .position(|s| s.as_ref().is_some_and(|a| a.pair == *pair))
    }

    pub fn assignment(&self, slot: usize) -> Option<&SlotAssignment> {
        self.slots.get(slot).and_then(Option::as_ref)
    }

    pub fn queued(&self) -> impl Iterator<Item = &SlotAssignment> {
        self.queue.iter()
    }

    /// Earliest free slot, or a place in the FIFO queue. A pair that already
    /// holds a slot or waits in the queue gets its existing answer.
    pub fn allocate_slots(&mut self, pair: UserPair, duration_s: f64) -> Result<Allocation> {
        if duration_s.is_nan() || duration_s <= 0.0 {
            return Err(Error::InvalidArgument("session duration must be > 0".into()));
        }
        if let Some(slot) = self.slot_of(&pair) {
            return Ok(Allocation::Granted { slot });
        }
        if let Some(position) = self.queue.iter().position(|a| a.pair == pair) {
            return Ok(Allocation::Queued { position });
        }
        let assignment = SlotAssignment { pair, duration_s };
        match self.slots.iter().position(Option::is_none) {
            Some(slot) => {
                self.slots[slot] = Some(assignment);
                Ok(Allocation::Granted { slot })
            }
            None => {
                self.queue.push_back(assignment);
                Ok(Allocation::Queued {
                    position: self.queue.len() - 1,
                })
            }
        }
    }

    /// Frees `slot`; the queue head, if any, takes it over.
    pub fn release(&mut self, slot: usize) -> Result<Option<(UserPair, usize)>> {
        if slot >= self.slots.len() {
            return Err(Error::InvalidArgument(format!("no relay slot {slot}")));
        }
        self.slots[slot] = self.queue.pop_front();
        Ok(self.slots[slot].as_ref().map(|a| (a.pair.clone(), slot)))
    }

    /// Drops `pair` from the queue or frees its slot.
    pub fn cancel(&mut self, pair: &UserPair) -> Result<Option<(UserPair, usize)>> {
        self.queue.retain(|a| a.pair != *pair);
        match self.slot_of(pair) {
            Some(slot) => self.release(slot),
            None => Ok(None),
        }
    }

    pub fn slot_at(&self, time_s: f64) -> Option<usize> {
        if self.slots.is_empty() || time_s < 0.0 {
            return None;
        }
        let within = time_s.rem_euclid(self.frame_s());
        Some(((within / self.slot_duration_s) as usize).min(self.slots.len() - 1))
    }

    pub fn connected_pair_at(&self, time_s: f64) -> Option<&UserPair> {
        self.slot_at(time_s).and_then(|s| self.assignment(s)).map(|a| &a.pair)
    }

    /// `n` emission times at `rate_hz` that all fall inside `slot`, packed
    /// from frame `start_frame` onward.
    pub fn pulse_times(&self, slot: usize, n: u64, rate_hz: f64, start_frame: u64) -> Result<Vec<f64>> {
        if slot >= self.slots.len() {
            return Err(Error::InvalidArgument(format!("no relay slot {slot}")));
        }
        if rate_hz.is_nan() || rate_hz <= 0.0 {
            return Err(Error::InvalidArgument("pulse rate must be > 0".into()));
        }
        let period = 1.0 / rate_hz;
        // keep a guard interval so float rounding never crosses a boundary
        let per_slot = ((self.slot_duration_s / period) as u64).saturating_sub(1).max(1);
        let offset = period / 2.0;
        if offset + (per_slot - 1) as f64 * period >= self.slot_duration_s {
            return Err(Error::InvalidArgument("pulse period longer than a relay slot".into()));
        }
        Ok((0..n)
            .map(|i| {
                let frame = start_frame + i / per_slot;
                let k = i % per_slot;
                frame as f64 * self.frame_s() + slot as f64 * self.slot_duration_s + offset + k as f64 * period
            })
            .collect())
    }
}
