//! Two-user link: one birefringent fiber per user, each with a compensating
//! delay stage, an optional fixed wave plate and a liquid-crystal actuator.

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::optics::{parity_at_45, ChannelTopology, DriftModel, Element, OpticalParams, SourceModel, User};
use crate::polarization::{bell_state, BellKind, ParityDistribution};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserChannel {
    pub name: String,
    /// Static slow-minus-fast excess path of the user's fiber.
    pub fiber_um: f64,
    #[serde(default)]
    pub drift: Option<DriftModel>,
    /// Compensating stage offset.
    #[serde(default)]
    pub stage_um: f64,
    #[serde(default)]
    pub lc_phase: f64,
    #[serde(default)]
    pub waveplate_phase: f64,
}

impl UserChannel {
    pub fn new(name: impl Into<String>, fiber_um: f64) -> Self {
        Self {
            name: name.into(),
            fiber_um,
            drift: None,
            stage_um: 0.0,
            lc_phase: 0.0,
            waveplate_phase: 0.0,
        }
    }

    /// Stage set to cancel the static fiber excess.
    pub fn calibrated(mut self) -> Self {
        self.stage_um = -self.fiber_um;
        self
    }

    pub fn with_drift(mut self, drift: DriftModel) -> Self {
        self.drift = Some(drift);
        self
    }

    pub fn lc_id(&self) -> String {
        format!("{}.lc", self.name)
    }

    pub fn stage_id(&self) -> String {
        format!("{}.stage", self.name)
    }

    pub fn elements(&self) -> Vec<Element> {
        let fiber_id = format!("{}.fiber", self.name);
        let fiber = match &self.drift {
            Some(d) => Element::drifting_fiber(fiber_id, self.fiber_um, d.clone()),
            None => Element::fiber(fiber_id, self.fiber_um),
        };
        vec![
            fiber,
            Element::stage(self.stage_id(), self.stage_um),
            Element::wave_plate(format!("{}.wp", self.name), self.waveplate_phase),
            Element::liquid_crystal(self.lc_id(), self.lc_phase),
        ]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TwoUserLink {
    pub optics: OpticalParams,
    pub source: SourceModel,
    pub users: [UserChannel; 2],
}

impl TwoUserLink {
    pub fn new(optics: OpticalParams, source: SourceModel, a: UserChannel, b: UserChannel) -> Self {
        Self {
            optics,
            source,
            users: [a, b],
        }
    }

    pub fn user(&self, u: User) -> &UserChannel {
        &self.users[index(u)]
    }

    pub fn user_mut(&mut self, u: User) -> &mut UserChannel {
        &mut self.users[index(u)]
    }

    /// Shared singlet: photon 1 to the first user, photon 2 to the second.
    pub fn shared_topology(&self) -> Result<ChannelTopology> {
        ChannelTopology::split(self.users[0].elements(), self.users[1].elements(), self.optics)
    }

    /// Filtered pair: both photons down one user's fiber.
    pub fn filtered_topology(&self, u: User) -> Result<ChannelTopology> {
        ChannelTopology::shared(self.user(u).elements(), self.optics)
    }

    pub fn shared_parity(&self, time: f64) -> Result<ParityDistribution> {
        parity_at_45(&bell_state(BellKind::PsiMinus), &self.shared_topology()?, time)
    }

    pub fn filtered_parity(&self, u: User, time: f64) -> Result<ParityDistribution> {
        parity_at_45(
            &bell_state(self.source.filtered_kind()),
            &self.filtered_topology(u)?,
            time,
        )
    }
}

pub(crate) fn index(u: User) -> usize {
    match u {
        User::First => 0,
        User::Second => 1,
    }
}
