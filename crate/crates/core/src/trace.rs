//! Trace records emitted by the testbed run and consumed by the analytics.
//!
//! Records are appended in dispatch order, so `(at, seq)` is strictly
//! increasing. Demand records are written whenever true, uncontrolled or base
//! demand changes and on every controller tick, which makes the demand series
//! an exact piecewise-constant function of time.

use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::drm::ControlAction;
use crate::network::MessageKind;
use crate::premises::ApplianceState;
use crate::simcore::SimTime;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SwitchCause {
    User,
    Command,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "category")]
pub enum TraceBody {
    Demand {
        true_kw: f64,
        uncontrolled_kw: f64,
        base_kw: f64,
        /// Present on controller ticks only.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        perceived_kw: Option<f64>,
        #[serde(default, skip_serializing_if = "core::ops::Not::not")]
        insufficient: bool,
    },
    Command {
        command_id: u64,
        appliance: String,
        unit: String,
        action: ControlAction,
        message_id: u64,
    },
    Message {
        message_id: u64,
        kind: MessageKind,
        src: String,
        dst: String,
        size_bytes: u32,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        delivered_at: Option<SimTime>,
        /// Index of the dropping hop when lost.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        lost_hop: Option<usize>,
    },
    Sensor {
        mpn: String,
        unit: String,
        motion: bool,
        noise_db: f64,
        temp_c: f64,
        humidity_pct: f64,
        lux: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        delivered_at: Option<SimTime>,
    },
    Price {
        price_sgd_per_kwh: f64,
    },
    /// A control command took effect at the actuator.
    Shed {
        command_id: u64,
        appliance: String,
        unit: String,
        action: ControlAction,
        issued_at: SimTime,
    },
    /// Actual on/off change of an appliance.
    Switch {
        appliance: String,
        unit: String,
        state: ApplianceState,
        cause: SwitchCause,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceEvent {
    pub seq: u64,
    pub at: SimTime,
    #[serde(flatten)]
    pub body: TraceBody,
}

/// Append-only trace buffer.
#[derive(Clone, Debug, Default)]
pub struct TraceLog {
    events: Vec<TraceEvent>,
}

impl TraceLog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, at: SimTime, body: TraceBody) {
        debug_assert!(self.events.last().is_none_or(|e| e.at <= at), "trace written out of order");
        let seq = self.events.len() as u64;
        self.events.push(TraceEvent { seq, at, body });
    }

    pub fn events(&self) -> &[TraceEvent] {
        &self.events
    }

    pub fn into_events(self) -> Vec<TraceEvent> {
        self.events
    }
}

/// True when `(at, seq)` strictly increases along the slice.
pub fn is_ordered(events: &[TraceEvent]) -> bool {
    events.windows(2).all(|w| (w[0].at, w[0].seq) < (w[1].at, w[1].seq))
}
