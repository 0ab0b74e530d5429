//! The event-driven experiment: premises load, metering over the NAN, the
//! cloud peak-shaving controller, actuation over the HAN, prices and sensors.
//!
//! Two copies of every appliance are kept. The *desired* copy follows the
//! occupants' usage plan; the *actual* copy is what the meter sees, which is
//! the desired state unless the controller has shed the appliance. The
//! desired copies give the uncontrolled counterfactual from the same run.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::drm::{ControlAction, ControlCommand, Controller, DrmPolicy, MeterReading, PriceSignal, ShedCandidate};
use crate::network::{Message, MessageKind, NetError, Network, NodeId, Topology, TransportOutcome};
use crate::premises::{ApplianceState, SensorModel, Unit};
use crate::simcore::{Engine, EventKind, RngStreams, RunSummary, SimTime, StreamKey};
use crate::trace::{SwitchCause, TraceBody, TraceEvent, TraceLog};

pub const METER_READING_BYTES: u32 = 64;
pub const SENSOR_SAMPLE_BYTES: u32 = 48;
pub const CONTROL_COMMAND_BYTES: u32 = 32;
pub const ACK_BYTES: u32 = 16;
pub const PRICE_SIGNAL_BYTES: u32 = 24;

#[derive(Clone, Debug)]
pub struct UnitSetup {
    /// Appliances must have empty histories; the plan below drives them.
    pub unit: Unit,
    /// Per appliance (same order as `unit.appliances`): `[on, off)` intervals of intended use.
    pub usage: Vec<Vec<(SimTime, SimTime)>>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DrmSetup {
    pub policy: DrmPolicy,
    pub report_period_s: u32,
    /// Ticks run this long after each period boundary so readings taken on the
    /// boundary are in before the controller looks.
    pub tick_offset_ms: u64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SensorSetup {
    pub model: SensorModel,
    pub period_s: u32,
}

#[derive(Clone, Debug)]
pub struct TestbedConfig {
    pub horizon: SimTime,
    pub seed: u64,
    pub topology: Topology,
    pub units: Vec<UnitSetup>,
    pub drm: Option<DrmSetup>,
    pub pricing: Vec<PriceSignal>,
    pub sensors: Option<SensorSetup>,
}

#[derive(Clone, Debug, PartialEq, thiserror::Error)]
pub enum TestbedError {
    #[error("horizon must be > 0")]
    ZeroHorizon,
    #[error("unit '{0}' has no premises in the topology")]
    UnknownPremises(String),
    #[error("unit '{unit}': usage plan has {plans} entries for {appliances} appliances")]
    PlanMismatch { unit: String, plans: usize, appliances: usize },
    #[error("appliance '{0}': usage intervals must be non-empty and non-overlapping in time order")]
    BadUsage(String),
    #[error("unit '{0}': base profile or occupancy does not cover the horizon")]
    Coverage(String),
    #[error("period must be > 0")]
    ZeroPeriod,
    #[error(transparent)]
    Network(#[from] NetError),
}

#[derive(Clone, Debug)]
pub struct TestbedRun {
    pub events: Vec<TraceEvent>,
    pub summary: RunSummary,
    pub dispatch_digest: u64,
    /// Units with the actual (controlled) appliance histories.
    pub units: Vec<Unit>,
    /// Units with the intended, uncontrolled histories.
    pub uncontrolled: Vec<Unit>,
}

#[derive(Clone, Debug)]
enum Payload {
    UserSwitch {
        unit: usize,
        app: usize,
        on: bool,
    },
    /// Some draw changes here (signature phase or base step); re-evaluate demand.
    Recheck,
    BaseStep {
        unit: usize,
    },
    MeterReport {
        unit: usize,
    },
    MeterSample {
        unit: usize,
    },
    ControllerTick,
    PriceUpdate {
        index: usize,
    },
    SensorTick {
        unit: usize,
        mpn: usize,
    },
    DeliverReading(MeterReading),
    DeliverCommand {
        command_id: u64,
        command: ControlCommand,
    },
}

struct State {
    horizon: SimTime,
    rngs: RngStreams,
    net: Network,
    cloud: NodeId,
    actual: Vec<Unit>,
    desired: Vec<Unit>,
    shed: Vec<Vec<bool>>,
    premises: Vec<usize>,
    controller: Option<Controller>,
    drm: Option<DrmSetup>,
    pricing: Vec<PriceSignal>,
    sensors: Option<SensorSetup>,
    sensor_keys: Vec<Vec<StreamKey>>,
    log: TraceLog,
    last_demand: (f64, f64, f64),
    next_message: u64,
    next_command: u64,
}

fn schedule(eng: &mut Engine<Payload>, horizon: SimTime, at: SimTime, kind: EventKind, p: Payload) {
    if at < horizon {
        eng.schedule(at, kind, p).expect("scheduled at or after now");
    }
}

impl State {
    fn demand(&self, at: SimTime) -> (f64, f64, f64) {
        let mut true_kw = 0.0;
        let mut unc_kw = 0.0;
        let mut base_kw = 0.0;
        for (a, d) in self.actual.iter().zip(&self.desired) {
            let base = a.base_profile.value_at(at).unwrap_or(0.0);
            base_kw += base;
            true_kw += base + a.appliances.iter().map(|x| x.power_w_at(at)).sum::<f64>() / 1_000.0;
            unc_kw += base + d.appliances.iter().map(|x| x.power_w_at(at)).sum::<f64>() / 1_000.0;
        }
        (true_kw, unc_kw, base_kw)
    }

    fn log_demand(&mut self, at: SimTime, perceived: Option<f64>, insufficient: bool) {
        let d = self.demand(at);
        self.last_demand = d;
        self.log.push(
            at,
            TraceBody::Demand {
                true_kw: d.0,
                uncontrolled_kw: d.1,
                base_kw: d.2,
                perceived_kw: perceived,
                insufficient,
            },
        );
    }

    fn log_demand_if_changed(&mut self, at: SimTime) {
        let d = self.demand(at);
        if d != self.last_demand {
            self.log_demand(at, None, false);
        }
    }

    fn message(
        &mut self,
        src: NodeId,
        dst: NodeId,
        kind: MessageKind,
        size: u32,
        at: SimTime,
    ) -> (Message, TransportOutcome) {
        let id = self.next_message;
        self.next_message += 1;
        let mut msg = Message::new(id, src, dst, kind, size, at);
        let outcome = self.net.send(&mut self.rngs, &mut msg, at).expect("topology validated before the run");
        (msg, outcome)
    }

    fn log_message(&mut self, msg: &Message, outcome: TransportOutcome) {
        let topo = self.net.topology();
        let body = TraceBody::Message {
            message_id: msg.id,
            kind: msg.kind,
            src: topo.node(msg.src).name.clone(),
            dst: topo.node(msg.dst).name.clone(),
            size_bytes: msg.size_bytes,
            delivered_at: outcome.delivered_at(),
            lost_hop: match outcome {
                TransportOutcome::Lost { hop, .. } => Some(hop),
                TransportOutcome::Delivered { .. } => None,
            },
        };
        self.log.push(msg.created_at, body);
    }

    fn schedule_phases(&self, eng: &mut Engine<Payload>, unit: usize, app: usize, at: SimTime) {
        for b in self.actual[unit].appliances[app].phase_boundaries_ms() {
            schedule(eng, self.horizon, at.saturating_add_ms(b), EventKind::LoadChange, Payload::Recheck);
        }
    }

    /// Bring the actual appliance in line with `desired && !shed`.
    fn sync_actual(&mut self, eng: &mut Engine<Payload>, unit: usize, app: usize, at: SimTime, cause: SwitchCause) {
        let want_on = self.desired[unit].appliances[app].state() == ApplianceState::On && !self.shed[unit][app];
        let want = if want_on { ApplianceState::On } else { ApplianceState::Off };
        let a = &mut self.actual[unit].appliances[app];
        if a.state() == want {
            return;
        }
        a.switch(at, want).expect("monotone switch times");
        let body =
            TraceBody::Switch { appliance: a.id.clone(), unit: self.actual[unit].id.clone(), state: want, cause };
        self.log.push(at, body);
        if want_on {
            self.schedule_phases(eng, unit, app, at);
        }
    }

    fn handle(&mut self, eng: &mut Engine<Payload>, at: SimTime, payload: Payload) {
        match payload {
            Payload::UserSwitch { unit, app, on } => {
                let state = if on { ApplianceState::On } else { ApplianceState::Off };
                self.desired[unit].appliances[app].switch(at, state).expect("usage plan validated");
                if on {
                    self.schedule_phases(eng, unit, app, at);
                }
                self.sync_actual(eng, unit, app, at, SwitchCause::User);
            }
            Payload::Recheck => {}
            Payload::BaseStep { unit } => {
                let next = self.actual[unit].base_profile.next_step_after(at);
                schedule(eng, self.horizon, next, EventKind::LoadChange, Payload::BaseStep { unit });
            }
            Payload::MeterReport { unit } => {
                let period = u64::from(self.drm.expect("metering implies drm").report_period_s) * 1_000;
                schedule(
                    eng,
                    self.horizon,
                    at.saturating_add_ms(period),
                    EventKind::SensorTick,
                    Payload::MeterReport { unit },
                );
                // read after everything already queued for this instant
                schedule(eng, self.horizon, at, EventKind::SensorTick, Payload::MeterSample { unit });
            }
            Payload::MeterSample { unit } => {
                let u = &self.actual[unit];
                let demand_kw = u.demand_kw(at).unwrap_or(0.0);
                let flexible_on = u
                    .appliances
                    .iter()
                    .filter(|a| a.flexible && a.state() == ApplianceState::On)
                    .map(|a| ShedCandidate::new(a.id.clone(), a.rated_power_kw(), a.inconvenience_weight))
                    .collect();
                let reading = MeterReading { unit_id: u.id.clone(), created_at: at, demand_kw, flexible_on };
                let src = self.net.topology().premises[self.premises[unit]].reporting_node();
                let (msg, outcome) = self.message(src, self.cloud, MessageKind::MeterReading, METER_READING_BYTES, at);
                self.log_message(&msg, outcome);
                if let Some(d) = outcome.delivered_at() {
                    schedule(eng, self.horizon, d, EventKind::MessageDelivery, Payload::DeliverReading(reading));
                }
            }
            Payload::DeliverReading(reading) => {
                if let Some(c) = self.controller.as_mut() {
                    c.on_reading(reading);
                }
            }
            Payload::ControllerTick => {
                let period = u64::from(self.drm.expect("tick implies drm").policy.control_period_s) * 1_000;
                schedule(
                    eng,
                    self.horizon,
                    at.saturating_add_ms(period),
                    EventKind::ControllerTick,
                    Payload::ControllerTick,
                );
                let decision = self.controller.as_mut().expect("tick implies controller").tick(at);
                self.log_demand(at, Some(decision.perceived_kw), decision.insufficient);
                for command in decision.commands {
                    let command_id = self.next_command;
                    self.next_command += 1;
                    let unit = self.actual.iter().position(|u| u.id == command.unit_id).expect("known unit");
                    let dst = self.net.topology().premises[self.premises[unit]].actuator_for(&command.appliance_id);
                    let (msg, outcome) =
                        self.message(self.cloud, dst, MessageKind::ControlCommand, CONTROL_COMMAND_BYTES, at);
                    self.log.push(
                        at,
                        TraceBody::Command {
                            command_id,
                            appliance: command.appliance_id.clone(),
                            unit: command.unit_id.clone(),
                            action: command.action,
                            message_id: msg.id,
                        },
                    );
                    self.log_message(&msg, outcome);
                    if let Some(d) = outcome.delivered_at() {
                        let p = Payload::DeliverCommand { command_id, command };
                        schedule(eng, self.horizon, d, EventKind::MessageDelivery, p);
                    }
                }
            }
            Payload::DeliverCommand { command_id, mut command } => {
                command.applied_at = Some(at);
                let unit = self.actual.iter().position(|u| u.id == command.unit_id).expect("known unit");
                let app = self.actual[unit]
                    .appliances
                    .iter()
                    .position(|a| a.id == command.appliance_id)
                    .expect("known appliance");
                self.shed[unit][app] = command.action == ControlAction::SwitchOff;
                self.log.push(
                    at,
                    TraceBody::Shed {
                        command_id,
                        appliance: command.appliance_id.clone(),
                        unit: command.unit_id.clone(),
                        action: command.action,
                        issued_at: command.issued_at,
                    },
                );
                self.sync_actual(eng, unit, app, at, SwitchCause::Command);
                let src = self.net.topology().premises[self.premises[unit]].actuator_for(&command.appliance_id);
                let (msg, outcome) = self.message(src, self.cloud, MessageKind::Ack, ACK_BYTES, at);
                self.log_message(&msg, outcome);
            }
            Payload::PriceUpdate { index } => {
                let price = self.pricing[index].price_sgd_per_kwh;
                self.log.push(at, TraceBody::Price { price_sgd_per_kwh: price });
                let mut gateways: Vec<NodeId> = self.net.topology().premises.iter().map(|p| p.uhg).collect();
                gateways.dedup();
                for g in gateways {
                    let (msg, outcome) = self.message(self.cloud, g, MessageKind::PriceSignal, PRICE_SIGNAL_BYTES, at);
                    self.log_message(&msg, outcome);
                }
            }
            Payload::SensorTick { unit, mpn } => {
                let setup = self.sensors.expect("sensor tick implies sensors");
                let period = u64::from(setup.period_s) * 1_000;
                schedule(
                    eng,
                    self.horizon,
                    at.saturating_add_ms(period),
                    EventKind::SensorTick,
                    Payload::SensorTick { unit, mpn },
                );
                let node = self.net.topology().premises[self.premises[unit]].mpns[mpn];
                let name = self.net.topology().node(node).name.clone();
                let occupied = self.actual[unit].occupancy.is_occupied(at).unwrap_or(false);
                let key = self.sensor_keys[unit][mpn];
                let s = setup.model.sample(&mut self.rngs, key, &name, at, occupied);
                let (_, outcome) = self.message(node, self.cloud, MessageKind::SensorSample, SENSOR_SAMPLE_BYTES, at);
                self.log.push(
                    at,
                    TraceBody::Sensor {
                        mpn: name,
                        unit: self.actual[unit].id.clone(),
                        motion: s.motion,
                        noise_db: s.noise_db,
                        temp_c: s.temp_c,
                        humidity_pct: s.humidity_pct,
                        lux: s.lux,
                        delivered_at: outcome.delivered_at(),
                    },
                );
            }
        }
    }
}

fn check_usage(id: &str, plan: &[(SimTime, SimTime)]) -> Result<(), TestbedError> {
    let ok = plan.iter().all(|(a, b)| a < b) && plan.windows(2).all(|w| w[0].1 < w[1].0);
    if ok {
        Ok(())
    } else {
        Err(TestbedError::BadUsage(id.into()))
    }
}

/// Run the experiment over `[0, horizon)`.
pub fn run(config: TestbedConfig) -> Result<TestbedRun, TestbedError> {
    let TestbedConfig { horizon, seed, topology, units, drm, pricing, sensors } = config;
    if horizon == SimTime::ZERO {
        return Err(TestbedError::ZeroHorizon);
    }
    if drm.is_some_and(|d| d.report_period_s == 0 || d.policy.control_period_s == 0)
        || sensors.is_some_and(|s| s.period_s == 0)
    {
        return Err(TestbedError::ZeroPeriod);
    }
    topology.validate()?;
    let mut premises = Vec::with_capacity(units.len());
    for s in &units {
        let idx = topology
            .premises
            .iter()
            .position(|p| p.premises_id == s.unit.id)
            .ok_or_else(|| TestbedError::UnknownPremises(s.unit.id.clone()))?;
        premises.push(idx);
        if s.usage.len() != s.unit.appliances.len() {
            return Err(TestbedError::PlanMismatch {
                unit: s.unit.id.clone(),
                plans: s.usage.len(),
                appliances: s.unit.appliances.len(),
            });
        }
        for (a, plan) in s.unit.appliances.iter().zip(&s.usage) {
            check_usage(&a.id, plan)?;
        }
        if !s.unit.base_profile.covers(horizon) || !s.unit.occupancy.covers(SimTime::ZERO, horizon) {
            return Err(TestbedError::Coverage(s.unit.id.clone()));
        }
    }

    let mut rngs = RngStreams::new(seed);
    let cloud = topology.cloud().expect("validated topology has a cloud");
    let net = Network::new(topology, &mut rngs);
    let sensor_keys = premises
        .iter()
        .map(|&p| {
            net.topology().premises[p]
                .mpns
                .iter()
                .map(|m| rngs.register(&format!("sensor/{}", net.topology().node(*m).name)))
                .collect()
        })
        .collect();
    let actual: Vec<Unit> = units.iter().map(|s| s.unit.clone()).collect();
    let mut state = State {
        horizon,
        rngs,
        net,
        cloud,
        shed: actual.iter().map(|u| vec![false; u.appliances.len()]).collect(),
        desired: actual.clone(),
        actual,
        premises,
        controller: drm.map(|d| Controller::new(d.policy)),
        drm,
        pricing,
        sensors,
        sensor_keys,
        log: TraceLog::new(),
        last_demand: (0.0, 0.0, 0.0),
        next_message: 0,
        next_command: 0,
    };

    let mut eng: Engine<Payload> = Engine::new();
    for (u, s) in units.iter().enumerate() {
        let next = s.unit.base_profile.next_step_after(SimTime::ZERO);
        schedule(&mut eng, horizon, next, EventKind::LoadChange, Payload::BaseStep { unit: u });
    }
    for (u, s) in units.iter().enumerate() {
        for (app, plan) in s.usage.iter().enumerate() {
            for &(on, off) in plan {
                schedule(&mut eng, horizon, on, EventKind::LoadChange, Payload::UserSwitch { unit: u, app, on: true });
                schedule(
                    &mut eng,
                    horizon,
                    off,
                    EventKind::LoadChange,
                    Payload::UserSwitch { unit: u, app, on: false },
                );
            }
        }
    }
    for (index, p) in state.pricing.iter().enumerate() {
        schedule(&mut eng, horizon, p.effective_at, EventKind::PriceUpdate, Payload::PriceUpdate { index });
    }
    if sensors.is_some() {
        for (u, keys) in state.sensor_keys.iter().enumerate() {
            for mpn in 0..keys.len() {
                schedule(&mut eng, horizon, SimTime::ZERO, EventKind::SensorTick, Payload::SensorTick { unit: u, mpn });
            }
        }
    }
    if let Some(d) = drm {
        for u in 0..units.len() {
            schedule(&mut eng, horizon, SimTime::ZERO, EventKind::SensorTick, Payload::MeterReport { unit: u });
        }
        schedule(&mut eng, horizon, SimTime(d.tick_offset_ms), EventKind::ControllerTick, Payload::ControllerTick);
    }

    state.log_demand(SimTime::ZERO, None, false);
    let summary = eng.run_until(horizon, |eng, ev| {
        state.handle(eng, ev.fire_at, ev.payload);
        state.log_demand_if_changed(ev.fire_at);
    });
    Ok(TestbedRun {
        events: state.log.into_events(),
        summary,
        dispatch_digest: eng.dispatch_digest(),
        units: state.actual,
        uncontrolled: state.desired,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analytics::{demand_series, impairment_report};
    use crate::network::{build_topology, LinkOverride, TopologyTemplate};
    use crate::premises::{Appliance, ApplianceLabel, LoadProfile, OccupancyTrace, UnitKind};

    const HOUR: u64 = 3_600_000;

    fn setup(loss: f64, latency_ms: u64) -> TestbedConfig {
        let horizon = SimTime::from_hours(4);
        let mut topology = build_topology(&TopologyTemplate::hostel(2, 2)).unwrap();
        topology
            .apply_overrides(&[LinkOverride { jitter_ms: Some(0), base_latency_ms: Some(0), ..Default::default() }])
            .unwrap();
        topology
            .apply_overrides(&[LinkOverride {
                kind: Some(crate::network::LinkKind::ZWave),
                base_latency_ms: Some(latency_ms),
                loss_prob: Some(loss),
                ..Default::default()
            }])
            .unwrap();
        let units = (0..2)
            .map(|u| {
                let id = format!("u{u}");
                let apps = (0..2)
                    .map(|p| {
                        Appliance::new(
                            format!("u{u}.plug{p}"),
                            ApplianceLabel::Light,
                            1_000.0,
                            true,
                            1.0 + p as f64,
                            vec![],
                        )
                        .unwrap()
                    })
                    .collect();
                UnitSetup {
                    unit: Unit {
                        id,
                        kind: UnitKind::Hostel,
                        appliances: apps,
                        base_profile: LoadProfile::constant(2.0, 60, horizon).unwrap(),
                        occupancy: OccupancyTrace::always(true, horizon),
                        mpns: vec![],
                    },
                    usage: vec![vec![(SimTime(HOUR), SimTime(3 * HOUR))]; 2],
                }
            })
            .collect();
        TestbedConfig {
            horizon,
            seed: 7,
            topology,
            units,
            drm: Some(DrmSetup { policy: DrmPolicy::new(6.5, 60).unwrap(), report_period_s: 60, tick_offset_ms: 1 }),
            pricing: vec![PriceSignal { effective_at: SimTime::ZERO, price_sgd_per_kwh: 0.2 }],
            sensors: None,
        }
    }

    #[test]
    fn ideal_network_sheds_within_a_tick() {
        let cfg = setup(0.0, 0);
        let policy = cfg.drm.unwrap().policy;
        let run = run(cfg).unwrap();
        assert!(crate::trace::is_ordered(&run.events));
        let r = impairment_report(&run.events, &policy, SimTime::from_hours(4)).unwrap();
        assert_eq!(r.commands_lost, 0);
        assert!(r.commands_sent >= 1);
        assert!(r.controlled.max_excursion_s <= 60.0);
        assert_eq!(r.uncontrolled.time_above_threshold_s, 7200.0);
        let last = demand_series(&run.events).last().copied().unwrap();
        assert_eq!(last.true_kw, 4.0);
    }

    #[test]
    fn lost_commands_leave_demand_uncontrolled() {
        let cfg = setup(1.0, 0);
        let run = run(cfg).unwrap();
        for p in demand_series(&run.events) {
            assert_eq!(p.true_kw, p.uncontrolled_kw);
        }
    }

    #[test]
    fn deterministic_per_seed() {
        let a = run(setup(0.2, 100)).unwrap();
        let b = run(setup(0.2, 100)).unwrap();
        assert_eq!(a.events, b.events);
        assert_eq!(a.dispatch_digest, b.dispatch_digest);
    }

    #[test]
    fn first_record_is_demand_at_zero() {
        let run = run(setup(0.0, 0)).unwrap();
        assert!(matches!(run.events[0].body, TraceBody::Demand { .. }));
        assert_eq!(run.events[0].at, SimTime::ZERO);
    }
}
