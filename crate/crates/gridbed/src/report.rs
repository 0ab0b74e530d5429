//! The analysis report, computed from a parsed trace alone so that a run's
//! report and an offline `report` of its trace are identical.

use std::collections::BTreeMap;

use serde::Serialize;
use sha2::{Digest, Sha256};

use gridbed_core::analytics::{
    compute_wastage, demand_series, energy_and_cost, extrapolate_campus_wastage, impairment_report, infer_occupancy,
    CampusExtrapolation, DemandPoint, EnergyCost, ImpairmentReport, WastageAggregate, WastageRecord,
};
use gridbed_core::drm::{classify_reserve, PriceSignal, ReserveClass};
use gridbed_core::network::{LatencyStats, Network, NodeListing};
use gridbed_core::premises::SensorSample;
use gridbed_core::scheduler::{solve_exact, solve_heuristic, HeuristicSolution, Objective, ScheduleAssignment};
use gridbed_core::trace::TraceBody;
use gridbed_core::{RngStreams, SimTime};

use crate::scenario::{Issue, ScenarioSpec};
use crate::tracefile::ParsedTrace;

pub const REPORT_SCHEMA_VERSION: u32 = 1;
const PROBE_SAMPLES: usize = 1_000;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Report {
    pub schema_version: u32,
    pub scenario: String,
    pub seed: u64,
    pub horizon_ms: u64,
    pub trace_sha256: String,
    pub trace_events: usize,
    pub dispatch_digest: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub threshold_kw: Option<f64>,
    pub topology: Vec<NodeListing>,
    pub demand_series: Vec<DemandPoint>,
    pub energy: EnergyCost,
    pub prices: Vec<PriceSignal>,
    pub messages: MessageCounts,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub impairment: Option<ImpairmentReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reserve: Option<ReserveView>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub wastage: Option<WastageView>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub scheduler: Option<SchedulerView>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct MessageCounts {
    pub sent: BTreeMap<String, u64>,
    pub lost: BTreeMap<String, u64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ReserveView {
    /// From applied commands in the trace.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub command_p95_ms: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub command_class: Option<ReserveClass>,
    /// Independent probe of the cloud-to-actuator path.
    pub probe: LatencyStats,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub probe_class: Option<ReserveClass>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct WastageView {
    pub idle_window_s: u32,
    pub tariff_sgd_per_kwh: f64,
    /// Against ground-truth occupancy.
    pub records: Vec<WastageRecord>,
    pub aggregate: WastageAggregate,
    pub campus: CampusExtrapolation,
    /// Against occupancy inferred from delivered sensor samples.
    pub detector: DetectorView,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DetectorView {
    pub records: Vec<WastageRecord>,
    pub aggregate: WastageAggregate,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SchedulerView {
    pub objective: Objective,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub exact: Option<ScheduleAssignment>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub exact_error: Option<String>,
    pub heuristic: HeuristicSolution,
}

#[derive(Debug, thiserror::Error)]
pub enum ReportError {
    #[error("embedded scenario is invalid: {}", .0.iter().map(|i| i.to_string()).collect::<Vec<_>>().join("; "))]
    Scenario(Vec<Issue>),
    #[error("{0}")]
    Analysis(String),
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn kind_name(k: gridbed_core::network::MessageKind) -> String {
    serde_json::to_value(k).ok().and_then(|v| v.as_str().map(String::from)).unwrap_or_default()
}

/// Build the report for `trace` whose file bytes are `raw`.
pub fn build_report(trace: &ParsedTrace, raw: &[u8]) -> Result<Report, ReportError> {
    let spec: &ScenarioSpec = &trace.scenario;
    let resolved = spec.resolve().map_err(ReportError::Scenario)?;
    let horizon = resolved.horizon;
    let events = &trace.events;
    let analysis = |e: String| ReportError::Analysis(e);

    let series = demand_series(events);
    let energy = energy_and_cost(&series, &resolved.prices, horizon);

    let mut messages = MessageCounts::default();
    for e in events {
        if let TraceBody::Message { kind, lost_hop, .. } = &e.body {
            *messages.sent.entry(kind_name(*kind)).or_default() += 1;
            if lost_hop.is_some() {
                *messages.lost.entry(kind_name(*kind)).or_default() += 1;
            }
        }
    }

    let impairment = match resolved.policy {
        Some(p) => Some(impairment_report(events, &p, horizon).map_err(|e| analysis(e.to_string()))?),
        None => None,
    };

    let reserve = match &impairment {
        Some(imp) => {
            let topology = resolved.config.topology.clone();
            let cloud = topology.cloud().expect("validated topology");
            let target = topology
                .premises
                .iter()
                .find_map(|p| p.plugs.values().next().copied())
                .unwrap_or_else(|| topology.premises[0].actuator_for(""));
            let mut rngs = RngStreams::new(spec.seed);
            let mut net = Network::new(topology, &mut rngs);
            let probe = net
                .path_latency_stats(&mut rngs, cloud, target, PROBE_SAMPLES, SimTime::ZERO)
                .map_err(|e| analysis(e.to_string()))?;
            Some(ReserveView {
                command_p95_ms: imp.p95_command_latency_ms,
                command_class: imp.p95_command_latency_ms.and_then(|p| classify_reserve(p as f64).ok()),
                probe_class: probe.p95_ms.and_then(|p| classify_reserve(p).ok()),
                probe,
            })
        }
        None => None,
    };

    let wastage = match (&spec.wastage, &spec.sensors) {
        (Some(w), Some(s)) => {
            let mut units = resolved.units();
            let mut index: BTreeMap<&str, (usize, usize)> = BTreeMap::new();
            for (ui, u) in units.iter().enumerate() {
                for (ai, a) in u.appliances.iter().enumerate() {
                    index.insert(a.id.as_str(), (ui, ai));
                }
            }
            let index: BTreeMap<String, (usize, usize)> = index.into_iter().map(|(k, v)| (k.to_string(), v)).collect();
            let mut samples: Vec<Vec<SensorSample>> = vec![Vec::new(); units.len()];
            for e in events {
                match &e.body {
                    TraceBody::Switch { appliance, state, .. } => {
                        let &(ui, ai) =
                            index.get(appliance).ok_or_else(|| analysis(format!("unknown appliance '{appliance}'")))?;
                        units[ui].appliances[ai].switch(e.at, *state).map_err(|e| analysis(e.to_string()))?;
                    }
                    TraceBody::Sensor {
                        mpn,
                        unit,
                        motion,
                        noise_db,
                        temp_c,
                        humidity_pct,
                        lux,
                        delivered_at: Some(_),
                    } => {
                        if let Some(ui) = units.iter().position(|u| &u.id == unit) {
                            samples[ui].push(SensorSample {
                                mpn_id: mpn.clone(),
                                at: e.at,
                                motion: *motion,
                                noise_db: *noise_db,
                                temp_c: *temp_c,
                                humidity_pct: *humidity_pct,
                                lux: *lux,
                            });
                        }
                    }
                    _ => {}
                }
            }
            let window = (SimTime::ZERO, horizon);
            let truth: Vec<_> = units.iter().map(|u| u.occupancy.clone()).collect();
            let (records, aggregate) = compute_wastage(&units, &truth, window).map_err(|e| analysis(e.to_string()))?;
            let threshold = w.noise_threshold_db.unwrap_or_else(|| s.model.noise_threshold_db());
            let inferred = samples
                .iter()
                .map(|s| infer_occupancy(s, w.idle_window_s, threshold, window))
                .collect::<Result<Vec<_>, _>>()
                .map_err(|e| analysis(e.to_string()))?;
            let (d_records, d_aggregate) =
                compute_wastage(&units, &inferred, window).map_err(|e| analysis(e.to_string()))?;
            let campus =
                extrapolate_campus_wastage(&aggregate.mean_record(window), w.campus_rooms, w.tariff_sgd_per_kwh);
            Some(WastageView {
                idle_window_s: w.idle_window_s,
                tariff_sgd_per_kwh: w.tariff_sgd_per_kwh,
                records,
                aggregate,
                campus,
                detector: DetectorView { records: d_records, aggregate: d_aggregate },
            })
        }
        _ => None,
    };

    let scheduler = match &spec.scheduler {
        Some(s) => {
            let exact = solve_exact(&s.requests, &s.rooms, &s.prices_sgd_per_kwh, s.objective);
            let heuristic = solve_heuristic(&s.requests, &s.rooms, &s.prices_sgd_per_kwh, s.objective)
                .map_err(|e| analysis(e.to_string()))?;
            let (exact, exact_error) = match exact {
                Ok(a) => (Some(a), None),
                Err(e) => (None, Some(e.to_string())),
            };
            Some(SchedulerView { objective: s.objective, exact, exact_error, heuristic })
        }
        None => None,
    };

    Ok(Report {
        schema_version: REPORT_SCHEMA_VERSION,
        scenario: spec.name.clone(),
        seed: spec.seed,
        horizon_ms: spec.horizon_ms,
        trace_sha256: sha256_hex(raw),
        trace_events: events.len(),
        dispatch_digest: trace.dispatch_digest.clone(),
        threshold_kw: resolved.policy.map(|p| p.threshold_kw),
        topology: resolved.config.topology.echo(),
        demand_series: series,
        energy,
        prices: resolved.prices.clone(),
        messages,
        impairment,
        reserve,
        wastage,
        scheduler,
    })
}

/// Demand series as CSV: time, controlled, uncontrolled, base and threshold.
pub fn demand_csv(report: &Report) -> Result<Vec<u8>, csv::Error> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["at_ms", "controlled_kw", "uncontrolled_kw", "base_kw", "threshold_kw"])?;
    let thr = report.threshold_kw.map(|t| t.to_string()).unwrap_or_default();
    for p in &report.demand_series {
        w.write_record([
            p.at.as_ms().to_string(),
            p.true_kw.to_string(),
            p.uncontrolled_kw.to_string(),
            p.base_kw.to_string(),
            thr.clone(),
        ])?;
    }
    w.into_inner().map_err(|e| csv::Error::from(e.into_error()))
}

/// Per-room wastage table: room, lights kWh, ACS kWh, SGD.
pub fn wastage_csv(view: &WastageView) -> Result<Vec<u8>, csv::Error> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["room", "lights_kwh", "acs_kwh", "sgd"])?;
    for r in &view.records {
        w.write_record([
            r.room_id.clone(),
            r.lights_kwh.to_string(),
            r.acs_kwh.to_string(),
            r.cost_sgd(view.tariff_sgd_per_kwh).to_string(),
        ])?;
    }
    w.into_inner().map_err(|e| csv::Error::from(e.into_error()))
}
