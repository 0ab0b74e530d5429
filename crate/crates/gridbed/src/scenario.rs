//! Scenario files: schema, structural and referential validation, and
//! translation into a testbed configuration.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use gridbed_core::analytics::{DEFAULT_IDLE_WINDOW_S, DEFAULT_TARIFF_SGD_PER_KWH};
use gridbed_core::drm::{price_schedule, DrmPolicy, PriceSignal, PricingKind};
use gridbed_core::network::{
    build_topology, CongestionWindow, HostelUnitPlan, LinkKind, LinkOverride, Topology, TopologyTemplate,
};
use gridbed_core::premises::{
    synthesize_nems_base, Appliance, ApplianceLabel, LoadProfile, OccupancyInterval, OccupancyTrace, SensorModel,
    SignaturePhase, Unit, UnitKind,
};
use gridbed_core::scheduler::{MeetingRequest, Objective, RoomResource};
use gridbed_core::testbed::{DrmSetup, SensorSetup, TestbedConfig, UnitSetup};
use gridbed_core::SimTime;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSpec {
    pub schema_version: u32,
    pub name: String,
    pub horizon_ms: u64,
    pub seed: u64,
    pub topology: TopologySpec,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub links: Vec<LinkOverrideSpec>,
    pub units: Vec<UnitSpec>,
    #[serde(default)]
    pub appliances: Vec<ApplianceSpec>,
    pub base_load: BaseLoadSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub drm: Option<DrmSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pricing: Option<PricingKind>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sensors: Option<SensorSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wastage: Option<WastageSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scheduler: Option<SchedulerSpec>,
    #[serde(default)]
    pub output: OutputSpec,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TemplateKind {
    Hostel,
    OfficeSection,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TopologySpec {
    pub template: TemplateKind,
    /// MPNs per hostel unit.
    #[serde(default = "default_mpns_per_unit")]
    pub mpns_per_unit: usize,
    /// Office rooms per ZigBee relay.
    #[serde(default = "default_mpns_per_relay")]
    pub mpns_per_relay: usize,
}

fn default_mpns_per_unit() -> usize {
    4
}

fn default_mpns_per_relay() -> usize {
    5
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinkOverrideSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kind: Option<LinkKind>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub between: Option<[String; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub base_latency_ms: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub jitter_ms: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub loss_prob: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub congestion: Option<CongestionWindow>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UnitSpec {
    pub id: String,
    /// Ground-truth occupancy; empty means occupied throughout.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub occupancy: Vec<OccupancySpec>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OccupancySpec {
    pub start_ms: u64,
    pub end_ms: u64,
    pub occupied: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ApplianceSpec {
    pub id: String,
    pub unit: String,
    pub label: ApplianceLabel,
    pub rated_power_w: f64,
    #[serde(default)]
    pub flexible: bool,
    #[serde(default = "default_weight")]
    pub inconvenience_weight: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub signature: Vec<SignaturePhase>,
    /// Intended use as `[on_ms, off_ms)` pairs.
    #[serde(default)]
    pub on_intervals_ms: Vec<[u64; 2]>,
}

fn default_weight() -> f64 {
    1.0
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum BaseLoadSpec {
    /// Residential daily curve; the summed profile peaks at `peak_kw`.
    Nems { peak_kw: f64, resolution_s: u32 },
    /// Same constant draw in every unit.
    Constant {
        kw: f64,
        #[serde(default = "default_constant_resolution")]
        resolution_s: u32,
    },
}

fn default_constant_resolution() -> u32 {
    3_600
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DrmSpec {
    pub threshold_kw: f64,
    #[serde(default = "default_period")]
    pub control_period_s: u32,
    /// Defaults to 5% of the threshold.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub restore_hysteresis_kw: Option<f64>,
    #[serde(default = "default_period")]
    pub report_period_s: u32,
    #[serde(default = "default_tick_offset")]
    pub tick_offset_ms: u64,
}

fn default_period() -> u32 {
    60
}

fn default_tick_offset() -> u64 {
    1_000
}

impl DrmSpec {
    pub fn policy(&self) -> DrmPolicy {
        DrmPolicy {
            threshold_kw: self.threshold_kw,
            control_period_s: self.control_period_s,
            restore_hysteresis_kw: self.restore_hysteresis_kw.unwrap_or(0.05 * self.threshold_kw),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SensorSpec {
    pub period_s: u32,
    #[serde(default)]
    pub model: SensorModel,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WastageSpec {
    #[serde(default = "default_idle")]
    pub idle_window_s: u32,
    #[serde(default = "default_tariff")]
    pub tariff_sgd_per_kwh: f64,
    #[serde(default = "default_campus_rooms")]
    pub campus_rooms: u32,
    /// Defaults to the sensor model's occupied/unoccupied midpoint.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise_threshold_db: Option<f64>,
}

fn default_idle() -> u32 {
    DEFAULT_IDLE_WINDOW_S
}

fn default_tariff() -> f64 {
    DEFAULT_TARIFF_SGD_PER_KWH
}

fn default_campus_rooms() -> u32 {
    200
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SchedulerSpec {
    pub requests: Vec<MeetingRequest>,
    pub rooms: Vec<RoomResource>,
    pub prices_sgd_per_kwh: Vec<f64>,
    #[serde(default)]
    pub objective: Objective,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSpec {
    /// Used when neither `--out` nor `GRIDBED_OUT` is given.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dir: Option<String>,
    #[serde(default = "default_trace")]
    pub trace: String,
    #[serde(default = "default_report")]
    pub report: String,
    #[serde(default = "default_demand_csv")]
    pub demand_csv: String,
    #[serde(default = "default_wastage_csv")]
    pub wastage_csv: String,
}

impl Default for OutputSpec {
    fn default() -> Self {
        OutputSpec {
            dir: None,
            trace: default_trace(),
            report: default_report(),
            demand_csv: default_demand_csv(),
            wastage_csv: default_wastage_csv(),
        }
    }
}

fn default_trace() -> String {
    "trace.jsonl".into()
}

fn default_report() -> String {
    "report.json".into()
}

fn default_demand_csv() -> String {
    "demand.csv".into()
}

fn default_wastage_csv() -> String {
    "wastage.csv".into()
}

/// One validation problem, located by a field path such as `appliances[3].unit`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Issue {
    pub path: String,
    pub message: String,
}

impl Issue {
    fn new(path: impl Into<String>, message: impl Into<String>) -> Self {
        Issue { path: path.into(), message: message.into() }
    }
}

impl fmt::Display for Issue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.path.is_empty() {
            write!(f, "{}", self.message)
        } else {
            write!(f, "{}: {}", self.path, self.message)
        }
    }
}

/// Everything a run needs, derived from a valid scenario.
#[derive(Clone, Debug)]
pub struct Resolved {
    pub config: TestbedConfig,
    pub policy: Option<DrmPolicy>,
    pub prices: Vec<PriceSignal>,
    pub horizon: SimTime,
}

impl Resolved {
    /// Units with fresh appliance state, in scenario order.
    pub fn units(&self) -> Vec<Unit> {
        self.config.units.iter().map(|s| s.unit.clone()).collect()
    }
}

fn positive(x: f64) -> bool {
    x > 0.0 && x.is_finite()
}

impl ScenarioSpec {
    pub fn unit_kind(&self) -> UnitKind {
        match self.topology.template {
            TemplateKind::Hostel => UnitKind::Hostel,
            TemplateKind::OfficeSection => UnitKind::Office,
        }
    }

    fn check_fields(&self, issues: &mut Vec<Issue>) {
        if self.schema_version != SCHEMA_VERSION {
            issues.push(Issue::new(
                "schema_version",
                format!("unsupported schema version {} (expected {SCHEMA_VERSION})", self.schema_version),
            ));
        }
        if self.horizon_ms == 0 {
            issues.push(Issue::new("horizon_ms", "horizon_ms must be > 0"));
        }
        if self.units.is_empty() {
            issues.push(Issue::new("units", "at least one unit is required"));
        }
        let mut seen = BTreeSet::new();
        for (i, u) in self.units.iter().enumerate() {
            if u.id.is_empty() {
                issues.push(Issue::new(format!("units[{i}].id"), "id must not be empty"));
            }
            if !seen.insert(u.id.as_str()) {
                issues.push(Issue::new(format!("units[{i}].id"), format!("duplicate unit id '{}'", u.id)));
            }
            if !u.occupancy.is_empty() {
                let ivs = occupancy_intervals(&u.occupancy);
                if let Err(e) = OccupancyTrace::covering(ivs, SimTime(self.horizon_ms)) {
                    issues.push(Issue::new(format!("units[{i}].occupancy"), e.to_string()));
                }
            }
        }
        let mut app_ids = BTreeSet::new();
        for (i, a) in self.appliances.iter().enumerate() {
            let at = |f: &str| format!("appliances[{i}].{f}");
            if !app_ids.insert(a.id.as_str()) {
                issues.push(Issue::new(at("id"), format!("duplicate appliance id '{}'", a.id)));
            }
            if !self.units.iter().any(|u| u.id == a.unit) {
                issues.push(Issue::new(at("unit"), format!("unknown unit '{}'", a.unit)));
            }
            if !positive(a.rated_power_w) {
                issues.push(Issue::new(at("rated_power_w"), "rated_power_w must be > 0"));
            }
            if !positive(a.inconvenience_weight) {
                issues.push(Issue::new(at("inconvenience_weight"), "inconvenience_weight must be > 0"));
            }
            if let Some(j) = a.signature.iter().position(|p| !(p.power_w >= 0.0 && p.power_w.is_finite())) {
                issues.push(Issue::new(format!("appliances[{i}].signature[{j}].power_w"), "power_w must be >= 0"));
            }
            for (j, iv) in a.on_intervals_ms.iter().enumerate() {
                let p = format!("appliances[{i}].on_intervals_ms[{j}]");
                if iv[0] >= iv[1] {
                    issues.push(Issue::new(p, "interval must have start < end"));
                } else if j > 0 && a.on_intervals_ms[j - 1][1] >= iv[0] {
                    issues.push(Issue::new(p, "intervals must be sorted and separated"));
                }
            }
        }
        match self.base_load {
            BaseLoadSpec::Nems { peak_kw, resolution_s } => {
                if !positive(peak_kw) {
                    issues.push(Issue::new("base_load.nems.peak_kw", "peak_kw must be > 0"));
                }
                if resolution_s == 0 {
                    issues.push(Issue::new("base_load.nems.resolution_s", "resolution_s must be > 0"));
                }
            }
            BaseLoadSpec::Constant { kw, resolution_s } => {
                if !(kw >= 0.0 && kw.is_finite()) {
                    issues.push(Issue::new("base_load.constant.kw", "kw must be >= 0"));
                }
                if resolution_s == 0 {
                    issues.push(Issue::new("base_load.constant.resolution_s", "resolution_s must be > 0"));
                }
            }
        }
        if let Some(d) = &self.drm {
            if !positive(d.threshold_kw) {
                issues.push(Issue::new("drm.threshold_kw", "threshold_kw must be > 0"));
            }
            if d.control_period_s == 0 {
                issues.push(Issue::new("drm.control_period_s", "control_period_s must be > 0"));
            }
            if d.report_period_s == 0 {
                issues.push(Issue::new("drm.report_period_s", "report_period_s must be > 0"));
            }
            if let Some(h) = d.restore_hysteresis_kw {
                if !(h >= 0.0 && h < d.threshold_kw) {
                    issues.push(Issue::new(
                        "drm.restore_hysteresis_kw",
                        "restore_hysteresis_kw must be >= 0 and below threshold_kw",
                    ));
                }
            }
        }
        if let Some(p) = self.pricing {
            if let Err(e) = price_schedule(p, SimTime(self.horizon_ms.max(1))) {
                issues.push(Issue::new("pricing", e.to_string()));
            }
        }
        if let Some(s) = &self.sensors {
            if s.period_s == 0 {
                issues.push(Issue::new("sensors.period_s", "period_s must be > 0"));
            }
            let m = &s.model;
            if !(0.0..=1.0).contains(&m.p_motion_when_occupied) {
                issues.push(Issue::new("sensors.model.p_motion_when_occupied", "must be within [0, 1]"));
            }
        }
        if let Some(w) = &self.wastage {
            if w.idle_window_s == 0 {
                issues.push(Issue::new("wastage.idle_window_s", "idle_window_s must be > 0"));
            }
            if !positive(w.tariff_sgd_per_kwh) {
                issues.push(Issue::new("wastage.tariff_sgd_per_kwh", "tariff_sgd_per_kwh must be > 0"));
            }
            if self.sensors.is_none() {
                issues.push(Issue::new("wastage", "wastage analysis needs a sensors section"));
            }
        }
        if let Some(s) = &self.scheduler {
            if s.prices_sgd_per_kwh.is_empty() {
                issues.push(Issue::new("scheduler.prices_sgd_per_kwh", "at least one slot price is required"));
            }
            if let Some(j) = s.prices_sgd_per_kwh.iter().position(|p| !(*p >= 0.0 && p.is_finite())) {
                issues.push(Issue::new(format!("scheduler.prices_sgd_per_kwh[{j}]"), "price must be >= 0"));
            }
            let mut ids = BTreeSet::new();
            for (i, r) in s.requests.iter().enumerate() {
                if !ids.insert(r.id.as_str()) {
                    issues.push(Issue::new(
                        format!("scheduler.requests[{i}].id"),
                        format!("duplicate request id '{}'", r.id),
                    ));
                }
                if r.duration_slots == 0 {
                    issues.push(Issue::new(
                        format!("scheduler.requests[{i}].duration_slots"),
                        "duration_slots must be > 0",
                    ));
                }
                if r.attendees == 0 {
                    issues.push(Issue::new(format!("scheduler.requests[{i}].attendees"), "attendees must be > 0"));
                }
                if r.latest_slot < r.earliest_slot {
                    issues.push(Issue::new(
                        format!("scheduler.requests[{i}].latest_slot"),
                        "latest_slot must be >= earliest_slot",
                    ));
                }
            }
            let mut ids = BTreeSet::new();
            for (i, r) in s.rooms.iter().enumerate() {
                if !ids.insert(r.id.as_str()) {
                    issues
                        .push(Issue::new(format!("scheduler.rooms[{i}].id"), format!("duplicate room id '{}'", r.id)));
                }
                if r.capacity == 0 || !positive(r.active_power_kw) || r.slot_length_min == 0 {
                    issues.push(Issue::new(
                        format!("scheduler.rooms[{i}]"),
                        "capacity, active_power_kw and slot_length_min must be > 0",
                    ));
                }
            }
        }
    }

    fn template(&self) -> TopologyTemplate {
        match self.topology.template {
            TemplateKind::Hostel => TopologyTemplate::Hostel {
                units: self
                    .units
                    .iter()
                    .map(|u| HostelUnitPlan {
                        id: u.id.clone(),
                        mpns: self.topology.mpns_per_unit,
                        plugs: self
                            .appliances
                            .iter()
                            .filter(|a| a.unit == u.id && a.flexible)
                            .map(|a| a.id.clone())
                            .collect(),
                    })
                    .collect(),
            },
            TemplateKind::OfficeSection => TopologyTemplate::OfficeSection {
                rooms: self.units.iter().map(|u| u.id.clone()).collect(),
                mpns_per_relay: self.topology.mpns_per_relay,
            },
        }
    }

    /// Build the network with link overrides applied.
    pub fn topology(&self) -> Result<Topology, Vec<Issue>> {
        let mut topo = build_topology(&self.template()).map_err(|e| vec![Issue::new("topology", e.to_string())])?;
        let mut issues = Vec::new();
        for (i, l) in self.links.iter().enumerate() {
            let o = LinkOverride {
                kind: l.kind,
                between: l.between.clone().map(|[a, b]| (a, b)),
                base_latency_ms: l.base_latency_ms,
                jitter_ms: l.jitter_ms,
                loss_prob: l.loss_prob,
                congestion: l.congestion,
            };
            if let Err(e) = topo.apply_overrides(&[o]) {
                issues.push(Issue::new(format!("links[{i}]"), e.to_string()));
            }
        }
        if issues.is_empty() {
            Ok(topo)
        } else {
            Err(issues)
        }
    }

    /// Full validation; returns every problem found.
    pub fn validate(&self) -> Result<(), Vec<Issue>> {
        self.resolve().map(|_| ())
    }

    pub fn resolve(&self) -> Result<Resolved, Vec<Issue>> {
        let mut issues = Vec::new();
        self.check_fields(&mut issues);
        if !issues.is_empty() {
            return Err(issues);
        }
        let topology = self.topology()?;
        let horizon = SimTime(self.horizon_ms);
        let base = match self.base_load {
            BaseLoadSpec::Nems { peak_kw, resolution_s } => {
                synthesize_nems_base(self.units.len(), peak_kw, self.seed, resolution_s, horizon)
            }
            BaseLoadSpec::Constant { kw, resolution_s } => {
                LoadProfile::constant(kw, resolution_s, horizon).map(|p| vec![p; self.units.len()])
            }
        }
        .map_err(|e| vec![Issue::new("base_load", e.to_string())])?;
        let kind = self.unit_kind();
        let mut units = Vec::with_capacity(self.units.len());
        for (u, profile) in self.units.iter().zip(base) {
            let premises =
                topology.premises.iter().find(|p| p.premises_id == u.id).expect("template built from the unit list");
            let mut appliances = Vec::new();
            let mut usage = Vec::new();
            for (i, a) in self.appliances.iter().enumerate().filter(|(_, a)| a.unit == u.id) {
                let app = Appliance::new(
                    a.id.clone(),
                    a.label,
                    a.rated_power_w,
                    a.flexible,
                    a.inconvenience_weight,
                    a.signature.clone(),
                )
                .map_err(|e| vec![Issue::new(format!("appliances[{i}]"), e.to_string())])?;
                appliances.push(app);
                usage.push(a.on_intervals_ms.iter().map(|iv| (SimTime(iv[0]), SimTime(iv[1]))).collect());
            }
            let occupancy = if u.occupancy.is_empty() {
                OccupancyTrace::always(true, horizon)
            } else {
                OccupancyTrace::covering(occupancy_intervals(&u.occupancy), horizon).expect("checked above")
            };
            let unit = Unit {
                id: u.id.clone(),
                kind,
                appliances,
                base_profile: profile,
                occupancy,
                mpns: premises.mpns.iter().map(|m| topology.node(*m).name.clone()).collect(),
            };
            units.push(UnitSetup { unit, usage });
        }
        let policy = self.drm.map(|d| d.policy());
        if let Some(p) = policy {
            p.validate().map_err(|e| vec![Issue::new("drm", e.to_string())])?;
        }
        let prices = match self.pricing {
            Some(p) => price_schedule(p, horizon).map_err(|e| vec![Issue::new("pricing", e.to_string())])?,
            None => Vec::new(),
        };
        let config = TestbedConfig {
            horizon,
            seed: self.seed,
            topology,
            units,
            drm: self.drm.map(|d| DrmSetup {
                policy: d.policy(),
                report_period_s: d.report_period_s,
                tick_offset_ms: d.tick_offset_ms,
            }),
            pricing: prices.clone(),
            sensors: self.sensors.map(|s| SensorSetup { model: s.model, period_s: s.period_s }),
        };
        Ok(Resolved { config, policy, prices, horizon })
    }
}

fn occupancy_intervals(spec: &[OccupancySpec]) -> Vec<OccupancyInterval> {
    spec.iter()
        .map(|o| OccupancyInterval { start: SimTime(o.start_ms), end: SimTime(o.end_ms), occupied: o.occupied })
        .collect()
}
