//! Post-hoc analysis over sensor samples, unit histories and run traces.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::drm::{price_at, DrmPolicy, PriceSignal};
use crate::network::nearest_rank;
use crate::premises::{
    appliance_power_trace, Appliance, ApplianceLabel, ApplianceState, LoadProfile, OccupancyInterval, OccupancyTrace,
    SensorSample, Signature, Unit,
};
use crate::simcore::SimTime;
use crate::trace::{TraceBody, TraceEvent};
use crate::EPS;

const WMS_PER_KWH: f64 = 3.6e9;
const MS_PER_HOUR: f64 = 3_600_000.0;

pub const DEFAULT_IDLE_WINDOW_S: u32 = 900;
pub const DEFAULT_TARIFF_SGD_PER_KWH: f64 = 0.2328;
/// Step power above which a trace counts as switched on.
pub const DEFAULT_ON_THRESHOLD_W: f64 = 25.0;

#[derive(Clone, Debug, PartialEq, thiserror::Error)]
pub enum AnalyticsError {
    #[error("samples out of time order at index {0}")]
    UnorderedSamples(usize),
    #[error("invalid window [{0}, {1})")]
    InvalidWindow(SimTime, SimTime),
    #[error("idle window must be > 0")]
    ZeroIdleWindow,
    #[error("occupancy for room '{0}' does not cover the analysis window")]
    CoverageGap(String),
    #[error("{rooms} rooms but {traces} occupancy traces")]
    RoomMismatch { rooms: usize, traces: usize },
    #[error("appliance library is empty")]
    EmptyLibrary,
    #[error("signature could not be rendered: {0}")]
    Render(String),
    #[error("truncated trace")]
    TruncatedTrace,
}

/// Detector view of a room: unoccupied from `idle_window_s` after the last
/// motion or noise trigger until the next trigger. The window start counts as
/// a trigger, so a silent room turns unoccupied `idle_window_s` in.
pub fn infer_occupancy(
    samples: &[SensorSample],
    idle_window_s: u32,
    noise_threshold_db: f64,
    window: (SimTime, SimTime),
) -> Result<OccupancyTrace, AnalyticsError> {
    let (start, end) = window;
    if end <= start {
        return Err(AnalyticsError::InvalidWindow(start, end));
    }
    if idle_window_s == 0 {
        return Err(AnalyticsError::ZeroIdleWindow);
    }
    if let Some(i) = samples.windows(2).position(|w| w[1].at < w[0].at) {
        return Err(AnalyticsError::UnorderedSamples(i + 1));
    }
    let idle = u64::from(idle_window_s) * 1_000;
    let mut gaps: Vec<(SimTime, SimTime)> = Vec::new();
    let mut last_active = start;
    for s in samples.iter().filter(|s| s.at >= start && s.at < end) {
        if !(s.motion || s.noise_db >= noise_threshold_db) {
            continue;
        }
        let quiet_from = last_active.saturating_add_ms(idle);
        if s.at > quiet_from {
            gaps.push((quiet_from, s.at));
        }
        last_active = s.at;
    }
    let quiet_from = last_active.saturating_add_ms(idle);
    if end > quiet_from {
        gaps.push((quiet_from, end));
    }
    let mut intervals = Vec::with_capacity(gaps.len() * 2 + 1);
    let mut cursor = start;
    for (a, b) in gaps {
        if a > cursor {
            intervals.push(OccupancyInterval { start: cursor, end: a, occupied: true });
        }
        intervals.push(OccupancyInterval { start: a, end: b, occupied: false });
        cursor = b;
    }
    if end > cursor {
        intervals.push(OccupancyInterval { start: cursor, end, occupied: true });
    }
    OccupancyTrace::new(intervals).map_err(|_| AnalyticsError::InvalidWindow(start, end))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WastageRecord {
    pub room_id: String,
    pub lights_kwh: f64,
    pub acs_kwh: f64,
    pub window: (SimTime, SimTime),
}

impl WastageRecord {
    pub fn total_kwh(&self) -> f64 {
        self.lights_kwh + self.acs_kwh
    }

    pub fn cost_sgd(&self, tariff_sgd_per_kwh: f64) -> f64 {
        self.total_kwh() * tariff_sgd_per_kwh
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WastageAggregate {
    pub rooms: usize,
    pub mean_lights_kwh: f64,
    pub mean_acs_kwh: f64,
    pub total_lights_kwh: f64,
    pub total_acs_kwh: f64,
}

impl WastageAggregate {
    /// Mean room as a record, for extrapolation.
    pub fn mean_record(&self, window: (SimTime, SimTime)) -> WastageRecord {
        WastageRecord { room_id: "mean".into(), lights_kwh: self.mean_lights_kwh, acs_kwh: self.mean_acs_kwh, window }
    }
}

fn unoccupied_wms(appliance: &Appliance, spans: &[(SimTime, SimTime)]) -> f64 {
    spans.iter().map(|&(a, b)| appliance.energy_wms(a, b)).sum()
}

/// Light and ACS energy spent while each room is unoccupied within `window`.
/// `occupancy[i]` belongs to `rooms[i]`.
pub fn compute_wastage(
    rooms: &[Unit],
    occupancy: &[OccupancyTrace],
    window: (SimTime, SimTime),
) -> Result<(Vec<WastageRecord>, WastageAggregate), AnalyticsError> {
    if window.1 <= window.0 {
        return Err(AnalyticsError::InvalidWindow(window.0, window.1));
    }
    if rooms.len() != occupancy.len() {
        return Err(AnalyticsError::RoomMismatch { rooms: rooms.len(), traces: occupancy.len() });
    }
    let mut records = Vec::with_capacity(rooms.len());
    for (room, occ) in rooms.iter().zip(occupancy) {
        if !occ.covers(window.0, window.1) {
            return Err(AnalyticsError::CoverageGap(room.id.clone()));
        }
        let spans = occ.unoccupied_within(window.0, window.1);
        let mut lights = 0.0;
        let mut acs = 0.0;
        for a in &room.appliances {
            match a.label {
                ApplianceLabel::Light => lights += unoccupied_wms(a, &spans),
                ApplianceLabel::Acs => acs += unoccupied_wms(a, &spans),
                _ => {}
            }
        }
        records.push(WastageRecord {
            room_id: room.id.clone(),
            lights_kwh: lights / WMS_PER_KWH,
            acs_kwh: acs / WMS_PER_KWH,
            window,
        });
    }
    let total_lights_kwh: f64 = records.iter().map(|r| r.lights_kwh).sum();
    let total_acs_kwh: f64 = records.iter().map(|r| r.acs_kwh).sum();
    let n = records.len();
    let (mean_lights_kwh, mean_acs_kwh) =
        if n == 0 { (0.0, 0.0) } else { (total_lights_kwh / n as f64, total_acs_kwh / n as f64) };
    let agg = WastageAggregate { rooms: n, mean_lights_kwh, mean_acs_kwh, total_lights_kwh, total_acs_kwh };
    Ok((records, agg))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CampusExtrapolation {
    pub room_count: u32,
    pub tariff_sgd_per_kwh: f64,
    pub total_kwh: f64,
    pub total_sgd: f64,
}

/// Scale one mean room to `room_count` rooms. Each category is scaled
/// separately before summing, which keeps the product exact for decimal inputs
/// such as 6.376 and 232.025.
pub fn extrapolate_campus_wastage(
    mean: &WastageRecord,
    room_count: u32,
    tariff_sgd_per_kwh: f64,
) -> CampusExtrapolation {
    let n = f64::from(room_count);
    let total_kwh = mean.lights_kwh * n + mean.acs_kwh * n;
    CampusExtrapolation { room_count, tariff_sgd_per_kwh, total_kwh, total_sgd: total_kwh * tariff_sgd_per_kwh }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LibraryEntry {
    pub label: ApplianceLabel,
    pub signature: Signature,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "result", rename_all = "snake_case")]
pub enum Identification {
    Match { label: ApplianceLabel, index: usize, distance_w: f64 },
    NoActivity,
}

/// Match the trace's active phase (from the first step above `on_threshold_w`)
/// against each signature rendered at the trace resolution. Lowest L2 distance
/// in watts wins; ties keep the earlier library entry.
pub fn identify_appliance(
    trace: &LoadProfile,
    library: &[LibraryEntry],
    on_threshold_w: f64,
) -> Result<Identification, AnalyticsError> {
    if library.is_empty() {
        return Err(AnalyticsError::EmptyLibrary);
    }
    let Some(onset) = trace.values_kw.iter().position(|v| v * 1_000.0 > on_threshold_w) else {
        return Ok(Identification::NoActivity);
    };
    let active: Vec<f64> = trace.values_kw[onset..].iter().map(|v| v * 1_000.0).collect();
    let len_ms = active.len() as u64 * trace.step_ms();
    let mut best: Option<(usize, f64)> = None;
    for (i, entry) in library.iter().enumerate() {
        let rendered = render_signature(entry, len_ms, trace.resolution_s)?;
        let d2: f64 = active.iter().zip(&rendered.values_kw).map(|(t, s)| (t - s * 1_000.0) * (t - s * 1_000.0)).sum();
        let d = libm::sqrt(d2);
        if best.is_none_or(|(_, bd)| d < bd) {
            best = Some((i, d));
        }
    }
    let (index, distance_w) = best.expect("non-empty library");
    Ok(Identification::Match { label: library[index].label, index, distance_w })
}

fn render_signature(entry: &LibraryEntry, len_ms: u64, resolution_s: u32) -> Result<LoadProfile, AnalyticsError> {
    let rated = entry.signature.iter().map(|p| p.power_w).fold(1.0, f64::max);
    let mut a = Appliance::new("probe", entry.label, rated, false, 1.0, entry.signature.clone())
        .map_err(|e| AnalyticsError::Render(alloc::format!("{e}")))?;
    a.switch(SimTime::ZERO, ApplianceState::On).expect("first switch");
    appliance_power_trace(&a, (SimTime::ZERO, SimTime(len_ms)), resolution_s)
        .map_err(|e| AnalyticsError::Render(alloc::format!("{e}")))
}

/// One point of the piecewise-constant demand series; holds until the next point.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DemandPoint {
    pub at: SimTime,
    pub true_kw: f64,
    pub uncontrolled_kw: f64,
    pub base_kw: f64,
}

/// Demand series from the trace; several records at one instant collapse to the last.
pub fn demand_series(events: &[TraceEvent]) -> Vec<DemandPoint> {
    let mut out: Vec<DemandPoint> = Vec::new();
    for e in events {
        if let TraceBody::Demand { true_kw, uncontrolled_kw, base_kw, .. } = e.body {
            let p = DemandPoint { at: e.at, true_kw, uncontrolled_kw, base_kw };
            match out.last_mut() {
                Some(last) if last.at == e.at => *last = p,
                _ => out.push(p),
            }
        }
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Excursion {
    pub start: SimTime,
    pub end: SimTime,
    pub peak_kw: f64,
    /// Energy above the threshold.
    pub overshoot_kwh: f64,
}

impl Excursion {
    pub fn duration_ms(&self) -> u64 {
        self.end.since(self.start)
    }
}

/// Maximal spans where `value` exceeds `threshold_kw` over `[series[0].at, horizon)`.
pub fn excursions(
    series: &[DemandPoint],
    value: impl Fn(&DemandPoint) -> f64,
    threshold_kw: f64,
    horizon: SimTime,
) -> Vec<Excursion> {
    let mut out: Vec<Excursion> = Vec::new();
    let mut open: Option<Excursion> = None;
    for (i, p) in series.iter().enumerate() {
        if p.at >= horizon {
            break;
        }
        let until = series.get(i + 1).map_or(horizon, |n| n.at.min(horizon));
        let v = value(p);
        if v > threshold_kw + EPS {
            let ex = open.get_or_insert(Excursion { start: p.at, end: p.at, peak_kw: v, overshoot_kwh: 0.0 });
            ex.end = until;
            ex.peak_kw = ex.peak_kw.max(v);
            ex.overshoot_kwh += (v - threshold_kw) * until.since(p.at) as f64 / MS_PER_HOUR;
        } else if let Some(ex) = open.take() {
            out.push(ex);
        }
    }
    out.extend(open);
    out
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ExcursionStats {
    pub time_above_threshold_s: f64,
    pub overshoot_kwh: f64,
    pub excursions: usize,
    pub max_excursion_s: f64,
}

impl ExcursionStats {
    pub fn from_excursions(ex: &[Excursion]) -> Self {
        ExcursionStats {
            time_above_threshold_s: ex.iter().map(|e| e.duration_ms()).sum::<u64>() as f64 / 1_000.0,
            overshoot_kwh: ex.iter().map(|e| e.overshoot_kwh).sum(),
            excursions: ex.len(),
            max_excursion_s: ex.iter().map(|e| e.duration_ms()).max().unwrap_or(0) as f64 / 1_000.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnergyCost {
    pub controlled_kwh: f64,
    pub uncontrolled_kwh: f64,
    /// `None` without a price schedule.
    pub controlled_sgd: Option<f64>,
    pub uncontrolled_sgd: Option<f64>,
    pub peak_controlled_kw: f64,
    pub peak_uncontrolled_kw: f64,
}

/// Energy and bill of both demand series over `[series[0].at, horizon)`.
/// Time before the first price signal is billed at zero.
pub fn energy_and_cost(series: &[DemandPoint], prices: &[PriceSignal], horizon: SimTime) -> EnergyCost {
    let mut out = EnergyCost {
        controlled_kwh: 0.0,
        uncontrolled_kwh: 0.0,
        controlled_sgd: None,
        uncontrolled_sgd: None,
        peak_controlled_kw: 0.0,
        peak_uncontrolled_kw: 0.0,
    };
    let (mut c_sgd, mut u_sgd) = (0.0, 0.0);
    for (i, p) in series.iter().enumerate() {
        if p.at >= horizon {
            break;
        }
        let until = series.get(i + 1).map_or(horizon, |n| n.at.min(horizon));
        out.peak_controlled_kw = out.peak_controlled_kw.max(p.true_kw);
        out.peak_uncontrolled_kw = out.peak_uncontrolled_kw.max(p.uncontrolled_kw);
        let hours = until.since(p.at) as f64 / MS_PER_HOUR;
        out.controlled_kwh += p.true_kw * hours;
        out.uncontrolled_kwh += p.uncontrolled_kw * hours;
        let mut t = p.at;
        while t < until {
            let next = prices.iter().map(|s| s.effective_at).find(|&e| e > t).map_or(until, |e| e.min(until));
            let price = price_at(prices, t).unwrap_or(0.0);
            let h = next.since(t) as f64 / MS_PER_HOUR;
            c_sgd += p.true_kw * h * price;
            u_sgd += p.uncontrolled_kw * h * price;
            t = next;
        }
    }
    if !prices.is_empty() {
        out.controlled_sgd = Some(c_sgd);
        out.uncontrolled_sgd = Some(u_sgd);
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImpairmentReport {
    pub threshold_kw: f64,
    /// True (controlled) demand.
    pub controlled: ExcursionStats,
    /// Counterfactual demand with no control.
    pub uncontrolled: ExcursionStats,
    pub commands_sent: usize,
    pub commands_lost: usize,
    pub commands_applied: usize,
    /// Issue-to-actuation delay of applied commands.
    pub mean_command_latency_ms: Option<f64>,
    pub p95_command_latency_ms: Option<u64>,
}

impl ImpairmentReport {
    pub fn time_above_threshold_s(&self) -> f64 {
        self.controlled.time_above_threshold_s
    }

    pub fn overshoot_kwh(&self) -> f64 {
        self.controlled.overshoot_kwh
    }
}

/// Peak-shaving outcome of a complete trace over `[0, horizon)`.
pub fn impairment_report(
    events: &[TraceEvent],
    policy: &DrmPolicy,
    horizon: SimTime,
) -> Result<ImpairmentReport, AnalyticsError> {
    match events.first() {
        Some(TraceEvent { at: SimTime(0), body: TraceBody::Demand { .. }, .. }) => {}
        _ => return Err(AnalyticsError::TruncatedTrace),
    }
    let series = demand_series(events);
    let thr = policy.threshold_kw;
    let controlled = ExcursionStats::from_excursions(&excursions(&series, |p| p.true_kw, thr, horizon));
    let uncontrolled = ExcursionStats::from_excursions(&excursions(&series, |p| p.uncontrolled_kw, thr, horizon));

    let mut lost_messages: BTreeMap<u64, bool> = BTreeMap::new();
    for e in events {
        if let TraceBody::Message { message_id, lost_hop, .. } = &e.body {
            lost_messages.insert(*message_id, lost_hop.is_some());
        }
    }
    let mut sent = 0;
    let mut lost = 0;
    let mut delays: Vec<u64> = Vec::new();
    for e in events {
        match &e.body {
            TraceBody::Command { message_id, .. } => {
                sent += 1;
                if lost_messages.get(message_id).copied().unwrap_or(false) {
                    lost += 1;
                }
            }
            TraceBody::Shed { issued_at, .. } => delays.push(e.at.since(*issued_at)),
            _ => {}
        }
    }
    let applied = delays.len();
    delays.sort_unstable();
    let mean = (!delays.is_empty()).then(|| delays.iter().map(|d| *d as f64).sum::<f64>() / applied as f64);
    let p95 = (!delays.is_empty()).then(|| nearest_rank(&delays, 0.95));
    Ok(ImpairmentReport {
        threshold_kw: thr,
        controlled,
        uncontrolled,
        commands_sent: sent,
        commands_lost: lost,
        commands_applied: applied,
        mean_command_latency_ms: mean,
        p95_command_latency_ms: p95,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::premises::{SignaturePhase, UnitKind};
    use alloc::vec;

    fn sample(at_s: u64, motion: bool, noise: f64) -> SensorSample {
        SensorSample {
            mpn_id: "m".into(),
            at: SimTime::from_secs(at_s),
            motion,
            noise_db: noise,
            temp_c: 26.0,
            humidity_pct: 60.0,
            lux: 10.0,
        }
    }

    const DAY: SimTime = SimTime::from_days(1);

    #[test]
    fn continuous_motion_is_occupied() {
        let s: Vec<_> = (0..288).map(|i| sample(i * 300, true, 45.0)).collect();
        let t = infer_occupancy(&s, 900, 37.5, (SimTime::ZERO, DAY)).unwrap();
        assert_eq!(t.intervals().len(), 1);
        assert!(t.intervals()[0].occupied);
    }

    #[test]
    fn silent_day_turns_unoccupied_after_window() {
        let s: Vec<_> = (0..288).map(|i| sample(i * 300, false, 30.0)).collect();
        let t = infer_occupancy(&s, 900, 37.5, (SimTime::ZERO, DAY)).unwrap();
        assert_eq!(t.is_occupied(SimTime::from_secs(899)), Some(true));
        assert_eq!(t.is_occupied(SimTime::from_secs(900)), Some(false));
        assert_eq!(t.is_occupied(SimTime::from_secs(86_399)), Some(false));
    }

    #[test]
    fn burst_then_silence() {
        let mut s: Vec<_> = (0..288).map(|i| sample(i * 300, false, 30.0)).collect();
        s[120].motion = true; // 10:00
        let t = infer_occupancy(&s, 900, 37.5, (SimTime::ZERO, DAY)).unwrap();
        assert_eq!(t.is_occupied(SimTime::from_hours(10)), Some(true));
        assert_eq!(t.is_occupied(SimTime::from_secs(10 * 3600 + 899)), Some(true));
        assert_eq!(t.is_occupied(SimTime::from_secs(10 * 3600 + 900)), Some(false));
        assert_eq!(t.is_occupied(SimTime::from_secs(9 * 3600)), Some(false));
    }

    #[test]
    fn loud_sample_counts_as_activity() {
        let s = vec![sample(0, false, 30.0), sample(3000, false, 40.0)];
        let t = infer_occupancy(&s, 900, 37.5, (SimTime::ZERO, SimTime::from_secs(3600))).unwrap();
        assert_eq!(t.is_occupied(SimTime::from_secs(2000)), Some(false));
        assert_eq!(t.is_occupied(SimTime::from_secs(3000)), Some(true));
    }

    #[test]
    fn unordered_samples_rejected() {
        let s = vec![sample(10, false, 30.0), sample(5, false, 30.0)];
        assert_eq!(infer_occupancy(&s, 900, 37.5, (SimTime::ZERO, DAY)), Err(AnalyticsError::UnorderedSamples(1)));
    }

    fn room(id: &str, apps: Vec<Appliance>, horizon: SimTime) -> Unit {
        Unit {
            id: id.into(),
            kind: UnitKind::Office,
            appliances: apps,
            base_profile: LoadProfile::constant(0.0, 60, horizon).unwrap(),
            occupancy: OccupancyTrace::always(true, horizon),
            mpns: vec![],
        }
    }

    fn on_between(mut a: Appliance, on: SimTime, off: SimTime) -> Appliance {
        a.switch(on, ApplianceState::On).unwrap();
        a.switch(off, ApplianceState::Off).unwrap();
        a
    }

    #[test]
    fn light_on_ten_hours_unoccupied() {
        let h = SimTime::from_hours(10);
        let light = on_between(Appliance::simple("l", ApplianceLabel::Light, 300.0, false), SimTime::ZERO, h);
        let r = room("r", vec![light], h);
        let (recs, agg) = compute_wastage(&[r], &[OccupancyTrace::always(false, h)], (SimTime::ZERO, h)).unwrap();
        assert_eq!(recs[0].lights_kwh, 3.0);
        assert_eq!(recs[0].acs_kwh, 0.0);
        assert_eq!(agg.mean_lights_kwh, 3.0);
    }

    #[test]
    fn occupied_room_wastes_nothing() {
        let h = SimTime::from_hours(10);
        let ac = on_between(Appliance::simple("a", ApplianceLabel::Acs, 1500.0, false), SimTime::ZERO, h);
        let r = room("r", vec![ac], h);
        let (recs, _) = compute_wastage(&[r], &[OccupancyTrace::always(true, h)], (SimTime::ZERO, h)).unwrap();
        assert_eq!(recs[0].total_kwh(), 0.0);
    }

    #[test]
    fn coverage_gap_is_an_error() {
        let h = SimTime::from_hours(10);
        let r = room("r", vec![], h);
        let short = OccupancyTrace::always(false, SimTime::from_hours(5));
        assert_eq!(
            compute_wastage(&[r], &[short], (SimTime::ZERO, h)).unwrap_err(),
            AnalyticsError::CoverageGap("r".into())
        );
    }

    #[test]
    fn campus_extrapolation() {
        let mean =
            WastageRecord { room_id: "mean".into(), lights_kwh: 6.376, acs_kwh: 232.025, window: (SimTime::ZERO, DAY) };
        let x = extrapolate_campus_wastage(&mean, 200, DEFAULT_TARIFF_SGD_PER_KWH);
        assert_eq!(x.total_kwh, 47_680.2);
        assert!((x.total_sgd - 11_099.950_56).abs() < 1e-6);
        let z = extrapolate_campus_wastage(&mean, 0, DEFAULT_TARIFF_SGD_PER_KWH);
        assert_eq!((z.total_kwh, z.total_sgd), (0.0, 0.0));
    }

    fn library() -> Vec<LibraryEntry> {
        let ph = |d, p| SignaturePhase { duration_s: d, power_w: p };
        vec![
            LibraryEntry { label: ApplianceLabel::Light, signature: vec![ph(900, 300.0)] },
            LibraryEntry { label: ApplianceLabel::Kettle, signature: vec![ph(120, 2000.0)] },
            LibraryEntry { label: ApplianceLabel::Fridge, signature: vec![ph(30, 450.0), ph(600, 120.0)] },
        ]
    }

    fn rendered(entry: &LibraryEntry, lead_steps: usize) -> LoadProfile {
        let mut p = render_signature(entry, 1_200_000, 10).unwrap();
        let mut v = vec![0.0; lead_steps];
        v.append(&mut p.values_kw);
        LoadProfile::new(10, v).unwrap()
    }

    #[test]
    fn kettle_self_match() {
        let lib = library();
        let t = rendered(&lib[1], 7);
        match identify_appliance(&t, &lib, DEFAULT_ON_THRESHOLD_W).unwrap() {
            Identification::Match { label, distance_w, .. } => {
                assert_eq!(label, ApplianceLabel::Kettle);
                assert_eq!(distance_w, 0.0);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn silent_trace_has_no_activity() {
        let t = LoadProfile::new(10, vec![0.0; 50]).unwrap();
        assert_eq!(identify_appliance(&t, &library(), DEFAULT_ON_THRESHOLD_W).unwrap(), Identification::NoActivity);
        assert_eq!(identify_appliance(&t, &[], DEFAULT_ON_THRESHOLD_W), Err(AnalyticsError::EmptyLibrary));
    }

    #[test]
    fn duplicated_entry_keeps_label() {
        let mut lib = library();
        let t = rendered(&lib[2], 3);
        lib.insert(0, lib[2].clone());
        match identify_appliance(&t, &lib, DEFAULT_ON_THRESHOLD_W).unwrap() {
            Identification::Match { label, index, .. } => {
                assert_eq!(label, ApplianceLabel::Fridge);
                assert_eq!(index, 0);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    fn demand(at_ms: u64, true_kw: f64, unc: f64) -> TraceEvent {
        TraceEvent {
            seq: 0,
            at: SimTime(at_ms),
            body: TraceBody::Demand {
                true_kw,
                uncontrolled_kw: unc,
                base_kw: 0.0,
                perceived_kw: None,
                insufficient: false,
            },
        }
    }

    #[test]
    fn excursion_accounting() {
        let policy = DrmPolicy::new(10.0, 60).unwrap();
        let ev = vec![
            demand(0, 5.0, 5.0),
            demand(3_600_000, 12.0, 12.0),
            demand(3_660_000, 9.0, 12.0),
            demand(7_200_000, 5.0, 5.0),
        ];
        let r = impairment_report(&ev, &policy, SimTime::from_hours(3)).unwrap();
        assert_eq!(r.controlled.time_above_threshold_s, 60.0);
        assert_eq!(r.controlled.excursions, 1);
        assert!((r.controlled.overshoot_kwh - 2.0 / 60.0).abs() < 1e-12);
        assert_eq!(r.uncontrolled.time_above_threshold_s, 3600.0);
        assert!((r.uncontrolled.overshoot_kwh - 2.0).abs() < 1e-12);
        assert_eq!(r.commands_sent, 0);
    }

    #[test]
    fn no_excursion_means_zero_time() {
        let policy = DrmPolicy::new(10.0, 60).unwrap();
        let r = impairment_report(&[demand(0, 5.0, 5.0)], &policy, DAY).unwrap();
        assert_eq!(r.controlled.time_above_threshold_s, 0.0);
        assert_eq!(r.controlled.overshoot_kwh, 0.0);
    }

    #[test]
    fn energy_and_bill() {
        let series = [
            DemandPoint { at: SimTime::ZERO, true_kw: 2.0, uncontrolled_kw: 4.0, base_kw: 1.0 },
            DemandPoint { at: SimTime::from_hours(1), true_kw: 1.0, uncontrolled_kw: 1.0, base_kw: 1.0 },
        ];
        let prices = [
            PriceSignal { effective_at: SimTime::ZERO, price_sgd_per_kwh: 0.1 },
            PriceSignal { effective_at: SimTime::from_mins(30), price_sgd_per_kwh: 0.3 },
        ];
        let e = energy_and_cost(&series, &prices, SimTime::from_hours(2));
        assert!((e.controlled_kwh - 3.0).abs() < 1e-12);
        assert!((e.uncontrolled_kwh - 5.0).abs() < 1e-12);
        assert!((e.controlled_sgd.unwrap() - (0.1 + 0.3 + 0.3)).abs() < 1e-12);
        assert!((e.uncontrolled_sgd.unwrap() - (0.2 + 0.6 + 0.3)).abs() < 1e-12);
        assert_eq!(e.peak_uncontrolled_kw, 4.0);
        assert_eq!(energy_and_cost(&series, &[], SimTime::from_hours(2)).controlled_sgd, None);
    }

    #[test]
    fn truncated_trace() {
        let policy = DrmPolicy::new(10.0, 60).unwrap();
        assert_eq!(impairment_report(&[], &policy, DAY), Err(AnalyticsError::TruncatedTrace));
    }
}
