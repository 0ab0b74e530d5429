//! Units, appliances, base load, occupancy and MPN sensor readings.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::simcore::{RngStreams, SimTime, StreamKey};

const MS_PER_HOUR: f64 = 3_600_000.0;
/// Watt-milliseconds per kilowatt-hour.
const WMS_PER_KWH: f64 = 3.6e9;

#[derive(Clone, Debug, PartialEq, thiserror::Error)]
pub enum PremisesError {
    #[error("peak_kw must be > 0, got {0}")]
    NonPositivePeak(f64),
    #[error("invalid load profile: {0}")]
    InvalidProfile(String),
    #[error("time {0} is outside the scenario horizon")]
    OutOfHorizon(SimTime),
    #[error("invalid window [{0}, {1})")]
    InvalidWindow(SimTime, SimTime),
    #[error("appliance '{id}' switched at {at} before its last switch at {last}")]
    SwitchBackwards { id: String, at: SimTime, last: SimTime },
    #[error("MPN '{0}' is not bound to any unit")]
    UnboundMpn(String),
    #[error("invalid appliance '{0}': {1}")]
    InvalidAppliance(String, String),
    #[error("occupancy trace: {0}")]
    Occupancy(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum UnitKind {
    Hostel,
    Office,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ApplianceLabel {
    Light,
    #[serde(rename = "ACS")]
    Acs,
    Fridge,
    Kettle,
    Other,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ApplianceState {
    On,
    Off,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SignaturePhase {
    pub duration_s: u32,
    pub power_w: f64,
}

/// Piecewise-constant consumption from switch-on. An empty signature means
/// "rated power for as long as the appliance is on"; otherwise the phases play
/// once and the draw is zero afterwards.
pub type Signature = Vec<SignaturePhase>;

#[derive(Clone, Debug, PartialEq)]
pub struct Appliance {
    pub id: String,
    pub label: ApplianceLabel,
    pub rated_power_w: f64,
    pub flexible: bool,
    pub inconvenience_weight: f64,
    pub signature: Signature,
    history: Vec<(SimTime, ApplianceState)>,
}

impl Appliance {
    pub fn new(
        id: impl Into<String>,
        label: ApplianceLabel,
        rated_power_w: f64,
        flexible: bool,
        inconvenience_weight: f64,
        signature: Signature,
    ) -> Result<Self, PremisesError> {
        let id = id.into();
        let bad = |why: &str| Err(PremisesError::InvalidAppliance(id.clone(), why.into()));
        if !(rated_power_w > 0.0 && rated_power_w.is_finite()) {
            return bad("rated_power_w must be > 0");
        }
        if !(inconvenience_weight > 0.0 && inconvenience_weight.is_finite()) {
            return bad("inconvenience_weight must be > 0");
        }
        if signature.iter().any(|p| !(p.power_w >= 0.0 && p.power_w.is_finite())) {
            return bad("signature power must be >= 0");
        }
        Ok(Appliance { id, label, rated_power_w, flexible, inconvenience_weight, signature, history: Vec::new() })
    }

    /// Constant-power appliance (no signature).
    pub fn simple(id: impl Into<String>, label: ApplianceLabel, rated_power_w: f64, flexible: bool) -> Self {
        Self::new(id, label, rated_power_w, flexible, 1.0, Vec::new()).expect("valid simple appliance")
    }

    pub fn rated_power_kw(&self) -> f64 {
        self.rated_power_w / 1_000.0
    }

    pub fn history(&self) -> &[(SimTime, ApplianceState)] {
        &self.history
    }

    /// Record a state change. Redundant switches are ignored.
    pub fn switch(&mut self, at: SimTime, state: ApplianceState) -> Result<(), PremisesError> {
        if let Some(&(last, _)) = self.history.last() {
            if at < last {
                return Err(PremisesError::SwitchBackwards { id: self.id.clone(), at, last });
            }
        }
        if self.state() == state {
            return Ok(());
        }
        // a same-instant reversal cancels the earlier switch
        if self.history.last().is_some_and(|h| h.0 == at) {
            self.history.pop();
            if self.state() == state {
                return Ok(());
            }
        }
        if self.history.is_empty() && state == ApplianceState::Off {
            return Ok(());
        }
        self.history.push((at, state));
        Ok(())
    }

    /// Current (latest) state.
    pub fn state(&self) -> ApplianceState {
        self.history.last().map_or(ApplianceState::Off, |h| h.1)
    }

    fn on_since(&self, t: SimTime) -> Option<SimTime> {
        let idx = self.history.partition_point(|(at, _)| *at <= t);
        match idx.checked_sub(1).map(|i| self.history[i]) {
            Some((since, ApplianceState::On)) => Some(since),
            _ => None,
        }
    }

    pub fn state_at(&self, t: SimTime) -> ApplianceState {
        if self.on_since(t).is_some() {
            ApplianceState::On
        } else {
            ApplianceState::Off
        }
    }

    /// Power (W) `elapsed_ms` after switch-on.
    pub fn signature_power_w(&self, elapsed_ms: u64) -> f64 {
        if self.signature.is_empty() {
            return self.rated_power_w;
        }
        let mut end = 0u64;
        for p in &self.signature {
            end += u64::from(p.duration_s) * 1_000;
            if elapsed_ms < end {
                return p.power_w;
            }
        }
        0.0
    }

    /// Milliseconds after switch-on at which the draw changes; empty for constant appliances.
    pub fn phase_boundaries_ms(&self) -> Vec<u64> {
        self.signature
            .iter()
            .scan(0u64, |acc, p| {
                *acc += u64::from(p.duration_s) * 1_000;
                Some(*acc)
            })
            .collect()
    }

    pub fn power_w_at(&self, t: SimTime) -> f64 {
        self.on_since(t).map_or(0.0, |since| self.signature_power_w(t.since(since)))
    }

    /// Exact W·ms integral of the draw over `[a, b)` measured from switch-on at `on`.
    fn on_segment_wms(&self, a_rel: u64, b_rel: u64) -> f64 {
        if self.signature.is_empty() {
            return self.rated_power_w * (b_rel - a_rel) as f64;
        }
        let mut acc = 0.0;
        let mut start = 0u64;
        for p in &self.signature {
            let end = start + u64::from(p.duration_s) * 1_000;
            let lo = a_rel.max(start);
            let hi = b_rel.min(end);
            if hi > lo {
                acc += p.power_w * (hi - lo) as f64;
            }
            start = end;
            if start >= b_rel {
                break;
            }
        }
        acc
    }

    /// Energy in W·ms over `[a, b)`.
    pub fn energy_wms(&self, a: SimTime, b: SimTime) -> f64 {
        if b <= a {
            return 0.0;
        }
        let mut total = 0.0;
        for (i, &(since, state)) in self.history.iter().enumerate() {
            if state != ApplianceState::On {
                continue;
            }
            let until = self.history.get(i + 1).map_or(SimTime(u64::MAX), |h| h.0);
            let lo = a.max(since);
            let hi = b.min(until);
            if hi > lo {
                total += self.on_segment_wms(lo.since(since), hi.since(since));
            }
        }
        total
    }

    pub fn energy_kwh(&self, a: SimTime, b: SimTime) -> f64 {
        self.energy_wms(a, b) / WMS_PER_KWH
    }
}

/// Step-wise power series: `values_kw[i]` is the mean power over
/// `[i * resolution_s, (i + 1) * resolution_s)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LoadProfile {
    pub resolution_s: u32,
    pub values_kw: Vec<f64>,
}

impl LoadProfile {
    pub fn new(resolution_s: u32, values_kw: Vec<f64>) -> Result<Self, PremisesError> {
        if resolution_s == 0 {
            return Err(PremisesError::InvalidProfile("resolution_s must be > 0".into()));
        }
        if let Some(i) = values_kw.iter().position(|v| !(*v >= 0.0 && v.is_finite())) {
            return Err(PremisesError::InvalidProfile(format!("values_kw[{i}] must be >= 0")));
        }
        Ok(LoadProfile { resolution_s, values_kw })
    }

    /// Flat profile covering `[0, horizon)`.
    pub fn constant(kw: f64, resolution_s: u32, horizon: SimTime) -> Result<Self, PremisesError> {
        let step = u64::from(resolution_s.max(1)) * 1_000;
        let n = horizon.as_ms().div_ceil(step).max(1) as usize;
        Self::new(resolution_s, alloc::vec![kw; n])
    }

    pub fn step_ms(&self) -> u64 {
        u64::from(self.resolution_s) * 1_000
    }

    pub fn duration(&self) -> SimTime {
        SimTime(self.step_ms() * self.values_kw.len() as u64)
    }

    pub fn covers(&self, horizon: SimTime) -> bool {
        self.duration() >= horizon
    }

    /// `None` beyond the end of the profile.
    pub fn value_at(&self, t: SimTime) -> Option<f64> {
        self.values_kw.get((t.as_ms() / self.step_ms()) as usize).copied()
    }

    /// Start of the step following the one containing `t`.
    pub fn next_step_after(&self, t: SimTime) -> SimTime {
        SimTime((t.as_ms() / self.step_ms() + 1) * self.step_ms())
    }

    pub fn energy_kwh(&self) -> f64 {
        self.values_kw.iter().sum::<f64>() * f64::from(self.resolution_s) / 3_600.0
    }

    pub fn max_kw(&self) -> f64 {
        self.values_kw.iter().copied().fold(0.0, f64::max)
    }
}

/// Power trace of `appliance` over `window` at `resolution_s` (exact step averages).
pub fn appliance_power_trace(
    appliance: &Appliance,
    window: (SimTime, SimTime),
    resolution_s: u32,
) -> Result<LoadProfile, PremisesError> {
    let (a, b) = window;
    let step = u64::from(resolution_s) * 1_000;
    if b <= a || step == 0 || (b.as_ms() - a.as_ms()) % step != 0 {
        return Err(PremisesError::InvalidWindow(a, b));
    }
    let n = (b.as_ms() - a.as_ms()) / step;
    let values = (0..n)
        .map(|i| {
            let lo = SimTime(a.as_ms() + i * step);
            appliance.energy_wms(lo, lo.saturating_add_ms(step)) / step as f64 / 1_000.0
        })
        .collect();
    LoadProfile::new(resolution_s, values)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct OccupancyInterval {
    pub start: SimTime,
    pub end: SimTime,
    pub occupied: bool,
}

/// Contiguous, sorted, non-overlapping occupancy intervals.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct OccupancyTrace {
    intervals: Vec<OccupancyInterval>,
}

impl OccupancyTrace {
    /// Validate that `intervals` tile `[first.start, last.end)` with no gaps or overlaps.
    pub fn new(intervals: Vec<OccupancyInterval>) -> Result<Self, PremisesError> {
        if intervals.is_empty() {
            return Err(PremisesError::Occupancy("no intervals".into()));
        }
        for (i, iv) in intervals.iter().enumerate() {
            if iv.end <= iv.start {
                return Err(PremisesError::Occupancy(format!("interval {i} is empty or inverted")));
            }
            if let Some(prev) = i.checked_sub(1).map(|p| intervals[p]) {
                if iv.start < prev.end {
                    return Err(PremisesError::Occupancy(format!("interval {i} overlaps its predecessor")));
                }
                if iv.start > prev.end {
                    return Err(PremisesError::Occupancy(format!("gap before interval {i} at {}", prev.end)));
                }
            }
        }
        Ok(OccupancyTrace { intervals })
    }

    /// Like [`OccupancyTrace::new`] but also requires coverage of `[0, horizon)`.
    pub fn covering(intervals: Vec<OccupancyInterval>, horizon: SimTime) -> Result<Self, PremisesError> {
        let t = Self::new(intervals)?;
        if !t.covers(SimTime::ZERO, horizon) {
            return Err(PremisesError::Occupancy(format!("does not cover [0, {horizon})")));
        }
        Ok(t)
    }

    pub fn always(occupied: bool, horizon: SimTime) -> Self {
        OccupancyTrace {
            intervals: alloc::vec![OccupancyInterval { start: SimTime::ZERO, end: horizon.max(SimTime(1)), occupied }],
        }
    }

    pub fn intervals(&self) -> &[OccupancyInterval] {
        &self.intervals
    }

    pub fn start(&self) -> SimTime {
        self.intervals[0].start
    }

    pub fn end(&self) -> SimTime {
        self.intervals[self.intervals.len() - 1].end
    }

    pub fn covers(&self, a: SimTime, b: SimTime) -> bool {
        self.start() <= a && self.end() >= b
    }

    pub fn is_occupied(&self, t: SimTime) -> Option<bool> {
        let i = self.intervals.partition_point(|iv| iv.end <= t);
        self.intervals.get(i).filter(|iv| iv.start <= t).map(|iv| iv.occupied)
    }

    /// Merge adjacent intervals with equal state.
    pub fn normalized(&self) -> Self {
        let mut out: Vec<OccupancyInterval> = Vec::with_capacity(self.intervals.len());
        for iv in &self.intervals {
            match out.last_mut() {
                Some(last) if last.occupied == iv.occupied => last.end = iv.end,
                _ => out.push(*iv),
            }
        }
        OccupancyTrace { intervals: out }
    }

    /// Unoccupied sub-intervals clipped to `[a, b)`.
    pub fn unoccupied_within(&self, a: SimTime, b: SimTime) -> Vec<(SimTime, SimTime)> {
        self.intervals
            .iter()
            .filter(|iv| !iv.occupied)
            .filter_map(|iv| {
                let lo = iv.start.max(a);
                let hi = iv.end.min(b);
                (hi > lo).then_some((lo, hi))
            })
            .collect()
    }
}

/// Sensor distributions. Defaults are placeholders, not measurements.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SensorModel {
    pub p_motion_when_occupied: f64,
    pub noise_occupied_db: (f64, f64),
    pub noise_unoccupied_db: (f64, f64),
    pub temp_c: (f64, f64),
    pub humidity_pct: (f64, f64),
    pub lux_occupied: (f64, f64),
    pub lux_unoccupied: (f64, f64),
}

impl Default for SensorModel {
    fn default() -> Self {
        SensorModel {
            p_motion_when_occupied: 0.3,
            noise_occupied_db: (45.0, 5.0),
            noise_unoccupied_db: (30.0, 3.0),
            temp_c: (26.0, 1.0),
            humidity_pct: (65.0, 5.0),
            lux_occupied: (300.0, 50.0),
            lux_unoccupied: (10.0, 5.0),
        }
    }
}

impl SensorModel {
    /// Midpoint between the occupied and unoccupied noise means.
    pub fn noise_threshold_db(&self) -> f64 {
        (self.noise_occupied_db.0 + self.noise_unoccupied_db.0) / 2.0
    }

    pub fn sample(
        &self,
        rngs: &mut RngStreams,
        key: StreamKey,
        mpn_id: &str,
        at: SimTime,
        occupied: bool,
    ) -> SensorSample {
        let motion_draw = rngs.uniform(key);
        let motion = occupied && motion_draw < self.p_motion_when_occupied;
        let (nm, ns) = if occupied { self.noise_occupied_db } else { self.noise_unoccupied_db };
        let noise_db = rngs.normal(key, nm, ns);
        let temp_c = rngs.normal(key, self.temp_c.0, self.temp_c.1);
        let humidity_pct = rngs.normal(key, self.humidity_pct.0, self.humidity_pct.1).clamp(0.0, 100.0);
        let (lm, ls) = if occupied { self.lux_occupied } else { self.lux_unoccupied };
        let lux = rngs.normal(key, lm, ls).max(0.0);
        SensorSample { mpn_id: mpn_id.into(), at, motion, noise_db, temp_c, humidity_pct, lux }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SensorSample {
    pub mpn_id: String,
    pub at: SimTime,
    pub motion: bool,
    pub noise_db: f64,
    pub temp_c: f64,
    pub humidity_pct: f64,
    pub lux: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Unit {
    pub id: String,
    pub kind: UnitKind,
    pub appliances: Vec<Appliance>,
    pub base_profile: LoadProfile,
    pub occupancy: OccupancyTrace,
    /// MPN node names bound to this unit.
    pub mpns: Vec<String>,
}

impl Unit {
    pub fn demand_kw(&self, at: SimTime) -> Result<f64, PremisesError> {
        let base = self.base_profile.value_at(at).ok_or(PremisesError::OutOfHorizon(at))?;
        Ok(base + self.appliances.iter().map(|a| a.power_w_at(at)).sum::<f64>() / 1_000.0)
    }
}

/// Total site demand (kW) at `at`: base load plus every appliance's instantaneous draw.
pub fn total_demand(units: &[Unit], at: SimTime) -> Result<f64, PremisesError> {
    units.iter().map(|u| u.demand_kw(at)).sum()
}

/// Sample every `period_s` over `[window.0, window.1)` from the MPN's unit occupancy.
pub fn emit_sensor_samples(
    units: &[Unit],
    model: &SensorModel,
    rngs: &mut RngStreams,
    mpn_id: &str,
    period_s: u32,
    window: (SimTime, SimTime),
) -> Result<Vec<SensorSample>, PremisesError> {
    let unit = units
        .iter()
        .find(|u| u.mpns.iter().any(|m| m == mpn_id))
        .ok_or_else(|| PremisesError::UnboundMpn(mpn_id.into()))?;
    if period_s == 0 || window.1 <= window.0 {
        return Err(PremisesError::InvalidWindow(window.0, window.1));
    }
    let key = rngs.register(&format!("sensor/{mpn_id}"));
    let step = u64::from(period_s) * 1_000;
    let mut out = Vec::new();
    let mut t = window.0;
    while t < window.1 {
        let occupied = unit.occupancy.is_occupied(t).ok_or(PremisesError::OutOfHorizon(t))?;
        out.push(model.sample(rngs, key, mpn_id, t, occupied));
        t = t.saturating_add_ms(step);
    }
    Ok(out)
}

fn bump(hour: f64, centre: f64, width: f64) -> f64 {
    let mut d = libm::fabs(hour - centre);
    if d > 12.0 {
        d = 24.0 - d;
    }
    libm::exp(-d * d / (2.0 * width * width))
}

/// Normalised daily residential shape: night trough, morning shoulder and an
/// evening peak. Maximum ~1.0 near 20:30.
pub fn daily_shape(hour_of_day: f64) -> f64 {
    0.42 + 0.28 * bump(hour_of_day, 9.0, 1.8) + 0.58 * bump(hour_of_day, 20.5, 2.4)
}

/// Per-unit base-load profiles over `[0, horizon)`: a double-peak daily curve,
/// each unit scaled by a seeded factor in `[0.95, 1.05]`, with the summed
/// profile's daily maximum pinned to `peak_kw`.
pub fn synthesize_nems_base(
    units: usize,
    peak_kw: f64,
    seed: u64,
    resolution_s: u32,
    horizon: SimTime,
) -> Result<Vec<LoadProfile>, PremisesError> {
    if !(peak_kw > 0.0 && peak_kw.is_finite()) {
        return Err(PremisesError::NonPositivePeak(peak_kw));
    }
    if resolution_s == 0 {
        return Err(PremisesError::InvalidProfile("resolution_s must be > 0".into()));
    }
    let step = u64::from(resolution_s) * 1_000;
    let n = horizon.as_ms().max(1).div_ceil(step) as usize;
    let shape: Vec<f64> = (0..n)
        .map(|i| {
            let hour = ((i as u64 * step) % 86_400_000) as f64 / MS_PER_HOUR;
            daily_shape(hour)
        })
        .collect();
    let mut rngs = RngStreams::new(seed);
    let key = rngs.register("nems");
    let factors: Vec<f64> = (0..units).map(|_| 0.95 + 0.1 * rngs.uniform(key)).collect();
    let summed_max = shape.iter().copied().fold(0.0, f64::max) * factors.iter().sum::<f64>();
    let scale = if summed_max > 0.0 { peak_kw / summed_max } else { 0.0 };
    factors.iter().map(|f| LoadProfile::new(resolution_s, shape.iter().map(|s| s * f * scale).collect())).collect()
}
