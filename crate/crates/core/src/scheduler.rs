//! Meeting-room scheduling under per-slot electricity prices.
//!
//! Time is divided into slots shared by all rooms. A meeting occupies
//! `duration_slots` consecutive slots inside its `[earliest_slot, latest_slot]`
//! window in one room large enough for its attendees. A room in use draws
//! `active_power_kw`; idle draw is a constant offset and is left out.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::EPS;

pub const EXACT_MAX_REQUESTS: usize = 8;
pub const EXACT_MAX_ROOMS: usize = 4;
pub const EXACT_MAX_SLOTS: usize = 12;

/// Feasibility-repair budget (search nodes) for the heuristic.
const REPAIR_NODE_BUDGET: usize = 200_000;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeetingRequest {
    pub id: String,
    pub duration_slots: u32,
    pub earliest_slot: u32,
    /// Last slot the meeting may occupy.
    pub latest_slot: u32,
    pub attendees: u32,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RoomResource {
    pub id: String,
    pub capacity: u32,
    pub active_power_kw: f64,
    pub slot_length_min: u32,
}

impl RoomResource {
    fn slot_hours(&self) -> f64 {
        f64::from(self.slot_length_min) / 60.0
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Objective {
    /// Minimise SGD.
    #[default]
    Cost,
    /// Minimise kWh, ignoring prices.
    Energy,
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Placement {
    pub room_id: String,
    pub start_slot: u32,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScheduleAssignment {
    /// Keyed by request id.
    pub placements: BTreeMap<String, Placement>,
    pub objective_sgd: f64,
    pub energy_kwh: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HeuristicSolution {
    pub assignment: ScheduleAssignment,
    /// Requests that could not be placed; empty when the schedule is complete.
    pub unplaced: Vec<String>,
}

impl HeuristicSolution {
    pub fn is_complete(&self) -> bool {
        self.unplaced.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq, thiserror::Error)]
pub enum SchedError {
    #[error("infeasible: {0}")]
    Infeasible(String),
    #[error("instance too large for exhaustive search ({requests} requests, {rooms} rooms, {slots} slots)")]
    TooLarge { requests: usize, rooms: usize, slots: usize },
    #[error("invalid instance: {0}")]
    Invalid(String),
}

fn validate_instance(requests: &[MeetingRequest], rooms: &[RoomResource], prices: &[f64]) -> Result<(), SchedError> {
    let bad = |m: String| Err(SchedError::Invalid(m));
    for (i, r) in requests.iter().enumerate() {
        if r.duration_slots == 0 {
            return bad(format!("request '{}' has zero duration", r.id));
        }
        if r.attendees == 0 {
            return bad(format!("request '{}' has no attendees", r.id));
        }
        if requests[..i].iter().any(|o| o.id == r.id) {
            return bad(format!("duplicate request id '{}'", r.id));
        }
    }
    for (i, room) in rooms.iter().enumerate() {
        if room.capacity == 0
            || room.active_power_kw.is_nan()
            || room.active_power_kw <= 0.0
            || room.slot_length_min == 0
        {
            return bad(format!("room '{}' needs capacity >= 1, power > 0 and slot length > 0", room.id));
        }
        if rooms[..i].iter().any(|o| o.id == room.id) {
            return bad(format!("duplicate room id '{}'", room.id));
        }
    }
    if prices.iter().any(|p| !(*p >= 0.0 && p.is_finite())) {
        return bad("prices must be finite and >= 0".into());
    }
    Ok(())
}

fn slot_weights(prices: &[f64], objective: Objective) -> Vec<f64> {
    match objective {
        Objective::Cost => prices.to_vec(),
        Objective::Energy => vec![1.0; prices.len()],
    }
}

/// Weighted cost of holding `room` for `duration` slots from `start`.
fn block_cost(room: &RoomResource, start: u32, duration: u32, weights: &[f64]) -> f64 {
    let kwh = room.active_power_kw * room.slot_hours();
    (start..start + duration).map(|s| kwh * weights[s as usize]).sum()
}

/// Start slots that keep `req` inside its window and the price horizon.
fn start_range(req: &MeetingRequest, slots: usize) -> core::ops::Range<u32> {
    let last_start = (i64::from(req.latest_slot) + 1 - i64::from(req.duration_slots))
        .min(slots as i64 - i64::from(req.duration_slots));
    if last_start < i64::from(req.earliest_slot) {
        return 0..0;
    }
    req.earliest_slot..(last_start as u32 + 1)
}

fn fits(req: &MeetingRequest, room: &RoomResource) -> bool {
    room.capacity >= req.attendees
}

/// Check window, capacity, horizon and overlap constraints of every placement.
pub fn check_feasible(
    placements: &BTreeMap<String, Placement>,
    requests: &[MeetingRequest],
    rooms: &[RoomResource],
    slots: usize,
) -> Result<(), SchedError> {
    let mut busy: BTreeMap<&str, Vec<Option<&str>>> =
        rooms.iter().map(|r| (r.id.as_str(), vec![None; slots])).collect();
    for (rid, p) in placements {
        let req = requests
            .iter()
            .find(|r| &r.id == rid)
            .ok_or_else(|| SchedError::Infeasible(format!("unknown request '{rid}'")))?;
        let room = rooms
            .iter()
            .find(|r| r.id == p.room_id)
            .ok_or_else(|| SchedError::Infeasible(format!("unknown room '{}'", p.room_id)))?;
        if !fits(req, room) {
            return Err(SchedError::Infeasible(format!("'{rid}' exceeds capacity of '{}'", room.id)));
        }
        if !start_range(req, slots).contains(&p.start_slot) {
            return Err(SchedError::Infeasible(format!("'{rid}' placed outside its window")));
        }
        let row = busy.get_mut(room.id.as_str()).expect("room row");
        for s in p.start_slot..p.start_slot + req.duration_slots {
            if let Some(other) = row[s as usize] {
                return Err(SchedError::Infeasible(format!("'{rid}' overlaps '{other}' in '{}'", room.id)));
            }
            row[s as usize] = Some(rid.as_str());
        }
    }
    Ok(())
}

fn totals(
    placements: &BTreeMap<String, Placement>,
    requests: &[MeetingRequest],
    rooms: &[RoomResource],
    weights: &[f64],
) -> f64 {
    placements
        .iter()
        .map(|(rid, p)| {
            let req = requests.iter().find(|r| &r.id == rid).expect("known request");
            let room = rooms.iter().find(|r| r.id == p.room_id).expect("known room");
            block_cost(room, p.start_slot, req.duration_slots, weights)
        })
        .sum()
}

/// SGD cost of a feasible assignment: `Σ power × slot hours × price(slot)` over occupied slots.
pub fn schedule_cost(
    placements: &BTreeMap<String, Placement>,
    requests: &[MeetingRequest],
    rooms: &[RoomResource],
    prices: &[f64],
) -> Result<f64, SchedError> {
    check_feasible(placements, requests, rooms, prices.len())?;
    Ok(totals(placements, requests, rooms, prices))
}

fn finish(
    placements: BTreeMap<String, Placement>,
    requests: &[MeetingRequest],
    rooms: &[RoomResource],
    prices: &[f64],
) -> ScheduleAssignment {
    let objective_sgd = totals(&placements, requests, rooms, prices);
    let energy_kwh = totals(&placements, requests, rooms, &vec![1.0; prices.len()]);
    ScheduleAssignment { placements, objective_sgd, energy_kwh }
}

#[derive(Clone, Copy)]
struct Opt {
    room: usize,
    start: u32,
    cost: f64,
}

/// Options per request in (room id, start slot) order.
fn options(req: &MeetingRequest, rooms: &[&RoomResource], weights: &[f64]) -> Vec<Opt> {
    let mut out = Vec::new();
    for (ri, room) in rooms.iter().enumerate() {
        if !fits(req, room) {
            continue;
        }
        for start in start_range(req, weights.len()) {
            out.push(Opt { room: ri, start, cost: block_cost(room, start, req.duration_slots, weights) });
        }
    }
    out
}

fn mask(start: u32, dur: u32) -> u32 {
    ((1u32 << dur) - 1) << start
}

struct Exact<'a> {
    reqs: Vec<&'a MeetingRequest>,
    opts: Vec<Vec<Opt>>,
    lb_suffix: Vec<f64>,
    busy: Vec<u32>,
    pick: Vec<usize>,
    best_cost: f64,
    best: Option<Vec<usize>>,
}

impl Exact<'_> {
    fn dfs(&mut self, i: usize, cost: f64) {
        if i == self.reqs.len() {
            if self.best.is_none() || cost < self.best_cost - EPS {
                self.best_cost = cost;
                self.best = Some(self.pick.clone());
            }
            return;
        }
        if self.best.is_some() && cost + self.lb_suffix[i] >= self.best_cost - EPS {
            return;
        }
        let dur = self.reqs[i].duration_slots;
        for k in 0..self.opts[i].len() {
            let o = self.opts[i][k];
            let m = mask(o.start, dur);
            if self.busy[o.room] & m != 0 {
                continue;
            }
            self.busy[o.room] |= m;
            self.pick.push(k);
            self.dfs(i + 1, cost + o.cost);
            self.pick.pop();
            self.busy[o.room] &= !m;
        }
    }
}

/// Globally cheapest feasible schedule by exhaustive branch-and-bound.
/// Equal-cost optima resolve to the lexicographically smallest assignment
/// (request id, then room id, then start slot).
pub fn solve_exact(
    requests: &[MeetingRequest],
    rooms: &[RoomResource],
    prices: &[f64],
    objective: Objective,
) -> Result<ScheduleAssignment, SchedError> {
    validate_instance(requests, rooms, prices)?;
    if requests.len() > EXACT_MAX_REQUESTS || rooms.len() > EXACT_MAX_ROOMS || prices.len() > EXACT_MAX_SLOTS {
        return Err(SchedError::TooLarge { requests: requests.len(), rooms: rooms.len(), slots: prices.len() });
    }
    let weights = slot_weights(prices, objective);
    let mut reqs: Vec<&MeetingRequest> = requests.iter().collect();
    reqs.sort_by(|a, b| a.id.cmp(&b.id));
    let mut sorted_rooms: Vec<&RoomResource> = rooms.iter().collect();
    sorted_rooms.sort_by(|a, b| a.id.cmp(&b.id));
    let opts: Vec<Vec<Opt>> = reqs.iter().map(|r| options(r, &sorted_rooms, &weights)).collect();
    if let Some((r, _)) = reqs.iter().zip(&opts).find(|(_, o)| o.is_empty()) {
        return Err(SchedError::Infeasible(format!("request '{}' fits no room and window", r.id)));
    }
    let mut lb_suffix = vec![0.0; reqs.len() + 1];
    for i in (0..reqs.len()).rev() {
        let m = opts[i].iter().map(|o| o.cost).fold(f64::INFINITY, f64::min);
        lb_suffix[i] = lb_suffix[i + 1] + m;
    }
    let mut search = Exact {
        reqs,
        opts,
        lb_suffix,
        busy: vec![0; sorted_rooms.len()],
        pick: Vec::new(),
        best_cost: f64::INFINITY,
        best: None,
    };
    search.dfs(0, 0.0);
    let best = search.best.ok_or_else(|| SchedError::Infeasible("no overlap-free assignment exists".into()))?;
    let placements = search
        .reqs
        .iter()
        .zip(best)
        .enumerate()
        .map(|(i, (r, k))| {
            let o = search.opts[i][k];
            (r.id.clone(), Placement { room_id: sorted_rooms[o.room].id.clone(), start_slot: o.start })
        })
        .collect();
    Ok(finish(placements, requests, rooms, prices))
}

/// (room index, start slot), or unplaced.
type Spot = Option<(usize, u32)>;

/// Working state for the heuristic: which request sits where.
struct Board<'a> {
    reqs: Vec<&'a MeetingRequest>,
    rooms: Vec<&'a RoomResource>,
    weights: Vec<f64>,
    busy: Vec<Vec<bool>>,
    at: Vec<Spot>,
}

impl<'a> Board<'a> {
    fn free(&self, room: usize, start: u32, dur: u32) -> bool {
        (start..start + dur).all(|s| !self.busy[room][s as usize])
    }

    fn set(&mut self, i: usize, spot: Option<(usize, u32)>) {
        let dur = self.reqs[i].duration_slots;
        if let Some((room, start)) = self.at[i] {
            for s in start..start + dur {
                self.busy[room][s as usize] = false;
            }
        }
        if let Some((room, start)) = spot {
            for s in start..start + dur {
                self.busy[room][s as usize] = true;
            }
        }
        self.at[i] = spot;
    }

    fn cost_of(&self, i: usize, spot: (usize, u32)) -> f64 {
        block_cost(self.rooms[spot.0], spot.1, self.reqs[i].duration_slots, &self.weights)
    }

    fn total(&self) -> f64 {
        (0..self.reqs.len()).filter_map(|i| self.at[i].map(|s| self.cost_of(i, s))).sum()
    }

    /// Every free (room, start) that request `i` fits.
    fn free_spots(&self, i: usize) -> Vec<(usize, u32)> {
        let req = self.reqs[i];
        let mut out = Vec::new();
        for (ri, room) in self.rooms.iter().enumerate() {
            if fits(req, room) {
                for start in start_range(req, self.weights.len()) {
                    if self.free(ri, start, req.duration_slots) {
                        out.push((ri, start));
                    }
                }
            }
        }
        out
    }

    /// Cheapest free spot for request `i`, ties to lower room index then earlier start.
    fn cheapest_spot(&self, i: usize) -> Option<(usize, u32, f64)> {
        let req = self.reqs[i];
        let mut best: Option<(usize, u32, f64)> = None;
        for (ri, room) in self.rooms.iter().enumerate() {
            if !fits(req, room) {
                continue;
            }
            for start in start_range(req, self.weights.len()) {
                if !self.free(ri, start, req.duration_slots) {
                    continue;
                }
                let c = self.cost_of(i, (ri, start));
                if best.is_none_or(|b| c < b.2 - EPS) {
                    best = Some((ri, start, c));
                }
            }
        }
        best
    }

    /// Greedy placement in `order`, falling back to the repair search if
    /// greedy strands a request.
    fn construct(&mut self, order: &[usize]) {
        for &i in order {
            if let Some((r, s, _)) = self.cheapest_spot(i) {
                self.set(i, Some((r, s)));
            }
        }
        if self.at.iter().all(Option::is_some) {
            return;
        }
        let snapshot = self.at.clone();
        for i in 0..self.reqs.len() {
            self.set(i, None);
        }
        let mut nodes = 0;
        if !self.repair(order, 0, &mut nodes) {
            for i in 0..self.reqs.len() {
                self.set(i, None);
            }
            for (i, spot) in snapshot.into_iter().enumerate() {
                self.set(i, spot);
            }
        }
    }

    /// Depth-first feasibility search over `order`, cheapest options first.
    fn repair(&mut self, order: &[usize], k: usize, nodes: &mut usize) -> bool {
        if k == order.len() {
            return true;
        }
        *nodes += 1;
        if *nodes > REPAIR_NODE_BUDGET {
            return false;
        }
        let i = order[k];
        let mut spots: Vec<(usize, u32, f64)> =
            self.free_spots(i).into_iter().map(|(r, s)| (r, s, self.cost_of(i, (r, s)))).collect();
        spots.sort_by(|a, b| a.2.total_cmp(&b.2));
        for (ri, start, _) in spots {
            self.set(i, Some((ri, start)));
            if self.repair(order, k + 1, nodes) {
                return true;
            }
            self.set(i, None);
        }
        false
    }

    /// Best improving relocation or pairwise re-insertion; returns false at a local optimum.
    fn improve(&mut self) -> bool {
        let n = self.reqs.len();
        let before = self.total();
        let mut best_gain = EPS;
        let mut best_move: Option<Vec<(usize, Spot)>> = None;
        for i in 0..n {
            let Some(cur) = self.at[i] else { continue };
            let here = self.cost_of(i, cur);
            self.set(i, None);
            if let Some((r, s, c)) = self.cheapest_spot(i) {
                if here - c > best_gain {
                    best_gain = here - c;
                    best_move = Some(vec![(i, Some((r, s)))]);
                }
            }
            self.set(i, Some(cur));
        }
        for i in 0..n {
            for j in i + 1..n {
                let (Some(ci), Some(cj)) = (self.at[i], self.at[j]) else { continue };
                self.set(i, None);
                self.set(j, None);
                for (a, b) in [(i, j), (j, i)] {
                    for (ra, sa) in self.free_spots(a) {
                        self.set(a, Some((ra, sa)));
                        if let Some((rb, sb, _)) = self.cheapest_spot(b) {
                            self.set(b, Some((rb, sb)));
                            let gain = before - self.total();
                            if gain > best_gain {
                                best_gain = gain;
                                best_move = Some(vec![(a, Some((ra, sa))), (b, Some((rb, sb)))]);
                            }
                            self.set(b, None);
                        }
                        self.set(a, None);
                    }
                }
                self.set(i, Some(ci));
                self.set(j, Some(cj));
            }
        }
        match best_move {
            Some(moves) => {
                for (i, _) in &moves {
                    self.set(*i, None);
                }
                for (i, spot) in moves {
                    self.set(i, spot);
                }
                true
            }
            None => false,
        }
    }
}

/// Greedy placement (cheapest free spot) from three request orders: largest
/// duration × power first, least slack first, and by id. Each start gets a
/// bounded feasibility repair if greedy gets stuck, then local search with
/// single relocations and pairwise re-insertions. The best start wins.
pub fn solve_heuristic(
    requests: &[MeetingRequest],
    rooms: &[RoomResource],
    prices: &[f64],
    objective: Objective,
) -> Result<HeuristicSolution, SchedError> {
    validate_instance(requests, rooms, prices)?;
    let mut reqs: Vec<&MeetingRequest> = requests.iter().collect();
    reqs.sort_by(|a, b| a.id.cmp(&b.id));
    let mut sorted_rooms: Vec<&RoomResource> = rooms.iter().collect();
    sorted_rooms.sort_by(|a, b| a.id.cmp(&b.id));
    let n = reqs.len();
    let demand = |r: &MeetingRequest| {
        let p = sorted_rooms
            .iter()
            .filter(|room| fits(r, room))
            .map(|room| room.active_power_kw)
            .fold(f64::INFINITY, f64::min);
        f64::from(r.duration_slots) * if p.is_finite() { p } else { 0.0 }
    };
    let slots = prices.len();
    let by_demand = {
        let mut o: Vec<usize> = (0..n).collect();
        o.sort_by(|&a, &b| demand(reqs[b]).total_cmp(&demand(reqs[a])).then_with(|| reqs[a].id.cmp(&reqs[b].id)));
        o
    };
    let by_slack = {
        let slack = |r: &MeetingRequest| (r.latest_slot + 1).saturating_sub(r.earliest_slot + r.duration_slots);
        let mut o: Vec<usize> = (0..n).collect();
        o.sort_by_key(|&a| (slack(reqs[a]), core::cmp::Reverse(reqs[a].attendees), a));
        o
    };
    let weights = slot_weights(prices, objective);
    let mut best: Option<(usize, f64, Vec<Spot>)> = None;
    for order in [by_demand, by_slack, (0..n).collect()] {
        let mut board = Board {
            reqs: reqs.clone(),
            weights: weights.clone(),
            busy: vec![vec![false; slots]; sorted_rooms.len()],
            rooms: sorted_rooms.clone(),
            at: vec![None; n],
        };
        board.construct(&order);
        while board.improve() {}
        let missing = board.at.iter().filter(|a| a.is_none()).count();
        let total = board.total();
        if best.as_ref().is_none_or(|(m, t, _)| missing < *m || (missing == *m && total < *t - EPS)) {
            best = Some((missing, total, board.at));
        }
    }
    let at = best.map(|b| b.2).unwrap_or_default();
    let mut placements = BTreeMap::new();
    let mut unplaced = Vec::new();
    for (i, spot) in at.into_iter().enumerate() {
        match spot {
            Some((r, s)) => {
                placements.insert(reqs[i].id.clone(), Placement { room_id: sorted_rooms[r].id.clone(), start_slot: s });
            }
            None => unplaced.push(reqs[i].id.clone()),
        }
    }
    Ok(HeuristicSolution { assignment: finish(placements, requests, rooms, prices), unplaced })
}
