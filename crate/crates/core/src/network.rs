//! HAN/NAN communication model.
//!
//! Smart meters reach the cloud over BPL to the building's data concentrator,
//! TVWS to the base station, then fiber. HAN devices (MPNs, smart plugs, BLE
//! sensors) reach their unified home gateway (UHG), which uplinks over Wi-Fi.
//! Transport is hop by hop: each hop drops the message with the link's loss
//! probability, otherwise delays it by the base latency plus a uniform integer
//! jitter. There is no bandwidth or queueing model.

use alloc::collections::{BTreeMap, VecDeque};
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::simcore::{RngStreams, SimTime, StreamKey};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeId(pub u32);

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct LinkId(pub u32);

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum NodeKind {
    SmartMeter,
    DataConcentrator,
    TvwsBaseStation,
    Cloud,
    #[serde(rename = "UHG")]
    Uhg,
    SmartPlug,
    #[serde(rename = "MPN")]
    Mpn,
    BleSensor,
    WifiAP,
    ZigBeeRelay,
}

impl NodeKind {
    /// Devices inside a home/office area network, which must reach the cloud through a UHG.
    pub fn is_han_device(self) -> bool {
        matches!(self, NodeKind::SmartPlug | NodeKind::Mpn | NodeKind::BleSensor | NodeKind::ZigBeeRelay)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum LinkKind {
    #[serde(rename = "BPL")]
    Bpl,
    #[serde(rename = "TVWS")]
    Tvws,
    WiFi,
    ZigBee,
    ZWave,
    #[serde(rename = "BLE")]
    Ble,
    Fiber,
}

impl LinkKind {
    pub const ALL: [LinkKind; 7] = [
        LinkKind::Bpl,
        LinkKind::Tvws,
        LinkKind::WiFi,
        LinkKind::ZigBee,
        LinkKind::ZWave,
        LinkKind::Ble,
        LinkKind::Fiber,
    ];

    /// Placeholder latency so scenarios run without link overrides. These are
    /// not measured values.
    pub fn default_latency_ms(self) -> u64 {
        match self {
            LinkKind::Bpl => 10,
            LinkKind::Tvws => 30,
            LinkKind::WiFi => 5,
            LinkKind::ZigBee => 15,
            LinkKind::ZWave => 20,
            LinkKind::Ble => 10,
            LinkKind::Fiber => 2,
        }
    }

    /// 20% of the default latency, rounded.
    pub fn default_jitter_ms(self) -> u64 {
        (self.default_latency_ms() * 2 + 5) / 10
    }

    /// Whether a link of this kind may join nodes of kinds `a` and `b` (either order).
    pub fn connects(self, a: NodeKind, b: NodeKind) -> bool {
        use NodeKind::*;
        let pair = |x: NodeKind, y: NodeKind| (a == x && b == y) || (a == y && b == x);
        match self {
            LinkKind::Bpl => pair(SmartMeter, DataConcentrator),
            LinkKind::Tvws => pair(DataConcentrator, TvwsBaseStation),
            LinkKind::WiFi => pair(Uhg, WifiAP),
            LinkKind::ZigBee => {
                pair(Mpn, Uhg) || pair(Mpn, ZigBeeRelay) || pair(ZigBeeRelay, ZigBeeRelay) || pair(ZigBeeRelay, Uhg)
            }
            LinkKind::ZWave => pair(SmartPlug, Uhg),
            LinkKind::Ble => pair(BleSensor, Uhg),
            LinkKind::Fiber => {
                let backbone = |k: NodeKind| matches!(k, TvwsBaseStation | WifiAP | Cloud | DataConcentrator);
                backbone(a) && backbone(b) && a != b
            }
        }
    }
}

/// Interval during which a link runs degraded.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CongestionWindow {
    pub start_ms: u64,
    pub end_ms: u64,
    /// Multiplies the base latency inside the window.
    #[serde(default = "one")]
    pub latency_factor: f64,
    /// Added to the loss probability inside the window (result capped at 1).
    #[serde(default)]
    pub extra_loss: f64,
}

fn one() -> f64 {
    1.0
}

impl CongestionWindow {
    pub fn contains(&self, t: SimTime) -> bool {
        (self.start_ms..self.end_ms).contains(&t.as_ms())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LinkSpec {
    pub kind: LinkKind,
    pub base_latency_ms: u64,
    /// Uniform half-width.
    pub jitter_ms: u64,
    pub loss_prob: f64,
    pub endpoints: (NodeId, NodeId),
    pub congestion: Option<CongestionWindow>,
}

impl LinkSpec {
    pub fn with_defaults(kind: LinkKind, a: NodeId, b: NodeId) -> Self {
        LinkSpec {
            kind,
            base_latency_ms: kind.default_latency_ms(),
            jitter_ms: kind.default_jitter_ms(),
            loss_prob: 0.0,
            endpoints: (a, b),
            congestion: None,
        }
    }

    pub fn peer(&self, n: NodeId) -> Option<NodeId> {
        match self.endpoints {
            (a, b) if a == n => Some(b),
            (a, b) if b == n => Some(a),
            _ => None,
        }
    }

    /// `(latency_ms, loss_prob)` in force at `t`.
    fn effective(&self, t: SimTime) -> (u64, f64) {
        match self.congestion {
            Some(c) if c.contains(t) => {
                let lat = libm::round(self.base_latency_ms as f64 * c.latency_factor.max(0.0)) as u64;
                (lat, (self.loss_prob + c.extra_loss).clamp(0.0, 1.0))
            }
            _ => (self.base_latency_ms, self.loss_prob),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Node {
    pub id: NodeId,
    pub name: String,
    pub kind: NodeKind,
}

#[derive(Clone, Debug, PartialEq, thiserror::Error)]
pub enum NetError {
    #[error("no premises: topology needs at least one unit or room")]
    NoPremises,
    #[error("dangling node reference '{0}'")]
    DanglingNode(String),
    #[error("duplicate node name '{0}'")]
    DuplicateNode(String),
    #[error("{kind:?} link cannot join {a} and {b}")]
    InvalidEndpoints { kind: LinkKind, a: String, b: String },
    #[error("no {kind:?} link between '{a}' and '{b}'")]
    NoSuchLink { kind: Option<LinkKind>, a: String, b: String },
    #[error("topology must contain exactly one Cloud node (found {0})")]
    CloudCount(usize),
    #[error("device '{0}' has no path to the cloud")]
    Disconnected(String),
    #[error("'{device}' reaches the cloud without passing a {via:?}")]
    BypassesGateway { device: String, via: NodeKind },
    #[error("no route from '{src}' to '{dst}'")]
    NoRoute { src: String, dst: String },
    #[error("loss_prob must be within [0, 1], got {0}")]
    InvalidLoss(f64),
    #[error("latency probe needs at least one sample")]
    NoSamples,
}

/// Node ids belonging to one unit (hostel) or room (office).
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct PremisesNodes {
    pub premises_id: String,
    pub meter: Option<NodeId>,
    pub uhg: NodeId,
    pub mpns: Vec<NodeId>,
    /// Smart plug per controllable appliance, keyed by appliance id.
    pub plugs: BTreeMap<String, NodeId>,
}

impl PremisesNodes {
    /// Node that reports this unit's consumption: the smart meter when present, otherwise the first MPN.
    pub fn reporting_node(&self) -> NodeId {
        self.meter.or_else(|| self.mpns.first().copied()).unwrap_or(self.uhg)
    }

    /// Node that actuates `appliance`: its smart plug, else the first MPN.
    pub fn actuator_for(&self, appliance: &str) -> NodeId {
        self.plugs.get(appliance).copied().or_else(|| self.mpns.first().copied()).unwrap_or(self.uhg)
    }
}

#[derive(Clone, Debug, Default)]
pub struct Topology {
    nodes: Vec<Node>,
    links: Vec<Option<LinkSpec>>,
    adjacency: Vec<Vec<LinkId>>,
    by_name: BTreeMap<String, NodeId>,
    pub premises: Vec<PremisesNodes>,
}

impl Topology {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_node(&mut self, name: impl Into<String>, kind: NodeKind) -> Result<NodeId, NetError> {
        let name = name.into();
        if self.by_name.contains_key(&name) {
            return Err(NetError::DuplicateNode(name));
        }
        let id = NodeId(self.nodes.len() as u32);
        self.by_name.insert(name.clone(), id);
        self.nodes.push(Node { id, name, kind });
        self.adjacency.push(Vec::new());
        Ok(id)
    }

    pub fn add_link(&mut self, kind: LinkKind, a: NodeId, b: NodeId) -> Result<LinkId, NetError> {
        self.add_link_spec(LinkSpec::with_defaults(kind, a, b))
    }

    pub fn add_link_spec(&mut self, spec: LinkSpec) -> Result<LinkId, NetError> {
        let (a, b) = spec.endpoints;
        let (na, nb) = (self.node_checked(a)?, self.node_checked(b)?);
        if !spec.kind.connects(na.kind, nb.kind) {
            return Err(NetError::InvalidEndpoints { kind: spec.kind, a: na.name.clone(), b: nb.name.clone() });
        }
        if !(0.0..=1.0).contains(&spec.loss_prob) {
            return Err(NetError::InvalidLoss(spec.loss_prob));
        }
        let id = LinkId(self.links.len() as u32);
        self.links.push(Some(spec));
        self.adjacency[a.0 as usize].push(id);
        self.adjacency[b.0 as usize].push(id);
        Ok(id)
    }

    pub fn remove_link(&mut self, id: LinkId) -> Option<LinkSpec> {
        let spec = self.links.get_mut(id.0 as usize)?.take()?;
        for end in [spec.endpoints.0, spec.endpoints.1] {
            self.adjacency[end.0 as usize].retain(|l| *l != id);
        }
        Some(spec)
    }

    fn node_checked(&self, id: NodeId) -> Result<&Node, NetError> {
        self.nodes.get(id.0 as usize).ok_or_else(|| NetError::DanglingNode(format!("#{}", id.0)))
    }

    pub fn node(&self, id: NodeId) -> &Node {
        &self.nodes[id.0 as usize]
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn node_by_name(&self, name: &str) -> Option<NodeId> {
        self.by_name.get(name).copied()
    }

    pub fn link(&self, id: LinkId) -> Option<&LinkSpec> {
        self.links.get(id.0 as usize).and_then(Option::as_ref)
    }

    pub fn link_mut(&mut self, id: LinkId) -> Option<&mut LinkSpec> {
        self.links.get_mut(id.0 as usize).and_then(Option::as_mut)
    }

    pub fn links(&self) -> impl Iterator<Item = (LinkId, &LinkSpec)> {
        self.links.iter().enumerate().filter_map(|(i, l)| l.as_ref().map(|l| (LinkId(i as u32), l)))
    }

    pub fn count(&self, kind: NodeKind) -> usize {
        self.nodes.iter().filter(|n| n.kind == kind).count()
    }

    pub fn cloud(&self) -> Option<NodeId> {
        self.nodes.iter().find(|n| n.kind == NodeKind::Cloud).map(|n| n.id)
    }

    pub fn link_between(&self, a: NodeId, b: NodeId) -> Option<LinkId> {
        self.adjacency.get(a.0 as usize)?.iter().copied().find(|l| self.link(*l).and_then(|s| s.peer(a)) == Some(b))
    }

    /// Fewest-hop route; ties go to the earliest-added link. Returns the links in path order.
    pub fn route(&self, src: NodeId, dst: NodeId) -> Result<Vec<LinkId>, NetError> {
        let no_route = || NetError::NoRoute {
            src: self.nodes.get(src.0 as usize).map_or_else(|| "?".to_string(), |n| n.name.clone()),
            dst: self.nodes.get(dst.0 as usize).map_or_else(|| "?".to_string(), |n| n.name.clone()),
        };
        if src.0 as usize >= self.nodes.len() || dst.0 as usize >= self.nodes.len() {
            return Err(no_route());
        }
        if src == dst {
            return Ok(Vec::new());
        }
        let mut via: Vec<Option<LinkId>> = vec![None; self.nodes.len()];
        let mut seen = vec![false; self.nodes.len()];
        seen[src.0 as usize] = true;
        let mut frontier = VecDeque::from([src]);
        while let Some(n) = frontier.pop_front() {
            for &l in &self.adjacency[n.0 as usize] {
                let Some(peer) = self.link(l).and_then(|s| s.peer(n)) else { continue };
                if seen[peer.0 as usize] {
                    continue;
                }
                seen[peer.0 as usize] = true;
                via[peer.0 as usize] = Some(l);
                if peer == dst {
                    let mut path = Vec::new();
                    let mut cur = dst;
                    while cur != src {
                        let l = via[cur.0 as usize].expect("bfs parent");
                        path.push(l);
                        cur = self.link(l).and_then(|s| s.peer(cur)).expect("bfs link");
                    }
                    path.reverse();
                    return Ok(path);
                }
                frontier.push_back(peer);
            }
        }
        Err(no_route())
    }

    /// Nodes visited along `route(src, dst)`, including both ends.
    pub fn route_nodes(&self, src: NodeId, dst: NodeId) -> Result<Vec<NodeId>, NetError> {
        let mut cur = src;
        let mut out = vec![src];
        for l in self.route(src, dst)? {
            cur = self.link(l).and_then(|s| s.peer(cur)).expect("route link");
            out.push(cur);
        }
        Ok(out)
    }

    /// Structural checks: a single cloud, meters reach it through a data
    /// concentrator, HAN devices through a UHG.
    pub fn validate(&self) -> Result<(), NetError> {
        if self.premises.is_empty() {
            return Err(NetError::NoPremises);
        }
        let clouds = self.count(NodeKind::Cloud);
        if clouds != 1 {
            return Err(NetError::CloudCount(clouds));
        }
        let cloud = self.cloud().expect("one cloud");
        for node in &self.nodes {
            let via = match node.kind {
                NodeKind::SmartMeter => Some(NodeKind::DataConcentrator),
                k if k.is_han_device() => Some(NodeKind::Uhg),
                NodeKind::Uhg => None,
                _ => continue,
            };
            let path = self.route_nodes(node.id, cloud).map_err(|_| NetError::Disconnected(node.name.clone()))?;
            if let Some(via) = via {
                if !path.iter().any(|n| self.node(*n).kind == via) {
                    return Err(NetError::BypassesGateway { device: node.name.clone(), via });
                }
            }
        }
        Ok(())
    }

    /// Flat listing for scenario debugging.
    pub fn echo(&self) -> Vec<NodeListing> {
        self.nodes
            .iter()
            .map(|n| NodeListing {
                id: n.id,
                name: n.name.clone(),
                kind: n.kind,
                links: self.adjacency[n.id.0 as usize]
                    .iter()
                    .filter_map(|l| self.link(*l))
                    .map(|s| LinkListing {
                        peer: self.node(s.peer(n.id).expect("adjacent")).name.clone(),
                        kind: s.kind,
                        base_latency_ms: s.base_latency_ms,
                        jitter_ms: s.jitter_ms,
                        loss_prob: s.loss_prob,
                    })
                    .collect(),
            })
            .collect()
    }

    /// Apply per-link parameter overrides in order. A later override wins.
    pub fn apply_overrides(&mut self, overrides: &[LinkOverride]) -> Result<(), NetError> {
        for o in overrides {
            let targets: Vec<LinkId> = match &o.between {
                Some((a, b)) => {
                    let na = self.node_by_name(a).ok_or_else(|| NetError::DanglingNode(a.clone()))?;
                    let nb = self.node_by_name(b).ok_or_else(|| NetError::DanglingNode(b.clone()))?;
                    let l = self
                        .link_between(na, nb)
                        .filter(|l| o.kind.is_none_or(|k| self.link(*l).map(|s| s.kind) == Some(k)))
                        .ok_or_else(|| NetError::NoSuchLink { kind: o.kind, a: a.clone(), b: b.clone() })?;
                    vec![l]
                }
                None => self.links().filter(|(_, s)| o.kind.is_none_or(|k| s.kind == k)).map(|(id, _)| id).collect(),
            };
            if let Some(p) = o.loss_prob {
                if !(0.0..=1.0).contains(&p) {
                    return Err(NetError::InvalidLoss(p));
                }
            }
            for id in targets {
                let s = self.link_mut(id).expect("live link");
                if let Some(v) = o.base_latency_ms {
                    s.base_latency_ms = v;
                }
                if let Some(v) = o.jitter_ms {
                    s.jitter_ms = v;
                }
                if let Some(v) = o.loss_prob {
                    s.loss_prob = v;
                }
                if let Some(c) = o.congestion {
                    s.congestion = Some(c);
                }
            }
        }
        Ok(())
    }
}

/// Parameter override for every link of `kind`, or for the single link joining `between`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct LinkOverride {
    pub kind: Option<LinkKind>,
    pub between: Option<(String, String)>,
    pub base_latency_ms: Option<u64>,
    pub jitter_ms: Option<u64>,
    pub loss_prob: Option<f64>,
    pub congestion: Option<CongestionWindow>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinkListing {
    pub peer: String,
    pub kind: LinkKind,
    pub base_latency_ms: u64,
    pub jitter_ms: u64,
    pub loss_prob: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NodeListing {
    pub id: NodeId,
    pub name: String,
    pub kind: NodeKind,
    pub links: Vec<LinkListing>,
}

/// One hostel unit: a smart meter, a UHG, `mpns` MPNs and one smart plug per listed appliance.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct HostelUnitPlan {
    pub id: String,
    pub mpns: usize,
    pub plugs: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum TopologyTemplate {
    /// One apartment block: all meters share a data concentrator.
    Hostel { units: Vec<HostelUnitPlan> },
    /// One MPN per office room, chained through ZigBee relays (`mpns_per_relay`
    /// rooms each) to a single UHG.
    OfficeSection { rooms: Vec<String>, mpns_per_relay: usize },
}

impl TopologyTemplate {
    /// `units` hostel units with the usual four MPNs and `plugs_per_unit` smart plugs.
    pub fn hostel(units: usize, plugs_per_unit: usize) -> Self {
        TopologyTemplate::Hostel {
            units: (0..units)
                .map(|u| HostelUnitPlan {
                    id: format!("u{u}"),
                    mpns: 4,
                    plugs: (0..plugs_per_unit).map(|p| format!("u{u}.plug{p}")).collect(),
                })
                .collect(),
        }
    }

    pub fn office(rooms: usize) -> Self {
        TopologyTemplate::OfficeSection { rooms: (0..rooms).map(|r| format!("r{r}")).collect(), mpns_per_relay: 5 }
    }
}

/// Instantiate a template with default link parameters and validate it.
pub fn build_topology(template: &TopologyTemplate) -> Result<Topology, NetError> {
    let mut t = Topology::new();
    let cloud = t.add_node("cloud", NodeKind::Cloud)?;
    let ap = t.add_node("ap-0", NodeKind::WifiAP)?;
    t.add_link(LinkKind::Fiber, ap, cloud)?;
    match template {
        TopologyTemplate::Hostel { units } => {
            if units.is_empty() {
                return Err(NetError::NoPremises);
            }
            let bs = t.add_node("tvws-bs-0", NodeKind::TvwsBaseStation)?;
            t.add_link(LinkKind::Fiber, bs, cloud)?;
            let dc = t.add_node("dc-0", NodeKind::DataConcentrator)?;
            t.add_link(LinkKind::Tvws, dc, bs)?;
            for unit in units {
                let meter = t.add_node(format!("meter-{}", unit.id), NodeKind::SmartMeter)?;
                t.add_link(LinkKind::Bpl, meter, dc)?;
                let uhg = t.add_node(format!("uhg-{}", unit.id), NodeKind::Uhg)?;
                t.add_link(LinkKind::WiFi, uhg, ap)?;
                let mut nodes =
                    PremisesNodes { premises_id: unit.id.clone(), meter: Some(meter), uhg, ..Default::default() };
                for k in 0..unit.mpns {
                    let m = t.add_node(format!("mpn-{}-{k}", unit.id), NodeKind::Mpn)?;
                    t.add_link(LinkKind::ZigBee, m, uhg)?;
                    nodes.mpns.push(m);
                }
                for appliance in &unit.plugs {
                    let p = t.add_node(format!("plug-{appliance}"), NodeKind::SmartPlug)?;
                    t.add_link(LinkKind::ZWave, p, uhg)?;
                    nodes.plugs.insert(appliance.clone(), p);
                }
                t.premises.push(nodes);
            }
        }
        TopologyTemplate::OfficeSection { rooms, mpns_per_relay } => {
            if rooms.is_empty() {
                return Err(NetError::NoPremises);
            }
            let per_relay = (*mpns_per_relay).max(1);
            let uhg = t.add_node("uhg-0", NodeKind::Uhg)?;
            t.add_link(LinkKind::WiFi, uhg, ap)?;
            let mut upstream = uhg;
            let mut relay = uhg;
            for (i, room) in rooms.iter().enumerate() {
                if i % per_relay == 0 {
                    relay = t.add_node(format!("relay-{}", i / per_relay), NodeKind::ZigBeeRelay)?;
                    t.add_link(LinkKind::ZigBee, relay, upstream)?;
                    upstream = relay;
                }
                let m = t.add_node(format!("mpn-{room}"), NodeKind::Mpn)?;
                t.add_link(LinkKind::ZigBee, m, relay)?;
                t.premises.push(PremisesNodes {
                    premises_id: room.clone(),
                    meter: None,
                    uhg,
                    mpns: vec![m],
                    plugs: BTreeMap::new(),
                });
            }
        }
    }
    t.validate()?;
    Ok(t)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum MessageKind {
    MeterReading,
    SensorSample,
    ControlCommand,
    PriceSignal,
    Ack,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Message {
    pub id: u64,
    pub src: NodeId,
    pub dst: NodeId,
    pub kind: MessageKind,
    pub size_bytes: u32,
    pub created_at: SimTime,
    pub delivered_at: Option<SimTime>,
    pub hop_trace: Vec<(NodeId, SimTime)>,
}

impl Message {
    pub fn new(id: u64, src: NodeId, dst: NodeId, kind: MessageKind, size_bytes: u32, created_at: SimTime) -> Self {
        Message { id, src, dst, kind, size_bytes, created_at, delivered_at: None, hop_trace: Vec::new() }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "outcome", rename_all = "snake_case")]
pub enum TransportOutcome {
    Delivered {
        at: SimTime,
    },
    /// `hop` is the zero-based index of the dropping hop along the route.
    Lost {
        hop: usize,
        link: LinkId,
        at: SimTime,
    },
}

impl TransportOutcome {
    pub fn delivered_at(&self) -> Option<SimTime> {
        match self {
            TransportOutcome::Delivered { at } => Some(*at),
            TransportOutcome::Lost { .. } => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatencyStats {
    pub samples: usize,
    pub delivered: usize,
    /// `None` when every probe was lost.
    pub mean_ms: Option<f64>,
    pub p95_ms: Option<f64>,
    pub loss_rate: f64,
}

/// Topology plus one random stream per link, labelled by its endpoint names.
#[derive(Clone, Debug)]
pub struct Network {
    topology: Topology,
    streams: BTreeMap<LinkId, StreamKey>,
    routes: BTreeMap<(NodeId, NodeId), Vec<LinkId>>,
}

impl Network {
    pub fn new(topology: Topology, rngs: &mut RngStreams) -> Self {
        let streams = topology
            .links()
            .map(|(id, s)| {
                let label = format!("link/{}~{}", topology.node(s.endpoints.0).name, topology.node(s.endpoints.1).name);
                (id, rngs.register(&label))
            })
            .collect();
        Network { topology, streams, routes: BTreeMap::new() }
    }

    pub fn topology(&self) -> &Topology {
        &self.topology
    }

    pub fn remove_link(&mut self, id: LinkId) -> Option<LinkSpec> {
        self.routes.clear();
        self.topology.remove_link(id)
    }

    pub fn route(&mut self, src: NodeId, dst: NodeId) -> Result<Vec<LinkId>, NetError> {
        if let Some(r) = self.routes.get(&(src, dst)) {
            return Ok(r.clone());
        }
        let r = self.topology.route(src, dst)?;
        self.routes.insert((src, dst), r.clone());
        Ok(r)
    }

    /// Push `msg` hop by hop starting at `at`. Fills `hop_trace` and, on
    /// success, `delivered_at`. The caller schedules the delivery event.
    pub fn send(
        &mut self,
        rngs: &mut RngStreams,
        msg: &mut Message,
        at: SimTime,
    ) -> Result<TransportOutcome, NetError> {
        let route = self.route(msg.src, msg.dst)?;
        let mut t = at;
        let mut node = msg.src;
        msg.hop_trace.clear();
        msg.hop_trace.push((node, t));
        for (hop, link_id) in route.into_iter().enumerate() {
            let spec = self.topology.link(link_id).expect("routed link");
            let key = self.streams[&link_id];
            let (latency, loss) = spec.effective(t);
            // draw the loss variate unconditionally so loss edits don't shift jitter draws
            if rngs.uniform(key) < loss {
                msg.delivered_at = None;
                return Ok(TransportOutcome::Lost { hop, link: link_id, at: t });
            }
            let jitter = if spec.jitter_ms > 0 {
                let j = spec.jitter_ms as i64;
                rngs.int_inclusive(key, -j, j)
            } else {
                0
            };
            let delay = (latency as i64 + jitter).max(0) as u64;
            t = t.saturating_add_ms(delay);
            node = spec.peer(node).expect("route continuity");
            msg.hop_trace.push((node, t));
        }
        msg.delivered_at = Some(t);
        Ok(TransportOutcome::Delivered { at: t })
    }

    /// Monte-Carlo latency/loss probe of the `src -> dst` route, drawing from the link streams.
    pub fn path_latency_stats(
        &mut self,
        rngs: &mut RngStreams,
        src: NodeId,
        dst: NodeId,
        samples: usize,
        at: SimTime,
    ) -> Result<LatencyStats, NetError> {
        if samples == 0 {
            return Err(NetError::NoSamples);
        }
        self.route(src, dst)?;
        let mut delays: Vec<u64> = Vec::with_capacity(samples);
        for i in 0..samples {
            let mut probe = Message::new(i as u64, src, dst, MessageKind::Ack, 1, at);
            if let TransportOutcome::Delivered { at: d } = self.send(rngs, &mut probe, at)? {
                delays.push(d.since(at));
            }
        }
        let delivered = delays.len();
        let loss_rate = (samples - delivered) as f64 / samples as f64;
        if delivered == 0 {
            return Ok(LatencyStats { samples, delivered, mean_ms: None, p95_ms: None, loss_rate });
        }
        delays.sort_unstable();
        let mean = delays.iter().map(|d| *d as f64).sum::<f64>() / delivered as f64;
        Ok(LatencyStats {
            samples,
            delivered,
            mean_ms: Some(mean),
            p95_ms: Some(nearest_rank(&delays, 0.95) as f64),
            loss_rate,
        })
    }
}

/// Nearest-rank percentile of an ascending slice.
pub fn nearest_rank(sorted: &[u64], q: f64) -> u64 {
    let n = sorted.len();
    let rank = libm::ceil(q * n as f64) as usize;
    sorted[rank.clamp(1, n) - 1]
}

#[cfg(test)]
mod tests {
    use super::*;

    fn chain(latencies: &[(LinkKind, u64)]) -> (Topology, NodeId, NodeId) {
        // meter -BPL- dc -TVWS- bs -Fiber- cloud
        let mut t = Topology::new();
        let kinds = [NodeKind::SmartMeter, NodeKind::DataConcentrator, NodeKind::TvwsBaseStation, NodeKind::Cloud];
        let ids: Vec<NodeId> =
            kinds.iter().enumerate().map(|(i, k)| t.add_node(format!("n{i}"), *k).unwrap()).collect();
        for (i, (kind, lat)) in latencies.iter().enumerate() {
            let l = t.add_link(*kind, ids[i], ids[i + 1]).unwrap();
            let s = t.link_mut(l).unwrap();
            s.base_latency_ms = *lat;
            s.jitter_ms = 0;
        }
        (t, ids[0], ids[latencies.len()])
    }

    #[test]
    fn hostel_counts() {
        let t = build_topology(&TopologyTemplate::hostel(10, 2)).unwrap();
        assert_eq!(t.count(NodeKind::SmartMeter), 10);
        assert_eq!(t.count(NodeKind::Uhg), 10);
        assert_eq!(t.count(NodeKind::Mpn), 40);
        assert_eq!(t.count(NodeKind::SmartPlug), 20);
        assert_eq!(t.count(NodeKind::Cloud), 1);
    }

    #[test]
    fn office_counts() {
        let t = build_topology(&TopologyTemplate::office(20)).unwrap();
        assert_eq!(t.count(NodeKind::Mpn), 20);
        assert_eq!(t.count(NodeKind::Uhg), 1);
        assert_eq!(t.count(NodeKind::ZigBeeRelay), 4);
        let cloud = t.cloud().unwrap();
        let far = t.node_by_name("mpn-r19").unwrap();
        // mpn -> relay-3 -> relay-2 -> relay-1 -> relay-0 -> uhg -> ap -> cloud
        assert_eq!(t.route(far, cloud).unwrap().len(), 7);
    }

    #[test]
    fn empty_templates_are_rejected() {
        assert_eq!(build_topology(&TopologyTemplate::hostel(0, 2)).unwrap_err(), NetError::NoPremises);
        assert_eq!(build_topology(&TopologyTemplate::office(0)).unwrap_err(), NetError::NoPremises);
    }

    #[test]
    fn bpl_only_joins_meter_and_concentrator() {
        let mut t = Topology::new();
        let m = t.add_node("m", NodeKind::SmartMeter).unwrap();
        let c = t.add_node("c", NodeKind::Cloud).unwrap();
        let err = t.add_link(LinkKind::Bpl, m, c).unwrap_err();
        assert!(matches!(err, NetError::InvalidEndpoints { kind: LinkKind::Bpl, .. }));
        assert!(matches!(t.add_link(LinkKind::Bpl, m, NodeId(9)), Err(NetError::DanglingNode(_))));
    }

    #[test]
    fn disconnected_device_fails_validation() {
        let mut t = build_topology(&TopologyTemplate::hostel(1, 1)).unwrap();
        let plug = t.node_by_name("plug-u0.plug0").unwrap();
        let uhg = t.node_by_name("uhg-u0").unwrap();
        let l = t.link_between(plug, uhg).unwrap();
        t.remove_link(l);
        assert_eq!(t.validate().unwrap_err(), NetError::Disconnected("plug-u0.plug0".into()));
    }

    #[test]
    fn single_hop_delivery() {
        let (t, src, dst) = chain(&[(LinkKind::Bpl, 20)]);
        let mut rngs = RngStreams::new(1);
        let mut net = Network::new(t, &mut rngs);
        let mut m = Message::new(0, src, dst, MessageKind::MeterReading, 64, SimTime(100));
        let out = net.send(&mut rngs, &mut m, SimTime(100)).unwrap();
        assert_eq!(out, TransportOutcome::Delivered { at: SimTime(120) });
        assert_eq!(m.delivered_at, Some(SimTime(120)));
    }

    #[test]
    fn three_hops_sum_latency() {
        let (t, src, dst) = chain(&[(LinkKind::Bpl, 5), (LinkKind::Tvws, 20), (LinkKind::Fiber, 10)]);
        let mut rngs = RngStreams::new(1);
        let mut net = Network::new(t, &mut rngs);
        let mut m = Message::new(0, src, dst, MessageKind::MeterReading, 64, SimTime(0));
        assert_eq!(net.send(&mut rngs, &mut m, SimTime(0)).unwrap(), TransportOutcome::Delivered { at: SimTime(35) });
        let times: Vec<u64> = m.hop_trace.iter().map(|(_, t)| t.as_ms()).collect();
        assert_eq!(times, vec![0, 5, 25, 35]);
    }

    #[test]
    fn certain_loss_drops_at_that_hop() {
        let (mut t, src, dst) = chain(&[(LinkKind::Bpl, 5), (LinkKind::Tvws, 20), (LinkKind::Fiber, 10)]);
        t.link_mut(LinkId(1)).unwrap().loss_prob = 1.0;
        let mut rngs = RngStreams::new(1);
        let mut net = Network::new(t, &mut rngs);
        let mut m = Message::new(0, src, dst, MessageKind::MeterReading, 64, SimTime(0));
        let out = net.send(&mut rngs, &mut m, SimTime(0)).unwrap();
        assert_eq!(out, TransportOutcome::Lost { hop: 1, link: LinkId(1), at: SimTime(5) });
        assert_eq!(m.delivered_at, None);
    }

    #[test]
    fn removed_link_means_no_route() {
        let (t, src, dst) = chain(&[(LinkKind::Bpl, 5), (LinkKind::Tvws, 20)]);
        let mut rngs = RngStreams::new(1);
        let mut net = Network::new(t, &mut rngs);
        let mut m = Message::new(0, src, dst, MessageKind::MeterReading, 64, SimTime(0));
        net.send(&mut rngs, &mut m, SimTime(0)).unwrap();
        net.remove_link(LinkId(1));
        assert!(matches!(net.send(&mut rngs, &mut m, SimTime(0)), Err(NetError::NoRoute { .. })));
    }

    #[test]
    fn fixed_path_stats() {
        let (t, src, dst) = chain(&[(LinkKind::Bpl, 5), (LinkKind::Tvws, 20)]);
        let mut rngs = RngStreams::new(1);
        let mut net = Network::new(t, &mut rngs);
        let s = net.path_latency_stats(&mut rngs, src, dst, 50, SimTime(0)).unwrap();
        assert_eq!(s.mean_ms, Some(25.0));
        assert_eq!(s.p95_ms, Some(25.0));
        assert_eq!(s.loss_rate, 0.0);
        assert_eq!(net.path_latency_stats(&mut rngs, src, dst, 0, SimTime(0)), Err(NetError::NoSamples));
    }

    #[test]
    fn symmetric_jitter_keeps_mean() {
        let (mut t, src, dst) = chain(&[(LinkKind::Bpl, 20)]);
        t.link_mut(LinkId(0)).unwrap().jitter_ms = 10;
        let mut rngs = RngStreams::new(77);
        let mut net = Network::new(t, &mut rngs);
        let s = net.path_latency_stats(&mut rngs, src, dst, 10_000, SimTime(0)).unwrap();
        let mean = s.mean_ms.unwrap();
        assert!((mean - 20.0).abs() <= 0.5, "mean {mean}");
    }

    #[test]
    fn two_lossy_hops_compound() {
        let (mut t, src, dst) = chain(&[(LinkKind::Bpl, 5), (LinkKind::Tvws, 20)]);
        for l in [LinkId(0), LinkId(1)] {
            t.link_mut(l).unwrap().loss_prob = 0.1;
        }
        let mut rngs = RngStreams::new(2024);
        let mut net = Network::new(t, &mut rngs);
        let s = net.path_latency_stats(&mut rngs, src, dst, 10_000, SimTime(0)).unwrap();
        assert!((s.loss_rate - 0.19).abs() <= 0.02, "loss {}", s.loss_rate);
    }

    #[test]
    fn congestion_window_raises_latency_and_loss() {
        let (mut t, src, dst) = chain(&[(LinkKind::Bpl, 10)]);
        t.link_mut(LinkId(0)).unwrap().congestion =
            Some(CongestionWindow { start_ms: 1_000, end_ms: 2_000, latency_factor: 3.0, extra_loss: 0.0 });
        let mut rngs = RngStreams::new(5);
        let mut net = Network::new(t, &mut rngs);
        let mut m = Message::new(0, src, dst, MessageKind::Ack, 1, SimTime(0));
        assert_eq!(net.send(&mut rngs, &mut m, SimTime(0)).unwrap().delivered_at(), Some(SimTime(10)));
        assert_eq!(net.send(&mut rngs, &mut m, SimTime(1_500)).unwrap().delivered_at(), Some(SimTime(1_530)));
    }

    #[test]
    fn overrides_by_kind_and_by_pair() {
        let mut t = build_topology(&TopologyTemplate::hostel(2, 1)).unwrap();
        t.apply_overrides(&[
            LinkOverride { kind: Some(LinkKind::ZWave), base_latency_ms: Some(300_000), ..Default::default() },
            LinkOverride {
                between: Some(("plug-u1.plug0".into(), "uhg-u1".into())),
                loss_prob: Some(1.0),
                ..Default::default()
            },
        ])
        .unwrap();
        let zw: Vec<&LinkSpec> = t.links().map(|(_, s)| s).filter(|s| s.kind == LinkKind::ZWave).collect();
        assert!(zw.iter().all(|s| s.base_latency_ms == 300_000));
        assert_eq!(zw.iter().filter(|s| s.loss_prob == 1.0).count(), 1);
        let bad = LinkOverride { between: Some(("nope".into(), "uhg-u1".into())), ..Default::default() };
        assert_eq!(t.apply_overrides(&[bad]), Err(NetError::DanglingNode("nope".into())));
    }

    #[test]
    fn default_jitter_is_a_fifth_of_latency() {
        assert_eq!(LinkKind::Tvws.default_jitter_ms(), 6);
        assert_eq!(LinkKind::WiFi.default_jitter_ms(), 1);
        assert_eq!(LinkKind::Fiber.default_jitter_ms(), 0);
    }
}
