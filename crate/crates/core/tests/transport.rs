use gridbed_core::network::{LinkKind, Message, MessageKind, Network, NodeKind, Topology, TransportOutcome};
use gridbed_core::{RngStreams, SimTime};
use proptest::prelude::*;

fn chain(params: &[(u64, u64, f64)]) -> (Topology, Vec<gridbed_core::network::NodeId>) {
    let mut t = Topology::new();
    let kinds = [NodeKind::SmartMeter, NodeKind::DataConcentrator, NodeKind::TvwsBaseStation, NodeKind::Cloud];
    let links = [LinkKind::Bpl, LinkKind::Tvws, LinkKind::Fiber];
    let nodes: Vec<_> = kinds.iter().enumerate().map(|(i, k)| t.add_node(format!("n{i}"), *k).unwrap()).collect();
    for (i, (lat, jit, loss)) in params.iter().enumerate() {
        let l = t.add_link(links[i], nodes[i], nodes[i + 1]).unwrap();
        let s = t.link_mut(l).unwrap();
        s.base_latency_ms = *lat;
        s.jitter_ms = *jit;
        s.loss_prob = *loss;
    }
    (t, nodes)
}

proptest! {
    #[test]
    fn delay_within_jitter_envelope(
        params in prop::collection::vec((0u64..200, 0u64..20), 3),
        seed in any::<u64>(),
        start in 0u64..1_000_000,
    ) {
        let p: Vec<(u64, u64, f64)> = params.iter().map(|(l, j)| (*l, *j, 0.0)).collect();
        let (topo, nodes) = chain(&p);
        let mut rngs = RngStreams::new(seed);
        let mut net = Network::new(topo, &mut rngs);
        let mut msg = Message::new(0, nodes[0], nodes[3], MessageKind::MeterReading, 64, SimTime(start));
        let out = net.send(&mut rngs, &mut msg, SimTime(start)).unwrap();
        let TransportOutcome::Delivered { at } = out else { panic!("lossless path dropped") };
        let hi: u64 = p.iter().map(|(l, j, _)| l + j).sum();
        let lo: u64 = p.iter().map(|(l, j, _)| l.saturating_sub(*j)).sum();
        let d = at.since(SimTime(start));
        prop_assert!(lo <= d && d <= hi);
        prop_assert_eq!(msg.hop_trace.len(), 4);
        prop_assert!(msg.hop_trace.windows(2).all(|w| w[0].1 <= w[1].1));
    }

    #[test]
    fn same_seed_same_outcomes(seed in any::<u64>()) {
        let p = [(10, 3, 0.2), (30, 6, 0.2), (2, 0, 0.0)];
        let run = || {
            let (topo, nodes) = chain(&p);
            let mut rngs = RngStreams::new(seed);
            let mut net = Network::new(topo, &mut rngs);
            (0..50)
                .map(|i| {
                    let mut m = Message::new(i, nodes[0], nodes[3], MessageKind::Ack, 16, SimTime(i * 1000));
                    net.send(&mut rngs, &mut m, SimTime(i * 1000)).unwrap()
                })
                .collect::<Vec<_>>()
        };
        prop_assert_eq!(run(), run());
    }
}

#[test]
fn two_lossy_hops_compound() {
    let (topo, nodes) = chain(&[(5, 0, 0.1), (5, 0, 0.1), (0, 0, 0.0)]);
    let mut rngs = RngStreams::new(11);
    let mut net = Network::new(topo, &mut rngs);
    let stats = net.path_latency_stats(&mut rngs, nodes[0], nodes[2], 10_000, SimTime::ZERO).unwrap();
    let sigma = (0.19f64 * 0.81 / 10_000.0).sqrt();
    assert!((stats.loss_rate - 0.19).abs() <= 3.0 * sigma, "{}", stats.loss_rate);
    assert_eq!(stats.mean_ms, Some(10.0));
}
