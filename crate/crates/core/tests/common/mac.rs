//! Single-link retry law against the binomial oracle.

use meshsim::engine::{rng_stream, Mac, MacParams};
use meshsim::metrics::{ElpParams, Metric};
use meshsim::routing::{MaintenanceAction, MaintenanceMode, Router, RoutingParams};
use meshsim::topology::{build_topology, NodeId, NodeSpec, ProbabilityOverride, RadioSpec, Topology, TopologySpec};

pub fn one_link(p: f64) -> Topology {
    let radio = RadioSpec {
        channel: 1,
        nominal_rate: 54e6,
        tx_range: 50.0,
        cs_range: 80.0,
        role: Default::default(),
    };
    let node = |id: u32, x: f64| NodeSpec {
        id: NodeId(id),
        position: [x, 0.0],
        radios: vec![radio.clone()],
        is_server: false,
    };
    let pin = |src: u32, dst: u32| ProbabilityOverride {
        src: NodeId(src),
        dst: NodeId(dst),
        channel: None,
        p,
    };
    build_topology(&TopologySpec {
        nodes: vec![node(0, 0.0), node(1, 10.0)],
        overrides: vec![pin(0, 1), pin(1, 0)],
        ..Default::default()
    })
    .unwrap()
}

pub struct RetryLaw {
    pub p: f64,
    pub frames: u64,
    pub delivered: u64,
    pub notifications: u64,
    /// Expected delivery ratio `1 - (1-p)^8`.
    pub expected: f64,
    /// Binomial standard deviation of the delivered count.
    pub sigma: f64,
}

impl RetryLaw {
    pub fn delivery_ok(&self) -> bool {
        (self.delivered as f64 - self.expected * self.frames as f64).abs() <= 3.0 * self.sigma
    }

    pub fn notification_ok(&self) -> bool {
        let q = 1.0 - self.expected;
        (self.notifications as f64 - q * self.frames as f64).abs() <= 3.0 * self.sigma
    }
}

/// Sends `frames` unicast frames over one link, handing every failure
/// notification to a router with maintenance disabled.
pub fn retry_law(p: f64, frames: u64, seed: u64) -> RetryLaw {
    let topo = one_link(p);
    let link = topo.links()[0].id;
    let hop = topo.directed(link, NodeId(0)).unwrap();
    let params = MacParams::default();
    let mut mac = Mac::new(&topo, params, rng_stream(seed, "mac"));
    let routing = RoutingParams {
        maintenance: MaintenanceMode::Off,
        ..Default::default()
    };
    let mut router = Router::new(NodeId(0), false, routing, Metric::Elp, ElpParams::default());
    router.add_local_link(link, 54e6);
    let mut delivered = 0;
    let mut t = 0.0;
    for _ in 0..frames {
        let out = mac.transmit(&topo, 2000.0, hop, t).unwrap();
        t = out.completion_time + 1e-3;
        if out.delivered {
            delivered += 1;
        } else {
            assert!(out.failure_notification());
            assert_eq!(out.attempts, params.max_attempts);
            let (action, res) = router.handle_tx_failure(link, t);
            assert_eq!(action, MaintenanceAction::Bookkeeping);
            assert!(res.flood.is_none() && res.suppressed.is_empty());
        }
    }
    let notifications = router.suppression().get(&link).map_or(0, |e| u64::from(e.recent_failures));
    assert_eq!(notifications, mac.stats().failure_notifications);
    let expected = 1.0 - (1.0 - p).powi(i32::from(params.max_attempts));
    RetryLaw {
        p,
        frames,
        delivered,
        notifications,
        expected,
        sigma: (frames as f64 * expected * (1.0 - expected)).sqrt(),
    }
}
