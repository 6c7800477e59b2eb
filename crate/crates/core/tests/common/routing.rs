//! Random link-state graphs checked against exhaustive simple-path search.

use std::cmp::Ordering;
use std::collections::BTreeMap;

use meshsim::metrics::{elp_link, ElpParams, LinkStats, Metric};
use meshsim::routing::{compute_routes, AdvertisedLink, LinkStateDb, RoutingTable};
use meshsim::scalar::Scalar;
use meshsim::topology::{LinkId, NodeId};
use num_rational::Ratio;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Directed edges `(from, to, link, cost)`.
pub type Edges<T> = Vec<(NodeId, NodeId, LinkId, T)>;

/// Undirected links between random pairs (parallel links allowed), each
/// direction with its own cost.
pub fn random_graph<T>(rng: &mut ChaCha8Rng, n: u32, mut cost: impl FnMut(&mut ChaCha8Rng) -> T) -> Edges<T> {
    let mut edges = Vec::new();
    let mut link = 0;
    for a in 0..n {
        for b in a + 1..n {
            let copies = match rng.gen_range(0..10) {
                0..=5 => 0,
                6..=8 => 1,
                _ => 2,
            };
            for _ in 0..copies {
                edges.push((NodeId(a), NodeId(b), LinkId(link), cost(rng)));
                edges.push((NodeId(b), NodeId(a), LinkId(link), cost(rng)));
                link += 1;
            }
        }
    }
    edges
}

pub fn db_of<T: Scalar>(n: u32, edges: &Edges<T>) -> LinkStateDb<T> {
    let mut per: BTreeMap<NodeId, Vec<AdvertisedLink<T>>> = (0..n).map(|i| (NodeId(i), Vec::new())).collect();
    for &(from, to, link, cost) in edges {
        per.get_mut(&from).unwrap().push(AdvertisedLink { to, link, cost });
    }
    let mut db = LinkStateDb::new();
    for (node, links) in per {
        db.set_local(node, links);
    }
    db
}

/// Best simple path per destination under (cost, hops, node sequence),
/// found by enumerating every simple path. Costs sum left to right.
pub fn exhaustive<T: Scalar>(edges: &Edges<T>, src: NodeId) -> BTreeMap<NodeId, (T, Vec<NodeId>)> {
    let mut best: BTreeMap<NodeId, (T, Vec<NodeId>)> = BTreeMap::new();
    let mut stack = vec![(src, T::zero(), vec![src])];
    while let Some((at, cost, path)) = stack.pop() {
        if at != src {
            let better = match best.get(&at) {
                None => true,
                Some((c, p)) => match cost.partial_cmp(c).unwrap() {
                    Ordering::Less => true,
                    Ordering::Greater => false,
                    Ordering::Equal => (path.len(), &path) < (p.len(), p),
                },
            };
            if better {
                best.insert(at, (cost, path.clone()));
            }
        }
        for &(_, to, _, c) in edges.iter().filter(|e| e.0 == at) {
            if !path.contains(&to) {
                let mut next = path.clone();
                next.push(to);
                stack.push((to, cost + c, next));
            }
        }
    }
    best
}

/// Following next hops from every node toward every destination never
/// revisits a node.
pub fn hop_by_hop_loop_free<T: Scalar>(tables: &BTreeMap<NodeId, RoutingTable<T>>) -> bool {
    tables.values().all(|t| {
        t.routes.keys().all(|&dest| {
            let mut at = t.owner;
            let mut seen = vec![at];
            while at != dest {
                let Some(r) = tables[&at].get(dest) else { return false };
                at = r.next_hop;
                if seen.contains(&at) {
                    return false;
                }
                seen.push(at);
            }
            true
        })
    })
}

fn check<T: Scalar>(n: u32, edges: &Edges<T>) {
    let db = db_of(n, edges);
    let mut tables = BTreeMap::new();
    for s in 0..n {
        let src = NodeId(s);
        let table = compute_routes(&db, Metric::Elp, src);
        let oracle = exhaustive(edges, src);
        assert_eq!(table.routes.len(), oracle.len(), "reachability from {src}");
        for (dest, (cost, path)) in &oracle {
            let r = table.get(*dest).expect("route present");
            assert!(r.path_cost == *cost, "{src}->{dest}: {:?} vs {:?}", r.path_cost, cost);
            assert_eq!(&r.path, path);
        }
        assert!(table.is_loop_free());
        tables.insert(src, table);
    }
    assert!(hop_by_hop_loop_free(&tables));
}

/// Random ELP costs from random link statistics, `f64`.
pub fn elp_trials(count: usize, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let params = ElpParams::<f64>::default();
    for _ in 0..count {
        let n = rng.gen_range(2..=8);
        let edges = random_graph(&mut rng, n, |r| {
            let stats = LinkStats {
                d_f: r.gen_range(0.2..=1.0),
                d_r: r.gen_range(0.2..=1.0),
                busy: r.gen_range(0.0..0.9),
                capacity: [6e6, 11e6, 24e6, 54e6][r.gen_range(0..4)],
                samples: [10, 10],
            };
            elp_link(&stats, &params).unwrap()
        });
        check(n, &edges);
    }
}

/// Exact rational costs, which makes equal-cost ties common.
pub fn rational_trials(count: usize, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..count {
        let n = rng.gen_range(2..=8);
        let edges = random_graph(&mut rng, n, |r| Ratio::<i64>::new(r.gen_range(1..=6), r.gen_range(1..=3)));
        check(n, &edges);
    }
}
