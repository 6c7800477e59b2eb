//! Admission ledger conservation over random admit/release sequences, checked
//! against an exact rational oracle.

use std::collections::BTreeMap;

use meshsim::qos::{Admission, AdmissionLedger, ContentionMap, FlowId};
use meshsim::topology::LinkId;
use num_rational::Ratio;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Q = Ratio<i64>;

const LINKS: u32 = 6;

/// Two overlapping domains plus an isolated link.
fn map() -> ContentionMap {
    let d = |ls: &[u32]| ls.iter().map(|&l| LinkId(l)).collect::<Vec<_>>();
    ContentionMap::from_members(vec![
        d(&[0, 1, 2]),
        d(&[0, 1, 2, 3]),
        d(&[1, 2, 3, 4]),
        d(&[2, 3, 4]),
        d(&[3, 4]),
        d(&[5]),
    ])
}

pub fn conservation(sequences: usize) {
    let map = map();
    let caps = [1i64, 2, 5, 10];
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let (mut admitted, mut rejected) = (0u32, 0u32);
    for _ in 0..sequences {
        let mut exact = AdmissionLedger::<Q>::new(Q::new(17, 20), Q::new(4, 5));
        let mut float = AdmissionLedger::<f64>::new(0.85, 0.8);
        let mut live: BTreeMap<FlowId, BTreeMap<LinkId, Q>> = BTreeMap::new();
        let mut next = 0u64;
        for _ in 0..rng.gen_range(1..30) {
            if live.is_empty() || rng.gen_bool(0.6) {
                let flow = FlowId(next);
                next += 1;
                let path: Vec<(LinkId, i64)> = (0..rng.gen_range(1..=3))
                    .map(|_| (LinkId(rng.gen_range(0..LINKS)), caps[rng.gen_range(0..caps.len())]))
                    .collect();
                // Demand in units of 100 kb/s; capacities in Mb/s.
                let demand = rng.gen_range(1..=20i64);
                let qpath: Vec<(LinkId, Q)> = path.iter().map(|&(l, c)| (l, Q::from_integer(c * 10))).collect();
                let fpath: Vec<(LinkId, f64)> = path.iter().map(|&(l, c)| (l, c as f64 * 1e6)).collect();
                let zero = Q::from_integer(0);
                match exact.admit(flow, Q::from_integer(demand), &qpath, &map, |_| zero).unwrap() {
                    Admission::Admit(res) => {
                        admitted += 1;
                        let mut inc: BTreeMap<LinkId, Q> = BTreeMap::new();
                        for &(l, c) in &qpath {
                            let share = Q::from_integer(demand) / (c * Q::new(4, 5));
                            for d in (0..LINKS).map(LinkId).filter(|d| map.domain(*d).contains(&l)) {
                                *inc.entry(d).or_insert(zero) += share;
                            }
                        }
                        assert_eq!(res.increments, inc);
                        live.insert(flow, inc);
                    }
                    Admission::Reject { .. } => rejected += 1,
                }
                float.admit(flow, demand as f64 * 1e5, &fpath, &map, |_| 0.0).unwrap();
            } else {
                let flow = *live.keys().nth(rng.gen_range(0..live.len())).unwrap();
                live.remove(&flow);
                exact.release(flow).unwrap();
                // The float ledger may have decided differently at the limit.
                let _ = float.release(flow);
            }
            for d in (0..LINKS).map(LinkId) {
                let oracle: Q = live.values().filter_map(|inc| inc.get(&d)).copied().sum();
                assert_eq!(exact.committed(d), oracle);
            }
            assert!(exact.is_conserved() && exact.within_limit());
            assert!(float.is_conserved() && float.within_limit());
        }
        for flow in live.keys() {
            exact.release(*flow).unwrap();
        }
        assert!(exact.committed_domains().is_empty());
    }
    assert!(admitted as usize > sequences && rejected as usize > sequences / 10, "{admitted} {rejected}");
}

pub fn admit_release_roundtrip() {
    let map = map();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..1000 {
        let mut l = AdmissionLedger::<f64>::new(0.85, 0.8);
        for i in 0..rng.gen_range(0..5u64) {
            let path = [(LinkId(rng.gen_range(0..LINKS)), 54e6)];
            l.admit(FlowId(i), rng.gen_range(1e4..5e6), &path, &map, |_| 0.0).unwrap();
        }
        let before = l.clone();
        let path = [(LinkId(rng.gen_range(0..LINKS)), 11e6), (LinkId(rng.gen_range(0..LINKS)), 54e6)];
        if l.admit(FlowId(99), 0.3e6, &path, &map, |_| 0.0).unwrap().is_admit() {
            l.release(FlowId(99)).unwrap();
        }
        assert_eq!(l, before);
    }
}
