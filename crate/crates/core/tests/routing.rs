mod common;

use common::routing;

#[test]
fn elp_costs_match_exhaustive_search() {
    routing::elp_trials(200, 1);
}

#[test]
fn rational_costs_with_ties_match_exhaustive_search() {
    routing::rational_trials(200, 2);
}
