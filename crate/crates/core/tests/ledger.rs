mod common;

use common::ledger;

#[test]
fn conservation_over_ten_thousand_sequences() {
    ledger::conservation(10_000);
}

#[test]
fn admit_then_release_restores_float_ledger_bitwise() {
    ledger::admit_release_roundtrip();
}
