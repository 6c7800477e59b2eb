mod common;

use common::sms;

#[test]
fn online_receiver_gets_exactly_one_copy() {
    sms::online_walk();
}

#[test]
fn all_acks_lost_fails_after_four_transmissions() {
    sms::all_acks_lost();
}

#[test]
fn offline_receiver_is_queued_once_and_flushed_once() {
    sms::offline_walk();
}

#[test]
fn duplicate_arrival_at_server_is_not_queued_twice() {
    sms::duplicate_arrival();
}
