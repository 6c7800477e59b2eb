#![allow(dead_code)]

pub mod crafted;
pub mod ledger;
pub mod mac;
pub mod routing;
pub mod sms;
