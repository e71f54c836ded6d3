//! Independent reference implementations used by the test suites.
#![allow(dead_code)]

pub mod arclen;
pub mod los;
pub mod metrics;
