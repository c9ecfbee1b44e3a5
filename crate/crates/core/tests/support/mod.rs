//! Checks shared by the property tests and the acceptance suite.
#![allow(dead_code)]

pub mod graph;
pub mod locker;
pub mod scoring;
