//! Deterministic simulation of a crash-only, microrebootable component
//! server under an emulated client load, with its recovery manager.

pub mod app;
pub mod cluster;
pub mod detect;
pub mod faultlib;
pub mod recoverymgr;
pub mod runtime;
pub mod simcore;
pub mod statestore;
pub mod workload;
pub mod harness;
pub mod world;
