//! Operator surfaces for regression test selection: the `rts` command line
//! and the HTTP service behind the review UI. All numbers come from
//! `rts_core`; this crate only parses, routes and renders.

pub mod cli;
pub mod config;
pub mod service;
