//! Orchestration engine and evaluation harness for novel-view-augmented
//! spatial reasoning: plan a 6-DOF camera motion, synthesize the view
//! through a pluggable backend, verify it, reason over the enriched
//! evidence, judge the answer, and aggregate results — all runnable fully
//! offline against fixture-driven mocks.

pub mod backends;
pub mod benchmark;
pub mod config;
pub mod dataprep;
pub mod geometry;
pub mod imageio;
pub mod instructions;
pub mod judging;
pub mod pipeline;
pub mod report;
