//! Distributed multi-robot task-and-motion planning in belief space.
//!
//! * [`worldmodel`]: map, collision and visibility queries, region sampling
//! * [`belief`]: EKF prediction/update for single and joint robot beliefs
//! * [`roadmap`]: PRM construction and belief-space motion costing
//! * [`taskplan`]: PDDL subset parser, grounding, optimal forward search
//! * [`tmp`]: semantic-attachment glue between task and motion layers
//! * [`scenario`]: JSON scenario files and the shipped corridor
//! * [`sim`]: scenario runs, Monte-Carlo studies, reports

pub mod belief;
pub mod cost;
pub mod rng;
pub mod roadmap;
pub mod scenario;
pub mod sim;
pub mod taskplan;
pub mod tmp;
pub mod worldmodel;
