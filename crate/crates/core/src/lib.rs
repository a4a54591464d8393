//! Omnidirectional scene-graph navigation stack: panoramic label fusion,
//! a five-layer scene graph with topological room discovery, agent-centric
//! octant views with tiered prompt serialisation, and an actor-critic
//! navigation loop over pluggable language-model backends.

pub mod chat;
pub mod dsg;
pub mod fusion;
pub mod geometry;
pub mod navsim;
pub mod pipeline;
pub mod reasoning;
pub mod registry;
pub mod scenegen;
pub mod topology;
pub mod view;
