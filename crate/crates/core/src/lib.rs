pub mod autodiff;
pub mod bench;
pub mod graph_ops;
pub mod models;
pub mod physics;
pub mod synthgen;
pub mod temporal_graph;
pub mod trainer;
