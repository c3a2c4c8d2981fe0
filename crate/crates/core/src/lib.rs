//! Recurrent-cell architecture search: cell graphs, a stacked-cell language
//! model trainer, a precomputed benchmark table and search algorithms that
//! run against it.

pub mod autodiff;
pub mod cell_graph;
pub mod corpus;
pub mod generator;
pub mod lm_trainer;
pub mod bench_table;
pub mod nas_env;
pub mod surrogate;
pub mod optimizers;
pub mod analytics;
