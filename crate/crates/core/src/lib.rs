pub mod baselines;
pub mod cli;
pub mod cluster;
pub mod encoder;
pub mod graph;
pub mod metrics;
pub mod mi;
pub mod nn;
pub mod tensor;
pub mod trainer;
