pub mod config;
pub mod dgg;
pub mod geograph;
pub mod masker;
pub mod model;
pub mod numerics;
pub mod pipeline;
pub mod sampler;
pub mod tasks;
