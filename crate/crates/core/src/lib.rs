pub mod dataset;
pub mod nn;
pub mod preprocess;
pub mod synthgen;
pub mod model;
pub mod losses;
pub mod trainer;
pub mod evalproto;
