pub mod envspec;
pub mod error;
pub mod harness;
pub mod limits;
pub mod ranmat;
pub mod rng;
pub mod sim;
pub mod special;
pub mod stats;
