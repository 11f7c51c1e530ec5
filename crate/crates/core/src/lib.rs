pub mod autograd;
pub mod codec;
pub mod error;
pub mod flow;
pub mod gradcheck;
pub mod harness;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod params;
pub mod rng;
pub mod supervision;
pub mod tensor;
