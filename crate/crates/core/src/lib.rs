pub mod atlas;
pub mod cli;
pub mod clinical;
pub mod dbm;
pub mod error;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod pswm;
pub mod seed;
pub mod volume;
pub mod pipeline;
pub mod synthcohort;
