//! Control plane for Dataset resources: a typed Dataset model, an in-memory
//! cluster store with watch streams, the operator that materializes Datasets
//! into volume claims and secrets, the pod admission mutator, an S3 endpoint
//! prober with an in-process stub server, and a frequency-based cache
//! admission policy.

pub mod admission;
pub mod cachemgr;
pub mod model;
pub mod reconciler;
pub mod resources;
pub mod s3probe;
pub mod statestore;
