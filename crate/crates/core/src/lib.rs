//! Rule-guided synthesis of heterogeneous tabular data.

pub mod discovery;
pub mod error;
pub mod fixtures;
pub mod generation;
pub mod mds;
pub mod pipeline;
pub mod rules;
pub mod rundir;
pub mod table;
pub mod tree;

pub use discovery::{discover, DiscoveryConfig, DiscoveryResult};
pub use error::{Error, Result};
pub use generation::{ArmCandidate, BackendKind, GenerationConfig};
pub use mds::{MdsConfig, Selector};
pub use pipeline::{run_pipeline, RunConfig, RunReport, Stage, StageFailure};
pub use rules::{Dgr, Example};
pub use rundir::RunDir;
pub use table::{Record, RowId, Schema, SplitSpec, Table, Task, Value};
pub use tree::{ModelId, TreeHyper, TreeModel};
