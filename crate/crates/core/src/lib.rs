//! Stream runtime verification with nested monitors and retroactive dynamic
//! parametrization.
//!
//! A [`Specification`] declares typed input streams and output streams defined
//! by expressions over them. [`validate`] checks it and compiles it into a
//! [`ValidatedSpec`], which a [`Monitor`] evaluates event by event.
//! [`run_offline`] evaluates the same specification over a whole trace and
//! serves as the reference the online engine is checked against.

pub mod builtins;
pub mod ddos;
pub mod dynparam;
pub mod engine;
pub mod error;
pub mod event;
pub mod log;
pub mod oracle;
pub mod registry;
pub mod spec;
pub mod value;

pub use engine::{
    run_nested, run_offline, FrozenMonitor, LogAttachment, Metrics, Monitor, MonitorError,
    MonitorState, OfflineRun, OutputValue, Slot, StepOutput, Verdict,
};
pub use error::EvalError;
pub use event::{Event, WireError};
pub use log::{AdapterProcess, FetchRequest, FileStore, Filter, InMemoryStore, LogError, LogStore, PastRetriever};
pub use registry::{FuncDef, FuncHandle, Registry, RegistryError, Signature};
pub use spec::{
    desugar, validate, validate_with, Diagnostic, Expr, InitSource, Initializer, Specification,
    ValidatedSpec, ValidationError,
};
pub use value::{Type, Value};
