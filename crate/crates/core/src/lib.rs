//! On-the-fly query-based debugging for a small stack VM.

pub mod bench;
pub mod engine;
pub mod fixtures;
pub mod instrument;
pub mod qlang;
pub mod qvm;
pub mod repl;
pub mod session;
