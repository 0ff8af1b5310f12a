//! The QVM: values, linked programs, the QASM text format and the interpreter.

mod asm;
mod interp;
mod program;
mod value;

pub use asm::{load_program, render_instr, LoadError};
pub use interp::{
    Counters, Fault, FaultKind, GcReport, HookControl, HookHandler, NoHooks, PureCallError,
    PureReturn, StepOutcome, Trap, Vm, VmConfig, VmError, DEFAULT_GC_THRESHOLD,
};
pub use program::{
    ClassDef, ClassId, FieldDef, FieldId, Instr, MethodDef, MethodId, Program, StaticId, Symbol,
};
pub use value::{FieldKind, ObjId, Value};
