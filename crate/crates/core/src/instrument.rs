//! Load-time rewriting that routes field writes and allocations through the
//! `$Debug` hooks, guarded by `$Debug.enabled`.
//!
//! A `putfield C.f` becomes
//!
//! ```text
//!       getstatic $Debug.enabled
//!       ifeq Lplain
//!       dup2
//!       putfield C.f
//!       pop
//!       invokestatic $Debug.fieldWrite 1 C.f
//!       goto Lend
//! Lplain:
//!       putfield C.f
//! Lend:
//! ```
//!
//! and every `new C n` is followed by
//!
//! ```text
//!       getstatic $Debug.enabled
//!       ifeq Lskip
//!       invokestatic $Debug.objNew 1
//! Lskip:
//! ```
//!
//! `objNew` hands its argument back, so the stack is unchanged on both paths.
//! Branches that targeted a rewritten instruction now target the start of its
//! block.

use std::collections::BTreeMap;

use serde::Serialize;
use thiserror::Error;

use crate::qvm::{ClassId, FieldId, Instr, MethodId, Program};

pub const PUTFIELD_EXPANSION: usize = 7;
pub const NEW_EXPANSION: usize = 3;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum InstrumentError {
    #[error("program is already instrumented ({method} refers to $Debug)")]
    AlreadyInstrumented { method: String },
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct InstrumentationReport {
    pub putfield_sites: usize,
    pub new_sites: usize,
    pub original_instructions: usize,
    pub instrumented_instructions: usize,
    /// Per method: new pc of each original instruction (the start of its
    /// block when it was rewritten).
    #[serde(skip)]
    pub pc_map: BTreeMap<MethodId, Vec<usize>>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub enum SiteKind {
    FieldWrite(FieldId),
    Allocation(ClassId),
}

/// A rewritten location in an instrumented program. `pc` is the first
/// instruction of the block: the guard for field writes, the `new` itself for
/// allocations.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub struct Site {
    pub method: MethodId,
    pub pc: usize,
    pub kind: SiteKind,
}

pub fn instrument_program(
    program: &Program,
) -> Result<(Program, InstrumentationReport), InstrumentError> {
    if let Some((id, _)) = program
        .methods()
        .find(|(_, m)| m.code.iter().any(Instr::is_debug_intrinsic))
    {
        return Err(InstrumentError::AlreadyInstrumented {
            method: program.method_name(id),
        });
    }
    let mut out = program.clone();
    let mut report = InstrumentationReport {
        original_instructions: program.instruction_count(),
        ..Default::default()
    };
    let ids: Vec<MethodId> = program
        .methods()
        .filter(|(id, _)| !program.class(id.class).intrinsic)
        .map(|(id, _)| id)
        .collect();
    for id in ids {
        let code = &program.method(id).code;
        let mut map = Vec::with_capacity(code.len());
        let mut next = 0;
        for instr in code {
            map.push(next);
            next += 1 + match instr {
                Instr::PutField(_) => PUTFIELD_EXPANSION,
                Instr::New { .. } => NEW_EXPANSION,
                _ => 0,
            };
        }
        let mut rewritten = Vec::with_capacity(next);
        for &instr in code {
            let at = rewritten.len();
            match instr {
                Instr::PutField(f) => {
                    report.putfield_sites += 1;
                    rewritten.extend([
                        Instr::DebugEnabled,
                        Instr::IfEq(at + 7),
                        Instr::Dup2,
                        Instr::PutField(f),
                        Instr::Pop,
                        Instr::HookFieldWrite(f),
                        Instr::Goto(at + 8),
                        Instr::PutField(f),
                    ]);
                }
                Instr::New { .. } => {
                    report.new_sites += 1;
                    rewritten.extend([
                        instr,
                        Instr::DebugEnabled,
                        Instr::IfEq(at + 4),
                        Instr::HookObjNew,
                    ]);
                }
                other => rewritten.push(match other.branch_target() {
                    Some(t) => other.with_branch_target(map[t]),
                    None => other,
                }),
            }
        }
        out.method_mut(id).code = rewritten;
        report.pc_map.insert(id, map);
    }
    report.instrumented_instructions = out.instruction_count();
    Ok((out, report))
}

/// Locate every rewritten block in an instrumented program.
pub fn site_table(program: &Program) -> Vec<Site> {
    let mut sites = Vec::new();
    for (method, m) in program.methods() {
        let code = &m.code;
        for pc in 0..code.len() {
            let kind = match code[pc..] {
                [Instr::DebugEnabled, Instr::IfEq(t), Instr::Dup2, Instr::PutField(f), ..]
                    if t == pc + 7 =>
                {
                    SiteKind::FieldWrite(f)
                }
                [Instr::New { class, .. }, Instr::DebugEnabled, Instr::IfEq(t), Instr::HookObjNew, ..]
                    if t == pc + 4 =>
                {
                    SiteKind::Allocation(class)
                }
                _ => continue,
            };
            sites.push(Site { method, pc, kind });
        }
    }
    sites
}
