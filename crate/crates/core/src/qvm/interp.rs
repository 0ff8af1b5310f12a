use std::collections::HashSet;
use std::fmt;
use std::sync::Arc;

use serde::Serialize;
use thiserror::Error;

use super::program::{ClassId, FieldId, Instr, MethodId, Program};
use super::value::{ObjId, Value};

pub const DEFAULT_GC_THRESHOLD: usize = 10_000;

#[derive(Clone, Debug)]
pub struct VmConfig {
    /// Allocations between automatic collections.
    pub gc_threshold: usize,
    pub max_call_depth: usize,
}

impl Default for VmConfig {
    fn default() -> Self {
        VmConfig {
            gc_threshold: DEFAULT_GC_THRESHOLD,
            max_call_depth: 4096,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
pub enum FaultKind {
    NullDereference,
    DivideByZero,
    StackUnderflow,
    TypeMismatch,
    StackOverflow,
}

impl fmt::Display for FaultKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            FaultKind::NullDereference => "NullDereference",
            FaultKind::DivideByZero => "DivideByZero",
            FaultKind::StackUnderflow => "StackUnderflow",
            FaultKind::TypeMismatch => "TypeMismatch",
            FaultKind::StackOverflow => "StackOverflow",
        };
        f.write_str(s)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Fault {
    pub kind: FaultKind,
    pub method: MethodId,
    pub pc: usize,
    pub detail: String,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Trap {
    /// Stopped before executing the instruction at `pc`.
    Breakpoint { method: MethodId, pc: usize },
    /// A hook handler asked to stop after the current instruction.
    HookPause,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum StepOutcome {
    Continue,
    Halted,
    Trap(Trap),
    Fault(Fault),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum HookControl {
    Continue,
    Pause,
}

/// Receiver of the `$Debug` intrinsics and of garbage-collection notices.
///
/// Handlers see the VM between instructions (read-only), after the effects of
/// the instruction that invoked them.
pub trait HookHandler {
    fn field_write(&mut self, _vm: &Vm, _obj: ObjId, _field: FieldId) -> HookControl {
        HookControl::Continue
    }

    fn object_new(&mut self, _vm: &Vm, _obj: ObjId) -> HookControl {
        HookControl::Continue
    }

    /// Objects reclaimed by a collection, each reported exactly once.
    fn reclaimed(&mut self, _vm: &Vm, _dead: &[ObjId]) {}
}

/// Handler that ignores everything.
pub struct NoHooks;

impl HookHandler for NoHooks {}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct Counters {
    /// Executed instructions, exactly one per step.
    pub instructions: u64,
    pub putfields: u64,
    /// Completed `new` instructions (constructor returned).
    pub allocations: u64,
    /// Program events: putfields plus completed allocations. Independent of
    /// instrumentation, which makes it the shared clock for comparing runs.
    pub events: u64,
    pub hook_calls: u64,
    pub gc_runs: u64,
    pub reclaimed: u64,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GcReport {
    pub reclaimed: usize,
    pub surviving: usize,
    pub reclaimed_ids: Vec<ObjId>,
}

#[derive(Debug, Error)]
pub enum VmError {
    #[error("program has no entry point `Main.main` with 0 parameters")]
    NoEntryPoint,
}

#[derive(Clone, Debug)]
struct Object {
    serial: u64,
    class: ClassId,
    fields: Vec<Value>,
    marked: bool,
}

#[derive(Clone, Debug, Default)]
struct Heap {
    cells: Vec<Option<Object>>,
    free: Vec<u32>,
    next_serial: u64,
    live: usize,
}

impl Heap {
    fn alloc(&mut self, class: ClassId, fields: Vec<Value>) -> ObjId {
        self.next_serial += 1;
        let obj = Object {
            serial: self.next_serial,
            class,
            fields,
            marked: false,
        };
        let slot = match self.free.pop() {
            Some(s) => {
                self.cells[s as usize] = Some(obj);
                s
            }
            None => {
                self.cells.push(Some(obj));
                (self.cells.len() - 1) as u32
            }
        };
        self.live += 1;
        ObjId {
            serial: self.next_serial,
            slot,
        }
    }

    fn get(&self, id: ObjId) -> Option<&Object> {
        match self.cells.get(id.slot as usize) {
            Some(Some(o)) if o.serial == id.serial => Some(o),
            _ => None,
        }
    }

    fn get_mut(&mut self, id: ObjId) -> Option<&mut Object> {
        match self.cells.get_mut(id.slot as usize) {
            Some(Some(o)) if o.serial == id.serial => Some(o),
            _ => None,
        }
    }
}

#[derive(Clone, Debug)]
struct Frame {
    method: MethodId,
    pc: usize,
    locals: Vec<Value>,
    stack: Vec<Value>,
    /// Set for `<init>` frames pushed by `new`.
    constructing: Option<ObjId>,
}

enum Flow {
    Next,
    Halt,
    Pause,
}

type Exec<T> = Result<T, (FaultKind, String)>;

fn fault<T>(kind: FaultKind, detail: impl Into<String>) -> Exec<T> {
    Err((kind, detail.into()))
}

fn pop(stack: &mut Vec<Value>) -> Exec<Value> {
    match stack.pop() {
        Some(v) => Ok(v),
        None => fault(FaultKind::StackUnderflow, "operand stack is empty"),
    }
}

fn int(v: Value) -> Exec<i64> {
    match v {
        Value::Int(i) => Ok(i),
        other => fault(
            FaultKind::TypeMismatch,
            format!("expected int, found {other:?}"),
        ),
    }
}

fn boolean(v: Value) -> Exec<bool> {
    match v {
        Value::Bool(b) => Ok(b),
        other => fault(
            FaultKind::TypeMismatch,
            format!("expected bool, found {other:?}"),
        ),
    }
}

/// Shared semantics of the stack-only operators.
fn apply_operator(instr: Instr, stack: &mut Vec<Value>) -> Exec<()> {
    let result = match instr {
        Instr::Neg => Value::Int(int(pop(stack)?)?.wrapping_neg()),
        Instr::Not => Value::Bool(!boolean(pop(stack)?)?),
        _ => {
            let b = pop(stack)?;
            let a = pop(stack)?;
            match instr {
                Instr::Add => Value::Int(int(a)?.wrapping_add(int(b)?)),
                Instr::Sub => Value::Int(int(a)?.wrapping_sub(int(b)?)),
                Instr::Mul => Value::Int(int(a)?.wrapping_mul(int(b)?)),
                Instr::Div | Instr::Mod => {
                    let (x, y) = (int(a)?, int(b)?);
                    if y == 0 {
                        return fault(FaultKind::DivideByZero, "division by zero");
                    }
                    Value::Int(if instr == Instr::Div {
                        x.wrapping_div(y)
                    } else {
                        x.wrapping_rem(y)
                    })
                }
                Instr::Eq | Instr::Ne => {
                    if !a.same_kind(b) {
                        return fault(
                            FaultKind::TypeMismatch,
                            format!("cannot compare {a:?} with {b:?}"),
                        );
                    }
                    Value::Bool((a == b) == (instr == Instr::Eq))
                }
                Instr::Lt => Value::Bool(int(a)? < int(b)?),
                Instr::Le => Value::Bool(int(a)? <= int(b)?),
                Instr::Gt => Value::Bool(int(a)? > int(b)?),
                Instr::Ge => Value::Bool(int(a)? >= int(b)?),
                Instr::And => Value::Bool(boolean(a)? & boolean(b)?),
                Instr::Or => Value::Bool(boolean(a)? | boolean(b)?),
                _ => unreachable!("not an operator: {instr:?}"),
            }
        }
    };
    stack.push(result);
    Ok(())
}

fn truthy(v: Value) -> Exec<bool> {
    match v.truthy() {
        Some(b) => Ok(b),
        None => fault(FaultKind::TypeMismatch, format!("cannot branch on {v:?}")),
    }
}

/// Why a side-effect-free call could not produce a value.
#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum PureCallError {
    #[error("method performs a side effect: {0}")]
    Impure(String),
    #[error("{kind}: {detail}")]
    Fault { kind: FaultKind, detail: String },
    #[error("method exceeded its step budget")]
    BudgetExceeded,
    #[error("method returned no value")]
    NoValue,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PureReturn {
    pub value: Value,
    pub steps: u64,
}

/// The virtual machine: loaded program, heap, statics and call stack.
pub struct Vm {
    program: Arc<Program>,
    config: VmConfig,
    heap: Heap,
    statics: Vec<Vec<Value>>,
    frames: Vec<Frame>,
    output: Vec<String>,
    counters: Counters,
    debug_enabled: bool,
    finished: Option<StepOutcome>,
    breakpoints: HashSet<(MethodId, usize)>,
    skip_breakpoint: bool,
    allocs_since_gc: usize,
}

impl Vm {
    pub fn new(program: Arc<Program>, config: VmConfig) -> Result<Vm, VmError> {
        let entry = program.entry_point().ok_or(VmError::NoEntryPoint)?;
        let statics = program
            .classes()
            .map(|(_, c)| c.statics.iter().map(|f| f.kind.default_value()).collect())
            .collect();
        let max_locals = program.method(entry).max_locals as usize;
        Ok(Vm {
            program,
            config,
            heap: Heap::default(),
            statics,
            frames: vec![Frame {
                method: entry,
                pc: 0,
                locals: vec![Value::Null; max_locals],
                stack: Vec::new(),
                constructing: None,
            }],
            output: Vec::new(),
            counters: Counters::default(),
            debug_enabled: false,
            finished: None,
            breakpoints: HashSet::new(),
            skip_breakpoint: false,
            allocs_since_gc: 0,
        })
    }

    pub fn program(&self) -> &Arc<Program> {
        &self.program
    }

    pub fn config(&self) -> &VmConfig {
        &self.config
    }

    pub fn counters(&self) -> &Counters {
        &self.counters
    }

    pub fn output(&self) -> &[String] {
        &self.output
    }

    /// Value of `$Debug.enabled`.
    pub fn debug_enabled(&self) -> bool {
        self.debug_enabled
    }

    pub fn set_debug_enabled(&mut self, enabled: bool) {
        self.debug_enabled = enabled;
    }

    /// Make a guard that is half-way through testing `$Debug.enabled` follow
    /// the flag's current value. Needed when the flag changes while the VM is
    /// stopped between the flag load and the branch, or just after the branch
    /// chose the plain `putfield`.
    pub fn resync_guard(&mut self) {
        let enabled = self.debug_enabled;
        let Some(frame) = self.frames.last_mut() else {
            return;
        };
        let code = &self.program.method(frame.method).code;
        let pc = frame.pc;
        if pc >= 1
            && code[pc - 1] == Instr::DebugEnabled
            && matches!(code.get(pc), Some(Instr::IfEq(_)))
        {
            if let Some(top) = frame.stack.last_mut() {
                *top = Value::Bool(enabled);
            }
        } else if enabled
            && pc >= 7
            && code[pc - 7] == Instr::DebugEnabled
            && code[pc - 6] == Instr::IfEq(pc)
            && matches!(code[pc], Instr::PutField(_))
        {
            // Take the hooked copy of the write instead (same stack shape).
            frame.pc = pc - 5;
        }
    }

    /// Objects whose constructor is still on the call stack.
    pub fn under_construction(&self) -> Vec<ObjId> {
        self.frames.iter().filter_map(|f| f.constructing).collect()
    }

    pub fn is_finished(&self) -> bool {
        self.finished.is_some()
    }

    pub fn finished(&self) -> Option<&StepOutcome> {
        self.finished.as_ref()
    }

    /// Method and pc of the next instruction to execute.
    pub fn position(&self) -> Option<(MethodId, usize)> {
        if self.finished.is_some() {
            return None;
        }
        self.frames.last().map(|f| (f.method, f.pc))
    }

    pub fn call_depth(&self) -> usize {
        self.frames.len()
    }

    /// Operand stack of the current frame, bottom first.
    pub fn stack(&self) -> &[Value] {
        self.frames
            .last()
            .map(|f| f.stack.as_slice())
            .unwrap_or(&[])
    }

    pub fn add_breakpoint(&mut self, method: MethodId, pc: usize) {
        self.breakpoints.insert((method, pc));
    }

    pub fn remove_breakpoint(&mut self, method: MethodId, pc: usize) -> bool {
        self.breakpoints.remove(&(method, pc))
    }

    pub fn is_live(&self, obj: ObjId) -> bool {
        self.heap.get(obj).is_some()
    }

    pub fn class_of(&self, obj: ObjId) -> Option<ClassId> {
        self.heap.get(obj).map(|o| o.class)
    }

    pub fn field(&self, obj: ObjId, field: FieldId) -> Option<Value> {
        self.heap
            .get(obj)
            .and_then(|o| o.fields.get(field.slot as usize).copied())
    }

    pub fn live_count(&self) -> usize {
        self.heap.live
    }

    /// All objects currently in the heap (including unreachable ones not yet
    /// collected), in heap-cell order.
    pub fn live_objects(&self) -> impl Iterator<Item = (ObjId, ClassId)> + '_ {
        self.heap.cells.iter().enumerate().filter_map(|(slot, c)| {
            c.as_ref().map(|o| {
                (
                    ObjId {
                        serial: o.serial,
                        slot: slot as u32,
                    },
                    o.class,
                )
            })
        })
    }

    /// References held directly by frames, constructors in progress and statics.
    pub fn roots(&self) -> Vec<ObjId> {
        let mut roots = Vec::new();
        for f in &self.frames {
            roots.extend(f.locals.iter().chain(&f.stack).filter_map(|v| v.as_obj()));
            roots.extend(f.constructing);
        }
        for s in &self.statics {
            roots.extend(s.iter().filter_map(|v| v.as_obj()));
        }
        roots
    }

    /// Reference fields of a live object.
    pub fn references(&self, obj: ObjId) -> Vec<ObjId> {
        self.heap
            .get(obj)
            .map(|o| o.fields.iter().filter_map(|v| v.as_obj()).collect())
            .unwrap_or_default()
    }

    pub fn static_value(&self, class: ClassId, index: u16) -> Option<Value> {
        self.statics
            .get(class.index())
            .and_then(|s| s.get(index as usize).copied())
    }

    /// `Class@serial`, or `?@serial` for a reclaimed object.
    pub fn render_obj(&self, obj: ObjId) -> String {
        match self.class_of(obj) {
            Some(c) => format!("{}@{}", self.program.class_name(c), obj.serial),
            None => format!("?@{}", obj.serial),
        }
    }

    pub fn render_value(&self, v: Value) -> String {
        match v {
            Value::Int(i) => i.to_string(),
            Value::Bool(b) => b.to_string(),
            Value::Null => "null".into(),
            Value::Ref(o) => self.render_obj(o),
        }
    }

    pub fn step(&mut self) -> StepOutcome {
        self.step_with(&mut NoHooks)
    }

    /// Execute exactly one instruction.
    pub fn step_with<H: HookHandler + ?Sized>(&mut self, hooks: &mut H) -> StepOutcome {
        if let Some(done) = &self.finished {
            return done.clone();
        }
        self.skip_breakpoint = false;
        let (method, pc) = match self.frames.last() {
            Some(f) => (f.method, f.pc),
            None => {
                self.finished = Some(StepOutcome::Halted);
                return StepOutcome::Halted;
            }
        };
        match self.exec(hooks) {
            Ok(Flow::Next) => StepOutcome::Continue,
            Ok(Flow::Pause) => StepOutcome::Trap(Trap::HookPause),
            Ok(Flow::Halt) => {
                self.finished = Some(StepOutcome::Halted);
                StepOutcome::Halted
            }
            Err((kind, detail)) => {
                let out = StepOutcome::Fault(Fault {
                    kind,
                    method,
                    pc,
                    detail,
                });
                self.finished = Some(out.clone());
                out
            }
        }
    }

    pub fn run(&mut self, budget: Option<u64>) -> StepOutcome {
        self.run_with(budget, &mut NoHooks)
    }

    /// Step until the program halts, faults, traps or `budget` instructions
    /// have executed. Breakpoints trap before their instruction; resuming from
    /// a breakpoint executes that instruction.
    pub fn run_with<H: HookHandler + ?Sized>(
        &mut self,
        budget: Option<u64>,
        hooks: &mut H,
    ) -> StepOutcome {
        let mut executed = 0u64;
        loop {
            if budget.is_some_and(|b| executed >= b) {
                return StepOutcome::Continue;
            }
            if !self.breakpoints.is_empty() && !self.skip_breakpoint {
                if let Some(pos) = self.position() {
                    if self.breakpoints.contains(&pos) {
                        self.skip_breakpoint = true;
                        return StepOutcome::Trap(Trap::Breakpoint {
                            method: pos.0,
                            pc: pos.1,
                        });
                    }
                }
            }
            let out = self.step_with(hooks);
            executed += 1;
            if out != StepOutcome::Continue {
                return out;
            }
        }
    }

    pub fn gc(&mut self) -> GcReport {
        self.gc_with(&mut NoHooks)
    }

    /// Stop-the-world mark-sweep from frames and statics.
    pub fn gc_with<H: HookHandler + ?Sized>(&mut self, hooks: &mut H) -> GcReport {
        let dead = self.collect();
        if !dead.is_empty() {
            hooks.reclaimed(self, &dead);
        }
        GcReport {
            reclaimed: dead.len(),
            surviving: self.heap.live,
            reclaimed_ids: dead,
        }
    }

    fn collect(&mut self) -> Vec<ObjId> {
        let mut work = self.roots();
        while let Some(id) = work.pop() {
            if let Some(o) = self.heap.get_mut(id) {
                if !o.marked {
                    o.marked = true;
                    work.extend(o.fields.iter().filter_map(|v| v.as_obj()));
                }
            }
        }
        let mut dead = Vec::new();
        for (slot, cell) in self.heap.cells.iter_mut().enumerate() {
            if let Some(o) = cell {
                if o.marked {
                    o.marked = false;
                } else {
                    dead.push(ObjId {
                        serial: o.serial,
                        slot: slot as u32,
                    });
                    *cell = None;
                    self.heap.free.push(slot as u32);
                }
            }
        }
        dead.sort();
        self.heap.live -= dead.len();
        self.counters.gc_runs += 1;
        self.counters.reclaimed += dead.len() as u64;
        self.allocs_since_gc = 0;
        dead
    }

    fn exec<H: HookHandler + ?Sized>(&mut self, hooks: &mut H) -> Exec<Flow> {
        let depth = self.frames.len();
        let frame = self.frames.last_mut().expect("caller checked");
        let instr = self.program.method(frame.method).code[frame.pc];
        frame.pc += 1;
        self.counters.instructions += 1;
        let stack = &mut frame.stack;
        match instr {
            Instr::Const(v) => stack.push(v),
            Instr::Load(i) => stack.push(frame.locals[i as usize]),
            Instr::Store(i) => frame.locals[i as usize] = pop(stack)?,
            Instr::Dup => match stack.last() {
                Some(&v) => stack.push(v),
                None => return fault(FaultKind::StackUnderflow, "dup on empty stack"),
            },
            Instr::Dup2 => {
                let n = stack.len();
                if n < 2 {
                    return fault(FaultKind::StackUnderflow, "dup2 needs two values");
                }
                let (a, b) = (stack[n - 2], stack[n - 1]);
                stack.push(a);
                stack.push(b);
            }
            Instr::Pop => {
                pop(stack)?;
            }
            Instr::Add
            | Instr::Sub
            | Instr::Mul
            | Instr::Div
            | Instr::Mod
            | Instr::Neg
            | Instr::Eq
            | Instr::Ne
            | Instr::Lt
            | Instr::Le
            | Instr::Gt
            | Instr::Ge
            | Instr::And
            | Instr::Or
            | Instr::Not => apply_operator(instr, stack)?,
            Instr::IfEq(t) => {
                if !truthy(pop(stack)?)? {
                    frame.pc = t;
                }
            }
            Instr::IfNe(t) => {
                if truthy(pop(stack)?)? {
                    frame.pc = t;
                }
            }
            Instr::Goto(t) => frame.pc = t,
            Instr::GetField(f) => {
                let target = pop(stack)?;
                let obj = self.receiver(target, f.class)?;
                let v = self.heap.get(obj).expect("receiver is live").fields[f.slot as usize];
                self.frames.last_mut().expect("frame").stack.push(v);
            }
            Instr::PutField(f) => {
                let v = pop(stack)?;
                let target = pop(stack)?;
                let obj = self.receiver(target, f.class)?;
                let kind = self.program.class(f.class).layout[f.slot as usize];
                if !kind.admits(v) {
                    return fault(
                        FaultKind::TypeMismatch,
                        format!("{} cannot hold {v:?}", self.program.field_name(f)),
                    );
                }
                self.heap.get_mut(obj).expect("receiver is live").fields[f.slot as usize] = v;
                self.counters.putfields += 1;
                self.counters.events += 1;
            }
            Instr::GetStatic(s) => stack.push(self.statics[s.class.index()][s.index as usize]),
            Instr::PutStatic(s) => {
                let v = pop(stack)?;
                if !self.program.static_def(s).kind.admits(v) {
                    return fault(FaultKind::TypeMismatch, format!("static cannot hold {v:?}"));
                }
                self.statics[s.class.index()][s.index as usize] = v;
            }
            Instr::Print => {
                let v = pop(stack)?;
                let text = self.render_value(v);
                self.output.push(text);
            }
            Instr::Halt => return Ok(Flow::Halt),
            Instr::DebugEnabled => stack.push(Value::Bool(self.debug_enabled)),
            Instr::Return | Instr::ReturnV => {
                let ret = if instr == Instr::ReturnV {
                    Some(pop(stack)?)
                } else {
                    None
                };
                let done = self.frames.pop().expect("frame");
                let Some(caller) = self.frames.last_mut() else {
                    return Ok(Flow::Halt);
                };
                if let Some(obj) = done.constructing {
                    caller.stack.push(Value::Ref(obj));
                    self.counters.allocations += 1;
                    self.counters.events += 1;
                } else if let Some(v) = ret {
                    caller.stack.push(v);
                }
            }
            Instr::New { class, argc } => {
                if stack.len() < argc as usize {
                    return fault(FaultKind::StackUnderflow, "missing constructor arguments");
                }
                if depth >= self.config.max_call_depth {
                    return fault(FaultKind::StackOverflow, "call depth limit reached");
                }
                if self.allocs_since_gc >= self.config.gc_threshold {
                    let dead = self.collect();
                    if !dead.is_empty() {
                        hooks.reclaimed(self, &dead);
                    }
                }
                let program = Arc::clone(&self.program);
                let layout = &program.class(class).layout;
                let obj = self
                    .heap
                    .alloc(class, layout.iter().map(|k| k.default_value()).collect());
                self.allocs_since_gc += 1;
                let init = program
                    .declared_method(class, "<init>")
                    .expect("every class has <init>");
                let stack = &mut self.frames.last_mut().expect("frame").stack;
                let args = stack.split_off(stack.len() - argc as usize);
                let mut locals = vec![Value::Null; program.method(init).max_locals as usize];
                locals[0] = Value::Ref(obj);
                locals[1..=args.len()].copy_from_slice(&args);
                self.frames.push(Frame {
                    method: init,
                    pc: 0,
                    locals,
                    stack: Vec::new(),
                    constructing: Some(obj),
                });
            }
            Instr::Invoke { method, argc } | Instr::InvokeStatic { method, argc } => {
                let virtual_call = matches!(instr, Instr::Invoke { .. });
                let needed = argc as usize + usize::from(virtual_call);
                if stack.len() < needed {
                    return fault(FaultKind::StackUnderflow, "missing call arguments");
                }
                if depth >= self.config.max_call_depth {
                    return fault(FaultKind::StackOverflow, "call depth limit reached");
                }
                let args = stack.split_off(stack.len() - needed);
                let target = if virtual_call {
                    let recv = self.receiver(args[0], method.class)?;
                    self.dispatch(recv, method)
                } else {
                    method
                };
                let mut locals = vec![Value::Null; self.program.method(target).max_locals as usize];
                locals[..args.len()].copy_from_slice(&args);
                self.frames.push(Frame {
                    method: target,
                    pc: 0,
                    locals,
                    stack: Vec::new(),
                    constructing: None,
                });
            }
            Instr::HookFieldWrite(f) => {
                let obj = match pop(stack)? {
                    Value::Ref(o) => o,
                    other => {
                        return fault(
                            FaultKind::TypeMismatch,
                            format!("fieldWrite expects an object, found {other:?}"),
                        )
                    }
                };
                self.counters.hook_calls += 1;
                if hooks.field_write(self, obj, f) == HookControl::Pause {
                    return Ok(Flow::Pause);
                }
            }
            Instr::HookObjNew => {
                let obj = match stack.last() {
                    Some(Value::Ref(o)) => *o,
                    other => {
                        return fault(
                            FaultKind::TypeMismatch,
                            format!("objNew expects an object, found {other:?}"),
                        )
                    }
                };
                self.counters.hook_calls += 1;
                if hooks.object_new(self, obj) == HookControl::Pause {
                    return Ok(Flow::Pause);
                }
            }
        }
        Ok(Flow::Next)
    }

    /// Check that `v` is a live object of `class` (or a subclass).
    fn receiver(&self, v: Value, class: ClassId) -> Exec<ObjId> {
        match v {
            Value::Null => fault(FaultKind::NullDereference, "null receiver"),
            Value::Ref(o) => {
                let actual = self.heap.get(o).expect("strong references are live").class;
                if self.program.is_subclass_of(actual, class) {
                    Ok(o)
                } else {
                    fault(
                        FaultKind::TypeMismatch,
                        format!(
                            "{} is not a {}",
                            self.program.class_name(actual),
                            self.program.class_name(class)
                        ),
                    )
                }
            }
            other => fault(
                FaultKind::TypeMismatch,
                format!("expected an object, found {other:?}"),
            ),
        }
    }

    fn dispatch(&self, recv: ObjId, method: MethodId) -> MethodId {
        let m = self.program.method(method);
        if m.name == "<init>" {
            return method;
        }
        let class = self.heap.get(recv).expect("receiver is live").class;
        self.program
            .dispatch(class, m.symbol)
            .expect("subclass vtables contain inherited methods")
    }

    /// Invoke `method` on `recv` without mutating the VM. Any field or static
    /// write, allocation, output or debugger call is refused as impure.
    pub fn call_pure(
        &self,
        recv: ObjId,
        method: MethodId,
        args: &[Value],
        budget: u64,
    ) -> Result<PureReturn, PureCallError> {
        struct PFrame {
            method: MethodId,
            pc: usize,
            locals: Vec<Value>,
            stack: Vec<Value>,
        }
        let lift = |(kind, detail): (FaultKind, String)| PureCallError::Fault { kind, detail };
        let recv = self
            .receiver(Value::Ref(recv), method.class)
            .map_err(lift)?;
        let target = self.dispatch(recv, method);
        let mut locals = vec![Value::Null; self.program.method(target).max_locals as usize];
        locals[0] = Value::Ref(recv);
        locals[1..=args.len()].copy_from_slice(args);
        let mut frames = vec![PFrame {
            method: target,
            pc: 0,
            locals,
            stack: Vec::new(),
        }];
        let mut steps = 0u64;
        loop {
            if steps >= budget {
                return Err(PureCallError::BudgetExceeded);
            }
            steps += 1;
            let depth = frames.len();
            let frame = frames.last_mut().expect("non-empty");
            let instr = self.program.method(frame.method).code[frame.pc];
            frame.pc += 1;
            let stack = &mut frame.stack;
            let impure = |what: &str| Err(PureCallError::Impure(what.to_string()));
            match instr {
                Instr::Const(v) => stack.push(v),
                Instr::Load(i) => stack.push(frame.locals[i as usize]),
                Instr::Store(i) => frame.locals[i as usize] = pop(stack).map_err(lift)?,
                Instr::Dup | Instr::Dup2 | Instr::Pop => {
                    let n = stack.len();
                    let need = if instr == Instr::Dup2 { 2 } else { 1 };
                    if n < need {
                        return Err(lift((FaultKind::StackUnderflow, "stack underflow".into())));
                    }
                    match instr {
                        Instr::Dup => stack.push(stack[n - 1]),
                        Instr::Dup2 => {
                            stack.push(stack[n - 2]);
                            stack.push(stack[n - 2]);
                        }
                        _ => {
                            stack.pop();
                        }
                    }
                }
                Instr::Add
                | Instr::Sub
                | Instr::Mul
                | Instr::Div
                | Instr::Mod
                | Instr::Neg
                | Instr::Eq
                | Instr::Ne
                | Instr::Lt
                | Instr::Le
                | Instr::Gt
                | Instr::Ge
                | Instr::And
                | Instr::Or
                | Instr::Not => apply_operator(instr, stack).map_err(lift)?,
                Instr::IfEq(t) | Instr::IfNe(t) => {
                    let v = truthy(pop(stack).map_err(lift)?).map_err(lift)?;
                    if v == matches!(instr, Instr::IfNe(_)) {
                        frame.pc = t;
                    }
                }
                Instr::Goto(t) => frame.pc = t,
                Instr::GetField(f) => {
                    let obj = self
                        .receiver(pop(stack).map_err(lift)?, f.class)
                        .map_err(lift)?;
                    stack.push(self.heap.get(obj).expect("live").fields[f.slot as usize]);
                }
                Instr::GetStatic(s) => stack.push(self.statics[s.class.index()][s.index as usize]),
                Instr::DebugEnabled => stack.push(Value::Bool(self.debug_enabled)),
                Instr::PutField(f) => {
                    return impure(&format!("putfield {}", self.program.field_name(f)))
                }
                Instr::PutStatic(_) => return impure("putstatic"),
                Instr::New { .. } => return impure("new"),
                Instr::Print => return impure("print"),
                Instr::Halt => return impure("halt"),
                Instr::HookFieldWrite(_) | Instr::HookObjNew => return impure("debugger call"),
                Instr::Invoke { method, argc } | Instr::InvokeStatic { method, argc } => {
                    let virtual_call = matches!(instr, Instr::Invoke { .. });
                    let needed = argc as usize + usize::from(virtual_call);
                    if stack.len() < needed {
                        return Err(lift((
                            FaultKind::StackUnderflow,
                            "missing arguments".into(),
                        )));
                    }
                    if depth >= self.config.max_call_depth {
                        return Err(lift((FaultKind::StackOverflow, "call depth".into())));
                    }
                    let args = stack.split_off(stack.len() - needed);
                    let target = if virtual_call {
                        let r = self.receiver(args[0], method.class).map_err(lift)?;
                        self.dispatch(r, method)
                    } else {
                        method
                    };
                    let mut locals =
                        vec![Value::Null; self.program.method(target).max_locals as usize];
                    locals[..args.len()].copy_from_slice(&args);
                    frames.push(PFrame {
                        method: target,
                        pc: 0,
                        locals,
                        stack: Vec::new(),
                    });
                }
                Instr::Return | Instr::ReturnV => {
                    let ret = if instr == Instr::ReturnV {
                        Some(pop(stack).map_err(lift)?)
                    } else {
                        None
                    };
                    frames.pop();
                    match (frames.last_mut(), ret) {
                        (None, Some(value)) => return Ok(PureReturn { value, steps }),
                        (None, None) => return Err(PureCallError::NoValue),
                        (Some(caller), Some(v)) => caller.stack.push(v),
                        (Some(_), None) => {}
                    }
                }
            }
        }
    }
}
