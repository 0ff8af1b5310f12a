//! Debug session: one instrumented program, its VM, the query engine, the
//! breakpoints and the event log.

use std::collections::BTreeSet;
use std::fmt;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;

use serde::Serialize;
use thiserror::Error;

use crate::engine::{
    Engine, EngineError, EngineOutput, EngineStats, PlanChoice, QueryId, ResultDelta, Tuple,
};
use crate::instrument::{
    instrument_program, site_table, InstrumentError, InstrumentationReport, Site,
};
use crate::qlang::{compile_query, PlanKind, QueryError};
use crate::qvm::{
    load_program, Counters, FieldId, HookControl, HookHandler, LoadError, MethodId, ObjId, Program,
    StepOutcome, Trap, Vm, VmConfig, VmError,
};

/// Instructions executed between checks for an interrupt request.
pub const SLICE: u64 = 10_000;

#[derive(Debug, Error)]
pub enum SessionError {
    #[error(transparent)]
    Load(#[from] LoadError),
    #[error(transparent)]
    Instrument(#[from] InstrumentError),
    #[error(transparent)]
    Vm(#[from] VmError),
    #[error(transparent)]
    Query(#[from] QueryError),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error("`{command}` is not allowed while {mode}")]
    InvalidMode { command: &'static str, mode: String },
    #[error("bad breakpoint `{0}`: expected Class.method:pc within the method")]
    BadBreakpoint(String),
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct BreakpointSite {
    pub method: MethodId,
    pub pc: usize,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum PauseReason {
    Breakpoint(BreakpointSite),
    QueryChange {
        query: QueryId,
        delta: ResultDelta,
    },
    UserInterrupt,
    /// A `step` command finished.
    Step,
    /// A query was removed because evaluating it failed hard.
    QueryFault {
        query: QueryId,
        message: String,
    },
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Mode {
    Idle,
    Running,
    Paused(PauseReason),
    Halted,
    Faulted(crate::qvm::Fault),
}

impl Mode {
    pub fn name(&self) -> &'static str {
        match self {
            Mode::Idle => "idle",
            Mode::Running => "running",
            Mode::Paused(_) => "paused",
            Mode::Halted => "halted",
            Mode::Faulted(_) => "faulted",
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// An object as shown to users: `Class@serial`.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub struct ObjRef {
    pub class: String,
    pub serial: u64,
}

impl fmt::Display for ObjRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}@{}", self.class, self.serial)
    }
}

pub type TupleRef = Vec<ObjRef>;

pub fn render_tuples(ts: &[TupleRef]) -> String {
    let parts: Vec<String> = ts
        .iter()
        .map(|t| {
            let inner: Vec<String> = t.iter().map(ToString::to_string).collect();
            format!("({})", inner.join(", "))
        })
        .collect();
    format!("[{}]", parts.join(", "))
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum LogEntry {
    QueryAdded {
        query: QueryId,
        text: String,
        plan: PlanKind,
        initial: Vec<TupleRef>,
    },
    QueryRemoved {
        query: QueryId,
    },
    Delta {
        query: QueryId,
        added: Vec<TupleRef>,
        removed: Vec<TupleRef>,
    },
    Paused {
        reason: String,
    },
    Output {
        text: String,
    },
    Halted,
    Faulted {
        fault: String,
    },
}

impl LogEntry {
    pub fn kind(&self) -> &'static str {
        match self {
            LogEntry::QueryAdded { .. } => "query-added",
            LogEntry::QueryRemoved { .. } => "query-removed",
            LogEntry::Delta { .. } => "delta",
            LogEntry::Paused { .. } => "paused",
            LogEntry::Output { .. } => "output",
            LogEntry::Halted => "halted",
            LogEntry::Faulted { .. } => "faulted",
        }
    }
}

/// One line of the event log, stamped with the program event counter.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct LogRecord {
    pub event: u64,
    #[serde(flatten)]
    pub entry: LogEntry,
}

impl fmt::Display for LogRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "#{} {}", self.event, self.entry.kind())?;
        match &self.entry {
            LogEntry::QueryAdded {
                query,
                text,
                plan,
                initial,
            } => write!(
                f,
                " q{query} {plan} {text} initial={}",
                render_tuples(initial)
            ),
            LogEntry::QueryRemoved { query } => write!(f, " q{query}"),
            LogEntry::Delta {
                query,
                added,
                removed,
            } => write!(
                f,
                " q{query} +{} -{}",
                render_tuples(added),
                render_tuples(removed)
            ),
            LogEntry::Paused { reason } => write!(f, " {reason}"),
            LogEntry::Output { text } => write!(f, " {text}"),
            LogEntry::Halted => Ok(()),
            LogEntry::Faulted { fault } => write!(f, " {fault}"),
        }
    }
}

#[derive(Clone, Debug, Default)]
pub struct SessionConfig {
    pub vm: VmConfig,
    /// Step budget for each method a constraint calls.
    pub method_budget: Option<u64>,
}

#[derive(Clone, Debug, Serialize)]
pub struct SessionStats {
    pub vm: Counters,
    pub engine: EngineStats,
    pub debugger_enabled: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct QueryInfo {
    pub id: QueryId,
    pub text: String,
    pub plan: PlanKind,
    pub stop_on_change: bool,
    pub result_count: usize,
}

/// Hook adapter that keeps program output and engine output in order.
struct Driver<'a> {
    engine: &'a mut Engine,
    log: &'a mut Vec<LogRecord>,
    output_seen: &'a mut usize,
    pending: &'a mut Vec<EngineOutput>,
}

impl Driver<'_> {
    fn drain_output(&mut self, vm: &Vm) {
        let event = vm.counters().events;
        for line in &vm.output()[*self.output_seen..] {
            self.log.push(LogRecord {
                event,
                entry: LogEntry::Output { text: line.clone() },
            });
        }
        *self.output_seen = vm.output().len();
    }

    fn after_hook(&mut self, vm: &Vm, control: HookControl) -> HookControl {
        let outputs = self.engine.take_outputs();
        if !outputs.is_empty() {
            self.drain_output(vm);
            for o in &outputs {
                self.log.push(record_output(vm, o));
            }
            self.pending.extend(outputs);
        }
        control
    }
}

impl HookHandler for Driver<'_> {
    fn field_write(&mut self, vm: &Vm, obj: ObjId, field: FieldId) -> HookControl {
        let c = self.engine.on_field_write(vm, obj, field);
        self.after_hook(vm, c)
    }

    fn object_new(&mut self, vm: &Vm, obj: ObjId) -> HookControl {
        let c = self.engine.track_new(vm, obj);
        self.after_hook(vm, c)
    }

    fn reclaimed(&mut self, _vm: &Vm, dead: &[ObjId]) {
        self.engine.sweep(dead);
    }
}

fn obj_ref(vm: &Vm, o: ObjId) -> ObjRef {
    ObjRef {
        class: vm
            .class_of(o)
            .map(|c| vm.program().class_name(c).to_string())
            .unwrap_or_else(|| "?".into()),
        serial: o.serial,
    }
}

pub fn tuple_refs(vm: &Vm, ts: &[Tuple]) -> Vec<TupleRef> {
    ts.iter()
        .map(|t| t.iter().map(|&o| obj_ref(vm, o)).collect())
        .collect()
}

fn record_output(vm: &Vm, o: &EngineOutput) -> LogRecord {
    match o {
        EngineOutput::Delta(d) => LogRecord {
            event: d.event,
            entry: LogEntry::Delta {
                query: d.query,
                added: tuple_refs(vm, &d.added),
                removed: tuple_refs(vm, &d.removed),
            },
        },
        EngineOutput::Fault(f) => LogRecord {
            event: f.event,
            entry: LogEntry::QueryRemoved { query: f.query },
        },
    }
}

pub struct Session {
    original: Arc<Program>,
    program: Arc<Program>,
    report: InstrumentationReport,
    sites: Vec<Site>,
    vm: Vm,
    engine: Engine,
    mode: Mode,
    forced: bool,
    breakpoints: BTreeSet<(MethodId, usize)>,
    log: Vec<LogRecord>,
    output_seen: usize,
    interrupt: Arc<AtomicBool>,
}

impl Session {
    /// Load, instrument and prepare `source` for execution at `Main.main`.
    pub fn attach(source: &str, config: SessionConfig) -> Result<Session, SessionError> {
        let original = load_program(source)?;
        let (instrumented, report) = instrument_program(&original)?;
        let program = Arc::new(instrumented);
        let vm = Vm::new(Arc::clone(&program), config.vm)?;
        let mut engine = Engine::new(Arc::clone(&program));
        if let Some(b) = config.method_budget {
            engine.set_method_budget(b);
        }
        Ok(Session {
            original: Arc::new(original),
            sites: site_table(&program),
            program,
            report,
            vm,
            engine,
            mode: Mode::Idle,
            forced: false,
            breakpoints: BTreeSet::new(),
            log: Vec::new(),
            output_seen: 0,
            interrupt: Arc::new(AtomicBool::new(false)),
        })
    }

    pub fn mode(&self) -> &Mode {
        &self.mode
    }

    pub fn vm(&self) -> &Vm {
        &self.vm
    }

    pub fn engine(&self) -> &Engine {
        &self.engine
    }

    pub fn program(&self) -> &Arc<Program> {
        &self.program
    }

    pub fn original_program(&self) -> &Arc<Program> {
        &self.original
    }

    pub fn instrumentation(&self) -> &InstrumentationReport {
        &self.report
    }

    pub fn sites(&self) -> &[Site] {
        &self.sites
    }

    pub fn log(&self) -> &[LogRecord] {
        &self.log
    }

    pub fn debugger_enabled(&self) -> bool {
        self.vm.debug_enabled()
    }

    pub fn stats(&self) -> SessionStats {
        SessionStats {
            vm: self.vm.counters().clone(),
            engine: self.engine.stats(),
            debugger_enabled: self.vm.debug_enabled(),
        }
    }

    /// Flag another thread can set to stop a running session at the next
    /// slice boundary.
    pub fn interrupt_handle(&self) -> Arc<AtomicBool> {
        Arc::clone(&self.interrupt)
    }

    fn require(&self, command: &'static str, ok: bool) -> Result<(), SessionError> {
        if ok {
            Ok(())
        } else {
            Err(SessionError::InvalidMode {
                command,
                mode: self.mode.name().to_string(),
            })
        }
    }

    fn push(&mut self, entry: LogEntry) {
        self.log.push(LogRecord {
            event: self.vm.counters().events,
            entry,
        });
    }

    fn sync_enabled(&mut self) {
        let want = self.forced || self.engine.has_queries();
        if want != self.vm.debug_enabled() {
            self.vm.set_debug_enabled(want);
            self.vm.resync_guard();
            if want {
                self.engine.backfill(&self.vm);
            }
        }
    }

    /// Keep the debugger enabled even without queries.
    pub fn force_enabled(&mut self, on: bool) {
        self.forced = on;
        self.sync_enabled();
    }

    pub fn add_query(
        &mut self,
        text: &str,
        stop_on_change: bool,
    ) -> Result<(QueryId, Vec<Tuple>), SessionError> {
        self.add_query_with(text, stop_on_change, PlanChoice::Auto)
    }

    pub fn add_query_with(
        &mut self,
        text: &str,
        stop_on_change: bool,
        choice: PlanChoice,
    ) -> Result<(QueryId, Vec<Tuple>), SessionError> {
        self.require(
            "add query",
            matches!(self.mode, Mode::Idle | Mode::Paused(_)),
        )?;
        let typed = compile_query(text, &self.program)?;
        let canonical = typed.text();
        let (id, initial) = self
            .engine
            .activate(&self.vm, typed, choice, stop_on_change)?;
        self.sync_enabled();
        let plan = self.engine.plan(id).expect("just added").kind();
        let initial_refs = tuple_refs(&self.vm, &initial);
        self.push(LogEntry::QueryAdded {
            query: id,
            text: canonical,
            plan,
            initial: initial_refs,
        });
        Ok((id, initial))
    }

    pub fn remove_query(&mut self, id: QueryId) -> Result<(), SessionError> {
        self.require("remove query", self.mode != Mode::Running)?;
        self.engine.deactivate(id)?;
        self.sync_enabled();
        self.push(LogEntry::QueryRemoved { query: id });
        Ok(())
    }

    pub fn set_stop_on_change(&mut self, id: QueryId, stop: bool) -> Result<(), SessionError> {
        Ok(self.engine.set_stop_on_change(id, stop)?)
    }

    pub fn results(&self, id: QueryId) -> Result<Vec<Tuple>, SessionError> {
        Ok(self.engine.results(id)?)
    }

    pub fn queries(&self) -> Vec<QueryInfo> {
        self.engine
            .query_ids()
            .into_iter()
            .map(|id| QueryInfo {
                id,
                text: self.engine.query(id).expect("listed").text(),
                plan: self.engine.plan(id).expect("listed").kind(),
                stop_on_change: self.engine.stop_on_change(id).expect("listed"),
                result_count: self.engine.results(id).map(|r| r.len()).unwrap_or(0),
            })
            .collect()
    }

    pub fn full_evaluate(&mut self, id: QueryId) -> Result<Vec<Tuple>, SessionError> {
        Ok(self.engine.full_evaluate(&self.vm, id)?)
    }

    /// Parse `Class.method:pc` against the instrumented program.
    pub fn resolve_breakpoint(&self, spec: &str) -> Result<BreakpointSite, SessionError> {
        let bad = || SessionError::BadBreakpoint(spec.to_string());
        let (name, pc) = spec.rsplit_once(':').ok_or_else(bad)?;
        let (class, method) = name.split_once('.').ok_or_else(bad)?;
        let pc: usize = pc.trim().parse().map_err(|_| bad())?;
        let cid = self.program.class_id(class).ok_or_else(bad)?;
        let mid = self.program.declared_method(cid, method).ok_or_else(bad)?;
        if pc >= self.program.method(mid).code.len() {
            return Err(bad());
        }
        Ok(BreakpointSite { method: mid, pc })
    }

    pub fn render_site(&self, site: &BreakpointSite) -> String {
        format!("{}:{}", self.program.method_name(site.method), site.pc)
    }

    pub fn add_breakpoint(&mut self, spec: &str) -> Result<BreakpointSite, SessionError> {
        let site = self.resolve_breakpoint(spec)?;
        self.breakpoints.insert((site.method, site.pc));
        self.vm.add_breakpoint(site.method, site.pc);
        Ok(site)
    }

    pub fn clear_breakpoint(&mut self, spec: &str) -> Result<bool, SessionError> {
        let site = self.resolve_breakpoint(spec)?;
        self.breakpoints.remove(&(site.method, site.pc));
        Ok(self.vm.remove_breakpoint(site.method, site.pc))
    }

    pub fn breakpoints(&self) -> Vec<BreakpointSite> {
        self.breakpoints
            .iter()
            .map(|&(method, pc)| BreakpointSite { method, pc })
            .collect()
    }

    /// `run`: start executing from the entry point.
    pub fn start(&mut self) -> Result<(), SessionError> {
        self.require("run", self.mode == Mode::Idle)?;
        self.mode = Mode::Running;
        Ok(())
    }

    /// `continue`: resume after a pause.
    pub fn resume(&mut self) -> Result<(), SessionError> {
        self.require("continue", matches!(self.mode, Mode::Paused(_)))?;
        self.mode = Mode::Running;
        Ok(())
    }

    /// Stop a running session at the current instruction boundary.
    pub fn interrupt(&mut self) -> Result<(), SessionError> {
        self.require("interrupt", self.mode == Mode::Running)?;
        self.pause(PauseReason::UserInterrupt);
        Ok(())
    }

    /// Run then drive until the session stops running.
    pub fn run(&mut self) -> Result<&Mode, SessionError> {
        self.start()?;
        self.drive();
        Ok(&self.mode)
    }

    pub fn continue_run(&mut self) -> Result<&Mode, SessionError> {
        self.resume()?;
        self.drive();
        Ok(&self.mode)
    }

    fn drive(&mut self) {
        while self.mode == Mode::Running {
            if self.interrupt.swap(false, Ordering::SeqCst) {
                self.pause(PauseReason::UserInterrupt);
                break;
            }
            self.advance(SLICE);
        }
    }

    /// Execute at most `budget` instructions if running. Used by callers that
    /// interleave execution with other work.
    pub fn advance(&mut self, budget: u64) -> &Mode {
        if self.mode != Mode::Running {
            return &self.mode;
        }
        let mut pending = Vec::new();
        let outcome = {
            let mut driver = Driver {
                engine: &mut self.engine,
                log: &mut self.log,
                output_seen: &mut self.output_seen,
                pending: &mut pending,
            };
            let r = self.vm.run_with(Some(budget), &mut driver);
            driver.drain_output(&self.vm);
            r
        };
        self.settle(outcome, pending, false);
        &self.mode
    }

    /// Execute exactly `n` instructions, ignoring breakpoints. Stops early if
    /// the program ends or a stopping query changes.
    pub fn step(&mut self, n: u64) -> Result<&Mode, SessionError> {
        self.require("step", matches!(self.mode, Mode::Idle | Mode::Paused(_)))?;
        self.mode = Mode::Running;
        let mut pending = Vec::new();
        let mut outcome = StepOutcome::Continue;
        {
            let mut driver = Driver {
                engine: &mut self.engine,
                log: &mut self.log,
                output_seen: &mut self.output_seen,
                pending: &mut pending,
            };
            for _ in 0..n {
                outcome = self.vm.step_with(&mut driver);
                if outcome != StepOutcome::Continue {
                    break;
                }
            }
            driver.drain_output(&self.vm);
        }
        self.settle(outcome, pending, true);
        Ok(&self.mode)
    }

    fn settle(&mut self, outcome: StepOutcome, pending: Vec<EngineOutput>, stepping: bool) {
        // Faulted queries were removed by the engine.
        self.sync_enabled();
        match outcome {
            StepOutcome::Continue => {
                if stepping {
                    self.pause(PauseReason::Step);
                }
            }
            StepOutcome::Halted => {
                self.mode = Mode::Halted;
                self.push(LogEntry::Halted);
            }
            StepOutcome::Fault(f) => {
                let text = format!(
                    "{} at {}:{} ({})",
                    f.kind,
                    self.program.method_name(f.method),
                    f.pc,
                    f.detail
                );
                self.mode = Mode::Faulted(f);
                self.push(LogEntry::Faulted { fault: text });
            }
            StepOutcome::Trap(Trap::Breakpoint { method, pc }) => {
                self.pause(PauseReason::Breakpoint(BreakpointSite { method, pc }));
            }
            StepOutcome::Trap(Trap::HookPause) => {
                let fault = pending.iter().find_map(|o| match o {
                    EngineOutput::Fault(f) => Some(PauseReason::QueryFault {
                        query: f.query,
                        message: f.message.clone(),
                    }),
                    _ => None,
                });
                let change = pending.iter().find_map(|o| match o {
                    EngineOutput::Delta(d) if self.engine.stop_on_change(d.query) == Some(true) => {
                        Some(PauseReason::QueryChange {
                            query: d.query,
                            delta: d.clone(),
                        })
                    }
                    _ => None,
                });
                match fault.or(change) {
                    Some(reason) => self.pause(reason),
                    None if stepping => self.pause(PauseReason::Step),
                    None => {}
                }
            }
        }
    }

    fn pause(&mut self, reason: PauseReason) {
        let text = self.describe_pause(&reason);
        self.mode = Mode::Paused(reason);
        self.push(LogEntry::Paused { reason: text });
    }

    pub fn describe_pause(&self, reason: &PauseReason) -> String {
        match reason {
            PauseReason::Breakpoint(site) => format!("breakpoint {}", self.render_site(site)),
            PauseReason::QueryChange { query, .. } => format!("query-change q{query}"),
            PauseReason::UserInterrupt => "interrupt".into(),
            PauseReason::Step => "step".into(),
            PauseReason::QueryFault { query, message } => {
                format!("query-fault q{query} {message}")
            }
        }
    }

    /// Event log as text, one record per line.
    pub fn log_text(&self) -> String {
        let mut s = String::new();
        for r in &self.log {
            s.push_str(&r.to_string());
            s.push('\n');
        }
        s
    }

    /// Text of the instrumented program.
    pub fn emit_instrumented(&self) -> String {
        self.program.to_qasm()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const SRC: &str = "\
class Main
  method main 0 3
    new P 0
    store 0
    new P 0
    store 1
    load 0
    const 5
    putfield P.x
    load 1
    const 5
    putfield P.x
    load 0
    const 1
    putfield P.x
    load 0
    getfield P.x
    print
    halt
  end
end
class P
  field x int
  field color int
end
";

    #[test]
    fn attach_then_run_matches_plain_run() {
        let mut s = Session::attach(SRC, SessionConfig::default()).unwrap();
        assert_eq!(*s.mode(), Mode::Idle);
        assert!(!s.debugger_enabled());
        assert_eq!(s.sites().len(), 5);
        assert_eq!(*s.run().unwrap(), Mode::Halted);
        let mut plain = Vm::new(Arc::new(load_program(SRC).unwrap()), VmConfig::default()).unwrap();
        plain.run(None);
        assert_eq!(s.vm().output(), plain.output());
    }

    #[test]
    fn attach_rejects_bad_source() {
        assert!(Session::attach(
            "class Main\n  method main 0 1\n    bogus\n  end\nend\n",
            SessionConfig::default()
        )
        .is_err());
    }

    #[test]
    fn query_change_pauses_right_after_the_write() {
        let mut s = Session::attach(SRC, SessionConfig::default()).unwrap();
        s.add_query("P a b. a.x == b.x && a != b && a.x > 0", true)
            .unwrap();
        assert!(s.debugger_enabled());
        let mode = s.run().unwrap().clone();
        let Mode::Paused(PauseReason::QueryChange { delta, .. }) = mode else {
            panic!("{mode:?}")
        };
        assert_eq!(delta.added.len(), 2);
        assert_eq!(delta.event, 4);
        assert_eq!(s.vm().counters().putfields, 2);
        let id = delta.query;
        assert_eq!(s.full_evaluate(id).unwrap(), s.results(id).unwrap());
        let mode = s.continue_run().unwrap().clone();
        let Mode::Paused(PauseReason::QueryChange { delta, .. }) = mode else {
            panic!("{mode:?}")
        };
        assert_eq!(delta.removed.len(), 2);
        assert_eq!(*s.continue_run().unwrap(), Mode::Halted);
    }

    #[test]
    fn step_counts_instructions_exactly() {
        let mut s = Session::attach(SRC, SessionConfig::default()).unwrap();
        s.step(1).unwrap();
        assert_eq!(s.vm().counters().instructions, 1);
        assert_eq!(*s.mode(), Mode::Paused(PauseReason::Step));
        s.step(5).unwrap();
        assert_eq!(s.vm().counters().instructions, 6);
    }

    #[test]
    fn breakpoint_pauses_before_instruction() {
        let mut s = Session::attach(SRC, SessionConfig::default()).unwrap();
        let site = s.add_breakpoint("Main.main:4").unwrap();
        let mode = s.run().unwrap().clone();
        assert_eq!(mode, Mode::Paused(PauseReason::Breakpoint(site.clone())));
        assert_eq!(s.vm().position(), Some((site.method, 4)));
        assert!(s.add_breakpoint("Main.main:999").is_err());
        assert!(s.add_breakpoint("Nope.main:1").is_err());
        assert_eq!(*s.continue_run().unwrap(), Mode::Halted);
    }

    #[test]
    fn invalid_transitions() {
        let mut s = Session::attach(SRC, SessionConfig::default()).unwrap();
        assert!(s.resume().is_err());
        assert!(s.interrupt().is_err());
        s.run().unwrap();
        assert!(s.run().is_err());
        assert!(s.add_query("P p. true", true).is_err());
        assert!(s.remove_query(42).is_err());
    }

    #[test]
    fn removing_last_query_disables_debugger() {
        let mut s = Session::attach(SRC, SessionConfig::default()).unwrap();
        let (id, _) = s.add_query("P p. p.x > 0", false).unwrap();
        s.step(3).unwrap();
        s.remove_query(id).unwrap();
        assert!(!s.debugger_enabled());
        let processed = s.stats().engine.processed;
        s.continue_run().unwrap();
        assert_eq!(s.stats().engine.processed, processed);
    }

    #[test]
    fn malformed_query_leaves_session_unchanged() {
        let mut s = Session::attach(SRC, SessionConfig::default()).unwrap();
        assert!(s.add_query("P p", true).is_err());
        assert!(s.add_query("Q p. true", true).is_err());
        assert!(s.queries().is_empty());
        assert!(s.log().is_empty());
        assert!(!s.debugger_enabled());
    }

    #[test]
    fn log_is_deterministic() {
        let script = |s: &mut Session| {
            s.add_query("P a b. a.x == b.x && a != b", true).unwrap();
            s.add_query("P p. p.x == 1", false).unwrap();
            s.run().unwrap();
            while matches!(s.mode(), Mode::Paused(_)) {
                s.continue_run().unwrap();
            }
            s.log_text()
        };
        let mut a = Session::attach(SRC, SessionConfig::default()).unwrap();
        let mut b = Session::attach(SRC, SessionConfig::default()).unwrap();
        let text = script(&mut a);
        assert_eq!(text, script(&mut b));
        assert!(
            text.contains("#4 delta q1 +[(P@1, P@2), (P@2, P@1)] -[]"),
            "{text}"
        );
        assert!(text.ends_with("#5 output 1\n#5 halted\n"), "{text}");
    }

    #[test]
    fn query_added_mid_guard_sees_the_write() {
        // Stop just after the fast-path guard has loaded `false`, then enable.
        let mut s = Session::attach(SRC, SessionConfig::default()).unwrap();
        let guard = s
            .sites()
            .iter()
            .find(|site| matches!(site.kind, crate::instrument::SiteKind::FieldWrite(_)))
            .unwrap()
            .pc;
        s.step(guard as u64 + 1).unwrap();
        let (id, _) = s.add_query("P p. p.x == 5", false).unwrap();
        s.run_to_end();
        assert_eq!(s.full_evaluate(id).unwrap(), s.results(id).unwrap());
    }

    impl Session {
        fn run_to_end(&mut self) {
            loop {
                match self.mode() {
                    Mode::Idle => {
                        self.run().unwrap();
                    }
                    Mode::Paused(_) => {
                        self.continue_run().unwrap();
                    }
                    _ => return,
                }
            }
        }
    }
}
