//! Overhead measurement across debugger configurations.
//!
//! Each scenario runs under up to five tiers. Instruction counts are exact and
//! deterministic; wall times are medians over repetitions.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::engine::{Engine, EngineError, EngineStats, PlanChoice};
use crate::fixtures::Fixture;
use crate::instrument::{instrument_program, InstrumentError};
use crate::qlang::{compile_query, PlanKind, QueryError};
use crate::qvm::{load_program, LoadError, Program, StepOutcome, Vm, VmConfig, VmError};

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("unknown scenario `{0}`")]
    UnknownScenario(String),
    #[error("unknown tier `{0}`")]
    UnknownTier(String),
    #[error(transparent)]
    Load(#[from] LoadError),
    #[error(transparent)]
    Instrument(#[from] InstrumentError),
    #[error(transparent)]
    Query(#[from] QueryError),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Vm(#[from] VmError),
    #[error("{scenario} under {tier} did not halt: {outcome}")]
    DidNotHalt {
        scenario: String,
        tier: Tier,
        outcome: String,
    },
    #[error("{scenario} under {tier} printed different output than the baseline")]
    OutputMismatch { scenario: String, tier: Tier },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Tier {
    /// Uninstrumented program.
    Baseline,
    /// Instrumented program, debugger off: every site takes the fast path.
    InstrumentedDisabled,
    /// Debugger on but no object belongs to any query domain.
    EnabledNoDomain,
    /// The scenario's query is active from the first instruction.
    QueryActive,
    /// As `QueryActive`, with the planner forced to a nested-loop join.
    QueryActiveNested,
}

impl Tier {
    pub const ALL: [Tier; 5] = [
        Tier::Baseline,
        Tier::InstrumentedDisabled,
        Tier::EnabledNoDomain,
        Tier::QueryActive,
        Tier::QueryActiveNested,
    ];

    /// The four tiers of the overhead table.
    pub const STANDARD: [Tier; 4] = [
        Tier::Baseline,
        Tier::InstrumentedDisabled,
        Tier::EnabledNoDomain,
        Tier::QueryActive,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Tier::Baseline => "baseline",
            Tier::InstrumentedDisabled => "instrumented-disabled",
            Tier::EnabledNoDomain => "enabled-no-domain",
            Tier::QueryActive => "query-active",
            Tier::QueryActiveNested => "query-active-nested",
        }
    }
}

impl fmt::Display for Tier {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Tier {
    type Err = BenchError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Tier::ALL
            .into_iter()
            .find(|t| t.name() == s)
            .ok_or_else(|| BenchError::UnknownTier(s.to_string()))
    }
}

#[derive(Clone, Debug)]
pub struct Scenario {
    pub name: String,
    pub source: String,
    pub query: String,
}

impl Scenario {
    /// The three overhead-table scenarios.
    pub const STANDARD: [&'static str; 3] = ["micro", "molecules", "astshare"];

    pub fn from_fixture(f: &Fixture) -> Scenario {
        Scenario {
            name: f.name.to_string(),
            source: f.source.clone(),
            query: f.query.to_string(),
        }
    }

    /// Any standard fixture by name.
    pub fn named(name: &str) -> Result<Scenario, BenchError> {
        Fixture::by_name(name)
            .map(|f| Scenario::from_fixture(&f))
            .ok_or_else(|| BenchError::UnknownScenario(name.to_string()))
    }
}

/// One (scenario, tier) measurement.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub scenario: String,
    pub tier: Tier,
    pub plan: Option<PlanKind>,
    pub reps: usize,
    pub wall_ms_median: f64,
    pub wall_ms_min: f64,
    pub wall_ms_max: f64,
    /// VM instructions executed.
    pub instructions: u64,
    /// Instructions spent inside methods called by constraints.
    pub method_instructions: u64,
    /// `instructions + method_instructions`.
    pub cost: u64,
    pub program_events: u64,
    pub hook_events: u64,
    pub constraint_evals: u64,
    pub processed: u64,
    pub filtered: u64,
    pub rejected: u64,
    pub time_slowdown: f64,
    pub instr_slowdown: f64,
    /// Program events per second of baseline execution.
    pub event_frequency: f64,
}

#[derive(Clone)]
struct RunResult {
    wall_ms: f64,
    instructions: u64,
    events: u64,
    hook_calls: u64,
    output: Vec<String>,
    engine: EngineStats,
    plan: Option<PlanKind>,
}

struct Prepared {
    original: Arc<Program>,
    instrumented: Arc<Program>,
}

fn prepare(s: &Scenario) -> Result<Prepared, BenchError> {
    let original = load_program(&s.source)?;
    let (instrumented, _) = instrument_program(&original)?;
    // Fail early on a bad query.
    compile_query(&s.query, &instrumented)?;
    Ok(Prepared {
        original: Arc::new(original),
        instrumented: Arc::new(instrumented),
    })
}

fn run_once(
    s: &Scenario,
    p: &Prepared,
    tier: Tier,
    config: &VmConfig,
) -> Result<RunResult, BenchError> {
    let program = match tier {
        Tier::Baseline => Arc::clone(&p.original),
        _ => Arc::clone(&p.instrumented),
    };
    let mut vm = Vm::new(Arc::clone(&program), config.clone())?;
    let mut engine = Engine::new(Arc::clone(&program));
    let mut plan = None;
    let start = Instant::now();
    let outcome = match tier {
        Tier::Baseline | Tier::InstrumentedDisabled => vm.run(None),
        Tier::EnabledNoDomain => {
            vm.set_debug_enabled(true);
            vm.run_with(None, &mut engine)
        }
        Tier::QueryActive | Tier::QueryActiveNested => {
            let choice = if tier == Tier::QueryActive {
                PlanChoice::Auto
            } else {
                PlanChoice::ForceNested
            };
            let typed = compile_query(&s.query, &program)?;
            let (id, _) = engine.activate(&vm, typed, choice, false)?;
            plan = engine.plan(id).map(|p| p.kind());
            vm.set_debug_enabled(true);
            vm.run_with(None, &mut engine)
        }
    };
    let wall_ms = start.elapsed().as_secs_f64() * 1e3;
    if outcome != StepOutcome::Halted {
        return Err(BenchError::DidNotHalt {
            scenario: s.name.clone(),
            tier,
            outcome: format!("{outcome:?}"),
        });
    }
    let c = vm.counters();
    Ok(RunResult {
        wall_ms,
        instructions: c.instructions,
        events: c.events,
        hook_calls: c.hook_calls,
        output: vm.output().to_vec(),
        engine: engine.stats(),
        plan,
    })
}

fn median(xs: &mut [f64]) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        (xs[n / 2 - 1] + xs[n / 2]) / 2.0
    }
}

/// Run `tiers` of one scenario `reps` times each. The baseline always runs
/// (it anchors the ratios) but is only reported when requested.
pub fn run_scenario(
    s: &Scenario,
    tiers: &[Tier],
    reps: usize,
    config: &VmConfig,
) -> Result<Vec<Metrics>, BenchError> {
    let reps = reps.max(1);
    let prepared = prepare(s)?;
    let measure = |tier: Tier| -> Result<(RunResult, Vec<f64>), BenchError> {
        let mut times = Vec::with_capacity(reps);
        let mut last = None;
        for _ in 0..reps {
            let r = run_once(s, &prepared, tier, config)?;
            times.push(r.wall_ms);
            last = Some(r);
        }
        Ok((last.expect("reps >= 1"), times))
    };

    let (base, mut base_times) = measure(Tier::Baseline)?;
    let base_ms = median(&mut base_times);
    let base_cost = base.instructions as f64;
    let frequency = if base_ms > 0.0 {
        base.events as f64 / (base_ms / 1e3)
    } else {
        0.0
    };

    let mut out = Vec::new();
    for &tier in tiers {
        let (r, mut times) = if tier == Tier::Baseline {
            (base.clone(), base_times.clone())
        } else {
            measure(tier)?
        };
        if r.output != base.output {
            return Err(BenchError::OutputMismatch {
                scenario: s.name.clone(),
                tier,
            });
        }
        let med = median(&mut times);
        let cost = r.instructions + r.engine.method_instructions;
        out.push(Metrics {
            scenario: s.name.clone(),
            tier,
            plan: r.plan,
            reps,
            wall_ms_median: med,
            wall_ms_min: times[0],
            wall_ms_max: times[times.len() - 1],
            instructions: r.instructions,
            method_instructions: r.engine.method_instructions,
            cost,
            program_events: r.events,
            hook_events: r.hook_calls,
            constraint_evals: r.engine.constraint_evals,
            processed: r.engine.processed,
            filtered: r.engine.filtered,
            rejected: r.engine.rejected,
            time_slowdown: if tier == Tier::Baseline || base_ms <= 0.0 {
                1.0
            } else {
                med / base_ms
            },
            instr_slowdown: cost as f64 / base_cost,
            event_frequency: frequency,
        });
    }
    Ok(out)
}

/// A list of measurements with CSV and JSON renderings.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub rows: Vec<Metrics>,
}

#[derive(Serialize)]
struct CsvRow<'a> {
    scenario: &'a str,
    tier: Tier,
    plan: String,
    reps: usize,
    wall_ms_median: f64,
    wall_ms_min: f64,
    wall_ms_max: f64,
    instructions: u64,
    method_instructions: u64,
    cost: u64,
    program_events: u64,
    hook_events: u64,
    constraint_evals: u64,
    processed: u64,
    filtered: u64,
    rejected: u64,
    time_slowdown: f64,
    instr_slowdown: f64,
    event_frequency: f64,
}

impl Report {
    pub fn to_csv(&self) -> Result<String, BenchError> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for m in &self.rows {
            w.serialize(CsvRow {
                scenario: &m.scenario,
                tier: m.tier,
                plan: m.plan.map(|p| p.to_string()).unwrap_or_default(),
                reps: m.reps,
                wall_ms_median: m.wall_ms_median,
                wall_ms_min: m.wall_ms_min,
                wall_ms_max: m.wall_ms_max,
                instructions: m.instructions,
                method_instructions: m.method_instructions,
                cost: m.cost,
                program_events: m.program_events,
                hook_events: m.hook_events,
                constraint_evals: m.constraint_evals,
                processed: m.processed,
                filtered: m.filtered,
                rejected: m.rejected,
                time_slowdown: m.time_slowdown,
                instr_slowdown: m.instr_slowdown,
                event_frequency: m.event_frequency,
            })?;
        }
        let bytes = w
            .into_inner()
            .map_err(|e| csv::Error::from(e.into_error()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }

    pub fn to_json(&self) -> Result<String, BenchError> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Report, BenchError> {
        Ok(serde_json::from_str(text)?)
    }

    /// A fixed-width table for terminals.
    pub fn to_table(&self) -> String {
        let mut s = format!(
            "{:<10} {:<22} {:>12} {:>12} {:>9} {:>9} {:>12}\n",
            "scenario", "tier", "cost", "evals", "x instr", "x time", "events/s"
        );
        for m in &self.rows {
            s.push_str(&format!(
                "{:<10} {:<22} {:>12} {:>12} {:>9.3} {:>9.2} {:>12.0}\n",
                m.scenario,
                m.tier.name(),
                m.cost,
                m.constraint_evals,
                m.instr_slowdown,
                m.time_slowdown,
                m.event_frequency
            ));
        }
        s
    }
}
