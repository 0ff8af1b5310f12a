//! Compare constraint evaluations for an equality join under the hash-join
//! plan and under a forced nested loop.
//!
//!     cargo run -p qbd --example hash_join_vs_nested

use std::sync::Arc;
use std::time::Instant;

use qbd::engine::{Engine, PlanChoice};
use qbd::fixtures::{Fixture, HASHJOIN_QUERY};
use qbd::instrument::instrument_program;
use qbd::qlang::compile_query;
use qbd::qvm::{load_program, Vm, VmConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let fixture = Fixture::hashjoin(1000, 10, 2);
    let (program, _) = instrument_program(&load_program(&fixture.source)?)?;
    let program = Arc::new(program);
    for choice in [PlanChoice::Auto, PlanChoice::ForceNested] {
        let mut vm = Vm::new(Arc::clone(&program), VmConfig::default())?;
        let mut engine = Engine::new(Arc::clone(&program));
        let typed = compile_query(HASHJOIN_QUERY, &program)?;
        let (q, _) = engine.activate(&vm, typed, choice, false)?;
        vm.set_debug_enabled(true);
        let t = Instant::now();
        vm.run_with(None, &mut engine);
        let stats = engine.stats();
        println!(
            "{:<12} plan={:<11} evals={:>9} results={:>3} {:>8.1} ms",
            format!("{choice:?}"),
            engine.plan(q).unwrap().kind(),
            stats.constraint_evals,
            engine.results(q)?.len(),
            t.elapsed().as_secs_f64() * 1e3
        );
    }
    Ok(())
}
