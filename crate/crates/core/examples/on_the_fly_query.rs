//! Run a program at full speed, then pose a query halfway through. The
//! debugger only starts intercepting events once the query exists.
//!
//!     cargo run -p qbd --example on_the_fly_query

use qbd::fixtures::{AstParams, Fixture, AST_QUERY};
use qbd::session::{render_tuples, tuple_refs, Mode, Session, SessionConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let fixture = Fixture::astshare(&AstParams::default());
    let mut session = Session::attach(&fixture.source, SessionConfig::default())?;

    session.step(120_000)?;
    let stats = session.stats();
    println!(
        "after {} instructions: {} live objects, {} hook calls",
        stats.vm.instructions,
        session.vm().live_count(),
        stats.vm.hook_calls
    );

    let (q, initial) = session.add_query(AST_QUERY, false)?;
    println!(
        "q{q} added mid-run; initial result: {}",
        render_tuples(&tuple_refs(session.vm(), &initial))
    );

    let mode = session.continue_run()?.clone();
    assert_eq!(mode, Mode::Halted);
    let stats = session.stats();
    println!(
        "finished: {} hook calls, {} events processed, {} filtered",
        stats.vm.hook_calls, stats.engine.processed, stats.engine.filtered
    );
    println!(
        "final result: {}",
        render_tuples(&tuple_refs(session.vm(), &session.results(q)?))
    );
    Ok(())
}
