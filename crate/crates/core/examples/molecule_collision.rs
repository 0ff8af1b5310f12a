//! Find the moment two molecules share a cell in a gas simulation.
//!
//!     cargo run -p qbd --example molecule_collision

use qbd::fixtures::{Fixture, MoleculeParams, MOLECULE_QUERY};
use qbd::session::{render_tuples, tuple_refs, Mode, PauseReason, Session, SessionConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let fixture = Fixture::molecules(&MoleculeParams::default());
    let mut session = Session::attach(&fixture.source, SessionConfig::default())?;
    let (q, _) = session.add_query(MOLECULE_QUERY, true)?;
    println!("q{q}: {MOLECULE_QUERY}");

    let mut mode = session.run()?.clone();
    while let Mode::Paused(PauseReason::QueryChange { delta, .. }) = &mode {
        let added = tuple_refs(session.vm(), &delta.added);
        let removed = tuple_refs(session.vm(), &delta.removed);
        println!(
            "event {}: +{} -{}",
            delta.event,
            render_tuples(&added),
            render_tuples(&removed)
        );
        if !delta.added.is_empty() {
            let (method, pc) = session.vm().position().expect("paused inside a method");
            println!(
                "  stopped in {}:{pc}",
                session.program().method_name(method)
            );
        }
        mode = session.continue_run()?.clone();
    }
    println!("program ended: {mode}");
    println!("output: {}", session.vm().output().join(" "));
    Ok(())
}
