//! Two compiler-style bugs: an AST rewrite that shares a child between two
//! parents, and a symbol table with a duplicate field definition.
//!
//!     cargo run -p qbd --example javac_ast_sharing

use qbd::fixtures::{AstParams, Fixture, AST_QUERY, FIELDEXPR_QUERY};
use qbd::session::{render_tuples, tuple_refs, Mode, PauseReason, Session, SessionConfig};

fn hunt(fixture: &Fixture, query: &str) -> Result<(), Box<dyn std::error::Error>> {
    let mut session = Session::attach(&fixture.source, SessionConfig::default())?;
    session.add_query(query, true)?;
    println!("{}: {query}", fixture.name);
    match session.run()?.clone() {
        Mode::Paused(PauseReason::QueryChange { delta, .. }) => {
            let (method, pc) = session.vm().position().expect("paused in a method");
            println!(
                "  found at event {} in {}:{pc}: {}",
                delta.event,
                session.program().method_name(method),
                render_tuples(&tuple_refs(session.vm(), &delta.added))
            );
        }
        other => println!("  nothing found ({other})"),
    }
    Ok(())
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    hunt(&Fixture::astshare(&AstParams::default()), AST_QUERY)?;
    hunt(&Fixture::fieldexpr(200, Some(150)), FIELDEXPR_QUERY)?;
    Ok(())
}
