//! Show how queries are typed, planned and which events can affect them.
//!
//!     cargo run -p qbd --example query_planning ["query text"]

use qbd::fixtures::{Fixture, MoleculeParams};
use qbd::qlang::{compile_query, compute_change_set, plan_query};
use qbd::qvm::load_program;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let program = load_program(&Fixture::molecules(&MoleculeParams::default()).source)?;
    let queries: Vec<String> = match std::env::args().nth(1) {
        Some(q) => vec![q],
        None => vec![
            "Molecule m. m.x < 10".into(),
            "Molecule* m1 m2. m1.x == m2.x && m1.y == m2.y && m1 != m2".into(),
            "Molecule a b. a.x < b.x && a.color == b.color".into(),
            "Ion i; Molecule m. i.next == m && m.color != i.color".into(),
            "Molecule m. m.y == m.bogus".into(),
        ],
    };
    for text in &queries {
        println!("{text}");
        let typed = match compile_query(text, &program) {
            Ok(t) => t,
            Err(e) => {
                println!("  error: {e}\n");
                continue;
            }
        };
        println!("  canonical: {}", typed.text());
        println!("  plan: {}", plan_query(&typed).kind());
        let cs = compute_change_set(&typed, &program);
        for (class, star) in &cs.constructors {
            let s = if *star { "*" } else { "" };
            println!("  watches new {}{s}", program.class_name(*class));
        }
        for w in &cs.field_writes {
            let s = if w.star { "*" } else { "" };
            println!(
                "  watches {}{s} writes to {}",
                program.class_name(w.class),
                program.field_name(w.field)
            );
        }
        println!();
    }
    Ok(())
}
