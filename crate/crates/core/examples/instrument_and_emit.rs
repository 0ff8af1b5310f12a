//! Instrument a QASM program and print the rewritten code and site table.
//!
//!     cargo run -p qbd --example instrument_and_emit [file.qasm]

use qbd::instrument::{instrument_program, site_table, SiteKind};
use qbd::qvm::load_program;

const DEFAULT: &str = "\
class Point
  field x int
  field y int
  method <init> 2 3
    load 0
    load 1
    putfield Point.x
    load 0
    load 2
    putfield Point.y
    return
  end
end
class Main
  method main 0 1
    const 3
    const 4
    new Point 2
    store 0
    load 0
    getfield Point.x
    print
    halt
  end
end
";

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let source = match std::env::args().nth(1) {
        Some(path) => std::fs::read_to_string(path)?,
        None => DEFAULT.to_string(),
    };
    let program = load_program(&source)?;
    let (instrumented, report) = instrument_program(&program)?;
    print!("{}", instrumented.to_qasm());
    println!();
    println!(
        "{} putfield sites, {} allocation sites, {} -> {} instructions",
        report.putfield_sites,
        report.new_sites,
        report.original_instructions,
        report.instrumented_instructions
    );
    for site in site_table(&instrumented) {
        let what = match site.kind {
            SiteKind::FieldWrite(f) => format!("write {}", instrumented.field_name(f)),
            SiteKind::Allocation(c) => format!("new {}", instrumented.class_name(c)),
        };
        println!(
            "  {}:{} {what}",
            instrumented.method_name(site.method),
            site.pc
        );
    }
    Ok(())
}
