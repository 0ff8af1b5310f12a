//! Measure the overhead tiers for one scenario and print a table.
//!
//!     cargo run --release -p qbd --example overhead_tiers [scenario] [reps]

use qbd::bench::{run_scenario, Report, Scenario, Tier};
use qbd::qvm::VmConfig;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let name = args.next().unwrap_or_else(|| "micro".into());
    let reps = args.next().map(|r| r.parse()).transpose()?.unwrap_or(3);
    let scenario = Scenario::named(&name)?;
    let rows = run_scenario(&scenario, &Tier::ALL, reps, &VmConfig::default())?;
    print!("{}", Report { rows }.to_table());
    Ok(())
}
