//! The engine holds its objects weakly: garbage leaves the query domains
//! at the next collection, so tracking stays bounded under churn.
//!
//!     cargo run -p qbd --example weak_tracking

use qbd::fixtures::{Fixture, CHURN_QUERY};
use qbd::qvm::VmConfig;
use qbd::session::{Session, SessionConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let fixture = Fixture::churn(100_000, 50);
    let config = SessionConfig {
        vm: VmConfig {
            gc_threshold: 1_000,
            ..VmConfig::default()
        },
        ..SessionConfig::default()
    };
    let mut session = Session::attach(&fixture.source, config)?;
    let (q, _) = session.add_query(CHURN_QUERY, false)?;
    session.run()?;
    let stats = session.stats();
    println!("allocations      {}", stats.vm.allocations);
    println!("collections      {}", stats.vm.gc_runs);
    println!("reclaimed        {}", stats.vm.reclaimed);
    println!("handles swept    {}", stats.engine.swept_handles);
    println!("peak tracked     {}", stats.engine.peak_tracked);
    println!("tracked at exit  {}", stats.engine.tracked);
    println!("live at exit     {}", session.vm().live_count());
    println!("results          {}", session.results(q)?.len());
    Ok(())
}
