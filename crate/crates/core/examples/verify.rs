//! Run a reduced verification suite and print every measurement.

use gdiff::io::fmt_f64;
use gdiff::verify::{run, VerifyConfig};

fn main() -> gdiff::Result<()> {
    let config = VerifyConfig { lemma1_chains: 20_000, vlb_configs: 2000, lemma2_instances: 2000, ..Default::default() };
    let report = run(&config)?;
    for c in &report.checks {
        println!("{} {}", c.check.name(), if c.passed { "pass" } else { "FAIL" });
        for m in &c.measurements {
            let limit = m.limit.map(|l| format!(" (limit {})", fmt_f64(l))).unwrap_or_default();
            println!("  {:28} {:22} {}{limit}", m.case, m.metric, fmt_f64(m.value));
        }
    }
    println!("overall: {}", if report.passed { "pass" } else { "FAIL" });
    Ok(())
}
