//! One pass/fail line per acceptance criterion, at the fixed tolerances of
//! the battery, on the default configuration.

use std::path::Path;
use std::time::Instant;

use tiso::battery::Battery;
use tiso::config::ExperimentConfig;

fn main() {
    // the test harness passes filter arguments; honour a plain id list
    let ids: Vec<u8> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let ids = if ids.is_empty() { (1..=11).collect() } else { ids };
    let cfg = ExperimentConfig::default();
    let battery = Battery::new(&cfg, Path::new("."));
    let start = Instant::now();
    let mut failed = 0;
    for id in ids {
        let t = Instant::now();
        let r = battery.run(id);
        println!("{} ({:.1}s)", r.line(), t.elapsed().as_secs_f64());
        if !r.pass {
            failed += 1;
        }
    }
    println!("acceptance: {failed} failing, {:.1}s total", start.elapsed().as_secs_f64());
    if failed > 0 {
        std::process::exit(1);
    }
}
