//! Compare every analytic loss gradient against central differences.
//!
//! cargo run --example gradient_check [seed] [instances]

use depthaware::gradcheck::{self, FD_STEP};

fn main() -> depthaware::Result<()> {
    let mut args = std::env::args().skip(1);
    let seed = args.next().and_then(|s| s.parse().ok()).unwrap_or(0);
    let instances = args.next().and_then(|s| s.parse().ok()).unwrap_or(20);

    println!("step h = {FD_STEP:e}");
    for s in gradcheck::run_all(seed, instances)? {
        println!(
            "{:<30} {:>3} instances  max rel err {:.3e}  (< {:e}: {})",
            s.op, s.instances, s.max_rel_error, s.threshold, s.pass
        );
    }
    Ok(())
}
