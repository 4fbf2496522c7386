//! Discovery vs random on the default synthetic world.
//!
//! `cargo run --release -p persona-discovery --example compare_policies -- 40`

use std::time::Instant;

use persona_discovery::responder::synthetic::{SyntheticSpec, SyntheticWorld};
use persona_discovery::simulation::{policy_comparison, DialogueConfig, Policy};

fn main() -> persona_discovery::Result<()> {
    let n_dialogues = std::env::args().nth(1).and_then(|a| a.parse().ok()).unwrap_or(40);
    let world = SyntheticWorld::build(&SyntheticSpec::default())?;
    let start = Instant::now();
    let report = policy_comparison(
        &[Policy::Discovery, Policy::Random, Policy::FixedOrder],
        &world.responder,
        &world.pool,
        &world.universe,
        3,
        n_dialogues,
        &DialogueConfig::default(),
        1,
    )?;
    for row in &report.rows {
        println!(
            "{:<12} score {:.4}  detected {:.3}  questions {:.1}%",
            row.policy.name(),
            row.mean_score,
            row.detection_rate,
            row.pct_questions
        );
    }
    for p in &report.paired {
        println!("{} - {}: {:.4} ± {:.4}", p.baseline.name(), p.other.name(), p.mean_diff, p.std_error);
    }
    println!("{:.1}s", start.elapsed().as_secs_f64());
    Ok(())
}
