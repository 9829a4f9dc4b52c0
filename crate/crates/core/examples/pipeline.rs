//! The staged pipeline driven from a TOML configuration; run twice to show reuse.
//!
//! Usage: pipeline [run-directory]
use lle_tooth::config::RunConfig;
use lle_tooth::pipeline::{Pipeline, RunOptions, Stage};

const CONFIG: &str = r#"
seed = 7

[tooth]
cells = 32

[evolution]
t_end = 60.0

[fits]
localized_window = [5.0, 59.0]
"#;

fn main() -> lle_tooth::Result<()> {
    let dir = std::env::args().nth(1).unwrap_or_else(|| "run_example".into());
    let config = RunConfig::from_toml_str(CONFIG)?;
    println!("config hash {}", config.hash());
    for pass in 0..2 {
        let clock = std::time::Instant::now();
        let mut p = Pipeline::open(config.clone(), dir.as_ref(), RunOptions { resume: true, ..Default::default() })?;
        let verdict = p.run(Stage::VerifyReport)?.expect("verify-report yields a verdict");
        println!("pass {pass}: {:.2?} wall clock, recorded stage times:", clock.elapsed());
        for (stage, rec) in &p.manifest.stages {
            println!("  {:<20} {:6.2} s", stage.name(), rec.seconds);
        }
        if pass == 0 {
            for c in &verdict.checks {
                println!("  {:?} {} {}", c.status, c.name, c.detail);
            }
        }
        println!("  verdict {}", if verdict.pass { "pass" } else { "fail" });
    }
    println!("artifacts in {dir}/ ({} files)", Pipeline::open(config, dir.as_ref(), RunOptions::default())?.manifest.files.len());
    Ok(())
}
