//! Writes a synthetic Boulder-like session export to the given path.

use evbench_cli::synth::{write_sessions_csv, SynthSpec};

fn main() -> anyhow::Result<()> {
    let path = std::env::args()
        .nth(1)
        .unwrap_or_else(|| "synthetic_sessions.csv".into());
    let seed = std::env::args().nth(2).map(|s| s.parse()).transpose()?.unwrap_or(7);
    let rows = write_sessions_csv(&SynthSpec::boulder_like(seed), std::fs::File::create(&path)?)?;
    println!("{} rows written to {}", rows, path);
    Ok(())
}
