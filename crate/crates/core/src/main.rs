use clap::Parser;
use fg_leakage::cli::{run_backtest, Args};
use std::process::ExitCode;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let result = Args::parse().into_config().and_then(|cfg| run_backtest(&cfg));
    match result {
        Ok(out) => {
            for s in &out.series {
                let last = s.rows.last();
                log::info!(
                    "k={} mode={}: {} days, {} list changes, final V {:.6}, final L {:.6}",
                    s.k,
                    s.mode,
                    s.rows.len(),
                    s.change_days(),
                    last.map_or(f64::NAN, |r| r.wealth),
                    last.map_or(f64::NAN, |r| r.leakage),
                );
            }
            log::info!("wrote {}", out.config.output_dir.display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
