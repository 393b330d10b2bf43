//! Run configuration, k-sweeps and output files.

use crate::engine::{run_series, Mode, SeriesRow};
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::genfn::{GenFnKind, GenFnSpec};
use crate::market_data::{load_panel, synthesize_panel, DateWindow, MarketPanel, SynthConfig};
use chrono::NaiveDate;
use clap::Parser;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

pub const CSV_HEADER: &str = "date,V,logV,G,Gamma,L,absL,list_changed,turnover";
pub const SUMMARY_FILE: &str = "summary.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DataSource {
    Csv(PathBuf),
    Synth(SynthConfig),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub data: DataSource,
    pub k_values: Vec<usize>,
    pub modes: Vec<Mode>,
    pub genfn: GenFnKind,
    pub window: DateWindow,
    pub output_dir: PathBuf,
}

impl RunConfig {
    fn validate_shape(&self) -> Result<()> {
        if self.k_values.is_empty() {
            return Err(Error::Config("no list sizes given".into()));
        }
        if self.modes.is_empty() {
            return Err(Error::Config("no generation mode given".into()));
        }
        if let (Some(s), Some(e)) = (self.window.start, self.window.end) {
            if s > e {
                return Err(Error::Config(format!("window start {s} is after end {e}")));
            }
        }
        Ok(())
    }

    fn validate_against(&self, panel: &MarketPanel) -> Result<()> {
        let d = panel.universe_size();
        if let Some(k) = self.k_values.iter().find(|&&k| k < 2 || k > d) {
            return Err(Error::Config(format!(
                "list size {k} outside 2..={d} for a universe of {d} names"
            )));
        }
        Ok(())
    }

    pub fn load_panel(&self) -> Result<MarketPanel> {
        match &self.data {
            DataSource::Csv(path) => load_panel(path, self.window),
            DataSource::Synth(cfg) => Ok(synthesize_panel(cfg)?.window(self.window)),
        }
    }
}

/// Daily series of one `(k, mode)` backtest.
#[derive(Debug, Clone, PartialEq)]
pub struct SeriesOutput {
    pub k: usize,
    pub mode: Mode,
    pub rows: Vec<SeriesRow>,
}

impl SeriesOutput {
    pub fn file_name(&self) -> String {
        format!("series_k{}_{}.csv", self.k, self.mode)
    }

    pub fn change_days(&self) -> usize {
        self.rows.iter().filter(|r| r.list_changed).count()
    }

    /// Plot-ready CSV, floats with 17 significant digits.
    pub fn to_csv(&self) -> String {
        let mut out = String::with_capacity(200 * (self.rows.len() + 1));
        out.push_str(CSV_HEADER);
        out.push('\n');
        for r in &self.rows {
            writeln!(
                out,
                "{},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{},{:.16e}",
                r.date,
                r.wealth,
                r.log_wealth,
                r.g,
                r.gamma,
                r.leakage,
                r.leakage.abs(),
                u8::from(r.list_changed),
                r.turnover
            )
            .expect("writing to a String cannot fail");
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutput {
    pub config: RunConfig,
    pub universe_size: usize,
    pub n_days: usize,
    pub series: Vec<SeriesOutput>,
    pub wall_time: Duration,
}

impl RunOutput {
    pub fn get(&self, k: usize, mode: Mode) -> Option<&SeriesOutput> {
        self.series.iter().find(|s| s.k == k && s.mode == mode)
    }
}

/// Runs every `(k, mode)` pair of `cfg` over one shared panel.
pub fn execute(cfg: &RunConfig, execution: Execution) -> Result<RunOutput> {
    let started = Instant::now();
    cfg.validate_shape()?;
    let panel = cfg.load_panel()?;
    cfg.validate_against(&panel)?;

    let jobs: Vec<(usize, Mode)> = cfg
        .k_values
        .iter()
        .flat_map(|&k| cfg.modes.iter().map(move |&m| (k, m)))
        .collect();
    let results = execution.map(&jobs, |&(k, mode)| {
        run_series(&panel, k, GenFnSpec::new(cfg.genfn), mode)
            .map(|(rows, _)| SeriesOutput { k, mode, rows })
            .map_err(|e| e.context(format!("k={k} mode={mode}")))
    });
    let series = results.into_iter().collect::<Result<Vec<_>>>()?;
    Ok(RunOutput {
        config: cfg.clone(),
        universe_size: panel.universe_size(),
        n_days: panel.len(),
        series,
        wall_time: started.elapsed(),
    })
}

/// Executes `cfg` and writes its series and summary into `cfg.output_dir`.
pub fn run_backtest(cfg: &RunConfig) -> Result<RunOutput> {
    let out = execute(cfg, Execution::default())?;
    emit_series(&out, &cfg.output_dir)?;
    Ok(out)
}

#[derive(Debug, Serialize)]
struct SeriesSummary {
    k: usize,
    mode: Mode,
    file: String,
    sha256: String,
    n_days: usize,
    change_days: usize,
    final_wealth: Option<f64>,
    final_gamma: Option<f64>,
    final_leakage: Option<f64>,
}

#[derive(Debug, Serialize)]
struct Summary<'a> {
    config: &'a RunConfig,
    universe_size: usize,
    n_days: usize,
    wall_time_ms: u128,
    series: Vec<SeriesSummary>,
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    let result = (|| {
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        std::fs::rename(&tmp, path)
    })();
    result.map_err(|e| {
        let _ = std::fs::remove_file(&tmp);
        Error::io(path, e)
    })
}

/// Writes one CSV per series plus `summary.json`. Files already written by
/// this call are removed if a later write fails.
pub fn emit_series(out: &RunOutput, dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut written = Vec::new();
    let result = emit_into(out, dir, &mut written);
    if result.is_err() {
        for p in &written {
            let _ = std::fs::remove_file(p);
        }
    }
    result.map(|()| written)
}

fn emit_into(out: &RunOutput, dir: &Path, written: &mut Vec<PathBuf>) -> Result<()> {
    let mut summaries = Vec::with_capacity(out.series.len());
    for s in &out.series {
        let csv = s.to_csv();
        let path = dir.join(s.file_name());
        write_atomic(&path, csv.as_bytes())?;
        written.push(path);
        let last = s.rows.last();
        summaries.push(SeriesSummary {
            k: s.k,
            mode: s.mode,
            file: s.file_name(),
            sha256: hex::encode(Sha256::digest(csv.as_bytes())),
            n_days: s.rows.len(),
            change_days: s.change_days(),
            final_wealth: last.map(|r| r.wealth),
            final_gamma: last.map(|r| r.gamma),
            final_leakage: last.map(|r| r.leakage),
        });
    }
    let summary = Summary {
        config: &out.config,
        universe_size: out.universe_size,
        n_days: out.n_days,
        wall_time_ms: out.wall_time.as_millis(),
        series: summaries,
    };
    let json = serde_json::to_string_pretty(&summary).expect("summary serializes");
    let path = dir.join(SUMMARY_FILE);
    write_atomic(&path, json.as_bytes())?;
    written.push(path);
    Ok(())
}

/// Command-line flags. Every flag may also come from `--config`, a flat
/// `key = value` file using the long flag names; flags given on the command
/// line win.
#[derive(Debug, Clone, Default, Parser)]
#[command(name = "backtest", version, about = "Backtest rank-based generated portfolios and estimate their leakage")]
pub struct Args {
    /// CRSP-shaped CSV with header `date,id,cap,ret`.
    #[arg(long, conflicts_with = "synth_seed")]
    pub data: Option<PathBuf>,
    /// Seed of the synthetic rank-volatile market used instead of --data.
    #[arg(long)]
    pub synth_seed: Option<u64>,
    /// Universe size of the synthetic market.
    #[arg(long)]
    pub synth_d: Option<usize>,
    /// Number of days of the synthetic market.
    #[arg(long)]
    pub synth_days: Option<usize>,
    /// Comma-separated list sizes, e.g. 100,300,500.
    #[arg(long)]
    pub k: Option<String>,
    /// mult, add, or a comma-separated list of both.
    #[arg(long)]
    pub mode: Option<String>,
    /// entropy or quadratic.
    #[arg(long)]
    pub genfn: Option<String>,
    /// First date of the window (YYYY-MM-DD).
    #[arg(long)]
    pub start: Option<String>,
    /// Last date of the window (YYYY-MM-DD).
    #[arg(long)]
    pub end: Option<String>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Key-value config file.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

pub const DEFAULT_SYNTH_D: usize = 30;
pub const DEFAULT_SYNTH_DAYS: usize = 5000;

/// Parses `key = value` lines; `#` starts a comment.
pub fn parse_config_text(text: &str) -> Result<BTreeMap<String, String>> {
    let mut map = BTreeMap::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("config line {}: expected key = value", n + 1)))?;
        let key = key.trim().trim_start_matches("--").replace('_', "-");
        map.insert(key, value.trim().to_string());
    }
    Ok(map)
}

impl Args {
    /// Fills unset flags from `--config`, if given.
    pub fn merge_config_file(mut self) -> Result<Self> {
        let Some(path) = self.config.clone() else {
            return Ok(self);
        };
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        for (key, value) in parse_config_text(&text)? {
            let num = |v: &str| {
                v.parse::<u64>()
                    .map_err(|e| Error::Config(format!("config key {key}: {e}")))
            };
            match key.as_str() {
                "data" => { self.data.get_or_insert_with(|| PathBuf::from(&value)); }
                "synth-seed" => { if self.synth_seed.is_none() { self.synth_seed = Some(num(&value)?); } }
                "synth-d" => { if self.synth_d.is_none() { self.synth_d = Some(num(&value)? as usize); } }
                "synth-days" => { if self.synth_days.is_none() { self.synth_days = Some(num(&value)? as usize); } }
                "k" => { self.k.get_or_insert(value); }
                "mode" => { self.mode.get_or_insert(value); }
                "genfn" => { self.genfn.get_or_insert(value); }
                "start" => { self.start.get_or_insert(value); }
                "end" => { self.end.get_or_insert(value); }
                "out" => { self.out.get_or_insert_with(|| PathBuf::from(&value)); }
                other => return Err(Error::Config(format!("unknown config key `{other}`"))),
            }
        }
        if self.data.is_some() && self.synth_seed.is_some() {
            return Err(Error::Config("give either data or synth-seed, not both".into()));
        }
        Ok(self)
    }

    pub fn into_config(self) -> Result<RunConfig> {
        let args = self.merge_config_file()?;
        let data = match (args.data, args.synth_seed) {
            (Some(path), None) => DataSource::Csv(path),
            (None, Some(seed)) => DataSource::Synth(SynthConfig::rank_volatile(
                args.synth_d.unwrap_or(DEFAULT_SYNTH_D),
                args.synth_days.unwrap_or(DEFAULT_SYNTH_DAYS),
                seed,
            )),
            (None, None) => return Err(Error::Config("one of --data or --synth-seed is required".into())),
            (Some(_), Some(_)) => return Err(Error::Config("--data and --synth-seed are exclusive".into())),
        };
        let k_text = args
            .k
            .ok_or_else(|| Error::Config("--k is required".into()))?;
        let k_values = split_list(&k_text)
            .map(|s| {
                s.parse::<usize>()
                    .map_err(|e| Error::Config(format!("bad list size `{s}`: {e}")))
            })
            .collect::<Result<Vec<_>>>()?;
        let modes = split_list(args.mode.as_deref().unwrap_or("mult"))
            .map(str::parse)
            .collect::<Result<Vec<Mode>>>()?;
        let genfn = args.genfn.as_deref().unwrap_or("entropy").parse()?;
        let window = DateWindow {
            start: args.start.as_deref().map(parse_date).transpose()?,
            end: args.end.as_deref().map(parse_date).transpose()?,
        };
        let cfg = RunConfig {
            data,
            k_values,
            modes,
            genfn,
            window,
            output_dir: args.out.unwrap_or_else(|| PathBuf::from("out")),
        };
        cfg.validate_shape()?;
        Ok(cfg)
    }
}

fn split_list(s: &str) -> impl Iterator<Item = &str> {
    s.split(',').map(str::trim).filter(|p| !p.is_empty())
}

fn parse_date(s: &str) -> Result<NaiveDate> {
    NaiveDate::parse_from_str(s, "%Y-%m-%d")
        .map_err(|e| Error::Config(format!("bad date `{s}`: {e}")))
}
