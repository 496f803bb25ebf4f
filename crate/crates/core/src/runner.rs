//! Run orchestration, on-disk telemetry and the offline analyzer.
//!
//! A run directory holds:
//!
//! ```text
//! manifest.json        written before the first tick, never touched again
//! timeseries.csv       one row per tick
//! ledger.csv[.gz]      one row per unit per tick
//! events.jsonl         births and deaths
//! hashes.csv           state-hash checkpoints
//! snapshots/           tick_XXXXXXXX.json[.gz]
//! summary.json         written after the last tick
//! ```

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{self, BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use flate2::read::MultiGzDecoder;
use flate2::write::GzEncoder;
use flate2::Compression;
use log::{info, warn};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use crate::config::{ConfigError, RunConfig, SimConfig};
use crate::genome::Genome;
use crate::metrics::{self, ComplexityPoint, MannKendall, MetricsTracker, TickMetrics, TrendSummary};
use crate::physics::{self, BaselineErrors, GuardReport};
use crate::streams::StreamKind;
use crate::unit::UnitId;
use crate::world::{Event, LedgerEntry, Source, TickReport, World, WorldSnapshot, BUCKETS, BUCKET_NAMES};

pub const CODE_VERSION: &str = env!("CARGO_PKG_VERSION");
pub const MANIFEST_FORMAT: &str = "mee-run";
pub const REPORT_FORMAT: &str = "mee-report";

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("guard violated\n{0}")]
    Guard(GuardReport),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("{0}")]
    Data(String),
}

impl RunError {
    /// 2 for configuration and guard errors, 3 for I/O and bad run data.
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Config(_) | RunError::Guard(_) => 2,
            RunError::Io { .. } | RunError::Data(_) => 3,
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> RunError + '_ {
    move |source| RunError::Io { path: path.to_path_buf(), source }
}

fn invalid(e: impl ToString) -> RunError {
    RunError::Config(ConfigError::Invalid(e.to_string()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelBlock {
    pub source: String,
    pub start: usize,
    pub width: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub format: String,
    pub code_version: String,
    pub master_seed: u64,
    pub config: SimConfig,
    pub channels: Vec<ChannelBlock>,
    pub baseline: BaselineErrors,
    pub guard: GuardReport,
    pub start_tick: u64,
    /// Planned; a collapsed run stops earlier (see the summary).
    pub end_tick: u64,
    pub resumed_from: Option<PathBuf>,
    pub hash_every: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub start_tick: u64,
    pub end_tick: u64,
    pub population: usize,
    pub collapsed: bool,
    pub final_hash: String,
    pub final_snapshot: PathBuf,
}

/// File names inside a run directory.
#[derive(Debug, Clone)]
pub struct RunPaths {
    pub root: PathBuf,
}

impl RunPaths {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn manifest(&self) -> PathBuf {
        self.root.join("manifest.json")
    }

    pub fn summary(&self) -> PathBuf {
        self.root.join("summary.json")
    }

    pub fn timeseries(&self) -> PathBuf {
        self.root.join("timeseries.csv")
    }

    pub fn events(&self) -> PathBuf {
        self.root.join("events.jsonl")
    }

    pub fn hashes(&self) -> PathBuf {
        self.root.join("hashes.csv")
    }

    pub fn snapshots(&self) -> PathBuf {
        self.root.join("snapshots")
    }

    pub fn ledger(&self, gzip: bool) -> PathBuf {
        self.root.join(if gzip { "ledger.csv.gz" } else { "ledger.csv" })
    }

    /// Whichever ledger file exists.
    pub fn existing_ledger(&self) -> Option<PathBuf> {
        [self.ledger(false), self.ledger(true)].into_iter().find(|p| p.exists())
    }

    pub fn snapshot(&self, tick: u64, gzip: bool) -> PathBuf {
        let ext = if gzip { "json.gz" } else { "json" };
        self.snapshots().join(format!("tick_{tick:08}.{ext}"))
    }
}

enum Sink {
    Plain(BufWriter<File>),
    Gz(GzEncoder<BufWriter<File>>),
}

impl Sink {
    fn create(path: &Path, gzip: bool) -> Result<Self, RunError> {
        let file = BufWriter::new(File::create(path).map_err(io_err(path))?);
        Ok(if gzip { Sink::Gz(GzEncoder::new(file, Compression::default())) } else { Sink::Plain(file) })
    }

    fn finish(self) -> io::Result<()> {
        match self {
            Sink::Plain(mut w) => w.flush(),
            Sink::Gz(g) => g.finish()?.flush(),
        }
    }
}

impl Write for Sink {
    fn write(&mut self, buf: &[u8]) -> io::Result<usize> {
        match self {
            Sink::Plain(w) => w.write(buf),
            Sink::Gz(g) => g.write(buf),
        }
    }

    fn flush(&mut self) -> io::Result<()> {
        match self {
            Sink::Plain(w) => w.flush(),
            Sink::Gz(g) => g.flush(),
        }
    }
}

fn open_read(path: &Path) -> Result<Box<dyn Read>, RunError> {
    let file = File::open(path).map_err(io_err(path))?;
    Ok(if path.extension().is_some_and(|e| e == "gz") {
        Box::new(MultiGzDecoder::new(BufReader::new(file)))
    } else {
        Box::new(BufReader::new(file))
    })
}

fn write_file(path: &Path, bytes: &[u8], gzip: bool) -> Result<(), RunError> {
    let mut sink = Sink::create(path, gzip)?;
    sink.write_all(bytes).map_err(io_err(path))?;
    sink.finish().map_err(io_err(path))
}

fn read_string(path: &Path) -> Result<String, RunError> {
    let mut s = String::new();
    open_read(path)?.read_to_string(&mut s).map_err(io_err(path))?;
    Ok(s)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), RunError> {
    let text = serde_json::to_string_pretty(value).expect("serializes");
    fs::write(path, text + "\n").map_err(io_err(path))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, RunError> {
    serde_json::from_str(&read_string(path)?).map_err(|e| RunError::Data(format!("{}: {e}", path.display())))
}

pub fn load_corpus(cfg: &SimConfig) -> Result<Arc<Vec<u8>>, RunError> {
    cfg.streams.load_corpus().map_err(invalid)
}

/// Baseline oracle plus the guard inequality.
pub fn validate(cfg: &SimConfig) -> Result<(BaselineErrors, GuardReport), RunError> {
    let corpus = load_corpus(cfg)?;
    let baseline = physics::run_baseline_oracle(&cfg.streams, corpus, cfg.run.baseline_ticks, cfg.world.master_seed);
    match physics::validate_params(&cfg.physics, cfg.sensory_width() as u32, &baseline) {
        Ok(report) => Ok((baseline, report)),
        Err(report) => Err(RunError::Guard(report)),
    }
}

fn channel_layout(cfg: &SimConfig) -> Vec<ChannelBlock> {
    let mut blocks: Vec<ChannelBlock> = StreamKind::ALL
        .iter()
        .map(|&k| {
            let r = cfg.streams.channel_range(k);
            ChannelBlock { source: k.to_string(), start: r.start, width: r.len() }
        })
        .collect();
    blocks.push(ChannelBlock {
        source: "signal".into(),
        start: cfg.streams.total_width(),
        width: cfg.world.emission_slots as usize,
    });
    blocks
}

/// Validates, seeds founders and runs `ticks` ticks (default: the config's)
/// into `out`.
pub fn run(mut cfg: SimConfig, out: &Path, ticks: Option<u64>, seed: Option<u64>) -> Result<RunSummary, RunError> {
    if let Some(s) = seed {
        cfg.world.master_seed = s;
    }
    cfg.check()?;
    let ticks = ticks.unwrap_or(cfg.run.ticks);
    let (baseline, guard) = validate(&cfg)?;
    let world = World::new(&cfg, load_corpus(&cfg)?).map_err(invalid)?;
    execute(world, out, ticks, baseline, guard, None)
}

/// Continues a run from a snapshot for `ticks` more ticks, writing a fresh
/// run directory.
pub fn resume(snapshot: &Path, out: &Path, ticks: u64) -> Result<RunSummary, RunError> {
    let snap = load_snapshot(snapshot)?;
    let cfg = snap.config.clone();
    cfg.check()?;
    let (baseline, guard) = validate(&cfg)?;
    let world = World::from_snapshot(snap, load_corpus(&cfg)?).map_err(|e| RunError::Data(e.to_string()))?;
    execute(world, out, ticks, baseline, guard, Some(snapshot.to_path_buf()))
}

pub fn load_snapshot(path: &Path) -> Result<WorldSnapshot, RunError> {
    WorldSnapshot::from_json(&read_string(path)?).map_err(|e| RunError::Data(format!("{}: {e}", path.display())))
}

pub const TIMESERIES_HEADER: [&str; 19] = [
    "tick",
    "population",
    "births",
    "deaths",
    "mean_energy",
    "total_energy",
    "total_gain",
    "total_compute",
    "total_maintenance",
    "death_energy",
    "err_numeric",
    "err_text",
    "err_noise",
    "err_temporal",
    "err_signal",
    "noise_fraction",
    "mean_entropy",
    "corrupt",
    "weight_resets",
];

fn timeseries_row(r: &TickReport, m: &TickMetrics) -> Vec<String> {
    let mut row = vec![
        r.tick.to_string(),
        r.population.to_string(),
        r.births.to_string(),
        r.deaths.to_string(),
        r.mean_energy.to_string(),
        r.total_energy.to_string(),
        r.total_gain.to_string(),
        r.total_compute.to_string(),
        r.total_maintenance.to_string(),
        r.death_energy.to_string(),
    ];
    row.extend(r.mean_errors.iter().map(f64::to_string));
    row.push(m.noise_fraction.to_string());
    row.push(m.mean_entropy.map(|h| h.to_string()).unwrap_or_default());
    row.push(r.corrupt.to_string());
    row.push(r.weight_resets.to_string());
    row
}

fn ledger_header() -> Vec<String> {
    let mut h: Vec<String> = [
        "tick",
        "unit_id",
        "energy_before",
        "energy_after",
        "gain",
        "compute_cost",
        "maintenance",
        "volume",
        "v_in",
        "v_repr",
        "error",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    h.extend(BUCKET_NAMES.iter().map(|b| format!("err_{b}")));
    h.extend(BUCKET_NAMES.iter().map(|b| format!("vol_{b}")));
    h.push("sources".into());
    h
}

fn ledger_row(e: &LedgerEntry) -> Vec<String> {
    let mut row = vec![
        e.tick.to_string(),
        e.unit_id.to_string(),
        e.energy_before.to_string(),
        e.energy_after.to_string(),
        e.gain.to_string(),
        e.compute_cost.to_string(),
        e.maintenance.to_string(),
        e.volume.to_string(),
        e.v_in.to_string(),
        e.v_repr.to_string(),
        e.error.to_string(),
    ];
    row.extend(e.errors.iter().map(f64::to_string));
    row.extend(e.volumes.iter().map(f64::to_string));
    let sources: Vec<String> = e.sources.iter().map(|(s, share)| format!("{s}:{share}")).collect();
    row.push(sources.join(";"));
    row
}

fn parse<T: std::str::FromStr>(field: Option<&str>, what: &str) -> Result<T, RunError> {
    field
        .and_then(|f| f.parse().ok())
        .ok_or_else(|| RunError::Data(format!("ledger: bad {what} field {field:?}")))
}

/// Inverse of the ledger CSV encoding. Floats round-trip exactly.
pub fn parse_ledger_row(rec: &csv::StringRecord) -> Result<LedgerEntry, RunError> {
    let f = |i: usize, what: &str| parse::<f64>(rec.get(i), what);
    let mut errors = [0.0; BUCKETS];
    let mut volumes = [0.0; BUCKETS];
    for b in 0..BUCKETS {
        errors[b] = f(11 + b, "err")?;
        volumes[b] = f(11 + BUCKETS + b, "vol")?;
    }
    let mut sources = Vec::new();
    let src_field = rec.get(11 + 2 * BUCKETS).unwrap_or("");
    for item in src_field.split(';').filter(|s| !s.is_empty()) {
        let (name, share) =
            item.rsplit_once(':').ok_or_else(|| RunError::Data(format!("ledger: bad source {item:?}")))?;
        let src = Source::parse(name).ok_or_else(|| RunError::Data(format!("ledger: bad source {name:?}")))?;
        sources.push((src, parse(Some(share), "share")?));
    }
    Ok(LedgerEntry {
        tick: parse(rec.get(0), "tick")?,
        unit_id: parse(rec.get(1), "unit_id")?,
        energy_before: f(2, "energy_before")?,
        energy_after: f(3, "energy_after")?,
        gain: f(4, "gain")?,
        compute_cost: f(5, "compute_cost")?,
        maintenance: f(6, "maintenance")?,
        volume: f(7, "volume")?,
        v_in: parse(rec.get(8), "v_in")?,
        v_repr: parse(rec.get(9), "v_repr")?,
        error: f(10, "error")?,
        errors,
        volumes,
        sources,
    })
}

pub fn dead_ids(events: &[Event]) -> Vec<UnitId> {
    events
        .iter()
        .filter_map(|e| match e {
            Event::Death { unit, .. } => Some(*unit),
            Event::Birth { .. } => None,
        })
        .collect()
}

fn execute(
    mut world: World,
    out: &Path,
    ticks: u64,
    baseline: BaselineErrors,
    guard: GuardReport,
    resumed_from: Option<PathBuf>,
) -> Result<RunSummary, RunError> {
    let cfg = world.config().clone();
    let paths = RunPaths::new(out);
    fs::create_dir_all(paths.snapshots()).map_err(io_err(&paths.snapshots()))?;
    let start = world.tick();
    let manifest = RunManifest {
        format: MANIFEST_FORMAT.into(),
        code_version: CODE_VERSION.into(),
        master_seed: cfg.world.master_seed,
        channels: channel_layout(&cfg),
        config: cfg.clone(),
        baseline,
        guard,
        start_tick: start,
        end_tick: start + ticks,
        resumed_from,
        hash_every: cfg.run.hash_every,
    };
    write_json(&paths.manifest(), &manifest)?;

    let csv_err = |path: PathBuf| move |e: csv::Error| RunError::Io { path: path.clone(), source: e.into() };
    let mut series = csv::Writer::from_writer(Sink::create(&paths.timeseries(), false)?);
    series.write_record(TIMESERIES_HEADER).map_err(csv_err(paths.timeseries()))?;
    let ledger_path = paths.ledger(cfg.run.gzip);
    let mut ledger = if cfg.run.write_ledger {
        let mut w = csv::Writer::from_writer(Sink::create(&ledger_path, cfg.run.gzip)?);
        w.write_record(ledger_header()).map_err(csv_err(ledger_path.clone()))?;
        Some(w)
    } else {
        None
    };
    let mut events = Sink::create(&paths.events(), false)?;
    let mut hashes = Sink::create(&paths.hashes(), false)?;
    writeln!(hashes, "tick,hash").map_err(io_err(&paths.hashes()))?;

    let gzip = cfg.run.gzip;
    let write_snapshot = |world: &World| -> Result<PathBuf, RunError> {
        let path = paths.snapshot(world.tick(), gzip);
        write_file(&path, world.snapshot().to_canonical_json().as_bytes(), gzip)?;
        Ok(path)
    };
    let mut last_snapshot = write_snapshot(&world)?;
    let mut last_hash = world.state_hash();
    writeln!(hashes, "{start},{last_hash:016x}").map_err(io_err(&paths.hashes()))?;

    let mut tracker = MetricsTracker::new(cfg.run.metrics_window);
    info!("run: {} ticks from tick {start} into {}", ticks, out.display());
    for _ in 0..ticks {
        let report = world.step();
        let dead = dead_ids(&report.events);
        let m = tracker.observe(report.tick, &report.ledger, &dead);
        series.write_record(timeseries_row(&report, &m)).map_err(csv_err(paths.timeseries()))?;
        if let Some(w) = ledger.as_mut() {
            for e in &report.ledger {
                w.write_record(ledger_row(e)).map_err(csv_err(ledger_path.clone()))?;
            }
        }
        for ev in &report.events {
            let line = serde_json::to_string(ev).expect("event serializes");
            writeln!(events, "{line}").map_err(io_err(&paths.events()))?;
        }
        let t = report.tick;
        let collapsed = report.population == 0;
        let last = t == start + ticks || collapsed;
        if (cfg.run.hash_every > 0 && t % cfg.run.hash_every == 0) || last {
            last_hash = world.state_hash();
            writeln!(hashes, "{t},{last_hash:016x}").map_err(io_err(&paths.hashes()))?;
        }
        if (cfg.run.snapshot_every > 0 && t % cfg.run.snapshot_every == 0) || last {
            last_snapshot = write_snapshot(&world)?;
        }
        if t % 1000 == 0 {
            info!("tick {t}: population {} noise_fraction {:.3}", report.population, m.noise_fraction);
        }
        if collapsed {
            warn!("population collapsed at tick {t}");
            break;
        }
    }

    let flush = |r: Result<Sink, String>, path: PathBuf| -> Result<(), RunError> {
        r.map_err(|e| RunError::Io { path: path.clone(), source: io::Error::other(e) })?
            .finish()
            .map_err(io_err(&path))
    };
    flush(series.into_inner().map_err(|e| e.to_string()), paths.timeseries())?;
    if let Some(w) = ledger {
        flush(w.into_inner().map_err(|e| e.to_string()), ledger_path)?;
    }
    events.finish().map_err(io_err(&paths.events()))?;
    hashes.finish().map_err(io_err(&paths.hashes()))?;

    let summary = RunSummary {
        start_tick: start,
        end_tick: world.tick(),
        population: world.units().len(),
        collapsed: world.units().is_empty(),
        final_hash: format!("{last_hash:016x}"),
        final_snapshot: last_snapshot,
    };
    write_json(&paths.summary(), &summary)?;
    Ok(summary)
}

/// Checkpoints from `hashes.csv`.
pub fn read_hashes(dir: &Path) -> Result<Vec<(u64, String)>, RunError> {
    let path = RunPaths::new(dir).hashes();
    let text = read_string(&path)?;
    text.lines()
        .skip(1)
        .map(|l| {
            let (t, h) = l.split_once(',').ok_or_else(|| RunError::Data(format!("hashes: bad line {l:?}")))?;
            Ok((parse(Some(t), "tick")?, h.to_string()))
        })
        .collect()
}

/// Snapshot files of a run, in tick order.
pub fn snapshot_files(dir: &Path) -> Result<Vec<PathBuf>, RunError> {
    let snaps = RunPaths::new(dir).snapshots();
    let mut files: Vec<PathBuf> = fs::read_dir(&snaps)
        .map_err(io_err(&snaps))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.file_name().and_then(|n| n.to_str()).is_some_and(|n| n.starts_with("tick_")))
        .collect();
    files.sort();
    Ok(files)
}

/// Everything the analyzer derives from one run directory.
#[derive(Debug, Clone)]
pub struct RunData {
    pub dir: PathBuf,
    pub manifest: RunManifest,
    pub series: Vec<TickMetrics>,
    /// Per-tick efficiency, only at ticks where some unit had data.
    pub efficiency: Vec<(u64, f64)>,
    pub trophic: metrics::TrophicAssignment,
    pub complexity: Vec<ComplexityPoint>,
    pub final_tick: u64,
    pub final_genomes: Vec<Genome>,
}

pub fn load_run(dir: &Path) -> Result<RunData, RunError> {
    let paths = RunPaths::new(dir);
    let manifest: RunManifest = read_json(&paths.manifest())?;
    let ledger_path = paths
        .existing_ledger()
        .ok_or_else(|| RunError::Data(format!("{}: no ledger in run directory", dir.display())))?;

    let mut deaths: BTreeMap<u64, Vec<UnitId>> = BTreeMap::new();
    let events_path = paths.events();
    for line in BufReader::new(File::open(&events_path).map_err(io_err(&events_path))?).lines() {
        let line = line.map_err(io_err(&events_path))?;
        if line.is_empty() {
            continue;
        }
        let ev: Event = serde_json::from_str(&line).map_err(|e| RunError::Data(format!("events: {e}")))?;
        if let Event::Death { tick, unit, .. } = ev {
            deaths.entry(tick).or_default().push(unit);
        }
    }

    let mut tracker = MetricsTracker::new(manifest.config.run.metrics_window);
    let mut series = Vec::new();
    let mut efficiency = Vec::new();
    let mut reader = csv::Reader::from_reader(open_read(&ledger_path)?);
    let mut batch: Vec<LedgerEntry> = Vec::new();
    let mut flush = |batch: &mut Vec<LedgerEntry>| {
        if let Some(tick) = batch.first().map(|e| e.tick) {
            let dead = deaths.get(&tick).cloned().unwrap_or_default();
            series.push(tracker.observe(tick, batch, &dead));
            if let Some(x) = metrics::efficiency(batch, &manifest.baseline) {
                efficiency.push((tick, x));
            }
            batch.clear();
        }
    };
    for rec in reader.records() {
        let rec = rec.map_err(|e| RunError::Data(format!("{}: {e}", ledger_path.display())))?;
        let e = parse_ledger_row(&rec)?;
        if batch.first().is_some_and(|b| b.tick != e.tick) {
            flush(&mut batch);
        }
        batch.push(e);
    }
    flush(&mut batch);
    let trophic = metrics::assign_trophic_levels(&tracker.book().profiles());

    let mut complexity = Vec::new();
    let mut final_tick = manifest.start_tick;
    let mut final_genomes = Vec::new();
    for file in snapshot_files(dir)? {
        let snap = load_snapshot(&file)?;
        let genomes: Vec<Genome> = snap.units.into_iter().map(|u| u.genome).collect();
        complexity.push(metrics::complexity_point(snap.tick, &genomes));
        final_tick = snap.tick;
        final_genomes = genomes;
    }
    Ok(RunData {
        dir: dir.to_path_buf(),
        manifest,
        series,
        efficiency,
        trophic,
        complexity,
        final_tick,
        final_genomes,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrendReport {
    pub mann_kendall: Option<MannKendall>,
    pub slope: Option<f64>,
    /// Direction the prediction expects, and whether the test found it at
    /// the 0.05 level.
    pub expected: String,
    pub supported: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub dir: PathBuf,
    pub master_seed: u64,
    pub ticks_with_units: usize,
    pub final_tick: u64,
    pub final_population: usize,
    pub collapsed: bool,
    pub specialization: Option<TrendSummary>,
    pub noise_avoidance: Option<TrendSummary>,
    pub trophic_levels: Vec<usize>,
    pub trophic_flow: Vec<Vec<f64>>,
    pub trophic_formed: bool,
    pub complexity: TrendReport,
    pub efficiency: TrendReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DivergencePair {
    pub a: usize,
    pub b: usize,
    pub inter: f64,
    pub intra: f64,
    pub satisfied: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum Divergence {
    RequiresTwoRuns,
    Measured { pairs: Vec<DivergencePair>, all_satisfied: bool },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub format: String,
    pub code_version: String,
    pub notes: Vec<String>,
    pub runs: Vec<RunReport>,
    pub path_divergence: Divergence,
}

/// Seed for the pair sample of two runs.
pub fn pair_seed(a: u64, b: u64) -> u64 {
    a.rotate_left(32) ^ b ^ 0x9e37_79b9_7f4a_7c15
}

/// Mann-Kendall on the block-reduced series plus an OLS slope against `x`.
pub fn trend(values: &[f64], x: Option<&[f64]>, increasing: bool) -> TrendReport {
    let reduced = metrics::block_means(values, metrics::TREND_POINTS);
    let mk = metrics::mann_kendall(&reduced);
    let supported = mk.is_some_and(|m| if increasing { m.increasing(0.05) } else { m.decreasing(0.05) });
    TrendReport {
        mann_kendall: mk,
        slope: x.filter(|x| x.len() >= 2).map(|x| metrics::ols_slope(x, values)),
        expected: if increasing { "increasing" } else { "decreasing" }.into(),
        supported,
    }
}

pub fn report_run(data: &RunData) -> RunReport {
    let live: Vec<TickMetrics> = data.series.iter().copied().filter(|m| m.population > 0).collect();
    let nodes: Vec<f64> = data.complexity.iter().map(|p| p.mean_nodes).collect();
    let ticks: Vec<f64> = data.complexity.iter().map(|p| p.tick as f64).collect();
    let eff: Vec<f64> = data.efficiency.iter().map(|&(_, x)| x).collect();
    let eff_ticks: Vec<f64> = data.efficiency.iter().map(|&(t, _)| t as f64).collect();
    RunReport {
        dir: data.dir.clone(),
        master_seed: data.manifest.master_seed,
        ticks_with_units: live.len(),
        final_tick: data.final_tick,
        final_population: data.final_genomes.len(),
        collapsed: data.final_genomes.is_empty(),
        specialization: metrics::entropy_trend(&live),
        noise_avoidance: metrics::noise_trend(&live),
        trophic_formed: data.trophic.histogram.len() >= 2,
        trophic_levels: data.trophic.histogram.clone(),
        trophic_flow: data.trophic.flow.clone(),
        complexity: trend(&nodes, Some(&ticks), true),
        efficiency: trend(&eff, Some(&eff_ticks), false),
    }
}

/// Every ordered pair of runs `a < b` with surviving populations.
pub fn divergence(runs: &[RunData]) -> Divergence {
    if runs.len() < 2 {
        return Divergence::RequiresTwoRuns;
    }
    let mut pairs = Vec::new();
    for a in 0..runs.len() {
        for b in a + 1..runs.len() {
            let (ra, rb) = (&runs[a], &runs[b]);
            if ra.final_genomes.is_empty() || rb.final_genomes.is_empty() {
                continue;
            }
            let cap = ra.manifest.config.physics.weight_cap;
            let node_max = ra.manifest.config.world.node_max;
            let seed = pair_seed(ra.manifest.master_seed, rb.manifest.master_seed);
            let (inter, intra) = metrics::path_divergence(&ra.final_genomes, &rb.final_genomes, seed, cap, node_max);
            pairs.push(DivergencePair { a, b, inter, intra, satisfied: inter > intra });
        }
    }
    let all_satisfied = !pairs.is_empty() && pairs.iter().all(|p| p.satisfied);
    Divergence::Measured { pairs, all_satisfied }
}

fn write_csv(path: &Path, header: &[&str], rows: impl Iterator<Item = Vec<String>>) -> Result<(), RunError> {
    let to_io = |e: csv::Error| RunError::Io { path: path.to_path_buf(), source: e.into() };
    let mut w = csv::Writer::from_path(path).map_err(to_io)?;
    w.write_record(header).map_err(to_io)?;
    for r in rows {
        w.write_record(r).map_err(to_io)?;
    }
    w.flush().map_err(io_err(path))
}

fn write_figures(out: &Path, i: usize, data: &RunData) -> Result<(), RunError> {
    let eff: BTreeMap<u64, f64> = data.efficiency.iter().copied().collect();
    write_csv(
        &out.join(format!("run{i}_series.csv")),
        &["tick", "population", "noise_fraction", "mean_entropy", "efficiency"],
        data.series.iter().map(|m| {
            vec![
                m.tick.to_string(),
                m.population.to_string(),
                m.noise_fraction.to_string(),
                m.mean_entropy.map(|h| h.to_string()).unwrap_or_default(),
                eff.get(&m.tick).map(|x| x.to_string()).unwrap_or_default(),
            ]
        }),
    )?;
    write_csv(
        &out.join(format!("run{i}_complexity.csv")),
        &["tick", "mean_nodes", "mean_edges"],
        data.complexity
            .iter()
            .map(|p| vec![p.tick.to_string(), p.mean_nodes.to_string(), p.mean_edges.to_string()]),
    )?;
    write_csv(
        &out.join(format!("run{i}_trophic_flow.csv")),
        &["from_level", "to_level", "gain"],
        data.trophic.flow.iter().enumerate().flat_map(|(from, row)| {
            row.iter()
                .enumerate()
                .filter(|&(_, &g)| g > 0.0)
                .map(move |(to, g)| vec![from.to_string(), to.to_string(), g.to_string()])
        }),
    )
}

/// Runs every metric over the given run directories and writes
/// `report.json` plus figure CSVs into `out`.
pub fn analyze(dirs: &[PathBuf], out: &Path) -> Result<Report, RunError> {
    if dirs.is_empty() {
        return Err(RunError::Data("analyze needs at least one run directory".into()));
    }
    let runs: Vec<RunData> = dirs.iter().map(|d| load_run(d)).collect::<Result<_, _>>()?;
    fs::create_dir_all(out).map_err(io_err(out))?;
    for (i, r) in runs.iter().enumerate() {
        write_figures(out, i, r)?;
    }
    let report = Report {
        format: REPORT_FORMAT.into(),
        code_version: CODE_VERSION.into(),
        notes: vec![
            "specialization entropy is taken over five buckets (four stream kinds plus emitter signals), range [0, log2 5]".into(),
            "noise avoidance and specialization compare the first tenth (first tick with gain for entropy) with the final tenth of ticks with units".into(),
            "level 0 in trophic flow rows stands for the raw streams".into(),
            "efficiency is energy spent per unit of error reduction below the naive baseline; lower is better".into(),
        ],
        runs: runs.iter().map(report_run).collect(),
        path_divergence: divergence(&runs),
    };
    write_json(&out.join("report.json"), &report)?;
    Ok(report)
}
