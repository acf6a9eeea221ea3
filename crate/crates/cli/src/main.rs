use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use emergescope_core::assign::{assign_points, group_salience, track_size_series, SeatTable};
use emergescope_core::blob::{self, DetectParams, ThresholdScope};
use emergescope_core::config::RunConfig;
use emergescope_core::eval::{self, EvalConfig, DEFAULT_SWEEP};
use emergescope_core::heatmap::{self, GridKind, HeatmapGrid};
use emergescope_core::ingest::{self, compute_extent, load_points, Extent};
use emergescope_core::link::{self, LinkParams, TrackFile};
use emergescope_core::pipeline::{self, PipelineParams, ReferenceWindow, ThresholdMode};
use emergescope_core::render;
use serde_json::json;

const EXIT_CONFIG: u8 = 2;
const EXIT_IO: u8 = 3;
const EXIT_STAGE: u8 = 4;

#[derive(Parser)]
#[command(name = "emergescope", version, about = "Detect emerging concepts in time-partitioned embeddings")]
struct Cli {
    /// Worker threads for stage-internal parallelism.
    #[arg(long, global = true, env = "EMERGESCOPE_THREADS")]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Validate a point file and summarise it.
    Ingest(IngestArgs),
    /// Build period, reference and difference grids.
    Heatmap(HeatmapArgs),
    /// Detect blobs in difference grids.
    Detect(DetectArgs),
    /// Link blobs into concept tracks.
    Link(LinkArgs),
    /// Assign points to tracks.
    Track(TrackArgs),
    /// Group salience of assigned tracks.
    Salience(SalienceArgs),
    /// Synthetic injection evaluation.
    Eval(EvalCommand),
    /// Render a 2-D grid as a 16-bit PGM image.
    Render(RenderArgs),
    /// Run every stage end to end.
    Run(RunArgs),
}

#[derive(Args)]
struct IngestArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long, default_value_t = 2)]
    dims: usize,
    /// Only check the file, print nothing but a count.
    #[arg(long)]
    validate_only: bool,
    /// Write the validated points back, grouped by period.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Clone)]
struct ReferenceArgs {
    /// Number of preceding periods in the reference (R).
    #[arg(long, default_value_t = 1, conflicts_with = "ref_all")]
    ref_count: usize,
    /// Use every preceding period as reference.
    #[arg(long)]
    ref_all: bool,
    /// Window size W: offsets 0..W after each target period.
    #[arg(long, default_value_t = 10)]
    window: usize,
    /// Target periods (comma separated); default every period but the first.
    #[arg(long, value_delimiter = ',')]
    periods: Option<Vec<i64>>,
}

impl ReferenceArgs {
    fn reference(&self) -> ReferenceWindow {
        if self.ref_all {
            ReferenceWindow::All
        } else {
            ReferenceWindow::Count(self.ref_count)
        }
    }
}

#[derive(Args)]
struct HeatmapArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long, default_value_t = 2)]
    dims: usize,
    /// Bins per dimension (m).
    #[arg(long, default_value_t = 400)]
    bins: usize,
    #[arg(long)]
    out_dir: PathBuf,
    #[command(flatten)]
    reference: ReferenceArgs,
}

#[derive(Clone, Copy, ValueEnum)]
enum Scope {
    Stack,
    Slice,
    Corpus,
}

#[derive(Args, Clone)]
struct SigmaArgs {
    #[arg(long, default_value_t = 2.0)]
    min_sigma: f64,
    #[arg(long, default_value_t = 20.0)]
    max_sigma: f64,
    #[arg(long, default_value_t = 10)]
    num_sigma: usize,
    #[arg(long, default_value_t = blob::DEFAULT_TRUNCATE)]
    truncate: f64,
    /// Overlap fraction for pruning.
    #[arg(long, default_value_t = blob::DEFAULT_OVERLAP)]
    overlap: f64,
}

#[derive(Args)]
struct DetectArgs {
    #[arg(long)]
    grids: PathBuf,
    /// Relative threshold ρ*.
    #[arg(long, default_value_t = 0.05)]
    rho: f64,
    #[command(flatten)]
    sigma: SigmaArgs,
    /// What maximum ρ* is relative to.
    #[arg(long, value_enum, default_value_t = Scope::Stack)]
    threshold: Scope,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct LinkArgs {
    #[arg(long)]
    blobs: PathBuf,
    /// Link distance d in bins; default is the earlier blob's radius.
    #[arg(long)]
    link_dist: Option<f64>,
    /// Maximum offset gap Q.
    #[arg(long, default_value_t = 1)]
    lookback: usize,
    #[arg(long, default_value_t = 1)]
    min_appearances: usize,
    /// Drop tracks repeating a region tracked from an earlier period.
    #[arg(long)]
    dedup: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrackArgs {
    #[arg(long)]
    tracks: PathBuf,
    #[arg(long)]
    input: PathBuf,
    #[arg(long, default_value_t = 2)]
    dims: usize,
    /// Bins per dimension used when the grids were built.
    #[arg(long, default_value_t = 400)]
    bins: usize,
    /// Read extent and bins from this grid directory's manifest instead.
    #[arg(long)]
    grids: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    min_points: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SalienceArgs {
    #[arg(long)]
    assigned: PathBuf,
    /// Label dimension holding the group, e.g. `party`.
    #[arg(long)]
    label: String,
    #[arg(long)]
    seats: PathBuf,
    /// Point file; defaults to the input recorded in the assigned file.
    #[arg(long)]
    input: Option<PathBuf>,
    #[arg(long, default_value_t = 2)]
    dims: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
#[command(args_conflicts_with_subcommands = true)]
struct EvalCommand {
    #[command(subcommand)]
    mode: Option<EvalMode>,
    #[command(flatten)]
    args: EvalArgs,
}

#[derive(Subcommand)]
enum EvalMode {
    /// Evaluate once per ρ* value.
    Sweep(EvalArgs),
}

#[derive(Args, Clone)]
struct EvalArgs {
    #[arg(long, default_value_t = 10_000)]
    baseline_points: usize,
    #[arg(long, default_value_t = 11)]
    periods: usize,
    #[arg(long, default_value_t = 8)]
    concepts: usize,
    #[arg(long, default_value_t = 100)]
    n_per_concept: usize,
    /// Concept standard deviation as a fraction of the extent.
    #[arg(long, default_value_t = 0.02)]
    spread: f64,
    /// ρ*; a comma-separated list for `sweep`.
    #[arg(long, value_delimiter = ',')]
    rho: Vec<f64>,
    #[arg(long, default_value_t = 10)]
    window: usize,
    #[arg(long, default_value_t = 1)]
    lookback: usize,
    #[arg(long, default_value_t = 400)]
    bins: usize,
    #[arg(long, default_value_t = 2)]
    min_appearances: usize,
    /// Detection settings below default to the harness's own tuning.
    #[arg(long)]
    min_points: Option<usize>,
    #[arg(long)]
    link_dist: Option<f64>,
    #[arg(long)]
    min_sigma: Option<f64>,
    #[arg(long)]
    max_sigma: Option<f64>,
    #[arg(long)]
    num_sigma: Option<usize>,
    #[arg(long)]
    truncate: Option<f64>,
    #[arg(long)]
    overlap: Option<f64>,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct RenderArgs {
    #[arg(long)]
    grid: PathBuf,
    #[arg(long, default_value_t = 1.0)]
    gamma: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct RunArgs {
    /// Key-value config file; flags below override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    input: Option<PathBuf>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
    #[arg(long)]
    dims: Option<usize>,
    #[arg(long)]
    bins: Option<usize>,
    #[arg(long, conflicts_with = "ref_all")]
    ref_count: Option<usize>,
    #[arg(long)]
    ref_all: bool,
    #[arg(long)]
    window: Option<usize>,
    #[arg(long)]
    lookback: Option<usize>,
    #[arg(long)]
    rho: Option<f64>,
    #[arg(long)]
    min_sigma: Option<f64>,
    #[arg(long)]
    max_sigma: Option<f64>,
    #[arg(long)]
    num_sigma: Option<usize>,
    #[arg(long)]
    overlap: Option<f64>,
    #[arg(long)]
    link_dist: Option<f64>,
    #[arg(long)]
    min_appearances: Option<usize>,
    #[arg(long)]
    min_points: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    periods: Option<Vec<i64>>,
    /// Fad preset: W = 1.
    #[arg(long, conflicts_with = "rediscovery")]
    fad: bool,
    /// Rediscovery preset: W = 30, Q = 20.
    #[arg(long)]
    rediscovery: bool,
    /// Skip writing grid files.
    #[arg(long)]
    no_grids: bool,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}

fn exit_code(err: &anyhow::Error) -> u8 {
    use emergescope_core::Error as E;
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<E>() {
            return match e {
                E::Io(_) => EXIT_IO,
                E::Config(_) | E::InvalidArgument(_) => EXIT_CONFIG,
                _ => EXIT_STAGE,
            };
        }
        if cause.downcast_ref::<std::io::Error>().is_some() {
            return EXIT_IO;
        }
        if cause.downcast_ref::<ConfigError>().is_some() {
            return EXIT_CONFIG;
        }
    }
    EXIT_STAGE
}

#[derive(Debug)]
struct ConfigError(String);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

fn config_err(msg: impl Into<String>) -> anyhow::Error {
    anyhow::Error::new(ConfigError(msg.into()))
}

fn dispatch(cli: Cli) -> Result<()> {
    if let Some(threads) = cli.threads {
        if threads == 0 {
            return Err(config_err("--threads must be positive"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .context("configuring thread pool")?;
    }
    match cli.command {
        Command::Ingest(a) => cmd_ingest(a),
        Command::Heatmap(a) => cmd_heatmap(a),
        Command::Detect(a) => cmd_detect(a),
        Command::Link(a) => cmd_link(a),
        Command::Track(a) => cmd_track(a),
        Command::Salience(a) => cmd_salience(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Render(a) => cmd_render(a),
        Command::Run(a) => cmd_run(a),
    }
}

fn cmd_ingest(a: IngestArgs) -> Result<()> {
    let ds = load_points(&a.input, a.dims).context("stage ingest")?;
    if a.validate_only {
        println!("ok: {} points in {} periods", ds.len(), ds.periods().len());
        return Ok(());
    }
    let extent = if ds.len() > 0 { Some(compute_extent(&ds)?) } else { None };
    let counts: BTreeMap<String, usize> = ds
        .iter_periods()
        .map(|(p, pts)| (p.to_string(), pts.len()))
        .collect();
    if let Some(out) = &a.out {
        let w = BufWriter::new(File::create(out).with_context(|| format!("creating {}", out.display()))?);
        ingest::write_points(&ds, w)?;
    }
    println!(
        "{}",
        serde_json::to_string_pretty(&json!({
            "points": ds.len(),
            "dims": ds.dims(),
            "periods": counts,
            "extent": extent,
        }))?
    );
    Ok(())
}

#[derive(serde::Serialize, serde::Deserialize)]
struct Manifest {
    config: serde_json::Value,
    extent: Option<Extent>,
    bins: usize,
}

fn cmd_heatmap(a: HeatmapArgs) -> Result<()> {
    let ds = load_points(&a.input, a.dims).context("stage ingest")?;
    let params = PipelineParams {
        bins: a.bins,
        reference: a.reference.reference(),
        window: a.reference.window,
        targets: a.reference.periods.clone(),
        ..PipelineParams::default()
    };
    params.validate()?;
    fs::create_dir_all(&a.out_dir)?;
    if ds.len() == 0 {
        write_manifest(&a.out_dir, &params, None, a.bins, &a.input)?;
        eprintln!("no points: no grids written");
        return Ok(());
    }
    let extent = compute_extent(&ds)?;
    let grids: BTreeMap<i64, HeatmapGrid> = ds
        .iter_periods()
        .map(|(p, pts)| Ok((p, heatmap::build_heatmap(pts, &extent, a.bins, p)?)))
        .collect::<emergescope_core::Result<_>>()
        .context("stage heatmap")?;
    let mut written = 0;
    for g in grids.values() {
        heatmap::write_grid(a.out_dir.join(pipeline::grid_file_name(g)), g)?;
        written += 1;
    }
    for target in pipeline::target_periods(&ds, &params) {
        let prior: Vec<i64> = match params.reference {
            ReferenceWindow::Count(r) => (1..=r as i64).map(|k| target - k).collect(),
            ReferenceWindow::All => ds.periods().iter().copied().filter(|&p| p < target).collect(),
        };
        if prior.is_empty() {
            continue;
        }
        let prior_grids: Vec<HeatmapGrid> = prior
            .iter()
            .map(|&p| match grids.get(&p) {
                Some(g) => Ok(g.clone()),
                None => HeatmapGrid::zeros(extent.clone(), a.bins, p),
            })
            .collect::<emergescope_core::Result<_>>()?;
        let reference = heatmap::reference_heatmap(&prior_grids, target).context("stage reference")?;
        heatmap::write_grid(a.out_dir.join(pipeline::grid_file_name(&reference)), &reference)?;
        written += 1;
        for w in 0..params.window as i64 {
            let Some(current) = grids.get(&(target + w)) else { continue };
            let diff = heatmap::difference_heatmap(current, &reference).context("stage difference")?;
            heatmap::write_grid(a.out_dir.join(pipeline::grid_file_name(&diff)), &diff)?;
            written += 1;
        }
    }
    write_manifest(&a.out_dir, &params, Some(extent), a.bins, &a.input)?;
    eprintln!("wrote {written} grids to {}", a.out_dir.display());
    Ok(())
}

fn write_manifest(
    dir: &Path,
    params: &PipelineParams,
    extent: Option<Extent>,
    bins: usize,
    input: &Path,
) -> Result<()> {
    let manifest = Manifest {
        config: json!({ "input": input, "params": params }),
        extent,
        bins,
    };
    pipeline::write_json(&dir.join("manifest.json"), &manifest)?;
    Ok(())
}

fn sigma_list(s: &SigmaArgs) -> Result<Vec<f64>> {
    blob::sigma_grid(s.min_sigma, s.max_sigma, s.num_sigma).map_err(|e| config_err(e.to_string()))
}

fn cmd_detect(a: DetectArgs) -> Result<()> {
    let sigmas = sigma_list(&a.sigma)?;
    if !(a.rho > 0.0 && a.rho <= 1.0) {
        return Err(config_err(format!("--rho must lie in (0, 1], got {}", a.rho)));
    }
    let mut paths: Vec<PathBuf> = fs::read_dir(&a.grids)
        .with_context(|| format!("reading {}", a.grids.display()))?
        .map(|e| e.map(|e| e.path()))
        .collect::<std::io::Result<_>>()?;
    paths.retain(|p| p.extension().is_some_and(|e| e == "hmap"));
    paths.sort();
    let mut diffs = Vec::new();
    for p in paths {
        let g = heatmap::read_grid(&p).with_context(|| format!("reading {}", p.display()))?;
        if g.kind() == GridKind::Difference {
            diffs.push(g);
        }
    }
    let stacks: Vec<_> = diffs
        .iter()
        .map(|g| blob::log_response_with(g, &sigmas, a.sigma.truncate))
        .collect::<emergescope_core::Result<_>>()
        .context("stage detect")?;
    let scope = match a.threshold {
        Scope::Stack => ThresholdScope::Stack,
        Scope::Slice => ThresholdScope::Slice,
        Scope::Corpus => ThresholdScope::Fixed(
            stacks.iter().map(|s| s.max_response()).fold(0.0, f64::max),
        ),
    };
    let params = DetectParams {
        rho: a.rho,
        overlap: a.sigma.overlap,
        scope,
    };
    let mut blobs = Vec::new();
    for s in &stacks {
        blobs.extend(blob::detect_blobs_with(s, &params).context("stage detect")?);
    }
    let w = BufWriter::new(File::create(&a.out)?);
    blob::write_blobs(&blobs, w)?;
    pipeline::write_json(
        &pipeline::sidecar(&a.out),
        &json!({ "config": {
            "grids": a.grids, "rho": a.rho, "sigmas": sigmas, "truncate": a.sigma.truncate,
            "overlap": a.sigma.overlap, "threshold": scope,
        }}),
    )?;
    eprintln!("{} blobs from {} difference grids", blobs.len(), diffs.len());
    Ok(())
}

fn cmd_link(a: LinkArgs) -> Result<()> {
    let file = File::open(&a.blobs).with_context(|| format!("opening {}", a.blobs.display()))?;
    let blobs = blob::read_blobs(BufReader::new(file)).context("stage link")?;
    let params = LinkParams {
        link_dist: a.link_dist,
        lookback: a.lookback,
    };
    let linked = link::link_all(&blobs, &params).context("stage link")?;
    let mut tracks = link::filter_tracks(linked, a.min_appearances, 0).context("stage link")?;
    if a.dedup {
        tracks = link::dedup_across_periods(tracks, a.link_dist.unwrap_or(2.0 * std::f64::consts::SQRT_2));
    }
    link::renumber(&mut tracks);
    let n = tracks.len();
    pipeline::write_json(
        &a.out,
        &TrackFile {
            config: json!({
                "blobs": a.blobs, "link_dist": a.link_dist, "lookback": a.lookback,
                "min_appearances": a.min_appearances, "dedup": a.dedup,
            }),
            tracks,
        },
    )?;
    eprintln!("{n} tracks");
    Ok(())
}

fn read_track_file(path: &Path) -> Result<TrackFile> {
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    Ok(TrackFile::parse(BufReader::new(file))?)
}

fn cmd_track(a: TrackArgs) -> Result<()> {
    let file = read_track_file(&a.tracks)?;
    let ds = load_points(&a.input, a.dims).context("stage ingest")?;
    let (extent, bins) = match &a.grids {
        Some(dir) => {
            let manifest: Manifest = serde_json::from_reader(BufReader::new(
                File::open(dir.join("manifest.json")).context("opening grid manifest")?,
            ))?;
            (manifest.extent, manifest.bins)
        }
        None => ((ds.len() > 0).then(|| compute_extent(&ds)).transpose()?, a.bins),
    };
    let tracks = match extent {
        Some(extent) => assign_points(file.tracks, &ds, &extent, bins).context("stage track")?,
        None if file.tracks.is_empty() => Vec::new(),
        None => bail!("tracks given but the point file is empty"),
    };
    let mut tracks = link::filter_tracks(tracks, 1, a.min_points)?;
    link::renumber(&mut tracks);
    let series: Vec<_> = tracks
        .iter()
        .map(|t| Ok(json!({ "track_id": t.id, "series": track_size_series(t)? })))
        .collect::<emergescope_core::Result<_>>()?;
    let n = tracks.len();
    pipeline::write_json(
        &a.out,
        &json!({
            "config": { "tracks": a.tracks, "input": a.input, "dims": a.dims, "bins": bins,
                        "min_points": a.min_points, "upstream": file.config },
            "tracks": tracks,
            "series": series,
        }),
    )?;
    eprintln!("{n} assigned tracks");
    Ok(())
}

fn cmd_salience(a: SalienceArgs) -> Result<()> {
    let file = read_track_file(&a.assigned)?;
    let input = match &a.input {
        Some(p) => p.clone(),
        None => file
            .config
            .get("input")
            .and_then(|v| v.as_str())
            .map(PathBuf::from)
            .ok_or_else(|| config_err("assigned file records no input; pass --input"))?,
    };
    let ds = load_points(&input, a.dims).context("stage ingest")?;
    let seats = SeatTable::parse(BufReader::new(
        File::open(&a.seats).with_context(|| format!("opening {}", a.seats.display()))?,
    ))
    .context("reading seat counts")?;
    let report = group_salience(&file.tracks, &ds, &a.label, &seats).context("stage salience")?;
    if !report.inflated.is_empty() {
        eprintln!(
            "warning: multi-track membership pushes Q above 1 for {} group-periods",
            report.inflated.len()
        );
    }
    pipeline::write_json(
        &a.out,
        &json!({
            "config": { "assigned": a.assigned, "input": input, "label": a.label, "seats": a.seats },
            "report": report,
        }),
    )?;
    Ok(())
}

fn eval_config(a: &EvalArgs, rho: f64) -> Result<EvalConfig> {
    let mut pipeline = eval::eval_pipeline_defaults(a.window, a.lookback);
    pipeline.rho = rho;
    pipeline.bins = a.bins;
    pipeline.min_appearances = a.min_appearances;
    pipeline.link_dist = a.link_dist;
    let p = &mut pipeline;
    if let Some(v) = a.min_points {
        p.min_points = v;
    }
    if let Some(v) = a.min_sigma {
        p.min_sigma = v;
    }
    if let Some(v) = a.max_sigma {
        p.max_sigma = v;
    }
    if let Some(v) = a.num_sigma {
        p.num_sigma = v;
    }
    if let Some(v) = a.truncate {
        p.truncate = v;
    }
    if let Some(v) = a.overlap {
        p.overlap = v;
    }
    pipeline.validate()?;
    Ok(EvalConfig {
        baseline_points: a.baseline_points,
        periods: a.periods,
        concepts: a.concepts,
        n_per_concept: a.n_per_concept,
        spread_frac: a.spread,
        seed: a.seed,
        pipeline,
    })
}

fn cmd_eval(c: EvalCommand) -> Result<()> {
    match c.mode {
        None => {
            let a = c.args;
            let rho = match a.rho.as_slice() {
                [] => 0.05,
                [r] => *r,
                _ => return Err(config_err("several --rho values: use `eval sweep`")),
            };
            let cfg = eval_config(&a, rho)?;
            let report = eval::evaluate(&cfg).context("stage eval")?;
            eprintln!(
                "precision {:.3} recall {:.3} f1 {:.3} ({} tracks)",
                report.precision, report.recall, report.f1, report.detected
            );
            pipeline::write_json(&a.out, &report)?;
        }
        Some(EvalMode::Sweep(a)) => {
            let rhos = if a.rho.is_empty() { DEFAULT_SWEEP.to_vec() } else { a.rho.clone() };
            let cfg = eval_config(&a, rhos[0])?;
            let (ds, truths) = eval::build_synthetic(&cfg).context("stage eval")?;
            let rows = eval::rho_sweep(&ds, &truths, &rhos, &cfg.pipeline).context("stage eval")?;
            for row in &rows {
                eprintln!(
                    "rho {:<5} precision {:.3} recall {:.3} f1 {:.3} ({} tracks)",
                    row.rho, row.report.precision, row.report.recall, row.report.f1, row.report.detected
                );
            }
            pipeline::write_json(
                &a.out,
                &json!({
                    "config": cfg,
                    "rho": rhos,
                    "rows": rows.iter().map(|r| json!({
                        "rho": r.rho, "precision": r.report.precision, "recall": r.report.recall,
                        "f1": r.report.f1, "detected": r.report.detected, "matches": r.report.matches,
                    })).collect::<Vec<_>>(),
                }),
            )?;
        }
    }
    Ok(())
}

fn cmd_render(a: RenderArgs) -> Result<()> {
    let grid = heatmap::read_grid(&a.grid).with_context(|| format!("reading {}", a.grid.display()))?;
    render::render_heatmap_image(&grid, a.gamma, &a.out).context("stage render")?;
    Ok(())
}

fn cmd_run(a: RunArgs) -> Result<()> {
    let mut cfg = match &a.config {
        Some(path) => {
            let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            RunConfig::from_text(&text)?
        }
        None => RunConfig::default(),
    };
    let p = &mut cfg.params;
    if a.fad {
        p.window = 1;
    }
    if a.rediscovery {
        p.window = 30;
        p.lookback = 20;
    }
    macro_rules! over {
        ($($field:ident => $target:expr),* $(,)?) => {
            $(if let Some(v) = a.$field.clone() { $target = v; })*
        };
    }
    over!(
        bins => p.bins,
        window => p.window,
        lookback => p.lookback,
        rho => p.rho,
        min_sigma => p.min_sigma,
        max_sigma => p.max_sigma,
        num_sigma => p.num_sigma,
        overlap => p.overlap,
        min_appearances => p.min_appearances,
        min_points => p.min_points,
    );
    if let Some(r) = a.ref_count {
        p.reference = ReferenceWindow::Count(r);
    }
    if a.ref_all {
        p.reference = ReferenceWindow::All;
    }
    if a.link_dist.is_some() {
        p.link_dist = a.link_dist;
    }
    if a.periods.is_some() {
        p.targets = a.periods.clone();
    }
    if let Some(i) = a.input {
        cfg.input = Some(i);
    }
    if let Some(o) = a.out_dir {
        cfg.out_dir = o;
    }
    if let Some(d) = a.dims {
        cfg.dims = d;
    }
    if a.no_grids {
        cfg.write_grids = false;
    }
    cfg.validate()?;
    if cfg.input.is_none() {
        return Err(config_err("no input: pass --input or set `input` in the config"));
    }
    let report = pipeline::run_to_dir(&cfg).context("stage run")?;
    if cfg.params.threshold == ThresholdMode::Corpus {
        eprintln!("threshold relative to the corpus-wide maximum");
    }
    eprintln!(
        "{} points, {} blobs, {} linked tracks, {} kept; outputs in {}",
        report.points,
        report.blobs,
        report.linked_tracks,
        report.tracks,
        cfg.out_dir.display()
    );
    Ok(())
}
