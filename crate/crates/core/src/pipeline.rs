//! End-to-end detection: grids, differences, blobs, tracks, membership.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::assign::{assign_points, track_size_series};
use crate::blob::{self, Blob, DetectParams, ThresholdScope};
use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::heatmap::{self, build_heatmap, difference_heatmap, reference_heatmap, HeatmapGrid};
use crate::ingest::{compute_extent, load_points, Extent, PeriodizedDataset};
use crate::link::{self, ConceptTrack, LinkParams, TrackFile};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReferenceWindow {
    /// The `R` periods immediately before the target period.
    Count(usize),
    /// Every dataset period before the target period.
    All,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ThresholdMode {
    Stack,
    Slice,
    Corpus,
}

/// Every knob of the detection pipeline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineParams {
    pub bins: usize,
    pub reference: ReferenceWindow,
    pub window: usize,
    pub lookback: usize,
    pub rho: f64,
    pub min_sigma: f64,
    pub max_sigma: f64,
    pub num_sigma: usize,
    pub truncate: f64,
    pub overlap: f64,
    pub threshold: ThresholdMode,
    pub link_dist: Option<f64>,
    pub min_appearances: usize,
    pub min_points: usize,
    /// Periods to scrutinise; `None` means every dataset period but the first.
    pub targets: Option<Vec<i64>>,
    pub dedup: bool,
}

impl Default for PipelineParams {
    fn default() -> Self {
        Self {
            bins: 400,
            reference: ReferenceWindow::Count(1),
            window: 10,
            lookback: 1,
            rho: 0.05,
            min_sigma: 2.0,
            max_sigma: 20.0,
            num_sigma: 10,
            truncate: blob::DEFAULT_TRUNCATE,
            overlap: blob::DEFAULT_OVERLAP,
            threshold: ThresholdMode::Stack,
            link_dist: None,
            min_appearances: 1,
            min_points: 0,
            targets: None,
            dedup: false,
        }
    }
}

impl PipelineParams {
    pub fn validate(&self) -> Result<()> {
        if self.bins == 0 {
            return Err(Error::Config("bins must be positive".into()));
        }
        if let ReferenceWindow::Count(0) = self.reference {
            return Err(Error::Config("ref_count must be positive".into()));
        }
        if self.window == 0 {
            return Err(Error::Config("window must be positive".into()));
        }
        if self.lookback == 0 {
            return Err(Error::Config("lookback must be positive".into()));
        }
        if !(self.rho > 0.0 && self.rho <= 1.0) {
            return Err(Error::Config(format!("rho must lie in (0, 1], got {}", self.rho)));
        }
        if self.min_appearances == 0 {
            return Err(Error::Config("min_appearances must be positive".into()));
        }
        if !(self.overlap >= 0.0 && self.overlap.is_finite()) {
            return Err(Error::Config("overlap must be non-negative".into()));
        }
        if let Some(d) = self.link_dist {
            if !(d > 0.0 && d.is_finite()) {
                return Err(Error::Config("link_dist must be positive".into()));
            }
        }
        self.sigmas().map_err(|e| Error::Config(e.to_string()))?;
        Ok(())
    }

    pub fn sigmas(&self) -> Result<Vec<f64>> {
        blob::sigma_grid(self.min_sigma, self.max_sigma, self.num_sigma)
    }

    pub fn link_params(&self) -> LinkParams {
        LinkParams {
            link_dist: self.link_dist,
            lookback: self.lookback,
        }
    }
}

/// Results of [`detect_concepts`].
#[derive(Debug, Clone, Default)]
pub struct PipelineOutput {
    pub extent: Option<Extent>,
    pub period_grids: Vec<HeatmapGrid>,
    pub reference_grids: Vec<HeatmapGrid>,
    pub difference_grids: Vec<HeatmapGrid>,
    /// Every blob detected, before linking.
    pub blobs: Vec<Blob>,
    /// Every linked track, unfiltered and unassigned.
    pub linked: Vec<ConceptTrack>,
    /// Tracks surviving the filters, with members assigned.
    pub tracks: Vec<ConceptTrack>,
    pub notes: Vec<String>,
}

/// Target periods to scrutinise.
pub fn target_periods(ds: &PeriodizedDataset, params: &PipelineParams) -> Vec<i64> {
    match &params.targets {
        Some(t) => t.clone(),
        None => ds.periods().iter().skip(1).copied().collect(),
    }
}

fn reference_periods(ds: &PeriodizedDataset, target: i64, window: ReferenceWindow) -> Vec<i64> {
    match window {
        ReferenceWindow::Count(r) => (1..=r as i64).map(|k| target - k).collect(),
        ReferenceWindow::All => ds.periods().iter().copied().filter(|&p| p < target).collect(),
    }
}

struct PairResult {
    difference: HeatmapGrid,
    stack: Option<blob::ScaleSpaceStack>,
}

/// Runs detection, linking, assignment and filtering in memory.
pub fn detect_concepts(
    ds: &PeriodizedDataset,
    params: &PipelineParams,
    keep_grids: bool,
) -> Result<PipelineOutput> {
    params.validate()?;
    let mut out = PipelineOutput::default();
    if ds.len() == 0 {
        out.notes.push("empty dataset: nothing to detect".into());
        return Ok(out);
    }
    let extent = compute_extent(ds)?;
    let m = params.bins;
    heatmap::cell_count(m, ds.dims()).ok_or_else(|| Error::Config("grid size overflows".into()))?;

    let grids: BTreeMap<i64, HeatmapGrid> = ds
        .iter_periods()
        .collect::<Vec<_>>()
        .into_par_iter()
        .map(|(p, pts)| build_heatmap(pts, &extent, m, p).map(|g| (p, g)))
        .collect::<Result<_>>()?;
    let empty = |p: i64| HeatmapGrid::zeros(extent.clone(), m, p);

    // (target, offset) pairs with their reference grids.
    let mut references = Vec::new();
    let mut pairs = Vec::new();
    for target in target_periods(ds, params) {
        let prior = reference_periods(ds, target, params.reference);
        if prior.is_empty() {
            out.notes.push(format!("period {target}: no earlier period to reference, skipped"));
            continue;
        }
        let prior_grids: Vec<HeatmapGrid> = prior
            .iter()
            .map(|&p| grids.get(&p).cloned().map_or_else(|| empty(p), Ok))
            .collect::<Result<_>>()?;
        let reference = reference_heatmap(&prior_grids, target)?;
        if reference.total_mass() == 0.0 {
            out.notes.push(format!(
                "period {target}: reference periods are empty, difference grids are all zero"
            ));
        }
        let idx = references.len();
        references.push(reference);
        for w in 0..params.window as i64 {
            let current = target + w;
            match grids.get(&current) {
                Some(g) if g.total_mass() > 0.0 => pairs.push((idx, current)),
                _ => out.notes.push(format!(
                    "period {target}, offset {w}: period {current} has no points, skipped"
                )),
            }
        }
    }

    let sigmas = params.sigmas()?;
    let corpus = params.threshold == ThresholdMode::Corpus;
    let compute = |&(r, current): &(usize, i64), keep_stack: bool| -> Result<PairResult> {
        let difference = difference_heatmap(&grids[&current], &references[r])?;
        let stack = blob::log_response_with(&difference, &sigmas, params.truncate)?;
        Ok(PairResult {
            difference,
            stack: keep_stack.then_some(stack),
        })
    };

    let corpus_max = if corpus {
        let maxima = pairs
            .par_iter()
            .map(|pair| Ok(compute(pair, true)?.stack.map_or(0.0, |s| s.max_response())))
            .collect::<Result<Vec<f64>>>()?;
        Some(maxima.into_iter().fold(0.0, f64::max))
    } else {
        None
    };
    let detect = DetectParams {
        rho: params.rho,
        overlap: params.overlap,
        scope: match params.threshold {
            ThresholdMode::Stack => ThresholdScope::Stack,
            ThresholdMode::Slice => ThresholdScope::Slice,
            ThresholdMode::Corpus => ThresholdScope::Fixed(corpus_max.unwrap_or(0.0)),
        },
    };
    let results = pairs
        .par_iter()
        .map(|pair| {
            let res = compute(pair, true)?;
            let stack = res.stack.expect("stack kept");
            let blobs = blob::detect_blobs_with(&stack, &detect)?;
            Ok((res.difference, blobs))
        })
        .collect::<Result<Vec<_>>>()?;

    for (difference, blobs) in results {
        out.blobs.extend(blobs);
        if keep_grids {
            out.difference_grids.push(difference);
        }
    }
    if keep_grids {
        out.period_grids = grids.into_values().collect();
        out.reference_grids = references;
    }

    let linked = link::link_all(&out.blobs, &params.link_params())?;
    out.linked = linked.clone();
    let mut tracks = link::filter_tracks(linked, params.min_appearances, 0)?;
    tracks = assign_points(tracks, ds, &extent, m)?;
    tracks = link::filter_tracks(tracks, params.min_appearances, params.min_points)?;
    if params.dedup {
        let dist = params.link_dist.unwrap_or(params.min_sigma * std::f64::consts::SQRT_2);
        tracks = link::dedup_across_periods(tracks, dist);
    }
    link::renumber(&mut tracks);
    out.tracks = tracks;
    out.extent = Some(extent);
    Ok(out)
}

#[derive(Debug, Serialize)]
struct SeriesEntry {
    track_id: usize,
    ref_period: i64,
    series: Vec<(i64, usize)>,
}

/// Summary written as `report.json`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunReport {
    pub config: serde_json::Value,
    pub points: usize,
    pub periods: usize,
    pub blobs: usize,
    pub linked_tracks: usize,
    pub tracks: usize,
    pub notes: Vec<String>,
}

pub const STALE_MARKER: &str = "STALE";

/// Runs the pipeline on `config.input` and writes every stage artifact under
/// `config.out_dir`. A `STALE` marker exists while the run is in progress and
/// stays behind if it fails.
pub fn run_to_dir(config: &RunConfig) -> Result<RunReport> {
    let input = config
        .input
        .as_ref()
        .ok_or_else(|| Error::Config("no input file given".into()))?;
    let ds = load_points(input, config.dims)?;
    run_dataset_to_dir(&ds, config)
}

pub fn run_dataset_to_dir(ds: &PeriodizedDataset, config: &RunConfig) -> Result<RunReport> {
    config.params.validate()?;
    let out_dir = &config.out_dir;
    fs::create_dir_all(out_dir)?;
    let marker = out_dir.join(STALE_MARKER);
    fs::write(&marker, b"run in progress or failed\n")?;

    let echo = serde_json::to_value(config)?;
    let output = detect_concepts(ds, &config.params, config.write_grids)?;

    if config.write_grids {
        let grid_dir = out_dir.join("grids");
        fs::create_dir_all(&grid_dir)?;
        for entry in fs::read_dir(&grid_dir)? {
            let path = entry?.path();
            if path.extension().is_some_and(|e| e == "hmap") {
                fs::remove_file(path)?;
            }
        }
        for g in output
            .period_grids
            .iter()
            .chain(&output.reference_grids)
            .chain(&output.difference_grids)
        {
            heatmap::write_grid(grid_dir.join(grid_file_name(g)), g)?;
        }
        write_json(&grid_dir.join("manifest.json"), &serde_json::json!({
            "config": echo,
            "extent": output.extent,
            "bins": config.params.bins,
        }))?;
    }

    let mut blob_out = BufWriter::new(File::create(out_dir.join("blobs.jsonl"))?);
    blob::write_blobs(&output.blobs, &mut blob_out)?;
    write_json(&sidecar(&out_dir.join("blobs.jsonl")), &serde_json::json!({ "config": echo }))?;

    write_json(
        &out_dir.join("tracks.json"),
        &TrackFile {
            config: echo.clone(),
            tracks: output.tracks.clone(),
        },
    )?;
    let series = output
        .tracks
        .iter()
        .map(|t| {
            Ok(SeriesEntry {
                track_id: t.id,
                ref_period: t.ref_period,
                series: track_size_series(t)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    write_json(
        &out_dir.join("series.json"),
        &serde_json::json!({ "config": echo, "series": series }),
    )?;

    let report = RunReport {
        config: echo,
        points: ds.len(),
        periods: ds.periods().len(),
        blobs: output.blobs.len(),
        linked_tracks: output.linked.len(),
        tracks: output.tracks.len(),
        notes: output.notes,
    };
    write_json(&out_dir.join("report.json"), &report)?;
    fs::remove_file(marker)?;
    Ok(report)
}

/// File name of a grid inside a grid directory.
pub fn grid_file_name(g: &HeatmapGrid) -> String {
    let p = g.provenance();
    match (g.kind(), p.offset) {
        (heatmap::GridKind::Period, _) => format!("period_{}.hmap", p.period),
        (heatmap::GridKind::Reference, _) => format!("reference_{}.hmap", p.period),
        (heatmap::GridKind::Difference, w) => {
            format!("difference_{}_{}.hmap", p.period, w.unwrap_or(0))
        }
    }
}

/// `<file>.config.json` next to a JSONL artifact.
pub fn sidecar(path: &Path) -> PathBuf {
    let mut name = path.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".config.json");
    path.with_file_name(name)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value)?;
    use std::io::Write;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}
