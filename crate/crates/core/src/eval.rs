//! Synthetic injection harness.
//!
//! A baseline of uniform points is spread over shuffled periods, so it holds
//! no temporally correlated structure. Gaussian concept clusters are then
//! injected, split evenly over consecutive periods, and the detector is scored
//! against them:
//!
//! - a track matches a concept when more than half of its members are that
//!   concept's injected points;
//! - recall counts concepts with at least one matching track;
//! - precision counts matching tracks, so a concept split in two contributes
//!   two true positives.

use std::collections::BTreeSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{Extent, PeriodizedDataset, PointRecord};
use crate::link::ConceptTrack;
use crate::pipeline::{detect_concepts, PipelineParams, ReferenceWindow};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InjectionSpec {
    pub center: Vec<f64>,
    /// Standard deviation per dimension.
    pub spread: Vec<f64>,
    pub n_total: usize,
    pub start_period: i64,
    pub span: usize,
}

impl InjectionSpec {
    fn validate(&self) -> Result<()> {
        if self.spread.len() != self.center.len() {
            return Err(Error::invalid("spread and center differ in dimensionality"));
        }
        if self.spread.iter().any(|s| !(*s > 0.0 && s.is_finite())) {
            return Err(Error::invalid("spread must be positive"));
        }
        if self.span == 0 || self.n_total < self.span {
            return Err(Error::invalid(format!(
                "{} points cannot cover {} periods",
                self.n_total, self.span
            )));
        }
        Ok(())
    }
}

/// Injected points of one concept.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub concept: usize,
    pub center: Vec<f64>,
    pub spread: Vec<f64>,
    pub periods: Vec<i64>,
    pub ids: BTreeSet<String>,
}

/// `n_total` split over `span` slots, remainder to the earliest.
pub fn split_counts(n_total: usize, span: usize) -> Vec<usize> {
    if span == 0 {
        return Vec::new();
    }
    let (base, rem) = (n_total / span, n_total % span);
    (0..span).map(|i| base + usize::from(i < rem)).collect()
}

/// Uniform points over `extent`, each assigned a uniformly random period
/// in `0..periods`.
pub fn synthesize_baseline(
    n_points: usize,
    periods: usize,
    extent: &Extent,
    seed: u64,
) -> Result<PeriodizedDataset> {
    if periods == 0 && n_points > 0 {
        return Err(Error::invalid("baseline points need at least one period"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let records: Vec<PointRecord> = (0..n_points)
        .map(|i| {
            let coords = extent
                .bounds()
                .iter()
                .map(|&(lo, hi)| lo + (hi - lo) * rng.gen::<f64>())
                .collect();
            let period = rng.gen_range(0..periods) as i64;
            PointRecord::new(format!("base-{i}"), period, coords)
        })
        .collect();
    PeriodizedDataset::from_records(extent.dims(), records)
}

/// Adds one Gaussian concept to `ds`. Ids are `c{concept}-{i}`.
pub fn inject_concept(
    ds: PeriodizedDataset,
    spec: &InjectionSpec,
    concept: usize,
    seed: u64,
) -> Result<(PeriodizedDataset, GroundTruth)> {
    spec.validate()?;
    let n = ds.dims();
    if spec.center.len() != n {
        return Err(Error::invalid("injection center has the wrong dimensionality"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normals: Vec<Normal<f64>> = spec
        .center
        .iter()
        .zip(&spec.spread)
        .map(|(&c, &s)| Normal::new(c, s).map_err(|e| Error::invalid(e.to_string())))
        .collect::<Result<_>>()?;

    let mut ids = BTreeSet::new();
    let mut periods = Vec::new();
    let mut records: Vec<PointRecord> = ds.into_records().collect();
    let mut k = 0;
    for (slot, count) in split_counts(spec.n_total, spec.span).into_iter().enumerate() {
        let period = spec.start_period + slot as i64;
        periods.push(period);
        for _ in 0..count {
            let id = format!("c{concept}-{k}");
            k += 1;
            let coords = normals.iter().map(|d| d.sample(&mut rng)).collect();
            ids.insert(id.clone());
            records.push(PointRecord::new(id, period, coords));
        }
    }
    let ds = PeriodizedDataset::from_records(n, records)?;
    Ok((
        ds,
        GroundTruth {
            concept,
            center: spec.center.clone(),
            spread: spec.spread.clone(),
            periods,
            ids,
        },
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthMatch {
    pub concept: usize,
    pub tracks: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    #[serde(default)]
    pub config: serde_json::Value,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub detected: usize,
    pub matches: Vec<TruthMatch>,
    pub spurious: Vec<usize>,
}

pub fn f1_score(precision: f64, recall: f64) -> f64 {
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

/// Scores assigned tracks against injected concepts by majority membership.
pub fn score(detected: &[ConceptTrack], truths: &[GroundTruth]) -> Result<EvalReport> {
    if truths.is_empty() {
        return Err(Error::invalid("no ground-truth concepts to score against"));
    }
    let mut matches: Vec<TruthMatch> = truths
        .iter()
        .map(|t| TruthMatch {
            concept: t.concept,
            tracks: Vec::new(),
        })
        .collect();
    let mut spurious = Vec::new();
    let mut hits = 0usize;
    for track in detected {
        if track.members.is_none() {
            return Err(Error::Unassigned(track.id));
        }
        let members = track.member_ids();
        let mut matched = false;
        for (truth, slot) in truths.iter().zip(matches.iter_mut()) {
            let injected = members.iter().filter(|id| truth.ids.contains(**id)).count();
            if 2 * injected > members.len() {
                slot.tracks.push(track.id);
                matched = true;
            }
        }
        if matched {
            hits += 1;
        } else {
            spurious.push(track.id);
        }
    }
    let found = matches.iter().filter(|m| !m.tracks.is_empty()).count();
    let recall = found as f64 / truths.len() as f64;
    let precision = if detected.is_empty() {
        0.0
    } else {
        hits as f64 / detected.len() as f64
    };
    Ok(EvalReport {
        config: serde_json::Value::Null,
        precision,
        recall,
        f1: f1_score(precision, recall),
        detected: detected.len(),
        matches,
        spurious,
    })
}

/// A full synthetic experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub baseline_points: usize,
    pub periods: usize,
    pub concepts: usize,
    pub n_per_concept: usize,
    /// Concept standard deviation as a fraction of the extent side.
    pub spread_frac: f64,
    pub seed: u64,
    pub pipeline: PipelineParams,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            baseline_points: 10_000,
            periods: 11,
            concepts: 8,
            n_per_concept: 100,
            spread_frac: 0.02,
            seed: 42,
            pipeline: eval_pipeline_defaults(10, 1),
        }
    }
}

/// Pipeline settings for the synthetic protocol: the first period is the
/// only reference, the second is scrutinised over `window` offsets, and
/// tracks must appear at least twice.
///
/// Detection is tuned to the default concept size. With a uniform Poisson
/// background the LoG signal-to-noise ratio of a Gaussian cluster of spread
/// `s` peaks at `σ = √3·s`, about 14 bins for `s = 0.02` on 400 bins; the σ
/// range brackets that. Wide pruning and a membership floor keep chance
/// alignments of background fluctuations from forming tracks.
pub fn eval_pipeline_defaults(window: usize, lookback: usize) -> PipelineParams {
    PipelineParams {
        reference: ReferenceWindow::Count(1),
        window,
        lookback,
        targets: Some(vec![1]),
        min_sigma: 12.0,
        max_sigma: 24.0,
        overlap: 2.0,
        min_appearances: 2,
        min_points: 30,
        ..PipelineParams::default()
    }
}

/// Baseline plus injected concepts over the unit square.
///
/// Concepts occupy periods `1..periods`; period 0 is pure baseline.
/// Centers keep five spreads from the border and ten spreads from each other.
pub fn build_synthetic(cfg: &EvalConfig) -> Result<(PeriodizedDataset, Vec<GroundTruth>)> {
    if cfg.periods < 2 {
        return Err(Error::invalid("the protocol needs a reference period and one more"));
    }
    if !(cfg.spread_frac > 0.0 && cfg.spread_frac < 0.1) {
        return Err(Error::invalid("spread fraction must lie in (0, 0.1)"));
    }
    let extent = Extent::new(vec![(0.0, 1.0), (0.0, 1.0)])?;
    let mut ds = synthesize_baseline(cfg.baseline_points, cfg.periods, &extent, cfg.seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_c0de_cafe_f00d);
    let margin = 5.0 * cfg.spread_frac;
    let separation = 10.0 * cfg.spread_frac;
    let mut centers: Vec<[f64; 2]> = Vec::new();
    let mut attempts = 0;
    while centers.len() < cfg.concepts {
        attempts += 1;
        if attempts > 100_000 {
            return Err(Error::invalid("cannot place that many separated concepts"));
        }
        let c = [
            rng.gen_range(margin..1.0 - margin),
            rng.gen_range(margin..1.0 - margin),
        ];
        if centers
            .iter()
            .all(|o| ((o[0] - c[0]).powi(2) + (o[1] - c[1]).powi(2)).sqrt() >= separation)
        {
            centers.push(c);
        }
    }
    let mut truths = Vec::with_capacity(cfg.concepts);
    for (k, c) in centers.iter().enumerate() {
        let spec = InjectionSpec {
            center: c.to_vec(),
            spread: vec![cfg.spread_frac; 2],
            n_total: cfg.n_per_concept,
            start_period: 1,
            span: cfg.periods - 1,
        };
        let (next, truth) = inject_concept(ds, &spec, k, rng.gen())?;
        ds = next;
        truths.push(truth);
    }
    Ok((ds, truths))
}

/// Runs detection on an injected dataset and scores it.
pub fn evaluate_dataset(
    ds: &PeriodizedDataset,
    truths: &[GroundTruth],
    params: &PipelineParams,
) -> Result<EvalReport> {
    let output = detect_concepts(ds, params, false)?;
    score(&output.tracks, truths)
}

pub fn evaluate(cfg: &EvalConfig) -> Result<EvalReport> {
    let (ds, truths) = build_synthetic(cfg)?;
    let mut report = evaluate_dataset(&ds, &truths, &cfg.pipeline)?;
    report.config = serde_json::to_value(cfg)?;
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub rho: f64,
    pub report: EvalReport,
}

/// Re-runs the pipeline once per `ρ*` on a fixed dataset.
pub fn rho_sweep(
    ds: &PeriodizedDataset,
    truths: &[GroundTruth],
    rho_values: &[f64],
    params: &PipelineParams,
) -> Result<Vec<SweepRow>> {
    if let Some(r) = rho_values.iter().find(|r| !(**r > 0.0 && **r <= 1.0)) {
        return Err(Error::invalid(format!("rho {r} outside (0, 1]")));
    }
    rho_values
        .par_iter()
        .map(|&rho| {
            let params = PipelineParams {
                rho,
                ..params.clone()
            };
            Ok(SweepRow {
                rho,
                report: evaluate_dataset(ds, truths, &params)?,
            })
        })
        .collect()
}

/// Default sweep values, covering the recommended `(0.2, 0.4)` band.
pub const DEFAULT_SWEEP: [f64; 5] = [0.05, 0.2, 0.3, 0.4, 0.8];
