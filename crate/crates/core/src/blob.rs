//! Scale-normalised Laplacian-of-Gaussian blob detection.
//!
//! A difference grid is smoothed with a separable Gaussian at each scale of a
//! σ grid, the discrete Laplacian is taken, and the result is multiplied by
//! `-σ²` so bright blobs give positive peaks of comparable height across
//! scales. Blobs are strict local maxima of the `(σ, position)` stack whose
//! response reaches `ρ*` times the stack maximum. All boundaries use
//! half-sample reflection (`d c b a | a b c d | d c b a`).

use std::io::{BufRead, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::heatmap::{cell_count, flat_index, unravel, GridKind, HeatmapGrid, Provenance};

pub const DEFAULT_TRUNCATE: f64 = 4.0;
pub const DEFAULT_OVERLAP: f64 = 0.5;

/// A detected density peak in one difference grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Blob {
    #[serde(rename = "p")]
    pub ref_period: i64,
    #[serde(rename = "w")]
    pub offset: i64,
    /// Bin multi-index of the peak.
    pub center: Vec<usize>,
    pub sigma: f64,
    pub intensity: f64,
}

impl Blob {
    /// Radius of the region the blob covers, `σ·√2`.
    pub fn radius(&self) -> f64 {
        self.sigma * std::f64::consts::SQRT_2
    }

    pub fn distance_to(&self, other: &Blob) -> f64 {
        center_distance(&self.center, &other.center)
    }
}

pub(crate) fn center_distance(a: &[usize], b: &[usize]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| {
            let d = x as f64 - y as f64;
            d * d
        })
        .sum::<f64>()
        .sqrt()
}

/// `num` log-spaced scales from `min` to `max` inclusive.
pub fn sigma_grid(min: f64, max: f64, num: usize) -> Result<Vec<f64>> {
    if !(min > 0.0 && min.is_finite() && max.is_finite() && min <= max) {
        return Err(Error::invalid(format!("bad sigma range [{min}, {max}]")));
    }
    match num {
        0 => Err(Error::invalid("need at least one sigma")),
        1 => Ok(vec![min]),
        _ if min == max => Err(Error::invalid("several sigmas need min < max")),
        _ => {
            let (a, b) = (min.ln(), max.ln());
            let mut out: Vec<f64> = (0..num)
                .map(|i| (a + (b - a) * i as f64 / (num - 1) as f64).exp())
                .collect();
            out[0] = min;
            out[num - 1] = max;
            Ok(out)
        }
    }
}

/// Normalised 1-D Gaussian sampled at integer offsets `-r..=r`,
/// `r = ceil(truncate·σ)`.
pub fn gaussian_kernel(sigma: f64, truncate: f64) -> Result<Vec<f64>> {
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::invalid(format!("sigma must be positive, got {sigma}")));
    }
    if !(truncate > 0.0 && truncate.is_finite()) {
        return Err(Error::invalid(format!("truncate must be positive, got {truncate}")));
    }
    let radius = (truncate * sigma).ceil() as i64;
    let two_var = 2.0 * sigma * sigma;
    let mut kernel: Vec<f64> = (-radius..=radius)
        .map(|k| (-((k * k) as f64) / two_var).exp())
        .collect();
    let sum: f64 = kernel.iter().sum();
    kernel.iter_mut().for_each(|v| *v /= sum);
    Ok(kernel)
}

#[inline]
fn reflect(i: isize, m: usize) -> usize {
    let m = m as isize;
    if i < 0 {
        (-i - 1) as usize
    } else if i >= m {
        (2 * m - 1 - i) as usize
    } else {
        i as usize
    }
}

/// Applies `kernel` along every axis of a grid in turn.
pub fn convolve_separable(grid: &HeatmapGrid, kernel: &[f64]) -> Result<Vec<f64>> {
    convolve_values(grid.values(), grid.bins(), grid.dims(), kernel)
}

/// [`convolve_separable`] on a raw row-major `m^n` buffer.
pub fn convolve_values(values: &[f64], m: usize, n: usize, kernel: &[f64]) -> Result<Vec<f64>> {
    if kernel.len() % 2 == 0 {
        return Err(Error::invalid("kernel length must be odd"));
    }
    if kernel.len() > 2 * m + 1 {
        return Err(Error::invalid(format!(
            "kernel of length {} exceeds 2·m+1 = {}",
            kernel.len(),
            2 * m + 1
        )));
    }
    check_len(values, m, n)?;
    let radius = kernel.len() / 2;
    let mut src = values.to_vec();
    let mut dst = vec![0.0; values.len()];
    let mut line = vec![0.0; m + 2 * radius];
    for axis in 0..n {
        let stride = m.pow((n - 1 - axis) as u32);
        let outer = values.len() / (stride * m);
        for o in 0..outer {
            for inner in 0..stride {
                let base = o * stride * m + inner;
                for (p, slot) in line.iter_mut().enumerate() {
                    let src_i = reflect(p as isize - radius as isize, m);
                    *slot = src[base + src_i * stride];
                }
                for i in 0..m {
                    let window = &line[i..i + kernel.len()];
                    dst[base + i * stride] = window.iter().zip(kernel).map(|(a, b)| a * b).sum();
                }
            }
        }
        std::mem::swap(&mut src, &mut dst);
    }
    Ok(src)
}

fn check_len(values: &[f64], m: usize, n: usize) -> Result<()> {
    match cell_count(m, n) {
        Some(len) if len == values.len() && m > 0 => Ok(()),
        _ => Err(Error::GeometryMismatch(format!(
            "{} values do not form an {m}^{n} grid",
            values.len()
        ))),
    }
}

/// Sum of second central differences along every axis, reflected at borders.
pub fn laplacian(values: &[f64], m: usize, n: usize) -> Result<Vec<f64>> {
    check_len(values, m, n)?;
    let mut out = vec![0.0; values.len()];
    for axis in 0..n {
        let stride = m.pow((n - 1 - axis) as u32);
        for (flat, acc) in out.iter_mut().enumerate() {
            let i = (flat / stride) % m;
            let prev = if i == 0 { flat } else { flat - stride };
            let next = if i + 1 == m { flat } else { flat + stride };
            *acc += values[prev] - 2.0 * values[flat] + values[next];
        }
    }
    Ok(out)
}

/// Scale-normalised LoG responses of one difference grid over a σ grid.
#[derive(Debug, Clone, PartialEq)]
pub struct ScaleSpaceStack {
    sigmas: Vec<f64>,
    m: usize,
    n: usize,
    responses: Vec<Vec<f64>>,
    provenance: Provenance,
}

impl ScaleSpaceStack {
    pub fn new(
        sigmas: Vec<f64>,
        m: usize,
        n: usize,
        responses: Vec<Vec<f64>>,
        provenance: Provenance,
    ) -> Result<Self> {
        check_sigmas(&sigmas)?;
        if responses.len() != sigmas.len() {
            return Err(Error::invalid("one response grid per sigma required"));
        }
        for r in &responses {
            check_len(r, m, n)?;
        }
        Ok(Self {
            sigmas,
            m,
            n,
            responses,
            provenance,
        })
    }

    pub fn sigmas(&self) -> &[f64] {
        &self.sigmas
    }

    pub fn responses(&self) -> &[Vec<f64>] {
        &self.responses
    }

    pub fn bins(&self) -> usize {
        self.m
    }

    pub fn dims(&self) -> usize {
        self.n
    }

    pub fn provenance(&self) -> Provenance {
        self.provenance
    }

    pub fn max_response(&self) -> f64 {
        self.responses
            .iter()
            .flatten()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

fn check_sigmas(sigmas: &[f64]) -> Result<()> {
    if sigmas.is_empty() {
        return Err(Error::invalid("sigma sequence is empty"));
    }
    if sigmas.iter().any(|s| !(*s > 0.0 && s.is_finite())) {
        return Err(Error::invalid("sigmas must be positive and finite"));
    }
    if sigmas.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::invalid("sigmas must be strictly increasing"));
    }
    Ok(())
}

/// Builds the scale-space stack of a difference grid.
pub fn log_response(grid: &HeatmapGrid, sigmas: &[f64]) -> Result<ScaleSpaceStack> {
    log_response_with(grid, sigmas, DEFAULT_TRUNCATE)
}

pub fn log_response_with(
    grid: &HeatmapGrid,
    sigmas: &[f64],
    truncate: f64,
) -> Result<ScaleSpaceStack> {
    if grid.kind() != GridKind::Difference {
        return Err(Error::invalid("LoG detection runs on difference grids"));
    }
    check_sigmas(sigmas)?;
    let (m, n) = (grid.bins(), grid.dims());
    let responses = sigmas
        .par_iter()
        .map(|&sigma| {
            let kernel = gaussian_kernel(sigma, truncate)?;
            let smoothed = convolve_values(grid.values(), m, n, &kernel)?;
            let mut lap = laplacian(&smoothed, m, n)?;
            let scale = -sigma * sigma;
            lap.iter_mut().for_each(|v| *v *= scale);
            Ok(lap)
        })
        .collect::<Result<Vec<_>>>()?;
    ScaleSpaceStack::new(sigmas.to_vec(), m, n, responses, grid.provenance())
}

/// What "maximum intensity" the relative threshold multiplies.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ThresholdScope {
    /// Maximum over the whole stack of one difference grid.
    Stack,
    /// Maximum of each σ slice separately.
    Slice,
    /// A caller-supplied maximum, e.g. over every stack of a corpus.
    Fixed(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectParams {
    pub rho: f64,
    pub overlap: f64,
    pub scope: ThresholdScope,
}

impl Default for DetectParams {
    fn default() -> Self {
        Self {
            rho: 0.05,
            overlap: DEFAULT_OVERLAP,
            scope: ThresholdScope::Stack,
        }
    }
}

fn sort_blobs(blobs: &mut [Blob]) {
    blobs.sort_by(|a, b| {
        b.intensity
            .total_cmp(&a.intensity)
            .then_with(|| a.center.cmp(&b.center))
            .then_with(|| a.sigma.total_cmp(&b.sigma))
    });
}

/// Thresholded strict local maxima of the stack, before overlap pruning.
///
/// A voxel is kept when it beats every existing neighbour in its
/// `3^(n+1) - 1` scale-space neighbourhood. Equal responses are resolved in
/// favour of the lexicographically smaller `(center, σ)`.
pub fn find_peaks(stack: &ScaleSpaceStack, rho: f64, scope: ThresholdScope) -> Result<Vec<Blob>> {
    if !(rho > 0.0 && rho <= 1.0) {
        return Err(Error::invalid(format!("rho must lie in (0, 1], got {rho}")));
    }
    if stack.responses.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::invalid("scale-space stack contains non-finite values"));
    }
    let thresholds: Vec<f64> = match scope {
        ThresholdScope::Stack => vec![rho * stack.max_response(); stack.sigmas.len()],
        ThresholdScope::Slice => stack
            .responses
            .iter()
            .map(|r| rho * r.iter().copied().fold(f64::NEG_INFINITY, f64::max))
            .collect(),
        ThresholdScope::Fixed(max) => vec![rho * max; stack.sigmas.len()],
    };

    let (m, n) = (stack.m, stack.n);
    let offsets = neighbour_offsets(n + 1);
    let levels = stack.sigmas.len();
    let mut blobs = Vec::new();
    for (s, response) in stack.responses.iter().enumerate() {
        let threshold = thresholds[s];
        if threshold <= 0.0 {
            continue;
        }
        for (flat, &v) in response.iter().enumerate() {
            if v < threshold {
                continue;
            }
            let center = unravel(flat, m, n);
            if is_peak(stack, s, &center, v, flat, &offsets, levels) {
                blobs.push(Blob {
                    ref_period: stack.provenance.period,
                    offset: stack.provenance.offset.unwrap_or(0),
                    center,
                    sigma: stack.sigmas[s],
                    intensity: v,
                });
            }
        }
    }
    sort_blobs(&mut blobs);
    Ok(blobs)
}

fn neighbour_offsets(rank: usize) -> Vec<Vec<isize>> {
    let total = 3usize.pow(rank as u32);
    (0..total)
        .map(|k| {
            let mut v = vec![0isize; rank];
            let mut k = k;
            for slot in v.iter_mut().rev() {
                *slot = (k % 3) as isize - 1;
                k /= 3;
            }
            v
        })
        .filter(|v| v.iter().any(|&d| d != 0))
        .collect()
}

fn is_peak(
    stack: &ScaleSpaceStack,
    s: usize,
    center: &[usize],
    v: f64,
    flat: usize,
    offsets: &[Vec<isize>],
    levels: usize,
) -> bool {
    let m = stack.m as isize;
    let mut idx = vec![0usize; center.len()];
    'next: for off in offsets {
        let ns = s as isize + off[0];
        if ns < 0 || ns >= levels as isize {
            continue;
        }
        for (d, (&c, &o)) in center.iter().zip(&off[1..]).enumerate() {
            let x = c as isize + o;
            if x < 0 || x >= m {
                continue 'next;
            }
            idx[d] = x as usize;
        }
        let nflat = flat_index(&idx, stack.m);
        let u = stack.responses[ns as usize][nflat];
        if u > v {
            return false;
        }
        if u == v && (nflat, ns as usize) < (flat, s) {
            return false;
        }
    }
    true
}

/// Greedy overlap pruning: walking blobs by descending intensity, a blob is
/// dropped if its center lies closer than `overlap · (r_i + r_j)` to an
/// already kept blob.
pub fn prune_overlapping(mut blobs: Vec<Blob>, overlap: f64) -> Vec<Blob> {
    sort_blobs(&mut blobs);
    let mut kept: Vec<Blob> = Vec::with_capacity(blobs.len());
    for blob in blobs {
        let clashes = kept
            .iter()
            .any(|k| blob.distance_to(k) < overlap * (blob.radius() + k.radius()));
        if !clashes {
            kept.push(blob);
        }
    }
    kept
}

/// Blobs of one stack with the default stack-wide threshold and overlap.
pub fn detect_blobs(stack: &ScaleSpaceStack, rho: f64) -> Result<Vec<Blob>> {
    detect_blobs_with(
        stack,
        &DetectParams {
            rho,
            ..DetectParams::default()
        },
    )
}

pub fn detect_blobs_with(stack: &ScaleSpaceStack, params: &DetectParams) -> Result<Vec<Blob>> {
    if !(params.overlap >= 0.0 && params.overlap.is_finite()) {
        return Err(Error::invalid("overlap fraction must be a non-negative real"));
    }
    let peaks = find_peaks(stack, params.rho, params.scope)?;
    Ok(prune_overlapping(peaks, params.overlap))
}

pub fn read_blobs<R: BufRead>(reader: R) -> Result<Vec<Blob>> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let blob: Blob = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: i + 1,
            message: e.to_string(),
        })?;
        if !(blob.sigma > 0.0 && blob.sigma.is_finite()) || !blob.intensity.is_finite() {
            return Err(Error::Parse {
                line: i + 1,
                message: "sigma must be positive and intensity finite".into(),
            });
        }
        if blob.center.is_empty() {
            return Err(Error::Parse {
                line: i + 1,
                message: "blob center is empty".into(),
            });
        }
        out.push(blob);
    }
    Ok(out)
}

pub fn write_blobs<W: Write>(blobs: &[Blob], mut out: W) -> Result<()> {
    for blob in blobs {
        serde_json::to_writer(&mut out, blob)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::Extent;

    fn diff_grid(m: usize, values: Vec<f64>) -> HeatmapGrid {
        let extent = Extent::new(vec![(0.0, 1.0), (0.0, 1.0)]).unwrap();
        HeatmapGrid::from_parts(
            extent,
            m,
            values,
            GridKind::Difference,
            Provenance {
                period: 0,
                offset: Some(0),
            },
        )
        .unwrap()
    }

    #[test]
    fn kernel_is_normalised_and_symmetric() {
        for &sigma in &[0.3, 1.0, 2.5, 7.0] {
            let k = gaussian_kernel(sigma, DEFAULT_TRUNCATE).unwrap();
            assert!((k.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            let r = k.len() / 2;
            for i in 0..r {
                assert_eq!(k[i], k[k.len() - 1 - i]);
            }
        }
        assert_eq!(gaussian_kernel(1.0, 4.0).unwrap().len(), 9);
        assert!(gaussian_kernel(0.0, 4.0).is_err());
        assert!(gaussian_kernel(-1.0, 4.0).is_err());
    }

    #[test]
    fn delta_kernel_is_identity() {
        let values: Vec<f64> = (0..25).map(|i| (i * 7 % 11) as f64).collect();
        assert_eq!(convolve_values(&values, 5, 2, &[1.0]).unwrap(), values);
    }

    #[test]
    fn constant_grid_is_preserved() {
        let k = gaussian_kernel(2.0, 4.0).unwrap();
        let out = convolve_values(&vec![3.25; 400], 20, 2, &k).unwrap();
        assert!(out.iter().all(|v| (v - 3.25).abs() < 1e-12));
    }

    #[test]
    fn convolution_rejects_bad_kernels() {
        assert!(convolve_values(&[0.0; 4], 2, 2, &[0.5, 0.5]).is_err());
        assert!(convolve_values(&[0.0; 4], 2, 2, &[0.2; 7]).is_err());
        assert!(convolve_values(&[0.0; 4], 2, 2, &[0.2; 5]).is_ok());
    }

    #[test]
    fn constant_and_zero_grids_have_zero_response() {
        let sigmas = [1.0, 2.0];
        let stack = log_response(&diff_grid(16, vec![2.0; 256]), &sigmas).unwrap();
        assert!(stack.responses().iter().flatten().all(|v| v.abs() < 1e-12));
        let stack = log_response(&diff_grid(16, vec![0.0; 256]), &sigmas).unwrap();
        assert!(stack.responses().iter().flatten().all(|&v| v == 0.0));
        assert!(detect_blobs(&stack, 0.05).unwrap().is_empty());
    }

    #[test]
    fn log_requires_difference_grid() {
        let extent = Extent::new(vec![(0.0, 1.0), (0.0, 1.0)]).unwrap();
        let g = HeatmapGrid::zeros(extent, 4, 0).unwrap();
        assert!(log_response(&g, &[1.0]).is_err());
    }

    #[test]
    fn sigma_grid_is_log_spaced() {
        let s = sigma_grid(2.0, 20.0, 10).unwrap();
        assert_eq!(s.len(), 10);
        assert_eq!((s[0], s[9]), (2.0, 20.0));
        let ratio = s[1] / s[0];
        for w in s.windows(2) {
            assert!((w[1] / w[0] - ratio).abs() < 1e-12);
        }
        assert!(sigma_grid(0.0, 2.0, 3).is_err());
        assert!(sigma_grid(3.0, 3.0, 2).is_err());
        assert_eq!(sigma_grid(3.0, 3.0, 1).unwrap(), vec![3.0]);
    }

    #[test]
    fn rho_outside_unit_interval_rejected() {
        let stack = log_response(&diff_grid(8, vec![0.0; 64]), &[1.0]).unwrap();
        assert!(detect_blobs(&stack, 0.0).is_err());
        assert!(detect_blobs(&stack, 1.5).is_err());
    }

    #[test]
    fn plateau_yields_first_representative() {
        let mut r = vec![0.0; 16];
        r[5] = 1.0;
        r[6] = 1.0;
        let stack = ScaleSpaceStack::new(
            vec![1.0],
            4,
            2,
            vec![r],
            Provenance {
                period: 0,
                offset: Some(0),
            },
        )
        .unwrap();
        let peaks = find_peaks(&stack, 0.5, ThresholdScope::Stack).unwrap();
        assert_eq!(peaks.len(), 1);
        assert_eq!(peaks[0].center, vec![1, 1]);
    }

    #[test]
    fn overlap_pruning_keeps_stronger() {
        let b = |x: usize, i: f64| Blob {
            ref_period: 0,
            offset: 0,
            center: vec![x, 0],
            sigma: 2.0,
            intensity: i,
        };
        let kept = prune_overlapping(vec![b(0, 1.0), b(2, 2.0), b(10, 0.5)], 0.5);
        assert_eq!(kept, vec![b(2, 2.0), b(10, 0.5)]);
    }

    #[test]
    fn non_finite_stack_rejected() {
        let stack = ScaleSpaceStack::new(
            vec![1.0],
            2,
            2,
            vec![vec![0.0, f64::NAN, 0.0, 1.0]],
            Provenance {
                period: 0,
                offset: Some(0),
            },
        )
        .unwrap();
        assert!(detect_blobs(&stack, 0.5).is_err());
    }
}
