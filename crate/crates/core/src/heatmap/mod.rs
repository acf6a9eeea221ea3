//! Dense histogram grids and the reference/difference algebra.
//!
//! Grids are `m^n` values stored row-major: the first coordinate is the
//! slowest-varying index.

mod codec;

pub use codec::{decode, encode, read_grid, write_grid, FORMAT_VERSION, MAGIC};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{Extent, PointRecord};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GridKind {
    Period,
    Reference,
    Difference,
}

impl GridKind {
    pub(crate) fn code(self) -> u8 {
        match self {
            GridKind::Period => 0,
            GridKind::Reference => 1,
            GridKind::Difference => 2,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(GridKind::Period),
            1 => Some(GridKind::Reference),
            2 => Some(GridKind::Difference),
            _ => None,
        }
    }
}

/// Which period a grid describes. `offset` is set only for difference grids,
/// where the grid compares period `period + offset` against the reference of
/// `period`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Provenance {
    pub period: i64,
    pub offset: Option<i64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HeatmapGrid {
    extent: Extent,
    m: usize,
    values: Vec<f64>,
    kind: GridKind,
    provenance: Provenance,
}

/// `m^n`, or `None` on overflow.
pub fn cell_count(m: usize, n: usize) -> Option<usize> {
    m.checked_pow(u32::try_from(n).ok()?)
}

impl HeatmapGrid {
    /// Builds a grid after checking every invariant of its kind.
    pub fn from_parts(
        extent: Extent,
        m: usize,
        values: Vec<f64>,
        kind: GridKind,
        provenance: Provenance,
    ) -> Result<Self> {
        if m == 0 {
            return Err(Error::invalid("bins per dimension must be positive"));
        }
        let expected = cell_count(m, extent.dims())
            .ok_or_else(|| Error::invalid("grid size overflows"))?;
        if values.len() != expected {
            return Err(Error::GeometryMismatch(format!(
                "expected {expected} values, found {}",
                values.len()
            )));
        }
        if let Some(v) = values.iter().find(|v| !v.is_finite() || **v < 0.0) {
            return Err(Error::invalid(format!("grid value {v} is not a finite non-negative real")));
        }
        if kind == GridKind::Period && values.iter().any(|v| v.fract() != 0.0) {
            return Err(Error::invalid("period grid values must be integer counts"));
        }
        match (kind, provenance.offset) {
            (GridKind::Difference, Some(w)) if w >= 0 => {}
            (GridKind::Difference, _) => {
                return Err(Error::invalid("difference grid needs a non-negative window offset"))
            }
            (_, Some(_)) => return Err(Error::invalid("only difference grids carry an offset")),
            _ => {}
        }
        Ok(Self {
            extent,
            m,
            values,
            kind,
            provenance,
        })
    }

    /// An all-zero period grid.
    pub fn zeros(extent: Extent, m: usize, period: i64) -> Result<Self> {
        let len = cell_count(m, extent.dims()).ok_or_else(|| Error::invalid("grid size overflows"))?;
        Self::from_parts(
            extent,
            m,
            vec![0.0; len],
            GridKind::Period,
            Provenance {
                period,
                offset: None,
            },
        )
    }

    pub fn extent(&self) -> &Extent {
        &self.extent
    }

    pub fn bins(&self) -> usize {
        self.m
    }

    pub fn dims(&self) -> usize {
        self.extent.dims()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn kind(&self) -> GridKind {
        self.kind
    }

    pub fn provenance(&self) -> Provenance {
        self.provenance
    }

    pub fn total_mass(&self) -> f64 {
        self.values.iter().sum()
    }

    pub fn max_value(&self) -> f64 {
        self.values.iter().copied().fold(0.0, f64::max)
    }

    /// Flat index of a multi-index.
    pub fn index_of(&self, idx: &[usize]) -> usize {
        flat_index(idx, self.m)
    }

    pub fn get(&self, idx: &[usize]) -> f64 {
        self.values[self.index_of(idx)]
    }

    pub fn same_geometry(&self, other: &HeatmapGrid) -> bool {
        self.m == other.m && self.extent == other.extent
    }

    /// Multiplies every value by `factor`, keeping kind and provenance.
    pub fn scaled(&self, factor: f64) -> Result<Self> {
        Self::from_parts(
            self.extent.clone(),
            self.m,
            self.values.iter().map(|v| v * factor).collect(),
            self.kind,
            self.provenance,
        )
    }
}

pub(crate) fn flat_index(idx: &[usize], m: usize) -> usize {
    idx.iter().fold(0, |acc, &i| acc * m + i)
}

pub(crate) fn unravel(mut flat: usize, m: usize, n: usize) -> Vec<usize> {
    let mut idx = vec![0; n];
    for slot in idx.iter_mut().rev() {
        *slot = flat % m;
        flat /= m;
    }
    idx
}

/// Bin multi-index of `coords`, or `None` when the point lies outside `extent`.
///
/// Bins are half-open except the last, which also takes points on the upper
/// bound. A degenerate dimension (`lo == hi`) maps everything to bin 0.
pub fn bin_of(extent: &Extent, m: usize, coords: &[f64]) -> Option<Vec<usize>> {
    if !extent.contains(coords) {
        return None;
    }
    Some(
        coords
            .iter()
            .zip(extent.bounds())
            .map(|(&x, &(lo, hi))| {
                if hi == lo {
                    0
                } else {
                    let raw = ((x - lo) / (hi - lo) * m as f64).floor();
                    (raw as usize).min(m - 1)
                }
            })
            .collect(),
    )
}

/// Counts the points of one period into an `m^n` grid over `extent`.
pub fn build_heatmap(
    points: &[PointRecord],
    extent: &Extent,
    m: usize,
    period: i64,
) -> Result<HeatmapGrid> {
    if m == 0 {
        return Err(Error::invalid("bins per dimension must be positive"));
    }
    let mut grid = HeatmapGrid::zeros(extent.clone(), m, period)?;
    for point in points {
        let idx = bin_of(extent, m, &point.coords).ok_or_else(|| Error::OutsideExtent {
            id: point.id.clone(),
        })?;
        grid.values[flat_index(&idx, m)] += 1.0;
    }
    Ok(grid)
}

fn check_geometry(a: &HeatmapGrid, b: &HeatmapGrid) -> Result<()> {
    if a.same_geometry(b) {
        Ok(())
    } else {
        Err(Error::GeometryMismatch(format!(
            "grids differ in bins ({} vs {}) or extent",
            a.m, b.m
        )))
    }
}

/// Per-bin maximum over the grids preceding `period`.
pub fn reference_heatmap<'a, I>(prior: I, period: i64) -> Result<HeatmapGrid>
where
    I: IntoIterator<Item = &'a HeatmapGrid>,
{
    let mut iter = prior.into_iter();
    let first = iter
        .next()
        .ok_or_else(|| Error::invalid("reference needs at least one prior grid"))?;
    let mut values = first.values.clone();
    for grid in iter {
        check_geometry(first, grid)?;
        for (acc, &v) in values.iter_mut().zip(&grid.values) {
            if v > *acc {
                *acc = v;
            }
        }
    }
    HeatmapGrid::from_parts(
        first.extent.clone(),
        first.m,
        values,
        GridKind::Reference,
        Provenance {
            period,
            offset: None,
        },
    )
}

/// Mass-normalised difference of `current` against `reference`, clamped at 0.
///
/// Each bin is `max(0, (ΣRM · M) / ΣM − RM)`. The product is formed before the
/// division so that integer-scaled copies of `current` give bit-identical
/// output. A reference with zero mass yields an all-zero grid.
pub fn difference_heatmap(current: &HeatmapGrid, reference: &HeatmapGrid) -> Result<HeatmapGrid> {
    check_geometry(current, reference)?;
    let period = reference.provenance.period;
    let offset = current.provenance.period - period;
    let current_mass = current.total_mass();
    if current_mass <= 0.0 {
        return Err(Error::EmptyCurrentPeriod(current.provenance.period));
    }
    let reference_mass = reference.total_mass();
    let values = if reference_mass == 0.0 {
        vec![0.0; current.values.len()]
    } else {
        current
            .values
            .iter()
            .zip(&reference.values)
            .map(|(&m, &rm)| {
                let d = reference_mass * m / current_mass - rm;
                if d > 0.0 {
                    d
                } else {
                    0.0
                }
            })
            .collect()
    };
    HeatmapGrid::from_parts(
        current.extent.clone(),
        current.m,
        values,
        GridKind::Difference,
        Provenance {
            period,
            offset: Some(offset),
        },
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit_extent() -> Extent {
        Extent::new(vec![(0.0, 1.0), (0.0, 1.0)]).unwrap()
    }

    fn grid2(values: [f64; 4], kind: GridKind, period: i64) -> HeatmapGrid {
        let offset = (kind == GridKind::Difference).then_some(0);
        HeatmapGrid::from_parts(unit_extent(), 2, values.to_vec(), kind, Provenance { period, offset })
            .unwrap()
    }

    #[test]
    fn paper_scale_grid_has_160000_bins() {
        let g = build_heatmap(&[], &unit_extent(), 400, 0).unwrap();
        assert_eq!(g.values().len(), 160_000);
    }

    #[test]
    fn empty_points_give_zero_grid() {
        let g = build_heatmap(&[], &unit_extent(), 8, 3).unwrap();
        assert_eq!(g.total_mass(), 0.0);
        assert_eq!(g.provenance().period, 3);
    }

    #[test]
    fn upper_bound_lands_in_last_bin() {
        let p = PointRecord::new("a", 0, vec![1.0, 1.0]);
        let g = build_heatmap(&[p], &unit_extent(), 5, 0).unwrap();
        assert_eq!(g.get(&[4, 4]), 1.0);
        assert_eq!(g.total_mass(), 1.0);
    }

    #[test]
    fn degenerate_dimension_maps_to_bin_zero() {
        let extent = Extent::new(vec![(2.0, 2.0), (0.0, 1.0)]).unwrap();
        let p = PointRecord::new("a", 0, vec![2.0, 0.3]);
        let g = build_heatmap(&[p], &extent, 4, 0).unwrap();
        assert_eq!(g.get(&[0, 1]), 1.0);
    }

    #[test]
    fn outside_point_is_an_error() {
        let p = PointRecord::new("far", 0, vec![1.5, 0.0]);
        assert!(matches!(
            build_heatmap(&[p], &unit_extent(), 4, 0),
            Err(Error::OutsideExtent { id }) if id == "far"
        ));
        assert!(build_heatmap(&[], &unit_extent(), 0, 0).is_err());
    }

    #[test]
    fn reference_is_elementwise_max() {
        let a = grid2([1.0, 2.0, 3.0, 0.0], GridKind::Period, 0);
        let b = grid2([0.0, 5.0, 1.0, 0.0], GridKind::Period, 1);
        let r = reference_heatmap([&a, &b], 2).unwrap();
        assert_eq!(r.values(), &[1.0, 5.0, 3.0, 0.0]);
        assert_eq!(r.kind(), GridKind::Reference);
        let single = reference_heatmap([&a], 1).unwrap();
        assert_eq!(single.values(), a.values());
    }

    #[test]
    fn reference_rejects_empty_and_mismatched() {
        assert!(reference_heatmap(std::iter::empty(), 0).is_err());
        let a = grid2([1.0; 4], GridKind::Period, 0);
        let b = build_heatmap(&[], &unit_extent(), 3, 0).unwrap();
        assert!(matches!(reference_heatmap([&a, &b], 1), Err(Error::GeometryMismatch(_))));
    }

    #[test]
    fn difference_matches_hand_arithmetic() {
        // ΣRM = 10, ΣM = 20, bin with M = 4 and RM = 1 -> 0.5 * 4 - 1 = 1.
        let current = grid2([4.0, 16.0, 0.0, 0.0], GridKind::Period, 5);
        let reference = grid2([1.0, 9.0, 0.0, 0.0], GridKind::Reference, 3);
        let d = difference_heatmap(&current, &reference).unwrap();
        assert_eq!(d.values()[0], 1.0);
        assert_eq!(d.values()[1], 0.0);
        assert_eq!(d.provenance(), Provenance { period: 3, offset: Some(2) });
    }

    #[test]
    fn identical_grids_difference_to_zero() {
        let current = grid2([3.0, 1.0, 0.0, 2.0], GridKind::Period, 1);
        let reference = grid2([3.0, 1.0, 0.0, 2.0], GridKind::Reference, 1);
        let d = difference_heatmap(&current, &reference).unwrap();
        assert!(d.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn difference_never_negative() {
        let current = grid2([1.0, 1.0, 0.0, 0.0], GridKind::Period, 1);
        let reference = grid2([5.0, 0.0, 0.0, 0.0], GridKind::Reference, 1);
        let d = difference_heatmap(&current, &reference).unwrap();
        assert_eq!(d.values(), &[0.0, 2.5, 0.0, 0.0]);
    }

    #[test]
    fn empty_current_is_an_error_and_empty_reference_gives_zero() {
        let empty = grid2([0.0; 4], GridKind::Period, 4);
        let reference = grid2([1.0, 0.0, 0.0, 0.0], GridKind::Reference, 4);
        assert!(matches!(
            difference_heatmap(&empty, &reference),
            Err(Error::EmptyCurrentPeriod(4))
        ));
        let current = grid2([1.0, 2.0, 0.0, 0.0], GridKind::Period, 4);
        let zero_ref = grid2([0.0; 4], GridKind::Reference, 4);
        let d = difference_heatmap(&current, &zero_ref).unwrap();
        assert_eq!(d.total_mass(), 0.0);
    }

    #[test]
    fn from_parts_enforces_invariants() {
        let prov = Provenance { period: 0, offset: None };
        assert!(HeatmapGrid::from_parts(unit_extent(), 2, vec![0.5; 4], GridKind::Period, prov).is_err());
        assert!(HeatmapGrid::from_parts(unit_extent(), 2, vec![-1.0; 4], GridKind::Reference, prov).is_err());
        assert!(HeatmapGrid::from_parts(unit_extent(), 2, vec![0.0; 3], GridKind::Reference, prov).is_err());
        assert!(HeatmapGrid::from_parts(unit_extent(), 2, vec![0.0; 4], GridKind::Difference, prov).is_err());
    }

    #[test]
    fn unravel_inverts_flat_index() {
        for flat in 0..27 {
            assert_eq!(flat_index(&unravel(flat, 3, 3), 3), flat);
        }
    }
}
