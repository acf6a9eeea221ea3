//! Point membership of tracks, size series, and group salience.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Read;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::blob::center_distance;
use crate::error::{Error, Result};
use crate::heatmap::bin_of;
use crate::ingest::{Extent, PeriodizedDataset};
use crate::link::ConceptTrack;

/// Fills `members` of every track.
///
/// A point of period `p + w` joins a track when its bin lies within `σ·√2`
/// of one of the track's blobs at offset `w`. Points may join several tracks.
pub fn assign_points(
    mut tracks: Vec<ConceptTrack>,
    ds: &PeriodizedDataset,
    extent: &Extent,
    m: usize,
) -> Result<Vec<ConceptTrack>> {
    if extent.dims() != ds.dims() {
        return Err(Error::GeometryMismatch(format!(
            "extent has {} dimensions, dataset {}",
            extent.dims(),
            ds.dims()
        )));
    }
    if m == 0 {
        return Err(Error::invalid("bins per dimension must be positive"));
    }
    for track in &tracks {
        if let Some(b) = track
            .nodes
            .iter()
            .find(|b| b.center.len() != ds.dims() || b.center.iter().any(|&c| c >= m))
        {
            return Err(Error::GeometryMismatch(format!(
                "track {} has blob center {:?} outside an {m}-bin grid",
                track.id, b.center
            )));
        }
    }

    tracks.par_iter_mut().try_for_each(|track| -> Result<()> {
        let mut members: BTreeMap<i64, Vec<String>> = BTreeMap::new();
        let offsets: BTreeSet<i64> = track.nodes.iter().map(|b| b.offset).collect();
        for w in offsets {
            let blobs: Vec<_> = track.nodes.iter().filter(|b| b.offset == w).collect();
            let mut ids = Vec::new();
            for point in ds.points_in(track.ref_period + w) {
                let bin = bin_of(extent, m, &point.coords).ok_or_else(|| Error::OutsideExtent {
                    id: point.id.clone(),
                })?;
                if blobs
                    .iter()
                    .any(|b| center_distance(&bin, &b.center) <= b.radius())
                {
                    ids.push(point.id.clone());
                }
            }
            ids.sort();
            members.insert(w, ids);
        }
        track.members = Some(members);
        Ok(())
    })?;
    Ok(tracks)
}

/// `(period, member count)` for every period from the track's first to last
/// offset.
pub fn track_size_series(track: &ConceptTrack) -> Result<Vec<(i64, usize)>> {
    let members = track.members.as_ref().ok_or(Error::Unassigned(track.id))?;
    Ok((track.start_offset()..=track.end_offset())
        .map(|w| {
            (
                track.ref_period + w,
                members.get(&w).map_or(0, Vec::len),
            )
        })
        .collect())
}

/// Seat counts per period: `N_g` for each group and the total `N`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SeatTable {
    periods: BTreeMap<i64, PeriodSeats>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct PeriodSeats {
    pub groups: BTreeMap<String, u64>,
    pub total: u64,
}

impl SeatTable {
    pub fn insert(&mut self, period: i64, groups: BTreeMap<String, u64>, total: Option<u64>) -> Result<()> {
        let total = total.unwrap_or_else(|| groups.values().sum());
        if total == 0 {
            return Err(Error::invalid(format!("period {period} has zero total seats")));
        }
        self.periods.insert(period, PeriodSeats { groups, total });
        Ok(())
    }

    pub fn get(&self, period: i64) -> Option<&PeriodSeats> {
        self.periods.get(&period)
    }

    /// Parses `{"1941": {"D": 66, "R": 28, "total": 96}, ...}`.
    ///
    /// `total` is optional and defaults to the sum of the group counts.
    pub fn parse<R: Read>(reader: R) -> Result<Self> {
        let raw: BTreeMap<String, BTreeMap<String, u64>> = serde_json::from_reader(reader)?;
        let mut table = SeatTable::default();
        for (key, mut groups) in raw {
            let period: i64 = key
                .trim()
                .parse()
                .map_err(|_| Error::invalid(format!("seat period {key:?} is not an integer")))?;
            let total = groups.remove("total");
            table.insert(period, groups, total)?;
        }
        Ok(table)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SalienceEntry {
    pub group: String,
    pub period: i64,
    /// `Σ S_{g,t}` over tracks where the group is overrepresented, over `S_g`.
    pub q: f64,
    pub numerator: usize,
    pub group_total: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackSalience {
    pub track_id: usize,
    pub period: i64,
    pub overrepresented: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SalienceReport {
    pub label: String,
    pub entries: Vec<SalienceEntry>,
    pub tracks: Vec<TrackSalience>,
    /// `(group, period)` pairs where multi-track membership pushed `q` above 1.
    pub inflated: Vec<(String, i64)>,
}

impl SalienceReport {
    pub fn q(&self, group: &str, period: i64) -> Option<f64> {
        self.entries
            .iter()
            .find(|e| e.group == group && e.period == period)
            .map(|e| e.q)
    }
}

/// Group salience `Q_{g,y}` for every observed group and period.
///
/// Points without a value for `label_dim` are excluded from every count.
pub fn group_salience(
    tracks: &[ConceptTrack],
    ds: &PeriodizedDataset,
    label_dim: &str,
    seats: &SeatTable,
) -> Result<SalienceReport> {
    let label_of: BTreeMap<&str, &str> = ds
        .records()
        .filter_map(|p| p.labels.get(label_dim).map(|g| (p.id.as_str(), g.as_str())))
        .collect();
    if label_of.is_empty() {
        return Err(Error::UnknownLabel(label_dim.to_string()));
    }
    let groups: BTreeSet<&str> = label_of.values().copied().collect();

    // S_g per period.
    let mut group_totals: BTreeMap<(i64, &str), usize> = BTreeMap::new();
    let mut periods = BTreeSet::new();
    for (period, points) in ds.iter_periods() {
        for p in points {
            if let Some(&g) = label_of.get(p.id.as_str()) {
                *group_totals.entry((period, g)).or_default() += 1;
                periods.insert(period);
            }
        }
    }
    for &period in &periods {
        if seats.get(period).is_none() {
            return Err(Error::MissingSeats(period));
        }
    }

    let mut numerators: BTreeMap<(i64, &str), usize> = BTreeMap::new();
    let mut track_rows = Vec::new();
    for track in tracks {
        let members = track.members.as_ref().ok_or(Error::Unassigned(track.id))?;
        for (&w, ids) in members {
            let period = track.ref_period + w;
            let mut by_group: BTreeMap<&str, usize> = BTreeMap::new();
            for id in ids {
                if let Some(&g) = label_of.get(id.as_str()) {
                    *by_group.entry(g).or_default() += 1;
                }
            }
            let track_total: usize = by_group.values().sum();
            if track_total == 0 {
                continue;
            }
            let seat = seats.get(period).ok_or(Error::MissingSeats(period))?;
            let mut over = Vec::new();
            for (&g, &count) in &by_group {
                let held = seat.groups.get(g).copied().unwrap_or(0);
                // count/track_total > held/total, cross-multiplied to stay exact.
                if (count as u128) * (seat.total as u128) > (held as u128) * (track_total as u128) {
                    *numerators.entry((period, g)).or_default() += count;
                    over.push(g.to_string());
                }
            }
            track_rows.push(TrackSalience {
                track_id: track.id,
                period,
                overrepresented: over,
            });
        }
    }

    let mut entries = Vec::new();
    let mut inflated = Vec::new();
    for &period in &periods {
        for &g in &groups {
            let group_total = group_totals.get(&(period, g)).copied().unwrap_or(0);
            let numerator = numerators.get(&(period, g)).copied().unwrap_or(0);
            let q = if group_total == 0 {
                0.0
            } else {
                numerator as f64 / group_total as f64
            };
            if q > 1.0 {
                inflated.push((g.to_string(), period));
            }
            entries.push(SalienceEntry {
                group: g.to_string(),
                period,
                q,
                numerator,
                group_total,
            });
        }
    }
    Ok(SalienceReport {
        label: label_dim.to_string(),
        entries,
        tracks: track_rows,
        inflated,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::blob::Blob;
    use crate::ingest::PointRecord;

    fn track_at(center: Vec<usize>, sigma: f64) -> ConceptTrack {
        ConceptTrack {
            id: 0,
            ref_period: 10,
            nodes: vec![Blob {
                ref_period: 10,
                offset: 1,
                center,
                sigma,
                intensity: 1.0,
            }],
            edges: vec![],
            members: None,
        }
    }

    #[test]
    fn membership_by_radius() {
        let extent = Extent::new(vec![(0.0, 10.0), (0.0, 10.0)]).unwrap();
        let ds = PeriodizedDataset::from_records(
            2,
            [
                PointRecord::new("on", 11, vec![5.5, 5.5]),
                PointRecord::new("far", 11, vec![9.5, 5.5]),
                PointRecord::new("other-period", 12, vec![5.5, 5.5]),
            ],
        )
        .unwrap();
        let tracks = assign_points(vec![track_at(vec![5, 5], 1.0)], &ds, &extent, 10).unwrap();
        let members = tracks[0].members.as_ref().unwrap();
        assert_eq!(members[&1], vec!["on".to_string()]);
        assert_eq!(track_size_series(&tracks[0]).unwrap(), vec![(11, 1)]);
    }

    #[test]
    fn size_series_fills_gaps() {
        let mut t = track_at(vec![0, 0], 1.0);
        let mut later = t.nodes[0].clone();
        later.offset = 3;
        t.nodes.push(later);
        assert!(matches!(track_size_series(&t), Err(Error::Unassigned(0))));
        t.members = Some(BTreeMap::from([(1, vec!["a".into(), "b".into()]), (3, vec![])]));
        assert_eq!(track_size_series(&t).unwrap(), vec![(11, 2), (12, 0), (13, 0)]);
    }

    #[test]
    fn assignment_checks_geometry() {
        let extent = Extent::new(vec![(0.0, 1.0)]).unwrap();
        let ds = PeriodizedDataset::empty(2);
        assert!(assign_points(vec![], &ds, &extent, 4).is_err());
        let extent2 = Extent::new(vec![(0.0, 1.0), (0.0, 1.0)]).unwrap();
        assert!(assign_points(vec![track_at(vec![9, 0], 1.0)], &ds, &extent2, 4).is_err());
    }

    #[test]
    fn seat_file_parsing() {
        let table = SeatTable::parse(r#"{"1941": {"D": 66, "R": 28, "total": 96}, "1943": {"D": 1, "R": 3}}"#.as_bytes()).unwrap();
        assert_eq!(table.get(1941).unwrap().total, 96);
        assert_eq!(table.get(1943).unwrap().total, 4);
        assert!(SeatTable::parse(r#"{"x": {"D": 1}}"#.as_bytes()).is_err());
        assert!(SeatTable::parse(r#"{"1": {"D": 0}}"#.as_bytes()).is_err());
    }
}
