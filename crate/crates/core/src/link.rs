//! Temporal linking of blobs into concept tracks.
//!
//! Within one reference period, a blob at window offset `w` is linked to every
//! blob at offsets `w - q`, `1 <= q <= Q`, whose center lies closer than the
//! link distance. Tracks are the connected components of the resulting graph,
//! so a blob that bridges two earlier tracks merges them.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Read;

use serde::{Deserialize, Serialize};

use crate::blob::Blob;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinkParams {
    /// Fixed center distance in bins; `None` uses the earlier blob's radius.
    pub link_dist: Option<f64>,
    /// Maximum offset gap `Q` bridged by an edge.
    pub lookback: usize,
}

impl Default for LinkParams {
    fn default() -> Self {
        Self {
            link_dist: None,
            lookback: 1,
        }
    }
}

impl LinkParams {
    fn validate(&self) -> Result<()> {
        if self.lookback == 0 {
            return Err(Error::invalid("lookback must be at least 1"));
        }
        if let Some(d) = self.link_dist {
            if !(d > 0.0 && d.is_finite()) {
                return Err(Error::invalid(format!("link distance must be positive, got {d}")));
            }
        }
        Ok(())
    }

    /// Whether `earlier` and `later` may be joined by an edge.
    pub fn eligible(&self, earlier: &Blob, later: &Blob) -> bool {
        let gap = later.offset - earlier.offset;
        if gap < 1 || gap > self.lookback as i64 {
            return false;
        }
        let limit = self.link_dist.unwrap_or_else(|| earlier.radius());
        earlier.distance_to(later) < limit
    }
}

/// One linked group of blobs for a reference period.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConceptTrack {
    pub id: usize,
    pub ref_period: i64,
    /// Sorted by `(offset, center, sigma)`.
    pub nodes: Vec<Blob>,
    /// `(earlier, later)` indices into `nodes`.
    pub edges: Vec<(usize, usize)>,
    /// Member point ids per window offset, filled by point assignment.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub members: Option<BTreeMap<i64, Vec<String>>>,
}

impl ConceptTrack {
    pub fn start_offset(&self) -> i64 {
        self.nodes.iter().map(|b| b.offset).min().unwrap_or(0)
    }

    pub fn end_offset(&self) -> i64 {
        self.nodes.iter().map(|b| b.offset).max().unwrap_or(0)
    }

    /// Number of distinct window offsets the track occupies.
    pub fn appearances(&self) -> usize {
        self.nodes.iter().map(|b| b.offset).collect::<BTreeSet<_>>().len()
    }

    /// Total `(point, offset)` memberships, if assigned.
    pub fn member_count(&self) -> Option<usize> {
        self.members.as_ref().map(|m| m.values().map(Vec::len).sum())
    }

    /// Distinct member ids across all offsets.
    pub fn member_ids(&self) -> BTreeSet<&str> {
        self.members
            .iter()
            .flat_map(|m| m.values().flatten().map(String::as_str))
            .collect()
    }
}

pub(crate) struct DisjointSet {
    parent: Vec<usize>,
    rank: Vec<u8>,
}

impl DisjointSet {
    pub(crate) fn new(n: usize) -> Self {
        Self {
            parent: (0..n).collect(),
            rank: vec![0; n],
        }
    }

    pub(crate) fn find(&mut self, mut x: usize) -> usize {
        let mut root = x;
        while self.parent[root] != root {
            root = self.parent[root];
        }
        while self.parent[x] != root {
            let next = self.parent[x];
            self.parent[x] = root;
            x = next;
        }
        root
    }

    pub(crate) fn union(&mut self, a: usize, b: usize) {
        let (mut a, mut b) = (self.find(a), self.find(b));
        if a == b {
            return;
        }
        if self.rank[a] < self.rank[b] {
            std::mem::swap(&mut a, &mut b);
        }
        self.parent[b] = a;
        if self.rank[a] == self.rank[b] {
            self.rank[a] += 1;
        }
    }
}

fn blob_order(a: &Blob, b: &Blob) -> std::cmp::Ordering {
    a.offset
        .cmp(&b.offset)
        .then_with(|| a.center.cmp(&b.center))
        .then_with(|| a.sigma.total_cmp(&b.sigma))
        .then_with(|| b.intensity.total_cmp(&a.intensity))
}

/// Links the blobs of one reference period into tracks.
///
/// Output tracks are numbered from 0 in order of their first node.
pub fn link_blobs(blobs: &[Blob], params: &LinkParams) -> Result<Vec<ConceptTrack>> {
    params.validate()?;
    let Some(first) = blobs.first() else {
        return Ok(Vec::new());
    };
    let ref_period = first.ref_period;
    if blobs.iter().any(|b| b.ref_period != ref_period) {
        return Err(Error::invalid("blobs from several reference periods"));
    }
    let mut sorted = blobs.to_vec();
    sorted.sort_by(blob_order);

    // Offsets in increasing order; each blob looks back Q offsets.
    let mut by_offset: BTreeMap<i64, Vec<usize>> = BTreeMap::new();
    for (i, b) in sorted.iter().enumerate() {
        by_offset.entry(b.offset).or_default().push(i);
    }
    let mut sets = DisjointSet::new(sorted.len());
    let mut edges = Vec::new();
    for (&w, later) in &by_offset {
        let lo = w - params.lookback as i64;
        for (_, earlier) in by_offset.range(lo..w) {
            for &j in later {
                for &i in earlier {
                    if params.eligible(&sorted[i], &sorted[j]) {
                        edges.push((i, j));
                        sets.union(i, j);
                    }
                }
            }
        }
    }

    let mut components: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for i in 0..sorted.len() {
        components.entry(sets.find(i)).or_default().push(i);
    }
    let mut groups: Vec<Vec<usize>> = components.into_values().collect();
    groups.sort_by_key(|g| g[0]);

    let mut local = vec![0usize; sorted.len()];
    let mut owner = vec![0usize; sorted.len()];
    for (t, group) in groups.iter().enumerate() {
        for (k, &i) in group.iter().enumerate() {
            local[i] = k;
            owner[i] = t;
        }
    }
    let mut tracks: Vec<ConceptTrack> = groups
        .iter()
        .enumerate()
        .map(|(t, group)| ConceptTrack {
            id: t,
            ref_period,
            nodes: group.iter().map(|&i| sorted[i].clone()).collect(),
            edges: Vec::new(),
            members: None,
        })
        .collect();
    for (i, j) in edges {
        tracks[owner[i]].edges.push((local[i], local[j]));
    }
    for track in &mut tracks {
        track.edges.sort_unstable();
    }
    Ok(tracks)
}

/// Links each reference period separately and renumbers tracks globally.
pub fn link_all(blobs: &[Blob], params: &LinkParams) -> Result<Vec<ConceptTrack>> {
    let mut by_period: BTreeMap<i64, Vec<Blob>> = BTreeMap::new();
    for b in blobs {
        by_period.entry(b.ref_period).or_default().push(b.clone());
    }
    let mut out = Vec::new();
    for group in by_period.values() {
        out.extend(link_blobs(group, params)?);
    }
    renumber(&mut out);
    Ok(out)
}

pub fn renumber(tracks: &mut [ConceptTrack]) {
    for (i, t) in tracks.iter_mut().enumerate() {
        t.id = i;
    }
}

/// Keeps tracks occupying at least `min_appearances` offsets and holding at
/// least `min_points` memberships.
pub fn filter_tracks(
    tracks: Vec<ConceptTrack>,
    min_appearances: usize,
    min_points: usize,
) -> Result<Vec<ConceptTrack>> {
    if min_appearances == 0 {
        return Err(Error::invalid("min_appearances must be positive"));
    }
    let mut kept = Vec::with_capacity(tracks.len());
    for track in tracks {
        let points = if min_points > 0 {
            track.member_count().ok_or(Error::Unassigned(track.id))?
        } else {
            0
        };
        if track.appearances() >= min_appearances && points >= min_points {
            kept.push(track);
        }
    }
    Ok(kept)
}

/// Drops tracks that re-detect a region already tracked from an earlier
/// reference period: same absolute period, centers within `dist` bins.
pub fn dedup_across_periods(tracks: Vec<ConceptTrack>, dist: f64) -> Vec<ConceptTrack> {
    let mut order: Vec<usize> = (0..tracks.len()).collect();
    order.sort_by_key(|&i| (tracks[i].ref_period, tracks[i].id));
    let mut kept: Vec<usize> = Vec::new();
    for &i in &order {
        let dup = kept.iter().any(|&k| {
            tracks[k].ref_period < tracks[i].ref_period
                && tracks[i].nodes.iter().any(|a| {
                    tracks[k].nodes.iter().any(|b| {
                        a.ref_period + a.offset == b.ref_period + b.offset
                            && a.distance_to(b) < dist
                    })
                })
        });
        if !dup {
            kept.push(i);
        }
    }
    kept.sort_unstable();
    let keep: BTreeSet<usize> = kept.into_iter().collect();
    tracks
        .into_iter()
        .enumerate()
        .filter_map(|(i, t)| keep.contains(&i).then_some(t))
        .collect()
}

/// Track file document: the tracks plus the configuration that produced them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackFile {
    #[serde(default)]
    pub config: serde_json::Value,
    pub tracks: Vec<ConceptTrack>,
}

impl TrackFile {
    pub fn parse<R: Read>(reader: R) -> Result<Self> {
        let file: TrackFile = serde_json::from_reader(reader)?;
        for t in &file.tracks {
            if t.edges.iter().any(|&(a, b)| a >= t.nodes.len() || b >= t.nodes.len()) {
                return Err(Error::invalid(format!("track {} has an edge to a missing node", t.id)));
            }
            if t.nodes.iter().any(|b| b.ref_period != t.ref_period) {
                return Err(Error::invalid(format!("track {} mixes reference periods", t.id)));
            }
            if t.nodes.iter().any(|b| !(b.sigma > 0.0 && b.sigma.is_finite())) {
                return Err(Error::invalid(format!("track {} has a non-positive sigma", t.id)));
            }
        }
        Ok(file)
    }
}
