//! Observation archive: ingest, tracklets, time index, bounding volumes and
//! empirical relationship frequencies.
//!
//! The archive is immutable once built. Observations are kept sorted by
//! `obs_id` so lookups are a binary search and exports are canonical.

mod freq;
mod index;
mod volume;

use std::collections::BTreeMap;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub use freq::{estimate_relationship_frequencies, FreqOptions, RelFreqTable};
pub use index::TimeIndex;
pub use volume::{spatio_temporal_volume, Volume};

use crate::concepts::{CalibrationModel, ConceptError, Scorer};
use crate::querymodel::QueryNode;

#[derive(Debug, Error)]
pub enum ArchiveError {
    #[error("line {line}: malformed observation record: {source}")]
    Parse {
        line: usize,
        #[source]
        source: serde_json::Error,
    },
    #[error("line {line}: invalid observation {obs_id}: {reason}")]
    Invalid {
        line: usize,
        obs_id: u64,
        reason: String,
    },
    #[error("duplicate obs_id {obs_id} (line {line})")]
    DuplicateObsId { obs_id: u64, line: usize },
    #[error("track {track_id} has two observations at t = {time}")]
    DuplicateTrackTime { track_id: u64, time: f64 },
    #[error("unknown obs_id {0}")]
    UnknownObservation(u64),
    #[error("bounding volume of an empty observation set")]
    EmptyVolume,
    #[error("degenerate archive: {0}")]
    Degenerate(String),
    #[error(transparent)]
    Concept(#[from] ConceptError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

/// Axis-aligned image box, serialized as `[x, y, w, h]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 4]", into = "[f64; 4]")]
pub struct BBox {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

impl BBox {
    pub fn new(x: f64, y: f64, w: f64, h: f64) -> Self {
        Self { x, y, w, h }
    }

    pub fn center(&self) -> (f64, f64) {
        (self.x + self.w / 2.0, self.y + self.h / 2.0)
    }

    pub fn area(&self) -> f64 {
        self.w * self.h
    }

    pub fn diagonal(&self) -> f64 {
        self.w.hypot(self.h)
    }

    pub fn aspect(&self) -> f64 {
        self.w / self.h
    }

    pub fn intersection_area(&self, other: &BBox) -> f64 {
        let ix = (self.x + self.w).min(other.x + other.w) - self.x.max(other.x);
        let iy = (self.y + self.h).min(other.y + other.h) - self.y.max(other.y);
        ix.max(0.0) * iy.max(0.0)
    }
}

impl From<[f64; 4]> for BBox {
    fn from(v: [f64; 4]) -> Self {
        Self::new(v[0], v[1], v[2], v[3])
    }
}

impl From<BBox> for [f64; 4] {
    fn from(b: BBox) -> Self {
        [b.x, b.y, b.w, b.h]
    }
}

/// One detected object at one instant, with raw classifier margins.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub obs_id: u64,
    pub track_id: u64,
    #[serde(rename = "t")]
    pub time: f64,
    #[serde(rename = "box")]
    pub bbox: BBox,
    #[serde(default)]
    pub class_margins: BTreeMap<String, f64>,
    #[serde(default)]
    pub attr_margins: BTreeMap<String, f64>,
}

impl Observation {
    fn check(&self) -> Result<(), String> {
        if !(self.time.is_finite() && self.time >= 0.0) {
            return Err(format!("time {} must be finite and non-negative", self.time));
        }
        let b = &self.bbox;
        if !(b.x.is_finite() && b.y.is_finite()) {
            return Err("box origin must be finite".into());
        }
        if !(b.w.is_finite() && b.h.is_finite() && b.w > 0.0 && b.h > 0.0) {
            return Err(format!("box size {}x{} must be positive", b.w, b.h));
        }
        for (name, m) in self.class_margins.iter().chain(&self.attr_margins) {
            if !m.is_finite() {
                return Err(format!("margin '{name}' is not finite"));
            }
        }
        Ok(())
    }
}

/// Time-ordered observations sharing a tracker identity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tracklet {
    pub track_id: u64,
    pub observations: Vec<u64>,
    pub span: (f64, f64),
}

/// Elementary per-tracklet features used by re-identification.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrackletSummary {
    pub track_id: u64,
    pub start_time: f64,
    pub end_time: f64,
    pub start_center: (f64, f64),
    pub end_center: (f64, f64),
    pub mean_aspect: f64,
    pub mean_area: f64,
    /// Mean center displacement per second over the tracklet.
    pub mean_speed: f64,
}

/// Immutable, indexed collection of observations.
#[derive(Debug, Clone)]
pub struct ArchiveStore {
    observations: Vec<Observation>,
    tracklets: Vec<Tracklet>,
    summaries: Vec<TrackletSummary>,
    /// observation index -> tracklet index
    obs_track: Vec<usize>,
    time_index: TimeIndex,
}

impl Default for ArchiveStore {
    fn default() -> Self {
        Self::empty()
    }
}

impl ArchiveStore {
    pub fn empty() -> Self {
        Self {
            observations: Vec::new(),
            tracklets: Vec::new(),
            summaries: Vec::new(),
            obs_track: Vec::new(),
            time_index: TimeIndex::build(&[]),
        }
    }

    /// Builds a store from in-memory observations, checking every invariant.
    pub fn from_observations(observations: Vec<Observation>) -> Result<Self, ArchiveError> {
        let mut numbered: Vec<(usize, Observation)> =
            observations.into_iter().enumerate().map(|(i, o)| (i + 1, o)).collect();
        for (line, obs) in &numbered {
            obs.check().map_err(|reason| ArchiveError::Invalid {
                line: *line,
                obs_id: obs.obs_id,
                reason,
            })?;
        }
        numbered.sort_by_key(|(_, o)| o.obs_id);
        for pair in numbered.windows(2) {
            if pair[0].1.obs_id == pair[1].1.obs_id {
                return Err(ArchiveError::DuplicateObsId {
                    obs_id: pair[1].1.obs_id,
                    line: pair[0].0.max(pair[1].0),
                });
            }
        }
        let observations: Vec<Observation> = numbered.into_iter().map(|(_, o)| o).collect();

        let mut by_track: BTreeMap<u64, Vec<usize>> = BTreeMap::new();
        for (i, o) in observations.iter().enumerate() {
            by_track.entry(o.track_id).or_default().push(i);
        }
        let mut tracklets = Vec::with_capacity(by_track.len());
        let mut summaries = Vec::with_capacity(by_track.len());
        let mut obs_track = vec![0; observations.len()];
        for (track_id, mut members) in by_track {
            members.sort_by(|&a, &b| observations[a].time.total_cmp(&observations[b].time));
            for pair in members.windows(2) {
                if observations[pair[0]].time == observations[pair[1]].time {
                    return Err(ArchiveError::DuplicateTrackTime {
                        track_id,
                        time: observations[pair[0]].time,
                    });
                }
            }
            for &m in &members {
                obs_track[m] = tracklets.len();
            }
            summaries.push(summarize(track_id, &members, &observations));
            let first = observations[members[0]].time;
            let last = observations[*members.last().unwrap()].time;
            tracklets.push(Tracklet {
                track_id,
                observations: members.iter().map(|&m| observations[m].obs_id).collect(),
                span: (first, last),
            });
        }
        let time_index = TimeIndex::build(&observations);
        Ok(Self {
            observations,
            tracklets,
            summaries,
            obs_track,
            time_index,
        })
    }

    /// Parses JSON Lines, one observation per line. Blank lines are skipped.
    pub fn from_jsonl<R: BufRead>(reader: R) -> Result<Self, ArchiveError> {
        let mut observations = Vec::new();
        let mut lines = Vec::new();
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let obs: Observation = serde_json::from_str(&line)
                .map_err(|source| ArchiveError::Parse { line: i + 1, source })?;
            observations.push(obs);
            lines.push(i + 1);
        }
        // Report invariant violations against the physical line number.
        Self::from_observations(observations).map_err(|e| match e {
            ArchiveError::Invalid { line, obs_id, reason } => ArchiveError::Invalid {
                line: lines[line - 1],
                obs_id,
                reason,
            },
            ArchiveError::DuplicateObsId { obs_id, line } => ArchiveError::DuplicateObsId {
                obs_id,
                line: lines[line - 1],
            },
            other => other,
        })
    }

    /// Writes the archive as JSON Lines in `obs_id` order.
    pub fn write_jsonl<W: Write>(&self, mut out: W) -> Result<(), ArchiveError> {
        for obs in &self.observations {
            serde_json::to_writer(&mut out, obs).map_err(std::io::Error::from)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn to_jsonl_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_jsonl(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("json is utf-8")
    }

    pub fn len(&self) -> usize {
        self.observations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observations.is_empty()
    }

    /// Observations sorted by `obs_id`.
    pub fn observations(&self) -> &[Observation] {
        &self.observations
    }

    pub fn observation(&self, index: usize) -> &Observation {
        &self.observations[index]
    }

    pub fn index_of(&self, obs_id: u64) -> Option<usize> {
        self.observations.binary_search_by_key(&obs_id, |o| o.obs_id).ok()
    }

    pub fn get(&self, obs_id: u64) -> Option<&Observation> {
        self.index_of(obs_id).map(|i| &self.observations[i])
    }

    pub fn tracklets(&self) -> &[Tracklet] {
        &self.tracklets
    }

    pub fn tracklet(&self, track_id: u64) -> Option<&Tracklet> {
        self.tracklets
            .binary_search_by_key(&track_id, |t| t.track_id)
            .ok()
            .map(|i| &self.tracklets[i])
    }

    /// Summary of the tracklet that observation `index` belongs to.
    pub fn summary_for(&self, index: usize) -> &TrackletSummary {
        &self.summaries[self.obs_track[index]]
    }

    /// Tracklet summaries in track id order.
    pub fn summaries(&self) -> &[TrackletSummary] {
        &self.summaries
    }

    pub fn summary(&self, track_id: u64) -> Option<&TrackletSummary> {
        self.summaries
            .binary_search_by_key(&track_id, |s| s.track_id)
            .ok()
            .map(|i| &self.summaries[i])
    }

    pub fn time_index(&self) -> &TimeIndex {
        &self.time_index
    }

    /// Observation ids whose time lies in `[t0, t1]`.
    pub fn window(&self, t0: f64, t1: f64) -> Vec<u64> {
        self.time_index
            .window(t0, t1)
            .iter()
            .map(|&i| self.observations[i].obs_id)
            .collect()
    }

    /// `(first, last)` observation time, if any.
    pub fn time_span(&self) -> Option<(f64, f64)> {
        self.time_index.span()
    }

    /// SHA-256 of the canonical JSON Lines export, hex encoded.
    pub fn checksum(&self) -> String {
        let digest = Sha256::digest(self.to_jsonl_string().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Observation ids whose probability for `node` is at least `tau`.
    pub fn query_candidates(
        &self,
        node: &QueryNode,
        models: &CalibrationModel,
        tau: f64,
    ) -> Result<Vec<u64>, ArchiveError> {
        let scorer = Scorer::new(self, models);
        let mut out = Vec::new();
        for obs in &self.observations {
            if scorer.node_probability(node, obs)? >= tau {
                out.push(obs.obs_id);
            }
        }
        Ok(out)
    }
}

fn summarize(track_id: u64, members: &[usize], observations: &[Observation]) -> TrackletSummary {
    let first = &observations[members[0]];
    let last = &observations[*members.last().unwrap()];
    let n = members.len() as f64;
    let mean_aspect = members.iter().map(|&m| observations[m].bbox.aspect()).sum::<f64>() / n;
    let mean_area = members.iter().map(|&m| observations[m].bbox.area()).sum::<f64>() / n;
    let path: f64 = members
        .windows(2)
        .map(|p| {
            let (ax, ay) = observations[p[0]].bbox.center();
            let (bx, by) = observations[p[1]].bbox.center();
            (bx - ax).hypot(by - ay)
        })
        .sum();
    let duration = last.time - first.time;
    TrackletSummary {
        track_id,
        start_time: first.time,
        end_time: last.time,
        start_center: first.bbox.center(),
        end_center: last.bbox.center(),
        mean_aspect,
        mean_area,
        mean_speed: if duration > 0.0 { path / duration } else { 0.0 },
    }
}

/// Provenance record written next to an ingested archive.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchiveManifest {
    pub source: String,
    pub count: usize,
    pub tracklets: usize,
    pub checksum: String,
    pub time_span: Option<(f64, f64)>,
    /// Relationship frequencies are estimated once per archive, not per scene.
    pub frequency_scope: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub frequencies: Option<RelFreqTable>,
}

impl ArchiveManifest {
    pub fn new(source: impl Into<String>, store: &ArchiveStore) -> Self {
        Self {
            source: source.into(),
            count: store.len(),
            tracklets: store.tracklets().len(),
            checksum: store.checksum(),
            time_span: store.time_span(),
            frequency_scope: "global".into(),
            frequencies: None,
        }
    }
}
