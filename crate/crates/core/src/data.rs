//! Demand tensors and everything that produces or slices them: trip
//! ingestion, resampling, synthetic generation, chronological splits and the
//! `ODT1` container.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::{Read, Write};
use std::ops::Range;
use std::path::{Path, PathBuf};

use chrono::{DateTime, NaiveDateTime};
use rand::seq::index::sample;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{OdGraph, Zone, ZoneTable};
use crate::heads::Dist;
use crate::tensor::Tensor;

const SECONDS_PER_DAY: i64 = 86_400;
const ODT_MAGIC: &[u8; 4] = b"ODT1";
const ODT_VERSION: u32 = 1;

/// Non-negative integer demand per O-D pair (rows) and time window (columns).
#[derive(Clone, Debug, PartialEq)]
pub struct DemandTensor {
    counts: Vec<u32>,
    num_nodes: usize,
    num_windows: usize,
    resolution_minutes: u32,
    t0: i64,
    origins: Vec<String>,
    destinations: Vec<String>,
}

impl DemandTensor {
    /// `counts` is node-major: `counts[node * num_windows + t]`. Node `i` is
    /// the pair `(origins[i / u], destinations[i % u])`.
    pub fn new(
        counts: Vec<u32>,
        num_windows: usize,
        resolution_minutes: u32,
        t0: i64,
        origins: Vec<String>,
        destinations: Vec<String>,
    ) -> Result<Self> {
        let num_nodes = origins.len() * destinations.len();
        if num_nodes == 0 || num_windows == 0 {
            return Err(Error::Data("demand tensor needs at least one node and window".into()));
        }
        if counts.len() != num_nodes * num_windows {
            return Err(Error::Data(format!(
                "{} counts for {num_nodes} nodes x {num_windows} windows",
                counts.len()
            )));
        }
        check_resolution(resolution_minutes)?;
        Ok(Self {
            counts,
            num_nodes,
            num_windows,
            resolution_minutes,
            t0,
            origins,
            destinations,
        })
    }

    pub fn num_nodes(&self) -> usize {
        self.num_nodes
    }

    pub fn num_windows(&self) -> usize {
        self.num_windows
    }

    pub fn resolution_minutes(&self) -> u32 {
        self.resolution_minutes
    }

    /// Span start, UTC seconds.
    pub fn t0(&self) -> i64 {
        self.t0
    }

    pub fn origins(&self) -> &[String] {
        &self.origins
    }

    pub fn destinations(&self) -> &[String] {
        &self.destinations
    }

    pub fn counts(&self) -> &[u32] {
        &self.counts
    }

    pub fn get(&self, node: usize, t: usize) -> u32 {
        self.counts[node * self.num_windows + t]
    }

    pub fn series(&self, node: usize) -> &[u32] {
        &self.counts[node * self.num_windows..(node + 1) * self.num_windows]
    }

    /// (origin id, destination id) of node `i`.
    pub fn pair(&self, i: usize) -> (&str, &str) {
        let u = self.destinations.len();
        (&self.origins[i / u], &self.destinations[i % u])
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().map(|&c| u64::from(c)).sum()
    }

    pub fn zero_rate(&self) -> f64 {
        self.counts.iter().filter(|&&c| c == 0).count() as f64 / self.counts.len() as f64
    }

    /// Windows per day.
    pub fn slots_per_day(&self) -> usize {
        (1440 / self.resolution_minutes) as usize
    }

    /// Daily slot of window `t`.
    pub fn slot_of(&self, t: usize) -> usize {
        let minutes = self.t0.rem_euclid(SECONDS_PER_DAY) / 60;
        let first = (minutes / i64::from(self.resolution_minutes)) as usize;
        (first + t) % self.slots_per_day()
    }

    /// Sums groups of `factor` consecutive windows; a trailing partial group
    /// is kept.
    pub fn coarsen(&self, factor: usize) -> Result<Self> {
        if factor == 0 {
            return Err(Error::Contract("coarsening factor must be >= 1".into()));
        }
        let resolution = self.resolution_minutes as usize * factor;
        let windows = self.num_windows.div_ceil(factor);
        let mut counts = Vec::with_capacity(self.num_nodes * windows);
        for node in 0..self.num_nodes {
            for chunk in self.series(node).chunks(factor) {
                counts.push(chunk.iter().sum());
            }
        }
        Self::new(
            counts,
            windows,
            u32::try_from(resolution).map_err(|_| Error::Data("resolution overflow".into()))?,
            self.t0,
            self.origins.clone(),
            self.destinations.clone(),
        )
    }

    /// Re-aggregates to a coarser resolution that is a multiple of this one.
    pub fn resample(&self, resolution_minutes: u32) -> Result<Self> {
        if !resolution_minutes.is_multiple_of(self.resolution_minutes) {
            return Err(Error::Data(format!(
                "cannot resample {} min windows to {resolution_minutes} min",
                self.resolution_minutes
            )));
        }
        self.coarsen((resolution_minutes / self.resolution_minutes) as usize)
    }

    /// Restricts the tensor to windows `range`.
    pub fn slice_windows(&self, range: Range<usize>) -> Result<Self> {
        if range.start >= range.end || range.end > self.num_windows {
            return Err(Error::Contract(format!(
                "window range {range:?} outside 0..{}",
                self.num_windows
            )));
        }
        let len = range.len();
        let counts = (0..self.num_nodes)
            .flat_map(|n| self.series(n)[range.clone()].iter().copied())
            .collect();
        let t0 = self.t0 + range.start as i64 * i64::from(self.resolution_minutes) * 60;
        Self::new(
            counts,
            len,
            self.resolution_minutes,
            t0,
            self.origins.clone(),
            self.destinations.clone(),
        )
    }

    /// Builds the O-D graph for this tensor's node order from a zone table.
    pub fn graph(&self, zones: &ZoneTable) -> Result<OdGraph> {
        let lookup = |ids: &[String]| -> Result<Vec<Zone>> {
            ids.iter()
                .map(|id| {
                    zones
                        .get(id)
                        .cloned()
                        .ok_or_else(|| Error::Data(format!("zone {id} missing from zone table")))
                })
                .collect()
        };
        OdGraph::new(lookup(&self.origins)?, lookup(&self.destinations)?)
    }

    /// `[B×V×t]` inputs and `[B×V×k]` targets for windows starting at `starts`.
    pub fn batch(&self, starts: &[usize], t_window: usize, horizon: usize) -> Result<(Tensor, Tensor)> {
        let v = self.num_nodes;
        let b = starts.len();
        if b == 0 {
            return Err(Error::Contract("empty batch".into()));
        }
        let mut x = Vec::with_capacity(b * v * t_window);
        let mut y = Vec::with_capacity(b * v * horizon);
        for &s in starts {
            if s + t_window + horizon > self.num_windows {
                return Err(Error::Contract(format!(
                    "window starting at {s} runs past {} windows",
                    self.num_windows
                )));
            }
            for node in 0..v {
                let row = self.series(node);
                x.extend(row[s..s + t_window].iter().map(|&c| f64::from(c)));
                y.extend(row[s + t_window..s + t_window + horizon].iter().map(|&c| f64::from(c)));
            }
        }
        Ok((
            Tensor::new(vec![b, v, t_window], x)?,
            Tensor::new(vec![b, v, horizon], y)?,
        ))
    }

    /// `[1×V×t]` input made of the last `t_window` windows.
    pub fn latest_history(&self, t_window: usize) -> Result<Tensor> {
        if t_window > self.num_windows {
            return Err(Error::Data(format!(
                "need {t_window} windows of history, tensor has {}",
                self.num_windows
            )));
        }
        let s = self.num_windows - t_window;
        let data = (0..self.num_nodes)
            .flat_map(|n| self.series(n)[s..].iter().map(|&c| f64::from(c)))
            .collect();
        Tensor::new(vec![1, self.num_nodes, t_window], data)
    }

    // ---- ODT1 container ---------------------------------------------------

    /// Writes the binary tensor to `path` and metadata to `path.json`.
    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut buf = Vec::with_capacity(16 + 8 * self.counts.len());
        buf.extend_from_slice(ODT_MAGIC);
        buf.extend_from_slice(&2u32.to_le_bytes());
        buf.extend_from_slice(&(self.num_nodes as u64).to_le_bytes());
        buf.extend_from_slice(&(self.num_windows as u64).to_le_bytes());
        for &c in &self.counts {
            buf.extend_from_slice(&f64::from(c).to_le_bytes());
        }
        std::fs::write(path, buf).map_err(|e| Error::io(path, e))?;
        let meta = Sidecar {
            format: "ODT1".into(),
            version: ODT_VERSION,
            resolution_minutes: self.resolution_minutes,
            t0: self.t0,
            origins: self.origins.clone(),
            destinations: self.destinations.clone(),
        };
        let side = sidecar_path(path);
        let json = serde_json::to_string_pretty(&meta).expect("sidecar serialises");
        std::fs::write(&side, json).map_err(|e| Error::io(&side, e))
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let side = sidecar_path(path);
        let json = std::fs::read_to_string(&side).map_err(|e| Error::io(&side, e))?;
        let meta: Sidecar =
            serde_json::from_str(&json).map_err(|e| Error::Format(format!("{}: {e}", side.display())))?;
        if meta.format != "ODT1" || meta.version != ODT_VERSION {
            return Err(Error::Format(format!(
                "{}: unsupported sidecar {} v{}",
                side.display(),
                meta.format,
                meta.version
            )));
        }
        let mut r = bytes.as_slice();
        let mut magic = [0u8; 4];
        read_exact(&mut r, &mut magic)?;
        if &magic != ODT_MAGIC {
            return Err(Error::Format(format!("{}: bad magic {magic:?}", path.display())));
        }
        let rank = read_u32(&mut r)?;
        if rank != 2 {
            return Err(Error::Format(format!("expected rank-2 demand tensor, got rank {rank}")));
        }
        let v = read_u64(&mut r)? as usize;
        let t = read_u64(&mut r)? as usize;
        if v != meta.origins.len() * meta.destinations.len() {
            return Err(Error::Format(format!(
                "tensor has {v} nodes, sidecar lists {}x{} pairs",
                meta.origins.len(),
                meta.destinations.len()
            )));
        }
        let n = v
            .checked_mul(t)
            .ok_or_else(|| Error::Format("dimension overflow".into()))?;
        if r.len() != n * 8 {
            return Err(Error::Format(format!(
                "expected {} value bytes, found {}",
                n * 8,
                r.len()
            )));
        }
        let mut counts = Vec::with_capacity(n);
        for chunk in r.chunks_exact(8) {
            let x = f64::from_le_bytes(chunk.try_into().expect("8-byte chunk"));
            if !(x >= 0.0) || x.fract() != 0.0 || x > f64::from(u32::MAX) {
                return Err(Error::Format(format!("demand value {x} is not a count")));
            }
            counts.push(x as u32);
        }
        Self::new(
            counts,
            t,
            meta.resolution_minutes,
            meta.t0,
            meta.origins,
            meta.destinations,
        )
    }
}

#[derive(Serialize, Deserialize)]
struct Sidecar {
    format: String,
    version: u32,
    resolution_minutes: u32,
    t0: i64,
    origins: Vec<String>,
    destinations: Vec<String>,
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

pub(crate) fn read_exact(r: &mut &[u8], buf: &mut [u8]) -> Result<()> {
    r.read_exact(buf)
        .map_err(|_| Error::Format("unexpected end of file".into()))
}

pub(crate) fn read_u32(r: &mut &[u8]) -> Result<u32> {
    let mut b = [0u8; 4];
    read_exact(r, &mut b)?;
    Ok(u32::from_le_bytes(b))
}

pub(crate) fn read_u64(r: &mut &[u8]) -> Result<u64> {
    let mut b = [0u8; 8];
    read_exact(r, &mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn check_resolution(minutes: u32) -> Result<()> {
    if minutes == 0 || 1440 % minutes != 0 {
        return Err(Error::Data(format!("resolution {minutes} min does not divide 24 h")));
    }
    Ok(())
}

// ---- trips -----------------------------------------------------------------

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TripRecord {
    /// UTC seconds.
    pub timestamp: i64,
    pub origin_zone: String,
    pub dest_zone: String,
    pub count: u32,
}

#[derive(Deserialize)]
struct TripRow {
    timestamp: String,
    origin_zone: String,
    dest_zone: String,
    count: Option<u32>,
}

/// Parses ISO-8601 UTC timestamps (`2019-09-01T08:00:00Z`,
/// `2019-09-01 08:00:00`) or integer epoch seconds.
pub fn parse_timestamp(s: &str) -> Result<i64> {
    let s = s.trim();
    if let Ok(secs) = s.parse::<i64>() {
        return Ok(secs);
    }
    if let Ok(dt) = DateTime::parse_from_rfc3339(s) {
        return Ok(dt.timestamp());
    }
    for fmt in [
        "%Y-%m-%dT%H:%M:%S",
        "%Y-%m-%d %H:%M:%S",
        "%Y-%m-%dT%H:%M",
        "%Y-%m-%d %H:%M",
    ] {
        if let Ok(dt) = NaiveDateTime::parse_from_str(s, fmt) {
            return Ok(dt.and_utc().timestamp());
        }
    }
    Err(Error::Data(format!("unparseable timestamp {s:?}")))
}

/// Reads a `timestamp,origin_zone,dest_zone[,count]` CSV.
pub fn read_trips(reader: impl Read) -> Result<Vec<TripRecord>> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .flexible(true)
        .from_reader(reader);
    let mut out = Vec::new();
    for (line, row) in rdr.deserialize::<TripRow>().enumerate() {
        let row = row.map_err(|e| Error::Data(format!("trips csv: {e}")))?;
        let count = row.count.unwrap_or(1);
        if count == 0 {
            return Err(Error::Data(format!("trip row {}: count must be positive", line + 1)));
        }
        out.push(TripRecord {
            timestamp: parse_timestamp(&row.timestamp)?,
            origin_zone: row.origin_zone,
            dest_zone: row.dest_zone,
            count,
        });
    }
    Ok(out)
}

pub fn read_trips_file(path: impl AsRef<Path>) -> Result<Vec<TripRecord>> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_trips(file).map_err(|e| match e {
        Error::Data(m) => Error::Data(format!("{}: {m}", path.display())),
        other => other,
    })
}

pub fn write_trips(path: impl AsRef<Path>, trips: &[TripRecord]) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::from("timestamp,origin_zone,dest_zone,count\n");
    for t in trips {
        let ts = DateTime::from_timestamp(t.timestamp, 0)
            .ok_or_else(|| Error::Data(format!("timestamp {} out of range", t.timestamp)))?;
        out.push_str(&format!(
            "{},{},{},{}\n",
            ts.format("%Y-%m-%dT%H:%M:%SZ"),
            t.origin_zone,
            t.dest_zone,
            t.count
        ));
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Random subset of origin and destination zones, drawn under a seed.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ZoneSubset {
    pub origins: usize,
    pub destinations: usize,
    pub seed: u64,
}

#[derive(Clone, Debug)]
pub struct Ingested {
    pub tensor: DemandTensor,
    pub graph: OdGraph,
    /// Trip weight (sum of counts) that landed in the tensor.
    pub accepted: u64,
    /// Trip weight whose zones fell outside the sampled subset.
    pub skipped: u64,
}

/// Aggregates trips into `resolution_minutes` windows.
///
/// The span runs from midnight (UTC) of the first trip's day to midnight
/// after the last trip's day, so every resolution dividing 24 h tiles it.
/// Every zone of `zones` is both an origin and a destination unless `subset`
/// samples fewer.
pub fn ingest(
    trips: &[TripRecord],
    zones: &ZoneTable,
    resolution_minutes: u32,
    subset: Option<ZoneSubset>,
) -> Result<Ingested> {
    check_resolution(resolution_minutes)?;
    if trips.is_empty() {
        return Err(Error::Data("no trip records".into()));
    }
    let unknown: BTreeSet<&str> = trips
        .iter()
        .flat_map(|t| [t.origin_zone.as_str(), t.dest_zone.as_str()])
        .filter(|id| zones.get(id).is_none())
        .collect();
    if !unknown.is_empty() {
        let list: Vec<&str> = unknown.into_iter().collect();
        return Err(Error::Data(format!("unknown zone ids: {}", list.join(", "))));
    }

    let all = zones.zones();
    let (origins, destinations): (Vec<Zone>, Vec<Zone>) = match subset {
        None => (all.to_vec(), all.to_vec()),
        Some(s) => {
            if s.origins == 0 || s.destinations == 0 || s.origins > all.len() || s.destinations > all.len() {
                return Err(Error::Data(format!(
                    "cannot sample {}x{} zones from {}",
                    s.origins,
                    s.destinations,
                    all.len()
                )));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(s.seed);
            let mut pick = |k: usize| -> Vec<Zone> {
                let mut idx = sample(&mut rng, all.len(), k).into_vec();
                idx.sort_unstable();
                idx.into_iter().map(|i| all[i].clone()).collect()
            };
            let o = pick(s.origins);
            let d = pick(s.destinations);
            (o, d)
        }
    };
    let o_index: HashMap<&str, usize> = origins.iter().enumerate().map(|(i, z)| (z.id.as_str(), i)).collect();
    let d_index: HashMap<&str, usize> = destinations
        .iter()
        .enumerate()
        .map(|(i, z)| (z.id.as_str(), i))
        .collect();

    let first = trips.iter().map(|t| t.timestamp).min().expect("non-empty");
    let last = trips.iter().map(|t| t.timestamp).max().expect("non-empty");
    let t0 = first.div_euclid(SECONDS_PER_DAY) * SECONDS_PER_DAY;
    let end = (last.div_euclid(SECONDS_PER_DAY) + 1) * SECONDS_PER_DAY;
    let step = i64::from(resolution_minutes) * 60;
    let windows = ((end - t0) / step) as usize;
    let u = destinations.len();
    let nodes = origins.len() * u;
    let mut counts = vec![0u32; nodes * windows];
    let (mut accepted, mut skipped) = (0u64, 0u64);
    for trip in trips {
        match (
            o_index.get(trip.origin_zone.as_str()),
            d_index.get(trip.dest_zone.as_str()),
        ) {
            (Some(&o), Some(&d)) => {
                let w = ((trip.timestamp - t0) / step) as usize;
                let cell = &mut counts[(o * u + d) * windows + w];
                *cell = cell
                    .checked_add(trip.count)
                    .ok_or_else(|| Error::Data("demand count overflow".into()))?;
                accepted += u64::from(trip.count);
            }
            _ => skipped += u64::from(trip.count),
        }
    }
    if accepted == 0 {
        return Err(Error::Data("no trips fall inside the selected O-D pairs".into()));
    }
    let tensor = DemandTensor::new(
        counts,
        windows,
        resolution_minutes,
        t0,
        origins.iter().map(|z| z.id.clone()).collect(),
        destinations.iter().map(|z| z.id.clone()).collect(),
    )?;
    let graph = OdGraph::new(origins, destinations)?;
    Ok(Ingested {
        tensor,
        graph,
        accepted,
        skipped,
    })
}

pub fn ingest_files(
    trips_path: impl AsRef<Path>,
    zones_path: impl AsRef<Path>,
    resolution_minutes: u32,
    subset: Option<ZoneSubset>,
) -> Result<Ingested> {
    let zones = ZoneTable::from_csv(zones_path)?;
    let trips = read_trips_file(trips_path)?;
    ingest(&trips, &zones, resolution_minutes, subset)
}

// ---- sparsity ----------------------------------------------------------------

#[derive(Clone, Debug, PartialEq)]
pub struct SparsityReport {
    pub zero_rate: f64,
    /// (demand value, number of entries), ascending by value.
    pub histogram: Vec<(u32, u64)>,
}

pub fn sparsity_report(tensor: &DemandTensor) -> SparsityReport {
    let mut hist = BTreeMap::new();
    for &c in tensor.counts() {
        *hist.entry(c).or_insert(0u64) += 1;
    }
    SparsityReport {
        zero_rate: tensor.zero_rate(),
        histogram: hist.into_iter().collect(),
    }
}

impl SparsityReport {
    /// `value,count` CSV.
    pub fn write_histogram<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "value,count")?;
        for (v, c) in &self.histogram {
            writeln!(w, "{v},{c}")?;
        }
        Ok(())
    }
}

// ---- synthesis ---------------------------------------------------------------

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ZinbParams {
    pub pi: f64,
    pub n: f64,
    pub p: f64,
}

impl ZinbParams {
    pub fn zero_probability(&self) -> f64 {
        self.pi + (1.0 - self.pi) * self.p.powf(self.n)
    }

    pub fn dist(&self) -> Dist {
        Dist::Zinb {
            pi: self.pi,
            n: self.n,
            p: self.p,
        }
    }
}

/// Daily multiplier `1 + amplitude · sin(2π · slot / slots_per_day)` on the
/// NB mean.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Seasonality {
    pub amplitude: f64,
    pub slots_per_day: usize,
}

impl Seasonality {
    pub fn multiplier(&self, t: usize) -> f64 {
        let phase = 2.0 * std::f64::consts::PI * (t % self.slots_per_day) as f64 / self.slots_per_day as f64;
        (1.0 + self.amplitude * phase.sin()).max(1e-3)
    }
}

/// Per-node parameters whose zero probabilities are spread uniformly over
/// `target ± spread`, so the expected zero rate of the whole tensor is
/// `target`. `n` and the NB mean vary by node; `π` makes up the remaining
/// zero mass.
pub fn zinb_field_for_zero_rate(
    num_nodes: usize,
    target: f64,
    spread: f64,
    mean_range: (f64, f64),
    seed: u64,
) -> Result<Vec<ZinbParams>> {
    if !(target - spread > 0.0 && target + spread < 1.0 && spread >= 0.0) {
        return Err(Error::Contract(format!(
            "zero-rate band {target} ± {spread} must lie inside (0, 1)"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(num_nodes);
    for i in 0..num_nodes {
        // Evenly spaced quantiles, shuffled in node order by the draws below.
        let u = if num_nodes > 1 {
            i as f64 / (num_nodes - 1) as f64
        } else {
            0.5
        };
        let zero = target - spread + 2.0 * spread * u;
        let n = rng.random_range(0.8..3.0);
        let mean = rng.random_range(mean_range.0..=mean_range.1);
        let p = n / (n + mean);
        let nb_zero = p.powf(n);
        if nb_zero > zero {
            return Err(Error::Contract(format!(
                "NB zero mass {nb_zero:.3} already exceeds {zero:.3}; raise the mean range"
            )));
        }
        out.push(ZinbParams {
            pi: (zero - nb_zero) / (1.0 - nb_zero),
            n,
            p,
        });
    }
    out.shuffle(&mut rng);
    Ok(out)
}

/// i.i.d. ZINB draws per (node, window), optionally with a daily cycle on
/// the NB mean. Returns a node-major count vector.
pub fn synth_counts(
    field: &[ZinbParams],
    num_windows: usize,
    seasonality: Option<Seasonality>,
    seed: u64,
) -> Result<Vec<u32>> {
    for (i, f) in field.iter().enumerate() {
        f.dist()
            .validate()
            .map_err(|e| Error::Domain(format!("node {i}: {e}")))?;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(field.len() * num_windows);
    for f in field {
        for t in 0..num_windows {
            let d = match seasonality {
                None => f.dist(),
                Some(s) => {
                    let mean = f.n * (1.0 - f.p) / f.p * s.multiplier(t);
                    let p = (f.n / (f.n + mean)).clamp(1e-9, 1.0 - 1e-9);
                    Dist::Zinb { pi: f.pi, n: f.n, p }
                }
            };
            out.push(d.sample(&mut rng) as u32);
        }
    }
    Ok(out)
}

/// Synthetic demand over `graph`'s O-D pairs.
pub fn synth_generate(
    graph: &OdGraph,
    num_windows: usize,
    field: &[ZinbParams],
    seasonality: Option<Seasonality>,
    resolution_minutes: u32,
    seed: u64,
) -> Result<DemandTensor> {
    if field.len() != graph.num_nodes() {
        return Err(Error::Contract(format!(
            "{} parameter sets for {} nodes",
            field.len(),
            graph.num_nodes()
        )));
    }
    let counts = synth_counts(field, num_windows, seasonality, seed)?;
    DemandTensor::new(
        counts,
        num_windows,
        resolution_minutes,
        0,
        graph.origins().iter().map(|z| z.id.clone()).collect(),
        graph.destinations().iter().map(|z| z.id.clone()).collect(),
    )
}

/// `count` zones scattered within roughly 10 km of midtown Manhattan.
pub fn synthetic_zones(count: usize, seed: u64) -> ZoneTable {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let zones = (0..count)
        .map(|i| {
            let lat = 40.75 + rng.random_range(-0.09..0.09);
            let lng = -73.98 + rng.random_range(-0.12..0.12);
            Zone::new(format!("z{i:03}"), lat, lng).expect("coordinates in range")
        })
        .collect();
    ZoneTable::new(zones).expect("generated ids are unique")
}

// ---- splits ------------------------------------------------------------------

/// Contiguous chronological train / validation / test ranges.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DatasetSplit {
    pub train: Range<usize>,
    pub val: Range<usize>,
    pub test: Range<usize>,
}

/// Train and validation lengths are rounded down; the remainder goes to test.
pub fn split(num_windows: usize, fractions: (f64, f64, f64)) -> Result<DatasetSplit> {
    let (a, b, c) = fractions;
    if !(a > 0.0 && b > 0.0 && c > 0.0) || ((a + b + c) - 1.0).abs() > 1e-9 {
        return Err(Error::Config(format!(
            "split fractions must be positive and sum to 1, got ({a}, {b}, {c})"
        )));
    }
    let n = num_windows as f64;
    let train_len = (a * n + 1e-9).floor() as usize;
    let val_len = (b * n + 1e-9).floor() as usize;
    let train = 0..train_len;
    let val = train_len..train_len + val_len;
    let test = train_len + val_len..num_windows;
    if train.is_empty() || val.is_empty() || test.is_empty() {
        return Err(Error::Data(format!(
            "{num_windows} windows are too few for a three-way split"
        )));
    }
    Ok(DatasetSplit { train, val, test })
}

/// Start indices of every stride-1 window whose `t_window + horizon` span
/// lies inside `range`.
pub fn window_starts(range: &Range<usize>, t_window: usize, horizon: usize) -> Vec<usize> {
    let span = t_window + horizon;
    if range.len() < span {
        return Vec::new();
    }
    (range.start..=range.end - span).collect()
}

impl DatasetSplit {
    /// Window starts for each split, failing if any split has none.
    pub fn windows(&self, t_window: usize, horizon: usize) -> Result<[Vec<usize>; 3]> {
        let out = [
            window_starts(&self.train, t_window, horizon),
            window_starts(&self.val, t_window, horizon),
            window_starts(&self.test, t_window, horizon),
        ];
        for (name, w) in ["train", "validation", "test"].iter().zip(&out) {
            if w.is_empty() {
                return Err(Error::Data(format!(
                    "{name} split is shorter than t_window + horizon = {}",
                    t_window + horizon
                )));
            }
        }
        Ok(out)
    }
}
