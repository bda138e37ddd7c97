//! The O-D pair graph.
//!
//! Vertices are (origin, destination) zone pairs, indexed `i = o * u + d`.
//! Pairwise adjacency is the quadratic mean of inverse great-circle distances
//! between the two origins and between the two destinations. The graph is
//! fully connected.

use std::collections::HashSet;
use std::path::Path;

use serde::Deserialize;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Mean Earth radius in kilometres.
pub const EARTH_RADIUS_KM: f64 = 6371.0;

/// Distances are floored here before inversion, capping adjacency at 10.
pub const DISTANCE_FLOOR_KM: f64 = 0.1;

#[derive(Clone, Debug, PartialEq, Deserialize)]
pub struct Zone {
    #[serde(rename = "zone_id")]
    pub id: String,
    pub lat: f64,
    pub lng: f64,
}

impl Zone {
    pub fn new(id: impl Into<String>, lat: f64, lng: f64) -> Result<Self> {
        let zone = Self {
            id: id.into(),
            lat,
            lng,
        };
        zone.validate()?;
        Ok(zone)
    }

    fn validate(&self) -> Result<()> {
        check_coordinates(self.lat, self.lng).map_err(|e| Error::Data(format!("zone {}: {e}", self.id)))
    }
}

/// Zones with unique ids and in-range coordinates.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ZoneTable {
    zones: Vec<Zone>,
}

impl ZoneTable {
    pub fn new(zones: Vec<Zone>) -> Result<Self> {
        let mut seen = HashSet::new();
        for z in &zones {
            z.validate()?;
            if !seen.insert(z.id.as_str()) {
                return Err(Error::Data(format!("duplicate zone id {}", z.id)));
            }
        }
        Ok(Self { zones })
    }

    /// Reads a `zone_id,lat,lng` CSV file.
    pub fn from_csv(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::from_reader(file).map_err(|e| match e {
            Error::Data(msg) => Error::Data(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn from_reader(reader: impl std::io::Read) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let zones = rdr
            .deserialize()
            .collect::<std::result::Result<Vec<Zone>, _>>()
            .map_err(|e| Error::Data(format!("zones csv: {e}")))?;
        Self::new(zones)
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut out = String::from("zone_id,lat,lng\n");
        for z in &self.zones {
            out.push_str(&format!("{},{},{}\n", z.id, z.lat, z.lng));
        }
        std::fs::write(path, out).map_err(|e| Error::io(path, e))
    }

    pub fn zones(&self) -> &[Zone] {
        &self.zones
    }

    pub fn len(&self) -> usize {
        self.zones.len()
    }

    pub fn is_empty(&self) -> bool {
        self.zones.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&Zone> {
        self.zones.iter().find(|z| z.id == id)
    }
}

fn check_coordinates(lat: f64, lng: f64) -> Result<()> {
    if !(-90.0..=90.0).contains(&lat) {
        return Err(Error::Domain(format!("latitude {lat} outside [-90, 90]")));
    }
    if !(-180.0..=180.0).contains(&lng) {
        return Err(Error::Domain(format!("longitude {lng} outside [-180, 180]")));
    }
    Ok(())
}

/// Great-circle distance in kilometres between two points given in degrees.
pub fn haversine(lat1: f64, lng1: f64, lat2: f64, lng2: f64) -> Result<f64> {
    check_coordinates(lat1, lng1)?;
    check_coordinates(lat2, lng2)?;
    let (p1, p2) = (lat1.to_radians(), lat2.to_radians());
    let dlat = p2 - p1;
    let dlng = (lng2 - lng1).to_radians();
    let a = (dlat / 2.0).sin().powi(2) + p1.cos() * p2.cos() * (dlng / 2.0).sin().powi(2);
    Ok(2.0 * EARTH_RADIUS_KM * a.sqrt().min(1.0).asin())
}

fn zone_distance(a: &Zone, b: &Zone) -> f64 {
    haversine(a.lat, a.lng, b.lat, b.lng).expect("zones are validated on construction")
}

/// O-D pair graph with adjacency and diffusion transition matrices.
#[derive(Clone, Debug)]
pub struct OdGraph {
    origins: Vec<Zone>,
    destinations: Vec<Zone>,
    adjacency: Tensor,
    forward: Tensor,
    backward: Tensor,
    out_degree: Vec<f64>,
}

impl OdGraph {
    /// Uses the first `m` zones as origins and the first `u` as destinations.
    pub fn from_zone_table(zones: &ZoneTable, m: usize, u: usize) -> Result<Self> {
        if m == 0 || u == 0 || m > zones.len() || u > zones.len() {
            return Err(Error::Contract(format!(
                "need 1 <= m, u <= {} zones, got m={m}, u={u}",
                zones.len()
            )));
        }
        Self::new(zones.zones()[..m].to_vec(), zones.zones()[..u].to_vec())
    }

    pub fn new(origins: Vec<Zone>, destinations: Vec<Zone>) -> Result<Self> {
        if origins.is_empty() || destinations.is_empty() {
            return Err(Error::Contract(
                "graph needs at least one origin and destination".into(),
            ));
        }
        let adjacency = build_adjacency(&origins, &destinations);
        let (forward, backward, out_degree) = transition_matrices(&adjacency)?;
        Ok(Self {
            origins,
            destinations,
            adjacency,
            forward,
            backward,
            out_degree,
        })
    }

    pub fn num_origins(&self) -> usize {
        self.origins.len()
    }

    pub fn num_destinations(&self) -> usize {
        self.destinations.len()
    }

    /// |V| = m · u.
    pub fn num_nodes(&self) -> usize {
        self.origins.len() * self.destinations.len()
    }

    /// (origin, destination) of pair `i`.
    pub fn pair(&self, i: usize) -> (&Zone, &Zone) {
        let u = self.destinations.len();
        (&self.origins[i / u], &self.destinations[i % u])
    }

    pub fn origins(&self) -> &[Zone] {
        &self.origins
    }

    pub fn destinations(&self) -> &[Zone] {
        &self.destinations
    }

    pub fn adjacency(&self) -> &Tensor {
        &self.adjacency
    }

    pub fn forward_transition(&self) -> &Tensor {
        &self.forward
    }

    pub fn backward_transition(&self) -> &Tensor {
        &self.backward
    }

    /// Diagonal of the out-degree matrix (row sums of A).
    pub fn out_degree(&self) -> &[f64] {
        &self.out_degree
    }
}

/// Quadratic-mean inverse-distance adjacency over all O-D pairs.
fn build_adjacency(origins: &[Zone], destinations: &[Zone]) -> Tensor {
    let u = destinations.len();
    let n = origins.len() * u;
    let mut a = Tensor::zeros(&[n, n]);
    for i in 0..n {
        for j in i..n {
            let d_o = zone_distance(&origins[i / u], &origins[j / u]).max(DISTANCE_FLOOR_KM);
            let d_d = zone_distance(&destinations[i % u], &destinations[j % u]).max(DISTANCE_FLOOR_KM);
            let (a_o, a_d) = (1.0 / d_o, 1.0 / d_d);
            let v = (0.5 * (a_o * a_o + a_d * a_d)).sqrt();
            a.set(&[i, j], v);
            a.set(&[j, i], v);
        }
    }
    a
}

/// Row-normalised forward and backward transition matrices and the
/// out-degree diagonal of a non-negative adjacency matrix.
pub fn transition_matrices(adjacency: &Tensor) -> Result<(Tensor, Tensor, Vec<f64>)> {
    let (r, c) = adjacency.dims2()?;
    if r != c {
        return Err(Error::Dimension(format!("adjacency must be square, got {r}x{c}")));
    }
    let forward = row_normalise(adjacency)?;
    let backward = row_normalise(&adjacency.transpose()?)?;
    let out_degree = adjacency.data().chunks(c).map(|row| row.iter().sum()).collect();
    Ok((forward, backward, out_degree))
}

fn row_normalise(m: &Tensor) -> Result<Tensor> {
    let (_, c) = m.dims2()?;
    let mut out = m.clone();
    for (i, row) in out.data_mut().chunks_mut(c).enumerate() {
        let s: f64 = row.iter().sum();
        if !(s > 0.0) {
            return Err(Error::DegenerateGraph(format!("row {i} of adjacency sums to {s}")));
        }
        row.iter_mut().for_each(|x| *x /= s);
    }
    Ok(out)
}

/// `[T_0(X), …, T_K(X)]` with `T_0 = I`, `T_1 = X`, `T_k = 2 X T_{k-1} - T_{k-2}`.
pub fn chebyshev_sequence(x: &Tensor, k: usize) -> Result<Vec<Tensor>> {
    let (r, c) = x.dims2()?;
    if r != c {
        return Err(Error::Dimension(format!(
            "Chebyshev needs a square matrix, got {r}x{c}"
        )));
    }
    if k < 1 {
        return Err(Error::Contract("diffusion steps K must be >= 1".into()));
    }
    let mut seq = vec![Tensor::eye(r), x.clone()];
    for step in 2..=k {
        let mut next = x.matmul(&seq[step - 1])?;
        for (o, prev) in next.data_mut().iter_mut().zip(seq[step - 2].data()) {
            *o = 2.0 * *o - prev;
        }
        seq.push(next);
    }
    Ok(seq)
}

/// Truncated random-walk-with-restart diffusion
/// `Σ_{k<terms} α(1-α)^k (D⁻¹A)^k`, with the geometric weights rescaled to
/// sum to one so truncation does not leak probability mass.
///
/// Only used to cross-check the Chebyshev path; the layers never call it.
pub fn diffusion_stationary(adjacency: &Tensor, alpha: f64, terms: usize) -> Result<Tensor> {
    if !(alpha > 0.0 && alpha <= 1.0) || terms == 0 {
        return Err(Error::Contract(format!(
            "need alpha in (0, 1] and terms >= 1, got alpha={alpha}, terms={terms}"
        )));
    }
    let (w, _, _) = transition_matrices(adjacency)?;
    let n = w.shape()[0];
    let total: f64 = 1.0 - (1.0 - alpha).powi(terms as i32);
    let mut power = Tensor::eye(n);
    let mut out = Tensor::zeros(&[n, n]);
    for k in 0..terms {
        let weight = alpha * (1.0 - alpha).powi(k as i32) / total;
        for (o, p) in out.data_mut().iter_mut().zip(power.data()) {
            *o += weight * p;
        }
        power = power.matmul(&w)?;
    }
    Ok(out)
}
