//! Road networks, origin-destination demand, and trip completion under
//! sampled link failures.

use std::collections::{BTreeMap, HashMap};

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dg::{fit_dg, sample_dg, DgModel};
use crate::error::{Error, Result};
use crate::hazard::{constraints_from_distances, distance_between, Coordinates, HazardScenario, Site};
use crate::model::{MomentConstraints, Samples};
use crate::rng;

/// Undirected road network. Edge `k` is hazard component `k`.
#[derive(Clone, Debug, PartialEq)]
pub struct RoadNetwork {
    nodes: Vec<Site>,
    edges: Vec<(usize, usize)>,
    index: HashMap<String, usize>,
}

impl RoadNetwork {
    pub fn new(nodes: Vec<Site>, edges: &[(String, String)]) -> Result<Self> {
        if nodes.is_empty() {
            return Err(Error::EmptyInput("node list"));
        }
        let geo = nodes[0].position.is_geographic();
        let mut index = HashMap::with_capacity(nodes.len());
        for (k, n) in nodes.iter().enumerate() {
            n.position.validate()?;
            if n.position.is_geographic() != geo {
                return Err(Error::MixedCoordinateModes);
            }
            if index.insert(n.id.clone(), k).is_some() {
                return Err(Error::InvalidInput(format!("duplicate node id {}", n.id)));
            }
        }
        let lookup = |id: &str| {
            index
                .get(id)
                .copied()
                .ok_or_else(|| Error::InvalidInput(format!("edge endpoint {id} is not a known node")))
        };
        let edges = edges
            .iter()
            .map(|(u, v)| {
                let (a, b) = (lookup(u)?, lookup(v)?);
                if a == b {
                    return Err(Error::InvalidInput(format!("self-loop at node {u}")));
                }
                Ok((a, b))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(RoadNetwork { nodes, edges, index })
    }

    /// `rows × cols` planar lattice with `spacing_km` between neighbours,
    /// lower-left corner at `origin`. Node `r*cols + c` is named `n{r}_{c}`.
    pub fn grid(rows: usize, cols: usize, spacing_km: f64, origin: (f64, f64)) -> Result<Self> {
        if rows == 0 || cols == 0 || !(spacing_km > 0.0) {
            return Err(Error::InvalidInput("grid needs positive size and spacing".into()));
        }
        let name = |r: usize, c: usize| format!("n{r}_{c}");
        let mut nodes = Vec::with_capacity(rows * cols);
        let mut edges = Vec::new();
        for r in 0..rows {
            for c in 0..cols {
                nodes.push(Site::planar(
                    name(r, c),
                    origin.0 + c as f64 * spacing_km,
                    origin.1 + r as f64 * spacing_km,
                ));
                if c + 1 < cols {
                    edges.push((name(r, c), name(r, c + 1)));
                }
                if r + 1 < rows {
                    edges.push((name(r, c), name(r + 1, c)));
                }
            }
        }
        RoadNetwork::new(nodes, &edges)
    }

    pub fn nodes(&self) -> &[Site] {
        &self.nodes
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn n_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn node_index(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn is_geographic(&self) -> bool {
        self.nodes[0].position.is_geographic()
    }
}

/// Where a link sits for the hazard model.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum LinkLocation {
    /// Epicentral distance of the link midpoint.
    #[default]
    Midpoint,
    /// Mean of the two endpoint epicentral distances.
    EndpointAverage,
}

/// Moment constraints with one component per edge. Inter-link distances are
/// always measured between midpoints.
pub fn link_constraints(net: &RoadNetwork, scenario: &HazardScenario, location: LinkLocation) -> Result<MomentConstraints> {
    if net.n_edges() == 0 {
        return Err(Error::EmptyInput("edge list"));
    }
    if net.is_geographic() != scenario.epicenter.is_geographic() {
        return Err(Error::MixedCoordinateModes);
    }
    let pos = |k: usize| &net.nodes[k].position;
    let mids: Vec<Coordinates> = net
        .edges
        .iter()
        .map(|&(a, b)| pos(a).midpoint(pos(b)))
        .collect::<Result<_>>()?;
    let r = match location {
        LinkLocation::Midpoint => mids
            .iter()
            .map(|m| distance_between(m, &scenario.epicenter))
            .collect::<Result<Vec<_>>>()?,
        LinkLocation::EndpointAverage => net
            .edges
            .iter()
            .map(|&(a, b)| {
                Ok(0.5 * (distance_between(pos(a), &scenario.epicenter)? + distance_between(pos(b), &scenario.epicenter)?))
            })
            .collect::<Result<Vec<_>>>()?,
    };
    constraints_from_distances(&r, |i, j| distance_between(&mids[i], &mids[j]).unwrap_or(0.0), scenario)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IpfOptions {
    pub eps0: f64,
    pub max_iters: usize,
    /// Scale column targets to the row total when the totals disagree;
    /// otherwise inconsistent targets are an error.
    pub rescale_inconsistent: bool,
}

impl Default for IpfOptions {
    fn default() -> Self {
        IpfOptions {
            eps0: 1e-6,
            max_iters: 10_000,
            rescale_inconsistent: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct IpfResult {
    pub matrix: DMatrix<f64>,
    pub iterations: usize,
    /// `Σ_j |D_j − Σ_i OD_ij|` after the last iteration.
    pub error: f64,
    pub converged: bool,
    pub rescaled: bool,
}

const MARGIN_REL_TOL: f64 = 1e-9;

/// Iterative proportional fitting: column adjustment, then row adjustment,
/// until the column error is at most `eps0`.
pub fn ipf_adjust(init: &DMatrix<f64>, target_o: &[f64], target_d: &[f64], opts: &IpfOptions) -> Result<IpfResult> {
    let (n, m) = init.shape();
    if target_o.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            actual: target_o.len(),
        });
    }
    if target_d.len() != m {
        return Err(Error::DimensionMismatch {
            expected: m,
            actual: target_d.len(),
        });
    }
    if n == 0 || m == 0 {
        return Err(Error::EmptyInput("OD matrix"));
    }
    if init.iter().chain(target_o).chain(target_d).any(|v| !(*v >= 0.0) || !v.is_finite()) {
        return Err(Error::InvalidInput("IPF inputs must be finite and non-negative".into()));
    }
    if !(opts.eps0 > 0.0) || opts.max_iters == 0 {
        return Err(Error::InvalidConfig("eps0 must be positive and max_iters at least 1".into()));
    }
    for (i, &t) in target_o.iter().enumerate() {
        if t > 0.0 && init.row(i).iter().all(|&v| v == 0.0) {
            return Err(Error::ZeroMargin {
                axis: "row",
                index: i,
                target: t,
            });
        }
    }
    for (j, &t) in target_d.iter().enumerate() {
        if t > 0.0 && init.column(j).iter().all(|&v| v == 0.0) {
            return Err(Error::ZeroMargin {
                axis: "column",
                index: j,
                target: t,
            });
        }
    }
    let row_total: f64 = target_o.iter().sum();
    let col_total: f64 = target_d.iter().sum();
    let mut target_d = target_d.to_vec();
    let mut rescaled = false;
    if (row_total - col_total).abs() > MARGIN_REL_TOL * row_total.max(col_total) {
        if !opts.rescale_inconsistent || col_total == 0.0 {
            return Err(Error::InconsistentMarginals { row_total, col_total });
        }
        log::warn!("row targets sum to {row_total} but column targets sum to {col_total}; rescaling column targets");
        let k = row_total / col_total;
        target_d.iter_mut().for_each(|v| *v *= k);
        rescaled = true;
    }

    let mut x = init.clone();
    let mut error = f64::INFINITY;
    let mut iterations = 0;
    while iterations < opts.max_iters {
        iterations += 1;
        for (j, &t) in target_d.iter().enumerate() {
            let s: f64 = x.column(j).sum();
            if s > 0.0 {
                x.column_mut(j).scale_mut(t / s);
            }
        }
        for (i, &t) in target_o.iter().enumerate() {
            let s: f64 = x.row(i).sum();
            if s > 0.0 {
                x.row_mut(i).scale_mut(t / s);
            }
        }
        error = target_d
            .iter()
            .enumerate()
            .map(|(j, &t)| (t - x.column(j).sum()).abs())
            .sum();
        if error <= opts.eps0 {
            break;
        }
    }
    Ok(IpfResult {
        matrix: x,
        iterations,
        error,
        converged: error <= opts.eps0,
        rescaled,
    })
}

/// Zone-level demand with the node-to-zone assignment.
#[derive(Clone, Debug, PartialEq)]
pub struct OdMatrix {
    pub zones: Vec<String>,
    pub demand: DMatrix<f64>,
    /// Node id to zone id.
    pub zone_map: BTreeMap<String, String>,
}

impl OdMatrix {
    pub fn new(zones: Vec<String>, demand: DMatrix<f64>, zone_map: BTreeMap<String, String>) -> Result<Self> {
        let z = zones.len();
        if demand.shape() != (z, z) {
            return Err(Error::DimensionMismatch {
                expected: z,
                actual: demand.nrows(),
            });
        }
        if demand.iter().any(|v| !(*v >= 0.0)) {
            return Err(Error::InvalidInput("demand entries must be non-negative".into()));
        }
        for zone in zone_map.values() {
            if !zones.contains(zone) {
                return Err(Error::InvalidInput(format!("zone map refers to unknown zone {zone}")));
            }
        }
        Ok(OdMatrix {
            zones,
            demand,
            zone_map,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum PairPolicy {
    /// One pair per zone pair between the nodes nearest each zone centroid.
    #[default]
    CentroidNearest,
    /// Every node pair across the two zones, demand split evenly.
    AllNodes,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OdPair {
    pub origin: usize,
    pub destination: usize,
    pub weight: f64,
}

fn zone_members(od: &OdMatrix, net: &RoadNetwork) -> Result<Vec<Vec<usize>>> {
    let zone_pos: HashMap<&str, usize> = od.zones.iter().enumerate().map(|(k, z)| (z.as_str(), k)).collect();
    let mut members = vec![Vec::new(); od.zones.len()];
    for (k, node) in net.nodes.iter().enumerate() {
        let zone = od
            .zone_map
            .get(&node.id)
            .ok_or_else(|| Error::InvalidInput(format!("node {} has no zone", node.id)))?;
        members[zone_pos[zone.as_str()]].push(k);
    }
    for node in od.zone_map.keys() {
        if net.node_index(node).is_none() {
            return Err(Error::InvalidInput(format!("zone map refers to unknown node {node}")));
        }
    }
    Ok(members)
}

fn centroid_node(net: &RoadNetwork, members: &[usize]) -> Result<usize> {
    let n = members.len() as f64;
    let (mut a, mut b) = (0.0, 0.0);
    for &k in members {
        match net.nodes[k].position {
            Coordinates::Geographic { lat, lon } => {
                a += lat;
                b += lon;
            }
            Coordinates::Planar { x_km, y_km } => {
                a += x_km;
                b += y_km;
            }
        }
    }
    let c = if net.is_geographic() {
        Coordinates::Geographic { lat: a / n, lon: b / n }
    } else {
        Coordinates::Planar { x_km: a / n, y_km: b / n }
    };
    let mut best = (f64::INFINITY, members[0]);
    for &k in members {
        let d = distance_between(&net.nodes[k].position, &c)?;
        if d < best.0 {
            best = (d, k);
        }
    }
    Ok(best.1)
}

/// Expands zone demand into node pairs. Zero-demand zone pairs are skipped.
pub fn od_pairs_from_matrix(od: &OdMatrix, net: &RoadNetwork, policy: PairPolicy) -> Result<Vec<OdPair>> {
    let members = zone_members(od, net)?;
    for (z, m) in members.iter().enumerate() {
        if m.is_empty() {
            return Err(Error::EmptyZone(od.zones[z].clone()));
        }
    }
    let reps = match policy {
        PairPolicy::CentroidNearest => members
            .iter()
            .map(|m| centroid_node(net, m).map(|k| vec![k]))
            .collect::<Result<Vec<_>>>()?,
        PairPolicy::AllNodes => members,
    };
    let mut pairs = Vec::new();
    let z = od.zones.len();
    for a in 0..z {
        for b in 0..z {
            let w = od.demand[(a, b)];
            if w <= 0.0 {
                continue;
            }
            let share = w / (reps[a].len() * reps[b].len()) as f64;
            for &o in &reps[a] {
                for &d in &reps[b] {
                    pairs.push(OdPair {
                        origin: o,
                        destination: d,
                        weight: share,
                    });
                }
            }
        }
    }
    Ok(pairs)
}

/// Disjoint-set forest with path halving and union by size.
#[derive(Clone, Debug)]
pub struct UnionFind {
    parent: Vec<usize>,
    size: Vec<usize>,
}

impl UnionFind {
    pub fn new(n: usize) -> Self {
        UnionFind {
            parent: (0..n).collect(),
            size: vec![1; n],
        }
    }

    pub fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    pub fn union(&mut self, a: usize, b: usize) {
        let (mut a, mut b) = (self.find(a), self.find(b));
        if a == b {
            return;
        }
        if self.size[a] < self.size[b] {
            std::mem::swap(&mut a, &mut b);
        }
        self.parent[b] = a;
        self.size[a] += self.size[b];
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TripOutcome {
    pub completion_rate: f64,
    pub removal_rate: f64,
    /// Pairs whose origin equals their destination; always counted as completed.
    pub self_pairs: usize,
}

/// Completion is the (weighted) share of pairs still connected once failed
/// links are removed; removal is the share of failed links.
pub fn trip_completion(net: &RoadNetwork, failed: &[u8], pairs: &[OdPair], weighted: bool) -> Result<TripOutcome> {
    if failed.len() != net.n_edges() {
        return Err(Error::DimensionMismatch {
            expected: net.n_edges(),
            actual: failed.len(),
        });
    }
    if pairs.is_empty() {
        return Err(Error::EmptyInput("OD pair list"));
    }
    let mut uf = UnionFind::new(net.nodes.len());
    let mut n_failed = 0usize;
    for (&(a, b), &f) in net.edges.iter().zip(failed) {
        if f == 0 {
            uf.union(a, b);
        } else {
            n_failed += 1;
        }
    }
    let (mut done, mut total, mut self_pairs) = (0.0, 0.0, 0);
    for p in pairs {
        let w = if weighted { p.weight } else { 1.0 };
        total += w;
        if p.origin == p.destination {
            self_pairs += 1;
            done += w;
        } else if uf.find(p.origin) == uf.find(p.destination) {
            done += w;
        }
    }
    if !(total > 0.0) {
        return Err(Error::InvalidInput("OD pair weights sum to zero".into()));
    }
    Ok(TripOutcome {
        completion_rate: done / total,
        removal_rate: n_failed as f64 / net.n_edges() as f64,
        self_pairs,
    })
}

/// `n_reps` link-failure vectors drawn from `model`.
pub fn sample_failures(model: &DgModel, net: &RoadNetwork, n_reps: usize, seed: u64) -> Result<Samples> {
    if model.dim() != net.n_edges() {
        return Err(Error::DimensionMismatch {
            expected: net.n_edges(),
            actual: model.dim(),
        });
    }
    Ok(sample_dg(model, n_reps, seed))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FailureMode {
    Correlated,
    Independent,
}

impl FailureMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            FailureMode::Correlated => "correlated",
            FailureMode::Independent => "independent",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PhaseConfig {
    pub magnitudes: Vec<f64>,
    pub n_reps: usize,
    pub seed: u64,
    pub modes: Vec<FailureMode>,
    pub weighted: bool,
    pub link_location: LinkLocation,
}

impl Default for PhaseConfig {
    fn default() -> Self {
        PhaseConfig {
            magnitudes: vec![6.0, 6.8, 7.6],
            n_reps: 2000,
            seed: 0,
            modes: vec![FailureMode::Correlated, FailureMode::Independent],
            weighted: true,
            link_location: LinkLocation::Midpoint,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Replicate {
    pub removal_rate: f64,
    pub completion_rate: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TripExperimentResult {
    pub magnitude: f64,
    pub mode: FailureMode,
    pub replicates: Vec<Replicate>,
    pub mean_failure_probability: f64,
    pub self_pairs: usize,
}

impl TripExperimentResult {
    pub fn histogram(&self) -> Histogram2d {
        let mut h = Histogram2d::new(HISTOGRAM_BINS);
        for r in &self.replicates {
            h.add(r.removal_rate, r.completion_rate);
        }
        h
    }

    /// Share of replicates whose completion rate lies in `[lo, hi]`.
    pub fn completion_mass(&self, lo: f64, hi: f64) -> f64 {
        let k = self
            .replicates
            .iter()
            .filter(|r| r.completion_rate >= lo && r.completion_rate <= hi)
            .count();
        k as f64 / self.replicates.len() as f64
    }
}

pub const HISTOGRAM_BINS: usize = 50;

/// Counts on a fixed `bins × bins` grid over `[0,1]²`; `x` is the removal
/// rate and `y` the completion rate. The value 1 falls in the last bin.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Histogram2d {
    pub bins: usize,
    /// Row-major, `counts[ix * bins + iy]`.
    pub counts: Vec<u64>,
}

impl Histogram2d {
    pub fn new(bins: usize) -> Self {
        Histogram2d {
            bins,
            counts: vec![0; bins * bins],
        }
    }

    fn bin(&self, v: f64) -> usize {
        ((v.clamp(0.0, 1.0) * self.bins as f64) as usize).min(self.bins - 1)
    }

    pub fn add(&mut self, x: f64, y: f64) {
        let k = self.bin(x) * self.bins + self.bin(y);
        self.counts[k] += 1;
    }

    pub fn get(&self, ix: usize, iy: usize) -> u64 {
        self.counts[ix * self.bins + iy]
    }

    pub fn to_csv(&self) -> String {
        let w = 1.0 / self.bins as f64;
        let mut out = String::from("removal_lo,removal_hi,completion_lo,completion_hi,count\n");
        for ix in 0..self.bins {
            for iy in 0..self.bins {
                out.push_str(&format!(
                    "{:.2},{:.2},{:.2},{:.2},{}\n",
                    ix as f64 * w,
                    (ix + 1) as f64 * w,
                    iy as f64 * w,
                    (iy + 1) as f64 * w,
                    self.get(ix, iy)
                ));
            }
        }
        out
    }
}

/// For every magnitude and mode: build link constraints, fit the DG model
/// (or use independent links with the same means), sample failures, and
/// record removal and completion rates per replicate.
pub fn phase_experiment(
    net: &RoadNetwork,
    pairs: &[OdPair],
    base: &HazardScenario,
    cfg: &PhaseConfig,
) -> Result<Vec<TripExperimentResult>> {
    if cfg.n_reps == 0 {
        return Err(Error::InvalidConfig("n_reps must be at least 1".into()));
    }
    if pairs.is_empty() {
        return Err(Error::EmptyInput("OD pair list"));
    }
    let mut out = Vec::new();
    for (mi, &mw) in cfg.magnitudes.iter().enumerate() {
        let scenario = HazardScenario {
            magnitude: mw,
            ..base.clone()
        };
        let c = link_constraints(net, &scenario, cfg.link_location)?;
        let mean_mu = c.means().iter().sum::<f64>() / c.dimension() as f64;
        for &mode in &cfg.modes {
            let model = match mode {
                FailureMode::Correlated => fit_dg(&c)?,
                FailureMode::Independent => DgModel::independent(c.means())?,
            };
            let seed = rng::derive_seed(cfg.seed, &format!("phase-{}", mode.as_str()), mi as u64);
            let samples = sample_failures(&model, net, cfg.n_reps, seed)?;
            let outcomes = (0..cfg.n_reps)
                .into_par_iter()
                .map(|r| trip_completion(net, samples.get(r), pairs, cfg.weighted))
                .collect::<Result<Vec<_>>>()?;
            out.push(TripExperimentResult {
                magnitude: mw,
                mode,
                mean_failure_probability: mean_mu,
                self_pairs: outcomes.first().map_or(0, |o| o.self_pairs),
                replicates: outcomes
                    .iter()
                    .map(|o| Replicate {
                        removal_rate: o.removal_rate,
                        completion_rate: o.completion_rate,
                    })
                    .collect(),
            });
        }
    }
    Ok(out)
}

/// `zones_per_side²` square zones tiling a `rows × cols` grid built by
/// [`RoadNetwork::grid`], with uniform demand between distinct zones.
pub fn grid_zones(rows: usize, cols: usize, zones_per_side: usize, demand: f64) -> Result<OdMatrix> {
    if zones_per_side == 0 || zones_per_side > rows.min(cols) {
        return Err(Error::InvalidInput("zones_per_side must be between 1 and the grid size".into()));
    }
    let zones: Vec<String> = (0..zones_per_side * zones_per_side).map(|k| format!("z{k}")).collect();
    let mut zone_map = BTreeMap::new();
    for r in 0..rows {
        for c in 0..cols {
            let zr = r * zones_per_side / rows;
            let zc = c * zones_per_side / cols;
            zone_map.insert(format!("n{r}_{c}"), zones[zr * zones_per_side + zc].clone());
        }
    }
    let z = zones.len();
    let demand = DMatrix::from_fn(z, z, |a, b| if a == b { 0.0 } else { demand });
    OdMatrix::new(zones, demand, zone_map)
}
