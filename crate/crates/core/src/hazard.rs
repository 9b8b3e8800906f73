//! Seismic hazard model producing moment constraints for spatially
//! distributed components: an empirical attenuation relation for the mean
//! log peak ground acceleration, a lognormal fragility curve, and a
//! correlation structure with inter-event and distance-decaying intra-event
//! terms.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bvn::norm_cdf;
use crate::error::{Error, Result};
use crate::model::{feasibility_check, MomentConstraints};

pub const EARTH_RADIUS_KM: f64 = 6371.0;

/// Magnitudes above this are outside the attenuation relation's calibration.
pub const CALIBRATION_MAGNITUDE: f64 = 8.5;

const VARIANCE_SUM_TOL: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Coordinates {
    /// Degrees.
    Geographic { lat: f64, lon: f64 },
    /// Kilometres.
    Planar { x_km: f64, y_km: f64 },
}

impl Coordinates {
    pub fn validate(&self) -> Result<()> {
        match *self {
            Coordinates::Geographic { lat, lon } => {
                if !(-90.0..=90.0).contains(&lat) || !(-180.0..=180.0).contains(&lon) {
                    return Err(Error::InvalidInput(format!("coordinates ({lat}, {lon}) out of range")));
                }
            }
            Coordinates::Planar { x_km, y_km } => {
                if !x_km.is_finite() || !y_km.is_finite() {
                    return Err(Error::InvalidInput("planar coordinates must be finite".into()));
                }
            }
        }
        Ok(())
    }

    pub fn is_geographic(&self) -> bool {
        matches!(self, Coordinates::Geographic { .. })
    }

    /// Arithmetic midpoint of the coordinates. Adequate at city scale in
    /// geographic mode.
    pub fn midpoint(&self, other: &Coordinates) -> Result<Coordinates> {
        match (*self, *other) {
            (Coordinates::Geographic { lat: a, lon: b }, Coordinates::Geographic { lat: c, lon: d }) => {
                Ok(Coordinates::Geographic {
                    lat: 0.5 * (a + c),
                    lon: 0.5 * (b + d),
                })
            }
            (Coordinates::Planar { x_km: a, y_km: b }, Coordinates::Planar { x_km: c, y_km: d }) => {
                Ok(Coordinates::Planar {
                    x_km: 0.5 * (a + c),
                    y_km: 0.5 * (b + d),
                })
            }
            _ => Err(Error::MixedCoordinateModes),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Site {
    pub id: String,
    pub position: Coordinates,
}

impl Site {
    pub fn planar(id: impl Into<String>, x_km: f64, y_km: f64) -> Self {
        Site {
            id: id.into(),
            position: Coordinates::Planar { x_km, y_km },
        }
    }

    pub fn geographic(id: impl Into<String>, lat: f64, lon: f64) -> Self {
        Site {
            id: id.into(),
            position: Coordinates::Geographic { lat, lon },
        }
    }
}

fn default_sigma_d_sq() -> f64 {
    0.32
}
fn default_sigma_c_sq() -> f64 {
    0.48
}
fn default_mean_capacity() -> f64 {
    0.85f64.ln()
}
fn default_sigma_eta_sq() -> f64 {
    0.07
}
fn default_sigma_eps_sq() -> f64 {
    0.25
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HazardScenario {
    pub magnitude: f64,
    pub epicenter: Coordinates,
    #[serde(default = "default_sigma_d_sq")]
    pub sigma_d_sq: f64,
    #[serde(default = "default_sigma_c_sq")]
    pub sigma_c_sq: f64,
    #[serde(default = "default_mean_capacity")]
    pub mean_capacity: f64,
    #[serde(default = "default_sigma_eta_sq")]
    pub sigma_eta_sq: f64,
    #[serde(default = "default_sigma_eps_sq")]
    pub sigma_eps_sq: f64,
}

impl HazardScenario {
    pub fn new(magnitude: f64, epicenter: Coordinates) -> Self {
        HazardScenario {
            magnitude,
            epicenter,
            sigma_d_sq: default_sigma_d_sq(),
            sigma_c_sq: default_sigma_c_sq(),
            mean_capacity: default_mean_capacity(),
            sigma_eta_sq: default_sigma_eta_sq(),
            sigma_eps_sq: default_sigma_eps_sq(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.magnitude.is_finite() || !self.mean_capacity.is_finite() {
            return Err(Error::InvalidConfig("magnitude and mean_capacity must be finite".into()));
        }
        for (name, v) in [
            ("sigma_d_sq", self.sigma_d_sq),
            ("sigma_c_sq", self.sigma_c_sq),
            ("sigma_eta_sq", self.sigma_eta_sq),
            ("sigma_eps_sq", self.sigma_eps_sq),
        ] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::InvalidConfig(format!("{name} must be positive, got {v}")));
            }
        }
        if (self.sigma_eta_sq + self.sigma_eps_sq - self.sigma_d_sq).abs() > VARIANCE_SUM_TOL {
            return Err(Error::InvalidConfig(format!(
                "sigma_eta_sq + sigma_eps_sq = {} must equal sigma_d_sq = {}",
                self.sigma_eta_sq + self.sigma_eps_sq,
                self.sigma_d_sq
            )));
        }
        self.epicenter.validate()?;
        if self.magnitude > CALIBRATION_MAGNITUDE {
            log::warn!(
                "magnitude {} is above {CALIBRATION_MAGNITUDE}, outside the attenuation relation's calibration range",
                self.magnitude
            );
        }
        Ok(())
    }
}

/// Mean log peak ground acceleration at epicentral distance `r` km.
pub fn attenuation(mw: f64, r: f64) -> f64 {
    let s = r * r + 1.35 * 1.35;
    -0.5265 + (-0.3303 + 0.0599 * (mw - 4.5)) * s.ln() - 0.0115 * s.sqrt()
}

/// `Φ((D̄ − C̄) / √(σ_D² + σ_C²))`.
pub fn failure_probability(dbar: f64, scenario: &HazardScenario) -> f64 {
    norm_cdf((dbar - scenario.mean_capacity) / (scenario.sigma_d_sq + scenario.sigma_c_sq).sqrt())
}

/// `exp(−0.27 Δ^0.4)`.
pub fn intra_event_corr(delta: f64) -> f64 {
    (-0.27 * delta.powf(0.4)).exp()
}

/// Correlation between log PGAs at two sites `delta` km apart.
pub fn pga_corr(delta: f64, scenario: &HazardScenario) -> f64 {
    (scenario.sigma_eta_sq + intra_event_corr(delta) * scenario.sigma_eps_sq)
        / (scenario.sigma_eta_sq + scenario.sigma_eps_sq)
}

/// Correlation of the latent safety margins of components `i` and `j`.
pub fn component_corr(i: usize, j: usize, delta: f64, scenario: &HazardScenario) -> f64 {
    if i == j {
        return 1.0;
    }
    scenario.sigma_d_sq * pga_corr(delta, scenario) / (scenario.sigma_d_sq + scenario.sigma_c_sq)
}

fn coordinate_distance(a: &Coordinates, b: &Coordinates) -> Result<f64> {
    match (*a, *b) {
        (Coordinates::Geographic { lat: la1, lon: lo1 }, Coordinates::Geographic { lat: la2, lon: lo2 }) => {
            let (p1, p2) = (la1.to_radians(), la2.to_radians());
            let dp = p2 - p1;
            let dl = (lo2 - lo1).to_radians();
            let h = (dp / 2.0).sin().powi(2) + p1.cos() * p2.cos() * (dl / 2.0).sin().powi(2);
            Ok(2.0 * EARTH_RADIUS_KM * h.sqrt().min(1.0).asin())
        }
        (Coordinates::Planar { x_km: x1, y_km: y1 }, Coordinates::Planar { x_km: x2, y_km: y2 }) => {
            Ok((x2 - x1).hypot(y2 - y1))
        }
        _ => Err(Error::MixedCoordinateModes),
    }
}

/// Haversine distance in geographic mode, Euclidean in planar mode.
pub fn site_distance(a: &Site, b: &Site) -> Result<f64> {
    coordinate_distance(&a.position, &b.position)
}

pub fn distance_between(a: &Coordinates, b: &Coordinates) -> Result<f64> {
    coordinate_distance(a, b)
}

/// Means and correlations from epicentral distances `r` and a pairwise
/// distance function.
pub fn constraints_from_distances<F>(r: &[f64], delta: F, scenario: &HazardScenario) -> Result<MomentConstraints>
where
    F: Fn(usize, usize) -> f64 + Sync,
{
    scenario.validate()?;
    let d = r.len();
    if d == 0 {
        return Err(Error::EmptyInput("site list"));
    }
    if r.iter().any(|&v| !(v >= 0.0)) {
        return Err(Error::InvalidInput("epicentral distances must be non-negative".into()));
    }
    let means: Vec<f64> = r
        .iter()
        .map(|&ri| failure_probability(attenuation(scenario.magnitude, ri), scenario))
        .collect();
    let rows: Vec<Vec<f64>> = (0..d)
        .into_par_iter()
        .map(|i| (0..i).map(|j| component_corr(i, j, delta(i, j), scenario)).collect())
        .collect();
    let mut corr = DMatrix::identity(d, d);
    for (i, row) in rows.iter().enumerate() {
        for (j, &v) in row.iter().enumerate() {
            corr[(i, j)] = v;
            corr[(j, i)] = v;
        }
    }
    let c = MomentConstraints::new(means, corr)?;
    let violations = feasibility_check(&c);
    if !violations.is_empty() {
        return Err(Error::Infeasible(violations));
    }
    Ok(c)
}

fn check_modes<'a>(mut positions: impl Iterator<Item = &'a Coordinates>, epicenter: &Coordinates) -> Result<()> {
    let geo = epicenter.is_geographic();
    if positions.any(|p| p.is_geographic() != geo) {
        return Err(Error::MixedCoordinateModes);
    }
    Ok(())
}

/// Moment constraints for component failures at `sites`.
pub fn build_constraints(sites: &[Site], scenario: &HazardScenario) -> Result<MomentConstraints> {
    if sites.is_empty() {
        return Err(Error::EmptyInput("site list"));
    }
    for s in sites {
        s.position.validate()?;
    }
    check_modes(sites.iter().map(|s| &s.position), &scenario.epicenter)?;
    let r = sites
        .iter()
        .map(|s| coordinate_distance(&s.position, &scenario.epicenter))
        .collect::<Result<Vec<_>>>()?;
    constraints_from_distances(&r, |i, j| coordinate_distance(&sites[i].position, &sites[j].position).unwrap_or(0.0), scenario)
}
