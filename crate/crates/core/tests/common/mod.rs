#![allow(dead_code)]

use isingnet::hazard::{build_constraints, Coordinates, HazardScenario, Site};
use isingnet::model::MomentConstraints;
use isingnet::network::{grid_zones, od_pairs_from_matrix, OdPair, PairPolicy, RoadNetwork};

pub const LAYOUT_SPACING_KM: f64 = 10.0;
pub const LAYOUT_MAGNITUDE: f64 = 8.0;

/// 40 sites on an 8 × 5 lattice with the epicentre at its centre.
pub fn layout_sites() -> Vec<Site> {
    (0..40)
        .map(|k| {
            Site::planar(
                format!("s{k}"),
                LAYOUT_SPACING_KM * (k % 8) as f64,
                LAYOUT_SPACING_KM * (k / 8) as f64,
            )
        })
        .collect()
}

pub fn layout_scenario() -> HazardScenario {
    HazardScenario::new(
        LAYOUT_MAGNITUDE,
        Coordinates::Planar {
            x_km: 3.5 * LAYOUT_SPACING_KM,
            y_km: 2.0 * LAYOUT_SPACING_KM,
        },
    )
}

pub fn layout_constraints() -> MomentConstraints {
    build_constraints(&layout_sites(), &layout_scenario()).unwrap()
}

pub const GRID_SIDE: usize = 15;
pub const GRID_SPACING_KM: f64 = 0.25;

/// 15 × 15 road grid, 3 × 3 zones with uniform demand, centroid pairs.
pub fn phase_grid() -> (RoadNetwork, Vec<OdPair>, HazardScenario) {
    let net = RoadNetwork::grid(GRID_SIDE, GRID_SIDE, GRID_SPACING_KM, (0.0, 0.0)).unwrap();
    let od = grid_zones(GRID_SIDE, GRID_SIDE, 3, 1.0).unwrap();
    let pairs = od_pairs_from_matrix(&od, &net, PairPolicy::CentroidNearest).unwrap();
    let mid = GRID_SPACING_KM * (GRID_SIDE - 1) as f64 / 2.0;
    let scenario = HazardScenario::new(7.0, Coordinates::Planar { x_km: mid, y_km: mid });
    (net, pairs, scenario)
}

/// Share of covariance entries (lower triangle with diagonal) within `tol`
/// relative error, and the median relative error.
pub fn share_within_relative(target: &nalgebra::DMatrix<f64>, got: &nalgebra::DMatrix<f64>, tol: f64) -> (f64, f64) {
    let d = target.nrows();
    let mut errs = Vec::new();
    for i in 0..d {
        for j in 0..=i {
            errs.push(((got[(i, j)] - target[(i, j)]) / target[(i, j)]).abs());
        }
    }
    let ok = errs.iter().filter(|e| **e <= tol).count() as f64 / errs.len() as f64;
    errs.sort_by(|a, b| a.partial_cmp(b).unwrap());
    (ok, errs[errs.len() / 2])
}
