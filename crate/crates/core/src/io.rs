//! File formats for handing results between pipeline stages.
//!
//! Floats are written with 17 significant digits so that every value
//! reads back bit-identical.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::dg::{DgModel, RepairLog};
use crate::error::{Error, Result};
use crate::hazard::{Coordinates, HazardScenario, Site};
use crate::model::{IsingModel, MomentConstraints, Samples};
use crate::network::{OdMatrix, RoadNetwork};

pub const MEANS_FILE: &str = "means.csv";
pub const CORR_FILE: &str = "corr.csv";
pub const CONSTRAINTS_FILE: &str = "constraints.json";
pub const MODEL_FILE: &str = "model.json";
pub const GAMMA_FILE: &str = "gamma.csv";
pub const LATENT_FILE: &str = "latent_corr.csv";

pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn read_to_string(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

pub fn write_string(path: &Path, contents: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    write_string(path, &s)
}

/// Reads a JSON file, reporting the line of the first syntax or schema error.
pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| Error::parse(path, e.line(), e.to_string()))
}

fn parse_f64(path: &Path, line: usize, field: &str) -> Result<f64> {
    field
        .trim()
        .parse::<f64>()
        .map_err(|_| Error::parse(path, line, format!("not a number: {field:?}")))
}

/// Numeric CSV without a header. Blank lines are skipped.
fn read_numeric_rows(path: &Path) -> Result<Vec<Vec<f64>>> {
    let text = read_to_string(path)?;
    let mut rows = Vec::new();
    for (k, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let row = line
            .split(',')
            .map(|f| parse_f64(path, k + 1, f))
            .collect::<Result<Vec<_>>>()?;
        rows.push(row);
    }
    Ok(rows)
}

fn matrix_csv(m: &DMatrix<f64>) -> String {
    let mut s = String::new();
    for i in 0..m.nrows() {
        let row: Vec<String> = (0..m.ncols()).map(|j| fmt_f64(m[(i, j)])).collect();
        s.push_str(&row.join(","));
        s.push('\n');
    }
    s
}

fn column_csv(v: &[f64]) -> String {
    v.iter().map(|x| fmt_f64(*x) + "\n").collect()
}

fn read_column(path: &Path) -> Result<Vec<f64>> {
    read_numeric_rows(path)?
        .into_iter()
        .enumerate()
        .map(|(k, r)| {
            if r.len() == 1 {
                Ok(r[0])
            } else {
                Err(Error::parse(path, k + 1, format!("expected one value, found {}", r.len())))
            }
        })
        .collect()
}

fn read_square(path: &Path, d: usize) -> Result<DMatrix<f64>> {
    let rows = read_numeric_rows(path)?;
    if rows.len() != d {
        return Err(Error::parse(path, rows.len(), format!("expected {d} rows, found {}", rows.len())));
    }
    for (k, r) in rows.iter().enumerate() {
        if r.len() != d {
            return Err(Error::parse(path, k + 1, format!("expected {d} columns, found {}", r.len())));
        }
    }
    Ok(DMatrix::from_fn(d, d, |i, j| rows[i][j]))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConstraintsDescriptor {
    pub dimension: usize,
    pub convention: String,
    pub provenance: serde_json::Value,
}

pub fn write_constraints(dir: &Path, c: &MomentConstraints, provenance: serde_json::Value) -> Result<()> {
    write_string(&dir.join(MEANS_FILE), &column_csv(c.means()))?;
    write_string(&dir.join(CORR_FILE), &matrix_csv(c.correlations()))?;
    write_json(
        &dir.join(CONSTRAINTS_FILE),
        &ConstraintsDescriptor {
            dimension: c.dimension(),
            convention: "1=fail".into(),
            provenance,
        },
    )
}

pub fn read_constraints(dir: &Path) -> Result<MomentConstraints> {
    let desc: ConstraintsDescriptor = read_json(&dir.join(CONSTRAINTS_FILE))?;
    let means_path = dir.join(MEANS_FILE);
    let means = read_column(&means_path)?;
    if means.len() != desc.dimension {
        return Err(Error::parse(
            &means_path,
            means.len(),
            format!("descriptor says dimension {}, found {} means", desc.dimension, means.len()),
        ));
    }
    let corr = read_square(&dir.join(CORR_FILE), desc.dimension)?;
    MomentConstraints::new(means, corr)
}

/// Header `# d=<dim> seed=<seed>`, then one comma-separated 0/1 record per line.
pub fn write_samples(path: &Path, samples: &Samples, seed: u64) -> Result<()> {
    let d = samples.dim();
    let mut s = String::with_capacity(samples.len() * (2 * d + 1) + 32);
    s.push_str(&format!("# d={d} seed={seed}\n"));
    for row in samples.iter() {
        for (k, v) in row.iter().enumerate() {
            if k > 0 {
                s.push(',');
            }
            s.push(if *v == 1 { '1' } else { '0' });
        }
        s.push('\n');
    }
    write_string(path, &s)
}

pub fn read_samples(path: &Path) -> Result<(Samples, u64)> {
    let f = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut lines = BufReader::new(f).lines();
    let header = match lines.next() {
        Some(l) => l.map_err(|e| Error::io(path, e))?,
        None => return Err(Error::parse(path, 1, "empty sample file")),
    };
    let mut dim = None;
    let mut seed = None;
    for tok in header.trim_start_matches('#').split_whitespace() {
        if let Some(v) = tok.strip_prefix("d=") {
            dim = v.parse::<usize>().ok();
        } else if let Some(v) = tok.strip_prefix("seed=") {
            seed = v.parse::<u64>().ok();
        }
    }
    let (Some(dim), Some(seed)) = (dim, seed) else {
        return Err(Error::parse(path, 1, "header must read `# d=<dim> seed=<seed>`"));
    };
    let mut samples = Samples::new(dim);
    let mut row = Vec::with_capacity(dim);
    for (k, line) in lines.enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        row.clear();
        for f in line.split(',') {
            match f.trim() {
                "0" => row.push(0),
                "1" => row.push(1),
                other => return Err(Error::parse(path, k + 2, format!("expected 0 or 1, found {other:?}"))),
            }
        }
        if row.len() != dim {
            return Err(Error::parse(path, k + 2, format!("expected {dim} values, found {}", row.len())));
        }
        samples.push(&row)?;
    }
    Ok((samples, seed))
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "engine", rename_all = "kebab-case")]
enum ModelDescriptor {
    Ising { dimension: usize, coupling: IsingModel },
    Dg { dimension: usize, repair_log: RepairLog },
}

#[derive(Clone, Debug)]
pub enum SavedModel {
    Ising(IsingModel),
    Dg(DgModel),
}

impl SavedModel {
    pub fn dim(&self) -> usize {
        match self {
            SavedModel::Ising(m) => m.dim(),
            SavedModel::Dg(m) => m.dim(),
        }
    }
}

pub fn write_ising_model(dir: &Path, model: &IsingModel) -> Result<()> {
    write_string(&dir.join("coupling.csv"), &matrix_csv(model.coupling()))?;
    write_json(
        &dir.join(MODEL_FILE),
        &ModelDescriptor::Ising {
            dimension: model.dim(),
            coupling: model.clone(),
        },
    )
}

pub fn write_dg_model(dir: &Path, model: &DgModel) -> Result<()> {
    write_string(&dir.join(GAMMA_FILE), &column_csv(model.gamma()))?;
    write_string(&dir.join(LATENT_FILE), &matrix_csv(model.latent_corr()))?;
    write_json(
        &dir.join(MODEL_FILE),
        &ModelDescriptor::Dg {
            dimension: model.dim(),
            repair_log: model.repair_log().clone(),
        },
    )
}

pub fn write_model(dir: &Path, model: &SavedModel) -> Result<()> {
    match model {
        SavedModel::Ising(m) => write_ising_model(dir, m),
        SavedModel::Dg(m) => write_dg_model(dir, m),
    }
}

/// Loads a model directory, or a `model.json` path directly.
pub fn read_model(path: &Path) -> Result<SavedModel> {
    let (dir, file) = if path.is_dir() {
        (path.to_path_buf(), path.join(MODEL_FILE))
    } else {
        (path.parent().map(Path::to_path_buf).unwrap_or_default(), path.to_path_buf())
    };
    match read_json::<ModelDescriptor>(&file)? {
        ModelDescriptor::Ising { dimension, coupling } => {
            if coupling.dim() != dimension {
                return Err(Error::DimensionMismatch {
                    expected: dimension,
                    actual: coupling.dim(),
                });
            }
            Ok(SavedModel::Ising(coupling))
        }
        ModelDescriptor::Dg { dimension, repair_log } => {
            let gamma_path = dir.join(GAMMA_FILE);
            let gamma = read_column(&gamma_path)?;
            if gamma.len() != dimension {
                return Err(Error::parse(
                    &gamma_path,
                    gamma.len(),
                    format!("expected {dimension} thresholds, found {}", gamma.len()),
                ));
            }
            let latent = read_square(&dir.join(LATENT_FILE), dimension)?;
            Ok(SavedModel::Dg(DgModel::from_parts(gamma, latent)?.with_repair_log(repair_log)))
        }
    }
}

fn csv_reader(path: &Path) -> Result<csv::Reader<fs::File>> {
    csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| csv_error(path, e))
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line() as usize);
    let message = e.to_string();
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        _ => Error::parse(path, line, message),
    }
}

fn header_names(path: &Path, rdr: &mut csv::Reader<fs::File>) -> Result<Vec<String>> {
    Ok(rdr
        .headers()
        .map_err(|e| csv_error(path, e))?
        .iter()
        .map(|h| h.to_ascii_lowercase())
        .collect())
}

/// Sites or nodes: header `id,lat,lon` (geographic) or `id,x_km,y_km` (planar).
pub fn read_sites(path: &Path) -> Result<Vec<Site>> {
    let mut rdr = csv_reader(path)?;
    let header = header_names(path, &mut rdr)?;
    let geographic = match header.iter().map(String::as_str).collect::<Vec<_>>().as_slice() {
        ["id", "lat", "lon"] => true,
        ["id", "x_km", "y_km"] => false,
        _ => {
            return Err(Error::parse(
                path,
                1,
                format!("header must be `id,lat,lon` or `id,x_km,y_km`, found {:?}", header.join(",")),
            ))
        }
    };
    let mut sites = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| csv_error(path, e))?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        if rec.len() != 3 {
            return Err(Error::parse(path, line, format!("expected 3 fields, found {}", rec.len())));
        }
        let a = parse_f64(path, line, &rec[1])?;
        let b = parse_f64(path, line, &rec[2])?;
        let position = if geographic {
            Coordinates::Geographic { lat: a, lon: b }
        } else {
            Coordinates::Planar { x_km: a, y_km: b }
        };
        position
            .validate()
            .map_err(|e| Error::parse(path, line, e.to_string()))?;
        sites.push(Site {
            id: rec[0].to_string(),
            position,
        });
    }
    if sites.is_empty() {
        return Err(Error::parse(path, 1, "no sites"));
    }
    Ok(sites)
}

pub fn write_sites(path: &Path, sites: &[Site]) -> Result<()> {
    let geographic = sites.first().is_some_and(|s| s.position.is_geographic());
    let mut s = String::from(if geographic { "id,lat,lon\n" } else { "id,x_km,y_km\n" });
    for site in sites {
        let (a, b) = match site.position {
            Coordinates::Geographic { lat, lon } => (lat, lon),
            Coordinates::Planar { x_km, y_km } => (x_km, y_km),
        };
        s.push_str(&format!("{},{},{}\n", site.id, a, b));
    }
    write_string(path, &s)
}

/// Scenario JSON; fields other than `magnitude` and `epicenter` take defaults.
pub fn read_scenario(path: &Path) -> Result<HazardScenario> {
    let s: HazardScenario = read_json(path)?;
    s.validate()?;
    Ok(s)
}

fn read_string_pairs(path: &Path, expect: [&str; 2]) -> Result<Vec<(String, String)>> {
    let mut rdr = csv_reader(path)?;
    let header = header_names(path, &mut rdr)?;
    if header != expect {
        return Err(Error::parse(path, 1, format!("header must be `{}`", expect.join(","))));
    }
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| csv_error(path, e))?;
        if rec.len() != 2 {
            let line = rec.position().map_or(0, |p| p.line() as usize);
            return Err(Error::parse(path, line, format!("expected 2 fields, found {}", rec.len())));
        }
        out.push((rec[0].to_string(), rec[1].to_string()));
    }
    Ok(out)
}

/// Edge list CSV with header `u,v`.
pub fn read_edges(path: &Path) -> Result<Vec<(String, String)>> {
    read_string_pairs(path, ["u", "v"])
}

pub fn read_network(nodes: &Path, edges: &Path) -> Result<RoadNetwork> {
    RoadNetwork::new(read_sites(nodes)?, &read_edges(edges)?)
}

pub fn write_network(nodes: &Path, edges: &Path, net: &RoadNetwork) -> Result<()> {
    write_sites(nodes, net.nodes())?;
    let mut s = String::from("u,v\n");
    for &(a, b) in net.edges() {
        s.push_str(&format!("{},{}\n", net.nodes()[a].id, net.nodes()[b].id));
    }
    write_string(edges, &s)
}

/// Node-to-zone map with header `node,zone`.
pub fn read_zone_map(path: &Path) -> Result<BTreeMap<String, String>> {
    Ok(read_string_pairs(path, ["node", "zone"])?.into_iter().collect())
}

pub fn write_zone_map(path: &Path, map: &BTreeMap<String, String>) -> Result<()> {
    let mut s = String::from("node,zone\n");
    for (n, z) in map {
        s.push_str(&format!("{n},{z}\n"));
    }
    write_string(path, &s)
}

/// Square OD matrix: header `zone,<z1>,<z2>,...`, one row per origin zone.
pub fn read_od_matrix(path: &Path) -> Result<(Vec<String>, DMatrix<f64>)> {
    let mut rdr = csv_reader(path)?;
    let header = rdr.headers().map_err(|e| csv_error(path, e))?.clone();
    if header.is_empty() || !header[0].eq_ignore_ascii_case("zone") {
        return Err(Error::parse(path, 1, "first header field must be `zone`"));
    }
    let zones: Vec<String> = header.iter().skip(1).map(str::to_string).collect();
    let z = zones.len();
    let mut rows = Vec::with_capacity(z);
    for rec in rdr.records() {
        let rec = rec.map_err(|e| csv_error(path, e))?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        if rec.len() != z + 1 {
            return Err(Error::parse(path, line, format!("expected {} fields, found {}", z + 1, rec.len())));
        }
        if rec[0] != zones[rows.len().min(z.saturating_sub(1))] {
            return Err(Error::parse(
                path,
                line,
                format!("row zone {:?} does not match column order", &rec[0]),
            ));
        }
        let row = (1..=z).map(|k| parse_f64(path, line, &rec[k])).collect::<Result<Vec<_>>>()?;
        rows.push(row);
    }
    if rows.len() != z {
        return Err(Error::parse(path, rows.len() + 1, format!("expected {z} rows, found {}", rows.len())));
    }
    Ok((zones, DMatrix::from_fn(z, z, |i, j| rows[i][j])))
}

pub fn write_od_matrix(path: &Path, zones: &[String], m: &DMatrix<f64>) -> Result<()> {
    let mut s = format!("zone,{}\n", zones.join(","));
    for (i, z) in zones.iter().enumerate() {
        s.push_str(z);
        for j in 0..m.ncols() {
            s.push(',');
            s.push_str(&fmt_f64(m[(i, j)]));
        }
        s.push('\n');
    }
    write_string(path, &s)
}

pub fn read_od(matrix: &Path, zone_map: &Path) -> Result<OdMatrix> {
    let (zones, demand) = read_od_matrix(matrix)?;
    OdMatrix::new(zones, demand, read_zone_map(zone_map)?)
}

/// Marginal targets with header `zone,target_O,target_D`. Rows must follow
/// the zone order of the matrix they apply to.
pub fn read_od_targets(path: &Path) -> Result<(Vec<String>, Vec<f64>, Vec<f64>)> {
    let mut rdr = csv_reader(path)?;
    let header = header_names(path, &mut rdr)?;
    if header != ["zone", "target_o", "target_d"] {
        return Err(Error::parse(path, 1, "header must be `zone,target_O,target_D`"));
    }
    let (mut zones, mut o, mut d) = (Vec::new(), Vec::new(), Vec::new());
    for rec in rdr.records() {
        let rec = rec.map_err(|e| csv_error(path, e))?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        if rec.len() != 3 {
            return Err(Error::parse(path, line, format!("expected 3 fields, found {}", rec.len())));
        }
        zones.push(rec[0].to_string());
        o.push(parse_f64(path, line, &rec[1])?);
        d.push(parse_f64(path, line, &rec[2])?);
    }
    Ok((zones, o, d))
}

pub fn write_od_targets(path: &Path, zones: &[String], o: &[f64], d: &[f64]) -> Result<()> {
    let mut s = String::from("zone,target_O,target_D\n");
    for k in 0..zones.len() {
        s.push_str(&format!("{},{},{}\n", zones[k], fmt_f64(o[k]), fmt_f64(d[k])));
    }
    write_string(path, &s)
}

/// Writes lines to a file, creating parent directories.
pub fn write_lines<I: IntoIterator<Item = String>>(path: &Path, lines: I) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(f);
    for l in lines {
        writeln!(w, "{l}").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn ensure_dir(path: &Path) -> Result<PathBuf> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))?;
    Ok(path.to_path_buf())
}
