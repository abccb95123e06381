//! Icosahedral spherical meshes and bilinear resampling from lat-lon grids.
//!
//! A level-`g` mesh starts from the 12-vertex icosahedron and applies `g`
//! rounds of edge-midpoint subdivision, projecting every new vertex onto the
//! unit sphere. Vertex counts follow `10 * 4^g + 2`. Vertex order is the
//! construction order; exports always carry coordinates with the data.

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::binio;
use crate::error::{ensure, Error, Result};

pub const MAX_LEVEL: u32 = 8;

/// Number of vertices of a level-`level` icosphere.
pub fn vertex_count(level: u32) -> usize {
    10 * 4usize.pow(level) + 2
}

/// Inverse of [`vertex_count`], if `nodes` is a valid icosphere size.
pub fn level_for_vertex_count(nodes: usize) -> Option<u32> {
    (0..=MAX_LEVEL).find(|&l| vertex_count(l) == nodes)
}

/// Latitude/longitude in degrees of a unit vector; longitude in `[0, 360)`.
pub fn vertex_lat_lon(v: [f64; 3]) -> (f64, f64) {
    let lat = v[2].clamp(-1.0, 1.0).asin().to_degrees();
    (lat, normalize_lon(v[1].atan2(v[0]).to_degrees()))
}

/// Maps any longitude into `[0, 360)`.
pub fn normalize_lon(lon: f64) -> f64 {
    let l = lon.rem_euclid(360.0);
    // rem_euclid of a tiny negative value rounds up to exactly 360
    if l >= 360.0 {
        0.0
    } else {
        l
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IcoMesh {
    level: u32,
    vertices: Vec<[f64; 3]>,
    lat: Vec<f64>,
    lon: Vec<f64>,
    edges: Vec<(usize, usize)>,
    faces: Vec<[usize; 3]>,
}

const ICOSAHEDRON_FACES: [[usize; 3]; 20] = [
    [0, 11, 5],
    [0, 5, 1],
    [0, 1, 7],
    [0, 7, 10],
    [0, 10, 11],
    [1, 5, 9],
    [5, 11, 4],
    [11, 10, 2],
    [10, 7, 6],
    [7, 1, 8],
    [3, 9, 4],
    [3, 4, 2],
    [3, 2, 6],
    [3, 6, 8],
    [3, 8, 9],
    [4, 9, 5],
    [2, 4, 11],
    [6, 2, 10],
    [8, 6, 7],
    [9, 8, 1],
];

fn normalize(v: [f64; 3]) -> [f64; 3] {
    let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
    [v[0] / n, v[1] / n, v[2] / n]
}

fn icosahedron_vertices() -> Vec<[f64; 3]> {
    let phi = (1.0 + 5f64.sqrt()) / 2.0;
    [
        [-1.0, phi, 0.0],
        [1.0, phi, 0.0],
        [-1.0, -phi, 0.0],
        [1.0, -phi, 0.0],
        [0.0, -1.0, phi],
        [0.0, 1.0, phi],
        [0.0, -1.0, -phi],
        [0.0, 1.0, -phi],
        [phi, 0.0, -1.0],
        [phi, 0.0, 1.0],
        [-phi, 0.0, -1.0],
        [-phi, 0.0, 1.0],
    ]
    .into_iter()
    .map(normalize)
    .collect()
}

/// Builds a level-`level` icosphere. Deterministic; rejects `level > 8`.
pub fn build_icosphere(level: u32) -> Result<IcoMesh> {
    if level > MAX_LEVEL {
        return Err(Error::OutOfRange(format!(
            "icosphere level {level} exceeds the limit of {MAX_LEVEL} ({} vertices)",
            vertex_count(MAX_LEVEL)
        )));
    }
    let mut vertices = icosahedron_vertices();
    let mut faces = ICOSAHEDRON_FACES.to_vec();

    for _ in 0..level {
        let mut midpoints: HashMap<(usize, usize), usize> = HashMap::with_capacity(faces.len() * 3 / 2);
        let mut next = Vec::with_capacity(faces.len() * 4);
        let mut midpoint = |a: usize, b: usize, vertices: &mut Vec<[f64; 3]>| -> usize {
            let key = (a.min(b), a.max(b));
            *midpoints.entry(key).or_insert_with(|| {
                let (p, q) = (vertices[a], vertices[b]);
                vertices.push(normalize([p[0] + q[0], p[1] + q[1], p[2] + q[2]]));
                vertices.len() - 1
            })
        };
        for &[a, b, c] in &faces {
            let ab = midpoint(a, b, &mut vertices);
            let bc = midpoint(b, c, &mut vertices);
            let ca = midpoint(c, a, &mut vertices);
            next.extend_from_slice(&[[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]]);
        }
        faces = next;
    }

    let mut edges: Vec<(usize, usize)> = faces
        .iter()
        .flat_map(|&[a, b, c]| [(a, b), (b, c), (c, a)])
        .map(|(a, b)| (a.min(b), a.max(b)))
        .collect();
    edges.sort_unstable();
    edges.dedup();

    let (lat, lon) = vertices.iter().map(|&v| vertex_lat_lon(v)).unzip();
    Ok(IcoMesh {
        level,
        vertices,
        lat,
        lon,
        edges,
        faces,
    })
}

impl IcoMesh {
    pub fn level(&self) -> u32 {
        self.level
    }

    pub fn len(&self) -> usize {
        self.vertices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vertices.is_empty()
    }

    pub fn vertices(&self) -> &[[f64; 3]] {
        &self.vertices
    }

    pub fn lat(&self) -> &[f64] {
        &self.lat
    }

    pub fn lon(&self) -> &[f64] {
        &self.lon
    }

    /// Undirected edges `(i, j)` with `i < j`, sorted.
    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn faces(&self) -> &[[usize; 3]] {
        &self.faces
    }

    /// Neighbour lists derived from the edge set.
    pub fn adjacency(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.len()];
        for &(a, b) in &self.edges {
            adj[a].push(b);
            adj[b].push(a);
        }
        adj
    }

    /// One `(lat, lon)` pair per vertex in degrees.
    pub fn coords(&self) -> Vec<(f64, f64)> {
        self.lat.iter().copied().zip(self.lon.iter().copied()).collect()
    }

    /// Writes `mesh.json` (level, count, coordinates) and `vertices.f64`
    /// (unit vectors, little-endian f64, construction order) into `dir`.
    pub fn export(&self, dir: &Path) -> Result<()> {
        binio::ensure_dir(dir)?;
        let manifest = MeshManifest {
            level: self.level,
            vertex_count: self.len(),
            vertices_file: VERTICES_FILE.to_string(),
            coords: self.coords().into_iter().map(|(a, b)| [a, b]).collect(),
        };
        binio::write_json(&dir.join(MESH_MANIFEST), &manifest)?;
        let flat: Vec<f64> = self.vertices.iter().flatten().copied().collect();
        binio::write_f64_file(&dir.join(VERTICES_FILE), &flat)
    }

    /// Reads a mesh written by [`IcoMesh::export`]. Edges are rebuilt from the
    /// level; the stored vertices must agree with the rebuilt ones.
    pub fn import(dir: &Path) -> Result<IcoMesh> {
        let path = dir.join(MESH_MANIFEST);
        let manifest: MeshManifest = binio::read_json(&path)?;
        let mesh = build_icosphere(manifest.level)?;
        if manifest.vertex_count != mesh.len() || manifest.coords.len() != mesh.len() {
            return Err(Error::format(path, "vertex count does not match mesh level"));
        }
        let stored = binio::read_f64_file(&dir.join(&manifest.vertices_file))?;
        let rebuilt: Vec<f64> = mesh.vertices.iter().flatten().copied().collect();
        if stored != rebuilt {
            return Err(Error::format(
                dir.join(&manifest.vertices_file),
                "vertex coordinates differ from the deterministic construction",
            ));
        }
        Ok(mesh)
    }
}

pub const MESH_MANIFEST: &str = "mesh.json";
pub const VERTICES_FILE: &str = "vertices.f64";

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MeshManifest {
    pub level: u32,
    pub vertex_count: usize,
    pub vertices_file: String,
    /// `[lat, lon]` in decimal degrees, construction order.
    pub coords: Vec<[f64; 2]>,
}

/// Rectilinear latitude-longitude grid.
///
/// Longitudes must be strictly increasing and span less than a full turn; they
/// are compared modulo 360, so a grid given on `[-180, 180)` or shifted by a
/// multiple of 360 behaves identically to its `[0, 360)` equivalent.
#[derive(Debug, Clone, PartialEq)]
pub struct GeoGrid {
    lats: Vec<f64>,
    lons: Vec<f64>,
    periodic_lon: bool,
}

impl GeoGrid {
    pub fn new(lats: Vec<f64>, lons: Vec<f64>, periodic_lon: bool) -> Result<Self> {
        ensure!(!lats.is_empty() && !lons.is_empty(), Validation, "empty lat-lon grid");
        ensure!(
            lats.iter().chain(&lons).all(|v| v.is_finite()),
            NonFinite,
            "grid coordinates must be finite"
        );
        ensure!(
            lats.iter().all(|l| (-90.0..=90.0).contains(l)),
            Validation,
            "latitudes must lie within [-90, 90]"
        );
        ensure!(
            lats.windows(2).all(|w| w[0] < w[1]),
            Validation,
            "latitudes must be strictly increasing"
        );
        ensure!(
            lons.windows(2).all(|w| w[0] < w[1]),
            Validation,
            "longitudes must be strictly increasing"
        );
        let span = lons[lons.len() - 1] - lons[0];
        ensure!(span < 360.0, Validation, "longitudes span {span} >= 360 degrees");
        if periodic_lon {
            ensure!(lons.len() >= 2, Validation, "a periodic grid needs at least two longitudes");
            let spacing = lons[1] - lons[0];
            ensure!(
                span + spacing >= 360.0 - 1e-9,
                Validation,
                "periodic grid does not cover the full circle (span {span} + spacing {spacing})"
            );
        }
        Ok(Self {
            lats,
            lons,
            periodic_lon,
        })
    }

    /// Regular global grid: latitudes `-90..=90` step `dlat`, longitudes
    /// `0..360` step `dlon`, periodic.
    pub fn regular(dlat: f64, dlon: f64) -> Result<Self> {
        ensure!(dlat > 0.0 && dlon > 0.0, Validation, "grid spacing must be positive");
        let nlat = (180.0 / dlat).round() as usize + 1;
        let nlon = (360.0 / dlon).round() as usize;
        let lats = (0..nlat).map(|i| -90.0 + i as f64 * dlat).collect();
        let lons = (0..nlon).map(|j| j as f64 * dlon).collect();
        Self::new(lats, lons, true)
    }

    pub fn lats(&self) -> &[f64] {
        &self.lats
    }

    pub fn lons(&self) -> &[f64] {
        &self.lons
    }

    pub fn periodic_lon(&self) -> bool {
        self.periodic_lon
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.lats.len(), self.lons.len())
    }

    /// Bracketing row indices and weight of the upper row. Poleward of the
    /// first/last row the value clamps to that row.
    fn lat_bracket(&self, lat: f64) -> (usize, usize, f64) {
        let n = self.lats.len();
        if lat <= self.lats[0] {
            return (0, 0, 0.0);
        }
        if lat >= self.lats[n - 1] {
            return (n - 1, n - 1, 0.0);
        }
        let i = self.lats.partition_point(|&l| l <= lat) - 1;
        let t = (lat - self.lats[i]) / (self.lats[i + 1] - self.lats[i]);
        (i, i + 1, t)
    }

    fn lon_bracket(&self, lon: f64) -> (usize, usize, f64) {
        let n = self.lons.len();
        let base = self.lons[0];
        // offset of the query east of the first column, in [0, 360)
        let offset = normalize_lon(lon - base);
        let rel = |j: usize| self.lons[j] - base;
        if n == 1 {
            return (0, 0, 0.0);
        }
        if offset >= rel(n - 1) {
            if self.periodic_lon {
                let width = 360.0 - rel(n - 1);
                return (n - 1, 0, (offset - rel(n - 1)) / width);
            }
            return (n - 1, n - 1, 0.0);
        }
        let j = self.lons.partition_point(|&l| l - base <= offset) - 1;
        let u = (offset - rel(j)) / (rel(j + 1) - rel(j));
        (j, j + 1, u)
    }
}

/// Interpolates a row-major `[lat][lon]` field onto every mesh vertex with
/// bilinear weights in degrees.
///
/// For a non-periodic grid, longitudes beyond the `[first, last]` column range
/// (measured eastward from the first column) clamp to the last column.
pub fn resample_to_mesh(field: &[f64], grid: &GeoGrid, mesh: &IcoMesh) -> Result<Vec<f64>> {
    let (nlat, nlon) = grid.shape();
    ensure!(
        field.len() == nlat * nlon,
        Shape,
        "field has {} values, grid is {nlat}x{nlon}",
        field.len()
    );
    if let Some(i) = field.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!(
            "field value at row {}, column {} is {}",
            i / nlon,
            i % nlon,
            field[i]
        )));
    }
    let at = |i: usize, j: usize| field[i * nlon + j];
    Ok(mesh
        .lat()
        .iter()
        .zip(mesh.lon())
        .map(|(&lat, &lon)| {
            let (i0, i1, t) = grid.lat_bracket(lat);
            let (j0, j1, u) = grid.lon_bracket(lon);
            (1.0 - t) * ((1.0 - u) * at(i0, j0) + u * at(i0, j1))
                + t * ((1.0 - u) * at(i1, j0) + u * at(i1, j1))
        })
        .collect())
}
