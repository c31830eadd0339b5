//! Conforming 2D triangulations with labeled boundary segments and subdomains.
//!
//! Meshes are either generated on an axis-aligned rectangle (each cell split
//! along its lower-left to upper-right diagonal) or read from the plain-text
//! `romocp-mesh 1` format:
//!
//! ```text
//! romocp-mesh 1
//! # comments start with '#'
//! V <count>
//! x y
//! T <count>
//! i j k label
//! E <count>
//! i j label
//! ```
//!
//! Indices are 0-based. Triangles must be counterclockwise.

use std::collections::{BTreeSet, HashMap};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Point = [f64; 2];

/// A labeled boundary segment.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BoundaryEdge {
    pub vertices: [usize; 2],
    pub label: i32,
}

/// Axis-aligned rectangle `[x0, x1] × [y0, y1]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Rect {
    pub x0: f64,
    pub x1: f64,
    pub y0: f64,
    pub y1: f64,
}

impl Rect {
    pub const UNIT: Rect = Rect {
        x0: 0.0,
        x1: 1.0,
        y0: 0.0,
        y1: 1.0,
    };

    pub fn new(x0: f64, x1: f64, y0: f64, y1: f64) -> Self {
        Rect { x0, x1, y0, y1 }
    }

    pub fn area(&self) -> f64 {
        (self.x1 - self.x0) * (self.y1 - self.y0)
    }

    fn contains(&self, p: Point) -> bool {
        p[0] >= self.x0 && p[0] <= self.x1 && p[1] >= self.y0 && p[1] <= self.y1
    }
}

/// Labels for the four sides of a generated rectangle.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BoundaryPlan {
    pub bottom: i32,
    pub right: i32,
    pub top: i32,
    pub left: i32,
}

impl BoundaryPlan {
    pub fn uniform(label: i32) -> Self {
        BoundaryPlan {
            bottom: label,
            right: label,
            top: label,
            left: label,
        }
    }
}

/// A labeled, cell-aligned subdomain box.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Region {
    pub label: i32,
    pub rect: Rect,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Mesh {
    vertices: Vec<Point>,
    triangles: Vec<[usize; 3]>,
    boundary_edges: Vec<BoundaryEdge>,
    region_labels: Vec<i32>,
    declared_regions: BTreeSet<i32>,
}

fn signed_area(a: Point, b: Point, c: Point) -> f64 {
    0.5 * ((b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1]))
}

fn edge_key(a: usize, b: usize) -> (usize, usize) {
    if a < b {
        (a, b)
    } else {
        (b, a)
    }
}

impl Mesh {
    /// Builds a mesh from raw parts, checking every structural invariant.
    pub fn new(
        vertices: Vec<Point>,
        triangles: Vec<[usize; 3]>,
        region_labels: Vec<i32>,
        boundary_edges: Vec<BoundaryEdge>,
    ) -> Result<Self> {
        let declared = region_labels.iter().copied().collect();
        Self::with_declared_regions(vertices, triangles, region_labels, boundary_edges, declared)
    }

    fn with_declared_regions(
        vertices: Vec<Point>,
        triangles: Vec<[usize; 3]>,
        region_labels: Vec<i32>,
        boundary_edges: Vec<BoundaryEdge>,
        declared_regions: BTreeSet<i32>,
    ) -> Result<Self> {
        let nv = vertices.len();
        if region_labels.len() != triangles.len() {
            return Err(Error::Validation(format!(
                "{} region labels for {} triangles",
                region_labels.len(),
                triangles.len()
            )));
        }
        for (t, tri) in triangles.iter().enumerate() {
            if let Some(&bad) = tri.iter().find(|&&v| v >= nv) {
                return Err(Error::Validation(format!(
                    "triangle {t} references vertex {bad} but the mesh has {nv} vertices"
                )));
            }
            let area = signed_area(vertices[tri[0]], vertices[tri[1]], vertices[tri[2]]);
            if !(area > 0.0) {
                return Err(Error::Validation(format!(
                    "triangle {t} {tri:?} has non-positive signed area {area:e} (clockwise or degenerate)"
                )));
            }
        }

        let mut edge_count: HashMap<(usize, usize), usize> = HashMap::new();
        for tri in &triangles {
            for e in 0..3 {
                *edge_count
                    .entry(edge_key(tri[e], tri[(e + 1) % 3]))
                    .or_default() += 1;
            }
        }
        if let Some((edge, _)) = edge_count.iter().find(|(_, &c)| c > 2) {
            return Err(Error::Validation(format!(
                "edge {edge:?} is shared by more than two triangles"
            )));
        }

        let mut labeled = HashMap::new();
        for (i, be) in boundary_edges.iter().enumerate() {
            let [a, b] = be.vertices;
            if a >= nv || b >= nv {
                return Err(Error::Validation(format!(
                    "boundary edge {i} references a missing vertex"
                )));
            }
            let key = edge_key(a, b);
            if edge_count.get(&key) != Some(&1) {
                return Err(Error::Validation(format!(
                    "boundary edge {i} ({a}, {b}) is not on the boundary of the triangle set"
                )));
            }
            if labeled.insert(key, i).is_some() {
                return Err(Error::Validation(format!(
                    "boundary edge {i} ({a}, {b}) is listed twice"
                )));
            }
        }
        let mut unlabeled: Vec<_> = edge_count
            .iter()
            .filter(|(k, &c)| c == 1 && !labeled.contains_key(*k))
            .map(|(k, _)| *k)
            .collect();
        if !unlabeled.is_empty() {
            unlabeled.sort_unstable();
            return Err(Error::Validation(format!(
                "boundary segment {:?} carries no label",
                unlabeled[0]
            )));
        }

        Ok(Mesh {
            vertices,
            triangles,
            boundary_edges,
            region_labels,
            declared_regions,
        })
    }

    pub fn vertices(&self) -> &[Point] {
        &self.vertices
    }

    pub fn triangles(&self) -> &[[usize; 3]] {
        &self.triangles
    }

    pub fn boundary_edges(&self) -> &[BoundaryEdge] {
        &self.boundary_edges
    }

    pub fn region_labels(&self) -> &[i32] {
        &self.region_labels
    }

    pub fn num_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn num_triangles(&self) -> usize {
        self.triangles.len()
    }

    pub fn triangle_area(&self, t: usize) -> f64 {
        let [a, b, c] = self.triangles[t];
        signed_area(self.vertices[a], self.vertices[b], self.vertices[c])
    }

    pub fn total_area(&self) -> f64 {
        (0..self.num_triangles())
            .map(|t| self.triangle_area(t))
            .sum()
    }

    /// True when the region label is known to the mesh, even if no triangle
    /// carries it (a zero-width region box).
    pub fn has_region(&self, label: i32) -> bool {
        self.declared_regions.contains(&label)
    }

    pub fn has_boundary_label(&self, label: i32) -> bool {
        self.boundary_edges.iter().any(|e| e.label == label)
    }

    /// Sum of the areas of triangles carrying `label`.
    pub fn region_area(&self, label: i32) -> Result<f64> {
        if !self.has_region(label) {
            return Err(Error::UnknownLabel(label));
        }
        Ok(self
            .region_labels
            .iter()
            .enumerate()
            .filter(|(_, &l)| l == label)
            .map(|(t, _)| self.triangle_area(t))
            .sum())
    }

    /// Vertices incident to any boundary edge whose label is in `labels`.
    pub fn boundary_vertices(&self, labels: &[i32]) -> BTreeSet<usize> {
        self.boundary_edges
            .iter()
            .filter(|e| labels.contains(&e.label))
            .flat_map(|e| e.vertices)
            .collect()
    }

    /// Serializes to the `romocp-mesh 1` text format. Coordinates use the
    /// shortest round-trip decimal representation.
    pub fn to_text(&self) -> String {
        let mut out = String::from("romocp-mesh 1\n");
        let _ = writeln!(out, "V {}", self.vertices.len());
        for p in &self.vertices {
            let _ = writeln!(out, "{:?} {:?}", p[0], p[1]);
        }
        let _ = writeln!(out, "T {}", self.triangles.len());
        for (tri, label) in self.triangles.iter().zip(&self.region_labels) {
            let _ = writeln!(out, "{} {} {} {}", tri[0], tri[1], tri[2], label);
        }
        let _ = writeln!(out, "E {}", self.boundary_edges.len());
        for e in &self.boundary_edges {
            let _ = writeln!(out, "{} {} {}", e.vertices[0], e.vertices[1], e.label);
        }
        out
    }
}

/// Structured triangulation of `bounds` with `nx × ny` cells.
pub fn generate_rect_mesh(
    nx: usize,
    ny: usize,
    bounds: Rect,
    boundary_plan: BoundaryPlan,
    regions: &[Region],
) -> Result<Mesh> {
    if nx == 0 || ny == 0 {
        return Err(Error::Argument(format!(
            "cell counts must be positive, got {nx}×{ny}"
        )));
    }
    let (width, height) = (bounds.x1 - bounds.x0, bounds.y1 - bounds.y0);
    if !(width > 0.0 && height > 0.0) || !width.is_finite() || !height.is_finite() {
        return Err(Error::Geometry(format!(
            "bounds {bounds:?} enclose no area"
        )));
    }
    let hx = width / nx as f64;
    let hy = height / ny as f64;

    let aligned = |c: f64, origin: f64, h: f64, n: usize| {
        let k = (c - origin) / h;
        let r = k.round();
        (k - r).abs() <= 1e-9 && r >= 0.0 && r <= n as f64
    };
    for region in regions {
        let r = region.rect;
        let ok = r.x0 <= r.x1
            && r.y0 <= r.y1
            && aligned(r.x0, bounds.x0, hx, nx)
            && aligned(r.x1, bounds.x0, hx, nx)
            && aligned(r.y0, bounds.y0, hy, ny)
            && aligned(r.y1, bounds.y0, hy, ny);
        if !ok {
            return Err(Error::Alignment(format!(
                "[{}, {}]×[{}, {}] (label {})",
                r.x0, r.x1, r.y0, r.y1, region.label
            )));
        }
    }

    let vid = |i: usize, j: usize| j * (nx + 1) + i;
    let mut vertices = Vec::with_capacity((nx + 1) * (ny + 1));
    for j in 0..=ny {
        for i in 0..=nx {
            // Exact endpoints keep boundary coordinates free of rounding.
            let x = if i == nx {
                bounds.x1
            } else {
                bounds.x0 + i as f64 * hx
            };
            let y = if j == ny {
                bounds.y1
            } else {
                bounds.y0 + j as f64 * hy
            };
            vertices.push([x, y]);
        }
    }

    let mut triangles = Vec::with_capacity(2 * nx * ny);
    for j in 0..ny {
        for i in 0..nx {
            let (v00, v10, v11, v01) = (vid(i, j), vid(i + 1, j), vid(i + 1, j + 1), vid(i, j + 1));
            triangles.push([v00, v10, v11]);
            triangles.push([v00, v11, v01]);
        }
    }

    let mut region_labels = vec![0; triangles.len()];
    for (t, tri) in triangles.iter().enumerate() {
        let c = [
            (vertices[tri[0]][0] + vertices[tri[1]][0] + vertices[tri[2]][0]) / 3.0,
            (vertices[tri[0]][1] + vertices[tri[1]][1] + vertices[tri[2]][1]) / 3.0,
        ];
        for region in regions {
            if region.rect.contains(c) {
                region_labels[t] = region.label;
            }
        }
    }

    let mut boundary_edges = Vec::with_capacity(2 * (nx + ny));
    for i in 0..nx {
        boundary_edges.push(BoundaryEdge {
            vertices: [vid(i, 0), vid(i + 1, 0)],
            label: boundary_plan.bottom,
        });
    }
    for j in 0..ny {
        boundary_edges.push(BoundaryEdge {
            vertices: [vid(nx, j), vid(nx, j + 1)],
            label: boundary_plan.right,
        });
    }
    for i in (0..nx).rev() {
        boundary_edges.push(BoundaryEdge {
            vertices: [vid(i + 1, ny), vid(i, ny)],
            label: boundary_plan.top,
        });
    }
    for j in (0..ny).rev() {
        boundary_edges.push(BoundaryEdge {
            vertices: [vid(0, j + 1), vid(0, j)],
            label: boundary_plan.left,
        });
    }

    let mut declared: BTreeSet<i32> = region_labels.iter().copied().collect();
    declared.insert(0);
    declared.extend(regions.iter().map(|r| r.label));
    Mesh::with_declared_regions(vertices, triangles, region_labels, boundary_edges, declared)
}

/// Parses the `romocp-mesh 1` text format.
pub fn load_mesh(text: &str) -> Result<Mesh> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.split('#').next().unwrap_or("").trim()))
        .filter(|(_, l)| !l.is_empty());

    let parse_err = |line: usize, msg: String| Error::Parse { line, msg };
    let eof = || Error::Parse {
        line: text.lines().count(),
        msg: "unexpected end of file".into(),
    };

    let (line, header) = lines.next().ok_or_else(eof)?;
    if header.split_whitespace().collect::<Vec<_>>() != ["romocp-mesh", "1"] {
        return Err(parse_err(
            line,
            format!("expected header `romocp-mesh 1`, found `{header}`"),
        ));
    }

    let mut section = |tag: &str| -> Result<(usize, Vec<(usize, Vec<&str>)>)> {
        let (line, head) = lines.next().ok_or_else(eof)?;
        let parts: Vec<_> = head.split_whitespace().collect();
        if parts.len() != 2 || parts[0] != tag {
            return Err(parse_err(
                line,
                format!("expected `{tag} <count>`, found `{head}`"),
            ));
        }
        let count: usize = parts[1]
            .parse()
            .map_err(|_| parse_err(line, format!("invalid count `{}`", parts[1])))?;
        let mut rows = Vec::with_capacity(count);
        for _ in 0..count {
            let (line, row) = lines.next().ok_or_else(eof)?;
            rows.push((line, row.split_whitespace().collect()));
        }
        Ok((line, rows))
    };

    fn field<T: std::str::FromStr>(line: usize, row: &[&str], idx: usize) -> Result<T> {
        row.get(idx)
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::Parse {
                line,
                msg: format!("cannot parse field {} of `{}`", idx + 1, row.join(" ")),
            })
    }
    let check_len = |line: usize, row: &[&str], n: usize| {
        if row.len() == n {
            Ok(())
        } else {
            Err(parse_err(
                line,
                format!("expected {n} fields, found {}", row.len()),
            ))
        }
    };

    let (_, vrows) = section("V")?;
    let mut vertices = Vec::with_capacity(vrows.len());
    for (line, row) in &vrows {
        check_len(*line, row, 2)?;
        vertices.push([field::<f64>(*line, row, 0)?, field::<f64>(*line, row, 1)?]);
    }

    let (_, trows) = section("T")?;
    let mut triangles = Vec::with_capacity(trows.len());
    let mut labels = Vec::with_capacity(trows.len());
    for (line, row) in &trows {
        check_len(*line, row, 4)?;
        triangles.push([
            field::<usize>(*line, row, 0)?,
            field::<usize>(*line, row, 1)?,
            field::<usize>(*line, row, 2)?,
        ]);
        labels.push(field::<i32>(*line, row, 3)?);
    }

    let (_, erows) = section("E")?;
    let mut edges = Vec::with_capacity(erows.len());
    for (line, row) in &erows {
        check_len(*line, row, 3)?;
        edges.push(BoundaryEdge {
            vertices: [
                field::<usize>(*line, row, 0)?,
                field::<usize>(*line, row, 1)?,
            ],
            label: field::<i32>(*line, row, 2)?,
        });
    }

    if let Some((line, extra)) = lines.next() {
        return Err(parse_err(
            line,
            format!("unexpected trailing content `{extra}`"),
        ));
    }

    Mesh::new(vertices, triangles, labels, edges)
}
