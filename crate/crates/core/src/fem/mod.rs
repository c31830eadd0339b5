//! Continuous P1 Lagrange spaces on triangulations and the exact (closed-form)
//! assembly of every bilinear and trilinear form used by the built-in
//! problems.
//!
//! Dirichlet conditions are homogeneous and imposed by elimination: only free
//! vertices carry degrees of freedom, so all assembled operators act on free
//! dofs.

mod assembly;
mod trilinear;

use std::sync::Arc;

pub use assembly::{
    assemble_advection, assemble_mass, assemble_mixed_mass, assemble_region_load,
    assemble_stiffness, norm_matrix, NormKind, Subdomain,
};
pub use trilinear::{assemble_trilinear, DenseTensor3, ThirdOrderForm};

use crate::error::{Error, Result};
use crate::mesh::Mesh;

/// P1 space over a mesh with homogeneous Dirichlet conditions on the listed
/// boundary labels.
#[derive(Clone, Debug)]
pub struct FeSpace {
    mesh: Arc<Mesh>,
    dof_of_vertex: Vec<Option<usize>>,
    free: Vec<usize>,
    dirichlet: Vec<usize>,
}

/// Geometry of one triangle as seen by the space: free-dof indices of its
/// vertices, area and the (constant) gradients of the three hat functions.
#[derive(Clone, Copy, Debug)]
pub struct Element {
    pub index: usize,
    pub vertices: [usize; 3],
    pub dofs: [Option<usize>; 3],
    pub area: f64,
    pub grads: [[f64; 2]; 3],
    pub region: i32,
}

pub fn build_space(mesh: Arc<Mesh>, dirichlet_labels: &[i32]) -> Result<FeSpace> {
    for &l in dirichlet_labels {
        if !mesh.has_boundary_label(l) {
            return Err(Error::UnknownLabel(l));
        }
    }
    let constrained = mesh.boundary_vertices(dirichlet_labels);
    let mut dof_of_vertex = vec![None; mesh.num_vertices()];
    let mut free = Vec::new();
    let mut dirichlet = Vec::new();
    for v in 0..mesh.num_vertices() {
        if constrained.contains(&v) {
            dirichlet.push(v);
        } else {
            dof_of_vertex[v] = Some(free.len());
            free.push(v);
        }
    }
    Ok(FeSpace {
        mesh,
        dof_of_vertex,
        free,
        dirichlet,
    })
}

impl FeSpace {
    /// Number of free dofs.
    pub fn dim(&self) -> usize {
        self.free.len()
    }

    pub fn mesh(&self) -> &Arc<Mesh> {
        &self.mesh
    }

    pub fn free_vertices(&self) -> &[usize] {
        &self.free
    }

    pub fn dirichlet_vertices(&self) -> &[usize] {
        &self.dirichlet
    }

    pub fn dof(&self, vertex: usize) -> Option<usize> {
        self.dof_of_vertex[vertex]
    }

    pub fn dof_coordinates(&self) -> Vec<[f64; 2]> {
        self.free.iter().map(|&v| self.mesh.vertices()[v]).collect()
    }

    /// Per-vertex values from free-dof coefficients (zero on constrained vertices).
    pub fn to_vertex_values(&self, coeffs: &[f64]) -> Vec<f64> {
        assert_eq!(coeffs.len(), self.dim());
        self.dof_of_vertex
            .iter()
            .map(|d| d.map_or(0.0, |i| coeffs[i]))
            .collect()
    }

    /// Free-dof coefficients of the P1 interpolant of `f`.
    pub fn interpolate(&self, f: impl Fn([f64; 2]) -> f64) -> Vec<f64> {
        self.free
            .iter()
            .map(|&v| f(self.mesh.vertices()[v]))
            .collect()
    }

    pub fn element(&self, t: usize) -> Element {
        let mesh = &self.mesh;
        let tri = mesh.triangles()[t];
        let p = tri.map(|v| mesh.vertices()[v]);
        let det =
            (p[1][0] - p[0][0]) * (p[2][1] - p[0][1]) - (p[2][0] - p[0][0]) * (p[1][1] - p[0][1]);
        let mut grads = [[0.0; 2]; 3];
        for i in 0..3 {
            let (a, b) = (p[(i + 1) % 3], p[(i + 2) % 3]);
            grads[i] = [(a[1] - b[1]) / det, (b[0] - a[0]) / det];
        }
        Element {
            index: t,
            vertices: tri,
            dofs: tri.map(|v| self.dof_of_vertex[v]),
            area: 0.5 * det,
            grads,
            region: mesh.region_labels()[t],
        }
    }

    pub fn elements(&self) -> impl Iterator<Item = Element> + '_ {
        (0..self.mesh.num_triangles()).map(move |t| self.element(t))
    }
}
