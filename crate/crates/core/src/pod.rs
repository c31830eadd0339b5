//! Proper orthogonal decomposition by the method of snapshots, partitioned
//! per variable or monolithic over stacked variables.

use nalgebra::{DMatrix, SymmetricEigen};
use rayon::prelude::*;

use crate::archive::Archive;
use crate::error::{Error, Result};
use crate::problems::{Layout, ProblemDef};
use crate::sparse::{dot, SparseMatrix, TripletBuilder};
use crate::truth::OcpSolution;

/// Truth solutions over a training set, split per variable.
#[derive(Clone, Debug)]
pub struct SnapshotSet {
    pub names: Vec<String>,
    pub params: Vec<Vec<f64>>,
    /// `snapshots[v][m]` is variable `v` at training parameter `m`.
    pub snapshots: Vec<Vec<Vec<f64>>>,
    pub inner_products: Vec<SparseMatrix>,
    /// Variables kept as-is instead of compressed (the scalar control).
    pub passthrough: Vec<bool>,
}

impl SnapshotSet {
    pub fn from_solutions(problem: &ProblemDef, solutions: &[OcpSolution]) -> Result<Self> {
        let layout = &problem.layout;
        if solutions.is_empty() {
            return Err(Error::Usage(
                "snapshot set needs at least one solution".into(),
            ));
        }
        let nf = layout.fields().len();
        let mut snapshots = vec![Vec::with_capacity(solutions.len()); nf];
        for s in solutions {
            if s.values.len() != layout.total() {
                return Err(Error::Usage(
                    "solution does not match the problem layout".into(),
                ));
            }
            for (v, part) in layout.split(&s.values).into_iter().enumerate() {
                snapshots[v].push(part.to_vec());
            }
        }
        let control = layout.control_index();
        Ok(SnapshotSet {
            names: layout.fields().iter().map(|f| f.name.clone()).collect(),
            params: solutions.iter().map(|s| s.mu.clone()).collect(),
            snapshots,
            inner_products: problem.norms.clone(),
            passthrough: (0..nf)
                .map(|v| v == control && layout.scalar_control)
                .collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Restriction to the first `m` training parameters.
    pub fn truncate(&self, m: usize) -> SnapshotSet {
        let mut s = self.clone();
        s.params.truncate(m);
        s.snapshots.iter_mut().for_each(|v| v.truncate(m));
        s
    }

    /// Container with one `M × dim` array per variable.
    pub fn to_archive(&self) -> Archive {
        let meta = serde_json::json!({
            "variables": self.names,
            "dims": self.snapshots.iter().map(|v| v.first().map_or(0, Vec::len)).collect::<Vec<_>>(),
            "m": self.len(),
            "params": self.params,
        });
        let mut a = Archive::new("snapshots", meta);
        for (name, v) in self.names.iter().zip(&self.snapshots) {
            let dim = v.first().map_or(0, Vec::len);
            a.push(format!("snapshots/{name}"), vec![v.len(), dim], v.concat());
        }
        a
    }

    /// Reads snapshots written by [`SnapshotSet::to_archive`] (or any other
    /// producer of the format) for `problem`, whose layout they must match.
    pub fn from_archive(a: &Archive, problem: &ProblemDef) -> Result<Self> {
        a.expect_kind("snapshots")?;
        let bad = |m: String| Error::Archive(m);
        let params: Vec<Vec<f64>> = serde_json::from_value(a.meta["params"].clone())
            .map_err(|e| bad(format!("snapshot parameters: {e}")))?;
        let m = params.len();
        let layout = &problem.layout;
        let mut snapshots = Vec::with_capacity(layout.fields().len());
        for f in layout.fields() {
            let data = a.get_shaped(&format!("snapshots/{}", f.name), &[m, f.dim])?;
            snapshots.push(
                data.chunks(f.dim.max(1))
                    .take(m)
                    .map(<[f64]>::to_vec)
                    .collect(),
            );
        }
        let control = layout.control_index();
        Ok(SnapshotSet {
            names: layout.fields().iter().map(|f| f.name.clone()).collect(),
            params,
            snapshots,
            inner_products: problem.norms.clone(),
            passthrough: (0..layout.fields().len())
                .map(|v| v == control && layout.scalar_control)
                .collect(),
        })
    }

    /// Each training vector `z_m` reassembled in layout order.
    pub fn stacked(&self, layout: &Layout) -> Vec<Vec<f64>> {
        (0..self.len())
            .map(|m| {
                let mut z = Vec::with_capacity(layout.total());
                for v in &self.snapshots {
                    z.extend_from_slice(&v[m]);
                }
                z
            })
            .collect()
    }
}

/// Retained POD modes of one variable.
#[derive(Clone, Debug)]
pub struct PodBasis {
    /// Orthonormal in the variable's inner product.
    pub modes: Vec<Vec<f64>>,
    /// Correlation eigenvalues, nonincreasing, negatives clipped to 0.
    pub eigenvalues: Vec<f64>,
    /// Fewer modes than requested could be extracted.
    pub rank_deficient: bool,
    /// Variable was not compressed (scalar control, U_N = ℝ).
    pub passthrough: bool,
}

impl PodBasis {
    pub fn len(&self) -> usize {
        self.modes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.modes.is_empty()
    }

    pub fn matrix(&self, n: usize) -> DMatrix<f64> {
        let dim = self.modes.first().map_or(0, Vec::len);
        DMatrix::from_fn(dim, n.min(self.len()), |i, j| self.modes[j][i])
    }
}

fn check_snapshots(snaps: &[Vec<f64>], ip: &SparseMatrix) -> Result<()> {
    if snaps.is_empty() {
        return Err(Error::Usage(
            "correlation needs at least one snapshot".into(),
        ));
    }
    if let Some(s) = snaps
        .iter()
        .find(|s| s.len() != ip.ncols() || ip.nrows() != ip.ncols())
    {
        return Err(Error::Usage(format!(
            "snapshot of length {} against a {:?} inner product",
            s.len(),
            ip.shape()
        )));
    }
    Ok(())
}

/// `C[m,q] = (1/M) s_mᵀ · ip · s_q`.
pub fn compute_correlation(snaps: &[Vec<f64>], ip: &SparseMatrix) -> Result<DMatrix<f64>> {
    check_snapshots(snaps, ip)?;
    let m = snaps.len();
    let weighted: Vec<Vec<f64>> = snaps.par_iter().map(|s| ip.mul_vec(s)).collect();
    let mut c = DMatrix::zeros(m, m);
    for i in 0..m {
        for j in 0..=i {
            let v = dot(&snaps[i], &weighted[j]) / m as f64;
            c[(i, j)] = v;
            c[(j, i)] = v;
        }
    }
    Ok(c)
}

/// Eigenpairs sorted by decreasing eigenvalue, negatives clipped to zero.
fn sorted_eigen(c: DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let eig = SymmetricEigen::new(c);
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let values = order.iter().map(|&i| eig.eigenvalues[i].max(0.0)).collect();
    let vectors = DMatrix::from_fn(eig.eigenvectors.nrows(), order.len(), |r, c| {
        eig.eigenvectors[(r, order[c])]
    });
    (values, vectors)
}

/// Orthogonalizes `v` against `basis` (modified Gram-Schmidt, two passes)
/// and normalizes. Returns `None` when `v` is numerically in the span.
fn orthonormalize(
    v: &mut [f64],
    basis: &[Vec<f64>],
    ip: &SparseMatrix,
    drop_tol: f64,
) -> Option<()> {
    let n0 = dot(v, &ip.mul_vec(v)).max(0.0).sqrt();
    if n0 == 0.0 {
        return None;
    }
    for _ in 0..2 {
        for b in basis {
            let c = dot(b, &ip.mul_vec(v));
            v.iter_mut().zip(b).for_each(|(x, y)| *x -= c * y);
        }
    }
    let n1 = dot(v, &ip.mul_vec(v)).max(0.0).sqrt();
    if n1 <= drop_tol * n0 {
        return None;
    }
    v.iter_mut().for_each(|x| *x /= n1);
    Some(())
}

/// Relative size below which a residual snapshot is treated as roundoff.
const NOISE_FLOOR: f64 = 1e-15;
/// Per pass, modes are taken down to this fraction of the pass's leading
/// eigenvalue; smaller ones are recomputed from deflated snapshots.
const PASS_RANGE: f64 = 1e-10;

/// POD basis of `n` modes from one variable's snapshots.
///
/// The leading eigenvectors of the correlation matrix are combined into
/// modes and re-orthonormalized in `ip`. Eigenvectors of a dense solve lose
/// relative accuracy far below the leading eigenvalue, so modes past
/// `PASS_RANGE · λ₁` come from a fresh decomposition of the snapshots with
/// the modes found so far projected out. Reported eigenvalues are those of
/// the full correlation matrix `corr`.
pub fn pod_basis(
    corr: &DMatrix<f64>,
    snaps: &[Vec<f64>],
    ip: &SparseMatrix,
    n: usize,
) -> Result<PodBasis> {
    check_snapshots(snaps, ip)?;
    let m = snaps.len();
    if corr.shape() != (m, m) {
        return Err(Error::Usage(format!(
            "correlation {:?} for {m} snapshots",
            corr.shape()
        )));
    }
    if n == 0 || n > m {
        return Err(Error::Argument(format!(
            "retained count must lie in 1..={m}, got {n}"
        )));
    }
    let (eigenvalues, _) = sorted_eigen(corr.clone());
    let energy: f64 = eigenvalues.iter().sum();
    let mut modes: Vec<Vec<f64>> = Vec::with_capacity(n);
    let mut residual: Vec<Vec<f64>> = snaps.to_vec();
    let mut c = corr.clone();
    while modes.len() < n && energy > 0.0 {
        let (values, vectors) = sorted_eigen(c);
        let lead = values[0];
        if lead <= NOISE_FLOOR * NOISE_FLOOR * energy {
            break;
        }
        let before = modes.len();
        for k in 0..m {
            if modes.len() == n || values[k] <= PASS_RANGE * lead {
                break;
            }
            let mut xi = vec![0.0; residual[0].len()];
            for (j, s) in residual.iter().enumerate() {
                let w = vectors[(j, k)];
                xi.iter_mut().zip(s).for_each(|(x, y)| *x += w * y);
            }
            if orthonormalize(&mut xi, &modes, ip, 1e-8).is_some() {
                modes.push(xi);
            }
        }
        if modes.len() == before {
            break;
        }
        residual = snaps
            .par_iter()
            .map(|s| {
                let mut r = s.clone();
                for _ in 0..2 {
                    let ipr = ip.mul_vec(&r);
                    for b in &modes {
                        let coef = dot(b, &ipr);
                        r.iter_mut().zip(b).for_each(|(x, y)| *x -= coef * y);
                    }
                }
                r
            })
            .collect();
        c = compute_correlation(&residual, ip)?;
    }
    Ok(PodBasis {
        rank_deficient: modes.len() < n,
        modes,
        eigenvalues,
        passthrough: false,
    })
}

fn passthrough_basis(snaps: &[Vec<f64>], ip: &SparseMatrix) -> Result<PodBasis> {
    let corr = compute_correlation(snaps, ip)?;
    let (eigenvalues, _) = sorted_eigen(corr);
    let dim = snaps[0].len();
    let modes = (0..dim)
        .map(|i| {
            let mut e = vec![0.0; dim];
            e[i] = 1.0;
            e
        })
        .collect();
    Ok(PodBasis {
        modes,
        eigenvalues,
        rank_deficient: false,
        passthrough: true,
    })
}

/// One POD per variable; scalar controls pass through uncompressed.
pub fn pod_partitioned(snapshots: &SnapshotSet, n: usize) -> Result<Vec<PodBasis>> {
    (0..snapshots.names.len())
        .into_par_iter()
        .map(|v| {
            let (snaps, ip) = (&snapshots.snapshots[v], &snapshots.inner_products[v]);
            if snapshots.passthrough[v] {
                return passthrough_basis(snaps, ip);
            }
            let corr = compute_correlation(snaps, ip)?;
            pod_basis(&corr, snaps, ip, n)
        })
        .collect()
}

/// Block-diagonal inner product over the stacked variables.
pub fn stacked_inner_product(snapshots: &SnapshotSet) -> SparseMatrix {
    let total: usize = snapshots
        .inner_products
        .iter()
        .map(SparseMatrix::nrows)
        .sum();
    let mut t = TripletBuilder::new(total, total);
    let mut off = 0;
    for ip in &snapshots.inner_products {
        t.push_block(ip, off, off, 1.0);
        off += ip.nrows();
    }
    t.build()
}

/// A single POD over stacked `(y, u, p)` vectors.
pub fn pod_monolithic(snapshots: &SnapshotSet, layout: &Layout, n: usize) -> Result<PodBasis> {
    let stacked = snapshots.stacked(layout);
    let ip = stacked_inner_product(snapshots);
    let corr = compute_correlation(&stacked, &ip)?;
    pod_basis(&corr, &stacked, &ip, n)
}
