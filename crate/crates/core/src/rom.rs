//! Reduced optimality systems on aggregated POD spaces: Galerkin projection
//! of the affine terms (offline) and dense assembly and solve (online).

use log::{debug, warn};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::archive::Archive;
use crate::error::{Error, Result};
use crate::fem::DenseTensor3;
use crate::pod::PodBasis;
use crate::problems::{Layout, ParameterBox, ProblemConfig, ProblemDef, ProblemKind, ThetaMap};
use crate::sparse::{dense_solve, SparseMatrix};
use crate::truth::NewtonOptions;

/// Reduced spaces, one dense basis per field of the full layout.
///
/// In the aggregated form each state and its adjoint share one basis
/// `Z = span{state modes, adjoint modes}`, so the reduced constraint block
/// is square and reduced inf-sup stability follows from the full one.
///
/// Candidates enter the orthonormalization interleaved (state mode k, then
/// adjoint mode k), so the space built from the first `k` modes is a column
/// prefix of the block; `counts[f][k]` is that prefix length.
#[derive(Clone, Debug, PartialEq)]
pub struct AggregatedBasis {
    pub layout: Layout,
    /// Same fields with reduced dimensions.
    pub reduced: Layout,
    /// `blocks[i]` is `dim_i × r_i`, columns orthonormal in field `i`'s norm.
    pub blocks: Vec<DMatrix<f64>>,
    pub counts: Vec<Vec<usize>>,
    pub aggregated: bool,
}

/// Orthonormalizes groups of candidates in order (modified Gram-Schmidt,
/// two passes), skipping those numerically in the span of earlier ones.
/// Returns the basis and the column count after each group.
fn orthonormal_groups(groups: &[Vec<&[f64]>], ip: &SparseMatrix) -> (DMatrix<f64>, Vec<usize>) {
    let mut cols: Vec<Vec<f64>> = Vec::new();
    let mut counts = vec![0];
    for g in groups {
        for c in g {
            let mut v = c.to_vec();
            let n0 = ip.quad_form(&v).max(0.0).sqrt();
            for _ in 0..2 {
                let w = ip.mul_vec(&v);
                for b in &cols {
                    let coef: f64 = b.iter().zip(&w).map(|(x, y)| x * y).sum();
                    v.iter_mut().zip(b).for_each(|(x, y)| *x -= coef * y);
                }
            }
            let n1 = ip.quad_form(&v).max(0.0).sqrt();
            if n0 == 0.0 || n1 <= 1e-10 * n0 {
                continue;
            }
            v.iter_mut().for_each(|x| *x /= n1);
            cols.push(v);
        }
        counts.push(cols.len());
    }
    let dim = ip.nrows();
    (DMatrix::from_fn(dim, cols.len(), |i, j| cols[j][i]), counts)
}

fn leading<'a>(pod: &'a PodBasis, n: usize, name: &str) -> Result<&'a [Vec<f64>]> {
    if pod.len() < n {
        return Err(Error::Capacity(format!(
            "{name} has {} POD modes, {n} requested",
            pod.len()
        )));
    }
    Ok(&pod.modes[..n])
}

fn singletons(modes: &[Vec<f64>]) -> Vec<Vec<&[f64]>> {
    modes.iter().map(|m| vec![m.as_slice()]).collect()
}

fn paired<'a>(a: &'a [Vec<f64>], b: &'a [Vec<f64>]) -> Vec<Vec<&'a [f64]>> {
    a.iter()
        .zip(b)
        .map(|(x, y)| vec![x.as_slice(), y.as_slice()])
        .collect()
}

impl AggregatedBasis {
    fn assemble(
        layout: &Layout,
        blocks: Vec<DMatrix<f64>>,
        counts: Vec<Vec<usize>>,
        aggregated: bool,
    ) -> Self {
        let dims: Vec<(String, usize)> = layout
            .fields()
            .iter()
            .zip(&blocks)
            .map(|(f, b)| (f.name.clone(), b.ncols()))
            .collect();
        AggregatedBasis {
            layout: layout.clone(),
            reduced: reduced_layout(layout, &dims),
            blocks,
            counts,
            aggregated,
        }
    }

    fn control_block(
        pods: &[PodBasis],
        layout: &Layout,
        norms: &[SparseMatrix],
        n: usize,
    ) -> Result<(DMatrix<f64>, Vec<usize>)> {
        let c = layout.control_index();
        if pods[c].passthrough {
            let d = layout.fields()[c].dim;
            return Ok((DMatrix::identity(d, d), vec![d; n + 1]));
        }
        let modes = leading(&pods[c], n, &layout.fields()[c].name)?;
        Ok(orthonormal_groups(&singletons(modes), &norms[c]))
    }

    /// Aggregated spaces from per-variable PODs with `n` modes each.
    pub fn aggregate_spaces(
        pods: &[PodBasis],
        layout: &Layout,
        norms: &[SparseMatrix],
        n: usize,
    ) -> Result<Self> {
        check_counts(pods, layout, norms)?;
        let ns = layout.num_states();
        let nf = layout.fields().len();
        let (mut blocks, mut counts) = (vec![DMatrix::zeros(0, 0); nf], vec![Vec::new(); nf]);
        for i in 0..ns {
            let a = layout.adjoint_index(i);
            let st = leading(&pods[i], n, &layout.fields()[i].name)?;
            let ad = leading(&pods[a], n, &layout.fields()[a].name)?;
            let (z, c) = orthonormal_groups(&paired(st, ad), &norms[i]);
            if z.ncols() < 2 * n {
                warn!(
                    "aggregated space for {} has {} columns instead of {}",
                    layout.fields()[i].name,
                    z.ncols(),
                    2 * n
                );
            }
            (blocks[a], counts[a]) = (z.clone(), c.clone());
            (blocks[i], counts[i]) = (z, c);
        }
        (blocks[ns], counts[ns]) = Self::control_block(pods, layout, norms, n)?;
        Ok(Self::assemble(layout, blocks, counts, true))
    }

    /// State and adjoint keep their own `n` modes (no aggregation).
    pub fn separate_spaces(
        pods: &[PodBasis],
        layout: &Layout,
        norms: &[SparseMatrix],
        n: usize,
    ) -> Result<Self> {
        check_counts(pods, layout, norms)?;
        let ns = layout.num_states();
        let nf = layout.fields().len();
        let (mut blocks, mut counts) = (vec![DMatrix::zeros(0, 0); nf], vec![Vec::new(); nf]);
        for i in (0..ns).chain(ns + 1..nf) {
            let modes = leading(&pods[i], n, &layout.fields()[i].name)?;
            (blocks[i], counts[i]) = orthonormal_groups(&singletons(modes), &norms[i]);
        }
        (blocks[ns], counts[ns]) = Self::control_block(pods, layout, norms, n)?;
        Ok(Self::assemble(layout, blocks, counts, false))
    }

    /// Aggregated spaces from the first `n` modes of a POD over stacked
    /// vectors: each joint mode is split into its fields and the pieces are
    /// orthonormalized per space, dropping dependent ones.
    pub fn from_monolithic(
        pod: &PodBasis,
        layout: &Layout,
        norms: &[SparseMatrix],
        n: usize,
    ) -> Result<Self> {
        let modes = leading(pod, n, "stacked basis")?;
        let ns = layout.num_states();
        let nf = layout.fields().len();
        let part = |f: usize| -> Vec<Vec<f64>> {
            modes.iter().map(|m| m[layout.range(f)].to_vec()).collect()
        };
        let (mut blocks, mut counts) = (vec![DMatrix::zeros(0, 0); nf], vec![Vec::new(); nf]);
        for i in 0..ns {
            let a = layout.adjoint_index(i);
            let (st, ad) = (part(i), part(a));
            let (z, c) = orthonormal_groups(&paired(&st, &ad), &norms[i]);
            (blocks[a], counts[a]) = (z.clone(), c.clone());
            (blocks[i], counts[i]) = (z, c);
        }
        (blocks[ns], counts[ns]) = if layout.scalar_control {
            let d = layout.fields()[ns].dim;
            (DMatrix::identity(d, d), vec![d; n + 1])
        } else {
            orthonormal_groups(&singletons(&part(ns)), &norms[ns])
        };
        Ok(Self::assemble(layout, blocks, counts, true))
    }

    /// Number of modes per variable the spaces were built from.
    pub fn basis_size(&self) -> usize {
        self.counts[0].len() - 1
    }

    /// Spaces built from the first `n` modes only (column prefixes).
    pub fn truncate(&self, n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::Argument("basis size must be at least 1".into()));
        }
        if n > self.basis_size() {
            return Err(Error::Capacity(format!(
                "basis holds {} modes per variable, {n} requested",
                self.basis_size()
            )));
        }
        let blocks = self
            .blocks
            .iter()
            .zip(&self.counts)
            .map(|(b, c)| b.columns(0, c[n]).into_owned())
            .collect();
        let counts = self.counts.iter().map(|c| c[..=n].to_vec()).collect();
        Ok(Self::assemble(
            &self.layout,
            blocks,
            counts,
            self.aggregated,
        ))
    }

    /// Reduced indices kept by `truncate(n)`, per field, in reduced layout order.
    fn kept_indices(&self, n: usize) -> Vec<Vec<usize>> {
        (0..self.layout.fields().len())
            .map(|f| {
                let o = self.reduced.offset(f);
                (o..o + self.counts[f][n]).collect()
            })
            .collect()
    }

    /// `blockdiag` of the bases of fields `range`, dense.
    fn block_diag(&self, fields: std::ops::Range<usize>) -> DMatrix<f64> {
        let rows: usize = fields.clone().map(|f| self.blocks[f].nrows()).sum();
        let cols: usize = fields.clone().map(|f| self.blocks[f].ncols()).sum();
        let mut m = DMatrix::zeros(rows, cols);
        let (mut r, mut c) = (0, 0);
        for f in fields {
            let b = &self.blocks[f];
            m.view_mut((r, c), b.shape()).copy_from(b);
            r += b.nrows();
            c += b.ncols();
        }
        m
    }

    /// Basis of the reduced `x = (states, control)` space, `n_x × r_x`.
    pub fn x_matrix(&self) -> DMatrix<f64> {
        self.block_diag(0..self.layout.control_index() + 1)
    }

    /// Basis of the reduced adjoint space, `n_p × r_p`.
    pub fn p_matrix(&self) -> DMatrix<f64> {
        self.block_diag(self.layout.control_index() + 1..self.layout.fields().len())
    }

    pub fn reduced_dim(&self) -> usize {
        self.reduced.total()
    }
}

fn reduced_layout(layout: &Layout, dims: &[(String, usize)]) -> Layout {
    let ns = layout.num_states();
    let refs: Vec<(&str, usize)> = dims.iter().map(|(n, d)| (n.as_str(), *d)).collect();
    Layout::new(
        &refs[..ns],
        refs[ns],
        &refs[ns + 1..],
        layout.scalar_control,
    )
}

fn check_counts(pods: &[PodBasis], layout: &Layout, norms: &[SparseMatrix]) -> Result<()> {
    let nf = layout.fields().len();
    if pods.len() != nf || norms.len() != nf {
        return Err(Error::Usage(format!(
            "{nf} fields but {} POD bases and {} norms",
            pods.len(),
            norms.len()
        )));
    }
    Ok(())
}

/// Galerkin projection `Wᵀ·S·V` of a sparse matrix onto dense bases.
fn project_matrix(s: &SparseMatrix, left: &DMatrix<f64>, right: &DMatrix<f64>) -> DMatrix<f64> {
    left.transpose() * s.mul_dense(right)
}

/// Reduced trilinear coupling with the field indices of its slots.
#[derive(Clone, Debug, PartialEq)]
pub struct ReducedTensor {
    pub tensor: DenseTensor3,
    pub slots: [usize; 3],
}

/// Everything the online stage needs; independent of the truth dimension
/// apart from the bases kept for reconstruction.
#[derive(Clone, Debug, PartialEq)]
pub struct ReducedCache {
    pub kind: ProblemKind,
    /// Configuration of the truth problem, when known; kept so a stored
    /// cache can rebuild the mesh for export and truth comparisons.
    pub config: Option<ProblemConfig>,
    pub theta: ThetaMap,
    pub parameter_box: ParameterBox,
    pub basis: AggregatedBasis,
    /// Number of POD modes per variable the spaces were built from.
    pub basis_size: usize,
    pub a_terms: Vec<DMatrix<f64>>,
    pub b_terms: Vec<DMatrix<f64>>,
    pub f_terms: Vec<DVector<f64>>,
    pub g_terms: Vec<DVector<f64>>,
    pub c0: f64,
    pub tensor: Option<ReducedTensor>,
    /// Gram matrices of the reduced bases in the x and adjoint norms.
    pub gram_x: DMatrix<f64>,
    pub gram_p: DMatrix<f64>,
    pub newton: NewtonOptions,
}

fn block_norm(norms: &[SparseMatrix], fields: std::ops::Range<usize>) -> SparseMatrix {
    let n: usize = fields.clone().map(|f| norms[f].nrows()).sum();
    let mut t = crate::sparse::TripletBuilder::new(n, n);
    let mut off = 0;
    for f in fields {
        t.push_block(&norms[f], off, off, 1.0);
        off += norms[f].nrows();
    }
    t.build()
}

/// Projects every affine term of `problem` onto `basis`.
pub fn project_affine(problem: &ProblemDef, basis: AggregatedBasis) -> Result<ReducedCache> {
    let l = &problem.layout;
    if basis.layout != *l {
        return Err(Error::Usage(
            "basis was built for a different layout".into(),
        ));
    }
    let (x, p) = (basis.x_matrix(), basis.p_matrix());
    let tensor = problem.trilinear.as_ref().map(|t| {
        let [s0, s1, a] = t.slots;
        ReducedTensor {
            tensor: t
                .form
                .project(&basis.blocks[s0], &basis.blocks[s1], &basis.blocks[a]),
            slots: t.slots,
        }
    });
    let c = l.control_index();
    let gram_x = project_matrix(&block_norm(&problem.norms, 0..c + 1), &x, &x);
    let gram_p = project_matrix(&block_norm(&problem.norms, c + 1..l.fields().len()), &p, &p);
    Ok(ReducedCache {
        kind: problem.kind,
        config: None,
        theta: problem.theta.clone(),
        parameter_box: problem.parameter_box.clone(),
        basis_size: basis.basis_size(),
        a_terms: problem
            .a_terms
            .iter()
            .map(|a| project_matrix(a, &x, &x))
            .collect(),
        b_terms: problem
            .b_terms
            .iter()
            .map(|b| project_matrix(b, &p, &x))
            .collect(),
        f_terms: problem
            .f_terms
            .iter()
            .map(|f| x.tr_mul(&DVector::from_column_slice(f)))
            .collect(),
        g_terms: problem
            .g_terms
            .iter()
            .map(|g| p.tr_mul(&DVector::from_column_slice(g)))
            .collect(),
        c0: problem.c0,
        tensor,
        gram_x,
        gram_p,
        newton: NewtonOptions::reduced(),
        basis,
    })
}

/// A reduced solution: coefficients in layout order of the reduced spaces.
#[derive(Clone, Debug, PartialEq)]
pub struct ReducedSolution {
    pub mu: Vec<f64>,
    pub coefficients: DVector<f64>,
    pub cost: f64,
    pub iterations: usize,
    pub residuals: Vec<f64>,
}

fn combine_dense(theta: &[f64], terms: &[DMatrix<f64>], shape: (usize, usize)) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(shape.0, shape.1);
    for (t, m) in theta.iter().zip(terms) {
        out += m * *t;
    }
    out
}

fn combine_dense_vec(theta: &[f64], terms: &[DVector<f64>], len: usize) -> DVector<f64> {
    let mut out = DVector::zeros(len);
    for (t, v) in theta.iter().zip(terms) {
        out.axpy(*t, v, 1.0);
    }
    out
}

/// Reduced operators at one parameter value.
struct ReducedSystem {
    a: DMatrix<f64>,
    b: DMatrix<f64>,
    f: DVector<f64>,
    g: DVector<f64>,
}

/// Entries `(i, j, k)` of `t` with `i ∈ a`, `j ∈ b`, `k ∈ c`.
fn select_tensor(t: &DenseTensor3, a: &[usize], b: &[usize], c: &[usize]) -> DenseTensor3 {
    let mut data = Vec::with_capacity(a.len() * b.len() * c.len());
    for &i in a {
        for &j in b {
            for &k in c {
                data.push(t.get(i, j, k));
            }
        }
    }
    DenseTensor3::from_parts([a.len(), b.len(), c.len()], data)
        .expect("sizes match by construction")
}

fn select(m: &DMatrix<f64>, rows: &[usize], cols: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), cols.len(), |i, j| m[(rows[i], cols[j])])
}

#[derive(Serialize, Deserialize)]
struct CacheMeta {
    problem: ProblemKind,
    config: Option<ProblemConfig>,
    theta: ThetaMap,
    parameter_box: ParameterBox,
    layout: Layout,
    counts: Vec<Vec<usize>>,
    aggregated: bool,
    basis_size: usize,
    c0: f64,
    newton: NewtonOptions,
    tensor_slots: Option<[usize; 3]>,
}

fn matrix_from(a: &Archive, name: &str, rows: usize, cols: usize) -> Result<DMatrix<f64>> {
    let d = a.get_shaped(name, &[rows, cols])?;
    Ok(DMatrix::from_row_slice(rows, cols, d))
}

fn row_major(m: &DMatrix<f64>) -> Vec<f64> {
    m.transpose().as_slice().to_vec()
}

impl ReducedCache {
    /// The cache for spaces built from the first `n` modes per variable.
    /// Every reduced object is a sub-block of the stored one.
    pub fn truncate(&self, n: usize) -> Result<Self> {
        let basis = self.basis.truncate(n)?;
        let kept = self.basis.kept_indices(n);
        let c = self.basis.layout.control_index();
        let nx = self.reduced_layout().n_x();
        let xi: Vec<usize> = kept[..=c].concat();
        let pi: Vec<usize> = kept[c + 1..].concat().into_iter().map(|i| i - nx).collect();
        let local = |f: usize| -> Vec<usize> { (0..self.basis.counts[f][n]).collect() };
        let tensor = self.tensor.as_ref().map(|t| {
            let [s0, s1, a] = t.slots;
            ReducedTensor {
                tensor: select_tensor(&t.tensor, &local(s0), &local(s1), &local(a)),
                slots: t.slots,
            }
        });
        let pick = |v: &DVector<f64>, idx: &[usize]| {
            DVector::from_iterator(idx.len(), idx.iter().map(|&i| v[i]))
        };
        Ok(ReducedCache {
            kind: self.kind,
            config: self.config.clone(),
            theta: self.theta.clone(),
            parameter_box: self.parameter_box.clone(),
            basis_size: n,
            a_terms: self.a_terms.iter().map(|m| select(m, &xi, &xi)).collect(),
            b_terms: self.b_terms.iter().map(|m| select(m, &pi, &xi)).collect(),
            f_terms: self.f_terms.iter().map(|v| pick(v, &xi)).collect(),
            g_terms: self.g_terms.iter().map(|v| pick(v, &pi)).collect(),
            c0: self.c0,
            tensor,
            gram_x: select(&self.gram_x, &xi, &xi),
            gram_p: select(&self.gram_p, &pi, &pi),
            newton: self.newton.clone(),
            basis,
        })
    }

    pub fn to_archive(&self) -> Result<Archive> {
        let meta = CacheMeta {
            problem: self.kind,
            config: self.config.clone(),
            theta: self.theta.clone(),
            parameter_box: self.parameter_box.clone(),
            layout: self.basis.layout.clone(),
            counts: self.basis.counts.clone(),
            aggregated: self.basis.aggregated,
            basis_size: self.basis_size,
            c0: self.c0,
            newton: self.newton.clone(),
            tensor_slots: self.tensor.as_ref().map(|t| t.slots),
        };
        let mut a = Archive::new("cache", serde_json::to_value(&meta)?);
        for (f, b) in self.basis.blocks.iter().enumerate() {
            a.push(
                format!("basis/{f}"),
                vec![b.nrows(), b.ncols()],
                row_major(b),
            );
        }
        for (q, m) in self.a_terms.iter().enumerate() {
            a.push(format!("a/{q}"), vec![m.nrows(), m.ncols()], row_major(m));
        }
        for (q, m) in self.b_terms.iter().enumerate() {
            a.push(format!("b/{q}"), vec![m.nrows(), m.ncols()], row_major(m));
        }
        for (q, v) in self.f_terms.iter().enumerate() {
            a.push(format!("f/{q}"), vec![v.len()], v.as_slice().to_vec());
        }
        for (q, v) in self.g_terms.iter().enumerate() {
            a.push(format!("g/{q}"), vec![v.len()], v.as_slice().to_vec());
        }
        a.push(
            "gram_x",
            vec![self.gram_x.nrows(), self.gram_x.ncols()],
            row_major(&self.gram_x),
        );
        a.push(
            "gram_p",
            vec![self.gram_p.nrows(), self.gram_p.ncols()],
            row_major(&self.gram_p),
        );
        if let Some(t) = &self.tensor {
            a.push("tensor", t.tensor.dims().to_vec(), t.tensor.data().to_vec());
        }
        Ok(a)
    }

    pub fn from_archive(a: &Archive) -> Result<Self> {
        a.expect_kind("cache")?;
        let meta: CacheMeta = serde_json::from_value(a.meta.clone())
            .map_err(|e| Error::Archive(format!("bad cache manifest: {e}")))?;
        let layout = meta.layout;
        let nf = layout.fields().len();
        if meta.counts.len() != nf || meta.counts.iter().any(|c| c.len() != meta.basis_size + 1) {
            return Err(Error::Archive(
                "cache prefix counts do not match the layout".into(),
            ));
        }
        let mut blocks = Vec::with_capacity(nf);
        for (f, info) in layout.fields().iter().enumerate() {
            let cols = *meta.counts[f].last().expect("nonempty");
            blocks.push(matrix_from(a, &format!("basis/{f}"), info.dim, cols)?);
        }
        let basis = AggregatedBasis::assemble(&layout, blocks, meta.counts, meta.aggregated);
        let (rx, rp) = (basis.reduced.n_x(), basis.reduced.n_p());
        let count = |prefix: &str| a.names().filter(|n| n.starts_with(prefix)).count();
        let (qa, qb, qf, qg) = (
            meta.theta.a(&vec![0.0; meta.theta.param_dim()]).len(),
            meta.theta.b(&vec![0.0; meta.theta.param_dim()]).len(),
            count("f/"),
            count("g/"),
        );
        let mats = |p: &str, q: usize, r: usize, c: usize| -> Result<Vec<DMatrix<f64>>> {
            (0..q)
                .map(|i| matrix_from(a, &format!("{p}/{i}"), r, c))
                .collect()
        };
        let vecs = |p: &str, q: usize, len: usize| -> Result<Vec<DVector<f64>>> {
            (0..q)
                .map(|i| {
                    Ok(DVector::from_column_slice(
                        a.get_shaped(&format!("{p}/{i}"), &[len])?,
                    ))
                })
                .collect()
        };
        let tensor = match meta.tensor_slots {
            Some(slots) => {
                let dims = slots.map(|f| basis.reduced.fields()[f].dim);
                let data = a.get_shaped("tensor", &dims)?.to_vec();
                let tensor = DenseTensor3::from_parts(dims, data).expect("shape checked");
                Some(ReducedTensor { tensor, slots })
            }
            None => None,
        };
        Ok(ReducedCache {
            kind: meta.problem,
            config: meta.config,
            theta: meta.theta,
            parameter_box: meta.parameter_box,
            basis_size: meta.basis_size,
            a_terms: mats("a", qa, rx, rx)?,
            b_terms: mats("b", qb, rp, rx)?,
            f_terms: vecs("f", qf, rx)?,
            g_terms: vecs("g", qg, rp)?,
            c0: meta.c0,
            tensor,
            gram_x: matrix_from(a, "gram_x", rx, rx)?,
            gram_p: matrix_from(a, "gram_p", rp, rp)?,
            newton: meta.newton,
            basis,
        })
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        self.to_archive()?.save(path)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        Self::from_archive(&Archive::load(path)?)
    }

    /// Layout of the reduced coefficient vector.
    pub fn reduced_layout(&self) -> &Layout {
        &self.basis.reduced
    }

    pub fn is_nonlinear(&self) -> bool {
        self.tensor.is_some()
    }

    fn system(&self, mu: &[f64]) -> ReducedSystem {
        let l = self.reduced_layout();
        let (rx, rp) = (l.n_x(), l.n_p());
        ReducedSystem {
            a: combine_dense(&self.theta.a(mu), &self.a_terms, (rx, rx)),
            b: combine_dense(&self.theta.b(mu), &self.b_terms, (rp, rx)),
            f: combine_dense_vec(&self.theta.f(mu), &self.f_terms, rx),
            g: combine_dense_vec(&self.theta.g(mu), &self.g_terms, rp),
        }
    }

    /// Constraint block `B̂(μ)` of the linear part.
    pub fn constraint_block(&self, mu: &[f64]) -> DMatrix<f64> {
        self.system(mu).b
    }

    /// Linear reduced KKT matrix `[[Â, B̂ᵀ], [B̂, 0]]` at `mu`.
    pub fn kkt_matrix(&self, mu: &[f64]) -> DMatrix<f64> {
        kkt_dense(&self.system(mu).a, &self.system(mu).b)
    }

    /// `½ x̂ᵀÂx̂ − F̂ᵀx̂ + c₀`.
    pub fn cost(&self, mu: &[f64], coefficients: &DVector<f64>) -> f64 {
        let s = self.system(mu);
        let x = coefficients.rows(0, self.reduced_layout().n_x());
        0.5 * (x.transpose() * &s.a * x)[(0, 0)] - s.f.dot(&x) + self.c0
    }

    /// Gradient of the reduced Lagrangian at `coefficients`.
    pub fn residual(&self, mu: &[f64], coefficients: &DVector<f64>) -> DVector<f64> {
        let s = self.system(mu);
        let theta = self.theta.nonlinear(mu).unwrap_or(0.0);
        self.lagrangian_gradient(&s, theta, coefficients)
    }

    fn lagrangian_gradient(&self, s: &ReducedSystem, theta: f64, z: &DVector<f64>) -> DVector<f64> {
        let nx = self.reduced_layout().n_x();
        let x = z.rows(0, nx);
        let p = z.rows(nx, z.len() - nx);
        let mut r = DVector::zeros(z.len());
        r.rows_mut(0, nx)
            .copy_from(&(&s.a * x - &s.f + s.b.tr_mul(&p)));
        r.rows_mut(nx, z.len() - nx).copy_from(&(&s.b * x - &s.g));
        if let Some(t) = &self.tensor {
            let l = self.reduced_layout();
            let [s0, s1, a] = t.slots;
            let field =
                |f: usize| DVector::from_iterator(l.fields()[f].dim, l.range(f).map(|i| z[i]));
            let (psi, q, adj) = (field(s0), field(s1), field(a));
            let mut add = |f: usize, v: DVector<f64>| {
                let o = l.offset(f);
                r.rows_mut(o, v.len()).axpy(theta, &v, 1.0);
            };
            add(a, t.tensor.vector_12(&psi, &q));
            add(s0, t.tensor.vector_23(&q, &adj));
            add(s1, t.tensor.vector_13(&psi, &adj));
        }
        r
    }

    fn jacobian(&self, s: &ReducedSystem, theta: f64, z: &DVector<f64>) -> DMatrix<f64> {
        let mut k = kkt_dense(&s.a, &s.b);
        if let Some(t) = &self.tensor {
            let l = self.reduced_layout();
            let [s0, s1, a] = t.slots;
            let field =
                |f: usize| DVector::from_iterator(l.fields()[f].dim, l.range(f).map(|i| z[i]));
            let (psi, q, adj) = (field(s0), field(s1), field(a));
            let mut put = |r: usize, c: usize, m: &DMatrix<f64>| {
                let mut v = k.view_mut((l.offset(r), l.offset(c)), m.shape());
                v += m * theta;
            };
            let h = t.tensor.contract_third(&adj);
            put(s0, s1, &h);
            put(s1, s0, &h.transpose());
            let d0 = t.tensor.contract_second(&q).transpose();
            let d1 = t.tensor.contract_first(&psi).transpose();
            put(a, s0, &d0);
            put(a, s1, &d1);
            put(s0, a, &d0.transpose());
            put(s1, a, &d1.transpose());
        }
        k
    }
}

fn kkt_dense(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let (nx, np) = (a.nrows(), b.nrows());
    let mut k = DMatrix::zeros(nx + np, nx + np);
    k.view_mut((0, 0), (nx, nx)).copy_from(a);
    k.view_mut((nx, 0), (np, nx)).copy_from(b);
    k.view_mut((0, nx), (nx, np)).copy_from(&b.transpose());
    k
}

/// One dense solve of the linear reduced optimality system.
pub fn solve_reduced_linear(cache: &ReducedCache, mu: &[f64]) -> Result<ReducedSolution> {
    cache.parameter_box.check(mu)?;
    if cache.is_nonlinear() {
        return Err(Error::Usage(
            "solve_reduced_linear on a nonlinear cache".into(),
        ));
    }
    let s = cache.system(mu);
    let rhs = DVector::from_iterator(s.f.len() + s.g.len(), s.f.iter().chain(s.g.iter()).copied());
    let z = dense_solve(&kkt_dense(&s.a, &s.b), &rhs)?;
    let res = cache.lagrangian_gradient(&s, 0.0, &z).norm();
    Ok(ReducedSolution {
        mu: mu.to_vec(),
        cost: cache.cost(mu, &z),
        coefficients: z,
        iterations: 0,
        residuals: vec![res],
    })
}

/// Newton on the reduced nonlinear optimality system, started from the
/// linear reduced solve unless a guess is given.
pub fn solve_reduced_newton(
    cache: &ReducedCache,
    mu: &[f64],
    guess: Option<&DVector<f64>>,
) -> Result<ReducedSolution> {
    cache.parameter_box.check(mu)?;
    let theta = cache
        .theta
        .nonlinear(mu)
        .filter(|_| cache.is_nonlinear())
        .unwrap_or(0.0);
    let s = cache.system(mu);
    let n = cache.reduced_layout().total();
    let mut z = match guess {
        Some(g) if g.len() == n => g.clone(),
        Some(_) => {
            return Err(Error::Usage(
                "reduced guess does not match the reduced layout".into(),
            ))
        }
        None => {
            let rhs = DVector::from_iterator(n, s.f.iter().chain(s.g.iter()).copied());
            dense_solve(&kkt_dense(&s.a, &s.b), &rhs)?
        }
    };
    let opts = &cache.newton;
    let mut history = Vec::new();
    let mut iterations = 0;
    loop {
        let r = cache.lagrangian_gradient(&s, theta, &z);
        let rn = r.norm();
        history.push(rn);
        debug!("reduced Newton μ={mu:?} it={iterations} |R|={rn:.3e}");
        if !rn.is_finite() {
            return Err(Error::Solver(format!(
                "reduced Newton residual became non-finite at μ={mu:?}"
            )));
        }
        if opts.converged(rn, history[0]) {
            break;
        }
        if iterations == opts.max_iterations {
            return Err(Error::NoConvergence {
                iterations,
                residual: rn,
                history,
            });
        }
        let dz = dense_solve(&cache.jacobian(&s, theta, &z), &r)?;
        z -= dz;
        iterations += 1;
    }
    Ok(ReducedSolution {
        mu: mu.to_vec(),
        cost: cache.cost(mu, &z),
        coefficients: z,
        iterations,
        residuals: history,
    })
}

/// Solves the reduced system: one dense solve when linear, Newton otherwise.
pub fn solve_reduced(cache: &ReducedCache, mu: &[f64]) -> Result<ReducedSolution> {
    if cache.is_nonlinear() {
        solve_reduced_newton(cache, mu, None)
    } else {
        solve_reduced_linear(cache, mu)
    }
}

/// Full-order vector `z` represented by reduced coefficients.
pub fn reconstruct(basis: &AggregatedBasis, coefficients: &DVector<f64>) -> Result<Vec<f64>> {
    if coefficients.len() != basis.reduced.total() {
        return Err(Error::Usage(format!(
            "{} coefficients for a reduced space of dimension {}",
            coefficients.len(),
            basis.reduced.total()
        )));
    }
    let mut z = Vec::with_capacity(basis.layout.total());
    for (f, b) in basis.blocks.iter().enumerate() {
        let c = coefficients.rows(basis.reduced.offset(f), b.ncols());
        z.extend((b * c).iter());
    }
    Ok(z)
}

/// Per-field error `‖z_f − ẑ_f‖` in each field's norm.
pub fn rom_error(
    layout: &Layout,
    norms: &[SparseMatrix],
    truth: &[f64],
    approx: &[f64],
) -> Result<Vec<f64>> {
    if truth.len() != layout.total() || approx.len() != layout.total() {
        return Err(Error::Usage(
            "error evaluation needs two full-length vectors".into(),
        ));
    }
    Ok((0..layout.fields().len())
        .map(|f| {
            let d: Vec<f64> = layout.range(f).map(|i| truth[i] - approx[i]).collect();
            norms[f].quad_form(&d).max(0.0).sqrt()
        })
        .collect())
}

/// Per-field norms `‖z_f‖` of a full-length vector.
pub fn field_norms(layout: &Layout, norms: &[SparseMatrix], z: &[f64]) -> Vec<f64> {
    (0..layout.fields().len())
        .map(|f| norms[f].quad_form(&z[layout.range(f)]).max(0.0).sqrt())
        .collect()
}

/// `inf_p sup_x pᵀBx / (‖x‖ ‖p‖)` for a dense block with Gram matrices of
/// the two spaces. Zero when the block has more rows than columns.
pub fn infsup_constant(
    b: &DMatrix<f64>,
    gram_x: &DMatrix<f64>,
    gram_p: &DMatrix<f64>,
) -> Result<f64> {
    let (rp, rx) = b.shape();
    if gram_x.shape() != (rx, rx) || gram_p.shape() != (rp, rp) {
        return Err(Error::Dimension(format!(
            "block {rp}×{rx} with Gram matrices {:?} and {:?}",
            gram_x.shape(),
            gram_p.shape()
        )));
    }
    if rp == 0 {
        return Ok(0.0);
    }
    if rp > rx {
        return Ok(0.0);
    }
    let chol = |g: &DMatrix<f64>| {
        g.clone()
            .cholesky()
            .map(|c| c.l())
            .ok_or_else(|| Error::Solver("reduced Gram matrix is not positive definite".into()))
    };
    let (lx, lp) = (chol(gram_x)?, chol(gram_p)?);
    // M = L_p⁻¹ · B · L_x⁻ᵀ
    let left = lp
        .solve_lower_triangular(b)
        .ok_or_else(|| Error::Solver("singular Cholesky factor".into()))?;
    let m = lx
        .solve_lower_triangular(&left.transpose())
        .ok_or_else(|| Error::Solver("singular Cholesky factor".into()))?
        .transpose();
    let sv = m.singular_values();
    Ok(sv.iter().copied().fold(f64::INFINITY, f64::min))
}

/// Reduced inf-sup constant of the linear constraint block at `mu`.
pub fn reduced_infsup(cache: &ReducedCache, mu: &[f64]) -> Result<f64> {
    cache.parameter_box.check(mu)?;
    infsup_constant(&cache.constraint_block(mu), &cache.gram_x, &cache.gram_p)
}
