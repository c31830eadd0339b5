//! Full-order optimality systems: assembly of the saddle-point KKT matrix,
//! the one-shot linear solve, Newton for the quadratically nonlinear case,
//! cost and residual evaluation.
//!
//! Every block is an exact derivative of the discrete Lagrangian
//! `L(x, p) = ½ xᵀA x − Fᵀx + c₀ + pᵀ(B x + θ_nl N(x) − G)`, so the linear
//! KKT matrix `[[A, Bᵀ], [B, 0]]` is symmetric by construction.

mod state;

use log::debug;
use serde::{Deserialize, Serialize};

pub use state::{reduced_gradient, solve_state, StateSolution};

use crate::error::{Error, Result};
use crate::problems::{combine_vectors, Layout, ProblemDef};
use crate::sparse::{dot, norm, SparseLu, SparseMatrix, TripletBuilder};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NewtonOptions {
    pub max_iterations: usize,
    /// Stop when the residual norm falls below this value…
    pub abs_tol: f64,
    /// …or below this fraction of the initial residual norm.
    pub rel_tol: f64,
}

impl Default for NewtonOptions {
    fn default() -> Self {
        NewtonOptions {
            max_iterations: 20,
            abs_tol: 1e-8,
            rel_tol: 1e-10,
        }
    }
}

impl NewtonOptions {
    pub fn reduced() -> Self {
        NewtonOptions {
            max_iterations: 20,
            abs_tol: 1e-10,
            rel_tol: 1e-12,
        }
    }

    pub(crate) fn converged(&self, r: f64, r0: f64) -> bool {
        r <= self.abs_tol || r <= self.rel_tol * r0
    }
}

/// Truth operators at one parameter value.
#[derive(Clone, Debug)]
pub struct BlockSystem {
    pub layout: Layout,
    pub mu: Vec<f64>,
    /// `n_x × n_x`, symmetric.
    pub a: SparseMatrix,
    /// `n_p × n_x` constraint block.
    pub b: SparseMatrix,
    pub f: Vec<f64>,
    pub g: Vec<f64>,
    pub c0: f64,
}

impl BlockSystem {
    pub fn kkt_matrix(&self) -> SparseMatrix {
        kkt_from_blocks(&self.a, &self.b)
    }

    pub fn rhs(&self) -> Vec<f64> {
        self.f.iter().chain(&self.g).copied().collect()
    }

    /// `½ xᵀA x − Fᵀx + c₀`.
    pub fn cost(&self, x: &[f64]) -> f64 {
        0.5 * self.a.quad_form(x) - dot(&self.f, x) + self.c0
    }
}

fn kkt_from_blocks(a: &SparseMatrix, b: &SparseMatrix) -> SparseMatrix {
    let nx = a.nrows();
    let n = nx + b.nrows();
    let mut t = TripletBuilder::with_capacity(n, n, a.nnz() + 2 * b.nnz());
    t.push_block(a, 0, 0, 1.0);
    t.push_block(b, nx, 0, 1.0);
    t.push_block_transposed(b, 0, nx, 1.0);
    t.build()
}

/// A truth solution with its parameter and solver history.
#[derive(Clone, Debug, PartialEq)]
pub struct OcpSolution {
    pub layout: Layout,
    pub mu: Vec<f64>,
    /// `z = [x; p]` in layout order.
    pub values: Vec<f64>,
    pub cost: f64,
    /// Newton updates taken (0 for a one-shot solve).
    pub iterations: usize,
    /// Residual norm before each Newton update and after the last one; a
    /// single entry for a one-shot solve.
    pub residuals: Vec<f64>,
}

impl OcpSolution {
    pub fn field(&self, i: usize) -> &[f64] {
        &self.values[self.layout.range(i)]
    }

    pub fn field_by_name(&self, name: &str) -> Option<&[f64]> {
        self.layout.index_of(name).map(|i| self.field(i))
    }

    pub fn x(&self) -> &[f64] {
        &self.values[..self.layout.n_x()]
    }

    pub fn p(&self) -> &[f64] {
        &self.values[self.layout.n_x()..]
    }
}

fn affine_blocks(problem: &ProblemDef, mu: &[f64]) -> Result<BlockSystem> {
    let th = &problem.theta;
    let combine = |theta: Vec<f64>, terms: &[SparseMatrix]| {
        let pairs: Vec<(f64, &SparseMatrix)> = theta.into_iter().zip(terms).collect();
        SparseMatrix::linear_combination(&pairs)
    };
    let l = &problem.layout;
    Ok(BlockSystem {
        layout: l.clone(),
        mu: mu.to_vec(),
        a: combine(th.a(mu), &problem.a_terms)?,
        b: combine(th.b(mu), &problem.b_terms)?,
        f: combine_vectors(&th.f(mu), &problem.f_terms, l.n_x()),
        g: combine_vectors(&th.g(mu), &problem.g_terms, l.n_p()),
        c0: problem.c0,
    })
}

/// Θ-weighted sum of the cached affine terms at `mu`.
pub fn assemble_kkt_linear(problem: &ProblemDef, mu: &[f64]) -> Result<BlockSystem> {
    if problem.is_nonlinear() {
        return Err(Error::Usage(
            "assemble_kkt_linear called on a nonlinear problem; use solve_truth_nonlinear".into(),
        ));
    }
    problem.check_mu(mu)?;
    affine_blocks(problem, mu)
}

/// Direct sparse LU solve of the saddle-point system.
pub fn solve_one_shot(system: &BlockSystem) -> Result<OcpSolution> {
    let k = system.kkt_matrix();
    let rhs = system.rhs();
    let lu = SparseLu::factor(&k)?;
    let mut z = lu.solve(&rhs)?;
    let scale = norm(&rhs).max(f64::MIN_POSITIVE);
    let mut r = residual_of(&k, &z, &rhs);
    if norm(&r) > 1e-12 * scale {
        // One step of iterative refinement with the same factors.
        let dz = lu.solve(&r)?;
        z.iter_mut().zip(&dz).for_each(|(zi, d)| *zi -= d);
        r = residual_of(&k, &z, &rhs);
    }
    let rel = norm(&r) / scale;
    let x = &z[..system.layout.n_x()];
    Ok(OcpSolution {
        layout: system.layout.clone(),
        mu: system.mu.clone(),
        cost: system.cost(x),
        values: z,
        iterations: 0,
        residuals: vec![rel],
    })
}

fn residual_of(k: &SparseMatrix, z: &[f64], rhs: &[f64]) -> Vec<f64> {
    k.mul_vec(z).iter().zip(rhs).map(|(a, b)| a - b).collect()
}

/// `J = ½ xᵀA x − Fᵀx + c₀`, which equals
/// `½ ‖y − y_d‖²_obs + (α/2) ‖u‖²_n` for every built-in problem.
pub fn evaluate_cost(problem: &ProblemDef, sol: &OcpSolution) -> Result<f64> {
    if sol.values.len() != problem.layout.total() {
        return Err(Error::Usage(format!(
            "solution has {} entries, problem expects {}",
            sol.values.len(),
            problem.layout.total()
        )));
    }
    let sys = affine_blocks(problem, &sol.mu)?;
    Ok(sys.cost(sol.x()))
}

/// Nonlinear contributions at `z`: the x-gradient of `θ pᵀN(x)` and `θ N(x)`.
fn nonlinear_terms(problem: &ProblemDef, theta: f64, z: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let l = &problem.layout;
    let (mut gx, mut np) = (vec![0.0; l.n_x()], vec![0.0; l.n_p()]);
    if let Some(term) = &problem.trilinear {
        let [s0, s1, a] = term.slots;
        let (psi, q, t) = (&z[l.range(s0)], &z[l.range(s1)], &z[l.range(a)]);
        let nx = l.n_x();
        add_at(
            &mut np,
            l.offset(a) - nx,
            &term.form.vector_12(psi, q),
            theta,
        );
        add_at(&mut gx, l.offset(s0), &term.form.vector_23(q, t), theta);
        add_at(&mut gx, l.offset(s1), &term.form.vector_13(psi, t), theta);
    }
    (gx, np)
}

fn add_at(out: &mut [f64], offset: usize, v: &[f64], scale: f64) {
    for (o, x) in out[offset..offset + v.len()].iter_mut().zip(v) {
        *o += scale * x;
    }
}

/// Gradient of the Lagrangian `[∂L/∂x; ∂L/∂p]` at `z`.
pub(crate) fn lagrangian_gradient(
    problem: &ProblemDef,
    sys: &BlockSystem,
    theta_nl: f64,
    z: &[f64],
) -> Vec<f64> {
    let nx = sys.layout.n_x();
    let (x, p) = z.split_at(nx);
    let (gx, np) = nonlinear_terms(problem, theta_nl, z);
    let ax = sys.a.mul_vec(x);
    let btp = sys.b.transpose_mul_vec(p);
    let bx = sys.b.mul_vec(x);
    let rx = (0..nx).map(|i| ax[i] - sys.f[i] + btp[i] + gx[i]);
    let rp = (0..sys.layout.n_p()).map(|i| bx[i] - sys.g[i] + np[i]);
    rx.chain(rp).collect()
}

/// Constraint Jacobian `∂c/∂x = B + θ ∂N/∂x` (`n_p × n_x`).
pub(crate) fn constraint_jacobian(
    problem: &ProblemDef,
    b: &SparseMatrix,
    theta_nl: f64,
    z: &[f64],
) -> SparseMatrix {
    let Some(term) = &problem.trilinear else {
        return b.clone();
    };
    let l = &problem.layout;
    let [s0, s1, a] = term.slots;
    let (psi, q) = (&z[l.range(s0)], &z[l.range(s1)]);
    let row = l.offset(a) - l.n_x();
    let mut t = TripletBuilder::new(l.n_p(), l.n_x());
    t.push_block(b, 0, 0, 1.0);
    t.push_block_transposed(&term.form.contract_second(q), row, l.offset(s0), theta_nl);
    t.push_block_transposed(&term.form.contract_first(psi), row, l.offset(s1), theta_nl);
    t.build()
}

/// Hessian of the Lagrangian in x: `A + θ ∂²(pᵀN)/∂x²`.
fn lagrangian_hessian(
    problem: &ProblemDef,
    a: &SparseMatrix,
    theta_nl: f64,
    z: &[f64],
) -> SparseMatrix {
    let Some(term) = &problem.trilinear else {
        return a.clone();
    };
    let l = &problem.layout;
    let [s0, s1, adj] = term.slots;
    let h = term.form.contract_third(&z[l.range(adj)]);
    let mut t = TripletBuilder::new(l.n_x(), l.n_x());
    t.push_block(a, 0, 0, 1.0);
    t.push_block(&h, l.offset(s0), l.offset(s1), theta_nl);
    t.push_block_transposed(&h, l.offset(s1), l.offset(s0), theta_nl);
    t.build()
}

/// Newton matrix of the full KKT system at `z` (symmetric).
pub(crate) fn kkt_jacobian(
    problem: &ProblemDef,
    sys: &BlockSystem,
    theta_nl: f64,
    z: &[f64],
) -> SparseMatrix {
    kkt_from_blocks(
        &lagrangian_hessian(problem, &sys.a, theta_nl, z),
        &constraint_jacobian(problem, &sys.b, theta_nl, z),
    )
}

/// Euclidean norm of all three stationarity blocks.
pub fn kkt_residual(problem: &ProblemDef, mu: &[f64], sol: &OcpSolution) -> Result<f64> {
    if sol.values.len() != problem.layout.total() {
        return Err(Error::Usage(format!(
            "solution has {} entries, problem expects {}",
            sol.values.len(),
            problem.layout.total()
        )));
    }
    let sys = affine_blocks(problem, mu)?;
    let theta = problem.theta.nonlinear(mu).unwrap_or(0.0);
    Ok(norm(&lagrangian_gradient(
        problem,
        &sys,
        theta,
        &sol.values,
    )))
}

/// Solves the optimality system at `mu`: one-shot for linear problems,
/// Newton otherwise.
pub fn solve_truth(problem: &ProblemDef, mu: &[f64]) -> Result<OcpSolution> {
    if problem.is_nonlinear() {
        solve_truth_nonlinear(problem, mu, None)
    } else {
        solve_one_shot(&assemble_kkt_linear(problem, mu)?)
    }
}

/// Plain Newton on the nonlinear KKT system.
///
/// The default initial guess is the linear solve with the nonlinear term
/// switched off.
pub fn solve_truth_nonlinear(
    problem: &ProblemDef,
    mu: &[f64],
    guess: Option<&OcpSolution>,
) -> Result<OcpSolution> {
    let Some(theta) = problem
        .theta
        .nonlinear(mu)
        .filter(|_| problem.is_nonlinear())
    else {
        return Err(Error::Usage(
            "solve_truth_nonlinear needs a problem with a trilinear term".into(),
        ));
    };
    problem.check_mu(mu)?;
    let sys = affine_blocks(problem, mu)?;
    let mut z = match guess {
        Some(g) if g.values.len() == problem.layout.total() => g.values.clone(),
        Some(_) => {
            return Err(Error::Usage(
                "initial guess does not match the problem layout".into(),
            ))
        }
        None => solve_one_shot(&sys)?.values,
    };
    let opts = &problem.newton;
    let mut history = Vec::new();
    let mut iterations = 0;
    loop {
        let r = lagrangian_gradient(problem, &sys, theta, &z);
        let rn = norm(&r);
        history.push(rn);
        debug!("truth Newton μ={mu:?} it={iterations} |R|={rn:.3e}");
        if !rn.is_finite() {
            return Err(Error::Solver(format!(
                "Newton residual became non-finite at μ={mu:?}"
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
        let jac = kkt_jacobian(problem, &sys, theta, &z);
        let dz = SparseLu::factor(&jac)?.solve(&r)?;
        z.iter_mut().zip(&dz).for_each(|(zi, d)| *zi -= d);
        iterations += 1;
    }
    Ok(OcpSolution {
        layout: problem.layout.clone(),
        mu: mu.to_vec(),
        cost: sys.cost(&z[..problem.layout.n_x()]),
        values: z,
        iterations,
        residuals: history,
    })
}
