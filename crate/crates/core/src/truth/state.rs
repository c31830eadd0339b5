use super::{affine_blocks, constraint_jacobian};
use crate::error::{Error, Result};
use crate::problems::ProblemDef;
use crate::sparse::{dot, norm, SparseLu, SparseMatrix, TripletBuilder};

#[derive(Clone, Debug)]
pub struct StateSolution {
    /// State fields, layout order, concatenated (length `n_y`).
    pub y: Vec<f64>,
    pub iterations: usize,
    pub residuals: Vec<f64>,
}

fn columns(m: &SparseMatrix, cols: std::ops::Range<usize>) -> SparseMatrix {
    let mut t = TripletBuilder::new(m.nrows(), cols.len());
    for (i, j, v) in m.iter().filter(|(_, j, _)| cols.contains(j)) {
        t.push(i, j - cols.start, v);
    }
    t.build()
}

/// Solves the state equation `c(y, u; μ) = 0` for a fixed control.
///
/// No parameter-box check: the desired profiles are generated outside the
/// optimization box.
pub fn solve_state(
    problem: &ProblemDef,
    mu: &[f64],
    control: &[f64],
    guess: Option<&[f64]>,
) -> Result<StateSolution> {
    let l = &problem.layout;
    let (ny, nx) = (l.n_y(), l.n_x());
    if control.len() != nx - ny || mu.len() != problem.theta.param_dim() {
        return Err(Error::Usage(format!(
            "state solve expects {} control entries and {} parameters",
            nx - ny,
            problem.theta.param_dim()
        )));
    }
    let sys = affine_blocks(problem, mu)?;
    let theta = problem
        .theta
        .nonlinear(mu)
        .filter(|_| problem.is_nonlinear());
    let mut z = vec![0.0; l.total()];
    z[ny..nx].copy_from_slice(control);

    let residual = |z: &[f64]| -> Vec<f64> {
        let mut c = sys.b.mul_vec(&z[..nx]);
        c.iter_mut().zip(&sys.g).for_each(|(ci, gi)| *ci -= gi);
        if let Some(th) = theta {
            let (_, np) = super::nonlinear_terms(problem, th, z);
            c.iter_mut().zip(&np).for_each(|(ci, n)| *ci += n);
        }
        c
    };

    let by = columns(&sys.b, 0..ny);
    match (guess, theta) {
        (Some(g), _) if g.len() == ny => z[..ny].copy_from_slice(g),
        (Some(_), _) => return Err(Error::Usage("state guess has the wrong length".into())),
        (None, _) => {
            let r = residual(&z);
            let dy = SparseLu::factor(&by)?.solve(&r)?;
            z[..ny].iter_mut().zip(&dy).for_each(|(zi, d)| *zi = -d);
        }
    }
    let Some(th) = theta else {
        let r = norm(&residual(&z));
        return Ok(StateSolution {
            y: z[..ny].to_vec(),
            iterations: 0,
            residuals: vec![r],
        });
    };
    let opts = &problem.newton;
    let mut history = Vec::new();
    let mut iterations = 0;
    loop {
        let r = residual(&z);
        let rn = norm(&r);
        history.push(rn);
        if !rn.is_finite() {
            return Err(Error::Solver(
                "state Newton residual became non-finite".into(),
            ));
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
        let jac = columns(&constraint_jacobian(problem, &sys.b, th, &z), 0..ny);
        let dy = SparseLu::factor(&jac)?.solve(&r)?;
        z[..ny].iter_mut().zip(&dy).for_each(|(zi, d)| *zi -= d);
        iterations += 1;
    }
    Ok(StateSolution {
        y: z[..ny].to_vec(),
        iterations,
        residuals: history,
    })
}

/// Reduced cost `ĵ(u) = J(y(u), u)` and its adjoint-based gradient.
///
/// The adjoint solves `(∂c/∂y)ᵀ p = −∂J/∂y`; then
/// `∇ĵ = ∂J/∂u + (∂c/∂u)ᵀ p`.
pub fn reduced_gradient(
    problem: &ProblemDef,
    mu: &[f64],
    control: &[f64],
) -> Result<(f64, Vec<f64>)> {
    let l = &problem.layout;
    let (ny, nx) = (l.n_y(), l.n_x());
    let state = solve_state(problem, mu, control, None)?;
    let sys = affine_blocks(problem, mu)?;
    let theta = problem.theta.nonlinear(mu).unwrap_or(0.0);
    let mut z = vec![0.0; l.total()];
    z[..ny].copy_from_slice(&state.y);
    z[ny..nx].copy_from_slice(control);
    let x = &z[..nx];
    let dj: Vec<f64> = sys
        .a
        .mul_vec(x)
        .iter()
        .zip(&sys.f)
        .map(|(a, f)| a - f)
        .collect();
    let jc = constraint_jacobian(problem, &sys.b, theta, &z);
    let jy_t = columns(&jc, 0..ny).transpose();
    let rhs: Vec<f64> = dj[..ny].iter().map(|v| -v).collect();
    let p = SparseLu::factor(&jy_t)?.solve(&rhs)?;
    let ju_t_p = columns(&jc, ny..nx).transpose_mul_vec(&p);
    let grad = dj[ny..].iter().zip(&ju_t_p).map(|(a, b)| a + b).collect();
    let cost = 0.5 * sys.a.quad_form(x) - dot(&sys.f, x) + sys.c0;
    Ok((cost, grad))
}
