use std::collections::BTreeSet;
use std::f64::consts::PI;
use std::sync::Arc;

use super::{Layout, ParameterBox, ProblemDef, ProblemKind, ThetaMap, TrilinearTerm};
use crate::error::{Error, Result};
use crate::fem::{
    assemble_advection, assemble_mass, assemble_mixed_mass, assemble_stiffness, assemble_trilinear,
    build_space, Subdomain,
};
use crate::mesh::Mesh;
use crate::sparse::TripletBuilder;
use crate::truth::{solve_state, NewtonOptions};

/// Desired stream function ψ_d.
#[derive(Clone, Debug, PartialEq)]
pub enum QgTarget {
    /// Interpolant of a constant (zero gives the homogeneous problem).
    Constant(f64),
    /// State solve with wind forcing `f = −sin(πy)` at the given parameters.
    Forcing(Vec<f64>),
}

#[derive(Clone, Debug, PartialEq)]
pub struct QgOptions {
    pub alpha: f64,
    pub target: QgTarget,
    pub parameter_box: ParameterBox,
    pub newton: NewtonOptions,
}

impl QgOptions {
    pub fn linear() -> Self {
        QgOptions {
            alpha: 1e-5,
            target: QgTarget::Forcing(vec![1e-4, 0.07f64.powi(3)]),
            parameter_box: ParameterBox {
                bounds: vec![[1e-4, 1.0], [1e-4, 1.0]],
            },
            newton: NewtonOptions::default(),
        }
    }

    pub fn nonlinear() -> Self {
        QgOptions {
            alpha: 1e-5,
            target: QgTarget::Forcing(vec![1e-4, 0.07f64.powi(3), 0.07f64.powi(2)]),
            parameter_box: ParameterBox {
                bounds: vec![
                    [0.07f64.powi(3), 1.0],
                    [1e-4, 1.0],
                    [1e-4, 0.045f64.powi(2)],
                ],
            },
            newton: NewtonOptions::default(),
        }
    }
}

/// Wind forcing of the reference configuration.
pub fn wind_forcing(p: [f64; 2]) -> f64 {
    -(PI * p[1]).sin()
}

/// Linear quasi-geostrophic tracking in mixed `(ψ, q)` form.
///
/// Unknowns `(ψ, q, u, χ, t)` with ψ, q, χ, t in H¹₀ and u in L² (all
/// vertices). Constraint rows:
/// `χ: ∫∇ψ·∇φ + ∫qφ`, `t: ∫∂ₓψ r + μ₂∫∇q·∇r + μ₁∫qr − ∫ur`.
pub fn make_qg_linear_problem(mesh: Arc<Mesh>, opts: &QgOptions) -> Result<ProblemDef> {
    if opts.parameter_box.dim() != 2 {
        return Err(Error::Config(
            "the linear quasi-geostrophic problem takes two parameters".into(),
        ));
    }
    build(mesh, opts, false)
}

/// Nonlinear variant with `−μ₃ ∫ ψ (∂_y q ∂ₓ r − ∂ₓ q ∂_y r)` in the t rows.
pub fn make_qg_nonlinear_problem(mesh: Arc<Mesh>, opts: &QgOptions) -> Result<ProblemDef> {
    if opts.parameter_box.dim() != 3 {
        return Err(Error::Config(
            "the nonlinear quasi-geostrophic problem takes three parameters".into(),
        ));
    }
    build(mesh, opts, true)
}

fn build(mesh: Arc<Mesh>, opts: &QgOptions, nonlinear: bool) -> Result<ProblemDef> {
    let labels: Vec<i32> = mesh
        .boundary_edges()
        .iter()
        .map(|e| e.label)
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let s = build_space(mesh.clone(), &labels)?;
    let u = build_space(mesh.clone(), &[])?;
    let (n, m) = (s.dim(), u.dim());
    if n == 0 {
        return Err(Error::Config("mesh has no interior vertices".into()));
    }
    let layout = Layout::new(
        &[("psi", n), ("q", n)],
        ("u", m),
        &[("chi", n), ("t", n)],
        false,
    );
    let (nx, np) = (layout.n_x(), layout.n_p());

    let k = assemble_stiffness(&s);
    let mass = assemble_mass(&s, Subdomain::Whole)?;
    let dx = assemble_advection(&s, 1)?;
    let coupling = assemble_mixed_mass(&s, &u, Subdomain::Whole)?;
    let mass_u = assemble_mass(&u, Subdomain::Whole)?;

    let mut a = TripletBuilder::new(nx, nx);
    a.push_block(&mass, 0, 0, 1.0);
    a.push_block(&mass_u, 2 * n, 2 * n, opts.alpha);

    let mut b1 = TripletBuilder::new(np, nx);
    b1.push_block(&mass, n, n, 1.0);
    let mut b2 = TripletBuilder::new(np, nx);
    b2.push_block(&k, n, n, 1.0);
    let mut b3 = TripletBuilder::new(np, nx);
    b3.push_block(&k, 0, 0, 1.0);
    b3.push_block(&mass, 0, n, 1.0);
    b3.push_block(&dx, n, 0, 1.0);
    b3.push_block(&coupling, n, 2 * n, -1.0);

    let trilinear = nonlinear.then(|| TrilinearTerm {
        form: assemble_trilinear(&s),
        slots: [0, 1, layout.adjoint_index(1)],
    });

    let mut problem = ProblemDef {
        kind: if nonlinear {
            ProblemKind::QgNonlinear
        } else {
            ProblemKind::QgLinear
        },
        mesh,
        layout,
        a_terms: vec![a.build()],
        b_terms: vec![b1.build(), b2.build(), b3.build()],
        f_terms: vec![vec![0.0; nx]],
        g_terms: Vec::new(),
        c0: 0.0,
        trilinear,
        theta: if nonlinear {
            ThetaMap::QgNonlinear
        } else {
            ThetaMap::QgLinear
        },
        parameter_box: opts.parameter_box.clone(),
        norms: vec![k.clone(), k.clone(), mass_u, k.clone(), k],
        target: vec![0.0; n],
        alpha: opts.alpha,
        newton: opts.newton.clone(),
        state_space: s,
        control_space: Some(u),
    };

    let psi_d = match &opts.target {
        QgTarget::Constant(c) => problem.state_space.interpolate(|_| *c),
        QgTarget::Forcing(mu) => desired_state(&problem, mu)?,
    };
    let m_psi = mass.mul_vec(&psi_d);
    problem.c0 = 0.5 * crate::sparse::dot(&psi_d, &m_psi);
    problem.f_terms[0][..n].copy_from_slice(&m_psi);
    problem.target = psi_d;
    Ok(problem)
}

/// ψ of the state equation driven by the wind forcing at `mu`.
///
/// The nonlinear solve falls back to continuation in μ₃ when plain Newton
/// from the linear state fails.
fn desired_state(problem: &ProblemDef, mu: &[f64]) -> Result<Vec<f64>> {
    if mu.len() != problem.theta.param_dim() {
        return Err(Error::Config(format!(
            "target parameters {mu:?} need {} components",
            problem.theta.param_dim()
        )));
    }
    let forcing = problem
        .control_space
        .as_ref()
        .expect("field control")
        .interpolate(wind_forcing);
    let n = problem.state_space.dim();
    let state = match solve_state(problem, mu, &forcing, None) {
        Ok(s) => s.y,
        Err(Error::NoConvergence { .. } | Error::Solver(_)) if problem.is_nonlinear() => {
            let mut y: Option<Vec<f64>> = None;
            let steps = 8;
            for s in 1..=steps {
                let mut m = mu.to_vec();
                m[2] = mu[2] * s as f64 / steps as f64;
                y = Some(solve_state(problem, &m, &forcing, y.as_deref())?.y);
            }
            y.unwrap()
        }
        Err(e) => return Err(e),
    };
    Ok(state[..n].to_vec())
}
