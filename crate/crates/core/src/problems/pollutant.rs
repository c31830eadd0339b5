use std::sync::Arc;

use super::{Layout, ParameterBox, ProblemDef, ProblemKind, ThetaMap};
use crate::error::{Error, Result};
use crate::fem::{
    assemble_advection, assemble_mass, assemble_region_load, assemble_stiffness, build_space,
    norm_matrix, NormKind, Subdomain,
};
use crate::mesh::Mesh;
use crate::sparse::{SparseMatrix, TripletBuilder};
use crate::truth::NewtonOptions;

/// Boundary label of the Dirichlet ("coast") edges.
pub const COAST: i32 = 1;
/// Region label of the pollutant source Ω_u.
pub const CONTROL_REGION: i32 = 1;
/// Region label of the monitored area Ω_OBS.
pub const OBSERVATION_REGION: i32 = 2;

#[derive(Clone, Debug, PartialEq)]
pub struct PollutantOptions {
    pub alpha: f64,
    /// Constant safety threshold y_d on Ω_OBS.
    pub y_d: f64,
    /// Nondimensionalizing constant L of the source term.
    pub scale: f64,
    pub parameter_box: ParameterBox,
}

impl Default for PollutantOptions {
    fn default() -> Self {
        PollutantOptions {
            alpha: 1e-2,
            y_d: 0.2,
            scale: 1e3,
            parameter_box: ParameterBox {
                bounds: vec![[0.5, 1.0], [-1.0, 1.0], [-1.0, 1.0]],
            },
        }
    }
}

/// Advection-diffusion pollutant control with a scalar source intensity.
///
/// Unknowns `(y, u, p)`; constraint
/// `μ₁ K y + μ₂ D₁ y + μ₃ D₂ y − L g u = 0` with `g = ∫_{Ω_u} φ`.
pub fn make_pollutant_problem(mesh: Arc<Mesh>, opts: &PollutantOptions) -> Result<ProblemDef> {
    if opts.parameter_box.dim() != 3 {
        return Err(Error::Config(
            "the pollutant problem takes three parameters".into(),
        ));
    }
    if !mesh.has_boundary_label(COAST) {
        return Err(Error::Config(format!(
            "mesh has no coast boundary label {COAST}"
        )));
    }
    for label in [CONTROL_REGION, OBSERVATION_REGION] {
        if !mesh.has_region(label) || mesh.region_area(label)? <= 0.0 {
            return Err(Error::Config(format!(
                "mesh has no region with label {label}"
            )));
        }
    }
    let space = build_space(mesh.clone(), &[COAST])?;
    let n = space.dim();
    let layout = Layout::new(&[("y", n)], ("u", 1), &[("p", n)], true);
    let control_area = mesh.region_area(CONTROL_REGION)?;
    let obs_area = mesh.region_area(OBSERVATION_REGION)?;

    let m_obs = assemble_mass(&space, Subdomain::Label(OBSERVATION_REGION))?;
    let mut a = TripletBuilder::new(n + 1, n + 1);
    a.push_block(&m_obs, 0, 0, 1.0);
    a.push(n, n, opts.alpha * control_area);

    let state_term = |m: &SparseMatrix| {
        let mut b = TripletBuilder::new(n, n + 1);
        b.push_block(m, 0, 0, 1.0);
        b.build()
    };
    let g = assemble_region_load(&space, Subdomain::Label(CONTROL_REGION))?;
    let mut source = TripletBuilder::new(n, n + 1);
    for (i, v) in g.iter().enumerate() {
        if *v != 0.0 {
            source.push(i, n, *v);
        }
    }
    let b_terms = vec![
        state_term(&assemble_stiffness(&space)),
        state_term(&assemble_advection(&space, 1)?),
        state_term(&assemble_advection(&space, 2)?),
        source.build(),
    ];

    let obs_load = assemble_region_load(&space, Subdomain::Label(OBSERVATION_REGION))?;
    let mut f = vec![0.0; n + 1];
    for (fi, l) in f.iter_mut().zip(&obs_load) {
        *fi = opts.y_d * l;
    }

    let h1 = norm_matrix(&space, NormKind::H1Seminorm);
    Ok(ProblemDef {
        kind: ProblemKind::Pollutant,
        target: space.interpolate(|_| opts.y_d),
        mesh,
        control_space: None,
        layout,
        a_terms: vec![a.build()],
        b_terms,
        f_terms: vec![f],
        g_terms: Vec::new(),
        c0: 0.5 * opts.y_d * opts.y_d * obs_area,
        trilinear: None,
        theta: ThetaMap::Pollutant { scale: opts.scale },
        parameter_box: opts.parameter_box.clone(),
        norms: vec![h1.clone(), SparseMatrix::identity(1), h1],
        alpha: opts.alpha,
        newton: NewtonOptions::default(),
        state_space: space,
    })
}
