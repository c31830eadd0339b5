//! Built-in parametrized optimal control problems.
//!
//! A [`ProblemDef`] carries everything the truth and reduced solvers need:
//! μ-independent operators for each affine term, the θ map that weights them,
//! the unknown layout and the parameter box. The cost functional is always
//! `J(x) = ½ xᵀA x − Fᵀx + c₀` and the constraint `B(μ) x (+ θ_nl T) = G`.

mod config;
mod pollutant;
mod qg;
mod sampling;

use std::ops::Range;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

pub use config::{load_config, MeshSource, ProblemConfig, TargetSpec};
pub use pollutant::{make_pollutant_problem, PollutantOptions};
pub use qg::{make_qg_linear_problem, make_qg_nonlinear_problem, QgOptions};
pub use sampling::{balanced_factorization, sample_parameters, Distribution, SamplingPlan};

use crate::error::{Error, Result};
use crate::fem::{FeSpace, ThirdOrderForm};
use crate::mesh::Mesh;
use crate::sparse::SparseMatrix;
use crate::truth::NewtonOptions;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProblemKind {
    Pollutant,
    QgLinear,
    QgNonlinear,
}

impl ProblemKind {
    pub fn id(self) -> &'static str {
        match self {
            ProblemKind::Pollutant => "pollutant",
            ProblemKind::QgLinear => "qg-linear",
            ProblemKind::QgNonlinear => "qg-nonlinear",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    State,
    Control,
    Adjoint,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FieldInfo {
    pub name: String,
    pub role: Role,
    pub dim: usize,
}

/// Unknown ordering `z = [states…, control, adjoints…]`; `x` is everything up
/// to and including the control, `p` the adjoints. Adjoint `i` is paired
/// with state `i`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Layout {
    fields: Vec<FieldInfo>,
    /// True when the control is a single real number rather than a field.
    pub scalar_control: bool,
}

impl Layout {
    pub fn new(
        states: &[(&str, usize)],
        control: (&str, usize),
        adjoints: &[(&str, usize)],
        scalar_control: bool,
    ) -> Self {
        assert_eq!(states.len(), adjoints.len(), "every state needs an adjoint");
        let mk = |(name, dim): (&str, usize), role| FieldInfo {
            name: name.to_string(),
            role,
            dim,
        };
        let fields = states
            .iter()
            .map(|s| mk(*s, Role::State))
            .chain(std::iter::once(mk(control, Role::Control)))
            .chain(adjoints.iter().map(|a| mk(*a, Role::Adjoint)))
            .collect();
        Layout {
            fields,
            scalar_control,
        }
    }

    pub fn fields(&self) -> &[FieldInfo] {
        &self.fields
    }

    pub fn num_states(&self) -> usize {
        (self.fields.len() - 1) / 2
    }

    pub fn control_index(&self) -> usize {
        self.num_states()
    }

    pub fn adjoint_index(&self, state: usize) -> usize {
        self.num_states() + 1 + state
    }

    pub fn offset(&self, field: usize) -> usize {
        self.fields[..field].iter().map(|f| f.dim).sum()
    }

    pub fn range(&self, field: usize) -> Range<usize> {
        let o = self.offset(field);
        o..o + self.fields[field].dim
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.fields.iter().position(|f| f.name == name)
    }

    /// Dimension of `x = (states, control)`.
    pub fn n_x(&self) -> usize {
        self.offset(self.control_index() + 1)
    }

    /// Dimension of the adjoint block `p`.
    pub fn n_p(&self) -> usize {
        self.total() - self.n_x()
    }

    /// Dimension of the state part of `x`.
    pub fn n_y(&self) -> usize {
        self.offset(self.control_index())
    }

    pub fn total(&self) -> usize {
        self.fields.iter().map(|f| f.dim).sum()
    }

    pub fn split<'a>(&self, z: &'a [f64]) -> Vec<&'a [f64]> {
        assert_eq!(z.len(), self.total(), "vector does not match the layout");
        (0..self.fields.len()).map(|i| &z[self.range(i)]).collect()
    }
}

/// Closed parameter box `P = Π [lo_i, hi_i]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParameterBox {
    pub bounds: Vec<[f64; 2]>,
}

impl ParameterBox {
    pub fn new(bounds: Vec<[f64; 2]>) -> Result<Self> {
        if bounds.is_empty()
            || bounds
                .iter()
                .any(|[lo, hi]| !(lo <= hi) || !lo.is_finite() || !hi.is_finite())
        {
            return Err(Error::Config(format!("invalid parameter box {bounds:?}")));
        }
        Ok(ParameterBox { bounds })
    }

    pub fn dim(&self) -> usize {
        self.bounds.len()
    }

    pub fn contains(&self, mu: &[f64]) -> bool {
        mu.len() == self.dim()
            && mu
                .iter()
                .zip(&self.bounds)
                .all(|(m, [lo, hi])| *lo <= *m && *m <= *hi)
    }

    pub fn check(&self, mu: &[f64]) -> Result<()> {
        if mu.len() != self.dim() {
            return Err(Error::Domain(format!(
                "{mu:?} (expected {} components)",
                self.dim()
            )));
        }
        if !self.contains(mu) {
            return Err(Error::Domain(format!("{mu:?} not in {:?}", self.bounds)));
        }
        Ok(())
    }

    /// Nearest point of the box.
    pub fn clamp(&self, mu: &[f64]) -> Vec<f64> {
        mu.iter()
            .zip(&self.bounds)
            .map(|(m, [lo, hi])| m.clamp(*lo, *hi))
            .collect()
    }
}

/// θ-coefficient functions of the affine expansion.
///
/// This is the only place that knows what the components of μ mean; the
/// reduced cache stores a copy and evaluates it blindly.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ThetaMap {
    /// `Θ_B = (μ₁, μ₂, μ₃, −L)`.
    Pollutant { scale: f64 },
    /// `Θ_B = (μ₁, μ₂, 1)`.
    QgLinear,
    /// `Θ_B = (μ₁, μ₂, 1)`, `Θ_nl = −μ₃`.
    QgNonlinear,
}

impl ThetaMap {
    pub fn a(&self, _mu: &[f64]) -> Vec<f64> {
        vec![1.0]
    }

    pub fn b(&self, mu: &[f64]) -> Vec<f64> {
        match self {
            ThetaMap::Pollutant { scale } => vec![mu[0], mu[1], mu[2], -scale],
            ThetaMap::QgLinear | ThetaMap::QgNonlinear => vec![mu[0], mu[1], 1.0],
        }
    }

    pub fn f(&self, _mu: &[f64]) -> Vec<f64> {
        vec![1.0]
    }

    /// G ≡ 0 for every built-in problem.
    pub fn g(&self, _mu: &[f64]) -> Vec<f64> {
        Vec::new()
    }

    pub fn nonlinear(&self, mu: &[f64]) -> Option<f64> {
        match self {
            ThetaMap::QgNonlinear => Some(-mu[2]),
            _ => None,
        }
    }

    pub fn param_dim(&self) -> usize {
        match self {
            ThetaMap::QgLinear => 2,
            _ => 3,
        }
    }
}

/// `Σ_q θ_q v_q` for same-length vectors; `len` is used when there are none.
pub fn combine_vectors(theta: &[f64], terms: &[Vec<f64>], len: usize) -> Vec<f64> {
    let mut out = vec![0.0; len];
    for (t, v) in theta.iter().zip(terms) {
        for (o, x) in out.iter_mut().zip(v) {
            *o += t * x;
        }
    }
    out
}

/// Quadratic coupling `T(x[slots.0], x[slots.1], p[slots.2])` entering the
/// constraint rows of adjoint field `slots.2`.
#[derive(Clone, Debug)]
pub struct TrilinearTerm {
    pub form: ThirdOrderForm,
    /// Field indices (layout order) of the two state slots and the adjoint slot.
    pub slots: [usize; 3],
}

#[derive(Clone, Debug)]
pub struct ProblemDef {
    pub kind: ProblemKind,
    pub mesh: Arc<Mesh>,
    pub state_space: FeSpace,
    /// `None` for a scalar control.
    pub control_space: Option<FeSpace>,
    pub layout: Layout,
    /// `n_x × n_x` blocks.
    pub a_terms: Vec<SparseMatrix>,
    /// `n_p × n_x` blocks.
    pub b_terms: Vec<SparseMatrix>,
    pub f_terms: Vec<Vec<f64>>,
    pub g_terms: Vec<Vec<f64>>,
    /// Constant part of the cost, `½ ∫ y_d²` over the observation domain.
    pub c0: f64,
    pub trilinear: Option<TrilinearTerm>,
    pub theta: ThetaMap,
    pub parameter_box: ParameterBox,
    /// One inner-product matrix per field, in layout order.
    pub norms: Vec<SparseMatrix>,
    /// Desired profile of the observed field as free-dof coefficients.
    pub target: Vec<f64>,
    pub alpha: f64,
    pub newton: NewtonOptions,
}

impl ProblemDef {
    pub fn is_nonlinear(&self) -> bool {
        self.trilinear.is_some()
    }

    pub fn field_names(&self) -> Vec<&str> {
        self.layout
            .fields()
            .iter()
            .map(|f| f.name.as_str())
            .collect()
    }

    /// Q-counts `(Q_A, Q_B, Q_F)`, with the tensor counted among the B terms.
    pub fn q_counts(&self) -> (usize, usize, usize) {
        let nl = usize::from(self.trilinear.is_some());
        (
            self.a_terms.len(),
            self.b_terms.len() + nl,
            self.f_terms.len(),
        )
    }

    pub fn check_mu(&self, mu: &[f64]) -> Result<()> {
        self.parameter_box.check(mu)
    }

    /// Space carrying field `i`, or `None` for the scalar control.
    pub fn field_space(&self, i: usize) -> Option<&FeSpace> {
        if i == self.layout.control_index() {
            self.control_space.as_ref()
        } else {
            Some(&self.state_space)
        }
    }
}

/// Builds the problem described by a configuration.
pub fn build_problem(config: &ProblemConfig) -> Result<ProblemDef> {
    let mesh = Arc::new(config.build_mesh()?);
    let problem = match config.problem {
        ProblemKind::Pollutant => make_pollutant_problem(mesh, &config.pollutant_options()?)?,
        ProblemKind::QgLinear => make_qg_linear_problem(mesh, &config.qg_options()?)?,
        ProblemKind::QgNonlinear => make_qg_nonlinear_problem(mesh, &config.qg_options()?)?,
    };
    Ok(problem)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layout_offsets() {
        let l = Layout::new(
            &[("psi", 4), ("q", 4)],
            ("u", 9),
            &[("chi", 4), ("t", 4)],
            false,
        );
        assert_eq!(l.n_x(), 17);
        assert_eq!(l.n_p(), 8);
        assert_eq!(l.n_y(), 8);
        assert_eq!(l.range(3), 17..21);
        assert_eq!(l.adjoint_index(1), 4);
        assert_eq!(l.index_of("t"), Some(4));
        let z: Vec<f64> = (0..25).map(f64::from).collect();
        assert_eq!(l.split(&z)[2][0], 8.0);
    }

    #[test]
    fn theta_listings() {
        let p = ThetaMap::Pollutant { scale: 1e3 };
        assert_eq!(p.b(&[1.0, -1.0, 1.0]), vec![1.0, -1.0, 1.0, -1e3]);
        assert_eq!(ThetaMap::QgLinear.b(&[0.5, 0.25]), vec![0.5, 0.25, 1.0]);
        let mu = [0.3, 0.2, 0.001];
        assert_eq!(ThetaMap::QgNonlinear.b(&mu), vec![0.3, 0.2, 1.0]);
        assert_eq!(ThetaMap::QgNonlinear.nonlinear(&mu), Some(-0.001));
        assert_eq!(ThetaMap::QgLinear.nonlinear(&[0.5, 0.5]), None);
        let json = serde_json::to_string(&p).unwrap();
        assert_eq!(serde_json::from_str::<ThetaMap>(&json).unwrap(), p);
    }

    #[test]
    fn box_membership() {
        let b = ParameterBox::new(vec![[0.5, 1.0], [-1.0, 1.0]]).unwrap();
        assert!(b.contains(&[0.5, 1.0]));
        assert!(!b.contains(&[0.49, 0.0]));
        assert!(matches!(b.check(&[2.0, 0.0]), Err(Error::Domain(_))));
        assert!(matches!(b.check(&[1.0]), Err(Error::Domain(_))));
        assert_eq!(b.clamp(&[0.0, 3.0]), vec![0.5, 1.0]);
        assert!(ParameterBox::new(vec![[1.0, 0.0]]).is_err());
    }
}
