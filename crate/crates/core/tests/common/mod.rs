//! Oracles shared by the integration tests. Everything here is computed
//! from the mesh and the dof numbering alone, with its own quadrature, so
//! it does not reuse the library's element kernels.

#![allow(dead_code)]

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use romocp::fem::FeSpace;
use romocp::problems::{MeshSource, ProblemConfig, ProblemDef, ProblemKind, SamplingPlan};
use romocp::sparse::SparseMatrix;

pub type Entries = BTreeMap<(usize, usize), f64>;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn config(kind: ProblemKind, cells: usize, m: usize, n: usize) -> ProblemConfig {
    let mut c = ProblemConfig::new(kind);
    c.mesh = Some(MeshSource::Generated { cells });
    let mut plan: SamplingPlan = c.sampling();
    plan.size = m;
    c.sampling = Some(plan);
    c.basis_size = Some(n);
    c
}

/// Uniform in the box, or log-uniform when the box is strictly positive
/// and spans more than a decade in some direction.
pub fn random_mu(problem: &ProblemDef, r: &mut ChaCha8Rng) -> Vec<f64> {
    let b = &problem.parameter_box.bounds;
    let log = b.iter().all(|[lo, _]| *lo > 0.0) && b.iter().any(|[lo, hi]| hi / lo > 10.0);
    b.iter()
        .map(|&[lo, hi]| {
            let t: f64 = r.random();
            if log {
                (lo.ln() + t * (hi.ln() - lo.ln())).exp()
            } else {
                lo + t * (hi - lo)
            }
        })
        .collect()
}

pub fn random_vec(n: usize, r: &mut ChaCha8Rng) -> Vec<f64> {
    (0..n).map(|_| r.random_range(-1.0..1.0)).collect()
}

pub fn entries(m: &SparseMatrix) -> Entries {
    let mut e = Entries::new();
    for (i, j, v) in m.iter() {
        *e.entry((i, j)).or_default() += v;
    }
    e
}

/// Largest entrywise difference over the union of both patterns.
pub fn max_diff(a: &Entries, b: &Entries) -> f64 {
    let keys: std::collections::BTreeSet<_> = a.keys().chain(b.keys()).collect();
    keys.into_iter()
        .map(|k| (a.get(k).unwrap_or(&0.0) - b.get(k).unwrap_or(&0.0)).abs())
        .fold(0.0, f64::max)
}

fn add(e: &mut Entries, i: usize, j: usize, v: f64) {
    *e.entry((i, j)).or_default() += v;
}

/// One triangle: vertices, area, hat gradients.
pub struct Tri {
    pub v: [usize; 3],
    pub area: f64,
    pub grad: [[f64; 2]; 3],
    pub region: i32,
}

pub fn triangles(space: &FeSpace) -> Vec<Tri> {
    let mesh = space.mesh();
    mesh.triangles()
        .iter()
        .zip(mesh.region_labels())
        .map(|(t, &region)| {
            let p = t.map(|v| mesh.vertices()[v]);
            // Jacobian of the reference map, columns p1 − p0 and p2 − p0.
            let (a, b, c, d) = (
                p[1][0] - p[0][0],
                p[2][0] - p[0][0],
                p[1][1] - p[0][1],
                p[2][1] - p[0][1],
            );
            let det = a * d - b * c;
            // ∇φ = J⁻ᵀ ∇̂φ with reference gradients (−1,−1), (1,0), (0,1).
            let inv_t = |g: [f64; 2]| [(d * g[0] - c * g[1]) / det, (-b * g[0] + a * g[1]) / det];
            Tri {
                v: *t,
                area: 0.5 * det.abs(),
                grad: [inv_t([-1.0, -1.0]), inv_t([1.0, 0.0]), inv_t([0.0, 1.0])],
                region,
            }
        })
        .collect()
}

/// Hat values at the three edge midpoints (exact for quadratics, weight area/3).
const MIDPOINT_HATS: [[f64; 3]; 3] = [[0.5, 0.5, 0.0], [0.0, 0.5, 0.5], [0.5, 0.0, 0.5]];

fn mass_local(area: f64, a: usize, b: usize) -> f64 {
    MIDPOINT_HATS.iter().map(|q| q[a] * q[b]).sum::<f64>() * area / 3.0
}

fn dot2(a: [f64; 2], b: [f64; 2]) -> f64 {
    a[0] * b[0] + a[1] * b[1]
}

/// Bilinear form `Σ_T w(T) ∫_T k(a, b)` with rows from `test`, columns from
/// `trial`, shifted by the given offsets.
fn assemble(
    e: &mut Entries,
    test: &FeSpace,
    trial: &FeSpace,
    (ro, co): (usize, usize),
    keep: impl Fn(&Tri) -> bool,
    k: impl Fn(&Tri, usize, usize) -> f64,
) {
    for t in triangles(test).iter().filter(|t| keep(t)) {
        for a in 0..3 {
            let Some(i) = test.dof(t.v[a]) else { continue };
            for b in 0..3 {
                if let Some(j) = trial.dof(t.v[b]) {
                    add(e, ro + i, co + j, k(t, a, b));
                }
            }
        }
    }
}

fn stiffness(t: &Tri, a: usize, b: usize) -> f64 {
    t.area * dot2(t.grad[a], t.grad[b])
}

fn mass(t: &Tri, a: usize, b: usize) -> f64 {
    mass_local(t.area, a, b)
}

/// `∫ ∂_d φ_b φ_a`.
fn advection(d: usize) -> impl Fn(&Tri, usize, usize) -> f64 {
    move |t, a, b| t.grad[b][d] * MIDPOINT_HATS.iter().map(|q| q[a]).sum::<f64>() * t.area / 3.0
}

/// Direct (non-affine) assembly of the cost Hessian `A` and constraint
/// block `B(μ)` of a built-in problem.
pub fn direct_operators(problem: &ProblemDef, mu: &[f64]) -> (Entries, Entries) {
    let s = &problem.state_space;
    let n = s.dim();
    let (mut a, mut b) = (Entries::new(), Entries::new());
    let all = |_: &Tri| true;
    match problem.kind {
        ProblemKind::Pollutant => {
            let (obs, ctrl) = (2, 1);
            assemble(&mut a, s, s, (0, 0), |t| t.region == obs, mass);
            let area: f64 = triangles(s)
                .iter()
                .filter(|t| t.region == ctrl)
                .map(|t| t.area)
                .sum();
            add(&mut a, n, n, problem.alpha * area);
            assemble(&mut b, s, s, (0, 0), all, |t, i, j| {
                mu[0] * stiffness(t, i, j)
                    + mu[1] * advection(0)(t, i, j)
                    + mu[2] * advection(1)(t, i, j)
            });
            for t in triangles(s).iter().filter(|t| t.region == ctrl) {
                for v in t.v {
                    if let Some(i) = s.dof(v) {
                        add(&mut b, i, n, -1e3 * t.area / 3.0);
                    }
                }
            }
        }
        ProblemKind::QgLinear | ProblemKind::QgNonlinear => {
            let u = problem.control_space.as_ref().unwrap();
            assemble(&mut a, s, s, (0, 0), all, mass);
            assemble(&mut a, u, u, (2 * n, 2 * n), all, |t, i, j| {
                problem.alpha * mass(t, i, j)
            });
            // χ rows: ∫∇ψ·∇φ + ∫qφ.
            assemble(&mut b, s, s, (0, 0), all, stiffness);
            assemble(&mut b, s, s, (0, n), all, mass);
            // t rows: ∫∂ₓψ r + μ₂∫∇q·∇r + μ₁∫q r − ∫u r.
            assemble(&mut b, s, s, (n, 0), all, advection(0));
            assemble(&mut b, s, s, (n, n), all, |t, i, j| {
                mu[1] * stiffness(t, i, j) + mu[0] * mass(t, i, j)
            });
            assemble(&mut b, s, u, (n, 2 * n), all, |t, i, j| -mass(t, i, j));
        }
    }
    (a, b)
}

/// `∫ a (∂_y b ∂ₓ c − ∂ₓ b ∂_y c)` for free-dof coefficient vectors.
pub fn trilinear(space: &FeSpace, a: &[f64], b: &[f64], c: &[f64]) -> f64 {
    let val = |x: &[f64], v: usize| space.dof(v).map_or(0.0, |i| x[i]);
    triangles(space)
        .iter()
        .map(|t| {
            let grad = |x: &[f64]| {
                (0..3).fold([0.0, 0.0], |g, k| {
                    let xv = val(x, t.v[k]);
                    [g[0] + xv * t.grad[k][0], g[1] + xv * t.grad[k][1]]
                })
            };
            let (gb, gc) = (grad(b), grad(c));
            let mean_a: f64 = MIDPOINT_HATS
                .iter()
                .map(|q| (0..3).map(|k| q[k] * val(a, t.v[k])).sum::<f64>())
                .sum::<f64>()
                / 3.0;
            t.area * mean_a * (gb[1] * gc[0] - gb[0] * gc[1])
        })
        .sum()
}

pub fn apply(e: &Entries, x: &[f64], rows: usize) -> Vec<f64> {
    let mut y = vec![0.0; rows];
    for (&(i, j), v) in e {
        y[i] += v * x[j];
    }
    y
}

/// The discrete Lagrangian `½xᵀAx − Fᵀx + c₀ + pᵀ(B x + θ N(x))` at `z`,
/// from the direct operators and the direct trilinear form.
pub fn lagrangian(problem: &ProblemDef, mu: &[f64], z: &[f64]) -> f64 {
    let l = &problem.layout;
    let (nx, np) = (l.n_x(), l.n_p());
    let (x, p) = z.split_at(nx);
    let (a, b) = direct_operators(problem, mu);
    let f = &problem.f_terms[0];
    let ax = apply(&a, x, nx);
    let bx = apply(&b, x, np);
    let mut value = 0.5 * dot(x, &ax) - dot(f, x) + problem.c0 + dot(p, &bx);
    if problem.kind == ProblemKind::QgNonlinear {
        let n = problem.state_space.dim();
        let (psi, q, t) = (&z[..n], &z[n..2 * n], &z[nx + n..nx + 2 * n]);
        value += -mu[2] * trilinear(&problem.state_space, psi, q, t);
    }
    value
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Derivative of a polynomial of degree ≤ 4 along `t`, exactly up to
/// roundoff, from a five-point stencil of width `h`.
pub fn poly_derivative(f: impl Fn(f64) -> f64, h: f64) -> f64 {
    (8.0 * (f(h) - f(-h)) - (f(2.0 * h) - f(-2.0 * h))) / (12.0 * h)
}

pub fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(f64::MIN_POSITIVE)
}
