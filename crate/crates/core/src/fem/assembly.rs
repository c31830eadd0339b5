use super::{Element, FeSpace};
use crate::error::{Error, Result};
use crate::sparse::{SparseMatrix, TripletBuilder};

/// Integration domain for mass and load assembly.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Subdomain {
    Whole,
    Label(i32),
}

impl Subdomain {
    fn check(self, space: &FeSpace) -> Result<()> {
        match self {
            Subdomain::Label(l) if !space.mesh().has_region(l) => Err(Error::UnknownLabel(l)),
            _ => Ok(()),
        }
    }

    fn includes(self, e: &Element) -> bool {
        match self {
            Subdomain::Whole => true,
            Subdomain::Label(l) => e.region == l,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NormKind {
    H1Seminorm,
    L2,
}

// Exact P1 mass: ∫ φ_i φ_j = area/12 · (1 + δ_ij).
fn local_mass(area: f64, i: usize, j: usize) -> f64 {
    if i == j {
        area / 6.0
    } else {
        area / 12.0
    }
}

fn for_free_pairs(test: &Element, trial: &Element, mut f: impl FnMut(usize, usize, usize, usize)) {
    for a in 0..3 {
        let Some(i) = test.dofs[a] else { continue };
        for b in 0..3 {
            if let Some(j) = trial.dofs[b] {
                f(a, b, i, j);
            }
        }
    }
}

/// `M[i,j] = ∫_D φ_j φ_i` between two P1 spaces on the same mesh
/// (rows index `test` dofs, columns `trial` dofs).
pub fn assemble_mixed_mass(
    test: &FeSpace,
    trial: &FeSpace,
    region: Subdomain,
) -> Result<SparseMatrix> {
    if !std::sync::Arc::ptr_eq(test.mesh(), trial.mesh()) && test.mesh() != trial.mesh() {
        return Err(Error::Argument(
            "mixed mass requires spaces on the same mesh".into(),
        ));
    }
    region.check(test)?;
    let mut b =
        TripletBuilder::with_capacity(test.dim(), trial.dim(), 9 * test.mesh().num_triangles());
    for t in 0..test.mesh().num_triangles() {
        let (et, ex) = (test.element(t), trial.element(t));
        if !region.includes(&et) {
            continue;
        }
        for_free_pairs(&et, &ex, |a, c, i, j| {
            b.push(i, j, local_mass(et.area, a, c))
        });
    }
    Ok(b.build())
}

/// `M[i,j] = ∫_D φ_i φ_j` over the whole domain or one labeled region.
pub fn assemble_mass(space: &FeSpace, region: Subdomain) -> Result<SparseMatrix> {
    assemble_mixed_mass(space, space, region)
}

/// `K[i,j] = ∫_Ω ∇φ_i · ∇φ_j`.
pub fn assemble_stiffness(space: &FeSpace) -> SparseMatrix {
    let mut b =
        TripletBuilder::with_capacity(space.dim(), space.dim(), 9 * space.mesh().num_triangles());
    for e in space.elements() {
        for_free_pairs(&e, &e, |a, c, i, j| {
            let (ga, gc) = (e.grads[a], e.grads[c]);
            b.push(i, j, e.area * (ga[0] * gc[0] + ga[1] * gc[1]));
        });
    }
    b.build()
}

/// `D[i,j] = ∫_Ω (∂φ_j/∂x_dir) φ_i` with `dir ∈ {1, 2}`.
pub fn assemble_advection(space: &FeSpace, direction: usize) -> Result<SparseMatrix> {
    if !(1..=2).contains(&direction) {
        return Err(Error::Argument(format!(
            "advection direction must be 1 or 2, got {direction}"
        )));
    }
    let d = direction - 1;
    let mut b =
        TripletBuilder::with_capacity(space.dim(), space.dim(), 9 * space.mesh().num_triangles());
    for e in space.elements() {
        for_free_pairs(&e, &e, |_, c, i, j| {
            b.push(i, j, e.grads[c][d] * e.area / 3.0)
        });
    }
    Ok(b.build())
}

/// `g[i] = ∫_D φ_i` over free dofs.
pub fn assemble_region_load(space: &FeSpace, region: Subdomain) -> Result<Vec<f64>> {
    region.check(space)?;
    let mut g = vec![0.0; space.dim()];
    for e in space.elements().filter(|e| region.includes(e)) {
        for dof in e.dofs.iter().flatten() {
            g[*dof] += e.area / 3.0;
        }
    }
    Ok(g)
}

/// Inner-product matrix for error and POD norms.
pub fn norm_matrix(space: &FeSpace, kind: NormKind) -> SparseMatrix {
    match kind {
        NormKind::H1Seminorm => assemble_stiffness(space),
        NormKind::L2 => assemble_mass(space, Subdomain::Whole).expect("whole domain always exists"),
    }
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::fem::build_space;
    use crate::mesh::{generate_rect_mesh, BoundaryEdge, BoundaryPlan, Mesh, Rect, Region};

    fn reference_triangle() -> FeSpace {
        let mesh = Mesh::new(
            vec![[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]],
            vec![[0, 1, 2]],
            vec![0],
            vec![
                BoundaryEdge {
                    vertices: [0, 1],
                    label: 1,
                },
                BoundaryEdge {
                    vertices: [1, 2],
                    label: 1,
                },
                BoundaryEdge {
                    vertices: [2, 0],
                    label: 1,
                },
            ],
        )
        .unwrap();
        build_space(Arc::new(mesh), &[]).unwrap()
    }

    fn pollutant_space(n: usize, dirichlet: &[i32]) -> FeSpace {
        let plan = BoundaryPlan {
            bottom: 1,
            right: 1,
            top: 2,
            left: 2,
        };
        let regions = [
            Region {
                label: 1,
                rect: Rect::new(0.2, 0.4, 0.2, 0.4),
            },
            Region {
                label: 2,
                rect: Rect::new(0.6, 0.8, 0.6, 0.8),
            },
        ];
        let mesh = generate_rect_mesh(n, n, Rect::UNIT, plan, &regions).unwrap();
        build_space(Arc::new(mesh), dirichlet).unwrap()
    }

    fn assert_dense_eq(a: &SparseMatrix, expected: [[f64; 3]; 3]) {
        for i in 0..3 {
            for j in 0..3 {
                assert!(
                    (a.get(i, j) - expected[i][j]).abs() < 1e-13,
                    "({i},{j}): {} vs {}",
                    a.get(i, j),
                    expected[i][j]
                );
            }
        }
    }

    #[test]
    fn reference_mass() {
        let s = reference_triangle();
        let m = assemble_mass(&s, Subdomain::Whole).unwrap();
        let a = 0.5 / 12.0;
        assert_dense_eq(&m, [[2.0 * a, a, a], [a, 2.0 * a, a], [a, a, 2.0 * a]]);
    }

    #[test]
    fn reference_stiffness() {
        let k = assemble_stiffness(&reference_triangle());
        assert_dense_eq(&k, [[1.0, -0.5, -0.5], [-0.5, 0.5, 0.0], [-0.5, 0.0, 0.5]]);
    }

    #[test]
    fn reference_advection() {
        let s = reference_triangle();
        let r = [-1.0 / 6.0, 1.0 / 6.0, 0.0];
        assert_dense_eq(&assemble_advection(&s, 1).unwrap(), [r, r, r]);
        let r2 = [-1.0 / 6.0, 0.0, 1.0 / 6.0];
        assert_dense_eq(&assemble_advection(&s, 2).unwrap(), [r2, r2, r2]);
        assert!(matches!(assemble_advection(&s, 3), Err(Error::Argument(_))));
    }

    #[test]
    fn constants_and_partition_of_unity() {
        let s = pollutant_space(10, &[]);
        let ones = vec![1.0; s.dim()];
        let m = assemble_mass(&s, Subdomain::Whole).unwrap();
        assert!((m.quad_form(&ones) - 1.0).abs() < 1e-12);
        let k = assemble_stiffness(&s);
        assert!(k.mul_vec(&ones).iter().all(|v| v.abs() < 1e-12));
        for dir in [1, 2] {
            let d = assemble_advection(&s, dir).unwrap();
            assert!(d.mul_vec(&ones).iter().all(|v| v.abs() < 1e-12));
        }
        assert!(m.asymmetry() < 1e-13 && k.asymmetry() < 1e-13);
    }

    #[test]
    fn region_mass_and_load() {
        let s = pollutant_space(10, &[1]);
        let ones = vec![1.0; s.dim()];
        let m_obs = assemble_mass(&s, Subdomain::Label(2)).unwrap();
        assert!((m_obs.quad_form(&ones) - 0.04).abs() < 1e-12);
        let g = assemble_region_load(&s, Subdomain::Label(1)).unwrap();
        assert!((g.iter().sum::<f64>() - 0.04).abs() < 1e-14);
        assert!(matches!(
            assemble_mass(&s, Subdomain::Label(7)),
            Err(Error::UnknownLabel(7))
        ));
        assert!(matches!(
            assemble_region_load(&s, Subdomain::Label(7)),
            Err(Error::UnknownLabel(7))
        ));
    }

    #[test]
    fn whole_domain_load_misses_boundary_hats() {
        let s = pollutant_space(10, &[1]);
        let g = assemble_region_load(&s, Subdomain::Whole).unwrap();
        // Oracle: total area minus the integrals of the constrained hats.
        let all = build_space(s.mesh().clone(), &[]).unwrap();
        let g_all = assemble_region_load(&all, Subdomain::Whole).unwrap();
        let constrained: f64 = s
            .dirichlet_vertices()
            .iter()
            .map(|&v| g_all[all.dof(v).unwrap()])
            .sum();
        assert!((g_all.iter().sum::<f64>() - 1.0).abs() < 1e-14);
        assert!((g.iter().sum::<f64>() - (1.0 - constrained)).abs() < 1e-14);
    }

    #[test]
    fn empty_region_gives_zero_load() {
        let region = Region {
            label: 3,
            rect: Rect::new(0.5, 0.5, 0.0, 1.0),
        };
        let mesh =
            generate_rect_mesh(4, 4, Rect::UNIT, BoundaryPlan::uniform(1), &[region]).unwrap();
        let s = build_space(Arc::new(mesh), &[1]).unwrap();
        assert!(assemble_region_load(&s, Subdomain::Label(3))
            .unwrap()
            .iter()
            .all(|&v| v == 0.0));
    }

    #[test]
    fn advection_skew_on_interior_hat() {
        let mesh = generate_rect_mesh(6, 6, Rect::UNIT, BoundaryPlan::uniform(1), &[]).unwrap();
        let s = build_space(Arc::new(mesh), &[1]).unwrap();
        for dir in [1, 2] {
            let d = assemble_advection(&s, dir).unwrap();
            for i in [0, 7, 12] {
                let mut v = vec![0.0; s.dim()];
                v[i] = 1.0;
                // ∫ (∂v/∂x) v = ½ ∫ ∂(v²)/∂x = 0 for compact interior support.
                assert!(d.quad_form(&v).abs() < 1e-14);
            }
            let sym =
                SparseMatrix::linear_combination(&[(1.0, &d), (1.0, &d.transpose())]).unwrap();
            assert!(sym.max_abs() < 1e-14);
        }
    }

    #[test]
    fn stiffness_positive_definite_with_dirichlet() {
        let mesh = generate_rect_mesh(10, 10, Rect::UNIT, BoundaryPlan::uniform(1), &[]).unwrap();
        let s = build_space(Arc::new(mesh), &[1]).unwrap();
        let k = assemble_stiffness(&s).to_dense();
        let min = k.symmetric_eigenvalues().min();
        // Discrete Dirichlet Laplacian on an 81-dof structured mesh: λ_min ≈ 2π²h².
        let h = 0.1f64;
        let expected = 4.0 * (1.0 - (std::f64::consts::PI * h).cos()) * 2.0 / 2.0;
        assert!(min > 0.0);
        assert!((min - expected).abs() < 1e-10, "{min} vs {expected}");
    }

    #[test]
    fn norms_match_dense_cholesky() {
        let mesh = generate_rect_mesh(3, 3, Rect::UNIT, BoundaryPlan::uniform(1), &[]).unwrap();
        let s = build_space(Arc::new(mesh), &[]).unwrap();
        let v: Vec<f64> = (0..s.dim()).map(|i| ((i * 7 % 5) as f64) - 1.5).collect();
        for kind in [NormKind::H1Seminorm, NormKind::L2] {
            let m = norm_matrix(&s, kind);
            let dense = m.to_dense();
            let reg = if kind == NormKind::H1Seminorm {
                // Constants span the kernel; shift to make the oracle factorizable.
                &dense + nalgebra::DMatrix::<f64>::identity(s.dim(), s.dim())
            } else {
                dense.clone()
            };
            let chol = reg.cholesky().unwrap();
            let lt_v = chol.l().transpose() * nalgebra::DVector::from_column_slice(&v);
            let mut expected = lt_v.norm_squared();
            if kind == NormKind::H1Seminorm {
                expected -= v.iter().map(|x| x * x).sum::<f64>();
            }
            assert!((m.quad_form(&v) - expected).abs() < 1e-12 * expected.abs().max(1.0));
        }
        let ones = vec![1.0; s.dim()];
        assert!(norm_matrix(&s, NormKind::H1Seminorm).quad_form(&ones).abs() < 1e-13);
        assert!((norm_matrix(&s, NormKind::L2).quad_form(&ones) - 1.0).abs() < 1e-13);
    }
}
