use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::FeSpace;
use crate::sparse::{SparseMatrix, TripletBuilder};

/// Per-triangle data of `T[i,j,k] = ∫ φ_i (∂_y φ_j ∂_x φ_k − ∂_x φ_j ∂_y φ_k)`.
///
/// Gradients are constant on a P1 triangle, so the integrand reduces to
/// `(area/3) · bracket[j][k]` for each of the three `i` hats.
#[derive(Clone, Debug)]
struct ElementBracket {
    dofs: [Option<usize>; 3],
    weight: f64,
    gx: [f64; 3],
    gy: [f64; 3],
}

impl ElementBracket {
    #[inline]
    fn bracket(&self, b: usize, c: usize) -> f64 {
        self.gy[b] * self.gx[c] - self.gx[b] * self.gy[c]
    }

    #[inline]
    fn gather(&self, v: &[f64]) -> [f64; 3] {
        self.dofs.map(|d| d.map_or(0.0, |i| v[i]))
    }

    fn sum(&self, v: &[f64]) -> f64 {
        self.gather(v).iter().sum()
    }

    // Σ_c bracket[b][c] v_c for each b.
    fn bracket_right(&self, v: &[f64]) -> [f64; 3] {
        let v = self.gather(v);
        let (x, y) = (dot3(&self.gx, &v), dot3(&self.gy, &v));
        std::array::from_fn(|b| self.gy[b] * x - self.gx[b] * y)
    }

    // Σ_b v_b bracket[b][c] for each c.
    fn bracket_left(&self, v: &[f64]) -> [f64; 3] {
        let r = self.bracket_right(v);
        r.map(|x| -x)
    }
}

fn dot3(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

/// Sparse third-order form over one P1 space, stored element by element.
#[derive(Clone, Debug)]
pub struct ThirdOrderForm {
    dim: usize,
    elements: Vec<ElementBracket>,
}

pub fn assemble_trilinear(space: &FeSpace) -> ThirdOrderForm {
    let elements = space
        .elements()
        .filter(|e| e.dofs.iter().any(Option::is_some))
        .map(|e| ElementBracket {
            dofs: e.dofs,
            weight: e.area / 3.0,
            gx: e.grads.map(|g| g[0]),
            gy: e.grads.map(|g| g[1]),
        })
        .collect();
    ThirdOrderForm {
        dim: space.dim(),
        elements,
    }
}

impl ThirdOrderForm {
    pub fn dims(&self) -> [usize; 3] {
        [self.dim; 3]
    }

    fn check(&self, v: &[f64]) {
        assert_eq!(v.len(), self.dim, "trilinear form argument length");
    }

    /// `T(a, b, c)`.
    pub fn eval(&self, a: &[f64], b: &[f64], c: &[f64]) -> f64 {
        self.check(a);
        self.check(b);
        self.check(c);
        self.elements
            .iter()
            .map(|e| {
                let bc = e.bracket_right(c);
                e.weight * e.sum(a) * dot3(&e.gather(b), &bc)
            })
            .sum()
    }

    /// `T(a, b, ·)` as a vector over the third slot.
    pub fn vector_12(&self, a: &[f64], b: &[f64]) -> Vec<f64> {
        self.check(a);
        self.check(b);
        let mut out = vec![0.0; self.dim];
        for e in &self.elements {
            let s = e.weight * e.sum(a);
            let row = e.bracket_left(b);
            for (c, d) in e.dofs.iter().enumerate() {
                if let Some(k) = d {
                    out[*k] += s * row[c];
                }
            }
        }
        out
    }

    /// `T(a, ·, c)` as a vector over the second slot.
    pub fn vector_13(&self, a: &[f64], c: &[f64]) -> Vec<f64> {
        self.check(a);
        self.check(c);
        let mut out = vec![0.0; self.dim];
        for e in &self.elements {
            let s = e.weight * e.sum(a);
            let col = e.bracket_right(c);
            for (b, d) in e.dofs.iter().enumerate() {
                if let Some(j) = d {
                    out[*j] += s * col[b];
                }
            }
        }
        out
    }

    /// `T(·, b, c)` as a vector over the first slot.
    pub fn vector_23(&self, b: &[f64], c: &[f64]) -> Vec<f64> {
        self.check(b);
        self.check(c);
        let mut out = vec![0.0; self.dim];
        for e in &self.elements {
            let v = e.weight * dot3(&e.gather(b), &e.bracket_right(c));
            for i in e.dofs.iter().flatten() {
                out[*i] += v;
            }
        }
        out
    }

    /// `T(a, ·, ·)`: rows index the second slot, columns the third.
    pub fn contract_first(&self, a: &[f64]) -> SparseMatrix {
        self.check(a);
        let mut t = TripletBuilder::with_capacity(self.dim, self.dim, 9 * self.elements.len());
        for e in &self.elements {
            let s = e.weight * e.sum(a);
            for (b, j) in e.dofs.iter().enumerate() {
                let Some(j) = j else { continue };
                for (c, k) in e.dofs.iter().enumerate() {
                    if let Some(k) = k {
                        t.push(*j, *k, s * e.bracket(b, c));
                    }
                }
            }
        }
        t.build()
    }

    /// `T(·, b, ·)`: rows index the first slot, columns the third.
    pub fn contract_second(&self, b: &[f64]) -> SparseMatrix {
        self.check(b);
        let mut t = TripletBuilder::with_capacity(self.dim, self.dim, 9 * self.elements.len());
        for e in &self.elements {
            let row = e.bracket_left(b);
            for i in e.dofs.iter().flatten() {
                for (c, k) in e.dofs.iter().enumerate() {
                    if let Some(k) = k {
                        t.push(*i, *k, e.weight * row[c]);
                    }
                }
            }
        }
        t.build()
    }

    /// `T(·, ·, c)`: rows index the first slot, columns the second.
    pub fn contract_third(&self, c: &[f64]) -> SparseMatrix {
        self.check(c);
        let mut t = TripletBuilder::with_capacity(self.dim, self.dim, 9 * self.elements.len());
        for e in &self.elements {
            let col = e.bracket_right(c);
            for i in e.dofs.iter().flatten() {
                for (b, j) in e.dofs.iter().enumerate() {
                    if let Some(j) = j {
                        t.push(*i, *j, e.weight * col[b]);
                    }
                }
            }
        }
        t.build()
    }

    /// All nonzero `(i, j, k, value)` entries with duplicates summed.
    pub fn entries(&self) -> Vec<(usize, usize, usize, f64)> {
        let mut map = std::collections::BTreeMap::new();
        for e in &self.elements {
            for i in e.dofs.iter().flatten() {
                for (b, j) in e.dofs.iter().enumerate() {
                    let Some(j) = j else { continue };
                    for (c, k) in e.dofs.iter().enumerate() {
                        if let Some(k) = k {
                            *map.entry((*i, *j, *k)).or_insert(0.0) += e.weight * e.bracket(b, c);
                        }
                    }
                }
            }
        }
        map.into_iter()
            .filter(|(_, v)| *v != 0.0)
            .map(|((i, j, k), v)| (i, j, k, v))
            .collect()
    }

    /// `T̂[I,J,K] = Σ T[i,j,k] X1[i,I] X2[j,J] X3[k,K]`.
    ///
    /// Per element the bracket is the rank-2 antisymmetric matrix
    /// `gy gxᵀ − gx gyᵀ`, so the projection is one dense product `Sᵀ H`
    /// with `S[e,I] = (area/3) Σ_a X1[i_a,I]` and
    /// `H[e,(J,K)] = (X2ᵀgy)_J (X3ᵀgx)_K − (X2ᵀgx)_J (X3ᵀgy)_K`.
    pub fn project(&self, x1: &DMatrix<f64>, x2: &DMatrix<f64>, x3: &DMatrix<f64>) -> DenseTensor3 {
        for x in [x1, x2, x3] {
            assert_eq!(
                x.nrows(),
                self.dim,
                "basis rows must match the form dimension"
            );
        }
        let (n1, n2, n3) = (x1.ncols(), x2.ncols(), x3.ncols());
        let ne = self.elements.len();
        let mut s = DMatrix::<f64>::zeros(ne, n1);
        let mut h = DMatrix::<f64>::zeros(ne, n2 * n3);
        let local = |x: &DMatrix<f64>, e: &ElementBracket, g: &[f64; 3], col: usize| -> f64 {
            e.dofs
                .iter()
                .zip(g)
                .map(|(d, gv)| d.map_or(0.0, |i| x[(i, col)] * gv))
                .sum()
        };
        let ones = [1.0; 3];
        for (r, e) in self.elements.iter().enumerate() {
            for c in 0..n1 {
                s[(r, c)] = e.weight * local(x1, e, &ones, c);
            }
            let y2: Vec<f64> = (0..n2).map(|c| local(x2, e, &e.gy, c)).collect();
            let x2g: Vec<f64> = (0..n2).map(|c| local(x2, e, &e.gx, c)).collect();
            let x3g: Vec<f64> = (0..n3).map(|c| local(x3, e, &e.gx, c)).collect();
            let y3: Vec<f64> = (0..n3).map(|c| local(x3, e, &e.gy, c)).collect();
            for j in 0..n2 {
                for k in 0..n3 {
                    h[(r, j * n3 + k)] = y2[j] * x3g[k] - x2g[j] * y3[k];
                }
            }
        }
        let flat = s.transpose() * h;
        let mut data = vec![0.0; n1 * n2 * n3];
        for i in 0..n1 {
            for jk in 0..n2 * n3 {
                data[i * n2 * n3 + jk] = flat[(i, jk)];
            }
        }
        DenseTensor3 {
            dims: [n1, n2, n3],
            data,
        }
    }
}

/// Dense third-order tensor, row-major in `(i, j, k)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DenseTensor3 {
    dims: [usize; 3],
    data: Vec<f64>,
}

impl DenseTensor3 {
    pub fn zeros(dims: [usize; 3]) -> Self {
        DenseTensor3 {
            dims,
            data: vec![0.0; dims[0] * dims[1] * dims[2]],
        }
    }

    pub fn from_parts(dims: [usize; 3], data: Vec<f64>) -> Option<Self> {
        (data.len() == dims[0] * dims[1] * dims[2]).then_some(DenseTensor3 { dims, data })
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    fn idx(&self, i: usize, j: usize, k: usize) -> usize {
        (i * self.dims[1] + j) * self.dims[2] + k
    }

    pub fn get(&self, i: usize, j: usize, k: usize) -> f64 {
        self.data[self.idx(i, j, k)]
    }

    /// `M[j,k] = Σ_i a_i T[i,j,k]`.
    pub fn contract_first(&self, a: &DVector<f64>) -> DMatrix<f64> {
        let [n1, n2, n3] = self.dims;
        let mut m = DMatrix::zeros(n2, n3);
        for i in 0..n1 {
            if a[i] == 0.0 {
                continue;
            }
            for j in 0..n2 {
                let row = &self.data[self.idx(i, j, 0)..self.idx(i, j, 0) + n3];
                for k in 0..n3 {
                    m[(j, k)] += a[i] * row[k];
                }
            }
        }
        m
    }

    /// `M[i,k] = Σ_j b_j T[i,j,k]`.
    pub fn contract_second(&self, b: &DVector<f64>) -> DMatrix<f64> {
        let [n1, n2, n3] = self.dims;
        let mut m = DMatrix::zeros(n1, n3);
        for i in 0..n1 {
            for j in 0..n2 {
                let row = &self.data[self.idx(i, j, 0)..self.idx(i, j, 0) + n3];
                for k in 0..n3 {
                    m[(i, k)] += b[j] * row[k];
                }
            }
        }
        m
    }

    /// `M[i,j] = Σ_k T[i,j,k] c_k`.
    pub fn contract_third(&self, c: &DVector<f64>) -> DMatrix<f64> {
        let [n1, n2, n3] = self.dims;
        let mut m = DMatrix::zeros(n1, n2);
        for i in 0..n1 {
            for j in 0..n2 {
                let row = &self.data[self.idx(i, j, 0)..self.idx(i, j, 0) + n3];
                m[(i, j)] = row.iter().zip(c.iter()).map(|(t, c)| t * c).sum();
            }
        }
        m
    }

    pub fn vector_12(&self, a: &DVector<f64>, b: &DVector<f64>) -> DVector<f64> {
        self.contract_first(a).transpose() * b
    }

    pub fn vector_13(&self, a: &DVector<f64>, c: &DVector<f64>) -> DVector<f64> {
        self.contract_first(a) * c
    }

    pub fn vector_23(&self, b: &DVector<f64>, c: &DVector<f64>) -> DVector<f64> {
        self.contract_third(c) * b
    }

    pub fn eval(&self, a: &DVector<f64>, b: &DVector<f64>, c: &DVector<f64>) -> f64 {
        b.dot(&(self.contract_first(a) * c))
    }
}
