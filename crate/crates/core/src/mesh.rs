//! Uniform P1 Dirichlet meshes on an interval or a rectangle.
//!
//! Only interior nodes carry unknowns; boundary values are implicitly zero.
//! Rectangles are split into two triangles per grid cell along the
//! lower-left to upper-right diagonal.

use alloc::format;
use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

use nalgebra::DVector;
use num_traits::Float;

use crate::banded::BandedSym;
use crate::error::{Error, Result};

/// One simplex. Local nodes that sit on the boundary have `None` as index.
#[derive(Debug, Clone, PartialEq)]
pub struct Element {
    pub nodes: [Option<usize>; 3],
    pub vertices: [[f64; 2]; 3],
    /// Constant gradients of the local barycentric basis functions.
    pub grads: [[f64; 2]; 3],
    pub measure: f64,
}

/// Reference rule: barycentric points and weights that sum to one.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadRule {
    pub bary: Vec<[f64; 3]>,
    pub weights: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mesh {
    dim: usize,
    extents: [f64; 2],
    n_per_axis: usize,
    quad_order: usize,
    nodes: Vec<[f64; 2]>,
    elements: Vec<Element>,
    quad: QuadRule,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NormKind {
    /// `(∫|g|^s)^{1/s}`
    Lebesgue(f64),
    /// `(∫|∇g|^s)^{1/s}`
    SobolevGrad(f64),
}

pub fn build_mesh(dim: usize, extents: &[f64], n_per_axis: usize, quad_order: usize) -> Result<Mesh> {
    Mesh::new(dim, extents, n_per_axis, quad_order)
}

impl Mesh {
    pub fn new(dim: usize, extents: &[f64], n_per_axis: usize, quad_order: usize) -> Result<Mesh> {
        if dim != 1 && dim != 2 {
            return Err(Error::Config(format!("dimension must be 1 or 2, got {dim}")));
        }
        if extents.len() != dim {
            return Err(Error::Config(format!(
                "expected {dim} extents, got {}",
                extents.len()
            )));
        }
        if extents.iter().any(|&e| !(e > 0.0) || !e.is_finite()) {
            return Err(Error::Config(format!("extents must be positive, got {extents:?}")));
        }
        if n_per_axis < 2 {
            return Err(Error::Config(format!("n_per_axis must be at least 2, got {n_per_axis}")));
        }
        if quad_order < 2 {
            return Err(Error::Config(format!("quad_order must be at least 2, got {quad_order}")));
        }
        let n = n_per_axis;
        let mut ext = [1.0; 2];
        ext[..dim].copy_from_slice(extents);
        let (nodes, elements, quad) = if dim == 1 {
            let h = ext[0] / (n + 1) as f64;
            let nodes = (0..n).map(|i| [(i + 1) as f64 * h, 0.0]).collect();
            let elements = (0..=n)
                .map(|e| Element {
                    nodes: [
                        if e >= 1 { Some(e - 1) } else { None },
                        if e < n { Some(e) } else { None },
                        None,
                    ],
                    vertices: [[e as f64 * h, 0.0], [(e + 1) as f64 * h, 0.0], [0.0; 2]],
                    grads: [[-1.0 / h, 0.0], [1.0 / h, 0.0], [0.0; 2]],
                    measure: h,
                })
                .collect();
            (nodes, elements, interval_rule(quad_order))
        } else {
            let (hx, hy) = (ext[0] / (n + 1) as f64, ext[1] / (n + 1) as f64);
            let mut nodes = Vec::with_capacity(n * n);
            for j in 0..n {
                for i in 0..n {
                    nodes.push([(i + 1) as f64 * hx, (j + 1) as f64 * hy]);
                }
            }
            // full-grid coordinates (0..=n+1) to interior index
            let idx = |i: usize, j: usize| -> Option<usize> {
                if (1..=n).contains(&i) && (1..=n).contains(&j) {
                    Some((j - 1) * n + (i - 1))
                } else {
                    None
                }
            };
            let pt = |i: usize, j: usize| [i as f64 * hx, j as f64 * hy];
            let mut elements = Vec::with_capacity(2 * (n + 1) * (n + 1));
            for cj in 0..=n {
                for ci in 0..=n {
                    let corners = [
                        [(ci, cj), (ci + 1, cj), (ci + 1, cj + 1)],
                        [(ci, cj), (ci + 1, cj + 1), (ci, cj + 1)],
                    ];
                    for tri in corners {
                        let vertices = [pt(tri[0].0, tri[0].1), pt(tri[1].0, tri[1].1), pt(tri[2].0, tri[2].1)];
                        let (grads, measure) = triangle_gradients(&vertices);
                        elements.push(Element {
                            nodes: [idx(tri[0].0, tri[0].1), idx(tri[1].0, tri[1].1), idx(tri[2].0, tri[2].1)],
                            vertices,
                            grads,
                            measure,
                        });
                    }
                }
            }
            (nodes, elements, triangle_rule(quad_order))
        };
        Ok(Mesh {
            dim,
            extents: ext,
            n_per_axis,
            quad_order,
            nodes,
            elements,
            quad,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn extents(&self) -> &[f64] {
        &self.extents[..self.dim]
    }

    pub fn n_per_axis(&self) -> usize {
        self.n_per_axis
    }

    pub fn quad_order(&self) -> usize {
        self.quad_order
    }

    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn nodes(&self) -> &[[f64; 2]] {
        &self.nodes
    }

    pub fn elements(&self) -> &[Element] {
        &self.elements
    }

    pub fn quad(&self) -> &QuadRule {
        &self.quad
    }

    /// Number of local basis functions per element.
    pub fn local_nodes(&self) -> usize {
        self.dim + 1
    }

    /// Half bandwidth of every matrix assembled on this mesh.
    pub fn bandwidth(&self) -> usize {
        if self.dim == 1 {
            1
        } else {
            self.n_per_axis + 1
        }
    }

    pub fn volume(&self) -> f64 {
        self.extents().iter().product()
    }

    /// Same domain and same grid.
    pub fn compatible(&self, other: &Mesh) -> bool {
        self.dim == other.dim && self.extents == other.extents && self.n_per_axis == other.n_per_axis
    }

    /// Same grid with twice as many cells per axis.
    pub fn refined(&self) -> Result<Mesh> {
        Mesh::new(self.dim, self.extents(), 2 * self.n_per_axis + 1, self.quad_order)
    }

    #[inline]
    pub fn local_values(&self, e: &Element, coeffs: &[f64]) -> [f64; 3] {
        let mut out = [0.0; 3];
        for (k, node) in e.nodes.iter().enumerate() {
            if let Some(i) = node {
                out[k] = coeffs[*i];
            }
        }
        out
    }

    #[inline]
    pub fn gradient(&self, e: &Element, coeffs: &[f64]) -> [f64; 2] {
        let mut g = [0.0; 2];
        for (k, node) in e.nodes.iter().enumerate() {
            if let Some(i) = node {
                g[0] += coeffs[*i] * e.grads[k][0];
                g[1] += coeffs[*i] * e.grads[k][1];
            }
        }
        g
    }

    /// Physical coordinates of a reference quadrature point.
    #[inline]
    pub fn map_point(&self, e: &Element, bary: &[f64; 3]) -> [f64; 2] {
        let mut x = [0.0; 2];
        for k in 0..3 {
            x[0] += bary[k] * e.vertices[k][0];
            x[1] += bary[k] * e.vertices[k][1];
        }
        x
    }

    /// Nodal interpolant of `f`.
    pub fn interpolate(self: &Arc<Self>, f: impl Fn([f64; 2]) -> f64) -> GridFunction {
        let values = DVector::from_iterator(self.num_nodes(), self.nodes.iter().map(|x| f(*x)));
        GridFunction {
            mesh: self.clone(),
            values,
        }
    }

    /// Quadrature of `f(x)` over Ω.
    pub fn integrate(&self, f: impl Fn([f64; 2]) -> f64) -> f64 {
        let mut s = 0.0;
        for e in &self.elements {
            for (b, w) in self.quad.bary.iter().zip(&self.quad.weights) {
                s += w * e.measure * f(self.map_point(e, b));
            }
        }
        s
    }

    pub fn norm_of(&self, coeffs: &[f64], kind: NormKind) -> Result<f64> {
        let s = match kind {
            NormKind::Lebesgue(s) | NormKind::SobolevGrad(s) => s,
        };
        if !(s >= 1.0) {
            return Err(Error::Domain(format!("norm exponent must be at least 1, got {s}")));
        }
        let mut acc = 0.0;
        match kind {
            NormKind::Lebesgue(_) => {
                for e in &self.elements {
                    let loc = self.local_values(e, coeffs);
                    for (b, w) in self.quad.bary.iter().zip(&self.quad.weights) {
                        let val = b[0] * loc[0] + b[1] * loc[1] + b[2] * loc[2];
                        acc += w * e.measure * val.abs().powf(s);
                    }
                }
            }
            NormKind::SobolevGrad(_) => {
                for e in &self.elements {
                    let g = self.gradient(e, coeffs);
                    let m2 = g[0] * g[0] + g[1] * g[1];
                    acc += e.measure * m2.powf(0.5 * s);
                }
            }
        }
        Ok(acc.powf(1.0 / s))
    }

    /// Plain stiffness matrix `∫∇φ_i·∇φ_j`.
    pub fn stiffness(&self) -> BandedSym {
        self.assemble_gradient_form(|_| (1.0, 0.0, [0.0; 2]))
    }

    /// Consistent mass matrix `∫φ_i φ_j`.
    pub fn mass(&self) -> BandedSym {
        let ones = vec![1.0; self.elements.len() * self.quad.weights.len()];
        self.assemble_weighted_mass(&ones)
    }

    /// Assembles `∫ a ∇φ_i·∇φ_j + b (g·∇φ_i)(g·∇φ_j)` where `(a, b, g)` are
    /// constant per element and returned by `coef(element_index)`.
    pub fn assemble_gradient_form(&self, coef: impl Fn(usize) -> (f64, f64, [f64; 2])) -> BandedSym {
        let mut m = BandedSym::zeros(self.num_nodes(), self.bandwidth());
        let nl = self.local_nodes();
        for (ei, e) in self.elements.iter().enumerate() {
            let (a, b, g) = coef(ei);
            for k in 0..nl {
                let Some(i) = e.nodes[k] else { continue };
                let gk = e.grads[k];
                let dk = g[0] * gk[0] + g[1] * gk[1];
                for l in 0..=k {
                    let Some(j) = e.nodes[l] else { continue };
                    let gl = e.grads[l];
                    let dl = g[0] * gl[0] + g[1] * gl[1];
                    let val = e.measure * (a * (gk[0] * gl[0] + gk[1] * gl[1]) + b * dk * dl);
                    m.add(i, j, val);
                }
            }
        }
        m
    }

    /// Assembles `∫ w φ_i φ_j` with `w` sampled at every quadrature point,
    /// element-major (`weights[e * nq + k]`).
    pub fn assemble_weighted_mass(&self, weights: &[f64]) -> BandedSym {
        let mut m = BandedSym::zeros(self.num_nodes(), self.bandwidth());
        let nl = self.local_nodes();
        let nq = self.quad.weights.len();
        for (ei, e) in self.elements.iter().enumerate() {
            for k in 0..nl {
                let Some(i) = e.nodes[k] else { continue };
                for l in 0..=k {
                    let Some(j) = e.nodes[l] else { continue };
                    let mut val = 0.0;
                    for (q, (b, w)) in self.quad.bary.iter().zip(&self.quad.weights).enumerate() {
                        val += w * weights[ei * nq + q] * b[k] * b[l];
                    }
                    m.add(i, j, e.measure * val);
                }
            }
        }
        m
    }

    /// Load vector `∫ w φ_i` with `w` sampled at quadrature points (element-major).
    pub fn assemble_load(&self, weights: &[f64]) -> DVector<f64> {
        let mut out = DVector::zeros(self.num_nodes());
        let nl = self.local_nodes();
        let nq = self.quad.weights.len();
        for (ei, e) in self.elements.iter().enumerate() {
            for k in 0..nl {
                let Some(i) = e.nodes[k] else { continue };
                let mut val = 0.0;
                for (q, (b, w)) in self.quad.bary.iter().zip(&self.quad.weights).enumerate() {
                    val += w * weights[ei * nq + q] * b[k];
                }
                out[i] += e.measure * val;
            }
        }
        out
    }

    /// Discrete Dirichlet eigenvalue `λ_k` of the 1D stiffness/mass pencil,
    /// `k ≥ 1`. Also valid per axis on rectangles.
    pub fn discrete_dirichlet_eigenvalue_1d(n_per_axis: usize, length: f64, k: usize) -> f64 {
        let h = length / (n_per_axis + 1) as f64;
        let c = (k as f64 * PI * h / length).cos();
        6.0 / (h * h) * (1.0 - c) / (2.0 + c)
    }
}

/// Gradients of the barycentric coordinates and the area of a triangle.
fn triangle_gradients(v: &[[f64; 2]; 3]) -> ([[f64; 2]; 3], f64) {
    let det = (v[1][0] - v[0][0]) * (v[2][1] - v[0][1]) - (v[2][0] - v[0][0]) * (v[1][1] - v[0][1]);
    let mut g = [[0.0; 2]; 3];
    for k in 0..3 {
        let a = v[(k + 1) % 3];
        let b = v[(k + 2) % 3];
        g[k] = [(a[1] - b[1]) / det, (b[0] - a[0]) / det];
    }
    (g, 0.5 * det.abs())
}

/// Gauss–Legendre nodes and weights on `[-1, 1]`.
pub fn gauss_legendre(k: usize) -> (Vec<f64>, Vec<f64>) {
    let mut x = vec![0.0; k];
    let mut w = vec![0.0; k];
    for i in 0..k {
        let mut z = (PI * (i as f64 + 0.75) / (k as f64 + 0.5)).cos();
        let mut dp = 1.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, z);
            for m in 2..=k {
                let p2 = ((2 * m - 1) as f64 * z * p1 - (m - 1) as f64 * p0) / m as f64;
                p0 = p1;
                p1 = p2;
            }
            dp = k as f64 * (z * p1 - p0) / (z * z - 1.0);
            let dz = p1 / dp;
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        x[i] = z;
        w[i] = 2.0 / ((1.0 - z * z) * dp * dp);
    }
    (x, w)
}

fn interval_rule(order: usize) -> QuadRule {
    let k = (order + 2) / 2;
    let (x, w) = gauss_legendre(k);
    QuadRule {
        bary: x.iter().map(|&z| [0.5 * (1.0 - z), 0.5 * (1.0 + z), 0.0]).collect(),
        weights: w.iter().map(|&c| 0.5 * c).collect(),
    }
}

/// Collapsed (Duffy) product rule on the reference triangle.
fn triangle_rule(order: usize) -> QuadRule {
    let k = (order + 3) / 2;
    let (x, w) = gauss_legendre(k);
    let mut bary = Vec::with_capacity(k * k);
    let mut weights = Vec::with_capacity(k * k);
    for (xa, wa) in x.iter().zip(&w) {
        let a = 0.5 * (1.0 + xa);
        for (xb, wb) in x.iter().zip(&w) {
            let b = 0.5 * (1.0 + xb);
            let (s, t) = (a, b * (1.0 - a));
            bary.push([1.0 - s - t, s, t]);
            // 1/4 from the two interval maps, 2 to normalise the reference area
            weights.push(0.5 * wa * wb * (1.0 - a));
        }
    }
    QuadRule { bary, weights }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridFunction {
    pub mesh: Arc<Mesh>,
    pub values: DVector<f64>,
}

impl GridFunction {
    pub fn new(mesh: Arc<Mesh>, values: DVector<f64>) -> Result<Self> {
        if values.len() != mesh.num_nodes() {
            return Err(Error::Shape(format!(
                "{} coefficients for {} nodes",
                values.len(),
                mesh.num_nodes()
            )));
        }
        Ok(Self { mesh, values })
    }

    pub fn zeros(mesh: Arc<Mesh>) -> Self {
        let n = mesh.num_nodes();
        Self {
            mesh,
            values: DVector::zeros(n),
        }
    }

    pub fn norm(&self, kind: NormKind) -> Result<f64> {
        self.mesh.norm_of(self.values.as_slice(), kind)
    }
}

pub fn norm(g: &GridFunction, kind: NormKind) -> Result<f64> {
    g.norm(kind)
}

/// A pair `(u, v)`. Both components live on the same grid.
#[derive(Debug, Clone, PartialEq)]
pub struct State {
    pub u: GridFunction,
    pub v: GridFunction,
}

impl State {
    pub fn new(u: GridFunction, v: GridFunction) -> Result<Self> {
        if !u.mesh.compatible(&v.mesh) {
            return Err(Error::Shape("u and v must share one grid".into()));
        }
        Ok(Self { u, v })
    }

    pub fn zeros(mesh: Arc<Mesh>) -> Self {
        Self {
            u: GridFunction::zeros(mesh.clone()),
            v: GridFunction::zeros(mesh),
        }
    }

    /// Stacked coefficients `[u; v]`.
    pub fn to_flat(&self) -> DVector<f64> {
        let n = self.u.values.len();
        let mut x = DVector::zeros(2 * n);
        x.rows_mut(0, n).copy_from(&self.u.values);
        x.rows_mut(n, n).copy_from(&self.v.values);
        x
    }

    pub fn from_flat(mesh: Arc<Mesh>, x: &DVector<f64>) -> Result<Self> {
        let n = mesh.num_nodes();
        if x.len() != 2 * n {
            return Err(Error::Shape(format!("flat state of length {} for {n} nodes", x.len())));
        }
        Ok(Self {
            u: GridFunction {
                mesh: mesh.clone(),
                values: x.rows(0, n).into_owned(),
            },
            v: GridFunction {
                mesh,
                values: x.rows(n, n).into_owned(),
            },
        })
    }
}
