//! Scaled, shifted Taylor monomials `p_a(x) = ((x - x_i) / eps)^a / a!`.
//!
//! Multi-indices are listed in graded-lexicographic order: by total degree,
//! then by decreasing exponent of the leading coordinate. For `d = 2, m = 2`
//! this is `(1,0), (0,1), (2,0), (1,1), (0,2)`, preceded by `(0,0)` when the
//! constant is included.

use crate::error::{Error, Result};
use crate::geometry::Point;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct MultiIndex {
    pub exponents: [u32; 3],
}

impl MultiIndex {
    pub fn order(&self) -> u32 {
        self.exponents.iter().sum()
    }

    pub fn factorial(&self) -> f64 {
        self.exponents
            .iter()
            .map(|&e| (1..=e).map(f64::from).product::<f64>())
            .product()
    }
}

/// All multi-indices of total degree `k` in `dim` variables, first exponent descending.
fn indices_of_degree(k: u32, dim: usize) -> Vec<MultiIndex> {
    let mut out = Vec::new();
    match dim {
        2 => {
            for a in (0..=k).rev() {
                out.push(MultiIndex {
                    exponents: [a, k - a, 0],
                });
            }
        }
        3 => {
            for a in (0..=k).rev() {
                for b in (0..=k - a).rev() {
                    out.push(MultiIndex {
                        exponents: [a, b, k - a - b],
                    });
                }
            }
        }
        _ => unreachable!("dimension checked by the constructor"),
    }
    out
}

#[derive(Clone, Debug, PartialEq)]
pub struct TaylorBasis {
    pub center: Point,
    pub scale: f64,
    pub degree: usize,
    pub dim: usize,
    pub include_constant: bool,
    indices: Vec<MultiIndex>,
    inv_factorials: Vec<f64>,
}

impl TaylorBasis {
    pub fn new(center: Point, scale: f64, degree: usize, dim: usize, include_constant: bool) -> Result<Self> {
        if dim != 2 && dim != 3 {
            return Err(Error::InvalidArgument(format!("dimension must be 2 or 3, got {dim}")));
        }
        if !(scale > 0.0) {
            return Err(Error::InvalidArgument(format!("basis scale must be positive, got {scale}")));
        }
        let first = if include_constant { 0 } else { 1 };
        let indices: Vec<MultiIndex> = (first..=degree as u32)
            .flat_map(|k| indices_of_degree(k, dim))
            .collect();
        if indices.is_empty() {
            return Err(Error::InvalidArgument("empty polynomial basis".into()));
        }
        let inv_factorials = indices.iter().map(|a| 1.0 / a.factorial()).collect();
        Ok(TaylorBasis {
            center,
            scale,
            degree,
            dim,
            include_constant,
            indices,
            inv_factorials,
        })
    }

    /// Basis of polynomials of degree `<= m` vanishing at `center`.
    pub fn staggered(center: Point, scale: f64, degree: usize, dim: usize) -> Result<Self> {
        Self::new(center, scale, degree, dim, false)
    }

    /// Full basis of polynomials of degree `<= m`.
    pub fn collocated(center: Point, scale: f64, degree: usize, dim: usize) -> Result<Self> {
        Self::new(center, scale, degree, dim, true)
    }

    /// Dimension of the staggered space, `C(m + d, d) - 1`.
    pub fn staggered_size(degree: usize, dim: usize) -> usize {
        (0..dim).fold(1, |acc, t| acc * (degree + dim - t) / (t + 1)) - 1
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn indices(&self) -> &[MultiIndex] {
        &self.indices
    }

    pub fn eval_row(&self, x: &Point) -> Vec<f64> {
        let mut row = vec![0.0; self.len()];
        self.eval_into(x, &mut row);
        row
    }

    pub fn eval_into(&self, x: &Point, row: &mut [f64]) {
        let m = self.degree;
        // powers[c][k] = ((x - x_i)_c / eps)^k
        let mut powers = [[1.0f64; 8]; 3];
        for c in 0..self.dim {
            let t = (x[c] - self.center[c]) / self.scale;
            for k in 1..=m {
                powers[c][k] = powers[c][k - 1] * t;
            }
        }
        for (slot, (a, inv)) in row.iter_mut().zip(self.indices.iter().zip(&self.inv_factorials)) {
            let e = a.exponents;
            *slot = inv * powers[0][e[0] as usize] * powers[1][e[1] as usize] * powers[2][e[2] as usize];
        }
    }

    /// `Delta p_a(x_i)`: `1/eps^2` for `a = 2 e_k`, zero otherwise.
    pub fn laplacian_at_center(&self) -> Vec<f64> {
        let s = 1.0 / (self.scale * self.scale);
        self.indices
            .iter()
            .map(|a| {
                if a.order() == 2 && a.exponents.contains(&2) {
                    s
                } else {
                    0.0
                }
            })
            .collect()
    }

    /// `grad p_a(x_i)`: `e_k / eps` for `a = e_k`, zero otherwise.
    pub fn gradient_at_center(&self) -> Vec<Point> {
        let s = 1.0 / self.scale;
        self.indices
            .iter()
            .map(|a| {
                let mut g = [0.0; 3];
                if a.order() == 1 {
                    let k = a.exponents.iter().position(|&e| e == 1).unwrap();
                    g[k] = s;
                }
                g
            })
            .collect()
    }

    pub fn normal_derivative_at_center(&self, n: &Point) -> Result<Vec<f64>> {
        let len = (n[0] * n[0] + n[1] * n[1] + n[2] * n[2]).sqrt();
        if (len - 1.0).abs() > 1e-12 {
            return Err(Error::NotUnitNormal(len));
        }
        Ok(self
            .gradient_at_center()
            .iter()
            .map(|g| g[0] * n[0] + g[1] * n[1] + g[2] * n[2])
            .collect())
    }
}
