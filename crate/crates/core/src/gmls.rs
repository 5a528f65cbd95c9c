//! Local weighted least-squares machinery.
//!
//! Every stencil here comes from one weighted polynomial fit. With sample
//! matrix `P` (rows = basis values at the sample sites), weights `W` and Gram
//! matrix `M = P^T W P`, the fitted coefficients are `b = M^{-1} P^T W l` for
//! sample vector `l`. A linear functional `r` of the fit (`r . b`) is then the
//! sample combination `a . l` with `a = W P M^{-1} r`, which is how stencil
//! coefficients are extracted without ever forming `M^{-1}`.
//!
//! The staggered fit samples the edge data `mu_ij (phi_j - phi_i)` at the edge
//! midpoints with a basis that vanishes at the centre; one quarter of the
//! fitted Laplacian at the centre approximates `div(mu grad phi)` and one half
//! of the fitted gradient approximates the flux `mu grad phi`.

use nalgebra::{DMatrix, DVector};

use crate::basis::TaylorBasis;
use crate::error::{Error, Result};
use crate::geometry::{norm, Point};
use crate::neighbors::Neighborhood;

/// Largest accepted condition estimate of an equilibrated local Gram matrix.
pub const DEFAULT_CONDITION_LIMIT: f64 = 1e12;

/// Which equation an [`OperatorRow`] contributes to the global system.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RowEquation {
    /// `sum beta_ij (phi_j - phi_i) = -f_i`
    Divergence,
    /// `sum beta_ij (phi_j - phi_i) + gamma_i g_i = -f_i`
    NeumannConstrained,
    /// Boundary condition imposed as its own equation:
    /// `sum beta_ij (phi_j - phi_i) + gamma_i g_i = 0`
    NeumannCollocation,
}

/// Difference-form stencil `sum_j beta_ij (phi_j - phi_i) + gamma_i g_i`.
#[derive(Clone, Debug, PartialEq)]
pub struct OperatorRow {
    pub center: usize,
    pub neighbors: Vec<usize>,
    pub coefficients: Vec<f64>,
    /// Always `-sum_j beta_ij`.
    pub diagonal: f64,
    /// Coefficient of the Neumann datum; zero on unconstrained rows.
    pub rhs_coeff: f64,
    pub equation: RowEquation,
    /// Condition estimate of the local fit.
    pub condition: f64,
}

impl OperatorRow {
    fn new(center: usize, neighbors: Vec<usize>, coefficients: Vec<f64>, rhs_coeff: f64, equation: RowEquation, condition: f64) -> Self {
        let diagonal = -coefficients.iter().sum::<f64>();
        OperatorRow {
            center,
            neighbors,
            coefficients,
            diagonal,
            rhs_coeff,
            equation,
            condition,
        }
    }

    /// Evaluates the row on a global field `phi` with Neumann datum `g`.
    pub fn apply(&self, phi: &[f64], g: f64) -> f64 {
        let pi = phi[self.center];
        let mut acc = 0.0;
        for (&j, &beta) in self.neighbors.iter().zip(&self.coefficients) {
            acc += beta * (phi[j] - pi);
        }
        acc + self.rhs_coeff * g
    }
}

/// Maps edge differences to the reconstructed flux `mu grad phi` at the centre.
#[derive(Clone, Debug, PartialEq)]
pub struct FluxRow {
    pub center: usize,
    pub neighbors: Vec<usize>,
    pub coefficients: Vec<Point>,
    pub rhs_coeff: Point,
}

impl FluxRow {
    pub fn apply(&self, phi: &[f64], g: f64) -> Point {
        let pi = phi[self.center];
        let mut out = [self.rhs_coeff[0] * g, self.rhs_coeff[1] * g, self.rhs_coeff[2] * g];
        for (&j, c) in self.neighbors.iter().zip(&self.coefficients) {
            let d = phi[j] - pi;
            out[0] += c[0] * d;
            out[1] += c[1] * d;
            out[2] += c[2] * d;
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Stencil {
    pub operator: OperatorRow,
    pub flux: FluxRow,
}

/// Topological gradient: `u_ij = phi_j - phi_i` on every edge.
pub fn topological_gradient(phi_center: f64, phi_neighbors: &[f64]) -> Vec<f64> {
    phi_neighbors.iter().map(|&pj| pj - phi_center).collect()
}

/// Weighted polynomial fit over a fixed set of sample sites.
pub(crate) struct WeightedFit {
    /// Row `j` holds the basis evaluated at sample site `j`.
    samples: DMatrix<f64>,
    weights: Vec<f64>,
    /// Symmetric equilibration `D = diag(M)^{-1/2}`.
    scaling: DVector<f64>,
    lu: nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>,
    pub condition: f64,
}

/// `max |U_kk| / min |U_kk|` of an LU factorization.
fn lu_condition(lu: &nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>) -> f64 {
    let u = lu.u();
    let (mut lo, mut hi) = (f64::INFINITY, 0.0f64);
    for k in 0..u.nrows() {
        let v = u[(k, k)].abs();
        lo = lo.min(v);
        hi = hi.max(v);
    }
    if lo > 0.0 && hi.is_finite() {
        hi / lo
    } else {
        f64::INFINITY
    }
}

impl WeightedFit {
    pub(crate) fn new(basis: &TaylorBasis, sites: &[Point], weights: &[f64], point: usize, limit: f64) -> Result<Self> {
        let q = basis.len();
        let n = sites.len();
        if n < q {
            return Err(Error::StencilDeficient {
                point,
                count: n,
                required: q,
            });
        }
        let mut samples = DMatrix::zeros(n, q);
        let mut row = vec![0.0; q];
        for (j, x) in sites.iter().enumerate() {
            basis.eval_into(x, &mut row);
            for (k, v) in row.iter().enumerate() {
                samples[(j, k)] = *v;
            }
        }
        let mut weighted = samples.clone();
        for (j, w) in weights.iter().enumerate() {
            weighted.row_mut(j).scale_mut(w.sqrt());
        }
        let mut gram = weighted.tr_mul(&weighted);
        let scaling = DVector::from_iterator(
            q,
            (0..q).map(|k| {
                let d = gram[(k, k)];
                if d > 0.0 {
                    1.0 / d.sqrt()
                } else {
                    1.0
                }
            }),
        );
        for a in 0..q {
            for b in 0..q {
                gram[(a, b)] *= scaling[a] * scaling[b];
            }
        }
        let lu = gram.lu();
        let condition = lu_condition(&lu);
        if !(condition <= limit) {
            return Err(Error::IllConditioned {
                point,
                estimate: condition,
            });
        }
        Ok(WeightedFit {
            samples,
            weights: weights.to_vec(),
            scaling,
            lu,
            condition,
        })
    }

    /// `M^{-1} rhs`.
    pub(crate) fn solve_gram(&self, rhs: &DVector<f64>) -> DVector<f64> {
        let scaled = rhs.component_mul(&self.scaling);
        let z = self.lu.solve(&scaled).expect("factorization checked at construction");
        z.component_mul(&self.scaling)
    }

    /// Sample weights `a = W P M^{-1} r` such that `r . b(l) = a . l`.
    pub(crate) fn functional_weights(&self, target: &[f64]) -> Vec<f64> {
        let z = self.solve_gram(&DVector::from_column_slice(target));
        let pz = &self.samples * z;
        pz.iter().zip(&self.weights).map(|(v, w)| v * w).collect()
    }

    /// Fitted coefficients `b = M^{-1} P^T W l`.
    pub(crate) fn coefficients(&self, values: &[f64]) -> DVector<f64> {
        let wl = DVector::from_iterator(values.len(), values.iter().zip(&self.weights).map(|(v, w)| v * w));
        self.solve_gram(&self.samples.tr_mul(&wl))
    }

    /// Sample weights for functionals of the fit constrained by `c . b = s`.
    ///
    /// Returns, for each target `r`, the pair `(a, e)` with
    /// `r . b = a . l + e s`, where `b` solves the saddle system
    /// `[[M, c], [c^T, 0]] [b; lambda] = [P^T W l; s]`.
    pub(crate) fn constrained_weights(&self, constraint: &[f64], targets: &[Vec<f64>], point: usize, limit: f64) -> Result<Vec<(Vec<f64>, f64)>> {
        let q = self.scaling.len();
        let gram = {
            let mut weighted = self.samples.clone();
            for (j, w) in self.weights.iter().enumerate() {
                weighted.row_mut(j).scale_mut(w.sqrt());
            }
            weighted.tr_mul(&weighted)
        };
        let border: Vec<f64> = (0..q).map(|k| constraint[k] * self.scaling[k]).collect();
        let border_norm = border.iter().map(|v| v * v).sum::<f64>().sqrt();
        if !(border_norm > 0.0) {
            return Err(Error::SingularConstraint { point });
        }
        let c = 1.0 / border_norm;
        let mut saddle = DMatrix::zeros(q + 1, q + 1);
        for a in 0..q {
            for b in 0..q {
                saddle[(a, b)] = gram[(a, b)] * self.scaling[a] * self.scaling[b];
            }
            saddle[(a, q)] = border[a] * c;
            saddle[(q, a)] = border[a] * c;
        }
        let lu = saddle.lu();
        let condition = lu_condition(&lu);
        if !(condition <= limit) {
            return Err(Error::SingularConstraint { point });
        }
        let mut out = Vec::with_capacity(targets.len());
        for r in targets {
            // y = S K~^{-1} S [r; 0] with S = diag(D, c); K is symmetric.
            let mut rhs = DVector::zeros(q + 1);
            for k in 0..q {
                rhs[k] = r[k] * self.scaling[k];
            }
            let y = lu.solve(&rhs).ok_or(Error::SingularConstraint { point })?;
            let yq = DVector::from_iterator(q, (0..q).map(|k| y[k] * self.scaling[k]));
            let py = &self.samples * yq;
            let a = py.iter().zip(&self.weights).map(|(v, w)| v * w).collect();
            out.push((a, y[q] * c));
        }
        Ok(out)
    }
}

fn midpoint_fit(nbhd: &Neighborhood, basis: &TaylorBasis, limit: f64) -> Result<WeightedFit> {
    WeightedFit::new(basis, &nbhd.midpoints, &nbhd.weights, nbhd.center, limit)
}

fn check_mu(nbhd: &Neighborhood, mu_edge: &[f64]) -> Result<()> {
    if mu_edge.len() != nbhd.len() {
        return Err(Error::SizeMismatch {
            what: "edge coefficients",
            expected: nbhd.len(),
            got: mu_edge.len(),
        });
    }
    Ok(())
}

fn gradient_targets(basis: &TaylorBasis) -> Vec<Vec<f64>> {
    let grad = basis.gradient_at_center();
    (0..basis.dim).map(|k| grad.iter().map(|g| g[k]).collect()).collect()
}

/// Staggered divergence-of-flux stencil at an interior (or Dirichlet) point.
///
/// `basis` must exclude the constant. `mu_edge[k]` is the edge coefficient
/// `mu_ij` for the `k`-th neighbor.
pub fn staggered_stencil(nbhd: &Neighborhood, basis: &TaylorBasis, mu_edge: &[f64], limit: f64) -> Result<Stencil> {
    check_mu(nbhd, mu_edge)?;
    let fit = midpoint_fit(nbhd, basis, limit)?;
    let lap = fit.functional_weights(&basis.laplacian_at_center());
    let coefficients = lap.iter().zip(mu_edge).map(|(a, mu)| 0.25 * mu * a).collect();
    let grads: Vec<Vec<f64>> = gradient_targets(basis)
        .iter()
        .map(|t| fit.functional_weights(t))
        .collect();
    let flux = (0..nbhd.len())
        .map(|j| {
            let mut c = [0.0; 3];
            for (k, g) in grads.iter().enumerate() {
                c[k] = 0.5 * mu_edge[j] * g[j];
            }
            c
        })
        .collect();
    Ok(Stencil {
        operator: OperatorRow::new(nbhd.center, nbhd.neighbors.clone(), coefficients, 0.0, RowEquation::Divergence, fit.condition),
        flux: FluxRow {
            center: nbhd.center,
            neighbors: nbhd.neighbors.clone(),
            coefficients: flux,
            rhs_coeff: [0.0; 3],
        },
    })
}

/// Staggered stencil at a Neumann point: the fit is constrained so that
/// `n . grad p(x_i) = 2 g`, making the row affine in the flux datum `g`.
pub fn staggered_stencil_neumann(
    nbhd: &Neighborhood,
    basis: &TaylorBasis,
    mu_edge: &[f64],
    normal: &Point,
    limit: f64,
) -> Result<Stencil> {
    check_mu(nbhd, mu_edge)?;
    let constraint = basis.normal_derivative_at_center(normal)?;
    let fit = midpoint_fit(nbhd, basis, limit)?;
    let mut targets = vec![basis.laplacian_at_center()];
    targets.extend(gradient_targets(basis));
    let solved = fit.constrained_weights(&constraint, &targets, nbhd.center, limit)?;

    let (lap, lap_g) = &solved[0];
    let coefficients = lap.iter().zip(mu_edge).map(|(a, mu)| 0.25 * mu * a).collect();
    // the constraint value is 2 g
    let gamma = 0.25 * 2.0 * lap_g;

    let mut flux = vec![[0.0; 3]; nbhd.len()];
    let mut flux_g = [0.0; 3];
    for (k, (a, e)) in solved[1..].iter().enumerate() {
        for j in 0..nbhd.len() {
            flux[j][k] = 0.5 * mu_edge[j] * a[j];
        }
        flux_g[k] = 0.5 * 2.0 * e;
    }
    Ok(Stencil {
        operator: OperatorRow::new(nbhd.center, nbhd.neighbors.clone(), coefficients, gamma, RowEquation::NeumannConstrained, fit.condition),
        flux: FluxRow {
            center: nbhd.center,
            neighbors: nbhd.neighbors.clone(),
            coefficients: flux,
            rhs_coeff: flux_g,
        },
    })
}

/// Point-value fit over the neighbors and the centre itself, weighted by the
/// kernel at the full edge length.
fn point_value_fit(nbhd: &Neighborhood, basis: &TaylorBasis, limit: f64) -> Result<WeightedFit> {
    let mut sites = Vec::with_capacity(nbhd.len() + 1);
    let mut weights = Vec::with_capacity(nbhd.len() + 1);
    sites.push(nbhd.center_position);
    weights.push(nbhd.kernel.eval(0.0));
    let x = nbhd.center_position;
    for k in 0..nbhd.len() {
        let e = nbhd.edge(k);
        sites.push([x[0] + e[0], x[1] + e[1], x[2] + e[2]]);
        weights.push(nbhd.kernel.eval(norm(&e)));
    }
    if weights.iter().filter(|&&w| w > 0.0).count() < basis.len() {
        return Err(Error::StencilDeficient {
            point: nbhd.center,
            count: weights.iter().filter(|&&w| w > 0.0).count(),
            required: basis.len(),
        });
    }
    WeightedFit::new(basis, &sites, &weights, nbhd.center, limit)
}

/// Collocated GMLS Laplacian from point values; `basis` must include the constant.
///
/// Constants are reproduced, so the weights sum to zero and the stencil is
/// written on differences `phi_j - phi_i` like the staggered one.
pub fn collocated_laplacian_stencil(nbhd: &Neighborhood, basis: &TaylorBasis, limit: f64) -> Result<OperatorRow> {
    let fit = point_value_fit(nbhd, basis, limit)?;
    let a = fit.functional_weights(&basis.laplacian_at_center());
    Ok(OperatorRow::new(nbhd.center, nbhd.neighbors.clone(), a[1..].to_vec(), 0.0, RowEquation::Divergence, fit.condition))
}

/// Collocated GMLS derivative weights: rows for `grad` (one per axis) and `Delta`.
pub fn collocated_derivative_weights(nbhd: &Neighborhood, basis: &TaylorBasis, limit: f64) -> Result<(Vec<Vec<f64>>, Vec<f64>)> {
    let fit = point_value_fit(nbhd, basis, limit)?;
    let grads = gradient_targets(basis)
        .iter()
        .map(|t| fit.functional_weights(t)[1..].to_vec())
        .collect();
    let lap = fit.functional_weights(&basis.laplacian_at_center())[1..].to_vec();
    Ok((grads, lap))
}

/// Collocated discretization of `div(mu grad phi) = mu Delta phi + grad mu . grad phi`
/// with the GMLS gradient of the sampled `mu`. With `normal` set the row is the
/// boundary equation `mu_i n . grad phi = g` instead.
pub fn collocated_stencil(
    nbhd: &Neighborhood,
    basis: &TaylorBasis,
    mu_center: f64,
    mu_neighbors: &[f64],
    normal: Option<&Point>,
    limit: f64,
) -> Result<Stencil> {
    check_mu(nbhd, mu_neighbors)?;
    let fit = point_value_fit(nbhd, basis, limit)?;
    let lap = &fit.functional_weights(&basis.laplacian_at_center())[1..];
    let grads: Vec<Vec<f64>> = gradient_targets(basis)
        .iter()
        .map(|t| fit.functional_weights(t)[1..].to_vec())
        .collect();
    let n = nbhd.len();
    let flux: Vec<Point> = (0..n)
        .map(|j| {
            let mut c = [0.0; 3];
            for (k, g) in grads.iter().enumerate() {
                c[k] = mu_center * g[j];
            }
            c
        })
        .collect();
    let (coefficients, gamma, equation) = match normal {
        Some(nv) => {
            let len = norm(nv);
            if (len - 1.0).abs() > 1e-12 {
                return Err(Error::NotUnitNormal(len));
            }
            let c = flux.iter().map(|f| f[0] * nv[0] + f[1] * nv[1] + f[2] * nv[2]).collect();
            (c, -1.0, RowEquation::NeumannCollocation)
        }
        None => {
            let mut grad_mu = [0.0; 3];
            for (k, g) in grads.iter().enumerate() {
                grad_mu[k] = g.iter().zip(mu_neighbors).map(|(a, mu)| a * (mu - mu_center)).sum();
            }
            let c = (0..n)
                .map(|j| mu_center * lap[j] + (0..grads.len()).map(|k| grad_mu[k] * grads[k][j]).sum::<f64>())
                .collect();
            (c, 0.0, RowEquation::Divergence)
        }
    };
    Ok(Stencil {
        operator: OperatorRow::new(nbhd.center, nbhd.neighbors.clone(), coefficients, gamma, equation, fit.condition),
        flux: FluxRow {
            center: nbhd.center,
            neighbors: nbhd.neighbors.clone(),
            coefficients: flux,
            rhs_coeff: [0.0; 3],
        },
    })
}

/// Fitted coefficients `b` of the staggered fit to edge samples `l_ij`.
pub fn fit_coefficients(nbhd: &Neighborhood, basis: &TaylorBasis, samples: &[f64], limit: f64) -> Result<Vec<f64>> {
    if samples.len() != nbhd.len() {
        return Err(Error::SizeMismatch {
            what: "edge samples",
            expected: nbhd.len(),
            got: samples.len(),
        });
    }
    let fit = midpoint_fit(nbhd, basis, limit)?;
    Ok(fit.coefficients(samples).iter().copied().collect())
}

/// Vector field value and divergence at the centre from the directional
/// samples `u_ij = u(x_ij) . 2 m_ij`: returns `(Delta p / 4, grad p / 2)` of the
/// weighted fit `p` to the samples.
pub fn gmls_divergence_from_directional_samples(
    nbhd: &Neighborhood,
    basis: &TaylorBasis,
    samples: &[f64],
    limit: f64,
) -> Result<(f64, Point)> {
    let b = fit_coefficients(nbhd, basis, samples, limit)?;
    let div = 0.25 * basis.laplacian_at_center().iter().zip(&b).map(|(r, c)| r * c).sum::<f64>();
    let mut vec = [0.0; 3];
    for (g, c) in basis.gradient_at_center().iter().zip(&b) {
        for k in 0..3 {
            vec[k] += 0.5 * g[k] * c;
        }
    }
    Ok((div, vec))
}
