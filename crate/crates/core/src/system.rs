//! Global assembly and solution.
//!
//! Sign convention: the assembled rows discretize `div(mu grad phi)`, so for
//! `-div(mu grad phi) = f` the right-hand side of an interior row is `-f`.
//! Dirichlet rows are identity rows holding the boundary value.

use std::io::Write;
use std::time::{Duration, Instant};

use faer::prelude::Solve;
use faer::sparse::{SparseColMat, Triplet};
use rayon::prelude::*;

use crate::basis::TaylorBasis;
use crate::error::{Error, Result};
use crate::geometry::{Point, PointCloud, PointKind};
use crate::gmls::{self, RowEquation, Stencil, DEFAULT_CONDITION_LIMIT};
use crate::neighbors::{build_neighborhood, select_epsilon, KernelFamily, SpatialIndex, DEFAULT_SAFETY};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Scheme {
    #[default]
    Staggered,
    /// Point-value GMLS of `mu Delta phi + grad mu . grad phi`, kept as a baseline.
    Collocated,
}

/// How the edge coefficient `mu_ij` is formed from the point values.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum EdgeMean {
    #[default]
    Arithmetic,
    Harmonic,
}

impl EdgeMean {
    pub fn combine(self, a: f64, b: f64) -> f64 {
        match self {
            EdgeMean::Arithmetic => 0.5 * (a + b),
            EdgeMean::Harmonic => 2.0 * a * b / (a + b),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StencilConfig {
    pub degree: usize,
    pub scheme: Scheme,
    pub kernel: KernelFamily,
    /// `epsilon = multiplier * h` when set, otherwise chosen from the degree.
    pub epsilon_multiplier: Option<f64>,
    pub safety: f64,
    pub condition_limit: f64,
    /// Each retry enlarges epsilon by 1.25.
    pub max_retries: usize,
    pub edge_mean: EdgeMean,
}

impl StencilConfig {
    pub fn new(degree: usize) -> Self {
        StencilConfig {
            degree,
            scheme: Scheme::Staggered,
            kernel: KernelFamily::WendlandC2,
            epsilon_multiplier: None,
            safety: DEFAULT_SAFETY,
            condition_limit: DEFAULT_CONDITION_LIMIT,
            max_retries: 3,
            edge_mean: EdgeMean::Arithmetic,
        }
    }

    pub fn collocated(degree: usize) -> Self {
        StencilConfig {
            scheme: Scheme::Collocated,
            ..Self::new(degree)
        }
    }

    pub fn base_epsilon(&self, cloud: &PointCloud) -> Result<f64> {
        match self.epsilon_multiplier {
            Some(c) if c > 0.0 => Ok(c * cloud.h),
            Some(c) => Err(Error::InvalidArgument(format!("epsilon multiplier must be positive, got {c}"))),
            None => select_epsilon(self.degree, cloud.dim, cloud.h, self.safety),
        }
    }
}

/// Stencils for every point of a cloud.
///
/// Non-Dirichlet points always carry a stencil. Dirichlet points get one when
/// it can be built (it is only used to report the flux there).
#[derive(Clone, Debug)]
pub struct StencilSet {
    pub stencils: Vec<Option<Stencil>>,
    /// Support radius actually used per point (after retries).
    pub epsilons: Vec<f64>,
    pub mu: Vec<f64>,
    pub config: StencilConfig,
}

impl StencilSet {
    pub fn retried(&self, base: f64) -> usize {
        self.epsilons.iter().filter(|&&e| e > base * (1.0 + 1e-12)).count()
    }
}

fn build_one(
    cloud: &PointCloud,
    index: &SpatialIndex,
    mu: &[f64],
    i: usize,
    epsilon: f64,
    config: &StencilConfig,
) -> Result<Stencil> {
    let nb = build_neighborhood(index, cloud, i, epsilon, config.kernel, 0)?;
    let x = cloud.positions[i];
    let kind = cloud.kinds[i];
    let limit = config.condition_limit;
    match config.scheme {
        Scheme::Staggered => {
            let basis = TaylorBasis::staggered(x, epsilon, config.degree, cloud.dim)?;
            let mu_edge: Vec<f64> = nb.neighbors.iter().map(|&j| config.edge_mean.combine(mu[i], mu[j])).collect();
            match (kind, cloud.normals[i]) {
                (PointKind::NeumannBoundary, Some(n)) => gmls::staggered_stencil_neumann(&nb, &basis, &mu_edge, &n, limit),
                _ => gmls::staggered_stencil(&nb, &basis, &mu_edge, limit),
            }
        }
        Scheme::Collocated => {
            let basis = TaylorBasis::collocated(x, epsilon, config.degree, cloud.dim)?;
            let mu_nb: Vec<f64> = nb.neighbors.iter().map(|&j| mu[j]).collect();
            let normal = match kind {
                PointKind::NeumannBoundary => cloud.normals[i],
                _ => None,
            };
            gmls::collocated_stencil(&nb, &basis, mu[i], &mu_nb, normal.as_ref(), limit)
        }
    }
}

/// Builds the stencil of every point in parallel, enlarging epsilon by 1.25
/// on ill-conditioned or deficient fits.
pub fn build_stencils(cloud: &PointCloud, mu: &[f64], config: &StencilConfig) -> Result<StencilSet> {
    if mu.len() != cloud.len() {
        return Err(Error::SizeMismatch {
            what: "coefficient samples",
            expected: cloud.len(),
            got: mu.len(),
        });
    }
    if let Some(v) = mu.iter().find(|v| !(**v > 0.0) || !v.is_finite()) {
        return Err(Error::InvalidArgument(format!("coefficient must be positive and finite, got {v}")));
    }
    let base = config.base_epsilon(cloud)?;
    let max_eps = base * 1.25f64.powi(config.max_retries as i32);
    let index = SpatialIndex::build(cloud, max_eps.max(cloud.h))?;
    let built: Vec<(Result<Stencil>, f64)> = (0..cloud.len())
        .into_par_iter()
        .map(|i| {
            let mut eps = base;
            let mut attempt = 0;
            loop {
                match build_one(cloud, &index, mu, i, eps, config) {
                    Err(Error::IllConditioned { .. } | Error::StencilDeficient { .. } | Error::SingularConstraint { .. })
                        if attempt < config.max_retries =>
                    {
                        attempt += 1;
                        eps *= 1.25;
                    }
                    res => return (res, eps),
                }
            }
        })
        .collect();
    let mut stencils = Vec::with_capacity(cloud.len());
    let mut epsilons = Vec::with_capacity(cloud.len());
    for (i, (res, eps)) in built.into_iter().enumerate() {
        epsilons.push(eps);
        match res {
            Ok(s) => stencils.push(Some(s)),
            Err(_) if cloud.kinds[i] == PointKind::DirichletBoundary => stencils.push(None),
            Err(e) => return Err(e),
        }
    }
    Ok(StencilSet {
        stencils,
        epsilons,
        mu: mu.to_vec(),
        config: config.clone(),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RowKind {
    Dirichlet,
    Interior,
    Neumann,
    Pinned,
    /// Extra row of the mean-zero bordered system.
    MeanConstraint,
}

/// Square CSR system. `points` is the number of field unknowns; a bordered
/// system has one more row and column than that.
#[derive(Clone, Debug, PartialEq)]
pub struct SparseSystem {
    pub points: usize,
    pub row_ptr: Vec<usize>,
    pub col_idx: Vec<usize>,
    pub values: Vec<f64>,
    pub rhs: Vec<f64>,
    pub row_kinds: Vec<RowKind>,
}

impl SparseSystem {
    pub fn dim(&self) -> usize {
        self.rhs.len()
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row(&self, i: usize) -> (&[usize], &[f64]) {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        (&self.col_idx[r.clone()], &self.values[r])
    }

    pub fn identity(rhs: Vec<f64>) -> Self {
        let n = rhs.len();
        SparseSystem {
            points: n,
            row_ptr: (0..=n).collect(),
            col_idx: (0..n).collect(),
            values: vec![1.0; n],
            rhs,
            row_kinds: vec![RowKind::Dirichlet; n],
        }
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        (0..self.dim())
            .map(|i| {
                let (cols, vals) = self.row(i);
                cols.iter().zip(vals).map(|(&j, v)| v * x[j]).sum()
            })
            .collect()
    }

    /// `|A x - b| / |b|`, or `|A x|` when `b = 0`.
    pub fn relative_residual(&self, x: &[f64]) -> f64 {
        let ax = self.matvec(x);
        let r = ax.iter().zip(&self.rhs).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
        let b = norm2(&self.rhs);
        if b > 0.0 {
            r / b
        } else {
            r
        }
    }

    fn from_rows(points: usize, rows: Vec<Vec<(usize, f64)>>, rhs: Vec<f64>, row_kinds: Vec<RowKind>) -> Self {
        let mut row_ptr = Vec::with_capacity(rows.len() + 1);
        let mut col_idx = Vec::new();
        let mut values = Vec::new();
        row_ptr.push(0);
        for mut row in rows {
            row.sort_by_key(|e| e.0);
            for (j, v) in row {
                col_idx.push(j);
                values.push(v);
            }
            row_ptr.push(col_idx.len());
        }
        SparseSystem {
            points,
            row_ptr,
            col_idx,
            values,
            rhs,
            row_kinds,
        }
    }

    fn rows(&self) -> Vec<Vec<(usize, f64)>> {
        (0..self.dim())
            .map(|i| {
                let (c, v) = self.row(i);
                c.iter().copied().zip(v.iter().copied()).collect()
            })
            .collect()
    }

    /// MatrixMarket coordinate export (1-based indices).
    pub fn write_matrix_market<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "%%MatrixMarket matrix coordinate real general")?;
        writeln!(w, "{} {} {}", self.dim(), self.dim(), self.nnz())?;
        for i in 0..self.dim() {
            let (cols, vals) = self.row(i);
            for (j, v) in cols.iter().zip(vals) {
                writeln!(w, "{} {} {:.17e}", i + 1, j + 1, v)?;
            }
        }
        Ok(())
    }

    pub fn write_rhs_matrix_market<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "%%MatrixMarket matrix array real general")?;
        writeln!(w, "{} 1", self.dim())?;
        for b in &self.rhs {
            writeln!(w, "{b:.17e}")?;
        }
        Ok(())
    }
}

fn norm2(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Point samples of the problem data. Entries not relevant to a point's kind
/// are ignored (`u` on Dirichlet points, `g` on Neumann points, `f` elsewhere).
#[derive(Clone, Debug, PartialEq)]
pub struct ProblemData {
    pub f: Vec<f64>,
    pub u: Vec<f64>,
    pub g: Vec<f64>,
}

pub fn assemble(cloud: &PointCloud, stencils: &StencilSet, data: &ProblemData) -> Result<SparseSystem> {
    let n = cloud.len();
    for (what, len) in [
        ("stencils", stencils.stencils.len()),
        ("source samples", data.f.len()),
        ("Dirichlet samples", data.u.len()),
        ("Neumann samples", data.g.len()),
    ] {
        if len != n {
            return Err(Error::SizeMismatch {
                what,
                expected: n,
                got: len,
            });
        }
    }
    let mut rows = Vec::with_capacity(n);
    let mut rhs = Vec::with_capacity(n);
    let mut kinds = Vec::with_capacity(n);
    for i in 0..n {
        if cloud.kinds[i] == PointKind::DirichletBoundary {
            rows.push(vec![(i, 1.0)]);
            rhs.push(data.u[i]);
            kinds.push(RowKind::Dirichlet);
            continue;
        }
        let st = stencils.stencils[i].as_ref().ok_or(Error::MissingStencil(i))?;
        let op = &st.operator;
        if op.center != i {
            return Err(Error::MissingStencil(i));
        }
        let mut b = match op.equation {
            RowEquation::NeumannCollocation => 0.0,
            _ => -data.f[i],
        };
        if op.rhs_coeff != 0.0 {
            b -= op.rhs_coeff * data.g[i];
        }
        let mut row = Vec::with_capacity(op.neighbors.len() + 1);
        row.push((i, op.diagonal));
        for (&j, &beta) in op.neighbors.iter().zip(&op.coefficients) {
            if cloud.kinds[j] == PointKind::DirichletBoundary {
                b -= beta * data.u[j];
            } else {
                row.push((j, beta));
            }
        }
        rows.push(row);
        rhs.push(b);
        kinds.push(match cloud.kinds[i] {
            PointKind::NeumannBoundary => RowKind::Neumann,
            _ => RowKind::Interior,
        });
    }
    Ok(SparseSystem::from_rows(n, rows, rhs, kinds))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum NullSpaceStrategy {
    /// Replace row `i` by `phi_i = value`.
    PinPoint(usize, f64),
    /// Border the system with the constraint `sum phi = 0` and a multiplier
    /// that absorbs the incompatible part of the right-hand side.
    MeanZero,
}

pub fn fix_null_space(system: &SparseSystem, strategy: NullSpaceStrategy) -> Result<SparseSystem> {
    let n = system.points;
    match strategy {
        NullSpaceStrategy::PinPoint(i, value) => {
            if i >= n {
                return Err(Error::InvalidArgument(format!("pin index {i} out of range for {n} points")));
            }
            let mut rows = system.rows();
            let mut rhs = system.rhs.clone();
            let mut kinds = system.row_kinds.clone();
            rows[i] = vec![(i, 1.0)];
            rhs[i] = value;
            kinds[i] = RowKind::Pinned;
            Ok(SparseSystem::from_rows(system.points, rows, rhs, kinds))
        }
        NullSpaceStrategy::MeanZero => {
            if system.dim() != n {
                return Err(Error::InvalidArgument("system is already bordered".into()));
            }
            let mut rows = system.rows();
            for row in rows.iter_mut() {
                row.push((n, 1.0));
            }
            rows.push((0..n).map(|j| (j, 1.0)).collect());
            let mut rhs = system.rhs.clone();
            rhs.push(0.0);
            let mut kinds = system.row_kinds.clone();
            kinds.push(RowKind::MeanConstraint);
            Ok(SparseSystem::from_rows(n, rows, rhs, kinds))
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum SolverMethod {
    DirectLu,
    /// Restarted GMRES with right Jacobi preconditioning.
    IterativeKrylov { tol: f64, max_iter: usize },
}

impl SolverMethod {
    pub fn name(&self) -> &'static str {
        match self {
            SolverMethod::DirectLu => "direct-lu",
            SolverMethod::IterativeKrylov { .. } => "gmres-jacobi",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SolveReport {
    pub solver: &'static str,
    pub iterations: usize,
    /// Recomputed from the returned solution.
    pub relative_residual: f64,
    pub wall_time: Duration,
}

/// Solves the system; the returned vector has `system.points` entries
/// (a mean-zero multiplier is dropped).
pub fn solve(system: &SparseSystem, method: SolverMethod) -> Result<(Vec<f64>, SolveReport)> {
    let start = Instant::now();
    let (x, iterations) = match method {
        SolverMethod::DirectLu => (direct_lu(system)?, 1),
        SolverMethod::IterativeKrylov { tol, max_iter } => gmres(system, tol, max_iter, 50)?,
    };
    let relative_residual = system.relative_residual(&x);
    if !relative_residual.is_finite() || x.iter().any(|v| !v.is_finite()) {
        return Err(Error::SolverBreakdown {
            reason: "non-finite solution".into(),
            residual_history: vec![relative_residual],
        });
    }
    let report = SolveReport {
        solver: method.name(),
        iterations,
        relative_residual,
        wall_time: start.elapsed(),
    };
    let mut x = x;
    x.truncate(system.points);
    Ok((x, report))
}

fn direct_lu(system: &SparseSystem) -> Result<Vec<f64>> {
    let n = system.dim();
    let mut triplets = Vec::with_capacity(system.nnz());
    for i in 0..n {
        let (cols, vals) = system.row(i);
        for (&j, &v) in cols.iter().zip(vals) {
            triplets.push(Triplet::new(i, j, v));
        }
    }
    let mat = SparseColMat::<usize, f64>::try_new_from_triplets(n, n, &triplets).map_err(|e| Error::SolverBreakdown {
        reason: format!("matrix construction failed: {e:?}"),
        residual_history: Vec::new(),
    })?;
    let lu = mat.sp_lu().map_err(|e| Error::SolverBreakdown {
        reason: format!("sparse LU failed: {e:?}"),
        residual_history: Vec::new(),
    })?;
    let b = faer::Col::from_fn(n, |i| system.rhs[i]);
    let x = lu.solve(&b);
    Ok((0..n).map(|i| x[i]).collect())
}

/// Restarted GMRES(restart) with right Jacobi preconditioning.
fn gmres(system: &SparseSystem, tol: f64, max_iter: usize, restart: usize) -> Result<(Vec<f64>, usize)> {
    let n = system.dim();
    let inv_diag: Vec<f64> = (0..n)
        .map(|i| {
            let (cols, vals) = system.row(i);
            match cols.iter().position(|&j| j == i) {
                Some(k) if vals[k] != 0.0 => 1.0 / vals[k],
                _ => 1.0,
            }
        })
        .collect();
    let bnorm = norm2(&system.rhs);
    let mut x = vec![0.0; n];
    if bnorm == 0.0 {
        return Ok((x, 0));
    }
    let mut history = Vec::new();
    let mut iterations = 0;
    let restart = restart.min(n).max(1);
    loop {
        let ax = system.matvec(&x);
        let r: Vec<f64> = system.rhs.iter().zip(&ax).map(|(b, a)| b - a).collect();
        let beta = norm2(&r);
        let rel = beta / bnorm;
        history.push(rel);
        if rel <= tol {
            return Ok((x, iterations));
        }
        if iterations >= max_iter {
            return Err(Error::NotConverged {
                iterations,
                residual: rel,
                residual_history: history,
            });
        }
        let mut v: Vec<Vec<f64>> = vec![r.iter().map(|ri| ri / beta).collect()];
        let mut h = vec![vec![0.0; restart]; restart + 1];
        let (mut cs, mut sn) = (vec![0.0; restart], vec![0.0; restart]);
        let mut s = vec![0.0; restart + 1];
        s[0] = beta;
        let mut k_used = 0;
        for k in 0..restart {
            let z: Vec<f64> = v[k].iter().zip(&inv_diag).map(|(a, d)| a * d).collect();
            let mut w = system.matvec(&z);
            for (jj, vj) in v.iter().enumerate() {
                let hij = w.iter().zip(vj).map(|(a, b)| a * b).sum::<f64>();
                h[jj][k] = hij;
                for (wi, vi) in w.iter_mut().zip(vj) {
                    *wi -= hij * vi;
                }
            }
            let hnext = norm2(&w);
            h[k + 1][k] = hnext;
            for jj in 0..k {
                let t = cs[jj] * h[jj][k] + sn[jj] * h[jj + 1][k];
                h[jj + 1][k] = -sn[jj] * h[jj][k] + cs[jj] * h[jj + 1][k];
                h[jj][k] = t;
            }
            let denom = h[k][k].hypot(h[k + 1][k]);
            if denom == 0.0 {
                return Err(Error::SolverBreakdown {
                    reason: "zero Hessenberg column".into(),
                    residual_history: history,
                });
            }
            cs[k] = h[k][k] / denom;
            sn[k] = h[k + 1][k] / denom;
            h[k][k] = denom;
            h[k + 1][k] = 0.0;
            s[k + 1] = -sn[k] * s[k];
            s[k] *= cs[k];
            iterations += 1;
            k_used = k + 1;
            let est = s[k + 1].abs() / bnorm;
            history.push(est);
            if est <= 0.5 * tol || iterations >= max_iter || hnext <= 1e-300 {
                break;
            }
            v.push(w.iter().map(|wi| wi / hnext).collect());
        }
        // back substitution for the update coefficients
        let mut y = vec![0.0; k_used];
        for ii in (0..k_used).rev() {
            let mut acc = s[ii];
            for jj in ii + 1..k_used {
                acc -= h[ii][jj] * y[jj];
            }
            y[ii] = acc / h[ii][ii];
        }
        let mut update = vec![0.0; n];
        for (jj, yj) in y.iter().enumerate() {
            for (u, vi) in update.iter_mut().zip(&v[jj]) {
                *u += yj * vi;
            }
        }
        for ((xi, u), d) in x.iter_mut().zip(&update).zip(&inv_diag) {
            *xi += u * d;
        }
    }
}

/// Physical flux `-mu grad phi` at every point with a stencil.
pub fn reconstruct_flux(stencils: &StencilSet, solution: &[f64], g: &[f64]) -> Vec<Option<Point>> {
    stencils
        .stencils
        .iter()
        .enumerate()
        .map(|(i, s)| {
            s.as_ref().map(|s| {
                let gi = if s.flux.rhs_coeff == [0.0; 3] { 0.0 } else { g[i] };
                let v = s.flux.apply(solution, gi);
                [-v[0], -v[1], -v[2]]
            })
        })
        .collect()
}
