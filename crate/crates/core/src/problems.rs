//! Problem catalog, error norms and convergence studies.

use std::io::{BufRead, Write};
use std::path::Path;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::geometry::{all_dirichlet, all_neumann, discretize, BoundaryKind, CloudParams, Domain, Point, PointCloud, PointKind};
use crate::system::{
    assemble, build_stencils, fix_null_space, reconstruct_flux, solve, NullSpaceStrategy, ProblemData, SolveReport, SolverMethod,
    StencilConfig, StencilSet,
};

pub type ScalarFn = Arc<dyn Fn(&Point) -> f64 + Send + Sync>;
pub type VectorFn = Arc<dyn Fn(&Point) -> Point + Send + Sync>;
/// Neumann datum `g(x, n) = n . mu grad phi`.
pub type FluxDatumFn = Arc<dyn Fn(&Point, &Point) -> f64 + Send + Sync>;
pub type BoundaryFn = Arc<dyn Fn(&Point, &Point) -> BoundaryKind + Send + Sync>;

/// 8-bit grayscale image, row 0 at the top.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GrayImage {
    pub width: usize,
    pub height: usize,
    pub maxval: u16,
    pub pixels: Vec<u8>,
}

impl GrayImage {
    pub fn get(&self, col: usize, row: usize) -> u8 {
        self.pixels[row * self.width + col]
    }

    /// `cells x cells` board of `0`/`255` squares, `pixels_per_cell` wide.
    pub fn checkerboard(cells: usize, pixels_per_cell: usize) -> Self {
        let w = cells * pixels_per_cell;
        let pixels = (0..w * w)
            .map(|k| {
                let (r, c) = (k / w / pixels_per_cell, k % w / pixels_per_cell);
                if (r + c) % 2 == 0 {
                    0
                } else {
                    255
                }
            })
            .collect();
        GrayImage {
            width: w,
            height: w,
            maxval: 255,
            pixels,
        }
    }

    pub fn write_pgm<W: Write>(&self, mut w: W) -> Result<()> {
        write!(w, "P5\n{} {}\n{}\n", self.width, self.height, self.maxval)?;
        w.write_all(&self.pixels)?;
        Ok(())
    }

    pub fn read_pgm<R: BufRead>(mut r: R) -> Result<Self> {
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes)?;
        let mut pos = 0;
        let mut line = 1;
        let mut header = Vec::with_capacity(4);
        while header.len() < 4 {
            while pos < bytes.len() && (bytes[pos].is_ascii_whitespace() || bytes[pos] == b'#') {
                if bytes[pos] == b'#' {
                    while pos < bytes.len() && bytes[pos] != b'\n' {
                        pos += 1;
                    }
                } else {
                    if bytes[pos] == b'\n' {
                        line += 1;
                    }
                    pos += 1;
                }
            }
            let start = pos;
            while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() && bytes[pos] != b'#' {
                pos += 1;
            }
            if start == pos {
                return Err(Error::Image("truncated header".into()));
            }
            header.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
        }
        let binary = match header[0].as_str() {
            "P2" => false,
            "P5" => true,
            other => return Err(Error::Image(format!("unsupported format {other:?}, expected P2 or P5"))),
        };
        let num = |s: &str, what: &str| -> Result<usize> {
            s.parse().map_err(|_| Error::Parse {
                line,
                message: format!("bad {what} {s:?}"),
            })
        };
        let width = num(&header[1], "width")?;
        let height = num(&header[2], "height")?;
        let maxval = num(&header[3], "maxval")?;
        if width == 0 || height == 0 {
            return Err(Error::Image("empty image".into()));
        }
        if maxval == 0 || maxval > 255 {
            return Err(Error::Image(format!("maxval {maxval} unsupported, need 1..=255")));
        }
        let count = width * height;
        let pixels: Vec<u8> = if binary {
            // exactly one whitespace byte separates the header from the raster
            pos += 1;
            if bytes.len() < pos + count {
                return Err(Error::Image(format!("expected {count} pixels, found {}", bytes.len().saturating_sub(pos))));
            }
            bytes[pos..pos + count].to_vec()
        } else {
            let text = String::from_utf8_lossy(&bytes[pos..]);
            let values: Vec<&str> = text
                .lines()
                .map(|l| l.split('#').next().unwrap_or(""))
                .flat_map(|l| l.split_whitespace())
                .collect();
            if values.len() < count {
                return Err(Error::Image(format!("expected {count} pixels, found {}", values.len())));
            }
            values[..count]
                .iter()
                .map(|v| {
                    v.parse::<u8>().map_err(|_| Error::Image(format!("bad pixel value {v:?}")))
                })
                .collect::<Result<_>>()?
        };
        if let Some(p) = pixels.iter().find(|&&p| p as usize > maxval) {
            return Err(Error::Image(format!("pixel value {p} exceeds maxval {maxval}")));
        }
        Ok(GrayImage {
            width,
            height,
            maxval: maxval as u16,
            pixels,
        })
    }
}

/// Gray-level bins, inclusive on both ends, covering `0..=255` exactly once.
#[derive(Clone, Debug, PartialEq)]
pub struct GrayMapping {
    bins: Vec<(u8, u8, f64)>,
}

impl GrayMapping {
    pub fn new(mut bins: Vec<(u8, u8, f64)>) -> Result<Self> {
        bins.sort_by_key(|b| b.0);
        let mut next = 0u16;
        for &(lo, hi, mu) in &bins {
            if lo > hi {
                return Err(Error::InvalidArgument(format!("empty gray range [{lo}, {hi}]")));
            }
            if lo as u16 != next {
                return Err(Error::InvalidArgument(format!("gray mapping gap or overlap at level {next}")));
            }
            if !(mu > 0.0) || !mu.is_finite() {
                return Err(Error::InvalidArgument(format!("mapped coefficient must be positive, got {mu}")));
            }
            next = hi as u16 + 1;
        }
        if next != 256 {
            return Err(Error::InvalidArgument(format!("gray mapping does not cover levels {next}..=255")));
        }
        Ok(GrayMapping { bins })
    }

    pub fn value(&self, gray: u8) -> f64 {
        self.bins.iter().find(|b| b.0 <= gray && gray <= b.1).map(|b| b.2).expect("mapping covers all levels")
    }
}

/// Image stretched over the box `[lower, upper]` (first two coordinates).
#[derive(Clone, Debug, PartialEq)]
pub struct RasterField {
    pub image: GrayImage,
    pub mapping: GrayMapping,
    pub lower: [f64; 2],
    pub upper: [f64; 2],
}

impl RasterField {
    /// Nearest pixel, clamped to the image.
    pub fn pixel_at(&self, x: &Point) -> (usize, usize) {
        let fx = (x[0] - self.lower[0]) / (self.upper[0] - self.lower[0]);
        let fy = (self.upper[1] - x[1]) / (self.upper[1] - self.lower[1]);
        let idx = |f: f64, n: usize| ((f * n as f64).floor().max(0.0) as usize).min(n - 1);
        (idx(fx, self.image.width), idx(fy, self.image.height))
    }

    pub fn eval(&self, x: &Point) -> f64 {
        let (c, r) = self.pixel_at(x);
        self.mapping.value(self.image.get(c, r))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum CoefficientField {
    Constant(f64),
    /// Horizontal strips: `values[k]` holds for `breaks[k-1] <= y < breaks[k]`.
    PiecewiseStrips { breaks: Vec<f64>, values: Vec<f64> },
    /// `mu_in` inside the disc (or infinite cylinder along z) of given radius.
    RadialTwoPhase {
        center: Point,
        radius: f64,
        mu_in: f64,
        mu_out: f64,
    },
    Raster(RasterField),
}

impl CoefficientField {
    pub fn eval(&self, x: &Point) -> f64 {
        match self {
            CoefficientField::Constant(v) => *v,
            CoefficientField::PiecewiseStrips { breaks, values } => values[breaks.iter().filter(|&&b| b <= x[1]).count()],
            CoefficientField::RadialTwoPhase {
                center,
                radius,
                mu_in,
                mu_out,
            } => {
                let r = (x[0] - center[0]).hypot(x[1] - center[1]);
                if r < *radius {
                    *mu_in
                } else {
                    *mu_out
                }
            }
            CoefficientField::Raster(r) => r.eval(x),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |v: f64| !(v > 0.0) || !v.is_finite();
        match self {
            CoefficientField::Constant(v) if bad(*v) => Err(Error::InvalidArgument(format!("coefficient must be positive, got {v}"))),
            CoefficientField::PiecewiseStrips { breaks, values } => {
                if values.len() != breaks.len() + 1 {
                    return Err(Error::SizeMismatch {
                        what: "strip values",
                        expected: breaks.len() + 1,
                        got: values.len(),
                    });
                }
                if breaks.windows(2).any(|w| w[0] >= w[1]) {
                    return Err(Error::InvalidArgument("strip breaks must increase".into()));
                }
                match values.iter().find(|v| bad(**v)) {
                    Some(v) => Err(Error::InvalidArgument(format!("coefficient must be positive, got {v}"))),
                    None => Ok(()),
                }
            }
            CoefficientField::RadialTwoPhase { radius, mu_in, mu_out, .. } => {
                if bad(*mu_in) || bad(*mu_out) || bad(*radius) {
                    Err(Error::InvalidArgument("radius and phase coefficients must be positive".into()))
                } else {
                    Ok(())
                }
            }
            _ => Ok(()),
        }
    }
}

/// Raster coefficient from a PGM file stretched over `[lower, upper]`.
pub fn raster_coefficient(path: &Path, mapping: Vec<(u8, u8, f64)>, lower: [f64; 2], upper: [f64; 2]) -> Result<CoefficientField> {
    let file = std::fs::File::open(path)?;
    let image = GrayImage::read_pgm(std::io::BufReader::new(file))?;
    Ok(CoefficientField::Raster(RasterField {
        image,
        mapping: GrayMapping::new(mapping)?,
        lower,
        upper,
    }))
}

#[derive(Clone)]
pub struct ManufacturedProblem {
    pub name: String,
    pub domain: Domain,
    pub mu: CoefficientField,
    pub boundary: BoundaryFn,
    pub exact: Option<ScalarFn>,
    pub exact_gradient: Option<VectorFn>,
    pub source: ScalarFn,
    pub dirichlet: ScalarFn,
    pub neumann: FluxDatumFn,
}

impl std::fmt::Debug for ManufacturedProblem {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ManufacturedProblem")
            .field("name", &self.name)
            .field("domain", &self.domain)
            .field("mu", &self.mu)
            .finish_non_exhaustive()
    }
}

fn boundary_fn(kind: BoundaryKind) -> BoundaryFn {
    match kind {
        BoundaryKind::Dirichlet => Arc::new(all_dirichlet),
        BoundaryKind::Neumann => Arc::new(all_neumann),
    }
}

impl ManufacturedProblem {
    /// Smooth problem with `mu = 1` and exact solution `sin x sin y` (2D) or
    /// `sin x sin y sin z` (3D).
    pub fn smooth(domain: Domain, bc: BoundaryKind) -> Self {
        let three = domain.dim() == 3;
        let phi: ScalarFn = if three {
            Arc::new(|x: &Point| x[0].sin() * x[1].sin() * x[2].sin())
        } else {
            Arc::new(|x: &Point| x[0].sin() * x[1].sin())
        };
        let grad: VectorFn = if three {
            Arc::new(|x: &Point| {
                let (s, c) = ([x[0].sin(), x[1].sin(), x[2].sin()], [x[0].cos(), x[1].cos(), x[2].cos()]);
                [c[0] * s[1] * s[2], s[0] * c[1] * s[2], s[0] * s[1] * c[2]]
            })
        } else {
            Arc::new(|x: &Point| [x[0].cos() * x[1].sin(), x[0].sin() * x[1].cos(), 0.0])
        };
        let d = domain.dim() as f64;
        let p = phi.clone();
        let g = grad.clone();
        ManufacturedProblem {
            name: format!("smooth-{}{}", if three { "cylinder" } else { "annulus" }, if bc == BoundaryKind::Dirichlet { "" } else { "-neumann" }),
            domain,
            mu: CoefficientField::Constant(1.0),
            boundary: boundary_fn(bc),
            exact: Some(phi.clone()),
            exact_gradient: Some(grad),
            source: Arc::new(move |x| d * p(x)),
            dirichlet: phi,
            neumann: Arc::new(move |x, n| {
                let v = g(x);
                n[0] * v[0] + n[1] * v[1] + n[2] * v[2]
            }),
        }
    }

    pub fn smooth_annulus(bc: BoundaryKind) -> Self {
        Self::smooth(Domain::reference_annulus(), bc)
    }

    pub fn smooth_cylinder(bc: BoundaryKind) -> Self {
        Self::smooth(Domain::reference_cylinder(), bc)
    }

    /// Unit square of five horizontal strips, `phi = 1 - x`, flux data on
    /// the whole boundary.
    pub fn five_strip() -> Self {
        let mu = CoefficientField::PiecewiseStrips {
            breaks: vec![0.2, 0.4, 0.6, 0.8],
            values: vec![16.0, 6.0, 1.0, 10.0, 2.0],
        };
        let m = mu.clone();
        ManufacturedProblem {
            name: "five-strip".into(),
            domain: Domain::UnitSquare,
            mu,
            boundary: boundary_fn(BoundaryKind::Neumann),
            exact: Some(Arc::new(|x| 1.0 - x[0])),
            exact_gradient: Some(Arc::new(|_| [-1.0, 0.0, 0.0])),
            source: Arc::new(|_| 0.0),
            dirichlet: Arc::new(|x| 1.0 - x[0]),
            neumann: Arc::new(move |x, n| -m.eval(x) * n[0]),
        }
    }

    /// Disc of radius 1/2 centred in the unit square with `mu_in / mu_out =
    /// contrast`, in the field that tends to `grad phi = (1, 0)` far away.
    /// The free-space solution is imposed on the square's boundary.
    pub fn dielectric_cylinder(contrast: f64) -> Self {
        let center = [0.5, 0.5, 0.0];
        let radius = 0.5;
        let (a, b) = dielectric_coefficients(contrast, 1.0);
        let phi = move |x: &Point| {
            let (dx, dy) = (x[0] - center[0], x[1] - center[1]);
            let r2 = dx * dx + dy * dy;
            if r2 < radius * radius {
                a * dx
            } else {
                dx * (1.0 + b * radius * radius / r2)
            }
        };
        let grad = move |x: &Point| {
            let (dx, dy) = (x[0] - center[0], x[1] - center[1]);
            let r2 = dx * dx + dy * dy;
            if r2 < radius * radius {
                [a, 0.0, 0.0]
            } else {
                let k = b * radius * radius / (r2 * r2);
                [1.0 + k * (dy * dy - dx * dx), -2.0 * k * dx * dy, 0.0]
            }
        };
        ManufacturedProblem {
            name: "dielectric".into(),
            domain: Domain::UnitSquare,
            mu: CoefficientField::RadialTwoPhase {
                center,
                radius,
                mu_in: contrast,
                mu_out: 1.0,
            },
            boundary: boundary_fn(BoundaryKind::Dirichlet),
            exact: Some(Arc::new(phi)),
            exact_gradient: Some(Arc::new(grad)),
            source: Arc::new(|_| 0.0),
            dirichlet: Arc::new(phi),
            neumann: Arc::new(|_, _| 0.0),
        }
    }

    /// Unit square with an arbitrary coefficient and `phi = x` imposed on the
    /// boundary; no exact solution.
    pub fn uniform_field(name: &str, mu: CoefficientField) -> Self {
        ManufacturedProblem {
            name: name.into(),
            domain: Domain::UnitSquare,
            mu,
            boundary: boundary_fn(BoundaryKind::Dirichlet),
            exact: None,
            exact_gradient: None,
            source: Arc::new(|_| 0.0),
            dirichlet: Arc::new(|x| x[0]),
            neumann: Arc::new(|_, _| 0.0),
        }
    }

    /// Checkerboard raster of `cells x cells` squares alternating between
    /// `mu = 1` and `mu = contrast`.
    pub fn checkerboard(cells: usize, contrast: f64) -> Result<Self> {
        let field = RasterField {
            image: GrayImage::checkerboard(cells, 4),
            mapping: GrayMapping::new(vec![(0, 127, 1.0), (128, 255, contrast)])?,
            lower: [0.0, 0.0],
            upper: [1.0, 1.0],
        };
        Ok(Self::uniform_field("checkerboard", CoefficientField::Raster(field)))
    }

    pub fn is_pure_neumann(&self, cloud: &PointCloud) -> bool {
        !cloud.kinds.iter().any(|k| *k == PointKind::DirichletBoundary)
    }

    pub fn sample(&self, cloud: &PointCloud) -> ProblemData {
        ProblemData {
            f: cloud.positions.iter().map(|x| (self.source)(x)).collect(),
            u: cloud.positions.iter().map(|x| (self.dirichlet)(x)).collect(),
            g: cloud
                .positions
                .iter()
                .zip(&cloud.normals)
                .map(|(x, n)| n.map_or(0.0, |n| (self.neumann)(x, &n)))
                .collect(),
        }
    }

    pub fn mu_samples(&self, cloud: &PointCloud) -> Vec<f64> {
        cloud.positions.iter().map(|x| self.mu.eval(x)).collect()
    }
}

/// `(A, B)` of the two-phase solution `phi = A x` inside and
/// `phi = x (1 + B R^2 / r^2)` outside, from continuity of `phi` and of
/// `mu d phi / dr` at `r = R`.
pub fn dielectric_coefficients(mu_in: f64, mu_out: f64) -> (f64, f64) {
    let a = 2.0 * mu_out / (mu_in + mu_out);
    (a, a - 1.0)
}

/// `sqrt(mean((phi_i - exact_i)^2))` over all points.
pub fn error_l2(solution: &[f64], exact: &[f64]) -> f64 {
    let n = solution.len().max(1) as f64;
    (solution.iter().zip(exact).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / n).sqrt()
}

/// RMS over interior points of `|-u_i / mu_i - grad phi_ex(x_i)|`, where `u`
/// is the reconstructed physical flux.
pub fn error_h1(cloud: &PointCloud, flux: &[Option<Point>], exact_gradient: &[Point], mu: &[f64]) -> f64 {
    let mut sum = 0.0;
    let mut count = 0usize;
    for i in 0..cloud.len() {
        if cloud.kinds[i] != PointKind::Interior {
            continue;
        }
        if let Some(u) = flux[i] {
            let g = exact_gradient[i];
            sum += (0..3).map(|k| (-u[k] / mu[i] - g[k]).powi(2)).sum::<f64>();
            count += 1;
        }
    }
    if count == 0 {
        0.0
    } else {
        (sum / count as f64).sqrt()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunOptions {
    pub stencil: StencilConfig,
    pub solver: SolverMethod,
    pub seed: u64,
    /// Jitter amplitude as a fraction of the spacing.
    pub eta_fraction: f64,
    pub guard: f64,
    /// `None` pins the first Neumann point to its exact value (or 0) when no
    /// Dirichlet point exists.
    pub null_space: Option<NullSpaceStrategy>,
}

impl RunOptions {
    pub fn new(degree: usize) -> Self {
        RunOptions {
            stencil: StencilConfig::new(degree),
            solver: SolverMethod::DirectLu,
            seed: 0,
            eta_fraction: 0.1,
            guard: 0.5,
            null_space: None,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Solution {
    pub cloud: PointCloud,
    pub stencils: StencilSet,
    pub data: ProblemData,
    pub phi: Vec<f64>,
    /// Physical flux `-mu grad phi` where a stencil exists.
    pub flux: Vec<Option<Point>>,
    pub report: SolveReport,
}

impl Solution {
    pub fn error_l2(&self, problem: &ManufacturedProblem) -> Option<f64> {
        let exact = problem.exact.as_ref()?;
        let ex: Vec<f64> = self.cloud.positions.iter().map(|x| exact(x)).collect();
        Some(error_l2(&self.phi, &ex))
    }

    pub fn error_h1(&self, problem: &ManufacturedProblem) -> Option<f64> {
        let grad = problem.exact_gradient.as_ref()?;
        let ex: Vec<Point> = self.cloud.positions.iter().map(|x| grad(x)).collect();
        Some(error_h1(&self.cloud, &self.flux, &ex, &self.stencils.mu))
    }
}

pub fn generate_cloud(problem: &ManufacturedProblem, dx: f64, options: &RunOptions) -> Result<PointCloud> {
    let params = CloudParams {
        dx,
        eta: options.eta_fraction * dx,
        seed: options.seed,
        guard: options.guard,
    };
    let bc = problem.boundary.clone();
    discretize(&problem.domain, &params, &move |x: &Point, n: &Point| bc(x, n))
}

/// Spacing used for resolution `N`: the domain's lattice width divided by `N`.
pub fn resolution_spacing(domain: &Domain, n: usize) -> f64 {
    domain.lattice_width() / n as f64
}

pub fn solve_on_cloud(problem: &ManufacturedProblem, cloud: PointCloud, options: &RunOptions) -> Result<Solution> {
    problem.mu.validate()?;
    let mu = problem.mu_samples(&cloud);
    let stencils = build_stencils(&cloud, &mu, &options.stencil)?;
    let data = problem.sample(&cloud);
    let mut system = assemble(&cloud, &stencils, &data)?;
    if problem.is_pure_neumann(&cloud) {
        let strategy = match options.null_space {
            Some(s) => s,
            None => {
                let pin = cloud
                    .kinds
                    .iter()
                    .position(|k| *k == PointKind::NeumannBoundary)
                    .unwrap_or(0);
                let value = problem.exact.as_ref().map_or(0.0, |e| e(&cloud.positions[pin]));
                NullSpaceStrategy::PinPoint(pin, value)
            }
        };
        system = fix_null_space(&system, strategy)?;
    }
    let (phi, report) = solve(&system, options.solver)?;
    let flux = reconstruct_flux(&stencils, &phi, &data.g);
    Ok(Solution {
        cloud,
        stencils,
        data,
        phi,
        flux,
        report,
    })
}

pub fn solve_problem(problem: &ManufacturedProblem, n: usize, options: &RunOptions) -> Result<Solution> {
    let cloud = generate_cloud(problem, resolution_spacing(&problem.domain, n), options)?;
    solve_on_cloud(problem, cloud, options)
}

/// Max-norm residual of the assembled non-Dirichlet rows at the exact solution.
pub fn truncation_error(problem: &ManufacturedProblem, n: usize, options: &RunOptions) -> Result<f64> {
    let exact = problem
        .exact
        .as_ref()
        .ok_or_else(|| Error::InvalidArgument(format!("problem {} has no exact solution", problem.name)))?;
    let cloud = generate_cloud(problem, resolution_spacing(&problem.domain, n), options)?;
    let mu = problem.mu_samples(&cloud);
    let stencils = build_stencils(&cloud, &mu, &options.stencil)?;
    let system = assemble(&cloud, &stencils, &problem.sample(&cloud))?;
    let ex: Vec<f64> = cloud.positions.iter().map(|x| exact(x)).collect();
    let ax = system.matvec(&ex);
    Ok((0..cloud.len())
        .filter(|&i| cloud.kinds[i] != PointKind::DirichletBoundary)
        .map(|i| (ax[i] - system.rhs[i]).abs())
        .fold(0.0, f64::max))
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConvergenceRow {
    pub n: usize,
    pub h: f64,
    pub points: usize,
    pub e_l2: f64,
    pub e_h1: f64,
    pub residual: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConvergenceReport {
    pub label: String,
    pub rows: Vec<ConvergenceRow>,
    pub rate_l2: f64,
    pub rate_h1: f64,
}

/// Least-squares slope of `log e` against `log h`.
pub fn fitted_rate(h: &[f64], e: &[f64]) -> f64 {
    let xs: Vec<f64> = h.iter().map(|v| v.ln()).collect();
    let ys: Vec<f64> = e.iter().map(|v| v.ln()).collect();
    let n = xs.len() as f64;
    let (mx, my) = (xs.iter().sum::<f64>() / n, ys.iter().sum::<f64>() / n);
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    sxy / sxx
}

pub fn run_convergence(problem: &ManufacturedProblem, resolutions: &[usize], options: &RunOptions) -> Result<ConvergenceReport> {
    if resolutions.len() < 3 {
        return Err(Error::TooFewResolutions(resolutions.len()));
    }
    if problem.exact.is_none() || problem.exact_gradient.is_none() {
        return Err(Error::InvalidArgument(format!("problem {} has no exact solution", problem.name)));
    }
    let mut rows = Vec::with_capacity(resolutions.len());
    for &n in resolutions {
        let wrap = |e: Error| Error::Resolution { n, source: Box::new(e) };
        let sol = solve_problem(problem, n, options).map_err(wrap)?;
        rows.push(ConvergenceRow {
            n,
            h: sol.cloud.h,
            points: sol.cloud.len(),
            e_l2: sol.error_l2(problem).unwrap_or(f64::NAN),
            e_h1: sol.error_h1(problem).unwrap_or(f64::NAN),
            residual: sol.report.relative_residual,
        });
    }
    let h: Vec<f64> = rows.iter().map(|r| r.h).collect();
    let rate_l2 = fitted_rate(&h, &rows.iter().map(|r| r.e_l2).collect::<Vec<_>>());
    let rate_h1 = fitted_rate(&h, &rows.iter().map(|r| r.e_h1).collect::<Vec<_>>());
    Ok(ConvergenceReport {
        label: problem.name.clone(),
        rows,
        rate_l2,
        rate_h1,
    })
}

impl ConvergenceReport {
    /// Columns `N,h,e_l2,e_h1,rate_l2,rate_h1`; per-row rates are against the
    /// previous row, and a final `fit` row holds the least-squares rates.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["N", "h", "e_l2", "e_h1", "rate_l2", "rate_h1"])?;
        for (k, r) in self.rows.iter().enumerate() {
            let (rl2, rh1) = if k == 0 {
                (String::new(), String::new())
            } else {
                let p = &self.rows[k - 1];
                let lh = (r.h / p.h).ln();
                (fmt17((r.e_l2 / p.e_l2).ln() / lh), fmt17((r.e_h1 / p.e_h1).ln() / lh))
            };
            out.write_record([r.n.to_string(), fmt17(r.h), fmt17(r.e_l2), fmt17(r.e_h1), rl2, rh1])?;
        }
        out.write_record(["fit".into(), String::new(), String::new(), String::new(), fmt17(self.rate_l2), fmt17(self.rate_h1)])?;
        out.flush()?;
        Ok(())
    }
}

/// 17 significant digits.
pub fn fmt17(v: f64) -> String {
    format!("{v:.16e}")
}

/// Flux samples at the points within `band` of the line `x_axis = value`,
/// sorted by the next free coordinate.
pub fn probe_line(cloud: &PointCloud, flux: &[Option<Point>], axis: usize, value: f64, band: f64) -> Result<Vec<(usize, f64, Point)>> {
    if axis >= cloud.dim {
        return Err(Error::InvalidArgument(format!("probe axis {axis} out of range for dimension {}", cloud.dim)));
    }
    let free = if axis == 0 { 1 } else { 0 };
    let mut out: Vec<(usize, f64, Point)> = (0..cloud.len())
        .filter(|&i| (cloud.positions[i][axis] - value).abs() <= band)
        .filter_map(|i| flux[i].map(|u| (i, cloud.positions[i][free], u)))
        .collect();
    if out.is_empty() {
        return Err(Error::InvalidArgument(format!("no points within {band} of the probe line")));
    }
    out.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
    Ok(out)
}

/// Sum of absolute jumps of a sampled sequence.
pub fn total_variation(values: &[f64]) -> f64 {
    values.windows(2).map(|w| (w[1] - w[0]).abs()).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn fd_laplacian(f: &dyn Fn(&Point) -> f64, x: &Point, dim: usize) -> f64 {
        let h = 1e-4;
        (0..dim)
            .map(|k| {
                let (mut p, mut m) = (*x, *x);
                p[k] += h;
                m[k] -= h;
                (f(&p) - 2.0 * f(x) + f(&m)) / (h * h)
            })
            .sum()
    }

    #[test]
    fn l2_examples() {
        assert_eq!(error_l2(&[1.0, 2.0], &[1.0, 2.0]), 0.0);
        assert!((error_l2(&[3.0; 5], &[1.0; 5]) - 2.0).abs() < 1e-15);
        assert!((error_l2(&[3.0, 4.0], &[0.0, 0.0]) - 3.5355339059327378).abs() < 1e-15);
    }

    #[test]
    fn h1_examples() {
        let cloud = discretize(&Domain::UnitSquare, &CloudParams::new(0.1, 0), &all_dirichlet).unwrap();
        let grad: Vec<Point> = vec![[1.0, 2.0, 0.0]; cloud.len()];
        let mu: Vec<f64> = (0..cloud.len()).map(|i| 1.0 + i as f64).collect();
        let exact: Vec<Option<Point>> = mu.iter().map(|m| Some([-m, -2.0 * m, 0.0])).collect();
        assert_eq!(error_h1(&cloud, &exact, &grad, &mu), 0.0);
        let off: Vec<Option<Point>> = mu.iter().map(|m| Some([-m * 1.25, -2.0 * m, 0.0])).collect();
        assert!((error_h1(&cloud, &off, &grad, &mu) - 0.25).abs() < 1e-14);
    }

    #[test]
    fn smooth_problem_source_matches_laplacian() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for p in [
            ManufacturedProblem::smooth_annulus(BoundaryKind::Dirichlet),
            ManufacturedProblem::smooth_cylinder(BoundaryKind::Dirichlet),
        ] {
            let dim = p.domain.dim();
            let exact = p.exact.clone().unwrap();
            let mut checked = 0;
            while checked < 100 {
                let x = [rng.random_range(-1.6..1.6), rng.random_range(-1.6..1.6), rng.random_range(0.0..3.1)];
                let x = if dim == 2 { [x[0], x[1], 0.0] } else { x };
                if !p.domain.contains(&x) {
                    continue;
                }
                let lap = fd_laplacian(&*exact, &x, dim);
                assert!((lap + (p.source)(&x) / p.mu.eval(&x)).abs() < 1e-4, "{x:?}");
                checked += 1;
            }
        }
    }

    #[test]
    fn five_strip_data() {
        let p = ManufacturedProblem::five_strip();
        assert_eq!(p.mu.eval(&[0.5, 0.5, 0.0]), 1.0);
        assert_eq!(p.mu.eval(&[0.5, 0.1, 0.0]), 16.0);
        assert_eq!(p.mu.eval(&[0.5, 0.9, 0.0]), 2.0);
        let x = [0.5, 0.1, 0.0];
        let g = (p.exact_gradient.as_ref().unwrap())(&x);
        assert_eq!((p.mu.eval(&x) * g[0]).abs(), 16.0);
        assert_eq!((p.neumann)(&[0.0, 0.7, 0.0], &[-1.0, 0.0, 0.0]), 10.0);
        assert_eq!((p.neumann)(&[0.3, 0.0, 0.0], &[0.0, -1.0, 0.0]), 0.0);
    }

    #[test]
    fn dielectric_solution() {
        let (a, b) = dielectric_coefficients(2.0, 1.0);
        assert!((a - 2.0 / 3.0).abs() < 1e-15 && (b + 1.0 / 3.0).abs() < 1e-15);
        let p = ManufacturedProblem::dielectric_cylinder(2.0);
        let phi = p.exact.clone().unwrap();
        let grad = p.exact_gradient.clone().unwrap();
        assert_eq!(grad(&[0.5, 0.6, 0.0]), [2.0 / 3.0, 0.0, 0.0]);
        let far = grad(&[1000.0, 300.0, 0.0]);
        assert!((far[0] - 1.0).abs() < 1e-6 && far[1].abs() < 1e-6);
        for k in 0..100 {
            let t = 2.0 * std::f64::consts::PI * k as f64 / 100.0;
            let (c, s) = (t.cos(), t.sin());
            let inner = phi(&[0.5 + 0.5 * (1.0 - 1e-15) * c, 0.5 + 0.5 * (1.0 - 1e-15) * s, 0.0]);
            let outer = phi(&[0.5 + 0.5 * c, 0.5 + 0.5 * s, 0.0]);
            assert!((inner - outer).abs() < 1e-12);
            // normal flux continuity
            let gi = [a, 0.0];
            let go = grad(&[0.5 + 0.5 * (1.0 + 1e-12) * c, 0.5 + 0.5 * (1.0 + 1e-12) * s, 0.0]);
            assert!((2.0 * (gi[0] * c + gi[1] * s) - (go[0] * c + go[1] * s)).abs() < 1e-10);
        }
    }

    #[test]
    fn pgm_formats_and_lookup() {
        let p2 = b"P2\n# two by two\n2 2\n255\n0 255\n0 255\n";
        let img = GrayImage::read_pgm(&p2[..]).unwrap();
        assert_eq!(img.pixels, vec![0, 255, 0, 255]);
        let mut p5 = Vec::new();
        img.write_pgm(&mut p5).unwrap();
        assert_eq!(GrayImage::read_pgm(&p5[..]).unwrap(), img);

        let field = CoefficientField::Raster(RasterField {
            image: img,
            mapping: GrayMapping::new(vec![(0, 127, 1.0), (128, 255, 100.0)]).unwrap(),
            lower: [0.0, 0.0],
            upper: [1.0, 1.0],
        });
        let quads = [[0.25, 0.75], [0.75, 0.75], [0.25, 0.25], [0.75, 0.25]];
        let got: Vec<f64> = quads.iter().map(|q| field.eval(&[q[0], q[1], 0.0])).collect();
        assert_eq!(got, vec![1.0, 100.0, 1.0, 100.0]);
        // clamped outside the image
        assert_eq!(field.eval(&[-3.0, 0.5, 0.0]), 1.0);
        assert_eq!(field.eval(&[7.0, -2.0, 0.0]), 100.0);
    }

    #[test]
    fn uniform_image_is_constant() {
        let img = GrayImage {
            width: 3,
            height: 2,
            maxval: 255,
            pixels: vec![90; 6],
        };
        let field = RasterField {
            image: img,
            mapping: GrayMapping::new(vec![(0, 99, 4.0), (100, 255, 9.0)]).unwrap(),
            lower: [0.0, 0.0],
            upper: [1.0, 1.0],
        };
        for x in [[0.1, 0.1, 0.0], [0.9, 0.4, 0.0], [0.5, 0.99, 0.0]] {
            assert_eq!(field.eval(&x), 4.0);
        }
    }

    #[test]
    fn pgm_and_mapping_errors() {
        assert!(matches!(GrayImage::read_pgm(&b"P6\n1 1\n255\n\0\0\0"[..]), Err(Error::Image(_))));
        assert!(matches!(GrayImage::read_pgm(&b"P2\n2 2\n65535\n0 0 0 0"[..]), Err(Error::Image(_))));
        assert!(matches!(GrayImage::read_pgm(&b"P2\n2 2\n255\n0 0 0"[..]), Err(Error::Image(_))));
        assert!(GrayMapping::new(vec![(0, 100, 1.0), (102, 255, 2.0)]).is_err());
        assert!(GrayMapping::new(vec![(0, 100, 1.0), (100, 255, 2.0)]).is_err());
        assert!(GrayMapping::new(vec![(0, 200, 1.0)]).is_err());
        assert!(GrayMapping::new(vec![(0, 255, -1.0)]).is_err());
    }

    #[test]
    fn checkerboard_image() {
        let img = GrayImage::checkerboard(2, 3);
        assert_eq!((img.width, img.height), (6, 6));
        assert_eq!(img.get(0, 0), 0);
        assert_eq!(img.get(3, 0), 255);
        assert_eq!(img.get(3, 3), 0);
        assert_eq!(img.get(2, 5), 255);
    }

    #[test]
    fn rate_fit_and_report_csv() {
        let h = [0.1, 0.05, 0.025];
        let e: Vec<f64> = h.iter().map(|v: &f64| 3.0 * v.powi(2)).collect();
        assert!((fitted_rate(&h, &e) - 2.0).abs() < 1e-12);
        let report = ConvergenceReport {
            label: "x".into(),
            rows: h
                .iter()
                .zip(&e)
                .enumerate()
                .map(|(k, (h, e))| ConvergenceRow {
                    n: 10 << k,
                    h: *h,
                    points: 0,
                    e_l2: *e,
                    e_h1: *e,
                    residual: 0.0,
                })
                .collect(),
            rate_l2: 2.0,
            rate_h1: 2.0,
        };
        let mut out = Vec::new();
        report.write_csv(&mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "N,h,e_l2,e_h1,rate_l2,rate_h1");
        assert_eq!(lines.len(), 5);
        assert!(lines[4].starts_with("fit,,,,"));
        assert!(matches!(
            run_convergence(&ManufacturedProblem::five_strip(), &[8, 16], &RunOptions::new(2)),
            Err(Error::TooFewResolutions(2))
        ));
    }

    #[test]
    fn truncation_error_decays() {
        let p = ManufacturedProblem::smooth_annulus(BoundaryKind::Dirichlet);
        // at m = 6 the finest level sits on the roundoff floor of the stencil
        for (m, ns) in [(2, &[32, 64, 128, 256][..]), (4, &[32, 64, 128, 256]), (6, &[32, 64, 128])] {
            let opts = RunOptions::new(m);
            let e: Vec<f64> = ns.iter().map(|&n| truncation_error(&p, n, &opts).unwrap()).collect();
            let h: Vec<f64> = ns.iter().map(|&n| resolution_spacing(&p.domain, n)).collect();
            let rate = fitted_rate(&h, &e);
            assert!(rate >= m as f64 - 1.0, "m = {m}: rate {rate}, errors {e:?}");
        }
    }

    #[test]
    fn probe_band() {
        let p = ManufacturedProblem::five_strip();
        let sol = solve_problem(&p, 16, &RunOptions::new(2)).unwrap();
        let dx = sol.cloud.h;
        let samples = probe_line(&sol.cloud, &sol.flux, 0, 0.5, 0.5 * dx).unwrap();
        assert!(samples.windows(2).all(|w| w[0].1 <= w[1].1));
        assert!(probe_line(&sol.cloud, &sol.flux, 0, 3.0, 0.5 * dx).is_err());
        assert_eq!(total_variation(&[1.0, 3.0, 2.0]), 3.0);
    }
}
