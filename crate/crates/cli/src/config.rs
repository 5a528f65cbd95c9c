//! Run configuration: a JSON document whose keys mirror the command-line
//! flags. Flags win over the file.

use std::path::{Path, PathBuf};

use clap::{Args, ValueEnum};
use serde::Deserialize;

use staggered_gmls::geometry::{BoundaryKind, Domain};
use staggered_gmls::problems::{raster_coefficient, resolution_spacing, ManufacturedProblem, RunOptions};
use staggered_gmls::system::{EdgeMean, NullSpaceStrategy, SolverMethod, StencilConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProblemId {
    /// Smooth solution on the annulus.
    Annulus,
    /// Smooth solution on the extruded annulus.
    Cylinder,
    /// Smooth solution on the unit square.
    Square,
    FiveStrip,
    Dielectric,
    Checkerboard,
    /// Coefficient read from a grayscale PGM image.
    Raster,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Bc {
    Dirichlet,
    Neumann,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SchemeId {
    Staggered,
    Collocated,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MeanId {
    Arithmetic,
    Harmonic,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SolverId {
    Direct,
    Gmres,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NullSpaceId {
    /// Fix one Neumann point to its exact value (0 when unknown).
    Pin,
    MeanZero,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Axis {
    X,
    Y,
    Z,
}

#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RasterConfig {
    pub path: PathBuf,
    /// Inclusive gray ranges `[lo, hi, mu]` covering 0..=255.
    pub mapping: Vec<(u8, u8, f64)>,
    #[serde(default = "unit_lower")]
    pub lower: [f64; 2],
    #[serde(default = "unit_upper")]
    pub upper: [f64; 2],
}

fn unit_lower() -> [f64; 2] {
    [0.0, 0.0]
}

fn unit_upper() -> [f64; 2] {
    [1.0, 1.0]
}

#[derive(Clone, Debug, Default, Args, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[arg(long, value_enum)]
    pub problem: Option<ProblemId>,
    /// Boundary condition for the smooth problems.
    #[arg(long, value_enum)]
    pub bc: Option<Bc>,
    #[arg(long)]
    pub r_inner: Option<f64>,
    #[arg(long)]
    pub r_outer: Option<f64>,
    #[arg(long)]
    pub height: Option<f64>,
    /// Lattice points per direction of the bounding box.
    #[arg(long)]
    pub n: Option<usize>,
    /// Lattice spacing; overrides `n`.
    #[arg(long)]
    pub dx: Option<f64>,
    #[arg(long, value_delimiter = ',')]
    pub resolutions: Option<Vec<usize>>,
    /// Jitter amplitude as a fraction of dx (default 0.1).
    #[arg(long)]
    pub eta_fraction: Option<f64>,
    /// Polynomial degree.
    #[arg(long)]
    pub m: Option<usize>,
    #[arg(long)]
    pub epsilon_multiplier: Option<f64>,
    #[arg(long, value_enum)]
    pub scheme: Option<SchemeId>,
    #[arg(long, value_enum)]
    pub edge_mean: Option<MeanId>,
    #[arg(long, value_enum)]
    pub solver: Option<SolverId>,
    #[arg(long)]
    pub tol: Option<f64>,
    #[arg(long)]
    pub max_iter: Option<usize>,
    #[arg(long, value_enum)]
    pub null_space: Option<NullSpaceId>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Coefficient ratio for the dielectric and checkerboard problems.
    #[arg(long)]
    pub contrast: Option<f64>,
    /// Checkerboard cells per side.
    #[arg(long)]
    pub cells: Option<usize>,
    #[arg(skip)]
    pub raster: Option<RasterConfig>,
    /// Output path or prefix.
    #[arg(long)]
    pub output: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub probe_axis: Option<Axis>,
    #[arg(long)]
    pub probe_value: Option<f64>,
    #[arg(long)]
    #[serde(default)]
    pub allow_any_m: bool,
    #[arg(long)]
    #[serde(default)]
    pub compare_collocated: bool,
}

macro_rules! overlay {
    ($base:ident, $over:ident; $($f:ident),*) => {
        $( if $over.$f.is_some() { $base.$f = $over.$f; } )*
    };
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path).map_err(|e| format!("cannot read config {}: {e}", path.display()))?;
        serde_json::from_str(&text).map_err(|e| format!("invalid config {}: {e}", path.display()))
    }

    /// Fields set in `over` replace those in `self`.
    pub fn overlay(mut self, over: RunConfig) -> Self {
        overlay!(self, over; problem, bc, r_inner, r_outer, height, n, dx, resolutions, eta_fraction, m,
            epsilon_multiplier, scheme, edge_mean, solver, tol, max_iter, null_space, seed, contrast, cells,
            raster, output, probe_axis, probe_value);
        self.allow_any_m |= over.allow_any_m;
        self.compare_collocated |= over.compare_collocated;
        self
    }

    pub fn degree(&self) -> usize {
        self.m.unwrap_or(2)
    }

    pub fn validate(&self) -> Result<(), String> {
        let m = self.degree();
        if self.allow_any_m {
            if m == 0 {
                return Err("m must be at least 1".into());
            }
        } else if ![2, 4, 6].contains(&m) {
            return Err("m must be one of 2,4,6".into());
        }
        let positive = [
            ("dx", self.dx),
            ("r_inner", self.r_inner),
            ("r_outer", self.r_outer),
            ("height", self.height),
            ("epsilon_multiplier", self.epsilon_multiplier),
            ("tol", self.tol),
            ("contrast", self.contrast),
        ];
        for (name, v) in positive {
            if let Some(v) = v {
                if !(v > 0.0) || !v.is_finite() {
                    return Err(format!("{name} must be positive and finite, got {v}"));
                }
            }
        }
        if let Some(e) = self.eta_fraction {
            if !(0.0..0.5).contains(&e) {
                return Err(format!("eta_fraction must lie in [0, 0.5), got {e}"));
            }
        }
        if let (Some(a), Some(b)) = (self.r_inner, self.r_outer) {
            if a >= b {
                return Err("r_inner must be smaller than r_outer".into());
            }
        }
        for (name, v) in [("n", self.n), ("max_iter", self.max_iter), ("cells", self.cells)] {
            if v == Some(0) {
                return Err(format!("{name} must be positive"));
            }
        }
        if let Some(r) = &self.resolutions {
            if r.contains(&0) {
                return Err("resolutions must be positive".into());
            }
        }
        if self.problem == Some(ProblemId::Raster) && self.raster.is_none() {
            return Err("raster problem needs a `raster` section in the config".into());
        }
        Ok(())
    }

    pub fn domain(&self) -> Domain {
        let annulus = |d: Domain| match d {
            Domain::Annulus { r_inner, r_outer } => Domain::Annulus {
                r_inner: self.r_inner.unwrap_or(r_inner),
                r_outer: self.r_outer.unwrap_or(r_outer),
            },
            Domain::ExtrudedAnnulus { r_inner, r_outer, height } => Domain::ExtrudedAnnulus {
                r_inner: self.r_inner.unwrap_or(r_inner),
                r_outer: self.r_outer.unwrap_or(r_outer),
                height: self.height.unwrap_or(height),
            },
            d => d,
        };
        match self.problem {
            Some(ProblemId::Annulus) => annulus(Domain::reference_annulus()),
            Some(ProblemId::Cylinder) => annulus(Domain::reference_cylinder()),
            _ => Domain::UnitSquare,
        }
    }

    pub fn problem(&self) -> Result<ManufacturedProblem, String> {
        let bc = match self.bc.unwrap_or(Bc::Dirichlet) {
            Bc::Dirichlet => BoundaryKind::Dirichlet,
            Bc::Neumann => BoundaryKind::Neumann,
        };
        let id = self.problem.ok_or("missing problem id")?;
        let problem = match id {
            ProblemId::Annulus | ProblemId::Cylinder | ProblemId::Square => ManufacturedProblem::smooth(self.domain(), bc),
            ProblemId::FiveStrip => ManufacturedProblem::five_strip(),
            ProblemId::Dielectric => ManufacturedProblem::dielectric_cylinder(self.contrast.unwrap_or(2.0)),
            ProblemId::Checkerboard => {
                ManufacturedProblem::checkerboard(self.cells.unwrap_or(8), self.contrast.unwrap_or(100.0)).map_err(|e| e.to_string())?
            }
            ProblemId::Raster => {
                let r = self.raster.as_ref().ok_or("raster problem needs a `raster` section")?;
                let field = raster_coefficient(&r.path, r.mapping.clone(), r.lower, r.upper).map_err(|e| e.to_string())?;
                ManufacturedProblem::uniform_field("raster", field)
            }
        };
        Ok(problem)
    }

    pub fn options(&self) -> RunOptions {
        let m = self.degree();
        let mut opts = RunOptions::new(m);
        opts.stencil = match self.scheme.unwrap_or(SchemeId::Staggered) {
            SchemeId::Staggered => StencilConfig::new(m),
            SchemeId::Collocated => StencilConfig::collocated(m),
        };
        opts.stencil.epsilon_multiplier = self.epsilon_multiplier;
        opts.stencil.edge_mean = match self.edge_mean.unwrap_or(MeanId::Arithmetic) {
            MeanId::Arithmetic => EdgeMean::Arithmetic,
            MeanId::Harmonic => EdgeMean::Harmonic,
        };
        opts.solver = match self.solver.unwrap_or(SolverId::Direct) {
            SolverId::Direct => SolverMethod::DirectLu,
            SolverId::Gmres => SolverMethod::IterativeKrylov {
                tol: self.tol.unwrap_or(1e-12),
                max_iter: self.max_iter.unwrap_or(5000),
            },
        };
        opts.null_space = match self.null_space.unwrap_or(NullSpaceId::Pin) {
            NullSpaceId::Pin => None,
            NullSpaceId::MeanZero => Some(NullSpaceStrategy::MeanZero),
        };
        opts.seed = self.seed.unwrap_or(0);
        if let Some(e) = self.eta_fraction {
            opts.eta_fraction = e;
        }
        opts
    }

    /// Lattice spacing from `dx`, else `n`.
    pub fn spacing(&self) -> Result<f64, String> {
        match (self.dx, self.n) {
            (Some(dx), _) => Ok(dx),
            (None, Some(n)) => Ok(resolution_spacing(&self.domain(), n)),
            (None, None) => Err("one of n or dx is required".into()),
        }
    }
}
