//! Computational domains and meshless point clouds.
//!
//! Clouds are generated the same way for every domain: the boundary is sampled
//! at a spacing of roughly `dx`, the interior is filled with a Cartesian
//! lattice of pitch `dx` whose points are jittered by a uniform random offset
//! of magnitude at most `eta`, and lattice points that land outside the domain
//! or inside the boundary guard band are discarded.

use std::f64::consts::PI;
use std::io::{BufRead, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::neighbors::SpatialIndex;

/// Points always carry three coordinates; planar clouds keep `z = 0`.
pub type Point = [f64; 3];

pub(crate) fn sub(a: &Point, b: &Point) -> Point {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

pub(crate) fn dot(a: &Point, b: &Point) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

pub(crate) fn norm(a: &Point) -> f64 {
    dot(a, a).sqrt()
}

fn normalized(a: Point) -> Point {
    let n = norm(&a);
    [a[0] / n, a[1] / n, a[2] / n]
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Domain {
    /// `[0, 1]^2`.
    UnitSquare,
    /// Planar annulus centred at the origin.
    Annulus { r_inner: f64, r_outer: f64 },
    /// Annulus extruded along `z` over `[0, height]`.
    ExtrudedAnnulus {
        r_inner: f64,
        r_outer: f64,
        height: f64,
    },
}

impl Domain {
    /// Annulus with radii `pi/4` and `pi/2` used by the smooth convergence studies.
    pub fn reference_annulus() -> Self {
        Domain::Annulus {
            r_inner: PI / 4.0,
            r_outer: PI / 2.0,
        }
    }

    /// The reference annulus extruded to height `pi`.
    pub fn reference_cylinder() -> Self {
        Domain::ExtrudedAnnulus {
            r_inner: PI / 4.0,
            r_outer: PI / 2.0,
            height: PI,
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            Domain::UnitSquare | Domain::Annulus { .. } => 2,
            Domain::ExtrudedAnnulus { .. } => 3,
        }
    }

    /// Width of the lattice across the domain; a resolution of `N` particles
    /// per lattice direction corresponds to `dx = lattice_width / N`.
    pub fn lattice_width(&self) -> f64 {
        match *self {
            Domain::UnitSquare => 1.0,
            Domain::Annulus { r_outer, .. } | Domain::ExtrudedAnnulus { r_outer, .. } => {
                2.0 * r_outer
            }
        }
    }

    pub fn diameter(&self) -> f64 {
        match *self {
            Domain::UnitSquare => 2f64.sqrt(),
            Domain::Annulus { r_outer, .. } => 2.0 * r_outer,
            Domain::ExtrudedAnnulus {
                r_outer, height, ..
            } => (4.0 * r_outer * r_outer + height * height).sqrt(),
        }
    }

    /// Smallest length scale of the domain (side, wall thickness or height).
    pub fn feature_size(&self) -> f64 {
        match *self {
            Domain::UnitSquare => 1.0,
            Domain::Annulus { r_inner, r_outer } => r_outer - r_inner,
            Domain::ExtrudedAnnulus {
                r_inner,
                r_outer,
                height,
            } => (r_outer - r_inner).min(height),
        }
    }

    /// Negative inside, positive outside, zero on the boundary.
    pub fn signed_distance(&self, x: &Point) -> f64 {
        match *self {
            Domain::UnitSquare => {
                let qx = (x[0] - 0.5).abs() - 0.5;
                let qy = (x[1] - 0.5).abs() - 0.5;
                let outside = (qx.max(0.0).powi(2) + qy.max(0.0).powi(2)).sqrt();
                outside + qx.max(qy).min(0.0)
            }
            Domain::Annulus { r_inner, r_outer } => annulus_distance(x, r_inner, r_outer),
            Domain::ExtrudedAnnulus {
                r_inner,
                r_outer,
                height,
            } => {
                let radial = annulus_distance(x, r_inner, r_outer);
                let axial = (-x[2]).max(x[2] - height);
                if radial > 0.0 && axial > 0.0 {
                    (radial * radial + axial * axial).sqrt()
                } else {
                    radial.max(axial)
                }
            }
        }
    }

    pub fn contains(&self, x: &Point) -> bool {
        self.signed_distance(x) < 0.0
    }

    /// Outward unit normal of the boundary feature nearest to `x`.
    pub fn outward_normal(&self, x: &Point) -> Point {
        match *self {
            Domain::UnitSquare => {
                // distances to the four sides: left, right, bottom, top
                let d = [x[0], 1.0 - x[0], x[1], 1.0 - x[1]];
                let normals = [[-1.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, -1.0, 0.0], [0.0, 1.0, 0.0]];
                let dmin = d.iter().cloned().fold(f64::INFINITY, f64::min);
                let tol = 1e-12;
                let mut n = [0.0; 3];
                for (k, dk) in d.iter().enumerate() {
                    if (dk - dmin).abs() <= tol {
                        for c in 0..3 {
                            n[c] += normals[k][c];
                        }
                    }
                }
                normalized(n)
            }
            Domain::Annulus { r_inner, r_outer } => radial_normal(x, r_inner, r_outer),
            Domain::ExtrudedAnnulus {
                r_inner,
                r_outer,
                height,
            } => {
                let radial = annulus_distance(x, r_inner, r_outer);
                let axial = (-x[2]).max(x[2] - height);
                let axial_n = if x[2] < 0.5 * height { [0.0, 0.0, -1.0] } else { [0.0, 0.0, 1.0] };
                let radial_n = radial_normal(x, r_inner, r_outer);
                if (radial - axial).abs() <= 1e-12 {
                    normalized([radial_n[0], radial_n[1], axial_n[2]])
                } else if radial > axial {
                    radial_n
                } else {
                    axial_n
                }
            }
        }
    }

    /// Boundary samples at a spacing no larger than `dx`, with outward normals.
    pub fn sample_boundary(&self, dx: f64, guard: f64) -> Vec<(Point, Point)> {
        let mut out = Vec::new();
        match *self {
            Domain::UnitSquare => {
                let n = segments(1.0, dx);
                let s = 1.0 / n as f64;
                let corners = [[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]];
                let dirs = [[1.0, 0.0], [0.0, 1.0], [-1.0, 0.0], [0.0, -1.0]];
                for side in 0..4 {
                    for t in 0..n {
                        let p = if t == 0 {
                            [corners[side][0], corners[side][1], 0.0]
                        } else {
                            let tt = t as f64 * s;
                            [
                                corners[side][0] + tt * dirs[side][0],
                                corners[side][1] + tt * dirs[side][1],
                                0.0,
                            ]
                        };
                        out.push((p, self.outward_normal(&p)));
                    }
                }
            }
            Domain::Annulus { r_inner, r_outer } => {
                for (r, sign) in [(r_outer, 1.0), (r_inner, -1.0)] {
                    for (c, s) in ring(r, dx) {
                        out.push(([r * c, r * s, 0.0], [sign * c, sign * s, 0.0]));
                    }
                }
            }
            Domain::ExtrudedAnnulus {
                r_inner,
                r_outer,
                height,
            } => {
                let nz = segments(height, dx);
                for k in 0..=nz {
                    let z = if k == nz { height } else { height * k as f64 / nz as f64 };
                    let axial = if k == 0 {
                        -1.0
                    } else if k == nz {
                        1.0
                    } else {
                        0.0
                    };
                    for (r, sign) in [(r_outer, 1.0), (r_inner, -1.0)] {
                        for (c, s) in ring(r, dx) {
                            let n = normalized([sign * c, sign * s, axial]);
                            out.push(([r * c, r * s, z], n));
                        }
                    }
                }
                // caps: lattice points kept clear of the rim circles
                let band = guard * dx;
                let (lo, hi) = lattice_range(-r_outer, r_outer, dx);
                for (z, nz_sign) in [(0.0, -1.0), (height, 1.0)] {
                    for i in lo..=hi {
                        for j in lo..=hi {
                            let (x, y) = (i as f64 * dx, j as f64 * dx);
                            let r = (x * x + y * y).sqrt();
                            let clear = if band > 0.0 {
                                r > r_inner + band && r < r_outer - band
                            } else {
                                r > r_inner && r < r_outer
                            };
                            if clear {
                                out.push(([x, y, z], [0.0, 0.0, nz_sign]));
                            }
                        }
                    }
                }
            }
        }
        out
    }

    fn bounding_box(&self) -> (Point, Point) {
        match *self {
            Domain::UnitSquare => ([0.0; 3], [1.0, 1.0, 0.0]),
            Domain::Annulus { r_outer, .. } => ([-r_outer, -r_outer, 0.0], [r_outer, r_outer, 0.0]),
            Domain::ExtrudedAnnulus {
                r_outer, height, ..
            } => ([-r_outer, -r_outer, 0.0], [r_outer, r_outer, height]),
        }
    }
}

fn annulus_distance(x: &Point, r_inner: f64, r_outer: f64) -> f64 {
    let r = x[0].hypot(x[1]);
    (r - r_outer).max(r_inner - r)
}

fn radial_normal(x: &Point, r_inner: f64, r_outer: f64) -> Point {
    let r = x[0].hypot(x[1]);
    let (c, s) = if r > 0.0 { (x[0] / r, x[1] / r) } else { (1.0, 0.0) };
    if (r_outer - r) <= (r - r_inner) {
        [c, s, 0.0]
    } else {
        [-c, -s, 0.0]
    }
}

fn segments(length: f64, dx: f64) -> usize {
    ((length / dx) - 1e-9).ceil().max(1.0) as usize
}

/// `(cos, sin)` of uniformly spaced angles with arclength spacing `<= dx`.
fn ring(r: f64, dx: f64) -> Vec<(f64, f64)> {
    let n = segments(2.0 * PI * r, dx).max(3);
    (0..n)
        .map(|k| {
            let t = 2.0 * PI * k as f64 / n as f64;
            (t.cos(), t.sin())
        })
        .collect()
}

fn lattice_range(lo: f64, hi: f64, dx: f64) -> (i64, i64) {
    ((lo / dx).floor() as i64 - 1, (hi / dx).ceil() as i64 + 1)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum BoundaryKind {
    Dirichlet,
    Neumann,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum PointKind {
    Interior,
    DirichletBoundary,
    NeumannBoundary,
}

impl PointKind {
    pub fn is_boundary(self) -> bool {
        self != PointKind::Interior
    }

    fn as_str(self) -> &'static str {
        match self {
            PointKind::Interior => "interior",
            PointKind::DirichletBoundary => "dirichlet",
            PointKind::NeumannBoundary => "neumann",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        match s {
            "interior" => Some(PointKind::Interior),
            "dirichlet" => Some(PointKind::DirichletBoundary),
            "neumann" => Some(PointKind::NeumannBoundary),
            _ => None,
        }
    }
}

impl From<BoundaryKind> for PointKind {
    fn from(kind: BoundaryKind) -> Self {
        match kind {
            BoundaryKind::Dirichlet => PointKind::DirichletBoundary,
            BoundaryKind::Neumann => PointKind::NeumannBoundary,
        }
    }
}

/// Chooses the boundary condition type from a boundary position and its outward normal.
pub type BcAssignment<'a> = &'a (dyn Fn(&Point, &Point) -> BoundaryKind + Sync);

pub fn all_dirichlet(_: &Point, _: &Point) -> BoundaryKind {
    BoundaryKind::Dirichlet
}

pub fn all_neumann(_: &Point, _: &Point) -> BoundaryKind {
    BoundaryKind::Neumann
}

/// Parameters of [`discretize`].
#[derive(Clone, Copy, Debug)]
pub struct CloudParams {
    pub dx: f64,
    pub eta: f64,
    pub seed: u64,
    /// Lattice points closer than `guard * dx` to the boundary are deleted.
    pub guard: f64,
}

impl CloudParams {
    /// Jitter `0.1 dx` and a half-spacing guard band.
    pub fn new(dx: f64, seed: u64) -> Self {
        CloudParams {
            dx,
            eta: 0.1 * dx,
            seed,
            guard: 0.5,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PointCloud {
    pub dim: usize,
    pub positions: Vec<Point>,
    pub kinds: Vec<PointKind>,
    /// Outward unit normal, present exactly for boundary points.
    pub normals: Vec<Option<Point>>,
    /// Nominal lattice spacing used at generation.
    pub h: f64,
    pub seed: u64,
}

pub fn discretize(domain: &Domain, params: &CloudParams, bc: BcAssignment<'_>) -> Result<PointCloud> {
    let CloudParams {
        dx,
        eta,
        seed,
        guard,
    } = *params;
    if !(dx > 0.0) || !dx.is_finite() {
        return Err(Error::InvalidArgument(format!("dx must be positive, got {dx}")));
    }
    if !(eta >= 0.0 && eta < 0.5 * dx) {
        return Err(Error::InvalidArgument(format!(
            "eta must satisfy 0 <= eta < dx/2, got eta = {eta}, dx = {dx}"
        )));
    }
    if !(guard >= 0.0) {
        return Err(Error::InvalidArgument(format!("guard must be nonnegative, got {guard}")));
    }
    let feature = domain.feature_size();
    if dx > 0.5 * feature {
        return Err(Error::ResolutionTooCoarse { dx, feature });
    }
    let dim = domain.dim();

    let mut positions = Vec::new();
    let mut kinds = Vec::new();
    let mut normals = Vec::new();
    for (p, n) in domain.sample_boundary(dx, guard) {
        positions.push(p);
        kinds.push(PointKind::from(bc(&p, &n)));
        normals.push(Some(n));
    }

    // Every lattice point draws its jitter, kept or not, so the stream does
    // not depend on which points survive deletion.
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (lo, hi) = domain.bounding_box();
    let ranges: Vec<(i64, i64)> = (0..3)
        .map(|k| if k < dim { lattice_range(lo[k], hi[k], dx) } else { (0, 0) })
        .collect();
    let band = guard * dx;
    let mut interior = 0usize;
    for i in ranges[0].0..=ranges[0].1 {
        for j in ranges[1].0..=ranges[1].1 {
            for k in ranges[2].0..=ranges[2].1 {
                let mut p = [i as f64 * dx, j as f64 * dx, k as f64 * dx];
                for c in p.iter_mut().take(dim) {
                    *c += rng.random_range(-eta..=eta);
                }
                if dim == 2 {
                    p[2] = 0.0;
                }
                let sd = domain.signed_distance(&p);
                let keep = if band > 0.0 { sd < -band } else { sd < 0.0 };
                if keep {
                    positions.push(p);
                    kinds.push(PointKind::Interior);
                    normals.push(None);
                    interior += 1;
                }
            }
        }
    }
    if interior == 0 {
        return Err(Error::EmptyInterior);
    }
    Ok(PointCloud {
        dim,
        positions,
        kinds,
        normals,
        h: dx,
        seed,
    })
}

impl PointCloud {
    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    /// Nominal spacing `dx` the cloud was generated with.
    pub fn characteristic_spacing(&self) -> f64 {
        self.h
    }

    /// Largest nearest-neighbor distance over the cloud.
    pub fn measured_spacing(&self) -> Result<f64> {
        if self.len() < 2 {
            return Err(Error::TooFewPoints(self.len()));
        }
        let index = SpatialIndex::build(self, self.h)?;
        let mut worst = 0.0f64;
        for (i, x) in self.positions.iter().enumerate() {
            let mut radius = 1.5 * self.h;
            let nearest = loop {
                let found = index.query(x, radius);
                let best = found
                    .iter()
                    .filter(|&&j| j != i)
                    .map(|&j| norm(&sub(&self.positions[j], x)))
                    .fold(f64::INFINITY, f64::min);
                if best.is_finite() {
                    break best;
                }
                radius *= 2.0;
            };
            worst = worst.max(nearest);
        }
        Ok(worst)
    }

    pub fn count(&self, kind: PointKind) -> usize {
        self.kinds.iter().filter(|&&k| k == kind).count()
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(
            w,
            "# staggered-gmls point cloud: dim={} h={:.16e} seed={}",
            self.dim, self.h, self.seed
        )?;
        let axes = &["x", "y", "z"][..self.dim];
        let naxes = &["nx", "ny", "nz"][..self.dim];
        writeln!(w, "{},kind,{}", axes.join(","), naxes.join(","))?;
        for i in 0..self.len() {
            let mut fields: Vec<String> = (0..self.dim)
                .map(|c| format!("{:.16e}", self.positions[i][c]))
                .collect();
            fields.push(self.kinds[i].as_str().to_string());
            match &self.normals[i] {
                Some(n) => fields.extend((0..self.dim).map(|c| format!("{:.16e}", n[c]))),
                None => fields.extend((0..self.dim).map(|_| String::new())),
            }
            writeln!(w, "{}", fields.join(","))?;
        }
        Ok(())
    }

    pub fn read_csv<R: BufRead>(mut r: R) -> Result<Self> {
        let mut meta = String::new();
        r.read_line(&mut meta)?;
        let meta = meta.trim();
        let bad_meta = || Error::Parse {
            line: 1,
            message: format!("expected point cloud metadata comment, got {meta:?}"),
        };
        let body = meta.strip_prefix('#').ok_or_else(bad_meta)?;
        let mut dim = None;
        let mut h = None;
        let mut seed = None;
        for token in body.split_whitespace() {
            if let Some((key, value)) = token.split_once('=') {
                match key {
                    "dim" => dim = value.parse::<usize>().ok(),
                    "h" => h = value.parse::<f64>().ok(),
                    "seed" => seed = value.parse::<u64>().ok(),
                    _ => {}
                }
            }
        }
        let (dim, h, seed) = match (dim, h, seed) {
            (Some(d @ 2..=3), Some(h), Some(s)) => (d, h, s),
            _ => return Err(bad_meta()),
        };

        let mut reader = csv::ReaderBuilder::new()
            .has_headers(true)
            .comment(Some(b'#'))
            .from_reader(r);
        let mut cloud = PointCloud {
            dim,
            positions: Vec::new(),
            kinds: Vec::new(),
            normals: Vec::new(),
            h,
            seed,
        };
        for (row, record) in reader.records().enumerate() {
            let record = record?;
            let line = row + 3;
            let parse_err = |message: String| Error::Parse { line, message };
            if record.len() != 2 * dim + 1 {
                return Err(parse_err(format!("expected {} fields, got {}", 2 * dim + 1, record.len())));
            }
            let num = |k: usize| -> Result<f64> {
                record[k]
                    .parse::<f64>()
                    .map_err(|e| parse_err(format!("field {k}: {e}")))
            };
            let mut p = [0.0; 3];
            for (c, pc) in p.iter_mut().enumerate().take(dim) {
                *pc = num(c)?;
            }
            let kind = PointKind::parse(&record[dim])
                .ok_or_else(|| parse_err(format!("unknown point kind {:?}", &record[dim])))?;
            let normal = if kind.is_boundary() {
                let mut n = [0.0; 3];
                for (c, nc) in n.iter_mut().enumerate().take(dim) {
                    *nc = num(dim + 1 + c)?;
                }
                Some(n)
            } else {
                None
            };
            cloud.positions.push(p);
            cloud.kinds.push(kind);
            cloud.normals.push(normal);
        }
        Ok(cloud)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unperturbed(dx: f64, guard: f64) -> CloudParams {
        CloudParams {
            dx,
            eta: 0.0,
            seed: 7,
            guard,
        }
    }

    #[test]
    fn unit_square_quarter_spacing_has_25_points() {
        let cloud = discretize(&Domain::UnitSquare, &unperturbed(0.25, 0.0), &all_dirichlet).unwrap();
        assert_eq!(cloud.count(PointKind::DirichletBoundary), 16);
        assert_eq!(cloud.count(PointKind::Interior), 9);
        // oracle: the lattice points (i/4, j/4), i, j in 1..=3
        let mut expected: Vec<(i64, i64)> = (1..=3).flat_map(|i| (1..=3).map(move |j| (i, j))).collect();
        let mut got: Vec<(i64, i64)> = cloud
            .positions
            .iter()
            .zip(&cloud.kinds)
            .filter(|(_, k)| **k == PointKind::Interior)
            .map(|(p, _)| ((p[0] * 4.0).round() as i64, (p[1] * 4.0).round() as i64))
            .collect();
        expected.sort();
        got.sort();
        assert_eq!(got, expected);
        // the half-spacing guard band keeps the same points here
        let guarded = discretize(&Domain::UnitSquare, &unperturbed(0.25, 0.5), &all_dirichlet).unwrap();
        assert_eq!(guarded.len(), 25);
    }

    #[test]
    fn generation_is_deterministic() {
        let domain = Domain::reference_annulus();
        let params = CloudParams::new(PI / 32.0, 11);
        let a = discretize(&domain, &params, &all_dirichlet).unwrap();
        let b = discretize(&domain, &params, &all_dirichlet).unwrap();
        assert_eq!(a, b);
        let c = discretize(&domain, &CloudParams::new(PI / 32.0, 12), &all_dirichlet).unwrap();
        assert_ne!(a.positions, c.positions);
    }

    #[test]
    fn annulus_points_stay_in_the_ring() {
        let cloud = discretize(&Domain::reference_annulus(), &CloudParams::new(PI / 64.0, 3), &all_dirichlet).unwrap();
        for p in &cloud.positions {
            let r = p[0].hypot(p[1]);
            assert!(r >= PI / 4.0 - 1e-12 && r <= PI / 2.0 + 1e-12, "r = {r}");
        }
    }

    #[test]
    fn cloud_invariants_hold() {
        for domain in [Domain::UnitSquare, Domain::reference_annulus(), Domain::reference_cylinder()] {
            let dx = domain.lattice_width() / 12.0;
            let cloud = discretize(&domain, &CloudParams::new(dx, 5), &all_dirichlet).unwrap();
            let tol = 1e-10 * dx;
            for i in 0..cloud.len() {
                let sd = domain.signed_distance(&cloud.positions[i]);
                match cloud.kinds[i] {
                    PointKind::Interior => {
                        assert!(sd < 0.0);
                        assert!(cloud.normals[i].is_none());
                    }
                    _ => {
                        assert!(sd.abs() <= tol, "boundary point off the boundary by {sd}");
                        let n = cloud.normals[i].unwrap();
                        assert!((norm(&n) - 1.0).abs() <= 1e-12);
                    }
                }
            }
            let index = SpatialIndex::build(&cloud, dx).unwrap();
            for (i, x) in cloud.positions.iter().enumerate() {
                for j in index.query(x, 1e-8 * dx) {
                    assert_eq!(i, j, "coincident points {i} and {j}");
                }
            }
        }
    }

    #[test]
    fn point_count_scales_with_dimension() {
        for domain in [Domain::UnitSquare, Domain::reference_annulus(), Domain::reference_cylinder()] {
            let d = domain.dim() as i32;
            let fine = domain.lattice_width() / 16.0;
            let n_fine = discretize(&domain, &CloudParams::new(fine, 1), &all_dirichlet).unwrap().len();
            let n_coarse = discretize(&domain, &CloudParams::new(2.0 * fine, 1), &all_dirichlet).unwrap().len();
            let ratio = n_fine as f64 / n_coarse as f64;
            let target = 2f64.powi(d);
            assert!(
                ratio >= 0.7 * target && ratio <= 1.3 * target,
                "{domain:?}: ratio {ratio}"
            );
        }
    }

    #[test]
    fn jitter_within_tenth_spacing_stays_inside() {
        let domain = Domain::reference_annulus();
        for seed in 0..5 {
            let mut params = CloudParams::new(PI / 40.0, seed);
            params.guard = 0.0;
            let cloud = discretize(&domain, &params, &all_dirichlet).unwrap();
            for (p, k) in cloud.positions.iter().zip(&cloud.kinds) {
                if *k == PointKind::Interior {
                    assert!(domain.contains(p));
                }
            }
        }
    }

    #[test]
    fn rejects_bad_parameters() {
        let d = Domain::UnitSquare;
        assert!(matches!(
            discretize(&d, &unperturbed(0.0, 0.5), &all_dirichlet),
            Err(Error::InvalidArgument(_))
        ));
        let mut p = unperturbed(0.1, 0.5);
        p.eta = 0.05;
        assert!(matches!(discretize(&d, &p, &all_dirichlet), Err(Error::InvalidArgument(_))));
        assert!(matches!(
            discretize(&Domain::reference_annulus(), &unperturbed(0.6, 0.5), &all_dirichlet),
            Err(Error::ResolutionTooCoarse { .. })
        ));
    }

    #[test]
    fn empty_interior_is_an_error() {
        let thin = Domain::Annulus {
            r_inner: 1.0,
            r_outer: 1.1,
        };
        // lattice points exist in the ring but all fall inside the guard band
        let res = discretize(&thin, &unperturbed(0.05, 1.2), &all_dirichlet);
        assert!(matches!(res, Err(Error::EmptyInterior)), "{res:?}");
    }

    #[test]
    fn spacing_diagnostics() {
        let cloud = discretize(&Domain::UnitSquare, &unperturbed(0.25, 0.0), &all_dirichlet).unwrap();
        assert_eq!(cloud.characteristic_spacing(), 0.25);
        // oracle: brute-force nearest distances
        let mut brute = 0.0f64;
        for i in 0..cloud.len() {
            let mut best = f64::INFINITY;
            for j in 0..cloud.len() {
                if i != j {
                    best = best.min(norm(&sub(&cloud.positions[i], &cloud.positions[j])));
                }
            }
            brute = brute.max(best);
        }
        assert!((brute - 0.25).abs() < 1e-15);
        assert!((cloud.measured_spacing().unwrap() - brute).abs() < 1e-15);

        let single = PointCloud {
            dim: 2,
            positions: vec![[0.5, 0.5, 0.0]],
            kinds: vec![PointKind::Interior],
            normals: vec![None],
            h: 0.1,
            seed: 0,
        };
        assert!(matches!(single.measured_spacing(), Err(Error::TooFewPoints(1))));
    }

    #[test]
    fn signed_distance_and_normals() {
        let d = Domain::reference_annulus();
        let scale = 1e-12 * d.diameter();
        assert!(d.signed_distance(&[PI / 2.0, 0.0, 0.0]).abs() <= scale);
        assert!(d.signed_distance(&[0.0, PI / 4.0, 0.0]).abs() <= scale);
        assert!(d.signed_distance(&[1.2, 0.0, 0.0]) < 0.0);
        assert!(d.signed_distance(&[0.1, 0.0, 0.0]) > 0.0);
        assert!(d.signed_distance(&[2.0, 0.0, 0.0]) > 0.0);
        let n = d.outward_normal(&[0.0, PI / 4.0, 0.0]);
        assert!((n[1] + 1.0).abs() < 1e-15);

        let sq = Domain::UnitSquare;
        assert_eq!(sq.signed_distance(&[0.5, 0.5, 0.0]), -0.5);
        assert_eq!(sq.signed_distance(&[1.0, 0.3, 0.0]), 0.0);
        assert!(sq.signed_distance(&[1.5, 0.3, 0.0]) > 0.0);
        let corner = sq.outward_normal(&[0.0, 0.0, 0.0]);
        assert!((corner[0] + 0.5f64.sqrt()).abs() < 1e-15 && (corner[1] + 0.5f64.sqrt()).abs() < 1e-15);

        let cyl = Domain::reference_cylinder();
        assert!(cyl.signed_distance(&[1.2, 0.0, 1.0]) < 0.0);
        assert!(cyl.signed_distance(&[1.2, 0.0, 0.0]).abs() <= scale);
        assert!(cyl.signed_distance(&[1.2, 0.0, -0.5]) > 0.0);
        assert_eq!(cyl.outward_normal(&[1.2, 0.0, 0.01]), [0.0, 0.0, -1.0]);
    }

    #[test]
    fn csv_round_trip_is_bit_exact() {
        let bc = |p: &Point, _: &Point| if p[0] < 0.0 { BoundaryKind::Neumann } else { BoundaryKind::Dirichlet };
        for domain in [Domain::reference_annulus(), Domain::reference_cylinder()] {
            let cloud = discretize(&domain, &CloudParams::new(domain.lattice_width() / 10.0, 9), &bc).unwrap();
            let mut buf = Vec::new();
            cloud.write_csv(&mut buf).unwrap();
            let back = PointCloud::read_csv(&buf[..]).unwrap();
            assert_eq!(back, cloud);
        }
    }

    #[test]
    fn csv_rejects_garbage() {
        let text = "# staggered-gmls point cloud: dim=2 h=0.1 seed=0\nx,y,kind,nx,ny\n0.1,0.2,bogus,,\n";
        assert!(matches!(PointCloud::read_csv(text.as_bytes()), Err(Error::Parse { .. })));
        assert!(matches!(PointCloud::read_csv("x,y\n".as_bytes()), Err(Error::Parse { .. })));
    }
}
