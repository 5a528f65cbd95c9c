//! Epsilon-neighborhoods and the local edge data (midpoints, half-edges,
//! weights) each staggered stencil is built from.

use std::collections::HashMap;
use std::io::Write;

use crate::error::{Error, Result};
use crate::geometry::{norm, sub, Point, PointCloud};

/// Uniform-grid cell lists.
#[derive(Clone, Debug)]
pub struct SpatialIndex {
    cell_size: f64,
    dim: usize,
    cells: HashMap<[i64; 3], Vec<usize>>,
    positions: Vec<Point>,
}

impl SpatialIndex {
    pub fn build(cloud: &PointCloud, cell_size: f64) -> Result<Self> {
        if !(cell_size > 0.0) || !cell_size.is_finite() {
            return Err(Error::InvalidArgument(format!("cell size must be positive, got {cell_size}")));
        }
        let mut cells: HashMap<[i64; 3], Vec<usize>> = HashMap::new();
        for (i, p) in cloud.positions.iter().enumerate() {
            cells.entry(cell_key(p, cell_size)).or_default().push(i);
        }
        Ok(SpatialIndex {
            cell_size,
            dim: cloud.dim,
            cells,
            positions: cloud.positions.clone(),
        })
    }

    pub fn cell_size(&self) -> f64 {
        self.cell_size
    }

    /// Sorted indices `j` with `|x_j - x| < radius`.
    pub fn query(&self, x: &Point, radius: f64) -> Vec<usize> {
        let mut out = Vec::new();
        if !(radius > 0.0) {
            return out;
        }
        let reach = (radius / self.cell_size).ceil() as i64;
        let span = (2 * reach + 1) as f64;
        let scanned = span.powi(self.dim as i32);
        let mut visit = |members: &Vec<usize>| {
            for &j in members {
                if norm(&sub(&self.positions[j], x)) < radius {
                    out.push(j);
                }
            }
        };
        if scanned > self.cells.len() as f64 {
            self.cells.values().for_each(&mut visit);
        } else {
            let c = cell_key(x, self.cell_size);
            let zr = if self.dim == 3 { reach } else { 0 };
            for a in -reach..=reach {
                for b in -reach..=reach {
                    for e in -zr..=zr {
                        if let Some(members) = self.cells.get(&[c[0] + a, c[1] + b, c[2] + e]) {
                            visit(members);
                        }
                    }
                }
            }
        }
        out.sort_unstable();
        out
    }
}

fn cell_key(p: &Point, cell: f64) -> [i64; 3] {
    [
        (p[0] / cell).floor() as i64,
        (p[1] / cell).floor() as i64,
        (p[2] / cell).floor() as i64,
    ]
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum KernelFamily {
    /// `(1 - s)^4 (4 s + 1)` for `s = r / support < 1`.
    #[default]
    WendlandC2,
    /// `(1 - s)^p`.
    TruncatedPower(u32),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct WeightKernel {
    pub family: KernelFamily,
    pub support: f64,
}

impl WeightKernel {
    pub fn new(family: KernelFamily, support: f64) -> Self {
        WeightKernel { family, support }
    }

    pub fn eval(&self, r: f64) -> f64 {
        let s = r / self.support;
        if s >= 1.0 {
            return 0.0;
        }
        let s = s.max(0.0);
        match self.family {
            KernelFamily::WendlandC2 => (1.0 - s).powi(4) * (4.0 * s + 1.0),
            KernelFamily::TruncatedPower(p) => (1.0 - s).powi(p as i32),
        }
    }
}

/// Local primal grid around one point: the edges to its neighbors together
/// with their midpoints and the weights of the midpoint samples.
#[derive(Clone, Debug, PartialEq)]
pub struct Neighborhood {
    pub center: usize,
    pub center_position: Point,
    pub epsilon: f64,
    pub kernel: WeightKernel,
    /// Sorted, never contains `center`.
    pub neighbors: Vec<usize>,
    pub midpoints: Vec<Point>,
    /// `m_ij = x_ij - x_i`, half of the edge vector.
    pub half_edges: Vec<Point>,
    /// Kernel evaluated at the midpoint distance `|m_ij|`.
    pub weights: Vec<f64>,
}

impl Neighborhood {
    pub fn len(&self) -> usize {
        self.neighbors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.neighbors.is_empty()
    }

    /// Full edge vector `x_j - x_i`.
    pub fn edge(&self, k: usize) -> Point {
        let m = &self.half_edges[k];
        [2.0 * m[0], 2.0 * m[1], 2.0 * m[2]]
    }
}

pub fn build_neighborhood(
    index: &SpatialIndex,
    cloud: &PointCloud,
    i: usize,
    epsilon: f64,
    family: KernelFamily,
    min_neighbors: usize,
) -> Result<Neighborhood> {
    if !(epsilon > 0.0) {
        return Err(Error::InvalidArgument(format!("epsilon must be positive, got {epsilon}")));
    }
    let kernel = WeightKernel::new(family, epsilon);
    let xi = cloud.positions[i];
    let mut nb = Neighborhood {
        center: i,
        center_position: xi,
        epsilon,
        kernel,
        neighbors: Vec::new(),
        midpoints: Vec::new(),
        half_edges: Vec::new(),
        weights: Vec::new(),
    };
    for j in index.query(&xi, epsilon) {
        if j == i {
            continue;
        }
        let xj = &cloud.positions[j];
        let m = [
            0.5 * (xj[0] - xi[0]),
            0.5 * (xj[1] - xi[1]),
            0.5 * (xj[2] - xi[2]),
        ];
        let w = kernel.eval(norm(&m));
        if w <= 0.0 {
            continue;
        }
        nb.neighbors.push(j);
        nb.midpoints.push([xi[0] + m[0], xi[1] + m[1], xi[2] + m[2]]);
        nb.half_edges.push(m);
        nb.weights.push(w);
    }
    if nb.len() < min_neighbors {
        return Err(Error::StencilDeficient {
            point: i,
            count: nb.len(),
            required: min_neighbors,
        });
    }
    Ok(nb)
}

/// Support radius multipliers `c(m, d)` with `epsilon = c h`, for degrees 1 to 6.
const EPSILON_FACTORS_2D: [f64; 6] = [2.2, 2.9, 3.8, 4.6, 5.5, 6.4];
const EPSILON_FACTORS_3D: [f64; 6] = [2.0, 2.6, 3.2, 3.8, 4.5, 5.2];

pub const DEFAULT_SAFETY: f64 = 1.5;

fn binomial(n: usize, k: usize) -> usize {
    (0..k).fold(1, |acc, t| acc * (n - t) / (t + 1))
}

/// Support radius for degree `m` in dimension `d` at spacing `h`.
///
/// The tabulated multiplier is raised, if needed, until a full ball holds on
/// average at least `safety` times as many lattice neighbors as there are
/// staggered basis functions.
pub fn select_epsilon(m: usize, d: usize, h: f64, safety: f64) -> Result<f64> {
    if !(1..=6).contains(&m) {
        return Err(Error::InvalidArgument(format!("degree must be in 1..=6, got {m}")));
    }
    if d != 2 && d != 3 {
        return Err(Error::InvalidArgument(format!("dimension must be 2 or 3, got {d}")));
    }
    if !(h > 0.0) || !h.is_finite() {
        return Err(Error::InvalidArgument(format!("spacing must be positive, got {h}")));
    }
    let q = (binomial(m + d, d) - 1) as f64;
    let (table, ball) = if d == 2 {
        (EPSILON_FACTORS_2D, std::f64::consts::PI)
    } else {
        (EPSILON_FACTORS_3D, 4.0 / 3.0 * std::f64::consts::PI)
    };
    let needed = (safety.max(0.0) * q / ball).powf(1.0 / d as f64);
    Ok(table[m - 1].max(needed) * h)
}

/// Diagnostic dump: point index, neighbor count, support radius.
pub fn write_stencil_sizes<W: Write>(mut w: W, neighborhoods: &[Neighborhood]) -> Result<()> {
    writeln!(w, "point,neighbors,epsilon")?;
    for nb in neighborhoods {
        writeln!(w, "{},{},{:.16e}", nb.center, nb.len(), nb.epsilon)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{all_dirichlet, discretize, CloudParams, Domain, PointKind};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn brute_force(cloud: &PointCloud, x: &Point, radius: f64) -> Vec<usize> {
        (0..cloud.len())
            .filter(|&j| norm(&sub(&cloud.positions[j], x)) < radius)
            .collect()
    }

    fn square_25() -> PointCloud {
        let params = CloudParams {
            dx: 0.25,
            eta: 0.0,
            seed: 0,
            guard: 0.0,
        };
        discretize(&Domain::UnitSquare, &params, &all_dirichlet).unwrap()
    }

    fn random_cloud(n: usize, dim: usize, seed: u64) -> PointCloud {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let positions: Vec<Point> = (0..n)
            .map(|_| {
                let mut p = [rng.random::<f64>(), rng.random::<f64>(), 0.0];
                if dim == 3 {
                    p[2] = rng.random::<f64>();
                }
                p
            })
            .collect();
        PointCloud {
            dim,
            kinds: vec![PointKind::Interior; n],
            normals: vec![None; n],
            positions,
            h: 1.0 / (n as f64).sqrt(),
            seed,
        }
    }

    #[test]
    fn index_matches_brute_force_on_square() {
        let cloud = square_25();
        let index = SpatialIndex::build(&cloud, 0.25).unwrap();
        for x in &cloud.positions {
            assert_eq!(index.query(x, 0.3), brute_force(&cloud, x, 0.3));
        }
        assert!(index.query(&[0.5, 0.5, 0.0], 0.0).is_empty());
        let all = index.query(&[0.5, 0.5, 0.0], 10.0);
        assert_eq!(all, (0..cloud.len()).collect::<Vec<_>>());
    }

    #[test]
    fn index_matches_brute_force_on_random_clouds() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for trial in 0..100u64 {
            let n = rng.random_range(1..=500);
            let dim = if trial % 3 == 0 { 3 } else { 2 };
            let cloud = random_cloud(n, dim, trial);
            let cell = rng.random_range(0.02..0.3);
            let index = SpatialIndex::build(&cloud, cell).unwrap();
            for _ in 0..5 {
                let i = rng.random_range(0..n);
                let radius = rng.random_range(0.0..0.5);
                let x = cloud.positions[i];
                assert_eq!(index.query(&x, radius), brute_force(&cloud, &x, radius));
            }
        }
    }

    #[test]
    fn lattice_interior_point_has_moore_neighborhood() {
        let params = CloudParams {
            dx: 0.1,
            eta: 0.0,
            seed: 0,
            guard: 0.5,
        };
        let cloud = discretize(&Domain::UnitSquare, &params, &all_dirichlet).unwrap();
        let index = SpatialIndex::build(&cloud, 0.1).unwrap();
        let center = cloud
            .positions
            .iter()
            .position(|p| (p[0] - 0.5).abs() < 1e-9 && (p[1] - 0.5).abs() < 1e-9)
            .unwrap();
        let nb = build_neighborhood(&index, &cloud, center, 0.15, KernelFamily::WendlandC2, 1).unwrap();
        // oracle: lattice offsets (a, b) != 0 with |(a, b)| < 1.5
        let expected = (-2i32..=2)
            .flat_map(|a| (-2i32..=2).map(move |b| (a, b)))
            .filter(|&(a, b)| (a, b) != (0, 0) && ((a * a + b * b) as f64).sqrt() < 1.5)
            .count();
        assert_eq!(expected, 8);
        assert_eq!(nb.len(), 8);
        for k in 0..nb.len() {
            let m = nb.half_edges[k];
            let x = nb.center_position;
            assert_eq!(nb.midpoints[k], [x[0] + m[0], x[1] + m[1], x[2] + m[2]]);
            assert!(nb.weights[k] > 0.0);
            assert!(norm(&nb.edge(k)) < nb.epsilon);
        }
        assert!(nb.neighbors.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn small_epsilon_is_deficient() {
        let cloud = square_25();
        let index = SpatialIndex::build(&cloud, 0.25).unwrap();
        let err = build_neighborhood(&index, &cloud, 20, 0.1, KernelFamily::WendlandC2, 5).unwrap_err();
        assert!(matches!(err, Error::StencilDeficient { point: 20, count: 0, required: 5 }));
    }

    #[test]
    fn wendland_endpoints() {
        let k = WeightKernel::new(KernelFamily::WendlandC2, 0.7);
        assert_eq!(k.eval(0.0), 1.0);
        assert_eq!(k.eval(0.7), 0.0);
        assert_eq!(k.eval(2.0), 0.0);
    }

    #[test]
    fn kernels_are_positive_compact_and_nonincreasing() {
        for family in [KernelFamily::WendlandC2, KernelFamily::TruncatedPower(2), KernelFamily::TruncatedPower(6)] {
            let k = WeightKernel::new(family, 1.3);
            assert!(k.eval(0.0) > 0.0);
            let mut prev = f64::INFINITY;
            for t in 0..1000 {
                let r = 1.3 * 1.2 * t as f64 / 999.0;
                let w = k.eval(r);
                if r < 1.3 {
                    assert!(w > 0.0, "{family:?} at r = {r}");
                } else {
                    assert_eq!(w, 0.0);
                }
                assert!(w <= prev);
                prev = w;
            }
        }
    }

    #[test]
    fn epsilon_selection() {
        let e = select_epsilon(2, 2, 0.1, DEFAULT_SAFETY).unwrap();
        assert!((e - 0.29).abs() < 1e-15);
        let e2 = select_epsilon(2, 2, 0.2, DEFAULT_SAFETY).unwrap();
        assert!((e2 - 2.0 * e).abs() < 1e-15);
        assert!((select_epsilon(4, 2, 1.0, DEFAULT_SAFETY).unwrap() - 4.6).abs() < 1e-15);
        assert!((select_epsilon(6, 2, 1.0, DEFAULT_SAFETY).unwrap() - 6.4).abs() < 1e-15);
        assert!((select_epsilon(2, 3, 1.0, DEFAULT_SAFETY).unwrap() - 2.6).abs() < 1e-15);
        assert!((select_epsilon(4, 3, 1.0, DEFAULT_SAFETY).unwrap() - 3.8).abs() < 1e-15);
        assert!((select_epsilon(6, 3, 1.0, DEFAULT_SAFETY).unwrap() - 5.2).abs() < 1e-15);
        assert!(select_epsilon(2, 2, 0.0, DEFAULT_SAFETY).is_err());
        assert!(select_epsilon(0, 2, 0.1, DEFAULT_SAFETY).is_err());
        assert!(select_epsilon(2, 4, 0.1, DEFAULT_SAFETY).is_err());
        // a huge safety factor overrides the table
        assert!(select_epsilon(2, 2, 1.0, 100.0).unwrap() > 2.9);
    }

    #[test]
    fn stencil_size_dump() {
        let cloud = square_25();
        let index = SpatialIndex::build(&cloud, 0.25).unwrap();
        let nbs: Vec<_> = (0..3)
            .map(|i| build_neighborhood(&index, &cloud, i, 0.3, KernelFamily::WendlandC2, 0).unwrap())
            .collect();
        let mut buf = Vec::new();
        write_stencil_sizes(&mut buf, &nbs).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 4);
        assert!(text.starts_with("point,neighbors,epsilon\n0,"));
    }

    proptest! {
        #[test]
        fn neighborhoods_are_permutation_invariant(seed in 0u64..1000, shift in 1usize..40) {
            let cloud = random_cloud(60, 2, seed);
            let n = cloud.len();
            let perm: Vec<usize> = (0..n).map(|k| (k * 7 + shift) % n).collect();
            prop_assume!({
                let mut s = perm.clone();
                s.sort();
                s.dedup();
                s.len() == n
            });
            let mut relabeled = cloud.clone();
            for (new, &old) in perm.iter().enumerate() {
                relabeled.positions[new] = cloud.positions[old];
            }
            let ia = SpatialIndex::build(&cloud, 0.1).unwrap();
            let ib = SpatialIndex::build(&relabeled, 0.1).unwrap();
            for (new, &old) in perm.iter().enumerate() {
                let a = build_neighborhood(&ia, &cloud, old, 0.3, KernelFamily::WendlandC2, 0).unwrap();
                let b = build_neighborhood(&ib, &relabeled, new, 0.3, KernelFamily::WendlandC2, 0).unwrap();
                let mut pa: Vec<(u64, u64)> = a.neighbors.iter().map(|&j| (cloud.positions[j][0].to_bits(), cloud.positions[j][1].to_bits())).collect();
                let mut pb: Vec<(u64, u64)> = b.neighbors.iter().map(|&j| (relabeled.positions[j][0].to_bits(), relabeled.positions[j][1].to_bits())).collect();
                pa.sort();
                pb.sort();
                prop_assert_eq!(pa, pb);
            }
        }
    }
}
