//! Pixel KNN graph, its Markov transition structure, and diffusion-distance
//! queries.
//!
//! The graph is binary and undirected: W_ij = 1 when j is among the N
//! nearest neighbors of i or vice versa (max-symmetrization). The random
//! walk P = D⁻¹W is reversible with stationary distribution π = d/Σd, and
//! diffusion distances come from the spectral identity
//! D_t(i,j)² = Σ_k λ_k^{2t} (ψ_k(i) − ψ_k(j))² with ψ_k the π-orthonormal
//! right eigenvectors of P.

pub mod cache;
mod eigen;
mod knn;

pub use knn::{knn_table, KnnTable};

use crate::error::{Error, Result};
use crate::hsi::PixelSet;
use eigen::{EigenOptions, NormalizedAdjacency};

/// Largest accepted diffusion time; beyond this exponents would overflow
/// the fast integer-power path, and every mixing chain is stationary anyway.
pub const MAX_DIFFUSION_TIME: u32 = 1 << 20;

/// Default cap for materializing an all-pairs distance matrix (~128 MiB).
pub const ALL_PAIRS_CAP: usize = 4096;

/// Eigendecomposition controls for graph construction.
#[derive(Debug, Clone)]
pub struct GraphOptions {
    /// Hard cap on retained eigenpairs.
    pub eigen_cap: usize,
    /// Relative threshold below which a spectral term counts as invisible.
    pub eigen_tolerance: f64,
    /// Diffusion time the truncation rule is evaluated at. None keeps
    /// `eigen_cap` pairs (or all of them on small graphs).
    pub truncation_t: Option<u32>,
}

impl Default for GraphOptions {
    fn default() -> Self {
        GraphOptions {
            eigen_cap: 100,
            eigen_tolerance: 1e-8,
            truncation_t: None,
        }
    }
}

impl GraphOptions {
    /// Keep the complete spectrum: needed when distances must be exact at
    /// every t (including t = 0). Only feasible on small graphs.
    pub fn exact() -> Self {
        GraphOptions {
            eigen_cap: usize::MAX,
            eigen_tolerance: 1e-8,
            truncation_t: None,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.eigen_cap == 0 {
            return Err(Error::InvalidParameter {
                name: "eigen_cap",
                reason: "must be at least 1".into(),
            });
        }
        if !(self.eigen_tolerance > 0.0 && self.eigen_tolerance.is_finite()) {
            return Err(Error::InvalidParameter {
                name: "eigen_tolerance",
                reason: format!("must be a positive real, got {}", self.eigen_tolerance),
            });
        }
        if let Some(t) = self.truncation_t {
            validate_time(t)?;
        }
        Ok(())
    }
}

fn validate_time(t: u32) -> Result<()> {
    if t > MAX_DIFFUSION_TIME {
        return Err(Error::InvalidParameter {
            name: "time",
            reason: format!("must be at most {MAX_DIFFUSION_TIME}, got {t}"),
        });
    }
    Ok(())
}

/// Symmetric KNN graph over a pixel set with spectral machinery attached.
#[derive(Debug, Clone)]
pub struct PixelGraph {
    n: usize,
    n_neighbors: usize,
    offsets: Vec<usize>,
    neighbors: Vec<u32>,
    degrees: Vec<f64>,
    stationary: Vec<f64>,
    eigenvalues: Vec<f64>,
    /// π-orthonormal right eigenvectors of P, k-th at [k*n .. (k+1)*n].
    eigenvectors: Vec<f64>,
    bridges: Vec<(u32, u32)>,
}

/// Build the graph from pixels, including the KNN search.
pub fn knn_graph(pixels: &PixelSet, n_neighbors: usize, opts: &GraphOptions) -> Result<PixelGraph> {
    let table = knn::knn_table(pixels, n_neighbors)?;
    knn_graph_from_table(pixels, &table, opts)
}

/// Build the graph from a precomputed KNN table (shared with the density
/// estimator so the O(n²) search runs once).
pub fn knn_graph_from_table(
    pixels: &PixelSet,
    table: &KnnTable,
    opts: &GraphOptions,
) -> Result<PixelGraph> {
    opts.validate()?;
    let n = table.len();
    if n != pixels.len() {
        return Err(Error::InvalidParameter {
            name: "knn_table",
            reason: format!(
                "table covers {n} pixels but the pixel set has {}",
                pixels.len()
            ),
        });
    }

    // Symmetrize: W <- max(W, Wᵀ) over the directed KNN relation.
    let mut rows: Vec<Vec<u32>> = vec![Vec::with_capacity(table.k() * 2); n];
    for i in 0..n {
        for &j in table.neighbors(i) {
            rows[i].push(j);
            rows[j as usize].push(i as u32);
        }
    }
    for row in rows.iter_mut() {
        row.sort_unstable();
        row.dedup();
    }

    let bridges = bridge_components(&mut rows, pixels);

    let mut offsets = Vec::with_capacity(n + 1);
    offsets.push(0usize);
    let mut neighbors = Vec::with_capacity(rows.iter().map(Vec::len).sum());
    let mut degrees = Vec::with_capacity(n);
    for row in &rows {
        neighbors.extend_from_slice(row);
        offsets.push(neighbors.len());
        degrees.push(row.len() as f64);
    }
    drop(rows);
    let degree_total: f64 = degrees.iter().sum();
    let stationary: Vec<f64> = degrees.iter().map(|d| d / degree_total).collect();

    let inv_sqrt_deg: Vec<f64> = degrees.iter().map(|d| 1.0 / d.sqrt()).collect();
    let spectrum = eigen::leading_eigenpairs(
        &NormalizedAdjacency {
            n,
            offsets: &offsets,
            neighbors: &neighbors,
            inv_sqrt_deg: &inv_sqrt_deg,
        },
        &EigenOptions {
            cap: opts.eigen_cap,
            tolerance: opts.eigen_tolerance,
            truncation_t: opts.truncation_t,
        },
    )?;

    // Map the symmetric solver's vectors φ to P's right eigenvectors:
    // ψ_k(i) = φ_k(i)·√(Σd)/√(d_i), which makes them π-orthonormal.
    let sqrt_total = degree_total.sqrt();
    let k_eig = spectrum.values.len();
    let mut eigenvectors = spectrum.vectors;
    for k in 0..k_eig {
        let psi = &mut eigenvectors[k * n..(k + 1) * n];
        for (i, v) in psi.iter_mut().enumerate() {
            *v *= sqrt_total * inv_sqrt_deg[i];
        }
        // Sign convention: the largest-magnitude entry (ties toward the
        // lowest index) is positive, so reruns and caches agree bit for bit.
        let mut best = 0usize;
        for (i, v) in psi.iter().enumerate() {
            if v.abs() > psi[best].abs() {
                best = i;
            }
        }
        if psi[best] < 0.0 {
            for v in psi.iter_mut() {
                *v = -*v;
            }
        }
    }
    // The top eigenvector of a connected chain is the constant 1; store it
    // exactly so its spectral terms vanish identically.
    {
        let psi1 = &mut eigenvectors[0..n];
        if psi1.iter().any(|v| (v - 1.0).abs() > 1e-6) {
            return Err(Error::Numerical {
                context: "eigensolver",
                reason: "leading eigenvector is not constant; graph may be disconnected".into(),
            });
        }
        psi1.fill(1.0);
    }

    Ok(PixelGraph {
        n,
        n_neighbors: table.k(),
        offsets,
        neighbors,
        degrees,
        stationary,
        eigenvalues: spectrum.values,
        eigenvectors,
        bridges,
    })
}

/// Connected-component labels and count for an adjacency-list graph.
fn components(rows: &[Vec<u32>]) -> (Vec<u32>, usize) {
    let n = rows.len();
    let mut comp = vec![u32::MAX; n];
    let mut count = 0u32;
    let mut queue = Vec::new();
    for start in 0..n {
        if comp[start] != u32::MAX {
            continue;
        }
        comp[start] = count;
        queue.push(start);
        while let Some(i) = queue.pop() {
            for &j in &rows[i] {
                if comp[j as usize] == u32::MAX {
                    comp[j as usize] = count;
                    queue.push(j as usize);
                }
            }
        }
        count += 1;
    }
    (comp, count as usize)
}

/// While the graph is disconnected, add the single shortest inter-component
/// edge (ties by lowest index pair) and merge, logging each bridge.
fn bridge_components(rows: &mut [Vec<u32>], pixels: &PixelSet) -> Vec<(u32, u32)> {
    let mut bridges = Vec::new();
    loop {
        let (comp, count) = components(rows);
        if count <= 1 {
            break;
        }
        if bridges.is_empty() {
            log::warn!("knn graph is disconnected ({count} components); bridging");
        }
        let n = rows.len();
        let mut best: Option<(f64, usize, usize)> = None;
        for i in 0..n {
            for j in i + 1..n {
                if comp[i] == comp[j] {
                    continue;
                }
                let d = knn::dist_sq(pixels.row(i), pixels.row(j));
                let cand = (d, i, j);
                if best.is_none_or(|b| {
                    cand.0 < b.0 || (cand.0 == b.0 && (cand.1, cand.2) < (b.1, b.2))
                }) {
                    best = Some(cand);
                }
            }
        }
        let (d, i, j) = best.expect("two components imply a cross pair");
        log::warn!(
            "bridging components with edge {i}-{j} (distance {:.6e})",
            d.sqrt()
        );
        let ju = j as u32;
        let iu = i as u32;
        let pos = rows[i].binary_search(&ju).unwrap_err();
        rows[i].insert(pos, ju);
        let pos = rows[j].binary_search(&iu).unwrap_err();
        rows[j].insert(pos, iu);
        bridges.push((iu, ju));
    }
    bridges
}

/// Dense pairwise diffusion distances over a node subset.
#[derive(Debug, Clone)]
pub struct DistanceMatrix {
    m: usize,
    data: Vec<f64>,
}

impl DistanceMatrix {
    pub fn len(&self) -> usize {
        self.m
    }

    pub fn is_empty(&self) -> bool {
        self.m == 0
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.m + j]
    }
}

/// The spectral embedding at time t: row i is (λ_k^t ψ_k(i)) over the
/// retained non-constant eigenpairs, so Euclidean distance between rows is
/// the diffusion distance.
#[derive(Debug, Clone)]
pub struct DiffusionCoords {
    n: usize,
    dim: usize,
    data: Vec<f64>,
}

impl DiffusionCoords {
    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    /// Squared diffusion distance between nodes i and j.
    #[inline]
    pub fn distance_sq(&self, i: usize, j: usize) -> f64 {
        knn::dist_sq(self.row(i), self.row(j))
    }

    pub fn distance(&self, i: usize, j: usize) -> f64 {
        self.distance_sq(i, j).sqrt()
    }
}

impl PixelGraph {
    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    /// The N used for the KNN construction.
    pub fn n_neighbors(&self) -> usize {
        self.n_neighbors
    }

    /// Undirected edge count.
    pub fn edge_count(&self) -> usize {
        self.neighbors.len() / 2
    }

    /// Neighbor list of node i, ascending.
    #[inline]
    pub fn neighbors(&self, i: usize) -> &[u32] {
        &self.neighbors[self.offsets[i]..self.offsets[i + 1]]
    }

    pub fn degrees(&self) -> &[f64] {
        &self.degrees
    }

    pub fn stationary(&self) -> &[f64] {
        &self.stationary
    }

    /// Retained eigenvalues, |λ| descending, λ_1 = 1.
    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    /// π-orthonormal right eigenvector ψ_k.
    pub fn eigenvector(&self, k: usize) -> &[f64] {
        &self.eigenvectors[k * self.n..(k + 1) * self.n]
    }

    /// Bridge edges added to connect stray components (usually empty).
    pub fn bridges(&self) -> &[(u32, u32)] {
        &self.bridges
    }

    fn check_node(&self, i: usize) -> Result<()> {
        if i >= self.n {
            return Err(Error::IndexOutOfRange {
                index: i,
                n: self.n,
            });
        }
        Ok(())
    }

    /// Diffusion distance between nodes i and j at time t.
    pub fn diffusion_distance(&self, i: usize, j: usize, t: u32) -> Result<f64> {
        self.check_node(i)?;
        self.check_node(j)?;
        validate_time(t)?;
        if i == j {
            return Ok(0.0);
        }
        let mut acc = 0.0;
        for (k, &lam) in self.eigenvalues.iter().enumerate() {
            let scale = lam.powi(t as i32);
            let psi = self.eigenvector(k);
            let d = scale * psi[i] - scale * psi[j];
            acc += d * d;
        }
        Ok(acc.sqrt())
    }

    /// The spectral embedding whose Euclidean geometry is D_t.
    pub fn diffusion_coordinates(&self, t: u32) -> Result<DiffusionCoords> {
        validate_time(t)?;
        let k_eig = self.eigenvalues.len();
        let dim = k_eig.saturating_sub(1);
        let mut data = vec![0.0; self.n * dim];
        for k in 1..k_eig {
            let scale = self.eigenvalues[k].powi(t as i32);
            let psi = self.eigenvector(k);
            for i in 0..self.n {
                data[i * dim + (k - 1)] = scale * psi[i];
            }
        }
        Ok(DiffusionCoords {
            n: self.n,
            dim,
            data,
        })
    }

    /// All-pairs D_t over `subset` (or every node) under the default cap.
    pub fn diffusion_distance_matrix(
        &self,
        t: u32,
        subset: Option<&[usize]>,
    ) -> Result<DistanceMatrix> {
        self.diffusion_distance_matrix_with_cap(t, subset, ALL_PAIRS_CAP)
    }

    /// All-pairs D_t with an explicit size cap.
    pub fn diffusion_distance_matrix_with_cap(
        &self,
        t: u32,
        subset: Option<&[usize]>,
        cap: usize,
    ) -> Result<DistanceMatrix> {
        validate_time(t)?;
        let nodes: Vec<usize> = match subset {
            Some(s) => {
                for &i in s {
                    self.check_node(i)?;
                }
                s.to_vec()
            }
            None => (0..self.n).collect(),
        };
        let m = nodes.len();
        if m > cap {
            return Err(Error::MatrixTooLarge { n: m, cap });
        }
        let coords = self.diffusion_coordinates(t)?;
        let mut data = vec![0.0; m * m];
        for a in 0..m {
            for b in a + 1..m {
                let d = coords.distance(nodes[a], nodes[b]);
                data[a * m + b] = d;
                data[b * m + a] = d;
            }
        }
        Ok(DistanceMatrix { m, data })
    }

    /// Check the structural invariants; used by tests and diagnostics.
    pub fn verify_invariants(&self) -> Result<()> {
        let fail = |reason: String| Error::Numerical {
            context: "graph invariants",
            reason,
        };
        for i in 0..self.n {
            for &j in self.neighbors(i) {
                let j = j as usize;
                if j == i {
                    return Err(fail(format!("self loop at node {i}")));
                }
                if self.neighbors(j).binary_search(&(i as u32)).is_err() {
                    return Err(fail(format!("asymmetric edge {i}->{j}")));
                }
            }
            if self.neighbors(i).len() < self.n_neighbors {
                return Err(fail(format!(
                    "node {i} has {} neighbors, below N = {}",
                    self.neighbors(i).len(),
                    self.n_neighbors
                )));
            }
        }
        let total: f64 = self.stationary.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(fail(format!("stationary sums to {total}")));
        }
        let degree_total: f64 = self.degrees.iter().sum();
        for i in 0..self.n {
            if (self.stationary[i] - self.degrees[i] / degree_total).abs() > 1e-12 {
                return Err(fail(format!("stationary[{i}] is not degree/total")));
            }
        }
        // (πP)_j = Σ_{i∈N(j)} π_i / d_i must reproduce π_j.
        for j in 0..self.n {
            let pj: f64 = self
                .neighbors(j)
                .iter()
                .map(|&i| self.stationary[i as usize] / self.degrees[i as usize])
                .sum();
            if (pj - self.stationary[j]).abs() > 1e-10 {
                return Err(fail(format!(
                    "π is not stationary at node {j}: (πP)_j = {pj}, π_j = {}",
                    self.stationary[j]
                )));
            }
        }
        // π-weighted orthonormality of the retained eigenvectors.
        let k_eig = self.eigenvalues.len();
        for a in 0..k_eig {
            for b in a..k_eig {
                let va = self.eigenvector(a);
                let vb = self.eigenvector(b);
                let ip: f64 = (0..self.n)
                    .map(|i| self.stationary[i] * va[i] * vb[i])
                    .sum();
                let expect = if a == b { 1.0 } else { 0.0 };
                if (ip - expect).abs() > 1e-8 {
                    return Err(fail(format!(
                        "eigenvectors {a},{b} have π-inner product {ip}"
                    )));
                }
            }
        }
        Ok(())
    }
}
