//! The clustering algorithm proper: kernel density, the purity/density
//! harmonic mean ζ, diffusion-distance separation d_t, mode selection by
//! ζ·d_t, and label propagation in ζ order.

use log::warn;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::graph::{
    knn_graph, knn_graph_from_table, knn_table, GraphOptions, KnnTable, PixelGraph,
    MAX_DIFFUSION_TIME,
};
use crate::hsi::PixelSet;
use crate::io::IntGrid;
use crate::unmixing::{unmix, UnmixingModel};

/// Tuning knobs for one clustering run.
///
/// The defaults are the values used for the 1 m forest scene study:
/// N = 150 neighbors, σ₀ = 3.89e-4, t = 32, K = 2.
#[derive(Debug, Clone)]
pub struct ClusterParams {
    /// Number of clusters K.
    pub clusters: usize,
    /// Graph neighbor count N.
    pub n_neighbors: usize,
    /// Density neighbor count; defaults to `n_neighbors`.
    pub density_neighbors: Option<usize>,
    /// Density scale σ₀.
    pub sigma0: f64,
    /// Diffusion time t.
    pub time: u32,
    /// Seed for the endmember search.
    pub seed: u64,
    /// Cap on retained eigenpairs.
    pub eigen_cap: usize,
    /// Relative spectral truncation tolerance.
    pub eigen_tolerance: f64,
}

impl Default for ClusterParams {
    fn default() -> Self {
        ClusterParams {
            clusters: 2,
            n_neighbors: 150,
            density_neighbors: None,
            sigma0: 3.89e-4,
            time: 32,
            seed: 0,
            eigen_cap: 100,
            eigen_tolerance: 1e-8,
        }
    }
}

impl ClusterParams {
    /// Graph options consistent with these parameters.
    pub fn graph_options(&self) -> GraphOptions {
        GraphOptions {
            eigen_cap: self.eigen_cap,
            eigen_tolerance: self.eigen_tolerance,
            truncation_t: Some(self.time),
        }
    }

    /// Validate against a pixel count.
    pub fn validate(&self, n: usize) -> Result<()> {
        if self.clusters == 0 || self.clusters > n {
            return Err(Error::InvalidParameter {
                name: "clusters",
                reason: format!("need 1 <= K <= {n} pixels, got {}", self.clusters),
            });
        }
        if self.n_neighbors == 0 || self.n_neighbors >= n {
            return Err(Error::InvalidParameter {
                name: "n_neighbors",
                reason: format!("need 1 <= N < {n} pixels, got {}", self.n_neighbors),
            });
        }
        if let Some(dn) = self.density_neighbors {
            if dn == 0 || dn >= n {
                return Err(Error::InvalidParameter {
                    name: "density_neighbors",
                    reason: format!("need 1 <= N < {n} pixels, got {dn}"),
                });
            }
        }
        if !(self.sigma0 > 0.0 && self.sigma0.is_finite()) {
            return Err(Error::InvalidParameter {
                name: "sigma0",
                reason: format!("must be positive and finite, got {}", self.sigma0),
            });
        }
        if self.time > MAX_DIFFUSION_TIME {
            return Err(Error::InvalidParameter {
                name: "time",
                reason: format!("must be at most {MAX_DIFFUSION_TIME}, got {}", self.time),
            });
        }
        if self.eigen_cap == 0 {
            return Err(Error::InvalidParameter {
                name: "eigen_cap",
                reason: "must be at least 1".into(),
            });
        }
        Ok(())
    }
}

/// Everything one clustering run produced, kept for diagnostics.
#[derive(Debug, Clone)]
pub struct ClusterState {
    density: Vec<f64>,
    zeta: Vec<f64>,
    dt_value: Vec<f64>,
    dt_parent: Vec<Option<u32>>,
    modes: Vec<u32>,
    labels: Vec<u32>,
    fallback_count: usize,
}

impl ClusterState {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Kernel density per pixel.
    pub fn density(&self) -> &[f64] {
        &self.density
    }

    /// Harmonic mean of normalized density and purity, in [0, 1].
    pub fn zeta(&self) -> &[f64] {
        &self.zeta
    }

    /// Diffusion distance to the nearest higher-ζ pixel (max distance for
    /// the ζ-maximizer).
    pub fn dt_value(&self) -> &[f64] {
        &self.dt_value
    }

    /// The realized nearest higher-ζ pixel; none for the ζ-maximizer.
    pub fn dt_parent(&self) -> &[Option<u32>] {
        &self.dt_parent
    }

    /// Mode pixel indices; `modes()[j]` carries label j+1.
    pub fn modes(&self) -> &[u32] {
        &self.modes
    }

    /// Cluster labels in 1..=K.
    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    /// How many pixels were labeled through the unconditional fallback
    /// (no labeled higher-ζ candidate existed when they were visited).
    pub fn fallback_count(&self) -> usize {
        self.fallback_count
    }
}

/// Kernel density: p(x) = Σ_{y ∈ NN(x,N)} exp(−‖x−y‖² / σ₀²), self excluded.
pub fn density(pixels: &PixelSet, n_neighbors: usize, sigma0: f64) -> Result<Vec<f64>> {
    if !(sigma0 > 0.0 && sigma0.is_finite()) {
        return Err(Error::InvalidParameter {
            name: "sigma0",
            reason: format!("must be positive and finite, got {sigma0}"),
        });
    }
    let table = knn_table(pixels, n_neighbors)?;
    density_from_table(&table, sigma0)
}

/// Density from an already-built neighbor table, so the O(n²) search can be
/// shared with graph construction.
pub fn density_from_table(table: &KnnTable, sigma0: f64) -> Result<Vec<f64>> {
    if !(sigma0 > 0.0 && sigma0.is_finite()) {
        return Err(Error::InvalidParameter {
            name: "sigma0",
            reason: format!("must be positive and finite, got {sigma0}"),
        });
    }
    let inv_scale = 1.0 / (sigma0 * sigma0);
    Ok((0..table.len())
        .into_par_iter()
        .map(|i| {
            table
                .distances_sq(i)
                .iter()
                .map(|&d2| (-d2 * inv_scale).exp())
                .sum()
        })
        .collect())
}

/// ζ: harmonic mean of max-normalized density and purity.
pub fn zeta(density: &[f64], purity: &[f64]) -> Result<Vec<f64>> {
    if density.len() != purity.len() {
        return Err(Error::DimensionMismatch {
            context: "zeta inputs",
            left_rows: density.len(),
            left_cols: 1,
            right_rows: purity.len(),
            right_cols: 1,
        });
    }
    let max_p = density.iter().fold(0.0f64, |a, &b| a.max(b));
    let max_eta = purity.iter().fold(0.0f64, |a, &b| a.max(b));
    if max_p <= 0.0 || max_eta <= 0.0 {
        return Err(Error::Numerical {
            context: "zeta",
            reason: "density or purity is zero everywhere".into(),
        });
    }
    Ok(density
        .iter()
        .zip(purity)
        .map(|(&p, &eta)| {
            let pn = p / max_p;
            let en = eta / max_eta;
            if pn + en == 0.0 {
                0.0
            } else {
                2.0 * pn * en / (pn + en)
            }
        })
        .collect())
}

/// True when y outranks x in the (ζ, lowest index wins ties) total order.
fn outranks(zeta: &[f64], y: usize, x: usize) -> bool {
    zeta[y] > zeta[x] || (zeta[y] == zeta[x] && y < x)
}

fn zeta_argmax(zeta: &[f64]) -> usize {
    let mut best = 0usize;
    for i in 1..zeta.len() {
        if outranks(zeta, i, best) {
            best = i;
        }
    }
    best
}

/// d_t for every pixel: the ζ-maximizer gets its distance to the farthest
/// pixel (no parent); everyone else gets the distance to, and the identity
/// of, its diffusion-nearest pixel of higher ζ.
pub fn dt_values(graph: &PixelGraph, zeta: &[f64], t: u32) -> Result<(Vec<f64>, Vec<Option<u32>>)> {
    let n = graph.len();
    if zeta.len() != n {
        return Err(Error::DimensionMismatch {
            context: "zeta versus graph",
            left_rows: zeta.len(),
            left_cols: 1,
            right_rows: n,
            right_cols: 1,
        });
    }
    let coords = graph.diffusion_coordinates(t)?;
    let top = zeta_argmax(zeta);

    let per_node: Vec<(f64, Option<u32>)> = (0..n)
        .into_par_iter()
        .map(|x| {
            if x == top {
                let far = (0..n)
                    .filter(|&y| y != x)
                    .map(|y| coords.distance_sq(x, y))
                    .fold(0.0f64, f64::max);
                return Ok((far.sqrt(), None));
            }
            let mut best_d2 = f64::INFINITY;
            let mut parent = None;
            for y in 0..n {
                if y != x && outranks(zeta, y, x) {
                    let d2 = coords.distance_sq(x, y);
                    if d2 < best_d2 {
                        best_d2 = d2;
                        parent = Some(y as u32);
                    }
                }
            }
            match parent {
                Some(p) => Ok((best_d2.sqrt(), Some(p))),
                None => Err(Error::Numerical {
                    context: "diffusion separation",
                    reason: format!("pixel {x} has no higher-ranked candidate"),
                }),
            }
        })
        .collect::<Result<_>>()?;

    Ok(per_node.into_iter().unzip())
}

/// The K pixels maximizing ζ·d_t, ordered so `modes[j]` takes label j+1
/// (descending score, ties to the lowest index).
pub fn select_modes(zeta: &[f64], dt_value: &[f64], k: usize) -> Result<Vec<u32>> {
    let n = zeta.len();
    if dt_value.len() != n {
        return Err(Error::DimensionMismatch {
            context: "zeta versus d_t",
            left_rows: zeta.len(),
            left_cols: 1,
            right_rows: dt_value.len(),
            right_cols: 1,
        });
    }
    if k == 0 || k > n {
        return Err(Error::InvalidParameter {
            name: "clusters",
            reason: format!("need 1 <= K <= {n}, got {k}"),
        });
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        let sa = zeta[a] * dt_value[a];
        let sb = zeta[b] * dt_value[b];
        sb.total_cmp(&sa).then(a.cmp(&b))
    });
    Ok(order[..k].iter().map(|&i| i as u32).collect())
}

/// Propagate mode labels to every pixel in non-increasing ζ order.
///
/// Returns the labels plus the number of pixels that had no labeled
/// higher-ζ candidate and took the nearest labeled pixel instead (each such
/// case is also logged).
pub fn propagate_labels(
    graph: &PixelGraph,
    zeta: &[f64],
    modes: &[u32],
    t: u32,
) -> Result<(Vec<u32>, usize)> {
    let n = graph.len();
    if zeta.len() != n {
        return Err(Error::DimensionMismatch {
            context: "zeta versus graph",
            left_rows: zeta.len(),
            left_cols: 1,
            right_rows: n,
            right_cols: 1,
        });
    }
    let mut labels = vec![0u32; n];
    for (j, &m) in modes.iter().enumerate() {
        let m = m as usize;
        if m >= n {
            return Err(Error::IndexOutOfRange { index: m, n });
        }
        if labels[m] != 0 {
            return Err(Error::InvalidParameter {
                name: "modes",
                reason: format!("pixel {m} listed more than once"),
            });
        }
        labels[m] = (j + 1) as u32;
    }

    let coords = graph.diffusion_coordinates(t)?;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| zeta[b].total_cmp(&zeta[a]).then(a.cmp(&b)));

    let mut fallback_count = 0usize;
    for pos in 0..n {
        let x = order[pos];
        if labels[x] != 0 {
            continue;
        }
        // Everything visited earlier outranks x and is already labeled, so
        // the higher-ζ labeled candidates are exactly order[..pos].
        let nearest = order[..pos]
            .iter()
            .map(|&y| (coords.distance_sq(x, y), y))
            .fold(None, |best: Option<(f64, usize)>, (d2, y)| match best {
                Some((bd, by)) if bd < d2 || (bd == d2 && by < y) => Some((bd, by)),
                _ => Some((d2, y)),
            });
        if let Some((_, y)) = nearest {
            labels[x] = labels[y];
            continue;
        }
        // x outranks every mode; take the nearest labeled pixel regardless
        // of rank.
        warn!("pixel {x} outranks all modes in zeta; labeling from its nearest mode");
        fallback_count += 1;
        let (_, y) = modes
            .iter()
            .map(|&y| (coords.distance_sq(x, y as usize), y as usize))
            .fold(None, |best: Option<(f64, usize)>, (d2, y)| match best {
                Some((bd, by)) if bd < d2 || (bd == d2 && by < y) => Some((bd, by)),
                _ => Some((d2, y)),
            })
            .ok_or(Error::InvalidParameter {
                name: "modes",
                reason: "no modes supplied".into(),
            })?;
        labels[x] = labels[y];
    }
    Ok((labels, fallback_count))
}

/// Run the clustering stages on an existing unmixing model and graph.
pub fn cluster_with_model_and_graph(
    pixels: &PixelSet,
    params: &ClusterParams,
    model: &UnmixingModel,
    graph: &PixelGraph,
) -> Result<ClusterState> {
    let n = pixels.len();
    params.validate(n)?;
    if model.len() != n || graph.len() != n {
        return Err(Error::DimensionMismatch {
            context: "pixels versus model/graph",
            left_rows: n,
            left_cols: 1,
            right_rows: model.len(),
            right_cols: graph.len(),
        });
    }
    let p = density(
        pixels,
        params.density_neighbors.unwrap_or(params.n_neighbors),
        params.sigma0,
    )
    .map_err(|e| e.in_stage("density"))?;
    finish_stages(params, model, graph, p)
}

fn finish_stages(
    params: &ClusterParams,
    model: &UnmixingModel,
    graph: &PixelGraph,
    p: Vec<f64>,
) -> Result<ClusterState> {
    let z = zeta(&p, model.purity()).map_err(|e| e.in_stage("zeta"))?;
    let (dt_value, dt_parent) =
        dt_values(graph, &z, params.time).map_err(|e| e.in_stage("diffusion separation"))?;
    let modes =
        select_modes(&z, &dt_value, params.clusters).map_err(|e| e.in_stage("mode selection"))?;
    let (labels, fallback_count) = propagate_labels(graph, &z, &modes, params.time)
        .map_err(|e| e.in_stage("label propagation"))?;
    Ok(ClusterState {
        density: p,
        zeta: z,
        dt_value,
        dt_parent,
        modes,
        labels,
        fallback_count,
    })
}

/// The full pipeline: unmixing, graph construction, then clustering.
pub fn cluster(pixels: &PixelSet, params: &ClusterParams) -> Result<ClusterState> {
    params.validate(pixels.len())?;
    let model = unmix(pixels, params.seed)?;
    let density_n = params.density_neighbors.unwrap_or(params.n_neighbors);
    if density_n != params.n_neighbors {
        let graph = knn_graph(pixels, params.n_neighbors, &params.graph_options())
            .map_err(|e| e.in_stage("graph"))?;
        return cluster_with_model_and_graph(pixels, params, &model, &graph);
    }
    let table = knn_table(pixels, params.n_neighbors).map_err(|e| e.in_stage("graph"))?;
    let graph = knn_graph_from_table(pixels, &table, &params.graph_options())
        .map_err(|e| e.in_stage("graph"))?;
    let p = density_from_table(&table, params.sigma0).map_err(|e| e.in_stage("density"))?;
    finish_stages(params, &model, &graph, p)
}

/// Place per-pixel labels back onto the scene grid; positions that were
/// masked out stay 0.
pub fn label_grid(pixels: &PixelSet, labels: &[u32], rows: usize, cols: usize) -> Result<IntGrid> {
    if labels.len() != pixels.len() {
        return Err(Error::DimensionMismatch {
            context: "labels versus pixels",
            left_rows: labels.len(),
            left_cols: 1,
            right_rows: pixels.len(),
            right_cols: 1,
        });
    }
    let mut grid = IntGrid::zeros(rows, cols);
    for (&(r, c), &label) in pixels.origins().iter().zip(labels) {
        let (r, c) = (r as usize, c as usize);
        if r >= rows || c >= cols {
            return Err(Error::IndexOutOfRange {
                index: r * cols + c,
                n: rows * cols,
            });
        }
        grid.set(r, c, label);
    }
    Ok(grid)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn set(points: &[Vec<f64>]) -> PixelSet {
        let dims = points[0].len();
        let flat: Vec<f64> = points.iter().flatten().copied().collect();
        let origins = (0..points.len()).map(|i| (i as u32, 0)).collect();
        PixelSet::from_rows(flat, dims, origins).unwrap()
    }

    fn rand_stream(seed: u64) -> impl FnMut() -> f64 {
        let mut s = seed | 1;
        move || {
            s ^= s << 13;
            s ^= s >> 7;
            s ^= s << 17;
            (s >> 11) as f64 / (1u64 << 53) as f64
        }
    }

    #[test]
    fn density_of_identical_points_counts_neighbors() {
        // 6 copies of one point, N = 5: every term is exp(0) = 1.
        let points = vec![vec![0.3, 0.7]; 6];
        let p = density(&set(&points), 5, 0.5).unwrap();
        assert!(p.iter().all(|&v| v == 5.0));
    }

    #[test]
    fn density_of_two_points_closed_form() {
        let d = 0.35f64;
        let sigma0 = 0.2f64;
        let points = vec![vec![0.0, 0.0], vec![d, 0.0]];
        let p = density(&set(&points), 1, sigma0).unwrap();
        let want = (-d * d / (sigma0 * sigma0)).exp();
        assert!((p[0] - want).abs() < 1e-15 && (p[1] - want).abs() < 1e-15);
    }

    #[test]
    fn density_matches_double_loop_oracle() {
        let mut next = rand_stream(0x00d5);
        let points: Vec<Vec<f64>> = (0..30).map(|_| (0..4).map(|_| next()).collect()).collect();
        let sigma0 = 0.4;
        let p = density(&set(&points), 5, sigma0).unwrap();
        for i in 0..points.len() {
            let mut dists: Vec<(f64, usize)> = (0..points.len())
                .filter(|&j| j != i)
                .map(|j| {
                    let d2: f64 = points[i]
                        .iter()
                        .zip(&points[j])
                        .map(|(a, b)| (a - b) * (a - b))
                        .sum();
                    (d2, j)
                })
                .collect();
            dists.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            let want: f64 = dists[..5]
                .iter()
                .map(|&(d2, _)| (-d2 / (sigma0 * sigma0)).exp())
                .sum();
            assert!((p[i] - want).abs() < 1e-12, "pixel {i}");
        }
    }

    #[test]
    fn zeta_closed_forms() {
        let z = zeta(&[2.0, 1.0, 2.0], &[4.0, 2.0, 0.8]).unwrap();
        assert_eq!(z[0], 1.0);
        assert!((z[1] - 0.5).abs() < 1e-15);
        assert!((z[2] - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn zeta_rejects_all_zero_purity() {
        match zeta(&[1.0, 2.0], &[0.0, 0.0]) {
            Err(Error::Numerical {
                context: "zeta", ..
            }) => {}
            other => panic!("expected degeneracy error, got {other:?}"),
        }
    }

    #[test]
    fn dt_two_nodes() {
        let pixels = set(&[vec![0.0, 0.0], vec![1.0, 0.0]]);
        let graph = knn_graph(&pixels, 1, &GraphOptions::exact()).unwrap();
        let (dt, parent) = dt_values(&graph, &[0.9, 0.4], 2).unwrap();
        let d01 = graph.diffusion_distance(0, 1, 2).unwrap();
        assert_eq!(parent, vec![None, Some(0)]);
        assert!((dt[0] - d01).abs() < 1e-12);
        assert!((dt[1] - d01).abs() < 1e-12);
    }

    #[test]
    fn dt_equal_zeta_forms_index_chain() {
        let points: Vec<Vec<f64>> = (0..6).map(|i| vec![i as f64, 0.0]).collect();
        let pixels = set(&points);
        let graph = knn_graph(&pixels, 2, &GraphOptions::exact()).unwrap();
        let (dt, parent) = dt_values(&graph, &[0.5; 6], 3).unwrap();
        assert_eq!(parent[0], None);
        for x in 1..6 {
            // Candidates are exactly the lower indices.
            let mut best = (f64::INFINITY, 0usize);
            for y in 0..x {
                let d = graph.diffusion_distance(x, y, 3).unwrap();
                if d < best.0 {
                    best = (d, y);
                }
            }
            assert_eq!(parent[x], Some(best.1 as u32), "pixel {x}");
            assert!((dt[x] - best.0).abs() < 1e-12);
        }
    }

    #[test]
    fn dt_matches_exhaustive_oracle() {
        let mut next = rand_stream(0xd7);
        let points: Vec<Vec<f64>> = (0..6).map(|_| (0..3).map(|_| next()).collect()).collect();
        let zetas: Vec<f64> = (0..6).map(|_| next()).collect();
        let pixels = set(&points);
        let graph = knn_graph(&pixels, 2, &GraphOptions::exact()).unwrap();
        let t = 4;
        let (dt, parent) = dt_values(&graph, &zetas, t).unwrap();
        let top = zeta_argmax(&zetas);
        for x in 0..6 {
            if x == top {
                let want = (0..6)
                    .filter(|&y| y != x)
                    .map(|y| graph.diffusion_distance(x, y, t).unwrap())
                    .fold(0.0f64, f64::max);
                assert!((dt[x] - want).abs() < 1e-12);
                assert_eq!(parent[x], None);
                continue;
            }
            let mut want = (f64::INFINITY, None);
            for y in 0..6 {
                if y != x && outranks(&zetas, y, x) {
                    let d = graph.diffusion_distance(x, y, t).unwrap();
                    if d < want.0 {
                        want = (d, Some(y as u32));
                    }
                }
            }
            assert!((dt[x] - want.0).abs() < 1e-12, "pixel {x}");
            assert_eq!(parent[x], want.1, "pixel {x}");
        }
    }

    #[test]
    fn parent_chain_climbs_to_the_maximizer() {
        let mut next = rand_stream(0xc11b);
        let points: Vec<Vec<f64>> = (0..24).map(|_| (0..3).map(|_| next()).collect()).collect();
        let zetas: Vec<f64> = (0..24).map(|_| next()).collect();
        let pixels = set(&points);
        let graph = knn_graph(&pixels, 4, &GraphOptions::exact()).unwrap();
        let (_, parent) = dt_values(&graph, &zetas, 8).unwrap();
        let top = zeta_argmax(&zetas);
        for start in 0..24 {
            let mut x = start;
            let mut hops = 0;
            while let Some(p) = parent[x] {
                let p = p as usize;
                assert!(outranks(&zetas, p, x), "{p} does not outrank {x}");
                x = p;
                hops += 1;
                assert!(hops <= 24, "cycle detected");
            }
            assert_eq!(x, top);
        }
    }

    #[test]
    fn modes_with_k_equal_n_cover_everything() {
        let zetas = [0.4, 0.9, 0.1];
        let dts = [1.0, 1.0, 1.0];
        let modes = select_modes(&zetas, &dts, 3).unwrap();
        assert_eq!(modes, vec![1, 0, 2]);
    }

    #[test]
    fn unique_maximum_is_the_single_mode() {
        let zetas = [0.2, 0.9, 0.3];
        let dts = [0.5, 2.0, 0.5];
        assert_eq!(select_modes(&zetas, &dts, 1).unwrap(), vec![1]);
    }

    #[test]
    fn mode_score_ties_take_lowest_index() {
        let zetas = [0.5, 0.5, 0.5];
        let dts = [1.0, 1.0, 1.0];
        assert_eq!(select_modes(&zetas, &dts, 2).unwrap(), vec![0, 1]);
    }

    #[test]
    fn all_modes_label_themselves() {
        let points: Vec<Vec<f64>> = (0..4).map(|i| vec![i as f64, 0.0]).collect();
        let pixels = set(&points);
        let graph = knn_graph(&pixels, 1, &GraphOptions::exact()).unwrap();
        let zetas = [0.4, 0.8, 0.6, 0.2];
        let (labels, fallbacks) = propagate_labels(&graph, &zetas, &[3, 1, 0, 2], 2).unwrap();
        assert_eq!(labels, vec![3, 2, 4, 1]);
        assert_eq!(fallbacks, 0);
    }

    #[test]
    fn single_mode_labels_everything_one() {
        let mut next = rand_stream(0xface);
        let points: Vec<Vec<f64>> = (0..20).map(|_| (0..3).map(|_| next()).collect()).collect();
        let pixels = set(&points);
        let graph = knn_graph(&pixels, 3, &GraphOptions::exact()).unwrap();
        let zetas: Vec<f64> = (0..20).map(|_| next()).collect();
        let top = zeta_argmax(&zetas) as u32;
        let (labels, fallbacks) = propagate_labels(&graph, &zetas, &[top], 6).unwrap();
        assert!(labels.iter().all(|&l| l == 1));
        assert_eq!(fallbacks, 0);
    }

    #[test]
    fn fallback_triggers_when_a_nonmode_outranks_all_modes() {
        let points: Vec<Vec<f64>> = (0..5).map(|i| vec![i as f64, 0.0]).collect();
        let pixels = set(&points);
        let graph = knn_graph(&pixels, 2, &GraphOptions::exact()).unwrap();
        // Pixel 4 has the top ζ but the only mode is pixel 0.
        let zetas = [0.1, 0.2, 0.3, 0.4, 0.9];
        let (labels, fallbacks) = propagate_labels(&graph, &zetas, &[0], 2).unwrap();
        assert!(labels.iter().all(|&l| l == 1));
        assert_eq!(fallbacks, 1);
    }

    /// Two separated blobs of mixed pixels over two endmembers.
    fn two_blob_scene(seed: u64, per_blob: usize) -> (PixelSet, Vec<u32>) {
        let mut next = rand_stream(seed);
        let dims = 8;
        let u1: Vec<f64> = (0..dims).map(|d| if d < 4 { 1.0 } else { 0.04 }).collect();
        let u2: Vec<f64> = (0..dims).map(|d| if d < 4 { 0.04 } else { 1.0 }).collect();
        let mut rows = Vec::new();
        let mut blob_of = Vec::new();
        for blob in 0..2u32 {
            for _ in 0..per_blob {
                let main = 0.88 + 0.1 * next();
                let (a, b) = if blob == 0 {
                    (main, 1.0 - main)
                } else {
                    (1.0 - main, main)
                };
                let row: Vec<f64> = (0..dims)
                    .map(|d| a * u1[d] + b * u2[d] + 1e-3 * (next() * 2.0 - 1.0))
                    .collect();
                rows.push(row);
                blob_of.push(blob + 1);
            }
        }
        (set(&rows), blob_of)
    }

    fn two_class_agreement(labels: &[u32], reference: &[u32]) -> f64 {
        let same: usize = labels.iter().zip(reference).filter(|(a, b)| a == b).count();
        let swapped: usize = labels
            .iter()
            .zip(reference)
            .filter(|(&a, &b)| a != b)
            .count();
        same.max(swapped) as f64 / labels.len() as f64
    }

    #[test]
    fn modes_land_in_distinct_blobs_and_labels_follow() {
        let (pixels, blobs) = two_blob_scene(0xb10b, 80);
        let params = ClusterParams {
            clusters: 2,
            n_neighbors: 10,
            sigma0: 0.1,
            time: 8,
            seed: 5,
            ..ClusterParams::default()
        };
        let state = cluster(&pixels, &params).unwrap();
        let m0 = state.modes()[0] as usize;
        let m1 = state.modes()[1] as usize;
        assert_ne!(blobs[m0], blobs[m1], "modes in the same blob");
        assert!(two_class_agreement(state.labels(), &blobs) >= 0.99);
        assert_eq!(state.fallback_count(), 0);
    }

    #[test]
    fn k_one_gives_a_single_cluster() {
        let (pixels, _) = two_blob_scene(0x0001, 40);
        let params = ClusterParams {
            clusters: 1,
            n_neighbors: 8,
            sigma0: 0.1,
            time: 4,
            seed: 1,
            ..ClusterParams::default()
        };
        let state = cluster(&pixels, &params).unwrap();
        assert!(state.labels().iter().all(|&l| l == 1));
    }

    #[test]
    fn duplicated_rows_get_duplicated_labels() {
        let (pixels, _) = two_blob_scene(0xd0b1e, 40);
        let n = pixels.len();
        let mut flat = pixels.spectra().to_vec();
        flat.extend_from_slice(pixels.spectra());
        let origins: Vec<(u32, u32)> = (0..2 * n).map(|i| (i as u32, 0)).collect();
        let doubled = PixelSet::from_rows(flat, pixels.dims(), origins).unwrap();
        let params = ClusterParams {
            clusters: 2,
            n_neighbors: 10,
            sigma0: 0.1,
            time: 8,
            seed: 5,
            ..ClusterParams::default()
        };
        let single = cluster(&pixels, &params).unwrap();
        let double = cluster(&doubled, &params).unwrap();
        for i in 0..n {
            assert_eq!(
                double.labels()[i],
                double.labels()[i + n],
                "copies of pixel {i} disagree"
            );
        }
        // Same partition as the single run (labels may be permuted).
        assert_eq!(
            two_class_agreement(&double.labels()[..n], single.labels()),
            1.0
        );
    }

    #[test]
    fn mode_self_labeling_holds() {
        let (pixels, _) = two_blob_scene(0x5e1f, 60);
        let params = ClusterParams {
            clusters: 2,
            n_neighbors: 12,
            sigma0: 0.1,
            time: 8,
            seed: 2,
            ..ClusterParams::default()
        };
        let state = cluster(&pixels, &params).unwrap();
        for (j, &m) in state.modes().iter().enumerate() {
            assert_eq!(state.labels()[m as usize], (j + 1) as u32);
        }
        let mut seen: Vec<u32> = state.labels().to_vec();
        seen.sort_unstable();
        seen.dedup();
        assert_eq!(seen, vec![1, 2]);
    }

    #[test]
    fn permuted_input_yields_permuted_labels() {
        let (pixels, _) = two_blob_scene(0x9e91, 30);
        let n = pixels.len();
        // Reverse the pixel order; reversal maps the tie order consistently
        // only where no exact ties exist, which holds for this noisy scene.
        let perm: Vec<usize> = (0..n).rev().collect();
        let mut flat = Vec::with_capacity(n * pixels.dims());
        for &i in &perm {
            flat.extend_from_slice(pixels.row(i));
        }
        let origins: Vec<(u32, u32)> = (0..n).map(|i| (i as u32, 0)).collect();
        let permuted = PixelSet::from_rows(flat, pixels.dims(), origins).unwrap();
        let params = ClusterParams {
            clusters: 2,
            n_neighbors: 8,
            sigma0: 0.1,
            time: 8,
            seed: 3,
            ..ClusterParams::default()
        };
        let base = cluster(&pixels, &params).unwrap();
        let moved = cluster(&permuted, &params).unwrap();
        let mut unpermuted = vec![0u32; n];
        for (new_pos, &old) in perm.iter().enumerate() {
            unpermuted[old] = moved.labels()[new_pos];
        }
        assert_eq!(two_class_agreement(&unpermuted, base.labels()), 1.0);
    }

    #[test]
    fn label_grid_places_labels_by_origin() {
        let flat = vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        let origins = vec![(0, 1), (2, 0), (1, 2)];
        let pixels = PixelSet::from_rows(flat, 2, origins).unwrap();
        let grid = label_grid(&pixels, &[3, 1, 2], 3, 3).unwrap();
        assert_eq!(grid.get(0, 1), 3);
        assert_eq!(grid.get(2, 0), 1);
        assert_eq!(grid.get(1, 2), 2);
        assert_eq!(grid.get(0, 0), 0);
        assert_eq!(grid.get(2, 2), 0);
    }

    #[test]
    fn invalid_params_are_rejected() {
        let (pixels, _) = two_blob_scene(0xbad, 10);
        let n = pixels.len();
        let base = ClusterParams {
            clusters: 2,
            n_neighbors: 5,
            sigma0: 0.1,
            time: 4,
            seed: 0,
            ..ClusterParams::default()
        };
        let cases = [
            ClusterParams {
                clusters: 0,
                ..base.clone()
            },
            ClusterParams {
                clusters: n + 1,
                ..base.clone()
            },
            ClusterParams {
                n_neighbors: n,
                ..base.clone()
            },
            ClusterParams {
                sigma0: 0.0,
                ..base.clone()
            },
            ClusterParams {
                sigma0: f64::NAN,
                ..base.clone()
            },
            ClusterParams {
                time: MAX_DIFFUSION_TIME + 1,
                ..base.clone()
            },
        ];
        for params in &cases {
            assert!(matches!(
                cluster(&pixels, params),
                Err(Error::InvalidParameter { .. })
            ));
        }
    }

    proptest! {
        #[test]
        fn zeta_bounded_and_one_only_at_joint_maxima(
            p_int in proptest::collection::vec(0u8..=40, 2..30),
            eta_int in proptest::collection::vec(0u8..=40, 2..30),
        ) {
            let n = p_int.len().min(eta_int.len());
            let p: Vec<f64> = p_int[..n].iter().map(|&v| v as f64 / 10.0).collect();
            let eta: Vec<f64> = eta_int[..n].iter().map(|&v| v as f64 / 10.0).collect();
            prop_assume!(p.iter().any(|&v| v > 0.0) && eta.iter().any(|&v| v > 0.0));
            let z = zeta(&p, &eta).unwrap();
            let max_p = p.iter().cloned().fold(0.0f64, f64::max);
            let max_eta = eta.iter().cloned().fold(0.0f64, f64::max);
            for i in 0..n {
                prop_assert!((0.0..=1.0).contains(&z[i]));
                if z[i] == 1.0 {
                    prop_assert_eq!(p[i], max_p);
                    prop_assert_eq!(eta[i], max_eta);
                }
            }
        }
    }
}
