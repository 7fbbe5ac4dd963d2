//! Symmetric eigensolvers for the normalized adjacency S = D^{-1/2} W D^{-1/2}.
//!
//! S shares its spectrum with the transition matrix P = D^{-1}W, and its
//! Euclidean-orthonormal eigenvectors map to P's right eigenvectors by a
//! diagonal rescaling, so everything here works on S. Small problems get a
//! dense solve; large ones a restarted Lanczos iteration with full
//! reorthogonalization and deflation, which handles eigenvalue multiplicity
//! by re-discovering each eigenspace one vector at a time.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Above this node count the dense path would dominate memory and time.
pub(crate) const DENSE_EIGEN_LIMIT: usize = 512;

/// Residual tolerance for accepting a Lanczos Ritz pair.
const LOCK_TOL: f64 = 1e-11;

/// Fixed Lanczos seed: the decomposition must depend only on the graph, not
/// on any caller-supplied RNG state, so cached spectra stay valid.
const LANCZOS_SEED: u64 = 0xd1f5_0001;

/// Sparse symmetric view of S built over the binary adjacency CSR.
pub(crate) struct NormalizedAdjacency<'a> {
    pub n: usize,
    pub offsets: &'a [usize],
    pub neighbors: &'a [u32],
    pub inv_sqrt_deg: &'a [f64],
}

impl NormalizedAdjacency<'_> {
    #[inline]
    fn row(&self, i: usize) -> &[u32] {
        &self.neighbors[self.offsets[i]..self.offsets[i + 1]]
    }

    /// y = S x.
    pub fn matvec(&self, x: &[f64], y: &mut [f64]) {
        for (i, out) in y.iter_mut().enumerate().take(self.n) {
            let mut acc = 0.0;
            for &j in self.row(i) {
                acc += self.inv_sqrt_deg[j as usize] * x[j as usize];
            }
            *out = acc * self.inv_sqrt_deg[i];
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct EigenOptions {
    /// Hard cap on retained eigenpairs.
    pub cap: usize,
    /// Relative visibility threshold for truncation.
    pub tolerance: f64,
    /// Diffusion time the truncation rule is evaluated at; None disables the
    /// rule and keeps `cap` pairs.
    pub truncation_t: Option<u32>,
}

/// Eigenpairs of S with Euclidean-orthonormal vectors, sorted by
/// (|λ| descending, λ descending); eigenvalues clamped to [-1, 1].
pub(crate) struct Spectrum {
    pub values: Vec<f64>,
    /// k-th eigenvector at [k*n .. (k+1)*n].
    pub vectors: Vec<f64>,
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

#[inline]
fn nrm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Order eigenpairs: the Perron pair (algebraic maximum, ~1) first, then
/// |λ| descending with +λ before −λ on magnitude ties. Locating the Perron
/// pair algebraically matters on bipartite graphs, where rounding can leave
/// |λ_min| a hair above λ_max.
fn sort_pairs(values: &mut Vec<f64>, vectors: &mut Vec<f64>, n: usize) {
    let mut top = 0usize;
    for (k, &v) in values.iter().enumerate() {
        if v > values[top] {
            top = k;
        }
    }
    let mut order: Vec<usize> = (0..values.len()).filter(|&k| k != top).collect();
    order.sort_by(|&a, &b| {
        values[b]
            .abs()
            .partial_cmp(&values[a].abs())
            .unwrap()
            .then(values[b].partial_cmp(&values[a]).unwrap())
    });
    order.insert(0, top);
    let old_vals = std::mem::take(values);
    let old_vecs = std::mem::take(vectors);
    for &k in &order {
        values.push(old_vals[k]);
        vectors.extend_from_slice(&old_vecs[k * n..(k + 1) * n]);
    }
}

/// Number of leading pairs to keep: smallest K with |λ_{K+1}|^t below
/// tolerance·|λ_2|^t, bounded by the cap.
fn truncation_count(sorted_values: &[f64], opts: &EigenOptions) -> usize {
    let len = sorted_values.len();
    let cap = opts.cap.clamp(1, len);
    let t = match opts.truncation_t {
        Some(t) if t > 0 => t as i32,
        _ => return cap,
    };
    let lam2 = if len > 1 { sorted_values[1].abs() } else { 0.0 };
    let visible = opts.tolerance * lam2.powi(t);
    sorted_values[1..cap]
        .iter()
        .position(|v| v.abs().powi(t) < visible)
        .map_or(cap, |p| p + 1)
}

fn dense_pairs(adj: &NormalizedAdjacency) -> (Vec<f64>, Vec<f64>) {
    let n = adj.n;
    let mut s = DMatrix::<f64>::zeros(n, n);
    for i in 0..n {
        for &j in adj.row(i) {
            s[(i, j as usize)] = adj.inv_sqrt_deg[i] * adj.inv_sqrt_deg[j as usize];
        }
    }
    let se = s.symmetric_eigen();
    let mut values = Vec::with_capacity(n);
    let mut vectors = Vec::with_capacity(n * n);
    for k in 0..n {
        values.push(se.eigenvalues[k]);
        vectors.extend(se.eigenvectors.column(k).iter().copied());
    }
    (values, vectors)
}

/// One Lanczos sweep against the deflated operator; locks converged Ritz
/// pairs into `locked_*`. Returns the largest |θ| left unlocked (an estimate
/// of the remaining spectral radius).
#[allow(clippy::too_many_arguments)]
fn lanczos_sweep(
    adj: &NormalizedAdjacency,
    locked_vals: &mut Vec<f64>,
    locked_vecs: &mut Vec<f64>,
    want: usize,
    m_target: usize,
    rng: &mut ChaCha8Rng,
) -> Result<f64> {
    let n = adj.n;
    let n_locked = locked_vals.len();
    let m = m_target.min(n - n_locked);

    let reorth = |w: &mut Vec<f64>, basis: &[Vec<f64>], locked: &[f64]| {
        for _ in 0..2 {
            for q in basis {
                let c = dot(w, q);
                axpy(-c, q, w);
            }
            for k in 0..locked.len() / n {
                let q = &locked[k * n..(k + 1) * n];
                let c = dot(w, q);
                axpy(-c, q, w);
            }
        }
    };

    // Random start vector orthogonal to everything locked.
    let mut v0: Vec<f64> = (0..n).map(|_| rng.gen::<f64>() - 0.5).collect();
    reorth(&mut v0, &[], locked_vecs);
    let nrm = nrm2(&v0);
    if nrm < 1e-10 {
        return Err(Error::Numerical {
            context: "eigensolver",
            reason: "could not find a start vector outside the locked subspace".into(),
        });
    }
    for v in v0.iter_mut() {
        *v /= nrm;
    }

    let mut basis: Vec<Vec<f64>> = vec![v0];
    let mut alpha: Vec<f64> = Vec::with_capacity(m);
    let mut beta: Vec<f64> = Vec::with_capacity(m);
    let mut scratch = vec![0.0; n];
    let mut breakdown = false;
    for j in 0..m {
        adj.matvec(&basis[j], &mut scratch);
        let mut w = scratch.clone();
        if j > 0 {
            axpy(-beta[j - 1], &basis[j - 1], &mut w);
        }
        let a = dot(&w, &basis[j]);
        axpy(-a, &basis[j], &mut w);
        alpha.push(a);
        reorth(&mut w, &basis, locked_vecs);
        let b = nrm2(&w);
        if b < 1e-13 {
            breakdown = true; // invariant subspace: T is exact for this block
            break;
        }
        beta.push(b);
        if j + 1 < m {
            for v in w.iter_mut() {
                *v /= b;
            }
            basis.push(w);
        }
    }
    let steps = alpha.len();

    let mut t_mat = DMatrix::<f64>::zeros(steps, steps);
    for j in 0..steps {
        t_mat[(j, j)] = alpha[j];
        if j + 1 < steps {
            t_mat[(j, j + 1)] = beta[j];
            t_mat[(j + 1, j)] = beta[j];
        }
    }
    let se = t_mat.symmetric_eigen();

    let mut order: Vec<usize> = (0..steps).collect();
    order.sort_by(|&a, &b| {
        se.eigenvalues[b]
            .abs()
            .partial_cmp(&se.eigenvalues[a].abs())
            .unwrap()
    });

    let tail_beta = if breakdown {
        0.0 // the Krylov space is invariant, residuals vanish
    } else {
        *beta.last().unwrap_or(&0.0)
    };
    let mut max_unlocked = 0.0f64;
    for &k in &order {
        let theta = se.eigenvalues[k];
        if locked_vals.len() >= want {
            max_unlocked = max_unlocked.max(theta.abs());
            continue;
        }
        let y = se.eigenvectors.column(k);
        let cheap = (tail_beta * y[steps - 1]).abs();
        if cheap > 1e-7 {
            max_unlocked = max_unlocked.max(theta.abs());
            continue;
        }
        // Assemble the Ritz vector and confirm with an explicit residual.
        let mut x = vec![0.0; n];
        for (j, vj) in basis.iter().enumerate() {
            axpy(y[j], vj, &mut x);
        }
        reorth(&mut x, &[], locked_vecs);
        let nrm = nrm2(&x);
        if nrm < 0.5 {
            max_unlocked = max_unlocked.max(theta.abs());
            continue; // collapsed onto the locked subspace; spurious
        }
        for v in x.iter_mut() {
            *v /= nrm;
        }
        adj.matvec(&x, &mut scratch);
        axpy(-theta, &x, &mut scratch);
        if nrm2(&scratch) <= LOCK_TOL.max(1e-13 * n as f64) {
            locked_vals.push(theta);
            locked_vecs.extend_from_slice(&x);
        } else {
            max_unlocked = max_unlocked.max(theta.abs());
        }
    }
    Ok(max_unlocked)
}

fn lanczos_pairs(adj: &NormalizedAdjacency, opts: &EigenOptions) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = adj.n;
    let want = opts.cap.clamp(1, n);
    let mut rng = ChaCha8Rng::seed_from_u64(LANCZOS_SEED);
    let mut locked_vals: Vec<f64> = Vec::new();
    let mut locked_vecs: Vec<f64> = Vec::new();

    // Truncation certificate in |λ| space: once the remaining spectral
    // radius is below cut, no unfound eigenvalue can be visible at time t.
    let cut_fraction = match opts.truncation_t {
        Some(t) if t > 0 => Some(opts.tolerance.powf(1.0 / t as f64)),
        _ => None,
    };

    let mut m_target = want.saturating_mul(2).clamp(60, 320);
    let mut sweeps = 0;
    loop {
        if locked_vals.len() >= want || locked_vals.len() == n {
            break;
        }
        sweeps += 1;
        // High-multiplicity eigenvalues are found one copy per restart, so
        // the sweep budget must exceed the pair cap.
        if sweeps > 200 {
            return Err(Error::Numerical {
                context: "eigensolver",
                reason: format!(
                    "Lanczos failed to converge: {} of {want} pairs after {sweeps} sweeps",
                    locked_vals.len()
                ),
            });
        }
        let before = locked_vals.len();
        let max_unlocked = lanczos_sweep(
            adj,
            &mut locked_vals,
            &mut locked_vecs,
            want,
            m_target,
            &mut rng,
        )?;
        if let (Some(frac), true) = (cut_fraction, locked_vals.len() >= 2) {
            let mut mags: Vec<f64> = locked_vals.iter().map(|v| v.abs()).collect();
            mags.sort_by(|a, b| b.partial_cmp(a).unwrap());
            let cut = frac * mags[1];
            let locked_below = mags.last().is_some_and(|&m| m < cut);
            if locked_below && max_unlocked < 0.9 * cut {
                break;
            }
        }
        if locked_vals.len() == before {
            m_target = (m_target * 3 / 2).min(500).min(n);
        }
    }
    Ok((locked_vals, locked_vecs))
}

/// Leading eigenpairs of S per the truncation rule, sorted by |λ| descending.
pub(crate) fn leading_eigenpairs(
    adj: &NormalizedAdjacency,
    opts: &EigenOptions,
) -> Result<Spectrum> {
    let n = adj.n;
    let (mut values, mut vectors) = if n <= DENSE_EIGEN_LIMIT {
        dense_pairs(adj)
    } else {
        lanczos_pairs(adj, opts)?
    };
    for v in values.iter_mut() {
        *v = v.clamp(-1.0, 1.0);
    }
    sort_pairs(&mut values, &mut vectors, n);

    if (values[0] - 1.0).abs() > 1e-6 {
        return Err(Error::Numerical {
            context: "eigensolver",
            reason: format!(
                "largest eigenvalue {} is not 1; the graph should be connected",
                values[0]
            ),
        });
    }
    values[0] = 1.0;
    if values.iter().any(|&v| (v + 1.0).abs() < 1e-10) {
        log::warn!("adjacency is bipartite (eigenvalue -1 present); diffusion will oscillate");
    }

    let keep = truncation_count(&values, opts);
    values.truncate(keep);
    vectors.truncate(keep * n);
    Ok(Spectrum { values, vectors })
}
