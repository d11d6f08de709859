//! Tensor dictionary learning with rank-1 CP atoms.
//!
//! Atoms are outer products `u o v o w` of two spatial factors and one
//! channel factor, kept at unit Frobenius norm. Sparse coding is greedy
//! orthogonal matching pursuit over the vectorized atoms (identical to the
//! multilinear evaluation for rank-1 atoms), accelerated with a precomputed
//! Gram matrix. Training alternates full coding passes with K-SVD-style
//! sequential atom updates, where each atom is replaced by the best rank-1
//! approximation of its residual stack via alternating power iteration.

use crate::error::{Result, SctlError};
use crate::tensor::{Tensor3, Tensor4};
use nalgebra::{Cholesky, DMatrix, DVector};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone)]
pub struct CpFactors {
    pub u: Vec<f64>,
    pub v: Vec<f64>,
    pub w: Vec<f64>,
}

impl CpFactors {
    /// Vectorized outer product in `Tensor3` layout `(s*N + a)*N + b`.
    fn materialize(&self) -> Vec<f64> {
        let n = self.u.len();
        let s_count = self.w.len();
        let mut out = vec![0.0; n * n * s_count];
        for (s, &ws) in self.w.iter().enumerate() {
            for (a, &ua) in self.u.iter().enumerate() {
                for (b, &vb) in self.v.iter().enumerate() {
                    out[(s * n + a) * n + b] = ua * vb * ws;
                }
            }
        }
        out
    }

    fn normalize(&mut self) -> f64 {
        let nu = norm(&self.u);
        let nv = norm(&self.v);
        let nw = norm(&self.w);
        let total = nu * nv * nw;
        if total > 0.0 {
            scale(&mut self.u, 1.0 / nu);
            scale(&mut self.v, 1.0 / nv);
            scale(&mut self.w, 1.0 / nw);
        }
        total
    }
}

fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

fn scale(x: &mut [f64], c: f64) {
    for v in x.iter_mut() {
        *v *= c;
    }
}

#[derive(Debug, Clone)]
pub struct TensorDictionary {
    patch_size: usize,
    channels: usize,
    factors: Vec<CpFactors>,
    atoms: Tensor4,
}

impl TensorDictionary {
    /// Build from rank-1 factors; each atom is renormalized to unit
    /// Frobenius norm.
    pub fn from_factors(patch_size: usize, channels: usize, factors: Vec<CpFactors>) -> Result<Self> {
        if factors.is_empty() {
            return Err(SctlError::InvalidArgument(
                "dictionary needs at least one atom".into(),
            ));
        }
        for f in &factors {
            if f.u.len() != patch_size || f.v.len() != patch_size || f.w.len() != channels {
                return Err(SctlError::DimMismatch(
                    "factor lengths do not match patch shape".into(),
                ));
            }
        }
        let mut dict = Self {
            patch_size,
            channels,
            factors,
            atoms: Tensor4::zeros(patch_size, patch_size, channels, 1),
        };
        dict.rebuild_atoms();
        Ok(dict)
    }

    /// Random unit-norm rank-1 atoms from a seeded generator.
    pub fn random(patch_size: usize, channels: usize, num_atoms: usize, seed: u64) -> Result<Self> {
        if num_atoms == 0 {
            return Err(SctlError::InvalidArgument("atom count must be positive".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let factors = (0..num_atoms)
            .map(|_| random_factors(patch_size, channels, &mut rng))
            .collect();
        Self::from_factors(patch_size, channels, factors)
    }

    fn rebuild_atoms(&mut self) {
        let n = self.patch_size;
        let s = self.channels;
        let k = self.factors.len();
        let mut atoms = Tensor4::zeros(n, n, s, k);
        for (i, f) in self.factors.iter_mut().enumerate() {
            f.normalize();
            atoms.block_mut(i).copy_from_slice(&f.materialize());
        }
        self.atoms = atoms;
    }

    pub fn num_atoms(&self) -> usize {
        self.factors.len()
    }

    pub fn patch_size(&self) -> usize {
        self.patch_size
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn atom_dim(&self) -> usize {
        self.patch_size * self.patch_size * self.channels
    }

    pub fn atom(&self, k: usize) -> &[f64] {
        self.atoms.block(k)
    }

    pub fn atoms(&self) -> &Tensor4 {
        &self.atoms
    }

    pub fn factors(&self) -> &[CpFactors] {
        &self.factors
    }
}

fn random_factors(patch_size: usize, channels: usize, rng: &mut impl Rng) -> CpFactors {
    let gen = |n: usize, rng: &mut dyn RngCore| -> Vec<f64> {
        let mut v: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let nv = norm(&v);
        if nv == 0.0 {
            v[0] = 1.0;
        } else {
            scale(&mut v, 1.0 / nv);
        }
        v
    };
    CpFactors {
        u: gen(patch_size, rng),
        v: gen(patch_size, rng),
        w: gen(channels, rng),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SparseCode {
    /// Distinct atom indices with their coefficients, in selection order.
    pub entries: Vec<(usize, f64)>,
    /// Per-channel mean removed before coding.
    pub mean: Vec<f64>,
}

#[derive(Debug, Clone, Copy)]
pub struct CodingConfig {
    pub max_sparsity: usize,
    /// Per-element RMS residual stopping threshold.
    pub epsilon: f64,
}

/// Split a patch into per-channel spatial means and the centered remainder.
pub fn remove_mean(patch: &Tensor3) -> (Tensor3, Vec<f64>) {
    let (n1, n2, s_count) = patch.dims();
    let mut centered = patch.clone();
    let mut means = Vec::with_capacity(s_count);
    let pixels = (n1 * n2) as f64;
    for s in 0..s_count {
        let slab = centered.slab_mut(s);
        let m = slab.iter().sum::<f64>() / pixels;
        for v in slab.iter_mut() {
            *v -= m;
        }
        means.push(m);
    }
    (centered, means)
}

/// The constant-per-channel tensor produced by applying the mean-removal
/// operator to a mean vector.
pub fn mean_tensor(mean: &[f64], patch_size: usize) -> Tensor3 {
    let mut t = Tensor3::zeros(patch_size, patch_size, mean.len());
    for (s, &m) in mean.iter().enumerate() {
        for v in t.slab_mut(s) {
            *v = m;
        }
    }
    t
}

/// Reconstruct `sum_k a_k atom_k` plus the per-channel constant mean.
pub fn decode(code: &SparseCode, dict: &TensorDictionary) -> Result<Tensor3> {
    if code.mean.len() != dict.channels() {
        return Err(SctlError::DimMismatch(
            "mean vector length does not match dictionary channels".into(),
        ));
    }
    let mut out = mean_tensor(&code.mean, dict.patch_size());
    for &(k, a) in &code.entries {
        if k >= dict.num_atoms() {
            return Err(SctlError::InvalidArgument(format!(
                "code references atom {k} of {}",
                dict.num_atoms()
            )));
        }
        for (o, &d) in out.data_mut().iter_mut().zip(dict.atom(k)) {
            *o += a * d;
        }
    }
    Ok(out)
}

/// Closed-form mean update: per-channel spatial mean of
/// `patch - dict x_4 a`. The updated residual slices then have zero
/// spatial mean.
pub fn update_mean(patch: &Tensor3, code: &SparseCode, dict: &TensorDictionary) -> Result<Vec<f64>> {
    let (n1, n2, s_count) = patch.dims();
    if (n1, n2, s_count) != (dict.patch_size(), dict.patch_size(), dict.channels()) {
        return Err(SctlError::DimMismatch(
            "patch dims do not match dictionary".into(),
        ));
    }
    let mut sparse_part = vec![0.0; dict.atom_dim()];
    for &(k, a) in &code.entries {
        for (o, &d) in sparse_part.iter_mut().zip(dict.atom(k)) {
            *o += a * d;
        }
    }
    let pixels = (n1 * n2) as f64;
    let mut means = Vec::with_capacity(s_count);
    for s in 0..s_count {
        let patch_slab = patch.slab(s);
        let sparse_slab = &sparse_part[s * n1 * n2..(s + 1) * n1 * n2];
        let m = patch_slab
            .iter()
            .zip(sparse_slab)
            .map(|(p, d)| p - d)
            .sum::<f64>()
            / pixels;
        means.push(m);
    }
    Ok(means)
}

/// Reusable OMP state: the Gram matrix and per-atom inner products are the
/// dominant cost, shared across many patches.
pub struct MompEncoder {
    gram: DMatrix<f64>,
    dim: usize,
}

impl MompEncoder {
    pub fn new(dict: &TensorDictionary) -> Self {
        let k = dict.num_atoms();
        let dim = dict.atom_dim();
        let mut gram = DMatrix::zeros(k, k);
        for i in 0..k {
            let ai = dict.atom(i);
            for j in i..k {
                let g: f64 = ai.iter().zip(dict.atom(j)).map(|(a, b)| a * b).sum();
                gram[(i, j)] = g;
                gram[(j, i)] = g;
            }
        }
        Self { gram, dim }
    }

    /// Greedy pursuit on already-centered data. Returns the selected
    /// entries and the squared residual norm.
    pub fn encode_centered(
        &self,
        dict: &TensorDictionary,
        centered: &[f64],
        cfg: &CodingConfig,
    ) -> (Vec<(usize, f64)>, f64) {
        let k = dict.num_atoms();
        let x_norm_sq: f64 = centered.iter().map(|v| v * v).sum();
        let target = cfg.epsilon * cfg.epsilon * self.dim as f64;
        if x_norm_sq <= target || cfg.max_sparsity == 0 {
            return (Vec::new(), x_norm_sq);
        }
        let mut alpha0 = DVector::zeros(k);
        for i in 0..k {
            alpha0[i] = dict
                .atom(i)
                .iter()
                .zip(centered)
                .map(|(a, b)| a * b)
                .sum::<f64>();
        }
        let mut alpha = alpha0.clone();
        let mut selected: Vec<usize> = Vec::new();
        let mut coeffs = DVector::zeros(0);
        let mut res_sq = x_norm_sq;
        while selected.len() < cfg.max_sparsity {
            let mut best = usize::MAX;
            let mut best_val = 1e-12;
            for i in 0..k {
                if selected.contains(&i) {
                    continue;
                }
                if alpha[i].abs() > best_val {
                    best_val = alpha[i].abs();
                    best = i;
                }
            }
            if best == usize::MAX {
                break;
            }
            selected.push(best);
            let m = selected.len();
            let mut g_ss = DMatrix::zeros(m, m);
            let mut rhs = DVector::zeros(m);
            for (r, &i) in selected.iter().enumerate() {
                rhs[r] = alpha0[i];
                for (c, &j) in selected.iter().enumerate() {
                    g_ss[(r, c)] = self.gram[(i, j)];
                }
            }
            let Some(chol) = Cholesky::new(g_ss) else {
                selected.pop();
                break;
            };
            coeffs = chol.solve(&rhs);
            res_sq = (x_norm_sq - rhs.dot(&coeffs)).max(0.0);
            if res_sq <= target {
                break;
            }
            // alpha = alpha0 - G[:, S] a
            alpha.copy_from(&alpha0);
            for (c, &j) in selected.iter().enumerate() {
                let a = coeffs[c];
                for i in 0..k {
                    alpha[i] -= self.gram[(i, j)] * a;
                }
            }
        }
        let entries = selected
            .iter()
            .zip(coeffs.iter())
            .map(|(&i, &a)| (i, a))
            .collect();
        (entries, res_sq)
    }

    /// Least-squares coefficients on a fixed support, with the squared
    /// residual norm. Used by the monotone coding guard during training.
    fn refit(
        &self,
        dict: &TensorDictionary,
        centered: &[f64],
        support: &[usize],
    ) -> Option<(Vec<(usize, f64)>, f64)> {
        if support.is_empty() {
            return Some((Vec::new(), centered.iter().map(|v| v * v).sum()));
        }
        let m = support.len();
        let mut g_ss = DMatrix::zeros(m, m);
        let mut rhs = DVector::zeros(m);
        for (r, &i) in support.iter().enumerate() {
            rhs[r] = dict
                .atom(i)
                .iter()
                .zip(centered)
                .map(|(a, b)| a * b)
                .sum::<f64>();
            for (c, &j) in support.iter().enumerate() {
                g_ss[(r, c)] = self.gram[(i, j)];
            }
        }
        let chol = Cholesky::new(g_ss)?;
        let coeffs = chol.solve(&rhs);
        let x_norm_sq: f64 = centered.iter().map(|v| v * v).sum();
        let res_sq = (x_norm_sq - rhs.dot(&coeffs)).max(0.0);
        Some((
            support.iter().zip(coeffs.iter()).map(|(&i, &a)| (i, a)).collect(),
            res_sq,
        ))
    }
}

/// Mean-removal followed by greedy multilinear pursuit against `dict`.
pub fn momp_encode(patch: &Tensor3, dict: &TensorDictionary, cfg: &CodingConfig) -> Result<SparseCode> {
    let (n1, n2, s_count) = patch.dims();
    if (n1, n2, s_count) != (dict.patch_size(), dict.patch_size(), dict.channels()) {
        return Err(SctlError::DimMismatch(format!(
            "patch dims {:?} do not match dictionary ({}, {}, {})",
            patch.dims(),
            dict.patch_size(),
            dict.patch_size(),
            dict.channels()
        )));
    }
    let encoder = MompEncoder::new(dict);
    let (centered, mean) = remove_mean(patch);
    let (entries, _) = encoder.encode_centered(dict, centered.data(), cfg);
    Ok(SparseCode { entries, mean })
}

/// Best rank-1 CP approximation of a patch vector in `Tensor3` layout,
/// by deterministic alternating power iteration from a fixed start. Used
/// for atom reseeding.
pub fn rank1_of_vector(data: &[f64], n: usize, s_count: usize) -> CpFactors {
    let mut f = CpFactors {
        u: vec![1.0 / (n as f64).sqrt(); n],
        v: vec![1.0 / (n as f64).sqrt(); n],
        w: vec![1.0 / (s_count as f64).sqrt(); s_count],
    };
    for _ in 0..20 {
        // u <- sum_{b,s} data[a,b,s] v[b] w[s]
        let mut u = vec![0.0; n];
        let mut v = vec![0.0; n];
        let mut w = vec![0.0; s_count];
        for s in 0..s_count {
            for a in 0..n {
                for b in 0..n {
                    u[a] += data[(s * n + a) * n + b] * f.v[b] * f.w[s];
                }
            }
        }
        let nu = norm(&u);
        if nu > 0.0 {
            scale(&mut u, 1.0 / nu);
        }
        for s in 0..s_count {
            for a in 0..n {
                for b in 0..n {
                    v[b] += data[(s * n + a) * n + b] * u[a] * f.w[s];
                }
            }
        }
        let nv = norm(&v);
        if nv > 0.0 {
            scale(&mut v, 1.0 / nv);
        }
        for s in 0..s_count {
            for a in 0..n {
                for b in 0..n {
                    w[s] += data[(s * n + a) * n + b] * u[a] * v[b];
                }
            }
        }
        f.u = u;
        f.v = v;
        f.w = w; // norm carries the singular value; normalized on rebuild
    }
    f
}

/// K-CPD training: alternate full coding passes with sequential rank-1 atom
/// updates. Deterministic given `seed` and patch order.
pub fn kcpd_train(
    patches: &[Tensor3],
    num_atoms: usize,
    cfg: &CodingConfig,
    iterations: usize,
    seed: u64,
) -> Result<TensorDictionary> {
    let Some(first) = patches.first() else {
        return Err(SctlError::InvalidArgument("empty training set".into()));
    };
    if num_atoms == 0 {
        return Err(SctlError::InvalidArgument("atom count must be positive".into()));
    }
    let (n1, n2, s_count) = first.dims();
    if n1 != n2 {
        return Err(SctlError::InvalidArgument("training patches must be square".into()));
    }
    if patches.len() < num_atoms {
        eprintln!(
            "warning: training {} atoms from only {} patches",
            num_atoms,
            patches.len()
        );
    }
    let n = n1;
    let dim = n * n * s_count;
    let centered: Vec<Vec<f64>> = patches
        .iter()
        .map(|p| remove_mean(p).0.data().to_vec())
        .collect();

    // initialize atoms from rank-1 approximations of a seeded sample of
    // the training patches, falling back to random factors for degenerate
    // (constant) samples
    let mut dict = TensorDictionary::random(n, s_count, num_atoms, seed)?;
    {
        let mut order: Vec<usize> = (0..centered.len()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
        order.shuffle(&mut rng);
        for k in 0..num_atoms {
            let p = order[k % order.len()];
            let f = rank1_of_vector(&centered[p], n, s_count);
            if norm(&f.u) * norm(&f.v) * norm(&f.w) > 1e-12 {
                dict.factors[k] = f;
            }
        }
        dict.rebuild_atoms();
    }
    let num_patches = centered.len();
    let mut codes: Vec<Vec<(usize, f64)>> = vec![Vec::new(); num_patches];
    let mut residuals: Vec<Vec<f64>> = centered.clone();
    let mut res_sq: Vec<f64> = residuals
        .iter()
        .map(|r| r.iter().map(|v| v * v).sum())
        .collect();

    for _iter in 0..iterations {
        // coding pass; keep the previous support when it represents the
        // patch better under the current dictionary (monotone objective)
        let encoder = MompEncoder::new(&dict);
        for p in 0..num_patches {
            let (entries, new_sq) = encoder.encode_centered(&dict, &centered[p], cfg);
            let prev_support: Vec<usize> = codes[p].iter().map(|&(k, _)| k).collect();
            let keep_prev = match encoder.refit(&dict, &centered[p], &prev_support) {
                Some((prev_entries, prev_sq)) if prev_sq < new_sq => Some((prev_entries, prev_sq)),
                _ => None,
            };
            let (entries, sq) = keep_prev.unwrap_or((entries, new_sq));
            codes[p] = entries;
            res_sq[p] = sq;
        }
        // rebuild residuals from the refit codes
        for p in 0..num_patches {
            let r = &mut residuals[p];
            r.copy_from_slice(&centered[p]);
            for &(k, a) in &codes[p] {
                for (rv, &d) in r.iter_mut().zip(dict.atom(k)) {
                    *rv -= a * d;
                }
            }
            res_sq[p] = r.iter().map(|v| v * v).sum();
        }

        // sequential atom updates; each reseed draws from a distinct
        // worst-represented patch so unused atoms stay diverse
        let mut reseeded: Vec<bool> = vec![false; num_patches];
        for k in 0..num_atoms {
            let users: Vec<usize> = (0..num_patches)
                .filter(|&p| codes[p].iter().any(|&(i, _)| i == k))
                .collect();
            if users.is_empty() {
                let Some(worst) = (0..num_patches)
                    .filter(|&p| !reseeded[p])
                    .max_by(|&a, &b| res_sq[a].total_cmp(&res_sq[b]))
                else {
                    continue;
                };
                reseeded[worst] = true;
                let f = rank1_of_vector(&residuals[worst], n, s_count);
                if norm(&f.u) * norm(&f.v) * norm(&f.w) > 1e-12 {
                    dict.factors[k] = f;
                    dict.factors[k].normalize();
                    let block = dict.factors[k].materialize();
                    dict.atoms.block_mut(k).copy_from_slice(&block);
                }
                continue;
            }
            // residual stack with atom k's contribution restored
            let mut stack: Vec<Vec<f64>> = Vec::with_capacity(users.len());
            let mut g: Vec<f64> = Vec::with_capacity(users.len());
            for &p in &users {
                let a_pk = codes[p]
                    .iter()
                    .find(|&&(i, _)| i == k)
                    .map(|&(_, a)| a)
                    .unwrap();
                let mut e = residuals[p].clone();
                for (ev, &d) in e.iter_mut().zip(dict.atom(k)) {
                    *ev += a_pk * d;
                }
                stack.push(e);
                g.push(a_pk);
            }
            // alternating power iteration for the best rank-1 fit of the
            // 4-way stack, warm-started from the current atom
            let mut f = dict.factors[k].clone();
            for _ in 0..8 {
                let mut u = vec![0.0; n];
                for (e, &gp) in stack.iter().zip(&g) {
                    for s in 0..s_count {
                        for a in 0..n {
                            let mut acc = 0.0;
                            for b in 0..n {
                                acc += e[(s * n + a) * n + b] * f.v[b];
                            }
                            u[a] += acc * f.w[s] * gp;
                        }
                    }
                }
                let nu = norm(&u);
                if nu == 0.0 {
                    break;
                }
                scale(&mut u, 1.0 / nu);
                f.u = u;

                let mut v = vec![0.0; n];
                for (e, &gp) in stack.iter().zip(&g) {
                    for s in 0..s_count {
                        for b in 0..n {
                            let mut acc = 0.0;
                            for a in 0..n {
                                acc += e[(s * n + a) * n + b] * f.u[a];
                            }
                            v[b] += acc * f.w[s] * gp;
                        }
                    }
                }
                let nv = norm(&v);
                if nv == 0.0 {
                    break;
                }
                scale(&mut v, 1.0 / nv);
                f.v = v;

                let mut w = vec![0.0; s_count];
                for (e, &gp) in stack.iter().zip(&g) {
                    for s in 0..s_count {
                        let mut acc = 0.0;
                        for a in 0..n {
                            for b in 0..n {
                                acc += e[(s * n + a) * n + b] * f.u[a] * f.v[b];
                            }
                        }
                        w[s] += acc * gp;
                    }
                }
                let nw = norm(&w);
                if nw == 0.0 {
                    break;
                }
                scale(&mut w, 1.0 / nw);
                f.w = w;

                // coefficients for the current factors
                for (idx, e) in stack.iter().enumerate() {
                    let mut acc = 0.0;
                    for s in 0..s_count {
                        for a in 0..n {
                            for b in 0..n {
                                acc += e[(s * n + a) * n + b] * f.u[a] * f.v[b] * f.w[s];
                            }
                        }
                    }
                    g[idx] = acc;
                }
            }
            dict.factors[k] = f;
            dict.factors[k].normalize();
            let block = dict.factors[k].materialize();
            dict.atoms.block_mut(k).copy_from_slice(&block);
            // write back rescaled coefficients and refresh residuals
            for (idx, &p) in users.iter().enumerate() {
                let old = codes[p]
                    .iter()
                    .find(|&&(i, _)| i == k)
                    .map(|&(_, a)| a)
                    .unwrap();
                for c in codes[p].iter_mut() {
                    if c.0 == k {
                        c.1 = g[idx];
                    }
                }
                let r = &mut residuals[p];
                for ((rv, e), &d) in r.iter_mut().zip(&stack[idx]).zip(dict.atom(k)) {
                    let _ = old;
                    *rv = e - g[idx] * d;
                }
                res_sq[p] = r.iter().map(|v| v * v).sum();
            }
        }
        debug_assert!(dim > 0);
    }
    Ok(dict)
}

/// Training objective `sum_p || centered_p - decode(code_p) ||_F^2` for the
/// current dictionary, recoding every patch. Exposed for convergence tests
/// and logging.
pub fn coding_objective(patches: &[Tensor3], dict: &TensorDictionary, cfg: &CodingConfig) -> f64 {
    let encoder = MompEncoder::new(dict);
    patches
        .iter()
        .map(|p| {
            let (centered, _) = remove_mean(p);
            let (_, sq) = encoder.encode_centered(dict, centered.data(), cfg);
            sq
        })
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn random_patch(dims: (usize, usize, usize), seed: u64) -> Tensor3 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..dims.0 * dims.1 * dims.2)
            .map(|_| rng.gen_range(-1.0..1.0))
            .collect();
        Tensor3::from_vec(dims, data).unwrap()
    }

    /// Orthonormal rank-1 atoms with per-channel zero mean: zero-sum `u`
    /// factors crossed with orthonormal `v` factors.
    fn orthonormal_zero_mean_dict(n: usize, s: usize, seed: u64) -> TensorDictionary {
        // u basis: differences of consecutive unit vectors, orthonormalized
        let mut us: Vec<Vec<f64>> = Vec::new();
        for i in 0..n - 1 {
            let mut u = vec![0.0; n];
            u[i] = 1.0;
            u[i + 1] = -1.0;
            for prev in &us {
                let d: f64 = u.iter().zip(prev).map(|(a, b)| a * b).sum();
                for (uv, pv) in u.iter_mut().zip(prev) {
                    *uv -= d * pv;
                }
            }
            let nu = norm(&u);
            scale(&mut u, 1.0 / nu);
            us.push(u);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut factors = Vec::new();
        for ui in &us {
            for j in 0..n {
                let mut v = vec![0.0; n];
                v[j] = 1.0;
                let mut w: Vec<f64> = (0..s).map(|_| rng.gen_range(-1.0..1.0)).collect();
                let nw = norm(&w);
                scale(&mut w, 1.0 / nw);
                factors.push(CpFactors {
                    u: ui.clone(),
                    v,
                    w,
                });
            }
        }
        TensorDictionary::from_factors(n, s, factors).unwrap()
    }

    #[test]
    fn atoms_are_unit_norm_rank1_products() {
        let dict = TensorDictionary::random(4, 3, 10, 1).unwrap();
        for k in 0..10 {
            let a = dict.atom(k);
            assert_relative_eq!(norm(a), 1.0, epsilon = 1e-12);
            let f = &dict.factors()[k];
            let rebuilt = f.materialize();
            for (x, y) in a.iter().zip(&rebuilt) {
                assert!((x - y).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn remove_mean_basics() {
        let (c, m) = remove_mean(&Tensor3::zeros(4, 4, 3));
        assert!(m.iter().all(|&v| v == 0.0));
        assert!(c.data().iter().all(|&v| v == 0.0));

        let mut p = Tensor3::zeros(4, 4, 2);
        for v in p.slab_mut(0) {
            *v = 1.5;
        }
        for v in p.slab_mut(1) {
            *v = -0.25;
        }
        let (c, m) = remove_mean(&p);
        assert_eq!(m, vec![1.5, -0.25]);
        assert!(c.data().iter().all(|&v| v == 0.0));

        let p = random_patch((5, 5, 3), 2);
        let (c, _) = remove_mean(&p);
        for s in 0..3 {
            let mean: f64 = c.slab(s).iter().sum::<f64>() / 25.0;
            assert!(mean.abs() < 1e-14);
        }
    }

    #[test]
    fn momp_recovers_single_atom_patch() {
        let dict = orthonormal_zero_mean_dict(4, 3, 3);
        let k = 5;
        let c = 2.5;
        let data: Vec<f64> = dict.atom(k).iter().map(|&v| c * v).collect();
        let patch = Tensor3::from_vec((4, 4, 3), data).unwrap();
        let cfg = CodingConfig {
            max_sparsity: 3,
            epsilon: 0.0,
        };
        let code = momp_encode(&patch, &dict, &cfg).unwrap();
        assert_eq!(code.entries.len(), 1);
        assert_eq!(code.entries[0].0, k);
        assert_relative_eq!(code.entries[0].1, c, epsilon = 1e-10);
        let rec = decode(&code, &dict).unwrap();
        assert!(rec.sub(&patch).frob_norm() < 1e-10);
    }

    #[test]
    fn momp_on_zero_patch_is_empty() {
        let dict = TensorDictionary::random(4, 2, 8, 4).unwrap();
        let cfg = CodingConfig {
            max_sparsity: 4,
            epsilon: 0.0,
        };
        let code = momp_encode(&Tensor3::zeros(4, 4, 2), &dict, &cfg).unwrap();
        assert!(code.entries.is_empty());
        assert!(code.mean.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn momp_exact_recovery_of_sparse_combination() {
        let dict = orthonormal_zero_mean_dict(4, 3, 5);
        let coeffs = [(2usize, 1.3), (7, -0.4), (11, 0.9)];
        let mut data = vec![0.0; dict.atom_dim()];
        for &(k, a) in &coeffs {
            for (d, &v) in data.iter_mut().zip(dict.atom(k)) {
                *d += a * v;
            }
        }
        let patch = Tensor3::from_vec((4, 4, 3), data).unwrap();
        let cfg = CodingConfig {
            max_sparsity: 3,
            epsilon: 0.0,
        };
        let code = momp_encode(&patch, &dict, &cfg).unwrap();
        let rec = decode(&code, &dict).unwrap();
        assert!(rec.sub(&patch).frob_norm() <= 1e-8);
    }

    #[test]
    fn omp_residual_strictly_decreases() {
        let dict = TensorDictionary::random(4, 2, 20, 6).unwrap();
        let encoder = MompEncoder::new(&dict);
        let patch = random_patch((4, 4, 2), 7);
        let (centered, _) = remove_mean(&patch);
        let mut prev = f64::INFINITY;
        for l in 1..=6 {
            let cfg = CodingConfig {
                max_sparsity: l,
                epsilon: 0.0,
            };
            let (entries, sq) = encoder.encode_centered(&dict, centered.data(), &cfg);
            assert_eq!(entries.len(), l);
            assert!(sq < prev, "residual did not decrease at sparsity {l}");
            prev = sq;
        }
    }

    #[test]
    fn decode_is_linear_and_validates_indices() {
        let dict = TensorDictionary::random(3, 2, 6, 8).unwrap();
        let code = SparseCode {
            entries: vec![(1, 0.5), (4, -2.0)],
            mean: vec![0.1, -0.3],
        };
        let doubled = SparseCode {
            entries: vec![(1, 1.0), (4, -4.0)],
            mean: vec![0.2, -0.6],
        };
        let a = decode(&code, &dict).unwrap();
        let b = decode(&doubled, &dict).unwrap();
        for (x, y) in a.data().iter().zip(b.data()) {
            assert_relative_eq!(2.0 * x, *y, epsilon = 1e-14);
        }
        let bad = SparseCode {
            entries: vec![(9, 1.0)],
            mean: vec![0.0, 0.0],
        };
        assert!(decode(&bad, &dict).is_err());

        let empty = SparseCode {
            entries: vec![],
            mean: vec![0.0, 0.0],
        };
        assert!(decode(&empty, &dict).unwrap().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn encode_then_decode_meets_precision_target() {
        let dict = TensorDictionary::random(4, 3, 80, 9).unwrap();
        let cfg = CodingConfig {
            max_sparsity: 80,
            epsilon: 1e-2,
        };
        let patch = random_patch((4, 4, 3), 12);
        let code = momp_encode(&patch, &dict, &cfg).unwrap();
        let rec = decode(&code, &dict).unwrap();
        let res = rec.sub(&patch).frob_norm();
        let dim = dict.atom_dim() as f64;
        assert!(res <= cfg.epsilon * dim.sqrt() * (1.0 + 1e-9));
    }

    #[test]
    fn update_mean_matches_oracles() {
        let dict = TensorDictionary::random(4, 3, 10, 13).unwrap();
        let patch = random_patch((4, 4, 3), 14);
        // code = 0 -> equals remove_mean's m
        let zero_code = SparseCode {
            entries: vec![],
            mean: vec![0.0; 3],
        };
        let m = update_mean(&patch, &zero_code, &dict).unwrap();
        let (_, m_ref) = remove_mean(&patch);
        for (a, b) in m.iter().zip(&m_ref) {
            assert_relative_eq!(a, b, epsilon = 1e-14);
        }
        // residual slices have zero spatial mean after the update
        let code = momp_encode(&patch, &dict, &CodingConfig { max_sparsity: 4, epsilon: 0.0 }).unwrap();
        let m = update_mean(&patch, &code, &dict).unwrap();
        let full = SparseCode {
            entries: code.entries.clone(),
            mean: m.clone(),
        };
        let rec = decode(&full, &dict).unwrap();
        let resid = patch.sub(&rec);
        for s in 0..3 {
            let mean: f64 = resid.slab(s).iter().sum::<f64>() / 16.0;
            assert!(mean.abs() < 1e-14);
        }
        // exact reconstruction returns the code's own mean
        let m2 = update_mean(&rec, &code, &dict).unwrap();
        for (a, b) in m2.iter().zip(&full.mean) {
            assert_relative_eq!(a, b, epsilon = 1e-12);
        }
    }

    #[test]
    fn kcpd_objective_is_monotone() {
        let mut rng = ChaCha8Rng::seed_from_u64(20);
        let truth = orthonormal_zero_mean_dict(4, 2, 21);
        let cfg = CodingConfig {
            max_sparsity: 3,
            epsilon: 0.0,
        };
        let patches: Vec<Tensor3> = (0..120)
            .map(|_| {
                let mut data = vec![0.0; truth.atom_dim()];
                for _ in 0..3 {
                    let k = rng.gen_range(0..truth.num_atoms());
                    let a = rng.gen_range(-1.0..1.0);
                    for (d, &v) in data.iter_mut().zip(truth.atom(k)) {
                        *d += a * v;
                    }
                }
                for d in data.iter_mut() {
                    *d += rng.gen_range(-0.02..0.02);
                }
                Tensor3::from_vec((4, 4, 2), data).unwrap()
            })
            .collect();
        let mut prev = f64::INFINITY;
        for iters in [1, 2, 4, 8] {
            let dict = kcpd_train(&patches, 10, &cfg, iters, 33).unwrap();
            let obj = coding_objective(&patches, &dict, &cfg);
            assert!(obj <= prev + 1e-9, "objective rose: {obj} > {prev}");
            prev = obj;
        }
    }

    #[test]
    fn kcpd_recovers_planted_rank1_dictionary() {
        let mut rng = ChaCha8Rng::seed_from_u64(30);
        let truth = orthonormal_zero_mean_dict(3, 2, 31); // 6 atoms
        let k = truth.num_atoms();
        let patches: Vec<Tensor3> = (0..400)
            .map(|_| {
                let mut data = vec![0.0; truth.atom_dim()];
                let a1 = rng.gen_range(0..k);
                let mut a2 = rng.gen_range(0..k);
                while a2 == a1 {
                    a2 = rng.gen_range(0..k);
                }
                for (atom, c) in [(a1, rng.gen_range(0.5..1.5)), (a2, rng.gen_range(0.5..1.5))] {
                    for (d, &v) in data.iter_mut().zip(truth.atom(atom)) {
                        *d += c * v;
                    }
                }
                Tensor3::from_vec((3, 3, 2), data).unwrap()
            })
            .collect();
        let cfg = CodingConfig {
            max_sparsity: 2,
            epsilon: 0.0,
        };
        let dict = kcpd_train(&patches, k, &cfg, 60, 77).unwrap();
        let obj = coding_objective(&patches, &dict, &cfg);
        let mean_res = (obj / patches.len() as f64).sqrt();
        assert!(mean_res <= 1e-6, "mean residual {mean_res}");
    }

    #[test]
    fn kcpd_rejects_degenerate_inputs() {
        assert!(kcpd_train(&[], 4, &CodingConfig { max_sparsity: 1, epsilon: 0.0 }, 1, 0).is_err());
        let p = Tensor3::zeros(3, 3, 2);
        assert!(kcpd_train(&[p], 0, &CodingConfig { max_sparsity: 1, epsilon: 0.0 }, 1, 0).is_err());
    }

    #[test]
    fn kcpd_is_deterministic() {
        let patches: Vec<Tensor3> = (0..40).map(|i| random_patch((3, 3, 2), 100 + i)).collect();
        let cfg = CodingConfig {
            max_sparsity: 2,
            epsilon: 1e-4,
        };
        let a = kcpd_train(&patches, 6, &cfg, 5, 9).unwrap();
        let b = kcpd_train(&patches, 6, &cfg, 5, 9).unwrap();
        assert_eq!(a.atoms().data(), b.atoms().data());
    }

    #[test]
    fn kcpd_handles_constant_training_images() {
        // all-zero centered patches: atoms stay unit norm, no crash
        let patches: Vec<Tensor3> = (0..10).map(|_| Tensor3::full((3, 3, 2), 0.7)).collect();
        let cfg = CodingConfig {
            max_sparsity: 2,
            epsilon: 0.0,
        };
        let dict = kcpd_train(&patches, 4, &cfg, 3, 5).unwrap();
        for k in 0..4 {
            assert_relative_eq!(norm(dict.atom(k)), 1.0, epsilon = 1e-10);
        }
    }
}
