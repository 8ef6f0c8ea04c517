//! Codebook learning and hard assignment.
//!
//! [`kmeans_fit`] builds an explicit codebook of vector centers.
//! [`kernel_kmeans_fit`] builds an [`ImplicitCodebook`] whose centroids are
//! means of feature maps of retained training descriptors, so every centroid
//! quantity is a kernel evaluation against cluster members.
//!
//! Both fits share the same seeding and iteration structure: k-means++
//! seeding, then alternating assignment / centroid update, with empty
//! clusters refilled by the point farthest from its center. With the linear
//! kernel the two produce identical assignment sequences.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::geometry::{gram, hilbert_dist_sq, Descriptor, GramMatrix, KernelSpec};
use crate::linalg::{squared_distance, Matrix};
use crate::rng::{Fingerprint, SeededRng};

/// Iteration controls shared by both k-means variants.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClusterOptions {
    pub max_iters: usize,
    /// Stop once distortion decreases by less than this fraction.
    pub rel_tol: f64,
    pub seed: u64,
    pub restarts: usize,
}

impl Default for ClusterOptions {
    fn default() -> Self {
        ClusterOptions {
            max_iters: 100,
            rel_tol: 1e-6,
            seed: 0,
            restarts: 1,
        }
    }
}

impl ClusterOptions {
    pub fn with_seed(seed: u64) -> Self {
        ClusterOptions {
            seed,
            ..Default::default()
        }
    }

    fn validate(&self) -> Result<()> {
        if self.max_iters == 0 {
            return Err(Error::param("max_iters", "must be at least 1"));
        }
        if !(self.rel_tol >= 0.0) {
            return Err(Error::param("rel_tol", "must be non-negative"));
        }
        if self.restarts == 0 {
            return Err(Error::param("restarts", "must be at least 1"));
        }
        Ok(())
    }
}

/// Outcome of a Lloyd-style run, kept for diagnostics and tests.
#[derive(Debug, Clone, PartialEq)]
pub struct Clustering {
    pub assignments: Vec<usize>,
    /// Distortion after the assignment step of every iteration.
    pub distortion_trace: Vec<f64>,
    /// Assignment vector produced at every iteration.
    pub assignment_trace: Vec<Vec<usize>>,
}

impl Clustering {
    pub fn distortion(&self) -> f64 {
        *self.distortion_trace.last().unwrap_or(&0.0)
    }
}

/// Vector codebook with `m` centers in `R^d`.
#[derive(Debug, Clone, PartialEq)]
pub struct ExplicitCodebook {
    centers: Matrix,
    /// Fingerprint of the feature map the centers live behind (0: raw input space).
    pub map_fingerprint: u64,
}

impl ExplicitCodebook {
    pub fn new(centers: Matrix) -> Result<Self> {
        if centers.rows() == 0 || centers.cols() == 0 {
            return Err(Error::Empty("codebook centers"));
        }
        if centers.as_slice().iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite);
        }
        Ok(ExplicitCodebook {
            centers,
            map_fingerprint: 0,
        })
    }

    pub fn with_map_fingerprint(mut self, fingerprint: u64) -> Self {
        self.map_fingerprint = fingerprint;
        self
    }

    pub fn len(&self) -> usize {
        self.centers.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.centers.rows() == 0
    }

    pub fn dim(&self) -> usize {
        self.centers.cols()
    }

    pub fn center(&self, s: usize) -> &[f64] {
        self.centers.row(s)
    }

    pub fn centers(&self) -> &Matrix {
        &self.centers
    }

    /// Index of the nearest center; ties go to the lowest index.
    pub fn assign(&self, v: &[f64]) -> Result<usize> {
        assign_explicit(v, self)
    }
}

/// Nearest center by squared Euclidean distance, lowest index on ties.
pub fn assign_explicit(v: &[f64], cb: &ExplicitCodebook) -> Result<usize> {
    if v.len() != cb.dim() {
        return Err(Error::DimensionMismatch {
            expected: cb.dim(),
            got: v.len(),
        });
    }
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for s in 0..cb.len() {
        let d = squared_distance(v, cb.center(s));
        if d < best_d {
            best_d = d;
            best = s;
        }
    }
    Ok(best)
}

fn count_distinct(points: &[Vec<f64>]) -> usize {
    let mut order: Vec<&Vec<f64>> = points.iter().collect();
    let cmp = |a: &&Vec<f64>, b: &&Vec<f64>| {
        for (x, y) in a.iter().zip(b.iter()) {
            match x.total_cmp(y) {
                core::cmp::Ordering::Equal => continue,
                o => return o,
            }
        }
        core::cmp::Ordering::Equal
    };
    order.sort_by(cmp);
    order.dedup_by(|a, b| cmp(a, b) == core::cmp::Ordering::Equal);
    order.len()
}

/// k-means++ seeding over an abstract squared distance.
fn kmeanspp_seeds(
    n: usize,
    m: usize,
    rng: &mut SeededRng,
    mut dist: impl FnMut(usize, usize) -> Result<f64>,
) -> Result<Vec<usize>> {
    let mut seeds = Vec::with_capacity(m);
    let first = rng.below(n);
    seeds.push(first);
    let mut nearest = (0..n).map(|i| dist(i, first)).collect::<Result<Vec<_>>>()?;
    while seeds.len() < m {
        let total: f64 = nearest.iter().sum();
        let pick = if total > 0.0 {
            let target = rng.uniform() * total;
            let mut acc = 0.0;
            let mut chosen = None;
            for (i, &d) in nearest.iter().enumerate() {
                if d <= 0.0 {
                    continue;
                }
                acc += d;
                if acc > target {
                    chosen = Some(i);
                    break;
                }
            }
            // Rounding can leave `target` just above the final partial sum.
            chosen.unwrap_or_else(|| {
                (0..n)
                    .rev()
                    .find(|&i| nearest[i] > 0.0)
                    .expect("positive total")
            })
        } else {
            // All remaining points coincide with a seed.
            (0..n).find(|i| !seeds.contains(i)).expect("m <= n")
        };
        seeds.push(pick);
        for (i, d) in nearest.iter_mut().enumerate() {
            let di = dist(i, pick)?;
            if di < *d {
                *d = di;
            }
        }
    }
    Ok(seeds)
}

/// Moves the farthest points into empty clusters. `dists[i]` is the squared
/// distance of point `i` to its assigned centroid and is zeroed for moved
/// points.
fn refill_empty(labels: &mut [usize], dists: &mut [f64], m: usize) {
    let mut sizes = vec![0usize; m];
    for &l in labels.iter() {
        sizes[l] += 1;
    }
    for s in 0..m {
        if sizes[s] > 0 {
            continue;
        }
        let mut far: Option<usize> = None;
        for i in 0..labels.len() {
            if sizes[labels[i]] <= 1 {
                continue;
            }
            if far.is_none_or(|f| dists[i] > dists[f]) {
                far = Some(i);
            }
        }
        if let Some(i) = far {
            sizes[labels[i]] -= 1;
            labels[i] = s;
            sizes[s] = 1;
            dists[i] = 0.0;
        }
    }
}

fn check_monotone(trace: &[f64], next: f64) {
    if let Some(&prev) = trace.last() {
        debug_assert!(
            next <= prev + 1e-12 * prev.abs().max(1.0),
            "distortion increased: {prev} -> {next}"
        );
    }
}

fn converged(
    trace: &[f64],
    labels: &[usize],
    prev_labels: Option<&Vec<usize>>,
    rel_tol: f64,
) -> bool {
    if prev_labels.is_some_and(|p| p.as_slice() == labels) {
        return true;
    }
    let n = trace.len();
    if n >= 2 {
        let prev = trace[n - 2];
        let cur = trace[n - 1];
        if cur == 0.0 || prev - cur <= rel_tol * prev {
            return true;
        }
    }
    false
}

fn means(points: &[Vec<f64>], labels: &[usize], m: usize, d: usize) -> Matrix {
    let mut sums = Matrix::zeros(m, d);
    let mut counts = vec![0usize; m];
    for (p, &l) in points.iter().zip(labels) {
        counts[l] += 1;
        for (acc, x) in sums.row_mut(l).iter_mut().zip(p) {
            *acc += x;
        }
    }
    for s in 0..m {
        if counts[s] > 0 {
            let inv = 1.0 / counts[s] as f64;
            for v in sums.row_mut(s) {
                *v *= inv;
            }
        }
    }
    sums
}

fn lloyd_euclidean(
    points: &[Vec<f64>],
    m: usize,
    opts: &ClusterOptions,
    rng: &mut SeededRng,
) -> Result<(Matrix, Clustering)> {
    let n = points.len();
    let d = points[0].len();
    let seeds = kmeanspp_seeds(n, m, rng, |i, j| {
        Ok(squared_distance(&points[i], &points[j]))
    })?;
    let mut centers = Matrix::from_fn(m, d, |s, k| points[seeds[s]][k]);
    let mut trace = Vec::new();
    let mut assignment_trace: Vec<Vec<usize>> = Vec::new();
    let mut labels = vec![0usize; n];
    let mut dists = vec![0.0; n];
    for _ in 0..opts.max_iters {
        for (i, p) in points.iter().enumerate() {
            let mut best = 0;
            let mut best_d = f64::INFINITY;
            for s in 0..m {
                let dd = squared_distance(p, centers.row(s));
                if dd < best_d {
                    best_d = dd;
                    best = s;
                }
            }
            labels[i] = best;
            dists[i] = best_d;
        }
        refill_empty(&mut labels, &mut dists, m);
        let distortion: f64 = dists.iter().sum();
        check_monotone(&trace, distortion);
        trace.push(distortion);
        centers = means(points, &labels, m, d);
        let done = converged(&trace, &labels, assignment_trace.last(), opts.rel_tol);
        assignment_trace.push(labels.clone());
        if done {
            break;
        }
    }
    Ok((
        centers,
        Clustering {
            assignments: labels,
            distortion_trace: trace,
            assignment_trace,
        },
    ))
}

/// Lloyd's k-means from k-means++ seeding.
pub fn kmeans_fit(
    points: &[Vec<f64>],
    m: usize,
    opts: &ClusterOptions,
) -> Result<ExplicitCodebook> {
    kmeans_fit_detailed(points, m, opts).map(|(cb, _)| cb)
}

/// As [`kmeans_fit`], also returning the best run's assignment history.
pub fn kmeans_fit_detailed(
    points: &[Vec<f64>],
    m: usize,
    opts: &ClusterOptions,
) -> Result<(ExplicitCodebook, Clustering)> {
    opts.validate()?;
    if points.is_empty() {
        return Err(Error::Empty("k-means input"));
    }
    if m == 0 {
        return Err(Error::param("m", "must be at least 1"));
    }
    let d = points[0].len();
    for p in points {
        if p.len() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: p.len(),
            });
        }
        if p.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite);
        }
    }
    let distinct = count_distinct(points);
    if m > distinct {
        return Err(Error::param(
            "m",
            format!("{m} clusters requested but only {distinct} distinct points"),
        ));
    }
    let mut best: Option<(Matrix, Clustering)> = None;
    for restart in 0..opts.restarts {
        let mut rng = SeededRng::derived(opts.seed, restart as u64);
        let run = lloyd_euclidean(points, m, opts, &mut rng)?;
        if best
            .as_ref()
            .is_none_or(|b| run.1.distortion() < b.1.distortion())
        {
            best = Some(run);
        }
    }
    let (centers, clustering) = best.expect("at least one restart");
    Ok((ExplicitCodebook::new(centers)?, clustering))
}

/// Kernel-space codebook. Centroid `s` is the mean feature map of the
/// training descriptors listed in `members[s]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ImplicitCodebook {
    training: Vec<Descriptor>,
    aux: Vec<f64>,
    members: Vec<Vec<usize>>,
    kernel: KernelSpec,
    /// `Σ_{j∈s} k(t_i, t_j)` for every member `i` of cluster `s`, in member order.
    member_row_sums: Vec<Vec<f64>>,
    /// `(1/N_s²) ΣΣ k(t_i, t_j)`.
    self_kernels: Vec<f64>,
}

impl ImplicitCodebook {
    /// Builds a codebook from a partition of `training`. The partition must
    /// be disjoint, covering and without empty clusters.
    pub fn from_partition(
        training: Vec<Descriptor>,
        members: Vec<Vec<usize>>,
        kernel: KernelSpec,
    ) -> Result<Self> {
        let aux = training
            .iter()
            .map(|t| kernel.prepare(t))
            .collect::<Result<Vec<_>>>()?;
        check_partition(&members, training.len())?;
        let mut member_row_sums = Vec::with_capacity(members.len());
        let mut self_kernels = Vec::with_capacity(members.len());
        for list in &members {
            let mut rows = vec![0.0; list.len()];
            for (a, &i) in list.iter().enumerate() {
                for (b, &j) in list.iter().enumerate().skip(a) {
                    let v = kernel.eval_prepared(&training[i], aux[i], &training[j], aux[j])?;
                    rows[a] += v;
                    if a != b {
                        rows[b] += v;
                    }
                }
            }
            let n = list.len() as f64;
            self_kernels.push(rows.iter().sum::<f64>() / (n * n));
            member_row_sums.push(rows);
        }
        Ok(ImplicitCodebook {
            training,
            aux,
            members,
            kernel,
            member_row_sums,
            self_kernels,
        })
    }

    fn from_gram_partition(
        training: Vec<Descriptor>,
        aux: Vec<f64>,
        members: Vec<Vec<usize>>,
        kernel: KernelSpec,
        k: &Matrix,
    ) -> Self {
        let mut member_row_sums = Vec::with_capacity(members.len());
        let mut self_kernels = Vec::with_capacity(members.len());
        for list in &members {
            let rows: Vec<f64> = list
                .iter()
                .map(|&i| list.iter().map(|&j| k[(i, j)]).sum())
                .collect();
            let n = list.len() as f64;
            self_kernels.push(rows.iter().sum::<f64>() / (n * n));
            member_row_sums.push(rows);
        }
        ImplicitCodebook {
            training,
            aux,
            members,
            kernel,
            member_row_sums,
            self_kernels,
        }
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn kernel(&self) -> &KernelSpec {
        &self.kernel
    }

    pub fn training(&self) -> &[Descriptor] {
        &self.training
    }

    pub fn members(&self) -> &[Vec<usize>] {
        &self.members
    }

    pub fn member_row_sums(&self, s: usize) -> &[f64] {
        &self.member_row_sums[s]
    }

    /// Cluster label of every retained training descriptor.
    pub fn labels(&self) -> Vec<usize> {
        let mut labels = vec![0; self.training.len()];
        for (s, list) in self.members.iter().enumerate() {
            for &i in list {
                labels[i] = s;
            }
        }
        labels
    }

    fn check_cluster(&self, s: usize) -> Result<()> {
        if s >= self.members.len() {
            return Err(Error::InvalidCluster {
                index: s,
                count: self.members.len(),
            });
        }
        Ok(())
    }

    /// `k(c_s, c_s)` from the cached member sums.
    pub fn centroid_self_kernel(&self, s: usize) -> Result<f64> {
        self.check_cluster(s)?;
        Ok(self.self_kernels[s])
    }

    /// `k(x, c_s) = (1/N_s) Σ_j k(x, t_{s,j})`.
    pub fn centroid_kernel(&self, x: &Descriptor, s: usize) -> Result<f64> {
        self.check_cluster(s)?;
        let ax = self.kernel.prepare(x)?;
        let list = &self.members[s];
        let mut sum = 0.0;
        for &j in list {
            sum += self
                .kernel
                .eval_prepared(x, ax, &self.training[j], self.aux[j])?;
        }
        Ok(sum / list.len() as f64)
    }

    /// Kernel values of `x` against every retained training descriptor.
    pub fn kernel_row(&self, x: &Descriptor) -> Result<KernelRow> {
        let ax = self.kernel.prepare(x)?;
        let self_value = self.kernel.eval_prepared(x, ax, x, ax)?;
        let values = self
            .training
            .iter()
            .zip(&self.aux)
            .map(|(t, &at)| self.kernel.eval_prepared(x, ax, t, at))
            .collect::<Result<Vec<_>>>()?;
        Ok(KernelRow { self_value, values })
    }

    /// Centroid kernels `k(x, c_s)` for all clusters, from a kernel row.
    pub fn centroid_kernels_from_row(&self, row: &KernelRow) -> Vec<f64> {
        self.members
            .iter()
            .map(|list| list.iter().map(|&j| row.values[j]).sum::<f64>() / list.len() as f64)
            .collect()
    }

    /// Nearest implicit centroid; ties go to the lowest index.
    pub fn assign(&self, x: &Descriptor) -> Result<usize> {
        let row = self.kernel_row(x)?;
        Ok(self.assign_row(&row)?.0)
    }

    /// Returns the nearest cluster and `k(x, c_s)` for that cluster.
    pub fn assign_row(&self, row: &KernelRow) -> Result<(usize, f64)> {
        let cks = self.centroid_kernels_from_row(row);
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for (s, &ck) in cks.iter().enumerate() {
            let d = hilbert_dist_sq(row.self_value, ck, self.self_kernels[s])?;
            if d < best_d {
                best_d = d;
                best = s;
            }
        }
        Ok((best, cks[best]))
    }

    /// Hash of the kernel, training descriptors and partition.
    pub fn fingerprint(&self) -> u64 {
        let mut h = Fingerprint::default();
        h.write(&[self.kernel.family as u8]);
        h.write_f64(self.kernel.sigma);
        for t in &self.training {
            for &v in t.values() {
                h.write_f64(v);
            }
        }
        for list in &self.members {
            h.write_u64(list.len() as u64);
            for &i in list {
                h.write_u64(i as u64);
            }
        }
        h.finish()
    }
}

/// Kernel values of one descriptor against the retained training set.
#[derive(Debug, Clone)]
pub struct KernelRow {
    pub self_value: f64,
    pub values: Vec<f64>,
}

fn check_partition(members: &[Vec<usize>], total: usize) -> Result<()> {
    if members.is_empty() {
        return Err(Error::Empty("codebook clusters"));
    }
    let mut seen = vec![false; total];
    for (s, list) in members.iter().enumerate() {
        if list.is_empty() {
            return Err(Error::param("members", format!("cluster {s} is empty")));
        }
        for &i in list {
            if i >= total || seen[i] {
                return Err(Error::param(
                    "members",
                    format!("index {i} is out of range or listed twice"),
                ));
            }
            seen[i] = true;
        }
    }
    if seen.iter().any(|s| !s) {
        return Err(Error::param(
            "members",
            "partition does not cover the training set",
        ));
    }
    Ok(())
}

fn lloyd_kernel(
    k: &Matrix,
    m: usize,
    opts: &ClusterOptions,
    rng: &mut SeededRng,
) -> Result<Clustering> {
    let n = k.rows();
    let seeds = kmeanspp_seeds(n, m, rng, |i, j| {
        hilbert_dist_sq(k[(i, i)], k[(i, j)], k[(j, j)])
    })?;
    // Centroid definitions: member lists. Start from the seeds as singletons.
    let mut labels = vec![usize::MAX; n];
    for (s, &i) in seeds.iter().enumerate() {
        labels[i] = s;
    }
    let mut current: Vec<Vec<usize>> = seeds.iter().map(|&i| vec![i]).collect();
    let mut trace = Vec::new();
    let mut assignment_trace: Vec<Vec<usize>> = Vec::new();
    let mut dists = vec![0.0; n];
    let mut sizes = vec![0usize; m];
    let mut self_terms = vec![0.0; m];
    let mut cross = Matrix::zeros(n, m);
    for _ in 0..opts.max_iters {
        // Cluster statistics of the current centroid definitions.
        let mut owner = vec![usize::MAX; n];
        for (s, list) in current.iter().enumerate() {
            sizes[s] = list.len();
            for &i in list {
                owner[i] = s;
            }
        }
        for i in 0..n {
            let row = cross.row_mut(i);
            row.fill(0.0);
            for (j, &o) in owner.iter().enumerate() {
                if o != usize::MAX {
                    row[o] += k[(i, j)];
                }
            }
        }
        for s in 0..m {
            let ns = sizes[s] as f64;
            self_terms[s] = current[s].iter().map(|&i| cross[(i, s)]).sum::<f64>() / (ns * ns);
        }
        let mut new_labels = vec![0usize; n];
        for i in 0..n {
            let mut best = 0;
            let mut best_d = f64::INFINITY;
            for s in 0..m {
                let ns = sizes[s] as f64;
                let d = hilbert_dist_sq(k[(i, i)], cross[(i, s)] / ns, self_terms[s])?;
                if d < best_d {
                    best_d = d;
                    best = s;
                }
            }
            new_labels[i] = best;
            dists[i] = best_d;
        }
        refill_empty(&mut new_labels, &mut dists, m);
        let distortion: f64 = dists.iter().sum();
        check_monotone(&trace, distortion);
        trace.push(distortion);
        labels = new_labels;
        current = vec![Vec::new(); m];
        for (i, &l) in labels.iter().enumerate() {
            current[l].push(i);
        }
        let done = converged(&trace, &labels, assignment_trace.last(), opts.rel_tol);
        assignment_trace.push(labels.clone());
        if done {
            break;
        }
    }
    Ok(Clustering {
        assignments: labels,
        distortion_trace: trace,
        assignment_trace,
    })
}

/// Kernel k-means. The full training Gram is computed once and reused.
pub fn kernel_kmeans_fit(
    descriptors: &[Descriptor],
    k: &KernelSpec,
    m: usize,
    opts: &ClusterOptions,
) -> Result<ImplicitCodebook> {
    let g = gram(descriptors, k)?;
    kernel_kmeans_fit_with_gram(descriptors, &g, k, m, opts).map(|(cb, _)| cb)
}

/// As [`kernel_kmeans_fit`] with a precomputed training Gram.
pub fn kernel_kmeans_fit_with_gram(
    descriptors: &[Descriptor],
    g: &GramMatrix,
    k: &KernelSpec,
    m: usize,
    opts: &ClusterOptions,
) -> Result<(ImplicitCodebook, Clustering)> {
    opts.validate()?;
    if descriptors.is_empty() {
        return Err(Error::Empty("kernel k-means input"));
    }
    if m == 0 || m > descriptors.len() {
        return Err(Error::param(
            "m",
            format!("need 1 <= m <= {}, got {m}", descriptors.len()),
        ));
    }
    if g.len() != descriptors.len() {
        return Err(Error::DimensionMismatch {
            expected: descriptors.len(),
            got: g.len(),
        });
    }
    let aux = descriptors
        .iter()
        .map(|t| k.prepare(t))
        .collect::<Result<Vec<_>>>()?;
    let mut best: Option<Clustering> = None;
    for restart in 0..opts.restarts {
        let mut rng = SeededRng::derived(opts.seed, restart as u64);
        let run = lloyd_kernel(&g.values, m, opts, &mut rng)?;
        if best
            .as_ref()
            .is_none_or(|b| run.distortion() < b.distortion())
        {
            best = Some(run);
        }
    }
    let clustering = best.expect("at least one restart");
    let mut members = vec![Vec::new(); m];
    for (i, &l) in clustering.assignments.iter().enumerate() {
        members[l].push(i);
    }
    let cb =
        ImplicitCodebook::from_gram_partition(descriptors.to_vec(), aux, members, *k, &g.values);
    Ok((cb, clustering))
}

/// Nearest implicit centroid of `x`; ties go to the lowest index.
pub fn assign_kernel(x: &Descriptor, cb: &ImplicitCodebook) -> Result<usize> {
    cb.assign(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{Geometry, KernelFamily};

    fn pts(v: &[[f64; 2]]) -> Vec<Vec<f64>> {
        v.iter().map(|p| p.to_vec()).collect()
    }

    fn euclid(points: &[Vec<f64>]) -> Vec<Descriptor> {
        points.iter().cloned().map(Descriptor::Euclidean).collect()
    }

    fn random_points(n: usize, d: usize, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = SeededRng::new(seed);
        (0..n)
            .map(|i| {
                let shift = (i % 3) as f64 * 3.0;
                (0..d).map(|_| rng.normal() + shift).collect()
            })
            .collect()
    }

    #[test]
    fn two_obvious_clusters() {
        let p = pts(&[[0.0, 0.0], [0.1, 0.0], [10.0, 10.0], [10.1, 10.0]]);
        let cb = kmeans_fit(&p, 2, &ClusterOptions::with_seed(3)).unwrap();
        let mut centers: Vec<Vec<f64>> = (0..2).map(|s| cb.center(s).to_vec()).collect();
        centers.sort_by(|a, b| a[0].total_cmp(&b[0]));
        assert!((centers[0][0] - 0.05).abs() < 1e-12 && centers[0][1] == 0.0);
        assert!((centers[1][0] - 10.05).abs() < 1e-12 && centers[1][1] == 10.0);
    }

    #[test]
    fn m_equals_n_gives_zero_distortion() {
        let p = random_points(7, 3, 1);
        let (cb, run) = kmeans_fit_detailed(&p, 7, &ClusterOptions::with_seed(2)).unwrap();
        assert_eq!(run.distortion(), 0.0);
        for x in &p {
            assert!((0..7).any(|s| cb.center(s) == x.as_slice()));
        }
    }

    #[test]
    fn too_many_clusters_is_an_error() {
        let p = pts(&[[1.0, 1.0], [1.0, 1.0], [2.0, 2.0]]);
        assert!(kmeans_fit(&p, 3, &ClusterOptions::default()).is_err());
        assert!(kmeans_fit(&p, 2, &ClusterOptions::default()).is_ok());
    }

    #[test]
    fn seeded_runs_are_bitwise_identical() {
        let p = random_points(60, 4, 5);
        let opts = ClusterOptions {
            restarts: 2,
            ..ClusterOptions::with_seed(17)
        };
        let a = kmeans_fit(&p, 5, &opts).unwrap();
        let b = kmeans_fit(&p, 5, &opts).unwrap();
        let bits = |c: &ExplicitCodebook| -> Vec<u64> {
            c.centers().as_slice().iter().map(|x| x.to_bits()).collect()
        };
        assert_eq!(bits(&a), bits(&b));
    }

    #[test]
    fn distortion_is_monotone_and_assignment_is_stable() {
        let p = random_points(120, 3, 9);
        let opts = ClusterOptions {
            rel_tol: 0.0,
            max_iters: 500,
            ..ClusterOptions::with_seed(4)
        };
        let (cb, run) = kmeans_fit_detailed(&p, 6, &opts).unwrap();
        for w in run.distortion_trace.windows(2) {
            assert!(w[1] <= w[0] + 1e-12 * w[0]);
        }
        for (x, &l) in p.iter().zip(&run.assignments) {
            assert_eq!(cb.assign(x).unwrap(), l);
        }
    }

    #[test]
    fn assign_explicit_examples() {
        let cb = ExplicitCodebook::new(Matrix::from_vec(2, 2, vec![0.0, 0.0, 1.0, 1.0])).unwrap();
        assert_eq!(assign_explicit(&[1.0, 0.0], &cb).unwrap(), 0);
        let cb2 =
            ExplicitCodebook::new(Matrix::from_vec(2, 2, vec![0.0, 0.0, 10.0, 10.0])).unwrap();
        assert_eq!(assign_explicit(&[9.0, 9.0], &cb2).unwrap(), 1);
        let cb3 =
            ExplicitCodebook::new(Matrix::from_vec(3, 2, vec![0.0, 0.0, 5.0, 5.0, -1.0, 2.0]))
                .unwrap();
        assert_eq!(assign_explicit(&[5.0, 5.0], &cb3).unwrap(), 1);
        assert!(assign_explicit(&[1.0], &cb).is_err());
    }

    #[test]
    fn kernel_kmeans_single_cluster() {
        let p = random_points(10, 2, 3);
        let k = KernelSpec::new(
            Geometry::euclidean(2).unwrap(),
            KernelFamily::EuclideanRbf,
            1.0,
        )
        .unwrap();
        let cb = kernel_kmeans_fit(&euclid(&p), &k, 1, &ClusterOptions::default()).unwrap();
        assert_eq!(cb.len(), 1);
        assert_eq!(cb.members()[0], (0..10).collect::<Vec<_>>());
    }

    #[test]
    fn kernel_kmeans_rejects_bad_m() {
        let p = random_points(4, 2, 3);
        let k = KernelSpec::linear(2).unwrap();
        assert!(kernel_kmeans_fit(&euclid(&p), &k, 5, &ClusterOptions::default()).is_err());
        assert!(kernel_kmeans_fit(&euclid(&p), &k, 0, &ClusterOptions::default()).is_err());
        let spd = KernelSpec::new(Geometry::spd(2).unwrap(), KernelFamily::Stein, 1.0).unwrap();
        assert!(kernel_kmeans_fit(&euclid(&p), &spd, 2, &ClusterOptions::default()).is_err());
    }

    #[test]
    fn linear_kernel_matches_euclidean_kmeans() {
        for seed in 0..8u64 {
            let p = random_points(80, 3, 100 + seed);
            let opts = ClusterOptions::with_seed(seed);
            let (cb, eu) = kmeans_fit_detailed(&p, 4, &opts).unwrap();
            let k = KernelSpec::linear(3).unwrap();
            let g = gram(&euclid(&p), &k).unwrap();
            let (icb, kr) = kernel_kmeans_fit_with_gram(&euclid(&p), &g, &k, 4, &opts).unwrap();
            assert_eq!(eu.assignment_trace, kr.assignment_trace, "seed {seed}");
            for x in &p {
                let d = Descriptor::Euclidean(x.clone());
                assert_eq!(icb.assign(&d).unwrap(), cb.assign(x).unwrap());
            }
        }
    }

    #[test]
    fn kernel_distortion_monotone_and_partition_valid() {
        let p = random_points(90, 2, 77);
        let k = KernelSpec::new(
            Geometry::euclidean(2).unwrap(),
            KernelFamily::EuclideanRbf,
            1.5,
        )
        .unwrap();
        let g = gram(&euclid(&p), &k).unwrap();
        let opts = ClusterOptions {
            rel_tol: 0.0,
            max_iters: 300,
            ..ClusterOptions::with_seed(1)
        };
        let (cb, run) = kernel_kmeans_fit_with_gram(&euclid(&p), &g, &k, 5, &opts).unwrap();
        for w in run.distortion_trace.windows(2) {
            assert!(w[1] <= w[0] + 1e-12 * w[0].max(1.0));
        }
        check_partition(cb.members(), p.len()).unwrap();
        for (x, &l) in p.iter().zip(&run.assignments) {
            assert_eq!(cb.assign(&Descriptor::Euclidean(x.clone())).unwrap(), l);
        }
        // cached self kernels agree with recomputation
        for s in 0..cb.len() {
            let list = &cb.members()[s];
            let n = list.len() as f64;
            let mut sum = 0.0;
            for &i in list {
                for &j in list {
                    sum += g.values[(i, j)];
                }
            }
            assert!((cb.centroid_self_kernel(s).unwrap() - sum / (n * n)).abs() < 1e-12);
        }
    }

    #[test]
    fn centroid_kernel_examples() {
        let t = vec![
            Descriptor::Euclidean(vec![1.0, 0.0]),
            Descriptor::Euclidean(vec![0.2, 0.0]),
            Descriptor::Euclidean(vec![0.6, 0.0]),
        ];
        let k = KernelSpec::linear(2).unwrap();
        let cb = ImplicitCodebook::from_partition(t.clone(), vec![vec![0], vec![1, 2]], k).unwrap();
        let x = Descriptor::Euclidean(vec![1.0, 5.0]);
        assert_eq!(cb.centroid_kernel(&x, 0).unwrap(), 1.0);
        assert!((cb.centroid_kernel(&x, 1).unwrap() - 0.4).abs() < 1e-15);
        assert_eq!(cb.centroid_self_kernel(0).unwrap(), 1.0);
        assert!(matches!(
            cb.centroid_kernel(&x, 2),
            Err(Error::InvalidCluster { index: 2, count: 2 })
        ));
        assert_eq!(cb.assign(&t[0]).unwrap(), 0);
    }

    #[test]
    fn kernel_assignment_tie_goes_low() {
        // x at the origin is equidistant from clusters 1 and 3.
        let t = vec![
            Descriptor::Euclidean(vec![9.0, 9.0]),
            Descriptor::Euclidean(vec![1.0, 0.0]),
            Descriptor::Euclidean(vec![-7.0, 8.0]),
            Descriptor::Euclidean(vec![-1.0, 0.0]),
        ];
        let k = KernelSpec::linear(2).unwrap();
        let cb = ImplicitCodebook::from_partition(t, vec![vec![0], vec![1], vec![2], vec![3]], k)
            .unwrap();
        assert_eq!(
            cb.assign(&Descriptor::Euclidean(vec![0.0, 0.0])).unwrap(),
            1
        );
    }

    #[test]
    fn partition_checks() {
        let t = vec![
            Descriptor::Euclidean(vec![1.0]),
            Descriptor::Euclidean(vec![2.0]),
        ];
        let k = KernelSpec::linear(1).unwrap();
        assert!(ImplicitCodebook::from_partition(t.clone(), vec![vec![0]], k).is_err());
        assert!(ImplicitCodebook::from_partition(t.clone(), vec![vec![0, 1], vec![]], k).is_err());
        assert!(ImplicitCodebook::from_partition(t, vec![vec![0, 0], vec![1]], k).is_err());
    }
}
