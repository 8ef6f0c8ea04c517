//! Exact kernel VLAD. Codes live in the kernel's feature space and are never
//! formed; only their inner products are, via kernel values between
//! descriptors and implicit centroids.

use alloc::vec;
use alloc::vec::Vec;

use libm::{fabs, sqrt};

use crate::codebook::ImplicitCodebook;
use crate::data::DescriptorSet;
use crate::error::{Error, Result};
use crate::geometry::{CrossGram, GramMatrix, NEGATIVE_DIST_TOL};
use crate::linalg::Matrix;

/// Relative threshold under which a block norm counts as zero.
const ZERO_BLOCK_TOL: f64 = 1e-12;

/// Per-set quantities reused by every inner product the set takes part in.
#[derive(Debug, Clone)]
pub struct KvladSummary<'a> {
    set: &'a DescriptorSet,
    aux: Vec<f64>,
    /// Descriptor indices assigned to each cluster.
    blocks: Vec<Vec<usize>>,
    /// `Σ_{i∈s} k(x_i, c_s)`.
    centroid_sums: Vec<f64>,
    /// `‖δ_s‖²` in the feature space, clamped at zero.
    norms_sq: Vec<f64>,
    /// Whether each block counts as non-zero for the normalized product.
    nonzero: Vec<bool>,
}

impl<'a> KvladSummary<'a> {
    pub fn new(set: &'a DescriptorSet, cb: &ImplicitCodebook) -> Result<Self> {
        let k = cb.kernel();
        let m = cb.len();
        let mut blocks = vec![Vec::new(); m];
        let mut centroid_sums = vec![0.0; m];
        let mut aux = Vec::with_capacity(set.len());
        for (i, x) in set.descriptors().iter().enumerate() {
            aux.push(k.prepare(x)?);
            let row = cb.kernel_row(x)?;
            let (s, ck) = cb.assign_row(&row)?;
            blocks[s].push(i);
            centroid_sums[s] += ck;
        }
        let xs = set.descriptors();
        let mut norms_sq = vec![0.0; m];
        let mut nonzero = vec![false; m];
        for s in 0..m {
            let members = &blocks[s];
            if members.is_empty() {
                continue;
            }
            let mut pair_sum = 0.0;
            let mut diag_max = 0.0f64;
            for (a, &i) in members.iter().enumerate() {
                for &j in &members[a..] {
                    let v = k.eval_prepared(&xs[i], aux[i], &xs[j], aux[j])?;
                    pair_sum += if i == j { v } else { 2.0 * v };
                    if i == j {
                        diag_max = diag_max.max(fabs(v));
                    }
                }
            }
            let n = members.len() as f64;
            let kcc = cb.centroid_self_kernel(s)?;
            let raw = pair_sum + n * n * kcc - 2.0 * n * centroid_sums[s];
            let scale = n * n * diag_max.max(fabs(kcc)).max(1e-300);
            if raw < -NEGATIVE_DIST_TOL * scale.max(1.0) {
                return Err(Error::InconsistentKernel(raw));
            }
            norms_sq[s] = raw.max(0.0);
            nonzero[s] = norms_sq[s] > ZERO_BLOCK_TOL * scale;
        }
        Ok(KvladSummary {
            set,
            aux,
            blocks,
            centroid_sums,
            norms_sq,
            nonzero,
        })
    }

    /// Squared feature-space norm of every block.
    pub fn block_norms_sq(&self) -> &[f64] {
        &self.norms_sq
    }

    /// Number of blocks that received a descriptor and have non-zero norm.
    pub fn occupied_blocks(&self) -> usize {
        self.nonzero.iter().filter(|&&b| b).count()
    }

    pub fn assignments(&self) -> Vec<usize> {
        let mut out = vec![0; self.set.len()];
        for (s, list) in self.blocks.iter().enumerate() {
            for &i in list {
                out[i] = s;
            }
        }
        out
    }
}

/// `⟨δ_s(X), δ_s(Y)⟩` for every block.
fn block_products(
    x: &KvladSummary<'_>,
    y: &KvladSummary<'_>,
    cb: &ImplicitCodebook,
) -> Result<Vec<f64>> {
    let k = cb.kernel();
    let xs = x.set.descriptors();
    let ys = y.set.descriptors();
    let mut out = vec![0.0; cb.len()];
    for s in 0..cb.len() {
        let (bx, by) = (&x.blocks[s], &y.blocks[s]);
        if bx.is_empty() || by.is_empty() {
            continue;
        }
        let mut cross = 0.0;
        for &i in bx {
            for &j in by {
                cross += k.eval_prepared(&xs[i], x.aux[i], &ys[j], y.aux[j])?;
            }
        }
        let (nx, ny) = (bx.len() as f64, by.len() as f64);
        let kcc = cb.centroid_self_kernel(s)?;
        out[s] = cross + nx * ny * kcc - ny * x.centroid_sums[s] - nx * y.centroid_sums[s];
    }
    Ok(out)
}

/// Inner product of two summaries; see [`kvlad_inner`].
pub fn kvlad_inner_summaries(
    x: &KvladSummary<'_>,
    y: &KvladSummary<'_>,
    cb: &ImplicitCodebook,
    normalized: bool,
) -> Result<f64> {
    let same = core::ptr::eq(x.set, y.set) || x.set == y.set;
    if same {
        return Ok(if normalized {
            x.occupied_blocks() as f64
        } else {
            x.norms_sq.iter().sum()
        });
    }
    let products = block_products(x, y, cb)?;
    if !normalized {
        return Ok(products.iter().sum());
    }
    let mut total = 0.0;
    for (s, p) in products.iter().enumerate() {
        if x.nonzero[s] && y.nonzero[s] {
            total += p / (sqrt(x.norms_sq[s]) * sqrt(y.norms_sq[s]));
        }
    }
    Ok(total)
}

/// Kernel VLAD inner product `⟨v(X), v(Y)⟩`. With `normalized`, every block
/// is scaled to unit feature-space norm first; blocks with zero norm on
/// either side contribute nothing.
pub fn kvlad_inner(
    x: &DescriptorSet,
    y: &DescriptorSet,
    cb: &ImplicitCodebook,
    normalized: bool,
) -> Result<f64> {
    let sx = KvladSummary::new(x, cb)?;
    let sy = KvladSummary::new(y, cb)?;
    kvlad_inner_summaries(&sx, &sy, cb, normalized)
}

/// Squared distance between two kernel VLAD codes.
pub fn kvlad_dist_sq(x: &DescriptorSet, y: &DescriptorSet, cb: &ImplicitCodebook) -> Result<f64> {
    let sx = KvladSummary::new(x, cb)?;
    let sy = KvladSummary::new(y, cb)?;
    let xx = kvlad_inner_summaries(&sx, &sx, cb, false)?;
    let yy = kvlad_inner_summaries(&sy, &sy, cb, false)?;
    let xy = kvlad_inner_summaries(&sx, &sy, cb, false)?;
    let d = xx - 2.0 * xy + yy;
    if d < -NEGATIVE_DIST_TOL {
        return Err(Error::InconsistentKernel(d));
    }
    Ok(d.max(0.0))
}

/// Pairwise kernel VLAD inner products; the upper triangle is computed once
/// and mirrored.
pub fn kvlad_gram(
    sets: &[DescriptorSet],
    cb: &ImplicitCodebook,
    normalized: bool,
) -> Result<GramMatrix> {
    if sets.is_empty() {
        return Err(Error::Empty("set list"));
    }
    let summaries = sets
        .iter()
        .map(|s| KvladSummary::new(s, cb))
        .collect::<Result<Vec<_>>>()?;
    let n = sets.len();
    let mut values = Matrix::zeros(n, n);
    for i in 0..n {
        for j in i..n {
            let v = kvlad_inner_summaries(&summaries[i], &summaries[j], cb, normalized)?;
            values[(i, j)] = v;
            values[(j, i)] = v;
        }
    }
    GramMatrix::new(values, sets.iter().map(|s| s.id).collect())
}

/// Inner products of `rows` against `cols` (e.g. test sets against training sets).
pub fn kvlad_cross_gram(
    rows: &[DescriptorSet],
    cols: &[DescriptorSet],
    cb: &ImplicitCodebook,
    normalized: bool,
) -> Result<CrossGram> {
    let rs = rows
        .iter()
        .map(|s| KvladSummary::new(s, cb))
        .collect::<Result<Vec<_>>>()?;
    let cs = cols
        .iter()
        .map(|s| KvladSummary::new(s, cb))
        .collect::<Result<Vec<_>>>()?;
    let mut values = Matrix::zeros(rows.len(), cols.len());
    for (i, r) in rs.iter().enumerate() {
        for (j, c) in cs.iter().enumerate() {
            values[(i, j)] = kvlad_inner_summaries(r, c, cb, normalized)?;
        }
    }
    CrossGram::new(
        values,
        rows.iter().map(|s| s.id).collect(),
        cols.iter().map(|s| s.id).collect(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codebook::{kernel_kmeans_fit, ClusterOptions, ExplicitCodebook};
    use crate::encode::{vlad_encode, Normalization};
    use crate::geometry::{Descriptor, Geometry, KernelFamily, KernelSpec};
    use crate::rng::SeededRng;

    fn random_set(id: u32, n: usize, d: usize, rng: &mut SeededRng) -> DescriptorSet {
        let xs = (0..n)
            .map(|_| Descriptor::Euclidean((0..d).map(|_| 2.0 * rng.normal()).collect()))
            .collect();
        DescriptorSet::new(id, 0, xs).unwrap()
    }

    fn explicit_from(cb: &ImplicitCodebook, d: usize) -> ExplicitCodebook {
        let m = cb.len();
        let mut centers = Matrix::zeros(m, d);
        for (s, list) in cb.members().iter().enumerate() {
            for &i in list {
                let x = cb.training()[i].as_euclidean().unwrap();
                for k in 0..d {
                    centers[(s, k)] += x[k] / list.len() as f64;
                }
            }
        }
        ExplicitCodebook::new(centers).unwrap()
    }

    #[test]
    fn linear_kernel_matches_explicit_codes() {
        let mut rng = SeededRng::new(4);
        let d = 3;
        let train = random_set(100, 60, d, &mut rng);
        let k = KernelSpec::linear(d).unwrap();
        let cb =
            kernel_kmeans_fit(train.descriptors(), &k, 4, &ClusterOptions::with_seed(1)).unwrap();
        let ecb = explicit_from(&cb, d);
        let sets: Vec<_> = (0..4).map(|i| random_set(i, 15, d, &mut rng)).collect();
        for x in &sets {
            for y in &sets {
                let implicit = kvlad_inner(x, y, &cb, false).unwrap();
                let vx = vlad_encode(x, &ecb, Normalization::NONE).unwrap();
                let vy = vlad_encode(y, &ecb, Normalization::NONE).unwrap();
                let explicit = vx.dot(&vy).unwrap();
                assert!(
                    (implicit - explicit).abs() < 1e-8,
                    "{implicit} vs {explicit}"
                );
                let dist = kvlad_dist_sq(x, y, &cb).unwrap();
                let direct: f64 = vx
                    .flatten()
                    .iter()
                    .zip(vy.flatten())
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum();
                assert!((dist - direct).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn self_products_are_nonnegative_and_normalized_counts_blocks() {
        let mut rng = SeededRng::new(8);
        let g = Geometry::euclidean(2).unwrap();
        let k = KernelSpec::new(g, KernelFamily::EuclideanRbf, 1.0).unwrap();
        let train = random_set(100, 50, 2, &mut rng);
        let cb =
            kernel_kmeans_fit(train.descriptors(), &k, 5, &ClusterOptions::with_seed(2)).unwrap();
        for i in 0..100 {
            let x = random_set(i, 1 + (i as usize % 7), 2, &mut rng);
            assert!(kvlad_inner(&x, &x, &cb, false).unwrap() >= 0.0);
            let summary = KvladSummary::new(&x, &cb).unwrap();
            let normalized = kvlad_inner(&x, &x, &cb, true).unwrap();
            assert_eq!(normalized, summary.occupied_blocks() as f64);
            assert_eq!(kvlad_dist_sq(&x, &x, &cb).unwrap(), 0.0);
        }
    }

    #[test]
    fn gram_is_mirrored_and_diagonal_counts_blocks() {
        let mut rng = SeededRng::new(12);
        let k = KernelSpec::new(
            Geometry::euclidean(2).unwrap(),
            KernelFamily::EuclideanRbf,
            0.8,
        )
        .unwrap();
        let train = random_set(100, 40, 2, &mut rng);
        let cb =
            kernel_kmeans_fit(train.descriptors(), &k, 4, &ClusterOptions::with_seed(3)).unwrap();
        let sets: Vec<_> = (0..6).map(|i| random_set(i, 12, 2, &mut rng)).collect();
        let g = kvlad_gram(&sets, &cb, true).unwrap();
        for i in 0..6 {
            let occupied = KvladSummary::new(&sets[i], &cb).unwrap().occupied_blocks() as f64;
            assert!((g.values[(i, i)] - occupied).abs() < 1e-10);
            for j in 0..6 {
                assert_eq!(g.values[(i, j)].to_bits(), g.values[(j, i)].to_bits());
            }
        }
        assert!(g.min_eigenvalue().unwrap() >= -1e-6 * 4.0);
    }

    #[test]
    fn singleton_on_centroid_has_zero_block() {
        let k = KernelSpec::linear(1).unwrap();
        let train = vec![
            Descriptor::Euclidean(vec![1.0]),
            Descriptor::Euclidean(vec![3.0]),
        ];
        let cb = ImplicitCodebook::from_partition(train, vec![vec![0, 1]], k).unwrap();
        let x = DescriptorSet::new(0, 0, vec![Descriptor::Euclidean(vec![2.0])]).unwrap();
        let s = KvladSummary::new(&x, &cb).unwrap();
        assert_eq!(s.occupied_blocks(), 0);
        assert_eq!(kvlad_inner(&x, &x, &cb, true).unwrap(), 0.0);
    }
}
