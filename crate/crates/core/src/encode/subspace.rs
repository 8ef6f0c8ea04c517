//! Local subspace approximation (sVLAD). Each codeword's members span a
//! subspace of the feature space; descriptors assigned to that codeword are
//! projected onto its orthonormal basis `Φ_s U_s Λ_s^{-1/2}`.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use libm::sqrt;

use super::{normalize, EncoderTag, Normalization, VladCode};
use crate::codebook::ImplicitCodebook;
use crate::data::DescriptorSet;
use crate::error::{Error, Result};
use crate::geometry::{Descriptor, KernelSpec};
use crate::linalg::{symmetric_eigen, Matrix};

pub use super::nystrom::EIGEN_FLOOR;

/// Basis of one codeword's subspace.
#[derive(Debug, Clone, PartialEq)]
pub struct SubspaceBlock {
    members: Vec<Descriptor>,
    aux: Vec<f64>,
    /// `N_s × r_s` eigenvectors of `K_s`, descending.
    basis: Matrix,
    eigenvalues: Vec<f64>,
    /// `r_s × N_s`, equal to `Λ^{-1/2} Uᵀ`.
    coeffs: Matrix,
    centroid: Vec<f64>,
}

impl SubspaceBlock {
    fn new(
        members: Vec<Descriptor>,
        kernel: &KernelSpec,
        basis: Matrix,
        eigenvalues: Vec<f64>,
    ) -> Result<Self> {
        let n = members.len();
        let r = eigenvalues.len();
        if basis.rows() != n || basis.cols() != r {
            return Err(Error::DimensionMismatch {
                expected: n * r,
                got: basis.rows() * basis.cols(),
            });
        }
        if r == 0 || eigenvalues.iter().any(|&l| !(l > 0.0)) {
            return Err(Error::DegenerateKernel(
                "subspace needs positive eigenvalues".into(),
            ));
        }
        let aux = members
            .iter()
            .map(|t| kernel.prepare(t))
            .collect::<Result<Vec<_>>>()?;
        let mut coeffs = Matrix::zeros(r, n);
        let mut centroid = vec![0.0; r];
        for j in 0..r {
            let inv = 1.0 / sqrt(eigenvalues[j]);
            let col_sum: f64 = (0..n).map(|i| basis[(i, j)]).sum();
            centroid[j] = sqrt(eigenvalues[j]) * col_sum / n as f64;
            for i in 0..n {
                coeffs[(j, i)] = inv * basis[(i, j)];
            }
        }
        Ok(SubspaceBlock {
            members,
            aux,
            basis,
            eigenvalues,
            coeffs,
            centroid,
        })
    }

    pub fn dim(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn members(&self) -> &[Descriptor] {
        &self.members
    }

    pub fn basis(&self) -> &Matrix {
        &self.basis
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    /// Projected centroid `Λ^{1/2} Uᵀ 1 / N_s`.
    pub fn centroid(&self) -> &[f64] {
        &self.centroid
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SubspaceProjector {
    kernel: KernelSpec,
    blocks: Vec<SubspaceBlock>,
    codebook_fingerprint: u64,
}

impl SubspaceProjector {
    /// Reassembles a projector from per-cluster `(members, basis, eigenvalues)`.
    pub fn from_parts(
        kernel: KernelSpec,
        parts: Vec<(Vec<Descriptor>, Matrix, Vec<f64>)>,
        codebook_fingerprint: u64,
    ) -> Result<Self> {
        if parts.is_empty() {
            return Err(Error::Empty("subspace blocks"));
        }
        let blocks = parts
            .into_iter()
            .map(|(m, u, l)| SubspaceBlock::new(m, &kernel, u, l))
            .collect::<Result<Vec<_>>>()?;
        Ok(SubspaceProjector {
            kernel,
            blocks,
            codebook_fingerprint,
        })
    }

    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    pub fn kernel(&self) -> &KernelSpec {
        &self.kernel
    }

    pub fn block(&self, s: usize) -> Result<&SubspaceBlock> {
        self.blocks.get(s).ok_or(Error::InvalidCluster {
            index: s,
            count: self.blocks.len(),
        })
    }

    pub fn blocks(&self) -> &[SubspaceBlock] {
        &self.blocks
    }

    pub fn block_dims(&self) -> Vec<usize> {
        self.blocks.iter().map(SubspaceBlock::dim).collect()
    }

    pub fn codebook_fingerprint(&self) -> u64 {
        self.codebook_fingerprint
    }
}

/// Fits one subspace per cluster of `cb`, keeping at most `r` (all when
/// `None`) eigenpairs of `K_s` above `eps_rel · λ_max`.
pub fn subspace_fit(
    cb: &ImplicitCodebook,
    r: Option<usize>,
    eps_rel: f64,
) -> Result<SubspaceProjector> {
    if r == Some(0) {
        return Err(Error::param("r", "must be at least 1"));
    }
    if !(eps_rel.is_finite() && eps_rel >= 0.0) {
        return Err(Error::param(
            "eps_rel",
            format!("must be non-negative, got {eps_rel}"),
        ));
    }
    let k = cb.kernel();
    let mut parts = Vec::with_capacity(cb.len());
    for (s, list) in cb.members().iter().enumerate() {
        let members: Vec<Descriptor> = list.iter().map(|&i| cb.training()[i].clone()).collect();
        let aux = members
            .iter()
            .map(|t| k.prepare(t))
            .collect::<Result<Vec<_>>>()?;
        let n = members.len();
        let mut ks = Matrix::zeros(n, n);
        for i in 0..n {
            for j in i..n {
                let v = k.eval_prepared(&members[i], aux[i], &members[j], aux[j])?;
                ks[(i, j)] = v;
                ks[(j, i)] = v;
            }
        }
        let eig = symmetric_eigen(&ks)?;
        let lmax = eig.values[0];
        if !(lmax > 0.0) {
            return Err(Error::DegenerateKernel(format!(
                "cluster {s} has an all-zero kernel matrix"
            )));
        }
        let limit = r.unwrap_or(n).min(n);
        let keep = eig
            .values
            .iter()
            .take(limit)
            .take_while(|&&l| l > eps_rel * lmax)
            .count();
        let basis = Matrix::from_fn(n, keep, |i, j| eig.vectors[(i, j)]);
        parts.push((members, basis, eig.values[..keep].to_vec()));
    }
    SubspaceProjector::from_parts(*k, parts, cb.fingerprint())
}

fn project_column(block: &SubspaceBlock, column: &[f64]) -> Vec<f64> {
    block.coeffs.mat_vec(column)
}

/// `Λ_s^{-1/2} U_sᵀ κ_s(x)`.
pub fn subspace_project(x: &Descriptor, s: usize, proj: &SubspaceProjector) -> Result<Vec<f64>> {
    let block = proj.block(s)?;
    let k = &proj.kernel;
    let ax = k.prepare(x)?;
    let column = block
        .members
        .iter()
        .zip(&block.aux)
        .map(|(t, &at)| k.eval_prepared(x, ax, t, at))
        .collect::<Result<Vec<_>>>()?;
    Ok(project_column(block, &column))
}

/// sVLAD: block `s` sums `π_s(c_s) - π_s(x_i)` over descriptors assigned to `s`.
pub fn svlad_encode(
    set: &DescriptorSet,
    cb: &ImplicitCodebook,
    proj: &SubspaceProjector,
    norm: Normalization,
) -> Result<VladCode> {
    if proj.codebook_fingerprint != cb.fingerprint() {
        return Err(Error::FingerprintMismatch {
            map: proj.codebook_fingerprint,
            codebook: cb.fingerprint(),
        });
    }
    if set.is_empty() {
        return Err(Error::Empty("descriptor set"));
    }
    let mut blocks: Vec<Vec<f64>> = proj.blocks.iter().map(|b| vec![0.0; b.dim()]).collect();
    for x in set.descriptors() {
        let row = cb.kernel_row(x)?;
        let (s, _) = cb.assign_row(&row)?;
        let column: Vec<f64> = cb.members()[s].iter().map(|&j| row.values[j]).collect();
        let block = &proj.blocks[s];
        let z = project_column(block, &column);
        for ((acc, c), v) in blocks[s].iter_mut().zip(&block.centroid).zip(z) {
            *acc += c - v;
        }
    }
    let code = VladCode {
        blocks,
        encoder: EncoderTag::SVlad,
        normalization: Normalization::NONE,
    };
    Ok(normalize(code, norm))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codebook::kernel_kmeans_fit;
    use crate::codebook::ClusterOptions;
    use crate::geometry::{Geometry, KernelFamily};
    use crate::linalg::dot;
    use crate::rng::SeededRng;

    fn random_points(n: usize, d: usize, seed: u64) -> Vec<Descriptor> {
        let mut rng = SeededRng::new(seed);
        (0..n)
            .map(|_| Descriptor::Euclidean((0..d).map(|_| rng.normal()).collect()))
            .collect()
    }

    fn rbf(d: usize, sigma: f64) -> KernelSpec {
        KernelSpec::new(
            Geometry::euclidean(d).unwrap(),
            KernelFamily::EuclideanRbf,
            sigma,
        )
        .unwrap()
    }

    #[test]
    fn full_rank_reproduces_member_gram() {
        let pts = random_points(30, 2, 1);
        let k = rbf(2, 1.0);
        let cb = kernel_kmeans_fit(&pts, &k, 3, &ClusterOptions::with_seed(0)).unwrap();
        let proj = subspace_fit(&cb, None, EIGEN_FLOOR).unwrap();
        for (s, list) in cb.members().iter().enumerate() {
            let z: Vec<_> = list
                .iter()
                .map(|&i| subspace_project(&pts[i], s, &proj).unwrap())
                .collect();
            for (a, &i) in list.iter().enumerate() {
                for (b, &j) in list.iter().enumerate() {
                    assert!((dot(&z[a], &z[b]) - k.eval(&pts[i], &pts[j]).unwrap()).abs() < 1e-8);
                }
            }
            let dim = proj.block(s).unwrap().dim();
            let mean: Vec<f64> = (0..dim)
                .map(|c| z.iter().map(|v| v[c]).sum::<f64>() / z.len() as f64)
                .collect();
            for (m, c) in mean.iter().zip(proj.block(s).unwrap().centroid()) {
                assert!((m - c).abs() < 1e-10);
            }
        }
        for x in random_points(30, 2, 2) {
            for s in 0..3 {
                let z = subspace_project(&x, s, &proj).unwrap();
                assert!(dot(&z, &z) <= 1.0 + 1e-8);
            }
        }
    }

    #[test]
    fn singleton_cluster() {
        let t = Descriptor::Euclidean(vec![1.0, 2.0]);
        let k = KernelSpec::linear(2).unwrap();
        let cb = ImplicitCodebook::from_partition(vec![t.clone()], vec![vec![0]], k).unwrap();
        let proj = subspace_fit(&cb, None, EIGEN_FLOOR).unwrap();
        assert_eq!(proj.block_dims(), vec![1]);
        let z = subspace_project(&t, 0, &proj).unwrap();
        assert!((z[0].abs() - 5f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn member_set_encodes_to_zero_block() {
        let pts = random_points(24, 2, 3);
        let k = rbf(2, 0.8);
        let cb = kernel_kmeans_fit(&pts, &k, 3, &ClusterOptions::with_seed(1)).unwrap();
        let proj = subspace_fit(&cb, None, EIGEN_FLOOR).unwrap();
        let s = 0;
        let members: Vec<_> = cb.members()[s].iter().map(|&i| pts[i].clone()).collect();
        let set = DescriptorSet::new(0, 0, members).unwrap();
        let code = svlad_encode(&set, &cb, &proj, Normalization::NONE).unwrap();
        assert!(code.blocks[s].iter().all(|v| v.abs() < 1e-10));
        for (b, dim) in code.blocks.iter().zip(proj.block_dims()) {
            assert_eq!(b.len(), dim);
        }
    }

    #[test]
    fn linear_projection_preserves_dots() {
        let pts = random_points(12, 3, 4);
        let k = KernelSpec::linear(3).unwrap();
        let cb = ImplicitCodebook::from_partition(pts.clone(), vec![(0..12).collect()], k).unwrap();
        let proj = subspace_fit(&cb, None, EIGEN_FLOOR).unwrap();
        assert_eq!(proj.block_dims(), vec![3]);
        let others = random_points(5, 3, 5);
        for x in &others {
            for y in &others {
                let zx = subspace_project(x, 0, &proj).unwrap();
                let zy = subspace_project(y, 0, &proj).unwrap();
                let exact = dot(x.as_euclidean().unwrap(), y.as_euclidean().unwrap());
                assert!((dot(&zx, &zy) - exact).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn wrong_codebook_rejected() {
        let pts = random_points(10, 2, 6);
        let k = rbf(2, 1.0);
        let a = kernel_kmeans_fit(&pts, &k, 2, &ClusterOptions::with_seed(0)).unwrap();
        let b = kernel_kmeans_fit(&pts[..8], &k, 2, &ClusterOptions::with_seed(0)).unwrap();
        let proj = subspace_fit(&a, None, EIGEN_FLOOR).unwrap();
        let set = DescriptorSet::new(0, 0, pts[..3].to_vec()).unwrap();
        assert!(matches!(
            svlad_encode(&set, &b, &proj, Normalization::NONE),
            Err(Error::FingerprintMismatch { .. })
        ));
    }
}
