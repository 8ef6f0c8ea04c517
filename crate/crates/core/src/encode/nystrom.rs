//! Nyström feature map: `z(x) = Σ^{-1/2} Vᵀ [k(x, t_1), …, k(x, t_M)]`
//! with `(Σ, V)` the top eigenpairs of the landmark Gram.

use alloc::format;
use alloc::vec::Vec;

use libm::sqrt;

use crate::error::{Error, Result};
use crate::geometry::{gram, Descriptor, KernelSpec};
use crate::linalg::{symmetric_eigen, Matrix};
use crate::rng::{Fingerprint, SeededRng};

/// Eigenvalues at or below `EIGEN_FLOOR * λ_max` are discarded.
pub const EIGEN_FLOOR: f64 = 1e-10;

/// Minimum landmark count regardless of `r`.
pub const MIN_LANDMARKS: usize = 256;

#[derive(Debug, Clone, PartialEq)]
pub struct NystromMap {
    landmarks: Vec<Descriptor>,
    aux: Vec<f64>,
    kernel: KernelSpec,
    /// `r × M`, rows are `λ_j^{-1/2} v_jᵀ`.
    projection: Matrix,
    eigenvalues: Vec<f64>,
}

impl NystromMap {
    /// Reassembles a map from stored parts.
    pub fn from_parts(
        landmarks: Vec<Descriptor>,
        kernel: KernelSpec,
        projection: Matrix,
        eigenvalues: Vec<f64>,
    ) -> Result<Self> {
        if projection.cols() != landmarks.len() || projection.rows() != eigenvalues.len() {
            return Err(Error::DimensionMismatch {
                expected: landmarks.len(),
                got: projection.cols(),
            });
        }
        if projection.rows() == 0 {
            return Err(Error::DegenerateKernel(
                "Nyström map has no dimensions".into(),
            ));
        }
        let aux = landmarks
            .iter()
            .map(|t| kernel.prepare(t))
            .collect::<Result<Vec<_>>>()?;
        Ok(NystromMap {
            landmarks,
            aux,
            kernel,
            projection,
            eigenvalues,
        })
    }

    /// Effective output dimension after the eigenvalue floor.
    pub fn dim(&self) -> usize {
        self.projection.rows()
    }

    pub fn landmarks(&self) -> &[Descriptor] {
        &self.landmarks
    }

    pub fn kernel(&self) -> &KernelSpec {
        &self.kernel
    }

    pub fn projection(&self) -> &Matrix {
        &self.projection
    }

    /// Retained eigenvalues, descending.
    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    pub fn fingerprint(&self) -> u64 {
        let mut h = Fingerprint::default();
        h.write(b"nystrom");
        h.write(&[self.kernel.family as u8]);
        h.write_f64(self.kernel.sigma);
        for t in &self.landmarks {
            for &v in t.values() {
                h.write_f64(v);
            }
        }
        for &v in self.projection.as_slice() {
            h.write_f64(v);
        }
        h.finish()
    }
}

/// Uniform subsample without replacement of size `min(total, max(4r, 256))`,
/// kept in original order.
pub fn select_landmarks(descriptors: &[Descriptor], r: usize, seed: u64) -> Vec<Descriptor> {
    let target = descriptors.len().min((4 * r).max(MIN_LANDMARKS));
    let mut idx: Vec<usize> = (0..descriptors.len()).collect();
    let mut rng = SeededRng::new(seed);
    // partial Fisher–Yates
    for i in 0..target {
        let j = i + rng.below(idx.len() - i);
        idx.swap(i, j);
    }
    let mut chosen = idx[..target].to_vec();
    chosen.sort_unstable();
    chosen.into_iter().map(|i| descriptors[i].clone()).collect()
}

pub fn nystrom_fit(landmarks: &[Descriptor], k: &KernelSpec, r: usize) -> Result<NystromMap> {
    if landmarks.is_empty() {
        return Err(Error::Empty("landmarks"));
    }
    if r == 0 || r > landmarks.len() {
        return Err(Error::param(
            "r",
            format!("need 1 <= r <= {} landmarks, got {r}", landmarks.len()),
        ));
    }
    let g = gram(landmarks, k)?;
    let eig = symmetric_eigen(&g.values)?;
    let lmax = eig.values[0];
    if !(lmax > 0.0) {
        return Err(Error::DegenerateKernel(
            "landmark Gram has no positive eigenvalue".into(),
        ));
    }
    let keep = eig
        .values
        .iter()
        .take(r)
        .take_while(|&&l| l > EIGEN_FLOOR * lmax)
        .count();
    let m = landmarks.len();
    let mut projection = Matrix::zeros(keep, m);
    for j in 0..keep {
        let scale = 1.0 / sqrt(eig.values[j]);
        for i in 0..m {
            projection[(j, i)] = scale * eig.vectors[(i, j)];
        }
    }
    if keep < r {
        log::debug!("Nyström rank reduced from {r} to {keep} by the eigenvalue floor");
    }
    NystromMap::from_parts(
        landmarks.to_vec(),
        *k,
        projection,
        eig.values[..keep].to_vec(),
    )
}

pub fn nystrom_map(x: &Descriptor, map: &NystromMap) -> Result<Vec<f64>> {
    let ax = map.kernel.prepare(x)?;
    let column = map
        .landmarks
        .iter()
        .zip(&map.aux)
        .map(|(t, &at)| map.kernel.eval_prepared(x, ax, t, at))
        .collect::<Result<Vec<_>>>()?;
    Ok(map.projection.mat_vec(&column))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{Geometry, KernelFamily};
    use crate::linalg::dot;

    fn random_points(n: usize, d: usize, seed: u64) -> Vec<Descriptor> {
        let mut rng = SeededRng::new(seed);
        (0..n)
            .map(|_| Descriptor::Euclidean((0..d).map(|_| rng.normal()).collect()))
            .collect()
    }

    #[test]
    fn standard_basis_maps_to_identity() {
        let d = 4;
        let basis: Vec<_> = (0..d)
            .map(|i| {
                Descriptor::Euclidean((0..d).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
            })
            .collect();
        let map = nystrom_fit(&basis, &KernelSpec::linear(d).unwrap(), d).unwrap();
        let z: Vec<_> = basis
            .iter()
            .map(|t| nystrom_map(t, &map).unwrap())
            .collect();
        for i in 0..d {
            for j in 0..d {
                let expected = if i == j { 1.0 } else { 0.0 };
                assert!((dot(&z[i], &z[j]) - expected).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn full_rank_reproduces_landmark_gram() {
        let pts = random_points(20, 3, 1);
        let k = KernelSpec::new(
            Geometry::euclidean(3).unwrap(),
            KernelFamily::EuclideanRbf,
            1.5,
        )
        .unwrap();
        let g = gram(&pts, &k).unwrap();
        let map = nystrom_fit(&pts, &k, 20).unwrap();
        let z: Vec<_> = pts.iter().map(|t| nystrom_map(t, &map).unwrap()).collect();
        for i in 0..20 {
            for j in 0..20 {
                assert!((dot(&z[i], &z[j]) - g.values[(i, j)]).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn linear_isometry_and_contraction() {
        let pts = random_points(10, 3, 2);
        let map = nystrom_fit(&pts, &KernelSpec::linear(3).unwrap(), 3).unwrap();
        assert_eq!(map.dim(), 3);
        for x in random_points(20, 3, 3) {
            let z = nystrom_map(&x, &map).unwrap();
            let v = x.as_euclidean().unwrap();
            assert!((dot(&z, &z).sqrt() - dot(v, v).sqrt()).abs() < 1e-8);
        }
        let k = KernelSpec::new(
            Geometry::euclidean(3).unwrap(),
            KernelFamily::EuclideanRbf,
            0.7,
        )
        .unwrap();
        let map = nystrom_fit(&pts, &k, 5).unwrap();
        for x in random_points(50, 3, 4) {
            let z = nystrom_map(&x, &map).unwrap();
            assert!(dot(&z, &z) <= 1.0 + 1e-8);
        }
    }

    #[test]
    fn landmark_count_rule() {
        let pts = random_points(300, 2, 5);
        assert_eq!(select_landmarks(&pts, 10, 0).len(), 256);
        assert_eq!(select_landmarks(&pts, 100, 0).len(), 300);
        assert_eq!(select_landmarks(&pts[..50], 10, 0).len(), 50);
        assert_eq!(select_landmarks(&pts, 10, 9), select_landmarks(&pts, 10, 9));
    }
}
