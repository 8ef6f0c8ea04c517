//! Descriptor sets, datasets, and seeded synthetic generators for the three
//! geometries.

use alloc::format;
use alloc::string::ToString;
use alloc::vec::Vec;

use libm::sqrt;

use crate::error::{Error, Result};
use crate::geometry::{validate, Descriptor, Geometry, GeometryKind};
use crate::linalg::{cholesky, dot, squared_distance, Matrix};
use crate::rng::SeededRng;

/// One image or video worth of local descriptors, all of one geometry.
#[derive(Debug, Clone, PartialEq)]
pub struct DescriptorSet {
    pub id: u32,
    pub label: u32,
    descriptors: Vec<Descriptor>,
}

impl DescriptorSet {
    pub fn new(id: u32, label: u32, descriptors: Vec<Descriptor>) -> Result<Self> {
        let first = descriptors.first().ok_or(Error::Empty("descriptor set"))?;
        let g = first.geometry();
        for (i, x) in descriptors.iter().enumerate() {
            validate(x, &g)
                .map_err(|d| Error::InvalidDescriptor(format!("set {id}, descriptor {i}: {d}")))?;
        }
        Ok(DescriptorSet {
            id,
            label,
            descriptors,
        })
    }

    pub fn descriptors(&self) -> &[Descriptor] {
        &self.descriptors
    }

    pub fn geometry(&self) -> Geometry {
        self.descriptors[0].geometry()
    }

    pub fn len(&self) -> usize {
        self.descriptors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.descriptors.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

/// A labeled collection of descriptor sets with train/test tags.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub geometry: Geometry,
    pub sets: Vec<DescriptorSet>,
    pub splits: Vec<Split>,
}

impl Dataset {
    pub fn new(geometry: Geometry, sets: Vec<DescriptorSet>, splits: Vec<Split>) -> Result<Self> {
        if sets.len() != splits.len() {
            return Err(Error::DimensionMismatch {
                expected: sets.len(),
                got: splits.len(),
            });
        }
        let mut ids: Vec<u32> = sets.iter().map(|s| s.id).collect();
        ids.sort_unstable();
        if ids.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::param("sets", "set ids are not unique"));
        }
        for s in &sets {
            if s.geometry() != geometry {
                return Err(Error::GeometryMismatch(format!(
                    "set {} is in {} but the dataset is {}",
                    s.id,
                    s.geometry(),
                    geometry
                )));
            }
        }
        let train_labels: Vec<u32> = sets
            .iter()
            .zip(&splits)
            .filter(|(_, &sp)| sp == Split::Train)
            .map(|(s, _)| s.label)
            .collect();
        if !train_labels.is_empty() {
            for s in &sets {
                if !train_labels.contains(&s.label) {
                    return Err(Error::param(
                        "sets",
                        format!("class {} has no training set", s.label),
                    ));
                }
            }
        }
        Ok(Dataset {
            geometry,
            sets,
            splits,
        })
    }

    /// All sets tagged as one split.
    pub fn split(&self, which: Split) -> Vec<DescriptorSet> {
        self.sets
            .iter()
            .zip(&self.splits)
            .filter(|(_, &sp)| sp == which)
            .map(|(s, _)| s.clone())
            .collect()
    }
}

/// Modified Gram–Schmidt with one reorthogonalization pass. Fails when a
/// column is (numerically) in the span of the previous ones.
pub fn orthonormalize(m: &Matrix) -> Result<Matrix> {
    let (d, p) = (m.rows(), m.cols());
    let mut q = m.clone();
    for j in 0..p {
        let original: f64 = sqrt((0..d).map(|i| q[(i, j)] * q[(i, j)]).sum::<f64>());
        for _pass in 0..2 {
            for k in 0..j {
                let proj: f64 = (0..d).map(|i| q[(i, k)] * q[(i, j)]).sum();
                for i in 0..d {
                    q[(i, j)] -= proj * q[(i, k)];
                }
            }
        }
        let norm = sqrt((0..d).map(|i| q[(i, j)] * q[(i, j)]).sum::<f64>());
        if !(norm > 1e-10 * original) || norm == 0.0 {
            return Err(Error::DegenerateKernel(format!(
                "column {j} is rank deficient"
            )));
        }
        for i in 0..d {
            q[(i, j)] /= norm;
        }
    }
    Ok(q)
}

fn check_counts(classes: usize, sets_per_class: usize, per_set: usize) -> Result<()> {
    if classes == 0 {
        return Err(Error::param("classes", "must be at least 1"));
    }
    if sets_per_class == 0 {
        return Err(Error::param("sets_per_class", "must be at least 1"));
    }
    if per_set == 0 {
        return Err(Error::param("per_set", "must be at least 1"));
    }
    Ok(())
}

/// Within each class the first half (rounded up) of the sets are training sets.
fn split_for(index_in_class: usize, sets_per_class: usize) -> Split {
    if index_in_class < sets_per_class.div_ceil(2) {
        Split::Train
    } else {
        Split::Test
    }
}

fn assemble(
    geometry: Geometry,
    classes: usize,
    sets_per_class: usize,
    seed: u64,
    mut make_set: impl FnMut(usize, &mut SeededRng) -> Result<Vec<Descriptor>>,
) -> Result<Dataset> {
    let mut sets = Vec::with_capacity(classes * sets_per_class);
    let mut splits = Vec::with_capacity(classes * sets_per_class);
    for c in 0..classes {
        for j in 0..sets_per_class {
            let id = (c * sets_per_class + j) as u32;
            let mut rng = SeededRng::derived(seed, 1 + id as u64);
            let descriptors = make_set(c, &mut rng)?;
            sets.push(DescriptorSet::new(id, c as u32, descriptors)?);
            splits.push(split_for(j, sets_per_class));
        }
    }
    Dataset::new(geometry, sets, splits)
}

/// Points whose pairwise distances are all at least 1 (scale-free layout
/// later multiplied by the separation).
fn separated_unit_means(count: usize, d: usize, rng: &mut SeededRng) -> Vec<Vec<f64>> {
    let mut means: Vec<Vec<f64>> = Vec::with_capacity(count);
    let mut spread = 1.0;
    let mut failures = 0;
    while means.len() < count {
        let candidate: Vec<f64> = (0..d).map(|_| spread * rng.normal()).collect();
        if means.iter().all(|m| squared_distance(m, &candidate) >= 1.0) {
            means.push(candidate);
        } else {
            failures += 1;
            if failures % 100 == 0 {
                spread *= 1.1;
            }
        }
    }
    means
}

/// Euclidean data: class `c` is a mixture of 3 unit-variance Gaussians whose
/// means sit at pairwise distance at least `separation` from every other
/// component mean. `separation = 0` puts every component at the origin.
pub fn gen_euclidean(
    classes: usize,
    sets_per_class: usize,
    per_set: usize,
    d: usize,
    separation: f64,
    seed: u64,
) -> Result<Dataset> {
    check_counts(classes, sets_per_class, per_set)?;
    if !(separation >= 0.0) || !separation.is_finite() {
        return Err(Error::param(
            "separation",
            "must be a non-negative finite value",
        ));
    }
    let geometry = Geometry::euclidean(d)?;
    let mut rng = SeededRng::new(seed);
    let unit = separated_unit_means(3 * classes, d, &mut rng);
    let means: Vec<Vec<f64>> = unit
        .into_iter()
        .map(|u| u.into_iter().map(|x| x * separation).collect())
        .collect();
    assemble(geometry, classes, sets_per_class, seed, |c, rng| {
        Ok((0..per_set)
            .map(|_| {
                let mean = &means[3 * c + rng.below(3)];
                Descriptor::Euclidean(mean.iter().map(|m| m + rng.normal()).collect())
            })
            .collect())
    })
}

/// SPD data: class `c` has a hidden scale `Σ_c = G Gᵀ + n I`; each descriptor
/// is the sample covariance of `q = 2n` draws from `N(0, Σ_c)` plus `1e-3 I`.
pub fn gen_spd(
    classes: usize,
    sets_per_class: usize,
    per_set: usize,
    n: usize,
    seed: u64,
) -> Result<Dataset> {
    check_counts(classes, sets_per_class, per_set)?;
    let geometry = Geometry::spd(n)?;
    let mut rng = SeededRng::new(seed);
    let factors = (0..classes)
        .map(|_| {
            let g = Matrix::from_fn(n, n, |_, _| rng.normal());
            let mut sigma = g.matmul(&g.transpose());
            for i in 0..n {
                sigma[(i, i)] += n as f64;
            }
            cholesky(&sigma)
        })
        .collect::<Result<Vec<_>>>()?;
    let q = 2 * n;
    assemble(geometry, classes, sets_per_class, seed, |c, rng| {
        let l = &factors[c];
        Ok((0..per_set)
            .map(|_| {
                let mut acc = Matrix::zeros(n, n);
                for _ in 0..q {
                    let z: Vec<f64> = (0..n).map(|_| rng.normal()).collect();
                    let v: Vec<f64> = (0..n).map(|i| dot(&l.row(i)[..=i], &z[..=i])).collect();
                    for i in 0..n {
                        for j in i..n {
                            acc[(i, j)] += v[i] * v[j];
                        }
                    }
                }
                let mut out = Matrix::zeros(n, n);
                for i in 0..n {
                    for j in i..n {
                        let x = acc[(i, j)] / q as f64 + if i == j { 1e-3 } else { 0.0 };
                        out[(i, j)] = x;
                        out[(j, i)] = x;
                    }
                }
                Descriptor::Spd(out)
            })
            .collect())
    })
}

/// Grassmann data: class `c` has a hidden orthonormal basis `B_c`; each
/// descriptor orthonormalizes `B_c + noise · E` with `E` standard normal.
pub fn gen_grassmann(
    classes: usize,
    sets_per_class: usize,
    per_set: usize,
    d: usize,
    p: usize,
    noise: f64,
    seed: u64,
) -> Result<Dataset> {
    check_counts(classes, sets_per_class, per_set)?;
    if !(noise >= 0.0) || !noise.is_finite() {
        return Err(Error::param("noise", "must be a non-negative finite value"));
    }
    let geometry = Geometry::grassmann(d, p)?;
    let mut rng = SeededRng::new(seed);
    let bases = (0..classes)
        .map(|_| draw_orthonormal(d, p, &mut rng, |_, _, r| r.normal()))
        .collect::<Result<Vec<_>>>()?;
    assemble(geometry, classes, sets_per_class, seed, |c, rng| {
        let base = &bases[c];
        (0..per_set)
            .map(|_| {
                draw_orthonormal(d, p, rng, |i, j, r| base[(i, j)] + noise * r.normal())
                    .map(Descriptor::Grassmann)
            })
            .collect()
    })
}

fn draw_orthonormal(
    d: usize,
    p: usize,
    rng: &mut SeededRng,
    mut entry: impl FnMut(usize, usize, &mut SeededRng) -> f64,
) -> Result<Matrix> {
    let mut last = None;
    for _ in 0..10 {
        let m = Matrix::from_fn(d, p, |i, j| entry(i, j, rng));
        match orthonormalize(&m) {
            Ok(q) => return Ok(q),
            Err(e) => last = Some(e),
        }
    }
    Err(last.unwrap_or_else(|| Error::DegenerateKernel("rank deficient draw".to_string())))
}

/// Preset Grassmann shapes `(d, p)` matching common image-set experiments.
pub const GRASSMANN_PRESETS: [(usize, usize); 3] = [(31, 3), (64, 5), (58, 3)];

/// Flattens SPD descriptors with the matrix logarithm (log-Euclidean
/// baseline). Other geometries are returned unchanged.
pub fn log_euclidean_set(set: &DescriptorSet) -> Result<DescriptorSet> {
    if set.geometry().kind != GeometryKind::Spd {
        return Ok(set.clone());
    }
    let flat = set
        .descriptors()
        .iter()
        .map(|x| match x {
            Descriptor::Spd(m) => crate::geometry::spd_log_vec(m).map(Descriptor::Euclidean),
            _ => unreachable!("homogeneous set"),
        })
        .collect::<Result<Vec<_>>>()?;
    DescriptorSet::new(set.id, set.label, flat)
}
