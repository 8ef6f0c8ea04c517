//! End-to-end train/encode/classify runs shared by the CLI and
//! cross-validation.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use libm::sqrt;

use crate::codebook::{
    kernel_kmeans_fit, kmeans_fit, ClusterOptions, ExplicitCodebook, ImplicitCodebook,
};
use crate::data::{log_euclidean_set, DescriptorSet};
use crate::encode::nystrom::EIGEN_FLOOR;
use crate::encode::{
    fourier_fit, kvlad_cross_gram, kvlad_gram, nystrom_fit, pipeline_encode, select_landmarks,
    subspace_fit, svlad_encode, vlad_encode, FeatureMap, Normalization, SubspaceProjector,
    VladCode,
};
use crate::error::{Error, Result};
use crate::eval::{
    accuracy, kridge_predict, kridge_train, ridge_predict, ridge_train, DEFAULT_LAMBDA,
};
use crate::geometry::{
    CrossGram, Descriptor, Geometry, GeometryKind, GramMatrix, KernelFamily, KernelSpec,
};
use crate::linalg::Matrix;
use crate::rng::{derive_seed, SeededRng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum EncoderKind {
    Vlad,
    LeVlad,
    KVlad,
    NVlad,
    SVlad,
    FVlad,
}

impl EncoderKind {
    pub const ALL: [EncoderKind; 6] = [
        EncoderKind::Vlad,
        EncoderKind::LeVlad,
        EncoderKind::KVlad,
        EncoderKind::NVlad,
        EncoderKind::SVlad,
        EncoderKind::FVlad,
    ];

    pub fn name(self) -> &'static str {
        match self {
            EncoderKind::Vlad => "vlad",
            EncoderKind::LeVlad => "le-vlad",
            EncoderKind::KVlad => "kvlad",
            EncoderKind::NVlad => "nvlad",
            EncoderKind::SVlad => "svlad",
            EncoderKind::FVlad => "fvlad",
        }
    }

    /// Whether the encoder needs a kernel on the input geometry.
    pub fn uses_kernel(self) -> bool {
        matches!(
            self,
            EncoderKind::KVlad | EncoderKind::NVlad | EncoderKind::SVlad | EncoderKind::FVlad
        )
    }

    /// Rejects encoder/geometry pairs that cannot run.
    pub fn check_geometry(self, g: GeometryKind) -> Result<()> {
        let ok = match self {
            EncoderKind::Vlad | EncoderKind::FVlad => g == GeometryKind::Euclidean,
            EncoderKind::LeVlad => g == GeometryKind::Spd,
            _ => true,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::GeometryMismatch(format!(
                "encoder {} does not accept {} descriptors",
                self.name(),
                geometry_kind_name(g)
            )))
        }
    }
}

pub fn geometry_kind_name(g: GeometryKind) -> &'static str {
    match g {
        GeometryKind::Euclidean => "Euclidean",
        GeometryKind::Spd => "SPD",
        GeometryKind::Grassmann => "Grassmann",
    }
}

impl fmt::Display for EncoderKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for EncoderKind {
    type Err = String;

    fn from_str(s: &str) -> core::result::Result<Self, String> {
        EncoderKind::ALL
            .iter()
            .copied()
            .find(|e| e.name() == s)
            .ok_or_else(|| format!("unknown encoder `{s}`"))
    }
}

/// The kernel family matching a geometry.
pub fn default_family(g: GeometryKind) -> KernelFamily {
    match g {
        GeometryKind::Euclidean => KernelFamily::EuclideanRbf,
        GeometryKind::Spd => KernelFamily::Stein,
        GeometryKind::Grassmann => KernelFamily::ProjectionRbf,
    }
}

/// Codebook size used when none is given.
pub fn default_codebook_size(g: GeometryKind) -> usize {
    match g {
        GeometryKind::Euclidean => 256,
        _ => 32,
    }
}

pub const DEFAULT_MAP_DIM: usize = 256;
pub const DEFAULT_MAX_TRAIN: usize = 20_000;

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub encoder: EncoderKind,
    /// Kernel family; `None` picks the geometry's default.
    pub family: Option<KernelFamily>,
    pub sigma: f64,
    pub m: usize,
    /// Map dimension for nVLAD/fVLAD, subspace rank cap for sVLAD.
    pub r: Option<usize>,
    pub norm: Normalization,
    pub lambda: f64,
    pub seed: u64,
    pub max_iters: usize,
    /// Training descriptors are subsampled to at most this many.
    pub max_train_descriptors: usize,
}

impl PipelineConfig {
    pub fn new(encoder: EncoderKind, sigma: f64, m: usize) -> Self {
        PipelineConfig {
            encoder,
            family: None,
            sigma,
            m,
            r: None,
            norm: Normalization::NONE,
            lambda: DEFAULT_LAMBDA,
            seed: 0,
            max_iters: ClusterOptions::default().max_iters,
            max_train_descriptors: DEFAULT_MAX_TRAIN,
        }
    }

    fn cluster_options(&self) -> ClusterOptions {
        ClusterOptions {
            max_iters: self.max_iters,
            ..ClusterOptions::with_seed(derive_seed(self.seed, 1))
        }
    }

    /// Kernel on `g` for this config.
    pub fn kernel(&self, g: Geometry) -> Result<KernelSpec> {
        KernelSpec::new(g, self.family.unwrap_or(default_family(g.kind)), self.sigma)
    }
}

/// Uniform subsample (without replacement, original order kept) of all
/// descriptors in `sets`, at most `cap` of them.
pub fn pool_descriptors(sets: &[DescriptorSet], cap: usize, seed: u64) -> Vec<Descriptor> {
    let all: Vec<&Descriptor> = sets.iter().flat_map(|s| s.descriptors()).collect();
    if all.len() <= cap {
        return all.into_iter().cloned().collect();
    }
    let mut idx: Vec<usize> = (0..all.len()).collect();
    let mut rng = SeededRng::new(seed);
    for i in 0..cap {
        let j = i + rng.below(idx.len() - i);
        idx.swap(i, j);
    }
    let mut chosen = idx[..cap].to_vec();
    chosen.sort_unstable();
    chosen.into_iter().map(|i| all[i].clone()).collect()
}

fn euclidean_rows(xs: &[Descriptor]) -> Result<Vec<Vec<f64>>> {
    xs.iter()
        .map(|x| {
            x.as_euclidean().map(<[f64]>::to_vec).ok_or_else(|| {
                Error::GeometryMismatch(format!("expected vectors, got {}", x.geometry()))
            })
        })
        .collect()
}

/// A fitted encoder.
#[derive(Debug, Clone, PartialEq)]
pub enum TrainedEncoder {
    Vlad(ExplicitCodebook),
    LeVlad(ExplicitCodebook),
    KVlad(ImplicitCodebook),
    Mapped(FeatureMap, ExplicitCodebook),
    SVlad(ImplicitCodebook, SubspaceProjector),
}

impl TrainedEncoder {
    /// Explicit code for one set. kVLAD has none; use [`kvlad_grams`].
    pub fn encode(&self, set: &DescriptorSet, norm: Normalization) -> Result<VladCode> {
        match self {
            TrainedEncoder::Vlad(cb) => vlad_encode(set, cb, norm),
            TrainedEncoder::LeVlad(cb) => vlad_encode(&log_euclidean_set(set)?, cb, norm),
            TrainedEncoder::Mapped(map, cb) => pipeline_encode(set, map, cb, norm),
            TrainedEncoder::SVlad(cb, proj) => svlad_encode(set, cb, proj, norm),
            TrainedEncoder::KVlad(_) => Err(Error::param(
                "encoder",
                "kvlad codes are implicit; compare sets through the Gram",
            )),
        }
    }
}

/// Fits the codebook (and map or projector) of `config.encoder` on `train`.
pub fn fit_encoder(config: &PipelineConfig, train: &[DescriptorSet]) -> Result<TrainedEncoder> {
    let first = train.first().ok_or(Error::Empty("training sets"))?;
    let g = first.geometry();
    config.encoder.check_geometry(g.kind)?;
    let pool = pool_descriptors(
        train,
        config.max_train_descriptors,
        derive_seed(config.seed, 0),
    );
    let opts = config.cluster_options();
    match config.encoder {
        EncoderKind::Vlad => Ok(TrainedEncoder::Vlad(kmeans_fit(
            &euclidean_rows(&pool)?,
            config.m,
            &opts,
        )?)),
        EncoderKind::LeVlad => {
            let flat = pool
                .iter()
                .map(|x| match x {
                    Descriptor::Spd(a) => crate::geometry::spd_log_vec(a),
                    _ => unreachable!("checked geometry"),
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(TrainedEncoder::LeVlad(kmeans_fit(&flat, config.m, &opts)?))
        }
        EncoderKind::KVlad => {
            let k = config.kernel(g)?;
            Ok(TrainedEncoder::KVlad(kernel_kmeans_fit(
                &pool, &k, config.m, &opts,
            )?))
        }
        EncoderKind::SVlad => {
            let k = config.kernel(g)?;
            let cb = kernel_kmeans_fit(&pool, &k, config.m, &opts)?;
            let proj = subspace_fit(&cb, config.r, EIGEN_FLOOR)?;
            Ok(TrainedEncoder::SVlad(cb, proj))
        }
        EncoderKind::NVlad => {
            let k = config.kernel(g)?;
            let r = config.r.unwrap_or(DEFAULT_MAP_DIM);
            let landmarks = select_landmarks(&pool, r, derive_seed(config.seed, 2));
            let map = FeatureMap::Nystrom(nystrom_fit(&landmarks, &k, r.min(landmarks.len()))?);
            fit_mapped(map, &pool, config.m, &opts)
        }
        EncoderKind::FVlad => {
            if config
                .family
                .is_some_and(|f| f != KernelFamily::EuclideanRbf)
            {
                return Err(Error::param(
                    "kernel",
                    "fvlad approximates the Euclidean RBF kernel only",
                ));
            }
            let r = config.r.unwrap_or(DEFAULT_MAP_DIM);
            let map = FeatureMap::Fourier(fourier_fit(
                g.dim,
                config.sigma,
                r,
                derive_seed(config.seed, 3),
            )?);
            fit_mapped(map, &pool, config.m, &opts)
        }
    }
}

/// k-means on mapped training descriptors, recording the map's fingerprint.
pub fn fit_mapped(
    map: FeatureMap,
    pool: &[Descriptor],
    m: usize,
    opts: &ClusterOptions,
) -> Result<TrainedEncoder> {
    let mapped = pool
        .iter()
        .map(|x| map.map(x))
        .collect::<Result<Vec<_>>>()?;
    let cb = kmeans_fit(&mapped, m, opts)?.with_map_fingerprint(map.fingerprint());
    Ok(TrainedEncoder::Mapped(map, cb))
}

/// Scales a Gram to unit diagonal; zero-diagonal items stay zero.
fn cosine_normalize(values: &mut Matrix, row_diag: &[f64], col_diag: &[f64]) {
    for i in 0..values.rows() {
        for j in 0..values.cols() {
            let s = row_diag[i] * col_diag[j];
            values[(i, j)] = if s > 0.0 {
                values[(i, j)] / sqrt(s)
            } else {
                0.0
            };
        }
    }
}

/// Train Gram and test-versus-train cross Gram of kVLAD codes. `intra`
/// selects the block-normalized product; `global` rescales to unit self
/// similarity. Signed square rooting has no implicit form.
pub fn kvlad_grams(
    cb: &ImplicitCodebook,
    train: &[DescriptorSet],
    test: &[DescriptorSet],
    norm: Normalization,
) -> Result<(GramMatrix, CrossGram)> {
    if norm.ssr {
        return Err(Error::param(
            "norm",
            "ssr needs explicit codes and is not available for kvlad",
        ));
    }
    let mut g = kvlad_gram(train, cb, norm.intra)?;
    let mut cross = kvlad_cross_gram(test, train, cb, norm.intra)?;
    if norm.global {
        let train_diag: Vec<f64> = (0..g.len()).map(|i| g.values[(i, i)]).collect();
        let test_diag = test
            .iter()
            .map(|s| crate::encode::kvlad_inner(s, s, cb, norm.intra))
            .collect::<Result<Vec<_>>>()?;
        cosine_normalize(&mut g.values, &train_diag, &train_diag);
        cosine_normalize(&mut cross.values, &test_diag, &train_diag);
    }
    Ok((g, cross))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub predictions: Vec<u32>,
    pub truth: Vec<u32>,
    pub accuracy: f64,
}

/// Fits on `train`, classifies `test` and scores the predictions.
pub fn run(
    config: &PipelineConfig,
    train: &[DescriptorSet],
    test: &[DescriptorSet],
) -> Result<Outcome> {
    if test.is_empty() {
        return Err(Error::Empty("test sets"));
    }
    let encoder = fit_encoder(config, train)?;
    let train_labels: Vec<u32> = train.iter().map(|s| s.label).collect();
    let truth: Vec<u32> = test.iter().map(|s| s.label).collect();
    let predictions = match &encoder {
        TrainedEncoder::KVlad(cb) => {
            let (g, cross) = kvlad_grams(cb, train, test, config.norm)?;
            let model = kridge_train(&g, &train_labels, config.lambda)?;
            kridge_predict(&model, &cross)?
        }
        _ => {
            let encode_all = |sets: &[DescriptorSet]| {
                sets.iter()
                    .map(|s| encoder.encode(s, config.norm))
                    .collect::<Result<Vec<_>>>()
            };
            let model = ridge_train(&encode_all(train)?, &train_labels, config.lambda)?;
            ridge_predict(&model, &encode_all(test)?)?
        }
    };
    let accuracy = accuracy(&predictions, &truth)?;
    Ok(Outcome {
        predictions,
        truth,
        accuracy,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{gen_euclidean, Split};

    #[test]
    fn encoder_names_round_trip() {
        for e in EncoderKind::ALL {
            assert_eq!(e.name().parse::<EncoderKind>().unwrap(), e);
        }
        assert!("svm".parse::<EncoderKind>().is_err());
    }

    #[test]
    fn geometry_compatibility() {
        assert!(EncoderKind::FVlad
            .check_geometry(GeometryKind::Spd)
            .is_err());
        assert!(EncoderKind::LeVlad
            .check_geometry(GeometryKind::Euclidean)
            .is_err());
        assert!(EncoderKind::SVlad
            .check_geometry(GeometryKind::Grassmann)
            .is_ok());
    }

    #[test]
    fn pooled_subsample_is_seeded() {
        let ds = gen_euclidean(2, 2, 30, 2, 3.0, 1).unwrap();
        let a = pool_descriptors(&ds.sets, 50, 7);
        assert_eq!(a.len(), 50);
        assert_eq!(a, pool_descriptors(&ds.sets, 50, 7));
        assert_eq!(pool_descriptors(&ds.sets, 1000, 7).len(), 120);
    }

    #[test]
    fn separated_euclidean_classifies_with_every_encoder() {
        let ds = gen_euclidean(3, 10, 40, 3, 6.0, 5).unwrap();
        let train = ds.split(Split::Train);
        let test = ds.split(Split::Test);
        for e in [
            EncoderKind::Vlad,
            EncoderKind::KVlad,
            EncoderKind::NVlad,
            EncoderKind::SVlad,
            EncoderKind::FVlad,
        ] {
            let mut cfg = PipelineConfig::new(e, 3.0, 6);
            cfg.r = Some(if e == EncoderKind::FVlad { 256 } else { 32 });
            cfg.norm = Normalization {
                intra: true,
                ssr: false,
                global: false,
            };
            let out = run(&cfg, &train, &test).unwrap();
            assert!(out.accuracy >= 0.8, "{e}: {}", out.accuracy);
        }
    }
}
