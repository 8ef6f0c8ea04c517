//! VLAD encoders.
//!
//! * [`vlad_encode`]: conventional VLAD over vector descriptors.
//! * [`kvlad`]: exact kernel VLAD, available only through inner products.
//! * [`nystrom`] / [`fourier`]: explicit feature maps followed by
//!   conventional VLAD in the mapped space ([`pipeline_encode`]).
//! * [`subspace`]: per-codeword local subspace projections (sVLAD).
//!
//! Every explicit encoder produces a [`VladCode`]: one residual block per
//! codeword, each block the sum of `center - descriptor` over the descriptors
//! assigned to that codeword.

pub mod fourier;
pub mod kvlad;
pub mod nystrom;
pub mod subspace;

use alloc::vec;
use alloc::vec::Vec;

use libm::sqrt;

use crate::codebook::ExplicitCodebook;
use crate::data::DescriptorSet;
use crate::error::{Error, Result};
use crate::geometry::Descriptor;

pub use fourier::{fourier_fit, fourier_map, FourierMap};
pub use kvlad::{kvlad_cross_gram, kvlad_dist_sq, kvlad_gram, kvlad_inner};
pub use nystrom::{nystrom_fit, nystrom_map, select_landmarks, NystromMap};
pub use subspace::{subspace_fit, subspace_project, svlad_encode, SubspaceProjector};

/// Which encoder produced a code.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum EncoderTag {
    Vlad = 0,
    NVlad = 1,
    SVlad = 2,
    FVlad = 3,
}

impl EncoderTag {
    pub fn from_u8(v: u8) -> Option<Self> {
        match v {
            0 => Some(EncoderTag::Vlad),
            1 => Some(EncoderTag::NVlad),
            2 => Some(EncoderTag::SVlad),
            3 => Some(EncoderTag::FVlad),
            _ => None,
        }
    }
}

/// Post-processing steps. When several are set they run in the order
/// intra → ssr → global.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Hash)]
pub struct Normalization {
    /// Unit ℓ2 norm per block.
    pub intra: bool,
    /// Signed square root, `sign(v) √|v|`.
    pub ssr: bool,
    /// Unit ℓ2 norm of the whole code.
    pub global: bool,
}

impl Normalization {
    pub const NONE: Normalization = Normalization {
        intra: false,
        ssr: false,
        global: false,
    };

    pub fn bits(&self) -> u8 {
        (self.intra as u8) | (self.ssr as u8) << 1 | (self.global as u8) << 2
    }

    pub fn from_bits(bits: u8) -> Option<Self> {
        if bits & !0b111 != 0 {
            return None;
        }
        Some(Normalization {
            intra: bits & 1 != 0,
            ssr: bits & 2 != 0,
            global: bits & 4 != 0,
        })
    }

    pub fn union(self, other: Normalization) -> Normalization {
        Normalization {
            intra: self.intra || other.intra,
            ssr: self.ssr || other.ssr,
            global: self.global || other.global,
        }
    }
}

/// Explicit VLAD-style code: one block per codeword.
#[derive(Debug, Clone, PartialEq)]
pub struct VladCode {
    pub blocks: Vec<Vec<f64>>,
    pub encoder: EncoderTag,
    /// Normalization steps already applied.
    pub normalization: Normalization,
}

impl VladCode {
    pub fn block_lengths(&self) -> Vec<usize> {
        self.blocks.iter().map(Vec::len).collect()
    }

    pub fn len(&self) -> usize {
        self.blocks.iter().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Concatenated blocks.
    pub fn flatten(&self) -> Vec<f64> {
        self.blocks.iter().flatten().copied().collect()
    }

    pub fn dot(&self, other: &VladCode) -> Result<f64> {
        if self.block_lengths() != other.block_lengths() {
            return Err(Error::DimensionMismatch {
                expected: self.len(),
                got: other.len(),
            });
        }
        Ok(self
            .blocks
            .iter()
            .zip(&other.blocks)
            .map(|(a, b)| crate::linalg::dot(a, b))
            .sum())
    }
}

fn l2_normalize(values: &mut [f64]) {
    let norm = sqrt(values.iter().map(|v| v * v).sum::<f64>());
    if norm > 0.0 {
        for v in values {
            *v /= norm;
        }
    }
}

/// Applies the requested normalization steps and records them on the code.
pub fn normalize(mut code: VladCode, spec: Normalization) -> VladCode {
    if spec.intra {
        for block in &mut code.blocks {
            l2_normalize(block);
        }
    }
    if spec.ssr {
        for v in code.blocks.iter_mut().flatten() {
            let r = sqrt(libm::fabs(*v));
            *v = if *v < 0.0 { -r } else { r };
        }
    }
    if spec.global {
        let norm = sqrt(code.blocks.iter().flatten().map(|v| v * v).sum::<f64>());
        if norm > 0.0 {
            for v in code.blocks.iter_mut().flatten() {
                *v /= norm;
            }
        }
    }
    code.normalization = code.normalization.union(spec);
    code
}

/// Residual blocks `Σ (c_s - x_i)` over vectors assigned to each center.
pub(crate) fn residual_blocks<'a>(
    points: impl IntoIterator<Item = &'a [f64]>,
    cb: &ExplicitCodebook,
) -> Result<Vec<Vec<f64>>> {
    let mut blocks = vec![vec![0.0; cb.dim()]; cb.len()];
    let mut any = false;
    for x in points {
        any = true;
        let s = cb.assign(x)?;
        for ((b, c), v) in blocks[s].iter_mut().zip(cb.center(s)).zip(x) {
            *b += c - v;
        }
    }
    if !any {
        return Err(Error::Empty("descriptor set"));
    }
    Ok(blocks)
}

/// Conventional VLAD over a Euclidean descriptor set.
pub fn vlad_encode(
    set: &DescriptorSet,
    cb: &ExplicitCodebook,
    norm: Normalization,
) -> Result<VladCode> {
    let points = set
        .descriptors()
        .iter()
        .map(|d| {
            d.as_euclidean().ok_or_else(|| {
                Error::GeometryMismatch(alloc::format!(
                    "VLAD needs vector descriptors, got {}",
                    d.geometry()
                ))
            })
        })
        .collect::<Result<Vec<_>>>()?;
    vlad_encode_vectors(&points, cb, norm)
}

/// Conventional VLAD over raw vectors.
pub fn vlad_encode_vectors(
    points: &[&[f64]],
    cb: &ExplicitCodebook,
    norm: Normalization,
) -> Result<VladCode> {
    let blocks = residual_blocks(points.iter().copied(), cb)?;
    let code = VladCode {
        blocks,
        encoder: EncoderTag::Vlad,
        normalization: Normalization::NONE,
    };
    Ok(normalize(code, norm))
}

/// Explicit kernel feature map used ahead of conventional VLAD.
#[derive(Debug, Clone, PartialEq)]
pub enum FeatureMap {
    Nystrom(NystromMap),
    Fourier(FourierMap),
}

impl FeatureMap {
    pub fn map(&self, x: &Descriptor) -> Result<Vec<f64>> {
        match self {
            FeatureMap::Nystrom(m) => nystrom_map(x, m),
            FeatureMap::Fourier(m) => match x {
                Descriptor::Euclidean(v) => fourier_map(v, m),
                other => Err(Error::GeometryMismatch(alloc::format!(
                    "Fourier features only apply to vector data, got {}",
                    other.geometry()
                ))),
            },
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            FeatureMap::Nystrom(m) => m.dim(),
            FeatureMap::Fourier(m) => m.dim(),
        }
    }

    pub fn fingerprint(&self) -> u64 {
        match self {
            FeatureMap::Nystrom(m) => m.fingerprint(),
            FeatureMap::Fourier(m) => m.fingerprint(),
        }
    }

    pub fn tag(&self) -> EncoderTag {
        match self {
            FeatureMap::Nystrom(_) => EncoderTag::NVlad,
            FeatureMap::Fourier(_) => EncoderTag::FVlad,
        }
    }
}

/// Maps every descriptor through `map`, then runs conventional VLAD in the
/// mapped space. `cb` must have been trained on vectors mapped by `map`.
pub fn pipeline_encode(
    set: &DescriptorSet,
    map: &FeatureMap,
    cb: &ExplicitCodebook,
    norm: Normalization,
) -> Result<VladCode> {
    if cb.map_fingerprint != map.fingerprint() {
        return Err(Error::FingerprintMismatch {
            map: map.fingerprint(),
            codebook: cb.map_fingerprint,
        });
    }
    let mapped = set
        .descriptors()
        .iter()
        .map(|x| map.map(x))
        .collect::<Result<Vec<_>>>()?;
    let blocks = residual_blocks(mapped.iter().map(Vec::as_slice), cb)?;
    let code = VladCode {
        blocks,
        encoder: map.tag(),
        normalization: Normalization::NONE,
    };
    Ok(normalize(code, norm))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::Matrix;

    fn set_of(points: &[&[f64]]) -> DescriptorSet {
        DescriptorSet::new(
            0,
            0,
            points
                .iter()
                .map(|p| Descriptor::Euclidean(p.to_vec()))
                .collect(),
        )
        .unwrap()
    }

    fn cb(centers: &[f64], d: usize) -> ExplicitCodebook {
        ExplicitCodebook::new(Matrix::from_vec(centers.len() / d, d, centers.to_vec())).unwrap()
    }

    #[test]
    fn vlad_hand_example() {
        let code = vlad_encode(
            &set_of(&[&[0.0, 0.0], &[1.0, 0.0]]),
            &cb(&[0.0, 0.0, 1.0, 1.0], 2),
            Normalization::NONE,
        )
        .unwrap();
        assert_eq!(code.blocks, vec![vec![-1.0, 0.0], vec![0.0, 0.0]]);
        assert_eq!(code.flatten(), vec![-1.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn descriptors_on_centers_give_zero_code() {
        let code = vlad_encode(
            &set_of(&[&[1.0, 1.0], &[0.0, 0.0], &[1.0, 1.0]]),
            &cb(&[0.0, 0.0, 1.0, 1.0], 2),
            Normalization::NONE,
        )
        .unwrap();
        assert!(code.flatten().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn duplicating_descriptors_doubles_code() {
        let c = cb(&[0.0, 0.0, 3.0, 1.0], 2);
        let pts: [&[f64]; 3] = [&[0.5, -0.2], &[2.0, 2.0], &[-1.0, 0.3]];
        let once = vlad_encode(&set_of(&pts), &c, Normalization::NONE).unwrap();
        let doubled: Vec<&[f64]> = pts.iter().chain(pts.iter()).copied().collect();
        let twice = vlad_encode(&set_of(&doubled), &c, Normalization::NONE).unwrap();
        for (a, b) in once.flatten().iter().zip(twice.flatten()) {
            assert_eq!(2.0 * a, b);
        }
    }

    #[test]
    fn vlad_rejects_manifold_input() {
        let spd = DescriptorSet::new(0, 0, vec![Descriptor::Spd(Matrix::identity(2))]).unwrap();
        assert!(vlad_encode(&spd, &cb(&[0.0, 0.0], 2), Normalization::NONE).is_err());
    }

    fn code(blocks: Vec<Vec<f64>>) -> VladCode {
        VladCode {
            blocks,
            encoder: EncoderTag::Vlad,
            normalization: Normalization::NONE,
        }
    }

    #[test]
    fn normalization_examples() {
        let ssr = Normalization {
            ssr: true,
            ..Normalization::NONE
        };
        assert_eq!(
            normalize(code(vec![vec![4.0, -4.0, 0.0]]), ssr).blocks,
            vec![vec![2.0, -2.0, 0.0]]
        );
        let global = Normalization {
            global: true,
            ..Normalization::NONE
        };
        assert_eq!(
            normalize(code(vec![vec![3.0, 4.0]]), global).blocks,
            vec![vec![0.6, 0.8]]
        );
        let intra = Normalization {
            intra: true,
            ..Normalization::NONE
        };
        let out = normalize(code(vec![vec![0.0, 0.0], vec![0.0, 2.0]]), intra);
        assert_eq!(out.blocks, vec![vec![0.0, 0.0], vec![0.0, 1.0]]);
        assert!(out.normalization.intra);
        let all_zero = normalize(code(vec![vec![0.0; 3]]), global);
        assert_eq!(all_zero.blocks, vec![vec![0.0; 3]]);
    }

    #[test]
    fn normalization_order_is_intra_ssr_global() {
        let all = Normalization {
            intra: true,
            ssr: true,
            global: true,
        };
        let out = normalize(code(vec![vec![3.0, 4.0], vec![0.0, -9.0]]), all);
        // intra: (0.6, 0.8), (0, -1); ssr: (√0.6, √0.8), (0, -1); global over norm² = 0.6+0.8+1
        let n = sqrt(2.4);
        let expected = [sqrt(0.6) / n, sqrt(0.8) / n, 0.0, -1.0 / n];
        for (a, b) in out.flatten().iter().zip(expected) {
            assert!((a - b).abs() < 1e-15);
        }
        assert_eq!(Normalization::from_bits(all.bits()), Some(all));
        assert_eq!(Normalization::from_bits(8), None);
    }
}
