//! Little-endian binary formats for datasets, codebooks, maps, codes, Grams
//! and classifier models. Every file starts with a four-byte magic and a
//! `u16` version.

use std::fs;
use std::io::Write;
use std::path::Path;

use kvlad_core::codebook::{ExplicitCodebook, ImplicitCodebook};
use kvlad_core::data::DescriptorSet;
use kvlad_core::encode::{
    fourier_fit, EncoderTag, FeatureMap, Normalization, NystromMap, SubspaceProjector, VladCode,
};
use kvlad_core::eval::{KernelRidgeModel, RidgeModel};
use kvlad_core::geometry::{
    CrossGram, Descriptor, Geometry, GeometryKind, GramMatrix, KernelFamily, KernelSpec,
};
use kvlad_core::linalg::Matrix;

pub const VERSION: u16 = 1;

pub const DATASET_MAGIC: [u8; 4] = *b"KVLD";
pub const CODEBOOK_MAGIC: [u8; 4] = *b"KVLC";
pub const MAP_MAGIC: [u8; 4] = *b"KVLM";
pub const CODES_MAGIC: [u8; 4] = *b"KVLE";
pub const GRAM_MAGIC: [u8; 4] = *b"KVLG";
pub const MODEL_MAGIC: [u8; 4] = *b"KVLR";

#[derive(Debug, thiserror::Error)]
pub enum FormatError {
    #[error(
        "bad magic: expected {}, found {}",
        show_magic(expected),
        show_magic(found)
    )]
    BadMagic { expected: [u8; 4], found: [u8; 4] },
    #[error("unsupported version {found} (expected {VERSION})")]
    UnsupportedVersion { found: u16 },
    #[error("unexpected end of data while reading {0}")]
    UnexpectedEnd(&'static str),
    #[error("malformed payload: {0}")]
    Malformed(String),
    #[error(transparent)]
    Core(#[from] kvlad_core::Error),
    #[error("{}: {source}", path.display())]
    Io {
        path: std::path::PathBuf,
        source: std::io::Error,
    },
}

fn show_magic(m: &[u8; 4]) -> String {
    m.iter()
        .map(|&b| {
            if b.is_ascii_graphic() {
                (b as char).to_string()
            } else {
                format!("\\x{b:02x}")
            }
        })
        .collect()
}

pub type Result<T> = std::result::Result<T, FormatError>;

/// Append-only little-endian encoder.
#[derive(Debug, Default)]
pub struct Encoder(Vec<u8>);

impl Encoder {
    pub fn new(magic: [u8; 4]) -> Self {
        let mut e = Encoder(Vec::new());
        e.0.extend_from_slice(&magic);
        e.u16(VERSION);
        e
    }

    pub fn u8(&mut self, v: u8) {
        self.0.push(v);
    }

    pub fn u16(&mut self, v: u16) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }

    pub fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }

    pub fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }

    pub fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }

    pub fn len(&mut self, v: usize) {
        self.u32(u32::try_from(v).expect("count fits in u32"));
    }

    pub fn f64s(&mut self, vs: &[f64]) {
        for &v in vs {
            self.f64(v);
        }
    }

    pub fn finish(self) -> Vec<u8> {
        self.0
    }
}

/// Cursor over a byte slice; every read names what it was reading.
#[derive(Debug)]
pub struct Decoder<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Decoder<'a> {
    pub fn new(buf: &'a [u8], magic: [u8; 4]) -> Result<Self> {
        let mut d = Decoder { buf, pos: 0 };
        let found: [u8; 4] = d.take(4, "magic")?.try_into().expect("4 bytes");
        if found != magic {
            return Err(FormatError::BadMagic {
                expected: magic,
                found,
            });
        }
        let version = d.u16("version")?;
        if version != VERSION {
            return Err(FormatError::UnsupportedVersion { found: version });
        }
        Ok(d)
    }

    fn take(&mut self, n: usize, what: &'static str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        match end {
            Some(end) => {
                let out = &self.buf[self.pos..end];
                self.pos = end;
                Ok(out)
            }
            None => Err(FormatError::UnexpectedEnd(what)),
        }
    }

    pub fn u8(&mut self, what: &'static str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    pub fn u16(&mut self, what: &'static str) -> Result<u16> {
        Ok(u16::from_le_bytes(
            self.take(2, what)?.try_into().expect("2 bytes"),
        ))
    }

    pub fn u32(&mut self, what: &'static str) -> Result<u32> {
        Ok(u32::from_le_bytes(
            self.take(4, what)?.try_into().expect("4 bytes"),
        ))
    }

    pub fn u64(&mut self, what: &'static str) -> Result<u64> {
        Ok(u64::from_le_bytes(
            self.take(8, what)?.try_into().expect("8 bytes"),
        ))
    }

    pub fn f64(&mut self, what: &'static str) -> Result<f64> {
        Ok(f64::from_le_bytes(
            self.take(8, what)?.try_into().expect("8 bytes"),
        ))
    }

    pub fn len(&mut self, what: &'static str) -> Result<usize> {
        Ok(self.u32(what)? as usize)
    }

    pub fn f64s(&mut self, n: usize, what: &'static str) -> Result<Vec<f64>> {
        let bytes = self.take(
            n.checked_mul(8).ok_or(FormatError::UnexpectedEnd(what))?,
            what,
        )?;
        Ok(bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect())
    }

    /// Fails if bytes remain after the payload.
    pub fn finish(self) -> Result<()> {
        if self.pos == self.buf.len() {
            Ok(())
        } else {
            Err(FormatError::Malformed(format!(
                "{} trailing bytes",
                self.buf.len() - self.pos
            )))
        }
    }
}

/// Descriptor sets of one geometry, as stored in a dataset file.
#[derive(Debug, Clone, PartialEq)]
pub struct SetCollection {
    pub geometry: Geometry,
    pub sets: Vec<DescriptorSet>,
}

impl SetCollection {
    pub fn new(geometry: Geometry, sets: Vec<DescriptorSet>) -> Result<Self> {
        for s in &sets {
            if s.geometry() != geometry {
                return Err(FormatError::Malformed(format!(
                    "set {} is in {} but the collection is {}",
                    s.id,
                    s.geometry(),
                    geometry
                )));
            }
        }
        Ok(SetCollection { geometry, sets })
    }

    pub fn labels(&self) -> Vec<u32> {
        self.sets.iter().map(|s| s.label).collect()
    }
}

fn geometry_code(kind: GeometryKind) -> u8 {
    match kind {
        GeometryKind::Euclidean => 0,
        GeometryKind::Spd => 1,
        GeometryKind::Grassmann => 2,
    }
}

fn put_geometry(e: &mut Encoder, g: &Geometry) {
    e.u8(geometry_code(g.kind));
    e.u8(0);
    e.len(g.dim);
    e.len(g.subdim);
}

fn get_geometry(d: &mut Decoder<'_>) -> Result<Geometry> {
    let kind = d.u8("geometry")?;
    d.u8("padding")?;
    let dim = d.len("dimension")?;
    let sub = d.len("subspace dimension")?;
    Ok(match kind {
        0 => Geometry::euclidean(dim)?,
        1 => Geometry::spd(dim)?,
        2 => Geometry::grassmann(dim, sub)?,
        other => {
            return Err(FormatError::Malformed(format!(
                "unknown geometry code {other}"
            )))
        }
    })
}

fn put_descriptor(e: &mut Encoder, x: &Descriptor) {
    e.f64s(x.values());
}

fn get_descriptor(d: &mut Decoder<'_>, g: Geometry) -> Result<Descriptor> {
    let values = d.f64s(g.value_count(), "descriptor values")?;
    Ok(Descriptor::from_values(g, values)?)
}

fn put_sets(e: &mut Encoder, c: &SetCollection) {
    put_geometry(e, &c.geometry);
    e.len(c.sets.len());
    for s in &c.sets {
        e.u32(s.id);
        e.u32(s.label);
        e.len(s.len());
        for x in s.descriptors() {
            put_descriptor(e, x);
        }
    }
}

fn get_sets(d: &mut Decoder<'_>) -> Result<SetCollection> {
    let geometry = get_geometry(d)?;
    let n = d.len("set count")?;
    let mut sets = Vec::with_capacity(n.min(1 << 16));
    for _ in 0..n {
        let id = d.u32("set id")?;
        let label = d.u32("set label")?;
        let count = d.len("descriptor count")?;
        let mut xs = Vec::with_capacity(count.min(1 << 16));
        for _ in 0..count {
            xs.push(get_descriptor(d, geometry)?);
        }
        sets.push(DescriptorSet::new(id, label, xs)?);
    }
    SetCollection::new(geometry, sets)
}

pub fn encode_dataset(c: &SetCollection) -> Vec<u8> {
    let mut e = Encoder::new(DATASET_MAGIC);
    put_sets(&mut e, c);
    e.finish()
}

pub fn decode_dataset(bytes: &[u8]) -> Result<SetCollection> {
    let mut d = Decoder::new(bytes, DATASET_MAGIC)?;
    let c = get_sets(&mut d)?;
    d.finish()?;
    Ok(c)
}

fn family_code(f: KernelFamily) -> u8 {
    match f {
        KernelFamily::EuclideanRbf => 0,
        KernelFamily::Linear => 1,
        KernelFamily::Stein => 2,
        KernelFamily::ProjectionRbf => 3,
    }
}

fn family_from_code(c: u8) -> Result<KernelFamily> {
    Ok(match c {
        0 => KernelFamily::EuclideanRbf,
        1 => KernelFamily::Linear,
        2 => KernelFamily::Stein,
        3 => KernelFamily::ProjectionRbf,
        other => {
            return Err(FormatError::Malformed(format!(
                "unknown kernel family {other}"
            )))
        }
    })
}

fn put_kernel(e: &mut Encoder, k: &KernelSpec) {
    e.u8(family_code(k.family));
    e.f64(k.sigma);
}

fn get_kernel(d: &mut Decoder<'_>, g: Geometry) -> Result<KernelSpec> {
    let family = family_from_code(d.u8("kernel family")?)?;
    let sigma = d.f64("kernel bandwidth")?;
    Ok(KernelSpec::new(g, family, sigma)?)
}

fn put_matrix(e: &mut Encoder, m: &Matrix) {
    e.len(m.rows());
    e.len(m.cols());
    e.f64s(m.as_slice());
}

fn get_matrix(d: &mut Decoder<'_>, what: &'static str) -> Result<Matrix> {
    let rows = d.len(what)?;
    let cols = d.len(what)?;
    let n = rows
        .checked_mul(cols)
        .ok_or_else(|| FormatError::Malformed(format!("{what} too large")))?;
    Ok(Matrix::from_vec(rows, cols, d.f64s(n, what)?))
}

#[derive(Debug, Clone, PartialEq)]
pub enum CodebookFile {
    Explicit(ExplicitCodebook),
    Implicit(ImplicitCodebook),
}

pub fn encode_codebook(cb: &CodebookFile) -> Vec<u8> {
    let mut e = Encoder::new(CODEBOOK_MAGIC);
    match cb {
        CodebookFile::Explicit(cb) => {
            e.u8(0);
            e.len(cb.len());
            e.len(cb.dim());
            e.f64s(cb.centers().as_slice());
            e.u64(cb.map_fingerprint);
        }
        CodebookFile::Implicit(cb) => {
            e.u8(1);
            let set = DescriptorSet::new(0, 0, cb.training().to_vec())
                .expect("codebook training set is valid");
            put_sets(
                &mut e,
                &SetCollection {
                    geometry: cb.kernel().geometry,
                    sets: vec![set],
                },
            );
            e.len(cb.len());
            for list in cb.members() {
                e.len(list.len());
                for &i in list {
                    e.len(i);
                }
            }
            put_kernel(&mut e, cb.kernel());
        }
    }
    e.finish()
}

pub fn decode_codebook(bytes: &[u8]) -> Result<CodebookFile> {
    let mut d = Decoder::new(bytes, CODEBOOK_MAGIC)?;
    let out = match d.u8("codebook kind")? {
        0 => {
            let m = d.len("codebook size")?;
            let dim = d.len("center dimension")?;
            let centers = d.f64s(m * dim, "centers")?;
            let fp = d.u64("map fingerprint")?;
            CodebookFile::Explicit(
                ExplicitCodebook::new(Matrix::from_vec(m, dim, centers))?.with_map_fingerprint(fp),
            )
        }
        1 => {
            let c = get_sets(&mut d)?;
            if c.sets.len() != 1 {
                return Err(FormatError::Malformed(format!(
                    "implicit codebook embeds {} sets, expected 1",
                    c.sets.len()
                )));
            }
            let m = d.len("codebook size")?;
            let mut members = Vec::with_capacity(m.min(1 << 16));
            for _ in 0..m {
                let n = d.len("member count")?;
                let list = (0..n)
                    .map(|_| d.len("member index"))
                    .collect::<Result<Vec<_>>>()?;
                members.push(list);
            }
            let k = get_kernel(&mut d, c.geometry)?;
            let training = c
                .sets
                .into_iter()
                .next()
                .expect("one set")
                .descriptors()
                .to_vec();
            CodebookFile::Implicit(ImplicitCodebook::from_partition(training, members, k)?)
        }
        other => {
            return Err(FormatError::Malformed(format!(
                "unknown codebook kind {other}"
            )))
        }
    };
    d.finish()?;
    Ok(out)
}

/// Feature maps for nVLAD/fVLAD and subspace projectors for sVLAD.
#[derive(Debug, Clone, PartialEq)]
pub enum MapFile {
    Feature(FeatureMap),
    Subspace(SubspaceProjector),
}

pub fn encode_map(map: &MapFile) -> Vec<u8> {
    let mut e = Encoder::new(MAP_MAGIC);
    match map {
        MapFile::Feature(FeatureMap::Nystrom(n)) => {
            e.u8(0);
            let set =
                DescriptorSet::new(0, 0, n.landmarks().to_vec()).expect("landmarks are valid");
            put_sets(
                &mut e,
                &SetCollection {
                    geometry: n.kernel().geometry,
                    sets: vec![set],
                },
            );
            put_kernel(&mut e, n.kernel());
            put_matrix(&mut e, n.projection());
            e.f64s(n.eigenvalues());
        }
        MapFile::Feature(FeatureMap::Fourier(f)) => {
            // regenerated bitwise from its parameters
            e.u8(1);
            e.len(f.input_dim());
            e.len(f.dim());
            e.f64(f.sigma());
            e.u64(f.seed());
        }
        MapFile::Subspace(p) => {
            e.u8(2);
            let sets = p
                .blocks()
                .iter()
                .enumerate()
                .map(|(s, b)| DescriptorSet::new(s as u32, 0, b.members().to_vec()))
                .collect::<kvlad_core::Result<Vec<_>>>()
                .expect("cluster members are valid");
            put_sets(
                &mut e,
                &SetCollection {
                    geometry: p.kernel().geometry,
                    sets,
                },
            );
            put_kernel(&mut e, p.kernel());
            for b in p.blocks() {
                put_matrix(&mut e, b.basis());
                e.f64s(b.eigenvalues());
            }
            e.u64(p.codebook_fingerprint());
        }
    }
    e.finish()
}

pub fn decode_map(bytes: &[u8]) -> Result<MapFile> {
    let mut d = Decoder::new(bytes, MAP_MAGIC)?;
    let out = match d.u8("map kind")? {
        0 => {
            let c = get_sets(&mut d)?;
            let k = get_kernel(&mut d, c.geometry)?;
            let projection = get_matrix(&mut d, "projection")?;
            let eig = d.f64s(projection.rows(), "eigenvalues")?;
            let landmarks = c
                .sets
                .into_iter()
                .next()
                .ok_or_else(|| FormatError::Malformed("Nyström map without landmarks".into()))?
                .descriptors()
                .to_vec();
            MapFile::Feature(FeatureMap::Nystrom(NystromMap::from_parts(
                landmarks, k, projection, eig,
            )?))
        }
        1 => {
            let dim = d.len("input dimension")?;
            let r = d.len("map dimension")?;
            let sigma = d.f64("bandwidth")?;
            let seed = d.u64("seed")?;
            MapFile::Feature(FeatureMap::Fourier(fourier_fit(dim, sigma, r, seed)?))
        }
        2 => {
            let c = get_sets(&mut d)?;
            let k = get_kernel(&mut d, c.geometry)?;
            let mut parts = Vec::with_capacity(c.sets.len());
            for s in c.sets {
                let basis = get_matrix(&mut d, "subspace basis")?;
                let eig = d.f64s(basis.cols(), "subspace eigenvalues")?;
                parts.push((s.descriptors().to_vec(), basis, eig));
            }
            let fp = d.u64("codebook fingerprint")?;
            MapFile::Subspace(SubspaceProjector::from_parts(k, parts, fp)?)
        }
        other => return Err(FormatError::Malformed(format!("unknown map kind {other}"))),
    };
    d.finish()?;
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CodeEntry {
    pub id: u32,
    pub label: u32,
    pub code: VladCode,
}

/// Codes of several sets sharing encoder, normalization and block layout.
#[derive(Debug, Clone, PartialEq)]
pub struct CodesFile {
    pub encoder: EncoderTag,
    pub normalization: Normalization,
    pub block_lengths: Vec<usize>,
    pub entries: Vec<CodeEntry>,
}

impl CodesFile {
    pub fn new(entries: Vec<CodeEntry>) -> Result<Self> {
        let first = entries
            .first()
            .ok_or_else(|| FormatError::Malformed("no codes".into()))?;
        let (encoder, normalization) = (first.code.encoder, first.code.normalization);
        let block_lengths = first.code.block_lengths();
        for e in &entries {
            if e.code.encoder != encoder
                || e.code.normalization != normalization
                || e.code.block_lengths() != block_lengths
            {
                return Err(FormatError::Malformed(format!(
                    "code of set {} does not match the layout of the first code",
                    e.id
                )));
            }
        }
        Ok(CodesFile {
            encoder,
            normalization,
            block_lengths,
            entries,
        })
    }

    pub fn codes(&self) -> Vec<VladCode> {
        self.entries.iter().map(|e| e.code.clone()).collect()
    }

    pub fn labels(&self) -> Vec<u32> {
        self.entries.iter().map(|e| e.label).collect()
    }

    pub fn ids(&self) -> Vec<u32> {
        self.entries.iter().map(|e| e.id).collect()
    }
}

pub fn encode_codes(c: &CodesFile) -> Vec<u8> {
    let mut e = Encoder::new(CODES_MAGIC);
    e.u8(c.encoder as u8);
    e.u8(c.normalization.bits());
    e.len(c.block_lengths.len());
    for &l in &c.block_lengths {
        e.len(l);
    }
    e.len(c.entries.len());
    for entry in &c.entries {
        e.u32(entry.id);
        e.u32(entry.label);
        for b in &entry.code.blocks {
            e.f64s(b);
        }
    }
    e.finish()
}

pub fn decode_codes(bytes: &[u8]) -> Result<CodesFile> {
    let mut d = Decoder::new(bytes, CODES_MAGIC)?;
    let tag = d.u8("encoder tag")?;
    let encoder = EncoderTag::from_u8(tag)
        .ok_or_else(|| FormatError::Malformed(format!("unknown encoder tag {tag}")))?;
    let bits = d.u8("normalization flags")?;
    let normalization = Normalization::from_bits(bits)
        .ok_or_else(|| FormatError::Malformed(format!("unknown normalization flags {bits:#x}")))?;
    let m = d.len("block count")?;
    let block_lengths = (0..m)
        .map(|_| d.len("block length"))
        .collect::<Result<Vec<_>>>()?;
    let n = d.len("code count")?;
    let mut entries = Vec::with_capacity(n.min(1 << 16));
    for _ in 0..n {
        let id = d.u32("set id")?;
        let label = d.u32("set label")?;
        let blocks = block_lengths
            .iter()
            .map(|&l| d.f64s(l, "code values"))
            .collect::<Result<Vec<_>>>()?;
        entries.push(CodeEntry {
            id,
            label,
            code: VladCode {
                blocks,
                encoder,
                normalization,
            },
        });
    }
    d.finish()?;
    Ok(CodesFile {
        encoder,
        normalization,
        block_lengths,
        entries,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub enum GramFile {
    Symmetric(GramMatrix),
    Cross(CrossGram),
}

pub fn encode_gram(g: &GramFile) -> Vec<u8> {
    let mut e = Encoder::new(GRAM_MAGIC);
    match g {
        GramFile::Symmetric(g) => {
            e.u8(0);
            e.len(g.len());
            for &id in &g.ids {
                e.u32(id);
            }
            for i in 0..g.len() {
                e.f64s(&g.values.row(i)[i..]);
            }
        }
        GramFile::Cross(c) => {
            e.u8(1);
            e.len(c.row_ids.len());
            e.len(c.col_ids.len());
            for &id in c.row_ids.iter().chain(&c.col_ids) {
                e.u32(id);
            }
            e.f64s(c.values.as_slice());
        }
    }
    e.finish()
}

pub fn decode_gram(bytes: &[u8]) -> Result<GramFile> {
    let mut d = Decoder::new(bytes, GRAM_MAGIC)?;
    let out = match d.u8("gram kind")? {
        0 => {
            let n = d.len("item count")?;
            let ids = (0..n)
                .map(|_| d.u32("item id"))
                .collect::<Result<Vec<_>>>()?;
            let mut values = Matrix::zeros(n, n);
            for i in 0..n {
                let row = d.f64s(n - i, "gram values")?;
                for (k, v) in row.into_iter().enumerate() {
                    values[(i, i + k)] = v;
                    values[(i + k, i)] = v;
                }
            }
            GramFile::Symmetric(GramMatrix::new(values, ids)?)
        }
        1 => {
            let rows = d.len("row count")?;
            let cols = d.len("column count")?;
            let row_ids = (0..rows)
                .map(|_| d.u32("row id"))
                .collect::<Result<Vec<_>>>()?;
            let col_ids = (0..cols)
                .map(|_| d.u32("column id"))
                .collect::<Result<Vec<_>>>()?;
            let values = Matrix::from_vec(rows, cols, d.f64s(rows * cols, "gram values")?);
            GramFile::Cross(CrossGram::new(values, row_ids, col_ids)?)
        }
        other => return Err(FormatError::Malformed(format!("unknown gram kind {other}"))),
    };
    d.finish()?;
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub enum ModelFile {
    Ridge(RidgeModel),
    KernelRidge(KernelRidgeModel),
}

fn put_classes(e: &mut Encoder, classes: &[u32]) {
    e.len(classes.len());
    for &c in classes {
        e.u32(c);
    }
}

fn get_classes(d: &mut Decoder<'_>) -> Result<Vec<u32>> {
    let n = d.len("class count")?;
    (0..n).map(|_| d.u32("class label")).collect()
}

pub fn encode_model(m: &ModelFile) -> Vec<u8> {
    let mut e = Encoder::new(MODEL_MAGIC);
    match m {
        ModelFile::Ridge(r) => {
            e.u8(0);
            put_classes(&mut e, &r.classes);
            e.f64(r.lambda);
            put_matrix(&mut e, &r.weights);
        }
        ModelFile::KernelRidge(k) => {
            e.u8(1);
            put_classes(&mut e, &k.classes);
            e.f64(k.lambda);
            e.len(k.ids.len());
            for &id in &k.ids {
                e.u32(id);
            }
            put_matrix(&mut e, &k.alpha);
            e.f64s(&k.target_means);
            e.f64s(&k.gram_col_means);
            e.f64(k.gram_mean);
        }
    }
    e.finish()
}

pub fn decode_model(bytes: &[u8]) -> Result<ModelFile> {
    let mut d = Decoder::new(bytes, MODEL_MAGIC)?;
    let out = match d.u8("model kind")? {
        0 => {
            let classes = get_classes(&mut d)?;
            let lambda = d.f64("lambda")?;
            let weights = get_matrix(&mut d, "weights")?;
            if weights.rows() != classes.len() || weights.cols() == 0 {
                return Err(FormatError::Malformed(
                    "weight shape does not match classes".into(),
                ));
            }
            ModelFile::Ridge(RidgeModel {
                weights,
                lambda,
                classes,
            })
        }
        1 => {
            let classes = get_classes(&mut d)?;
            let lambda = d.f64("lambda")?;
            let n = d.len("training item count")?;
            let ids = (0..n)
                .map(|_| d.u32("training id"))
                .collect::<Result<Vec<_>>>()?;
            let alpha = get_matrix(&mut d, "dual coefficients")?;
            if alpha.rows() != n || alpha.cols() != classes.len() {
                return Err(FormatError::Malformed(
                    "coefficient shape does not match".into(),
                ));
            }
            let target_means = d.f64s(classes.len(), "target means")?;
            let gram_col_means = d.f64s(n, "gram column means")?;
            let gram_mean = d.f64("gram mean")?;
            ModelFile::KernelRidge(KernelRidgeModel {
                alpha,
                lambda,
                classes,
                ids,
                target_means,
                gram_col_means,
                gram_mean,
            })
        }
        other => {
            return Err(FormatError::Malformed(format!(
                "unknown model kind {other}"
            )))
        }
    };
    d.finish()?;
    Ok(out)
}

pub fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|source| FormatError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Writes through a temporary file in the target directory and renames it
/// into place, so a failed run leaves no partial output.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let io_err = |source| FormatError::Io {
        path: path.to_path_buf(),
        source,
    };
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(io_err)?;
    tmp.write_all(bytes).map_err(io_err)?;
    tmp.as_file().sync_all().map_err(io_err)?;
    tmp.persist(path).map_err(|e| io_err(e.error))?;
    Ok(())
}

macro_rules! file_pair {
    ($read:ident, $write:ident, $ty:ty, $enc:ident, $dec:ident) => {
        pub fn $read(path: &Path) -> Result<$ty> {
            $dec(&read_bytes(path)?)
        }

        pub fn $write(path: &Path, value: &$ty) -> Result<()> {
            write_atomic(path, &$enc(value))
        }
    };
}

file_pair!(
    read_dataset,
    write_dataset,
    SetCollection,
    encode_dataset,
    decode_dataset
);
file_pair!(
    read_codebook,
    write_codebook,
    CodebookFile,
    encode_codebook,
    decode_codebook
);
file_pair!(read_map, write_map, MapFile, encode_map, decode_map);
file_pair!(
    read_codes,
    write_codes,
    CodesFile,
    encode_codes,
    decode_codes
);
file_pair!(read_gram, write_gram, GramFile, encode_gram, decode_gram);
file_pair!(
    read_model,
    write_model,
    ModelFile,
    encode_model,
    decode_model
);

/// The magic of a file, for commands that accept several kinds.
pub fn peek_magic(path: &Path) -> Result<[u8; 4]> {
    let bytes = read_bytes(path)?;
    bytes
        .get(..4)
        .map(|m| m.try_into().expect("4 bytes"))
        .ok_or(FormatError::UnexpectedEnd("magic"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use kvlad_core::data::gen_spd;

    #[test]
    fn dataset_round_trip_and_diagnostics() {
        let ds = gen_spd(2, 2, 3, 3, 1).unwrap();
        let c = SetCollection::new(ds.geometry, ds.sets).unwrap();
        let bytes = encode_dataset(&c);
        assert_eq!(decode_dataset(&bytes).unwrap(), c);
        let mut bad = bytes.clone();
        bad[0] ^= 0xff;
        assert!(decode_dataset(&bad)
            .unwrap_err()
            .to_string()
            .starts_with("bad magic"));
        let cut = &bytes[..bytes.len() - 3];
        assert!(decode_dataset(cut)
            .unwrap_err()
            .to_string()
            .starts_with("unexpected end"));
        let mut v2 = bytes.clone();
        v2[4] = 2;
        assert!(decode_dataset(&v2)
            .unwrap_err()
            .to_string()
            .starts_with("unsupported version"));
    }
}
