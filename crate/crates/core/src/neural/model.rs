//! The trained region model (embedding and wordness heads) and its
//! checkpoint format.

use std::path::Path;

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::features::{PageFeatures, REFERENCE_DIM, WORDNESS_DIM};
use super::head::{EmbedHead, Mode, NamedTensor, TensorTake, WordnessHead};
use super::loss::sigmoid;
use crate::binio::{short_hash, Reader, Writer};
use crate::embeddings::EmbeddingKind;
use crate::error::{Error, Result};
use crate::geometry::BBox;
use crate::raster::GrayImage;

pub const CHECKPOINT_MAGIC: &[u8; 7] = b"CFNMDL1";
pub const CHECKPOINT_VERSION: u16 = 1;

/// Rows processed per forward pass when describing many regions.
const CHUNK: usize = 512;

#[derive(Debug, Clone, PartialEq)]
pub struct SpotModel {
    pub kind: EmbeddingKind,
    pub embed: EmbedHead,
    pub wordness: WordnessHead,
    /// Optimizer steps taken; zero means untrained.
    pub iterations: u64,
}

impl SpotModel {
    pub fn new(kind: EmbeddingKind, hidden: usize, wordness_hidden: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self {
            kind,
            embed: EmbedHead::new(REFERENCE_DIM, hidden, kind.dim(), &mut rng),
            wordness: WordnessHead::new(WORDNESS_DIM, wordness_hidden, &mut rng),
            iterations: 0,
        }
    }

    pub fn is_trained(&self) -> bool {
        self.iterations > 0
    }

    /// Wordness probability of each box.
    pub fn wordness_scores(&self, pf: &PageFeatures, boxes: &[BBox]) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(boxes.len());
        for chunk in boxes.chunks(CHUNK) {
            let x = stack(chunk.iter().map(|b| pf.wordness(b)), WORDNESS_DIM)?;
            out.extend(self.wordness.forward(&x)?.logits.iter().map(|&s| sigmoid(s)));
        }
        Ok(out)
    }

    /// Unit-length descriptors, one row per box.
    pub fn embed_regions(&self, pf: &PageFeatures, boxes: &[BBox]) -> Result<Array2<f64>> {
        let mut out = Array2::zeros((0, self.embed.output_dim()));
        for chunk in boxes.chunks(CHUNK) {
            let x = stack(chunk.iter().map(|b| pf.reference(b)), REFERENCE_DIM)?;
            let y = self.embed.forward(&x, Mode::Eval)?.y;
            out.append(ndarray::Axis(0), y.view()).expect("same width");
        }
        Ok(out)
    }

    /// Descriptor of a single crop, as used for query-by-example.
    pub fn embed_region(&self, img: &GrayImage, bbox: &BBox) -> Result<Vec<f64>> {
        let pf = PageFeatures::new(img);
        self.embed.embed(&pf.reference(bbox)?)
    }

    fn tensors(&self) -> Vec<NamedTensor> {
        let mut t = self.embed.tensors("embed");
        t.extend(self.wordness.tensors("wordness"));
        t
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::default();
        w.bytes(CHECKPOINT_MAGIC);
        w.u16(CHECKPOINT_VERSION);
        w.u8(self.kind.code());
        w.u64(self.iterations);
        let tensors = self.tensors();
        w.u32(tensors.len() as u32);
        for t in &tensors {
            w.short_str(&t.name);
            w.u8(t.shape.len() as u8);
            for &d in &t.shape {
                w.u32(d as u32);
            }
            for &v in &t.data {
                w.f64(v);
            }
        }
        w.buf
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes);
        let version = r.header(CHECKPOINT_MAGIC, "model checkpoint")?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::Format(format!("unsupported checkpoint version {version}")));
        }
        let kind = EmbeddingKind::from_code(r.u8()?)
            .ok_or_else(|| Error::Format("unknown embedding kind in checkpoint".into()))?;
        let iterations = r.u64()?;
        let count = r.u32()? as usize;
        let mut tensors = Vec::with_capacity(count);
        for _ in 0..count {
            let name = r.short_str()?;
            let rank = r.u8()? as usize;
            let shape = (0..rank).map(|_| r.u32().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            let n: usize = shape.iter().product();
            let data = (0..n).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
            tensors.push(NamedTensor { name, shape, data });
        }
        r.finish()?;
        let mut take = TensorTake::new(tensors);
        let embed = EmbedHead::from_tensors("embed", &mut take)?;
        let wordness = WordnessHead::from_tensors("wordness", &mut take)?;
        take.finish()?;
        if embed.input_dim() != REFERENCE_DIM || embed.output_dim() != kind.dim() || wordness.input_dim() != WORDNESS_DIM {
            return Err(Error::Format("checkpoint layer sizes do not match the feature layout".into()));
        }
        Ok(Self { kind, embed, wordness, iterations })
    }

    /// Content hash of the checkpoint bytes.
    pub fn id(&self) -> String {
        short_hash(&self.to_bytes())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

pub(crate) fn stack(rows: impl Iterator<Item = Result<Vec<f64>>>, dim: usize) -> Result<Array2<f64>> {
    let mut flat = Vec::new();
    let mut n = 0;
    for r in rows {
        let r = r?;
        if r.len() != dim {
            return Err(Error::DimensionMismatch { expected: dim, got: r.len() });
        }
        flat.extend(r);
        n += 1;
    }
    Ok(Array2::from_shape_vec((n, dim), flat).expect("rows checked"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn checkpoint_round_trip_is_bit_exact() {
        let mut m = SpotModel::new(EmbeddingKind::Phoc, 8, 4, 9);
        m.iterations = 17;
        let bytes = m.to_bytes();
        let back = SpotModel::from_bytes(&bytes).unwrap();
        assert_eq!(back, m);
        assert_eq!(back.to_bytes(), bytes);
        assert_eq!(back.id(), m.id());
    }

    #[test]
    fn checkpoint_rejects_bad_headers() {
        let m = SpotModel::new(EmbeddingKind::Dctow, 4, 2, 1);
        let mut bytes = m.to_bytes();
        bytes[7] = 9;
        assert!(matches!(SpotModel::from_bytes(&bytes), Err(Error::Format(msg)) if msg.contains("version")));
        let mut bytes = m.to_bytes();
        bytes[0] = b'X';
        assert!(SpotModel::from_bytes(&bytes).is_err());
        let bytes = m.to_bytes();
        assert!(SpotModel::from_bytes(&bytes[..bytes.len() - 3]).is_err());
    }

    #[test]
    fn untrained_until_stepped() {
        assert!(!SpotModel::new(EmbeddingKind::Dctow, 4, 2, 1).is_trained());
    }
}
