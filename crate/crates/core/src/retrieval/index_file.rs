//! Binary index persistence.
//!
//! Layout (little-endian): magic, `u16` version, `u8` embedding kind, `u32`
//! descriptor dim, `u32` page count, model id and config hash (`u16`-length
//! strings), then per page its id (`u32`-length string), `u32` proposal
//! count and for each proposal four `f64` box values `(xc, yc, w, h)`, `f64`
//! wordness, `u8` source and `dim` descriptor `f32`s.

use std::path::Path;

use super::{IndexMeta, PageProposals, Proposal, ProposalSource, SpotIndex};
use crate::binio::{Reader, Writer};
use crate::embeddings::EmbeddingKind;
use crate::error::{Error, Result};
use crate::geometry::BBox;

pub const INDEX_MAGIC: &[u8; 7] = b"CFNIDX1";
pub const INDEX_VERSION: u16 = 1;

impl SpotIndex {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::default();
        w.bytes(INDEX_MAGIC);
        w.u16(INDEX_VERSION);
        w.u8(self.kind.code());
        w.u32(self.dim as u32);
        w.u32(self.pages.len() as u32);
        w.short_str(&self.meta.model_id);
        w.short_str(&self.meta.config_hash);
        for page in &self.pages {
            w.long_str(&page.page_id);
            w.u32(page.proposals.len() as u32);
            for p in &page.proposals {
                for v in [p.bbox.xc, p.bbox.yc, p.bbox.w, p.bbox.h, p.wordness] {
                    w.f64(v);
                }
                w.u8(match p.source {
                    ProposalSource::Dtp => 0,
                    ProposalSource::Rpn => 1,
                });
                p.descriptor.iter().for_each(|&v| w.f32(v));
            }
        }
        w.buf
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes);
        let version = r.header(INDEX_MAGIC, "index")?;
        if version != INDEX_VERSION {
            return Err(Error::Format(format!("unsupported index version {version}")));
        }
        let code = r.u8()?;
        let kind = EmbeddingKind::from_code(code)
            .ok_or_else(|| Error::Format(format!("unknown embedding kind {code}")))?;
        let dim = r.u32()? as usize;
        if dim != kind.dim() {
            return Err(Error::Format(format!("descriptor dim {dim} does not match {kind}")));
        }
        let n_pages = r.u32()? as usize;
        let meta = IndexMeta { model_id: r.short_str()?, config_hash: r.short_str()? };
        let mut pages = Vec::with_capacity(n_pages.min(1 << 16));
        for _ in 0..n_pages {
            let page_id = r.long_str()?;
            let n = r.u32()? as usize;
            let mut proposals = Vec::with_capacity(n.min(1 << 16));
            for _ in 0..n {
                let bbox = BBox::new(r.f64()?, r.f64()?, r.f64()?, r.f64()?);
                let wordness = r.f64()?;
                let source = match r.u8()? {
                    0 => ProposalSource::Dtp,
                    1 => ProposalSource::Rpn,
                    s => return Err(Error::Format(format!("unknown proposal source {s}"))),
                };
                let descriptor = (0..dim).map(|_| r.f32()).collect::<Result<Vec<_>>>()?;
                proposals.push(Proposal { bbox, wordness, source, descriptor });
            }
            pages.push(PageProposals { page_id, proposals });
        }
        r.finish()?;
        Ok(SpotIndex { kind, dim, pages, meta })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}
