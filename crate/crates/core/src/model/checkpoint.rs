//! Binary checkpoint layout.
//!
//! ```text
//! offset  size  field
//!      0     4  magic "HKGE"
//!      4     4  format version (u32 LE)
//!      8     4  dimension d (u32 LE)
//!     12     4  entity count |E| (u32 LE)
//!     16     4  relation count |R'| incl. reciprocals (u32 LE)
//!     20     1  curvature mode tag: 0 fixed, 1 global, 2 relation, 3 attention
//!     21     1  geometry tag: 0 hyperbolic, 1 euclidean
//!     22     1  flags: bit 0 inter-level, bit 1 intra-level
//!     23     1  reserved (0)
//!     24     …  f32 LE arrays in parameter-group order
//! ```

use std::io::{Read, Write};

use super::{CurvatureMode, GeometryKind, Model, ModelConfig, Params};
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"HKGE";
pub const CHECKPOINT_VERSION: u32 = 1;
const HEADER_LEN: usize = 24;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CheckpointHeader {
    pub version: u32,
    pub dim: u32,
    pub n_entities: u32,
    pub n_relations: u32,
    pub curvature_mode: CurvatureMode,
    pub geometry: GeometryKind,
    pub use_inter_level: bool,
    pub use_intra_level: bool,
}

fn mode_tag(m: CurvatureMode) -> u8 {
    match m {
        CurvatureMode::FixedOne => 0,
        CurvatureMode::Global => 1,
        CurvatureMode::PerRelation => 2,
        CurvatureMode::Attention => 3,
    }
}

fn geometry_tag(g: GeometryKind) -> u8 {
    match g {
        GeometryKind::Hyperbolic => 0,
        GeometryKind::Euclidean => 1,
    }
}

fn to_u32(v: usize, what: &str) -> Result<u32> {
    u32::try_from(v).map_err(|_| Error::Checkpoint(format!("{what} {v} does not fit in u32")))
}

impl CheckpointHeader {
    pub fn of(model: &Model) -> Result<Self> {
        let cfg = model.config();
        Ok(CheckpointHeader {
            version: CHECKPOINT_VERSION,
            dim: to_u32(cfg.dim, "dimension")?,
            n_entities: to_u32(model.n_entities(), "entity count")?,
            n_relations: to_u32(model.n_relations(), "relation count")?,
            curvature_mode: cfg.curvature_mode,
            geometry: cfg.geometry,
            use_inter_level: cfg.use_inter_level,
            use_intra_level: cfg.use_intra_level,
        })
    }

    pub fn to_bytes(&self) -> [u8; HEADER_LEN] {
        let mut b = [0u8; HEADER_LEN];
        b[0..4].copy_from_slice(&CHECKPOINT_MAGIC);
        b[4..8].copy_from_slice(&self.version.to_le_bytes());
        b[8..12].copy_from_slice(&self.dim.to_le_bytes());
        b[12..16].copy_from_slice(&self.n_entities.to_le_bytes());
        b[16..20].copy_from_slice(&self.n_relations.to_le_bytes());
        b[20] = mode_tag(self.curvature_mode);
        b[21] = geometry_tag(self.geometry);
        b[22] = u8::from(self.use_inter_level) | (u8::from(self.use_intra_level) << 1);
        b
    }

    pub fn from_bytes(b: &[u8; HEADER_LEN]) -> Result<Self> {
        if b[0..4] != CHECKPOINT_MAGIC {
            return Err(Error::Checkpoint("bad magic bytes".into()));
        }
        let word = |i: usize| u32::from_le_bytes([b[i], b[i + 1], b[i + 2], b[i + 3]]);
        let version = word(4);
        if version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!("unsupported format version {version}")));
        }
        let curvature_mode = match b[20] {
            0 => CurvatureMode::FixedOne,
            1 => CurvatureMode::Global,
            2 => CurvatureMode::PerRelation,
            3 => CurvatureMode::Attention,
            t => return Err(Error::Checkpoint(format!("unknown curvature mode tag {t}"))),
        };
        let geometry = match b[21] {
            0 => GeometryKind::Hyperbolic,
            1 => GeometryKind::Euclidean,
            t => return Err(Error::Checkpoint(format!("unknown geometry tag {t}"))),
        };
        if b[22] & !0b11 != 0 || b[23] != 0 {
            return Err(Error::Checkpoint("reserved header bits set".into()));
        }
        Ok(CheckpointHeader {
            version,
            dim: word(8),
            n_entities: word(12),
            n_relations: word(16),
            curvature_mode,
            geometry,
            use_inter_level: b[22] & 1 != 0,
            use_intra_level: b[22] & 2 != 0,
        })
    }

    pub fn read(r: &mut impl Read) -> Result<Self> {
        let mut b = [0u8; HEADER_LEN];
        r.read_exact(&mut b)
            .map_err(|e| Error::Checkpoint(format!("truncated header: {e}")))?;
        Self::from_bytes(&b)
    }

    /// Model configuration stored in the header; `init_scale` is not part of a
    /// checkpoint and takes its default.
    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            dim: self.dim as usize,
            curvature_mode: self.curvature_mode,
            geometry: self.geometry,
            use_inter_level: self.use_inter_level,
            use_intra_level: self.use_intra_level,
            ..ModelConfig::default()
        }
    }
}

impl Model {
    /// Serialises the model. Parameters are narrowed to `f32`.
    pub fn write_checkpoint(&self, w: &mut impl Write) -> Result<()> {
        let io = |e| Error::Checkpoint(format!("write failed: {e}"));
        w.write_all(&CheckpointHeader::of(self)?.to_bytes()).map_err(io)?;
        let mut buf = Vec::with_capacity(self.params().len() * 4);
        for (_, table) in self.params().iter() {
            for v in table.as_slice() {
                buf.extend_from_slice(&(*v as f32).to_le_bytes());
            }
        }
        w.write_all(&buf).map_err(io)?;
        Ok(())
    }

    pub fn read_checkpoint(r: &mut impl Read) -> Result<Self> {
        let header = CheckpointHeader::read(r)?;
        let config = header.model_config();
        config
            .validate()
            .map_err(|e| Error::Checkpoint(format!("invalid header: {e}")))?;
        let (n_e, n_r) = (header.n_entities as usize, header.n_relations as usize);
        let mut params = Params::zeros(&config, n_e, n_r);
        let mut body = Vec::new();
        r.read_to_end(&mut body)
            .map_err(|e| Error::Checkpoint(format!("read failed: {e}")))?;
        if body.len() != params.len() * 4 {
            return Err(Error::Checkpoint(format!(
                "body holds {} bytes, header implies {}",
                body.len(),
                params.len() * 4
            )));
        }
        let mut chunks = body.chunks_exact(4);
        for (_, table) in params.iter_mut() {
            for (v, c) in table.as_mut_slice().iter_mut().zip(&mut chunks) {
                *v = f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64;
            }
        }
        if !params.is_finite() {
            return Err(Error::Checkpoint("non-finite parameter values".into()));
        }
        Model::from_params(config, n_e, n_r, params)
    }
}
