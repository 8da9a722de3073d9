//! Binary checkpoint container.
//!
//! Layout: `MBRX`, version byte, then little-endian `u32` kind tag, `u32`
//! dim, `u32` layers, `u64` users, `u64` items, the tables as `f32` rows,
//! and an 8-byte checksum equal to the wrapping sum of all earlier bytes.
//!
//! Two-expert checkpoints hold eight tables: global users, global items,
//! local users and local items of the visited expert, then the same four of
//! the unvisited expert. Baselines hold their user and item tables.

use std::fs;
use std::path::Path;

use ndarray::Array2;

use crate::baselines::{BaselineKind, BaselineParams};
use crate::config::ModelKind;
use crate::encoder::EmbeddingPair;
use crate::error::{Error, Result};
use crate::expert::{ExpertParams, Lambdas, Role};

pub const MAGIC: &[u8; 4] = b"MBRX";
pub const VERSION: u8 = 1;
const HEADER_LEN: usize = 4 + 1 + 4 * 3 + 8 * 2;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub kind: ModelKind,
    pub dim: usize,
    pub layers: usize,
    pub num_users: usize,
    pub num_items: usize,
    /// Tables in container order, alternating user and item tables.
    pub tables: Vec<Array2<f64>>,
}

fn table_count(kind: ModelKind) -> usize {
    if kind.is_member() {
        8
    } else {
        2
    }
}

fn checksum(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0u64, |acc, &b| acc.wrapping_add(b as u64))
}

fn bad(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

impl Checkpoint {
    pub fn from_member(kind: ModelKind, layers: usize, visited: &ExpertParams, unvisited: &ExpertParams) -> Result<Self> {
        if !kind.is_member() {
            return Err(bad(format!("{} is not a two-expert kind", kind.name())));
        }
        let tables: Vec<Array2<f64>> = visited
            .tables()
            .into_iter()
            .chain(unvisited.tables())
            .cloned()
            .collect();
        let (num_users, dim) = tables[0].dim();
        Ok(Self {
            kind,
            dim,
            layers,
            num_users,
            num_items: tables[1].nrows(),
            tables,
        })
    }

    pub fn from_baseline(params: &BaselineParams) -> Self {
        let kind = match params.kind {
            BaselineKind::MfBpr => ModelKind::MfBpr,
            BaselineKind::LgcnBuy => ModelKind::LgcnBuy,
            BaselineKind::LgcnGlobal => ModelKind::LgcnGlobal,
        };
        Self {
            kind,
            dim: params.init.dim(),
            layers: params.layers,
            num_users: params.init.num_users(),
            num_items: params.init.num_items(),
            tables: vec![params.init.users.clone(), params.init.items.clone()],
        }
    }

    /// Rebuilds both experts; lambdas are not part of the container.
    pub fn to_member(&self, lambdas: Lambdas) -> Result<(ExpertParams, ExpertParams)> {
        if !self.kind.is_member() {
            return Err(bad(format!("checkpoint holds a {} model", self.kind.name())));
        }
        let t = &self.tables;
        let pair = |a: usize| EmbeddingPair::new(t[a].clone(), t[a + 1].clone());
        let visited = ExpertParams::new(pair(0)?, pair(2)?, lambdas.visited, Role::Visited)?;
        let unvisited = ExpertParams::new(pair(4)?, pair(6)?, lambdas.unvisited, Role::Unvisited)?;
        Ok((visited, unvisited))
    }

    pub fn to_baseline(&self) -> Result<BaselineParams> {
        let kind = match self.kind {
            ModelKind::MfBpr => BaselineKind::MfBpr,
            ModelKind::LgcnBuy => BaselineKind::LgcnBuy,
            ModelKind::LgcnGlobal => BaselineKind::LgcnGlobal,
            k => return Err(bad(format!("checkpoint holds a {} model", k.name()))),
        };
        Ok(BaselineParams {
            kind,
            init: EmbeddingPair::new(self.tables[0].clone(), self.tables[1].clone())?,
            layers: self.layers,
        })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let values: usize = self.tables.iter().map(|t| t.len()).sum();
        let mut out = Vec::with_capacity(HEADER_LEN + 4 * values + 8);
        out.extend_from_slice(MAGIC);
        out.push(VERSION);
        out.extend_from_slice(&self.kind.tag().to_le_bytes());
        out.extend_from_slice(&(self.dim as u32).to_le_bytes());
        out.extend_from_slice(&(self.layers as u32).to_le_bytes());
        out.extend_from_slice(&(self.num_users as u64).to_le_bytes());
        out.extend_from_slice(&(self.num_items as u64).to_le_bytes());
        for t in &self.tables {
            for &v in t.iter() {
                out.extend_from_slice(&(v as f32).to_le_bytes());
            }
        }
        let sum = checksum(&out);
        out.extend_from_slice(&sum.to_le_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < HEADER_LEN + 8 {
            return Err(bad("file too short"));
        }
        if &bytes[..4] != MAGIC {
            return Err(bad("bad magic"));
        }
        if bytes[4] != VERSION {
            return Err(bad(format!("unsupported version {}", bytes[4])));
        }
        let (body, tail) = bytes.split_at(bytes.len() - 8);
        let stored = u64::from_le_bytes(tail.try_into().unwrap());
        if checksum(body) != stored {
            return Err(bad("checksum mismatch"));
        }
        let u32_at = |o: usize| u32::from_le_bytes(body[o..o + 4].try_into().unwrap());
        let u64_at = |o: usize| u64::from_le_bytes(body[o..o + 8].try_into().unwrap());
        let tag = u32_at(5);
        let kind = ModelKind::from_tag(tag).ok_or_else(|| bad(format!("unknown kind tag {tag}")))?;
        let dim = u32_at(9) as usize;
        let layers = u32_at(13) as usize;
        let num_users = u64_at(17) as usize;
        let num_items = u64_at(25) as usize;

        let shapes: Vec<(usize, usize)> = (0..table_count(kind))
            .map(|k| (if k % 2 == 0 { num_users } else { num_items }, dim))
            .collect();
        let expected: usize = shapes.iter().map(|(r, c)| r * c).sum();
        let floats = &body[HEADER_LEN..];
        if floats.len() != 4 * expected {
            return Err(bad(format!("expected {expected} values, found {} bytes", floats.len())));
        }
        let mut values = floats
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64);
        let tables = shapes
            .into_iter()
            .map(|(r, c)| Array2::from_shape_simple_fn((r, c), || values.next().unwrap()))
            .collect();
        Ok(Self {
            kind,
            dim,
            layers,
            num_users,
            num_items,
            tables,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn mf() -> Checkpoint {
        Checkpoint::from_baseline(&BaselineParams {
            kind: BaselineKind::MfBpr,
            init: EmbeddingPair::new(array![[0.5, -1.0]], array![[0.25, 2.0], [1.0, 3.0]]).unwrap(),
            layers: 0,
        })
    }

    #[test]
    fn round_trip() {
        let c = mf();
        let bytes = c.to_bytes();
        assert_eq!(&bytes[..5], b"MBRX\x01");
        assert_eq!(bytes.len(), HEADER_LEN + 4 * 6 + 8);
        assert_eq!(Checkpoint::from_bytes(&bytes).unwrap(), c);
    }

    #[test]
    fn corruption_is_detected() {
        let mut bytes = mf().to_bytes();
        bytes[HEADER_LEN] ^= 1;
        assert!(matches!(Checkpoint::from_bytes(&bytes), Err(Error::Checkpoint(_))));
        assert!(Checkpoint::from_bytes(b"MBRX").is_err());
    }

    #[test]
    fn kind_mismatch() {
        assert!(mf().to_member(Lambdas::default()).is_err());
        assert_eq!(mf().to_baseline().unwrap().kind, BaselineKind::MfBpr);
    }
}
