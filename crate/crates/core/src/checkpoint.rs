//! Binary model checkpoints.
//!
//! Layout, all integers and floats little-endian:
//!
//! ```text
//! magic            8 bytes  "NAVIPCKP"
//! version          u32      1
//! num_users        u64
//! num_items        u64
//! dim              u64
//! depth            u64
//! layer coeffs     (depth + 1) x f64
//! strategy         u8       0 mean, 1 propensity, 2 navip
//! normalization    u8       0 symmetric, 1 random-walk
//! seed             u64
//! embeddings       (num_users + num_items) x dim x f64, row-major
//! ```

use std::io::{Read, Write};

use crate::aggregation::{Normalization, Strategy};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::model::{validate_coeffs, EmbeddingModel};
use crate::scalar::Scalar;

const MAGIC: &[u8; 8] = b"NAVIPCKP";
const VERSION: u32 = 1;

/// Training provenance stored next to the weights.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CheckpointMeta {
    pub strategy: Strategy,
    pub normalization: Normalization,
    pub seed: u64,
}

pub fn write_checkpoint<T: Scalar, W: Write>(
    model: &EmbeddingModel<T>,
    meta: &CheckpointMeta,
    mut out: W,
) -> Result<()> {
    let mut buf = Vec::with_capacity(64 + model.embeddings().as_slice().len() * 8);
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    for v in [model.num_users(), model.num_items(), model.dim(), model.depth()] {
        buf.extend_from_slice(&(v as u64).to_le_bytes());
    }
    for &a in model.layer_coeffs() {
        buf.extend_from_slice(&a.as_f64().to_le_bytes());
    }
    buf.push(meta.strategy.to_byte());
    buf.push(meta.normalization.to_byte());
    buf.extend_from_slice(&meta.seed.to_le_bytes());
    for &x in model.embeddings().as_slice() {
        buf.extend_from_slice(&x.as_f64().to_le_bytes());
    }
    out.write_all(&buf)?;
    out.flush()?;
    Ok(())
}

pub fn read_checkpoint<T: Scalar, R: Read>(mut input: R) -> Result<(EmbeddingModel<T>, CheckpointMeta)> {
    let mut magic = [0u8; 8];
    input.read_exact(&mut magic).map_err(truncated)?;
    if &magic != MAGIC {
        return Err(Error::Checkpoint("bad magic; not a checkpoint file".into()));
    }
    let version = u32::from_le_bytes(read_array(&mut input)?);
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let num_users = read_u64(&mut input)? as usize;
    let num_items = read_u64(&mut input)? as usize;
    let dim = read_u64(&mut input)? as usize;
    let depth = read_u64(&mut input)? as usize;
    let coeffs = (0..=depth)
        .map(|_| read_f64(&mut input).map(T::lit))
        .collect::<Result<Vec<T>>>()?;
    validate_coeffs(&coeffs)?;
    let [s, n] = read_array::<2, _>(&mut input)?;
    let strategy = Strategy::from_byte(s).ok_or_else(|| Error::Checkpoint(format!("bad strategy tag {s}")))?;
    let normalization =
        Normalization::from_byte(n).ok_or_else(|| Error::Checkpoint(format!("bad normalization tag {n}")))?;
    let seed = read_u64(&mut input)?;

    let len = (num_users + num_items)
        .checked_mul(dim)
        .ok_or_else(|| Error::Checkpoint("shape overflows".into()))?;
    let mut raw = Vec::new();
    input.read_to_end(&mut raw)?;
    if raw.len() != len * 8 {
        return Err(Error::Checkpoint(format!(
            "expected {} bytes of embeddings, found {}",
            len * 8,
            raw.len()
        )));
    }
    let data = raw
        .chunks_exact(8)
        .map(|c| T::lit(f64::from_le_bytes(c.try_into().unwrap())))
        .collect();
    let embeddings = Matrix::from_vec(num_users + num_items, dim, data)?;
    let model = EmbeddingModel::from_embeddings(num_users, num_items, embeddings)?.with_layer_coeffs(coeffs)?;
    Ok((
        model,
        CheckpointMeta {
            strategy,
            normalization,
            seed,
        },
    ))
}

fn truncated(e: std::io::Error) -> Error {
    if e.kind() == std::io::ErrorKind::UnexpectedEof {
        Error::Checkpoint("truncated header".into())
    } else {
        Error::Io(e)
    }
}

fn read_array<const K: usize, R: Read>(input: &mut R) -> Result<[u8; K]> {
    let mut b = [0u8; K];
    input.read_exact(&mut b).map_err(truncated)?;
    Ok(b)
}

fn read_u64<R: Read>(input: &mut R) -> Result<u64> {
    Ok(u64::from_le_bytes(read_array(input)?))
}

fn read_f64<R: Read>(input: &mut R) -> Result<f64> {
    Ok(f64::from_le_bytes(read_array(input)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use crate::aggregation::Strategy;

    fn meta() -> CheckpointMeta {
        CheckpointMeta {
            strategy: Strategy::Navip,
            normalization: Normalization::RandomWalk,
            seed: 42,
        }
    }

    #[test]
    fn header_layout() {
        let m = EmbeddingModel::<f64>::init(2, 3, 4, 1).unwrap().with_depth(2);
        let mut buf = Vec::new();
        write_checkpoint(&m, &meta(), &mut buf).unwrap();
        assert_eq!(&buf[..8], b"NAVIPCKP");
        assert_eq!(u64::from_le_bytes(buf[12..20].try_into().unwrap()), 2);
        assert_eq!(u64::from_le_bytes(buf[36..44].try_into().unwrap()), 2);
        assert_eq!(buf.len(), 8 + 4 + 32 + 3 * 8 + 2 + 8 + 5 * 4 * 8);
    }

    #[test]
    fn rejects_corruption() {
        let m = EmbeddingModel::<f64>::init(2, 3, 4, 1).unwrap();
        let mut buf = Vec::new();
        write_checkpoint(&m, &meta(), &mut buf).unwrap();
        assert!(read_checkpoint::<f64, _>(&buf[..buf.len() - 1]).is_err());
        assert!(read_checkpoint::<f64, _>(&buf[..20]).is_err());
        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(read_checkpoint::<f64, _>(bad.as_slice()).is_err());
    }

    #[test]
    fn f32_models_round_trip() {
        let m = EmbeddingModel::<f32>::init(3, 2, 5, 9).unwrap();
        let mut buf = Vec::new();
        write_checkpoint(&m, &meta(), &mut buf).unwrap();
        let (back, _) = read_checkpoint::<f32, _>(buf.as_slice()).unwrap();
        assert_eq!(back, m);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn round_trip_is_bit_exact(m in 1usize..6, n in 1usize..6, d in 1usize..5, k in 0usize..4, seed in any::<u64>()) {
            let model = EmbeddingModel::<f64>::init(m, n, d, seed).unwrap().with_depth(k);
            let meta = CheckpointMeta { strategy: Strategy::Propensity, normalization: Normalization::Symmetric, seed };
            let mut buf = Vec::new();
            write_checkpoint(&model, &meta, &mut buf).unwrap();
            let (back, back_meta) = read_checkpoint::<f64, _>(buf.as_slice()).unwrap();
            prop_assert_eq!(back_meta, meta);
            let bits = |x: &EmbeddingModel<f64>| x.embeddings().as_slice().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
            prop_assert_eq!(bits(&back), bits(&model));
            prop_assert_eq!(back.layer_coeffs(), model.layer_coeffs());
        }
    }
}
