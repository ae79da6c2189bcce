//! Exact flat vector index with Euclidean k-nearest-neighbor search.
//!
//! On-disk layout (little-endian):
//!
//! ```text
//! magic    "EXGIDX1\0"           8 bytes
//! kind     u8                    0 = visual, 1 = textual, 2 = event
//! dim      u32
//! count    u64
//! records  count times:
//!   u16 len + UTF-8 record id
//!   u16 len + UTF-8 source news id
//!   u32 len + UTF-8 payload
//!   dim x f32 vector
//! ```

use std::cmp::Ordering;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::embedding::EmbeddingVector;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"EXGIDX1\0";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Granularity {
    Visual,
    Textual,
    Event,
}

impl Granularity {
    pub const ALL: [Granularity; 3] = [Granularity::Visual, Granularity::Textual, Granularity::Event];

    pub fn code(self) -> u8 {
        match self {
            Granularity::Visual => 0,
            Granularity::Textual => 1,
            Granularity::Event => 2,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(Granularity::Visual),
            1 => Some(Granularity::Textual),
            2 => Some(Granularity::Event),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Granularity::Visual => "visual",
            Granularity::Textual => "textual",
            Granularity::Event => "event",
        }
    }
}

/// Input record for [`VectorIndex::build`].
#[derive(Debug, Clone, PartialEq)]
pub struct IndexRecord {
    pub record_id: String,
    pub vector: EmbeddingVector,
    pub source_news_id: String,
    pub payload: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct StoredMeta {
    record_id: String,
    source_news_id: String,
    payload: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hit {
    pub record_id: String,
    pub source_news_id: String,
    pub payload: String,
    pub distance: f64,
}

/// Borrowed view of one stored record.
#[derive(Debug, Clone, Copy)]
pub struct RecordView<'a> {
    pub position: usize,
    pub record_id: &'a str,
    pub source_news_id: &'a str,
    pub payload: &'a str,
    pub vector: &'a [f32],
}

/// Immutable flat store. Vectors are held as `f32`; distances are computed
/// and returned in `f64`.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorIndex {
    granularity: Granularity,
    dim: usize,
    meta: Vec<StoredMeta>,
    data: Vec<f32>,
}

fn check_len(field: &str, s: &str, max: usize) -> Result<()> {
    if s.len() > max {
        return Err(Error::InvalidInput(format!("{field} longer than {max} bytes")));
    }
    Ok(())
}

impl VectorIndex {
    /// Builds an index whose dimension is declared up front.
    pub fn build(granularity: Granularity, dim: usize, records: impl IntoIterator<Item = IndexRecord>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidInput("index dim must be positive".into()));
        }
        if dim > u32::MAX as usize {
            return Err(Error::InvalidInput("index dim exceeds u32".into()));
        }
        let mut meta = Vec::new();
        let mut data = Vec::new();
        for rec in records {
            if rec.vector.dim() != dim {
                return Err(Error::DimMismatch { expected: dim, got: rec.vector.dim() });
            }
            check_len("record id", &rec.record_id, u16::MAX as usize)?;
            check_len("source id", &rec.source_news_id, u16::MAX as usize)?;
            check_len("payload", &rec.payload, u32::MAX as usize)?;
            data.extend(rec.vector.values().iter().map(|&v| v as f32));
            meta.push(StoredMeta {
                record_id: rec.record_id,
                source_news_id: rec.source_news_id,
                payload: rec.payload,
            });
        }
        Ok(VectorIndex { granularity, dim, meta, data })
    }

    pub fn granularity(&self) -> Granularity {
        self.granularity
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.meta.len()
    }

    pub fn is_empty(&self) -> bool {
        self.meta.is_empty()
    }

    pub fn record(&self, position: usize) -> Option<RecordView<'_>> {
        let m = self.meta.get(position)?;
        Some(RecordView {
            position,
            record_id: &m.record_id,
            source_news_id: &m.source_news_id,
            payload: &m.payload,
            vector: &self.data[position * self.dim..(position + 1) * self.dim],
        })
    }

    pub fn records(&self) -> impl Iterator<Item = RecordView<'_>> {
        (0..self.len()).filter_map(move |i| self.record(i))
    }

    pub fn hit(&self, position: usize, distance: f64) -> Hit {
        let m = &self.meta[position];
        Hit {
            record_id: m.record_id.clone(),
            source_news_id: m.source_news_id.clone(),
            payload: m.payload.clone(),
            distance,
        }
    }

    fn check_query(&self, query: &EmbeddingVector) -> Result<()> {
        if query.dim() != self.dim {
            return Err(Error::DimMismatch { expected: self.dim, got: query.dim() });
        }
        Ok(())
    }

    /// Euclidean distance from `query` to every record, in insertion order.
    pub fn distances(&self, query: &EmbeddingVector) -> Result<Vec<f64>> {
        self.check_query(query)?;
        let q = query.values();
        Ok(self
            .data
            .chunks_exact(self.dim)
            .map(|row| {
                row.iter()
                    .zip(q)
                    .map(|(&r, &q)| {
                        let d = q - r as f64;
                        d * d
                    })
                    .sum::<f64>()
                    .sqrt()
            })
            .collect())
    }

    /// The `min(k, len)` nearest records, ascending by distance; equal
    /// distances keep insertion order.
    pub fn knn(&self, query: &EmbeddingVector, k: usize) -> Result<Vec<Hit>> {
        if k == 0 {
            return Err(Error::InvalidInput("k must be at least 1".into()));
        }
        let dists = self.distances(query)?;
        let mut order: Vec<(f64, usize)> = dists.into_iter().enumerate().map(|(i, d)| (d, i)).collect();
        if k < order.len() {
            order.select_nth_unstable_by(k - 1, by_distance_then_position);
            order.truncate(k);
        }
        order.sort_by(by_distance_then_position);
        Ok(order.into_iter().map(|(d, i)| self.hit(i, d)).collect())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(21 + self.data.len() * 4 + self.meta.len() * 32);
        out.extend_from_slice(MAGIC);
        out.push(self.granularity.code());
        out.extend_from_slice(&(self.dim as u32).to_le_bytes());
        out.extend_from_slice(&(self.meta.len() as u64).to_le_bytes());
        for (m, row) in self.meta.iter().zip(self.data.chunks_exact(self.dim)) {
            out.extend_from_slice(&(m.record_id.len() as u16).to_le_bytes());
            out.extend_from_slice(m.record_id.as_bytes());
            out.extend_from_slice(&(m.source_news_id.len() as u16).to_le_bytes());
            out.extend_from_slice(m.source_news_id.as_bytes());
            out.extend_from_slice(&(m.payload.len() as u32).to_le_bytes());
            out.extend_from_slice(m.payload.as_bytes());
            for v in row {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { buf: bytes, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(Error::CorruptIndex("bad magic".into()));
        }
        let code = r.u8()?;
        let granularity =
            Granularity::from_code(code).ok_or_else(|| Error::CorruptIndex(format!("unknown granularity {code}")))?;
        let dim = r.u32()? as usize;
        if dim == 0 {
            return Err(Error::CorruptIndex("zero dim".into()));
        }
        let count = r.u64()?;
        // Every record needs at least 8 length bytes plus its vector.
        let min_record = 8u64 + dim as u64 * 4;
        if count.saturating_mul(min_record) > (bytes.len() - r.pos) as u64 {
            return Err(Error::CorruptIndex(format!("count {count} exceeds file size")));
        }
        let count = count as usize;
        let mut meta = Vec::with_capacity(count);
        let mut data = Vec::with_capacity(count * dim);
        for _ in 0..count {
            let len = r.u16()? as usize;
            let record_id = r.string(len)?;
            let len = r.u16()? as usize;
            let source_news_id = r.string(len)?;
            let len = r.u32()? as usize;
            let payload = r.string(len)?;
            for _ in 0..dim {
                let v = f32::from_le_bytes(r.take(4)?.try_into().expect("4 bytes"));
                if !v.is_finite() {
                    return Err(Error::CorruptIndex("non-finite vector component".into()));
                }
                data.push(v);
            }
            meta.push(StoredMeta { record_id, source_news_id, payload });
        }
        if r.pos != bytes.len() {
            return Err(Error::CorruptIndex(format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        Ok(VectorIndex { granularity, dim, meta, data })
    }

    /// Writes the index atomically; returns the number of bytes written.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<u64> {
        let path = path.as_ref();
        let bytes = self.to_bytes();
        let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
        let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(dir, e))?;
        tmp.write_all(&bytes).map_err(|e| Error::io(path, e))?;
        tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
        Ok(bytes.len() as u64)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        VectorIndex::from_bytes(&bytes)
    }
}

fn by_distance_then_position(a: &(f64, usize), b: &(f64, usize)) -> Ordering {
    a.0.total_cmp(&b.0).then(a.1.cmp(&b.1))
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| Error::CorruptIndex(format!("truncated at byte {}", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().expect("2 bytes")))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn string(&mut self, len: usize) -> Result<String> {
        let bytes = self.take(len)?;
        String::from_utf8(bytes.to_vec()).map_err(|_| Error::CorruptIndex("invalid UTF-8".into()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vec_of(values: &[f64]) -> EmbeddingVector {
        EmbeddingVector::new(values.to_vec()).unwrap()
    }

    fn rec(id: &str, src: &str, values: &[f64]) -> IndexRecord {
        IndexRecord {
            record_id: id.into(),
            vector: vec_of(values),
            source_news_id: src.into(),
            payload: format!("payload {id}"),
        }
    }

    fn small() -> VectorIndex {
        VectorIndex::build(
            Granularity::Textual,
            2,
            vec![rec("a", "n1", &[0.0, 0.0]), rec("b", "n2", &[3.0, 4.0]), rec("c", "n3", &[1.0, 0.0])],
        )
        .unwrap()
    }

    #[test]
    fn build_counts_and_dims() {
        assert_eq!(small().len(), 3);
        let mixed = VectorIndex::build(Granularity::Visual, 2, vec![rec("a", "n", &[0.0, 1.0]), rec("b", "n", &[1.0])]);
        assert!(matches!(mixed, Err(Error::DimMismatch { expected: 2, got: 1 })));
    }

    #[test]
    fn exact_match_first_and_k_overflow() {
        let idx = small();
        let hits = idx.knn(&vec_of(&[3.0, 4.0]), 1).unwrap();
        assert_eq!(hits[0].record_id, "b");
        assert_eq!(hits[0].distance, 0.0);
        let all = idx.knn(&vec_of(&[0.0, 0.0]), 10).unwrap();
        let ids: Vec<_> = all.iter().map(|h| h.record_id.as_str()).collect();
        assert_eq!(ids, ["a", "c", "b"]);
        assert_eq!(all[2].distance, 5.0);
    }

    #[test]
    fn ties_keep_insertion_order() {
        let idx = VectorIndex::build(
            Granularity::Event,
            1,
            vec![rec("x", "1", &[2.0]), rec("y", "2", &[-2.0]), rec("z", "3", &[2.0]), rec("w", "4", &[0.0])],
        )
        .unwrap();
        let ids: Vec<_> = idx.knn(&vec_of(&[0.0]), 3).unwrap().into_iter().map(|h| h.record_id).collect();
        assert_eq!(ids, ["w", "x", "y"]);
    }

    #[test]
    fn query_dim_checked() {
        assert!(matches!(small().knn(&vec_of(&[1.0]), 1), Err(Error::DimMismatch { .. })));
        assert!(small().knn(&vec_of(&[1.0, 1.0]), 0).is_err());
    }

    #[test]
    fn bytes_round_trip_and_corruption() {
        let idx = small();
        let bytes = idx.to_bytes();
        assert_eq!(&bytes[..8], MAGIC);
        assert_eq!(VectorIndex::from_bytes(&bytes).unwrap(), idx);

        for cut in [0, 7, 8, 20, bytes.len() - 1] {
            assert!(matches!(VectorIndex::from_bytes(&bytes[..cut]), Err(Error::CorruptIndex(_))), "cut {cut}");
        }
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(VectorIndex::from_bytes(&bad), Err(Error::CorruptIndex(_))));
        let mut bad_kind = bytes.clone();
        bad_kind[8] = 9;
        assert!(matches!(VectorIndex::from_bytes(&bad_kind), Err(Error::CorruptIndex(_))));
        let mut trailing = bytes;
        trailing.push(0);
        assert!(matches!(VectorIndex::from_bytes(&trailing), Err(Error::CorruptIndex(_))));
    }

    #[test]
    fn empty_index_round_trip() {
        let idx = VectorIndex::build(Granularity::Visual, 64, vec![]).unwrap();
        let back = VectorIndex::from_bytes(&idx.to_bytes()).unwrap();
        assert_eq!(back, idx);
        assert!(back.is_empty());
        assert!(back.knn(&EmbeddingVector::new(vec![0.0; 64]).unwrap(), 2).unwrap().is_empty());
    }
}
