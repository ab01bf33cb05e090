//! Binary dataset container, little-endian throughout:
//!
//! ```text
//! header : b"DFPT" | version u32 | record count u64
//! record : id u64 | category u16
//!          | point count u32 | point count × (x f32, y f32, z f32)
//!          | view count u8
//!          | view count × (width u16 | height u16 | width·height × f32)
//! ```

use std::io::Write;

use crate::error::{Error, Result};
use crate::numerics::rng::splitmix64;
use crate::{ImageTensor, PointCloud};

pub const MAGIC: &[u8; 4] = b"DFPT";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetRecord {
    pub id: u64,
    pub category: u16,
    pub cloud: PointCloud<f32>,
    pub views: Vec<ImageTensor<f32>>,
}

/// Train/val/test assignment by a hash of the record id (70/10/20).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Val,
    Test,
    All,
}

impl Split {
    pub fn of(id: u64) -> Split {
        let mut x = id;
        match splitmix64(&mut x) % 100 {
            0..70 => Split::Train,
            70..80 => Split::Val,
            _ => Split::Test,
        }
    }

    pub fn contains(self, id: u64) -> bool {
        self == Split::All || Split::of(id) == self
    }

    pub fn parse(s: &str) -> Option<Split> {
        match s {
            "train" => Some(Split::Train),
            "val" => Some(Split::Val),
            "test" => Some(Split::Test),
            "all" => Some(Split::All),
            _ => None,
        }
    }
}

pub fn encode_dataset(records: &[DatasetRecord]) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(records.len() as u64).to_le_bytes());
    for r in records {
        out.extend_from_slice(&r.id.to_le_bytes());
        out.extend_from_slice(&r.category.to_le_bytes());
        let n = u32::try_from(r.cloud.len()).map_err(|_| crate::error::contract("cloud too large"))?;
        out.extend_from_slice(&n.to_le_bytes());
        for v in r.cloud.flat() {
            out.extend_from_slice(&v.to_le_bytes());
        }
        let nv = u8::try_from(r.views.len()).map_err(|_| crate::error::contract("more than 255 views"))?;
        out.push(nv);
        for img in &r.views {
            if img.channels != 1 {
                return Err(crate::error::contract("container stores single-channel views only"));
            }
            let w = u16::try_from(img.width).map_err(|_| crate::error::contract("view too wide"))?;
            let h = u16::try_from(img.height).map_err(|_| crate::error::contract("view too tall"))?;
            out.extend_from_slice(&w.to_le_bytes());
            out.extend_from_slice(&h.to_le_bytes());
            for p in &img.pixels {
                out.extend_from_slice(&p.to_le_bytes());
            }
        }
    }
    Ok(out)
}

pub fn write_dataset(records: &[DatasetRecord], mut w: impl Write) -> Result<()> {
    w.write_all(&encode_dataset(records)?)?;
    w.flush()?;
    Ok(())
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
    record: Option<usize>,
}

impl<'a> Cursor<'a> {
    fn err(&self, msg: impl Into<String>) -> Error {
        Error::Format {
            offset: self.pos as u64,
            record: self.record,
            msg: msg.into(),
        }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(self.err(format!(
                "unexpected end of file (needed {n} bytes, {} left)",
                self.buf.len() - self.pos
            )));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N]> {
        Ok(self.take(N)?.try_into().unwrap())
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.array()?))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.array()?))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.array()?))
    }

    fn f32s(&mut self, n: usize) -> Result<Vec<f32>> {
        let bytes = self.take(n.checked_mul(4).ok_or_else(|| self.err("length overflow"))?)?;
        Ok(bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
}

/// Parses a complete container; any error aborts without returning records.
pub fn decode_dataset(buf: &[u8]) -> Result<Vec<DatasetRecord>> {
    let mut c = Cursor {
        buf,
        pos: 0,
        record: None,
    };
    let magic = c.array::<4>()?;
    if &magic != MAGIC {
        c.pos = 0;
        return Err(c.err(format!("bad magic {magic:?}, expected \"DFPT\"")));
    }
    let version = c.u32()?;
    if version != VERSION {
        c.pos -= 4;
        return Err(c.err(format!("unsupported version {version}")));
    }
    let count = c.u64()?;
    let mut records = Vec::new();
    for i in 0..count as usize {
        c.record = Some(i);
        let id = c.u64()?;
        let category = c.u16()?;
        let n = c.u32()? as usize;
        let start = c.pos;
        let flat = c.f32s(n * 3)?;
        let cloud = PointCloud::from_flat(&flat).map_err(|e| Error::Format {
            offset: start as u64,
            record: Some(i),
            msg: format!("invalid cloud: {e}"),
        })?;
        let nv = c.u8()? as usize;
        let mut views = Vec::with_capacity(nv);
        for _ in 0..nv {
            let w = c.u16()? as usize;
            let h = c.u16()? as usize;
            let start = c.pos;
            let px = c.f32s(w * h)?;
            let img = ImageTensor::new(h, w, 1, px).map_err(|e| Error::Format {
                offset: start as u64,
                record: Some(i),
                msg: format!("invalid view: {e}"),
            })?;
            views.push(img);
        }
        records.push(DatasetRecord {
            id,
            category,
            cloud,
            views,
        });
    }
    c.record = None;
    if c.pos != buf.len() {
        return Err(c.err(format!("{} trailing bytes", buf.len() - c.pos)));
    }
    Ok(records)
}

pub fn read_dataset(path: impl AsRef<std::path::Path>) -> Result<Vec<DatasetRecord>> {
    decode_dataset(&std::fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_records() -> Vec<DatasetRecord> {
        (0..3)
            .map(|i| DatasetRecord {
                id: 10 + i,
                category: i as u16,
                cloud: PointCloud::new(vec![[0.1, -0.2, 0.3 * i as f32], [1.0 / 3.0, 0.0, -0.0]]).unwrap(),
                views: vec![ImageTensor::new(2, 3, 1, vec![0.0, 0.25, 1.0, 0.5, 0.125, 0.0]).unwrap(); 2],
            })
            .collect()
    }

    #[test]
    fn round_trip() {
        let recs = sample_records();
        let bytes = encode_dataset(&recs).unwrap();
        let back = decode_dataset(&bytes).unwrap();
        assert_eq!(back, recs);
        assert_eq!(encode_dataset(&back).unwrap(), bytes);
    }

    #[test]
    fn wrong_magic() {
        let mut bytes = encode_dataset(&sample_records()).unwrap();
        bytes[0] = b'X';
        match decode_dataset(&bytes) {
            Err(Error::Format {
                offset: 0,
                record: None,
                ..
            }) => {}
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn truncation_names_record() {
        let recs = sample_records();
        let full = encode_dataset(&recs).unwrap();
        let first_two = encode_dataset(&recs[..2]).unwrap();
        // Header count still says 3; cut in the middle of the third record.
        let cut = first_two.len() + 13;
        match decode_dataset(&full[..cut]) {
            Err(Error::Format {
                record: Some(2),
                offset,
                ..
            }) => assert!(offset as usize <= cut),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn split_fractions_roughly_70_10_20() {
        let mut counts = [0usize; 3];
        for id in 0..10_000 {
            match Split::of(id) {
                Split::Train => counts[0] += 1,
                Split::Val => counts[1] += 1,
                _ => counts[2] += 1,
            }
        }
        assert!((6700..7300).contains(&counts[0]), "{counts:?}");
        assert!((800..1200).contains(&counts[1]), "{counts:?}");
        assert!((1700..2300).contains(&counts[2]), "{counts:?}");
    }
}
