//! PRC1 on-disk container for compressed lineage tables.
//!
//! Little-endian throughout. Layout:
//!
//! ```text
//! header:
//!   magic            4 bytes  "PRC1"
//!   version          u16      currently 1
//!   direction        u8       0 = backward, 1 = forward
//!   flags            u8       bit 0: deflate requested for blocks
//!   out_attrs (l)    u16
//!   in_attrs  (m)    u16
//!   out_shape        l x u64
//!   in_shape         m x u64
//!   op id            u16 length + utf-8 bytes
//!   out array id     u16 length + utf-8 bytes
//!   in array id      u16 length + utf-8 bytes
//!   row_count        u64
//! column blocks, fixed order:
//!   anchor j:   lo block, hi block           (j = 0..anchor_dim)
//!   free i:     abs lo, abs hi,
//!               rel(i,j) lo, rel(i,j) hi     (j = 0..anchor_dim)
//!   each block: codec u8 (0 plain, 1 deflate), payload_len u64, payload
//!   plain payload: validity bitmap ceil(rows/8) bytes (LSB first),
//!                  then one i64 per set bit
//! footer:
//!   row_count        u64      must match header
//!   checksum         32 bytes sha-256 of everything before the footer
//! ```
//!
//! Validity conventions: a `lo` bit marks the cell populated; the `hi`
//! bit is set only when the interval is wider than one, otherwise `hi`
//! equals `lo` (width-1 intervals store no upper bound). Anchor `lo`
//! columns are always fully populated.
//!
//! A block is deflate-compressed only when that actually shrinks it, so
//! the per-block codec byte may disagree with the requested flag.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::lineage::IndexRange;
use crate::provrc::{CompressedRow, CompressedTable, Direction};

pub const MAGIC: [u8; 4] = *b"PRC1";
pub const VERSION: u16 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Codec {
    Plain,
    #[default]
    Deflate,
}

#[derive(Debug, Error)]
pub enum Prc1Error {
    #[error("not a PRC1 file")]
    BadMagic,
    #[error("unsupported PRC1 version {0}")]
    BadVersion(u16),
    #[error("file truncated at byte {0}")]
    Truncated(usize),
    #[error("checksum mismatch: file is corrupt")]
    Checksum,
    #[error("malformed table: {0}")]
    Malformed(String),
    #[error("deflate: {0}")]
    Deflate(#[from] std::io::Error),
}

struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }
    fn u16(&mut self, v: u16) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn str(&mut self, s: &str) {
        self.u16(s.len() as u16);
        self.buf.extend_from_slice(s.as_bytes());
    }
}

/// Serialize a table. The byte output is deterministic for a given table
/// and codec.
pub fn encode(table: &CompressedTable, codec: Codec) -> Vec<u8> {
    let mut w = Writer { buf: Vec::new() };
    w.buf.extend_from_slice(&MAGIC);
    w.u16(VERSION);
    w.u8(match table.direction {
        Direction::Backward => 0,
        Direction::Forward => 1,
    });
    w.u8(match codec {
        Codec::Plain => 0,
        Codec::Deflate => 1,
    });
    w.u16(table.out_dim() as u16);
    w.u16(table.in_dim() as u16);
    for &d in &table.out_shape {
        w.u64(d);
    }
    for &d in &table.in_shape {
        w.u64(d);
    }
    w.str(&table.op);
    w.str(&table.out_array);
    w.str(&table.in_array);
    let rows = table.rows.len() as u64;
    w.u64(rows);

    let anchors = table.anchor_dim();
    let free = table.free_dim();
    let mut write_block = |w: &mut Writer, cells: &mut dyn Iterator<Item = Option<i64>>| {
        let mut bitmap = vec![0u8; table.rows.len().div_ceil(8)];
        let mut values = Vec::new();
        for (idx, cell) in cells.enumerate() {
            if let Some(v) = cell {
                bitmap[idx / 8] |= 1 << (idx % 8);
                values.extend_from_slice(&v.to_le_bytes());
            }
        }
        let mut plain = bitmap;
        plain.extend_from_slice(&values);
        let (tag, payload) = match codec {
            Codec::Plain => (0u8, plain),
            Codec::Deflate => {
                let mut enc =
                    flate2::write::DeflateEncoder::new(Vec::new(), flate2::Compression::default());
                enc.write_all(&plain).expect("in-memory write");
                let packed = enc.finish().expect("in-memory finish");
                if packed.len() < plain.len() {
                    (1u8, packed)
                } else {
                    (0u8, plain)
                }
            }
        };
        w.u8(tag);
        w.u64(payload.len() as u64);
        w.buf.extend_from_slice(&payload);
    };

    for j in 0..anchors {
        write_block(&mut w, &mut table.rows.iter().map(|r| Some(r.anchor[j].lo)));
        write_block(
            &mut w,
            &mut table
                .rows
                .iter()
                .map(|r| (r.anchor[j].hi != r.anchor[j].lo).then_some(r.anchor[j].hi)),
        );
    }
    for i in 0..free {
        write_block(
            &mut w,
            &mut table.rows.iter().map(|r| r.free_abs[i].map(|x| x.lo)),
        );
        write_block(
            &mut w,
            &mut table
                .rows
                .iter()
                .map(|r| r.free_abs[i].and_then(|x| (x.hi != x.lo).then_some(x.hi))),
        );
        for j in 0..anchors {
            write_block(
                &mut w,
                &mut table.rows.iter().map(|r| r.free_rel[i][j].map(|x| x.lo)),
            );
            write_block(
                &mut w,
                &mut table
                    .rows
                    .iter()
                    .map(|r| r.free_rel[i][j].and_then(|x| (x.hi != x.lo).then_some(x.hi))),
            );
        }
    }

    let checksum = Sha256::digest(&w.buf);
    w.u64(rows);
    w.buf.extend_from_slice(&checksum);
    w.buf
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], Prc1Error> {
        if self.pos + n > self.buf.len() {
            return Err(Prc1Error::Truncated(self.pos));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8, Prc1Error> {
        Ok(self.take(1)?[0])
    }
    fn u16(&mut self) -> Result<u16, Prc1Error> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64, Prc1Error> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn str(&mut self) -> Result<String, Prc1Error> {
        let len = self.u16()? as usize;
        String::from_utf8(self.take(len)?.to_vec())
            .map_err(|e| Prc1Error::Malformed(e.to_string()))
    }
}

/// Deserialize a table, verifying the checksum before any parsing.
pub fn decode(bytes: &[u8]) -> Result<CompressedTable, Prc1Error> {
    if bytes.len() < 4 || bytes[..4] != MAGIC {
        return Err(Prc1Error::BadMagic);
    }
    if bytes.len() < 44 {
        return Err(Prc1Error::Truncated(bytes.len()));
    }
    let body_len = bytes.len() - 40;
    let checksum = &bytes[bytes.len() - 32..];
    if Sha256::digest(&bytes[..body_len]).as_slice() != checksum {
        return Err(Prc1Error::Checksum);
    }

    let mut r = Reader {
        buf: &bytes[..body_len],
        pos: 4,
    };
    let version = r.u16()?;
    if version != VERSION {
        return Err(Prc1Error::BadVersion(version));
    }
    let direction = match r.u8()? {
        0 => Direction::Backward,
        1 => Direction::Forward,
        d => return Err(Prc1Error::Malformed(format!("direction byte {d}"))),
    };
    let _flags = r.u8()?;
    let l = r.u16()? as usize;
    let m = r.u16()? as usize;
    let out_shape: Vec<u64> = (0..l).map(|_| r.u64()).collect::<Result<_, _>>()?;
    let in_shape: Vec<u64> = (0..m).map(|_| r.u64()).collect::<Result<_, _>>()?;
    let op = r.str()?;
    let out_array = r.str()?;
    let in_array = r.str()?;
    let rows = r.u64()? as usize;

    let (anchors, free) = match direction {
        Direction::Backward => (l, m),
        Direction::Forward => (m, l),
    };

    let mut read_block = |r: &mut Reader| -> Result<Vec<Option<i64>>, Prc1Error> {
        let tag = r.u8()?;
        let len = r.u64()? as usize;
        let payload = r.take(len)?;
        let plain: Vec<u8> = match tag {
            0 => payload.to_vec(),
            1 => {
                let mut out = Vec::new();
                flate2::read::DeflateDecoder::new(payload).read_to_end(&mut out)?;
                out
            }
            t => return Err(Prc1Error::Malformed(format!("block codec {t}"))),
        };
        let bitmap_len = rows.div_ceil(8);
        if plain.len() < bitmap_len {
            return Err(Prc1Error::Malformed("block shorter than bitmap".into()));
        }
        let (bitmap, mut values) = plain.split_at(bitmap_len);
        let mut out = Vec::with_capacity(rows);
        for idx in 0..rows {
            if bitmap[idx / 8] & (1 << (idx % 8)) != 0 {
                if values.len() < 8 {
                    return Err(Prc1Error::Malformed("missing block values".into()));
                }
                let (v, rest) = values.split_at(8);
                values = rest;
                out.push(Some(i64::from_le_bytes(v.try_into().unwrap())));
            } else {
                out.push(None);
            }
        }
        Ok(out)
    };

    let interval = |lo: Option<i64>, hi: Option<i64>, what: &str| -> Result<Option<IndexRange>, Prc1Error> {
        match (lo, hi) {
            (Some(lo), Some(hi)) if lo <= hi => Ok(Some(IndexRange::new(lo, hi))),
            (Some(lo), None) => Ok(Some(IndexRange::point(lo))),
            (None, None) => Ok(None),
            _ => Err(Prc1Error::Malformed(format!("inconsistent {what} interval"))),
        }
    };

    let mut table_rows: Vec<CompressedRow> = (0..rows)
        .map(|_| CompressedRow {
            anchor: Vec::with_capacity(anchors),
            free_abs: Vec::with_capacity(free),
            free_rel: Vec::with_capacity(free),
        })
        .collect();

    for j in 0..anchors {
        let lo = read_block(&mut r)?;
        let hi = read_block(&mut r)?;
        for (idx, row) in table_rows.iter_mut().enumerate() {
            let cell = interval(lo[idx], hi[idx], "anchor")?
                .ok_or_else(|| Prc1Error::Malformed(format!("anchor {j} null at row {idx}")))?;
            row.anchor.push(cell);
        }
    }
    for _i in 0..free {
        let lo = read_block(&mut r)?;
        let hi = read_block(&mut r)?;
        for (idx, row) in table_rows.iter_mut().enumerate() {
            row.free_abs.push(interval(lo[idx], hi[idx], "absolute")?);
            row.free_rel.push(Vec::with_capacity(anchors));
        }
        for _j in 0..anchors {
            let lo = read_block(&mut r)?;
            let hi = read_block(&mut r)?;
            for (idx, row) in table_rows.iter_mut().enumerate() {
                let cell = interval(lo[idx], hi[idx], "offset")?;
                row.free_rel.last_mut().expect("pushed above").push(cell);
            }
        }
    }

    let footer_rows =
        u64::from_le_bytes(bytes[body_len..body_len + 8].try_into().unwrap()) as usize;
    if footer_rows != rows {
        return Err(Prc1Error::Malformed(format!(
            "footer row count {footer_rows} != header {rows}"
        )));
    }

    Ok(CompressedTable {
        direction,
        op,
        out_array,
        in_array,
        out_shape,
        in_shape,
        rows: table_rows,
    })
}
