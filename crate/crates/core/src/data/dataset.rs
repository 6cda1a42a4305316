//! "TPPG v1" dataset files and the raw sample formats accepted on input.
//!
//! Dataset layout, little-endian:
//!
//! ```text
//! magic "TPPG" | u16 version | u32 segment_count | u16 segment_len | u16 sample_rate
//! per segment: u16 subject_id | u32 segment_index | f32 x segment_len | u8 x segment_len
//! ```

use std::fs;
use std::path::Path;

use super::{RawRecording, SignalSegment, SAMPLE_RATE_HZ, SEGMENT_LEN};
use crate::error::{Error, Result};

pub const DATASET_MAGIC: [u8; 4] = *b"TPPG";
pub const DATASET_VERSION: u16 = 1;

const HEADER_LEN: usize = 4 + 2 + 4 + 2 + 2;
const RECORD_LEN: usize = 2 + 4 + SEGMENT_LEN * 4 + SEGMENT_LEN;

pub fn encode_dataset(segments: &[SignalSegment]) -> Result<Vec<u8>> {
    let count = u32::try_from(segments.len()).map_err(|_| Error::input("too many segments for one file"))?;
    let mut buf = Vec::with_capacity(HEADER_LEN + segments.len() * RECORD_LEN);
    buf.extend_from_slice(&DATASET_MAGIC);
    buf.extend_from_slice(&DATASET_VERSION.to_le_bytes());
    buf.extend_from_slice(&count.to_le_bytes());
    buf.extend_from_slice(&(SEGMENT_LEN as u16).to_le_bytes());
    buf.extend_from_slice(&SAMPLE_RATE_HZ.to_le_bytes());
    for seg in segments {
        seg.validate()?;
        buf.extend_from_slice(&seg.subject_id.to_le_bytes());
        buf.extend_from_slice(&seg.segment_index.to_le_bytes());
        for v in &seg.samples {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        buf.extend_from_slice(&seg.labels);
    }
    Ok(buf)
}

/// Little-endian reader that reports the offset of whatever went wrong.
pub(crate) struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub(crate) fn new(buf: &'a [u8]) -> Self {
        Self { buf, pos: 0 }
    }

    pub(crate) fn offset(&self) -> u64 {
        self.pos as u64
    }

    pub(crate) fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }

    pub(crate) fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.remaining() < n {
            return Err(Error::parse(
                self.offset(),
                format!("truncated {what}: need {n} bytes, {} left", self.remaining()),
            ));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub(crate) fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    pub(crate) fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }

    pub(crate) fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    pub(crate) fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    pub(crate) fn f32_vec(&mut self, n: usize, what: &str) -> Result<Vec<f32>> {
        let bytes = self.take(n.checked_mul(4).ok_or_else(|| Error::parse(self.offset(), "length overflow"))?, what)?;
        Ok(bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    pub(crate) fn expect_magic(&mut self, magic: &[u8; 4], what: &str) -> Result<()> {
        let at = self.offset();
        let got = self.take(4, what)?;
        if got != magic {
            return Err(Error::parse(at, format!("bad magic {got:02x?}, expected {magic:02x?}")));
        }
        Ok(())
    }

    pub(crate) fn finish(&self) -> Result<()> {
        if self.remaining() != 0 {
            return Err(Error::parse(self.offset(), format!("{} trailing bytes", self.remaining())));
        }
        Ok(())
    }
}

pub fn decode_dataset(bytes: &[u8]) -> Result<Vec<SignalSegment>> {
    let mut r = Reader::new(bytes);
    r.expect_magic(&DATASET_MAGIC, "dataset magic")?;
    let at = r.offset();
    let version = r.u16("version")?;
    if version != DATASET_VERSION {
        return Err(Error::parse(at, format!("unsupported dataset version {version}")));
    }
    let count = r.u32("segment count")? as usize;
    let at = r.offset();
    let seg_len = r.u16("segment length")? as usize;
    if seg_len != SEGMENT_LEN {
        return Err(Error::parse(at, format!("segment length {seg_len}, expected {SEGMENT_LEN}")));
    }
    let at = r.offset();
    let rate = r.u16("sample rate")?;
    if rate != SAMPLE_RATE_HZ {
        return Err(Error::parse(at, format!("sample rate {rate}, expected {SAMPLE_RATE_HZ}")));
    }
    if r.remaining() / RECORD_LEN < count {
        return Err(Error::parse(
            r.offset(),
            format!("header declares {count} segments but only {} bytes follow", r.remaining()),
        ));
    }
    let mut segments = Vec::with_capacity(count);
    for _ in 0..count {
        let subject_id = r.u16("subject id")?;
        let segment_index = r.u32("segment index")?;
        let samples = r.f32_vec(SEGMENT_LEN, "samples")?;
        let at = r.offset();
        let labels = r.take(SEGMENT_LEN, "labels")?.to_vec();
        if let Some(i) = labels.iter().position(|&l| l > 1) {
            return Err(Error::parse(at + i as u64, format!("label byte {} is not 0/1", labels[i])));
        }
        segments.push(SignalSegment {
            subject_id,
            segment_index,
            samples,
            labels,
        });
    }
    r.finish()?;
    Ok(segments)
}

pub fn save_dataset(segments: &[SignalSegment], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_dataset(segments)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<Vec<SignalSegment>> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_dataset(&bytes)
}

/// A headerless little-endian float32 sample stream.
pub fn read_raw_samples(path: impl AsRef<Path>) -> Result<Vec<f32>> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() % 4 != 0 {
        return Err(Error::parse(
            (bytes.len() - bytes.len() % 4) as u64,
            "raw float32 stream length is not a multiple of 4",
        ));
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect())
}

/// Per-subject raw dump handed over by external converters:
/// `u32 sample_count | f32 x count | u8 x count`, at 64 Hz.
pub fn read_raw_dump(path: impl AsRef<Path>, subject_id: u16) -> Result<RawRecording> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut r = Reader::new(&bytes);
    let n = r.u32("sample count")? as usize;
    let samples = r.f32_vec(n, "samples")?;
    let at = r.offset();
    let labels = r.take(n, "labels")?.to_vec();
    if let Some(i) = labels.iter().position(|&l| l > 1) {
        return Err(Error::parse(at + i as u64, "label byte is not 0/1"));
    }
    r.finish()?;
    RawRecording::new(
        subject_id,
        SAMPLE_RATE_HZ as f64,
        samples.into_iter().map(f64::from).collect(),
        labels,
    )
}

pub fn write_raw_dump(rec: &RawRecording, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    rec.validate()?;
    let n = u32::try_from(rec.len()).map_err(|_| Error::input("recording too long for a raw dump"))?;
    let mut buf = Vec::with_capacity(4 + rec.len() * 5);
    buf.extend_from_slice(&n.to_le_bytes());
    for &v in &rec.samples {
        buf.extend_from_slice(&(v as f32).to_le_bytes());
    }
    buf.extend_from_slice(&rec.labels);
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_synthetic, SyntheticConfig};

    fn sample(n: usize) -> Vec<SignalSegment> {
        generate_synthetic(&SyntheticConfig {
            n_segments: n,
            seed: 3,
            ..Default::default()
        })
        .unwrap()
    }

    #[test]
    fn round_trip_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.tppg");
        let segs = sample(10);
        save_dataset(&segs, &path).unwrap();
        let back = load_dataset(&path).unwrap();
        assert_eq!(back, segs);
        for (a, b) in back.iter().zip(&segs) {
            for (x, y) in a.samples.iter().zip(&b.samples) {
                assert_eq!(x.to_bits(), y.to_bits());
            }
        }
    }

    #[test]
    fn empty_list_is_valid() {
        let bytes = encode_dataset(&[]).unwrap();
        assert_eq!(bytes.len(), HEADER_LEN);
        assert_eq!(&bytes[..4], &[0x54, 0x50, 0x50, 0x47]);
        assert!(decode_dataset(&bytes).unwrap().is_empty());
    }

    #[test]
    fn header_layout() {
        let bytes = encode_dataset(&sample(2)).unwrap();
        assert_eq!(u16::from_le_bytes([bytes[4], bytes[5]]), 1);
        assert_eq!(u32::from_le_bytes(bytes[6..10].try_into().unwrap()), 2);
        assert_eq!(u16::from_le_bytes([bytes[10], bytes[11]]), 1920);
        assert_eq!(u16::from_le_bytes([bytes[12], bytes[13]]), 64);
        assert_eq!(bytes.len(), HEADER_LEN + 2 * RECORD_LEN);
    }

    #[test]
    fn wrong_magic_rejected() {
        let mut bytes = encode_dataset(&sample(1)).unwrap();
        bytes[0] = b'X';
        match decode_dataset(&bytes) {
            Err(Error::Parse { offset, .. }) => assert_eq!(offset, 0),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn truncation_and_version_rejected() {
        let bytes = encode_dataset(&sample(2)).unwrap();
        let cut = &bytes[..bytes.len() - 7];
        assert!(matches!(decode_dataset(cut), Err(Error::Parse { .. })));
        let mut v2 = bytes.clone();
        v2[4] = 2;
        assert!(matches!(decode_dataset(&v2), Err(Error::Parse { offset: 4, .. })));
        let mut extra = bytes;
        extra.push(0);
        assert!(matches!(decode_dataset(&extra), Err(Error::Parse { .. })));
    }

    #[test]
    fn raw_dump_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s1.raw");
        let rec = RawRecording::new(1, 64.0, vec![0.5, -1.25, 3.0], vec![0, 1, 1]).unwrap();
        write_raw_dump(&rec, &path).unwrap();
        assert_eq!(read_raw_dump(&path, 1).unwrap(), rec);
    }
}
