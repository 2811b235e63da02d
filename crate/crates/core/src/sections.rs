//! Versioned keyed-section binary container used by model checkpoints.
//!
//! Layout: 4-byte magic, `u32` version, then repeated sections of a 4-byte
//! tag, a `u64` payload length and the payload. All integers little-endian.

use crate::error::{Error, Result};

pub struct SectionWriter {
    buf: Vec<u8>,
}

impl SectionWriter {
    pub fn new(magic: &[u8; 4], version: u32) -> Self {
        let mut buf = Vec::new();
        buf.extend_from_slice(magic);
        buf.extend_from_slice(&version.to_le_bytes());
        SectionWriter { buf }
    }

    pub fn section(&mut self, tag: &[u8; 4], payload: &[u8]) -> &mut Self {
        self.buf.extend_from_slice(tag);
        self.buf.extend_from_slice(&(payload.len() as u64).to_le_bytes());
        self.buf.extend_from_slice(payload);
        self
    }

    pub fn f64_section(&mut self, tag: &[u8; 4], values: impl IntoIterator<Item = f64>) -> &mut Self {
        let payload: Vec<u8> = values.into_iter().flat_map(f64::to_le_bytes).collect();
        self.section(tag, &payload)
    }

    pub fn finish(self) -> Vec<u8> {
        self.buf
    }
}

pub struct Section<'a> {
    pub tag: [u8; 4],
    /// Byte offset of the payload within the file.
    pub offset: u64,
    pub payload: &'a [u8],
}

impl Section<'_> {
    pub fn f64s(&self) -> Result<Vec<f64>> {
        if self.payload.len() % 8 != 0 {
            return Err(Error::format(self.offset, "payload is not a whole number of f64 values"));
        }
        Ok(self
            .payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
}

/// Splits a container into sections after checking magic and version.
pub fn read_sections<'a>(bytes: &'a [u8], magic: &[u8; 4], version: u32) -> Result<Vec<Section<'a>>> {
    if bytes.len() < 8 {
        return Err(Error::format(0, "file too short for header"));
    }
    if &bytes[..4] != magic {
        return Err(Error::format(
            0,
            format!(
                "bad magic {:?}, expected {:?}",
                String::from_utf8_lossy(&bytes[..4]),
                String::from_utf8_lossy(magic)
            ),
        ));
    }
    let v = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if v != version {
        return Err(Error::format(4, format!("unsupported version {v}, expected {version}")));
    }
    let mut pos = 8usize;
    let mut out = Vec::new();
    while pos < bytes.len() {
        if pos + 12 > bytes.len() {
            return Err(Error::format(pos as u64, "truncated section header"));
        }
        let tag: [u8; 4] = bytes[pos..pos + 4].try_into().unwrap();
        let len = u64::from_le_bytes(bytes[pos + 4..pos + 12].try_into().unwrap()) as usize;
        let start = pos + 12;
        if start.checked_add(len).is_none_or(|end| end > bytes.len()) {
            return Err(Error::format(
                start as u64,
                format!("section {:?} truncated", String::from_utf8_lossy(&tag)),
            ));
        }
        out.push(Section {
            tag,
            offset: start as u64,
            payload: &bytes[start..start + len],
        });
        pos = start + len;
    }
    Ok(out)
}

pub fn find<'a, 'b>(sections: &'b [Section<'a>], tag: &[u8; 4]) -> Result<&'b Section<'a>> {
    sections
        .iter()
        .find(|s| &s.tag == tag)
        .ok_or_else(|| Error::format(0, format!("missing section {:?}", String::from_utf8_lossy(tag))))
}
