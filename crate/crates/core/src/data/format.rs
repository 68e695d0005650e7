//! Shared framing for every binary file this crate writes.
//!
//! ```text
//! magic[8] | version u32 | body_len u64 | body[body_len] | crc32 u32
//! ```
//! All integers little-endian. The CRC covers every byte before it.

use std::path::Path;

use thiserror::Error;

pub const FORMAT_VERSION: u32 = 1;
const PREFIX_LEN: usize = 8 + 4 + 8;
const TRAILER_LEN: usize = 4;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FormatError {
    #[error("bad magic: expected {expected:?}")]
    BadMagic { expected: String },
    #[error("unsupported format version {found} (this build reads {expected})")]
    UnsupportedVersion { found: u32, expected: u32 },
    #[error("truncated file: expected {expected} bytes, found {actual}")]
    Truncated { expected: u64, actual: u64 },
    #[error("{0} unexpected trailing bytes")]
    TrailingBytes(u64),
    #[error("checksum mismatch (stored {stored:#010x}, computed {computed:#010x})")]
    ChecksumMismatch { stored: u32, computed: u32 },
    #[error("precision mismatch: file holds {file}, caller expects {expected}")]
    PrecisionMismatch { file: String, expected: String },
    #[error("malformed body: {0}")]
    Malformed(String),
    #[error("i/o error: {0}")]
    Io(String),
}

/// Coarse class of a [`FormatError`], used when asserting on corruption handling.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Magic,
    Version,
    Framing,
    Checksum,
    Precision,
    Malformed,
    Io,
}

impl FormatError {
    pub fn class(&self) -> ErrorClass {
        match self {
            FormatError::BadMagic { .. } => ErrorClass::Magic,
            FormatError::UnsupportedVersion { .. } => ErrorClass::Version,
            FormatError::Truncated { .. } | FormatError::TrailingBytes(_) => ErrorClass::Framing,
            FormatError::ChecksumMismatch { .. } => ErrorClass::Checksum,
            FormatError::PrecisionMismatch { .. } => ErrorClass::Precision,
            FormatError::Malformed(_) => ErrorClass::Malformed,
            FormatError::Io(_) => ErrorClass::Io,
        }
    }
}

impl From<std::io::Error> for FormatError {
    fn from(e: std::io::Error) -> Self {
        FormatError::Io(e.to_string())
    }
}

/// Byte ranges of the fixed prefix, for corruption tests.
pub mod layout {
    pub const MAGIC: std::ops::Range<usize> = 0..8;
    pub const VERSION: std::ops::Range<usize> = 8..12;
    pub const BODY_LEN: std::ops::Range<usize> = 12..20;
}

pub fn frame(magic: &[u8; 8], body: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(PREFIX_LEN + body.len() + TRAILER_LEN);
    out.extend_from_slice(magic);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(body.len() as u64).to_le_bytes());
    out.extend_from_slice(body);
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    out
}

/// Validates framing and checksum, returning the body slice.
pub fn unframe<'a>(magic: &[u8; 8], bytes: &'a [u8]) -> Result<&'a [u8], FormatError> {
    let actual = bytes.len() as u64;
    if bytes.len() < 8 {
        if magic.starts_with(bytes) {
            return Err(FormatError::Truncated { expected: (PREFIX_LEN + TRAILER_LEN) as u64, actual });
        }
        return Err(FormatError::BadMagic { expected: String::from_utf8_lossy(magic).into_owned() });
    }
    if &bytes[layout::MAGIC] != magic {
        return Err(FormatError::BadMagic { expected: String::from_utf8_lossy(magic).into_owned() });
    }
    if bytes.len() < PREFIX_LEN {
        return Err(FormatError::Truncated { expected: (PREFIX_LEN + TRAILER_LEN) as u64, actual });
    }
    let version = u32::from_le_bytes(bytes[layout::VERSION].try_into().expect("4 bytes"));
    if version != FORMAT_VERSION {
        return Err(FormatError::UnsupportedVersion { found: version, expected: FORMAT_VERSION });
    }
    let body_len = u64::from_le_bytes(bytes[layout::BODY_LEN].try_into().expect("8 bytes"));
    let expected = (PREFIX_LEN as u64).saturating_add(body_len).saturating_add(TRAILER_LEN as u64);
    if actual < expected {
        return Err(FormatError::Truncated { expected, actual });
    }
    if actual > expected {
        return Err(FormatError::TrailingBytes(actual - expected));
    }
    let split = bytes.len() - TRAILER_LEN;
    let stored = u32::from_le_bytes(bytes[split..].try_into().expect("4 bytes"));
    let computed = crc32fast::hash(&bytes[..split]);
    if stored != computed {
        return Err(FormatError::ChecksumMismatch { stored, computed });
    }
    Ok(&bytes[PREFIX_LEN..split])
}

pub fn write_file(path: &Path, bytes: &[u8]) -> Result<(), FormatError> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    std::fs::write(path, bytes)?;
    Ok(())
}

pub fn read_file(path: &Path) -> Result<Vec<u8>, FormatError> {
    std::fs::read(path).map_err(|e| FormatError::Io(format!("{}: {e}", path.display())))
}

/// Little-endian body writer.
#[derive(Default)]
pub struct Writer {
    pub buf: Vec<u8>,
}

impl Writer {
    pub fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }
    pub fn u16(&mut self, v: u16) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    pub fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    pub fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    pub fn f32(&mut self, v: f32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    /// Length-prefixed (u16) UTF-8 string.
    pub fn short_str(&mut self, s: &str) {
        let bytes = s.as_bytes();
        assert!(bytes.len() <= u16::MAX as usize, "string too long for record");
        self.u16(bytes.len() as u16);
        self.buf.extend_from_slice(bytes);
    }
    /// Length-prefixed (u32) UTF-8 string.
    pub fn long_str(&mut self, s: &str) {
        self.u32(s.len() as u32);
        self.buf.extend_from_slice(s.as_bytes());
    }
}

/// Bounds-checked little-endian body reader. Every overrun is a `Malformed` error.
pub struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub fn new(buf: &'a [u8]) -> Self {
        Reader { buf, pos: 0 }
    }

    pub fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }

    pub fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8], FormatError> {
        if n > self.remaining() {
            return Err(FormatError::Malformed(format!(
                "{what}: needs {n} bytes, {} left",
                self.remaining()
            )));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub fn u8(&mut self, what: &str) -> Result<u8, FormatError> {
        Ok(self.take(1, what)?[0])
    }
    pub fn u16(&mut self, what: &str) -> Result<u16, FormatError> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().expect("2")))
    }
    pub fn u32(&mut self, what: &str) -> Result<u32, FormatError> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4")))
    }
    pub fn u64(&mut self, what: &str) -> Result<u64, FormatError> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().expect("8")))
    }
    pub fn short_str(&mut self, what: &str) -> Result<String, FormatError> {
        let len = self.u16(what)? as usize;
        let raw = self.take(len, what)?;
        String::from_utf8(raw.to_vec()).map_err(|_| FormatError::Malformed(format!("{what}: invalid utf-8")))
    }
    pub fn long_str(&mut self, what: &str) -> Result<String, FormatError> {
        let len = self.u32(what)? as usize;
        let raw = self.take(len, what)?;
        String::from_utf8(raw.to_vec()).map_err(|_| FormatError::Malformed(format!("{what}: invalid utf-8")))
    }

    pub fn finish(&self) -> Result<(), FormatError> {
        if self.remaining() != 0 {
            return Err(FormatError::Malformed(format!("{} unread bytes after last record", self.remaining())));
        }
        Ok(())
    }
}
