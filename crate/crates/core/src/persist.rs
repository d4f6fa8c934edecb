//! Lossless JSON encoding with a versioned, checksummed envelope.
//!
//! Floats are written with 17 significant digits so every `f64` survives a
//! round trip bit-for-bit. The checksum is the SHA-256 of the payload's
//! canonical encoding, which is reproduced on load and compared.

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::ser::{CompactFormatter, Formatter};
use sha2::{Digest, Sha256};
use std::io;

use crate::error::{Error, Result};

/// Compact formatter writing floats as `d.dddddddddddddddde±x`.
#[derive(Debug, Default, Clone, Copy)]
pub struct LosslessFormatter;

impl Formatter for LosslessFormatter {
    fn write_f64<W: ?Sized + io::Write>(&mut self, writer: &mut W, value: f64) -> io::Result<()> {
        write!(writer, "{value:.16e}")
    }

    fn write_f32<W: ?Sized + io::Write>(&mut self, writer: &mut W, value: f32) -> io::Result<()> {
        write!(writer, "{:.16e}", value as f64)
    }

    fn write_null<W: ?Sized + io::Write>(&mut self, writer: &mut W) -> io::Result<()> {
        CompactFormatter.write_null(writer)
    }
}

/// Canonical lossless encoding of `value`.
pub fn to_lossless_json<T: Serialize>(value: &T) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut out, LosslessFormatter);
    value.serialize(&mut ser)?;
    Ok(out)
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[derive(Serialize)]
struct EnvelopeOut<'a, T> {
    format: &'a str,
    format_version: u32,
    checksum: String,
    payload: &'a T,
}

#[derive(Deserialize)]
struct EnvelopeIn<T> {
    format: String,
    format_version: u32,
    checksum: String,
    payload: T,
}

#[derive(Deserialize)]
struct Header {
    format: String,
    format_version: u32,
}

/// Encodes `payload` inside a `{format, format_version, checksum, payload}`
/// document, newline-terminated.
pub fn encode_envelope<T: Serialize>(format: &str, version: u32, payload: &T) -> Result<Vec<u8>> {
    let checksum = sha256_hex(&to_lossless_json(payload)?);
    let mut out = to_lossless_json(&EnvelopeOut {
        format,
        format_version: version,
        checksum,
        payload,
    })?;
    out.push(b'\n');
    Ok(out)
}

/// Decodes a document written by [`encode_envelope`], rejecting other
/// formats, other versions and checksum mismatches with [`Error::Format`].
pub fn decode_envelope<T: Serialize + DeserializeOwned>(format: &str, version: u32, bytes: &[u8]) -> Result<T> {
    let header: Header = serde_json::from_slice(bytes)
        .map_err(|e| Error::Format(format!("not a {format} document: {e}")))?;
    if header.format != format {
        return Err(Error::Format(format!("expected a {format} document, found {}", header.format)));
    }
    if header.format_version != version {
        return Err(Error::Format(format!(
            "{format} format version {} is not supported (expected {version})",
            header.format_version
        )));
    }
    let doc: EnvelopeIn<T> =
        serde_json::from_slice(bytes).map_err(|e| Error::Format(format!("malformed {format} document: {e}")))?;
    debug_assert_eq!(doc.format, format);
    debug_assert_eq!(doc.format_version, version);
    let actual = sha256_hex(&to_lossless_json(&doc.payload)?);
    if actual != doc.checksum {
        return Err(Error::Format(format!(
            "{format} checksum mismatch (stored {}, computed {actual}); the file is corrupted",
            doc.checksum
        )));
    }
    Ok(doc.payload)
}
