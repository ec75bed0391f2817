//! Binary on-disk format for the embedding db.
//!
//! Layout: magic `RAGREDB1`, little-endian u32 header length, a UTF-8 JSON
//! header `{model_id, dim, count, inventory_digest}`, then `count` records
//! (u32 id length + id bytes, u32 text length + text bytes, u32 label
//! length + label bytes, `dim` little-endian IEEE-754 f32 values), then the
//! SHA-256 digest of everything before it. All u32 fields are little-endian.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{DbEntry, EmbeddingDB, EmbeddingVector};
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"RAGREDB1";
const DIGEST_LEN: usize = 32;

#[derive(Serialize, Deserialize)]
struct DbHeader {
    model_id: String,
    dim: usize,
    count: usize,
    inventory_digest: String,
}

fn format_err(message: impl Into<String>, offset: u64) -> Error {
    Error::DbFormat {
        message: message.into(),
        offset: Some(offset),
    }
}

/// Serializes the db to `path` and returns the hex checksum of the file body.
pub fn save_db(db: &EmbeddingDB, path: &Path) -> Result<String> {
    let header = DbHeader {
        model_id: db.model_id.clone(),
        dim: db.dim(),
        count: db.len(),
        inventory_digest: db.inventory_digest.clone(),
    };
    let header_bytes =
        serde_json::to_vec(&header).map_err(|e| Error::parse("db header", e.to_string()))?;

    let mut body = Vec::with_capacity(64 + db.len() * (db.dim() * 4 + 64));
    body.extend_from_slice(MAGIC);
    body.extend_from_slice(&(header_bytes.len() as u32).to_le_bytes());
    body.extend_from_slice(&header_bytes);
    for entry in db.entries() {
        for field in [&entry.instance_id, &entry.surface_text, &entry.gold_label] {
            body.extend_from_slice(&(field.len() as u32).to_le_bytes());
            body.extend_from_slice(field.as_bytes());
        }
        for value in entry.vector.values() {
            body.extend_from_slice(&value.to_le_bytes());
        }
    }

    let digest = Sha256::digest(&body);
    body.extend_from_slice(&digest);
    fs::write(path, &body).map_err(|e| Error::io(path, e))?;
    Ok(hex::encode(digest))
}

/// Reads a db file back, verifying magic, structure, and trailing checksum.
pub fn load_db(path: &Path) -> Result<EmbeddingDB> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let (db, _) = parse_db(&bytes)?;
    Ok(db)
}

/// Recomputes and verifies the file checksum without keeping the db.
pub fn db_file_checksum(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() < DIGEST_LEN {
        return Err(format_err(
            "file shorter than its checksum",
            bytes.len() as u64,
        ));
    }
    let body_len = bytes.len() - DIGEST_LEN;
    let digest = Sha256::digest(&bytes[..body_len]);
    if digest.as_slice() != &bytes[body_len..] {
        return Err(format_err("checksum mismatch", body_len as u64));
    }
    Ok(hex::encode(digest))
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(format_err(
                format!("truncated while reading {what}"),
                self.pos as u64,
            ));
        }
        let slice = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(slice)
    }

    fn take_u32(&mut self, what: &str) -> Result<u32> {
        let raw = self.take(4, what)?;
        Ok(u32::from_le_bytes(raw.try_into().unwrap()))
    }

    fn take_str(&mut self, what: &str) -> Result<String> {
        let len = self.take_u32(what)? as usize;
        let raw = self.take(len, what)?;
        String::from_utf8(raw.to_vec())
            .map_err(|_| format_err(format!("{what} is not valid UTF-8"), self.pos as u64))
    }
}

fn parse_db(bytes: &[u8]) -> Result<(EmbeddingDB, String)> {
    let mut cursor = Cursor { bytes, pos: 0 };

    let magic = cursor.take(MAGIC.len(), "magic")?;
    if magic != MAGIC {
        return Err(Error::DbFormat {
            message: format!(
                "bad magic/version: expected {:?}, found {:?}",
                String::from_utf8_lossy(MAGIC),
                String::from_utf8_lossy(magic)
            ),
            offset: Some(0),
        });
    }

    let header_len = cursor.take_u32("header length")? as usize;
    let header_bytes = cursor.take(header_len, "header")?;
    let header: DbHeader = serde_json::from_slice(header_bytes)
        .map_err(|e| format_err(format!("header is not valid JSON: {e}"), cursor.pos as u64))?;

    let mut entries = Vec::with_capacity(header.count);
    for record in 0..header.count {
        let what = format!("record {record}");
        let instance_id = cursor.take_str(&what)?;
        let surface_text = cursor.take_str(&what)?;
        let gold_label = cursor.take_str(&what)?;
        let raw = cursor.take(header.dim * 4, &what)?;
        let values: Vec<f32> = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let vector = EmbeddingVector::new(values).map_err(|e| {
            format_err(
                format!("record {record} ({instance_id}): {e}"),
                cursor.pos as u64,
            )
        })?;
        entries.push(DbEntry {
            instance_id,
            surface_text,
            vector,
            gold_label,
        });
    }

    let body_len = cursor.pos;
    let stored = cursor.take(DIGEST_LEN, "checksum")?;
    if cursor.pos != bytes.len() {
        return Err(format_err(
            "trailing bytes after checksum",
            cursor.pos as u64,
        ));
    }
    let digest = Sha256::digest(&bytes[..body_len]);
    if digest.as_slice() != stored {
        return Err(format_err("checksum mismatch", body_len as u64));
    }

    let db = EmbeddingDB::from_entries(
        header.model_id,
        header.dim,
        header.inventory_digest,
        entries,
    )?;
    Ok((db, hex::encode(digest)))
}
