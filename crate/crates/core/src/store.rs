//! On-disk document store with random access by [`DocId`].
//!
//! A store is a directory holding two files:
//!
//! * `records.jsonl`: canonical document lines, LF-terminated, in write order.
//! * `index.bin`: little-endian offset index:
//!   an 8-byte magic `ALSTORE1`, a `u64` record count, then one 24-byte entry
//!   per record sorted by id: `id: u64`, `offset: u64`, `len: u32`,
//!   `crc32: u32`. `offset`/`len` address the record bytes without the LF;
//!   `crc32` is the IEEE CRC of those bytes.
//!
//! A store is written once by a single writer and may then be read by any
//! number of readers.

use std::fs::{self, File};
use std::io::{BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use crate::corpus::{from_canonical_line, to_canonical_line, Corpus, DocId, Document};
use crate::error::{Error, Result};

pub const RECORDS_FILE: &str = "records.jsonl";
pub const INDEX_FILE: &str = "index.bin";
const MAGIC: &[u8; 8] = b"ALSTORE1";
const ENTRY_LEN: usize = 24;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct IndexEntry {
    id: DocId,
    offset: u64,
    len: u32,
    crc: u32,
}

/// Writes `docs` to a new store at `dir`, creating the directory if needed.
pub fn store_write(docs: &[Document], dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let records_path = dir.join(RECORDS_FILE);
    let file = File::create(&records_path).map_err(|e| Error::io(&records_path, e))?;
    let mut out = BufWriter::new(file);

    let mut entries = Vec::with_capacity(docs.len());
    let mut offset = 0u64;
    for doc in docs {
        let line = to_canonical_line(doc);
        let bytes = line.as_bytes();
        let len = u32::try_from(bytes.len()).map_err(|_| Error::InvalidDocument {
            doc: doc.id,
            reason: "record exceeds 4 GiB".into(),
        })?;
        out.write_all(bytes)
            .and_then(|_| out.write_all(b"\n"))
            .map_err(|e| Error::io(&records_path, e))?;
        entries.push(IndexEntry {
            id: doc.id,
            offset,
            len,
            crc: crc32fast::hash(bytes),
        });
        offset += bytes.len() as u64 + 1;
    }
    out.flush().map_err(|e| Error::io(&records_path, e))?;

    entries.sort_by_key(|e| e.id);
    if let Some(w) = entries.windows(2).find(|w| w[0].id == w[1].id) {
        return Err(Error::InvalidDocument {
            doc: w[0].id,
            reason: "duplicate document id in store".into(),
        });
    }

    let index_path = dir.join(INDEX_FILE);
    let mut buf = Vec::with_capacity(16 + entries.len() * ENTRY_LEN);
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&(entries.len() as u64).to_le_bytes());
    for e in &entries {
        buf.extend_from_slice(&e.id.0.to_le_bytes());
        buf.extend_from_slice(&e.offset.to_le_bytes());
        buf.extend_from_slice(&e.len.to_le_bytes());
        buf.extend_from_slice(&e.crc.to_le_bytes());
    }
    fs::write(&index_path, buf).map_err(|e| Error::io(&index_path, e))
}

/// Opens the store at `dir` and reads one document.
pub fn store_read(dir: impl AsRef<Path>, id: DocId) -> Result<Document> {
    Store::open(dir)?.get(id)
}

/// Read handle over a finished store. Lookups use positional reads, so one
/// handle can serve many threads.
#[derive(Debug)]
pub struct Store {
    dir: PathBuf,
    records: File,
    records_len: u64,
    entries: Vec<IndexEntry>,
}

impl Store {
    pub fn open(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref().to_path_buf();
        let index_path = dir.join(INDEX_FILE);
        let raw = fs::read(&index_path).map_err(|e| Error::io(&index_path, e))?;
        let integrity = |reason: String| Error::Integrity {
            record: INDEX_FILE.into(),
            reason,
        };
        if raw.len() < 16 || &raw[..8] != MAGIC {
            return Err(integrity("missing or wrong magic".into()));
        }
        let count = u64::from_le_bytes(raw[8..16].try_into().unwrap()) as usize;
        if raw.len() != 16 + count * ENTRY_LEN {
            return Err(integrity(format!(
                "expected {count} entries ({} bytes), found {} bytes",
                16 + count * ENTRY_LEN,
                raw.len()
            )));
        }
        let entries: Vec<IndexEntry> = raw[16..]
            .chunks_exact(ENTRY_LEN)
            .map(|c| IndexEntry {
                id: DocId(u64::from_le_bytes(c[0..8].try_into().unwrap())),
                offset: u64::from_le_bytes(c[8..16].try_into().unwrap()),
                len: u32::from_le_bytes(c[16..20].try_into().unwrap()),
                crc: u32::from_le_bytes(c[20..24].try_into().unwrap()),
            })
            .collect();
        if entries.windows(2).any(|w| w[0].id >= w[1].id) {
            return Err(integrity("entries not strictly sorted by id".into()));
        }

        let records_path = dir.join(RECORDS_FILE);
        let records = File::open(&records_path).map_err(|e| Error::io(&records_path, e))?;
        let records_len = records
            .metadata()
            .map_err(|e| Error::io(&records_path, e))?
            .len();
        if let Some(e) = entries
            .iter()
            .find(|e| e.offset + e.len as u64 + 1 > records_len)
        {
            return Err(Error::Integrity {
                record: format!("doc {}", e.id),
                reason: "index entry points past end of records file".into(),
            });
        }
        Ok(Store {
            dir,
            records,
            records_len,
            entries,
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = DocId> + '_ {
        self.entries.iter().map(|e| e.id)
    }

    pub fn contains(&self, id: DocId) -> bool {
        self.entries.binary_search_by_key(&id, |e| e.id).is_ok()
    }

    /// Random access by id; one positional read plus a CRC check.
    pub fn get(&self, id: DocId) -> Result<Document> {
        let pos = self
            .entries
            .binary_search_by_key(&id, |e| e.id)
            .map_err(|_| Error::NotFound(id))?;
        let entry = self.entries[pos];
        let mut buf = vec![0u8; entry.len as usize];
        read_exact_at(&self.records, &mut buf, entry.offset)
            .map_err(|e| Error::io(self.dir.join(RECORDS_FILE), e))?;
        decode_record(entry, &buf)
    }

    /// Reads the whole store in one sequential pass, verifying every record.
    pub fn load_all(&self) -> Result<Corpus> {
        let records_path = self.dir.join(RECORDS_FILE);
        let mut raw = Vec::with_capacity(self.records_len as usize);
        File::open(&records_path)
            .and_then(|mut f| f.read_to_end(&mut raw))
            .map_err(|e| Error::io(&records_path, e))?;
        let docs = self
            .entries
            .iter()
            .map(|&entry| {
                let start = entry.offset as usize;
                decode_record(entry, &raw[start..start + entry.len as usize])
            })
            .collect::<Result<Vec<_>>>()?;
        Corpus::new(docs)
    }

    /// Raw bytes of the records file, as written.
    pub fn raw_records(&self) -> Result<Vec<u8>> {
        let path = self.dir.join(RECORDS_FILE);
        fs::read(&path).map_err(|e| Error::io(&path, e))
    }
}

fn decode_record(entry: IndexEntry, bytes: &[u8]) -> Result<Document> {
    let record = format!("doc {} @ byte {}", entry.id, entry.offset);
    if crc32fast::hash(bytes) != entry.crc {
        return Err(Error::Integrity {
            record,
            reason: "checksum mismatch".into(),
        });
    }
    let line = std::str::from_utf8(bytes).map_err(|_| Error::Integrity {
        record: record.clone(),
        reason: "record is not UTF-8".into(),
    })?;
    let doc = from_canonical_line(line).map_err(|e| Error::Integrity {
        record: record.clone(),
        reason: e.to_string(),
    })?;
    if doc.id != entry.id {
        return Err(Error::Integrity {
            record,
            reason: format!("record carries id {}", doc.id),
        });
    }
    Ok(doc)
}

#[cfg(unix)]
fn read_exact_at(file: &File, buf: &mut [u8], offset: u64) -> std::io::Result<()> {
    std::os::unix::fs::FileExt::read_exact_at(file, buf, offset)
}

#[cfg(windows)]
fn read_exact_at(file: &File, mut buf: &mut [u8], mut offset: u64) -> std::io::Result<()> {
    use std::os::windows::fs::FileExt;
    while !buf.is_empty() {
        match file.seek_read(buf, offset)? {
            0 => return Err(std::io::ErrorKind::UnexpectedEof.into()),
            n => {
                buf = &mut buf[n..];
                offset += n as u64;
            }
        }
    }
    Ok(())
}
