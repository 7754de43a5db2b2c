//! Binary `.bsvm` model format. All integers and floats are little-endian;
//! the byte layout is described in `docs/model-format.md`.

use std::fs::{self, File};
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::Path;

use crc32fast::Hasher as Crc32;

use crate::error::{Error, Result};
use crate::model::EmbeddingModel;
use crate::train::TrainConfig;
use crate::vocab::{NgramHasher, Vocabulary};

pub const MAGIC: [u8; 8] = *b"SVECMDL\0";
pub const FORMAT_VERSION: u32 = 1;

const FLAG_EXACT_MATH: u32 = 1;
const FLAG_SUBSAMPLE: u32 = 2;
const MAX_WORD_BYTES: u32 = 1 << 16;

struct CrcWriter<W> {
    inner: W,
    crc: Crc32,
}

impl<W: Write> Write for CrcWriter<W> {
    fn write(&mut self, buf: &[u8]) -> io::Result<usize> {
        let n = self.inner.write(buf)?;
        self.crc.update(&buf[..n]);
        Ok(n)
    }

    fn flush(&mut self) -> io::Result<()> {
        self.inner.flush()
    }
}

struct CrcReader<R> {
    inner: R,
    crc: Crc32,
    consumed: u64,
}

impl<R: Read> CrcReader<R> {
    fn exact(&mut self, buf: &mut [u8]) -> Result<()> {
        match self.inner.read_exact(buf) {
            Ok(()) => {
                self.crc.update(buf);
                self.consumed += buf.len() as u64;
                Ok(())
            }
            Err(e) if e.kind() == io::ErrorKind::UnexpectedEof => Err(Error::Truncated),
            Err(e) => Err(e.into()),
        }
    }

    fn u32(&mut self) -> Result<u32> {
        let mut b = [0u8; 4];
        self.exact(&mut b)?;
        Ok(u32::from_le_bytes(b))
    }

    fn u64(&mut self) -> Result<u64> {
        let mut b = [0u8; 8];
        self.exact(&mut b)?;
        Ok(u64::from_le_bytes(b))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_bits(self.u64()?))
    }

    fn f32s(&mut self, n: usize) -> Result<Vec<f32>> {
        let mut out = Vec::with_capacity(n);
        let mut buf = vec![0u8; 4 * 16384];
        let mut left = n;
        while left > 0 {
            let take = left.min(16384);
            let bytes = &mut buf[..4 * take];
            self.exact(bytes)?;
            out.extend(
                bytes
                    .chunks_exact(4)
                    .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])),
            );
            left -= take;
        }
        Ok(out)
    }
}

fn write_config<W: Write>(w: &mut W, c: &TrainConfig) -> io::Result<()> {
    w.write_all(&c.dim.to_le_bytes())?;
    w.write_all(&c.ngram_order.to_le_bytes())?;
    w.write_all(&c.negatives.to_le_bytes())?;
    w.write_all(&c.window.to_le_bytes())?;
    w.write_all(&c.epochs.to_le_bytes())?;
    w.write_all(&c.lr0.to_bits().to_le_bytes())?;
    w.write_all(&c.min_count.to_le_bytes())?;
    w.write_all(&c.subsample_t.to_bits().to_le_bytes())?;
    w.write_all(&c.bucket_count.to_le_bytes())?;
    w.write_all(&c.workers.to_le_bytes())?;
    w.write_all(&c.seed.to_le_bytes())?;
    w.write_all(&c.ngram_dropout_k.to_le_bytes())?;
    let mut flags = 0u32;
    if c.exact_math {
        flags |= FLAG_EXACT_MATH;
    }
    if c.subsample {
        flags |= FLAG_SUBSAMPLE;
    }
    w.write_all(&flags.to_le_bytes())?;
    w.write_all(&c.progress_interval.to_le_bytes())
}

fn read_config<R: Read>(r: &mut CrcReader<R>) -> Result<TrainConfig> {
    let dim = r.u32()?;
    let ngram_order = r.u32()?;
    let negatives = r.u32()?;
    let window = r.u32()?;
    let epochs = r.u32()?;
    let lr0 = r.f64()?;
    let min_count = r.u64()?;
    let subsample_t = r.f64()?;
    let bucket_count = r.u32()?;
    let workers = r.u32()?;
    let seed = r.u64()?;
    let ngram_dropout_k = r.u32()?;
    let flags = r.u32()?;
    let progress_interval = r.u64()?;
    Ok(TrainConfig {
        dim,
        ngram_order,
        negatives,
        window,
        epochs,
        lr0,
        min_count,
        subsample_t,
        subsample: flags & FLAG_SUBSAMPLE != 0,
        bucket_count,
        workers,
        seed,
        ngram_dropout_k,
        exact_math: flags & FLAG_EXACT_MATH != 0,
        progress_interval,
    })
}

impl EmbeddingModel {
    /// Serialize into any writer, ending with a CRC-32 of all preceding bytes.
    pub fn write_to<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = CrcWriter {
            inner: BufWriter::with_capacity(1 << 20, writer),
            crc: Crc32::new(),
        };
        let h = &self.header;
        w.write_all(&MAGIC)?;
        w.write_all(&h.format_version.to_le_bytes())?;
        w.write_all(&h.dim.to_le_bytes())?;
        w.write_all(&h.vocab_size.to_le_bytes())?;
        w.write_all(&h.bucket_count.to_le_bytes())?;
        w.write_all(&h.ngram_order.to_le_bytes())?;
        write_config(&mut w, &h.train_config)?;

        for (word, &count) in self.vocab.words().iter().zip(self.vocab.counts()) {
            w.write_all(&(word.len() as u32).to_le_bytes())?;
            w.write_all(word.as_bytes())?;
            w.write_all(&count.to_le_bytes())?;
        }

        let mut buf = Vec::with_capacity(4 * 16384);
        for chunk in self.input.chunks(16384).chain(self.output.chunks(16384)) {
            buf.clear();
            for x in chunk {
                buf.extend_from_slice(&x.to_le_bytes());
            }
            w.write_all(&buf)?;
        }

        let crc = w.crc.clone().finalize();
        let mut inner = w.inner;
        inner.write_all(&crc.to_le_bytes())?;
        inner.flush()?;
        Ok(())
    }

    /// Save to `path`. The file is written next to the target and renamed
    /// into place, so readers never observe a partial model.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let tmp = tmp_path(path);
        let file = File::create(&tmp).map_err(|source| Error::Open {
            path: tmp.clone(),
            source,
        })?;
        let res = self.write_to(&file).and_then(|_| Ok(file.sync_all()?));
        if let Err(e) = res {
            let _ = fs::remove_file(&tmp);
            return Err(e);
        }
        fs::rename(&tmp, path)?;
        Ok(())
    }

    /// Deserialize from a reader. `len_hint` is the total byte length when
    /// known; it lets corrupt headers fail before large allocations.
    pub fn read_from<R: Read>(reader: R, len_hint: Option<u64>) -> Result<Self> {
        let mut r = CrcReader {
            inner: reader,
            crc: Crc32::new(),
            consumed: 0,
        };
        let mut magic = [0u8; 8];
        r.exact(&mut magic)?;
        if magic != MAGIC {
            return Err(Error::NotAModel);
        }
        let version = r.u32()?;
        if version != FORMAT_VERSION {
            return Err(Error::UnsupportedVersion {
                found: version,
                expected: FORMAT_VERSION,
            });
        }
        let dim = r.u32()?;
        let vocab_size = r.u32()?;
        let bucket_count = r.u32()?;
        let ngram_order = r.u32()?;
        let config = read_config(&mut r)?;
        if config.dim != dim || config.bucket_count != bucket_count || config.ngram_order != ngram_order {
            return Err(Error::Corrupt("header disagrees with training configuration".into()));
        }
        if dim == 0 || vocab_size == 0 {
            return Err(Error::Corrupt("zero dimension or empty vocabulary".into()));
        }

        let mut entries = Vec::with_capacity(vocab_size.min(1 << 20) as usize);
        for _ in 0..vocab_size {
            let len = r.u32()?;
            if len == 0 || len > MAX_WORD_BYTES {
                return Err(Error::Corrupt(format!("invalid word length {len}")));
            }
            let mut bytes = vec![0u8; len as usize];
            r.exact(&mut bytes)?;
            let word = String::from_utf8(bytes)
                .map_err(|_| Error::Corrupt("word is not valid UTF-8".into()))?;
            let count = r.u64()?;
            entries.push((word, count));
        }
        let vocab = Vocabulary::from_counts(entries, config.min_count, config.subsample_t)?;
        let hasher = NgramHasher::new(ngram_order, bucket_count, vocab_size)?;

        let input_len = hasher
            .rows()
            .checked_mul(dim as usize)
            .ok_or_else(|| Error::Corrupt("matrix size overflows".into()))?;
        let output_len = vocab_size as usize * dim as usize;
        if let Some(total) = len_hint {
            let needed = r.consumed + 4 * (input_len as u64 + output_len as u64) + 4;
            if total < needed {
                return Err(Error::Truncated);
            }
        }
        let input = r.f32s(input_len)?;
        let output = r.f32s(output_len)?;

        let computed = r.crc.clone().finalize();
        let mut stored = [0u8; 4];
        match r.inner.read_exact(&mut stored) {
            Ok(()) => {}
            Err(e) if e.kind() == io::ErrorKind::UnexpectedEof => return Err(Error::Truncated),
            Err(e) => return Err(e.into()),
        }
        let stored = u32::from_le_bytes(stored);
        if stored != computed {
            return Err(Error::ChecksumMismatch { stored, computed });
        }
        let mut probe = [0u8; 1];
        if r.inner.read(&mut probe)? != 0 {
            return Err(Error::Corrupt("trailing bytes after checksum".into()));
        }
        if input.iter().chain(&output).any(|x| !x.is_finite()) {
            return Err(Error::Corrupt("non-finite parameter".into()));
        }

        EmbeddingModel::from_parts(vocab, hasher, config, input, output)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|source| Error::Open {
            path: path.to_owned(),
            source,
        })?;
        let len = file.metadata().ok().map(|m| m.len());
        Self::read_from(BufReader::with_capacity(1 << 20, file), len)
    }
}

pub(crate) fn tmp_path(path: &Path) -> std::path::PathBuf {
    let mut name = path.file_name().unwrap_or_default().to_os_string();
    name.push(format!(".tmp{}", std::process::id()));
    path.with_file_name(name)
}

/// Contents of a head sidecar file: shape metadata, strings (e.g. a token
/// vocabulary) and `f64` tensors.
///
/// Layout: magic(8), version u32, meta count u32 + u32s, string count u32 +
/// (u32 length, UTF-8 bytes)*, tensor count u32 + (u64 length, f64s)*,
/// CRC-32 of everything before it.
#[derive(Clone, Debug, Default, PartialEq)]
pub(crate) struct Sidecar {
    pub meta: Vec<u32>,
    pub strings: Vec<String>,
    pub tensors: Vec<Vec<f64>>,
}

pub(crate) const SIDECAR_VERSION: u32 = 1;

impl Sidecar {
    pub fn write_to<W: Write>(&self, magic: &[u8; 8], writer: W) -> Result<()> {
        let mut w = CrcWriter {
            inner: BufWriter::new(writer),
            crc: Crc32::new(),
        };
        w.write_all(magic)?;
        w.write_all(&SIDECAR_VERSION.to_le_bytes())?;
        w.write_all(&(self.meta.len() as u32).to_le_bytes())?;
        for m in &self.meta {
            w.write_all(&m.to_le_bytes())?;
        }
        w.write_all(&(self.strings.len() as u32).to_le_bytes())?;
        for s in &self.strings {
            w.write_all(&(s.len() as u32).to_le_bytes())?;
            w.write_all(s.as_bytes())?;
        }
        w.write_all(&(self.tensors.len() as u32).to_le_bytes())?;
        for t in &self.tensors {
            w.write_all(&(t.len() as u64).to_le_bytes())?;
            for x in t {
                w.write_all(&x.to_le_bytes())?;
            }
        }
        let crc = w.crc.clone().finalize();
        let mut inner = w.inner;
        inner.write_all(&crc.to_le_bytes())?;
        inner.flush()?;
        Ok(())
    }

    pub fn read_from<R: Read>(magic: &[u8; 8], reader: R, len_hint: Option<u64>) -> Result<Self> {
        let mut r = CrcReader {
            inner: reader,
            crc: Crc32::new(),
            consumed: 0,
        };
        let budget = len_hint.unwrap_or(u64::MAX);
        let mut found = [0u8; 8];
        r.exact(&mut found)?;
        if &found != magic {
            return Err(Error::NotAModel);
        }
        let version = r.u32()?;
        if version != SIDECAR_VERSION {
            return Err(Error::UnsupportedVersion {
                found: version,
                expected: SIDECAR_VERSION,
            });
        }
        let check = |r: &CrcReader<R>, bytes: u64| {
            if r.consumed.saturating_add(bytes) > budget {
                Err(Error::Truncated)
            } else {
                Ok(())
            }
        };
        let n = r.u32()? as u64;
        check(&r, 4 * n)?;
        let meta = (0..n).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
        let n = r.u32()?;
        let mut strings = Vec::new();
        for _ in 0..n {
            let len = r.u32()?;
            if len > MAX_WORD_BYTES {
                return Err(Error::Corrupt(format!("invalid string length {len}")));
            }
            let mut bytes = vec![0u8; len as usize];
            r.exact(&mut bytes)?;
            strings.push(
                String::from_utf8(bytes).map_err(|_| Error::Corrupt("string is not valid UTF-8".into()))?,
            );
        }
        let n = r.u32()?;
        let mut tensors = Vec::new();
        for _ in 0..n {
            let len = r.u64()?;
            check(&r, len.saturating_mul(8))?;
            let t = (0..len).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
            if t.iter().any(|x| !x.is_finite()) {
                return Err(Error::Corrupt("non-finite parameter".into()));
            }
            tensors.push(t);
        }
        let computed = r.crc.clone().finalize();
        let mut stored = [0u8; 4];
        match r.inner.read_exact(&mut stored) {
            Ok(()) => {}
            Err(e) if e.kind() == io::ErrorKind::UnexpectedEof => return Err(Error::Truncated),
            Err(e) => return Err(e.into()),
        }
        let stored = u32::from_le_bytes(stored);
        if stored != computed {
            return Err(Error::ChecksumMismatch { stored, computed });
        }
        let mut probe = [0u8; 1];
        if r.inner.read(&mut probe)? != 0 {
            return Err(Error::Corrupt("trailing bytes after checksum".into()));
        }
        Ok(Sidecar { meta, strings, tensors })
    }

    pub fn save(&self, magic: &[u8; 8], path: &Path) -> Result<()> {
        let tmp = tmp_path(path);
        let file = File::create(&tmp).map_err(|source| Error::Open {
            path: tmp.clone(),
            source,
        })?;
        let res = self.write_to(magic, &file).and_then(|_| Ok(file.sync_all()?));
        if let Err(e) = res {
            let _ = fs::remove_file(&tmp);
            return Err(e);
        }
        fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(magic: &[u8; 8], path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|source| Error::Open {
            path: path.to_owned(),
            source,
        })?;
        let len = file.metadata().ok().map(|m| m.len());
        Self::read_from(magic, BufReader::new(file), len)
    }
}
