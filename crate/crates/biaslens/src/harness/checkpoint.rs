//! Network checkpoints: a little-endian parameter dump with a shape manifest.
//!
//! Layout: magic `BLCK`, u32 version = 1, preset name (u32 length + UTF-8
//! bytes), u32 channels, u32 height, u32 width, u32 num_classes, u64 entry
//! count, then per entry a name (u32 length + bytes), u32 rows, u32 cols and
//! rows·cols f64 values. Entries cover every trainable parameter plus the
//! batchnorm running statistics, so a loaded network evaluates exactly like
//! the one that was saved.

use crate::matrix::Matrix;
use crate::nn::{Mode, Network, NetworkConfig, ParamSnapshot};
use crate::rng::Rng;
use crate::{Error, Result};
use std::io::{Read, Write};
use std::path::Path;

const MAGIC: &[u8; 4] = b"BLCK";
const VERSION: u32 = 1;

pub fn save_checkpoint(preset: &str, net: &mut Network, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = std::io::BufWriter::new(file);
    let mut write = |bytes: &[u8]| out.write_all(bytes).map_err(|e| Error::io(path, e));

    let (c, h, w) = net.config().input_shape;
    let snap = net.snapshot();
    write(MAGIC)?;
    write(&VERSION.to_le_bytes())?;
    write(&(preset.len() as u32).to_le_bytes())?;
    write(preset.as_bytes())?;
    for dim in [c, h, w, net.num_classes()] {
        write(&(dim as u32).to_le_bytes())?;
    }
    write(&(snap.entries.len() as u64).to_le_bytes())?;
    for (name, values) in &snap.entries {
        write(&(name.len() as u32).to_le_bytes())?;
        write(name.as_bytes())?;
        write(&(values.rows() as u32).to_le_bytes())?;
        write(&(values.cols() as u32).to_le_bytes())?;
        for v in values.as_slice() {
            write(&v.to_le_bytes())?;
        }
    }
    let mut out = out;
    out.flush().map_err(|e| Error::io(path, e))
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::Format {
                offset: self.pos as u64,
                message: format!("truncated while reading {what}"),
            });
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn string(&mut self, what: &str) -> Result<String> {
        let at = self.pos;
        let len = self.u32(what)? as usize;
        if len > 1 << 16 {
            return Err(Error::Format {
                offset: at as u64,
                message: format!("{what} length {len} is implausible"),
            });
        }
        let bytes = self.take(len, what)?;
        String::from_utf8(bytes.to_vec()).map_err(|_| Error::Format {
            offset: at as u64,
            message: format!("{what} is not valid UTF-8"),
        })
    }
}

/// Loads a checkpoint, rebuilding the network from its recorded preset and
/// geometry. The returned network is in eval mode.
pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<(String, Network)> {
    let path = path.as_ref();
    let mut buf = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut buf))
        .map_err(|e| Error::io(path, e))?;
    let mut r = Reader { buf: &buf, pos: 0 };

    let magic = r.take(4, "magic")?;
    if magic != MAGIC {
        return Err(Error::Format {
            offset: 0,
            message: format!("bad magic {magic:?}, expected `BLCK`"),
        });
    }
    let at = r.pos;
    let version = r.u32("version")?;
    if version != VERSION {
        return Err(Error::Format {
            offset: at as u64,
            message: format!("unsupported version {version}, expected {VERSION}"),
        });
    }
    let preset = r.string("preset name")?;
    let channels = r.u32("channels")? as usize;
    let height = r.u32("height")? as usize;
    let width = r.u32("width")? as usize;
    let num_classes = r.u32("num_classes")? as usize;
    let entry_count = r.u64("entry count")? as usize;

    let mut entries = Vec::with_capacity(entry_count.min(1 << 12));
    for i in 0..entry_count {
        let what = format!("entry {i}");
        let name = r.string(&what)?;
        let at = r.pos;
        let rows = r.u32(&what)? as usize;
        let cols = r.u32(&what)? as usize;
        if rows == 0 || cols == 0 || rows.saturating_mul(cols) > 1 << 28 {
            return Err(Error::Format {
                offset: at as u64,
                message: format!("{what} `{name}` has implausible shape {rows}x{cols}"),
            });
        }
        let bytes = r.take(8 * rows * cols, &what)?;
        let mut data = Vec::with_capacity(rows * cols);
        for (p, chunk) in bytes.chunks_exact(8).enumerate() {
            let v = f64::from_le_bytes(chunk.try_into().unwrap());
            if !v.is_finite() {
                return Err(Error::Format {
                    offset: (at + 8 + 8 * p) as u64,
                    message: format!("{what} `{name}` holds non-finite value {v}"),
                });
            }
            data.push(v);
        }
        entries.push((name, Matrix::from_vec(rows, cols, data)?));
    }
    if r.pos != buf.len() {
        return Err(Error::Format {
            offset: r.pos as u64,
            message: format!("{} trailing bytes after the last entry", buf.len() - r.pos),
        });
    }

    let config = NetworkConfig::by_name(&preset, (channels, height, width), num_classes)
        .map_err(|e| Error::Format { offset: 0, message: e.to_string() })?;
    // Initialization draws are immediately overwritten by the restore; the
    // dropout stream is irrelevant in eval mode, so any fixed seed works.
    let mut net = Network::new(config, &mut Rng::new(0))?;
    net.restore(&ParamSnapshot { entries }).map_err(|e| Error::Format {
        offset: 0,
        message: format!("parameters do not match preset `{preset}`: {e}"),
    })?;
    net.set_mode(Mode::Eval);
    Ok((preset, net))
}
