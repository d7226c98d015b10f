//! Procedural generation of biased image datasets, plus a binary loader for
//! externally produced datasets in the same format.
//!
//! Each class has a fixed 8×8 binary glyph (its shape identity) and a
//! canonical color from an evenly spaced palette wheel (its bias attribute).
//! A bias-ALIGNED sample renders class c's glyph in palette color c; a
//! bias-CONFLICTING sample renders it in some other class's color, chosen
//! uniformly. The training and validation splits contain a configurable
//! fraction of conflicting samples (the diversity ratio), while the two test
//! splits are pure: one fully aligned, one fully conflicting.
//!
//! Rendering: glyph upscaled to H×W by nearest neighbor, colored, uniform
//! noise of amplitude 0.05 added per channel value, then the image is min-max
//! normalized to [0,1] and every pixel is quantized to f32 precision — so the
//! in-memory dataset round-trips bitwise through the binary format.
//!
//! Binary format (little-endian): magic `BLDS`, u32 version = 1, u32 class
//! count, u32 channels (must be 3), u32 height, u32 width; then the four
//! splits in the order train, val, test_aligned, test_conflicting, each as a
//! u64 record count followed by records of u16 label, u16 bias_attr,
//! u8 aligned flag, and channels·height·width f32 pixels.

use crate::matrix::Matrix;
use crate::nn::LabeledSet;
use crate::rng::Rng;
use crate::{Error, Result};
use std::io::{Read, Write};
use std::path::Path;

pub const CHANNELS: usize = 3;
const MAGIC: &[u8; 4] = b"BLDS";
const FORMAT_VERSION: u32 = 1;
/// Seed for the per-class glyph templates; independent of the dataset seed so
/// class shapes are stable across all generated datasets.
const GLYPH_SEED: u64 = 0xB1A5_1E45;
const NOISE_AMPLITUDE: f64 = 0.05;

/// Generation parameters. Images are 3×height×width.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BiasSpec {
    pub num_classes: usize,
    pub height: usize,
    pub width: usize,
    /// Fraction of bias-conflicting samples in train and val.
    pub diversity_ratio: f64,
    pub train_count: usize,
    pub val_count: usize,
    /// Size of each of the two test splits.
    pub test_count: usize,
    pub seed: u64,
}

impl Default for BiasSpec {
    fn default() -> BiasSpec {
        BiasSpec {
            num_classes: 10,
            height: 16,
            width: 16,
            diversity_ratio: 0.05,
            train_count: 5000,
            val_count: 1000,
            test_count: 1024,
            seed: 1,
        }
    }
}

impl BiasSpec {
    pub fn validate(&self) -> Result<()> {
        if self.num_classes < 2 || self.num_classes > u16::MAX as usize {
            return Err(Error::Argument(format!(
                "num_classes must be in [2, 65535], got {}",
                self.num_classes
            )));
        }
        if self.height < 4 || self.width < 4 {
            return Err(Error::Argument(format!(
                "image extent must be ≥ 4, got {}x{}",
                self.height, self.width
            )));
        }
        if !(0.0..0.5).contains(&self.diversity_ratio) {
            return Err(Error::Argument(format!(
                "diversity_ratio must be in [0, 0.5) so bias dominates, got {}",
                self.diversity_ratio
            )));
        }
        for (name, count) in
            [("train", self.train_count), ("val", self.val_count), ("test", self.test_count)]
        {
            if count < self.num_classes {
                return Err(Error::Argument(format!(
                    "{name}_count {count} is below num_classes {}; every class must appear",
                    self.num_classes
                )));
            }
        }
        Ok(())
    }

    pub fn pixels(&self) -> usize {
        CHANNELS * self.height * self.width
    }
}

/// One image with its semantic label and its bias attribute. The canonical
/// attribute of class c is c itself, so `aligned ⇔ bias_attr == label`.
#[derive(Debug, Clone, PartialEq)]
pub struct BiasedSample {
    /// channels×(height·width); values in [0,1], exactly f32-representable.
    pub image: Matrix,
    pub label: usize,
    pub bias_attr: usize,
    pub aligned: bool,
}

/// The four splits of a generated (or loaded) dataset.
#[derive(Debug, Clone)]
pub struct BiasedDataset {
    pub spec: BiasSpec,
    pub train: Vec<BiasedSample>,
    pub val: Vec<BiasedSample>,
    pub test_aligned: Vec<BiasedSample>,
    pub test_conflicting: Vec<BiasedSample>,
}

/// Dataset identity is the image geometry plus the sample content. The
/// provenance fields of the spec (seed, counts, ratio) are deliberately not
/// compared: a loaded dataset cannot know the seed that generated it.
impl PartialEq for BiasedDataset {
    fn eq(&self, other: &BiasedDataset) -> bool {
        self.spec.num_classes == other.spec.num_classes
            && self.spec.height == other.spec.height
            && self.spec.width == other.spec.width
            && self.train == other.train
            && self.val == other.val
            && self.test_aligned == other.test_aligned
            && self.test_conflicting == other.test_conflicting
    }
}

impl BiasedDataset {
    pub fn splits(&self) -> [(&'static str, &[BiasedSample]); 4] {
        [
            ("train", &self.train),
            ("val", &self.val),
            ("test_aligned", &self.test_aligned),
            ("test_conflicting", &self.test_conflicting),
        ]
    }
}

/// The 8×8 binary glyph of class c, row-major bits. Deterministic and
/// independent of any dataset seed.
pub fn glyph(class: usize) -> u64 {
    let mut rng = Rng::stream(GLYPH_SEED, class as u64);
    loop {
        let bits = rng.next_u64();
        // A glyph needs both on and off pixels for contrast; with 16..48 set
        // bits the class shapes also keep roughly comparable brightness.
        if (16..=48).contains(&bits.count_ones()) {
            return bits;
        }
    }
}

/// Canonical RGB color of bias attribute `attr` among `num_classes`: evenly
/// spaced hues at saturation 0.8, value 0.9.
pub fn palette(attr: usize, num_classes: usize) -> [f64; 3] {
    let h6 = 6.0 * attr as f64 / num_classes as f64;
    let (s, v) = (0.8, 0.9);
    let sector = (h6.floor() as usize) % 6;
    let f = h6 - h6.floor();
    let p = v * (1.0 - s);
    let q = v * (1.0 - s * f);
    let t = v * (1.0 - s * (1.0 - f));
    match sector {
        0 => [v, t, p],
        1 => [q, v, p],
        2 => [p, v, t],
        3 => [p, q, v],
        4 => [t, p, v],
        _ => [v, p, q],
    }
}

fn render(spec: &BiasSpec, label: usize, bias_attr: usize, rng: &mut Rng) -> Matrix {
    let (h, w) = (spec.height, spec.width);
    let bits = glyph(label);
    let rgb = palette(bias_attr, spec.num_classes);
    let mut raw = vec![0.0f64; CHANNELS * h * w];
    let mut idx = 0;
    for color in rgb {
        for y in 0..h {
            let ty = y * 8 / h;
            for x in 0..w {
                let tx = x * 8 / w;
                let on = (bits >> (ty * 8 + tx)) & 1 == 1;
                let base = if on { color } else { 0.0 };
                raw[idx] = base + rng.uniform(-NOISE_AMPLITUDE, NOISE_AMPLITUDE).unwrap();
                idx += 1;
            }
        }
    }
    let min = raw.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = raw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let scale = if max > min { 1.0 / (max - min) } else { 0.0 };
    Matrix::from_fn(CHANNELS, h * w, |r, c| {
        let v = (raw[r * h * w + c] - min) * scale;
        // Quantize to f32 so the binary round trip is bitwise exact.
        v as f32 as f64
    })
}

/// Per-class sizes for a split of `count` samples: as even as possible, with
/// the remainder going to the lowest class indices.
fn class_sizes(count: usize, num_classes: usize) -> Vec<usize> {
    (0..num_classes).map(|c| count / num_classes + usize::from(c < count % num_classes)).collect()
}

fn build_split(
    spec: &BiasSpec,
    count: usize,
    conflicting_total: usize,
    rng: &mut Rng,
) -> Result<Vec<BiasedSample>> {
    let c_count = spec.num_classes;
    let sizes = class_sizes(count, c_count);
    let conflict_sizes = class_sizes(conflicting_total, c_count);
    let mut samples = Vec::with_capacity(count);
    for class in 0..c_count {
        if conflict_sizes[class] > sizes[class] {
            return Err(Error::Argument(format!(
                "class {class}: {} conflicting samples exceed its {} total",
                conflict_sizes[class], sizes[class]
            )));
        }
        for i in 0..sizes[class] {
            // Aligned samples first, conflicting ones at the tail of each
            // class run; draw order per sample is palette choice then noise.
            let conflicting = i >= sizes[class] - conflict_sizes[class];
            let bias_attr = if conflicting {
                let j = rng.index(c_count - 1);
                j + usize::from(j >= class)
            } else {
                class
            };
            let image = render(spec, class, bias_attr, rng);
            samples.push(BiasedSample {
                image,
                label: class,
                bias_attr,
                aligned: !conflicting,
            });
        }
    }
    Ok(samples)
}

/// Generates the four splits deterministically from the spec. A single
/// generator seeded with `spec.seed` drives everything, consumed in the fixed
/// order train, val, test_aligned, test_conflicting.
pub fn generate(spec: &BiasSpec) -> Result<BiasedDataset> {
    spec.validate()?;
    let mut rng = Rng::new(spec.seed);
    let round_conflicting =
        |count: usize| (spec.diversity_ratio * count as f64).round() as usize;
    let train = build_split(spec, spec.train_count, round_conflicting(spec.train_count), &mut rng)?;
    let val = build_split(spec, spec.val_count, round_conflicting(spec.val_count), &mut rng)?;
    let test_aligned = build_split(spec, spec.test_count, 0, &mut rng)?;
    let test_conflicting = build_split(spec, spec.test_count, spec.test_count, &mut rng)?;
    Ok(BiasedDataset { spec: *spec, train, val, test_aligned, test_conflicting })
}

fn mean_color(sample: &BiasedSample) -> [f64; 3] {
    let mut out = [0.0; 3];
    let pixels = sample.image.cols() as f64;
    for (ch, acc) in out.iter_mut().enumerate() {
        for &v in sample.image.row(ch) {
            *acc += v;
        }
        *acc /= pixels;
    }
    out
}

/// A deliberately crippled classifier that reads ONLY mean color: fits one
/// centroid per class on the training split, then classifies by nearest
/// centroid (ties to the lowest class). Returns accuracy on (test_aligned,
/// test_conflicting). Because color is the bias attribute, this bounds how
/// far a model can get on the shortcut alone.
pub fn color_only_baseline(ds: &BiasedDataset) -> Result<(f64, f64)> {
    let c_count = ds.spec.num_classes;
    let mut centroids = vec![[0.0; 3]; c_count];
    let mut counts = vec![0usize; c_count];
    for s in &ds.train {
        let m = mean_color(s);
        for ch in 0..3 {
            centroids[s.label][ch] += m[ch];
        }
        counts[s.label] += 1;
    }
    for (class, count) in counts.iter().enumerate() {
        if *count == 0 {
            return Err(Error::Data(format!("class {class} has no training samples")));
        }
        for ch in 0..3 {
            centroids[class][ch] /= *count as f64;
        }
    }
    let accuracy = |split: &[BiasedSample]| -> Result<f64> {
        if split.is_empty() {
            return Err(Error::Data("empty test split".into()));
        }
        let mut correct = 0;
        for s in split {
            let m = mean_color(s);
            let mut best = 0;
            let mut best_d = f64::INFINITY;
            for (class, centroid) in centroids.iter().enumerate() {
                let d: f64 =
                    (0..3).map(|ch| (m[ch] - centroid[ch]) * (m[ch] - centroid[ch])).sum();
                if d < best_d {
                    best_d = d;
                    best = class;
                }
            }
            if best == s.label {
                correct += 1;
            }
        }
        Ok(correct as f64 / split.len() as f64)
    };
    Ok((accuracy(&ds.test_aligned)?, accuracy(&ds.test_conflicting)?))
}

/// Flattens samples into a training-ready set: one row per sample, pixels in
/// channel-major order, f64.
pub fn to_labeled_set<'a>(
    samples: impl IntoIterator<Item = &'a BiasedSample>,
    num_classes: usize,
) -> Result<LabeledSet> {
    let samples: Vec<&BiasedSample> = samples.into_iter().collect();
    if samples.is_empty() {
        return Err(Error::Data("no samples to convert".into()));
    }
    let d = samples[0].image.rows() * samples[0].image.cols();
    let images = Matrix::from_fn(samples.len(), d, |r, c| samples[r].image.as_slice()[c]);
    let labels = samples.iter().map(|s| s.label).collect();
    LabeledSet::new(images, labels, num_classes)
}

// ---------------------------------------------------------------------------
// Binary serialization
// ---------------------------------------------------------------------------

pub fn save_binary(ds: &BiasedDataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = std::io::BufWriter::new(file);
    let mut write = |bytes: &[u8]| out.write_all(bytes).map_err(|e| Error::io(path, e));
    write(MAGIC)?;
    write(&FORMAT_VERSION.to_le_bytes())?;
    write(&(ds.spec.num_classes as u32).to_le_bytes())?;
    write(&(CHANNELS as u32).to_le_bytes())?;
    write(&(ds.spec.height as u32).to_le_bytes())?;
    write(&(ds.spec.width as u32).to_le_bytes())?;
    for (_, split) in ds.splits() {
        write(&(split.len() as u64).to_le_bytes())?;
        for s in split {
            write(&(s.label as u16).to_le_bytes())?;
            write(&(s.bias_attr as u16).to_le_bytes())?;
            write(&[u8::from(s.aligned)])?;
            for &v in s.image.as_slice() {
                write(&(v as f32).to_le_bytes())?;
            }
        }
    }
    let mut out = out;
    out.flush().map_err(|e| Error::io(path, e))
}

/// Byte-slice reader that reports the offset of whatever it failed to parse.
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
        let slice = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(slice)
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn fail<T>(&self, at: usize, message: String) -> Result<T> {
        Err(Error::Format { offset: at as u64, message })
    }
}

pub fn load_binary(path: impl AsRef<Path>) -> Result<BiasedDataset> {
    let path = path.as_ref();
    let mut buf = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut buf))
        .map_err(|e| Error::io(path, e))?;
    let mut r = Reader { buf: &buf, pos: 0 };

    let magic = r.take(4, "magic")?;
    if magic != MAGIC {
        return r.fail(0, format!("bad magic {magic:?}, expected `BLDS`"));
    }
    let at = r.pos;
    let version = r.u32("version")?;
    if version != FORMAT_VERSION {
        return r.fail(at, format!("unsupported version {version}, expected {FORMAT_VERSION}"));
    }
    let at = r.pos;
    let num_classes = r.u32("class count")? as usize;
    if !(2..=u16::MAX as usize).contains(&num_classes) {
        return r.fail(at, format!("class count {num_classes} outside [2, 65535]"));
    }
    let at = r.pos;
    let channels = r.u32("channel count")? as usize;
    if channels != CHANNELS {
        return r.fail(at, format!("unsupported channel count {channels}, expected {CHANNELS}"));
    }
    let at = r.pos;
    let height = r.u32("height")? as usize;
    let width = r.u32("width")? as usize;
    if height == 0 || width == 0 {
        return r.fail(at, format!("degenerate image extent {height}x{width}"));
    }
    let pixel_count = channels * height * width;

    let mut splits: Vec<Vec<BiasedSample>> = Vec::with_capacity(4);
    for split_name in ["train", "val", "test_aligned", "test_conflicting"] {
        let count = r.u64(&format!("{split_name} count"))? as usize;
        let mut split = Vec::with_capacity(count.min(1 << 20));
        for i in 0..count {
            let what = format!("{split_name} record {i}");
            let at = r.pos;
            let label = r.u16(&what)? as usize;
            if label >= num_classes {
                return r.fail(at, format!("{what}: label {label} ≥ {num_classes}"));
            }
            let at = r.pos;
            let bias_attr = r.u16(&what)? as usize;
            if bias_attr >= num_classes {
                return r.fail(at, format!("{what}: bias_attr {bias_attr} ≥ {num_classes}"));
            }
            let at = r.pos;
            let aligned = match r.take(1, &what)?[0] {
                0 => false,
                1 => true,
                other => return r.fail(at, format!("{what}: aligned flag {other} not 0/1")),
            };
            if aligned != (label == bias_attr) {
                return r.fail(
                    at,
                    format!(
                        "{what}: aligned flag contradicts label {label} / bias_attr {bias_attr}"
                    ),
                );
            }
            let at = r.pos;
            let bytes = r.take(4 * pixel_count, &what)?;
            let mut pixels = Vec::with_capacity(pixel_count);
            for (p, chunk) in bytes.chunks_exact(4).enumerate() {
                let v = f32::from_le_bytes(chunk.try_into().unwrap());
                if !(0.0..=1.0).contains(&v) {
                    return r.fail(at + 4 * p, format!("{what}: pixel {v} outside [0,1]"));
                }
                pixels.push(v as f64);
            }
            let image = Matrix::from_vec(channels, height * width, pixels)?;
            split.push(BiasedSample { image, label, bias_attr, aligned });
        }
        splits.push(split);
    }
    if r.pos != buf.len() {
        return r.fail(r.pos, format!("{} trailing bytes after the last split", buf.len() - r.pos));
    }

    let test_conflicting = splits.pop().unwrap();
    let test_aligned = splits.pop().unwrap();
    let val = splits.pop().unwrap();
    let train = splits.pop().unwrap();
    // The descriptive fields are reconstructed; the generator seed cannot be
    // recovered from a file and is recorded as 0.
    let conflicting = train.iter().filter(|s| !s.aligned).count();
    let spec = BiasSpec {
        num_classes,
        height,
        width,
        diversity_ratio: if train.is_empty() {
            0.0
        } else {
            conflicting as f64 / train.len() as f64
        },
        train_count: train.len(),
        val_count: val.len(),
        test_count: test_aligned.len(),
        seed: 0,
    };
    Ok(BiasedDataset { spec, train, val, test_aligned, test_conflicting })
}
