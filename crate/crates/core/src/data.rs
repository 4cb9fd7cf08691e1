//! Synthetic training data and every on-disk format.
//!
//! All binary formats are little-endian:
//!
//! * Dataset `FDS1`: `u32 N, u32 width, u32 height, u32 P, u64 seed,
//!   f32 noise_std`, then `N` records of `[image f32 x 3WH | params f32 x P]`.
//! * Model `FMM1`: `u32 n_vertices, u32 n_triangles, u32 shape_dim,
//!   u32 color_dim, u64 seed`, then base vertices (f32), triangle indices
//!   (u32), base colors (f32), shape basis and color basis (f32, vector by
//!   vector).
//! * Weights `BNW1`: `u32 layer_count`, `u32 rows, u32 cols` per layer, then
//!   per layer the row-major f32 weight matrix followed by the f32 bias.
//! * Images: binary PPM (`P6`, maxval 255, byte = `round(255 v)`).

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::{Array1, Array2};

use crate::bnn::{preprocess, Layer, Network, TrainingSet, FEATURE_DIM};
use crate::error::{Error, Result};
use crate::render::{render, Image, RenderConfig};
use crate::rng::{role, Rng};
use crate::scene::{MorphableModel, PriorSpec, SceneParams};

pub const DATASET_MAGIC: &[u8; 4] = b"FDS1";
pub const MODEL_MAGIC: &[u8; 4] = b"FMM1";
pub const WEIGHTS_MAGIC: &[u8; 4] = b"BNW1";
const DATASET_HEADER_LEN: u64 = 32;

/// Formats like C's `%.9g`: nine significant digits, trailing zeros removed.
pub fn sig9(x: f64) -> String {
    if x == 0.0 {
        return "0".into();
    }
    if x.is_nan() {
        return "nan".into();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    let sci = format!("{x:.8e}");
    let (mantissa, exp) = sci.split_once('e').expect("scientific format");
    let exp: i32 = exp.parse().expect("exponent");
    let strip = |s: String| -> String {
        if s.contains('.') {
            s.trim_end_matches('0').trim_end_matches('.').to_string()
        } else {
            s
        }
    };
    if (-5..9).contains(&exp) {
        let decimals = (8 - exp).max(0) as usize;
        strip(format!("{x:.decimals$}"))
    } else {
        let m = strip(mantissa.to_string());
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{m}e{sign}{:02}", exp.abs())
    }
}

// ---------------------------------------------------------------- datasets

/// One training pair.
#[derive(Debug, Clone, PartialEq)]
pub struct Record {
    pub image: Image,
    pub params: Vec<f32>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DatasetHeader {
    pub count: u32,
    pub width: u32,
    pub height: u32,
    pub param_dim: u32,
    pub seed: u64,
    pub noise_std: f32,
}

impl DatasetHeader {
    fn record_len(&self) -> u64 {
        4 * (3 * self.width as u64 * self.height as u64 + self.param_dim as u64)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub header: DatasetHeader,
    pub records: Vec<Record>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Index where the held-out tail begins (first 90% train).
    pub fn split_index(&self) -> usize {
        split_index(self.len())
    }
}

pub fn split_index(n: usize) -> usize {
    n * 9 / 10
}

/// Lazily renders `(y_i, x_i)` pairs: `y_i` from the prior, `x_i` the render
/// plus clamped Gaussian noise. With zero noise no extra draws are made and
/// `x_i` is the exact render.
pub struct DatasetGenerator<'a> {
    model: &'a MorphableModel,
    prior: &'a PriorSpec,
    render: &'a RenderConfig,
    noise_std: f64,
    remaining: usize,
    rng: Rng,
}

impl<'a> DatasetGenerator<'a> {
    pub fn new(
        model: &'a MorphableModel,
        prior: &'a PriorSpec,
        render: &'a RenderConfig,
        count: usize,
        noise_std: f64,
        seed: u64,
    ) -> Self {
        DatasetGenerator {
            model,
            prior,
            render,
            noise_std,
            remaining: count,
            rng: Rng::stream(seed, role::DATASET, 0),
        }
    }
}

/// Adds clamped per-channel Gaussian noise.
pub fn add_noise(image: &Image, noise_std: f64, rng: &mut Rng) -> Image {
    if noise_std == 0.0 {
        return image.clone();
    }
    let data = image
        .data()
        .iter()
        .map(|v| (*v as f64 + noise_std * rng.normal()).clamp(0.0, 1.0) as f32)
        .collect();
    Image::from_raw(image.width(), image.height(), data).expect("same shape, clamped")
}

impl Iterator for DatasetGenerator<'_> {
    type Item = Result<(Image, SceneParams)>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.remaining == 0 {
            return None;
        }
        self.remaining -= 1;
        let y = self.model.sample_prior(self.prior, &mut self.rng);
        Some(render(self.model, &y, self.render).map(|clean| (add_noise(&clean, self.noise_std, &mut self.rng), y)))
    }
}

pub fn generate_dataset(
    model: &MorphableModel,
    prior: &PriorSpec,
    render_cfg: &RenderConfig,
    count: usize,
    noise_std: f64,
    seed: u64,
) -> Result<Dataset> {
    if count == 0 {
        return Err(Error::contract("dataset needs at least one record"));
    }
    if !(noise_std >= 0.0) {
        return Err(Error::contract("noise std must be nonnegative"));
    }
    let records = DatasetGenerator::new(model, prior, render_cfg, count, noise_std, seed)
        .map(|r| {
            r.map(|(image, y)| Record {
                image,
                params: y.to_vector().iter().map(|v| *v as f32).collect(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Dataset {
        header: DatasetHeader {
            count: count as u32,
            width: render_cfg.width as u32,
            height: render_cfg.height as u32,
            param_dim: model.param_dim() as u32,
            seed,
            noise_std: noise_std as f32,
        },
        records,
    })
}

fn write_f32s<W: Write>(w: &mut W, values: impl IntoIterator<Item = f32>) -> std::io::Result<()> {
    for v in values {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

/// Streams records to disk; [`DatasetWriter::finish`] checks the count.
pub struct DatasetWriter {
    out: BufWriter<File>,
    header: DatasetHeader,
    written: u32,
}

impl DatasetWriter {
    pub fn create(path: &Path, header: DatasetHeader) -> Result<Self> {
        let mut out = BufWriter::new(File::create(path)?);
        out.write_all(DATASET_MAGIC)?;
        for v in [header.count, header.width, header.height, header.param_dim] {
            out.write_all(&v.to_le_bytes())?;
        }
        out.write_all(&header.seed.to_le_bytes())?;
        out.write_all(&header.noise_std.to_le_bytes())?;
        Ok(DatasetWriter {
            out,
            header,
            written: 0,
        })
    }

    pub fn write(&mut self, record: &Record) -> Result<()> {
        if record.image.width() != self.header.width as usize
            || record.image.height() != self.header.height as usize
            || record.params.len() != self.header.param_dim as usize
        {
            return Err(Error::contract("record does not match dataset header"));
        }
        if self.written == self.header.count {
            return Err(Error::contract("more records than declared in the header"));
        }
        write_f32s(&mut self.out, record.image.data().iter().copied())?;
        write_f32s(&mut self.out, record.params.iter().copied())?;
        self.written += 1;
        Ok(())
    }

    pub fn finish(mut self) -> Result<()> {
        if self.written != self.header.count {
            return Err(Error::contract(format!(
                "wrote {} records, header declares {}",
                self.written, self.header.count
            )));
        }
        self.out.flush()?;
        Ok(())
    }
}

pub fn write_dataset(path: &Path, dataset: &Dataset) -> Result<()> {
    let mut w = DatasetWriter::create(path, dataset.header)?;
    for r in &dataset.records {
        w.write(r)?;
    }
    w.finish()
}

/// Reads `buf.len()` bytes or reports where the data ran out.
fn read_exact_at<R: Read>(r: &mut R, buf: &mut [u8], path: &str, offset: u64, what: &str) -> Result<()> {
    let mut filled = 0;
    while filled < buf.len() {
        match r.read(&mut buf[filled..]) {
            Ok(0) => {
                return Err(Error::format(
                    path,
                    offset + filled as u64,
                    format!("truncated file while reading {what}"),
                ))
            }
            Ok(n) => filled += n,
            Err(e) if e.kind() == std::io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e.into()),
        }
    }
    Ok(())
}

fn le_u32(b: &[u8]) -> u32 {
    u32::from_le_bytes(b.try_into().expect("4 bytes"))
}

fn le_f32s(b: &[u8]) -> impl Iterator<Item = f32> + '_ {
    b.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
}

/// Sequential record reader.
pub struct DatasetReader {
    input: BufReader<File>,
    path: String,
    pub header: DatasetHeader,
    next_index: u32,
    buf: Vec<u8>,
}

impl DatasetReader {
    pub fn open(path: &Path) -> Result<Self> {
        let name = path.display().to_string();
        let mut input = BufReader::new(File::open(path)?);
        let mut head = [0u8; DATASET_HEADER_LEN as usize];
        read_exact_at(&mut input, &mut head[..4], &name, 0, "magic")?;
        if &head[..4] != DATASET_MAGIC {
            return Err(Error::format(&name, 0, "bad magic, expected \"FDS1\""));
        }
        read_exact_at(&mut input, &mut head[4..], &name, 4, "header")?;
        let header = DatasetHeader {
            count: le_u32(&head[4..8]),
            width: le_u32(&head[8..12]),
            height: le_u32(&head[12..16]),
            param_dim: le_u32(&head[16..20]),
            seed: u64::from_le_bytes(head[20..28].try_into().expect("8 bytes")),
            noise_std: f32::from_le_bytes(head[28..32].try_into().expect("4 bytes")),
        };
        if header.width == 0 || header.height == 0 {
            return Err(Error::format(&name, 8, "zero image size"));
        }
        let buf = vec![0u8; header.record_len() as usize];
        Ok(DatasetReader {
            input,
            path: name,
            header,
            next_index: 0,
            buf,
        })
    }

    fn offset_of(&self, index: u32) -> u64 {
        DATASET_HEADER_LEN + index as u64 * self.header.record_len()
    }

    fn read_record(&mut self) -> Result<Record> {
        let offset = self.offset_of(self.next_index);
        let what = format!("record {}", self.next_index);
        let mut buf = std::mem::take(&mut self.buf);
        let res = read_exact_at(&mut self.input, &mut buf, &self.path, offset, &what);
        if let Err(e) = res {
            self.buf = buf;
            return Err(e);
        }
        let n_img = 3 * self.header.width as usize * self.header.height as usize;
        let pixels: Vec<f32> = le_f32s(&buf[..4 * n_img]).collect();
        let params: Vec<f32> = le_f32s(&buf[4 * n_img..]).collect();
        self.buf = buf;
        let image = Image::from_raw(self.header.width as usize, self.header.height as usize, pixels)
            .map_err(|e| Error::format(&self.path, offset, e.to_string()))?;
        self.next_index += 1;
        Ok(Record { image, params })
    }

    /// Fails if bytes remain after the declared records.
    pub fn check_end(&mut self) -> Result<()> {
        let mut probe = [0u8; 1];
        match self.input.read(&mut probe)? {
            0 => Ok(()),
            _ => Err(Error::format(
                &self.path,
                self.offset_of(self.header.count),
                format!("trailing data after the {} declared records", self.header.count),
            )),
        }
    }

    /// Skips ahead to record `index` (must not be behind the cursor).
    pub fn skip_to(&mut self, index: u32) -> Result<()> {
        while self.next_index < index {
            self.read_record()?;
        }
        Ok(())
    }
}

impl Iterator for DatasetReader {
    type Item = Result<Record>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.next_index >= self.header.count {
            return None;
        }
        Some(self.read_record())
    }
}

pub fn read_dataset(path: &Path) -> Result<Dataset> {
    let mut reader = DatasetReader::open(path)?;
    let header = reader.header;
    let records = reader.by_ref().collect::<Result<Vec<_>>>()?;
    reader.check_end()?;
    Ok(Dataset { header, records })
}

/// Reads a single record by index.
pub fn read_dataset_record(path: &Path, index: usize) -> Result<Record> {
    let mut reader = DatasetReader::open(path)?;
    if index >= reader.header.count as usize {
        return Err(Error::contract(format!(
            "record {index} out of range, dataset has {}",
            reader.header.count
        )));
    }
    reader.skip_to(index as u32)?;
    reader.next().expect("index checked")
}

/// Preprocessed network inputs and f64 targets for a run of records.
pub fn training_set(records: impl IntoIterator<Item = Result<Record>>, param_dim: usize) -> Result<TrainingSet> {
    let mut inputs = Vec::new();
    let mut targets = Vec::new();
    let mut n = 0;
    for r in records {
        let r = r?;
        if r.params.len() != param_dim {
            return Err(Error::contract("record parameter length mismatch"));
        }
        inputs.extend(preprocess(&r.image)?);
        targets.extend(r.params.iter().map(|v| *v as f64));
        n += 1;
    }
    Ok(TrainingSet {
        inputs: Array2::from_shape_vec((n, FEATURE_DIM), inputs).expect("shape"),
        targets: Array2::from_shape_vec((n, param_dim), targets).expect("shape"),
    })
}

// ---------------------------------------------------------------- PPM

pub fn encode_ppm(image: &Image) -> Vec<u8> {
    let mut out = format!("P6\n{} {}\n255\n", image.width(), image.height()).into_bytes();
    out.extend(image.data().iter().map(|v| (255.0 * *v as f64).round() as u8));
    out
}

pub fn write_ppm(path: &Path, image: &Image) -> Result<()> {
    std::fs::write(path, encode_ppm(image))?;
    Ok(())
}

pub fn decode_ppm(bytes: &[u8], path: &str) -> Result<Image> {
    let mut pos = 0usize;
    let token = |pos: &mut usize| -> Option<(String, usize)> {
        loop {
            while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
                *pos += 1;
            }
            if *pos < bytes.len() && bytes[*pos] == b'#' {
                while *pos < bytes.len() && bytes[*pos] != b'\n' {
                    *pos += 1;
                }
                continue;
            }
            break;
        }
        let start = *pos;
        while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        (start < *pos).then(|| (String::from_utf8_lossy(&bytes[start..*pos]).into_owned(), start))
    };
    let (magic, _) = token(&mut pos).ok_or_else(|| Error::format(path, 0, "empty file"))?;
    if magic != "P6" {
        return Err(Error::format(path, 0, format!("expected binary PPM \"P6\", found {magic:?}")));
    }
    let mut field = |name: &str| -> Result<usize> {
        let (t, at) = token(&mut pos).ok_or_else(|| Error::format(path, pos as u64, format!("missing {name}")))?;
        t.parse()
            .map_err(|_| Error::format(path, at as u64, format!("bad {name} {t:?}")))
    };
    let width = field("width")?;
    let height = field("height")?;
    let maxval = field("maxval")?;
    if maxval != 255 {
        return Err(Error::format(path, pos as u64, format!("maxval must be 255, found {maxval}")));
    }
    // Exactly one whitespace byte separates the header from the raster.
    pos += 1;
    let need = 3 * width * height;
    if bytes.len() < pos + need {
        return Err(Error::format(path, bytes.len() as u64, "truncated raster"));
    }
    let data = bytes[pos..pos + need].iter().map(|b| *b as f32 / 255.0).collect();
    Image::from_raw(width, height, data)
}

pub fn read_ppm(path: &Path) -> Result<Image> {
    decode_ppm(&std::fs::read(path)?, &path.display().to_string())
}

// ---------------------------------------------------------------- model

pub fn write_model(path: &Path, model: &MorphableModel) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MODEL_MAGIC)?;
    for v in [
        model.n_vertices() as u32,
        model.triangles.len() as u32,
        model.shape_dim() as u32,
        model.color_dim() as u32,
    ] {
        w.write_all(&v.to_le_bytes())?;
    }
    w.write_all(&model.seed.to_le_bytes())?;
    write_f32s(&mut w, model.base_vertices.iter().flatten().map(|v| *v as f32))?;
    for t in &model.triangles {
        for i in t {
            w.write_all(&i.to_le_bytes())?;
        }
    }
    write_f32s(&mut w, model.base_colors.iter().flatten().map(|v| *v as f32))?;
    write_f32s(&mut w, model.shape_basis.iter().flatten().map(|v| *v as f32))?;
    write_f32s(&mut w, model.color_basis.iter().flatten().map(|v| *v as f32))?;
    w.flush()?;
    Ok(())
}

/// Byte cursor that reports offsets on failure.
struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a str,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::format(
                self.path,
                self.bytes.len() as u64,
                format!("truncated file while reading {what}"),
            ));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(le_u32(self.take(4, what)?))
    }

    fn f32s(&mut self, n: usize, what: &str) -> Result<Vec<f64>> {
        let b = self.take(4 * n, what)?;
        Ok(le_f32s(b).map(|v| v as f64).collect())
    }

    fn end(&self) -> Result<()> {
        if self.pos != self.bytes.len() {
            return Err(Error::format(self.path, self.pos as u64, "trailing data"));
        }
        Ok(())
    }
}

fn triples(v: Vec<f64>) -> Vec<[f64; 3]> {
    v.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect()
}

pub fn read_model(path: &Path) -> Result<MorphableModel> {
    let bytes = std::fs::read(path)?;
    let name = path.display().to_string();
    let mut c = Cursor {
        bytes: &bytes,
        pos: 0,
        path: &name,
    };
    if c.take(4, "magic")? != MODEL_MAGIC {
        return Err(Error::format(&name, 0, "bad magic, expected \"FMM1\""));
    }
    let n_v = c.u32("vertex count")? as usize;
    let n_tri = c.u32("triangle count")? as usize;
    let ks = c.u32("shape dimension")? as usize;
    let kc = c.u32("color dimension")? as usize;
    let seed = u64::from_le_bytes(c.take(8, "seed")?.try_into().expect("8 bytes"));
    let base_vertices = triples(c.f32s(3 * n_v, "base vertices")?);
    let tri_offset = c.pos;
    let mut triangles = Vec::with_capacity(n_tri);
    for _ in 0..n_tri {
        let t = [c.u32("triangles")?, c.u32("triangles")?, c.u32("triangles")?];
        if t.iter().any(|i| *i as usize >= n_v) {
            return Err(Error::format(&name, tri_offset as u64, "triangle index out of range"));
        }
        triangles.push(t);
    }
    let base_colors = triples(c.f32s(3 * n_v, "base colors")?);
    let shape_basis = (0..ks)
        .map(|_| c.f32s(3 * n_v, "shape basis"))
        .collect::<Result<Vec<_>>>()?;
    let color_basis = (0..kc)
        .map(|_| c.f32s(3 * n_v, "color basis"))
        .collect::<Result<Vec<_>>>()?;
    c.end()?;
    Ok(MorphableModel {
        base_vertices,
        triangles,
        base_colors,
        shape_basis,
        color_basis,
        seed,
    })
}

// ---------------------------------------------------------------- weights

/// Rounds every weight to `f32`, the precision of the weights file.
pub fn round_network(net: &mut Network) {
    for l in &mut net.layers {
        l.weights.mapv_inplace(|v| v as f32 as f64);
        l.bias.mapv_inplace(|v| v as f32 as f64);
    }
}

pub fn write_weights(path: &Path, net: &Network) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(WEIGHTS_MAGIC)?;
    w.write_all(&(net.layers.len() as u32).to_le_bytes())?;
    for l in &net.layers {
        w.write_all(&(l.weights.nrows() as u32).to_le_bytes())?;
        w.write_all(&(l.weights.ncols() as u32).to_le_bytes())?;
    }
    for l in &net.layers {
        write_f32s(&mut w, l.weights.iter().map(|v| *v as f32))?;
        write_f32s(&mut w, l.bias.iter().map(|v| *v as f32))?;
    }
    w.flush()?;
    Ok(())
}

/// Loads weights; the dropout rate is not stored and must be supplied.
pub fn read_weights(path: &Path, dropout: f64) -> Result<Network> {
    let bytes = std::fs::read(path)?;
    let name = path.display().to_string();
    let mut c = Cursor {
        bytes: &bytes,
        pos: 0,
        path: &name,
    };
    if c.take(4, "magic")? != WEIGHTS_MAGIC {
        return Err(Error::format(&name, 0, "bad magic, expected \"BNW1\""));
    }
    let n = c.u32("layer count")? as usize;
    if n == 0 {
        return Err(Error::format(&name, 4, "network has no layers"));
    }
    let mut shapes = Vec::with_capacity(n);
    for _ in 0..n {
        let at = c.pos;
        let rows = c.u32("layer shape")? as usize;
        let cols = c.u32("layer shape")? as usize;
        if let Some((_, prev_cols)) = shapes.last() {
            if *prev_cols != rows {
                return Err(Error::format(&name, at as u64, "inconsistent layer shapes"));
            }
        }
        shapes.push((rows, cols));
    }
    let mut layers = Vec::with_capacity(n);
    for (rows, cols) in shapes {
        let weights = Array2::from_shape_vec((rows, cols), c.f32s(rows * cols, "weights")?).expect("shape");
        let bias = Array1::from_vec(c.f32s(cols, "bias")?);
        layers.push(Layer { weights, bias });
    }
    c.end()?;
    Ok(Network { layers, dropout })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::render::render_with_coverage;
    use crate::scene::{generate_model, ModelConfig};

    fn model() -> MorphableModel {
        generate_model(7, &ModelConfig::default()).unwrap()
    }

    #[test]
    fn sig9_matches_printf() {
        assert_eq!(sig9(0.0), "0");
        assert_eq!(sig9(1.0), "1");
        assert_eq!(sig9(-15878.123456789), "-15878.1235");
        assert_eq!(sig9(0.000123456789123), "0.000123456789");
        assert_eq!(sig9(1.5e-7), "1.5e-07");
        assert_eq!(sig9(123456789012.0), "1.23456789e+11");
        assert_eq!(sig9(999999999.7), "1e+09");
        assert_eq!(sig9(0.1), "0.1");
        assert_eq!(sig9(f64::NEG_INFINITY), "-inf");
    }

    #[test]
    fn noiseless_dataset_is_exact_render() {
        let m = model();
        let prior = PriorSpec::default();
        let rcfg = RenderConfig::default();
        let ds = generate_dataset(&m, &prior, &rcfg, 5, 0.0, 3).unwrap();
        let mut rng = Rng::stream(3, role::DATASET, 0);
        for r in &ds.records {
            let y = m.sample_prior(&prior, &mut rng);
            assert_eq!(r.image, render(&m, &y, &rcfg).unwrap());
            let v: Vec<f32> = y.to_vector().iter().map(|v| *v as f32).collect();
            assert_eq!(r.params, v);
        }
    }

    #[test]
    fn dataset_generation_is_reproducible() {
        let m = model();
        let prior = PriorSpec::default();
        let rcfg = RenderConfig::default();
        let a = generate_dataset(&m, &prior, &rcfg, 4, 0.02, 9).unwrap();
        let b = generate_dataset(&m, &prior, &rcfg, 4, 0.02, 9).unwrap();
        assert_eq!(a, b);
        let c = generate_dataset(&m, &prior, &rcfg, 4, 0.02, 10).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn few_prior_faces_leave_the_frame() {
        let m = model();
        let prior = PriorSpec::default();
        let rcfg = RenderConfig::default();
        let mut rng = Rng::stream(1, role::DATASET, 0);
        let empty = (0..1000)
            .filter(|_| {
                let y = m.sample_prior(&prior, &mut rng);
                render_with_coverage(&m, &y, &rcfg).unwrap().covered_count() == 0
            })
            .count();
        assert!(empty < 50, "{empty} empty renders");
    }

    #[test]
    fn dataset_round_trip_and_errors() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.fds");
        let m = model();
        let ds = generate_dataset(&m, &PriorSpec::default(), &RenderConfig::default(), 3, 0.02, 1).unwrap();
        write_dataset(&path, &ds).unwrap();
        assert_eq!(read_dataset(&path).unwrap(), ds);
        assert_eq!(read_dataset_record(&path, 2).unwrap(), ds.records[2]);

        let mut bytes = std::fs::read(&path).unwrap();
        let good = bytes.clone();
        bytes[0] = b'X';
        std::fs::write(&path, &bytes).unwrap();
        let err = read_dataset(&path).unwrap_err().to_string();
        assert!(err.contains("FDS1") && err.contains("byte 0"), "{err}");

        // Header claims one more record than present.
        let mut bytes = good.clone();
        bytes[4..8].copy_from_slice(&4u32.to_le_bytes());
        std::fs::write(&path, &bytes).unwrap();
        let err = read_dataset(&path).unwrap_err();
        let expected_offset = 32 + 3 * 4 * (3 * 64 * 64 + 30);
        match err {
            Error::Format { offset, message, .. } => {
                assert_eq!(offset, expected_offset as u64);
                assert!(message.contains("truncated"));
            }
            e => panic!("unexpected {e}"),
        }

        // Fewer records declared than present.
        let mut bytes = good;
        bytes[4..8].copy_from_slice(&2u32.to_le_bytes());
        std::fs::write(&path, &bytes).unwrap();
        assert!(matches!(read_dataset(&path), Err(Error::Format { .. })));
    }

    #[test]
    fn ppm_cases() {
        let black = Image::filled(3, 2, [0.0; 3]);
        let bytes = encode_ppm(&black);
        let header = b"P6\n3 2\n255\n";
        assert_eq!(&bytes[..header.len()], header);
        assert!(bytes[header.len()..].iter().all(|b| *b == 0));
        assert_eq!(bytes.len(), header.len() + 18);

        let white = Image::filled(1, 1, [1.0; 3]);
        assert_eq!(&encode_ppm(&white)[b"P6\n1 1\n255\n".len()..], &[255, 255, 255]);

        assert!(decode_ppm(b"P3\n1 1\n255\n0 0 0", "x").is_err());
        assert!(decode_ppm(b"P6\n1 1\n65535\n\0\0\0\0\0\0", "x").is_err());
        assert!(decode_ppm(b"P6\n2 2\n255\n\0\0\0", "x").is_err());
        let commented = decode_ppm(b"P6\n# hi\n1 1\n255\n\x80\x00\xff", "x").unwrap();
        assert_eq!(commented.pixel(0, 0), [128.0 / 255.0, 0.0, 1.0]);
    }

    #[test]
    fn ppm_quantization_bound() {
        let m = model();
        let y = m.sample_prior(&PriorSpec::default(), &mut Rng::new(2));
        let im = render(&m, &y, &RenderConfig::default()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.ppm");
        write_ppm(&path, &im).unwrap();
        let back = read_ppm(&path).unwrap();
        for (a, b) in im.data().iter().zip(back.data()) {
            assert!((a - b).abs() as f64 <= 1.0 / 510.0 + 1e-7);
        }
    }

    #[test]
    fn model_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.fmm");
        let m = model();
        write_model(&path, &m).unwrap();
        assert_eq!(read_model(&path).unwrap(), m);

        let mut bytes = std::fs::read(&path).unwrap();
        bytes.truncate(bytes.len() - 2);
        std::fs::write(&path, &bytes).unwrap();
        assert!(matches!(read_model(&path), Err(Error::Format { .. })));
    }

    #[test]
    fn weights_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("w.bnw");
        let mut net = Network::init(&[10, 4, 4, 6], 0.1, &mut Rng::new(1));
        round_network(&mut net);
        write_weights(&path, &net).unwrap();
        assert_eq!(read_weights(&path, 0.1).unwrap(), net);
        std::fs::write(&path, b"BNW2").unwrap();
        assert!(read_weights(&path, 0.1).unwrap_err().to_string().contains("BNW1"));
    }
}
