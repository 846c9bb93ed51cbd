//! Binary artifact files. Every file starts with a four-byte magic; all
//! integers are little-endian `u32` and all tensors little-endian `f32`.
//!
//! | magic  | contents |
//! |--------|----------|
//! | `SCNN` | version, config block, head flag, shaped weight tensors |
//! | `SWHT` | mode byte, D, epsilon, mean, projection |
//! | `SGMM` | K, D, weights, means, variances |
//! | `SKMS` | K, D, centers |
//! | `CAFV` | version, T, D, row-major descriptors |
//! | `SENC` | encoder tag, length, writer id, doc id, payload |
//!
//! Strings are a `u32` byte length followed by UTF-8.

use std::fs;
use std::io::Write;
use std::path::Path;

use byteorder::{ByteOrder, LittleEndian, WriteBytesExt};
use ndarray::{Array1, Array2};

use crate::cnn::{CnnConfig, CnnModel, Params};
use crate::encoding::{EncoderKind, GlobalDescriptor};
use crate::error::{Error, Result};
use crate::gmm::{GmmModel, KmeansModel};
use crate::whitening::{WhiteningMode, WhiteningTransform};

pub const CNN_MAGIC: &[u8; 4] = b"SCNN";
pub const WHITENING_MAGIC: &[u8; 4] = b"SWHT";
pub const GMM_MAGIC: &[u8; 4] = b"SGMM";
pub const KMEANS_MAGIC: &[u8; 4] = b"SKMS";
pub const DESCRIPTOR_MAGIC: &[u8; 4] = b"CAFV";
pub const ENCODING_MAGIC: &[u8; 4] = b"SENC";

const CNN_VERSION: u32 = 1;
const DESCRIPTOR_VERSION: u32 = 1;

/// Writes through a temporary file in the same directory, then renames.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(dir, e))?;
    tmp.write_all(bytes).map_err(|e| Error::io(path, e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    fn new(magic: &[u8; 4]) -> Self {
        Self { buf: magic.to_vec() }
    }

    fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }

    fn u32(&mut self, v: usize) -> Result<()> {
        let v = u32::try_from(v).map_err(|_| Error::Config(format!("{v} does not fit in u32")))?;
        self.buf.write_u32::<LittleEndian>(v).expect("vec write");
        Ok(())
    }

    fn f32s<'a>(&mut self, vals: impl IntoIterator<Item = &'a f64>) {
        for &v in vals {
            self.buf.write_f32::<LittleEndian>(v as f32).expect("vec write");
        }
    }

    fn string(&mut self, s: &str) -> Result<()> {
        self.u32(s.len())?;
        self.buf.extend_from_slice(s.as_bytes());
        Ok(())
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    name: String,
}

impl<'a> Reader<'a> {
    fn new(bytes: &'a [u8], name: &str, magic: &[u8; 4]) -> Result<Self> {
        let found = bytes.get(..4).unwrap_or(bytes);
        if found != magic {
            return Err(Error::BadMagic {
                path: name.to_string(),
                expected: String::from_utf8_lossy(magic).into_owned(),
                found: String::from_utf8_lossy(found).into_owned(),
            });
        }
        Ok(Self {
            bytes,
            pos: 4,
            name: name.to_string(),
        })
    }

    fn malformed(&self, reason: impl Into<String>) -> Error {
        Error::Malformed {
            path: self.name.clone(),
            reason: reason.into(),
        }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| self.malformed(format!("truncated at byte {}", self.pos)))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(LittleEndian::read_u32(self.take(4)?) as usize)
    }

    fn f32s(&mut self, n: usize) -> Result<Vec<f64>> {
        let len = n.checked_mul(4).ok_or_else(|| self.malformed("tensor too large"))?;
        let raw = self.take(len)?;
        Ok(raw.chunks_exact(4).map(|c| LittleEndian::read_f32(c) as f64).collect())
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u32()?;
        let raw = self.take(n)?;
        String::from_utf8(raw.to_vec()).map_err(|_| self.malformed("invalid UTF-8 string"))
    }

    fn finish(self) -> Result<()> {
        if self.pos != self.bytes.len() {
            return Err(self.malformed(format!("{} trailing bytes", self.bytes.len() - self.pos)));
        }
        Ok(())
    }
}

fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Array2<f64> {
    Array2::from_shape_vec((rows, cols), data).expect("length checked by reader")
}

// ---------------------------------------------------------------- SCNN

pub fn cnn_to_bytes(model: &CnnModel) -> Result<Vec<u8>> {
    let c = &model.config;
    let mut w = Writer::new(CNN_MAGIC);
    w.u32(CNN_VERSION as usize)?;
    for v in [
        c.c1_size,
        c.p1_size,
        c.c2_size,
        c.p2_size,
        c.c1_filters,
        c.c2_filters,
        c.hidden_nodes,
        c.num_classes,
    ] {
        w.u32(v)?;
    }
    w.u8(model.head_discardable as u8);
    let shapes = Params::shapes(c)?;
    w.u32(shapes.len())?;
    for (shape, t) in shapes.iter().zip(model.params.tensors()) {
        w.u32(shape.len())?;
        for &d in shape {
            w.u32(d)?;
        }
        w.f32s(t.iter());
    }
    Ok(w.buf)
}

pub fn cnn_from_bytes(bytes: &[u8], name: &str) -> Result<CnnModel> {
    let mut r = Reader::new(bytes, name, CNN_MAGIC)?;
    let version = r.u32()? as u32;
    if version != CNN_VERSION {
        return Err(Error::UnsupportedVersion {
            path: name.to_string(),
            version,
        });
    }
    let mut f = [0usize; 8];
    for v in f.iter_mut() {
        *v = r.u32()?;
    }
    let config = CnnConfig {
        c1_size: f[0],
        p1_size: f[1],
        c2_size: f[2],
        p2_size: f[3],
        c1_filters: f[4],
        c2_filters: f[5],
        hidden_nodes: f[6],
        num_classes: f[7],
    };
    let head_discardable = r.u8()? != 0;
    let expected = Params::shapes(&config).map_err(|e| r.malformed(e.to_string()))?;
    let count = r.u32()?;
    if count != expected.len() {
        return Err(r.malformed(format!("expected {} tensors, found {count}", expected.len())));
    }
    let mut params = Params::zeros(&config)?;
    for (shape, t) in expected.iter().zip(params.tensors_mut()) {
        let ndim = r.u32()?;
        let mut dims = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            dims.push(r.u32()?);
        }
        if &dims != shape {
            return Err(r.malformed(format!("tensor shape {dims:?}, configuration implies {shape:?}")));
        }
        *t = r.f32s(t.len())?;
    }
    r.finish()?;
    let model = CnnModel {
        config,
        params,
        head_discardable,
    };
    if !model.params.is_finite() {
        return Err(Error::NonFinite("CNN weights"));
    }
    Ok(model)
}

// ---------------------------------------------------------------- SWHT

pub fn whitening_to_bytes(tf: &WhiteningTransform) -> Result<Vec<u8>> {
    let mut w = Writer::new(WHITENING_MAGIC);
    w.u8(match tf.mode {
        WhiteningMode::Zca => 0,
        WhiteningMode::Pca => 1,
    });
    w.u32(tf.dim())?;
    w.f32s([tf.epsilon].iter());
    w.f32s(tf.mean.iter());
    w.f32s(tf.projection.iter());
    Ok(w.buf)
}

pub fn whitening_from_bytes(bytes: &[u8], name: &str) -> Result<WhiteningTransform> {
    let mut r = Reader::new(bytes, name, WHITENING_MAGIC)?;
    let mode = match r.u8()? {
        0 => WhiteningMode::Zca,
        1 => WhiteningMode::Pca,
        m => return Err(r.malformed(format!("unknown whitening mode {m}"))),
    };
    let d = r.u32()?;
    let epsilon = r.f32s(1)?[0];
    let mean = Array1::from(r.f32s(d)?);
    let projection = matrix(d, d, r.f32s(d * d)?);
    r.finish()?;
    Ok(WhiteningTransform {
        mode,
        mean,
        projection,
        epsilon,
    })
}

// ---------------------------------------------------------------- SGMM

pub fn gmm_to_bytes(gmm: &GmmModel) -> Result<Vec<u8>> {
    let mut w = Writer::new(GMM_MAGIC);
    w.u32(gmm.components())?;
    w.u32(gmm.dim())?;
    w.f32s(gmm.weights.iter());
    w.f32s(gmm.means.iter());
    w.f32s(gmm.variances.iter());
    Ok(w.buf)
}

/// Weights are renormalized after reading since `f32` storage perturbs their
/// sum; a sum further than 1e-3 from one marks a corrupt file.
pub fn gmm_from_bytes(bytes: &[u8], name: &str) -> Result<GmmModel> {
    let mut r = Reader::new(bytes, name, GMM_MAGIC)?;
    let k = r.u32()?;
    let d = r.u32()?;
    let mut weights = Array1::from(r.f32s(k)?);
    let means = matrix(k, d, r.f32s(k * d)?);
    let variances = matrix(k, d, r.f32s(k * d)?);
    r.finish()?;
    let total = weights.sum();
    if !((total - 1.0).abs() <= 1e-3) {
        return Err(Error::Malformed {
            path: name.to_string(),
            reason: format!("GMM weights sum to {total}"),
        });
    }
    weights /= total;
    GmmModel::new(weights, means, variances)
}

// ---------------------------------------------------------------- SKMS

pub fn kmeans_to_bytes(km: &KmeansModel) -> Result<Vec<u8>> {
    let mut w = Writer::new(KMEANS_MAGIC);
    w.u32(km.components())?;
    w.u32(km.dim())?;
    w.f32s(km.centers.iter());
    Ok(w.buf)
}

pub fn kmeans_from_bytes(bytes: &[u8], name: &str) -> Result<KmeansModel> {
    let mut r = Reader::new(bytes, name, KMEANS_MAGIC)?;
    let k = r.u32()?;
    let d = r.u32()?;
    let centers = matrix(k, d, r.f32s(k * d)?);
    r.finish()?;
    KmeansModel::new(centers)
}

// ---------------------------------------------------------------- CAFV

pub fn descriptors_to_bytes(x: &Array2<f64>) -> Result<Vec<u8>> {
    let mut w = Writer::new(DESCRIPTOR_MAGIC);
    w.u32(DESCRIPTOR_VERSION as usize)?;
    w.u32(x.nrows())?;
    w.u32(x.ncols())?;
    w.f32s(x.iter());
    Ok(w.buf)
}

pub fn descriptors_from_bytes(bytes: &[u8], name: &str) -> Result<Array2<f64>> {
    let mut r = Reader::new(bytes, name, DESCRIPTOR_MAGIC)?;
    let version = r.u32()? as u32;
    if version != DESCRIPTOR_VERSION {
        return Err(Error::UnsupportedVersion {
            path: name.to_string(),
            version,
        });
    }
    let t = r.u32()?;
    let d = r.u32()?;
    let data = r.f32s(t.checked_mul(d).ok_or_else(|| r.malformed("T x D overflows"))?)?;
    r.finish()?;
    Ok(matrix(t, d, data))
}

// ---------------------------------------------------------------- SENC

pub fn encoding_to_bytes(g: &GlobalDescriptor) -> Result<Vec<u8>> {
    let mut w = Writer::new(ENCODING_MAGIC);
    w.u8(g.encoder.tag());
    w.u32(g.vector.len())?;
    w.string(&g.writer_id)?;
    w.string(&g.doc_id)?;
    w.f32s(g.vector.iter());
    Ok(w.buf)
}

pub fn encoding_from_bytes(bytes: &[u8], name: &str) -> Result<GlobalDescriptor> {
    let mut r = Reader::new(bytes, name, ENCODING_MAGIC)?;
    let tag = r.u8()?;
    let encoder = EncoderKind::from_tag(tag).ok_or_else(|| r.malformed(format!("unknown encoder tag {tag}")))?;
    let len = r.u32()?;
    let writer_id = r.string()?;
    let doc_id = r.string()?;
    let vector = r.f32s(len)?;
    r.finish()?;
    Ok(GlobalDescriptor {
        vector,
        doc_id,
        writer_id,
        encoder,
    })
}

// ---------------------------------------------------------------- file helpers

macro_rules! file_io {
    ($save:ident, $load:ident, $ty:ty, $to:ident, $from:ident) => {
        pub fn $save(path: &Path, value: &$ty) -> Result<()> {
            write_atomic(path, &$to(value)?)
        }

        pub fn $load(path: &Path) -> Result<$ty> {
            $from(&read_file(path)?, &path.display().to_string())
        }
    };
}

file_io!(save_cnn, load_cnn, CnnModel, cnn_to_bytes, cnn_from_bytes);
file_io!(save_whitening, load_whitening, WhiteningTransform, whitening_to_bytes, whitening_from_bytes);
file_io!(save_gmm, load_gmm, GmmModel, gmm_to_bytes, gmm_from_bytes);
file_io!(save_kmeans, load_kmeans, KmeansModel, kmeans_to_bytes, kmeans_from_bytes);
file_io!(save_descriptors, load_descriptors, Array2<f64>, descriptors_to_bytes, descriptors_from_bytes);
file_io!(save_encoding, load_encoding, GlobalDescriptor, encoding_to_bytes, encoding_from_bytes);
