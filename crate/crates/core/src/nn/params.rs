//! Parameter blocks, initialization and the `WEDN` checkpoint format.
//!
//! Layout (little-endian): magic `WEDN`, u32 version, u32 block count, then
//! per block u32 name length, UTF-8 name, u32 rank, u32 dims[rank],
//! f32 values[prod(dims)]; finally a CRC32 of every preceding byte.

use std::fs::File;
use std::io::{BufWriter, Cursor, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use ndarray::{Array1, Array2, Array3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::Scalar;
use crate::error::{Error, Result};
use crate::geometry::LevelSpec;

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"WEDN";
pub const CHECKPOINT_VERSION: u32 = 1;
pub const LAMBDA_INIT: f64 = 0.01;

/// Per-event input channels: polarity and the bone flag.
pub const EVENT_CHANNELS: usize = 2;

/// Iteration and prior settings of the sparse-coding block. Only
/// `iterations` drives the computation; the prior scales are recorded with
/// the model and `regularization()` reports their implied weight.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LcscHyperParams {
    pub iterations: usize,
    pub sigma_n: f64,
    pub beta: f64,
    pub gamma_shape: f64,
    pub p_exponent: f64,
}

impl Default for LcscHyperParams {
    fn default() -> Self {
        LcscHyperParams {
            iterations: 1,
            sigma_n: 1.0,
            beta: 1.0,
            gamma_shape: 1.0,
            p_exponent: 1.0,
        }
    }
}

impl LcscHyperParams {
    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(Error::Config("iterations must be at least 1".into()));
        }
        if !(self.beta > 0.0) || !(self.sigma_n >= 0.0) {
            return Err(Error::Config("sigma_n must be >= 0 and beta > 0".into()));
        }
        Ok(())
    }

    /// `sigma_n^2 / beta`.
    pub fn regularization(&self) -> f64 {
        self.sigma_n * self.sigma_n / self.beta
    }
}

/// Level stack plus the per-event input width; every block shape follows
/// from it.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkShape {
    pub levels: Vec<LevelSpec>,
    pub event_channels: usize,
}

impl NetworkShape {
    pub fn new(levels: Vec<LevelSpec>) -> Result<Self> {
        let shape = NetworkShape {
            levels,
            event_channels: EVENT_CHANNELS,
        };
        shape.validate()?;
        Ok(shape)
    }

    pub fn validate(&self) -> Result<()> {
        if self.levels.is_empty() {
            return Err(Error::ShapeMismatch("at least one level is required".into()));
        }
        for l in &self.levels {
            l.validate()?;
        }
        Ok(())
    }

    pub fn depth(&self) -> usize {
        self.levels.len()
    }

    /// Feature width carried by the points that enter level `j`.
    pub fn point_width(&self, j: usize) -> usize {
        if j == 0 {
            self.event_channels
        } else {
            self.levels[j - 1].channels
        }
    }

    /// Input channels of level `j`: four relative channels plus the
    /// incoming point features.
    pub fn level_input(&self, j: usize) -> usize {
        4 + self.point_width(j)
    }

    /// Output width of propagation step `j` (from level-`j` centroids back to
    /// the points that entered level `j`).
    pub fn prop_output(&self, j: usize) -> usize {
        if j == 0 {
            self.levels[0].channels
        } else {
            self.levels[j - 1].channels
        }
    }

    /// Width of the interpolated source features of propagation step `j`.
    pub fn prop_source(&self, j: usize) -> usize {
        if j + 1 == self.depth() {
            self.levels[j].channels
        } else {
            self.prop_output(j + 1)
        }
    }

    pub fn prop_input(&self, j: usize) -> usize {
        self.prop_source(j) + self.point_width(j)
    }

    /// Width of the per-event feature fed to the head.
    pub fn head_input(&self) -> usize {
        self.prop_output(0)
    }
}

/// One abstraction level: the initialization map, the analysis map `W`
/// (input -> code), the synthesis map `Q` (code -> input) and the
/// per-channel soft-threshold levels.
#[derive(Debug, Clone, PartialEq)]
pub struct SaParams<S> {
    pub init_w: Array3<S>,
    pub init_b: Array1<S>,
    pub enc_w: Array3<S>,
    pub dict_q: Array3<S>,
    pub lambda: Array1<S>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FpParams<S> {
    /// `out x in`.
    pub weight: Array2<S>,
    pub bias: Array1<S>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams<S> {
    pub shape: NetworkShape,
    pub hyper: LcscHyperParams,
    pub sa: Vec<SaParams<S>>,
    pub fp: Vec<FpParams<S>>,
    pub head_w: Array1<S>,
    pub head_b: Array1<S>,
}

fn uniform3<S: Scalar>(rng: &mut ChaCha8Rng, dims: (usize, usize, usize), bound: f64) -> Array3<S> {
    Array3::from_shape_simple_fn(dims, || S::from_f64(rng.random_range(-bound..=bound)))
}

fn uniform2<S: Scalar>(rng: &mut ChaCha8Rng, dims: (usize, usize), bound: f64) -> Array2<S> {
    Array2::from_shape_simple_fn(dims, || S::from_f64(rng.random_range(-bound..=bound)))
}

impl<S: Scalar> ModelParams<S> {
    /// Zero-filled parameters with every block shaped for `shape`.
    pub fn zeros(shape: NetworkShape, hyper: LcscHyperParams) -> Self {
        let sa = (0..shape.depth())
            .map(|j| {
                let l = &shape.levels[j];
                let cin = shape.level_input(j);
                SaParams {
                    init_w: Array3::zeros((l.channels, l.kernel, cin)),
                    init_b: Array1::zeros(l.channels),
                    enc_w: Array3::zeros((l.channels, l.kernel, cin)),
                    dict_q: Array3::zeros((cin, l.kernel, l.channels)),
                    lambda: Array1::zeros(l.channels),
                }
            })
            .collect();
        let fp = (0..shape.depth())
            .map(|j| FpParams {
                weight: Array2::zeros((shape.prop_output(j), shape.prop_input(j))),
                bias: Array1::zeros(shape.prop_output(j)),
            })
            .collect();
        let head = shape.head_input();
        ModelParams {
            shape,
            hyper,
            sa,
            fp,
            head_w: Array1::zeros(head),
            head_b: Array1::zeros(1),
        }
    }

    /// Seeded uniform fan-in initialization; thresholds start at 0.01.
    pub fn init(shape: NetworkShape, hyper: LcscHyperParams, seed: u64) -> Result<Self> {
        shape.validate()?;
        hyper.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = Self::zeros(shape, hyper);
        for sa in &mut p.sa {
            let (d, kw, cin) = sa.init_w.dim();
            let relu_bound = (6.0 / (kw * cin) as f64).sqrt();
            sa.init_w = uniform3(&mut rng, (d, kw, cin), relu_bound);
            sa.init_b.fill(S::from_f64(0.01));
            sa.enc_w = uniform3(&mut rng, (d, kw, cin), 0.5 / ((kw * cin) as f64).sqrt());
            sa.dict_q = uniform3(&mut rng, (cin, kw, d), 0.5 / ((kw * d) as f64).sqrt());
            sa.lambda.fill(S::from_f64(LAMBDA_INIT));
        }
        for fp in &mut p.fp {
            let (o, i) = fp.weight.dim();
            fp.weight = uniform2(&mut rng, (o, i), (6.0 / i as f64).sqrt());
            fp.bias.fill(S::from_f64(0.01));
        }
        let h = p.head_w.len();
        p.head_w = Array1::from_shape_simple_fn(h, || {
            S::from_f64(rng.random_range(-1.0..=1.0) * (3.0 / h as f64).sqrt())
        });
        Ok(p)
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.shape.clone(), self.hyper)
    }

    /// `(name, dims, values)` of every learnable block in checkpoint order.
    pub fn blocks(&self) -> Vec<(String, Vec<usize>, &[S])> {
        let mut out = Vec::new();
        for (j, sa) in self.sa.iter().enumerate() {
            let n = j + 1;
            out.push((
                format!("sa{n}.init.weight"),
                sa.init_w.shape().to_vec(),
                as_slice(&sa.init_w),
            ));
            out.push((
                format!("sa{n}.init.bias"),
                sa.init_b.shape().to_vec(),
                as_slice(&sa.init_b),
            ));
            out.push((
                format!("sa{n}.w.weight"),
                sa.enc_w.shape().to_vec(),
                as_slice(&sa.enc_w),
            ));
            out.push((
                format!("sa{n}.q.weight"),
                sa.dict_q.shape().to_vec(),
                as_slice(&sa.dict_q),
            ));
            out.push((
                format!("sa{n}.lambda"),
                sa.lambda.shape().to_vec(),
                as_slice(&sa.lambda),
            ));
        }
        for (j, fp) in self.fp.iter().enumerate() {
            let n = j + 1;
            out.push((
                format!("fp{n}.weight"),
                fp.weight.shape().to_vec(),
                as_slice(&fp.weight),
            ));
            out.push((format!("fp{n}.bias"), fp.bias.shape().to_vec(), as_slice(&fp.bias)));
        }
        out.push((
            "head.weight".into(),
            self.head_w.shape().to_vec(),
            as_slice(&self.head_w),
        ));
        out.push(("head.bias".into(), self.head_b.shape().to_vec(), as_slice(&self.head_b)));
        out
    }

    /// Mutable views in the same order as [`ModelParams::blocks`].
    pub fn slices_mut(&mut self) -> Vec<&mut [S]> {
        let mut out: Vec<&mut [S]> = Vec::new();
        for sa in &mut self.sa {
            out.push(as_slice_mut(&mut sa.init_w));
            out.push(as_slice_mut(&mut sa.init_b));
            out.push(as_slice_mut(&mut sa.enc_w));
            out.push(as_slice_mut(&mut sa.dict_q));
            out.push(as_slice_mut(&mut sa.lambda));
        }
        for fp in &mut self.fp {
            out.push(as_slice_mut(&mut fp.weight));
            out.push(as_slice_mut(&mut fp.bias));
        }
        out.push(as_slice_mut(&mut self.head_w));
        out.push(as_slice_mut(&mut self.head_b));
        out
    }

    pub fn param_count(&self) -> usize {
        self.blocks().iter().map(|b| b.2.len()).sum()
    }

    /// All values flattened in block order.
    pub fn flatten(&self) -> Vec<S> {
        self.blocks().into_iter().flat_map(|b| b.2.to_vec()).collect()
    }

    /// Overwrites a single scalar addressed by its flat index.
    pub fn set_flat(&mut self, mut index: usize, value: S) {
        for s in self.slices_mut() {
            if index < s.len() {
                s[index] = value;
                return;
            }
            index -= s.len();
        }
        panic!("flat parameter index out of range");
    }

    /// `self += alpha * other`, block by block.
    pub fn add_scaled(&mut self, other: &ModelParams<S>, alpha: S) {
        let src = other.blocks();
        for (dst, (_, _, src)) in self.slices_mut().into_iter().zip(src) {
            for (d, &s) in dst.iter_mut().zip(src) {
                *d += alpha * s;
            }
        }
    }

    pub fn scale(&mut self, alpha: S) {
        for s in self.slices_mut() {
            for v in s {
                *v = *v * alpha;
            }
        }
    }

    /// Keeps every soft-threshold level nonnegative.
    pub fn clamp_thresholds(&mut self) {
        for sa in &mut self.sa {
            sa.lambda.mapv_inplace(|v| v.max(S::zero()));
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.blocks()
            .iter()
            .flat_map(|b| b.2.iter())
            .fold(0.0, |m, v| m.max(v.as_f64().abs()))
    }

    /// Euclidean norm over every parameter.
    pub fn norm(&self) -> f64 {
        self.blocks()
            .iter()
            .flat_map(|b| b.2.iter())
            .map(|v| v.as_f64() * v.as_f64())
            .sum::<f64>()
            .sqrt()
    }

    pub fn all_finite(&self) -> bool {
        self.blocks().iter().all(|b| b.2.iter().all(|v| v.is_finite()))
    }

    pub fn cast<T: Scalar>(&self) -> ModelParams<T> {
        let mut out = ModelParams::<T>::zeros(self.shape.clone(), self.hyper);
        for (dst, (_, _, src)) in out.slices_mut().into_iter().zip(self.blocks()) {
            for (d, &s) in dst.iter_mut().zip(src) {
                *d = T::from_f64(s.as_f64());
            }
        }
        out
    }

    fn meta_blocks(&self) -> Vec<(String, Vec<usize>, Vec<f32>)> {
        let mut levels = Vec::new();
        for l in &self.shape.levels {
            levels.extend([
                l.centroids as f32,
                l.group_size as f32,
                // micro-units keep the radius exact through f32
                (l.radius * 1e6).round() as f32,
                l.channels as f32,
                l.kernel as f32,
            ]);
        }
        let h = &self.hyper;
        vec![
            ("meta.levels".into(), vec![self.shape.depth(), 5], levels),
            (
                "meta.hyper".into(),
                vec![5],
                vec![
                    h.iterations as f32,
                    h.sigma_n as f32,
                    h.beta as f32,
                    h.gamma_shape as f32,
                    h.p_exponent as f32,
                ],
            ),
            ("meta.input".into(), vec![1], vec![self.shape.event_channels as f32]),
        ]
    }

    pub fn to_checkpoint_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        buf.extend_from_slice(&CHECKPOINT_MAGIC);
        let meta = self.meta_blocks();
        let blocks = self.blocks();
        buf.write_u32::<LittleEndian>(CHECKPOINT_VERSION).unwrap();
        buf.write_u32::<LittleEndian>((meta.len() + blocks.len()) as u32)
            .unwrap();
        let mut put = |name: &str, dims: &[usize], values: &mut dyn Iterator<Item = f32>| {
            buf.write_u32::<LittleEndian>(name.len() as u32).unwrap();
            buf.extend_from_slice(name.as_bytes());
            buf.write_u32::<LittleEndian>(dims.len() as u32).unwrap();
            for &d in dims {
                buf.write_u32::<LittleEndian>(d as u32).unwrap();
            }
            for v in values {
                buf.write_f32::<LittleEndian>(v).unwrap();
            }
        };
        for (name, dims, values) in &meta {
            put(name, dims, &mut values.iter().copied());
        }
        for (name, dims, values) in &blocks {
            put(name, dims, &mut values.iter().map(|v| v.as_f64() as f32));
        }
        let crc = crc32fast::hash(&buf);
        buf.write_u32::<LittleEndian>(crc).unwrap();
        buf
    }

    pub fn write_checkpoint(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        w.write_all(&self.to_checkpoint_bytes())?;
        w.flush()?;
        Ok(())
    }
}

fn as_slice<S, D: ndarray::Dimension>(a: &ndarray::Array<S, D>) -> &[S] {
    a.as_slice().expect("parameter arrays are contiguous")
}

fn as_slice_mut<S, D: ndarray::Dimension>(a: &mut ndarray::Array<S, D>) -> &mut [S] {
    a.as_slice_mut().expect("parameter arrays are contiguous")
}

struct RawBlock {
    name: String,
    dims: Vec<usize>,
    values: Vec<f32>,
}

fn truncated<T>(r: std::io::Result<T>) -> Result<T> {
    r.map_err(|e| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => Error::TruncatedFile("checkpoint ends early".into()),
        _ => Error::Io(e),
    })
}

fn read_blocks(bytes: &[u8]) -> Result<Vec<RawBlock>> {
    if bytes.len() < 4 {
        return Err(Error::TruncatedFile("checkpoint shorter than its magic".into()));
    }
    if bytes[..4] != CHECKPOINT_MAGIC {
        return Err(Error::MagicMismatch {
            expected: CHECKPOINT_MAGIC,
            found: bytes[..4].try_into().unwrap(),
        });
    }
    if bytes.len() < 16 {
        return Err(Error::TruncatedFile("checkpoint header incomplete".into()));
    }
    let (body, tail) = bytes.split_at(bytes.len() - 4);
    let stored = u32::from_le_bytes(tail.try_into().unwrap());
    let computed = crc32fast::hash(body);
    if stored != computed {
        return Err(Error::Checksum { stored, computed });
    }
    let mut r = Cursor::new(&body[4..]);
    let version = truncated(r.read_u32::<LittleEndian>())?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::parse("checkpoint", format!("unsupported version {version}")));
    }
    let count = truncated(r.read_u32::<LittleEndian>())? as usize;
    let mut blocks = Vec::with_capacity(count.min(1024));
    for _ in 0..count {
        let len = truncated(r.read_u32::<LittleEndian>())? as usize;
        if len > body.len() {
            return Err(Error::TruncatedFile("block name overruns file".into()));
        }
        let mut name = vec![0u8; len];
        truncated(r.read_exact(&mut name))?;
        let name = String::from_utf8(name).map_err(|_| Error::parse("checkpoint", "block name is not UTF-8"))?;
        let rank = truncated(r.read_u32::<LittleEndian>())? as usize;
        if rank > 8 {
            return Err(Error::parse("checkpoint", format!("block {name} has rank {rank}")));
        }
        let mut dims = Vec::with_capacity(rank);
        for _ in 0..rank {
            dims.push(truncated(r.read_u32::<LittleEndian>())? as usize);
        }
        let n: usize = dims.iter().product();
        if n * 4 > body.len() {
            return Err(Error::TruncatedFile(format!("block {name} overruns file")));
        }
        let mut values = vec![0f32; n];
        truncated(r.read_f32_into::<LittleEndian>(&mut values))?;
        blocks.push(RawBlock { name, dims, values });
    }
    if (r.position() as usize) != body.len() - 4 {
        return Err(Error::parse("checkpoint", "trailing bytes after the last block"));
    }
    Ok(blocks)
}

fn meta<'a>(blocks: &'a [RawBlock], name: &str) -> Result<&'a RawBlock> {
    blocks
        .iter()
        .find(|b| b.name == name)
        .ok_or_else(|| Error::parse("checkpoint", format!("missing block {name}")))
}

impl ModelParams<f32> {
    pub fn from_checkpoint_bytes(bytes: &[u8]) -> Result<Self> {
        let blocks = read_blocks(bytes)?;
        let lv = meta(&blocks, "meta.levels")?;
        if lv.dims.len() != 2 || lv.dims[1] != 5 {
            return Err(Error::parse("checkpoint", "meta.levels must be L x 5"));
        }
        let levels = lv
            .values
            .chunks(5)
            .map(|c| LevelSpec {
                centroids: c[0] as usize,
                group_size: c[1] as usize,
                radius: c[2] as f64 / 1e6,
                channels: c[3] as usize,
                kernel: c[4] as usize,
            })
            .collect();
        let hv = &meta(&blocks, "meta.hyper")?.values;
        if hv.len() != 5 {
            return Err(Error::parse("checkpoint", "meta.hyper must hold 5 values"));
        }
        let hyper = LcscHyperParams {
            iterations: hv[0] as usize,
            sigma_n: hv[1] as f64,
            beta: hv[2] as f64,
            gamma_shape: hv[3] as f64,
            p_exponent: hv[4] as f64,
        };
        let input = meta(&blocks, "meta.input")?.values.first().copied().unwrap_or(0.0) as usize;
        let shape = NetworkShape {
            levels,
            event_channels: input,
        };
        shape.validate()?;
        let mut params = ModelParams::<f32>::zeros(shape, hyper);
        let expected: Vec<(String, Vec<usize>)> = params.blocks().into_iter().map(|(n, d, _)| (n, d)).collect();
        let learnable: Vec<&RawBlock> = blocks.iter().filter(|b| !b.name.starts_with("meta.")).collect();
        if learnable.len() != expected.len() {
            return Err(Error::ShapeMismatch(format!(
                "checkpoint holds {} parameter blocks, shape needs {}",
                learnable.len(),
                expected.len()
            )));
        }
        for ((dst, (name, dims)), raw) in params.slices_mut().into_iter().zip(&expected).zip(learnable) {
            if &raw.name != name || &raw.dims != dims {
                return Err(Error::ShapeMismatch(format!(
                    "block {} {:?} where {} {:?} was expected",
                    raw.name, raw.dims, name, dims
                )));
            }
            dst.copy_from_slice(&raw.values);
        }
        Ok(params)
    }

    pub fn read_checkpoint(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => Error::MissingCheckpoint(path.display().to_string()),
            _ => Error::Io(e),
        })?;
        Self::from_checkpoint_bytes(&bytes)
    }
}
