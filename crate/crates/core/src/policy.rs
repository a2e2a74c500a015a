//! Actor-critic network: tanh MLPs stored as one flat parameter vector,
//! plus the binary checkpoint format.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Real;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"OCTOPOL\0";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Layer widths of the actor and critic. Both share the hidden widths.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetShape {
    pub obs_dim: usize,
    pub hidden: Vec<usize>,
    pub act_dim: usize,
}

impl NetShape {
    pub fn new(obs_dim: usize, hidden: &[usize], act_dim: usize) -> Self {
        Self { obs_dim, hidden: hidden.to_vec(), act_dim }
    }

    /// 12 -> 128 -> 128 -> 3 actor, 12 -> 128 -> 128 -> 1 critic.
    pub fn supervisor() -> Self {
        Self::new(crate::env::OBS_DIM, &[128, 128], crate::env::ACTION_DIM)
    }

    /// Parameter blocks in storage order.
    pub fn layout(&self) -> Vec<LayerSpec> {
        let mut specs = Vec::new();
        let mut offset = 0;
        let mut push = |name: String, rows: usize, cols: usize, tanh: bool, specs: &mut Vec<LayerSpec>| {
            specs.push(LayerSpec { name, offset, rows, cols, tanh });
            offset += rows * cols + rows;
        };
        let dims = |out: usize| {
            let mut d = vec![self.obs_dim];
            d.extend(&self.hidden);
            d.push(out);
            d
        };
        let actor = dims(self.act_dim);
        for i in 0..actor.len() - 1 {
            push(format!("actor.{i}"), actor[i + 1], actor[i], i + 2 < actor.len(), &mut specs);
        }
        push("log_std".into(), self.act_dim, 0, false, &mut specs);
        let critic = dims(1);
        for i in 0..critic.len() - 1 {
            push(format!("critic.{i}"), critic[i + 1], critic[i], i + 2 < critic.len(), &mut specs);
        }
        push("obs_bounds".into(), self.obs_dim, 0, false, &mut specs);
        specs
    }

    pub fn param_count(&self) -> usize {
        self.layout().iter().map(LayerSpec::len).sum()
    }
}

/// One parameter block: a `rows x cols` row-major weight matrix followed by
/// `rows` biases. Blocks with `cols == 0` are plain vectors.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LayerSpec {
    pub name: String,
    pub offset: usize,
    pub rows: usize,
    pub cols: usize,
    pub tanh: bool,
}

impl LayerSpec {
    pub fn len(&self) -> usize {
        self.rows * self.cols + self.rows
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn weights<'a, T>(&self, data: &'a [T]) -> &'a [T] {
        &data[self.offset..self.offset + self.rows * self.cols]
    }

    fn bias<'a, T>(&self, data: &'a [T]) -> &'a [T] {
        let start = self.offset + self.rows * self.cols;
        &data[start..start + self.rows]
    }
}

/// Actor and critic weights, per-dimension log standard deviations, and the
/// observation bounds the policy was trained with.
#[derive(Clone, Debug, PartialEq)]
pub struct PolicyParameters<T> {
    shape: NetShape,
    layout: Vec<LayerSpec>,
    data: Vec<T>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PolicyOutput<T> {
    /// Gaussian mean before squashing.
    pub pre_mean: Vec<T>,
    /// `tanh(pre_mean)`, the deterministic action in [-1, 1].
    pub mean: Vec<T>,
    pub log_std: Vec<T>,
    pub value: T,
}

impl<T: Real> PolicyParameters<T> {
    pub fn zeros(shape: NetShape) -> Self {
        let layout = shape.layout();
        let n = layout.iter().map(LayerSpec::len).sum();
        Self { shape, layout, data: vec![T::zero(); n] }
    }

    /// Scaled-normal initialisation: hidden weights N(0, 1/fan_in), actor
    /// output scaled by 0.01, biases zero.
    pub fn init(shape: NetShape, init_log_std: T, obs_bounds: &[T], rng: &mut impl Rng) -> Result<Self> {
        let mut p = Self::zeros(shape);
        if obs_bounds.len() != p.shape.obs_dim {
            return Err(Error::InvalidInput(format!(
                "expected {} observation bounds, got {}",
                p.shape.obs_dim,
                obs_bounds.len()
            )));
        }
        let layout = p.layout.clone();
        for spec in &layout {
            if spec.cols == 0 {
                continue;
            }
            let gain = if spec.name.starts_with("actor") && !spec.tanh { 0.01 } else { 1.0 };
            let std = gain / (spec.cols as f64).sqrt();
            let normal = Normal::new(0.0, std).expect("positive std");
            for w in &mut p.data[spec.offset..spec.offset + spec.rows * spec.cols] {
                *w = T::lit(normal.sample(rng));
            }
        }
        p.block_mut("log_std").fill(init_log_std);
        p.block_mut("obs_bounds").copy_from_slice(obs_bounds);
        Ok(p)
    }

    pub fn from_flat(shape: NetShape, data: Vec<T>) -> Result<Self> {
        let layout = shape.layout();
        let n: usize = layout.iter().map(LayerSpec::len).sum();
        if data.len() != n {
            return Err(Error::InvalidInput(format!("expected {n} parameters, got {}", data.len())));
        }
        Ok(Self { shape, layout, data })
    }

    pub fn shape(&self) -> &NetShape {
        &self.shape
    }

    pub fn layout(&self) -> &[LayerSpec] {
        &self.layout
    }

    pub fn flat(&self) -> &[T] {
        &self.data
    }

    pub fn flat_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn block(&self, name: &str) -> &[T] {
        let spec = self.spec(name);
        &self.data[spec.offset..spec.offset + spec.len()]
    }

    pub fn block_mut(&mut self, name: &str) -> &mut [T] {
        let spec = self.spec(name).clone();
        &mut self.data[spec.offset..spec.offset + spec.len()]
    }

    fn spec(&self, name: &str) -> &LayerSpec {
        self.layout.iter().find(|s| s.name == name).expect("known layer name")
    }

    pub fn log_std(&self) -> &[T] {
        self.block("log_std")
    }

    pub fn obs_bounds(&self) -> &[T] {
        self.block("obs_bounds")
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    fn net(&self, prefix: &str) -> Vec<&LayerSpec> {
        self.layout.iter().filter(|s| s.name.starts_with(prefix) && s.cols > 0).collect()
    }

    pub(crate) fn actor_layers(&self) -> Vec<&LayerSpec> {
        self.net("actor.")
    }

    pub(crate) fn critic_layers(&self) -> Vec<&LayerSpec> {
        self.net("critic.")
    }

    /// Actor mean, log-std and critic value for one observation.
    pub fn forward(&self, obs: &[T]) -> Result<PolicyOutput<T>> {
        if obs.len() != self.shape.obs_dim {
            return Err(Error::Contract(format!(
                "observation has {} components, network expects {}",
                obs.len(),
                self.shape.obs_dim
            )));
        }
        let pre_mean = mlp_forward(&self.data, &self.actor_layers(), obs, None);
        let value = mlp_forward(&self.data, &self.critic_layers(), obs, None)[0];
        Ok(PolicyOutput {
            mean: pre_mean.iter().map(|m| m.tanh()).collect(),
            pre_mean,
            log_std: self.log_std().to_vec(),
            value,
        })
    }

    /// Deterministic action `tanh(mean)`.
    pub fn act(&self, obs: &[T]) -> Result<Vec<T>> {
        Ok(self.forward(obs)?.mean)
    }
}

/// Forward pass through dense layers; records every layer input (and the
/// final output) into `trace` when given.
pub(crate) fn mlp_forward<T: Real>(data: &[T], layers: &[&LayerSpec], x: &[T], mut trace: Option<&mut Vec<Vec<T>>>) -> Vec<T> {
    let mut h = x.to_vec();
    for spec in layers {
        let w = spec.weights(data);
        let b = spec.bias(data);
        let mut out = Vec::with_capacity(spec.rows);
        for r in 0..spec.rows {
            let row = &w[r * spec.cols..(r + 1) * spec.cols];
            let mut acc = b[r];
            for (wi, hi) in row.iter().zip(&h) {
                acc += *wi * *hi;
            }
            out.push(if spec.tanh { acc.tanh() } else { acc });
        }
        if let Some(t) = trace.as_deref_mut() {
            t.push(std::mem::replace(&mut h, out));
        } else {
            h = out;
        }
    }
    if let Some(t) = trace {
        t.push(h.clone());
    }
    h
}

/// Backpropagates `d_out` through a traced forward pass, accumulating
/// parameter gradients into `grad`.
pub(crate) fn mlp_backward<T: Real>(data: &[T], grad: &mut [T], layers: &[&LayerSpec], trace: &[Vec<T>], d_out: &[T]) {
    let mut delta = d_out.to_vec();
    for (li, spec) in layers.iter().enumerate().rev() {
        if spec.tanh {
            let y = &trace[li + 1];
            for (d, yi) in delta.iter_mut().zip(y) {
                *d *= T::one() - *yi * *yi;
            }
        }
        let input = &trace[li];
        let w = spec.weights(data);
        let wb = spec.offset;
        let bb = spec.offset + spec.rows * spec.cols;
        for r in 0..spec.rows {
            let d = delta[r];
            grad[bb + r] += d;
            let g = &mut grad[wb + r * spec.cols..wb + (r + 1) * spec.cols];
            for (gi, xi) in g.iter_mut().zip(input) {
                *gi += d * *xi;
            }
        }
        if li > 0 {
            let mut prev = vec![T::zero(); spec.cols];
            for r in 0..spec.rows {
                let row = &w[r * spec.cols..(r + 1) * spec.cols];
                for (p, wi) in prev.iter_mut().zip(row) {
                    *p += delta[r] * *wi;
                }
            }
            delta = prev;
        }
    }
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

/// Serialises parameters: magic, version, scalar width, layer table
/// (name, rows, cols), flat little-endian values, FNV-1a checksum.
pub fn save_checkpoint<T: Real>(params: &PolicyParameters<T>) -> Vec<u8> {
    let width = std::mem::size_of::<T>();
    let mut out = Vec::with_capacity(64 + params.data.len() * width);
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.push(width as u8);
    let s = &params.shape;
    out.extend_from_slice(&(s.obs_dim as u32).to_le_bytes());
    out.extend_from_slice(&(s.act_dim as u32).to_le_bytes());
    out.extend_from_slice(&(s.hidden.len() as u32).to_le_bytes());
    for h in &s.hidden {
        out.extend_from_slice(&(*h as u32).to_le_bytes());
    }
    out.extend_from_slice(&(params.layout.len() as u32).to_le_bytes());
    for spec in &params.layout {
        out.extend_from_slice(&(spec.name.len() as u16).to_le_bytes());
        out.extend_from_slice(spec.name.as_bytes());
        out.extend_from_slice(&(spec.rows as u32).to_le_bytes());
        out.extend_from_slice(&(spec.cols as u32).to_le_bytes());
    }
    out.extend_from_slice(&(params.data.len() as u64).to_le_bytes());
    for v in &params.data {
        if width == 4 {
            out.extend_from_slice(&(v.to_f32().expect("f32")).to_le_bytes());
        } else {
            out.extend_from_slice(&v.to_f64_lossy().to_le_bytes());
        }
    }
    let sum = fnv1a(&out);
    out.extend_from_slice(&sum.to_le_bytes());
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(Error::Checkpoint(format!("truncated at byte {}", self.pos))),
        }
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().expect("2 bytes")))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

/// Parses a checkpoint, taking the network shape from the file.
pub fn load_checkpoint<T: Real>(bytes: &[u8]) -> Result<PolicyParameters<T>> {
    if bytes.len() < CHECKPOINT_MAGIC.len() + 8 {
        return Err(Error::Checkpoint("file too short".into()));
    }
    let (body, tail) = bytes.split_at(bytes.len() - 8);
    let mut r = Reader { bytes: body, pos: 0 };
    if r.take(8)? != CHECKPOINT_MAGIC {
        return Err(Error::Checkpoint("bad magic".into()));
    }
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let width = r.take(1)?[0] as usize;
    if width != std::mem::size_of::<T>() {
        return Err(Error::Checkpoint(format!(
            "scalar width {width} bytes, runtime uses {}",
            std::mem::size_of::<T>()
        )));
    }
    let obs_dim = r.u32()? as usize;
    let act_dim = r.u32()? as usize;
    let n_hidden = r.u32()? as usize;
    if n_hidden > 64 {
        return Err(Error::Checkpoint(format!("implausible depth {n_hidden}")));
    }
    let hidden = (0..n_hidden).map(|_| r.u32().map(|h| h as usize)).collect::<Result<Vec<_>>>()?;
    let shape = NetShape { obs_dim, hidden, act_dim };
    let layout = shape.layout();
    let n_layers = r.u32()? as usize;
    if n_layers != layout.len() {
        return Err(Error::Checkpoint(format!("expected {} layers, file has {n_layers}", layout.len())));
    }
    for spec in &layout {
        let len = r.u16()? as usize;
        let name = String::from_utf8_lossy(r.take(len)?).into_owned();
        let rows = r.u32()? as usize;
        let cols = r.u32()? as usize;
        if name != spec.name || rows != spec.rows || cols != spec.cols {
            return Err(Error::ShapeMismatch {
                layer: name,
                expected: (spec.rows, spec.cols),
                found: (rows, cols),
            });
        }
    }
    let count = r.u64()? as usize;
    let expected: usize = layout.iter().map(LayerSpec::len).sum();
    if count != expected {
        return Err(Error::Checkpoint(format!("expected {expected} values, file has {count}")));
    }
    let raw = r.take(count.checked_mul(width).ok_or_else(|| Error::Checkpoint("size overflow".into()))?)?;
    if r.pos != body.len() {
        return Err(Error::Checkpoint("trailing bytes".into()));
    }
    if fnv1a(body).to_le_bytes() != tail {
        return Err(Error::Checkpoint("checksum mismatch".into()));
    }
    let data = raw
        .chunks_exact(width)
        .map(|c| {
            if width == 4 {
                T::lit(f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
            } else {
                T::lit(f64::from_le_bytes(c.try_into().expect("8 bytes")))
            }
        })
        .collect();
    Ok(PolicyParameters { shape, layout, data })
}

/// Parses a checkpoint and checks it against the runtime network shape,
/// naming the first layer whose dimensions disagree.
pub fn load_checkpoint_as<T: Real>(bytes: &[u8], expected: &NetShape) -> Result<PolicyParameters<T>> {
    let p = load_checkpoint::<T>(bytes)?;
    let want = expected.layout();
    for (w, f) in want.iter().zip(p.layout.iter()) {
        if w.name != f.name || w.rows != f.rows || w.cols != f.cols {
            return Err(Error::ShapeMismatch {
                layer: w.name.clone(),
                expected: (w.rows, w.cols),
                found: (f.rows, f.cols),
            });
        }
    }
    if want.len() != p.layout.len() {
        let idx = want.len().min(p.layout.len());
        let name = want.get(idx).or(p.layout.get(idx)).map(|s| s.name.clone()).unwrap_or_default();
        return Err(Error::ShapeMismatch {
            layer: name,
            expected: (want.len(), 0),
            found: (p.layout.len(), 0),
        });
    }
    Ok(p)
}
