use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Magic number opening a `.flo` file.
pub const FLO_MAGIC: f32 = 202021.25;

/// Default symmetric clipping bound (pixels per frame) for quantization.
pub const DEFAULT_FLOW_BOUND: f32 = 20.0;

/// Dense displacement field in pixels per frame.
#[derive(Clone, Debug, PartialEq)]
pub struct FlowField {
    height: usize,
    width: usize,
    u: Vec<f32>,
    v: Vec<f32>,
}

impl FlowField {
    pub fn new(height: usize, width: usize, u: Vec<f32>, v: Vec<f32>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::shape("flow dimensions must be positive"));
        }
        if u.len() != height * width || v.len() != height * width {
            return Err(Error::shape(format!(
                "flow components have {} and {} values for {height}x{width}",
                u.len(),
                v.len()
            )));
        }
        if !u.iter().chain(&v).all(|x| x.is_finite()) {
            return Err(Error::NonFinite("flow field".into()));
        }
        Ok(FlowField { height, width, u, v })
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Self::new(height, width, vec![0.0; height * width], vec![0.0; height * width]).expect("positive dims")
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn u(&self) -> &[f32] {
        &self.u
    }

    pub fn v(&self) -> &[f32] {
        &self.v
    }

    pub fn at(&self, row: usize, col: usize) -> (f32, f32) {
        let i = row * self.width + col;
        (self.u[i], self.v[i])
    }

    /// Per-pixel displacement magnitude.
    pub fn magnitude(&self) -> Vec<f32> {
        self.u.iter().zip(&self.v).map(|(a, b)| a.hypot(*b)).collect()
    }
}

/// Flow discretized to bytes with `q = clamp(round(x / bound · 128 + 128), 0, 255)`.
#[derive(Clone, Debug, PartialEq)]
pub struct QuantizedFlow {
    pub height: usize,
    pub width: usize,
    pub u: Vec<u8>,
    pub v: Vec<u8>,
    pub bound: f32,
}

fn quantize(x: f32, bound: f32) -> u8 {
    (x as f64 / bound as f64 * 128.0 + 128.0).round().clamp(0.0, 255.0) as u8
}

fn dequantize(q: u8, bound: f32) -> f32 {
    ((q as f64 - 128.0) / 128.0 * bound as f64) as f32
}

pub fn quantize_flow(flow: &FlowField, bound: f32) -> Result<QuantizedFlow> {
    if !(bound > 0.0 && bound.is_finite()) {
        return Err(Error::invalid(format!("flow bound {bound} must be positive")));
    }
    Ok(QuantizedFlow {
        height: flow.height,
        width: flow.width,
        u: flow.u.iter().map(|&x| quantize(x, bound)).collect(),
        v: flow.v.iter().map(|&x| quantize(x, bound)).collect(),
        bound,
    })
}

impl QuantizedFlow {
    pub fn dequantize(&self) -> FlowField {
        FlowField {
            height: self.height,
            width: self.width,
            u: self.u.iter().map(|&q| dequantize(q, self.bound)).collect(),
            v: self.v.iter().map(|&q| dequantize(q, self.bound)).collect(),
        }
    }
}

/// Motion-stream input: channels `(u_t, v_t, u_{t+1}, v_{t+1})` scaled to
/// `[0, 1]` by dividing by 255.
pub fn stack_flow_pair(t: &QuantizedFlow, t1: &QuantizedFlow) -> Result<Tensor<f32>> {
    if (t.height, t.width) != (t1.height, t1.width) {
        return Err(Error::shape(format!(
            "flow pair is {}x{} and {}x{}",
            t.height, t.width, t1.height, t1.width
        )));
    }
    let mut data = Vec::with_capacity(t.height * t.width * 4);
    for i in 0..t.height * t.width {
        for q in [t.u[i], t.v[i], t1.u[i], t1.v[i]] {
            data.push(q as f32 / 255.0);
        }
    }
    Tensor::new(t.height, t.width, 4, data)
}

/// Luma of an RGB tensor (ITU-R BT.601 weights); single-channel input is
/// returned as is.
pub fn grayscale(frame: &Tensor<f32>) -> Result<Tensor<f32>> {
    match frame.channels() {
        1 => Ok(frame.clone()),
        3 => Ok(Tensor::from_fn(frame.height(), frame.width(), 1, |r, c, _| {
            let p = frame.pixel(r, c);
            0.299 * p[0] + 0.587 * p[1] + 0.114 * p[2]
        })),
        n => Err(Error::ChannelMismatch { expected: 3, actual: n }),
    }
}

struct Derivatives {
    ix: Vec<f64>,
    iy: Vec<f64>,
    it: Vec<f64>,
}

fn derivatives(a: &Tensor<f32>, b: &Tensor<f32>) -> Result<Derivatives> {
    for f in [a, b] {
        if f.channels() != 1 {
            return Err(Error::ChannelMismatch {
                expected: 1,
                actual: f.channels(),
            });
        }
    }
    if a.shape() != b.shape() {
        return Err(Error::shape(format!("frames are {:?} and {:?}", a.shape(), b.shape())));
    }
    let (h, w) = (a.height(), a.width());
    let px = |f: &Tensor<f32>, r: usize, c: usize| f.get(r, c, 0) as f64;
    let central = |f: &Tensor<f32>, r: usize, c: usize, horizontal: bool| {
        let (lo, hi, n) = if horizontal {
            (c.saturating_sub(1), (c + 1).min(w - 1), w)
        } else {
            (r.saturating_sub(1), (r + 1).min(h - 1), h)
        };
        if n == 1 {
            return 0.0;
        }
        let (a0, a1) = if horizontal {
            (px(f, r, lo), px(f, r, hi))
        } else {
            (px(f, lo, c), px(f, hi, c))
        };
        (a1 - a0) / (hi - lo) as f64
    };
    let mut d = Derivatives {
        ix: Vec::with_capacity(h * w),
        iy: Vec::with_capacity(h * w),
        it: Vec::with_capacity(h * w),
    };
    for r in 0..h {
        for c in 0..w {
            d.ix.push(0.5 * (central(a, r, c, true) + central(b, r, c, true)));
            d.iy.push(0.5 * (central(a, r, c, false) + central(b, r, c, false)));
            d.it.push(px(b, r, c) - px(a, r, c));
        }
    }
    Ok(d)
}

fn neighbours(r: usize, c: usize, h: usize, w: usize) -> impl Iterator<Item = usize> {
    let up = (r > 0).then(|| (r - 1) * w + c);
    let down = (r + 1 < h).then(|| (r + 1) * w + c);
    let left = (c > 0).then(|| r * w + c - 1);
    let right = (c + 1 < w).then(|| r * w + c + 1);
    [up, down, left, right].into_iter().flatten()
}

/// Horn–Schunck energy of `flow` between two grayscale frames:
/// `Σ (Ix·u + Iy·v + It)² + α² Σ_{4-neighbour edges} (Δu² + Δv²)`.
pub fn flow_energy(a: &Tensor<f32>, b: &Tensor<f32>, flow: &FlowField, smoothness: f64) -> Result<f64> {
    let d = derivatives(a, b)?;
    let (h, w) = (a.height(), a.width());
    if (flow.height, flow.width) != (h, w) {
        return Err(Error::shape("flow and frames differ in size"));
    }
    let alpha2 = smoothness * smoothness;
    let mut data = 0.0;
    let mut smooth = 0.0;
    for r in 0..h {
        for c in 0..w {
            let i = r * w + c;
            let (u, v) = (flow.u[i] as f64, flow.v[i] as f64);
            let res = d.ix[i] * u + d.iy[i] * v + d.it[i];
            data += res * res;
            // each edge once: right and down neighbours
            for j in [(c + 1 < w).then(|| i + 1), (r + 1 < h).then(|| i + w)].into_iter().flatten() {
                let du = u - flow.u[j] as f64;
                let dv = v - flow.v[j] as f64;
                smooth += du * du + dv * dv;
            }
        }
    }
    Ok(data + alpha2 * smooth)
}

/// Horn–Schunck flow by Gauss–Seidel sweeps in raster order.
///
/// Each pixel update is the exact minimiser of the energy over that pixel's
/// `(u, v)` with all other pixels fixed, so the energy never increases from
/// one sweep to the next.
pub fn estimate_flow_simple(a: &Tensor<f32>, b: &Tensor<f32>, iterations: usize, smoothness: f64) -> Result<FlowField> {
    if iterations == 0 {
        return Err(Error::invalid("at least one iteration is required"));
    }
    if !(smoothness > 0.0 && smoothness.is_finite()) {
        return Err(Error::invalid(format!("smoothness {smoothness} must be positive")));
    }
    let d = derivatives(a, b)?;
    let (h, w) = (a.height(), a.width());
    let alpha2 = smoothness * smoothness;
    let mut u = vec![0.0f64; h * w];
    let mut v = vec![0.0f64; h * w];
    for _ in 0..iterations {
        for r in 0..h {
            for c in 0..w {
                let i = r * w + c;
                let (mut su, mut sv, mut n) = (0.0, 0.0, 0usize);
                for j in neighbours(r, c, h, w) {
                    su += u[j];
                    sv += v[j];
                    n += 1;
                }
                let (ub, vb) = if n > 0 { (su / n as f64, sv / n as f64) } else { (0.0, 0.0) };
                let k = (d.ix[i] * ub + d.iy[i] * vb + d.it[i]) / (alpha2 * n as f64 + d.ix[i] * d.ix[i] + d.iy[i] * d.iy[i]);
                u[i] = ub - d.ix[i] * k;
                v[i] = vb - d.iy[i] * k;
            }
        }
    }
    FlowField::new(
        h,
        w,
        u.into_iter().map(|x| x as f32).collect(),
        v.into_iter().map(|x| x as f32).collect(),
    )
}

/// Serialise to the Middlebury `.flo` layout.
pub fn encode_flo(flow: &FlowField) -> Vec<u8> {
    let mut out = Vec::with_capacity(12 + flow.u.len() * 8);
    out.extend_from_slice(&FLO_MAGIC.to_le_bytes());
    out.extend_from_slice(&(flow.width as i32).to_le_bytes());
    out.extend_from_slice(&(flow.height as i32).to_le_bytes());
    for (u, v) in flow.u.iter().zip(&flow.v) {
        out.extend_from_slice(&u.to_le_bytes());
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_flo(bytes: &[u8], path: &Path) -> Result<FlowField> {
    let word = |i: usize| -> Result<[u8; 4]> {
        bytes
            .get(i * 4..i * 4 + 4)
            .map(|s| s.try_into().expect("4 bytes"))
            .ok_or_else(|| Error::format(path, "truncated header"))
    };
    if f32::from_le_bytes(word(0)?) != FLO_MAGIC {
        return Err(Error::format(path, "bad magic number, not a .flo file"));
    }
    let width = i32::from_le_bytes(word(1)?);
    let height = i32::from_le_bytes(word(2)?);
    if width <= 0 || height <= 0 {
        return Err(Error::format(path, format!("invalid dimensions {width}x{height}")));
    }
    let n = width as usize * height as usize;
    let payload = &bytes[12..];
    if payload.len() != n * 8 {
        return Err(Error::format(
            path,
            format!(
                "header declares {width}x{height} ({} bytes) but payload has {} bytes",
                n * 8,
                payload.len()
            ),
        ));
    }
    let mut u = Vec::with_capacity(n);
    let mut v = Vec::with_capacity(n);
    for px in payload.chunks_exact(8) {
        u.push(f32::from_le_bytes(px[0..4].try_into().expect("4 bytes")));
        v.push(f32::from_le_bytes(px[4..8].try_into().expect("4 bytes")));
    }
    FlowField::new(height as usize, width as usize, u, v).map_err(|e| Error::format(path, e.to_string()))
}

pub fn write_flow_file(path: impl AsRef<Path>, flow: &FlowField) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_flo(flow)).map_err(|e| Error::io(path, e))
}

pub fn read_flow_file(path: impl AsRef<Path>) -> Result<FlowField> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_flo(&bytes, path)
}
