//! CNN operation semantics: convolution shapes, the naive oracle, im2col
//! lowering, and reference pooling / softmax / ReLU.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nda::{Dims, Nda};

/// One 2D convolution with square kernel and uniform stride.
///
/// `in_dims` is `Y:X:C` for a single image or `B:Y:X:C` for a batch; a batch
/// axis of size 1 is dropped on construction so equal ops compare equal.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ConvSpec {
    in_dims: Dims,
    pub out_channels: usize,
    pub kernel_size: usize,
    pub stride: usize,
    pub pad: usize,
    pub fuse_relu: bool,
    pub has_bias: bool,
}

impl ConvSpec {
    pub fn new(in_dims: Dims, out_channels: usize, kernel_size: usize, stride: usize, pad: usize) -> Result<Self> {
        let names: Vec<&str> = in_dims.names().collect();
        let in_dims = match names.as_slice() {
            ["Y", "X", "C"] => in_dims,
            ["B", "Y", "X", "C"] if in_dims.axes()[0].1 == 1 => {
                Dims::new(in_dims.axes()[1..].iter().cloned())?
            }
            ["B", "Y", "X", "C"] => in_dims,
            _ => {
                return Err(Error::Conv(format!(
                    "input dims must be Y:X:C or B:Y:X:C, got {in_dims}"
                )))
            }
        };
        if out_channels == 0 || kernel_size == 0 || stride == 0 {
            return Err(Error::Conv("OC, KSZ and stride must be positive".into()));
        }
        let spec = ConvSpec {
            in_dims,
            out_channels,
            kernel_size,
            stride,
            pad,
            fuse_relu: false,
            has_bias: false,
        };
        for (axis, extent) in [("Y", spec.in_y()), ("X", spec.in_x())] {
            if extent + 2 * pad < kernel_size {
                return Err(Error::Conv(format!(
                    "kernel size {kernel_size} exceeds padded {axis} extent {}",
                    extent + 2 * pad
                )));
            }
        }
        Ok(spec)
    }

    /// Single-image convenience constructor.
    pub fn image(y: usize, x: usize, c: usize, oc: usize, ksz: usize, stride: usize, pad: usize) -> Result<Self> {
        Self::new(Dims::new([("Y", y), ("X", x), ("C", c)])?, oc, ksz, stride, pad)
    }

    pub fn with_batch(mut self, b: usize) -> Result<Self> {
        if b == 0 {
            return Err(Error::Conv("batch size must be positive".into()));
        }
        self.in_dims = if b == 1 {
            Dims::new([("Y", self.in_y()), ("X", self.in_x()), ("C", self.in_c())])?
        } else {
            Dims::new([("B", b), ("Y", self.in_y()), ("X", self.in_x()), ("C", self.in_c())])?
        };
        Ok(self)
    }

    pub fn with_bias(mut self, on: bool) -> Self {
        self.has_bias = on;
        self
    }

    pub fn with_relu(mut self, on: bool) -> Self {
        self.fuse_relu = on;
        self
    }

    pub fn in_dims(&self) -> &Dims {
        &self.in_dims
    }

    pub fn batch(&self) -> usize {
        self.in_dims.size_of("B").unwrap_or(1)
    }

    pub fn in_y(&self) -> usize {
        self.in_dims.size_of("Y").unwrap()
    }

    pub fn in_x(&self) -> usize {
        self.in_dims.size_of("X").unwrap()
    }

    pub fn in_c(&self) -> usize {
        self.in_dims.size_of("C").unwrap()
    }

    pub fn out_y(&self) -> usize {
        1 + (self.in_y() + 2 * self.pad - self.kernel_size) / self.stride
    }

    pub fn out_x(&self) -> usize {
        1 + (self.in_x() + 2 * self.pad - self.kernel_size) / self.stride
    }

    pub fn is_batched(&self) -> bool {
        self.in_dims.rank() == 4
    }

    pub fn filts_dims(&self) -> Dims {
        Dims::new([
            ("OC", self.out_channels),
            ("KY", self.kernel_size),
            ("KX", self.kernel_size),
            ("IC", self.in_c()),
        ])
        .expect("positive conv dims")
    }

    pub fn bias_dims(&self) -> Dims {
        Dims::new([("OC", self.out_channels)]).unwrap()
    }

    pub fn out_dims(&self) -> Dims {
        let (y, x, c) = (self.out_y(), self.out_x(), self.out_channels);
        if self.is_batched() {
            Dims::new([("B", self.batch()), ("Y", y), ("X", x), ("C", c)]).unwrap()
        } else {
            Dims::new([("Y", y), ("X", x), ("C", c)]).unwrap()
        }
    }

    /// Copy with spatial dims and channel counts divided by `factor`
    /// (rounded up, minimum 1). Spatial extents are clamped so the padded
    /// input still holds one kernel window. Batch, kernel, stride and pad
    /// are preserved.
    pub fn scaled(&self, factor: f64) -> Result<Self> {
        if !(factor >= 1.0) {
            return Err(Error::Conv(format!("scale factor must be >= 1, got {factor}")));
        }
        let div = |v: usize| ((v as f64 / factor).ceil() as usize).max(1);
        let min_spatial = self.kernel_size.saturating_sub(2 * self.pad).max(1);
        let y = div(self.in_y()).max(min_spatial);
        let x = div(self.in_x()).max(min_spatial);
        let spec = ConvSpec::image(y, x, div(self.in_c()), div(self.out_channels), self.kernel_size, self.stride, self.pad)?
            .with_batch(self.batch())?
            .with_bias(self.has_bias)
            .with_relu(self.fuse_relu);
        Ok(spec)
    }
}

/// Shapes derived from a [`ConvSpec`].
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConvShapes {
    pub in_dims: Dims,
    pub filts_dims: Dims,
    pub out_dims: Dims,
    /// Rows are output points (times batch), columns are patch elements.
    pub inmat_dims: Dims,
    pub flops: u64,
    pub min_bytes: u64,
}

impl ConvShapes {
    pub fn out_points(&self) -> u64 {
        self.inmat_dims.axes()[0].1 as u64
    }

    pub fn patch_size(&self) -> u64 {
        self.inmat_dims.axes()[1].1 as u64
    }
}

pub fn infer_shapes(s: &ConvSpec) -> Result<ConvShapes> {
    let ksz = s.kernel_size;
    if s.in_y() + 2 * s.pad < ksz || s.in_x() + 2 * s.pad < ksz {
        return Err(Error::Conv("kernel larger than padded input".into()));
    }
    let rows = s.batch() * s.out_y() * s.out_x();
    let cols = ksz * ksz * s.in_c();
    let inmat_dims = Dims::new([("M", rows), ("K", cols)])?;
    let filts_dims = s.filts_dims();
    let out_dims = s.out_dims();
    let flops = 2 * rows as u64 * s.out_channels as u64 * cols as u64;
    let min_bytes = 4 * (s.in_dims.len() + filts_dims.len() + out_dims.len()) as u64;
    Ok(ConvShapes {
        in_dims: s.in_dims.clone(),
        filts_dims,
        out_dims,
        inmat_dims,
        flops,
        min_bytes,
    })
}

fn check_dims(what: &str, got: &Dims, want: &Dims) -> Result<()> {
    if got != want {
        return Err(Error::Shape(format!("{what} has dims {got}, expected {want}")));
    }
    Ok(())
}

fn check_bias(s: &ConvSpec, bias: Option<&Nda>) -> Result<()> {
    match (s.has_bias, bias) {
        (true, Some(b)) => check_dims("bias", b.dims(), &s.bias_dims()),
        (false, None) => Ok(()),
        (true, None) => Err(Error::Shape("op has bias but no bias array was given".into())),
        (false, Some(_)) => Err(Error::Shape("bias array given for an op without bias".into())),
    }
}

/// Direct convolution. Zero padding is applied logically; the dot product
/// accumulates `ic` innermost, then `kx`, then `ky`, all ascending.
pub fn conv_oracle(s: &ConvSpec, input: &Nda, filts: &Nda, bias: Option<&Nda>) -> Result<Nda> {
    check_dims("in", input.dims(), s.in_dims())?;
    check_dims("filts", filts.dims(), &s.filts_dims())?;
    check_bias(s, bias)?;

    let (iy_n, ix_n, ic_n) = (s.in_y() as isize, s.in_x() as isize, s.in_c());
    let (oy_n, ox_n, oc_n) = (s.out_y(), s.out_x(), s.out_channels);
    let ksz = s.kernel_size;
    let inp = input.data();
    let flt = filts.data();
    let mut out = Vec::with_capacity(s.batch() * oy_n * ox_n * oc_n);
    for b in 0..s.batch() {
        let img = &inp[b * (iy_n * ix_n) as usize * ic_n..];
        for oy in 0..oy_n {
            for ox in 0..ox_n {
                for oc in 0..oc_n {
                    let mut acc = 0.0f32;
                    for ky in 0..ksz {
                        let iy = (oy * s.stride + ky) as isize - s.pad as isize;
                        if iy < 0 || iy >= iy_n {
                            continue;
                        }
                        for kx in 0..ksz {
                            let ix = (ox * s.stride + kx) as isize - s.pad as isize;
                            if ix < 0 || ix >= ix_n {
                                continue;
                            }
                            let ib = (iy * ix_n + ix) as usize * ic_n;
                            let fb = ((oc * ksz + ky) * ksz + kx) * ic_n;
                            for ic in 0..ic_n {
                                acc += img[ib + ic] * flt[fb + ic];
                            }
                        }
                    }
                    if let Some(bias) = bias {
                        acc += bias.data()[oc];
                    }
                    if s.fuse_relu {
                        acc = acc.max(0.0);
                    }
                    out.push(acc);
                }
            }
        }
    }
    Nda::new(s.out_dims(), out)
}

/// Patch matrix of one image: row `r` is the flattened `KY:KX:IC` window of
/// output point `r` (row-major over output Y, X).
pub fn im2col(s: &ConvSpec, input: &Nda) -> Result<Nda> {
    if s.batch() != 1 {
        return Err(Error::Shape("im2col takes a single image; split the batch first".into()));
    }
    check_dims("in", input.dims(), s.in_dims())?;
    let shapes = infer_shapes(s)?;
    let (iy_n, ix_n, ic_n) = (s.in_y() as isize, s.in_x() as isize, s.in_c());
    let ksz = s.kernel_size;
    let mut data = Vec::with_capacity(shapes.inmat_dims.len());
    for oy in 0..s.out_y() {
        for ox in 0..s.out_x() {
            for ky in 0..ksz {
                let iy = (oy * s.stride + ky) as isize - s.pad as isize;
                for kx in 0..ksz {
                    let ix = (ox * s.stride + kx) as isize - s.pad as isize;
                    if iy < 0 || iy >= iy_n || ix < 0 || ix >= ix_n {
                        data.extend(std::iter::repeat(0.0).take(ic_n));
                    } else {
                        let base = (iy * ix_n + ix) as usize * ic_n;
                        data.extend_from_slice(&input.data()[base..base + ic_n]);
                    }
                }
            }
        }
    }
    Nda::new(shapes.inmat_dims, data)
}

/// Plain triple-loop `c = a * b` for `a: M:K`, `b: K:N`.
pub fn gemm_ref(a: &Nda, b: &Nda) -> Result<Nda> {
    let (m, k) = matrix_dims(a)?;
    let (k2, n) = matrix_dims(b)?;
    if k != k2 {
        return Err(Error::Shape(format!("inner dims differ: {} vs {}", a.dims(), b.dims())));
    }
    let mut c = vec![0.0f32; m * n];
    for i in 0..m {
        for j in 0..n {
            let mut acc = 0.0f32;
            for p in 0..k {
                acc += a.data()[i * k + p] * b.data()[p * n + j];
            }
            c[i * n + j] = acc;
        }
    }
    Nda::new(Dims::new([("M", m), ("N", n)])?, c)
}

/// Triple-loop `c = a * btᵀ` with `bt` stored `N:K`.
pub fn gemm_bt_ref(a: &Nda, bt: &Nda) -> Result<Nda> {
    let (m, k) = matrix_dims(a)?;
    let (n, k2) = matrix_dims(bt)?;
    if k != k2 {
        return Err(Error::Shape(format!("inner dims differ: {} vs {}", a.dims(), bt.dims())));
    }
    let mut c = vec![0.0f32; m * n];
    for i in 0..m {
        let ar = &a.data()[i * k..(i + 1) * k];
        for j in 0..n {
            let br = &bt.data()[j * k..(j + 1) * k];
            let mut acc = 0.0f32;
            for p in 0..k {
                acc += ar[p] * br[p];
            }
            c[i * n + j] = acc;
        }
    }
    Nda::new(Dims::new([("M", m), ("N", n)])?, c)
}

fn matrix_dims(a: &Nda) -> Result<(usize, usize)> {
    match a.dims().axes() {
        [(_, r), (_, c)] => Ok((*r, *c)),
        _ => Err(Error::Shape(format!("expected a 2D matrix, got {}", a.dims()))),
    }
}

/// Convolution lowered to per-image im2col followed by a triple-loop GEMM
/// against the filters viewed as an `N:K` matrix.
pub fn conv_via_gemm(s: &ConvSpec, input: &Nda, filts: &Nda, bias: Option<&Nda>) -> Result<Nda> {
    check_dims("in", input.dims(), s.in_dims())?;
    check_dims("filts", filts.dims(), &s.filts_dims())?;
    check_bias(s, bias)?;
    let single = s.clone().with_batch(1)?;
    let img_len = single.in_dims().len();
    let patch = s.kernel_size * s.kernel_size * s.in_c();
    let filtsmat = filts.reshape(Dims::new([("N", s.out_channels), ("K", patch)])?)?;
    let mut out = Vec::with_capacity(s.out_dims().len());
    for b in 0..s.batch() {
        let img = Nda::new(
            single.in_dims().clone(),
            input.data()[b * img_len..(b + 1) * img_len].to_vec(),
        )?;
        let inmat = im2col(&single, &img)?;
        let outmat = gemm_bt_ref(&inmat, &filtsmat)?;
        out.extend_from_slice(outmat.data());
    }
    if let Some(bias) = bias {
        for (i, v) in out.iter_mut().enumerate() {
            *v += bias.data()[i % s.out_channels];
        }
    }
    if s.fuse_relu {
        out.iter_mut().for_each(|v| *v = v.max(0.0));
    }
    Nda::new(s.out_dims(), out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PoolKind {
    Max,
    Avg,
}

/// Spatial pooling over a `Y:X:C` (or `B:Y:X:C`) array, no padding.
pub fn pool_ref(kind: PoolKind, window: usize, stride: usize, input: &Nda) -> Result<Nda> {
    let dims = input.dims();
    let (b, y, x, c) = match dims.names().collect::<Vec<_>>().as_slice() {
        ["Y", "X", "C"] => (1, dims.axes()[0].1, dims.axes()[1].1, dims.axes()[2].1),
        ["B", "Y", "X", "C"] => (dims.axes()[0].1, dims.axes()[1].1, dims.axes()[2].1, dims.axes()[3].1),
        _ => return Err(Error::Shape(format!("pooling expects Y:X:C or B:Y:X:C, got {dims}"))),
    };
    if window == 0 || stride == 0 {
        return Err(Error::Shape("pool window and stride must be positive".into()));
    }
    if window > y || window > x {
        return Err(Error::Shape(format!("pool window {window} exceeds input {y}x{x}")));
    }
    let (oy_n, ox_n) = (1 + (y - window) / stride, 1 + (x - window) / stride);
    let mut out = Vec::with_capacity(b * oy_n * ox_n * c);
    for bi in 0..b {
        for oy in 0..oy_n {
            for ox in 0..ox_n {
                for ci in 0..c {
                    let mut acc = match kind {
                        PoolKind::Max => f32::NEG_INFINITY,
                        PoolKind::Avg => 0.0,
                    };
                    for wy in 0..window {
                        for wx in 0..window {
                            let v = input.data()[((bi * y + oy * stride + wy) * x + ox * stride + wx) * c + ci];
                            match kind {
                                PoolKind::Max => acc = acc.max(v),
                                PoolKind::Avg => acc += v,
                            }
                        }
                    }
                    if kind == PoolKind::Avg {
                        acc /= (window * window) as f32;
                    }
                    out.push(acc);
                }
            }
        }
    }
    let out_dims = if b == 1 && dims.rank() == 3 {
        Dims::new([("Y", oy_n), ("X", ox_n), ("C", c)])?
    } else {
        Dims::new([("B", b), ("Y", oy_n), ("X", ox_n), ("C", c)])?
    };
    Nda::new(out_dims, out)
}

/// Softmax along the named axis (max-subtracted for stability).
pub fn softmax_ref(input: &Nda, axis: &str) -> Result<Nda> {
    let dims = input.dims();
    let ax = dims.position(axis).ok_or_else(|| Error::UnknownAxis(axis.to_string()))?;
    let n = dims.axes()[ax].1;
    let inner = dims.strides()[ax];
    let outer = dims.len() / (n * inner);
    let mut out = input.data().to_vec();
    for o in 0..outer {
        for i in 0..inner {
            let at = |j: usize| o * n * inner + j * inner + i;
            let max = (0..n).map(|j| out[at(j)]).fold(f32::NEG_INFINITY, f32::max);
            let mut sum = 0.0f64;
            for j in 0..n {
                let e = ((out[at(j)] - max) as f64).exp();
                out[at(j)] = e as f32;
                sum += e;
            }
            for j in 0..n {
                out[at(j)] = (out[at(j)] as f64 / sum) as f32;
            }
        }
    }
    Nda::new(dims.clone(), out)
}

pub fn relu_ref(input: &Nda) -> Nda {
    let data = input.data().iter().map(|v| v.max(0.0)).collect();
    Nda::new(input.dims().clone(), data).unwrap()
}

/// A named convolution as it appears in an op list.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NamedOp {
    pub name: String,
    pub spec: ConvSpec,
    /// Whether the source line fixed the batch size (`B=`).
    pub batch_given: bool,
}

impl fmt::Display for NamedOp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&format_op_line(&self.name, &self.spec))
    }
}

/// Canonical op line, e.g.
/// `conv1 in=Y:X:C=205:205:3 OC=96 KSZ=7 stride=2 pad=0 B=1 bias=0 relu=0`.
pub fn format_op_line(name: &str, s: &ConvSpec) -> String {
    format!(
        "{name} in=Y:X:C={}:{}:{} OC={} KSZ={} stride={} pad={} B={} bias={} relu={}",
        s.in_y(),
        s.in_x(),
        s.in_c(),
        s.out_channels,
        s.kernel_size,
        s.stride,
        s.pad,
        s.batch(),
        s.has_bias as u8,
        s.fuse_relu as u8
    )
}

fn parse_flag(v: &str) -> std::result::Result<bool, String> {
    match v {
        "1" | "true" | "yes" | "on" => Ok(true),
        "0" | "false" | "no" | "off" => Ok(false),
        _ => Err(format!("bad flag value `{v}`")),
    }
}

/// Parse one op line. `pad=same` selects `floor(KSZ/2)`.
pub fn parse_op_line(line: &str) -> std::result::Result<NamedOp, String> {
    let mut words = line.split_whitespace();
    let name = words.next().ok_or("empty op line")?;
    if name.contains('=') {
        return Err(format!("op line must start with a name, got `{name}`"));
    }
    let (mut in_dims, mut oc, mut ksz, mut stride, mut pad, mut batch) = (None, None, None, None, None, None);
    let (mut bias, mut relu) = (false, false);
    for w in words {
        let (k, v) = w.split_once('=').ok_or_else(|| format!("expected key=value, got `{w}`"))?;
        let num = || v.parse::<usize>().map_err(|_| format!("bad number for {k}: `{v}`"));
        match k {
            "in" => in_dims = Some(v.parse::<Dims>().map_err(|e| e.to_string())?),
            "OC" => oc = Some(num()?),
            "KSZ" => ksz = Some(num()?),
            "stride" => stride = Some(num()?),
            "pad" if v == "same" => pad = Some(usize::MAX),
            "pad" => pad = Some(num()?),
            "B" => batch = Some(num()?),
            "bias" => bias = parse_flag(v)?,
            "relu" => relu = parse_flag(v)?,
            _ => return Err(format!("unknown key `{k}`")),
        }
    }
    let in_dims = in_dims.ok_or("missing in=")?;
    let ksz = ksz.ok_or("missing KSZ=")?;
    let pad = match pad {
        Some(usize::MAX) => ksz / 2,
        Some(p) => p,
        None => 0,
    };
    let mut spec = ConvSpec::new(in_dims, oc.ok_or("missing OC=")?, ksz, stride.unwrap_or(1), pad)
        .map_err(|e| e.to_string())?
        .with_bias(bias)
        .with_relu(relu);
    let batch_given = batch.is_some() || spec.is_batched();
    if let Some(b) = batch {
        if spec.is_batched() && spec.batch() != b {
            return Err(format!("B={b} conflicts with batched in dims"));
        }
        spec = spec.with_batch(b).map_err(|e| e.to_string())?;
    }
    Ok(NamedOp {
        name: name.to_string(),
        spec,
        batch_given,
    })
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct JsonOp {
    name: String,
    #[serde(rename = "in")]
    in_dims: Dims,
    #[serde(rename = "OC")]
    oc: usize,
    #[serde(rename = "KSZ")]
    ksz: usize,
    #[serde(default = "one")]
    stride: usize,
    #[serde(default)]
    pad: usize,
    #[serde(rename = "B")]
    batch: Option<usize>,
    #[serde(default)]
    bias: bool,
    #[serde(default)]
    relu: bool,
}

fn one() -> usize {
    1
}

/// Parse an op list: either a JSON array of op objects or one op line per
/// line (`#` starts a comment). `source` names the input in errors.
pub fn parse_op_list(text: &str, source: &str) -> Result<Vec<NamedOp>> {
    if text.trim_start().starts_with('[') {
        let ops: Vec<JsonOp> = serde_json::from_str(text).map_err(|e| Error::Parse {
            path: source.to_string(),
            line: e.line(),
            msg: e.to_string(),
        })?;
        return ops
            .into_iter()
            .map(|o| {
                let mut spec = ConvSpec::new(o.in_dims, o.oc, o.ksz, o.stride, o.pad)?
                    .with_bias(o.bias)
                    .with_relu(o.relu);
                let batch_given = o.batch.is_some() || spec.is_batched();
                if let Some(b) = o.batch {
                    spec = spec.with_batch(b)?;
                }
                Ok(NamedOp {
                    name: o.name,
                    spec,
                    batch_given,
                })
            })
            .collect::<Result<Vec<_>>>()
            .map_err(|e: Error| Error::Parse {
                path: source.to_string(),
                line: 0,
                msg: e.to_string(),
            });
    }
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap().trim();
        if line.is_empty() {
            continue;
        }
        out.push(parse_op_line(line).map_err(|msg| Error::Parse {
            path: source.to_string(),
            line: i + 1,
            msg,
        })?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn running_example() -> ConvSpec {
        ConvSpec::image(205, 205, 3, 96, 7, 2, 0).unwrap()
    }

    #[test]
    fn running_example_shapes() {
        let sh = infer_shapes(&running_example()).unwrap();
        assert_eq!(sh.out_dims.to_string(), "Y:X:C=100:100:96");
        assert_eq!(sh.filts_dims.to_string(), "OC:KY:KX:IC=96:7:7:3");
        assert_eq!(sh.inmat_dims.to_string(), "M:K=10000:147");
        assert_eq!(sh.out_dims.len(), 960_000);
        assert_eq!(sh.flops, 282_240_000);
    }

    #[test]
    fn k1_identity_window_and_same_padding() {
        let s = ConvSpec::image(13, 9, 5, 7, 1, 1, 0).unwrap();
        assert_eq!((s.out_y(), s.out_x()), (13, 9));
        let s = ConvSpec::image(8, 8, 2, 4, 3, 1, 1).unwrap();
        assert_eq!(s.out_dims().to_string(), "Y:X:C=8:8:4");
    }

    #[test]
    fn kernel_larger_than_padded_input() {
        assert!(ConvSpec::image(4, 4, 1, 1, 7, 1, 1).is_err());
        assert!(ConvSpec::image(4, 4, 1, 1, 6, 1, 1).is_ok());
    }

    #[test]
    fn batch_axis_of_one_is_dropped() {
        let a = ConvSpec::new("B:Y:X:C=1:5:5:2".parse().unwrap(), 3, 3, 1, 1).unwrap();
        let b = ConvSpec::image(5, 5, 2, 3, 3, 1, 1).unwrap();
        assert_eq!(a, b);
        assert_eq!(b.clone().with_batch(2).unwrap().in_dims().to_string(), "B:Y:X:C=2:5:5:2");
    }

    #[test]
    fn oracle_scalar_and_zero() {
        let s = ConvSpec::image(1, 1, 1, 1, 1, 1, 0).unwrap();
        let inp = Nda::new(s.in_dims().clone(), vec![3.0]).unwrap();
        let f = Nda::new(s.filts_dims(), vec![2.0]).unwrap();
        assert_eq!(conv_oracle(&s, &inp, &f, None).unwrap().data(), &[6.0]);

        let s = ConvSpec::image(6, 6, 3, 4, 3, 1, 1).unwrap();
        let inp = Nda::random_dyadic(s.in_dims().clone(), 1);
        let out = conv_oracle(&s, &inp, &Nda::zeros(s.filts_dims()), None).unwrap();
        assert!(out.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn oracle_rejects_mismatched_dims() {
        let s = ConvSpec::image(6, 6, 3, 4, 3, 1, 1).unwrap();
        let inp = Nda::zeros("Y:X:C=6:6:2".parse().unwrap());
        assert!(conv_oracle(&s, &inp, &Nda::zeros(s.filts_dims()), None).is_err());
        let inp = Nda::zeros(s.in_dims().clone());
        assert!(conv_oracle(&s.clone().with_bias(true), &inp, &Nda::zeros(s.filts_dims()), None).is_err());
    }

    #[test]
    fn im2col_running_example_and_k1_identity() {
        let s = running_example();
        let inp = Nda::random_dyadic(s.in_dims().clone(), 5);
        assert_eq!(im2col(&s, &inp).unwrap().dims().to_string(), "M:K=10000:147");

        let s = ConvSpec::image(6, 5, 4, 3, 1, 1, 0).unwrap();
        let inp = Nda::random_dyadic(s.in_dims().clone(), 6);
        assert_eq!(im2col(&s, &inp).unwrap().data(), inp.data());
    }

    #[test]
    fn im2col_tiny_by_enumeration() {
        let s = ConvSpec::image(4, 4, 1, 1, 3, 1, 0).unwrap();
        let inp = Nda::from_fn(s.in_dims().clone(), |i| (i[0] * 4 + i[1]) as f32);
        let m = im2col(&s, &inp).unwrap();
        assert_eq!(m.dims().to_string(), "M:K=4:9");
        for r in 0..4 {
            let (oy, ox) = (r / 2, r % 2);
            for c in 0..9 {
                let (ky, kx) = (c / 3, c % 3);
                assert_eq!(m.data()[r * 9 + c], ((oy + ky) * 4 + ox + kx) as f32);
            }
        }
    }

    #[test]
    fn relu_softmax_pool_examples() {
        let v = Nda::new("N=3".parse().unwrap(), vec![-1.0, 0.0, 2.0]).unwrap();
        assert_eq!(relu_ref(&v).data(), &[0.0, 0.0, 2.0]);

        let u = Nda::new("N=5".parse().unwrap(), vec![0.3; 5]).unwrap();
        for &p in softmax_ref(&u, "N").unwrap().data() {
            assert!((p - 0.2).abs() < 1e-7);
        }

        let ramp = Nda::from_fn("Y:X:C=4:4:1".parse().unwrap(), |i| (i[0] * 4 + i[1]) as f32);
        let p = pool_ref(PoolKind::Max, 2, 2, &ramp).unwrap();
        assert_eq!(p.dims().to_string(), "Y:X:C=2:2:1");
        for oy in 0..2 {
            for ox in 0..2 {
                let mut m = f32::MIN;
                for wy in 0..2 {
                    for wx in 0..2 {
                        m = m.max(ramp.get(&[oy * 2 + wy, ox * 2 + wx, 0]));
                    }
                }
                assert_eq!(p.get(&[oy, ox, 0]), m);
            }
        }
        assert!(pool_ref(PoolKind::Avg, 5, 1, &ramp).is_err());
        let a = pool_ref(PoolKind::Avg, 4, 4, &ramp).unwrap();
        assert_eq!(a.data(), &[7.5]);
    }

    #[test]
    fn op_line_round_trip() {
        let op = parse_op_line("conv1 in=Y:X:C=205:205:3 OC=96 KSZ=7 stride=2 pad=0 B=1").unwrap();
        assert_eq!(op.spec, running_example());
        assert!(op.batch_given);
        let line = format_op_line("conv1", &op.spec);
        assert_eq!(parse_op_line(&line).unwrap().spec, op.spec);

        let same = parse_op_line("c in=Y:X:C=8:8:2 OC=4 KSZ=5 pad=same").unwrap();
        assert_eq!(same.spec.pad, 2);
        assert!(!same.batch_given);
        assert!(parse_op_line("c in=Y:X:C=8:8:2 OC=4 KSZ=5 bogus=1").is_err());
        assert!(parse_op_line("c in=Y:X:C=8:8:2 KSZ=5").is_err());
    }

    #[test]
    fn op_list_formats() {
        let text = "# comment\nconv1 in=Y:X:C=8:8:2 OC=4 KSZ=3 pad=1 B=2 bias=1 relu=1\n\nc2 in=Y:X:C=8:8:4 OC=4 KSZ=1\n";
        let ops = parse_op_list(text, "t.ops").unwrap();
        assert_eq!(ops.len(), 2);
        assert_eq!(ops[0].spec.batch(), 2);
        assert!(ops[0].spec.has_bias && ops[0].spec.fuse_relu);

        let err = parse_op_list("ok in=Y:X:C=8:8:2 OC=4 KSZ=1\nbad line\n", "t.ops").unwrap_err();
        assert!(err.to_string().starts_with("t.ops:2:"), "{err}");

        let json = r#"[{"name":"a","in":"Y:X:C=8:8:2","OC":4,"KSZ":3,"pad":1,"B":5,"bias":true}]"#;
        let ops = parse_op_list(json, "t.json").unwrap();
        assert_eq!(ops[0].spec.batch(), 5);
        assert!(ops[0].spec.has_bias && !ops[0].spec.fuse_relu);
    }

    #[test]
    fn scaled_preserves_kernel_and_rounds_up() {
        let s = ConvSpec::image(227, 227, 3, 96, 11, 4, 0).unwrap().with_batch(5).unwrap();
        let t = s.scaled(4.0).unwrap();
        assert_eq!((t.in_y(), t.in_x(), t.in_c(), t.out_channels), (57, 57, 1, 24));
        assert_eq!((t.kernel_size, t.stride, t.batch()), (11, 4, 5));
        let fc = ConvSpec::image(6, 6, 256, 4096, 6, 1, 0).unwrap();
        assert_eq!(fc.scaled(4.0).unwrap().in_y(), 6);
    }
}
