//! Named-dimension ND-array metadata and dense `f32` storage.
//!
//! Data is row-major in axis order: the last axis varies fastest. The textual
//! form of [`Dims`] is `names=sizes`, e.g. `Y:X:C=205:205:3`.

use std::fmt;
use std::ops::Range;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Ordered list of named axes.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Dims {
    axes: Vec<(String, usize)>,
}

impl Dims {
    pub fn new<S: Into<String>>(axes: impl IntoIterator<Item = (S, usize)>) -> Result<Self> {
        let axes: Vec<(String, usize)> = axes.into_iter().map(|(n, s)| (n.into(), s)).collect();
        if axes.is_empty() {
            return Err(Error::Dims("at least one axis is required".into()));
        }
        for (i, (name, size)) in axes.iter().enumerate() {
            if name.is_empty() || !name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_') {
                return Err(Error::Dims(format!("bad axis name `{name}`")));
            }
            if *size == 0 {
                return Err(Error::Dims(format!("axis `{name}` has size 0")));
            }
            if axes[..i].iter().any(|(n, _)| n == name) {
                return Err(Error::Dims(format!("duplicate axis `{name}`")));
            }
        }
        let dims = Dims { axes };
        dims.product()?;
        Ok(dims)
    }

    pub fn axes(&self) -> &[(String, usize)] {
        &self.axes
    }

    pub fn rank(&self) -> usize {
        self.axes.len()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.axes.iter().map(|(n, _)| n.as_str())
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.axes.iter().map(|&(_, s)| s).collect()
    }

    pub fn position(&self, name: &str) -> Option<usize> {
        self.axes.iter().position(|(n, _)| n == name)
    }

    pub fn size_of(&self, name: &str) -> Option<usize> {
        self.position(name).map(|i| self.axes[i].1)
    }

    /// Total element count, rejecting overflow.
    pub fn product(&self) -> Result<usize> {
        self.axes
            .iter()
            .try_fold(1usize, |acc, &(_, s)| acc.checked_mul(s))
            .ok_or_else(|| Error::Overflow(self.to_string()))
    }

    /// Element count of a validated `Dims`; construction already proved it fits.
    pub fn len(&self) -> usize {
        self.axes.iter().map(|&(_, s)| s).product()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Row-major strides, last axis stride 1.
    pub fn strides(&self) -> Vec<usize> {
        let mut strides = vec![1; self.axes.len()];
        for i in (0..self.axes.len().saturating_sub(1)).rev() {
            strides[i] = strides[i + 1] * self.axes[i + 1].1;
        }
        strides
    }

    /// Flat offset of a full multi-index.
    pub fn offset(&self, index: &[usize]) -> usize {
        debug_assert_eq!(index.len(), self.axes.len());
        index
            .iter()
            .zip(&self.axes)
            .fold(0, |acc, (&i, &(_, s))| acc * s + i)
    }
}

/// Product of all axis sizes.
pub fn dims_product(d: &Dims) -> Result<usize> {
    d.product()
}

impl fmt::Display for Dims {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let names: Vec<&str> = self.names().collect();
        let sizes: Vec<String> = self.axes.iter().map(|(_, s)| s.to_string()).collect();
        write!(f, "{}={}", names.join(":"), sizes.join(":"))
    }
}

impl FromStr for Dims {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (names, sizes) = s
            .trim()
            .split_once('=')
            .ok_or_else(|| Error::Dims(format!("expected `names=sizes`, got `{s}`")))?;
        let names: Vec<&str> = names.split(':').collect();
        let sizes: Vec<&str> = sizes.split(':').collect();
        if names.len() != sizes.len() {
            return Err(Error::Dims(format!(
                "{} names but {} sizes in `{s}`",
                names.len(),
                sizes.len()
            )));
        }
        let axes = names
            .into_iter()
            .zip(sizes)
            .map(|(n, sz)| {
                sz.parse::<usize>()
                    .map(|v| (n.to_string(), v))
                    .map_err(|_| Error::Dims(format!("bad size `{sz}` in `{s}`")))
            })
            .collect::<Result<Vec<_>>>()?;
        Dims::new(axes)
    }
}

impl Serialize for Dims {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for Dims {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Selection applied to one named axis by [`Nda::slice`].
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum AxisBinding {
    /// Fix the axis to one index; the axis is dropped from the result.
    Index(usize),
    /// Keep a half-open sub-range; the axis is resized.
    Range(Range<usize>),
}

/// Dense named ND-array of `f32`.
#[derive(Clone, Debug, PartialEq)]
pub struct Nda {
    dims: Dims,
    data: Vec<f32>,
}

impl Nda {
    pub fn new(dims: Dims, data: Vec<f32>) -> Result<Self> {
        let n = dims.len();
        if data.len() != n {
            return Err(Error::Shape(format!(
                "{} elements supplied for dims {dims} ({n} required)",
                data.len()
            )));
        }
        Ok(Nda { dims, data })
    }

    pub fn zeros(dims: Dims) -> Self {
        let data = vec![0.0; dims.len()];
        Nda { dims, data }
    }

    pub fn from_fn(dims: Dims, mut f: impl FnMut(&[usize]) -> f32) -> Self {
        let sizes = dims.sizes();
        let mut idx = vec![0usize; sizes.len()];
        let mut data = Vec::with_capacity(dims.len());
        for _ in 0..dims.len() {
            data.push(f(&idx));
            for ax in (0..sizes.len()).rev() {
                idx[ax] += 1;
                if idx[ax] < sizes[ax] {
                    break;
                }
                idx[ax] = 0;
            }
        }
        Nda { dims, data }
    }

    /// Values drawn from the dyadic grid `{-8/8, -7/8, ..., 8/8}`.
    ///
    /// Every product and partial sum of such values is exact in `f32` for
    /// the sizes used here, so equivalence checks are insensitive to
    /// accumulation order and FMA contraction.
    pub fn random_dyadic(dims: Dims, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..dims.len())
            .map(|_| rng.gen_range(-8i32..=8) as f32 / 8.0)
            .collect();
        Nda { dims, data }
    }

    /// Uniform values in `[lo, hi)`.
    pub fn random_uniform(dims: Dims, seed: u64, lo: f32, hi: f32) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..dims.len()).map(|_| rng.gen_range(lo..hi)).collect();
        Nda { dims, data }
    }

    pub fn dims(&self) -> &Dims {
        &self.dims
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn get(&self, index: &[usize]) -> f32 {
        self.data[self.dims.offset(index)]
    }

    /// Copy out a sub-array. Axes bound to an index are removed, axes bound
    /// to a range are resized, and unbound axes are kept whole.
    pub fn slice(&self, bindings: &[(&str, AxisBinding)]) -> Result<Nda> {
        let rank = self.dims.rank();
        let mut ranges: Vec<Range<usize>> = self.dims.axes().iter().map(|&(_, s)| 0..s).collect();
        let mut keep = vec![true; rank];
        for (name, binding) in bindings {
            let ax = self
                .dims
                .position(name)
                .ok_or_else(|| Error::UnknownAxis(name.to_string()))?;
            let size = self.dims.axes()[ax].1;
            match binding {
                AxisBinding::Index(i) => {
                    if *i >= size {
                        return Err(Error::OutOfBounds {
                            axis: name.to_string(),
                            what: format!("index {i}"),
                            size,
                        });
                    }
                    ranges[ax] = *i..*i + 1;
                    keep[ax] = false;
                }
                AxisBinding::Range(r) => {
                    if r.start >= r.end || r.end > size {
                        return Err(Error::OutOfBounds {
                            axis: name.to_string(),
                            what: format!("range [{}, {})", r.start, r.end),
                            size,
                        });
                    }
                    ranges[ax] = r.clone();
                }
            }
        }

        let out_axes: Vec<(String, usize)> = self
            .dims
            .axes()
            .iter()
            .zip(&ranges)
            .zip(&keep)
            .filter(|(_, &k)| k)
            .map(|(((n, _), r), _)| (n.clone(), r.len()))
            .collect();
        let out_dims = if out_axes.is_empty() {
            // every axis bound to an index: a single element
            Dims::new([("N", 1)])?
        } else {
            Dims::new(out_axes)?
        };

        let strides = self.dims.strides();
        let mut data = Vec::with_capacity(out_dims.len());
        let mut idx: Vec<usize> = ranges.iter().map(|r| r.start).collect();
        loop {
            let off: usize = idx.iter().zip(&strides).map(|(i, s)| i * s).sum();
            data.push(self.data[off]);
            let mut ax = rank;
            loop {
                if ax == 0 {
                    return Nda::new(out_dims, data);
                }
                ax -= 1;
                idx[ax] += 1;
                if idx[ax] < ranges[ax].end {
                    break;
                }
                idx[ax] = ranges[ax].start;
            }
        }
    }

    /// Same flat data under new dims with equal element count.
    pub fn reshape(&self, new: Dims) -> Result<Nda> {
        if new.len() != self.dims.len() {
            return Err(Error::Shape(format!(
                "cannot reshape {} ({} elements) to {new} ({} elements)",
                self.dims,
                self.dims.len(),
                new.len()
            )));
        }
        Ok(Nda {
            dims: new,
            data: self.data.clone(),
        })
    }

    pub fn into_reshaped(self, new: Dims) -> Result<Nda> {
        if new.len() != self.dims.len() {
            return Err(Error::Shape(format!("cannot reshape {} to {new}", self.dims)));
        }
        Ok(Nda {
            dims: new,
            data: self.data,
        })
    }
}

/// Largest element-wise relative error `|a-b| / max(|b|, floor)`.
pub fn max_rel_err(actual: &[f32], expected: &[f32], floor: f64) -> f64 {
    assert_eq!(actual.len(), expected.len());
    actual
        .iter()
        .zip(expected)
        .map(|(&a, &e)| {
            let (a, e) = (a as f64, e as f64);
            if a.is_nan() || e.is_nan() {
                return f64::INFINITY;
            }
            (a - e).abs() / e.abs().max(floor)
        })
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn d(s: &str) -> Dims {
        s.parse().unwrap()
    }

    #[test]
    fn product_examples() {
        assert_eq!(dims_product(&d("Y:X:C=205:205:3")).unwrap(), 126_075);
        assert_eq!(dims_product(&d("Y:X:C=100:100:96")).unwrap(), 960_000);
        assert_eq!(dims_product(&d("N=1")).unwrap(), 1);
    }

    #[test]
    fn rejects_bad_dims() {
        assert!(Dims::new([("Y", 0)]).is_err());
        assert!(Dims::new([("Y", 2), ("Y", 3)]).is_err());
        assert!(matches!(
            Dims::new([("A", usize::MAX), ("B", 2)]),
            Err(Error::Overflow(_))
        ));
        assert!("Y:X=1".parse::<Dims>().is_err());
        assert!("Y:X".parse::<Dims>().is_err());
    }

    #[test]
    fn text_round_trip() {
        for s in ["Y:X:C=205:205:3", "N=1", "OC:KSZ:KSZ2:IC=96:7:7:3"] {
            assert_eq!(d(s).to_string(), s);
        }
        let j = serde_json::to_string(&d("B:Y=2:3")).unwrap();
        assert_eq!(j, "\"B:Y=2:3\"");
        assert_eq!(serde_json::from_str::<Dims>(&j).unwrap(), d("B:Y=2:3"));
    }

    #[test]
    fn slice_filter_channel() {
        let filts = Nda::from_fn(d("OC:KY:KX:IC=96:7:7:3"), |i| (i[0] * 1000 + i[3]) as f32);
        let s = filts.slice(&[("OC", AxisBinding::Index(0))]).unwrap();
        assert_eq!(s.dims(), &d("KY:KX:IC=7:7:3"));
        assert_eq!(s.get(&[6, 6, 2]), 2.0);
    }

    #[test]
    fn slice_empty_bindings_is_identity() {
        let a = Nda::random_dyadic(d("A:B=3:4"), 1);
        assert_eq!(a.slice(&[]).unwrap(), a);
    }

    #[test]
    fn slice_window_matches_gather() {
        let input = Nda::random_dyadic(d("Y:X:C=205:205:3"), 7);
        let w = input
            .slice(&[("Y", AxisBinding::Range(0..7)), ("X", AxisBinding::Range(0..7))])
            .unwrap();
        assert_eq!(w.dims(), &d("Y:X:C=7:7:3"));
        let mut expect = Vec::new();
        for y in 0..7 {
            for x in 0..7 {
                for c in 0..3 {
                    expect.push(input.data()[(y * 205 + x) * 3 + c]);
                }
            }
        }
        assert_eq!(w.data(), &expect[..]);
    }

    #[test]
    fn slice_errors() {
        let a = Nda::zeros(d("A:B=3:4"));
        assert!(matches!(a.slice(&[("Z", AxisBinding::Index(0))]), Err(Error::UnknownAxis(_))));
        assert!(a.slice(&[("A", AxisBinding::Index(3))]).is_err());
        assert!(a.slice(&[("B", AxisBinding::Range(2..5))]).is_err());
    }

    #[test]
    fn reshape_examples() {
        let outmat = Nda::random_dyadic(d("M:N=10000:96"), 3);
        let out = outmat.reshape(d("Y:X:C=100:100:96")).unwrap();
        assert_eq!(out.data(), outmat.data());
        let r = Nda::new(d("A:B=2:3"), (0..6).map(|v| v as f32).collect()).unwrap();
        let t = r.reshape(d("A:B=3:2")).unwrap();
        assert_eq!(t.data(), &[0.0, 1.0, 2.0, 3.0, 4.0, 5.0]);
        assert_eq!(r.reshape(r.dims().clone()).unwrap(), r);
        assert!(r.reshape(d("A=5")).is_err());
    }

    #[test]
    fn exhaustive_slice_vs_flat_index() {
        // every small 4-axis shape, every single-index binding of every axis
        for a in 1..=4 {
            for b in 1..=4 {
                for c in 1..=4 {
                    for e in 1..=4 {
                        let dims = Dims::new([("A", a), ("B", b), ("C", c), ("E", e)]).unwrap();
                        let arr = Nda::from_fn(dims.clone(), |i| dims.offset(i) as f32);
                        for (ax, name) in ["A", "B", "C", "E"].iter().enumerate() {
                            let size = dims.axes()[ax].1;
                            for i in 0..size {
                                let s = arr.slice(&[(name, AxisBinding::Index(i))]).unwrap();
                                let strides = dims.strides();
                                let mut expect = Vec::new();
                                for off in 0..dims.len() {
                                    if (off / strides[ax]) % size == i {
                                        expect.push(off as f32);
                                    }
                                }
                                assert_eq!(s.data(), &expect[..]);
                            }
                        }
                    }
                }
            }
        }
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn reshape_inverse_is_identity(a in 1usize..6, b in 1usize..6, c in 1usize..6, seed: u64) {
                let dims = Dims::new([("A", a), ("B", b), ("C", c)]).unwrap();
                let flat = Dims::new([("N", a * b * c)]).unwrap();
                let x = Nda::random_dyadic(dims.clone(), seed);
                let back = x.reshape(flat).unwrap().reshape(dims).unwrap();
                prop_assert_eq!(back, x);
            }

            #[test]
            fn dims_text_round_trip(sizes in proptest::collection::vec(1usize..1000, 1..5)) {
                let dims = Dims::new(sizes.iter().enumerate().map(|(i, &s)| (format!("D{i}"), s))).unwrap();
                prop_assert_eq!(dims.to_string().parse::<Dims>().unwrap(), dims);
            }
        }
    }
}
