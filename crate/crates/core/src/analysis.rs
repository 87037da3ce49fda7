//! Arithmetic intensity and roofline math.
//!
//! Counts (FLOPs, bytes) are exact integers; ratios are `f64`. Bytes are the
//! minimal traffic: every array crosses the off-chip boundary exactly once.

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::netops::ConvShapes;

/// Device capability record. Only `name` and the two peaks are required in
/// a machine file; the rest default to a generic discrete-GPU profile.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MachineModel {
    pub name: String,
    pub peak_gflops: f64,
    pub peak_gbps: f64,
    #[serde(default = "defaults::local_mem_bytes")]
    pub local_mem_bytes: u64,
    #[serde(default = "defaults::max_wg_threads")]
    pub max_wg_threads: u32,
    #[serde(default = "defaults::min_wg_threads")]
    pub min_wg_threads: u32,
    #[serde(default = "defaults::reg_budget")]
    pub reg_budget_per_thread: u32,
    #[serde(default = "defaults::simd_width")]
    pub simd_width: u32,
    #[serde(default = "defaults::yes")]
    pub explicit_local_mem_profitable: bool,
    /// Used for the workgroup-count saturation threshold (4x this value).
    #[serde(default = "defaults::compute_units")]
    pub compute_units: u32,
    #[serde(default)]
    pub tconv_bounds: TconvBounds,
}

/// Applicability window for the tiled-convolution variant.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TconvBounds {
    pub min_ksz: u32,
    pub max_ksz: u32,
    /// Padded input width must lie in `[KSZ*min_width_factor, KSZ*max_width_factor]`.
    pub min_width_factor: u32,
    pub max_width_factor: u32,
}

impl Default for TconvBounds {
    fn default() -> Self {
        TconvBounds {
            min_ksz: 2,
            max_ksz: 11,
            min_width_factor: 5,
            max_width_factor: 50,
        }
    }
}

mod defaults {
    pub fn local_mem_bytes() -> u64 {
        48 * 1024
    }
    pub fn max_wg_threads() -> u32 {
        256
    }
    pub fn min_wg_threads() -> u32 {
        32
    }
    pub fn reg_budget() -> u32 {
        128
    }
    pub fn simd_width() -> u32 {
        1
    }
    pub fn yes() -> bool {
        true
    }
    pub fn compute_units() -> u32 {
        8
    }
}

impl MachineModel {
    /// Generic discrete GPU with explicit local memory and scalar access.
    pub fn generic_gpu() -> Self {
        MachineModel {
            name: "generic-gpu".into(),
            peak_gflops: 6000.0,
            peak_gbps: 300.0,
            local_mem_bytes: defaults::local_mem_bytes(),
            max_wg_threads: defaults::max_wg_threads(),
            min_wg_threads: defaults::min_wg_threads(),
            reg_budget_per_thread: defaults::reg_budget(),
            simd_width: 1,
            explicit_local_mem_profitable: true,
            compute_units: 24,
            tconv_bounds: TconvBounds::default(),
        }
    }

    /// Mobile-GPU profile: 4-wide vector loads/stores, cache blocking
    /// instead of explicit local memory.
    pub fn mobile_simd() -> Self {
        MachineModel {
            name: "mobile-simd".into(),
            peak_gflops: 500.0,
            peak_gbps: 30.0,
            local_mem_bytes: 32 * 1024,
            max_wg_threads: 256,
            min_wg_threads: 32,
            reg_budget_per_thread: 128,
            simd_width: 4,
            explicit_local_mem_profitable: false,
            compute_units: 4,
            tconv_bounds: TconvBounds::default(),
        }
    }

    /// Built-in profile by name (`generic-gpu` or `mobile-simd`, either
    /// separator).
    pub fn builtin(name: &str) -> Option<Self> {
        match name.replace('_', "-").as_str() {
            "generic-gpu" => Some(Self::generic_gpu()),
            "mobile-simd" => Some(Self::mobile_simd()),
            _ => None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::Machine(format!("{}: {msg}", self.name)));
        if !(self.peak_gflops > 0.0 && self.peak_gflops.is_finite()) {
            return bad("peak_gflops must be positive");
        }
        if !(self.peak_gbps > 0.0 && self.peak_gbps.is_finite()) {
            return bad("peak_gbps must be positive");
        }
        if self.local_mem_bytes == 0 || self.max_wg_threads == 0 || self.min_wg_threads == 0 {
            return bad("local memory and thread bounds must be positive");
        }
        if self.reg_budget_per_thread == 0 || self.simd_width == 0 || self.compute_units == 0 {
            return bad("register budget, simd width and compute units must be positive");
        }
        if self.min_wg_threads > self.max_wg_threads {
            return bad("min_wg_threads exceeds max_wg_threads");
        }
        let tb = &self.tconv_bounds;
        if tb.min_ksz > tb.max_ksz || tb.min_width_factor > tb.max_width_factor {
            return bad("tconv bounds are inverted");
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let m: MachineModel = serde_json::from_str(text)?;
        m.validate()?;
        Ok(m)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Bound {
    Compute,
    Bandwidth,
}

impl fmt::Display for Bound {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Bound::Compute => "compute",
            Bound::Bandwidth => "bandwidth",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Lowering {
    /// Read `in`, `filts`, write `out` once each.
    Direct,
    /// Materialize the patch matrix: `in` is replaced by `inmat`.
    Im2colGemm,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AIReport {
    pub flops: u64,
    pub bytes_min: u64,
    pub ai: f64,
    pub knee_ai: f64,
    pub predicted_bound: Bound,
}

impl AIReport {
    pub fn new(flops: u64, bytes_min: u64, knee_ai: f64) -> Self {
        let ai = flops as f64 / bytes_min as f64;
        AIReport {
            flops,
            bytes_min,
            ai,
            knee_ai,
            predicted_bound: if ai >= knee_ai { Bound::Compute } else { Bound::Bandwidth },
        }
    }
}

/// `2MNK / 4(MN + MK + KN)` in FLOPs per byte.
pub fn sgemm_ai(m: u64, n: u64, k: u64) -> f64 {
    let flops = 2 * m as u128 * n as u128 * k as u128;
    let bytes = 4 * (m as u128 * n as u128 + m as u128 * k as u128 + k as u128 * n as u128);
    flops as f64 / bytes as f64
}

pub fn knee_ai(m: &MachineModel) -> f64 {
    m.peak_gflops / m.peak_gbps
}

pub fn conv_ai(shapes: &ConvShapes, lowering: Lowering, machine: &MachineModel) -> AIReport {
    let bytes = match lowering {
        Lowering::Direct => shapes.min_bytes,
        Lowering::Im2colGemm => {
            4 * (shapes.inmat_dims.len() + shapes.filts_dims.len() + shapes.out_dims.len()) as u64
        }
    };
    AIReport::new(shapes.flops, bytes, knee_ai(machine))
}

/// Attainable GF/s: `min(peak, ai * bandwidth)`.
pub fn roofline_point(flops: u64, bytes: u64, m: &MachineModel) -> f64 {
    let ai = flops as f64 / bytes as f64;
    m.peak_gflops.min(ai * m.peak_gbps)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netops::{infer_shapes, ConvSpec};

    fn machine(gf: f64, gb: f64) -> MachineModel {
        MachineModel {
            peak_gflops: gf,
            peak_gbps: gb,
            ..MachineModel::generic_gpu()
        }
    }

    #[test]
    fn sgemm_ai_examples() {
        assert!((sgemm_ai(10000, 96, 147) - 28.869).abs() < 1e-3);
        assert!((sgemm_ai(1, 1, 1) - 2.0 / 12.0).abs() < 1e-15);
        assert!((sgemm_ai(4096, 4096, 4096) - 682.666_666).abs() < 1e-3);
    }

    #[test]
    fn knee_examples() {
        assert_eq!(knee_ai(&machine(100.0, 10.0)), 10.0);
        assert_eq!(knee_ai(&machine(6000.0, 300.0)), knee_ai(&machine(600.0, 30.0)));
    }

    #[test]
    fn running_example_conv_ai() {
        let sh = infer_shapes(&ConvSpec::image(205, 205, 3, 96, 7, 2, 0).unwrap()).unwrap();
        let m = MachineModel::generic_gpu();
        let direct = conv_ai(&sh, Lowering::Direct, &m);
        assert_eq!(direct.flops, 282_240_000);
        assert_eq!(direct.bytes_min, 4 * (126_075 + 14_112 + 960_000));
        assert!((direct.ai - 64.1346).abs() < 1e-3);
        assert_eq!(direct.predicted_bound, Bound::Compute);

        let lowered = conv_ai(&sh, Lowering::Im2colGemm, &m);
        assert_eq!(lowered.bytes_min, 4 * (1_470_000 + 14_112 + 960_000));
        let inflation = sh.inmat_dims.len() as f64 / sh.in_dims.len() as f64;
        assert!((inflation / 12.25 - 1.0).abs() < 0.10, "{inflation}");
    }

    #[test]
    fn k1_lowerings_agree() {
        let sh = infer_shapes(&ConvSpec::image(14, 14, 256, 64, 1, 1, 0).unwrap()).unwrap();
        let m = MachineModel::generic_gpu();
        assert_eq!(conv_ai(&sh, Lowering::Direct, &m), conv_ai(&sh, Lowering::Im2colGemm, &m));
    }

    #[test]
    fn roofline_knee_and_half() {
        let m = machine(100.0, 10.0);
        assert_eq!(roofline_point(1000, 100, &m), 100.0);
        assert_eq!(roofline_point(500, 100, &m), 50.0);
        assert_eq!(roofline_point(10_000, 100, &m), 100.0);
    }

    #[test]
    fn machine_file_defaults_and_validation() {
        let m = MachineModel::from_json(r#"{"name":"x","peak_gflops":100,"peak_gbps":10}"#).unwrap();
        assert_eq!(m.max_wg_threads, 256);
        assert_eq!(m.min_wg_threads, 32);
        assert_eq!(m.simd_width, 1);
        assert!(MachineModel::from_json(r#"{"name":"x","peak_gflops":100}"#).is_err());
        assert!(MachineModel::from_json(
            r#"{"name":"x","peak_gflops":100,"peak_gbps":10,"min_wg_threads":512}"#
        )
        .is_err());
        assert!(MachineModel::from_json(r#"{"name":"x","peak_gflops":1,"peak_gbps":1,"bogus":1}"#).is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn sgemm_ai_is_permutation_invariant(m in 1u64..100_000, n in 1u64..100_000, k in 1u64..100_000) {
                let base = sgemm_ai(m, n, k);
                for v in [sgemm_ai(m, k, n), sgemm_ai(n, m, k), sgemm_ai(n, k, m), sgemm_ai(k, m, n), sgemm_ai(k, n, m)] {
                    prop_assert!((v - base).abs() <= 1e-12 * base);
                }
            }

            #[test]
            fn roofline_monotone_and_capped(f1 in 1u64..1_000_000, f2 in 1u64..1_000_000, bytes in 1u64..100_000) {
                let m = MachineModel::generic_gpu();
                let (lo, hi) = (f1.min(f2), f1.max(f2));
                let (a, b) = (roofline_point(lo, bytes, &m), roofline_point(hi, bytes, &m));
                prop_assert!(a <= b);
                prop_assert!(b <= m.peak_gflops);
            }

            #[test]
            fn direct_bytes_never_exceed_im2col(y in 1usize..40, x in 1usize..40, c in 1usize..8,
                                               oc in 1usize..8, k in 1usize..6, p in 0usize..3) {
                // unit stride: every input element lands in at least one patch
                prop_assume!(y + 2 * p >= k && x + 2 * p >= k);
                let s = 1;
                let spec = ConvSpec::image(y, x, c, oc, k, s, p).unwrap();
                let sh = infer_shapes(&spec).unwrap();
                let m = MachineModel::generic_gpu();
                let d = conv_ai(&sh, Lowering::Direct, &m).bytes_min;
                let g = conv_ai(&sh, Lowering::Im2colGemm, &m).bytes_min;
                prop_assert!(d <= g);
                if k == 1 && s == 1 && p == 0 {
                    prop_assert_eq!(d, g);
                }
            }
        }
    }
}
