//! Variant selection and blocking-constant derivation.
//!
//! Every op is viewed as `C[M x N] = A[M x K] * Bt[N x K]ᵀ`. A thread owns an
//! `Mt x Nt` register tile, a workgroup is an `Mb x Nb` grid of threads, and
//! the launch is an `Mg x Ng` grid of workgroups.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::analysis::MachineModel;
use crate::error::{Error, Result};
use crate::netops::ConvSpec;

/// Register estimate for addresses and loop counters.
pub const REG_OVERHEAD: u32 = 16;
/// Upper end of the per-thread tile and unroll ranges.
pub const MAX_TILE: u32 = 8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Conv,
    K1conv,
    Tconv,
    ConvSimd,
    K1convSimd,
    Sgemm,
}

impl Variant {
    pub const CONV_VARIANTS: [Variant; 5] = [
        Variant::Conv,
        Variant::K1conv,
        Variant::Tconv,
        Variant::ConvSimd,
        Variant::K1convSimd,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Conv => "conv",
            Variant::K1conv => "k1conv",
            Variant::Tconv => "tconv",
            Variant::ConvSimd => "conv_simd",
            Variant::K1convSimd => "k1conv_simd",
            Variant::Sgemm => "sgemm",
        }
    }

    pub fn is_simd(self) -> bool {
        matches!(self, Variant::ConvSimd | Variant::K1convSimd)
    }

    pub fn is_k1(self) -> bool {
        matches!(self, Variant::K1conv | Variant::K1convSimd)
    }

    fn simd_form(self) -> Option<Variant> {
        match self {
            Variant::Conv => Some(Variant::ConvSimd),
            Variant::K1conv => Some(Variant::K1convSimd),
            _ => None,
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        [
            Variant::Conv,
            Variant::K1conv,
            Variant::Tconv,
            Variant::ConvSimd,
            Variant::K1convSimd,
            Variant::Sgemm,
        ]
        .into_iter()
        .find(|v| v.name() == s)
        .ok_or_else(|| Error::Plan {
            variant: s.to_string(),
            reason: "unknown variant name".into(),
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InputTransform {
    None,
    /// `in` regrouped as `KC:M:V`: channel groups of `V` innermost, one row
    /// per output point.
    K1Layout,
    /// `in` zero-padded and extended so every workgroup tile is in bounds.
    TileLayout,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct GemmView {
    pub m: u64,
    pub n: u64,
    pub k: u64,
}

impl GemmView {
    pub fn new(m: u64, n: u64, k: u64) -> Self {
        GemmView { m, n, k }
    }
}

/// Partially specified blocking; `None` fields are filled by the heuristic.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlockingOverrides {
    #[serde(rename = "Mt", default, skip_serializing_if = "Option::is_none")]
    pub mt: Option<u32>,
    #[serde(rename = "Nt", default, skip_serializing_if = "Option::is_none")]
    pub nt: Option<u32>,
    #[serde(rename = "Kb", default, skip_serializing_if = "Option::is_none")]
    pub kb: Option<u32>,
    #[serde(rename = "Mb", default, skip_serializing_if = "Option::is_none")]
    pub mb: Option<u32>,
    #[serde(rename = "Nb", default, skip_serializing_if = "Option::is_none")]
    pub nb: Option<u32>,
}

impl BlockingOverrides {
    /// Pin every tunable field to the values of `b`.
    pub fn pin(b: &Blocking) -> Self {
        BlockingOverrides {
            mt: Some(b.mt),
            nt: Some(b.nt),
            kb: Some(b.kb),
            mb: Some(b.mb),
            nb: Some(b.nb),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Blocking {
    pub mt: u32,
    pub nt: u32,
    pub kb: u32,
    pub mb: u32,
    pub nb: u32,
    pub mg: u64,
    pub ng: u64,
    pub regs_est: u32,
    pub local_bytes: u64,
}

impl Blocking {
    pub fn threads_per_wg(&self) -> u32 {
        self.mb * self.nb
    }

    pub fn wg_count(&self) -> u64 {
        self.mg * self.ng
    }

    /// Every violated constraint, as human-readable text.
    pub fn violations(&self, view: &GemmView, m: &MachineModel, use_local: bool) -> Vec<String> {
        let mut v = Vec::new();
        for (name, val) in [("Mt", self.mt), ("Nt", self.nt), ("Kb", self.kb)] {
            if !(1..=MAX_TILE).contains(&val) {
                v.push(format!("{name}={val} outside [1,{MAX_TILE}]"));
            }
        }
        if self.mb == 0 || self.nb == 0 {
            v.push("Mb and Nb must be positive".into());
            return v;
        }
        let threads = self.threads_per_wg();
        if threads < m.min_wg_threads || threads > m.max_wg_threads {
            v.push(format!(
                "Mb*Nb={threads} outside [{},{}]",
                m.min_wg_threads, m.max_wg_threads
            ));
        }
        let want_mg = ceil_div(view.m, self.mb as u64 * self.mt.max(1) as u64);
        let want_ng = ceil_div(view.n, self.nb as u64 * self.nt.max(1) as u64);
        if self.mg != want_mg {
            v.push(format!("Mg={} but ceil(M/(Mb*Mt))={want_mg}", self.mg));
        }
        if self.ng != want_ng {
            v.push(format!("Ng={} but ceil(N/(Nb*Nt))={want_ng}", self.ng));
        }
        if self.regs_est < self.mt * self.nt + self.mt + self.nt {
            v.push(format!("register estimate {} below Mt*Nt+Mt+Nt", self.regs_est));
        }
        if self.regs_est > m.reg_budget_per_thread {
            v.push(format!(
                "register estimate {} exceeds budget {}",
                self.regs_est, m.reg_budget_per_thread
            ));
        }
        if use_local && self.local_bytes > m.local_mem_bytes {
            v.push(format!(
                "local memory {} B exceeds {} B",
                self.local_bytes, m.local_mem_bytes
            ));
        }
        v
    }
}

pub(crate) fn ceil_div(a: u64, b: u64) -> u64 {
    a.div_ceil(b)
}

fn pow2_ceil(v: u64) -> u64 {
    v.max(1).next_power_of_two()
}

/// Registers of a GEMM-shaped kernel: accumulators, operand registers, overhead.
pub fn gemm_regs(mt: u32, nt: u32, vec_width: u32) -> u32 {
    mt * nt + (mt + nt) * vec_width + REG_OVERHEAD
}

/// Local bytes of a GEMM-shaped kernel staging `Kb` columns of both operands.
pub fn gemm_local_bytes(mt: u32, nt: u32, mb: u32, nb: u32, kb: u32) -> u64 {
    4 * kb as u64 * (mb as u64 * mt as u64 + nb as u64 * nt as u64)
}

/// Most square `Mb x Nb` with a thread count in bounds, largest first.
fn thread_grid(m: &MachineModel, accept: &dyn Fn(u32, u32) -> bool) -> Option<(u32, u32)> {
    let b = (m.max_wg_threads as f64).sqrt().floor() as u32;
    for threads in (m.min_wg_threads..=m.max_wg_threads).rev() {
        let nb = (1..=b.max(1)).rev().find(|nb| threads % nb == 0 && accept(threads / nb, *nb));
        if let Some(nb) = nb {
            return Some((threads / nb, nb));
        }
    }
    None
}

fn largest_tile(reg_budget: u32) -> Option<u32> {
    (1..=MAX_TILE).rev().find(|&t| t * t + 2 * t + REG_OVERHEAD <= reg_budget)
}

/// Derive a legal blocking for `view`. Explicit local memory is assumed
/// when the machine finds it profitable.
pub fn derive_blocking(view: GemmView, m: &MachineModel, overrides: &BlockingOverrides) -> Result<Blocking> {
    derive_blocking_for(view, m, overrides, m.explicit_local_mem_profitable, 1)
}

/// As [`derive_blocking`] with an explicit local-memory choice and operand
/// vector width (which scales operand register use).
pub fn derive_blocking_for(
    view: GemmView,
    m: &MachineModel,
    ov: &BlockingOverrides,
    use_local: bool,
    vec_width: u32,
) -> Result<Blocking> {
    m.validate()?;
    if view.m == 0 || view.n == 0 || view.k == 0 {
        return Err(Error::Blocking(vec!["M, N and K must be positive".into()]));
    }
    let t_max = largest_tile(m.reg_budget_per_thread).ok_or_else(|| {
        Error::Blocking(vec![format!(
            "register budget {} cannot hold even a 1x1 tile",
            m.reg_budget_per_thread
        )])
    })?;
    let mut mt = ov.mt.unwrap_or(t_max);
    let mut nt = ov.nt.unwrap_or(t_max);

    // thread grid: as square and as large as the thread bounds allow,
    // preferring grids whose staged operands fit local memory
    let (mut mb, mut nb) = match (ov.mb, ov.nb) {
        (Some(a), Some(b)) => (a, b),
        (Some(a), None) => (a, (m.max_wg_threads / a.max(1)).max(1)),
        (None, Some(b)) => ((m.max_wg_threads / b.max(1)).max(1), b),
        (None, None) => {
            let kb_min = ov.kb.unwrap_or(1) as u64;
            let t = mt.max(nt) as u64;
            let fits = |mb: u32, nb: u32| !use_local || 4 * kb_min * (mb + nb) as u64 * t <= m.local_mem_bytes;
            thread_grid(m, &fits).or_else(|| thread_grid(m, &|_, _| true)).ok_or_else(|| {
                Error::Blocking(vec![format!(
                    "no thread grid within [{},{}]",
                    m.min_wg_threads, m.max_wg_threads
                )])
            })?
        }
    };
    if vec_width > 1 && ov.nt.is_none() {
        nt = (nt / vec_width * vec_width).max(vec_width);
    }

    // small problems: no point in tiles wider than the problem
    if ov.mt.is_none() {
        mt = mt.min(ceil_div(view.m, mb as u64).min(MAX_TILE as u64) as u32).max(1);
    }
    if ov.nt.is_none() {
        nt = nt.min(ceil_div(view.n, nb as u64).min(MAX_TILE as u64) as u32).max(vec_width.min(nt));
    }

    // vector operand registers grow with the vector width
    while gemm_regs(mt, nt, vec_width) > m.reg_budget_per_thread {
        let can_mt = ov.mt.is_none() && mt > 1;
        let can_nt = ov.nt.is_none() && nt > vec_width.max(1);
        if can_mt && (!can_nt || mt >= nt) {
            mt = mt.div_ceil(2);
        } else if can_nt {
            nt = (nt / 2).max(vec_width);
        } else {
            break;
        }
    }

    // saturation: shrink tiles (Nt first on ties), then thread grids, until
    // there are enough workgroups to occupy the device
    let threshold = 4 * m.compute_units as u64;
    loop {
        let wgs = ceil_div(view.m, mb as u64 * mt as u64) * ceil_div(view.n, nb as u64 * nt as u64);
        if wgs >= threshold {
            break;
        }
        let can_mt = ov.mt.is_none() && mt > 1;
        let can_nt = ov.nt.is_none() && nt > vec_width.max(1);
        if can_nt && (!can_mt || nt >= mt) {
            nt = nt.div_ceil(2);
            continue;
        }
        if can_mt {
            mt = mt.div_ceil(2);
            continue;
        }
        let halved_ok = |a: u32, b: u32| a > 1 && (a / 2) * b >= m.min_wg_threads;
        let can_nb = ov.nb.is_none() && halved_ok(nb, mb);
        let can_mb = ov.mb.is_none() && halved_ok(mb, nb);
        if can_nb && (!can_mb || nb >= mb) {
            nb /= 2;
        } else if can_mb {
            mb /= 2;
        } else {
            break;
        }
    }

    // staged operands must fit local memory at Kb=1
    while use_local && gemm_local_bytes(mt, nt, mb, nb, 1) > m.local_mem_bytes {
        let can_mt = ov.mt.is_none() && mt > 1;
        let can_nt = ov.nt.is_none() && nt > vec_width.max(1);
        if can_nt && (!can_mt || nt >= mt) {
            nt = nt.div_ceil(2);
        } else if can_mt {
            mt = mt.div_ceil(2);
        } else {
            break;
        }
    }

    let local_for = |kb: u32| if use_local { gemm_local_bytes(mt, nt, mb, nb, kb) } else { 0 };
    let kb = match ov.kb {
        Some(kb) => kb,
        None => (1..=MAX_TILE)
            .rev()
            .find(|&k| local_for(k) <= m.local_mem_bytes)
            .ok_or_else(|| {
                Error::Blocking(vec![format!(
                    "local memory {} B cannot stage even Kb=1 ({} B needed)",
                    m.local_mem_bytes,
                    local_for(1)
                )])
            })?,
    };

    let b = Blocking {
        mt,
        nt,
        kb,
        mb,
        nb,
        mg: ceil_div(view.m, mb as u64 * mt as u64),
        ng: ceil_div(view.n, nb as u64 * nt as u64),
        regs_est: gemm_regs(mt, nt, vec_width),
        local_bytes: local_for(kb),
    };
    let violations = b.violations(&view, m, use_local);
    if violations.is_empty() {
        Ok(b)
    } else {
        Err(Error::Blocking(violations))
    }
}

/// Workgroup tile of the tiled-convolution variant: `tile_y x tile_x`
/// output points, each thread owning `Mt` consecutive points of one row.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TconvTile {
    pub tile_y: u32,
    pub tile_x: u32,
    pub threads_per_row: u32,
    pub tiles_y: u32,
    pub tiles_x: u32,
    /// Input extent read per tile.
    pub in_tile_y: u32,
    pub in_tile_x: u32,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct VariantPlan {
    pub variant: Variant,
    pub blocking: Blocking,
    pub use_local_mem: bool,
    pub vec_width: u32,
    pub input_transform: InputTransform,
    pub gemm_view: GemmView,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tile: Option<TconvTile>,
}

impl VariantPlan {
    /// FMAs the compute kernel executes: every launched accumulator lane runs
    /// the full reduction, including lanes past the edges of the output.
    pub fn executed_fmas(&self) -> u64 {
        let b = &self.blocking;
        let rows = b.mg * b.mb as u64 * b.mt as u64;
        let cols = b.ng * b.nb as u64 * b.nt as u64;
        rows * cols * self.gemm_view.k
    }
}

/// Per-op tuning entry: optional variant pin plus blocking overrides.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OpTuning {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub variant: Option<Variant>,
    #[serde(flatten)]
    pub blocking: BlockingOverrides,
}

/// Tuning-override file: op name to [`OpTuning`].
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Tuning(pub BTreeMap<String, OpTuning>);

impl Tuning {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn get(&self, op: &str) -> Option<&OpTuning> {
        self.0.get(op)
    }
}

/// Padded input width, the extent a tiled kernel actually walks.
fn padded_x(s: &ConvSpec) -> usize {
    s.in_x() + 2 * s.pad
}

pub fn select_variant(s: &ConvSpec, m: &MachineModel) -> Variant {
    let k = s.kernel_size as u64;
    let tb = &m.tconv_bounds;
    let width = padded_x(s) as u64;
    let base = if k == 1 {
        Variant::K1conv
    } else if (tb.min_ksz as u64..=tb.max_ksz as u64).contains(&k)
        && (k * tb.min_width_factor as u64..=k * tb.max_width_factor as u64).contains(&width)
    {
        Variant::Tconv
    } else {
        Variant::Conv
    };
    match base.simd_form() {
        Some(simd) if m.simd_width > 1 => simd,
        _ => base,
    }
}

/// `(B*out_Y*out_X, OC, KSZ*KSZ*IC)`.
pub fn gemm_view_of(s: &ConvSpec) -> GemmView {
    GemmView {
        m: (s.batch() * s.out_y() * s.out_x()) as u64,
        n: s.out_channels as u64,
        k: (s.kernel_size * s.kernel_size * s.in_c()) as u64,
    }
}

fn plan_err(v: Variant, reason: impl Into<String>) -> Error {
    Error::Plan {
        variant: v.name().into(),
        reason: reason.into(),
    }
}

/// Whether `variant` can implement `s` at all.
pub fn check_applicable(variant: Variant, s: &ConvSpec) -> Result<()> {
    match variant {
        Variant::K1conv | Variant::K1convSimd if s.kernel_size != 1 => {
            Err(plan_err(variant, format!("needs KSZ=1, op has KSZ={}", s.kernel_size)))
        }
        Variant::Tconv if s.kernel_size < 2 => Err(plan_err(variant, "needs KSZ >= 2")),
        Variant::Sgemm => Err(plan_err(variant, "sgemm is not a convolution variant")),
        _ => Ok(()),
    }
}

/// Largest power of two `<= max` dividing every extent.
fn pick_vec_width(max: u32, extents: &[u64]) -> u32 {
    let mut w = 1u32 << (31 - max.max(1).leading_zeros());
    while w > 1 && extents.iter().any(|&e| e % w as u64 != 0) {
        w /= 2;
    }
    w
}

/// Choose a variant (unless pinned) and derive its complete plan. A selected
/// tconv whose tile cannot fit the machine falls back to the conv form.
pub fn plan_conv(s: &ConvSpec, m: &MachineModel, tuning: Option<&OpTuning>) -> Result<VariantPlan> {
    let default_tuning = OpTuning::default();
    let tuning = tuning.unwrap_or(&default_tuning);
    if let Some(v) = tuning.variant {
        return plan_variant(v, s, m, &tuning.blocking);
    }
    let selected = select_variant(s, m);
    match plan_variant(selected, s, m, &tuning.blocking) {
        Err(Error::Blocking(_)) if selected == Variant::Tconv => {
            let fallback = match Variant::Conv.simd_form() {
                Some(simd) if m.simd_width > 1 => simd,
                _ => Variant::Conv,
            };
            plan_variant(fallback, s, m, &tuning.blocking)
        }
        other => other,
    }
}

fn plan_variant(variant: Variant, s: &ConvSpec, m: &MachineModel, ov: &BlockingOverrides) -> Result<VariantPlan> {
    check_applicable(variant, s)?;
    let view = gemm_view_of(s);
    let transform = match variant {
        Variant::K1conv | Variant::K1convSimd => InputTransform::K1Layout,
        Variant::Tconv => InputTransform::TileLayout,
        _ => InputTransform::None,
    };
    match variant {
        Variant::Tconv => plan_tconv(s, m, ov),
        Variant::Conv | Variant::K1conv => Ok(VariantPlan {
            variant,
            blocking: derive_blocking_for(view, m, ov, m.explicit_local_mem_profitable, 1)?,
            use_local_mem: m.explicit_local_mem_profitable,
            vec_width: 1,
            input_transform: transform,
            gemm_view: view,
            tile: None,
        }),
        Variant::ConvSimd | Variant::K1convSimd => {
            let (blocking, vw) = simd_blocking(view, m, ov, &[s.in_c() as u64, s.out_channels as u64])?;
            Ok(VariantPlan {
                variant,
                blocking,
                use_local_mem: false,
                vec_width: vw,
                input_transform: transform,
                gemm_view: view,
                tile: None,
            })
        }
        Variant::Sgemm => unreachable!("rejected by check_applicable"),
    }
}

/// Blocking for a vectorized, local-memory-free kernel. The vector width
/// must divide every contiguous extent and the per-thread `Nt` columns.
fn simd_blocking(view: GemmView, m: &MachineModel, ov: &BlockingOverrides, extents: &[u64]) -> Result<(Blocking, u32)> {
    let mut vw = pick_vec_width(m.simd_width, extents);
    loop {
        let b = match derive_blocking_for(view, m, ov, false, vw) {
            Ok(b) => b,
            Err(_) if vw > 1 => {
                vw /= 2;
                continue;
            }
            Err(e) => return Err(e),
        };
        let fitted = pick_vec_width(vw, &[b.nt as u64]);
        if fitted == vw {
            return Ok((b, vw));
        }
        vw = fitted;
    }
}

/// Plan a plain `c = a * btᵀ` kernel.
pub fn plan_sgemm(view: GemmView, m: &MachineModel, ov: &BlockingOverrides) -> Result<VariantPlan> {
    let (blocking, vw, use_local) = if m.simd_width > 1 && !m.explicit_local_mem_profitable {
        let (b, vw) = simd_blocking(view, m, ov, &[view.k, view.n])?;
        (b, vw, false)
    } else {
        let use_local = m.explicit_local_mem_profitable;
        (derive_blocking_for(view, m, ov, use_local, 1)?, 1, use_local)
    };
    Ok(VariantPlan {
        variant: Variant::Sgemm,
        blocking,
        use_local_mem: use_local,
        vec_width: vw,
        input_transform: InputTransform::None,
        gemm_view: view,
        tile: None,
    })
}

fn tconv_row_regs(mt: u32, s: &ConvSpec) -> u32 {
    (mt - 1) * s.stride as u32 + s.kernel_size as u32
}

pub fn tconv_regs(mt: u32, nt: u32, s: &ConvSpec) -> u32 {
    mt * nt + tconv_row_regs(mt, s) + nt + REG_OVERHEAD
}

fn tile_candidates(s: &ConvSpec, mt: u32, mb: u32) -> impl Iterator<Item = TconvTile> + '_ {
    let (oy, ox) = (s.out_y() as u64, s.out_x() as u64);
    let (st, k) = (s.stride as u64, s.kernel_size as u64);
    (1..=mb).filter(move |t| mb % t == 0).map(move |tpr| {
        let tile_x = mt * tpr;
        let tile_y = mb / tpr;
        TconvTile {
            tile_y,
            tile_x,
            threads_per_row: tpr,
            tiles_y: ceil_div(oy, tile_y as u64) as u32,
            tiles_x: ceil_div(ox, tile_x as u64) as u32,
            in_tile_y: ((tile_y as u64 - 1) * st + k) as u32,
            in_tile_x: ((tile_x as u64 - 1) * st + k) as u32,
        }
    })
}

/// Staged input elements weighted by the share of computed outputs that are kept.
fn tile_cost(t: &TconvTile) -> u128 {
    let tiles = t.tiles_y as u128 * t.tiles_x as u128;
    let staged = tiles * t.in_tile_y as u128 * t.in_tile_x as u128;
    let covered = tiles * t.tile_y as u128 * t.tile_x as u128;
    staged * covered
}

fn plan_tconv(s: &ConvSpec, m: &MachineModel, ov: &BlockingOverrides) -> Result<VariantPlan> {
    m.validate()?;
    let view = gemm_view_of(s);
    let t_max = largest_tile(m.reg_budget_per_thread)
        .ok_or_else(|| Error::Blocking(vec!["register budget too small".into()]))?;
    let mut mt = ov.mt.unwrap_or_else(|| t_max.min(pow2_ceil(s.out_x() as u64).min(8) as u32));
    let mut nt = ov.nt.unwrap_or_else(|| t_max.min(pow2_ceil(view.n).min(8) as u32));
    while tconv_regs(mt, nt, s) > m.reg_budget_per_thread {
        if ov.nt.is_none() && nt > 1 && (nt >= mt || ov.mt.is_some()) {
            nt = nt.div_ceil(2);
        } else if ov.mt.is_none() && mt > 1 {
            mt = mt.div_ceil(2);
        } else {
            return Err(Error::Blocking(vec![format!(
                "tconv register tile needs {} registers, budget {}",
                tconv_regs(mt, nt, s),
                m.reg_budget_per_thread
            )]));
        }
    }
    // column threads: a power of two covering N, preferring the widest
    let nbs: Vec<u32> = match ov.nb {
        Some(nb) => vec![nb],
        None => {
            let top = pow2_ceil(ceil_div(view.n, nt as u64)).min(4) as u32;
            std::iter::successors(Some(top), |&nb| (nb > 1).then_some(nb / 2)).collect()
        }
    };
    let row_threads = |nb: u32| -> Vec<u32> {
        if let Some(mb) = ov.mb {
            return vec![mb];
        }
        let (lo, hi) = (m.min_wg_threads.div_ceil(nb).max(1), m.max_wg_threads / nb);
        let mut mbs: Vec<u32> = std::iter::successors(Some(hi), |&mb| Some(mb / 2))
            .take_while(|&mb| mb >= lo && mb > 0)
            .collect();
        if lo <= hi && !mbs.contains(&lo) {
            mbs.push(lo);
        }
        mbs
    };
    let fits = |kb: u32, t: &TconvTile| 4 * kb as u64 * t.in_tile_y as u64 * t.in_tile_x as u64 <= m.local_mem_bytes;
    let mut best: Option<(u128, u32, u32, u32, TconvTile)> = None;
    let mut smallest: Option<TconvTile> = None;
    for &nb in &nbs {
        for mb in row_threads(nb) {
            for tile in tile_candidates(s, mt, mb) {
                let kb = match ov.kb {
                    Some(kb) => Some(kb).filter(|&kb| fits(kb, &tile)),
                    None => (1..=MAX_TILE).rev().find(|&k| fits(k, &tile)),
                };
                let area = |t: &TconvTile| t.in_tile_y as u64 * t.in_tile_x as u64;
                if smallest.as_ref().map_or(true, |t| area(&tile) < area(t)) {
                    smallest = Some(tile);
                }
                let Some(kb) = kb else { continue };
                let cost = tile_cost(&tile);
                if best.as_ref().map_or(true, |(c, ..)| cost < *c) {
                    best = Some((cost, nb, mb, kb, tile));
                }
            }
        }
        if best.is_some() {
            break;
        }
    }
    let Some((_, nb, mb, kb, tile)) = best else {
        return Err(Error::Blocking(vec![match smallest {
            Some(t) => format!(
                "input tile {}x{} does not fit {} B of local memory",
                t.in_tile_y, t.in_tile_x, m.local_mem_bytes
            ),
            None => format!("no thread grid within [{},{}]", m.min_wg_threads, m.max_wg_threads),
        }]));
    };
    let tile_floats = tile.in_tile_y as u64 * tile.in_tile_x as u64;
    let mg = s.batch() as u64 * tile.tiles_y as u64 * tile.tiles_x as u64;
    let blocking = Blocking {
        mt,
        nt,
        kb,
        mb,
        nb,
        mg,
        ng: ceil_div(view.n, nb as u64 * nt as u64),
        regs_est: tconv_regs(mt, nt, s),
        local_bytes: 4 * kb as u64 * tile_floats,
    };
    let tiled_view = GemmView::new(mg * mb as u64 * mt as u64, view.n, view.k);
    let violations = blocking.violations(&tiled_view, m, true);
    if !violations.is_empty() {
        return Err(Error::Blocking(violations));
    }
    Ok(VariantPlan {
        variant: Variant::Tconv,
        blocking,
        use_local_mem: true,
        vec_width: 1,
        input_transform: InputTransform::TileLayout,
        gemm_view: tiled_view,
        tile: Some(tile),
    })
}

/// Resource estimate for a finished plan.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Resources {
    pub regs_est: u32,
    pub local_bytes: u64,
    pub wg_count: u64,
}

pub fn estimate_resources(p: &VariantPlan) -> Resources {
    let b = &p.blocking;
    let local_bytes = match (&p.tile, p.use_local_mem) {
        (Some(t), true) => 4 * b.kb as u64 * t.in_tile_y as u64 * t.in_tile_x as u64,
        (None, true) => gemm_local_bytes(b.mt, b.nt, b.mb, b.nb, b.kb),
        (_, false) => 0,
    };
    Resources {
        regs_est: b.regs_est,
        local_bytes,
        wg_count: b.wg_count(),
    }
}
