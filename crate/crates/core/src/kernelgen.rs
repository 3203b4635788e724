//! Source generator for specialized qGEMV kernels.
//!
//! Kernels are emitted as Rust source for the runtime crate. They are generic
//! over its `simd::Simd` vector layer and take a `kernel::KernelArgs`. One
//! kernel covers one bit width, one grouping mode and one register tile; the
//! group size itself is read at run time and must be a multiple of
//! [`SEGMENT_ROWS`].
//!
//! Orientation is `y = x W` with lanes spanning output columns. A register
//! tile holds `t_u` accumulator vectors (`t_u * lanes` columns), `m_u`
//! broadcast inputs and `m_u * t_u` weight vectors.

use std::fmt::{self, Write};

use crate::error::{Error, Result};
use crate::perfmodel::{cache_cost, register_cost, TilePlan};
use crate::quant::{Bits, GroupSize, QuantConfig};

/// Rows per unrolled segment. Group flushes are checked at segment ends.
pub const SEGMENT_ROWS: usize = 8;

/// Largest `m_u` the generator accepts: a row chunk never crosses a segment.
pub const MAX_TILE_ROWS: usize = SEGMENT_ROWS;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Grouping {
    FullColumn,
    Grouped(usize),
}

impl Grouping {
    pub fn from_group_size(g: GroupSize) -> Self {
        match g {
            GroupSize::FullColumn => Grouping::FullColumn,
            GroupSize::Rows(g) => Grouping::Grouped(g),
        }
    }

    pub fn is_grouped(self) -> bool {
        matches!(self, Grouping::Grouped(_))
    }

    fn tag(self) -> &'static str {
        match self {
            Grouping::FullColumn => "fc",
            Grouping::Grouped(_) => "g",
        }
    }
}

impl fmt::Display for Grouping {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Grouping::FullColumn => f.write_str("full"),
            Grouping::Grouped(g) => write!(f, "{g}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KernelDescriptor {
    pub bits: Bits,
    pub grouping: Grouping,
    pub tile: TilePlan,
    pub lanes: usize,
    /// Vector register budget the tile must fit.
    pub vregs: u32,
    pub name: String,
}

/// `q{bits}_{g|fc}_{m_u}x{t_u}`.
pub fn kernel_name(bits: u32, grouped: bool, m_u: usize, t_u: usize) -> String {
    let tag = if grouped { "g" } else { "fc" };
    format!("q{bits}_{tag}_{m_u}x{t_u}")
}

impl KernelDescriptor {
    pub fn new(bits: Bits, grouping: Grouping, tile: TilePlan, lanes: usize, vregs: u32) -> Result<Self> {
        let name = kernel_name(bits.get(), grouping.is_grouped(), tile.m_u, tile.t_u);
        let desc = Self {
            bits,
            grouping,
            tile,
            lanes,
            vregs,
            name,
        };
        desc.validate()?;
        Ok(desc)
    }

    pub fn for_config(config: &QuantConfig, tile: TilePlan, lanes: usize, vregs: u32) -> Result<Self> {
        Self::new(
            config.bits,
            Grouping::from_group_size(config.group_size),
            tile,
            lanes,
            vregs,
        )
    }

    pub fn validate(&self) -> Result<()> {
        let TilePlan { m_u, t_u, .. } = self.tile;
        let bad = |msg: String| Err(Error::Descriptor(msg));
        if m_u == 0 || t_u == 0 {
            return bad(format!("empty register tile {m_u}x{t_u}"));
        }
        if register_cost(m_u, t_u) > self.vregs as usize {
            return bad(format!(
                "tile {m_u}x{t_u} needs {} vector registers, only {} available",
                register_cost(m_u, t_u),
                self.vregs
            ));
        }
        if m_u > MAX_TILE_ROWS {
            return bad(format!("tile rows {m_u} exceed the supported {MAX_TILE_ROWS}"));
        }
        if self.lanes == 0 {
            return bad("zero lanes".into());
        }
        if let Grouping::Grouped(g) = self.grouping {
            if g == 0 || g % SEGMENT_ROWS != 0 {
                return bad(format!("group size {g} is not a multiple of {SEGMENT_ROWS}"));
            }
        }
        let expected = kernel_name(self.bits.get(), self.grouping.is_grouped(), m_u, t_u);
        if self.name != expected {
            return bad(format!("name {} does not match descriptor ({expected})", self.name));
        }
        Ok(())
    }

    pub fn file_name(&self) -> String {
        format!("{}.gen.rs", self.name)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KernelSource {
    pub source_text: String,
    pub entry_symbol: String,
    pub descriptor: KernelDescriptor,
}

fn check_bits(bits: u32) -> Result<Bits> {
    Bits::new(bits)
}

/// Word index expression inside a packing unit at `wu`.
fn word_at(k: usize, col: usize) -> String {
    match (k, col) {
        (0, 0) => "wu".to_string(),
        (0, c) => format!("wu.add({c})"),
        (k, 0) => format!("wu.add({k} * stride)"),
        (k, c) => format!("wu.add({k} * stride + {c})"),
    }
}

/// Shift-and-mask extraction of code `j` of a unit, converted to float.
fn extract(bits: Bits, j: usize, load: impl Fn(usize) -> String) -> String {
    let b = bits.get() as usize;
    let offset = j * b;
    let (k, shift) = (offset / 32, offset % 32);
    let lo = format!("S::srli::<{shift}>({})", load(k));
    let word = if shift + b > 32 {
        format!("S::or({lo}, S::slli::<{}>({}))", 32 - shift, load(k + 1))
    } else {
        lo
    };
    format!("S::cvt_int_float(S::and({word}, mask))")
}

/// Unpack routine for one packing unit: every code of the unit as a float
/// vector. The unit's words are `stride` words apart.
pub fn generate_unpack(bits: u32, lanes: usize) -> Result<String> {
    let bits = check_bits(bits)?;
    if lanes == 0 {
        return Err(Error::Descriptor("zero lanes".into()));
    }
    let rows = bits.unit_rows();
    let mut s = String::new();
    let _ = writeln!(
        s,
        "/// Codes of one {}-bit packing unit, {lanes} columns per vector.",
        bits.get()
    );
    s.push_str("#[inline(always)]\n#[allow(dead_code)]\n");
    // single-word units never step to a second word
    let stride = if bits.unit_words() == 1 { "_stride" } else { "stride" };
    let _ = writeln!(
        s,
        "unsafe fn unpack<S: Simd>(w: *const u32, {stride}: usize) -> [S::F; {rows}] {{"
    );
    let _ = writeln!(s, "    let mask = S::broadcast_u({});", bits.max_code());
    for k in 0..bits.unit_words() {
        if k == 0 {
            s.push_str("    let v0 = S::load(w);\n");
        } else {
            let _ = writeln!(s, "    let v{k} = S::load(w.add({k} * stride));");
        }
    }
    s.push_str("    [\n");
    for j in 0..rows {
        let _ = writeln!(s, "        {},", extract(bits, j, |k| format!("v{k}")));
    }
    s.push_str("    ]\n}\n");
    Ok(s)
}

fn flush_args(grouped: bool) -> &'static str {
    if grouped {
        ", row0: usize, g: usize, sc: *const f32, m: usize"
    } else {
        ""
    }
}

/// Row ranges of one segment, chunked by `m_u`.
fn chunks(start: usize, m_u: usize) -> Vec<(usize, usize)> {
    let end = start + SEGMENT_ROWS;
    (start..end)
        .step_by(m_u)
        .map(|r| (r, (r + m_u).min(end)))
        .collect()
}

fn lane_offset(t: usize, lanes: usize) -> String {
    if t == 0 {
        "y".into()
    } else {
        format!("y.add({})", t * lanes)
    }
}

/// Register-tile routine: `t_u` accumulator vectors, rows in steps of `m_u`.
pub fn generate_micro_kernel(desc: &KernelDescriptor) -> Result<String> {
    desc.validate()?;
    let bits = desc.bits;
    let (m_u, t_u) = (desc.tile.m_u, desc.tile.t_u);
    let lanes = desc.lanes;
    let grouped = desc.grouping.is_grouped();
    let mut s = String::new();
    let _ = writeln!(
        s,
        "/// {m_u}x{t_u} register tile over {} columns.",
        t_u * lanes
    );
    s.push_str("#[inline(always)]\n");
    let _ = writeln!(
        s,
        "unsafe fn tile<S: Simd>(w: *const u32, stride: usize, x: *const f32, y: *mut f32, units: usize, mask: S::U{}) {{",
        flush_args(grouped)
    );
    for t in 0..t_u {
        if grouped {
            let _ = writeln!(s, "    let mut acc_{t} = S::zero();");
        } else {
            let _ = writeln!(s, "    let mut acc_{t} = S::loadf({});", lane_offset(t, lanes));
        }
    }
    s.push_str("    for u in 0..units {\n");
    s.push_str("        let wu = w.add(u * UNIT_WORDS * stride);\n");
    s.push_str("        let xu = x.add(u * UNIT_ROWS);\n");
    for seg in (0..bits.unit_rows()).step_by(SEGMENT_ROWS) {
        for (r0, r1) in chunks(seg, m_u) {
            let _ = writeln!(s, "        // rows {r0}..{r1}");
            s.push_str("        {\n");
            for (i, r) in (r0..r1).enumerate() {
                let _ = writeln!(s, "            let x_{i} = S::broadcast(*xu.add({r}));");
            }
            for (i, r) in (r0..r1).enumerate() {
                for t in 0..t_u {
                    let e = extract(bits, r, |k| format!("S::load({})", word_at(k, t * lanes)));
                    let _ = writeln!(s, "            let w_{i}_{t} = {e};");
                }
            }
            for i in 0..r1 - r0 {
                for t in 0..t_u {
                    let _ = writeln!(s, "            acc_{t} = S::fmadd(x_{i}, w_{i}_{t}, acc_{t});");
                }
            }
            s.push_str("        }\n");
        }
        if grouped {
            let _ = writeln!(s, "        let r = row0 + u * UNIT_ROWS + {};", seg + SEGMENT_ROWS);
            s.push_str("        if r % g == 0 {\n");
            s.push_str("            let s = sc.add((r / g - 1) * m);\n");
            for t in 0..t_u {
                let y = lane_offset(t, lanes);
                let sv = if t == 0 { "s".to_string() } else { format!("s.add({})", t * lanes) };
                let _ = writeln!(
                    s,
                    "            S::store({y}, S::fmadd(S::loadf({sv}), acc_{t}, S::loadf({y})));"
                );
                let _ = writeln!(s, "            acc_{t} = S::zero();");
            }
            s.push_str("        }\n");
        }
    }
    s.push_str("    }\n");
    if !grouped {
        for t in 0..t_u {
            let _ = writeln!(s, "    S::store({}, acc_{t});", lane_offset(t, lanes));
        }
    }
    s.push_str("}\n");
    Ok(s)
}

/// One column strip of `lanes` columns, through the unpack routine.
fn generate_strip(desc: &KernelDescriptor) -> String {
    let grouped = desc.grouping.is_grouped();
    let mut s = String::new();
    s.push_str("/// One vector of columns left over after the register tiles.\n");
    s.push_str("#[inline(always)]\n");
    let _ = writeln!(
        s,
        "unsafe fn strip<S: Simd>(w: *const u32, stride: usize, x: *const f32, y: *mut f32, units: usize{}) {{",
        flush_args(grouped)
    );
    if grouped {
        s.push_str("    let mut acc = S::zero();\n");
    } else {
        s.push_str("    let mut acc = S::loadf(y);\n");
    }
    s.push_str("    for u in 0..units {\n");
    s.push_str("        let codes = unpack::<S>(w.add(u * UNIT_WORDS * stride), stride);\n");
    s.push_str("        let xu = x.add(u * UNIT_ROWS);\n");
    if grouped {
        s.push_str("        for seg in 0..UNIT_ROWS / SEGMENT_ROWS {\n");
        s.push_str("            for i in seg * SEGMENT_ROWS..(seg + 1) * SEGMENT_ROWS {\n");
        s.push_str("                acc = S::fmadd(S::broadcast(*xu.add(i)), codes[i], acc);\n");
        s.push_str("            }\n");
        s.push_str("            let r = row0 + u * UNIT_ROWS + (seg + 1) * SEGMENT_ROWS;\n");
        s.push_str("            if r % g == 0 {\n");
        s.push_str("                let s = S::loadf(sc.add((r / g - 1) * m));\n");
        s.push_str("                S::store(y, S::fmadd(s, acc, S::loadf(y)));\n");
        s.push_str("                acc = S::zero();\n");
        s.push_str("            }\n");
        s.push_str("        }\n");
    } else {
        s.push_str("        for (i, c) in codes.iter().enumerate() {\n");
        s.push_str("            acc = S::fmadd(S::broadcast(*xu.add(i)), *c, acc);\n");
        s.push_str("        }\n");
    }
    s.push_str("    }\n");
    if !grouped {
        s.push_str("    S::store(y, acc);\n");
    }
    s.push_str("}\n");
    s
}

/// Single column, scalar: the columns left after the vector strips.
fn generate_tail(desc: &KernelDescriptor) -> String {
    let grouped = desc.grouping.is_grouped();
    let crossing = desc.bits.get() == 3;
    let mut s = String::new();
    s.push_str("/// One column, scalar.\n");
    s.push_str("#[inline(always)]\n");
    let _ = writeln!(
        s,
        "unsafe fn tail(w: *const u32, stride: usize, x: *const f32, y: *mut f32, units: usize{}) {{",
        flush_args(grouped)
    );
    if grouped {
        s.push_str("    let mut acc = 0.0f32;\n");
    } else {
        s.push_str("    let mut acc = *y;\n");
    }
    s.push_str("    for u in 0..units {\n");
    s.push_str("        let wu = w.add(u * UNIT_WORDS * stride);\n");
    s.push_str("        let xu = x.add(u * UNIT_ROWS);\n");
    s.push_str("        for i in 0..UNIT_ROWS {\n");
    s.push_str("            let (k, shift) = (i * BITS / 32, i * BITS % 32);\n");
    if crossing {
        s.push_str("            let mut v = *wu.add(k * stride) >> shift;\n");
        s.push_str("            if shift + BITS > 32 {\n");
        s.push_str("                v |= *wu.add((k + 1) * stride) << (32 - shift);\n");
        s.push_str("            }\n");
    } else {
        s.push_str("            let v = *wu.add(k * stride) >> shift;\n");
    }
    s.push_str("            acc += *xu.add(i) * (v & MASK) as f32;\n");
    if grouped {
        s.push_str("            let r = row0 + u * UNIT_ROWS + i + 1;\n");
        s.push_str("            if (i + 1) % SEGMENT_ROWS == 0 && r % g == 0 {\n");
        s.push_str("                *y += *sc.add((r / g - 1) * m) * acc;\n");
        s.push_str("                acc = 0.0;\n");
        s.push_str("            }\n");
    }
    s.push_str("        }\n");
    s.push_str("    }\n");
    if !grouped {
        s.push_str("    *y = acc;\n");
    }
    s.push_str("}\n");
    s
}

fn generate_entry(desc: &KernelDescriptor) -> String {
    let grouped = desc.grouping.is_grouped();
    let extra = if grouped { ", blk.row0, a.group_size, sc.add(c), a.m" } else { "" };
    let mut s = String::new();
    let _ = writeln!(
        s,
        "/// qGEMV over `a.blocks` for columns `a.col_begin..a.col_end`, {}-bit codes, {}.",
        desc.bits.get(),
        if grouped {
            "one scale and zero-point per group of rows"
        } else {
            "one scale and zero-point per column"
        }
    );
    s.push_str("///\n/// # Safety\n///\n");
    s.push_str("/// Every pointer in `a` must cover the extents its block descriptors and\n");
    s.push_str("/// dimensions imply.\n");
    // inlined into the caller so it picks up the caller's target features
    s.push_str("#[inline(always)]\n");
    let _ = writeln!(s, "pub unsafe fn {}<S: Simd>(a: &KernelArgs) {{", desc.name);
    s.push_str("    assert_eq!(S::LANES, LANES, \"kernel generated for another lane count\");\n");
    s.push_str("    let mask = S::broadcast_u(MASK);\n");
    s.push_str("    let width = a.col_end - a.col_begin;\n");
    s.push_str("    let out = a.y;\n");
    s.push_str("    for j in 0..width {\n        *out.add(j) = 0.0;\n    }\n");
    s.push_str("    for blk in a.blocks {\n");
    s.push_str("        let w = a.words.add(blk.offset);\n");
    s.push_str("        let x = a.x.add(blk.row0);\n");
    s.push_str("        let y = out.add(blk.col0 - a.col_begin);\n");
    if grouped {
        s.push_str("        let sc = a.scales.add(blk.col0);\n");
    }
    s.push_str("        let stride = blk.cols;\n");
    s.push_str("        let units = blk.rows / UNIT_ROWS;\n");
    s.push_str("        let mut c = 0;\n");
    s.push_str("        while c + TILE_COLS <= blk.cols {\n");
    let _ = writeln!(
        s,
        "            tile::<S>(w.add(c), stride, x, y.add(c), units, mask{extra});"
    );
    s.push_str("            c += TILE_COLS;\n        }\n");
    s.push_str("        while c + LANES <= blk.cols {\n");
    let _ = writeln!(s, "            strip::<S>(w.add(c), stride, x, y.add(c), units{extra});");
    s.push_str("            c += LANES;\n        }\n");
    s.push_str("        while c < blk.cols {\n");
    let _ = writeln!(s, "            tail(w.add(c), stride, x, y.add(c), units{extra});");
    s.push_str("            c += 1;\n        }\n");
    s.push_str("    }\n");
    if grouped {
        s.push_str("    // y_j -= sum_i s_ij * z_ij * <x_i, 1>\n");
        s.push_str("    for i in 0..a.n / a.group_size {\n");
        s.push_str("        let x_sum = *a.sums.add(1 + i);\n");
        s.push_str("        let s = a.scales.add(i * a.m + a.col_begin);\n");
        s.push_str("        let z = a.zeros.add(i * a.m + a.col_begin);\n");
        s.push_str("        for j in 0..width {\n");
        s.push_str("            *out.add(j) -= *s.add(j) * *z.add(j) * x_sum;\n");
        s.push_str("        }\n");
        s.push_str("    }\n");
    } else {
        s.push_str("    // y_j = s_j * (acc_j - z_j * x_hat)\n");
        s.push_str("    let x_hat = *a.sums;\n");
        s.push_str("    for j in 0..width {\n");
        s.push_str("        let col = a.col_begin + j;\n");
        s.push_str("        *out.add(j) = *a.scales.add(col) * (*out.add(j) - *a.zeros.add(col) * x_hat);\n");
        s.push_str("    }\n");
    }
    s.push_str("}\n");
    s
}

/// Complete kernel module: constants, unpack routine, register tile, column
/// strip and scalar tail, and the entry point over the block list.
pub fn generate_qgemv(desc: &KernelDescriptor) -> Result<KernelSource> {
    desc.validate()?;
    let bits = desc.bits;
    let mut s = String::new();
    let _ = writeln!(
        s,
        "// @generated by qigen kernelgen: bits={} grouping={} tile={}x{} lanes={}",
        bits.get(),
        desc.grouping.tag(),
        desc.tile.m_u,
        desc.tile.t_u,
        desc.lanes
    );
    s.push_str("use crate::kernel::KernelArgs;\nuse crate::simd::Simd;\n\n");
    let _ = writeln!(s, "const BITS: usize = {};", bits.get());
    let _ = writeln!(s, "const MASK: u32 = {};", bits.max_code());
    let _ = writeln!(s, "const UNIT_ROWS: usize = {};", bits.unit_rows());
    let _ = writeln!(s, "const UNIT_WORDS: usize = {};", bits.unit_words());
    let _ = writeln!(s, "const LANES: usize = {};", desc.lanes);
    let _ = writeln!(s, "const TILE_COLS: usize = {};", desc.tile.t_u * desc.lanes);
    if desc.grouping.is_grouped() {
        let _ = writeln!(s, "const SEGMENT_ROWS: usize = {SEGMENT_ROWS};");
    }
    s.push('\n');
    s.push_str(&generate_unpack(bits.get(), desc.lanes)?);
    s.push('\n');
    s.push_str(&generate_micro_kernel(desc)?);
    s.push('\n');
    s.push_str(&generate_strip(desc));
    s.push('\n');
    s.push_str(&generate_tail(desc));
    s.push('\n');
    s.push_str(&generate_entry(desc));
    Ok(KernelSource {
        source_text: s,
        entry_symbol: desc.name.clone(),
        descriptor: desc.clone(),
    })
}

/// One line per kernel: name, bits, grouping, tile, lanes, file.
pub fn generate_manifest(descs: &[KernelDescriptor]) -> String {
    let mut s = String::from("# name bits grouping m_u t_u lanes file\n");
    for d in descs {
        let _ = writeln!(
            s,
            "{} {} {} {} {} {} {}",
            d.name,
            d.bits,
            d.grouping,
            d.tile.m_u,
            d.tile.t_u,
            d.lanes,
            d.file_name()
        );
    }
    s
}

fn lcm(a: usize, b: usize) -> usize {
    fn gcd(a: usize, b: usize) -> usize {
        if b == 0 {
            a
        } else {
            gcd(b, a % b)
        }
    }
    a / gcd(a, b) * b
}

/// Adapts a plan to the kernels' physical layout. Blocks become whole
/// register tiles wide (`t_u * lanes` columns, at least one tile) and whole
/// packing units, groups and row steps tall. If one such row quantum does not
/// fit the cache budget the block is narrowed, then the row count is refilled
/// up to the budget.
pub fn fit_plan(
    plan: TilePlan,
    config: &QuantConfig,
    lanes: usize,
    l1_bits: u64,
    (rows, cols): (usize, usize),
) -> Result<TilePlan> {
    if plan.m_u == 0 || plan.t_u == 0 || lanes == 0 {
        return Err(Error::InvalidPlan(format!("cannot fit plan {plan}")));
    }
    let tile_cols = plan.t_u * lanes;
    let t_b = (plan.t_b / tile_cols).max(1) * tile_cols;
    let t_b = if cols > t_b { t_b } else { cols.div_ceil(tile_cols).max(1) * tile_cols };

    let mut quantum = lcm(plan.m_u, config.bits.unit_rows());
    if let GroupSize::Rows(g) = config.group_size {
        quantum = lcm(quantum, g);
    }
    let bits = config.bits.get();
    // a block one quantum tall may still be too wide for the budget
    let mut t_b = t_b;
    while t_b > tile_cols && cache_cost(bits, quantum, t_b) > l1_bits {
        t_b -= tile_cols;
    }
    let mut m_b = quantum;
    while m_b + quantum <= rows.max(quantum)
        && cache_cost(bits, m_b + quantum, t_b) <= l1_bits
    {
        m_b += quantum;
    }
    Ok(TilePlan {
        m_u: plan.m_u,
        t_u: plan.t_u,
        m_b,
        t_b,
    })
}
