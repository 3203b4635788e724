//! Register-tile and cache-block selection.
//!
//! A register tile `m_u x t_u` keeps `t_u` output accumulators, `m_u`
//! broadcast inputs and `m_u * t_u` unpacked weight vectors live at once, so
//! it must satisfy `m_u + m_u*t_u + t_u <= vregs`. A cache block
//! `m_b x t_b` (rows x columns) must fit the input slice, the packed weights
//! and the output slice in L1: `32*m_b + b*m_b*t_b + 32*t_b <= l1_bits`,
//! with `m_b` a multiple of `m_u` and `t_b` a multiple of `t_u`.

use std::fmt;
use std::path::Path;

use crate::error::{Error, Result};
use crate::quant::QuantConfig;

/// Target machine description.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HardwareSpec {
    /// L1 data cache size in bits.
    pub l1_bits: u64,
    /// Architectural vector registers.
    pub vregs: u32,
    /// 32-bit lanes per vector register.
    pub lanes: u32,
    pub threads: u32,
}

impl Default for HardwareSpec {
    /// 32 KiB L1, 16 vector registers of 8 lanes (AVX2 class), one thread.
    fn default() -> Self {
        Self {
            l1_bits: 32 * 1024 * 8,
            vregs: 16,
            lanes: 8,
            threads: 1,
        }
    }
}

impl HardwareSpec {
    pub const MIN_L1_BITS: u64 = 1 << 12;

    pub fn validate(&self) -> Result<()> {
        if self.vregs == 0 || self.lanes == 0 || self.threads == 0 {
            return Err(Error::Hardware(
                "vregs, lanes and threads must all be at least 1".into(),
            ));
        }
        if self.l1_bits < Self::MIN_L1_BITS {
            return Err(Error::Hardware(format!(
                "l1_bits = {} is below the minimum of {}",
                self.l1_bits,
                Self::MIN_L1_BITS
            )));
        }
        Ok(())
    }

    /// Parses `key = value` lines. Keys not given keep their default;
    /// `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self> {
        let mut hw = HardwareSpec::default();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .or_else(|| line.split_once(':'))
                .ok_or_else(|| Error::Hardware(format!("line {}: expected key = value", lineno + 1)))?;
            let key = key.trim();
            let value: u64 = value.trim().parse().map_err(|_| {
                Error::Hardware(format!("line {}: {key} is not an integer", lineno + 1))
            })?;
            let small = || {
                u32::try_from(value)
                    .map_err(|_| Error::Hardware(format!("line {}: {key} is too large", lineno + 1)))
            };
            match key {
                "l1_bits" => hw.l1_bits = value,
                "vregs" => hw.vregs = small()?,
                "lanes" => hw.lanes = small()?,
                "threads" => hw.threads = small()?,
                other => {
                    return Err(Error::Hardware(format!(
                        "line {}: unknown key {other:?}",
                        lineno + 1
                    )))
                }
            }
        }
        hw.validate()?;
        Ok(hw)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn to_text(&self) -> String {
        format!(
            "l1_bits = {}\nvregs = {}\nlanes = {}\nthreads = {}\n",
            self.l1_bits, self.vregs, self.lanes, self.threads
        )
    }
}

/// Register tile and cache block.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct TilePlan {
    pub m_u: usize,
    pub t_u: usize,
    pub m_b: usize,
    pub t_b: usize,
}

impl TilePlan {
    /// Live vector values of the register tile.
    pub fn register_cost(&self) -> usize {
        register_cost(self.m_u, self.t_u)
    }

    /// Bits of x-slice, weights and y-slice held by one cache block.
    pub fn cache_cost(&self, bits: u32) -> u64 {
        cache_cost(bits, self.m_b, self.t_b)
    }

    /// Checks every model constraint; returns a description of the first
    /// violation.
    pub fn check(&self, vregs: u32, l1_bits: u64, bits: u32) -> Result<()> {
        if self.m_u == 0 || self.t_u == 0 || self.m_b == 0 || self.t_b == 0 {
            return Err(Error::InvalidPlan(format!("{self} has a zero dimension")));
        }
        if self.register_cost() > vregs as usize {
            return Err(Error::InvalidPlan(format!(
                "{self}: register tile needs {} > {vregs} registers",
                self.register_cost()
            )));
        }
        if self.cache_cost(bits) > l1_bits {
            return Err(Error::InvalidPlan(format!(
                "{self}: cache block needs {} > {l1_bits} bits",
                self.cache_cost(bits)
            )));
        }
        self.check_congruence()
    }

    pub fn check_congruence(&self) -> Result<()> {
        if self.m_u == 0 || self.t_u == 0 {
            return Err(Error::InvalidPlan(format!("{self} has an empty register tile")));
        }
        if self.m_b % self.m_u != 0 || self.t_b % self.t_u != 0 {
            return Err(Error::InvalidPlan(format!(
                "{self}: block is not a multiple of the register tile"
            )));
        }
        Ok(())
    }
}

impl fmt::Display for TilePlan {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "tile {}x{} block {}x{}",
            self.m_u, self.t_u, self.m_b, self.t_b
        )
    }
}

#[inline]
pub fn register_cost(m_u: usize, t_u: usize) -> usize {
    m_u + m_u * t_u + t_u
}

#[inline]
pub fn cache_cost(bits: u32, m_b: usize, t_b: usize) -> u64 {
    let (bits, m_b, t_b) = (bits as u64, m_b as u64, t_b as u64);
    32 * m_b + bits * m_b * t_b + 32 * t_b
}

/// Every `(m_u, t_u)` with `m_u + m_u*t_u + t_u <= vregs`.
pub fn feasible_register_tiles(vregs: u32) -> Vec<(usize, usize)> {
    let vregs = vregs as usize;
    let mut out = Vec::new();
    for m_u in 1..vregs {
        for t_u in 1..vregs {
            if register_cost(m_u, t_u) <= vregs {
                out.push((m_u, t_u));
            } else {
                break;
            }
        }
    }
    out
}

/// Picks the register tile. Without a ranker the tile with the most
/// multiply-adds per step (`m_u * t_u`) wins, ties going to the larger
/// `t_u`. With a ranker, the highest measured rate wins and the default
/// order breaks ties.
pub fn select_register_tile(
    vregs: u32,
    ranker: Option<&mut dyn FnMut(usize, usize) -> f64>,
) -> Result<(usize, usize)> {
    let mut tiles = feasible_register_tiles(vregs);
    if tiles.is_empty() {
        return Err(Error::NoFeasibleTile { vregs });
    }
    // best first under the default order
    tiles.sort_by_key(|&(m_u, t_u)| std::cmp::Reverse((m_u * t_u, t_u)));
    match ranker {
        None => Ok(tiles[0]),
        Some(rank) => {
            let mut best = tiles[0];
            let mut best_rate = f64::NEG_INFINITY;
            for (m_u, t_u) in tiles {
                let rate = rank(m_u, t_u);
                if rate > best_rate {
                    best = (m_u, t_u);
                    best_rate = rate;
                }
            }
            Ok(best)
        }
    }
}

/// Largest multiple of `step` not above `limit`, or `step` itself when the
/// limit is smaller.
fn cap_multiple(limit: usize, step: usize) -> usize {
    (limit / step * step).max(step)
}

/// Picks the cache block maximizing `32*m_b + b*m_b*t_b + 32*t_b` under the
/// L1 budget, over multiples of the register tile capped at the matrix
/// dimensions `(rows, cols)`. Ties go to the larger `t_b`, then the larger
/// `m_b`.
pub fn select_cache_block(
    l1_bits: u64,
    bits: u32,
    (m_u, t_u): (usize, usize),
    (rows, cols): (usize, usize),
) -> Result<(usize, usize)> {
    if m_u == 0 || t_u == 0 {
        return Err(Error::InvalidPlan("empty register tile".into()));
    }
    let min_cost = cache_cost(bits, m_u, t_u);
    if min_cost > l1_bits {
        return Err(Error::NoFeasibleBlock {
            m_u,
            t_u,
            cost: min_cost,
            l1_bits,
        });
    }
    let row_cap = cap_multiple(rows, m_u);
    let col_cap = cap_multiple(cols, t_u) as u64;
    let b = bits as u64;

    // the objective grows with t_b, so each m_b only needs its largest t_b
    let mut best: Option<(u64, usize, usize)> = None;
    let mut m_b = m_u;
    while m_b <= row_cap {
        let mb = m_b as u64;
        let fixed = 32 * mb;
        if fixed + (b * mb + 32) * t_u as u64 > l1_bits {
            break;
        }
        let t_max = ((l1_bits - fixed) / (b * mb + 32)).min(col_cap);
        let t_b = (t_max / t_u as u64 * t_u as u64) as usize;
        let value = cache_cost(bits, m_b, t_b);
        let better = match best {
            None => true,
            Some((v, bm, bt)) => (value, t_b, m_b) > (v, bt, bm),
        };
        if better {
            best = Some((value, m_b, t_b));
        }
        m_b += m_u;
    }
    let (_, m_b, t_b) = best.expect("minimal block is feasible");
    Ok((m_b, t_b))
}

/// Register tile then cache block, for a `rows x cols` weight matrix.
pub fn plan(hw: &HardwareSpec, config: &QuantConfig, dims: (usize, usize)) -> Result<TilePlan> {
    plan_with_ranker(hw, config, dims, None)
}

pub fn plan_with_ranker(
    hw: &HardwareSpec,
    config: &QuantConfig,
    dims: (usize, usize),
    ranker: Option<&mut dyn FnMut(usize, usize) -> f64>,
) -> Result<TilePlan> {
    let (m_u, t_u) = select_register_tile(hw.vregs, ranker)?;
    let (m_b, t_b) = select_cache_block(hw.l1_bits, config.bits.get(), (m_u, t_u), dims)?;
    Ok(TilePlan { m_u, t_u, m_b, t_b })
}
