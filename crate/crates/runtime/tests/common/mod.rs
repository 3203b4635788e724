#![allow(dead_code)]

use qigen_core::kernelgen::fit_plan;
use qigen_core::pack::{lay_out_blocks, Layout, PackedMatrix};
use qigen_core::perfmodel::{select_cache_block, TilePlan};
use qigen_core::quant::{quantize_matrix, GroupSize, QuantConfig, ZeroMode};
use rand::Rng;

pub const LANES: usize = 8;

pub fn random_vec(rng: &mut impl Rng, len: usize) -> Vec<f32> {
    (0..len).map(|_| rng.gen_range(-1.0f32..1.0)).collect()
}

/// Quantizes a random `n x m` matrix and lays it out for the given tile,
/// with blocks sized for an `l1_bits` cache.
#[allow(clippy::too_many_arguments)]
pub fn random_packed(
    rng: &mut impl Rng,
    n: usize,
    m: usize,
    bits: u32,
    group: GroupSize,
    zero_mode: ZeroMode,
    (m_u, t_u): (usize, usize),
    l1_bits: u64,
) -> PackedMatrix {
    let w = random_vec(rng, n * m);
    let config = QuantConfig::new(bits, group, zero_mode).unwrap();
    let cm = quantize_matrix(&w, n, m, config).unwrap();
    let (m_b, t_b) = select_cache_block(l1_bits, bits, (m_u, t_u), (n, m)).unwrap();
    let plan = fit_plan(TilePlan { m_u, t_u, m_b, t_b }, &config, LANES, l1_bits, (n, m)).unwrap();
    lay_out_blocks(&cm, plan, Layout::ZCurve).unwrap()
}

/// `max |a - b| / (1 + max |b|)`
pub fn rel_err(a: &[f32], reference: &[f32]) -> f64 {
    assert_eq!(a.len(), reference.len());
    let diff = a
        .iter()
        .zip(reference)
        .map(|(&x, &y)| (x as f64 - y as f64).abs())
        .fold(0.0, f64::max);
    let norm = reference.iter().map(|&y| (y as f64).abs()).fold(0.0, f64::max);
    diff / (1.0 + norm)
}

/// Smallest row count above zero that whole packing units and groups divide.
pub fn row_quantum(bits: u32, group: GroupSize) -> usize {
    let unit = if bits == 3 { 32 } else { 32 / bits as usize };
    match group {
        GroupSize::FullColumn => unit,
        GroupSize::Rows(g) => unit.max(g),
    }
}
