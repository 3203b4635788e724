use crate::error::{Error, Result};
use crate::perfmodel::TilePlan;
use crate::quant::{Bits, CodeMatrix, GroupParams, GroupSize, QuantConfig, ZeroMode};

use super::{get_code, morton_index, pack_words, put_code, unpack_words};

/// Order of packed words in memory.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Layout {
    /// One block spanning the whole matrix: word `(p, j)` at `p * cols + j`.
    RowSequential,
    /// `m_b x t_b` blocks stored in Z-curve order of `(row_block, col_block)`.
    ZCurve,
}

impl Layout {
    pub fn to_raw(self) -> u8 {
        match self {
            Layout::RowSequential => 0,
            Layout::ZCurve => 1,
        }
    }

    pub fn from_raw(raw: u8) -> Option<Self> {
        match raw {
            0 => Some(Layout::RowSequential),
            1 => Some(Layout::ZCurve),
            _ => None,
        }
    }
}

/// One stored block. Inside a block, packed word-rows follow each other and
/// each word-row holds one word per column, so word `(p, c)` of the block
/// lives at `offset + p * cols + c`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BlockDesc {
    pub row0: usize,
    pub rows: usize,
    pub col0: usize,
    pub cols: usize,
    /// First word of the block in `PackedMatrix::words`.
    pub offset: usize,
}

impl BlockDesc {
    pub fn word_rows(&self, bits: Bits) -> usize {
        self.rows / bits.unit_rows() * bits.unit_words()
    }

    pub fn len(&self, bits: Bits) -> usize {
        self.word_rows(bits) * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.rows == 0 || self.cols == 0
    }
}

/// Zero-point storage.
#[derive(Debug, Clone, PartialEq)]
pub enum Zeros {
    Real(Vec<f32>),
    /// `b`-bit codes packed like weights, padded with zero codes to a whole
    /// packing unit.
    Quantized(Vec<u32>),
}

/// Packed, blocked quantized weights with their parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct PackedMatrix {
    words: Vec<u32>,
    rows: usize,
    cols: usize,
    config: QuantConfig,
    scales: Vec<f32>,
    zeros: Zeros,
    plan: TilePlan,
    layout: Layout,
    // derived from the fields above
    blocks: Vec<BlockDesc>,
    block_rows: usize,
    block_cols: usize,
    col_blocks: usize,
    storage_slot: Vec<usize>,
}

fn check_rows(rows: usize, bits: Bits) -> Result<()> {
    if rows % bits.unit_rows() != 0 {
        return Err(Error::RowAlignment {
            rows,
            bits: bits.get(),
            unit: bits.unit_rows(),
        });
    }
    Ok(())
}

fn zero_words(groups_total: usize, bits: Bits) -> usize {
    groups_total.div_ceil(bits.unit_rows()) * bits.unit_words()
}

impl PackedMatrix {
    /// Assembles a packed matrix from stored parts, checking every length.
    #[allow(clippy::too_many_arguments)]
    pub fn from_parts(
        words: Vec<u32>,
        rows: usize,
        cols: usize,
        config: QuantConfig,
        scales: Vec<f32>,
        zeros: Zeros,
        plan: TilePlan,
        layout: Layout,
    ) -> Result<Self> {
        let bits = config.bits;
        config.check_rows(rows)?;
        check_rows(rows, bits)?;
        let expected = rows / bits.unit_rows() * bits.unit_words() * cols;
        if words.len() != expected {
            return Err(Error::ShapeMismatch {
                expected,
                actual: words.len(),
            });
        }
        let groups_total = config.group_size.groups(rows) * cols;
        if scales.len() != groups_total {
            return Err(Error::ShapeMismatch {
                expected: groups_total,
                actual: scales.len(),
            });
        }
        match (&zeros, config.zero_mode) {
            (Zeros::Real(z), ZeroMode::Real32) if z.len() == groups_total => {}
            (Zeros::Quantized(z), ZeroMode::Quantized) if z.len() == zero_words(groups_total, bits) => {}
            _ => {
                return Err(Error::Malformed(
                    "zero-point storage does not match the zero mode or size".into(),
                ))
            }
        }
        let mut pm = Self {
            words,
            rows,
            cols,
            config,
            scales,
            zeros,
            plan,
            layout,
            blocks: Vec::new(),
            block_rows: 0,
            block_cols: 0,
            col_blocks: 0,
            storage_slot: Vec::new(),
        };
        pm.build_blocks()?;
        Ok(pm)
    }

    fn build_blocks(&mut self) -> Result<()> {
        let bits = self.config.bits;
        let (block_rows, block_cols) = match self.layout {
            Layout::RowSequential => (self.rows, self.cols),
            Layout::ZCurve => {
                self.plan.check_congruence()?;
                (self.plan.m_b.min(self.rows), self.plan.t_b.min(self.cols))
            }
        };
        if block_rows % bits.unit_rows() != 0 {
            return Err(Error::InvalidPlan(format!(
                "block of {block_rows} rows splits a {}-row packing unit",
                bits.unit_rows()
            )));
        }
        if let GroupSize::Rows(g) = self.config.group_size {
            if block_rows % g != 0 {
                return Err(Error::InvalidPlan(format!(
                    "block of {block_rows} rows splits groups of {g}"
                )));
            }
        }
        let row_blocks = self.rows.div_ceil(block_rows.max(1));
        let col_blocks = self.cols.div_ceil(block_cols.max(1));
        let mut order: Vec<(u64, usize, usize)> = Vec::with_capacity(row_blocks * col_blocks);
        for rb in 0..row_blocks {
            for cb in 0..col_blocks {
                let key = match self.layout {
                    Layout::RowSequential => 0,
                    Layout::ZCurve => morton_index(rb as u32, cb as u32),
                };
                order.push((key, rb, cb));
            }
        }
        order.sort_unstable();

        let mut blocks = Vec::with_capacity(order.len());
        let mut slot = vec![0usize; row_blocks * col_blocks];
        let mut offset = 0;
        for (i, &(_, rb, cb)) in order.iter().enumerate() {
            let row0 = rb * block_rows;
            let col0 = cb * block_cols;
            let b = BlockDesc {
                row0,
                rows: block_rows.min(self.rows - row0),
                col0,
                cols: block_cols.min(self.cols - col0),
                offset,
            };
            offset += b.len(bits);
            slot[rb * col_blocks + cb] = i;
            blocks.push(b);
        }
        debug_assert_eq!(offset, self.words.len());
        self.blocks = blocks;
        self.block_rows = block_rows;
        self.block_cols = block_cols;
        self.col_blocks = col_blocks;
        self.storage_slot = slot;
        Ok(())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn config(&self) -> QuantConfig {
        self.config
    }

    pub fn bits(&self) -> Bits {
        self.config.bits
    }

    pub fn plan(&self) -> TilePlan {
        self.plan
    }

    pub fn layout(&self) -> Layout {
        self.layout
    }

    pub fn words(&self) -> &[u32] {
        &self.words
    }

    pub fn words_mut(&mut self) -> &mut [u32] {
        &mut self.words
    }

    /// Scales, group-major: `scales[group * cols + col]`.
    pub fn scales(&self) -> &[f32] {
        &self.scales
    }

    pub fn zeros(&self) -> &Zeros {
        &self.zeros
    }

    /// Blocks in storage order.
    pub fn blocks(&self) -> &[BlockDesc] {
        &self.blocks
    }

    /// Nominal block shape (edge blocks may be smaller).
    pub fn block_shape(&self) -> (usize, usize) {
        (self.block_rows, self.block_cols)
    }

    pub fn groups_per_column(&self) -> usize {
        self.config.group_size.groups(self.rows)
    }

    pub fn group_rows(&self) -> usize {
        self.config.group_size.rows(self.rows)
    }

    /// Zero-points as reals, group-major like the scales.
    pub fn zero_values(&self) -> Vec<f32> {
        match &self.zeros {
            Zeros::Real(z) => z.clone(),
            Zeros::Quantized(words) => {
                let mut codes = unpack_words(words, self.config.bits).expect("validated length");
                codes.truncate(self.scales.len());
                codes.into_iter().map(|c| c as f32).collect()
            }
        }
    }

    pub fn params(&self, group: usize, col: usize) -> GroupParams {
        let i = group * self.cols + col;
        let zero = match &self.zeros {
            Zeros::Real(z) => z[i],
            Zeros::Quantized(words) => {
                let bits = self.config.bits;
                let unit = i / bits.unit_rows();
                let uw = bits.unit_words();
                get_code(&words[unit * uw..(unit + 1) * uw], i % bits.unit_rows(), bits) as f32
            }
        };
        GroupParams {
            scale: self.scales[i],
            zero,
        }
    }

    /// Block containing `(row, col)`.
    pub fn block_of(&self, row: usize, col: usize) -> &BlockDesc {
        let rb = row / self.block_rows;
        let cb = col / self.block_cols;
        &self.blocks[self.storage_slot[rb * self.col_blocks + cb]]
    }

    /// Code at `(row, col)`, read through the block layout.
    pub fn code(&self, row: usize, col: usize) -> u32 {
        let bits = self.config.bits;
        let b = self.block_of(row, col);
        let local = row - b.row0;
        let unit = local / bits.unit_rows();
        let j = local % bits.unit_rows();
        let offset = j * bits.get() as usize;
        let (k, shift) = (offset / 32, offset % 32);
        let at = |k: usize| self.words[b.offset + (unit * bits.unit_words() + k) * b.cols + (col - b.col0)];
        let mut v = at(k) >> shift;
        if shift + bits.get() as usize > 32 {
            v |= at(k + 1) << (32 - shift);
        }
        v & bits.max_code()
    }

    /// Undoes packing and blocking.
    pub fn to_code_matrix(&self) -> CodeMatrix {
        let mut codes = vec![0u8; self.rows * self.cols];
        let bits = self.config.bits;
        let mut unit = vec![0u32; bits.unit_words()];
        for b in &self.blocks {
            for u in 0..b.rows / bits.unit_rows() {
                for c in 0..b.cols {
                    for (k, w) in unit.iter_mut().enumerate() {
                        *w = self.words[b.offset + (u * bits.unit_words() + k) * b.cols + c];
                    }
                    for j in 0..bits.unit_rows() {
                        let row = b.row0 + u * bits.unit_rows() + j;
                        codes[row * self.cols + b.col0 + c] = get_code(&unit, j, bits) as u8;
                    }
                }
            }
        }
        let groups = self.groups_per_column();
        let params = (0..groups)
            .flat_map(|g| (0..self.cols).map(move |c| (g, c)))
            .map(|(g, c)| self.params(g, c))
            .collect();
        CodeMatrix::from_parts(codes, params, self.rows, self.cols, self.config)
            .expect("packed matrix holds a valid code matrix")
    }

    /// Bits of weights, scales and zero-points, without alignment padding.
    pub fn payload_bits(&self) -> u64 {
        let groups_total = self.scales.len() as u64;
        self.words.len() as u64 * 32
            + groups_total * 32
            + groups_total * self.config.zero_mode.zero_bits(self.config.bits) as u64
    }
}

/// Packs a code matrix and stores its blocks in the given layout.
pub fn lay_out_blocks(cm: &CodeMatrix, plan: TilePlan, layout: Layout) -> Result<PackedMatrix> {
    let config = cm.config();
    let bits = config.bits;
    let (rows, cols) = (cm.rows(), cm.cols());
    check_rows(rows, bits)?;

    let scales: Vec<f32> = cm.params().iter().map(|p| p.scale).collect();
    let zeros = match config.zero_mode {
        ZeroMode::Real32 => Zeros::Real(cm.params().iter().map(|p| p.zero).collect()),
        ZeroMode::Quantized => {
            let mut codes: Vec<u8> = cm.params().iter().map(|p| p.zero as u8).collect();
            codes.resize(codes.len().div_ceil(bits.unit_rows()) * bits.unit_rows(), 0);
            Zeros::Quantized(pack_words(&codes, bits)?)
        }
    };

    let words_len = rows / bits.unit_rows() * bits.unit_words() * cols;
    let mut pm = PackedMatrix::from_parts(
        vec![0; words_len],
        rows,
        cols,
        config,
        scales,
        zeros,
        plan,
        layout,
    )?;

    let uw = bits.unit_words();
    let ur = bits.unit_rows();
    let mut unit = vec![0u32; uw];
    let blocks = pm.blocks.clone();
    for b in &blocks {
        for u in 0..b.rows / ur {
            for c in 0..b.cols {
                unit.fill(0);
                for j in 0..ur {
                    let code = cm.code(b.row0 + u * ur + j, b.col0 + c) as u32;
                    put_code(&mut unit, j, code, bits);
                }
                for (k, &w) in unit.iter().enumerate() {
                    pm.words[b.offset + (u * uw + k) * b.cols + c] = w;
                }
            }
        }
    }
    Ok(pm)
}
