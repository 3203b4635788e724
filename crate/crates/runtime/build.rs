//! Generates the qGEMV kernels compiled into this crate, one per bit width,
//! grouping mode and register tile that fits 16 vector registers.

use std::env;
use std::fmt::Write;
use std::fs;
use std::path::PathBuf;

use qigen_core::kernelgen::{generate_manifest, generate_qgemv, Grouping, KernelDescriptor, MAX_TILE_ROWS, SEGMENT_ROWS};
use qigen_core::perfmodel::{feasible_register_tiles, TilePlan};
use qigen_core::quant::Bits;

const VREGS: u32 = 16;
const LANES: usize = 8;

fn main() {
    println!("cargo:rerun-if-changed=build.rs");
    let out = PathBuf::from(env::var("OUT_DIR").expect("OUT_DIR"));
    let dir = out.join("kernels");
    fs::create_dir_all(&dir).expect("create kernel dir");

    let mut descs = Vec::new();
    for bits in Bits::ALL {
        for grouping in [Grouping::FullColumn, Grouping::Grouped(SEGMENT_ROWS)] {
            for (m_u, t_u) in feasible_register_tiles(VREGS) {
                if m_u > MAX_TILE_ROWS {
                    continue;
                }
                let tile = TilePlan { m_u, t_u, m_b: m_u, t_b: t_u };
                descs.push(KernelDescriptor::new(bits, grouping, tile, LANES, VREGS).expect("feasible tile"));
            }
        }
    }

    let mut registry = String::new();
    let mut table = String::from("pub static KERNELS: &[KernelEntry] = &[\n");
    for d in &descs {
        let k = generate_qgemv(d).expect("kernel generation");
        fs::write(dir.join(d.file_name()), &k.source_text).expect("write kernel");
        let n = &k.entry_symbol;
        let _ = writeln!(
            registry,
            "pub mod {n} {{\n    include!(concat!(env!(\"OUT_DIR\"), \"/kernels/{}\"));\n}}",
            d.file_name()
        );
        let _ = writeln!(
            registry,
            "unsafe fn {n}_portable(a: &KernelArgs) {{\n    {n}::{n}::<crate::simd::Portable>(a)\n}}"
        );
        let _ = writeln!(
            registry,
            "#[cfg(target_arch = \"x86_64\")]\n#[target_feature(enable = \"avx2,fma\")]\nunsafe fn {n}_avx2(a: &KernelArgs) {{\n    {n}::{n}::<crate::simd::Avx2>(a)\n}}"
        );
        let _ = writeln!(
            table,
            "    KernelEntry {{ name: \"{n}\", bits: {}, grouped: {}, m_u: {}, t_u: {}, portable: {n}_portable, avx2: avx2_entry!({n}_avx2) }},",
            d.bits,
            d.grouping.is_grouped(),
            d.tile.m_u,
            d.tile.t_u
        );
    }
    table.push_str("];\n");
    registry.push_str(&table);
    fs::write(out.join("registry.rs"), registry).expect("write registry");
    fs::write(dir.join("manifest.txt"), generate_manifest(&descs)).expect("write manifest");
}
