mod common;

use common::{random_packed, random_vec, rel_err, row_quantum};
use qigen_core::pack::{lay_out_blocks, Layout};
use qigen_core::perfmodel::{feasible_register_tiles, TilePlan};
use qigen_core::quant::{quantize_matrix, CodeMatrix, GroupParams, GroupSize, QuantConfig, ZeroMode};
use qigen_runtime::{input_sums, qgemv, qgemv_reference, qgemv_with, Backend, Error, Prepared};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn backends() -> Vec<Backend> {
    let mut b = vec![Backend::Portable];
    if Backend::detect() == Backend::Avx2 {
        b.push(Backend::Avx2);
    }
    b
}

#[test]
fn hand_computed_column_sums() {
    let codes: Vec<u8> = (1..=8).flat_map(|c| [c, c]).collect();
    let config = QuantConfig::full_column(4, ZeroMode::Real32).unwrap();
    let params = vec![GroupParams { scale: 1.0, zero: 0.0 }; 2];
    let cm = CodeMatrix::from_parts(codes, params, 8, 2, config).unwrap();
    let pm = lay_out_blocks(&cm, TilePlan { m_u: 1, t_u: 1, m_b: 8, t_b: 2 }, Layout::ZCurve).unwrap();
    let x = [1.0f32; 8];
    assert_eq!(qgemv_reference(&pm, &x).unwrap(), vec![36.0, 36.0]);
    let sums = input_sums(&x, GroupSize::FullColumn).unwrap();
    for b in backends() {
        assert_eq!(qgemv_with(&pm, &x, &sums, 1, b).unwrap(), vec![36.0, 36.0]);
    }
}

#[test]
fn zero_codes_zero_output() {
    let config = QuantConfig::new(2, GroupSize::Rows(16), ZeroMode::Quantized).unwrap();
    let params = vec![GroupParams { scale: 0.5, zero: 0.0 }; 2 * 40];
    let cm = CodeMatrix::from_parts(vec![0; 32 * 40], params, 32, 40, config).unwrap();
    let pm = lay_out_blocks(&cm, TilePlan { m_u: 3, t_u: 3, m_b: 96, t_b: 24 }, Layout::ZCurve).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let x = random_vec(&mut rng, 32);
    let sums = input_sums(&x, GroupSize::Rows(16)).unwrap();
    assert!(qgemv_reference(&pm, &x).unwrap().iter().all(|&v| v == 0.0));
    for b in backends() {
        assert!(qgemv_with(&pm, &x, &sums, 2, b).unwrap().iter().all(|&v| v == 0.0));
    }
}

#[test]
fn scaled_identity() {
    let n = 64;
    let w: Vec<f32> = (0..n * n).map(|k| if k / n == k % n { 2.5 } else { 0.0 }).collect();
    let config = QuantConfig::full_column(4, ZeroMode::Real32).unwrap();
    let cm = quantize_matrix(&w, n, n, config).unwrap();
    let pm = lay_out_blocks(&cm, TilePlan { m_u: 3, t_u: 3, m_b: 24, t_b: 24 }, Layout::ZCurve).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let x = random_vec(&mut rng, n);
    // every weight within s/2 of its original, so each output within sum |x| s/2
    let s = 2.5f32 / 15.0;
    let bound = x.iter().map(|v| v.abs()).sum::<f32>() * s / 2.0 + 1e-5;
    let y_ref = qgemv_reference(&pm, &x).unwrap();
    let y = qgemv(&pm, &x, &input_sums(&x, GroupSize::FullColumn).unwrap(), 1).unwrap();
    for j in 0..n {
        assert!((y_ref[j] - 2.5 * x[j]).abs() <= bound);
        assert!((y[j] - 2.5 * x[j]).abs() <= bound);
    }
}

#[test]
fn every_compiled_kernel_matches_reference() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for (m_u, t_u) in feasible_register_tiles(16) {
        for bits in [2, 3, 4] {
            for group in [GroupSize::FullColumn, GroupSize::Rows(32)] {
                let zero_mode = if rng.gen_bool(0.5) { ZeroMode::Real32 } else { ZeroMode::Quantized };
                let n = 32 * rng.gen_range(1..6);
                let m = rng.gen_range(1..120);
                let l1 = rng.gen_range(4096..40_000);
                let pm = random_packed(&mut rng, n, m, bits, group, zero_mode, (m_u, t_u), l1);
                let x = random_vec(&mut rng, n);
                let sums = input_sums(&x, group).unwrap();
                let y_ref = qgemv_reference(&pm, &x).unwrap();
                for b in backends() {
                    let y = qgemv_with(&pm, &x, &sums, 1, b).unwrap();
                    let e = rel_err(&y, &y_ref);
                    assert!(e <= 1e-5, "{bits} {group} {m_u}x{t_u} {n}x{m} {b:?}: {e}");
                }
            }
        }
    }
}

#[test]
fn random_shapes_all_groupings() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let groups = [GroupSize::Rows(16), GroupSize::Rows(64), GroupSize::Rows(128), GroupSize::FullColumn];
    for bits in [2, 3, 4] {
        for group in groups {
            for _ in 0..4 {
                let q = row_quantum(bits, group);
                let n = q * rng.gen_range(1..=(512 / q).max(1));
                let m = rng.gen_range(1..300);
                let tile = feasible_register_tiles(16)[rng.gen_range(0..19)];
                let pm = random_packed(&mut rng, n, m, bits, group, ZeroMode::Quantized, tile, 262_144);
                let x = random_vec(&mut rng, n);
                let y = qgemv(&pm, &x, &input_sums(&x, group).unwrap(), 3).unwrap();
                let e = rel_err(&y, &qgemv_reference(&pm, &x).unwrap());
                assert!(e <= 1e-5, "{bits} {group} {n}x{m}: {e}");
            }
        }
    }
}

#[test]
fn row_sequential_layout() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let config = QuantConfig::new(3, GroupSize::Rows(32), ZeroMode::Real32).unwrap();
    let (n, m) = (128, 77);
    let cm = quantize_matrix(&random_vec(&mut rng, n * m), n, m, config).unwrap();
    let plan = TilePlan { m_u: 2, t_u: 4, m_b: 2, t_b: 4 };
    let pm = lay_out_blocks(&cm, plan, Layout::RowSequential).unwrap();
    let x = random_vec(&mut rng, n);
    let y = qgemv(&pm, &x, &input_sums(&x, config.group_size).unwrap(), 4).unwrap();
    assert!(rel_err(&y, &qgemv_reference(&pm, &x).unwrap()) <= 1e-5);
}

#[test]
fn thread_count_invariance() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for (bits, group) in [(4, GroupSize::FullColumn), (3, GroupSize::Rows(32)), (2, GroupSize::Rows(64))] {
        let pm = random_packed(&mut rng, 256, 500, bits, group, ZeroMode::Real32, (3, 3), 8192);
        let x = random_vec(&mut rng, 256);
        let sums = input_sums(&x, group).unwrap();
        let y1 = qgemv(&pm, &x, &sums, 1).unwrap();
        for t in [2, 3, 8, 64] {
            assert_eq!(qgemv(&pm, &x, &sums, t).unwrap(), y1);
        }
    }
}

#[test]
fn full_column_equals_single_group() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let (n, m) = (256, 100);
    let w = random_vec(&mut rng, n * m);
    let x = random_vec(&mut rng, n);
    let run = |group| {
        let config = QuantConfig::new(4, group, ZeroMode::Real32).unwrap();
        let cm = quantize_matrix(&w, n, m, config).unwrap();
        let plan = TilePlan { m_u: 3, t_u: 3, m_b: 768, t_b: 24 };
        let pm = lay_out_blocks(&cm, plan, Layout::ZCurve).unwrap();
        qgemv(&pm, &x, &input_sums(&x, group).unwrap(), 1).unwrap()
    };
    assert!(rel_err(&run(GroupSize::Rows(n)), &run(GroupSize::FullColumn)) <= 1e-6);
}

#[test]
fn linear_in_input() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let group = GroupSize::Rows(32);
    let pm = random_packed(&mut rng, 320, 90, 3, group, ZeroMode::Quantized, (2, 4), 262_144);
    let (a, b) = (0.75f32, -1.5f32);
    let x1 = random_vec(&mut rng, 320);
    let x2 = random_vec(&mut rng, 320);
    let mix: Vec<f32> = x1.iter().zip(&x2).map(|(p, q)| a * p + b * q).collect();
    let y = |x: &[f32]| qgemv(&pm, x, &input_sums(x, group).unwrap(), 1).unwrap();
    let (y1, y2) = (y(&x1), y(&x2));
    let combined: Vec<f32> = y1.iter().zip(&y2).map(|(p, q)| a * p + b * q).collect();
    assert!(rel_err(&y(&mix), &combined) <= 1e-4);
    let zeros = vec![0.0; 320];
    assert!(y(&zeros).iter().all(|&v| v == 0.0));
}

#[test]
fn argument_errors() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let group = GroupSize::Rows(16);
    let pm = random_packed(&mut rng, 64, 30, 4, group, ZeroMode::Real32, (3, 3), 262_144);
    let x = random_vec(&mut rng, 64);
    let sums = input_sums(&x, group).unwrap();
    assert!(matches!(qgemv(&pm, &x[..63], &sums, 1), Err(Error::Dimension { .. })));
    assert!(matches!(qgemv(&pm, &x, &sums, 0), Err(Error::Threads)));
    let other = input_sums(&x, GroupSize::Rows(32)).unwrap();
    assert!(matches!(qgemv(&pm, &x, &other, 1), Err(Error::SumsMismatch { .. })));
    assert!(matches!(qgemv_reference(&pm, &x[1..]), Err(Error::Dimension { .. })));

    // no kernel for a tile over the register budget
    let config = QuantConfig::full_column(4, ZeroMode::Real32).unwrap();
    let cm = quantize_matrix(&random_vec(&mut rng, 64 * 24), 64, 24, config).unwrap();
    let pm = lay_out_blocks(&cm, TilePlan { m_u: 4, t_u: 4, m_b: 64, t_b: 24 }, Layout::ZCurve).unwrap();
    assert!(matches!(Prepared::new(&pm, Backend::Portable), Err(Error::NoKernel(_))));

    // group size outside the kernels' 8-row segments
    let config = QuantConfig::new(2, GroupSize::Rows(48), ZeroMode::Real32).unwrap();
    let cm = quantize_matrix(&random_vec(&mut rng, 96 * 4), 96, 4, config).unwrap();
    let pm = lay_out_blocks(&cm, TilePlan { m_u: 1, t_u: 1, m_b: 48, t_b: 4 }, Layout::ZCurve).unwrap();
    assert!(Prepared::new(&pm, Backend::Portable).is_ok());
    let config = QuantConfig::new(4, GroupSize::Rows(12), ZeroMode::Real32).unwrap();
    let cm = quantize_matrix(&random_vec(&mut rng, 24 * 4), 24, 4, config).unwrap();
    let pm = lay_out_blocks(&cm, TilePlan { m_u: 1, t_u: 1, m_b: 24, t_b: 4 }, Layout::ZCurve).unwrap();
    assert!(matches!(Prepared::new(&pm, Backend::Portable), Err(Error::GroupSize(12))));
}
