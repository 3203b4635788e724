//! Thin vector layer the generated kernels are written against.
//!
//! The operation set is the usual shift/mask/convert/fused-multiply-add
//! vocabulary plus `slli` and `or`, which 3-bit unpacking needs to join
//! codes that straddle two words.

/// A fixed-width vector of `f32` lanes (`F`) and matching `u32` lanes (`U`).
///
/// # Safety
///
/// Implementations may rely on CPU features; callers must make sure the
/// features are present. Pointer arguments must be valid for `LANES` elements
/// (no alignment requirement).
pub unsafe trait Simd {
    const LANES: usize;
    type F: Copy;
    type U: Copy;

    unsafe fn load(p: *const u32) -> Self::U;
    unsafe fn loadf(p: *const f32) -> Self::F;
    unsafe fn store(p: *mut f32, v: Self::F);
    unsafe fn broadcast(v: f32) -> Self::F;
    unsafe fn broadcast_u(v: u32) -> Self::U;
    unsafe fn zero() -> Self::F;
    /// `a * b + c`
    unsafe fn fmadd(a: Self::F, b: Self::F, c: Self::F) -> Self::F;
    unsafe fn reduce_add(v: Self::F) -> f32;
    unsafe fn srli<const N: i32>(v: Self::U) -> Self::U;
    unsafe fn slli<const N: i32>(v: Self::U) -> Self::U;
    unsafe fn and(a: Self::U, b: Self::U) -> Self::U;
    unsafe fn or(a: Self::U, b: Self::U) -> Self::U;
    unsafe fn cvt_int_float(v: Self::U) -> Self::F;
}

/// Eight lanes in plain arrays; works everywhere.
#[derive(Debug, Clone, Copy)]
pub struct Portable;

const PL: usize = 8;

unsafe impl Simd for Portable {
    const LANES: usize = PL;
    type F = [f32; PL];
    type U = [u32; PL];

    #[inline(always)]
    unsafe fn load(p: *const u32) -> Self::U {
        std::ptr::read_unaligned(p as *const [u32; PL])
    }

    #[inline(always)]
    unsafe fn loadf(p: *const f32) -> Self::F {
        std::ptr::read_unaligned(p as *const [f32; PL])
    }

    #[inline(always)]
    unsafe fn store(p: *mut f32, v: Self::F) {
        std::ptr::write_unaligned(p as *mut [f32; PL], v)
    }

    #[inline(always)]
    unsafe fn broadcast(v: f32) -> Self::F {
        [v; PL]
    }

    #[inline(always)]
    unsafe fn broadcast_u(v: u32) -> Self::U {
        [v; PL]
    }

    #[inline(always)]
    unsafe fn zero() -> Self::F {
        [0.0; PL]
    }

    #[inline(always)]
    unsafe fn fmadd(a: Self::F, b: Self::F, c: Self::F) -> Self::F {
        std::array::from_fn(|i| a[i] * b[i] + c[i])
    }

    #[inline(always)]
    unsafe fn reduce_add(v: Self::F) -> f32 {
        v.iter().sum()
    }

    #[inline(always)]
    unsafe fn srli<const N: i32>(v: Self::U) -> Self::U {
        v.map(|x| x >> N)
    }

    #[inline(always)]
    unsafe fn slli<const N: i32>(v: Self::U) -> Self::U {
        v.map(|x| x << N)
    }

    #[inline(always)]
    unsafe fn and(a: Self::U, b: Self::U) -> Self::U {
        std::array::from_fn(|i| a[i] & b[i])
    }

    #[inline(always)]
    unsafe fn or(a: Self::U, b: Self::U) -> Self::U {
        std::array::from_fn(|i| a[i] | b[i])
    }

    #[inline(always)]
    unsafe fn cvt_int_float(v: Self::U) -> Self::F {
        v.map(|x| x as i32 as f32)
    }
}

#[cfg(target_arch = "x86_64")]
pub use avx2::Avx2;

#[cfg(target_arch = "x86_64")]
mod avx2 {
    use super::Simd;
    use std::arch::x86_64::*;

    /// 256-bit AVX2 vectors with FMA. Only use after
    /// [`crate::kernel::Backend::detect`] reports support.
    #[derive(Debug, Clone, Copy)]
    pub struct Avx2;

    unsafe impl Simd for Avx2 {
        const LANES: usize = 8;
        type F = __m256;
        type U = __m256i;

        #[inline(always)]
        unsafe fn load(p: *const u32) -> __m256i {
            _mm256_loadu_si256(p as *const __m256i)
        }

        #[inline(always)]
        unsafe fn loadf(p: *const f32) -> __m256 {
            _mm256_loadu_ps(p)
        }

        #[inline(always)]
        unsafe fn store(p: *mut f32, v: __m256) {
            _mm256_storeu_ps(p, v)
        }

        #[inline(always)]
        unsafe fn broadcast(v: f32) -> __m256 {
            _mm256_set1_ps(v)
        }

        #[inline(always)]
        unsafe fn broadcast_u(v: u32) -> __m256i {
            _mm256_set1_epi32(v as i32)
        }

        #[inline(always)]
        unsafe fn zero() -> __m256 {
            _mm256_setzero_ps()
        }

        #[inline(always)]
        unsafe fn fmadd(a: __m256, b: __m256, c: __m256) -> __m256 {
            _mm256_fmadd_ps(a, b, c)
        }

        #[inline(always)]
        unsafe fn reduce_add(v: __m256) -> f32 {
            let s = _mm_add_ps(_mm256_castps256_ps128(v), _mm256_extractf128_ps::<1>(v));
            let s = _mm_add_ps(s, _mm_movehl_ps(s, s));
            let s = _mm_add_ss(s, _mm_shuffle_ps::<0b01>(s, s));
            _mm_cvtss_f32(s)
        }

        #[inline(always)]
        unsafe fn srli<const N: i32>(v: __m256i) -> __m256i {
            _mm256_srli_epi32::<N>(v)
        }

        #[inline(always)]
        unsafe fn slli<const N: i32>(v: __m256i) -> __m256i {
            _mm256_slli_epi32::<N>(v)
        }

        #[inline(always)]
        unsafe fn and(a: __m256i, b: __m256i) -> __m256i {
            _mm256_and_si256(a, b)
        }

        #[inline(always)]
        unsafe fn or(a: __m256i, b: __m256i) -> __m256i {
            _mm256_or_si256(a, b)
        }

        #[inline(always)]
        unsafe fn cvt_int_float(v: __m256i) -> __m256 {
            _mm256_cvtepi32_ps(v)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Runs the same sequence of operations on any layer.
    unsafe fn exercise<S: Simd>() -> ([f32; 8], f32) {
        let words: [u32; 8] = [0x8765_4321, 0xFFFF_FFFF, 0, 1 << 31, 7, 0xE4E4_E4E4, 12345, 0x0F0F_0F0F];
        let hi: [u32; 8] = [1, 2, 3, 0, 5, 6, 7, 0xFFFF_FFFF];
        let mask = S::broadcast_u(7);
        let v = S::or(S::srli::<30>(S::load(words.as_ptr())), S::slli::<2>(S::load(hi.as_ptr())));
        let codes = S::cvt_int_float(S::and(v, mask));
        let xs = [0.5f32, -1.0, 2.0, 0.25, 3.0, -0.5, 1.5, 8.0];
        let acc = S::fmadd(S::loadf(xs.as_ptr()), codes, S::broadcast(1.0));
        let acc = S::fmadd(S::broadcast(2.0), acc, S::zero());
        let mut out = [0f32; 8];
        S::store(out.as_mut_ptr(), acc);
        (out, S::reduce_add(acc))
    }

    #[test]
    fn portable_ops() {
        let (out, sum) = unsafe { exercise::<Portable>() };
        let words: [u32; 8] = [0x8765_4321, 0xFFFF_FFFF, 0, 1 << 31, 7, 0xE4E4_E4E4, 12345, 0x0F0F_0F0F];
        let hi: [u32; 8] = [1, 2, 3, 0, 5, 6, 7, 0xFFFF_FFFF];
        let xs = [0.5f32, -1.0, 2.0, 0.25, 3.0, -0.5, 1.5, 8.0];
        for i in 0..8 {
            let code = ((words[i] >> 30) | (hi[i] << 2)) & 7;
            assert_eq!(out[i], 2.0 * (xs[i] * code as f32 + 1.0));
        }
        assert_eq!(sum, out.iter().sum::<f32>());
    }

    #[cfg(target_arch = "x86_64")]
    #[test]
    fn avx2_matches_portable() {
        if !(is_x86_feature_detected!("avx2") && is_x86_feature_detected!("fma")) {
            return;
        }
        let (p, ps) = unsafe { exercise::<Portable>() };
        let (a, s) = unsafe { exercise::<Avx2>() };
        // small exact values, so fused and unfused agree
        assert_eq!(p, a);
        assert_eq!(ps, s);
    }
}
