//! Radix-2 complex FFT used by the spectral and simulation paths.
//!
//! Frame sizes in this crate are powers of two by construction, so a plain
//! iterative Cooley-Tukey transform with a precomputed twiddle table covers
//! every need without pulling in an FFT dependency.

use alloc::vec::Vec;

use num_complex::Complex64;

/// FFT plan for one transform size. Build once, reuse per frame.
pub struct Fft {
    size: usize,
    /// Forward twiddles `exp(-2*pi*i*k/size)` for `k` in `0..size/2`.
    twiddles: Vec<Complex64>,
}

impl Fft {
    /// Plans a transform of `size` points. `size` must be a power of two.
    pub fn new(size: usize) -> Self {
        assert!(
            size.is_power_of_two(),
            "FFT size {size} is not a power of two"
        );
        let step = -2.0 * core::f64::consts::PI / size as f64;
        let twiddles = (0..size / 2)
            .map(|k| {
                let phase = step * k as f64;
                Complex64::new(libm::cos(phase), libm::sin(phase))
            })
            .collect();
        Self { size, twiddles }
    }

    pub fn size(&self) -> usize {
        self.size
    }

    /// In-place forward transform (no normalization).
    pub fn forward(&self, buf: &mut [Complex64]) {
        assert_eq!(
            buf.len(),
            self.size,
            "buffer length does not match plan size"
        );
        self.transform(buf);
    }

    /// In-place inverse transform, normalized by `1/size`.
    pub fn inverse(&self, buf: &mut [Complex64]) {
        assert_eq!(
            buf.len(),
            self.size,
            "buffer length does not match plan size"
        );
        for v in buf.iter_mut() {
            *v = v.conj();
        }
        self.transform(buf);
        let scale = 1.0 / self.size as f64;
        for v in buf.iter_mut() {
            *v = v.conj() * scale;
        }
    }

    fn transform(&self, buf: &mut [Complex64]) {
        let n = self.size;
        if n <= 1 {
            return;
        }

        // Bit-reversal permutation.
        let shift = n.leading_zeros() + 1;
        for i in 0..n {
            let j = i.reverse_bits() >> shift;
            if i < j {
                buf.swap(i, j);
            }
        }

        let mut len = 2;
        while len <= n {
            let half = len / 2;
            let stride = n / len;
            for start in (0..n).step_by(len) {
                for k in 0..half {
                    let w = self.twiddles[k * stride];
                    let a = buf[start + k];
                    let b = buf[start + k + half] * w;
                    buf[start + k] = a + b;
                    buf[start + k + half] = a - b;
                }
            }
            len <<= 1;
        }
    }
}

/// Forward DFT of a real signal, zero-padded or truncated to `buf.len()` by
/// the caller. Convenience for one-shot uses; hot paths keep an [`Fft`] plan.
pub fn forward_real(signal: &[f64]) -> Vec<Complex64> {
    let mut buf: Vec<Complex64> = signal.iter().map(|&x| Complex64::new(x, 0.0)).collect();
    Fft::new(buf.len()).forward(&mut buf);
    buf
}
