//! Small FFT helpers shared by the ramp filter and the gradient smoother.

use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;

/// In-place 2D FFT of a row-major `rows x cols` complex buffer.
pub fn fft2(buf: &mut [Complex64], rows: usize, cols: usize, inverse: bool) {
    assert_eq!(buf.len(), rows * cols);
    let mut planner = FftPlanner::new();
    let row_fft = if inverse {
        planner.plan_fft_inverse(cols)
    } else {
        planner.plan_fft_forward(cols)
    };
    for r in 0..rows {
        row_fft.process(&mut buf[r * cols..(r + 1) * cols]);
    }
    let col_fft = if inverse {
        planner.plan_fft_inverse(rows)
    } else {
        planner.plan_fft_forward(rows)
    };
    let mut col = vec![Complex64::default(); rows];
    for c in 0..cols {
        for r in 0..rows {
            col[r] = buf[r * cols + c];
        }
        col_fft.process(&mut col);
        for r in 0..rows {
            buf[r * cols + c] = col[r];
        }
    }
    if inverse {
        let scale = 1.0 / (rows * cols) as f64;
        for v in buf.iter_mut() {
            *v *= scale;
        }
    }
}

pub fn next_pow2(n: usize) -> usize {
    let mut p = 1;
    while p < n {
        p <<= 1;
    }
    p
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fft2_round_trip() {
        let rows = 4;
        let cols = 8;
        let mut buf: Vec<Complex64> = (0..rows * cols)
            .map(|i| Complex64::new((i as f64 * 0.37).sin(), 0.0))
            .collect();
        let orig = buf.clone();
        fft2(&mut buf, rows, cols, false);
        fft2(&mut buf, rows, cols, true);
        for (a, b) in buf.iter().zip(&orig) {
            assert!((a - b).norm() < 1e-12);
        }
    }
}
