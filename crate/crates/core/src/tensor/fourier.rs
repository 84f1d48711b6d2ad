//! 2-D discrete Fourier transform.
//!
//! Forward transform is unnormalized with the `exp(-2πi(uk/H + vj/W))`
//! kernel; the inverse carries the `1/(H·W)` factor. Distances therefore scale
//! by `H·W` under the forward transform, a constant that cancels in every
//! least-squares or minimum-distance problem solved in the frequency domain.

use std::cell::RefCell;

use rustfft::{FftDirection, FftPlanner};

use super::{Complex64, ComplexTensor, Tensor};
use crate::error::Result;

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

fn transform(data: &mut [Complex64], h: usize, w: usize, direction: FftDirection) {
    assert_eq!(data.len(), h * w, "buffer does not match {h}×{w}");
    PLANNER.with(|planner| {
        let mut planner = planner.borrow_mut();
        let row_fft = planner.plan_fft(w, direction);
        let col_fft = planner.plan_fft(h, direction);

        // rows are contiguous
        row_fft.process(data);

        let mut column = vec![Complex64::new(0.0, 0.0); h];
        for j in 0..w {
            for i in 0..h {
                column[i] = data[i * w + j];
            }
            col_fft.process(&mut column);
            for i in 0..h {
                data[i * w + j] = column[i];
            }
        }
    });
}

/// Forward unnormalized DFT of a row-major `h×w` buffer.
pub fn dft2_slice(data: &[Complex64], h: usize, w: usize) -> Vec<Complex64> {
    let mut out = data.to_vec();
    transform(&mut out, h, w, FftDirection::Forward);
    out
}

/// Inverse DFT of a row-major `h×w` spectrum, scaled by `1/(h·w)`.
pub fn idft2_slice(data: &[Complex64], h: usize, w: usize) -> Vec<Complex64> {
    let mut out = data.to_vec();
    transform(&mut out, h, w, FftDirection::Inverse);
    let scale = 1.0 / (h * w) as f64;
    out.iter_mut().for_each(|z| *z *= scale);
    out
}

/// Forward DFT of a real `H×W` matrix.
pub fn dft2(x: &Tensor) -> Result<ComplexTensor> {
    let (h, w) = x.dims2()?;
    let buf: Vec<Complex64> = x.data().iter().map(|&v| Complex64::new(v, 0.0)).collect();
    ComplexTensor::new(vec![h, w], dft2_slice(&buf, h, w))
}

/// Inverse DFT of an `H×W` spectrum.
pub fn idft2(x: &ComplexTensor) -> Result<ComplexTensor> {
    let (h, w) = match *x.shape() {
        [h, w] => (h, w),
        _ => {
            return Err(crate::error::Error::shape(format!(
                "expected H×W spectrum, got {:?}",
                x.shape()
            )))
        }
    };
    ComplexTensor::new(vec![h, w], idft2_slice(x.data(), h, w))
}
