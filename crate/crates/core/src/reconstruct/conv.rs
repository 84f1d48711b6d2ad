use super::linear::Branch;
use crate::error::{Error, Result};
use crate::tensor::{
    dft2_slice, idft2_slice, solve_hpd, solve_lstsq, valid_correlate, valid_correlate_channel, CMatrix, Complex64,
    ComplexTensor, Tensor,
};

const ZERO: Complex64 = Complex64::new(0.0, 0.0);

/// Largest tolerated `max|imag| / (1 + max|real|)` after the inverse DFT.
pub const IMAG_TOL: f64 = 1e-6;

/// A frequency is singular when its squared kernel-spectrum norm falls below
/// this fraction of the largest one.
const SINGULAR_TOL: f64 = 1e-12;

/// Reverses both spatial axes of every `kh×kw` kernel of a
/// `C_out×C_in×kh×kw` (or single `kh×kw`) tensor.
pub fn flip_kernel(kernels: &Tensor) -> Result<Tensor> {
    let (kh, kw) = match *kernels.shape() {
        [.., kh, kw] if kernels.rank() >= 2 => (kh, kw),
        _ => return Err(Error::shape(format!("kernel tensor {:?} has no spatial axes", kernels.shape()))),
    };
    let mut out = kernels.clone();
    for (dst, src) in out.data_mut().chunks_exact_mut(kh * kw).zip(kernels.data().chunks_exact(kh * kw)) {
        for s in 0..kh {
            for t in 0..kw {
                dst[s * kw + t] = src[(kh - 1 - s) * kw + (kw - 1 - t)];
            }
        }
    }
    Ok(out)
}

/// `h×w` buffer holding `src` (`sh×sw`) at row/column offset `(oi, oj)`.
fn embed(src: &[f64], sh: usize, sw: usize, h: usize, w: usize, oi: usize, oj: usize) -> Vec<Complex64> {
    let mut out = vec![ZERO; h * w];
    for i in 0..sh {
        for j in 0..sw {
            out[(i + oi) * w + j + oj] = Complex64::new(src[i * sw + j], 0.0);
        }
    }
    out
}

/// Spectrum of a flipped kernel zero-padded at the right and bottom to `h×w`.
fn kernel_spectrum(flipped: &[f64], kh: usize, kw: usize, h: usize, w: usize) -> Vec<Complex64> {
    dft2_slice(&embed(flipped, kh, kw, h, w, 0, 0), h, w)
}

/// Boundary term for one channel/kernel pair:
/// `G = F(â)·F(K̃) − F(pad(T))`, where `T` is the valid correlation of `â`
/// with the unflipped kernel, placed at offset `(kh−1, kw−1)`.
///
/// `G` collects the wrap-around products that circular convolution adds to
/// the valid one, so `F(a)·F(K̃) − G[a] = F(pad(T[a]))` holds exactly.
pub fn boundary_term_g(channel: &Tensor, flipped_kernel: &Tensor) -> Result<ComplexTensor> {
    let (h, w) = channel.dims2()?;
    let (kh, kw) = flipped_kernel.dims2()?;
    if kh > h || kw > w || kh == 0 || kw == 0 {
        return Err(Error::shape(format!("kernel {kh}×{kw} does not fit a {h}×{w} map")));
    }
    let fa = dft2_slice(&embed(channel.data(), h, w, h, w, 0, 0), h, w);
    let fk = kernel_spectrum(flipped_kernel.data(), kh, kw, h, w);
    let g = boundary_from_spectra(channel.data(), h, w, &fa, &fk, &flip_kernel(flipped_kernel)?.into_data(), kh, kw);
    ComplexTensor::new(vec![h, w], g)
}

#[allow(clippy::too_many_arguments)]
fn boundary_from_spectra(
    channel: &[f64],
    h: usize,
    w: usize,
    fa: &[Complex64],
    fk: &[Complex64],
    kernel: &[f64],
    kh: usize,
    kw: usize,
) -> Vec<Complex64> {
    let t = valid_correlate_channel(channel, h, w, kernel, kh, kw);
    let ft = dft2_slice(&embed(&t, h - kh + 1, w - kw + 1, h, w, kh - 1, kw - 1), h, w);
    fa.iter().zip(fk).zip(&ft).map(|((a, k), t)| a * k - t).collect()
}

/// Frequency-domain quantities of one conv unit evaluated at a forward input.
#[derive(Debug, Clone)]
pub struct FourierWorkspace {
    c_out: usize,
    c_in: usize,
    h: usize,
    w: usize,
    /// `F(K̃[n,m])`, `C_out×C_in` blocks of `h×w`.
    kernel: Vec<Complex64>,
    /// `F(â_m)`, `C_in` blocks of `h×w`.
    input: Vec<Complex64>,
    /// `G[â]`, `C_out×C_in` blocks of `h×w`.
    boundary: Vec<Complex64>,
}

impl FourierWorkspace {
    /// `kernels` are the unit's unflipped `C_out×C_in×kh×kw` weights and
    /// `forward` its `C_in×H×W` forward input.
    pub fn new(kernels: &Tensor, forward: &Tensor) -> Result<Self> {
        let (c_in, h, w) = forward.dims3()?;
        let (c_out, kc, kh, kw) = match *kernels.shape() {
            [n, m, kh, kw] => (n, m, kh, kw),
            _ => return Err(Error::shape(format!("kernels must be C_out×C_in×kh×kw, got {:?}", kernels.shape()))),
        };
        if kc != c_in || kh > h || kw > w || kh == 0 || kw == 0 {
            return Err(Error::shape(format!("kernels {:?} do not fit input {:?}", kernels.shape(), forward.shape())));
        }
        let plane = h * w;
        let flipped = flip_kernel(kernels)?;
        let input: Vec<Complex64> = (0..c_in)
            .flat_map(|m| dft2_slice(&embed(&forward.data()[m * plane..(m + 1) * plane], h, w, h, w, 0, 0), h, w))
            .collect();
        let mut kernel = Vec::with_capacity(c_out * c_in * plane);
        let mut boundary = Vec::with_capacity(c_out * c_in * plane);
        let ksize = kh * kw;
        for nm in 0..c_out * c_in {
            let m = nm % c_in;
            let fk = kernel_spectrum(&flipped.data()[nm * ksize..(nm + 1) * ksize], kh, kw, h, w);
            boundary.extend(boundary_from_spectra(
                &forward.data()[m * plane..(m + 1) * plane],
                h,
                w,
                &input[m * plane..(m + 1) * plane],
                &fk,
                &kernels.data()[nm * ksize..(nm + 1) * ksize],
                kh,
                kw,
            ));
            kernel.extend(fk);
        }
        Ok(Self {
            c_out,
            c_in,
            h,
            w,
            kernel,
            input,
            boundary,
        })
    }

    /// `F(K̃[n,m])` as a `C_out×C_in×H×W` complex tensor.
    pub fn kernel_spectra(&self) -> ComplexTensor {
        ComplexTensor::new(vec![self.c_out, self.c_in, self.h, self.w], self.kernel.clone()).expect("consistent")
    }

    /// `G[â]` as a `C_out×C_in×H×W` complex tensor.
    pub fn boundary(&self) -> ComplexTensor {
        ComplexTensor::new(vec![self.c_out, self.c_in, self.h, self.w], self.boundary.clone()).expect("consistent")
    }

    /// `F(â_m)` as a `C_in×H×W` complex tensor.
    pub fn input_spectra(&self) -> ComplexTensor {
        ComplexTensor::new(vec![self.c_in, self.h, self.w], self.input.clone()).expect("consistent")
    }

    fn frequency_matrix(&self, f: usize) -> CMatrix {
        let plane = self.h * self.w;
        let data = (0..self.c_out * self.c_in).map(|nm| self.kernel[nm * plane + f]).collect();
        CMatrix::new(self.c_out, self.c_in, data).expect("consistent")
    }
}

/// Result of a convolutional reconstruction.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvRecon {
    /// `a*`, shaped like the forward input.
    pub input: Tensor,
    pub branch: Branch,
    /// Largest per-frequency residual: `‖A·x − rhs‖∞` for the
    /// minimal-deviation branch, `‖Aᴴ(A·x − rhs)‖∞` for least squares.
    pub frequency_residual: f64,
}

/// Reconstructs the input of a stride-1, unpadded conv unit from its target
/// pre-activation `z*` (`C_out×H'×W'`), solving one small complex system per
/// frequency with the boundary term frozen at the forward input.
pub fn reconstruct_conv(kernels: &Tensor, bias: &[f64], target: &Tensor, forward: &Tensor) -> Result<ConvRecon> {
    let ws = FourierWorkspace::new(kernels, forward)?;
    let (c_out, c_in, h, w) = (ws.c_out, ws.c_in, ws.h, ws.w);
    let (kh, kw) = (kernels.shape()[2], kernels.shape()[3]);
    let (oh, ow) = (h - kh + 1, w - kw + 1);
    if target.shape() != [c_out, oh, ow] || bias.len() != c_out {
        return Err(Error::shape(format!(
            "target {:?} and bias {} do not match a {c_out}×{oh}×{ow} output",
            target.shape(),
            bias.len()
        )));
    }
    let plane = h * w;
    let oplane = oh * ow;

    // rhs_n = F(pad(z*_n − b_n)) + Σ_m G[n,m]
    let mut rhs = Vec::with_capacity(c_out * plane);
    for (n, b_n) in bias.iter().enumerate().take(c_out) {
        let shifted: Vec<f64> = target.data()[n * oplane..(n + 1) * oplane].iter().map(|v| v - b_n).collect();
        let mut spec = dft2_slice(&embed(&shifted, oh, ow, h, w, kh - 1, kw - 1), h, w);
        for m in 0..c_in {
            let g = &ws.boundary[(n * c_in + m) * plane..(n * c_in + m + 1) * plane];
            for (s, gv) in spec.iter_mut().zip(g) {
                *s += gv;
            }
        }
        rhs.extend(spec);
    }

    let branch = if c_in >= c_out { Branch::MinimalDeviation } else { Branch::LeastSquares };
    let energy = |f: usize| (0..c_out * c_in).map(|nm| ws.kernel[nm * plane + f].norm_sqr()).sum::<f64>();
    let peak = (0..plane).map(energy).fold(0.0_f64, f64::max);
    let mut solution = vec![ZERO; c_in * plane];
    let mut worst = 0.0_f64;
    for f in 0..plane {
        let (u, v) = (f / w, f % w);
        // The solvers' pivot tests are relative to each small system; a
        // frequency where the whole kernel spectrum vanishes needs a global scale.
        let e = energy(f);
        if e.is_nan() || e <= SINGULAR_TOL * peak {
            return Err(Error::RankDeficientFrequency { u, v });
        }
        let a = ws.frequency_matrix(f);
        let b: Vec<Complex64> = (0..c_out).map(|n| rhs[n * plane + f]).collect();
        let x_hat: Vec<Complex64> = (0..c_in).map(|m| ws.input[m * plane + f]).collect();
        let singular = |e: Error| match e {
            Error::NotPositiveDefinite { .. } | Error::RankDeficient { .. } => Error::RankDeficientFrequency { u, v },
            other => other,
        };
        let x = match branch {
            Branch::MinimalDeviation => {
                let gram = a.gram_rows();
                let ah = a.conj_transpose();
                let mut x = x_hat;
                for _ in 0..2 {
                    let r: Vec<Complex64> = a.matvec(&x).iter().zip(&b).map(|(p, q)| q - p).collect();
                    let gamma = solve_hpd(&gram, &r).map_err(singular)?;
                    for (xi, d) in x.iter_mut().zip(ah.matvec(&gamma)) {
                        *xi += d;
                    }
                }
                let r = a.matvec(&x).iter().zip(&b).fold(0.0_f64, |m, (p, q)| m.max((p - q).norm()));
                worst = worst.max(r);
                x
            }
            Branch::LeastSquares => {
                let x = solve_lstsq(&a, &b).map_err(singular)?;
                let r: Vec<Complex64> = a.matvec(&x).iter().zip(&b).map(|(p, q)| p - q).collect();
                let g = a.conj_transpose().matvec(&r).iter().fold(0.0_f64, |m, z| m.max(z.norm()));
                worst = worst.max(g);
                x
            }
        };
        for (m, xm) in x.into_iter().enumerate() {
            solution[m * plane + f] = xm;
        }
    }

    let mut out = Vec::with_capacity(c_in * plane);
    let (mut max_imag, mut max_real) = (0.0_f64, 0.0_f64);
    for m in 0..c_in {
        let spatial = idft2_slice(&solution[m * plane..(m + 1) * plane], h, w);
        for z in spatial {
            max_imag = max_imag.max(z.im.abs());
            max_real = max_real.max(z.re.abs());
            out.push(z.re);
        }
    }
    if max_imag > IMAG_TOL * (1.0 + max_real) {
        return Err(Error::ImaginaryResidue {
            imag: max_imag,
            real: max_real,
        });
    }
    Ok(ConvRecon {
        input: Tensor::new(vec![c_in, h, w], out)?,
        branch,
        frequency_residual: worst,
    })
}

/// `‖valid_correlate(a*, K, b) − z*‖₂`: how far the reconstruction is from
/// reproducing its target under the true (valid) convolution.
pub fn conv_consistency(kernels: &Tensor, bias: &[f64], input: &Tensor, target: &Tensor) -> Result<f64> {
    Ok(valid_correlate(input, kernels, bias)?.sub(target)?.norm())
}

#[cfg(test)]
mod tests {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::reconstruct::reconstruct_linear;

    fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
        let n = shape.iter().product();
        Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    /// Random `C×H×W` map with a zero ring of width `(kh−1, kw−1)`.
    fn zero_ring(c: usize, h: usize, w: usize, kh: usize, kw: usize, rng: &mut ChaCha8Rng) -> Tensor {
        let mut t = random(&[c, h, w], rng);
        for m in 0..c {
            for i in 0..h {
                for j in 0..w {
                    let inner = i >= kh - 1 && i + kh - 1 < h && j >= kw - 1 && j + kw - 1 < w;
                    if !inner {
                        t.data_mut()[(m * h + i) * w + j] = 0.0;
                    }
                }
            }
        }
        t
    }

    /// Materializes the operator `a ↦ Σ_m circconv(a_m, pad(K̃[n,m]))` on
    /// `C_in·H·W` inputs as a dense `(C_out·H·W)×(C_in·H·W)` matrix, one
    /// column per unit impulse, using only direct spatial sums.
    fn circulant_matrix(kernels: &Tensor, h: usize, w: usize) -> Tensor {
        let [c_out, c_in, kh, kw] = kernels.shape()[..] else { unreachable!() };
        let plane = h * w;
        let rows = c_out * plane;
        let cols = c_in * plane;
        let mut m = vec![0.0; rows * cols];
        let k = kernels.data();
        for n in 0..c_out {
            for ci in 0..c_in {
                for i in 0..h {
                    for j in 0..w {
                        // output (i, j) = Σ_{s,t} a(i−(kh−1)+s, j−(kw−1)+t)·K(s,t), indices mod (h, w)
                        for s in 0..kh {
                            for t in 0..kw {
                                let src_i = (i + h + s - (kh - 1)) % h;
                                let src_j = (j + w + t - (kw - 1)) % w;
                                let row = n * plane + i * w + j;
                                let col = ci * plane + src_i * w + src_j;
                                m[row * cols + col] += k[((n * c_in + ci) * kh + s) * kw + t];
                            }
                        }
                    }
                }
            }
        }
        Tensor::new(vec![rows, cols], m).unwrap()
    }

    #[test]
    fn flip_examples() {
        let k = Tensor::new(vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(flip_kernel(&k).unwrap().data(), &[4.0, 3.0, 2.0, 1.0]);
        let sym = Tensor::new(vec![3, 3], vec![1.0, 2.0, 1.0, 2.0, 5.0, 2.0, 1.0, 2.0, 1.0]).unwrap();
        assert_eq!(flip_kernel(&sym).unwrap(), sym);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let r = random(&[2, 3, 3, 2], &mut rng);
        assert_eq!(flip_kernel(&flip_kernel(&r).unwrap()).unwrap(), r);
    }

    #[test]
    fn exactness_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for (h, w, kh, kw) in [(6, 6, 3, 3), (7, 9, 2, 4), (5, 5, 5, 5), (8, 6, 1, 1)] {
            let a = random(&[h, w], &mut rng);
            let k = random(&[kh, kw], &mut rng);
            let kt = flip_kernel(&k).unwrap();
            let g = boundary_term_g(&a, &kt).unwrap();
            let fa = dft2_slice(&embed(a.data(), h, w, h, w, 0, 0), h, w);
            let fk = kernel_spectrum(kt.data(), kh, kw, h, w);
            let t = valid_correlate_channel(a.data(), h, w, k.data(), kh, kw);
            let ft = dft2_slice(&embed(&t, h - kh + 1, w - kw + 1, h, w, kh - 1, kw - 1), h, w);
            for f in 0..h * w {
                assert!((fa[f] * fk[f] - g.data()[f] - ft[f]).norm() <= 1e-9);
            }
            if kh == 1 && kw == 1 {
                assert!(g.data().iter().all(|z| z.norm() <= 1e-12));
            }
        }
    }

    #[test]
    fn zero_ring_has_no_boundary_term() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = zero_ring(1, 7, 8, 3, 2, &mut rng);
        let a2 = a.clone().reshape(&[7, 8]).unwrap();
        let g = boundary_term_g(&a2, &random(&[3, 2], &mut rng)).unwrap();
        assert!(g.data().iter().all(|z| z.norm() <= 1e-12));
    }

    #[test]
    fn fixed_point_both_branches() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for (c_in, c_out) in [(3, 2), (2, 2), (1, 3), (2, 4)] {
            let a = random(&[c_in, 9, 8], &mut rng);
            let k = random(&[c_out, c_in, 3, 2], &mut rng);
            let b: Vec<f64> = (0..c_out).map(|_| rng.random_range(-0.5..0.5)).collect();
            let z = valid_correlate(&a, &k, &b).unwrap();
            let r = reconstruct_conv(&k, &b, &z, &a).unwrap();
            assert!(r.input.max_abs_diff(&a).unwrap() <= 1e-7, "{c_in}→{c_out}");
            assert!(r.frequency_residual <= 1e-8);
        }
    }

    #[test]
    fn minimal_deviation_residual_per_frequency() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let a = random(&[3, 6, 6], &mut rng);
        let k = random(&[2, 3, 3, 3], &mut rng);
        let z = random(&[2, 4, 4], &mut rng);
        let r = reconstruct_conv(&k, &[0.1, -0.2], &z, &a).unwrap();
        assert_eq!(r.branch, Branch::MinimalDeviation);
        assert!(r.frequency_residual <= 1e-8);
    }

    #[test]
    fn matches_circulant_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for (c_in, c_out) in [(3, 2), (1, 2), (2, 3)] {
            for _ in 0..3 {
                let a = zero_ring(c_in, 6, 6, 3, 3, &mut rng);
                let k = random(&[c_out, c_in, 3, 3], &mut rng);
                let b: Vec<f64> = (0..c_out).map(|_| rng.random_range(-0.5..0.5)).collect();
                let z = random(&[c_out, 4, 4], &mut rng);
                let fft = reconstruct_conv(&k, &b, &z, &a).unwrap();

                let m = circulant_matrix(&k, 6, 6);
                let mut padded = vec![0.0; c_out * 36];
                for n in 0..c_out {
                    for i in 0..4 {
                        for j in 0..4 {
                            padded[n * 36 + (i + 2) * 6 + j + 2] = z.data()[n * 16 + i * 4 + j] - b[n];
                        }
                    }
                }
                let (oracle, branch) = reconstruct_linear(&m, &vec![0.0; c_out * 36], &padded, a.data()).unwrap();
                assert_eq!(branch, fft.branch);
                for (p, q) in fft.input.data().iter().zip(&oracle) {
                    assert!((p - q).abs() <= 1e-6, "{c_in}→{c_out}: {p} vs {q}");
                }
            }
        }
    }

    #[test]
    fn singular_frequency_is_reported() {
        // constant kernel: the spectrum of a 2×2 box vanishes at (0, 2) on a 4×4 map
        let k = Tensor::full(&[1, 1, 2, 2], 1.0);
        let a = Tensor::zeros(&[1, 4, 4]);
        let z = Tensor::full(&[1, 3, 3], 1.0);
        assert!(matches!(
            reconstruct_conv(&k, &[0.0], &z, &a),
            Err(Error::RankDeficientFrequency { .. })
        ));
    }
}
