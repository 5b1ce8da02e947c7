use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use super::stats::mean;
use crate::error::{Error, Result};
use crate::models::Codec;
use crate::sampler::StepTrace;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Unnormalised 2-D DFT of a real `h x w` plane, row-major.
pub fn fft2(plane: &[f64], h: usize, w: usize) -> Vec<Complex<f64>> {
    let mut buf: Vec<Complex<f64>> = plane.iter().map(|&v| Complex::new(v, 0.0)).collect();
    transform(&mut buf, h, w, false);
    buf
}

fn transform(buf: &mut [Complex<f64>], h: usize, w: usize, inverse: bool) {
    let mut planner = FftPlanner::<f64>::new();
    let (row, col) = if inverse {
        (planner.plan_fft_inverse(w), planner.plan_fft_inverse(h))
    } else {
        (planner.plan_fft_forward(w), planner.plan_fft_forward(h))
    };
    row.process(buf);
    let mut column = vec![Complex::new(0.0, 0.0); h];
    for x in 0..w {
        for y in 0..h {
            column[y] = buf[y * w + x];
        }
        col.process(&mut column);
        for y in 0..h {
            buf[y * w + x] = column[y];
        }
    }
}

/// Signed frequency of bin `k` out of `n`, normalised so that Nyquist is 1.
fn norm_freq(k: usize, n: usize) -> f64 {
    let f = if k <= (n - 1) / 2 { k as f64 } else { k as f64 - n as f64 };
    f / (n as f64 / 2.0)
}

fn radius(ky: usize, kx: usize, h: usize, w: usize) -> f64 {
    norm_freq(ky, h).hypot(norm_freq(kx, w))
}

/// Sum of power over non-DC bins, split at normalised radius `rho`.
fn split_energy(spec: &[Complex<f64>], h: usize, w: usize, rho: f64) -> (f64, f64) {
    let (mut low, mut high) = (0.0, 0.0);
    for ky in 0..h {
        for kx in 0..w {
            if ky == 0 && kx == 0 {
                continue;
            }
            let e = spec[ky * w + kx].norm_sqr();
            if radius(ky, kx, h, w) > rho {
                high += e;
            } else {
                low += e;
            }
        }
    }
    (low, high)
}

fn planes<T: Scalar>(x: &Tensor<T>) -> Result<(usize, usize, usize, usize, Vec<f64>)> {
    let (n, c, h, w) = x.dims4()?;
    Ok((n, c, h, w, x.data().iter().map(|v| v.as_f64()).collect()))
}

/// Fraction of non-DC spectral energy at normalised radius above `rho`,
/// summed over channels, per image. Constant images give 0.
pub fn hf_energy_ratio<T: Scalar>(x: &Tensor<T>, rho: f64) -> Result<Vec<f64>> {
    if !(rho > 0.0 && rho < 1.0) {
        return Err(Error::Config(format!("rho must lie in (0, 1), got {rho}")));
    }
    let (n, c, h, w, d) = planes(x)?;
    let hw = h * w;
    Ok((0..n)
        .map(|i| {
            let (mut low, mut high) = (0.0, 0.0);
            for ch in 0..c {
                let off = (i * c + ch) * hw;
                let (l, hi) = split_energy(&fft2(&d[off..off + hw], h, w), h, w, rho);
                low += l;
                high += hi;
            }
            let total = low + high;
            if total <= f64::MIN_POSITIVE {
                0.0
            } else {
                high / total
            }
        })
        .collect())
}

/// Ideal circular low-pass: keep bins with normalised radius `<= frac`.
pub fn lowpass<T: Scalar>(x: &Tensor<T>, frac: f64) -> Result<Tensor<T>> {
    let (n, c, h, w, d) = planes(x)?;
    let hw = h * w;
    let mut out = Vec::with_capacity(n * c * hw);
    for p in d.chunks(hw) {
        let mut spec = fft2(p, h, w);
        for ky in 0..h {
            for kx in 0..w {
                if radius(ky, kx, h, w) > frac {
                    spec[ky * w + kx] = Complex::new(0.0, 0.0);
                }
            }
        }
        transform(&mut spec, h, w, true);
        out.extend(spec.iter().map(|z| T::lit(z.re / hw as f64)));
    }
    Tensor::new(x.shape(), out)
}

/// Centred `ln(1 + |F|)` of the channel-mean plane, shape `(n, 1, h, w)`.
pub fn log_spectrum<T: Scalar>(x: &Tensor<T>) -> Result<Tensor<f64>> {
    let (n, c, h, w, d) = planes(x)?;
    let hw = h * w;
    let mut out = vec![0.0; n * hw];
    for i in 0..n {
        let mut plane = vec![0.0; hw];
        for ch in 0..c {
            let off = (i * c + ch) * hw;
            plane.iter_mut().zip(&d[off..off + hw]).for_each(|(a, &b)| *a += b / c as f64);
        }
        let spec = fft2(&plane, h, w);
        for ky in 0..h {
            for kx in 0..w {
                let (sy, sx) = ((ky + h / 2) % h, (kx + w / 2) % w);
                out[i * hw + sy * w + sx] = spec[ky * w + kx].norm().ln_1p();
            }
        }
    }
    Tensor::new(&[n, 1, h, w], out)
}

/// Where the spectra of a trace are measured.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnalysisDomain {
    /// Decoded `x0_hat` images.
    #[default]
    Pixels,
    /// Raw `x0_hat` latents.
    Latent,
}

/// Per-step spectral statistics of a teacher trace.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SpectrumReport {
    pub domain: AnalysisDomain,
    pub rho: f64,
    pub lowpass_frac: f64,
    /// Threshold used for the low-pass trajectory: `rho * lowpass_frac`,
    /// the same relative position inside the retained band.
    pub lowpass_rho: f64,
    /// Timesteps in trace order (`T` down to 1).
    pub steps: Vec<usize>,
    /// Mean HF-energy ratio of the predictions per step.
    pub hf_ratio: Vec<f64>,
    /// `[step][image]`.
    pub hf_ratio_per_image: Vec<Vec<f64>>,
    /// Mean HF-energy ratio of the low-pass components at `lowpass_rho`.
    pub lowpass_hf_ratio: Vec<f64>,
    /// Mean HF-energy ratio of the low-pass components at `rho`.
    pub lowpass_hf_ratio_same_rho: Vec<f64>,
    #[serde(skip)]
    pub spectra: Vec<Tensor<f64>>,
    /// `spectra[s + 1] - spectra[s]`.
    #[serde(skip)]
    pub diff_maps: Vec<Tensor<f64>>,
    #[serde(skip)]
    pub lowpass: Vec<Tensor<f64>>,
}

impl SpectrumReport {
    /// Step progress `T - t` for each entry.
    pub fn progress(&self) -> Vec<f64> {
        let big_t = self.steps.first().copied().unwrap_or(0);
        self.steps.iter().map(|&t| (big_t - t) as f64).collect()
    }
}

pub fn analyze_steps<T: Scalar>(
    trace: &StepTrace<T>,
    codec: &Codec<T>,
    rho: f64,
    lowpass_frac: f64,
    domain: AnalysisDomain,
) -> Result<SpectrumReport> {
    if trace.steps.is_empty() {
        return Err(Error::Config("cannot analyse an empty trace".into()));
    }
    if !(lowpass_frac > 0.0 && lowpass_frac < 1.0) {
        return Err(Error::Config(format!("lowpass_frac must lie in (0, 1), got {lowpass_frac}")));
    }
    let lowpass_rho = rho * lowpass_frac;
    let mut rep = SpectrumReport {
        domain,
        rho,
        lowpass_frac,
        lowpass_rho,
        steps: Vec::new(),
        hf_ratio: Vec::new(),
        hf_ratio_per_image: Vec::new(),
        lowpass_hf_ratio: Vec::new(),
        lowpass_hf_ratio_same_rho: Vec::new(),
        spectra: Vec::new(),
        diff_maps: Vec::new(),
        lowpass: Vec::new(),
    };
    for st in &trace.steps {
        let x: Tensor<f64> = match (domain, &st.decoded) {
            (AnalysisDomain::Pixels, Some(d)) => d.cast(),
            (AnalysisDomain::Pixels, None) => codec.decode(&st.x0_hat)?.cast(),
            (AnalysisDomain::Latent, _) => st.x0_hat.cast(),
        };
        let hf = hf_energy_ratio(&x, rho)?;
        let lp = lowpass(&x, lowpass_frac)?;
        rep.steps.push(st.t);
        rep.hf_ratio.push(mean(&hf));
        rep.hf_ratio_per_image.push(hf);
        rep.lowpass_hf_ratio.push(mean(&hf_energy_ratio(&lp, lowpass_rho)?));
        rep.lowpass_hf_ratio_same_rho.push(mean(&hf_energy_ratio(&lp, rho)?));
        let spec = log_spectrum(&x)?;
        if let Some(prev) = rep.spectra.last() {
            rep.diff_maps.push(spec.sub(prev)?);
        }
        rep.spectra.push(spec);
        rep.lowpass.push(lp);
    }
    Ok(rep)
}
