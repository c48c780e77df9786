//! Discrete Fourier transforms and the magnitude/phase spectrum view.
//!
//! The transform is preprocessing: it runs once per series before training
//! and no gradient flows through it. `dft_naive` is the O(N^2) reference the
//! fast path is tested against. Arbitrary lengths go through Bluestein's
//! algorithm so 3000- and 5000-sample records work without padding.

use std::f64::consts::PI;

use crate::error::{CrtError, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct ComplexSeq {
    pub re: Vec<f64>,
    pub im: Vec<f64>,
}

impl ComplexSeq {
    pub fn zeros(n: usize) -> Self {
        ComplexSeq { re: vec![0.0; n], im: vec![0.0; n] }
    }

    pub fn from_real(x: &[f64]) -> Self {
        ComplexSeq { re: x.to_vec(), im: vec![0.0; x.len()] }
    }

    pub fn len(&self) -> usize {
        self.re.len()
    }

    pub fn is_empty(&self) -> bool {
        self.re.is_empty()
    }
}

/// Magnitude and phase per bin for one channel. Phase lies in (-pi, pi].
#[derive(Clone, Debug, PartialEq)]
pub struct SpectralPair {
    pub magnitude: Vec<f64>,
    pub phase: Vec<f64>,
}

impl SpectralPair {
    pub fn len(&self) -> usize {
        self.magnitude.len()
    }

    pub fn is_empty(&self) -> bool {
        self.magnitude.is_empty()
    }
}

/// Reference DFT: F[k] = sum_n t[n] (cos(2kn pi/N) - i sin(2kn pi/N)).
pub fn dft_naive(t: &[f64]) -> Result<ComplexSeq> {
    if t.is_empty() {
        return Err(CrtError::InvalidArgument { op: "dft_naive", reason: "empty input".into() });
    }
    let n = t.len();
    let mut out = ComplexSeq::zeros(n);
    for k in 0..n {
        let mut re = 0.0;
        let mut im = 0.0;
        for (idx, &x) in t.iter().enumerate() {
            // angle reduced mod 2N to keep large products accurate
            let ang = 2.0 * PI * ((k * idx) % n) as f64 / n as f64;
            re += x * ang.cos();
            im -= x * ang.sin();
        }
        out.re[k] = re;
        out.im[k] = im;
    }
    Ok(out)
}

/// Fast transform of a real series; matches `dft_naive` within 1e-6
/// (1e-9 for power-of-two lengths).
pub fn fft(t: &[f64]) -> Result<ComplexSeq> {
    if t.is_empty() {
        return Err(CrtError::InvalidArgument { op: "fft", reason: "empty input".into() });
    }
    fft_complex(&ComplexSeq::from_real(t))
}

pub fn fft_complex(x: &ComplexSeq) -> Result<ComplexSeq> {
    let n = x.len();
    if n == 0 {
        return Err(CrtError::InvalidArgument { op: "fft", reason: "empty input".into() });
    }
    if n.is_power_of_two() {
        let mut out = x.clone();
        fft_pow2(&mut out.re, &mut out.im, false);
        Ok(out)
    } else {
        Ok(bluestein(x))
    }
}

pub fn ifft(x: &ComplexSeq) -> Result<ComplexSeq> {
    // conj -> forward -> conj, then scale by 1/N
    let n = x.len();
    let conj = ComplexSeq { re: x.re.clone(), im: x.im.iter().map(|v| -v).collect() };
    let mut f = fft_complex(&conj)?;
    let scale = 1.0 / n as f64;
    for v in f.re.iter_mut() {
        *v *= scale;
    }
    for v in f.im.iter_mut() {
        *v *= -scale;
    }
    Ok(f)
}

/// In-place radix-2 decimation-in-time transform; length must be a power of two.
fn fft_pow2(re: &mut [f64], im: &mut [f64], invert: bool) {
    let n = re.len();
    debug_assert!(n.is_power_of_two());
    // bit-reversal permutation
    let mut j = 0usize;
    for i in 1..n {
        let mut bit = n >> 1;
        while j & bit != 0 {
            j ^= bit;
            bit >>= 1;
        }
        j |= bit;
        if i < j {
            re.swap(i, j);
            im.swap(i, j);
        }
    }
    let sign = if invert { 2.0 * PI } else { -2.0 * PI };
    let mut len = 2;
    while len <= n {
        let ang = sign / len as f64;
        for start in (0..n).step_by(len) {
            for k in 0..len / 2 {
                // direct sincos per butterfly keeps twiddle error flat in N
                let (s, c) = (ang * k as f64).sin_cos();
                let (ur, ui) = (re[start + k], im[start + k]);
                let (vr, vi) = (re[start + k + len / 2], im[start + k + len / 2]);
                let (tr, ti) = (vr * c - vi * s, vr * s + vi * c);
                re[start + k] = ur + tr;
                im[start + k] = ui + ti;
                re[start + k + len / 2] = ur - tr;
                im[start + k + len / 2] = ui - ti;
            }
        }
        len <<= 1;
    }
}

/// Chirp-z transform for arbitrary N through one power-of-two convolution.
fn bluestein(x: &ComplexSeq) -> ComplexSeq {
    let n = x.len();
    let m = (2 * n - 1).next_power_of_two();
    // chirp(k) = exp(-i pi k^2 / n), exponent reduced mod 2n exactly
    let chirp = |k: usize| -> (f64, f64) {
        let e = (k as u64 * k as u64) % (2 * n as u64);
        let ang = PI * e as f64 / n as f64;
        (ang.cos(), -ang.sin())
    };
    let mut ar = vec![0.0; m];
    let mut ai = vec![0.0; m];
    for k in 0..n {
        let (cr, ci) = chirp(k);
        ar[k] = x.re[k] * cr - x.im[k] * ci;
        ai[k] = x.re[k] * ci + x.im[k] * cr;
    }
    let mut br = vec![0.0; m];
    let mut bi = vec![0.0; m];
    br[0] = 1.0;
    for k in 1..n {
        let (cr, ci) = chirp(k);
        // conjugate chirp, mirrored into the tail for circular convolution
        br[k] = cr;
        bi[k] = -ci;
        br[m - k] = cr;
        bi[m - k] = -ci;
    }
    fft_pow2(&mut ar, &mut ai, false);
    fft_pow2(&mut br, &mut bi, false);
    for k in 0..m {
        let (r, i) = (ar[k] * br[k] - ai[k] * bi[k], ar[k] * bi[k] + ai[k] * br[k]);
        ar[k] = r;
        ai[k] = i;
    }
    fft_pow2(&mut ar, &mut ai, true);
    let scale = 1.0 / m as f64;
    let mut out = ComplexSeq::zeros(n);
    for k in 0..n {
        let (cr, ci) = chirp(k);
        let (r, i) = (ar[k] * scale, ai[k] * scale);
        out.re[k] = r * cr - i * ci;
        out.im[k] = r * ci + i * cr;
    }
    out
}

/// Phase of z = a + bi: arctan(b/a) shifted into (-pi, pi] by quadrant,
/// sign(b)*pi/2 on the imaginary axis, and 0 at the origin.
pub fn phase_of(a: f64, b: f64) -> f64 {
    if a > 0.0 {
        (b / a).atan()
    } else if a < 0.0 {
        if b >= 0.0 {
            (b / a).atan() + PI
        } else {
            (b / a).atan() - PI
        }
    } else if b > 0.0 {
        PI / 2.0
    } else if b < 0.0 {
        -PI / 2.0
    } else {
        0.0
    }
}

pub fn to_magnitude_phase(c: &ComplexSeq) -> SpectralPair {
    let mut magnitude = Vec::with_capacity(c.len());
    let mut phase = Vec::with_capacity(c.len());
    for (&a, &b) in c.re.iter().zip(&c.im) {
        magnitude.push((a * a + b * b).sqrt());
        phase.push(phase_of(a, b));
    }
    SpectralPair { magnitude, phase }
}

/// Inverse of `to_magnitude_phase`: a = m cos(phi), b = m sin(phi).
pub fn restore_complex(pair: &SpectralPair) -> ComplexSeq {
    let mut out = ComplexSeq::zeros(pair.len());
    for (k, (&m, &p)) in pair.magnitude.iter().zip(&pair.phase).enumerate() {
        out.re[k] = m * p.cos();
        out.im[k] = m * p.sin();
    }
    out
}

/// Keeps the first L/2 bins of a full-length pair. L must be even.
pub fn half_spectrum(pair: &SpectralPair, l: usize) -> Result<SpectralPair> {
    if l % 2 != 0 {
        return Err(CrtError::InvalidArgument {
            op: "half_spectrum",
            reason: format!("series length {l} is odd; truncate the series by one sample"),
        });
    }
    if pair.len() < l {
        return Err(CrtError::InvalidArgument {
            op: "half_spectrum",
            reason: format!("{} bins given, {l} expected", pair.len()),
        });
    }
    Ok(SpectralPair {
        magnitude: pair.magnitude[..l / 2].to_vec(),
        phase: pair.phase[..l / 2].to_vec(),
    })
}

/// Rebuilds a length-L real series from the kept half spectrum: Hermitian
/// symmetry fills bins L/2+1.., DC keeps only its real part, and the discarded
/// Nyquist bin is taken as 0. Loss is bounded by the Nyquist bin's energy.
pub fn inverse_from_half(pair: &SpectralPair, l: usize) -> Result<Vec<f64>> {
    if l % 2 != 0 || pair.len() != l / 2 {
        return Err(CrtError::InvalidArgument {
            op: "inverse_from_half",
            reason: format!("{} bins for length {l} (need {})", pair.len(), l / 2),
        });
    }
    let mut full = ComplexSeq::zeros(l);
    let half = restore_complex(pair);
    full.re[0] = half.re[0];
    for k in 1..l / 2 {
        full.re[k] = half.re[k];
        full.im[k] = half.im[k];
        full.re[l - k] = half.re[k];
        full.im[l - k] = -half.im[k];
    }
    let t = ifft(&full)?;
    Ok(t.re)
}

/// Scales into [0, 1]. Zero-variance input has no min-max image.
pub fn min_max_normalize(x: &[f64]) -> Result<Vec<f64>> {
    let min = x.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !(max - min).is_finite() || max == min {
        return Err(CrtError::InvalidArgument {
            op: "min_max_normalize",
            reason: "zero-variance input".into(),
        });
    }
    Ok(x.iter().map(|v| (v - min) / (max - min)).collect())
}

#[derive(Clone, Debug)]
pub struct PhaseMagnitudeDemo {
    /// All three series are min-max normalized.
    pub original: Vec<f64>,
    pub phase_only: Vec<f64>,
    pub magnitude_only: Vec<f64>,
    pub d_phase: f64,
    pub d_mag: f64,
}

/// Restores a signal twice: once keeping only its phase spectrum (magnitude
/// flattened to the mean) and once keeping only its magnitude (phase zeroed),
/// then reports the Euclidean distance of each restoration to the original.
pub fn phase_magnitude_demo(t: &[f64]) -> Result<PhaseMagnitudeDemo> {
    let f = fft(t)?;
    let pair = to_magnitude_phase(&f);
    let mean_mag = pair.magnitude.iter().sum::<f64>() / pair.len() as f64;
    let phase_spec = SpectralPair {
        magnitude: vec![mean_mag; pair.len()],
        phase: pair.phase.clone(),
    };
    let mag_spec = SpectralPair {
        magnitude: pair.magnitude.clone(),
        phase: vec![0.0; pair.len()],
    };
    let phase_time = ifft(&restore_complex(&phase_spec))?.re;
    let mag_time = ifft(&restore_complex(&mag_spec))?.re;

    let original = min_max_normalize(t)?;
    let phase_only = min_max_normalize(&phase_time)?;
    let magnitude_only = min_max_normalize(&mag_time)?;
    let dist = |a: &[f64], b: &[f64]| {
        a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
    };
    Ok(PhaseMagnitudeDemo {
        d_phase: dist(&phase_only, &original),
        d_mag: dist(&magnitude_only, &original),
        original,
        phase_only,
        magnitude_only,
    })
}

/// Periodic spike train over a baseline wiggle: sharp localized peaks whose
/// timing lives in the phase spectrum, the waveform family the
/// phase-vs-magnitude demonstration is about.
pub fn ecg_like(len: usize, period: usize) -> Result<Vec<f64>> {
    if period < 8 || len < 2 * period {
        return Err(CrtError::InvalidArgument {
            op: "ecg_like",
            reason: format!("need period >= 8 and len >= 2*period, got len {len} period {period}"),
        });
    }
    let mut t = vec![0.0; len];
    let mut s = 0;
    while s + 2 < len {
        t[s] += 0.4;
        t[s + 1] += 1.6;
        t[s + 2] -= 0.6;
        s += period;
    }
    for (i, v) in t.iter_mut().enumerate() {
        *v += 0.15 * (2.0 * PI * i as f64 / (period as f64 / 2.0)).sin();
    }
    Ok(t)
}

/// Random periodic signal: 4–10 harmonics of a random fundamental with
/// geometrically decaying amplitudes and uniform random phases.
pub fn multi_harmonic(len: usize, seed: u64) -> Result<Vec<f64>> {
    use rand::{Rng, SeedableRng};
    if len < 32 {
        return Err(CrtError::InvalidArgument {
            op: "multi_harmonic",
            reason: format!("len {len} below 32"),
        });
    }
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let k0 = rng.gen_range(2..=6) as f64;
    let harmonics = rng.gen_range(4..=10);
    let decay: f64 = rng.gen_range(0.5..0.9);
    let mut t = vec![0.0; len];
    for h in 1..=harmonics {
        let amp = decay.powi(h as i32 - 1);
        let phi: f64 = rng.gen_range(0.0..2.0 * PI);
        for (i, v) in t.iter_mut().enumerate() {
            *v += amp * (2.0 * PI * k0 * h as f64 * i as f64 / len as f64 + phi).sin();
        }
    }
    Ok(t)
}
