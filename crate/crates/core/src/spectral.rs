//! Spectral backbone: 2-D DFTs with centered frequency indexing, cubic-spline
//! interpolation of sampled feature maps onto a continuous periodic domain,
//! centered zero-padding to a common grid, and circular correlation.
//!
//! Conventions, fixed once here and relied on everywhere else:
//! - forward DFT is unnormalized, inverse carries the 1/Λ factor;
//! - frequency grids are stored centered, k in {-floor(K/2), ..., ceil(K/2)-1};
//! - correlation conjugates the filter spectrum;
//! - interpolated spectra hold Fourier-series coefficients of the underlying
//!   periodic function, so function values on an L-point grid are Λ times the
//!   inverse DFT of the (padded) spectrum.

use std::cell::RefCell;
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::{Error, Result};

/// Relative tolerance for the conjugate-symmetry validation of real-origin spectra.
pub const SYMMETRY_TOL: f64 = 1e-10;
/// Relative bound on the imaginary residue discarded by [`idft2`].
pub const IMAG_RESIDUE_TOL: f64 = 1e-9;

/// Real-valued multi-channel grid in row-major channel-plane order.
#[derive(Debug, Clone, PartialEq)]
pub struct SpatialMap {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    /// `values[ch * height * width + row * width + col]`
    pub values: Vec<f64>,
}

impl SpatialMap {
    pub fn new(height: usize, width: usize, channels: usize, values: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 || channels == 0 {
            return Err(Error::InvalidInput("spatial map dimensions must be positive".into()));
        }
        if values.len() != height * width * channels {
            return Err(Error::ShapeMismatch(format!(
                "spatial map expects {} values, got {}",
                height * width * channels,
                values.len()
            )));
        }
        Ok(Self { height, width, channels, values })
    }

    pub fn zeros(height: usize, width: usize, channels: usize) -> Self {
        Self { height, width, channels, values: vec![0.0; height * width * channels] }
    }

    #[inline]
    pub fn at(&self, ch: usize, row: usize, col: usize) -> f64 {
        self.values[(ch * self.height + row) * self.width + col]
    }

    #[inline]
    pub fn set(&mut self, ch: usize, row: usize, col: usize, v: f64) {
        self.values[(ch * self.height + row) * self.width + col] = v;
    }

    pub fn plane(&self, ch: usize) -> &[f64] {
        let n = self.height * self.width;
        &self.values[ch * n..(ch + 1) * n]
    }

    pub fn plane_mut(&mut self, ch: usize) -> &mut [f64] {
        let n = self.height * self.width;
        &mut self.values[ch * n..(ch + 1) * n]
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

/// Complex spectrum in centered frequency order, channel-plane layout.
///
/// Array position `(r, c)` holds the coefficient for frequency
/// `(r - floor(H/2), c - floor(W/2))`.
#[derive(Debug, Clone)]
pub struct SpectralMap {
    pub freq_height: usize,
    pub freq_width: usize,
    pub channels: usize,
    pub values: Vec<Complex64>,
    /// Set when the spectrum originated from a real signal and is expected to
    /// be conjugate-symmetric under the mod-K reflection.
    pub real_origin: bool,
}

impl SpectralMap {
    pub fn new(
        freq_height: usize,
        freq_width: usize,
        channels: usize,
        values: Vec<Complex64>,
        real_origin: bool,
    ) -> Result<Self> {
        if freq_height == 0 || freq_width == 0 || channels == 0 {
            return Err(Error::InvalidInput("spectrum dimensions must be positive".into()));
        }
        if values.len() != freq_height * freq_width * channels {
            return Err(Error::ShapeMismatch(format!(
                "spectrum expects {} values, got {}",
                freq_height * freq_width * channels,
                values.len()
            )));
        }
        Ok(Self { freq_height, freq_width, channels, values, real_origin })
    }

    pub fn zeros(freq_height: usize, freq_width: usize, channels: usize) -> Self {
        Self {
            freq_height,
            freq_width,
            channels,
            values: vec![Complex64::new(0.0, 0.0); freq_height * freq_width * channels],
            real_origin: true,
        }
    }

    #[inline]
    pub fn idx(&self, ch: usize, r: usize, c: usize) -> usize {
        (ch * self.freq_height + r) * self.freq_width + c
    }

    /// Coefficient at centered frequency `(kr, kc)`.
    pub fn at_freq(&self, ch: usize, kr: isize, kc: isize) -> Complex64 {
        let r = (kr + (self.freq_height / 2) as isize) as usize;
        let c = (kc + (self.freq_width / 2) as isize) as usize;
        self.values[self.idx(ch, r, c)]
    }

    pub fn plane(&self, ch: usize) -> &[Complex64] {
        let n = self.freq_height * self.freq_width;
        &self.values[ch * n..(ch + 1) * n]
    }

    /// Centered frequency for array row `r` on an axis of length `n`.
    #[inline]
    pub fn freq_of(r: usize, n: usize) -> isize {
        r as isize - (n / 2) as isize
    }

    /// Array position of the mod-K reflection partner of centered row `r`.
    #[inline]
    fn reflect(r: usize, n: usize) -> usize {
        let half = n / 2;
        let s = (r + n - half) % n; // standard DFT index
        ((n - s) % n + half) % n
    }

    /// Largest deviation from conjugate symmetry, relative to the peak magnitude.
    pub fn symmetry_deviation(&self) -> f64 {
        let peak = self.values.iter().map(|v| v.norm()).fold(0.0_f64, f64::max);
        if peak == 0.0 {
            return 0.0;
        }
        let mut worst = 0.0_f64;
        for ch in 0..self.channels {
            for r in 0..self.freq_height {
                let rr = Self::reflect(r, self.freq_height);
                for c in 0..self.freq_width {
                    let cc = Self::reflect(c, self.freq_width);
                    let a = self.values[self.idx(ch, r, c)];
                    let b = self.values[self.idx(ch, rr, cc)];
                    worst = worst.max((a - b.conj()).norm());
                }
            }
        }
        worst / peak
    }
}

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

fn plan(len: usize, inverse: bool) -> Arc<dyn Fft<f64>> {
    PLANNER.with(|p| {
        let mut p = p.borrow_mut();
        if inverse {
            p.plan_fft_inverse(len)
        } else {
            p.plan_fft_forward(len)
        }
    })
}

/// In-place 2-D FFT over a row-major `h x w` buffer (rows, then columns).
fn fft_2d(buf: &mut [Complex64], h: usize, w: usize, inverse: bool) {
    let row_fft = plan(w, inverse);
    for row in buf.chunks_exact_mut(w) {
        row_fft.process(row);
    }
    let col_fft = plan(h, inverse);
    let mut col = vec![Complex64::new(0.0, 0.0); h];
    for c in 0..w {
        for r in 0..h {
            col[r] = buf[r * w + c];
        }
        col_fft.process(&mut col);
        for r in 0..h {
            buf[r * w + c] = col[r];
        }
    }
}

/// Standard DFT index for centered array row `r` on an axis of length `n`.
#[inline]
fn centered_to_standard(r: usize, n: usize) -> usize {
    (r + n - n / 2) % n
}

/// Unnormalized forward 2-D DFT of each channel, returned in centered order.
pub fn dft2(map: &SpatialMap) -> Result<SpectralMap> {
    if !map.is_finite() {
        return Err(Error::NonFinite("dft2 input"));
    }
    let (h, w) = (map.height, map.width);
    let mut out = SpectralMap::zeros(h, w, map.channels);
    let mut buf = vec![Complex64::new(0.0, 0.0); h * w];
    for ch in 0..map.channels {
        let plane = map.plane(ch);
        for (b, &v) in buf.iter_mut().zip(plane.iter()) {
            *b = Complex64::new(v, 0.0);
        }
        fft_2d(&mut buf, h, w, false);
        for r in 0..h {
            let sr = centered_to_standard(r, h);
            for c in 0..w {
                let sc = centered_to_standard(c, w);
                let i = out.idx(ch, r, c);
                out.values[i] = buf[sr * w + sc];
            }
        }
    }
    out.real_origin = true;
    Ok(out)
}

/// Inverse 2-D DFT with the 1/Λ factor; exact inverse of [`dft2`].
///
/// Spectra flagged real-origin are validated for conjugate symmetry and must
/// leave an imaginary residue below [`IMAG_RESIDUE_TOL`] (relative), which is
/// then discarded.
pub fn idft2(spec: &SpectralMap) -> Result<SpatialMap> {
    if spec.real_origin {
        let dev = spec.symmetry_deviation();
        if dev > SYMMETRY_TOL {
            return Err(Error::AsymmetricSpectrum { deviation: dev });
        }
    }
    let complex = idft2_complex(spec);
    let (h, w) = (spec.freq_height, spec.freq_width);
    if spec.real_origin {
        let peak = complex.iter().map(|v| v.norm()).fold(0.0_f64, f64::max);
        let residue = complex.iter().map(|v| v.im.abs()).fold(0.0_f64, f64::max);
        if peak > 0.0 && residue > IMAG_RESIDUE_TOL * peak.max(1.0) {
            return Err(Error::NonFinite("idft2: imaginary residue above tolerance"));
        }
    }
    let mut out = SpatialMap::zeros(h, w, spec.channels);
    for (o, v) in out.values.iter_mut().zip(complex.iter()) {
        *o = v.re;
    }
    Ok(out)
}

/// Inverse 2-D DFT returning the full complex grid, without symmetry checks.
pub fn idft2_complex(spec: &SpectralMap) -> Vec<Complex64> {
    let (h, w) = (spec.freq_height, spec.freq_width);
    let scale = 1.0 / (h * w) as f64;
    let mut out = vec![Complex64::new(0.0, 0.0); h * w * spec.channels];
    let mut buf = vec![Complex64::new(0.0, 0.0); h * w];
    for ch in 0..spec.channels {
        for b in buf.iter_mut() {
            *b = Complex64::new(0.0, 0.0);
        }
        for r in 0..h {
            let sr = centered_to_standard(r, h);
            for c in 0..w {
                let sc = centered_to_standard(c, w);
                buf[sr * w + sc] = spec.values[spec.idx(ch, r, c)];
            }
        }
        fft_2d(&mut buf, h, w, true);
        for (o, b) in out[ch * h * w..(ch + 1) * h * w].iter_mut().zip(buf.iter()) {
            *o = b * scale;
        }
    }
    out
}

/// Values of the periodic function represented by `spec`, sampled on an
/// `out_h x out_w` grid: Λ times the inverse DFT of the centered zero-padding.
///
/// Takes the real part; for conjugate-symmetric spectra the imaginary part is
/// floating-point noise.
pub fn synthesize_values(spec: &SpectralMap, out_h: usize, out_w: usize) -> Result<SpatialMap> {
    let padded = pad_spectrum(spec, out_h, out_w)?;
    let complex = idft2_complex(&padded);
    let scale = (out_h * out_w) as f64;
    let mut out = SpatialMap::zeros(out_h, out_w, spec.channels);
    for (o, v) in out.values.iter_mut().zip(complex.iter()) {
        *o = v.re * scale;
    }
    Ok(out)
}

/// Interpolation kernel for one axis: Fourier coefficients of the shifted
/// cubic-spline basis, in centered order.
#[derive(Debug, Clone)]
pub struct InterpolationKernel {
    /// Period of the underlying continuous axis (bookkeeping only; the
    /// coefficients are period-invariant).
    pub period: f64,
    /// Native sample count N along the axis.
    pub samples: usize,
    /// `coefficients[r]` is b̂[k] for centered k = r - floor(N/2).
    pub coefficients: Vec<Complex64>,
}

#[inline]
fn sinc(x: f64) -> f64 {
    if x.abs() < 1e-12 {
        1.0
    } else {
        let px = std::f64::consts::PI * x;
        px.sin() / px
    }
}

/// Fourier coefficients of the cubic B-spline interpolation basis for an axis
/// with `samples` points: b̂[k] = (1/N) · exp(-iπk/N) · sinc⁴(k/N).
///
/// The phase factor is the half-sample shift that centers each basis bump on
/// its sample cell.
pub fn spline_kernel(samples: usize, period: f64) -> Result<InterpolationKernel> {
    if samples < 2 {
        return Err(Error::InvalidInput(format!("spline kernel needs at least 2 samples, got {samples}")));
    }
    if !(period > 0.0) {
        return Err(Error::InvalidInput("spline kernel period must be positive".into()));
    }
    let n = samples as f64;
    let half = (samples / 2) as isize;
    let coefficients = (0..samples)
        .map(|r| {
            let k = r as isize - half;
            let f = k as f64 / n;
            let mag = sinc(f).powi(4) / n;
            let phase = -std::f64::consts::PI * k as f64 / n;
            Complex64::from_polar(mag, phase)
        })
        .collect();
    Ok(InterpolationKernel { period, samples, coefficients })
}

/// All-ones kernel that makes [`interpolate`] degenerate to a plain [`dft2`].
pub fn identity_kernel(samples: usize) -> InterpolationKernel {
    InterpolationKernel {
        period: 1.0,
        samples,
        coefficients: vec![Complex64::new(1.0, 0.0); samples],
    }
}

/// Projects a sampled map onto the continuous domain: per channel,
/// Φ̂[k] = DFT(φ)[k] · b̂_row[k_r] · b̂_col[k_c], zero-padded to the output grid.
///
/// The returned spectrum holds Fourier-series coefficients of the interpolated
/// periodic function.
pub fn interpolate(
    map: &SpatialMap,
    row_kernel: &InterpolationKernel,
    col_kernel: &InterpolationKernel,
    out_h: usize,
    out_w: usize,
) -> Result<SpectralMap> {
    if row_kernel.samples != map.height || col_kernel.samples != map.width {
        return Err(Error::ShapeMismatch(format!(
            "kernels built for {}x{}, map is {}x{}",
            row_kernel.samples, col_kernel.samples, map.height, map.width
        )));
    }
    if out_h < map.height || out_w < map.width {
        return Err(Error::InvalidInput(format!(
            "output grid {}x{} smaller than native resolution {}x{}",
            out_h, out_w, map.height, map.width
        )));
    }
    let mut spec = dft2(map)?;
    for ch in 0..spec.channels {
        for r in 0..spec.freq_height {
            let br = row_kernel.coefficients[r];
            for c in 0..spec.freq_width {
                let i = spec.idx(ch, r, c);
                spec.values[i] *= br * col_kernel.coefficients[c];
            }
        }
    }
    // An even native axis keeps an unpaired band-edge coefficient whose
    // half-sample phase breaks strict conjugate symmetry once padded.
    let symmetric = map.height % 2 == 1 && map.width % 2 == 1;
    let mut out = pad_spectrum(&spec, out_h, out_w)?;
    out.real_origin = symmetric || (out_h == map.height && out_w == map.width);
    Ok(out)
}

/// Centered zero-padding of a spectrum onto a larger frequency grid. Retained
/// coefficients are copied untouched; the real-origin flag is preserved.
pub fn pad_spectrum(spec: &SpectralMap, out_h: usize, out_w: usize) -> Result<SpectralMap> {
    if out_h < spec.freq_height || out_w < spec.freq_width {
        return Err(Error::InvalidInput(format!(
            "cannot pad {}x{} spectrum down to {}x{}",
            spec.freq_height, spec.freq_width, out_h, out_w
        )));
    }
    if out_h == spec.freq_height && out_w == spec.freq_width {
        return Ok(spec.clone());
    }
    let mut out = SpectralMap::zeros(out_h, out_w, spec.channels);
    let dr = out_h / 2 - spec.freq_height / 2;
    let dc = out_w / 2 - spec.freq_width / 2;
    for ch in 0..spec.channels {
        for r in 0..spec.freq_height {
            for c in 0..spec.freq_width {
                let i = out.idx(ch, r + dr, c + dc);
                out.values[i] = spec.values[spec.idx(ch, r, c)];
            }
        }
    }
    out.real_origin = spec.real_origin;
    Ok(out)
}

/// Channel-summed circular correlation in the frequency domain:
/// Ŝ[k] = Σ_d conj(ŵ_d[k]) · Φ̂_d[k]. Single-channel output.
pub fn circular_correlate(filter: &SpectralMap, feat: &SpectralMap) -> Result<SpectralMap> {
    if filter.freq_height != feat.freq_height
        || filter.freq_width != feat.freq_width
        || filter.channels != feat.channels
    {
        return Err(Error::ShapeMismatch(format!(
            "correlate: filter {}x{}x{} vs features {}x{}x{}",
            filter.freq_height, filter.freq_width, filter.channels,
            feat.freq_height, feat.freq_width, feat.channels
        )));
    }
    let n = filter.freq_height * filter.freq_width;
    let mut out = SpectralMap::zeros(filter.freq_height, filter.freq_width, 1);
    for ch in 0..filter.channels {
        let f = &filter.values[ch * n..(ch + 1) * n];
        let g = &feat.values[ch * n..(ch + 1) * n];
        for i in 0..n {
            out.values[i] += f[i].conj() * g[i];
        }
    }
    out.real_origin = filter.real_origin && feat.real_origin;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_map(rng: &mut ChaCha8Rng, h: usize, w: usize, ch: usize) -> SpatialMap {
        let values = (0..h * w * ch).map(|_| rng.gen_range(-1.0..1.0)).collect();
        SpatialMap::new(h, w, ch, values).unwrap()
    }

    /// Direct-summation DFT, centered output. O(N⁴) oracle.
    fn dft_direct(map: &SpatialMap) -> Vec<Complex64> {
        let (h, w) = (map.height, map.width);
        let mut out = vec![Complex64::new(0.0, 0.0); h * w * map.channels];
        for ch in 0..map.channels {
            for r in 0..h {
                let kr = r as isize - (h / 2) as isize;
                for c in 0..w {
                    let kc = c as isize - (w / 2) as isize;
                    let mut acc = Complex64::new(0.0, 0.0);
                    for y in 0..h {
                        for x in 0..w {
                            let ang = -2.0 * std::f64::consts::PI
                                * (kr as f64 * y as f64 / h as f64
                                    + kc as f64 * x as f64 / w as f64);
                            acc += map.at(ch, y, x) * Complex64::from_polar(1.0, ang);
                        }
                    }
                    out[(ch * h + r) * w + c] = acc;
                }
            }
        }
        out
    }

    /// Brute-force spatial circular correlation summed over channels.
    fn correlate_direct(filter: &SpatialMap, feat: &SpatialMap) -> Vec<f64> {
        let (h, w) = (filter.height, filter.width);
        let mut out = vec![0.0; h * w];
        for pr in 0..h {
            for pc in 0..w {
                let mut acc = 0.0;
                for ch in 0..filter.channels {
                    for r in 0..h {
                        for c in 0..w {
                            acc += filter.at(ch, r, c)
                                * feat.at(ch, (r + pr) % h, (c + pc) % w);
                        }
                    }
                }
                out[pr * w + pc] = acc;
            }
        }
        out
    }

    fn max_abs_diff(a: &[Complex64], b: &[Complex64]) -> f64 {
        a.iter().zip(b.iter()).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max)
    }

    #[test]
    fn impulse_has_flat_spectrum() {
        let mut map = SpatialMap::zeros(5, 7, 1);
        map.set(0, 0, 0, 1.0);
        let spec = dft2(&map).unwrap();
        for v in &spec.values {
            assert!((v - Complex64::new(1.0, 0.0)).norm() < 1e-12);
        }
    }

    #[test]
    fn constant_map_concentrates_at_dc() {
        let n = 6;
        let c = 2.5;
        let map = SpatialMap::new(n, n, 1, vec![c; n * n]).unwrap();
        let spec = dft2(&map).unwrap();
        for r in 0..n {
            for c_idx in 0..n {
                let v = spec.values[r * n + c_idx];
                let kr = SpectralMap::freq_of(r, n);
                let kc = SpectralMap::freq_of(c_idx, n);
                if kr == 0 && kc == 0 {
                    assert!((v.re - c * (n * n) as f64).abs() < 1e-9);
                    assert!(v.im.abs() < 1e-9);
                } else {
                    assert!(v.norm() < 1e-9, "leakage at ({kr},{kc}): {v}");
                }
            }
        }
    }

    #[test]
    fn dft2_matches_direct_summation() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for &(h, w, ch) in &[(4usize, 4usize, 1usize), (5, 3, 2), (8, 8, 3), (7, 9, 1)] {
            let map = random_map(&mut rng, h, w, ch);
            let spec = dft2(&map).unwrap();
            let oracle = dft_direct(&map);
            let peak = oracle.iter().map(|v| v.norm()).fold(0.0, f64::max);
            assert!(max_abs_diff(&spec.values, &oracle) < 1e-10 * peak.max(1.0));
        }
    }

    #[test]
    fn round_trip_recovers_input() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for &(h, w, ch) in &[(4usize, 4usize, 1usize), (9, 5, 2), (12, 12, 3)] {
            let map = random_map(&mut rng, h, w, ch);
            let back = idft2(&dft2(&map).unwrap()).unwrap();
            let err = map
                .values
                .iter()
                .zip(back.values.iter())
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            assert!(err < 1e-10, "round trip error {err}");
        }
    }

    #[test]
    fn flat_spectrum_synthesizes_impulse() {
        let n = 4;
        let spec = SpectralMap::new(
            n,
            n,
            1,
            vec![Complex64::new(1.0, 0.0); n * n],
            true,
        )
        .unwrap();
        let map = idft2(&spec).unwrap();
        assert!((map.at(0, 0, 0) - 1.0).abs() < 1e-12);
        for r in 0..n {
            for c in 0..n {
                if r != 0 || c != 0 {
                    assert!(map.at(0, r, c).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn asymmetric_real_origin_spectrum_rejected() {
        let n = 4;
        let mut values = vec![Complex64::new(0.0, 0.0); n * n];
        values[n + 1] = Complex64::new(0.0, 1.0); // no conjugate partner
        let spec = SpectralMap::new(n, n, 1, values, true).unwrap();
        assert!(matches!(idft2(&spec), Err(Error::AsymmetricSpectrum { .. })));
    }

    #[test]
    fn non_finite_input_rejected() {
        let mut map = SpatialMap::zeros(3, 3, 1);
        map.set(0, 1, 1, f64::NAN);
        assert!(matches!(dft2(&map), Err(Error::NonFinite(_))));
    }

    #[test]
    fn spline_kernel_dc_is_one_over_n() {
        for n in [4usize, 7, 16] {
            let k = spline_kernel(n, 1.0).unwrap();
            let dc = k.coefficients[n / 2];
            assert!((dc.re - 1.0 / n as f64).abs() < 1e-14);
            assert!(dc.im.abs() < 1e-14);
        }
    }

    #[test]
    fn spline_kernel_magnitude_decays() {
        let k = spline_kernel(16, 1.0).unwrap();
        let mags: Vec<f64> = (0..=8)
            .map(|i| k.coefficients[(8 + i).min(15)].norm())
            .collect();
        for w in mags.windows(2) {
            assert!(w[1] <= w[0] + 1e-15, "magnitudes should not increase: {mags:?}");
        }
    }

    #[test]
    fn spline_kernel_band_edge_phase() {
        // N = 8, k = 4: phase factor exp(-iπ/2) makes the coefficient purely
        // negative-imaginary with magnitude sinc⁴(1/2)/8.
        let k = spline_kernel(8, 1.0).unwrap();
        let v = k.coefficients[0]; // centered index 0 holds k = -4; |b̂| even in k
        let expected_mag = (2.0 / std::f64::consts::PI).powi(4) / 8.0;
        assert!((v.norm() - expected_mag).abs() < 1e-12);
        // the k = +4 value via formula: exp(-iπ·4/8) = -i
        let direct = Complex64::from_polar(expected_mag, -std::f64::consts::FRAC_PI_2);
        assert!((direct.re).abs() < 1e-12);
        assert!((direct.im + expected_mag).abs() < 1e-12);
    }

    #[test]
    fn spline_kernel_rejects_degenerate_axis() {
        assert!(spline_kernel(1, 1.0).is_err());
        assert!(spline_kernel(8, 0.0).is_err());
    }

    #[test]
    fn interpolate_zero_map_is_zero() {
        let map = SpatialMap::zeros(6, 6, 2);
        let k = spline_kernel(6, 1.0).unwrap();
        let spec = interpolate(&map, &k, &k, 12, 12).unwrap();
        assert!(spec.values.iter().all(|v| v.norm() == 0.0));
    }

    #[test]
    fn interpolate_with_identity_kernel_is_dft2() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let map = random_map(&mut rng, 6, 6, 2);
        let k = identity_kernel(6);
        let spec = interpolate(&map, &k, &k, 6, 6).unwrap();
        let reference = dft2(&map).unwrap();
        assert!(max_abs_diff(&spec.values, &reference.values) < 1e-10);
    }

    #[test]
    fn interpolate_rejects_shrinking_grid() {
        let map = SpatialMap::zeros(6, 6, 1);
        let k = spline_kernel(6, 1.0).unwrap();
        assert!(interpolate(&map, &k, &k, 4, 6).is_err());
    }

    /// Direct evaluation of the interpolation sum Σ_n φ[n]·b(t - n/N) at the
    /// output grid points, with b given by direct summation of its retained
    /// Fourier series. Independent of the FFT/padding code paths.
    fn interpolate_direct(
        map: &SpatialMap,
        ky: &InterpolationKernel,
        kx: &InterpolationKernel,
        out: usize,
    ) -> Vec<Complex64> {
        let n_h = map.height;
        let n_w = map.width;
        let spline_1d = |kernel: &InterpolationKernel, n: usize, t: f64| -> Complex64 {
            let mut acc = Complex64::new(0.0, 0.0);
            for (r, b) in kernel.coefficients.iter().enumerate() {
                let k = r as isize - (n / 2) as isize;
                acc += b * Complex64::from_polar(1.0, 2.0 * std::f64::consts::PI * k as f64 * t);
            }
            acc
        };
        let mut outv = vec![Complex64::new(0.0, 0.0); out * out * map.channels];
        for ch in 0..map.channels {
            for j in 0..out {
                let ty = j as f64 / out as f64;
                for i in 0..out {
                    let tx = i as f64 / out as f64;
                    let mut acc = Complex64::new(0.0, 0.0);
                    for y in 0..n_h {
                        let by = spline_1d(ky, n_h, ty - y as f64 / n_h as f64);
                        for x in 0..n_w {
                            let bx = spline_1d(kx, n_w, tx - x as f64 / n_w as f64);
                            acc += map.at(ch, y, x) * by * bx;
                        }
                    }
                    outv[(ch * out + j) * out + i] = acc;
                }
            }
        }
        outv
    }

    #[test]
    fn interpolate_matches_direct_spatial_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        let map = random_map(&mut rng, 6, 6, 1);
        let k = spline_kernel(6, 1.0).unwrap();
        let spec = interpolate(&map, &k, &k, 24, 24).unwrap();
        let synth = idft2_complex(&spec);
        let scale = (24 * 24) as f64;
        let values: Vec<Complex64> = synth.iter().map(|v| v * scale).collect();
        let oracle = interpolate_direct(&map, &k, &k, 24);
        let peak = oracle.iter().map(|v| v.norm()).fold(0.0, f64::max);
        let err = max_abs_diff(&values, &oracle);
        assert!(err < 1e-8 * peak.max(1.0), "interpolation error {err}");
    }

    #[test]
    fn pad_is_identity_at_same_size() {
        let mut rng = ChaCha8Rng::seed_from_u64(51);
        let spec = dft2(&random_map(&mut rng, 5, 5, 2)).unwrap();
        let padded = pad_spectrum(&spec, 5, 5).unwrap();
        assert_eq!(max_abs_diff(&spec.values, &padded.values), 0.0);
    }

    #[test]
    fn pad_preserves_coefficients_and_energy() {
        let mut rng = ChaCha8Rng::seed_from_u64(61);
        let map = random_map(&mut rng, 4, 4, 1);
        let spec = dft2(&map).unwrap();
        let padded = pad_spectrum(&spec, 8, 8).unwrap();
        // retained coefficients untouched
        for r in 0..4 {
            for c in 0..4 {
                let kr = SpectralMap::freq_of(r, 4);
                let kc = SpectralMap::freq_of(c, 4);
                assert_eq!(spec.at_freq(0, kr, kc), padded.at_freq(0, kr, kc));
            }
        }
        assert_eq!(padded.at_freq(0, 0, 0), spec.at_freq(0, 0, 0));
        // Parseval: Λ_out Σ|v|² over the upsampled grid equals Λ_in Σ|x|²
        let fine = idft2_complex(&padded);
        let e_out: f64 = fine.iter().map(|v| v.norm_sqr()).sum::<f64>() * (8.0 * 8.0);
        let e_in: f64 = map.values.iter().map(|v| v * v).sum::<f64>() * (4.0 * 4.0);
        assert!((e_out - e_in).abs() < 1e-9 * e_in.max(1.0));
    }

    #[test]
    fn pad_rejects_shrinking() {
        let spec = SpectralMap::zeros(4, 4, 1);
        assert!(pad_spectrum(&spec, 3, 4).is_err());
    }

    #[test]
    fn padded_flat_spectrum_peaks_at_origin() {
        let n = 4;
        let spec = SpectralMap::new(
            n,
            n,
            1,
            vec![Complex64::new(1.0, 0.0); n * n],
            false,
        )
        .unwrap();
        let padded = pad_spectrum(&spec, 9, 9).unwrap();
        let synth = idft2_complex(&padded);
        let peak_idx = synth
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.re.partial_cmp(&b.1.re).unwrap())
            .unwrap()
            .0;
        assert_eq!(peak_idx, 0, "Dirichlet-style interpolation peaks at the origin");
    }

    #[test]
    fn autocorrelation_peak_is_energy() {
        let mut rng = ChaCha8Rng::seed_from_u64(71);
        let map = random_map(&mut rng, 6, 6, 1);
        let spec = dft2(&map).unwrap();
        let corr = circular_correlate(&spec, &spec).unwrap();
        let spatial = idft2(&corr).unwrap();
        let energy: f64 = map.values.iter().map(|v| v * v).sum();
        assert!((spatial.at(0, 0, 0) - energy).abs() < 1e-9 * energy.max(1.0));
        // zero shift dominates
        for v in &spatial.values {
            assert!(*v <= spatial.at(0, 0, 0) + 1e-9);
        }
    }

    #[test]
    fn zero_filter_gives_zero_scores() {
        let mut rng = ChaCha8Rng::seed_from_u64(81);
        let feat = dft2(&random_map(&mut rng, 5, 5, 3)).unwrap();
        let filt = SpectralMap::zeros(5, 5, 3);
        let corr = circular_correlate(&filt, &feat).unwrap();
        assert!(corr.values.iter().all(|v| v.norm() == 0.0));
    }

    #[test]
    fn correlate_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(91);
        for _ in 0..5 {
            let filt = random_map(&mut rng, 8, 8, 3);
            let feat = random_map(&mut rng, 8, 8, 3);
            let corr = circular_correlate(&dft2(&filt).unwrap(), &dft2(&feat).unwrap()).unwrap();
            let spatial = idft2(&corr).unwrap();
            let oracle = correlate_direct(&filt, &feat);
            let peak = oracle.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
            for (a, b) in spatial.values.iter().zip(oracle.iter()) {
                assert!((a - b).abs() < 1e-10 * peak.max(1.0));
            }
        }
    }

    #[test]
    fn correlate_rejects_mismatched_shapes() {
        let a = SpectralMap::zeros(4, 4, 2);
        let b = SpectralMap::zeros(4, 4, 3);
        assert!(circular_correlate(&a, &b).is_err());
    }

    #[test]
    fn correlate_is_linear_in_features() {
        let mut rng = ChaCha8Rng::seed_from_u64(101);
        let filt = dft2(&random_map(&mut rng, 6, 6, 2)).unwrap();
        let f1 = dft2(&random_map(&mut rng, 6, 6, 2)).unwrap();
        let f2 = dft2(&random_map(&mut rng, 6, 6, 2)).unwrap();
        let mut sum = f1.clone();
        for (s, v) in sum.values.iter_mut().zip(f2.values.iter()) {
            *s += v;
        }
        let lhs = circular_correlate(&filt, &sum).unwrap();
        let c1 = circular_correlate(&filt, &f1).unwrap();
        let c2 = circular_correlate(&filt, &f2).unwrap();
        for i in 0..lhs.values.len() {
            assert!((lhs.values[i] - (c1.values[i] + c2.values[i])).norm() < 1e-9);
        }
    }

    #[test]
    fn parseval_inner_product() {
        let mut rng = ChaCha8Rng::seed_from_u64(111);
        let x = random_map(&mut rng, 7, 5, 1);
        let y = random_map(&mut rng, 7, 5, 1);
        let xs = dft2(&x).unwrap();
        let ys = dft2(&y).unwrap();
        let spatial: f64 = x.values.iter().zip(y.values.iter()).map(|(a, b)| a * b).sum();
        let spectral: Complex64 = xs
            .values
            .iter()
            .zip(ys.values.iter())
            .map(|(a, b)| a.conj() * b)
            .sum();
        let lambda = (7 * 5) as f64;
        assert!((spatial - spectral.re / lambda).abs() < 1e-9);
        assert!(spectral.im.abs() / lambda < 1e-9);
    }
}
