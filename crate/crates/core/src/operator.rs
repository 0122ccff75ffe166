//! Detection-score operator pieces: periodic Gaussian labels and their
//! closed-form spectra, the structured-margin cost map, the spatial weight
//! regularizer with its sparse frequency representation, and scoring of
//! feature stacks against trained filters.

use num_complex::Complex64;

use crate::spectral::{
    circular_correlate, dft2, pad_spectrum, synthesize_values, SpatialMap, SpectralMap,
};
use crate::{Error, Result};

/// Periodic Gaussian label description. Coordinates are fractions of the
/// per-axis period, so the same spec applies to any grid resolution.
#[derive(Debug, Clone, Copy)]
pub struct LabelSpec {
    /// Spatial bandwidth as a fraction of the normalized period.
    pub sigma: f64,
    /// Peak position `(x, y)` in `[0, 1)` per axis.
    pub center: (f64, f64),
}

impl LabelSpec {
    pub fn centered(sigma: f64) -> Self {
        Self { sigma, center: (0.5, 0.5) }
    }

    fn validate(&self) -> Result<()> {
        if !(self.sigma > 0.0) || !self.sigma.is_finite() {
            return Err(Error::InvalidInput(format!("label sigma must be positive, got {}", self.sigma)));
        }
        for c in [self.center.0, self.center.1] {
            if !(0.0..1.0).contains(&c) {
                return Err(Error::InvalidInput(format!("label center {c} outside [0,1)")));
            }
        }
        Ok(())
    }
}

/// Unit-peak periodized Gaussian along one axis, evaluated at period fraction `t`.
fn periodic_gaussian(t: f64, center: f64, sigma: f64) -> f64 {
    let mut acc = 0.0;
    for j in -3..=3 {
        let d = t - center + j as f64;
        acc += (-d * d / (2.0 * sigma * sigma)).exp();
    }
    acc
}

/// Closed-form Fourier-series coefficients of the separable periodic Gaussian
/// label: per axis, m̂[k] = sqrt(2πσ²) · exp(-2σ²(πk)² - i2πk·c).
pub fn gaussian_label_spectrum(spec: &LabelSpec, height: usize, width: usize) -> Result<SpectralMap> {
    spec.validate()?;
    if height == 0 || width == 0 {
        return Err(Error::InvalidInput("label grid dimensions must be positive".into()));
    }
    let sigma = spec.sigma;
    let amp = (2.0 * std::f64::consts::PI * sigma * sigma).sqrt();
    let axis = |n: usize, center: f64| -> Vec<Complex64> {
        (0..n)
            .map(|r| {
                let k = r as isize - (n / 2) as isize;
                let kf = k as f64;
                let mag = amp * (-2.0 * (sigma * std::f64::consts::PI * kf).powi(2)).exp();
                Complex64::from_polar(mag, -2.0 * std::f64::consts::PI * kf * center)
            })
            .collect()
    };
    let rows = axis(height, spec.center.1);
    let cols = axis(width, spec.center.0);
    let mut out = SpectralMap::zeros(height, width, 1);
    for r in 0..height {
        for c in 0..width {
            out.values[r * width + c] = rows[r] * cols[c];
        }
    }
    out.real_origin = height % 2 == 1 && width % 2 == 1;
    Ok(out)
}

/// Spatial label map m(p) on the grid, sampled at period fractions (r/H, c/W).
pub fn label_map(spec: &LabelSpec, height: usize, width: usize) -> Result<SpatialMap> {
    spec.validate()?;
    if height == 0 || width == 0 {
        return Err(Error::InvalidInput("label grid dimensions must be positive".into()));
    }
    let mut out = SpatialMap::zeros(height, width, 1);
    for r in 0..height {
        let my = periodic_gaussian(r as f64 / height as f64, spec.center.1, spec.sigma);
        for c in 0..width {
            let mx = periodic_gaussian(c as f64 / width as f64, spec.center.0, spec.sigma);
            out.values[r * width + c] = my * mx;
        }
    }
    Ok(out)
}

/// Margin cost J(p) = 1 - m(p): zero at the target position, saturating to one
/// away from it.
pub fn cost_map(spec: &LabelSpec, height: usize, width: usize) -> Result<SpatialMap> {
    let mut m = label_map(spec, height, width)?;
    for v in m.values.iter_mut() {
        *v = 1.0 - *v;
    }
    Ok(m)
}

/// Spatial weight function penalizing filter energy away from the target
/// region, stored with a sparse frequency-domain representation.
///
/// The weights live on their own coarse grid; the sparse spectrum holds the
/// Fourier-series coefficients of the trigonometric interpolant of that grid,
/// which is what the solver applies as a convolution.
#[derive(Debug, Clone)]
pub struct Regularizer {
    pub spatial_weights: SpatialMap,
    /// Sorted `((k_row, k_col), coefficient)` pairs.
    pub spectrum: Vec<((isize, isize), Complex64)>,
    pub min_weight: f64,
}

/// Relative magnitude below which regularizer coefficients are dropped.
pub const REGULARIZER_TRUNCATION: f64 = 1e-8;

/// Builds the quadratic spatial weights
/// γ(m,n) = minWeight + slope·(m/M)² + slope·(n/N)², with (m, n) measured from
/// the grid center, and their truncated sparse spectrum.
pub fn build_regularizer(rows: usize, cols: usize, min_weight: f64, slope: f64) -> Result<Regularizer> {
    if rows < 2 || cols < 2 {
        return Err(Error::InvalidInput("regularizer grid must be at least 2x2".into()));
    }
    if !(min_weight > 0.0) {
        return Err(Error::InvalidInput("regularizer minimum weight must be positive".into()));
    }
    if slope < 0.0 {
        return Err(Error::InvalidInput("regularizer slope must be non-negative".into()));
    }
    let mut weights = SpatialMap::zeros(rows, cols, 1);
    for r in 0..rows {
        let m = r as isize - (rows / 2) as isize;
        let my = m as f64 / rows as f64;
        for c in 0..cols {
            let n = c as isize - (cols / 2) as isize;
            let nx = n as f64 / cols as f64;
            weights.values[r * cols + c] = min_weight + slope * my * my + slope * nx * nx;
        }
    }
    let spec = dft2(&weights)?;
    let scale = 1.0 / (rows * cols) as f64;
    let peak = spec.values.iter().map(|v| v.norm()).fold(0.0_f64, f64::max) * scale;
    let mut spectrum = Vec::new();
    for r in 0..rows {
        let kr = SpectralMap::freq_of(r, rows);
        for c in 0..cols {
            let kc = SpectralMap::freq_of(c, cols);
            let v = spec.values[r * cols + c] * scale;
            if v.norm() >= REGULARIZER_TRUNCATION * peak {
                spectrum.push(((kr, kc), v));
            }
        }
    }
    spectrum.sort_by_key(|&((kr, kc), _)| (kr, kc));
    Ok(Regularizer { spatial_weights: weights, spectrum, min_weight })
}

impl Regularizer {
    /// Regularizer that multiplies by one everywhere (plain ridge behaviour).
    pub fn identity() -> Self {
        Regularizer {
            spatial_weights: SpatialMap::new(2, 2, 1, vec![1.0; 4]).unwrap(),
            spectrum: vec![((0, 0), Complex64::new(1.0, 0.0))],
            min_weight: 1.0,
        }
    }

    /// Largest |k| per axis among retained coefficients.
    pub fn radius(&self) -> (usize, usize) {
        let mut rr = 0usize;
        let mut rc = 0usize;
        for &((kr, kc), _) in &self.spectrum {
            rr = rr.max(kr.unsigned_abs());
            rc = rc.max(kc.unsigned_abs());
        }
        (rr, rc)
    }

    /// Linear convolution of one spectrum plane with the sparse weight
    /// spectrum; the output band extends by the kernel radius per axis.
    ///
    /// `plane` is centered `h x w`; returns (values, out_h, out_w).
    pub fn convolve_plane(&self, plane: &[Complex64], h: usize, w: usize) -> (Vec<Complex64>, usize, usize) {
        let (rr, rc) = self.radius();
        let oh = h + 2 * rr;
        let ow = w + 2 * rc;
        let mut out = vec![Complex64::new(0.0, 0.0); oh * ow];
        for &((kr, kc), g) in &self.spectrum {
            let dr = (kr + rr as isize) as usize;
            let dc = (kc + rc as isize) as usize;
            for r in 0..h {
                let or = r + dr;
                let row_in = r * w;
                let row_out = or * ow + dc;
                for c in 0..w {
                    out[row_out + c] += g * plane[row_in + c];
                }
            }
        }
        (out, oh, ow)
    }

    /// Applies Γᴴ Γ to one centered `h x w` plane: convolve with the sparse
    /// spectrum on the extended band, then correlate back and restrict.
    /// Self-adjoint and positive semidefinite by construction.
    pub fn gram_apply(&self, plane: &[Complex64], h: usize, w: usize) -> Vec<Complex64> {
        let (ext, _, ow) = self.convolve_plane(plane, h, w);
        let (rr, rc) = self.radius();
        let mut out = vec![Complex64::new(0.0, 0.0); h * w];
        for &((kr, kc), g) in &self.spectrum {
            let gc = g.conj();
            let dr = (kr + rr as isize) as usize;
            let dc = (kc + rc as isize) as usize;
            for r in 0..h {
                let row_ext = (r + dr) * ow + dc;
                let row_out = r * w;
                for c in 0..w {
                    out[row_out + c] += gc * ext[row_ext + c];
                }
            }
        }
        out
    }

    /// Σ_k |(Γ x̂)[k]|² for one plane: the spatial-weighting energy term.
    pub fn weighted_energy(&self, plane: &[Complex64], h: usize, w: usize) -> f64 {
        let (ext, _, _) = self.convolve_plane(plane, h, w);
        ext.iter().map(|v| v.norm_sqr()).sum()
    }
}

/// Which representation a trained filter stores.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FilterMode {
    /// Per-channel filter spectra.
    Primal,
    /// Per-layer dual coefficients plus the training feature spectra.
    Dual,
}

/// One trained layer: primal filter spectrum (channels matching the layer's
/// features), or dual coefficients with retained training features.
#[derive(Debug, Clone)]
pub struct FilterLayer {
    pub coefficients: SpectralMap,
    pub training_features: Option<SpectralMap>,
}

/// The full multi-layer trained operator.
#[derive(Debug, Clone)]
pub struct StructuralFilter {
    pub mode: FilterMode,
    pub layers: Vec<FilterLayer>,
    /// Common frequency grid (rows, cols).
    pub grid: (usize, usize),
}

impl StructuralFilter {
    /// Zero primal filters matching the per-layer channel counts of `feats`.
    pub fn zeros_like(feats: &[SpectralMap]) -> Result<Self> {
        let first = feats
            .first()
            .ok_or_else(|| Error::InvalidInput("cannot build filter for an empty stack".into()))?;
        let grid = (first.freq_height, first.freq_width);
        let layers = feats
            .iter()
            .map(|f| FilterLayer {
                coefficients: SpectralMap::zeros(f.freq_height, f.freq_width, f.channels),
                training_features: None,
            })
            .collect();
        Ok(StructuralFilter { mode: FilterMode::Primal, layers, grid })
    }
}

/// Real-valued detection confidence over the common grid, with the grid peak
/// and its sub-cell quadratic refinement.
#[derive(Debug, Clone)]
pub struct ConfidenceMap {
    pub height: usize,
    pub width: usize,
    pub values: Vec<f64>,
    /// Refined peak position `(x, y)` in grid units; within one cell of the argmax.
    pub peak: (f64, f64),
    /// Maximum over the raw grid, before refinement.
    pub peak_value: f64,
}

impl ConfidenceMap {
    pub fn from_values(height: usize, width: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != height * width {
            return Err(Error::ShapeMismatch(format!(
                "confidence map expects {} values, got {}",
                height * width,
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("confidence map"));
        }
        let (mut best, mut best_v) = (0usize, f64::NEG_INFINITY);
        for (i, &v) in values.iter().enumerate() {
            if v > best_v {
                best = i;
                best_v = v;
            }
        }
        let row = best / width;
        let col = best % width;
        let (dx, dy) = refine_peak(&values, height, width, row, col);
        let px = (col as f64 + dx).rem_euclid(width as f64);
        let py = (row as f64 + dy).rem_euclid(height as f64);
        Ok(ConfidenceMap { height, width, values, peak: (px, py), peak_value: best_v })
    }

    #[inline]
    pub fn at(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.width + col]
    }
}

/// Least-squares quadratic fit over the periodic 3x3 neighborhood of the
/// argmax; returns the sub-cell offset, zero when the fit is not concave.
fn refine_peak(values: &[f64], h: usize, w: usize, row: usize, col: usize) -> (f64, f64) {
    let mut s = 0.0;
    let mut sx = 0.0;
    let mut sy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    let mut sxy = 0.0;
    for dy in -1isize..=1 {
        let r = (row as isize + dy).rem_euclid(h as isize) as usize;
        for dx in -1isize..=1 {
            let c = (col as isize + dx).rem_euclid(w as isize) as usize;
            let f = values[r * w + c];
            let (x, y) = (dx as f64, dy as f64);
            s += f;
            sx += x * f;
            sy += y * f;
            sxx += x * x * f;
            syy += y * y * f;
            sxy += x * y * f;
        }
    }
    let b = sx / 6.0;
    let c = sy / 6.0;
    let g = sxy / 4.0;
    let a = (5.0 * s / 3.0 - (sxx + syy)) / 3.0;
    let u = (s - 9.0 * a) / 6.0;
    let d = (u + (sxx - syy) / 2.0) / 2.0;
    let e = (u - (sxx - syy) / 2.0) / 2.0;
    let det = 4.0 * d * e - g * g;
    if d >= 0.0 || e >= 0.0 || det <= 0.0 {
        return (0.0, 0.0);
    }
    let dx = (-2.0 * e * b + g * c) / det;
    let dy = (g * b - 2.0 * d * c) / det;
    if dx.abs() > 1.0 || dy.abs() > 1.0 {
        return (0.0, 0.0);
    }
    (dx, dy)
}

/// Scores interpolated feature spectra against primal filters: one confidence
/// map per layer, synthesized on the common grid.
pub fn score(filters: &StructuralFilter, feats: &[SpectralMap]) -> Result<Vec<ConfidenceMap>> {
    if filters.mode != FilterMode::Primal {
        return Err(Error::InvalidInput("score expects primal filters; use the dual scorer".into()));
    }
    if filters.layers.len() != feats.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} filter layers vs {} feature layers",
            filters.layers.len(),
            feats.len()
        )));
    }
    let (th, tw) = filters.grid;
    let mut maps = Vec::with_capacity(feats.len());
    for (layer, feat) in filters.layers.iter().zip(feats.iter()) {
        let corr = circular_correlate(&layer.coefficients, feat)?;
        let padded = pad_spectrum(&corr, th, tw)?;
        let spatial = synthesize_values(&padded, th, tw)?;
        maps.push(ConfidenceMap::from_values(th, tw, spatial.values)?);
    }
    Ok(maps)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral::idft2_complex;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn label_spectrum_dc_matches_closed_form() {
        // 1-D factor at k=0 is sqrt(2π·σ²); σ=0.1 gives ~0.250663
        let spec = LabelSpec { sigma: 0.1, center: (0.0, 0.0) };
        let m = gaussian_label_spectrum(&spec, 1, 17).unwrap();
        let dc = m.at_freq(0, 0, 0);
        let axis_dc = (2.0 * std::f64::consts::PI * 0.01).sqrt();
        assert!((dc.re - axis_dc * axis_dc).abs() < 1e-12);
        assert!((dc.re.sqrt() - 0.2506628).abs() < 1e-6);
    }

    #[test]
    fn centered_label_spectrum_is_real_for_origin_center() {
        let spec = LabelSpec { sigma: 0.1, center: (0.0, 0.0) };
        let m = gaussian_label_spectrum(&spec, 15, 15).unwrap();
        for v in &m.values {
            assert!(v.im.abs() < 1e-15);
            assert!(v.re >= 0.0);
        }
    }

    #[test]
    fn label_magnitudes_decay_with_frequency() {
        let spec = LabelSpec::centered(0.1);
        let m = gaussian_label_spectrum(&spec, 1, 33).unwrap();
        for k in 0..15 {
            let a = m.at_freq(0, 0, k).norm();
            let b = m.at_freq(0, 0, k + 1).norm();
            assert!(b < a, "magnitude must strictly decay away from DC");
        }
    }

    #[test]
    fn synthesized_label_peaks_at_one() {
        let spec = LabelSpec { sigma: 0.1, center: (0.25, 0.25) };
        let m = gaussian_label_spectrum(&spec, 64, 64).unwrap();
        let synth = idft2_complex(&m);
        let peak = synth.iter().map(|v| v.re * 64.0 * 64.0).fold(f64::NEG_INFINITY, f64::max);
        assert!((peak - 1.0).abs() < 1e-3, "peak {peak}");
    }

    #[test]
    fn label_spectrum_matches_spatial_map() {
        let spec = LabelSpec { sigma: 0.15, center: (0.25, 0.5) };
        let m_hat = gaussian_label_spectrum(&spec, 32, 32).unwrap();
        let synth = idft2_complex(&m_hat);
        let m = label_map(&spec, 32, 32).unwrap();
        for (v, s) in m.values.iter().zip(synth.iter()) {
            assert!((v - s.re * 1024.0).abs() < 1e-6);
        }
    }

    #[test]
    fn cost_map_complements_label_map() {
        let spec = LabelSpec { sigma: 0.1, center: (0.25, 0.25) };
        let m = label_map(&spec, 64, 64).unwrap();
        let j = cost_map(&spec, 64, 64).unwrap();
        for (a, b) in m.values.iter().zip(j.values.iter()) {
            assert_eq!(a + b, 1.0);
            assert!((0.0..=1.0).contains(b));
        }
        // center cell (16, 16) holds the peak: cost ≈ 0
        assert!(j.at(0, 16, 16) <= 1e-3);
        // farthest cell is half a period away per axis
        assert!(j.at(0, 48, 48) >= 0.99);
    }

    #[test]
    fn label_rejects_bad_parameters() {
        assert!(gaussian_label_spectrum(&LabelSpec { sigma: 0.0, center: (0.0, 0.0) }, 8, 8).is_err());
        assert!(gaussian_label_spectrum(&LabelSpec { sigma: 0.1, center: (1.5, 0.0) }, 8, 8).is_err());
        assert!(cost_map(&LabelSpec::centered(-0.1), 8, 8).is_err());
    }

    #[test]
    fn regularizer_center_and_corner_values() {
        let reg = build_regularizer(8, 8, 0.1, 3.0).unwrap();
        assert_eq!(reg.spatial_weights.at(0, 4, 4), 0.1);
        // corner offset (-M/2, -N/2): 0.1 + 3/4 + 3/4
        assert!((reg.spatial_weights.at(0, 0, 0) - 1.6).abs() < 1e-12);
        for v in &reg.spatial_weights.values {
            assert!(*v >= reg.min_weight);
        }
    }

    #[test]
    fn regularizer_spectrum_is_sparse_cross() {
        let reg = build_regularizer(11, 11, 0.1, 3.0).unwrap();
        assert!(reg.spectrum.len() <= 25, "kept {} coefficients", reg.spectrum.len());
        for &((kr, kc), _) in &reg.spectrum {
            assert!(kr == 0 || kc == 0, "separable-sum weights put energy on the axes only");
        }
        // conjugate symmetry of the retained set
        for &((kr, kc), v) in &reg.spectrum {
            let partner = reg
                .spectrum
                .iter()
                .find(|&&((a, b), _)| a == -kr && b == -kc)
                .expect("symmetric partner retained");
            assert!((partner.1 - v.conj()).norm() < 1e-12);
        }
    }

    #[test]
    fn regularizer_convolution_matches_space_multiplication() {
        // Apply the sparse spectrum as a linear convolution and compare with
        // multiplying the synthesized weight function in the spatial domain on
        // a grid large enough to hold the full product band exactly.
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let reg = build_regularizer(9, 9, 0.1, 3.0).unwrap();
        let (rr, rc) = reg.radius();
        let h = 13;
        let w = 13;
        let values: Vec<f64> = (0..h * w).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let x = SpatialMap::new(h, w, 1, values).unwrap();
        let xs = dft2(&x).unwrap();
        let series: Vec<Complex64> = xs.values.iter().map(|v| v / (h * w) as f64).collect();
        let (conv, oh, ow) = reg.convolve_plane(&series, h, w);

        let fine_h = h + 2 * rr;
        let fine_w = w + 2 * rc;
        assert_eq!((oh, ow), (fine_h, fine_w));
        // synthesize both factors on the fine grid and multiply
        let mut weight_spec = SpectralMap::zeros(fine_h, fine_w, 1);
        for &((kr, kc), g) in &reg.spectrum {
            let r = (kr + (fine_h / 2) as isize) as usize;
            let c = (kc + (fine_w / 2) as isize) as usize;
            weight_spec.values[r * fine_w + c] = g;
        }
        weight_spec.real_origin = false;
        let wv = idft2_complex(&weight_spec);
        let xpad = pad_spectrum(&xs, fine_h, fine_w).unwrap();
        let xv = idft2_complex(&xpad);
        // function values: weights scale by Λ_fine, padded samples by Λ_fine/Λ_coarse
        let lam_fine = (fine_h * fine_w) as f64;
        let product: Vec<Complex64> = wv
            .iter()
            .zip(xv.iter())
            .map(|(a, b)| a * lam_fine * b * lam_fine / (h * w) as f64)
            .collect();
        // product series = DFT(product values)/Λ, by direct summation
        let mut direct = vec![Complex64::new(0.0, 0.0); fine_h * fine_w];
        for r in 0..fine_h {
            let kr = r as isize - (fine_h / 2) as isize;
            for c in 0..fine_w {
                let kc = c as isize - (fine_w / 2) as isize;
                let mut acc = Complex64::new(0.0, 0.0);
                for y in 0..fine_h {
                    for x2 in 0..fine_w {
                        let ang = -2.0 * std::f64::consts::PI
                            * (kr as f64 * y as f64 / fine_h as f64
                                + kc as f64 * x2 as f64 / fine_w as f64);
                        acc += product[y * fine_w + x2] * Complex64::from_polar(1.0, ang);
                    }
                }
                direct[r * fine_w + c] = acc / lam_fine;
            }
        }
        let peak = direct.iter().map(|v| v.norm()).fold(0.0_f64, f64::max);
        for (a, b) in conv.iter().zip(direct.iter()) {
            assert!((a - b).norm() < 1e-6 * peak.max(1.0), "conv {a} vs direct {b}");
        }
    }

    #[test]
    fn regularizer_gram_is_self_adjoint_and_psd() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let reg = build_regularizer(7, 7, 0.1, 3.0).unwrap();
        let n = 9 * 9;
        let x: Vec<Complex64> = (0..n)
            .map(|_| Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
            .collect();
        let y: Vec<Complex64> = (0..n)
            .map(|_| Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
            .collect();
        let gx = reg.gram_apply(&x, 9, 9);
        let gy = reg.gram_apply(&y, 9, 9);
        let ip_xy: Complex64 = gx.iter().zip(y.iter()).map(|(a, b)| a.conj() * b).sum();
        let ip_yx: Complex64 = x.iter().zip(gy.iter()).map(|(a, b)| a.conj() * b).sum();
        assert!((ip_xy - ip_yx).norm() < 1e-9);
        let quad: Complex64 = x.iter().zip(gx.iter()).map(|(a, b)| a.conj() * b).sum();
        assert!(quad.re >= -1e-9);
        assert!(quad.im.abs() < 1e-9);
        // energy route agrees with the Gram quadratic form
        assert!((reg.weighted_energy(&x, 9, 9) - quad.re).abs() < 1e-9 * quad.re.max(1.0));
    }

    #[test]
    fn identity_regularizer_is_a_no_op() {
        let mut rng = ChaCha8Rng::seed_from_u64(27);
        let reg = Regularizer::identity();
        let x: Vec<Complex64> = (0..25)
            .map(|_| Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
            .collect();
        let gx = reg.gram_apply(&x, 5, 5);
        for (a, b) in x.iter().zip(gx.iter()) {
            assert!((a - b).norm() < 1e-15);
        }
    }

    #[test]
    fn regularizer_rejects_bad_parameters() {
        assert!(build_regularizer(1, 8, 0.1, 3.0).is_err());
        assert!(build_regularizer(8, 8, 0.0, 3.0).is_err());
        assert!(build_regularizer(8, 8, 0.1, -1.0).is_err());
    }

    #[test]
    fn confidence_map_peak_and_refinement() {
        // quadratic bump centered between cells: refinement moves toward it
        let h = 9;
        let w = 9;
        let mut values = vec![0.0; h * w];
        let (cy, cx) = (4.3, 5.6);
        for r in 0..h {
            for c in 0..w {
                let d = (r as f64 - cy).powi(2) + (c as f64 - cx).powi(2);
                values[r * w + c] = (-0.3 * d).exp();
            }
        }
        let map = ConfidenceMap::from_values(h, w, values.clone()).unwrap();
        let raw_max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        assert_eq!(map.peak_value, raw_max);
        assert!((map.peak.0 - cx).abs() < 0.15, "x {}", map.peak.0);
        assert!((map.peak.1 - cy).abs() < 0.15, "y {}", map.peak.1);
    }

    #[test]
    fn zero_map_peaks_at_origin_by_convention() {
        let map = ConfidenceMap::from_values(5, 5, vec![0.0; 25]).unwrap();
        assert_eq!(map.peak, (0.0, 0.0));
        assert_eq!(map.peak_value, 0.0);
    }

    #[test]
    fn confidence_map_rejects_non_finite() {
        assert!(ConfidenceMap::from_values(2, 2, vec![0.0, f64::NAN, 0.0, 0.0]).is_err());
    }

    fn random_stack(rng: &mut ChaCha8Rng, t: usize, channels: &[usize]) -> Vec<SpectralMap> {
        channels
            .iter()
            .map(|&ch| {
                let values = (0..t * t * ch).map(|_| rng.gen_range(-1.0..1.0)).collect();
                dft2(&SpatialMap::new(t, t, ch, values).unwrap()).unwrap()
            })
            .collect()
    }

    #[test]
    fn scoring_with_features_as_filter_peaks_at_zero_shift() {
        let mut rng = ChaCha8Rng::seed_from_u64(37);
        let feats = random_stack(&mut rng, 9, &[2, 3]);
        let filters = StructuralFilter {
            mode: FilterMode::Primal,
            layers: feats
                .iter()
                .map(|f| FilterLayer { coefficients: f.clone(), training_features: None })
                .collect(),
            grid: (9, 9),
        };
        let maps = score(&filters, &feats).unwrap();
        assert_eq!(maps.len(), 2);
        for map in &maps {
            let origin = map.at(0, 0);
            assert_eq!(map.peak_value, map.values.iter().cloned().fold(f64::NEG_INFINITY, f64::max));
            assert!((origin - map.peak_value).abs() < 1e-9, "autocorrelation peaks at zero shift");
        }
    }

    #[test]
    fn zero_filters_give_zero_maps() {
        let mut rng = ChaCha8Rng::seed_from_u64(47);
        let feats = random_stack(&mut rng, 7, &[2]);
        let filters = StructuralFilter::zeros_like(&feats).unwrap();
        let maps = score(&filters, &feats).unwrap();
        assert!(maps[0].values.iter().all(|v| *v == 0.0));
        assert_eq!(maps[0].peak, (0.0, 0.0));
    }

    #[test]
    fn score_is_linear_in_filters() {
        let mut rng = ChaCha8Rng::seed_from_u64(57);
        let feats = random_stack(&mut rng, 7, &[2]);
        let f1 = random_stack(&mut rng, 7, &[2]);
        let f2 = random_stack(&mut rng, 7, &[2]);
        let as_filter = |spec: &SpectralMap| StructuralFilter {
            mode: FilterMode::Primal,
            layers: vec![FilterLayer { coefficients: spec.clone(), training_features: None }],
            grid: (7, 7),
        };
        let mut sum = f1[0].clone();
        for (s, v) in sum.values.iter_mut().zip(f2[0].values.iter()) {
            *s += v;
        }
        let lhs = score(&as_filter(&sum), &feats).unwrap();
        let a = score(&as_filter(&f1[0]), &feats).unwrap();
        let b = score(&as_filter(&f2[0]), &feats).unwrap();
        for i in 0..lhs[0].values.len() {
            assert!((lhs[0].values[i] - (a[0].values[i] + b[0].values[i])).abs() < 1e-9);
        }
    }

    #[test]
    fn score_rejects_layer_count_mismatch() {
        let mut rng = ChaCha8Rng::seed_from_u64(67);
        let feats = random_stack(&mut rng, 7, &[2, 2]);
        let filters = StructuralFilter::zeros_like(&feats[..1].to_vec()).unwrap();
        assert!(score(&filters, &feats).is_err());
    }
}
