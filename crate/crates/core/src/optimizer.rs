//! Online collaborative training: closed-form slack updates alternating with
//! conjugate-gradient filter solves in the frequency domain, the
//! regularizer-free closed form, and the kernelized dual route.

use num_complex::Complex64;

use crate::operator::{
    score, ConfidenceMap, FilterLayer, FilterMode, Regularizer, StructuralFilter,
};
use crate::spectral::{circular_correlate, dft2, synthesize_values, SpatialMap, SpectralMap};
use crate::{Error, Result};

/// Non-negative per-shift margin violations ε.
#[derive(Debug, Clone)]
pub struct SlackField {
    pub height: usize,
    pub width: usize,
    pub values: Vec<f64>,
}

/// Regression target spectrum ρ̂ for the filter solve.
#[derive(Debug, Clone)]
pub struct ConfidenceLabels {
    pub spectrum: SpectralMap,
}

/// Solver knobs; defaults follow the reference configuration.
#[derive(Debug, Clone, Copy)]
pub struct SolverConfig {
    /// Data-term weight C.
    pub c: f64,
    /// Outer slack/solve alternations per frame.
    pub outer_iterations: usize,
    /// CG iterations inside each outer alternation.
    pub cg_iterations_per_outer: usize,
    /// Outer alternations on the first frame.
    pub init_outer_iterations: usize,
    /// Relative-residual floor below which CG stops early.
    pub tolerance: f64,
    /// Exponential blending factor for training features across frames
    /// (0 trains on the current frame only).
    pub memory: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            c: 20000.0,
            outer_iterations: 3,
            cg_iterations_per_outer: 2,
            init_outer_iterations: 25,
            tolerance: 1e-8,
            memory: 0.0,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.c > 0.0) || !self.c.is_finite() {
            return Err(Error::InvalidInput(format!("solver weight C must be positive, got {}", self.c)));
        }
        if self.cg_iterations_per_outer == 0 {
            return Err(Error::InvalidInput("CG iteration count must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.memory) {
            return Err(Error::InvalidInput(format!("memory factor {} outside [0,1)", self.memory)));
        }
        Ok(())
    }
}

/// Kernel choice for the dual route.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KernelKind {
    Linear,
    GaussianRbf,
}

#[derive(Debug, Clone, Copy)]
pub struct KernelSpec {
    pub kind: KernelKind,
    pub bandwidth: f64,
}

impl KernelSpec {
    pub fn linear() -> Self {
        KernelSpec { kind: KernelKind::Linear, bandwidth: 1.0 }
    }

    pub fn gaussian(bandwidth: f64) -> Self {
        KernelSpec { kind: KernelKind::GaussianRbf, bandwidth }
    }

    pub fn validate(&self) -> Result<()> {
        if self.kind == KernelKind::GaussianRbf && !(self.bandwidth > 0.0) {
            return Err(Error::InvalidInput(format!(
                "gaussian kernel bandwidth must be positive, got {}",
                self.bandwidth
            )));
        }
        Ok(())
    }
}

fn anchor_cell(cost: &SpatialMap) -> usize {
    let mut best = 0;
    for (i, v) in cost.values.iter().enumerate() {
        if *v < cost.values[best] {
            best = i;
        }
    }
    best
}

fn check_grids(score_map: &ConfidenceMap, cost: &SpatialMap) -> Result<()> {
    if cost.channels != 1 || score_map.height != cost.height || score_map.width != cost.width {
        return Err(Error::ShapeMismatch(format!(
            "score {}x{} vs cost {}x{}x{}",
            score_map.height, score_map.width, cost.height, cost.width, cost.channels
        )));
    }
    Ok(())
}

/// Closed-form slack update ε(p) = max(0, S(y₀) − S(p) − J(p)), with the
/// anchor y₀ at the cost map's minimum.
pub fn update_slack(score_map: &ConfidenceMap, cost: &SpatialMap) -> Result<SlackField> {
    check_grids(score_map, cost)?;
    let s0 = score_map.values[anchor_cell(cost)];
    let values = score_map
        .values
        .iter()
        .zip(cost.values.iter())
        .map(|(s, j)| (s0 - s - j).max(0.0))
        .collect();
    Ok(SlackField { height: score_map.height, width: score_map.width, values })
}

/// Regression target ρ = S(y₀) − J − ε, returned as its Fourier-series
/// coefficients.
pub fn confidence_labels(
    score_map: &ConfidenceMap,
    cost: &SpatialMap,
    slack: &SlackField,
) -> Result<ConfidenceLabels> {
    check_grids(score_map, cost)?;
    if slack.height != cost.height || slack.width != cost.width {
        return Err(Error::ShapeMismatch("slack grid differs from cost grid".into()));
    }
    let s0 = score_map.values[anchor_cell(cost)];
    let rho: Vec<f64> = cost
        .values
        .iter()
        .zip(slack.values.iter())
        .map(|(j, e)| s0 - j - e)
        .collect();
    let map = SpatialMap::new(cost.height, cost.width, 1, rho)?;
    let mut spectrum = dft2(&map)?;
    let lam = (cost.height * cost.width) as f64;
    for v in spectrum.values.iter_mut() {
        *v /= lam;
    }
    Ok(ConfidenceLabels { spectrum })
}

fn dot(a: &[Complex64], b: &[Complex64]) -> Complex64 {
    a.iter().zip(b.iter()).map(|(x, y)| x.conj() * y).sum()
}

fn norm(a: &[Complex64]) -> f64 {
    a.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt()
}

/// Applies one layer's normal-equation operator
/// (Φ̂ Φ̂ᴴ + (1/C)·ΓᴴΓ) to stacked channel planes.
pub fn normal_equations_apply(
    feat: &SpectralMap,
    reg: &Regularizer,
    c: f64,
    w: &[Complex64],
) -> Vec<Complex64> {
    let plane = feat.freq_height * feat.freq_width;
    let d = feat.channels;
    let mut out = vec![Complex64::new(0.0, 0.0); plane * d];
    for i in 0..plane {
        let mut inner = Complex64::new(0.0, 0.0);
        for ch in 0..d {
            inner += feat.values[ch * plane + i].conj() * w[ch * plane + i];
        }
        for ch in 0..d {
            out[ch * plane + i] = feat.values[ch * plane + i] * inner;
        }
    }
    let inv_c = 1.0 / c;
    for ch in 0..d {
        let gram = reg.gram_apply(&w[ch * plane..(ch + 1) * plane], feat.freq_height, feat.freq_width);
        for (o, g) in out[ch * plane..(ch + 1) * plane].iter_mut().zip(gram.iter()) {
            *o += inv_c * g;
        }
    }
    out
}

fn cg_solve(
    apply: impl Fn(&[Complex64]) -> Vec<Complex64>,
    b: &[Complex64],
    start: &[Complex64],
    iterations: usize,
    tolerance: f64,
) -> Result<(Vec<Complex64>, f64)> {
    let mut w = start.to_vec();
    let mut r: Vec<Complex64> = b
        .iter()
        .zip(apply(&w).iter())
        .map(|(bi, mi)| bi - mi)
        .collect();
    let mut p = r.clone();
    let mut rs = dot(&r, &r).re;
    let b_norm = norm(b);
    let floor = tolerance * b_norm.max(f64::MIN_POSITIVE);
    for it in 0..iterations {
        if rs.sqrt() <= floor {
            break;
        }
        let mp = apply(&p);
        let denom = dot(&p, &mp).re;
        if denom <= 0.0 || !denom.is_finite() {
            if !denom.is_finite() {
                return Err(Error::SolverDiverged { iteration: it });
            }
            break;
        }
        let alpha = rs / denom;
        for ((wi, pi), (ri, mi)) in w.iter_mut().zip(p.iter()).zip(r.iter_mut().zip(mp.iter())) {
            *wi += alpha * pi;
            *ri -= alpha * mi;
        }
        let rs_new = dot(&r, &r).re;
        if !rs_new.is_finite() {
            return Err(Error::SolverDiverged { iteration: it });
        }
        let beta = rs_new / rs;
        for (pi, ri) in p.iter_mut().zip(r.iter()) {
            *pi = ri + beta * *pi;
        }
        rs = rs_new;
    }
    let residual = rs.sqrt() / b_norm.max(f64::MIN_POSITIVE);
    Ok((w, residual))
}

fn validate_training_inputs(
    feats: &[SpectralMap],
    labels: &[ConfidenceLabels],
) -> Result<()> {
    if feats.is_empty() || feats.len() != labels.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} feature layers vs {} label sets",
            feats.len(),
            labels.len()
        )));
    }
    for (f, l) in feats.iter().zip(labels.iter()) {
        if (f.freq_height, f.freq_width) != (l.spectrum.freq_height, l.spectrum.freq_width) {
            return Err(Error::ShapeMismatch("feature and label grids differ".into()));
        }
    }
    Ok(())
}

/// One CG round per layer on the coupled normal equations, warm-started from
/// `warm` (which is never mutated). Returns the new filters and the per-layer
/// relative residuals at exit.
pub fn solve_filters_cg(
    feats: &[SpectralMap],
    labels: &[ConfidenceLabels],
    reg: &Regularizer,
    cfg: &SolverConfig,
    warm: &StructuralFilter,
) -> Result<(StructuralFilter, Vec<f64>)> {
    cfg.validate()?;
    validate_training_inputs(feats, labels)?;
    if warm.mode != FilterMode::Primal || warm.layers.len() != feats.len() {
        return Err(Error::InvalidInput("warm start must be a primal filter with matching layers".into()));
    }
    let mut layers = Vec::with_capacity(feats.len());
    let mut residuals = Vec::with_capacity(feats.len());
    for ((feat, label), warm_layer) in feats.iter().zip(labels.iter()).zip(warm.layers.iter()) {
        let plane = feat.freq_height * feat.freq_width;
        let d = feat.channels;
        if warm_layer.coefficients.values.len() != plane * d {
            return Err(Error::ShapeMismatch("warm-start layer shape differs from features".into()));
        }
        let mut b = vec![Complex64::new(0.0, 0.0); plane * d];
        for i in 0..plane {
            let rho_conj = label.spectrum.values[i].conj();
            for ch in 0..d {
                b[ch * plane + i] = feat.values[ch * plane + i] * rho_conj;
            }
        }
        let (w, residual) = cg_solve(
            |x| normal_equations_apply(feat, reg, cfg.c, x),
            &b,
            &warm_layer.coefficients.values,
            cfg.cg_iterations_per_outer,
            cfg.tolerance,
        )?;
        let coefficients = SpectralMap::new(
            feat.freq_height,
            feat.freq_width,
            d,
            w,
            feat.real_origin && label.spectrum.real_origin,
        )?;
        layers.push(FilterLayer { coefficients, training_features: None });
        residuals.push(residual);
    }
    let grid = (feats[0].freq_height, feats[0].freq_width);
    Ok((StructuralFilter { mode: FilterMode::Primal, layers, grid }, residuals))
}

/// Regularizer-free closed form: per frequency,
/// ŵ^d = Φ̂^d · conj(ρ̂) / (Σ_d' |Φ̂^d'|² + 1/C).
pub fn solve_filters_closed(
    feats: &[SpectralMap],
    labels: &[ConfidenceLabels],
    c: f64,
) -> Result<StructuralFilter> {
    validate_training_inputs(feats, labels)?;
    if !(c > 0.0) {
        return Err(Error::InvalidInput("weight C must be positive".into()));
    }
    let inv_c = 1.0 / c;
    let mut layers = Vec::with_capacity(feats.len());
    for (feat, label) in feats.iter().zip(labels.iter()) {
        let plane = feat.freq_height * feat.freq_width;
        let d = feat.channels;
        let mut values = vec![Complex64::new(0.0, 0.0); plane * d];
        for i in 0..plane {
            let mut denom = inv_c;
            for ch in 0..d {
                denom += feat.values[ch * plane + i].norm_sqr();
            }
            let rho_conj = label.spectrum.values[i].conj();
            for ch in 0..d {
                values[ch * plane + i] = feat.values[ch * plane + i] * rho_conj / denom;
            }
        }
        let coefficients = SpectralMap::new(
            feat.freq_height,
            feat.freq_width,
            d,
            values,
            feat.real_origin && label.spectrum.real_origin,
        )?;
        layers.push(FilterLayer { coefficients, training_features: None });
    }
    let grid = (feats[0].freq_height, feats[0].freq_width);
    Ok(StructuralFilter { mode: FilterMode::Primal, layers, grid })
}

/// Value of the structured training objective at the current filters, with
/// the slack freshly minimized:
/// Σ_layers [ Σ_d ‖γ̂ ⊛ ŵ^d‖² + (C/Λ)·Σ_p (S(p) − ρ(p))² ].
pub fn training_objective(
    feats: &[SpectralMap],
    filters: &StructuralFilter,
    cost: &SpatialMap,
    reg: &Regularizer,
    c: f64,
) -> Result<f64> {
    let maps = score(filters, feats)?;
    let lam = (cost.height * cost.width) as f64;
    let mut total = 0.0;
    for (map, layer) in maps.iter().zip(filters.layers.iter()) {
        let slack = update_slack(map, cost)?;
        let s0 = map.values[anchor_cell(cost)];
        let mut data = 0.0;
        for ((s, j), e) in map.values.iter().zip(cost.values.iter()).zip(slack.values.iter()) {
            let xi = s - (s0 - j - e);
            data += xi * xi;
        }
        total += c / lam * data;
        let plane = layer.coefficients.freq_height * layer.coefficients.freq_width;
        for ch in 0..layer.coefficients.channels {
            total += reg.weighted_energy(
                &layer.coefficients.values[ch * plane..(ch + 1) * plane],
                layer.coefficients.freq_height,
                layer.coefficients.freq_width,
            );
        }
    }
    Ok(total)
}

/// Objective values and final CG residuals recorded by a training run.
#[derive(Debug, Clone, Default)]
pub struct OptimizeTrace {
    pub objectives: Vec<f64>,
    pub final_residuals: Vec<f64>,
}

/// The collaborative alternation: score → slack → labels → warm-started CG,
/// repeated `outer_iterations` times. Zero iterations return the warm start
/// unchanged.
pub fn train_filters(
    feats: &[SpectralMap],
    cost: &SpatialMap,
    reg: &Regularizer,
    cfg: &SolverConfig,
    warm: &StructuralFilter,
    outer_iterations: usize,
) -> Result<(StructuralFilter, OptimizeTrace)> {
    let mut filters = warm.clone();
    let mut trace = OptimizeTrace::default();
    for _ in 0..outer_iterations {
        let maps = score(&filters, feats)?;
        let mut labels = Vec::with_capacity(feats.len());
        for map in &maps {
            let slack = update_slack(map, cost)?;
            labels.push(confidence_labels(map, cost, &slack)?);
        }
        let (next, residuals) = solve_filters_cg(feats, &labels, reg, cfg, &filters)?;
        filters = next;
        trace.final_residuals = residuals;
        trace.objectives.push(training_objective(feats, &filters, cost, reg, cfg.c)?);
    }
    Ok((filters, trace))
}

/// Kernel auto-correlation spectrum k̂ of one layer's interpolated features:
/// the first row of the circulant kernel matrix over all grid shifts.
pub fn kernel_autocorrelation(feat: &SpectralMap, spec: &KernelSpec) -> Result<SpectralMap> {
    spec.validate()?;
    let corr = circular_correlate(feat, feat)?;
    match spec.kind {
        KernelKind::Linear => Ok(corr),
        KernelKind::GaussianRbf => {
            let (h, w) = (feat.freq_height, feat.freq_width);
            let c = synthesize_values(&corr, h, w)?;
            let c0 = c.values[0];
            gaussian_kernel_spectrum(&c.values, c0 + c0, h, w, spec.bandwidth, feat.channels)
        }
    }
}

/// Kernel cross-correlation spectrum between stored training features and a
/// new frame's features.
pub fn kernel_crosscorrelation(
    train: &SpectralMap,
    test: &SpectralMap,
    spec: &KernelSpec,
) -> Result<SpectralMap> {
    spec.validate()?;
    let corr = circular_correlate(train, test)?;
    match spec.kind {
        KernelKind::Linear => Ok(corr),
        KernelKind::GaussianRbf => {
            let (h, w) = (train.freq_height, train.freq_width);
            let c = synthesize_values(&corr, h, w)?;
            let norms: f64 = train.values.iter().map(|v| v.norm_sqr()).sum::<f64>()
                + test.values.iter().map(|v| v.norm_sqr()).sum::<f64>();
            gaussian_kernel_spectrum(&c.values, norms, h, w, spec.bandwidth, train.channels)
        }
    }
}

/// exp(−max(0, norms − 2·corr(p)) / (σ²·D)) evaluated on the grid, returned
/// as series coefficients. The per-channel normalization D keeps distances
/// comparable across layers of different channel counts.
fn gaussian_kernel_spectrum(
    corr_values: &[f64],
    norms: f64,
    h: usize,
    w: usize,
    bandwidth: f64,
    channels: usize,
) -> Result<SpectralMap> {
    let denom = bandwidth * bandwidth * channels as f64;
    let k: Vec<f64> = corr_values
        .iter()
        .map(|c| (-(norms - 2.0 * c).max(0.0) / denom).exp())
        .collect();
    let map = SpatialMap::new(h, w, 1, k)?;
    let mut spectrum = dft2(&map)?;
    let lam = (h * w) as f64;
    for v in spectrum.values.iter_mut() {
        *v /= lam;
    }
    Ok(spectrum)
}

/// Dual coefficients. Without a regularizer the per-frequency closed form
/// α̂ = ρ̂ / (k̂ + 1/C) applies; with one, CG solves
/// (diag(k̂) + (1/C)·ΓᴴΓ) α̂ = ρ̂. Returns the coefficients and the CG
/// relative residual (zero for the closed form).
pub fn solve_dual(
    kernel: &SpectralMap,
    labels: &ConfidenceLabels,
    reg: Option<&Regularizer>,
    cfg: &SolverConfig,
    warm: Option<&SpectralMap>,
) -> Result<(SpectralMap, f64)> {
    cfg.validate()?;
    let (h, w) = (kernel.freq_height, kernel.freq_width);
    if kernel.channels != 1
        || (labels.spectrum.freq_height, labels.spectrum.freq_width) != (h, w)
    {
        return Err(Error::ShapeMismatch("kernel and label grids differ".into()));
    }
    let inv_c = 1.0 / cfg.c;
    match reg {
        None => {
            let values: Vec<Complex64> = kernel
                .values
                .iter()
                .zip(labels.spectrum.values.iter())
                .map(|(k, rho)| rho / (k + inv_c))
                .collect();
            if values.iter().any(|v| !v.re.is_finite() || !v.im.is_finite()) {
                return Err(Error::SolverDiverged { iteration: 0 });
            }
            let alpha = SpectralMap::new(
                h,
                w,
                1,
                values,
                kernel.real_origin && labels.spectrum.real_origin,
            )?;
            Ok((alpha, 0.0))
        }
        Some(reg) => {
            // real diagonal keeps the operator Hermitian against fp noise
            let diag: Vec<f64> = kernel.values.iter().map(|k| k.re).collect();
            let zeros;
            let start: &[Complex64] = match warm {
                Some(a) => {
                    if (a.freq_height, a.freq_width, a.channels) != (h, w, 1) {
                        return Err(Error::ShapeMismatch("warm dual grid differs".into()));
                    }
                    &a.values
                }
                None => {
                    zeros = vec![Complex64::new(0.0, 0.0); h * w];
                    &zeros
                }
            };
            let apply = |x: &[Complex64]| {
                let mut out: Vec<Complex64> =
                    x.iter().zip(diag.iter()).map(|(v, d)| v * *d).collect();
                let gram = reg.gram_apply(x, h, w);
                for (o, g) in out.iter_mut().zip(gram.iter()) {
                    *o += inv_c * g;
                }
                out
            };
            let (values, residual) = cg_solve(
                apply,
                &labels.spectrum.values,
                start,
                cfg.cg_iterations_per_outer,
                cfg.tolerance,
            )?;
            let alpha = SpectralMap::new(
                h,
                w,
                1,
                values,
                kernel.real_origin && labels.spectrum.real_origin,
            )?;
            Ok((alpha, residual))
        }
    }
}

/// Detection scores of the dual route: S = synthesize(k̂_cross ⊙ α̂).
pub fn score_dual(cross: &SpectralMap, alpha: &SpectralMap) -> Result<ConfidenceMap> {
    if (cross.freq_height, cross.freq_width, cross.channels)
        != (alpha.freq_height, alpha.freq_width, alpha.channels)
        || cross.channels != 1
    {
        return Err(Error::ShapeMismatch("cross kernel and dual coefficients differ".into()));
    }
    let values: Vec<Complex64> = cross
        .values
        .iter()
        .zip(alpha.values.iter())
        .map(|(k, a)| k * a)
        .collect();
    let s = SpectralMap::new(
        cross.freq_height,
        cross.freq_width,
        1,
        values,
        cross.real_origin && alpha.real_origin,
    )?;
    let spatial = synthesize_values(&s, cross.freq_height, cross.freq_width)?;
    ConfidenceMap::from_values(spatial.height, spatial.width, spatial.values)
}

/// Dual counterpart of `train_filters`: alternates slack updates with dual
/// solves against each layer's auto-correlation kernel. The returned filter
/// stores the training features needed for detection-time cross kernels.
pub fn train_dual_filters(
    feats: &[SpectralMap],
    cost: &SpatialMap,
    reg: Option<&Regularizer>,
    spec: &KernelSpec,
    cfg: &SolverConfig,
    warm: Option<&StructuralFilter>,
    outer_iterations: usize,
) -> Result<(StructuralFilter, OptimizeTrace)> {
    if feats.is_empty() {
        return Err(Error::InvalidInput("cannot train on an empty stack".into()));
    }
    let (h, w) = (feats[0].freq_height, feats[0].freq_width);
    let kernels: Vec<SpectralMap> = feats
        .iter()
        .map(|f| kernel_autocorrelation(f, spec))
        .collect::<Result<_>>()?;
    let mut alphas: Vec<SpectralMap> = match warm {
        Some(filter) => {
            if filter.mode != FilterMode::Dual || filter.layers.len() != feats.len() {
                return Err(Error::InvalidInput("warm start must be a dual filter with matching layers".into()));
            }
            filter.layers.iter().map(|l| l.coefficients.clone()).collect()
        }
        None => feats.iter().map(|_| SpectralMap::zeros(h, w, 1)).collect(),
    };
    let mut trace = OptimizeTrace::default();
    let lam = (cost.height * cost.width) as f64;
    for _ in 0..outer_iterations {
        let mut objective = 0.0;
        let mut residuals = Vec::with_capacity(feats.len());
        for (l, kernel) in kernels.iter().enumerate() {
            let map = score_dual(kernel, &alphas[l])?;
            let slack = update_slack(&map, cost)?;
            let labels = confidence_labels(&map, cost, &slack)?;
            let (alpha, residual) = solve_dual(kernel, &labels, reg, cfg, Some(&alphas[l]))?;
            alphas[l] = alpha;
            residuals.push(residual);
            let new_map = score_dual(kernel, &alphas[l])?;
            let s0 = new_map.values[anchor_cell(cost)];
            let slack_new = update_slack(&new_map, cost)?;
            for ((s, j), e) in new_map
                .values
                .iter()
                .zip(cost.values.iter())
                .zip(slack_new.values.iter())
            {
                let xi = s - (s0 - j - e);
                objective += cfg.c / lam * xi * xi;
            }
        }
        trace.objectives.push(objective);
        trace.final_residuals = residuals;
    }
    let layers = alphas
        .into_iter()
        .zip(feats.iter())
        .map(|(alpha, feat)| FilterLayer {
            coefficients: alpha,
            training_features: Some(feat.clone()),
        })
        .collect();
    Ok((StructuralFilter { mode: FilterMode::Dual, layers, grid: (h, w) }, trace))
}
