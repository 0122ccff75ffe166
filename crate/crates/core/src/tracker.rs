//! Online tracking state machine: first-frame initialization, scale-pyramid
//! detection, and warm-started per-frame model updates.

use image::RgbImage;

use crate::bench::{BoundingBox, Trajectory};
use crate::ensemble::{fuse, normalize_map, pairwise_filter, ProbabilityMap};
use crate::features::{
    crop_sample, extract_stack, CnTable, CropConfig, ExtractionContext, FeatureLayerSpec,
    LayerKind,
};
use crate::operator::{
    build_regularizer, cost_map, score, ConfidenceMap, FilterMode, LabelSpec, Regularizer,
    StructuralFilter,
};
use crate::optimizer::{
    kernel_crosscorrelation, score_dual, train_dual_filters, train_filters, KernelSpec,
    SolverConfig,
};
use crate::spectral::{interpolate, spline_kernel, SpatialMap, SpectralMap};
use crate::{Error, Result};

/// Complete per-run configuration; the presets mirror the handcrafted
/// (`hc`), kernelized handcrafted (`khc`), and external-feature variants.
#[derive(Debug, Clone)]
pub struct TrackerConfig {
    pub layers: Vec<FeatureLayerSpec>,
    pub solver: SolverConfig,
    /// Label bandwidth relative to the sample period.
    pub label_sigma: f64,
    /// Number of scale-pyramid layers Δ.
    pub scale_layers: usize,
    /// Per-layer scale step a.
    pub scale_factor: f64,
    /// Replace the floor-based index set with a symmetric one
    /// (2·⌊Δ/2⌋+1 layers).
    pub symmetric_scales: bool,
    /// Search region side relative to √(target area).
    pub search_area_factor: f64,
    /// Sample side bounds in pixels.
    pub sample_clamp: (usize, usize),
    /// Dual-route kernel; `None` trains primal filters.
    pub kernel: Option<KernelSpec>,
    pub reg_min_weight: f64,
    pub reg_slope: f64,
    /// Resolution of the spatial weight grid the regularizer is built from.
    pub reg_grid: usize,
    pub normalize_features: bool,
}

impl TrackerConfig {
    /// Grayscale + gradient histograms + color attributes, primal filters.
    pub fn hc() -> Self {
        TrackerConfig {
            layers: vec![
                FeatureLayerSpec::new(LayerKind::Gray, 4),
                FeatureLayerSpec::new(LayerKind::Hog, 4),
                FeatureLayerSpec::new(LayerKind::ColorNames, 4),
            ],
            solver: SolverConfig::default(),
            label_sigma: 0.1,
            scale_layers: 10,
            scale_factor: 1.03,
            symmetric_scales: false,
            search_area_factor: 5.0,
            sample_clamp: (200, 300),
            kernel: None,
            reg_min_weight: 0.1,
            reg_slope: 3.0,
            reg_grid: 9,
            normalize_features: true,
        }
    }

    /// Same stack trained through the Gaussian-kernel dual route.
    pub fn khc() -> Self {
        TrackerConfig { kernel: Some(KernelSpec::gaussian(0.2)), ..TrackerConfig::hc() }
    }

    /// Grayscale plus an externally computed layer loaded per frame from
    /// `template` (`{frame}` expands to the 5-digit frame number).
    pub fn external(template: impl Into<String>, cell_size: usize) -> Self {
        TrackerConfig {
            layers: vec![
                FeatureLayerSpec::new(LayerKind::Gray, 4),
                FeatureLayerSpec::external(cell_size, template),
            ],
            ..TrackerConfig::hc()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers.len() < 2 {
            return Err(Error::Config(format!(
                "need at least 2 feature layers, got {}",
                self.layers.len()
            )));
        }
        if self.layers.iter().any(|l| l.cell_size == 0) {
            return Err(Error::Config("feature cell size must be positive".into()));
        }
        if self.scale_layers == 0 {
            return Err(Error::Config("scale pyramid needs at least 1 layer".into()));
        }
        if !(self.scale_factor > 1.0) {
            return Err(Error::Config(format!(
                "scale factor must exceed 1, got {}",
                self.scale_factor
            )));
        }
        if !(self.search_area_factor > 1.0) {
            return Err(Error::Config(format!(
                "search area factor must exceed 1, got {}",
                self.search_area_factor
            )));
        }
        if !(self.label_sigma > 0.0 && self.label_sigma < 0.5) {
            return Err(Error::Config(format!(
                "label sigma must lie in (0, 0.5), got {}",
                self.label_sigma
            )));
        }
        if self.sample_clamp.0 < 32 || self.sample_clamp.0 > self.sample_clamp.1 {
            return Err(Error::Config(format!(
                "bad sample clamp {:?}",
                self.sample_clamp
            )));
        }
        if !(self.reg_min_weight > 0.0) || !(self.reg_slope >= 0.0) || self.reg_grid < 2 {
            return Err(Error::Config("bad regularizer parameters".into()));
        }
        self.solver.validate().map_err(|e| Error::Config(e.to_string()))?;
        if let Some(k) = &self.kernel {
            k.validate().map_err(|e| Error::Config(e.to_string()))?;
        }
        Ok(())
    }
}

impl Default for TrackerConfig {
    fn default() -> Self {
        TrackerConfig::hc()
    }
}

/// Ascending pyramid factors a^τ.
#[derive(Debug, Clone, PartialEq)]
pub struct ScaleSet {
    pub factors: Vec<f64>,
}

impl ScaleSet {
    /// Index of the unit-scale layer.
    pub fn unit_index(&self) -> usize {
        self.factors
            .iter()
            .position(|f| (f - 1.0).abs() < 1e-12)
            .expect("scale set always contains 1.0")
    }
}

fn powers(lo: isize, count: usize, a: f64) -> ScaleSet {
    ScaleSet {
        factors: (0..count).map(|i| a.powi((lo + i as isize) as i32)).collect(),
    }
}

/// Floor-based index set τ ∈ {⌊−(Δ−1)/2⌋, …}, Δ consecutive integers
/// (asymmetric for even Δ: {−5,…,4} at Δ=10).
pub fn scale_factors(delta: usize, a: f64) -> Result<ScaleSet> {
    if delta == 0 || !(a > 1.0) {
        return Err(Error::InvalidInput(format!(
            "scale pyramid needs Δ ≥ 1 and a > 1, got Δ={delta}, a={a}"
        )));
    }
    Ok(powers(-((delta as isize - 1).div_euclid(2) + (delta as isize - 1) % 2), delta, a))
}

/// Symmetric alternative τ ∈ {−⌊Δ/2⌋, …, ⌊Δ/2⌋} with 2⌊Δ/2⌋+1 layers.
pub fn scale_factors_symmetric(delta: usize, a: f64) -> Result<ScaleSet> {
    if delta == 0 || !(a > 1.0) {
        return Err(Error::InvalidInput(format!(
            "scale pyramid needs Δ ≥ 1 and a > 1, got Δ={delta}, a={a}"
        )));
    }
    let half = (delta / 2) as isize;
    Ok(powers(-half, 2 * half as usize + 1, a))
}

/// Everything frozen at init plus the per-frame estimates.
#[derive(Debug, Clone)]
pub struct TrackerState {
    /// Estimated target center (x, y) in frame pixels.
    pub position: (f64, f64),
    /// Estimated target (width, height) in frame pixels.
    pub size: (f64, f64),
    pub filters: StructuralFilter,
    pub regularizer: Regularizer,
    pub frame_index: usize,
    pub last_optimal_map: ConfidenceMap,
    pub scales: ScaleSet,
    /// Common grid (rows, cols); identical for every layer and scale.
    pub grid: (usize, usize),
    /// Fixed resampled sample side in pixels.
    pub sample_side: usize,
    /// Margin cost J over the common grid.
    pub cost: SpatialMap,
    /// Interpolated training features (exponentially blended when the
    /// solver's memory factor is positive).
    pub training_features: Vec<SpectralMap>,
    pub config: TrackerConfig,
    context: ExtractionContext,
}

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

fn lcm(a: usize, b: usize) -> usize {
    a / gcd(a, b) * b
}

/// Sample side and common grid for a target size: the side is the multiple of
/// every cell size nearest to the clamped search region, preferring an odd
/// grid when the cell ratios allow it; the grid is the finest layer's native
/// resolution. External tensors must be produced at `side / cell_size` per
/// frame, so this is part of the public contract.
pub fn sample_geometry(cfg: &TrackerConfig, target: (f64, f64)) -> Result<(usize, (usize, usize))> {
    let raw = cfg.search_area_factor * (target.0 * target.1).sqrt();
    if !raw.is_finite() || raw <= 0.0 {
        return Err(Error::InvalidInput(format!("degenerate target size {target:?}")));
    }
    let clamped = raw.clamp(cfg.sample_clamp.0 as f64, cfg.sample_clamp.1 as f64);
    let min_cell = cfg.layers.iter().map(|l| l.cell_size).min().unwrap();
    let quantum = cfg.layers.iter().fold(min_cell, |acc, l| lcm(acc, l.cell_size));
    let ratio = quantum / min_cell;
    let mut m = (clamped / quantum as f64).round().max(1.0) as usize;
    let (parity_step, want_odd) = if ratio % 2 == 1 { (2, true) } else { (1, false) };
    if want_odd && m % 2 == 0 {
        let below = m - 1;
        let above = m + 1;
        let d_below = (clamped - (below * quantum) as f64).abs();
        let d_above = ((above * quantum) as f64 - clamped).abs();
        m = if d_below < d_above && (below * quantum) as f64 >= cfg.sample_clamp.0 as f64 {
            below
        } else {
            above
        };
    }
    while m * quantum < cfg.sample_clamp.0 {
        m += parity_step;
    }
    while m > parity_step && m * quantum > cfg.sample_clamp.1 {
        m -= parity_step;
    }
    let side = m * quantum;
    let t = side / min_cell;
    if t < 8 {
        return Err(Error::InvalidInput(format!(
            "common grid {t} too coarse for cell sizes {:?}",
            cfg.layers.iter().map(|l| l.cell_size).collect::<Vec<_>>()
        )));
    }
    Ok((side, (t, t)))
}

/// Crops a sample, extracts the stack, and projects every layer onto the
/// common grid. Also returns the crop's span in frame pixels.
fn extract_features(
    frame: &RgbImage,
    center: (f64, f64),
    size: (f64, f64),
    scale: f64,
    side: usize,
    grid: (usize, usize),
    cfg: &TrackerConfig,
    ctx: &ExtractionContext,
) -> Result<(Vec<SpectralMap>, f64)> {
    let crop_cfg = CropConfig {
        area_factor: cfg.search_area_factor,
        clamp: cfg.sample_clamp,
        fixed_side: Some(side),
    };
    let patch = crop_sample(frame, center, size, scale, &crop_cfg)?;
    let region = patch.source_scale * side as f64;
    let stack = extract_stack(&patch, &cfg.layers, ctx)?;
    let mut feats = Vec::with_capacity(stack.layers.len());
    for layer in &stack.layers {
        let row_kernel = spline_kernel(layer.height, 1.0)?;
        let col_kernel = spline_kernel(layer.width, 1.0)?;
        feats.push(interpolate(layer, &row_kernel, &col_kernel, grid.0, grid.1)?);
    }
    Ok((feats, region))
}

fn layer_scores(
    filters: &StructuralFilter,
    feats: &[SpectralMap],
    kernel: Option<&KernelSpec>,
) -> Result<Vec<ConfidenceMap>> {
    match filters.mode {
        FilterMode::Primal => score(filters, feats),
        FilterMode::Dual => {
            let spec = kernel.ok_or_else(|| {
                Error::InvalidInput("dual filters need a kernel specification".into())
            })?;
            filters
                .layers
                .iter()
                .zip(feats.iter())
                .map(|(layer, test)| {
                    let train = layer.training_features.as_ref().ok_or_else(|| {
                        Error::InvalidInput("dual layer is missing its training features".into())
                    })?;
                    let cross = kernel_crosscorrelation(train, test, spec)?;
                    score_dual(&cross, &layer.coefficients)
                })
                .collect()
        }
    }
}

/// Per-layer scores → normalized maps → pairwise products → fused optimal map.
fn fused_scores(
    filters: &StructuralFilter,
    feats: &[SpectralMap],
    kernel: Option<&KernelSpec>,
) -> Result<ConfidenceMap> {
    let maps = layer_scores(filters, feats, kernel)?;
    let probs: Vec<ProbabilityMap> = maps.iter().map(normalize_map).collect();
    let weighted = pairwise_filter(&probs)?;
    fuse(&weighted, probs.len())
}

fn wrap_centered(x: f64) -> f64 {
    x - x.round()
}

/// Maps a fused peak back to frame pixels: the sub-cell peak offset from the
/// label anchor, scaled by the crop's frame-pixel span, displaces the crop
/// center.
fn peak_to_position(
    map: &ConfidenceMap,
    grid: (usize, usize),
    center: (f64, f64),
    region: f64,
    frame_dims: (u32, u32),
) -> (f64, f64) {
    let anchor_x = (grid.1 / 2) as f64 / grid.1 as f64;
    let anchor_y = (grid.0 / 2) as f64 / grid.0 as f64;
    let dx = wrap_centered(map.peak.0 / grid.1 as f64 - anchor_x);
    let dy = wrap_centered(map.peak.1 / grid.0 as f64 - anchor_y);
    (
        (center.0 + dx * region).clamp(0.0, frame_dims.0 as f64 - 1.0),
        (center.1 + dy * region).clamp(0.0, frame_dims.1 as f64 - 1.0),
    )
}

fn train(
    cfg: &TrackerConfig,
    feats: &[SpectralMap],
    cost: &SpatialMap,
    regularizer: &Regularizer,
    warm: Option<&StructuralFilter>,
    outer_iterations: usize,
) -> Result<StructuralFilter> {
    match &cfg.kernel {
        None => {
            let zeros;
            let warm = match warm {
                Some(f) => f,
                None => {
                    zeros = StructuralFilter::zeros_like(feats)?;
                    &zeros
                }
            };
            Ok(train_filters(feats, cost, regularizer, &cfg.solver, warm, outer_iterations)?.0)
        }
        Some(spec) => Ok(train_dual_filters(
            feats,
            cost,
            Some(regularizer),
            spec,
            &cfg.solver,
            warm,
            outer_iterations,
        )?
        .0),
    }
}

/// Builds the full tracking state from the first frame and its target box,
/// training with the init-phase iteration budget.
pub fn init(frame: &RgbImage, bbox: &BoundingBox, cfg: &TrackerConfig) -> Result<TrackerState> {
    cfg.validate()?;
    if !bbox.is_valid() {
        return Err(Error::InvalidInput(format!(
            "degenerate initial box {}x{}",
            bbox.width, bbox.height
        )));
    }
    let (fw, fh) = frame.dimensions();
    let (cx, cy) = bbox.center();
    if !(0.0..fw as f64).contains(&cx) || !(0.0..fh as f64).contains(&cy) {
        return Err(Error::InvalidInput(format!(
            "initial box center ({cx}, {cy}) outside the {fw}x{fh} frame"
        )));
    }
    let (side, grid) = sample_geometry(cfg, (bbox.width, bbox.height))?;
    let scales = if cfg.symmetric_scales {
        scale_factors_symmetric(cfg.scale_layers, cfg.scale_factor)?
    } else {
        scale_factors(cfg.scale_layers, cfg.scale_factor)?
    };
    let label = LabelSpec {
        sigma: cfg.label_sigma,
        center: (
            (grid.1 / 2) as f64 / grid.1 as f64,
            (grid.0 / 2) as f64 / grid.0 as f64,
        ),
    };
    let cost = cost_map(&label, grid.0, grid.1)?;
    let regularizer = build_regularizer(cfg.reg_grid, cfg.reg_grid, cfg.reg_min_weight, cfg.reg_slope)?;
    let mut context = ExtractionContext::new(CnTable::builtin());
    context.normalize = cfg.normalize_features;
    let (feats, _) =
        extract_features(frame, (cx, cy), (bbox.width, bbox.height), 1.0, side, grid, cfg, &context)?;
    let filters = train(cfg, &feats, &cost, &regularizer, None, cfg.solver.init_outer_iterations)?;
    let last_optimal_map = fused_scores(&filters, &feats, cfg.kernel.as_ref())?;
    Ok(TrackerState {
        position: (cx, cy),
        size: (bbox.width, bbox.height),
        filters,
        regularizer,
        frame_index: 1,
        last_optimal_map,
        scales,
        grid,
        sample_side: side,
        cost,
        training_features: feats,
        config: cfg.clone(),
        context,
    })
}

/// Pure detection pass: scores the scale pyramid around the previous position
/// with the previous size, and returns the refined peak of the best fused
/// map in frame pixels, the winning scale index, and that map.
pub fn detect(
    state: &TrackerState,
    frame: &RgbImage,
) -> Result<((f64, f64), usize, ConfidenceMap)> {
    let cfg = &state.config;
    let mut ctx = state.context.clone();
    ctx.frame_index = state.frame_index + 1;
    let mut best: Option<(usize, ConfidenceMap, f64)> = None;
    for (idx, &factor) in state.scales.factors.iter().enumerate() {
        let (feats, region) = extract_features(
            frame,
            state.position,
            state.size,
            factor,
            state.sample_side,
            state.grid,
            cfg,
            &ctx,
        )?;
        let map = fused_scores(&state.filters, &feats, cfg.kernel.as_ref())?;
        if best.as_ref().map_or(true, |(_, b, _)| map.peak_value > b.peak_value) {
            best = Some((idx, map, region));
        }
    }
    let (idx, map, region) = best.expect("scale set is never empty");
    let position = peak_to_position(&map, state.grid, state.position, region, frame.dimensions());
    Ok((position, idx, map))
}

/// Applies the detected position and winning scale, then retrains the filters
/// on a fresh unit-scale sample, warm-started. Returns a new state; the input
/// state stays valid.
pub fn update(
    state: &TrackerState,
    frame: &RgbImage,
    position: (f64, f64),
    size_index: usize,
) -> Result<TrackerState> {
    let cfg = &state.config;
    let factor = *state
        .scales
        .factors
        .get(size_index)
        .ok_or_else(|| Error::InvalidInput(format!("scale index {size_index} out of range")))?;
    let size = (state.size.0 * factor, state.size.1 * factor);
    let mut context = state.context.clone();
    context.frame_index = state.frame_index + 1;
    let (feats, _) = extract_features(
        frame,
        position,
        size,
        1.0,
        state.sample_side,
        state.grid,
        cfg,
        &context,
    )?;
    let memory = cfg.solver.memory;
    let training: Vec<SpectralMap> = if memory > 0.0 {
        state
            .training_features
            .iter()
            .zip(feats.iter())
            .map(|(old, new)| blend_spectra(old, new, memory))
            .collect::<Result<_>>()?
    } else {
        feats
    };
    let filters = train(
        cfg,
        &training,
        &state.cost,
        &state.regularizer,
        Some(&state.filters),
        cfg.solver.outer_iterations,
    )?;
    Ok(TrackerState {
        position,
        size,
        filters,
        regularizer: state.regularizer.clone(),
        frame_index: state.frame_index + 1,
        last_optimal_map: state.last_optimal_map.clone(),
        scales: state.scales.clone(),
        grid: state.grid,
        sample_side: state.sample_side,
        cost: state.cost.clone(),
        training_features: training,
        config: cfg.clone(),
        context,
    })
}

/// old·m + new·(1−m), the exponential training-sample memory.
fn blend_spectra(old: &SpectralMap, new: &SpectralMap, memory: f64) -> Result<SpectralMap> {
    if (old.freq_height, old.freq_width, old.channels)
        != (new.freq_height, new.freq_width, new.channels)
    {
        return Err(Error::ShapeMismatch("memory blend shapes differ".into()));
    }
    let values = old
        .values
        .iter()
        .zip(new.values.iter())
        .map(|(o, n)| o * memory + n * (1.0 - memory))
        .collect();
    SpectralMap::new(
        old.freq_height,
        old.freq_width,
        old.channels,
        values,
        old.real_origin && new.real_origin,
    )
}

/// Init on the first frame, then detect + update per subsequent frame.
/// Emits one box per frame; errors carry the 1-based frame index.
pub fn track_sequence(
    frames: &[RgbImage],
    init_bbox: &BoundingBox,
    cfg: &TrackerConfig,
) -> Result<Trajectory> {
    let first = frames
        .first()
        .ok_or_else(|| Error::InvalidInput("sequence holds no frames".into()))?;
    let wrap = |frame: usize| move |e: Error| Error::Tracking { frame, source: Box::new(e) };
    let mut state = init(first, init_bbox, cfg).map_err(wrap(1))?;
    let mut boxes = Vec::with_capacity(frames.len());
    boxes.push(*init_bbox);
    for (i, frame) in frames.iter().enumerate().skip(1) {
        let (position, size_index, map) = detect(&state, frame).map_err(wrap(i + 1))?;
        state = update(&state, frame, position, size_index).map_err(wrap(i + 1))?;
        state.last_optimal_map = map;
        boxes.push(BoundingBox::new(
            position.0 - state.size.0 / 2.0,
            position.1 - state.size.1 / 2.0,
            state.size.0,
            state.size.1,
        ));
    }
    Ok(Trajectory { boxes })
}
