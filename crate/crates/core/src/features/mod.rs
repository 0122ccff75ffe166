//! Multi-layer feature stacks: sample cropping, handcrafted extractors
//! (grayscale, gradient histograms, color attributes), and externally
//! computed tensors loaded from disk.

mod colornames;
mod external;
mod hog;

pub use colornames::{extract_colornames, load_cn_table, store_cn_table, CnTable};
pub use external::{load_external, store_external};
pub use hog::extract_hog;

use image::RgbImage;

use crate::spectral::SpatialMap;
use crate::{Error, Result};

/// Cropped and resampled search/training sample with the geometry needed to
/// map patch pixels back to frame coordinates.
#[derive(Debug, Clone)]
pub struct Patch {
    /// Interleaved 8-bit RGB, row-major.
    pub pixels: Vec<u8>,
    pub height: usize,
    pub width: usize,
    /// Frame coordinates the crop was centered on.
    pub source_center: (f64, f64),
    /// Frame pixels per patch pixel.
    pub source_scale: f64,
}

impl Patch {
    pub fn new(
        height: usize,
        width: usize,
        pixels: Vec<u8>,
        source_center: (f64, f64),
        source_scale: f64,
    ) -> Result<Self> {
        if height < 8 || width < 8 {
            return Err(Error::InvalidInput(format!("patch must be at least 8x8, got {height}x{width}")));
        }
        if pixels.len() != height * width * 3 {
            return Err(Error::ShapeMismatch(format!(
                "patch expects {} bytes, got {}",
                height * width * 3,
                pixels.len()
            )));
        }
        Ok(Patch { pixels, height, width, source_center, source_scale })
    }

    #[inline]
    pub fn rgb(&self, row: usize, col: usize) -> (u8, u8, u8) {
        let i = (row * self.width + col) * 3;
        (self.pixels[i], self.pixels[i + 1], self.pixels[i + 2])
    }

    /// Rec. 601 luminance in [0, 1].
    #[inline]
    pub fn luminance(&self, row: usize, col: usize) -> f64 {
        let (r, g, b) = self.rgb(row, col);
        (0.299 * r as f64 + 0.587 * g as f64 + 0.114 * b as f64) / 255.0
    }
}

/// Geometry and sizing rules for crop_sample.
#[derive(Debug, Clone, Copy)]
pub struct CropConfig {
    /// Square search region side = areaFactor · √(target area) · scale.
    pub area_factor: f64,
    /// Output side clamp range in pixels when no fixed side is given.
    pub clamp: (usize, usize),
    /// Resample every crop to this side, overriding the clamp rule.
    pub fixed_side: Option<usize>,
}

impl Default for CropConfig {
    fn default() -> Self {
        CropConfig { area_factor: 5.0, clamp: (200, 300), fixed_side: None }
    }
}

/// Crops a square region around `center` covering `area_factor²` times the
/// scaled target area and resamples it to the configured output side.
/// Out-of-frame pixels replicate the nearest edge pixel.
pub fn crop_sample(
    frame: &RgbImage,
    center: (f64, f64),
    target_size: (f64, f64),
    scale: f64,
    cfg: &CropConfig,
) -> Result<Patch> {
    let (fw, fh) = frame.dimensions();
    if fw == 0 || fh == 0 {
        return Err(Error::InvalidInput("frame is empty".into()));
    }
    if !(target_size.0 > 0.0 && target_size.1 > 0.0) {
        return Err(Error::InvalidInput(format!(
            "degenerate target size {}x{}",
            target_size.0, target_size.1
        )));
    }
    if !(scale > 0.0) || !(cfg.area_factor > 0.0) {
        return Err(Error::InvalidInput("scale and area factor must be positive".into()));
    }
    let region = cfg.area_factor * (target_size.0 * target_size.1).sqrt() * scale;
    let out_side = match cfg.fixed_side {
        Some(s) => s,
        None => {
            let rounded = region.round() as i64;
            rounded.clamp(cfg.clamp.0 as i64, cfg.clamp.1 as i64) as usize
        }
    };
    if out_side < 8 {
        return Err(Error::InvalidInput(format!("crop output side {out_side} below the 8 px minimum")));
    }
    let step = region / out_side as f64;
    let anchor = (out_side / 2) as f64;
    let mut pixels = vec![0u8; out_side * out_side * 3];
    for r in 0..out_side {
        let sy = center.1 + (r as f64 - anchor) * step;
        for c in 0..out_side {
            let sx = center.0 + (c as f64 - anchor) * step;
            let (pr, pg, pb) = bilinear(frame, sx, sy);
            let i = (r * out_side + c) * 3;
            pixels[i] = pr;
            pixels[i + 1] = pg;
            pixels[i + 2] = pb;
        }
    }
    Patch::new(out_side, out_side, pixels, center, step)
}

/// Bilinear sample with edge replication; coordinates in pixel centers.
fn bilinear(frame: &RgbImage, x: f64, y: f64) -> (u8, u8, u8) {
    let (fw, fh) = frame.dimensions();
    let cx = x.clamp(0.0, (fw - 1) as f64);
    let cy = y.clamp(0.0, (fh - 1) as f64);
    let x0 = cx.floor() as u32;
    let y0 = cy.floor() as u32;
    let x1 = (x0 + 1).min(fw - 1);
    let y1 = (y0 + 1).min(fh - 1);
    let wx = cx - x0 as f64;
    let wy = cy - y0 as f64;
    let mut out = [0u8; 3];
    for ch in 0..3 {
        let p00 = frame.get_pixel(x0, y0).0[ch] as f64;
        let p01 = frame.get_pixel(x1, y0).0[ch] as f64;
        let p10 = frame.get_pixel(x0, y1).0[ch] as f64;
        let p11 = frame.get_pixel(x1, y1).0[ch] as f64;
        let v = p00 * (1.0 - wx) * (1.0 - wy)
            + p01 * wx * (1.0 - wy)
            + p10 * (1.0 - wx) * wy
            + p11 * wx * wy;
        out[ch] = v.round().clamp(0.0, 255.0) as u8;
    }
    (out[0], out[1], out[2])
}

/// Cell geometry shared by all grid extractors: number of cells per axis and
/// the centered interior offset that drops remainder pixels.
pub(crate) fn cell_grid(patch: &Patch, cell: usize) -> Result<(usize, usize, usize, usize)> {
    if cell == 0 {
        return Err(Error::InvalidInput("cell size must be at least 1".into()));
    }
    let cy = patch.height / cell;
    let cx = patch.width / cell;
    if cy == 0 || cx == 0 {
        return Err(Error::InvalidInput(format!(
            "cell {cell} larger than patch {}x{}",
            patch.height, patch.width
        )));
    }
    let off_y = (patch.height - cy * cell) / 2;
    let off_x = (patch.width - cx * cell) / 2;
    Ok((cy, cx, off_y, off_x))
}

/// Cell-averaged luminance, mean-subtracted so the map sums to zero.
pub fn extract_gray(patch: &Patch, cell: usize) -> Result<SpatialMap> {
    let (cy, cx, off_y, off_x) = cell_grid(patch, cell)?;
    let mut out = SpatialMap::zeros(cy, cx, 1);
    let inv = 1.0 / (cell * cell) as f64;
    for gr in 0..cy {
        for gc in 0..cx {
            let mut acc = 0.0;
            for r in 0..cell {
                for c in 0..cell {
                    acc += patch.luminance(off_y + gr * cell + r, off_x + gc * cell + c);
                }
            }
            out.values[gr * cx + gc] = acc * inv;
        }
    }
    let mean = out.values.iter().sum::<f64>() / out.values.len() as f64;
    for v in out.values.iter_mut() {
        *v -= mean;
    }
    Ok(out)
}

/// Which extractor fills a layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerKind {
    Gray,
    Hog,
    ColorNames,
    External,
}

/// One layer of the feature stack: extractor, cell size, and (for external
/// tensors) the path template with an optional `{frame}` placeholder.
#[derive(Debug, Clone)]
pub struct FeatureLayerSpec {
    pub kind: LayerKind,
    pub cell_size: usize,
    pub external_path_template: Option<String>,
}

impl FeatureLayerSpec {
    pub fn new(kind: LayerKind, cell_size: usize) -> Self {
        FeatureLayerSpec { kind, cell_size, external_path_template: None }
    }

    pub fn external(cell_size: usize, template: impl Into<String>) -> Self {
        FeatureLayerSpec {
            kind: LayerKind::External,
            cell_size,
            external_path_template: Some(template.into()),
        }
    }
}

/// Ordered per-layer feature maps at their native resolutions.
#[derive(Debug, Clone)]
pub struct FeatureStack {
    pub layers: Vec<SpatialMap>,
}

/// Shared immutable inputs for stack extraction.
#[derive(Debug, Clone)]
pub struct ExtractionContext {
    pub cn_table: CnTable,
    /// 1-based frame index substituted into external path templates.
    pub frame_index: usize,
    /// Rescale every channel to unit mean squared value.
    pub normalize: bool,
}

impl ExtractionContext {
    pub fn new(cn_table: CnTable) -> Self {
        ExtractionContext { cn_table, frame_index: 1, normalize: true }
    }
}

/// Resolves an external layer's path for the context's frame index:
/// `{frame}` expands to the zero-padded 5-digit index.
fn external_path(template: &str, frame_index: usize) -> String {
    template.replace("{frame}", &format!("{frame_index:05}"))
}

/// Extracts every layer in spec order and applies per-channel energy
/// normalization (unit mean squared value, zero channels left untouched).
pub fn extract_stack(
    patch: &Patch,
    specs: &[FeatureLayerSpec],
    ctx: &ExtractionContext,
) -> Result<FeatureStack> {
    if specs.len() < 2 {
        return Err(Error::InvalidInput(format!(
            "feature stack needs at least 2 layers, got {}",
            specs.len()
        )));
    }
    let mut layers = Vec::with_capacity(specs.len());
    for spec in specs {
        let mut layer = match spec.kind {
            LayerKind::Gray => extract_gray(patch, spec.cell_size)?,
            LayerKind::Hog => extract_hog(patch, spec.cell_size)?,
            LayerKind::ColorNames => extract_colornames(patch, spec.cell_size, &ctx.cn_table)?,
            LayerKind::External => {
                let template = spec.external_path_template.as_deref().ok_or_else(|| {
                    Error::InvalidInput("external layer needs a path template".into())
                })?;
                let map = load_external(external_path(template, ctx.frame_index))?;
                let (cy, cx, _, _) = cell_grid(patch, spec.cell_size)?;
                if map.height != cy || map.width != cx {
                    return Err(Error::ShapeMismatch(format!(
                        "external tensor {}x{} does not match patch/cell {}x{}",
                        map.height, map.width, cy, cx
                    )));
                }
                map
            }
        };
        if !layer.is_finite() {
            return Err(Error::NonFinite("feature layer"));
        }
        if ctx.normalize {
            normalize_channels(&mut layer);
        }
        layers.push(layer);
    }
    Ok(FeatureStack { layers })
}

/// Rescales each channel so its mean squared value is one; all-zero channels
/// stay zero.
pub fn normalize_channels(map: &mut SpatialMap) {
    let plane = map.height * map.width;
    for ch in 0..map.channels {
        let start = ch * plane;
        let energy: f64 = map.values[start..start + plane].iter().map(|v| v * v).sum();
        let mean_sq = energy / plane as f64;
        if mean_sq > 0.0 {
            let s = 1.0 / mean_sq.sqrt();
            for v in &mut map.values[start..start + plane] {
                *v *= s;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use image::Rgb;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn textured_frame(w: u32, h: u32, seed: u64) -> RgbImage {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        RgbImage::from_fn(w, h, |_, _| Rgb([rng.gen(), rng.gen(), rng.gen()]))
    }

    fn uniform_patch(h: usize, w: usize, rgb: (u8, u8, u8)) -> Patch {
        let mut pixels = Vec::with_capacity(h * w * 3);
        for _ in 0..h * w {
            pixels.extend_from_slice(&[rgb.0, rgb.1, rgb.2]);
        }
        Patch::new(h, w, pixels, (0.0, 0.0), 1.0).unwrap()
    }

    #[test]
    fn crop_of_small_target_needs_no_resize() {
        let frame = textured_frame(400, 400, 1);
        let patch = crop_sample(&frame, (200.0, 200.0), (40.0, 40.0), 1.0, &CropConfig::default())
            .unwrap();
        assert_eq!((patch.height, patch.width), (200, 200));
        assert_eq!(patch.source_scale, 1.0);
        // integer center and unit step: every patch pixel is an exact source pixel
        for r in (0..200).step_by(37) {
            for c in (0..200).step_by(41) {
                let sx = 200 + c as i64 - 100;
                let sy = 200 + r as i64 - 100;
                let src = frame.get_pixel(sx as u32, sy as u32).0;
                assert_eq!(patch.rgb(r, c), (src[0], src[1], src[2]));
            }
        }
    }

    #[test]
    fn crop_of_large_target_clamps_to_upper_bound() {
        let frame = textured_frame(600, 600, 2);
        let patch = crop_sample(&frame, (300.0, 300.0), (100.0, 100.0), 1.0, &CropConfig::default())
            .unwrap();
        assert_eq!((patch.height, patch.width), (300, 300));
        assert!((patch.source_scale - 500.0 / 300.0).abs() < 1e-12);
    }

    #[test]
    fn crop_at_corner_replicates_edges() {
        let frame = textured_frame(64, 64, 3);
        let cfg = CropConfig { fixed_side: Some(40), ..CropConfig::default() };
        let patch = crop_sample(&frame, (0.0, 0.0), (8.0, 8.0), 1.0, &cfg).unwrap();
        assert_eq!((patch.height, patch.width), (40, 40));
        let corner = frame.get_pixel(0, 0).0;
        // region extends far past the top-left corner; its first pixel clamps
        assert_eq!(patch.rgb(0, 0), (corner[0], corner[1], corner[2]));
    }

    #[test]
    fn crop_rejects_degenerate_target() {
        let frame = textured_frame(64, 64, 4);
        assert!(crop_sample(&frame, (32.0, 32.0), (0.0, 10.0), 1.0, &CropConfig::default()).is_err());
    }

    #[test]
    fn crop_output_side_is_deterministic() {
        let frame = textured_frame(128, 128, 5);
        for &(w, h, expect) in &[(40.0, 40.0, 200), (10.0, 10.0, 200), (100.0, 100.0, 300), (48.0, 48.0, 240)] {
            let p = crop_sample(&frame, (64.0, 64.0), (w, h), 1.0, &CropConfig::default()).unwrap();
            assert_eq!(p.height, expect);
        }
    }

    #[test]
    fn gray_of_uniform_patch_is_zero() {
        let patch = uniform_patch(16, 16, (90, 90, 90));
        let map = extract_gray(&patch, 2).unwrap();
        assert_eq!((map.height, map.width), (8, 8));
        assert!(map.values.iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn gray_checkerboard_gives_half_amplitudes() {
        let cell = 4;
        let mut pixels = vec![0u8; 8 * 8 * 3];
        for r in 0..8 {
            for c in 0..8 {
                let white = ((r / cell) + (c / cell)) % 2 == 0;
                let v = if white { 255 } else { 0 };
                let i = (r * 8 + c) * 3;
                pixels[i] = v;
                pixels[i + 1] = v;
                pixels[i + 2] = v;
            }
        }
        let patch = Patch::new(8, 8, pixels, (0.0, 0.0), 1.0).unwrap();
        let map = extract_gray(&patch, cell).unwrap();
        assert_eq!((map.height, map.width), (2, 2));
        assert!((map.at(0, 0, 0) - 0.5).abs() < 1e-9);
        assert!((map.at(0, 0, 1) + 0.5).abs() < 1e-9);
        assert!((map.at(0, 1, 0) + 0.5).abs() < 1e-9);
        assert!((map.at(0, 1, 1) - 0.5).abs() < 1e-9);
    }

    #[test]
    fn gray_cell_one_is_per_pixel_luminance_minus_mean() {
        let frame = textured_frame(16, 16, 6);
        let patch = crop_sample(&frame, (8.0, 8.0), (3.0, 3.0), 1.0, &CropConfig {
            fixed_side: Some(10),
            ..CropConfig::default()
        })
        .unwrap();
        let map = extract_gray(&patch, 1).unwrap();
        let mean: f64 =
            (0..10).flat_map(|r| (0..10).map(move |c| (r, c))).map(|(r, c)| patch.luminance(r, c)).sum::<f64>()
                / 100.0;
        for r in 0..10 {
            for c in 0..10 {
                assert!((map.at(0, r, c) - (patch.luminance(r, c) - mean)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn gray_values_stay_in_unit_interval() {
        let frame = textured_frame(64, 64, 7);
        let cfg = CropConfig { fixed_side: Some(32), ..CropConfig::default() };
        let patch = crop_sample(&frame, (32.0, 32.0), (10.0, 10.0), 1.0, &cfg).unwrap();
        let map = extract_gray(&patch, 4).unwrap();
        assert!(map.values.iter().all(|v| (-1.0..=1.0).contains(v)));
    }

    #[test]
    fn stack_respects_layer_order_and_resolutions() {
        let patch = uniform_patch(8, 8, (10, 200, 30));
        let specs = vec![
            FeatureLayerSpec::new(LayerKind::Gray, 1),
            FeatureLayerSpec::new(LayerKind::Gray, 2),
        ];
        let ctx = ExtractionContext::new(CnTable::builtin());
        let stack = extract_stack(&patch, &specs, &ctx).unwrap();
        assert_eq!(stack.layers.len(), 2);
        assert_eq!((stack.layers[0].height, stack.layers[0].width), (8, 8));
        assert_eq!((stack.layers[1].height, stack.layers[1].width), (4, 4));
    }

    #[test]
    fn stack_rejects_single_layer() {
        let patch = uniform_patch(8, 8, (0, 0, 0));
        let ctx = ExtractionContext::new(CnTable::builtin());
        let specs = vec![FeatureLayerSpec::new(LayerKind::Gray, 1)];
        assert!(extract_stack(&patch, &specs, &ctx).is_err());
    }

    #[test]
    fn stack_normalization_gives_unit_mean_square() {
        let frame = textured_frame(128, 128, 8);
        let cfg = CropConfig { fixed_side: Some(48), ..CropConfig::default() };
        let patch = crop_sample(&frame, (64.0, 64.0), (12.0, 12.0), 1.0, &cfg).unwrap();
        let specs = vec![
            FeatureLayerSpec::new(LayerKind::Gray, 4),
            FeatureLayerSpec::new(LayerKind::Hog, 4),
            FeatureLayerSpec::new(LayerKind::ColorNames, 4),
        ];
        let ctx = ExtractionContext::new(CnTable::builtin());
        let stack = extract_stack(&patch, &specs, &ctx).unwrap();
        for layer in &stack.layers {
            let plane = layer.height * layer.width;
            for ch in 0..layer.channels {
                let ms: f64 =
                    layer.plane(ch).iter().map(|v| v * v).sum::<f64>() / plane as f64;
                if ms > 0.0 {
                    assert!((ms - 1.0).abs() < 1e-6, "channel {ch} mean square {ms}");
                }
            }
        }
    }

    #[test]
    fn external_layer_passes_through_up_to_scale() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("feat_00001.bin");
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let values: Vec<f64> = (0..4 * 4 * 2).map(|_| rng.gen::<f32>() as f64).collect();
        let map = SpatialMap::new(4, 4, 2, values.clone()).unwrap();
        store_external(&path, &map).unwrap();

        let patch = uniform_patch(8, 8, (1, 2, 3));
        let specs = vec![
            FeatureLayerSpec::new(LayerKind::Gray, 1),
            FeatureLayerSpec::external(2, dir.path().join("feat_{frame}.bin").to_str().unwrap()),
        ];
        let ctx = ExtractionContext::new(CnTable::builtin());
        let stack = extract_stack(&patch, &specs, &ctx).unwrap();
        let ext = &stack.layers[1];
        assert_eq!(ext.channels, 2);
        for ch in 0..2 {
            let plane = ext.plane(ch);
            let orig = map.plane(ch);
            let ratio = plane[0] / orig[0];
            for (a, b) in plane.iter().zip(orig.iter()) {
                assert!((a - b * ratio).abs() < 1e-9, "pass-through must only rescale");
            }
        }
    }

    #[test]
    fn external_layer_shape_mismatch_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.bin");
        let map = SpatialMap::new(3, 3, 1, vec![0.5; 9]).unwrap();
        store_external(&path, &map).unwrap();
        let patch = uniform_patch(8, 8, (1, 2, 3));
        let specs = vec![
            FeatureLayerSpec::new(LayerKind::Gray, 1),
            FeatureLayerSpec::external(2, path.to_str().unwrap()),
        ];
        let ctx = ExtractionContext::new(CnTable::builtin());
        assert!(extract_stack(&patch, &specs, &ctx).is_err());
    }
}
