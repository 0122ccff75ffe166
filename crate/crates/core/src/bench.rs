//! OTB-style evaluation: center-distance and overlap precision, success
//! curves, ground-truth file I/O, and a seeded synthetic sequence generator
//! for deterministic end-to-end tests.

use std::fs;
use std::io::Write as _;
use std::path::Path;

use image::RgbImage;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::{Error, Result};

/// Axis-aligned box with a 0-based top-left corner, in pixels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundingBox {
    pub x: f64,
    pub y: f64,
    pub width: f64,
    pub height: f64,
}

impl BoundingBox {
    pub fn new(x: f64, y: f64, width: f64, height: f64) -> Self {
        BoundingBox { x, y, width, height }
    }

    pub fn center(&self) -> (f64, f64) {
        (self.x + self.width / 2.0, self.y + self.height / 2.0)
    }

    pub fn is_valid(&self) -> bool {
        [self.x, self.y, self.width, self.height].iter().all(|v| v.is_finite())
            && self.width > 0.0
            && self.height > 0.0
    }
}

/// One box per frame.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Trajectory {
    pub boxes: Vec<BoundingBox>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.boxes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.boxes.is_empty()
    }
}

/// Intersection over union; any empty union (two degenerate boxes) scores 0.
pub fn iou(a: &BoundingBox, b: &BoundingBox) -> f64 {
    let ix = (a.x + a.width).min(b.x + b.width) - a.x.max(b.x);
    let iy = (a.y + a.height).min(b.y + b.height) - a.y.max(b.y);
    let inter = ix.max(0.0) * iy.max(0.0);
    let union = a.width * a.height + b.width * b.height - inter;
    if union > 0.0 {
        inter / union
    } else {
        0.0
    }
}

/// Euclidean distance between box centers.
pub fn center_error(a: &BoundingBox, b: &BoundingBox) -> f64 {
    let (ax, ay) = a.center();
    let (bx, by) = b.center();
    ((ax - bx).powi(2) + (ay - by).powi(2)).sqrt()
}

fn check_lengths(trajectory: &Trajectory, ground_truth: &Trajectory) -> Result<()> {
    if trajectory.len() != ground_truth.len() || trajectory.is_empty() {
        return Err(Error::LengthMismatch {
            trajectory: trajectory.len(),
            ground_truth: ground_truth.len(),
        });
    }
    Ok(())
}

/// Fraction of frames whose center error is strictly below `threshold` px.
pub fn distance_precision(
    trajectory: &Trajectory,
    ground_truth: &Trajectory,
    threshold: f64,
) -> Result<f64> {
    check_lengths(trajectory, ground_truth)?;
    let hits = trajectory
        .boxes
        .iter()
        .zip(ground_truth.boxes.iter())
        .filter(|(a, b)| center_error(a, b) < threshold)
        .count();
    Ok(hits as f64 / trajectory.len() as f64)
}

/// Fraction of frames whose IoU is strictly above `threshold`.
pub fn overlap_precision(
    trajectory: &Trajectory,
    ground_truth: &Trajectory,
    threshold: f64,
) -> Result<f64> {
    check_lengths(trajectory, ground_truth)?;
    let hits = trajectory
        .boxes
        .iter()
        .zip(ground_truth.boxes.iter())
        .filter(|(a, b)| iou(a, b) > threshold)
        .count();
    Ok(hits as f64 / trajectory.len() as f64)
}

/// Overlap precision at 101 thresholds 0.00, 0.01, …, 1.00.
pub fn success_curve(
    trajectory: &Trajectory,
    ground_truth: &Trajectory,
) -> Result<Vec<(f64, f64)>> {
    check_lengths(trajectory, ground_truth)?;
    let ious: Vec<f64> = trajectory
        .boxes
        .iter()
        .zip(ground_truth.boxes.iter())
        .map(|(a, b)| iou(a, b))
        .collect();
    Ok((0..=100)
        .map(|i| {
            let t = i as f64 / 100.0;
            let frac = ious.iter().filter(|v| **v > t).count() as f64 / ious.len() as f64;
            (t, frac)
        })
        .collect())
}

/// Center-distance precision at thresholds 0, 1, …, 50 px.
pub fn precision_curve(
    trajectory: &Trajectory,
    ground_truth: &Trajectory,
) -> Result<Vec<(f64, f64)>> {
    check_lengths(trajectory, ground_truth)?;
    let errors: Vec<f64> = trajectory
        .boxes
        .iter()
        .zip(ground_truth.boxes.iter())
        .map(|(a, b)| center_error(a, b))
        .collect();
    Ok((0..=50)
        .map(|i| {
            let t = i as f64;
            let frac = errors.iter().filter(|e| **e < t).count() as f64 / errors.len() as f64;
            (t, frac)
        })
        .collect())
}

/// Mean of the success-curve fractions.
pub fn success_auc(curve: &[(f64, f64)]) -> f64 {
    if curve.is_empty() {
        return 0.0;
    }
    curve.iter().map(|(_, f)| f).sum::<f64>() / curve.len() as f64
}

/// Aggregate scores over one sequence.
#[derive(Debug, Clone)]
pub struct MetricsReport {
    pub dp20: f64,
    pub op50: f64,
    pub auc: f64,
    pub success_curve: Vec<(f64, f64)>,
    pub precision_curve: Vec<(f64, f64)>,
    pub mean_fps: f64,
}

pub fn evaluate(
    trajectory: &Trajectory,
    ground_truth: &Trajectory,
    elapsed_seconds: f64,
) -> Result<MetricsReport> {
    let success = success_curve(trajectory, ground_truth)?;
    let precision = precision_curve(trajectory, ground_truth)?;
    Ok(MetricsReport {
        dp20: distance_precision(trajectory, ground_truth, 20.0)?,
        op50: overlap_precision(trajectory, ground_truth, 0.5)?,
        auc: success_auc(&success),
        success_curve: success,
        precision_curve: precision,
        mean_fps: if elapsed_seconds > 0.0 {
            trajectory.len() as f64 / elapsed_seconds
        } else {
            0.0
        },
    })
}

/// Reads one `x,y,w,h` box per line (comma, space, or tab separated) with
/// the on-disk 1-based corner convention; coordinates come back 0-based.
pub fn load_ground_truth(path: impl AsRef<Path>) -> Result<Trajectory> {
    let text = fs::read_to_string(path.as_ref())?;
    let mut boxes = Vec::new();
    for (number, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<f64> = line
            .split(|c: char| c == ',' || c.is_whitespace())
            .filter(|s| !s.is_empty())
            .map(|s| {
                s.parse::<f64>().map_err(|_| {
                    Error::InvalidInput(format!("line {}: bad number {s:?}", number + 1))
                })
            })
            .collect::<Result<_>>()?;
        if fields.len() != 4 {
            return Err(Error::InvalidInput(format!(
                "line {}: expected 4 fields, found {}",
                number + 1,
                fields.len()
            )));
        }
        boxes.push(BoundingBox::new(fields[0] - 1.0, fields[1] - 1.0, fields[2], fields[3]));
    }
    if boxes.is_empty() {
        return Err(Error::InvalidInput("ground-truth file holds no boxes".into()));
    }
    Ok(Trajectory { boxes })
}

/// Writes a trajectory in the 1-based `x,y,w,h` format, atomically
/// (temp file in the target directory, then rename).
pub fn store_trajectory(path: impl AsRef<Path>, trajectory: &Trajectory) -> Result<()> {
    let path = path.as_ref();
    let mut text = String::new();
    for b in &trajectory.boxes {
        text.push_str(&format!(
            "{:.4},{:.4},{:.4},{:.4}\n",
            b.x + 1.0,
            b.y + 1.0,
            b.width,
            b.height
        ));
    }
    write_atomic(path, text.as_bytes())
}

/// Write-then-rename so readers never observe partial output.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty());
    let file_name = path
        .file_name()
        .ok_or_else(|| Error::InvalidInput(format!("not a file path: {}", path.display())))?;
    let mut tmp = path.to_path_buf();
    let mut tmp_name = file_name.to_os_string();
    tmp_name.push(".tmp");
    tmp.set_file_name(tmp_name);
    if let Some(dir) = dir {
        fs::create_dir_all(dir)?;
    }
    let mut f = fs::File::create(&tmp)?;
    f.write_all(bytes)?;
    f.sync_all()?;
    drop(f);
    fs::rename(&tmp, path)?;
    Ok(())
}

/// Seeded synthetic scene: a textured square target moving with constant
/// velocity and exponential scale growth over a smoothly shaded static
/// background.
#[derive(Debug, Clone, Copy)]
pub struct SynthConfig {
    /// Frame (width, height) in pixels.
    pub frame_size: (u32, u32),
    /// Initial target (width, height).
    pub target_size: (f64, f64),
    /// Target center in the first frame.
    pub start_center: (f64, f64),
    /// Center displacement per frame, in pixels.
    pub velocity: (f64, f64),
    /// Per-frame multiplicative size change.
    pub scale_growth: f64,
    pub frames: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            frame_size: (480, 360),
            target_size: (40.0, 40.0),
            start_center: (80.0, 70.0),
            velocity: (2.0, 1.4),
            scale_growth: 1.01,
            frames: 100,
            seed: 7,
        }
    }
}

const TEXTURE_SIDE: usize = 64;

fn target_texture(rng: &mut ChaCha8Rng) -> Vec<[f64; 3]> {
    let mut grating = [[0.0; 3]; 3];
    for g in grating.iter_mut() {
        g[0] = rng.gen_range(0.05..0.16);
        g[1] = rng.gen_range(0.05..0.16);
        g[2] = rng.gen_range(0.0..std::f64::consts::TAU);
    }
    let mut tex = Vec::with_capacity(TEXTURE_SIDE * TEXTURE_SIDE);
    for r in 0..TEXTURE_SIDE {
        for c in 0..TEXTURE_SIDE {
            let mut px = [0.0; 3];
            for (ch, v) in px.iter_mut().enumerate() {
                let [fr, fc, phase] = grating[ch];
                let wave =
                    (std::f64::consts::TAU * (fr * r as f64 + fc * c as f64) + phase).sin();
                *v = (170.0 + 60.0 * wave + rng.gen_range(-25.0..25.0)).clamp(0.0, 255.0);
            }
            tex.push(px);
        }
    }
    tex
}

fn sample_texture(tex: &[[f64; 3]], u: f64, v: f64) -> [f64; 3] {
    let side = TEXTURE_SIDE as f64;
    let x = (u * side - 0.5).clamp(0.0, side - 1.0);
    let y = (v * side - 0.5).clamp(0.0, side - 1.0);
    let x0 = x.floor() as usize;
    let y0 = y.floor() as usize;
    let x1 = (x0 + 1).min(TEXTURE_SIDE - 1);
    let y1 = (y0 + 1).min(TEXTURE_SIDE - 1);
    let fx = x - x0 as f64;
    let fy = y - y0 as f64;
    let mut out = [0.0; 3];
    for ch in 0..3 {
        let top = tex[y0 * TEXTURE_SIDE + x0][ch] * (1.0 - fx) + tex[y0 * TEXTURE_SIDE + x1][ch] * fx;
        let bot = tex[y1 * TEXTURE_SIDE + x0][ch] * (1.0 - fx) + tex[y1 * TEXTURE_SIDE + x1][ch] * fx;
        out[ch] = top * (1.0 - fy) + bot * fy;
    }
    out
}

/// Renders the sequence and its exact floating-point ground truth.
pub fn synth_sequence(cfg: &SynthConfig) -> Result<(Vec<RgbImage>, Trajectory)> {
    if cfg.frames == 0 {
        return Err(Error::InvalidInput("synthetic sequence needs at least 1 frame".into()));
    }
    if cfg.frame_size.0 < 16 || cfg.frame_size.1 < 16 {
        return Err(Error::InvalidInput("synthetic frame must be at least 16x16".into()));
    }
    if !(cfg.target_size.0 >= 4.0 && cfg.target_size.1 >= 4.0) {
        return Err(Error::InvalidInput("synthetic target must be at least 4x4".into()));
    }
    if !(cfg.scale_growth > 0.0) {
        return Err(Error::InvalidInput("scale growth must be positive".into()));
    }
    let (fw, fh) = cfg.frame_size;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let tex = target_texture(&mut rng);
    let phase_x = rng.gen_range(0.0..std::f64::consts::TAU);
    let phase_y = rng.gen_range(0.0..std::f64::consts::TAU);
    let mut background = RgbImage::new(fw, fh);
    for (x, y, px) in background.enumerate_pixels_mut() {
        let shade = 10.0
            * ((x as f64 / fw as f64 * std::f64::consts::TAU + phase_x).sin()
                + (y as f64 / fh as f64 * std::f64::consts::TAU + phase_y).sin());
        for ch in 0..3 {
            px.0[ch] = (45.0 + shade).clamp(0.0, 255.0) as u8;
        }
    }

    let mut frames = Vec::with_capacity(cfg.frames);
    let mut boxes = Vec::with_capacity(cfg.frames);
    for t in 0..cfg.frames {
        let growth = cfg.scale_growth.powi(t as i32);
        let w = cfg.target_size.0 * growth;
        let h = cfg.target_size.1 * growth;
        let cx = cfg.start_center.0 + cfg.velocity.0 * t as f64;
        let cy = cfg.start_center.1 + cfg.velocity.1 * t as f64;
        let bbox = BoundingBox::new(cx - w / 2.0, cy - h / 2.0, w, h);
        let mut frame = background.clone();
        let px_lo = bbox.x.floor().max(0.0) as u32;
        let px_hi = ((bbox.x + w).ceil() as i64).clamp(0, fw as i64) as u32;
        let py_lo = bbox.y.floor().max(0.0) as u32;
        let py_hi = ((bbox.y + h).ceil() as i64).clamp(0, fh as i64) as u32;
        for py in py_lo..py_hi {
            for px in px_lo..px_hi {
                let u = (px as f64 + 0.5 - bbox.x) / w;
                let v = (py as f64 + 0.5 - bbox.y) / h;
                if (0.0..1.0).contains(&u) && (0.0..1.0).contains(&v) {
                    let c = sample_texture(&tex, u, v);
                    frame.put_pixel(px, py, image::Rgb([c[0] as u8, c[1] as u8, c[2] as u8]));
                }
            }
        }
        frames.push(frame);
        boxes.push(bbox);
    }
    Ok((frames, Trajectory { boxes }))
}
