//! Color-attribute features: every RGB pixel maps through a 32×32×32-bin
//! lookup table to a 10-way probability distribution over color names, which
//! extract_colornames averages per cell.
//!
//! A table can be loaded from the documented binary sidecar format; the
//! builtin fallback assigns probabilities by softmax over distances to ten
//! reference colors so the pipeline runs without external assets.

use std::path::Path;

use crate::features::{cell_grid, Patch};
use crate::spectral::SpatialMap;
use crate::{Error, Result};

pub const CN_CHANNELS: usize = 10;
const BINS: usize = 32;
const TABLE_ROWS: usize = BINS * BINS * BINS;
const TABLE_BYTES: usize = TABLE_ROWS * CN_CHANNELS * 4;

/// Reference RGB for each color-name channel, in channel order:
/// black, blue, brown, green, grey, orange, purple, red, white, yellow.
const ANCHORS: [(f64, f64, f64); CN_CHANNELS] = [
    (0.0, 0.0, 0.0),
    (0.0, 0.0, 255.0),
    (139.0, 69.0, 19.0),
    (0.0, 128.0, 0.0),
    (128.0, 128.0, 128.0),
    (255.0, 165.0, 0.0),
    (128.0, 0.0, 128.0),
    (255.0, 0.0, 0.0),
    (255.0, 255.0, 255.0),
    (255.0, 255.0, 0.0),
];

/// 32768-row lookup from quantized RGB to color-name probabilities.
#[derive(Debug, Clone)]
pub struct CnTable {
    rows: Vec<[f32; CN_CHANNELS]>,
}

impl CnTable {
    /// Synthetic table: softmax over negative squared distances to the ten
    /// reference colors, evaluated at each bin center.
    pub fn builtin() -> Self {
        let scale = 2.0 * 76.5 * 76.5;
        let mut rows = Vec::with_capacity(TABLE_ROWS);
        for rb in 0..BINS {
            let r = rb as f64 * 8.0 + 3.5;
            for gb in 0..BINS {
                let g = gb as f64 * 8.0 + 3.5;
                for bb in 0..BINS {
                    let b = bb as f64 * 8.0 + 3.5;
                    let mut probs = [0.0f64; CN_CHANNELS];
                    let mut total = 0.0;
                    for (i, &(ar, ag, ab)) in ANCHORS.iter().enumerate() {
                        let d2 = (r - ar).powi(2) + (g - ag).powi(2) + (b - ab).powi(2);
                        let p = (-d2 / scale).exp();
                        probs[i] = p;
                        total += p;
                    }
                    let mut row = [0.0f32; CN_CHANNELS];
                    for (dst, p) in row.iter_mut().zip(probs.iter()) {
                        *dst = (p / total) as f32;
                    }
                    rows.push(row);
                }
            }
        }
        CnTable { rows }
    }

    #[inline]
    pub fn lookup(&self, r: u8, g: u8, b: u8) -> &[f32; CN_CHANNELS] {
        let idx = ((r as usize) >> 3) * BINS * BINS + ((g as usize) >> 3) * BINS + ((b as usize) >> 3);
        &self.rows[idx]
    }
}

/// Loads a table from the binary sidecar layout: 32768 rows × 10 little-endian
/// 32-bit floats, RGB-bin row-major.
pub fn load_cn_table(path: impl AsRef<Path>) -> Result<CnTable> {
    let bytes = std::fs::read(path)?;
    if bytes.len() < TABLE_BYTES {
        return Err(Error::Truncated { expected: TABLE_BYTES, found: bytes.len() });
    }
    if bytes.len() > TABLE_BYTES {
        return Err(Error::InvalidInput(format!(
            "color table has {} trailing bytes",
            bytes.len() - TABLE_BYTES
        )));
    }
    let mut rows = Vec::with_capacity(TABLE_ROWS);
    for chunk in bytes.chunks_exact(CN_CHANNELS * 4) {
        let mut row = [0.0f32; CN_CHANNELS];
        for (i, v) in row.iter_mut().enumerate() {
            let b: [u8; 4] = chunk[i * 4..i * 4 + 4].try_into().unwrap();
            *v = f32::from_le_bytes(b);
            if !v.is_finite() {
                return Err(Error::NonFinite("color table"));
            }
        }
        rows.push(row);
    }
    Ok(CnTable { rows })
}

/// Writes a table in the sidecar layout read by `load_cn_table`.
pub fn store_cn_table(path: impl AsRef<Path>, table: &CnTable) -> Result<()> {
    let mut bytes = Vec::with_capacity(TABLE_BYTES);
    for row in &table.rows {
        for v in row {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    std::fs::write(path, bytes)?;
    Ok(())
}

/// Per-cell average of the 10-channel color-name probabilities.
pub fn extract_colornames(patch: &Patch, cell: usize, table: &CnTable) -> Result<SpatialMap> {
    let (cy, cx, off_y, off_x) = cell_grid(patch, cell)?;
    let mut out = SpatialMap::zeros(cy, cx, CN_CHANNELS);
    let plane = cy * cx;
    let inv = 1.0 / (cell * cell) as f64;
    for gr in 0..cy {
        for gc in 0..cx {
            let mut acc = [0.0f64; CN_CHANNELS];
            for r in 0..cell {
                for c in 0..cell {
                    let (pr, pg, pb) = patch.rgb(off_y + gr * cell + r, off_x + gc * cell + c);
                    let row = table.lookup(pr, pg, pb);
                    for (a, v) in acc.iter_mut().zip(row.iter()) {
                        *a += *v as f64;
                    }
                }
            }
            for (ch, a) in acc.iter().enumerate() {
                out.values[ch * plane + gr * cx + gc] = a * inv;
            }
        }
    }
    Ok(out)
}
