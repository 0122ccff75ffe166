//! 31-channel histogram-of-oriented-gradients features: 18 contrast-sensitive
//! and 9 contrast-insensitive orientation channels plus 4 texture-energy
//! channels, block-normalized with truncation at 0.2.

use crate::features::{cell_grid, Patch};
use crate::spectral::SpatialMap;
use crate::Result;

const ORIENTATIONS: usize = 9;
const TRUNCATION: f64 = 0.2;
const NORM_EPS: f64 = 1e-4;
const TEXTURE_GAIN: f64 = 0.2357;

/// Extracts the 31-channel gradient feature map at `patch/cell` resolution.
/// Boundary cells reuse their nearest interior block norms instead of being
/// dropped, so every cell of the grid is emitted.
pub fn extract_hog(patch: &Patch, cell: usize) -> Result<SpatialMap> {
    if patch.height < 3 * cell || patch.width < 3 * cell {
        return Err(crate::Error::InvalidInput(format!(
            "patch {}x{} too small for 3 cells of {cell} px",
            patch.height, patch.width
        )));
    }
    let (cy, cx, off_y, off_x) = cell_grid(patch, cell)?;
    let used_h = cy * cell;
    let used_w = cx * cell;

    let mut uu = [0.0f64; ORIENTATIONS];
    let mut vv = [0.0f64; ORIENTATIONS];
    for (o, (u, v)) in uu.iter_mut().zip(vv.iter_mut()).enumerate() {
        let ang = std::f64::consts::PI * o as f64 / ORIENTATIONS as f64;
        *u = ang.cos();
        *v = ang.sin();
    }

    // orientation histograms over cells, 18 signed bins
    let mut hist = vec![0.0f64; cy * cx * 2 * ORIENTATIONS];
    let grad = |row: isize, col: isize, ch: usize| -> f64 {
        let r = row.clamp(0, patch.height as isize - 1) as usize;
        let c = col.clamp(0, patch.width as isize - 1) as usize;
        let (pr, pg, pb) = patch.rgb(r, c);
        [pr, pg, pb][ch] as f64
    };
    for y in 0..used_h {
        let ay = (off_y + y) as isize;
        for x in 0..used_w {
            let ax = (off_x + x) as isize;
            let mut dx = 0.0;
            let mut dy = 0.0;
            let mut mag2 = -1.0;
            for ch in 0..3 {
                let gx = grad(ay, ax + 1, ch) - grad(ay, ax - 1, ch);
                let gy = grad(ay + 1, ax, ch) - grad(ay - 1, ax, ch);
                let m = gx * gx + gy * gy;
                if m > mag2 {
                    mag2 = m;
                    dx = gx;
                    dy = gy;
                }
            }
            let v = mag2.sqrt();
            let mut best = 0.0;
            let mut best_bin = 0usize;
            for o in 0..ORIENTATIONS {
                let dot = uu[o] * dx + vv[o] * dy;
                if dot > best {
                    best = dot;
                    best_bin = o;
                } else if -dot > best {
                    best = -dot;
                    best_bin = o + ORIENTATIONS;
                }
            }
            let xp = (x as f64 + 0.5) / cell as f64 - 0.5;
            let yp = (y as f64 + 0.5) / cell as f64 - 0.5;
            let ixp = xp.floor() as isize;
            let iyp = yp.floor() as isize;
            let vx0 = xp - ixp as f64;
            let vy0 = yp - iyp as f64;
            let mut vote = |gr: isize, gc: isize, w: f64| {
                if gr >= 0 && gc >= 0 && (gr as usize) < cy && (gc as usize) < cx {
                    hist[(gr as usize * cx + gc as usize) * 2 * ORIENTATIONS + best_bin] += w * v;
                }
            };
            vote(iyp, ixp, (1.0 - vx0) * (1.0 - vy0));
            vote(iyp, ixp + 1, vx0 * (1.0 - vy0));
            vote(iyp + 1, ixp, (1.0 - vx0) * vy0);
            vote(iyp + 1, ixp + 1, vx0 * vy0);
        }
    }

    // per-cell squared energy of the insensitive orientations
    let mut energy = vec![0.0f64; cy * cx];
    for i in 0..cy * cx {
        let base = i * 2 * ORIENTATIONS;
        let mut e = 0.0;
        for o in 0..ORIENTATIONS {
            let s = hist[base + o] + hist[base + o + ORIENTATIONS];
            e += s * s;
        }
        energy[i] = e;
    }
    let block = |a: isize, b: isize| -> f64 {
        let cell_e = |r: isize, c: isize| {
            let r = r.clamp(0, cy as isize - 1) as usize;
            let c = c.clamp(0, cx as isize - 1) as usize;
            energy[r * cx + c]
        };
        cell_e(a, b) + cell_e(a, b + 1) + cell_e(a + 1, b) + cell_e(a + 1, b + 1)
    };

    let mut out = SpatialMap::zeros(cy, cx, 31);
    let plane = cy * cx;
    for r in 0..cy {
        for c in 0..cx {
            let (ri, ci) = (r as isize, c as isize);
            let norms = [
                1.0 / (block(ri - 1, ci - 1) + NORM_EPS).sqrt(),
                1.0 / (block(ri - 1, ci) + NORM_EPS).sqrt(),
                1.0 / (block(ri, ci - 1) + NORM_EPS).sqrt(),
                1.0 / (block(ri, ci) + NORM_EPS).sqrt(),
            ];
            let base = (r * cx + c) * 2 * ORIENTATIONS;
            let idx = r * cx + c;
            let mut texture = [0.0f64; 4];
            for o in 0..2 * ORIENTATIONS {
                let t = hist[base + o];
                let mut acc = 0.0;
                for (b, n) in norms.iter().enumerate() {
                    let h = (t * n).min(TRUNCATION);
                    acc += h;
                    texture[b] += h;
                }
                out.values[o * plane + idx] = 0.5 * acc;
            }
            for o in 0..ORIENTATIONS {
                let t = hist[base + o] + hist[base + o + ORIENTATIONS];
                let mut acc = 0.0;
                for n in &norms {
                    acc += (t * n).min(TRUNCATION);
                }
                out.values[(2 * ORIENTATIONS + o) * plane + idx] = 0.5 * acc;
            }
            for (b, t) in texture.iter().enumerate() {
                out.values[(3 * ORIENTATIONS + b) * plane + idx] = TEXTURE_GAIN * t;
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn patch_from_fn(h: usize, w: usize, mut f: impl FnMut(usize, usize) -> (u8, u8, u8)) -> Patch {
        let mut pixels = Vec::with_capacity(h * w * 3);
        for r in 0..h {
            for c in 0..w {
                let (pr, pg, pb) = f(r, c);
                pixels.extend_from_slice(&[pr, pg, pb]);
            }
        }
        Patch::new(h, w, pixels, (0.0, 0.0), 1.0).unwrap()
    }

    fn insensitive_profile(map: &SpatialMap) -> [f64; 9] {
        let mut sums = [0.0; 9];
        for (o, s) in sums.iter_mut().enumerate() {
            *s = map.plane(18 + o).iter().sum();
        }
        sums
    }

    fn argmax(xs: &[f64]) -> usize {
        let mut best = 0;
        for (i, v) in xs.iter().enumerate() {
            if *v > xs[best] {
                best = i;
            }
        }
        best
    }

    #[test]
    fn uniform_patch_has_no_gradient_energy() {
        let patch = patch_from_fn(16, 16, |_, _| (77, 77, 77));
        let map = extract_hog(&patch, 4).unwrap();
        assert_eq!((map.height, map.width, map.channels), (4, 4, 31));
        assert!(map.values.iter().all(|v| v.abs() <= 1e-6));
    }

    #[test]
    fn vertical_edge_energizes_the_horizontal_gradient_bin() {
        let patch = patch_from_fn(32, 32, |_, c| if c < 16 { (0, 0, 0) } else { (255, 255, 255) });
        let map = extract_hog(&patch, 4).unwrap();
        let profile = insensitive_profile(&map);
        assert_eq!(argmax(&profile), 0, "profile {profile:?}");
    }

    #[test]
    fn quarter_rotation_shifts_the_orientation_argmax() {
        let patch = patch_from_fn(32, 32, |_, c| if c < 16 { (0, 0, 0) } else { (255, 255, 255) });
        let rotated = patch_from_fn(32, 32, |r, _| if r < 16 { (0, 0, 0) } else { (255, 255, 255) });
        let a = argmax(&insensitive_profile(&extract_hog(&patch, 4).unwrap()));
        let b = argmax(&insensitive_profile(&extract_hog(&rotated, 4).unwrap()));
        assert_eq!(a, 0);
        assert!(b == 4 || b == 5, "90° lies on the boundary of bins 4 and 5, got {b}");
    }

    #[test]
    fn outputs_are_finite_bounded_and_full_resolution() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let patch = patch_from_fn(30, 26, |_, _| (rng.gen(), rng.gen(), rng.gen()));
        let map = extract_hog(&patch, 4).unwrap();
        assert_eq!((map.height, map.width), (7, 6));
        for ch in 0..31 {
            let bound = if ch < 27 {
                0.5 * 4.0 * TRUNCATION
            } else {
                TEXTURE_GAIN * 18.0 * TRUNCATION
            };
            for v in map.plane(ch) {
                assert!(v.is_finite());
                assert!(*v >= 0.0);
                assert!(*v <= bound + 1e-12, "channel {ch} value {v} above {bound}");
            }
        }
    }

    #[test]
    fn rejects_patches_below_three_cells() {
        let patch = patch_from_fn(8, 8, |_, _| (0, 0, 0));
        assert!(extract_hog(&patch, 4).is_err());
    }
}
