//! Fusion of per-layer confidence maps: normalization to probability maps,
//! pairwise collaborative products, averaging into the optimal map, and the
//! relative-entropy objective the fused map minimizes.

use crate::operator::ConfidenceMap;
use crate::{Error, Result};

/// Non-negative grid summing to one.
#[derive(Debug, Clone)]
pub struct ProbabilityMap {
    pub height: usize,
    pub width: usize,
    pub values: Vec<f64>,
}

impl ProbabilityMap {
    pub fn new(height: usize, width: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != height * width {
            return Err(Error::ShapeMismatch(format!(
                "probability map expects {} values, got {}",
                height * width,
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::InvalidInput("probability map values must be finite and non-negative".into()));
        }
        let sum: f64 = values.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidInput(format!("probability map sums to {sum}, not 1")));
        }
        Ok(ProbabilityMap { height, width, values })
    }

    pub fn uniform(height: usize, width: usize) -> Self {
        let n = height * width;
        ProbabilityMap { height, width, values: vec![1.0 / n as f64; n] }
    }

    /// Plain L1 renormalization of a non-negative grid (no minimum shift);
    /// an all-zero grid becomes uniform.
    pub fn from_nonnegative(height: usize, width: usize, values: &[f64]) -> Result<Self> {
        if values.len() != height * width {
            return Err(Error::ShapeMismatch(format!(
                "expected {} values, got {}",
                height * width,
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::InvalidInput("renormalization input must be finite and non-negative".into()));
        }
        let sum: f64 = values.iter().sum();
        if sum <= 0.0 {
            return Ok(Self::uniform(height, width));
        }
        let values = values.iter().map(|v| v / sum).collect();
        Ok(ProbabilityMap { height, width, values })
    }

    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, v) in self.values.iter().enumerate() {
            if *v > self.values[best] {
                best = i;
            }
        }
        best
    }
}

/// Turns a raw confidence map into a distribution: shift by the minimum, then
/// divide by the sum; a constant map becomes uniform. Argmax is preserved.
pub fn normalize_map(map: &ConfidenceMap) -> ProbabilityMap {
    let min = map.values.iter().cloned().fold(f64::INFINITY, f64::min);
    let shifted: Vec<f64> = map.values.iter().map(|v| v - min).collect();
    let sum: f64 = shifted.iter().sum();
    if sum <= 0.0 {
        return ProbabilityMap::uniform(map.height, map.width);
    }
    ProbabilityMap {
        height: map.height,
        width: map.width,
        values: shifted.iter().map(|v| v / sum).collect(),
    }
}

/// One pairwise collaborative product, tagged with its source layer indices.
#[derive(Debug, Clone)]
pub struct WeightedMap {
    pub first: usize,
    pub second: usize,
    pub height: usize,
    pub width: usize,
    pub values: Vec<f64>,
}

impl WeightedMap {
    /// Wraps a distribution unchanged (single-map relative-entropy checks).
    pub fn from_probability(map: &ProbabilityMap) -> Self {
        WeightedMap {
            first: 0,
            second: 0,
            height: map.height,
            width: map.width,
            values: map.values.clone(),
        }
    }
}

/// All L(L−1)/2 element-wise products S_m ⊙ S_n for m < n, lexicographic.
pub fn pairwise_filter(maps: &[ProbabilityMap]) -> Result<Vec<WeightedMap>> {
    if maps.len() < 2 {
        return Err(Error::InvalidInput(format!("pairwise filtering needs ≥ 2 maps, got {}", maps.len())));
    }
    let (h, w) = (maps[0].height, maps[0].width);
    for m in maps {
        if (m.height, m.width) != (h, w) {
            return Err(Error::ShapeMismatch(format!(
                "map grids differ: {h}x{w} vs {}x{}",
                m.height, m.width
            )));
        }
    }
    let mut out = Vec::with_capacity(maps.len() * (maps.len() - 1) / 2);
    for m in 0..maps.len() {
        for n in m + 1..maps.len() {
            let values = maps[m]
                .values
                .iter()
                .zip(maps[n].values.iter())
                .map(|(a, b)| a * b)
                .collect();
            out.push(WeightedMap { first: m, second: n, height: h, width: w, values });
        }
    }
    Ok(out)
}

/// Averages the weighted maps into the optimal confidence map
/// R = (2 / (L(L−1))) · Σ products, with sub-cell peak refinement.
pub fn fuse(weighted: &[WeightedMap], layers: usize) -> Result<ConfidenceMap> {
    let expected = layers * layers.saturating_sub(1) / 2;
    if weighted.len() != expected || expected == 0 {
        return Err(Error::InvalidInput(format!(
            "expected {expected} weighted maps for {layers} layers, got {}",
            weighted.len()
        )));
    }
    let (h, w) = (weighted[0].height, weighted[0].width);
    let mut acc = vec![0.0f64; h * w];
    for m in weighted {
        if (m.height, m.width) != (h, w) {
            return Err(Error::ShapeMismatch("weighted map grids differ".into()));
        }
        for (a, v) in acc.iter_mut().zip(m.values.iter()) {
            *a += v;
        }
    }
    let coeff = 2.0 / (layers * (layers - 1)) as f64;
    for a in acc.iter_mut() {
        *a *= coeff;
    }
    ConfidenceMap::from_values(h, w, acc)
}

/// Relative-entropy objective Σ_l Σ_p m_l(p)·log(m_l(p)/r(p)) with the
/// conventions 0·log(0/·) = 0 and positive mass over a zero candidate cell
/// giving +∞. The reference maps need not be normalized.
pub fn kl_objective(maps: &[WeightedMap], candidate: &ProbabilityMap) -> f64 {
    let mut total = 0.0;
    for m in maps {
        for (v, r) in m.values.iter().zip(candidate.values.iter()) {
            if *v > 0.0 {
                if *r <= 0.0 {
                    return f64::INFINITY;
                }
                total += v * (v.ln() - r.ln());
            }
        }
    }
    total
}

/// Euclidean projection onto the probability simplex.
pub fn project_simplex(values: &[f64]) -> Vec<f64> {
    let mut sorted: Vec<f64> = values.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let mut acc = 0.0;
    let mut theta = 0.0;
    for (j, u) in sorted.iter().enumerate() {
        acc += u;
        let t = (acc - 1.0) / (j + 1) as f64;
        if u - t > 0.0 {
            theta = t;
        }
    }
    values.iter().map(|v| (v - theta).max(0.0)).collect()
}

/// Projected-gradient descent on the relative-entropy objective over the
/// simplex, with backtracking step selection. Returns the best iterate found
/// (never worse than the start).
pub fn projected_gradient_refine(
    maps: &[WeightedMap],
    start: &ProbabilityMap,
    steps: usize,
) -> ProbabilityMap {
    let n = start.values.len();
    let mut current = start.values.clone();
    let mut best = current.clone();
    let mut best_obj = kl_objective(maps, start);
    for _ in 0..steps {
        let mut grad = vec![0.0f64; n];
        for m in maps {
            for (g, (v, r)) in grad.iter_mut().zip(m.values.iter().zip(current.iter())) {
                if *v > 0.0 && *r > 0.0 {
                    *g -= v / r;
                }
            }
        }
        let scale = grad.iter().fold(0.0f64, |a, g| a.max(g.abs())).max(1e-300);
        let mut improved = false;
        let mut eta = 1.0 / scale;
        for _ in 0..30 {
            let trial: Vec<f64> = current.iter().zip(grad.iter()).map(|(x, g)| x - eta * g).collect();
            let projected = project_simplex(&trial);
            let cand = ProbabilityMap {
                height: start.height,
                width: start.width,
                values: projected.clone(),
            };
            let obj = kl_objective(maps, &cand);
            if obj < best_obj {
                best_obj = obj;
                best = projected.clone();
                current = projected;
                improved = true;
                break;
            }
            eta *= 0.5;
        }
        if !improved {
            break;
        }
    }
    ProbabilityMap { height: start.height, width: start.width, values: best }
}
