//! Runtime oracle suites: independent brute-force reimplementations of the
//! mathematical identities the pipeline relies on, runnable from the CLI to
//! validate a build. Setting `CFTRACK_SELFTEST_PERTURB` injects a deliberate
//! error so the failure path itself can be exercised.

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::ensemble::{
    fuse, kl_objective, pairwise_filter, projected_gradient_refine, ProbabilityMap,
};
use crate::operator::{score, Regularizer};
use crate::optimizer::{
    kernel_autocorrelation, score_dual, solve_dual, solve_filters_cg, solve_filters_closed,
    ConfidenceLabels, KernelSpec, SolverConfig,
};
use crate::spectral::{dft2, SpatialMap, SpectralMap};

/// Outcome of one oracle suite.
#[derive(Debug, Clone)]
pub struct SuiteResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

/// Solves a dense complex system by LU factorization with partial pivoting.
/// Returns `None` for a numerically singular matrix.
pub fn lu_solve(a: &[Vec<Complex64>], b: &[Complex64]) -> Option<Vec<Complex64>> {
    let n = a.len();
    if n == 0 || b.len() != n || a.iter().any(|row| row.len() != n) {
        return None;
    }
    let mut m: Vec<Vec<Complex64>> = a.to_vec();
    let mut x: Vec<Complex64> = b.to_vec();
    for col in 0..n {
        let mut pivot = col;
        let mut best = m[col][col].norm();
        for row in col + 1..n {
            let v = m[row][col].norm();
            if v > best {
                best = v;
                pivot = row;
            }
        }
        if best < 1e-300 {
            return None;
        }
        m.swap(col, pivot);
        x.swap(col, pivot);
        for row in col + 1..n {
            let f = m[row][col] / m[col][col];
            for k in col..n {
                let upper = m[col][k];
                m[row][k] -= f * upper;
            }
            let rhs = x[col];
            x[row] -= f * rhs;
        }
    }
    for col in (0..n).rev() {
        let mut acc = x[col];
        for k in col + 1..n {
            acc -= m[col][k] * x[k];
        }
        x[col] = acc / m[col][col];
        if !x[col].re.is_finite() || !x[col].im.is_finite() {
            return None;
        }
    }
    Some(x)
}

fn perturbation() -> f64 {
    if std::env::var_os("CFTRACK_SELFTEST_PERTURB").is_some() {
        1e-3
    } else {
        0.0
    }
}

/// Centered-index direct-summation DFT, reimplemented here so the FFT path is
/// checked against code sharing nothing with it.
fn brute_dft(map: &SpatialMap) -> Vec<Complex64> {
    let (h, w) = (map.height, map.width);
    let mut out = vec![Complex64::new(0.0, 0.0); h * w * map.channels];
    for ch in 0..map.channels {
        let plane = map.plane(ch);
        for r in 0..h {
            let kr = r as isize - (h / 2) as isize;
            for c in 0..w {
                let kc = c as isize - (w / 2) as isize;
                let mut acc = Complex64::new(0.0, 0.0);
                for y in 0..h {
                    for x in 0..w {
                        let ang = -2.0 * std::f64::consts::PI
                            * (kr as f64 * y as f64 / h as f64 + kc as f64 * x as f64 / w as f64);
                        acc += plane[y * w + x] * Complex64::from_polar(1.0, ang);
                    }
                }
                out[(ch * h + r) * w + c] = acc;
            }
        }
    }
    out
}

fn random_map(rng: &mut ChaCha8Rng, h: usize, w: usize, d: usize) -> SpatialMap {
    let values = (0..h * w * d).map(|_| rng.gen_range(-1.0..1.0)).collect();
    SpatialMap::new(h, w, d, values).unwrap()
}

fn random_spectrum(rng: &mut ChaCha8Rng, h: usize, w: usize, d: usize) -> SpectralMap {
    dft2(&random_map(rng, h, w, d)).unwrap()
}

fn random_labels(rng: &mut ChaCha8Rng, h: usize, w: usize) -> ConfidenceLabels {
    let spec = dft2(&random_map(rng, h, w, 1)).unwrap();
    let lam = (h * w) as f64;
    let mut spectrum = spec;
    for v in spectrum.values.iter_mut() {
        *v /= lam;
    }
    ConfidenceLabels { spectrum }
}

fn spectral_suite() -> SuiteResult {
    let mut rng = ChaCha8Rng::seed_from_u64(0xC0FFEE);
    let mut worst = 0.0f64;
    for _ in 0..5 {
        let map = random_map(&mut rng, 6, 6, 2);
        let fft = dft2(&map).unwrap();
        let mut brute = brute_dft(&map);
        brute[0] *= 1.0 + perturbation();
        let peak = brute.iter().map(|v| v.norm()).fold(1.0f64, f64::max);
        for (a, b) in fft.values.iter().zip(brute.iter()) {
            worst = worst.max((a - b).norm() / peak);
        }
    }
    SuiteResult {
        name: "fft-brute-force",
        passed: worst < 1e-8,
        detail: format!("max relative deviation {worst:.3e}"),
    }
}

fn solver_suite() -> SuiteResult {
    let mut rng = ChaCha8Rng::seed_from_u64(0xBEEF);
    let feats = vec![random_spectrum(&mut rng, 8, 8, 2)];
    let labels = vec![random_labels(&mut rng, 8, 8)];
    let cfg = SolverConfig { cg_iterations_per_outer: 80, tolerance: 1e-14, ..SolverConfig::default() };
    let reg = Regularizer::identity();
    let warm = crate::operator::StructuralFilter::zeros_like(&feats).unwrap();
    let cg = match solve_filters_cg(&feats, &labels, &reg, &cfg, &warm) {
        Ok((f, _)) => f,
        Err(e) => {
            return SuiteResult {
                name: "cg-vs-closed-form",
                passed: false,
                detail: format!("solver error: {e}"),
            }
        }
    };
    let closed = solve_filters_closed(&feats, &labels, cfg.c).unwrap();
    let mut num = 0.0f64;
    let mut den = 0.0f64;
    for (a, b) in cg.layers[0]
        .coefficients
        .values
        .iter()
        .zip(closed.layers[0].coefficients.values.iter())
    {
        num = num.max((a - b).norm());
        den = den.max(b.norm());
    }
    let rel = num / den.max(1e-300) + perturbation();
    SuiteResult {
        name: "cg-vs-closed-form",
        passed: rel < 1e-5,
        detail: format!("max relative deviation {rel:.3e}"),
    }
}

fn fusion_suite() -> SuiteResult {
    let mut rng = ChaCha8Rng::seed_from_u64(0xF00D);
    let mut worst = f64::NEG_INFINITY;
    for _ in 0..3 {
        let maps: Vec<ProbabilityMap> = (0..3)
            .map(|_| {
                let v: Vec<f64> = (0..36).map(|_| rng.gen_range(0.01..1.0)).collect();
                ProbabilityMap::from_nonnegative(6, 6, &v).unwrap()
            })
            .collect();
        let weighted = pairwise_filter(&maps).unwrap();
        let fused = fuse(&weighted, 3).unwrap();
        let candidate =
            ProbabilityMap::from_nonnegative(fused.height, fused.width, &fused.values).unwrap();
        let base = kl_objective(&weighted, &candidate) - perturbation();
        for _ in 0..200 {
            let noisy: Vec<f64> = candidate
                .values
                .iter()
                .map(|v| (v + rng.gen_range(-0.2..0.2) * v.max(1e-3)).max(0.0))
                .collect();
            let p = ProbabilityMap::from_nonnegative(6, 6, &noisy).unwrap();
            worst = worst.max(base - kl_objective(&weighted, &p));
        }
        let refined = projected_gradient_refine(&weighted, &candidate, 50);
        worst = worst.max(base - kl_objective(&weighted, &refined));
    }
    SuiteResult {
        name: "fusion-kl-optimality",
        passed: worst <= 1e-9,
        detail: format!("best improvement found {worst:.3e}"),
    }
}

fn primal_dual_suite() -> SuiteResult {
    let mut rng = ChaCha8Rng::seed_from_u64(0xD0A1);
    let feats = vec![random_spectrum(&mut rng, 9, 9, 2)];
    let labels = vec![random_labels(&mut rng, 9, 9)];
    let primal = solve_filters_closed(&feats, &labels, 20000.0).unwrap();
    let primal_maps = score(&primal, &feats).unwrap();
    let kernel = kernel_autocorrelation(&feats[0], &KernelSpec::linear()).unwrap();
    let cfg = SolverConfig::default();
    let (alpha, _) = solve_dual(&kernel, &labels[0], None, &cfg, None).unwrap();
    let dual_map = score_dual(&kernel, &alpha).unwrap();
    let mut worst = perturbation();
    let scale = primal_maps[0]
        .values
        .iter()
        .map(|v| v.abs())
        .fold(1.0f64, f64::max);
    for (a, b) in primal_maps[0].values.iter().zip(dual_map.values.iter()) {
        worst = worst.max((a - b).abs() / scale);
    }
    SuiteResult {
        name: "primal-dual-equivalence",
        passed: worst < 1e-5,
        detail: format!("max relative deviation {worst:.3e}"),
    }
}

/// Runs every oracle suite; all must pass for a build to be considered sound.
pub fn run_all() -> Vec<SuiteResult> {
    vec![spectral_suite(), solver_suite(), fusion_suite(), primal_dual_suite()]
}
