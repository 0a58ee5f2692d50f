//! Robust global-motion estimation from a dense flow field.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::field::FlowField;
use super::homography::{dlt, Homography};
use crate::error::{FcanError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RansacConfig {
    pub iterations: usize,
    /// Symmetric transfer error bound, in pixels.
    pub inlier_threshold: f64,
    pub min_inlier_fraction: f64,
    pub seed: u64,
    /// Spacing of the pixel grid the correspondences are drawn from.
    pub grid_stride: usize,
}

impl Default for RansacConfig {
    fn default() -> Self {
        RansacConfig {
            iterations: 500,
            inlier_threshold: 1.0,
            min_inlier_fraction: 0.3,
            seed: 0,
            grid_stride: 4,
        }
    }
}

impl RansacConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(FcanError::Config("ransac iterations must be >= 1".into()));
        }
        if !(self.inlier_threshold > 0.0) {
            return Err(FcanError::Config("ransac inlier threshold must be > 0".into()));
        }
        if self.grid_stride == 0 {
            return Err(FcanError::Config("ransac grid stride must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HomographyFit {
    pub homography: Homography,
    pub inlier_fraction: f64,
    /// Set when too few correspondences agreed; `homography` is then identity.
    pub low_confidence: bool,
}

type Pt = (f64, f64);

const MIN_EXTENT: usize = 8;
const COLLINEAR_SINE: f64 = 1e-6;
const REFINE_ROUNDS: usize = 3;

fn correspondences(flow: &FlowField, stride: usize) -> (Vec<Pt>, Vec<Pt>) {
    let mut src = Vec::new();
    let mut dst = Vec::new();
    for y in (0..flow.height()).step_by(stride) {
        for x in (0..flow.width()).step_by(stride) {
            let (u, v) = flow.at(x, y);
            src.push((x as f64, y as f64));
            dst.push((x as f64 + u, y as f64 + v));
        }
    }
    (src, dst)
}

fn collinear(a: Pt, b: Pt, c: Pt) -> bool {
    let (abx, aby) = (b.0 - a.0, b.1 - a.1);
    let (acx, acy) = (c.0 - a.0, c.1 - a.1);
    let cross = (abx * acy - aby * acx).abs();
    let norms = abx.hypot(aby) * acx.hypot(acy);
    norms == 0.0 || cross / norms < COLLINEAR_SINE
}

fn any_three_collinear(p: &[Pt; 4]) -> bool {
    [(0, 1, 2), (0, 1, 3), (0, 2, 3), (1, 2, 3)]
        .iter()
        .any(|&(i, j, k)| collinear(p[i], p[j], p[k]))
}

/// Squared symmetric transfer error `|q - Hp|^2 + |p - H^-1 q|^2`.
fn transfer_error(h: &Homography, h_inv: &Homography, p: Pt, q: Pt) -> f64 {
    match (h.apply(p.0, p.1), h_inv.apply(q.0, q.1)) {
        (Some(hp), Some(hq)) => {
            (q.0 - hp.0).powi(2) + (q.1 - hp.1).powi(2) + (p.0 - hq.0).powi(2) + (p.1 - hq.1).powi(2)
        }
        _ => f64::INFINITY,
    }
}

fn inliers(h: &Homography, src: &[Pt], dst: &[Pt], thr2: f64) -> Vec<usize> {
    let Ok(h_inv) = h.inverse() else {
        return Vec::new();
    };
    (0..src.len())
        .filter(|&i| transfer_error(h, &h_inv, src[i], dst[i]) <= thr2)
        .collect()
}

fn refit(idx: &[usize], src: &[Pt], dst: &[Pt]) -> Option<Homography> {
    let s: Vec<Pt> = idx.iter().map(|&i| src[i]).collect();
    let d: Vec<Pt> = idx.iter().map(|&i| dst[i]).collect();
    dlt(&s, &d).ok()
}

/// Fits the homography that best explains the flow as camera motion:
/// RANSAC over 4-point samples on a subsampled grid, then least-squares
/// refinement on the consensus set.
pub fn fit_homography(flow: &FlowField, cfg: &RansacConfig) -> Result<HomographyFit> {
    cfg.validate()?;
    if flow.width() < MIN_EXTENT || flow.height() < MIN_EXTENT {
        return Err(FcanError::arg(
            "fit_homography",
            format!(
                "flow must be at least {MIN_EXTENT}x{MIN_EXTENT}, got {}x{}",
                flow.width(),
                flow.height()
            ),
        ));
    }
    let (src, dst) = correspondences(flow, cfg.grid_stride);
    let total = src.len();
    if total < 4 {
        return Err(FcanError::arg("fit_homography", "fewer than 4 correspondences"));
    }
    let thr2 = cfg.inlier_threshold * cfg.inlier_threshold;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    let mut best: Option<(Homography, Vec<usize>)> = None;
    let mut attempts = 0;
    let mut iters = 0;
    while iters < cfg.iterations && attempts < cfg.iterations * 20 {
        attempts += 1;
        let pick = sample(&mut rng, total, 4);
        let ids: [usize; 4] = std::array::from_fn(|k| pick.index(k));
        let ps: [Pt; 4] = ids.map(|i| src[i]);
        let qs: [Pt; 4] = ids.map(|i| dst[i]);
        if any_three_collinear(&ps) || any_three_collinear(&qs) {
            continue;
        }
        iters += 1;
        let Ok(h) = dlt(&ps, &qs) else { continue };
        let inl = inliers(&h, &src, &dst, thr2);
        if best.as_ref().map_or(true, |(_, b)| inl.len() > b.len()) {
            let done = inl.len() == total;
            best = Some((h, inl));
            if done {
                break;
            }
        }
    }

    let Some((mut h, mut inl)) = best else {
        return Ok(low_confidence(0.0));
    };
    for _ in 0..REFINE_ROUNDS {
        if inl.len() < 4 {
            break;
        }
        let Some(refined) = refit(&inl, &src, &dst) else { break };
        let next = inliers(&refined, &src, &dst, thr2);
        if next.len() < inl.len() {
            break;
        }
        let stable = next == inl;
        h = refined;
        inl = next;
        if stable {
            break;
        }
    }

    let fraction = inl.len() as f64 / total as f64;
    if fraction < cfg.min_inlier_fraction {
        return Ok(low_confidence(fraction));
    }
    Ok(HomographyFit {
        homography: h,
        inlier_fraction: fraction,
        low_confidence: false,
    })
}

fn low_confidence(fraction: f64) -> HomographyFit {
    HomographyFit {
        homography: Homography::identity(),
        inlier_fraction: fraction,
        low_confidence: true,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flow::homography::induced_flow;

    #[test]
    fn zero_flow_is_identity() {
        let fit = fit_homography(&FlowField::zeros(32, 32), &RansacConfig::default()).unwrap();
        assert!(!fit.low_confidence);
        assert_eq!(fit.inlier_fraction, 1.0);
        assert!(fit.homography.max_abs_diff(&Homography::identity()) < 1e-9);
    }

    #[test]
    fn constant_flow_is_translation() {
        let fit = fit_homography(&FlowField::constant(32, 32, 2.0, -1.0), &RansacConfig::default()).unwrap();
        assert!(fit.homography.max_abs_diff(&Homography::translation(2.0, -1.0)) < 1e-9);
    }

    #[test]
    fn too_small_field_rejected() {
        assert!(fit_homography(&FlowField::zeros(7, 32), &RansacConfig::default()).is_err());
    }

    #[test]
    fn incoherent_flow_falls_back_to_identity() {
        // Every grid vector points somewhere different: no model explains 30%.
        let flow = FlowField::from_fn(32, 32, |x, y| {
            let k = (x * 7 + y * 13) % 17;
            ((k as f64 - 8.0) * 1.7, ((k * 5) % 11) as f64 * 2.3 - 11.0)
        });
        let fit = fit_homography(&flow, &RansacConfig::default()).unwrap();
        assert!(fit.low_confidence);
        assert_eq!(fit.homography, Homography::identity());
        assert!(fit.inlier_fraction < 0.3);
    }

    #[test]
    fn fixed_seed_is_deterministic() {
        let h = Homography::from_rows([[1.01, 0.01, 1.0], [0.0, 0.99, 0.5], [1e-4, 0.0, 1.0]]).unwrap();
        let mut flow = induced_flow(&h, 32, 32).unwrap();
        for i in 0..20 {
            flow.set((i * 5) % 32, (i * 11) % 32, (9.0, -7.0));
        }
        let cfg = RansacConfig {
            seed: 99,
            ..RansacConfig::default()
        };
        let a = fit_homography(&flow, &cfg).unwrap();
        let b = fit_homography(&flow, &cfg).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn invalid_config_rejected() {
        let cfg = RansacConfig {
            iterations: 0,
            ..RansacConfig::default()
        };
        assert!(fit_homography(&FlowField::zeros(8, 8), &cfg).is_err());
    }
}
