use nalgebra::{DMatrix, Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use super::field::FlowField;
use crate::error::{FcanError, Result};

/// Projective map of the image plane, normalized so `m[2][2] == 1`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Homography {
    m: [[f64; 3]; 3],
}

const MIN_DET: f64 = 1e-12;
const MIN_W: f64 = 1e-12;

impl Homography {
    pub fn identity() -> Self {
        Homography {
            m: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
        }
    }

    pub fn translation(tx: f64, ty: f64) -> Self {
        Homography {
            m: [[1.0, 0.0, tx], [0.0, 1.0, ty], [0.0, 0.0, 1.0]],
        }
    }

    /// Isotropic scale by `s` about `(cx, cy)`.
    pub fn scale_about(s: f64, cx: f64, cy: f64) -> Self {
        Homography {
            m: [
                [s, 0.0, cx * (1.0 - s)],
                [0.0, s, cy * (1.0 - s)],
                [0.0, 0.0, 1.0],
            ],
        }
    }

    /// Rotation by `radians` (counter-clockwise in x-right/y-down pixel axes
    /// appears clockwise on screen) about `(cx, cy)`.
    pub fn rotation_about(radians: f64, cx: f64, cy: f64) -> Self {
        let (s, c) = radians.sin_cos();
        Homography {
            m: [
                [c, -s, cx - c * cx + s * cy],
                [s, c, cy - s * cx - c * cy],
                [0.0, 0.0, 1.0],
            ],
        }
    }

    pub fn from_rows(m: [[f64; 3]; 3]) -> Result<Self> {
        Self::from_matrix(Matrix3::from_fn(|r, c| m[r][c]))
    }

    pub fn from_matrix(m: Matrix3<f64>) -> Result<Self> {
        let h33 = m[(2, 2)];
        if h33.abs() < MIN_W || !m.iter().all(|v| v.is_finite()) {
            return Err(FcanError::arg("homography", "cannot normalize so that h33 = 1"));
        }
        let m = m / h33;
        if m.determinant().abs() < MIN_DET {
            return Err(FcanError::arg("homography", "matrix is singular"));
        }
        Ok(Homography {
            m: std::array::from_fn(|r| std::array::from_fn(|c| m[(r, c)])),
        })
    }

    pub fn matrix(&self) -> Matrix3<f64> {
        Matrix3::from_fn(|r, c| self.m[r][c])
    }

    pub fn rows(&self) -> [[f64; 3]; 3] {
        self.m
    }

    pub fn inverse(&self) -> Result<Self> {
        let inv = self
            .matrix()
            .try_inverse()
            .ok_or_else(|| FcanError::arg("homography", "matrix is singular"))?;
        Self::from_matrix(inv)
    }

    /// `self` applied after `first`.
    pub fn compose(&self, first: &Homography) -> Result<Self> {
        Self::from_matrix(self.matrix() * first.matrix())
    }

    /// Maps a point; `None` when it lands on the plane at infinity.
    pub fn apply(&self, x: f64, y: f64) -> Option<(f64, f64)> {
        let m = &self.m;
        let w = m[2][0] * x + m[2][1] * y + m[2][2];
        if w.abs() < MIN_W {
            return None;
        }
        Some((
            (m[0][0] * x + m[0][1] * y + m[0][2]) / w,
            (m[1][0] * x + m[1][1] * y + m[1][2]) / w,
        ))
    }

    pub fn max_abs_diff(&self, other: &Homography) -> f64 {
        self.m
            .iter()
            .flatten()
            .zip(other.m.iter().flatten())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// Largest distance between where `self` and `other` send the four
    /// corners of a `width x height` pixel grid.
    pub fn corner_transfer_error(&self, other: &Homography, width: usize, height: usize) -> f64 {
        let (xm, ym) = ((width - 1) as f64, (height - 1) as f64);
        [(0.0, 0.0), (xm, 0.0), (0.0, ym), (xm, ym)]
            .iter()
            .map(|&(x, y)| match (self.apply(x, y), other.apply(x, y)) {
                (Some(a), Some(b)) => (a.0 - b.0).hypot(a.1 - b.1),
                _ => f64::INFINITY,
            })
            .fold(0.0, f64::max)
    }

    /// Largest corner displacement `|H(c) - c|` over a `width x height` grid.
    pub fn corner_displacement(&self, width: usize, height: usize) -> f64 {
        self.corner_transfer_error(&Homography::identity(), width, height)
    }
}

type Pt = (f64, f64);

/// Similarity that moves the centroid to the origin and the RMS distance to sqrt(2).
fn normalizing_transform(pts: &[Pt]) -> Option<Matrix3<f64>> {
    let n = pts.len() as f64;
    let cx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let cy = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let ms = pts
        .iter()
        .map(|p| (p.0 - cx).powi(2) + (p.1 - cy).powi(2))
        .sum::<f64>()
        / n;
    if ms <= 1e-24 {
        return None;
    }
    let s = (2.0 / ms).sqrt();
    Some(Matrix3::new(s, 0.0, -s * cx, 0.0, s, -s * cy, 0.0, 0.0, 1.0))
}

fn transform(t: &Matrix3<f64>, p: Pt) -> Pt {
    let v = t * Vector3::new(p.0, p.1, 1.0);
    (v.x / v.z, v.y / v.z)
}

/// Normalized direct linear transform: least-squares `H` with `dst ~ H src`.
pub fn dlt(src: &[Pt], dst: &[Pt]) -> Result<Homography> {
    let n = src.len();
    if n < 4 || dst.len() != n {
        return Err(FcanError::arg(
            "dlt",
            format!("need at least 4 matched points, got {} and {}", n, dst.len()),
        ));
    }
    let degenerate = || FcanError::arg("dlt", "degenerate point configuration");
    let ts = normalizing_transform(src).ok_or_else(degenerate)?;
    let td = normalizing_transform(dst).ok_or_else(degenerate)?;

    let rows = (2 * n).max(9);
    let mut a = DMatrix::<f64>::zeros(rows, 9);
    for (i, (&p, &q)) in src.iter().zip(dst).enumerate() {
        let (x, y) = transform(&ts, p);
        let (u, v) = transform(&td, q);
        let r = 2 * i;
        a[(r, 0)] = -x;
        a[(r, 1)] = -y;
        a[(r, 2)] = -1.0;
        a[(r, 6)] = u * x;
        a[(r, 7)] = u * y;
        a[(r, 8)] = u;
        a[(r + 1, 3)] = -x;
        a[(r + 1, 4)] = -y;
        a[(r + 1, 5)] = -1.0;
        a[(r + 1, 6)] = v * x;
        a[(r + 1, 7)] = v * y;
        a[(r + 1, 8)] = v;
    }
    let svd = a.svd(false, true);
    let v_t = svd.v_t.ok_or_else(degenerate)?;
    let (smallest, _) = svd
        .singular_values
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.partial_cmp(b.1).unwrap())
        .ok_or_else(degenerate)?;
    let h = v_t.row(smallest);
    let hn = Matrix3::from_fn(|r, c| h[3 * r + c]);
    let td_inv = td.try_inverse().ok_or_else(degenerate)?;
    Homography::from_matrix(td_inv * hn * ts)
}

/// Background flow produced by `h` at every pixel: `h(p) - p`.
pub fn induced_flow(h: &Homography, width: usize, height: usize) -> Result<FlowField> {
    let mut u = Vec::with_capacity(width * height);
    let mut v = Vec::with_capacity(width * height);
    for y in 0..height {
        for x in 0..width {
            let (fx, fy) = (x as f64, y as f64);
            let (qx, qy) = h.apply(fx, fy).ok_or_else(|| {
                FcanError::arg(
                    "induced_flow",
                    format!("pixel ({x}, {y}) maps to the plane at infinity"),
                )
            })?;
            u.push(qx - fx);
            v.push(qy - fy);
        }
    }
    FlowField::new(width, height, u, v)
}

/// Removes the camera-induced component `h` from `flow`.
pub fn compensate(flow: &FlowField, h: &Homography) -> Result<FlowField> {
    let background = induced_flow(h, flow.width(), flow.height())?;
    flow.sub(&background)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_and_translation_flows() {
        let z = induced_flow(&Homography::identity(), 8, 6).unwrap();
        assert_eq!(z, FlowField::zeros(8, 6));
        let t = induced_flow(&Homography::translation(1.5, -2.0), 8, 6).unwrap();
        assert!(t.max_abs_diff(&FlowField::constant(8, 6, 1.5, -2.0)) < 1e-12);
    }

    #[test]
    fn scale_about_center_is_radial() {
        let h = Homography::scale_about(1.1, 16.0, 16.0);
        let f = induced_flow(&h, 33, 33).unwrap();
        let (u0, v0) = f.at(16, 16);
        assert!(u0.abs() < 1e-12 && v0.abs() < 1e-12);
        let (u1, v1) = f.at(26, 16);
        assert!((u1 - 1.0).abs() < 1e-12 && v1.abs() < 1e-12);
    }

    #[test]
    fn plane_at_infinity_rejected() {
        // w = 1 - x/4 vanishes on the column x = 4.
        let h = Homography::from_rows([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [-0.25, 0.0, 1.0]]).unwrap();
        let err = induced_flow(&h, 8, 8).unwrap_err().to_string();
        assert!(err.contains("infinity"), "{err}");
    }

    #[test]
    fn compensating_induced_flow_leaves_nothing() {
        let h = Homography::from_rows([[1.01, 0.02, 1.5], [-0.01, 0.99, -0.7], [1e-4, -2e-4, 1.0]]).unwrap();
        let f = induced_flow(&h, 32, 32).unwrap();
        let r = compensate(&f, &h).unwrap();
        assert!(r.max_abs_diff(&FlowField::zeros(32, 32)) < 1e-9);
        let same = compensate(&f, &Homography::identity()).unwrap();
        assert_eq!(same, f);
        assert!(FlowField::zeros(4, 4).sub(&FlowField::zeros(4, 5)).is_err());
    }

    #[test]
    fn dlt_recovers_exact_map() {
        let h = Homography::from_rows([[0.98, 0.03, 2.0], [-0.02, 1.02, -1.0], [2e-4, 1e-4, 1.0]]).unwrap();
        let src: Vec<Pt> = [(0.0, 0.0), (31.0, 0.0), (0.0, 31.0), (31.0, 31.0), (12.0, 7.0)].to_vec();
        let dst: Vec<Pt> = src.iter().map(|&(x, y)| h.apply(x, y).unwrap()).collect();
        let est = dlt(&src, &dst).unwrap();
        assert!(est.corner_transfer_error(&h, 32, 32) < 1e-9);
    }

    #[test]
    fn singular_matrix_rejected() {
        assert!(Homography::from_rows([[1.0, 2.0, 0.0], [2.0, 4.0, 0.0], [0.0, 0.0, 1.0]]).is_err());
        assert!(Homography::from_rows([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 0.0]]).is_err());
    }

    #[test]
    fn normalization_enforced() {
        let h = Homography::from_rows([[2.0, 0.0, 4.0], [0.0, 2.0, 0.0], [0.0, 0.0, 2.0]]).unwrap();
        assert_eq!(h.rows()[2][2], 1.0);
        assert_eq!(h.rows()[0][2], 2.0);
    }
}
