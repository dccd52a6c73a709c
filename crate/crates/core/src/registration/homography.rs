use serde::{Deserialize, Serialize};

use super::RegistrationError;

/// Smallest `|det|` still treated as invertible.
pub const MIN_DET: f64 = 1e-12;

/// Projective transform from infrared pixel coordinates to visible pixel
/// coordinates, stored row-major with the lower-right entry fixed at 1:
///
/// ```text
/// | 1+h00  h01    h02 |
/// | h10    1+h11  h12 |
/// | h20    h21    1   |
/// ```
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 9]", into = "[f64; 9]")]
pub struct Homography {
    m: [[f64; 3]; 3],
}

impl Default for Homography {
    fn default() -> Self {
        Self::identity()
    }
}

impl TryFrom<[f64; 9]> for Homography {
    type Error = RegistrationError;

    fn try_from(v: [f64; 9]) -> Result<Self, Self::Error> {
        Self::from_matrix([[v[0], v[1], v[2]], [v[3], v[4], v[5]], [v[6], v[7], v[8]]])
    }
}

impl From<Homography> for [f64; 9] {
    fn from(h: Homography) -> Self {
        h.to_row_major()
    }
}

impl Homography {
    pub fn identity() -> Self {
        Self {
            m: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
        }
    }

    /// Builds a homography from its eight free parameters `h00..h21`.
    pub fn from_params(h00: f64, h01: f64, h02: f64, h10: f64, h11: f64, h12: f64, h20: f64, h21: f64) -> Result<Self, RegistrationError> {
        Self::from_matrix([[1.0 + h00, h01, h02], [h10, 1.0 + h11, h12], [h20, h21, 1.0]])
    }

    pub fn translation(tx: f64, ty: f64) -> Self {
        Self {
            m: [[1.0, 0.0, tx], [0.0, 1.0, ty], [0.0, 0.0, 1.0]],
        }
    }

    /// Rotation by `deg` degrees about `(cx, cy)` followed by a shift.
    pub fn rigid(deg: f64, cx: f64, cy: f64, tx: f64, ty: f64) -> Self {
        let (s, c) = deg.to_radians().sin_cos();
        Self {
            m: [
                [c, -s, cx - c * cx + s * cy + tx],
                [s, c, cy - s * cx - c * cy + ty],
                [0.0, 0.0, 1.0],
            ],
        }
    }

    /// Scales an arbitrary matrix so the lower-right entry is 1 and checks
    /// invertibility.
    pub fn from_matrix(m: [[f64; 3]; 3]) -> Result<Self, RegistrationError> {
        if m.iter().flatten().any(|v| !v.is_finite()) {
            return Err(RegistrationError::Degenerate("non-finite homography entry".into()));
        }
        let s = m[2][2];
        if s.abs() < MIN_DET {
            return Err(RegistrationError::Degenerate(
                "homography has zero lower-right entry".into(),
            ));
        }
        let mut n = m;
        for row in &mut n {
            for v in row.iter_mut() {
                *v /= s;
            }
        }
        n[2][2] = 1.0;
        let h = Self { m: n };
        if h.det().abs() <= MIN_DET {
            return Err(RegistrationError::Degenerate(format!(
                "singular homography (det {:e})",
                h.det()
            )));
        }
        Ok(h)
    }

    pub fn matrix(&self) -> [[f64; 3]; 3] {
        self.m
    }

    pub fn to_row_major(&self) -> [f64; 9] {
        let m = &self.m;
        [m[0][0], m[0][1], m[0][2], m[1][0], m[1][1], m[1][2], m[2][0], m[2][1], m[2][2]]
    }

    /// The eight parameters `[h00, h01, h02, h10, h11, h12, h20, h21]`.
    pub fn params(&self) -> [f64; 8] {
        let m = &self.m;
        [m[0][0] - 1.0, m[0][1], m[0][2], m[1][0], m[1][1] - 1.0, m[1][2], m[2][0], m[2][1]]
    }

    pub fn det(&self) -> f64 {
        let m = &self.m;
        m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
            - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
    }

    /// Projects `(x, y)` with perspective divide.
    pub fn apply(&self, x: f64, y: f64) -> Result<(f64, f64), RegistrationError> {
        let m = &self.m;
        let w = m[2][0] * x + m[2][1] * y + m[2][2];
        if w.abs() < MIN_DET {
            return Err(RegistrationError::PointAtInfinity { x, y });
        }
        Ok((
            (m[0][0] * x + m[0][1] * y + m[0][2]) / w,
            (m[1][0] * x + m[1][1] * y + m[1][2]) / w,
        ))
    }

    pub fn inverse(&self) -> Result<Self, RegistrationError> {
        let m = &self.m;
        let adj = [
            [
                m[1][1] * m[2][2] - m[1][2] * m[2][1],
                m[0][2] * m[2][1] - m[0][1] * m[2][2],
                m[0][1] * m[1][2] - m[0][2] * m[1][1],
            ],
            [
                m[1][2] * m[2][0] - m[1][0] * m[2][2],
                m[0][0] * m[2][2] - m[0][2] * m[2][0],
                m[0][2] * m[1][0] - m[0][0] * m[1][2],
            ],
            [
                m[1][0] * m[2][1] - m[1][1] * m[2][0],
                m[0][1] * m[2][0] - m[0][0] * m[2][1],
                m[0][0] * m[1][1] - m[0][1] * m[1][0],
            ],
        ];
        Self::from_matrix(adj)
    }

    /// `self ∘ first`: applies `first`, then `self`; renormalized.
    pub fn compose(&self, first: &Homography) -> Result<Self, RegistrationError> {
        let (a, b) = (&self.m, &first.m);
        let mut out = [[0.0; 3]; 3];
        for (i, row) in out.iter_mut().enumerate() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = (0..3).map(|k| a[i][k] * b[k][j]).sum();
            }
        }
        Self::from_matrix(out)
    }

    /// Corners `(0,0), (w,0), (0,h), (w,h)` of a `w × h` frame.
    pub fn frame_corners(width: usize, height: usize) -> [(f64, f64); 4] {
        let (w, h) = (width as f64, height as f64);
        [(0.0, 0.0), (w, 0.0), (0.0, h), (w, h)]
    }

    /// Root-mean-square distance between the frame corners projected by
    /// `self` and by `other`.
    pub fn corner_rmse(&self, other: &Homography, width: usize, height: usize) -> Result<f64, RegistrationError> {
        let mut acc = 0.0;
        for (x, y) in Self::frame_corners(width, height) {
            let (ax, ay) = self.apply(x, y)?;
            let (bx, by) = other.apply(x, y)?;
            acc += (ax - bx).powi(2) + (ay - by).powi(2);
        }
        Ok((acc / 4.0).sqrt())
    }
}

/// True iff no frame corner moves by `bound · diagonal` or more under `h`.
pub fn viable(h: &Homography, width: usize, height: usize, bound: f64) -> bool {
    let diag = (width as f64).hypot(height as f64);
    Homography::frame_corners(width, height).iter().all(|&(x, y)| {
        h.apply(x, y)
            .map(|(px, py)| (px - x).hypot(py - y) < bound * diag)
            .unwrap_or(false)
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn identity_fixes_points() {
        let (x, y) = Homography::identity().apply(17.0, 23.0).unwrap();
        assert_eq!((x, y), (17.0, 23.0));
    }

    #[test]
    fn translation_shifts() {
        let h = Homography::from_params(0.0, 0.0, 5.0, 0.0, 0.0, -2.0, 0.0, 0.0).unwrap();
        assert_eq!(h.apply(10.0, 10.0).unwrap(), (15.0, 8.0));
    }

    #[test]
    fn perspective_divide() {
        let h = Homography::from_params(0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.001, 0.0).unwrap();
        let (x, y) = h.apply(100.0, 0.0).unwrap();
        assert!((x - 100.0 / 1.1).abs() < 1e-12);
        assert_eq!(y, 0.0);
    }

    #[test]
    fn point_at_infinity_is_error() {
        let h = Homography::from_params(0.0, 0.0, 0.0, 0.0, 0.0, 0.0, -0.01, 0.0).unwrap();
        assert!(matches!(
            h.apply(100.0, 3.0),
            Err(RegistrationError::PointAtInfinity { .. })
        ));
    }

    #[test]
    fn singular_rejected_and_normalized() {
        assert!(Homography::from_matrix([[1.0, 2.0, 0.0], [2.0, 4.0, 0.0], [0.0, 0.0, 1.0]]).is_err());
        let h = Homography::from_matrix([[2.0, 0.0, 4.0], [0.0, 2.0, 0.0], [0.0, 0.0, 2.0]]).unwrap();
        assert_eq!(h.to_row_major(), [1.0, 0.0, 2.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0]);
    }

    #[test]
    fn serde_is_nine_numbers() {
        let h = Homography::translation(3.0, -1.0);
        let v = serde_json::to_value(h).unwrap();
        assert_eq!(v.as_array().unwrap().len(), 9);
        let back: Homography = serde_json::from_value(v).unwrap();
        assert_eq!(back, h);
    }

    #[test]
    fn viability_examples() {
        let (w, h) = (640usize, 480usize);
        let diag = 800.0;
        assert!(viable(&Homography::identity(), w, h, 1e-9));
        assert!(!viable(&Homography::translation(0.5 * diag, 0.0), w, h, 0.2));
        // perspective term that moves the far corner by 0.05 diagonal
        // (w,h) -> (w,h)/(1 + a(w+h)); displacement = |(w,h)| a (w+h)/(1+a(w+h))
        let target = 0.05 * diag;
        let a = target / (diag * (w + h) as f64 - target * (w + h) as f64);
        let hp = Homography::from_params(0.0, 0.0, 0.0, 0.0, 0.0, 0.0, a, a).unwrap();
        let (px, py) = hp.apply(w as f64, h as f64).unwrap();
        assert!(((px - w as f64).hypot(py - h as f64) - target).abs() < 1e-9);
        assert!(viable(&hp, w, h, 0.2));
        assert!(!viable(&hp, w, h, 0.04));
    }

    fn arb_h() -> impl Strategy<Value = Homography> {
        (
            -0.2..0.2f64,
            -0.2..0.2f64,
            -50.0..50.0f64,
            -0.2..0.2f64,
            -0.2..0.2f64,
            -50.0..50.0f64,
            -1e-4..1e-4f64,
            -1e-4..1e-4f64,
        )
            .prop_map(|(a, b, c, d, e, f, g, h)| Homography::from_params(a, b, c, d, e, f, g, h).unwrap())
    }

    proptest! {
        #[test]
        fn inverse_roundtrip(h in arb_h(), x in 0.0..640.0f64, y in 0.0..480.0f64) {
            let (px, py) = h.apply(x, y).unwrap();
            let (bx, by) = h.inverse().unwrap().apply(px, py).unwrap();
            prop_assert!((bx - x).abs() < 1e-6 && (by - y).abs() < 1e-6);
        }

        #[test]
        fn compose_matches_sequential_application(a in arb_h(), b in arb_h(), x in 0.0..640.0f64, y in 0.0..480.0f64) {
            let ab = a.compose(&b).unwrap();
            prop_assert_eq!(ab.matrix()[2][2], 1.0);
            let (p, q) = b.apply(x, y).unwrap();
            let (p, q) = a.apply(p, q).unwrap();
            let (r, s) = ab.apply(x, y).unwrap();
            prop_assert!((p - r).abs() < 1e-6 && (q - s).abs() < 1e-6);
        }

        #[test]
        fn viability_is_scale_consistent(
            a in -0.1..0.1f64, b in -0.1..0.1f64, c in -100.0..100.0f64,
            d in -0.1..0.1f64, e in -0.1..0.1f64, f in -100.0..100.0f64,
            k in 1u32..5, bound in 0.01..0.4f64,
        ) {
            let k = f64::from(k);
            let h1 = Homography::from_params(a, b, c, d, e, f, 0.0, 0.0).unwrap();
            let hk = Homography::from_params(a, b, c * k, d, e, f * k, 0.0, 0.0).unwrap();
            let (w, h) = (320usize, 240usize);
            let kw = (w as f64 * k) as usize;
            let kh = (h as f64 * k) as usize;
            prop_assert_eq!(viable(&h1, w, h, bound), viable(&hk, kw, kh, bound));
        }
    }
}
