use crate::error::{Error, Result};

/// Points closer to the image plane than this are never divided by.
pub const DEPTH_EPSILON: f64 = 1e-6;

const ROTATION_TOLERANCE: f64 = 1e-9;

/// Pinhole camera: intrinsics `K`, world-to-camera extrinsics `E` and the
/// image extent in pixels.
#[derive(Clone, Debug, PartialEq)]
pub struct CameraModel {
    k: [[f64; 3]; 3],
    e: [[f64; 4]; 4],
    width: usize,
    height: usize,
}

impl CameraModel {
    pub fn new(k: [[f64; 3]; 3], e: [[f64; 4]; 4], width: usize, height: usize) -> Result<Self> {
        if k[1][0] != 0.0 || k[2][0] != 0.0 || k[2][1] != 0.0 {
            return Err(Error::Camera("K must be upper-triangular".into()));
        }
        if k[2][2] != 1.0 {
            return Err(Error::Camera("K[2][2] must be 1".into()));
        }
        if !(k[0][0] > 0.0 && k[1][1] > 0.0) {
            return Err(Error::Camera("focal lengths must be positive".into()));
        }
        if e[3] != [0.0, 0.0, 0.0, 1.0] {
            return Err(Error::Camera("E bottom row must be [0, 0, 0, 1]".into()));
        }
        for i in 0..3 {
            for j in 0..3 {
                let dot: f64 = (0..3).map(|r| e[r][i] * e[r][j]).sum();
                let want = if i == j { 1.0 } else { 0.0 };
                if (dot - want).abs() > ROTATION_TOLERANCE {
                    return Err(Error::Camera(format!(
                        "rotation block of E is not orthonormal (RᵀR[{i}][{j}] = {dot})"
                    )));
                }
            }
        }
        if width == 0 || height == 0 {
            return Err(Error::Camera("image extent must be positive".into()));
        }
        if k.iter()
            .flatten()
            .chain(e.iter().flatten())
            .any(|v| !v.is_finite())
        {
            return Err(Error::Camera("non-finite calibration entry".into()));
        }
        Ok(Self {
            k,
            e,
            width,
            height,
        })
    }

    /// `fx = fy = focal`, principal point at the image center, given extrinsics.
    pub fn centered(focal: f64, e: [[f64; 4]; 4], width: usize, height: usize) -> Result<Self> {
        let k = [
            [focal, 0.0, width as f64 / 2.0],
            [0.0, focal, height as f64 / 2.0],
            [0.0, 0.0, 1.0],
        ];
        Self::new(k, e, width, height)
    }

    pub fn intrinsics(&self) -> &[[f64; 3]; 3] {
        &self.k
    }

    pub fn extrinsics(&self) -> &[[f64; 4]; 4] {
        &self.e
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    /// Camera-frame coordinates of a world point.
    pub fn to_camera(&self, p: [f64; 3]) -> [f64; 3] {
        let e = &self.e;
        let mut out = [0.0; 3];
        for (r, o) in out.iter_mut().enumerate() {
            *o = e[r][0] * p[0] + e[r][1] * p[1] + e[r][2] * p[2] + e[r][3];
        }
        out
    }

    /// `[u, v, 1]ᵀ = (1/z) · K · E · [x, y, z, 1]ᵀ`, with `z` the camera-frame depth.
    pub fn project(&self, points: &[[f64; 3]]) -> Projection {
        let n = points.len();
        let mut proj = Projection {
            u: Vec::with_capacity(n),
            v: Vec::with_capacity(n),
            depth: Vec::with_capacity(n),
            valid: Vec::with_capacity(n),
            width: self.width,
            height: self.height,
        };
        let k = &self.k;
        for &p in points {
            let c = self.to_camera(p);
            let z = c[2];
            let (u, v) = if z > DEPTH_EPSILON {
                let hu = k[0][0] * c[0] + k[0][1] * c[1] + k[0][2] * z;
                let hv = k[1][1] * c[1] + k[1][2] * z;
                (hu / z, hv / z)
            } else {
                (f64::NAN, f64::NAN)
            };
            let valid = z > DEPTH_EPSILON
                && u >= 0.0
                && u < self.width as f64
                && v >= 0.0
                && v < self.height as f64;
            proj.u.push(u);
            proj.v.push(v);
            proj.depth.push(z);
            proj.valid.push(valid);
        }
        proj
    }

    /// `K: 9 reals` and `E: 16 reals` rows, row-major.
    pub fn to_calibration_text(&self) -> String {
        let fmt = |vals: Vec<f64>| {
            vals.iter()
                .map(|v| format!("{v:?}"))
                .collect::<Vec<_>>()
                .join(" ")
        };
        format!(
            "K: {}\nE: {}\n",
            fmt(self.k.iter().flatten().copied().collect()),
            fmt(self.e.iter().flatten().copied().collect())
        )
    }
}

/// Parses a calibration file with one `K:` row (9 reals) and one `E:` row
/// (16 reals) and validates it against an image extent.
pub fn parse_calibration(text: &str, width: usize, height: usize) -> Result<CameraModel> {
    let mut k: Option<Vec<f64>> = None;
    let mut e: Option<Vec<f64>> = None;
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, rest) = line
            .split_once(':')
            .ok_or_else(|| Error::Camera(format!("line {}: expected 'K:' or 'E:'", lineno + 1)))?;
        let vals = rest
            .split_whitespace()
            .map(|t| {
                t.parse::<f64>()
                    .map_err(|_| Error::Camera(format!("line {}: bad number '{t}'", lineno + 1)))
            })
            .collect::<Result<Vec<_>>>()?;
        let slot = match key.trim() {
            "K" => &mut k,
            "E" => &mut e,
            other => return Err(Error::Camera(format!("unknown calibration row '{other}'"))),
        };
        if slot.is_some() {
            return Err(Error::Camera(format!("duplicate '{}' row", key.trim())));
        }
        *slot = Some(vals);
    }
    let k = k.ok_or_else(|| Error::Camera("missing K row".into()))?;
    let e = e.ok_or_else(|| Error::Camera("missing E row".into()))?;
    if k.len() != 9 {
        return Err(Error::Camera(format!("K needs 9 values, got {}", k.len())));
    }
    if e.len() != 16 {
        return Err(Error::Camera(format!("E needs 16 values, got {}", e.len())));
    }
    let mut km = [[0.0; 3]; 3];
    let mut em = [[0.0; 4]; 4];
    for i in 0..9 {
        km[i / 3][i % 3] = k[i];
    }
    for i in 0..16 {
        em[i / 4][i % 4] = e[i];
    }
    CameraModel::new(km, em, width, height)
}

/// Per-point image coordinates, camera-frame depth and frustum validity.
#[derive(Clone, Debug, PartialEq)]
pub struct Projection {
    pub u: Vec<f64>,
    pub v: Vec<f64>,
    pub depth: Vec<f64>,
    pub valid: Vec<bool>,
    pub width: usize,
    pub height: usize,
}

impl Projection {
    pub fn len(&self) -> usize {
        self.valid.len()
    }

    pub fn is_empty(&self) -> bool {
        self.valid.is_empty()
    }

    pub fn num_valid(&self) -> usize {
        self.valid.iter().filter(|&&v| v).count()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) const IDENTITY_E: [[f64; 4]; 4] = [
        [1.0, 0.0, 0.0, 0.0],
        [0.0, 1.0, 0.0, 0.0],
        [0.0, 0.0, 1.0, 0.0],
        [0.0, 0.0, 0.0, 1.0],
    ];

    #[test]
    fn principal_ray_hits_principal_point() {
        let k = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
        let cam = CameraModel::new(k, IDENTITY_E, 4, 4).unwrap();
        let p = cam.project(&[[0.0, 0.0, 1.0]]);
        assert_eq!((p.u[0], p.v[0]), (0.0, 0.0));
        assert!(p.valid[0]);
    }

    #[test]
    fn hand_evaluated_pinhole() {
        let k = [[100.0, 0.0, 50.0], [0.0, 100.0, 50.0], [0.0, 0.0, 1.0]];
        let cam = CameraModel::new(k, IDENTITY_E, 200, 200).unwrap();
        let p = cam.project(&[[2.0, 1.0, 2.0], [0.0, 0.0, -1.0], [0.0, 0.0, 0.0]]);
        assert!((p.u[0] - 150.0).abs() < 1e-9 && (p.v[0] - 100.0).abs() < 1e-9);
        assert!(p.valid[0]);
        assert!(!p.valid[1]);
        assert!(!p.valid[2]);
        assert_eq!(p.num_valid(), 1);
    }

    #[test]
    fn rejects_invalid_cameras() {
        let bad_k = [[1.0, 0.0, 0.0], [0.5, 1.0, 0.0], [0.0, 0.0, 1.0]];
        assert!(CameraModel::new(bad_k, IDENTITY_E, 4, 4).is_err());
        let neg_f = [[-1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
        assert!(CameraModel::new(neg_f, IDENTITY_E, 4, 4).is_err());
        let mut skewed = IDENTITY_E;
        skewed[0][1] = 0.1;
        let k = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
        assert!(CameraModel::new(k, skewed, 4, 4).is_err());
        let mut bottom = IDENTITY_E;
        bottom[3][0] = 1.0;
        assert!(CameraModel::new(k, bottom, 4, 4).is_err());
    }

    #[test]
    fn calibration_text_round_trip() {
        let k = [[410.0, 0.0, 256.0], [0.0, 410.0, 192.0], [0.0, 0.0, 1.0]];
        let e = [
            [0.0, -1.0, 0.0, 0.1],
            [0.0, 0.0, -1.0, 0.3],
            [1.0, 0.0, 0.0, -0.2],
            [0.0, 0.0, 0.0, 1.0],
        ];
        let cam = CameraModel::new(k, e, 512, 384).unwrap();
        let text = cam.to_calibration_text();
        let back = parse_calibration(&text, 512, 384).unwrap();
        assert_eq!(back, cam);
        assert!(parse_calibration("K: 1 0 0 0 1 0 0 0 1\n", 4, 4).is_err());
        assert!(parse_calibration("K: 1 2 3\nE: 1 0 0 0 0 1 0 0 0 0 1 0 0 0 0 1\n", 4, 4).is_err());
    }
}
