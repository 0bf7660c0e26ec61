//! Calibrated pinhole cameras: intrinsics, world-to-camera extrinsics,
//! and the camera-file format.

use crate::error::{Error, Result};
use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};
use std::path::Path;

/// Pinhole camera. Rotation maps world to camera coordinates; translation
/// is in millimeters. The principal point must lie inside the image.
#[derive(Debug, Clone, PartialEq)]
pub struct Camera {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
    pub width: u32,
    pub height: u32,
}

/// Result of projecting a world point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Projection {
    pub u: f64,
    pub v: f64,
    /// Camera-space depth in mm (positive in front of the camera).
    pub depth: f64,
    pub in_frustum: bool,
}

impl Camera {
    pub fn new(
        fx: f64,
        fy: f64,
        cx: f64,
        cy: f64,
        rotation: Matrix3<f64>,
        translation: Vector3<f64>,
        width: u32,
        height: u32,
    ) -> Result<Self> {
        if !(fx > 0.0 && fy > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "focal lengths must be positive (fx={fx}, fy={fy})"
            )));
        }
        if !(cx >= 0.0 && cx < width as f64 && cy >= 0.0 && cy < height as f64) {
            return Err(Error::InvalidArgument(format!(
                "principal point ({cx},{cy}) outside image {width}x{height}"
            )));
        }
        let rtr = rotation.transpose() * rotation;
        let dev = (rtr - Matrix3::identity()).abs().max();
        if dev > 1e-8 {
            return Err(Error::InvalidArgument(format!(
                "rotation not orthonormal (|R^T R - I| = {dev:.3e})"
            )));
        }
        if (rotation.determinant() - 1.0).abs() > 1e-6 {
            return Err(Error::InvalidArgument(
                "rotation must be proper (det R = +1)".into(),
            ));
        }
        Ok(Camera {
            fx,
            fy,
            cx,
            cy,
            rotation,
            translation,
            width,
            height,
        })
    }

    /// Axis-aligned camera at the origin looking down +z.
    pub fn identity(fx: f64, fy: f64, cx: f64, cy: f64, width: u32, height: u32) -> Result<Self> {
        Camera::new(fx, fy, cx, cy, Matrix3::identity(), Vector3::zeros(), width, height)
    }

    /// Perspective projection. The point is in the frustum when it lies in
    /// front of the camera and its pixel coordinates fall inside
    /// [0, W-1] x [0, H-1].
    pub fn project(&self, p: &Vector3<f64>) -> Projection {
        let q = self.rotation * p + self.translation;
        let depth = q.z;
        if depth <= 1e-6 {
            return Projection {
                u: f64::NAN,
                v: f64::NAN,
                depth,
                in_frustum: false,
            };
        }
        let u = self.fx * q.x / q.z + self.cx;
        let v = self.fy * q.y / q.z + self.cy;
        let in_frustum = u >= 0.0
            && u <= (self.width - 1) as f64
            && v >= 0.0
            && v <= (self.height - 1) as f64;
        Projection {
            u,
            v,
            depth,
            in_frustum,
        }
    }

    /// Analytic inverse of `project`: world point at pixel (u, v) and
    /// camera depth `depth`.
    pub fn unproject(&self, u: f64, v: f64, depth: f64) -> Vector3<f64> {
        let q = Vector3::new(
            (u - self.cx) / self.fx * depth,
            (v - self.cy) / self.fy * depth,
            depth,
        );
        self.rotation.transpose() * (q - self.translation)
    }

    /// Camera center in world coordinates.
    pub fn center(&self) -> Vector3<f64> {
        -(self.rotation.transpose() * self.translation)
    }

    /// Camera looking from `eye` toward `target` with `up` hint.
    pub fn look_at(
        eye: Vector3<f64>,
        target: Vector3<f64>,
        up: Vector3<f64>,
        fx: f64,
        fy: f64,
        width: u32,
        height: u32,
    ) -> Result<Camera> {
        let fwd = (target - eye).normalize();
        let right = fwd.cross(&up).normalize();
        let down = fwd.cross(&right); // +y in image space points down
        let rotation = Matrix3::from_rows(&[right.transpose(), down.transpose(), fwd.transpose()]);
        let translation = -(rotation * eye);
        Camera::new(
            fx,
            fy,
            (width as f64 - 1.0) / 2.0,
            (height as f64 - 1.0) / 2.0,
            rotation,
            translation,
            width,
            height,
        )
    }
}

// serialized form; key names are normative for the camera file
#[derive(Serialize, Deserialize)]
struct CameraRecord {
    fx: f64,
    fy: f64,
    cx: f64,
    cy: f64,
    #[serde(rename = "R")]
    r: [f64; 9],
    t: [f64; 3],
    width: u32,
    height: u32,
}

#[derive(Serialize, Deserialize)]
struct CameraFile {
    cameras: Vec<CameraRecord>,
}

/// Read a camera file: a JSON document with an array "cameras", each entry
/// holding fx, fy, cx, cy, R (9 numbers row-major), t (3 numbers, mm),
/// width, height.
pub fn read_cameras(path: impl AsRef<Path>) -> Result<Vec<Camera>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let parsed: CameraFile = serde_json::from_str(&text)
        .map_err(|e| Error::parse(path, format!("line {}", e.line()), e.to_string()))?;
    parsed
        .cameras
        .into_iter()
        .map(|c| {
            Camera::new(
                c.fx,
                c.fy,
                c.cx,
                c.cy,
                Matrix3::from_row_slice(&c.r),
                Vector3::from_row_slice(&c.t),
                c.width,
                c.height,
            )
        })
        .collect()
}

pub fn write_cameras(cameras: &[Camera], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let records: Vec<CameraRecord> = cameras
        .iter()
        .map(|c| {
            let mut r = [0.0; 9];
            for i in 0..3 {
                for j in 0..3 {
                    r[i * 3 + j] = c.rotation[(i, j)];
                }
            }
            CameraRecord {
                fx: c.fx,
                fy: c.fy,
                cx: c.cx,
                cy: c.cy,
                r,
                t: [c.translation.x, c.translation.y, c.translation.z],
                width: c.width,
                height: c.height,
            }
        })
        .collect();
    let text = serde_json::to_string_pretty(&CameraFile { cameras: records }).expect("serializable");
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::prelude::*;
    use rand_chacha::ChaCha12Rng;

    #[test]
    fn optical_axis_hits_principal_point() {
        let cam = Camera::identity(100.0, 100.0, 50.0, 50.0, 101, 101).unwrap();
        let p = cam.project(&Vector3::new(0.0, 0.0, 1.0));
        assert!(p.in_frustum);
        assert!((p.u - 50.0).abs() < 1e-12);
        assert!((p.v - 50.0).abs() < 1e-12);
        assert!((p.depth - 1.0).abs() < 1e-12);
    }

    #[test]
    fn behind_camera_out_of_frustum() {
        let cam = Camera::identity(100.0, 100.0, 50.0, 50.0, 101, 101).unwrap();
        let p = cam.project(&Vector3::new(0.0, 0.0, -1.0));
        assert!(!p.in_frustum);
    }

    /// Closed-form inverse oracle: unproject at the returned depth
    /// recovers the world point.
    #[test]
    fn unproject_round_trip() {
        let mut rng = ChaCha12Rng::seed_from_u64(3);
        for _ in 0..50 {
            let rot = nalgebra::Rotation3::from_euler_angles(
                rng.gen_range(-3.0..3.0),
                rng.gen_range(-1.5..1.5),
                rng.gen_range(-3.0..3.0),
            );
            let cam = Camera::new(
                rng.gen_range(50.0..500.0),
                rng.gen_range(50.0..500.0),
                rng.gen_range(10.0..90.0),
                rng.gen_range(10.0..90.0),
                *rot.matrix(),
                Vector3::new(
                    rng.gen_range(-10.0..10.0),
                    rng.gen_range(-10.0..10.0),
                    rng.gen_range(-10.0..10.0),
                ),
                100,
                100,
            )
            .unwrap();
            let p = Vector3::new(
                rng.gen_range(-100.0..100.0),
                rng.gen_range(-100.0..100.0),
                rng.gen_range(-100.0..100.0),
            );
            let proj = cam.project(&p);
            if proj.depth > 1e-6 {
                let back = cam.unproject(proj.u, proj.v, proj.depth);
                assert!((back - p).norm() < 1e-9, "{:?} vs {:?}", back, p);
            }
        }
    }

    #[test]
    fn bad_rotation_rejected() {
        let mut r = Matrix3::identity();
        r[(0, 0)] = 2.0;
        assert!(Camera::new(100.0, 100.0, 50.0, 50.0, r, Vector3::zeros(), 100, 100).is_err());
        // reflection (det = -1)
        let mut r = Matrix3::identity();
        r[(0, 0)] = -1.0;
        assert!(Camera::new(100.0, 100.0, 50.0, 50.0, r, Vector3::zeros(), 100, 100).is_err());
    }

    #[test]
    fn camera_file_round_trip() {
        let dir = crate::testutil::tmpdir("cams");
        let cams: Vec<Camera> = (0..3)
            .map(|i| {
                let rot = nalgebra::Rotation3::from_euler_angles(0.1 * i as f64, 0.2, -0.3);
                Camera::new(
                    120.0 + i as f64,
                    130.0,
                    63.5,
                    63.5,
                    *rot.matrix(),
                    Vector3::new(1.0, 2.0, 400.0),
                    128,
                    128,
                )
                .unwrap()
            })
            .collect();
        let path = dir.join("cameras.json");
        write_cameras(&cams, &path).unwrap();
        let back = read_cameras(&path).unwrap();
        assert_eq!(cams.len(), back.len());
        for (a, b) in cams.iter().zip(&back) {
            assert!((a.rotation - b.rotation).abs().max() < 1e-12);
            assert!((a.translation - b.translation).norm() < 1e-12);
            assert_eq!((a.fx, a.fy, a.cx, a.cy), (b.fx, b.fy, b.cx, b.cy));
        }
    }

    #[test]
    fn look_at_centers_target() {
        let eye = Vector3::new(300.0, 100.0, -50.0);
        let cam = Camera::look_at(eye, Vector3::zeros(), Vector3::z(), 200.0, 200.0, 128, 128).unwrap();
        let p = cam.project(&Vector3::zeros());
        assert!(p.in_frustum);
        assert!((p.u - 63.5).abs() < 1e-9);
        assert!((p.v - 63.5).abs() < 1e-9);
        assert!((p.depth - eye.norm()).abs() < 1e-9);
        assert!((cam.center() - eye).norm() < 1e-9);
    }
}
