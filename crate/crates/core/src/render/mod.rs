//! Pinhole cameras, view catalogs and the software renderer that produces
//! color, depth (ray parameter) and face-id buffers.

mod export;
mod raster;

use nalgebra::{Point3, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use export::{decode_raw_buffer, encode_depth_raw, encode_face_raw, encode_png, RawBuffer, RAW_MAGIC};
pub use raster::{intersect_triangle, render, render_with_marker, MarkedView, RenderedView, ShadeStyle, MARKER_COLOR, NO_FACE};
pub(crate) use raster::visible_projection;

#[derive(Debug, Error, PartialEq)]
pub enum RenderError {
    #[error("invalid camera: {0}")]
    InvalidCamera(String),
    #[error("invalid view count {0}: need at least one view")]
    InvalidCount(usize),
    #[error("point is behind the camera")]
    BehindCamera,
    #[error("pixel ({0}, {1}) lies outside the image")]
    OutOfBounds(f64, f64),
    #[error("raw buffer: {0}")]
    RawBuffer(String),
}

pub type Result<T> = std::result::Result<T, RenderError>;

/// Default camera distance from the origin, in normalized units.
pub const DEFAULT_DISTANCE: f64 = 2.5;
/// Default vertical field of view in degrees.
pub const DEFAULT_FOV_DEG: f64 = 40.0;
/// Default square image size in pixels.
pub const DEFAULT_IMAGE_SIZE: u32 = 512;

/// Serializable camera parameters; [`Camera`] derives its basis from these.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraParams {
    pub position: [f64; 3],
    pub target: [f64; 3],
    pub up_hint: [f64; 3],
    pub fov_y: f64,
    pub width: u32,
    pub height: u32,
    pub near: f64,
    pub far: f64,
}

/// A pinhole camera looking at `target`. Pixel coordinates are continuous
/// with the origin at the top-left image corner, +x right and +y down; the
/// center of integer pixel `(i, j)` sits at `(i + 0.5, j + 0.5)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "CameraParams", into = "CameraParams")]
pub struct Camera {
    params: CameraParams,
    position: Point3<f64>,
    forward: Vector3<f64>,
    right: Vector3<f64>,
    up: Vector3<f64>,
    focal: f64,
}

impl TryFrom<CameraParams> for Camera {
    type Error = RenderError;

    fn try_from(p: CameraParams) -> Result<Self> {
        Camera::new(p)
    }
}

impl From<Camera> for CameraParams {
    fn from(c: Camera) -> Self {
        c.params
    }
}

/// A ray `origin + t * direction` with unit `direction`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ray {
    pub origin: Point3<f64>,
    pub direction: Vector3<f64>,
}

impl Ray {
    pub fn at(&self, t: f64) -> Point3<f64> {
        self.origin + self.direction * t
    }
}

/// Continuous pixel location plus the ray parameter of the projected point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Projection {
    pub x: f64,
    pub y: f64,
    pub t: f64,
}

impl Camera {
    pub fn new(params: CameraParams) -> Result<Self> {
        let position = Point3::from(params.position);
        let target = Point3::from(params.target);
        let offset = target - position;
        if !(offset.norm() > 0.0) {
            return Err(RenderError::InvalidCamera("position equals target".into()));
        }
        if !(params.fov_y > 0.0 && params.fov_y < std::f64::consts::PI) {
            return Err(RenderError::InvalidCamera(format!("fov {} outside (0, pi)", params.fov_y)));
        }
        if params.width < 16 || params.height < 16 {
            return Err(RenderError::InvalidCamera(format!(
                "image {}x{} smaller than 16x16",
                params.width, params.height
            )));
        }
        if !(params.near > 0.0 && params.near < params.far) {
            return Err(RenderError::InvalidCamera(format!(
                "near {} / far {} must satisfy 0 < near < far",
                params.near, params.far
            )));
        }
        let forward = offset.normalize();
        let mut hint = Vector3::from(params.up_hint);
        if hint.norm() == 0.0 || forward.cross(&hint).norm() < 1e-9 * hint.norm() {
            hint = Vector3::x();
        }
        let right = forward.cross(&hint).normalize();
        let up = right.cross(&forward);
        let focal = params.height as f64 * 0.5 / (params.fov_y * 0.5).tan();
        Ok(Self {
            params,
            position,
            forward,
            right,
            up,
            focal,
        })
    }

    /// Camera on the ray from the origin along `direction`, looking back at
    /// the origin, with default near/far planes.
    pub fn looking_at_origin(direction: Vector3<f64>, distance: f64, fov_y: f64, width: u32, height: u32) -> Result<Self> {
        if !(distance > 0.0) {
            return Err(RenderError::InvalidCamera(format!("distance {distance} must be positive")));
        }
        let dir = direction.normalize();
        Self::new(CameraParams {
            position: (dir * distance).into(),
            target: [0.0; 3],
            up_hint: [0.0, 1.0, 0.0],
            fov_y,
            width,
            height,
            near: 0.01 * distance,
            far: 3.0 * distance + 2.0,
        })
    }

    pub fn params(&self) -> &CameraParams {
        &self.params
    }

    pub fn position(&self) -> Point3<f64> {
        self.position
    }

    pub fn forward(&self) -> Vector3<f64> {
        self.forward
    }

    pub fn width(&self) -> u32 {
        self.params.width
    }

    pub fn height(&self) -> u32 {
        self.params.height
    }

    pub fn near(&self) -> f64 {
        self.params.near
    }

    pub fn far(&self) -> f64 {
        self.params.far
    }

    /// Distance from the camera center to its look-at target.
    pub fn distance(&self) -> f64 {
        (Point3::from(self.params.target) - self.position).norm()
    }

    pub fn focal_length_px(&self) -> f64 {
        self.focal
    }

    /// World-space size of one pixel at ray parameter `depth`.
    pub fn pixel_footprint(&self, depth: f64) -> f64 {
        depth / self.focal
    }

    pub fn project(&self, p: &Point3<f64>) -> Result<Projection> {
        let d = p - self.position;
        let z = d.dot(&self.forward);
        if !(z > 0.0) {
            return Err(RenderError::BehindCamera);
        }
        let x = d.dot(&self.right);
        let y = d.dot(&self.up);
        Ok(Projection {
            x: self.params.width as f64 * 0.5 + self.focal * x / z,
            y: self.params.height as f64 * 0.5 - self.focal * y / z,
            t: d.norm(),
        })
    }

    /// Ray through a continuous pixel location.
    pub fn unproject_ray(&self, x: f64, y: f64) -> Result<Ray> {
        let (w, h) = (self.params.width as f64, self.params.height as f64);
        if !(x >= 0.0 && x <= w && y >= 0.0 && y <= h) {
            return Err(RenderError::OutOfBounds(x, y));
        }
        Ok(self.ray_unchecked(x, y))
    }

    pub(crate) fn ray_unchecked(&self, x: f64, y: f64) -> Ray {
        let dir = self.forward * self.focal + self.right * (x - self.params.width as f64 * 0.5)
            - self.up * (y - self.params.height as f64 * 0.5);
        Ray {
            origin: self.position,
            direction: dir.normalize(),
        }
    }

    /// Ray through the center of integer pixel `(i, j)`.
    pub fn pixel_ray(&self, i: u32, j: u32) -> Ray {
        self.ray_unchecked(i as f64 + 0.5, j as f64 + 0.5)
    }
}

/// View directions for a catalog count: 6 gives the axis directions, 26 the
/// nonzero offsets of {-1,0,1}^3 (both in lexicographic offset order); any
/// other count uses a Fibonacci sphere.
pub fn view_directions(count: usize) -> Result<Vec<Vector3<f64>>> {
    match count {
        0 => Err(RenderError::InvalidCount(0)),
        6 | 26 => {
            let mut dirs = Vec::with_capacity(count);
            for x in -1i32..=1 {
                for y in -1i32..=1 {
                    for z in -1i32..=1 {
                        let nonzero = (x != 0) as u8 + (y != 0) as u8 + (z != 0) as u8;
                        if nonzero == 0 || (count == 6 && nonzero != 1) {
                            continue;
                        }
                        dirs.push(Vector3::new(x as f64, y as f64, z as f64).normalize());
                    }
                }
            }
            Ok(dirs)
        }
        n => {
            let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
            Ok((0..n)
                .map(|i| {
                    let y = 1.0 - 2.0 * (i as f64 + 0.5) / n as f64;
                    let r = (1.0 - y * y).max(0.0).sqrt();
                    let phi = golden * i as f64;
                    Vector3::new(r * phi.cos(), y, r * phi.sin())
                })
                .collect())
        }
    }
}

/// Cameras at `distance` from the origin looking at it, one per catalog
/// direction, with square images of `image_size` pixels.
pub fn generate_views(count: usize, distance: f64, image_size: u32, fov_deg: f64) -> Result<Vec<Camera>> {
    view_directions(count)?
        .into_iter()
        .map(|d| Camera::looking_at_origin(d, distance, fov_deg.to_radians(), image_size, image_size))
        .collect()
}
