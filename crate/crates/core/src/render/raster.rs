use std::sync::OnceLock;

use nalgebra::Point3;
use serde::{Deserialize, Serialize};

use super::{Camera, Ray};
use crate::mesh::{SurfacePoint, TriangleMesh};

/// Face-id sentinel for background pixels.
pub const NO_FACE: u32 = u32::MAX;

const EDGE_EPS: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShadeStyle {
    pub background: [u8; 3],
    pub albedo: [u8; 3],
    pub ambient: f64,
}

impl Default for ShadeStyle {
    fn default() -> Self {
        Self {
            background: [230, 230, 230],
            albedo: [150, 160, 185],
            ambient: 0.15,
        }
    }
}

/// Color, depth and face-id buffers for one camera. Depth stores the ray
/// parameter `t` of the nearest hit along the pixel-center ray and is
/// `+inf` exactly where the face id is [`NO_FACE`].
#[derive(Debug, Clone)]
pub struct RenderedView {
    pub view_id: usize,
    pub camera: Camera,
    color: Vec<[u8; 3]>,
    depth: Vec<f64>,
    face_id: Vec<u32>,
    png: OnceLock<Vec<u8>>,
}

impl RenderedView {
    pub fn width(&self) -> u32 {
        self.camera.width()
    }

    pub fn height(&self) -> u32 {
        self.camera.height()
    }

    fn index(&self, i: u32, j: u32) -> usize {
        j as usize * self.width() as usize + i as usize
    }

    pub fn in_bounds(&self, i: i64, j: i64) -> bool {
        i >= 0 && j >= 0 && i < self.width() as i64 && j < self.height() as i64
    }

    pub fn depth_at(&self, i: u32, j: u32) -> f64 {
        self.depth[self.index(i, j)]
    }

    pub fn face_at(&self, i: u32, j: u32) -> Option<usize> {
        match self.face_id[self.index(i, j)] {
            NO_FACE => None,
            f => Some(f as usize),
        }
    }

    pub fn color_at(&self, i: u32, j: u32) -> [u8; 3] {
        self.color[self.index(i, j)]
    }

    pub fn color_buffer(&self) -> &[[u8; 3]] {
        &self.color
    }

    pub fn depth_buffer(&self) -> &[f64] {
        &self.depth
    }

    pub fn face_buffer(&self) -> &[u32] {
        &self.face_id
    }

    /// Integer pixels with a finite depth, in row-major order.
    pub fn foreground_pixels(&self) -> Vec<(u32, u32)> {
        let w = self.width();
        self.depth
            .iter()
            .enumerate()
            .filter(|(_, d)| d.is_finite())
            .map(|(k, _)| ((k as u32) % w, (k as u32) / w))
            .collect()
    }

    /// PNG encoding of the color buffer, computed once.
    pub fn png_bytes(&self) -> &[u8] {
        self.png.get_or_init(|| super::encode_png(self))
    }

    /// Rebuilds a view from exported buffers (replay fixtures).
    pub fn from_buffers(view_id: usize, camera: Camera, color: Vec<[u8; 3]>, depth: Vec<f64>, face_id: Vec<u32>) -> Option<Self> {
        let n = camera.width() as usize * camera.height() as usize;
        if color.len() != n || depth.len() != n || face_id.len() != n {
            return None;
        }
        Some(Self {
            view_id,
            camera,
            color,
            depth,
            face_id,
            png: OnceLock::new(),
        })
    }
}

/// Two-sided Möller–Trumbore; returns the ray parameter of the hit.
pub fn intersect_triangle(ray: &Ray, a: &Point3<f64>, b: &Point3<f64>, c: &Point3<f64>) -> Option<f64> {
    let e1 = b - a;
    let e2 = c - a;
    let p = ray.direction.cross(&e2);
    let det = e1.dot(&p);
    if det.abs() < 1e-300 {
        return None;
    }
    let inv = 1.0 / det;
    let s = ray.origin - a;
    let u = s.dot(&p) * inv;
    if !(-EDGE_EPS..=1.0 + EDGE_EPS).contains(&u) {
        return None;
    }
    let q = s.cross(&e1);
    let v = ray.direction.dot(&q) * inv;
    if v < -EDGE_EPS || u + v > 1.0 + EDGE_EPS {
        return None;
    }
    Some(e2.dot(&q) * inv)
}

/// Renders with per-pixel exact ray casting. Each triangle only tests the
/// pixels inside its projected bounding box (the whole image when a vertex
/// is behind the camera), which finds the same nearest hit as testing every
/// triangle for every pixel. Ties in `t` keep the lower face index.
pub fn render(mesh: &TriangleMesh, camera: &Camera, style: &ShadeStyle, view_id: usize) -> RenderedView {
    let (w, h) = (camera.width(), camera.height());
    let n = w as usize * h as usize;
    let mut depth = vec![f64::INFINITY; n];
    let mut face_id = vec![NO_FACE; n];
    let (near, far) = (camera.near(), camera.far());

    for (fi, f) in mesh.faces().iter().enumerate() {
        let tri = [mesh.vertices()[f[0]], mesh.vertices()[f[1]], mesh.vertices()[f[2]]];
        let (x0, x1, y0, y1) = match tri.iter().map(|v| camera.project(v)).collect::<Result<Vec<_>, _>>() {
            Ok(proj) => {
                let lo_x = proj.iter().map(|p| p.x).fold(f64::INFINITY, f64::min);
                let hi_x = proj.iter().map(|p| p.x).fold(f64::NEG_INFINITY, f64::max);
                let lo_y = proj.iter().map(|p| p.y).fold(f64::INFINITY, f64::min);
                let hi_y = proj.iter().map(|p| p.y).fold(f64::NEG_INFINITY, f64::max);
                if hi_x < -1.0 || hi_y < -1.0 || lo_x > w as f64 + 1.0 || lo_y > h as f64 + 1.0 {
                    continue;
                }
                (
                    (lo_x.floor() as i64 - 1).max(0),
                    (hi_x.ceil() as i64 + 1).min(w as i64 - 1),
                    (lo_y.floor() as i64 - 1).max(0),
                    (hi_y.ceil() as i64 + 1).min(h as i64 - 1),
                )
            }
            Err(_) => (0, w as i64 - 1, 0, h as i64 - 1),
        };
        for j in y0..=y1 {
            for i in x0..=x1 {
                let ray = camera.pixel_ray(i as u32, j as u32);
                if let Some(t) = intersect_triangle(&ray, &tri[0], &tri[1], &tri[2]) {
                    let k = j as usize * w as usize + i as usize;
                    if t >= near && t <= far && t < depth[k] {
                        depth[k] = t;
                        face_id[k] = fi as u32;
                    }
                }
            }
        }
    }

    let color = (0..n)
        .map(|k| match face_id[k] {
            NO_FACE => style.background,
            f => {
                let ray = camera.pixel_ray((k % w as usize) as u32, (k / w as usize) as u32);
                let lambert = mesh.face_normals()[f as usize].dot(&ray.direction).abs();
                let shade = style.ambient + (1.0 - style.ambient) * lambert;
                style.albedo.map(|c| (c as f64 * shade).round().clamp(0.0, 255.0) as u8)
            }
        })
        .collect();

    RenderedView {
        view_id,
        camera: *camera,
        color,
        depth,
        face_id,
        png: OnceLock::new(),
    }
}

/// A render with a red disc painted over a surface point.
#[derive(Debug, Clone)]
pub struct MarkedView {
    pub view: RenderedView,
    pub visible: bool,
}

pub const MARKER_COLOR: [u8; 3] = [255, 0, 0];

/// Renders, then paints a filled red disc of `radius_px` at the marker's
/// projection if the marker passes the depth test (within 1% of the camera
/// distance of the depth buffer). Radius 0 paints the single pixel that
/// contains the projection.
pub fn render_with_marker(
    mesh: &TriangleMesh,
    camera: &Camera,
    style: &ShadeStyle,
    view_id: usize,
    marker: &SurfacePoint,
    radius_px: f64,
) -> MarkedView {
    let mut view = render(mesh, camera, style, view_id);
    let Some((u, v)) = visible_projection(&view, &marker.position) else {
        return MarkedView { view, visible: false };
    };
    let w = view.width() as i64;
    let r = radius_px.max(0.0);
    let (ci, cj) = (u.floor() as i64, v.floor() as i64);
    let reach = r.ceil() as i64 + 1;
    for j in (cj - reach)..=(cj + reach) {
        for i in (ci - reach)..=(ci + reach) {
            if !view.in_bounds(i, j) {
                continue;
            }
            let (dx, dy) = (i as f64 + 0.5 - u, j as f64 + 0.5 - v);
            if (i == ci && j == cj) || dx * dx + dy * dy <= r * r {
                view.color[(j * w + i) as usize] = MARKER_COLOR;
            }
        }
    }
    MarkedView { view, visible: true }
}

/// Continuous pixel location of `p` when it is in frame and not hidden
/// behind the surface recorded in the depth buffer.
pub(crate) fn visible_projection(view: &RenderedView, p: &Point3<f64>) -> Option<(f64, f64)> {
    let proj = view.camera.project(p).ok()?;
    let (i, j) = (proj.x.floor() as i64, proj.y.floor() as i64);
    if !view.in_bounds(i, j) {
        return None;
    }
    let buffered = view.depth_at(i as u32, j as u32);
    let tolerance = 0.01 * view.camera.distance();
    (proj.t <= buffered + tolerance).then_some((proj.x, proj.y))
}
