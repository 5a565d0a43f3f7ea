//! Lifting 2D detections onto the mesh through the cached depth buffer.

use nalgebra::Point3;
use serde::{Deserialize, Serialize};

use crate::gateway::{percent_to_pixel, Detection2D};
use crate::mesh::{SurfacePoint, TriangleMesh};
use crate::render::{Camera, Ray, RenderError, RenderedView};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum BackprojectError {
    #[error("patch size must be odd and >= 1, got {0}")]
    InvalidPatch(usize),
    #[error(transparent)]
    Render(#[from] RenderError),
}

pub type Result<T> = std::result::Result<T, BackprojectError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LiftedPoint {
    pub prompt_id: String,
    pub view_id: usize,
    #[serde(with = "xyz")]
    pub position: Point3<f64>,
    pub anchor: SurfacePoint,
    pub support: usize,
}

mod xyz {
    use nalgebra::Point3;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(p: &Point3<f64>, s: S) -> Result<S::Ok, S::Error> {
        [p.x, p.y, p.z].serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Point3<f64>, D::Error> {
        Ok(<[f64; 3]>::deserialize(d)?.into())
    }
}

/// Lift result before a prompt is attached.
#[derive(Debug, Clone, PartialEq)]
pub struct Lift {
    pub position: Point3<f64>,
    pub anchor: SurfacePoint,
    pub support: usize,
}

pub fn unproject_ray(camera: &Camera, x: f64, y: f64) -> Result<Ray> {
    Ok(camera.unproject_ray(x, y)?)
}

/// Hit along the center ray of pixel (i, j) using the cached depth, or
/// `None` on background. The anchor is the closest point of the recorded face.
pub fn backproject_pixel(mesh: &TriangleMesh, view: &RenderedView, i: u32, j: u32) -> Option<Lift> {
    let (position, face) = pixel_hit(view, i, j)?;
    Some(Lift {
        position,
        anchor: mesh.closest_on_face(face, &position),
        support: 1,
    })
}

fn pixel_hit(view: &RenderedView, i: u32, j: u32) -> Option<(Point3<f64>, usize)> {
    let t = view.depth_at(i, j);
    if !t.is_finite() {
        return None;
    }
    Some((view.camera.pixel_ray(i, j).at(t), view.face_at(i, j)?))
}

/// Mean of the back-projections of every on-mesh pixel in the `h`×`h`
/// window centered on the rounded pixel, snapped to the surface. Pixels on
/// other faces than the center count too; background pixels are skipped.
/// `h = 1` is exactly [`backproject_pixel`].
pub fn backproject_patch(mesh: &TriangleMesh, view: &RenderedView, x: f64, y: f64, h: usize) -> Result<Option<Lift>> {
    if h % 2 == 0 {
        return Err(BackprojectError::InvalidPatch(h));
    }
    let (ci, cj) = (x.round() as i64, y.round() as i64);
    if h == 1 {
        if !view.in_bounds(ci, cj) {
            return Ok(None);
        }
        return Ok(backproject_pixel(mesh, view, ci as u32, cj as u32));
    }
    let r = (h / 2) as i64;
    let mut sum = nalgebra::Vector3::zeros();
    let mut count = 0usize;
    for j in (cj - r)..=(cj + r) {
        for i in (ci - r)..=(ci + r) {
            if !view.in_bounds(i, j) {
                continue;
            }
            if let Some((p, _)) = pixel_hit(view, i as u32, j as u32) {
                sum += p.coords;
                count += 1;
            }
        }
    }
    if count == 0 {
        return Ok(None);
    }
    let position = Point3::from(sum / count as f64);
    let anchor = mesh.nearest_surface_point(&position).expect("mesh with rendered pixels is not empty");
    Ok(Some(Lift {
        position,
        anchor,
        support: count,
    }))
}

/// Lifts a detection given in percent coordinates.
pub fn lift_detection(mesh: &TriangleMesh, view: &RenderedView, det: &Detection2D, h: usize) -> Result<Option<LiftedPoint>> {
    let (x, y) = percent_to_pixel(det.x, det.y, view.width(), view.height());
    Ok(backproject_patch(mesh, view, x, y, h)?.map(|l| LiftedPoint {
        prompt_id: det.prompt_id.clone(),
        view_id: det.view_id,
        position: l.position,
        anchor: l.anchor,
        support: l.support,
    }))
}
