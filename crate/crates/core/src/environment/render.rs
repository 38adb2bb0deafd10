//! Pinhole stereo rendering of a textured, head-facing screen.
//!
//! Frames: x right, y up, z forward. Pan turns the gaze toward +x, tilt
//! toward +y. Both eyes sit on a rig rotated by (pan, tilt) about the head
//! origin; each eye additionally turns inward by half the vergence angle.

use nalgebra::{Matrix3, Rotation3, Vector3};

use crate::environment::observation::{Image, StereoFrame};
use crate::environment::{EyePose, ScreenState};
use crate::stimulus::Texture;

/// Gray shown wherever a ray misses the screen.
pub const BACKGROUND: f32 = 0.5;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CameraSpec {
    pub width: usize,
    pub height: usize,
    pub hfov_deg: f64,
}

impl Default for CameraSpec {
    fn default() -> Self {
        Self {
            width: 320,
            height: 240,
            hfov_deg: 90.0,
        }
    }
}

impl CameraSpec {
    pub fn px_per_deg(&self) -> f64 {
        self.width as f64 / self.hfov_deg
    }

    pub fn deg_per_px(&self) -> f64 {
        self.hfov_deg / self.width as f64
    }

    /// Focal length in pixels such that small angles about the optical axis
    /// map at exactly `px_per_deg`.
    pub fn focal_px(&self) -> f64 {
        self.px_per_deg() * 180.0 / std::f64::consts::PI
    }
}

/// Static parameters of the rendered scene.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SceneGeometry {
    pub camera: CameraSpec,
    pub baseline_m: f64,
    /// Angular half-extent of the (square) screen seen from the head origin.
    pub screen_half_angle_deg: f64,
}

/// Sub-rectangle of the sensor to render, in absolute pixel coordinates.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Window {
    pub x0: usize,
    pub y0: usize,
    pub width: usize,
    pub height: usize,
}

impl Window {
    pub fn full(camera: &CameraSpec) -> Self {
        Self {
            x0: 0,
            y0: 0,
            width: camera.width,
            height: camera.height,
        }
    }

    pub fn centered(camera: &CameraSpec, span: usize) -> Self {
        Self {
            x0: (camera.width - span) / 2,
            y0: (camera.height - span) / 2,
            width: span,
            height: span,
        }
    }
}

/// Rotation that points the forward axis at (pan, tilt) degrees.
pub fn gaze_rotation(pan_deg: f64, tilt_deg: f64) -> Rotation3<f64> {
    Rotation3::from_axis_angle(&Vector3::y_axis(), pan_deg.to_radians())
        * Rotation3::from_axis_angle(&Vector3::x_axis(), -tilt_deg.to_radians())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Eye {
    Left,
    Right,
}

impl Eye {
    fn side(self) -> f64 {
        match self {
            Eye::Left => -1.0,
            Eye::Right => 1.0,
        }
    }
}

/// Texels per sensor pixel at the image center when `texture` is shown on
/// the screen (independent of distance: the screen's angular size is fixed).
pub fn texels_per_pixel(geometry: &SceneGeometry, texture: &Texture) -> f64 {
    let side = texture.width().min(texture.height()) as f64;
    let screen_px = 2.0 * geometry.screen_half_angle_deg.to_radians().tan() * geometry.camera.focal_px();
    side / screen_px
}

/// Band-limits a texture to the sensor sampling rate before rendering.
///
/// Point-sampling a texture whose texels are about one pixel wide makes the
/// image sharpness depend on the sub-pixel phase of the gaze: a half-pixel
/// rotation of each eye blurs both images and lowers reconstruction losses
/// for reasons unrelated to disparity. A Gaussian of half a pixel (at least
/// one texel) suppresses that phase dependence.
pub fn prefilter(geometry: &SceneGeometry, texture: &Texture) -> Texture {
    let sigma = (0.5 * texels_per_pixel(geometry, texture)).max(1.0);
    texture.gaussian_blur(sigma)
}

/// Optical center and camera-to-world rotation of one eye.
pub fn eye_extrinsics(pose: &EyePose, eye: Eye, baseline_m: f64) -> (Vector3<f64>, Rotation3<f64>) {
    let rig = gaze_rotation(pose.pan, pose.tilt);
    let s = eye.side();
    let center = rig * Vector3::new(s * baseline_m / 2.0, 0.0, 0.0);
    let inward = Rotation3::from_axis_angle(&Vector3::y_axis(), (-s * pose.vergence / 2.0).to_radians());
    (center, rig * inward)
}

/// Homography mapping screen-plane coordinates `(u, v, 1)` (meters from the
/// screen center along its right/up axes) to homogeneous pixel coordinates.
pub fn plane_to_image(geometry: &SceneGeometry, pose: &EyePose, screen: &ScreenState, eye: Eye) -> Matrix3<f64> {
    let (center, cam) = eye_extrinsics(pose, eye, geometry.baseline_m);
    let rs = gaze_rotation(screen.pan, screen.tilt);
    let screen_center = rs * Vector3::new(0.0, 0.0, screen.distance);
    let u_axis = rs * Vector3::x();
    let v_axis = rs * Vector3::y();
    let to_cam = cam.inverse();
    let basis = Matrix3::from_columns(&[to_cam * u_axis, to_cam * v_axis, to_cam * (screen_center - center)]);
    let f = geometry.camera.focal_px();
    let k = Matrix3::new(
        f, 0.0, geometry.camera.width as f64 / 2.0,
        0.0, -f, geometry.camera.height as f64 / 2.0,
        0.0, 0.0, 1.0,
    );
    k * basis
}

/// Renders the requested window of one eye's image.
pub fn render_eye(
    geometry: &SceneGeometry,
    pose: &EyePose,
    screen: &ScreenState,
    texture: &Texture,
    eye: Eye,
    window: Window,
) -> Image {
    let h = plane_to_image(geometry, pose, screen, eye);
    let inv = h.try_inverse().unwrap_or_else(Matrix3::zeros);
    let half = screen.distance * geometry.screen_half_angle_deg.to_radians().tan();
    // central square of the texture spans the screen
    let side = texture.width().min(texture.height()) as f64;
    let off_x = (texture.width() as f64 - side) / 2.0;
    let off_y = (texture.height() as f64 - side) / 2.0;

    let mut data = Vec::with_capacity(window.width * window.height * 3);
    for y in window.y0..window.y0 + window.height {
        for x in window.x0..window.x0 + window.width {
            let q = inv * Vector3::new(x as f64 + 0.5, y as f64 + 0.5, 1.0);
            let rgb = if q.z > 0.0 {
                let (u, v) = (q.x / q.z, q.y / q.z);
                if u.abs() <= half && v.abs() <= half {
                    let tx = off_x + (u / half + 1.0) / 2.0 * side - 0.5;
                    let ty = off_y + (1.0 - v / half) / 2.0 * side - 0.5;
                    texture.sample(tx, ty)
                } else {
                    [BACKGROUND; 3]
                }
            } else {
                [BACKGROUND; 3]
            };
            data.extend_from_slice(&rgb);
        }
    }
    Image::new(window.width, window.height, window.x0, window.y0, data)
}

pub fn render_window(
    geometry: &SceneGeometry,
    pose: &EyePose,
    screen: &ScreenState,
    texture: &Texture,
    window: Window,
) -> StereoFrame {
    StereoFrame {
        left: render_eye(geometry, pose, screen, texture, Eye::Left, window),
        right: render_eye(geometry, pose, screen, texture, Eye::Right, window),
    }
}
