//! Synthetic binocular rig looking at a textured screen that moves at a
//! constant angular speed around the head.

mod observation;
pub mod render;

use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

pub use observation::{
    centered_origin, extract_observation, BinocularObservation, Crop, Image, ScaleView, StereoFrame,
    COARSE_POOL, COARSE_SPAN, CROP,
};
pub use render::{CameraSpec, Eye, SceneGeometry, Window};

use crate::control::{ActionSet, Joint};
use crate::error::{Error, Result};
use crate::stimulus::StimulusSet;

/// Vergence (degrees) that fixates a point straight ahead at `distance_m`.
pub fn vergence_demand(distance_m: f64, baseline_m: f64) -> Result<f64> {
    if !(distance_m > 0.0) || !(baseline_m > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "vergence demand needs positive distance and baseline, got {distance_m} m / {baseline_m} m"
        )));
    }
    Ok(2.0 * (baseline_m / (2.0 * distance_m)).atan().to_degrees())
}

/// Distance (m) whose vergence demand is `demand_deg`; infinite at 0°.
fn distance_for_demand(demand_deg: f64, baseline_m: f64) -> f64 {
    if demand_deg <= 0.0 {
        f64::INFINITY
    } else {
        baseline_m / (2.0 * (demand_deg.to_radians() / 2.0).tan())
    }
}

/// Angles in degrees, velocities in degrees per iteration.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EyePose {
    pub pan: f64,
    pub tilt: f64,
    pub vergence: f64,
    pub pan_velocity: f64,
    pub tilt_velocity: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScreenState {
    pub distance: f64,
    pub pan: f64,
    pub tilt: f64,
    pub pan_velocity: f64,
    pub tilt_velocity: f64,
    pub stimulus: usize,
}

/// Per-joint values in pixel units: speed errors in px/it, vergence in px.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct JointErrors {
    pub pan: f64,
    pub tilt: f64,
    pub vergence: f64,
}

impl JointErrors {
    pub fn get(&self, joint: Joint) -> f64 {
        match joint {
            Joint::Vergence => self.vergence,
            Joint::Pan => self.pan,
            Joint::Tilt => self.tilt,
        }
    }

    /// `value` on `joint`, zero on the other two.
    pub fn only(joint: Joint, value: f64) -> Self {
        let mut e = Self::default();
        match joint {
            Joint::Vergence => e.vergence = value,
            Joint::Pan => e.pan = value,
            Joint::Tilt => e.tilt = value,
        }
        e
    }
}

/// One action per joint, in px/it² (pan, tilt) or px/it (vergence).
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Actions {
    pub pan: f64,
    pub tilt: f64,
    pub vergence: f64,
}

impl Actions {
    pub fn set(&mut self, joint: Joint, value: f64) {
        match joint {
            Joint::Vergence => self.vergence = value,
            Joint::Pan => self.pan = value,
            Joint::Tilt => self.tilt = value,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvConfig {
    pub baseline_m: f64,
    pub distance_min_m: f64,
    pub distance_max_m: f64,
    /// Largest screen angular speed per axis, px/it.
    pub screen_speed_max_px: f64,
    pub pan_range_deg: f64,
    pub tilt_range_deg: f64,
    pub vergence_max_deg: f64,
    pub screen_half_angle_deg: f64,
    /// Half-width of the uniform initial vergence error, px.
    pub initial_vergence_error_px: f64,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            baseline_m: 0.065,
            distance_min_m: 0.5,
            distance_max_m: 5.0,
            screen_speed_max_px: 4.0,
            pan_range_deg: 15.0,
            tilt_range_deg: 15.0,
            vergence_max_deg: 8.0,
            screen_half_angle_deg: 32.0,
            initial_vergence_error_px: 4.0,
        }
    }
}

impl EnvConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if !(self.baseline_m > 0.0) {
            return bad("baseline_m must be positive");
        }
        if !(self.distance_min_m > 0.0 && self.distance_min_m <= self.distance_max_m) {
            return bad("need 0 < distance_min_m <= distance_max_m");
        }
        if !(self.screen_speed_max_px >= 0.0) || !self.screen_speed_max_px.is_finite() {
            return bad("screen_speed_max_px must be finite and >= 0");
        }
        if !(self.pan_range_deg > 0.0 && self.tilt_range_deg > 0.0) {
            return bad("pan/tilt ranges must be positive");
        }
        if !(self.vergence_max_deg > 0.0 && self.vergence_max_deg < 90.0) {
            return bad("vergence_max_deg must be in (0, 90)");
        }
        if !(self.screen_half_angle_deg > 0.0 && self.screen_half_angle_deg < 80.0) {
            return bad("screen_half_angle_deg must be in (0, 80)");
        }
        if !(self.initial_vergence_error_px >= 0.0) {
            return bad("initial_vergence_error_px must be >= 0");
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EnvState {
    pub eye: EyePose,
    pub screen: ScreenState,
    pub current: StereoFrame,
    pub previous: StereoFrame,
}

/// The simulated rig plus its current state.
#[derive(Clone, Debug)]
pub struct Environment {
    config: EnvConfig,
    geometry: SceneGeometry,
    stimuli: Arc<StimulusSet>,
    window: Window,
    state: EnvState,
}

impl Environment {
    /// Starts fixating a static screen at 2 m showing stimulus 0. Textures
    /// are band-limited to the sensor resolution (see [`render::prefilter`]).
    pub fn new(config: EnvConfig, stimuli: Arc<StimulusSet>) -> Result<Self> {
        config.validate()?;
        if stimuli.is_empty() {
            return Err(Error::EmptyStimulusSet);
        }
        let camera = CameraSpec::default();
        let geometry = SceneGeometry {
            camera,
            baseline_m: config.baseline_m,
            screen_half_angle_deg: config.screen_half_angle_deg,
        };
        let stimuli = Arc::new(stimuli.map(|t| render::prefilter(&geometry, t)));
        let window = Window::centered(&camera, COARSE_SPAN);
        let screen = ScreenState {
            distance: 2.0,
            pan: 0.0,
            tilt: 0.0,
            pan_velocity: 0.0,
            tilt_velocity: 0.0,
            stimulus: 0,
        };
        let eye = EyePose {
            vergence: vergence_demand(2.0, config.baseline_m)?,
            ..EyePose::default()
        };
        let frame = render::render_window(&geometry, &eye, &screen, stimuli.get(0).expect("non-empty"), window);
        Ok(Self {
            config,
            geometry,
            stimuli,
            window,
            state: EnvState {
                eye,
                screen,
                current: frame.clone(),
                previous: frame,
            },
        })
    }

    /// Renders the full 240×320 sensor instead of only the coarse window.
    pub fn with_full_frames(mut self) -> Self {
        self.window = Window::full(&self.geometry.camera);
        let frame = self.render(&self.state.eye, &self.state.screen).expect("stimulus checked");
        self.state.current = frame.clone();
        self.state.previous = frame;
        self
    }

    pub fn config(&self) -> &EnvConfig {
        &self.config
    }

    pub fn camera(&self) -> &CameraSpec {
        &self.geometry.camera
    }

    pub fn geometry(&self) -> &SceneGeometry {
        &self.geometry
    }

    pub fn stimuli(&self) -> &Arc<StimulusSet> {
        &self.stimuli
    }

    pub fn state(&self) -> &EnvState {
        &self.state
    }

    fn render(&self, eye: &EyePose, screen: &ScreenState) -> Result<StereoFrame> {
        let texture = self.stimuli.get(screen.stimulus).ok_or_else(|| {
            Error::InvalidArgument(format!("stimulus {} not loaded", screen.stimulus))
        })?;
        Ok(render::render_window(&self.geometry, eye, screen, texture, self.window))
    }

    /// Full-resolution left/right images of an arbitrary pose. Joint limits
    /// are not enforced here so geometry can be probed outside them.
    pub fn render_stereo(&self, eye: &EyePose, screen: &ScreenState) -> Result<StereoFrame> {
        let texture = self.stimuli.get(screen.stimulus).ok_or_else(|| {
            Error::InvalidArgument(format!("stimulus {} not loaded", screen.stimulus))
        })?;
        Ok(render::render_window(&self.geometry, eye, screen, texture, Window::full(&self.geometry.camera)))
    }

    pub fn observation(&self) -> BinocularObservation {
        let cam = &self.geometry.camera;
        extract_observation(&self.state.current, &self.state.previous, cam.width, cam.height)
    }

    pub fn vergence_demand(&self) -> f64 {
        vergence_demand(self.state.screen.distance, self.config.baseline_m).expect("validated distance")
    }

    pub fn ground_truth_errors(&self) -> JointErrors {
        let ppd = self.geometry.camera.px_per_deg();
        let s = &self.state;
        JointErrors {
            pan: (s.screen.pan_velocity - s.eye.pan_velocity) * ppd,
            tilt: (s.screen.tilt_velocity - s.eye.tilt_velocity) * ppd,
            vergence: (self.vergence_demand() - s.eye.vergence) * ppd,
        }
    }

    /// Places eye and screen explicitly; the previous frame is set to the
    /// new current frame.
    pub fn set_state(&mut self, eye: EyePose, screen: ScreenState) -> Result<()> {
        if !(screen.distance > 0.0) {
            return Err(Error::InvalidArgument("screen distance must be positive".into()));
        }
        let frame = self.render(&eye, &screen)?;
        self.state = EnvState {
            eye,
            screen,
            current: frame.clone(),
            previous: frame,
        };
        Ok(())
    }

    /// Screen at `distance` with the given stimulus, eyes fixating its
    /// center, then the requested errors imposed: vergence error by
    /// under-converging, speed errors by moving the screen. The screen starts
    /// offset by half the distance it travels in `horizon` iterations so the
    /// trajectory stays centered in the joint range.
    pub fn impose_errors(&mut self, stimulus: usize, distance: f64, errors: JointErrors, horizon: usize) -> Result<()> {
        let dpp = self.geometry.camera.deg_per_px();
        let demand = vergence_demand(distance, self.config.baseline_m)?;
        let vergence = demand - errors.vergence * dpp;
        if vergence < 0.0 || vergence > self.config.vergence_max_deg {
            return Err(Error::InvalidArgument(format!(
                "vergence error {} px is not realizable at {distance} m",
                errors.vergence
            )));
        }
        let (wp, wt) = (errors.pan * dpp, errors.tilt * dpp);
        let travel = horizon as f64 / 2.0;
        let (p0, t0) = (-wp * travel, -wt * travel);
        if p0.abs() > self.config.pan_range_deg || t0.abs() > self.config.tilt_range_deg {
            return Err(Error::InvalidArgument("screen start outside pan/tilt range".into()));
        }
        let screen = ScreenState {
            distance,
            pan: p0,
            tilt: t0,
            pan_velocity: wp,
            tilt_velocity: wt,
            stimulus,
        };
        let eye = EyePose {
            pan: p0,
            tilt: t0,
            vergence,
            pan_velocity: 0.0,
            tilt_velocity: 0.0,
        };
        self.set_state(eye, screen)
    }

    /// New episode: random stimulus, distance, screen velocity and vergence
    /// error, eyes at rest on the screen center.
    pub fn reset<R: Rng + ?Sized>(&mut self, rng: &mut R, horizon: usize) -> Result<&EnvState> {
        let c = self.config;
        let dpp = self.geometry.camera.deg_per_px();
        let stimulus = rng.gen_range(0..self.stimuli.len());
        let err_px = if c.initial_vergence_error_px > 0.0 {
            rng.gen_range(-c.initial_vergence_error_px..=c.initial_vergence_error_px)
        } else {
            0.0
        };
        let err_deg = err_px * dpp;
        // distances where vergence = demand - err stays inside [0, max]
        let d_hi = c.distance_max_m.min(distance_for_demand(err_deg, c.baseline_m));
        let d_lo = c.distance_min_m.max(distance_for_demand(c.vergence_max_deg + err_deg, c.baseline_m));
        if !(d_lo <= d_hi) {
            return Err(Error::Config(format!(
                "no distance realizes a {err_px:.2} px vergence error within the joint range"
            )));
        }
        let distance = if d_hi > d_lo { rng.gen_range(d_lo..=d_hi) } else { d_lo };
        let v = c.screen_speed_max_px;
        let mut speed = || if v > 0.0 { rng.gen_range(-v..=v) } else { 0.0 };
        let errors = JointErrors {
            pan: speed(),
            tilt: speed(),
            vergence: err_px,
        };
        self.impose_errors(stimulus, distance, errors, horizon)?;
        Ok(&self.state)
    }

    /// Applies one action per joint and advances the screen by one iteration.
    pub fn step(&mut self, actions: Actions) -> Result<()> {
        for (joint, a) in [("pan", actions.pan), ("tilt", actions.tilt), ("vergence", actions.vergence)] {
            if ActionSet::index_of(a).is_none() {
                return Err(Error::InvalidArgument(format!("{joint} action {a} not in the action set")));
            }
        }
        let dpp = self.geometry.camera.deg_per_px();
        let c = self.config;
        let mut eye = self.state.eye;
        eye.vergence = (eye.vergence + actions.vergence * dpp).clamp(0.0, c.vergence_max_deg);
        eye.pan_velocity += actions.pan * dpp;
        eye.pan += eye.pan_velocity;
        if eye.pan.abs() > c.pan_range_deg {
            eye.pan = eye.pan.clamp(-c.pan_range_deg, c.pan_range_deg);
            eye.pan_velocity = 0.0;
        }
        eye.tilt_velocity += actions.tilt * dpp;
        eye.tilt += eye.tilt_velocity;
        if eye.tilt.abs() > c.tilt_range_deg {
            eye.tilt = eye.tilt.clamp(-c.tilt_range_deg, c.tilt_range_deg);
            eye.tilt_velocity = 0.0;
        }
        let mut screen = self.state.screen;
        screen.pan += screen.pan_velocity;
        screen.tilt += screen.tilt_velocity;

        let frame = self.render(&eye, &screen)?;
        let previous = std::mem::replace(&mut self.state.current, frame);
        self.state.previous = previous;
        self.state.eye = eye;
        self.state.screen = screen;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn env() -> Environment {
        let stimuli = Arc::new(StimulusSet::procedural(2, 5, 256).unwrap());
        Environment::new(EnvConfig::default(), stimuli).unwrap()
    }

    #[test]
    fn demand_values() {
        // independent route: angle between the two lines of sight
        let oracle = |d: f64| {
            let (l, r) = ([0.0325, d], [-0.0325, d]);
            let dot = l[0] * r[0] + l[1] * r[1];
            (dot / (l[0] * l[0] + l[1] * l[1])).acos().to_degrees()
        };
        let d2 = vergence_demand(2.0, 0.065).unwrap();
        assert!((d2 - oracle(2.0)).abs() < 1e-9);
        assert!((d2 - 1.86195).abs() < 1e-5, "{d2}");
        assert!((d2 * 320.0 / 90.0 - 6.62).abs() < 0.01);
        let d05 = vergence_demand(0.5, 0.065).unwrap();
        assert!((d05 - oracle(0.5)).abs() < 1e-9);
        assert!((d05 - 7.43799).abs() < 1e-5, "{d05}");
        assert!(vergence_demand(1e12, 0.065).unwrap() < 1e-9);
        assert!(vergence_demand(0.0, 0.065).is_err());
        assert!(vergence_demand(1.0, -0.1).is_err());
        assert!((distance_for_demand(d2, 0.065) - 2.0).abs() < 1e-9);
    }

    #[test]
    fn null_actions_on_static_screen_change_nothing() {
        let mut e = env();
        let before = e.state().clone();
        e.step(Actions::default()).unwrap();
        assert_eq!(e.state().eye, before.eye);
        assert_eq!(e.state().current, before.current);
        assert_eq!(e.state().previous, before.current);
    }

    #[test]
    fn vergence_action_unit_conversion() {
        let mut e = env();
        let mut eye = e.state().eye;
        eye.vergence = 1.0;
        let screen = e.state().screen;
        e.set_state(eye, screen).unwrap();
        e.step(Actions { vergence: 2.0, ..Default::default() }).unwrap();
        assert!((e.state().eye.vergence - 1.5625).abs() < 1e-12);
    }

    #[test]
    fn pan_acceleration_integrates() {
        let mut e = env();
        for _ in 0..2 {
            e.step(Actions { pan: 1.0, ..Default::default() }).unwrap();
        }
        let dpp = 0.28125;
        assert!((e.state().eye.pan_velocity - 2.0 * dpp).abs() < 1e-12);
        assert!((e.state().eye.pan - 3.0 * dpp).abs() < 1e-12);
    }

    #[test]
    fn rejects_actions_outside_set() {
        let mut e = env();
        assert!(e.step(Actions { tilt: 3.0, ..Default::default() }).is_err());
    }

    #[test]
    fn errors_at_fixation_and_parallel_gaze() {
        let mut e = env();
        assert!(e.ground_truth_errors().vergence.abs() < 1e-12);
        let mut eye = e.state().eye;
        eye.vergence = 0.0;
        let mut screen = e.state().screen;
        screen.pan_velocity = 2.0 * 0.28125;
        eye.pan_velocity = 0.5 * 0.28125;
        e.set_state(eye, screen).unwrap();
        let err = e.ground_truth_errors();
        assert!((err.vergence - 6.62).abs() < 0.01);
        assert!((err.pan - 1.5).abs() < 1e-9);
    }

    #[test]
    fn joint_limits_hold_and_clamp_zeroes_velocity() {
        let mut e = env();
        for _ in 0..30 {
            e.step(Actions { pan: 4.0, tilt: -4.0, vergence: 4.0 }).unwrap();
            let eye = e.state().eye;
            assert!(eye.pan.abs() <= 15.0 && eye.tilt.abs() <= 15.0);
            assert!((0.0..=8.0).contains(&eye.vergence));
        }
        assert_eq!(e.state().eye.vergence, 8.0);
    }

    #[test]
    fn reset_is_seed_deterministic_and_in_range() {
        let mut a = env();
        let mut b = env();
        let mut ra = ChaCha8Rng::seed_from_u64(11);
        let mut rb = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let sa = a.reset(&mut ra, 10).unwrap().clone();
            let sb = b.reset(&mut rb, 10).unwrap().clone();
            assert_eq!(sa, sb);
            assert!((0.5..=5.0).contains(&sa.screen.distance));
            assert_eq!(sa.current, sa.previous);
            assert_eq!((sa.eye.pan_velocity, sa.eye.tilt_velocity), (0.0, 0.0));
        }
    }
}
