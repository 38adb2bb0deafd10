//! Flat run configuration: embedded defaults, an optional TOML file, and
//! `key=value` overrides, in that order of precedence.

use std::path::Path;

use agz_core::control::RewardMode;
use agz_core::environment::EnvConfig;
use agz_core::stimulus::parse_procedural_spec;
use agz_core::training::TrainConfig;
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    // stimuli
    pub stimuli: String,
    pub eval_stimuli: String,
    pub texture_size: usize,
    // training
    pub episodes: usize,
    pub episode_length: usize,
    pub workers: usize,
    pub seed: u64,
    pub reward: RewardMode,
    pub reward_scale_c: f32,
    pub gamma: f32,
    pub epsilon: f64,
    pub batch_size: usize,
    pub replay_capacity: usize,
    pub ae_learning_rate: f32,
    pub critic_learning_rate: f32,
    pub critic_filters: usize,
    pub critic_hidden: usize,
    pub huber_delta: f32,
    pub ae_updates_per_episode: usize,
    pub critic_updates_per_episode: usize,
    pub eval_interval: usize,
    /// Episodes between `ckpt_<episode>` files; 0 writes only `ckpt_final`.
    pub checkpoint_interval: usize,
    // environment
    pub baseline_m: f64,
    pub distance_min_m: f64,
    pub distance_max_m: f64,
    pub screen_speed_max_px: f64,
    pub pan_range_deg: f64,
    pub tilt_range_deg: f64,
    pub vergence_max_deg: f64,
    pub screen_half_angle_deg: f64,
    pub initial_vergence_error_px: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self::from_parts(&TrainConfig::default(), 500)
    }
}

impl RunConfig {
    fn from_parts(t: &TrainConfig, checkpoint_interval: usize) -> Self {
        Self {
            stimuli: t.stimuli.clone(),
            eval_stimuli: t.eval_stimuli.clone(),
            texture_size: t.texture_size,
            episodes: t.episodes,
            episode_length: t.episode_length,
            workers: t.workers,
            seed: t.seed,
            reward: t.reward_mode,
            reward_scale_c: t.reward_scale_c,
            gamma: t.gamma,
            epsilon: t.epsilon,
            batch_size: t.batch_size,
            replay_capacity: t.replay_capacity,
            ae_learning_rate: t.ae_learning_rate,
            critic_learning_rate: t.critic_learning_rate,
            critic_filters: t.critic_filters,
            critic_hidden: t.critic_hidden,
            huber_delta: t.huber_delta,
            ae_updates_per_episode: t.ae_updates_per_episode,
            critic_updates_per_episode: t.critic_updates_per_episode,
            eval_interval: t.eval_interval,
            checkpoint_interval,
            baseline_m: t.env.baseline_m,
            distance_min_m: t.env.distance_min_m,
            distance_max_m: t.env.distance_max_m,
            screen_speed_max_px: t.env.screen_speed_max_px,
            pan_range_deg: t.env.pan_range_deg,
            tilt_range_deg: t.env.tilt_range_deg,
            vergence_max_deg: t.env.vergence_max_deg,
            screen_half_angle_deg: t.env.screen_half_angle_deg,
            initial_vergence_error_px: t.env.initial_vergence_error_px,
        }
    }

    /// Defaults, then `file`, then each `key=value` in `overrides`.
    pub fn resolve(file: Option<&Path>, overrides: &[(String, String)]) -> Result<Self, CliError> {
        let text = match file {
            Some(path) => std::fs::read_to_string(path)
                .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?,
            None => String::new(),
        };
        Self::parse(&text, overrides).map_err(|e| match (e, file) {
            (CliError::Usage(m), Some(path)) => CliError::Usage(format!("{}: {m}", path.display())),
            (e, _) => e,
        })
    }

    /// Like [`RunConfig::resolve`] with the file contents given as text.
    pub fn parse(text: &str, overrides: &[(String, String)]) -> Result<Self, CliError> {
        let mut table = text.parse::<toml::Table>().map_err(|e| CliError::Usage(format!("config: {e}")))?;
        for (key, value) in overrides {
            table.insert(key.clone(), parse_value(value));
        }
        let config: RunConfig = table.try_into().map_err(|e: toml::de::Error| CliError::Usage(format!("config: {}", e.message())))?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.train_config().validate().map_err(|e| CliError::Usage(e.to_string()))?;
        for spec in [&self.stimuli, &self.eval_stimuli] {
            parse_procedural_spec(spec).map_err(|e| CliError::Usage(e.to_string()))?;
        }
        Ok(())
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            stimuli: self.stimuli.clone(),
            eval_stimuli: self.eval_stimuli.clone(),
            texture_size: self.texture_size,
            episodes: self.episodes,
            episode_length: self.episode_length,
            workers: self.workers,
            seed: self.seed,
            reward_mode: self.reward,
            reward_scale_c: self.reward_scale_c,
            gamma: self.gamma,
            epsilon: self.epsilon,
            batch_size: self.batch_size,
            replay_capacity: self.replay_capacity,
            ae_learning_rate: self.ae_learning_rate,
            critic_learning_rate: self.critic_learning_rate,
            critic_filters: self.critic_filters,
            critic_hidden: self.critic_hidden,
            huber_delta: self.huber_delta,
            ae_updates_per_episode: self.ae_updates_per_episode,
            critic_updates_per_episode: self.critic_updates_per_episode,
            eval_interval: self.eval_interval,
            env: EnvConfig {
                baseline_m: self.baseline_m,
                distance_min_m: self.distance_min_m,
                distance_max_m: self.distance_max_m,
                screen_speed_max_px: self.screen_speed_max_px,
                pan_range_deg: self.pan_range_deg,
                tilt_range_deg: self.tilt_range_deg,
                vergence_max_deg: self.vergence_max_deg,
                screen_half_angle_deg: self.screen_half_angle_deg,
                initial_vergence_error_px: self.initial_vergence_error_px,
            },
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("flat config serializes")
    }
}

/// A TOML value if `raw` parses as one, else the raw text as a string, so
/// `--set stimuli=procedural:5:1` needs no quoting.
fn parse_value(raw: &str) -> toml::Value {
    match format!("v = {raw}").parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").expect("key present"),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

pub fn parse_assignment(s: &str) -> Result<(String, String), String> {
    let (k, v) = s.split_once('=').ok_or_else(|| format!("expected key=value, got `{s}`"))?;
    let k = k.trim();
    if k.is_empty() {
        return Err(format!("empty key in `{s}`"));
    }
    Ok((k.to_string(), v.trim().to_string()))
}
