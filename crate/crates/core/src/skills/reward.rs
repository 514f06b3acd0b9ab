//! Training reward over an episode transcript, in paddle space.

use serde::{Deserialize, Serialize};

use super::episode::{ShotOutcome, Transcript};
use super::planner::CONTROL_DT;
use super::{PaddlePose, SkillError, Style};
use crate::vec3::Vec3;

/// `e^{-10|z - 0.173|}` for a net crossing in `[0.173, 0.3)`, else -1.1.
pub fn net_height_reward(z_at_net: f64) -> f64 {
    if (0.173..0.3).contains(&z_at_net) {
        (-10.0 * (z_at_net - 0.173).abs()).exp()
    } else {
        -1.1
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RewardConfig {
    pub transition: f64,
    pub hit_and_land: f64,
    pub jerk: f64,
    pub acceleration: f64,
    pub velocity: f64,
    pub pose_safety: f64,
    pub collision: f64,
    pub paddle_height: f64,
    pub style_pose: f64,
    pub net_height: Option<f64>,
    pub contact_angle: Option<f64>,
    pub forehand_pose: PaddlePose,
    pub backhand_pose: PaddlePose,
    /// Paddle pitch targets at contact, rad.
    pub forehand_pitch: f64,
    pub backhand_pitch: f64,
    pub velocity_scale: f64,
    pub acceleration_scale: f64,
    pub jerk_scale: f64,
    /// Box the paddle should stay inside: min and max corners.
    pub safe_box: [Vec3; 2],
    pub min_normal_y: f64,
}

impl Default for RewardConfig {
    fn default() -> Self {
        Self {
            transition: 1.0,
            hit_and_land: 0.1,
            jerk: 0.3,
            acceleration: 0.3,
            velocity: 0.4,
            pose_safety: 1.0,
            collision: 1.0,
            paddle_height: 0.5,
            style_pose: 1.0,
            net_height: None,
            contact_angle: None,
            forehand_pose: PaddlePose { position: Vec3::new(0.45, -1.75, 0.25), normal: Vec3::Y },
            backhand_pose: PaddlePose { position: Vec3::new(-0.45, -1.75, 0.25), normal: Vec3::Y },
            forehand_pitch: 0.2,
            backhand_pitch: 0.25,
            velocity_scale: 6.0,
            acceleration_scale: 50.0,
            jerk_scale: 5000.0,
            safe_box: [Vec3::new(-1.6, -2.6, -0.3), Vec3::new(1.6, -1.1, 1.3)],
            min_normal_y: 0.0,
        }
    }
}

impl RewardConfig {
    /// Adds the net-height and contact-angle terms used for topspin fine-tuning.
    pub fn with_topspin_terms(mut self) -> Self {
        self.net_height = Some(1.0);
        self.contact_angle = Some(1.0);
        self
    }
}

/// Unweighted term values of one transcript.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RewardTerms {
    pub transition: f64,
    pub hit_and_land: f64,
    pub jerk: f64,
    pub acceleration: f64,
    pub velocity: f64,
    pub pose_safety: f64,
    pub collision: f64,
    pub paddle_height: f64,
    pub style_pose: f64,
    pub net_height: f64,
    pub contact_angle: f64,
}

impl RewardTerms {
    pub fn weighted(&self, cfg: &RewardConfig) -> [f64; 11] {
        [
            cfg.transition * self.transition,
            cfg.hit_and_land * self.hit_and_land,
            cfg.jerk * self.jerk,
            cfg.acceleration * self.acceleration,
            cfg.velocity * self.velocity,
            cfg.pose_safety * self.pose_safety,
            cfg.collision * self.collision,
            cfg.paddle_height * self.paddle_height,
            cfg.style_pose * self.style_pose,
            cfg.net_height.unwrap_or(0.0) * self.net_height,
            cfg.contact_angle.unwrap_or(0.0) * self.contact_angle,
        ]
    }

    pub fn total(&self, cfg: &RewardConfig) -> f64 {
        self.weighted(cfg).iter().sum()
    }
}

fn mean_norm(v: impl Iterator<Item = Vec3>) -> f64 {
    let (mut s, mut n) = (0.0, 0usize);
    for x in v {
        s += x.norm();
        n += 1;
    }
    if n == 0 {
        0.0
    } else {
        s / n as f64
    }
}

fn smoothness(mean: f64, scale: f64) -> f64 {
    (1.0 - mean / scale).clamp(0.0, 1.0)
}

fn pitch(normal: Vec3) -> f64 {
    normal.z.clamp(-1.0, 1.0).asin()
}

pub fn reward_terms(tr: &Transcript, cfg: &RewardConfig) -> Result<RewardTerms, SkillError> {
    if tr.ticks.is_empty() {
        return Err(SkillError::MissingChannel("paddle kinematics"));
    }
    let hit = tr.contact.is_some() && tr.outcome != ShotOutcome::Miss;
    let landed = tr.outcome == ShotOutcome::Landed;
    let vel: Vec<Vec3> = tr.ticks.iter().map(|k| k.velocity).collect();
    let acc: Vec<Vec3> = vel.windows(2).map(|w| (w[1] - w[0]) / CONTROL_DT).collect();
    let jerk = acc.windows(2).map(|w| (w[1] - w[0]) / CONTROL_DT);
    let [lo, hi] = cfg.safe_box;
    let safe = tr
        .ticks
        .iter()
        .filter(|k| {
            let p = k.position;
            (lo.x..=hi.x).contains(&p.x)
                && (lo.y..=hi.y).contains(&p.y)
                && (lo.z..=hi.z).contains(&p.z)
                && k.normal.y >= cfg.min_normal_y
        })
        .count();
    let (pose, cap) = match tr.style {
        Style::Forehand => (cfg.forehand_pose, 1.0),
        Style::Backhand => (cfg.backhand_pose, 2.0),
    };
    let closest = tr
        .ticks
        .iter()
        .map(|k| (k.position - pose.position).norm() + (k.normal - pose.normal).norm())
        .fold(f64::INFINITY, f64::min);
    let target_pitch = match tr.style {
        Style::Forehand => cfg.forehand_pitch,
        Style::Backhand => cfg.backhand_pitch,
    };
    Ok(RewardTerms {
        transition: hit as u8 as f64 + landed as u8 as f64,
        hit_and_land: (hit && landed) as u8 as f64,
        jerk: smoothness(mean_norm(jerk), cfg.jerk_scale),
        acceleration: smoothness(mean_norm(acc.iter().copied()), cfg.acceleration_scale),
        velocity: smoothness(mean_norm(vel.iter().copied()), cfg.velocity_scale),
        pose_safety: safe as f64 / tr.ticks.len() as f64,
        collision: -(tr.collision_steps as f64),
        paddle_height: -(tr.height_violation_steps as f64),
        style_pose: (cap - closest).max(0.0),
        net_height: net_height_reward(tr.net_height.unwrap_or(f64::NAN)),
        contact_angle: tr.contact.map_or(0.0, |c| (1.0 - (pitch(c.paddle.normal) - target_pitch).abs()).max(0.0)),
    })
}

/// Weighted sum of the reward terms.
pub fn compute_reward(tr: &Transcript, cfg: &RewardConfig) -> Result<f64, SkillError> {
    Ok(reward_terms(tr, cfg)?.total(cfg))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn net_height_reward_band() {
        assert_eq!(net_height_reward(0.173), 1.0);
        assert_eq!(net_height_reward(0.5), -1.1);
        assert!((net_height_reward(0.25) - (-0.77f64).exp()).abs() < 1e-12);
        assert_eq!(net_height_reward(0.3), -1.1);
        assert_eq!(net_height_reward(0.1), -1.1);
    }
}
