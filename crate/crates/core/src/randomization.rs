//! Domain randomization and unmodeled effects.
//!
//! Physics parameters, noise offsets, delay flags and the like are drawn once
//! per episode into an [`EpisodeRandomization`]. Per-step perturbations take
//! that draw plus a mutable [`PerturbationState`] owned by the environment.

use std::str::FromStr;

use rand::Rng;
use rand_distr::{Distribution, Exp, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::env::quat::{norm3, sub3, Quat, Vec3};
use crate::env::{EnvParams, PolicyObs, NOMINAL_STEP_DURATION};
use crate::error::{Error, Result};

/// Paper-table constants. Defaults are the published values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RandomizationRanges {
    pub dim_scale: (f64, f64),
    pub mass_scale: (f64, f64),
    pub friction_scale: (f64, f64),
    /// Log-uniform.
    pub damping_scale: (f64, f64),
    /// Log-uniform.
    pub p_gain_scale: (f64, f64),
    pub joint_limit_std: f64,
    pub gravity_std: f64,

    pub tip_noise_corr: f64,
    pub tip_noise_uncorr: f64,
    pub object_pos_noise_corr: f64,
    pub object_pos_noise_uncorr: f64,
    pub orientation_noise_corr: f64,
    pub orientation_noise_uncorr: f64,
    pub tip_marker_std: f64,
    pub base_marker_std: f64,

    /// Width of the action range the percentages refer to.
    pub action_range: f64,
    pub action_noise_uncorr: f64,
    pub action_noise_corr: f64,
    pub action_noise_mult: f64,

    pub delay_probability: f64,
    pub backlash_std: f64,
    pub backlash_floor: f64,
    /// Log-uniform.
    pub force_probability: (f64, f64),
    /// Force std per unit object mass, m/s².
    pub force_accel_std: f64,
    pub force_decay_per_step: f64,
    pub timing_rate: (f64, f64),
    pub marker_dropout_rate: f64,
    pub marker_dropout_duration: f64,
    pub occlusion_distance: f64,
}

impl Default for RandomizationRanges {
    fn default() -> Self {
        Self {
            dim_scale: (0.95, 1.05),
            mass_scale: (0.5, 1.5),
            friction_scale: (0.7, 1.3),
            damping_scale: (0.3, 3.0),
            p_gain_scale: (0.75, 1.5),
            joint_limit_std: 0.15,
            gravity_std: 0.4,
            tip_noise_corr: 1e-3,
            tip_noise_uncorr: 2e-3,
            object_pos_noise_corr: 5e-3,
            object_pos_noise_uncorr: 1e-3,
            orientation_noise_corr: 0.1,
            orientation_noise_uncorr: 0.1,
            tip_marker_std: 3e-3,
            base_marker_std: 1e-3,
            action_range: 2.0,
            action_noise_uncorr: 0.05,
            action_noise_corr: 0.015,
            action_noise_mult: 0.015,
            delay_probability: 0.5,
            backlash_std: 0.1,
            backlash_floor: 0.01,
            force_probability: (0.001, 0.1),
            force_accel_std: 1.0,
            force_decay_per_step: 0.99,
            timing_rate: (1250.0, 10000.0),
            marker_dropout_rate: 0.2,
            marker_dropout_duration: 1.0,
            occlusion_distance: 0.02,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct UnmodeledEffects {
    pub action_noise: bool,
    pub delay: bool,
    pub backlash: bool,
    pub random_forces: bool,
    pub marker_dropout: bool,
    pub timing: bool,
}

impl Default for UnmodeledEffects {
    fn default() -> Self {
        Self::all(true)
    }
}

impl UnmodeledEffects {
    pub fn all(on: bool) -> Self {
        Self {
            action_noise: on,
            delay: on,
            backlash: on,
            random_forces: on,
            marker_dropout: on,
            timing: on,
        }
    }

    pub fn any(&self) -> bool {
        self.action_noise
            || self.delay
            || self.backlash
            || self.random_forces
            || self.marker_dropout
            || self.timing
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RandomizationConfig {
    pub physics: bool,
    pub observation_noise: bool,
    pub unmodeled: UnmodeledEffects,
    pub ranges: RandomizationRanges,
}

impl Default for RandomizationConfig {
    fn default() -> Self {
        Self::with_holdout(Holdout::None)
    }
}

impl RandomizationConfig {
    pub fn with_holdout(h: Holdout) -> Self {
        let mut cfg = Self {
            physics: true,
            observation_noise: true,
            unmodeled: UnmodeledEffects::all(true),
            ranges: RandomizationRanges::default(),
        };
        cfg.apply_holdout(h);
        cfg
    }

    pub fn disabled() -> Self {
        Self::with_holdout(Holdout::All)
    }

    pub fn apply_holdout(&mut self, h: Holdout) {
        match h {
            Holdout::None => {}
            Holdout::ObsNoise => self.observation_noise = false,
            Holdout::Physics => self.physics = false,
            Holdout::Unmodeled => self.unmodeled = UnmodeledEffects::all(false),
            Holdout::All => {
                self.physics = false;
                self.observation_noise = false;
                self.unmodeled = UnmodeledEffects::all(false);
            }
        }
    }

    pub fn is_identity(&self) -> bool {
        !self.physics && !self.observation_noise && !self.unmodeled.any()
    }
}

/// Randomization group held out of training.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Holdout {
    None,
    ObsNoise,
    Physics,
    Unmodeled,
    All,
}

impl Holdout {
    pub const ALL_ARMS: [Holdout; 5] = [
        Holdout::None,
        Holdout::ObsNoise,
        Holdout::Unmodeled,
        Holdout::Physics,
        Holdout::All,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Holdout::None => "none",
            Holdout::ObsNoise => "obs-noise",
            Holdout::Physics => "physics",
            Holdout::Unmodeled => "unmodeled",
            Holdout::All => "all",
        }
    }

    pub fn describe(&self) -> &'static str {
        match self {
            Holdout::None => "All randomizations",
            Holdout::ObsNoise => "No observation noise",
            Holdout::Physics => "No physics randomizations",
            Holdout::Unmodeled => "No unmodeled effects",
            Holdout::All => "No randomizations",
        }
    }
}

impl FromStr for Holdout {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "none" => Holdout::None,
            "obs-noise" => Holdout::ObsNoise,
            "physics" => Holdout::Physics,
            "unmodeled" => Holdout::Unmodeled,
            "all" => Holdout::All,
            other => return Err(Error::Config(format!("unknown holdout '{other}'"))),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BacklashParams {
    pub neg: f64,
    pub pos: f64,
}

impl BacklashParams {
    fn delta_for(&self, sign: f64) -> f64 {
        if sign < 0.0 {
            self.neg
        } else {
            self.pos
        }
    }
}

/// Everything drawn once at the start of an episode.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeRandomization {
    pub params: EnvParams,
    pub observation_noise: bool,
    pub effects: UnmodeledEffects,
    pub tip_noise_corr: Vec<Vec3>,
    pub object_pos_noise_corr: Vec3,
    pub orientation_noise_corr: Quat,
    pub tip_marker_offset: Vec<Vec3>,
    pub base_marker_offset: Vec3,
    pub action_noise_corr: Vec<f64>,
    pub delayed: Vec<bool>,
    pub backlash: Vec<BacklashParams>,
    pub force_probability: f64,
    /// Rate of the exponential step-time jitter, 1/s. `None` when timing is fixed.
    pub timing_rate: Option<f64>,
    pub ranges: RandomizationRanges,
}

impl EpisodeRandomization {
    /// Draw that leaves `params` and every signal untouched.
    pub fn identity(params: &EnvParams) -> Self {
        let k = params.num_joints;
        Self {
            params: params.clone(),
            observation_noise: false,
            effects: UnmodeledEffects::all(false),
            tip_noise_corr: vec![[0.0; 3]; k],
            object_pos_noise_corr: [0.0; 3],
            orientation_noise_corr: Quat::IDENTITY,
            tip_marker_offset: vec![[0.0; 3]; k],
            base_marker_offset: [0.0; 3],
            action_noise_corr: vec![0.0; k],
            delayed: vec![false; k],
            backlash: (0..k)
                .map(|j| BacklashParams {
                    neg: params.backlash_neg[j],
                    pos: params.backlash_pos[j],
                })
                .collect(),
            force_probability: 0.0,
            timing_rate: None,
            ranges: RandomizationRanges::default(),
        }
    }

    pub fn sample<R: Rng + ?Sized>(base: &EnvParams, cfg: &RandomizationConfig, rng: &mut R) -> Self {
        let k = base.num_joints;
        let r = &cfg.ranges;
        let mut er = Self::identity(base);
        er.ranges = r.clone();
        // Each group draws from the generator only when enabled, so toggling
        // one group changes the draws of the later ones. Episodes are seeded
        // independently, which keeps runs reproducible per configuration.
        if cfg.physics {
            er.params = sample_physics(base, r, rng);
        }
        if cfg.observation_noise {
            er.observation_noise = true;
            er.tip_noise_corr = (0..k).map(|_| gauss3(rng, r.tip_noise_corr)).collect();
            er.object_pos_noise_corr = gauss3(rng, r.object_pos_noise_corr);
            er.orientation_noise_corr = small_rotation(rng, r.orientation_noise_corr);
            er.tip_marker_offset = (0..k).map(|_| gauss3(rng, r.tip_marker_std)).collect();
            er.base_marker_offset = gauss3(rng, r.base_marker_std);
        }
        let fx = cfg.unmodeled;
        er.effects = fx;
        if fx.action_noise {
            er.action_noise_corr = (0..k)
                .map(|_| gauss(rng, r.action_noise_corr * r.action_range))
                .collect();
        }
        if fx.delay {
            er.delayed = sample_delay_flags(k, r.delay_probability, rng);
        }
        if fx.backlash {
            er.backlash = (0..k)
                .map(|j| {
                    sample_backlash_params(
                        BacklashParams {
                            neg: base.backlash_neg[j],
                            pos: base.backlash_pos[j],
                        },
                        r.backlash_std,
                        r.backlash_floor,
                        rng,
                    )
                })
                .collect();
        }
        if fx.random_forces {
            er.force_probability = log_uniform(rng, r.force_probability.0, r.force_probability.1);
        }
        if fx.timing {
            er.timing_rate = Some(rng.random_range(r.timing_rate.0..=r.timing_rate.1));
        }
        er
    }
}

fn gauss<R: Rng + ?Sized>(rng: &mut R, std: f64) -> f64 {
    let z: f64 = StandardNormal.sample(rng);
    z * std
}

fn gauss3<R: Rng + ?Sized>(rng: &mut R, std: f64) -> Vec3 {
    [gauss(rng, std), gauss(rng, std), gauss(rng, std)]
}

fn log_uniform<R: Rng + ?Sized>(rng: &mut R, lo: f64, hi: f64) -> f64 {
    let u: f64 = rng.random_range(lo.ln()..=hi.ln());
    u.exp().clamp(lo, hi)
}

/// Rotation about a uniformly random axis by an `N(0, std)` angle.
pub fn small_rotation<R: Rng + ?Sized>(rng: &mut R, std: f64) -> Quat {
    let axis: Vec3 = [
        StandardNormal.sample(rng),
        StandardNormal.sample(rng),
        StandardNormal.sample(rng),
    ];
    let angle = gauss(rng, std);
    Quat::from_axis_angle(axis, angle)
}

/// Per-episode physics draw around `base`.
pub fn sample_physics<R: Rng + ?Sized>(base: &EnvParams, r: &RandomizationRanges, rng: &mut R) -> EnvParams {
    let mut p = base.clone();
    let k = base.num_joints;
    p.object_dim_scale = base.object_dim_scale * rng.random_range(r.dim_scale.0..=r.dim_scale.1);
    p.object_mass = base.object_mass * rng.random_range(r.mass_scale.0..=r.mass_scale.1);
    for j in 0..k {
        p.link_inertia[j] = base.link_inertia[j] * rng.random_range(r.mass_scale.0..=r.mass_scale.1);
        p.friction_coupling[j] =
            base.friction_coupling[j] * rng.random_range(r.friction_scale.0..=r.friction_scale.1);
        p.joint_damping[j] =
            base.joint_damping[j] * log_uniform(rng, r.damping_scale.0, r.damping_scale.1);
        p.p_gain[j] = base.p_gain[j] * log_uniform(rng, r.p_gain_scale.0, r.p_gain_scale.1);
        let (lo, hi) = base.joint_limits[j];
        let mut new_lo = lo + gauss(rng, r.joint_limit_std);
        let mut new_hi = hi + gauss(rng, r.joint_limit_std);
        // resample whichever bound broke ordering or excluded the rest angle
        while !(new_lo < new_hi && new_lo <= 0.0) {
            new_lo = lo + gauss(rng, r.joint_limit_std);
        }
        while !(new_lo < new_hi && new_hi >= 0.0) {
            new_hi = hi + gauss(rng, r.joint_limit_std);
        }
        p.joint_limits[j] = (new_lo, new_hi);
    }
    for g in p.gravity.iter_mut() {
        *g += gauss(rng, r.gravity_std);
    }
    p
}

pub fn sample_backlash_params<R: Rng + ?Sized>(
    calibrated: BacklashParams,
    std: f64,
    floor: f64,
    rng: &mut R,
) -> BacklashParams {
    BacklashParams {
        neg: (calibrated.neg + gauss(rng, std)).max(floor),
        pos: (calibrated.pos + gauss(rng, std)).max(floor),
    }
}

pub fn sample_delay_flags<R: Rng + ?Sized>(k: usize, probability: f64, rng: &mut R) -> Vec<bool> {
    (0..k).map(|_| rng.random_bool(probability)).collect()
}

/// Duration of one physics substep: 8 ms plus exponential jitter of rate `rate` (1/s).
pub fn sample_timestep<R: Rng + ?Sized>(rate: f64, rng: &mut R) -> f64 {
    let exp = Exp::new(rate).expect("positive rate");
    0.008 + exp.sample(rng)
}

/// `sgn` with `sgn(0) = 0`.
#[inline]
fn sgn(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

pub const BACKLASH_EPS: f64 = 1e-12;

/// Tendon slack model. Returns `(a_out, s')`.
pub fn backlash(a_in: f64, params: BacklashParams, slack: f64, dt: f64) -> (f64, f64) {
    let sign = sgn(a_in);
    let delta = params.delta_for(sign);
    let s_next = (slack + a_in * delta * dt).clamp(-1.0, 1.0);
    let ratio = ((sign - slack).abs() / ((s_next - slack).abs() + BACKLASH_EPS)).clamp(0.0, 1.0);
    let alpha = 1.0 - ratio;
    (alpha * a_in, s_next)
}

/// Decays the force accumulator over `elapsed` seconds and maybe adds a kick.
pub fn random_force_step<R: Rng + ?Sized>(
    force: Vec3,
    probability: f64,
    mass: f64,
    ranges: &RandomizationRanges,
    elapsed: f64,
    rng: &mut R,
) -> Vec3 {
    let decay = ranges.force_decay_per_step.powf(elapsed / NOMINAL_STEP_DURATION);
    let mut f = [force[0] * decay, force[1] * decay, force[2] * decay];
    if probability > 0.0 && rng.random_bool(probability) {
        let std = ranges.force_accel_std * mass;
        let kick = gauss3(rng, std);
        for i in 0..3 {
            f[i] += kick[i];
        }
    }
    f
}

/// Mutable per-episode state of the perturbation pipeline.
#[derive(Debug, Clone, PartialEq)]
pub struct PerturbationState {
    pub slack: Vec<f64>,
    /// Previous step's post-noise action, for delayed actuators.
    pub pending: Vec<f64>,
    pub freeze_timer: Vec<f64>,
    pub last_reported_tips: Vec<Option<Vec3>>,
    pub freeze_entries: u64,
}

impl PerturbationState {
    pub fn new(k: usize) -> Self {
        Self {
            slack: vec![0.0; k],
            pending: vec![0.0; k],
            freeze_timer: vec![0.0; k],
            last_reported_tips: vec![None; k],
            freeze_entries: 0,
        }
    }
}

pub fn apply_action_noise<R: Rng + ?Sized>(a: &mut [f64], er: &EpisodeRandomization, rng: &mut R) {
    if !er.effects.action_noise {
        return;
    }
    let r = &er.ranges;
    for (j, aj) in a.iter_mut().enumerate() {
        let mult = 1.0 + gauss(rng, r.action_noise_mult);
        let add = gauss(rng, r.action_noise_uncorr * r.action_range);
        *aj = (*aj * mult + add + er.action_noise_corr[j]).clamp(-1.0, 1.0);
    }
}

pub fn delay_actions(a: &mut [f64], er: &EpisodeRandomization, pending: &mut [f64]) {
    if !er.effects.delay {
        return;
    }
    for j in 0..a.len() {
        if er.delayed[j] {
            std::mem::swap(&mut a[j], &mut pending[j]);
        }
    }
}

pub fn apply_backlash(a: &mut [f64], er: &EpisodeRandomization, slack: &mut [f64], dt: f64) {
    if !er.effects.backlash {
        return;
    }
    for j in 0..a.len() {
        let (out, s) = backlash(a[j], er.backlash[j], slack[j], dt);
        a[j] = out;
        slack[j] = s;
    }
}

/// Noise, delay and backlash, in that order.
pub fn perturb_action<R: Rng + ?Sized>(
    a: &mut [f64],
    er: &EpisodeRandomization,
    st: &mut PerturbationState,
    dt: f64,
    rng: &mut R,
) {
    apply_action_noise(a, er, rng);
    delay_actions(a, er, &mut st.pending);
    apply_backlash(a, er, &mut st.slack, dt);
}

/// Correlated plus uncorrelated Gaussian noise and marker misplacement.
pub fn apply_observation_noise<R: Rng + ?Sized>(obs: &mut PolicyObs, er: &EpisodeRandomization, rng: &mut R) {
    if !er.observation_noise {
        return;
    }
    let r = &er.ranges;
    for (j, tip) in obs.tips.iter_mut().enumerate() {
        for i in 0..3 {
            tip[i] += er.tip_marker_offset[j][i]
                + er.base_marker_offset[i]
                + er.tip_noise_corr[j][i]
                + gauss(rng, r.tip_noise_uncorr);
        }
    }
    if let Some(p) = obs.object_position.as_mut() {
        for i in 0..3 {
            p[i] += er.object_pos_noise_corr[i] + gauss(rng, r.object_pos_noise_uncorr);
        }
    }
    let unc = small_rotation(rng, r.orientation_noise_uncorr);
    obs.relative_target = (unc * er.orientation_noise_corr * obs.relative_target)
        .normalized()
        .canonical();
}

/// Freezes tip readings during dropouts and occlusions. `true_tips` are the
/// noiseless positions used for the proximity test; `obs.tips` are replaced
/// by the last unfrozen reading where frozen.
pub fn marker_dropout<R: Rng + ?Sized>(
    obs: &mut PolicyObs,
    true_tips: &[Vec3],
    object_position: Vec3,
    er: &EpisodeRandomization,
    st: &mut PerturbationState,
    step_dt: f64,
    rng: &mut R,
) {
    if !er.effects.marker_dropout {
        return;
    }
    let r = &er.ranges;
    let k = true_tips.len();
    let entry_p = (r.marker_dropout_rate * step_dt).clamp(0.0, 1.0);
    for j in 0..k {
        st.freeze_timer[j] = (st.freeze_timer[j] - step_dt).max(0.0);
        if rng.random_bool(entry_p) {
            st.freeze_timer[j] = r.marker_dropout_duration;
            st.freeze_entries += 1;
        }
    }
    for j in 0..k {
        let occluded = norm3(sub3(true_tips[j], object_position)) < r.occlusion_distance
            || (0..k).any(|i| i != j && norm3(sub3(true_tips[j], true_tips[i])) < r.occlusion_distance);
        let frozen = occluded || st.freeze_timer[j] > 0.0;
        match (frozen, st.last_reported_tips[j]) {
            (true, Some(last)) => obs.tips[j] = last,
            _ => st.last_reported_tips[j] = Some(obs.tips[j]),
        }
    }
}
