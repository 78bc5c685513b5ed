//! Toy in-hand reorientation environment.
//!
//! A free rigid body sits on a spring-loaded palm. `K` actuated joints spin
//! about fixed axes and drag the body along through viscous contact friction.
//! Each environment step is 10 physics substeps of roughly 8 ms.

pub mod params;
pub mod quat;

use rand::Rng;

pub use params::EnvParams;
pub use quat::{quat_dist, relative_target, Quat, Vec3};

use crate::error::{Error, Result};
use crate::randomization::{
    apply_observation_noise, marker_dropout, perturb_action, random_force_step, sample_timestep,
    EpisodeRandomization, PerturbationState, RandomizationConfig,
};
use crate::rng::{derive_seed, seeded, stream, SimRng};
use quat::{add3, cross3, dot3, norm3, scale3};

pub const NUM_BINS: usize = 11;
pub const SUBSTEPS: usize = 10;
pub const NOMINAL_SUBSTEP: f64 = 0.008;
pub const NOMINAL_STEP_DURATION: f64 = NOMINAL_SUBSTEP * SUBSTEPS as f64;
/// Joint target change per unit action, rad.
pub const ACTION_SCALE: f64 = 0.1;
/// Weight of the newest action in the exponential moving average.
pub const ACTION_EMA: f64 = 0.3;
pub const GOAL_TOLERANCE: f64 = 0.4;
pub const GOAL_BONUS: f64 = 5.0;
pub const DROP_PENALTY: f64 = -20.0;
pub const GOAL_TIMEOUT: f64 = 8.0;
pub const MAX_CONSECUTIVE_GOALS: u32 = 50;
pub const WARMUP_STEPS: usize = 100;
pub const MAX_WARMUP_ATTEMPTS: usize = 100;
pub const DROP_ANGULAR_SPEED: f64 = 50.0;
pub const TIP_RING_RADIUS: f64 = 0.1;
pub const TIP_LENGTH: f64 = 0.05;
/// Velocity scale of the smoothed Coulomb friction, rad/s.
const FRICTION_SMOOTHING: f64 = 0.01;

/// Centre of bin `bin` in `[-1, 1]`.
#[inline]
pub fn bin_to_action(bin: usize) -> f64 {
    -1.0 + 2.0 * bin as f64 / (NUM_BINS - 1) as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DoneReason {
    ReachedMaxGoals,
    Timeout,
    Dropped,
}

impl DoneReason {
    pub fn as_str(&self) -> &'static str {
        match self {
            DoneReason::ReachedMaxGoals => "reached_50",
            DoneReason::Timeout => "timeout",
            DoneReason::Dropped => "dropped",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnvState {
    pub q: Quat,
    pub omega: Vec3,
    pub p: Vec3,
    pub v: Vec3,
    pub phi: Vec<f64>,
    pub phid: Vec<f64>,
    pub setpoint: Vec<f64>,
    pub ema_action: Vec<f64>,
    pub time: f64,
    pub goal: Quat,
    pub consecutive_goals: u32,
    pub time_since_goal: f64,
    pub force: Vec3,
    /// Largest contact slip speed seen during the last step, rad/s.
    pub peak_slip: f64,
    pub perturbation: PerturbationState,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepEvents {
    pub reward: f64,
    pub goal_achieved: bool,
    pub dropped: bool,
    pub done: Option<DoneReason>,
    pub distance_before: f64,
    pub distance_after: f64,
    /// Simulated seconds covered by the step.
    pub duration: f64,
}

impl StepEvents {
    pub fn episode_done(&self) -> bool {
        self.done.is_some()
    }
}

/// What the deployed policy sees.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyObs {
    pub tips: Vec<Vec3>,
    pub relative_target: Quat,
    pub object_position: Option<Vec3>,
}

impl PolicyObs {
    pub fn dim(num_joints: usize, with_position: bool) -> usize {
        3 * num_joints + 4 + if with_position { 3 } else { 0 }
    }

    pub fn write_to<S: crate::Real>(&self, out: &mut Vec<S>) {
        for t in &self.tips {
            out.extend(t.iter().map(|&v| S::from_f64_lossy(v)));
        }
        out.extend(self.relative_target.to_array().iter().map(|&v| S::from_f64_lossy(v)));
        if let Some(p) = self.object_position {
            out.extend(p.iter().map(|&v| S::from_f64_lossy(v)));
        }
    }
}

/// Privileged, noiseless observation for the value network.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueObs {
    pub tips: Vec<Vec3>,
    pub object_position: Vec3,
    pub object_orientation: Quat,
    pub goal: Quat,
    pub relative_target: Quat,
    pub phi: Vec<f64>,
    pub phid: Vec<f64>,
    pub object_velocity: Vec3,
    pub object_angular_velocity: Vec3,
}

impl ValueObs {
    pub fn dim(num_joints: usize) -> usize {
        5 * num_joints + 21
    }

    pub fn write_to<S: crate::Real>(&self, out: &mut Vec<S>) {
        let f = |v: f64| S::from_f64_lossy(v);
        for t in &self.tips {
            out.extend(t.iter().map(|&v| f(v)));
        }
        out.extend(self.object_position.iter().map(|&v| f(v)));
        out.extend(self.object_orientation.to_array().iter().map(|&v| f(v)));
        out.extend(self.goal.to_array().iter().map(|&v| f(v)));
        out.extend(self.relative_target.to_array().iter().map(|&v| f(v)));
        out.extend(self.phi.iter().map(|&v| f(v)));
        out.extend(self.phid.iter().map(|&v| f(v)));
        out.extend(self.object_velocity.iter().map(|&v| f(v)));
        out.extend(self.object_angular_velocity.iter().map(|&v| f(v)));
    }
}

/// Spin axis of joint `j` in the palm frame.
pub fn joint_axis(j: usize) -> Vec3 {
    match j {
        0 => [1.0, 0.0, 0.0],
        1 => [0.0, 1.0, 0.0],
        2 => [0.0, 0.0, 1.0],
        _ => {
            // golden-angle spiral for extra joints
            let i = (j - 3) as f64;
            let z = 1.0 - 2.0 * ((i * 0.618_033_988_75 + 0.5) % 1.0);
            let r = (1.0 - z * z).sqrt();
            let t = i * 2.399_963_229_728_653;
            [r * t.cos(), r * t.sin(), z]
        }
    }
}

/// Orthonormal pair spanning the plane swept by tip `j`.
fn tip_frame(j: usize) -> (Vec3, Vec3) {
    let e = joint_axis(j);
    let helper = if e[0].abs() < 0.9 { [1.0, 0.0, 0.0] } else { [0.0, 1.0, 0.0] };
    let c = cross3(helper, e);
    let u = scale3(c, 1.0 / norm3(c));
    let w = cross3(e, u);
    (u, w)
}

fn tip_base(j: usize, k: usize) -> Vec3 {
    let a = 2.0 * std::f64::consts::PI * j as f64 / k as f64;
    [TIP_RING_RADIUS * a.cos(), TIP_RING_RADIUS * a.sin(), 0.0]
}

/// Cartesian fingertip position of joint `j` at angle `phi_j`.
pub fn forward_tip(phi_j: f64, joint_index: usize, params: &EnvParams) -> Vec3 {
    assert!(joint_index < params.num_joints, "joint index out of range");
    let (u, w) = tip_frame(joint_index);
    let (s, c) = phi_j.sin_cos();
    add3(
        tip_base(joint_index, params.num_joints),
        add3(scale3(u, TIP_LENGTH * c), scale3(w, TIP_LENGTH * s)),
    )
}

pub fn tip_positions(phi: &[f64], params: &EnvParams) -> Vec<Vec3> {
    phi.iter().enumerate().map(|(j, &a)| forward_tip(a, j, params)).collect()
}

pub fn is_goal_achieved(q: &Quat, goal: &Quat) -> bool {
    quat_dist(q, goal) < GOAL_TOLERANCE
}

pub fn compute_reward(d_t: f64, d_t1: f64, goal_achieved: bool, dropped: bool) -> f64 {
    let mut r = d_t - d_t1;
    if goal_achieved {
        r += GOAL_BONUS;
    }
    if dropped {
        r += DROP_PENALTY;
    }
    r
}

pub fn sample_goal<R: Rng + ?Sized>(rng: &mut R) -> Quat {
    Quat::random(rng)
}

pub fn check_drop(state: &EnvState, params: &EnvParams) -> bool {
    norm3(state.p) > params.palm_radius || norm3(state.omega) > DROP_ANGULAR_SPEED
}

/// Equilibrium of the palm spring under gravity.
pub fn rest_position(params: &EnvParams) -> Vec3 {
    scale3(params.gravity, params.object_mass / params.palm_stiffness)
}

impl EnvState {
    /// Object at rest on the palm, joints at zero (clamped into limits).
    pub fn at_rest(params: &EnvParams, orientation: Quat) -> Self {
        let k = params.num_joints;
        let phi: Vec<f64> = (0..k)
            .map(|j| {
                let (lo, hi) = params.joint_limits[j];
                0.0f64.clamp(lo, hi)
            })
            .collect();
        Self {
            q: orientation,
            omega: [0.0; 3],
            p: rest_position(params),
            v: [0.0; 3],
            setpoint: phi.clone(),
            phi,
            phid: vec![0.0; k],
            ema_action: vec![0.0; k],
            time: 0.0,
            goal: orientation,
            consecutive_goals: 0,
            time_since_goal: 0.0,
            force: [0.0; 3],
            peak_slip: 0.0,
            perturbation: PerturbationState::new(k),
        }
    }

    pub fn is_finite(&self) -> bool {
        let vals = [self.q.w, self.q.x, self.q.y, self.q.z]
            .into_iter()
            .chain(self.omega)
            .chain(self.p)
            .chain(self.v)
            .chain(self.force);
        vals.chain(self.phi.iter().copied())
            .chain(self.phid.iter().copied())
            .all(f64::is_finite)
    }
}

/// Joint state advanced by one substep. Damping and friction are integrated
/// implicitly, the remaining torques explicitly, then the angle with the new velocity.
#[inline]
pub fn joint_substep(
    phi: f64,
    phid: f64,
    setpoint: f64,
    external_torque: f64,
    params: &EnvParams,
    j: usize,
    dt: f64,
) -> (f64, f64) {
    let inertia = params.link_inertia[j];
    // Coulomb friction as a secant damping coefficient, so it joins the implicit part
    let x = phid / FRICTION_SMOOTHING;
    let secant = if x.abs() < 1e-8 { 1.0 } else { x.tanh() / x };
    let friction_damping = params.friction_loss[j] * secant / FRICTION_SMOOTHING;
    let tau = params.p_gain[j] * (setpoint - phi) + external_torque;
    let damping = params.joint_damping[j] + friction_damping;
    let mut v = (phid + dt * tau / inertia) / (1.0 + dt * damping / inertia);
    let mut x = phi + dt * v;
    let (lo, hi) = params.joint_limits[j];
    if x > hi {
        x = hi;
        v = v.min(0.0);
    } else if x < lo {
        x = lo;
        v = v.max(0.0);
    }
    (x, v)
}

fn solve3(a: [[f64; 3]; 3], b: Vec3) -> Vec3 {
    let det = a[0][0] * (a[1][1] * a[2][2] - a[1][2] * a[2][1])
        - a[0][1] * (a[1][0] * a[2][2] - a[1][2] * a[2][0])
        + a[0][2] * (a[1][0] * a[2][1] - a[1][1] * a[2][0]);
    let mut out = [0.0; 3];
    for (col, o) in out.iter_mut().enumerate() {
        let mut m = a;
        for row in 0..3 {
            m[row][col] = b[row];
        }
        *o = (m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
            - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0]))
            / det;
    }
    out
}

/// Largest speed mismatch between a fingertip and the object surface it drives.
pub fn contact_slip(state: &EnvState, params: &EnvParams) -> f64 {
    let ratio = params.contact_ratio();
    (0..params.num_joints)
        .map(|j| (ratio * state.phid[j] - dot3(state.omega, joint_axis(j))).abs())
        .fold(0.0, f64::max)
}

/// Direction of the lateral shove from finger `j`: tangent to the base ring.
pub fn slip_direction(j: usize, k: usize) -> Vec3 {
    let b = tip_base(j, k);
    let n = norm3(b);
    [-b[1] / n, b[0] / n, 0.0]
}

/// One physics substep of the whole rig.
pub fn substep(state: &mut EnvState, params: &EnvParams, dt: f64) {
    let k = params.num_joints;
    let ratio = params.contact_ratio();

    // joints, with the contact reaction from the object
    for j in 0..k {
        if params.locked_joint_mask[j] {
            state.phid[j] = 0.0;
            continue;
        }
        let e = joint_axis(j);
        let slip = ratio * state.phid[j] - dot3(state.omega, e);
        let reaction = -params.friction_coupling[j] * ratio * slip;
        let (x, v) = joint_substep(state.phi[j], state.phid[j], state.setpoint[j], reaction, params, j, dt);
        state.phi[j] = x;
        state.phid[j] = v;
    }

    // object rotation: coupling integrated implicitly in the world frame
    let inertia_body = params.inertia_diag();
    let mut inertia_world = [[0.0; 3]; 3];
    let basis = [
        state.q.rotate([1.0, 0.0, 0.0]),
        state.q.rotate([0.0, 1.0, 0.0]),
        state.q.rotate([0.0, 0.0, 1.0]),
    ];
    for r in 0..3 {
        for c in 0..3 {
            inertia_world[r][c] = (0..3).map(|a| basis[a][r] * inertia_body[a] * basis[a][c]).sum();
        }
    }
    let mut lhs = inertia_world;
    let mut drive = [0.0; 3];
    for j in 0..k {
        let e = joint_axis(j);
        let c = params.friction_coupling[j];
        for r in 0..3 {
            for col in 0..3 {
                lhs[r][col] += dt * c * e[r] * e[col];
            }
        }
        drive = add3(drive, scale3(e, c * ratio * state.phid[j]));
    }
    let lever = state.q.rotate(params.com_offset);
    let gravity_torque = cross3(lever, scale3(params.gravity, params.object_mass));
    let iw: Vec3 = [
        dot3(inertia_world[0], state.omega),
        dot3(inertia_world[1], state.omega),
        dot3(inertia_world[2], state.omega),
    ];
    let gyro = cross3(state.omega, iw);
    let rhs = add3(iw, scale3(add3(add3(drive, gravity_torque), scale3(gyro, -1.0)), dt));
    state.omega = solve3(lhs, rhs);
    state.q = (Quat::from_rotation_vector(scale3(state.omega, dt)) * state.q).normalized();

    // translation on the palm spring; fingertips slipping past their grip shove the object sideways
    let m = params.object_mass;
    let mut force = add3(
        add3(scale3(state.p, -params.palm_stiffness), scale3(params.gravity, m)),
        state.force,
    );
    for j in 0..k {
        let slip = ratio * state.phid[j] - dot3(state.omega, joint_axis(j));
        let excess = (slip.abs() - params.grip_slip).max(0.0) * slip.signum();
        if excess != 0.0 {
            force = add3(force, scale3(slip_direction(j, k), params.slip_force * excess));
        }
    }
    state.v = add3(state.v, scale3(force, dt / m));
    state.p = add3(state.p, scale3(state.v, dt));
}

/// Actuation and integration for one environment step, without goal logic.
/// Returns the simulated duration.
pub fn advance(
    state: &mut EnvState,
    bins: &[usize],
    params: &EnvParams,
    er: &EpisodeRandomization,
    rng: &mut SimRng,
) -> Result<f64> {
    let k = params.num_joints;
    if bins.len() != k {
        return Err(Error::Dimension {
            what: "action",
            expected: k,
            got: bins.len(),
        });
    }
    let dts: [f64; SUBSTEPS] = match er.timing_rate {
        Some(rate) if er.effects.timing => std::array::from_fn(|_| sample_timestep(rate, rng)),
        _ => [NOMINAL_SUBSTEP; SUBSTEPS],
    };
    let duration: f64 = dts.iter().sum();

    let mut a = vec![0.0; k];
    for j in 0..k {
        if bins[j] >= NUM_BINS {
            return Err(Error::InvalidAction(bins[j]));
        }
        let raw = bin_to_action(bins[j]);
        state.ema_action[j] += ACTION_EMA * (raw - state.ema_action[j]);
        a[j] = state.ema_action[j];
    }
    perturb_action(&mut a, er, &mut state.perturbation, duration, rng);
    for j in 0..k {
        if params.locked_joint_mask[j] {
            state.setpoint[j] = state.phi[j];
            continue;
        }
        let (lo, hi) = params.joint_limits[j];
        state.setpoint[j] = (state.phi[j] + a[j] * ACTION_SCALE).clamp(lo, hi);
    }

    if er.effects.random_forces {
        state.force = random_force_step(
            state.force,
            er.force_probability,
            params.object_mass,
            &er.ranges,
            duration,
            rng,
        );
    }
    state.peak_slip = 0.0;
    for dt in dts {
        substep(state, params, dt);
        state.peak_slip = state.peak_slip.max(contact_slip(state, params));
    }
    state.time += duration;
    if !state.is_finite() {
        return Err(Error::NonFiniteState);
    }
    Ok(duration)
}

/// Full environment transition: actuation, integration, goal, drop and timeout logic.
pub fn step(
    state: &mut EnvState,
    bins: &[usize],
    params: &EnvParams,
    er: &EpisodeRandomization,
    rng: &mut SimRng,
) -> Result<StepEvents> {
    let d_before = quat_dist(&state.q, &state.goal);
    let duration = advance(state, bins, params, er, rng)?;
    let d_after = quat_dist(&state.q, &state.goal);
    let dropped = check_drop(state, params);
    let goal_achieved = !dropped && d_after < GOAL_TOLERANCE;
    let reward = compute_reward(d_before, d_after, goal_achieved, dropped);

    state.time_since_goal += duration;
    let mut done = None;
    if dropped {
        done = Some(DoneReason::Dropped);
    } else if goal_achieved {
        state.consecutive_goals += 1;
        state.time_since_goal = 0.0;
        if state.consecutive_goals >= MAX_CONSECUTIVE_GOALS {
            done = Some(DoneReason::ReachedMaxGoals);
        } else {
            // the bonus above was scored against the old goal
            state.goal = sample_goal(rng);
        }
    } else if state.time_since_goal > GOAL_TIMEOUT {
        done = Some(DoneReason::Timeout);
    }
    Ok(StepEvents {
        reward,
        goal_achieved,
        dropped,
        done,
        distance_before: d_before,
        distance_after: d_after,
        duration,
    })
}

/// Rest pose in a random orientation followed by 100 random-action steps,
/// retrying when the object drops during warm-up.
pub fn reset(params: &EnvParams, er: &EpisodeRandomization, rng: &mut SimRng) -> Result<EnvState> {
    let k = params.num_joints;
    for _ in 0..MAX_WARMUP_ATTEMPTS {
        let mut state = EnvState::at_rest(params, Quat::random(rng));
        let mut dropped = false;
        let mut bins = vec![0usize; k];
        for _ in 0..WARMUP_STEPS {
            for b in bins.iter_mut() {
                *b = rng.random_range(0..NUM_BINS);
            }
            advance(&mut state, &bins, params, er, rng)?;
            if check_drop(&state, params) {
                dropped = true;
                break;
            }
        }
        if dropped {
            continue;
        }
        state.time = 0.0;
        state.time_since_goal = 0.0;
        state.consecutive_goals = 0;
        state.goal = sample_goal(rng);
        return Ok(state);
    }
    Err(Error::WarmupFailed(MAX_WARMUP_ATTEMPTS))
}

pub fn value_obs(state: &EnvState, params: &EnvParams) -> ValueObs {
    ValueObs {
        tips: tip_positions(&state.phi, params),
        object_position: state.p,
        object_orientation: state.q.canonical(),
        goal: state.goal.canonical(),
        relative_target: relative_target(&state.q, &state.goal),
        phi: state.phi.clone(),
        phid: state.phid.clone(),
        object_velocity: state.v,
        object_angular_velocity: state.omega,
    }
}

/// Configuration of an environment instance.
#[derive(Debug, Clone, PartialEq)]
pub struct EnvConfig {
    pub params: EnvParams,
    pub randomization: RandomizationConfig,
    pub policy_object_position: bool,
}

impl EnvConfig {
    pub fn new(params: EnvParams, randomization: RandomizationConfig) -> Self {
        Self {
            params,
            randomization,
            policy_object_position: false,
        }
    }

    pub fn policy_obs_dim(&self) -> usize {
        PolicyObs::dim(self.params.num_joints, self.policy_object_position)
    }

    pub fn value_obs_dim(&self) -> usize {
        ValueObs::dim(self.params.num_joints)
    }
}

/// An environment instance with its own random stream and episode draw.
#[derive(Debug, Clone)]
pub struct Env {
    pub config: EnvConfig,
    pub episode: EpisodeRandomization,
    pub state: EnvState,
    rng: SimRng,
    episode_seed: u64,
    episodes: u64,
    /// Duration of the last step, used by marker dropout timing.
    last_step_duration: f64,
}

impl Env {
    pub fn new(config: EnvConfig, seed: u64) -> Result<Self> {
        config.params.validate()?;
        let mut rng = seeded(seed, stream::ENV);
        let episode = EpisodeRandomization::identity(&config.params);
        let state = EnvState::at_rest(&config.params, Quat::IDENTITY);
        let episode_seed = rng.random();
        let mut env = Self {
            config,
            episode,
            state,
            rng,
            episode_seed,
            episodes: 0,
            last_step_duration: NOMINAL_STEP_DURATION,
        };
        env.reset()?;
        Ok(env)
    }

    /// Draws a fresh episode randomization and resets the state.
    pub fn reset(&mut self) -> Result<()> {
        let mut last_err = None;
        for _ in 0..MAX_WARMUP_ATTEMPTS {
            let mut rrng = seeded(derive_seed(self.episode_seed, self.episodes), stream::RANDOMIZATION);
            self.episodes += 1;
            let er = EpisodeRandomization::sample(&self.config.params, &self.config.randomization, &mut rrng);
            match reset(&er.params, &er, &mut self.rng) {
                Ok(state) => {
                    self.episode = er;
                    self.state = state;
                    self.last_step_duration = NOMINAL_STEP_DURATION;
                    return Ok(());
                }
                Err(e @ (Error::NonFiniteState | Error::WarmupFailed(_))) => last_err = Some(e),
                Err(e) => return Err(e),
            }
        }
        Err(last_err.unwrap_or(Error::WarmupFailed(MAX_WARMUP_ATTEMPTS)))
    }

    pub fn params(&self) -> &EnvParams {
        &self.episode.params
    }

    /// Noisy policy observation and noiseless value observation of the current state.
    pub fn observe(&mut self) -> (PolicyObs, ValueObs) {
        let params = &self.episode.params;
        let vobs = value_obs(&self.state, params);
        let mut pobs = PolicyObs {
            tips: vobs.tips.clone(),
            relative_target: vobs.relative_target,
            object_position: self.config.policy_object_position.then_some(self.state.p),
        };
        apply_observation_noise(&mut pobs, &self.episode, &mut self.rng);
        marker_dropout(
            &mut pobs,
            &vobs.tips,
            self.state.p,
            &self.episode,
            &mut self.state.perturbation,
            self.last_step_duration,
            &mut self.rng,
        );
        (pobs, vobs)
    }

    pub fn step(&mut self, bins: &[usize]) -> Result<StepEvents> {
        let params = self.episode.params.clone();
        let ev = step(&mut self.state, bins, &params, &self.episode, &mut self.rng)?;
        self.last_step_duration = ev.duration;
        Ok(ev)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::FRAC_PI_2;

    fn quiet_params() -> EnvParams {
        let mut p = EnvParams::default();
        p.gravity = [0.0; 3];
        p
    }

    #[test]
    fn bins_map_to_even_grid() {
        assert_eq!(bin_to_action(0), -1.0);
        assert_eq!(bin_to_action(5), 0.0);
        assert_eq!(bin_to_action(10), 1.0);
        assert!((bin_to_action(1) + 0.8).abs() < 1e-15);
    }

    #[test]
    fn goal_tolerance() {
        let g = Quat::IDENTITY;
        assert!(is_goal_achieved(&Quat::from_axis_angle([0.0, 1.0, 0.0], 0.39), &g));
        assert!(!is_goal_achieved(&Quat::from_axis_angle([0.0, 1.0, 0.0], 0.41), &g));
        assert!(is_goal_achieved(&g, &g));
    }

    #[test]
    fn reward_cases() {
        assert_eq!(compute_reward(0.5, 0.5, false, false), 0.0);
        assert!((compute_reward(0.5, 0.3, true, false) - 5.2).abs() < 1e-12);
        assert_eq!(compute_reward(0.2, 0.2, false, true), -20.0);
    }

    #[test]
    fn tip_kinematics() {
        let p = EnvParams::default();
        for j in 0..3 {
            let base = tip_base(j, 3);
            let (u, w) = tip_frame(j);
            let t0 = forward_tip(0.0, j, &p);
            let t1 = forward_tip(FRAC_PI_2, j, &p);
            for i in 0..3 {
                assert!((t0[i] - base[i] - TIP_LENGTH * u[i]).abs() < 1e-15);
                assert!((t1[i] - base[i] - TIP_LENGTH * w[i]).abs() < 1e-15);
            }
        }
        let mut rng = seeded(9, 0);
        for _ in 0..1000 {
            let j = rng.random_range(0..3);
            let phi: f64 = rng.random_range(-40.0..40.0);
            let t = forward_tip(phi, j, &p);
            let d = norm3(quat::sub3(t, tip_base(j, 3)));
            assert!((d - TIP_LENGTH).abs() < 1e-12);
        }
    }

    #[test]
    fn drop_condition() {
        let p = EnvParams::default();
        let mut s = EnvState::at_rest(&p, Quat::IDENTITY);
        s.p = [0.0; 3];
        assert!(!check_drop(&s, &p));
        s.p = [p.palm_radius * 1.01, 0.0, 0.0];
        assert!(check_drop(&s, &p));
        s.p = [0.0; 3];
        s.omega = [0.0, 0.0, 51.0];
        assert!(check_drop(&s, &p));
    }

    #[test]
    fn rest_is_a_fixed_point() {
        let p = quiet_params();
        let er = EpisodeRandomization::identity(&p);
        let mut rng = seeded(1, 0);
        let mut s = EnvState::at_rest(&p, Quat::IDENTITY);
        s.goal = Quat::from_axis_angle([1.0, 0.0, 0.0], 1.0);
        let before = s.clone();
        let ev = step(&mut s, &[5, 5, 5], &p, &er, &mut rng).unwrap();
        assert_eq!(ev.reward, 0.0);
        assert_eq!(s.q, before.q);
        assert_eq!(s.phi, before.phi);
        assert_eq!(s.p, before.p);
        assert_eq!(s.omega, [0.0; 3]);
    }

    #[test]
    fn timeout_after_eight_seconds() {
        let p = quiet_params();
        let er = EpisodeRandomization::identity(&p);
        let mut rng = seeded(1, 0);
        let mut s = EnvState::at_rest(&p, Quat::IDENTITY);
        s.goal = Quat::from_axis_angle([1.0, 0.0, 0.0], 2.0);
        let mut prev_clock = 0.0;
        loop {
            let ev = step(&mut s, &[5, 5, 5], &p, &er, &mut rng).unwrap();
            if let Some(r) = ev.done {
                assert_eq!(r, DoneReason::Timeout);
                assert!(s.time_since_goal > GOAL_TIMEOUT);
                assert!(prev_clock <= GOAL_TIMEOUT);
                break;
            }
            prev_clock = s.time_since_goal;
        }
        assert!((s.time - 8.0).abs() < 0.1);
    }

    #[test]
    fn locked_joint_never_moves() {
        let mut p = EnvParams::default();
        p.locked_joint_mask[1] = true;
        let er = EpisodeRandomization::identity(&p);
        let mut rng = seeded(4, 0);
        let mut s = reset(&p, &er, &mut rng).unwrap();
        let phi0 = s.phi[1];
        for _ in 0..500 {
            let bins: Vec<usize> = (0..3).map(|_| rng.random_range(0..NUM_BINS)).collect();
            let ev = step(&mut s, &bins, &p, &er, &mut rng).unwrap();
            assert_eq!(s.phi[1], phi0);
            if ev.episode_done() {
                break;
            }
        }
    }

    #[test]
    fn rejects_bad_bins() {
        let p = EnvParams::default();
        let er = EpisodeRandomization::identity(&p);
        let mut rng = seeded(1, 0);
        let mut s = EnvState::at_rest(&p, Quat::IDENTITY);
        assert!(step(&mut s, &[5, 11, 5], &p, &er, &mut rng).is_err());
        assert!(step(&mut s, &[5, 5], &p, &er, &mut rng).is_err());
    }

    #[test]
    fn non_finite_state_is_an_error() {
        let mut p = EnvParams::default();
        p.friction_loss[0] = f64::NAN;
        let er = EpisodeRandomization::identity(&p);
        let mut rng = seeded(1, 0);
        let mut s = EnvState::at_rest(&p, Quat::IDENTITY);
        let r = step(&mut s, &[10, 5, 5], &p, &er, &mut rng);
        assert!(matches!(r, Err(Error::NonFiniteState)));
    }

    #[test]
    fn env_is_deterministic() {
        let cfg = EnvConfig::new(EnvParams::default(), RandomizationConfig::default());
        let run = || {
            let mut env = Env::new(cfg.clone(), 77).unwrap();
            let mut trace = vec![];
            let mut brng = seeded(5, 0);
            for _ in 0..200 {
                let (po, _) = env.observe();
                let bins: Vec<usize> = (0..3).map(|_| brng.random_range(0..NUM_BINS)).collect();
                let ev = env.step(&bins).unwrap();
                trace.push((po.relative_target, env.state.q, ev.reward));
                if ev.episode_done() {
                    env.reset().unwrap();
                }
            }
            trace
        };
        assert_eq!(run(), run());
    }
}
