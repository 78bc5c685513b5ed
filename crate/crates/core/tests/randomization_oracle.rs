mod support;

use proptest::prelude::*;
use reorient_core::env::quat::Quat;
use reorient_core::env::{EnvParams, PolicyObs};
use reorient_core::randomization::*;
use reorient_core::rng::seeded;
use support::samplers::{self, only};

#[test]
fn physics_ranges_match_their_distributions() {
    samplers::physics_ranges_match_their_distributions();
}

#[test]
fn physics_draws_stay_in_support() {
    let base = EnvParams::default();
    let r = RandomizationRanges::default();
    let mut rng = seeded(2, 2);
    for _ in 0..100_000 {
        let p = sample_physics(&base, &r, &mut rng);
        let f = p.p_gain[0] / base.p_gain[0];
        assert!(f >= r.p_gain_scale.0 && f <= r.p_gain_scale.1);
        let f = p.joint_damping[0] / base.joint_damping[0];
        assert!(f >= r.damping_scale.0 && f <= r.damping_scale.1);
        for &(lo, hi) in &p.joint_limits {
            assert!(lo < hi);
        }
        p.validate().unwrap();
    }
}

#[test]
fn physics_disabled_returns_base_exactly() {
    let base = EnvParams::default();
    let er = EpisodeRandomization::sample(&base, &RandomizationConfig::disabled(), &mut seeded(3, 3));
    assert_eq!(er.params, base);
}

#[test]
fn timing_mean_matches_inverse_rate() {
    samplers::timing_mean_matches_inverse_rate();
}

#[test]
fn timing_rate_per_episode_in_support() {
    let cfg = only(|u| u.timing = true);
    let mut rng = seeded(5, 5);
    for _ in 0..10_000 {
        let er = EpisodeRandomization::sample(&EnvParams::default(), &cfg, &mut rng);
        let rate = er.timing_rate.unwrap();
        assert!((1250.0..=10_000.0).contains(&rate));
    }
}

#[test]
fn action_noise_std_at_zero_action() {
    samplers::action_noise_std_at_zero_action();
}

#[test]
fn action_noise_output_is_clipped() {
    let cfg = only(|u| u.action_noise = true);
    let mut rng = seeded(7, 7);
    let er = EpisodeRandomization::sample(&EnvParams::default(), &cfg, &mut rng);
    for i in 0..10_000 {
        let mut a = [1.0, -1.0, (i as f64 / 5000.0) - 1.0];
        apply_action_noise(&mut a, &er, &mut rng);
        assert!(a.iter().all(|v| (-1.0..=1.0).contains(v)));
    }
}

#[test]
fn delay_flag_rate_is_half() {
    samplers::delay_flag_rate_is_half();
}

#[test]
fn marker_freeze_entry_rate() {
    samplers::marker_freeze_entry_rate();
}

#[test]
fn occluded_tips_freeze() {
    let cfg = only(|u| u.marker_dropout = true);
    let params = EnvParams::default();
    let mut rng = seeded(10, 10);
    let er = EpisodeRandomization::sample(&params, &cfg, &mut rng);
    let mut st = PerturbationState::new(3);
    let mut tips = vec![[0.1, 0.0, 0.0], [-0.1, 0.0, 0.0], [0.0, 0.1, 0.0]];
    let mut obs = PolicyObs {
        tips: tips.clone(),
        relative_target: Quat::IDENTITY,
        object_position: None,
    };
    marker_dropout(&mut obs, &tips, [0.0; 3], &er, &mut st, 0.0, &mut rng);
    let reported = obs.tips.clone();
    // move tips 0 and 1 to within 1 cm of each other
    tips[0] = [0.0, -0.1, 0.0];
    tips[1] = [0.005, -0.1, 0.0];
    let mut obs = PolicyObs {
        tips: tips.clone(),
        relative_target: Quat::IDENTITY,
        object_position: None,
    };
    marker_dropout(&mut obs, &tips, [0.0; 3], &er, &mut st, 0.0, &mut rng);
    assert_eq!(obs.tips[0], reported[0]);
    assert_eq!(obs.tips[1], reported[1]);
    assert_eq!(obs.tips[2], tips[2]);
}

#[test]
fn force_decays_by_099_per_nominal_step() {
    samplers::force_decays_by_099_per_nominal_step();
}

#[test]
fn force_stationary_std_matches_impulse_decay_balance() {
    samplers::force_stationary_std_matches_impulse_decay_balance();
}

#[test]
fn force_probability_in_support() {
    samplers::force_probability_in_support();
}

#[test]
fn backlash_params_centered_and_floored() {
    samplers::backlash_params_centered_and_floored();
}

#[test]
fn backlash_forced_cases() {
    samplers::backlash_forced_cases();
}

#[test]
fn observation_noise_within_one_episode() {
    samplers::observation_noise_within_one_episode();
}

#[test]
fn observation_noise_across_episodes() {
    samplers::observation_noise_across_episodes();
}

#[test]
fn orientation_noise_angle_std() {
    samplers::orientation_noise_angle_std();
}

#[test]
fn per_episode_draw_is_constant_within_episode() {
    use reorient_core::env::{Env, EnvConfig};
    let mut env = Env::new(EnvConfig::new(EnvParams::default(), RandomizationConfig::default()), 3).unwrap();
    let er = env.episode.clone();
    for _ in 0..200 {
        env.observe();
        if env.step(&[7, 3, 5]).map(|e| e.done.is_some()).unwrap_or(true) {
            break;
        }
        assert_eq!(env.episode, er);
    }
}

#[test]
fn disabled_pipeline_is_bitwise_identity() {
    let params = EnvParams::default();
    let er = EpisodeRandomization::sample(&params, &RandomizationConfig::disabled(), &mut seeded(18, 18));
    let mut st = PerturbationState::new(3);
    let mut rng = seeded(18, 19);
    let obs = PolicyObs {
        tips: vec![[0.1, 0.2, 0.3]; 3],
        relative_target: Quat::new(0.5, 0.5, 0.5, 0.5),
        object_position: None,
    };
    for i in 0..100 {
        let a0 = [0.3 * (i as f64).sin(), -0.7, 0.123];
        let mut a = a0;
        perturb_action(&mut a, &er, &mut st, 0.08, &mut rng);
        assert_eq!(a, a0);
        let mut o = obs.clone();
        apply_observation_noise(&mut o, &er, &mut rng);
        marker_dropout(&mut o, &obs.tips, [0.0; 3], &er, &mut st, 0.08, &mut rng);
        assert_eq!(o, obs);
    }
}

proptest! {
    #[test]
    fn backlash_never_amplifies(a in -1.0f64..1.0, s in -1.0f64..1.0, dn in 0.01f64..3.0, dp in 0.01f64..3.0, dt in 0.0f64..0.2) {
        let (out, s2) = backlash(a, BacklashParams { neg: dn, pos: dp }, s, dt);
        prop_assert!(out.abs() <= a.abs());
        prop_assert!((-1.0..=1.0).contains(&s2));
        prop_assert!(out == 0.0 || out.signum() == a.signum());
    }

    #[test]
    fn backlash_transmits_fully_at_rail(a in 0.001f64..1.0, neg in any::<bool>(), dt in 0.0f64..0.2) {
        let a = if neg { -a } else { a };
        let (out, _) = backlash(a, BacklashParams { neg: 1.0, pos: 1.0 }, a.signum(), dt);
        prop_assert_eq!(out, a);
    }

    #[test]
    fn sampled_scale_factors_stay_in_range(seed in 0u64..5000) {
        let base = EnvParams::default();
        let r = RandomizationRanges::default();
        let p = sample_physics(&base, &r, &mut seeded(seed, 20));
        let s = p.object_dim_scale / base.object_dim_scale;
        prop_assert!(s >= r.dim_scale.0 && s <= r.dim_scale.1);
        let s = p.object_mass / base.object_mass;
        prop_assert!(s >= r.mass_scale.0 && s <= r.mass_scale.1);
        for j in 0..3 {
            let s = p.friction_coupling[j] / base.friction_coupling[j];
            prop_assert!(s >= r.friction_scale.0 - 1e-12 && s <= r.friction_scale.1 + 1e-12);
        }
    }
}
