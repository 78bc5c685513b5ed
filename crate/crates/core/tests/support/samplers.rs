//! Monte-Carlo checks of the randomization samplers against their analytic
//! moments. Each panics on a mismatch.

use reorient_core::env::quat::Quat;
use reorient_core::env::{EnvParams, PolicyObs, NOMINAL_STEP_DURATION};
use reorient_core::randomization::*;
use reorient_core::rng::seeded;

/// `|x − expected| < 3σ/√n` for a sample mean.
pub fn within_3_sigma(x: f64, expected: f64, std: f64, n: usize) -> bool {
    (x - expected).abs() < 3.0 * std / (n as f64).sqrt()
}

pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let v = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, v.sqrt())
}

/// Sample std within 3σ of `expected`, using the sample kurtosis for the
/// spread of the variance estimator.
pub fn std_matches(xs: &[f64], expected: f64) -> bool {
    let n = xs.len() as f64;
    let (m, s) = mean_std(xs);
    let m4 = xs.iter().map(|x| (x - m).powi(4)).sum::<f64>() / n;
    let var_of_var = (m4 - s.powi(4)) / n;
    (s * s - expected * expected).abs() < 3.0 * var_of_var.sqrt()
}

pub fn only(effects: impl Fn(&mut UnmodeledEffects)) -> RandomizationConfig {
    let mut cfg = RandomizationConfig::disabled();
    effects(&mut cfg.unmodeled);
    cfg
}

pub fn physics_ranges_match_their_distributions() {
    let base = EnvParams::default();
    let r = RandomizationRanges::default();
    let n = 10_000;
    let mut rng = seeded(1, 1);
    let mut dim = vec![];
    let mut mass = vec![];
    let mut fric = vec![];
    let mut log_damp = vec![];
    let mut log_gain = vec![];
    let mut limit = vec![];
    let mut grav = vec![];
    for _ in 0..n {
        let p = sample_physics(&base, &r, &mut rng);
        dim.push(p.object_dim_scale / base.object_dim_scale);
        mass.push(p.object_mass / base.object_mass);
        fric.push(p.friction_coupling[0] / base.friction_coupling[0]);
        log_damp.push((p.joint_damping[1] / base.joint_damping[1]).ln());
        log_gain.push((p.p_gain[2] / base.p_gain[2]).ln());
        limit.push(p.joint_limits[0].1 - base.joint_limits[0].1);
        grav.push(p.gravity[0] - base.gravity[0]);
    }
    let uniform = |xs: &[f64], (lo, hi): (f64, f64)| {
        let (m, _) = mean_std(xs);
        assert!(xs.iter().all(|&x| x >= lo && x <= hi));
        assert!(within_3_sigma(m, (lo + hi) / 2.0, (hi - lo) / 12f64.sqrt(), xs.len()), "{m} in {lo}..{hi}");
    };
    uniform(&dim, r.dim_scale);
    uniform(&mass, r.mass_scale);
    uniform(&fric, r.friction_scale);
    let log_range = |(lo, hi): (f64, f64)| (lo.ln(), hi.ln());
    uniform(&log_damp, log_range(r.damping_scale));
    uniform(&log_gain, log_range(r.p_gain_scale));
    // geometric mean of the damping factor is √(0.3·3) = √0.9
    let gm = (log_damp.iter().sum::<f64>() / n as f64).exp();
    assert!((gm - 0.9f64.sqrt()).abs() < 0.02, "geometric mean {gm}");
    let (m, _) = mean_std(&limit);
    assert!(within_3_sigma(m, 0.0, r.joint_limit_std, n));
    assert!(std_matches(&limit, r.joint_limit_std));
    let (m, _) = mean_std(&grav);
    assert!(within_3_sigma(m, 0.0, r.gravity_std, n));
    assert!(std_matches(&grav, r.gravity_std));
}

pub fn timing_mean_matches_inverse_rate() {
    for (rate, want) in [(1250.0, 0.0088), (10_000.0, 0.0081)] {
        let mut rng = seeded(4, 4);
        let n = 1_000_000;
        let mut sum = 0.0;
        for _ in 0..n {
            let dt = sample_timestep(rate, &mut rng);
            assert!(dt >= 0.008);
            sum += dt;
        }
        let m = sum / n as f64;
        assert!(within_3_sigma(m, want, 1.0 / rate, n), "rate {rate}: {m}");
        assert!((m - want).abs() < 0.01 * want);
    }
}

pub fn action_noise_std_at_zero_action() {
    let cfg = only(|u| u.action_noise = true);
    let base = EnvParams::default();
    let mut rng = seeded(6, 6);
    let n = 100_000;
    let mut xs = Vec::with_capacity(n);
    for _ in 0..n {
        let er = EpisodeRandomization::sample(&base, &cfg, &mut rng);
        let mut a = [0.0; 3];
        apply_action_noise(&mut a, &er, &mut rng);
        xs.push(a[0]);
    }
    let want = (0.10f64.powi(2) + 0.03f64.powi(2)).sqrt();
    let (_, s) = mean_std(&xs);
    assert!((s - want).abs() < 0.02 * want, "std {s}");
    assert!(std_matches(&xs, want));
}

pub fn delay_flag_rate_is_half() {
    let cfg = only(|u| u.delay = true);
    let mut rng = seeded(8, 8);
    let n = 10_000;
    let mut delayed = 0;
    for _ in 0..n {
        let er = EpisodeRandomization::sample(&EnvParams::default(), &cfg, &mut rng);
        delayed += er.delayed[0] as usize;
    }
    let rate = delayed as f64 / n as f64;
    assert!((rate - 0.5).abs() < 0.015, "rate {rate}");
}

pub fn marker_freeze_entry_rate() {
    let cfg = only(|u| u.marker_dropout = true);
    let params = EnvParams::default();
    let mut rng = seeded(9, 9);
    let er = EpisodeRandomization::sample(&params, &cfg, &mut rng);
    let mut st = PerturbationState::new(3);
    // tips far apart and far from the object so occlusion never fires
    let tips = reorient_core::env::tip_positions(&[0.0; 3], &params);
    let sim_seconds = 100_000.0;
    let steps = (sim_seconds / NOMINAL_STEP_DURATION) as usize;
    for _ in 0..steps {
        let mut obs = PolicyObs {
            tips: tips.clone(),
            relative_target: Quat::IDENTITY,
            object_position: None,
        };
        marker_dropout(&mut obs, &tips, [0.0; 3], &er, &mut st, NOMINAL_STEP_DURATION, &mut rng);
    }
    let rate = st.freeze_entries as f64 / (3.0 * sim_seconds);
    assert!((rate - 0.2).abs() < 0.05 * 0.2, "rate {rate}");
}

pub fn force_decays_by_099_per_nominal_step() {
    let r = RandomizationRanges::default();
    let mut rng = seeded(11, 11);
    let f = random_force_step([1.0, -2.0, 0.5], 0.0, 0.1, &r, NOMINAL_STEP_DURATION, &mut rng);
    assert_eq!(f, [0.99, -1.98, 0.495]);
    let f2 = random_force_step([1.0, 0.0, 0.0], 0.0, 0.1, &r, 2.0 * NOMINAL_STEP_DURATION, &mut rng);
    assert!((f2[0] - 0.9801).abs() < 1e-15);
}

pub fn force_stationary_std_matches_impulse_decay_balance() {
    let r = RandomizationRanges::default();
    let (p, mass) = (0.05, 0.2);
    // x ← 0.99·x + kick with probability p: Var = p·(mass·1)² / (1 − 0.99²)
    let want = (p * mass * mass / (1.0 - 0.99f64.powi(2))).sqrt();
    let mut rng = seeded(12, 12);
    let mut xs = vec![];
    for _ in 0..4000 {
        let mut f = [0.0; 3];
        for _ in 0..800 {
            f = random_force_step(f, p, mass, &r, NOMINAL_STEP_DURATION, &mut rng);
        }
        xs.extend(f);
    }
    assert!(std_matches(&xs, want), "std {:?} vs {want}", mean_std(&xs));
}

pub fn force_probability_in_support() {
    let cfg = only(|u| u.random_forces = true);
    let mut rng = seeded(13, 13);
    let mut logs = vec![];
    for _ in 0..10_000 {
        let er = EpisodeRandomization::sample(&EnvParams::default(), &cfg, &mut rng);
        assert!((0.001..=0.1).contains(&er.force_probability));
        logs.push(er.force_probability.ln());
    }
    let (m, _) = mean_std(&logs);
    let (lo, hi) = (0.001f64.ln(), 0.1f64.ln());
    assert!(within_3_sigma(m, (lo + hi) / 2.0, (hi - lo) / 12f64.sqrt(), logs.len()));
}

pub fn backlash_params_centered_and_floored() {
    let mut rng = seeded(14, 14);
    let cal = BacklashParams { neg: 0.5, pos: 0.02 };
    let n = 10_000;
    let mut neg = vec![];
    for _ in 0..n {
        let b = sample_backlash_params(cal, 0.1, 0.01, &mut rng);
        assert!(b.pos >= 0.01 && b.neg >= 0.01);
        neg.push(b.neg);
    }
    let (m, _) = mean_std(&neg);
    assert!(within_3_sigma(m, 0.5, 0.1, n));
    let a = sample_backlash_params(cal, 0.1, 0.01, &mut seeded(1, 0));
    let b = sample_backlash_params(cal, 0.1, 0.01, &mut seeded(1, 0));
    assert_eq!(a, b);
}

pub fn backlash_forced_cases() {
    let d = BacklashParams { neg: 1.0, pos: 1.0 };
    assert_eq!(backlash(0.5, d, 1.0, 0.3), (0.5, 1.0));
    let (out, s) = backlash(1.0, d, 0.0, 0.08);
    assert_eq!(out, 0.0);
    assert!((s - 0.08).abs() < 1e-15);
    assert_eq!(backlash(0.0, d, 0.4, 0.08), (0.0, 0.4));
}

pub fn observation_noise_within_one_episode() {
    let cfg = RandomizationConfig {
        physics: false,
        observation_noise: true,
        unmodeled: UnmodeledEffects::all(false),
        ranges: RandomizationRanges::default(),
    };
    let mut rng = seeded(15, 15);
    let er = EpisodeRandomization::sample(&EnvParams::default(), &cfg, &mut rng);
    let clean = PolicyObs {
        tips: vec![[0.1, 0.0, 0.0]; 3],
        relative_target: Quat::IDENTITY,
        object_position: Some([0.0; 3]),
    };
    let n = 100_000;
    let (mut tip, mut pos) = (vec![], vec![]);
    for _ in 0..n {
        let mut o = clean.clone();
        apply_observation_noise(&mut o, &er, &mut rng);
        tip.push(o.tips[1][2]);
        pos.push(o.object_position.unwrap()[0]);
    }
    let (m, s) = mean_std(&tip);
    let offset = er.tip_marker_offset[1][2] + er.base_marker_offset[2] + er.tip_noise_corr[1][2];
    assert!(within_3_sigma(m, offset, 2e-3, n));
    assert!((s - 2e-3).abs() < 0.02 * 2e-3, "tip std {s}");
    let (m, s) = mean_std(&pos);
    assert!(within_3_sigma(m, er.object_pos_noise_corr[0], 1e-3, n));
    assert!((s - 1e-3).abs() < 0.02 * 1e-3, "position std {s}");
}

pub fn observation_noise_across_episodes() {
    let cfg = RandomizationConfig {
        physics: false,
        observation_noise: true,
        unmodeled: UnmodeledEffects::all(false),
        ranges: RandomizationRanges::default(),
    };
    let mut rng = seeded(16, 16);
    let clean = PolicyObs {
        tips: vec![[0.0; 3]; 3],
        relative_target: Quat::IDENTITY,
        object_position: Some([0.0; 3]),
    };
    let n = 50_000;
    let (mut tip, mut pos) = (vec![], vec![]);
    for _ in 0..n {
        let er = EpisodeRandomization::sample(&EnvParams::default(), &cfg, &mut rng);
        let mut o = clean.clone();
        apply_observation_noise(&mut o, &er, &mut rng);
        tip.push(o.tips[0][0]);
        pos.push(o.object_position.unwrap()[1]);
    }
    // tip: marker 3 mm, base marker 1 mm, correlated 1 mm, uncorrelated 2 mm
    assert!(std_matches(&tip, (9.0f64 + 1.0 + 1.0 + 4.0).sqrt() * 1e-3));
    assert!(std_matches(&pos, (25.0f64 + 1.0).sqrt() * 1e-3));
}

pub fn orientation_noise_angle_std() {
    let mut rng = seeded(17, 17);
    let xs: Vec<f64> = (0..100_000)
        .map(|_| {
            let q = small_rotation(&mut rng, 0.1);
            2.0 * q.w.clamp(-1.0, 1.0).acos() * q.w.signum()
        })
        .collect();
    // the signed angle is folded to non-negative by the quaternion; compare the rms
    let rms = (xs.iter().map(|x| x * x).sum::<f64>() / xs.len() as f64).sqrt();
    assert!((rms - 0.1).abs() < 3.0 * 0.1 * (2.0 / xs.len() as f64).sqrt(), "rms {rms}");
}
