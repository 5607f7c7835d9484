use navlab::dynamics::*;
use proptest::prelude::*;

/// Unit step of the critically damped channel, tau = response time.
fn critical_step(t: f64, tau: f64) -> f64 {
    let x = t / tau;
    1.0 - (1.0 + x) * (-x).exp()
}

fn underdamped_step(t: f64, tau: f64, gamma: f64) -> f64 {
    let wn = 1.0 / tau;
    let wd = wn * (1.0 - gamma * gamma).sqrt();
    let e = (-gamma * wn * t).exp();
    1.0 - e * ((wd * t).cos() + gamma / (1.0 - gamma * gamma).sqrt() * (wd * t).sin())
}

fn max_err(hz: u32, gamma: f64, action: usize, oracle: impl Fn(f64) -> f64) -> f64 {
    let p = DynParams { substep_hz: hz, ..DynParams::uniform(0.3, gamma) };
    let cmd = Command::from_index(action, &p).unwrap();
    let r = step_response(&cmd, &p, Mode::SecondOrder, 5.0).unwrap();
    r.t.iter().zip(&r.v).map(|(t, v)| (v - cmd.a_v * oracle(*t)).abs()).fold(0.0, f64::max)
}

#[test]
fn step_response_converges_to_closed_form() {
    let e = max_err(1200, 1.0, 24, |t| critical_step(t, 0.3));
    assert!(e <= 1e-3, "{e}");
    // overshoot stays below the saturation limit at two thirds of v_max
    let e = max_err(1200, 0.5, 17, |t| underdamped_step(t, 0.3, 0.5));
    assert!(e <= 1e-3, "{e}");
}

#[test]
fn halving_dt_halves_the_error() {
    let mut prev = max_err(30, 1.0, 24, |t| critical_step(t, 0.3));
    for hz in [60, 120, 240] {
        let e = max_err(hz, 1.0, 24, |t| critical_step(t, 0.3));
        let ratio = prev / e;
        assert!((1.6..=2.4).contains(&ratio), "{hz} Hz ratio {ratio}");
        prev = e;
    }
}

#[test]
fn step_response_settles_on_the_command() {
    let p = DynParams::default();
    for idx in [0, 10, 24, 27] {
        let cmd = Command::from_index(idx, &p).unwrap();
        let r = step_response(&cmd, &p, Mode::SecondOrder, 10.0).unwrap();
        assert!((r.v.last().unwrap() - cmd.a_v).abs() < 1e-6);
        assert!((r.omega.last().unwrap() - cmd.a_omega).abs() < 1e-6);
        assert_eq!(r.t.len(), 301);
    }
}

#[test]
fn action_grids_for_several_limits() {
    for (vm, wm) in [(1.0, 1.0), (0.5, 2.0), (1.5, 0.3)] {
        let p = DynParams { v_max: vm, omega_max: wm, ..DynParams::default() };
        let space = action_space(&p);
        assert_eq!(space.len(), 28);
        let mut seen = std::collections::HashSet::new();
        for (i, c) in space.iter().enumerate() {
            assert_eq!(c.index, i);
            let iv = (c.a_v / vm * 3.0).round();
            let iw = (c.a_omega / wm * 3.0).round() + 3.0;
            assert!((c.a_v - vm * iv / 3.0).abs() < 1e-12);
            assert!((c.a_omega - wm * (iw - 3.0) / 3.0).abs() < 1e-12);
            assert_eq!(iv as usize * 7 + iw as usize, i);
            assert!(seen.insert((iv as i64, iw as i64)));
        }
        assert_eq!(seen.len(), 28);
    }
    assert!(Command::from_index(STOP_INDEX, &DynParams::default()).unwrap().is_stop());
    assert!(Command::from_index(29, &DynParams::default()).is_err());
}

#[test]
fn stop_brings_the_robot_to_rest() {
    let p = DynParams::default();
    let mut s = RobotState { v: 0.8, omega: -0.5, ..RobotState::default() };
    for _ in 0..30 {
        s = integrate_command(&s, &Command::stop(), &p, Mode::SecondOrder).unwrap();
    }
    assert!(s.v.abs() < 1e-6 && s.omega.abs() < 1e-6);
}

#[test]
fn instant_mode_is_constant_velocity() {
    let p = DynParams::default();
    let cmd = Command::from_index(24, &p).unwrap();
    let s = integrate_command(&RobotState::default(), &cmd, &p, Mode::Instant).unwrap();
    assert!((s.x - 1.0 / 3.0).abs() < 1e-12);
    assert_eq!(s.y, 0.0);
}

#[test]
fn non_finite_state_is_rejected() {
    let p = DynParams::default();
    let s = RobotState { x: f64::NAN, ..RobotState::default() };
    assert!(integrate_command(&s, &Command::stop(), &p, Mode::SecondOrder).is_err());
    assert!(DynParams { tau_lin_acc: 0.0, ..p }.validate().is_err());
    assert!(DynParams { substep_hz: 31, ..p }.validate().is_err());
}

fn params() -> impl Strategy<Value = DynParams> {
    (0.05f64..3.0, 0.05f64..2.0, 0.2f64..3.0, 0.2f64..3.0).prop_map(|(tau, gamma, vm, wm)| DynParams {
        v_max: vm,
        omega_max: wm,
        ..DynParams::uniform(tau, gamma)
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn zero_input_keeps_a_resting_robot_still(x in -5.0f64..5.0, y in -5.0f64..5.0, th in -3.0f64..3.0, p in params()) {
        let s = RobotState::at_rest(x, y, th);
        let n = integrate_command(&s, &Command::from_index(3, &p).unwrap(), &p, Mode::SecondOrder).unwrap();
        prop_assert_eq!(n, s);
    }

    #[test]
    fn velocities_stay_saturated(p in params(), actions in prop::collection::vec(0usize..29, 1..30)) {
        let mut s = RobotState::default();
        for a in actions {
            let cmd = Command::from_index(a, &p).unwrap();
            let (_, _) = integrate_observed(&s, &cmd, &p, Mode::SecondOrder, |sub| {
                assert!(sub.v.abs() <= p.v_max + 1e-12 && sub.omega.abs() <= p.omega_max + 1e-12);
                true
            }).unwrap();
            s = integrate_command(&s, &cmd, &p, Mode::SecondOrder).unwrap();
            prop_assert!(s.is_finite());
        }
    }

    #[test]
    fn stiff_second_order_matches_instant(actions in prop::collection::vec(0usize..28, 15)) {
        let p = DynParams::uniform(1e-3, 1.0);
        let cmds: Vec<_> = actions.iter().map(|&a| Command::from_index(a, &p).unwrap()).collect();
        let a = rollout_actions(&RobotState::default(), &cmds, &p, Mode::SecondOrder).unwrap();
        let b = rollout_actions(&RobotState::default(), &cmds, &p, Mode::Instant).unwrap();
        let (ea, eb) = (a.last().unwrap(), b.last().unwrap());
        prop_assert!((ea.x - eb.x).hypot(ea.y - eb.y) <= 0.01);
    }

    #[test]
    fn index_map_is_bijective(vm in 0.1f64..5.0, wm in 0.1f64..5.0) {
        let p = DynParams { v_max: vm, omega_max: wm, ..DynParams::default() };
        for (i, c) in action_space(&p).iter().enumerate() {
            let back = Command::from_index(c.index, &p).unwrap();
            prop_assert_eq!(back.index, i);
            prop_assert_eq!(back.a_v, c.a_v);
        }
    }
}
