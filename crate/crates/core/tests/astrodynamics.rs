mod common;

use std::f64::consts::{PI, TAU};

use common::*;
use constlab::astrodynamics::{elements_to_cartesian, illumination, is_eclipsed, orbital_period, solve_kepler};
use constlab::sim::{SimConfig, Simulation};
use constlab::{ActorId, CentralBody, EventKind, KeplerianElements, SunModel, Vec3};
use proptest::prelude::*;

fn body() -> CentralBody {
    CentralBody::new(MU, R_EARTH).unwrap()
}

fn unit(v: [f64; 3]) -> Vec3 {
    Vec3::from_array(v).normalized().unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn kepler_matches_bisection(m in 0.0f64..TAU, e in 0.0f64..0.99) {
        let got = solve_kepler(m, e).unwrap();
        let want = kepler_bisect(m, e);
        prop_assert!((got - want).abs() < 1e-10, "M={m} e={e}: {got} vs {want}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn illumination_is_scale_consistent(
        r in prop::array::uniform3(-2.0e7f64..2.0e7),
        s in prop::array::uniform3(-1.0f64..1.0),
        k in 1e-3f64..1e3,
    ) {
        prop_assume!(Vec3::from_array(s).norm() > 1e-3);
        let sun = unit(s);
        let r = Vec3::from_array(r);
        let b = body();
        let scaled = CentralBody::new(MU, R_EARTH * k).unwrap();
        // skip points sitting on the shadow boundary where rounding decides
        let along = r.dot(sun);
        let perp = (r - sun * along).norm();
        prop_assume!((perp - R_EARTH).abs() > 1e-6 * R_EARTH);
        let nu = illumination(r, sun, &b);
        prop_assert!(nu == 0.0 || nu == 1.0);
        prop_assert_eq!(nu, illumination(r * k, sun, &scaled));
        prop_assert_eq!(nu == 0.0, along < 0.0 && perp < R_EARTH);
    }

    #[test]
    fn one_period_returns_to_start(
        a in 6.7e6f64..4.5e7,
        e in 0.0f64..0.8,
        i in 0.0f64..PI,
        raan in 0.0f64..TAU,
        argp in 0.0f64..TAU,
        m0 in 0.0f64..TAU,
    ) {
        let el = KeplerianElements { a, e, i, raan, argp, m0 };
        prop_assume!(a * (1.0 - e) > R_EARTH);
        let b = body();
        let p = orbital_period(&el, &b);
        let s0 = elements_to_cartesian(&el, &b, 0.0).unwrap();
        let s1 = elements_to_cartesian(&el, &b, p).unwrap();
        prop_assert!((s1.r - s0.r).norm() < 1e-6, "drift {} m", (s1.r - s0.r).norm());
        // energy and angular momentum are constants of the motion
        let h0 = s0.angular_momentum();
        let t = 0.37 * p;
        let st = elements_to_cartesian(&el, &b, t).unwrap();
        prop_assert!((st.specific_energy(&b) - s0.specific_energy(&b)).abs() <= 1e-9 * s0.specific_energy(&b).abs());
        prop_assert!((st.angular_momentum() - h0).norm() <= 1e-9 * h0.norm());
    }
}

#[test]
fn seven_thousand_km_period() {
    let el = circular(7.0e6, 51.6, 0.0);
    let p = orbital_period(&el, &body());
    assert!((p - 5828.5).abs() < 0.1, "period {p}");
    let s0 = elements_to_cartesian(&el, &body(), 0.0).unwrap();
    let s1 = elements_to_cartesian(&el, &body(), p).unwrap();
    assert!((s1.r - s0.r).norm() < 1e-6);
}

#[test]
fn circular_state_matches_closed_form() {
    let el = circular(7.2e6, 63.0, 30.0);
    for k in 0..50 {
        let t = k as f64 * 137.0;
        let r = elements_to_cartesian(&el, &body(), t).unwrap().r;
        let o = circular_position(7.2e6, 63f64.to_radians(), 30f64.to_radians(), t);
        let d = ((r.x - o.x).powi(2) + (r.y - o.y).powi(2) + (r.z - o.z).powi(2)).sqrt();
        assert!(d < 1e-6, "t={t}: {d} m");
    }
}

#[test]
fn eclipse_events_match_dense_scan() {
    let a = 6.9e6;
    let (i, m0) = (40f64.to_radians(), 0.0);
    let sun_dir = unit([0.8, 0.3, 0.2]);
    let mut cfg = SimConfig::new(4, vec![sat(1, circular(a, 40.0, 0.0))]);
    cfg.body = body();
    cfg.sun = SunModel::fixed(sun_dir, 1361.0).unwrap();
    let horizon = 20_000.0;
    let mut sim = Simulation::new(cfg).unwrap();
    sim.advance_to(horizon).unwrap();

    let b = body();
    let dark = dense_scan(0.0, horizon, 0.1, |t| {
        let p = circular_position(a, i, m0, t);
        is_eclipsed(Vec3::new(p.x, p.y, p.z), sun_dir, &b)
    });
    let enters: Vec<f64> = sim
        .log()
        .iter()
        .filter(|r| r.kind == EventKind::EclipseEnter && r.actor_id == ActorId(1))
        .map(|r| r.time.seconds())
        .collect();
    let exits: Vec<f64> = sim
        .log()
        .iter()
        .filter(|r| r.kind == EventKind::EclipseExit && r.actor_id == ActorId(1))
        .map(|r| r.time.seconds())
        .collect();
    assert!(!dark.is_empty());
    assert_eq!(enters.len(), dark.len());
    // illumination is sampled per integration step, so edges land within one step
    for (e, (o, _)) in enters.iter().zip(&dark) {
        assert!((e - o).abs() <= 1.0 + 0.1, "enter {e} vs scan {o}");
    }
    for (x, (_, c)) in exits.iter().zip(&dark) {
        assert!((x - c).abs() <= 1.0 + 0.1, "exit {x} vs scan {c}");
    }
    let mut exits = exits;
    if exits.len() < enters.len() {
        exits.push(horizon);
    }
    let frac_sim: f64 = enters.iter().zip(&exits).map(|(e, x)| x - e).sum::<f64>() / horizon;
    let frac_scan: f64 = dark.iter().map(|(o, c)| c - o + 0.1).sum::<f64>() / horizon;
    assert!((frac_sim - frac_scan).abs() < 1e-3, "{frac_sim} vs {frac_scan}");
}

#[test]
fn rejects_bad_inputs() {
    assert!(solve_kepler(1.0, 1.0).is_err());
    assert!(solve_kepler(1.0, -0.1).is_err());
    assert!(CentralBody::new(-1.0, R_EARTH).is_err());
    let el = KeplerianElements {
        a: -7.0e6,
        ..circular(7.0e6, 0.0, 0.0)
    };
    assert!(el.validate(&body()).is_err());
    assert!(SunModel::fixed(Vec3::zero(), 1361.0).is_err());
}
