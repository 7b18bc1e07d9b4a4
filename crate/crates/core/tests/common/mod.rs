//! Builders and independent oracles shared by the integration suites.
#![allow(dead_code)]

use std::path::PathBuf;

use constlab::actors::{Actor, ActorKind, Spacecraft};
use constlab::links::LinkSpec;
use constlab::resources::RadiationModel;
use constlab::{ActorId, BatteryState, GroundStation, KeplerianElements, SolarPanel, ThermalNode};
use nalgebra::{DMatrix, DVector, Vector3};

pub const MU: f64 = 3.986_004_418e14;
pub const R_EARTH: f64 = 6.371e6;

pub fn scenario_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scenarios").join(name)
}

pub fn circular(a: f64, i_deg: f64, m0_deg: f64) -> KeplerianElements {
    KeplerianElements {
        a,
        e: 0.0,
        i: i_deg.to_radians(),
        raan: 0.0,
        argp: 0.0,
        m0: m0_deg.to_radians(),
    }
}

pub fn craft_spec(orbit: KeplerianElements) -> Spacecraft {
    Spacecraft {
        orbit,
        battery: BatteryState::new(1.0e5, 8.0e4, 0.2).unwrap(),
        panel: SolarPanel::new(0.1, 0.3).unwrap(),
        thermal: ThermalNode {
            heat_capacity: 5.0e3,
            temperature: 290.0,
            rad_coeff: 2.0e-9,
            absorbed_solar: 10.0,
            t_min: 150.0,
            t_max: 400.0,
        },
        radiation: RadiationModel::default(),
        idle_load: 1.0,
    }
}

pub fn sat(id: u32, orbit: KeplerianElements) -> Actor {
    sat_with(id, craft_spec(orbit), vec![LinkSpec::hypso1_sband()])
}

pub fn sat_with(id: u32, spec: Spacecraft, links: Vec<LinkSpec>) -> Actor {
    Actor {
        id: ActorId(id),
        name: format!("sat-{id}"),
        kind: ActorKind::Spacecraft(Box::new(spec)),
        links,
    }
}

pub fn station(id: u32, lat_deg: f64, lon_deg: f64, min_el_deg: f64) -> Actor {
    Actor {
        id: ActorId(id),
        name: format!("gs-{id}"),
        kind: ActorKind::GroundStation(
            GroundStation::new(lat_deg.to_radians(), lon_deg.to_radians(), 0.0, min_el_deg.to_radians()).unwrap(),
        ),
        links: vec![LinkSpec::hypso1_sband()],
    }
}

/// Classic RK4 on the two-body ODE with a fixed step.
pub fn rk4_two_body(r0: [f64; 3], v0: [f64; 3], mu: f64, h: f64, t_end: f64) -> (Vector3<f64>, Vector3<f64>) {
    let acc = |r: &Vector3<f64>| -r * (mu / r.norm().powi(3));
    let mut r = Vector3::from(r0);
    let mut v = Vector3::from(v0);
    let n = (t_end / h).round() as u64;
    let h = t_end / n as f64;
    for _ in 0..n {
        let k1r = v;
        let k1v = acc(&r);
        let k2r = v + k1v * (h / 2.0);
        let k2v = acc(&(r + k1r * (h / 2.0)));
        let k3r = v + k2v * (h / 2.0);
        let k3v = acc(&(r + k2r * (h / 2.0)));
        let k4r = v + k3v * h;
        let k4v = acc(&(r + k3r * h));
        r += (k1r + k2r * 2.0 + k3r * 2.0 + k4r) * (h / 6.0);
        v += (k1v + k2v * 2.0 + k3v * 2.0 + k4v) * (h / 6.0);
    }
    (r, v)
}

/// Plain bisection on `E - e sin E - M` over `[M - e, M + e]`.
pub fn kepler_bisect(m: f64, e: f64) -> f64 {
    let f = |x: f64| x - e * x.sin() - m;
    let (mut lo, mut hi) = (m - e, m + e);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if f(mid) > 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    0.5 * (lo + hi)
}

/// IEEE binary16 encoding by integer manipulation of the f64 bit pattern,
/// round-to-nearest-even, saturating at ±65504.
pub fn fp16_oracle(x: f64) -> u16 {
    let bits = x.to_bits();
    let sign = ((bits >> 63) as u16) << 15;
    let exp = ((bits >> 52) & 0x7ff) as i64;
    let frac = bits & ((1u64 << 52) - 1);
    if exp == 0x7ff {
        panic!("oracle takes finite input only");
    }
    if exp == 0 {
        // f64 subnormals are far below the fp16 range
        return sign;
    }
    let e = exp - 1023;
    let mant = frac | (1u64 << 52);
    // value = mant * 2^(e - 52); fp16 normal quantum is 2^(e - 10) for e >= -14,
    // subnormal quantum is 2^-24
    let q_exp = if e >= -14 { e - 10 } else { -24 };
    let shift = q_exp - (e - 52);
    let units = if shift >= 64 {
        0
    } else {
        let shift = shift as u32;
        let whole = mant >> shift;
        let rem = mant & ((1u64 << shift) - 1);
        let half = 1u64 << (shift - 1);
        if rem > half || (rem == half && whole & 1 == 1) {
            whole + 1
        } else {
            whole
        }
    };
    // units counts quanta of 2^q_exp
    let out = if e >= -14 {
        // units in [2^10, 2^11]; carry may bump the exponent
        let (units, e) = if units == 1 << 11 { (1u64 << 10, e + 1) } else { (units, e) };
        if e > 15 {
            return sign | 0x7bff;
        }
        (((e + 15) as u64) << 10) | (units - (1 << 10))
    } else {
        // subnormal, possibly rounding up into the smallest normal
        units
    };
    sign | out as u16
}

pub fn fp16_decode_oracle(h: u16) -> f64 {
    let sign = if h & 0x8000 != 0 { -1.0 } else { 1.0 };
    let e = ((h >> 10) & 0x1f) as i32;
    let m = (h & 0x3ff) as f64;
    match e {
        0 => sign * m * 2f64.powi(-24),
        31 => panic!("no inf/nan expected"),
        _ => sign * (1.0 + m / 1024.0) * 2f64.powi(e - 15),
    }
}

/// Dense scan of a boolean predicate; returns closed runs of `true` samples.
pub fn dense_scan(t0: f64, t1: f64, dt: f64, visible: impl Fn(f64) -> bool) -> Vec<(f64, f64)> {
    let n = ((t1 - t0) / dt).round() as u64;
    let mut out = Vec::new();
    let mut open: Option<f64> = None;
    let mut last = t0;
    for k in 0..=n {
        let t = t0 + k as f64 * dt;
        let v = visible(t);
        match (v, open) {
            (true, None) => open = Some(t),
            (false, Some(o)) => {
                out.push((o, last));
                open = None;
            }
            _ => {}
        }
        last = t;
    }
    if let Some(o) = open {
        out.push((o, last));
    }
    out
}

/// Position on a circular orbit with RAAN = argp = 0.
pub fn circular_position(a: f64, i: f64, m0: f64, t: f64) -> Vector3<f64> {
    let u = m0 + (MU / a.powi(3)).sqrt() * t;
    Vector3::new(a * u.cos(), a * u.sin() * i.cos(), a * u.sin() * i.sin())
}

/// Elevation of `r` seen from a station on a sphere spinning about +z.
pub fn elevation_oracle(r: Vector3<f64>, lat: f64, lon: f64, rate: f64, t: f64) -> f64 {
    let l = lon + rate * t;
    let up = Vector3::new(lat.cos() * l.cos(), lat.cos() * l.sin(), lat.sin());
    let d = r - up * R_EARTH;
    (d.dot(&up) / d.norm()).asin()
}

/// Ridge normal-equations solution `(XᵀX/n + l2·I)⁻¹ Xᵀy/n`.
pub fn normal_equations(x: &[f64], y: &[f64], dim: usize, l2: f64) -> Vec<f64> {
    let n = y.len();
    let xm = DMatrix::from_row_slice(n, dim, x);
    let yv = DVector::from_column_slice(y);
    let a = xm.transpose() * &xm / n as f64 + DMatrix::identity(dim, dim) * l2;
    let b = xm.transpose() * yv / n as f64;
    a.lu().solve(&b).expect("well-posed").as_slice().to_vec()
}

/// Flattens a library dataset into row-major X and y.
pub fn flatten(ds: &constlab::ClientDataset) -> (Vec<f64>, Vec<f64>) {
    let mut x = Vec::with_capacity(ds.len() * ds.dim());
    let mut y = Vec::with_capacity(ds.len());
    for i in 0..ds.len() {
        x.extend_from_slice(ds.row(i));
        y.push(ds.target(i));
    }
    (x, y)
}

pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let den: f64 = b.iter().map(|y| y * y).sum::<f64>().sqrt();
    num / den
}

/// Kappa recomputed from proportions in plain floating point.
pub fn kappa_oracle(m: &[Vec<u64>]) -> f64 {
    let k = m.len();
    let n: f64 = m.iter().flatten().map(|&c| c as f64).sum();
    let po: f64 = (0..k).map(|i| m[i][i] as f64).sum::<f64>() / n;
    let pe: f64 = (0..k)
        .map(|i| {
            let row: f64 = m[i].iter().map(|&c| c as f64).sum();
            let col: f64 = m.iter().map(|r| r[i] as f64).sum();
            row * col
        })
        .sum::<f64>()
        / (n * n);
    (po - pe) / (1.0 - pe)
}
