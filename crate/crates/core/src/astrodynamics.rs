//! Two-body Keplerian propagation and the cylindrical-umbra illumination factor.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::{wrap_pi, Scalar};
use crate::vector::Vec3;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AstroError {
    #[error("eccentricity {0} outside [0, 1)")]
    Eccentricity(f64),
    #[error("mean anomaly is not finite")]
    NonFiniteAnomaly,
    #[error("semi-major axis {a} m does not clear the body radius {radius} m")]
    SemiMajorAxis { a: f64, radius: f64 },
    #[error("non-finite angle in orbital elements")]
    NonFiniteAngle,
    #[error("invalid central body: mu and radius must be positive")]
    Body,
    #[error("sun direction must be a non-zero finite vector")]
    SunDirection,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CentralBody<T> {
    /// Gravitational parameter, m³/s².
    pub mu: T,
    /// Mean radius, m.
    pub radius: T,
}

impl<T: Scalar> CentralBody<T> {
    pub fn new(mu: T, radius: T) -> Result<Self, AstroError> {
        if mu > T::zero() && radius > T::zero() && mu.is_finite() && radius.is_finite() {
            Ok(Self { mu, radius })
        } else {
            Err(AstroError::Body)
        }
    }

    pub fn earth() -> Self {
        Self {
            mu: T::lit(3.986004418e14),
            radius: T::lit(6.371e6),
        }
    }
}

/// Classical elements of an elliptic orbit. Angles in radians.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct KeplerianElements<T> {
    pub a: T,
    pub e: T,
    pub i: T,
    pub raan: T,
    pub argp: T,
    /// Mean anomaly at scenario start.
    pub m0: T,
}

impl<T: Scalar> KeplerianElements<T> {
    pub fn validate(&self, body: &CentralBody<T>) -> Result<(), AstroError> {
        if !(self.e >= T::zero() && self.e < T::one()) {
            return Err(AstroError::Eccentricity(self.e.as_f64()));
        }
        if !(self.a > body.radius) || !self.a.is_finite() {
            return Err(AstroError::SemiMajorAxis {
                a: self.a.as_f64(),
                radius: body.radius.as_f64(),
            });
        }
        if ![self.i, self.raan, self.argp, self.m0].iter().all(|x| x.is_finite()) {
            return Err(AstroError::NonFiniteAngle);
        }
        Ok(())
    }

    pub fn mean_motion(&self, body: &CentralBody<T>) -> T {
        (body.mu / (self.a * self.a * self.a)).sqrt()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CartesianState<T> {
    pub r: Vec3<T>,
    pub v: Vec3<T>,
}

impl<T: Scalar> CartesianState<T> {
    pub fn specific_energy(&self, body: &CentralBody<T>) -> T {
        self.v.norm_squared() / T::lit(2.0) - body.mu / self.r.norm()
    }

    pub fn angular_momentum(&self) -> Vec3<T> {
        self.r.cross(self.v)
    }
}

/// Sun at infinite distance, its direction rotating uniformly about `axis`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SunModel<T> {
    s0: Vec3<T>,
    axis: Vec3<T>,
    /// Angular rate of the direction, rad/s.
    pub omega: T,
    /// Solar irradiance, W/m².
    pub flux: T,
}

impl<T: Scalar> SunModel<T> {
    pub fn new(s0: Vec3<T>, axis: Vec3<T>, omega: T, flux: T) -> Result<Self, AstroError> {
        let s0 = s0.normalized().ok_or(AstroError::SunDirection)?;
        let axis = axis.normalized().ok_or(AstroError::SunDirection)?;
        if !omega.is_finite() || !flux.is_finite() {
            return Err(AstroError::SunDirection);
        }
        Ok(Self {
            s0,
            axis,
            omega,
            flux,
        })
    }

    /// Fixed Sun along `s0`.
    pub fn fixed(s0: Vec3<T>, flux: T) -> Result<Self, AstroError> {
        Self::new(s0, Vec3::new(T::zero(), T::zero(), T::one()), T::zero(), flux)
    }

    /// Unit direction to the Sun at time `t` seconds.
    pub fn direction(&self, t: T) -> Vec3<T> {
        if self.omega == T::zero() {
            return self.s0;
        }
        let d = self.s0.rotate_about(self.axis, self.omega * t);
        // re-normalise to keep |s| = 1 exactly up to rounding
        d.normalized().unwrap_or(self.s0)
    }
}

impl Default for SunModel<f64> {
    fn default() -> Self {
        Self {
            s0: Vec3::new(1.0, 0.0, 0.0),
            axis: Vec3::new(0.0, 0.0, 1.0),
            omega: std::f64::consts::TAU / (365.25 * 86_400.0),
            flux: 1361.0,
        }
    }
}

const KEPLER_MAX_NEWTON: usize = 50;

/// Solves `M = E - e sin E` for the eccentric anomaly.
///
/// The returned `E` lies within ±π of `M`. Newton iteration is safeguarded by
/// the bracket `[M-e, M+e]` of the wrapped anomaly and falls back to bisection.
pub fn solve_kepler<T: Scalar>(mean_anomaly: T, e: T) -> Result<T, AstroError> {
    if !(e >= T::zero() && e < T::one()) {
        return Err(AstroError::Eccentricity(e.as_f64()));
    }
    if !mean_anomaly.is_finite() {
        return Err(AstroError::NonFiniteAnomaly);
    }
    if e == T::zero() {
        return Ok(mean_anomaly);
    }
    let m = wrap_pi(mean_anomaly);
    let offset = mean_anomaly - m;
    let f = |x: T| x - e * x.sin() - m;

    let (mut lo, mut hi) = (m - e, m + e);
    let mut x = if e > T::lit(0.8) {
        if m >= T::zero() {
            T::PI().min(hi)
        } else {
            (-T::PI()).max(lo)
        }
    } else {
        m + e * m.sin()
    };
    let tol = T::epsilon() * T::lit(4.0);
    let mut converged = false;
    for _ in 0..KEPLER_MAX_NEWTON {
        let fx = f(x);
        if fx == T::zero() {
            converged = true;
            break;
        }
        if fx > T::zero() {
            hi = x;
        } else {
            lo = x;
        }
        let step = fx / (T::one() - e * x.cos());
        let mut next = x - step;
        if !(next > lo && next < hi) {
            next = (lo + hi) / T::lit(2.0);
        }
        if (next - x).abs() <= tol * (T::one() + x.abs()) {
            x = next;
            converged = true;
            break;
        }
        x = next;
    }
    if !converged {
        log::warn!("kepler newton stalled at M={m}, e={e}; bisecting");
        while hi - lo > tol * (T::one() + m.abs()) {
            let mid = (lo + hi) / T::lit(2.0);
            if mid <= lo || mid >= hi {
                break;
            }
            if f(mid) > T::zero() {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        x = (lo + hi) / T::lit(2.0);
    }
    Ok(x + offset)
}

/// Orbital period `2π√(a³/μ)`.
pub fn orbital_period<T: Scalar>(el: &KeplerianElements<T>, body: &CentralBody<T>) -> T {
    T::TAU() / el.mean_motion(body)
}

/// Inertial position and velocity at `t` seconds after scenario start.
pub fn elements_to_cartesian<T: Scalar>(
    el: &KeplerianElements<T>,
    body: &CentralBody<T>,
    t: T,
) -> Result<CartesianState<T>, AstroError> {
    el.validate(body)?;
    let mean = el.m0 + el.mean_motion(body) * t;
    let ecc = solve_kepler(mean, el.e)?;
    let (sin_e, cos_e) = ecc.sin_cos();
    let root = (T::one() - el.e * el.e).sqrt();

    // perifocal frame
    let x = el.a * (cos_e - el.e);
    let y = el.a * root * sin_e;
    let r_mag = el.a * (T::one() - el.e * cos_e);
    let k = (body.mu * el.a).sqrt() / r_mag;
    let vx = -k * sin_e;
    let vy = k * root * cos_e;

    let (so, co) = el.raan.sin_cos();
    let (sw, cw) = el.argp.sin_cos();
    let (si, ci) = el.i.sin_cos();
    let p = Vec3::new(co * cw - so * sw * ci, so * cw + co * sw * ci, sw * si);
    let q = Vec3::new(-co * sw - so * cw * ci, -so * sw + co * cw * ci, cw * si);

    Ok(CartesianState {
        r: p * x + q * y,
        v: p * vx + q * vy,
    })
}

/// Eclipse factor: `0` inside the cylindrical umbra behind the body, `1` otherwise.
///
/// A perpendicular distance exactly equal to the body radius counts as lit.
pub fn illumination<T: Scalar>(r: Vec3<T>, sun_dir: Vec3<T>, body: &CentralBody<T>) -> T {
    if is_eclipsed(r, sun_dir, body) {
        T::zero()
    } else {
        T::one()
    }
}

pub fn is_eclipsed<T: Scalar>(r: Vec3<T>, sun_dir: Vec3<T>, body: &CentralBody<T>) -> bool {
    let along = r.dot(sun_dir);
    if along >= T::zero() {
        return false;
    }
    let perp = r - sun_dir * along;
    perp.norm() < body.radius
}

/// Fraction of a circular orbit spent in the cylindrical umbra when the Sun
/// lies in the orbital plane: `asin(R/a)/π`.
pub fn in_plane_shadow_fraction<T: Scalar>(a: T, body: &CentralBody<T>) -> T {
    (body.radius / a).asin() / T::PI()
}
