//! Visibility geometry, window enumeration and bandwidth-limited transfers.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::astrodynamics::CentralBody;
use crate::kernel::ActorId;
use crate::scalar::Scalar;
use crate::vector::Vec3;

/// Sidereal rotation rate of the Earth, rad/s.
pub const EARTH_ROTATION_RATE: f64 = 7.292_115_0e-5;

/// Default elevation mask, degrees.
pub const DEFAULT_MIN_ELEVATION_DEG: f64 = 10.0;

/// Default coarse sampling step for window search, seconds.
pub const DEFAULT_COARSE_STEP: f64 = 10.0;

/// Edge refinement tolerance, seconds.
pub const EDGE_TOLERANCE: f64 = 1e-3;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LinkError {
    #[error("latitude {0} rad outside [-pi/2, pi/2]")]
    Latitude(f64),
    #[error("minimum elevation {0} rad outside [0, pi/2)")]
    MinElevation(f64),
    #[error("bitrate must be positive, got {0}")]
    Bitrate(f64),
    #[error("unknown link preset {0:?}")]
    UnknownPreset(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroundStation<T> {
    pub lat: T,
    pub lon: T,
    pub alt: T,
    pub min_elevation: T,
}

impl<T: Scalar> GroundStation<T> {
    pub fn new(lat: T, lon: T, alt: T, min_elevation: T) -> Result<Self, LinkError> {
        if !(lat.abs() <= T::FRAC_PI_2()) {
            return Err(LinkError::Latitude(lat.as_f64()));
        }
        if !(min_elevation >= T::zero() && min_elevation < T::FRAC_PI_2()) {
            return Err(LinkError::MinElevation(min_elevation.as_f64()));
        }
        Ok(Self {
            lat,
            lon,
            alt,
            min_elevation,
        })
    }

    /// Inertial position at `t`, the body rotating about +z at `rotation_rate`.
    pub fn position(&self, body: &CentralBody<T>, rotation_rate: T, t: T) -> Vec3<T> {
        self.up(rotation_rate, t) * (body.radius + self.alt)
    }

    /// Local vertical (unit) at `t` in the inertial frame.
    pub fn up(&self, rotation_rate: T, t: T) -> Vec3<T> {
        let lon = self.lon + rotation_rate * t;
        let (slat, clat) = self.lat.sin_cos();
        let (slon, clon) = lon.sin_cos();
        Vec3::new(clat * clon, clat * slon, slat)
    }
}

/// Elevation of `r_sat` above the local horizon of `gs` at `t`.
pub fn elevation<T: Scalar>(
    r_sat: Vec3<T>,
    gs: &GroundStation<T>,
    body: &CentralBody<T>,
    rotation_rate: T,
    t: T,
) -> T {
    let up = gs.up(rotation_rate, t);
    let d = r_sat - up * (body.radius + gs.alt);
    let n = d.norm();
    if n == T::zero() {
        return T::FRAC_PI_2();
    }
    let s = (d.dot(up) / n).max(-T::one()).min(T::one());
    s.asin()
}

/// Line of sight between two spacecraft, clear of the body by `margin` metres.
pub fn isl_visible<T: Scalar>(r1: Vec3<T>, r2: Vec3<T>, body: &CentralBody<T>, margin: T) -> bool {
    let d = r2 - r1;
    let dd = d.norm_squared();
    let closest = if dd == T::zero() {
        r1
    } else {
        let s = (-r1.dot(d) / dd).max(T::zero()).min(T::one());
        r1 + d * s
    };
    closest.norm() >= body.radius + margin
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LinkKind {
    SpaceToGround,
    InterSatellite,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinkSpec {
    pub name: String,
    /// bits/s
    pub bitrate: f64,
    pub kind: LinkKind,
    /// Occlusion margin above the body surface for inter-satellite links, m.
    pub grazing_altitude: f64,
}

pub const HYPSO1_SBAND: &str = "HYPSO1_SBAND";
pub const OPSSAT_XBAND: &str = "OPSSAT_XBAND";

impl LinkSpec {
    pub fn new(name: &str, bitrate: f64, kind: LinkKind, grazing_altitude: f64) -> Result<Self, LinkError> {
        if !(bitrate > 0.0 && bitrate.is_finite()) {
            return Err(LinkError::Bitrate(bitrate));
        }
        Ok(Self {
            name: name.to_string(),
            bitrate,
            kind,
            grazing_altitude,
        })
    }

    /// 1 Mbit/s S-band downlink.
    pub fn hypso1_sband() -> Self {
        Self::new(HYPSO1_SBAND, 1e6, LinkKind::SpaceToGround, 1e5).unwrap()
    }

    /// 50 Mbit/s X-band downlink.
    pub fn opssat_xband() -> Self {
        Self::new(OPSSAT_XBAND, 5e7, LinkKind::SpaceToGround, 1e5).unwrap()
    }

    pub fn preset(name: &str) -> Result<Self, LinkError> {
        match name {
            HYPSO1_SBAND => Ok(Self::hypso1_sband()),
            OPSSAT_XBAND => Ok(Self::opssat_xband()),
            other => Err(LinkError::UnknownPreset(other.to_string())),
        }
    }

    /// Seconds of window time needed to move `bytes`.
    pub fn time_for(&self, bytes: u64) -> f64 {
        bytes as f64 * 8.0 / self.bitrate
    }
}

/// Contiguous visibility interval between two actors, `peer_a < peer_b`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Window {
    pub peer_a: ActorId,
    pub peer_b: ActorId,
    pub t_open: f64,
    pub t_close: f64,
}

impl Window {
    pub fn duration(&self) -> f64 {
        self.t_close - self.t_open
    }

    pub fn csv_row(&self) -> [String; 5] {
        [
            self.peer_a.to_string(),
            self.peer_b.to_string(),
            format!("{:.3}", self.t_open),
            format!("{:.3}", self.t_close),
            format!("{:.3}", self.duration()),
        ]
    }
}

pub const WINDOW_CSV_HEADER: [&str; 5] = ["peer_a", "peer_b", "t_open_s", "t_close_s", "duration_s"];

/// Visible intervals of `visible` over `[t0, t1]`.
///
/// The predicate is sampled every `coarse_step` seconds (plus `t1`); each sign
/// change is bisected down to [`EDGE_TOLERANCE`]. Returned edges are visible
/// samples, so visibility holds on `[open, close]` at the sampling resolution.
/// Passes shorter than `coarse_step` may fall between samples and be missed.
pub fn find_intervals(
    t0: f64,
    t1: f64,
    coarse_step: f64,
    visible: impl Fn(f64) -> bool,
) -> Vec<(f64, f64)> {
    assert!(coarse_step > 0.0, "coarse_step must be positive");
    let mut out = Vec::new();
    if !(t1 > t0) {
        return out;
    }
    let refine = |mut lo: f64, mut hi: f64, lo_state: bool| -> (f64, f64) {
        while hi - lo > EDGE_TOLERANCE {
            let mid = 0.5 * (lo + hi);
            if visible(mid) == lo_state {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        (lo, hi)
    };

    let n = ((t1 - t0) / coarse_step).ceil() as u64;
    let mut prev_t = t0;
    let mut prev = visible(t0);
    let mut open = if prev { Some(t0) } else { None };
    for k in 1..=n {
        let t = if k == n { t1 } else { t0 + k as f64 * coarse_step };
        let cur = visible(t);
        if cur != prev {
            let (lo, hi) = refine(prev_t, t, prev);
            if cur {
                open = Some(hi);
            } else if let Some(o) = open.take() {
                out.push((o, lo.max(o)));
            }
        }
        prev = cur;
        prev_t = t;
    }
    if let Some(o) = open {
        out.push((o, t1));
    }
    out
}

/// Windows for an unordered actor pair. The predicate must be symmetric.
pub fn find_windows(
    pair: (ActorId, ActorId),
    span: (f64, f64),
    coarse_step: f64,
    visible: impl Fn(f64) -> bool,
) -> Vec<Window> {
    let (a, b) = if pair.0 <= pair.1 { pair } else { (pair.1, pair.0) };
    find_intervals(span.0, span.1, coarse_step, visible)
        .into_iter()
        .map(|(t_open, t_close)| Window {
            peer_a: a,
            peer_b: b,
            t_open,
            t_close,
        })
        .collect()
}

/// Byte-counted payload movement over one link.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Transfer {
    pub src: ActorId,
    pub dst: ActorId,
    pub total_bytes: u64,
    pub sent_bytes: u64,
    pub link: LinkSpec,
}

impl Transfer {
    pub fn new(src: ActorId, dst: ActorId, total_bytes: u64, link: LinkSpec) -> Self {
        Self {
            src,
            dst,
            total_bytes,
            sent_bytes: 0,
            link,
        }
    }

    pub fn remaining(&self) -> u64 {
        self.total_bytes - self.sent_bytes
    }

    pub fn is_complete(&self) -> bool {
        self.sent_bytes >= self.total_bytes
    }

    /// Window time still needed to finish.
    pub fn time_to_complete(&self) -> f64 {
        self.link.time_for(self.remaining())
    }
}

/// Advances `tr` by `overlap` seconds of in-window link time.
pub fn step_transfer(tr: &Transfer, overlap: f64) -> Transfer {
    let mut next = tr.clone();
    if overlap > 0.0 {
        next.sent_bytes = tr.sent_bytes.saturating_add(bytes_in(tr.link.bitrate, overlap)).min(tr.total_bytes);
    }
    next
}

/// `floor(bitrate * seconds / 8)`, tolerant to the last-ulp error of the
/// product so that `time_for(n)` seconds always yields `n` bytes.
pub fn bytes_in(bitrate: f64, seconds: f64) -> u64 {
    let raw = bitrate * seconds / 8.0;
    let nearest = raw.round();
    if (raw - nearest).abs() <= 8.0 * f64::EPSILON * raw.abs().max(1.0) {
        nearest as u64
    } else {
        raw.floor() as u64
    }
}
