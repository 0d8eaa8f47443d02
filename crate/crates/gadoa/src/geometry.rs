//! 2-D microphone array geometries: pair enumeration, lag bounds, far-field
//! steering delays, and the fixed/deviated/randomized arrays used by the
//! experiments.

use std::fmt::Write as _;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Ordered list of microphone positions in meters. Positions are expressed in
/// the array's own x-y plane; placement inside a room happens at scene level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArrayGeometry {
    mics: Vec<[f64; 2]>,
}

impl ArrayGeometry {
    pub fn new(mics: Vec<[f64; 2]>) -> Result<Self> {
        if mics.len() < 2 {
            return Err(Error::InvalidGeometry(format!(
                "need at least 2 microphones, got {}",
                mics.len()
            )));
        }
        if mics.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::InvalidGeometry("non-finite coordinate".into()));
        }
        let geom = ArrayGeometry { mics };
        if geom.r_max() <= 0.0 {
            return Err(Error::InvalidGeometry(
                "degenerate array: all microphones coincide".into(),
            ));
        }
        Ok(geom)
    }

    pub fn mic_count(&self) -> usize {
        self.mics.len()
    }

    pub fn mics(&self) -> &[[f64; 2]] {
        &self.mics
    }

    /// Largest inter-microphone distance.
    pub fn r_max(&self) -> f64 {
        let mut r = 0.0f64;
        for i in 0..self.mics.len() {
            for j in i + 1..self.mics.len() {
                r = r.max(dist2(self.mics[i], self.mics[j]));
            }
        }
        r
    }

    pub fn centroid(&self) -> [f64; 2] {
        let n = self.mics.len() as f64;
        let (sx, sy) = self
            .mics
            .iter()
            .fold((0.0, 0.0), |(ax, ay), m| (ax + m[0], ay + m[1]));
        [sx / n, sy / n]
    }

    /// Same array expressed relative to its centroid. This is the coordinate
    /// convention consumed by geometry-aware features and steering vectors.
    pub fn centered(&self) -> ArrayGeometry {
        let c = self.centroid();
        ArrayGeometry {
            mics: self.mics.iter().map(|m| [m[0] - c[0], m[1] - c[1]]).collect(),
        }
    }

    pub fn pairs(&self) -> Vec<(usize, usize)> {
        pair_indices(self.mics.len()).expect("geometry invariant: M >= 2")
    }

    /// Parse the plain-text geometry format: one microphone per line,
    /// "x y" in meters, `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self> {
        let mut mics = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = match raw.find('#') {
                Some(i) => &raw[..i],
                None => raw,
            };
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split_whitespace().collect();
            if fields.len() != 2 {
                return Err(Error::DataFormat(format!(
                    "geometry line {}: expected 2 fields, got {}",
                    lineno + 1,
                    fields.len()
                )));
            }
            let x: f64 = fields[0].parse().map_err(|_| {
                Error::DataFormat(format!("geometry line {}: bad x value", lineno + 1))
            })?;
            let y: f64 = fields[1].parse().map_err(|_| {
                Error::DataFormat(format!("geometry line {}: bad y value", lineno + 1))
            })?;
            mics.push([x, y]);
        }
        ArrayGeometry::new(mics)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        ArrayGeometry::parse(&text)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::from("# microphone coordinates, one per line: x y (meters)\n");
        for m in &self.mics {
            writeln!(s, "{} {}", m[0], m[1]).unwrap();
        }
        s
    }
}

fn dist2(a: [f64; 2], b: [f64; 2]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

/// All non-redundant microphone pairs in fixed lexicographic order
/// (0,1),(0,2),...,(0,M-1),(1,2),...,(M-2,M-1). Indices are zero-based.
pub fn pair_indices(m: usize) -> Result<Vec<(usize, usize)>> {
    if m < 2 {
        return Err(Error::InvalidGeometry(format!(
            "pair enumeration needs M >= 2, got {m}"
        )));
    }
    let mut pairs = Vec::with_capacity(m * (m - 1) / 2);
    for k in 0..m {
        for l in k + 1..m {
            pairs.push((k, l));
        }
    }
    Ok(pairs)
}

/// Search window for discrete GCC-PHAT lags: [-tau_max, tau_max-1].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LagBound {
    /// Largest physically possible inter-microphone delay in samples,
    /// including the margin `eta`.
    pub tau_max: i64,
    pub eta: i64,
    pub fs: f64,
    pub c: f64,
}

impl LagBound {
    /// Number of discrete lags in the window.
    pub fn width(&self) -> usize {
        2 * self.tau_max as usize
    }

    /// Lags in order, -tau_max ..= tau_max-1.
    pub fn lags(&self) -> impl Iterator<Item = i64> {
        -self.tau_max..self.tau_max
    }
}

/// tau_max = ceil(r_max * fs / c) + eta. Values within 1e-9 of an integer are
/// treated as that integer so exact divisions do not round up spuriously.
pub fn lag_bound(geom: &ArrayGeometry, fs: f64, c: f64, eta: i64) -> Result<LagBound> {
    if fs <= 0.0 || c <= 0.0 || eta < 0 {
        return Err(Error::InvalidGeometry(format!(
            "lag bound needs fs > 0, c > 0, eta >= 0 (fs={fs}, c={c}, eta={eta})"
        )));
    }
    let r_max = geom.r_max();
    if r_max <= 0.0 {
        return Err(Error::InvalidGeometry("degenerate array: r_max = 0".into()));
    }
    let x = r_max * fs / c;
    let nearest = x.round();
    let ceiled = if (x - nearest).abs() < 1e-9 { nearest } else { x.ceil() };
    Ok(LagBound {
        tau_max: ceiled as i64 + eta,
        eta,
        fs,
        c,
    })
}

/// Far-field steering delay between microphones k and l for a plane wave from
/// azimuth `theta_deg`, as the projection (r_k - r_l) . u(theta) / c with
/// u(theta) = (cos theta, sin theta). Positive means microphone k receives the
/// wavefront before microphone l.
pub fn steering_delay(geom: &ArrayGeometry, k: usize, l: usize, theta_deg: f64, c: f64) -> f64 {
    let mics = geom.mics();
    assert!(k < mics.len() && l < mics.len(), "microphone index out of range");
    let th = theta_deg.to_radians();
    let (ux, uy) = (th.cos(), th.sin());
    let dx = mics[k][0] - mics[l][0];
    let dy = mics[k][1] - mics[l][1];
    (dx * ux + dy * uy) / c
}

/// Per-microphone far-field delay relative to the array centroid. Microphones
/// closer to the source (larger projection onto u(theta)) get negative delays.
pub fn mic_delay(geom: &ArrayGeometry, m: usize, theta_deg: f64, c: f64) -> f64 {
    let mics = geom.mics();
    assert!(m < mics.len(), "microphone index out of range");
    let cen = geom.centroid();
    let th = theta_deg.to_radians();
    -((mics[m][0] - cen[0]) * th.cos() + (mics[m][1] - cen[1]) * th.sin()) / c
}

/// Move every microphone by exactly `step` meters along an independently
/// drawn uniform direction in the x-y plane.
pub fn deviate_geometry<R: Rng>(geom: &ArrayGeometry, step: f64, rng: &mut R) -> ArrayGeometry {
    assert!(step >= 0.0, "deviation step must be non-negative");
    let mics = geom
        .mics()
        .iter()
        .map(|m| {
            let phi = rng.random_range(0.0..std::f64::consts::TAU);
            [m[0] + step * phi.cos(), m[1] + step * phi.sin()]
        })
        .collect();
    ArrayGeometry { mics }
}

/// Array of `m` microphones i.i.d. uniform over a width x depth rectangle
/// centered at the origin.
pub fn random_geometry<R: Rng>(
    m: usize,
    width: f64,
    depth: f64,
    rng: &mut R,
) -> Result<ArrayGeometry> {
    if m < 2 {
        return Err(Error::InvalidGeometry(format!("need M >= 2, got {m}")));
    }
    if width <= 0.0 || depth <= 0.0 {
        return Err(Error::InvalidGeometry(format!(
            "aperture must be positive (width={width}, depth={depth})"
        )));
    }
    let mics = (0..m)
        .map(|_| {
            let x = rng.random_range(-width / 2.0..=width / 2.0);
            let y = rng.random_range(-depth / 2.0..=depth / 2.0);
            [x, y]
        })
        .collect();
    ArrayGeometry::new(mics)
}

/// The fixed 5-microphone arc array used to train the geometry-unaware
/// classifiers: 0.40 m wide, about 0.14 m deep.
pub fn arc_array() -> ArrayGeometry {
    ArrayGeometry {
        mics: vec![
            [-0.20, 0.071],
            [-0.073, -0.038],
            [0.0, -0.067],
            [0.073, -0.038],
            [0.20, 0.071],
        ],
    }
}
