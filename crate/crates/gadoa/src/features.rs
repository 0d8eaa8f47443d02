//! GCC-PHAT feature extraction.
//!
//! Multichannel signals are cut into non-overlapping Hann-windowed 256-sample
//! frames at 8 kHz. Per frame and microphone pair, the phase-transformed
//! cross-correlation is evaluated over the physically admissible lag window,
//! and one of three feature vectors is assembled from it:
//!
//! * `full` - the raw GCC-PHAT vectors of all pairs, concatenated;
//! * `max`  - the parabolic-interpolated lag of each pair's maximum;
//! * `ga`   - the `max` lags followed by the centroid-relative microphone
//!   coordinates (x's first, then y's).
//!
//! Sign convention: a positive lag means channel k receives the wavefront
//! before channel l, matching [`crate::geometry::steering_delay`].

use std::cell::RefCell;
use std::fmt;
use std::io::Write;
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{ArrayGeometry, LagBound};
use crate::room::MultichannelSignal;
use crate::SAMPLE_RATE;

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

/// Thread-cached forward FFT plan.
pub(crate) fn fft_forward(n: usize) -> Arc<dyn Fft<f64>> {
    PLANNER.with(|p| p.borrow_mut().plan_fft_forward(n))
}

/// Thread-cached inverse FFT plan (unnormalized).
pub(crate) fn fft_inverse(n: usize) -> Arc<dyn Fft<f64>> {
    PLANNER.with(|p| p.borrow_mut().plan_fft_inverse(n))
}

/// Frame length in samples (32 ms at 8 kHz); also the FFT length.
pub const FRAME_LEN: usize = 256;

/// Per-bin magnitude below which a cross-spectrum bin is zeroed instead of
/// phase-normalized.
const PHAT_EPS: f64 = 1e-12;

/// Complex spectra of one Hann-windowed frame, all channels.
#[derive(Debug, Clone)]
pub struct FrameSpectra {
    /// One spectrum per channel, each `FRAME_LEN` bins.
    pub channels: Vec<Vec<Complex64>>,
    pub fs: f64,
}

impl FrameSpectra {
    pub fn fft_len(&self) -> usize {
        FRAME_LEN
    }

    /// Center frequency of bin `i` in Hz.
    pub fn bin_freq(&self, i: usize) -> f64 {
        i as f64 * self.fs / FRAME_LEN as f64
    }
}

/// Hann window w[n] = 0.5 (1 - cos(2 pi n / (N-1))).
pub fn hann_window(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| 0.5 * (1.0 - (std::f64::consts::TAU * i as f64 / (n - 1) as f64).cos()))
        .collect()
}

/// Cut a signal into non-overlapping windowed frames and transform them.
/// The trailing partial frame is dropped.
pub fn frame_signal(sig: &MultichannelSignal) -> Result<Vec<FrameSpectra>> {
    if (sig.fs - SAMPLE_RATE).abs() > 1e-9 {
        return Err(Error::InvalidScene(format!(
            "feature pipeline runs at {SAMPLE_RATE} Hz, got {} Hz",
            sig.fs
        )));
    }
    let len = sig.channels[0].len();
    if len < FRAME_LEN {
        return Err(Error::EmptyInput(format!(
            "signal shorter than one frame ({len} < {FRAME_LEN} samples)"
        )));
    }
    let n_frames = len / FRAME_LEN;
    let window = hann_window(FRAME_LEN);
    let fft = fft_forward(FRAME_LEN);

    let mut frames = Vec::with_capacity(n_frames);
    for f in 0..n_frames {
        let start = f * FRAME_LEN;
        let channels = sig
            .channels
            .iter()
            .map(|ch| {
                let mut buf: Vec<Complex64> = ch[start..start + FRAME_LEN]
                    .iter()
                    .zip(&window)
                    .map(|(&x, &w)| Complex64::new(x * w, 0.0))
                    .collect();
                fft.process(&mut buf);
                buf
            })
            .collect();
        frames.push(FrameSpectra {
            channels,
            fs: sig.fs,
        });
    }
    Ok(frames)
}

/// GCC-PHAT of one microphone pair over the constrained lag window.
///
/// Returns the lag vector indexed `-tau_max ..= tau_max-1` and a flag that is
/// true when every cross-spectrum bin fell below the zero guard (silent
/// frame).
pub fn gcc_phat(frame: &FrameSpectra, pair: (usize, usize), bound: &LagBound) -> (Vec<f64>, bool) {
    let n = frame.fft_len();
    let (k, l) = pair;
    let yk = &frame.channels[k];
    let yl = &frame.channels[l];

    // conj(Y_k) * Y_l puts the correlation peak at positive lags when
    // channel k leads channel l.
    let mut cross: Vec<Complex64> = (0..n).map(|i| yk[i].conj() * yl[i]).collect();
    let mut live = false;
    for c in cross.iter_mut() {
        let mag = c.norm();
        if mag < PHAT_EPS {
            *c = Complex64::new(0.0, 0.0);
        } else {
            *c /= mag;
            live = true;
        }
    }

    fft_inverse(n).process(&mut cross);

    let values = bound
        .lags()
        .map(|lag| {
            let idx = lag.rem_euclid(n as i64) as usize;
            cross[idx].re / n as f64
        })
        .collect();
    (values, !live)
}

/// Per-pair GCC-PHAT vectors of one frame, in fixed pair order.
#[derive(Debug, Clone)]
pub struct GccPhatMatrix {
    pub pairs: Vec<(usize, usize)>,
    pub tau_max: i64,
    /// One row per pair, each `2 * tau_max` lags.
    pub rows: Vec<Vec<f64>>,
    /// True when the whole frame carried no usable cross-spectrum energy.
    pub silent: bool,
}

pub fn gcc_phat_matrix(
    frame: &FrameSpectra,
    geom: &ArrayGeometry,
    bound: &LagBound,
) -> Result<GccPhatMatrix> {
    if bound.width() > frame.fft_len() {
        return Err(Error::FeatureShape {
            expected: frame.fft_len(),
            got: bound.width(),
        });
    }
    if geom.mic_count() != frame.channels.len() {
        return Err(Error::FeatureShape {
            expected: geom.mic_count(),
            got: frame.channels.len(),
        });
    }
    let pairs = geom.pairs();
    let mut rows = Vec::with_capacity(pairs.len());
    let mut silent = true;
    for &pair in &pairs {
        let (values, pair_silent) = gcc_phat(frame, pair, bound);
        silent &= pair_silent;
        rows.push(values);
    }
    Ok(GccPhatMatrix {
        pairs,
        tau_max: bound.tau_max,
        rows,
        silent,
    })
}

/// Fractional peak offset from three equidistant samples around a local
/// maximum: delta = 0.5 (y- - y+) / (y- - 2 y0 + y+), zero when the
/// curvature vanishes.
pub fn parabolic_peak(y_minus: f64, y_0: f64, y_plus: f64) -> Result<f64> {
    if !(y_minus.is_finite() && y_0.is_finite() && y_plus.is_finite()) {
        return Err(Error::Numeric("parabolic interpolation on non-finite values".into()));
    }
    let denom = y_minus - 2.0 * y_0 + y_plus;
    if denom.abs() < 1e-12 {
        return Ok(0.0);
    }
    Ok(0.5 * (y_minus - y_plus) / denom)
}

/// Interpolated argmax lag per pair. Ties resolve to the smallest lag;
/// a maximum on the window boundary keeps its integer position.
pub fn max_lag_features(g: &GccPhatMatrix) -> Result<Vec<f64>> {
    if g.silent {
        return Err(Error::SilentFrame);
    }
    let mut out = Vec::with_capacity(g.rows.len());
    for row in &g.rows {
        let mut best = 0usize;
        for (i, &v) in row.iter().enumerate() {
            if v > row[best] {
                best = i;
            }
        }
        let delta = if best == 0 || best == row.len() - 1 {
            0.0
        } else {
            parabolic_peak(row[best - 1], row[best], row[best + 1])?
        };
        let lag = best as i64 - g.tau_max;
        out.push(lag as f64 + delta);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FeatureKind {
    Full,
    Max,
    GeometryAware,
}

impl FeatureKind {
    pub fn expected_len(&self, m: usize, tau_max: i64) -> usize {
        let pairs = m * (m - 1) / 2;
        match self {
            FeatureKind::Full => pairs * 2 * tau_max as usize,
            FeatureKind::Max => pairs,
            FeatureKind::GeometryAware => pairs + 2 * m,
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(FeatureKind::Full),
            "max" => Ok(FeatureKind::Max),
            "ga" => Ok(FeatureKind::GeometryAware),
            other => Err(Error::Config(format!(
                "unknown feature kind '{other}' (expected full, max, or ga)"
            ))),
        }
    }
}

impl fmt::Display for FeatureKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FeatureKind::Full => "full",
            FeatureKind::Max => "max",
            FeatureKind::GeometryAware => "ga",
        })
    }
}

#[derive(Debug, Clone)]
pub struct FeatureVector {
    pub kind: FeatureKind,
    pub values: Vec<f64>,
    pub frame_index: usize,
}

/// Assemble one frame's feature vector. `geom` is required for the
/// geometry-aware kind, whose tail carries the centroid-relative coordinates
/// x_1..x_M then y_1..y_M.
pub fn assemble_feature(
    kind: FeatureKind,
    g: &GccPhatMatrix,
    geom: Option<&ArrayGeometry>,
    frame_index: usize,
) -> Result<FeatureVector> {
    let values = match kind {
        FeatureKind::Full => {
            if g.silent {
                return Err(Error::SilentFrame);
            }
            g.rows.iter().flatten().copied().collect()
        }
        FeatureKind::Max => max_lag_features(g)?,
        FeatureKind::GeometryAware => {
            let geom = geom.ok_or_else(|| {
                Error::InvalidGeometry("geometry-aware features need the array geometry".into())
            })?;
            let mut v = max_lag_features(g)?;
            let centered = geom.centered();
            v.extend(centered.mics().iter().map(|m| m[0]));
            v.extend(centered.mics().iter().map(|m| m[1]));
            v
        }
    };
    Ok(FeatureVector {
        kind,
        values,
        frame_index,
    })
}

/// Dump feature records as CSV: frame_index, kind, then the values.
pub fn write_feature_dump<W: Write>(w: &mut W, records: &[FeatureVector]) -> Result<()> {
    writeln!(w, "# gadoa-features v1")?;
    for r in records {
        write!(w, "{},{}", r.frame_index, r.kind)?;
        for v in &r.values {
            write!(w, ",{v}")?;
        }
        writeln!(w)?;
    }
    Ok(())
}
