//! Shoebox room simulation: image-source impulse responses, Table-driven
//! scene sampling, diffuse babble noise, and multichannel rendering of a
//! single static source at a configured SNR.

use std::path::PathBuf;

use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::FRAME_LEN;
use crate::geometry::ArrayGeometry;
use crate::wav;

/// Rectangular room with uniform wall absorption derived from T60.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoomSpec {
    /// (Lx, Ly, Lz) in meters.
    pub dims: [f64; 3],
    /// Reverberation time in seconds.
    pub t60: f64,
    pub fs: f64,
    pub c: f64,
}

impl RoomSpec {
    pub fn new(dims: [f64; 3], t60: f64, fs: f64, c: f64) -> Result<Self> {
        if dims.iter().any(|&d| !(d > 0.0)) {
            return Err(Error::InvalidScene(format!("room dims must be positive: {dims:?}")));
        }
        if !(0.05..=2.0).contains(&t60) {
            return Err(Error::InvalidScene(format!(
                "t60 must lie in [0.05, 2.0] s, got {t60}"
            )));
        }
        if fs <= 0.0 || c <= 0.0 {
            return Err(Error::InvalidScene(format!("fs and c must be positive ({fs}, {c})")));
        }
        Ok(RoomSpec { dims, t60, fs, c })
    }

    /// Uniform wall reflection coefficient from Sabine's relation,
    /// alpha = 0.1611 V / (S T60), clipped into (0, 1).
    pub fn reflection_coefficient(&self) -> f64 {
        let [lx, ly, lz] = self.dims;
        let volume = lx * ly * lz;
        let surface = 2.0 * (lx * ly + lx * lz + ly * lz);
        let alpha = (0.1611 * volume / (surface * self.t60)).clamp(1e-4, 0.9999);
        (1.0 - alpha).sqrt()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum SourceKind {
    WhiteNoise,
    SyntheticSpeech,
    SpeechWav { path: PathBuf },
}

/// One simulated acoustic trial.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub room: RoomSpec,
    pub array_center: [f64; 3],
    /// 2-D array placed in the horizontal plane at the array-center height.
    pub geometry: ArrayGeometry,
    pub source_position: [f64; 3],
    pub source_kind: SourceKind,
    /// None disables the noise term entirely (infinite SNR).
    pub snr_db: Option<f64>,
    /// Azimuth of the source relative to the array center, degrees in [0, 360).
    pub ground_truth_doa: f64,
}

impl Scene {
    pub fn mic_positions(&self) -> Vec<[f64; 3]> {
        self.geometry
            .mics()
            .iter()
            .map(|m| {
                [
                    self.array_center[0] + m[0],
                    self.array_center[1] + m[1],
                    self.array_center[2],
                ]
            })
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        if !inside_room(&self.room, self.source_position, 0.0) {
            return Err(Error::InvalidScene("source outside room".into()));
        }
        for p in self.mic_positions() {
            if !inside_room(&self.room, p, 0.0) {
                return Err(Error::InvalidScene("microphone outside room".into()));
            }
        }
        let recomputed = azimuth_deg(self.array_center, self.source_position);
        if circular_diff(recomputed, self.ground_truth_doa) > 1e-9 {
            return Err(Error::InvalidScene(format!(
                "ground-truth DoA {} does not match stored positions ({recomputed})",
                self.ground_truth_doa
            )));
        }
        Ok(())
    }
}

fn circular_diff(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(360.0);
    d.min(360.0 - d)
}

pub fn azimuth_deg(center: [f64; 3], target: [f64; 3]) -> f64 {
    (target[1] - center[1])
        .atan2(target[0] - center[0])
        .to_degrees()
        .rem_euclid(360.0)
}

fn inside_room(room: &RoomSpec, p: [f64; 3], margin: f64) -> bool {
    p.iter()
        .zip(&room.dims)
        .all(|(&x, &l)| x > margin && x < l - margin)
}

/// Multichannel time-domain signal, equal length per channel.
#[derive(Debug, Clone, PartialEq)]
pub struct MultichannelSignal {
    pub channels: Vec<Vec<f64>>,
    pub fs: f64,
}

impl MultichannelSignal {
    pub fn new(channels: Vec<Vec<f64>>, fs: f64) -> Result<Self> {
        if channels.is_empty() {
            return Err(Error::EmptyInput("no channels".into()));
        }
        let len = channels[0].len();
        if channels.iter().any(|c| c.len() != len) {
            return Err(Error::InvalidScene("channel lengths differ".into()));
        }
        if len < FRAME_LEN {
            return Err(Error::EmptyInput(format!(
                "signal must cover at least one frame ({len} < {FRAME_LEN})"
            )));
        }
        Ok(MultichannelSignal { channels, fs })
    }

    pub fn len(&self) -> usize {
        self.channels[0].len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// The acoustic parameter ranges every scene is drawn from. Defaults follow
/// the simulation table: rooms around 9 x 5 x 3 m, array near the room
/// center, source on the 5-degree direction grid at 1-3 m distance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SceneRanges {
    pub room_base: [f64; 3],
    pub room_jitter: [f64; 3],
    pub array_base: [f64; 3],
    pub array_jitter: [f64; 3],
    pub source_distance: [f64; 2],
    pub direction_classes: usize,
    pub t60: [f64; 2],
    pub snr_db: [f64; 2],
    pub fs: f64,
    pub c: f64,
    /// Minimum clearance from walls for sources and microphones.
    pub wall_margin: f64,
}

impl Default for SceneRanges {
    fn default() -> Self {
        SceneRanges {
            room_base: [9.0, 5.0, 3.0],
            room_jitter: [1.0, 1.0, 0.5],
            array_base: [4.5, 2.5, 1.5],
            array_jitter: [0.5, 0.5, 0.5],
            source_distance: [1.0, 3.0],
            direction_classes: 72,
            t60: [0.13, 1.0],
            snr_db: [0.0, 30.0],
            fs: 8000.0,
            c: 343.0,
            wall_margin: 0.1,
        }
    }
}

impl SceneRanges {
    /// Fix T60 and SNR to single values (the evaluation condition).
    pub fn with_fixed_condition(mut self, t60: f64, snr_db: f64) -> Self {
        self.t60 = [t60, t60];
        self.snr_db = [snr_db, snr_db];
        self
    }

    pub fn direction_step_deg(&self) -> f64 {
        360.0 / self.direction_classes as f64
    }
}

fn uniform<R: Rng>(rng: &mut R, lo: f64, hi: f64) -> f64 {
    if hi > lo {
        rng.random_range(lo..=hi)
    } else {
        lo
    }
}

/// Draw one scene: room dimensions, T60, SNR, array position, then a source
/// direction from the class grid and a distance, retried until the source
/// sits inside the room.
pub fn sample_scene<R: Rng>(
    ranges: &SceneRanges,
    geometry: ArrayGeometry,
    source_kind: SourceKind,
    rng: &mut R,
) -> Result<Scene> {
    sample_scene_directed(ranges, geometry, source_kind, None, None, rng)
}

/// [`sample_scene`] with the source direction and/or distance pinned instead
/// of drawn.
pub fn sample_scene_directed<R: Rng>(
    ranges: &SceneRanges,
    geometry: ArrayGeometry,
    source_kind: SourceKind,
    direction_deg: Option<f64>,
    distance_m: Option<f64>,
    rng: &mut R,
) -> Result<Scene> {
    let dims = [
        uniform(rng, ranges.room_base[0] - ranges.room_jitter[0], ranges.room_base[0] + ranges.room_jitter[0]),
        uniform(rng, ranges.room_base[1] - ranges.room_jitter[1], ranges.room_base[1] + ranges.room_jitter[1]),
        uniform(rng, ranges.room_base[2] - ranges.room_jitter[2], ranges.room_base[2] + ranges.room_jitter[2]),
    ];
    let t60 = uniform(rng, ranges.t60[0], ranges.t60[1]);
    let snr = uniform(rng, ranges.snr_db[0], ranges.snr_db[1]);
    let room = RoomSpec::new(dims, t60, ranges.fs, ranges.c)?;
    let center = [
        uniform(rng, ranges.array_base[0] - ranges.array_jitter[0], ranges.array_base[0] + ranges.array_jitter[0]),
        uniform(rng, ranges.array_base[1] - ranges.array_jitter[1], ranges.array_base[1] + ranges.array_jitter[1]),
        uniform(rng, ranges.array_base[2] - ranges.array_jitter[2], ranges.array_base[2] + ranges.array_jitter[2]),
    ];

    for p in geometry.mics() {
        let pos = [center[0] + p[0], center[1] + p[1], center[2]];
        if !inside_room(&room, pos, ranges.wall_margin) {
            return Err(Error::SceneSampling("array does not fit inside the room".into()));
        }
    }

    const MAX_ATTEMPTS: usize = 200;
    for attempt in 0..MAX_ATTEMPTS {
        let doa = match direction_deg {
            Some(d) => d.rem_euclid(360.0),
            None => {
                rng.random_range(0..ranges.direction_classes) as f64 * ranges.direction_step_deg()
            }
        };
        let dist = match distance_m {
            Some(d) => d,
            None => uniform(rng, ranges.source_distance[0], ranges.source_distance[1]),
        };
        if direction_deg.is_some() && distance_m.is_some() && attempt > 0 {
            break;
        }
        let th = doa.to_radians();
        let src = [
            center[0] + dist * th.cos(),
            center[1] + dist * th.sin(),
            center[2],
        ];
        if inside_room(&room, src, ranges.wall_margin) {
            let scene = Scene {
                room,
                array_center: center,
                geometry,
                source_position: src,
                source_kind,
                snr_db: Some(snr),
                ground_truth_doa: doa,
            };
            scene.validate()?;
            return Ok(scene);
        }
    }
    Err(Error::SceneSampling(format!(
        "no feasible source position after {MAX_ATTEMPTS} attempts"
    )))
}

/// Length of the Hann-windowed sinc kernel used for fractional-delay taps
/// (8 ms at 8 kHz).
fn sinc_kernel_len(fs: f64) -> usize {
    2 * (0.004 * fs).round() as usize
}

/// Image-source impulse response for a shoebox room with one uniform
/// reflection coefficient. Image paths are enumerated out to `max_dist`
/// meters.
///
/// Images whose amplitude reaches `sinc_rel_threshold` times the direct-path
/// amplitude are placed with a Hann-windowed sinc kernel (exact fractional
/// delay); the dense weak tail falls back to single nearest-sample taps,
/// whose sub-sample jitter is immaterial there. A threshold of zero makes
/// every tap fractional, a threshold above one makes every tap
/// nearest-sample.
pub fn image_source_rir(
    dims: [f64; 3],
    beta: f64,
    src: [f64; 3],
    mic: [f64; 3],
    fs: f64,
    c: f64,
    max_dist: f64,
    n_samples: usize,
    sinc_rel_threshold: f64,
) -> Vec<f64> {
    let mut rir = vec![0.0; n_samples];

    // Per-axis image coordinates and reflection weights. The image along one
    // axis is (1-2q) s + 2 m L with |m-q| + |m| wall hits.
    let axis_items = |s: f64, m_pos: f64, l: f64| -> Vec<(f64, f64)> {
        let n = (max_dist / (2.0 * l)).ceil() as i64 + 1;
        let mut items = Vec::with_capacity((2 * n as usize + 1) * 2);
        for m in -n..=n {
            for q in 0..=1i64 {
                let coord = (1 - 2 * q) as f64 * s + 2.0 * m as f64 * l;
                let hits = (m - q).abs() + m.abs();
                items.push((coord - m_pos, beta.powi(hits as i32)));
            }
        }
        items.retain(|&(d, w)| d.abs() <= max_dist && w != 0.0);
        items
    };
    let xs = axis_items(src[0], mic[0], dims[0]);
    let ys = axis_items(src[1], mic[1], dims[1]);
    let zs = axis_items(src[2], mic[2], dims[2]);

    let direct: f64 = src
        .iter()
        .zip(&mic)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt();
    let inv_4pi = 1.0 / (4.0 * std::f64::consts::PI);
    let amp_floor = sinc_rel_threshold * inv_4pi / direct.max(1e-9);

    let tw = sinc_kernel_len(fs);
    let half = tw as i64 / 2;
    let max_sq = max_dist * max_dist;
    for &(dx, wx) in &xs {
        let dx2 = dx * dx;
        for &(dy, wy) in &ys {
            let dxy2 = dx2 + dy * dy;
            if dxy2 > max_sq {
                continue;
            }
            let wxy = wx * wy;
            for &(dz, wz) in &zs {
                let d2 = dxy2 + dz * dz;
                if d2 > max_sq {
                    continue;
                }
                let dist = d2.sqrt();
                if dist <= 1e-9 {
                    continue;
                }
                let gain = wxy * wz * inv_4pi / dist;
                let delay = dist * fs / c;
                if gain.abs() >= amp_floor {
                    // Windowed-sinc fractional delay centered on `delay`.
                    let fdist = delay.floor();
                    let frac = delay - fdist;
                    let start = fdist as i64 - half + 1;
                    for n in 0..tw as i64 {
                        let idx = start + n;
                        if idx < 0 || idx as usize >= n_samples {
                            continue;
                        }
                        let t = (n - half + 1) as f64 - frac;
                        let v = hann_sinc(t, tw as f64);
                        if v.abs() > 1e-12 {
                            rir[idx as usize] += gain * v;
                        }
                    }
                } else {
                    let idx = delay.round() as usize;
                    if idx < n_samples {
                        rir[idx] += gain;
                    }
                }
            }
        }
    }
    rir
}

/// Hann-windowed full-band sinc, unit peak at t = 0.
fn hann_sinc(t: f64, width: f64) -> f64 {
    let window = 0.5 * (1.0 + (std::f64::consts::TAU * t / width).cos());
    let x = std::f64::consts::PI * t;
    let sinc = if x.abs() < 1e-9 { 1.0 } else { x.sin() / x };
    window * sinc
}

/// Relative amplitude above which image taps get exact fractional delays in
/// [`simulate_rir`]; the DoA-bearing direct path and strong early
/// reflections always qualify.
pub const SINC_REL_THRESHOLD: f64 = 0.02;

/// Room impulse response between a source and a microphone. The response
/// covers image paths out to 1.1 c T60 so the decay reaches -60 dB before
/// truncation.
pub fn simulate_rir(room: &RoomSpec, src: [f64; 3], mic: [f64; 3]) -> Result<Vec<f64>> {
    if !inside_room(room, src, 0.0) || !inside_room(room, mic, 0.0) {
        return Err(Error::InvalidScene(
            "source and microphone must lie inside the room".into(),
        ));
    }
    let direct: f64 = src
        .iter()
        .zip(&mic)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt();
    if direct < 1e-6 {
        return Err(Error::InvalidScene("source coincides with microphone".into()));
    }
    let beta = room.reflection_coefficient();
    let max_dist = (1.1 * room.c * room.t60).max(direct * 1.05 + room.c / room.fs * 8.0);
    let n_samples =
        (max_dist * room.fs / room.c).ceil() as usize + sinc_kernel_len(room.fs) / 2 + 2;
    Ok(image_source_rir(
        room.dims,
        beta,
        src,
        mic,
        room.fs,
        room.c,
        max_dist,
        n_samples,
        SINC_REL_THRESHOLD,
    ))
}

/// FFT convolution, full length (a.len() + b.len() - 1).
pub fn fft_convolve(a: &[f64], b: &[f64]) -> Vec<f64> {
    let out_len = a.len() + b.len() - 1;
    let n = out_len.next_power_of_two();
    let fft = crate::features::fft_forward(n);
    let ifft = crate::features::fft_inverse(n);

    let mut fa: Vec<Complex64> = a.iter().map(|&x| Complex64::new(x, 0.0)).collect();
    fa.resize(n, Complex64::new(0.0, 0.0));
    fft.process(&mut fa);
    let mut fb: Vec<Complex64> = b.iter().map(|&x| Complex64::new(x, 0.0)).collect();
    fb.resize(n, Complex64::new(0.0, 0.0));
    fft.process(&mut fb);

    for (x, y) in fa.iter_mut().zip(&fb) {
        *x *= y;
    }
    ifft.process(&mut fa);
    fa.truncate(out_len);
    fa.iter().map(|x| x.re / n as f64).collect()
}

/// Spectral envelope of the synthetic speech-shaped noise: flat up to 500 Hz,
/// then -12 dB per octave (power).
pub fn speech_envelope(f: f64) -> f64 {
    if f <= 500.0 {
        1.0
    } else {
        (500.0 / f).powi(2)
    }
}

/// Gaussian noise shaped by [`speech_envelope`] in the frequency domain.
pub fn shaped_noise<R: Rng>(n: usize, fs: f64, rng: &mut R) -> Vec<f64> {
    let m = n.next_power_of_two();
    let mut buf: Vec<Complex64> = (0..m)
        .map(|_| Complex64::new(StandardNormal.sample(rng), 0.0))
        .collect();
    crate::features::fft_forward(m).process(&mut buf);
    for (i, v) in buf.iter_mut().enumerate() {
        let f = if i <= m / 2 { i } else { m - i } as f64 * fs / m as f64;
        *v *= speech_envelope(f);
    }
    crate::features::fft_inverse(m).process(&mut buf);
    buf.iter().take(n).map(|x| x.re / m as f64).collect()
}

/// Speech-like test source: shaped noise with a slow random amplitude
/// modulation between 4 and 8 Hz.
pub fn synthetic_speech<R: Rng>(n: usize, fs: f64, rng: &mut R) -> Vec<f64> {
    let mut x = shaped_noise(n, fs, rng);
    let fm = rng.random_range(4.0..=8.0);
    let phase = rng.random_range(0.0..std::f64::consts::TAU);
    for (i, v) in x.iter_mut().enumerate() {
        let t = i as f64 / fs;
        *v *= 1.0 + 0.8 * (std::f64::consts::TAU * fm * t + phase).sin();
    }
    x
}

/// Diffuse-like stationary babble: 32 independent speech-shaped plane waves
/// from uniformly spaced azimuths, delayed per microphone. Inter-channel
/// coherence falls with spacing and frequency, approximating a diffuse field.
pub fn diffuse_babble<R: Rng>(
    mics: &[[f64; 2]],
    duration: f64,
    fs: f64,
    c: f64,
    rng: &mut R,
) -> MultichannelSignal {
    const N_WAVES: usize = 32;
    let n = (duration * fs).round() as usize;
    let cx = mics.iter().map(|m| m[0]).sum::<f64>() / mics.len() as f64;
    let cy = mics.iter().map(|m| m[1]).sum::<f64>() / mics.len() as f64;
    let max_r = mics
        .iter()
        .map(|m| ((m[0] - cx).powi(2) + (m[1] - cy).powi(2)).sqrt())
        .fold(0.0f64, f64::max);
    let pad = (fs * max_r / c).ceil() as i64 + 1;

    let mut channels = vec![vec![0.0; n]; mics.len()];
    for k in 0..N_WAVES {
        let phi = k as f64 * std::f64::consts::TAU / N_WAVES as f64;
        let (ux, uy) = (phi.cos(), phi.sin());
        let wave = shaped_noise(n + 2 * pad as usize, fs, rng);
        for (m, ch) in mics.iter().zip(channels.iter_mut()) {
            // Arrival delay relative to the centroid; closer microphones
            // receive the wave earlier.
            let delay = -((m[0] - cx) * ux + (m[1] - cy) * uy) / c;
            let shift = (fs * delay).round() as i64;
            for (i, out) in ch.iter_mut().enumerate() {
                *out += wave[(pad + i as i64 - shift) as usize];
            }
        }
    }
    let scale = 1.0 / (N_WAVES as f64).sqrt();
    for ch in channels.iter_mut() {
        for v in ch.iter_mut() {
            *v *= scale;
        }
    }
    MultichannelSignal { channels, fs }
}

fn make_source<R: Rng>(kind: &SourceKind, n: usize, fs: f64, rng: &mut R) -> Result<Vec<f64>> {
    match kind {
        SourceKind::WhiteNoise => Ok((0..n).map(|_| StandardNormal.sample(rng)).collect()),
        SourceKind::SyntheticSpeech => Ok(synthetic_speech(n, fs, rng)),
        SourceKind::SpeechWav { path } => {
            let x = wav::read_mono(path, fs)?;
            if x.len() < n {
                return Err(Error::Ingestion(format!(
                    "{}: {} samples after resampling, need {n}",
                    path.display(),
                    x.len()
                )));
            }
            Ok(x[..n].to_vec())
        }
    }
}

fn mean_power(channels: &[Vec<f64>]) -> f64 {
    let total: f64 = channels
        .iter()
        .map(|ch| ch.iter().map(|&v| v * v).sum::<f64>() / ch.len() as f64)
        .sum();
    total / channels.len() as f64
}

/// Render the reverberant source image and the scaled noise separately.
/// [`render_scene`] returns their sum; the split form exists so tests and
/// diagnostics can verify the mixing SNR from the actual summands.
pub fn render_scene_parts<R: Rng>(
    scene: &Scene,
    duration: f64,
    rng: &mut R,
) -> Result<(MultichannelSignal, Option<MultichannelSignal>)> {
    scene.validate()?;
    let fs = scene.room.fs;
    let n = (duration * fs).round() as usize;
    if n < FRAME_LEN {
        return Err(Error::EmptyInput(format!(
            "duration {duration} s is shorter than one frame"
        )));
    }
    let source = make_source(&scene.source_kind, n, fs, rng)?;
    let mut reverberant = Vec::with_capacity(scene.geometry.mic_count());
    for mic in scene.mic_positions() {
        let rir = simulate_rir(&scene.room, scene.source_position, mic)?;
        let mut ch = fft_convolve(&source, &rir);
        ch.truncate(n);
        reverberant.push(ch);
    }
    let p_sig = mean_power(&reverberant);
    if p_sig <= 0.0 {
        return Err(Error::DegenerateScene("silent source signal".into()));
    }

    let noise = match scene.snr_db {
        None => None,
        Some(snr) if snr.is_infinite() => None,
        Some(snr) => {
            let mics: Vec<[f64; 2]> = scene.geometry.mics().to_vec();
            let mut babble = diffuse_babble(&mics, duration, fs, scene.room.c, rng);
            let p_noise = mean_power(&babble.channels);
            if p_noise <= 0.0 {
                return Err(Error::DegenerateScene("noise field is silent".into()));
            }
            let scale = (p_sig / (p_noise * 10f64.powf(snr / 10.0))).sqrt();
            for ch in babble.channels.iter_mut() {
                for v in ch.iter_mut() {
                    *v *= scale;
                }
            }
            Some(babble)
        }
    };
    Ok((MultichannelSignal { channels: reverberant, fs }, noise))
}

/// Render a scene: reverberant source plus diffuse babble at the configured
/// SNR. Deterministic given (scene, rng state).
pub fn render_scene<R: Rng>(
    scene: &Scene,
    duration: f64,
    rng: &mut R,
) -> Result<MultichannelSignal> {
    let (mut sig, noise) = render_scene_parts(scene, duration, rng)?;
    if let Some(noise) = noise {
        for (ch, nch) in sig.channels.iter_mut().zip(&noise.channels) {
            for (v, w) in ch.iter_mut().zip(nch) {
                *v += w;
            }
        }
    }
    Ok(sig)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::arc_array;
    use rustfft::FftPlanner;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn test_room(t60: f64) -> RoomSpec {
        RoomSpec::new([9.0, 5.0, 3.0], t60, 8000.0, 343.0).unwrap()
    }

    fn test_scene(t60: f64, snr_db: Option<f64>) -> Scene {
        let center = [4.5, 2.5, 1.5];
        let doa = 40.0f64;
        let dist = 2.0;
        let src = [
            center[0] + dist * doa.to_radians().cos(),
            center[1] + dist * doa.to_radians().sin(),
            center[2],
        ];
        Scene {
            room: test_room(t60),
            array_center: center,
            geometry: arc_array(),
            source_position: src,
            source_kind: SourceKind::WhiteNoise,
            snr_db,
            ground_truth_doa: doa,
        }
    }

    #[test]
    fn anechoic_rir_is_single_scaled_tap() {
        // Free field, nearest-tap mode: exactly one tap, amplitude 1/(4 pi d).
        let dims = [9.0, 5.0, 3.0];
        let src = [3.0, 2.0, 1.5];
        let mic = [4.0, 2.5, 1.5];
        let rir = image_source_rir(dims, 0.0, src, mic, 8000.0, 343.0, 40.0, 1000, 2.0);
        let nonzero: Vec<(usize, f64)> = rir
            .iter()
            .enumerate()
            .filter(|(_, &v)| v != 0.0)
            .map(|(i, &v)| (i, v))
            .collect();
        assert_eq!(nonzero.len(), 1);
        let dist = (1.0f64 + 0.25).sqrt();
        let expect_idx = (dist * 8000.0 / 343.0).round() as usize;
        assert_eq!(nonzero[0].0, expect_idx);
        let expect_amp = 1.0 / (4.0 * std::f64::consts::PI * dist);
        assert!((nonzero[0].1 - expect_amp).abs() < 1e-12);
    }

    #[test]
    fn fractional_taps_center_on_the_true_delay() {
        // With the sinc kernel, an integer-sample distance collapses to a
        // single tap; a half-sample distance splits symmetrically around it.
        let dims = [9.0, 5.0, 3.0];
        let src = [3.0, 2.5, 1.5];
        let fs = 8000.0;
        let c = 343.0;

        let mic = [3.0 + 40.0 * c / fs, 2.5, 1.5];
        let rir = image_source_rir(dims, 0.0, src, mic, fs, c, 40.0, 1000, 0.0);
        let nonzero: Vec<usize> = (0..rir.len()).filter(|&i| rir[i] != 0.0).collect();
        assert_eq!(nonzero, vec![40]);

        let mic = [3.0 + 40.5 * c / fs, 2.5, 1.5];
        let rir = image_source_rir(dims, 0.0, src, mic, fs, c, 40.0, 1000, 0.0);
        assert!((rir[40] - rir[41]).abs() < 1e-12, "split must be symmetric");
        let peak = rir.iter().fold(0.0f64, |a, &v| a.max(v.abs()));
        assert_eq!(peak, rir[40].abs());
    }

    /// Onset sample: the first tap reaching half the peak magnitude. The
    /// band-limited kernel pre-rings, so tiny early taps are not arrivals.
    fn onset_sample(rir: &[f64]) -> usize {
        let peak = rir.iter().fold(0.0f64, |a, &v| a.max(v.abs()));
        rir.iter().position(|&v| v.abs() >= 0.5 * peak).unwrap()
    }

    #[test]
    fn direct_path_tap_at_geometric_delay() {
        // 1.715 m at 8 kHz / 343 m/s is exactly sample 40.
        let room = test_room(0.3);
        let src = [3.0, 2.5, 1.5];
        let mic = [3.0 + 1.715, 2.5, 1.5];
        let rir = simulate_rir(&room, src, mic).unwrap();
        assert_eq!(onset_sample(&rir), 40);
    }

    #[test]
    fn direct_path_over_random_scenes() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let ranges = SceneRanges::default();
        for _ in 0..100 {
            let scene = sample_scene(
                &ranges,
                arc_array(),
                SourceKind::WhiteNoise,
                &mut rng,
            )
            .unwrap();
            let mic = scene.mic_positions()[0];
            let rir = simulate_rir(&scene.room, scene.source_position, mic).unwrap();
            let first = onset_sample(&rir) as i64;
            let dist: f64 = scene
                .source_position
                .iter()
                .zip(&mic)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            let expect = (dist * scene.room.fs / scene.room.c).round() as i64;
            assert!((first - expect).abs() <= 1, "onset {first} vs {expect}");
        }
    }

    /// Schroeder backward-integration curve in dB relative to total energy.
    fn schroeder_curve(rir: &[f64]) -> Vec<f64> {
        let energy: Vec<f64> = rir.iter().map(|&v| v * v).collect();
        let total: f64 = energy.iter().sum();
        let mut tail = total;
        energy
            .iter()
            .map(|&e| {
                let v = 10.0 * (tail / total).log10();
                tail -= e;
                v
            })
            .collect()
    }

    #[test]
    fn energy_decay_reaches_60_db_near_t60() {
        for t60 in [0.3, 0.5, 0.8] {
            let room = test_room(t60);
            let rir = simulate_rir(&room, [3.0, 2.0, 1.5], [5.5, 3.0, 1.4]).unwrap();
            let curve = schroeder_curve(&rir);
            let crossing =
                curve.iter().position(|&v| v <= -60.0).unwrap() as f64 / room.fs;
            assert!(
                (crossing - t60).abs() <= 0.25 * t60,
                "t60 {t60}: -60 dB reached at {crossing}"
            );
            // Halfway through the decay the curve must sit well inside the
            // slope band; catches reflection coefficients that are far off
            // in either direction.
            let mid = curve[(t60 / 2.0 * room.fs) as usize];
            assert!(
                (-45.0..=-10.0).contains(&mid),
                "t60 {t60}: level at T60/2 is {mid} dB"
            );
        }
    }

    #[test]
    fn sample_scene_respects_ranges() {
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        let ranges = SceneRanges::default();
        for _ in 0..200 {
            let s = sample_scene(&ranges, arc_array(), SourceKind::WhiteNoise, &mut rng).unwrap();
            assert!(s.room.t60 >= 0.13 && s.room.t60 <= 1.0);
            let snr = s.snr_db.unwrap();
            assert!((0.0..=30.0).contains(&snr));
            let class = s.ground_truth_doa / 5.0;
            assert!((class - class.round()).abs() < 1e-9, "doa {}", s.ground_truth_doa);
            let d: f64 = s
                .source_position
                .iter()
                .zip(&s.array_center)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            assert!(d >= 1.0 - 1e-9 && d <= 3.0 + 1e-9);
            s.validate().unwrap();
        }
    }

    #[test]
    fn render_duration_and_determinism() {
        let scene = test_scene(0.2, Some(20.0));
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let sig = render_scene(&scene, 5.0, &mut rng).unwrap();
        assert_eq!(sig.channels.len(), 5);
        assert_eq!(sig.len(), 40000);

        let mut rng2 = ChaCha8Rng::seed_from_u64(23);
        let sig2 = render_scene(&scene, 5.0, &mut rng2).unwrap();
        assert_eq!(sig, sig2);
    }

    #[test]
    fn render_noise_free_contains_source_only() {
        let scene = test_scene(0.2, None);
        let mut r1 = ChaCha8Rng::seed_from_u64(24);
        let (parts, noise) = render_scene_parts(&scene, 1.0, &mut r1).unwrap();
        assert!(noise.is_none());
        let mut r2 = ChaCha8Rng::seed_from_u64(24);
        let sig = render_scene(&scene, 1.0, &mut r2).unwrap();
        assert_eq!(parts, sig);
    }

    #[test]
    fn render_snr_is_exact_on_summands() {
        for (seed, snr) in [(30u64, 0.0), (31, 10.0), (32, 20.0)] {
            let mut scene = test_scene(0.3, Some(snr));
            scene.source_kind = SourceKind::SyntheticSpeech;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (sig, noise) = render_scene_parts(&scene, 1.0, &mut rng).unwrap();
            let noise = noise.unwrap();
            let ratio = mean_power(&sig.channels) / mean_power(&noise.channels);
            let measured_db = 10.0 * ratio.log10();
            assert!((measured_db - snr).abs() < 0.5, "snr {snr}: {measured_db}");
            if snr == 0.0 {
                assert!((ratio - 1.0).abs() < 0.05);
            }
        }
    }

    #[test]
    fn ground_truth_matches_positions() {
        let mut rng = ChaCha8Rng::seed_from_u64(25);
        let ranges = SceneRanges::default();
        for _ in 0..50 {
            let s = sample_scene(&ranges, arc_array(), SourceKind::WhiteNoise, &mut rng).unwrap();
            let recomputed = azimuth_deg(s.array_center, s.source_position);
            assert!(circular_diff(recomputed, s.ground_truth_doa) < 1e-9);
        }
    }

    #[test]
    fn scene_json_roundtrip() {
        let scene = test_scene(0.4, Some(15.0));
        let text = serde_json::to_string_pretty(&scene).unwrap();
        let back: Scene = serde_json::from_str(&text).unwrap();
        assert_eq!(scene, back);
    }

    #[test]
    fn babble_coincident_mics_fully_coherent() {
        let mics = vec![[0.0, 0.0], [0.0, 0.0]];
        let mut rng = ChaCha8Rng::seed_from_u64(26);
        let b = diffuse_babble(&mics, 1.0, 8000.0, 343.0, &mut rng);
        assert_eq!(b.channels[0], b.channels[1]);
    }

    /// Band-averaged magnitude-squared coherence from Welch-style periodograms.
    fn coherence_band(x: &[f64], y: &[f64], fs: f64, band: (f64, f64)) -> f64 {
        let n = 256;
        let mut planner = FftPlanner::new();
        let fft = planner.plan_fft_forward(n);
        let segs = x.len() / n;
        let mut sxx = vec![0.0; n];
        let mut syy = vec![0.0; n];
        let mut sxy = vec![Complex64::new(0.0, 0.0); n];
        for s in 0..segs {
            let mut bx: Vec<Complex64> = x[s * n..(s + 1) * n]
                .iter()
                .map(|&v| Complex64::new(v, 0.0))
                .collect();
            let mut by: Vec<Complex64> = y[s * n..(s + 1) * n]
                .iter()
                .map(|&v| Complex64::new(v, 0.0))
                .collect();
            fft.process(&mut bx);
            fft.process(&mut by);
            for i in 0..n {
                sxx[i] += bx[i].norm_sqr();
                syy[i] += by[i].norm_sqr();
                sxy[i] += bx[i] * by[i].conj();
            }
        }
        let mut acc = 0.0;
        let mut count = 0;
        for i in 0..n / 2 {
            let f = i as f64 * fs / n as f64;
            if f >= band.0 && f < band.1 {
                acc += sxy[i].norm_sqr() / (sxx[i] * syy[i]).max(1e-30);
                count += 1;
            }
        }
        acc / count as f64
    }

    #[test]
    fn babble_coherence_decreases_with_frequency_for_wide_spacing() {
        let mics = vec![[-0.3, 0.0], [0.3, 0.0]];
        let mut rng = ChaCha8Rng::seed_from_u64(27);
        let b = diffuse_babble(&mics, 8.0, 8000.0, 343.0, &mut rng);
        let low = coherence_band(&b.channels[0], &b.channels[1], 8000.0, (100.0, 400.0));
        let high = coherence_band(&b.channels[0], &b.channels[1], 8000.0, (2000.0, 3400.0));
        assert!(
            low > high,
            "expected diffuse-like coherence decay: low {low} vs high {high}"
        );
    }

    #[test]
    fn babble_long_term_spectrum_tracks_envelope() {
        let mics = vec![[0.0, 0.0], [0.1, 0.0]];
        let mut rng = ChaCha8Rng::seed_from_u64(28);
        let b = diffuse_babble(&mics, 16.0, 8000.0, 343.0, &mut rng);
        let x = &b.channels[0];

        // Welch periodogram, 512-point segments.
        let n = 512;
        let mut planner = FftPlanner::new();
        let fft = planner.plan_fft_forward(n);
        let mut psd = vec![0.0; n];
        for s in 0..x.len() / n {
            let mut buf: Vec<Complex64> = x[s * n..(s + 1) * n]
                .iter()
                .map(|&v| Complex64::new(v, 0.0))
                .collect();
            fft.process(&mut buf);
            for i in 0..n {
                psd[i] += buf[i].norm_sqr();
            }
        }
        // Octave bands within the shaped region; compare measured band power
        // against the envelope prediction, each normalized to the first band.
        let bands = [(250.0, 500.0), (500.0, 1000.0), (1000.0, 2000.0), (2000.0, 4000.0)];
        let band_power = |lo: f64, hi: f64| -> f64 {
            let mut acc = 0.0;
            let mut cnt = 0;
            for i in 0..n / 2 {
                let f = i as f64 * 8000.0 / n as f64;
                if f >= lo && f < hi {
                    acc += psd[i];
                    cnt += 1;
                }
            }
            acc / cnt as f64
        };
        let envelope_power = |lo: f64, hi: f64| -> f64 {
            let steps = 64;
            (0..steps)
                .map(|i| {
                    let f = lo + (i as f64 + 0.5) * (hi - lo) / steps as f64;
                    speech_envelope(f).powi(2)
                })
                .sum::<f64>()
                / steps as f64
        };
        let p0 = band_power(bands[0].0, bands[0].1);
        let e0 = envelope_power(bands[0].0, bands[0].1);
        for &(lo, hi) in &bands[1..] {
            let measured_db = 10.0 * (band_power(lo, hi) / p0).log10();
            let expect_db = 10.0 * (envelope_power(lo, hi) / e0).log10();
            assert!(
                (measured_db - expect_db).abs() < 3.0,
                "band {lo}-{hi}: measured {measured_db} dB vs {expect_db} dB"
            );
        }
    }

    #[test]
    fn wav_source_short_file_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("short.wav");
        let spec = hound::WavSpec {
            channels: 1,
            sample_rate: 8000,
            bits_per_sample: 16,
            sample_format: hound::SampleFormat::Int,
        };
        let mut w = hound::WavWriter::create(&path, spec).unwrap();
        for i in 0..1000 {
            w.write_sample((i % 128) as i16 * 100).unwrap();
        }
        w.finalize().unwrap();

        let mut scene = test_scene(0.2, None);
        scene.source_kind = SourceKind::SpeechWav { path };
        let mut rng = ChaCha8Rng::seed_from_u64(29);
        assert!(matches!(
            render_scene(&scene, 1.0, &mut rng),
            Err(Error::Ingestion(_))
        ));
    }
}
