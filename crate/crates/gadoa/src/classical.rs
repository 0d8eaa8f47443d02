//! Model-based baselines: far-field SRP-PHAT over the class grid and
//! incoherently averaged narrowband MUSIC.
//!
//! Both algorithms run on the speech band (300 Hz - 3.4 kHz); DC and Nyquist
//! bins are degenerate for phase-based processing and excluded.

use std::io::Write;

use num_complex::Complex64;
use rand::Rng;

use crate::error::{Error, Result};
use crate::features::FrameSpectra;
use crate::geometry::{mic_delay, steering_delay, ArrayGeometry};

/// Processing band in Hz.
pub const BAND_HZ: (f64, f64) = (300.0, 3400.0);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MapAlgorithm {
    SrpPhat,
    Music,
}

/// Acoustic map over candidate DoAs.
#[derive(Debug, Clone, PartialEq)]
pub struct PowerMap {
    pub values: Vec<f64>,
    pub algorithm: MapAlgorithm,
}

impl PowerMap {
    pub fn write_csv<W: Write>(&self, w: &mut W, grid: &[f64]) -> Result<()> {
        writeln!(w, "theta_degrees,value")?;
        for (theta, v) in grid.iter().zip(&self.values) {
            writeln!(w, "{theta},{v}")?;
        }
        Ok(())
    }
}

/// The candidate azimuth grid: class centers i * 360 / C.
pub fn doa_grid(classes: usize) -> Vec<f64> {
    (0..classes)
        .map(|i| i as f64 * 360.0 / classes as f64)
        .collect()
}

/// FFT bin indices covering [`BAND_HZ`].
pub fn band_bins(fft_len: usize, fs: f64) -> std::ops::RangeInclusive<usize> {
    let df = fs / fft_len as f64;
    let lo = (BAND_HZ.0 / df).ceil() as usize;
    let hi = ((BAND_HZ.1 / df).floor() as usize).min(fft_len / 2 - 1);
    lo..=hi
}

fn frame_is_silent(frame: &FrameSpectra) -> bool {
    frame
        .channels
        .iter()
        .all(|ch| ch.iter().all(|v| v.norm_sqr() == 0.0))
}

/// Steered response power with PHAT weighting: per candidate azimuth, the
/// real part of the frame-averaged phase-normalized cross-spectra rotated by
/// the pairwise steering delays, summed over pairs and band bins. Silent
/// frames are skipped.
pub fn srp_phat_map(
    frames: &[FrameSpectra],
    geom: &ArrayGeometry,
    grid: &[f64],
    c: f64,
) -> Result<PowerMap> {
    if frames.is_empty() {
        return Err(Error::EmptyInput("no frames".into()));
    }
    let fft_len = frames[0].fft_len();
    let fs = frames[0].fs;
    let bins: Vec<usize> = band_bins(fft_len, fs).collect();
    let pairs = geom.pairs();

    // Frame-averaged unit-modulus cross-spectra; the steering rotation is
    // frame-independent so the average can be taken first.
    let mut gamma = vec![vec![Complex64::new(0.0, 0.0); bins.len()]; pairs.len()];
    let mut used = 0usize;
    for frame in frames {
        if frame.channels.len() != geom.mic_count() {
            return Err(Error::FeatureShape {
                expected: geom.mic_count(),
                got: frame.channels.len(),
            });
        }
        if frame_is_silent(frame) {
            continue;
        }
        used += 1;
        for (pi, &(k, l)) in pairs.iter().enumerate() {
            for (bi, &bin) in bins.iter().enumerate() {
                let g = frame.channels[k][bin].conj() * frame.channels[l][bin];
                let mag = g.norm();
                if mag > 1e-12 {
                    gamma[pi][bi] += g / mag;
                }
            }
        }
    }
    if used == 0 {
        return Err(Error::EstimationFailure("all frames are silent".into()));
    }
    let norm = 1.0 / used as f64;

    let values = grid
        .iter()
        .map(|&theta| {
            let mut acc = 0.0;
            for (pi, &(k, l)) in pairs.iter().enumerate() {
                let tau = steering_delay(geom, k, l, theta, c);
                for (bi, &bin) in bins.iter().enumerate() {
                    let f = bin as f64 * fs / fft_len as f64;
                    let rot = Complex64::from_polar(1.0, std::f64::consts::TAU * f * tau);
                    // Ordered pairs (k,l) and (l,k) are conjugates; summing
                    // both equals twice the real part.
                    acc += 2.0 * (gamma[pi][bi] * norm * rot).re;
                }
            }
            acc
        })
        .collect();
    Ok(PowerMap {
        values,
        algorithm: MapAlgorithm::SrpPhat,
    })
}

/// Per-bin sample covariance matrices averaged over frames.
#[derive(Debug, Clone)]
pub struct CovarianceSet {
    pub dim: usize,
    pub fft_len: usize,
    pub fs: f64,
    pub bins: Vec<usize>,
    /// Row-major dim x dim Hermitian matrix per bin.
    pub matrices: Vec<Vec<Complex64>>,
}

/// Sample covariance (1/F) sum Y Y^H per band bin; all-zero frames are
/// skipped. Hermitian symmetry holds exactly by construction.
pub fn covariance(frames: &[FrameSpectra]) -> Result<CovarianceSet> {
    if frames.is_empty() {
        return Err(Error::EmptyInput("no frames".into()));
    }
    let fft_len = frames[0].fft_len();
    let fs = frames[0].fs;
    let m = frames[0].channels.len();
    let bins: Vec<usize> = band_bins(fft_len, fs).collect();
    let mut matrices = vec![vec![Complex64::new(0.0, 0.0); m * m]; bins.len()];
    let mut used = 0usize;
    for frame in frames {
        if frame_is_silent(frame) {
            continue;
        }
        used += 1;
        for (bi, &bin) in bins.iter().enumerate() {
            let mat = &mut matrices[bi];
            for a in 0..m {
                let ya = frame.channels[a][bin];
                for b in a..m {
                    mat[a * m + b] += ya * frame.channels[b][bin].conj();
                }
            }
        }
    }
    if used == 0 {
        return Err(Error::EstimationFailure("all frames are silent".into()));
    }
    let norm = 1.0 / used as f64;
    for mat in matrices.iter_mut() {
        for a in 0..m {
            for b in a..m {
                mat[a * m + b] *= norm;
                if a == b {
                    mat[a * m + b].im = 0.0;
                } else {
                    mat[b * m + a] = mat[a * m + b].conj();
                }
            }
        }
    }
    Ok(CovarianceSet {
        dim: m,
        fft_len,
        fs,
        bins,
        matrices,
    })
}

/// Eigendecomposition of a Hermitian matrix by cyclic Jacobi with unitary
/// 2x2 rotations. Returns eigenvalues in ascending order and the matching
/// orthonormal eigenvectors, column-major.
pub fn eigh(h: &[Complex64], m: usize) -> Result<(Vec<f64>, Vec<Complex64>)> {
    if h.len() != m * m {
        return Err(Error::Numeric(format!(
            "matrix buffer of {} entries is not {m}x{m}",
            h.len()
        )));
    }
    let scale = h.iter().map(|v| v.norm()).fold(0.0f64, f64::max).max(1.0);
    for i in 0..m {
        for j in 0..m {
            if (h[i * m + j] - h[j * m + i].conj()).norm() > 1e-9 * scale {
                return Err(Error::Numeric("matrix is not Hermitian".into()));
            }
        }
    }

    let mut a = h.to_vec();
    for i in 0..m {
        a[i * m + i].im = 0.0;
    }
    let mut v = vec![Complex64::new(0.0, 0.0); m * m];
    for i in 0..m {
        v[i * m + i] = Complex64::new(1.0, 0.0);
    }

    let fro = |a: &[Complex64]| a.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt();
    let off = |a: &[Complex64]| {
        (0..m)
            .flat_map(|i| (0..m).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[i * m + j].norm_sqr())
            .sum::<f64>()
            .sqrt()
    };
    let total = fro(&a).max(1e-300);

    let mut converged = false;
    for _sweep in 0..60 {
        if off(&a) <= 1e-14 * total {
            converged = true;
            break;
        }
        for p in 0..m - 1 {
            for q in p + 1..m {
                let hpq = a[p * m + q];
                let mag = hpq.norm();
                if mag <= 1e-300 {
                    continue;
                }
                let phi = hpq.arg();
                let app = a[p * m + p].re;
                let aqq = a[q * m + q].re;
                let theta = (aqq - app) / (2.0 * mag);
                let t = if theta == 0.0 {
                    1.0
                } else {
                    theta.signum() / (theta.abs() + (1.0 + theta * theta).sqrt())
                };
                let cos = 1.0 / (1.0 + t * t).sqrt();
                let sin = t * cos;
                let e_pos = Complex64::from_polar(1.0, phi);
                let e_neg = e_pos.conj();

                // Column update: A <- A U with U = [[e^{i phi} c, e^{i phi} s],
                // [-s, c]] acting on columns p, q.
                for i in 0..m {
                    let aip = a[i * m + p];
                    let aiq = a[i * m + q];
                    a[i * m + p] = aip * e_pos * cos - aiq * sin;
                    a[i * m + q] = aip * e_pos * sin + aiq * cos;
                }
                // Row update: A <- U^H A.
                for j in 0..m {
                    let apj = a[p * m + j];
                    let aqj = a[q * m + j];
                    a[p * m + j] = apj * e_neg * cos - aqj * sin;
                    a[q * m + j] = apj * e_neg * sin + aqj * cos;
                }
                // Accumulate eigenvectors.
                for i in 0..m {
                    let vip = v[i * m + p];
                    let viq = v[i * m + q];
                    v[i * m + p] = vip * e_pos * cos - viq * sin;
                    v[i * m + q] = vip * e_pos * sin + viq * cos;
                }
            }
        }
    }
    if !converged && off(&a) > 1e-10 * total {
        return Err(Error::Numeric("Jacobi eigensolver did not converge".into()));
    }

    let mut order: Vec<usize> = (0..m).collect();
    let diag: Vec<f64> = (0..m).map(|i| a[i * m + i].re).collect();
    order.sort_by(|&i, &j| diag[i].total_cmp(&diag[j]));
    let eigenvalues: Vec<f64> = order.iter().map(|&i| diag[i]).collect();
    let mut eigenvectors = vec![Complex64::new(0.0, 0.0); m * m];
    for (col, &src) in order.iter().enumerate() {
        for i in 0..m {
            eigenvectors[col * m + i] = v[i * m + src];
        }
    }
    Ok((eigenvalues, eigenvectors))
}

/// MUSIC pseudo-spectrum, incoherently averaged over the band bins. For each
/// bin the noise subspace is spanned by the eigenvectors of the
/// `dim - n_sources` smallest eigenvalues; the per-bin spectrum is
/// 1 / ||E_N^H a(theta)||^2 with unit-modulus steering entries
/// a_m = exp(-j w tau_m) relative to the array centroid.
pub fn music_map(
    cov: &CovarianceSet,
    geom: &ArrayGeometry,
    grid: &[f64],
    n_sources: usize,
    c: f64,
) -> Result<PowerMap> {
    let m = cov.dim;
    if m != geom.mic_count() {
        return Err(Error::FeatureShape {
            expected: geom.mic_count(),
            got: m,
        });
    }
    if n_sources >= m {
        return Err(Error::EstimationFailure(format!(
            "MUSIC needs more microphones ({m}) than sources ({n_sources})"
        )));
    }
    let n_noise = m - n_sources;
    let mut values = vec![0.0; grid.len()];

    // Per-microphone steering delays are angle-dependent but bin-independent.
    let delays: Vec<Vec<f64>> = grid
        .iter()
        .map(|&theta| (0..m).map(|mi| mic_delay(geom, mi, theta, c)).collect())
        .collect();

    for (bi, mat) in cov.matrices.iter().enumerate() {
        let (_, vecs) = eigh(mat, m)?;
        let noise = &vecs[..n_noise * m];
        let f = cov.bins[bi] as f64 * cov.fs / cov.fft_len as f64;
        let omega = std::f64::consts::TAU * f;
        for (gi, taus) in delays.iter().enumerate() {
            let a: Vec<Complex64> = taus
                .iter()
                .map(|&tau| Complex64::from_polar(1.0, -omega * tau))
                .collect();
            let mut denom = 0.0;
            for col in 0..n_noise {
                let mut dot = Complex64::new(0.0, 0.0);
                for i in 0..m {
                    dot += noise[col * m + i].conj() * a[i];
                }
                denom += dot.norm_sqr();
            }
            values[gi] += 1.0 / denom.max(1e-12);
        }
    }
    let norm = 1.0 / cov.matrices.len() as f64;
    for v in values.iter_mut() {
        *v *= norm;
    }
    Ok(PowerMap {
        values,
        algorithm: MapAlgorithm::Music,
    })
}

/// Synthesize noise-free far-field frames: one plane wave from `theta_deg`
/// with a fresh random flat spectrum per frame, delayed per microphone
/// relative to the array centroid. Useful for steering sanity checks and
/// calibration.
pub fn plane_wave_spectra<R: Rng>(
    geom: &ArrayGeometry,
    theta_deg: f64,
    fft_len: usize,
    fs: f64,
    c: f64,
    n_frames: usize,
    rng: &mut R,
) -> Vec<FrameSpectra> {
    let m = geom.mic_count();
    let delays: Vec<f64> = (0..m).map(|mi| mic_delay(geom, mi, theta_deg, c)).collect();
    (0..n_frames)
        .map(|_| {
            let mut channels = vec![vec![Complex64::new(0.0, 0.0); fft_len]; m];
            for bin in 1..fft_len / 2 {
                let s = Complex64::from_polar(1.0, rng.random_range(0.0..std::f64::consts::TAU));
                let f = bin as f64 * fs / fft_len as f64;
                for (mi, ch) in channels.iter_mut().enumerate() {
                    let phase = Complex64::from_polar(1.0, -std::f64::consts::TAU * f * delays[mi]);
                    ch[bin] = s * phase;
                    ch[fft_len - bin] = (s * phase).conj();
                }
            }
            FrameSpectra { channels, fs }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimate::{frame_estimate, NUM_CLASSES};
    use crate::geometry::arc_array;
    use crate::SPEED_OF_SOUND;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn c64(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn eigh_identity_and_diagonal() {
        let m = 3;
        let mut h = vec![c64(0.0, 0.0); 9];
        for i in 0..m {
            h[i * m + i] = c64(1.0, 0.0);
        }
        let (vals, _) = eigh(&h, m).unwrap();
        assert!(vals.iter().all(|&v| (v - 1.0).abs() < 1e-12));

        let mut h = vec![c64(0.0, 0.0); 9];
        h[0] = c64(3.0, 0.0);
        h[4] = c64(1.0, 0.0);
        h[8] = c64(2.0, 0.0);
        let (vals, vecs) = eigh(&h, m).unwrap();
        assert!((vals[0] - 1.0).abs() < 1e-12);
        assert!((vals[1] - 2.0).abs() < 1e-12);
        assert!((vals[2] - 3.0).abs() < 1e-12);
        // Eigenvector of the smallest eigenvalue is e_1.
        assert!((vecs[1].norm() - 1.0).abs() < 1e-12);
    }

    fn random_hermitian(m: usize, rng: &mut ChaCha8Rng) -> Vec<Complex64> {
        let mut h = vec![c64(0.0, 0.0); m * m];
        for i in 0..m {
            h[i * m + i] = c64(rng.random_range(-2.0..2.0), 0.0);
            for j in i + 1..m {
                let v = c64(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
                h[i * m + j] = v;
                h[j * m + i] = v.conj();
            }
        }
        h
    }

    #[test]
    fn eigh_reconstructs_random_hermitian() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        for _ in 0..20 {
            let m = 5;
            let h = random_hermitian(m, &mut rng);
            let (vals, vecs) = eigh(&h, m).unwrap();
            let hnorm = h.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt();

            // Residual ||H v - lambda v|| per pair.
            for col in 0..m {
                let v: &[Complex64] = &vecs[col * m..(col + 1) * m];
                let mut res = 0.0f64;
                for i in 0..m {
                    let mut hv = c64(0.0, 0.0);
                    for j in 0..m {
                        hv += h[i * m + j] * v[j];
                    }
                    res += (hv - v[i] * vals[col]).norm_sqr();
                }
                assert!(res.sqrt() < 1e-8 * hnorm, "residual {}", res.sqrt());
            }
            // Orthonormality.
            for a in 0..m {
                for b in 0..m {
                    let mut dot = c64(0.0, 0.0);
                    for i in 0..m {
                        dot += vecs[a * m + i].conj() * vecs[b * m + i];
                    }
                    let expect = if a == b { 1.0 } else { 0.0 };
                    assert!((dot.norm() - expect).abs() < 1e-9);
                }
            }
            // Ascending order.
            for i in 1..m {
                assert!(vals[i] >= vals[i - 1]);
            }
        }
    }

    #[test]
    fn eigh_rejects_non_hermitian() {
        let mut h = vec![c64(0.0, 0.0); 4];
        h[0] = c64(1.0, 0.0);
        h[1] = c64(1.0, 0.5);
        h[2] = c64(1.0, 0.5); // should be the conjugate
        h[3] = c64(1.0, 0.0);
        assert!(matches!(eigh(&h, 2), Err(Error::Numeric(_))));
    }

    #[test]
    fn eigh_handles_rank_deficient_matrices() {
        // a a^H has one nonzero eigenvalue and an (m-1)-fold zero eigenvalue;
        // the zero eigenvectors must still be orthonormal and orthogonal to a.
        let m = 4;
        let a: Vec<Complex64> = (0..m)
            .map(|i| Complex64::from_polar(1.0, 0.7 * i as f64))
            .collect();
        let mut h = vec![c64(0.0, 0.0); m * m];
        for i in 0..m {
            for j in 0..m {
                h[i * m + j] = a[i] * a[j].conj();
            }
        }
        let (vals, vecs) = eigh(&h, m).unwrap();
        assert!(vals[..m - 1].iter().all(|&v| v.abs() < 1e-9));
        assert!((vals[m - 1] - m as f64).abs() < 1e-9);
        for col in 0..m - 1 {
            let mut dot = c64(0.0, 0.0);
            for i in 0..m {
                dot += vecs[col * m + i].conj() * a[i];
            }
            assert!(dot.norm() < 1e-8, "noise vector not orthogonal to signal");
        }
    }

    #[test]
    fn covariance_single_frame_is_rank_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(32);
        let frames = plane_wave_spectra(&arc_array(), 80.0, 256, 8000.0, SPEED_OF_SOUND, 1, &mut rng);
        let cov = covariance(&frames).unwrap();
        for mat in &cov.matrices {
            let (vals, _) = eigh(mat, cov.dim).unwrap();
            let largest = vals[cov.dim - 1];
            for &v in &vals[..cov.dim - 1] {
                assert!(v.abs() < 1e-9 * largest.max(1.0));
            }
        }
    }

    #[test]
    fn covariance_is_exactly_hermitian() {
        let mut rng = ChaCha8Rng::seed_from_u64(33);
        let frames = plane_wave_spectra(&arc_array(), 10.0, 256, 8000.0, SPEED_OF_SOUND, 7, &mut rng);
        let cov = covariance(&frames).unwrap();
        let m = cov.dim;
        for mat in &cov.matrices {
            for i in 0..m {
                for j in 0..m {
                    assert_eq!(mat[i * m + j], mat[j * m + i].conj());
                }
            }
        }
    }

    #[test]
    fn covariance_of_white_noise_is_near_identity() {
        // 10^4 independent frames: off-diagonals vanish, diagonals agree
        // within 10%.
        let mut rng = ChaCha8Rng::seed_from_u64(34);
        let m = 3;
        let fft_len = 256;
        let frames: Vec<FrameSpectra> = (0..10_000)
            .map(|_| {
                let channels = (0..m)
                    .map(|_| {
                        let mut ch = vec![c64(0.0, 0.0); fft_len];
                        for bin in 1..fft_len / 2 {
                            let v = Complex64::from_polar(
                                1.0,
                                rng.random_range(0.0..std::f64::consts::TAU),
                            );
                            ch[bin] = v;
                            ch[fft_len - bin] = v.conj();
                        }
                        ch
                    })
                    .collect();
                FrameSpectra {
                    channels,
                    fs: 8000.0,
                }
            })
            .collect();
        let cov = covariance(&frames).unwrap();
        for mat in cov.matrices.iter().step_by(17) {
            for i in 0..m {
                for j in 0..m {
                    let v = mat[i * m + j].norm();
                    if i == j {
                        assert!((v - 1.0).abs() < 0.1, "diagonal {v}");
                    } else {
                        assert!(v < 0.1, "off-diagonal {v}");
                    }
                }
            }
        }
    }

    #[test]
    fn srp_recovers_grid_aligned_plane_waves() {
        let mut rng = ChaCha8Rng::seed_from_u64(35);
        let geom = arc_array();
        let grid = doa_grid(NUM_CLASSES);
        for &theta in &[0.0, 45.0, 120.0, 215.0, 355.0] {
            let frames =
                plane_wave_spectra(&geom, theta, 256, 8000.0, SPEED_OF_SOUND, 4, &mut rng);
            let map = srp_phat_map(&frames, &geom, &grid, SPEED_OF_SOUND).unwrap();
            let est = frame_estimate(&map.values).unwrap();
            assert!(
                crate::estimate::circular_error(est, theta) < 0.5,
                "theta {theta}: estimated {est}"
            );
        }
    }

    #[test]
    fn srp_two_mic_map_is_symmetric_about_the_axis() {
        // A pair along the x-axis cannot tell front from back: the map must
        // be symmetric under theta -> -theta.
        let geom = crate::geometry::ArrayGeometry::new(vec![[-0.1, 0.0], [0.1, 0.0]]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(36);
        let frames = plane_wave_spectra(&geom, 70.0, 256, 8000.0, SPEED_OF_SOUND, 3, &mut rng);
        let grid = doa_grid(NUM_CLASSES);
        let map = srp_phat_map(&frames, &geom, &grid, SPEED_OF_SOUND).unwrap();
        for i in 1..NUM_CLASSES {
            let mirrored = NUM_CLASSES - i;
            assert!(
                (map.values[i] - map.values[mirrored]).abs() < 1e-9,
                "asymmetry at class {i}"
            );
        }
    }

    #[test]
    fn srp_is_invariant_to_global_gain() {
        let mut rng = ChaCha8Rng::seed_from_u64(37);
        let geom = arc_array();
        let frames = plane_wave_spectra(&geom, 100.0, 256, 8000.0, SPEED_OF_SOUND, 2, &mut rng);
        let scaled: Vec<FrameSpectra> = frames
            .iter()
            .map(|f| FrameSpectra {
                channels: f
                    .channels
                    .iter()
                    .map(|ch| ch.iter().map(|&v| v * 10.0).collect())
                    .collect(),
                fs: f.fs,
            })
            .collect();
        let grid = doa_grid(NUM_CLASSES);
        let a = srp_phat_map(&frames, &geom, &grid, SPEED_OF_SOUND).unwrap();
        let b = srp_phat_map(&scaled, &geom, &grid, SPEED_OF_SOUND).unwrap();
        for (x, y) in a.values.iter().zip(&b.values) {
            assert!((x - y).abs() < 1e-9);
        }
    }

    #[test]
    fn srp_rejects_all_silent() {
        let geom = arc_array();
        let frames = vec![FrameSpectra {
            channels: vec![vec![c64(0.0, 0.0); 256]; 5],
            fs: 8000.0,
        }];
        let grid = doa_grid(NUM_CLASSES);
        assert!(matches!(
            srp_phat_map(&frames, &geom, &grid, SPEED_OF_SOUND),
            Err(Error::EstimationFailure(_))
        ));
    }

    #[test]
    fn music_recovers_synthetic_narrowband_source() {
        // Covariance built analytically as a a^H + eps I at a grid angle.
        let geom = arc_array();
        let m = geom.mic_count();
        let grid = doa_grid(NUM_CLASSES);
        let theta = 125.0;
        let fft_len = 256;
        let fs = 8000.0;
        let bins: Vec<usize> = band_bins(fft_len, fs).collect();
        let matrices: Vec<Vec<Complex64>> = bins
            .iter()
            .map(|&bin| {
                let f = bin as f64 * fs / fft_len as f64;
                let omega = std::f64::consts::TAU * f;
                let a: Vec<Complex64> = (0..m)
                    .map(|mi| {
                        Complex64::from_polar(1.0, -omega * mic_delay(&geom, mi, theta, SPEED_OF_SOUND))
                    })
                    .collect();
                let mut mat = vec![c64(0.0, 0.0); m * m];
                for i in 0..m {
                    for j in 0..m {
                        mat[i * m + j] = a[i] * a[j].conj();
                    }
                    mat[i * m + i] += 1e-6;
                }
                mat
            })
            .collect();
        let cov = CovarianceSet {
            dim: m,
            fft_len,
            fs,
            bins,
            matrices,
        };
        let map = music_map(&cov, &geom, &grid, 1, SPEED_OF_SOUND).unwrap();
        let est = frame_estimate(&map.values).unwrap();
        assert!(
            crate::estimate::circular_error(est, theta) < 0.5,
            "estimated {est}"
        );
        assert!(map.values.iter().all(|&v| v > 0.0 && v.is_finite()));
    }

    #[test]
    fn music_argmax_invariant_to_covariance_scale() {
        let mut rng = ChaCha8Rng::seed_from_u64(38);
        let geom = arc_array();
        let frames = plane_wave_spectra(&geom, 230.0, 256, 8000.0, SPEED_OF_SOUND, 6, &mut rng);
        let cov = covariance(&frames).unwrap();
        let scaled = CovarianceSet {
            matrices: cov
                .matrices
                .iter()
                .map(|mat| mat.iter().map(|&v| v * 3.0).collect())
                .collect(),
            bins: cov.bins.clone(),
            ..cov
        };
        let grid = doa_grid(NUM_CLASSES);
        let a = music_map(&cov, &geom, &grid, 1, SPEED_OF_SOUND).unwrap();
        let b = music_map(&scaled, &geom, &grid, 1, SPEED_OF_SOUND).unwrap();
        let argmax = |v: &[f64]| {
            v.iter()
                .enumerate()
                .max_by(|x, y| x.1.total_cmp(y.1))
                .unwrap()
                .0
        };
        assert_eq!(argmax(&a.values), argmax(&b.values));
    }

    #[test]
    fn music_needs_more_mics_than_sources() {
        let mut rng = ChaCha8Rng::seed_from_u64(39);
        let geom = arc_array();
        let frames = plane_wave_spectra(&geom, 10.0, 256, 8000.0, SPEED_OF_SOUND, 2, &mut rng);
        let cov = covariance(&frames).unwrap();
        let grid = doa_grid(NUM_CLASSES);
        assert!(music_map(&cov, &geom, &grid, 5, SPEED_OF_SOUND).is_err());
    }

    #[test]
    fn steering_vector_entries_are_unit_modulus() {
        let geom = arc_array();
        for theta in [0.0, 33.0, 181.5] {
            for mi in 0..geom.mic_count() {
                let tau = mic_delay(&geom, mi, theta, SPEED_OF_SOUND);
                let a = Complex64::from_polar(1.0, -std::f64::consts::TAU * 1000.0 * tau);
                assert!((a.norm() - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn band_bins_cover_speech_band() {
        let bins = band_bins(256, 8000.0);
        assert_eq!(*bins.start(), 10);
        assert_eq!(*bins.end(), 108);
    }

    #[test]
    fn powermap_csv() {
        let map = PowerMap {
            values: vec![1.0, 2.5],
            algorithm: MapAlgorithm::SrpPhat,
        };
        let mut buf = Vec::new();
        map.write_csv(&mut buf, &[0.0, 5.0]).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "theta_degrees,value\n0,1\n5,2.5\n"
        );
    }
}
