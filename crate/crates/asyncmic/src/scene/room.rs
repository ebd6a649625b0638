//! Shoebox room geometry and image-source impulse response synthesis.
//!
//! Images use a frequency-independent reflection coefficient and are placed
//! with fractional-delay windowed-sinc taps. Amplitude of an image after
//! `o` wall reflections at distance `d` is `beta^o / d`.

use serde::{Deserialize, Serialize};

use crate::dsp::frac;
use crate::error::{Error, Result};

pub const SPEED_OF_SOUND: f64 = 343.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoomSpec {
    /// Room dimensions in meters.
    pub dims: [f64; 3],
    /// Frequency-independent wall reflection coefficient in [0, 1).
    pub reflection_coeff: f64,
    /// Maximum total number of wall reflections per image.
    pub max_image_order: usize,
    /// Nominal sample rate.
    pub sample_rate_hz: f64,
}

impl RoomSpec {
    pub fn validate(&self) -> Result<()> {
        if self.dims.iter().any(|&d| d <= 1.0) {
            return Err(Error::InvalidGeometry(format!(
                "room dims must all exceed 1.0 m, got {:?}",
                self.dims
            )));
        }
        if !(0.0..1.0).contains(&self.reflection_coeff) {
            return Err(Error::InvalidGeometry(format!(
                "reflection coefficient must lie in [0, 1), got {}",
                self.reflection_coeff
            )));
        }
        if self.sample_rate_hz <= 0.0 {
            return Err(Error::Config("sample rate must be positive".into()));
        }
        Ok(())
    }

    pub fn contains(&self, p: &[f64; 3]) -> bool {
        p.iter().zip(&self.dims).all(|(&x, &d)| x > 0.0 && x < d)
    }
}

/// One mirror image of the source: arrival time in (fractional) samples
/// and signed amplitude.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ImageSource {
    pub delay_samples: f64,
    pub amplitude: f64,
    pub order: usize,
}

fn dist(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Enumerate all image sources up to the room's maximum order.
pub fn image_sources(room: &RoomSpec, src: &[f64; 3], mic: &[f64; 3]) -> Result<Vec<ImageSource>> {
    room.validate()?;
    for (label, p) in [("source", src), ("microphone", mic)] {
        if !room.contains(p) {
            return Err(Error::InvalidGeometry(format!(
                "{label} position {p:?} outside room {:?}",
                room.dims
            )));
        }
    }
    if dist(src, mic) < 1e-9 {
        return Err(Error::InvalidGeometry(
            "source and microphone coincide (zero distance)".into(),
        ));
    }
    let n = room.max_image_order as i64;
    let r_max = (n + 1) / 2 + 1;
    let mut images = Vec::new();
    for px in 0..2i64 {
        for py in 0..2i64 {
            for pz in 0..2i64 {
                for rx in -r_max..=r_max {
                    for ry in -r_max..=r_max {
                        for rz in -r_max..=r_max {
                            let p = [px, py, pz];
                            let r = [rx, ry, rz];
                            let order: i64 = (0..3)
                                .map(|i| (r[i] - p[i]).abs() + r[i].abs())
                                .sum();
                            if order > n {
                                continue;
                            }
                            let mut img = [0.0; 3];
                            for i in 0..3 {
                                img[i] = (1 - 2 * p[i]) as f64 * src[i]
                                    + 2.0 * r[i] as f64 * room.dims[i];
                            }
                            let d = dist(&img, mic);
                            images.push(ImageSource {
                                delay_samples: d / SPEED_OF_SOUND * room.sample_rate_hz,
                                amplitude: room.reflection_coeff.powi(order as i32) / d,
                                order: order as usize,
                            });
                        }
                    }
                }
            }
        }
    }
    images.sort_by(|a, b| a.delay_samples.partial_cmp(&b.delay_samples).unwrap());
    Ok(images)
}

/// Render the image list into a causal FIR with fractional-delay taps.
pub fn generate_rir(room: &RoomSpec, src: &[f64; 3], mic: &[f64; 3]) -> Result<Vec<f64>> {
    let images = image_sources(room, src, mic)?;
    let max_delay = images
        .iter()
        .map(|i| i.delay_samples)
        .fold(0.0f64, f64::max);
    let len = max_delay.ceil() as usize + frac::KERNEL_HALF + 2;
    let mut rir = vec![0.0; len];
    for img in &images {
        let base = img.delay_samples.floor();
        if (img.delay_samples - base).abs() < 1e-9 {
            let idx = base as usize;
            rir[idx] += img.amplitude;
            continue;
        }
        let b = base as i64;
        for k in -(frac::KERNEL_HALF as i64 - 1)..=(frac::KERNEL_HALF as i64) {
            let n = b + k;
            if n >= 0 && (n as usize) < len {
                rir[n as usize] += img.amplitude * frac::kernel(n as f64 - img.delay_samples);
            }
        }
    }
    Ok(rir)
}

/// Direct-path window half-widths around the dominant tap, in samples.
pub const DIRECT_PRE: usize = 8;
pub const DIRECT_POST: usize = 32;

/// Keep only the direct-path component: the RIR zeroed outside
/// `[p - 8, p + 32]` around its largest-magnitude tap `p`.
pub fn direct_path(rir: &[f64]) -> Result<Vec<f64>> {
    let (peak, mag) = rir
        .iter()
        .enumerate()
        .fold((0usize, 0.0f64), |(bi, bm), (i, &v)| {
            if v.abs() > bm {
                (i, v.abs())
            } else {
                (bi, bm)
            }
        });
    if mag <= 0.0 {
        return Err(Error::DegenerateInput("all-zero impulse response".into()));
    }
    let lo = peak.saturating_sub(DIRECT_PRE);
    let hi = (peak + DIRECT_POST).min(rir.len() - 1);
    let mut out = vec![0.0; rir.len()];
    out[lo..=hi].copy_from_slice(&rir[lo..=hi]);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn room() -> RoomSpec {
        RoomSpec {
            dims: [6.0, 5.0, 3.0],
            reflection_coeff: 0.7,
            max_image_order: 0,
            sample_rate_hz: 16_000.0,
        }
    }

    #[test]
    fn order_zero_single_tap() {
        // distance 3.43 m along x -> tap at sample 160, amplitude 1/3.43
        let r = room();
        let rir = generate_rir(&r, &[1.0, 2.5, 1.5], &[4.43, 2.5, 1.5]).unwrap();
        let peak = rir
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.abs().partial_cmp(&b.1.abs()).unwrap())
            .unwrap()
            .0;
        assert_eq!(peak, 160);
        assert!((rir[160] - 1.0 / 3.43).abs() < 1e-9);
        let off_energy: f64 = rir
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != 160)
            .map(|(_, v)| v * v)
            .sum();
        assert!(off_energy < 1e-18);
    }

    #[test]
    fn coincident_positions_rejected() {
        let r = room();
        let p = [2.0, 2.0, 1.5];
        assert!(matches!(
            generate_rir(&r, &p, &p),
            Err(Error::InvalidGeometry(_))
        ));
    }

    #[test]
    fn outside_room_rejected() {
        let r = room();
        assert!(generate_rir(&r, &[7.0, 2.0, 1.5], &[2.0, 2.0, 1.5]).is_err());
        assert!(generate_rir(&r, &[2.0, 2.0, 1.5], &[2.0, -0.1, 1.5]).is_err());
    }

    #[test]
    fn energy_decays_with_image_order() {
        let mut r = room();
        r.max_image_order = 3;
        let imgs = image_sources(&r, &[1.5, 2.0, 1.2], &[4.0, 3.0, 1.8]).unwrap();
        let energy_at = |o: usize| -> f64 {
            imgs.iter()
                .filter(|i| i.order == o)
                .map(|i| i.amplitude * i.amplitude)
                .sum()
        };
        let e0 = energy_at(0);
        let e3 = energy_at(3) / imgs.iter().filter(|i| i.order == 3).count() as f64;
        assert!(e0 > e3);
    }

    #[test]
    fn single_tap_direct_path_is_identity() {
        let mut rir = vec![0.0; 100];
        rir[40] = 0.5;
        assert_eq!(direct_path(&rir).unwrap(), rir);
    }

    #[test]
    fn late_small_tap_removed() {
        let mut rir = vec![0.0; 200];
        rir[50] = 1.0;
        rir[50 + 40] = 0.4;
        let d = direct_path(&rir).unwrap();
        assert_eq!(d[50], 1.0);
        assert_eq!(d[90], 0.0);
    }

    #[test]
    fn zero_rir_rejected() {
        assert!(direct_path(&[0.0; 64]).is_err());
    }
}
