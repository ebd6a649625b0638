//! Spatially diffuse noise approximated by summing point noise sources
//! spread across the room.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::dsp::fft_convolve;
use crate::error::{Error, Result};

use super::room::{generate_rir, RoomSpec};

/// Render `n_sources` independent white noise sources through their RIRs to
/// each microphone. Inter-microphone coherence falls off with mic spacing.
pub fn make_diffuse_noise(
    room: &RoomSpec,
    mics: &[[f64; 3]],
    n_sources: usize,
    len: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<Vec<f64>>> {
    if n_sources == 0 {
        return Err(Error::Config(
            "diffuse noise needs at least one point source".into(),
        ));
    }
    room.validate()?;
    let margin = 0.1;
    let mut out = vec![vec![0.0; len]; mics.len()];
    for _ in 0..n_sources {
        let pos = [
            rng.gen_range(margin..room.dims[0] - margin),
            rng.gen_range(margin..room.dims[1] - margin),
            rng.gen_range(margin..room.dims[2] - margin),
        ];
        let noise: Vec<f64> = (0..len)
            .map(|_| <StandardNormal as Distribution<f64>>::sample(&StandardNormal, rng))
            .collect();
        for (mic, acc) in mics.iter().zip(out.iter_mut()) {
            let rir = generate_rir(room, &pos, mic)?;
            let conv = fft_convolve(&noise, &rir);
            for (a, v) in acc.iter_mut().zip(conv.iter()) {
                *a += v;
            }
        }
    }
    Ok(out)
}
