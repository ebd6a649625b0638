//! Channel-communication modules checked against naive, independently
//! written reference implementations.

use asyncmic::attention::params::ParamStore;
use asyncmic::attention::{AttentionModuleKind, CommModule};
use ndarray::{Array2, Array3, Axis};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const KINDS: [AttentionModuleKind; 4] = [
    AttentionModuleKind::Tac,
    AttentionModuleKind::FrameAttention,
    AttentionModuleKind::FullXAttn,
    AttentionModuleKind::WindowedXAttn,
];

fn rand_input(m: usize, t: usize, d: usize, seed: u64) -> Array3<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Array3::from_shape_fn((m, t, d), |_| rng.gen_range(-1.0..1.0))
}

fn make_module(kind: AttentionModuleKind, d: usize, l: usize, seed: u64) -> (CommModule, ParamStore) {
    let module = CommModule::new(kind, l, d, "m0.");
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    module.init_params(&mut store, &mut rng);
    (module, store)
}

/// y = x W^T + b computed with explicit loops (no library matmul helper).
fn naive_linear(store: &ParamStore, name: &str, x: &Array2<f64>) -> Array2<f64> {
    let w = store.value2(&format!("{name}.w"));
    let b = store.value1(&format!("{name}.b"));
    let (n, din) = x.dim();
    let dout = w.nrows();
    let mut y = Array2::zeros((n, dout));
    for r in 0..n {
        for o in 0..dout {
            let mut acc = b[o];
            for i in 0..din {
                acc += x[[r, i]] * w[[o, i]];
            }
            y[[r, o]] = acc;
        }
    }
    y
}

fn naive_project(store: &ParamStore, name: &str, z: &Array3<f64>) -> Array3<f64> {
    let (m, t, d) = z.dim();
    let flat = z.to_shape((m * t, d)).unwrap().to_owned();
    naive_linear(store, name, &flat)
        .into_shape_with_order((m, t, d))
        .unwrap()
}

fn naive_softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&v| (v - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.iter().map(|&e| e / sum).collect()
}

/// Shared combine stage: out = Linear_c([z, Linear_a(a)]).
fn naive_combine(store: &ParamStore, z: &Array3<f64>, a: &Array3<f64>) -> Array3<f64> {
    let (m, t, d) = z.dim();
    let u = naive_project(store, "m0.a", a);
    let mut cat = Array2::zeros((m * t, 2 * d));
    for mi in 0..m {
        for ti in 0..t {
            for di in 0..d {
                cat[[mi * t + ti, di]] = z[[mi, ti, di]];
                cat[[mi * t + ti, d + di]] = u[[mi, ti, di]];
            }
        }
    }
    naive_linear(store, "m0.c", &cat)
        .into_shape_with_order((m, t, d))
        .unwrap()
}

/// Reference TAC: per-frame mean across mics of a shared transform.
fn oracle_tac(store: &ParamStore, z: &Array3<f64>) -> Array3<f64> {
    let (m, t, d) = z.dim();
    let f = naive_project(store, "m0.p", z);
    let mut a = Array3::zeros((m, t, d));
    for ti in 0..t {
        for di in 0..d {
            let mean: f64 = (0..m).map(|mi| f[[mi, ti, di]]).sum::<f64>() / m as f64;
            for mi in 0..m {
                a[[mi, ti, di]] = mean;
            }
        }
    }
    naive_combine(store, z, &a)
}

/// Reference frame attention: softmax over mics at each frame index.
fn oracle_frame(store: &ParamStore, z: &Array3<f64>) -> Array3<f64> {
    let (m, t, d) = z.dim();
    let q = naive_project(store, "m0.q", z);
    let k = naive_project(store, "m0.k", z);
    let v = naive_project(store, "m0.v", z);
    let scale = 1.0 / (d as f64).sqrt();
    let mut a = Array3::zeros((m, t, d));
    for ti in 0..t {
        for mi in 0..m {
            let logits: Vec<f64> = (0..m)
                .map(|ni| {
                    (0..d).map(|di| q[[mi, ti, di]] * k[[ni, ti, di]]).sum::<f64>() * scale
                })
                .collect();
            let p = naive_softmax(&logits);
            for ni in 0..m {
                for di in 0..d {
                    a[[mi, ti, di]] += p[ni] * v[[ni, ti, di]];
                }
            }
        }
    }
    naive_combine(store, z, &a)
}

/// Reference temporal cross-attention with an optional band mask: query
/// frame i of every mic pair attends over key frames j with |j - i| <= l
/// (or all frames when `band` is None). With `band = None` this is the
/// full module; with `band = Some(l)` it is the mathematical definition of
/// the windowed module written against the full (T x T) score matrix.
fn oracle_xattn(store: &ParamStore, z: &Array3<f64>, band: Option<usize>) -> Array3<f64> {
    let (m, t, d) = z.dim();
    let q = naive_project(store, "m0.q", z);
    let k = naive_project(store, "m0.k", z);
    let v = naive_project(store, "m0.v", z);
    let scale = 1.0 / (d as f64).sqrt();
    let mut a = Array3::zeros((m, t, d));
    for mi in 0..m {
        for ni in 0..m {
            for i in 0..t {
                let cols: Vec<usize> = (0..t)
                    .filter(|&j| match band {
                        Some(l) => (j as i64 - i as i64).unsigned_abs() as usize <= l,
                        None => true,
                    })
                    .collect();
                let logits: Vec<f64> = cols
                    .iter()
                    .map(|&j| {
                        (0..d).map(|di| q[[mi, i, di]] * k[[ni, j, di]]).sum::<f64>() * scale
                    })
                    .collect();
                let p = naive_softmax(&logits);
                for (w, &j) in p.iter().zip(&cols) {
                    for di in 0..d {
                        a[[mi, i, di]] += w * v[[ni, j, di]];
                    }
                }
            }
        }
    }
    naive_combine(store, z, &a)
}

fn max_abs_diff(a: &Array3<f64>, b: &Array3<f64>) -> f64 {
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

#[test]
fn tac_matches_naive_reference() {
    for (m, t, d, seed) in [(2, 5, 4, 1u64), (4, 9, 6, 2), (1, 3, 8, 3)] {
        let (module, store) = make_module(AttentionModuleKind::Tac, d, 0, seed);
        let z = rand_input(m, t, d, seed + 100);
        let (out, _) = module.forward_array(&z, &store).unwrap();
        assert!(max_abs_diff(&out, &oracle_tac(&store, &z)) < 1e-10);
    }
}

#[test]
fn frame_attention_matches_naive_reference() {
    for (m, t, d, seed) in [(2, 5, 4, 1u64), (4, 9, 6, 2), (3, 2, 8, 3)] {
        let (module, store) = make_module(AttentionModuleKind::FrameAttention, d, 0, seed);
        let z = rand_input(m, t, d, seed + 200);
        let (out, _) = module.forward_array(&z, &store).unwrap();
        assert!(max_abs_diff(&out, &oracle_frame(&store, &z)) < 1e-10);
    }
}

#[test]
fn full_x_attn_matches_naive_reference() {
    for (m, t, d, seed) in [(2, 6, 4, 1u64), (3, 10, 6, 2), (4, 4, 8, 3)] {
        let (module, store) = make_module(AttentionModuleKind::FullXAttn, d, 0, seed);
        let z = rand_input(m, t, d, seed + 300);
        let (out, _) = module.forward_array(&z, &store).unwrap();
        assert!(max_abs_diff(&out, &oracle_xattn(&store, &z, None)) < 1e-10);
    }
}

/// Windowed attention must equal a band-masked full computation, checked
/// over a grid of shapes and window lengths with 100 seeded inputs.
#[test]
fn windowed_equals_band_masked_full_over_grid() {
    let start = std::time::Instant::now();
    let mut worst = 0.0f64;
    for seed in 0..100u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed * 31 + 7);
        let m = rng.gen_range(1..=4);
        let t = rng.gen_range(1..=32);
        let d = [2usize, 4, 8][rng.gen_range(0..3)];
        let l = rng.gen_range(0..=t);
        let (module, store) = make_module(AttentionModuleKind::WindowedXAttn, d, l, seed);
        let z = rand_input(m, t, d, seed + 400);
        let (out, _) = module.forward_array(&z, &store).unwrap();
        let reference = oracle_xattn(&store, &z, Some(l));
        worst = worst.max(max_abs_diff(&out, &reference));
    }
    assert!(worst <= 1e-10, "max deviation {worst}");
    assert!(start.elapsed().as_secs_f64() < 10.0);
}

/// With L >= T-1 every frame pair is inside the window, so the windowed
/// module must agree with the full module in outputs, parameter gradients,
/// and input gradients. Both variants use the same parameter names, so a
/// single initialized store serves both.
#[test]
fn windowed_degenerates_to_full_at_large_l() {
    for (m, t, d, l, seed) in [(2, 8, 4, 7usize, 1u64), (3, 6, 6, 5, 2), (4, 5, 8, 4, 3)] {
        assert!(l >= t - 1);
        let (full, store) = make_module(AttentionModuleKind::FullXAttn, d, 0, seed);
        let windowed = CommModule::new(AttentionModuleKind::WindowedXAttn, l, d, "m0.");
        let z = rand_input(m, t, d, seed + 500);
        let (out_f, cache_f) = full.forward_array(&z, &store).unwrap();
        let (out_w, cache_w) = windowed.forward_array(&z, &store).unwrap();
        assert!(max_abs_diff(&out_f, &out_w) <= 1e-8, "outputs diverge");

        let d_out = rand_input(m, t, d, seed + 600);
        let mut store_f = store.clone();
        let mut store_w = store.clone();
        let dz_f = full.backward(&cache_f, &d_out, &mut store_f).unwrap();
        let dz_w = windowed.backward(&cache_w, &d_out, &mut store_w).unwrap();
        assert!(max_abs_diff(&dz_f, &dz_w) <= 1e-8, "input grads diverge");
        for (gf, gw) in store_f.flat_grads().iter().zip(store_w.flat_grads()) {
            assert!((gf - gw).abs() <= 1e-8, "param grads diverge");
        }
    }
}

/// Permuting the microphone axis of the input must permute the output the
/// same way, for every module kind.
#[test]
fn all_modules_are_mic_permutation_equivariant() {
    for kind in KINDS {
        for m in [2usize, 3, 4] {
            let (t, d, l) = (7, 6, 2);
            let (module, store) = make_module(kind, d, l, 11);
            let z = rand_input(m, t, d, 700 + m as u64);
            let (out, _) = module.forward_array(&z, &store).unwrap();
            // permutation: rotate by one, then swap the first two if m > 2
            let perm: Vec<usize> = match m {
                2 => vec![1, 0],
                3 => vec![2, 0, 1],
                _ => vec![1, 3, 0, 2],
            };
            let mut zp = Array3::zeros(z.raw_dim());
            for (dst, &src) in perm.iter().enumerate() {
                zp.index_axis_mut(Axis(0), dst).assign(&z.index_axis(Axis(0), src));
            }
            let (out_p, _) = module.forward_array(&zp, &store).unwrap();
            let mut expected = Array3::zeros(out.raw_dim());
            for (dst, &src) in perm.iter().enumerate() {
                expected
                    .index_axis_mut(Axis(0), dst)
                    .assign(&out.index_axis(Axis(0), src));
            }
            let dev = max_abs_diff(&out_p, &expected);
            assert!(dev <= 1e-10, "{} M={m}: deviation {dev}", kind.label());
        }
    }
}

/// Attention weights exposed by the windowed cache: each (query mic, key
/// mic, query frame) row is a probability distribution over the valid
/// slots, and out-of-range slots are exactly zero.
#[test]
fn windowed_attention_weights_are_masked_distributions() {
    let (m, t, d, l) = (3, 10, 4, 3);
    let (module, store) = make_module(AttentionModuleKind::WindowedXAttn, d, l, 5);
    let z = rand_input(m, t, d, 900);
    let (_, cache) = module.forward_array(&z, &store).unwrap();
    let (probs, l_back) = cache.attention_weights().unwrap();
    assert_eq!(l_back, Some(l));
    assert_eq!(probs.dim(), (m, m, t, 2 * l + 1));
    for mi in 0..m {
        for ni in 0..m {
            for i in 0..t {
                let mut sum = 0.0;
                for s in 0..2 * l + 1 {
                    let j = i as i64 + s as i64 - l as i64;
                    let p = probs[[mi, ni, i, s]];
                    if j < 0 || j as usize >= t {
                        assert_eq!(p, 0.0, "invalid slot carries probability");
                    } else {
                        assert!(p >= 0.0);
                        sum += p;
                    }
                }
                assert!((sum - 1.0).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn rejects_mismatched_feature_dim() {
    let (module, store) = make_module(AttentionModuleKind::Tac, 4, 0, 1);
    let z = rand_input(2, 5, 6, 1);
    assert!(module.forward_array(&z, &store).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    /// Full-attention probability rows always sum to one regardless of
    /// input scale, and outputs stay finite.
    #[test]
    fn full_attention_rows_normalized(seed in 0u64..1000, scale in 0.01f64..100.0) {
        let (m, t, d) = (2, 6, 4);
        let (module, store) = make_module(AttentionModuleKind::FullXAttn, d, 0, seed);
        let z = rand_input(m, t, d, seed).mapv(|v| v * scale);
        let (out, cache) = module.forward_array(&z, &store).unwrap();
        prop_assert!(out.iter().all(|v| v.is_finite()));
        let (probs, _) = cache.attention_weights().unwrap();
        for mi in 0..m {
            for ni in 0..m {
                for i in 0..t {
                    let sum: f64 = (0..t).map(|j| probs[[mi, ni, i, j]]).sum();
                    prop_assert!((sum - 1.0).abs() < 1e-9);
                }
            }
        }
    }

    /// TAC output is invariant (not just equivariant) per mic when all
    /// mics carry identical features.
    #[test]
    fn tac_identical_mics_identical_outputs(seed in 0u64..1000) {
        let (t, d) = (5, 4);
        let (module, store) = make_module(AttentionModuleKind::Tac, d, 0, seed);
        let one = rand_input(1, t, d, seed);
        let mut z = Array3::zeros((3, t, d));
        for mi in 0..3 {
            z.index_axis_mut(Axis(0), mi).assign(&one.index_axis(Axis(0), 0));
        }
        let (out, _) = module.forward_array(&z, &store).unwrap();
        for mi in 1..3 {
            let dev: f64 = (&out.index_axis(Axis(0), 0) - &out.index_axis(Axis(0), mi))
                .iter().map(|v| v.abs()).fold(0.0, f64::max);
            prop_assert!(dev < 1e-12);
        }
    }
}
