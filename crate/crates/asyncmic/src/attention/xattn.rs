//! Temporal cross-attention between microphone channels, in a full
//! (all frame pairs) and a windowed (+-L frame band) variant.

use ndarray::{Array2, Array3, Array4, ArrayView2, Axis};

use super::{softmax_backward_row, softmax_masked_inplace};

/// Unfold a (T, d) sequence into (T, 2L+1, d) local windows; row i holds
/// frames i-L ..= i+L. Out-of-range slots are zero-filled and flagged
/// invalid in the mask.
pub fn unfold_time(k: ArrayView2<f64>, l: usize) -> (Array3<f64>, Array2<bool>) {
    let (t, d) = k.dim();
    let w = 2 * l + 1;
    let mut out = Array3::zeros((t, w, d));
    let mut mask = Array2::from_elem((t, w), false);
    for i in 0..t {
        for s in 0..w {
            let j = i as i64 + s as i64 - l as i64;
            if j >= 0 && (j as usize) < t {
                out.slice_mut(ndarray::s![i, s, ..]).assign(&k.row(j as usize));
                mask[[i, s]] = true;
            }
        }
    }
    (out, mask)
}

/// A_m = sum_n softmax(Q_m K_n^T / sqrt(d)) V_n, softmax per key mic over
/// its T frames. Returns (A, probs) with probs (M, M, T, T) indexed
/// (query mic, key mic, query frame, key frame).
pub(super) fn full_aggregate(
    q: &Array3<f64>,
    k: &Array3<f64>,
    v: &Array3<f64>,
) -> (Array3<f64>, Array4<f64>) {
    let (m, t, d) = q.dim();
    let scale = 1.0 / (d as f64).sqrt();
    let mut a = Array3::zeros((m, t, d));
    let mut probs = Array4::zeros((m, m, t, t));
    for mi in 0..m {
        let qm = q.index_axis(Axis(0), mi);
        for ni in 0..m {
            let kn = k.index_axis(Axis(0), ni);
            let mut logits = qm.dot(&kn.t());
            logits.mapv_inplace(|x| x * scale);
            for i in 0..t {
                let mut row = logits.row_mut(i);
                softmax_masked_inplace(row.as_slice_mut().unwrap(), &|_| true);
            }
            let vn = v.index_axis(Axis(0), ni);
            let contribution = logits.dot(&vn);
            {
                let mut am = a.index_axis_mut(Axis(0), mi);
                am += &contribution;
            }
            probs
                .slice_mut(ndarray::s![mi, ni, .., ..])
                .assign(&logits);
        }
    }
    (a, probs)
}

pub(super) fn full_backward(
    q: &Array3<f64>,
    k: &Array3<f64>,
    v: &Array3<f64>,
    probs: &Array4<f64>,
    da: &Array3<f64>,
) -> (Array3<f64>, Array3<f64>, Array3<f64>) {
    let (m, t, d) = q.dim();
    let scale = 1.0 / (d as f64).sqrt();
    let mut dq = Array3::zeros((m, t, d));
    let mut dk = Array3::zeros((m, t, d));
    let mut dv = Array3::zeros((m, t, d));
    let mut ds = Array2::zeros((t, t));
    for mi in 0..m {
        let dam = da.index_axis(Axis(0), mi);
        for ni in 0..m {
            let p = probs.slice(ndarray::s![mi, ni, .., ..]);
            let vn = v.index_axis(Axis(0), ni);
            // dP = dA_m V_n^T ; dV_n += P^T dA_m
            let dp = dam.dot(&vn.t());
            {
                let mut dvn = dv.index_axis_mut(Axis(0), ni);
                dvn += &p.t().dot(&dam);
            }
            for i in 0..t {
                softmax_backward_row(
                    p.row(i).to_slice().unwrap_or_else(|| unreachable!()),
                    dp.row(i).as_slice().unwrap(),
                    ds.row_mut(i).as_slice_mut().unwrap(),
                );
            }
            let kn = k.index_axis(Axis(0), ni);
            let qm = q.index_axis(Axis(0), mi);
            {
                let mut dqm = dq.index_axis_mut(Axis(0), mi);
                dqm.scaled_add(scale, &ds.dot(&kn));
            }
            {
                let mut dkn = dk.index_axis_mut(Axis(0), ni);
                dkn.scaled_add(scale, &ds.t().dot(&qm));
            }
        }
    }
    (dq, dk, dv)
}

/// Windowed variant: A_m[i] = sum_n softmax over the 2L+1 window slots of
/// each key mic, invalid slots excluded from the normalization entirely.
/// probs is (M, M, T, 2L+1).
pub(super) fn windowed_aggregate(
    q: &Array3<f64>,
    k: &Array3<f64>,
    v: &Array3<f64>,
    l: usize,
) -> (Array3<f64>, Array4<f64>) {
    let (m, t, d) = q.dim();
    let w = 2 * l + 1;
    let scale = 1.0 / (d as f64).sqrt();
    let mut a = Array3::zeros((m, t, d));
    let mut probs = Array4::zeros((m, m, t, w));
    let mut logits = vec![0.0; w];
    for ni in 0..m {
        let (ku, mask) = unfold_time(k.index_axis(Axis(0), ni), l);
        let (vu, _) = unfold_time(v.index_axis(Axis(0), ni), l);
        for mi in 0..m {
            let qm = q.index_axis(Axis(0), mi);
            for i in 0..t {
                let qrow = qm.row(i);
                for s in 0..w {
                    logits[s] = if mask[[i, s]] {
                        qrow.dot(&ku.slice(ndarray::s![i, s, ..])) * scale
                    } else {
                        f64::NEG_INFINITY
                    };
                }
                softmax_masked_inplace(&mut logits, &|s| mask[[i, s]]);
                let mut arow = a.slice_mut(ndarray::s![mi, i, ..]);
                for s in 0..w {
                    let p = logits[s];
                    probs[[mi, ni, i, s]] = p;
                    if p != 0.0 {
                        arow.scaled_add(p, &vu.slice(ndarray::s![i, s, ..]));
                    }
                }
            }
        }
    }
    (a, probs)
}

pub(super) fn windowed_backward(
    q: &Array3<f64>,
    k: &Array3<f64>,
    v: &Array3<f64>,
    probs: &Array4<f64>,
    da: &Array3<f64>,
    l: usize,
) -> (Array3<f64>, Array3<f64>, Array3<f64>) {
    let (m, t, d) = q.dim();
    let w = 2 * l + 1;
    let scale = 1.0 / (d as f64).sqrt();
    let mut dq = Array3::zeros((m, t, d));
    let mut dk = Array3::zeros((m, t, d));
    let mut dv = Array3::zeros((m, t, d));
    let mut dp = vec![0.0; w];
    let mut ds = vec![0.0; w];
    for ni in 0..m {
        let kn = k.index_axis(Axis(0), ni);
        let vn = v.index_axis(Axis(0), ni);
        for mi in 0..m {
            let qm = q.index_axis(Axis(0), mi);
            let dam = da.index_axis(Axis(0), mi);
            for i in 0..t {
                let darow = dam.row(i);
                let prow = probs.slice(ndarray::s![mi, ni, i, ..]);
                for s in 0..w {
                    let j = i as i64 + s as i64 - l as i64;
                    dp[s] = if j >= 0 && (j as usize) < t {
                        let jv = j as usize;
                        // dV_n[j] += p * dA_m[i]
                        let p = prow[s];
                        if p != 0.0 {
                            let mut dvrow = dv.slice_mut(ndarray::s![ni, jv, ..]);
                            dvrow.scaled_add(p, &darow);
                        }
                        darow.dot(&vn.row(jv))
                    } else {
                        0.0
                    };
                }
                softmax_backward_row(prow.to_slice().unwrap(), &dp, &mut ds);
                for s in 0..w {
                    let j = i as i64 + s as i64 - l as i64;
                    if j < 0 || j as usize >= t {
                        continue;
                    }
                    let jv = j as usize;
                    let g = ds[s] * scale;
                    if g != 0.0 {
                        {
                            let mut dqrow = dq.slice_mut(ndarray::s![mi, i, ..]);
                            dqrow.scaled_add(g, &kn.row(jv));
                        }
                        {
                            let mut dkrow = dk.slice_mut(ndarray::s![ni, jv, ..]);
                            dkrow.scaled_add(g, &qm.row(i));
                        }
                    }
                }
            }
        }
    }
    (dq, dk, dv)
}
