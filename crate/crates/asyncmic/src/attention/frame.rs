//! Per-frame attention along the microphone axis: at each time index t the
//! M microphones attend to each other; no cross-time mixing occurs.

use ndarray::{Array3, Axis};

use super::{softmax_backward_row, softmax_masked_inplace};

/// Returns (A, probs) with A of shape (M, T, d) and probs (T, M, M).
pub(super) fn aggregate(
    q: &Array3<f64>,
    k: &Array3<f64>,
    v: &Array3<f64>,
) -> (Array3<f64>, Array3<f64>) {
    let (m, t, d) = q.dim();
    let scale = 1.0 / (d as f64).sqrt();
    let mut a = Array3::zeros((m, t, d));
    let mut probs = Array3::zeros((t, m, m));
    for ti in 0..t {
        for mi in 0..m {
            let qrow = q.slice(ndarray::s![mi, ti, ..]);
            let mut logits: Vec<f64> = (0..m)
                .map(|ni| qrow.dot(&k.slice(ndarray::s![ni, ti, ..])) * scale)
                .collect();
            softmax_masked_inplace(&mut logits, &|_| true);
            for ni in 0..m {
                probs[[ti, mi, ni]] = logits[ni];
                let w = logits[ni];
                let vrow = v.slice(ndarray::s![ni, ti, ..]);
                let mut arow = a.slice_mut(ndarray::s![mi, ti, ..]);
                arow.scaled_add(w, &vrow);
            }
        }
    }
    (a, probs)
}

pub(super) fn backward(
    q: &Array3<f64>,
    k: &Array3<f64>,
    v: &Array3<f64>,
    probs: &Array3<f64>,
    da: &Array3<f64>,
) -> (Array3<f64>, Array3<f64>, Array3<f64>) {
    let (m, t, d) = q.dim();
    let scale = 1.0 / (d as f64).sqrt();
    let mut dq = Array3::zeros((m, t, d));
    let mut dk = Array3::zeros((m, t, d));
    let mut dv = Array3::zeros((m, t, d));
    let mut dp = vec![0.0; m];
    let mut ds = vec![0.0; m];
    for ti in 0..t {
        for mi in 0..m {
            let darow = da.slice(ndarray::s![mi, ti, ..]);
            for ni in 0..m {
                dp[ni] = darow.dot(&v.slice(ndarray::s![ni, ti, ..]));
                let w = probs[[ti, mi, ni]];
                let mut dvrow = dv.slice_mut(ndarray::s![ni, ti, ..]);
                dvrow.scaled_add(w, &darow);
            }
            let prow = probs.index_axis(Axis(0), ti);
            softmax_backward_row(prow.row(mi).as_slice().unwrap(), &dp, &mut ds);
            for ni in 0..m {
                let g = ds[ni] * scale;
                {
                    let krow = k.slice(ndarray::s![ni, ti, ..]);
                    let mut dqrow = dq.slice_mut(ndarray::s![mi, ti, ..]);
                    dqrow.scaled_add(g, &krow);
                }
                {
                    let qrow = q.slice(ndarray::s![mi, ti, ..]);
                    let mut dkrow = dk.slice_mut(ndarray::s![ni, ti, ..]);
                    dkrow.scaled_add(g, &qrow);
                }
            }
        }
    }
    (dq, dk, dv)
}
