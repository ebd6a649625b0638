//! Transform-average aggregation: frames with the same time index are
//! averaged across microphones after a shared linear transform.

use ndarray::{Array3, Axis};

/// A[m, t] = mean over mics of F[., t]; the mean is broadcast back to
/// every microphone so the shared combine stage applies uniformly.
pub(super) fn aggregate(f: &Array3<f64>) -> Array3<f64> {
    let (m, _t, _d) = f.dim();
    let mean = f.mean_axis(Axis(0)).unwrap();
    let mut a = Array3::zeros(f.raw_dim());
    for mi in 0..m {
        a.index_axis_mut(Axis(0), mi).assign(&mean);
    }
    a
}

/// dF[n] = (sum_m dA[m]) / M for every n.
pub(super) fn backward(da: &Array3<f64>, m: usize) -> Array3<f64> {
    let total = da.sum_axis(Axis(0));
    let share = total.mapv(|v| v / m as f64);
    let mut df = Array3::zeros(da.raw_dim());
    for mi in 0..m {
        df.index_axis_mut(Axis(0), mi).assign(&share);
    }
    df
}
