//! Single gated recurrent layer with an analytic backward pass. Weights
//! are shared across microphone channels; each channel is processed as an
//! independent sequence.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand_chacha::ChaCha8Rng;

use crate::attention::params::{init_linear, ParamStore};

#[derive(Clone, Debug)]
pub struct Gru {
    pub prefix: String,
    pub d_in: usize,
    pub d_h: usize,
}

/// Per-sequence intermediates for backpropagation through time.
#[derive(Clone, Debug)]
pub struct GruCache {
    x: Array2<f64>,
    ghn: Array2<f64>,
    r: Array2<f64>,
    z: Array2<f64>,
    n: Array2<f64>,
    h: Array2<f64>,
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

impl Gru {
    pub fn new(prefix: &str, d_in: usize, d_h: usize) -> Self {
        Gru {
            prefix: prefix.to_string(),
            d_in,
            d_h,
        }
    }

    pub fn init_params(&self, store: &mut ParamStore, rng: &mut ChaCha8Rng) {
        init_linear(store, &format!("{}.ih", self.prefix), 3 * self.d_h, self.d_in, rng);
        init_linear(store, &format!("{}.hh", self.prefix), 3 * self.d_h, self.d_h, rng);
    }

    /// x: (T, d_in) -> h: (T, d_h). Gate order in the stacked weights is
    /// [reset, update, candidate]; h_t = (1-z) n + z h_{t-1}, h_{-1} = 0.
    pub fn forward(&self, x: ArrayView2<f64>, store: &ParamStore) -> (Array2<f64>, GruCache) {
        let (t_len, _) = x.dim();
        let h_dim = self.d_h;
        let w_ih = store.value2(&format!("{}.ih.w", self.prefix));
        let b_ih = store.value1(&format!("{}.ih.b", self.prefix));
        let w_hh = store.value2(&format!("{}.hh.w", self.prefix));
        let b_hh = store.value1(&format!("{}.hh.b", self.prefix));

        let gi = x.dot(&w_ih.t()) + &b_ih;
        let mut ghn = Array2::zeros((t_len, h_dim));
        let mut r = Array2::zeros((t_len, h_dim));
        let mut z = Array2::zeros((t_len, h_dim));
        let mut n = Array2::zeros((t_len, h_dim));
        let mut h = Array2::zeros((t_len, h_dim));
        let mut h_prev = Array1::zeros(h_dim);
        for t in 0..t_len {
            let gh = w_hh.dot(&h_prev) + &b_hh;
            for j in 0..h_dim {
                let rr = sigmoid(gi[[t, j]] + gh[j]);
                let zz = sigmoid(gi[[t, h_dim + j]] + gh[h_dim + j]);
                let gn = gh[2 * h_dim + j];
                let nn = (gi[[t, 2 * h_dim + j]] + rr * gn).tanh();
                r[[t, j]] = rr;
                z[[t, j]] = zz;
                n[[t, j]] = nn;
                ghn[[t, j]] = gn;
                h[[t, j]] = (1.0 - zz) * nn + zz * h_prev[j];
            }
            h_prev.assign(&h.row(t));
        }
        let cache = GruCache {
            x: x.to_owned(),
            ghn,
            r,
            z,
            n,
            h: h.clone(),
        };
        (h, cache)
    }

    /// Accumulate parameter grads and return dx.
    pub fn backward(
        &self,
        cache: &GruCache,
        dh_out: ArrayView2<f64>,
        store: &mut ParamStore,
    ) -> Array2<f64> {
        let (t_len, h_dim) = cache.h.dim();
        let w_ih_name = format!("{}.ih", self.prefix);
        let w_hh_name = format!("{}.hh", self.prefix);
        let w_ih = store.value2(&format!("{w_ih_name}.w")).to_owned();
        let w_hh = store.value2(&format!("{w_hh_name}.w")).to_owned();

        let mut dx = Array2::zeros((t_len, self.d_in));
        let mut dgi_all = Array2::zeros((t_len, 3 * h_dim));
        let mut dw_hh = Array2::zeros((3 * h_dim, h_dim));
        let mut db_hh = Array1::zeros(3 * h_dim);
        let mut dh_next = Array1::<f64>::zeros(h_dim);
        let mut dgh = Array1::<f64>::zeros(3 * h_dim);
        for t in (0..t_len).rev() {
            let h_prev: Array1<f64> = if t == 0 {
                Array1::zeros(h_dim)
            } else {
                cache.h.row(t - 1).to_owned()
            };
            let mut dh_prev = Array1::<f64>::zeros(h_dim);
            for j in 0..h_dim {
                let dh = dh_out[[t, j]] + dh_next[j];
                let zz = cache.z[[t, j]];
                let nn = cache.n[[t, j]];
                let rr = cache.r[[t, j]];
                let dn = dh * (1.0 - zz);
                let dz = dh * (h_prev[j] - nn);
                dh_prev[j] += dh * zz;
                let dgn_pre = dn * (1.0 - nn * nn);
                let dr = dgn_pre * cache.ghn[[t, j]];
                let dgr = dr * rr * (1.0 - rr);
                let dgz = dz * zz * (1.0 - zz);
                dgi_all[[t, j]] = dgr;
                dgi_all[[t, h_dim + j]] = dgz;
                dgi_all[[t, 2 * h_dim + j]] = dgn_pre;
                dgh[j] = dgr;
                dgh[h_dim + j] = dgz;
                dgh[2 * h_dim + j] = dgn_pre * rr;
            }
            // recurrent weight grads and carry to h_{t-1}
            for gj in 0..3 * h_dim {
                let g = dgh[gj];
                if g != 0.0 {
                    db_hh[gj] += g;
                    for hj in 0..h_dim {
                        dw_hh[[gj, hj]] += g * h_prev[hj];
                    }
                }
            }
            dh_prev += &w_hh.t().dot(&dgh);
            dh_next = dh_prev;
        }
        // input-side grads as one batched product
        let dw_ih = dgi_all.t().dot(&cache.x);
        let db_ih = dgi_all.sum_axis(Axis(0));
        dx += &dgi_all.dot(&w_ih);
        {
            let g = &mut store.get_mut(&format!("{w_ih_name}.w")).grad;
            *g += &dw_ih.into_dyn();
        }
        {
            let g = &mut store.get_mut(&format!("{w_ih_name}.b")).grad;
            *g += &db_ih.into_dyn();
        }
        {
            let g = &mut store.get_mut(&format!("{w_hh_name}.w")).grad;
            *g += &dw_hh.into_dyn();
        }
        {
            let g = &mut store.get_mut(&format!("{w_hh_name}.b")).grad;
            *g += &db_hh.into_dyn();
        }
        dx
    }
}
