//! Flat named collection of trainable weights with paired gradient buffers,
//! plus the shared linear-layer primitives and the checkpoint file format.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use ndarray::{Array1, Array2, ArrayD, ArrayView1, ArrayView2, IxDyn};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Param {
    pub value: ArrayD<f64>,
    pub grad: ArrayD<f64>,
}

/// Named map of parameters. Iteration order is the sorted name order, so
/// flattening and optimizer walks are deterministic.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    map: BTreeMap<String, Param>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: &str, value: ArrayD<f64>) {
        let grad = ArrayD::zeros(value.raw_dim());
        self.map.insert(name.to_string(), Param { value, grad });
    }

    pub fn get(&self, name: &str) -> &Param {
        self.map
            .get(name)
            .unwrap_or_else(|| panic!("unknown parameter {name}"))
    }

    pub fn get_mut(&mut self, name: &str) -> &mut Param {
        self.map
            .get_mut(name)
            .unwrap_or_else(|| panic!("unknown parameter {name}"))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.map.contains_key(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.map.keys()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Param)> {
        self.map.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Param)> {
        self.map.iter_mut()
    }

    pub fn zero_grads(&mut self) {
        for p in self.map.values_mut() {
            p.grad.fill(0.0);
        }
    }

    pub fn num_scalars(&self) -> usize {
        self.map.values().map(|p| p.value.len()).sum()
    }

    /// All values concatenated in name order.
    pub fn flat_values(&self) -> Vec<f64> {
        self.map
            .values()
            .flat_map(|p| p.value.iter().copied())
            .collect()
    }

    /// All gradients concatenated in name order.
    pub fn flat_grads(&self) -> Vec<f64> {
        self.map
            .values()
            .flat_map(|p| p.grad.iter().copied())
            .collect()
    }

    pub fn set_flat_values(&mut self, flat: &[f64]) {
        let mut i = 0;
        for p in self.map.values_mut() {
            for v in p.value.iter_mut() {
                *v = flat[i];
                i += 1;
            }
        }
        assert_eq!(i, flat.len(), "flat vector length mismatch");
    }

    /// Global L2 norm of all gradients.
    pub fn grad_norm(&self) -> f64 {
        self.map
            .values()
            .map(|p| p.grad.iter().map(|g| g * g).sum::<f64>())
            .sum::<f64>()
            .sqrt()
    }

    pub fn scale_grads(&mut self, s: f64) {
        for p in self.map.values_mut() {
            p.grad.mapv_inplace(|g| g * s);
        }
    }

    // 2-D / 1-D typed views used by the layer primitives.
    pub fn value2(&self, name: &str) -> ArrayView2<'_, f64> {
        self.get(name).value.view().into_dimensionality().unwrap()
    }

    pub fn value1(&self, name: &str) -> ArrayView1<'_, f64> {
        self.get(name).value.view().into_dimensionality().unwrap()
    }
}

/// Fan-in uniform initialization in +-sqrt(1/in_dim) for a linear layer
/// `y = x W^T + b`, stored as `<name>.w` (out, in) and `<name>.b` (out).
pub fn init_linear(
    store: &mut ParamStore,
    name: &str,
    out_dim: usize,
    in_dim: usize,
    rng: &mut ChaCha8Rng,
) {
    let bound = (1.0 / in_dim as f64).sqrt();
    let w = Array2::from_shape_fn((out_dim, in_dim), |_| rng.gen_range(-bound..bound));
    let b = Array1::from_shape_fn(out_dim, |_| rng.gen_range(-bound..bound));
    store.insert(&format!("{name}.w"), w.into_dyn());
    store.insert(&format!("{name}.b"), b.into_dyn());
}

/// `y = x W^T + b` over rows of `x` (n, in) -> (n, out).
pub fn linear_fwd(store: &ParamStore, name: &str, x: ArrayView2<f64>) -> Array2<f64> {
    let w = store.value2(&format!("{name}.w"));
    let b = store.value1(&format!("{name}.b"));
    x.dot(&w.t()) + &b
}

/// Accumulate dW, db and return dx for the layer `name`.
pub fn linear_bwd(
    store: &mut ParamStore,
    name: &str,
    x: ArrayView2<f64>,
    dy: ArrayView2<f64>,
) -> Array2<f64> {
    let dw = dy.t().dot(&x);
    let db = dy.sum_axis(ndarray::Axis(0));
    let dx = {
        let w = store.value2(&format!("{name}.w"));
        dy.dot(&w)
    };
    {
        let g = &mut store.get_mut(&format!("{name}.w")).grad;
        *g += &dw.into_dyn();
    }
    {
        let g = &mut store.get_mut(&format!("{name}.b")).grad;
        *g += &db.into_dyn();
    }
    dx
}

const CHECKPOINT_MAGIC: &[u8; 8] = b"AMCKPT1\n";

/// Save parameters plus a JSON config echo. Layout: magic, u64 LE manifest
/// length, JSON manifest (names, shapes, config), then raw little-endian
/// f64 values in manifest order.
pub fn save_checkpoint(
    path: &Path,
    store: &ParamStore,
    config: &serde_json::Value,
) -> Result<()> {
    #[derive(serde::Serialize)]
    struct Entry<'a> {
        name: &'a str,
        shape: Vec<usize>,
    }
    let entries: Vec<Entry> = store
        .iter()
        .map(|(n, p)| Entry {
            name: n,
            shape: p.value.shape().to_vec(),
        })
        .collect();
    let manifest = serde_json::json!({
        "version": 1,
        "config": config,
        "params": entries,
    });
    let bytes = serde_json::to_vec(&manifest)?;
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    f.write_all(CHECKPOINT_MAGIC)?;
    f.write_u64::<LittleEndian>(bytes.len() as u64)?;
    f.write_all(&bytes)?;
    for (_, p) in store.iter() {
        for &v in p.value.iter() {
            f.write_f64::<LittleEndian>(v)?;
        }
    }
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<(ParamStore, serde_json::Value)> {
    let mut f = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut magic = [0u8; 8];
    f.read_exact(&mut magic)?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(Error::Config(format!(
            "{} is not a checkpoint file",
            path.display()
        )));
    }
    let len = f.read_u64::<LittleEndian>()? as usize;
    let mut bytes = vec![0u8; len];
    f.read_exact(&mut bytes)?;
    let manifest: serde_json::Value = serde_json::from_slice(&bytes)?;
    let version = manifest["version"].as_u64().unwrap_or(0);
    if version != 1 {
        return Err(Error::Config(format!(
            "unsupported checkpoint version {version}"
        )));
    }
    let mut store = ParamStore::new();
    let params = manifest["params"]
        .as_array()
        .ok_or_else(|| Error::Config("checkpoint manifest missing params".into()))?
        .clone();
    for entry in &params {
        let name = entry["name"]
            .as_str()
            .ok_or_else(|| Error::Config("bad checkpoint entry".into()))?;
        let shape: Vec<usize> = entry["shape"]
            .as_array()
            .ok_or_else(|| Error::Config("bad checkpoint shape".into()))?
            .iter()
            .map(|v| v.as_u64().unwrap_or(0) as usize)
            .collect();
        let n: usize = shape.iter().product();
        let mut data = vec![0.0f64; n];
        for v in data.iter_mut() {
            *v = f.read_f64::<LittleEndian>()?;
        }
        store.insert(
            name,
            ArrayD::from_shape_vec(IxDyn(&shape), data)
                .map_err(|e| Error::Config(format!("bad checkpoint array: {e}")))?,
        );
    }
    Ok((store, manifest["config"].clone()))
}
