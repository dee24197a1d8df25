//! Named parameters with seeded initialisation, a few layer builders on top
//! of candle, and the checkpoint container shared by every trained model.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use candle_core::{DType, Device, Tensor, Var};
use candle_nn::{AdamW, Conv2d, Conv2dConfig, Linear, Optimizer, ParamsAdamW};
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Result, VaiError};
use crate::rng::Rng;

/// Parameters keyed by dotted name, iterated in name order.
#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    vars: BTreeMap<String, Var>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    fn insert(&mut self, name: String, var: Var) -> Result<()> {
        if self.vars.contains_key(&name) {
            return Err(VaiError::InvalidArgument(format!("duplicate parameter {name}")));
        }
        self.vars.insert(name, var);
        Ok(())
    }

    /// Uniform `(-b, b)` with `b = 1/sqrt(fan_in)`.
    fn uniform(&mut self, name: String, shape: &[usize], fan_in: usize, rng: &mut Rng) -> Result<Tensor> {
        let bound = 1.0 / (fan_in as f32).sqrt();
        let n: usize = shape.iter().product();
        let data: Vec<f32> = (0..n).map(|_| rng.random_range(-bound..bound)).collect();
        let var = Var::from_tensor(&Tensor::from_vec(data, shape, &Device::Cpu)?)?;
        let t = var.as_tensor().clone();
        self.insert(name, var)?;
        Ok(t)
    }

    pub fn conv2d(
        &mut self,
        name: &str,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        rng: &mut Rng,
    ) -> Result<Conv2d> {
        let fan_in = in_channels * kernel * kernel;
        let w = self.uniform(
            format!("{name}.weight"),
            &[out_channels, in_channels, kernel, kernel],
            fan_in,
            rng,
        )?;
        let b = self.uniform(format!("{name}.bias"), &[out_channels], fan_in, rng)?;
        let cfg = Conv2dConfig {
            padding: kernel / 2,
            stride,
            ..Default::default()
        };
        Ok(Conv2d::new(w, Some(b), cfg))
    }

    pub fn linear(&mut self, name: &str, inputs: usize, outputs: usize, rng: &mut Rng) -> Result<Linear> {
        let w = self.uniform(format!("{name}.weight"), &[outputs, inputs], inputs, rng)?;
        let b = self.uniform(format!("{name}.bias"), &[outputs], inputs, rng)?;
        Ok(Linear::new(w, Some(b)))
    }

    pub fn constant(&mut self, name: &str, shape: &[usize], value: f32) -> Result<Var> {
        let var = Var::from_tensor(&Tensor::full(value, shape, &Device::Cpu)?)?;
        self.insert(name.to_string(), var.clone())?;
        Ok(var)
    }

    pub fn len(&self) -> usize {
        self.vars.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vars.is_empty()
    }

    pub fn get(&self, name: &str) -> Option<&Var> {
        self.vars.get(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.vars.keys().map(String::as_str)
    }

    pub fn vars(&self) -> Vec<Var> {
        self.vars.values().cloned().collect()
    }

    pub fn vars_with_prefix(&self, prefix: &str) -> Vec<Var> {
        self.vars
            .iter()
            .filter(|(k, _)| k.starts_with(prefix))
            .map(|(_, v)| v.clone())
            .collect()
    }

    pub fn num_values(&self) -> usize {
        self.vars.values().map(|v| v.elem_count()).sum()
    }

    pub fn to_arrays(&self) -> Result<Vec<NamedArray>> {
        self.vars
            .iter()
            .map(|(name, var)| {
                Ok(NamedArray {
                    name: name.clone(),
                    shape: var.dims().to_vec(),
                    data: var.flatten_all()?.to_vec1::<f32>()?,
                })
            })
            .collect()
    }

    /// Overwrites every parameter from `arrays`; names and shapes must match exactly.
    pub fn load_arrays(&self, arrays: &[NamedArray]) -> Result<()> {
        if arrays.len() != self.vars.len() {
            return Err(VaiError::InvalidArgument(format!(
                "checkpoint has {} arrays, model expects {}",
                arrays.len(),
                self.vars.len()
            )));
        }
        for a in arrays {
            let var = self
                .vars
                .get(&a.name)
                .ok_or_else(|| VaiError::InvalidArgument(format!("unexpected parameter {}", a.name)))?;
            if var.dims() != a.shape.as_slice() {
                return Err(VaiError::shape(format!("{} {:?}", a.name, var.dims()), format!("{:?}", a.shape)));
            }
            var.set(&Tensor::from_vec(a.data.clone(), a.shape.as_slice(), &Device::Cpu)?)?;
        }
        Ok(())
    }

    /// Copies values from a store with identical names and shapes.
    pub fn copy_from(&self, other: &ParamStore) -> Result<()> {
        self.load_arrays(&other.to_arrays()?)
    }
}

/// `target ← τ·online + (1-τ)·target`, parameter by parameter.
pub fn soft_update(target: &[Var], online: &[Var], tau: f64) -> Result<()> {
    if target.len() != online.len() {
        return Err(VaiError::shape(target.len(), online.len()));
    }
    for (t, o) in target.iter().zip(online) {
        let mixed = ((o.as_tensor() * tau)? + (t.as_tensor() * (1.0 - tau))?)?;
        t.set(&mixed)?;
    }
    Ok(())
}

/// Adam (decoupled weight decay switched off).
pub fn adam(vars: Vec<Var>, lr: f64) -> Result<AdamW> {
    Ok(AdamW::new(
        vars,
        ParamsAdamW {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
        },
    )?)
}

/// Runs backward on `loss` and applies one optimizer step, returning the loss value.
pub fn optimize(opt: &mut AdamW, loss: &Tensor) -> Result<f32> {
    let value = loss.to_dtype(DType::F32)?.to_scalar::<f32>()?;
    opt.backward_step(loss)?;
    Ok(value)
}

pub fn to_scalar(t: &Tensor) -> Result<f32> {
    Ok(t.to_dtype(DType::F32)?.to_scalar::<f32>()?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedArray {
    pub name: String,
    pub shape: Vec<usize>,
    #[serde(skip)]
    pub data: Vec<f32>,
}

pub const CHECKPOINT_VERSION: u32 = 1;
const MAGIC: &[u8; 8] = b"VAICKPT\n";

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    version: u32,
    kind: String,
    config: serde_json::Value,
    arrays: Vec<NamedArray>,
}

/// Versioned container: model kind, its config, and flat named `f32` arrays.
///
/// Layout: 8-byte magic, little-endian `u64` header length, JSON header,
/// then every array's values as little-endian `f32` in header order.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub version: u32,
    pub kind: String,
    pub config: serde_json::Value,
    pub arrays: Vec<NamedArray>,
}

impl Checkpoint {
    pub fn new(kind: &str, config: &impl Serialize, params: &ParamStore) -> Result<Self> {
        Ok(Self {
            version: CHECKPOINT_VERSION,
            kind: kind.to_string(),
            config: serde_json::to_value(config)
                .map_err(|e| VaiError::InvalidArgument(e.to_string()))?,
            arrays: params.to_arrays()?,
        })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let header = Header {
            version: self.version,
            kind: self.kind.clone(),
            config: self.config.clone(),
            arrays: self.arrays.clone(),
        };
        let json = serde_json::to_vec(&header).expect("header serialises");
        let mut out = Vec::with_capacity(16 + json.len() + 4 * self.arrays.iter().map(|a| a.data.len()).sum::<usize>());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for a in &self.arrays {
            for v in &a.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let bad = |m: &str| VaiError::format(path, m.to_string());
        if bytes.len() < 16 || &bytes[..8] != MAGIC {
            return Err(bad("not a checkpoint file"));
        }
        let len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
        let body = bytes.get(16..16 + len).ok_or_else(|| bad("truncated header"))?;
        let header: Header = serde_json::from_slice(body).map_err(|e| bad(&format!("bad header: {e}")))?;
        if header.version != CHECKPOINT_VERSION {
            return Err(bad(&format!("unsupported checkpoint version {}", header.version)));
        }
        let mut data = &bytes[16 + len..];
        let mut arrays = header.arrays;
        for a in &mut arrays {
            let n: usize = a.shape.iter().product();
            if data.len() < 4 * n {
                return Err(bad(&format!("truncated data for {}", a.name)));
            }
            a.data = data[..4 * n]
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                .collect();
            data = &data[4 * n..];
        }
        if !data.is_empty() {
            return Err(bad("trailing bytes after parameter data"));
        }
        Ok(Self {
            version: header.version,
            kind: header.kind,
            config: header.config,
            arrays,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path).map_err(|e| VaiError::io(path, e))?;
        f.write_all(&self.to_bytes()).map_err(|e| VaiError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| VaiError::io(path, e))?;
        Self::from_bytes(&bytes, path)
    }

    pub fn expect_kind(&self, kind: &str, path: &Path) -> Result<()> {
        if self.kind != kind {
            return Err(VaiError::format(
                path,
                format!("expected a {kind} checkpoint, found {}", self.kind),
            ));
        }
        Ok(())
    }

    pub fn config<T: serde::de::DeserializeOwned>(&self, path: &Path) -> Result<T> {
        serde_json::from_value(self.config.clone())
            .map_err(|e| VaiError::format(path, format!("bad config: {e}")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use candle_core::Module;
    use rand::SeedableRng;

    #[test]
    fn seeded_init_is_reproducible() {
        let build = |seed| {
            let mut rng = Rng::seed_from_u64(seed);
            let mut ps = ParamStore::new();
            ps.conv2d("c", 3, 4, 3, 2, &mut rng).unwrap();
            ps.linear("l", 5, 2, &mut rng).unwrap();
            ps.to_arrays().unwrap()
        };
        assert_eq!(build(1), build(1));
        let a: Vec<Vec<f32>> = build(1).into_iter().map(|a| a.data).collect();
        let b: Vec<Vec<f32>> = build(2).into_iter().map(|a| a.data).collect();
        assert_ne!(a, b);
    }

    #[test]
    fn duplicate_names_rejected() {
        let mut rng = Rng::seed_from_u64(0);
        let mut ps = ParamStore::new();
        ps.linear("l", 2, 2, &mut rng).unwrap();
        assert!(ps.linear("l", 2, 2, &mut rng).is_err());
    }

    #[test]
    fn checkpoint_round_trip() {
        let mut rng = Rng::seed_from_u64(0);
        let mut ps = ParamStore::new();
        let lin = ps.linear("l", 3, 2, &mut rng).unwrap();
        ps.constant("log_alpha", &[], 0.5).unwrap();
        let ck = Checkpoint::new("toy", &serde_json::json!({"k": 4}), &ps).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("toy.ckpt");
        ck.save(&path).unwrap();
        let back = Checkpoint::load(&path).unwrap();
        assert_eq!(back, ck);
        assert!(back.expect_kind("other", &path).is_err());

        let mut rng2 = Rng::seed_from_u64(9);
        let mut fresh = ParamStore::new();
        let lin2 = fresh.linear("l", 3, 2, &mut rng2).unwrap();
        fresh.constant("log_alpha", &[], 0.0).unwrap();
        fresh.load_arrays(&back.arrays).unwrap();
        let x = Tensor::new(&[[0.1f32, -0.2, 0.3]], &Device::Cpu).unwrap();
        let y1: Vec<Vec<f32>> = lin.forward(&x).unwrap().to_vec2().unwrap();
        let y2: Vec<Vec<f32>> = lin2.forward(&x).unwrap().to_vec2().unwrap();
        assert_eq!(y1, y2);
    }

    #[test]
    fn corrupt_checkpoint_rejected() {
        let p = Path::new("x.ckpt");
        assert!(Checkpoint::from_bytes(b"garbage", p).is_err());
        let mut ps = ParamStore::new();
        ps.constant("a", &[3], 1.0).unwrap();
        let mut bytes = Checkpoint::new("t", &(), &ps).unwrap().to_bytes();
        bytes.pop();
        assert!(Checkpoint::from_bytes(&bytes, p).is_err());
    }

    #[test]
    fn soft_update_matches_discounted_mixture() {
        // scalar toy network: target follows an exponential moving average
        let tau = 0.01f64;
        let target = Var::new(&[2.0f32], &Device::Cpu).unwrap();
        let online = Var::new(&[0.0f32], &Device::Cpu).unwrap();
        let history: Vec<f32> = (0..50).map(|i| ((i * 37) % 11) as f32 - 5.0).collect();
        let mut expected = 2.0f64;
        for &c in &history {
            online.set(&Tensor::new(&[c], &Device::Cpu).unwrap()).unwrap();
            soft_update(&[target.clone()], &[online.clone()], tau).unwrap();
            expected = tau * c as f64 + (1.0 - tau) * expected;
        }
        // closed form: (1-τ)^n t0 + Σ τ (1-τ)^(n-1-i) c_i
        let n = history.len() as i32;
        let closed: f64 = (1.0 - tau).powi(n) * 2.0
            + history
                .iter()
                .enumerate()
                .map(|(i, &c)| tau * (1.0 - tau).powi(n - 1 - i as i32) * c as f64)
                .sum::<f64>();
        let got = target.as_tensor().to_vec1::<f32>().unwrap()[0] as f64;
        assert!((expected - closed).abs() < 1e-12);
        assert!((got - closed).abs() < 1e-6, "{got} vs {closed}");
    }
}
