//! Named learnable tensors, their initialization and the checkpoint format.
//!
//! Checkpoint layout (little-endian): magic `LGFN`, `u32` version = 1, `u32`
//! tensor count; per tensor a `u16` name length, the UTF-8 name, a `u8`
//! rank, `rank` `u32` extents and the `f32` payload.

use std::fs;
use std::path::Path;

use indexmap::IndexMap;
use lgfn_tensor::{GradTape, Real, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::LgfnConfig;
use crate::error::{io_err, LgfnError, Result};

/// Cost-accounting bucket of a layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ParamGroup {
    Shallow,
    Dgce,
    Esam,
    Ecam,
    Fusion,
    Upsampler,
}

impl ParamGroup {
    pub const ALL: [ParamGroup; 6] = [
        ParamGroup::Shallow,
        ParamGroup::Dgce,
        ParamGroup::Esam,
        ParamGroup::Ecam,
        ParamGroup::Fusion,
        ParamGroup::Upsampler,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            ParamGroup::Shallow => "shallow",
            ParamGroup::Dgce => "dgce",
            ParamGroup::Esam => "esam",
            ParamGroup::Ecam => "ecam",
            ParamGroup::Fusion => "fusion",
            ParamGroup::Upsampler => "upsampler",
        }
    }
}

/// One convolution layer of the network.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerDecl {
    pub name: String,
    pub group: ParamGroup,
    pub weight_shape: Vec<usize>,
    pub bias: bool,
}

impl LayerDecl {
    fn conv(name: String, group: ParamGroup, cout: usize, cin_g: usize, k: usize) -> Self {
        Self {
            name,
            group,
            weight_shape: vec![cout, cin_g, k, k],
            bias: true,
        }
    }

    fn conv3d(name: String, group: ParamGroup, cout: usize, cin: usize, k: usize) -> Self {
        Self {
            name,
            group,
            weight_shape: vec![cout, cin, 1, k, k],
            bias: true,
        }
    }

    pub fn weight_name(&self) -> String {
        format!("{}.weight", self.name)
    }

    pub fn bias_name(&self) -> String {
        format!("{}.bias", self.name)
    }

    pub fn fan_in(&self) -> usize {
        self.weight_shape[1..].iter().product()
    }

    pub fn out_channels(&self) -> usize {
        self.weight_shape[0]
    }
}

/// Name prefix of LGFM `lgfm`, branch `branch`.
pub fn branch_prefix(lgfm: usize, branch: usize) -> String {
    format!("lgfm.{lgfm}.{branch}")
}

/// Every layer of the network for `cfg`, in forward order.
pub fn layers(cfg: &LgfnConfig) -> Vec<LayerDecl> {
    use ParamGroup::*;
    let c = cfg.channels;
    let mut out = vec![LayerDecl::conv3d("shallow".into(), Shallow, c, 1, 3)];
    for (i, j, _) in cfg.branches() {
        let p = branch_prefix(i, j);
        if cfg.enable_dgce {
            let h = cfg.dgce_half();
            out.push(LayerDecl::conv(
                format!("{p}.dgce.expand"),
                Dgce,
                2 * h,
                c,
                1,
            ));
            out.push(LayerDecl::conv(format!("{p}.dgce.dw_a"), Dgce, h, 1, 3));
            out.push(LayerDecl::conv(format!("{p}.dgce.dw_b"), Dgce, h, 1, 3));
            out.push(LayerDecl::conv(format!("{p}.dgce.fuse"), Dgce, c, h, 1));
            out.push(LayerDecl::conv(format!("{p}.dgce.out"), Dgce, c, c, 1));
        }
        if cfg.enable_esam {
            let r = cfg.esam_channels();
            let l = cfg.lka;
            out.push(LayerDecl::conv(format!("{p}.esam.reduce"), Esam, r, c, 1));
            out.push(LayerDecl::conv(format!("{p}.esam.down"), Esam, r, 1, 3));
            out.push(LayerDecl::conv(
                format!("{p}.esam.lka_dw"),
                Esam,
                r,
                1,
                l.dw_kernel,
            ));
            out.push(LayerDecl::conv(
                format!("{p}.esam.lka_dilated"),
                Esam,
                r,
                1,
                l.dilated_kernel,
            ));
            out.push(LayerDecl::conv(format!("{p}.esam.lka_pw"), Esam, r, r, 1));
            out.push(LayerDecl::conv(format!("{p}.esam.expand"), Esam, c, r, 1));
        }
        if cfg.enable_ecam {
            for path in ["max", "avg"] {
                out.push(LayerDecl {
                    name: format!("{p}.ecam.{path}_conv"),
                    group: Ecam,
                    weight_shape: vec![1, 1, 1, 3],
                    bias: true,
                });
            }
        }
    }
    out.push(LayerDecl::conv3d("fusion".into(), Fusion, c, c, 3));
    let s2 = cfg.scale * cfg.scale;
    out.push(LayerDecl::conv(
        "upsampler.expand".into(),
        Upsampler,
        c * s2,
        c,
        1,
    ));
    out.push(LayerDecl::conv("upsampler.out".into(), Upsampler, 1, c, 3));
    out
}

/// Ordered map from parameter name to tensor.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamStore<T = f32> {
    tensors: IndexMap<String, Tensor<T>>,
}

impl<T: Real> ParamStore<T> {
    pub fn new() -> Self {
        Self {
            tensors: IndexMap::new(),
        }
    }

    pub fn insert(&mut self, name: impl Into<String>, t: Tensor<T>) -> Result<()> {
        let name = name.into();
        if self.tensors.contains_key(&name) {
            return Err(LgfnError::Config(format!("duplicate parameter {name}")));
        }
        self.tensors.insert(name, t);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Result<&Tensor<T>> {
        self.tensors
            .get(name)
            .ok_or_else(|| LgfnError::Config(format!("missing parameter {name}")))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor<T>> {
        self.tensors
            .get_mut(name)
            .ok_or_else(|| LgfnError::Config(format!("missing parameter {name}")))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor<T>)> {
        self.tensors.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Tensor<T>)> {
        self.tensors.iter_mut()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.tensors.keys()
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    /// Total number of learnable scalars.
    pub fn scalar_count(&self) -> usize {
        self.tensors.values().map(Tensor::len).sum()
    }

    pub fn cast<U: Real>(&self) -> ParamStore<U> {
        ParamStore {
            tensors: self
                .tensors
                .iter()
                .map(|(k, v)| (k.clone(), v.cast()))
                .collect(),
        }
    }

    /// Checks names, order and shapes against what `cfg` expects, naming the
    /// first offending tensor.
    pub fn check_against(&self, cfg: &LgfnConfig) -> Result<()> {
        let mut expected = Vec::new();
        for l in layers(cfg) {
            expected.push((l.weight_name(), l.weight_shape.clone()));
            if l.bias {
                expected.push((l.bias_name(), vec![l.out_channels()]));
            }
        }
        for (name, shape) in &expected {
            match self.tensors.get(name) {
                None => {
                    return Err(LgfnError::Checkpoint(format!(
                        "tensor {name} missing for this config"
                    )))
                }
                Some(t) if t.shape() != shape.as_slice() => {
                    return Err(LgfnError::Checkpoint(format!(
                        "tensor {name} has shape {:?}, config expects {shape:?}",
                        t.shape()
                    )))
                }
                _ => {}
            }
        }
        if let Some(extra) = self
            .tensors
            .keys()
            .find(|k| !expected.iter().any(|(n, _)| n == *k))
        {
            return Err(LgfnError::Checkpoint(format!(
                "tensor {extra} is not part of this config"
            )));
        }
        Ok(())
    }

    /// Places every tensor on the tape: as tracked leaves when the tape
    /// records gradients, as constants otherwise.
    pub fn bind(&self, tape: &mut GradTape<T>) -> BoundParams<T> {
        BoundParams {
            vars: self
                .tensors
                .iter()
                .map(|(k, v)| (k.clone(), tape.leaf(v.clone())))
                .collect(),
        }
    }
}

/// Parameters placed on a tape, looked up by name during the forward pass.
pub struct BoundParams<T> {
    vars: IndexMap<String, Var<T>>,
}

impl<T: Real> BoundParams<T> {
    /// Pairs already-created tape variables with the names of `store`, in
    /// store order.
    pub fn from_vars(store: &ParamStore<T>, vars: &[Var<T>]) -> Result<Self> {
        if vars.len() != store.len() {
            return Err(LgfnError::Config(format!(
                "{} variables for {} parameters",
                vars.len(),
                store.len()
            )));
        }
        let mut out = IndexMap::new();
        for ((name, t), v) in store.iter().zip(vars) {
            if t.shape() != v.shape() {
                return Err(LgfnError::Config(format!(
                    "variable for {name} has shape {:?}, expected {:?}",
                    v.shape(),
                    t.shape()
                )));
            }
            out.insert(name.clone(), v.clone());
        }
        Ok(Self { vars: out })
    }

    pub fn get(&self, name: &str) -> Result<&Var<T>> {
        self.vars
            .get(name)
            .ok_or_else(|| LgfnError::Config(format!("missing parameter {name}")))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Var<T>)> {
        self.vars.iter()
    }
}

/// Fan-in uniform initialization: weights `~ U(−1/√fan_in, 1/√fan_in)`,
/// biases zero. Deterministic in `seed`.
pub fn init_params<T: Real>(cfg: &LgfnConfig, seed: u64) -> Result<ParamStore<T>> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    for l in layers(cfg) {
        let bound = 1.0 / (l.fan_in() as f64).sqrt();
        let w = Tensor::from_fn(&l.weight_shape, |_| {
            T::from_f64(rng.random_range(-bound..bound))
        })?;
        store.insert(l.weight_name(), w)?;
        if l.bias {
            store.insert(l.bias_name(), Tensor::zeros(&[l.out_channels()])?)?;
        }
    }
    Ok(store)
}

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"LGFN";
pub const CHECKPOINT_VERSION: u32 = 1;

pub fn encode_checkpoint<T: Real>(store: &ParamStore<T>) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(store.len() as u32).to_le_bytes());
    for (name, t) in store.iter() {
        let len = u16::try_from(name.len())
            .map_err(|_| LgfnError::Checkpoint(format!("name too long: {name}")))?;
        out.extend_from_slice(&len.to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.push(t.rank() as u8);
        for &e in t.shape() {
            out.extend_from_slice(&(e as u32).to_le_bytes());
        }
        for &v in t.data() {
            out.extend_from_slice(&v.to_f32().to_le_bytes());
        }
    }
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(LgfnError::Checkpoint(format!(
                "truncated at byte {} (needed {n} more)",
                self.pos
            )));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(
            self.take(4)?.try_into().expect("4 bytes"),
        ))
    }
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<ParamStore<f32>> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4)? != CHECKPOINT_MAGIC {
        return Err(LgfnError::Checkpoint("bad magic, expected \"LGFN\"".into()));
    }
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(LgfnError::Checkpoint(format!(
            "unsupported version {version}"
        )));
    }
    let count = r.u32()?;
    let mut store = ParamStore::new();
    for _ in 0..count {
        let len = u16::from_le_bytes(r.take(2)?.try_into().expect("2 bytes")) as usize;
        let name = std::str::from_utf8(r.take(len)?)
            .map_err(|_| LgfnError::Checkpoint("tensor name is not UTF-8".into()))?
            .to_string();
        let rank = r.take(1)?[0] as usize;
        let shape = (0..rank)
            .map(|_| r.u32().map(|e| e as usize))
            .collect::<Result<Vec<_>>>()?;
        let n: usize = shape.iter().product();
        let data = r
            .take(4 * n)?
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        let t = Tensor::new(&shape, data)
            .map_err(|e| LgfnError::Checkpoint(format!("tensor {name}: {e}")))?;
        store.insert(name, t)?;
    }
    if r.pos != bytes.len() {
        return Err(LgfnError::Checkpoint(format!(
            "{} trailing bytes",
            bytes.len() - r.pos
        )));
    }
    Ok(store)
}

pub fn checkpoint_save<T: Real>(store: &ParamStore<T>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_checkpoint(store)?).map_err(io_err(path))
}

pub fn checkpoint_load(path: impl AsRef<Path>) -> Result<ParamStore<f32>> {
    let path = path.as_ref();
    decode_checkpoint(&fs::read(path).map_err(io_err(path))?)
}

/// Loads a checkpoint and verifies it against `cfg`.
pub fn checkpoint_load_for(path: impl AsRef<Path>, cfg: &LgfnConfig) -> Result<ParamStore<f32>> {
    let store = checkpoint_load(path)?;
    store.check_against(cfg)?;
    Ok(store)
}
