//! Named parameter storage with seeded initialization.
//!
//! Layers request parameters by name and shape. What happens on a miss
//! depends on the store's mode: a fresh store samples from its seeded
//! generator, a loaded store fails (adapter weights excepted, they are
//! always created fresh), and a recording store hands out zero-cost
//! broadcast placeholders so the full inventory of a large configuration can
//! be listed without allocating it.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use candle_core::{DType, Device, Tensor, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::{ModelError, Result};

/// Marker contained in the names of adapter parameters.
pub const ADAPTER_MARKER: &str = ".adapter.";

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Init {
    Normal(f64),
    Zeros,
    Ones,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Trainable {
    All,
    AdaptersOnly,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Mode {
    Fresh,
    Loaded,
    Record,
}

pub struct ParamStore {
    vars: BTreeMap<String, Var>,
    recorded: BTreeMap<String, Vec<usize>>,
    mode: Mode,
    rng: ChaCha8Rng,
    trainable: Trainable,
    device: Device,
}

impl ParamStore {
    /// Empty store whose missing parameters are sampled from `seed`.
    pub fn fresh(seed: u64, device: &Device) -> Self {
        Self::with_mode(Mode::Fresh, seed, device)
    }

    /// Store that only lists names and shapes.
    pub fn recording() -> Self {
        Self::with_mode(Mode::Record, 0, &Device::Cpu)
    }

    fn with_mode(mode: Mode, seed: u64, device: &Device) -> Self {
        Self {
            vars: BTreeMap::new(),
            recorded: BTreeMap::new(),
            mode,
            rng: ChaCha8Rng::seed_from_u64(seed),
            trainable: Trainable::All,
            device: device.clone(),
        }
    }

    /// Loads tensors from safetensors files, converting them to `f32`.
    pub fn from_safetensors<P: AsRef<Path>>(files: &[P], seed: u64, device: &Device) -> Result<Self> {
        let mut store = Self::with_mode(Mode::Loaded, seed, device);
        for file in files {
            let file = file.as_ref();
            let tensors = candle_core::safetensors::load(file, device)
                .map_err(|e| ModelError::load(file, e))?;
            store.insert_all(tensors)?;
        }
        Ok(store)
    }

    pub fn from_tensors(tensors: HashMap<String, Tensor>, seed: u64, device: &Device) -> Result<Self> {
        let mut store = Self::with_mode(Mode::Loaded, seed, device);
        store.insert_all(tensors)?;
        Ok(store)
    }

    fn insert_all(&mut self, tensors: HashMap<String, Tensor>) -> Result<()> {
        for (name, tensor) in tensors {
            let tensor = tensor.to_dtype(DType::F32)?;
            self.vars.insert(name, Var::from_tensor(&tensor)?);
        }
        Ok(())
    }

    pub fn device(&self) -> &Device {
        &self.device
    }

    pub fn set_trainable(&mut self, trainable: Trainable) {
        self.trainable = trainable;
    }

    pub fn trainable(&self) -> Trainable {
        self.trainable
    }

    /// Reseeds the generator used for parameters created from now on.
    pub fn reseed(&mut self, seed: u64) {
        self.rng = ChaCha8Rng::seed_from_u64(seed);
    }

    fn is_trainable(&self, name: &str) -> bool {
        match self.trainable {
            Trainable::All => true,
            Trainable::AdaptersOnly => name.contains(ADAPTER_MARKER),
        }
    }

    /// Returns the named parameter, creating it if the mode allows.
    pub fn get(&mut self, name: &str, shape: &[usize], init: Init) -> Result<Tensor> {
        if self.mode == Mode::Record {
            self.recorded.insert(name.to_string(), shape.to_vec());
            return Ok(Tensor::zeros((), DType::F32, &self.device)?.broadcast_as(shape)?);
        }
        if let Some(var) = self.vars.get(name) {
            let found = var.dims().to_vec();
            if found != shape {
                return Err(ModelError::ShapeMismatch {
                    name: name.to_string(),
                    expected: shape.to_vec(),
                    found,
                });
            }
        } else {
            if self.mode == Mode::Loaded && !name.contains(ADAPTER_MARKER) {
                return Err(ModelError::MissingParameter(name.to_string()));
            }
            let tensor = self.sample(shape, init)?;
            self.vars.insert(name.to_string(), Var::from_tensor(&tensor)?);
        }
        let var = &self.vars[name];
        Ok(if self.is_trainable(name) {
            var.as_tensor().clone()
        } else {
            var.as_tensor().detach()
        })
    }

    /// Like [`get`](Self::get) but never creates the parameter.
    pub fn get_existing(&mut self, name: &str, shape: &[usize]) -> Result<Option<Tensor>> {
        if self.mode == Mode::Record || self.vars.contains_key(name) {
            return self.get(name, shape, Init::Zeros).map(Some);
        }
        Ok(None)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.vars.contains_key(name) || self.recorded.contains_key(name)
    }

    fn sample(&mut self, shape: &[usize], init: Init) -> Result<Tensor> {
        let n: usize = shape.iter().product();
        let data: Vec<f32> = match init {
            Init::Zeros => vec![0.0; n],
            Init::Ones => vec![1.0; n],
            Init::Normal(std) => {
                let normal = Normal::new(0.0f64, std)
                    .map_err(|e| ModelError::invalid(format!("bad init std {std}: {e}")))?;
                (0..n).map(|_| normal.sample(&mut self.rng) as f32).collect()
            }
        };
        Ok(Tensor::from_vec(data, shape, &self.device)?)
    }

    /// Names and shapes of every parameter seen so far.
    pub fn inventory(&self) -> BTreeMap<String, Vec<usize>> {
        let mut out = self.recorded.clone();
        for (name, var) in &self.vars {
            out.insert(name.clone(), var.dims().to_vec());
        }
        out
    }

    pub fn parameter_count(&self) -> usize {
        self.inventory().values().map(|s| s.iter().product::<usize>()).sum()
    }

    pub fn trainable_parameter_count(&self) -> usize {
        self.inventory()
            .iter()
            .filter(|(name, _)| self.is_trainable(name))
            .map(|(_, s)| s.iter().product::<usize>())
            .sum()
    }

    /// Variables the optimizer should update.
    pub fn trainable_vars(&self) -> Vec<Var> {
        self.vars
            .iter()
            .filter(|(name, _)| self.is_trainable(name))
            .map(|(_, v)| v.clone())
            .collect()
    }

    /// Independent copy: training the copy leaves this store untouched.
    pub fn deep_copy(&self) -> Result<Self> {
        let mut vars = BTreeMap::new();
        for (name, var) in &self.vars {
            vars.insert(name.clone(), Var::from_tensor(&var.as_tensor().copy()?)?);
        }
        Ok(Self {
            vars,
            recorded: self.recorded.clone(),
            mode: self.mode,
            rng: self.rng.clone(),
            trainable: self.trainable,
            device: self.device.clone(),
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let tensors: HashMap<String, Tensor> = self
            .vars
            .iter()
            .map(|(k, v)| (k.clone(), v.as_tensor().clone()))
            .collect();
        candle_core::safetensors::save(&tensors, path)?;
        Ok(())
    }

    pub fn tensor(&self, name: &str) -> Option<Tensor> {
        self.vars.get(name).map(|v| v.as_tensor().clone())
    }
}
