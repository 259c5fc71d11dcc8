use std::collections::HashMap;
use std::fmt::Display;
use std::sync::{Mutex, MutexGuard};

use candle_core::{DType, Device, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamKind {
    /// Updated by the optimizer unless frozen.
    Weight,
    /// Running statistics; never touched by the optimizer.
    Buffer,
}

#[derive(Debug, Clone)]
pub struct ParamEntry {
    pub name: String,
    pub var: Var,
    pub kind: ParamKind,
    pub frozen: bool,
}

struct Inner {
    entries: Vec<ParamEntry>,
    index: HashMap<String, usize>,
    rng: ChaCha8Rng,
}

/// Named, ordered collection of model variables with seeded initialisation.
pub struct ParamStore {
    device: Device,
    dtype: DType,
    inner: Mutex<Inner>,
}

impl ParamStore {
    pub fn new(seed: u64, dtype: DType) -> Self {
        Self {
            device: Device::Cpu,
            dtype,
            inner: Mutex::new(Inner {
                entries: Vec::new(),
                index: HashMap::new(),
                rng: ChaCha8Rng::seed_from_u64(seed),
            }),
        }
    }

    fn lock(&self) -> MutexGuard<'_, Inner> {
        self.inner.lock().expect("parameter store poisoned")
    }

    pub fn device(&self) -> &Device {
        &self.device
    }

    pub fn dtype(&self) -> DType {
        self.dtype
    }

    pub fn root(&self) -> Scope<'_> {
        Scope {
            store: self,
            prefix: String::new(),
        }
    }

    fn register(&self, name: String, values: Vec<f64>, shape: &[usize], kind: ParamKind) -> Result<Tensor> {
        let t = Tensor::from_vec(values, shape, &self.device)?.to_dtype(self.dtype)?;
        let var = Var::from_tensor(&t)?;
        let mut inner = self.lock();
        if inner.index.contains_key(&name) {
            return Err(Error::config(format!("parameter `{name}` registered twice")));
        }
        let out = var.as_tensor().clone();
        let idx = inner.entries.len();
        inner.index.insert(name.clone(), idx);
        inner.entries.push(ParamEntry {
            name,
            var,
            kind,
            frozen: false,
        });
        Ok(out)
    }

    pub fn len(&self) -> usize {
        self.lock().entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn names(&self) -> Vec<String> {
        self.lock().entries.iter().map(|e| e.name.clone()).collect()
    }

    pub fn entries(&self) -> Vec<ParamEntry> {
        self.lock().entries.clone()
    }

    pub fn get(&self, name: &str) -> Option<Var> {
        let inner = self.lock();
        inner.index.get(name).map(|&i| inner.entries[i].var.clone())
    }

    /// Weights the optimizer may update.
    pub fn trainable(&self) -> Vec<(String, Var)> {
        self.lock()
            .entries
            .iter()
            .filter(|e| e.kind == ParamKind::Weight && !e.frozen)
            .map(|e| (e.name.clone(), e.var.clone()))
            .collect()
    }

    /// Marks every parameter under `prefix` as frozen (or unfrozen); returns how many matched.
    pub fn set_frozen(&self, prefix: &str, frozen: bool) -> usize {
        let mut n = 0;
        for e in self.lock().entries.iter_mut() {
            if e.name.starts_with(prefix) {
                e.frozen = frozen;
                n += 1;
            }
        }
        n
    }

    pub fn num_elements(&self, prefix: &str) -> usize {
        self.lock()
            .entries
            .iter()
            .filter(|e| e.name.starts_with(prefix))
            .map(|e| e.var.elem_count())
            .sum()
    }

    /// Deep copies of all values, in registration order.
    pub fn snapshot(&self) -> Result<Vec<(String, Tensor)>> {
        self.lock()
            .entries
            .iter()
            .map(|e| Ok((e.name.clone(), e.var.as_tensor().detach().copy()?)))
            .collect()
    }

    /// Overwrites one value; the shape must match exactly.
    pub fn set(&self, name: &str, value: &Tensor) -> Result<()> {
        let var = self
            .get(name)
            .ok_or_else(|| Error::config(format!("unknown parameter `{name}`")))?;
        if var.dims() != value.dims() {
            return Err(Error::Shape(format!(
                "parameter `{name}`: expected shape {:?}, got {:?}",
                var.dims(),
                value.dims()
            )));
        }
        var.set(&value.to_dtype(self.dtype)?.to_device(&self.device)?)?;
        Ok(())
    }

    pub fn load_snapshot(&self, values: &[(String, Tensor)]) -> Result<()> {
        for (name, t) in values {
            self.set(name, t)?;
        }
        Ok(())
    }
}

/// Hierarchical name prefix used while building a model.
#[derive(Clone)]
pub struct Scope<'a> {
    store: &'a ParamStore,
    prefix: String,
}

impl<'a> Scope<'a> {
    pub fn pp(&self, name: impl Display) -> Scope<'a> {
        Scope {
            store: self.store,
            prefix: self.full(name),
        }
    }

    fn full(&self, name: impl Display) -> String {
        if self.prefix.is_empty() {
            name.to_string()
        } else {
            format!("{}.{}", self.prefix, name)
        }
    }

    pub fn store(&self) -> &'a ParamStore {
        self.store
    }

    pub fn prefix(&self) -> &str {
        &self.prefix
    }

    /// Uniform in [-bound, bound].
    pub fn uniform(&self, name: &str, shape: &[usize], bound: f64) -> Result<Tensor> {
        let n: usize = shape.iter().product();
        let values: Vec<f64> = {
            let mut inner = self.store.lock();
            (0..n).map(|_| inner.rng.random_range(-bound..=bound)).collect()
        };
        self.store.register(self.full(name), values, shape, ParamKind::Weight)
    }

    pub fn constant(&self, name: &str, shape: &[usize], value: f64) -> Result<Tensor> {
        let n: usize = shape.iter().product();
        self.store.register(self.full(name), vec![value; n], shape, ParamKind::Weight)
    }

    pub fn buffer(&self, name: &str, shape: &[usize], value: f64) -> Result<Tensor> {
        let n: usize = shape.iter().product();
        self.store.register(self.full(name), vec![value; n], shape, ParamKind::Buffer)
    }

    pub fn var(&self, name: &str) -> Result<Var> {
        let full = self.full(name);
        self.store
            .get(&full)
            .ok_or_else(|| Error::config(format!("unknown parameter `{full}`")))
    }
}
