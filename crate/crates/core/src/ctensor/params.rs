use crate::error::{contract_err, Result};

use super::{CVar, ComplexTensor, Gradients, Tape};

/// How a stored tensor participates in training.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamKind {
    /// Trainable complex parameter; both parts receive gradients.
    Complex,
    /// Trainable real parameter; the imaginary part is always zero.
    Real,
    /// Non-trainable state (e.g. running normalization statistics).
    Buffer,
}

impl ParamKind {
    pub(crate) fn code(self) -> u8 {
        match self {
            ParamKind::Complex => 0,
            ParamKind::Real => 1,
            ParamKind::Buffer => 2,
        }
    }

    pub(crate) fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(ParamKind::Complex),
            1 => Some(ParamKind::Real),
            2 => Some(ParamKind::Buffer),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Param {
    pub name: String,
    pub kind: ParamKind,
    pub value: ComplexTensor,
}

impl Param {
    /// Number of independent trainable real scalars.
    pub fn trainable_scalars(&self) -> usize {
        match self.kind {
            ParamKind::Complex => 2 * self.value.numel(),
            ParamKind::Real => self.value.numel(),
            ParamKind::Buffer => 0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Ordered, named collection of every tensor a model owns.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    params: Vec<Param>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, kind: ParamKind, value: ComplexTensor) -> ParamId {
        let name = name.into();
        assert!(self.find(&name).is_none(), "duplicate parameter name {name}");
        self.params.push(Param { name, kind, value });
        ParamId(self.params.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &Param {
        &self.params[id.0]
    }

    pub fn value(&self, id: ParamId) -> &ComplexTensor {
        &self.params[id.0].value
    }

    pub fn set_value(&mut self, id: ParamId, value: ComplexTensor) -> Result<()> {
        let p = &mut self.params[id.0];
        if p.value.shape() != value.shape() {
            return Err(contract_err!(
                "parameter {} has shape {:?}, got {:?}",
                p.name,
                p.value.shape(),
                value.shape()
            ));
        }
        p.value = value;
        Ok(())
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Param)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub(crate) fn value_mut(&mut self, id: ParamId) -> &mut ComplexTensor {
        &mut self.params[id.0].value
    }

    /// Trainable real scalars across all parameters.
    pub fn trainable_count(&self) -> usize {
        self.params.iter().map(Param::trainable_scalars).sum()
    }

    /// Trainable scalars among parameters whose name starts with `prefix`.
    pub fn trainable_count_with_prefix(&self, prefix: &str) -> usize {
        self.params.iter().filter(|p| p.name.starts_with(prefix)).map(Param::trainable_scalars).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.params.iter().all(|p| p.value.is_finite())
    }
}

/// One forward pass: a fresh tape plus lazily bound parameters.
///
/// Parameters enter the tape as leaves the first time a layer asks for them;
/// after [`Tape::backward`] their gradients are read back with
/// [`Session::param_grads`].
pub struct Session<'a> {
    pub tape: Tape,
    store: &'a ParamStore,
    bound: Vec<Option<CVar>>,
    training: bool,
    buffer_updates: Vec<(ParamId, ComplexTensor)>,
}

impl<'a> Session<'a> {
    pub fn new(store: &'a ParamStore, training: bool) -> Self {
        Self { tape: Tape::new(), store, bound: vec![None; store.len()], training, buffer_updates: Vec::new() }
    }

    pub fn training(&self) -> bool {
        self.training
    }

    pub fn store(&self) -> &ParamStore {
        self.store
    }

    /// Tape handle for a parameter, binding it on first use.
    pub fn param(&mut self, id: ParamId) -> CVar {
        if let Some(v) = self.bound[id.0] {
            return v;
        }
        let p = self.store.get(id);
        let v = match p.kind {
            ParamKind::Complex => self.tape.complex_leaf(&p.value, true),
            ParamKind::Real => CVar {
                re: self.tape.leaf(p.value.re().clone(), true),
                im: self.tape.constant(p.value.im().clone()),
            },
            ParamKind::Buffer => self.tape.complex_constant(&p.value),
        };
        self.bound[id.0] = Some(v);
        v
    }

    /// Queue a new value for a buffer parameter (applied by the trainer).
    pub fn update_buffer(&mut self, id: ParamId, value: ComplexTensor) {
        self.buffer_updates.push((id, value));
    }

    pub fn take_buffer_updates(&mut self) -> Vec<(ParamId, ComplexTensor)> {
        std::mem::take(&mut self.buffer_updates)
    }

    /// Gradients of every bound trainable parameter.
    pub fn param_grads(&self, grads: &Gradients) -> Vec<(ParamId, ComplexTensor)> {
        self.bound
            .iter()
            .enumerate()
            .filter_map(|(i, b)| {
                let v = (*b)?;
                (self.store.get(ParamId(i)).kind != ParamKind::Buffer)
                    .then(|| (ParamId(i), grads.get_complex(&self.tape, v)))
            })
            .collect()
    }
}
