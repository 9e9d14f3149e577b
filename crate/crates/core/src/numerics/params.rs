use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::numerics::Tensor2;

const MAGIC: &[u8; 8] = b"BNAOTNSR";
const VERSION: u32 = 1;

#[derive(Clone, Debug)]
struct Slot {
    name: String,
    value: Tensor2,
    grad: Tensor2,
    velocity: Tensor2,
}

/// Named trainable tensors with gradient accumulators and momentum buffers.
///
/// Slots keep insertion order; that order is also the serialization order.
#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    slots: Vec<Slot>,
    index: BTreeMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Inserts or replaces a slot. Replacing resets its gradient and velocity.
    pub fn insert(&mut self, name: impl Into<String>, value: Tensor2) -> usize {
        let name = name.into();
        let (r, c) = value.shape();
        let slot = Slot {
            name: name.clone(),
            value,
            grad: Tensor2::zeros(r, c),
            velocity: Tensor2::zeros(r, c),
        };
        match self.index.get(&name) {
            Some(&i) => {
                self.slots[i] = slot;
                i
            }
            None => {
                self.slots.push(slot);
                self.index.insert(name, self.slots.len() - 1);
                self.slots.len() - 1
            }
        }
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    pub fn contains(&self, name: &str) -> bool {
        self.index.contains_key(name)
    }

    pub fn slot_id(&self, name: &str) -> Result<usize> {
        self.index
            .get(name)
            .copied()
            .ok_or_else(|| Error::UnknownSlot(name.to_string()))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.slots.iter().map(|s| s.name.as_str())
    }

    pub fn value(&self, name: &str) -> Result<&Tensor2> {
        Ok(&self.slots[self.slot_id(name)?].value)
    }

    pub fn value_mut(&mut self, name: &str) -> Result<&mut Tensor2> {
        let i = self.slot_id(name)?;
        Ok(&mut self.slots[i].value)
    }

    pub fn grad(&self, name: &str) -> Result<&Tensor2> {
        Ok(&self.slots[self.slot_id(name)?].grad)
    }

    pub(crate) fn value_at(&self, id: usize) -> &Tensor2 {
        &self.slots[id].value
    }

    pub(crate) fn accumulate_grad(&mut self, id: usize, g: &Tensor2) {
        self.slots[id].grad.add_assign(g);
    }

    pub fn zero_grad(&mut self) {
        for s in &mut self.slots {
            s.grad.fill(0.0);
        }
    }

    /// Momentum SGD: `v ← momentum·v + g; w ← w − lr·v`, then zeroes gradients.
    pub fn sgd_step(&mut self, lr: f64, momentum: f64) {
        for s in &mut self.slots {
            for ((w, v), g) in s
                .value
                .data_mut()
                .iter_mut()
                .zip(s.velocity.data_mut().iter_mut())
                .zip(s.grad.data())
            {
                *v = momentum * *v + g;
                *w -= lr * *v;
            }
            s.grad.fill(0.0);
        }
    }

    /// Same as [`sgd_step`](Self::sgd_step) restricted to the named slots.
    /// Gradients of every slot are zeroed afterwards.
    pub fn sgd_step_slots(&mut self, ids: &[usize], lr: f64, momentum: f64) {
        for &i in ids {
            let s = &mut self.slots[i];
            for ((w, v), g) in s
                .value
                .data_mut()
                .iter_mut()
                .zip(s.velocity.data_mut().iter_mut())
                .zip(s.grad.data())
            {
                *v = momentum * *v + g;
                *w -= lr * *v;
            }
        }
        self.zero_grad();
    }

    /// Momentum buffers, in slot order.
    pub fn velocities(&self) -> Vec<(&str, &Tensor2)> {
        self.slots.iter().map(|s| (s.name.as_str(), &s.velocity)).collect()
    }

    pub fn set_velocity(&mut self, name: &str, v: Tensor2) -> Result<()> {
        let i = self.slot_id(name)?;
        let s = &mut self.slots[i];
        if s.velocity.shape() != v.shape() {
            return Err(Error::ShapeMismatch {
                op: "set_velocity",
                left: s.velocity.shape(),
                right: v.shape(),
            });
        }
        s.velocity = v;
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let entries: Vec<(&str, &Tensor2)> = self
            .slots
            .iter()
            .map(|s| (s.name.as_str(), &s.value))
            .collect();
        write_tensors(path, &entries)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let mut store = ParamStore::new();
        for (name, t) in read_tensors(path)? {
            store.insert(name, t);
        }
        Ok(store)
    }
}

/// Writes named tensors in the shared binary layout: magic, version, count,
/// then per tensor the name length, name bytes, rows, cols and little-endian
/// `f64` values.
pub fn write_tensors(path: impl AsRef<Path>, entries: &[(&str, &Tensor2)]) -> Result<()> {
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.extend_from_slice(&(entries.len() as u32).to_le_bytes());
    for (name, t) in entries {
        buf.extend_from_slice(&(name.len() as u32).to_le_bytes());
        buf.extend_from_slice(name.as_bytes());
        buf.extend_from_slice(&(t.rows() as u32).to_le_bytes());
        buf.extend_from_slice(&(t.cols() as u32).to_le_bytes());
        for v in t.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    let mut f = std::fs::File::create(path)?;
    f.write_all(&buf)?;
    Ok(())
}

pub fn read_tensors(path: impl AsRef<Path>) -> Result<Vec<(String, Tensor2)>> {
    let path = path.as_ref();
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    let bad = |reason: &str| Error::Format {
        path: path.to_path_buf(),
        reason: reason.to_string(),
    };
    let mut cur = Cursor { bytes: &bytes, pos: 0 };
    if cur.take(8).ok_or_else(|| bad("truncated header"))? != MAGIC {
        return Err(bad("bad magic"));
    }
    let version = cur.u32().ok_or_else(|| bad("truncated header"))?;
    if version != VERSION {
        return Err(bad(&format!("unsupported version {version}")));
    }
    let count = cur.u32().ok_or_else(|| bad("truncated header"))?;
    let mut out = Vec::with_capacity(count as usize);
    for _ in 0..count {
        let len = cur.u32().ok_or_else(|| bad("truncated slot"))? as usize;
        let name = cur.take(len).ok_or_else(|| bad("truncated slot name"))?;
        let name = String::from_utf8(name.to_vec()).map_err(|_| bad("slot name is not utf-8"))?;
        let rows = cur.u32().ok_or_else(|| bad("truncated slot"))? as usize;
        let cols = cur.u32().ok_or_else(|| bad("truncated slot"))? as usize;
        let raw = cur
            .take(rows * cols * 8)
            .ok_or_else(|| bad("truncated slot data"))?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        out.push((name, Tensor2::from_vec(rows, cols, data)?));
    }
    if cur.pos != bytes.len() {
        return Err(bad("trailing bytes"));
    }
    Ok(out)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Option<&'a [u8]> {
        let end = self.pos.checked_add(n)?;
        let s = self.bytes.get(self.pos..end)?;
        self.pos = end;
        Some(s)
    }

    fn u32(&mut self) -> Option<u32> {
        self.take(4).map(|b| u32::from_le_bytes(b.try_into().unwrap()))
    }
}
