use std::collections::HashMap;
use std::sync::Arc;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::tensor::{Arr, Tape, Var};

/// Named parameter arrays in a stable registration order.
///
/// Arrays are `Arc`-shared so a batch of tapes can reference one parameter
/// set without copying; the optimizer mutates through `Arc::make_mut` between
/// steps when it holds the only strong reference.
#[derive(Debug, Clone)]
pub struct ParamStore {
    params: Vec<(String, Arc<Arr>)>,
    index: HashMap<String, usize>,
}

impl Default for ParamStore {
    fn default() -> Self {
        Self::new()
    }
}

impl ParamStore {
    pub fn new() -> Self {
        ParamStore {
            params: Vec::new(),
            index: HashMap::new(),
        }
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Arr) -> usize {
        let name = name.into();
        assert!(
            !self.index.contains_key(&name),
            "duplicate parameter {name}"
        );
        let idx = self.params.len();
        self.index.insert(name.clone(), idx);
        self.params.push((name, Arc::new(value)));
        idx
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn name(&self, idx: usize) -> &str {
        &self.params[idx].0
    }

    pub fn value(&self, idx: usize) -> &Arr {
        &self.params[idx].1
    }

    pub fn arc(&self, idx: usize) -> Arc<Arr> {
        Arc::clone(&self.params[idx].1)
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Arr)> {
        self.params.iter().map(|(n, a)| (n.as_str(), a.as_ref()))
    }

    pub fn total_elements(&self) -> usize {
        self.params.iter().map(|(_, a)| a.len()).sum()
    }

    /// Mutable access for the optimizer. Clones the array only if a tape
    /// still shares it (never the case between steps).
    pub fn value_mut(&mut self, idx: usize) -> &mut Arr {
        Arc::make_mut(&mut self.params[idx].1)
    }

    /// Push every parameter onto a tape as a shared leaf, in index order.
    pub fn leaves(&self, tape: &mut Tape) -> Vec<Var> {
        self.params
            .iter()
            .map(|(_, a)| tape.shared_leaf(Arc::clone(a)))
            .collect()
    }

    /// FNV-1a digest over names, shapes, and exact bit patterns. Any change
    /// to any parameter changes the digest.
    pub fn digest(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        let mut eat = |bytes: &[u8]| {
            for &b in bytes {
                h ^= b as u64;
                h = h.wrapping_mul(0x1000_0000_01b3);
            }
        };
        for (name, arr) in &self.params {
            eat(name.as_bytes());
            eat(&(arr.nrows() as u64).to_le_bytes());
            eat(&(arr.ncols() as u64).to_le_bytes());
            for &x in arr.iter() {
                eat(&x.to_bits().to_le_bytes());
            }
        }
        h
    }
}

/// Xavier-uniform init for a weight matrix.
pub fn xavier(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Arr {
    let a = (6.0 / (rows + cols) as f64).sqrt();
    Arr::from_shape_fn((rows, cols), |_| rng.gen_range(-a..a))
}

/// Small-uniform init for embedding tables.
pub fn embedding_init(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Arr {
    Arr::from_shape_fn((rows, cols), |_| rng.gen_range(-0.1..0.1))
}
