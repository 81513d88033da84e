//! Named parameter tensors: a registry with role tags, deterministic
//! initialization, fresh-tape binding, optimizer plumbing, and a
//! versioned JSON checkpoint manifest.
//!
//! Every trainable tensor lives in a [`ParamStore`] under a unique
//! dotted name. A forward pass binds the store onto a tape as leaves;
//! after backward, gradients are collected in store order so the Adam
//! state stays aligned across steps and checkpoints.

use std::collections::HashMap;

use rand::RngExt;
use serde::{Deserialize, Serialize};

use crate::seedstream::stream;
use crate::tensor::adam::{AdamHyper, AdamState};
use crate::tensor::{Tape, TensorId};

/// Manifest schema version; bump on any layout change.
pub const MANIFEST_VERSION: u32 = 1;

/// Whether a tensor participates in Monte-Carlo dropout.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamRole {
    Fixed,
    DropoutEligible,
}

/// One named parameter tensor.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ParamTensor {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub role: ParamRole,
    pub data: Vec<f64>,
}

/// Ordered registry of parameter tensors. Insertion order is the
/// canonical order for gradients, optimizer state, and checkpoints.
#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    tensors: Vec<ParamTensor>,
    index: HashMap<String, usize>,
}

/// Serialized form: a format tag, a version, and the tensor list.
#[derive(Serialize, Deserialize)]
struct Manifest {
    format: String,
    version: u32,
    tensors: Vec<ParamTensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Register a tensor. Panics on duplicate names or shape/data
    /// mismatch — both are construction bugs, not runtime conditions.
    pub fn add(&mut self, name: &str, rows: usize, cols: usize, role: ParamRole, data: Vec<f64>) {
        assert_eq!(data.len(), rows * cols, "{name}: data length mismatches {rows}x{cols}");
        assert!(
            self.index.insert(name.to_string(), self.tensors.len()).is_none(),
            "duplicate parameter name {name}"
        );
        self.tensors.push(ParamTensor { name: name.to_string(), rows, cols, role, data });
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &ParamTensor> {
        self.tensors.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut ParamTensor> {
        self.tensors.iter_mut()
    }

    /// Total scalar count across all tensors.
    pub fn scalar_count(&self) -> usize {
        self.tensors.iter().map(|t| t.data.len()).sum()
    }

    /// Tensor lengths in store order, for [`AdamState::new`].
    pub fn lens(&self) -> Vec<usize> {
        self.tensors.iter().map(|t| t.data.len()).collect()
    }

    pub fn position(&self, name: &str) -> usize {
        *self.index.get(name).unwrap_or_else(|| panic!("unknown parameter {name}"))
    }

    pub fn tensor(&self, name: &str) -> &ParamTensor {
        &self.tensors[self.position(name)]
    }

    pub fn tensor_mut(&mut self, name: &str) -> &mut ParamTensor {
        let i = self.position(name);
        &mut self.tensors[i]
    }

    /// Names of the dropout-eligible tensors, in store order.
    pub fn eligible_names(&self) -> Vec<&str> {
        self.tensors
            .iter()
            .filter(|t| t.role == ParamRole::DropoutEligible)
            .map(|t| t.name.as_str())
            .collect()
    }

    /// Bind every tensor onto a fresh tape as a gradient-tracked leaf.
    pub fn bind<'a>(&'a self, tape: &mut Tape) -> BoundParams<'a> {
        let ids = self
            .tensors
            .iter()
            .map(|t| tape.leaf(t.data.clone(), t.rows, t.cols, true))
            .collect();
        BoundParams { store: self, ids }
    }

    /// Bind every tensor as a frozen (non-differentiable) leaf: values
    /// flow forward, but backward passes never compute gradients for
    /// them. Used for the network that is *not* being updated this step.
    pub fn bind_frozen<'a>(&'a self, tape: &mut Tape) -> BoundParams<'a> {
        let ids = self
            .tensors
            .iter()
            .map(|t| tape.leaf(t.data.clone(), t.rows, t.cols, false))
            .collect();
        BoundParams { store: self, ids }
    }

    /// Gradients in store order after a backward pass; tensors the loss
    /// never touched contribute zeros.
    pub fn collect_grads(&self, tape: &Tape, bound: &BoundParams) -> Vec<Vec<f64>> {
        assert_eq!(bound.ids.len(), self.tensors.len(), "bound params from another store");
        self.tensors
            .iter()
            .zip(&bound.ids)
            .map(|(t, &id)| tape.grad(id).map(|g| g.to_vec()).unwrap_or_else(|| vec![0.0; t.data.len()]))
            .collect()
    }

    /// One Adam update over the whole store.
    pub fn step(
        &mut self,
        adam: &mut AdamState,
        grads: &[Vec<f64>],
        hyper: AdamHyper,
    ) -> Result<(), String> {
        let mut refs: Vec<&mut [f64]> =
            self.tensors.iter_mut().map(|t| t.data.as_mut_slice()).collect();
        adam.step(&mut refs, grads, hyper)
    }

    /// Serialize to the versioned manifest. `serde_json` prints the
    /// shortest exactly-round-tripping decimal for every f64, so a
    /// save/load cycle is bit-exact.
    pub fn to_json(&self) -> String {
        let m = Manifest {
            format: "renscen-params".into(),
            version: MANIFEST_VERSION,
            tensors: self.tensors.clone(),
        };
        serde_json::to_string(&m).expect("parameter manifest serializes")
    }

    pub fn from_json(s: &str) -> Result<Self, String> {
        let m: Manifest = serde_json::from_str(s).map_err(|e| format!("bad manifest: {e}"))?;
        if m.format != "renscen-params" {
            return Err(format!("not a parameter manifest (format tag {:?})", m.format));
        }
        if m.version != MANIFEST_VERSION {
            return Err(format!("manifest version {} unsupported (want {MANIFEST_VERSION})", m.version));
        }
        let mut store = ParamStore::new();
        for t in m.tensors {
            if t.data.len() != t.rows * t.cols {
                return Err(format!("{}: {} values for a {}x{} tensor", t.name, t.data.len(), t.rows, t.cols));
            }
            if store.index.contains_key(&t.name) {
                return Err(format!("duplicate tensor {} in manifest", t.name));
            }
            store.add(&t.name.clone(), t.rows, t.cols, t.role, t.data);
        }
        Ok(store)
    }
}

/// Tape handles of a bound store, addressable by name.
pub struct BoundParams<'a> {
    store: &'a ParamStore,
    ids: Vec<TensorId>,
}

impl BoundParams<'_> {
    pub fn id(&self, name: &str) -> TensorId {
        self.ids[self.store.position(name)]
    }

    pub fn ids(&self) -> &[TensorId] {
        &self.ids
    }
}

/// Glorot-uniform init for a `rows x cols` matmul weight:
/// `U(-a, a)` with `a = sqrt(6 / (fan_in + fan_out))`.
pub fn glorot<R: rand::Rng>(rng: &mut R, rows: usize, cols: usize) -> Vec<f64> {
    let a = (6.0 / (rows + cols) as f64).sqrt();
    uniform(rng, rows * cols, a)
}

/// Glorot-uniform init for a conv weight `c_out x (c_in * k)`, with
/// fans counted per output position.
pub fn glorot_conv<R: rand::Rng>(rng: &mut R, c_out: usize, c_in: usize, k: usize) -> Vec<f64> {
    let a = (6.0 / ((c_in * k + c_out * k) as f64)).sqrt();
    uniform(rng, c_out * c_in * k, a)
}

/// `n` draws from `U(-limit, limit)`.
pub fn uniform<R: rand::Rng>(rng: &mut R, n: usize, limit: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-limit..limit)).collect()
}

/// A per-tensor RNG keyed by the master seed and the tensor's name, so
/// initialization is independent of registration order.
pub fn init_stream(master: u64, name: &str) -> rand_chacha::ChaCha8Rng {
    stream(master, &format!("init/{name}"), &[])
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy_store() -> ParamStore {
        let mut s = ParamStore::new();
        s.add("a.w", 2, 3, ParamRole::DropoutEligible, vec![0.5; 6]);
        s.add("a.b", 1, 3, ParamRole::Fixed, vec![0.0, 1.0, -2.0]);
        s.add("b.w", 3, 1, ParamRole::Fixed, vec![0.25, -0.125, 3.0]);
        s
    }

    #[test]
    fn lookups_follow_insertion_order() {
        let s = toy_store();
        assert_eq!(s.len(), 3);
        assert_eq!(s.position("a.b"), 1);
        assert_eq!(s.tensor("b.w").rows, 3);
        assert_eq!(s.lens(), vec![6, 3, 3]);
        assert_eq!(s.scalar_count(), 12);
        assert_eq!(s.eligible_names(), vec!["a.w"]);
    }

    #[test]
    #[should_panic(expected = "duplicate parameter name")]
    fn duplicate_names_are_construction_bugs() {
        let mut s = toy_store();
        s.add("a.w", 1, 1, ParamRole::Fixed, vec![0.0]);
    }

    #[test]
    fn manifest_round_trips_bit_exact() {
        let mut s = toy_store();
        // values with no short decimal form
        s.tensor_mut("a.w").data[0] = 0.1 + 0.2;
        s.tensor_mut("a.w").data[1] = f64::MIN_POSITIVE;
        let json = s.to_json();
        let back = ParamStore::from_json(&json).unwrap();
        assert_eq!(back.len(), s.len());
        for (a, b) in s.iter().zip(back.iter()) {
            assert_eq!(a.name, b.name);
            assert_eq!((a.rows, a.cols), (b.rows, b.cols));
            assert_eq!(a.role, b.role);
            let bits_a: Vec<u64> = a.data.iter().map(|v| v.to_bits()).collect();
            let bits_b: Vec<u64> = b.data.iter().map(|v| v.to_bits()).collect();
            assert_eq!(bits_a, bits_b, "{} drifted through JSON", a.name);
        }
    }

    #[test]
    fn manifest_rejects_foreign_and_future_files() {
        let s = toy_store();
        let other = s.to_json().replace("renscen-params", "something-else");
        assert!(ParamStore::from_json(&other).unwrap_err().contains("format tag"));
        let future = s.to_json().replace("\"version\":1", "\"version\":2");
        assert!(ParamStore::from_json(&future).unwrap_err().contains("version 2"));
        let torn = s.to_json().replace("\"rows\":2", "\"rows\":5");
        assert!(ParamStore::from_json(&torn).unwrap_err().contains("5x3"));
    }

    #[test]
    fn bind_collect_step_round_trip() {
        let mut s = toy_store();
        let mut tape = Tape::new();
        let bound = s.bind(&mut tape);
        assert_eq!(tape.data(bound.id("a.b")), &[0.0, 1.0, -2.0]);

        // loss = sum(a.b^2)/1 touches only a.b; others get zero grads
        let sq = tape.sum_squares(bound.id("a.b"));
        tape.backward(sq);
        let grads = s.collect_grads(&tape, &bound);
        assert_eq!(grads[0], vec![0.0; 6]);
        assert_eq!(grads[1], vec![0.0, 2.0, -4.0]);
        assert_eq!(grads[2], vec![0.0; 3]);

        // the same step through the store matches a direct Adam run
        let mut direct = vec![0.0, 1.0, -2.0];
        let mut adam_direct = AdamState::new(&[3]);
        adam_direct
            .step(&mut [direct.as_mut_slice()], &[vec![0.0, 2.0, -4.0]], AdamHyper::with_lr(0.01))
            .unwrap();
        let mut adam = AdamState::new(&s.lens());
        s.step(&mut adam, &grads, AdamHyper::with_lr(0.01)).unwrap();
        assert_eq!(s.tensor("a.b").data, direct);
        assert_eq!(s.tensor("a.w").data, vec![0.5; 6], "untouched tensor moved");
    }

    #[test]
    fn glorot_respects_its_bound_and_seed() {
        let mut rng = init_stream(9, "layer.w");
        let w = glorot(&mut rng, 40, 60);
        let a = (6.0 / 100.0f64).sqrt();
        assert!(w.iter().all(|v| v.abs() < a));
        // spread: not all in a tiny band
        let spread = w.iter().cloned().fold(f64::MIN, f64::max) - w.iter().cloned().fold(f64::MAX, f64::min);
        assert!(spread > a, "suspiciously narrow init");
        // same name + seed → same values; different name → different
        let w2 = glorot(&mut init_stream(9, "layer.w"), 40, 60);
        assert_eq!(w, w2);
        let w3 = glorot(&mut init_stream(9, "other.w"), 40, 60);
        assert_ne!(w, w3);
    }

    #[test]
    fn conv_init_counts_fans_per_position() {
        let mut rng = init_stream(9, "conv.w");
        let w = glorot_conv(&mut rng, 4, 3, 5);
        assert_eq!(w.len(), 60);
        let a = (6.0 / ((3 * 5 + 4 * 5) as f64)).sqrt();
        assert!(w.iter().all(|v| v.abs() < a));
    }
}
