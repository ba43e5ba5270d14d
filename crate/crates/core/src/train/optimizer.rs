use ndarray::Array2;

use crate::model::{Model, ParamStore};
use crate::tensor::Arr;

/// Decoupled-weight-decay Adam with two learning-rate groups: the note
/// encoder trains at its own (lower) rate, everything else at the base rate.
/// One-row parameters (biases, layer-norm scales, gate logits) are exempt
/// from weight decay.
pub struct AdamW {
    base_lr: f64,
    note_lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    weight_decay: f64,
    step: u64,
    m: Vec<Arr>,
    v: Vec<Arr>,
    is_note: Vec<bool>,
    decay_mask: Vec<bool>,
}

impl AdamW {
    pub fn new(store: &ParamStore, base_lr: f64, note_lr: f64, weight_decay: f64) -> AdamW {
        assert!(base_lr > 0.0 && note_lr > 0.0, "learning rates must be positive");
        let mut m = Vec::with_capacity(store.len());
        let mut v = Vec::with_capacity(store.len());
        let mut is_note = Vec::with_capacity(store.len());
        let mut decay_mask = Vec::with_capacity(store.len());
        for i in 0..store.len() {
            let arr = store.value(i);
            m.push(Array2::zeros(arr.dim()));
            v.push(Array2::zeros(arr.dim()));
            is_note.push(Model::is_note_encoder_param(store.name(i)));
            decay_mask.push(arr.nrows() > 1);
        }
        AdamW {
            base_lr,
            note_lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
            step: 0,
            m,
            v,
            is_note,
            decay_mask,
        }
    }

    /// Learning rate applied to each parameter, for the group audit.
    pub fn learning_rates(&self, store: &ParamStore) -> Vec<(String, f64)> {
        (0..store.len())
            .map(|i| {
                let lr = if self.is_note[i] { self.note_lr } else { self.base_lr };
                (store.name(i).to_string(), lr)
            })
            .collect()
    }

    /// Apply one update. `grads[i]` is the gradient for parameter `i`;
    /// parameters with no gradient are left untouched.
    pub fn apply(&mut self, store: &mut ParamStore, grads: &[Option<Arr>]) {
        assert_eq!(grads.len(), store.len());
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        for i in 0..store.len() {
            let Some(g) = &grads[i] else { continue };
            let lr = if self.is_note[i] { self.note_lr } else { self.base_lr };
            let m = &mut self.m[i];
            let v = &mut self.v[i];
            ndarray::Zip::from(&mut *m).and(g).for_each(|mi, &gi| {
                *mi = self.beta1 * *mi + (1.0 - self.beta1) * gi;
            });
            ndarray::Zip::from(&mut *v).and(g).for_each(|vi, &gi| {
                *vi = self.beta2 * *vi + (1.0 - self.beta2) * gi * gi;
            });
            let wd = if self.decay_mask[i] { self.weight_decay } else { 0.0 };
            let param = store.value_mut(i);
            ndarray::Zip::from(&mut *param)
                .and(&*m)
                .and(&*v)
                .for_each(|p, &mi, &vi| {
                    let mhat = mi / bc1;
                    let vhat = vi / bc2;
                    *p -= lr * (mhat / (vhat.sqrt() + self.eps) + wd * *p);
                });
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tape;

    #[test]
    fn quadratic_converges() {
        let mut store = ParamStore::new();
        store.insert("x", Arr::from_elem((2, 2), 3.0));
        let mut opt = AdamW::new(&store, 0.05, 0.05, 0.0);
        for _ in 0..600 {
            let mut tape = Tape::new(true);
            let vars = store.leaves(&mut tape);
            let sq = tape.mul(vars[0], vars[0]);
            let loss = tape.sum_all(sq);
            let mut grads = tape.backward(loss);
            let g = vec![grads.take(vars[0])];
            opt.apply(&mut store, &g);
        }
        assert!(store.value(0).iter().all(|x| x.abs() < 1e-3));
    }

    #[test]
    fn note_group_gets_its_own_rate() {
        let mut store = ParamStore::new();
        store.insert("note.token_embed", Arr::zeros((4, 2)));
        store.insert("tf.cmt_dn.layer0.attn.q.w", Arr::zeros((2, 2)));
        store.insert("note.proj.w", Arr::zeros((2, 2)));
        store.insert("head.final.w", Arr::zeros((2, 2)));
        let opt = AdamW::new(&store, 1e-4, 2e-5, 0.01);
        let rates = opt.learning_rates(&store);
        for (name, lr) in rates {
            if name.starts_with("note.") {
                assert_eq!(lr, 2e-5, "{name}");
            } else {
                assert_eq!(lr, 1e-4, "{name}");
            }
        }
    }

    #[test]
    fn missing_gradients_leave_parameters_untouched() {
        let mut store = ParamStore::new();
        store.insert("a", Arr::from_elem((2, 2), 1.0));
        store.insert("b", Arr::from_elem((2, 2), 1.0));
        let mut opt = AdamW::new(&store, 0.1, 0.1, 0.1);
        let grads = vec![Some(Arr::ones((2, 2))), None];
        opt.apply(&mut store, &grads);
        assert_ne!(store.value(0)[(0, 0)], 1.0);
        assert_eq!(store.value(1)[(0, 0)], 1.0);
    }
}
