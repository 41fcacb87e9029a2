//! Dense tensors, a reverse-mode tape, and the optimizer that trains the
//! navigation policy.

mod checkpoint;
mod gradcheck;
mod optim;
mod tape;
mod tensor;

pub use checkpoint::{read_checkpoint, write_checkpoint, CHECKPOINT_MAGIC};
pub use gradcheck::{check_gradients, GradCheckReport};
pub use optim::{clip_global_norm, Adam, OptimConfig};
pub use tape::{Tape, Var};
pub use tensor::{Real, Tensor};

use crate::error::Result;

/// Named, ordered collection of tensors.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct ParamStore<T = f32> {
    names: Vec<String>,
    tensors: Vec<Tensor<T>>,
}

impl<T: Real> ParamStore<T> {
    pub fn new() -> Self {
        Self {
            names: Vec::new(),
            tensors: Vec::new(),
        }
    }

    pub fn insert(&mut self, name: impl Into<String>, t: Tensor<T>) {
        let name = name.into();
        if let Some(i) = self.index_of(&name) {
            self.tensors[i] = t;
        } else {
            self.names.push(name);
            self.tensors.push(t);
        }
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.index_of(name).map(|i| &self.tensors[i])
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor<T>] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.tensors
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    pub fn cast<U: Real>(&self) -> ParamStore<U> {
        ParamStore {
            names: self.names.clone(),
            tensors: self.tensors.iter().map(Tensor::cast).collect(),
        }
    }

    pub fn num_values(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    /// Zero tensors with the same names and shapes.
    pub fn zeros_like(&self) -> Self {
        Self {
            names: self.names.clone(),
            tensors: self.tensors.iter().map(|t| Tensor::zeros(t.shape())).collect(),
        }
    }

    /// Elementwise `self += other * scale`, matched by position.
    pub fn add_scaled(&mut self, other: &ParamStore<T>, scale: f64) {
        for (a, b) in self.tensors.iter_mut().zip(&other.tensors) {
            for (x, y) in a.data_mut().iter_mut().zip(b.data()) {
                *x = T::of(x.f64() + y.f64() * scale);
            }
        }
    }
}

/// One step of a standard LSTM cell with gates ordered input, forget,
/// candidate, output. `w` is `[4H, in+H]`, `b` is `[4H]`.
pub fn lstm_cell<T: Real>(
    tape: &mut Tape<T>,
    w: Var,
    b: Var,
    input: Var,
    state: (Var, Var),
) -> Result<(Var, Var)> {
    let (h, c) = state;
    let hidden = tape.shape(h)[0];
    let xh = tape.concat(&[input, h])?;
    let pre = tape.matmul(w, xh)?;
    let pre = tape.add(pre, b)?;
    let gates = tape.split(pre, &[hidden; 4])?;
    let i = tape.sigmoid(gates[0]);
    let f = tape.sigmoid(gates[1]);
    let g = tape.tanh(gates[2]);
    let o = tape.sigmoid(gates[3]);
    let fc = tape.mul(f, c)?;
    let ig = tape.mul(i, g)?;
    let c_next = tape.add(fc, ig)?;
    let tc = tape.tanh(c_next);
    let h_next = tape.mul(o, tc)?;
    Ok((h_next, c_next))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sig(x: f64) -> f64 {
        1.0 / (1.0 + (-x).exp())
    }

    #[test]
    fn zero_cell_outputs_zero() {
        let mut t = Tape::<f32>::new();
        let w = t.param(Tensor::zeros(&[8, 4]));
        let b = t.param(Tensor::zeros(&[8]));
        let x = t.constant(Tensor::zeros(&[2]));
        let h = t.constant(Tensor::zeros(&[2]));
        let c = t.constant(Tensor::zeros(&[2]));
        let (h2, c2) = lstm_cell(&mut t, w, b, x, (h, c)).unwrap();
        assert_eq!(t.value(h2).data(), &[0.0, 0.0]);
        assert_eq!(t.value(c2).data(), &[0.0, 0.0]);
    }

    #[test]
    fn two_unit_cell_matches_hand_arithmetic() {
        // 1 input, 2 hidden units -> w is [8, 3]
        let w: Vec<f64> = (0..24).map(|k| ((k * 7 % 11) as f64 - 5.0) * 0.1).collect();
        let b: Vec<f64> = (0..8).map(|k| (k as f64 - 3.5) * 0.05).collect();
        let (x, h0, c0) = (0.8, [0.1, -0.3], [0.5, -0.2]);

        let z = [x, h0[0], h0[1]];
        let pre: Vec<f64> = (0..8)
            .map(|r| b[r] + (0..3).map(|k| w[r * 3 + k] * z[k]).sum::<f64>())
            .collect();
        let mut hand_h = [0.0; 2];
        let mut hand_c = [0.0; 2];
        for u in 0..2 {
            let i = sig(pre[u]);
            let f = sig(pre[2 + u]);
            let g = pre[4 + u].tanh();
            let o = sig(pre[6 + u]);
            hand_c[u] = f * c0[u] + i * g;
            hand_h[u] = o * hand_c[u].tanh();
        }

        let mut t = Tape::<f32>::new();
        let wv = t.param(Tensor::matrix(8, 3, w.iter().map(|&v| v as f32).collect()).unwrap());
        let bv = t.param(Tensor::vector(b.iter().map(|&v| v as f32).collect()));
        let xv = t.constant(Tensor::vector(vec![x as f32]));
        let hv = t.constant(Tensor::vector(h0.iter().map(|&v| v as f32).collect()));
        let cv = t.constant(Tensor::vector(c0.iter().map(|&v| v as f32).collect()));
        let (h1, c1) = lstm_cell(&mut t, wv, bv, xv, (hv, cv)).unwrap();
        for u in 0..2 {
            assert!((t.value(h1).data()[u] as f64 - hand_h[u]).abs() < 1e-6);
            assert!((t.value(c1).data()[u] as f64 - hand_c[u]).abs() < 1e-6);
        }
    }

    #[test]
    fn param_store_keeps_insertion_order() {
        let mut p = ParamStore::<f32>::new();
        p.insert("b", Tensor::zeros(&[2]));
        p.insert("a", Tensor::zeros(&[3]));
        p.insert("b", Tensor::zeros(&[4]));
        assert_eq!(p.names(), &["b".to_string(), "a".to_string()]);
        assert_eq!(p.get("b").unwrap().shape(), &[4]);
        assert_eq!(p.num_values(), 7);
    }
}
