//! Named parameter storage and the AdamW update.

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{Tensor, TensorError};
use crate::scalar::Scalar;

/// Named trainable tensors plus the AdamW moment accumulators.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamStore<T> {
    params: BTreeMap<String, Tensor<T>>,
    first_moment: BTreeMap<String, Tensor<T>>,
    second_moment: BTreeMap<String, Tensor<T>>,
    step: u64,
}

impl<T: Scalar> Default for ParamStore<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        Self {
            params: BTreeMap::new(),
            first_moment: BTreeMap::new(),
            second_moment: BTreeMap::new(),
            step: 0,
        }
    }

    pub fn insert(&mut self, name: &str, value: Tensor<T>) -> Result<(), TensorError> {
        if self.params.contains_key(name) {
            return Err(TensorError::Contract(format!(
                "parameter `{name}` registered twice"
            )));
        }
        self.first_moment
            .insert(name.to_owned(), Tensor::zeros(value.shape()));
        self.second_moment
            .insert(name.to_owned(), Tensor::zeros(value.shape()));
        self.params.insert(name.to_owned(), value);
        Ok(())
    }

    /// Uniform in `[-bound, bound]`.
    pub fn insert_uniform<R: Rng + ?Sized>(
        &mut self,
        name: &str,
        shape: &[usize],
        bound: f64,
        rng: &mut R,
    ) -> Result<(), TensorError> {
        let n: usize = shape.iter().product();
        let values = (0..n)
            .map(|_| T::of(rng.gen_range(-bound..=bound)))
            .collect();
        self.insert(name, Tensor::new(shape.to_vec(), values)?)
    }

    pub fn get(&self, name: &str) -> Result<&Tensor<T>, TensorError> {
        self.params
            .get(name)
            .ok_or_else(|| TensorError::Contract(format!("unknown parameter `{name}`")))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor<T>, TensorError> {
        self.params
            .get_mut(name)
            .ok_or_else(|| TensorError::Contract(format!("unknown parameter `{name}`")))
    }

    /// Overwrites a parameter's values, keeping its shape.
    pub fn set_values(&mut self, name: &str, values: &[T]) -> Result<(), TensorError> {
        let p = self.get_mut(name)?;
        if p.len() != values.len() {
            return Err(TensorError::Shape {
                op: "set_values",
                left: p.shape().to_vec(),
                right: vec![values.len()],
            });
        }
        p.values_mut().copy_from_slice(values);
        Ok(())
    }

    pub fn contains(&self, name: &str) -> bool {
        self.params.contains_key(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor<T>)> {
        self.params.iter()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.params.keys()
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn num_scalars(&self) -> usize {
        self.params.values().map(Tensor::len).sum()
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn first_moment(&self, name: &str) -> Option<&Tensor<T>> {
        self.first_moment.get(name)
    }

    pub fn second_moment(&self, name: &str) -> Option<&Tensor<T>> {
        self.second_moment.get(name)
    }

    pub fn first_moments(&self) -> &BTreeMap<String, Tensor<T>> {
        &self.first_moment
    }

    pub fn second_moments(&self) -> &BTreeMap<String, Tensor<T>> {
        &self.second_moment
    }

    /// Reassembles a store; moments must cover exactly the parameters, shape for shape.
    pub fn from_parts(
        params: BTreeMap<String, Tensor<T>>,
        first_moment: BTreeMap<String, Tensor<T>>,
        second_moment: BTreeMap<String, Tensor<T>>,
        step: u64,
    ) -> Result<Self, TensorError> {
        for moments in [&first_moment, &second_moment] {
            let aligned = moments.len() == params.len()
                && params
                    .iter()
                    .all(|(k, p)| moments.get(k).is_some_and(|m| m.shape() == p.shape()));
            if !aligned {
                return Err(TensorError::Contract(
                    "optimizer moments do not match the parameters".into(),
                ));
            }
        }
        Ok(Self {
            params,
            first_moment,
            second_moment,
            step,
        })
    }

    /// Zero gradient map keyed like the store.
    pub fn zero_grads(&self) -> BTreeMap<String, Tensor<T>> {
        self.params
            .iter()
            .map(|(k, v)| (k.clone(), Tensor::zeros(v.shape())))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamW {
    pub lr: f64,
    pub betas: (f64, f64),
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamW {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            betas: (0.9, 0.999),
            eps: 1e-8,
            weight_decay: 0.01,
        }
    }
}

/// One AdamW step: decoupled decay `p -= lr * wd * p`, then the bias-corrected
/// moment update `p -= lr * m_hat / (sqrt(v_hat) + eps)`.
pub fn optimizer_step<T: Scalar>(
    store: &mut ParamStore<T>,
    grads: &BTreeMap<String, Tensor<T>>,
    opt: &AdamW,
) -> Result<(), TensorError> {
    for name in store.params.keys() {
        let g = grads
            .get(name)
            .ok_or_else(|| TensorError::Contract(format!("missing gradient for `{name}`")))?;
        if g.shape() != store.params[name].shape() {
            return Err(TensorError::Shape {
                op: "optimizer_step",
                left: store.params[name].shape().to_vec(),
                right: g.shape().to_vec(),
            });
        }
    }
    if let Some(extra) = grads.keys().find(|k| !store.params.contains_key(*k)) {
        return Err(TensorError::Contract(format!(
            "gradient for unknown parameter `{extra}`"
        )));
    }

    store.step += 1;
    let t = store.step as i32;
    let (b1, b2) = (T::of(opt.betas.0), T::of(opt.betas.1));
    let bc1 = T::one() - b1.powi(t);
    let bc2 = T::one() - b2.powi(t);
    let lr = T::of(opt.lr);
    let decay = T::of(opt.lr * opt.weight_decay);
    let eps = T::of(opt.eps);

    for (name, p) in store.params.iter_mut() {
        let g = grads[name].values();
        let m = store
            .first_moment
            .get_mut(name)
            .expect("moments track params")
            .values_mut();
        let v = store
            .second_moment
            .get_mut(name)
            .expect("moments track params")
            .values_mut();
        for (i, pv) in p.values_mut().iter_mut().enumerate() {
            m[i] = b1 * m[i] + (T::one() - b1) * g[i];
            v[i] = b2 * v[i] + (T::one() - b2) * g[i] * g[i];
            let m_hat = m[i] / bc1;
            let v_hat = v[i] / bc2;
            *pv = *pv - decay * *pv;
            *pv -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}

/// Global L2 norm over every gradient tensor.
pub fn global_norm<T: Scalar>(grads: &BTreeMap<String, Tensor<T>>) -> T {
    grads.values().fold(T::zero(), |a, g| a + g.sum_sq()).sqrt()
}

/// Rescales all gradients so the global norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_global_norm<T: Scalar>(grads: &mut BTreeMap<String, Tensor<T>>, max_norm: f64) -> T {
    let norm = global_norm(grads);
    let max = T::of(max_norm);
    if norm > max {
        let s = max / norm;
        for g in grads.values_mut() {
            for v in g.values_mut() {
                *v *= s;
            }
        }
    }
    norm
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store_with(value: f64) -> ParamStore<f64> {
        let mut s = ParamStore::new();
        s.insert("w", Tensor::vector(vec![value])).unwrap();
        s
    }

    fn grad(v: f64) -> BTreeMap<String, Tensor<f64>> {
        BTreeMap::from([("w".to_owned(), Tensor::vector(vec![v]))])
    }

    #[test]
    fn zero_grad_without_decay_is_fixed_point() {
        let mut s = store_with(0.7);
        let opt = AdamW {
            weight_decay: 0.0,
            ..AdamW::default()
        };
        optimizer_step(&mut s, &grad(0.0), &opt).unwrap();
        assert_eq!(s.get("w").unwrap().item(), 0.7);
        assert_eq!(s.step(), 1);
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut s = store_with(0.5);
        let opt = AdamW {
            lr: 1e-5,
            weight_decay: 0.0,
            ..AdamW::default()
        };
        optimizer_step(&mut s, &grad(1.0), &opt).unwrap();
        // m_hat = v_hat = 1 at t = 1
        let expected = 0.5 - 1e-5 / (1.0 + 1e-8);
        assert!((s.get("w").unwrap().item() - expected).abs() < 1e-15);
    }

    #[test]
    fn decoupled_decay_with_zero_grad() {
        let p = 2.0;
        let mut s = store_with(p);
        let opt = AdamW {
            lr: 1e-3,
            weight_decay: 0.1,
            ..AdamW::default()
        };
        optimizer_step(&mut s, &grad(0.0), &opt).unwrap();
        assert_eq!(s.get("w").unwrap().item(), p - (1e-3 * 0.1) * p);
    }

    #[test]
    fn missing_gradient_is_rejected() {
        let mut s = store_with(1.0);
        let err = optimizer_step(&mut s, &BTreeMap::new(), &AdamW::default()).unwrap_err();
        assert!(matches!(err, TensorError::Contract(_)));
        assert_eq!(s.step(), 0);
    }

    #[test]
    fn clipping_bounds_the_norm() {
        let mut g = BTreeMap::from([
            ("a".to_owned(), Tensor::vector(vec![3.0, 0.0])),
            ("b".to_owned(), Tensor::vector(vec![4.0])),
        ]);
        let before = clip_global_norm(&mut g, 1.0);
        assert_eq!(before, 5.0);
        assert!(global_norm(&g) <= 1.0 + 1e-12);
        let mut small = BTreeMap::from([("a".to_owned(), Tensor::vector(vec![0.1]))]);
        clip_global_norm(&mut small, 1.0);
        assert_eq!(small["a"].item(), 0.1);
    }
}
