use std::collections::BTreeMap;

use super::{KernelError, Real, Result, Tensor};

/// One learnable tensor with its gradient and Adam moments.
#[derive(Clone, Debug, PartialEq)]
pub struct Param<T = f32> {
    pub value: Tensor<T>,
    pub grad: Tensor<T>,
    m: Tensor<T>,
    v: Tensor<T>,
}

impl<T: Real> Param<T> {
    fn new(value: Tensor<T>) -> Self {
        let zeros = Tensor::zeros(value.shape());
        Self {
            grad: zeros.clone(),
            m: zeros.clone(),
            v: zeros,
            value,
        }
    }
}

/// Named parameters. Iteration order is lexicographic by name, which is also
/// the serialization order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore<T = f32> {
    params: BTreeMap<String, Param<T>>,
}

/// Gradient contributions collected by one or more backward passes, kept
/// apart from the store so samples can be processed independently and merged
/// in a fixed order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Gradients<T = f32> {
    grads: BTreeMap<String, Tensor<T>>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        Self {
            lr,
            ..Self::default()
        }
    }
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl<T: Real> ParamStore<T> {
    pub fn new() -> Self {
        Self {
            params: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor<T>) {
        self.params.insert(name.into(), Param::new(value));
    }

    pub fn contains(&self, name: &str) -> bool {
        self.params.contains_key(name)
    }

    pub fn get(&self, name: &str) -> Result<&Tensor<T>> {
        self.params
            .get(name)
            .map(|p| &p.value)
            .ok_or_else(|| KernelError::MissingParam(name.to_string()))
    }

    pub fn param(&self, name: &str) -> Result<&Param<T>> {
        self.params
            .get(name)
            .ok_or_else(|| KernelError::MissingParam(name.to_string()))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor<T>> {
        self.params
            .get_mut(name)
            .map(|p| &mut p.value)
            .ok_or_else(|| KernelError::MissingParam(name.to_string()))
    }

    pub fn remove(&mut self, name: &str) -> Option<Tensor<T>> {
        self.params.remove(name).map(|p| p.value)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.params.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.params.iter().map(|(k, p)| (k.as_str(), &p.value))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn num_elements(&self) -> usize {
        self.params.values().map(|p| p.value.len()).sum()
    }

    /// Adds collected gradients into the stored ones.
    pub fn accumulate(&mut self, grads: &Gradients<T>) -> Result<()> {
        for (name, g) in &grads.grads {
            let p = self
                .params
                .get_mut(name)
                .ok_or_else(|| KernelError::MissingParam(name.clone()))?;
            p.grad.add_assign(g)?;
        }
        Ok(())
    }

    pub fn zero_grads(&mut self) {
        for p in self.params.values_mut() {
            p.grad.data_mut().fill(T::zero());
        }
    }

    /// Clears the Adam moments of one parameter (used when a row is re-seeded).
    pub fn reset_moments(&mut self, name: &str) -> Result<()> {
        let p = self
            .params
            .get_mut(name)
            .ok_or_else(|| KernelError::MissingParam(name.to_string()))?;
        p.m.data_mut().fill(T::zero());
        p.v.data_mut().fill(T::zero());
        Ok(())
    }

    /// Clears the Adam moments of elements `range` of one parameter.
    pub fn reset_moments_range(&mut self, name: &str, range: std::ops::Range<usize>) -> Result<()> {
        let p = self
            .params
            .get_mut(name)
            .ok_or_else(|| KernelError::MissingParam(name.to_string()))?;
        p.m.data_mut()[range.clone()].fill(T::zero());
        p.v.data_mut()[range].fill(T::zero());
        Ok(())
    }

    /// Bias-corrected Adam update at step `t ≥ 1`, then zeroes gradients.
    /// Nothing is modified if any gradient is non-finite.
    pub fn adam_step(&mut self, cfg: &AdamConfig, t: u64) -> Result<()> {
        assert!(t >= 1, "adam step count starts at 1");
        if let Some((name, _)) = self.params.iter().find(|(_, p)| !p.grad.is_finite()) {
            return Err(KernelError::NonFiniteGradient { name: name.clone() });
        }
        let (b1, b2) = (cfg.beta1, cfg.beta2);
        let bc1 = 1.0 - b1.powf(t as f64);
        let bc2 = 1.0 - b2.powf(t as f64);
        for p in self.params.values_mut() {
            let Param { value, grad, m, v } = p;
            let values = value.data_mut();
            let (ms, vs) = (m.data_mut(), v.data_mut());
            for (i, g) in grad.data_mut().iter_mut().enumerate() {
                let gf = g.as_f64();
                let mi = b1 * ms[i].as_f64() + (1.0 - b1) * gf;
                let vi = b2 * vs[i].as_f64() + (1.0 - b2) * gf * gf;
                ms[i] = T::of(mi);
                vs[i] = T::of(vi);
                let step = cfg.lr * (mi / bc1) / ((vi / bc2).sqrt() + cfg.eps);
                values[i] = T::of(values[i].as_f64() - step);
                *g = T::zero();
            }
        }
        Ok(())
    }

    /// Same parameters in another scalar type (moments and grads reset).
    pub fn cast<U: Real>(&self) -> ParamStore<U> {
        let mut out = ParamStore::new();
        for (name, p) in &self.params {
            out.insert(name.clone(), p.value.cast());
        }
        out
    }
}

impl<T: Real> Gradients<T> {
    pub fn new() -> Self {
        Self {
            grads: BTreeMap::new(),
        }
    }

    /// Gradient accumulator for `name`, zero-initialized on first use.
    pub fn slot(&mut self, name: &str, shape: &[usize]) -> &mut Tensor<T> {
        self.grads
            .entry(name.to_string())
            .or_insert_with(|| Tensor::zeros(shape))
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.grads.get(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.grads.iter().map(|(k, v)| (k.as_str(), v))
    }

    /// Adds another gradient set into this one.
    pub fn merge(&mut self, other: &Gradients<T>) -> Result<()> {
        for (name, g) in &other.grads {
            match self.grads.get_mut(name) {
                Some(mine) => mine.add_assign(g)?,
                None => {
                    self.grads.insert(name.clone(), g.clone());
                }
            }
        }
        Ok(())
    }

    pub fn scale(&mut self, s: T) {
        for g in self.grads.values_mut() {
            g.scale(s);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_store(v: f64) -> ParamStore<f64> {
        let mut s = ParamStore::new();
        s.insert("w", Tensor::from_vec(vec![1], vec![v]).unwrap());
        s
    }

    #[test]
    fn zero_gradient_is_fixed_point() {
        let mut s = scalar_store(0.5);
        s.adam_step(&AdamConfig::with_lr(0.1), 1).unwrap();
        assert_eq!(s.get("w").unwrap().data(), &[0.5]);
    }

    #[test]
    fn first_step_moves_by_lr() {
        // m = 0.1, v = 0.001, m̂ = 1, v̂ = 1 ⇒ Δ = −0.1/(1 + 1e−8)
        let mut s = scalar_store(0.0);
        let mut g = Gradients::new();
        g.slot("w", &[1]).data_mut()[0] = 1.0;
        s.accumulate(&g).unwrap();
        s.adam_step(&AdamConfig::with_lr(0.1), 1).unwrap();
        let expected = -0.1 / (1.0 + 1e-8);
        assert!((s.get("w").unwrap().data()[0] - expected).abs() < 1e-15);
        assert_eq!(s.param("w").unwrap().grad.data(), &[0.0]);
    }

    #[test]
    fn identical_stores_update_identically() {
        let mut a = ParamStore::<f32>::new();
        a.insert("w", Tensor::from_vec(vec![3], vec![0.1, -0.2, 0.3]).unwrap());
        let mut b = a.clone();
        let mut g = Gradients::new();
        g.slot("w", &[3])
            .data_mut()
            .copy_from_slice(&[0.5, -1.5, 2.0]);
        for t in 1..=5 {
            a.accumulate(&g).unwrap();
            b.accumulate(&g).unwrap();
            a.adam_step(&AdamConfig::default(), t).unwrap();
            b.adam_step(&AdamConfig::default(), t).unwrap();
        }
        let bits = |s: &ParamStore<f32>| -> Vec<u32> {
            s.get("w").unwrap().data().iter().map(|v| v.to_bits()).collect()
        };
        assert_eq!(bits(&a), bits(&b));
    }

    #[test]
    fn non_finite_gradient_names_parameter() {
        let mut s = scalar_store(1.0);
        s.insert("z", Tensor::from_vec(vec![1], vec![2.0]).unwrap());
        let mut g = Gradients::new();
        g.slot("z", &[1]).data_mut()[0] = f64::NAN;
        s.accumulate(&g).unwrap();
        let err = s.adam_step(&AdamConfig::default(), 1).unwrap_err();
        assert_eq!(
            err,
            KernelError::NonFiniteGradient { name: "z".into() }
        );
        assert_eq!(s.get("w").unwrap().data(), &[1.0]);
    }

    #[test]
    fn accumulation_adds() {
        let mut s = scalar_store(0.0);
        let mut g = Gradients::new();
        g.slot("w", &[1]).data_mut()[0] = 2.0;
        s.accumulate(&g).unwrap();
        s.accumulate(&g).unwrap();
        assert_eq!(s.param("w").unwrap().grad.data(), &[4.0]);
    }
}
