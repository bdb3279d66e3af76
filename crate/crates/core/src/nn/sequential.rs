use super::{Cache, Gradients, KernelError, Layer, ParamStore, Real, Result, SplitMix64, Tensor};

/// A straight chain of layers sharing one [`ParamStore`].
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Sequential {
    layers: Vec<Layer>,
}

impl Sequential {
    pub fn new(layers: Vec<Layer>) -> Self {
        Self { layers }
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    /// Composes every layer's shape rule.
    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        self.layers
            .iter()
            .try_fold(input.to_vec(), |shape, l| l.output_shape(&shape))
    }

    /// Input shape seen by every layer, in order.
    pub fn layer_inputs(&self, input: &[usize]) -> Result<Vec<Vec<usize>>> {
        let mut shapes = Vec::with_capacity(self.layers.len());
        let mut cur = input.to_vec();
        for l in &self.layers {
            let next = l.output_shape(&cur)?;
            shapes.push(std::mem::replace(&mut cur, next));
        }
        Ok(shapes)
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(Layer::param_count).sum()
    }

    pub fn init_params<T: Real>(&self, store: &mut ParamStore<T>, rng: &mut SplitMix64) {
        for l in &self.layers {
            l.init_params(store, rng);
        }
    }

    pub fn forward<T: Real>(
        &self,
        params: &ParamStore<T>,
        input: &Tensor<T>,
    ) -> Result<(Tensor<T>, Vec<Cache<T>>)> {
        let mut caches = Vec::with_capacity(self.layers.len());
        let mut cur = input.clone();
        for l in &self.layers {
            let (next, cache) = l.forward(params, &cur)?;
            caches.push(cache);
            cur = next;
        }
        Ok((cur, caches))
    }

    /// Forward pass without keeping activation records.
    pub fn infer<T: Real>(&self, params: &ParamStore<T>, input: &Tensor<T>) -> Result<Tensor<T>> {
        let mut cur = input.clone();
        for l in &self.layers {
            cur = l.forward(params, &cur)?.0;
        }
        Ok(cur)
    }

    pub fn backward<T: Real>(
        &self,
        params: &ParamStore<T>,
        caches: &[Cache<T>],
        grad_out: &Tensor<T>,
        grads: &mut Gradients<T>,
    ) -> Result<Tensor<T>> {
        if caches.len() != self.layers.len() {
            return Err(KernelError::CacheMismatch {
                layer: format!("sequential of {} layers", self.layers.len()),
            });
        }
        let mut g = grad_out.clone();
        for (l, c) in self.layers.iter().zip(caches).rev() {
            g = l.backward(params, c, &g, grads)?;
        }
        Ok(g)
    }
}
