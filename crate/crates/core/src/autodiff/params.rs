use std::collections::BTreeMap;

use super::{AutodiffError, Gradients, Result, Tape, Tensor, Var};

/// Named trainable tensors, iterated in name order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamSet {
    tensors: BTreeMap<String, Tensor>,
    seed: u64,
}

/// Parameters recorded as leaves on one tape.
#[derive(Debug, Clone)]
pub struct BoundParams<'t> {
    tape: &'t Tape,
    vars: BTreeMap<String, Var<'t>>,
}

impl ParamSet {
    pub fn new(seed: u64) -> Self {
        Self {
            tensors: BTreeMap::new(),
            seed,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn insert(&mut self, name: impl Into<String>, mut tensor: Tensor) -> Result<()> {
        let name = name.into();
        if self.tensors.contains_key(&name) {
            return Err(AutodiffError::DuplicateParameter { name });
        }
        if !tensor.is_finite() {
            return Err(AutodiffError::NonFinite { op: "insert" });
        }
        tensor.set_requires_grad(true);
        self.tensors.insert(name, tensor);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.tensors
            .get(name)
            .ok_or_else(|| AutodiffError::UnknownParameter { name: name.into() })
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor> {
        self.tensors
            .get_mut(name)
            .ok_or_else(|| AutodiffError::UnknownParameter { name: name.into() })
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.tensors.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor)> {
        self.tensors.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tensors.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    /// Total number of scalar entries across all tensors.
    pub fn num_entries(&self) -> usize {
        self.tensors.values().map(Tensor::numel).sum()
    }

    pub fn bind<'t>(&self, tape: &'t Tape) -> BoundParams<'t> {
        BoundParams {
            tape,
            vars: self
                .tensors
                .iter()
                .map(|(k, t)| (k.clone(), tape.leaf(t)))
                .collect(),
        }
    }

    /// Adds the gradients of every bound leaf into the matching buffers.
    /// Leaves not reached by the loss get a zero buffer.
    pub fn accumulate(&mut self, bound: &BoundParams<'_>, grads: &Gradients) -> Result<()> {
        for (name, var) in &bound.vars {
            let tensor = self.get_mut(name)?;
            match grads.get(*var) {
                Some(g) => tensor.accumulate_grad(g),
                None => {
                    if tensor.grad().is_none() {
                        tensor.zero_grad();
                    }
                }
            }
        }
        Ok(())
    }

    /// Runs backward from `loss` and accumulates into this set.
    pub fn backward(&mut self, bound: &BoundParams<'_>, loss: Var<'_>) -> Result<Gradients> {
        let grads = loss.tape().backward(loss)?;
        self.accumulate(bound, &grads)?;
        Ok(grads)
    }

    pub fn zero_grads(&mut self) {
        self.tensors.values_mut().for_each(Tensor::zero_grad);
    }

    /// Concatenated gradient entries in name order (zeros where absent).
    pub fn flat_grads(&self) -> Vec<f64> {
        self.tensors
            .values()
            .flat_map(|t| match t.grad() {
                Some(g) => g.to_vec(),
                None => vec![0.0; t.numel()],
            })
            .collect()
    }

    pub fn flat_values(&self) -> Vec<f64> {
        self.tensors
            .values()
            .flat_map(|t| t.data().iter().copied())
            .collect()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors.values().all(Tensor::is_finite)
    }
}

impl<'t> BoundParams<'t> {
    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn get(&self, name: &str) -> Result<Var<'t>> {
        self.vars
            .get(name)
            .copied()
            .ok_or_else(|| AutodiffError::UnknownParameter { name: name.into() })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn set() -> ParamSet {
        let mut p = ParamSet::new(0);
        p.insert("w", Tensor::column(vec![1.0, -2.0])).unwrap();
        p.insert("unused", Tensor::column(vec![3.0])).unwrap();
        p
    }

    fn loss_grads(p: &mut ParamSet) {
        let tape = Tape::new();
        let b = p.bind(&tape);
        let loss = b.get("w").unwrap().square().unwrap().sum().unwrap();
        p.backward(&b, loss).unwrap();
    }

    #[test]
    fn duplicate_names_rejected() {
        let mut p = set();
        assert!(p.insert("w", Tensor::scalar(0.0)).is_err());
    }

    #[test]
    fn backward_twice_doubles() {
        let mut p = set();
        loss_grads(&mut p);
        let once = p.flat_grads();
        loss_grads(&mut p);
        let twice = p.flat_grads();
        for (a, b) in once.iter().zip(&twice) {
            assert_eq!(2.0 * a, *b);
        }
    }

    #[test]
    fn disconnected_parameter_gets_zero() {
        let mut p = set();
        loss_grads(&mut p);
        assert_eq!(p.get("unused").unwrap().grad(), Some(&[0.0][..]));
        assert_eq!(p.get("w").unwrap().grad(), Some(&[2.0, -4.0][..]));
    }

    #[test]
    fn zero_then_backward_matches_single_backward() {
        let mut fresh = set();
        loss_grads(&mut fresh);

        let mut p = set();
        loss_grads(&mut p);
        loss_grads(&mut p);
        p.zero_grads();
        assert!(p.flat_grads().iter().all(|g| *g == 0.0));
        p.zero_grads();
        assert!(p.flat_grads().iter().all(|g| *g == 0.0));
        loss_grads(&mut p);
        assert_eq!(p.flat_grads(), fresh.flat_grads());
    }
}
