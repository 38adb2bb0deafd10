use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::RwLock;

use crate::error::{shape_err, Error, Result};
use crate::numerics::Tensor;

/// Authoritative copy of every named tensor. Workers pull snapshots and push
/// additive deltas; each tensor has its own lock, so a read never observes a
/// half-applied update.
#[derive(Debug)]
pub struct ParameterServer {
    names: Vec<String>,
    index: HashMap<String, usize>,
    tensors: Vec<RwLock<Tensor>>,
    counters: Vec<AtomicU64>,
}

fn poisoned(name: &str) -> Error {
    Error::Server(format!("lock on `{name}` poisoned"))
}

impl ParameterServer {
    pub fn new(named: Vec<(String, Tensor)>) -> Result<Self> {
        let mut index = HashMap::with_capacity(named.len());
        for (i, (name, _)) in named.iter().enumerate() {
            if index.insert(name.clone(), i).is_some() {
                return Err(Error::InvalidArgument(format!("duplicate tensor `{name}`")));
            }
        }
        let counters = named.iter().map(|_| AtomicU64::new(0)).collect();
        let (names, tensors) = named.into_iter().map(|(n, t)| (n, RwLock::new(t))).unzip();
        Ok(Self {
            names,
            index,
            tensors,
            counters,
        })
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    fn lookup(&self, name: &str) -> Result<usize> {
        self.index.get(name).copied().ok_or_else(|| Error::UnknownTensor(name.to_string()))
    }

    pub fn read(&self, name: &str) -> Result<Tensor> {
        let i = self.lookup(name)?;
        Ok(self.tensors[i].read().map_err(|_| poisoned(name))?.clone())
    }

    /// Every tensor in registration order. Each one is internally
    /// consistent; different tensors may come from different update rounds.
    pub fn snapshot(&self) -> Result<Vec<Tensor>> {
        self.tensors
            .iter()
            .zip(&self.names)
            .map(|(t, n)| Ok(t.read().map_err(|_| poisoned(n))?.clone()))
            .collect()
    }

    /// Adds each delta to its tensor. Names and shapes are validated before
    /// anything is modified.
    pub fn apply(&self, deltas: &[(&str, &Tensor)]) -> Result<()> {
        let mut targets = Vec::with_capacity(deltas.len());
        for (name, delta) in deltas {
            let i = self.lookup(name)?;
            let shape_ok = self.tensors[i].read().map_err(|_| poisoned(name))?.shape() == delta.shape();
            if !shape_ok {
                return shape_err("server_apply", format!("delta for `{name}` has shape {:?}", delta.shape()));
            }
            targets.push(i);
        }
        for (&i, (name, delta)) in targets.iter().zip(deltas) {
            self.tensors[i].write().map_err(|_| poisoned(name))?.add_assign(delta)?;
            self.counters[i].fetch_add(1, Ordering::SeqCst);
        }
        Ok(())
    }

    pub fn counter(&self, name: &str) -> Result<u64> {
        Ok(self.counters[self.lookup(name)?].load(Ordering::SeqCst))
    }

    pub fn counters(&self) -> Vec<u64> {
        self.counters.iter().map(|c| c.load(Ordering::SeqCst)).collect()
    }

    pub(crate) fn set_counters(&self, values: &[u64]) -> Result<()> {
        if values.len() != self.counters.len() {
            return Err(Error::Checkpoint("counter count mismatch".into()));
        }
        for (c, &v) in self.counters.iter().zip(values) {
            c.store(v, Ordering::SeqCst);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn server() -> ParameterServer {
        ParameterServer::new(vec![
            ("a".into(), Tensor::full(&[4], 1.0)),
            ("b".into(), Tensor::zeros(&[2, 2])),
        ])
        .unwrap()
    }

    #[test]
    fn zero_delta_advances_counter_only() {
        let s = server();
        s.apply(&[("a", &Tensor::zeros(&[4]))]).unwrap();
        assert_eq!(s.read("a").unwrap(), Tensor::full(&[4], 1.0));
        assert_eq!(s.counter("a").unwrap(), 1);
        assert_eq!(s.counter("b").unwrap(), 0);
    }

    #[test]
    fn unknown_name_and_bad_shape_rejected_without_effect() {
        let s = server();
        let d = Tensor::full(&[4], 2.0);
        assert!(matches!(
            s.apply(&[("a", &d), ("zzz", &d)]),
            Err(Error::UnknownTensor(n)) if n == "zzz"
        ));
        assert!(s.apply(&[("a", &d), ("b", &d)]).is_err());
        assert_eq!(s.read("a").unwrap(), Tensor::full(&[4], 1.0));
        assert_eq!(s.counters(), vec![0, 0]);
    }

    #[test]
    fn opposite_concurrent_deltas_cancel() {
        let s = server();
        let plus = Tensor::full(&[4], 0.25);
        let minus = Tensor::full(&[4], -0.25);
        std::thread::scope(|sc| {
            sc.spawn(|| s.apply(&[("a", &plus)]).unwrap());
            sc.spawn(|| s.apply(&[("a", &minus)]).unwrap());
        });
        assert_eq!(s.read("a").unwrap(), Tensor::full(&[4], 1.0));
        assert_eq!(s.counter("a").unwrap(), 2);
    }

    #[test]
    fn duplicate_names_rejected() {
        let r = ParameterServer::new(vec![("x".into(), Tensor::zeros(&[1])), ("x".into(), Tensor::zeros(&[1]))]);
        assert!(r.is_err());
    }
}
