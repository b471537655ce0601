use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{BatError, Result};
use crate::numerics::params::init_tensor;
use crate::numerics::{Init, ParamStore, Tensor};

/// Name of the identity table inside a [`ParamStore`].
pub const IDENTITY_PARAM: &str = "registry.identity";

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegistryMode {
    /// Datasets reporting the same sensor name share one identity row.
    #[default]
    Shared,
    /// Every dataset gets its own rows, even for names seen before.
    Separate,
}

/// Vocabulary of sensor identities and, per dataset, the vocabulary row of
/// each local sensor column. The rows themselves live in a parameter store
/// under [`IDENTITY_PARAM`].
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SensorRegistry {
    pub mode: RegistryMode,
    vocabulary: Vec<String>,
    aliases: BTreeMap<String, Vec<usize>>,
}

impl SensorRegistry {
    pub fn new(mode: RegistryMode) -> Self {
        SensorRegistry { mode, vocabulary: Vec::new(), aliases: BTreeMap::new() }
    }

    pub fn vocabulary(&self) -> &[String] {
        &self.vocabulary
    }

    pub fn len(&self) -> usize {
        self.vocabulary.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vocabulary.is_empty()
    }

    pub fn datasets(&self) -> impl Iterator<Item = &str> {
        self.aliases.keys().map(String::as_str)
    }

    fn key(&self, dataset: &str, sensor: &str) -> String {
        match self.mode {
            RegistryMode::Shared => sensor.to_string(),
            RegistryMode::Separate => format!("{dataset}/{sensor}"),
        }
    }

    /// Adds `dataset` with its sensor columns, creating vocabulary entries
    /// for unseen identities. Registering the same dataset again with the
    /// same sensors is a no-op.
    pub fn register(&mut self, dataset: &str, sensors: &[String]) -> Result<Vec<usize>> {
        let mut seen = std::collections::HashSet::new();
        if let Some(dup) = sensors.iter().find(|s| !seen.insert(s.as_str())) {
            return Err(BatError::Registry(format!("dataset {dataset} lists sensor {dup} twice")));
        }
        let keys: Vec<String> = sensors.iter().map(|s| self.key(dataset, s)).collect();
        if let Some(existing) = self.aliases.get(dataset) {
            let same = existing.len() == keys.len() && existing.iter().zip(&keys).all(|(&i, k)| &self.vocabulary[i] == k);
            return if same {
                Ok(existing.clone())
            } else {
                Err(BatError::Registry(format!("dataset {dataset} already registered with other sensors")))
            };
        }
        let rows: Vec<usize> = keys
            .into_iter()
            .map(|k| match self.vocabulary.iter().position(|v| *v == k) {
                Some(i) => i,
                None => {
                    self.vocabulary.push(k);
                    self.vocabulary.len() - 1
                }
            })
            .collect();
        self.aliases.insert(dataset.to_string(), rows.clone());
        Ok(rows)
    }

    /// Registers `dataset` as a view whose columns are the whole vocabulary,
    /// in vocabulary order.
    pub fn alias_vocabulary(&mut self, dataset: &str) -> Vec<usize> {
        let rows: Vec<usize> = (0..self.vocabulary.len()).collect();
        self.aliases.insert(dataset.to_string(), rows.clone());
        rows
    }

    pub fn resolve(&self, dataset: &str) -> Result<&[usize]> {
        self.aliases
            .get(dataset)
            .map(Vec::as_slice)
            .ok_or_else(|| BatError::Registry(format!("dataset {dataset} is not registered")))
    }

    /// Vocabulary row of local sensor column `local` of `dataset`.
    pub fn row(&self, dataset: &str, local: usize) -> Result<usize> {
        self.resolve(dataset)?
            .get(local)
            .copied()
            .ok_or_else(|| BatError::Registry(format!("dataset {dataset} has no sensor column {local}")))
    }

    /// Fresh identity table for the current vocabulary. Each row is seeded by
    /// its vocabulary entry, so a row's initial value does not depend on
    /// registration order.
    pub fn init_table(&self, width: usize, seed: u64) -> Result<Tensor> {
        self.init_rows(0, width, seed)
    }

    fn init_rows(&self, from: usize, width: usize, seed: u64) -> Result<Tensor> {
        let mut data = Vec::with_capacity((self.len() - from) * width);
        for name in &self.vocabulary[from..] {
            data.extend_from_slice(init_tensor(&format!("{IDENTITY_PARAM}/{name}"), &[width], Init::FanIn(1), seed).data());
        }
        Tensor::new(vec![self.len() - from, width], data)
    }

    /// Grows the identity table in `store` to cover vocabulary added since it
    /// was created.
    pub fn sync_table(&self, store: &mut ParamStore, seed: u64) -> Result<()> {
        let id = store.id(IDENTITY_PARAM)?;
        let shape = store.get(id).tensor.shape().to_vec();
        if shape[0] > self.len() {
            return Err(BatError::Registry(format!("identity table has {} rows for {} entries", shape[0], self.len())));
        }
        if shape[0] < self.len() {
            let rows = self.init_rows(shape[0], shape[1], seed)?;
            store.append_rows(id, &rows)?;
        }
        Ok(())
    }

    /// Copy of the identity row behind `dataset`'s local column `local`.
    pub fn identity_row(&self, store: &ParamStore, dataset: &str, local: usize) -> Result<Vec<f64>> {
        let row = self.row(dataset, local)?;
        let table = &store.by_name(IDENTITY_PARAM).ok_or_else(|| BatError::Registry("no identity table".into()))?.tensor;
        let width = table.shape()[1];
        if row >= table.shape()[0] {
            return Err(BatError::Registry(format!("identity table lacks row {row}")));
        }
        Ok(table.data()[row * width..(row + 1) * width].to_vec())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn names(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn shared_and_separate_counts() {
        let a = names(&["hr", "sbp", "temp", "ph", "a1", "a2", "a3", "a4"]);
        let b = names(&["hr", "sbp", "temp", "ph", "b1", "b2", "b3", "b4"]);
        let mut shared = SensorRegistry::new(RegistryMode::Shared);
        shared.register("A", &a).unwrap();
        shared.register("B", &b).unwrap();
        assert_eq!(shared.len(), 12);
        assert_eq!(shared.row("A", 2).unwrap(), shared.row("B", 2).unwrap());

        let mut separate = SensorRegistry::new(RegistryMode::Separate);
        separate.register("A", &a).unwrap();
        separate.register("B", &b).unwrap();
        assert_eq!(separate.len(), 16);
        assert_ne!(separate.row("A", 0).unwrap(), separate.row("B", 0).unwrap());
    }

    #[test]
    fn reregistration_rules() {
        let mut r = SensorRegistry::new(RegistryMode::Shared);
        let rows = r.register("A", &names(&["x", "y"])).unwrap();
        assert_eq!(r.register("A", &names(&["x", "y"])).unwrap(), rows);
        assert!(matches!(r.register("A", &names(&["y", "x"])), Err(BatError::Registry(_))));
        assert!(matches!(r.register("B", &names(&["z", "z"])), Err(BatError::Registry(_))));
        assert!(matches!(r.resolve("C"), Err(BatError::Registry(_))));
    }

    #[test]
    fn rows_independent_of_registration_order() {
        let mut r1 = SensorRegistry::new(RegistryMode::Shared);
        r1.register("A", &names(&["x", "y"])).unwrap();
        let mut r2 = SensorRegistry::new(RegistryMode::Shared);
        r2.register("A", &names(&["y", "x"])).unwrap();
        let mut s1 = ParamStore::new();
        s1.insert(IDENTITY_PARAM, r1.init_table(4, 7).unwrap()).unwrap();
        let mut s2 = ParamStore::new();
        s2.insert(IDENTITY_PARAM, r2.init_table(4, 7).unwrap()).unwrap();
        assert_eq!(r1.identity_row(&s1, "A", 0).unwrap(), r2.identity_row(&s2, "A", 1).unwrap());
    }

    #[test]
    fn sync_appends_new_rows() {
        let mut r = SensorRegistry::new(RegistryMode::Shared);
        r.register("A", &names(&["x", "y"])).unwrap();
        let mut s = ParamStore::new();
        s.insert(IDENTITY_PARAM, r.init_table(3, 1).unwrap()).unwrap();
        let before = r.identity_row(&s, "A", 1).unwrap();
        r.register("B", &names(&["y", "z"])).unwrap();
        r.sync_table(&mut s, 1).unwrap();
        assert_eq!(s.by_name(IDENTITY_PARAM).unwrap().tensor.shape(), &[3, 3]);
        assert_eq!(r.identity_row(&s, "B", 0).unwrap(), before);
    }

    #[test]
    fn serde_round_trip() {
        let mut r = SensorRegistry::new(RegistryMode::Separate);
        r.register("A", &names(&["x"])).unwrap();
        let back: SensorRegistry = serde_json::from_str(&serde_json::to_string(&r).unwrap()).unwrap();
        assert_eq!(back, r);
    }
}
