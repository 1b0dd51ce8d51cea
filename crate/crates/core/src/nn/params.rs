//! Named parameter collections and their persistence.

use std::collections::BTreeMap;

use serde_json::json;

use crate::error::{Error, Result};
use crate::io::{ArrayData, Container, NamedArray};
use crate::tensor::DenseArray;

/// A network's parameters plus the Adam moment estimates that track them.
///
/// Entries are kept in a name-sorted map so iteration order — and therefore
/// serialization and optimizer update order — is deterministic.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParameterSet {
    entries: BTreeMap<String, DenseArray>,
    adam_m: BTreeMap<String, DenseArray>,
    adam_v: BTreeMap<String, DenseArray>,
    step: u64,
}

impl ParameterSet {
    pub fn new() -> ParameterSet {
        ParameterSet::default()
    }

    /// Insert or replace a parameter. Fresh entries get zeroed moments.
    pub fn insert(&mut self, name: impl Into<String>, value: DenseArray) {
        let name = name.into();
        self.adam_m.insert(name.clone(), DenseArray::zeros(value.shape()));
        self.adam_v.insert(name.clone(), DenseArray::zeros(value.shape()));
        self.entries.insert(name, value);
    }

    pub fn get(&self, name: &str) -> Result<&DenseArray> {
        self.entries
            .get(name)
            .ok_or_else(|| Error::invalid_argument(format!("no parameter named '{name}'")))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut DenseArray> {
        self.entries
            .get_mut(name)
            .ok_or_else(|| Error::invalid_argument(format!("no parameter named '{name}'")))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    /// Parameter names in sorted order.
    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(|s| s.as_str())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &DenseArray)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    /// Total scalar parameter count.
    pub fn num_params(&self) -> usize {
        self.entries.values().map(|a| a.len()).sum()
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub(crate) fn optimizer_state_mut(
        &mut self,
    ) -> (
        &mut BTreeMap<String, DenseArray>,
        &mut BTreeMap<String, DenseArray>,
        &mut BTreeMap<String, DenseArray>,
        &mut u64,
    ) {
        (
            &mut self.entries,
            &mut self.adam_m,
            &mut self.adam_v,
            &mut self.step,
        )
    }

    /// True if every parameter value is finite.
    pub fn all_finite(&self) -> bool {
        self.entries.values().all(|a| a.all_finite())
    }

    /// Pack parameters and optimizer state into a container.
    pub fn to_container(&self) -> Container {
        let mut c = Container::new(json!({ "step": self.step }));
        for (prefix, map) in [("p", &self.entries), ("m", &self.adam_m), ("v", &self.adam_v)] {
            for (name, arr) in map {
                c.push(NamedArray::f32(
                    format!("{prefix}:{name}"),
                    arr.shape(),
                    arr.data().to_vec(),
                ));
            }
        }
        c
    }

    /// Rebuild from a container written by [`ParameterSet::to_container`].
    pub fn from_container(c: &Container) -> Result<ParameterSet> {
        #[derive(serde::Deserialize)]
        struct Meta {
            step: u64,
        }
        let meta: Meta = c.meta_as()?;
        let mut out = ParameterSet {
            step: meta.step,
            ..ParameterSet::default()
        };
        for a in &c.arrays {
            let (prefix, name) = a
                .name
                .split_once(':')
                .ok_or_else(|| Error::format(format!("array '{}'", a.name), "expected 'kind:name'"))?;
            let values = match &a.data {
                ArrayData::F32(v) => v.clone(),
                _ => return Err(Error::format(format!("array '{}'", a.name), "expected f32")),
            };
            let arr = DenseArray::from_vec(&a.shape, values)
                .map_err(|e| Error::format(format!("array '{}'", a.name), e.to_string()))?;
            let map = match prefix {
                "p" => &mut out.entries,
                "m" => &mut out.adam_m,
                "v" => &mut out.adam_v,
                other => {
                    return Err(Error::format(
                        format!("array '{}'", a.name),
                        format!("unknown kind '{other}'"),
                    ))
                }
            };
            map.insert(name.to_string(), arr);
        }
        for name in out.entries.keys() {
            if !out.adam_m.contains_key(name) || !out.adam_v.contains_key(name) {
                return Err(Error::format(
                    format!("parameter '{name}'"),
                    "missing optimizer moments",
                ));
            }
        }
        Ok(out)
    }
}

/// Gradients accumulated by name. Repeated accumulation into the same entry
/// sums element-wise, which is how shared parameters (embedding rows hit by
/// several batch items) collect their contributions.
#[derive(Debug, Clone, Default)]
pub struct GradientSet {
    entries: BTreeMap<String, DenseArray>,
}

impl GradientSet {
    pub fn new() -> GradientSet {
        GradientSet::default()
    }

    /// Add `grad` into the entry for `name`, creating it if absent.
    pub fn accumulate(&mut self, name: &str, grad: DenseArray) {
        match self.entries.get_mut(name) {
            Some(existing) => {
                assert_eq!(existing.shape(), grad.shape(), "gradient shape changed for '{name}'");
                for (dst, src) in existing.data_mut().iter_mut().zip(grad.data()) {
                    *dst += *src;
                }
            }
            None => {
                self.entries.insert(name.to_string(), grad);
            }
        }
    }

    /// Scale every gradient in place.
    pub fn scale(&mut self, factor: f32) {
        for arr in self.entries.values_mut() {
            for x in arr.data_mut() {
                *x *= factor;
            }
        }
    }

    /// Merge another gradient set into this one, summing overlaps.
    pub fn merge(&mut self, other: GradientSet) {
        for (name, grad) in other.entries {
            self.accumulate(&name, grad);
        }
    }

    pub fn get(&self, name: &str) -> Option<&DenseArray> {
        self.entries.get(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &DenseArray)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Soft target update: `target ← (1 − υ)·target + υ·online`.
///
/// Both sets must hold exactly the same parameter names and shapes.
pub fn polyak_update(target: &mut ParameterSet, online: &ParameterSet, upsilon: f32) -> Result<()> {
    if !(0.0..=1.0).contains(&upsilon) {
        return Err(Error::invalid_argument(format!(
            "polyak coefficient must lie in [0, 1], got {upsilon}"
        )));
    }
    let target_names: Vec<&str> = target.names().collect();
    let online_names: Vec<&str> = online.names().collect();
    if target_names != online_names {
        return Err(Error::invalid_argument(format!(
            "parameter sets differ: target {target_names:?} vs online {online_names:?}"
        )));
    }
    for (name, src) in online.iter() {
        let dst = target.entries.get_mut(name).unwrap();
        if dst.shape() != src.shape() {
            return Err(Error::invalid_argument(format!(
                "shape mismatch for '{name}': {:?} vs {:?}",
                dst.shape(),
                src.shape()
            )));
        }
        for (t, o) in dst.data_mut().iter_mut().zip(src.data()) {
            *t = (1.0 - upsilon) * *t + upsilon * *o;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_set() -> ParameterSet {
        let mut p = ParameterSet::new();
        p.insert("b.w", DenseArray::from_vec(&[2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap());
        p.insert("a.b", DenseArray::from_vec(&[3], vec![-1.0, 0.0, 1.0]).unwrap());
        p
    }

    #[test]
    fn names_iterate_sorted() {
        let p = small_set();
        let names: Vec<&str> = p.names().collect();
        assert_eq!(names, vec!["a.b", "b.w"]);
    }

    #[test]
    fn container_round_trip_is_exact() {
        let p = small_set();
        let c = p.to_container();
        let bytes = crate::io::to_bytes(crate::io::MAGIC_PARAMS, &c).unwrap();
        let back = ParameterSet::from_container(
            &crate::io::from_bytes(crate::io::MAGIC_PARAMS, &bytes).unwrap(),
        )
        .unwrap();
        assert_eq!(p, back);
    }

    #[test]
    fn polyak_moves_toward_online() {
        let mut target = small_set();
        let mut online = small_set();
        online.get_mut("a.b").unwrap().data_mut()[0] = 9.0;
        polyak_update(&mut target, &online, 0.5).unwrap();
        assert_eq!(target.get("a.b").unwrap().data()[0], 4.0); // (1-.5)*-1 + .5*9
        assert_eq!(target.get("a.b").unwrap().data()[1], 0.0);
    }

    #[test]
    fn polyak_rejects_mismatches() {
        let mut target = small_set();
        let online = small_set();
        assert!(polyak_update(&mut target, &online, 1.5).is_err());
        let mut extra = small_set();
        extra.insert("zzz", DenseArray::zeros(&[1]));
        assert!(polyak_update(&mut target, &extra, 0.1).is_err());
    }

    #[test]
    fn gradient_accumulation_sums() {
        let mut g = GradientSet::new();
        g.accumulate("w", DenseArray::from_vec(&[2], vec![1.0, 2.0]).unwrap());
        g.accumulate("w", DenseArray::from_vec(&[2], vec![0.5, -1.0]).unwrap());
        assert_eq!(g.get("w").unwrap().data(), &[1.5, 1.0]);
        g.scale(2.0);
        assert_eq!(g.get("w").unwrap().data(), &[3.0, 2.0]);
    }
}
