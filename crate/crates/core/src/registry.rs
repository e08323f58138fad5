//! Name-keyed strategy registries.

use crate::error::{Error, Result};

/// Ordered map from strategy name to a constructor (or any other payload).
///
/// Lookup is by exact name; iteration follows registration order.
#[derive(Debug, Clone)]
pub struct Registry<F> {
    kind: &'static str,
    entries: Vec<(&'static str, F)>,
}

impl<F> Registry<F> {
    pub fn new(kind: &'static str) -> Self {
        Self {
            kind,
            entries: Vec::new(),
        }
    }

    /// Registers `name`; a later registration under the same name replaces
    /// the earlier one in place.
    pub fn register(&mut self, name: &'static str, item: F) -> &mut Self {
        match self.entries.iter_mut().find(|(n, _)| *n == name) {
            Some(slot) => slot.1 = item,
            None => self.entries.push((name, item)),
        }
        self
    }

    pub fn get(&self, name: &str) -> Result<&F> {
        self.entries
            .iter()
            .find(|(n, _)| *n == name)
            .map(|(_, f)| f)
            .ok_or_else(|| Error::Unknown {
                kind: self.kind,
                name: name.to_string(),
            })
    }

    pub fn names(&self) -> impl Iterator<Item = &'static str> + '_ {
        self.entries.iter().map(|(n, _)| *n)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&'static str, &F)> {
        self.entries.iter().map(|(n, f)| (*n, f))
    }
}
