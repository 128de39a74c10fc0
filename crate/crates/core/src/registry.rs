//! Name-keyed registries of interchangeable strategies.
//!
//! Filters, activations, feature maps and concentration events are all
//! selected at runtime from JSON configs. Each family exposes a
//! [`Registry`] whose factories turn a parameter object into a boxed trait
//! object.

use std::collections::BTreeMap;
use std::fmt;

use serde_json::Value;

use crate::error::{Error, Result};

pub type Factory<T> = Box<dyn Fn(&Value) -> Result<Box<T>> + Send + Sync>;

pub struct Registry<T: ?Sized> {
    family: &'static str,
    entries: BTreeMap<String, Factory<T>>,
}

impl<T: ?Sized> Registry<T> {
    pub fn new(family: &'static str) -> Self {
        Self {
            family,
            entries: BTreeMap::new(),
        }
    }

    /// Registers `factory` under `name`, replacing any previous entry.
    pub fn register<F>(&mut self, name: &str, factory: F) -> &mut Self
    where
        F: Fn(&Value) -> Result<Box<T>> + Send + Sync + 'static,
    {
        self.entries.insert(name.to_owned(), Box::new(factory));
        self
    }

    pub fn build(&self, name: &str, params: &Value) -> Result<Box<T>> {
        let factory = self.entries.get(name).ok_or_else(|| {
            Error::config(format!(
                "unknown {} '{}' (known: {})",
                self.family,
                name,
                self.names().join(", ")
            ))
        })?;
        factory(params)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    /// Registered names in sorted order.
    pub fn names(&self) -> Vec<&str> {
        self.entries.keys().map(String::as_str).collect()
    }
}

impl<T: ?Sized> fmt::Debug for Registry<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Registry")
            .field("family", &self.family)
            .field("names", &self.names())
            .finish()
    }
}

pub(crate) fn param_f64(params: &Value, key: &str) -> Result<Option<f64>> {
    match params.get(key) {
        None | Some(Value::Null) => Ok(None),
        Some(v) => v
            .as_f64()
            .map(Some)
            .ok_or_else(|| Error::config(format!("parameter '{key}' must be a number"))),
    }
}
