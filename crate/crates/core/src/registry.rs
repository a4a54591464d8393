//! Name-keyed factories for runtime-selected strategy objects.

use std::collections::BTreeMap;
use std::fmt;

use serde_json::Value;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RegistryError {
    #[error("unknown {kind} {name:?}; available: {available}")]
    Unknown { kind: &'static str, name: String, available: String },
    #[error("{kind} {name:?} is already registered")]
    Duplicate { kind: &'static str, name: String },
    #[error("cannot build {kind} {name:?}: {reason}")]
    Build { kind: &'static str, name: String, reason: String },
}

type Factory<T> = Box<dyn Fn(&Value) -> Result<Box<T>, String> + Send + Sync>;

/// Maps names to constructors taking a JSON option blob.
pub struct Registry<T: ?Sized> {
    kind: &'static str,
    factories: BTreeMap<String, Factory<T>>,
}

impl<T: ?Sized> fmt::Debug for Registry<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Registry").field("kind", &self.kind).field("names", &self.names()).finish()
    }
}

impl<T: ?Sized> Registry<T> {
    pub fn new(kind: &'static str) -> Self {
        Self { kind, factories: BTreeMap::new() }
    }

    pub fn register<F>(&mut self, name: &str, factory: F) -> Result<(), RegistryError>
    where
        F: Fn(&Value) -> Result<Box<T>, String> + Send + Sync + 'static,
    {
        if self.factories.contains_key(name) {
            return Err(RegistryError::Duplicate { kind: self.kind, name: name.into() });
        }
        self.factories.insert(name.into(), Box::new(factory));
        Ok(())
    }

    /// Builder-style `register` for static tables; panics on duplicates.
    pub fn with<F>(mut self, name: &str, factory: F) -> Self
    where
        F: Fn(&Value) -> Result<Box<T>, String> + Send + Sync + 'static,
    {
        self.register(name, factory).expect("duplicate registration in static table");
        self
    }

    pub fn names(&self) -> Vec<&str> {
        self.factories.keys().map(String::as_str).collect()
    }

    pub fn contains(&self, name: &str) -> bool {
        self.factories.contains_key(name)
    }

    pub fn create(&self, name: &str, options: &Value) -> Result<Box<T>, RegistryError> {
        let factory = self.factories.get(name).ok_or_else(|| RegistryError::Unknown {
            kind: self.kind,
            name: name.into(),
            available: self.names().join(", "),
        })?;
        factory(options).map_err(|reason| RegistryError::Build { kind: self.kind, name: name.into(), reason })
    }
}
