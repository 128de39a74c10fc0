//! Pointwise activations with derivatives, selectable by name.

use std::fmt;
use std::sync::OnceLock;

use crate::registry::Registry;

pub trait Activation: Send + Sync + fmt::Debug {
    fn name(&self) -> &str;
    fn value(&self, x: f64) -> f64;
    fn derivative(&self, x: f64) -> f64;
    /// `(sup |sigma|, sup |sigma'|)` when both are finite.
    fn bounds(&self) -> Option<(f64, f64)> {
        None
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct Tanh;

impl Activation for Tanh {
    fn name(&self) -> &str {
        "tanh"
    }
    fn value(&self, x: f64) -> f64 {
        x.tanh()
    }
    fn derivative(&self, x: f64) -> f64 {
        let t = x.tanh();
        1.0 - t * t
    }
    fn bounds(&self) -> Option<(f64, f64)> {
        Some((1.0, 1.0))
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct Identity;

impl Activation for Identity {
    fn name(&self) -> &str {
        "identity"
    }
    fn value(&self, x: f64) -> f64 {
        x
    }
    fn derivative(&self, _x: f64) -> f64 {
        1.0
    }
}

/// `log(1 + e^x)`.
#[derive(Debug, Clone, Copy, Default)]
pub struct Softplus;

impl Activation for Softplus {
    fn name(&self) -> &str {
        "softplus"
    }
    fn value(&self, x: f64) -> f64 {
        if x > 30.0 {
            x
        } else {
            x.exp().ln_1p()
        }
    }
    fn derivative(&self, x: f64) -> f64 {
        1.0 / (1.0 + (-x).exp())
    }
}

pub fn activation_registry() -> &'static Registry<dyn Activation> {
    static REGISTRY: OnceLock<Registry<dyn Activation>> = OnceLock::new();
    REGISTRY.get_or_init(|| {
        let mut reg: Registry<dyn Activation> = Registry::new("activation");
        reg.register("tanh", |_| Ok(Box::new(Tanh)));
        reg.register("identity", |_| Ok(Box::new(Identity)));
        reg.register("softplus", |_| Ok(Box::new(Softplus)));
        reg
    })
}
