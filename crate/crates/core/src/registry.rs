//! Name-keyed factories for interchangeable strategies.

use std::collections::BTreeMap;

use crate::error::{Result, SrhError};

type Factory<T, P> = Box<dyn Fn(&P) -> Result<Box<T>> + Send + Sync>;

/// Maps strategy names to constructors of boxed trait objects.
pub struct Registry<T: ?Sized, P> {
    kind: &'static str,
    factories: BTreeMap<String, Factory<T, P>>,
}

impl<T: ?Sized, P> Registry<T, P> {
    pub fn empty(kind: &'static str) -> Self {
        Self { kind, factories: BTreeMap::new() }
    }

    /// Adds or replaces a strategy.
    pub fn register(&mut self, name: &str, factory: impl Fn(&P) -> Result<Box<T>> + Send + Sync + 'static) {
        self.factories.insert(name.to_string(), Box::new(factory));
    }

    pub fn names(&self) -> Vec<String> {
        self.factories.keys().cloned().collect()
    }

    pub fn contains(&self, name: &str) -> bool {
        self.factories.contains_key(name)
    }

    pub fn create(&self, name: &str, params: &P) -> Result<Box<T>> {
        match self.factories.get(name) {
            Some(f) => f(params),
            None => Err(SrhError::UnknownStrategy {
                kind: self.kind,
                name: name.to_string(),
                available: self.names().join(", "),
            }),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    trait Greeter {
        fn greet(&self) -> String;
    }
    struct Hello(String);
    impl Greeter for Hello {
        fn greet(&self) -> String {
            format!("hello {}", self.0)
        }
    }

    #[test]
    fn create_and_unknown() {
        let mut r: Registry<dyn Greeter, String> = Registry::empty("greeter");
        r.register("hello", |p: &String| Ok(Box::new(Hello(p.clone())) as Box<dyn Greeter>));
        assert_eq!(r.create("hello", &"x".to_string()).unwrap().greet(), "hello x");
        let err = r.create("bye", &String::new()).err().unwrap();
        assert!(matches!(err, SrhError::UnknownStrategy { ref available, .. } if available == "hello"));
    }
}
