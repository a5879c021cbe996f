use std::collections::HashMap;
use std::hash::Hash;
use std::sync::{Arc, Mutex};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::hermitian::HermitianForm;
use crate::linalg::Mat;
use crate::repcore::{PiData, SummandWitness, WeightModule};
use crate::scalars::{Params, DEFAULT_SEED};

/// Memo table whose fills are idempotent: two racing fills store equal values.
pub(crate) struct Cache<K, V>(Mutex<HashMap<K, V>>);

impl<K: Eq + Hash + Clone, V: Clone> Cache<K, V> {
    fn new() -> Self {
        Self(Mutex::new(HashMap::new()))
    }

    pub(crate) fn get_or_try(&self, key: &K, fill: impl FnOnce() -> Result<V>) -> Result<V> {
        if let Some(v) = self.0.lock().unwrap().get(key) {
            return Ok(v.clone());
        }
        let v = fill()?;
        self.0.lock().unwrap().entry(key.clone()).or_insert(v.clone());
        Ok(v)
    }

    pub(crate) fn insert(&self, key: K, v: V) {
        self.0.lock().unwrap().insert(key, v);
    }
}

/// Parameters plus per-descriptor caches for modules, splittings, forms and
/// ribbon operators. Everything computed through a `Ctx` is deterministic in
/// `(params, seed)`.
pub struct Ctx {
    pub params: Params,
    pub seed: u64,
    pub(crate) modules: Cache<String, Arc<WeightModule>>,
    pub(crate) decomps: Cache<String, Arc<Vec<SummandWitness>>>,
    pub(crate) pis: Cache<u32, Arc<PiData>>,
    pub(crate) forms: Cache<String, Arc<HermitianForm>>,
    pub(crate) twists: Cache<String, Arc<Mat>>,
    pub(crate) half_twists: Cache<String, Arc<Mat>>,
    pub(crate) braidings: Cache<(String, String, bool), Arc<Mat>>,
}

impl Ctx {
    pub fn new(params: Params) -> Self {
        Self::with_seed(params, DEFAULT_SEED)
    }

    pub fn with_seed(params: Params, seed: u64) -> Self {
        Self {
            params,
            seed,
            modules: Cache::new(),
            decomps: Cache::new(),
            pis: Cache::new(),
            forms: Cache::new(),
            twists: Cache::new(),
            half_twists: Cache::new(),
            braidings: Cache::new(),
        }
    }

    pub fn r(&self) -> u32 {
        self.params.r
    }

    /// RNG stream tied to a purpose string, independent of call order.
    pub fn rng_for(&self, purpose: &str) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.seed ^ fnv1a(purpose.as_bytes()))
    }
}

pub(crate) fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        h ^= *b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}
