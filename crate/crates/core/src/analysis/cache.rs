//! On-disk cache of fine-grid reference solutions.
//!
//! Each record holds the final two layers of one reference run and lives in
//! `<dir>/<sha256(key)>.ref`. The file is plain text:
//!
//! ```text
//! rlogkg-reference v1
//! key <canonical key string>
//! cells <N>
//! prev
//! <N values, one per line>
//! curr
//! <N values, one per line>
//! end
//! ```
//!
//! Values use Rust's shortest round-trip float formatting, so reading a
//! record back reproduces the computed layers bit for bit.
//!
//! Writers publish through a temporary file and an atomic rename, so readers
//! never observe a partial record. Within a process, concurrent requests for
//! the same key wait on a per-key lock while the first caller computes.

use std::collections::HashMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use log::{debug, info};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::grid::GridFunction;
use crate::schemes::Scheme;

/// Environment variable naming the default cache directory.
pub const CACHE_DIR_ENV: &str = "RLOGKG_CACHE_DIR";

const MAGIC: &str = "rlogkg-reference v1";

static TMP_COUNTER: AtomicU64 = AtomicU64::new(0);

/// Everything a reference run depends on.
#[derive(Clone, Debug, PartialEq)]
pub struct ReferenceKey {
    pub scheme: Scheme,
    /// Canonical problem identifier, free of whitespace and `;`.
    pub problem: String,
    pub epsilon: f64,
    pub lambda: f64,
    pub a: f64,
    pub b: f64,
    pub cells: usize,
    pub tau: f64,
    pub steps: usize,
    pub newton_tol: f64,
}

impl ReferenceKey {
    pub fn canonical(&self) -> String {
        format!(
            "scheme={};problem={};epsilon={:e};lambda={:e};a={:e};b={:e};N={};tau={:e};steps={};newton_tol={:e}",
            self.scheme,
            self.problem,
            self.epsilon,
            self.lambda,
            self.a,
            self.b,
            self.cells,
            self.tau,
            self.steps,
            self.newton_tol
        )
    }

    pub fn digest(&self) -> String {
        let d = Sha256::digest(self.canonical().as_bytes());
        d.iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// Final two layers `(u^{n-1}, u^n)` of a reference run.
#[derive(Clone, Debug, PartialEq)]
pub struct Reference {
    pub prev: GridFunction,
    pub curr: GridFunction,
}

type Slot = Arc<Mutex<Option<Arc<Reference>>>>;

#[derive(Debug, Default)]
pub struct ReferenceCache {
    dir: Option<PathBuf>,
    slots: Mutex<HashMap<String, Slot>>,
}

impl ReferenceCache {
    /// A cache that never touches the disk.
    pub fn in_memory() -> Self {
        Self::default()
    }

    pub fn at(dir: impl Into<PathBuf>) -> Result<Self> {
        let dir = dir.into();
        fs::create_dir_all(&dir)?;
        Ok(Self {
            dir: Some(dir),
            slots: Mutex::default(),
        })
    }

    /// `$RLOGKG_CACHE_DIR`, falling back to `rlogkg-cache` in the system temp dir.
    pub fn default_dir() -> PathBuf {
        std::env::var_os(CACHE_DIR_ENV)
            .map(PathBuf::from)
            .unwrap_or_else(|| std::env::temp_dir().join("rlogkg-cache"))
    }

    pub fn dir(&self) -> Option<&Path> {
        self.dir.as_deref()
    }

    pub fn path_for(&self, key: &ReferenceKey) -> Option<PathBuf> {
        self.dir
            .as_ref()
            .map(|d| d.join(format!("{}.ref", key.digest())))
    }

    /// Returns the cached reference for `key`, running `compute` at most once
    /// per key and process when neither memory nor disk has it.
    pub fn get_or_compute(
        &self,
        key: &ReferenceKey,
        compute: impl FnOnce() -> Result<Reference>,
    ) -> Result<Arc<Reference>> {
        let canonical = key.canonical();
        let slot = {
            let mut slots = self.slots.lock().unwrap_or_else(|e| e.into_inner());
            slots.entry(canonical.clone()).or_default().clone()
        };
        let mut guard = slot.lock().unwrap_or_else(|e| e.into_inner());
        if let Some(r) = guard.as_ref() {
            return Ok(r.clone());
        }
        let path = self.path_for(key);
        let reference = match &path {
            Some(p) if p.exists() => {
                debug!("reading reference {}", p.display());
                read_record(p, &canonical)?
            }
            _ => {
                info!("computing reference {canonical}");
                let r = compute()?;
                if let Some(p) = &path {
                    write_record(p, &canonical, &r)?;
                }
                r
            }
        };
        let reference = Arc::new(reference);
        *guard = Some(reference.clone());
        Ok(reference)
    }
}

/// Writes a record atomically.
pub fn write_record(path: &Path, canonical: &str, r: &Reference) -> Result<()> {
    let cells = r.curr.cells();
    if r.prev.cells().len() != cells.len() {
        return Err(Error::DimensionMismatch {
            expected: cells.len(),
            got: r.prev.cells().len(),
        });
    }
    let mut text = String::with_capacity(32 * (2 * cells.len() + 8));
    text.push_str(MAGIC);
    text.push('\n');
    text.push_str(&format!("key {canonical}\ncells {}\n", cells.len()));
    for (label, layer) in [("prev", r.prev.cells()), ("curr", cells)] {
        text.push_str(label);
        text.push('\n');
        for v in layer {
            text.push_str(&format!("{v:e}\n"));
        }
    }
    text.push_str("end\n");

    let tmp = path.with_extension(format!(
        "tmp.{}.{}",
        std::process::id(),
        TMP_COUNTER.fetch_add(1, Ordering::Relaxed)
    ));
    let mut f = fs::File::create(&tmp)?;
    f.write_all(text.as_bytes())?;
    f.sync_all()?;
    drop(f);
    fs::rename(&tmp, path)?;
    Ok(())
}

/// Reads a record and checks that it was written for `canonical`.
pub fn read_record(path: &Path, canonical: &str) -> Result<Reference> {
    let corrupt = |reason: String| Error::CacheCorrupt {
        path: path.to_path_buf(),
        reason,
    };
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines().enumerate();
    let mut next = |what: &str| {
        lines
            .next()
            .map(|(_, l)| l)
            .ok_or_else(|| corrupt(format!("truncated before {what}")))
    };

    let magic = next("header")?;
    if magic != MAGIC {
        return Err(corrupt(format!("unknown header '{magic}'")));
    }
    let key = next("key")?;
    match key.strip_prefix("key ") {
        Some(k) if k == canonical => {}
        Some(k) => return Err(corrupt(format!("record is for '{k}'"))),
        None => return Err(corrupt("missing key line".into())),
    }
    let cells_line = next("cells")?;
    let n: usize = cells_line
        .strip_prefix("cells ")
        .and_then(|s| s.parse().ok())
        .filter(|&n| n >= 4)
        .ok_or_else(|| corrupt(format!("bad cell count line '{cells_line}'")))?;

    let mut layers = Vec::with_capacity(2);
    for label in ["prev", "curr"] {
        let l = next(label)?;
        if l != label {
            return Err(corrupt(format!("expected '{label}', found '{l}'")));
        }
        let mut layer = Vec::with_capacity(n);
        for _ in 0..n {
            let l = next("value")?;
            let v: f64 = l
                .trim()
                .parse()
                .map_err(|_| corrupt(format!("unparseable value '{l}'")))?;
            if !v.is_finite() {
                return Err(corrupt(format!("non-finite value '{l}'")));
            }
            layer.push(v);
        }
        layers.push(GridFunction::from_cells(layer));
    }
    let end = next("end")?;
    if end != "end" {
        return Err(corrupt(format!("expected 'end', found '{end}'")));
    }
    let curr = layers.pop().unwrap_or_else(|| GridFunction::zeros(n));
    let prev = layers.pop().unwrap_or_else(|| GridFunction::zeros(n));
    Ok(Reference { prev, curr })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::atomic::AtomicUsize;

    fn key() -> ReferenceKey {
        ReferenceKey {
            scheme: Scheme::Cnfd,
            problem: "example1-gausson".into(),
            epsilon: 0.05,
            lambda: 1.0,
            a: -16.0,
            b: 16.0,
            cells: 8,
            tau: 0.1 / 256.0,
            steps: 2560,
            newton_tol: 1e-12,
        }
    }

    fn sample() -> Reference {
        let prev: Vec<f64> = (0..8).map(|j| (j as f64 * 0.37).sin() / 3.0).collect();
        let curr: Vec<f64> = (0..8).map(|j| 1e-300 + (j as f64).exp() * 1e-17).collect();
        Reference {
            prev: GridFunction::from_cells(prev),
            curr: GridFunction::from_cells(curr),
        }
    }

    #[test]
    fn key_is_stable_and_sensitive() {
        let k = key();
        assert_eq!(k.digest(), key().digest());
        assert_eq!(k.digest().len(), 64);
        let mut other = key();
        other.epsilon = 0.05000000000000001;
        assert_ne!(k.digest(), other.digest());
        assert!(k.canonical().contains("epsilon=5e-2"));
    }

    #[test]
    fn round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("r.ref");
        let r = sample();
        write_record(&p, &key().canonical(), &r).unwrap();
        assert_eq!(read_record(&p, &key().canonical()).unwrap(), r);
    }

    #[test]
    fn corruption_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("r.ref");
        write_record(&p, &key().canonical(), &sample()).unwrap();
        let good = fs::read_to_string(&p).unwrap();

        let cases = [
            good.replace("v1", "v0"),
            good.replacen("curr", "cur", 1),
            good[..good.len() / 2].to_string(),
            good.replacen("e-1", "e-1x", 1),
            good.replace("\nend\n", "\n"),
        ];
        for bad in cases {
            fs::write(&p, bad).unwrap();
            let e = read_record(&p, &key().canonical()).unwrap_err();
            assert!(matches!(e, Error::CacheCorrupt { .. }), "{e}");
        }
        fs::write(&p, good).unwrap();
        let mut other = key();
        other.cells = 16;
        assert!(matches!(
            read_record(&p, &other.canonical()),
            Err(Error::CacheCorrupt { .. })
        ));
    }

    #[test]
    fn computes_once_and_persists() {
        let dir = tempfile::tempdir().unwrap();
        let cache = ReferenceCache::at(dir.path()).unwrap();
        let calls = AtomicUsize::new(0);
        std::thread::scope(|s| {
            for _ in 0..8 {
                s.spawn(|| {
                    let r = cache
                        .get_or_compute(&key(), || {
                            calls.fetch_add(1, Ordering::SeqCst);
                            std::thread::sleep(std::time::Duration::from_millis(20));
                            Ok(sample())
                        })
                        .unwrap();
                    assert_eq!(*r, sample());
                });
            }
        });
        assert_eq!(calls.load(Ordering::SeqCst), 1);
        assert!(cache.path_for(&key()).unwrap().exists());

        let fresh = ReferenceCache::at(dir.path()).unwrap();
        let r = fresh
            .get_or_compute(&key(), || panic!("should be read from disk"))
            .unwrap();
        assert_eq!(*r, sample());
        let leftovers = fs::read_dir(dir.path())
            .unwrap()
            .filter(|e| e.as_ref().unwrap().file_name().to_string_lossy().contains("tmp"))
            .count();
        assert_eq!(leftovers, 0);
    }

    #[test]
    fn corrupt_file_aborts_lookup() {
        let dir = tempfile::tempdir().unwrap();
        let cache = ReferenceCache::at(dir.path()).unwrap();
        fs::write(cache.path_for(&key()).unwrap(), "garbage\n").unwrap();
        let e = cache.get_or_compute(&key(), || Ok(sample())).unwrap_err();
        assert!(matches!(e, Error::CacheCorrupt { .. }));
    }
}
