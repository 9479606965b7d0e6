use std::fs;
use std::io::{ErrorKind, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;

use crate::{
    check_content_type, check_size, ObjectKey, ObjectStore, StoreError, StoredObject, DEFAULT_MAX_OBJECT_BYTES,
};

const OBJECTS_DIR: &str = "objects";
const TMP_DIR: &str = "tmp";

/// Objects live under `<root>/objects/<key>`. Each file holds the content
/// type, a newline, then the payload, so one rename publishes both.
#[derive(Debug)]
pub struct LocalStore {
    root: PathBuf,
    objects: PathBuf,
    tmp: PathBuf,
    max_object_bytes: u64,
    /// Held while creating or pruning directories, so a rename never lands
    /// in a directory that is being removed.
    dirs: Mutex<()>,
}

impl LocalStore {
    pub fn open(root: impl AsRef<Path>) -> Result<Self, StoreError> {
        Self::with_cap(root, DEFAULT_MAX_OBJECT_BYTES)
    }

    pub fn with_cap(root: impl AsRef<Path>, max_object_bytes: u64) -> Result<Self, StoreError> {
        fs::create_dir_all(root.as_ref())?;
        let root = fs::canonicalize(root.as_ref())?;
        let objects = root.join(OBJECTS_DIR);
        let tmp = root.join(TMP_DIR);
        fs::create_dir_all(&objects)?;
        fs::create_dir_all(&tmp)?;
        Ok(Self { root, objects, tmp, max_object_bytes, dirs: Mutex::new(()) })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn path_of(&self, key: &ObjectKey) -> Result<PathBuf, StoreError> {
        let mut path = self.objects.clone();
        path.extend(key.segments());
        // Segments are already restricted, but a symlinked directory could
        // still point outside the root.
        if let Some(parent) = path.parent() {
            match fs::canonicalize(parent) {
                Ok(real) if !real.starts_with(&self.objects) => {
                    return Err(StoreError::KeyInvalid(format!("{key} resolves outside the store root")))
                }
                Ok(_) => {}
                Err(e) if e.kind() == ErrorKind::NotFound => {}
                Err(e) => return Err(e.into()),
            }
        }
        Ok(path)
    }

    fn temp_path(&self) -> PathBuf {
        // Process-wide so two stores on the same root never collide.
        static COUNTER: AtomicU64 = AtomicU64::new(0);
        let n = COUNTER.fetch_add(1, Ordering::Relaxed);
        self.tmp.join(format!("{}-{n}", std::process::id()))
    }

    /// Removes now-empty directories between `path` and the objects root.
    fn prune(&self, mut path: &Path) {
        while let Some(parent) = path.parent() {
            if parent == self.objects || !parent.starts_with(&self.objects) {
                break;
            }
            if fs::remove_dir(parent).is_err() {
                break;
            }
            path = parent;
        }
    }
}

impl ObjectStore for LocalStore {
    fn put(&self, key: &ObjectKey, bytes: &[u8], content_type: &str) -> Result<(), StoreError> {
        check_content_type(content_type)?;
        check_size(bytes.len(), self.max_object_bytes)?;
        let dest = self.path_of(key)?;
        let tmp = self.temp_path();
        let written = (|| {
            let mut f = fs::File::create(&tmp)?;
            f.write_all(content_type.as_bytes())?;
            f.write_all(b"\n")?;
            f.write_all(bytes)?;
            f.sync_all()
        })();
        if let Err(e) = written {
            let _ = fs::remove_file(&tmp);
            return Err(e.into());
        }
        let _dirs = self.dirs.lock().unwrap_or_else(|e| e.into_inner());
        let published = dest.parent().map_or(Ok(()), fs::create_dir_all).and_then(|()| fs::rename(&tmp, &dest));
        match published {
            Ok(()) => Ok(()),
            Err(e) if e.kind() == ErrorKind::IsADirectory || e.kind() == ErrorKind::DirectoryNotEmpty => {
                let _ = fs::remove_file(&tmp);
                Err(StoreError::KeyInvalid(format!("{key} is a prefix of other keys")))
            }
            Err(e) => {
                let _ = fs::remove_file(&tmp);
                Err(e.into())
            }
        }
    }

    fn get(&self, key: &ObjectKey) -> Result<StoredObject, StoreError> {
        let path = self.path_of(key)?;
        let raw = match fs::read(&path) {
            Ok(raw) => raw,
            Err(e) if matches!(e.kind(), ErrorKind::NotFound | ErrorKind::NotADirectory | ErrorKind::IsADirectory) => {
                return Err(StoreError::NotFound(key.to_string()))
            }
            Err(e) => return Err(e.into()),
        };
        let split = raw
            .iter()
            .position(|b| *b == b'\n')
            .ok_or_else(|| StoreError::StorageUnavailable(format!("{key}: missing content-type header")))?;
        let content_type = String::from_utf8(raw[..split].to_vec())
            .map_err(|_| StoreError::StorageUnavailable(format!("{key}: content type is not UTF-8")))?;
        let bytes = raw[split + 1..].to_vec();
        Ok(StoredObject { key: key.clone(), bytes, content_type })
    }

    fn delete(&self, key: &ObjectKey) -> Result<(), StoreError> {
        let path = self.path_of(key)?;
        match fs::remove_file(&path) {
            Ok(()) => {
                let _dirs = self.dirs.lock().unwrap_or_else(|e| e.into_inner());
                self.prune(&path);
                Ok(())
            }
            Err(e) if matches!(e.kind(), ErrorKind::NotFound | ErrorKind::NotADirectory) => Ok(()),
            Err(e) => Err(e.into()),
        }
    }

    fn list(&self, prefix: &str) -> Result<Vec<ObjectKey>, StoreError> {
        let mut out = Vec::new();
        let mut stack = vec![(self.objects.clone(), String::new())];
        while let Some((dir, rel)) = stack.pop() {
            let entries = match fs::read_dir(&dir) {
                Ok(entries) => entries,
                // Pruned by a concurrent delete.
                Err(e) if e.kind() == ErrorKind::NotFound => continue,
                Err(e) => return Err(e.into()),
            };
            for entry in entries {
                let entry = entry?;
                let Some(name) = entry.file_name().to_str().map(str::to_owned) else { continue };
                let key = if rel.is_empty() { name } else { format!("{rel}/{name}") };
                // Skip subtrees that cannot contain a match.
                if !(key.starts_with(prefix) || prefix.starts_with(&key)) {
                    continue;
                }
                let ft = entry.file_type()?;
                if ft.is_dir() {
                    stack.push((entry.path(), key));
                } else if ft.is_file() && key.starts_with(prefix) {
                    if let Ok(k) = ObjectKey::new(key) {
                        out.push(k);
                    }
                }
            }
        }
        out.sort();
        Ok(out)
    }
}
