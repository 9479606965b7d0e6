use std::sync::Arc;
use std::thread;

use pathquant_store::{LocalStore, ObjectKey, ObjectStore, StoreError};

#[test]
fn readers_never_see_partial_writes() {
    let dir = tempfile::tempdir().unwrap();
    let store = Arc::new(LocalStore::open(dir.path()).unwrap());
    let key = ObjectKey::new("shared/object.bin").unwrap();
    // Every version is a run of one repeated byte, so a torn read is detectable.
    let versions: Vec<Vec<u8>> = (0u8..8).map(|v| vec![v; 64 * 1024 + usize::from(v)]).collect();
    store.put(&key, &versions[0], "application/octet-stream").unwrap();

    let writers: Vec<_> = (0..4)
        .map(|w| {
            let (store, key, versions) = (store.clone(), key.clone(), versions.clone());
            thread::spawn(move || {
                for i in 0..40 {
                    let v = &versions[(w * 3 + i) % versions.len()];
                    store.put(&key, v, "application/octet-stream").unwrap();
                }
            })
        })
        .collect();
    let readers: Vec<_> = (0..4)
        .map(|_| {
            let (store, key) = (store.clone(), key.clone());
            thread::spawn(move || {
                for _ in 0..200 {
                    let obj = store.get(&key).unwrap();
                    let first = obj.bytes[0];
                    assert_eq!(obj.bytes.len(), 64 * 1024 + usize::from(first));
                    assert!(obj.bytes.iter().all(|b| *b == first));
                    assert_eq!(obj.content_type, "application/octet-stream");
                }
            })
        })
        .collect();
    for h in writers.into_iter().chain(readers) {
        h.join().unwrap();
    }
}

#[test]
fn concurrent_put_and_delete_in_one_directory() {
    let dir = tempfile::tempdir().unwrap();
    let store = Arc::new(LocalStore::open(dir.path()).unwrap());
    let handles: Vec<_> = (0..8)
        .map(|t| {
            let store = store.clone();
            thread::spawn(move || {
                for i in 0..50 {
                    let key = ObjectKey::new(format!("dir/sub/{t}-{i}")).unwrap();
                    store.put(&key, b"x", "text/plain").unwrap();
                    store.delete(&key).unwrap();
                }
                let keep = ObjectKey::new(format!("dir/sub/keep-{t}")).unwrap();
                store.put(&keep, b"k", "text/plain").unwrap();
            })
        })
        .collect();
    for h in handles {
        h.join().unwrap();
    }
    let listed: Vec<String> = store.list("dir/").unwrap().into_iter().map(|k| k.to_string()).collect();
    let expected: Vec<String> = (0..8).map(|t| format!("dir/sub/keep-{t}")).collect();
    assert_eq!(listed, expected);
}

#[test]
fn paths_stay_under_root() {
    let dir = tempfile::tempdir().unwrap();
    let store = LocalStore::open(dir.path().join("nested")).unwrap();
    for bad in ["../x", "a/../../x", "/etc/passwd", "a/./b"] {
        assert!(matches!(ObjectKey::new(bad), Err(StoreError::KeyInvalid(_))), "{bad}");
    }
    store.put(&ObjectKey::new("a/b").unwrap(), b"1", "text/plain").unwrap();
    let outside: Vec<_> = std::fs::read_dir(dir.path()).unwrap().map(|e| e.unwrap().file_name()).collect();
    assert_eq!(outside, vec![std::ffi::OsString::from("nested")]);
}
