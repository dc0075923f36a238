//! Content-addressed response store.
//!
//! Layout: `<dir>/<first two hex chars of key>/<key>.json`, one file per
//! distinct request, holding the request and its responses in the order
//! they were first served. Response `n` answers the `n`-th identical
//! request of a run.

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};

use super::{Backend, BackendCall, BackendError, CompletionResponse, GatewayError};
use crate::prompting::Message;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReplayRequest {
    pub model: String,
    pub temperature: f64,
    pub top_p: f64,
    pub messages: Vec<Message>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReplayEntry {
    pub key: String,
    pub request: ReplayRequest,
    pub responses: Vec<CompletionResponse>,
}

pub struct ReplayStore {
    dir: PathBuf,
    cache: Mutex<HashMap<String, Option<Arc<ReplayEntry>>>>,
}

fn store_err(path: &Path, e: impl std::fmt::Display) -> GatewayError {
    GatewayError::Store {
        path: path.display().to_string(),
        message: e.to_string(),
    }
}

impl ReplayStore {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Self {
            dir: dir.into(),
            cache: Mutex::new(HashMap::new()),
        }
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn path_for(&self, key: &str) -> PathBuf {
        self.dir.join(&key[..2.min(key.len())]).join(format!("{key}.json"))
    }

    pub fn get(&self, key: &str) -> Result<Option<Arc<ReplayEntry>>, GatewayError> {
        let mut cache = self.cache.lock().expect("replay cache");
        if let Some(hit) = cache.get(key) {
            return Ok(hit.clone());
        }
        let path = self.path_for(key);
        let entry = match std::fs::read_to_string(&path) {
            Ok(text) => Some(Arc::new(
                serde_json::from_str::<ReplayEntry>(&text).map_err(|e| store_err(&path, e))?,
            )),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => None,
            Err(e) => return Err(store_err(&path, e)),
        };
        cache.insert(key.to_string(), entry.clone());
        Ok(entry)
    }

    pub fn put(&self, entry: ReplayEntry) -> Result<(), GatewayError> {
        let path = self.path_for(&entry.key);
        let text = serde_json::to_string_pretty(&entry).expect("serializable") + "\n";
        crate::pipeline::write_atomic(&path, text.as_bytes()).map_err(|e| store_err(&path, e))?;
        self.cache
            .lock()
            .expect("replay cache")
            .insert(entry.key.clone(), Some(Arc::new(entry)));
        Ok(())
    }

    fn lookup(&self, call: &BackendCall<'_>) -> Result<Option<CompletionResponse>, GatewayError> {
        Ok(self
            .get(call.key)?
            .and_then(|e| e.responses.get(call.ordinal).cloned()))
    }
}

/// Serves stored responses only.
pub struct ReplayBackend {
    store: ReplayStore,
}

impl ReplayBackend {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Self {
            store: ReplayStore::new(dir),
        }
    }
}

impl Backend for ReplayBackend {
    fn send(&self, call: &BackendCall<'_>) -> Result<CompletionResponse, BackendError> {
        match self.store.lookup(call) {
            Ok(Some(resp)) => Ok(resp),
            Ok(None) => Err(BackendError::Fatal(GatewayError::ReplayMiss {
                key: call.key.to_string(),
                ordinal: call.ordinal,
            })),
            Err(e) => Err(BackendError::Fatal(e)),
        }
    }
}

type Pending = BTreeMap<String, (ReplayRequest, BTreeMap<usize, CompletionResponse>)>;

/// Serves stored responses when present; otherwise asks `inner` and
/// records the answer on [`Backend::flush`].
pub struct Recorder {
    store: ReplayStore,
    inner: Box<dyn Backend>,
    pending: Mutex<Pending>,
}

impl Recorder {
    pub fn new(dir: impl Into<PathBuf>, inner: Box<dyn Backend>) -> Self {
        Self {
            store: ReplayStore::new(dir),
            inner,
            pending: Mutex::new(BTreeMap::new()),
        }
    }
}

impl Backend for Recorder {
    fn send(&self, call: &BackendCall<'_>) -> Result<CompletionResponse, BackendError> {
        if let Some(resp) = self.store.lookup(call).map_err(BackendError::Fatal)? {
            return Ok(resp);
        }
        let resp = self.inner.send(call)?;
        let req = call.request;
        self.pending
            .lock()
            .expect("recorder")
            .entry(call.key.to_string())
            .or_insert_with(|| {
                (
                    ReplayRequest {
                        model: req.model_id.clone(),
                        temperature: req.temperature,
                        top_p: req.top_p,
                        messages: req.bundle.messages.clone(),
                    },
                    BTreeMap::new(),
                )
            })
            .1
            .insert(call.ordinal, resp.clone());
        Ok(resp)
    }

    fn flush(&self) -> Result<(), GatewayError> {
        let pending = std::mem::take(&mut *self.pending.lock().expect("recorder"));
        for (key, (request, by_ordinal)) in pending {
            let mut responses = self
                .store
                .get(&key)?
                .map(|e| e.responses.clone())
                .unwrap_or_default();
            for (ordinal, resp) in by_ordinal {
                if ordinal == responses.len() {
                    responses.push(resp);
                } else if ordinal > responses.len() {
                    log::warn!("not recording response #{ordinal} for {key}: earlier responses missing");
                }
            }
            self.store.put(ReplayEntry {
                key,
                request,
                responses,
            })?;
        }
        self.inner.flush()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::testing::{request, ScriptedBackend};
    use crate::gateway::{Gateway, PriceTable};

    #[test]
    fn record_then_replay_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        let live = ScriptedBackend::new(0, |c| format!("answer {} to {}", c.ordinal, c.request.bundle.messages[0].content));
        {
            let gw = Gateway::new(Recorder::new(dir.path(), Box::new(live)), PriceTable::default());
            let out: Vec<_> = gw
                .complete_all(vec![request("a"), request("a"), request("b")])
                .into_iter()
                .map(|r| r.unwrap().text)
                .collect();
            assert_eq!(out, ["answer 0 to a", "answer 1 to a", "answer 0 to b"]);
        }
        let key = request("a").replay_key();
        let path = ReplayStore::new(dir.path()).path_for(&key);
        assert!(path.starts_with(dir.path().join(&key[..2])));
        let before = std::fs::read(&path).unwrap();

        let gw = Gateway::new(ReplayBackend::new(dir.path()), PriceTable::default());
        assert_eq!(gw.complete(request("a")).unwrap().text, "answer 0 to a");
        assert_eq!(gw.complete(request("a")).unwrap().text, "answer 1 to a");
        match gw.complete(request("a")) {
            Err(GatewayError::ReplayMiss { key: k, ordinal: 2 }) => assert_eq!(k, key),
            other => panic!("expected miss, got {other:?}"),
        }
        drop(gw);
        assert_eq!(std::fs::read(&path).unwrap(), before);
    }

    #[test]
    fn miss_names_hash() {
        let dir = tempfile::tempdir().unwrap();
        let gw = Gateway::new(ReplayBackend::new(dir.path()), PriceTable::default());
        let err = gw.complete(request("never")).unwrap_err();
        assert!(err.to_string().contains(&request("never").replay_key()));
    }
}
