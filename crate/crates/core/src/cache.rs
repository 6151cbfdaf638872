//! Append-only cache of generator answers and entailment verdicts.
//!
//! Records are JSON lines carrying a SHA-256 checksum. Each process appends to
//! its own segment file under the cache directory, so concurrent writers never
//! interleave bytes; a record torn by a crash fails its checksum and is read
//! back as a miss. Opening the cache loads every segment.
//!
//! [`CachedGenerator`] puts the cache in front of any [`Generator`]. Keys
//! include a hash of the rendered prompt and decoding parameters, so editing
//! a template invalidates old entries.

use std::collections::HashMap;
use std::fs::{self, File, OpenOptions};
use std::io::{self, BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::{Mutex, RwLock};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::backend::{
    prompt_hash, BackendError, EntailmentVerdict, Generator, GeneratorInput, PromptTemplates,
};
use crate::domain::Decoding;

const QUERY_ONLY_DOC: &str = "QUERY_ONLY";
const SEGMENT_EXT: &str = "jsonl";

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum CacheSlot {
    Sample(usize),
    /// Hash of the ordered (premise, hypothesis) pair.
    Judgment(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct CacheKey {
    pub model_name: String,
    pub input_kind: String,
    pub query_id: String,
    pub doc_id: String,
    pub prompt_hash: String,
    pub slot: CacheSlot,
}

impl CacheKey {
    pub fn sample(
        model_name: &str,
        input: &GeneratorInput<'_>,
        prompt_hash: String,
        sample_index: usize,
    ) -> Self {
        Self {
            model_name: model_name.to_string(),
            input_kind: input.kind().as_str().to_string(),
            query_id: input.query().query_id.clone(),
            doc_id: input
                .document()
                .map_or_else(|| QUERY_ONLY_DOC.to_string(), |d| d.doc_id.clone()),
            prompt_hash,
            slot: CacheSlot::Sample(sample_index),
        }
    }

    /// Judgments are keyed by content only; they are shared across inputs.
    pub fn judgment(
        model_name: &str,
        premise: &str,
        hypothesis: &str,
        prompt_hash: String,
    ) -> Self {
        let mut hasher = Sha256::new();
        hasher.update(premise.as_bytes());
        hasher.update([0u8]);
        hasher.update(hypothesis.as_bytes());
        Self {
            model_name: model_name.to_string(),
            input_kind: "judge".to_string(),
            query_id: "-".to_string(),
            doc_id: "-".to_string(),
            prompt_hash,
            slot: CacheSlot::Judgment(hex::encode(hasher.finalize())),
        }
    }

    pub fn canonical(&self) -> String {
        let slot = match &self.slot {
            CacheSlot::Sample(i) => format!("sample:{i}"),
            CacheSlot::Judgment(h) => format!("judge:{h}"),
        };
        [
            self.model_name.as_str(),
            &self.input_kind,
            &self.query_id,
            &self.doc_id,
            &self.prompt_hash,
            &slot,
        ]
        .map(escape)
        .join("\t")
    }
}

fn escape(field: &str) -> String {
    field.replace('\\', "\\\\").replace('\t', "\\t")
}

/// One persisted record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CacheEntry {
    pub key: String,
    pub payload: String,
    pub created_at: u64,
    pub checksum: String,
}

fn checksum(key: &str, payload: &str) -> String {
    let mut hasher = Sha256::new();
    hasher.update(key.as_bytes());
    hasher.update([0u8]);
    hasher.update(payload.as_bytes());
    hex::encode(hasher.finalize())
}

impl CacheEntry {
    fn new(key: String, payload: String) -> Self {
        let created_at = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map_or(0, |d| d.as_secs());
        let checksum = checksum(&key, &payload);
        Self {
            key,
            payload,
            created_at,
            checksum,
        }
    }

    fn is_intact(&self) -> bool {
        self.checksum == checksum(&self.key, &self.payload)
    }
}

pub struct ResponseCache {
    dir: PathBuf,
    entries: RwLock<HashMap<String, String>>,
    segment: Mutex<Option<File>>,
    corrupt: usize,
}

impl ResponseCache {
    pub fn open(dir: impl AsRef<Path>) -> io::Result<Self> {
        let dir = dir.as_ref().to_path_buf();
        fs::create_dir_all(&dir)?;
        let mut segments: Vec<PathBuf> = fs::read_dir(&dir)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|ext| ext == SEGMENT_EXT))
            .collect();
        segments.sort();

        let mut entries = HashMap::new();
        let mut corrupt = 0;
        for path in segments {
            for (line_no, line) in BufReader::new(File::open(&path)?).lines().enumerate() {
                let line = line?;
                if line.trim().is_empty() {
                    continue;
                }
                match serde_json::from_str::<CacheEntry>(&line) {
                    Ok(entry) if entry.is_intact() => {
                        entries.entry(entry.key).or_insert(entry.payload);
                    }
                    _ => {
                        corrupt += 1;
                        log::warn!(
                            "cache record {}:{} is corrupt; treating as a miss",
                            path.display(),
                            line_no + 1
                        );
                    }
                }
            }
        }
        Ok(Self {
            dir,
            entries: RwLock::new(entries),
            segment: Mutex::new(None),
            corrupt,
        })
    }

    pub fn get(&self, key: &CacheKey) -> Option<String> {
        self.entries
            .read()
            .expect("cache lock poisoned")
            .get(&key.canonical())
            .cloned()
    }

    /// Stores `payload` unless the key already exists; existing payloads are
    /// never replaced.
    pub fn put(&self, key: &CacheKey, payload: &str) -> io::Result<()> {
        let canonical = key.canonical();
        {
            let mut entries = self.entries.write().expect("cache lock poisoned");
            if entries.contains_key(&canonical) {
                return Ok(());
            }
            entries.insert(canonical.clone(), payload.to_string());
        }
        let mut line = serde_json::to_string(&CacheEntry::new(canonical, payload.to_string()))
            .map_err(io::Error::other)?;
        line.push('\n');

        let mut segment = self.segment.lock().expect("cache lock poisoned");
        if segment.is_none() {
            *segment = Some(self.create_segment()?);
        }
        let file = segment.as_mut().expect("segment just opened");
        // one write per record keeps each record whole
        file.write_all(line.as_bytes())?;
        file.flush()
    }

    fn create_segment(&self) -> io::Result<File> {
        let nanos = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map_or(0, |d| d.as_nanos());
        let name = format!("segment-{}-{nanos}.{SEGMENT_EXT}", std::process::id());
        OpenOptions::new()
            .create_new(true)
            .append(true)
            .open(self.dir.join(name))
    }

    pub fn len(&self) -> usize {
        self.entries.read().expect("cache lock poisoned").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Records skipped at open time because they failed to parse or verify.
    pub fn corrupt_records(&self) -> usize {
        self.corrupt
    }
}

/// Serves samples and judgments from a [`ResponseCache`], calling the inner
/// generator only on misses and writing its results back.
pub struct CachedGenerator<'c, G> {
    inner: G,
    cache: &'c ResponseCache,
    prompts: PromptTemplates,
}

impl<'c, G: Generator> CachedGenerator<'c, G> {
    pub fn new(inner: G, cache: &'c ResponseCache, prompts: PromptTemplates) -> Self {
        Self {
            inner,
            cache,
            prompts,
        }
    }

    pub fn inner(&self) -> &G {
        &self.inner
    }

    fn store(&self, key: &CacheKey, payload: &str) {
        if let Err(err) = self.cache.put(key, payload) {
            log::warn!("failed to persist cache entry: {err}");
        }
    }
}

impl<G: Generator> Generator for CachedGenerator<'_, G> {
    fn model_name(&self) -> &str {
        self.inner.model_name()
    }

    fn judge_model_name(&self) -> &str {
        self.inner.judge_model_name()
    }

    fn sample(
        &self,
        input: &GeneratorInput<'_>,
        k: usize,
        decoding: &Decoding,
    ) -> Result<Vec<String>, BackendError> {
        let hash = prompt_hash(&self.prompts.render_input(input), decoding);
        let keys: Vec<CacheKey> = (0..k)
            .map(|i| CacheKey::sample(self.inner.model_name(), input, hash.clone(), i))
            .collect();
        let cached: Vec<Option<String>> = keys.iter().map(|key| self.cache.get(key)).collect();
        if cached.iter().all(Option::is_some) {
            return Ok(cached.into_iter().flatten().collect());
        }
        let fresh = self.inner.sample(input, k, decoding)?;
        if fresh.len() != k {
            return Err(BackendError::WrongSampleCount {
                expected: k,
                got: fresh.len(),
            });
        }
        Ok(keys
            .iter()
            .zip(cached)
            .zip(fresh)
            .map(|((key, hit), answer)| match hit {
                Some(hit) => hit,
                None => {
                    self.store(key, &answer);
                    answer
                }
            })
            .collect())
    }

    fn judge(
        &self,
        premise: &str,
        hypothesis: &str,
        decoding: &Decoding,
    ) -> Result<EntailmentVerdict, BackendError> {
        let hash = prompt_hash(
            &self.prompts.render_entailment(premise, hypothesis),
            decoding,
        );
        let key = CacheKey::judgment(self.inner.judge_model_name(), premise, hypothesis, hash);
        match self.cache.get(&key).as_deref() {
            Some("entails") => return Ok(EntailmentVerdict::Entails),
            Some("not_entails") => return Ok(EntailmentVerdict::NotEntails),
            Some(other) => log::warn!("unexpected cached verdict `{other}`; re-judging"),
            None => {}
        }
        let verdict = self.inner.judge(premise, hypothesis, decoding)?;
        self.store(
            &key,
            match verdict {
                EntailmentVerdict::Entails => "entails",
                EntailmentVerdict::NotEntails => "not_entails",
            },
        );
        Ok(verdict)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::{CountingGenerator, InputKey, ScriptedBackend};
    use crate::domain::QueryRecord;

    fn key(i: usize) -> CacheKey {
        CacheKey {
            model_name: "m".into(),
            input_kind: "query_only".into(),
            query_id: "q".into(),
            doc_id: QUERY_ONLY_DOC.into(),
            prompt_hash: "h".into(),
            slot: CacheSlot::Sample(i),
        }
    }

    #[test]
    fn put_then_get() {
        let dir = tempfile::tempdir().unwrap();
        let cache = ResponseCache::open(dir.path()).unwrap();
        assert_eq!(cache.get(&key(0)), None);
        cache.put(&key(0), "paris").unwrap();
        assert_eq!(cache.get(&key(0)).as_deref(), Some("paris"));
        // payload is immutable once written
        cache.put(&key(0), "lyon").unwrap();
        assert_eq!(cache.get(&key(0)).as_deref(), Some("paris"));
    }

    #[test]
    fn persists_across_opens() {
        let dir = tempfile::tempdir().unwrap();
        ResponseCache::open(dir.path())
            .unwrap()
            .put(&key(1), "x")
            .unwrap();
        let reopened = ResponseCache::open(dir.path()).unwrap();
        assert_eq!(reopened.get(&key(1)).as_deref(), Some("x"));
    }

    #[test]
    fn separate_writers_for_distinct_keys() {
        let dir = tempfile::tempdir().unwrap();
        let a = ResponseCache::open(dir.path()).unwrap();
        let b = ResponseCache::open(dir.path()).unwrap();
        std::thread::scope(|s| {
            s.spawn(|| (0..50).for_each(|i| a.put(&key(i), &format!("a{i}")).unwrap()));
            s.spawn(|| (50..100).for_each(|i| b.put(&key(i), &format!("b{i}")).unwrap()));
        });
        let merged = ResponseCache::open(dir.path()).unwrap();
        assert_eq!(merged.len(), 100);
        assert_eq!(merged.get(&key(7)).as_deref(), Some("a7"));
        assert_eq!(merged.get(&key(77)).as_deref(), Some("b77"));
        assert_eq!(merged.corrupt_records(), 0);
    }

    #[test]
    fn corrupt_records_are_misses() {
        let dir = tempfile::tempdir().unwrap();
        let cache = ResponseCache::open(dir.path()).unwrap();
        cache.put(&key(0), "good").unwrap();
        cache.put(&key(1), "tampered").unwrap();
        drop(cache);
        let segment = fs::read_dir(dir.path())
            .unwrap()
            .next()
            .unwrap()
            .unwrap()
            .path();
        let text = fs::read_to_string(&segment).unwrap();
        let text = text.replace("\"tampered\"", "\"changed!\"");
        fs::write(&segment, format!("{text}{{\"key\": \"torn")).unwrap();

        let reopened = ResponseCache::open(dir.path()).unwrap();
        assert_eq!(reopened.get(&key(0)).as_deref(), Some("good"));
        assert_eq!(reopened.get(&key(1)), None);
        assert_eq!(reopened.corrupt_records(), 2);
    }

    #[test]
    fn key_fields_are_escaped() {
        let mut a = key(0);
        a.query_id = "q\t1".into();
        let mut b = key(0);
        b.query_id = "q".into();
        b.doc_id = format!("1\t{QUERY_ONLY_DOC}");
        assert_ne!(a.canonical(), b.canonical());
    }

    #[test]
    fn cached_generator_replays_without_backend_calls() {
        let dir = tempfile::tempdir().unwrap();
        let mut scripted = ScriptedBackend::default();
        scripted.insert_samples(InputKey::query("q"), ["a", "b", "a"]);
        let q = QueryRecord::new("q", "question").unwrap();
        let input = GeneratorInput::QueryOnly { query: &q };

        let cache = ResponseCache::open(dir.path()).unwrap();
        let counted = CountingGenerator::new(&scripted);
        let cold = CachedGenerator::new(&counted, &cache, PromptTemplates::default());
        let first = cold.sample(&input, 3, &Decoding::SAMPLING).unwrap();
        let verdict = cold.judge("a", "b", &Decoding::JUDGING).unwrap();
        assert_eq!(counted.sampled_answers(), 3);
        assert_eq!(counted.judge_calls(), 1);
        drop(cold);
        drop(cache);

        let cache = ResponseCache::open(dir.path()).unwrap();
        let counted = CountingGenerator::new(&scripted);
        let warm = CachedGenerator::new(&counted, &cache, PromptTemplates::default());
        assert_eq!(warm.sample(&input, 3, &Decoding::SAMPLING).unwrap(), first);
        assert_eq!(warm.judge("a", "b", &Decoding::JUDGING).unwrap(), verdict);
        assert_eq!(counted.sample_requests(), 0);
        assert_eq!(counted.judge_calls(), 0);

        // a different temperature is a different prompt hash
        let hotter = Decoding {
            temperature: 0.7,
            ..Decoding::SAMPLING
        };
        warm.sample(&input, 3, &hotter).unwrap();
        assert_eq!(counted.sample_requests(), 1);
    }
}
