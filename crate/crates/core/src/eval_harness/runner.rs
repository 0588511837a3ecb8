//! Drives a responder over a manifest with bounded concurrency. Workers hand
//! finished trials to the calling thread, which is the only log writer.

use std::collections::BTreeSet;
use std::fs::OpenOptions;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::mpsc;
use std::time::Instant;

use thiserror::Error;

use super::client::QueryError;
use super::prompt::{build_prompt, Prompt, PROMPT_VERSION};
use super::Trial;
use crate::benchmark_build::{BenchmarkItem, BenchmarkManifest};
use crate::jsonl::{self, JsonlError};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error(transparent)]
    Log(#[from] JsonlError),
    #[error("trial log {path}: {source}")]
    Io { path: String, source: std::io::Error },
}

/// Produces the raw answer text for one item.
pub trait Responder: Send + Sync {
    fn name(&self) -> &str;
    fn respond(&self, item: &BenchmarkItem, prompt: &Prompt) -> Result<String, QueryError>;
}

#[derive(Debug, Clone)]
pub struct RunOptions {
    pub concurrency: usize,
    /// Directory the manifest's image paths are relative to.
    pub root: PathBuf,
    pub log: Option<PathBuf>,
    /// Skip items that already have a non-transport-failure trial for this
    /// model and prompt version in the log.
    pub resume: bool,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self {
            concurrency: 1,
            root: PathBuf::from("."),
            log: None,
            resume: false,
        }
    }
}

fn done_ids(log: &Path, model: &str) -> Result<BTreeSet<String>, JsonlError> {
    Ok(jsonl::read_all::<Trial>(log)?
        .into_iter()
        .filter(|t| t.model == model && t.prompt_version == PROMPT_VERSION && t.status != super::TrialStatus::TransportFailure)
        .map(|t| t.pair_id)
        .collect())
}

/// Evaluates every pending item; returns the new trials ordered by `pair_id`.
pub fn run_eval(manifest: &BenchmarkManifest, responder: &dyn Responder, opts: &RunOptions) -> Result<Vec<Trial>, EvalError> {
    let model = responder.name().to_string();
    let skip = match (&opts.log, opts.resume) {
        (Some(log), true) => done_ids(log, &model)?,
        _ => BTreeSet::new(),
    };
    let pending: Vec<&BenchmarkItem> = manifest.items.iter().filter(|i| !skip.contains(&i.pair_id)).collect();

    let mut writer = match &opts.log {
        Some(path) => Some((
            path,
            OpenOptions::new()
                .create(true)
                .append(true)
                .open(path)
                .map_err(|source| EvalError::Io {
                    path: path.display().to_string(),
                    source,
                })?,
        )),
        None => None,
    };

    let next = AtomicUsize::new(0);
    let (tx, rx) = mpsc::channel::<Trial>();
    let mut trials = Vec::with_capacity(pending.len());
    let workers = opts.concurrency.max(1).min(pending.len().max(1));

    let write_result = std::thread::scope(|s| {
        for _ in 0..workers {
            let tx = tx.clone();
            let (next, pending, model) = (&next, &pending, &model);
            s.spawn(move || loop {
                let k = next.fetch_add(1, Ordering::Relaxed);
                let Some(item) = pending.get(k) else { break };
                let prompt = build_prompt(item, &opts.root);
                let start = Instant::now();
                let res = responder.respond(item, &prompt);
                let ms = start.elapsed().as_millis() as u64;
                let trial = match res {
                    Ok(raw) => Trial::from_response(&item.pair_id, model, &raw, &prompt.valid, item.answer_letter, ms),
                    Err(e) => Trial::transport_failure(&item.pair_id, model, &e, ms),
                };
                if tx.send(trial).is_err() {
                    break;
                }
            });
        }
        drop(tx);
        for trial in rx {
            if let Some((path, file)) = writer.as_mut() {
                let mut line = serde_json::to_string(&trial).expect("trial serializes");
                line.push('\n');
                file.write_all(line.as_bytes()).map_err(|source| EvalError::Io {
                    path: path.display().to_string(),
                    source,
                })?;
            }
            trials.push(trial);
        }
        Ok::<(), EvalError>(())
    });
    write_result?;
    if let Some((path, file)) = writer {
        file.sync_all().map_err(|source| EvalError::Io {
            path: path.display().to_string(),
            source,
        })?;
    }
    trials.sort_by(|a, b| a.pair_id.cmp(&b.pair_id));
    Ok(trials)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval_harness::responders::{AlwaysLetter, KeyReader};
    use crate::eval_harness::TrialStatus;
    use crate::fixtures::manifest_of;
    use std::sync::atomic::AtomicUsize;

    struct Flaky {
        calls: AtomicUsize,
    }

    impl Responder for Flaky {
        fn name(&self) -> &str {
            "flaky"
        }
        fn respond(&self, item: &BenchmarkItem, _: &Prompt) -> Result<String, QueryError> {
            let n = self.calls.fetch_add(1, Ordering::SeqCst);
            if n % 2 == 0 {
                Err(QueryError::Status {
                    endpoint: "flaky".into(),
                    status: 500,
                    attempts: 3,
                })
            } else {
                Ok(format!("Answer: {}", item.answer_letter))
            }
        }
    }

    #[test]
    fn key_reader_is_perfect_and_ordered() {
        let m = manifest_of(&[('B', 5), ('A', 7), ('C', 3)]);
        let trials = run_eval(
            &m,
            &KeyReader::from_manifest("oracle", &m),
            &RunOptions {
                concurrency: 3,
                ..Default::default()
            },
        )
        .unwrap();
        assert_eq!(trials.len(), 3);
        assert!(trials.iter().all(|t| t.correct));
        assert!(trials.windows(2).all(|w| w[0].pair_id < w[1].pair_id));
    }

    #[test]
    fn log_and_resume() {
        let dir = tempfile::tempdir().unwrap();
        let log = dir.path().join("trials.jsonl");
        let m = manifest_of(&[('B', 5), ('A', 7), ('C', 3), ('A', 4)]);
        let opts = RunOptions {
            concurrency: 1,
            log: Some(log.clone()),
            resume: true,
            ..Default::default()
        };
        let flaky = Flaky {
            calls: AtomicUsize::new(0),
        };
        let first = run_eval(&m, &flaky, &opts).unwrap();
        let failures = first.iter().filter(|t| t.status == TrialStatus::TransportFailure).count();
        assert_eq!(failures, 2);
        assert!(first.iter().filter(|t| t.status == TrialStatus::TransportFailure).all(|t| !t.correct));

        // only the transport failures are retried
        let second = run_eval(&m, &flaky, &opts).unwrap();
        assert_eq!(second.len(), 2);
        assert_eq!(jsonl::read_all::<Trial>(&log).unwrap().len(), 6);

        let other = run_eval(&m, &AlwaysLetter::new('A'), &opts).unwrap();
        assert_eq!(other.len(), 4);
    }
}
