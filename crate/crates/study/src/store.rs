//! Event log and the in-memory indexes rebuilt from it.
//!
//! Every state change is one JSONL event. A write is fsynced before the
//! in-memory state changes, so anything acknowledged survives a restart.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use forge_core::eval_harness::{now_ms, Trial, TrialStatus};
use forge_core::jsonl::{self, JsonlError};
use forge_core::BenchmarkManifest;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub const HUMAN_PREFIX: &str = "human:";
pub const STUDY_PROMPT_VERSION: &str = "study-v1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Study,
    Vet,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Decision {
    Accept,
    Reject,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RejectReason {
    InpaintArtifact,
    Ambiguous,
    ObjectTooSmall,
    Other,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VetDecision {
    pub pair_id: String,
    pub decision: Decision,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reason: Option<RejectReason>,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub note: String,
    pub session_id: String,
    pub ts: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum Event {
    Session {
        session_id: String,
        participant_label: String,
        mode: Mode,
        ts: u64,
    },
    Served {
        session_id: String,
        pair_id: String,
        ts: u64,
    },
    Answer {
        session_id: String,
        trial: Trial,
    },
    /// A repeat submission; the first answer stands.
    DuplicateAnswer {
        session_id: String,
        pair_id: String,
        letter: char,
        ts: u64,
    },
    Vet(VetDecision),
}

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("unknown session")]
    UnknownSession,
    #[error("unknown pair {0}")]
    UnknownPair(String),
    #[error("pair {0} was not served to this session")]
    NotServed(String),
    #[error("letter {letter:?} is not one of the {num_labels} labels on pair {pair_id}")]
    InvalidLetter { pair_id: String, letter: String, num_labels: usize },
    #[error("this operation needs a {0:?} session")]
    WrongMode(Mode),
    #[error("pair {0} already has a decision from this session")]
    AlreadyDecided(String),
    #[error("participant label must be non-empty")]
    EmptyLabel,
    #[error(transparent)]
    Log(#[from] JsonlError),
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
}

#[derive(Debug, Clone)]
pub struct Session {
    pub session_id: String,
    pub participant_label: String,
    pub mode: Mode,
    pub created_ts: u64,
    pub served: BTreeMap<String, u64>,
    pub answered: BTreeSet<String>,
    pub decided: BTreeSet<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Next {
    Item(String),
    Exhausted,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnswerAck {
    pub ok: bool,
    pub duplicate: bool,
}

pub struct Store {
    manifest: BenchmarkManifest,
    log_path: PathBuf,
    file: File,
    seed: u64,
    sessions: HashMap<String, Session>,
    /// Times each pair has been served, per mode.
    coverage: HashMap<(Mode, String), u64>,
    trials: Vec<Trial>,
    vets: Vec<VetDecision>,
    duplicates: usize,
}

impl Store {
    /// Opens (or creates) the log and replays it.
    pub fn open(manifest: BenchmarkManifest, log_path: &Path, seed: u64) -> Result<Self, StoreError> {
        let events: Vec<Event> = jsonl::read_all(log_path)?;
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(log_path)
            .map_err(|source| StoreError::Io {
                path: log_path.display().to_string(),
                source,
            })?;
        let mut store = Self {
            manifest,
            log_path: log_path.to_path_buf(),
            file,
            seed,
            sessions: HashMap::new(),
            coverage: HashMap::new(),
            trials: Vec::new(),
            vets: Vec::new(),
            duplicates: 0,
        };
        for e in events {
            store.apply(e);
        }
        Ok(store)
    }

    pub fn manifest(&self) -> &BenchmarkManifest {
        &self.manifest
    }

    pub fn log_path(&self) -> &Path {
        &self.log_path
    }

    pub fn session(&self, token: &str) -> Result<&Session, StoreError> {
        self.sessions.get(token).ok_or(StoreError::UnknownSession)
    }

    pub fn trials(&self) -> &[Trial] {
        &self.trials
    }

    pub fn vets(&self) -> &[VetDecision] {
        &self.vets
    }

    pub fn duplicates(&self) -> usize {
        self.duplicates
    }

    pub fn session_count(&self) -> usize {
        self.sessions.len()
    }

    pub fn coverage(&self, mode: Mode, pair_id: &str) -> u64 {
        self.coverage.get(&(mode, pair_id.to_string())).copied().unwrap_or(0)
    }

    fn write(&mut self, e: &Event) -> Result<(), StoreError> {
        let mut line = serde_json::to_string(e).expect("event serializes");
        line.push('\n');
        let path = self.log_path.display().to_string();
        let io = |source| StoreError::Io { path: path.clone(), source };
        self.file.write_all(line.as_bytes()).map_err(io)?;
        self.file.sync_data().map_err(io)
    }

    fn commit(&mut self, e: Event) -> Result<(), StoreError> {
        self.write(&e)?;
        self.apply(e);
        Ok(())
    }

    fn apply(&mut self, e: Event) {
        match e {
            Event::Session {
                session_id,
                participant_label,
                mode,
                ts,
            } => {
                self.sessions.insert(
                    session_id.clone(),
                    Session {
                        session_id,
                        participant_label,
                        mode,
                        created_ts: ts,
                        served: BTreeMap::new(),
                        answered: BTreeSet::new(),
                        decided: BTreeSet::new(),
                    },
                );
            }
            Event::Served { session_id, pair_id, ts } => {
                if let Some(s) = self.sessions.get_mut(&session_id) {
                    *self.coverage.entry((s.mode, pair_id.clone())).or_default() += 1;
                    s.served.insert(pair_id, ts);
                }
            }
            Event::Answer { session_id, trial } => {
                if let Some(s) = self.sessions.get_mut(&session_id) {
                    s.answered.insert(trial.pair_id.clone());
                }
                self.trials.push(trial);
            }
            Event::DuplicateAnswer { .. } => self.duplicates += 1,
            Event::Vet(v) => {
                if let Some(s) = self.sessions.get_mut(&v.session_id) {
                    s.decided.insert(v.pair_id.clone());
                }
                self.vets.push(v);
            }
        }
    }

    pub fn create_session(&mut self, participant_label: &str, mode: Mode, token: String) -> Result<String, StoreError> {
        let label = participant_label.trim();
        if label.is_empty() {
            return Err(StoreError::EmptyLabel);
        }
        self.commit(Event::Session {
            session_id: token.clone(),
            participant_label: label.to_string(),
            mode,
            ts: now_ms(),
        })?;
        Ok(token)
    }

    /// Seeded per-session rank used to break coverage ties.
    fn tie_rank(&self, session_id: &str, pair_id: &str) -> u64 {
        let mut h = Sha256::new();
        h.update(self.seed.to_le_bytes());
        h.update(session_id.as_bytes());
        h.update([0]);
        h.update(pair_id.as_bytes());
        u64::from_le_bytes(h.finalize()[..8].try_into().expect("8 bytes"))
    }

    /// Least-served unserved item for this session, recorded as served.
    pub fn next_item(&mut self, token: &str) -> Result<Next, StoreError> {
        let s = self.session(token)?;
        let mode = s.mode;
        let pick = self
            .manifest
            .items
            .iter()
            .filter(|i| !s.served.contains_key(&i.pair_id))
            .min_by_key(|i| (self.coverage(mode, &i.pair_id), self.tie_rank(token, &i.pair_id)))
            .map(|i| i.pair_id.clone());
        let Some(pair_id) = pick else {
            return Ok(Next::Exhausted);
        };
        self.commit(Event::Served {
            session_id: token.to_string(),
            pair_id: pair_id.clone(),
            ts: now_ms(),
        })?;
        Ok(Next::Item(pair_id))
    }

    pub fn record_answer(&mut self, token: &str, pair_id: &str, letter: &str) -> Result<AnswerAck, StoreError> {
        let s = self.session(token)?;
        if s.mode != Mode::Study {
            return Err(StoreError::WrongMode(Mode::Study));
        }
        let item = self.manifest.item(pair_id).ok_or_else(|| StoreError::UnknownPair(pair_id.to_string()))?;
        let Some(&served_ts) = s.served.get(pair_id) else {
            return Err(StoreError::NotServed(pair_id.to_string()));
        };
        let valid = item.valid_letters();
        let parsed = match letter.trim().chars().collect::<Vec<_>>()[..] {
            [c] => Some(c.to_ascii_uppercase()).filter(|c| valid.contains(c)),
            _ => None,
        };
        let Some(c) = parsed else {
            return Err(StoreError::InvalidLetter {
                pair_id: pair_id.to_string(),
                letter: letter.to_string(),
                num_labels: item.num_labels,
            });
        };
        let now = now_ms();
        if s.answered.contains(pair_id) {
            self.commit(Event::DuplicateAnswer {
                session_id: token.to_string(),
                pair_id: pair_id.to_string(),
                letter: c,
                ts: now,
            })?;
            return Ok(AnswerAck { ok: true, duplicate: true });
        }
        let trial = Trial {
            pair_id: pair_id.to_string(),
            model: format!("{HUMAN_PREFIX}{}", s.participant_label),
            prompt_version: STUDY_PROMPT_VERSION.to_string(),
            raw_response: c.to_string(),
            parsed_letter: Some(c),
            correct: c == item.answer_letter,
            latency_ms: now.saturating_sub(served_ts),
            ts: now,
            status: TrialStatus::Ok,
            error: None,
        };
        self.commit(Event::Answer {
            session_id: token.to_string(),
            trial,
        })?;
        Ok(AnswerAck { ok: true, duplicate: false })
    }

    pub fn record_vet(
        &mut self,
        token: &str,
        pair_id: &str,
        decision: Decision,
        reason: Option<RejectReason>,
        note: &str,
    ) -> Result<(), StoreError> {
        let s = self.session(token)?;
        if s.mode != Mode::Vet {
            return Err(StoreError::WrongMode(Mode::Vet));
        }
        if self.manifest.item(pair_id).is_none() {
            return Err(StoreError::UnknownPair(pair_id.to_string()));
        }
        if s.decided.contains(pair_id) {
            return Err(StoreError::AlreadyDecided(pair_id.to_string()));
        }
        self.commit(Event::Vet(VetDecision {
            pair_id: pair_id.to_string(),
            decision,
            reason,
            note: note.trim().to_string(),
            session_id: token.to_string(),
            ts: now_ms(),
        }))
    }
}

/// Human trials from a study log, for `forge report` and friends.
pub fn read_trials(log_path: &Path) -> Result<Vec<Trial>, JsonlError> {
    Ok(jsonl::read_all::<Event>(log_path)?
        .into_iter()
        .filter_map(|e| match e {
            Event::Answer { trial, .. } => Some(trial),
            _ => None,
        })
        .collect())
}

pub fn read_vets(log_path: &Path) -> Result<Vec<VetDecision>, JsonlError> {
    Ok(jsonl::read_all::<Event>(log_path)?
        .into_iter()
        .filter_map(|e| match e {
            Event::Vet(v) => Some(v),
            _ => None,
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use forge_core::fixtures::manifest_n as test_manifest;

    fn open(dir: &Path, n: usize) -> Store {
        Store::open(test_manifest(n), &dir.join("events.jsonl"), 7).unwrap()
    }

    #[test]
    fn fresh_session_sees_each_item_once() {
        let dir = tempfile::tempdir().unwrap();
        let mut st = open(dir.path(), 3);
        let t = st.create_session("p1", Mode::Study, "tok".into()).unwrap();
        let mut seen = BTreeSet::new();
        for _ in 0..3 {
            match st.next_item(&t).unwrap() {
                Next::Item(id) => assert!(seen.insert(id)),
                Next::Exhausted => panic!("exhausted early"),
            }
        }
        assert_eq!(st.next_item(&t).unwrap(), Next::Exhausted);
    }

    #[test]
    fn answer_rules() {
        let dir = tempfile::tempdir().unwrap();
        let mut st = open(dir.path(), 2);
        let t = st.create_session("p1", Mode::Study, "tok".into()).unwrap();
        let Next::Item(id) = st.next_item(&t).unwrap() else { panic!() };
        let other = st.manifest().items.iter().find(|i| i.pair_id != id).unwrap().pair_id.clone();
        assert!(matches!(st.record_answer(&t, &other, "A"), Err(StoreError::NotServed(_))));
        assert!(matches!(st.record_answer(&t, &id, "Z"), Err(StoreError::InvalidLetter { .. })));
        assert!(matches!(st.record_answer("nope", &id, "A"), Err(StoreError::UnknownSession)));
        assert_eq!(st.record_answer(&t, &id, "b").unwrap(), AnswerAck { ok: true, duplicate: false });
        assert_eq!(st.record_answer(&t, &id, "C").unwrap(), AnswerAck { ok: true, duplicate: true });
        assert_eq!(st.trials().len(), 1);
        assert_eq!(st.trials()[0].parsed_letter, Some('B'));
        assert_eq!(st.trials()[0].model, "human:p1");
        assert_eq!(st.duplicates(), 1);
    }

    #[test]
    fn restart_replays_everything() {
        let dir = tempfile::tempdir().unwrap();
        let id;
        {
            let mut st = open(dir.path(), 3);
            st.create_session("p1", Mode::Study, "tok".into()).unwrap();
            let Next::Item(x) = st.next_item("tok").unwrap() else { panic!() };
            st.record_answer("tok", &x, "A").unwrap();
            st.create_session("v", Mode::Vet, "vt".into()).unwrap();
            st.record_vet("vt", &x, Decision::Reject, Some(RejectReason::Ambiguous), "hmm").unwrap();
            id = x;
        }
        let mut st = open(dir.path(), 3);
        assert_eq!(st.trials().len(), 1);
        assert_eq!(st.vets().len(), 1);
        assert_eq!(st.coverage(Mode::Study, &id), 1);
        assert!(matches!(st.record_vet("vt", &id, Decision::Accept, None, ""), Err(StoreError::AlreadyDecided(_))));
        for _ in 0..2 {
            assert_ne!(st.next_item("tok").unwrap(), Next::Item(id.clone()));
        }
        assert_eq!(read_trials(st.log_path()).unwrap().len(), 1);
    }

    #[test]
    fn mode_gating() {
        let dir = tempfile::tempdir().unwrap();
        let mut st = open(dir.path(), 1);
        st.create_session("s", Mode::Study, "s".into()).unwrap();
        st.create_session("v", Mode::Vet, "v".into()).unwrap();
        let id = st.manifest().items[0].pair_id.clone();
        assert!(matches!(st.record_vet("s", &id, Decision::Accept, None, ""), Err(StoreError::WrongMode(Mode::Vet))));
        st.next_item("v").unwrap();
        assert!(matches!(st.record_answer("v", &id, "A"), Err(StoreError::WrongMode(Mode::Study))));
        assert!(matches!(st.create_session(" ", Mode::Study, "x".into()), Err(StoreError::EmptyLabel)));
    }

    #[test]
    fn parallel_sessions_balance_coverage() {
        let dir = tempfile::tempdir().unwrap();
        let mut st = open(dir.path(), 500);
        let toks: Vec<String> = (0..2)
            .map(|k| st.create_session(&format!("p{k}"), Mode::Study, format!("t{k}")).unwrap())
            .collect();
        // 1000 draws alternating between the two sessions
        for d in 0..1000 {
            let t = &toks[d % toks.len()];
            let Next::Item(id) = st.next_item(t).unwrap() else { panic!() };
            st.record_answer(t, &id, "A").unwrap();
            let counts: Vec<u64> = st.manifest().items.iter().map(|i| st.coverage(Mode::Study, &i.pair_id)).collect();
            let (lo, hi) = (counts.iter().min().unwrap(), counts.iter().max().unwrap());
            assert!(hi - lo <= 1, "draw {d}: {lo}..{hi}");
        }
    }
}
