use std::collections::{BTreeMap, HashMap, HashSet};
use std::path::Path;

use ooc_core::evaluation::{average_ranks, MeanRanks, RankMatrix};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudySample {
    pub sample_id: String,
    pub caption: String,
    pub image_ref: String,
    /// Candidate explanation per method name.
    pub explanations: BTreeMap<String, String>,
}

/// The rank-study definition: method names and the samples to judge.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudySpec {
    pub methods: Vec<String>,
    pub samples: Vec<StudySample>,
}

impl StudySpec {
    pub fn load(path: impl AsRef<Path>) -> ooc_core::Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| ooc_core::Error::Config(format!("{}: {e}", path.display())))?;
        let spec: StudySpec = serde_json::from_str(&text)?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> ooc_core::Result<()> {
        let methods: HashSet<_> = self.methods.iter().collect();
        if methods.len() != self.methods.len() || methods.is_empty() {
            return Err(ooc_core::Error::Config("study methods must be non-empty and distinct".into()));
        }
        for s in &self.samples {
            if s.explanations.len() != methods.len() || !s.explanations.keys().all(|k| methods.contains(k)) {
                return Err(ooc_core::Error::Config(format!("sample {} must have one explanation per method", s.sample_id)));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Submission {
    pub judge_id: String,
    pub sample_id: String,
    pub ranks: BTreeMap<String, u32>,
}

#[derive(Debug, thiserror::Error)]
pub enum SubmitError {
    #[error("unknown sample {0:?}")]
    UnknownSample(String),
    #[error("judge {judge:?} already ranked sample {sample:?}")]
    Duplicate { judge: String, sample: String },
    #[error(transparent)]
    Invalid(#[from] ooc_core::Error),
}

pub struct RankStudy {
    pub spec: StudySpec,
    matrix: RankMatrix,
    seen: HashSet<(String, String)>,
    by_id: HashMap<String, usize>,
}

impl RankStudy {
    pub fn new(spec: StudySpec) -> Self {
        let by_id = spec.samples.iter().enumerate().map(|(i, s)| (s.sample_id.clone(), i)).collect();
        RankStudy { matrix: RankMatrix::new(spec.methods.clone()), spec, seen: HashSet::new(), by_id }
    }

    pub fn submit(&mut self, s: &Submission) -> Result<(), SubmitError> {
        if !self.by_id.contains_key(&s.sample_id) {
            return Err(SubmitError::UnknownSample(s.sample_id.clone()));
        }
        let key = (s.judge_id.clone(), s.sample_id.clone());
        if self.seen.contains(&key) {
            return Err(SubmitError::Duplicate { judge: key.0, sample: key.1 });
        }
        self.matrix.push_map(&s.judge_id, &s.sample_id, &s.ranks)?;
        self.seen.insert(key);
        Ok(())
    }

    pub fn report(&self) -> MeanRanks {
        average_ranks(&self.matrix).expect("only permutations are admitted")
    }

    pub fn submissions(&self) -> usize {
        self.matrix.rows.len()
    }
}
