//! Sequence metadata and the on-disk key grammar
//! `<subject>/<COND>-<trial:02>/<view:03>/<modality>`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::Modality;

/// Number of legal camera views, spaced 36 degrees apart.
pub const NUM_VIEWS: usize = 10;
pub const VIEW_STEP_DEG: u16 = 36;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Condition {
    /// Normal walking.
    #[serde(rename = "NM")]
    Nm,
    /// Carrying a bag.
    #[serde(rename = "BG")]
    Bg,
    /// Changed clothing.
    #[serde(rename = "CL")]
    Cl,
}

impl Condition {
    pub const ALL: [Condition; 3] = [Condition::Nm, Condition::Bg, Condition::Cl];

    pub fn code(self) -> &'static str {
        match self {
            Condition::Nm => "NM",
            Condition::Bg => "BG",
            Condition::Cl => "CL",
        }
    }

    pub fn from_code(code: &str) -> Option<Condition> {
        Condition::ALL.into_iter().find(|c| c.code() == code)
    }

    /// Trials recorded under this condition.
    pub fn trials(self) -> &'static [u8] {
        match self {
            Condition::Nm => &[1, 2],
            Condition::Bg | Condition::Cl => &[1],
        }
    }
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

/// The four (condition, trial) recordings of one subject at one view.
pub const RECORDINGS: [(Condition, u8); 4] = [
    (Condition::Nm, 1),
    (Condition::Nm, 2),
    (Condition::Bg, 1),
    (Condition::Cl, 1),
];

pub fn is_valid_view(view_deg: u16) -> bool {
    view_deg % VIEW_STEP_DEG == 0 && view_deg < 360
}

pub fn all_views() -> Vec<u16> {
    (0..NUM_VIEWS as u16).map(|i| i * VIEW_STEP_DEG).collect()
}

/// Index of a legal view in `0..NUM_VIEWS`.
pub fn view_index(view_deg: u16) -> usize {
    (view_deg / VIEW_STEP_DEG) as usize
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum KeyError {
    #[error("malformed sequence key `{0}`: expected <subject>/<COND>-<trial>/<view>/<modality>")]
    MalformedKey(String),
    #[error("invalid condition `{0}`")]
    InvalidCondition(String),
    #[error("invalid view `{0}`: must be a multiple of 36 below 360")]
    InvalidView(String),
    #[error("invalid trial {trial} for condition {condition}")]
    InvalidTrial { condition: Condition, trial: String },
    #[error("unknown modality `{0}`")]
    UnknownModality(String),
}

/// Identity, view, condition, trial and modality labels of one sequence.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SequenceMeta {
    pub subject_id: String,
    pub view_deg: u16,
    pub condition: Condition,
    pub trial: u8,
    pub modality: Modality,
}

impl SequenceMeta {
    pub fn new(
        subject_id: impl Into<String>,
        view_deg: u16,
        condition: Condition,
        trial: u8,
        modality: Modality,
    ) -> Result<Self, KeyError> {
        let subject_id = subject_id.into();
        if !is_valid_subject(&subject_id) {
            return Err(KeyError::MalformedKey(subject_id));
        }
        if !is_valid_view(view_deg) {
            return Err(KeyError::InvalidView(view_deg.to_string()));
        }
        if !condition.trials().contains(&trial) {
            return Err(KeyError::InvalidTrial {
                condition,
                trial: trial.to_string(),
            });
        }
        Ok(SequenceMeta {
            subject_id,
            view_deg,
            condition,
            trial,
            modality,
        })
    }

    pub fn key(&self) -> String {
        format!(
            "{}/{}-{:02}/{:03}/{}",
            self.subject_id,
            self.condition.code(),
            self.trial,
            self.view_deg,
            self.modality.tag()
        )
    }

    /// Same recording in another modality.
    pub fn with_modality(&self, modality: Modality) -> SequenceMeta {
        SequenceMeta {
            modality,
            ..self.clone()
        }
    }

    /// Key without the modality component, shared by aligned sequences.
    pub fn recording_key(&self) -> String {
        format!(
            "{}/{}-{:02}/{:03}",
            self.subject_id,
            self.condition.code(),
            self.trial,
            self.view_deg
        )
    }
}

fn is_valid_subject(s: &str) -> bool {
    !s.is_empty()
        && s.chars()
            .all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '.')
        && s != "."
        && s != ".."
}

pub fn parse_sequence_key(key: &str) -> Result<SequenceMeta, KeyError> {
    let fields: Vec<&str> = key.split('/').collect();
    let [subject, cond_trial, view, modality] = fields[..] else {
        return Err(KeyError::MalformedKey(key.to_string()));
    };
    if !is_valid_subject(subject) {
        return Err(KeyError::MalformedKey(key.to_string()));
    }
    let (cond, trial) = cond_trial
        .split_once('-')
        .ok_or_else(|| KeyError::MalformedKey(key.to_string()))?;
    let condition =
        Condition::from_code(cond).ok_or_else(|| KeyError::InvalidCondition(cond.to_string()))?;

    if view.len() != 3 || !view.bytes().all(|b| b.is_ascii_digit()) {
        return Err(KeyError::InvalidView(view.to_string()));
    }
    let view_deg: u16 = view
        .parse()
        .map_err(|_| KeyError::InvalidView(view.to_string()))?;
    if !is_valid_view(view_deg) {
        return Err(KeyError::InvalidView(view.to_string()));
    }

    let bad_trial = || KeyError::InvalidTrial {
        condition,
        trial: trial.to_string(),
    };
    if trial.len() != 2 || !trial.bytes().all(|b| b.is_ascii_digit()) {
        return Err(bad_trial());
    }
    let trial_no: u8 = trial.parse().map_err(|_| bad_trial())?;
    if !condition.trials().contains(&trial_no) {
        return Err(bad_trial());
    }

    let modality =
        Modality::from_tag(modality).ok_or_else(|| KeyError::UnknownModality(modality.to_string()))?;

    Ok(SequenceMeta {
        subject_id: subject.to_string(),
        view_deg,
        condition,
        trial: trial_no,
        modality,
    })
}

impl FromStr for SequenceMeta {
    type Err = KeyError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        parse_sequence_key(s)
    }
}

impl fmt::Display for SequenceMeta {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.key())
    }
}
