use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::EvalError;
use crate::dataset::{parse_sequence_key, Condition, Manifest, Modality, SequenceMeta};

/// Enrolled recordings.
pub const GALLERY_TRIALS: [(Condition, u8); 1] = [(Condition::Nm, 1)];
/// Query recordings, one per condition.
pub const PROBE_TRIALS: [(Condition, u8); 3] = [(Condition::Nm, 2), (Condition::Bg, 1), (Condition::Cl, 1)];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Mode {
    Single,
    Cross,
    Multi,
}

/// What one embedding is computed from: one modality, or two fused.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Route {
    Single(Modality),
    Pair(Modality, Modality),
}

impl Route {
    pub fn modalities(self) -> Vec<Modality> {
        match self {
            Route::Single(m) => vec![m],
            Route::Pair(a, b) => vec![a, b],
        }
    }

    fn validate(self) -> Result<(), EvalError> {
        for m in self.modalities() {
            if !m.is_image() {
                return Err(EvalError::InvalidSpec(format!("{m} is not an image modality")));
            }
        }
        match self {
            Route::Pair(a, b) if a == b => Err(EvalError::SameModality(a)),
            _ => Ok(()),
        }
    }
}

impl fmt::Display for Route {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Route::Single(m) => write!(f, "{m}"),
            Route::Pair(a, b) => write!(f, "{a}+{b}"),
        }
    }
}

impl FromStr for Route {
    type Err = EvalError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let parse = |t: &str| Modality::from_tag(t).ok_or_else(|| EvalError::InvalidSpec(format!("unknown modality `{t}`")));
        match s.split_once('+') {
            Some((a, b)) => Ok(Route::Pair(parse(a)?, parse(b)?)),
            None => Ok(Route::Single(parse(s)?)),
        }
    }
}

/// Gallery and probe routes of one evaluation. Gallery trials are
/// [`GALLERY_TRIALS`], probe trials [`PROBE_TRIALS`] in every mode.
///
/// The text form is `single:<m>`, `cross:<probe>-><gallery>` or
/// `multi:<a>+<b>`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct ProtocolSpec {
    mode: Mode,
    gallery: Route,
    probe: Route,
}

impl ProtocolSpec {
    pub fn single(m: Modality) -> Result<Self, EvalError> {
        Route::Single(m).validate()?;
        Ok(ProtocolSpec {
            mode: Mode::Single,
            gallery: Route::Single(m),
            probe: Route::Single(m),
        })
    }

    pub fn cross(probe: Modality, gallery: Modality) -> Result<Self, EvalError> {
        if probe == gallery {
            return Err(EvalError::SameModality(probe));
        }
        Route::Single(probe).validate()?;
        Route::Single(gallery).validate()?;
        Ok(ProtocolSpec {
            mode: Mode::Cross,
            gallery: Route::Single(gallery),
            probe: Route::Single(probe),
        })
    }

    /// Both sides use the fusion of `a` with `b`.
    pub fn multi(a: Modality, b: Modality) -> Result<Self, EvalError> {
        let r = Route::Pair(a, b);
        r.validate()?;
        Ok(ProtocolSpec {
            mode: Mode::Multi,
            gallery: r,
            probe: r,
        })
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn gallery(&self) -> Route {
        self.gallery
    }

    pub fn probe(&self) -> Route {
        self.probe
    }

    /// Every modality the evaluation reads.
    pub fn modalities(&self) -> Vec<Modality> {
        let set: BTreeSet<Modality> = self.gallery.modalities().into_iter().chain(self.probe.modalities()).collect();
        set.into_iter().collect()
    }
}

impl fmt::Display for ProtocolSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.mode {
            Mode::Single => write!(f, "single:{}", self.gallery),
            Mode::Cross => write!(f, "cross:{}->{}", self.probe, self.gallery),
            Mode::Multi => write!(f, "multi:{}", self.gallery),
        }
    }
}

impl FromStr for ProtocolSpec {
    type Err = EvalError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || EvalError::InvalidSpec(format!("`{s}` is not single:<m>, cross:<probe>-><gallery> or multi:<a>+<b>"));
        let (mode, rest) = s.split_once(':').ok_or_else(bad)?;
        let single = |t: &str| match t.parse::<Route>()? {
            Route::Single(m) => Ok(m),
            Route::Pair(..) => Err(bad()),
        };
        match mode {
            "single" => ProtocolSpec::single(single(rest)?),
            "cross" => {
                let (p, g) = rest.split_once("->").ok_or_else(bad)?;
                ProtocolSpec::cross(single(p)?, single(g)?)
            }
            "multi" => match rest.parse::<Route>()? {
                Route::Pair(a, b) => ProtocolSpec::multi(a, b),
                Route::Single(_) => Err(bad()),
            },
            _ => Err(bad()),
        }
    }
}

impl TryFrom<String> for ProtocolSpec {
    type Error = EvalError;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

impl From<ProtocolSpec> for String {
    fn from(s: ProtocolSpec) -> String {
        s.to_string()
    }
}

/// One gallery or probe item: a recording seen through a route.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct EvalUnit {
    pub subject_id: String,
    pub view_deg: u16,
    pub condition: Condition,
    pub trial: u8,
    pub route: Route,
}

impl EvalUnit {
    fn of(meta: &SequenceMeta, route: Route) -> Self {
        EvalUnit {
            subject_id: meta.subject_id.clone(),
            view_deg: meta.view_deg,
            condition: meta.condition,
            trial: meta.trial,
            route,
        }
    }

    /// Stored sequences the unit reads, in route order.
    pub fn sources(&self) -> Vec<SequenceMeta> {
        self.route
            .modalities()
            .into_iter()
            .map(|modality| SequenceMeta {
                subject_id: self.subject_id.clone(),
                view_deg: self.view_deg,
                condition: self.condition,
                trial: self.trial,
                modality,
            })
            .collect()
    }

    /// The sequence key with the route in place of the modality.
    pub fn key(&self) -> String {
        format!(
            "{}/{}-{:02}/{:03}/{}",
            self.subject_id,
            self.condition.code(),
            self.trial,
            self.view_deg,
            self.route
        )
    }

    pub fn parse_key(key: &str) -> Result<Self, EvalError> {
        let (head, route) = key
            .rsplit_once('/')
            .ok_or_else(|| EvalError::Format(format!("bad unit key `{key}`")))?;
        let route: Route = route.parse()?;
        let first = route.modalities()[0];
        let meta = parse_sequence_key(&format!("{head}/{first}")).map_err(|e| EvalError::Format(format!("bad unit key `{key}`: {e}")))?;
        Ok(EvalUnit::of(&meta, route))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Protocol {
    pub spec: ProtocolSpec,
    pub gallery: Vec<EvalUnit>,
    pub probes: Vec<EvalUnit>,
    /// Pair units dropped because one of the two sequences is missing.
    pub skipped_unpaired: usize,
}

/// Gallery and probe units of a test-split manifest.
pub fn build_protocol(manifest: &Manifest, spec: &ProtocolSpec) -> Result<Protocol, EvalError> {
    let mut recordings = BTreeSet::new();
    for e in manifest.entries() {
        let m = &e.meta;
        recordings.insert((m.subject_id.clone(), m.condition, m.trial, m.view_deg, m.clone()));
    }
    let mut seen = BTreeSet::new();
    let mut out = Protocol {
        spec: *spec,
        gallery: Vec::new(),
        probes: Vec::new(),
        skipped_unpaired: 0,
    };
    for (.., meta) in recordings {
        let id = (meta.subject_id.clone(), meta.condition, meta.trial, meta.view_deg);
        if !seen.insert(id) {
            continue;
        }
        let ct = (meta.condition, meta.trial);
        let sides = [(GALLERY_TRIALS.contains(&ct), spec.gallery, true), (PROBE_TRIALS.contains(&ct), spec.probe, false)];
        for (wanted, route, gallery) in sides {
            if !wanted {
                continue;
            }
            let unit = EvalUnit::of(&meta, route);
            let present = unit.sources().iter().filter(|s| manifest.find(s).is_some()).count();
            if present == route.modalities().len() {
                if gallery { &mut out.gallery } else { &mut out.probes }.push(unit);
            } else if present > 0 && matches!(route, Route::Pair(..)) {
                log::warn!("skipping {}: partner sequence missing", unit.key());
                out.skipped_unpaired += 1;
            }
        }
    }
    if out.gallery.is_empty() {
        return Err(EvalError::EmptyGallery);
    }
    Ok(out)
}
