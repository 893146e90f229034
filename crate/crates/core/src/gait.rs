//! Gait selection from recognized surfaces.
//!
//! Each footstep that touches the ground is classified; once the last
//! `debounce_k` classifications agree on a class the current gait is not
//! suitable for, the policy's gait for that class takes over. With
//! `debounce_k = 1` this is the plain "switch on every unsuitable
//! prediction" loop.

use std::collections::{BTreeMap, VecDeque};
use std::fmt;
use std::fs;
use std::path::Path;

use thiserror::Error;

use crate::nn::{ModelParams, NnError};
use crate::sensor::{contact_detected, TactileFrame, DEFAULT_MIN_ACTIVE_TAXELS};
use crate::textures::NUM_CLASSES;

pub type GaitId = u8;

pub const DEFAULT_DEBOUNCE_K: usize = 3;

#[derive(Debug, Error)]
pub enum GaitError {
    #[error("classifier returned class {0}, expected 0..{max}", max = NUM_CLASSES - 1)]
    UnknownClass(usize),
    #[error("classifier failed: {0}")]
    Classifier(#[from] NnError),
    #[error("bad gait policy: {0}")]
    BadPolicy(String),
    #[error("gait manifest line {line}: {msg}")]
    Manifest { line: usize, msg: String },
    #[error("i/o error reading {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GaitPolicy {
    mapping: [GaitId; NUM_CLASSES],
    /// gait -> per-class suitability. Gaits absent here suit nothing.
    suitable: BTreeMap<GaitId, [bool; NUM_CLASSES]>,
    debounce_k: usize,
    min_active_taxels: usize,
}

impl Default for GaitPolicy {
    fn default() -> Self {
        GaitPolicy::identity(DEFAULT_DEBOUNCE_K)
    }
}

impl GaitPolicy {
    /// Class c walks with gait c, and gait g suits only class g.
    pub fn identity(debounce_k: usize) -> Self {
        let mut suitable = BTreeMap::new();
        for c in 0..NUM_CLASSES {
            let mut row = [false; NUM_CLASSES];
            row[c] = true;
            suitable.insert(c as GaitId, row);
        }
        GaitPolicy {
            mapping: std::array::from_fn(|c| c as GaitId),
            suitable,
            debounce_k: debounce_k.max(1),
            min_active_taxels: DEFAULT_MIN_ACTIVE_TAXELS,
        }
    }

    pub fn new(
        mapping: [GaitId; NUM_CLASSES],
        suitable: BTreeMap<GaitId, [bool; NUM_CLASSES]>,
        debounce_k: usize,
    ) -> Result<Self, GaitError> {
        let p = GaitPolicy {
            mapping,
            suitable,
            debounce_k,
            min_active_taxels: DEFAULT_MIN_ACTIVE_TAXELS,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<(), GaitError> {
        if self.debounce_k == 0 {
            return Err(GaitError::BadPolicy("debounce_k must be at least 1".into()));
        }
        for (c, &g) in self.mapping.iter().enumerate() {
            if !self.is_suitable(g, c) {
                return Err(GaitError::BadPolicy(format!(
                    "class {c} maps to gait {g}, which is not suitable for it"
                )));
            }
        }
        Ok(())
    }

    pub fn with_min_active_taxels(mut self, n: usize) -> Self {
        self.min_active_taxels = n;
        self
    }

    pub fn with_debounce(mut self, k: usize) -> Result<Self, GaitError> {
        self.debounce_k = k;
        self.validate()?;
        Ok(self)
    }

    pub fn gait_for(&self, class_id: usize) -> GaitId {
        self.mapping[class_id]
    }

    pub fn is_suitable(&self, gait: GaitId, class_id: usize) -> bool {
        class_id < NUM_CLASSES && self.suitable.get(&gait).is_some_and(|row| row[class_id])
    }

    pub fn debounce_k(&self) -> usize {
        self.debounce_k
    }

    pub fn min_active_taxels(&self) -> usize {
        self.min_active_taxels
    }

    /// Parses `class <id> gait <id> suitable <id list>` lines, one per
    /// class; the list names the gaits suitable for that class. An optional
    /// `debounce <k>` line overrides the window. `#` starts a comment.
    pub fn parse_manifest(text: &str) -> Result<Self, GaitError> {
        let mut mapping: [Option<GaitId>; NUM_CLASSES] = [None; NUM_CLASSES];
        let mut suitable: BTreeMap<GaitId, [bool; NUM_CLASSES]> = BTreeMap::new();
        let mut debounce_k = DEFAULT_DEBOUNCE_K;
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let err = |msg: String| GaitError::Manifest { line, msg };
            let body = raw.split('#').next().unwrap_or("").trim();
            if body.is_empty() {
                continue;
            }
            let toks: Vec<&str> = body
                .split(|c: char| c.is_whitespace() || c == ',')
                .filter(|t| !t.is_empty())
                .collect();
            let num = |t: &str| -> Result<u64, GaitError> {
                t.parse::<u64>()
                    .map_err(|_| err(format!("expected an integer, got {t:?}")))
            };
            match toks.as_slice() {
                ["debounce", k] => debounce_k = num(k)? as usize,
                ["class", c, "gait", g, "suitable", list @ ..] => {
                    let c = num(c)? as usize;
                    if c >= NUM_CLASSES {
                        return Err(err(format!("class {c} out of range")));
                    }
                    if mapping[c].is_some() {
                        return Err(err(format!("class {c} listed twice")));
                    }
                    let gait = |t: &str| -> Result<GaitId, GaitError> {
                        GaitId::try_from(num(t)?)
                            .map_err(|_| err(format!("gait {t} does not fit in a byte")))
                    };
                    mapping[c] = Some(gait(g)?);
                    for t in list {
                        suitable.entry(gait(t)?).or_insert([false; NUM_CLASSES])[c] = true;
                    }
                }
                _ => return Err(err(format!("unrecognized line {body:?}"))),
            }
        }
        let mut m = [0; NUM_CLASSES];
        for (c, g) in mapping.iter().enumerate() {
            m[c] = g.ok_or_else(|| GaitError::BadPolicy(format!("class {c} has no gait")))?;
        }
        GaitPolicy::new(m, suitable, debounce_k)
    }

    pub fn load(path: &Path) -> Result<Self, GaitError> {
        let text = fs::read_to_string(path).map_err(|source| GaitError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::parse_manifest(&text)
    }

    pub fn render_manifest(&self) -> String {
        let mut out = format!("debounce {}\n", self.debounce_k);
        for c in 0..NUM_CLASSES {
            let list: Vec<String> = self
                .suitable
                .iter()
                .filter(|(_, row)| row[c])
                .map(|(g, _)| g.to_string())
                .collect();
            out.push_str(&format!(
                "class {c} gait {} suitable {}\n",
                self.mapping[c],
                list.join(" ")
            ));
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GaitState {
    pub current_gait: GaitId,
    /// Most recent classifications, oldest first, at most `debounce_k` long.
    pub recent: VecDeque<u8>,
    pub steps_seen: u64,
}

impl GaitState {
    pub fn new(initial_gait: GaitId) -> Self {
        GaitState {
            current_gait: initial_gait,
            recent: VecDeque::new(),
            steps_seen: 0,
        }
    }

    /// The class every entry of a full window agrees on.
    pub fn unanimous(&self, k: usize) -> Option<u8> {
        let first = *self.recent.front()?;
        (self.recent.len() >= k && self.recent.iter().all(|&c| c == first)).then_some(first)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Decision {
    NoContact,
    Kept {
        class_id: u8,
    },
    Switched {
        class_id: u8,
        from: GaitId,
        to: GaitId,
    },
}

impl fmt::Display for Decision {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Decision::NoContact => write!(f, "no_contact"),
            Decision::Kept { class_id } => write!(f, "kept class={class_id}"),
            Decision::Switched { class_id, from, to } => {
                write!(f, "switched class={class_id} from={from} to={to}")
            }
        }
    }
}

/// One step of the gait loop. The classifier is only called when the frame
/// shows ground contact.
pub fn on_footstep<F>(
    state: &GaitState,
    policy: &GaitPolicy,
    frame: &TactileFrame,
    mut classifier: F,
) -> Result<(GaitState, Decision), GaitError>
where
    F: FnMut(&TactileFrame) -> Result<usize, NnError>,
{
    let mut next = state.clone();
    next.steps_seen += 1;
    if !contact_detected(frame, policy.min_active_taxels) {
        return Ok((next, Decision::NoContact));
    }
    let class = classifier(frame)?;
    if class >= NUM_CLASSES {
        return Err(GaitError::UnknownClass(class));
    }
    let k = policy.debounce_k.max(1);
    next.recent.push_back(class as u8);
    while next.recent.len() > k {
        next.recent.pop_front();
    }
    let class_id = class as u8;
    match next.unanimous(k) {
        Some(c) if !policy.is_suitable(next.current_gait, c.into()) => {
            let from = next.current_gait;
            let to = policy.gait_for(c.into());
            next.current_gait = to;
            Ok((
                next,
                Decision::Switched {
                    class_id: c,
                    from,
                    to,
                },
            ))
        }
        _ => Ok((next, Decision::Kept { class_id })),
    }
}

/// A classifier closure backed by a trained model.
pub fn model_classifier(
    model: &ModelParams,
) -> impl FnMut(&TactileFrame) -> Result<usize, NnError> + '_ {
    move |f| crate::nn::model::predict(model, f).map(|p| p.class_id)
}
