//! Template instruction generator and its vocabulary.

use std::collections::HashMap;
use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::world::WorldGraph;

pub const PAD: usize = 0;
pub const UNK: usize = 1;
pub const MIN_LEN: usize = 3;
pub const MAX_LEN: usize = 40;

const FUNCTION_WORDS: &[&str] = &[
    "<pad>", "<unk>", "straight", "left", "right", "back", "past", "to", "then", "stop",
    "near", "the", "walk", "a", "bit", "once", "twice",
];

/// Canonical direction word paired with the dialect variant.
const DIRECTION_SYNONYMS: &[(&str, &str)] = &[
    ("straight", "ahead"),
    ("left", "leftward"),
    ("right", "rightward"),
    ("back", "around"),
];

/// Landmark nouns, canonical form paired with the dialect variant.
const LANDMARKS: &[(&str, &str)] = &[
    ("bed", "cot"),
    ("door", "doorway"),
    ("lamp", "light"),
    ("sofa", "couch"),
    ("table", "counter"),
    ("chair", "seat"),
    ("sink", "basin"),
    ("stairs", "staircase"),
    ("window", "pane"),
    ("plant", "fern"),
    ("tv", "television"),
    ("desk", "workbench"),
    ("shelf", "bookcase"),
    ("rug", "carpet"),
    ("mirror", "glass"),
    ("fridge", "refrigerator"),
    ("oven", "stove"),
    ("toilet", "lavatory"),
    ("bathtub", "tub"),
    ("painting", "picture"),
    ("fireplace", "hearth"),
    ("closet", "wardrobe"),
    ("piano", "keys"),
    ("clock", "timepiece"),
    ("bench", "pew"),
    ("vase", "urn"),
    ("curtain", "drape"),
    ("statue", "sculpture"),
    ("cabinet", "cupboard"),
    ("armchair", "recliner"),
    ("dresser", "bureau"),
    ("pillar", "column"),
];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Turn {
    Straight,
    Left,
    Right,
    Back,
}

/// Ordered token list; index 0 is padding.
#[derive(Clone, Debug, PartialEq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
    landmark_classes: usize,
}

impl Vocabulary {
    /// Builds the vocabulary for worlds with `landmark_classes` landmark kinds.
    pub fn new(landmark_classes: usize) -> Self {
        let mut tokens: Vec<String> = FUNCTION_WORDS.iter().map(|s| s.to_string()).collect();
        tokens.extend(DIRECTION_SYNONYMS.iter().map(|(_, alt)| alt.to_string()));
        for c in 0..landmark_classes {
            tokens.push(landmark_name(c, false));
        }
        for c in 0..landmark_classes {
            tokens.push(landmark_name(c, true));
        }
        let index = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        Self {
            tokens,
            index,
            landmark_classes,
        }
    }

    pub fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        if tokens.first().map(String::as_str) != Some("<pad>") {
            return Err(Error::Data("vocabulary must start with <pad>".into()));
        }
        let index: HashMap<String, usize> =
            tokens.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        if index.len() != tokens.len() {
            return Err(Error::Data("vocabulary has duplicate tokens".into()));
        }
        let fixed = FUNCTION_WORDS.len() + DIRECTION_SYNONYMS.len();
        let landmark_classes = tokens.len().saturating_sub(fixed) / 2;
        Ok(Self {
            tokens,
            index,
            landmark_classes,
        })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn lookup(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(UNK)
    }

    pub fn landmark_classes(&self) -> usize {
        self.landmark_classes
    }

    fn id(&self, token: &str) -> usize {
        *self
            .index
            .get(token)
            .unwrap_or_else(|| panic!("token {token:?} missing from vocabulary"))
    }

    pub fn turn_id(&self, turn: Turn, dialect: bool) -> usize {
        let (canon, alt) = DIRECTION_SYNONYMS[turn as usize];
        self.id(if dialect { alt } else { canon })
    }

    pub fn landmark_id(&self, class: usize, dialect: bool) -> usize {
        self.lookup(&landmark_name(class, dialect))
    }

    pub fn decode(&self, ids: &[usize]) -> String {
        ids.iter()
            .map(|&i| self.token(i).unwrap_or("<unk>"))
            .collect::<Vec<_>>()
            .join(" ")
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(&self.tokens)?)
    }
}

fn landmark_name(class: usize, dialect: bool) -> String {
    let base = LANDMARKS[class % LANDMARKS.len()];
    let word = if dialect { base.1 } else { base.0 };
    if class < LANDMARKS.len() {
        word.to_string()
    } else {
        format!("{word}{}", class / LANDMARKS.len())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InstructionSource {
    Generated,
    Augmented,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Instruction {
    pub token_ids: Vec<usize>,
    pub source: InstructionSource,
}

impl Instruction {
    pub fn len(&self) -> usize {
        self.token_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.token_ids.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LangConfig {
    /// Per-step probability that the step clause is dropped.
    pub ambiguity: f64,
    /// Probability a kept clause names the landmark it reaches.
    pub landmark_prob: f64,
    /// Probability each direction word or landmark noun is said in the
    /// annotator's dialect rather than the canonical form.
    pub dialect_rate: f64,
    /// |Δθ| up to this is "straight".
    pub straight_max: f64,
    /// |Δθ| beyond this is "back".
    pub side_max: f64,
}

impl Default for LangConfig {
    fn default() -> Self {
        Self {
            ambiguity: 0.3,
            landmark_prob: 0.8,
            dialect_rate: 0.0,
            straight_max: PI / 6.0,
            side_max: 5.0 * PI / 6.0,
        }
    }
}

impl LangConfig {
    /// Fully specified, canonical wording.
    pub fn exact() -> Self {
        Self {
            ambiguity: 0.0,
            landmark_prob: 1.0,
            dialect_rate: 0.0,
            ..Self::default()
        }
    }
}

/// Signed heading change wrapped into `(-π, π]`; positive is counter-clockwise.
pub fn wrapped_turn(prev_heading: f64, next_heading: f64) -> f64 {
    let mut d = (next_heading - prev_heading).rem_euclid(2.0 * PI);
    if d > PI {
        d -= 2.0 * PI;
    }
    d
}

pub fn classify_turn(prev_heading: f64, next_heading: f64, config: &LangConfig) -> Turn {
    let d = wrapped_turn(prev_heading, next_heading);
    if d.abs() <= config.straight_max {
        Turn::Straight
    } else if d > config.straight_max && d <= config.side_max {
        Turn::Left
    } else if d < -config.straight_max && d > -config.side_max {
        Turn::Right
    } else {
        Turn::Back
    }
}

/// Direction token for the heading change.
pub fn turn_word(vocab: &Vocabulary, prev_heading: f64, next_heading: f64) -> usize {
    vocab.turn_id(
        classify_turn(prev_heading, next_heading, &LangConfig::default()),
        false,
    )
}

/// Heading the agent faces before its first move.
pub const INITIAL_HEADING: f64 = 0.0;

/// Writes an instruction for `trajectory`.
///
/// Each step becomes `<dir> [past|to <landmark>] then`, and the instruction
/// ends with `stop near the <target landmark>`. A step is left out with
/// probability `ambiguity`.
pub fn generate_instruction(
    world: &WorldGraph,
    vocab: &Vocabulary,
    trajectory: &[usize],
    config: &LangConfig,
    seed: u64,
) -> Result<Instruction> {
    let Some(&target) = trajectory.last() else {
        return Err(Error::Data("cannot describe an empty trajectory".into()));
    };
    if !(0.0..=1.0).contains(&config.ambiguity) {
        return Err(Error::Config("ambiguity must lie in [0, 1]".into()));
    }
    for &v in trajectory {
        world.viewpoint(v)?;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dialect = |rng: &mut ChaCha8Rng| rng.gen::<f64>() < config.dialect_rate;
    let mut ids = Vec::new();
    let mut heading = INITIAL_HEADING;
    let steps = trajectory.len() - 1;
    for (i, w) in trajectory.windows(2).enumerate() {
        let next = world.heading(w[0], w[1]);
        let turn = classify_turn(heading, next, config);
        heading = next;
        let dropped = rng.gen::<f64>() < config.ambiguity;
        let named = rng.gen::<f64>() < config.landmark_prob;
        if dropped {
            continue;
        }
        let d = dialect(&mut rng);
        ids.push(vocab.turn_id(turn, d));
        if named {
            ids.push(vocab.lookup(if i + 1 == steps { "to" } else { "past" }));
            let class = world.viewpoint(w[1])?.landmark;
            let d = dialect(&mut rng);
            ids.push(vocab.landmark_id(class, d));
        }
        ids.push(vocab.lookup("then"));
    }
    let class = world.viewpoint(target)?.landmark;
    let d = dialect(&mut rng);
    ids.extend([
        vocab.lookup("stop"),
        vocab.lookup("near"),
        vocab.lookup("the"),
        vocab.landmark_id(class, d),
    ]);
    ids.truncate(MAX_LEN);
    Ok(Instruction {
        token_ids: ids,
        source: InstructionSource::Generated,
    })
}

/// Expected token count for a trajectory of `steps` edges.
pub fn expected_length(steps: usize, config: &LangConfig) -> f64 {
    4.0 + steps as f64 * (1.0 - config.ambiguity) * (2.0 + 2.0 * config.landmark_prob)
}
