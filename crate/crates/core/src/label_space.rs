//! Basic emotions, the active compound label set, and the valence/arousal
//! gated decision rule.
//!
//! Happiness and sadness sit in opposite quadrants of the emotion wheel. The
//! gate exploits that: a frame with positive valence and arousal is labelled
//! happily-surprised outright, a frame with both negative is restricted to the
//! three sadness compounds, and every other sign pair falls back to the plain
//! argmax of the classifier.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

pub const NUM_BASIC: usize = 7;
pub const NUM_COMPOUND: usize = 7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum BasicEmotion {
    Happiness = 0,
    Sadness = 1,
    Neutral = 2,
    Anger = 3,
    Surprise = 4,
    Disgust = 5,
    Fear = 6,
}

impl BasicEmotion {
    pub const ALL: [BasicEmotion; NUM_BASIC] = [
        BasicEmotion::Happiness,
        BasicEmotion::Sadness,
        BasicEmotion::Neutral,
        BasicEmotion::Anger,
        BasicEmotion::Surprise,
        BasicEmotion::Disgust,
        BasicEmotion::Fear,
    ];

    pub fn code(self) -> usize {
        self as usize
    }

    pub fn from_code(code: usize) -> Option<Self> {
        Self::ALL.get(code).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            BasicEmotion::Happiness => "happiness",
            BasicEmotion::Sadness => "sadness",
            BasicEmotion::Neutral => "neutral",
            BasicEmotion::Anger => "anger",
            BasicEmotion::Surprise => "surprise",
            BasicEmotion::Disgust => "disgust",
            BasicEmotion::Fear => "fear",
        }
    }
}

impl fmt::Display for BasicEmotion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for BasicEmotion {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .iter()
            .copied()
            .find(|e| e.name() == s)
            .ok_or_else(|| Error::Argument(format!("unknown basic emotion `{s}`")))
    }
}

/// Position of a basic emotion on the emotion wheel as (valence, arousal)
/// signs in {-1, 0, +1}.
pub fn basic_to_va(e: BasicEmotion) -> (i8, i8) {
    match e {
        BasicEmotion::Happiness => (1, 1),
        BasicEmotion::Surprise => (0, 1),
        BasicEmotion::Fear | BasicEmotion::Anger | BasicEmotion::Disgust => (-1, 1),
        BasicEmotion::Sadness => (-1, -1),
        BasicEmotion::Neutral => (0, 0),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Sign {
    Negative,
    Positive,
}

impl Sign {
    /// Binary sign of a wheel coordinate; zero counts as negative, matching
    /// the strict `p > threshold` rule used on predictions.
    pub fn from_wheel(v: i8) -> Self {
        if v > 0 {
            Sign::Positive
        } else {
            Sign::Negative
        }
    }

    pub fn from_i8(v: i8) -> Result<Self> {
        match v {
            1 => Ok(Sign::Positive),
            -1 => Ok(Sign::Negative),
            other => Err(Error::Argument(format!(
                "sign must be -1 or +1, got {other}"
            ))),
        }
    }

    pub fn as_i8(self) -> i8 {
        match self {
            Sign::Positive => 1,
            Sign::Negative => -1,
        }
    }

    pub fn is_positive(self) -> bool {
        self == Sign::Positive
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct VaSigns {
    pub valence: Sign,
    pub arousal: Sign,
}

impl VaSigns {
    pub const fn new(valence: Sign, arousal: Sign) -> Self {
        Self { valence, arousal }
    }

    pub fn of_basic(e: BasicEmotion) -> Self {
        let (v, a) = basic_to_va(e);
        Self::new(Sign::from_wheel(v), Sign::from_wheel(a))
    }

    pub fn as_pair(self) -> [i8; 2] {
        [self.valence.as_i8(), self.arousal.as_i8()]
    }

    pub fn from_pair(pair: [i8; 2]) -> Result<Self> {
        Ok(Self::new(Sign::from_i8(pair[0])?, Sign::from_i8(pair[1])?))
    }
}

/// Probabilities that valence and arousal are positive.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VASignPrediction {
    pub p_valence_pos: f64,
    pub p_arousal_pos: f64,
}

impl VASignPrediction {
    pub fn new(p_valence_pos: f64, p_arousal_pos: f64) -> Result<Self> {
        for p in [p_valence_pos, p_arousal_pos] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Argument(format!("probability {p} outside [0, 1]")));
            }
        }
        Ok(Self {
            p_valence_pos,
            p_arousal_pos,
        })
    }
}

/// Binarize the VA head: a sign is positive iff its probability is strictly
/// above `threshold`.
pub fn va_signs(p: VASignPrediction, threshold: f64) -> Result<VaSigns> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(Error::Config(format!(
            "VA threshold must lie in (0, 1), got {threshold}"
        )));
    }
    let sign = |prob: f64| {
        if prob > threshold {
            Sign::Positive
        } else {
            Sign::Negative
        }
    };
    Ok(VaSigns::new(sign(p.p_valence_pos), sign(p.p_arousal_pos)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Compound {
    pub first: BasicEmotion,
    pub second: BasicEmotion,
}

impl Compound {
    pub const fn new(first: BasicEmotion, second: BasicEmotion) -> Self {
        Self { first, second }
    }

    pub fn contains(&self, e: BasicEmotion) -> bool {
        self.first == e || self.second == e
    }

    pub fn components(&self) -> [BasicEmotion; 2] {
        [self.first, self.second]
    }

    /// `<first>_<second>`, e.g. `happiness_surprise`.
    pub fn name(&self) -> String {
        format!("{}_{}", self.first, self.second)
    }

    /// Training target for the VA head: the sign of the summed wheel
    /// coordinates of both components, zero counting as negative.
    pub fn va_target(&self) -> VaSigns {
        let (v1, a1) = basic_to_va(self.first);
        let (v2, a2) = basic_to_va(self.second);
        VaSigns::new(Sign::from_wheel(v1 + v2), Sign::from_wheel(a1 + a2))
    }
}

impl fmt::Display for Compound {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}_{}", self.first, self.second)
    }
}

impl FromStr for Compound {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (a, b) = s.split_once('_').ok_or_else(|| {
            Error::Argument(format!("compound label `{s}` is not `<first>_<second>`"))
        })?;
        Ok(Compound::new(a.parse()?, b.parse()?))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct CompoundLabel {
    pub index: usize,
    pub compound: Compound,
}

impl CompoundLabel {
    pub fn name(&self) -> String {
        self.compound.name()
    }
}

/// An ordered, validated set of exactly seven compounds.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CompoundSet {
    members: Vec<Compound>,
    happy_surprise: usize,
    sadness: [usize; 3],
}

impl CompoundSet {
    pub fn new(members: Vec<Compound>) -> Result<Self> {
        use BasicEmotion::*;

        if members.len() != NUM_COMPOUND {
            return Err(Error::Config(format!(
                "compound set must have {NUM_COMPOUND} members, got {}",
                members.len()
            )));
        }
        for (i, c) in members.iter().enumerate() {
            if c.first == c.second {
                return Err(Error::Config(format!("compound `{c}` repeats a component")));
            }
            if c.contains(Happiness) && c.contains(Disgust) {
                return Err(Error::Config(format!(
                    "compound `{c}` combines happiness and disgust"
                )));
            }
            let dup = members[..i]
                .iter()
                .any(|o| o.contains(c.first) && o.contains(c.second));
            if dup {
                return Err(Error::Config(format!("compound `{c}` listed twice")));
            }
        }
        let happy: Vec<usize> =
            indices_where(&members, |c| c.contains(Happiness) && c.contains(Surprise));
        if happy.len() != 1 {
            return Err(Error::Config(format!(
                "exactly one happiness+surprise compound required, found {}",
                happy.len()
            )));
        }
        let sad: Vec<usize> = indices_where(&members, |c| c.contains(Sadness));
        let sadness: [usize; 3] = sad.as_slice().try_into().map_err(|_| {
            Error::Config(format!(
                "exactly three sadness compounds required, found {}",
                sad.len()
            ))
        })?;
        Ok(Self {
            members,
            happy_surprise: happy[0],
            sadness,
        })
    }

    pub fn members(&self) -> &[Compound] {
        &self.members
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn label(&self, index: usize) -> Option<CompoundLabel> {
        self.members
            .get(index)
            .map(|&compound| CompoundLabel { index, compound })
    }

    pub fn happy_surprise(&self) -> CompoundLabel {
        self.label(self.happy_surprise).expect("validated index")
    }

    pub fn sadness_indices(&self) -> [usize; 3] {
        self.sadness
    }

    /// Index of `c` in the set, matching either component order.
    pub fn index_of(&self, c: Compound) -> Option<usize> {
        self.members
            .iter()
            .position(|m| m.contains(c.first) && m.contains(c.second) && c.first != c.second)
    }

    pub fn find_by_name(&self, name: &str) -> Result<CompoundLabel> {
        let c: Compound = name.parse()?;
        self.index_of(c).and_then(|i| self.label(i)).ok_or_else(|| {
            Error::Argument(format!("label `{name}` is not in the active compound set"))
        })
    }

    pub fn names(&self) -> Vec<String> {
        self.members.iter().map(Compound::name).collect()
    }
}

impl Default for CompoundSet {
    /// fearfully-, happily-, sadly-, disgustedly-, angrily-surprised,
    /// sadly-fearful, sadly-angry.
    fn default() -> Self {
        use BasicEmotion::*;
        Self::new(vec![
            Compound::new(Fear, Surprise),
            Compound::new(Happiness, Surprise),
            Compound::new(Sadness, Surprise),
            Compound::new(Disgust, Surprise),
            Compound::new(Anger, Surprise),
            Compound::new(Sadness, Fear),
            Compound::new(Sadness, Anger),
        ])
        .expect("default compound set is valid")
    }
}

fn indices_where(members: &[Compound], pred: impl Fn(&Compound) -> bool) -> Vec<usize> {
    members
        .iter()
        .enumerate()
        .filter(|(_, c)| pred(c))
        .map(|(i, _)| i)
        .collect()
}

/// Per-class scores aligned with the active compound set.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassScores(pub Vec<f64>);

impl ClassScores {
    pub fn softmax(logits: &[f64]) -> Self {
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
        let total: f64 = exps.iter().sum();
        ClassScores(exps.into_iter().map(|e| e / total).collect())
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn argmax(&self) -> usize {
        argmax_over(&self.0, 0..self.0.len()).unwrap_or(0)
    }
}

/// Argmax over the given candidate indices; ties go to the lowest index.
fn argmax_over(scores: &[f64], candidates: impl IntoIterator<Item = usize>) -> Option<usize> {
    let mut best: Option<usize> = None;
    for i in candidates {
        match best {
            Some(b) if scores[i] <= scores[b] => {}
            _ => best = Some(i),
        }
    }
    best
}

/// Hierarchical decision over the compound set.
pub fn gate(set: &CompoundSet, scores: &ClassScores, signs: VaSigns) -> Result<CompoundLabel> {
    if scores.len() != set.len() {
        return Err(Error::Argument(format!(
            "expected {} class scores, got {}",
            set.len(),
            scores.len()
        )));
    }
    let index = match (signs.valence, signs.arousal) {
        (Sign::Positive, Sign::Positive) => return Ok(set.happy_surprise()),
        (Sign::Negative, Sign::Negative) => argmax_over(scores.as_slice(), set.sadness_indices()),
        _ => argmax_over(scores.as_slice(), 0..set.len()),
    };
    Ok(set
        .label(index.expect("nonempty candidates"))
        .expect("index in range"))
}
