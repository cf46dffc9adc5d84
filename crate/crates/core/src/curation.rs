//! Annotator-vote curation into a class-balanced training manifest.
//!
//! Each clip carries ten votes over the basic emotions. A clip becomes a
//! compound sample when both components of some active compound received at
//! least three votes, and a single-emotion sample when one emotion received
//! at least seven. Single-emotion clips are then used to top up compound
//! classes that fall short of the balancing target.

use std::collections::HashSet;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::label_space::{BasicEmotion, Compound, CompoundLabel, CompoundSet, VaSigns, NUM_BASIC};

pub const VOTES_PER_CLIP: usize = 10;
pub const MAJORITY_VOTES: u8 = 7;
pub const COMPONENT_VOTES: u8 = 3;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AnnotationRecord {
    pub clip_id: String,
    votes: Vec<BasicEmotion>,
}

impl AnnotationRecord {
    pub fn new(clip_id: impl Into<String>, votes: Vec<BasicEmotion>) -> Result<Self> {
        if votes.len() != VOTES_PER_CLIP {
            return Err(Error::Argument(format!(
                "expected {VOTES_PER_CLIP} votes, got {}",
                votes.len()
            )));
        }
        Ok(Self {
            clip_id: clip_id.into(),
            votes,
        })
    }

    /// Build a record from per-emotion counts (indexed by basic-emotion code).
    pub fn from_counts(clip_id: impl Into<String>, counts: [u8; NUM_BASIC]) -> Result<Self> {
        let votes = BasicEmotion::ALL
            .iter()
            .zip(counts)
            .flat_map(|(&e, n)| std::iter::repeat_n(e, n as usize))
            .collect();
        Self::new(clip_id, votes)
    }

    pub fn votes(&self) -> &[BasicEmotion] {
        &self.votes
    }

    pub fn counts(&self) -> [u8; NUM_BASIC] {
        let mut counts = [0u8; NUM_BASIC];
        for v in &self.votes {
            counts[v.code()] += 1;
        }
        counts
    }
}

/// The emotion chosen by more than six of the ten annotators, if any.
pub fn majority_single(r: &AnnotationRecord) -> Option<BasicEmotion> {
    let counts = r.counts();
    BasicEmotion::ALL
        .into_iter()
        .find(|e| counts[e.code()] >= MAJORITY_VOTES)
}

/// Among compounds whose components both got at least three votes, the one
/// with the most summed votes; ties resolve to the earlier set member.
pub fn compound_from_votes(r: &AnnotationRecord, set: &CompoundSet) -> Option<CompoundLabel> {
    let counts = r.counts();
    let mut best: Option<(usize, u8)> = None;
    for (i, c) in set.members().iter().enumerate() {
        let (a, b) = (counts[c.first.code()], counts[c.second.code()]);
        if a < COMPONENT_VOTES || b < COMPONENT_VOTES {
            continue;
        }
        let total = a + b;
        if best.is_none_or(|(_, t)| total > t) {
            best = Some((i, total));
        }
    }
    best.and_then(|(i, _)| set.label(i))
}

/// Read a `clip_id,v1,...,v10` vote table.
pub fn read_votes<R: Read>(reader: R) -> Result<Vec<AnnotationRecord>> {
    let mut rdr = csv::ReaderBuilder::new()
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let header = rdr.headers()?.clone();
    let expected: Vec<String> = std::iter::once("clip_id".to_string())
        .chain((1..=VOTES_PER_CLIP).map(|i| format!("v{i}")))
        .collect();
    if header.iter().ne(expected.iter().map(String::as_str)) {
        return Err(Error::Ingestion {
            row: 1,
            message: format!("header must be `{}`", expected.join(",")),
        });
    }
    let mut records = Vec::new();
    for row in rdr.records() {
        let row = row?;
        let line = row.position().map_or(0, |p| p.line() as usize);
        if row.len() != VOTES_PER_CLIP + 1 {
            return Err(Error::Ingestion {
                row: line,
                message: format!(
                    "expected {VOTES_PER_CLIP} votes, found {}",
                    row.len().saturating_sub(1)
                ),
            });
        }
        let votes = row
            .iter()
            .skip(1)
            .map(|v| v.parse::<BasicEmotion>())
            .collect::<Result<Vec<_>>>()
            .map_err(|e| Error::Ingestion {
                row: line,
                message: e.to_string(),
            })?;
        records.push(AnnotationRecord::new(&row[0], votes)?);
    }
    Ok(records)
}

pub fn read_votes_file(path: &Path) -> Result<Vec<AnnotationRecord>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_votes(file)
}

pub fn write_votes<W: Write>(writer: W, records: &[AnnotationRecord]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["clip_id".to_string()];
    header.extend((1..=VOTES_PER_CLIP).map(|i| format!("v{i}")));
    w.write_record(&header)?;
    for r in records {
        let mut row = vec![r.clip_id.as_str()];
        row.extend(r.votes.iter().map(|v| v.name()));
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| Error::io("<votes>", e))?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BalanceConfig {
    /// Per-class count to top up to; `None` uses the largest compound class.
    pub target_count: Option<usize>,
    /// Supplements train only the VA head.
    pub supplements_va_only: bool,
}

impl Default for BalanceConfig {
    fn default() -> Self {
        Self {
            target_count: None,
            supplements_va_only: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EntryLabel {
    Compound(CompoundLabel),
    /// Single-emotion supplement assigned to balance `balances`.
    Basic {
        emotion: BasicEmotion,
        balances: CompoundLabel,
    },
}

impl EntryLabel {
    /// The compound class this entry counts towards.
    pub fn class(&self) -> CompoundLabel {
        match *self {
            EntryLabel::Compound(c) => c,
            EntryLabel::Basic { balances, .. } => balances,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    pub clip_id: String,
    pub label: EntryLabel,
    pub va: Option<VaSigns>,
    pub va_only: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TrainingManifest {
    pub compound_set: CompoundSet,
    pub entries: Vec<ManifestEntry>,
}

impl TrainingManifest {
    /// Number of entries counting towards each compound class.
    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.compound_set.len()];
        for e in &self.entries {
            counts[e.label.class().index] += 1;
        }
        counts
    }
}

pub fn build_manifest(
    records: &[AnnotationRecord],
    set: &CompoundSet,
    balance: BalanceConfig,
) -> Result<TrainingManifest> {
    if records.is_empty() {
        return Err(Error::Argument("no annotation records".into()));
    }
    let mut sorted: Vec<&AnnotationRecord> = records.iter().collect();
    sorted.sort_by(|a, b| a.clip_id.cmp(&b.clip_id));
    if let Some(w) = sorted.windows(2).find(|w| w[0].clip_id == w[1].clip_id) {
        return Err(Error::Data(format!("duplicate clip_id `{}`", w[0].clip_id)));
    }

    let mut entries = Vec::new();
    let mut singles: Vec<(&str, BasicEmotion)> = Vec::new();
    let mut counts = vec![0usize; set.len()];
    for r in &sorted {
        if let Some(label) = compound_from_votes(r, set) {
            counts[label.index] += 1;
            entries.push(ManifestEntry {
                clip_id: r.clip_id.clone(),
                label: EntryLabel::Compound(label),
                va: Some(label.compound.va_target()),
                va_only: false,
            });
        } else if let Some(e) = majority_single(r) {
            singles.push((&r.clip_id, e));
        }
    }
    if entries.is_empty() {
        log::warn!("no record qualifies for any compound class");
    }

    let target = balance
        .target_count
        .unwrap_or_else(|| counts.iter().copied().max().unwrap_or(0));
    let mut used = vec![false; singles.len()];
    // round-robin over deficient classes, one supplement per class per pass
    loop {
        let mut progressed = false;
        for (ci, compound) in set.members().iter().enumerate() {
            if counts[ci] >= target {
                continue;
            }
            let pick = singles
                .iter()
                .enumerate()
                .find(|(i, (_, e))| !used[*i] && compound.contains(*e));
            if let Some((i, &(clip_id, emotion))) = pick {
                used[i] = true;
                counts[ci] += 1;
                progressed = true;
                entries.push(ManifestEntry {
                    clip_id: clip_id.to_string(),
                    label: EntryLabel::Basic {
                        emotion,
                        balances: set.label(ci).expect("index in range"),
                    },
                    va: Some(VaSigns::of_basic(emotion)),
                    va_only: balance.supplements_va_only,
                });
            }
        }
        if !progressed {
            break;
        }
    }
    for (ci, &n) in counts.iter().enumerate() {
        if n < target {
            log::warn!(
                "class {} has {n} entries, below balancing target {target}",
                set.members()[ci]
            );
        }
    }

    entries.sort_by(|a, b| a.clip_id.cmp(&b.clip_id));
    Ok(TrainingManifest {
        compound_set: set.clone(),
        entries,
    })
}

#[derive(Serialize, Deserialize)]
struct HeaderLine {
    compound_set: Vec<[String; 2]>,
}

#[derive(Serialize, Deserialize)]
struct EntryLine {
    clip_id: String,
    label: String,
    label_kind: String,
    va: Option<[i8; 2]>,
    va_only: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    balances: Option<String>,
}

pub fn write_manifest<W: Write>(mut w: W, manifest: &TrainingManifest) -> Result<()> {
    let header = HeaderLine {
        compound_set: manifest
            .compound_set
            .members()
            .iter()
            .map(|c| [c.first.name().to_string(), c.second.name().to_string()])
            .collect(),
    };
    let io = |e| Error::io("<manifest>", e);
    serde_json::to_writer(&mut w, &header)?;
    w.write_all(b"\n").map_err(io)?;
    for e in &manifest.entries {
        let line = match e.label {
            EntryLabel::Compound(c) => EntryLine {
                clip_id: e.clip_id.clone(),
                label: c.name(),
                label_kind: "compound".into(),
                va: e.va.map(VaSigns::as_pair),
                va_only: e.va_only,
                balances: None,
            },
            EntryLabel::Basic { emotion, balances } => EntryLine {
                clip_id: e.clip_id.clone(),
                label: emotion.name().into(),
                label_kind: "basic".into(),
                va: e.va.map(VaSigns::as_pair),
                va_only: e.va_only,
                balances: Some(balances.name()),
            },
        };
        serde_json::to_writer(&mut w, &line)?;
        w.write_all(b"\n").map_err(io)?;
    }
    w.flush().map_err(io)
}

pub fn read_manifest<R: Read>(r: R) -> Result<TrainingManifest> {
    let mut lines = BufReader::new(r).lines();
    let bad = |line: usize, msg: String| Error::Ingestion {
        row: line,
        message: msg,
    };
    let header_text = lines
        .next()
        .ok_or_else(|| bad(1, "manifest is empty".into()))?
        .map_err(|e| Error::io("<manifest>", e))?;
    let header: HeaderLine =
        serde_json::from_str(&header_text).map_err(|e| bad(1, format!("bad header: {e}")))?;
    let members = header
        .compound_set
        .iter()
        .map(|[a, b]| Ok(Compound::new(a.parse()?, b.parse()?)))
        .collect::<Result<Vec<_>>>()?;
    let set = CompoundSet::new(members)?;

    let mut entries = Vec::new();
    let mut seen = HashSet::new();
    for (i, line) in lines.enumerate() {
        let lineno = i + 2;
        let line = line.map_err(|e| Error::io("<manifest>", e))?;
        if line.trim().is_empty() {
            continue;
        }
        let raw: EntryLine = serde_json::from_str(&line).map_err(|e| bad(lineno, e.to_string()))?;
        let label = match raw.label_kind.as_str() {
            "compound" => EntryLabel::Compound(
                set.find_by_name(&raw.label)
                    .map_err(|e| bad(lineno, e.to_string()))?,
            ),
            "basic" => {
                let emotion = raw
                    .label
                    .parse::<BasicEmotion>()
                    .map_err(|e| bad(lineno, e.to_string()))?;
                let balances = raw
                    .balances
                    .as_deref()
                    .ok_or_else(|| bad(lineno, "basic entry without `balances`".into()))
                    .and_then(|n| set.find_by_name(n).map_err(|e| bad(lineno, e.to_string())))?;
                if !balances.compound.contains(emotion) {
                    return Err(bad(
                        lineno,
                        format!("`{emotion}` is not a component of `{}`", balances.name()),
                    ));
                }
                EntryLabel::Basic { emotion, balances }
            }
            other => return Err(bad(lineno, format!("unknown label_kind `{other}`"))),
        };
        let va = raw
            .va
            .map(VaSigns::from_pair)
            .transpose()
            .map_err(|e| bad(lineno, e.to_string()))?;
        if !seen.insert(raw.clip_id.clone()) {
            return Err(bad(lineno, format!("duplicate clip_id `{}`", raw.clip_id)));
        }
        entries.push(ManifestEntry {
            clip_id: raw.clip_id,
            label,
            va,
            va_only: raw.va_only,
        });
    }
    Ok(TrainingManifest {
        compound_set: set,
        entries,
    })
}

pub fn read_manifest_file(path: &Path) -> Result<TrainingManifest> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_manifest(file)
}

/// Only the compound set from a manifest's header line.
pub fn read_compound_set(path: &Path) -> Result<CompoundSet> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut first = String::new();
    BufReader::new(file)
        .read_line(&mut first)
        .map_err(|e| Error::io(path, e))?;
    let header: HeaderLine = serde_json::from_str(&first)
        .map_err(|e| Error::format(path, format!("bad manifest header: {e}")))?;
    let members = header
        .compound_set
        .iter()
        .map(|[a, b]| Ok(Compound::new(a.parse()?, b.parse()?)))
        .collect::<Result<Vec<_>>>()?;
    CompoundSet::new(members)
}
