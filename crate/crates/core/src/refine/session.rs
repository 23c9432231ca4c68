use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::ops::{apply_command, current_centerline, needs_centerline};
use super::{RefineError, Result};
use crate::centerline::{Centerline, ProximalTable};
use crate::hash::content_hash;
use crate::instruction::{parse_instruction, ClauseError, EditCommand, ParsedInstruction, Vocabulary};
use crate::metrics::{evaluate, EvalConfig, MetricsReport};
use crate::volume::LabelVolume;

/// Applies commands against a lazily filled cache of current-shape
/// centerlines. An edit to a segment evicts it and every segment that uses
/// it as an anatomical parent, since both skeleton and proximal end may move.
#[derive(Clone, Debug, Default)]
pub struct Refiner {
    table: ProximalTable,
    cache: BTreeMap<u8, Centerline>,
}

impl Refiner {
    pub fn new(table: ProximalTable) -> Self {
        Self {
            table,
            cache: BTreeMap::new(),
        }
    }

    pub fn table(&self) -> &ProximalTable {
        &self.table
    }

    pub fn clear(&mut self) {
        self.cache.clear();
    }

    /// Cached centerline of `class` in `v`, computing it on a miss.
    pub fn centerline(&mut self, v: &LabelVolume, class: u8) -> Result<&Centerline> {
        if !self.cache.contains_key(&class) {
            let c = current_centerline(v, class, &self.table)?;
            self.cache.insert(class, c);
        }
        Ok(&self.cache[&class])
    }

    fn invalidate(&mut self, class: u8) {
        self.cache.remove(&class);
        let children: Vec<u8> = self
            .table
            .parents
            .iter()
            .filter(|(_, ps)| ps.contains(&class))
            .map(|(&c, _)| c)
            .collect();
        for c in children {
            self.cache.remove(&c);
        }
    }

    /// Applies `cmd` to a copy of `v`.
    pub fn apply(&mut self, v: &LabelVolume, cmd: &EditCommand) -> Result<LabelVolume> {
        let out = if needs_centerline(cmd) {
            let c = self.centerline(v, cmd.segment_id)?.clone();
            apply_command(v, Some(&c), cmd)?
        } else {
            apply_command(v, None, cmd)?
        };
        if out.labels() != v.labels() {
            self.invalidate(cmd.segment_id);
        }
        Ok(out)
    }
}

/// A parsed command that could not be applied.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CommandFailure {
    pub clause: usize,
    pub command: EditCommand,
    pub message: String,
}

/// One entry of a session history. Entry 0 describes the initial volume and
/// carries no instruction.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HistoryStep {
    pub instruction: String,
    /// Commands that were applied, in order.
    pub commands: Vec<EditCommand>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub clause_errors: Vec<ClauseError>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub command_errors: Vec<CommandFailure>,
    pub hash: String,
    pub changed_voxels: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub metrics: Option<MetricsReport>,
}

/// Re-applies the recorded commands of `history[1..]` to `initial`, checking
/// every recorded hash.
pub fn replay(initial: &LabelVolume, history: &[HistoryStep], table: &ProximalTable) -> Result<LabelVolume> {
    let mut v = initial.clone();
    let mut refiner = Refiner::new(table.clone());
    let check = |step: usize, v: &LabelVolume, expected: &str| {
        let actual = content_hash(v);
        if actual == expected {
            Ok(())
        } else {
            Err(RefineError::DivergentReplay {
                step,
                expected: expected.to_string(),
                actual,
            })
        }
    };
    for (k, step) in history.iter().enumerate() {
        if k > 0 {
            for cmd in &step.commands {
                v = refiner.apply(&v, cmd)?;
            }
        }
        check(k, &v, &step.hash)?;
    }
    Ok(v)
}

/// Current volume plus the ordered record of the instructions that shaped
/// it. `history[k].hash` is always the hash of the volume after step `k`.
#[derive(Clone, Debug)]
pub struct RefinementSession {
    session_id: String,
    initial: LabelVolume,
    current: LabelVolume,
    gt: Option<LabelVolume>,
    vocab: Vocabulary,
    eval: EvalConfig,
    refiner: Refiner,
    history: Vec<HistoryStep>,
}

impl RefinementSession {
    pub fn new(session_id: impl Into<String>, initial: LabelVolume, gt: Option<LabelVolume>) -> Result<Self> {
        Self::with_config(session_id, initial, gt, ProximalTable::default(), EvalConfig::default())
    }

    pub fn with_config(
        session_id: impl Into<String>,
        initial: LabelVolume,
        gt: Option<LabelVolume>,
        table: ProximalTable,
        eval: EvalConfig,
    ) -> Result<Self> {
        if let Some(g) = &gt {
            if g.dims() != initial.dims() || g.spacing() != initial.spacing() {
                return Err(RefineError::Mismatch("ground truth grid differs from the initial volume".into()));
            }
        }
        let vocab = Vocabulary::from_label_map(initial.label_map());
        let mut s = Self {
            session_id: session_id.into(),
            current: initial.clone(),
            initial,
            gt,
            vocab,
            eval,
            refiner: Refiner::new(table),
            history: Vec::new(),
        };
        let first = HistoryStep {
            instruction: String::new(),
            commands: Vec::new(),
            clause_errors: Vec::new(),
            command_errors: Vec::new(),
            hash: content_hash(&s.current),
            changed_voxels: 0,
            metrics: s.score(&s.current)?,
        };
        s.history.push(first);
        Ok(s)
    }

    /// Rebuilds a session from a recorded history, replaying it and checking
    /// every hash.
    pub fn restore(
        session_id: impl Into<String>,
        initial: LabelVolume,
        gt: Option<LabelVolume>,
        history: Vec<HistoryStep>,
    ) -> Result<Self> {
        let mut s = Self::new(session_id, initial, gt)?;
        if history.first().map(|h| h.hash.as_str()) != Some(s.hash()) {
            return Err(RefineError::Mismatch("history does not start at the initial volume".into()));
        }
        s.current = replay(&s.initial, &history, s.refiner.table())?;
        s.history = history;
        Ok(s)
    }

    pub fn session_id(&self) -> &str {
        &self.session_id
    }

    pub fn current(&self) -> &LabelVolume {
        &self.current
    }

    pub fn initial(&self) -> &LabelVolume {
        &self.initial
    }

    pub fn gt(&self) -> Option<&LabelVolume> {
        self.gt.as_ref()
    }

    pub fn vocabulary(&self) -> &Vocabulary {
        &self.vocab
    }

    pub fn history(&self) -> &[HistoryStep] {
        &self.history
    }

    pub fn last_step(&self) -> &HistoryStep {
        self.history.last().expect("history always holds the initial entry")
    }

    pub fn hash(&self) -> &str {
        &self.last_step().hash
    }

    fn score(&self, v: &LabelVolume) -> Result<Option<MetricsReport>> {
        match &self.gt {
            Some(g) => Ok(Some(evaluate(v, g, &self.eval)?)),
            None => Ok(None),
        }
    }

    /// Parses `text` and applies its clauses in order.
    pub fn refine_step(&mut self, text: &str) -> Result<&HistoryStep> {
        let parsed = parse_instruction(text, &self.vocab);
        self.apply_parsed(text, &parsed)
    }

    /// Applies already parsed clauses. Failed clauses and failed commands are
    /// recorded without stopping the others. When clauses exist but none
    /// could be applied, the session is left untouched.
    pub fn apply_parsed(&mut self, text: &str, parsed: &ParsedInstruction) -> Result<&HistoryStep> {
        let mut v = self.current.clone();
        let mut refiner = self.refiner.clone();
        let mut applied = Vec::new();
        let mut failures = Vec::new();
        for clause in &parsed.clauses {
            let Some(cmd) = &clause.command else { continue };
            match refiner.apply(&v, cmd) {
                Ok(next) => {
                    v = next;
                    applied.push(cmd.clone());
                }
                Err(e) => failures.push(CommandFailure {
                    clause: clause.index,
                    command: cmd.clone(),
                    message: e.to_string(),
                }),
            }
        }
        let clause_errors = parsed.errors();
        if applied.is_empty() && !parsed.clauses.is_empty() {
            return Err(RefineError::Rejected {
                clause_errors,
                command_errors: failures,
            });
        }
        let step = HistoryStep {
            instruction: text.to_string(),
            commands: applied,
            clause_errors,
            command_errors: failures,
            hash: content_hash(&v),
            changed_voxels: v.changed_voxels(&self.current),
            metrics: self.score(&v)?,
        };
        self.current = v;
        self.refiner = refiner;
        self.history.push(step);
        Ok(self.last_step())
    }

    /// Truncates the history to `history[..=step]` and rebuilds the volume by
    /// replay.
    pub fn rollback(&mut self, step: usize) -> Result<&HistoryStep> {
        if step >= self.history.len() {
            return Err(RefineError::StepOutOfRange {
                step,
                len: self.history.len(),
            });
        }
        let v = replay(&self.initial, &self.history[..=step], self.refiner.table())?;
        self.history.truncate(step + 1);
        self.current = v;
        self.refiner.clear();
        Ok(self.last_step())
    }

    /// Replays the full history and checks it reproduces `current`.
    pub fn verify(&self) -> Result<()> {
        let v = replay(&self.initial, &self.history, self.refiner.table())?;
        if v.labels() != self.current.labels() {
            return Err(RefineError::Mismatch("replayed volume differs from the live one".into()));
        }
        Ok(())
    }
}
