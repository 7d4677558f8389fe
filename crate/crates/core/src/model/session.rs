use std::fmt;

use serde::{Deserialize, Serialize};

use super::ConceptCandidate;

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SessionId(pub String);

impl SessionId {
    pub fn new(id: impl Into<String>) -> Self {
        Self(id.into())
    }
}

impl fmt::Display for SessionId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// Identifier of an edit transaction.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TxId(pub String);

impl fmt::Display for TxId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// Workflow stage of a design session. Ordered by progress.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum SessionState {
    Drafting,
    Generated,
    Decomposed,
    Editing,
}

impl fmt::Display for SessionState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

/// Events that drive the session state machine.
///
/// | state              | event               | next        |
/// |--------------------|---------------------|-------------|
/// | Drafting/Generated | `ConceptsGenerated` | Generated   |
/// | Generated          | `ConceptDecomposed` | Decomposed  |
/// | Decomposed/Editing | `EditAccepted`      | Editing     |
/// | Decomposed/Editing | `EditFailed`        | (unchanged) |
///
/// Everything else is rejected.
#[derive(Debug, Clone, PartialEq)]
pub enum SessionEvent {
    /// Candidates are ready; the first one is the provisional selection.
    ConceptsGenerated { provisional: ConceptCandidate },
    /// The user picked `selected` and its decomposition finished.
    ConceptDecomposed { selected: ConceptCandidate },
    /// An edit committed (pixels changed or metadata only).
    EditAccepted { tx: TxId, candidate: ConceptCandidate },
    /// An edit failed; nothing changes.
    EditFailed { tx: TxId },
}

impl SessionEvent {
    pub fn name(&self) -> &'static str {
        match self {
            Self::ConceptsGenerated { .. } => "ConceptsGenerated",
            Self::ConceptDecomposed { .. } => "ConceptDecomposed",
            Self::EditAccepted { .. } => "EditAccepted",
            Self::EditFailed { .. } => "EditFailed",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum SessionError {
    #[error("event {event} is not allowed in state {state}")]
    InvalidTransition {
        state: SessionState,
        event: &'static str,
    },
    #[error("selected concept has no function-solution pairs")]
    MissingPairs,
    #[error("new concepts must start at version 1, got {0}")]
    BadInitialVersion(u32),
    #[error("edit moved version {from} -> {to}; expected {from} or {}", from + 1)]
    VersionGap { from: u32, to: u32 },
    #[error("metadata-only edit changed the image")]
    ImageChangedWithoutVersion,
}

/// One design session. Values are immutable: [`SessionRecord::transition`]
/// returns the next record and leaves `self` untouched.
#[derive(Debug, Clone, PartialEq)]
pub struct SessionRecord {
    pub session_id: SessionId,
    pub state: SessionState,
    pub selected: Option<ConceptCandidate>,
    /// Accepted edit transactions, oldest first.
    pub history: Vec<TxId>,
}

impl SessionRecord {
    pub fn new(session_id: SessionId) -> Self {
        Self {
            session_id,
            state: SessionState::Drafting,
            selected: None,
            history: Vec::new(),
        }
    }

    /// Whether `event` would be accepted in the current state, ignoring its
    /// payload.
    pub fn allows(state: SessionState, event: &str) -> bool {
        use SessionState::*;
        matches!(
            (state, event),
            (Drafting | Generated, "ConceptsGenerated")
                | (Generated, "ConceptDecomposed")
                | (Decomposed | Editing, "EditAccepted" | "EditFailed")
        )
    }

    pub fn transition(&self, event: SessionEvent) -> Result<SessionRecord, SessionError> {
        if !Self::allows(self.state, event.name()) {
            return Err(SessionError::InvalidTransition {
                state: self.state,
                event: event.name(),
            });
        }
        let mut next = self.clone();
        match event {
            SessionEvent::ConceptsGenerated { provisional } => {
                if provisional.version != 1 {
                    return Err(SessionError::BadInitialVersion(provisional.version));
                }
                next.state = SessionState::Generated;
                next.selected = Some(provisional);
            }
            SessionEvent::ConceptDecomposed { selected } => {
                if selected.version != 1 {
                    return Err(SessionError::BadInitialVersion(selected.version));
                }
                if selected.pairs.is_empty() {
                    return Err(SessionError::MissingPairs);
                }
                next.state = SessionState::Decomposed;
                next.selected = Some(selected);
            }
            SessionEvent::EditAccepted { tx, candidate } => {
                let prev = self.selected.as_ref().expect("selected is set once generated");
                if candidate.version == prev.version {
                    if candidate.image.content_hash() != prev.image.content_hash() {
                        return Err(SessionError::ImageChangedWithoutVersion);
                    }
                } else if candidate.version != prev.version + 1 {
                    return Err(SessionError::VersionGap {
                        from: prev.version,
                        to: candidate.version,
                    });
                }
                next.state = SessionState::Editing;
                next.selected = Some(candidate);
                next.history.push(tx);
            }
            SessionEvent::EditFailed { .. } => {}
        }
        Ok(next)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{DesignBrief, FunctionSolutionPair, RasterImage};
    use proptest::prelude::*;

    fn candidate(version: u32, shade: u8) -> ConceptCandidate {
        ConceptCandidate {
            image: RasterImage::filled(4, 4, [shade, shade, shade, 255]),
            brief: DesignBrief::default(),
            pairs: vec![FunctionSolutionPair::new("wheel size", "19 inches")],
            version,
        }
    }

    fn tx(n: u32) -> TxId {
        TxId(format!("tx-{n}"))
    }

    #[test]
    fn drafting_to_generated() {
        let s = SessionRecord::new(SessionId::new("s"));
        let s = s
            .transition(SessionEvent::ConceptsGenerated {
                provisional: candidate(1, 0),
            })
            .unwrap();
        assert_eq!(s.state, SessionState::Generated);
        assert!(s.selected.is_some());
    }

    #[test]
    fn edit_in_drafting_is_rejected() {
        let s = SessionRecord::new(SessionId::new("s"));
        let err = s
            .transition(SessionEvent::EditAccepted {
                tx: tx(1),
                candidate: candidate(2, 0),
            })
            .unwrap_err();
        assert_eq!(
            err,
            SessionError::InvalidTransition {
                state: SessionState::Drafting,
                event: "EditAccepted"
            }
        );
        assert_eq!(err.to_string(), "event EditAccepted is not allowed in state Drafting");
    }

    #[test]
    fn replay_recorded_log() {
        // Hand-walked through the table: G, G, D, E(+1), E(fail), E(+1).
        let log = vec![
            SessionEvent::ConceptsGenerated {
                provisional: candidate(1, 0),
            },
            SessionEvent::ConceptsGenerated {
                provisional: candidate(1, 10),
            },
            SessionEvent::ConceptDecomposed {
                selected: candidate(1, 20),
            },
            SessionEvent::EditAccepted {
                tx: tx(1),
                candidate: candidate(2, 30),
            },
            SessionEvent::EditFailed { tx: tx(2) },
            SessionEvent::EditAccepted {
                tx: tx(3),
                candidate: candidate(3, 40),
            },
        ];
        let end = log
            .into_iter()
            .try_fold(SessionRecord::new(SessionId::new("s")), |s, e| s.transition(e))
            .unwrap();
        assert_eq!(end.state, SessionState::Editing);
        assert_eq!(end.history, vec![tx(1), tx(3)]);
        assert_eq!(end.selected.unwrap().version, 3);
    }

    #[test]
    fn version_gap_is_rejected() {
        let s = SessionRecord::new(SessionId::new("s"))
            .transition(SessionEvent::ConceptsGenerated {
                provisional: candidate(1, 0),
            })
            .unwrap()
            .transition(SessionEvent::ConceptDecomposed {
                selected: candidate(1, 0),
            })
            .unwrap();
        assert!(matches!(
            s.transition(SessionEvent::EditAccepted {
                tx: tx(1),
                candidate: candidate(3, 9)
            }),
            Err(SessionError::VersionGap { from: 1, to: 3 })
        ));
        assert_eq!(
            s.transition(SessionEvent::EditAccepted {
                tx: tx(1),
                candidate: candidate(1, 9)
            }),
            Err(SessionError::ImageChangedWithoutVersion)
        );
    }

    #[test]
    fn decomposition_requires_pairs() {
        let mut c = candidate(1, 0);
        c.pairs.clear();
        let s = SessionRecord::new(SessionId::new("s"))
            .transition(SessionEvent::ConceptsGenerated {
                provisional: candidate(1, 0),
            })
            .unwrap();
        assert_eq!(
            s.transition(SessionEvent::ConceptDecomposed { selected: c }),
            Err(SessionError::MissingPairs)
        );
    }

    fn arb_event() -> impl Strategy<Value = (u8, u8)> {
        (0u8..4, any::<u8>())
    }

    proptest! {
        #[test]
        fn fuzzed_events_respect_table(seq in proptest::collection::vec(arb_event(), 0..40)) {
            let mut s = SessionRecord::new(SessionId::new("fuzz"));
            let mut n = 0;
            for (kind, shade) in seq {
                n += 1;
                let version = s.selected.as_ref().map_or(1, |c| c.version + 1);
                let ev = match kind {
                    0 => SessionEvent::ConceptsGenerated { provisional: candidate(1, shade) },
                    1 => SessionEvent::ConceptDecomposed { selected: candidate(1, shade) },
                    2 => SessionEvent::EditAccepted { tx: tx(n), candidate: candidate(version, shade) },
                    _ => SessionEvent::EditFailed { tx: tx(n) },
                };
                let legal = SessionRecord::allows(s.state, ev.name());
                match s.transition(ev) {
                    Ok(next) => {
                        prop_assert!(legal);
                        prop_assert!(next.state >= s.state);
                        prop_assert!(next.history.len() >= s.history.len());
                        prop_assert_eq!(next.selected.is_some(), next.state >= SessionState::Generated);
                        s = next;
                    }
                    Err(_) => prop_assert!(!legal),
                }
            }
            if let Some(c) = &s.selected {
                // versions are gapless: every accepted edit here bumps once
                prop_assert_eq!(c.version as usize, 1 + s.history.len());
            }
        }
    }
}
