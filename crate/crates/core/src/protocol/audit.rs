//! Session transcripts and the mechanical privacy check run over them.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use super::{tags, Message, MessageKind};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Direction {
    ToWorker,
    FromWorker,
}

/// Metadata of one message; payload contents are not retained.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranscriptEntry {
    pub direction: Direction,
    pub worker: usize,
    pub round_id: u64,
    pub kind: MessageKind,
    pub tag: String,
    pub payload_len: usize,
    /// Reply length the center expected, when it expected one.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expected_len: Option<usize>,
}

impl TranscriptEntry {
    pub fn sent(worker: usize, msg: &Message, expected_len: Option<usize>) -> Self {
        Self::from_message(Direction::ToWorker, worker, msg, expected_len)
    }

    pub fn received(worker: usize, msg: &Message, expected_len: Option<usize>) -> Self {
        Self::from_message(Direction::FromWorker, worker, msg, expected_len)
    }

    fn from_message(
        direction: Direction,
        worker: usize,
        msg: &Message,
        expected_len: Option<usize>,
    ) -> Self {
        Self {
            direction,
            worker,
            round_id: msg.round_id,
            kind: msg.kind,
            tag: msg.tag.clone(),
            payload_len: msg.payload.len(),
            expected_len,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct TranscriptHeader {
    feature_count: usize,
    shard_rows: Vec<usize>,
}

/// Everything that crossed the wire during a session.
#[derive(Debug, Clone, PartialEq)]
pub struct Transcript {
    pub feature_count: usize,
    pub shard_rows: Vec<usize>,
    pub entries: Vec<TranscriptEntry>,
}

impl Transcript {
    pub fn new(feature_count: usize, shard_rows: Vec<usize>) -> Self {
        Self {
            feature_count,
            shard_rows,
            entries: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// JSON lines: a header object, then one object per entry.
    pub fn write_jsonl<W: Write>(&self, mut w: W) -> Result<()> {
        let header = TranscriptHeader {
            feature_count: self.feature_count,
            shard_rows: self.shard_rows.clone(),
        };
        serde_json::to_writer(&mut w, &header)?;
        writeln!(w)?;
        for e in &self.entries {
            serde_json::to_writer(&mut w, e)?;
            writeln!(w)?;
        }
        Ok(())
    }

    pub fn read_jsonl<R: BufRead>(r: R) -> Result<Self> {
        let mut lines = r.lines();
        let header: TranscriptHeader = match lines.next() {
            Some(line) => serde_json::from_str(&line?)?,
            None => return Err(Error::Format("empty transcript file".into())),
        };
        let mut t = Transcript::new(header.feature_count, header.shard_rows);
        for line in lines {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            t.entries.push(serde_json::from_str(&line)?);
        }
        Ok(t)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    /// Position of the offending entry in the transcript.
    pub entry: usize,
    pub worker: usize,
    pub round_id: u64,
    pub tag: String,
    pub reasons: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct AuditReport {
    pub messages: usize,
    pub replies: usize,
    pub broadcasts: usize,
    pub violations: Vec<Violation>,
}

impl AuditReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Checks that a transcript only carries aggregate replies and model/control
/// broadcasts.
///
/// A reply is flagged when its tag is not an aggregate symbol, when its
/// length differs from the feature-space length the center asked for, or
/// when it is exactly as long as the sender's row count (a raw column or
/// response). One violation is reported per offending message.
pub fn privacy_audit(transcript: &Transcript) -> AuditReport {
    let mut report = AuditReport {
        messages: transcript.entries.len(),
        ..Default::default()
    };
    for (idx, e) in transcript.entries.iter().enumerate() {
        let mut reasons = Vec::new();
        match e.direction {
            Direction::FromWorker => {
                report.replies += 1;
                let rows = transcript.shard_rows.get(e.worker).copied();
                match e.kind {
                    MessageKind::Error => {}
                    MessageKind::Broadcast => reasons.push("institutions may not broadcast".into()),
                    MessageKind::ScalarSum | MessageKind::VectorSum => {
                        if !tags::AGGREGATE.contains(&e.tag.as_str()) {
                            reasons.push(format!("tag {:?} is not an aggregate symbol", e.tag));
                        }
                        if e.kind == MessageKind::ScalarSum && e.payload_len != 1 {
                            reasons.push(format!("scalar reply carries {} values", e.payload_len));
                        }
                        if e.kind == MessageKind::VectorSum {
                            match e.expected_len {
                                Some(want) if want != e.payload_len => reasons.push(format!(
                                    "reply length {} differs from requested {want}",
                                    e.payload_len
                                )),
                                None => reasons.push("reply to no recorded query".into()),
                                _ => {}
                            }
                        }
                        if rows == Some(e.payload_len)
                            && e.payload_len > 1
                            && e.expected_len != Some(e.payload_len)
                        {
                            reasons.push(format!(
                                "payload length equals the institution's {} rows",
                                e.payload_len
                            ));
                        }
                    }
                }
            }
            Direction::ToWorker => {
                if e.kind == MessageKind::Broadcast {
                    report.broadcasts += 1;
                    if !tags::BROADCAST.contains(&e.tag.as_str()) {
                        reasons.push(format!("unknown broadcast {:?}", e.tag));
                    }
                } else if !tags::AGGREGATE.contains(&e.tag.as_str()) {
                    reasons.push(format!("query for non-aggregate symbol {:?}", e.tag));
                }
            }
        }
        if !reasons.is_empty() {
            report.violations.push(Violation {
                entry: idx,
                worker: e.worker,
                round_id: e.round_id,
                tag: e.tag.clone(),
                reasons,
            });
        }
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;

    fn reply(tag: &str, len: usize, expected: Option<usize>) -> TranscriptEntry {
        TranscriptEntry {
            direction: Direction::FromWorker,
            worker: 0,
            round_id: 1,
            kind: MessageKind::VectorSum,
            tag: tag.into(),
            payload_len: len,
            expected_len: expected,
        }
    }

    #[test]
    fn empty_transcript_passes() {
        let r = privacy_audit(&Transcript::new(10, vec![4, 5]));
        assert!(r.passed());
        assert_eq!(r.messages, 0);
    }

    #[test]
    fn planted_raw_row_is_flagged_once() {
        let mut t = Transcript::new(10, vec![4, 5]);
        t.entries.push(reply(tags::GRADIENT, 10, Some(10)));
        t.entries.push(reply("y", 4, None));
        let r = privacy_audit(&t);
        assert_eq!(r.violations.len(), 1);
        assert_eq!(r.violations[0].entry, 1);
        assert!(r.violations[0].reasons.len() >= 2);
    }

    #[test]
    fn gradient_of_wrong_length_is_flagged() {
        let mut t = Transcript::new(10, vec![4, 5]);
        t.entries.push(reply(tags::GRADIENT, 4, Some(3)));
        assert_eq!(privacy_audit(&t).violations.len(), 1);
    }

    #[test]
    fn jsonl_round_trip() {
        let mut t = Transcript::new(3, vec![2]);
        t.entries.push(reply(tags::CORRELATION, 3, Some(3)));
        let mut buf = Vec::new();
        t.write_jsonl(&mut buf).unwrap();
        let back = Transcript::read_jsonl(&buf[..]).unwrap();
        assert_eq!(back, t);
    }
}
