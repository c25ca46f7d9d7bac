use std::collections::HashMap;
use std::io::BufRead;

use super::{CorpusError, EdgeKey, EventKind, EventLog, FollowGraph, MessageEvent, MessageId, UserId};
use crate::diag::Diagnostics;

const SOURCE: &str = "corpus";

fn records<R: BufRead>(reader: R) -> impl Iterator<Item = Result<(usize, String), CorpusError>> {
    reader
        .lines()
        .enumerate()
        .map(|(i, line)| line.map(|l| (i + 1, l)).map_err(CorpusError::from))
        .filter(|r| match r {
            Ok((_, l)) => {
                let t = l.trim();
                !t.is_empty() && !t.starts_with('#')
            }
            Err(_) => true,
        })
}

fn parse_u64(field: &str, what: &str, line: usize) -> Result<u64, CorpusError> {
    field.trim().parse().map_err(|_| CorpusError::Malformed {
        line,
        reason: format!("{what} `{field}` is not an unsigned integer"),
    })
}

/// Reads `followee<TAB>follower` records.
///
/// Duplicates are silently merged; self-loops are dropped with a
/// `self_loop` warning. Blank lines and `#` comments are skipped.
pub fn ingest_follow_graph<R: BufRead>(reader: R, diag: &mut Diagnostics) -> Result<FollowGraph, CorpusError> {
    let mut graph = FollowGraph::new();
    for rec in records(reader) {
        let (line, text) = rec?;
        let mut fields = text.trim_end_matches('\r').split('\t');
        let (Some(a), Some(b), None) = (fields.next(), fields.next(), fields.next()) else {
            return Err(CorpusError::Malformed {
                line,
                reason: "expected `followee<TAB>follower`".into(),
            });
        };
        let edge = EdgeKey::new(parse_u64(a, "followee id", line)?, parse_u64(b, "follower id", line)?);
        if edge.followee == edge.follower {
            diag.warn(SOURCE, "self_loop", format!("line {line}: user {} follows itself", edge.followee));
            continue;
        }
        graph.insert(edge);
    }
    Ok(graph)
}

/// Reads `user<TAB>message<TAB>timestamp<TAB>kind<TAB>source?` records.
///
/// Events are sorted by timestamp (stable on ties). A retweet must reference a
/// message that precedes it in that order; otherwise it is dropped with a
/// `dangling_retweet` warning. Repeated message ids keep their first event and
/// warn `duplicate_message`.
pub fn ingest_message_events<R: BufRead>(reader: R, diag: &mut Diagnostics) -> Result<EventLog, CorpusError> {
    let mut raw = Vec::new();
    for rec in records(reader) {
        let (line, text) = rec?;
        let fields: Vec<&str> = text.trim_end_matches('\r').split('\t').collect();
        if !(4..=5).contains(&fields.len()) {
            return Err(CorpusError::Malformed {
                line,
                reason: format!("expected 4 or 5 tab-separated fields, found {}", fields.len()),
            });
        }
        let user = UserId(parse_u64(fields[0], "user id", line)?);
        let message = MessageId(parse_u64(fields[1], "message id", line)?);
        let timestamp: i64 = fields[2].trim().parse().map_err(|_| CorpusError::Malformed {
            line,
            reason: format!("timestamp `{}` is not an integer", fields[2]),
        })?;
        if timestamp <= 0 {
            return Err(CorpusError::Malformed {
                line,
                reason: format!("timestamp {timestamp} must be positive"),
            });
        }
        let source = fields.get(4).map(|s| s.trim()).filter(|s| !s.is_empty());
        let (kind, source_message) = match (fields[3].trim(), source) {
            ("post", None) => (EventKind::Post, None),
            ("retweet", Some(s)) => (EventKind::Retweet, Some(MessageId(parse_u64(s, "source message id", line)?))),
            ("post", Some(_)) => {
                return Err(CorpusError::Malformed {
                    line,
                    reason: "a post cannot carry a source message".into(),
                })
            }
            ("retweet", None) => {
                return Err(CorpusError::Malformed {
                    line,
                    reason: "a retweet needs a source message".into(),
                })
            }
            (other, _) => {
                return Err(CorpusError::Malformed {
                    line,
                    reason: format!("unknown event kind `{other}`"),
                })
            }
        };
        raw.push(MessageEvent {
            user,
            message,
            timestamp,
            kind,
            source_message,
        });
    }
    raw.sort_by_key(|e| e.timestamp);

    let mut content: HashMap<MessageId, MessageId> = HashMap::with_capacity(raw.len());
    let mut events = Vec::with_capacity(raw.len());
    for ev in raw {
        if content.contains_key(&ev.message) {
            diag.warn(SOURCE, "duplicate_message", format!("message {} seen again", ev.message));
            continue;
        }
        let root = match ev.source_message {
            None => ev.message,
            Some(src) => match content.get(&src) {
                Some(&root) => root,
                None => {
                    diag.warn(
                        SOURCE,
                        "dangling_retweet",
                        format!("retweet {} references unknown message {src}", ev.message),
                    );
                    continue;
                }
            },
        };
        content.insert(ev.message, root);
        events.push(ev);
    }
    Ok(EventLog { events, content })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn duplicate_edges_collapse() {
        let mut diag = Diagnostics::new();
        let g = ingest_follow_graph("1\t2\n1\t2\n2\t3\n".as_bytes(), &mut diag).unwrap();
        assert_eq!(g.len(), 2);
        assert!(diag.is_empty());
    }

    #[test]
    fn self_loop_warns() {
        let mut diag = Diagnostics::new();
        let g = ingest_follow_graph("5\t5\n".as_bytes(), &mut diag).unwrap();
        assert_eq!(g.len(), 0);
        assert_eq!(diag.count("self_loop"), 1);
    }

    #[test]
    fn empty_stream_is_valid() {
        let mut diag = Diagnostics::new();
        assert!(ingest_follow_graph("".as_bytes(), &mut diag).unwrap().is_empty());
        assert!(ingest_message_events("".as_bytes(), &mut diag).unwrap().is_empty());
    }

    #[test]
    fn malformed_record_reports_line() {
        let mut diag = Diagnostics::new();
        let err = ingest_follow_graph("1\t2\n# note\n1 2\n".as_bytes(), &mut diag).unwrap_err();
        assert!(matches!(err, CorpusError::Malformed { line: 3, .. }), "{err}");
        let err = ingest_follow_graph("1\tx\n".as_bytes(), &mut diag).unwrap_err();
        assert!(matches!(err, CorpusError::Malformed { line: 1, .. }));
    }

    #[test]
    fn events_sorted_by_timestamp() {
        let mut diag = Diagnostics::new();
        let log = ingest_message_events("1\t10\t50\tpost\n2\t11\t20\tpost\n".as_bytes(), &mut diag).unwrap();
        let ts: Vec<_> = log.events().iter().map(|e| e.timestamp).collect();
        assert_eq!(ts, vec![20, 50]);
    }

    #[test]
    fn dangling_retweet_dropped() {
        let mut diag = Diagnostics::new();
        let log = ingest_message_events("1\t10\t5\tpost\n2\t11\t9\tretweet\t99\n".as_bytes(), &mut diag).unwrap();
        assert_eq!(log.len(), 1);
        assert_eq!(diag.count("dangling_retweet"), 1);
    }

    #[test]
    fn retweet_chains_resolve_to_original() {
        let mut diag = Diagnostics::new();
        let text = "1\t10\t5\tpost\n2\t11\t9\tretweet\t10\n3\t12\t12\tretweet\t11\n";
        let log = ingest_message_events(text.as_bytes(), &mut diag).unwrap();
        assert_eq!(log.content_of(MessageId(12)), Some(MessageId(10)));
        assert_eq!(log.content_of(MessageId(10)), Some(MessageId(10)));
    }

    #[test]
    fn bad_timestamp_is_an_error() {
        let mut diag = Diagnostics::new();
        let err = ingest_message_events("1\t10\tnoon\tpost\n".as_bytes(), &mut diag).unwrap_err();
        assert!(matches!(err, CorpusError::Malformed { line: 1, .. }));
        assert!(ingest_message_events("1\t10\t0\tpost\n".as_bytes(), &mut diag).is_err());
        assert!(ingest_message_events("1\t10\t3\tshare\n".as_bytes(), &mut diag).is_err());
        assert!(ingest_message_events("1\t10\t3\tretweet\n".as_bytes(), &mut diag).is_err());
    }

    #[test]
    fn repeated_message_id_keeps_first() {
        let mut diag = Diagnostics::new();
        let log = ingest_message_events("1\t10\t5\tpost\n2\t10\t7\tpost\n".as_bytes(), &mut diag).unwrap();
        assert_eq!(log.len(), 1);
        assert_eq!(log.events()[0].user, UserId(1));
        assert_eq!(diag.count("duplicate_message"), 1);
    }
}
