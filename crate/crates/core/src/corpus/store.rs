//! Line-oriented persistence for [`ExampleSet`].
//!
//! ```text
//! cascadecay-examples v1
//! time_unit<TAB>3600
//! edges<TAB><n>
//! <followee><TAB><follower><TAB><count>        (n lines, in edge order)
//! <message><TAB><exposure><TAB><0|1><TAB><latency|-><TAB><response|->
//! ...                                          (examples, grouped in edge order)
//! ```
//!
//! Comment lines starting with `#` may precede the first line. Floats are
//! written in Rust's shortest round-trip form, so loading a saved set
//! reproduces it exactly.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};

use super::{CorpusError, EdgeKey, EventKind, Example, ExampleSet, MessageEvent, MessageId};

pub const EXAMPLES_HEADER: &str = "cascadecay-examples v1";
const MAGIC: &str = "cascadecay-examples";

pub fn save_examples<W: Write>(set: &ExampleSet, mut sink: W) -> Result<(), CorpusError> {
    writeln!(sink, "{EXAMPLES_HEADER}")?;
    writeln!(sink, "time_unit\t{}", set.time_unit())?;
    writeln!(sink, "edges\t{}", set.num_edges())?;
    for (edge, examples) in set.groups() {
        writeln!(sink, "{}\t{}\t{}", edge.followee, edge.follower, examples.len())?;
    }
    for ex in set.iter() {
        let latency = ex.latency.map_or_else(|| "-".to_string(), |t| t.to_string());
        let response = ex.response_time.map_or_else(|| "-".to_string(), |t| t.to_string());
        writeln!(
            sink,
            "{}\t{}\t{}\t{}\t{}",
            ex.message,
            ex.exposure_time,
            u8::from(ex.label),
            latency,
            response
        )?;
    }
    sink.flush()?;
    Ok(())
}

pub fn load_examples<R: BufRead>(source: R) -> Result<ExampleSet, CorpusError> {
    let mut lines = source.lines().enumerate().map(|(i, l)| l.map(|l| (i + 1, l)));
    let mut next = |what: &str| -> Result<(usize, String), CorpusError> {
        match lines.next() {
            Some(r) => Ok(r?),
            None => Err(CorpusError::CorruptHeader(format!("file ends before {what}"))),
        }
    };

    let mut magic = next("the version line")?.1;
    while magic.starts_with('#') {
        magic = next("the version line")?.1;
    }
    if magic != EXAMPLES_HEADER {
        return Err(if magic.starts_with(MAGIC) {
            CorpusError::IncompatibleVersion {
                expected: EXAMPLES_HEADER.into(),
                found: magic,
            }
        } else {
            CorpusError::CorruptHeader(format!("unrecognized first line `{magic}`"))
        });
    }
    let (_, unit_line) = next("the time unit")?;
    let time_unit: f64 = header_value(&unit_line, "time_unit")?;
    let (_, edges_line) = next("the edge count")?;
    let n_edges: usize = header_value(&edges_line, "edges")?;

    let mut layout = Vec::with_capacity(n_edges);
    for _ in 0..n_edges {
        let (line, text) = next("the edge table")?;
        let f: Vec<&str> = text.split('\t').collect();
        if f.len() != 3 {
            return Err(malformed(line, "edge rows have 3 fields"));
        }
        let edge = EdgeKey::new(parse(f[0], line)?, parse(f[1], line)?);
        layout.push((edge, parse::<usize>(f[2], line)?));
    }

    let mut groups = BTreeMap::new();
    for (edge, count) in layout {
        let mut examples = Vec::with_capacity(count);
        for _ in 0..count {
            let (line, text) = next("the declared examples")?;
            examples.push(parse_example(edge, &text, line)?);
        }
        if groups.insert(edge, examples).is_some() {
            return Err(CorpusError::Invalid(format!("edge {edge} listed twice")));
        }
    }
    if let Some(extra) = lines.next() {
        let (line, _) = extra?;
        return Err(malformed(line, "more examples than the edge table declares"));
    }
    ExampleSet::new(time_unit, groups)
}

/// Writes edges in the `followee<TAB>follower` format read by
/// [`ingest_follow_graph`](super::ingest_follow_graph).
pub fn write_follow_graph<'a, W: Write>(edges: impl IntoIterator<Item = &'a EdgeKey>, mut sink: W) -> std::io::Result<()> {
    for e in edges {
        writeln!(sink, "{}\t{}", e.followee, e.follower)?;
    }
    sink.flush()
}

/// Writes events in the format read by
/// [`ingest_message_events`](super::ingest_message_events).
pub fn write_message_events<'a, W: Write>(
    events: impl IntoIterator<Item = &'a MessageEvent>,
    mut sink: W,
) -> std::io::Result<()> {
    for ev in events {
        match (ev.kind, ev.source_message) {
            (EventKind::Retweet, Some(src)) => {
                writeln!(sink, "{}\t{}\t{}\tretweet\t{src}", ev.user, ev.message, ev.timestamp)?
            }
            _ => writeln!(sink, "{}\t{}\t{}\tpost", ev.user, ev.message, ev.timestamp)?,
        }
    }
    sink.flush()
}

fn header_value<T: std::str::FromStr>(line: &str, key: &str) -> Result<T, CorpusError> {
    line.strip_prefix(key)
        .and_then(|rest| rest.strip_prefix('\t'))
        .and_then(|v| v.parse().ok())
        .ok_or_else(|| CorpusError::CorruptHeader(format!("expected `{key}<TAB>value`, found `{line}`")))
}

fn malformed(line: usize, reason: &str) -> CorpusError {
    CorpusError::Malformed {
        line,
        reason: reason.into(),
    }
}

fn parse<T: std::str::FromStr>(field: &str, line: usize) -> Result<T, CorpusError> {
    field
        .parse()
        .map_err(|_| malformed(line, &format!("cannot parse `{field}`")))
}

fn optional(s: &str) -> Option<&str> {
    (s != "-").then_some(s)
}

fn parse_example(edge: EdgeKey, text: &str, line: usize) -> Result<Example, CorpusError> {
    let f: Vec<&str> = text.split('\t').collect();
    if f.len() != 5 {
        return Err(malformed(line, "example rows have 5 fields"));
    }
    let label = match f[2] {
        "0" => false,
        "1" => true,
        other => return Err(malformed(line, &format!("label `{other}` is not 0 or 1"))),
    };
    Ok(Example {
        edge,
        message: MessageId(parse(f[0], line)?),
        exposure_time: parse(f[1], line)?,
        label,
        latency: optional(f[3]).map(|s| parse(s, line)).transpose()?,
        response_time: optional(f[4]).map(|s| parse(s, line)).transpose()?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> ExampleSet {
        let e = EdgeKey::new(1, 2);
        let empty = EdgeKey::new(3, 1);
        let examples = vec![
            Example {
                edge: e,
                message: MessageId(7),
                exposure_time: 100,
                label: true,
                latency: None,
                response_time: Some(150),
            },
            Example {
                edge: e,
                message: MessageId(8),
                exposure_time: 4000,
                label: false,
                latency: Some(1.0277777777777777),
                response_time: None,
            },
        ];
        ExampleSet::new(3600.0, BTreeMap::from([(e, examples), (empty, vec![])])).unwrap()
    }

    fn round_trip(set: &ExampleSet) -> (Vec<u8>, ExampleSet) {
        let mut buf = Vec::new();
        save_examples(set, &mut buf).unwrap();
        let loaded = load_examples(buf.as_slice()).unwrap();
        (buf, loaded)
    }

    #[test]
    fn round_trip_keeps_undefined_latency_and_empty_edges() {
        let set = sample();
        assert_eq!(round_trip(&set).1, set);
    }

    #[test]
    fn empty_set_is_header_only() {
        let set = ExampleSet::empty(3600.0);
        let (bytes, loaded) = round_trip(&set);
        assert_eq!(String::from_utf8(bytes).unwrap(), "cascadecay-examples v1\ntime_unit\t3600\nedges\t0\n");
        assert_eq!(loaded, set);
    }

    #[test]
    fn leading_comments_are_skipped() {
        let text = "# produced elsewhere\n# second\ncascadecay-examples v1\ntime_unit\t3600\nedges\t0\n";
        assert_eq!(load_examples(text.as_bytes()).unwrap(), ExampleSet::empty(3600.0));
    }

    #[test]
    fn version_mismatch_is_explicit() {
        let text = "cascadecay-examples v2\ntime_unit\t3600\nedges\t0\n";
        assert!(matches!(
            load_examples(text.as_bytes()),
            Err(CorpusError::IncompatibleVersion { .. })
        ));
    }

    #[test]
    fn corrupted_header_is_an_error() {
        for text in ["", "garbage\n", "cascadecay-examples v1\ntime_unit\tabc\nedges\t0\n", "cascadecay-examples v1\n"] {
            assert!(
                matches!(load_examples(text.as_bytes()), Err(CorpusError::CorruptHeader(_))),
                "{text:?}"
            );
        }
    }

    #[test]
    fn truncated_or_padded_bodies_fail() {
        let mut buf = Vec::new();
        save_examples(&sample(), &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let truncated: String = text.lines().take(5).map(|l| format!("{l}\n")).collect();
        assert!(load_examples(truncated.as_bytes()).is_err());
        let padded = format!("{text}9\t9\t0\t-\t-\n");
        assert!(load_examples(padded.as_bytes()).is_err());
    }
}
