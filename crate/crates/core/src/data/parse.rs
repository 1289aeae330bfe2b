//! Cascade file formats.
//!
//! * `jsonl`: one object per line,
//!   `{"cascade_id": "...", "root_user": "...", "events": [[src, dst, t], ...]}`.
//!   A `[root, root, t]` entry marks the root post; without one the root is
//!   placed at the earliest event time.
//! * `deephawkes_tsv`: `id<TAB>root<TAB>publish_time<TAB>size<TAB>path:t path:t ...`
//!   where `path` is a slash-separated user chain whose last hop is the new
//!   edge and `t` is the offset from the publish time. Read-only.

use std::io::{BufRead, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::cascade::{Cascade, RetweetEvent};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CascadeFormat {
    Jsonl,
    #[serde(alias = "deephawkes")]
    DeephawkesTsv,
}

impl FromStr for CascadeFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "jsonl" => Ok(Self::Jsonl),
            "deephawkes" | "deephawkes_tsv" | "tsv" => Ok(Self::DeephawkesTsv),
            other => Err(Error::InvalidArgument(format!("unknown cascade format `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct ParsedCascades {
    pub cascades: Vec<Cascade>,
    /// Number of cascades whose events were not time-ordered and got sorted.
    pub reordered: usize,
}

pub fn parse_cascades<R: BufRead>(source: R, format: CascadeFormat) -> Result<ParsedCascades> {
    let mut out = ParsedCascades::default();
    for (i, line) in source.lines().enumerate() {
        let line_no = i + 1;
        let line = line?;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        let (cascade, reordered) = match format {
            CascadeFormat::Jsonl => parse_jsonl_line(trimmed),
            CascadeFormat::DeephawkesTsv => parse_tsv_line(trimmed),
        }
        .map_err(|message| Error::Parse { line: line_no, message })?;
        if reordered {
            out.reordered += 1;
        }
        out.cascades.push(cascade);
    }
    if out.reordered > 0 {
        log::warn!("{} cascade(s) had out-of-order timestamps and were sorted", out.reordered);
    }
    Ok(out)
}

fn user_field(v: &Value) -> std::result::Result<String, String> {
    match v {
        Value::String(s) => Ok(s.clone()),
        Value::Number(n) => Ok(n.to_string()),
        other => Err(format!("expected user identifier, found {other}")),
    }
}

fn parse_jsonl_line(line: &str) -> std::result::Result<(Cascade, bool), String> {
    let v: Value = serde_json::from_str(line).map_err(|e| e.to_string())?;
    let id = v.get("cascade_id").ok_or("missing cascade_id")?;
    let id = user_field(id)?;
    let root = user_field(v.get("root_user").ok_or("missing root_user")?)?;
    let events = v.get("events").and_then(Value::as_array).ok_or("missing events array")?;
    let mut parsed = Vec::with_capacity(events.len());
    for e in events {
        let triple = e.as_array().filter(|a| a.len() == 3).ok_or("event must be [source, target, time]")?;
        let time = triple[2].as_f64().ok_or("event time must be a number")?;
        parsed.push(RetweetEvent::new(user_field(&triple[0])?, user_field(&triple[1])?, time));
    }
    Cascade::from_raw(id, root, parsed, None).map_err(|e| e.to_string())
}

fn parse_tsv_line(line: &str) -> std::result::Result<(Cascade, bool), String> {
    let fields: Vec<&str> = line.split('\t').collect();
    if fields.len() < 5 {
        return Err(format!("expected 5 tab-separated fields, found {}", fields.len()));
    }
    let id = fields[0].trim();
    let root = fields[1].trim();
    let mut events = Vec::new();
    for token in fields[4].split_whitespace() {
        let (path, time) = token.rsplit_once(':').ok_or_else(|| format!("path entry `{token}` lacks `:time`"))?;
        let time: f64 = time.parse().map_err(|_| format!("bad time in `{token}`"))?;
        let users: Vec<&str> = path.split('/').filter(|u| !u.is_empty()).collect();
        match users.as_slice() {
            [] => return Err(format!("empty path in `{token}`")),
            [single] => events.push(RetweetEvent::new(*single, *single, time)),
            [.., src, dst] => events.push(RetweetEvent::new(*src, *dst, time)),
        }
    }
    // Path times are offsets from the publish time, so the root sits at 0.
    Cascade::from_raw(id, root, events, Some(0.0)).map_err(|e| e.to_string())
}

#[derive(Serialize)]
struct JsonlRecord<'a> {
    cascade_id: &'a str,
    root_user: &'a str,
    events: Vec<(&'a str, &'a str, f64)>,
}

pub fn cascade_to_jsonl(c: &Cascade) -> String {
    let rec = JsonlRecord {
        cascade_id: &c.cascade_id,
        root_user: &c.root_user,
        events: c.events.iter().map(|e| (e.source.as_str(), e.target.as_str(), e.time)).collect(),
    };
    serde_json::to_string(&rec).expect("cascade serialises")
}

pub fn write_cascades<W: Write>(mut out: W, cascades: &[Cascade]) -> Result<()> {
    for c in cascades {
        writeln!(out, "{}", cascade_to_jsonl(c))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn jsonl_rebases_to_root() {
        let line = r#"{"cascade_id":"x","root_user":"A","events":[["A","A",100],["A","B",160],["B","C",220]]}"#;
        let p = parse_cascades(line.as_bytes(), CascadeFormat::Jsonl).unwrap();
        let times: Vec<f64> = p.cascades[0].events.iter().map(|e| e.time).collect();
        assert_eq!(times, vec![0.0, 60.0, 120.0]);
    }

    #[test]
    fn jsonl_without_root_event_inserts_one() {
        let line = r#"{"cascade_id":7,"root_user":1,"events":[[1,2,50],[2,3,80]]}"#;
        let c = &parse_cascades(line.as_bytes(), CascadeFormat::Jsonl).unwrap().cascades[0];
        assert_eq!(c.cascade_id, "7");
        assert_eq!(c.events[0], RetweetEvent::new("1", "1", 0.0));
        assert_eq!(c.events[2].time, 30.0);
    }

    #[test]
    fn deephawkes_path_grammar() {
        let line = "42\tA\t1464710400\t2\tA/B:5 A/C:9";
        let c = &parse_cascades(line.as_bytes(), CascadeFormat::DeephawkesTsv).unwrap().cascades[0];
        assert_eq!(
            c.events[1..],
            [RetweetEvent::new("A", "B", 5.0), RetweetEvent::new("A", "C", 9.0)]
        );
        assert_eq!(c.events[0], RetweetEvent::new("A", "A", 0.0));
    }

    #[test]
    fn deephawkes_long_chain_uses_last_hop() {
        let line = "1\tA\t0\t3\tA:0 A/B:3 A/B/D:7";
        let c = &parse_cascades(line.as_bytes(), CascadeFormat::DeephawkesTsv).unwrap().cascades[0];
        assert_eq!(c.events.len(), 3);
        assert_eq!(c.events[2], RetweetEvent::new("B", "D", 7.0));
    }

    #[test]
    fn empty_stream_gives_no_cascades() {
        let p = parse_cascades("".as_bytes(), CascadeFormat::Jsonl).unwrap();
        assert!(p.cascades.is_empty());
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let text = "{\"cascade_id\":\"a\",\"root_user\":\"A\",\"events\":[]}\nnot json\n";
        match parse_cascades(text.as_bytes(), CascadeFormat::Jsonl) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn out_of_order_events_are_sorted_and_counted() {
        let line = r#"{"cascade_id":"x","root_user":"A","events":[["A","A",0],["A","C",9],["A","B",5]]}"#;
        let p = parse_cascades(line.as_bytes(), CascadeFormat::Jsonl).unwrap();
        assert_eq!(p.reordered, 1);
        assert_eq!(p.cascades[0].events[1].target, "B");
    }

    fn arb_cascade() -> impl Strategy<Value = Cascade> {
        (1usize..20, any::<u64>()).prop_flat_map(|(n, seed)| {
            proptest::collection::vec(0.0f64..1e6, n).prop_map(move |mut times| {
                times.sort_by(f64::total_cmp);
                let events = times
                    .iter()
                    .enumerate()
                    .map(|(i, &t)| RetweetEvent::new(format!("u{}", i / 2), format!("v{i}_{seed}"), t))
                    .collect();
                Cascade::from_raw(format!("c{seed}"), "root", events, Some(0.0)).unwrap().0
            })
        })
    }

    proptest! {
        #[test]
        fn jsonl_round_trip(c in arb_cascade()) {
            let text = cascade_to_jsonl(&c);
            let back = parse_cascades(text.as_bytes(), CascadeFormat::Jsonl).unwrap();
            prop_assert_eq!(&back.cascades[0], &c);
        }
    }
}
