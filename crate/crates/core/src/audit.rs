//! Append-only audit trail. One record per line:
//! `tick=<u64> comp=<module> ev=<event> k=v ...`.

use std::fmt::Display;

use crate::simnet::Tick;

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct AuditLog {
    lines: Vec<String>,
}

impl AuditLog {
    pub fn new() -> Self {
        AuditLog::default()
    }

    pub fn record(&mut self, tick: Tick, comp: &str, ev: &str, fields: &[(&str, &dyn Display)]) {
        let mut line = format!("tick={tick} comp={comp} ev={ev}");
        for (k, v) in fields {
            line.push(' ');
            line.push_str(k);
            line.push('=');
            let v = v.to_string();
            if v.is_empty() {
                line.push('-');
            } else {
                line.extend(v.chars().map(|c| if c.is_whitespace() { '_' } else { c }));
            }
        }
        self.lines.push(line);
    }

    pub fn lines(&self) -> &[String] {
        &self.lines
    }

    pub fn len(&self) -> usize {
        self.lines.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lines.is_empty()
    }

    pub fn count(&self, comp: &str, ev: &str) -> usize {
        let needle = format!(" comp={comp} ev={ev}");
        self.lines
            .iter()
            .filter(|l| {
                l.find(&needle)
                    .is_some_and(|i| l[i + needle.len()..].is_empty() || l[i + needle.len()..].starts_with(' '))
            })
            .count()
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for l in &self.lines {
            s.push_str(l);
            s.push('\n');
        }
        s
    }
}

/// Parses a record back into `(tick, comp, ev, fields)`.
pub fn parse_line(line: &str) -> Option<(Tick, String, String, Vec<(String, String)>)> {
    let mut parts = line.split(' ');
    let tick = parts.next()?.strip_prefix("tick=")?.parse().ok()?;
    let comp = parts.next()?.strip_prefix("comp=")?.to_string();
    let ev = parts.next()?.strip_prefix("ev=")?.to_string();
    let fields = parts
        .map(|p| {
            let (k, v) = p.split_once('=')?;
            Some((k.to_string(), v.to_string()))
        })
        .collect::<Option<_>>()?;
    Some((tick, comp, ev, fields))
}
