use std::sync::OnceLock;

use regex::Regex;

use crate::corpus::{Segment, Segmentation};
use crate::error::{Error, Result};

use super::ActionVocab;

/// Lowercase with everything but ASCII letters and digits removed.
pub fn normalize_action(s: &str) -> String {
    s.chars()
        .filter(|c| c.is_ascii_alphanumeric())
        .map(|c| c.to_ascii_lowercase())
        .collect()
}

fn clean(s: &str) -> String {
    s.trim()
        .trim_end_matches(',')
        .trim()
        .trim_matches(|c| c == '"' || c == '\'')
        .trim()
        .to_string()
}

fn split_items(s: &str) -> Vec<String> {
    s.trim()
        .trim_end_matches(',')
        .trim_matches(|c: char| c == '[' || c == ']' || c.is_whitespace())
        .split(',')
        .map(|x| clean(x).trim_end_matches('.').to_string())
        .filter(|x| !x.is_empty())
        .collect()
}

fn record_pairs(text: &str) -> Result<Vec<(String, Vec<String>)>> {
    static SUMMARY: OnceLock<Regex> = OnceLock::new();
    static ACTIONS: OnceLock<Regex> = OnceLock::new();
    let summary =
        SUMMARY.get_or_init(|| Regex::new(r#"(?i)["']?summary[ _]action[ _]str["']?\s*:\s*(.*)$"#).unwrap());
    let actions =
        ACTIONS.get_or_init(|| Regex::new(r#"(?i)["']?robot[ _]actions[ _]str["']?\s*:\s*(.*)$"#).unwrap());
    let mut out: Vec<(String, Vec<String>)> = Vec::new();
    let mut pending: Option<String> = None;
    for line in text.lines() {
        if let Some(c) = summary.captures(line) {
            if pending.is_some() {
                return Err(Error::Parse("summary without actions".into()));
            }
            pending = Some(clean(&c[1]));
        } else if let Some(c) = actions.captures(line) {
            let ann = pending
                .take()
                .ok_or_else(|| Error::Parse("actions without a summary".into()))?;
            out.push((ann, split_items(&c[1])));
        }
    }
    if pending.is_some() {
        return Err(Error::Parse("last summary has no actions".into()));
    }
    Ok(out)
}

fn json_records(text: &str) -> Option<Vec<(String, Vec<String>)>> {
    let start = text.find('[')?;
    let end = text.rfind(']')?;
    let v: serde_json::Value = serde_json::from_str(text.get(start..=end)?).ok()?;
    let mut out = Vec::new();
    for rec in v.as_array()? {
        let obj = rec.as_object()?;
        let get = |keys: &[&str]| keys.iter().find_map(|k| obj.get(*k));
        let ann = get(&["summary_action_str", "summary action str"])?.as_str()?.to_string();
        let acts = match get(&["robot_actions_str", "robot actions str"])? {
            serde_json::Value::String(s) => split_items(s),
            serde_json::Value::Array(a) => a
                .iter()
                .map(|x| x.as_str().map(|s| s.to_string()))
                .collect::<Option<Vec<_>>>()?,
            _ => return None,
        };
        out.push((ann, acts));
    }
    Some(out)
}

fn dict_pairs(text: &str) -> Result<Vec<(String, Vec<String>)>> {
    let open = text
        .find('{')
        .ok_or_else(|| Error::Parse("no dictionary or record list found".into()))?;
    let close = text.rfind('}').filter(|&c| c > open).unwrap_or(text.len());
    let body = &text[open + 1..close];
    let mut out = Vec::new();
    for chunk in body.split(']') {
        let chunk = chunk.trim().trim_start_matches(',').trim();
        if chunk.is_empty() {
            continue;
        }
        let (desc, list) = match chunk.find('[') {
            Some(i) => (&chunk[..i], &chunk[i + 1..]),
            None => chunk
                .split_once(':')
                .ok_or_else(|| Error::Parse(format!("entry `{chunk}` has no action list")))?,
        };
        let desc = clean(desc.trim().trim_end_matches(':'));
        if desc.is_empty() {
            return Err(Error::Parse(format!("entry `{chunk}` has no description")));
        }
        out.push((desc, split_items(list)));
    }
    Ok(out)
}

/// Ordered (annotation, action names) pairs from either the record-list
/// format or the dictionary format.
pub fn parse_pairs(text: &str) -> Result<Vec<(String, Vec<String>)>> {
    if text.trim().is_empty() {
        return Err(Error::Parse("empty response".into()));
    }
    let lower = text.to_ascii_lowercase();
    let pairs = if lower.contains("summary action str") || lower.contains("summary_action_str") {
        match json_records(text) {
            Some(p) => p,
            None => record_pairs(text)?,
        }
    } else {
        dict_pairs(text)?
    };
    if pairs.is_empty() {
        return Err(Error::Parse("no segments found".into()));
    }
    if let Some((ann, _)) = pairs.iter().find(|(_, a)| a.is_empty()) {
        return Err(Error::Parse(format!("segment `{ann}` lists no actions")));
    }
    Ok(pairs)
}

/// Parses a response into consecutive segments. Whether the segments
/// reproduce the trajectory is left to the validator.
pub fn parse_response(text: &str, vocab: &ActionVocab) -> Result<(Segmentation, Vec<usize>)> {
    let pairs = parse_pairs(text)?;
    let mut segments = Vec::with_capacity(pairs.len());
    let mut ids = Vec::new();
    for (ann, names) in pairs {
        let start = ids.len();
        for n in &names {
            ids.push(vocab.id(n)?);
        }
        segments.push(Segment {
            start,
            end: ids.len() - 1,
            annotation: ann,
        });
    }
    Ok((Segmentation { segments }, ids))
}
