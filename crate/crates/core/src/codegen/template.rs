//! `%(name)` string-replacement templates.

use std::collections::{BTreeMap, BTreeSet};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Template {
    pub name: String,
    pub body: String,
    pub required_blocks: Vec<String>,
}

impl Template {
    pub fn new(name: &str, body: &str, required_blocks: &[&str]) -> Template {
        Template {
            name: name.to_string(),
            body: body.to_string(),
            required_blocks: required_blocks.iter().map(|s| s.to_string()).collect(),
        }
    }

    /// Placeholder names in order of first appearance.
    pub fn placeholders(&self) -> Result<Vec<String>> {
        let mut seen = BTreeSet::new();
        let mut out = Vec::new();
        for piece in split(&self.body)? {
            if let Piece::Hole(name) = piece {
                if seen.insert(name) {
                    out.push(name.to_string());
                }
            }
        }
        Ok(out)
    }
}

enum Piece<'a> {
    Text(&'a str),
    Hole(&'a str),
}

fn split(body: &str) -> Result<Vec<Piece<'_>>> {
    let mut out = Vec::new();
    let mut rest = body;
    while let Some(start) = rest.find("%(") {
        out.push(Piece::Text(&rest[..start]));
        let after = &rest[start + 2..];
        let end = after
            .find(')')
            .ok_or_else(|| Error::Template(format!("unterminated placeholder near `{}`", &rest[start..])))?;
        let name = &after[..end];
        if name.is_empty() || !name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_') {
            return Err(Error::Template(format!("malformed placeholder `%({name})`")));
        }
        out.push(Piece::Hole(name));
        rest = &after[end + 1..];
    }
    out.push(Piece::Text(rest));
    Ok(out)
}

/// Substitute every `%(name)` in `t.body` from `consts` or `blocks`.
///
/// Multi-line blocks are re-indented to the column of their placeholder.
pub fn expand_template(t: &Template, consts: &BTreeMap<String, String>, blocks: &BTreeMap<String, String>) -> Result<String> {
    if let Some(missing) = t.required_blocks.iter().find(|b| !blocks.contains_key(*b)) {
        return Err(Error::UnboundPlaceholder(missing.clone()));
    }
    let mut out = String::with_capacity(t.body.len() * 2);
    for piece in split(&t.body)? {
        match piece {
            Piece::Text(s) => out.push_str(s),
            Piece::Hole(name) => {
                let value = consts
                    .get(name)
                    .or_else(|| blocks.get(name))
                    .ok_or_else(|| Error::UnboundPlaceholder(name.to_string()))?;
                let indent: String = out
                    .rsplit('\n')
                    .next()
                    .unwrap_or("")
                    .chars()
                    .take_while(|c| *c == ' ')
                    .collect();
                let mut lines = value.trim_end_matches('\n').split('\n');
                if let Some(first) = lines.next() {
                    out.push_str(first);
                }
                for line in lines {
                    out.push('\n');
                    if !line.is_empty() {
                        out.push_str(&indent);
                    }
                    out.push_str(line);
                }
            }
        }
    }
    if out.contains("%(") {
        return Err(Error::Template(format!(
            "expansion of `{}` left a residual placeholder",
            t.name
        )));
    }
    Ok(out)
}

/// Convenience map builder: `vars(&[("K", 147.to_string())])`.
pub fn vars<V: ToString>(pairs: &[(&str, V)]) -> BTreeMap<String, String> {
    pairs.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect()
}
