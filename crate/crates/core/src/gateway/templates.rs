//! Versioned prompt templates.
//!
//! A template file looks like:
//!
//! ```text
//! [task: analyze_input]
//! version: 1
//! === system
//! ...
//! === user
//! ... {user_prompt} ... {#has_reference}only when set{/has_reference}
//! ```
//!
//! `{name}` is replaced by the variable of that name; rendering fails if the
//! variable is missing. `{#name}...{/name}` keeps its body only when `name` is
//! set to a non-empty value. Any other brace (JSON examples) is left alone.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use crate::error::{Error, Result};

/// Template ids shipped with the crate.
pub mod ids {
    pub const ANALYZE_INPUT: &str = "analyze_input";
    pub const RESOLVE_AMBIGUITIES: &str = "resolve_ambiguities";
    pub const FINALIZE_REPORT: &str = "finalize_report";
    pub const IDENTIFY_TASK: &str = "identify_task";
    pub const PREPARE_PLAN: &str = "prepare_plan";
    pub const LOCATE_REGION: &str = "locate_region";
    pub const INFER_REGION: &str = "infer_region";
    pub const EVALUATE_IMAGE: &str = "evaluate_image";
}

const BUILTIN: &[(&str, &str)] = &[
    (ids::ANALYZE_INPUT, include_str!("../../templates/analyze_input.txt")),
    (
        ids::RESOLVE_AMBIGUITIES,
        include_str!("../../templates/resolve_ambiguities.txt"),
    ),
    (ids::FINALIZE_REPORT, include_str!("../../templates/finalize_report.txt")),
    (ids::IDENTIFY_TASK, include_str!("../../templates/identify_task.txt")),
    (ids::PREPARE_PLAN, include_str!("../../templates/prepare_plan.txt")),
    (ids::LOCATE_REGION, include_str!("../../templates/locate_region.txt")),
    (ids::INFER_REGION, include_str!("../../templates/infer_region.txt")),
    (ids::EVALUATE_IMAGE, include_str!("../../templates/evaluate_image.txt")),
];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Template {
    pub id: String,
    pub version: u32,
    pub system: String,
    pub user: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RenderedPrompt {
    pub system: String,
    pub user: String,
}

impl Template {
    pub fn parse(text: &str) -> Result<Template> {
        let mut lines = text.lines();
        let header = lines.next().unwrap_or_default().trim();
        let id = header
            .strip_prefix("[task:")
            .and_then(|s| s.strip_suffix(']'))
            .map(|s| s.trim().to_string())
            .ok_or_else(|| Error::Config(format!("template header `{header}` malformed")))?;
        let mut version = None;
        let mut section: Option<&str> = None;
        let mut system = String::new();
        let mut user = String::new();
        for line in lines {
            match line.trim_end() {
                "=== system" => section = Some("system"),
                "=== user" => section = Some("user"),
                l if section.is_none() => {
                    if let Some(v) = l.strip_prefix("version:") {
                        version = v.trim().parse().ok();
                    }
                }
                _ => {
                    let buf = if section == Some("system") {
                        &mut system
                    } else {
                        &mut user
                    };
                    buf.push_str(line);
                    buf.push('\n');
                }
            }
        }
        let version =
            version.ok_or_else(|| Error::Config(format!("template `{id}` has no version")))?;
        if user.trim().is_empty() {
            return Err(Error::Config(format!("template `{id}` has no user section")));
        }
        Ok(Template {
            system: format!("[task: {id}]\n{}", system.trim_end()),
            user: user.trim_end().to_string(),
            id,
            version,
        })
    }

    pub fn render(&self, vars: &BTreeMap<String, String>) -> Result<RenderedPrompt> {
        Ok(RenderedPrompt {
            system: render_text(&self.id, &self.system, vars)?,
            user: render_text(&self.id, &self.user, vars)?,
        })
    }
}

fn is_ident(s: &str) -> bool {
    !s.is_empty() && s.bytes().all(|b| b.is_ascii_lowercase() || b == b'_' || b.is_ascii_digit())
}

fn render_text(id: &str, text: &str, vars: &BTreeMap<String, String>) -> Result<String> {
    let mut out = String::with_capacity(text.len());
    let mut rest = text;
    while let Some(open) = rest.find('{') {
        out.push_str(&rest[..open]);
        let after = &rest[open + 1..];
        let Some(close) = after.find('}') else {
            out.push_str(&rest[open..]);
            return Ok(out);
        };
        let token = &after[..close];
        if let Some(name) = token.strip_prefix('#').filter(|n| is_ident(n)) {
            let end_tag = format!("{{/{name}}}");
            let body_start = &after[close + 1..];
            let end = body_start.find(&end_tag).ok_or_else(|| {
                Error::Config(format!("template `{id}`: unclosed block `{name}`"))
            })?;
            let enabled = vars.get(name).is_some_and(|v| !v.trim().is_empty());
            if enabled {
                out.push_str(&render_text(id, &body_start[..end], vars)?);
            }
            rest = &body_start[end + end_tag.len()..];
        } else if is_ident(token) {
            let value = vars.get(token).ok_or_else(|| {
                Error::validation(format!("template `{id}` needs variable `{token}`"))
            })?;
            out.push_str(value);
            rest = &after[close + 1..];
        } else {
            out.push('{');
            rest = after;
        }
    }
    out.push_str(rest);
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct TemplateSet {
    templates: HashMap<String, Template>,
}

impl TemplateSet {
    pub fn builtin() -> TemplateSet {
        let templates = BUILTIN
            .iter()
            .map(|(id, text)| {
                let t = Template::parse(text).expect("builtin template parses");
                debug_assert_eq!(&t.id, id);
                (t.id.clone(), t)
            })
            .collect();
        TemplateSet { templates }
    }

    /// Builtin templates, with any `<id>.txt` in `dir` taking precedence.
    pub fn with_overrides(dir: &Path) -> Result<TemplateSet> {
        let mut set = TemplateSet::builtin();
        for (id, _) in BUILTIN {
            let path = dir.join(format!("{id}.txt"));
            if path.exists() {
                let t = Template::parse(&std::fs::read_to_string(&path)?)?;
                if t.id != *id {
                    return Err(Error::Config(format!(
                        "{} declares task `{}`",
                        path.display(),
                        t.id
                    )));
                }
                set.templates.insert(t.id.clone(), t);
            }
        }
        Ok(set)
    }

    pub fn get(&self, id: &str) -> Result<&Template> {
        self.templates
            .get(id)
            .ok_or_else(|| Error::validation(format!("unknown template `{id}`")))
    }
}

/// Pull the task id out of a rendered system prompt.
pub fn task_marker(system: &str) -> Option<&str> {
    let line = system.lines().next()?;
    line.strip_prefix("[task:")?.strip_suffix(']').map(str::trim)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vars(pairs: &[(&str, &str)]) -> BTreeMap<String, String> {
        pairs
            .iter()
            .map(|(k, v)| (k.to_string(), v.to_string()))
            .collect()
    }

    const T: &str = "[task: demo]\nversion: 3\n=== system\nsys {level}\n=== user\nP={p} {\"json\": 1}{#extra}\nExtra: {extra}{/extra}\nend";

    #[test]
    fn parses_and_renders() {
        let t = Template::parse(T).unwrap();
        assert_eq!(t.id, "demo");
        assert_eq!(t.version, 3);
        let r = t
            .render(&vars(&[("level", "LOW"), ("p", "cat"), ("extra", "more")]))
            .unwrap();
        assert_eq!(r.system, "[task: demo]\nsys LOW");
        assert_eq!(r.user, "P=cat {\"json\": 1}\nExtra: more\nend");
        assert_eq!(task_marker(&r.system), Some("demo"));
    }

    #[test]
    fn optional_block_dropped_when_absent() {
        let t = Template::parse(T).unwrap();
        let r = t.render(&vars(&[("level", "LOW"), ("p", "cat")])).unwrap();
        assert_eq!(r.user, "P=cat {\"json\": 1}\nend");
        assert!(!r.user.contains("Extra"));
    }

    #[test]
    fn missing_variable_is_an_error() {
        let t = Template::parse(T).unwrap();
        assert!(t.render(&vars(&[("level", "LOW")])).is_err());
    }

    #[test]
    fn builtins_load() {
        let set = TemplateSet::builtin();
        for (id, _) in BUILTIN {
            assert_eq!(set.get(id).unwrap().version, 1);
        }
        assert!(set.get("nope").is_err());
    }
}
