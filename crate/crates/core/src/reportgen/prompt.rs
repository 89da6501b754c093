use serde::{Deserialize, Serialize};

use super::{ReportError, ReportKind, ReportMode};

const TOPICS_BASIC: &str = include_str!("../../assets/prompts/topics_basic.txt");
const TOPICS_ADVANCED: &str = include_str!("../../assets/prompts/topics_advanced.txt");
const OPINIONS_BASIC: &str = include_str!("../../assets/prompts/opinions_basic.txt");
const OPINIONS_ADVANCED: &str = include_str!("../../assets/prompts/opinions_advanced.txt");
const CITY_BASIC: &str = include_str!("../../assets/prompts/city_subevents_basic.txt");
const CITY_ADVANCED: &str = include_str!("../../assets/prompts/city_subevents_advanced.txt");

/// Version tag of the shipped templates, recorded in report manifests.
pub const TEMPLATE_VERSION: &str = "1";

pub fn template(kind: ReportKind, mode: ReportMode) -> &'static str {
    match (kind, mode) {
        (ReportKind::Topics, ReportMode::Basic) => TOPICS_BASIC,
        (ReportKind::Topics, ReportMode::Advanced) => TOPICS_ADVANCED,
        (ReportKind::Opinions, ReportMode::Basic) => OPINIONS_BASIC,
        (ReportKind::Opinions, ReportMode::Advanced) => OPINIONS_ADVANCED,
        (ReportKind::CitySubevents, ReportMode::Basic) => CITY_BASIC,
        (ReportKind::CitySubevents, ReportMode::Advanced) => CITY_ADVANCED,
    }
}

/// Values for the template placeholders.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptParams {
    /// `$E`
    pub event: String,
    /// `$A`
    pub area: String,
    /// `$D`
    pub date_range: String,
    /// `$W`
    pub word_limit: u32,
    /// `$C`
    #[serde(default)]
    pub city: Option<String>,
}

/// One numbered line per post, newlines folded to spaces.
pub fn numbered_posts(texts: &[&str]) -> String {
    texts
        .iter()
        .enumerate()
        .map(|(i, t)| format!("{}. {}", i + 1, t.split_whitespace().collect::<Vec<_>>().join(" ")))
        .collect::<Vec<_>>()
        .join("\n")
}

/// Substitutes `$E`, `$A`, `$D`, `$W` and `$C` in a single pass. For the
/// advanced templates `posts_inline` is appended as numbered lines after a
/// blank line.
pub fn render_prompt(kind: ReportKind, mode: ReportMode, params: &PromptParams, posts_inline: Option<&[&str]>) -> Result<String, ReportError> {
    let text = template(kind, mode);
    let missing = |p: &str| ReportError::Validation(format!("placeholder {p} has no value"));
    let mut out = String::with_capacity(text.len() + 64);
    let mut chars = text.chars().peekable();
    while let Some(c) = chars.next() {
        if c != '$' {
            out.push(c);
            continue;
        }
        let value = match chars.peek() {
            Some('E') => non_empty(&params.event).ok_or_else(|| missing("$E"))?.to_string(),
            Some('A') => non_empty(&params.area).ok_or_else(|| missing("$A"))?.to_string(),
            Some('D') => non_empty(&params.date_range).ok_or_else(|| missing("$D"))?.to_string(),
            Some('W') if params.word_limit > 0 => params.word_limit.to_string(),
            Some('W') => return Err(missing("$W")),
            Some('C') => params.city.as_deref().and_then(non_empty).ok_or_else(|| missing("$C"))?.to_string(),
            _ => {
                out.push('$');
                continue;
            }
        };
        chars.next();
        out.push_str(&value);
    }
    if mode == ReportMode::Advanced {
        if let Some(posts) = posts_inline {
            out.push_str("\n\n");
            out.push_str(&numbered_posts(posts));
        }
    }
    Ok(out)
}

fn non_empty(s: &str) -> Option<&str> {
    let t = s.trim();
    (!t.is_empty()).then_some(t)
}
