//! Numbered-list parser for model output.
//!
//! Accepted line shapes (anything else is ignored):
//!
//! ```text
//! 1. Title - Category
//! 1) Title — Category
//! 1. Title (Category)
//! ```
//!
//! The number may be followed by `.` or `)`. Dash forms split on the last
//! ` - ` or ` — `, so titles may contain dashes. A title wrapped in double
//! quotes or `**` has the wrapper removed.

use thiserror::Error;

use crate::corpus::{Domain, Item};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ParseError {
    #[error("unparseable: no numbered `title - category` lines")]
    Unparseable,
    #[error("short list: found {found} of {k} items")]
    ShortList { found: usize, k: usize },
}

fn strip_number(line: &str) -> Option<&str> {
    let line = line.trim_start();
    let digits = line.bytes().take_while(u8::is_ascii_digit).count();
    if digits == 0 {
        return None;
    }
    let rest = &line[digits..];
    let rest = rest.strip_prefix('.').or_else(|| rest.strip_prefix(')'))?;
    // require whitespace after the marker so "1.5 million" is not a list item
    if !rest.starts_with(char::is_whitespace) {
        return None;
    }
    Some(rest.trim())
}

fn unwrap_title(title: &str) -> &str {
    for wrap in ["**", "\""] {
        if title.len() >= 2 * wrap.len() && title.starts_with(wrap) && title.ends_with(wrap) {
            return title[wrap.len()..title.len() - wrap.len()].trim();
        }
    }
    title
}

fn parse_line(line: &str) -> Option<(String, String)> {
    let rest = strip_number(line)?;
    let dash = [" - ", " — "]
        .iter()
        .filter_map(|sep| rest.rfind(sep).map(|i| (i, sep.len())))
        .max_by_key(|&(i, _)| i);
    let (title, category) = if let Some((i, len)) = dash {
        (&rest[..i], &rest[i + len..])
    } else if rest.ends_with(')') {
        let open = rest.rfind('(')?;
        (&rest[..open], &rest[open + 1..rest.len() - 1])
    } else {
        return None;
    };
    let title = unwrap_title(title.trim());
    let category = category.trim();
    if title.is_empty() || category.is_empty() {
        return None;
    }
    Some((title.to_string(), category.to_string()))
}

/// Extract the first `k` items from a numbered list.
pub fn parse_ranking(text: &str, k: usize, domain: Domain) -> Result<Vec<Item>, ParseError> {
    let mut items: Vec<Item> = text
        .lines()
        .filter_map(parse_line)
        .map(|(title, category)| Item {
            title,
            category,
            domain,
        })
        .collect();
    if items.is_empty() {
        return Err(ParseError::Unparseable);
    }
    if items.len() < k {
        return Err(ParseError::ShortList {
            found: items.len(),
            k,
        });
    }
    items.truncate(k);
    Ok(items)
}

/// Render items in the canonical `N. Title - Category` form.
pub fn format_ranking(items: &[Item]) -> String {
    items
        .iter()
        .enumerate()
        .map(|(i, it)| format!("{}. {} - {}", i + 1, it.title, it.category))
        .collect::<Vec<_>>()
        .join("\n")
}

/// Case- and whitespace-insensitive title key used to match model output
/// against candidates.
pub fn normalize_title(title: &str) -> String {
    unwrap_title(title.trim())
        .split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
        .to_lowercase()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn pairs(items: &[Item]) -> Vec<(&str, &str)> {
        items
            .iter()
            .map(|i| (i.title.as_str(), i.category.as_str()))
            .collect()
    }

    #[test]
    fn canonical_form() {
        let text = "1. Election Update - Politics\n2. Gallery Opening - Art";
        let items = parse_ranking(text, 2, Domain::News).unwrap();
        assert_eq!(
            pairs(&items),
            [("Election Update", "Politics"), ("Gallery Opening", "Art")]
        );
    }

    #[test]
    fn other_shapes() {
        let text = "1) Title One — Sports\n2. Title Two (Health)\n3. A - B - Life";
        let items = parse_ranking(text, 3, Domain::News).unwrap();
        assert_eq!(
            pairs(&items),
            [
                ("Title One", "Sports"),
                ("Title Two", "Health"),
                ("A - B", "Life")
            ]
        );
    }

    #[test]
    fn truncates_extras() {
        let text: String = (1..=25).map(|i| format!("{i}. T{i} - C\n")).collect();
        let items = parse_ranking(&text, 20, Domain::Job).unwrap();
        assert_eq!(items.len(), 20);
        assert_eq!(items[19].title, "T20");
    }

    #[test]
    fn errors() {
        assert_eq!(
            parse_ranking("1. A - B", 2, Domain::News),
            Err(ParseError::ShortList { found: 1, k: 2 })
        );
        assert_eq!(
            parse_ranking("Sorry, I cannot help.", 2, Domain::News),
            Err(ParseError::Unparseable)
        );
        assert_eq!(
            parse_ranking("", 1, Domain::News),
            Err(ParseError::Unparseable)
        );
    }

    #[test]
    fn normalized_titles() {
        assert_eq!(normalize_title("  \"Big   News\" "), "big news");
        assert_eq!(normalize_title("**Big News**"), "big news");
    }

    fn title() -> impl Strategy<Value = String> {
        "[A-Za-z][A-Za-z0-9 ,'!?]{0,30}[A-Za-z0-9!?]"
            .prop_filter("no wrappers", |s| !s.contains("  "))
    }

    proptest! {
        #[test]
        fn parse_is_idempotent_on_own_output(
            raw in prop::collection::vec((title(), "[A-Za-z]{1,12}"), 1..25)
        ) {
            let items: Vec<Item> = raw
                .into_iter()
                .map(|(t, c)| Item { title: t, category: c, domain: Domain::News })
                .collect();
            let once = parse_ranking(&format_ranking(&items), items.len(), Domain::News).unwrap();
            prop_assert_eq!(&once, &items);
            let twice = parse_ranking(&format_ranking(&once), once.len(), Domain::News).unwrap();
            prop_assert_eq!(twice, once);
        }
    }
}
