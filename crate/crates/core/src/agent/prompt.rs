//! Prompt templates for the agent. Bump [`PROMPT_VERSION`] whenever a
//! template changes; replay transcripts are keyed on exact prompt text.

use regex::Regex;
use std::sync::OnceLock;

use super::chat::ChatMessage;
use crate::corpus::{Catalog, ItemId};

pub const PROMPT_VERSION: &str = "v1";

const PREFERENCE_SYSTEM: &str = "You analyse the interaction history of a user on {platform}. \
Describe the user's stable preferences in two or three sentences: which kinds of items they \
choose most often and any patterns in the order they choose them. Answer with the description only.";

const PREFERENCE_USER: &str = "Platform description:\n{platform}\n\nHistory (oldest first):\n{history}\n\n\
Summarise this user's preferences.";

const SELECTION_SYSTEM: &str = "You are role-playing a user of {platform}. You are shown what you \
interacted with before, a summary of your preferences, and a list of recommended items. Pick the \
items you would interact with next, staying consistent with your preferences.";

const SELECTION_USER: &str = "Compressed Memory (items you interacted with, oldest first):\n{memory}\n\n\
Preference:\n{preference}\n\nRec List:\n{rec_list}\n\n\
Choose exactly {count} different item(s) from the Rec List. {format_rule}";

const FORMAT_RULE: &str = "Answer with their list numbers separated by commas.";

const STRICT_FORMAT_RULE: &str = "Your previous answer could not be used. Reply with ONLY \
{count} distinct integers between 1 and {len}, separated by commas, and nothing else.";

pub fn item_line(catalog: &Catalog, item: ItemId) -> String {
    match catalog.category(item) {
        Some(cat) => format!("{} [{cat}]", catalog.title(item)),
        None => catalog.title(item),
    }
}

fn numbered(catalog: &Catalog, items: &[ItemId]) -> String {
    items
        .iter()
        .enumerate()
        .map(|(i, &it)| format!("{}. {}", i + 1, item_line(catalog, it)))
        .collect::<Vec<_>>()
        .join("\n")
}

pub fn preference_messages(catalog: &Catalog, platform: &str, history: &[ItemId]) -> Vec<ChatMessage> {
    vec![
        ChatMessage::system(PREFERENCE_SYSTEM.replace("{platform}", platform)),
        ChatMessage::user(
            PREFERENCE_USER
                .replace("{platform}", platform)
                .replace("{history}", &numbered(catalog, history)),
        ),
    ]
}

pub fn selection_messages(
    catalog: &Catalog,
    platform: &str,
    memory: &[ItemId],
    preference: Option<&str>,
    presented: &[ItemId],
    count: usize,
    strict: bool,
) -> Vec<ChatMessage> {
    let rule = if strict {
        STRICT_FORMAT_RULE
            .replace("{count}", &count.to_string())
            .replace("{len}", &presented.len().to_string())
    } else {
        FORMAT_RULE.to_string()
    };
    vec![
        ChatMessage::system(SELECTION_SYSTEM.replace("{platform}", platform)),
        ChatMessage::user(
            SELECTION_USER
                .replace("{memory}", &numbered(catalog, memory))
                .replace("{preference}", preference.unwrap_or("(not yet established)"))
                .replace("{rec_list}", &numbered(catalog, presented))
                .replace("{count}", &count.to_string())
                .replace("{format_rule}", &rule),
        ),
    ]
}

/// Parses a reply into `count` distinct 0-based indices into a list of
/// length `len`. Any out-of-range number, or the wrong number of distinct
/// indices, makes the reply unusable.
pub fn parse_selection(reply: &str, len: usize, count: usize) -> Option<Vec<usize>> {
    static NUMBER: OnceLock<Regex> = OnceLock::new();
    let re = NUMBER.get_or_init(|| Regex::new(r"\d+").expect("valid regex"));
    let mut picked = Vec::new();
    for m in re.find_iter(reply) {
        let n: usize = m.as_str().parse().ok()?;
        if n == 0 || n > len {
            return None;
        }
        if !picked.contains(&(n - 1)) {
            picked.push(n - 1);
        }
    }
    (picked.len() == count).then_some(picked)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_indices() {
        assert_eq!(parse_selection("3, 1", 5, 2), Some(vec![2, 0]));
        assert_eq!(parse_selection("I pick 2", 5, 1), Some(vec![1]));
        assert_eq!(parse_selection("2, 2, 4", 5, 2), Some(vec![1, 3]));
        assert_eq!(parse_selection("9", 5, 1), None);
        assert_eq!(parse_selection("1, 2", 5, 1), None);
        assert_eq!(parse_selection("none", 5, 1), None);
        assert_eq!(parse_selection("0", 5, 1), None);
    }

    #[test]
    fn selection_prompt_has_all_sections() {
        let catalog = Catalog::anonymous(5).unwrap();
        let msgs = selection_messages(&catalog, "a shop", &[0, 1], Some("likes 1"), &[3, 4], 1, false);
        let user = &msgs[1].content;
        for needle in ["Compressed Memory", "Preference:\nlikes 1", "Rec List", "1. Item 3", "2. Item 4"] {
            assert!(user.contains(needle), "missing {needle}: {user}");
        }
        let strict = selection_messages(&catalog, "a shop", &[0], None, &[3, 4], 1, true);
        assert!(strict[1].content.contains("ONLY 1 distinct integers between 1 and 2"));
    }
}
