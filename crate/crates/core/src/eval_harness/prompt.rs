//! The canonical forced-choice prompt and the answer parser.
//!
//! Any change to the prompt text must bump [`PROMPT_VERSION`]; the version is
//! stored in every trial record. The text is mirrored in `docs/prompt.md`.

use std::path::{Path, PathBuf};

use crate::benchmark_build::BenchmarkItem;

pub const PROMPT_VERSION: &str = "v1";

pub const SYSTEM_PROMPT: &str = "You are an expert in multi-view geometry inspecting photographs for editing errors.";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Prompt {
    pub system: String,
    pub user: String,
    /// Always the labeled first view, then the edited second view.
    pub images: [PathBuf; 2],
    pub valid: Vec<char>,
}

pub fn letter_list(valid: &[char]) -> String {
    valid.iter().map(char::to_string).collect::<Vec<_>>().join(", ")
}

pub fn user_text(valid: &[char]) -> String {
    format!(
        "You are given two photographs of the same static scene taken from different camera positions. \
In the first image, objects are marked with letter tags.\n\
Exactly one of the tagged objects is 3D-inconsistent: its appearance in the second image cannot be explained \
by viewing one unchanged, rigid scene from the second camera position. All other tagged objects are consistent.\n\n\
Which letter marks the inconsistent object? The valid letters are: {}.\n\
You may reason step by step, but the final line of your answer must contain only the chosen letter.",
        letter_list(valid)
    )
}

/// Image paths in the item are resolved against `root`.
pub fn build_prompt(item: &BenchmarkItem, root: &Path) -> Prompt {
    let valid = item.valid_letters();
    Prompt {
        system: SYSTEM_PROMPT.to_string(),
        user: user_text(&valid),
        images: [root.join(&item.view1), root.join(&item.view2)],
        valid,
    }
}

/// Last standalone capital letter from `valid` in `raw`. Markdown emphasis
/// and code markers are removed first; standalone means no ASCII letter or
/// digit directly on either side.
pub fn parse_letter(raw: &str, valid: &[char]) -> Option<char> {
    let cleaned: Vec<char> = raw.chars().filter(|c| !matches!(c, '*' | '_' | '`' | '~')).collect();
    let word = |c: Option<&char>| c.is_some_and(|c| c.is_alphanumeric());
    (0..cleaned.len()).rev().find_map(|i| {
        let c = cleaned[i];
        let standalone = c.is_ascii_uppercase()
            && !word(i.checked_sub(1).and_then(|j| cleaned.get(j)))
            && !word(cleaned.get(i + 1));
        (standalone && valid.contains(&c)).then_some(c)
    })
}
