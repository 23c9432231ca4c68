use std::collections::BTreeMap;

use super::Action;

/// Verb phrases accepted for each action, longest first within the parser.
/// The canonical verb comes first in each list.
pub const ACTION_SYNONYMS: &[(Action, &[&str])] = &[
    (Action::Thicken, &["thicken", "widen", "enlarge", "dilate", "expand", "fatten", "broaden"]),
    (Action::Thin, &["thin", "narrow", "shrink", "slim", "slim down", "reduce"]),
    (
        Action::RestoreSegment,
        &["restore", "add back", "recreate", "reconstruct", "add", "draw", "rebuild"],
    ),
    (Action::Extend, &["extend", "lengthen", "prolong", "continue"]),
    (Action::Bridge, &["bridge", "reconnect", "connect", "join", "close"]),
    (Action::Consolidate, &["consolidate", "merge", "fuse", "unify"]),
    (Action::Remove, &["remove", "delete", "erase"]),
];

/// Long-form aliases for the circle-of-Willis names.
const COW_ALIASES: &[(&str, &[&str])] = &[
    ("BA", &["basilar artery", "basilar"]),
    ("R-PCA", &["right posterior cerebral artery", "right pca"]),
    ("L-PCA", &["left posterior cerebral artery", "left pca"]),
    ("R-ICA", &["right internal carotid artery", "right internal carotid", "right ica"]),
    ("L-ICA", &["left internal carotid artery", "left internal carotid", "left ica"]),
    ("R-MCA", &["right middle cerebral artery", "right mca"]),
    ("L-MCA", &["left middle cerebral artery", "left mca"]),
    ("R-Pcom", &["right posterior communicating artery", "right pcom"]),
    ("L-Pcom", &["left posterior communicating artery", "left pcom"]),
    ("Acom", &["anterior communicating artery"]),
    ("R-ACA", &["right anterior cerebral artery", "right aca"]),
    ("L-ACA", &["left anterior cerebral artery", "left aca"]),
    ("3rd-A2", &["third a2", "third anterior cerebral artery", "3rd a2"]),
];

/// Segment names and aliases, resolved case-insensitively by longest match.
#[derive(Clone, Debug, PartialEq)]
pub struct Vocabulary {
    names: BTreeMap<u8, String>,
    /// (lowercase alias, class), sorted by descending alias length.
    aliases: Vec<(String, u8)>,
}

impl Default for Vocabulary {
    fn default() -> Self {
        Self::from_label_map(&crate::volume::default_cow_label_map())
    }
}

impl Vocabulary {
    /// Builds the vocabulary from a label map. Each name is accepted as
    /// written, with hyphens as spaces, and without hyphens; the standard
    /// circle-of-Willis names also get long-form aliases.
    pub fn from_label_map(map: &BTreeMap<u8, String>) -> Self {
        let mut aliases: Vec<(String, u8)> = Vec::new();
        let mut push = |a: String, c: u8| {
            if !a.is_empty() && !aliases.iter().any(|(x, _)| *x == a) {
                aliases.push((a, c));
            }
        };
        for (&class, name) in map {
            let lower = name.to_ascii_lowercase();
            push(lower.clone(), class);
            push(lower.replace('-', " "), class);
            push(lower.replace('-', ""), class);
            if let Some((_, extra)) = COW_ALIASES.iter().find(|(n, _)| n.eq_ignore_ascii_case(name)) {
                for a in *extra {
                    push(a.to_string(), class);
                }
            }
        }
        aliases.sort_by(|a, b| b.0.len().cmp(&a.0.len()).then(a.0.cmp(&b.0)));
        Self {
            names: map.clone(),
            aliases,
        }
    }

    pub fn name(&self, class: u8) -> Option<&str> {
        self.names.get(&class).map(String::as_str)
    }

    pub fn classes(&self) -> impl Iterator<Item = u8> + '_ {
        self.names.keys().copied()
    }

    pub fn aliases(&self) -> &[(String, u8)] {
        &self.aliases
    }

    /// Longest alias that prefixes `lower` and ends at a word boundary.
    /// Returns the class and the matched byte length.
    pub fn match_prefix(&self, lower: &str) -> Option<(u8, usize)> {
        self.aliases.iter().find_map(|(a, c)| {
            let rest = lower.strip_prefix(a.as_str())?;
            let boundary = rest.chars().next().is_none_or(|ch| !ch.is_ascii_alphanumeric());
            boundary.then_some((*c, a.len()))
        })
    }
}
