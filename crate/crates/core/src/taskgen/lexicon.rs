//! Fixed vocabularies for the slot domains. Changing any list changes every
//! generated suite.

pub const WORDS: [&str; 64] = [
    "apple", "river", "stone", "cloud", "garden", "pencil", "window", "candle",
    "forest", "bridge", "rocket", "silver", "planet", "button", "dragon", "island",
    "jacket", "kitten", "lemon", "marble", "needle", "orange", "puzzle", "quartz",
    "rabbit", "saddle", "ticket", "violin", "walnut", "yellow", "zebra", "anchor",
    "basket", "castle", "desert", "engine", "feather", "guitar", "hammer", "igloo",
    "jungle", "ladder", "magnet", "napkin", "oyster", "parrot", "quiver", "ribbon",
    "shovel", "tomato", "umbrella", "velvet", "wizard", "yogurt", "beacon", "cactus",
    "dolphin", "falcon", "glacier", "harbor", "lantern", "meadow", "nectar", "orchid",
];

pub const NAMES: [&str; 12] = [
    "Ann", "Bob", "Eve", "Leo", "Mia", "Sam", "Zoe", "Max", "Ivy", "Tom", "Kai", "Uma",
];

/// The key is always one of the items; the other seven fill the remaining
/// hands.
pub const KEY_ITEM: &str = "key";
pub const OTHER_ITEMS: [&str; 7] = ["ball", "pen", "book", "cup", "hat", "coin", "map"];

pub const ATTENDEES: [&str; 12] = [
    "Leo", "Priya", "Marco", "Hana", "Omar", "Grace", "Noah", "Sofia", "Ravi", "Elena", "Chen",
    "Amara",
];

pub const TOPICS: [&str; 12] = [
    "budget review",
    "product roadmap",
    "hiring plan",
    "quarterly goals",
    "design critique",
    "vendor contract",
    "sprint planning",
    "customer feedback",
    "security audit",
    "launch checklist",
    "team offsite",
    "onboarding",
];

pub const DURATIONS: [i64; 5] = [15, 30, 45, 60, 90];

pub const WEEKDAYS: [&str; 7] = [
    "monday", "tuesday", "wednesday", "thursday", "friday", "saturday", "sunday",
];

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    #[test]
    fn lexicons_are_unique_and_lowercase_where_required() {
        assert_eq!(WORDS.iter().collect::<HashSet<_>>().len(), 64);
        assert!(WORDS.iter().all(|w| !w.is_empty() && w.bytes().all(|b| b.is_ascii_lowercase())));
        assert_eq!(NAMES.iter().collect::<HashSet<_>>().len(), 12);
        assert!(NAMES.iter().all(|n| n.bytes().all(|b| b.is_ascii_alphabetic())));
        assert_eq!(OTHER_ITEMS.len() + 1, 8);
        assert!(!OTHER_ITEMS.contains(&KEY_ITEM));
        assert!(TOPICS.iter().all(|t| t.bytes().all(|b| b.is_ascii_lowercase() || b == b' ')));
    }
}
