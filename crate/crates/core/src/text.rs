//! Token normalisation shared by term resolution, trace matching and
//! condition evaluation.

/// Split on non-alphanumeric characters and lowercase.
pub fn words(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(str::to_lowercase)
        .collect()
}

const SUFFIXES: [&str; 4] = ["ing", "ed", "es", "s"];
const MIN_STEM: usize = 3;

/// Light suffix stemmer: drops one of `-ing`, `-ed`, `-es`, `-s`, then a
/// trailing `e`, never shortening the stem below three characters.
/// "receiving", "received" and "receive" all map to "receiv".
pub fn stem(word: &str) -> String {
    let mut w = word.to_lowercase();
    for suffix in SUFFIXES {
        if w.len() >= suffix.len() + MIN_STEM && w.ends_with(suffix) {
            w.truncate(w.len() - suffix.len());
            break;
        }
    }
    if w.len() > MIN_STEM && w.ends_with('e') {
        w.pop();
    }
    w
}

/// Normalised token list for matching.
pub fn stems(text: &str) -> Vec<String> {
    words(text).iter().map(|w| stem(w)).collect()
}

/// True when the two texts share at least one normalised token.
pub fn shares_stem(a: &[String], b: &[String]) -> bool {
    a.iter().any(|x| b.contains(x))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stemming_rules() {
        assert_eq!(stem("receiving"), "receiv");
        assert_eq!(stem("Receive"), "receiv");
        assert_eq!(stem("received"), "receiv");
        assert_eq!(stem("lights"), "light");
        assert_eq!(stem("detects"), "detect");
        assert_eq!(stem("detected"), "detect");
        assert_eq!(stem("hazard"), "hazard");
        // short words are left alone
        assert_eq!(stem("yes"), "yes");
        assert_eq!(stem("is"), "is");
        assert_eq!(stem("the"), "the");
    }

    #[test]
    fn words_split_on_punctuation() {
        assert_eq!(words("camera-front-detect"), ["camera", "front", "detect"]);
        assert_eq!(words("  Pedestrian detected? "), ["pedestrian", "detected"]);
        assert!(words("--").is_empty());
    }
}
