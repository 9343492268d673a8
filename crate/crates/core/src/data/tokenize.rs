//! Review text preprocessing: lowercase, split on whitespace and punctuation
//! boundaries, truncate to a per-review token cap.

pub const DEFAULT_REVIEW_TOKEN_CAP: usize = 100;

/// Tokenize one review. Alphanumeric runs become tokens; everything else is a
/// separator. Tokens beyond `cap` are dropped.
pub fn tokenize(text: &str, cap: usize) -> Vec<String> {
    let mut out = Vec::new();
    let mut cur = String::new();
    for ch in text.chars() {
        if ch.is_alphanumeric() {
            for lc in ch.to_lowercase() {
                cur.push(lc);
            }
        } else if !cur.is_empty() {
            out.push(std::mem::take(&mut cur));
            if out.len() >= cap {
                return out;
            }
        }
    }
    if !cur.is_empty() && out.len() < cap {
        out.push(cur);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn splits_on_punctuation_and_lowercases() {
        assert_eq!(
            tokenize("Great strap, works WELL!", 100),
            vec!["great", "strap", "works", "well"]
        );
    }

    #[test]
    fn caps_token_count() {
        let text = "a b c d e";
        assert_eq!(tokenize(text, 3), vec!["a", "b", "c"]);
    }

    #[test]
    fn empty_text_no_tokens() {
        assert!(tokenize("", 100).is_empty());
        assert!(tokenize("  ... ", 100).is_empty());
    }
}
