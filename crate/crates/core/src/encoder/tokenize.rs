//! Tweet-aware tokenizer and the hashing trick that maps tokens to
//! embedding rows.

/// Separator between the text and an appended time segment.
pub const SEP_TOKEN: &str = "[SEP]";
/// Replacement for masked positions during pretraining.
pub const MASK_TOKEN: &str = "[MASK]";

pub const SEP_BUCKET: u32 = 0;
pub const MASK_BUCKET: u32 = 1;
/// Buckets `0..N_SPECIAL` are reserved; content hashes land above them.
pub const N_SPECIAL: u32 = 2;

/// Lowercases and splits on anything that is not alphanumeric or `_`.
/// A `#` or `@` directly in front of a word (and not itself glued to a
/// preceding word) stays attached, so hashtags and mentions survive as
/// single tokens.
pub fn tokenize(text: &str) -> Vec<String> {
    let lower = text.to_lowercase();
    let chars: Vec<char> = lower.chars().collect();
    let is_word = |c: char| c.is_alphanumeric() || c == '_';
    let mut tokens = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        let prefixed = (c == '#' || c == '@')
            && chars.get(i + 1).is_some_and(|&n| is_word(n))
            && (i == 0 || !is_word(chars[i - 1]));
        if prefixed || is_word(c) {
            let start = i;
            i += 1;
            while i < chars.len() && is_word(chars[i]) {
                i += 1;
            }
            tokens.push(chars[start..i].iter().collect());
        } else {
            i += 1;
        }
    }
    tokens
}

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

/// 64-bit FNV-1a over the UTF-8 bytes.
pub fn fnv1a64(s: &str) -> u64 {
    s.bytes().fold(FNV_OFFSET, |h, b| (h ^ b as u64).wrapping_mul(FNV_PRIME))
}

fn special_bucket(token: &str) -> Option<u32> {
    match token {
        SEP_TOKEN => Some(SEP_BUCKET),
        MASK_TOKEN => Some(MASK_BUCKET),
        _ => None,
    }
}

/// Bucket of a single token: reserved id for special tokens, otherwise
/// `N_SPECIAL + fnv1a64(token) mod (buckets - N_SPECIAL)`.
pub fn token_bucket(token: &str, buckets: u32) -> u32 {
    special_bucket(token).unwrap_or_else(|| content_bucket(token, buckets))
}

fn content_bucket(key: &str, buckets: u32) -> u32 {
    N_SPECIAL + (fnv1a64(key) % (buckets - N_SPECIAL) as u64) as u32
}

/// Unigram buckets in order, then one bucket per adjacent pair of
/// non-special tokens hashed as `"a b"`.
pub fn hash_tokens(tokens: &[String], buckets: u32, bigrams: bool) -> Vec<u32> {
    let mut out: Vec<u32> = tokens.iter().map(|t| token_bucket(t, buckets)).collect();
    if bigrams {
        for pair in tokens.windows(2) {
            if special_bucket(&pair[0]).is_none() && special_bucket(&pair[1]).is_none() {
                out.push(content_bucket(&format!("{} {}", pair[0], pair[1]), buckets));
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toks(xs: &[&str]) -> Vec<String> {
        xs.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn tweet_tokenization() {
        assert_eq!(tokenize("Stay safe, NYC! #sandy"), toks(&["stay", "safe", "nyc", "#sandy"]));
        assert!(tokenize("").is_empty());
        assert_eq!(tokenize("pre-sandy"), toks(&["pre", "sandy"]));
        assert_eq!(tokenize("@FEMA help #Pre-Sandy"), toks(&["@fema", "help", "#pre", "sandy"]));
        assert_eq!(tokenize("a#b # c"), toks(&["a", "b", "c"]));
        assert_eq!(tokenize("Überflutung  in\tNYC"), toks(&["überflutung", "in", "nyc"]));
    }

    #[test]
    fn fnv_reference_vectors() {
        // Published FNV-1a 64 test vectors.
        assert_eq!(fnv1a64(""), 0xcbf29ce484222325);
        assert_eq!(fnv1a64("a"), 0xaf63dc4c8601ec8c);
        assert_eq!(fnv1a64("foobar"), 0x85944171f73967e8);
    }

    #[test]
    fn golden_bucket() {
        assert_eq!(token_bucket("#sandy", 32768), 2 + (fnv1a64("#sandy") % 32766) as u32);
        assert_eq!(token_bucket("#sandy", 32768), GOLDEN_SANDY);
    }

    // Computed independently (Python FNV-1a) and frozen.
    const GOLDEN_SANDY: u32 = 16027;

    #[test]
    fn bucket_counts() {
        let t = toks(&["a", "b", "c", "d"]);
        assert_eq!(hash_tokens(&t, 1024, true).len(), 7);
        assert_eq!(hash_tokens(&t, 1024, false).len(), 4);
        assert_eq!(hash_tokens(&t, 1024, true), hash_tokens(&t, 1024, true));
        assert_eq!(hash_tokens(&toks(&["a"]), 1024, true).len(), 1);
        assert!(hash_tokens(&[], 1024, true).is_empty());
    }

    #[test]
    fn special_tokens_use_reserved_buckets() {
        let t = toks(&["flood", SEP_TOKEN, "2013", "01", "17"]);
        let b = hash_tokens(&t, 64, true);
        assert_eq!(b[1], SEP_BUCKET);
        // Unigrams 5, bigrams only inside each side of the separator.
        assert_eq!(b.len(), 7);
        for (i, &x) in b.iter().enumerate() {
            if i != 1 {
                assert!(x >= N_SPECIAL);
            }
        }
        assert_eq!(token_bucket(MASK_TOKEN, 64), MASK_BUCKET);
    }
}
