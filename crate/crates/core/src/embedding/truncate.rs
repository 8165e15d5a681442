//! Whitespace-proxy truncation to a token budget.

pub const DEFAULT_TOKEN_BUDGET: usize = 512;

/// Proxy token count: whitespace tokens × 1.3, rounded up.
pub fn proxy_token_count(text: &str) -> usize {
    proxy(text.split_whitespace().count())
}

fn proxy(words: usize) -> usize {
    (13 * words).div_ceil(10)
}

/// Byte ranges of cut units. A unit is a whitespace-delimited word, except
/// that a single-quoted identifier such as `'people id'` is kept whole.
fn units(text: &str) -> Vec<(usize, usize, usize)> {
    let bytes = text.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        if bytes[i].is_ascii_whitespace() {
            i += 1;
            continue;
        }
        let start = i;
        let mut end = None;
        if bytes[i] == b'\'' {
            let mut j = i + 1;
            while j < bytes.len() {
                if bytes[j] == b'\'' {
                    if bytes.get(j + 1) == Some(&b'\'') {
                        j += 2;
                        continue;
                    }
                    break;
                }
                j += 1;
            }
            if j < bytes.len() {
                // Closing quote found; extend to the end of the attached word.
                let mut k = j + 1;
                while k < bytes.len() && !bytes[k].is_ascii_whitespace() {
                    k += 1;
                }
                end = Some(k);
            }
        }
        let end = end.unwrap_or_else(|| {
            let mut k = i;
            while k < bytes.len() && !bytes[k].is_ascii_whitespace() {
                k += 1;
            }
            k
        });
        let words = text[start..end].split_whitespace().count();
        out.push((start, end, words));
        i = end;
    }
    out
}

/// Cuts `text` at the last unit boundary whose proxy token count fits the
/// budget. The first unit is always kept.
pub fn truncate(text: &str, token_budget: usize) -> &str {
    let budget = token_budget.max(1);
    let units = units(text);
    let mut words = 0;
    let mut end = None;
    for (k, &(_, e, w)) in units.iter().enumerate() {
        if k > 0 && proxy(words + w) > budget {
            break;
        }
        words += w;
        end = Some((k, e));
    }
    match end {
        Some((k, e)) if k + 1 < units.len() => {
            log::debug!("truncated text from {} to {} words", proxy_words(&units), words);
            &text[..e]
        }
        _ => text,
    }
}

fn proxy_words(units: &[(usize, usize, usize)]) -> usize {
    units.iter().map(|u| u.2).sum()
}
