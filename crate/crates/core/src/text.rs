//! Character-offset helpers for locating sentences and phrases in documents.

/// `[start, end)` char offsets of each sentence in `text`, trimmed of
/// surrounding whitespace. Sentences end at `.`, `!` or `?` followed by
/// whitespace or end of text, at any newline, and at any char in `extra`.
pub fn sentence_spans(text: &str, extra: &[char]) -> Vec<(usize, usize)> {
    let chars: Vec<char> = text.chars().collect();
    let mut spans = Vec::new();
    let mut start = 0;
    let push = |s: usize, e: usize, spans: &mut Vec<(usize, usize)>| {
        let (mut s, mut e) = (s, e);
        while s < e && chars[s].is_whitespace() {
            s += 1;
        }
        while e > s && chars[e - 1].is_whitespace() {
            e -= 1;
        }
        if s < e {
            spans.push((s, e));
        }
    };
    for i in 0..chars.len() {
        let c = chars[i];
        let terminal =
            matches!(c, '.' | '!' | '?') && chars.get(i + 1).is_none_or(|n| n.is_whitespace());
        if c == '\n' {
            push(start, i, &mut spans);
            start = i + 1;
        } else if terminal || extra.contains(&c) {
            // Semicolons and the like separate clauses but are not kept.
            let end = if extra.contains(&c) { i } else { i + 1 };
            push(start, end, &mut spans);
            start = i + 1;
        }
    }
    push(start, chars.len(), &mut spans);
    spans
}

/// Char offset of the first case-insensitive occurrence of `needle`.
/// Lowercasing is applied char by char so offsets stay aligned with `text`.
pub fn find_ci(text: &str, needle: &str) -> Option<usize> {
    let lower = |s: &str| -> Vec<char> {
        s.chars()
            .map(|c| c.to_lowercase().next().unwrap_or(c))
            .collect()
    };
    let hay = lower(text);
    let pat = lower(needle);
    if pat.is_empty() || pat.len() > hay.len() {
        return None;
    }
    (0..=hay.len() - pat.len()).find(|&i| hay[i..i + pat.len()] == pat[..])
}

/// Char offset of the first exact occurrence of `needle`.
pub fn find_chars(text: &str, needle: &str) -> Option<usize> {
    let byte = text.find(needle)?;
    Some(text[..byte].chars().count())
}

/// The sentence span containing char offset `at`.
pub fn sentence_at(text: &str, at: usize) -> Option<(usize, usize)> {
    sentence_spans(text, &[])
        .into_iter()
        .find(|&(s, e)| s <= at && at < e)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::char_slice;

    #[test]
    fn splits_sentences_and_lines() {
        let t = "Patient reports poor sleep. Mood low!\nPlan: rest";
        let s: Vec<&str> = sentence_spans(t, &[])
            .iter()
            .map(|&(a, b)| char_slice(t, a, b))
            .collect();
        assert_eq!(
            s,
            vec!["Patient reports poor sleep.", "Mood low!", "Plan: rest"]
        );
    }

    #[test]
    fn decimals_do_not_split() {
        let t = "Slept 6.5 hours. Fine.";
        assert_eq!(sentence_spans(t, &[]).len(), 2);
    }

    #[test]
    fn extra_breaks_drop_the_separator() {
        let t = "Continue sertraline 50mg; schedule follow-up";
        let s: Vec<&str> = sentence_spans(t, &[';'])
            .iter()
            .map(|&(a, b)| char_slice(t, a, b))
            .collect();
        assert_eq!(s, vec!["Continue sertraline 50mg", "schedule follow-up"]);
    }

    #[test]
    fn case_insensitive_find_uses_char_offsets() {
        let t = "Café. Poor SLEEP";
        let at = find_ci(t, "sleep").unwrap();
        assert_eq!(char_slice(t, at, at + 5), "SLEEP");
        assert_eq!(sentence_at(t, at), Some((6, 16)));
        assert_eq!(find_chars(t, "Poor"), Some(6));
        assert_eq!(find_ci(t, "walk"), None);
    }
}
