//! Text-similarity metrics behind the accuracy reward: Rouge F-scores and
//! word error rate.

use std::collections::HashMap;

/// Lowercased word tokens, split on whitespace and punctuation.
pub fn tokenize(text: &str) -> Vec<String> {
    text.to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(|t| t.to_string())
        .collect()
}

fn f1(precision: f64, recall: f64) -> f64 {
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

/// Rouge-N F1 on pre-tokenized word sequences, with clipped n-gram counts.
fn rouge_n(prediction: &[String], reference: &[String], n: usize) -> f64 {
    if prediction.len() < n || reference.len() < n {
        return 0.0;
    }
    let mut ref_counts: HashMap<&[String], usize> = HashMap::new();
    for gram in reference.windows(n) {
        *ref_counts.entry(gram).or_insert(0) += 1;
    }
    let mut matched = 0usize;
    for gram in prediction.windows(n) {
        if let Some(count) = ref_counts.get_mut(gram) {
            if *count > 0 {
                *count -= 1;
                matched += 1;
            }
        }
    }
    let precision = matched as f64 / (prediction.len() - n + 1) as f64;
    let recall = matched as f64 / (reference.len() - n + 1) as f64;
    f1(precision, recall)
}

fn lcs_length(a: &[String], b: &[String]) -> usize {
    if a.is_empty() || b.is_empty() {
        return 0;
    }
    let mut prev = vec![0usize; b.len() + 1];
    let mut curr = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            curr[j + 1] = if x == y { prev[j] + 1 } else { prev[j + 1].max(curr[j]) };
        }
        std::mem::swap(&mut prev, &mut curr);
    }
    prev[b.len()]
}

/// Rouge-L F1 via longest common subsequence.
fn rouge_l(prediction: &[String], reference: &[String]) -> f64 {
    if prediction.is_empty() || reference.is_empty() {
        return 0.0;
    }
    let lcs = lcs_length(prediction, reference) as f64;
    let precision = lcs / prediction.len() as f64;
    let recall = lcs / reference.len() as f64;
    f1(precision, recall)
}

/// Average of Rouge-1, Rouge-2 and Rouge-L F-scores.
pub fn rouge_mean(prediction: &str, reference: &str) -> f64 {
    let pred = tokenize(prediction);
    let reference = tokenize(reference);
    (rouge_n(&pred, &reference, 1) + rouge_n(&pred, &reference, 2) + rouge_l(&pred, &reference))
        / 3.0
}

/// Word-level edit distance between whitespace-tokenized sequences.
pub fn word_edit_distance(reference: &str, hypothesis: &str) -> usize {
    let r: Vec<&str> = reference.split_whitespace().collect();
    let h: Vec<&str> = hypothesis.split_whitespace().collect();
    let mut dp: Vec<usize> = (0..=h.len()).collect();
    for (i, rw) in r.iter().enumerate() {
        let mut diag = dp[0];
        dp[0] = i + 1;
        for (j, hw) in h.iter().enumerate() {
            let cost = usize::from(rw != hw);
            let next = (diag + cost).min(dp[j] + 1).min(dp[j + 1] + 1);
            diag = dp[j + 1];
            dp[j + 1] = next;
        }
    }
    dp[h.len()]
}

/// Word error rate: edit distance over reference length. Zero when both
/// sides are empty, infinite when only the reference is.
pub fn word_error_rate(reference: &str, hypothesis: &str) -> f64 {
    let ref_len = reference.split_whitespace().count();
    if ref_len == 0 {
        return if hypothesis.split_whitespace().count() == 0 { 0.0 } else { f64::INFINITY };
    }
    word_edit_distance(reference, hypothesis) as f64 / ref_len as f64
}

/// The OCR reward: `clamp(1 - WER, 0, 1)`.
pub fn wer_reward(reference: &str, hypothesis: &str) -> f64 {
    let wer = word_error_rate(reference, hypothesis);
    (1.0 - wer).clamp(0.0, 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tokenization_lowercases_and_strips_punctuation() {
        assert_eq!(tokenize("The cat, sat!"), vec!["the", "cat", "sat"]);
        assert_eq!(tokenize("  "), Vec::<String>::new());
    }

    #[test]
    fn rouge_identical_is_one() {
        assert_eq!(rouge_mean("a man walks the dog", "a man walks the dog"), 1.0);
    }

    #[test]
    fn rouge_disjoint_is_zero() {
        assert_eq!(rouge_mean("alpha beta", "gamma delta"), 0.0);
    }

    #[test]
    fn rouge_partial_overlap() {
        // pred: "the cat sat", ref: "the cat slept"
        // R1: matched 2, P = 2/3, R = 2/3, F = 2/3
        // R2: grams pred {the cat, cat sat}, ref {the cat, cat slept}: matched 1,
        //     P = R = 1/2, F = 1/2
        // RL: lcs = 2, P = R = 2/3, F = 2/3
        let got = rouge_mean("the cat sat", "the cat slept");
        let want = (2.0 / 3.0 + 0.5 + 2.0 / 3.0) / 3.0;
        assert!((got - want).abs() < 1e-12, "got {got}, want {want}");
    }

    #[test]
    fn rouge_empty_prediction() {
        assert_eq!(rouge_mean("", "some reference"), 0.0);
    }

    #[test]
    fn edit_distance_basic() {
        assert_eq!(word_edit_distance("a b c d", "a b c d"), 0);
        assert_eq!(word_edit_distance("a b c d", "a x c d"), 1);
        assert_eq!(word_edit_distance("a b c d", "a b c"), 1);
        assert_eq!(word_edit_distance("a b", "a b c"), 1);
        assert_eq!(word_edit_distance("", "a b"), 2);
    }

    #[test]
    fn wer_reward_one_substitution_among_four() {
        assert_eq!(wer_reward("a b c d", "a x c d"), 0.75);
    }

    #[test]
    fn wer_reward_clamps_to_zero() {
        // hypothesis much longer than reference: raw WER > 1
        assert_eq!(wer_reward("a", "x y z w"), 0.0);
    }

    #[test]
    fn wer_empty_reference() {
        assert_eq!(word_error_rate("", ""), 0.0);
        assert_eq!(wer_reward("", "anything"), 0.0);
        assert_eq!(wer_reward("", ""), 1.0);
    }
}
