//! ROUGE-N and ROUGE-L F1 over lowercase alphanumeric tokens.

use std::collections::HashMap;

/// Lowercased runs of alphanumeric characters.
pub fn lexical_tokens(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

fn ngram_counts(tokens: &[String], n: usize) -> HashMap<&[String], usize> {
    let mut counts = HashMap::new();
    if n == 0 || tokens.len() < n {
        return counts;
    }
    for gram in tokens.windows(n) {
        *counts.entry(gram).or_insert(0) += 1;
    }
    counts
}

fn f1(overlap: usize, cand: usize, reference: usize) -> f64 {
    if overlap == 0 || cand == 0 || reference == 0 {
        return 0.0;
    }
    let p = overlap as f64 / cand as f64;
    let r = overlap as f64 / reference as f64;
    2.0 * p * r / (p + r)
}

/// Clipped n-gram overlap F1. Degenerate inputs, including `n == 0`,
/// score 0.
pub fn rouge_n_f1(reference: &str, candidate: &str, n: usize) -> f64 {
    let r = lexical_tokens(reference);
    let c = lexical_tokens(candidate);
    let rc = ngram_counts(&r, n);
    let cc = ngram_counts(&c, n);
    let overlap = cc
        .iter()
        .map(|(g, &k)| k.min(rc.get(g).copied().unwrap_or(0)))
        .sum();
    f1(overlap, cc.values().sum(), rc.values().sum())
}

/// Longest-common-subsequence length.
pub fn lcs_len<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y {
                prev[j] + 1
            } else {
                cur[j].max(prev[j + 1])
            };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// LCS-based F1.
pub fn rouge_l_f1(reference: &str, candidate: &str) -> f64 {
    let r = lexical_tokens(reference);
    let c = lexical_tokens(candidate);
    f1(lcs_len(&r, &c), c.len(), r.len())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn tokenization_lowercases_and_splits() {
        assert_eq!(lexical_tokens("The cat's HAT, 2x!"), ["the", "cat", "s", "hat", "2x"]);
        assert!(lexical_tokens(" ,.; ").is_empty());
    }

    #[test]
    fn rouge_n_examples() {
        assert_eq!(rouge_n_f1("a b c", "a b c", 1), 1.0);
        assert!((rouge_n_f1("the cat sat", "the cat", 1) - 0.8).abs() < 1e-12);
        assert_eq!(rouge_n_f1("x y", "p q", 1), 0.0);
        assert_eq!(rouge_n_f1("x y", "x y", 0), 0.0);
        assert_eq!(rouge_n_f1("x", "x", 2), 0.0);
        // clipping: candidate repeats "the" three times, reference has it once
        let f = rouge_n_f1("the cat", "the the the", 1);
        let (p, r) = (1.0 / 3.0, 0.5);
        assert!((f - 2.0 * p * r / (p + r)).abs() < 1e-12);
    }

    #[test]
    fn rouge_l_examples() {
        assert_eq!(rouge_l_f1("a b c", "a b c"), 1.0);
        assert!((rouge_l_f1("a b c d", "a c") - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(rouge_l_f1("a b", ""), 0.0);
        assert_eq!(lcs_len(&[1, 3, 4, 1, 2], &[3, 4, 1, 2, 1, 3]), 4);
    }

    proptest! {
        #[test]
        fn f1_is_symmetric(a in "[a-c ]{0,12}", b in "[a-c ]{0,12}", n in 1usize..3) {
            prop_assert!((rouge_n_f1(&a, &b, n) - rouge_n_f1(&b, &a, n)).abs() < 1e-12);
            prop_assert!((rouge_l_f1(&a, &b) - rouge_l_f1(&b, &a)).abs() < 1e-12);
            let v = rouge_n_f1(&a, &b, n);
            prop_assert!((0.0..=1.0).contains(&v));
        }
    }
}
