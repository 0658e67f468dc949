//! Gestalt pattern matching (Ratcliff/Obershelp) over byte sequences.
//!
//! The score is `2 * K / (|a| + |b|)` where `K` is the total number of
//! matched bytes from the recursive longest-common-substring
//! decomposition. Among equal-length candidate blocks the one with the
//! smallest start in the first sequence, then in the second, is taken.
//!
//! That decomposition is order-sensitive, so operands are put into a
//! canonical order (shorter first, lexicographic on a tie) before
//! decomposing; this makes the score symmetric without changing what it
//! measures.

/// Similarity as an exact rational `2*matched / total`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SimilarityScore {
    matched: usize,
    total: usize,
}

impl SimilarityScore {
    /// Score in [0, 1]. Two empty sequences are defined as identical.
    pub fn value(&self) -> f64 {
        if self.total == 0 {
            1.0
        } else {
            2.0 * self.matched as f64 / self.total as f64
        }
    }

    /// Total matched bytes `K` from the decomposition.
    pub fn matched_bytes(&self) -> usize {
        self.matched
    }

    /// Combined operand length `|a| + |b|`.
    pub fn total_len(&self) -> usize {
        self.total
    }

    /// Exact rational comparison `2*matched/total >= threshold`, avoiding
    /// division. Empty-vs-empty compares as 1.
    pub fn at_least(&self, threshold: f64) -> bool {
        if self.total == 0 {
            return 1.0 >= threshold;
        }
        2.0 * self.matched as f64 >= threshold * self.total as f64
    }
}

/// Ratcliff/Obershelp similarity of two byte sequences.
pub fn similarity(a: &[u8], b: &[u8]) -> SimilarityScore {
    let (x, y) = canonical_order(a, b);
    SimilarityScore {
        matched: gestalt_matched(x, y),
        total: a.len() + b.len(),
    }
}

/// Operand order used for the decomposition: shorter sequence first,
/// lexicographically smaller first on equal length.
pub fn canonical_order<'a>(a: &'a [u8], b: &'a [u8]) -> (&'a [u8], &'a [u8]) {
    if (b.len(), b) < (a.len(), a) {
        (b, a)
    } else {
        (a, b)
    }
}

/// Total matched bytes over the recursive decomposition of `a[..]`/`b[..]`.
fn gestalt_matched(a: &[u8], b: &[u8]) -> usize {
    let mut total = 0;
    let mut stack = vec![(0usize, a.len(), 0usize, b.len())];
    let mut prev = vec![0usize; b.len()];
    let mut curr = vec![0usize; b.len()];
    while let Some((alo, ahi, blo, bhi)) = stack.pop() {
        if alo >= ahi || blo >= bhi {
            continue;
        }
        let (i, j, size) = longest_match(a, b, alo, ahi, blo, bhi, &mut prev, &mut curr);
        if size == 0 {
            continue;
        }
        total += size;
        stack.push((alo, i, blo, j));
        stack.push((i + size, ahi, j + size, bhi));
    }
    total
}

/// Longest matching block of `a[alo..ahi]` vs `b[blo..bhi]`, preferring the
/// earliest start in `a`, then in `b`. Returns (start_a, start_b, size).
#[allow(clippy::too_many_arguments)]
fn longest_match(
    a: &[u8],
    b: &[u8],
    alo: usize,
    ahi: usize,
    blo: usize,
    bhi: usize,
    prev: &mut [usize],
    curr: &mut [usize],
) -> (usize, usize, usize) {
    let (mut best_i, mut best_j, mut best_size) = (alo, blo, 0usize);
    prev[blo..bhi].fill(0);
    for i in alo..ahi {
        curr[blo..bhi].fill(0);
        for j in blo..bhi {
            if a[i] == b[j] {
                let k = if j > blo { prev[j - 1] } else { 0 } + 1;
                curr[j] = k;
                // Strict improvement keeps the first maximal block found
                // in scan order, i.e. the smallest (i, j) start.
                if k > best_size {
                    best_size = k;
                    best_i = i + 1 - k;
                    best_j = j + 1 - k;
                }
            }
        }
        prev[blo..bhi].copy_from_slice(&curr[blo..bhi]);
    }
    (best_i, best_j, best_size)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn score(a: &[u8], b: &[u8]) -> f64 {
        similarity(a, b).value()
    }

    #[test]
    fn identical_sequences_score_one() {
        assert_eq!(score(b"abc", b"abc"), 1.0);
        assert_eq!(similarity(b"abc", b"abc").matched_bytes(), 3);
    }

    #[test]
    fn disjoint_sequences_score_zero() {
        assert_eq!(score(b"abcd", b"wxyz"), 0.0);
    }

    #[test]
    fn both_empty_score_one_and_half_empty_zero() {
        assert_eq!(score(b"", b""), 1.0);
        assert_eq!(score(b"", b"xyz"), 0.0);
    }

    #[test]
    fn single_substitution_scores_three_quarters() {
        // Matched bytes: "ab" and "d", so K = 3 and 2*3/8 = 0.75.
        let s = similarity(b"abcd", b"abxd");
        assert_eq!(s.matched_bytes(), 3);
        assert_eq!(s.value(), 0.75);
    }

    #[test]
    fn symmetric_on_a_tie_heavy_pair() {
        // Chosen so a naive non-canonical decomposition would be
        // order-dependent: "ab" vs the two "cd" occurrences tie at size 2.
        let a = b"abQcd";
        let b = b"cdRabcd";
        assert_eq!(similarity(a, b), similarity(b, a));
    }

    #[test]
    fn threshold_comparison_is_exact_at_the_boundary() {
        // 20 of 22 bytes matched in both messages: 40/44 = 0.9090..
        let s = SimilarityScore { matched: 20, total: 44 };
        assert!(s.at_least(0.9));
        assert!(s.at_least(40.0 / 44.0));
        assert!(!s.at_least(0.91));
    }
}
