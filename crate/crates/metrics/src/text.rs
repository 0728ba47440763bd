//! Text normalization and normalized edit distance.

use unicode_normalization::UnicodeNormalization;

/// NFC, case folding, whitespace runs collapsed to one space, trimmed.
pub fn normalize(text: &str) -> String {
    let nfc: String = text.nfc().collect();
    let folded: String = caseless::default_case_fold_str(&nfc).nfc().collect();
    folded.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Levenshtein distance over Unicode scalar values.
pub fn levenshtein(a: &str, b: &str) -> usize {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    if a.is_empty() {
        return b.len();
    }
    let mut row: Vec<usize> = (0..=b.len()).collect();
    for (i, ca) in a.iter().enumerate() {
        let mut diag = row[0];
        row[0] = i + 1;
        for (j, cb) in b.iter().enumerate() {
            let up = row[j + 1];
            row[j + 1] = (diag + usize::from(ca != cb)).min(up + 1).min(row[j] + 1);
            diag = up;
        }
    }
    row[b.len()]
}

/// `1 - levenshtein / max_len`; 1.0 when both are empty.
pub fn ned(pred: &str, reference: &str) -> f64 {
    let n = pred.chars().count().max(reference.chars().count());
    if n == 0 {
        1.0
    } else {
        1.0 - levenshtein(pred, reference) as f64 / n as f64
    }
}

/// [`ned`] after [`normalize`] on both sides.
pub fn adjusted_ned(pred: &str, reference: &str) -> f64 {
    ned(&normalize(pred), &normalize(reference))
}
