/// Lowercase alphanumeric tokens.
pub fn tokens(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_ascii_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(|t| t.to_ascii_lowercase())
        .collect()
}

/// FNV-1a, stable across platforms and releases.
pub fn bucket(token: &str, buckets: usize) -> usize {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in token.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    (h % buckets as u64) as usize
}

/// Normalized bag of hashed tokens.
pub fn bag(text: &str, buckets: usize) -> Vec<f64> {
    let mut v = vec![0.0; buckets];
    let toks = tokens(text);
    for t in &toks {
        v[bucket(t, buckets)] += 1.0;
    }
    if !toks.is_empty() {
        let n = toks.len() as f64;
        v.iter_mut().for_each(|x| *x /= n);
    }
    v
}

/// One bag per clause (split on ", then "), placed in a slot per clause
/// position; clauses past the last slot share it.
pub fn clause_bag(goal: &str, buckets: usize, slots: usize) -> Vec<f64> {
    let mut v = vec![0.0; buckets * slots];
    for (i, clause) in goal.split(", then ").enumerate() {
        let s = i.min(slots - 1);
        for (j, x) in bag(clause, buckets).into_iter().enumerate() {
            v[s * buckets + j] += x;
        }
    }
    v
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bags_are_normalized_and_position_aware() {
        let b = bag("Go to the red ball", 64);
        assert!((b.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let a = clause_bag("go to the red ball, then open the door", 64, 4);
        let c = clause_bag("open the door, then go to the red ball", 64, 4);
        assert_ne!(a, c);
        assert_eq!(bucket("ball", 64), bucket("ball", 64));
    }
}
