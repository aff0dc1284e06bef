use crate::error::{Result, WeicError};

/// Bell number `B_n` via the Bell triangle. Errors when `B_n` exceeds `u64`.
pub fn bell_number(n: usize) -> Result<u64> {
    let mut row: Vec<u128> = vec![1];
    for _ in 0..n {
        let mut next = Vec::with_capacity(row.len() + 1);
        next.push(*row.last().expect("rows are nonempty"));
        for &x in &row {
            let v = next
                .last()
                .expect("rows are nonempty")
                .checked_add(x)
                .ok_or(WeicError::BellOverflow(n))?;
            next.push(v);
        }
        row = next;
    }
    u64::try_from(row[0]).map_err(|_| WeicError::BellOverflow(n))
}

/// Binomial coefficient, exact for the small arguments used here.
pub fn binomial(n: usize, k: usize) -> u64 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    (0..k).fold(1u64, |acc, i| acc * (n - i) as u64 / (i + 1) as u64)
}

/// All set partitions of `0..n` as restricted growth strings, in
/// lexicographic order. `rgs[i]` is the block label of element `i`.
pub fn restricted_growth_strings(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![Vec::new()];
    }
    let mut out = Vec::new();
    let mut a = vec![0usize; n];
    loop {
        out.push(a.clone());
        // rightmost position that can be incremented
        let mut i = n - 1;
        loop {
            let max_prefix = a[..i].iter().copied().max().map_or(0, |m| m + 1);
            if i > 0 && a[i] < max_prefix {
                a[i] += 1;
                for x in a.iter_mut().skip(i + 1) {
                    *x = 0;
                }
                break;
            }
            if i == 0 {
                return out;
            }
            i -= 1;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_bell_numbers() {
        let expected = [1u64, 1, 2, 5, 15, 52, 203, 877, 4140];
        for (n, &b) in expected.iter().enumerate() {
            assert_eq!(bell_number(n).unwrap(), b, "B_{n}");
        }
    }

    #[test]
    fn bell_overflow_is_guarded() {
        assert_eq!(bell_number(25).unwrap(), 4_638_590_332_229_999_353);
        assert_eq!(bell_number(26).unwrap_err(), WeicError::BellOverflow(26));
    }

    #[test]
    fn rgs_count_matches_bell() {
        for n in 0..8 {
            let parts = restricted_growth_strings(n);
            assert_eq!(parts.len() as u64, bell_number(n).unwrap());
            let mut sorted = parts.clone();
            sorted.sort();
            assert_eq!(sorted, parts, "lexicographic order for n = {n}");
        }
    }

    #[test]
    fn bell_recurrence_via_binomials() {
        // B_{n+1} = sum_s C(n, s) B_s
        for n in 0..12 {
            let sum: u64 = (0..=n).map(|s| binomial(n, s) * bell_number(s).unwrap()).sum();
            assert_eq!(sum, bell_number(n + 1).unwrap());
        }
    }
}
