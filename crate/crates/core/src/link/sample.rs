use super::LinkError;
use rand::seq::index;
use rand::SeedableRng;
use rand_xoshiro::Xoshiro256PlusPlus;

/// Number of symbols disclosed for a key of `n` at `fraction`.
pub fn sample_size(n: usize, fraction: f64) -> Result<usize, LinkError> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(LinkError::Config(format!(
            "sample fraction must be in (0,1], got {fraction}"
        )));
    }
    Ok(((n as f64) * fraction).round() as usize)
}

/// Sorted positions of a uniform sample of `k` out of `n`, without
/// replacement, identical for both parties given the seed.
pub fn sample_indices(n: usize, k: usize, seed: u64) -> Result<Vec<usize>, LinkError> {
    if k > n {
        return Err(LinkError::Config(format!("sample of {k} from a key of {n}")));
    }
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(seed);
    let mut idx = index::sample(&mut rng, n, k).into_vec();
    idx.sort_unstable();
    Ok(idx)
}

/// Splits `key` into (sampled symbols, remaining symbols).
pub fn split_sample(key: &[u8], indices: &[usize]) -> (Vec<u8>, Vec<u8>) {
    let mut sampled = Vec::with_capacity(indices.len());
    let mut rest = Vec::with_capacity(key.len() - indices.len());
    let mut it = indices.iter().peekable();
    for (i, &s) in key.iter().enumerate() {
        if it.peek() == Some(&&i) {
            it.next();
            sampled.push(s);
        } else {
            rest.push(s);
        }
    }
    (sampled, rest)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampleEstimate {
    pub indices: Vec<usize>,
    pub qber: f64,
    pub alice_rest: Vec<u8>,
    pub bob_rest: Vec<u8>,
}

/// Samples both keys at the same positions, estimates the symbol error rate
/// and removes the disclosed symbols.
pub fn sample_and_estimate(
    alice: &[u8],
    bob: &[u8],
    fraction: f64,
    seed: u64,
) -> Result<SampleEstimate, LinkError> {
    if alice.len() != bob.len() {
        return Err(LinkError::Malformed(format!(
            "keys of length {} and {}",
            alice.len(),
            bob.len()
        )));
    }
    let k = sample_size(alice.len(), fraction)?;
    let indices = sample_indices(alice.len(), k, seed)?;
    let (sa, alice_rest) = split_sample(alice, &indices);
    let (sb, bob_rest) = split_sample(bob, &indices);
    let errors = sa.iter().zip(&sb).filter(|(a, b)| a != b).count();
    Ok(SampleEstimate {
        qber: if k == 0 { 0.0 } else { errors as f64 / k as f64 },
        indices,
        alice_rest,
        bob_rest,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn whole_key_sample_empties_it() {
        let k = vec![1u8; 100];
        let s = sample_and_estimate(&k, &k, 1.0, 3).unwrap();
        assert!(s.alice_rest.is_empty() && s.bob_rest.is_empty());
        assert_eq!(s.qber, 0.0);
    }

    #[test]
    fn clean_key_estimates_zero() {
        let k: Vec<u8> = (0..1000).map(|i| (i % 4) as u8).collect();
        let s = sample_and_estimate(&k, &k, 0.1, 3).unwrap();
        assert_eq!(s.qber, 0.0);
        assert_eq!(s.indices.len(), 100);
        assert_eq!(s.alice_rest.len(), 900);
    }

    #[test]
    fn planted_errors_are_estimated() {
        let mut rng = Xoshiro256PlusPlus::seed_from_u64(1);
        let n = 1_000_000;
        let a: Vec<u8> = (0..n).map(|_| rng.gen_range(0..4)).collect();
        let b: Vec<u8> = a
            .iter()
            .map(|&s| if rng.gen::<f64>() < 0.05 { (s + 1) % 4 } else { s })
            .collect();
        let s = sample_and_estimate(&a, &b, 0.1, 42).unwrap();
        assert_eq!(s.indices.len(), 100_000);
        assert!((s.qber - 0.05).abs() <= 0.007, "{}", s.qber);
    }

    #[test]
    fn oversized_sample_rejected() {
        assert!(sample_indices(10, 11, 0).is_err());
        assert!(sample_size(10, 0.0).is_err());
        assert!(sample_size(10, 1.5).is_err());
    }
}
