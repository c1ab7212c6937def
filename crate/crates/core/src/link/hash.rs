use super::LinkError;

/// `2^64 - 59`, the largest 64-bit prime.
pub const FIELD_PRIME: u64 = u64::MAX - 58;
/// Symbols packed into one field element.
const SYMBOLS_PER_WORD: usize = 30;

/// Tag length for a correctness parameter: `ceil(log2(1/eps_cor))`.
pub fn tag_bits(epsilon_cor: f64) -> Result<u32, LinkError> {
    if !(epsilon_cor > 0.0 && epsilon_cor < 1.0) {
        return Err(LinkError::Config(format!(
            "epsilon_cor must be in (0,1), got {epsilon_cor}"
        )));
    }
    let t = (1.0 / epsilon_cor).log2();
    // guard against log2(2^k) landing a hair above k
    let t = if (t - t.round()).abs() < 1e-9 { t.round() } else { t.ceil() };
    Ok((t as u32).clamp(1, 64))
}

fn mul_mod(a: u64, b: u64) -> u64 {
    ((a as u128 * b as u128) % FIELD_PRIME as u128) as u64
}

fn add_mod(a: u64, b: u64) -> u64 {
    ((a as u128 + b as u128) % FIELD_PRIME as u128) as u64
}

/// splitmix64 step.
fn splitmix(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Evaluation point `x` and the affine finish `(a, b)`, `a != 0`, all
/// derived from the disclosed seed.
fn keys(seed: u64) -> (u64, u64, u64) {
    let mut s = seed;
    let x = splitmix(&mut s) % FIELD_PRIME;
    let a = 1 + splitmix(&mut s) % (FIELD_PRIME - 1);
    let b = splitmix(&mut s) % FIELD_PRIME;
    (x, a, b)
}

/// Polynomial evaluation hash of a symbol string, truncated to `bits`.
///
/// Symbols are packed 30 to a field element; the length is the leading
/// coefficient. Two different strings of at most `L` words collide before
/// the finish for at most `L + 1` of the `p` evaluation points. The
/// polynomial value `y` is mapped to `(a*y + b) mod p` before the low `bits`
/// bits are kept.
pub fn polynomial_hash(symbols: &[u8], seed: u64, bits: u32) -> Result<u64, LinkError> {
    if symbols.is_empty() {
        return Err(LinkError::EmptyKey);
    }
    if !(1..=64).contains(&bits) {
        return Err(LinkError::Config(format!("tag bits must be 1..=64, got {bits}")));
    }
    let (x, a, b) = keys(seed);
    let mut h = symbols.len() as u64 % FIELD_PRIME;
    for chunk in symbols.chunks(SYMBOLS_PER_WORD) {
        let word = chunk
            .iter()
            .enumerate()
            .fold(0u64, |w, (i, &s)| w | u64::from(s & 3) << (2 * i));
        h = add_mod(mul_mod(h, x), word);
    }
    let h = add_mod(mul_mod(a, h), b);
    Ok(if bits == 64 { h } else { h & ((1u64 << bits) - 1) })
}
