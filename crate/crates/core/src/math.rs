//! Overflow-safe scalar functions and seed derivation used throughout the crate.

/// Numerically stable softplus: `log(1 + e^x) = max(x, 0) + log1p(e^{-|x|})`.
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// Inverse of softplus on (0, inf): `log(e^y - 1)`.
pub fn softplus_inv(y: f64) -> f64 {
    debug_assert!(y > 0.0);
    y.exp_m1().ln()
}

/// Numerically stable logistic sigmoid.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Stable `log(1 + e^{-t})` for any sign of `t`.
pub fn log1p_exp_neg(t: f64) -> f64 {
    (-t.abs()).exp().ln_1p() + (-t).max(0.0)
}

/// Maps an unconstrained raw parameter to a strictly positive value.
/// Used for trainable beta/eta so positivity never needs a constraint.
pub fn positive_from_raw(raw: f64) -> f64 {
    softplus(raw) + 1e-6
}

pub fn positive_from_raw_deriv(raw: f64) -> f64 {
    sigmoid(raw)
}

/// Inverse of [`positive_from_raw`]; requires `value > 1e-6`.
pub fn raw_from_positive(value: f64) -> f64 {
    softplus_inv(value - 1e-6)
}

/// SplitMix64 step, used to derive independent RNG seeds from
/// (base seed, stream tags) deterministically.
pub fn splitmix64(state: u64) -> u64 {
    let mut z = state.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derives a sub-seed from a base seed and up to two stream tags.
pub fn derive_seed(base: u64, a: u64, b: u64) -> u64 {
    splitmix64(splitmix64(base ^ splitmix64(a)).wrapping_add(splitmix64(b ^ 0x5851_f42d_4c95_7f2d)))
}
