//! Small fixed-size vector helpers for 3-D positions.

pub type Vec3 = [f64; 3];

#[inline]
pub fn sub(a: &Vec3, b: &Vec3) -> Vec3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

#[inline]
pub fn add(a: &Vec3, b: &Vec3) -> Vec3 {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

#[inline]
pub fn norm2(a: &Vec3) -> f64 {
    a[0] * a[0] + a[1] * a[1] + a[2] * a[2]
}

#[inline]
pub fn dist2(a: &Vec3, b: &Vec3) -> f64 {
    norm2(&sub(a, b))
}

#[inline]
pub fn dist(a: &Vec3, b: &Vec3) -> f64 {
    dist2(a, b).sqrt()
}

/// SplitMix64 finalizer, used to derive independent seeds from structured keys.
#[inline]
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Folds a sequence of words into one seed. Order-sensitive.
pub fn derive_seed(words: &[u64]) -> u64 {
    words.iter().fold(0x5eed_u64, |acc, &w| mix64(acc ^ mix64(w)))
}
