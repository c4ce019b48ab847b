//! Keyed derivation of every random parameter.
//!
//! A [`MasterKey`] plus a [`DomainLabel`] selects one ChaCha20 keystream: the
//! 256-bit cipher key is the master key and the 96-bit nonce is the first 12
//! bytes of `SHA-256(label)`. The block counter starts at zero. All samplers
//! consume the stream in a fixed, documented way so two implementations that
//! follow the same rules derive bit-identical parameters.

use std::fmt;

use chacha20::cipher::{KeyIvInit, StreamCipher};
use chacha20::ChaCha20;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const KEY_LEN: usize = 32;

/// 256-bit secret from which all encoder parameters are derived.
#[derive(Clone, PartialEq, Eq)]
pub struct MasterKey([u8; KEY_LEN]);

impl MasterKey {
    pub fn from_bytes(bytes: [u8; KEY_LEN]) -> Self {
        MasterKey(bytes)
    }

    /// Parses 64 hex characters (either case).
    pub fn parse_hex(hex: &str) -> Result<Self> {
        let len = hex.chars().count();
        if len != 2 * KEY_LEN {
            return Err(Error::KeyLength { len });
        }
        let mut bytes = [0u8; KEY_LEN];
        for (position, found) in hex.chars().enumerate() {
            let nibble = found.to_digit(16).ok_or(Error::KeyHex { position, found })? as u8;
            bytes[position / 2] |= if position % 2 == 0 { nibble << 4 } else { nibble };
        }
        Ok(MasterKey(bytes))
    }

    /// Parses the contents of a key file: one line of hex, trailing newline optional.
    pub fn parse_key_file(contents: &str) -> Result<Self> {
        let line = contents.strip_suffix('\n').unwrap_or(contents);
        let line = line.strip_suffix('\r').unwrap_or(line);
        Self::parse_hex(line)
    }

    /// Fresh key from OS entropy.
    pub fn generate() -> Result<Self> {
        let mut bytes = [0u8; KEY_LEN];
        getrandom::getrandom(&mut bytes).map_err(|e| Error::Entropy(e.to_string()))?;
        Ok(MasterKey(bytes))
    }

    pub fn as_bytes(&self) -> &[u8; KEY_LEN] {
        &self.0
    }

    pub fn to_hex(&self) -> String {
        hex_lower(&self.0)
    }

    /// SHA-256 of the key bytes, lowercase hex. Safe to publish.
    pub fn fingerprint(&self) -> String {
        hex_lower(&Sha256::digest(self.0))
    }
}

impl fmt::Debug for MasterKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "MasterKey(fingerprint={})", &self.fingerprint()[..16])
    }
}

fn hex_lower(bytes: &[u8]) -> String {
    use std::fmt::Write;
    bytes.iter().fold(String::with_capacity(bytes.len() * 2), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

/// ASCII tag naming the parameter group a keystream feeds.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct DomainLabel(String);

impl DomainLabel {
    /// # Panics
    /// If `label` is not ASCII.
    pub fn new(label: impl Into<String>) -> Self {
        let label = label.into();
        assert!(label.is_ascii(), "domain labels are ASCII: {label:?}");
        DomainLabel(label)
    }

    pub fn patch_embed() -> Self {
        Self::new("patch_embed.w")
    }

    /// `block` is 1-based.
    pub fn block(block: usize) -> Self {
        Self::new(format!("block.{block}.w"))
    }

    pub fn pos_embed() -> Self {
        Self::new("pos_embed")
    }

    pub fn projection() -> Self {
        Self::new("proj.w")
    }

    pub fn patch_perm(image_index: usize) -> Self {
        Self::new(format!("patch_perm.{image_index}"))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    fn nonce(&self) -> [u8; 12] {
        let digest = Sha256::digest(self.0.as_bytes());
        let mut nonce = [0u8; 12];
        nonce.copy_from_slice(&digest[..12]);
        nonce
    }
}

impl fmt::Display for DomainLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

const BLOCK: usize = 64;

/// Unbounded deterministic byte stream for one `(key, label)` pair.
pub struct Keystream {
    cipher: ChaCha20,
    buf: [u8; BLOCK],
    pos: usize,
}

impl Keystream {
    pub fn new(key: &MasterKey, label: &DomainLabel) -> Self {
        Self::with_nonce(key, label.nonce())
    }

    fn with_nonce(key: &MasterKey, nonce: [u8; 12]) -> Self {
        let cipher = ChaCha20::new(&key.0.into(), &nonce.into());
        Keystream {
            cipher,
            buf: [0; BLOCK],
            pos: BLOCK,
        }
    }

    /// Stream keyed from OS entropy; used when patch permutations must not be
    /// reproducible even by the key holder.
    pub fn from_entropy(label: &DomainLabel) -> Result<Self> {
        Ok(Self::new(&MasterKey::generate()?, label))
    }

    fn refill(&mut self) {
        self.buf = [0; BLOCK];
        self.cipher.apply_keystream(&mut self.buf);
        self.pos = 0;
    }

    pub fn fill_bytes(&mut self, out: &mut [u8]) {
        for byte in out {
            if self.pos == BLOCK {
                self.refill();
            }
            *byte = self.buf[self.pos];
            self.pos += 1;
        }
    }

    pub fn next_u32(&mut self) -> u32 {
        let mut b = [0u8; 4];
        self.fill_bytes(&mut b);
        u32::from_le_bytes(b)
    }

    /// Uniform in `[0, 1)`: four bytes read as a little-endian `u32`, divided by 2^32.
    pub fn uniform(&mut self) -> f64 {
        uniform_from_u32(self.next_u32())
    }

    /// Box-Muller over consecutive uniform pairs. `u1` is clamped to at least
    /// 2^-32 before the log. Each pair yields two outputs; for odd `n` the
    /// last second output is dropped (its bytes are still consumed).
    ///
    /// Transcendentals go through `libm` so results do not depend on the
    /// platform math library.
    pub fn gaussian(&mut self, n: usize, mean: f64, std: f64) -> Vec<f64> {
        let mut out = Vec::with_capacity(n);
        while out.len() < n {
            let u1 = self.uniform().max(MIN_UNIFORM);
            let u2 = self.uniform();
            let radius = libm::sqrt(-2.0 * libm::log(u1));
            let theta = 2.0 * std::f64::consts::PI * u2;
            out.push(mean + std * radius * libm::cos(theta));
            if out.len() < n {
                out.push(mean + std * radius * libm::sin(theta));
            }
        }
        out
    }

    /// [`Self::gaussian`] narrowed to `f32` parameters.
    pub fn gaussian_f32(&mut self, n: usize, mean: f64, std: f64) -> Vec<f32> {
        self.gaussian(n, mean, std).into_iter().map(|v| v as f32).collect()
    }

    /// Unbiased uniform integer in `0..bound` by rejection on 32-bit draws.
    pub fn below(&mut self, bound: u32) -> u32 {
        assert!(bound > 0);
        let bound64 = u64::from(bound);
        let zone = ((1u64 << 32) / bound64) * bound64;
        loop {
            let v = u64::from(self.next_u32());
            if v < zone {
                return (v % bound64) as u32;
            }
        }
    }

    /// Fisher-Yates from index `n - 1` down to 1, swap targets drawn with [`Self::below`].
    pub fn permutation(&mut self, n: usize) -> Vec<usize> {
        assert!(n >= 1, "permutation of an empty set");
        assert!(n <= u32::MAX as usize);
        let mut perm: Vec<usize> = (0..n).collect();
        for i in (1..n).rev() {
            let j = self.below((i + 1) as u32) as usize;
            perm.swap(i, j);
        }
        perm
    }
}

const MIN_UNIFORM: f64 = 1.0 / 4_294_967_296.0;

pub fn uniform_from_u32(v: u32) -> f64 {
    f64::from(v) / 4_294_967_296.0
}

pub fn is_permutation(perm: &[usize]) -> bool {
    let mut seen = vec![false; perm.len()];
    perm.iter()
        .all(|&p| p < seen.len() && !std::mem::replace(&mut seen[p], true))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn key(b: u8) -> MasterKey {
        MasterKey::from_bytes([b; KEY_LEN])
    }

    #[test]
    fn parse_zero_and_ff() {
        assert_eq!(MasterKey::parse_hex(&"00".repeat(32)).unwrap().as_bytes(), &[0u8; 32]);
        assert_eq!(
            MasterKey::parse_hex(&"ff".repeat(32)).unwrap().as_bytes(),
            &[0xffu8; 32]
        );
        assert_eq!(
            MasterKey::parse_hex(&"FF".repeat(32)).unwrap().as_bytes(),
            &[0xffu8; 32]
        );
    }

    #[test]
    fn parse_reports_bad_digit_position() {
        let hex = format!("0g{}", "00".repeat(31));
        match MasterKey::parse_hex(&hex) {
            Err(Error::KeyHex { position, found }) => {
                assert_eq!(position, 1);
                assert_eq!(found, 'g');
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn parse_rejects_bad_length() {
        assert!(matches!(MasterKey::parse_hex("abcd"), Err(Error::KeyLength { len: 4 })));
        assert!(matches!(
            MasterKey::parse_hex(&"0".repeat(65)),
            Err(Error::KeyLength { len: 65 })
        ));
    }

    #[test]
    fn key_file_allows_trailing_newline() {
        let hex = "0123456789abcdef".repeat(4);
        let a = MasterKey::parse_key_file(&format!("{hex}\n")).unwrap();
        let b = MasterKey::parse_key_file(&hex).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.to_hex(), hex);
    }

    #[test]
    fn debug_does_not_leak_key() {
        let k = key(0xab);
        assert!(!format!("{k:?}").contains(&k.to_hex()));
    }

    #[test]
    fn chacha20_zero_key_zero_nonce_block() {
        // RFC 8439 appendix A.1, test vector #1 (block counter 0).
        let expected = "76b8e0ada0f13d90405d6ae55386bd28bdd219b8a08ded1aa836efcc8b770dc7\
                        da41597c5157488d7724e03fb8d84a376a43b8f41518a11cc387b669b2ee6586";
        let mut out = [0u8; 64];
        Keystream::with_nonce(&key(0), [0; 12]).fill_bytes(&mut out);
        assert_eq!(hex_lower(&out), expected);
    }

    #[test]
    fn label_nonce_is_sha256_prefix() {
        // python3 -c "import hashlib; print(hashlib.sha256(b'pos_embed').hexdigest()[:24])"
        assert_eq!(hex_lower(&DomainLabel::pos_embed().nonce()), "31b5dee6a4d6178b5038d11e");
    }

    #[test]
    fn uniform_endpoints() {
        assert_eq!(uniform_from_u32(0), 0.0);
        assert_eq!(uniform_from_u32(0x8000_0000), 0.5);
        assert_eq!(uniform_from_u32(u32::MAX), (4_294_967_296.0 - 1.0) / 4_294_967_296.0);
        assert!(uniform_from_u32(u32::MAX) < 1.0);
    }

    #[test]
    fn uniform_reads_little_endian() {
        let mut s = Keystream::new(&key(1), &DomainLabel::new("x"));
        let mut t = Keystream::new(&key(1), &DomainLabel::new("x"));
        let mut b = [0u8; 4];
        s.fill_bytes(&mut b);
        assert_eq!(t.uniform(), uniform_from_u32(u32::from_le_bytes(b)));
    }

    #[test]
    fn determinism_and_domain_separation() {
        let mut a = [0u8; 64];
        let mut b = [0u8; 64];
        Keystream::new(&key(7), &DomainLabel::pos_embed()).fill_bytes(&mut a);
        Keystream::new(&key(7), &DomainLabel::pos_embed()).fill_bytes(&mut b);
        assert_eq!(a, b);

        Keystream::new(&key(7), &DomainLabel::patch_embed()).fill_bytes(&mut b);
        assert_ne!(a, b);

        Keystream::new(&key(8), &DomainLabel::pos_embed()).fill_bytes(&mut b);
        assert_ne!(a, b);
    }

    #[test]
    fn chunked_reads_match_bulk_read() {
        let mut bulk = [0u8; 200];
        Keystream::new(&key(3), &DomainLabel::new("c")).fill_bytes(&mut bulk);
        let mut s = Keystream::new(&key(3), &DomainLabel::new("c"));
        let mut chunked = Vec::new();
        for n in [1usize, 7, 64, 65, 63] {
            let mut part = vec![0u8; n];
            s.fill_bytes(&mut part);
            chunked.extend(part);
        }
        assert_eq!(&bulk[..], &chunked[..]);
    }

    #[test]
    fn gaussian_counts() {
        let mut s = Keystream::new(&key(0), &DomainLabel::new("g"));
        assert!(s.gaussian(0, 0.0, 1.0).is_empty());
        assert_eq!(s.gaussian(7, 0.0, 1.0).len(), 7);
    }

    #[test]
    fn gaussian_odd_count_consumes_whole_pair() {
        let label = DomainLabel::new("g");
        let mut a = Keystream::new(&key(0), &label);
        a.gaussian(3, 0.0, 1.0);
        let after_odd = a.next_u32();
        let mut b = Keystream::new(&key(0), &label);
        b.gaussian(4, 0.0, 1.0);
        assert_eq!(after_odd, b.next_u32());
    }

    #[test]
    fn gaussian_moments() {
        let mut s = Keystream::new(&key(42), &DomainLabel::new("moments"));
        let v = s.gaussian(100_000, 0.0, 1.0);
        let n = v.len() as f64;
        let mean = v.iter().sum::<f64>() / n;
        let std = (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt();
        assert!(mean.abs() < 0.02, "mean {mean}");
        assert!((0.98..=1.02).contains(&std), "std {std}");
    }

    #[test]
    fn gaussian_scale_and_shift() {
        let label = DomainLabel::new("affine");
        let base = Keystream::new(&key(5), &label).gaussian(9, 0.0, 1.0);
        let moved = Keystream::new(&key(5), &label).gaussian(9, 3.0, 0.5);
        for (b, m) in base.iter().zip(&moved) {
            assert!((3.0 + 0.5 * b - m).abs() < 1e-12);
        }
    }

    #[test]
    fn uniform_stays_in_unit_interval() {
        let mut s = Keystream::new(&key(9), &DomainLabel::new("u"));
        assert!((0..100_000).map(|_| s.uniform()).all(|u| (0.0..1.0).contains(&u)));
    }

    #[test]
    fn permutation_small_cases() {
        let mut s = Keystream::new(&key(1), &DomainLabel::new("p"));
        assert_eq!(s.permutation(1), vec![0]);
        let mut p = s.permutation(100);
        p.sort_unstable();
        assert_eq!(p, (0..100).collect::<Vec<_>>());
    }

    #[test]
    fn below_is_roughly_uniform() {
        let mut s = Keystream::new(&key(2), &DomainLabel::new("below"));
        let mut counts = [0usize; 3];
        for _ in 0..30_000 {
            counts[s.below(3) as usize] += 1;
        }
        for c in counts {
            assert!((9_500..10_500).contains(&c), "{counts:?}");
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn hex_round_trip(bytes in proptest::array::uniform32(any::<u8>())) {
            let k = MasterKey::from_bytes(bytes);
            prop_assert_eq!(MasterKey::parse_hex(&k.to_hex()).unwrap(), k.clone());
            prop_assert_eq!(MasterKey::parse_hex(&k.to_hex().to_uppercase()).unwrap(), k);
        }

        #[test]
        fn permutation_is_bijection(n in 1usize..10_000, seed in any::<u8>()) {
            let perm = Keystream::new(&key(seed), &DomainLabel::patch_perm(n)).permutation(n);
            prop_assert!(is_permutation(&perm));
        }
    }
}
