//! Encoding one downlink message that acknowledges `K` users out of a large
//! population.
//!
//! Four codecs are provided. Concatenation lists every 32-bit ID.
//! Enumerative coding sends the rank of the set among all `K`-subsets and
//! is exact. An XOR-filter fingerprint table (`HashSig`) and a Bloom filter
//! trade a one-sided false-alarm rate for length.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use bitvec::prelude::*;
use num_bigint::BigUint;
use num_traits::{One, ToPrimitive, Zero};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::simkernel::RngStream;

pub const DEFAULT_POPULATION: u64 = 1 << 32;
pub const DEFAULT_K_MAX: usize = 1000;
const ID_BITS: usize = 32;
const XOR_ATTEMPT_BITS: usize = 8;

pub type Bits = BitVec<u8, Msb0>;

/// Sorted set of distinct acknowledged user IDs.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AckSet {
    population: u64,
    k_max: usize,
    ids: Vec<u64>,
}

impl AckSet {
    /// Accepts IDs in any order; they are stored sorted.
    pub fn new(population: u64, k_max: usize, ids: impl IntoIterator<Item = u64>) -> Result<Self> {
        if population == 0 || population > DEFAULT_POPULATION {
            return Err(Error::invalid("population", "must be in [1, 2^32]"));
        }
        let mut ids: Vec<u64> = ids.into_iter().collect();
        ids.sort_unstable();
        if let Some(w) = ids.windows(2).find(|w| w[0] == w[1]) {
            return Err(Error::DuplicateId(w[0]));
        }
        if ids.len() > k_max {
            return Err(Error::TooManyAcks { k: ids.len(), k_max });
        }
        if let Some(&id) = ids.last().filter(|&&id| id >= population) {
            return Err(Error::IdOutOfRange { id, n: population });
        }
        Ok(AckSet { population, k_max, ids })
    }

    /// `K` distinct IDs drawn uniformly from the population.
    pub fn random(population: u64, k_max: usize, k: usize, rng: &mut RngStream) -> Result<Self> {
        if k as u64 > population {
            return Err(Error::invalid("k", "exceeds the population"));
        }
        let mut set = BTreeSet::new();
        while set.len() < k {
            set.insert(rng.below(population));
        }
        AckSet::new(population, k_max, set)
    }

    pub fn population(&self) -> u64 {
        self.population
    }

    pub fn k_max(&self) -> usize {
        self.k_max
    }

    pub fn ids(&self) -> &[u64] {
        &self.ids
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn contains(&self, id: u64) -> bool {
        self.ids.binary_search(&id).is_ok()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "scheme", rename_all = "snake_case", deny_unknown_fields)]
pub enum FeedbackScheme {
    Concat,
    Enumerative,
    HashSig { eps: f64 },
    Bloom { eps: f64 },
}

impl FeedbackScheme {
    pub fn name(&self) -> String {
        match self {
            FeedbackScheme::Concat => "concat".into(),
            FeedbackScheme::Enumerative => "enumerative".into(),
            FeedbackScheme::HashSig { eps } => format!("hashsig:{eps}"),
            FeedbackScheme::Bloom { eps } => format!("bloom:{eps}"),
        }
    }

    fn eps(&self) -> Result<Option<f64>> {
        match *self {
            FeedbackScheme::HashSig { eps } | FeedbackScheme::Bloom { eps } => {
                if !(eps > 0.0 && eps < 1.0) {
                    return Err(Error::invalid("eps", "false-alarm rate must be in (0, 1)"));
                }
                Ok(Some(eps))
            }
            _ => Ok(None),
        }
    }

    /// Payload length in bits for `k` acknowledgments out of `population`.
    pub fn payload_bits(&self, population: u64, k: usize) -> Result<usize> {
        let eps = self.eps()?;
        Ok(match self {
            FeedbackScheme::Concat => ID_BITS * k,
            FeedbackScheme::Enumerative => ceil_log2(&binomial(population, k)),
            FeedbackScheme::HashSig { .. } => xor_slots(k) * fingerprint_bits(eps.expect("checked")),
            FeedbackScheme::Bloom { .. } => bloom_bits(k, eps.expect("checked")),
        })
    }
}

/// `ceil(log2(1/eps))`, the per-user fingerprint width.
pub fn fingerprint_bits(eps: f64) -> usize {
    ((1.0 / eps).log2().ceil() as usize).max(1)
}

/// Slot count of an XOR filter holding `k` keys: `floor(1.23 k) + 32`,
/// rounded up to a multiple of 3.
pub fn xor_slots(k: usize) -> usize {
    3 * (123 * k / 100 + 32).div_ceil(3)
}

/// `ceil(1.44 k log2(1/eps))`.
pub fn bloom_bits(k: usize, eps: f64) -> usize {
    (1.44 * k as f64 * (1.0 / eps).log2()).ceil() as usize
}

/// `round(m / k * ln 2)`, at least one.
pub fn bloom_hashes(m: usize, k: usize) -> usize {
    if k == 0 {
        return 1;
    }
    ((m as f64 / k as f64 * std::f64::consts::LN_2).round() as usize).max(1)
}

/// Width of the fixed header field that carries `K` for enumerative decoding.
pub fn k_header_bits(k_max: usize) -> usize {
    ceil_log2(&BigUint::from(k_max + 1))
}

/// Exact binomial coefficient; zero when `k > n`.
pub fn binomial(n: u64, k: usize) -> BigUint {
    if k as u64 > n {
        return BigUint::zero();
    }
    let k = (k as u64).min(n - k as u64);
    let mut acc = BigUint::one();
    for j in 0..k {
        acc *= n - j;
        acc /= j + 1;
    }
    acc
}

/// Number of bits needed to index `x` distinct values, `ceil(log2 x)`.
pub fn ceil_log2(x: &BigUint) -> usize {
    if x <= &BigUint::one() {
        return 0;
    }
    (x - 1u32).bits() as usize
}

/// Rank of a sorted subset in the combinatorial number system:
/// `sum_i C(c_i, i + 1)`.
pub fn rank_subset(ids: &[u64]) -> BigUint {
    ids.iter()
        .enumerate()
        .map(|(i, &c)| binomial(c, i + 1))
        .fold(BigUint::zero(), |a, b| a + b)
}

fn ln_big(x: &BigUint) -> f64 {
    let bits = x.bits();
    if bits <= 1000 {
        return x.to_f64().expect("fits").ln();
    }
    let shift = bits - 64;
    (x >> shift).to_f64().expect("fits").ln() + shift as f64 * std::f64::consts::LN_2
}

fn ln_binomial(n: u64, k: usize) -> f64 {
    (0..k as u64).map(|j| ((n - j) as f64 / (j + 1) as f64).ln()).sum()
}

/// Inverse of [`rank_subset`] for `k`-subsets of `[0, population)`.
pub fn unrank_subset(rank: &BigUint, k: usize, population: u64) -> Result<Vec<u64>> {
    if rank >= &binomial(population, k) {
        return Err(Error::MalformedFeedback("rank exceeds the number of subsets".into()));
    }
    let mut r = rank.clone();
    let mut out = vec![0u64; k];
    let mut hi = population - 1;
    for i in (1..=k).rev() {
        // largest c with C(c, i) <= r, and c <= hi
        let lo = i as u64 - 1;
        let mut c = if r.is_zero() {
            lo
        } else {
            let target = ln_big(&r);
            let (mut a, mut b) = (lo, hi);
            while a < b {
                let mid = a + (b - a).div_ceil(2);
                if ln_binomial(mid, i) <= target {
                    a = mid;
                } else {
                    b = mid - 1;
                }
            }
            a
        };
        let mut val = binomial(c, i);
        while val > r {
            val = val * (c - i as u64) / c;
            c -= 1;
        }
        while c < hi {
            let next = if c + 1 == i as u64 {
                BigUint::one()
            } else {
                &val * (c + 1) / (c + 1 - i as u64)
            };
            if next > r {
                break;
            }
            val = next;
            c += 1;
        }
        r -= val;
        out[i - 1] = c;
        hi = c.saturating_sub(1);
    }
    Ok(out)
}

fn mix64(mut z: u64) -> u64 {
    // splitmix64 finaliser
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn hash(id: u64, seed: u64, index: u64) -> u64 {
    mix64(id ^ mix64(seed ^ mix64(index)))
}

fn reduce(h: u64, n: usize) -> usize {
    ((h as u128 * n as u128) >> 64) as usize
}

fn push_uint(bits: &mut Bits, value: u64, width: usize) {
    for i in (0..width).rev() {
        bits.push((value >> i) & 1 == 1);
    }
}

fn read_uint(bits: &BitSlice<u8, Msb0>) -> u64 {
    bits.iter().fold(0u64, |acc, b| (acc << 1) | *b as u64)
}

fn push_big(bits: &mut Bits, value: &BigUint, width: usize) {
    for i in (0..width as u64).rev() {
        bits.push(value.bit(i));
    }
}

/// Feedback message. `header` carries side information (enumerative `K`,
/// XOR-filter construction attempt) reported apart from the payload
/// length `B`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EncodedFeedback {
    pub scheme: String,
    pub population: u64,
    pub header: Bits,
    pub payload: Bits,
}

impl EncodedFeedback {
    /// Payload length `B` in bits.
    pub fn len_bits(&self) -> usize {
        self.payload.len()
    }

    pub fn header_bits(&self) -> usize {
        self.header.len()
    }

    /// Header and payload as length-prefixed bit strings: a little-endian
    /// u64 bit count followed by the bits packed MSB first.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        for bits in [&self.header, &self.payload] {
            out.extend_from_slice(&(bits.len() as u64).to_le_bytes());
            out.extend_from_slice(bits.as_raw_slice());
        }
        out
    }

    pub fn from_bytes(scheme: &FeedbackScheme, population: u64, bytes: &[u8]) -> Result<Self> {
        let mut rest = bytes;
        let mut take = || -> Result<Bits> {
            if rest.len() < 8 {
                return Err(Error::MalformedFeedback("truncated length prefix".into()));
            }
            let n = u64::from_le_bytes(rest[..8].try_into().expect("8 bytes")) as usize;
            let bytes_needed = n.div_ceil(8);
            if rest.len() < 8 + bytes_needed {
                return Err(Error::MalformedFeedback("truncated bit string".into()));
            }
            let mut bits = Bits::from_slice(&rest[8..8 + bytes_needed]);
            bits.truncate(n);
            rest = &rest[8 + bytes_needed..];
            Ok(bits)
        };
        let header = take()?;
        let payload = take()?;
        if !rest.is_empty() {
            return Err(Error::MalformedFeedback("trailing bytes".into()));
        }
        Ok(EncodedFeedback {
            scheme: scheme.name(),
            population,
            header,
            payload,
        })
    }
}

struct XorKey {
    slots: [usize; 3],
    fp: u64,
}

fn xor_key(id: u64, seed: u64, attempt: u64, block: usize, f: usize) -> XorKey {
    let s = mix64(seed ^ attempt.wrapping_mul(0xA076_1D64_78BD_642F));
    let slots = [0, 1, 2].map(|i| i * block + reduce(hash(id, s, i as u64), block));
    let mask = if f >= 64 { u64::MAX } else { (1u64 << f) - 1 };
    XorKey {
        slots,
        fp: hash(id, s, 3) & mask,
    }
}

// Peeling construction; None when the key hypergraph has a 2-core.
fn xor_build(keys: &[XorKey], slots: usize) -> Option<Vec<u64>> {
    let mut count = vec![0u32; slots];
    let mut xor_idx = vec![0usize; slots];
    for (k, key) in keys.iter().enumerate() {
        for &s in &key.slots {
            count[s] += 1;
            xor_idx[s] ^= k;
        }
    }
    let mut queue: Vec<usize> = (0..slots).filter(|&s| count[s] == 1).collect();
    let mut order = Vec::with_capacity(keys.len());
    while let Some(s) = queue.pop() {
        if count[s] != 1 {
            continue;
        }
        let k = xor_idx[s];
        order.push((k, s));
        for &t in &keys[k].slots {
            count[t] -= 1;
            xor_idx[t] ^= k;
            if count[t] == 1 {
                queue.push(t);
            }
        }
    }
    if order.len() != keys.len() {
        return None;
    }
    let mut table = vec![0u64; slots];
    for &(k, s) in order.iter().rev() {
        let key = &keys[k];
        let others = key.slots.iter().filter(|&&t| t != s).fold(0, |a, &t| a ^ table[t]);
        table[s] = key.fp ^ others;
    }
    Some(table)
}

fn bloom_positions(id: u64, seed: u64, m: usize, hashes: usize) -> impl Iterator<Item = usize> {
    (0..hashes as u64).map(move |i| reduce(hash(id, seed, i), m))
}

pub fn encode(scheme: &FeedbackScheme, ack: &AckSet, seed: u64) -> Result<EncodedFeedback> {
    let k = ack.len();
    let n = ack.population();
    let mut header = Bits::new();
    let mut payload = Bits::new();
    match *scheme {
        FeedbackScheme::Concat => {
            for &id in ack.ids() {
                push_uint(&mut payload, id, ID_BITS);
            }
        }
        FeedbackScheme::Enumerative => {
            push_uint(&mut header, k as u64, k_header_bits(ack.k_max()));
            let width = scheme.payload_bits(n, k)?;
            push_big(&mut payload, &rank_subset(ack.ids()), width);
        }
        FeedbackScheme::HashSig { eps } => {
            scheme.eps()?;
            let f = fingerprint_bits(eps);
            let slots = xor_slots(k);
            let block = slots / 3;
            let (attempt, table) = (0..1u64 << XOR_ATTEMPT_BITS)
                .find_map(|a| {
                    let keys: Vec<XorKey> = ack.ids().iter().map(|&id| xor_key(id, seed, a, block, f)).collect();
                    xor_build(&keys, slots).map(|t| (a, t))
                })
                .ok_or_else(|| Error::invalid("hashsig", "XOR filter construction failed"))?;
            push_uint(&mut header, attempt, XOR_ATTEMPT_BITS);
            for v in table {
                push_uint(&mut payload, v, f);
            }
        }
        FeedbackScheme::Bloom { eps } => {
            scheme.eps()?;
            let m = bloom_bits(k, eps);
            let hashes = bloom_hashes(m, k);
            payload = bitvec![u8, Msb0; 0; m];
            for &id in ack.ids() {
                for p in bloom_positions(id, seed, m, hashes) {
                    payload.set(p, true);
                }
            }
        }
    }
    debug_assert_eq!(payload.len(), scheme.payload_bits(n, k)?);
    Ok(EncodedFeedback {
        scheme: scheme.name(),
        population: n,
        header,
        payload,
    })
}

/// Decoded feedback, ready for repeated membership queries.
#[derive(Clone, Debug)]
pub enum FeedbackDecoder {
    Exact(Vec<u64>),
    Xor {
        table: Vec<u64>,
        block: usize,
        fbits: usize,
        seed: u64,
        attempt: u64,
    },
    Bloom {
        bits: Bits,
        hashes: usize,
        seed: u64,
    },
}

impl FeedbackDecoder {
    /// `k_max` fixes the enumerative header width; `k` is needed for the
    /// Bloom hash count and is ignored by the other schemes.
    pub fn new(scheme: &FeedbackScheme, fb: &EncodedFeedback, k_max: usize, k: usize, seed: u64) -> Result<Self> {
        let bad = |m: &str| Error::MalformedFeedback(m.into());
        match *scheme {
            FeedbackScheme::Concat => {
                if !fb.payload.len().is_multiple_of(ID_BITS) {
                    return Err(bad("concatenation length is not a multiple of 32"));
                }
                let ids: Vec<u64> = fb.payload.chunks(ID_BITS).map(read_uint).collect();
                if ids.windows(2).any(|w| w[0] >= w[1]) {
                    return Err(bad("IDs are not strictly increasing"));
                }
                Ok(FeedbackDecoder::Exact(ids))
            }
            FeedbackScheme::Enumerative => {
                if fb.header.len() != k_header_bits(k_max) {
                    return Err(bad("header width does not match K_max"));
                }
                let k = read_uint(&fb.header) as usize;
                if k > k_max || fb.payload.len() != scheme.payload_bits(fb.population, k)? {
                    return Err(bad("payload length does not match K"));
                }
                let mut rank = BigUint::zero();
                for b in fb.payload.iter() {
                    rank <<= 1;
                    if *b {
                        rank += 1u32;
                    }
                }
                Ok(FeedbackDecoder::Exact(unrank_subset(&rank, k, fb.population)?))
            }
            FeedbackScheme::HashSig { eps } => {
                scheme.eps()?;
                let f = fingerprint_bits(eps);
                if fb.header.len() != XOR_ATTEMPT_BITS || !fb.payload.len().is_multiple_of(3 * f) || fb.payload.is_empty() {
                    return Err(bad("XOR filter length is malformed"));
                }
                let table: Vec<u64> = fb.payload.chunks(f).map(read_uint).collect();
                Ok(FeedbackDecoder::Xor {
                    block: table.len() / 3,
                    table,
                    fbits: f,
                    seed,
                    attempt: read_uint(&fb.header),
                })
            }
            FeedbackScheme::Bloom { eps } => {
                scheme.eps()?;
                if fb.payload.len() != bloom_bits(k, eps) {
                    return Err(bad("Bloom filter length does not match K"));
                }
                Ok(FeedbackDecoder::Bloom {
                    hashes: bloom_hashes(fb.payload.len(), k),
                    bits: fb.payload.clone(),
                    seed,
                })
            }
        }
    }

    pub fn contains(&self, id: u64) -> bool {
        match self {
            FeedbackDecoder::Exact(ids) => ids.binary_search(&id).is_ok(),
            FeedbackDecoder::Xor {
                table,
                block,
                fbits,
                seed,
                attempt,
            } => {
                let key = xor_key(id, *seed, *attempt, *block, *fbits);
                key.slots.iter().fold(0, |a, &s| a ^ table[s]) == key.fp
            }
            FeedbackDecoder::Bloom { bits, hashes, seed } => {
                !bits.is_empty() && bloom_positions(id, *seed, bits.len(), *hashes).all(|p| bits[p])
            }
        }
    }

    /// Fraction of set bits, for Bloom filters.
    pub fn fill(&self) -> Option<f64> {
        match self {
            FeedbackDecoder::Bloom { bits, .. } => Some(bits.count_ones() as f64 / bits.len().max(1) as f64),
            _ => None,
        }
    }
}

/// Membership of one user. Hashed schemes never miss an acknowledged user.
pub fn decode_membership(
    scheme: &FeedbackScheme,
    fb: &EncodedFeedback,
    k_max: usize,
    k: usize,
    user: u64,
    seed: u64,
) -> Result<bool> {
    Ok(FeedbackDecoder::new(scheme, fb, k_max, k, seed)?.contains(user))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct Bounds {
    pub concat: usize,
    pub errorfree: usize,
    pub fa: usize,
}

/// Concatenation length, error-free length `ceil(log2 C(N, K))` and the
/// idealised false-alarm length `ceil(K log2(1/eps))`.
pub fn bounds(population: u64, k: usize, eps: f64) -> Result<Bounds> {
    if !(eps > 0.0 && eps < 1.0) {
        return Err(Error::invalid("eps", "false-alarm rate must be in (0, 1)"));
    }
    Ok(Bounds {
        concat: ID_BITS * k,
        errorfree: ceil_log2(&binomial(population, k)),
        fa: fa_bound_bits(k, eps),
    })
}

pub fn fa_bound_bits(k: usize, eps: f64) -> usize {
    (k as f64 * (1.0 / eps).log2()).ceil() as usize
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct FaEstimate {
    pub false_alarms: u64,
    pub probes: u64,
}

impl FaEstimate {
    pub fn rate(&self) -> f64 {
        self.false_alarms as f64 / self.probes.max(1) as f64
    }

    /// Wilson score interval at the given standard-normal quantile.
    pub fn wilson(&self, z: f64) -> (f64, f64) {
        let n = self.probes as f64;
        let p = self.rate();
        let denom = 1.0 + z * z / n;
        let centre = (p + z * z / (2.0 * n)) / denom;
        let half = z * (p * (1.0 - p) / n + z * z / (4.0 * n * n)).sqrt() / denom;
        (centre - half, centre + half)
    }
}

/// False alarms over `sets` independent random `K`-sets, each probed with
/// `probes_per_set` uniformly drawn non-acknowledged IDs.
pub fn empirical_fa(
    scheme: &FeedbackScheme,
    population: u64,
    k: usize,
    sets: usize,
    probes_per_set: usize,
    rng: &RngStream,
) -> Result<FaEstimate> {
    let mut est = FaEstimate::default();
    if (k as u64) >= population {
        return Ok(est);
    }
    for s in 0..sets {
        let mut set_rng = rng.child(&format!("set/{s}"));
        let ack = AckSet::random(population, k.max(DEFAULT_K_MAX), k, &mut set_rng)?;
        let seed = set_rng.below(u64::MAX);
        let fb = encode(scheme, &ack, seed)?;
        let dec = FeedbackDecoder::new(scheme, &fb, ack.k_max(), k, seed)?;
        let mut probe = rng.child(&format!("probe/{s}"));
        let mut done = 0;
        while done < probes_per_set {
            let id = probe.below(population);
            if ack.contains(id) {
                continue;
            }
            done += 1;
            est.probes += 1;
            est.false_alarms += dec.contains(id) as u64;
        }
    }
    Ok(est)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    #[serde(default = "default_population")]
    pub population: u64,
    pub k_values: Vec<usize>,
    #[serde(default = "default_eps")]
    pub eps: Vec<f64>,
    #[serde(default = "default_sets")]
    pub sets: usize,
    #[serde(default = "default_probes")]
    pub probes_per_set: usize,
    #[serde(default)]
    pub seed: u64,
}

fn default_population() -> u64 {
    DEFAULT_POPULATION
}

fn default_eps() -> Vec<f64> {
    vec![1e-2, 1e-4]
}

fn default_sets() -> usize {
    4
}

fn default_probes() -> usize {
    25_000
}

impl SweepConfig {
    /// `K in {start, start + step, ..} <= end`.
    pub fn range(start: usize, end: usize, step: usize) -> Result<Vec<usize>> {
        if start == 0 || step == 0 || end < start {
            return Err(Error::invalid("k_range", "need 1 <= start <= end and step >= 1"));
        }
        Ok((start..=end).step_by(step).collect())
    }

    pub fn validate(&self) -> Result<()> {
        if self.k_values.iter().any(|&k| k == 0 || k > DEFAULT_K_MAX) {
            return Err(Error::invalid("k_values", "must lie in [1, K_max]"));
        }
        if self.eps.iter().any(|&e| !(e > 0.0 && e < 1.0)) {
            return Err(Error::invalid("eps", "false-alarm rate must be in (0, 1)"));
        }
        if self.population == 0 || self.population > DEFAULT_POPULATION {
            return Err(Error::invalid("population", "must be in [1, 2^32]"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepRow {
    pub k: usize,
    pub scheme: String,
    pub b_bits: usize,
    /// Empty for the idealised bound, which has no construction.
    pub fa_rate: Option<f64>,
}

/// Message lengths and measured false-alarm rates for every `K`: the
/// concatenation and enumerative codecs, then per `eps` the idealised
/// bound, the XOR fingerprint table and the Bloom filter.
pub fn sweep(cfg: &SweepConfig) -> Result<Vec<SweepRow>> {
    cfg.validate()?;
    let root = RngStream::new(cfg.seed, "feedback-sweep");
    let mut rows = Vec::new();
    for &k in &cfg.k_values {
        let mut schemes = vec![FeedbackScheme::Concat, FeedbackScheme::Enumerative];
        for &eps in &cfg.eps {
            rows_for_bound(&mut rows, k, eps);
            schemes.push(FeedbackScheme::HashSig { eps });
            schemes.push(FeedbackScheme::Bloom { eps });
        }
        for scheme in schemes {
            let rng = root.child(&format!("{}/{k}", scheme.name()));
            let fa = empirical_fa(&scheme, cfg.population, k, cfg.sets, cfg.probes_per_set, &rng)?;
            rows.push(SweepRow {
                k,
                scheme: scheme.name(),
                b_bits: scheme.payload_bits(cfg.population, k)?,
                fa_rate: Some(fa.rate()),
            });
        }
    }
    Ok(rows)
}

fn rows_for_bound(rows: &mut Vec<SweepRow>, k: usize, eps: f64) {
    rows.push(SweepRow {
        k,
        scheme: format!("fa_bound:{eps}"),
        b_bits: fa_bound_bits(k, eps),
        fa_rate: None,
    });
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from("K,scheme,B_bits,fa_rate\n");
    for r in rows {
        let fa = r.fa_rate.map(|v| v.to_string()).unwrap_or_default();
        let _ = writeln!(out, "{},{},{},{}", r.k, r.scheme, r.b_bits, fa);
    }
    out
}
