//! Brownian paths in `R^n` sampled on a finite, refinable set of times.
//!
//! Every time key owns an independent standard normal vector derived from the path's stream and
//! the key itself. Initial sampling uses it as an increment, bridge refinement as the bridge
//! fluctuation. A value stored at a key therefore depends only on the key and on the stored
//! neighbours at the moment it was inserted, which makes nested grids share their common values.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::sync::Mutex;

use rand::Rng;
use rand_distr::Exp1;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::dot;
use crate::rng::{mix64, normal_vector, RngStream};
use crate::scalar::Real;

/// Exact dyadic rational `num / 2^log2_den`, kept in lowest terms.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Dyadic {
    pub num: i64,
    pub log2_den: u32,
}

impl Dyadic {
    pub fn new(num: i64, log2_den: u32) -> Self {
        let mut d = Self { num, log2_den };
        while d.log2_den > 0 && d.num % 2 == 0 {
            d.num /= 2;
            d.log2_den -= 1;
        }
        d
    }

    pub fn integer(n: i64) -> Self {
        Self { num: n, log2_den: 0 }
    }

    pub fn to_f64(self) -> f64 {
        self.num as f64 / (1u64 << self.log2_den) as f64
    }

    /// Arithmetic mean, exact.
    pub fn mean(self, other: Self) -> Self {
        let den = self.log2_den.max(other.log2_den);
        let a = self.num as i128 * (1i128 << (den - self.log2_den));
        let b = other.num as i128 * (1i128 << (den - other.log2_den));
        let s = a + b;
        Self::new(i64::try_from(s).expect("dyadic numerator overflow"), den + 1)
    }

    fn cmp_exact(&self, other: &Self) -> Ordering {
        let den = self.log2_den.max(other.log2_den);
        let a = self.num as i128 * (1i128 << (den - self.log2_den));
        let b = other.num as i128 * (1i128 << (den - other.log2_den));
        a.cmp(&b)
    }
}

impl fmt::Display for Dyadic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.log2_den == 0 {
            write!(f, "{}", self.num)
        } else {
            write!(f, "{}/2^{}", self.num, self.log2_den)
        }
    }
}

/// A sampling time: zero, an exact power of two `2^e` with dyadic exponent, or a raw positive real.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub enum TimeKey {
    Zero,
    Exp(Dyadic),
    Raw(f64),
}

impl TimeKey {
    /// `2^(num / 2^log2_den)`
    pub fn exp(num: i64, log2_den: u32) -> Self {
        TimeKey::Exp(Dyadic::new(num, log2_den))
    }

    pub fn raw(t: f64) -> Result<Self> {
        if t > 0.0 && t.is_finite() {
            Ok(TimeKey::Raw(t))
        } else {
            Err(Error::InvalidArgument(format!("raw time must be positive and finite, got {t}")))
        }
    }

    pub fn value(&self) -> f64 {
        match self {
            TimeKey::Zero => 0.0,
            TimeKey::Exp(e) => e.to_f64().exp2(),
            TimeKey::Raw(t) => *t,
        }
    }

    /// Smallest `k` with this time in the level-`k` exponent grid; `None` for non-exponent keys.
    pub fn level(&self) -> Option<u32> {
        match self {
            TimeKey::Exp(e) => Some(e.log2_den),
            _ => None,
        }
    }

    /// Refinement point strictly between two keys: geometric mean for exponent keys,
    /// arithmetic mean otherwise.
    pub fn midpoint(&self, other: &TimeKey) -> Option<TimeKey> {
        match (self, other) {
            (TimeKey::Exp(a), TimeKey::Exp(b)) => Some(TimeKey::Exp(a.mean(*b))),
            (TimeKey::Exp(_), _) | (_, TimeKey::Exp(_)) => None,
            (a, b) => {
                let m = 0.5 * (a.value() + b.value());
                (m > a.value().min(b.value()) && m < a.value().max(b.value())).then_some(TimeKey::Raw(m))
            }
        }
    }

    fn rank(&self) -> u8 {
        match self {
            TimeKey::Zero => 0,
            TimeKey::Exp(_) => 1,
            TimeKey::Raw(_) => 2,
        }
    }

    fn noise_tag(&self) -> u64 {
        match self {
            TimeKey::Zero => 0,
            TimeKey::Exp(e) => mix64(mix64(e.num as u64) ^ u64::from(e.log2_den) ^ 0xE),
            TimeKey::Raw(t) => mix64(t.to_bits() ^ 0xA5A5_A5A5),
        }
    }

    fn same_family(&self, other: &TimeKey) -> bool {
        matches!(
            (self, other),
            (TimeKey::Zero, _) | (_, TimeKey::Zero) | (TimeKey::Exp(_), TimeKey::Exp(_)) | (TimeKey::Raw(_), TimeKey::Raw(_))
        )
    }
}

impl PartialEq for TimeKey {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for TimeKey {}

impl PartialOrd for TimeKey {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for TimeKey {
    fn cmp(&self, other: &Self) -> Ordering {
        match (self, other) {
            (TimeKey::Zero, TimeKey::Zero) => Ordering::Equal,
            (TimeKey::Zero, _) => Ordering::Less,
            (_, TimeKey::Zero) => Ordering::Greater,
            (TimeKey::Exp(a), TimeKey::Exp(b)) => a.cmp_exact(b),
            (a, b) => a
                .value()
                .total_cmp(&b.value())
                .then_with(|| a.rank().cmp(&b.rank())),
        }
    }
}

impl fmt::Display for TimeKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TimeKey::Zero => write!(f, "0"),
            TimeKey::Exp(e) => write!(f, "2^({e})"),
            TimeKey::Raw(t) => write!(f, "{t}"),
        }
    }
}

/// Coordinate subset `J(k, l)`; indices are zero-based.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CoordinateBlock {
    pub k: usize,
    pub l: usize,
    pub indices: Vec<usize>,
}

impl CoordinateBlock {
    pub fn new(k: usize, l: usize, mut indices: Vec<usize>) -> Self {
        indices.sort_unstable();
        indices.dedup();
        Self { k, l, indices }
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    /// Restriction of `v` to the block, as a dense `|J|`-vector.
    pub fn restrict<T: Real>(&self, v: &[T]) -> Vec<T> {
        self.indices.iter().map(|&i| v[i]).collect()
    }

    /// Embeds a `|J|`-vector back into `R^dim`.
    pub fn embed<T: Real>(&self, w: &[T], dim: usize) -> Vec<T> {
        let mut out = vec![T::zero(); dim];
        for (&i, &x) in self.indices.iter().zip(w) {
            out[i] = x;
        }
        out
    }
}

fn check_block(v_len: usize, block: &CoordinateBlock) -> Result<()> {
    match block.indices.iter().find(|&&i| i >= v_len) {
        Some(&index) => Err(Error::IndexOutOfRange { index, dim: v_len }),
        None => Ok(()),
    }
}

/// Orthogonal projection onto the coordinates of `block`.
pub fn project<T: Real>(v: &[T], block: &CoordinateBlock) -> Result<Vec<T>> {
    check_block(v.len(), block)?;
    let mut out = vec![T::zero(); v.len()];
    for &i in &block.indices {
        out[i] = v[i];
    }
    Ok(out)
}

/// Projection onto the coordinates outside `block`.
pub fn project_complement<T: Real>(v: &[T], block: &CoordinateBlock) -> Result<Vec<T>> {
    check_block(v.len(), block)?;
    let mut out = v.to_vec();
    for &i in &block.indices {
        out[i] = T::zero();
    }
    Ok(out)
}

/// The grid `{a_1, …, a_{N+1}} ∪ I_k^1 ∪ … ∪ I_k^N` with `a_i = 2^{i-1}` and
/// `I_k^i = {2^{j/2^k} a_i : 0 < j < 2^k}`, as sorted exact exponent keys.
pub fn block_grid(n_blocks: usize, k: u32) -> Vec<TimeKey> {
    let per = 1i64 << k;
    let mut out = Vec::with_capacity(n_blocks + 1 + n_blocks * (per as usize - 1));
    for i in 0..n_blocks as i64 {
        for j in 0..per {
            out.push(TimeKey::exp(i * per + j, k));
        }
    }
    out.push(TimeKey::exp(n_blocks as i64, 0));
    out
}

/// `P{X(s) ≥ τ for some s ∈ [0,1]} = exp(-2τ²)` for a standard Brownian bridge `X`.
pub fn bridge_exceedance_prob(tau: f64) -> Result<f64> {
    if !(tau > 0.0) {
        return Err(Error::InvalidArgument(format!("tau must be positive, got {tau}")));
    }
    Ok((-2.0 * tau * tau).exp())
}

/// Arrival times of a homogeneous Poisson process of intensity `alpha` on `(0, 1]`.
pub fn poisson_times(alpha: f64, rng: &RngStream) -> Result<Vec<TimeKey>> {
    if !(alpha > 0.0) || !alpha.is_finite() {
        return Err(Error::InvalidArgument(format!("alpha must be positive, got {alpha}")));
    }
    if alpha > 1e9 {
        return Err(Error::InvalidArgument(format!("alpha {alpha} exceeds 1e9")));
    }
    let mut g = rng.generator();
    let mut t = 0.0f64;
    let mut out = Vec::new();
    loop {
        let gap: f64 = g.sample(Exp1);
        let next = t + gap / alpha;
        if next > 1.0 {
            break;
        }
        if next > t {
            out.push(TimeKey::Raw(next));
        }
        t = next;
    }
    Ok(out)
}

const PATH_NOISE_TAG: u64 = 0x7061_7468;

/// One stored `(time, BM(time))` pair in the JSON snapshot format.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathSnapshotEntry {
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub exponent: Option<Dyadic>,
    pub time: f64,
    pub vector: Vec<f64>,
}

#[derive(Debug)]
pub struct DyadicPath<T> {
    dim: usize,
    samples: BTreeMap<TimeKey, Vec<T>>,
    rng: RngStream,
    bridge_variance_scale: f64,
    access_log: Mutex<Option<BTreeSet<TimeKey>>>,
}

impl<T: Real> Clone for DyadicPath<T> {
    fn clone(&self) -> Self {
        Self {
            dim: self.dim,
            samples: self.samples.clone(),
            rng: self.rng,
            bridge_variance_scale: self.bridge_variance_scale,
            access_log: Mutex::new(None),
        }
    }
}

impl<T: Real> DyadicPath<T> {
    /// Samples `BM_n` at `times` (strictly increasing) by independent increments.
    pub fn init(dim: usize, times: &[TimeKey], rng: RngStream) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidArgument("dimension must be at least 1".into()));
        }
        for w in times.windows(2) {
            if w[0] >= w[1] {
                return Err(if w[0] == w[1] {
                    Error::DuplicateTime(w[0].to_string())
                } else {
                    Error::UnsortedTimes
                });
            }
        }
        if let (Some(first), Some(last)) = (times.first(), times.last()) {
            if !first.same_family(last) {
                return Err(Error::MixedKeyKinds);
            }
        }
        let mut path = Self {
            dim,
            samples: BTreeMap::new(),
            rng,
            bridge_variance_scale: 1.0,
            access_log: Mutex::new(None),
        };
        path.samples.insert(TimeKey::Zero, vec![T::zero(); dim]);
        let mut prev_t = 0.0f64;
        let mut prev = vec![T::zero(); dim];
        for &key in times.iter().filter(|k| !matches!(k, TimeKey::Zero)) {
            let t = key.value();
            let sd = T::lit((t - prev_t).sqrt());
            let z = path.noise(&key);
            let v: Vec<T> = prev.iter().zip(&z).map(|(&p, &g)| p + sd * T::lit(g)).collect();
            path.samples.insert(key, v.clone());
            prev = v;
            prev_t = t;
        }
        Ok(path)
    }

    /// Path on `block_grid(n_blocks, depth)`: the block endpoints are sampled by increments,
    /// then each refinement level is filled in by bridge conditioning.
    pub fn on_block_grid(dim: usize, n_blocks: usize, depth: u32, rng: RngStream) -> Result<Self> {
        let ends: Vec<TimeKey> = (0..=n_blocks as i64).map(|i| TimeKey::exp(i, 0)).collect();
        let mut path = Self::init(dim, &ends, rng)?;
        for level in 1..=depth {
            let step = 1i64 << level;
            for i in 0..n_blocks as i64 {
                for j in (1..step).step_by(2) {
                    path.bridge_refine(TimeKey::exp(i * step + j, level))?;
                }
            }
        }
        Ok(path)
    }

    fn noise(&self, key: &TimeKey) -> Vec<f64> {
        let s = self.rng.derive_pair(PATH_NOISE_TAG, key.noise_tag());
        normal_vector(&mut s.generator(), self.dim)
    }

    /// Test hook: multiplies the bridge fluctuation variance. Any value other than 1 breaks the
    /// Brownian law and exists only so the lemma checks can be shown to catch it.
    #[doc(hidden)]
    pub fn with_bridge_variance_scale(mut self, scale: f64) -> Self {
        self.bridge_variance_scale = scale;
        self
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn stream(&self) -> RngStream {
        self.rng
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn contains(&self, key: &TimeKey) -> bool {
        self.samples.contains_key(key)
    }

    pub fn keys(&self) -> impl Iterator<Item = &TimeKey> {
        self.samples.keys()
    }

    /// Stored value at `key`. Reads are recorded when the access log is enabled.
    pub fn get(&self, key: &TimeKey) -> Result<&[T]> {
        let v = self
            .samples
            .get(key)
            .ok_or_else(|| Error::MissingGridTime(key.to_string()))?;
        if let Ok(mut log) = self.access_log.lock() {
            if let Some(set) = log.as_mut() {
                set.insert(*key);
            }
        }
        Ok(v)
    }

    pub fn inner(&self, u: &[T], key: &TimeKey) -> Result<T> {
        if u.len() != self.dim {
            return Err(Error::DimensionMismatch { expected: self.dim, found: u.len() });
        }
        Ok(dot(u, self.get(key)?))
    }

    pub fn enable_access_log(&self) {
        *self.access_log.lock().expect("access log poisoned") = Some(BTreeSet::new());
    }

    pub fn take_access_log(&self) -> BTreeSet<TimeKey> {
        self.access_log
            .lock()
            .expect("access log poisoned")
            .take()
            .unwrap_or_default()
    }

    pub fn left_neighbor(&self, s: &TimeKey) -> Option<&TimeKey> {
        self.samples.range(..*s).next_back().map(|(k, _)| k)
    }

    pub fn right_neighbor(&self, s: &TimeKey) -> Option<&TimeKey> {
        use std::ops::Bound;
        self.samples
            .range((Bound::Excluded(*s), Bound::Unbounded))
            .next()
            .map(|(k, _)| k)
    }

    /// True when both keys are stored and nothing is stored strictly between them.
    pub fn adjacent(&self, t1: &TimeKey, t2: &TimeKey) -> bool {
        t1 < t2 && self.contains(t1) && self.contains(t2) && self.right_neighbor(t1) == Some(t2)
    }

    /// Samples `BM(s)` given the stored neighbours `a < s < b`:
    /// `BM(s) = w(s) + u(s)` with `w` the linear interpolation and
    /// `u(s) ~ N(0, (b-s)(s-a)/(b-a) I)`. Stored values are never modified.
    pub fn bridge_refine(&mut self, s: TimeKey) -> Result<Vec<T>> {
        if matches!(s, TimeKey::Zero) || self.samples.contains_key(&s) {
            return Err(Error::DuplicateTime(s.to_string()));
        }
        let a = *self.left_neighbor(&s).expect("zero is always stored");
        let b = *self
            .right_neighbor(&s)
            .ok_or_else(|| Error::NoRightNeighbor(s.to_string()))?;
        if !a.same_family(&s) || !b.same_family(&s) {
            return Err(Error::MixedKeyKinds);
        }
        let (ta, ts, tb) = (a.value(), s.value(), b.value());
        let wa = T::lit((tb - ts) / (tb - ta));
        let wb = T::lit((ts - ta) / (tb - ta));
        let sd = T::lit(((tb - ts) * (ts - ta) / (tb - ta) * self.bridge_variance_scale).sqrt());
        let z = self.noise(&s);
        let va = &self.samples[&a];
        let vb = &self.samples[&b];
        let v: Vec<T> = (0..self.dim)
            .map(|i| wa * va[i] + wb * vb[i] + sd * T::lit(z[i]))
            .collect();
        self.samples.insert(s, v.clone());
        Ok(v)
    }

    pub fn snapshot(&self) -> Vec<PathSnapshotEntry> {
        self.samples
            .iter()
            .map(|(k, v)| PathSnapshotEntry {
                exponent: match k {
                    TimeKey::Exp(e) => Some(*e),
                    _ => None,
                },
                time: k.value(),
                vector: v.iter().map(|x| x.to_f64_lossy()).collect(),
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "verdict", rename_all = "snake_case")]
pub enum IntervalVerdict {
    /// `exp(-2τ*²) ≤ eps`.
    Certified { bound: f64 },
    /// Not certified at this resolution; `midpoint` splits the interval.
    Refine { midpoint: TimeKey, bound: f64 },
    /// An endpoint value is not positive.
    Failed,
}

/// Bridge bound on `⟨u, BM⟩` crossing zero between adjacent stored times `t1 < t2`.
///
/// Uses `τ* = min(⟨u,BM(t1)⟩, ⟨u,BM(t2)⟩)/√(t2 − t1)`: the bridge between the two values dips
/// below the smaller endpoint by at least `τ*√(t2−t1)` with probability at most `exp(-2τ*²)`.
pub fn certify_sign_on_interval<T: Real>(
    path: &DyadicPath<T>,
    u: &[T],
    t1: &TimeKey,
    t2: &TimeKey,
    eps: f64,
) -> Result<IntervalVerdict> {
    if !path.adjacent(t1, t2) {
        return Err(Error::NonAdjacentKeys(t1.to_string(), t2.to_string()));
    }
    let v1 = path.inner(u, t1)?.to_f64_lossy();
    let v2 = path.inner(u, t2)?.to_f64_lossy();
    if !(v1 > 0.0 && v2 > 0.0) {
        return Ok(IntervalVerdict::Failed);
    }
    let tau = v1.min(v2) / (t2.value() - t1.value()).sqrt();
    let bound = bridge_exceedance_prob(tau)?;
    if bound <= eps {
        return Ok(IntervalVerdict::Certified { bound });
    }
    match t1.midpoint(t2) {
        Some(midpoint) if midpoint != *t1 && midpoint != *t2 => Ok(IntervalVerdict::Refine { midpoint, bound }),
        _ => Ok(IntervalVerdict::Failed),
    }
}
