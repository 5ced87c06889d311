//! Fault structures: which sets of processors the adversary may control.
//!
//! A [`BadSetCollection`] is subset-closed, so it is stored as the antichain
//! of its maximal sets and every membership query is a subset test against
//! that antichain. Good sets are the complements of bad sets; a set
//! "contains a good set" exactly when its complement is bad.

use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

/// Upper bound on the universe size so that every set fits in a `u64`.
pub const MAX_PROCESSORS: usize = 64;

/// Threshold collections with more maximal sets than this are rejected.
const MAX_MATERIALIZED: u128 = 1 << 20;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(transparent)]
pub struct ProcessorId(pub u8);

// Accepts numeric strings too: JSON object keys arrive as strings.
impl<'de> Deserialize<'de> for ProcessorId {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        struct V;
        impl serde::de::Visitor<'_> for V {
            type Value = ProcessorId;
            fn expecting(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str("a processor index")
            }
            fn visit_u64<E: serde::de::Error>(self, v: u64) -> std::result::Result<ProcessorId, E> {
                match u8::try_from(v) {
                    Ok(i) if (i as usize) < MAX_PROCESSORS => Ok(ProcessorId(i)),
                    _ => Err(E::custom(format!("processor index {v} out of range"))),
                }
            }
            fn visit_i64<E: serde::de::Error>(self, v: i64) -> std::result::Result<ProcessorId, E> {
                let v = u64::try_from(v).map_err(|_| E::custom(format!("negative processor index {v}")))?;
                self.visit_u64(v)
            }
            fn visit_str<E: serde::de::Error>(self, v: &str) -> std::result::Result<ProcessorId, E> {
                let i: u64 = v.parse().map_err(|_| E::custom(format!("bad processor index {v:?}")))?;
                self.visit_u64(i)
            }
        }
        d.deserialize_any(V)
    }
}

impl ProcessorId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl From<usize> for ProcessorId {
    fn from(i: usize) -> Self {
        assert!(i < MAX_PROCESSORS, "processor index {i} exceeds {MAX_PROCESSORS}");
        ProcessorId(i as u8)
    }
}

impl fmt::Display for ProcessorId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "p{}", self.0)
    }
}

/// A set of processor ids packed into a bitmask.
#[derive(Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ProcSet(u64);

impl ProcSet {
    pub const EMPTY: ProcSet = ProcSet(0);

    pub fn from_bits(bits: u64) -> Self {
        ProcSet(bits)
    }

    pub fn bits(self) -> u64 {
        self.0
    }

    /// `{0, .., n-1}`.
    pub fn universe(n: usize) -> Self {
        if n >= 64 {
            ProcSet(u64::MAX)
        } else {
            ProcSet((1u64 << n) - 1)
        }
    }

    pub fn singleton(p: ProcessorId) -> Self {
        ProcSet(1 << p.0)
    }

    pub fn insert(&mut self, p: ProcessorId) -> bool {
        let had = self.contains(p);
        self.0 |= 1 << p.0;
        !had
    }

    pub fn remove(&mut self, p: ProcessorId) {
        self.0 &= !(1 << p.0);
    }

    pub fn contains(self, p: ProcessorId) -> bool {
        p.index() < 64 && self.0 & (1 << p.0) != 0
    }

    pub fn is_subset(self, other: ProcSet) -> bool {
        self.0 & !other.0 == 0
    }

    pub fn union(self, other: ProcSet) -> ProcSet {
        ProcSet(self.0 | other.0)
    }

    pub fn intersection(self, other: ProcSet) -> ProcSet {
        ProcSet(self.0 & other.0)
    }

    pub fn difference(self, other: ProcSet) -> ProcSet {
        ProcSet(self.0 & !other.0)
    }

    pub fn complement(self, n: usize) -> ProcSet {
        ProcSet::universe(n).difference(self)
    }

    pub fn len(self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn iter(self) -> impl Iterator<Item = ProcessorId> {
        let mut bits = self.0;
        std::iter::from_fn(move || {
            if bits == 0 {
                return None;
            }
            let i = bits.trailing_zeros() as u8;
            bits &= bits - 1;
            Some(ProcessorId(i))
        })
    }

    /// Largest id in the set plus one, or 0 for the empty set.
    pub fn span(self) -> usize {
        64 - self.0.leading_zeros() as usize
    }
}

impl FromIterator<ProcessorId> for ProcSet {
    fn from_iter<I: IntoIterator<Item = ProcessorId>>(iter: I) -> Self {
        let mut s = ProcSet::EMPTY;
        for p in iter {
            s.insert(p);
        }
        s
    }
}

impl<const N: usize> From<[u8; N]> for ProcSet {
    fn from(ids: [u8; N]) -> Self {
        ids.into_iter().map(ProcessorId).collect()
    }
}

impl fmt::Debug for ProcSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(self, f)
    }
}

impl fmt::Display for ProcSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("{")?;
        for (i, p) in self.iter().enumerate() {
            if i > 0 {
                f.write_str(",")?;
            }
            write!(f, "{}", p.0)?;
        }
        f.write_str("}")
    }
}

// Sets travel as sorted id lists in traces and scenario files.
impl Serialize for ProcSet {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_seq(self.iter())
    }
}

impl<'de> Deserialize<'de> for ProcSet {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let ids = Vec::<u8>::deserialize(d)?;
        if let Some(bad) = ids.iter().find(|&&i| i as usize >= MAX_PROCESSORS) {
            return Err(serde::de::Error::custom(format!("processor id {bad} out of range")));
        }
        Ok(ids.into_iter().map(ProcessorId).collect())
    }
}

/// A subset-closed family of processor sets, one of which the adversary
/// may control, stored by its maximal elements.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BadSetCollection {
    n: usize,
    maximal: Vec<ProcSet>,
    threshold: Option<usize>,
}

impl BadSetCollection {
    /// Every set of at most `t` processors is bad.
    pub fn threshold(n: usize, t: usize) -> Result<Self> {
        check_universe(n)?;
        if t >= n {
            return Err(Error::Threshold { n, t });
        }
        if binomial(n, t) > MAX_MATERIALIZED {
            return Err(Error::CollectionTooLarge { n, t });
        }
        let mut maximal = Vec::new();
        k_subsets(n, t, &mut |s| maximal.push(s));
        maximal.sort();
        Ok(BadSetCollection { n, maximal, threshold: Some(t) })
    }

    /// Builds a collection from explicit bad sets. Non-maximal entries are
    /// absorbed by their supersets; an empty list yields `{∅}`.
    pub fn from_sets(n: usize, sets: impl IntoIterator<Item = ProcSet>) -> Result<Self> {
        check_universe(n)?;
        let universe = ProcSet::universe(n);
        let mut sets: Vec<ProcSet> = sets.into_iter().collect();
        for s in &sets {
            if !s.is_subset(universe) {
                let stray = s.difference(universe).iter().next().unwrap();
                return Err(Error::UnknownProcessor(stray, n));
            }
            if *s == universe {
                return Err(Error::BadSetIsUniverse(s.to_string()));
            }
        }
        sets.sort();
        sets.dedup();
        let maximal: Vec<ProcSet> =
            sets.iter().copied().filter(|s| !sets.iter().any(|o| o != s && s.is_subset(*o))).collect();
        let maximal = if maximal.is_empty() { vec![ProcSet::EMPTY] } else { maximal };
        let threshold = detect_threshold(n, &maximal);
        Ok(BadSetCollection { n, maximal, threshold })
    }

    pub fn universe_size(&self) -> usize {
        self.n
    }

    pub fn universe(&self) -> ProcSet {
        ProcSet::universe(self.n)
    }

    pub fn maximal_sets(&self) -> &[ProcSet] {
        &self.maximal
    }

    /// `Some(t)` when the collection is exactly the threshold collection.
    pub fn threshold_t(&self) -> Option<usize> {
        self.threshold
    }

    /// Size of the largest bad set.
    pub fn max_bad_size(&self) -> usize {
        self.maximal.iter().map(|s| s.len()).max().unwrap_or(0)
    }

    pub fn check_member(&self, p: ProcessorId) -> Result<()> {
        if p.index() < self.n {
            Ok(())
        } else {
            Err(Error::UnknownProcessor(p, self.n))
        }
    }

    pub fn is_bad(&self, s: ProcSet) -> bool {
        match self.threshold {
            Some(t) => s.is_subset(self.universe()) && s.len() <= t,
            None => self.maximal.iter().any(|m| s.is_subset(*m)),
        }
    }

    /// True iff `s` is a superset of some good set, i.e. `Π ∖ s` is bad.
    pub fn contains_good_set(&self, s: ProcSet) -> bool {
        self.is_bad(s.complement(self.n))
    }

    /// True iff `s` is not contained in any bad set, so it holds at least
    /// one processor outside whichever bad set the adversary picked.
    pub fn exceeds_every_bad_set(&self, s: ProcSet) -> bool {
        !self.is_bad(s)
    }

    /// No two bad sets cover the universe.
    pub fn satisfies_benign_predicate(&self) -> bool {
        let u = self.universe();
        let m = &self.maximal;
        for i in 0..m.len() {
            for j in i..m.len() {
                if m[i].union(m[j]) == u {
                    return false;
                }
            }
        }
        true
    }

    /// No three bad sets cover the universe.
    pub fn satisfies_byzantine_predicate(&self) -> bool {
        let u = self.universe();
        let m = &self.maximal;
        for i in 0..m.len() {
            for j in i..m.len() {
                let ij = m[i].union(m[j]);
                if ij == u {
                    return false;
                }
                if m[j..].iter().any(|k| ij.union(*k) == u) {
                    return false;
                }
            }
        }
        true
    }

    /// Minimal good sets: complements of the maximal bad sets.
    pub fn minimal_good_sets(&self) -> impl Iterator<Item = ProcSet> + '_ {
        self.maximal.iter().map(move |b| b.complement(self.n))
    }
}

impl fmt::Display for BadSetCollection {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if let Some(t) = self.threshold {
            return write!(f, "threshold(n={}, t={})", self.n, t);
        }
        write!(f, "n={} maximal=[", self.n)?;
        for (i, s) in self.maximal.iter().enumerate() {
            if i > 0 {
                f.write_str(" ")?;
            }
            write!(f, "{s}")?;
        }
        f.write_str("]")
    }
}

fn check_universe(n: usize) -> Result<()> {
    if n == 0 || n > MAX_PROCESSORS {
        return Err(Error::UniverseSize(n));
    }
    Ok(())
}

fn binomial(n: usize, k: usize) -> u128 {
    let k = k.min(n - k);
    (0..k).fold(1u128, |acc, i| acc * (n - i) as u128 / (i + 1) as u128)
}

/// Calls `f` on every `k`-subset of `{0..n}` in colex order.
fn k_subsets(n: usize, k: usize, f: &mut impl FnMut(ProcSet)) {
    if k == 0 {
        f(ProcSet::EMPTY);
        return;
    }
    // Gosper's hack over n-bit words.
    let mut x: u64 = (1u64 << k) - 1;
    let limit = if n == 64 { u64::MAX } else { 1u64 << n };
    while x < limit || (n == 64 && x != 0) {
        f(ProcSet(x));
        let c = x & x.wrapping_neg();
        let r = x.wrapping_add(c);
        if r == 0 {
            break;
        }
        x = (((r ^ x) >> 2) / c) | r;
        if n < 64 && x >= limit {
            break;
        }
    }
}

fn detect_threshold(n: usize, maximal: &[ProcSet]) -> Option<usize> {
    let t = maximal[0].len();
    if t >= n || maximal.iter().any(|s| s.len() != t) {
        return None;
    }
    (binomial(n, t) == maximal.len() as u128).then_some(t)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn set(ids: &[u8]) -> ProcSet {
        ids.iter().map(|&i| ProcessorId(i)).collect()
    }

    fn explicit(n: usize, sets: &[&[u8]]) -> BadSetCollection {
        BadSetCollection::from_sets(n, sets.iter().map(|s| set(s))).unwrap()
    }

    #[test]
    fn threshold_four_one_is_the_singletons() {
        let c = BadSetCollection::threshold(4, 1).unwrap();
        let mut want: Vec<ProcSet> = (0..4).map(|i| set(&[i])).collect();
        want.sort();
        assert_eq!(c.maximal_sets(), &want[..]);
    }

    #[test]
    fn threshold_seven_two_has_21_pairs() {
        let c = BadSetCollection::threshold(7, 2).unwrap();
        assert_eq!(c.maximal_sets().len(), 21);
        assert!(c.maximal_sets().iter().all(|s| s.len() == 2));
    }

    #[test]
    fn threshold_zero_is_empty_set_only() {
        let c = BadSetCollection::threshold(3, 0).unwrap();
        assert_eq!(c.maximal_sets(), &[ProcSet::EMPTY]);
        assert_eq!(c.threshold_t(), Some(0));
    }

    #[test]
    fn threshold_rejects_t_at_least_n() {
        assert_eq!(BadSetCollection::threshold(3, 3), Err(Error::Threshold { n: 3, t: 3 }));
        assert!(BadSetCollection::threshold(64, 32).is_err());
    }

    #[test]
    fn benign_predicate_examples() {
        assert!(BadSetCollection::threshold(3, 1).unwrap().satisfies_benign_predicate());
        assert!(!BadSetCollection::threshold(2, 1).unwrap().satisfies_benign_predicate());
        assert!(explicit(6, &[&[0, 1, 2], &[3, 4]]).satisfies_benign_predicate());
    }

    #[test]
    fn byzantine_predicate_examples() {
        assert!(BadSetCollection::threshold(4, 1).unwrap().satisfies_byzantine_predicate());
        assert!(!BadSetCollection::threshold(3, 1).unwrap().satisfies_byzantine_predicate());
        assert!(explicit(6, &[&[0, 1], &[2, 3], &[4]]).satisfies_byzantine_predicate());
    }

    #[test]
    fn good_set_queries() {
        let c = BadSetCollection::threshold(4, 1).unwrap();
        assert!(c.contains_good_set(set(&[0, 1, 2])));
        assert!(!c.contains_good_set(set(&[0, 1])));
        let c = explicit(6, &[&[0, 1], &[2, 3], &[4]]);
        assert!(!c.contains_good_set(set(&[2, 4, 5])));
        assert!(c.contains_good_set(set(&[2, 3, 4, 5])));
    }

    #[test]
    fn exceeds_queries() {
        assert!(BadSetCollection::threshold(4, 1).unwrap().exceeds_every_bad_set(set(&[0, 1])));
        assert!(!BadSetCollection::threshold(7, 2).unwrap().exceeds_every_bad_set(set(&[0, 1])));
        assert!(explicit(6, &[&[0, 1], &[2, 3], &[4]]).exceeds_every_bad_set(set(&[4, 5])));
    }

    #[test]
    fn from_sets_keeps_only_maximal() {
        let c = explicit(5, &[&[0], &[0, 1], &[2], &[0, 1]]);
        assert_eq!(c.maximal_sets(), &[set(&[0, 1]), set(&[2])]);
        assert!(c.is_bad(ProcSet::EMPTY));
        assert!(c.is_bad(set(&[1])));
        assert!(!c.is_bad(set(&[1, 2])));
    }

    #[test]
    fn from_sets_detects_threshold_shape() {
        let c = explicit(3, &[&[0], &[1], &[2]]);
        assert_eq!(c.threshold_t(), Some(1));
        assert_eq!(explicit(3, &[&[0], &[1]]).threshold_t(), None);
    }

    #[test]
    fn from_sets_rejects_universe_and_strays() {
        assert!(matches!(BadSetCollection::from_sets(3, [set(&[0, 1, 2])]), Err(Error::BadSetIsUniverse(_))));
        assert!(matches!(BadSetCollection::from_sets(3, [set(&[5])]), Err(Error::UnknownProcessor(ProcessorId(5), 3))));
        assert!(BadSetCollection::from_sets(0, []).is_err());
    }

    #[test]
    fn procset_iteration_and_display() {
        let s = set(&[5, 0, 63]);
        assert_eq!(s.iter().collect::<Vec<_>>(), vec![ProcessorId(0), ProcessorId(5), ProcessorId(63)]);
        assert_eq!(s.to_string(), "{0,5,63}");
        assert_eq!(s.span(), 64);
        assert_eq!(ProcSet::universe(64).len(), 64);
        let json = serde_json::to_string(&s).unwrap();
        assert_eq!(json, "[0,5,63]");
        assert_eq!(serde_json::from_str::<ProcSet>(&json).unwrap(), s);
    }

    #[test]
    fn k_subsets_counts() {
        for n in 1..=8 {
            for k in 0..=n {
                let mut count = 0u128;
                k_subsets(n, k, &mut |s| {
                    assert_eq!(s.len(), k);
                    assert!(s.is_subset(ProcSet::universe(n)));
                    count += 1;
                });
                assert_eq!(count, binomial(n, k), "n={n} k={k}");
            }
        }
    }
}
