//! Logical requests, ordered patterns of them, and the challenge triple an
//! adversary submits each round.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Level {
    Pub,
    Hid,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReqOp {
    Read,
    Write,
    /// Discards a logical block. Only meaningful at the FTL/FS layers.
    Delete,
    Unmount,
    /// No-op placeholder; never causes physical writes.
    Dummy,
}

/// One logical access. Use the constructors; they keep the field
/// combinations legal (writes carry data, `Unmount` is always public).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Request {
    op: ReqOp,
    addr: u64,
    data: Option<Vec<u8>>,
    level: Level,
}

impl Request {
    pub fn read(level: Level, addr: u64) -> Self {
        Request { op: ReqOp::Read, addr, data: None, level }
    }

    pub fn write(level: Level, addr: u64, data: Vec<u8>) -> Self {
        Request { op: ReqOp::Write, addr, data: Some(data), level }
    }

    pub fn delete(level: Level, addr: u64) -> Self {
        Request { op: ReqOp::Delete, addr, data: None, level }
    }

    pub fn unmount() -> Self {
        Request { op: ReqOp::Unmount, addr: 0, data: None, level: Level::Pub }
    }

    pub fn dummy(level: Level) -> Self {
        Request { op: ReqOp::Dummy, addr: 0, data: None, level }
    }

    pub fn op(&self) -> ReqOp {
        self.op
    }

    pub fn addr(&self) -> u64 {
        self.addr
    }

    pub fn data(&self) -> Option<&[u8]> {
        self.data.as_deref()
    }

    pub fn level(&self) -> Level {
        self.level
    }

    pub fn is_write(&self) -> bool {
        self.op == ReqOp::Write
    }
}

/// Ordered sequence of requests.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Pattern(Vec<Request>);

impl Pattern {
    pub fn new() -> Self {
        Pattern(Vec::new())
    }

    pub fn push(&mut self, r: Request) {
        self.0.push(r);
    }

    pub fn requests(&self) -> &[Request] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Request> {
        self.0.iter()
    }

    /// Order-preserving concatenation `self ∪ other`.
    pub fn concat(&self, other: &Pattern) -> Pattern {
        let mut v = self.0.clone();
        v.extend(other.0.iter().cloned());
        Pattern(v)
    }

    pub fn count_writes(&self) -> usize {
        self.0.iter().filter(|r| r.is_write()).count()
    }

    pub fn all_at(&self, level: Level) -> bool {
        self.0.iter().all(|r| r.level == level)
    }

    pub fn last(&self) -> Option<&Request> {
        self.0.last()
    }
}

impl FromIterator<Request> for Pattern {
    fn from_iter<T: IntoIterator<Item = Request>>(iter: T) -> Self {
        Pattern(iter.into_iter().collect())
    }
}

impl<'a> IntoIterator for &'a Pattern {
    type Item = &'a Request;
    type IntoIter = std::slice::Iter<'a, Request>;
    fn into_iter(self) -> Self::IntoIter {
        self.0.iter()
    }
}

/// `(Pat¹_pub, Pat²_pub, Pat_hid)`: the game executes either
/// `pub1 ∪ pub2` (b = 0) or `pub1 ∪ hid` (b = 1).
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChallengePair {
    pub pub1: Pattern,
    pub pub2: Pattern,
    pub hid: Pattern,
}

impl ChallengePair {
    pub fn new(pub1: Pattern, pub2: Pattern, hid: Pattern) -> Self {
        ChallengePair { pub1, pub2, hid }
    }

    pub fn pat0(&self) -> Pattern {
        self.pub1.concat(&self.pub2)
    }

    pub fn pat1(&self) -> Pattern {
        self.pub1.concat(&self.hid)
    }

    pub fn pattern_for(&self, b: bool) -> Pattern {
        if b {
            self.pat1()
        } else {
            self.pat0()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn arb_request() -> impl Strategy<Value = Request> {
        (0u8..4, any::<bool>(), 0u64..16).prop_map(|(op, hid, addr)| {
            let level = if hid { Level::Hid } else { Level::Pub };
            match op {
                0 => Request::read(level, addr),
                1 => Request::write(level, addr, vec![addr as u8]),
                2 => Request::dummy(level),
                _ => Request::unmount(),
            }
        })
    }

    fn arb_pattern() -> impl Strategy<Value = Pattern> {
        proptest::collection::vec(arb_request(), 0..10).prop_map(Pattern)
    }

    proptest! {
        #[test]
        fn concat_associative_and_additive(a in arb_pattern(), b in arb_pattern(), c in arb_pattern()) {
            prop_assert_eq!(a.concat(&b).concat(&c), a.concat(&b.concat(&c)));
            prop_assert_eq!(a.concat(&b).len(), a.len() + b.len());
            let ab = a.concat(&b);
            prop_assert_eq!(&ab.requests()[..a.len()], a.requests());
        }
    }

    #[test]
    fn unmount_is_public() {
        assert_eq!(Request::unmount().level(), Level::Pub);
        assert!(Request::read(Level::Hid, 3).data().is_none());
        assert_eq!(Request::write(Level::Pub, 1, vec![9]).data(), Some(&[9u8][..]));
    }

    #[test]
    fn pair_construction() {
        let p1: Pattern = [Request::write(Level::Pub, 0, vec![1])].into_iter().collect();
        let p2: Pattern = [Request::write(Level::Pub, 1, vec![2])].into_iter().collect();
        let h: Pattern = [Request::write(Level::Hid, 0, vec![3])].into_iter().collect();
        let pair = ChallengePair::new(p1.clone(), p2.clone(), h.clone());
        assert_eq!(pair.pat0(), p1.concat(&p2));
        assert_eq!(pair.pat1(), p1.concat(&h));
        assert_eq!(&pair.pattern_for(true).requests()[..1], p1.requests());
    }
}
