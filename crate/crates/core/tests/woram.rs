use pdsim_core::device::wonly;
use pdsim_core::woram::{AdapterParams, Def2Options, WoramError};
use pdsim_core::{check_def2, oram_setup, DataRequest, SchemeConfig, SchemeId, SecurityParam, SeededRng};
use proptest::prelude::*;

fn adapter(backend: SchemeId, n: usize, seed: u64) -> pdsim_core::WoramAdapter {
    oram_setup(backend, &SchemeConfig::default(), AdapterParams { n }, SecurityParam::default(), &mut SeededRng::new(seed))
        .unwrap()
}

#[test]
fn reads_return_the_last_write() {
    for backend in [SchemeId::Hive, SchemeId::PdDm] {
        let mut a = adapter(backend, 1, 40);
        let len = a.block_len();
        assert_eq!(a.access(&DataRequest::Read { addr: 3 }).unwrap().data, None);
        for round in 0..3u8 {
            a.access(&DataRequest::Write { addr: 3, data: vec![round; len] }).unwrap();
            a.access(&DataRequest::Write { addr: 4, data: vec![round + 100; len] }).unwrap();
        }
        assert_eq!(a.access(&DataRequest::Read { addr: 3 }).unwrap().data, Some(vec![2; len]));
        assert_eq!(a.access(&DataRequest::Read { addr: 4 }).unwrap().data, Some(vec![102; len]));
    }
}

#[test]
fn batched_hidden_patterns_keep_the_contract() {
    for backend in [SchemeId::Hive, SchemeId::PdDm] {
        let mut a = adapter(backend, 3, 41);
        let len = a.block_len();
        let w = a.access(&DataRequest::Write { addr: 0, data: vec![9; len] }).unwrap();
        let r = a.access(&DataRequest::Read { addr: 0 }).unwrap();
        assert!(!wonly(&w.trace).is_empty());
        assert!(wonly(&r.trace).is_empty());
        assert_eq!(r.data, Some(vec![9; len]));
    }
}

#[test]
fn def2_rejects_unequal_write_counts() {
    let w = DataRequest::Write { addr: 0, data: vec![0; 16] };
    let err = check_def2(SchemeId::Hive, &SchemeConfig::default(), &[w.clone(), w], &[], &Def2Options::default());
    assert!(matches!(err, Err(WoramError::Precondition(_))));
}

#[test]
fn write_free_read_path_is_required() {
    let err = oram_setup(
        SchemeId::HiveB,
        &SchemeConfig::default(),
        AdapterParams::default(),
        SecurityParam::default(),
        &mut SeededRng::new(0),
    );
    assert!(matches!(err, Err(WoramError::Config(_))));
}

fn sequence(writes: &[(u64, u8)], reads: &[u64], len: usize, cap: u64) -> Vec<DataRequest> {
    let mut seq: Vec<DataRequest> =
        writes.iter().map(|&(a, b)| DataRequest::Write { addr: a % cap, data: vec![b; len] }).collect();
    seq.extend(reads.iter().map(|&a| DataRequest::Read { addr: a % cap }));
    seq
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    /// Every write costs the same write-only trace length, whatever it
    /// writes, and reads cost nothing.
    #[test]
    fn write_cost_is_constant(
        backend in prop_oneof![Just(SchemeId::Hive), Just(SchemeId::PdDm)],
        writes in prop::collection::vec((any::<u64>(), any::<u8>()), 1..12),
        reads in prop::collection::vec(any::<u64>(), 0..6),
    ) {
        let mut a = adapter(backend, 1, 42);
        let (len, cap) = (a.block_len(), a.capacity());
        let mut lengths = Vec::new();
        for r in sequence(&writes, &reads, len, cap) {
            let w = wonly(&a.access(&r).unwrap().trace);
            if r.is_write() {
                lengths.push(w.len());
            } else {
                prop_assert!(w.is_empty());
            }
        }
        prop_assert!(lengths.windows(2).all(|p| p[0] == p[1]), "{:?}", lengths);
    }

    #[test]
    fn equal_write_counts_give_equal_trace_lengths(
        backend in prop_oneof![Just(SchemeId::Hive), Just(SchemeId::PdDm)],
        w0 in prop::collection::vec((any::<u64>(), any::<u8>()), 1..10),
        seed in any::<u64>(),
    ) {
        let w1: Vec<(u64, u8)> = w0.iter().map(|&(a, b)| (a.wrapping_mul(7).wrapping_add(1), b ^ 0x5a)).collect();
        let probe = adapter(backend, 1, 0);
        let (len, cap) = (probe.block_len(), probe.capacity());
        let y0 = sequence(&w0, &[1, 2], len, cap);
        let y1 = sequence(&w1, &[], len, cap);
        let rep = check_def2(backend, &SchemeConfig::default(), &y0, &y1, &Def2Options { seed, ..Def2Options::default() }).unwrap();
        prop_assert_eq!(rep.wonly_len[0], rep.wonly_len[1]);
        prop_assert!(rep.reads_write_nothing);
        prop_assert!(rep.pass, "{:?}", rep);
    }
}
