mod common;

use climb_core::session::SessionStore;
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig { cases: 256, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn randomized_sessions_keep_every_invariant(seed in any::<u64>()) {
        let dir = tempfile::tempdir().unwrap();
        let store = SessionStore::new(dir.path()).unwrap();
        let s = common::random_session(&store, seed);
        let v = common::violations(&s.record, &s.config);
        prop_assert!(v.is_empty(), "seed {seed}: {v:#?}");
    }
}
