use climb_core::engine::{Engine, UserChannel, UserReply, INTERRUPTED_DIAGNOSTIC};
use climb_core::harness::dataset;
use climb_core::harness::persona::{default_persona, PersonaUser};
use climb_core::harness::scripts::climb_script;
use climb_core::session::store::{Clock, NewSession};
use climb_core::session::{EventBody, FoldError, SessionRecord, SessionStatus, SessionStore, UserRequest};

/// Answers like the default persona, then dies on the first free-form question.
struct CrashingUser(PersonaUser);

impl UserChannel for CrashingUser {
    fn reply(&mut self, request: &UserRequest, record: &SessionRecord) -> UserReply {
        if matches!(request, UserRequest::Question { .. }) {
            panic!("simulated crash");
        }
        self.0.reply(request, record)
    }
}

fn new_session(store: &SessionStore) -> String {
    let data = dataset::generate(5);
    let mut spec = NewSession::new("cohort.csv", data.train_csv.into_bytes());
    spec.seed = 5;
    spec.clock = Clock::Logical;
    spec.session_id = Some("crash".into());
    spec.problem_statement = default_persona().assumptions.join(" ");
    store.create(spec).unwrap().record().session_id().to_string()
}

#[test]
fn a_crashed_session_resumes_from_its_log() {
    let dir = tempfile::tempdir().unwrap();
    let store = SessionStore::new(dir.path()).unwrap();
    let id = new_session(&store);

    let session = store.open(&id).unwrap();
    let crashed = std::thread::spawn(move || {
        let mut engine = Engine::new(session, Box::new(climb_script()), Box::new(CrashingUser(PersonaUser::new(default_persona()))));
        engine.run()
    })
    .join();
    assert!(crashed.is_err());

    let before = store.load(&id).unwrap();
    assert_eq!(before.status(), SessionStatus::Active);
    let (pending_seq, pending) = before.pending().cloned().expect("crashed while asking");
    assert!(matches!(pending, UserRequest::Question { .. }));

    let mut engine = Engine::new(store.open(&id).unwrap(), Box::new(climb_script()), Box::new(PersonaUser::new(default_persona())));
    assert_eq!(engine.run().unwrap(), SessionStatus::Completed);
    let after = engine.into_session().record().clone();

    assert_eq!(&after.lines()[..before.lines().len()], before.lines());
    for (i, e) in after.events().iter().enumerate() {
        assert_eq!(e.seq, i as u64 + 1);
    }
    let UserRequest::Question { episode, subtask_id, .. } = pending else { unreachable!() };
    let resumed = &after.events()[before.lines().len()];
    assert!(
        matches!(&resumed.body, EventBody::EpisodeAborted { episode: e, diagnostic, .. } if *e == episode && diagnostic == INTERRUPTED_DIAGNOSTIC),
        "{resumed:?}"
    );
    assert!(after.episodes().iter().any(|t| t.episode_index > episode && t.episode_type.subtask_id == subtask_id));
    assert!(after.plan().unwrap().is_complete());
    assert!(pending_seq < resumed.seq);
}

#[test]
fn replaying_a_log_rebuilds_the_same_state() {
    let dir = tempfile::tempdir().unwrap();
    let store = SessionStore::new(dir.path()).unwrap();
    let id = new_session(&store);
    let mut engine = Engine::new(store.open(&id).unwrap(), Box::new(climb_script()), Box::new(PersonaUser::new(default_persona())));
    engine.run().unwrap();
    let live = engine.into_session().record().clone();

    let replayed = SessionRecord::from_log(&live.log_text()).unwrap();
    assert_eq!(replayed.events(), live.events());
    assert_eq!(replayed.plan(), live.plan());
    assert_eq!(replayed.ledger(), live.ledger());
    assert_eq!(replayed.episodes(), live.episodes());
    assert_eq!(replayed.context(), live.context());
    assert_eq!(replayed.events_since(5).first().map(|e| e.seq), Some(6));
    assert!(replayed.events_since(live.events().len() as u64).is_empty());
}

#[test]
fn malformed_logs_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let store = SessionStore::new(dir.path()).unwrap();
    let id = new_session(&store);
    let mut engine = Engine::new(store.open(&id).unwrap(), Box::new(climb_script()), Box::new(PersonaUser::new(default_persona())));
    engine.run().unwrap();
    let mut session = engine.into_session();
    let lines = session.record().lines().to_vec();

    let gap: Vec<&str> = lines.iter().enumerate().filter(|(i, _)| *i != 3).map(|(_, l)| l.as_str()).collect();
    assert!(matches!(SessionRecord::from_log(&gap.join("\n")), Err(FoldError::Sequence { expected: 4, found: 5 })));
    assert!(matches!(SessionRecord::from_log(&lines[1..].join("\n")), Err(_)));
    let garbage = format!("{}\nnot json", lines[..3].join("\n"));
    assert!(matches!(SessionRecord::from_log(&garbage), Err(FoldError::Parse { line: 4, .. })));

    assert!(session.append(EventBody::UserMessage { text: "late".into(), reply_to: None }).is_err());
}
