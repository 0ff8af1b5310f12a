//! A scripted client replays a fixed request sequence; the full transcript
//! must match `tests/golden/molecules.jsonl`. Run with `QBD_BLESS=1` to
//! rewrite it after an intentional protocol change.

mod common;

use std::path::PathBuf;

use qbd::fixtures::{Fixture, MoleculeParams, MOLECULE_QUERY};
use serde_json::{json, Value};

use common::{serve, Client, Replay};

async fn script(c: &mut Client) -> Replay {
    let mut replay = Replay::default();
    c.ok("attach", json!({})).await;
    let added = c.ok("addQuery", json!({ "text": MOLECULE_QUERY })).await;
    replay.seed(&added);
    c.ok("addBreakpoint", json!({ "site": "Main.main:0" }))
        .await;
    c.ok("run", json!({})).await;
    c.wait_stop().await;
    c.ok("clearBreakpoint", json!({ "site": "Main.main:0" }))
        .await;
    c.ok("step", json!({ "n": 3 })).await;
    c.take_events();
    c.ok("continue", json!({})).await;
    c.wait_stop().await;
    c.ok("getResults", json!({ "queryId": 1 })).await;
    c.ok("listQueries", json!({})).await;
    c.ok("continue", json!({})).await;
    c.wait_stop().await;
    c.ok("removeQuery", json!({ "queryId": 1 })).await;
    c.ok("continue", json!({})).await;
    c.wait_stop().await;
    c.ok("getStats", json!({})).await;
    for m in &c.transcript {
        replay.apply(m);
    }
    replay
}

#[tokio::test]
async fn molecule_session_transcript() {
    let f = Fixture::molecules(&MoleculeParams::default());
    let server = serve("molecules", &f.source).await;
    let mut c = Client::connect(&server).await;
    let replay = script(&mut c).await;
    // Collision seen then cleared.
    assert!(replay.tables[&1].is_empty());

    // The transcript must be stable across runs, not only against the file.
    let mut again = Client::connect(&serve("molecules", &f.source).await).await;
    script(&mut again).await;
    assert_eq!(c.transcript, again.transcript);

    let text: String = c.transcript.iter().map(|m| format!("{m}\n")).collect();
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/golden/molecules.jsonl");
    if std::env::var_os("QBD_BLESS").is_some() {
        std::fs::create_dir_all(path.parent().unwrap()).unwrap();
        std::fs::write(&path, &text).unwrap();
    } else {
        let expected = std::fs::read_to_string(&path).expect("golden file; run with QBD_BLESS=1");
        let want: Vec<Value> = expected
            .lines()
            .map(|l| serde_json::from_str(l).unwrap())
            .collect();
        assert_eq!(want.len(), c.transcript.len());
        for (i, (w, got)) in want.iter().zip(&c.transcript).enumerate() {
            assert_eq!(w, got, "message {i}");
        }
    }
    server.shutdown().await.unwrap();
}
