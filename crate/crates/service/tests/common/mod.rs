#![allow(dead_code)]

use std::collections::VecDeque;
use std::time::Duration;

use futures_util::{SinkExt, StreamExt};
use qbd_service::{ProgramSource, Server, ServiceConfig};
use serde_json::{json, Value};
use tokio::net::TcpStream;
use tokio_tungstenite::tungstenite::Message;
use tokio_tungstenite::{connect_async, MaybeTlsStream, WebSocketStream};

const TIMEOUT: Duration = Duration::from_secs(60);

pub async fn serve(name: &str, source: &str) -> Server {
    let config = ServiceConfig {
        program: Some(ProgramSource {
            name: name.into(),
            source: source.into(),
        }),
        ..ServiceConfig::default()
    };
    Server::bind("127.0.0.1:0", config).await.unwrap()
}

/// Scripted protocol client. Every message received is kept in
/// `transcript`; events not yet waited for queue up in `events`.
pub struct Client {
    ws: WebSocketStream<MaybeTlsStream<TcpStream>>,
    next_id: u64,
    pub transcript: Vec<Value>,
    events: VecDeque<Value>,
}

impl Client {
    pub async fn connect(server: &Server) -> Client {
        let url = format!("ws://{}/ws", server.local_addr());
        let (ws, _) = connect_async(url).await.unwrap();
        Client {
            ws,
            next_id: 1,
            transcript: Vec::new(),
            events: VecDeque::new(),
        }
    }

    pub async fn send_raw(&mut self, text: &str) {
        self.ws.send(Message::text(text)).await.unwrap();
    }

    pub async fn recv(&mut self) -> Value {
        loop {
            let msg = tokio::time::timeout(TIMEOUT, self.ws.next())
                .await
                .expect("timed out waiting for the server")
                .expect("connection closed")
                .unwrap();
            if let Message::Text(t) = msg {
                let v: Value = serde_json::from_str(&t).unwrap();
                self.transcript.push(v.clone());
                return v;
            }
        }
    }

    /// Send a request and return its response, queueing events seen first.
    pub async fn request(&mut self, op: &str, params: Value) -> Value {
        let id = self.next_id;
        self.next_id += 1;
        let msg = json!({ "op": op, "id": id, "params": params });
        self.send_raw(&msg.to_string()).await;
        loop {
            let v = self.recv().await;
            if v.get("id") == Some(&json!(id)) {
                return v;
            }
            assert!(v.get("event").is_some(), "unexpected message {v}");
            self.events.push_back(v);
        }
    }

    /// Like `request`, but panics unless the response is ok; returns the payload.
    pub async fn ok(&mut self, op: &str, params: Value) -> Value {
        let r = self.request(op, params).await;
        assert_eq!(r["ok"], json!(true), "{op} failed: {r}");
        r["payload"].clone()
    }

    /// Next event named `name`, skipping (but keeping) others.
    pub async fn wait_event(&mut self, name: &str) -> Value {
        loop {
            let v = match self.events.pop_front() {
                Some(v) => v,
                None => self.recv().await,
            };
            if v["event"] == name {
                return v["payload"].clone();
            }
        }
    }

    /// Wait for a `paused` or `halted` event.
    pub async fn wait_stop(&mut self) -> Value {
        loop {
            let v = match self.events.pop_front() {
                Some(v) => v,
                None => self.recv().await,
            };
            if v["event"] == "paused" || v["event"] == "halted" {
                return v;
            }
        }
    }

    pub fn take_events(&mut self) -> Vec<Value> {
        self.events.drain(..).collect()
    }
}

/// Result tables rebuilt from `addQuery` initial sets plus `queryDelta` events.
#[derive(Default)]
pub struct Replay {
    pub tables: std::collections::BTreeMap<u64, std::collections::BTreeSet<Vec<String>>>,
}

impl Replay {
    pub fn seed(&mut self, add_query_payload: &Value) {
        let q = add_query_payload["queryId"].as_u64().unwrap();
        self.tables.insert(q, tuples(&add_query_payload["initial"]));
    }

    pub fn apply(&mut self, msg: &Value) {
        if msg["event"] != "queryDelta" {
            return;
        }
        let p = &msg["payload"];
        let table = self
            .tables
            .get_mut(&p["queryId"].as_u64().unwrap())
            .expect("delta for a known query");
        for t in tuples(&p["removed"]) {
            assert!(table.remove(&t), "removed tuple {t:?} was not present");
        }
        for t in tuples(&p["added"]) {
            assert!(table.insert(t), "added tuple already present");
        }
    }
}

pub fn tuples(v: &Value) -> std::collections::BTreeSet<Vec<String>> {
    v.as_array()
        .unwrap()
        .iter()
        .map(|t| {
            t.as_array()
                .unwrap()
                .iter()
                .map(|o| o.as_str().unwrap().to_string())
                .collect()
        })
        .collect()
}
