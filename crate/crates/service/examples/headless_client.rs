//! Start the service on a free port with the molecule fixture, then drive it
//! with a scripted WebSocket client and print the messages received.
//!
//!     cargo run -p qbd-service --example headless_client

use futures_util::{SinkExt, StreamExt};
use qbd::fixtures::{Fixture, MoleculeParams, MOLECULE_QUERY};
use qbd_service::{ProgramSource, Server, ServiceConfig};
use serde_json::{json, Value};
use tokio_tungstenite::connect_async;
use tokio_tungstenite::tungstenite::Message;

#[tokio::main]
async fn main() -> Result<(), Box<dyn std::error::Error>> {
    let fixture = Fixture::molecules(&MoleculeParams::default());
    let config = ServiceConfig {
        program: Some(ProgramSource {
            name: "molecules".into(),
            source: fixture.source,
        }),
        ..ServiceConfig::default()
    };
    let server = Server::bind("127.0.0.1:0", config).await?;
    println!("serving on {}", server.local_addr());

    let (mut ws, _) = connect_async(format!("ws://{}/ws", server.local_addr())).await?;
    let requests = [
        json!({ "op": "addQuery", "id": 1, "params": { "text": MOLECULE_QUERY } }),
        json!({ "op": "run", "id": 2 }),
    ];
    for r in &requests {
        ws.send(Message::text(r.to_string())).await?;
    }
    let mut stops = 0;
    while let Some(msg) = ws.next().await {
        let Message::Text(text) = msg? else { continue };
        let v: Value = serde_json::from_str(&text)?;
        match v["event"].as_str() {
            Some("stats") => continue,
            Some("paused") => {
                println!("<- {v}");
                stops += 1;
                let next = json!({ "op": "continue", "id": 2 + stops });
                ws.send(Message::text(next.to_string())).await?;
            }
            Some("halted") => {
                println!("<- {v}");
                break;
            }
            _ => println!("<- {v}"),
        }
    }
    server.shutdown().await?;
    Ok(())
}
