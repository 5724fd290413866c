mod common;

use std::net::{IpAddr, Ipv4Addr};
use std::time::Duration;

use common::*;
use powerbench_core::protocol::Message;
use powerbench_net::codec::{read_frame, write_frame};
use powerbench_net::unix_now;
use tokio::net::TcpStream;

fn register(c: &powerbench_net::coordinator::CoordinatorHandle, ip: Ipv4Addr) {
    let mut m = vp_manifest("127.0.0.1:1");
    m.allowlisted_ips = vec![ip.to_string()];
    c.with_state(|s| {
        s.register_vantage_point(m, "tok-admin", IpAddr::V4(ip), |_| true, unix_now())
            .unwrap()
    });
}

async fn hello(c: &powerbench_net::coordinator::CoordinatorHandle, token: &str) -> Option<Message> {
    let stream = TcpStream::connect(c.agent_addr()).await.unwrap();
    let (mut rd, mut wr) = stream.into_split();
    let msg = Message::Hello {
        vp_id: "node1".into(),
        token: token.into(),
    };
    // The coordinator may already have hung up; that shows up on the read.
    let _ = write_frame(&mut wr, &msg).await;
    tokio::time::timeout(Duration::from_secs(5), read_frame(&mut rd))
        .await
        .expect("coordinator neither answered nor closed")
        .unwrap_or(None)
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn unlisted_address_is_dropped_before_hello() {
    let c = start_coordinator(None).await;
    register(&c, Ipv4Addr::new(10, 0, 0, 1));
    assert_eq!(hello(&c, AGENT_TOKEN).await, None);
    c.shutdown().await;
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn hello_is_echoed_only_for_the_right_token() {
    let c = start_coordinator(None).await;
    register(&c, Ipv4Addr::LOCALHOST);
    assert_eq!(hello(&c, "wrong").await, None);
    match hello(&c, AGENT_TOKEN).await {
        Some(Message::Hello { vp_id, token }) => {
            assert_eq!(vp_id, "node1");
            assert!(token.is_empty());
        }
        other => panic!("expected HELLO echo, got {other:?}"),
    }
    c.shutdown().await;
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn control_port_greets_with_hello() {
    let a = start_agent(agent_config(None), false).await;
    let mut s = TcpStream::connect(a.control_addr()).await.unwrap();
    match read_frame(&mut s).await.unwrap() {
        Some(Message::Hello { vp_id, token }) => {
            assert_eq!(vp_id, "node1");
            assert!(token.is_empty());
        }
        other => panic!("expected HELLO, got {other:?}"),
    }
    a.shutdown().await;
}

#[tokio::test]
async fn frames_survive_a_duplex_pipe() {
    let (mut a, mut b) = tokio::io::duplex(64);
    let msgs = vec![
        Message::Hello {
            vp_id: "node1".into(),
            token: "t".into(),
        },
        Message::Heartbeat {
            vp_id: "node1".into(),
            health: None,
        },
    ];
    let sent = msgs.clone();
    let writer = tokio::spawn(async move {
        for m in &sent {
            write_frame(&mut a, m).await.unwrap();
        }
    });
    for m in &msgs {
        assert_eq!(read_frame(&mut b).await.unwrap().as_ref(), Some(m));
    }
    writer.await.unwrap();
    assert_eq!(read_frame(&mut b).await.unwrap(), None);
}
