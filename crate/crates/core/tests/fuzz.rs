mod common;

use std::io::{BufRead, BufReader, Write};
use std::net::TcpStream;
use std::thread;
use std::time::Duration;

use mtpenergy::sim::{handle_frame, ServeOptions, Server, Session};
use mtpenergy::tagbus::{decode_message, encode_message, TagMessage};

#[test]
fn every_bad_frame_is_answered_or_counted() {
    let mut sim = common::simulator(common::profile("distillation_profile.json"));
    let frames = common::fuzz_frames(11, 12_000);
    let mut session = Session::new();
    let mut errors = 0;
    for frame in &frames {
        let before = session.strikes();
        let (responses, close) = handle_frame(&mut sim, &mut session, frame);
        let answered = responses
            .iter()
            .any(|m| matches!(m, TagMessage::Error { .. }));
        assert!(
            answered || session.strikes() > before,
            "{}",
            String::from_utf8_lossy(frame)
        );
        errors += usize::from(answered);
        if close {
            session = Session::new();
        }
        sim.step();
    }
    assert_eq!(errors, frames.len());
}

#[test]
fn greeted_sessions_reject_garbage_too() {
    let mut sim = common::simulator(common::profile("distillation_profile.json"));
    let hello = encode_message(&TagMessage::Hello {
        client: "t".into(),
        proto: 1,
    });
    let mut session = Session::new();
    handle_frame(&mut sim, &mut session, hello.as_bytes());
    for frame in common::fuzz_frames(12, 2_000) {
        let before = session.strikes();
        let (responses, close) = handle_frame(&mut sim, &mut session, &frame);
        assert!(
            responses
                .iter()
                .any(|m| matches!(m, TagMessage::Error { .. }))
                || session.strikes() > before,
            "{}",
            String::from_utf8_lossy(&frame)
        );
        if close {
            session = Session::new();
            handle_frame(&mut sim, &mut session, hello.as_bytes());
        }
    }
}

#[test]
fn live_server_survives_fuzzing() {
    let server = Server::bind(
        common::simulator(common::profile("distillation_profile.json")),
        ServeOptions {
            bind: "127.0.0.1:0".into(),
            accelerate: 1.0,
            ticks: None,
            start_on_subscribe: false,
        },
    )
    .unwrap();
    let addr = server.local_addr().unwrap();
    thread::spawn(move || server.run());

    let frames = common::fuzz_frames(13, 1_500);
    let mut answered = 0;
    for chunk in frames.chunks(3) {
        let mut stream = TcpStream::connect(addr).unwrap();
        stream
            .set_read_timeout(Some(Duration::from_secs(10)))
            .unwrap();
        let mut reader = BufReader::new(stream.try_clone().unwrap());
        for frame in chunk {
            stream.write_all(frame).unwrap();
            let mut line = String::new();
            reader.read_line(&mut line).unwrap();
            assert!(
                matches!(
                    decode_message(line.as_bytes()).unwrap(),
                    TagMessage::Error { .. }
                ),
                "{line}"
            );
            answered += 1;
        }
    }
    assert_eq!(answered, frames.len());

    // still serving
    let mut stream = TcpStream::connect(addr).unwrap();
    let mut reader = BufReader::new(stream.try_clone().unwrap());
    stream
        .write_all(
            encode_message(&TagMessage::Hello {
                client: "t".into(),
                proto: 1,
            })
            .as_bytes(),
        )
        .unwrap();
    let mut line = String::new();
    reader.read_line(&mut line).unwrap();
    assert!(matches!(
        decode_message(line.as_bytes()).unwrap(),
        TagMessage::Hello { .. }
    ));
}

#[test]
fn unterminated_objects_are_malformed() {
    let mut sim = common::simulator(common::profile("distillation_profile.json"));
    let mut session = Session::new();
    let huge = format!("{{\"op\":\"browse\",\"pad\":\"{}\"", "x".repeat(100_000));
    let (responses, _) = handle_frame(&mut sim, &mut session, huge.as_bytes());
    assert!(matches!(&responses[0], TagMessage::Error { code, .. } if code == "malformed"));
}
