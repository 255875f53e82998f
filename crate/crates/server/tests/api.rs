use std::time::Duration;

use base64::Engine;
use futures_util::StreamExt;
use gazegpt_core::foveation::{encode_png, multiscale_crop};
use gazegpt_core::geometry::DisplayView;
use gazegpt_core::pipeline::mock::silent_wav;
use gazegpt_core::pipeline::{CallLog, Fault, MockAnswer, MockSettings, Pipeline, QueryTranscript, Stage, StageEvent};
use gazegpt_core::scene::{DogGridScene, Scene};
use gazegpt_core::{synth_session, CameraModel, CropSpec, FixationDepth, GazeScript, PixelPoint, Session};
use gazegpt_server::{spawn, AppState, CropsBody};
use serde_json::{json, Value};

fn small_session() -> Session {
    let camera = CameraModel::from_diagonal_fov(320, 240, 78.0).unwrap();
    let view = DisplayView::new(camera, 1.0).unwrap();
    let labels: Vec<String> = (0..9).map(|i| format!("Breed {i}")).collect();
    let scene = Scene::DogGrid(DogGridScene::new(labels, 3).unwrap());
    let mut script = GazeScript::steady(view.plane_at_angles(3.0, -2.0), 1.0);
    script.frame_times = vec![0.0, 0.5];
    synth_session(&scene, &view, &script).unwrap()
}

struct Fixture {
    base: String,
    log: CallLog,
    session: Session,
    spec: CropSpec,
}

async fn start(mock: MockSettings) -> Fixture {
    let log = CallLog::new();
    let spec = CropSpec { out_px: 64, ..CropSpec::default() };
    let pipeline = Pipeline::new(mock.build(log.clone()), spec);
    let session = small_session();
    let state = AppState::new(
        pipeline,
        FixationDepth::default(),
        vec![("desk".into(), session.clone()), ("other".into(), small_session())],
        None,
    )
    .unwrap();
    let addr = spawn(state, "127.0.0.1:0").await.unwrap();
    Fixture { base: format!("http://{addr}"), log, session, spec }
}

fn client() -> reqwest::Client {
    reqwest::Client::new()
}

#[tokio::test(flavor = "multi_thread")]
async fn text_query_returns_transcript() {
    let fx = start(MockSettings { answer: MockAnswer::Fixed("A terrier.".into()), ..MockSettings::default() }).await;
    let resp = client()
        .post(format!("{}/query", fx.base))
        .json(&json!({"frame_id": 1, "gaze_px": {"u": 100.0, "v": 80.0}, "question": "What breed is this?"}))
        .send()
        .await
        .unwrap();
    assert_eq!(resp.status(), 200);
    let t: QueryTranscript = resp.json().await.unwrap();
    assert_eq!(t.session_id, "desk");
    assert_eq!(t.frame_index, 1);
    assert_eq!(t.question_text.as_deref(), Some("What breed is this?"));
    assert_eq!(t.response_text.as_deref(), Some("A terrier."));
    assert_eq!(t.stage_latencies.keys().copied().collect::<Vec<_>>(), Stage::ALL);
    assert_eq!(t.stage_latencies[&Stage::Stt], 0.0);
    assert_eq!(t.crops.len(), 3);
    assert!(t.audio_out_b64.is_some());
    assert_eq!(fx.log.stages(), [Stage::Lmm, Stage::Tts]);
}

#[tokio::test(flavor = "multi_thread")]
async fn projected_gaze_and_audio_question() {
    let fx = start(MockSettings { transcript: "Is this a dog?".into(), ..MockSettings::default() }).await;
    let wav = base64::engine::general_purpose::STANDARD.encode(silent_wav("question"));
    let resp = client()
        .post(format!("{}/query", fx.base))
        .json(&json!({"timestamp": 0.25, "use_projected_gaze": true, "audio": wav}))
        .send()
        .await
        .unwrap();
    assert_eq!(resp.status(), 200);
    let t: QueryTranscript = resp.json().await.unwrap();
    assert_eq!(t.question_text.as_deref(), Some("Is this a dog?"));
    assert_eq!(t.gaze_t, Some(0.25));
    assert_eq!(fx.log.stages(), [Stage::Stt, Stage::Lmm, Stage::Tts]);
    // Gaze was scripted 3 degrees right of and 2 degrees above the axis.
    assert!(t.gaze_px.u > fx.session.camera.cx() && t.gaze_px.v < fx.session.camera.cy());
}

#[tokio::test(flavor = "multi_thread")]
async fn bad_requests_are_rejected() {
    let fx = start(MockSettings::default()).await;
    let c = client();
    let cases = [
        (json!({"timestamp": 9.0, "question": "q"}), 400),
        (json!({"frame_id": 0, "timestamp": 0.0, "question": "q"}), 400),
        (json!({"frame_id": 0, "question": "q", "audio": "AAAA"}), 400),
        (json!({"frame_id": 0}), 400),
        (json!({"frame_id": 7, "question": "q"}), 404),
        (json!({"frame_id": 0, "question": "q", "session_id": "nope"}), 404),
        (json!({"frame_id": 0, "question": "q", "gaze_px": {"u": -50.0, "v": 3.0}}), 422),
    ];
    for (body, status) in cases {
        let resp = c.post(format!("{}/query", fx.base)).json(&body).send().await.unwrap();
        assert_eq!(resp.status().as_u16(), status, "{body}");
    }
    assert!(fx.log.stages().is_empty(), "no backend call for rejected requests");
}

#[tokio::test(flavor = "multi_thread")]
async fn model_timeout_stops_before_synthesis() {
    let fx = start(MockSettings { lmm_fault: Fault::Timeout { after_s: 0.05 }, ..MockSettings::default() }).await;
    let t: QueryTranscript = client()
        .post(format!("{}/query", fx.base))
        .json(&json!({"frame_id": 0, "question": "q"}))
        .send()
        .await
        .unwrap()
        .json()
        .await
        .unwrap();
    assert_eq!(t.failed_at, Some(Stage::Lmm));
    assert!(t.response_text.is_none() && t.audio_out_b64.is_none());
    assert_eq!(t.stage_latencies[&Stage::Tts], 0.0);
    assert_eq!(fx.log.count(Stage::Tts), 0);
}

#[tokio::test(flavor = "multi_thread")]
async fn crops_match_library_output_bit_exactly() {
    let fx = start(MockSettings::default()).await;
    for (u, v) in [(160.0, 120.0), (3.0, 4.0), (318.6, 2.0)] {
        let body: CropsBody = client()
            .get(format!("{}/crops?frame_id=0&u={u}&v={v}", fx.base))
            .send()
            .await
            .unwrap()
            .json()
            .await
            .unwrap();
        let frame = fx.session.frame(0).unwrap();
        let expected = multiscale_crop(&frame.pixels, &PixelPoint::new(u, v), &fx.session.camera, &fx.spec).unwrap();
        assert_eq!(body.levels.len(), expected.levels.len());
        for (got, want) in body.levels.iter().zip(&expected.levels) {
            assert_eq!(got.meta, want.meta);
            let bytes = base64::engine::general_purpose::STANDARD.decode(&got.png_b64).unwrap();
            assert_eq!(bytes, want.png_bytes());
        }
    }
    let resp = client().get(format!("{}/crops?frame_id=0&u=-10&v=4", fx.base)).send().await.unwrap();
    assert_eq!(resp.status(), 422);
}

#[tokio::test(flavor = "multi_thread")]
async fn frames_are_served_as_png() {
    let fx = start(MockSettings::default()).await;
    let resp = client().get(format!("{}/frames/1?session_id=other", fx.base)).send().await.unwrap();
    assert_eq!(resp.status(), 200);
    assert_eq!(resp.headers()["content-type"], "image/png");
    let bytes = resp.bytes().await.unwrap();
    assert_eq!(bytes.as_ref(), encode_png(&fx.session.frame(1).unwrap().pixels).as_slice());
    let missing = client().get(format!("{}/frames/9", fx.base)).send().await.unwrap();
    assert_eq!(missing.status(), 404);

    let sessions: Value = client().get(format!("{}/sessions", fx.base)).send().await.unwrap().json().await.unwrap();
    assert_eq!(sessions[0]["id"], "desk");
    assert_eq!(sessions[0]["frame_times"], json!([0.0, 0.5]));
}

#[tokio::test(flavor = "multi_thread")]
async fn concurrent_queries_are_serialized_in_submission_order() {
    let fx = start(MockSettings { lmm_delay_s: 0.08, tts_delay_s: 0.02, ..MockSettings::default() }).await;
    let c = client();
    let mut handles = Vec::new();
    for i in 0..5 {
        let (c, base) = (c.clone(), fx.base.clone());
        handles.push(tokio::spawn(async move {
            c.post(format!("{base}/query"))
                .json(&json!({"frame_id": 0, "question": format!("q{i}")}))
                .send()
                .await
                .unwrap()
                .json::<QueryTranscript>()
                .await
                .unwrap()
        }));
        // Make the submission order well defined.
        tokio::time::sleep(Duration::from_millis(15)).await;
    }
    let mut results = Vec::new();
    for h in handles {
        results.push(h.await.unwrap());
    }
    let seqs: Vec<u64> = results.iter().map(|t| t.seq).collect();
    assert_eq!(seqs, [0, 1, 2, 3, 4]);

    let stored: Vec<QueryTranscript> =
        c.get(format!("{}/session/desk/transcripts", fx.base)).send().await.unwrap().json().await.unwrap();
    let questions: Vec<&str> = stored.iter().map(|t| t.question_text.as_deref().unwrap()).collect();
    assert_eq!(questions, ["q0", "q1", "q2", "q3", "q4"]);

    // Backend calls never interleave: lmm, tts, lmm, tts, ...
    let stages = fx.log.stages();
    assert_eq!(stages, [Stage::Lmm, Stage::Tts].repeat(5));
    let other: Vec<QueryTranscript> =
        c.get(format!("{}/session/other/transcripts", fx.base)).send().await.unwrap().json().await.unwrap();
    assert!(other.is_empty());
}

#[tokio::test(flavor = "multi_thread")]
async fn events_stream_over_websocket() {
    let fx = start(MockSettings { lmm_delay_s: 0.02, ..MockSettings::default() }).await;
    let ws_url = format!("{}/events", fx.base.replace("http://", "ws://"));
    let (mut ws, _) = tokio_tungstenite::connect_async(ws_url).await.unwrap();
    // Give the server a moment to subscribe before the query starts.
    tokio::time::sleep(Duration::from_millis(50)).await;

    let resp = client()
        .post(format!("{}/query", fx.base))
        .json(&json!({"frame_id": 0, "question": "q"}))
        .send()
        .await
        .unwrap();
    assert_eq!(resp.status(), 200);

    let mut events = Vec::new();
    while events.len() < 5 {
        let msg = tokio::time::timeout(Duration::from_secs(5), ws.next()).await.unwrap().unwrap().unwrap();
        if let tokio_tungstenite::tungstenite::Message::Text(text) = msg {
            events.push(serde_json::from_str::<StageEvent>(&text).unwrap());
        }
    }
    let kinds: Vec<String> = events
        .iter()
        .map(|e| match e {
            StageEvent::StageStart { stage, .. } => format!("start:{stage}"),
            StageEvent::StageEnd { stage, ok, .. } => format!("end:{stage}:{ok}"),
            StageEvent::QueryDone { .. } => "done".into(),
        })
        .collect();
    assert_eq!(kinds, ["start:lmm", "end:lmm:true", "start:tts", "end:tts:true", "done"]);
    if let StageEvent::StageEnd { latency_s, .. } = &events[1] {
        assert!(*latency_s >= 0.02);
    }
}
