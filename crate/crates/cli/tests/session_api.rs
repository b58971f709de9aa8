mod common;

use axum::http::StatusCode;
use common::{app, call, open, say, toy_engine};

#[tokio::test]
async fn greeting_gets_a_query_and_preference_gets_a_recommendation() {
    let app = app(toy_engine(), 0);
    let id = open(&app).await;
    let (status, r) = say(&app, &id, "Hi, I am looking for a movie recommendation.").await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(r["action"], "query");
    let (_, r) = say(&app, &id, "I love horror movies similar to Annabelle").await;
    assert_eq!(r["action"], "recommend");
    assert_eq!(r["step1"], "Dead Silence");
    assert_eq!(r["explanation"], "James Wan");
    assert_eq!(r["top_k_items"][0], "Dead Silence");
    assert_eq!(r["top_k_items"].as_array().unwrap().len(), r["scores"].as_array().unwrap().len());
    assert!(r["reply"].as_str().unwrap().contains("Dead Silence"));

    let (status, s) = call(&app, "GET", &format!("/session/{id}"), None).await;
    assert_eq!(status, StatusCode::OK);
    let transcript = s["transcript"].as_array().unwrap();
    assert_eq!(transcript.len(), 4);
    assert_eq!(transcript[3]["reasoning"]["step2"]["entity"], "James Wan");
    assert_eq!(s["state"]["round"], 2);
}

#[tokio::test]
async fn unknown_and_closed_sessions_are_not_found() {
    let app = app(toy_engine(), 0);
    let (status, _) = say(&app, "nope", "hello").await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    let id = open(&app).await;
    let (status, v) = call(&app, "DELETE", &format!("/session/{id}"), None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(v["closed"], true);
    let (status, _) = call(&app, "GET", &format!("/session/{id}"), None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    let (status, _) = call(&app, "DELETE", &format!("/session/{id}"), None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn malformed_bodies_name_the_text_field() {
    let app = app(toy_engine(), 0);
    let id = open(&app).await;
    let uri = format!("/session/{id}/utterance");
    for body in ["not json", "{}", r#"{"text": 3}"#, r#"{"text": "  "}"#] {
        let (status, v) = call(&app, "POST", &uri, Some(body)).await;
        assert_eq!(status, StatusCode::BAD_REQUEST, "{body}");
        assert_eq!(v["field"], "text");
    }
}

#[tokio::test]
async fn interleaved_sessions_keep_separate_state() {
    let app = app(toy_engine(), 0);
    let a = open(&app).await;
    let b = open(&app).await;
    assert_ne!(a, b);
    say(&app, &a, "I like Annabelle").await;
    say(&app, &b, "anything by James Wan?").await;
    say(&app, &a, "horror please").await;
    let (_, sa) = call(&app, "GET", &format!("/session/{a}"), None).await;
    let (_, sb) = call(&app, "GET", &format!("/session/{b}"), None).await;
    let names = |v: &serde_json::Value| -> Vec<String> {
        v["state"]["belief"].as_array().unwrap().iter().map(|x| x.as_str().unwrap().to_string()).collect()
    };
    let (ba, bb) = (names(&sa), names(&sb));
    assert!(ba.contains(&"Annabelle".to_string()));
    assert_eq!(bb, vec!["James Wan".to_string()]);
    assert!(ba.iter().all(|e| !bb.contains(e)));
    assert_eq!(sa["state"]["round"], 2);
    assert_eq!(sb["state"]["round"], 1);
}

#[tokio::test]
async fn same_seed_and_inputs_replay_identically() {
    let engine_a = toy_engine();
    let engine_b = toy_engine();
    let mut transcripts = Vec::new();
    for engine in [engine_a, engine_b] {
        let app = app(engine, 42);
        let id = open(&app).await;
        let mut replies = Vec::new();
        for text in ["hello there", "I love horror movies similar to Annabelle", "thanks"] {
            replies.push(say(&app, &id, text).await.1);
        }
        transcripts.push((id, replies));
    }
    assert_eq!(transcripts[0], transcripts[1]);
}
