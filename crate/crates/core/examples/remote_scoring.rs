//! Scoring through the HTTP client against a local stub service.
//!
//! The stub decodes the posted PNG and answers with the mean skin luminance
//! divided by 255, so lighter images score higher. Its first answer is a
//! 503 to show the retry path.

use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::Duration;

use base64::Engine;
use skintone_audit::audit::HairLength;
use skintone_audit::imaging::{detect_skin, rgb_to_ycrcb, skin_luminance_histogram, RasterImage, SkinRule};
use skintone_audit::model::{Classifier, Gender, RemoteClassifier, RemoteConfig};
use skintone_audit::synthetic::{draw_face, FaceSpec};

fn answer(body: &str) -> String {
    let v: serde_json::Value = serde_json::from_str(body).unwrap_or_default();
    let Some(b64) = v["image"].as_str() else {
        return r#"{"error":"bad_request"}"#.into();
    };
    let Ok(png) = base64::engine::general_purpose::STANDARD.decode(b64) else {
        return r#"{"error":"bad_request"}"#.into();
    };
    let Ok(img) = image::load_from_memory(&png) else {
        return r#"{"error":"bad_request"}"#.into();
    };
    let ycc = rgb_to_ycrcb(&RasterImage::from_rgb8(&img.to_rgb8()));
    let mask = detect_skin(&ycc, &SkinRule::default());
    match skin_luminance_histogram(&ycc, &mask) {
        Ok(h) => format!(r#"{{"score":{}}}"#, h.mean().unwrap_or(0.0) / 255.0),
        Err(_) => r#"{"error":"no_face"}"#.into(),
    }
}

fn serve(listener: TcpListener, hits: Arc<AtomicUsize>) {
    for stream in listener.incoming() {
        let Ok(mut stream) = stream else { continue };
        let mut reader = BufReader::new(stream.try_clone().expect("clone stream"));
        let mut len = 0;
        loop {
            let mut line = String::new();
            if reader.read_line(&mut line).unwrap_or(0) == 0 || line == "\r\n" {
                break;
            }
            if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
                len = v.trim().parse().unwrap_or(0);
            }
        }
        let mut body = vec![0; len];
        let _ = reader.read_exact(&mut body);
        let (status, reply) = if hits.fetch_add(1, Ordering::SeqCst) == 0 {
            ("503 Service Unavailable", "{}".to_string())
        } else {
            ("200 OK", answer(&String::from_utf8_lossy(&body)))
        };
        let _ = write!(
            stream,
            "HTTP/1.1 {status}\r\ncontent-type: application/json\r\ncontent-length: {}\r\nconnection: close\r\n\r\n{reply}",
            reply.len()
        );
    }
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let listener = TcpListener::bind("127.0.0.1:0")?;
    let endpoint = format!("http://{}/score", listener.local_addr()?);
    let hits = Arc::new(AtomicUsize::new(0));
    let server_hits = hits.clone();
    std::thread::spawn(move || serve(listener, server_hits));

    let mut config = RemoteConfig::new(endpoint);
    config.base_backoff = Duration::from_millis(20);
    let client = RemoteClassifier::new(config);
    for skin_y in [70u8, 120, 170] {
        let face = draw_face(&FaceSpec {
            side: 32,
            gender: Gender::Female,
            skin_y,
            hair: HairLength::Short,
            seed: 1,
        });
        let s = client.score(&face.image)?;
        println!("skin_y {skin_y}: score {:.4} -> {}", s.value(), s.decision());
    }
    let blank = RasterImage::filled(32, 32, [20, 40, 200]);
    println!("blank image: {:?}", client.score(&blank).err());
    println!("requests served: {}", hits.load(Ordering::SeqCst));
    Ok(())
}
