//! HTTP adapter for OpenAI-compatible endpoints.

use std::io::Cursor;

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use image::{ImageFormat, Rgba, RgbaImage};
use serde_json::{json, Value};

use super::config::EndpointConfig;
use super::{params, Capability, Provider, ProviderError, ProviderRequest, ProviderResponse, Usage};
use crate::mask::BinaryMask;
use crate::model::RasterImage;

pub struct LiveProvider {
    name: String,
    endpoint: EndpointConfig,
    api_key: String,
    image_size: u32,
    agent: ureq::Agent,
}

impl std::fmt::Debug for LiveProvider {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("LiveProvider")
            .field("name", &self.name)
            .field("endpoint", &self.endpoint)
            .finish_non_exhaustive()
    }
}

impl LiveProvider {
    pub fn new(
        name: impl Into<String>,
        endpoint: EndpointConfig,
        api_key: String,
        image_size: u32,
    ) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(endpoint.timeout()))
            .http_status_as_error(false)
            .build()
            .into();
        Self {
            name: name.into(),
            endpoint,
            api_key,
            image_size,
            agent,
        }
    }

    fn url(&self, path: &str) -> String {
        format!("{}/{}", self.endpoint.base_url.trim_end_matches('/'), path)
    }

    fn post_json(&self, path: &str, body: &Value) -> Result<Value, ProviderError> {
        let resp = self
            .agent
            .post(&self.url(path))
            .header("Authorization", &format!("Bearer {}", self.api_key))
            .send_json(body)
            .map_err(map_transport)?;
        read_json(resp)
    }

    fn post_multipart(&self, path: &str, form: Multipart) -> Result<Value, ProviderError> {
        let (content_type, body) = form.finish();
        let resp = self
            .agent
            .post(&self.url(path))
            .header("Authorization", &format!("Bearer {}", self.api_key))
            .header("Content-Type", &content_type)
            .send(&body[..])
            .map_err(map_transport)?;
        read_json(resp)
    }

    fn vision(&self, req: &ProviderRequest) -> Result<ProviderResponse, ProviderError> {
        let mut content = vec![json!({ "type": "text", "text": req.prompt })];
        for img in &req.images {
            content.push(json!({
                "type": "image_url",
                "image_url": { "url": format!("data:image/png;base64,{}", B64.encode(img.to_png())) }
            }));
        }
        let mut messages = Vec::new();
        if let Some(system) = req.str_param(params::SYSTEM) {
            messages.push(json!({ "role": "system", "content": system }));
        }
        messages.push(json!({ "role": "user", "content": content }));
        let body = json!({
            "model": self.endpoint.model,
            "messages": messages,
            "temperature": 0,
        });
        let v = self.post_json("chat/completions", &body)?;
        let text = v["choices"][0]["message"]["content"]
            .as_str()
            .ok_or_else(|| malformed("missing choices[0].message.content", &v))?;
        Ok(ProviderResponse {
            text: Some(text.to_owned()),
            images: Vec::new(),
            usage: Usage {
                prompt_tokens: v["usage"]["prompt_tokens"].as_u64().unwrap_or(0),
                completion_tokens: v["usage"]["completion_tokens"].as_u64().unwrap_or(0),
                images: 0,
            },
            latency_ms: 0,
        })
    }

    fn size(&self, req: &ProviderRequest) -> String {
        let s = req.u64_param(params::SIZE).unwrap_or(self.image_size as u64);
        format!("{s}x{s}")
    }

    fn generate(&self, req: &ProviderRequest) -> Result<ProviderResponse, ProviderError> {
        let body = json!({
            "model": self.endpoint.model,
            "prompt": req.prompt,
            "n": req.u64_param(params::COUNT).unwrap_or(1),
            "size": self.size(req),
            "response_format": "b64_json",
        });
        let v = self.post_json("images/generations", &body)?;
        Ok(ProviderResponse::images(decode_images(&v)?))
    }

    fn inpaint(&self, req: &ProviderRequest) -> Result<ProviderResponse, ProviderError> {
        let image = &req.images[0];
        let mask = req.mask.as_ref().expect("validated");
        let mut form = Multipart::new();
        form.file("image", "image.png", "image/png", &image.to_png());
        form.file("mask", "mask.png", "image/png", &edit_mask_png(mask));
        form.text("model", &self.endpoint.model);
        form.text("prompt", &req.prompt);
        form.text("n", "1");
        form.text("size", &self.size(req));
        form.text("response_format", "b64_json");
        let v = self.post_multipart("images/edits", form)?;
        Ok(ProviderResponse::images(decode_images(&v)?))
    }

    fn transcribe(&self, req: &ProviderRequest) -> Result<ProviderResponse, ProviderError> {
        let audio = B64
            .decode(req.str_param(params::AUDIO_BASE64).unwrap_or_default())
            .map_err(|e| ProviderError::InvalidRequest(format!("audio is not base64: {e}")))?;
        let mut form = Multipart::new();
        form.file("file", "audio.webm", "application/octet-stream", &audio);
        form.text("model", &self.endpoint.model);
        let v = self.post_multipart("audio/transcriptions", form)?;
        let text = v["text"]
            .as_str()
            .ok_or_else(|| malformed("missing text", &v))?;
        Ok(ProviderResponse::text(text))
    }
}

impl Provider for LiveProvider {
    fn name(&self) -> &str {
        &self.name
    }

    fn invoke(&self, req: &ProviderRequest) -> Result<ProviderResponse, ProviderError> {
        match req.capability {
            Capability::Vision => self.vision(req),
            Capability::Generate => self.generate(req),
            Capability::Inpaint => self.inpaint(req),
            Capability::Transcribe => self.transcribe(req),
        }
    }
}

fn malformed(detail: &str, raw: &Value) -> ProviderError {
    ProviderError::MalformedResponse {
        detail: detail.to_owned(),
        raw: raw.to_string(),
    }
}

/// Unreachable hosts are reported as timeouts: either way no answer arrived.
fn map_transport(err: ureq::Error) -> ProviderError {
    use std::io::ErrorKind;
    match err {
        ureq::Error::Timeout(_) | ureq::Error::ConnectionFailed | ureq::Error::HostNotFound => {
            ProviderError::Timeout { attempts: 1 }
        }
        ureq::Error::Io(e)
            if matches!(
                e.kind(),
                ErrorKind::TimedOut
                    | ErrorKind::WouldBlock
                    | ErrorKind::ConnectionRefused
                    | ErrorKind::ConnectionReset
                    | ErrorKind::UnexpectedEof
            ) =>
        {
            ProviderError::Timeout { attempts: 1 }
        }
        other => ProviderError::Transport(other.to_string()),
    }
}

fn read_json(mut resp: ureq::http::Response<ureq::Body>) -> Result<Value, ProviderError> {
    let status = resp.status().as_u16();
    let body = resp
        .body_mut()
        .read_to_string()
        .map_err(map_transport)?;
    match status {
        200..=299 => serde_json::from_str(&body).map_err(|e| ProviderError::MalformedResponse {
            detail: format!("response is not JSON: {e}"),
            raw: body,
        }),
        429 => Err(ProviderError::RateLimited),
        408 | 504 => Err(ProviderError::Timeout { attempts: 1 }),
        400 if body.contains("content_policy") || body.contains("safety") => {
            Err(ProviderError::ContentPolicyRejection(body))
        }
        500..=599 => Err(ProviderError::Transport(format!("status {status}: {body}"))),
        _ => Err(ProviderError::InvalidRequest(format!("status {status}: {body}"))),
    }
}

fn decode_images(v: &Value) -> Result<Vec<RasterImage>, ProviderError> {
    let data = v["data"]
        .as_array()
        .ok_or_else(|| malformed("missing data array", v))?;
    data.iter()
        .map(|d| {
            let b64 = d["b64_json"]
                .as_str()
                .ok_or_else(|| malformed("missing b64_json", v))?;
            let bytes = B64
                .decode(b64)
                .map_err(|e| malformed(&format!("bad base64: {e}"), v))?;
            RasterImage::from_png(&bytes).map_err(|e| ProviderError::MalformedResponse {
                detail: format!("image does not decode: {e}"),
                raw: String::new(),
            })
        })
        .collect()
}

/// Edit endpoints treat fully transparent pixels as the editable area.
fn edit_mask_png(mask: &BinaryMask) -> Vec<u8> {
    let mut img = RgbaImage::new(mask.width(), mask.height());
    for (i, &on) in mask.bits().iter().enumerate() {
        let (x, y) = (i as u32 % mask.width(), i as u32 / mask.width());
        img.put_pixel(x, y, if on { Rgba([0, 0, 0, 0]) } else { Rgba([0, 0, 0, 255]) });
    }
    let mut out = Cursor::new(Vec::new());
    img.write_to(&mut out, ImageFormat::Png)
        .expect("encoding to memory cannot fail");
    out.into_inner()
}

struct Multipart {
    boundary: String,
    body: Vec<u8>,
}

impl Multipart {
    fn new() -> Self {
        Self {
            boundary: format!("conceptkit-{:016x}", rand::random::<u64>()),
            body: Vec::new(),
        }
    }

    fn text(&mut self, name: &str, value: &str) {
        self.body.extend_from_slice(
            format!(
                "--{}\r\nContent-Disposition: form-data; name=\"{name}\"\r\n\r\n{value}\r\n",
                self.boundary
            )
            .as_bytes(),
        );
    }

    fn file(&mut self, name: &str, filename: &str, mime: &str, data: &[u8]) {
        self.body.extend_from_slice(
            format!(
                "--{}\r\nContent-Disposition: form-data; name=\"{name}\"; filename=\"{filename}\"\r\nContent-Type: {mime}\r\n\r\n",
                self.boundary
            )
            .as_bytes(),
        );
        self.body.extend_from_slice(data);
        self.body.extend_from_slice(b"\r\n");
    }

    fn finish(mut self) -> (String, Vec<u8>) {
        self.body
            .extend_from_slice(format!("--{}--\r\n", self.boundary).as_bytes());
        (
            format!("multipart/form-data; boundary={}", self.boundary),
            self.body,
        )
    }
}
