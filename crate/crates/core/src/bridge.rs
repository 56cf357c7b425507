//! JSON-lines client for an external model process, plus a model-free stub.
//!
//! Every message is one JSON object on one line and carries `"v": 1`.
//!
//! ```text
//! request:  {"v":1,"id":7,"op":"generate","payload":{...}}
//! response: {"v":1,"id":7,"ok":true,"payload":...,"error":null}
//! ```
//!
//! Request payload fields: `images` (base64 PNG list), `delta`, `t_inv`,
//! `token`, `seed`. A `generate` response payload is a base64 PNG, a `flow`
//! response payload base64 `.flo` bytes, and `capabilities` answers
//! `{"generate": bool, "flow": bool}`.

use std::io::{BufRead, BufReader, Write};
use std::process::{Child, Command, Stdio};
use std::sync::Mutex;

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine as _;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::flow::{FlowEstimator, FlowField};
use crate::image::ImagePlane;
use crate::io::{decode_flo, encode_flo};

pub const PROTOCOL_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BridgeRequest {
    pub v: u32,
    pub id: u64,
    pub op: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub payload: Option<RequestPayload>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct RequestPayload {
    #[serde(default)]
    pub images: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t_inv: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub token: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BridgeResponse {
    pub v: u32,
    pub id: Option<u64>,
    pub ok: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub payload: Option<Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl BridgeResponse {
    fn success(id: u64, payload: Value) -> Self {
        Self {
            v: PROTOCOL_VERSION,
            id: Some(id),
            ok: true,
            payload: Some(payload),
            error: None,
        }
    }

    fn failure(id: Option<u64>, msg: impl Into<String>) -> Self {
        Self {
            v: PROTOCOL_VERSION,
            id,
            ok: false,
            payload: None,
            error: Some(msg.into()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Capabilities {
    pub generate: bool,
    pub flow: bool,
}

pub fn encode_image_b64(img: &ImagePlane) -> Result<String> {
    Ok(B64.encode(img.to_png_bytes()?))
}

pub fn decode_image_b64(s: &str) -> Result<ImagePlane> {
    let bytes = B64
        .decode(s)
        .map_err(|e| Error::Bridge(format!("payload is not base64: {e}")))?;
    ImagePlane::from_png_bytes(&bytes)
}

pub fn encode_flow_b64(flow: &FlowField) -> Result<String> {
    Ok(B64.encode(encode_flo(flow)?))
}

pub fn decode_flow_b64(s: &str) -> Result<FlowField> {
    let bytes = B64
        .decode(s)
        .map_err(|e| Error::Bridge(format!("payload is not base64: {e}")))?;
    decode_flo(&bytes)
}

struct Channel {
    reader: Box<dyn BufRead + Send>,
    writer: Box<dyn Write + Send>,
    next_id: u64,
}

/// Sequential client: one request in flight, responses matched by id.
pub struct BridgeClient {
    channel: Mutex<Channel>,
    child: Option<Child>,
}

impl BridgeClient {
    pub fn new(reader: impl BufRead + Send + 'static, writer: impl Write + Send + 'static) -> Self {
        Self {
            channel: Mutex::new(Channel {
                reader: Box::new(reader),
                writer: Box::new(writer),
                next_id: 1,
            }),
            child: None,
        }
    }

    /// Launches `command[0]` with the remaining entries as arguments.
    pub fn spawn(command: &[String]) -> Result<Self> {
        let (program, args) = command
            .split_first()
            .ok_or_else(|| Error::Config("bridge command is empty".into()))?;
        let mut child = Command::new(program)
            .args(args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|e| Error::Bridge(format!("cannot start {program}: {e}")))?;
        let stdin = child.stdin.take().expect("stdin is piped");
        let stdout = child.stdout.take().expect("stdout is piped");
        let mut client = Self::new(BufReader::new(stdout), stdin);
        client.child = Some(child);
        Ok(client)
    }

    /// Sends one request and waits for its response. `ok: false` becomes an
    /// error carrying the remote message.
    pub fn call(&self, op: &str, payload: Option<RequestPayload>) -> Result<Value> {
        let mut ch = self
            .channel
            .lock()
            .map_err(|_| Error::Bridge("client poisoned by an earlier panic".into()))?;
        let id = ch.next_id;
        ch.next_id += 1;
        let req = BridgeRequest {
            v: PROTOCOL_VERSION,
            id,
            op: op.to_string(),
            payload,
        };
        let mut line = serde_json::to_string(&req).expect("request serialises");
        line.push('\n');
        ch.writer
            .write_all(line.as_bytes())
            .and_then(|_| ch.writer.flush())
            .map_err(|e| Error::Bridge(format!("write failed: {e}")))?;

        let mut reply = String::new();
        let n = ch
            .reader
            .read_line(&mut reply)
            .map_err(|e| Error::Bridge(format!("read failed: {e}")))?;
        if n == 0 {
            return Err(Error::Bridge("bridge closed its output".into()));
        }
        let resp: BridgeResponse = serde_json::from_str(reply.trim_end())
            .map_err(|e| Error::Bridge(format!("malformed response: {e}")))?;
        if resp.v != PROTOCOL_VERSION {
            return Err(Error::Bridge(format!("protocol version {} unsupported", resp.v)));
        }
        if resp.id != Some(id) {
            return Err(Error::Bridge(format!(
                "response id {:?} does not match request {id}",
                resp.id
            )));
        }
        if !resp.ok {
            return Err(Error::Bridge(
                resp.error.unwrap_or_else(|| format!("{op} failed")),
            ));
        }
        Ok(resp.payload.unwrap_or(Value::Null))
    }

    /// Sends one raw line and returns whatever response comes back, without
    /// id or status checks. Meant for protocol diagnostics.
    pub fn send_raw(&self, line: &str) -> Result<BridgeResponse> {
        let mut ch = self
            .channel
            .lock()
            .map_err(|_| Error::Bridge("client poisoned by an earlier panic".into()))?;
        ch.writer
            .write_all(line.trim_end().as_bytes())
            .and_then(|_| ch.writer.write_all(b"\n"))
            .and_then(|_| ch.writer.flush())
            .map_err(|e| Error::Bridge(format!("write failed: {e}")))?;
        let mut reply = String::new();
        if ch
            .reader
            .read_line(&mut reply)
            .map_err(|e| Error::Bridge(format!("read failed: {e}")))?
            == 0
        {
            return Err(Error::Bridge("bridge closed its output".into()));
        }
        serde_json::from_str(reply.trim_end()).map_err(|e| Error::Bridge(format!("malformed response: {e}")))
    }

    pub fn capabilities(&self) -> Result<Capabilities> {
        let v = self.call("capabilities", None)?;
        serde_json::from_value(v).map_err(|e| Error::Bridge(format!("bad capabilities: {e}")))
    }

    pub fn generate(&self, x0: &ImagePlane, delta: f64, t_inv: usize, token: &str, seed: u64) -> Result<ImagePlane> {
        let payload = RequestPayload {
            images: vec![encode_image_b64(x0)?],
            delta: Some(delta),
            t_inv: Some(t_inv),
            token: Some(token.to_string()),
            seed: Some(seed),
        };
        let v = self.call("generate", Some(payload))?;
        decode_image_b64(payload_str(&v)?)
    }

    pub fn flow(&self, x0: &ImagePlane, x1: &ImagePlane) -> Result<FlowField> {
        let payload = RequestPayload {
            images: vec![encode_image_b64(x0)?, encode_image_b64(x1)?],
            ..Default::default()
        };
        let v = self.call("flow", Some(payload))?;
        decode_flow_b64(payload_str(&v)?)
    }
}

fn payload_str(v: &Value) -> Result<&str> {
    v.as_str()
        .ok_or_else(|| Error::Bridge("expected a base64 string payload".into()))
}

impl Drop for BridgeClient {
    fn drop(&mut self) {
        if let Some(mut child) = self.child.take() {
            // Closing stdin ends the serve loop.
            if let Ok(mut ch) = self.channel.lock() {
                ch.writer = Box::new(std::io::sink());
            }
            let _ = child.wait();
        }
    }
}

/// Protocol conformance checks any backend must pass. Returns one line per
/// check. `generate` and `flow` checks run only where capabilities allow.
pub fn run_conformance(client: &BridgeClient) -> Result<Vec<String>> {
    let fail = |msg: String| Err(Error::Bridge(format!("conformance: {msg}")));
    let mut passed = Vec::new();

    let raw = client.send_raw(r#"{"v":1,"id":424242,"op":"capabilities"}"#)?;
    if raw.v != PROTOCOL_VERSION || raw.id != Some(424242) || !raw.ok {
        return fail(format!("capabilities response {raw:?}"));
    }
    let caps: Capabilities = serde_json::from_value(raw.payload.unwrap_or(Value::Null))
        .map_err(|e| Error::Bridge(format!("conformance: capabilities payload: {e}")))?;
    passed.push(format!("capabilities echo id, v=1: {caps:?}"));

    let raw = client.send_raw("{not json")?;
    if raw.id.is_some() || raw.ok || raw.v != PROTOCOL_VERSION {
        return fail(format!("malformed line answered with {raw:?}"));
    }
    passed.push("malformed line -> ok=false, id=null".into());

    let raw = client.send_raw(r#"{"v":1,"id":7,"op":"teleport"}"#)?;
    if raw.ok || raw.id != Some(7) || raw.error.as_deref() != Some("unsupported op") {
        return fail(format!("unknown op answered with {raw:?}"));
    }
    passed.push("unknown op -> \"unsupported op\"".into());

    let img = ImagePlane::new(
        6,
        8,
        3,
        (0..6 * 8 * 3).map(|k| ((k * 37) % 256) as f64 / 255.0).collect(),
    )?;
    if caps.generate {
        let out = client.generate(&img, 30.0, 250, "object", 1)?;
        if out.dims() != img.dims() {
            return fail(format!("generate returned {:?} for {:?}", out.dims(), img.dims()));
        }
        passed.push("generate returns a same-size PNG".into());
    }
    if caps.flow {
        let flow = client.flow(&img, &img)?;
        if flow.dims() != (img.height(), img.width()) {
            return fail(format!("flow dims {:?}", flow.dims()));
        }
        let mean_mag = (0..flow.len())
            .filter(|&k| flow.valid()[k])
            .map(|k| flow.u()[k].hypot(flow.v()[k]))
            .sum::<f64>()
            / flow.len() as f64;
        if !(mean_mag < 0.5) {
            return fail(format!("self-pair flow has mean magnitude {mean_mag}"));
        }
        passed.push(format!("self-pair flow mean magnitude {mean_mag:.3} px"));
    }

    // Ids must track requests made through the typed API as well.
    let first = client.call("capabilities", None)?;
    let second = client.call("capabilities", None)?;
    if first != second {
        return fail("capabilities changed between calls".into());
    }
    passed.push("sequential typed calls matched by id".into());
    Ok(passed)
}

/// Flow estimation delegated to a bridge process.
pub struct BridgeFlowEstimator {
    client: BridgeClient,
}

impl BridgeFlowEstimator {
    pub fn new(client: BridgeClient) -> Self {
        Self { client }
    }
}

impl FlowEstimator for BridgeFlowEstimator {
    fn estimate(&self, x0: &ImagePlane, x1: &ImagePlane) -> Result<FlowField> {
        self.client.flow(x0, x1)
    }
}

/// Stub backend. `generate` returns the first input image unchanged and `flow`
/// returns an all-zero field the size of the first image.
pub fn stub_handle(line: &str) -> BridgeResponse {
    let req: BridgeRequest = match serde_json::from_str(line) {
        Ok(r) => r,
        Err(e) => return BridgeResponse::failure(None, format!("malformed request: {e}")),
    };
    if req.v != PROTOCOL_VERSION {
        return BridgeResponse::failure(Some(req.id), format!("unsupported version {}", req.v));
    }
    let first_image = || -> std::result::Result<ImagePlane, String> {
        let p = req.payload.as_ref().ok_or("missing payload")?;
        let img = p.images.first().ok_or("missing image")?;
        decode_image_b64(img).map_err(|e| e.to_string())
    };
    let out = match req.op.as_str() {
        "capabilities" => Ok(serde_json::to_value(Capabilities {
            generate: true,
            flow: true,
        })
        .expect("serialises")),
        "generate" => first_image().and_then(|img| {
            encode_image_b64(&img)
                .map(Value::String)
                .map_err(|e| e.to_string())
        }),
        "flow" => first_image().and_then(|img| {
            let zero = FlowField::constant(img.height(), img.width(), 0.0, 0.0);
            encode_flow_b64(&zero)
                .map(Value::String)
                .map_err(|e| e.to_string())
        }),
        _ => Err("unsupported op".to_string()),
    };
    match out {
        Ok(v) => BridgeResponse::success(req.id, v),
        Err(msg) => BridgeResponse::failure(Some(req.id), msg),
    }
}

/// Serves stub requests until `input` closes, one response line per line.
pub fn serve_stub(input: impl BufRead, mut output: impl Write) -> Result<()> {
    for line in input.lines() {
        let line = line.map_err(|e| Error::Bridge(format!("read failed: {e}")))?;
        if line.trim().is_empty() {
            continue;
        }
        let resp = stub_handle(&line);
        let mut text = serde_json::to_string(&resp).expect("response serialises");
        text.push('\n');
        output
            .write_all(text.as_bytes())
            .and_then(|_| output.flush())
            .map_err(|e| Error::Bridge(format!("write failed: {e}")))?;
    }
    Ok(())
}
